import os
import threading
import logging
from binascii import hexlify
from time import monotonic

import zmq

from cpnet import PICKLE_PROTOCOL
from cpnet.tasks import Task, TaskQueue
from cpnet.utils import _format_exc

logger = logging.getLogger(__name__)

# How long a worker thread has to report in before the pool gives up on it:
STARTUP_TIMEOUT = 2  # second

# How often the pool logs how many cells are done while it waits:
PROGRESS_INTERVAL = 30  # second

STATUS_OK = 'ok'
STATUS_ERROR = 'error'


class CellResult(object):
    """Outcome of running one cell: its index in the submitted order, and either the
    value it returned or the one-line description of the exception it raised"""

    def __init__(self, index, status, value):
        self.index = index
        self.status = status
        self.value = value

    @property
    def ok(self):
        return self.status == STATUS_OK

    def __repr__(self):
        return 'CellResult(%d, %r, %r)' % (self.index, self.status, self.value)


class PoolStopped(RuntimeError):
    pass


class CellPool(object):
    """Runs func(*cell) for a list of independent cells on `threads` worker threads.

    Cells are handed out over a zmq PUSH socket (at most one queued per worker) and
    results come back over a PULL socket, so the main loop only ever waits in one
    poll() call, alongside the stop socket and the progress task. Results are returned
    in the order the cells were submitted regardless of which finished first. A cell
    that raises does not stop the others; its result has status 'error'.

    With threads=1 the cells run inline, in order, without any sockets."""

    def __init__(self, func, threads=1, progress_interval=PROGRESS_INTERVAL, name='cells'):
        if threads < 1:
            raise ValueError('a cell pool needs at least one thread')
        self.func = func
        self.threads = threads
        self.progress_interval = progress_interval
        self.name = name
        self.context = None
        self.shutdown_endpoint = None
        self.started = threading.Event()
        self.done = 0
        self.total = 0

    def _run_cell(self, index, cell):
        try:
            return CellResult(index, STATUS_OK, self.func(*cell))
        except Exception:
            message = _format_exc()
            logger.warning('%s: cell %d %r failed: %s', self.name, index, cell, message)
            return CellResult(index, STATUS_ERROR, message)

    def map(self, cells):
        cells = list(cells)
        self.done = 0
        self.total = len(cells)
        if not cells:
            return []
        if self.threads == 1 or len(cells) == 1:
            results = []
            for index, cell in enumerate(cells):
                results.append(self._run_cell(index, cell))
                self.done += 1
            return results
        return self._map_threaded(cells)

    def _worker(self, worker_id, task_endpoint, result_endpoint):
        tasks = self.context.socket(zmq.PULL)
        tasks.setsockopt(zmq.RCVHWM, 1)
        tasks.connect(task_endpoint)
        results = self.context.socket(zmq.PUSH)
        results.connect(result_endpoint)
        try:
            results.send_pyobj(('ready', worker_id), protocol=PICKLE_PROTOCOL)
            while True:
                message = tasks.recv_pyobj()
                if message is None:
                    break
                index, cell = message
                results.send_pyobj(self._run_cell(index, cell), protocol=PICKLE_PROTOCOL)
        finally:
            tasks.close(linger=0)
            results.close(linger=0)

    def _log_progress(self):
        logger.info('%s: %d of %d cells done', self.name, self.done, self.total)

    def _map_threaded(self, cells):
        self.context = zmq.Context()
        suffix = hexlify(os.urandom(8)).decode()
        task_endpoint = 'inproc://cpnet-pool-tasks' + suffix
        result_endpoint = 'inproc://cpnet-pool-results' + suffix
        self.shutdown_endpoint = 'inproc://cpnet-pool' + suffix
        ventilator = self.context.socket(zmq.PUSH)
        ventilator.setsockopt(zmq.SNDHWM, 1)
        ventilator.bind(task_endpoint)
        sink = self.context.socket(zmq.PULL)
        sink.bind(result_endpoint)
        self.stop_sock = self.context.socket(zmq.PULL)
        self.stop_sock.bind(self.shutdown_endpoint)
        self.poller = zmq.Poller()
        self.poller.register(sink, zmq.POLLIN)
        self.poller.register(self.stop_sock, zmq.POLLIN)

        n_workers = min(self.threads, len(cells))
        workers = []
        for worker_id in range(n_workers):
            worker = threading.Thread(
                target=self._worker,
                args=(worker_id, task_endpoint, result_endpoint),
                name='%s-worker-%d' % (self.name, worker_id),
                daemon=True,
            )
            worker.start()
            workers.append(worker)
        try:
            self._wait_ready(sink, n_workers)
            self.started.set()
            results = self._mainloop(cells, ventilator, sink)
        finally:
            for _ in workers:
                # Sentinels are only received by live workers; a dead one must not
                # hang shutdown:
                if not ventilator.poll(1000 * STARTUP_TIMEOUT, zmq.POLLOUT):
                    break
                ventilator.send_pyobj(None, protocol=PICKLE_PROTOCOL)
            for worker in workers:
                worker.join(STARTUP_TIMEOUT)
            ventilator.close(linger=0)
            sink.close(linger=0)
            self.stop_sock.close(linger=0)
            self.stop_sock = None
            if any(worker.is_alive() for worker in workers):
                logger.warning('%s: worker threads still busy, leaving them behind', self.name)
            else:
                self.context.term()
            self.context = None
            self.shutdown_endpoint = None
            self.started.clear()
        return results

    def _wait_ready(self, sink, n_workers):
        deadline = monotonic() + STARTUP_TIMEOUT
        ready = 0
        while ready < n_workers:
            remaining = deadline - monotonic()
            if remaining <= 0 or not sink.poll(1000 * remaining):
                msg = '%s: only %d of %d worker threads started' % (self.name, ready, n_workers)
                raise RuntimeError(msg)
            kind, _ = sink.recv_pyobj()
            assert kind == 'ready'
            ready += 1
        logger.debug('%s: %d worker threads ready', self.name, n_workers)

    def _mainloop(self, cells, ventilator, sink):
        tasks = TaskQueue()
        tasks.add(Task(self.progress_interval, self._log_progress), repeat=True)
        results = [None] * len(cells)
        pending = list(enumerate(cells))
        pending.reverse()
        in_flight = 0
        while self.done < len(cells):
            while pending and in_flight < self.threads and ventilator.poll(0, zmq.POLLOUT):
                ventilator.send_pyobj(pending.pop(), protocol=PICKLE_PROTOCOL)
                in_flight += 1
            timeout = tasks.timeout_ms()
            if pending and in_flight < self.threads:
                # A worker is about to free up; come back for it soon.
                timeout = min(timeout, 10)
            events = dict(self.poller.poll(timeout))
            if self.stop_sock in events:
                assert self.stop_sock.recv() == b'stop'
                raise PoolStopped('%s: stopped with %d of %d cells done' % (self.name, self.done, len(cells)))
            if sink in events:
                result = sink.recv_pyobj()
                results[result.index] = result
                in_flight -= 1
                self.done += 1
            else:
                tasks.run_due()
        return results

    def stop(self):
        """Abandon a running map() from another thread"""
        if self.shutdown_endpoint is None:
            return
        sock = self.context.socket(zmq.PUSH)
        sock.connect(self.shutdown_endpoint)
        sock.send(b'stop')
        sock.close(linger=True)
