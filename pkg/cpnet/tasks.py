import heapq
import itertools
from time import monotonic

# Timed callbacks for the main loop of the experiment cell pool
# (cpnet.experiments.pool), which spends its time blocked in zmq.Poller.poll()
# waiting for results from worker threads. The loop passes TaskQueue.timeout_ms() as
# the poll timeout, so it wakes when the next task is due, and then calls
# TaskQueue.run_due():
#
#     tasks = TaskQueue()
#     tasks.add(Task(10, log_progress), repeat=True)
#     while working:
#         events = dict(poller.poll(tasks.timeout_ms()))
#         ...
#         tasks.run_due()


class Task(object):
    def __init__(self, interval, func, *args, **kwargs):
        """Call func(*args, **kwargs) `interval` seconds from now. If added to a
        TaskQueue with repeat=True, the task comes due again every `interval` seconds
        after that."""
        self.interval = interval
        self.due_at = monotonic() + interval
        self.func = func
        self.args = args
        self.kwargs = kwargs
        self.repeat = False
        self.calls = 0

    def due_in(self):
        """Seconds until the task is due, negative if overdue"""
        return self.due_at - monotonic()

    def __call__(self):
        self.calls += 1
        return self.func(*self.args, **self.kwargs)


class TaskQueue(object):
    """Pending tasks, soonest due first. Tasks due at the same time come out in the
    order they were added."""

    def __init__(self):
        self._heap = []
        self._counter = itertools.count()

    def __len__(self):
        return len(self._heap)

    def __iter__(self):
        return (task for _, _, task in sorted(self._heap))

    def add(self, task, repeat=None):
        if repeat is not None:
            task.repeat = repeat
        if task.repeat and task.interval <= 0:
            raise ValueError('a repeating task needs a positive interval, got %r' % task.interval)
        heapq.heappush(self._heap, (task.due_at, next(self._counter), task))

    def next(self):
        """The soonest task, left in the queue"""
        return self._heap[0][2]

    def pop(self):
        """Remove and return the soonest task. A repeating task goes straight back in,
        due one interval after it was last due, but never in the past, so that a long
        stall is followed by one call rather than a burst of them."""
        _, _, task = heapq.heappop(self._heap)
        if task.repeat:
            task.due_at = max(monotonic(), task.due_at + task.interval)
            self.add(task)
        return task

    def run_due(self):
        """Call every task due by now, returning how many were called"""
        now = monotonic()
        called = set()
        while self._heap and self._heap[0][0] <= now:
            task = self.pop()
            # A repeat can come due again within the same clock tick:
            if id(task) not in called:
                called.add(id(task))
                task()
        return len(called)

    def timeout_ms(self):
        """Milliseconds until the next task is due, clipped at zero, or None if the
        queue is empty, for use as a zmq.Poller.poll() timeout"""
        if not self._heap:
            return None
        return max(0, 1000 * self.next().due_in())

    def cancel(self, task):
        self._heap = [entry for entry in self._heap if entry[2] is not task]
        heapq.heapify(self._heap)
