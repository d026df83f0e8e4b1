import sys
import os
import traceback
import threading
import logging
import logging.handlers

import numpy as np

logger = logging.getLogger(__name__)

# Little-endian 64-bit floats, for every binary file this package writes:
FLOAT_DTYPE = np.dtype('<f8')

# Purposes that get their own random stream. The ids are part of the on-disk
# provenance, so never renumber them:
STREAM_IDS = {
    'ic': 0,
    'init': 1,
    'noise': 2,
    'mesh': 3,
    'shuffle': 4,
}


class ShapeError(ValueError):
    pass


class UnstableParameters(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class ConfigError(ValueError):
    pass


class MeshError(ValueError):
    pass


class StageFailure(RuntimeError):
    def __init__(self, stage, cell, message):
        self.stage = stage
        self.cell = cell
        self.message = message
        super(StageFailure, self).__init__('%s failed for %s: %s' % (stage, cell, message))


def _format_exc():
    """Format just the last line of the current exception, not the whole traceback"""
    exc_type, exc_value, _ = sys.exc_info()
    return traceback.format_exception_only(exc_type, exc_value)[0].strip()


def setup_logging(name, silent=False, directory=None):
    """Basic logging setup used by the cpnet command line tools. silent=True will
    configure logging calls to be no-ops. directory must be specified for logging to
    file, otherwise only terminal logging will be produced. Directory will be created if
    it doesn't exist, along with any missing parents.

    The named logger is the one returned by logging.getLogger(name), so loggers of
    modules beneath it ('cpnet.pde_lab' and so on) propagate into the same handlers.
    Calling this again replaces the handlers rather than adding more."""
    LOGLEVEL = logging.DEBUG
    if directory is not None:
        logpath = os.path.join(directory, '%s.log' % name)
        os.makedirs(directory, exist_ok=True)
    else:
        logpath = None
    logger = logging.getLogger(name)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    logger.setLevel(LOGLEVEL)
    formatter = logging.Formatter('[%(asctime)s] %(levelname)s %(message)s')
    file_handler_success = False
    if not silent:
        if logpath is not None:
            try:
                handler = logging.handlers.RotatingFileHandler(
                    logpath, maxBytes=50 * 1024 ** 2, backupCount=1
                )
                handler.setLevel(LOGLEVEL)
                handler.setFormatter(formatter)
                logger.addHandler(handler)
                file_handler_success = True
            except (OSError, IOError):
                file_handler_success = False
        if sys.stdout is not None and sys.stdout.isatty():
            stream_handler = logging.StreamHandler(sys.stdout)
            stream_handler.setLevel(logging.INFO)
            stream_handler.setFormatter(formatter)
            logger.addHandler(stream_handler)
    logger.propagate = not silent
    if silent:
        logger.addHandler(logging.NullHandler())
    if not silent and not file_handler_success and logpath is not None:
        msg = 'Can\'t open or do not have permission to write to log file '
        msg += logpath + '. Only terminal logging will be output.'
        logger.warning(msg)
    elif file_handler_success:
        logger.info('logging to %s', logpath)
    return logger


class SeedStreams(object):
    """Independent random streams derived from one root seed. Each (purpose, cell)
    pair maps to its own numpy SeedSequence spawn key, so adding a new consumer of
    randomness never shifts the numbers another consumer sees. Every stream handed out
    is logged and remembered in `issued` for the run manifest. One instance may be shared
    by the worker threads of a pool."""

    def __init__(self, root_seed):
        root_seed = int(root_seed)
        if root_seed < 0 or root_seed >= 2 ** 64:
            raise ConfigError('seed must be an unsigned 64-bit integer, got %d' % root_seed)
        self.root_seed = root_seed
        self.issued = []
        self._issued_lock = threading.Lock()

    def generator(self, purpose, cell=0):
        try:
            stream_id = STREAM_IDS[purpose]
        except KeyError:
            raise ValueError('unknown random stream purpose %r' % purpose) from None
        key = (int(cell), stream_id)
        with self._issued_lock:
            first_use = key not in self.issued
            if first_use:
                self.issued.append(key)
        if first_use:
            logger.debug(
                'seed stream %s: root %d, cell %d, stream id %d',
                purpose,
                self.root_seed,
                cell,
                stream_id,
            )
        sequence = np.random.SeedSequence(self.root_seed, spawn_key=key)
        return np.random.default_rng(sequence)

    def describe(self):
        names = {v: k for k, v in STREAM_IDS.items()}
        with self._issued_lock:
            issued = sorted(self.issued)
        return ['cell %d %s (stream id %d)' % (c, names[s], s) for c, s in issued]


def write_float64(path, array):
    np.ascontiguousarray(array, dtype=FLOAT_DTYPE).tofile(str(path))


def read_float64(path, shape=None):
    data = np.fromfile(str(path), dtype=FLOAT_DTYPE).astype(np.float64)
    if shape is not None:
        data = data.reshape(shape)
    return data
