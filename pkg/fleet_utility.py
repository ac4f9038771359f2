"""Utility functions and errors shared by the fleet toolkit."""
from __future__ import annotations
from functools import wraps
from queue import Empty, Queue
from threading import Thread
import logging
from time import time


def log_time(func):
    """Decorator that logs function call time when debugging."""
    @wraps(func)
    def wrap(*args, **kwargs):
        start = time()
        value = func(*args, **kwargs)
        delta = time() - start
        msg = f'{func.__name__} took {delta:.3f} seconds.'
        if __debug__:
            logging.debug(msg)
        return value
    return wrap


class Worker(Thread):
    """Processes (index, function, args) items from an input queue and
    submits (index, result) pairs to an output queue.
    """

    def __init__(self, input_queue: Queue, output_queue: Queue, daemon=True):
        super().__init__()
        self.input_queue = input_queue
        self.output_queue = output_queue
        self.daemon = daemon

    def run(self):
        while True:
            try:
                index, func, args = self.input_queue.get_nowait()
            except Empty:
                return
            try:
                result = func(*args)
            except Exception as err:  # re-raised by run_jobs
                result = err
            self.output_queue.put((index, result))


def run_jobs(jobs: list[tuple], nr_threads: int = 1) -> list:
    """Run (function, args) jobs on a bounded pool of workers.

    Results come back in job order, whatever order the workers finish in.
    The first failed job re-raises its exception.
    """
    if nr_threads <= 1 or len(jobs) <= 1:
        return [func(*args) for func, args in jobs]
    input_queue = Queue()
    for index, (func, args) in enumerate(jobs):
        input_queue.put((index, func, args))
    output_queue = Queue()
    workers = [Worker(input_queue, output_queue)
               for dummy in range(min(nr_threads, len(jobs)))]
    if __debug__:
        logging.debug('Running %d jobs on %d workers.',
                      len(jobs), len(workers))
    for worker in workers:
        worker.start()
    for worker in workers:
        worker.join()
    results = [None] * len(jobs)
    while not output_queue.empty():
        index, result = output_queue.get()
        results[index] = result
    for result in results:
        if isinstance(result, Exception):
            raise result
    return results


class FleetError(Exception):
    """Base class of all toolkit errors."""
    exit_code = 1


class SchemaError(FleetError):
    """Input does not follow the declared schema."""
    exit_code = 3


class DataError(FleetError):
    """Input rows are inconsistent, e.g. duplicate trip ids."""
    exit_code = 3


class PreconditionError(FleetError):
    """An operation was called outside its preconditions."""
    exit_code = 4


class ConsistencyError(FleetError):
    """Internal bookkeeping does not reconcile."""
    exit_code = 5
