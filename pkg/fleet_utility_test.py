"""Worker pool, timing decorator and error codes."""
import time
import pytest
from fleet_utility import (ConsistencyError, DataError, FleetError,
                           PreconditionError, SchemaError, log_time, run_jobs)


def slow_square(x, delay):
    time.sleep(delay)
    return x * x


def fail(message):
    raise PreconditionError(message)


def test_run_jobs_keeps_job_order():
    # later jobs finish first
    jobs = [(slow_square, (x, 0.05 * (4 - x))) for x in range(5)]
    assert run_jobs(jobs, nr_threads=3) == [0, 1, 4, 9, 16]


def test_run_jobs_sequential():
    assert run_jobs([(slow_square, (3, 0))], nr_threads=8) == [9]
    assert run_jobs([(slow_square, (x, 0)) for x in range(3)]) == [0, 1, 4]
    assert run_jobs([]) == []


def test_run_jobs_reraises():
    jobs = [(slow_square, (1, 0)), (fail, ('boom',)), (slow_square, (2, 0))]
    with pytest.raises(PreconditionError, match='boom'):
        run_jobs(jobs, nr_threads=2)


def test_log_time_returns_value(caplog):
    @log_time
    def add(a, b):
        return a + b
    with caplog.at_level('DEBUG'):
        assert add(2, b=3) == 5
    assert 'add took' in caplog.text


@pytest.mark.parametrize('error, code', [
    (FleetError, 1), (SchemaError, 3), (DataError, 3),
    (PreconditionError, 4), (ConsistencyError, 5)])
def test_exit_codes(error, code):
    assert error('x').exit_code == code
    assert issubclass(error, FleetError)
