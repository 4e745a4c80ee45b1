import time

import pytest

from curv_bench.error_handler import SolveFailure
from curv_bench.utils.async_executor import AsyncExecutor


def _square(x):
    return x * x


def _slow_identity(x, delay):
    time.sleep(delay)
    return x


def _fail(x):
    raise SolveFailure("diverged", check="resolvent", value=x)


def test_results_keep_submission_order():
    tasks = [(_slow_identity, (i, 0.02 * (5 - i))) for i in range(5)]
    with AsyncExecutor(max_workers=3) as executor:
        assert executor.map_tasks(tasks) == [0, 1, 2, 3, 4]


def test_failures_come_back_in_place():
    with AsyncExecutor(max_workers=2) as executor:
        results = executor.map_tasks([(_square, (3,)), (_fail, (7,)), (_square, (4,))])
    assert results[0] == 9 and results[2] == 16
    assert isinstance(results[1], SolveFailure)
    assert results[1].value == 7


def test_safe_execute_reraises():
    with AsyncExecutor(max_workers=1) as executor:
        with pytest.raises(SolveFailure):
            executor.loop.run_until_complete(executor.safe_execute(_fail, 1))
