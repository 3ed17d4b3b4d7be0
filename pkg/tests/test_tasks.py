import threading
import time
from dataclasses import dataclass

import pytest
from modules.task import Task
from modules.tasks import TaskQueue


@dataclass
class Sleeper(Task):
    value: int
    delay: float = 0.0

    def run(self):
        time.sleep(self.delay)
        return self.value * 10, threading.current_thread().name


@dataclass
class Broken(Task):
    def run(self):
        raise RuntimeError("boom")


def test_results_keep_submission_order():
    queue = TaskQueue(worker_count=4)
    queue.extend_tasks(Sleeper(i, delay=0.02 * (5 - i)) for i in range(6))
    results = queue.run()
    assert [value for value, _ in results] == [0, 10, 20, 30, 40, 50]
    assert all(name.startswith("TaskWorker") for _, name in results)
    assert len(queue) == 0


def test_single_worker_runs_inline():
    results = TaskQueue(worker_count=1).extend_tasks([Sleeper(1), Sleeper(2)]).run()
    assert [name for _, name in results] == [threading.current_thread().name] * 2


def test_done_callback_runs_in_order():
    seen = []
    queue = TaskQueue(worker_count=3, on_done=lambda task, result: seen.append((task.value, result[0])))
    queue.extend_tasks(Sleeper(i, delay=0.01 * (4 - i)) for i in range(4))
    queue.run()
    assert seen == [(0, 0), (1, 10), (2, 20), (3, 30)]


def test_failures_propagate():
    queue = TaskQueue(worker_count=2).extend_tasks([Sleeper(1), Broken(), Sleeper(2)])
    with pytest.raises(RuntimeError, match="boom"):
        queue.run()


def test_empty_queue():
    assert TaskQueue().run() == []
    assert TaskQueue(worker_count=0).worker_count == 1
    assert TaskQueue(maxlen=2).extend_tasks([Sleeper(1), Sleeper(2), Sleeper(3)]).maxlen == 2
