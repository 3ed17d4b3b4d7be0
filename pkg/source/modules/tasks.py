from __future__ import annotations

import logging
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from typing import TYPE_CHECKING, Any

from modules.task import Task

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable


class TaskQueue(deque[Task]):
    """Runs queued tasks on a pool of worker threads.

    Results come back in submission order whatever order the workers finish in, so anything
    written from them stays deterministic.
    """

    def __init__(
        self,
        worker_count=4,
        maxlen=None,
        on_done: Callable[[Task, Any], Any] | None = None,
    ):
        if maxlen:
            super().__init__(maxlen=maxlen)
        else:
            super().__init__()
        self.worker_count = max(int(worker_count), 1)
        self.on_done: Callable[[Task, Any], Any] | None = on_done

    def extend_tasks(self, tasks: Iterable[Task]):
        self.extend(tasks)
        return self

    def _run_task(self, task: Task):
        logging.debug(f"{threading.current_thread().name}: {task!r}")
        try:
            return task.run()
        except Exception as e:
            logging.exception(e)
            raise

    def run(self) -> list[Any]:
        tasks = list(self)
        self.clear()
        if not tasks:
            return []

        if self.worker_count == 1 or len(tasks) == 1:
            results = [self._run_task(task) for task in tasks]
        else:
            pool = ThreadPoolExecutor(max_workers=self.worker_count, thread_name_prefix="TaskWorker")
            try:
                futures = [pool.submit(self._run_task, task) for task in tasks]
                results = [future.result() for future in futures]
            finally:
                pool.shutdown(wait=True, cancel_futures=True)

        if self.on_done is not None:
            for task, result in zip(tasks, results):
                self.on_done(task, result)
        return results

    def __repr__(self):
        return f"{self.__class__.__name__}[{len(self)} queued, {self.worker_count} workers]"
