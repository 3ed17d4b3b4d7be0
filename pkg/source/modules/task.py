from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any


class Task(ABC):
    """One independent unit of work for a TaskQueue; `run` returns the task's result."""

    @abstractmethod
    def run(self) -> Any:
        raise NotImplementedError
