"""Dynamic partition assignment with work stealing.

Workers get contiguous chunks of the task range up front and drain their own
queue first; an idle worker steals from the tail of the fullest remaining
queue.  Every task is handed out exactly once.  The event log records which
worker ran which task and whether it was stolen.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field


@dataclass
class ScheduleEvent:
    worker: int
    task: int
    stolen: bool


@dataclass
class WorkQueue:
    """Per-worker deques over a fixed task set, with stealing."""

    n_tasks: int
    n_workers: int
    events: list[ScheduleEvent] = field(default_factory=list)

    def __post_init__(self):
        if self.n_workers < 1:
            raise ValueError("need at least one worker")
        self._lock = threading.Lock()
        self._queues = [deque() for _ in range(self.n_workers)]
        for t in range(self.n_tasks):
            self._queues[t * self.n_workers // max(self.n_tasks, 1)].append(t)

    def take(self, worker: int) -> int | None:
        """Next task for this worker, stealing when its own queue is dry."""
        with self._lock:
            own = self._queues[worker]
            if own:
                task = own.popleft()
                self.events.append(ScheduleEvent(worker, task, stolen=False))
                return task
            victim = max(range(self.n_workers), key=lambda w: len(self._queues[w]))
            if self._queues[victim]:
                task = self._queues[victim].pop()
                self.events.append(ScheduleEvent(worker, task, stolen=True))
                return task
            return None


def run_stealing(n_tasks: int, n_workers: int, fn) -> WorkQueue:
    """Run ``fn(worker_id, task_id)`` over all tasks; returns the queue log.

    With one worker everything runs inline; otherwise real threads drain the
    queues concurrently.  Any worker exception is re-raised after join.
    """
    queue = WorkQueue(n_tasks, n_workers)
    if n_workers == 1:
        while (task := queue.take(0)) is not None:
            fn(0, task)
        return queue

    errors: list[BaseException] = []

    def drain(worker: int):
        try:
            while (task := queue.take(worker)) is not None:
                fn(worker, task)
        except BaseException as exc:  # surfaced after join
            errors.append(exc)

    threads = [threading.Thread(target=drain, args=(w,)) for w in range(n_workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return queue
