from __future__ import annotations
import logging
from typing import Any, Callable, List, Optional, Sequence

logger = logging.getLogger(__name__)


def default_thread_count() -> int:
    """Worker count of the global Qt thread pool."""
    from PyQt5.QtCore import QThreadPool
    return QThreadPool.globalInstance().maxThreadCount()


class _Slot:
    __slots__ = ("result", "error")

    def __init__(self):
        self.result: Any = None
        self.error: Optional[BaseException] = None


def _call(task: Callable[[], Any], slot: _Slot) -> None:
    try:
        slot.result = task()
    except Exception as e:  # an exception escaping a QRunnable aborts the process
        slot.error = e


def run_in_pool(tasks: Sequence[Callable[[], Any]], threads: int = 1) -> List[Any]:
    """
    Runs independent tasks and returns their results in task order. Each task
    writes into its own pre-allocated slot; the first stored exception is
    re-raised after all tasks have finished.
    """
    slots = [_Slot() for _ in tasks]
    if threads <= 1 or len(tasks) <= 1:
        for task, slot in zip(tasks, slots):
            _call(task, slot)
    else:
        from PyQt5.QtCore import QRunnable, QThreadPool

        class ReplicateWorker(QRunnable):
            """Worker thread for a single replicate."""
            def __init__(self, task, slot):
                super().__init__()
                self.task = task
                self.slot = slot
                self.setAutoDelete(True)

            def run(self):
                _call(self.task, self.slot)

        pool = QThreadPool()
        pool.setMaxThreadCount(threads)
        logger.debug("Running %d tasks on %d threads", len(tasks), threads)
        for task, slot in zip(tasks, slots):
            pool.start(ReplicateWorker(task, slot))
        pool.waitForDone()

    for slot in slots:
        if slot.error is not None:
            raise slot.error
    return [slot.result for slot in slots]
