from __future__ import annotations

import logging
from functools import partial
from typing import Callable, Sequence, TypeVar

import anyio

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def run_ordered(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """Apply ``fn`` to every item on worker threads; results keep input order.

    Jobs must not share mutable state. With ``workers <= 1`` (or a single
    item) the loop runs inline, which keeps tracebacks simple in tests.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    results: list = [None] * len(items)

    async def _run_all() -> None:
        limiter = anyio.CapacityLimiter(workers)

        async def _one(idx: int, item: T) -> None:
            results[idx] = await anyio.to_thread.run_sync(partial(fn, item), limiter=limiter)

        async with anyio.create_task_group() as tg:
            for idx, item in enumerate(items):
                tg.start_soon(_one, idx, item)

    logger.debug("running %d jobs on %d workers", len(items), workers)
    anyio.run(_run_all)
    return results
