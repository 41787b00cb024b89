# Copyright (C) DATADVANCE, 2010-2023
#
# Permission is hereby granted, free of charge, to any person obtaining
# a copy of this software and associated documentation files (the
# "Software"), to deal in the Software without restriction, including
# without limitation the rights to use, copy, modify, merge, publish,
# distribute, sublicense, and/or sell copies of the Software, and to
# permit persons to whom the Software is furnished to do so, subject to
# the following conditions:
#
# The above copyright notice and this permission notice shall be
# included in all copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND,
# EXPRESS OR IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF
# MERCHANTABILITY, FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT.
# IN NO EVENT SHALL THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY
# CLAIM, DAMAGES OR OTHER LIABILITY, WHETHER IN AN ACTION OF CONTRACT,
# TORT OR OTHERWISE, ARISING FROM, OUT OF OR IN CONNECTION WITH THE
# SOFTWARE OR THE USE OR OTHER DEALINGS IN THE SOFTWARE.

"""Worker pool for per-table stages.

Generation, pair preparation and inference of different tables are
independent, so they run through `asgiref.sync.sync_to_async` bound to
a designated thread pool and are gathered in input order. NumPy and
Pillow release the GIL in the heavy parts.
"""

import asyncio
import concurrent.futures
import logging
import time
from typing import Callable, List, Optional, Sequence, TypeVar

import asgiref.sync

# Module logger.
LOG = logging.getLogger(__name__)

Item = TypeVar("Item")
Result = TypeVar("Result")

# Log a warning when a single task takes longer (seconds), `None`
# disables the check.
WARN_TASK_TIMEOUT: Optional[float] = 60


def parallel_map(
    func: Callable[[Item], Result],
    items: Sequence[Item],
    jobs: int = 1,
    warn_task_timeout: Optional[float] = WARN_TASK_TIMEOUT,
) -> List[Result]:
    """Apply `func` to every item, `jobs` items at a time.

    Results come in the order of `items` whatever order the tasks
    finish in. With `jobs <= 1` everything runs inline in the calling
    thread. Must not be called from a running event loop, use
    `parallel_map_async` there.

    Raises:
        Exception: The first exception raised by `func`.
    """
    if jobs <= 1 or len(items) <= 1:
        return [_timed(func, item, warn_task_timeout) for item in items]
    return asyncio.run(parallel_map_async(func, items, jobs, warn_task_timeout))


async def parallel_map_async(
    func: Callable[[Item], Result],
    items: Sequence[Item],
    jobs: int,
    warn_task_timeout: Optional[float] = WARN_TASK_TIMEOUT,
) -> List[Result]:
    """Coroutine version of `parallel_map` running on `jobs` threads."""
    with concurrent.futures.ThreadPoolExecutor(
        max_workers=max(jobs, 1), thread_name_prefix="TableWorker"
    ) as executor:
        run = asgiref.sync.sync_to_async(
            _timed, thread_sensitive=False, executor=executor
        )
        results = await asyncio.gather(
            *(run(func, item, warn_task_timeout) for item in items)
        )
    LOG.debug("Finished %s tasks on %s threads.", len(items), jobs)
    return list(results)


def _timed(func, item, warn_task_timeout):
    """Run a task and warn when it takes too long."""
    if not warn_task_timeout:
        return func(item)
    start_time = time.perf_counter()
    result = func(item)
    duration = time.perf_counter() - start_time
    if duration >= warn_task_timeout:
        LOG.warning(
            "Task %s took %.3f seconds (>%.3f)! Debug log contains the task item.",
            getattr(func, "__qualname__", func),
            duration,
            warn_task_timeout,
        )
        LOG.debug("Slow task item: %r.", item)
    return result
