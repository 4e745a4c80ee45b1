import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from typing import Any, Callable, List, Sequence, Tuple

logger = logging.getLogger(__name__)


class AsyncExecutor:
    """Bounded thread pool driven from a private event loop"""

    def __init__(self, max_workers: int = 4):
        self.max_workers = max_workers
        self.loop = asyncio.new_event_loop()
        self.executor = ThreadPoolExecutor(max_workers=max_workers)

    async def run_blocking(self, func: Callable, *args, **kwargs):
        """Execute blocking functions asynchronously"""
        return await self.loop.run_in_executor(
            self.executor,
            partial(func, *args, **kwargs)
        )

    async def safe_execute(self, func: Callable, *args, **kwargs):
        """Wrapper with error logging; the exception is re-raised"""
        try:
            return await self.run_blocking(func, *args, **kwargs)
        except Exception as e:
            logger.error(f"Task {getattr(func, '__name__', func)} failed: {str(e)}")
            raise

    @staticmethod
    async def gather(*coroutines, return_exceptions: bool = False):
        """Wrapper for asyncio.gather"""
        return await asyncio.gather(*coroutines, return_exceptions=return_exceptions)

    def map_tasks(self, tasks: Sequence[Tuple[Callable, tuple]]) -> List[Any]:
        """Run (func, args) tasks on the pool; results (or raised exceptions) come back in submission order"""
        coroutines = [self.safe_execute(func, *args) for func, args in tasks]
        logger.debug(f"Dispatching {len(coroutines)} tasks on {self.max_workers} workers")
        return self.loop.run_until_complete(self.gather(*coroutines, return_exceptions=True))

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.executor.shutdown(wait=True)
        self.loop.close()
