"""
Threading utilities for crackscan
"""
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, Optional, Sequence, TypeVar

from tqdm import tqdm

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


def parallel_process(
    items: Sequence[T],
    process_func: Callable[[T], R],
    num_threads: Optional[int] = 4,
    description: str = "Processing",
    show_progress: bool = False
) -> List[R]:
    """
    Process items in parallel using multiple threads

    numpy and scipy release the GIL inside their kernels, so slabs and scales of a
    volume run concurrently. A failing item aborts the whole call.

    Args:
        items: Items to process
        process_func: Function to apply to each item
        num_threads: Number of threads to use (None or 1 runs inline)
        description: Description for the progress bar
        show_progress: Whether to show a progress bar

    Returns:
        List of results, in the order of the input items
    """
    items = list(items)
    if not items:
        return []

    if num_threads is None or num_threads <= 1 or len(items) == 1:
        iterator = tqdm(items, desc=description, disable=not show_progress)
        return [process_func(item) for item in iterator]

    results: List[Optional[R]] = [None] * len(items)

    with ThreadPoolExecutor(max_workers=min(num_threads, len(items))) as executor:
        future_to_index = {
            executor.submit(process_func, item): i
            for i, item in enumerate(items)
        }

        for future in tqdm(
            as_completed(future_to_index),
            total=len(items),
            desc=description,
            disable=not show_progress,
        ):
            index = future_to_index[future]
            try:
                results[index] = future.result()
            except Exception as e:
                logger.error(f"Error processing item {index} ({description}): {e}")
                for pending in future_to_index:
                    pending.cancel()
                raise

    return results  # type: ignore[return-value]
