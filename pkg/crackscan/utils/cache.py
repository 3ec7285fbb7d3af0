"""
Caching module for crackscan
"""
import logging
import threading
from collections import OrderedDict
from typing import Callable, Hashable, Optional, Tuple

logger = logging.getLogger(__name__)


class HessianCache:
    """LRU cache of Hessian volumes keyed by (volume fingerprint, sigma)

    Frangi, Sheet and MHE responses at the same scale share one Hessian, so a run
    that compares filters or seeds percolation from another filter convolves once.
    """
    def __init__(self, max_size: int = 4):
        self.max_size = max_size
        self.cache: "OrderedDict[Tuple[Hashable, float], object]" = OrderedDict()
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def get(self, fingerprint: Hashable, sigma: float) -> Optional[object]:
        """Get a Hessian from the cache"""
        key = (fingerprint, float(sigma))
        with self._lock:
            if key in self.cache:
                # Move the item to the end (most recently used)
                value = self.cache.pop(key)
                self.cache[key] = value
                self.hits += 1
                return value
            self.misses += 1
        return None

    def set(self, fingerprint: Hashable, sigma: float, value: object):
        """Set a Hessian in the cache"""
        key = (fingerprint, float(sigma))
        with self._lock:
            self.cache[key] = value
            self.cache.move_to_end(key)
            self._prune_cache()

    def get_or_compute(self, fingerprint: Hashable, sigma: float, compute: Callable[[], object]) -> object:
        """Return the cached Hessian or compute and store it"""
        value = self.get(fingerprint, sigma)
        if value is None:
            logger.debug(f"Hessian cache miss at sigma={sigma}")
            value = compute()
            self.set(fingerprint, sigma, value)
        return value

    def clear(self):
        """Clear the cache"""
        with self._lock:
            self.cache.clear()

    def __len__(self) -> int:
        return len(self.cache)

    def _prune_cache(self):
        """Prune the cache to ensure it doesn't exceed max size"""
        while len(self.cache) > self.max_size:
            # Remove oldest item (first in OrderedDict)
            self.cache.popitem(last=False)
