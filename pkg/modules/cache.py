"""
Result cache for ergolab.
Keeps effective matrices keyed by a content hash of the environment recipe,
in memory and optionally persisted to a JSON matrix store.
"""

import logging
import threading
import time
from datetime import datetime
from typing import Any, Dict, Optional

import numpy as np

from .interfaces import IResultCache
from .storage import MatrixStore
from .utils import config_hash


def effective_matrix_key(model: Dict[str, Any], d: int, L: int, seed: int, tol: float,
                         kappa: float = 2.0) -> str:
    """SHA-256 of everything that determines an effective-matrix estimate"""
    return config_hash({'model': model, 'd': d, 'L': L, 'seed': seed, 'tol': tol, 'kappa': kappa})


def _convert_numpy(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _convert_numpy(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_convert_numpy(i) for i in obj]
    return obj


class ResultCache(IResultCache):
    """
    Content-keyed cache. Keys are hashes of the inputs, so a hit returns
    exactly what a recomputation would.
    """

    def __init__(self, config: Dict[str, Any]):
        self.enabled = config.get('enable_cache', True)
        self.cache_file = config.get('cache_file')
        self.storage = MatrixStore(self.cache_file) if (self.enabled and self.cache_file) else None
        self.entries: Dict[str, Dict[str, Any]] = {}
        self.stats = {'hits': 0, 'misses': 0, 'entry_count': 0, 'load_time': 0.0, 'save_time': 0.0}
        self.lock = threading.RLock()
        self._dirty = False
        if self.storage is not None:
            self._load_cache()

    def _load_cache(self):
        start_time = time.time()
        data = self.storage.load()
        with self.lock:
            self.entries = data['entries']
            self.stats['entry_count'] = len(self.entries)
        self.stats['load_time'] = time.time() - start_time
        logging.info(f"Loaded {self.stats['entry_count']} effective matrices in {self.stats['load_time']:.2f}s")

    def get(self, key: str) -> Optional[Any]:
        if not self.enabled:
            self.stats['misses'] += 1
            return None
        with self.lock:
            entry = self.entries.get(key)
            if entry is None:
                self.stats['misses'] += 1
                return None
            entry['access_count'] = entry.get('access_count', 0) + 1
            self.stats['hits'] += 1
            return entry['value']

    def put(self, key: str, value: Any) -> None:
        if not self.enabled:
            return
        with self.lock:
            self.entries[key] = {'value': _convert_numpy(value),
                                 'timestamp': datetime.now().timestamp(),
                                 'access_count': 0}
            self.stats['entry_count'] = len(self.entries)
            self._dirty = True

    def save(self) -> bool:
        if self.storage is None or not self._dirty:
            return True
        start_time = time.time()
        with self.lock:
            success = self.storage.save(dict(self.entries), entry_count=len(self.entries),
                                        last_saved=datetime.now().timestamp())
            self._dirty = not success
        self.stats['save_time'] = time.time() - start_time
        if not success:
            logging.warning("Failed to save cache")
        return success

    def clear(self) -> None:
        with self.lock:
            self.entries.clear()
            self.stats['entry_count'] = 0
            if self.storage is not None:
                self.storage.clear()
        logging.info("Cache cleared")

    def get_stats(self) -> Dict[str, Any]:
        stats = dict(self.stats)
        lookups = stats['hits'] + stats['misses']
        stats['enabled'] = self.enabled
        stats['cache_file'] = str(self.cache_file)
        stats['store_bytes'] = self.storage.size_bytes() if self.storage is not None else 0
        stats['hit_ratio'] = 100.0 * stats['hits'] / lookups if lookups else 0.0
        return stats

    def shutdown(self) -> None:
        if not self.enabled:
            return
        self.save()
        logging.info(f"Cache shutdown complete. Entries: {self.stats['entry_count']}, "
                     f"Hits: {self.stats['hits']}, Misses: {self.stats['misses']}")
