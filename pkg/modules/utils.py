"""
Utility functions for ergolab: logging, configuration, hashing,
counter-based random numbers and the worker pool.
"""

import concurrent.futures
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Stream identifiers for the counter-based generator. A field value is a pure
# function of (seed, stream, site index), so these must never be renumbered.
STREAM_CONDUCTANCE = 1
STREAM_MULTIPLICITY = 2
STREAM_WEIGHT = 3
STREAM_FIELD = 4
STREAM_MIXTURE = 5
STREAM_BOND = 6
STREAM_REPLICA = 7


def setup_logging(log_level: int = logging.INFO, log_file: Optional[str] = 'ergolab.log'):
    """Setup logging configuration"""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.insert(0, logging.FileHandler(log_file))
    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers
    )


def read_structured(path: Path) -> Dict[str, Any]:
    """Read a JSON or TOML document, chosen by file suffix"""
    path = Path(path)
    if path.suffix.lower() == '.toml':
        with open(path, 'rb') as f:
            return tomllib.load(f)
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def load_config(config_path: Optional[Path] = None) -> Dict[str, Any]:
    """Load runtime settings from file, merged over the defaults"""
    default_config = {
        'out_dir': './results',
        'threads': os.cpu_count() or 1,
        'logging_level': 'INFO',
        'log_file': 'ergolab.log',
        'enable_cache': True,
        'cache_file': './cache/effective_matrix_cache.json',
        'acceptance_dir': './config/acceptance',
        'include_timings': False,
    }

    if config_path and Path(config_path).exists():
        try:
            loaded_config = read_structured(Path(config_path))
            return {**default_config, **loaded_config}
        except Exception as e:
            logging.error(f"Error loading config: {str(e)}")
            raise

    default_path = Path('./config/config.json')
    if default_path.exists():
        try:
            loaded_config = read_structured(default_path)
            return {**default_config, **loaded_config}
        except Exception as e:
            logging.error(f"Error loading config: {str(e)}")
            raise

    logging.warning("No config file found, using defaults")
    return default_config


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer, np.floating, np.bool_)):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Cannot hash value of type {type(value).__name__}")


def config_hash(data: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a configuration dictionary"""
    canonical = json.dumps(data, sort_keys=True, separators=(',', ':'), default=_jsonable)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def file_sha256(path: Path) -> str:
    """SHA-256 of a file's bytes"""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b''):
            digest.update(block)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Counter-based random numbers (SplitMix64 finaliser)
# ---------------------------------------------------------------------------

def splitmix64(x: int) -> int:
    """One SplitMix64 step on a Python integer"""
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over='ignore'):
        z = z + np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def counter_hash(seed: int, stream: int, keys: np.ndarray) -> np.ndarray:
    """
    Hash integer keys to 64-bit words as a pure function of (seed, stream, key).

    Args:
        seed: non-negative seed
        stream: stream identifier (one of the STREAM_* constants)
        keys: integer array of shape (..., k); the last axis is folded in order

    Returns:
        uint64 array of shape keys.shape[:-1]
    """
    keys = np.asarray(keys, dtype=np.int64)
    if keys.ndim == 0:
        keys = keys.reshape(1, 1)
    base = splitmix64(splitmix64(int(seed) & MASK64) ^ (int(stream) & MASK64))
    h = np.full(keys.shape[:-1] or (1,), base, dtype=np.uint64)
    # negative coordinates wrap through two's complement
    words = keys.astype(np.uint64)
    for col in range(keys.shape[-1]):
        h = _mix_array(h ^ words[..., col])
    return h.reshape(keys.shape[:-1])


def counter_uniform(seed: int, stream: int, keys: np.ndarray) -> np.ndarray:
    """Uniform(0, 1) variates (never 0 or 1) keyed by (seed, stream, key)"""
    h = counter_hash(seed, stream, keys)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)


def replica_seed(master_seed: int, k: int) -> int:
    """Seed of replica k; stable under changes of the replica count"""
    return splitmix64(splitmix64(int(master_seed) & MASK64) ^ splitmix64(STREAM_REPLICA + int(k))) >> 1


def replica_seeds(master_seed: int, count: int) -> List[int]:
    return [replica_seed(master_seed, k) for k in range(count)]


# ---------------------------------------------------------------------------
# Worker pool and estimators
# ---------------------------------------------------------------------------

def parallel_map(func: Callable[[Any], Any], items: Iterable[Any], threads: int = 1) -> List[Any]:
    """
    Map func over items on a thread pool, returning results in input order.

    Exceptions raised by a task are re-raised in the caller.
    """
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    results: List[Any] = [None] * len(items)
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
        future_to_index = {executor.submit(func, item): i for i, item in enumerate(items)}
        for future in concurrent.futures.as_completed(future_to_index):
            results[future_to_index[future]] = future.result()
    return results


def mean_stderr(values: Sequence[float]) -> Tuple[float, float]:
    """Sample mean and its standard error (NaN error for fewer than two values)"""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return float('nan'), float('nan')
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, float('nan')
    if np.all(arr == arr[0]):
        return float(arr[0]), 0.0
    return mean, float(arr.std(ddof=1) / math.sqrt(arr.size))


def jackknife_ratio(numerators: Sequence[float], denominators: Sequence[float]) -> Tuple[float, float]:
    """
    Ratio of sums with a leave-one-out jackknife standard error.

    Returns (ratio, stderr); stderr is NaN with fewer than two replicas.
    """
    num = np.asarray(numerators, dtype=float)
    den = np.asarray(denominators, dtype=float)
    total_num = math.fsum(num)
    total_den = math.fsum(den)
    ratio = total_num / total_den
    k = num.size
    if k < 2:
        return ratio, float('nan')
    loo = (total_num - num) / (total_den - den)
    if np.all(loo == loo[0]):
        return ratio, 0.0
    var = (k - 1) / k * float(np.sum((loo - loo.mean()) ** 2))
    return ratio, math.sqrt(var)
