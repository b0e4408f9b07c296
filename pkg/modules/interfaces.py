"""
Interface definitions for ergolab.
Defines the contracts for scalar fields, decay envelopes and result storage.
"""

from abc import ABC, abstractmethod
from typing import Any, Dict, Optional

import numpy as np


class IScalarField(ABC):
    """A real field indexed by Z^d, realizing f(T^j omega)"""

    @abstractmethod
    def values(self, sites: np.ndarray) -> np.ndarray:
        """Evaluate the field at integer sites of shape (k, d)"""
        pass

    @abstractmethod
    def bound(self) -> float:
        """Upper bound on |field|; inf for unbounded laws"""
        pass

    @abstractmethod
    def shifted(self, g: np.ndarray) -> 'IScalarField':
        """The field seen from base point g: shifted(g).values(j) == values(j + g)"""
        pass


class IEnvelope(ABC):
    """A non-increasing radial envelope with an analytic lattice tail bound"""

    @abstractmethod
    def __call__(self, r: np.ndarray) -> np.ndarray:
        """Evaluate the envelope at radii r"""
        pass

    @abstractmethod
    def lattice_tail(self, R: float, n: int, d: int, kappa: float) -> float:
        """Upper bound on n^{-d} * sum over |j| > R of envelope(|j| / n)"""
        pass


class IResultStorage(ABC):
    """Persistent backing of a result cache"""

    @abstractmethod
    def load(self) -> Dict[str, Any]:
        """Stored document; its 'entries' map holds only well-formed entries"""
        pass

    @abstractmethod
    def save(self, entries: Dict[str, Any], **metadata) -> bool:
        """Replace the stored entries"""
        pass

    @abstractmethod
    def clear(self) -> bool:
        """Remove all stored data"""
        pass

    @abstractmethod
    def size_bytes(self) -> int:
        """Size of the store on disk; 0 when absent"""
        pass


class IResultCache(ABC):
    """Interface for content-keyed result caches"""

    @abstractmethod
    def get(self, key: str) -> Optional[Any]:
        pass

    @abstractmethod
    def put(self, key: str, value: Any) -> None:
        pass

    @abstractmethod
    def get_stats(self) -> Dict[str, Any]:
        pass

    @abstractmethod
    def shutdown(self) -> None:
        """Persist pending entries"""
        pass
