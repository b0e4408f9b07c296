"""
Persistence for ergolab: the plain-text environment format and the
JSON store behind the effective-matrix cache.

Environment text format::

    d L kappa model seed
    # lattice V11 V12 ... Vdd
    # sites yes|no
    # atoms N
    id x1 .. xd n
    ...
    # edges E
    id_from id_to rate dx1 .. dxd
    ...

Each unordered pair (and displacement) is written once with the rate
r_{from,to}; the partner rate follows from detailed balance,
r_{to,from} = n_from r_{from,to} / n_to. Floats are written with repr.
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict

import numpy as np

from .environment import Environment, LatticeMap
from .errors import ErgolabError
from .interfaces import IResultStorage


def _fmt(value: float) -> str:
    return repr(float(value))


def save_environment(env: Environment, path: Path) -> Path:
    """Write an environment in the text format"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{env.d} {env.L} {_fmt(env.kappa)} {env.model_tag} {env.seed}",
             "# lattice " + " ".join(_fmt(v) for v in env.lattice.V.reshape(-1)),
             f"# sites {'yes' if env.sites is not None else 'no'}",
             f"# atoms {env.n_atoms}"]
    for i in range(env.n_atoms):
        coords = " ".join(_fmt(v) for v in env.points[i])
        lines.append(f"{i} {coords} {_fmt(env.multiplicity[i])}")
    lines.append(f"# edges {env.n_edges}")
    rates = env.rate_forward
    for e in range(env.n_edges):
        disp = " ".join(_fmt(v) for v in env.disp[e])
        lines.append(f"{env.src[e]} {env.dst[e]} {_fmt(rates[e])} {disp}")
    with open(path, 'w', encoding='utf-8') as f:
        f.write("\n".join(lines) + "\n")
    logging.debug(f"Saved environment with {env.n_atoms} atoms to {path}")
    return path


def load_environment(path: Path) -> Environment:
    """
    Read an environment written by save_environment.

    Raises:
        ErgolabError: malformed file
    """
    path = Path(path)
    with open(path, encoding='utf-8') as f:
        lines = [line.strip() for line in f if line.strip()]
    try:
        d_str, L_str, kappa_str, model_tag, seed_str = lines[0].split()
        d, L = int(d_str), int(L_str)
        V = np.array([float(v) for v in lines[1].split()[2:]]).reshape(d, d)
        has_sites = lines[2].split()[2] == 'yes'
        n_atoms = int(lines[3].split()[2])
        atom_rows = np.array([[float(v) for v in line.split()] for line in lines[4:4 + n_atoms]]).reshape(n_atoms, d + 2)
        edge_header = lines[4 + n_atoms]
        n_edges = int(edge_header.split()[2])
        edge_rows = [line.split() for line in lines[5 + n_atoms:5 + n_atoms + n_edges]]
    except (IndexError, ValueError) as e:
        raise ErgolabError(f"Malformed environment file {path}: {e}") from e
    if len(edge_rows) != n_edges:
        raise ErgolabError(f"Malformed environment file {path}: expected {n_edges} edges")

    lattice = LatticeMap(V)
    points = atom_rows[:, 1:1 + d]
    multiplicity = atom_rows[:, 1 + d]
    src = np.array([int(row[0]) for row in edge_rows], dtype=np.int64)
    dst = np.array([int(row[1]) for row in edge_rows], dtype=np.int64)
    rate = np.array([float(row[2]) for row in edge_rows])
    disp = np.array([[float(v) for v in row[3:3 + d]] for row in edge_rows]).reshape(n_edges, d)
    sites = None
    if has_sites:
        sites = np.mod(np.rint(lattice.inverse(points)).astype(np.int64), L)
    return Environment(
        d=d, L=L, lattice=lattice, kappa=float(kappa_str), points=points,
        multiplicity=multiplicity, src=src, dst=dst, disp=disp,
        conductance=rate * multiplicity[src] if n_edges else rate,
        seed=int(seed_str), model_tag=model_tag, sites=sites)


def write_vector_csv(path: Path, positions: np.ndarray, values: np.ndarray) -> Path:
    """atom_id,x1..xd,value rows"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = positions.shape[1]
    header = ['atom_id'] + [f"x{i + 1}" for i in range(d)] + ['value']
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(",".join(header) + "\n")
        for i, (x, v) in enumerate(zip(positions, values)):
            f.write(",".join([str(i)] + [_fmt(c) for c in x] + [_fmt(v)]) + "\n")
    return path


# ---------------------------------------------------------------------------
# Effective-matrix store
# ---------------------------------------------------------------------------

STORE_FORMAT = 'ergolab-effective-matrices'
STORE_VERSION = 2


def _is_matrix_entry(key: Any, entry: Any) -> bool:
    """A stored entry: 64-hex recipe hash -> {'value': {'D': square finite matrix, ...}}"""
    if not (isinstance(key, str) and len(key) == 64 and all(c in '0123456789abcdef' for c in key)):
        return False
    if not isinstance(entry, dict) or not isinstance(entry.get('value'), dict):
        return False
    try:
        D = np.asarray(entry['value'].get('D'), dtype=float)
    except (TypeError, ValueError):
        return False
    return D.ndim == 2 and D.shape[0] == D.shape[1] and D.size > 0 and bool(np.all(np.isfinite(D)))


class MatrixStore(IResultStorage):
    """
    JSON file of effective matrices keyed by the SHA-256 of their recipe.
    json writes floats with repr, so a reloaded D is bit-identical.
    """

    def __init__(self, path: Path):
        self.path = Path(path)

    @staticmethod
    def empty() -> Dict[str, Any]:
        return {'format': STORE_FORMAT, 'version': STORE_VERSION, 'entries': {}}

    def load(self) -> Dict[str, Any]:
        if not self.path.exists():
            return self.empty()
        try:
            with open(self.path, encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
            logging.warning(f"Unreadable matrix store {self.path} ({e}); effective matrices will be recomputed")
            return self.empty()
        if not isinstance(data, dict) or data.get('format') != STORE_FORMAT \
                or not isinstance(data.get('entries'), dict):
            logging.warning(f"{self.path} is not an effective-matrix store, ignoring it")
            return self.empty()
        if data.get('version') != STORE_VERSION:
            logging.warning(f"Matrix store {self.path} has version {data.get('version')}, "
                            f"expected {STORE_VERSION}; ignoring it")
            return self.empty()
        entries = {key: entry for key, entry in data['entries'].items() if _is_matrix_entry(key, entry)}
        dropped = len(data['entries']) - len(entries)
        if dropped:
            logging.warning(f"Dropped {dropped} malformed effective-matrix entries from {self.path}")
        return {**data, 'entries': entries}

    def save(self, entries: Dict[str, Any], **metadata) -> bool:
        """Write all entries atomically; metadata keys go beside them"""
        data = {**metadata, 'format': STORE_FORMAT, 'version': STORE_VERSION, 'entries': entries}
        partial = self.path.with_name(self.path.name + '.partial')
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(partial, 'w', encoding='utf-8') as f:
                json.dump(data, f, indent=1, sort_keys=True)
            os.replace(partial, self.path)
        except (TypeError, ValueError, OSError) as e:
            logging.error(f"Could not write {len(entries)} effective matrices to {self.path}: {e}")
            return False
        logging.debug(f"Wrote {len(entries)} effective matrices to {self.path}")
        return True

    def clear(self) -> bool:
        try:
            self.path.unlink(missing_ok=True)
        except OSError as e:
            logging.error(f"Could not remove matrix store {self.path}: {e}")
            return False
        return True

    def size_bytes(self) -> int:
        return self.path.stat().st_size if self.path.exists() else 0
