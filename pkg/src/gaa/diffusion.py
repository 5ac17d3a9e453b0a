"""Random walk with restart steady states and graph-augmented node features."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from gaa import kernels
from gaa.errors import ConvergenceError, InputError
from gaa.graph import CompoundSet, SharedGraph

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000
DENSE_ORACLE_MAX_NODES = 2000
SOLVE_BLOCK = 256


@dataclass(frozen=True)
class AlphaGrid:
    alphas: tuple[float, ...]

    def __post_init__(self):
        a = tuple(float(x) for x in self.alphas)
        object.__setattr__(self, "alphas", a)
        if not a:
            raise InputError("alpha grid is empty")
        if any(not (0.0 < x <= 1.0) for x in a):
            raise InputError(f"restart probabilities must lie in (0, 1]: {a}")
        if any(b <= x for x, b in zip(a, a[1:])):
            raise InputError(f"alpha grid must be strictly increasing: {a}")

    def __len__(self):
        return len(self.alphas)

    @classmethod
    def parse(cls, text: str) -> "AlphaGrid":
        """``"0.1:0.9:0.1"`` (start:stop:step, inclusive) or ``"0.2,0.5,1"``."""
        text = text.strip()
        try:
            return cls._parse(text)
        except ValueError as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"bad alpha grid {text!r}: {exc}") from None

    @classmethod
    def _parse(cls, text: str) -> "AlphaGrid":
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise InputError(f"bad alpha range {text!r}, expected start:stop:step")
            start, stop, step = (float(p) for p in parts)
            if step <= 0:
                raise InputError("alpha step must be positive")
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return cls(tuple(round(start + k * step, 12) for k in range(n)))
        return cls(tuple(float(p) for p in text.split(",") if p.strip()))

    @classmethod
    def paper_default(cls) -> "AlphaGrid":
        return cls.parse("0.1:0.9:0.1")


def _check_alpha(alpha):
    if not (0.0 < alpha <= 1.0):
        raise InputError(f"alpha must lie in (0, 1], got {alpha}")


def rwr_steady_state(
    graph: SharedGraph,
    x0: np.ndarray,
    alpha: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> np.ndarray:
    """Fixed point of ``x <- alpha*x0 + (1-alpha)*Â x`` started from ``x0``.

    ``x0`` may be a vector or an ``N x M`` block; columns are solved jointly and
    iteration stops once the largest absolute update is ``<= tol``.
    """
    _check_alpha(alpha)
    if tol <= 0:
        raise InputError("tol must be positive")
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape[0] != graph.n_nodes:
        raise InputError(f"x0 has {x0.shape[0]} rows, graph has {graph.n_nodes} nodes")
    if alpha == 1.0:
        return x0.copy()
    shape = x0.shape
    start = np.ascontiguousarray(x0.reshape(graph.n_nodes, -1))
    m = graph.col_norm_adj
    restart = alpha * start
    decay = 1.0 - alpha
    x = start
    resid = np.inf
    for it in range(1, max_iter + 1):
        nxt = restart + decay * kernels.csr_matmat(m.indptr, m.indices, m.data, x)
        resid = float(np.max(np.abs(nxt - x))) if nxt.size else 0.0
        x = nxt
        if resid <= tol:
            return x.reshape(shape)
    raise ConvergenceError(
        f"RWR (alpha={alpha}) not converged after {max_iter} iterations, residual {resid:.3e}",
        residual=resid,
        iterations=max_iter,
    )


def dense_rwr_oracle(graph: SharedGraph, X: np.ndarray, alpha: float) -> np.ndarray:
    """Direct LU solve of ``alpha (I - (1-alpha) Â)^{-1} X``; small graphs only."""
    _check_alpha(alpha)
    n = graph.n_nodes
    if n > DENSE_ORACLE_MAX_NODES:
        raise InputError(f"dense oracle limited to {DENSE_ORACLE_MAX_NODES} nodes, graph has {n}")
    X = np.asarray(X, dtype=np.float64)
    if alpha == 1.0:
        return X.copy()
    system = np.eye(n) - (1.0 - alpha) * graph.col_norm_adj.toarray()
    lu = scipy.linalg.lu_factor(system)
    return alpha * scipy.linalg.lu_solve(lu, X)


@dataclass(frozen=True, eq=False)
class AugmentedFeatures:
    """Per-compound ``N x t`` blocks; column ``s`` is the steady state for ``alphas[s]``."""

    values: np.ndarray  # (n_compounds, n_nodes, t)
    alphas: tuple[float, ...]
    compound_ids: tuple[str, ...]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i) -> np.ndarray:
        return self.values[i]

    def take(self, rows: Sequence[int]) -> "AugmentedFeatures":
        rows = list(rows)
        return AugmentedFeatures(
            self.values[rows], self.alphas, tuple(self.compound_ids[r] for r in rows)
        )


def augment_features(
    graph: SharedGraph,
    compounds: CompoundSet,
    grid: AlphaGrid,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    cache: "FeatureCache | None" = None,
) -> AugmentedFeatures:
    """Concatenate RWR steady states over ``grid`` for every compound."""
    if compounds.n_nodes != graph.n_nodes:
        raise InputError("compounds were built against a different graph")
    n_c, n = compounds.n_compounds, graph.n_nodes
    out = np.zeros((n_c, n, len(grid)))
    empty = [compounds.compound_ids[r] for r in range(n_c) if compounds.features[r].size == 0]
    if empty:
        log.warning("%d compound(s) have no targets in the graph; their features are zero: %s",
                    len(empty), ", ".join(empty[:5]) + (" ..." if len(empty) > 5 else ""))

    todo = []
    for r in range(n_c):
        hit = cache.load(graph, compounds, r, grid, tol, max_iter) if cache is not None else None
        if hit is None:
            todo.append(r)
        else:
            out[r] = hit

    # columns of one block are independent solves sharing the sparse sweeps
    for lo in range(0, len(todo), SOLVE_BLOCK):
        rows = todo[lo:lo + SOLVE_BLOCK]
        x0 = compounds.dense(rows)
        for s, alpha in enumerate(grid.alphas):
            out[rows, :, s] = rwr_steady_state(graph, x0, alpha, tol, max_iter).T
        if cache is not None:
            for r in rows:
                cache.store(graph, compounds, r, grid, tol, max_iter, out[r])
    return AugmentedFeatures(out, grid.alphas, compounds.compound_ids)


class FeatureCache:
    """One ``.npy`` matrix per (compound, grid) plus a JSON sidecar.

    The file name is a digest of the graph hash, grid, solver settings and
    the compound's target set; the sidecar repeats these and is checked on
    every read so a mismatching entry is a hard error instead of a silent
    reuse. Writes go through a temp file and ``os.replace``.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def _meta(graph, compounds, row, grid, tol, max_iter):
        return {
            "graph_hash": graph.content_hash,
            "compound_id": compounds.compound_ids[row],
            "target_hash": compounds.target_hash(row),
            "alphas": list(grid.alphas),
            "tol": tol,
            "max_iter": max_iter,
        }

    @staticmethod
    def _key(meta) -> str:
        return hashlib.sha256(json.dumps(meta, sort_keys=True).encode()).hexdigest()

    def path_for(self, graph, compounds, row, grid, tol, max_iter) -> Path:
        meta = self._meta(graph, compounds, row, grid, tol, max_iter)
        return self.root / f"{self._key(meta)}.npy"

    def load(self, graph, compounds, row, grid, tol, max_iter):
        meta = self._meta(graph, compounds, row, grid, tol, max_iter)
        path = self.root / f"{self._key(meta)}.npy"
        side = path.with_suffix(".json")
        if not path.exists() or not side.exists():
            return None
        stored = json.loads(side.read_text())
        if stored != meta:
            raise InputError(f"cache entry {path.name} does not match its inputs; delete {self.root}")
        arr = np.load(path)
        if arr.shape != (graph.n_nodes, len(grid)):
            raise InputError(f"cache entry {path.name} has shape {arr.shape}")
        return arr

    def store(self, graph, compounds, row, grid, tol, max_iter, matrix):
        meta = self._meta(graph, compounds, row, grid, tol, max_iter)
        path = self.root / f"{self._key(meta)}.npy"
        _atomic_write(path, lambda fh: np.save(fh, np.ascontiguousarray(matrix)))
        _atomic_write(
            path.with_suffix(".json"),
            lambda fh: fh.write(json.dumps(meta, sort_keys=True, indent=1).encode()),
        )


def _atomic_write(path: Path, writer) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
