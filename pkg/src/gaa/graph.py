"""Shared interactome topology, pathway (supermodule) membership and compound targets."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from gaa import kernels
from gaa.errors import InputError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SharedGraph:
    """Undirected, unweighted graph shared by every compound.

    ``edges`` holds each undirected edge once as ``(i, j)`` with ``i < j``.
    ``col_norm_adj[i, j] = A[i, j] / deg(j)``.
    """

    n_nodes: int
    node_ids: tuple[str, ...]
    edges: np.ndarray
    csr_adj: sp.csr_matrix
    col_norm_adj: sp.csr_matrix
    _index: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.csr_adj.indptr)

    def index_of(self, node_id: str) -> int:
        return self._index[node_id]

    def __contains__(self, node_id) -> bool:
        return node_id in self._index

    def edge_list(self) -> list[tuple[str, str]]:
        ids = self.node_ids
        return [(ids[i], ids[j]) for i, j in self.edges.tolist()]

    @property
    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update("\n".join(self.node_ids).encode())
        h.update(b"\0")
        h.update(np.ascontiguousarray(self.edges, dtype="<i8").tobytes())
        return h.hexdigest()


def _sorted_unique_pairs(pairs: np.ndarray, n: int) -> np.ndarray:
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    keep = lo != hi
    key = np.unique(lo[keep].astype(np.int64) * n + hi[keep])
    return np.stack([key // n, key % n], axis=1).astype(np.int64)


def build_graph(edge_list: Iterable[tuple[str, str]]) -> SharedGraph:
    """Build the deduplicated, self-loop-free largest connected component."""
    pairs = [(str(a), str(b)) for a, b in edge_list]
    if not pairs:
        raise InputError("edge list is empty")
    ids = sorted({x for p in pairs for x in p})
    index = {k: i for i, k in enumerate(ids)}
    raw = np.array([(index[a], index[b]) for a, b in pairs], dtype=np.int64)
    und = _sorted_unique_pairs(raw, len(ids))
    if und.shape[0] == 0:
        raise InputError("edge list contains only self-loops")

    n = len(ids)
    adj = sp.coo_matrix(
        (np.ones(2 * len(und)), (np.r_[und[:, 0], und[:, 1]], np.r_[und[:, 1], und[:, 0]])),
        shape=(n, n),
    ).tocsr()
    n_comp, comp = connected_components(adj, directed=False)
    sizes = np.bincount(comp, minlength=n_comp)
    # largest component; ties go to the component holding the smallest id
    first = np.full(n_comp, n, dtype=np.int64)
    np.minimum.at(first, comp, np.arange(n))
    best = int(np.lexsort((first, -sizes))[0])
    keep = np.flatnonzero(comp == best)
    if keep.size < 2:
        raise InputError("largest connected component has no edges")
    dropped = n - keep.size
    if dropped:
        log.info("dropped %d nodes outside the largest connected component", dropped)

    remap = np.full(n, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    both = (remap[und[:, 0]] >= 0) & (remap[und[:, 1]] >= 0)
    edges = remap[und[both]]
    node_ids = tuple(ids[i] for i in keep)
    return _assemble(node_ids, edges)


def _assemble(node_ids: tuple[str, ...], edges: np.ndarray) -> SharedGraph:
    n = len(node_ids)
    rows = np.r_[edges[:, 0], edges[:, 1]]
    cols = np.r_[edges[:, 1], edges[:, 0]]
    adj = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    adj.sort_indices()
    deg = np.diff(adj.indptr)
    if np.any(deg == 0):
        raise InputError("graph has isolated nodes after construction")
    colnorm = sp.csr_matrix(
        (adj.data / deg[adj.indices], adj.indices.copy(), adj.indptr.copy()), shape=(n, n)
    )
    for m in (adj, colnorm):
        m.indices = m.indices.astype(np.int64)
        m.indptr = m.indptr.astype(np.int64)
    return SharedGraph(
        n_nodes=n,
        node_ids=node_ids,
        edges=edges,
        csr_adj=adj,
        col_norm_adj=colnorm,
        _index={k: i for i, k in enumerate(node_ids)},
    )


def spmv_colnorm(graph: SharedGraph, x: np.ndarray) -> np.ndarray:
    """Return ``Â @ x`` for a vector (or an ``N x M`` block of column vectors)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != graph.n_nodes:
        raise InputError(f"vector length {x.shape[0]} != n_nodes {graph.n_nodes}")
    m = graph.col_norm_adj
    block = x.reshape(graph.n_nodes, -1)
    out = kernels.csr_matmat(m.indptr, m.indices, m.data, np.ascontiguousarray(block))
    return out.reshape(x.shape)


@dataclass(frozen=True)
class Neighborhoods:
    """Destination-sorted edge index over ``N(i) ∪ {i}`` used by attention layers.

    Edge ``e`` carries features from ``src[e]`` into ``dst[e]``; the edges of
    destination ``i`` occupy ``indptr[i]:indptr[i + 1]``. ``rev[e]`` is the
    index of the reversed edge, which exists because the structure is symmetric.
    """

    n_nodes: int
    indptr: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    rev: np.ndarray

    @property
    def n_edges(self) -> int:
        return int(self.src.shape[0])

    def tile(self, copies: int) -> "Neighborhoods":
        """Disjoint union of ``copies`` replicas (block-diagonal batching)."""
        if copies == 1:
            return self
        e = self.n_edges
        node_off = np.repeat(np.arange(copies, dtype=np.int64) * self.n_nodes, e)
        edge_off = np.repeat(np.arange(copies, dtype=np.int64) * e, e)
        indptr = np.r_[
            (self.indptr[:-1][None, :] + (np.arange(copies) * e)[:, None]).ravel(), copies * e
        ].astype(np.int64)
        return Neighborhoods(
            n_nodes=self.n_nodes * copies,
            indptr=indptr,
            src=np.tile(self.src, copies) + node_off,
            dst=np.tile(self.dst, copies) + node_off,
            rev=np.tile(self.rev, copies) + edge_off,
        )


def self_loop_neighborhoods(graph: SharedGraph) -> Neighborhoods:
    adj = graph.csr_adj + sp.identity(graph.n_nodes, format="csr")
    adj = sp.csr_matrix(adj)
    adj.sort_indices()
    indptr = adj.indptr.astype(np.int64)
    src = adj.indices.astype(np.int64)
    dst = np.repeat(np.arange(graph.n_nodes, dtype=np.int64), np.diff(indptr))
    key = dst * graph.n_nodes + src
    # edges are sorted by (dst, src), so the reversed key can be located by bisection
    rev = np.searchsorted(key, src * graph.n_nodes + dst).astype(np.int64)
    return Neighborhoods(graph.n_nodes, indptr, src, dst, rev)


# ---------------------------------------------------------------------------
# supermodules
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SupermoduleMap:
    n_modules: int
    module_names: tuple[str, ...]
    assignments: tuple[np.ndarray, ...]
    unassigned: np.ndarray

    @property
    def members(self) -> np.ndarray:
        """All member indices, module after module (overlaps repeated)."""
        return np.concatenate(self.assignments).astype(np.int64)

    @property
    def indptr(self) -> np.ndarray:
        sizes = [len(a) for a in self.assignments]
        return np.r_[0, np.cumsum(sizes)].astype(np.int64)

    @property
    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name, mem in zip(self.module_names, self.assignments):
            h.update(name.encode())
            h.update(b"\t")
            h.update(np.ascontiguousarray(mem, dtype="<i8").tobytes())
            h.update(b"\n")
        return h.hexdigest()

    def subset(self, names: Sequence[str]) -> list[int]:
        where = {n: i for i, n in enumerate(self.module_names)}
        missing = [n for n in names if n not in where]
        if missing:
            raise InputError(f"unknown pathway(s): {', '.join(missing)}")
        return [where[n] for n in names]


def load_supermodules(gmt_text: str, graph: SharedGraph) -> SupermoduleMap:
    """Parse GMT text; members missing from ``graph`` are dropped, empty sets removed."""
    names, assignments = [], []
    for lineno, line in enumerate(gmt_text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.rstrip("\r\n").split("\t")
        if len(fields) < 3:
            raise InputError(f"GMT line {lineno}: expected name, description and members")
        name, members = fields[0], fields[2:]
        idx = sorted({graph.index_of(m) for m in members if m and m in graph})
        if not idx:
            log.info("GMT line %d (%s): no members in graph, module dropped", lineno, name)
            continue
        names.append(name)
        assignments.append(np.array(idx, dtype=np.int64))
    if not names:
        raise InputError("no supermodule has members in the graph")
    if len(names) >= graph.n_nodes:
        raise InputError(f"{len(names)} supermodules for {graph.n_nodes} nodes; need fewer modules than nodes")
    covered = np.zeros(graph.n_nodes, dtype=bool)
    for a in assignments:
        covered[a] = True
    return SupermoduleMap(
        n_modules=len(names),
        module_names=tuple(names),
        assignments=tuple(assignments),
        unassigned=np.flatnonzero(~covered),
    )


# ---------------------------------------------------------------------------
# compounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CompoundSet:
    n_nodes: int
    compound_ids: tuple[str, ...]
    features: tuple[np.ndarray, ...]
    labels: np.ndarray | None = None

    def __post_init__(self):
        if len(self.features) != len(self.compound_ids):
            raise InputError("one target vector per compound required")
        for cid, f in zip(self.compound_ids, self.features):
            if f.size and (f[0] < 0 or f[-1] >= self.n_nodes or np.any(np.diff(f) <= 0)):
                raise InputError(f"compound {cid}: targets must be sorted unique indices < n_nodes")
        if self.labels is not None:
            if len(self.labels) != len(self.compound_ids):
                raise InputError("labels length differs from number of compounds")
            if not np.all(np.isin(self.labels, (0, 1))):
                raise InputError("labels must be 0 or 1")

    @property
    def n_compounds(self) -> int:
        return len(self.compound_ids)

    def dense(self, rows: Sequence[int] | None = None) -> np.ndarray:
        """Binary target matrix, one column per selected compound."""
        rows = range(self.n_compounds) if rows is None else rows
        out = np.zeros((self.n_nodes, len(rows)))
        for c, r in enumerate(rows):
            out[self.features[r], c] = 1.0
        return out

    def take(self, rows: Sequence[int]) -> "CompoundSet":
        rows = list(rows)
        return CompoundSet(
            n_nodes=self.n_nodes,
            compound_ids=tuple(self.compound_ids[r] for r in rows),
            features=tuple(self.features[r] for r in rows),
            labels=None if self.labels is None else self.labels[rows].copy(),
        )

    def target_hash(self, row: int) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.features[row], dtype="<i8").tobytes()).hexdigest()


def make_compounds(
    graph: SharedGraph,
    targets: dict[str, Iterable[str]],
    labels: dict[str, int] | None = None,
) -> CompoundSet:
    """Assemble a CompoundSet; targets outside the graph are dropped.

    With ``labels`` the compound set is exactly the labeled ids (a labeled
    compound without targets gets an empty vector); otherwise it is the set of
    ids appearing in ``targets``. Compounds are ordered by id.
    """
    ids = sorted(labels) if labels is not None else sorted(targets)
    feats = []
    n_dropped = 0
    for cid in ids:
        names = set(targets.get(cid, ()))
        idx = sorted(graph.index_of(t) for t in names if t in graph)
        n_dropped += len(names) - len(idx)
        feats.append(np.array(idx, dtype=np.int64))
    if n_dropped:
        log.info("dropped %d compound targets absent from the graph", n_dropped)
    lab = None if labels is None else np.array([int(labels[c]) for c in ids], dtype=np.int64)
    return CompoundSet(graph.n_nodes, tuple(ids), tuple(feats), lab)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _tsv_rows(path, n_fields: int, what: str):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != n_fields:
                raise InputError(f"{path}:{lineno}: {what} needs {n_fields} tab-separated fields")
            yield lineno, fields


def read_edge_list(path) -> list[tuple[str, str]]:
    return [(a, b) for _, (a, b) in _tsv_rows(path, 2, "edge")]


def read_targets(path) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for _, (cid, node) in _tsv_rows(path, 2, "compound target"):
        out.setdefault(cid, []).append(node)
    return out


def read_labels(path) -> dict[str, int]:
    out = {}
    for lineno, (cid, lab) in _tsv_rows(path, 2, "label"):
        if lab not in ("0", "1"):
            raise InputError(f"{path}:{lineno}: label must be 0 or 1, got {lab!r}")
        if cid in out and out[cid] != int(lab):
            raise InputError(f"{path}:{lineno}: conflicting labels for {cid}")
        out[cid] = int(lab)
    return out


def read_gmt(path, graph: SharedGraph) -> SupermoduleMap:
    return load_supermodules(Path(path).read_text(encoding="utf-8"), graph)


def write_edge_list(path, graph: SharedGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in graph.edge_list():
            fh.write(f"{a}\t{b}\n")


def write_targets(path, compounds: CompoundSet, node_ids: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cid, f in zip(compounds.compound_ids, compounds.features):
            for i in f.tolist():
                fh.write(f"{cid}\t{node_ids[i]}\n")


def write_labels(path, compounds: CompoundSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cid, lab in zip(compounds.compound_ids, compounds.labels.tolist()):
            fh.write(f"{cid}\t{lab}\n")


def write_gmt(path, modules: SupermoduleMap, node_ids: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name, mem in zip(modules.module_names, modules.assignments):
            fh.write("\t".join([name, "synthetic"] + [node_ids[i] for i in mem.tolist()]) + "\n")
