"""Synthetic planted-signal datasets and a brute-force attention oracle.

The generator builds a connected preferential-attachment graph, pathway-like
supermodules (breadth-first balls around random centres) and sparse compound
target sets. A compound is positive when its RWR-diffused mass on one
designated "signal" module exceeds a threshold chosen to hit the requested
positive ratio, so the label depends on the diffused, not the raw, targets.
By default no target lies within two hops of the signal module and every
other module sits at least four hops away from it, which keeps the signal
out of reach of a short receptive field on raw target vectors.
"""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass

import numpy as np

from gaa.diffusion import rwr_steady_state
from gaa.errors import InputError
from gaa.graph import CompoundSet, SharedGraph, SupermoduleMap, build_graph, load_supermodules


@dataclass(frozen=True)
class SynthSpec:
    n_nodes: int = 200
    attach: int = 1  # edges added per new node; mean degree ~ 2 * attach
    n_modules: int = 10
    module_size: tuple[int, int] = (6, 14)
    n_compounds: int = 300
    targets_per_compound: int | None = 3  # None: 1 + Poisson draw around target_density * n_nodes
    target_density: float = 0.014
    positive_ratio: float = 0.102
    signal_alpha: float = 0.3
    signal_module: int = 0
    margin: float = 0.15  # candidates scoring within threshold*(1 -/+ margin) are rejected
    noise_rate: float = 0.0
    exclude_hops: int | None = 2  # targets avoid nodes this close to the signal module
    module_gap: int | None = 4  # other modules use only nodes at least this far from it
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 3 or self.attach < 1 or self.attach >= self.n_nodes:
            raise InputError("need n_nodes >= 3 and 1 <= attach < n_nodes")
        if not 1 <= self.n_modules < self.n_nodes:
            raise InputError("need 1 <= n_modules < n_nodes")
        if not 0 <= self.signal_module < self.n_modules:
            raise InputError("signal_module out of range")
        lo, hi = self.module_size
        if not 1 <= lo <= hi <= self.n_nodes:
            raise InputError("bad module_size range")
        if not 0 < self.positive_ratio < 1:
            raise InputError("positive_ratio must lie in (0, 1)")
        n_pos = int(round(self.positive_ratio * self.n_compounds))
        if n_pos < 1 or n_pos >= self.n_compounds:
            raise InputError("spec yields a single class")
        if not 0 < self.target_density <= 1 or not 0 <= self.noise_rate <= 0.5:
            raise InputError("target_density in (0, 1], noise_rate in [0, 0.5]")
        if not 0 < self.signal_alpha <= 1:
            raise InputError("signal_alpha must lie in (0, 1]")
        if not 0 <= self.margin < 1:
            raise InputError("margin must lie in [0, 1)")
        if self.targets_per_compound is not None and self.targets_per_compound < 1:
            raise InputError("targets_per_compound must be None or >= 1")
        if self.module_gap is not None and self.module_gap < 1:
            raise InputError("module_gap must be None or >= 1")
        if self.exclude_hops is not None and self.exclude_hops < 0:
            raise InputError("exclude_hops must be None or >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SynthData:
    graph: SharedGraph
    modules: SupermoduleMap
    compounds: CompoundSet
    scores: np.ndarray  # diffused mass on the signal module
    threshold: float
    clean_labels: np.ndarray  # labels before noise

    def rule_labels(self) -> np.ndarray:
        return (self.scores > self.threshold).astype(np.int64)


MAX_DRAW_ROUNDS = 200


def _node_id(i: int, n: int) -> str:
    return f"G{i:0{len(str(n - 1))}d}"


def _preferential_attachment(n: int, m: int, rng) -> list[tuple[int, int]]:
    edges = [(i, j) for i in range(m + 1) for j in range(i + 1, m + 1)]
    pool = [v for e in edges for v in e]  # each node appears once per incident edge
    for new in range(m + 1, n):
        chosen: set[int] = set()
        while len(chosen) < m:
            chosen.add(pool[int(rng.integers(len(pool)))])
        for t in sorted(chosen):
            edges.append((t, new))
            pool.extend((t, new))
    return edges


def _hops_from(adj: list[list[int]], sources) -> np.ndarray:
    """Breadth-first hop distance from the nearest source node."""
    dist = np.full(len(adj), -1, dtype=np.int64)
    queue = deque(int(v) for v in sources)
    dist[list(queue)] = 0
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if dist[w] < 0:
                dist[w] = dist[v] + 1
                queue.append(w)
    return dist


def _ball(adj: list[list[int]], centre: int, size: int, allowed=None) -> list[int]:
    seen = {centre}
    order = [centre]
    queue = deque([centre])
    while queue and len(order) < size:
        v = queue.popleft()
        for w in adj[v]:
            if allowed is not None and not allowed[w]:
                continue
            if w not in seen:
                seen.add(w)
                order.append(w)
                queue.append(w)
                if len(order) >= size:
                    break
    return order


def generate(spec: SynthSpec = SynthSpec()) -> SynthData:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_nodes
    raw_edges = _preferential_attachment(n, spec.attach, rng)
    ids = [_node_id(i, n) for i in range(n)]
    graph = build_graph([(ids[a], ids[b]) for a, b in raw_edges])
    if graph.n_nodes != n:
        raise InputError("generated graph is not connected")

    adj = [graph.csr_adj.indices[graph.csr_adj.indptr[i]:graph.csr_adj.indptr[i + 1]].tolist()
           for i in range(n)]
    # the signal module first, then distractors kept module_gap hops away from it
    size = int(rng.integers(spec.module_size[0], spec.module_size[1] + 1))
    balls = {spec.signal_module: _ball(adj, int(rng.integers(n)), size)}
    allowed = None
    if spec.module_gap is not None:
        allowed = _hops_from(adj, balls[spec.signal_module]) >= spec.module_gap
    free = np.arange(n) if allowed is None else np.flatnonzero(allowed)
    others = [k for k in range(spec.n_modules) if k != spec.signal_module]
    if free.size < len(others):
        raise InputError(f"module_gap={spec.module_gap} leaves {free.size} nodes for {len(others)} modules")
    for k, c in zip(others, rng.choice(free, size=len(others), replace=False)):
        size = int(rng.integers(spec.module_size[0], spec.module_size[1] + 1))
        balls[k] = _ball(adj, int(c), size, allowed)
    lines = ["\t".join([f"PATHWAY_{k:02d}", "synthetic"] + [graph.node_ids[v] for v in balls[k]])
             for k in range(spec.n_modules)]
    modules = load_supermodules("\n".join(lines) + "\n", graph)

    signal = modules.assignments[spec.signal_module]
    pool = np.arange(n)
    if spec.exclude_hops is not None:
        banned = np.zeros(n, dtype=bool)
        banned[signal] = True
        for _ in range(spec.exclude_hops):
            banned[[w for v in np.flatnonzero(banned) for w in adj[v]]] = True
        pool = np.flatnonzero(~banned)
        if pool.size == 0:
            raise InputError("exclude_hops leaves no node available as a target")
    mean_targets = max(1.0, spec.target_density * n)
    n_pos = int(round(spec.positive_ratio * spec.n_compounds))
    n_neg = spec.n_compounds - n_pos

    def draw(count):
        feats = []
        for _ in range(count):
            if spec.targets_per_compound is None:
                k = min(pool.size, 1 + int(rng.poisson(mean_targets - 1.0)))
            else:
                k = min(pool.size, spec.targets_per_compound)
            feats.append(np.sort(rng.choice(pool, size=k, replace=False)).astype(np.int64))
        x0 = CompoundSet(n, tuple(str(i) for i in range(count)), tuple(feats)).dense()
        diffused = rwr_steady_state(graph, x0, spec.signal_alpha, tol=1e-12)
        return feats, diffused[signal].sum(axis=0)

    # the threshold is the positive-ratio quantile of a first unfiltered draw
    feats, scores = draw(spec.n_compounds)
    ranked = np.sort(scores)[::-1]
    threshold = 0.5 * (ranked[n_pos - 1] + ranked[n_pos])
    hi, lo = threshold * (1 + spec.margin), threshold * (1 - spec.margin)
    kept_f, kept_s = [], []
    got_pos = got_neg = 0
    for _ in range(MAX_DRAW_ROUNDS):
        for f, sc in zip(feats, scores):
            if sc > hi and got_pos < n_pos:
                got_pos += 1
            elif sc < lo and got_neg < n_neg:
                got_neg += 1
            else:
                continue
            kept_f.append(f)
            kept_s.append(sc)
        if got_pos == n_pos and got_neg == n_neg:
            break
        feats, scores = draw(spec.n_compounds)
    else:
        raise InputError(
            f"could not fill both classes outside the band {lo:.3g}..{hi:.3g} around threshold "
            f"{threshold:.3g} in {MAX_DRAW_ROUNDS} draws; lower margin or raise target_density"
        )
    feats, scores = kept_f, np.array(kept_s)

    width = len(str(spec.n_compounds - 1))
    cids = tuple(f"C{i:0{width}d}" for i in range(spec.n_compounds))
    clean = (scores > threshold).astype(np.int64)
    labels = clean.copy()
    if spec.noise_rate > 0:
        flip = rng.random(labels.size) < spec.noise_rate
        labels[flip] = 1 - labels[flip]
    if labels.min() == labels.max():
        raise InputError("generated labels contain a single class")
    compounds = CompoundSet(n, cids, tuple(feats), labels)
    return SynthData(graph, modules, compounds, scores, float(threshold), clean)


def dense_reference_gat(W: np.ndarray, att: np.ndarray, h: np.ndarray, graph: SharedGraph) -> np.ndarray:
    """Brute-force multi-head attention layer with an explicit ``N x N`` coefficient matrix.

    Same parameter layout as :func:`gaa.model.gat_layer`; neighbourhoods
    include the node itself. Returns ``ELU(concat_k sum_j a_ij^k W^k h_j)``.
    """
    n = graph.n_nodes
    if n > 50:
        raise InputError("dense reference GAT is limited to 50 nodes")
    adj = graph.csr_adj.toarray() > 0
    np.fill_diagonal(adj, True)
    n_heads, two_f = att.shape
    f = two_f // 2
    heads = []
    for k in range(n_heads):
        wk = W[k * f:(k + 1) * f]
        proj = h @ wk.T
        a_dst, a_src = att[k, :f], att[k, f:]
        logits = np.full((n, n), -np.inf)
        for i in range(n):
            for j in range(n):
                if adj[i, j]:
                    e = proj[i] @ a_dst + proj[j] @ a_src
                    logits[i, j] = e if e > 0 else 0.2 * e
        logits -= logits.max(axis=1, keepdims=True)
        coef = np.exp(logits)
        coef /= coef.sum(axis=1, keepdims=True)
        heads.append(coef @ proj)
    out = np.concatenate(heads, axis=1)
    return np.where(out > 0, out, np.expm1(np.minimum(out, 0.0)))


def dense_attention_matrix(W: np.ndarray, att: np.ndarray, h: np.ndarray, graph: SharedGraph, head: int = 0) -> np.ndarray:
    """The ``N x N`` coefficient matrix of one head (rows sum to one)."""
    n = graph.n_nodes
    adj = graph.csr_adj.toarray() > 0
    np.fill_diagonal(adj, True)
    f = att.shape[1] // 2
    proj = h @ W[head * f:(head + 1) * f].T
    e = (proj @ att[head, :f])[:, None] + (proj @ att[head, f:])[None, :]
    e = np.where(e > 0, e, 0.2 * e)
    e = np.where(adj, e, -np.inf)
    e -= e.max(axis=1, keepdims=True)
    c = np.exp(e)
    return c / c.sum(axis=1, keepdims=True)
