"""Graph attentional autoencoder with a pathway-pooled embedding and an MLP head.

Parameters live in a flat ``{name: ndarray}`` dict. Every forward pass builds
a fresh :class:`~gaa.autodiff.Tape`; a minibatch of ``B`` compounds is run as
the disjoint union of ``B`` copies of the shared graph, so node rows are
ordered compound-major (rows ``b*N:(b+1)*N`` belong to compound ``b``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from gaa import autodiff as ad
from gaa.errors import InputError
from gaa.graph import Neighborhoods, SharedGraph, SupermoduleMap, self_loop_neighborhoods

AGGREGATORS = ("sum", "mean", "max")


@dataclass(frozen=True)
class ModelConfig:
    n_nodes: int
    n_modules: int
    in_width: int
    heads: int = 4
    head_width: int = 16
    gat2_width: int = 16
    dec_width: int = 16
    mlp_hidden: int = 64
    aggregator: str = "mean"

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise InputError(f"aggregator must be one of {AGGREGATORS}")
        for name in ("n_nodes", "n_modules", "in_width", "heads", "head_width",
                     "gat2_width", "dec_width", "mlp_hidden"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
    k, f1, c = cfg.heads, cfg.head_width, cfg.gat2_width
    n, d, fp, fd, h = cfg.n_nodes, cfg.n_modules, cfg.in_width, cfg.dec_width, cfg.mlp_hidden
    return {
        # head k projects with rows k*f1:(k+1)*f1; attention row k is [dst half | src half]
        "enc.gat1.W": (k * f1, fp),
        "enc.gat1.att": (k, 2 * f1),
        "enc.gat2.W": (c, k * f1),
        "enc.gat2.att": (1, 2 * c),
        "enc.pool_w": (c, 1),
        "enc.pool_b": (1, d),
        "dec.W1": (n, d),
        "dec.b1": (1, n),
        "dec.gat.W": (fd, 1),
        "dec.gat.att": (1, 2 * fd),
        "dec.W2": (fp, fd),
        "mlp.W1": (h, d),
        "mlp.b1": (1, h),
        "mlp.W2": (2, h),
        "mlp.b2": (1, 2),
    }


_BIASES = {"enc.pool_b", "dec.b1", "mlp.b1", "mlp.b2"}


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in param_shapes(cfg).items():
        if name in _BIASES:
            out[name] = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            out[name] = rng.uniform(-limit, limit, size=shape)
    return out


def check_params(params: dict[str, np.ndarray], cfg: ModelConfig) -> None:
    want = param_shapes(cfg)
    if set(params) != set(want):
        raise InputError(f"parameter names differ from config: {sorted(set(params) ^ set(want))}")
    for name, shape in want.items():
        if params[name].shape != shape:
            raise InputError(f"parameter {name} has shape {params[name].shape}, expected {shape}")


@dataclass
class Structure:
    """Graph-derived index arrays, with per-batch-size tiles memoised."""

    graph: SharedGraph
    modules: SupermoduleMap
    nb: Neighborhoods = field(init=False)

    def __post_init__(self):
        self.nb = self_loop_neighborhoods(self.graph)
        self._tiles: dict[int, tuple] = {}

    @property
    def n_nodes(self) -> int:
        return self.graph.n_nodes

    @property
    def n_modules(self) -> int:
        return self.modules.n_modules

    def tiles(self, batch: int):
        """(neighborhoods, pooled member rows, pooled segment pointer, per-compound row pointer)."""
        if batch not in self._tiles:
            n = self.n_nodes
            members = self.modules.members
            ptr = self.modules.indptr
            m = members.size
            tiled_members = (members[None, :] + (np.arange(batch) * n)[:, None]).ravel()
            tiled_ptr = np.r_[(ptr[:-1][None, :] + (np.arange(batch) * m)[:, None]).ravel(), batch * m]
            rows_ptr = np.arange(batch + 1, dtype=np.int64) * n
            self._tiles[batch] = (self.nb.tile(batch), tiled_members.astype(np.int64),
                                  tiled_ptr.astype(np.int64), rows_ptr)
        return self._tiles[batch]


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def gat_layer(W: ad.Tensor, att: ad.Tensor, h: ad.Tensor, nb: Neighborhoods) -> ad.Tensor:
    """Multi-head graph attention over ``N(i) ∪ {i}`` followed by ELU.

    ``W`` stacks the per-head projections row-wise (``K*F_out x F_in``) and
    ``att`` holds one ``[dst | src]`` attention vector per head (``K x 2*F_out``).
    """
    n_heads, two_f = att.shape
    width = two_f // 2
    if W.shape[0] != n_heads * width:
        raise ValueError(f"projection {W.shape} does not match attention {att.shape}")
    wh = ad.matmul(h, ad.transpose(W))
    score_dst = ad.head_dot(wh, ad.col_slice(att, 0, width))
    score_src = ad.head_dot(wh, ad.col_slice(att, width, two_f))
    logits = ad.leaky_relu(ad.add(ad.row_select(score_dst, nb.dst), ad.row_select(score_src, nb.src)))
    coef = ad.segment_softmax(logits, nb.indptr)
    return ad.elu(ad.edge_aggregate(coef, wh, nb))


def attention_coefficients(W: np.ndarray, att: np.ndarray, h: np.ndarray, nb: Neighborhoods) -> np.ndarray:
    """Per-edge attention weights (``E x K``) of one layer, without recording gradients."""
    tape = ad.Tape()
    n_heads, two_f = att.shape
    width = two_f // 2
    wh = h @ W.T
    Wt = tape.constant(wh)
    a = tape.constant(att)
    sd = ad.head_dot(Wt, ad.col_slice(a, 0, width))
    ss = ad.head_dot(Wt, ad.col_slice(a, width, two_f))
    logits = ad.leaky_relu(ad.add(ad.row_select(sd, nb.dst), ad.row_select(ss, nb.src)))
    return ad.segment_softmax(logits, nb.indptr).value


def sup_pool(h: ad.Tensor, members: np.ndarray, indptr: np.ndarray, aggregator: str) -> ad.Tensor:
    """Aggregate member-node rows into one row per supermodule."""
    gathered = ad.row_select(h, members)
    if aggregator == "sum":
        return ad.segment_sum(gathered, indptr)
    if aggregator == "mean":
        return ad.segment_mean(gathered, indptr)
    if aggregator == "max":
        return ad.segment_max(gathered, indptr)
    raise InputError(f"unknown aggregator {aggregator!r}")


@dataclass
class Outputs:
    z: ad.Tensor  # B x D
    logits: ad.Tensor  # B x 2
    probs: ad.Tensor  # B x 2
    recon: ad.Tensor | None  # (B*N) x F'
    x: ad.Tensor  # (B*N) x F'
    row_ptr: np.ndarray
    tape: ad.Tape  # keeps the recording alive for as long as the outputs are used


def encode(P: dict, x: ad.Tensor, struct: Structure, batch: int, aggregator: str) -> ad.Tensor:
    nb, members, mptr, _ = struct.tiles(batch)
    h1 = gat_layer(P["enc.gat1.W"], P["enc.gat1.att"], x, nb)
    h2 = gat_layer(P["enc.gat2.W"], P["enc.gat2.att"], h1, nb)
    pooled = sup_pool(h2, members, mptr, aggregator)
    zcol = ad.matmul(pooled, P["enc.pool_w"])
    z = ad.reshape(zcol, (batch, struct.n_modules))
    return ad.broadcast_add_bias(z, P["enc.pool_b"])


def decode(P: dict, z: ad.Tensor, struct: Structure) -> ad.Tensor:
    """Lift each embedding to one scalar per node, run one attention layer, map to ``F'``."""
    batch = z.shape[0]
    nb = struct.tiles(batch)[0]
    lifted = ad.broadcast_add_bias(ad.matmul(z, ad.transpose(P["dec.W1"])), P["dec.b1"])
    h0 = ad.reshape(lifted, (batch * struct.n_nodes, 1))
    hd = gat_layer(P["dec.gat.W"], P["dec.gat.att"], h0, nb)
    return ad.matmul(hd, ad.transpose(P["dec.W2"]))


def classify_logits(P: dict, z: ad.Tensor) -> ad.Tensor:
    hidden = ad.elu(ad.broadcast_add_bias(ad.matmul(z, ad.transpose(P["mlp.W1"])), P["mlp.b1"]))
    return ad.broadcast_add_bias(ad.matmul(hidden, ad.transpose(P["mlp.W2"])), P["mlp.b2"])


def stack_features(xg: np.ndarray) -> np.ndarray:
    """``(B, N, F')`` block of augmented features to ``(B*N, F')`` rows."""
    xg = np.asarray(xg, dtype=np.float64)
    if xg.ndim == 2:
        xg = xg[None]
    return np.ascontiguousarray(xg.reshape(-1, xg.shape[2]))


def forward(
    params: dict[str, np.ndarray],
    xg: np.ndarray,
    struct: Structure,
    cfg: ModelConfig,
    tape: ad.Tape | None = None,
    with_decoder: bool = True,
    trainable: bool = True,
) -> tuple[ad.Tape, dict[str, ad.Tensor], Outputs]:
    """Full pass for a ``(B, N, F')`` feature block."""
    xg = np.asarray(xg, dtype=np.float64)
    if xg.ndim == 2:
        xg = xg[None]
    batch, n, width = xg.shape
    if n != struct.n_nodes or width != cfg.in_width:
        raise InputError(f"features {xg.shape[1:]} do not match model ({struct.n_nodes}, {cfg.in_width})")
    tape = tape or ad.Tape()
    make = tape.variable if trainable else tape.constant
    P = {name: make(v, name=name) for name, v in params.items()}
    x = tape.constant(stack_features(xg), name="xg")
    z = encode(P, x, struct, batch, cfg.aggregator)
    logits = classify_logits(P, z)
    probs = ad.softmax_rows(logits)
    recon = decode(P, z, struct) if with_decoder else None
    return tape, P, Outputs(z, logits, probs, recon, x, struct.tiles(batch)[3], tape)


def loss(out: Outputs, labels, class_weights, gamma: float) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """Total ``Lc + gamma * Lr`` with both terms averaged over the batch.

    Returns ``(total, classification, reconstruction)`` as ``1 x 1`` tensors.
    """
    if not 0.0 <= gamma <= 1.0:
        raise InputError(f"gamma must lie in [0, 1], got {gamma}")
    lc = ad.cross_entropy_weighted(out.logits, labels, class_weights)
    if out.recon is None:
        raise ValueError("loss needs the decoder output")
    lr = ad.mean(ad.l2_loss(out.recon, out.x, out.row_ptr))
    return ad.add(lc, ad.scale(lr, gamma)), lc, lr


def predict(
    params: dict[str, np.ndarray],
    xg: np.ndarray,
    struct: Structure,
    cfg: ModelConfig,
    batch_size: int = 64,
) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities ``(M, 2)`` and embeddings ``(M, D)`` for ``(M, N, F')`` features."""
    xg = np.asarray(xg, dtype=np.float64)
    probs, embs = [], []
    for lo in range(0, xg.shape[0], batch_size):
        _, _, out = forward(params, xg[lo:lo + batch_size], struct, cfg,
                            with_decoder=False, trainable=False)
        probs.append(out.probs.value)
        embs.append(out.z.value)
    if not probs:
        return np.zeros((0, 2)), np.zeros((0, struct.n_modules))
    return np.concatenate(probs), np.concatenate(embs)


def classify(params: dict[str, np.ndarray], z: np.ndarray) -> np.ndarray:
    """Softmax class probabilities ``(p0, p1)`` per embedding row."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    tape = ad.Tape()
    P = {k: tape.constant(params[k]) for k in ("mlp.W1", "mlp.b1", "mlp.W2", "mlp.b2")}
    return ad.softmax_rows(classify_logits(P, tape.constant(z))).value
