"""Stratified splits, class re-weighting, Adam and the early-stopped training loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from gaa import metrics
from gaa import model as gm
from gaa.errors import DivergenceError, InputError

log = logging.getLogger(__name__)

MIN_PER_CLASS = 10


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise InputError("split ratios are three non-negative numbers")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise InputError(f"split ratios must sum to 1, got {sum(self.ratios)}")


def stratified_split(labels, spec: SplitSpec = SplitSpec()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class shuffled partition into sorted (train, val, test) index arrays."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(spec.seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < MIN_PER_CLASS:
            raise InputError(
                f"class {cls} has {idx.size} samples; stratified 3-way splitting needs at least {MIN_PER_CLASS}"
            )
        idx = rng.permutation(idx)
        n_train = int(round(spec.ratios[0] * idx.size))
        n_val = int(round(spec.ratios[1] * idx.size))
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    return tuple(np.sort(np.concatenate(p)).astype(np.int64) for p in parts)


def class_weights(labels) -> np.ndarray:
    """``w_c = n / (2 n_c)`` so that the sample-weighted mean weight is 1."""
    labels = np.asarray(labels)
    counts = np.array([np.sum(labels == 0), np.sum(labels == 1)], dtype=np.float64)
    if np.any(counts == 0):
        raise InputError("class weights need both classes in the training split")
    return labels.size / (2.0 * counts)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 500
    patience: int = 30
    gamma: float = 0.5
    batch_size: int = 0  # 0 = full batch
    seed: int = 0
    class_weight_mode: str = "inverse_frequency"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise InputError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.learning_rate <= 0 or self.eps <= 0:
            raise InputError("learning_rate and eps must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InputError("Adam betas must lie in [0, 1)")
        if self.max_epochs < 1 or self.patience < 0 or self.batch_size < 0:
            raise InputError("max_epochs >= 1, patience >= 0, batch_size >= 0 required")
        if self.class_weight_mode not in ("inverse_frequency", "none"):
            raise InputError("class_weight_mode is 'inverse_frequency' or 'none'")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; returns new parameter and state objects."""
    step = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise InputError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * g * g
        new_m[name], new_v[name] = m, v
        new_p[name] = p - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return new_p, AdamState(step, new_m, new_v)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    best_epoch: int
    best_val_f1: float
    log: list[dict]
    class_weights: np.ndarray
    stopped_early: bool


def _batches(order: np.ndarray, size: int):
    if size <= 0 or size >= order.size:
        yield order
        return
    for lo in range(0, order.size, size):
        yield order[lo:lo + size]


def train(
    xg: np.ndarray,
    labels: np.ndarray,
    split: tuple[np.ndarray, np.ndarray, np.ndarray],
    struct: gm.Structure,
    model_cfg: gm.ModelConfig,
    cfg: TrainConfig,
    init: dict[str, np.ndarray] | None = None,
    on_epoch=None,
) -> TrainResult:
    """Optimise ``Lc + gamma * Lr`` with Adam, selecting the epoch with the best validation F1.

    ``xg`` is the ``(M, N, F')`` augmented feature block for all compounds and
    ``split`` indexes into it. Ties in validation F1 are broken by the lower
    validation classification loss. ``on_epoch(record)`` is called after
    every epoch.
    """
    train_idx, val_idx, _ = split
    labels = np.asarray(labels, dtype=np.int64)
    if cfg.class_weight_mode == "inverse_frequency":
        weights = class_weights(labels[train_idx])
    else:
        weights = np.ones(2)
    if val_idx.size == 0:
        raise InputError("validation split is empty")

    params = init if init is not None else gm.init_params(model_cfg, cfg.seed)
    gm.check_params(params, model_cfg)
    state = AdamState()
    rng = np.random.default_rng(cfg.seed)

    best = {"f1": -1.0, "loss": np.inf, "epoch": 0, "params": params}
    records: list[dict] = []
    bad_epochs = 0
    stopped = False
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(train_idx)
        sums = np.zeros(3)
        for batch in _batches(order, cfg.batch_size):
            tape, P, out = gm.forward(params, xg[batch], struct, model_cfg)
            total, lc, lr = gm.loss(out, labels[batch], weights, cfg.gamma)
            vals = np.array([total.value[0, 0], lc.value[0, 0], lr.value[0, 0]])
            if not np.all(np.isfinite(vals)):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}; best checkpoint is from epoch {best['epoch']}",
                    checkpoint=best["params"],
                )
            tape.backward(total)
            grads = {k: P[k].grad if P[k].grad is not None else np.zeros_like(v) for k, v in params.items()}
            params, state = adam_step(params, grads, state, cfg)
            sums += vals * batch.size
        sums /= train_idx.size

        probs, _ = gm.predict(params, xg[val_idx], struct, model_cfg)
        if not np.all(np.isfinite(probs)):
            raise DivergenceError(f"non-finite predictions at epoch {epoch}", checkpoint=best["params"])
        report = metrics.evaluate(probs[:, 1], labels[val_idx])
        yv = labels[val_idx]
        val_loss = float(np.mean(weights[yv] * -np.log(np.clip(probs[np.arange(yv.size), yv], 1e-300, None))))
        rec = {
            "epoch": epoch,
            "train_loss": float(sums[0]),
            "lc": float(sums[1]),
            "lr_loss": float(sums[2]),
            "val_acc": report.acc,
            "val_f1": report.f1,
            "val_aupr": report.aupr,
            "val_loss": val_loss,
        }
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        log.debug("epoch %d %s", epoch, rec)

        if report.f1 > best["f1"] or (report.f1 == best["f1"] and val_loss < best["loss"]):
            best = {"f1": report.f1, "loss": val_loss, "epoch": epoch, "params": params}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                stopped = True
                break

    return TrainResult(
        params=best["params"],
        best_epoch=best["epoch"],
        best_val_f1=best["f1"],
        log=records,
        class_weights=weights,
        stopped_early=stopped,
    )
