"""Command-line pipeline: ``synth``, ``diffuse``, ``train``, ``evaluate``, ``predict``, ``report``.

Every subcommand accepts ``--config FILE`` (JSON) plus flags; flags win over
the file, and ``--set section.key=value`` reaches any field that has no
dedicated flag. The resolved configuration is written next to the outputs.

Exit status: 0 on success, 2 for invalid input, 3 for numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np

from gaa import __version__, checkpoint, metrics
from gaa import model as gm
from gaa import training as T
from gaa.baseline import DEFAULT_ALPHA, DEFAULT_L2, LinearModel, baseline_features, baseline_predict, fit_logistic
from gaa.diffusion import DEFAULT_MAX_ITER, DEFAULT_TOL, AlphaGrid, FeatureCache, augment_features
from gaa.errors import GaaError, InputError, NumericalError
from gaa.graph import (
    CompoundSet,
    SharedGraph,
    SupermoduleMap,
    build_graph,
    load_supermodules,
    make_compounds,
    read_edge_list,
    read_labels,
    read_targets,
    write_edge_list,
    write_gmt,
    write_labels,
    write_targets,
)
from gaa.testkit import SynthSpec, generate

log = logging.getLogger("gaa")

EXIT_INPUT = 2
EXIT_NUMERICAL = 3

DEFAULTS: dict = {
    "edges": None,
    "targets": None,
    "labels": None,
    "gmt": None,
    "cache_dir": None,
    "out_dir": "gaa_out",
    "alphas": "0.1:0.9:0.1",
    "tol": DEFAULT_TOL,
    "max_iter": DEFAULT_MAX_ITER,
    "model_type": "gaa",
    "seed": 0,
    "split": {"ratios": [0.8, 0.1, 0.1]},
    "model": {"heads": 4, "head_width": 16, "gat2_width": 16, "dec_width": 16, "mlp_hidden": 64, "aggregator": "mean"},
    "train": {"learning_rate": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "max_epochs": 500,
              "patience": 30, "gamma": 0.5, "batch_size": 0, "class_weight_mode": "inverse_frequency"},
    "baseline": {"alpha": DEFAULT_ALPHA, "l2": DEFAULT_L2},
}

PATH_KEYS = ("edges", "targets", "labels", "gmt", "cache_dir", "out_dir")
CKPT_NAME = "model.ckpt"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise InputError(f"unknown config key {where + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise InputError(f"config key {where + k!r} must be an object")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def _parse_set(item: str) -> tuple[list[str], object]:
    if "=" not in item:
        raise InputError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then ``--set`` items, then dedicated flags."""
    cfg = copy.deepcopy(DEFAULTS)
    cfg_file = getattr(args, "config", None)
    if cfg_file:
        path = Path(cfg_file)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
        # relative data paths in a config file are relative to that file
        for k in PATH_KEYS:
            if isinstance(data.get(k), str):
                data[k] = str((path.parent / data[k]).resolve())
        cfg = _merge(cfg, data)
    for item in getattr(args, "set", None) or []:
        keys, value = _parse_set(item)
        cur = {}
        node = cur
        for k in keys[:-1]:
            node[k] = {}
            node = node[k]
        node[keys[-1]] = value
        cfg = _merge(cfg, cur)
    flag_map = {"edges": "edges", "targets": "targets", "features": "targets", "labels": "labels",
                "gmt": "gmt", "cache_dir": "cache_dir", "out": "out_dir", "alphas": "alphas", "tol": "tol",
                "seed": "seed", "model": "model_type"}
    for attr, key in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            cfg[key] = str(Path(val).resolve()) if key in PATH_KEYS else val
    for k in PATH_KEYS:
        if cfg[k] is not None:
            cfg[k] = str(Path(cfg[k]).resolve())
    AlphaGrid.parse(str(cfg["alphas"]))  # validate early
    if cfg["model_type"] not in ("gaa", "baseline"):
        raise InputError("model must be 'gaa' or 'baseline'")
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    for k in keys:
        if not cfg.get(k):
            raise InputError(f"missing required path {k!r} (flag or config)")
        if k != "out_dir" and k != "cache_dir" and not Path(cfg[k]).exists():
            raise InputError(f"{k} file {cfg[k]} does not exist")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _train_config(cfg: dict) -> T.TrainConfig:
    return T.TrainConfig(seed=int(cfg["seed"]), **cfg["train"])


# ---------------------------------------------------------------------------
# data loading
# ---------------------------------------------------------------------------


def _load_graph(cfg: dict) -> SharedGraph:
    _require(cfg, "edges")
    return build_graph(read_edge_list(cfg["edges"]))


def _load_modules(cfg: dict, graph: SharedGraph) -> SupermoduleMap:
    _require(cfg, "gmt")
    return load_supermodules(Path(cfg["gmt"]).read_text(), graph)


def _load_compounds(cfg: dict, graph: SharedGraph, labeled: bool = True) -> CompoundSet:
    _require(cfg, "targets")
    labels = None
    if labeled:
        _require(cfg, "labels")
        labels = read_labels(cfg["labels"])
    return make_compounds(graph, read_targets(cfg["targets"]), labels)


def _features(cfg: dict, graph: SharedGraph, compounds: CompoundSet, grid: AlphaGrid) -> np.ndarray:
    cache = FeatureCache(cfg["cache_dir"]) if cfg.get("cache_dir") else None
    return augment_features(graph, compounds, grid, float(cfg["tol"]), int(cfg["max_iter"]), cache=cache).values


def _check_hashes(meta: dict, graph: SharedGraph, modules: SupermoduleMap | None) -> None:
    if meta["graph_hash"] != graph.content_hash:
        raise InputError("checkpoint was trained on a different graph (content hash mismatch)")
    if modules is not None and meta.get("modules_hash") not in (None, modules.content_hash):
        raise InputError("checkpoint was trained with different supermodules (content hash mismatch)")


def _model_config(cfg: dict, graph: SharedGraph, modules: SupermoduleMap, grid: AlphaGrid) -> gm.ModelConfig:
    return gm.ModelConfig(graph.n_nodes, modules.n_modules, len(grid), **cfg["model"])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    over = {}
    for item in args.set or []:
        keys, value = _parse_set(item)
        if len(keys) != 1:
            raise InputError("synth --set takes flat SynthSpec fields")
        over[keys[0]] = tuple(value) if isinstance(value, list) else value
    if args.seed is not None:
        over["seed"] = args.seed
    try:
        spec = SynthSpec(**over)
    except TypeError as exc:
        raise InputError(str(exc)) from None
    data = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g, comp = data.graph, data.compounds
    write_edge_list(out / "edges.tsv", g)
    write_targets(out / "targets.tsv", comp, g.node_ids)
    write_labels(out / "labels.tsv", comp)
    write_gmt(out / "modules.gmt", data.modules, g.node_ids)
    _write_json(out / "synth_spec.json", spec.to_dict())
    _write_json(out / "config.json", {"edges": "edges.tsv", "targets": "targets.tsv",
                                      "labels": "labels.tsv", "gmt": "modules.gmt"})
    print(f"wrote {g.n_nodes} nodes, {g.n_edges} edges, {data.modules.n_modules} modules, "
          f"{comp.n_compounds} compounds ({int(comp.labels.sum())} positive) to {out}")
    return 0


def cmd_diffuse(args) -> int:
    cfg = resolve_config(args)
    _require(cfg, "edges", "targets")
    if not cfg.get("cache_dir"):
        if args.out is None:
            raise InputError("diffuse needs --out (the feature cache directory)")
        cfg["cache_dir"] = cfg["out_dir"]
    graph = _load_graph(cfg)
    compounds = make_compounds(graph, read_targets(cfg["targets"]))
    grid = AlphaGrid.parse(str(cfg["alphas"]))
    _features(cfg, graph, compounds, grid)
    _write_json(Path(cfg["cache_dir"]) / "diffuse_config.json", cfg)
    print(f"cached {compounds.n_compounds} x {len(grid)} steady states in {cfg['cache_dir']}")
    return 0


def _split_ids(compounds: CompoundSet, cfg: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    spec = T.SplitSpec(tuple(cfg["split"]["ratios"]), seed=int(cfg["seed"]))
    return T.stratified_split(compounds.labels, spec)


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg["out_dir"])
    graph = _load_graph(cfg)
    modules = _load_modules(cfg, graph)
    compounds = _load_compounds(cfg, graph)
    split = _split_ids(compounds, cfg)
    ids = np.array(compounds.compound_ids)
    meta = {
        "format": "gaa-checkpoint",
        "package_version": __version__,
        "model_type": cfg["model_type"],
        "config": {k: v for k, v in cfg.items() if k != "out_dir"},
        "graph_hash": graph.content_hash,
        "modules_hash": modules.content_hash,
        "module_names": list(modules.module_names),
        "split": {name: ids[idx].tolist() for name, idx in zip(("train", "val", "test"), split)},
        "deterministic": bool(args.deterministic),
    }
    # reject bad settings before anything lands in the output directory
    tcfg = _train_config(cfg)
    if cfg["model_type"] != "baseline":
        grid = AlphaGrid.parse(str(cfg["alphas"]))
        mcfg = _model_config(cfg, graph, modules, grid)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg)
    log_path = out / "train_log.jsonl"

    if cfg["model_type"] == "baseline":
        bcfg = cfg["baseline"]
        feats = baseline_features(graph, compounds, float(bcfg["alpha"]), float(cfg["tol"]), int(cfg["max_iter"]))
        weights = (T.class_weights(compounds.labels[split[0]])
                   if tcfg.class_weight_mode == "inverse_frequency" else np.ones(2))
        model = fit_logistic(feats[split[0]], compounds.labels[split[0]], weights, float(bcfg["l2"]),
                             alpha=float(bcfg["alpha"]))
        val = metrics.evaluate(baseline_predict(model, feats[split[1]]), compounds.labels[split[1]])
        record = {"epoch": 1, "val_acc": val.acc, "val_f1": val.f1, "val_aupr": val.aupr}
        log_path.write_text(json.dumps(record, sort_keys=True) + "\n")
        meta.update(class_weights=list(map(float, weights)), best_epoch=1)
        checkpoint.save(out / CKPT_NAME, {"w": model.w[None, :], "b": np.array([[model.b]])}, meta)
        print(f"baseline fitted; val F1 {100 * val.f1:.2f}; checkpoint {out / CKPT_NAME}")
        return 0

    xg = _features(cfg, graph, compounds, grid)
    with log_path.open("w") as fh:
        def on_epoch(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if not args.quiet:
                print(f"epoch {rec['epoch']:4d}  loss {rec['train_loss']:.5f}  val F1 {100 * rec['val_f1']:6.2f}",
                      file=sys.stderr)

        try:
            result = T.train(xg, compounds.labels, split, gm.Structure(graph, modules), mcfg, tcfg, on_epoch=on_epoch)
        except NumericalError as exc:
            best = getattr(exc, "checkpoint", None)
            if best is not None:
                checkpoint.save(out / "last_good.ckpt", best, dict(meta, diverged=True))
            raise
    meta.update(class_weights=list(map(float, result.class_weights)), best_epoch=result.best_epoch,
                model_config=mcfg.to_dict(), alphas=list(grid.alphas))
    checkpoint.save(out / CKPT_NAME, result.params, meta)
    print(f"best epoch {result.best_epoch} of {len(result.log)}; val F1 {100 * result.best_val_f1:.2f}; "
          f"checkpoint {out / CKPT_NAME}")
    return 0


class _Loaded:
    """A checkpoint with the graph, modules and configuration it was trained on."""

    def __init__(self, path, args):
        self.tensors, self.meta = checkpoint.load(path)
        if self.meta.get("format") != "gaa-checkpoint":
            raise InputError(f"{path} is not a model checkpoint")
        base = copy.deepcopy(self.meta["config"])
        base.setdefault("out_dir", None)
        # data paths may be redirected on the command line; everything else is fixed by training
        for attr, key in (("edges", "edges"), ("targets", "targets"), ("labels", "labels"), ("gmt", "gmt"),
                          ("cache_dir", "cache_dir"), ("out", "out_dir")):
            val = getattr(args, attr, None)
            if val is not None:
                base[key] = str(Path(val).resolve())
        self.cfg = base
        self.graph = _load_graph(base)
        self.modules = _load_modules(base, self.graph) if self.meta["model_type"] == "gaa" else None
        _check_hashes(self.meta, self.graph, self.modules)

    @property
    def is_gaa(self) -> bool:
        return self.meta["model_type"] == "gaa"

    def predict(self, compounds: CompoundSet) -> tuple[np.ndarray, np.ndarray]:
        """Positive-class probabilities and per-pathway embeddings (pooled RWR for the baseline)."""
        if self.is_gaa:
            grid = AlphaGrid(tuple(self.meta["alphas"]))
            xg = _features(self.cfg, self.graph, compounds, grid)
            mcfg = gm.ModelConfig(**self.meta["model_config"])
            probs, z = gm.predict(self.tensors, xg, gm.Structure(self.graph, self.modules), mcfg)
            return probs[:, 1], z
        bcfg = self.cfg["baseline"]
        feats = baseline_features(self.graph, compounds, float(bcfg["alpha"]), float(self.cfg["tol"]),
                                  int(self.cfg["max_iter"]))
        model = LinearModel(self.tensors["w"][0], float(self.tensors["b"][0, 0]), float(bcfg["l2"]),
                            float(bcfg["alpha"]))
        return baseline_predict(model, feats), feats

    def embedding_names(self, modules: SupermoduleMap | None) -> list[str]:
        return list(self.meta["module_names"])


# neither the classifier family nor the diffusion constant of the baseline is pinned down
# by the method description; both are our choices and are reported alongside its scores
BASELINE_ASSUMPTIONS = [
    "classifier family: L2-regularised logistic regression (chosen, not specified)",
    "feature diffusion: single RWR steady state at the configured baseline.alpha (chosen, not specified)",
]


def cmd_evaluate(args) -> int:
    ck = _Loaded(args.checkpoint, args)
    compounds = _load_compounds(ck.cfg, ck.graph)
    wanted = ck.meta["split"][args.split] if args.split != "all" else list(compounds.compound_ids)
    pos = {cid: i for i, cid in enumerate(compounds.compound_ids)}
    missing = [c for c in wanted if c not in pos]
    if missing:
        raise InputError(f"{len(missing)} split compounds missing from the labels file, e.g. {missing[0]}")
    sub = compounds.take([pos[c] for c in wanted])
    scores, _ = ck.predict(sub)
    report = metrics.evaluate(scores, sub.labels, args.threshold)
    label = "GAA" if ck.is_gaa else "Baseline"
    out = {"model": label, "split": args.split, **report.to_dict()}
    if not ck.is_gaa:
        out["assumptions"] = BASELINE_ASSUMPTIONS
    if args.out:
        _write_json(Path(args.out), out)
    print(json.dumps(out, sort_keys=True))
    print(metrics.TABLE_HEADER)
    print(report.table_row(label))
    return 0


def rank_predictions(ids, probs, threshold: float) -> list[tuple[int, str, float, bool]]:
    """``(rank, id, p, flagged)`` by descending probability, ties broken by ascending id."""
    order = sorted(range(len(ids)), key=lambda i: (-probs[i], ids[i]))
    return [(r + 1, ids[i], float(probs[i]), bool(probs[i] >= threshold)) for r, i in enumerate(order)]


def cmd_predict(args) -> int:
    ck = _Loaded(args.checkpoint, args)
    compounds = _load_compounds(ck.cfg, ck.graph, labeled=False)
    probs, _ = ck.predict(compounds)
    rows = rank_predictions(list(compounds.compound_ids), probs, args.threshold)
    lines = ["rank\tcompound_id\tprobability\tflagged"]
    lines += [f"{r}\t{cid}\t{p!r}\t{int(flag)}" for r, cid, p, flag in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        _write_json(path.with_name(path.stem + ".config.json"),
                    {**ck.cfg, "checkpoint": str(Path(args.checkpoint).resolve()), "threshold": args.threshold})
        print(f"{sum(r[3] for r in rows)} of {len(rows)} compounds at p >= {args.threshold}; wrote {path}")
    else:
        sys.stdout.write(text)
    return 0


def pathway_report(z: np.ndarray, labels: np.ndarray, names: list[str], subset=None) -> list[tuple]:
    """``(pathway, mean |z| positives, mean |z| negatives, difference)`` per pathway."""
    labels = np.asarray(labels)
    idx = list(range(len(names)))
    if subset:
        known = {n: i for i, n in enumerate(names)}
        unknown = [s for s in subset if s not in known]
        if unknown:
            raise InputError(f"unknown pathway(s): {', '.join(unknown)}")
        idx = [known[s] for s in subset]
    az = np.abs(z)
    pos = az[labels == 1].mean(axis=0) if np.any(labels == 1) else np.full(az.shape[1], np.nan)
    neg = az[labels == 0].mean(axis=0) if np.any(labels == 0) else np.full(az.shape[1], np.nan)
    return [(names[i], float(pos[i]), float(neg[i]), float(pos[i] - neg[i])) for i in idx]


def cmd_report(args) -> int:
    ck = _Loaded(args.checkpoint, args)
    compounds = _load_compounds(ck.cfg, ck.graph)
    _, z = ck.predict(compounds)
    if ck.is_gaa:
        names = ck.embedding_names(ck.modules)
    else:
        # the baseline has no pathway embedding: use mean RWR mass per pathway instead
        modules = _load_modules(ck.cfg, ck.graph)
        names = list(modules.module_names)
        z = np.stack([z[:, m].mean(axis=1) for m in modules.assignments], axis=1)
    subset = [s.strip() for s in args.pathways.split(",") if s.strip()] if args.pathways else None
    rows = pathway_report(z, compounds.labels, names, subset)
    lines = ["pathway\tmean_abs_z_positive\tmean_abs_z_negative\tdifference"]
    lines += [f"{n}\t{a!r}\t{b!r}\t{d!r}" for n, a, b, d in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--edges", help="interaction edge list (TSV: node_a, node_b)")
    p.add_argument("--targets", help="compound targets (TSV: compound_id, node_id)")
    p.add_argument("--labels", help="compound labels (TSV: compound_id, 0|1)")
    p.add_argument("--gmt", help="supermodules in GMT format")
    p.add_argument("--cache-dir", dest="cache_dir", help="directory for cached steady states")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gaa {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic planted-signal dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="FIELD=VALUE", help="override a SynthSpec field")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("diffuse", help="compute and cache graph-augmented features")
    p.add_argument("--config")
    p.add_argument("--edges")
    p.add_argument("--features", help="compound targets (TSV: compound_id, node_id)")
    p.add_argument("--alphas", help="grid as start:stop:step or a comma list")
    p.add_argument("--tol", type=float)
    p.add_argument("--out", help="cache directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_diffuse)

    p = sub.add_parser("train", help="train GAA or the logistic-regression baseline")
    p.add_argument("--config")
    _data_flags(p)
    p.add_argument("--model", choices=("gaa", "baseline"))
    p.add_argument("--alphas")
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--deterministic", action="store_true", help="single-threaded, byte-reproducible run")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="e.g. train.learning_rate=0.005")
    p.set_defaults(func=cmd_train)

    for name, func, text in (("evaluate", cmd_evaluate, "metrics of a checkpoint on one split"),
                             ("predict", cmd_predict, "rank compounds by predicted probability"),
                             ("report", cmd_report, "per-pathway embedding summary")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--checkpoint", required=True)
        _data_flags(p)
        p.add_argument("--out")
        p.add_argument("--deterministic", action="store_true")
        p.set_defaults(func=func)
        if name == "evaluate":
            p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
            p.add_argument("--threshold", type=float, default=metrics.THRESHOLD)
        if name == "predict":
            p.add_argument("--threshold", type=float, default=0.9)
        if name == "report":
            p.add_argument("--pathways", help="comma-separated pathway names (default: all)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except GaaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
