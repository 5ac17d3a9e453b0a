"""Time the numba and numpy kernel paths on training-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--batch 32] [--end-to-end]

Kernel timings call both registries directly. ``--end-to-end`` additionally
times full forward/backward steps in two subprocesses, one per value of
``GAA_NUMBA``, since the active backend is fixed at import time.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from gaa import kernels
from gaa.graph import self_loop_neighborhoods
from gaa.testkit import SynthSpec, generate


def best_of(fn, repeat):
    fn()  # warm-up (includes numba compilation or cache load)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(batch, rng):
    data = generate(SynthSpec())
    nb = self_loop_neighborhoods(data.graph).tile(batch)
    n, e = nb.n_nodes, nb.n_edges
    heads, width = 4, 16
    h = rng.normal(size=(n, heads * width))
    coef = rng.random((e, heads))
    logits = rng.normal(size=(e, heads))
    adj = data.graph.col_norm_adj
    x = rng.random((data.graph.n_nodes, 256))
    members = data.modules.members
    ptr = data.modules.indptr
    pooled_rows = rng.normal(size=(members.size, 16))
    return {
        "edge_aggregate": lambda K: K["edge_aggregate"](coef, h, nb.src, nb.indptr, heads),
        "edge_dot": lambda K: K["edge_dot"](h, h, nb.dst, nb.src, heads),
        "segment_softmax": lambda K: K["segment_softmax"](logits, nb.indptr),
        "segment_sum": lambda K: K["segment_sum"](logits, nb.indptr),
        "segment_max": lambda K: K["segment_max"](pooled_rows, ptr),
        "scatter_add_rows": lambda K: K["scatter_add_rows"](logits, nb.dst, n),
        "csr_matmat (RWR block)": lambda K: K["csr_matmat"](adj.indptr, adj.indices, adj.data, x),
        "elu": lambda K: K["elu"](h, 1.0),
        "leaky_relu": lambda K: K["leaky_relu"](logits, 0.2),
    }


STEP_SNIPPET = """
import time, numpy as np
from gaa.testkit import SynthSpec, generate
from gaa.diffusion import AlphaGrid, augment_features
from gaa import model as gm, kernels
d = generate(SynthSpec())
xg = augment_features(d.graph, d.compounds, AlphaGrid.paper_default()).values[:{batch}]
st = gm.Structure(d.graph, d.modules)
cfg = gm.ModelConfig(d.graph.n_nodes, d.modules.n_modules, 9)
p = gm.init_params(cfg, 0)
y = d.compounds.labels[:{batch}]
def step():
    tape, P, out = gm.forward(p, xg, st, cfg)
    tape.backward(gm.loss(out, y, np.ones(2), 0.5)[0])
step()
best = min((lambda t: (step(), time.perf_counter() - t)[1])(time.perf_counter()) for _ in range({repeat}))
print(kernels.BACKEND, best)
"""


def end_to_end(batch, repeat):
    out = {}
    for flag in ("1", "0"):
        env = dict(os.environ, GAA_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(batch=batch, repeat=repeat)],
                             env=env, capture_output=True, text=True, check=True)
        backend, secs = res.stdout.split()
        out[backend] = float(secs)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    cases = kernel_cases(args.batch, rng)
    print(f"{'kernel':<24} {'numpy ms':>10} {'numba ms':>10} {'speed-up':>9}")
    for name, call in cases.items():
        t_np = best_of(lambda: call(kernels.NUMPY_KERNELS), args.repeat)
        t_nb = best_of(lambda: call(kernels.NUMBA_KERNELS), args.repeat)
        print(f"{name:<24} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.2f}x")
    if args.end_to_end:
        res = end_to_end(args.batch, max(3, args.repeat // 4))
        print(f"\nforward+backward, batch {args.batch}: "
              f"numpy {1e3 * res['numpy']:.1f} ms, numba {1e3 * res['numba']:.1f} ms "
              f"({res['numpy'] / res['numba']:.2f}x)")


if __name__ == "__main__":
    main()
