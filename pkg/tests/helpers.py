"""Shared oracles for the test-suite: random graphs and central finite differences."""

import numpy as np

from gaa.graph import build_graph


def random_connected_graph(rng, n, extra=None):
    """Random spanning tree plus ``extra`` random chords, node ids ``n000..``."""
    ids = [f"n{i:03d}" for i in range(n)]
    edges = [(ids[i], ids[int(rng.integers(i))]) for i in range(1, n)]
    extra = n if extra is None else extra
    for _ in range(extra):
        a, b = rng.integers(n, size=2)
        if a != b:
            edges.append((ids[a], ids[b]))
    return build_graph(edges)


def numeric_grad(f, x, h=1e-4):
    """Central differences of scalar ``f`` with respect to every entry of ``x`` (modified in place)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(num, ana):
    """Max abs deviation scaled by the larger gradient magnitude."""
    scale = max(np.max(np.abs(num)), np.max(np.abs(ana)), 1e-12)
    return float(np.max(np.abs(num - ana)) / scale)
