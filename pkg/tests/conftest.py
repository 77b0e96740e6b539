"""Shared fixtures and oracles for the test suite."""

import numpy as np
import pytest

from dygraphdistill.graphs import DynamicGraph, Snapshot


def finite_difference_grads(f, params, eps=1e-5):
    """Central finite differences of a scalar-valued closure.

    `f` re-evaluates the forward pass from scratch and returns a float;
    `params` are leaf tensors whose data is perturbed element by element.
    This is the independent gradient oracle for the whole suite: it never
    touches the tape.
    """
    grads = []
    for p in params:
        flat = p.data.ravel()
        g = np.zeros(flat.shape, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f()
            flat[i] = orig - eps
            lo = f()
            flat[i] = orig
            g[i] = (hi - lo) / (2.0 * eps)
        grads.append(g.reshape(p.data.shape))
    return grads


def assert_grads_match(analytic, numeric, rtol=1e-4, atol=1e-7):
    """Relative error below `rtol` with a small absolute floor for zeros."""
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def path_graph_snapshot(n=3, weights=None):
    """A path 0-1-2-...-(n-1); optional per-edge weights."""
    if weights is None:
        weights = [1.0] * (n - 1)
    return Snapshot([(i, i + 1, w) for i, w in zip(range(n - 1), weights)])


def tiny_dynamic_graph(T=4, m=2):
    """A small hand-built dynamic graph whose edges shift over time."""
    base = [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)]
    snaps = []
    for t in range(T):
        extra = [(t % 4, (t + 2) % 4, 1.0)]
        edges = {(min(u, v), max(u, v)): w for u, v, w in base}
        for u, v, w in extra:
            key = (min(u, v), max(u, v))
            if key not in edges and key[0] != key[1]:
                edges[key] = w
        snaps.append(Snapshot([(u, v, w) for (u, v), w in edges.items()]))
    index = {str(i): i for i in range(4)}
    return DynamicGraph(snapshots=snaps, global_index=index, m=m)
