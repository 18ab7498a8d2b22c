"""Shared builders and brute-force oracles for the test suite."""

import numpy as np

from pmvge.encoders import init_params, mlp_specs
from pmvge.graph import Dataset, ViewPairSet
from pmvge.model import AlphaMatrix, ModelState, mu


def random_instance(seed, n_max=10, K_max=4, D=2, hidden=3, activation="tanh", density=0.5, pairs=None):
    """Small random dataset plus a random model state (2-layer encoders)."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, n_max + 1))
    K = int(rng.integers(1, K_max + 1))
    dims = [int(rng.integers(1, 4)) for _ in range(D)]
    node_view = rng.integers(1, D + 1, size=n)
    node_view[:D] = np.arange(1, D + 1)
    observed = ViewPairSet.all_pairs(D) if pairs is None else pairs
    allowed = observed.mask(D)
    I, J = np.triu_indices(n, 1)
    keep = allowed[node_view[I] - 1, node_view[J] - 1] & (rng.random(len(I)) < density)
    w = rng.integers(1, 4, size=keep.sum()).astype(float)
    vectors = [rng.uniform(-1, 1, size=dims[d - 1]) for d in node_view]
    ds = Dataset.from_nodes(dims, node_view, vectors, (I[keep], J[keep], w), observed)
    specs = [mlp_specs(p, [hidden], K, activation, activation) for p in dims]
    stack = init_params(specs, int(rng.integers(2**31)))
    alpha = np.zeros((D, D))
    for d, e in observed:
        alpha[d - 1, e - 1] = alpha[e - 1, d - 1] = rng.uniform(0.5, 2.0)
    return ds, ModelState(AlphaMatrix(alpha, observed), stack)


def brute_pairs(ds):
    allowed = ds.allowed()
    return [
        (i, j)
        for i in range(ds.n)
        for j in range(i + 1, ds.n)
        if allowed[ds.node_view[i] - 1, ds.node_view[j] - 1]
    ]


def brute_loglik(ds, state):
    total = 0.0
    Y = [state.encoders.forward(int(ds.node_view[i]), ds.x(i)) for i in range(ds.n)]
    for i, j in brute_pairs(ds):
        m = mu(state.alpha, Y[i], Y[j], int(ds.node_view[i]), int(ds.node_view[j]))
        w = ds.weights.get(i, j)
        total += (w * np.log(m) if w > 0 else 0.0) - m
    return total
