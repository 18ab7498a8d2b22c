"""
Synthetic data generators.

* :func:`gen_pmvge` draws views, data vectors and Poisson link weights from
  a known model, returning the true means as an oracle.
* :func:`gen_sbm` draws a stochastic block model graph with 1-hot data
  vectors.
* :func:`gen_sim_grid` / :func:`gen_sim_data` build the cosine-similarity
  surface used to check that inner products of learned encoders can mimic
  a nonlinear similarity.
* :func:`classifier_dataset` rewrites a labelled sample as a 2-view graph
  (samples linked to one-hot class nodes).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .encoders import EncoderStack, linear_specs
from .errors import ValidationError
from .graph import Dataset, ViewPairSet, index_pairs
from .model import AlphaMatrix, ModelState, SbmParams, embed_nodes, pair_means, sample_weights


@dataclass
class ViewSampler:
    """Distribution of data vectors in one view, supported on ``[-bound, bound]^dim``."""

    dim: int
    kind: str = "uniform"  # or "gaussian" (truncated to the box)
    bound: float = 1.0
    sigma: float = 0.5

    def draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(-self.bound, self.bound, size=(count, self.dim))
        if self.kind == "gaussian":
            X = rng.normal(0.0, self.sigma, size=(count, self.dim))
            bad = np.abs(X) > self.bound
            while bad.any():
                X[bad] = rng.normal(0.0, self.sigma, size=int(bad.sum()))
                bad = np.abs(X) > self.bound
            return X
        raise ValidationError(f"unknown sampler kind {self.kind!r}")


@dataclass
class GenerativeSpec:
    n: int
    eta: Sequence[float]
    samplers: Sequence[ViewSampler]
    truth: ModelState

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=np.float64)
        if len(eta) != len(self.samplers) or len(eta) != self.truth.alpha.num_views:
            raise ValidationError("eta, samplers and the true state must cover the same views")
        # positive entries summing to one are automatically < 1 when D > 1
        if np.any(eta <= 0) or abs(eta.sum() - 1) > 1e-9:
            raise ValidationError("eta must be a probability vector with positive entries")
        for d, s in enumerate(self.samplers, 1):
            if self.truth.encoders.input_dim(d) != s.dim:
                raise ValidationError(f"view {d}: sampler dim {s.dim} != encoder input dim")

    @property
    def num_views(self) -> int:
        return len(self.samplers)


@dataclass
class PMvGETruth:
    """Oracle for the true means ``mu*_ij`` of a generated dataset."""

    state: ModelState
    Y: np.ndarray
    node_view: np.ndarray

    def mu(self, I, J) -> np.ndarray:
        return pair_means(self.state.alpha, self.Y, self.node_view, np.asarray(I), np.asarray(J))[1]

    def describe(self) -> str:
        a = self.state.alpha
        lines = ["kind: pmvge", f"K: {self.state.encoders.K}"]
        lines.append("alpha: " + " ".join(f"{d}-{e}={a[d, e]!r}" for d, e in a.mask))
        for d, view in enumerate(self.state.encoders.params, 1):
            for k, (W, b) in enumerate(view):
                lines.append(f"view{d}.layer{k}.W: " + ",".join(repr(float(v)) for v in W.ravel()))
                lines.append(f"view{d}.layer{k}.b: " + ",".join(repr(float(v)) for v in b))
        return "\n".join(lines) + "\n"


def linear_truth(
    dims: Sequence[int],
    K: int,
    observed: ViewPairSet,
    alpha: float | dict = 1.0,
    seed: int = 0,
    max_inner: float = 2.0,
) -> ModelState:
    """Linear true model with entries ``U[-0.5, 0.5]``.

    Each view's matrix is shrunk if needed so that ``|<y, y'>| <= max_inner``
    for all data in ``[-1, 1]^p``, keeping true means within
    ``[exp(-max_inner), exp(max_inner)] * alpha``.
    """
    rng = np.random.default_rng(seed)
    params = []
    for p in dims:
        W = rng.uniform(-0.5, 0.5, size=(K, p))
        # ||W x|| <= ||W||_2 * sqrt(p) on the unit box
        reach = np.linalg.norm(W, 2) * np.sqrt(p)
        limit = np.sqrt(max_inner)
        if reach > limit:
            W *= limit / reach
        params.append([(W, np.zeros(K))])
    stack = EncoderStack([linear_specs(p, K) for p in dims], params)
    D = len(dims)
    values = np.zeros((D, D))
    for d, e in observed:
        a = alpha[(d, e)] if isinstance(alpha, dict) else alpha
        values[d - 1, e - 1] = values[e - 1, d - 1] = a
    return ModelState(AlphaMatrix(values, observed), stack)


def gen_pmvge(spec: GenerativeSpec, seed: int) -> tuple[Dataset, PMvGETruth]:
    """Draw ``d_i ~ eta``, ``x_i ~ q(d_i)`` and ``w_ij ~ Po(mu*_ij)``."""
    rng = np.random.default_rng(seed)
    D = spec.num_views
    node_view = rng.choice(np.arange(1, D + 1), size=spec.n, p=np.asarray(spec.eta, dtype=np.float64))
    mats = [s.draw(rng, int(np.sum(node_view == d))) for d, s in enumerate(spec.samplers, 1)]
    dims = [s.dim for s in spec.samplers]
    observed = spec.truth.alpha.mask
    bare = Dataset.from_nodes(dims, node_view, None, None, observed, view_data=mats)
    Y = embed_nodes(spec.truth.encoders, bare)
    truth = PMvGETruth(spec.truth, Y, bare.node_view)
    weights = sample_weights(truth.mu, index_pairs(bare), rng)
    ds = Dataset.from_nodes(dims, node_view, None, (weights.i, weights.j, weights.w), observed, view_data=mats)
    return ds, truth


def gen_sbm(n: int, C: int, beta, seed: int) -> tuple[Dataset, SbmParams]:
    """One-view SBM: uniform memberships, ``w_ij ~ Po(beta[c_i, c_j])``, 1-hot data."""
    beta = np.array(beta, dtype=np.float64, ndmin=2)
    if beta.shape != (C, C):
        raise ValidationError(f"beta must be {C}x{C}, got {beta.shape}")
    rng = np.random.default_rng(seed)
    c = rng.integers(1, C + 1, size=n)
    params = SbmParams(beta, c)
    X = np.eye(C)[c - 1]
    observed = ViewPairSet([(1, 1)])
    bare = Dataset.from_nodes([C], np.ones(n), None, None, observed, view_data=[X])
    weights = sample_weights(lambda I, J: beta[c[I] - 1, c[J] - 1], index_pairs(bare), rng)
    ds = Dataset.from_nodes(
        [C], np.ones(n), None, (weights.i, weights.j, weights.w), observed, labels=c, view_data=[X]
    )
    return ds, params


def sbm_beta(C: int, within: float, between: float) -> np.ndarray:
    return np.full((C, C), between) + np.eye(C) * (within - between)


def default_f_star(x: np.ndarray) -> np.ndarray:
    """``(x1, cos x2, exp(-x3), sin(x4 - x5))`` applied row-wise."""
    x = np.atleast_2d(x)
    return np.stack([x[:, 0], np.cos(x[:, 1]), np.exp(-x[:, 2]), np.sin(x[:, 3] - x[:, 4])], axis=1)


@dataclass
class SimGridSpec:
    a: float = 2.0
    resolution: int = 50
    e1: np.ndarray = field(default_factory=lambda: np.array([1.0, 1, 1, 0, 0]))
    e2: np.ndarray = field(default_factory=lambda: np.array([0.0, 0, 1, 1, 1]))
    f_star: Callable[[np.ndarray], np.ndarray] = default_f_star

    def __post_init__(self):
        if self.resolution < 2:
            raise ValidationError("grid resolution must be >= 2")
        self.e1 = np.asarray(self.e1, dtype=np.float64)
        self.e2 = np.asarray(self.e2, dtype=np.float64)

    def axis(self) -> np.ndarray:
        return np.linspace(-self.a, self.a, self.resolution)


def cosine_rows(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Cosine similarity matrix between rows of ``A`` and rows of ``B``."""
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValidationError("cosine similarity undefined for a zero-norm feature vector")
    return (A @ B.T) / np.outer(na, nb)


def gen_sim_grid(spec: SimGridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return the axis values and ``G*[s, t] = cos(f*(s e1), f*(t e2))``."""
    s = spec.axis()
    A = spec.f_star(s[:, None] * spec.e1[None, :])
    B = spec.f_star(s[:, None] * spec.e2[None, :])
    return s, cosine_rows(A, B)


def gen_sim_data(spec: SimGridSpec, n: int, seed: int, scale: float = 1.0) -> Dataset:
    """Two-view training data for the similarity surface.

    Half the nodes are ``s e1`` (view 1), half ``t e2`` (view 2), with
    ``s, t ~ U[-a, a]``. Every pair is observed and carries the real-valued
    Poisson mean ``w_ij = scale * exp(cos(f*(x_i), f*(x_j)))``.
    """
    rng = np.random.default_rng(seed)
    n1 = n // 2
    s = rng.uniform(-spec.a, spec.a, size=n1)
    t = rng.uniform(-spec.a, spec.a, size=n - n1)
    X1 = s[:, None] * spec.e1[None, :]
    X2 = t[:, None] * spec.e2[None, :]
    F = spec.f_star(np.vstack([X1, X2]))
    G = cosine_rows(F, F)
    I, J = np.triu_indices(n, 1)
    w = scale * np.exp(G[I, J])
    node_view = np.r_[np.ones(n1, dtype=np.int64), np.full(n - n1, 2)]
    return Dataset.from_nodes(
        [len(spec.e1), len(spec.e2)], node_view, None, (I, J, w), ViewPairSet.all_pairs(2), view_data=[X1, X2]
    )


def classifier_dataset(X, labels, C: int) -> Dataset:
    """Samples (view 1) linked with weight 1 to the 1-hot node of their class (view 2)."""
    X = np.array(X, dtype=np.float64, ndmin=2)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(X)
    if len(labels) != n:
        raise ValidationError("need one label per sample")
    if n and (labels.min() < 1 or labels.max() > C):
        raise ValidationError(f"labels must lie in 1..{C}")
    node_view = np.r_[np.ones(n, dtype=np.int64), np.full(C, 2)]
    I = np.arange(n)
    J = n + labels - 1
    return Dataset.from_nodes(
        [X.shape[1], C],
        node_view,
        None,
        (I, J, np.ones(n)),
        ViewPairSet([(1, 2)]),
        labels=np.r_[labels, np.arange(1, C + 1)],
        view_data=[X, np.eye(C)],
    )
