"""
The Poisson link model.

Link weights are independent Poisson counts ``w_ij ~ Po(mu_ij)`` with

    mu_ij = alpha[d_i, d_j] * exp(<y_i, y_j>),    y_i = f_{d_i}(x_i)

where ``alpha`` is a symmetric nonnegative view-pair scale that is zero
outside the observed view pairs. The stochastic block model is the special
case ``mu_ij = beta[c_i, c_j]``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .encoders import EncoderStack, read_encoders, write_encoders, dims_manifest
from .errors import (
    DegenerateLikelihoodError,
    DimensionMismatchError,
    InnerProductOverflowError,
    ValidationError,
)
from .graph import Dataset, LinkWeights, PairIndex, ViewPairSet, index_pairs
from .poisson import poisson

# exp() of anything above this is inf in float64
EXP_LIMIT = float(np.log(np.finfo(np.float64).max))


class AlphaMatrix:
    """Symmetric nonnegative ``D x D`` view-pair scale, zero off the mask."""

    def __init__(self, values, mask: ViewPairSet):
        values = np.array(values, dtype=np.float64, ndmin=2)
        D = values.shape[0]
        if values.shape != (D, D):
            raise ValidationError(f"alpha must be square, got {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValidationError("alpha entries must be finite and >= 0")
        if not np.array_equal(values, values.T):
            raise ValidationError("alpha must be symmetric")
        allowed = mask.mask(D)
        if np.any(values[~allowed] != 0):
            raise ValidationError("alpha must be zero outside the observed view pairs")
        self.values = values
        self.mask = mask

    @classmethod
    def ones(cls, mask: ViewPairSet, num_views: int) -> "AlphaMatrix":
        return cls(mask.mask(num_views).astype(np.float64), mask)

    @property
    def num_views(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, pair) -> float:
        d, e = pair
        return float(self.values[d - 1, e - 1])

    def replace(self, updates: dict[tuple[int, int], float]) -> "AlphaMatrix":
        v = self.values.copy()
        for (d, e), a in updates.items():
            v[d - 1, e - 1] = v[e - 1, d - 1] = a
        return AlphaMatrix(v, self.mask)

    def pair_values(self) -> list[float]:
        return [self[d, e] for d, e in self.mask]

    def copy(self) -> "AlphaMatrix":
        return AlphaMatrix(self.values.copy(), self.mask)


@dataclass
class SbmParams:
    beta: np.ndarray
    memberships: np.ndarray  # cluster id per node, 1-based

    def __post_init__(self):
        self.beta = np.array(self.beta, dtype=np.float64, ndmin=2)
        self.memberships = np.asarray(self.memberships, dtype=np.int64)
        if not np.array_equal(self.beta, self.beta.T) or np.any(self.beta < 0):
            raise ValidationError("beta must be symmetric and nonnegative")

    @property
    def C(self) -> int:
        return self.beta.shape[0]


@dataclass
class ModelState:
    alpha: AlphaMatrix
    encoders: EncoderStack

    def __post_init__(self):
        if self.alpha.num_views != self.encoders.num_views:
            raise ValidationError(
                f"alpha covers {self.alpha.num_views} views, encoders cover {self.encoders.num_views}"
            )

    def copy(self) -> "ModelState":
        return ModelState(self.alpha.copy(), self.encoders.copy())


def embed_nodes(stack: EncoderStack, ds: Dataset) -> np.ndarray:
    """Feature vectors of all nodes, shape ``(n, K)``."""
    if stack.num_views != ds.num_views:
        raise DimensionMismatchError(f"encoders have {stack.num_views} views, data has {ds.num_views}")
    Y = np.zeros((ds.n, stack.K))
    for d in range(1, ds.num_views + 1):
        idx = ds.nodes_of_view(d)
        if len(idx):
            Y[idx] = stack.forward(d, ds.view_data[d - 1])
    return Y


def mu(alpha: AlphaMatrix, y_i, y_j, d_i: int, d_j: int) -> float:
    a = alpha[d_i, d_j]
    if a == 0.0:
        return 0.0
    y_i = np.asarray(y_i, dtype=np.float64)
    y_j = np.asarray(y_j, dtype=np.float64)
    if y_i.shape != y_j.shape:
        raise DimensionMismatchError(f"feature vectors differ in length: {y_i.shape} vs {y_j.shape}")
    g = 0.0
    for u, v in zip(y_i.tolist(), y_j.tolist()):
        g += u * v
    if g > EXP_LIMIT:
        raise InnerProductOverflowError(g)
    out = a * np.exp(g)
    if not np.isfinite(out):
        raise InnerProductOverflowError(g)
    return float(out)


def pair_means(alpha: AlphaMatrix, Y: np.ndarray, node_view: np.ndarray, I, J) -> tuple[np.ndarray, np.ndarray]:
    """Inner products and means for arrays of pairs; raises on overflow."""
    g = np.einsum("ij,ij->i", Y[I], Y[J])
    a = alpha.values[node_view[I] - 1, node_view[J] - 1]
    if len(g) and g.max() > EXP_LIMIT:
        raise InnerProductOverflowError(g.max())
    m = a * np.exp(g)
    bad = ~np.isfinite(m)
    if bad.any():
        raise InnerProductOverflowError(g[bad][0])
    return g, m


def log_likelihood(ds: Dataset, state: ModelState, pairs: PairIndex | None = None) -> float:
    """Sum over ``I_n`` of ``w_ij log mu_ij - mu_ij`` in one ordered pass."""
    pairs = index_pairs(ds) if pairs is None else pairs
    Y = embed_nodes(state.encoders, ds)
    total = 0.0
    for I, J in pairs.iter_blocks():
        _, m = pair_means(state.alpha, Y, ds.node_view, I, J)
        w = ds.weights.lookup(I, J)
        pos = w > 0
        if np.any(m[pos] == 0):
            k = np.flatnonzero(pos & (m == 0))[0]
            raise DegenerateLikelihoodError(
                f"pair ({I[k]},{J[k]}) has weight {w[k]} but mean 0 (alpha of views "
                f"({ds.node_view[I[k]]},{ds.node_view[J[k]]}) is 0)"
            )
        total += float(np.sum(w[pos] * np.log(m[pos])) - np.sum(m))
    return total


def sbm_mu(params: SbmParams, i: int, j: int) -> float:
    n = len(params.memberships)
    for node in (i, j):
        if not 0 <= node < n:
            raise ValidationError(f"unknown node {node} (n={n})")
    ci, cj = params.memberships[i], params.memberships[j]
    return float(params.beta[ci - 1, cj - 1])


def sample_weights(
    mu_of: Callable[[np.ndarray, np.ndarray], np.ndarray],
    pairs: PairIndex | tuple[np.ndarray, np.ndarray],
    seed: int | np.random.Generator,
    n: int | None = None,
) -> LinkWeights:
    """One independent Poisson draw per unordered pair.

    ``mu_of`` maps pair arrays ``(I, J)`` to means. Pairs are visited in the
    enumeration order of ``pairs`` so the result depends only on the seed.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if isinstance(pairs, PairIndex):
        n = pairs.ds.n
        blocks = pairs.iter_blocks()
    else:
        if n is None:
            raise ValidationError("n is required when pairs are given as arrays")
        blocks = [tuple(np.asarray(p, dtype=np.int64) for p in pairs)]
    out_i, out_j, out_w = [], [], []
    for I, J in blocks:
        w = poisson(mu_of(I, J), rng)
        keep = w > 0
        out_i.append(I[keep])
        out_j.append(J[keep])
        out_w.append(w[keep].astype(np.float64))
    if not out_i:
        return LinkWeights(n, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
    return LinkWeights.from_triples(n, np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_w))


# ---------------------------------------------------------------------------
# Checkpoints: encoder block followed by an alpha block
# ---------------------------------------------------------------------------

ALPHA_MAGIC = b"PMVGEALP"


def save_state(path, state: ModelState) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        write_encoders(fh, state.encoders)
        fh.write(ALPHA_MAGIC)
        D = state.alpha.num_views
        pairs = list(state.alpha.mask)
        fh.write(struct.pack("<II", D, len(pairs)))
        for d, e in pairs:
            fh.write(struct.pack("<II", d, e))
        fh.write(np.ascontiguousarray(state.alpha.values, dtype="<f8").tobytes())
    lines = dims_manifest(state.encoders)
    lines += "alpha " + " ".join(f"{d}-{e}={state.alpha[d, e]!r}" for d, e in state.alpha.mask) + "\n"
    path.with_name(path.name + ".dims.txt").write_text(lines)


def load_state(path) -> ModelState:
    with open(path, "rb") as fh:
        stack = read_encoders(fh)
        if fh.read(len(ALPHA_MAGIC)) != ALPHA_MAGIC:
            raise ValidationError(f"{path}: missing alpha block")
        D, npairs = struct.unpack("<II", fh.read(8))
        pairs = [struct.unpack("<II", fh.read(8)) for _ in range(npairs)]
        values = np.frombuffer(fh.read(8 * D * D), dtype="<f8").reshape(D, D).astype(np.float64)
    return ModelState(AlphaMatrix(values, ViewPairSet(pairs)), stack)
