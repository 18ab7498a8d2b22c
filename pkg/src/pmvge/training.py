"""
Alternating maximum-likelihood estimation of ``(alpha, psi)``.

``psi`` (encoder parameters) is updated by minibatch stochastic gradient
ascent on

    sum_{(i,j) in W'} w_ij log mu_ij  -  tau * sum_{(i,j) in I'} mu_ij

where ``W'`` resamples positive pairs and ``I'`` resamples all index pairs
(negative sampling). ``alpha`` is refreshed in closed form from a sample of
index pairs. ``full_batch=True`` replaces both samples with the complete
sets, giving exact coordinate ascent on the full log-likelihood.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import EncoderStack, init_params
from .errors import DegenerateLikelihoodError, InnerProductOverflowError, PMvGEError, TrainingError, ValidationError
from .graph import Dataset, PairIndex, index_pairs
from .model import EXP_LIMIT, AlphaMatrix, ModelState
from .rng import stream

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    m: int = 512
    r: float = 1.0
    tau: float | str = 1.0  # a number, or "unbiased" for |I_n| / (r |W_n|)
    optimizer: str = "adam"
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 0.1
    lr_decay_period: int = 100  # 0 disables decay
    iterations: int = 200
    alpha_update_period: int = 1  # 0 keeps alpha fixed
    alpha_sample: int = 0  # index pairs drawn per alpha refresh; 0 = same as minibatch negatives
    full_batch: bool = False
    seed: int = 0
    clamp: float = 40.0  # cap on inner products inside training

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.m < 2:
            raise ValidationError(f"minibatch size m must be >= 2, got {self.m}")
        if not self.r > 0:
            raise ValidationError(f"negative sampling rate r must be > 0, got {self.r}")
        if isinstance(self.tau, str):
            if self.tau != "unbiased":
                raise ValidationError(f"tau must be a positive number or 'unbiased', got {self.tau!r}")
        elif not self.tau > 0:
            raise ValidationError(f"tau must be > 0, got {self.tau}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.iterations < 0 or self.alpha_update_period < 0 or self.lr_decay_period < 0:
            raise ValidationError("iterations and periods must be >= 0")
        if not self.lr > 0:
            raise ValidationError("learning rate must be > 0")

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        """Parse flat ``key=value`` lines (``#`` comments allowed)."""
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"config line {lineno}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            values[k] = v
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for k, v in values.items():
            if k not in fields:
                raise ValidationError(f"unknown config key {k!r}")
            kwargs[k] = _coerce(k, v)
        return cls(**kwargs)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in dataclasses.fields(self))


_INT_KEYS = {"m", "lr_decay_period", "iterations", "alpha_update_period", "alpha_sample", "seed"}
_FLOAT_KEYS = {"r", "lr", "beta1", "beta2", "eps", "lr_decay", "clamp"}


def _coerce(key, v):
    if not isinstance(v, str):
        return v
    try:
        if key in _INT_KEYS:
            return int(v)
        if key in _FLOAT_KEYS:
            return float(v)
        if key == "tau":
            return v if v == "unbiased" else float(v)
        if key == "full_batch":
            if v.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(v)
            return v.lower() in ("true", "1", "yes")
    except ValueError:
        raise ValidationError(f"bad value {v!r} for config key {key!r}") from None
    return v


@dataclass
class Minibatch:
    pos_i: np.ndarray
    pos_j: np.ndarray
    pos_w: np.ndarray
    neg_i: np.ndarray
    neg_j: np.ndarray

    @property
    def size(self) -> int:
        return len(self.pos_w) + len(self.neg_i)


@dataclass
class TrainReport:
    """Per-iteration trajectory plus the final state.

    Everything except ``wall_clock`` is a deterministic function of the
    inputs and the seed.
    """

    objectives: list[float] = field(default_factory=list)
    alphas: list[list[float]] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    events: list[str] = field(default_factory=list)
    wall_clock: float = 0.0
    state: ModelState | None = None
    tau: float = 1.0

    def write_log(self, path) -> None:
        """CSV ``iter,objective,alpha_(d,e)...,lr``."""
        pairs = list(self.state.alpha.mask)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(["iter", "objective", *[f"alpha_({d},{e})" for d, e in pairs], "lr"]) + "\n")
            for t, (obj, al, lr) in enumerate(zip(self.objectives, self.alphas, self.lrs)):
                fh.write(",".join([str(t), repr(obj), *[repr(a) for a in al], repr(lr)]) + "\n")


def split_sizes(m: int, r: float) -> tuple[int, int]:
    """``(|W'|, |I'|)`` with ``|W'| = round_half_up(m / (1 + r))`` kept in ``[1, m - 1]``."""
    n_pos = int(math.floor(m / (1.0 + r) + 0.5))
    n_pos = min(max(n_pos, 1), m - 1)
    return n_pos, m - n_pos


def sample_minibatch(ds: Dataset, m: int, r: float, rng: np.random.Generator, pairs: PairIndex | None = None) -> Minibatch:
    """Positives uniformly (with replacement) from ``W_n``; negatives from ``I_n``."""
    pairs = index_pairs(ds) if pairs is None else pairs
    if pairs.num_positive == 0:
        raise ValidationError("no positive-weight pairs: cannot form a minibatch")
    n_pos, n_neg = split_sizes(m, r)
    k = rng.integers(0, pairs.num_positive, size=n_pos)
    neg_i, neg_j = pairs.sample(rng, n_neg)
    return Minibatch(pairs.pos_i[k], pairs.pos_j[k], pairs.pos_w[k], neg_i, neg_j)


def full_minibatch(ds: Dataset, pairs: PairIndex | None = None) -> Minibatch:
    """The batch with ``W' = W_n`` and ``I' = I_n``, each pair exactly once."""
    pairs = index_pairs(ds) if pairs is None else pairs
    I, J = pairs.pairs()
    return Minibatch(pairs.pos_i, pairs.pos_j, pairs.pos_w, I, J)


def _zero_grads(stack: EncoderStack):
    return [[(np.zeros_like(W), np.zeros_like(b)) for W, b in view] for view in stack.params]


def _clamped(g: np.ndarray, clamp: float | None):
    if clamp is None:
        if len(g) and np.max(g) > EXP_LIMIT:
            raise InnerProductOverflowError(np.max(g))
        return g, np.ones(g.shape)
    return np.minimum(g, clamp), (g <= clamp).astype(np.float64)


def minibatch_objective(batch: Minibatch, state: ModelState, ds: Dataset, tau: float, clamp: float | None = None):
    """Value of the minibatch objective and its gradient over ``psi``.

    Returns ``(value, grads)`` where ``grads`` mirrors ``state.encoders.params``.
    With ``clamp`` set, inner products above it are capped (zero gradient);
    with ``clamp=None`` an overflowing inner product raises.
    """
    stack, alpha = state.encoders, state.alpha
    nodes = np.unique(np.concatenate([batch.pos_i, batch.pos_j, batch.neg_i, batch.neg_j]))
    Y = np.zeros((len(nodes), stack.K))
    caches = {}
    for d in range(1, ds.num_views + 1):
        sel = np.flatnonzero(ds.node_view[nodes] == d)
        if len(sel):
            Yd, cache = stack.forward(d, ds.view_data[d - 1][ds.view_row[nodes[sel]]], keep=True)
            Y[sel] = Yd
            caches[d] = (sel, cache)

    gY = np.zeros_like(Y)
    value = 0.0
    views = ds.node_view

    if len(batch.pos_w):
        u = np.searchsorted(nodes, batch.pos_i)
        v = np.searchsorted(nodes, batch.pos_j)
        a = alpha.values[views[batch.pos_i] - 1, views[batch.pos_j] - 1]
        if np.any(a == 0):
            k = np.flatnonzero(a == 0)[0]
            raise DegenerateLikelihoodError(
                f"positive pair ({batch.pos_i[k]},{batch.pos_j[k]}) has alpha 0 for its view pair"
            )
        g = np.einsum("ij,ij->i", Y[u], Y[v])
        gc, live = _clamped(g, clamp)
        value += float(np.sum(batch.pos_w * (np.log(a) + gc)))
        coef = batch.pos_w * live
        np.add.at(gY, u, coef[:, None] * Y[v])
        np.add.at(gY, v, coef[:, None] * Y[u])

    if len(batch.neg_i):
        u = np.searchsorted(nodes, batch.neg_i)
        v = np.searchsorted(nodes, batch.neg_j)
        a = alpha.values[views[batch.neg_i] - 1, views[batch.neg_j] - 1]
        g = np.einsum("ij,ij->i", Y[u], Y[v])
        gc, live = _clamped(g, clamp)
        mu = a * np.exp(gc)
        if not np.all(np.isfinite(mu)):
            raise InnerProductOverflowError(g[~np.isfinite(mu)][0])
        value -= tau * float(np.sum(mu))
        coef = -tau * mu * live
        np.add.at(gY, u, coef[:, None] * Y[v])
        np.add.at(gY, v, coef[:, None] * Y[u])

    grads = _zero_grads(stack)
    for d, (sel, cache) in caches.items():
        grads[d - 1] = stack.backward(d, cache, gY[sel])
    return value, grads


class FullBatch:
    """Dense per-view-pair blocks of ``W`` for exact full-data objectives."""

    def __init__(self, ds: Dataset):
        self.ds = ds
        W = ds.weights.to_dense()
        self.blocks = []
        for d, e in ds.observed_pairs:
            rows, cols = ds.nodes_of_view(d), ds.nodes_of_view(e)
            Wb = W[np.ix_(rows, cols)]
            mask = np.triu(np.ones((len(rows), len(cols)), dtype=bool), 1) if d == e else None
            self.blocks.append((d, e, Wb, Wb > 0, mask))

    def objective(self, state: ModelState, tau: float = 1.0, clamp: float | None = None):
        """Same contract as :func:`minibatch_objective` on the full batch."""
        ds, stack, alpha = self.ds, state.encoders, state.alpha
        Ys, caches = {}, {}
        for d in range(1, ds.num_views + 1):
            if len(ds.view_data[d - 1]):
                Ys[d], caches[d] = stack.forward(d, ds.view_data[d - 1], keep=True)
        gYs = {d: np.zeros_like(Y) for d, Y in Ys.items()}
        value = 0.0
        for d, e, Wb, pos, mask in self.blocks:
            if d not in Ys or e not in Ys:
                continue
            a = alpha[d, e]
            S = Ys[d] @ Ys[e].T
            if clamp is None:
                if S.size and S.max() > EXP_LIMIT:
                    raise InnerProductOverflowError(S.max())
                Sc, live = S, 1.0
            else:
                Sc, live = np.minimum(S, clamp), (S <= clamp)
            keep_pos = pos if mask is None else pos & mask
            if a == 0:
                if keep_pos.any():
                    raise DegenerateLikelihoodError(f"view pair ({d},{e}) has positive weights but alpha 0")
                continue
            M = a * np.exp(Sc)
            if not np.all(np.isfinite(M)):
                raise InnerProductOverflowError(S[~np.isfinite(M)][0])
            Wm = np.where(keep_pos, Wb, 0.0)
            if mask is None:
                value += float(np.sum(Wm * (math.log(a) + Sc)) - tau * np.sum(M))
                C = (Wm - tau * M) * live
                gYs[d] += C @ Ys[e]
                gYs[e] += C.T @ Ys[d]
            else:
                value += float(np.sum(Wm * (math.log(a) + Sc)) - tau * np.sum(M[mask]))
                C = np.where(mask, (Wm - tau * M) * live, 0.0)
                gYs[d] += (C + C.T) @ Ys[d]
        grads = _zero_grads(stack)
        for d, cache in caches.items():
            grads[d - 1] = stack.backward(d, cache, gYs[d])
        return value, grads

    def alpha(self, state: ModelState, clamp: float | None = None) -> AlphaMatrix:
        """:func:`update_alpha` with the complete index set, computed blockwise."""
        ds, stack = self.ds, state.encoders
        Ys = {d: stack.forward(d, ds.view_data[d - 1]) for d in range(1, ds.num_views + 1)}
        updates = {}
        for d, e, Wb, _, mask in self.blocks:
            S = Ys[d] @ Ys[e].T
            if mask is not None:
                S = S[mask]
                Wb = Wb[mask]
            if S.size == 0:
                continue
            Sc, _ = _clamped(S.ravel(), clamp)
            den = float(np.sum(np.exp(Sc)))
            if not math.isfinite(den):
                raise InnerProductOverflowError(float(S.max()))
            if den == 0.0:
                raise InnerProductOverflowError(float(S.max()), "exp underflow: alpha estimate is unbounded")
            updates[(d, e)] = float(np.sum(Wb)) / den
        return state.alpha.replace(updates)


def update_alpha(
    negatives: tuple[np.ndarray, np.ndarray],
    ds: Dataset,
    encoders: EncoderStack,
    previous: AlphaMatrix | None = None,
    clamp: float | None = None,
) -> tuple[AlphaMatrix, list[tuple[int, int]]]:
    """Closed-form refresh ``alpha(d,e) = sum w_ij / sum exp(g_ij)`` per stratum.

    Returns the new matrix and the observed view pairs whose stratum was
    empty in the sample; those keep the ``previous`` value (1 if none).
    """
    I, J = (np.asarray(a, dtype=np.int64) for a in negatives)
    D = ds.num_views
    previous = previous or AlphaMatrix.ones(ds.observed_pairs, D)
    values = np.zeros((D, D))
    empty = []
    nodes = np.unique(np.concatenate([I, J])) if len(I) else np.zeros(0, dtype=np.int64)
    Y = np.zeros((len(nodes), encoders.K))
    for d in range(1, D + 1):
        sel = np.flatnonzero(ds.node_view[nodes] == d)
        if len(sel):
            Y[sel] = encoders.forward(d, ds.view_data[d - 1][ds.view_row[nodes[sel]]])
    g = np.einsum("ij,ij->i", Y[np.searchsorted(nodes, I)], Y[np.searchsorted(nodes, J)]) if len(I) else np.zeros(0)
    gc, _ = _clamped(g, clamp)
    w = ds.weights.lookup(I, J)
    di, dj = ds.node_view[I], ds.node_view[J]
    lo, hi = np.minimum(di, dj), np.maximum(di, dj)
    for d, e in ds.observed_pairs:
        sel = (lo == d) & (hi == e)
        if not sel.any():
            empty.append((d, e))
            values[d - 1, e - 1] = values[e - 1, d - 1] = previous[d, e]
            continue
        den = float(np.sum(np.exp(gc[sel])))
        if not math.isfinite(den):
            raise InnerProductOverflowError(float(np.max(g[sel])))
        if den == 0.0:
            raise InnerProductOverflowError(float(np.max(g[sel])), "exp underflow: alpha estimate is unbounded")
        values[d - 1, e - 1] = values[e - 1, d - 1] = float(np.sum(w[sel])) / den
    return AlphaMatrix(values, ds.observed_pairs), empty


class SGD:
    def __init__(self, arrays):
        pass

    def step(self, params, grads, lr: float) -> None:
        for p, g in zip(params, grads):
            p += lr * g


class Adam:
    """Adam for gradient *ascent*."""

    def __init__(self, arrays, beta1=0.9, beta2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, params, grads, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p += lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def flat_grads(grads) -> list[np.ndarray]:
    return [a for view in grads for layer in view for a in layer]


class Trainer:
    """Stateful alternating optimizer; :func:`train` drives it to completion.

    Exposed separately so callers can interleave their own diagnostics
    between the alpha step and the psi step.
    """

    def __init__(self, ds: Dataset, specs, config: TrainConfig, state: ModelState | None = None):
        self.ds = ds
        self.config = config
        self.pairs = index_pairs(ds)
        if state is None:
            init_seed = int(stream(config.seed, "init").integers(0, 2**63 - 1))
            stack = init_params(specs, init_seed)
            state = ModelState(AlphaMatrix.ones(ds.observed_pairs, ds.num_views), stack)
        if state.encoders.num_views != ds.num_views:
            raise ValidationError(f"encoders cover {state.encoders.num_views} views, data has {ds.num_views}")
        for d in range(1, ds.num_views + 1):
            if state.encoders.input_dim(d) != ds.dims[d - 1]:
                raise ValidationError(
                    f"view {d}: encoder input {state.encoders.input_dim(d)} != data dim {ds.dims[d - 1]}"
                )
        self.state = state
        self.rng_batch = stream(config.seed, "minibatch")
        self.rng_neg = stream(config.seed, "negatives")
        self.full = FullBatch(ds) if config.full_batch else None
        if config.full_batch:
            self.tau = 1.0 if config.tau == "unbiased" else float(config.tau)
        elif config.tau == "unbiased":
            self.tau = self.pairs.count / (config.r * max(self.pairs.num_positive, 1))
        else:
            self.tau = float(config.tau)
        params = state.encoders.arrays()
        if config.optimizer == "adam":
            self.opt = Adam(params, config.beta1, config.beta2, config.eps)
        else:
            self.opt = SGD(params)
        self.t = 0
        self.events: list[str] = []

    def learning_rate(self, t: int) -> float:
        c = self.config
        if c.lr_decay_period:
            return c.lr * c.lr_decay ** (t // c.lr_decay_period)
        return c.lr

    def alpha_step(self) -> AlphaMatrix:
        c = self.config
        if self.full is not None:
            new, empty = self.full.alpha(self.state, c.clamp), []
        else:
            size = c.alpha_sample or split_sizes(c.m, c.r)[1]
            I, J = self.pairs.sample(self.rng_neg, size)
            new, empty = update_alpha((I, J), self.ds, self.state.encoders, self.state.alpha, c.clamp)
        for d, e in empty:
            self.events.append(f"iter {self.t}: empty alpha stratum ({d},{e}); value kept")
        # A zero estimate would make log mu = -inf on that view pair's positives.
        keep = {}
        for d, e in self.ds.observed_pairs:
            if new[d, e] == 0 and self.state.alpha[d, e] > 0:
                keep[(d, e)] = self.state.alpha[d, e]
                self.events.append(f"iter {self.t}: zero alpha estimate for ({d},{e}); value kept")
        self.state.alpha = new.replace(keep) if keep else new
        return self.state.alpha

    def objective(self, batch: Minibatch | None = None):
        if self.full is not None:
            return self.full.objective(self.state, self.tau, self.config.clamp)
        if batch is None:
            batch = sample_minibatch(self.ds, self.config.m, self.config.r, self.rng_batch, self.pairs)
        return minibatch_objective(batch, self.state, self.ds, self.tau, self.config.clamp)

    def psi_step(self, lr: float) -> float:
        value, grads = self.objective()
        self.opt.step(self.state.encoders.arrays(), flat_grads(grads), lr)
        return value

    def run(self, report: TrainReport | None = None) -> TrainReport:
        c = self.config
        report = report or TrainReport(tau=self.tau)
        start = time.perf_counter()
        while self.t < c.iterations:
            t = self.t
            lr = self.learning_rate(t)
            try:
                if c.alpha_update_period and t % c.alpha_update_period == 0:
                    self.alpha_step()
                value = self.psi_step(lr)
                if not math.isfinite(value):
                    raise InnerProductOverflowError(float("inf"), "objective is not finite")
            except PMvGEError as exc:
                raise TrainingError(t, exc) from exc
            report.objectives.append(value)
            report.alphas.append(self.state.alpha.pair_values())
            report.lrs.append(lr)
            if t % 100 == 0:
                log.debug("iter %d objective %.6g lr %.3g", t, value, lr)
            self.t += 1
        report.events.extend(self.events)
        report.wall_clock = time.perf_counter() - start
        report.state = self.state
        return report


def train(ds: Dataset, specs, config: TrainConfig, state: ModelState | None = None) -> TrainReport:
    """Run ``config.iterations`` alternating steps and return the trajectory.

    ``state`` (optional) is used as the starting point and is updated in place.
    """
    return Trainer(ds, specs, config, state).run()
