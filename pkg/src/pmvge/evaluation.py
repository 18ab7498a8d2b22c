"""
Embedding export and downstream tasks.

Tasks: retrieval average precision under cosine ranking, k-means clustering
scored by normalized mutual information, multinomial logistic-regression
classification accuracy, and a Spearman locality diagnostic comparing
input-space and feature-space inner products.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize, stats
from sklearn.cluster import KMeans

from .errors import DimensionMismatchError, ValidationError
from .graph import Dataset, format_vector
from .model import ModelState, embed_nodes

log = logging.getLogger(__name__)


@dataclass
class Embedding:
    Y: np.ndarray
    node_view: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        self.Y = np.array(self.Y, dtype=np.float64, ndmin=2)
        self.node_view = np.asarray(self.node_view, dtype=np.int64)
        if len(self.Y) != len(self.node_view):
            raise DimensionMismatchError("one view tag per embedded node is required")
        if not np.all(np.isfinite(self.Y)):
            raise ValidationError("embedding contains non-finite entries")

    @property
    def K(self) -> int:
        return self.Y.shape[1]

    def name_of(self, i: int) -> str:
        return self.names[i] if self.names is not None else str(i)

    def index(self) -> dict[str, int]:
        return {self.name_of(i): i for i in range(len(self.Y))}


def embed_all(state: ModelState, ds: Dataset) -> Embedding:
    return Embedding(embed_nodes(state.encoders, ds), ds.node_view, ds.node_names)


def embed_new(state: ModelState, view: int, X) -> np.ndarray:
    """Encode data vectors that were not part of training."""
    return state.encoders.forward(view, np.asarray(X, dtype=np.float64))


def write_embedding(path, emb: Embedding) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# node_id\tview_id\tfeature\n")
        for i in range(len(emb.Y)):
            fh.write(f"{emb.name_of(i)}\t{emb.node_view[i]}\t{format_vector(emb.Y[i])}\n")


def read_embedding(path) -> Embedding:
    names, views, rows = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 tab-separated columns")
            names.append(cols[0])
            views.append(int(cols[1]))
            rows.append([float(v) for v in cols[2].split(",")])
    if len({len(r) for r in rows}) > 1:
        raise ValidationError(f"{path}: feature vectors have different lengths")
    dense = names == [str(i) for i in range(len(names))]
    return Embedding(np.array(rows).reshape(len(rows), -1), views, None if dense else tuple(names))


# ---------------------------------------------------------------------------
# Average precision
# ---------------------------------------------------------------------------


def average_precision(query, candidates, relevant: Iterable[int]) -> float:
    """AP of ``relevant`` candidate indices when ranked by cosine similarity to ``query``.

    Ties are broken by candidate index (lower first).
    """
    q = np.asarray(query, dtype=np.float64).ravel()
    C = np.array(candidates, dtype=np.float64, ndmin=2)
    if len(C) == 0:
        raise ValidationError("no candidates to rank")
    relevant = sorted(set(int(r) for r in relevant))
    if not relevant:
        raise ValidationError("average precision is undefined without relevant items")
    if relevant[0] < 0 or relevant[-1] >= len(C):
        raise ValidationError("relevant index out of range")
    qn = np.linalg.norm(q)
    if qn == 0:
        raise ValidationError("query vector has zero norm; cosine similarity undefined")
    cn = np.linalg.norm(C, axis=1)
    if np.any(cn == 0):
        raise ValidationError(f"candidate {int(np.flatnonzero(cn == 0)[0])} has zero norm; cosine undefined")
    sim = (C @ q) / (cn * qn)
    order = np.lexsort((np.arange(len(C)), -sim))
    is_rel = np.zeros(len(C), dtype=bool)
    is_rel[relevant] = True
    hits = is_rel[order]
    ranks = np.flatnonzero(hits) + 1
    precisions = np.arange(1, len(ranks) + 1) / ranks
    return float(precisions.mean())


def mean_average_precision(
    emb: Embedding,
    truth: Sequence[tuple[int, int]],
    query_view: int,
    candidate_view: int,
) -> tuple[float, int]:
    """Mean AP over query-view nodes that have at least one relevant candidate.

    ``truth`` lists (query, candidate) node-index pairs in either order.
    Returns ``(mean AP, number of queries)``.
    """
    queries = np.flatnonzero(emb.node_view == query_view)
    cands = np.flatnonzero(emb.node_view == candidate_view)
    pos = {int(c): k for k, c in enumerate(cands)}
    qset = set(int(q) for q in queries)
    rel: dict[int, set[int]] = {}
    for a, b in truth:
        for q, c in ((a, b), (b, a)):
            if q in qset and c in pos and q != c:
                rel.setdefault(q, set()).add(pos[c])
    if not rel:
        raise ValidationError("no query has a relevant candidate")
    aps = [average_precision(emb.Y[q], emb.Y[cands], rel[q]) for q in sorted(rel)]
    return float(np.mean(aps)), len(aps)


# ---------------------------------------------------------------------------
# Clustering
# ---------------------------------------------------------------------------


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(a, b) -> float:
    """``I(a; b) / sqrt(H(a) H(b))`` with natural logs; 0 if either entropy is 0."""
    a = np.asarray(a)
    b = np.asarray(b)
    if len(a) != len(b):
        raise ValidationError("partitions must label the same items")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    ha, hb = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if ha == 0 or hb == 0:
        return 0.0
    n = table.sum()
    nz = table > 0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    mi = float(np.sum(table[nz] / n * np.log(table[nz] * n / outer[nz])))
    return min(max(mi / math.sqrt(ha * hb), 0.0), 1.0)


def kmeans(Y, k: int, seed: int, restarts: int = 10) -> tuple[np.ndarray, float]:
    """Best-of-``restarts`` k-means++ (lowest SSE, ties to the earliest restart)."""
    Y = np.array(Y, dtype=np.float64, ndmin=2)
    if k < 2:
        raise ValidationError("k must be >= 2")
    if len(Y) < k:
        raise ValidationError(f"need at least k={k} points, got {len(Y)}")
    seeds = np.random.SeedSequence(seed).generate_state(restarts)
    best_labels, best_sse = None, math.inf
    for s in seeds:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            km = KMeans(n_clusters=k, init="k-means++", n_init=1, random_state=int(s)).fit(Y)
        if km.inertia_ < best_sse:
            best_labels, best_sse = km.labels_, float(km.inertia_)
    return best_labels, best_sse


def kmeans_nmi(Y, labels, k: int, seed: int = 0, restarts: int = 10) -> float:
    Y = np.array(Y, dtype=np.float64, ndmin=2)
    if np.all(Y == Y[0]):
        log.warning("all feature vectors are identical; clustering is degenerate, NMI = 0")
        return 0.0
    clusters, _ = kmeans(Y, k, seed, restarts)
    return nmi(clusters, labels)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


@dataclass
class SoftmaxModel:
    classes: np.ndarray
    W: np.ndarray  # (K + 1) x C, last row is the bias
    converged: bool = True

    def scores(self, Y) -> np.ndarray:
        Y = np.array(Y, dtype=np.float64, ndmin=2)
        return Y @ self.W[:-1] + self.W[-1]

    def predict(self, Y) -> np.ndarray:
        return self.classes[np.argmax(self.scores(Y), axis=1)]


def fit_softmax(Y, labels, reg: float = 1e-4, seed: int = 0, tol: float = 1e-6, max_iter: int = 5000) -> SoftmaxModel:
    """Multinomial logistic regression, mean cross-entropy + ``reg/2 ||W||^2`` (bias unpenalized)."""
    Y = np.array(Y, dtype=np.float64, ndmin=2)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValidationError("need at least two classes in the training set")
    n, K = Y.shape
    C = len(classes)
    T = np.zeros((n, C))
    T[np.arange(n), np.searchsorted(classes, labels)] = 1.0
    Z = np.hstack([Y, np.ones((n, 1))])
    penal = np.ones((K + 1, C))
    penal[-1] = 0.0

    def f(w):
        W = w.reshape(K + 1, C)
        S = Z @ W
        S -= S.max(axis=1, keepdims=True)
        logp = S - np.log(np.exp(S).sum(axis=1, keepdims=True))
        loss = -np.sum(T * logp) / n + 0.5 * reg * np.sum(penal * W * W)
        grad = Z.T @ (np.exp(logp) - T) / n + reg * penal * W
        return loss, grad.ravel()

    w0 = np.random.default_rng(seed).normal(0.0, 0.01, size=(K + 1) * C)
    res = optimize.minimize(f, w0, jac=True, method="L-BFGS-B", options={"gtol": tol, "maxiter": max_iter})
    return SoftmaxModel(classes, res.x.reshape(K + 1, C), bool(res.success))


def softmax_classify(train_Y, train_labels, test_Y, test_labels, reg: float = 1e-4, seed: int = 0) -> float:
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)
    missing = set(np.unique(test_labels).tolist()) - set(np.unique(train_labels).tolist())
    if missing:
        raise ValidationError(f"classes {sorted(missing)} are absent from the training set")
    model = fit_softmax(train_Y, train_labels, reg=reg, seed=seed)
    return float(np.mean(model.predict(test_Y) == test_labels))


def split_indices(n: int, train_frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    cut = int(round(train_frac * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


# ---------------------------------------------------------------------------
# Locality
# ---------------------------------------------------------------------------


def spearman_locality(ds: Dataset, emb: Embedding | np.ndarray, view: int, sample_pairs: int, seed: int) -> float:
    """Spearman rho between ``<x, x'>`` and ``<y, y'>`` over random same-view node pairs."""
    Y = emb.Y if isinstance(emb, Embedding) else np.asarray(emb, dtype=np.float64)
    if sample_pairs < 2:
        raise ValidationError("need at least 2 sampled pairs")
    nodes = ds.nodes_of_view(view)
    if len(nodes) < 2:
        raise ValidationError(f"view {view} has fewer than 2 nodes")
    rng = np.random.default_rng(seed)
    a = rng.integers(0, len(nodes), size=sample_pairs)
    b = (a + rng.integers(1, len(nodes), size=sample_pairs)) % len(nodes)
    Xv = ds.view_data[view - 1]
    rows_a, rows_b = ds.view_row[nodes[a]], ds.view_row[nodes[b]]
    gx = np.einsum("ij,ij->i", Xv[rows_a], Xv[rows_b])
    gy = np.einsum("ij,ij->i", Y[nodes[a]], Y[nodes[b]])
    return spearman(gx, gy)


def spearman(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.all(u == u[0]) or np.all(v == v[0]):
        raise ValidationError("Spearman correlation is undefined for a constant series")
    return float(stats.spearmanr(u, v).statistic)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

METRIC_RANGES = {"ap": (0.0, 1.0), "nmi": (0.0, 1.0), "accuracy": (0.0, 1.0), "spearman": (-1.0, 1.0)}


@dataclass
class EvalReport:
    task: str
    metric: str
    value: float
    seed: int
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = METRIC_RANGES[self.metric]
        if not lo - 1e-12 <= self.value <= hi + 1e-12:
            raise ValidationError(f"{self.metric}={self.value} outside [{lo}, {hi}]")


def write_reports(path, reports: Sequence[EvalReport]) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["task", "seed", "metric", "value", "settings"])
        for r in reports:
            settings = ";".join(f"{k}={v}" for k, v in sorted(r.settings.items()))
            wr.writerow([r.task, r.seed, r.metric, repr(r.value), settings])
