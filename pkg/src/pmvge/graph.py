"""
Multi-view graph data model.

A :class:`Dataset` holds ``n`` nodes, each belonging to one view ``d`` in
``1..D`` with a data vector of that view's dimension, a sparse symmetric
set of nonnegative link weights, and the set of view pairs for which links
are observed. Node ids are dense and 0-based; view ids are 1-based.

File formats (UTF-8, ``#`` comment lines ignored)::

    nodes.tsv   node_id <TAB> view_id <TAB> v1,v2,...,vp
    edges.tsv   node_i  <TAB> node_j  <TAB> weight
    labels.tsv  node_id <TAB> class_id
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DimensionMismatchError, ValidationError


@dataclass(frozen=True)
class ViewSpec:
    view_id: int
    dim: int

    def __post_init__(self):
        if self.view_id < 1:
            raise ValidationError(f"view ids start at 1, got {self.view_id}")
        if self.dim < 1:
            raise ValidationError(f"view {self.view_id}: dim must be >= 1, got {self.dim}")


class ViewPairSet:
    """Set of unordered view pairs ``(d, e)`` with observed links.

    Pairs are normalized to ``d <= e`` and iterate in sorted order.
    """

    def __init__(self, pairs: Iterable[tuple[int, int]]):
        norm = set()
        for d, e in pairs:
            d, e = int(d), int(e)
            if d < 1 or e < 1:
                raise ValidationError(f"view pair ({d},{e}) has a view id < 1")
            norm.add((min(d, e), max(d, e)))
        if not norm:
            raise ValidationError("observed view-pair set must be nonempty")
        self._pairs = tuple(sorted(norm))

    @classmethod
    def all_pairs(cls, num_views: int) -> "ViewPairSet":
        return cls((d, e) for d in range(1, num_views + 1) for e in range(d, num_views + 1))

    @classmethod
    def parse(cls, text: str, num_views: int | None = None) -> "ViewPairSet":
        """Parse ``"1-1,1-2"`` style text; ``"all"`` needs ``num_views``."""
        text = text.strip()
        if text == "all":
            if num_views is None:
                raise ValidationError("'all' view pairs requires the number of views")
            return cls.all_pairs(num_views)
        pairs = []
        for tok in text.split(","):
            try:
                d, e = tok.strip().split("-")
                pairs.append((int(d), int(e)))
            except ValueError:
                raise ValidationError(f"bad view pair {tok!r}; expected e.g. '1-2'") from None
        return cls(pairs)

    def __contains__(self, pair) -> bool:
        d, e = pair
        return (min(d, e), max(d, e)) in self._pairs

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self._pairs)

    def __len__(self) -> int:
        return len(self._pairs)

    def __eq__(self, other) -> bool:
        return isinstance(other, ViewPairSet) and self._pairs == other._pairs

    def __hash__(self):
        return hash(self._pairs)

    def __repr__(self) -> str:
        return f"ViewPairSet({list(self._pairs)})"

    def format(self) -> str:
        return ",".join(f"{d}-{e}" for d, e in self._pairs)

    def max_view(self) -> int:
        return max(e for _, e in self._pairs)

    def mask(self, num_views: int) -> np.ndarray:
        """Symmetric boolean ``D x D`` matrix, True on observed pairs."""
        m = np.zeros((num_views, num_views), dtype=bool)
        for d, e in self._pairs:
            if e > num_views:
                raise ValidationError(f"view pair ({d},{e}) exceeds D={num_views}")
            m[d - 1, e - 1] = m[e - 1, d - 1] = True
        return m


class LinkWeights:
    """Sparse symmetric link weights keyed by unordered pairs ``i < j``.

    Entries are kept sorted by ``(i, j)``; lookups use binary search on the
    flattened key ``i * n + j``.
    """

    def __init__(self, n: int, i: np.ndarray, j: np.ndarray, w: np.ndarray):
        self.n = int(n)
        self.i = np.asarray(i, dtype=np.int64)
        self.j = np.asarray(j, dtype=np.int64)
        self.w = np.asarray(w, dtype=np.float64)
        self._keys = self.i * self.n + self.j

    @classmethod
    def from_triples(cls, n: int, i, j, w) -> "LinkWeights":
        """Validate raw ``(i, j, w)`` rows and merge duplicates by summation."""
        i = np.asarray(i, dtype=np.int64).ravel()
        j = np.asarray(j, dtype=np.int64).ravel()
        w = np.asarray(w, dtype=np.float64).ravel()
        if not (len(i) == len(j) == len(w)):
            raise ValidationError("edge arrays must have equal length")
        if len(i):
            bad = np.flatnonzero((i < 0) | (i >= n) | (j < 0) | (j >= n))
            if len(bad):
                k = bad[0]
                raise ValidationError(f"edge ({i[k]},{j[k]}) references an unknown node id (n={n})")
            loops = np.flatnonzero(i == j)
            if len(loops):
                raise ValidationError(f"self-loop on node {i[loops[0]]}: w_ii must be 0")
            if not np.all(np.isfinite(w)):
                raise ValidationError("edge weights must be finite")
            neg = np.flatnonzero(w < 0)
            if len(neg):
                k = neg[0]
                raise ValidationError(f"negative weight {w[k]} on edge ({i[k]},{j[k]})")
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        keys = lo * n + hi
        uniq, inv = np.unique(keys, return_inverse=True)
        summed = np.zeros(len(uniq))
        np.add.at(summed, inv, w)
        return cls(n, uniq // n, uniq % n, summed)

    def __len__(self) -> int:
        return len(self._keys)

    def get(self, i: int, j: int) -> float:
        if i == j:
            return 0.0
        key = min(i, j) * self.n + max(i, j)
        k = np.searchsorted(self._keys, key)
        if k < len(self._keys) and self._keys[k] == key:
            return float(self.w[k])
        return 0.0

    def lookup(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`get` for arrays of unordered pairs."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        keys = np.minimum(i, j) * self.n + np.maximum(i, j)
        out = np.zeros(keys.shape)
        if len(self._keys) == 0:
            return out
        k = np.searchsorted(self._keys, keys)
        k_clip = np.minimum(k, len(self._keys) - 1)
        hit = self._keys[k_clip] == keys
        out[hit] = self.w[k_clip[hit]]
        out[i == j] = 0.0
        return out

    def items(self) -> Iterator[tuple[int, int, float]]:
        for a, b, c in zip(self.i.tolist(), self.j.tolist(), self.w.tolist()):
            yield a, b, c

    def to_dense(self) -> np.ndarray:
        W = np.zeros((self.n, self.n))
        W[self.i, self.j] = self.w
        W[self.j, self.i] = self.w
        return W


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable multi-view graph.

    Attributes
    ----------
    views : tuple of ViewSpec
        One entry per view, ``views[d - 1].view_id == d``.
    node_view : ndarray of int, shape (n,)
        View id (1-based) of every node.
    view_data : tuple of ndarray
        ``view_data[d - 1]`` stacks the data vectors of view ``d`` in node-id order.
    view_row : ndarray of int, shape (n,)
        Row of each node inside its view's matrix.
    weights : LinkWeights
    observed_pairs : ViewPairSet
    labels : ndarray of int or None
        Class id per node, ``-1`` where unlabeled.
    node_names : tuple of str or None
        External ids when the input used non-dense ids.
    """

    views: tuple[ViewSpec, ...]
    node_view: np.ndarray
    view_data: tuple[np.ndarray, ...]
    view_row: np.ndarray
    weights: LinkWeights
    observed_pairs: ViewPairSet
    labels: np.ndarray | None = None
    node_names: tuple[str, ...] | None = None

    @classmethod
    def from_nodes(
        cls,
        dims: Sequence[int],
        node_view: Sequence[int],
        vectors: Sequence[Sequence[float]] | None,
        edges: tuple | None,
        observed_pairs: ViewPairSet | Iterable[tuple[int, int]],
        labels: Sequence[int] | None = None,
        node_names: Sequence[str] | None = None,
        view_data: Sequence[np.ndarray] | None = None,
    ) -> "Dataset":
        """Build and validate a dataset.

        Either give one vector per node in ``vectors`` or pre-stacked
        per-view matrices in ``view_data`` (rows in node-id order).
        ``edges`` is ``(i, j, w)`` arrays; duplicates are summed.
        """
        views = tuple(ViewSpec(d + 1, int(p)) for d, p in enumerate(dims))
        D = len(views)
        node_view = np.asarray(node_view, dtype=np.int64).ravel()
        n = len(node_view)
        if n and (node_view.min() < 1 or node_view.max() > D):
            raise ValidationError(f"node view ids must lie in 1..{D}")
        view_row = np.zeros(n, dtype=np.int64)
        for d in range(1, D + 1):
            idx = np.flatnonzero(node_view == d)
            view_row[idx] = np.arange(len(idx))

        if view_data is None:
            if vectors is None or len(vectors) != n:
                raise ValidationError("need exactly one data vector per node")
            buckets: list[list[np.ndarray]] = [[] for _ in range(D)]
            for node, (d, x) in enumerate(zip(node_view, vectors)):
                x = np.asarray(x, dtype=np.float64).ravel()
                if len(x) != views[d - 1].dim:
                    raise DimensionMismatchError(
                        f"node {node}: vector length {len(x)} != dim {views[d - 1].dim} of view {d}"
                    )
                buckets[d - 1].append(x)
            mats = tuple(
                np.vstack(b) if b else np.zeros((0, views[k].dim)) for k, b in enumerate(buckets)
            )
        else:
            mats = tuple(np.array(m, dtype=np.float64, ndmin=2) for m in view_data)
            if len(mats) != D:
                raise ValidationError(f"expected {D} view matrices, got {len(mats)}")
            for k, m in enumerate(mats):
                count = int(np.sum(node_view == k + 1))
                if m.shape != (count, views[k].dim):
                    raise DimensionMismatchError(
                        f"view {k + 1}: data shape {m.shape} != ({count}, {views[k].dim})"
                    )
        for k, m in enumerate(mats):
            if not np.all(np.isfinite(m)):
                raise ValidationError(f"view {k + 1}: data vectors must be finite")
            m.setflags(write=False)

        if not isinstance(observed_pairs, ViewPairSet):
            observed_pairs = ViewPairSet(observed_pairs)
        allowed = observed_pairs.mask(max(D, observed_pairs.max_view()))[:D, :D]
        if observed_pairs.max_view() > D:
            raise ValidationError(f"observed pairs reference views beyond D={D}")

        if edges is None:
            edges = ((), (), ())
        weights = LinkWeights.from_triples(n, *edges)
        if len(weights):
            ok = allowed[node_view[weights.i] - 1, node_view[weights.j] - 1]
            bad = np.flatnonzero(~ok & (weights.w > 0))
            if len(bad):
                k = bad[0]
                a, b = int(weights.i[k]), int(weights.j[k])
                raise ValidationError(
                    f"edge ({a},{b}) joins views ({node_view[a]},{node_view[b]}) "
                    f"which are not in the observed pairs {observed_pairs.format()}"
                )

        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64).ravel()
            if len(labels) != n:
                raise ValidationError("labels must have one entry per node (-1 = unlabeled)")
            labels.setflags(write=False)
        if node_names is not None:
            node_names = tuple(str(s) for s in node_names)
            if len(node_names) != n:
                raise ValidationError("node_names must have one entry per node")

        node_view.setflags(write=False)
        view_row.setflags(write=False)
        return cls(views, node_view, mats, view_row, weights, observed_pairs, labels, node_names)

    @property
    def n(self) -> int:
        return len(self.node_view)

    @property
    def num_views(self) -> int:
        return len(self.views)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(v.dim for v in self.views)

    def x(self, i: int) -> np.ndarray:
        d = int(self.node_view[i])
        return self.view_data[d - 1][self.view_row[i]]

    def nodes_of_view(self, d: int) -> np.ndarray:
        return np.flatnonzero(self.node_view == d)

    def allowed(self) -> np.ndarray:
        return self.observed_pairs.mask(self.num_views)

    def name_of(self, i: int) -> str:
        return self.node_names[i] if self.node_names is not None else str(i)


# ---------------------------------------------------------------------------
# Pair index
# ---------------------------------------------------------------------------


def _triangle_decode(k: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Map row-major indices of the strict upper triangle of an ``m x m``
    matrix back to ``(a, b)`` with ``a < b``."""
    k = np.asarray(k, dtype=np.int64)
    c = 2 * m - 1
    a = np.floor((c - np.sqrt(np.maximum(c * c - 8.0 * k, 0.0))) / 2).astype(np.int64)
    a = np.clip(a, 0, max(m - 2, 0))

    def start(r):
        return r * m - r * (r + 1) // 2

    # floating point may put a one row off in either direction
    a = np.where(start(a) > k, a - 1, a)
    a = np.where(start(a + 1) <= k, a + 1, a)
    b = k - start(a) + a + 1
    return a, b


class PairIndex:
    """The index set ``I_n = {(i, j) : i < j, (d_i, d_j) observed}``.

    Pairs are never materialized wholesale; enumeration runs in row blocks
    and uniform sampling maps a flat index to a pair arithmetically.
    """

    def __init__(self, ds: Dataset):
        self.ds = ds
        self._allowed = ds.allowed()
        self._members = [ds.nodes_of_view(d) for d in range(1, ds.num_views + 1)]
        strata = []
        for d, e in ds.observed_pairs:
            nd, ne = len(self._members[d - 1]), len(self._members[e - 1])
            count = nd * (nd - 1) // 2 if d == e else nd * ne
            strata.append((d, e, count))
        self.strata = tuple(strata)
        self._offsets = np.cumsum([0] + [c for _, _, c in strata])
        self.count = int(self._offsets[-1])

        w = ds.weights
        pos = w.w > 0
        self.pos_i, self.pos_j, self.pos_w = w.i[pos], w.j[pos], w.w[pos]

    def __len__(self) -> int:
        return self.count

    @property
    def num_positive(self) -> int:
        return len(self.pos_w)

    def iter_blocks(self, block_rows: int = 512) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield ``(I, J)`` arrays covering ``I_n`` in ascending ``(i, j)`` order."""
        n = self.ds.n
        view0 = self.ds.node_view - 1
        for lo in range(0, n, block_rows):
            hi = min(n, lo + block_rows)
            rows = np.arange(lo, hi)
            cols = np.arange(n)
            keep = (cols[None, :] > rows[:, None]) & self._allowed[view0[rows]][:, view0]
            I, J = np.nonzero(keep)
            if len(I):
                yield (I + lo).astype(np.int64), J.astype(np.int64)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        blocks = list(self.iter_blocks())
        if not blocks:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        return np.concatenate([b[0] for b in blocks]), np.concatenate([b[1] for b in blocks])

    def __iter__(self) -> Iterator[tuple[int, int]]:
        for I, J in self.iter_blocks():
            yield from zip(I.tolist(), J.tolist())

    def pair_at(self, flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Decode flat indices in ``[0, count)`` (stratum-major order) to pairs."""
        flat = np.asarray(flat, dtype=np.int64)
        s = np.searchsorted(self._offsets, flat, side="right") - 1
        I = np.empty(len(flat), dtype=np.int64)
        J = np.empty(len(flat), dtype=np.int64)
        for k, (d, e, _) in enumerate(self.strata):
            sel = np.flatnonzero(s == k)
            if not len(sel):
                continue
            local = flat[sel] - self._offsets[k]
            md, me = self._members[d - 1], self._members[e - 1]
            if d == e:
                a, b = _triangle_decode(local, len(md))
                u, v = md[a], md[b]
            else:
                u, v = md[local // len(me)], me[local % len(me)]
            I[sel] = np.minimum(u, v)
            J[sel] = np.maximum(u, v)
        return I, J

    def sample(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``size`` pairs uniformly with replacement from ``I_n``."""
        if self.count == 0:
            raise ValidationError("cannot sample from an empty pair index")
        return self.pair_at(rng.integers(0, self.count, size=size))


def index_pairs(ds: Dataset) -> PairIndex:
    return PairIndex(ds)


# ---------------------------------------------------------------------------
# TSV I/O
# ---------------------------------------------------------------------------


def _rows(path: Path) -> Iterator[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line.split("\t")


def _pairs_hint(path: Path) -> str | None:
    """``observed_pairs=...`` from the edge file's header comment, if present."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if first.startswith("#"):
        for token in first.split():
            if token.startswith("observed_pairs="):
                return token.split("=", 1)[1] or None
    return None


def load_dataset(
    node_path,
    edge_path,
    pair_spec: ViewPairSet | str | None = None,
    label_path=None,
) -> Dataset:
    """Read and validate a dataset from the TSV formats in the module docstring.

    ``edge_path=None`` reads the nodes alone (no links). ``pair_spec``
    defaults to the ``observed_pairs=`` hint written by :func:`write_dataset`,
    else to all view pairs. Node ids that are exactly
    ``0..n-1`` are used as-is; any other ids are mapped to dense indices in
    file order and kept as ``node_names``.
    """
    node_path = Path(node_path)
    raw_ids, views, vecs = [], [], []
    for lineno, cols in _rows(node_path):
        if len(cols) != 3:
            raise ValidationError(f"{node_path}:{lineno}: expected 3 tab-separated columns")
        try:
            views.append(int(cols[1]))
            vecs.append(np.array([float(v) for v in cols[2].split(",")]))
        except ValueError as exc:
            raise ValidationError(f"{node_path}:{lineno}: {exc}") from None
        raw_ids.append(cols[0].strip())
    if len(set(raw_ids)) != len(raw_ids):
        raise ValidationError(f"{node_path}: duplicate node ids")

    n = len(raw_ids)
    try:
        as_int = [int(s) for s in raw_ids]
        dense = sorted(as_int) == list(range(n))
    except ValueError:
        dense = False
    if dense:
        order = np.argsort(as_int)
        views = [views[k] for k in order]
        vecs = [vecs[k] for k in order]
        id_of = {str(i): i for i in range(n)}
        names = None
    else:
        id_of = {s: k for k, s in enumerate(raw_ids)}
        names = raw_ids

    D = max(views) if views else 0
    dims = []
    for d in range(1, D + 1):
        first = next((v for v, dv in zip(vecs, views) if dv == d), None)
        if first is None:
            raise ValidationError(f"{node_path}: view ids must be contiguous 1..{D}; view {d} is empty")
        dims.append(len(first))

    ei, ej, ew = [], [], []
    for lineno, cols in _rows(Path(edge_path)) if edge_path is not None else ():
        if len(cols) != 3:
            raise ValidationError(f"{edge_path}:{lineno}: expected 3 tab-separated columns")
        a, b = cols[0].strip(), cols[1].strip()
        if a not in id_of or b not in id_of:
            missing = a if a not in id_of else b
            raise ValidationError(f"{edge_path}:{lineno}: unknown node id {missing!r}")
        if a == b:
            raise ValidationError(f"{edge_path}:{lineno}: self-loop on node {a!r}")
        ei.append(id_of[a])
        ej.append(id_of[b])
        try:
            ew.append(float(cols[2]))
        except ValueError:
            raise ValidationError(f"{edge_path}:{lineno}: bad weight {cols[2]!r}") from None

    if pair_spec is None and edge_path is not None:
        pair_spec = _pairs_hint(Path(edge_path))
    if pair_spec is None:
        pairs = ViewPairSet.all_pairs(D)
    elif isinstance(pair_spec, str):
        pairs = ViewPairSet.parse(pair_spec, D)
    else:
        pairs = pair_spec

    labels = None
    if label_path is not None:
        labels = np.full(n, -1, dtype=np.int64)
        for lineno, cols in _rows(Path(label_path)):
            if len(cols) != 2:
                raise ValidationError(f"{label_path}:{lineno}: expected 2 tab-separated columns")
            if cols[0].strip() not in id_of:
                raise ValidationError(f"{label_path}:{lineno}: unknown node id {cols[0]!r}")
            labels[id_of[cols[0].strip()]] = int(cols[1])

    return Dataset.from_nodes(dims, views, vecs, (ei, ej, ew), pairs, labels, names)


def format_vector(v: np.ndarray) -> str:
    return ",".join(repr(float(x)) for x in v)


def write_dataset(ds: Dataset, out_dir, prefix: str = "") -> dict[str, Path]:
    """Write ``nodes.tsv``, ``edges.tsv`` and (if labelled) ``labels.tsv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"nodes": out / f"{prefix}nodes.tsv", "edges": out / f"{prefix}edges.tsv"}
    with open(paths["nodes"], "w", encoding="utf-8") as fh:
        fh.write("# node_id\tview_id\tvector\n")
        for i in range(ds.n):
            fh.write(f"{ds.name_of(i)}\t{ds.node_view[i]}\t{format_vector(ds.x(i))}\n")
    with open(paths["edges"], "w", encoding="utf-8") as fh:
        fh.write(f"# node_i\tnode_j\tweight\tobserved_pairs={ds.observed_pairs.format()}\n")
        for a, b, w in ds.weights.items():
            fh.write(f"{ds.name_of(a)}\t{ds.name_of(b)}\t{w!r}\n")
    if ds.labels is not None:
        paths["labels"] = out / f"{prefix}labels.tsv"
        with open(paths["labels"], "w", encoding="utf-8") as fh:
            fh.write("# node_id\tclass_id\n")
            for i in range(ds.n):
                if ds.labels[i] >= 0:
                    fh.write(f"{ds.name_of(i)}\t{ds.labels[i]}\n")
    return paths

