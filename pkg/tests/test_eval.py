import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import normalized_mutual_info_score

from pmvge.encoders import EncoderStack, init_params, linear_specs, mlp_specs
from pmvge.errors import ValidationError
from pmvge.evaluation import (
    EvalReport,
    Embedding,
    average_precision,
    embed_all,
    embed_new,
    kmeans_nmi,
    mean_average_precision,
    nmi,
    read_embedding,
    softmax_classify,
    spearman,
    spearman_locality,
    write_embedding,
    write_reports,
)
from pmvge.graph import Dataset, ViewPairSet
from pmvge.model import AlphaMatrix, ModelState

ONE = ViewPairSet([(1, 1)])


def brute_ap(query, cands, relevant):
    sims = [float(np.dot(query, c) / np.linalg.norm(query) / np.linalg.norm(c)) for c in cands]
    order = sorted(range(len(cands)), key=lambda k: (-sims[k], k))
    hits, total = 0, 0.0
    for rank, k in enumerate(order, 1):
        if k in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def brute_spearman(u, v):
    def ranks(x):
        r = np.empty(len(x))
        order = sorted(range(len(x)), key=lambda k: x[k])
        i = 0
        while i < len(x):
            j = i
            while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
                j += 1
            for k in range(i, j + 1):
                r[order[k]] = (i + j) / 2 + 1
            i = j + 1
        return r

    a, b = ranks(u), ranks(v)
    a, b = a - a.mean(), b - b.mean()
    return float(a @ b / np.sqrt((a @ a) * (b @ b)))


def dataset(X):
    X = np.asarray(X, dtype=float)
    return Dataset.from_nodes([X.shape[1]], np.ones(len(X)), X, None, ONE)


# -- embeddings --------------------------------------------------------------


def test_zero_tanh_encoder_embeds_to_zero():
    stack = init_params([mlp_specs(2, [3], 2, "tanh")], 0)
    for a in stack.arrays():
        a[...] = 0
    emb = embed_all(ModelState(AlphaMatrix.ones(ONE, 1), stack), dataset([[1, 2], [3, 4]]))
    np.testing.assert_array_equal(emb.Y, 0)


def test_identity_encoder_and_inductive_embedding():
    stack = EncoderStack([linear_specs(2, 2)], [[(np.eye(2), np.zeros(2))]])
    state = ModelState(AlphaMatrix.ones(ONE, 1), stack)
    X = np.array([[1.0, 2.0], [-3.0, 0.5]])
    emb = embed_all(state, dataset(X))
    np.testing.assert_array_equal(emb.Y, X)
    np.testing.assert_array_equal(embed_new(state, 1, X[1]), emb.Y[1])


def test_embedding_file_round_trip(tmp_path):
    emb = Embedding(np.random.default_rng(0).normal(size=(4, 3)), [1, 2, 2, 1])
    write_embedding(tmp_path / "e.tsv", emb)
    back = read_embedding(tmp_path / "e.tsv")
    np.testing.assert_array_equal(back.Y, emb.Y)
    np.testing.assert_array_equal(back.node_view, emb.node_view)
    named = Embedding(emb.Y, emb.node_view, ("a", "b", "c", "d"))
    write_embedding(tmp_path / "n.tsv", named)
    assert read_embedding(tmp_path / "n.tsv").names == ("a", "b", "c", "d")
    with pytest.raises(ValidationError):
        Embedding([[np.nan]], [1])


# -- average precision -------------------------------------------------------


def test_ap_examples():
    assert average_precision([1, 0], [[1, 0], [0, 1], [1, 0.1]], [0, 2]) == 1.0
    assert average_precision([1, 0], [[1, 0], [0, 1]], [1]) == 0.5
    with pytest.raises(ValidationError):
        average_precision([1, 0], [[1, 0]], [])


def test_ap_zero_norm_names_candidate():
    with pytest.raises(ValidationError, match="candidate 1"):
        average_precision([1, 0], [[1, 0], [0, 0]], [0])
    with pytest.raises(ValidationError, match="query"):
        average_precision([0, 0], [[1, 0]], [0])


def test_ap_ties_broken_by_index():
    # both candidates identical: index 0 ranks first
    assert average_precision([1, 1], [[2, 2], [1, 1]], [1]) == 0.5
    assert average_precision([1, 1], [[2, 2], [1, 1]], [0]) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_ap_matches_brute_force_and_is_scale_invariant(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 15))
    q = rng.normal(size=3)
    C = rng.normal(size=(n, 3))
    rel = set(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist())
    ap = average_precision(q, C, rel)
    assert ap == pytest.approx(brute_ap(q, C, rel), abs=1e-12)
    assert 0 <= ap <= 1
    assert average_precision(2.5 * q, 0.3 * C, rel) == pytest.approx(ap, abs=1e-12)


def test_mean_ap_over_views():
    Y = np.array([[1.0, 0], [0, 1.0], [1.0, 0.1], [0.1, 1.0]])
    emb = Embedding(Y, [1, 1, 2, 2])
    value, nq = mean_average_precision(emb, [(0, 2), (3, 1)], 1, 2)
    assert nq == 2 and value == 1.0


# -- clustering --------------------------------------------------------------


def test_nmi_examples_and_properties():
    a = np.array([0, 0, 1, 1, 2, 2])
    assert nmi(a, a) == pytest.approx(1.0)
    assert nmi(np.zeros(6), a) == 0.0
    b = np.array([1, 0, 1, 1, 2, 0])
    assert nmi(a, b) == pytest.approx(nmi(b, a))
    perm = np.array([2, 0, 1])[a]
    assert nmi(perm, b) == pytest.approx(nmi(a, b))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_nmi_matches_sklearn(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 80))
    a, b = rng.integers(0, 4, size=n), rng.integers(0, 3, size=n)
    if len(set(a)) > 1 and len(set(b)) > 1:
        expected = normalized_mutual_info_score(a, b, average_method="geometric")
        assert nmi(a, b) == pytest.approx(expected, abs=1e-12)


def test_kmeans_separated_blobs():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        labels = np.repeat([0, 1], 50)
        Y = rng.normal(size=(100, 2)) + 8.0 * labels[:, None]
        assert kmeans_nmi(Y, labels, 2, seed=seed) > 0.95


def test_kmeans_degenerate_points(caplog):
    with caplog.at_level(logging.WARNING):
        assert kmeans_nmi(np.ones((6, 2)), [0, 0, 0, 1, 1, 1], 2) == 0.0
    assert "identical" in caplog.text


def test_kmeans_preconditions():
    with pytest.raises(ValidationError):
        kmeans_nmi(np.eye(3), [0, 1, 2], 1)
    with pytest.raises(ValidationError):
        kmeans_nmi(np.eye(2), [0, 1], 3)


def test_kmeans_deterministic():
    Y = np.random.default_rng(0).normal(size=(60, 3))
    labels = np.arange(60) % 3
    assert kmeans_nmi(Y, labels, 3, seed=4) == kmeans_nmi(Y, labels, 3, seed=4)


# -- classification ----------------------------------------------------------


def test_classify_separable():
    X = np.array([[-1.0], [-1.2], [1.0], [1.3]])
    assert softmax_classify(X, [1, 1, 2, 2], [[-0.9], [1.1]], [1, 2]) == 1.0


def test_classify_memorized_point():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 2)) + np.repeat([[0, 0], [6, 6], [0, 6]], 10, axis=0)
    y = np.repeat([1, 2, 3], 10)
    assert softmax_classify(X, y, X[12:13], [2]) == 1.0


def test_classify_shuffled_labels_near_chance():
    accs = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(200, 3))
        y = rng.permutation(np.repeat([0, 1], 100))
        accs.append(softmax_classify(X[:100], y[:100], X[100:], y[100:], seed=seed))
    assert abs(np.mean(accs) - 0.5) < 0.1


def test_classify_missing_class():
    with pytest.raises(ValidationError, match="absent"):
        softmax_classify([[0.0], [1.0]], [1, 2], [[0.5]], [3])
    with pytest.raises(ValidationError):
        softmax_classify([[0.0], [1.0]], [1, 1], [[0.5]], [1])


def test_classifier_shift_invariance():
    from pmvge.evaluation import fit_softmax

    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 2))
    y = (X[:, 0] > 0).astype(int)
    model = fit_softmax(X, y)
    shifted = model.scores(X) + 7.0
    np.testing.assert_array_equal(np.argmax(shifted, axis=1), np.argmax(model.scores(X), axis=1))


# -- locality ----------------------------------------------------------------


def test_spearman_identity_and_reversal():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 3))
    ds = dataset(X)
    assert spearman_locality(ds, X, 1, 200, seed=1) == pytest.approx(1.0)
    u = rng.normal(size=50)
    assert spearman(u, -u) == pytest.approx(-1.0)


def test_spearman_ties_match_brute_force():
    u = np.array([1.0, 2.0, 2.0, 3.0, 5.0, 5.0, 5.0, 0.0])
    v = np.array([2.0, 1.0, 4.0, 4.0, 3.0, 9.0, 9.0, 1.0])
    assert spearman(u, v) == pytest.approx(brute_spearman(u, v), abs=1e-12)


def test_spearman_monotone_invariance_and_errors():
    rng = np.random.default_rng(3)
    u, v = rng.normal(size=40), rng.normal(size=40)
    assert spearman(np.exp(u), v**3) == pytest.approx(spearman(u, v), abs=1e-12)
    with pytest.raises(ValidationError):
        spearman(np.ones(5), u[:5])
    with pytest.raises(ValidationError):
        spearman_locality(dataset(rng.normal(size=(5, 2))), np.zeros((5, 2)), 1, 1, 0)


# -- reports -----------------------------------------------------------------


def test_report_ranges_and_csv(tmp_path):
    with pytest.raises(ValidationError):
        EvalReport("nmi", "nmi", 1.5, 0)
    EvalReport("spearman", "spearman", -1.0, 0)
    write_reports(tmp_path / "r.csv", [EvalReport("ap", "ap", 0.25, 3, {"queries": 4})])
    assert (tmp_path / "r.csv").read_text().splitlines() == ["task,seed,metric,value,settings", "ap,3,ap,0.25,queries=4"]
