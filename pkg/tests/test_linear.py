import math

import numpy as np
import pytest

from pmvge.errors import ValidationError
from pmvge.graph import Dataset, ViewPairSet
from pmvge.linear import (
    MAX_DIM,
    approx_pmvge_linear,
    build_augmented,
    cdmca_solve,
    design_from_matrices,
    embed,
    inv_sqrt_psd,
    scaling_equivalence_check,
)
from pmvge.synthetic import gen_sbm, sbm_beta


def jacobi_eigh(A, tol=1e-14, sweeps=100):
    """Cyclic Jacobi rotations; returns ascending eigenvalues and eigenvectors."""
    A = np.array(A, dtype=float)
    n = len(A)
    V = np.eye(n)
    for _ in range(sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2 * A[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q], J[q, p] = s, -s
                A = J.T @ A @ J
                V = V @ J
    lam = np.diag(A)
    order = np.argsort(lam)
    return lam[order], V[:, order]


def random_design(rng, n=None, p=None):
    n = n or int(rng.integers(5, 41))
    p = p or int(rng.integers(1, min(n, 20) + 1))
    X = rng.normal(size=(n, p))
    W = rng.poisson(0.7, size=(n, n)).astype(float)
    W = np.triu(W, 1)
    return design_from_matrices(X, W + W.T)


def test_hand_instance():
    design = design_from_matrices(np.eye(2), [[0, 1], [1, 0]])
    sol = cdmca_solve(design, 1, eps=0.0)
    np.testing.assert_allclose(sol.psi[:, 0], [1 / math.sqrt(2)] * 2, atol=1e-15)
    assert sol.eigenvalues[0] == pytest.approx(1.0)
    apr = approx_pmvge_linear(design, 1, alpha0=1.0, eps=0.0)
    assert apr.gammas[0] == pytest.approx(1.0)
    np.testing.assert_allclose(apr.psi, sol.psi, atol=1e-15)
    quarter = approx_pmvge_linear(design, 1, alpha0=4.0, eps=0.0)
    np.testing.assert_allclose(quarter.psi, 0.5 * sol.psi, atol=1e-15)


def test_zero_weights_flag_degeneracy():
    design = design_from_matrices(np.random.default_rng(0).normal(size=(6, 3)), np.zeros((6, 6)))
    sol = cdmca_solve(design, 2)
    assert sol.degenerate
    np.testing.assert_allclose(sol.eigenvalues, 0.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_constraint_and_ordering(seed):
    rng = np.random.default_rng(seed)
    design = random_design(rng)
    K = min(3, design.p)
    sol = cdmca_solve(design, K, eps=0.0)
    np.testing.assert_allclose(sol.psi.T @ design.G @ sol.psi, np.eye(K), atol=1e-10)
    assert np.all(np.diff(sol.eigenvalues) <= 0)
    # sign convention: largest-magnitude entry of each whitened eigenvector is positive
    lam, V = np.linalg.eigh(design.G)
    U = (V * np.sqrt(lam)) @ V.T @ sol.psi
    top = U[np.argmax(np.abs(U), axis=0), np.arange(K)]
    assert np.all(top > 0)


@pytest.mark.parametrize("seed", range(6))
def test_eigenpairs_match_jacobi(seed):
    rng = np.random.default_rng(100 + seed)
    p = int(rng.integers(2, 9))
    A = rng.normal(size=(p, p))
    A = A + A.T
    design = design_from_matrices(np.eye(p), A)
    sol = cdmca_solve(design, p, eps=0.0)
    lam, V = jacobi_eigh(A)
    np.testing.assert_allclose(sol.eigenvalues, lam[::-1], atol=1e-9)
    for k in range(p):
        v = V[:, p - 1 - k]
        u = sol.psi[:, k]
        assert min(np.abs(u - v).max(), np.abs(u + v).max()) < 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_cdmca_is_optimal_among_feasible_points(seed):
    rng = np.random.default_rng(200 + seed)
    design = random_design(rng, n=30, p=6)
    K = 2
    sol = cdmca_solve(design, K, eps=0.0)
    best = np.trace(sol.psi.T @ design.H @ sol.psi)
    R, _ = inv_sqrt_psd(design.G)
    for _ in range(1000):
        Q, _ = np.linalg.qr(rng.normal(size=(design.p, K)))
        psi = R @ Q
        assert np.trace(psi.T @ design.H @ psi) <= best + 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_scaling_equivalence(seed):
    rng = np.random.default_rng(300 + seed)
    design = random_design(rng)
    K = min(int(rng.integers(1, 5)), design.p)
    a = cdmca_solve(design, K)
    b = approx_pmvge_linear(design, K, alpha0=float(rng.uniform(0.5, 3)))
    report = scaling_equivalence_check(a, b, design)
    assert report.passed, report.to_text()
    # direct recomputation of <y^_i, y^_j> = sum_k gamma_k y_ik y_jk
    Yc, Yp = embed(design, a)[:, : b.K], embed(design, b)
    i, j = 0, design.X.shape[0] - 1
    assert Yp[i] @ Yp[j] == pytest.approx(np.sum(b.gammas * Yc[i] * Yc[j]), abs=1e-8)


def test_unit_gammas_give_identical_solutions():
    design = design_from_matrices(np.eye(2), [[0, 1], [1, 0]])
    a = cdmca_solve(design, 1, eps=0.0)
    b = approx_pmvge_linear(design, 1, alpha0=1.0, eps=0.0)
    assert scaling_equivalence_check(a, b).column_deviation == 0.0


def test_negative_eigenvalues():
    # W = I - ones has eigenvalues 1, 1, -2
    design = design_from_matrices(np.eye(3), -(np.ones((3, 3)) - np.eye(3)))
    sol = approx_pmvge_linear(design, 3, eps=0.0)
    assert sol.K == 2 and np.all(sol.gammas >= 0)
    np.testing.assert_allclose(sol.eigenvalues, [1.0, 1.0], atol=1e-12)


def test_all_negative_rejected():
    design = design_from_matrices(np.eye(2), [[-1.0, 0], [0, -2.0]])
    with pytest.raises(ValidationError, match="negative"):
        approx_pmvge_linear(design, 2, eps=0.0)


def test_k_too_large_and_size_limit():
    design = design_from_matrices(np.ones((4, 2)), np.zeros((4, 4)))
    with pytest.raises(ValidationError, match="rank"):
        cdmca_solve(design, 2, eps=0.0)
    with pytest.raises(ValidationError):
        design_from_matrices(np.zeros((2, MAX_DIM + 1)), np.zeros((2, 2)))


def test_simple_coding():
    one = Dataset.from_nodes([2], [1, 1, 1], [[1, 2], [3, 4], [5, 9]], None, [(1, 1)])
    d1 = build_augmented(one, center=False)
    np.testing.assert_array_equal(d1.X, [[1, 2], [3, 4], [5, 9]])
    two = Dataset.from_nodes([2, 3], [1, 2, 1], [[1, 2], [3, 4, 5], [3, 6]], ([0], [1], [1.0]), ViewPairSet.all_pairs(2))
    d2 = build_augmented(two)
    assert d2.X.shape == (3, 5)
    np.testing.assert_array_equal(d2.X[1, :2], 0)
    np.testing.assert_array_equal(d2.X[[0, 2], 2:], 0)
    np.testing.assert_allclose(d2.X[[0, 2], :2].sum(axis=0), 0)  # centered per view
    np.testing.assert_array_equal(d2.column_view(), [1, 1, 2, 2, 2])
    ident = design_from_matrices(np.eye(3), np.zeros((3, 3)))
    np.testing.assert_array_equal(ident.G, np.eye(3))


def test_sbm_low_rank_ordering():
    beta = sbm_beta(3, 5.0, 0.1)
    ds, params = gen_sbm(150, 3, beta, seed=3)
    design = build_augmented(ds, center=False)
    sol = approx_pmvge_linear(design, 3)
    Y = embed(design, sol)
    c = params.memberships
    S = np.exp(Y @ Y.T)
    within = S[c[:, None] == c[None, :]].mean()
    between = S[c[:, None] != c[None, :]].mean()
    assert within > between
