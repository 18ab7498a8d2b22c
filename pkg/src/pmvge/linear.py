"""
Closed-form linear embeddings via a symmetric eigenproblem.

All views are stacked into one "simple coded" design matrix ``X`` (each row
holds the node's centered data vector in its view's column block, zeros
elsewhere). With ``G = X^T X`` and ``H = X^T W X``:

* modified CDMCA maximizes ``tr(psi^T H psi)`` subject to ``psi^T G psi = I``;
  the solution is ``G^{-1/2} U_K`` with ``U_K`` the top-K eigenvectors of
  ``G^{-1/2} H G^{-1/2}``.
* the quadratic approximation of the linear Poisson likelihood with a
  constant view-pair scale ``alpha0`` is maximized by
  ``G^{-1/2} U_K diag(gamma)^{1/2}`` with ``gamma_k = lambda_k / alpha0``.

The two differ only by a per-axis scale ``sqrt(gamma_k)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .graph import Dataset

log = logging.getLogger(__name__)

MAX_DIM = 4096


@dataclass
class AugmentedDesign:
    X: np.ndarray
    W: sp.csr_matrix
    G: np.ndarray
    H: np.ndarray
    offsets: tuple[int, ...]  # first column of each view's block; last entry is p
    node_view: np.ndarray

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def column_view(self) -> np.ndarray:
        """View id owning each row of ``psi``."""
        out = np.zeros(self.p, dtype=np.int64)
        for d in range(len(self.offsets) - 1):
            out[self.offsets[d] : self.offsets[d + 1]] = d + 1
        return out


@dataclass
class SpectralSolution:
    psi: np.ndarray  # p x K'
    eigenvalues: np.ndarray  # descending, one per column of psi
    gammas: np.ndarray | None = None
    alpha0: float | None = None
    eps: float = 0.0
    degenerate: bool = False

    @property
    def K(self) -> int:
        return self.psi.shape[1]


def build_augmented(ds: Dataset, center: bool = True) -> AugmentedDesign:
    dims = ds.dims
    offsets = tuple(int(v) for v in np.cumsum([0, *dims]))
    p = offsets[-1]
    if p > MAX_DIM:
        raise ValidationError(f"augmented dimension {p} exceeds the dense solver limit {MAX_DIM}")
    X = np.zeros((ds.n, p))
    for d in range(1, ds.num_views + 1):
        idx = ds.nodes_of_view(d)
        block = np.array(ds.view_data[d - 1], dtype=np.float64)
        if center and len(block):
            block = block - block.mean(axis=0)
        X[idx, offsets[d - 1] : offsets[d]] = block
    w = ds.weights
    W = sp.coo_matrix(
        (np.r_[w.w, w.w], (np.r_[w.i, w.j], np.r_[w.j, w.i])), shape=(ds.n, ds.n)
    ).tocsr()
    G = X.T @ X
    H = X.T @ (W @ X)
    H = 0.5 * (H + H.T)
    return AugmentedDesign(X, W, G, H, offsets, np.asarray(ds.node_view))


def design_from_matrices(X, W) -> AugmentedDesign:
    """Wrap an explicit (already coded) ``X`` and symmetric ``W``; no centering."""
    X = np.array(X, dtype=np.float64, ndmin=2)
    W = sp.csr_matrix(np.asarray(W, dtype=np.float64))
    if W.shape != (X.shape[0], X.shape[0]):
        raise ValidationError("W must be n x n for an n-row X")
    if abs(W - W.T).max() > 0:
        raise ValidationError("W must be symmetric")
    if X.shape[1] > MAX_DIM:
        raise ValidationError(f"dimension {X.shape[1]} exceeds the dense solver limit {MAX_DIM}")
    H = X.T @ (W @ X)
    return AugmentedDesign(X, W, X.T @ X, 0.5 * (H + H.T), (0, X.shape[1]), np.ones(X.shape[0], dtype=np.int64))


def default_eps(G: np.ndarray) -> float:
    return 1e-8 * float(np.trace(G)) / G.shape[0]


def inv_sqrt_psd(G: np.ndarray, eps: float = 0.0) -> tuple[np.ndarray, int]:
    """Pseudo-inverse square root of ``G + eps I`` and its numerical rank."""
    lam, V = np.linalg.eigh(G + eps * np.eye(G.shape[0]))
    tol = max(lam.max(initial=0.0), 0.0) * G.shape[0] * np.finfo(float).eps
    keep = lam > max(tol, 0.0)
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / np.sqrt(lam[keep])
    return (V * inv) @ V.T, int(keep.sum())


def normalize_signs(U: np.ndarray) -> np.ndarray:
    """Flip columns so their largest-magnitude entry is positive."""
    U = U.copy()
    idx = np.argmax(np.abs(U), axis=0)
    s = np.sign(U[idx, np.arange(U.shape[1])])
    s[s == 0] = 1.0
    return U * s


def _top_eigen(design: AugmentedDesign, K: int, eps: float | None):
    if K < 1:
        raise ValidationError("K must be >= 1")
    eps = default_eps(design.G) if eps is None else float(eps)
    R, rank = inv_sqrt_psd(design.G, eps)
    if K > rank:
        raise ValidationError(f"K={K} exceeds the rank {rank} of the (ridged) Gram matrix")
    A = R @ design.H @ R
    A = 0.5 * (A + A.T)
    try:
        lam, U = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"eigensolver did not converge: {exc}") from None
    order = np.argsort(-lam, kind="stable")
    lam, U = lam[order], U[:, order]
    scale = max(np.abs(lam).max(initial=0.0), 1.0)
    degenerate = bool(np.all(np.abs(lam) <= 1e-12 * scale)) or (
        K < len(lam) and abs(lam[K - 1] - lam[K]) <= 1e-12 * scale
    )
    return R, lam[:K], normalize_signs(U[:, :K]), eps, degenerate


def cdmca_solve(design: AugmentedDesign, K: int, eps: float | None = None) -> SpectralSolution:
    """Modified CDMCA: ``psi = (G + eps I)^{-1/2} U_K``."""
    R, lam, U, eps, degenerate = _top_eigen(design, K, eps)
    if degenerate:
        log.warning("top-%d eigenspace is not unique (repeated or zero eigenvalues)", K)
    return SpectralSolution(R @ U, lam, eps=eps, degenerate=degenerate)


def approx_pmvge_linear(design: AugmentedDesign, K: int, alpha0: float = 1.0, eps: float | None = None) -> SpectralSolution:
    """Maximizer of the quadratic surrogate: CDMCA axes scaled by ``sqrt(lambda_k / alpha0)``.

    Axes with negative eigenvalues have no real scale and are dropped.
    """
    if not alpha0 > 0:
        raise ValidationError("alpha0 must be > 0")
    R, lam, U, eps, degenerate = _top_eigen(design, K, eps)
    keep = lam >= 0
    if not keep.any():
        raise ValidationError("all retained eigenvalues are negative; no real-valued solution")
    if not keep.all():
        log.warning("dropping %d axes with negative eigenvalues", int((~keep).sum()))
    lam, U = lam[keep], U[:, keep]
    gammas = lam / alpha0
    return SpectralSolution(R @ U * np.sqrt(gammas), lam, gammas, alpha0, eps, degenerate)


def embed(design: AugmentedDesign, sol: SpectralSolution) -> np.ndarray:
    return design.X @ sol.psi


@dataclass
class EquivalenceReport:
    column_deviation: float
    inner_product_deviation: float | None
    tol: float

    @property
    def passed(self) -> bool:
        ok = self.column_deviation < self.tol
        if self.inner_product_deviation is not None:
            ok = ok and self.inner_product_deviation < self.tol
        return ok

    def to_text(self) -> str:
        lines = [f"column_deviation: {self.column_deviation!r}"]
        if self.inner_product_deviation is not None:
            lines.append(f"inner_product_deviation: {self.inner_product_deviation!r}")
        lines += [f"tolerance: {self.tol!r}", f"passed: {self.passed}"]
        return "\n".join(lines) + "\n"


def scaling_equivalence_check(
    sol_cdmca: SpectralSolution,
    sol_pmvge: SpectralSolution,
    design: AugmentedDesign | None = None,
    tol: float = 1e-8,
) -> EquivalenceReport:
    """Compare ``psi_pmvge[:, k]`` with ``sqrt(gamma_k) psi_cdmca[:, k]`` (up to sign).

    With a design, also compare ``<y^_i, y^_j>`` against
    ``sum_k gamma_k y_ik y_jk`` over all node pairs.
    """
    if sol_pmvge.gammas is None:
        raise ValidationError("second solution carries no gammas")
    # negative-eigenvalue axes are dropped only at the tail, so columns align
    k = sol_pmvge.K
    A = sol_cdmca.psi[:, :k] * np.sqrt(sol_pmvge.gammas)
    B = sol_pmvge.psi
    dev = np.minimum(np.abs(B - A).max(axis=0, initial=0.0), np.abs(B + A).max(axis=0, initial=0.0))
    col_dev = float(dev.max(initial=0.0))
    ip_dev = None
    if design is not None:
        Yc = design.X @ sol_cdmca.psi[:, :k]
        Yp = design.X @ sol_pmvge.psi
        ip_dev = float(np.abs(Yp @ Yp.T - (Yc * sol_pmvge.gammas) @ Yc.T).max(initial=0.0))
    return EquivalenceReport(col_dev, ip_dev, tol)
