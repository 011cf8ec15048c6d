"""Empirical PMI, its eigendecomposition, the rank-p estimator and rank selection.

The empirical PMI entry is log(max(C-bar * C_ww' / (C_w C_w'), eta)); the
low-rank estimator keeps the top-p eigenpairs by absolute eigenvalue.  Rank
selection thresholds the signed eigenvalues, in magnitude order, against a
user threshold or the formula 8 d^3 p log^2(d) / sqrt(nT).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cooccur import CooccurrenceSummary
from .errors import InputError, NumericalError, ZeroCountError

# dense d x d matrices are materialized only in this module
DENSE_LIMIT = 20_000
FULL_EIG_LIMIT = 2_000
_ITER_MARGIN = 10  # extra eigenpairs requested from the iterative solver
_ITER_TOL = 1e-10


class PmiKind(Enum):
    EMPIRICAL = "empirical"
    LOW_RANK = "low_rank"


@dataclass(frozen=True)
class ScalingConstant:
    """alpha_p = sqrt(alpha) (1 - alpha^{q/2}) / (q p (1 - sqrt(alpha)))."""

    alpha_p: float


def alpha_p(alpha: float, q: int, p: int) -> ScalingConstant:
    """Scaling constant linking the population PMI to V V^T.

    Evaluated through expm1 so the removable singularity at alpha -> 1 is
    computed stably; the limit is 1/p for any q.
    """
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must be in (0,1), got {alpha}")
    if q < 1 or p < 1:
        raise InputError("q and p must be >= 1")
    la = np.log(alpha)
    value = np.sqrt(alpha) * np.expm1(0.5 * q * la) / (q * p * np.expm1(0.5 * la))
    return ScalingConstant(alpha_p=float(value))


@dataclass(frozen=True)
class PmiEstimate:
    """Dense symmetric PMI matrix with provenance and optional eigenstructure."""

    matrix: np.ndarray
    kind: PmiKind
    eta: float
    rank: int | None = None
    eigenvalues: np.ndarray | None = None   # sorted by |lambda| descending
    eigenvectors: np.ndarray | None = None  # d x rank

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    def projector(self) -> np.ndarray:
        """P-hat = U-hat U-hat^T."""
        if self.eigenvectors is None:
            raise InputError("estimate carries no eigenvectors")
        return self.eigenvectors @ self.eigenvectors.T

    def projector_row(self, w: int) -> np.ndarray:
        if self.eigenvectors is None:
            raise InputError("estimate carries no eigenvectors")
        return self.eigenvectors @ self.eigenvectors[w]

    def semantic_embedding(self) -> np.ndarray:
        """U-hat |Lambda-hat|^{1/2}, a convenience export."""
        if self.eigenvectors is None or self.eigenvalues is None:
            raise InputError("estimate carries no eigenstructure")
        return self.eigenvectors * np.sqrt(np.abs(self.eigenvalues))


def empirical_pmi(summary: CooccurrenceSummary, eta: float = 1e-6,
                  allow_large: bool = False) -> PmiEstimate:
    """Dense symmetric empirical PMI from a co-occurrence summary.

    Zero co-occurrences are floored at eta inside the log; a never-observed
    code (zero marginal) is an error naming the code.
    """
    if eta <= 0:
        raise InputError("eta must be positive")
    d = summary.d
    if d > DENSE_LIMIT and not allow_large:
        raise InputError(
            f"d={d} exceeds the dense-matrix guard ({DENSE_LIMIT}); pass allow_large")
    marg = summary.marginals()
    zero = np.nonzero(marg == 0)[0]
    if zero.size:
        raise ZeroCountError(
            f"codes never observed in any window: {zero[:10].tolist()}"
            f"{'...' if zero.size > 10 else ''}", codes=zero.tolist())
    total = float(summary.total())
    c = summary.dense().astype(float)
    ratio = total * c / np.outer(marg.astype(float), marg.astype(float))
    mat = np.log(np.maximum(ratio, eta))
    mat = 0.5 * (mat + mat.T)  # exact symmetry (computed once per unordered pair)
    return PmiEstimate(matrix=mat, kind=PmiKind.EMPIRICAL, eta=eta)


def eig_sym(A: np.ndarray, top_k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition sorted by |lambda| descending, deterministic signs.

    Symmetrizes (A + A^T)/2 first.  Full decomposition up to d=2000; beyond
    that an iterative solver returns the leading ``top_k`` pairs (callers pass
    rank + a margin).  Each eigenvector's largest-magnitude coordinate is made
    positive; exact |lambda| ties break by signed value descending then index.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError("eig_sym needs a square matrix")
    d = A.shape[0]
    S = 0.5 * (A + A.T)
    if d <= FULL_EIG_LIMIT or top_k is None or top_k >= d - 1:
        try:
            lam, U = np.linalg.eigh(S)
        except np.linalg.LinAlgError as e:  # pragma: no cover - backend failure
            raise NumericalError(f"eigensolver failed: {e}") from e
    else:
        from scipy.sparse.linalg import eigsh
        k = min(top_k + _ITER_MARGIN, d - 1)
        try:
            lam, U = eigsh(S, k=k, which="LM", tol=_ITER_TOL)
        except Exception as e:  # pragma: no cover - backend failure
            raise NumericalError(f"iterative eigensolver failed: {e}") from e
    # magnitude-descending order; ties: signed value descending, then index
    order = np.lexsort((np.arange(lam.size), -lam, -np.abs(lam)))
    lam, U = lam[order], U[:, order]
    anchor = np.abs(U).argmax(axis=0)
    signs = np.sign(U[anchor, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return lam, U * signs


def lowrank_pmi(pmi_hat: PmiEstimate, p: int) -> PmiEstimate:
    """Rank-p truncation by |lambda| of the empirical PMI (the low-rank estimator)."""
    if pmi_hat.kind is not PmiKind.EMPIRICAL:
        raise InputError("lowrank_pmi expects an empirical estimate")
    d = pmi_hat.d
    if not 1 <= p <= d:
        raise InputError(f"rank must be in [1, {d}], got {p}")
    lam, U = eig_sym(pmi_hat.matrix, top_k=p)
    if p < lam.size and abs(abs(lam[p - 1]) - abs(lam[p])) <= 1e-12:
        warnings.warn(
            f"|lambda_{p}| == |lambda_{p + 1}| within 1e-12; "
            "tiebreak is signed-value descending then index", RuntimeWarning)
    lam_k, U_k = lam[:p].copy(), U[:, :p].copy()
    mat = (U_k * lam_k) @ U_k.T
    return PmiEstimate(matrix=mat, kind=PmiKind.LOW_RANK, eta=pmi_hat.eta,
                       rank=p, eigenvalues=lam_k, eigenvectors=U_k)


def estimate_rank(eigenvalues: np.ndarray, eta0: float) -> int:
    """r = max{k : lambda_k >= eta0} over signed values in magnitude order; 0 if none.

    Large-negative eigenvalues never count toward r, consistent with the
    target Gram matrix being positive semidefinite.
    """
    if eta0 <= 0:
        raise InputError("eta0 must be positive")
    lam = np.asarray(eigenvalues, dtype=float)
    hits = np.nonzero(lam >= eta0)[0]
    return int(hits.max()) + 1 if hits.size else 0


def default_eta0(d: int, p_guess: int, n: int, T: float) -> float:
    """Formula threshold 8 d^3 p log^2(d) / sqrt(nT), natural log."""
    if min(d, p_guess, n) < 1 or T <= 0:
        raise InputError("d, p_guess, n must be >= 1 and T > 0")
    return 8.0 * d**3 * p_guess * np.log(d) ** 2 / np.sqrt(n * T)


def estimate_rank_fixed_point(eigenvalues: np.ndarray, d: int, n: int, T: float,
                              max_iter: int = 64) -> tuple[int, float, list[int]]:
    """Resolve the circular eta0(p) by iterating p0 = d, r = rank(eta0(p)), ...

    Returns (rank, final eta0, iteration trace).  A rank of 0 terminates with
    eta0 evaluated at p = 1.
    """
    trace: list[int] = []
    p_cur = d
    for _ in range(max_iter):
        eta0 = default_eta0(d, max(p_cur, 1), n, T)
        r = estimate_rank(eigenvalues, eta0)
        trace.append(r)
        if r == p_cur:
            return r, eta0, trace
        if r == 0:
            return 0, default_eta0(d, 1, n, T), trace
        p_cur = r
    return p_cur, default_eta0(d, max(p_cur, 1), n, T), trace


def proposition_condition(d: int, p: int, n: int, T: float,
                          kappa: float, xi: float) -> tuple[float, float]:
    """Numeric check of the rank-recovery condition d^3 p log^2 d / sqrt(nT) << kappa^2 xi^2.

    Returns (lhs, rhs); recovery is guaranteed only when lhs is far below rhs.
    """
    lhs = d**3 * p * np.log(d) ** 2 / np.sqrt(n * T)
    rhs = kappa**2 * xi**2
    return float(lhs), float(rhs)
