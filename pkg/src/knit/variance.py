"""Entrywise variance of the PMI estimators via two paths.

Patient path: residual rows W^(i) built from per-patient counts, covariance
blocks as scaled Gram sums, and the projector quadratic form.

Summary-only path: the global-null row covariance is a sum of rank-one
structures (1 1^T, 1 e^T, e 1^T, e e^T) and a diagonal term; the structure is
a first-class object shared by the per-entry formula, the fast per-row
assembly and the dense transcription used as its oracle, so there is exactly
one implementation of the block coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cooccur import CooccurrenceSummary, PatientCooccurrence
from .errors import InputError, NumericalError, ZeroCountError

NEGATIVE_CLAMP_TOL = 1e-9

_clamp_count = 0


def clamp_count() -> int:
    """Number of small negative variances clamped to zero so far."""
    return _clamp_count


def reset_clamp_count() -> None:
    global _clamp_count
    _clamp_count = 0


def _finalize_variance(value: float) -> float:
    global _clamp_count
    if value < -NEGATIVE_CLAMP_TOL:
        raise NumericalError(f"variance {value} is negative beyond tolerance")
    if value < 0.0:
        _clamp_count += 1
        return 0.0
    return float(value)


# ---------------------------------------------------------------------------
# summary-only path: structured null covariance (global null)


@dataclass(frozen=True)
class NullCovarianceModel:
    """Inputs of the global-null covariance: p-hat, n, average T, window q."""

    p_hat: np.ndarray
    n: int
    T: float
    q: int

    def __post_init__(self):
        p = np.asarray(self.p_hat, dtype=float)
        if p.ndim != 1 or np.any(p <= 0):
            raise ZeroCountError("p_hat must be strictly positive",
                                 codes=np.nonzero(p <= 0)[0].tolist())
        if abs(p.sum() - 1.0) > 1e-9:
            raise InputError(f"p_hat must sum to 1, got {p.sum()!r}")
        if self.T0 <= 0:
            raise InputError(f"T0 = Tq - q^2 = {self.T0} must be positive")

    @property
    def d(self) -> int:
        return self.p_hat.size

    @property
    def T0(self) -> float:
        return self.T * self.q - self.q**2

    @classmethod
    def from_summary(cls, summary: CooccurrenceSummary) -> "NullCovarianceModel":
        marg = summary.marginals().astype(float)
        total = summary.total()
        if total <= 0:
            raise InputError("summary has no counts")
        return cls(p_hat=marg / total, n=summary.n, T=summary.T_bar, q=summary.q)


@dataclass(frozen=True)
class SigmaBlock:
    """Structured d x d matrix: c*11^T + sum 1 e^T + sum e 1^T + sum e e^T + diag.

    ``right_units`` holds (col, coef) terms coef * 1 e_col^T; ``left_units``
    holds (row, coef) terms coef * e_row 1^T; ``units`` holds (row, col, coef).
    Never densified on the hot paths.
    """

    d: int
    ones_coef: float
    right_units: tuple[tuple[int, float], ...]
    left_units: tuple[tuple[int, float], ...]
    units: tuple[tuple[int, int, float], ...]
    diag_vec: np.ndarray

    def dense(self) -> np.ndarray:
        m = np.full((self.d, self.d), self.ones_coef)
        for c, v in self.right_units:
            m[:, c] += v
        for r, v in self.left_units:
            m[r, :] += v
        for r, c, v in self.units:
            m[r, c] += v
        m[np.diag_indices(self.d)] += self.diag_vec
        return m

    def quad_form(self, x: np.ndarray, y: np.ndarray) -> float:
        """x Sigma y^T for row vectors x, y in O(d)."""
        sx, sy = x.sum(), y.sum()
        out = self.ones_coef * sx * sy
        for c, v in self.right_units:
            out += v * sx * y[c]
        for r, v in self.left_units:
            out += v * x[r] * sy
        for r, c, v in self.units:
            out += v * x[r] * y[c]
        out += float((x * self.diag_vec) @ y)
        return float(out)


def null_cov_block(model: NullCovarianceModel, w: int, w_prime: int) -> SigmaBlock:
    """Sigma-breve block: Cov(W_w.) when w == w', else Cov(W_w., W_w'.)."""
    p = model.p_hat
    d = model.d
    if not (0 <= w < d and 0 <= w_prime < d):
        raise InputError("code index out of range")
    nT0 = model.n * model.T0
    if w == w_prime:
        f = 1.0 / (nT0 * p[w])
        return SigmaBlock(
            d=d,
            ones_coef=f * (p[w] - 0.5),
            right_units=((w, -0.5 * f),),
            left_units=((w, -0.5 * f),),
            units=((w, w, f / (2.0 * p[w])),),
            diag_vec=f * (1.0 - p[w]) / 2.0 / p,
        )
    g = 1.0 / nT0
    return SigmaBlock(
        d=d,
        ones_coef=g,
        right_units=((w, -g / (2.0 * p[w])),),
        left_units=((w_prime, -g / (2.0 * p[w_prime])),),
        units=((w_prime, w, g / (2.0 * p[w] * p[w_prime])),),
        diag_vec=np.full(d, -0.5 * g) / p,
    )


def var_empirical_entry_null(model: NullCovarianceModel, w: int, w_prime: int) -> float:
    """Var of the empirical PMI entry under the global null (literal plug-in)."""
    p = model.p_hat
    nT0 = model.n * model.T0
    if w == w_prime:
        return _finalize_variance((1.0 - p[w]) ** 2 / (nT0 * p[w] ** 2))
    val = (1.0 - 0.5 / p[w] - 0.5 / p[w_prime] + 0.5 / (p[w] * p[w_prime])) / nT0
    return _finalize_variance(val)


def var_lowrank_entry(p_hat_rows, cov_provider, w: int, w_prime: int) -> float:
    """Eq.-(10) quadratic form: x S_{w'w'} x^T + y S_{ww} y^T + 2 x S_{w'w} y^T.

    ``p_hat_rows(w)`` returns projector row w; ``cov_provider(a, b)`` returns
    the (a, b) covariance block as a dense array or a SigmaBlock.  Only one
    block is alive at a time.
    """
    x = np.asarray(p_hat_rows(w), dtype=float)
    y = np.asarray(p_hat_rows(w_prime), dtype=float)

    def _quad(block, u, v) -> float:
        if isinstance(block, SigmaBlock):
            return block.quad_form(u, v)
        return float(u @ np.asarray(block, dtype=float) @ v)

    out = _quad(cov_provider(w_prime, w_prime), x, x)
    out += _quad(cov_provider(w, w), y, y)
    out += 2.0 * _quad(cov_provider(w_prime, w), x, y)
    return _finalize_variance(out)


def var_lowrank_entry_null(U_hat: np.ndarray, model: NullCovarianceModel,
                           w: int, w_prime: int) -> float:
    """Eq. (12): the null-path low-rank entry variance, O(d) per entry."""
    U_hat = np.atleast_2d(np.asarray(U_hat, dtype=float))
    x = U_hat @ U_hat[w]
    y = x if w_prime == w else U_hat @ U_hat[w_prime]
    out = null_cov_block(model, w_prime, w_prime).quad_form(x, x)
    out += null_cov_block(model, w, w).quad_form(y, y)
    out += 2.0 * null_cov_block(model, w_prime, w).quad_form(x, y)
    return _finalize_variance(out)


def var_lowrank_entries_null(U_hat: np.ndarray, model: NullCovarianceModel,
                             rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Vectorized Eq. (12) over many (w, w') pairs with w != w'.

    Same block coefficients as null_cov_block, contracted against projector
    rows in closed form; row sums and the diagonal-weighted inner products
    are shared across pairs.
    """
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    if np.any(rows == cols):
        raise InputError("vectorized path expects off-diagonal pairs")
    p = model.p_hat
    nT0 = model.n * model.T0
    P = U_hat @ U_hat.T
    s = P.sum(axis=1)
    inv_p = 1.0 / p
    Pw, Pw2 = P[rows], P[cols]
    sw, sw2 = s[rows], s[cols]
    pw, pw2 = p[rows], p[cols]
    qf_w = (Pw * Pw * inv_p[None, :]).sum(axis=1)     # x D x^T
    qf_w2 = (Pw2 * Pw2 * inv_p[None, :]).sum(axis=1)  # y D y^T
    qf_x = (Pw * Pw2 * inv_p[None, :]).sum(axis=1)    # x D y^T
    Pww2 = P[rows, cols]
    Pww = P[rows, rows]
    Pw2w2 = P[cols, cols]
    # x Sig_{w'w'} x^T
    t1 = (sw**2 * (pw2 - 0.5) - sw * Pww2 + 0.5 * (1 - pw2) * qf_w
          + Pww2**2 / (2 * pw2)) / (nT0 * pw2)
    # y Sig_{ww} y^T
    t2 = (sw2**2 * (pw - 0.5) - sw2 * Pww2 + 0.5 * (1 - pw) * qf_w2
          + Pww2**2 / (2 * pw)) / (nT0 * pw)
    # 2 x Sig_{w'w} y^T
    t3 = 2.0 * (sw * sw2 - sw * Pw2w2 / (2 * pw2) - Pww * sw2 / (2 * pw)
                - 0.5 * qf_x + Pww * Pw2w2 / (2 * pw * pw2)) / nT0
    out = t1 + t2 + t3
    bad = out < -NEGATIVE_CLAMP_TOL
    if np.any(bad):
        raise NumericalError("negative variance beyond tolerance in vectorized path")
    global _clamp_count
    _clamp_count += int(np.count_nonzero(out < 0))
    return np.maximum(out, 0.0)


# ---------------------------------------------------------------------------
# fast per-row covariance of the low-rank estimator under the null


def row_cov_null_fast(U_hat: np.ndarray, model: NullCovarianceModel, i: int) -> np.ndarray:
    """Cov of row i of the low-rank estimator from the four structured parts.

    All coefficient vectors (a, b, s_i, D-weighted columns) cost O(dp + d);
    the d x d output is assembled from rank-one outer products and scalings.
    """
    U_hat = np.atleast_2d(np.asarray(U_hat, dtype=float))
    d = model.d
    if U_hat.shape[0] != d:
        raise InputError("projector factor and model dimension differ")
    p = model.p_hat
    inv_p = 1.0 / p
    nT0 = model.n * model.T0
    pi = p[i]

    P = U_hat @ U_hat.T                     # needed densely: the output is d x d
    s = P.sum(axis=1)
    s_i = float(s[i])
    Pcol = P[:, i]
    Pii = float(Pcol[i])
    a = Pcol**2 * inv_p
    b = Pcol**2 * inv_p**2
    dcol = Pcol * inv_p                     # D P e_i
    u4 = P @ dcol                           # P D P e_i
    W1 = (U_hat * inv_p[:, None]).T @ U_hat
    PDP = U_hat @ W1 @ U_hat.T
    ones = np.ones(d)

    # (1) P Cov(E_i.) P
    part1 = ((2 * pi - 1) * np.outer(s, s)
             - np.outer(s, Pcol) - np.outer(Pcol, s)
             + (1 - pi) * PDP
             + np.outer(Pcol, Pcol) / pi) / (2 * nT0 * pi)

    # (2) sum_j P_ji^2 Cov(E_j.)
    sa = float(a.sum())
    part2 = ((2 * Pii - sa) * np.ones((d, d))
             - np.outer(ones, a) - np.outer(a, ones)) / (2 * nT0)
    part2[np.diag_indices(d)] += ((sa - Pii) * inv_p + b) / (2 * nT0)

    # (3) sum_{j != l} P_ji P_li Cov(E_j., E_l.)
    tvec = Pcol * (s_i - Pcol) * inv_p
    part3 = ((2 * s_i**2 - 2 * Pii) * np.ones((d, d))
             - np.outer(ones, tvec) - np.outer(tvec, ones)
             + np.outer(dcol, dcol)) / (2 * nT0)
    part3[np.diag_indices(d)] -= ((s_i**2 - Pii) * inv_p + b) / (2 * nT0)

    # (4) sum_j P_ji (Cov(E_j., E_i.) P + P Cov(E_i., E_j.))
    part4 = (s_i * (np.outer(ones, s) + np.outer(s, ones))
             - 0.5 * (np.outer(ones, u4) + np.outer(u4, ones)))
    part4 -= (s_i / (2 * pi)) * (np.outer(_unit(d, i), s) + np.outer(s, _unit(d, i)))
    part4 -= (s_i / 2) * (inv_p[:, None] * P + P * inv_p[None, :])
    part4 += (1 / (2 * pi)) * (np.outer(_unit(d, i), u4) + np.outer(u4, _unit(d, i)))
    part4 /= nT0

    return part1 + part2 + part3 + part4


def _unit(d: int, i: int) -> np.ndarray:
    e = np.zeros(d)
    e[i] = 1.0
    return e


def row_cov_null_dense(P_hat: np.ndarray, model: NullCovarianceModel, i: int) -> np.ndarray:
    """Dense-transcription assembly of the same four parts (oracle / baseline).

    Parts (1) and (4) go through full d x d matrix products against the
    densified blocks; parts (2)-(3) materialize every structural term as a
    dense matrix.  O(d^3); used to validate and to benchmark the fast path.
    """
    P_hat = np.asarray(P_hat, dtype=float)
    d = model.d
    p = model.p_hat
    inv_p = 1.0 / p
    nT0 = model.n * model.T0
    ones_mat = np.ones((d, d))

    part1 = P_hat @ null_cov_block(model, i, i).dense() @ P_hat

    Pcol = P_hat[:, i]
    a = Pcol**2 * inv_p
    b = Pcol**2 * inv_p**2
    s_i = float(P_hat[i].sum())
    Pii = float(Pcol[i])
    part2 = ((2 * Pii - a.sum()) * ones_mat
             - np.outer(np.ones(d), a) - np.outer(a, np.ones(d))
             + np.diag((a.sum() - Pii) * inv_p) + np.diag(b)) / (2 * nT0)

    tvec = Pcol * (s_i - Pcol) * inv_p
    dcol = Pcol * inv_p
    part3 = ((2 * s_i**2 - 2 * Pii) * ones_mat
             - np.outer(np.ones(d), tvec) - np.outer(tvec, np.ones(d))
             - np.diag((s_i**2 - Pii) * inv_p)
             + np.outer(dcol, dcol) - np.diag(b)) / (2 * nT0)

    # M = sum_j P_ji Cov(E_j., E_i.) assembled densely, then sandwiched with P
    M = (s_i * ones_mat
         - 0.5 * np.outer(np.ones(d), dcol)
         - (s_i / (2 * p[i])) * np.outer(_unit(d, i), np.ones(d))
         - (s_i / 2) * np.diag(inv_p)
         + (1 / (2 * p[i])) * np.outer(_unit(d, i), dcol)) / nT0
    part4 = M @ P_hat + P_hat @ M.T

    return part1 + part2 + part3 + part4


# ---------------------------------------------------------------------------
# patient-level path


@dataclass
class PatientResiduals:
    """Residual-row provider W-hat^(i) from patient-level counts.

    Heterogeneous cohorts use the trailing constant (T_i - q)/(T-bar - q);
    uniform cohorts use +1 (the two coincide).
    """

    patients: list[PatientCooccurrence]
    summary: CooccurrenceSummary
    _dense_total: np.ndarray = field(init=False, repr=False)
    _marg_total: np.ndarray = field(init=False, repr=False)
    _consts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.summary.n < 1 or len(self.patients) != self.summary.n:
            raise InputError("patient list and summary disagree on n")
        self._dense_total = self.summary.dense().astype(float)
        self._marg_total = self.summary.marginals().astype(float)
        if np.any(self._marg_total == 0):
            raise ZeroCountError(
                "zero marginal counts",
                codes=np.nonzero(self._marg_total == 0)[0].tolist())
        ls = self.summary.lengths.astype(float)
        tbar = ls.mean()
        q = self.summary.q
        if self.summary.uniform_lengths():
            self._consts = np.ones(self.summary.n)
        else:
            self._consts = (ls - q) / (tbar - q)

    @property
    def n(self) -> int:
        return self.summary.n

    @property
    def d(self) -> int:
        return self.summary.d

    def residual_row(self, i: int, w: int) -> np.ndarray:
        """W-hat^(i)_{w,.}: n C^i_{w,.}/C_{w,.} - n C^i_w/C_w - n C^i_./C_. + const."""
        n = self.n
        crow_total = self._dense_total[w]
        zero = np.nonzero(crow_total == 0)[0]
        if zero.size:
            raise ZeroCountError(
                f"cohort co-occurrence C[{w}, k] = 0 for k in {zero[:10].tolist()}; "
                "exclude or floor these pairs upstream", codes=zero.tolist())
        pc = self.patients[i]
        ci = pc.dense().astype(float)
        ci_marg = pc.marginals().astype(float)
        return (n * ci[w] / crow_total
                - n * ci_marg[w] / self._marg_total[w]
                - n * ci_marg / self._marg_total
                + self._consts[i])


def patient_residual_row(i: int, w: int, summary: CooccurrenceSummary,
                         patients: list[PatientCooccurrence]) -> np.ndarray:
    return PatientResiduals(patients=patients, summary=summary).residual_row(i, w)


def cov_rows_patient(w: int, w_prime: int, residuals: PatientResiduals) -> np.ndarray:
    """Sigma-hat_{w,w'} = 1/(n(n-1)) sum_i W^(i)_{w,.}^T W^(i)_{w',.}."""
    n = residuals.n
    if n < 2:
        raise InputError("patient-level covariance needs n >= 2")
    acc = np.zeros((residuals.d, residuals.d))
    for i in range(n):
        rw = residuals.residual_row(i, w)
        rw2 = rw if w_prime == w else residuals.residual_row(i, w_prime)
        acc += np.outer(rw, rw2)
    return acc / (n * (n - 1))


def patient_entry_variances(patients: list[PatientCooccurrence],
                            summary: CooccurrenceSummary) -> np.ndarray:
    """Var-hat of every empirical PMI entry: 1/(n(n-1)) sum_i (W^(i)_{w,w'})^2.

    Dense d x d output; zero-count cells yield NaN so callers can exclude them.
    """
    n = summary.n
    if n < 2:
        raise InputError("patient-level variance needs n >= 2")
    d = summary.d
    c_total = summary.dense().astype(float)
    marg = summary.marginals().astype(float)
    ls = summary.lengths.astype(float)
    consts = (np.ones(n) if summary.uniform_lengths()
              else (ls - summary.q) / (ls.mean() - summary.q))
    with np.errstate(divide="ignore", invalid="ignore"):
        ss = np.zeros((d, d))
        for i, pc in enumerate(patients):
            ci = pc.dense().astype(float)
            mi = pc.marginals().astype(float)
            wi = (n * ci / c_total
                  - (n * mi / marg)[:, None] - (n * mi / marg)[None, :]
                  + consts[i])
            ss += wi * wi
    out = ss / (n * (n - 1))
    out[c_total == 0] = np.nan
    return out
