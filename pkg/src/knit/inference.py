"""Edge testing: z-scores, p-values, FDR control under dependence, and the
end-to-end procedure composing estimation, variance and selection.

The step-up line is alpha * j / (J (log J + 1)) — Benjamini-Hochberg with the
extra (log J + 1) factor valid under arbitrary dependence.  Default p-values
are two-sided; the literal one-sided Phi(z) is kept behind a flag for
fidelity experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .cooccur import CooccurrenceSummary
from .errors import InputError
from .spectra import (PmiEstimate, empirical_pmi, estimate_rank_fixed_point,
                      estimate_rank, lowrank_pmi)
from .variance import NullCovarianceModel, var_lowrank_entries_null


class Sidedness(Enum):
    TWO_SIDED = "two_sided"
    PAPER_LITERAL = "paper_literal"


def _phi(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def z_and_p(statistic: float, variance: float,
            sidedness: Sidedness = Sidedness.TWO_SIDED) -> tuple[float, float]:
    """Standardize and convert to a p-value.

    TwoSided: p = 2(1 - Phi(|z|)); PaperLiteral: p = Phi(z) exactly as the
    selection rule writes it.
    """
    if variance <= 0:
        raise InputError(f"variance must be positive, got {variance}")
    z = statistic / math.sqrt(variance)
    if sidedness is Sidedness.PAPER_LITERAL:
        return z, _phi(z)
    return z, math.erfc(abs(z) / math.sqrt(2.0))


def bh_dependent(p_values: np.ndarray, alpha: float) -> tuple[int, float, np.ndarray]:
    """Step-up under dependence: j_max = max{j : p_(j) <= alpha j / (J (log J + 1))}.

    Returns (j_max, threshold p_(j_max) or 0.0, boolean selection mask).
    Sorting is stable so exact ties resolve by input position.
    """
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        raise InputError("no p-values to select from")
    if not 0.0 < alpha < 1.0:
        raise InputError("alpha must be in (0, 1)")
    J = p.size
    order = np.argsort(p, kind="stable")
    line = alpha * np.arange(1, J + 1) / (J * (math.log(J) + 1.0))
    hits = np.nonzero(p[order] <= line)[0]
    if hits.size == 0:
        return 0, 0.0, np.zeros(J, dtype=bool)
    j_max = int(hits.max()) + 1
    threshold = float(p[order][j_max - 1])
    return j_max, threshold, p <= threshold


def bonferroni(p_values: np.ndarray, alpha: float) -> np.ndarray:
    """FWER control: select p <= alpha / J."""
    p = np.asarray(p_values, dtype=float)
    return p <= alpha / p.size


@dataclass
class EdgeTestResult:
    """Per-pair statistics and the FDR-selected edge set (pairs have w < w')."""

    pairs: np.ndarray          # (J, 2) int
    statistic: np.ndarray      # low-rank PMI values
    variance: np.ndarray
    z: np.ndarray
    p_value: np.ndarray
    selected: np.ndarray       # bool
    alpha: float
    j_max: int
    threshold: float
    excluded: list[tuple[int, int, str]] = field(default_factory=list)
    sidedness: str = Sidedness.TWO_SIDED.value

    @property
    def J(self) -> int:
        return int(self.pairs.shape[0])

    def selected_pairs(self) -> np.ndarray:
        return self.pairs[self.selected]


@dataclass
class KnitOptions:
    alpha: float = 0.05
    rank: int | None = None          # None: auto via the rank estimate
    eta0: float | None = None        # threshold for auto rank; None: fixed point
    pmi_floor: float = 1e-6
    sidedness: Sidedness = Sidedness.TWO_SIDED
    use_fwer: bool = False           # Bonferroni instead of the step-up


def knit(summary: CooccurrenceSummary,
         options: KnitOptions | None = None) -> tuple[EdgeTestResult, PmiEstimate]:
    """The full procedure: empirical PMI -> rank-p truncation -> null-path
    variances -> p-values -> selection.

    Pairs with zero co-occurrence are excluded from testing (they do not
    enter J) and reported in the exclusion list; the PMI floor only affects
    the spectral step.
    """
    opt = options or KnitOptions()
    pmi_hat = empirical_pmi(summary, eta=opt.pmi_floor)
    rank = opt.rank
    auto_eta0 = None
    if rank is None:
        from .spectra import eig_sym
        lam, _ = eig_sym(pmi_hat.matrix)
        if opt.eta0 is not None:
            rank = estimate_rank(lam, opt.eta0)
            auto_eta0 = opt.eta0
        else:
            rank, auto_eta0, _ = estimate_rank_fixed_point(
                lam, summary.d, summary.n, summary.T_bar)
        if rank < 1:
            raise InputError(
                f"estimated rank is 0 at eta0={auto_eta0:.4g}; pass an explicit rank")
    pmi_tilde = lowrank_pmi(pmi_hat, rank)

    d = summary.d
    dense_counts = summary.dense()
    iu = np.triu_indices(d, k=1)
    rows, cols = iu[0], iu[1]
    observed = dense_counts[rows, cols] > 0
    excluded = [(int(r), int(c), "zero co-occurrence")
                for r, c in zip(rows[~observed], cols[~observed])]
    rows, cols = rows[observed], cols[observed]
    if rows.size == 0:
        raise InputError("every off-diagonal pair has zero co-occurrence")

    model = NullCovarianceModel.from_summary(summary)
    variance = var_lowrank_entries_null(pmi_tilde.eigenvectors, model, rows, cols)
    stat = pmi_tilde.matrix[rows, cols]
    z = stat / np.sqrt(variance)
    if opt.sidedness is Sidedness.PAPER_LITERAL:
        pv = np.array([_phi(v) for v in z])
    else:
        from scipy.stats import norm
        pv = 2.0 * norm.sf(np.abs(z))

    if opt.use_fwer:
        mask = bonferroni(pv, opt.alpha)
        j_max = int(mask.sum())
        threshold = opt.alpha / pv.size
    else:
        j_max, threshold, mask = bh_dependent(pv, opt.alpha)

    result = EdgeTestResult(
        pairs=np.stack([rows, cols], axis=1),
        statistic=stat, variance=variance, z=z, p_value=pv,
        selected=mask, alpha=opt.alpha, j_max=j_max, threshold=threshold,
        excluded=excluded, sidedness=opt.sidedness.value)
    return result, pmi_tilde
