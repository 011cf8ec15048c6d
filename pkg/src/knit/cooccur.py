"""Windowed co-occurrence counting and cohort summaries.

An ordered pair of positions (t, s) co-occurs when 0 < |t - s| <= q and
min(t, s) <= T_i - q.  The boundary clause is implemented literally: it is
what makes the per-patient total exactly 2q(T_i - q).

Counts are kept as sorted upper-triangle triplets (row <= col) in int64;
the summary is the only object the privacy-preserving path ever sees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .simgen import Cohort

# densify via bincount up to this vocabulary size during accumulation
_DENSE_ACCUM_LIMIT = 4096


@dataclass(frozen=True)
class PatientCooccurrence:
    """Sparse symmetric counts C^(i) for one patient.

    Triplet (r, c, v) with r <= c carries the symmetric-matrix entry
    C[r, c] (= C[c, r]); the mirror entry is implied, not stored.
    """

    d: int
    q: int
    T_i: int
    rows: np.ndarray  # int32, rows[k] <= cols[k]
    cols: np.ndarray
    counts: np.ndarray  # int64

    def total(self) -> int:
        """Full-matrix mass sum_w sum_w' C[w, w']."""
        off = self.rows != self.cols
        return int(2 * self.counts[off].sum() + self.counts[~off].sum())

    def expected_total(self) -> int:
        return 2 * self.q * (self.T_i - self.q)

    def dense(self) -> np.ndarray:
        c = np.zeros((self.d, self.d), dtype=np.int64)
        c[self.rows, self.cols] = self.counts
        off = self.rows != self.cols
        c[self.cols[off], self.rows[off]] = self.counts[off]
        return c

    def marginals(self) -> np.ndarray:
        m = np.zeros(self.d, dtype=np.int64)
        np.add.at(m, self.rows, self.counts)
        off = self.rows != self.cols
        np.add.at(m, self.cols[off], self.counts[off])
        return m


@dataclass(frozen=True)
class CooccurrenceSummary:
    """Cohort-level counts C, marginals C_w, total C-bar, and (n, q, lengths)."""

    d: int
    q: int
    lengths: np.ndarray  # int64, one entry per patient
    rows: np.ndarray
    cols: np.ndarray
    counts: np.ndarray

    @property
    def n(self) -> int:
        return int(self.lengths.size)

    @property
    def T_bar(self) -> float:
        return float(self.lengths.mean())

    def uniform_lengths(self) -> bool:
        return bool(np.all(self.lengths == self.lengths[0])) if self.n else True

    def total(self) -> int:
        """Full-matrix mass C-bar."""
        off = self.rows != self.cols
        return int(2 * self.counts[off].sum() + self.counts[~off].sum())

    def expected_total(self) -> int:
        return int((2 * self.q * (self.lengths - self.q)).sum())

    def dense(self) -> np.ndarray:
        c = np.zeros((self.d, self.d), dtype=np.int64)
        c[self.rows, self.cols] = self.counts
        off = self.rows != self.cols
        c[self.cols[off], self.rows[off]] = self.counts[off]
        return c

    def marginals(self) -> np.ndarray:
        m = np.zeros(self.d, dtype=np.int64)
        np.add.at(m, self.rows, self.counts)
        off = self.rows != self.cols
        np.add.at(m, self.cols[off], self.counts[off])
        return m

    def validate(self) -> "CooccurrenceSummary":
        if self.total() != self.expected_total():
            raise InputError(
                f"summary total {self.total()} != sum_i 2q(T_i-q) = {self.expected_total()}")
        return self


def _check_seq(seq: np.ndarray, q: int) -> np.ndarray:
    seq = np.asarray(seq)
    if seq.ndim != 1 or seq.size < 1:
        raise InputError("sequence must be 1-d and nonempty")
    if q < 1:
        raise InputError("window q must be >= 1")
    if seq.size <= 2 * q:
        raise InputError(f"sequence length {seq.size} must exceed 2q = {2 * q}")
    return seq


def accumulate_patient(seq: np.ndarray, q: int, d: int) -> PatientCooccurrence:
    """Single pass, O(T q): for u in 1..q pair position t with t+u for t <= T-q.

    Both orders of each event are counted, so the total is exactly 2q(T-q).
    """
    seq = _check_seq(seq, q)
    if seq.min() < 0 or seq.max() >= d:
        raise InputError(f"codes must lie in [0, {d})")
    T = seq.size
    a_parts, b_parts = [], []
    head = seq[: T - q]
    for u in range(1, q + 1):
        a_parts.append(head)
        b_parts.append(seq[u: T - q + u])
    a = np.concatenate(a_parts)
    b = np.concatenate(b_parts)
    lo = np.minimum(a, b).astype(np.int64)
    hi = np.maximum(a, b).astype(np.int64)
    keys = lo * d + hi
    if d <= _DENSE_ACCUM_LIMIT:
        counts = np.bincount(keys, minlength=d * d)
        nz = np.nonzero(counts)[0]
        uniq, cnt = nz, counts[nz].astype(np.int64)
    else:
        uniq, cnt = np.unique(keys, return_counts=True)
        cnt = cnt.astype(np.int64)
    rows = (uniq // d).astype(np.int32)
    cols = (uniq % d).astype(np.int32)
    # every positional event (t, t+u) stands for the ordered pairs (t, t+u) and
    # (t+u, t): off-diagonal cells get 1 (mirror implied), diagonal cells get 2
    diag = rows == cols
    cnt[diag] *= 2
    return PatientCooccurrence(d=d, q=q, T_i=T, rows=rows, cols=cols, counts=cnt)


def naive_count_oracle(seq: np.ndarray, q: int, d: int) -> PatientCooccurrence:
    """O(T^2) literal evaluation of the window definition; test oracle only."""
    seq = _check_seq(seq, q)
    T = seq.size
    dense = np.zeros((d, d), dtype=np.int64)
    for t in range(T):
        for s in range(T):
            dt = abs(t - s)
            if 0 < dt <= q and min(t, s) <= T - q - 1:  # 0-based: min index <= T-q-1
                dense[seq[t], seq[s]] += 1
    rows, cols = np.nonzero(np.triu(dense))
    return PatientCooccurrence(d=d, q=q, T_i=T,
                               rows=rows.astype(np.int32), cols=cols.astype(np.int32),
                               counts=dense[rows, cols])


def merge(patients: list[PatientCooccurrence]) -> CooccurrenceSummary:
    """Entrywise sum over patients; associative, commutative, exact int64."""
    if not patients:
        raise InputError("merge requires at least one patient")
    d, q = patients[0].d, patients[0].q
    for pc in patients:
        if pc.d != d or pc.q != q:
            raise InputError("patients disagree on d or q")
    keys = np.concatenate([pc.rows.astype(np.int64) * d + pc.cols for pc in patients])
    vals = np.concatenate([pc.counts for pc in patients])
    order = np.argsort(keys, kind="stable")
    keys, vals = keys[order], vals[order]
    uniq, start = np.unique(keys, return_index=True)
    sums = np.add.reduceat(vals, start)
    if np.any(sums < 0):
        raise InputError("count overflow during merge")
    lengths = np.array([pc.T_i for pc in patients], dtype=np.int64)
    return CooccurrenceSummary(d=d, q=q, lengths=lengths,
                               rows=(uniq // d).astype(np.int32),
                               cols=(uniq % d).astype(np.int32),
                               counts=sums)


def summarize_cohort(cohort: Cohort, q: int) -> CooccurrenceSummary:
    """accumulate_patient + merge over a cohort, with a fast uniform-length path."""
    d = cohort.d
    lengths = cohort.lengths()
    if cohort.n and np.all(lengths == lengths[0]) and d <= _DENSE_ACCUM_LIMIT:
        codes = cohort.as_matrix()
        n, T = codes.shape
        if T <= 2 * q:
            raise InputError(f"sequence length {T} must exceed 2q = {2 * q}")
        dense = np.zeros(d * d, dtype=np.int64)
        for u in range(1, q + 1):
            a = codes[:, : T - q].reshape(-1).astype(np.int64)
            b = codes[:, u: T - q + u].reshape(-1).astype(np.int64)
            dense += np.bincount(a * d + b, minlength=d * d)
            dense += np.bincount(b * d + a, minlength=d * d)
        full = dense.reshape(d, d)
        rows, cols = np.nonzero(np.triu(full))
        return CooccurrenceSummary(d=d, q=q, lengths=lengths,
                                   rows=rows.astype(np.int32), cols=cols.astype(np.int32),
                                   counts=full[rows, cols])
    return merge([accumulate_patient(c, q, d) for c in cohort.codes])


def patient_summaries(cohort: Cohort, q: int) -> list[PatientCooccurrence]:
    return [accumulate_patient(c, q, cohort.d) for c in cohort.codes]
