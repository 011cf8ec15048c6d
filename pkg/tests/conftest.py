import numpy as np
import pytest

from knit.cooccur import CooccurrenceSummary, accumulate_patient, merge
from knit.simgen import Cohort, sample_null_cohort


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_patients(rng, n, d, q, t_lo, t_hi):
    """Random patient count objects with uniform random lengths."""
    out = []
    for _ in range(n):
        t = int(rng.integers(t_lo, t_hi + 1))
        seq = rng.integers(0, d, t)
        out.append(accumulate_patient(seq, q, d))
    return out


def small_null_summary(seed=7, d=6, n=12, T=80, q=2) -> tuple[CooccurrenceSummary, Cohort]:
    cohort = sample_null_cohort(np.full(d, 1.0 / d), n, T, seed, q=q)
    from knit.cooccur import summarize_cohort
    return summarize_cohort(cohort, q), cohort
