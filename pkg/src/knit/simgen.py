"""Synthetic cohorts from the dynamic log-linear topic model.

A latent discourse vector evolves by a slow AR(1) process (two robustness
variants: a random walk on the unit sphere and an ARMA(1,3) process), and at
each step one code out of ``d`` is drawn from a softmax over inner products
with the embedding rows.  Embeddings come either from the three-step
construction (orthonormal Gaussian basis, Monte-Carlo marginals, centering)
or from the scaled form ``V = d**-kappa * U``.

All generators are pure functions of (config, seed).  Each patient draws from
its own counter-based substream keyed by (seed, patient index), so cohorts
are byte-identical no matter how generation is blocked or parallelized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InputError, NumericalError

ARMA_COEFFS = (0.2, 0.1, 0.05)
ARMA_BURNIN = 100

# purpose tags for substream derivation
_STREAM_EMBED = 0
_STREAM_PATIENT = 1
_STREAM_MC = 2


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, *key); stable across platforms."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def default_alpha(d: int, p: int) -> float:
    """Model default AR coefficient, 1 - log(d)/p^2 (natural log)."""
    a = 1.0 - np.log(d) / p**2
    if not 0.0 < a < 1.0:
        raise InputError(f"alpha = 1 - log({d})/{p}^2 = {a:.4g} is outside (0, 1)")
    return float(a)


def default_embedding_dim(d: int) -> int:
    """floor(log^2 d) + 1 (natural log)."""
    return int(np.floor(np.log(d) ** 2)) + 1


class ProcessKind(Enum):
    AR1 = "ar1"
    SPHERE_WALK = "sphere"
    ARMA13 = "arma13"


@dataclass(frozen=True)
class DiscourseProcess:
    """Latent discourse dynamics: kind, AR coefficient and dimension.

    ``sphere_step`` is the tangent step scale of the sphere walk; the default
    sqrt(log d)/p matches the AR(1) per-step displacement and is exposed
    because the underlying reference leaves it unspecified.
    """

    kind: ProcessKind
    alpha: float
    p: int
    sphere_step: float | None = None

    def __post_init__(self):
        # closed bounds admit the degenerate persistence (alpha=1) and
        # memoryless (alpha=0) cases; model defaults always land inside (0,1)
        if not 0.0 <= self.alpha <= 1.0:
            raise InputError(f"alpha must be in [0,1], got {self.alpha}")
        if self.p < 1:
            raise InputError("p must be >= 1")

    @classmethod
    def ar1(cls, d: int, p: int, alpha: float | None = None) -> "DiscourseProcess":
        return cls(ProcessKind.AR1, default_alpha(d, p) if alpha is None else alpha, p)

    @classmethod
    def sphere(cls, d: int, p: int, alpha: float | None = None,
               step: float | None = None) -> "DiscourseProcess":
        a = default_alpha(d, p) if alpha is None else alpha
        s = np.sqrt(np.log(d)) / p if step is None else step
        return cls(ProcessKind.SPHERE_WALK, a, p, sphere_step=float(s))

    @classmethod
    def arma13(cls, d: int, p: int, alpha: float | None = None) -> "DiscourseProcess":
        return cls(ProcessKind.ARMA13, default_alpha(d, p) if alpha is None else alpha, p)


@dataclass
class DiscourseState:
    """Current discourse vector plus the last three innovations (ARMA only)."""

    c: np.ndarray
    r_hist: np.ndarray | None = None  # shape (3, p), most recent first


@dataclass(frozen=True)
class EmbeddingMatrix:
    """d x p knowledge-graph embedding with its centering metadata.

    ``centering_vector`` is the Monte-Carlo estimate of V^T p that was
    subtracted from every row (zeros when no centering was applied);
    ``marginals`` is the MC marginal distribution used in that step.
    """

    values: np.ndarray
    centering_vector: np.ndarray
    marginals: np.ndarray | None = None

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 1:
            raise InputError(f"embedding matrix must be (d>=2, p>=1), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NumericalError("embedding matrix contains non-finite entries")

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def gram(self) -> np.ndarray:
        return self.values @ self.values.T

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.values, compute_uv=False)

    def kappa_xi(self, alpha_p_value: float) -> tuple[float, float]:
        """Scale parameters: kappa = sqrt(alpha_p) * svmax, xi = svmin/svmax."""
        sv = self.singular_values()
        kappa = float(np.sqrt(alpha_p_value) * sv[0])
        xi = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
        return kappa, xi

    def centering_residual(self) -> float:
        """||V^T p_mc|| against the marginal vector actually subtracted."""
        if self.marginals is None:
            return float("nan")
        return float(np.linalg.norm(self.values.T @ self.marginals))


@dataclass
class SimConfig:
    """Cohort simulation parameters; mirrors the CLI JSON config."""

    d: int
    p: int
    n: int
    T: int | list[int]
    q: int
    seed: int
    kappa_exponent: float | None = None
    mc_samples: int = 10**6
    process: str = "ar1"
    alpha: float | None = None
    sphere_step: float | None = None

    def lengths(self) -> np.ndarray:
        if isinstance(self.T, int):
            return np.full(self.n, self.T, dtype=np.int64)
        t = np.asarray(self.T, dtype=np.int64)
        if t.size != self.n:
            raise InputError(f"got {t.size} lengths for n={self.n} patients")
        return t

    def validate(self) -> "SimConfig":
        if self.d < 2:
            raise InputError("d must be >= 2")
        if self.p < 1:
            raise InputError("p must be >= 1")
        if self.n < 1:
            raise InputError("n must be >= 1")
        if self.q < 1:
            raise InputError("q must be >= 1")
        if np.any(self.lengths() <= 2 * self.q):
            raise InputError("every T_i must exceed 2q for the co-occurrence window")
        if self.mc_samples < 10**4:
            raise InputError("mc_samples must be >= 1e4")
        ProcessKind(self.process)
        return self

    def discourse(self) -> DiscourseProcess:
        kind = ProcessKind(self.process)
        if kind is ProcessKind.AR1:
            return DiscourseProcess.ar1(self.d, self.p, self.alpha)
        if kind is ProcessKind.SPHERE_WALK:
            return DiscourseProcess.sphere(self.d, self.p, self.alpha, self.sphere_step)
        return DiscourseProcess.arma13(self.d, self.p, self.alpha)


@dataclass
class Cohort:
    """n tokenized sequences over vocabulary [0, d)."""

    codes: list[np.ndarray]
    d: int
    q: int = 0  # window size carried from the generating config

    @property
    def n(self) -> int:
        return len(self.codes)

    def lengths(self) -> np.ndarray:
        return np.array([len(c) for c in self.codes], dtype=np.int64)

    def as_matrix(self) -> np.ndarray:
        """(n, T) matrix; requires uniform lengths."""
        ls = self.lengths()
        if ls.size and not np.all(ls == ls[0]):
            raise InputError("cohort has heterogeneous lengths")
        return np.stack(self.codes) if self.codes else np.empty((0, 0), dtype=np.int32)


# ---------------------------------------------------------------------------
# embeddings


def orthonormal_columns(d: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal basis of a d x p standard-normal matrix (sign-stabilized QR)."""
    m = rng.standard_normal((d, p))
    if not np.all(np.isfinite(m)):
        raise NumericalError("RNG produced non-finite draws")
    qm, rm = np.linalg.qr(m)
    return qm * np.sign(np.diag(rm))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row softmax with max-subtraction; raises on non-finite logits."""
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite logits in softmax")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def code_probabilities(V: np.ndarray, c: np.ndarray) -> np.ndarray:
    """P(w | c) = softmax over <V_w, c>; c is (p,) or (m, p)."""
    return softmax_rows(np.atleast_2d(c) @ V.T).squeeze()


def estimate_marginals_mc(V: np.ndarray | EmbeddingMatrix, samples: int,
                          seed: int | np.random.Generator,
                          batch: int = 250_000) -> np.ndarray:
    """Monte-Carlo marginal occurrence probabilities.

    Averages softmax(V c) over c ~ N(0, I_p/p).  Output sums to 1 and is
    strictly positive.
    """
    v = V.values if isinstance(V, EmbeddingMatrix) else np.asarray(V, dtype=float)
    if samples < 1:
        raise InputError("samples must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, _STREAM_MC)
    d, p = v.shape
    acc = np.zeros(d)
    left = samples
    while left > 0:
        b = min(batch, left)
        c = rng.standard_normal((b, p)) / np.sqrt(p)
        acc += softmax_rows(c @ v.T).sum(axis=0)
        left -= b
    out = acc / samples
    return out / out.sum()  # kill last-ulp drift; entries already > 0


def build_embeddings(cfg: SimConfig) -> EmbeddingMatrix:
    """Three-step construction: orthonormal basis, MC marginals, centering.

    Step 3 subtracts V_init^T p_mc from every row, which makes the centering
    identity V^T p_mc = 0 exact up to float roundoff.
    """
    cfg.validate()
    rng = substream(cfg.seed, _STREAM_EMBED)
    v_init = orthonormal_columns(cfg.d, cfg.p, rng)
    p_mc = estimate_marginals_mc(v_init, cfg.mc_samples, rng)
    shift = v_init.T @ p_mc
    return EmbeddingMatrix(values=v_init - shift, centering_vector=shift, marginals=p_mc)


def scaled_embeddings(cfg: SimConfig) -> EmbeddingMatrix:
    """V = d**-kappa * U with U an orthonormalized Gaussian basis; no centering."""
    cfg.validate()
    if cfg.kappa_exponent is None:
        raise InputError("kappa_exponent must be set for scaled embeddings")
    rng = substream(cfg.seed, _STREAM_EMBED)
    u = orthonormal_columns(cfg.d, cfg.p, rng)
    v = cfg.d ** (-cfg.kappa_exponent) * u
    return EmbeddingMatrix(values=v, centering_vector=np.zeros(cfg.p))


# ---------------------------------------------------------------------------
# discourse dynamics


def stationary_state(process: DiscourseProcess, rng: np.random.Generator) -> DiscourseState:
    """Initial state from the stationary law (N(0, I/p); uniform sphere for the walk)."""
    g = rng.standard_normal(process.p) / np.sqrt(process.p)
    if process.kind is ProcessKind.SPHERE_WALK:
        return DiscourseState(c=g / np.linalg.norm(g))
    if process.kind is ProcessKind.ARMA13:
        return DiscourseState(c=g, r_hist=np.zeros((3, process.p)))
    return DiscourseState(c=g)


def step_discourse(state: DiscourseState, process: DiscourseProcess,
                   rng: np.random.Generator) -> DiscourseState:
    """One transition of the chosen dynamics; innovation r ~ N(0, I_p/p)."""
    p = process.p
    r = rng.standard_normal(p) / np.sqrt(p)
    a = process.alpha
    if process.kind is ProcessKind.AR1:
        return DiscourseState(c=np.sqrt(a) * state.c + np.sqrt(1.0 - a) * r)
    if process.kind is ProcessKind.SPHERE_WALK:
        c = state.c
        tangent = r - (r @ c) * c
        nxt = c + process.sphere_step * tangent
        return DiscourseState(c=nxt / np.linalg.norm(nxt))
    # ARMA(1,3): sqrt(a) c + sqrt(1-a) r_{t+1} + 0.2 r_t + 0.1 r_{t-1} + 0.05 r_{t-2}
    h = state.r_hist if state.r_hist is not None else np.zeros((3, p))
    c = (np.sqrt(a) * state.c + np.sqrt(1.0 - a) * r
         + ARMA_COEFFS[0] * h[0] + ARMA_COEFFS[1] * h[1] + ARMA_COEFFS[2] * h[2])
    return DiscourseState(c=c, r_hist=np.vstack([r, h[:2]]))


# ---------------------------------------------------------------------------
# sequence sampling

# Per-patient draw layout (fixed so blocked and sequential generation agree):
#   AR1 / sphere: R = standard_normal((T, p))/sqrt(p), then U = random(T)
#   ARMA13:       R = standard_normal((T + burnin, p))/sqrt(p), then U = random(T)
# R[0] seeds the initial state; R[t] is the innovation of step t.


def _patient_draws(process: DiscourseProcess, T: int, rng: np.random.Generator):
    extra = ARMA_BURNIN if process.kind is ProcessKind.ARMA13 else 0
    R = rng.standard_normal((T + extra, process.p)) / np.sqrt(process.p)
    U = rng.random(T)
    return R, U


def _discourse_path(process: DiscourseProcess, R: np.ndarray, T: int) -> np.ndarray:
    """All discourse vectors of one patient from its innovation block."""
    p = process.p
    a = process.alpha
    out = np.empty((T, p))
    if process.kind is ProcessKind.AR1:
        c = R[0]
        out[0] = c
        sa, sb = np.sqrt(a), np.sqrt(1.0 - a)
        for t in range(1, T):
            c = sa * c + sb * R[t]
            out[t] = c
    elif process.kind is ProcessKind.SPHERE_WALK:
        c = R[0] / np.linalg.norm(R[0])
        out[0] = c
        for t in range(1, T):
            g = R[t]
            tangent = g - (g @ c) * c
            c = c + process.sphere_step * tangent
            c /= np.linalg.norm(c)
            out[t] = c
    else:
        c = R[0]
        h = np.zeros((3, p))
        sa, sb = np.sqrt(a), np.sqrt(1.0 - a)
        for t in range(1, ARMA_BURNIN + T):
            r = R[t]
            c = sa * c + sb * r + 0.2 * h[0] + 0.1 * h[1] + 0.05 * h[2]
            h[1:] = h[:2]
            h[0] = r
            if t >= ARMA_BURNIN:
                out[t - ARMA_BURNIN] = c
    return out


def sample_sequence(V: np.ndarray | EmbeddingMatrix, T_i: int,
                    process: DiscourseProcess,
                    rng: np.random.Generator) -> np.ndarray:
    """One patient's code sequence; c_1 from the stationary law."""
    v = V.values if isinstance(V, EmbeddingMatrix) else np.asarray(V, dtype=float)
    if T_i < 1:
        raise InputError("T_i must be >= 1")
    if v.shape[1] != process.p:
        raise InputError(f"process dimension {process.p} != embedding p {v.shape[1]}")
    R, U = _patient_draws(process, T_i, rng)
    path = _discourse_path(process, R, T_i)
    probs = softmax_rows(path @ v.T)
    cum = np.cumsum(probs, axis=1)
    idx = (cum < U[:, None] * cum[:, -1:]).sum(axis=1)
    return idx.astype(np.int32)


def sample_cohort(V: np.ndarray | EmbeddingMatrix, cfg: SimConfig,
                  process: DiscourseProcess | None = None,
                  block: int = 256) -> Cohort:
    """Generate the whole cohort, vectorized over patients in blocks.

    Every patient uses substream(cfg.seed, patient_index), so the output does
    not depend on the block size or on how work is split across workers.
    """
    v = V.values if isinstance(V, EmbeddingMatrix) else np.asarray(V, dtype=float)
    cfg.validate()
    proc = process if process is not None else cfg.discourse()
    if v.shape[1] != proc.p:
        raise InputError("embedding and process dimensions differ")
    lengths = cfg.lengths()
    uniform = bool(np.all(lengths == lengths[0])) if cfg.n else True
    codes: list[np.ndarray] = []
    if uniform and cfg.n:
        T = int(lengths[0])
        mat = np.empty((cfg.n, T), dtype=np.int32)
        for start in range(0, cfg.n, block):
            stop = min(start + block, cfg.n)
            mat[start:stop] = _sample_block(v, proc, T, cfg.seed, start, stop)
        codes = list(mat)
    else:
        for i in range(cfg.n):
            rng = substream(cfg.seed, _STREAM_PATIENT, i)
            codes.append(sample_sequence(v, int(lengths[i]), proc, rng))
    return Cohort(codes=codes, d=cfg.d, q=cfg.q)


def _sample_block(v: np.ndarray, proc: DiscourseProcess, T: int,
                  seed: int, start: int, stop: int) -> np.ndarray:
    """Vectorized generation of patients [start, stop) with per-patient streams."""
    p = proc.p
    bs = stop - start
    extra = ARMA_BURNIN if proc.kind is ProcessKind.ARMA13 else 0
    R = np.empty((bs, T + extra, p))
    U = np.empty((bs, T))
    for j, i in enumerate(range(start, stop)):
        rng = substream(seed, _STREAM_PATIENT, i)
        R[j], U[j] = _patient_draws(proc, T, rng)

    out = np.empty((bs, T), dtype=np.int32)
    a = proc.alpha
    sa, sb = np.sqrt(a), np.sqrt(1.0 - a)
    if proc.kind is ProcessKind.ARMA13:
        c = R[:, 0, :].copy()
        h = np.zeros((3, bs, p))
        for t in range(1, ARMA_BURNIN):
            r = R[:, t, :]
            c = sa * c + sb * r + 0.2 * h[0] + 0.1 * h[1] + 0.05 * h[2]
            h[1:] = h[:2]
            h[0] = r
        emit_from = ARMA_BURNIN
    else:
        c = R[:, 0, :].copy()
        if proc.kind is ProcessKind.SPHERE_WALK:
            c /= np.linalg.norm(c, axis=1, keepdims=True)
        emit_from = 0

    vt = v.T.copy()
    for t in range(T):
        k = t + emit_from
        if proc.kind is ProcessKind.ARMA13:
            r = R[:, k, :]
            c = sa * c + sb * r + 0.2 * h[0] + 0.1 * h[1] + 0.05 * h[2]
            h[1:] = h[:2]
            h[0] = r
        elif t > 0:
            if proc.kind is ProcessKind.AR1:
                c = sa * c + sb * R[:, t, :]
            else:
                g = R[:, t, :]
                c = c + proc.sphere_step * (g - np.einsum("ij,ij->i", g, c)[:, None] * c)
                c /= np.linalg.norm(c, axis=1, keepdims=True)
        probs = softmax_rows(c @ vt)
        cum = np.cumsum(probs, axis=1)
        out[:, t] = (cum < U[:, t, None] * cum[:, -1:]).sum(axis=1)
    return out


def sample_null_cohort(p_vec: np.ndarray, n: int, T: int | np.ndarray,
                       seed: int, q: int = 0) -> Cohort:
    """Global-null cohort: i.i.d. Multinomial(1, p_vec) draws, per patient."""
    p_vec = np.asarray(p_vec, dtype=float)
    if p_vec.ndim != 1 or p_vec.size < 1:
        raise InputError("p_vec must be a 1-d probability vector")
    if np.any(p_vec < 0) or abs(p_vec.sum() - 1.0) > 1e-9:
        raise InputError(f"p_vec must be nonnegative and sum to 1 (sum={p_vec.sum()!r})")
    d = p_vec.size
    lengths = np.full(n, T, dtype=np.int64) if np.isscalar(T) else np.asarray(T, dtype=np.int64)
    cum = np.cumsum(p_vec)
    codes = []
    for i in range(n):
        rng = substream(seed, _STREAM_PATIENT, i)
        u = rng.random(int(lengths[i]))
        idx = np.searchsorted(cum, u, side="right")
        codes.append(np.minimum(idx, d - 1).astype(np.int32))
    return Cohort(codes=codes, d=d, q=q)


# ---------------------------------------------------------------------------
# population quantities (Monte Carlo; used for bias reporting in the benches)


def population_pmi_mc(V: np.ndarray | EmbeddingMatrix, alpha: float, q: int,
                      samples: int, seed: int, batch: int = 20_000) -> np.ndarray:
    """MC estimate of the population PMI matrix under the AR(1) model.

    For each lag u <= q draws stationary pairs (c, c') with corr alpha**(u/2)
    and accumulates E[softmax(Vc) softmax(Vc')^T] via matrix products.
    """
    v = V.values if isinstance(V, EmbeddingMatrix) else np.asarray(V, dtype=float)
    d, p = v.shape
    rng = substream(seed, _STREAM_MC, q)
    pair_acc = np.zeros((d, d))
    marg_acc = np.zeros(d)
    left = samples
    while left > 0:
        b = min(batch, left)
        c = rng.standard_normal((b, p)) / np.sqrt(p)
        s_c = softmax_rows(c @ v.T)
        marg_acc += s_c.sum(axis=0)
        for u in range(1, q + 1):
            rho = alpha ** (u / 2.0)
            z = rng.standard_normal((b, p)) / np.sqrt(p)
            c2 = rho * c + np.sqrt(1.0 - rho * rho) * z
            s_c2 = softmax_rows(c2 @ v.T)
            pair_acc += s_c.T @ s_c2
        left -= b
    p_pair = pair_acc / (q * samples)
    p_pair = 0.5 * (p_pair + p_pair.T)  # lag symmetry holds in population
    p_marg = marg_acc / samples
    return np.log(p_pair / np.outer(p_marg, p_marg))
