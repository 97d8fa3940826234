"""Statistical core: MOS generation, factor analysis, QoE model fitting.

A user's experience score is modeled as a QoS base score (one of three
structures) scaled by a context impact factor:

    E = S(R, Q) * I(B, C),   I(B, C) = 1 / (1 + alpha*(B-1) + beta*(C-1))

where R is rebuffer seconds per evaluation period, Q the normalized video
quality, B behavioral dynamics and C environmental complexity (both in
[1, 2]).  Observed MOS samples are truncated-normal draws around that mean.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import (
    DegenerateInput,
    DomainError,
    InsufficientData,
    LengthMismatch,
    UnknownStructure,
)

MOS_LO = 1.0
MOS_HI = 5.0

REBUFFER_SLOPE = 0.4
QUALITY_SLOPE = 4.0

# Generator variance per structure: rebuffer-based, quality-based, combined.
STRUCTURE_VARIANCE = {1: 8.0, 2: 1.0, 3: 0.8}
STRUCTURES = (1, 2, 3)

_FACTOR_NAMES = ("R", "Q", "B", "C")


@dataclass(frozen=True)
class QoEModel:
    """Fitted per-user experience model: structure + impact parameters."""

    structure_index: int
    impact_params: tuple[float, float]  # (alpha, beta), both >= 0
    fit_rmse: float
    sample_count: int
    converged: bool = True

    def __post_init__(self):
        if self.structure_index not in STRUCTURES:
            raise UnknownStructure(f"structure_index={self.structure_index}")
        a, b = self.impact_params
        if a < 0 or b < 0 or self.fit_rmse < 0:
            raise DomainError("impact params and rmse must be nonnegative")


@dataclass(frozen=True)
class FactorSample:
    """One observed (MOS, QoS, context) tuple used for factor analysis."""

    qoe: float
    r: float  # rebuffer seconds in the evaluation period
    q: float  # normalized quality in [0, 1]
    b: float  # behavioral dynamics in [1, 2]
    c: float  # environmental complexity in [1, 2]

    @property
    def qos_vector(self) -> tuple[float, float]:
        return (self.r, self.q)

    @property
    def context(self) -> tuple[float, float]:
        return (self.b, self.c)


def qos_score(structure_index: int, r: float, q: float) -> float:
    """QoS base score S for one structure, clamped to the MOS scale."""
    if structure_index == 1:
        s = 5.0 - REBUFFER_SLOPE * r
    elif structure_index == 2:
        s = 1.0 + QUALITY_SLOPE * q
    elif structure_index == 3:
        s = 1.0 + QUALITY_SLOPE * q - REBUFFER_SLOPE * r
    else:
        raise UnknownStructure(f"structure_index={structure_index}")
    return min(max(s, MOS_LO), MOS_HI)


def impact(b: float, c: float, alpha: float, beta: float) -> float:
    """Context impact factor I(B, C); equals 1 at the neutral context."""
    return 1.0 / (1.0 + alpha * (b - 1.0) + beta * (c - 1.0))


def eval_qoe(model: QoEModel, r: float, q: float, b: float, c: float,
             clamp: bool = True) -> float:
    """Predicted QoE under a fitted model; interior value if clamp=False."""
    alpha, beta = model.impact_params
    e = qos_score(model.structure_index, r, q) * impact(b, c, alpha, beta)
    if clamp:
        e = min(max(e, MOS_LO), MOS_HI)
    return e


def truncated_normal_from_uniform(mu, sigma, u, lo=MOS_LO, hi=MOS_HI):
    """Inverse-CDF map of uniform draws to truncated-normal samples.

    Vectorized over mu/sigma/u.  One uniform per draw keeps the consumed
    stream length independent of the distribution parameters.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    u = np.asarray(u, dtype=float)
    if sigma.ndim == 0 and float(sigma) == 0.0:
        return np.clip(mu, lo, hi) + 0.0 * u
    safe_sigma = np.where(sigma > 0.0, sigma, 1.0)
    a = ndtr((lo - mu) / safe_sigma)
    b = ndtr((hi - mu) / safe_sigma)
    # Guard the fully-saturated tails where b - a underflows.
    span = np.maximum(b - a, 1e-300)
    x = mu + safe_sigma * ndtri(np.clip(a + u * span, 1e-300, 1.0 - 1e-16))
    return np.clip(np.where(sigma > 0.0, x, mu), lo, hi)


def sample_truncated_normal(mu: float, sigma2: float, lo: float = MOS_LO,
                            hi: float = MOS_HI, *, rng: np.random.Generator) -> float:
    """One draw from Normal(mu, sigma2) conditioned on [lo, hi].

    sigma2 is a variance.  sigma2=0 degenerates to clamp(mu, lo, hi).
    """
    if lo >= hi:
        raise DomainError(f"lo={lo} must be < hi={hi}")
    if sigma2 < 0:
        raise DomainError("variance must be nonnegative")
    u = rng.random()
    return float(truncated_normal_from_uniform(mu, math.sqrt(sigma2), u, lo, hi))


def mos_sample(structure_index: int, r: float, q: float, b: float, c: float,
               true_params: tuple[float, float], *, rng: np.random.Generator) -> float:
    """Ground-truth MOS draw: truncated normal around S(R,Q) * I(B,C)."""
    alpha, beta = true_params
    mean = qos_score(structure_index, r, q) * impact(b, c, alpha, beta)
    return sample_truncated_normal(mean, STRUCTURE_VARIANCE[structure_index], rng=rng)


def distance_correlation(x, y) -> float:
    """Sample distance correlation of two equal-length real vectors.

    Computed from double-centered pairwise distance matrices:
    dCor = dCov / sqrt(dVar_x * dVar_y), in [0, 1].
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise LengthMismatch(f"{x.shape} vs {y.shape}")
    n = x.size
    if n < 4:
        raise DegenerateInput("need at least 4 samples")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise DegenerateInput("constant vector has zero distance variance")
    a = np.abs(x[:, None] - x[None, :])
    b = np.abs(y[:, None] - y[None, :])
    a_c = a - a.mean(axis=0)[None, :] - a.mean(axis=1)[:, None] + a.mean()
    b_c = b - b.mean(axis=0)[None, :] - b.mean(axis=1)[:, None] + b.mean()
    dcov2 = max((a_c * b_c).mean(), 0.0)
    dvar_x = (a_c * a_c).mean()
    dvar_y = (b_c * b_c).mean()
    return min(math.sqrt(dcov2 / math.sqrt(dvar_x * dvar_y)), 1.0)


def factor_correlations(samples: list[FactorSample]) -> dict[str, float]:
    """Distance correlation of each factor column against the MOS column.

    Constant columns are assigned 0 so pipeline runs degrade gracefully.
    """
    qoe = np.array([s.qoe for s in samples])
    cols = {
        "R": np.array([s.r for s in samples]),
        "Q": np.array([s.q for s in samples]),
        "B": np.array([s.b for s in samples]),
        "C": np.array([s.c for s in samples]),
    }
    out = {}
    for name, col in cols.items():
        if np.ptp(col) == 0.0 or np.ptp(qoe) == 0.0:
            out[name] = 0.0
        else:
            out[name] = distance_correlation(col, qoe)
    return out


def select_factors(samples: list[FactorSample], threshold: float = 0.1) -> list[str]:
    """Factors whose dCor with MOS reaches the threshold, strongest first."""
    if len(samples) < 20:
        raise InsufficientData(f"need >= 20 samples, got {len(samples)}")
    dcors = factor_correlations(samples)
    picked = [n for n in _FACTOR_NAMES
              if np.ptp([getattr(s, n.lower()) for s in samples]) > 0.0
              and dcors[n] >= threshold]
    return sorted(picked, key=lambda n: -dcors[n])


def _predictions(structure_index, params, r, q, b, c):
    alpha, beta = params
    s = np.clip(_qos_vec(structure_index, r, q), MOS_LO, MOS_HI)
    i = 1.0 / (1.0 + alpha * (b - 1.0) + beta * (c - 1.0))
    return np.clip(s * i, MOS_LO, MOS_HI), s, i


def _qos_vec(structure_index, r, q):
    if structure_index == 1:
        return 5.0 - REBUFFER_SLOPE * r
    if structure_index == 2:
        return 1.0 + QUALITY_SLOPE * q
    if structure_index == 3:
        return 1.0 + QUALITY_SLOPE * q - REBUFFER_SLOPE * r
    raise UnknownStructure(f"structure_index={structure_index}")


def fit_model(structure_index: int, samples: list[FactorSample],
              start: tuple[float, float] = (0.5, 0.5),
              max_iter: int = 200) -> QoEModel:
    """Levenberg-Marquardt fit of (alpha, beta) with projection onto >= 0.

    Deterministic given the samples (fixed start).  The accepted-step
    objective is non-increasing by construction; convergence failure is
    reported via the model's `converged` flag rather than an exception.
    """
    if len(samples) < 2:
        raise InsufficientData(f"need >= 2 samples, got {len(samples)}")
    qoe = np.array([s.qoe for s in samples])
    r = np.array([s.r for s in samples])
    q = np.array([s.q for s in samples])
    b = np.array([s.b for s in samples])
    c = np.array([s.c for s in samples])
    if np.ptp(b) == 0.0 and np.ptp(c) == 0.0:
        raise InsufficientData("impact parameters unidentifiable: (B, C) constant")

    params = np.array(start, dtype=float)
    pred, s, i = _predictions(structure_index, params, r, q, b, c)
    resid = qoe - pred
    sse = float(resid @ resid)
    lam = 1e-3
    converged = False
    for _ in range(max_iter):
        # Jacobian of predictions; rows clamped at the MOS bounds get zero rows.
        live = (pred > MOS_LO) & (pred < MOS_HI)
        d_alpha = np.where(live, -s * i * i * (b - 1.0), 0.0)
        d_beta = np.where(live, -s * i * i * (c - 1.0), 0.0)
        jac = np.column_stack([d_alpha, d_beta])
        g = jac.T @ resid
        h = jac.T @ jac
        if float(np.abs(g).max(initial=0.0)) < 1e-12:
            converged = True
            break
        accepted = False
        for _ in range(30):
            step = np.linalg.solve(h + lam * np.eye(2), g)
            cand = np.maximum(params + step, 0.0)
            pred_c, s_c, i_c = _predictions(structure_index, cand, r, q, b, c)
            resid_c = qoe - pred_c
            sse_c = float(resid_c @ resid_c)
            if sse_c <= sse:  # accepted steps never increase the objective
                small = (sse - sse_c < 1e-14 * (sse + 1e-30)
                         or float(np.abs(cand - params).max()) < 1e-12)
                params, pred, s, i, resid, sse = cand, pred_c, s_c, i_c, resid_c, sse_c
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                if small:
                    converged = True
                break
            lam *= 3.0
        if not accepted:
            # No damping level improves: projected stationary point.
            converged = True
        if converged:
            break
    rmse = math.sqrt(sse / len(samples))
    return QoEModel(structure_index, (float(params[0]), float(params[1])),
                    rmse, len(samples), converged)


def model_rmse(model: QoEModel, samples: list[FactorSample]) -> float:
    """RMSE of a fitted model's predictions on a sample set."""
    err = [s.qoe - eval_qoe(model, s.r, s.q, s.b, s.c) for s in samples]
    return math.sqrt(sum(e * e for e in err) / len(err))


def should_update(old: QoEModel, recent: list[FactorSample],
                  rmse_tolerance: float = 1.5) -> bool:
    """True when the old model has drifted: recent RMSE exceeds the fit RMSE
    by more than the tolerance factor."""
    return model_rmse(old, recent) > rmse_tolerance * (old.fit_rmse + 1e-9)


def structure_log_likelihood(model: QoEModel, samples: list[FactorSample]) -> float:
    """Truncated-normal log-likelihood of samples under a fitted model.

    Uses the structure's known generator variance, so a hypothesis whose
    residuals are far smaller or larger than that variance scores poorly.
    """
    var = STRUCTURE_VARIANCE[model.structure_index]
    sigma = math.sqrt(var)
    r = np.array([s.r for s in samples])
    q = np.array([s.q for s in samples])
    b = np.array([s.b for s in samples])
    c = np.array([s.c for s in samples])
    x = np.array([s.qoe for s in samples])
    _, s_vec, i_vec = _predictions(model.structure_index, model.impact_params,
                                   r, q, b, c)
    mean = s_vec * i_vec
    z = np.maximum(ndtr((MOS_HI - mean) / sigma) - ndtr((MOS_LO - mean) / sigma),
                   1e-300)
    ll = (-0.5 * math.log(2.0 * math.pi * var)
          - (x - mean) ** 2 / (2.0 * var)
          - np.log(z))
    return float(ll.sum())


def fit_best_structure(samples: list[FactorSample],
                       threshold: float = 0.1) -> tuple[QoEModel, list[str]]:
    """Construct a model from raw feedback: screen factors, fit each
    structure, keep the hypothesis with the highest truncated-normal
    log-likelihood under its own generator variance.

    Returns the chosen model and the dCor-selected factor names.
    """
    selected = select_factors(samples, threshold) if len(samples) >= 20 else []
    best, best_ll = None, -np.inf
    for idx in STRUCTURES:
        try:
            m = fit_model(idx, samples)
        except InsufficientData:
            continue
        ll = structure_log_likelihood(m, samples)
        if ll > best_ll:
            best, best_ll = m, ll
    if best is None:
        raise InsufficientData("no structure could be fitted")
    return best, selected
