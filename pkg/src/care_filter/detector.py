"""Chi-square testing of attack estimates and CUSUM change detection.

The chi-square quantile is computed internally by inverting the regularized
incomplete gamma function, so the significance level and the degrees of
freedom stay free parameters instead of being read off a hard-coded table.
Statistics come in two flavours: `chi2_statistic` follows the textbook
definition with a pseudoinverse (rank-deficient covariances lose their null
directions), while `detection_statistic` floors tiny eigenvalues so that a
component pinned to a constraint boundary still counts as evidence.
"""

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DetectorConfig",
    "DetectorState",
    "chi2_cdf",
    "chi2_quantile",
    "chi2_statistic",
    "cusum_update",
    "detection_statistic",
    "false_negative_rate",
    "regularized_gamma_p",
]

_GAMMA_EPS = 1e-16
_GAMMA_MAX_ITER = 600
_FPMIN = 1e-300


def _gamma_p_series(a, x):
    """Lower regularized gamma P(a, x) by power series, for x < a + 1."""
    term = 1.0 / a
    total = term
    n = 0
    while n < _GAMMA_MAX_ITER:
        n += 1
        term *= x / (a + n)
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_contfrac(a, x):
    """Upper regularized gamma Q(a, x) by continued fraction (Lentz), x >= a + 1."""
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def regularized_gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function P(a, x)."""
    if a <= 0:
        raise ValueError("shape parameter must be positive")
    if x < 0:
        raise ValueError("argument must be nonnegative")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_p_series(a, x)
    return 1.0 - _gamma_q_contfrac(a, x)


def chi2_cdf(x: float, df: int) -> float:
    """CDF of the chi-square distribution with df degrees of freedom."""
    _check_df(df)
    if x <= 0.0:
        return 0.0
    return regularized_gamma_p(0.5 * df, 0.5 * x)


def _chi2_pdf(x, df):
    if x <= 0.0:
        return 0.0
    a = 0.5 * df
    return math.exp((a - 1.0) * math.log(x) - 0.5 * x - math.lgamma(a) - a * math.log(2.0))


def _check_df(df):
    if df != int(df) or df < 1:
        raise ValueError("degrees of freedom must be a positive integer")


def chi2_quantile(df: int, alpha: float) -> float:
    """Upper-tail chi-square quantile: the q with P(X > q) = alpha.

    Inverts the regularized incomplete gamma function with a bracketed
    Newton iteration (bisection fallback), absolute tolerance 1e-10.
    """
    _check_df(df)
    if not 0.0 < alpha < 1.0:
        raise ValueError("significance level must lie strictly between 0 and 1")
    target = 1.0 - alpha

    lo = 0.0
    hi = float(df) + 10.0
    guard = 0
    while chi2_cdf(hi, df) < target:
        hi *= 2.0
        guard += 1
        if guard > 600:
            raise ArithmeticError("failed to bracket the chi-square quantile")

    q = 0.5 * (lo + hi)
    for _ in range(200):
        f = chi2_cdf(q, df) - target
        if f > 0.0:
            hi = q
        else:
            lo = q
        if hi - lo < 1e-10:
            break
        slope = _chi2_pdf(q, df)
        if slope > 0.0:
            step = q - f / slope
        else:
            step = lo - 1.0  # force bisection
        if lo < step < hi:
            q = step
        else:
            q = 0.5 * (lo + hi)
    return 0.5 * (lo + hi)


def chi2_statistic(d: np.ndarray, P: np.ndarray, strict: bool = False) -> float:
    """Normalized test statistic d' P^+ d.

    Uses the eigendecomposition pseudoinverse, dropping directions whose
    eigenvalue falls below n * max|eig| * 1e-12. After a projection that
    pins the estimate to a constraint boundary, P can be exactly singular;
    the dropped directions then carry no weight. In strict mode the call
    refuses estimates with a significant component in a dropped direction,
    restricting the statistic to the row space of P.
    """
    d = np.asarray(d, dtype=float).ravel()
    P = np.asarray(P, dtype=float)
    if P.shape != (d.size, d.size):
        raise ValueError("covariance shape does not match the estimate")
    if not d.any():
        return 0.0
    lam, vecs = np.linalg.eigh(0.5 * (P + P.T))
    tol = d.size * float(np.abs(lam).max(initial=0.0)) * 1e-12
    comp = vecs.T @ d
    keep = lam > tol
    if strict:
        lost = np.abs(comp[~keep])
        if lost.size and lost.max() > 1e-8 * (1.0 + float(np.linalg.norm(d))):
            raise ValueError("estimate has a component outside the row space of P")
    if not keep.any():
        return 0.0
    return float(np.sum(comp[keep] ** 2 / lam[keep]))


def detection_statistic(d: np.ndarray, P: np.ndarray) -> float:
    """Decision-oriented statistic: like d' P^{-1} d but with floored eigenvalues.

    A projection onto an active constraint leaves (numerically) zero variance
    along the constraint normal while the estimate itself sits exactly on the
    boundary. The pseudoinverse statistic silently discards that component,
    which turns the strongest possible evidence (an estimate pinned at the
    physical limit) into no evidence at all. Flooring the eigenvalues at
    1e-12 * (1 + trace P) keeps those components, and agrees with the exact
    inverse whenever P is well conditioned.
    """
    d = np.asarray(d, dtype=float).ravel()
    P = np.asarray(P, dtype=float)
    if P.shape != (d.size, d.size):
        raise ValueError("covariance shape does not match the estimate")
    if not d.any():
        return 0.0
    lam, vecs = np.linalg.eigh(0.5 * (P + P.T))
    floor = 1e-12 * (1.0 + max(float(np.trace(P)), 0.0))
    lam = np.maximum(lam, floor)
    comp = vecs.T @ d
    return float(np.sum(comp**2 / lam))


@dataclass(frozen=True, slots=True)
class DetectorConfig:
    """Significance level, degrees of freedom, forgetting rate, and the
    derived chi-square quantile / CUSUM threshold."""

    alpha: float
    df: int
    phi: float
    quantile: float
    threshold: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("significance level must lie strictly between 0 and 1")
        _check_df(self.df)
        if not 0.0 < self.phi < 1.0:
            raise ValueError("forgetting rate must lie strictly between 0 and 1")
        if self.quantile <= 0.0:
            raise ValueError("quantile must be positive")
        expected = self.quantile / (1.0 - self.phi)
        if abs(self.threshold - expected) > 1e-12 * max(1.0, abs(expected)):
            raise ValueError("threshold must equal quantile / (1 - phi)")

    @classmethod
    def from_parameters(cls, alpha: float, df: int, phi: float) -> "DetectorConfig":
        q = chi2_quantile(df, alpha)
        return cls(alpha=alpha, df=df, phi=phi, quantile=q, threshold=q / (1.0 - phi))


@dataclass(frozen=True, slots=True)
class DetectorState:
    """CUSUM accumulator S and the number of updates applied so far."""

    S: float = 0.0
    step: int = 0

    def __post_init__(self):
        if self.S < 0.0:
            raise ValueError("CUSUM accumulator must be nonnegative")


def cusum_update(state: DetectorState, stat: float, config: DetectorConfig):
    """One CUSUM step: S' = phi * S + stat, alarm when S' exceeds the threshold."""
    if stat < 0.0:
        raise ValueError("test statistic must be nonnegative")
    s_new = config.phi * state.S + stat
    new_state = DetectorState(S=s_new, step=state.step + 1)
    return new_state, bool(s_new > config.threshold)


def false_negative_rate(stats, quantile: float, truth) -> float:
    """Fraction of attacked steps whose per-step statistic stays at or below
    the quantile. Attacked means the true attack vector is nonzero. Uses
    per-step chi-square decisions, not the CUSUM accumulator."""
    stats = np.asarray(stats, dtype=float).ravel()
    truth_arr = np.atleast_2d(np.asarray(truth, dtype=float))
    if truth_arr.shape[0] == 1 and stats.size > 1:
        truth_arr = truth_arr.T
    if truth_arr.shape[0] != stats.size:
        raise ValueError("statistics and truth sequences must have equal length")
    attacked = np.any(truth_arr != 0.0, axis=1)
    n_attacked = int(attacked.sum())
    if n_attacked == 0:
        raise ValueError("false negative rate undefined: no attacked steps in truth")
    misses = int(np.sum((stats <= quantile) & attacked))
    return misses / n_attacked
