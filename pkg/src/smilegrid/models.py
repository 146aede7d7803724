"""Cumulative distribution models for lookup-table construction.

Every model evaluates through one scalar code path (``_p``) so that tables
built point by point and tables built in bulk hold bit-identical values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels as _k
from .errors import ModelEvaluationError
from .sabr import SabrParams

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
SMILE_FD_REL_STEP = 1e-5
TAIL_PROB = 1e-9


def norm_cdf(x):
    return 0.5 * math.erfc(-x / SQRT2)


class CdfModel:
    """P(x) = Prob(X <= x) with support hints ``x_lo``/``x_hi``.

    ``evals`` counts scalar evaluations; builders report it as work done.
    """

    name = "model"

    def __init__(self, x_lo, x_hi):
        if not x_lo < x_hi:
            raise ValueError("need x_lo < x_hi")
        self.x_lo = float(x_lo)
        self.x_hi = float(x_hi)
        self.evals = 0

    def _p(self, x):
        raise NotImplementedError

    def __call__(self, x):
        self.evals += 1
        return self._p(float(x))

    def cdf(self, xs):
        xs = np.asarray(xs, dtype=float)
        self.evals += xs.size
        return np.array([self._p(float(x)) for x in xs.ravel()]).reshape(xs.shape)

    def reset(self):
        self.evals = 0

    def describe(self):
        return {"name": self.name, "x_lo": self.x_lo, "x_hi": self.x_hi}


class UniformModel(CdfModel):
    name = "uniform"

    def __init__(self, a=0.0, b=1.0):
        super().__init__(a, b)
        self.a, self.b = float(a), float(b)

    def _p(self, x):
        if x <= self.a:
            return 0.0
        if x >= self.b:
            return 1.0
        return (x - self.a) / (self.b - self.a)

    def describe(self):
        return {**super().describe(), "a": self.a, "b": self.b}


class NormalModel(CdfModel):
    """Normal law. The default window is wide (+-40 sd) so that a 500-point
    grid leaves interpolation errors above the loosest caps of interest."""

    name = "normal"

    def __init__(self, mu=0.0, sigma=1.0, x_lo=None, x_hi=None):
        if not sigma > 0.0:
            raise ValueError("sigma must be positive")
        self.mu, self.sigma = float(mu), float(sigma)
        super().__init__(mu - 40.0 * sigma if x_lo is None else x_lo,
                         mu + 40.0 * sigma if x_hi is None else x_hi)

    def _p(self, x):
        return norm_cdf((x - self.mu) / self.sigma)

    def describe(self):
        return {**super().describe(), "mu": self.mu, "sigma": self.sigma}


class LognormalModel(CdfModel):
    """log X ~ N(mu, sigma**2); default window spans the 1e-9 tail quantiles."""

    name = "lognormal"

    def __init__(self, mu=0.0, sigma=1.0, x_lo=None, x_hi=None):
        if not sigma > 0.0:
            raise ValueError("sigma must be positive")
        self.mu, self.sigma = float(mu), float(sigma)
        z = _norm_ppf_upper(TAIL_PROB)
        super().__init__(math.exp(mu - z * sigma) if x_lo is None else x_lo,
                         math.exp(mu + z * sigma) if x_hi is None else x_hi)

    def _p(self, x):
        if x <= 0.0:
            return 0.0
        return norm_cdf((math.log(x) - self.mu) / self.sigma)

    def describe(self):
        return {**super().describe(), "mu": self.mu, "sigma": self.sigma}


def _norm_ppf_upper(p):
    from scipy.special import ndtri

    return float(-ndtri(p))


def sabr_cdf(params: SabrParams, x: float) -> float:
    """Prob(F(T) <= x) implied by the Hagan smile.

    P(K) = 1 + dC/dK for the undiscounted Black call C(K, sigma(K)). The Black
    part is analytic, N(-d2); only the smile slope dsigma/dK is taken by a
    central difference with relative strike step 1e-5. Clamped to [0, 1].
    """
    if not x > 0.0:
        raise ValueError(f"x must be positive, got {x}")
    p = params
    f, T = p.f0, p.T
    vol = _k.hagan_vol(f, x, T, p.alpha, p.beta, p.rho, p.s0)
    h = SMILE_FD_REL_STEP * x
    up = _k.hagan_vol(f, x + h, T, p.alpha, p.beta, p.rho, p.s0)
    dn = _k.hagan_vol(f, x - h, T, p.alpha, p.beta, p.rho, p.s0)
    slope = (up - dn) / ((x + h) - (x - h))
    if not (vol > 0.0 and math.isfinite(vol) and math.isfinite(slope)):
        raise ModelEvaluationError(f"Hagan vol unusable at x={x} for {params}")
    sq = vol * math.sqrt(T)
    d1 = (math.log(f / x) + 0.5 * vol * vol * T) / sq
    d2 = d1 - sq
    prob = norm_cdf(-d2) + f * INV_SQRT_2PI * math.exp(-0.5 * d1 * d1) * math.sqrt(T) * slope
    return min(max(prob, 0.0), 1.0)


def sabr_domain(params: SabrParams, tail=TAIL_PROB, rel_tol=1e-12):
    """Window [x_s, x_f] with P(x_s) <= tail and P(x_f) >= 1 - tail.

    Each end is bracketed by halving/doubling away from the forward and then
    bisected on the tail predicate, keeping the side that satisfies it.
    """
    f = params.f0

    def bisect(inside, outside, ok):
        for _ in range(200):
            if abs(outside - inside) <= rel_tol * abs(inside):
                break
            mid = 0.5 * (inside + outside)
            if ok(mid):
                inside = mid
            else:
                outside = mid
        return inside

    low_ok = lambda x: sabr_cdf(params, x) <= tail  # noqa: E731
    high_ok = lambda x: sabr_cdf(params, x) >= 1.0 - tail  # noqa: E731
    lo = f
    for _ in range(60):
        lo *= 0.5
        if low_ok(lo):
            break
    else:
        raise ModelEvaluationError(f"lower tail never falls to {tail}; smile has mass near zero")
    hi = f
    for _ in range(60):
        hi *= 2.0
        if high_ok(hi):
            break
    else:
        raise ModelEvaluationError(f"upper tail never reaches 1 - {tail}")
    x_s = bisect(lo, 2.0 * lo if 2.0 * lo <= f else f, low_ok)
    x_f = bisect(hi, 0.5 * hi if 0.5 * hi >= f else f, high_ok)
    return x_s, x_f


class SabrModel(CdfModel):
    name = "sabr"

    def __init__(self, params: SabrParams, x_lo=None, x_hi=None):
        self.params = params
        if x_lo is None or x_hi is None:
            lo, hi = sabr_domain(params)
            x_lo = lo if x_lo is None else x_lo
            x_hi = hi if x_hi is None else x_hi
        super().__init__(x_lo, x_hi)

    def _p(self, x):
        return sabr_cdf(self.params, x)

    def describe(self):
        p = self.params
        return {**super().describe(), "alpha": p.alpha, "beta": p.beta, "rho": p.rho,
                "s0": p.s0, "f0": p.f0, "T": p.T}


@dataclass(frozen=True)
class ModelSpec:
    """Serializable description used by the CLI."""

    name: str
    params: dict


def make_model(name, **kw):
    name = name.lower()
    if name == "uniform":
        return UniformModel(**kw)
    if name in ("normal", "standard-normal"):
        return NormalModel(**kw)
    if name == "lognormal":
        return LognormalModel(**kw)
    if name in ("sabr", "sabr-implied"):
        if "params" not in kw:
            from .synthetic import default_case

            kw["params"] = default_case().truth
        return SabrModel(**kw)
    raise ValueError(f"unknown model {name!r}")


MODEL_NAMES = ("uniform", "normal", "lognormal", "sabr")
