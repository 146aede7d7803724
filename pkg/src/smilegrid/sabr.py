"""SABR implied volatility, ATM s0 calibration and the (alpha, rho) error surfaces.

Naming: ``alpha`` is the vol-of-vol, ``s0`` the initial volatility and
``beta`` the fixed CEV exponent. The implied vol is the Hagan et al. (2002)
lognormal approximation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import isfinite

import numpy as np

from ._backend import kernels as _k
from ._pykernels import NOT_BRACKETED, NON_FINITE, OK
from .errors import CalibrationDomainError, MatrixConstructionError, ModelEvaluationError

S0_TOL = 1e-14
S0_MAXITER = 200
ALPHA_DOMAIN = (1e-4, 2.0)
RHO_DOMAIN = (-0.999, 0.999)
DEFAULT_BETA = 0.5


@dataclass(frozen=True)
class SabrParams:
    alpha: float
    beta: float
    rho: float
    s0: float
    f0: float
    T: float

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (-1, 1), got {self.rho}")
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        for name in ("s0", "f0", "T"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class MarketSmile:
    k_minus: float
    k_atm: float
    k_plus: float
    vol_minus: float
    vol_atm: float
    vol_plus: float
    f0: float
    T: float
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if not self.k_minus < self.k_atm < self.k_plus:
            raise ValueError("strikes must satisfy k_minus < k_atm < k_plus")
        if self.k_atm != self.f0:
            raise ValueError("k_atm must equal the forward f0")
        if min(self.vol_minus, self.vol_atm, self.vol_plus) <= 0.0:
            raise ValueError("market vols must be positive")
        if not self.T > 0.0 or not self.f0 > 0.0:
            raise ValueError("f0 and T must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    def params(self, alpha, rho, s0):
        return SabrParams(alpha, self.beta, rho, s0, self.f0, self.T)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(d[k]) for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class GridAxes:
    alphas: np.ndarray
    rhos: np.ndarray

    def __post_init__(self):
        a = np.ascontiguousarray(self.alphas, dtype=float)
        r = np.ascontiguousarray(self.rhos, dtype=float)
        if a.ndim != 1 or r.ndim != 1 or len(a) < 2 or len(r) < 2:
            raise ValueError("axes must be 1-D with at least two points")
        if np.any(np.diff(a) < 0) or np.any(np.diff(r) < 0):
            raise ValueError("axes must be increasing")
        if np.any(np.abs(r) >= 1.0):
            raise ValueError("rho values must lie in (-1, 1)")
        if np.any(a < 0.0):
            raise ValueError("alpha values must be non-negative")
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "rhos", r)

    @property
    def shape(self):
        return len(self.alphas), len(self.rhos)

    @classmethod
    def uniform(cls, m, n, alpha_range=ALPHA_DOMAIN, rho_range=RHO_DOMAIN):
        return cls(np.linspace(*alpha_range, m), np.linspace(*rho_range, n))


@dataclass(frozen=True)
class ErrorMatrices:
    m_minus: np.ndarray
    m_plus: np.ndarray
    s0_grid: np.ndarray
    atm_residual_max: float
    axes: GridAxes | None = field(default=None, compare=False)

    @property
    def objective(self):
        return np.abs(self.m_minus) + np.abs(self.m_plus)


def implied_vol(params: SabrParams, strike: float) -> float:
    if not strike > 0.0:
        raise ValueError(f"strike must be positive, got {strike}")
    p = params
    vol = _k.hagan_vol(p.f0, float(strike), p.T, p.alpha, p.beta, p.rho, p.s0)
    if not isfinite(vol) or vol <= 0.0:
        raise ModelEvaluationError(
            f"Hagan vol not positive/finite at K={strike} for {params}"
        )
    return vol


def implied_vol_array(params: SabrParams, strikes) -> np.ndarray:
    """Vectorised Hagan vol over an array of strikes (same branches as the kernel)."""
    p = params
    k = np.asarray(strikes, dtype=float)
    f = p.f0
    omb = 1.0 - p.beta
    lfk = np.log(f / k)
    fk_half = (f * k) ** (0.5 * omb)
    corr = 1.0 + p.T * (
        omb * omb / 24.0 * p.s0 * p.s0 / (fk_half * fk_half)
        + 0.25 * p.rho * p.beta * p.alpha * p.s0 / fk_half
        + (2.0 - 3.0 * p.rho * p.rho) / 24.0 * p.alpha * p.alpha
    )
    l2 = lfk * lfk
    denom = fk_half * (1.0 + omb * omb / 24.0 * l2 + omb * omb * omb * omb / 1920.0 * l2 * l2)
    z = p.alpha / p.s0 * fk_half * lfk
    rho = p.rho
    series = (1.0 - 0.5 * rho * z + (2.0 - 3.0 * rho * rho) / 12.0 * z * z
              + rho * (5.0 - 6.0 * rho * rho) / 24.0 * z * z * z)
    with np.errstate(divide="ignore", invalid="ignore"):
        root = np.sqrt(1.0 - 2.0 * rho * z + z * z)
        rm1 = z * (z - 2.0 * rho) / (root + 1.0)
        xz = np.where(z - rho >= 0.0,
                      np.log1p((rm1 + z) / (1.0 - rho)),
                      -np.log1p((rm1 - z) / (1.0 + rho)))
        zx = np.where(np.abs(z) < 1e-6, series, z / xz)
    vol = np.where(np.abs(lfk) < 1e-10, p.s0 / fk_half * corr, p.s0 / denom * zx * corr)
    if not np.all(np.isfinite(vol)):
        raise ModelEvaluationError(f"Hagan vol not finite for {params}")
    return vol


def calibrate_s0(alpha: float, rho: float, smile: MarketSmile,
                 tol: float = S0_TOL, maxiter: int = S0_MAXITER) -> float:
    """Solve the ATM vol match for s0 at fixed (alpha, rho)."""
    s0, _, status = _k.solve_s0(smile.f0, smile.T, float(alpha), smile.beta,
                                float(rho), smile.vol_atm, tol, maxiter)
    if status == NOT_BRACKETED:
        raise CalibrationDomainError(
            f"ATM vol {smile.vol_atm} unreachable for alpha={alpha}, rho={rho}"
        )
    if status == NON_FINITE:
        raise CalibrationDomainError(f"non-finite ATM vol for alpha={alpha}, rho={rho}")
    if status != OK:
        raise CalibrationDomainError(f"s0 solve did not converge for alpha={alpha}, rho={rho}")
    return s0


_STATUS_TEXT = {1: "ATM root not bracketed", 2: "s0 solve did not converge",
                3: "non-finite model vol"}


def error_matrices(axes: GridAxes, smile: MarketSmile, workers: int = 1,
                   kernels=None, strict: bool = True) -> ErrorMatrices:
    """Build the K- and K+ vol-error surfaces with s0 calibrated per cell.

    Cells are independent; ``workers`` only changes how they are scheduled.
    With ``strict=False`` failing cells are left as NaN instead of raising.
    """
    kern = _k if kernels is None else kernels
    m, n = axes.shape
    total = m * n
    m_minus = np.empty(total)
    m_plus = np.empty(total)
    s0_grid = np.empty(total)
    atm_res = np.empty(total)
    status = np.empty(total, dtype=np.intc)
    kern.fill_grid(axes.alphas, axes.rhos, smile.f0, smile.T, smile.beta,
                   smile.k_minus, smile.k_plus, smile.vol_minus, smile.vol_atm,
                   smile.vol_plus, S0_TOL, S0_MAXITER,
                   m_minus, m_plus, s0_grid, atm_res, status, int(workers))
    bad = np.flatnonzero(status != OK)
    if strict and len(bad):
        i, j = divmod(int(bad[0]), n)
        raise MatrixConstructionError(i, j, _STATUS_TEXT.get(int(status[bad[0]]), "unknown"))
    ok = status == OK
    atm_max = float(np.max(np.abs(atm_res[ok]))) if ok.any() else float("nan")
    return ErrorMatrices(m_minus.reshape(m, n), m_plus.reshape(m, n),
                         s0_grid.reshape(m, n), atm_max, axes)


def residuals(alpha: float, rho: float, smile: MarketSmile) -> tuple[float, float, float]:
    """Return ``(M-, M+, s0)`` at a single (alpha, rho)."""
    s0 = calibrate_s0(alpha, rho, smile)
    vm = _k.hagan_vol(smile.f0, smile.k_minus, smile.T, alpha, smile.beta, rho, s0)
    vp = _k.hagan_vol(smile.f0, smile.k_plus, smile.T, alpha, smile.beta, rho, s0)
    if not (isfinite(vm) and isfinite(vp)):
        raise ModelEvaluationError(f"non-finite wing vol at alpha={alpha}, rho={rho}")
    return vm - smile.vol_minus, vp - smile.vol_plus, s0


def objective(alpha: float, rho: float, smile: MarketSmile) -> float:
    """Three-strike calibration error |M-| + |M+| with s0 implied by the ATM vol."""
    em, ep, _ = residuals(alpha, rho, smile)
    return abs(em) + abs(ep)
