"""Single-worker gradient-descent calibration used as a cross-check.

s0 is nested through the ATM solve, so the descent runs over (alpha, rho)
on f = (M-**2 + M+**2) / 2 with a central-difference Jacobian of the two
residuals. The gradient is diagonally (Jacobi) scaled, step lengths follow
the second Barzilai-Borwein rule with monotone backtracking, and iterates
are projected onto the admissible box. Convergence is declared on the
three-strike error |M-| + |M+|, the same measure the grid method uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CalibrationDomainError, ModelEvaluationError
from .grid import CalibResult
from .sabr import MarketSmile, residuals

FD_REL_STEP = 1e-6


@dataclass(frozen=True)
class GdConfig:
    alpha0: float = 0.5
    rho0: float = 0.0
    s0_0: float | None = None  # unused when s0 is nested; kept for the 3-D signature
    step_alpha: float = 1.0
    step_rho: float = 1.0
    shrink: float = 0.5
    grow: float = 1.3
    epsilon_sabr: float = 1e-10
    max_updates: int = 2000
    alpha_min: float = 1e-8
    rho_max: float = 0.999

    def __post_init__(self):
        if not (self.step_alpha > 0 and self.step_rho > 0):
            raise ValueError("step sizes must be positive")
        if not (0.0 < self.shrink < 1.0 < self.grow):
            raise ValueError("need 0 < shrink < 1 < grow")
        if self.max_updates < 1:
            raise ValueError("max_updates must be >= 1")


class _Problem:
    def __init__(self, smile, cfg):
        self.smile = smile
        self.cfg = cfg
        self.evals = 0

    def project(self, x):
        c = self.cfg
        return np.array([max(x[0], c.alpha_min), min(max(x[1], -c.rho_max), c.rho_max)])

    def resid(self, x):
        self.evals += 1
        em, ep, s0 = residuals(x[0], x[1], self.smile)
        return np.array([em, ep]), s0

    def jacobian(self, x):
        jac = np.empty((2, 2))
        for k in range(2):
            h = FD_REL_STEP * max(abs(x[k]), 1.0)
            up, dn = x.copy(), x.copy()
            up[k] += h
            dn[k] -= h
            up, dn = self.project(up), self.project(dn)
            jac[:, k] = (self.resid(up)[0] - self.resid(dn)[0]) / (up[k] - dn[k])
        return jac


def _safe(problem, x):
    try:
        r, s0 = problem.resid(x)
    except (CalibrationDomainError, ModelEvaluationError):
        return None, np.nan
    if not np.all(np.isfinite(r)):
        return None, np.nan
    return r, s0


def calibrate_gd(smile: MarketSmile, cfg: GdConfig | None = None) -> CalibResult:
    """Gradient-descent calibration of (alpha, rho) with s0 implied.

    ``iterations`` counts accepted updates of alpha and of rho combined
    (two per accepted step); ``trace`` holds (update, sum |r|, 0.5 |r|^2).
    Steps are accepted on the smooth least-squares surface, which shares its
    zero with the calibration error, so only the last column is monotone.
    """
    cfg = cfg or GdConfig()
    prob = _Problem(smile, cfg)
    base_scale = np.array([cfg.step_alpha, cfg.step_rho])
    x = prob.project(np.array([cfg.alpha0, cfg.rho0], dtype=float))
    r, s0 = _safe(prob, x)
    if r is None:
        raise CalibrationDomainError(f"initial point {tuple(x)} is not calibratable")
    f = 0.5 * float(r @ r)
    err = float(np.abs(r).sum())
    trace = [(0, err, f)]
    lam = 1.0
    prev = None
    steps = 0
    while err > cfg.epsilon_sabr and 2 * steps < cfg.max_updates:
        jac = prob.jacobian(x)
        grad = jac.T @ r
        # Jacobi scaling keeps the alpha/rho valley from throttling the step
        scale = base_scale / np.maximum((jac * jac).sum(axis=0), 1e-300)
        d = -scale * grad
        if prev is not None:
            s_vec, y_vec = x - prev[0], grad - prev[1]
            sy = float(s_vec @ y_vec)
            if sy > 0.0:
                lam = sy / float(y_vec @ (y_vec * scale))
        accepted = False
        for _ in range(60):
            x_new = prob.project(x + lam * d)
            r_new, s0_new = _safe(prob, x_new)
            if r_new is not None:
                f_new = 0.5 * float(r_new @ r_new)
                if f_new < f or (f_new == f and np.array_equal(x_new, x)):
                    accepted = f_new < f
                    break
            lam *= cfg.shrink
        if not accepted:
            break  # no descent possible at working precision
        prev = (x, grad)
        x, r, s0, f = x_new, r_new, s0_new, f_new
        err = float(np.abs(r).sum())
        steps += 1
        trace.append((2 * steps, err, f))
        lam *= cfg.grow
    return CalibResult(float(x[0]), float(x[1]), float(s0), err, 2 * steps,
                       err <= cfg.epsilon_sabr, [], trace)
