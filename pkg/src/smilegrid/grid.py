"""Parallel three-strike SABR calibration by iterative 2-D grid refinement.

Each iteration builds the M-/M+ error surfaces over an (alpha, rho) grid,
extracts the zero lines, brackets alpha and rho, optionally extrapolates a
target point from the locally linear surfaces, and regrids inside the
bracket. All indices here are 0-based.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import BracketingError, SmileGridError
from .sabr import ALPHA_DOMAIN, RHO_DOMAIN, ErrorMatrices, GridAxes, MarketSmile, error_matrices



class Variant(str, enum.Enum):
    V1 = "V1"  # zero-line bounds on every iteration
    V2 = "V2"  # relative-value bounds after the first iteration
    V3 = "V3"  # relative-value bounds plus local mesh refinement


@dataclass(frozen=True)
class CalibConfig:
    grid_m: int = 8
    grid_n: int = 8
    epsilon_sabr: float = 1e-10
    variant: Variant = Variant.V3
    max_iterations: int = 24
    alpha_lo: float = ALPHA_DOMAIN[0]
    alpha_hi: float = ALPHA_DOMAIN[1]
    rho_lo: float = RHO_DOMAIN[0]
    rho_hi: float = RHO_DOMAIN[1]
    growth: float = 2.0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.grid_m < 6 or self.grid_n < 6:
            raise ValueError("grids smaller than 6x6 do not capture the solution region")
        if not self.epsilon_sabr >= 0.0:
            raise ValueError("epsilon_sabr must be non-negative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (0.0 <= self.alpha_lo < self.alpha_hi):
            raise ValueError("need 0 <= alpha_lo < alpha_hi")
        if not (-1.0 < self.rho_lo < self.rho_hi < 1.0):
            raise ValueError("need -1 < rho_lo < rho_hi < 1")
        if not self.growth >= 1.0:
            raise ValueError("growth factor must be >= 1")

    def initial_axes(self):
        return GridAxes.uniform(self.grid_m, self.grid_n,
                                (self.alpha_lo, self.alpha_hi),
                                (self.rho_lo, self.rho_hi))


@dataclass(frozen=True)
class ZeroLines:
    a_minus: np.ndarray
    a_plus: np.ndarray


@dataclass(frozen=True)
class BoundsBox:
    alpha_s_idx: int
    alpha_f_idx: int
    rho_s_idx: int
    rho_f_idx: int
    zl_intermediates: tuple | None = None
    rv_intermediates: tuple | None = None


@dataclass(frozen=True)
class MeshRefinement:
    row_cross_idx: np.ndarray
    eps1_minus: np.ndarray
    eps2_minus: np.ndarray
    eps1_plus: np.ndarray
    eps2_plus: np.ndarray
    rho_lo: np.ndarray
    rho_hi: np.ndarray
    slopes_intercepts: np.ndarray
    cross_rho: np.ndarray
    cross_err: np.ndarray
    best_idx: int
    neighbor_idx: int
    target_fit: tuple
    alpha_target: float
    rho_target: float


@dataclass
class CalibResult:
    alpha_star: float
    rho_star: float
    s0_star: float
    final_error: float
    iterations: int
    converged: bool
    bounds_history: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    final_axes: GridAxes | None = None  # grid of the last iteration run

    def to_dict(self):
        return {
            "alpha_star": self.alpha_star,
            "rho_star": self.rho_star,
            "s0_star": self.s0_star,
            "final_error": self.final_error,
            "iterations": self.iterations,
            "converged": self.converged,
            "bounds_history": [list(b) for b in self.bounds_history],
        }


class RefinementUnavailable(SmileGridError):
    """No opposite-sign neighbour exists; regrid uniformly instead."""


def zero_lines(mats: ErrorMatrices) -> ZeroLines:
    m_minus, m_plus = mats.m_minus, mats.m_plus
    m, n = m_minus.shape
    a_minus = np.zeros(m, dtype=int)
    a_plus = np.full(m, n - 1, dtype=int)
    for i in range(m):
        for j in range(n):
            if m_minus[i, j] > 0:
                a_minus[i] = j
        for j in range(n - 1, -1, -1):
            if m_plus[i, j] > 0:
                a_plus[i] = j
    return ZeroLines(a_minus, a_plus)


def alpha_bounds(lines: ZeroLines, axes: GridAxes | None = None,
                 literal: bool = False) -> tuple[int, int]:
    """Lower bound: last row with a both-negative column. Upper: one past the
    last row without a both-positive column, clamped to the grid.

    If no row qualifies for the upper bound the scan would leave it at the
    top row however far the solution is from it; in that case it is taken
    as the first row above the lower bound where the zero lines have met
    (A- >= A+). ``literal=True`` keeps the top row.
    """
    m = len(lines.a_minus)
    alpha_s, alpha_f = 0, m - 1
    found = False
    for i in range(m):
        if lines.a_minus[i] < lines.a_plus[i] - 1:
            alpha_s = i
        if lines.a_minus[i] < lines.a_plus[i]:
            alpha_f = i + 1
            found = True
    if not found and not literal:
        for i in range(alpha_s + 1, m):
            if lines.a_minus[i] >= lines.a_plus[i]:
                alpha_f = i
                break
    return alpha_s, min(alpha_f, m - 1)


def rho_bounds_zl(lines: ZeroLines, ab: tuple[int, int],
                  literal: bool = False) -> tuple[int, int, tuple]:
    """Zero-line rho bounds from the zero-line indices at the alpha bounds.

    When both lines slope the same way to the right only the upper bound
    moves to the alpha_f row; the lower bound stays at A-(alpha_s).
    ``literal=True`` instead takes A+(alpha_s) as the lower bound in that
    branch, as in the original published listing; that choice can give an
    empty bracket and is kept only for comparison.
    """
    alpha_s, alpha_f = ab
    rs_minus = int(lines.a_minus[alpha_s])
    rs_plus = int(lines.a_plus[alpha_s])
    rf_minus = int(lines.a_minus[alpha_f])
    rf_plus = int(lines.a_plus[alpha_f])
    if rs_minus >= rf_minus:
        bounds = (rf_minus, rs_plus)
    elif rs_plus <= rf_plus:
        bounds = (rs_plus if literal else rs_minus, rf_plus)
    else:
        bounds = (rs_minus, rs_plus)
    return bounds[0], bounds[1], (rs_minus, rs_plus, rf_minus, rf_plus)


def zero_line_hull(lines: ZeroLines, ab: tuple[int, int], n: int) -> tuple[int, int]:
    """Smallest rho-index range holding every zero-line crossing of the rows
    in ``[alpha_s, alpha_f]``.

    On a coarse grid the zero lines can bend between the bracketing rows, so
    the two end rows alone may miss the solution; any row pair around it
    still straddles it as long as the lines are monotone between adjacent rows.
    """
    seg = slice(ab[0], ab[1] + 1)
    lo = np.minimum(lines.a_minus[seg], lines.a_plus[seg] - 1)
    hi = np.maximum(lines.a_minus[seg] + 1, lines.a_plus[seg])
    return max(int(lo.min()), 0), min(int(hi.max()), n - 1)


def _crossing_index(m_minus_row, m_plus_row, default):
    idx = default
    for j in range(len(m_minus_row)):
        if m_minus_row[j] > m_plus_row[j]:
            idx = j
    return idx


def rho_bounds_rv(mats: ErrorMatrices, ab: tuple[int, int]) -> tuple[int, int, int, int]:
    alpha_s, alpha_f = ab
    n = mats.m_minus.shape[1]
    i_s = _crossing_index(mats.m_minus[alpha_s], mats.m_plus[alpha_s], 0)
    i_f = _crossing_index(mats.m_minus[alpha_f], mats.m_plus[alpha_f], n - 1)
    rho_s = min(i_s, i_f)
    rho_f = min(max(i_s, i_f) + 1, n - 1)
    return rho_s, rho_f, i_s, i_f


def local_mesh_refine(mats: ErrorMatrices, box: BoundsBox, axes: GridAxes) -> MeshRefinement:
    """Extrapolate the solution from the rows inside the alpha bracket.

    Per row the two residual lines through the cells straddling M- = M+ are
    intersected; the pair of adjacent rows whose crossing errors change sign
    then gives the target by linear interpolation in alpha and rho.
    """
    lo, hi = box.alpha_s_idx, box.alpha_f_idx
    if hi - lo < 1:
        raise RefinementUnavailable("need at least two rows inside the alpha bracket")
    n = mats.m_minus.shape[1]
    rows = np.arange(lo, hi + 1)
    idx = np.array([_crossing_index(mats.m_minus[i], mats.m_plus[i], 0) for i in rows])
    nxt = np.minimum(idx + 1, n - 1)
    e1m = mats.m_minus[rows, idx]
    e2m = mats.m_minus[rows, nxt]
    e1p = mats.m_plus[rows, idx]
    e2p = mats.m_plus[rows, nxt]
    r_lo = axes.rhos[idx]
    r_hi = axes.rhos[nxt]
    with np.errstate(divide="ignore", invalid="ignore"):
        a_m = (e1m - e2m) / (r_lo - r_hi)
        b_m = e1m - a_m * r_lo
        a_p = (e1p - e2p) / (r_lo - r_hi)
        b_p = e1p - a_p * r_lo
        cross_rho = -(b_p - b_m) / (a_p - a_m)
        cross_err = a_m * cross_rho + b_m
    valid = (idx + 1 < n) & np.isfinite(cross_rho) & np.isfinite(cross_err)
    if not valid.any():
        raise RefinementUnavailable("no row has a usable M- = M+ crossing")

    abs_err = np.where(valid, np.abs(cross_err), np.inf)
    best = int(np.argmin(abs_err))  # first minimum: ties go to the lower index
    candidates = []
    for nb in (best - 1, best + 1):
        if 0 <= nb < len(rows) and valid[nb] and np.sign(cross_err[nb]) != np.sign(cross_err[best]):
            candidates.append(nb)
    if not candidates:
        raise RefinementUnavailable("no neighbouring row with opposite-sign crossing error")
    neighbor = min(candidates, key=lambda k: abs_err[k])

    i1, i2 = min(best, neighbor), max(best, neighbor)
    e1, e2 = cross_err[i1], cross_err[i2]
    r1, r2 = cross_rho[i1], cross_rho[i2]
    al1, al2 = axes.alphas[rows[i1]], axes.alphas[rows[i2]]
    with np.errstate(divide="ignore", invalid="ignore"):
        a_rho = (e1 - e2) / (r1 - r2)
        b_rho = e1 - a_rho * r1
        a_alpha = (e1 - e2) / (al1 - al2)
        b_alpha = e1 - a_alpha * al1
    # zero of the line through the two crossings, written so that equal
    # crossing rhos (a vertical line) do not divide 0 by 0
    w = e1 / (e1 - e2)
    rho_t = r1 + w * (r2 - r1)
    alpha_t = al1 + w * (al2 - al1)

    alpha_t = float(np.clip(alpha_t, axes.alphas[box.alpha_s_idx], axes.alphas[box.alpha_f_idx]))
    rho_t = float(np.clip(rho_t, axes.rhos[box.rho_s_idx], axes.rhos[box.rho_f_idx]))
    return MeshRefinement(
        row_cross_idx=idx, eps1_minus=e1m, eps2_minus=e2m, eps1_plus=e1p,
        eps2_plus=e2p, rho_lo=r_lo, rho_hi=r_hi,
        slopes_intercepts=np.column_stack([a_m, b_m, a_p, b_p]),
        cross_rho=cross_rho, cross_err=cross_err, best_idx=best,
        neighbor_idx=neighbor, target_fit=(a_rho, b_rho, a_alpha, b_alpha),
        alpha_target=alpha_t, rho_target=rho_t,
    )


def clustered_axis(lo, hi, center, size, growth=2.0):
    """``size`` nodes on [lo, hi] with ``center`` as a node and cell widths
    growing geometrically by ``growth`` away from it.

    Each side is filled exactly, so the outermost/innermost width ratio on a
    side with k cells is growth**(k - 1).
    """
    if hi <= lo:
        return np.full(size, lo)
    center = min(max(center, lo), hi)
    cells = size - 1
    left_len, right_len = center - lo, hi - center
    if left_len <= 0.0:
        k_left = 0
    elif right_len <= 0.0:
        k_left = cells
    else:
        k_left = max(1, min(cells - 1, cells // 2))
    k_right = cells - k_left

    def side(length, k):
        if k == 0:
            return np.empty(0)
        widths = growth ** np.arange(k)
        offsets = np.cumsum(widths) / widths.sum() * length
        offsets[-1] = length
        return offsets

    left = center - side(left_len, k_left)[::-1]
    right = center + side(right_len, k_right)
    nodes = np.concatenate([left, [center], right])
    nodes[0], nodes[-1] = lo, hi
    return nodes


def build_next_axes(box: BoundsBox, refinement: MeshRefinement | None,
                    cfg: CalibConfig, axes: GridAxes) -> GridAxes:
    a_lo, a_hi = axes.alphas[box.alpha_s_idx], axes.alphas[box.alpha_f_idx]
    r_lo, r_hi = axes.rhos[box.rho_s_idx], axes.rhos[box.rho_f_idx]
    if refinement is None:
        alphas = np.linspace(a_lo, a_hi, cfg.grid_m)
        rhos = np.linspace(r_lo, r_hi, cfg.grid_n)
    else:
        alphas = clustered_axis(a_lo, a_hi, refinement.alpha_target, cfg.grid_m, cfg.growth)
        rhos = clustered_axis(r_lo, r_hi, refinement.rho_target, cfg.grid_n, cfg.growth)
    return GridAxes(alphas, rhos)


def sentinel_matrices(mats: ErrorMatrices) -> ErrorMatrices:
    """Replace cells where s0 cannot be calibrated by low-rho edge sentinels.

    Those cells sit where the skew is too negative for the ATM vol to be
    reached; M- is taken as +inf and M+ as -inf, which keeps the row
    orderings the bracketing steps rely on.
    """
    bad = ~np.isfinite(mats.m_minus) | ~np.isfinite(mats.m_plus)
    if not bad.any():
        return mats
    m_minus = np.where(bad, np.inf, mats.m_minus)
    m_plus = np.where(bad, -np.inf, mats.m_plus)
    return ErrorMatrices(m_minus, m_plus, mats.s0_grid, mats.atm_residual_max, mats.axes)


def calibrate(smile: MarketSmile, cfg: CalibConfig | None = None) -> CalibResult:
    cfg = cfg or CalibConfig()
    axes = cfg.initial_axes()
    best = (np.inf, np.nan, np.nan, np.nan)
    history, trace = [], []
    converged = False
    iterations = 0
    for it in range(1, cfg.max_iterations + 1):
        iterations = it
        mats = sentinel_matrices(error_matrices(axes, smile, workers=cfg.workers, strict=False))
        err = mats.objective
        k = int(np.argmin(err))  # inf/nan-free after sentinels except all-bad grids
        i, j = divmod(k, err.shape[1])
        if err[i, j] < best[0]:
            best = (float(err[i, j]), float(axes.alphas[i]), float(axes.rhos[j]),
                    float(mats.s0_grid[i, j]))
        if best[0] <= cfg.epsilon_sabr:
            converged = True
            trace.append((it, None, best[0]))
            break

        lines = zero_lines(mats)
        ab = alpha_bounds(lines, axes)
        if it == 1 and ab[0] >= ab[1]:
            raise BracketingError(
                "initial grid does not bracket the solution in alpha; use a larger grid"
            )
        refinement = None
        if it == 1 or cfg.variant is Variant.V1:
            rs, rf, zl = rho_bounds_zl(lines, ab)
            h_lo, h_hi = zero_line_hull(lines, ab, len(axes.rhos))
            rs, rf = min(rs, h_lo), max(rf, h_hi)
            box = BoundsBox(ab[0], ab[1], rs, rf, zl_intermediates=zl)
        else:
            rs, rf, i_s, i_f = rho_bounds_rv(mats, ab)
            box = BoundsBox(ab[0], ab[1], rs, rf, rv_intermediates=(i_s, i_f))
            if cfg.variant is Variant.V3:
                try:
                    refinement = local_mesh_refine(mats, box, axes)
                except RefinementUnavailable:
                    refinement = None
        bounds = (float(axes.alphas[box.alpha_s_idx]), float(axes.alphas[box.alpha_f_idx]),
                  float(axes.rhos[box.rho_s_idx]), float(axes.rhos[box.rho_f_idx]))
        history.append(bounds)
        trace.append((it, bounds, best[0]))
        new_axes = build_next_axes(box, refinement, cfg, axes)
        if np.array_equal(new_axes.alphas, axes.alphas) and np.array_equal(new_axes.rhos, axes.rhos):
            break  # bracket can no longer shrink in floating point
        axes = new_axes

    return CalibResult(best[1], best[2], best[3], best[0], iterations, converged, history, trace,
                       axes)
