"""Pure-Python implementation of the scalar hot kernels.

Mirrors ``_kernels.pyx`` operation for operation so both backends produce
the same floating point results. Used when the compiled core is unavailable
or when ``SMILEGRID_BACKEND=python`` is set.
"""

from concurrent.futures import ThreadPoolExecutor
from math import isfinite, log, log1p, sqrt

ATM_LOG_MONEYNESS = 1e-10
SERIES_Z = 1e-6
S0_LO = 1e-6
S0_HI_FACTOR = 10.0

# status codes shared with the compiled core
OK = 0
NOT_BRACKETED = 1
NO_CONVERGENCE = 2
NON_FINITE = 3


def hagan_vol(f, k, t, alpha, beta, rho, s0):
    """Hagan et al. (2002) lognormal implied vol. Returns nan when undefined."""
    omb = 1.0 - beta
    lfk = log(f / k)
    fk_half = (f * k) ** (0.5 * omb)
    corr = 1.0 + t * (
        omb * omb / 24.0 * s0 * s0 / (fk_half * fk_half)
        + 0.25 * rho * beta * alpha * s0 / fk_half
        + (2.0 - 3.0 * rho * rho) / 24.0 * alpha * alpha
    )
    if abs(lfk) < ATM_LOG_MONEYNESS:
        vol = s0 / fk_half * corr
    else:
        l2 = lfk * lfk
        denom = fk_half * (1.0 + omb * omb / 24.0 * l2 + omb * omb * omb * omb / 1920.0 * l2 * l2)
        z = alpha / s0 * fk_half * lfk
        if abs(z) < SERIES_Z:
            zx = 1.0 - 0.5 * rho * z + (2.0 - 3.0 * rho * rho) / 12.0 * z * z \
                + rho * (5.0 - 6.0 * rho * rho) / 24.0 * z * z * z
        else:
            root = sqrt(1.0 - 2.0 * rho * z + z * z)
            # root - 1 without cancellation; log1p keeps x(z) accurate near ATM
            rm1 = z * (z - 2.0 * rho) / (root + 1.0)
            if z - rho >= 0.0:
                xz = log1p((rm1 + z) / (1.0 - rho))
            else:
                # rationalised form avoids cancellation in root + (z - rho)
                xz = -log1p((rm1 - z) / (1.0 + rho))
            zx = z / xz
        vol = s0 / denom * zx * corr
    if not isfinite(vol):
        return float("nan")
    return vol


def solve_s0(f, t, alpha, beta, rho, vol_atm, tol, maxiter):
    """Bracketed secant for the ATM vol residual in s0.

    Returns ``(s0, residual, status)``.
    """
    scale = f ** (1.0 - beta)
    lo = S0_LO
    hi = S0_HI_FACTOR * vol_atm * scale
    g_lo = hagan_vol(f, f, t, alpha, beta, rho, lo) - vol_atm
    g_hi = hagan_vol(f, f, t, alpha, beta, rho, hi) - vol_atm
    if not (isfinite(g_lo) and isfinite(g_hi)):
        return float("nan"), float("nan"), NON_FINITE
    if g_lo == 0.0:
        return lo, 0.0, OK
    if g_hi == 0.0:
        return hi, 0.0, OK
    if g_lo > 0.0 or g_hi < 0.0:
        return float("nan"), float("nan"), NOT_BRACKETED

    x_prev = vol_atm * scale
    if x_prev <= lo or x_prev >= hi:
        x_prev = 0.5 * (lo + hi)
    g_prev = hagan_vol(f, f, t, alpha, beta, rho, x_prev) - vol_atm
    if not isfinite(g_prev):
        return float("nan"), float("nan"), NON_FINITE
    if g_prev < 0.0:
        lo = x_prev
    else:
        hi = x_prev
    if abs(g_prev) <= tol:
        return x_prev, g_prev, OK
    # ratio step: exact when the ATM vol is linear in s0
    x = x_prev * vol_atm / (g_prev + vol_atm)
    if not (lo < x < hi):
        x = 0.5 * (lo + hi)
    best_x = x_prev
    best_g = g_prev
    for _ in range(maxiter):
        g = hagan_vol(f, f, t, alpha, beta, rho, x) - vol_atm
        if not isfinite(g):
            return float("nan"), float("nan"), NON_FINITE
        if abs(g) < abs(best_g):
            best_x = x
            best_g = g
        if abs(g) <= tol:
            return x, g, OK
        if g < 0.0:
            lo = x
        else:
            hi = x
        if hi - lo <= 4.440892098500626e-16 * hi:
            break
        dg = g - g_prev
        if dg != 0.0:
            x_new = x - g * (x - x_prev) / dg
        else:
            x_new = lo - 1.0
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        x_prev = x
        g_prev = g
        x = x_new
    if abs(best_g) <= tol:
        return best_x, best_g, OK
    return best_x, best_g, NO_CONVERGENCE


def fill_cells(alphas, rhos, f, t, beta, k_minus, k_plus,
               vol_minus, vol_atm, vol_plus, tol, maxiter,
               m_minus, m_plus, s0_grid, atm_res, status, start, stop):
    """Fill flat cells ``start..stop-1`` of the row-major (alpha, rho) grid."""
    n = len(rhos)
    for c in range(start, stop):
        i = c // n
        j = c - i * n
        a = alphas[i]
        r = rhos[j]
        s0, res, st = solve_s0(f, t, a, beta, r, vol_atm, tol, maxiter)
        if st == OK:
            vm = hagan_vol(f, k_minus, t, a, beta, r, s0)
            vp = hagan_vol(f, k_plus, t, a, beta, r, s0)
            if isfinite(vm) and isfinite(vp):
                m_minus[c] = vm - vol_minus
                m_plus[c] = vp - vol_plus
            else:
                st = NON_FINITE
        s0_grid[c] = s0
        atm_res[c] = res
        status[c] = st
        if st != OK:
            m_minus[c] = float("nan")
            m_plus[c] = float("nan")


def fill_grid(alphas, rhos, f, t, beta, k_minus, k_plus,
              vol_minus, vol_atm, vol_plus, tol, maxiter,
              m_minus, m_plus, s0_grid, atm_res, status, workers=1):
    alphas = [float(a) for a in alphas]
    rhos = [float(r) for r in rhos]
    total = len(alphas) * len(rhos)
    args = (alphas, rhos, float(f), float(t), float(beta), float(k_minus),
            float(k_plus), float(vol_minus), float(vol_atm), float(vol_plus),
            float(tol), int(maxiter), m_minus, m_plus, s0_grid, atm_res, status)
    if workers <= 1 or total < 2:
        fill_cells(*args, 0, total)
        return
    chunk = -(-total // workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fill_cells, *args, lo, min(lo + chunk, total))
                   for lo in range(0, total, chunk)]
        for fut in futures:
            fut.result()


def ds_shift_insert(xs, ps, zs, size, pos, x_new, p_new, z_left, z_right):
    """Single-worker tail shift: open node slot ``pos`` and write the new pair.

    ``zs`` holds the ``size - 1`` cell errors; the split cell becomes cells
    ``pos - 1`` and ``pos`` with errors ``z_left`` and ``z_right``. Capacity
    must exceed ``size``. Returns the new size.
    """
    k = size
    while k > pos:
        xs[k] = xs[k - 1]
        ps[k] = ps[k - 1]
        k -= 1
    xs[pos] = x_new
    ps[pos] = p_new
    k = size - 1
    while k > pos:
        zs[k] = zs[k - 1]
        k -= 1
    zs[pos - 1] = z_left
    zs[pos] = z_right
    return size + 1
