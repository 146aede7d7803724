# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: Hagan vol, ATM s0 solve and error-grid fill.

Operation order matches ``_pykernels`` exactly; build without fast-math or
FMA contraction to keep both backends bit-identical.
"""

from cython.parallel cimport prange
from libc.math cimport fabs, isfinite, log, log1p, pow, sqrt, NAN

cdef double ATM_LOG_MONEYNESS = 1e-10
cdef double SERIES_Z = 1e-6
cdef double S0_LO = 1e-6
cdef double S0_HI_FACTOR = 10.0

OK = 0
NOT_BRACKETED = 1
NO_CONVERGENCE = 2
NON_FINITE = 3


cdef inline double _hagan(double f, double k, double t, double alpha,
                          double beta, double rho, double s0) noexcept nogil:
    cdef double omb = 1.0 - beta
    cdef double lfk = log(f / k)
    cdef double fk_half = pow(f * k, 0.5 * omb)
    cdef double corr = 1.0 + t * (
        omb * omb / 24.0 * s0 * s0 / (fk_half * fk_half)
        + 0.25 * rho * beta * alpha * s0 / fk_half
        + (2.0 - 3.0 * rho * rho) / 24.0 * alpha * alpha
    )
    cdef double vol, l2, denom, z, zx, root, rm1, xz
    if fabs(lfk) < ATM_LOG_MONEYNESS:
        vol = s0 / fk_half * corr
    else:
        l2 = lfk * lfk
        denom = fk_half * (1.0 + omb * omb / 24.0 * l2 + omb * omb * omb * omb / 1920.0 * l2 * l2)
        z = alpha / s0 * fk_half * lfk
        if fabs(z) < SERIES_Z:
            zx = 1.0 - 0.5 * rho * z + (2.0 - 3.0 * rho * rho) / 12.0 * z * z \
                + rho * (5.0 - 6.0 * rho * rho) / 24.0 * z * z * z
        else:
            root = sqrt(1.0 - 2.0 * rho * z + z * z)
            rm1 = z * (z - 2.0 * rho) / (root + 1.0)
            if z - rho >= 0.0:
                xz = log1p((rm1 + z) / (1.0 - rho))
            else:
                xz = -log1p((rm1 - z) / (1.0 + rho))
            zx = z / xz
        vol = s0 / denom * zx * corr
    if not isfinite(vol):
        return NAN
    return vol


cdef int _solve_s0(double f, double t, double alpha, double beta, double rho,
                   double vol_atm, double tol, int maxiter,
                   double* s0_out, double* res_out) noexcept nogil:
    cdef double scale = pow(f, 1.0 - beta)
    cdef double lo = S0_LO
    cdef double hi = S0_HI_FACTOR * vol_atm * scale
    cdef double g_lo = _hagan(f, f, t, alpha, beta, rho, lo) - vol_atm
    cdef double g_hi = _hagan(f, f, t, alpha, beta, rho, hi) - vol_atm
    cdef double x_prev, g_prev, x, g, best_x, best_g, dg, x_new
    cdef int it
    s0_out[0] = NAN
    res_out[0] = NAN
    if not (isfinite(g_lo) and isfinite(g_hi)):
        return 3
    if g_lo == 0.0:
        s0_out[0] = lo
        res_out[0] = 0.0
        return 0
    if g_hi == 0.0:
        s0_out[0] = hi
        res_out[0] = 0.0
        return 0
    if g_lo > 0.0 or g_hi < 0.0:
        return 1

    x_prev = vol_atm * scale
    if x_prev <= lo or x_prev >= hi:
        x_prev = 0.5 * (lo + hi)
    g_prev = _hagan(f, f, t, alpha, beta, rho, x_prev) - vol_atm
    if not isfinite(g_prev):
        return 3
    if g_prev < 0.0:
        lo = x_prev
    else:
        hi = x_prev
    if fabs(g_prev) <= tol:
        s0_out[0] = x_prev
        res_out[0] = g_prev
        return 0
    x = x_prev * vol_atm / (g_prev + vol_atm)
    if not (lo < x and x < hi):
        x = 0.5 * (lo + hi)
    best_x = x_prev
    best_g = g_prev
    for it in range(maxiter):
        g = _hagan(f, f, t, alpha, beta, rho, x) - vol_atm
        if not isfinite(g):
            return 3
        if fabs(g) < fabs(best_g):
            best_x = x
            best_g = g
        if fabs(g) <= tol:
            s0_out[0] = x
            res_out[0] = g
            return 0
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
        if not (lo < x_new and x_new < hi):
            x_new = 0.5 * (lo + hi)
        x_prev = x
        g_prev = g
        x = x_new
    s0_out[0] = best_x
    res_out[0] = best_g
    if fabs(best_g) <= tol:
        return 0
    return 2


def hagan_vol(double f, double k, double t, double alpha, double beta,
              double rho, double s0):
    return _hagan(f, k, t, alpha, beta, rho, s0)


def solve_s0(double f, double t, double alpha, double beta, double rho,
             double vol_atm, double tol, int maxiter):
    cdef double s0, res
    cdef int st = _solve_s0(f, t, alpha, beta, rho, vol_atm, tol, maxiter, &s0, &res)
    return s0, res, st


def fill_grid(const double[::1] alphas, const double[::1] rhos, double f,
              double t, double beta, double k_minus, double k_plus,
              double vol_minus, double vol_atm, double vol_plus, double tol,
              int maxiter, double[::1] m_minus, double[::1] m_plus,
              double[::1] s0_grid, double[::1] atm_res, int[::1] status,
              int workers=1):
    cdef Py_ssize_t n = rhos.shape[0]
    cdef Py_ssize_t total = alphas.shape[0] * n
    cdef Py_ssize_t c, i, j
    cdef double a, r, s0, res, vm, vp
    cdef int st
    cdef int nthreads = workers if workers > 0 else 1
    for c in prange(total, nogil=True, num_threads=nthreads, schedule="static"):
        i = c // n
        j = c - i * n
        a = alphas[i]
        r = rhos[j]
        st = _solve_s0(f, t, a, beta, r, vol_atm, tol, maxiter, &s0, &res)
        vm = NAN
        vp = NAN
        if st == 0:
            vm = _hagan(f, k_minus, t, a, beta, r, s0)
            vp = _hagan(f, k_plus, t, a, beta, r, s0)
            if not (isfinite(vm) and isfinite(vp)):
                st = 3
        s0_grid[c] = s0
        atm_res[c] = res
        status[c] = st
        if st == 0:
            m_minus[c] = vm - vol_minus
            m_plus[c] = vp - vol_plus
        else:
            m_minus[c] = NAN
            m_plus[c] = NAN


def ds_shift_insert(double[::1] xs, double[::1] ps, double[::1] zs,
                    Py_ssize_t size, Py_ssize_t pos, double x_new, double p_new,
                    double z_left, double z_right):
    """Single-worker tail shift: open node slot ``pos`` and write the new pair.

    ``zs`` holds the ``size - 1`` cell errors; the split cell becomes cells
    ``pos - 1`` and ``pos`` with errors ``z_left`` and ``z_right``. Capacity
    must exceed ``size``. Returns the new size.
    """
    cdef Py_ssize_t k = size
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
