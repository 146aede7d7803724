"""Coupon-rate pipeline: calibration -> lookup tables -> copula Monte Carlo.

Each coupon pays on the spread of two assets. Both smiles are calibrated,
each calibrated smile gives a SABR-implied CDF and a lookup table, and the
coupon rate is the Monte Carlo mean of max(x_a - x_b - strike, 0) with the
two quantiles joined by a Gaussian copula.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import SweepRowError
from .grid import CalibConfig, Variant, calibrate
from .models import SabrModel, sabr_cdf, sabr_domain  # noqa: F401  (re-exported)
from .sabr import MarketSmile, SabrParams
from .tables import LookupTable, TableBuildConfig, build_table, inverse_lookup_array

SCHEMA_VERSION = 1
MACHINE_EPS = 0.0  # calibrate until the grid can no longer shrink
BENCHMARK_ZETA = 1e-11
SWEEP_ZETA = 5e-8
ZETA_LADDER = (None, 5e-4, 1e-4, 1e-5, 1e-6, 5e-8)
EPS_LADDER = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10, MACHINE_EPS)
INVERSION_ALLOWANCE = 0.10
MC_BLOCK = 1 << 16


@dataclass(frozen=True)
class CouponSpec:
    notional: float
    delta: float
    df: float

    def __post_init__(self):
        if not self.notional > 0.0:
            raise ValueError("notional must be positive")
        if not self.delta > 0.0:
            raise ValueError("delta must be positive")
        if not 0.0 < self.df <= 1.0:
            raise ValueError("discount factor must lie in (0, 1]")


@dataclass(frozen=True)
class McConfig:
    samples: int = 100_000
    seed: int = 0
    copula_corr: float = 0.5

    def __post_init__(self):
        if int(self.samples) != self.samples or self.samples < 1:
            raise ValueError("samples must be a positive integer")
        if not -1.0 <= self.copula_corr <= 1.0:
            raise ValueError("copula_corr must lie in [-1, 1]")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")


@dataclass(frozen=True)
class Coupon:
    smile_a: MarketSmile
    smile_b: MarketSmile
    strike: float
    spec: CouponSpec


@dataclass(frozen=True)
class Contract:
    coupons: tuple
    mc: McConfig = McConfig()

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "mc": {"samples": self.mc.samples, "seed": self.mc.seed,
                   "copula_corr": self.mc.copula_corr},
            "coupons": [
                {"smile_a": c.smile_a.to_dict(), "smile_b": c.smile_b.to_dict(),
                 "strike": c.strike,
                 "spec": {"notional": c.spec.notional, "delta": c.spec.delta, "df": c.spec.df}}
                for c in self.coupons
            ],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {d.get('schema_version')!r}")
        mc = McConfig(**d.get("mc", {}))
        coupons = tuple(
            Coupon(MarketSmile.from_dict(c["smile_a"]), MarketSmile.from_dict(c["smile_b"]),
                   float(c["strike"]), CouponSpec(**c["spec"]))
            for c in d["coupons"]
        )
        return cls(coupons, mc)


@dataclass(frozen=True)
class CouponResult:
    r_c: float
    pv: float
    params_a: SabrParams
    params_b: SabrParams
    n_a: int
    n_b: int


@dataclass
class SweepReport:
    param: str
    benchmark_value: float
    benchmark_r_c: float
    rows: list = field(default_factory=list)  # (value, r_c, abs_error)
    monotone: bool = True

    def to_csv(self):
        lines = ["accuracy_param,value,r_c,abs_error"]
        for value, r_c, err in self.rows:
            lines.append(f"{self.param},{_fmt_value(value)},{r_c!r},{err!r}")
        lines.append(f"verdict,{'monotone' if self.monotone else 'non-monotone'},,")
        return "\n".join(lines) + "\n"


def _fmt_value(v):
    if v is None:
        return "FS"
    if v == MACHINE_EPS:
        return "machine"
    return repr(float(v))


def present_value(r_c: float, spec: CouponSpec) -> float:
    return r_c * spec.notional * spec.delta * spec.df


def _block_payoff(table_a, table_b, mc, strike, block, n):
    rng = np.random.Generator(np.random.Philox(key=mc.seed).jumped(block))
    z = rng.standard_normal((2, n))
    rho = mc.copula_corr
    u_a = ndtr(z[0])
    u_b = ndtr(rho * z[0] + math.sqrt(1.0 - rho * rho) * z[1])
    try:
        x_a = inverse_lookup_array(table_a, u_a)
        x_b = inverse_lookup_array(table_b, u_b)
    except Exception as exc:
        idx = getattr(exc, "index", None)
        if idx is not None:
            exc.index = block * MC_BLOCK + idx
            exc.args = (f"{exc.args[0]} [global sample {exc.index}]",)
        raise
    return float(np.sum(np.maximum(x_a - x_b - strike, 0.0)))


def coupon_rate(table_a: LookupTable, table_b: LookupTable, mc: McConfig,
                strike: float, workers: int = 1) -> float:
    """Mean spread payoff over ``mc.samples`` copula draws.

    Draws come in fixed blocks from independent Philox streams keyed by the
    seed; block sums are added in block order, so the result does not depend
    on ``workers``.
    """
    s = int(mc.samples)
    sizes = [min(MC_BLOCK, s - b * MC_BLOCK) for b in range((s + MC_BLOCK - 1) // MC_BLOCK)]
    job = lambda b: _block_payoff(table_a, table_b, mc, strike, b, sizes[b])  # noqa: E731
    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(workers) as pool:
            sums = list(pool.map(job, range(len(sizes))))
    else:
        sums = [job(b) for b in range(len(sizes))]
    total = 0.0
    for v in sums:
        total += v
    return total / s


def calibrate_params(smile: MarketSmile, epsilon: float, workers: int = 1) -> SabrParams:
    res = calibrate(smile, CalibConfig(epsilon_sabr=epsilon, variant=Variant.V3, workers=workers))
    return smile.params(res.alpha_star, res.rho_star, res.s0_star)


def sabr_table(params: SabrParams, zeta: float | None, builder: str = "DS3") -> LookupTable:
    model = SabrModel(params)
    return build_table(model, TableBuildConfig(zeta_cap=zeta), "FS" if zeta is None else builder)


class _Cache:
    """Memoise calibrations and tables inside one run."""

    def __init__(self, builder, workers):
        self.builder = builder
        self.workers = workers
        self.params = {}
        self.tables = {}

    def calib(self, smile, eps):
        key = (smile, eps)
        if key not in self.params:
            self.params[key] = calibrate_params(smile, eps, self.workers)
        return self.params[key]

    def table(self, params, zeta):
        key = (params, zeta)
        if key not in self.tables:
            self.tables[key] = sabr_table(params, zeta, self.builder)
        return self.tables[key]


def price_coupon(coupon: Coupon, epsilon: float, zeta: float | None, mc: McConfig,
                 builder: str = "DS3", workers: int = 1, _cache=None) -> CouponResult:
    cache = _cache or _Cache(builder, workers)
    pa = cache.calib(coupon.smile_a, epsilon)
    pb = cache.calib(coupon.smile_b, epsilon)
    ta = cache.table(pa, zeta)
    tb = cache.table(pb, zeta)
    r_c = coupon_rate(ta, tb, mc, coupon.strike, workers)
    return CouponResult(r_c, present_value(r_c, coupon.spec), pa, pb, ta.n, tb.n)


def price_contract(contract: Contract, epsilon: float, zeta: float | None,
                   builder: str = "DS3", workers: int = 1) -> tuple[list, float]:
    """Price every coupon; coupons run concurrently, results keep input order."""
    job = lambda c: price_coupon(c, epsilon, zeta, contract.mc, builder, 1)  # noqa: E731
    if workers > 1 and len(contract.coupons) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, contract.coupons))
    else:
        results = [price_coupon(c, epsilon, zeta, contract.mc, builder, workers)
                   for c in contract.coupons]
    total = 0.0
    for r in results:
        total += r.pv
    return results, total


def shape_ok(errors, allowance=INVERSION_ALLOWANCE):
    """Non-increasing sequence up to single-step rises of at most
    ``allowance`` times the larger of the two values."""
    for prev, cur in zip(errors, errors[1:]):
        if cur > prev and cur - prev > allowance * max(prev, cur):
            return False
    return True


def _row(param, value, coupon, epsilon, zeta, mc, builder, workers, cache):
    try:
        return price_coupon(coupon, epsilon, zeta, mc, builder, workers, cache).r_c
    except Exception as exc:
        raise SweepRowError(param, value, exc) from exc


def error_sweep_zeta(coupon: Coupon, mc: McConfig, zetas=ZETA_LADDER,
                     benchmark_zeta=BENCHMARK_ZETA, epsilon=MACHINE_EPS,
                     builder="DS3", workers=1) -> SweepReport:
    """R_c error across table caps at fixed calibration accuracy.

    ``None`` in ``zetas`` is the uncapped fixed-size table. Every row uses
    the same seed, so differences come from the tables alone.
    """
    capped = [z for z in zetas if z is not None]
    if benchmark_zeta is None or any(z < benchmark_zeta for z in capped):
        raise ValueError("benchmark zeta must be the strictest level in the sweep")
    cache = _Cache(builder, workers)
    bench = _row("zeta", benchmark_zeta, coupon, epsilon, benchmark_zeta, mc, builder, workers, cache)
    report = SweepReport("zeta", benchmark_zeta, bench)
    for z in zetas:
        r = _row("zeta", z, coupon, epsilon, z, mc, builder, workers, cache)
        report.rows.append((z, r, abs(r - bench)))
    report.monotone = shape_ok([row[2] for row in report.rows])
    return report


def error_sweep_epsilon(coupon: Coupon, mc: McConfig, benchmark_r_c: float,
                        epsilons=EPS_LADDER, zeta=SWEEP_ZETA, builder="DS3",
                        workers=1) -> SweepReport:
    """R_c error across calibration accuracies at a fixed table cap, measured
    against the benchmark of the cap sweep."""
    cache = _Cache(builder, workers)
    report = SweepReport("epsilon", zeta, benchmark_r_c)
    for eps in epsilons:
        r = _row("epsilon", eps, coupon, eps, zeta, mc, builder, workers, cache)
        report.rows.append((eps, r, abs(r - benchmark_r_c)))
    report.monotone = shape_ok([row[2] for row in report.rows])
    return report


def default_contract(n_coupons=1, mc=None) -> Contract:
    """Spread coupons on the two built-in synthetic smiles."""
    from .synthetic import default_case, second_case

    a, b = default_case().smile, second_case().smile
    spec = CouponSpec(1e6, 0.5, 0.97)
    coupons = tuple(Coupon(a, b, 5.0 + k, spec) for k in range(n_coupons))
    return Contract(coupons, mc or McConfig())
