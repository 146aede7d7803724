import json

import numpy as np
import pytest

from smilegrid.errors import OutOfRangeError, SweepRowError
from smilegrid.models import make_model
from smilegrid.pipeline import (
    MACHINE_EPS,
    SWEEP_ZETA,
    Contract,
    Coupon,
    CouponSpec,
    McConfig,
    coupon_rate,
    default_contract,
    error_sweep_epsilon,
    error_sweep_zeta,
    present_value,
    price_contract,
    price_coupon,
    sabr_table,
    shape_ok,
)
from smilegrid.synthetic import default_case, second_case
from smilegrid.tables import LookupTable, TableBuildConfig, build_table


@pytest.fixture(scope="module")
def tables():
    a = sabr_table(default_case().truth, 1e-6)
    b = sabr_table(second_case().truth, 1e-6)
    return a, b


# present value

def test_present_value():
    assert present_value(0.01, CouponSpec(1e6, 0.5, 0.97)) == 4850.0
    assert present_value(0.0, CouponSpec(1e6, 0.5, 0.97)) == 0.0
    assert present_value(0.0123, CouponSpec(1.0, 1.0, 1.0)) == 0.0123


def test_config_validation():
    for bad in (dict(notional=0.0, delta=1.0, df=1.0), dict(notional=1.0, delta=0.0, df=1.0),
                dict(notional=1.0, delta=1.0, df=0.0), dict(notional=1.0, delta=1.0, df=1.5)):
        with pytest.raises(ValueError):
            CouponSpec(**bad)
    for bad in (dict(samples=0), dict(samples=2.5), dict(copula_corr=1.5), dict(seed=-1)):
        with pytest.raises(ValueError):
            McConfig(**bad)


# coupon rate

def test_identical_marginals_fully_correlated_give_zero(tables):
    a, _ = tables
    assert coupon_rate(a, a, McConfig(samples=50_000, copula_corr=1.0), 0.0) == 0.0


def test_single_sample_is_reproducible(tables):
    a, b = tables
    mc = McConfig(samples=1, seed=9)
    assert coupon_rate(a, b, mc, 0.0) == coupon_rate(a, b, mc, 0.0)


def test_rate_independent_of_workers(tables):
    a, b = tables
    mc = McConfig(samples=300_000, seed=4)
    ref = coupon_rate(a, b, mc, 5.0, workers=1)
    for w in (2, 3, 8):
        assert coupon_rate(a, b, mc, 5.0, workers=w) == ref


def test_rate_matches_independent_sampler(tables):
    # uncorrelated copula: mean payoff by direct quadrature over the two tables
    a, b = tables
    r = coupon_rate(a, b, McConfig(samples=400_000, seed=1, copula_corr=0.0), 5.0)
    u = (np.arange(2000) + 0.5) / 2000
    from smilegrid.tables import inverse_lookup_array
    lo = max(a.ps[0], b.ps[0])
    hi = min(a.ps[-1], b.ps[-1])
    u = lo + (hi - lo) * u
    xa = inverse_lookup_array(a, u)[:, None]
    xb = inverse_lookup_array(b, u)[None, :]
    exact = np.maximum(xa - xb - 5.0, 0.0).mean()
    assert r == pytest.approx(exact, rel=0.02)


def test_out_of_range_reports_global_sample():
    model = make_model("normal")
    narrow = build_table(model, TableBuildConfig(x_s=-1.0, x_f=1.0, n_initial=50), "FS")
    with pytest.raises(OutOfRangeError) as info:
        coupon_rate(narrow, narrow, McConfig(samples=200_000), 0.0)
    assert "global sample" in str(info.value)


# contracts

def test_contract_round_trip():
    c = default_contract(3, McConfig(samples=10, seed=5, copula_corr=0.2))
    d = json.loads(json.dumps(c.to_dict()))
    assert d["schema_version"] == 1
    assert Contract.from_dict(d) == c


def test_contract_schema_checked():
    d = default_contract().to_dict()
    d["schema_version"] = 2
    with pytest.raises(ValueError):
        Contract.from_dict(d)


def test_contract_total_is_sum_of_coupons():
    c = default_contract(2, McConfig(samples=20_000))
    results, total = price_contract(c, 1e-8, 1e-5)
    assert total == results[0].pv + results[1].pv
    again, total2 = price_contract(c, 1e-8, 1e-5, workers=2)
    assert total2 == total
    assert [r.r_c for r in again] == [r.r_c for r in results]


def test_coupon_uses_calibrated_parameters():
    c = default_contract(1, McConfig(samples=10_000)).coupons[0]
    res = price_coupon(c, 1e-10, 1e-5, McConfig(samples=10_000))
    truth = default_case().truth
    assert res.params_a.alpha == pytest.approx(truth.alpha, abs=1e-6)
    assert res.params_a.rho == pytest.approx(truth.rho, abs=1e-6)
    assert res.pv == present_value(res.r_c, c.spec)


# sweeps

def test_shape_rule():
    assert shape_ok([5.0, 4.0, 4.3, 1.0])
    assert not shape_ok([5.0, 4.0, 4.5, 1.0])
    assert shape_ok([])


def test_benchmark_row_has_zero_error():
    c = default_contract(1, McConfig(samples=20_000))
    rep = error_sweep_zeta(c.coupons[0], c.mc, zetas=(1e-6,), benchmark_zeta=1e-6, epsilon=1e-8)
    assert rep.rows == [(1e-6, rep.benchmark_r_c, 0.0)]


def test_benchmark_must_be_strictest():
    c = default_contract(1, McConfig(samples=1000))
    with pytest.raises(ValueError):
        error_sweep_zeta(c.coupons[0], c.mc, zetas=(1e-4, 1e-7), benchmark_zeta=1e-6)


def test_failing_row_is_named():
    c = default_contract(1, McConfig(samples=1000))
    with pytest.raises(SweepRowError) as info:
        error_sweep_zeta(c.coupons[0], c.mc, zetas=(1e-13,), benchmark_zeta=1e-13, epsilon=1e-6)
    assert info.value.value == 1e-13


def test_sweep_csv_layout(sweeps):
    lines = sweeps["zeta"].to_csv().splitlines()
    assert lines[0] == "accuracy_param,value,r_c,abs_error"
    assert [ln.split(",")[1] for ln in lines[1:-1]] == \
        ["FS", "0.0005", "0.0001", "1e-05", "1e-06", "5e-08"]
    assert lines[-1].startswith("verdict,")


def test_loose_cap_error_exceeds_tight_cap_error(sweeps):
    errs = dict((z, e) for z, _, e in sweeps["zeta"].rows)
    assert errs[1e-4] > errs[5e-8]


def test_machine_precision_row_sits_on_the_table_floor(sweeps):
    eps_rows = {e: err for e, _, err in sweeps["epsilon"].rows}
    zeta_rows = {z: err for z, _, err in sweeps["zeta"].rows}
    assert eps_rows[MACHINE_EPS] == zeta_rows[SWEEP_ZETA]


def test_error_ordering_of_test_sets(sweeps):
    assert sweeps["sets"][(1e-7, 5e-5)] > sweeps["sets"][(1e-10, 5e-8)]


@pytest.mark.xfail(strict=True, reason="below eps ~ 1e-5 the calibration error is under the "
                   "5e-8 table floor and the signed errors of the two stages partly cancel")
def test_tighter_calibration_row_not_worse(sweeps):
    rows = {e: err for e, _, err in sweeps["epsilon"].rows}
    assert rows[1e-10] <= rows[1e-6]


def test_pipeline_is_deterministic():
    c = default_contract(1, McConfig(samples=30_000, seed=3))
    a = price_contract(c, 1e-8, 1e-6)
    b = price_contract(c, 1e-8, 1e-6, workers=4)
    assert a[1] == b[1]
    assert a[0][0].n_a == b[0][0].n_a
