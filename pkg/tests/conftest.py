import os

import pytest

from smilegrid.grid import CalibConfig, Variant, calibrate
from smilegrid.synthetic import synthetic_suite

os.environ.setdefault("SMILEGRID_WORKERS", "1")

# (criterion number, verdict, detail) collected by test_acceptance
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def suite():
    return synthetic_suite(192, 0)


class _CalibCache:
    def __init__(self, cases):
        self.cases = cases
        self._runs = {}

    def runs(self, variant, eps, n=None):
        key = (Variant(variant), eps)
        if key not in self._runs:
            cfg = CalibConfig(epsilon_sabr=eps, variant=key[0])
            self._runs[key] = [calibrate(c.smile, cfg) for c in self.cases]
        return self._runs[key][:n]


@pytest.fixture(scope="session")
def calib_runs(suite):
    """Grid calibrations of the default suite, memoised by (variant, epsilon)."""
    return _CalibCache(suite)


@pytest.fixture(scope="session")
def sweeps():
    """Cap and accuracy sweeps of the default contract, plus the two
    (epsilon, zeta) test sets, all at one seed."""
    from smilegrid.pipeline import (
        default_contract,
        error_sweep_epsilon,
        error_sweep_zeta,
        price_coupon,
    )

    contract = default_contract()
    coupon = contract.coupons[0]
    zeta = error_sweep_zeta(coupon, contract.mc)
    eps = error_sweep_epsilon(coupon, contract.mc, zeta.benchmark_r_c)
    sets = {key: abs(price_coupon(coupon, *key, contract.mc).r_c - zeta.benchmark_r_c)
            for key in ((1e-7, 5e-5), (1e-10, 5e-8))}
    return {"contract": contract, "zeta": zeta, "epsilon": eps, "sets": sets}
