"""Seeded synthetic smiles with known ground-truth parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernels as _k
from .sabr import DEFAULT_BETA, MarketSmile, SabrParams, calibrate_s0

F0 = 100.0
K_MINUS = 80.0
K_PLUS = 125.0

ALPHA_RANGE = (0.1, 1.0)
RHO_RANGE = (-0.7, 0.7)
ATM_VOL_RANGE = (0.1, 0.5)
T_RANGE = (0.5, 5.0)


@dataclass(frozen=True)
class SyntheticCase:
    smile: MarketSmile
    truth: SabrParams


def make_smile(alpha, rho, vol_atm, T, beta=DEFAULT_BETA, f0=F0,
               k_minus=K_MINUS, k_plus=K_PLUS):
    """Generate a smile whose exact three-strike solution is ``(alpha, rho, s0*)``."""
    probe = MarketSmile(k_minus, f0, k_plus, vol_atm, vol_atm, vol_atm, f0, T, beta)
    s0 = calibrate_s0(alpha, rho, probe)
    vm = _k.hagan_vol(f0, k_minus, T, alpha, beta, rho, s0)
    vp = _k.hagan_vol(f0, k_plus, T, alpha, beta, rho, s0)
    smile = MarketSmile(k_minus, f0, k_plus, vm, vol_atm, vp, f0, T, beta)
    return SyntheticCase(smile, SabrParams(alpha, beta, rho, s0, f0, T))


def synthetic_suite(n=192, seed=0, beta=DEFAULT_BETA):
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(n):
        alpha = rng.uniform(*ALPHA_RANGE)
        rho = rng.uniform(*RHO_RANGE)
        vol = rng.uniform(*ATM_VOL_RANGE)
        T = rng.uniform(*T_RANGE)
        cases.append(make_smile(alpha, rho, vol, T, beta))
    return cases


def default_case():
    """The reference smile used by table and pipeline defaults."""
    return make_smile(0.7, 0.7, 0.2, 0.5)


def second_case():
    """Companion smile for two-asset contracts."""
    return make_smile(0.7, 0.3, 0.2, 0.5)
