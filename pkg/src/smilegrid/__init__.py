"""Three-strike SABR calibration on adaptive grids, error-capped probability
lookup tables, and a copula coupon pipeline built on both."""

from ._backend import BACKEND
from .baseline import GdConfig, calibrate_gd
from .errors import (
    BracketingError,
    CalibrationDomainError,
    MatrixConstructionError,
    ModelEvaluationError,
    OutOfRangeError,
    SmileGridError,
    SweepRowError,
    TableGrowthError,
)
from .grid import CalibConfig, CalibResult, Variant, calibrate
from .models import (
    LognormalModel,
    NormalModel,
    SabrModel,
    UniformModel,
    make_model,
    sabr_cdf,
    sabr_domain,
)
from .pipeline import (
    Contract,
    Coupon,
    CouponSpec,
    McConfig,
    SweepReport,
    coupon_rate,
    error_sweep_epsilon,
    error_sweep_zeta,
    present_value,
    price_contract,
    price_coupon,
)
from .sabr import (
    ErrorMatrices,
    GridAxes,
    MarketSmile,
    SabrParams,
    calibrate_s0,
    error_matrices,
    implied_vol,
    implied_vol_array,
    objective,
)
from .synthetic import default_case, make_smile, second_case, synthetic_suite
from .tables import (
    BUILDERS,
    LookupTable,
    TableBuildConfig,
    build_table,
    inverse_lookup,
    inverse_lookup_array,
    midpoint_errors,
)

__version__ = "0.1.0"
