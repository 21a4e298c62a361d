"""Affine inflation market model: analytic pricing and calibration.

Closed-form transforms for the driving processes, exponential-affine bond
martingales, Fourier-inversion pricing of CPI and inflation options and
interest-rate caplets, a two-stage calibration to nominal and inflation
market data, and a Monte Carlo oracle for independent cross-checks.
"""

from .calibrate import CalibrationReport, CalibrationSettings, calibrate, fit_ubar, fit_utilde, fit_vbar, fit_vtilde
from .errors import (
    AimmError,
    ContourError,
    DomainViolation,
    NoSolution,
    OptimizerFailure,
    QuadratureError,
    RootBracketError,
    SchemaError,
    ValidationError,
)
from .fourier import (
    ContourSpec,
    OptionQuote,
    black_price,
    cpi_call,
    cpi_put,
    fourier_call,
    implied_vol_black,
    implied_vol_shifted_black,
    inflation_caplet,
    inflation_floorlet,
    ir_caplet,
    ir_floorlet,
)
from .market_data import MarketSnapshot, emit_tables, ilb_curve, load_snapshot, save_snapshot
from .mc import SimulationPlan, mc_estimate, mc_price, reweight_to_forward_measure, simulate
from .model import (
    ModelConfig,
    StateVector,
    TenorStructure,
    ab_pair,
    correlation,
    forward_cpi,
    forward_inflation,
    forward_rate,
    martingale,
    mgf_log_cpi,
    mgf_two_time,
    mgf_yoy,
    real_bond,
    yyiis_rate,
    zciis_rate,
)
from .processes import (
    CIR,
    CIRJump,
    OUJump,
    DomainBound,
    ProductProcess,
    component_variance,
    domain_bound,
    phi_component,
    phi_product,
    psi_component,
    psi_product,
)

__version__ = "0.1.0"
