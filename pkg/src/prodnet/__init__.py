"""Multi-sector production-network toolkit.

Estimates intermediate-input substitution elasticities from input-output
panels, calibrates a nested-CES general-equilibrium model to a base-year
snapshot, and propagates import-price and productivity shocks to sectoral
prices and GDP.
"""

from .economy import (Economy, Elasticities, IOSnapshot, build_io_matrix,
                      leontief_inverse, spectral_radius, validate_snapshot)
from .equilibrium import (CalibratedModel, EquilibriumState, Shock, calibrate,
                          check_equilibrium, real_gdp, solve_equilibrium)
from .analytics import (FirstOrderResponse, first_order_response,
                        gdp_second_order, reduced_form_check)
from .estimation import (EstimationResult, ResidualizedPanel, estimate,
                         estimate_household_nu, gmm_objective,
                         moment_conditions, residualize,
                         structural_coefficients)
from .errors import (CalibrationError, DataError, EquilibriumError,
                     EstimationError, InvertibilityError, ProdnetError,
                     TransportError)

__version__ = "0.1.0"

__all__ = [
    "Economy", "Elasticities", "IOSnapshot", "build_io_matrix",
    "leontief_inverse", "spectral_radius", "validate_snapshot",
    "CalibratedModel", "EquilibriumState", "Shock", "calibrate",
    "check_equilibrium", "real_gdp", "solve_equilibrium",
    "FirstOrderResponse", "first_order_response", "gdp_second_order",
    "reduced_form_check",
    "EstimationResult", "ResidualizedPanel", "estimate",
    "estimate_household_nu", "gmm_objective", "moment_conditions",
    "residualize", "structural_coefficients",
    "ProdnetError", "DataError", "TransportError", "InvertibilityError",
    "CalibrationError", "EquilibriumError", "EstimationError",
    "__version__",
]
