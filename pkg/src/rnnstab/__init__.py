"""Stability analysis and synthesis for sigmoid recurrent networks."""

from .analysis import (
    GLOBAL, LAMBDA_MIN, LOG_DET, REGIONAL_AUX, REGIONAL_NARROW, Ellipsoid, StabilityCertificate,
    algorithm1, analyze_regional_aux, analyze_regional_narrow, check_global, min_h_feasible,
    necessary_precheck, validate_certificate,
)
from .errors import Infeasible, NumericalFailure, RnnStabError
from .model import (
    ClosedLoop, EsnModel, RnnModel, augment_integrator, build_closed_loop, design_matrices,
    is_schur, load_esn, load_model, save_esn, save_model,
)
from .sigmoid import ALGEBRAIC, SAT, TANH, SectorData, compute_theta, compute_ybar
from .synthesis import (
    FixedDelta, H2Weights, Scalarized, SynthesisResult, benchmark_weights, h2_gevp,
    refine_basin, synthesize_aux, synthesize_global, synthesize_narrow,
)
from .verify import (
    generate_surrogate_data, h2_norm_oracle, identify_esn, monte_carlo_invariance, simulate,
    solve_dlyap,
)

__version__ = "0.1.0"
