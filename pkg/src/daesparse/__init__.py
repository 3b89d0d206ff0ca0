"""Sparse discovery of differential-algebraic equations from time series."""

from .algfinder import (
    AlgebraicConfig,
    AlgebraicResult,
    RefinementStep,
    SvdDiagnostics,
    run_algebraic_finder,
    run_grid_algebraic_finder,
    svd_diagnostics,
)
from .dynfinder import (
    DiscoveredModel,
    OdeEquation,
    VariableRoles,
    assemble_dae,
    assign_variable_roles,
    discover_dynamics,
    refit_coefficients,
)
from .errors import DaeError
from .pipeline import PipelineConfig, emit_report, run_pipeline
from .sparsereg import SparseFitConfig, fit_lasso, fit_ols, fit_stlsq, fit_stols
from .termlib import (
    AlgebraicRelation,
    CandidateLibrary,
    Term,
    build_grid_library,
    build_polynomial_library,
    evaluate_library,
)
from .timeseries import (
    TimeSeriesTable,
    differentiate_table,
    estimate_derivative,
    load_table,
    smooth_savgol,
    smooth_table,
)

__version__ = "0.1.0"
