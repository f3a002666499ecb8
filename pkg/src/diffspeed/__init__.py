"""Semiparametric hierarchical Bayesian estimation of new-product diffusion speed.

A library and batch CLI for fitting logistic diffusion panels with a
time-varying speed parameter: free-knot spline regression over the shared
time effect, spike-and-slab covariate selection, DIC model comparison and
time-to-penetration analytics.
"""

from .analytics import (
    DicResult,
    PenetrationQuery,
    compute_dic,
    speed_trajectory,
    time_to_penetration_constant,
    time_to_penetration_linear,
    time_to_penetration_numeric,
)
from .bars import MoveProposal, SplineTarget, accept_move, propose_move
from .engine import (
    ChainOutput,
    SamplerConfig,
    gelman_rubin,
    run_chain,
    run_chains,
)
from .errors import ConfigError, DataError, DiffspeedError, NumericalError
from .model import (
    HyperParams,
    ModelState,
    PanelDataset,
    PanelIndex,
    Series,
    diffusion_hazard,
    log_likelihood,
)
from .panel_io import load_panel, save_panel
from .selection import (
    SelectionState,
    beta_full_conditional,
    calibrate_hyperparams,
    gamma_full_conditional,
    inclusion_probabilities,
)
from .splines import SplineState, basis_matrix, evaluate_f
from .synthetic import GeneratorConfig, simulate_panel

__version__ = "0.1.0"
