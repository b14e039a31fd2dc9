"""Product-of-FIR (simple multilinear) nonlinear adaptive filtering."""

from .adaptive import (
    DivergenceError,
    ErrorTrace,
    SmlLmsState,
    VolterraLmsState,
    run_filter,
    sml_init,
    sml_step,
    volterra_init,
    volterra_step,
)
from .estimators import DelayLineEmbedding, SMLLMSRegressor, VolterraLMSRegressor
from .mse_surface import MomentSet, Plant, estimate_moments, grad, mse, normal_residual
from .simkit import EmseCurve, ExperimentConfig, emse_ensemble, gen_plant
from .sml_model import output

__version__ = "0.1.0"
