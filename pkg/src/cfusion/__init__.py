"""Exact Monte Carlo for products of densities restricted to
equality-constraint manifolds, via diffusion-bridge rejection sampling."""

from .density_core import (
    ComponentDensity,
    GaussianDensity,
    GenLogDensity,
    GenLogParams,
    StudentTDensity,
    fit_genlog,
    genlog_cumulants,
    phi,
)
from .bridge_sim import (
    BridgeSkeleton,
    LayerSequence,
    bridge_interpolate,
    crossing_event,
    sample_layer,
)
from .thinning import ThinningOutcome, accept_bounded, accept_layered
from .constraint_kit import (
    GeneralConstraint,
    LinearConstraint,
    SphereConstraint,
    sample_gaussian_linear,
    sample_vmf_endpoint,
    uniform_on_manifold,
    uniform_on_plane_sphere,
)
from .manifold_chmc import ChmcConfig, ChmcState, chmc_step, run_chmc
from .fusion_engine import (
    BudgetExhausted,
    FusionDraw,
    FusionProblem,
    sample_batch,
    sample_case1,
    sample_case2,
    tune_horizon,
)
from .gaussian_analysis import condition_on_sum, mse_improvement
from .baseline_samplers import (
    BenchmarkScenario,
    ess,
    importance_sampler,
    percentage_errors,
    quadrature_truth,
    rw_mh_hyperplane,
)
from .ts_imputation import ArGenLogModel, ImputationTask, fit, impute

__version__ = "0.1.0"
