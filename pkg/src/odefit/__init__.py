"""Learn autonomous ODE right-hand sides from sparse, noisy time series.

The library fits an unknown vector field dx/dt = f(x) to observations of a
single trajectory, with three interchangeable representations of f --
an orthonormal polynomial expansion built from the data's own moments
("chaos"), Gaussian-kernel collocation ("kernel"), and a small tanh network
("neural") -- trained by a fixed cascade of global and local optimizers on
single- and multiple-shooting losses.  `bench` adds the Lotka-Volterra
benchmark scenarios; `cli` exposes everything as commands.
"""

from .apce import ApceBasis, ChaosRhs, build_basis, monomial_basis
from .bench import (EmptyGroup, EvalSetup, ScenarioRecord, ScenarioSettings,
                    SETUPS, aggregate, default_settings, evaluate,
                    evaluate_rhs, generate_data, lv_reference, lv_rhs,
                    merge_resume, read_jsonl, run_scenario, write_csv,
                    write_jsonl)
from .config import ConfigError, RunConfig, load_config, parse_config
from .data import ObservationSet
from .duals import Dual, value
from .integrate import (Diverged, Ivp, SegmentPlan, Trajectory, segment_grid,
                        solve, substeps_for)
from .kernels import (CollocationSet, FactorizationFailed, KernelRhs,
                      KernelSpec, fit_time_surrogate)
from .losses import LossSpec, gradient, loss, loss_batch, value_and_grad
from .neural import MlpSpec, NeuralRhs
from .optimizers import (CmaesConfig, PsoConfig, QuasiNewtonConfig,
                         cmaes_minimize, pso_minimize, quasi_newton_minimize)
from .pipeline import (AllStagesFailed, PipelineConfig, StageReport,
                       TrainedModel, build_rhs, estimate_initial_params,
                       pretrain_perfect_information, train)

__version__ = "0.1.0"

__all__ = [
    "ApceBasis", "ChaosRhs", "build_basis", "monomial_basis",
    "EmptyGroup", "EvalSetup", "ScenarioRecord", "ScenarioSettings", "SETUPS",
    "aggregate", "default_settings", "evaluate", "evaluate_rhs",
    "generate_data", "lv_reference", "lv_rhs", "merge_resume", "read_jsonl",
    "run_scenario", "write_csv", "write_jsonl",
    "ConfigError", "RunConfig", "load_config", "parse_config",
    "ObservationSet",
    "Dual", "value",
    "Diverged", "Ivp", "SegmentPlan", "Trajectory", "segment_grid", "solve",
    "substeps_for",
    "CollocationSet", "FactorizationFailed", "KernelRhs", "KernelSpec",
    "fit_time_surrogate",
    "LossSpec", "gradient", "loss", "loss_batch", "value_and_grad",
    "MlpSpec", "NeuralRhs",
    "CmaesConfig", "PsoConfig", "QuasiNewtonConfig",
    "cmaes_minimize", "pso_minimize", "quasi_newton_minimize",
    "AllStagesFailed", "PipelineConfig", "StageReport", "TrainedModel",
    "build_rhs", "estimate_initial_params", "pretrain_perfect_information",
    "train",
    "__version__",
]
