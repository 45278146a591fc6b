"""Structural-sparsity training via split linearized Bregman iteration.

The public surface groups into:

* networks: :mod:`dessilbi.nets` (layers, losses, exact gradients)
* penalties: :mod:`dessilbi.penalties` (groupings, prox, duality)
* optimizer: :mod:`dessilbi.optimizer` (step variants, split policies)
* certificates: :mod:`dessilbi.monitor` (Lyapunov descent checks)
* paths: :mod:`dessilbi.paths` (support tracking and exports)
* experiments: :mod:`dessilbi.harness` (training, prune/retrain, baselines)
* configs: :mod:`dessilbi.config` and the ``dessilbi`` command line
"""

from .config import ConfigError, ExperimentConfig, emit_config, parse_config
from .data import Dataset, DatasetSpec, blobs, dataset_spec, gen_sparse_linear, \
    load_idx, make_dataset
from .harness import (DegenerateMaskError, PruneReport, RetrainPlan, RunResult,
                      TrainingDiverged, fine_tune_rewind, one_shot_prune_retrain,
                      run_kappa_nu_grid, sgd_baseline, support_recovery_score,
                      train)
from .monitor import LyapunovRecord, Monitor, MonitorConfig, \
    power_iteration_lipschitz
from .nets import (Network, NonFiniteError, ShapeError, backward, build_network,
                   finite_diff_grad, forward, he_init)
from .optimizer import (HyperParams, OptimizerState, SplitPolicy, current_dual,
                        default_schedule, init_state, lr_schedule, split_all,
                        step, step_momentum, step_momentum_wd, step_naive,
                        step_reformulated, stepsize_bound)
from .paths import (GroupMask, PathRecord, inverse_scale_order, project_model,
                    record_epoch, records_from_json, records_to_csv,
                    records_to_json, sparsity, support_mask)
from .penalties import (Grouping, Penalty, bregman_div, dual_feasible,
                        penalty_value, prox, prox_oracle)

__version__ = "0.1.0"
