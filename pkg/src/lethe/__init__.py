"""Desk-scale engine for interleaved continual learning and unlearning.

A student network learns a stream of tasks with replay-buffer
distillation against a momentum teacher; unlearning requests distill the
targeted classes toward a freshly initialized network and purge them
from the buffer. Everything runs on an internal float64 autodiff tape
with swappable dense kernels (compiled extension or pure numpy).
"""

from .backend import compiled_available, use_backend
from .buffer import ReplayBuffer, class_histogram, purge_classes, reservoir_insert, sample_batch
from .config import DataParams, ExperimentConfig, load_config
from .engine import (
    EngineState,
    HyperParams,
    TaskRequest,
    init_state,
    learn_step,
    momentum_update,
    process_request,
    run_script,
    sample_bernoulli,
    spawn_bad_teacher,
    unlearn_step,
)
from .errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    DivergenceError,
    LetheError,
    RequestError,
    ScriptError,
    ShapeError,
)
from .evaluate import (
    AccuracyMatrix,
    TradeoffModel,
    e_ul,
    fit_tradeoff,
    p_cl,
    per_class_accuracy,
    record_row,
    retrain_oracle,
    total_performance,
)
from .losses import (
    LossWeights,
    cl_total_loss,
    combined_objective,
    contrastive_distillation_loss,
    critic_h,
    cross_entropy_loss,
    distill_weight,
    kl_divergence,
    online_distillation_loss,
    supervised_contrastive_loss,
    unlearning_loss,
)
from .model import NetConfig, TriNet, classify, clone, features, init, predict, project
from .streams import (
    StreamScript,
    TaskSpec,
    make_gaussian_tasks,
    parse_script,
    render_script,
    task_distribution,
)
from .tape import Tensor, backward, grad_check, l2_normalize, linear_forward, log_softmax, no_grad, relu

__version__ = "0.1.0"
