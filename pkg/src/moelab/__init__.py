"""moelab: a from-scratch mixture-of-experts training laboratory.

Synthetic cluster-structured multi-patch data, two-layer CNN experts with a
linear noisy top-1 router, full-batch normalized-GD training, dispatch
metrics, and Monte Carlo certification of the routing analysis.
"""

from .signals import (
    SignalBasis,
    DataConfig,
    ExampleMeta,
    Example,
    Dataset,
    build_orthonormal_basis,
    sample_example,
    generate_dataset,
    symmetry_quadruple,
)
from .experts import (
    Activation,
    CUBIC,
    LINEAR,
    RELU,
    get_activation,
    ExpertBank,
    init_expert_bank,
    expert_forward,
    expert_forward_batch,
    expert_param_grad,
    specialization_map,
    specialization_sets,
)
from .gating import (
    RouterWeights,
    RoutingNoiseSpec,
    UNIFORM01,
    NO_NOISE,
    zero_router,
    gate_logits,
    gate_logits_batch,
    softmax_gates,
    route_top1,
    route_top1_batch,
    routing_probabilities_mc,
    routing_probabilities_exact2,
    expert_load,
)
from .model import MoEModel, RoutedOutput, moe_forward_top1, batch_route, batch_margins
from .training import (
    ArchConfig,
    TrainConfig,
    IterationLog,
    logistic_loss,
    logistic_loss_deriv,
    perturbed_loss_and_grads,
    load_balancing_gradient,
    load_balancing_loss_and_grad,
    step,
    train,
    train_single_expert,
)
from .metrics import (
    DispatchMatrix,
    dispatch_matrix,
    dispatch_entropy,
    accuracy,
    margins,
    per_cluster_expert_accuracy,
    router_correctness,
    EvalReport,
    evaluate,
    format_dispatch_table,
)
from .verification import (
    LemmaReport,
    check_smoothing,
    certify_smoothing,
    certify_general_smoothing,
    check_pairwise_gate,
    certify_pairwise,
    check_gap_no_route,
    certify_gap,
    symmetry_margins,
    symmetry_margin_sum,
    certify_symmetry,
    check_router_zero_sum,
    grad_check,
    certify_gradients,
    single_expert_ceiling,
    format_report_table,
)
from .config import (
    RunConfig,
    ExperimentConfig,
    PRESETS,
    get_preset,
    load_config,
    dump_config,
    config_from_dict,
)
from .harness import ExperimentResult, SweepSummary, make_datasets, run_experiment, run_sweep
from .seeding import named_stream, substream

__version__ = "0.1.0"
