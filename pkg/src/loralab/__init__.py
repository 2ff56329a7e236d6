"""Laboratory for low-rank adapter fine-tuning dynamics.

Two halves: an exact max-plus exponent calculus that classifies
(initialization, learning-rate) regimes in the infinite-width limit, and
an empirical side (width-scaling probes, a trainable toy classifier, and
grid experiments) that measures the predicted exponents and scheme
orderings at desk scale.
"""

from .gamma import (
    NEG_INF,
    GammaExp,
    RegimeReport,
    adam_regime,
    as_gamma,
    classify_table,
    contract_rank,
    contract_width,
    gadd,
    gmul,
    parse_gamma,
    sgd_regime,
)
from .lora import (
    InitKind,
    InitScheme,
    LoraLayer,
    ToyModel,
    attach_lora,
    backward_lora,
    backward_toy,
    delta_decompose,
    forward_lora,
    forward_toy,
    init_lora,
    load_checkpoint,
    pretrain_model,
    save_checkpoint,
)
from .optim import AdamState, LrSpec, adam_step, realize_lr, sgd_step
from .probe import (
    ProbeConfig,
    ProbeRecord,
    SlopeFit,
    compare_to_theory,
    fit_slope,
    run_probe,
)
from .tensor import (
    child_rng,
    gaussian,
    make_rng,
    matmul,
    relu,
    relu_backward,
    rms,
    softmax_cross_entropy,
    softmax_cross_entropy_batch,
)

__version__ = "0.1.0"
