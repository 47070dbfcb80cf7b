"""modnorm: a recursive module algebra for neural networks.

Trees of atoms (linear, embed, conv2d) and bonds are combined by composition
and concatenation; every tree carries a mass, a sensitivity, and a norm on
its whole weight space. The norm drives optimizer-update normalization so
learning rates transfer across width and depth, and a matching curvature
calculus bounds the smoothness of training losses.
"""

from .arch import ArchSpec, build_architecture, gpt, loss_eval, multi_head_attention, res_mlp, res_net
from .modules import (
    Broadcast,
    ModuleNode,
    WeightVector,
    broadcast,
    compose,
    concat,
    forward,
    initialize,
    make_atom,
    make_bond,
    module_add,
    module_power,
    module_scalar_mul,
    residual_block,
    residual_stack,
    tare,
    vjp,
)
from .norms import (
    LeafScale,
    PowerIterState,
    atom_norm,
    compute_scales,
    dual_modular_norm,
    modular_norm,
    normalize,
    spectral_norm,
    vector_norm,
)
from .optim import (
    OptimizerState,
    adam_step,
    lr_linear_decay,
    make_optimizer_state,
    normed_update,
    sgd_momentum_step,
)
from .sharpness import (
    SharpnessTriple,
    SmoothnessEstimate,
    broadcast_sharpness,
    compose_sharpness,
    concat_sharpness,
    loss_smoothness,
    residual_sharpness,
    tree_sharpness,
)

__version__ = "0.1.0"
