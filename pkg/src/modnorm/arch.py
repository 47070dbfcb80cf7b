"""Reference compounds: residual MLP, residual conv net, multi-head
attention, and a byte-scale GPT, all assembled purely from the tree
combinators, plus the two error measures with norm-consistent scalings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .modules import (
    ModuleNode,
    broadcast,
    compose,
    concat,
    identity,
    make_atom,
    make_bond,
    module_add,
    module_scalar_mul,
    residual_stack,
    tare,
)


@dataclass(frozen=True)
class ArchSpec:
    family: str = "resmlp"  # 'resmlp' | 'resnet' | 'gpt'
    width: int = 32
    depth: int = 2
    block_depth: int = 1
    kernel: int = 3
    heads: int = 4
    context: int = 16
    vocab: int = 64
    block_mass: float = 1.0
    d_in: int = 16
    d_out: int = 10

    def __post_init__(self):
        dims = (self.width, self.depth, self.block_depth, self.kernel,
                self.heads, self.context, self.vocab, self.d_in, self.d_out)
        if any(d < 1 for d in dims):
            raise ValueError(f"architecture dims must be >= 1: {self}")
        if self.block_mass <= 0:
            raise ValueError("block mass must be positive")
        if self.family == "gpt" and self.width % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide width ({self.width})")


def mlp_residue(d: int) -> ModuleNode:
    """MeanSubtract . Abs . Linear(d, d) . RMSDivide — unit sensitivity."""
    return compose(
        make_bond("mean_subtract"),
        compose(make_bond("abs"), compose(make_atom("linear", (d, d)), make_bond("rms_divide"))),
    )


def res_mlp(spec: ArchSpec) -> ModuleNode:
    """Linear output, tared residual stack of MLP residues, linear input."""
    residue = mlp_residue(spec.width)
    for _ in range(spec.block_depth - 1):
        residue = compose(mlp_residue(spec.width), residue)
    hidden = tare(residual_stack(residue, spec.depth), spec.block_mass)
    return compose(
        make_atom("linear", (spec.d_out, spec.width)),
        compose(hidden, make_atom("linear", (spec.width, spec.d_in))),
    )


def conv_residue(d: int, k: int) -> ModuleNode:
    return compose(
        make_bond("mean_subtract"),
        compose(
            make_bond("abs"), compose(make_atom("conv2d", (d, d, k)), make_bond("rms_divide"))
        ),
    )


def res_net(spec: ArchSpec) -> ModuleNode:
    """Conv input layer, tared residual stack of conv residues, and an
    average-pool + flatten + linear read-out."""
    residue = conv_residue(spec.width, spec.kernel)
    for _ in range(spec.block_depth - 1):
        residue = compose(conv_residue(spec.width, spec.kernel), residue)
    hidden = tare(residual_stack(residue, spec.depth), spec.block_mass)
    net = compose(hidden, make_atom("conv2d", (spec.width, spec.d_in, spec.kernel)))
    net = compose(make_bond("flatten"), compose(make_bond("avg_pool"), net))
    return compose(make_atom("linear", (spec.d_out, spec.width)), net)


def multi_head_attention(d, heads: int | None = None, context: int | None = None,
                         d_q: int | None = None, d_v: int | None = None,
                         mask: str = "causal") -> ModuleNode:
    """Exit . 1/3 * FuncAttention (broadcast over heads) . (Query, Key, Value).

    The 1/3 cancels the three-way concatenation's sensitivity sum, so the
    whole compound has unit sensitivity and mass 4. Accepts either an
    ArchSpec or explicit (width, heads, context) dims.
    """
    if isinstance(d, ArchSpec):
        d, heads, context = d.width, d.heads, d.context
    if heads is None or context is None:
        raise ValueError("multi_head_attention needs heads and context dims")
    d_q = d // heads if d_q is None else d_q
    d_v = d // heads if d_v is None else d_v
    split = make_bond("add_heads", h=heads)
    q = compose(split, broadcast(make_atom("linear", (heads * d_q, d)), context))
    k = compose(split, broadcast(make_atom("linear", (heads * d_q, d)), context))
    v = compose(make_bond("add_heads", h=heads),
                broadcast(make_atom("linear", (heads * d_v, d)), context))
    attn = broadcast(make_bond("func_attention", l=context, d_q=d_q, d_v=d_v, mask=mask), heads)
    exit_ = compose(
        broadcast(make_atom("linear", (d, heads * d_v)), context),
        make_bond("remove_heads", h=heads),
    )
    return compose(
        exit_, compose(module_scalar_mul(Fraction(1, 3), attn), concat(concat(q, k), v))
    )


def transformer_mlp(d: int, context: int) -> ModuleNode:
    """Expand to 4d, apply the unit-sensitivity smooth nonlinearity, contract."""
    up = broadcast(make_atom("linear", (4 * d, d)), context)
    down = broadcast(make_atom("linear", (d, 4 * d)), context)
    return compose(down, compose(make_bond("scaled_gelu"), up))


def gpt(spec: ArchSpec) -> ModuleNode:
    """Token+position embedding input (tared to mass 1), L blocks of
    attention and MLP residual pairs (tared to the block mass), and a
    layer-normed linear read-out over the vocabulary."""
    d, ln, n, big_l = spec.width, spec.context, spec.vocab, spec.depth
    tok = broadcast(make_atom("embed", (n, d)), ln)
    pos = compose(broadcast(make_atom("embed", (ln, d)), ln), make_bond("positions", l=ln, n=n))
    input_layer = tare(
        module_add(module_scalar_mul(Fraction(1, 2), tok), module_scalar_mul(Fraction(1, 2), pos)),
        1.0,
    )

    keep = Fraction(2 * big_l - 1, 2 * big_l)
    mix = Fraction(1, 2 * big_l)

    def residual_pair(inner: ModuleNode) -> ModuleNode:
        branch = compose(inner, make_bond("layer_norm"))
        return module_add(module_scalar_mul(keep, identity()), module_scalar_mul(mix, branch))

    block = compose(
        residual_pair(transformer_mlp(d, ln)),
        residual_pair(multi_head_attention(d, spec.heads, ln)),
    )
    body = block
    for _ in range(big_l - 1):
        body = compose(block, body)
    hidden = tare(body, spec.block_mass)

    output_layer = compose(
        broadcast(make_atom("linear", (n, d)), ln), make_bond("layer_norm")
    )
    return compose(output_layer, compose(hidden, input_layer))


def build_architecture(spec: ArchSpec) -> ModuleNode:
    builder = {"resmlp": res_mlp, "resnet": res_net, "gpt": gpt}.get(spec.family)
    if builder is None:
        raise ValueError(f"unknown architecture family {spec.family!r}")
    return builder(spec)


# ---------------------------------------------------------------------------
# error measures
# ---------------------------------------------------------------------------

def _flatten_logits(logits, targets):
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    y = logits.reshape(-1, logits.shape[-1])
    t = targets.reshape(-1)
    if y.shape[0] != t.shape[0]:
        raise ValueError(f"{y.shape[0]} logit rows vs {t.shape[0]} targets")
    if t.size and (t.min() < 0 or t.max() >= y.shape[1]):
        raise IndexError(f"target out of range for {y.shape[1]} classes")
    return y, t


def loss_eval(kind: str, logits, targets) -> float:
    """Batch-mean error. Square error uses the mean-square scaling with a
    sqrt(d)-tall target so a zero output scores exactly 1/2; cross entropy is
    the usual negative log-likelihood."""
    return loss_and_grad(kind, logits, targets)[0]


def loss_and_grad(kind: str, logits, targets):
    """Returns (loss, cotangent d loss / d logits) with the batch mean folded in."""
    y, t = _flatten_logits(logits, targets)
    b, d = y.shape
    rows = np.arange(b)
    if kind == "square":
        resid = y.copy()
        resid[rows, t] -= math.sqrt(d)
        loss = float(np.sum(resid * resid) / (2 * d * b))
        grad = resid / (d * b)
    elif kind == "cross_entropy":
        shifted = y - y.max(axis=1, keepdims=True)
        logz = np.log(np.sum(np.exp(shifted), axis=1))
        loss = float(np.mean(logz - shifted[rows, t]))
        p = np.exp(shifted - logz[:, None])
        p[rows, t] -= 1.0
        grad = p / b
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    return loss, grad.reshape(np.shape(logits))
