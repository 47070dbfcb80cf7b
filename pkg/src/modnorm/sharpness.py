"""Second-derivative (alpha, beta, gamma) bounds and their propagation rules.

A module is (alpha, beta, gamma)-sharp when, measured in the tree norm on
weights and the declared input/output norms,

    |dw . D2_ww . dw~| <= alpha ||dw|| ||dw~||,
    |dw . D2_wx . dx |  <= beta  ||dw|| ||dx||,
    |dx . D2_xx . dx~|  <= gamma ||dx|| ||dx~||.

Composition and concatenation each map child triples to a parent triple; the
rules are associative, so a whole tree folds to a single triple. Together
with a Lipschitz/smoothness estimate of the error measure this yields the
smoothness constant (sigma * alpha + tau) of the training loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .modules import Atom, Bond, Broadcast, Compose, Concat, ModuleNode

SQRT3 = math.sqrt(3.0)

# peak curvature of x * Phi(x): used as the default gamma for the smooth
# nonlinearity, which carries no exact constant
GELU_PEAK_CURVATURE = 2.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class SharpnessTriple:
    alpha: float
    beta: float
    gamma: float
    sensitivity: float = 1.0
    mass: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")

    def as_tuple(self):
        return (self.alpha, self.beta, self.gamma)


@dataclass(frozen=True)
class SmoothnessEstimate:
    sigma: float
    tau: float
    lipschitz: float


def _fractions(m1: float, m2: float) -> tuple[float, float]:
    total = m1 + m2
    if total == 0:
        raise ValueError("sharpness propagation needs positive total mass")
    return m1 / total, m2 / total


def compose_sharpness(t1: SharpnessTriple, t2: SharpnessTriple) -> SharpnessTriple:
    """Triple of (second . first); t1 is the module applied first. Zero child
    masses are handled as the vanishing-fraction limit."""
    p1, p2 = _fractions(t1.mass, t2.mass)
    mu1, mu2 = t1.sensitivity, t2.sensitivity
    alpha = (
        p1 * p1 * t1.alpha / mu2
        + p2 * p2 * t2.alpha
        + 2.0 * p1 * p2 * t2.beta / mu2
        + p1 * p1 * t2.gamma / (mu2 * mu2)
    )
    beta = p1 * t1.beta + mu1 * p2 * t2.beta + (mu1 / mu2) * p1 * t2.gamma
    gamma = mu2 * t1.gamma + mu1 * mu1 * t2.gamma
    return SharpnessTriple(alpha, beta, gamma, mu1 * mu2, t1.mass + t2.mass)


def concat_sharpness(t1: SharpnessTriple, t2: SharpnessTriple) -> SharpnessTriple:
    p1, p2 = _fractions(t1.mass, t2.mass)
    return SharpnessTriple(
        p1 * p1 * t1.alpha + p2 * p2 * t2.alpha,
        p1 * t1.beta + p2 * t2.beta,
        t1.gamma + t2.gamma,
        t1.sensitivity + t2.sensitivity,
        t1.mass + t2.mass,
    )


def _weightless_compose(t1: SharpnessTriple, t2: SharpnessTriple) -> SharpnessTriple:
    # both sides carry no weights: the alpha/beta inequalities are vacuous
    gamma = t2.sensitivity * t1.gamma + t1.sensitivity**2 * t2.gamma
    return SharpnessTriple(0.0, 0.0, gamma, t1.sensitivity * t2.sensitivity, 0.0)


def _weightless_concat(t1: SharpnessTriple, t2: SharpnessTriple) -> SharpnessTriple:
    return SharpnessTriple(
        0.0, 0.0, t1.gamma + t2.gamma, t1.sensitivity + t2.sensitivity, 0.0
    )


def _compose_any(t1, t2):
    return _weightless_compose(t1, t2) if t1.mass + t2.mass == 0 else compose_sharpness(t1, t2)


def _concat_any(t1, t2):
    return _weightless_concat(t1, t2) if t1.mass + t2.mass == 0 else concat_sharpness(t1, t2)


def broadcast_sharpness(t: SharpnessTriple, h: int, mode: str = "linf") -> SharpnessTriple:
    """Sharpness of the h-fold broadcast. Under max-combination norms (linf)
    or standard L^p norms the triple is unchanged; under mean-square norms
    the input-curvature term grows by sqrt(h) in the worst case, or by a
    fixed sqrt(3) for dense high-dimensional activations."""
    if h < 1:
        raise ValueError("broadcast factor must be >= 1")
    if mode in ("linf", "lp_standard"):
        return t
    if mode == "rms_pessimistic":
        return SharpnessTriple(t.alpha, t.beta, math.sqrt(h) * t.gamma, t.sensitivity, t.mass)
    if mode == "rms_sqrt3":
        return SharpnessTriple(t.alpha, t.beta, SQRT3 * t.gamma, t.sensitivity, t.mass)
    raise ValueError(f"unknown broadcast sharpness mode {mode!r}")


# ---------------------------------------------------------------------------
# residual stacks
# ---------------------------------------------------------------------------

def _residual_block_triple(t: SharpnessTriple, depth: int) -> SharpnessTriple:
    """Triple of (depth-1)/depth * Identity + 1/depth * M, built literally
    from the propagation rules over the bond expansion."""
    zero = SharpnessTriple(0.0, 0.0, 0.0, 1.0, 0.0)
    id_branch = _weightless_compose(
        SharpnessTriple(0.0, 0.0, 0.0, (depth - 1) / depth, 0.0), zero
    )  # Mul_(1-1/depth) . Identity
    scaled_m = _compose_any(t, SharpnessTriple(0.0, 0.0, 0.0, 1.0 / depth, 0.0))
    branch_pair = _concat_any(id_branch, scaled_m)
    return _compose_any(branch_pair, SharpnessTriple(0.0, 0.0, 0.0, 1.0, 0.0))  # Add


def residual_sharpness(t: SharpnessTriple, depth: int, mode: str = "closed_form") -> SharpnessTriple:
    """Triple of the depth-L residual stack of a unit-sensitivity module.

    recurrence: fold the composition rule over the literal block construction;
    closed_form: the depth-dependent closed expressions; bound: the
    depth-independent cap (alpha + beta + gamma/3, beta + gamma/2, gamma).
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if abs(float(t.sensitivity) - 1.0) > 1e-12:
        raise ValueError("residual sharpness requires unit sensitivity")
    if mode == "bound":
        return SharpnessTriple(
            t.alpha + t.beta + t.gamma / 3.0, t.beta + t.gamma / 2.0, t.gamma, 1.0, t.mass * depth
        )
    if mode == "closed_form":
        l = depth
        alpha = t.alpha + (l - 1) / l * t.beta + (l * (l - 1) * (2 * l - 1)) / (6 * l**3) * t.gamma
        beta = t.beta + (l - 1) / (2 * l) * t.gamma
        return SharpnessTriple(alpha, beta, t.gamma, 1.0, t.mass * depth)
    if mode == "recurrence":
        block = _residual_block_triple(t, depth)
        acc = block
        for _ in range(depth - 1):
            acc = _compose_any(acc, block)
        return acc
    raise ValueError(f"unknown residual sharpness mode {mode!r}")


# ---------------------------------------------------------------------------
# whole-tree propagation
# ---------------------------------------------------------------------------

DEFAULT_LEAF_TRIPLES = {
    "linear": (0.0, 1.0, 0.0),
    "embed": (0.0, 1.0, 0.0),
    "conv2d": (0.0, 1.0, 0.0),
    "identity": (0.0, 0.0, 0.0),
    "mul": (0.0, 0.0, 0.0),
    "add": (0.0, 0.0, 0.0),
    "abs": (0.0, 0.0, 0.0),
    "relu": (0.0, 0.0, 0.0),
    "scaled_relu": (0.0, 0.0, 0.0),
    "gelu": (0.0, 0.0, GELU_PEAK_CURVATURE),
    "scaled_gelu": (0.0, 0.0, math.sqrt(2.0) * GELU_PEAK_CURVATURE),
    "mean_subtract": (0.0, 0.0, 0.0),
    "rms_divide": (0.0, 0.0, 1.0),
    "func_attention": (0.0, 0.0, 3.0),
    "avg_pool": (0.0, 0.0, 0.0),
    "flatten": (0.0, 0.0, 0.0),
    "positions": (0.0, 0.0, 0.0),
    "add_heads": (0.0, 0.0, 0.0),
    "remove_heads": (0.0, 0.0, 0.0),
}


def tree_sharpness(m: ModuleNode, leaf_triples: dict | None = None,
                   broadcast_mode: str = "linf") -> SharpnessTriple:
    """Fold the propagation rules over a module tree. `leaf_triples` maps an
    atom/bond kind to (alpha, beta, gamma) and overrides the defaults."""
    table = dict(DEFAULT_LEAF_TRIPLES)
    if leaf_triples:
        table.update(
            {k: (v.as_tuple() if isinstance(v, SharpnessTriple) else tuple(v))
             for k, v in leaf_triples.items()}
        )

    def rec(node: ModuleNode) -> SharpnessTriple:
        if isinstance(node, (Atom, Bond)):
            if node.kind not in table:
                raise KeyError(f"no sharpness entry for kind {node.kind!r}")
            a, b, g = table[node.kind]
            return SharpnessTriple(a, b, g, float(node.sensitivity), node.mass)
        if isinstance(node, Compose):
            return _compose_any(rec(node.children[0]), rec(node.children[1]))
        if isinstance(node, Concat):
            return _concat_any(rec(node.children[0]), rec(node.children[1]))
        if isinstance(node, Broadcast):
            return broadcast_sharpness(rec(node.children[0]), node.factor, broadcast_mode)
        raise TypeError(f"unknown node type {type(node).__name__}")

    return rec(m)


# ---------------------------------------------------------------------------
# loss smoothness
# ---------------------------------------------------------------------------

def loss_smoothness(t: SharpnessTriple, error: str, observed_loss: float, d: int,
                    conservative_tau: bool = True) -> SmoothnessEstimate:
    """Convert a module triple into loss smoothness constants.

    Square error: sigma = sqrt(loss), tau = 1. Cross entropy: sigma =
    sqrt(d * loss); tau defaults to the conservative sqrt(d) estimate, with
    tau = 1 available under the generic-alignment assumption.
    """
    if observed_loss < 0:
        raise ValueError("observed loss must be nonnegative")
    if d < 1:
        raise ValueError("d must be >= 1")
    if error == "square":
        sigma, tau = math.sqrt(observed_loss), 1.0
    elif error == "cross_entropy":
        sigma = math.sqrt(d) * math.sqrt(observed_loss)
        tau = math.sqrt(d) if conservative_tau else 1.0
    else:
        raise ValueError(f"unknown error measure {error!r}")
    return SmoothnessEstimate(sigma, tau, sigma * t.alpha + tau)
