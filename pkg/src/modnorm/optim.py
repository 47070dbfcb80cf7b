"""Base optimizers (heavy-ball SGD, bias-corrected Adam), the normed-update
wrapper, and the linear-decay learning rate schedule.

The normed wrapper leaves the base optimizer untouched: it takes the raw
update direction, rescales it to unit tree norm, and multiplies by the
learning rate. Toggling normalization is the only difference between the
normed and unnormed paths.
"""

from __future__ import annotations

from dataclasses import dataclass

from .modules import ModuleNode, WeightVector
from .norms import PowerIterState, normalize


@dataclass
class OptimizerState:
    base: str  # 'sgd' | 'adam'
    step: int = 0
    momentum: WeightVector | None = None
    first_moment: WeightVector | None = None
    second_moment: WeightVector | None = None
    power_iter: PowerIterState | None = None
    beta: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.99
    eps_adam: float = 1e-8
    eps_norm: float = 1e-12


def make_optimizer_state(m: ModuleNode, w: WeightVector, base: str, seed: int = 0,
                         **hyper) -> OptimizerState:
    if base not in ("sgd", "adam"):
        raise ValueError(f"unknown base optimizer {base!r}")
    state = OptimizerState(base=base, power_iter=PowerIterState(m, seed), **hyper)
    if base == "sgd":
        state.momentum = w.zeros_like()
    else:
        state.first_moment = w.zeros_like()
        state.second_moment = w.zeros_like()
    return state


def sgd_momentum_step(state: OptimizerState, grad: WeightVector) -> WeightVector:
    """Heavy ball: b <- beta b + g; the raw update direction is b."""
    state.step += 1
    state.momentum = state.beta * state.momentum + grad
    return state.momentum.copy()


def adam_step(state: OptimizerState, grad: WeightVector) -> WeightVector:
    """Bias-corrected Adam direction m_hat / (sqrt(v_hat) + eps)."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.first_moment = b1 * state.first_moment + (1.0 - b1) * grad
    state.second_moment = b2 * state.second_moment + (1.0 - b2) * (grad * grad)
    m_hat = state.first_moment / (1.0 - b1 ** state.step)
    v_hat = state.second_moment / (1.0 - b2 ** state.step)
    return m_hat / v_hat.sqrt().shift(state.eps_adam)


def base_step(state: OptimizerState, grad: WeightVector) -> WeightVector:
    return sgd_momentum_step(state, grad) if state.base == "sgd" else adam_step(state, grad)


def normed_update(m: ModuleNode, state: OptimizerState, grad: WeightVector,
                  base: str, lr: float) -> WeightVector:
    """lr * normalize(base update). The caller applies w <- w - result."""
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    if base != state.base:
        raise ValueError(f"state was built for base {state.base!r}, got {base!r}")
    delta = base_step(state, grad)
    delta = normalize(m, delta, state.power_iter, eps=state.eps_norm)
    return lr * delta


def unnormed_update(state: OptimizerState, grad: WeightVector, lr: float) -> WeightVector:
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    return lr * base_step(state, grad)


def lr_linear_decay(step: int, total_steps: int, lr0: float) -> float:
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 - step / total_steps)
