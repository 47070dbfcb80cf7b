"""Vector and operator norms, warm-started power iteration, the flattening of
the recursive tree norm into per-atom scale factors, and update normalization.

The tree norm of a weight vector is a max of scaled per-atom norms,

    max(s_1 ||w_1||, ..., s_L ||w_L||),

where the scale s_k of atom k is the product, along the path from the root,
of the local factors introduced by each combinator: at a composition the
earlier branch picks up (the later module's sensitivity) * (mass / branch
mass) and the later branch picks up (mass / branch mass); at a concatenation
both branches pick up (mass / branch mass). Zero-mass branches are excluded
(frozen). ``compute_scales`` performs that expansion once per tree.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .modules import Atom, Broadcast, Compose, Concat, ModuleNode, WeightVector, _check_weights
from .tensors import ShapeError

VERIFY_POWER_STEPS = 400
VERIFY_POWER_TOL = 1e-10

ATOM_NORM_KIND = {
    "linear": "spectral",
    "embed": "max_column_l2",
    "conv2d": "max_kernel_spectral",
}


# ---------------------------------------------------------------------------
# vector norms
# ---------------------------------------------------------------------------

def vector_norm(kind: str, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("vector_norm of an empty tensor")
    if kind == "rms":
        return float(np.sqrt(np.mean(np.square(x))))
    if kind == "l1":
        return float(np.sum(np.abs(x)))
    if kind == "inf_rms":
        if x.ndim != 2:
            raise ShapeError(f"inf_rms expects a 2-D tensor, got shape {x.shape}")
        return float(np.max(np.sqrt(np.mean(np.square(x), axis=1))))
    raise ValueError(f"unknown vector norm kind {kind!r}")


# ---------------------------------------------------------------------------
# spectral norm by power iteration
# ---------------------------------------------------------------------------

def _fresh_unit(n: int, seed) -> np.ndarray:
    v = np.random.default_rng(seed).standard_normal(n)
    return v / np.linalg.norm(v)


def spectral_norm(matrix, steps: int, warm=None, tol: float | None = None, seed=0):
    """Largest singular value estimated by power iteration on the right
    singular vector. Estimates grow monotonically toward the true value from
    below. Returns (estimate, updated unit vector) for warm starting.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"spectral_norm expects a 2-D tensor, got shape {a.shape}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not a.any():
        return 0.0, _fresh_unit(a.shape[1], seed)
    v = _fresh_unit(a.shape[1], seed) if warm is None else np.asarray(warm, dtype=np.float64)
    sigma = 0.0
    for _ in range(steps):
        u = a @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            # v happens to lie in the null space; restart from a fresh vector
            v = _fresh_unit(a.shape[1], seed)
            continue
        v = a.T @ (u / nu)
        nv = np.linalg.norm(v)
        v = v / nv
        prev, sigma = sigma, float(np.linalg.norm(a @ v))
        if tol is not None and abs(sigma - prev) <= tol * max(sigma, 1.0):
            break
    return sigma, v


# ---------------------------------------------------------------------------
# per-atom norms and duals
# ---------------------------------------------------------------------------

def atom_norm(atom, w_leaf) -> float:
    """Exact declared norm of one atom's weight: spectral for linear, max
    column length for embed, max kernel-slice spectral for conv2d."""
    kind = atom.kind if isinstance(atom, Atom) else atom
    w = np.asarray(w_leaf, dtype=np.float64)
    if kind == "linear":
        if w.ndim != 2:
            raise ShapeError(f"linear weight must be 2-D, got shape {w.shape}")
        return float(np.linalg.norm(w, 2))
    if kind == "embed":
        if w.ndim != 2:
            raise ShapeError(f"embed weight must be 2-D, got shape {w.shape}")
        return float(np.max(np.linalg.norm(w, axis=0)))
    if kind == "conv2d":
        if w.ndim != 4:
            raise ShapeError(f"conv2d weight must be 4-D, got shape {w.shape}")
        k = w.shape[2]
        return float(max(np.linalg.norm(w[:, :, i, j], 2) for i in range(k) for j in range(k)))
    raise ValueError(f"unknown atom kind {kind!r}")


def dual_atom_norm(atom, g_leaf) -> float:
    """Dual of atom_norm: nuclear for spectral, column-length sum for embed,
    kernel-slice nuclear sum for conv2d."""
    kind = atom.kind if isinstance(atom, Atom) else atom
    g = np.asarray(g_leaf, dtype=np.float64)
    if kind == "linear":
        return float(np.sum(np.linalg.svd(g, compute_uv=False)))
    if kind == "embed":
        return float(np.sum(np.linalg.norm(g, axis=0)))
    if kind == "conv2d":
        k = g.shape[2]
        return float(
            sum(
                np.sum(np.linalg.svd(g[:, :, i, j], compute_uv=False))
                for i in range(k)
                for j in range(k)
            )
        )
    raise ValueError(f"unknown atom kind {kind!r}")


# ---------------------------------------------------------------------------
# flattened scales
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LeafScale:
    leaf_index: int
    scale: float | None  # None for frozen (zero-mass) atoms
    norm_kind: str
    frozen: bool = False


_scale_cache: "weakref.WeakKeyDictionary[ModuleNode, list]" = weakref.WeakKeyDictionary()


def compute_scales(m: ModuleNode) -> list[LeafScale]:
    """Flatten the recursive tree norm into one scale per atom (trees are
    immutable, so the result is cached per root)."""
    if m.mass <= 0:
        raise ValueError("compute_scales requires a tree of positive mass")
    cached = _scale_cache.get(m)
    if cached is not None:
        return cached
    out: list[LeafScale] = []

    def rec(node: ModuleNode, mult: float, frozen: bool):
        if isinstance(node, Atom):
            dead = frozen or node.mass == 0
            out.append(
                LeafScale(len(out), None if dead else mult, ATOM_NORM_KIND[node.kind], dead)
            )
            return
        if isinstance(node, Compose):
            first, second = node.children
            if first.mass > 0:
                rec(first, mult * float(second.sensitivity) * node.mass / first.mass, frozen)
            else:
                rec(first, mult, True)
            if second.mass > 0:
                rec(second, mult * node.mass / second.mass, frozen)
            else:
                rec(second, mult, True)
            return
        if isinstance(node, Concat):
            for child in node.children:
                if child.mass > 0:
                    rec(child, mult * node.mass / child.mass, frozen)
                else:
                    rec(child, mult, True)
            return
        if isinstance(node, Broadcast):
            rec(node.children[0], mult, frozen)
            return
        # weightless bond: nothing to record
        return

    rec(m, 1.0, False)
    _scale_cache[m] = out
    return out


def modular_norm(m: ModuleNode, w: WeightVector) -> float:
    """Max over non-frozen atoms of scale * atom_norm; 0 for all-frozen trees."""
    _check_weights(m, w)
    atoms = list(m.atoms())
    best = 0.0
    for ls, atom, leaf in zip(compute_scales(m), atoms, w):
        if ls.frozen:
            continue
        best = max(best, ls.scale * atom_norm(atom, leaf))
    return best


def dual_modular_norm(m: ModuleNode, g: WeightVector) -> float:
    """Dual of the tree norm: the max combination dualizes to a sum, each term
    weighted by 1/s_k with the per-atom dual norm."""
    _check_weights(m, g)
    atoms = list(m.atoms())
    total = 0.0
    for ls, atom, leaf in zip(compute_scales(m), atoms, g):
        if ls.frozen:
            continue
        total += dual_atom_norm(atom, leaf) / ls.scale
    return total


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

class PowerIterState:
    """Per-atom running estimates of top singular vectors, carried across
    optimizer steps so two power-iteration steps per update suffice."""

    def __init__(self, m: ModuleNode, seed: int = 0):
        self.vectors: list = []
        for i, atom in enumerate(m.atoms()):
            if atom.kind == "linear":
                self.vectors.append(_fresh_unit(atom.dims[1], [seed, i]))
            elif atom.kind == "conv2d":
                d_in, k = atom.dims[1], atom.dims[2]
                self.vectors.append(
                    np.stack([_fresh_unit(d_in, [seed, i, s]) for s in range(k * k)])
                )
            else:
                self.vectors.append(None)


def _leaf_norm_online(atom: Atom, leaf, state: PowerIterState | None, idx: int,
                      steps: int, tol: float | None) -> float:
    """Norm of one update leaf, estimating spectral parts by (warm-started)
    power iteration and updating the state in place."""
    if atom.kind == "embed":
        return float(np.max(np.linalg.norm(leaf, axis=0)))
    if atom.kind == "linear":
        warm = state.vectors[idx] if state is not None else None
        sigma, v = spectral_norm(leaf, steps, warm=warm, tol=tol, seed=[17, idx])
        if state is not None:
            state.vectors[idx] = v
        return sigma
    k = atom.dims[2]
    best = 0.0
    for s in range(k * k):
        i, j = divmod(s, k)
        warm = state.vectors[idx][s] if state is not None else None
        sigma, v = spectral_norm(leaf[:, :, i, j], steps, warm=warm, tol=tol, seed=[17, idx, s])
        if state is not None:
            state.vectors[idx][s] = v
        best = max(best, sigma)
    return best


def normalize(m: ModuleNode, delta: WeightVector, state: PowerIterState | None = None,
              eps: float = 1e-12, steps: int | None = None) -> WeightVector:
    """Rescale each non-frozen leaf to unit scaled norm:
    delta_k -> delta_k / (s_k * (||delta_k|| + eps)). Frozen leaves are zeroed.

    With a PowerIterState, spectral norms use `steps` (default 2) warm-started
    power-iteration steps and the state is updated in place; without one they
    are run to verification tolerance.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    _check_weights(m, delta)
    if steps is None:
        steps = 2 if state is not None else VERIFY_POWER_STEPS
    tol = None if state is not None else VERIFY_POWER_TOL
    atoms = list(m.atoms())
    out = []
    for idx, (ls, atom, leaf) in enumerate(zip(compute_scales(m), atoms, delta)):
        if ls.frozen:
            out.append(np.zeros_like(leaf))
            continue
        nrm = _leaf_norm_online(atom, leaf, state, idx, steps, tol)
        out.append(leaf / (ls.scale * (nrm + eps)))
    return WeightVector(out)
