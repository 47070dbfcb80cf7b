"""The module tree: atoms, bonds, and compounds built from composition and
concatenation.

Every node carries a forward function, a mass, a sensitivity, and (through
``norms``) a norm on its weight space. Compound attributes follow fixed rules:
composition multiplies sensitivities, concatenation adds them, and mass always
sums. Backward passes are hand-written per node kind and chained over the
tree, so the differentiation engine stays small and auditable.

Data convention: tensors are row-major float64 arrays; a module's formal
input may acquire extra *leading* axes (context rows, heads, batch), which all
forwards tolerate and treat as an elementwise broadcast. Embedding modules
accept integer index arrays as the runtime encoding of one-hot inputs.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy.special import ndtr

from .tensors import (
    Array,
    ShapeError,
    cross_correlate2d,
    orthogonal_init,
    unit_ball_gaussian_init,
)

NEG_MASKED = -1e30  # additive stand-in for -inf in attention masks

SQRT2 = math.sqrt(2.0)
INV_SQRT2 = 1.0 / math.sqrt(2.0)


# ---------------------------------------------------------------------------
# spaces
# ---------------------------------------------------------------------------

class Space:
    """Formal input/output space of a module.

    kinds: 'vec' (R^d), 'mat' (rows x d, a broadcast of vec), 'hmat'
    (heads x rows x d), 'image' (channels x H x W, H/W may be None meaning
    "any"), 'tuple' (concatenation output). Norms follow the max-over-leading
    convention: extra broadcast axes combine with p = infinity.
    """

    __slots__ = ("kind", "dims", "parts")

    def __init__(self, kind: str, dims: tuple = (), parts: tuple = ()):
        self.kind = kind
        self.dims = tuple(dims)
        self.parts = tuple(parts)

    def __eq__(self, other):
        if not isinstance(other, Space):
            return NotImplemented
        if self.kind != other.kind:
            return False
        if self.kind == "tuple":
            return self.parts == other.parts
        if len(self.dims) != len(other.dims):
            return False
        return all(a is None or b is None or a == b for a, b in zip(self.dims, other.dims))

    def __hash__(self):
        return hash((self.kind, self.dims, self.parts))

    def __repr__(self):
        if self.kind == "tuple":
            return f"tuple({', '.join(map(repr, self.parts))})"
        return f"{self.kind}{self.dims}"

    # number of trailing axes one element of the underlying space occupies
    @property
    def reduce_ndim(self) -> int:
        return {"vec": 1, "mat": 1, "hmat": 1, "image": 3}[self.kind]

    def broadcast(self, h: int) -> "Space":
        if self.kind == "vec":
            return Space("mat", (h, self.dims[0]))
        if self.kind == "mat":
            return Space("hmat", (h,) + self.dims)
        if self.kind == "tuple":
            return Space("tuple", parts=tuple(p.broadcast(h) for p in self.parts))
        raise ShapeError(f"cannot broadcast space {self!r}")

    def norm(self, x) -> float:
        """Probe norm of a data value in this space; leading broadcast/batch
        axes combine by max (p = infinity)."""
        if self.kind == "tuple":
            return float(sum(p.norm(xi) for p, xi in zip(self.parts, x)))
        x = np.asarray(x, dtype=np.float64)
        if self.kind in ("vec", "mat", "hmat"):
            per_row = np.sqrt(np.mean(np.square(x), axis=-1))
            return float(np.max(per_row))
        if self.kind == "image":
            flat = x.reshape(x.shape[:-3] + (-1,))
            per_img = np.sqrt(np.mean(np.square(flat), axis=-1))
            return float(np.max(per_img))
        raise ShapeError(f"space {self!r} carries no norm")


def vec(d: int) -> Space:
    return Space("vec", (d,))


def mat(rows: int, d: int) -> Space:
    return Space("mat", (rows, d))


def hmat(h: int, rows: int, d: int) -> Space:
    return Space("hmat", (h, rows, d))


def image(c: int, h=None, w=None) -> Space:
    return Space("image", (c, h, w))


def tuple_space(*parts: Space) -> Space:
    flat = []
    for p in parts:
        flat.extend(p.parts if p.kind == "tuple" else (p,))
    return Space("tuple", parts=tuple(flat))


def space_parts(s: Space) -> tuple:
    return s.parts if s.kind == "tuple" else (s,)


def value_parts(y) -> tuple:
    return tuple(y) if isinstance(y, tuple) else (y,)


def _merge_spaces(a: Space, b: Space) -> Space:
    """Fill wildcard dims of `a` from `b` (assumes a == b)."""
    if a.kind == "tuple":
        return Space("tuple", parts=tuple(_merge_spaces(p, q) for p, q in zip(a.parts, b.parts)))
    dims = tuple(x if x is not None else y for x, y in zip(a.dims, b.dims))
    return Space(a.kind, dims)


# ---------------------------------------------------------------------------
# nodes
# ---------------------------------------------------------------------------

class ModuleNode:
    """Immutable node of the module tree. Do not mutate after construction."""

    kind = "abstract"

    def __init__(self, mass, sensitivity, in_space, out_space, children=()):
        self.mass = float(mass)
        self.sensitivity = sensitivity  # int | float | Fraction
        self.in_space = in_space
        self.out_space = out_space
        self.children = tuple(children)
        self.num_atoms = sum(c.num_atoms for c in children)

    # -- structure ----------------------------------------------------------

    def atoms(self):
        """Atoms in depth-first order, one yield per occurrence."""
        for c in self.children:
            yield from c.atoms()

    @property
    def out_arity(self) -> int:
        if self.out_space is not None and self.out_space.kind == "tuple":
            return len(self.out_space.parts)
        return 1

    def _bind(self, in_space: Space) -> "ModuleNode":
        raise ShapeError(f"{self.kind} module cannot be re-bound to {in_space!r}")

    def _bind_out(self, out_space: Space) -> "ModuleNode":
        raise ShapeError(f"{self.kind} module cannot infer its input from {out_space!r}")

    def _with_mass_ratio(self, ratio: float) -> "ModuleNode":
        raise NotImplementedError

    # -- evaluation ---------------------------------------------------------

    def forward(self, w: list, x):
        y, _ = self._fwd(w, x, False)
        return y

    def _fwd(self, w: list, x, want_tape: bool):
        raise NotImplementedError

    def _bwd(self, w: list, x, tape, g):
        raise NotImplementedError

    def __repr__(self):
        return f"<{self.kind} mass={self.mass:g} sensitivity={float(self.sensitivity):g}>"


def _add_grad(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


class Atom(ModuleNode):
    """Weight-carrying leaf: linear, embed, or conv2d."""

    def __init__(self, atom_kind: str, dims: tuple, mass: float, in_space, out_space):
        super().__init__(mass, 1, in_space, out_space)
        self.kind = atom_kind
        self.dims = dims
        self.num_atoms = 1
        if atom_kind == "linear":
            d_out, d_in = dims
            self.weight_shape = (d_out, d_in)
            self.fwd_scale = math.sqrt(d_out / d_in)
        elif atom_kind == "embed":
            n, d = dims
            self.weight_shape = (d, n)
            self.fwd_scale = math.sqrt(d)
        elif atom_kind == "conv2d":
            d_out, d_in, k = dims
            self.weight_shape = (d_out, d_in, k, k)
            self.fwd_scale = math.sqrt(d_out / d_in) / (k * k)
        else:
            raise ValueError(f"unknown atom kind {atom_kind!r}")

    def atoms(self):
        yield self

    def _with_mass_ratio(self, ratio):
        return Atom(self.kind, self.dims, self.mass * ratio, self.in_space, self.out_space)

    def init_weight(self, seed_parts: list) -> Array:
        if self.kind == "linear":
            return orthogonal_init(self.dims[0], self.dims[1], seed_parts)
        if self.kind == "embed":
            return unit_ball_gaussian_init(self.dims[0], self.dims[1], seed_parts)
        d_out, d_in, k = self.dims
        c = np.empty(self.weight_shape)
        for i in range(k):
            for j in range(k):
                c[:, :, i, j] = orthogonal_init(d_out, d_in, seed_parts + [i, j])
        return c

    def _fwd(self, w, x, want_tape):
        (wt,) = w
        if self.kind == "linear":
            return self.fwd_scale * (x @ wt.T), None
        if self.kind == "embed":
            if np.issubdtype(np.asarray(x).dtype, np.integer):
                return self.fwd_scale * wt.T[x], None
            return self.fwd_scale * (x @ wt.T), None
        return self.fwd_scale * cross_correlate2d(wt, x), None

    def _bwd(self, w, x, tape, g):
        (wt,) = w
        s = self.fwd_scale
        if self.kind == "linear":
            g2 = g.reshape(-1, g.shape[-1])
            x2 = x.reshape(-1, x.shape[-1])
            return [s * (g2.T @ x2)], s * (g @ wt)
        if self.kind == "embed":
            if np.issubdtype(np.asarray(x).dtype, np.integer):
                gw_t = np.zeros((wt.shape[1], wt.shape[0]))
                np.add.at(gw_t, np.asarray(x).reshape(-1), s * g.reshape(-1, g.shape[-1]))
                return [gw_t.T], None
            g2 = g.reshape(-1, g.shape[-1])
            x2 = x.reshape(-1, x.shape[-1])
            return [s * (g2.T @ x2)], s * (g @ wt)
        return self._bwd_conv(wt, x, g)

    def _bwd_conv(self, wt, x, g):
        d_out, d_in, k = self.dims
        s = self.fwd_scale
        lead = x.shape[:-3]
        h, w_ = x.shape[-2], x.shape[-1]
        xb = x.reshape((-1, d_in, h, w_))
        gb = g.reshape((-1, d_out, h, w_))
        lo, hi = (k - 1) // 2, k - 1 - (k - 1) // 2
        xp = np.pad(xb, ((0, 0), (0, 0), (lo, hi), (lo, hi)))
        gw = np.empty(self.weight_shape)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                sl = xp[:, :, i : i + h, j : j + w_]
                gw[:, :, i, j] = s * np.einsum("bohw,bchw->oc", gb, sl)
                gxp[:, :, i : i + h, j : j + w_] += s * np.einsum(
                    "oc,bohw->bchw", wt[:, :, i, j], gb
                )
        gx = gxp[:, :, lo : lo + h, lo : lo + w_]
        return [gw], gx.reshape(lead + (d_in, h, w_))


def _softmax_last(s: Array) -> Array:
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=-1, keepdims=True)


class Bond(ModuleNode):
    """Weightless glue node. Generic bonds (no declared space) bind their
    spaces when composed or concatenated with a concrete neighbor."""

    SHAPE_PRESERVING = {
        "identity", "mul", "abs", "relu", "scaled_relu", "gelu", "scaled_gelu",
        "mean_subtract", "rms_divide",
    }

    def __init__(self, bond_kind: str, params: dict, sensitivity, in_space=None, out_space=None):
        super().__init__(0.0, sensitivity, in_space, out_space)
        self.kind = bond_kind
        self.params = dict(params)

    def _with_mass_ratio(self, ratio):
        return self

    def _bind(self, in_space: Space) -> "Bond":
        if self.in_space is not None:
            if self.in_space != in_space:
                raise ShapeError(f"{self.kind} bond is bound to {self.in_space!r}, not {in_space!r}")
            in_space = _merge_spaces(self.in_space, in_space)
        out = self._infer_out(in_space)
        return Bond(self.kind, self.params, self.sensitivity, in_space, out)

    def _bind_out(self, out_space: Space) -> "Bond":
        if self.kind in self.SHAPE_PRESERVING:
            return self._bind(out_space)
        if self.kind == "add_heads":
            h = self.params["h"]
            if out_space.kind != "hmat" or out_space.dims[0] != h:
                raise ShapeError(f"add_heads({h}) cannot produce {out_space!r}")
            return self._bind(mat(out_space.dims[1], h * out_space.dims[2]))
        if self.kind == "remove_heads":
            h = self.params["h"]
            if out_space.kind != "mat" or out_space.dims[1] is None or out_space.dims[1] % h != 0:
                raise ShapeError(f"remove_heads({h}) cannot produce {out_space!r}")
            return self._bind(hmat(h, out_space.dims[0], out_space.dims[1] // h))
        raise ShapeError(f"{self.kind} bond cannot infer its input from {out_space!r}")

    def _infer_out(self, s: Space) -> Space:
        k = self.kind
        if k in self.SHAPE_PRESERVING:
            return s
        if k == "add":
            parts = space_parts(s)
            if len(parts) != 2 or parts[0] != parts[1]:
                raise ShapeError(f"add expects a pair of equal spaces, got {s!r}")
            return _merge_spaces(parts[0], parts[1])
        if k == "positions":
            if s.kind != "mat":
                raise ShapeError(f"positions expects a sequence space, got {s!r}")
            return Space("mat", (s.dims[0], s.dims[0]))
        if k == "avg_pool":
            if s.kind != "image":
                raise ShapeError(f"avg_pool expects an image space, got {s!r}")
            return image(s.dims[0], 1, 1)
        if k == "flatten":
            if s.kind != "image" or any(d is None for d in s.dims):
                raise ShapeError(f"flatten needs a concrete image space, got {s!r}")
            return vec(int(np.prod(s.dims)))
        if k == "add_heads":
            h = self.params["h"]
            if s.kind != "mat" or s.dims[1] is None or s.dims[1] % h != 0:
                raise ShapeError(f"add_heads({h}) cannot split space {s!r}")
            return hmat(h, s.dims[0], s.dims[1] // h)
        if k == "remove_heads":
            h = self.params["h"]
            if s.kind != "hmat" or s.dims[0] != h:
                raise ShapeError(f"remove_heads({h}) expects {h}-head input, got {s!r}")
            return mat(s.dims[1], s.dims[0] * s.dims[2])
        raise ShapeError(f"cannot infer output space for bond {self.kind!r}")

    # -- forward/backward per kind -------------------------------------------

    def _rd(self) -> int:
        return self.in_space.reduce_ndim if self.in_space is not None else 1

    def _fwd(self, w, x, want_tape):
        k = self.kind
        if k == "identity":
            return x, None
        if k == "mul":
            a = float(self.params["a"])
            return (x if a == 1.0 else a * x), None
        if k == "add":
            return x[0] + x[1], None
        if k == "abs":
            return np.abs(x), None
        if k == "relu":
            return np.maximum(x, 0.0), None
        if k == "scaled_relu":
            return SQRT2 * np.maximum(x, 0.0), None
        if k == "gelu":
            return x * ndtr(x), None
        if k == "scaled_gelu":
            return SQRT2 * x * ndtr(x), None
        if k == "mean_subtract":
            axes = tuple(range(-self._rd(), 0))
            return x - x.mean(axis=axes, keepdims=True), None
        if k == "rms_divide":
            axes = tuple(range(-self._rd(), 0))
            r = np.sqrt(np.mean(np.square(x), axis=axes, keepdims=True))
            safe = np.where(r == 0, 1.0, r)
            return np.where(r == 0, 0.0, x / safe), None
        if k == "func_attention":
            q, kk, v = x
            a = _softmax_last(q @ np.swapaxes(kk, -1, -2) / self.params["d_q"] + self.mask)
            return a @ v, (a if want_tape else None)
        if k == "avg_pool":
            return x.mean(axis=(-2, -1), keepdims=True), None
        if k == "flatten":
            rd = self._rd()
            return x.reshape(x.shape[:-rd] + (-1,)), None
        if k == "positions":
            x = np.asarray(x)
            ln = x.shape[-1]
            return np.broadcast_to(np.arange(ln), x.shape).copy(), None
        if k == "add_heads":
            h = self.params["h"]
            y = x.reshape(x.shape[:-1] + (h, x.shape[-1] // h))
            return np.moveaxis(y, -2, -3), None
        if k == "remove_heads":
            y = np.moveaxis(x, -3, -2)
            return y.reshape(y.shape[:-2] + (-1,)), None
        raise ValueError(f"unknown bond kind {k!r}")

    @property
    def mask(self) -> Array:
        ln = self.params["l"]
        if self.params["mask"] == "causal":
            m = np.zeros((ln, ln))
            m[np.triu_indices(ln, 1)] = NEG_MASKED
            return m
        return np.zeros((ln, ln))

    def _bwd(self, w, x, tape, g):
        k = self.kind
        if k == "identity":
            return [], g
        if k == "mul":
            return [], float(self.params["a"]) * g
        if k == "add":
            return [], (g, g)
        if k == "abs":
            return [], np.sign(x) * g
        if k == "relu":
            return [], (x > 0) * g
        if k == "scaled_relu":
            return [], SQRT2 * (x > 0) * g
        if k in ("gelu", "scaled_gelu"):
            phi = np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)
            d = ndtr(x) + x * phi
            return [], (SQRT2 if k == "scaled_gelu" else 1.0) * d * g
        if k == "mean_subtract":
            axes = tuple(range(-self._rd(), 0))
            return [], g - g.mean(axis=axes, keepdims=True)
        if k == "rms_divide":
            axes = tuple(range(-self._rd(), 0))
            n = np.prod([x.shape[a] for a in axes])
            r = np.sqrt(np.mean(np.square(x), axis=axes, keepdims=True))
            safe = np.where(r == 0, 1.0, r)
            dot = np.sum(g * x, axis=axes, keepdims=True)
            gx = g / safe - x * dot / (n * safe**3)
            return [], np.where(r == 0, 0.0, gx)
        if k == "func_attention":
            return self._bwd_attention(x, tape, g)
        if k == "avg_pool":
            hw = x.shape[-2] * x.shape[-1]
            return [], np.broadcast_to(g / hw, x.shape).copy()
        if k == "flatten":
            return [], g.reshape(x.shape)
        if k == "positions":
            return [], None
        if k == "add_heads":
            y = np.moveaxis(g, -3, -2)
            return [], y.reshape(x.shape)
        if k == "remove_heads":
            h = self.params["h"]
            y = g.reshape(g.shape[:-1] + (h, g.shape[-1] // h))
            return [], np.moveaxis(y, -2, -3)
        raise ValueError(f"unknown bond kind {k!r}")

    def _bwd_attention(self, x, tape, g):
        q, kk, v = x
        d_q = self.params["d_q"]
        a = tape
        if a is None:
            a = _softmax_last(q @ np.swapaxes(kk, -1, -2) / d_q + self.mask)
        gv = np.swapaxes(a, -1, -2) @ g
        ga = g @ np.swapaxes(v, -1, -2)
        gs = a * (ga - np.sum(ga * a, axis=-1, keepdims=True))
        gq = gs @ kk / d_q
        gk = np.swapaxes(gs, -1, -2) @ q / d_q
        return [], (gq, gk, gv)


class Compose(ModuleNode):
    """Serial combination: the second module consumes the first's output."""

    kind = "compose"

    def __init__(self, second: ModuleNode, first: ModuleNode):
        if first.out_space is None and second.in_space is not None:
            first = first._bind_out(second.in_space)
        if first.out_space is not None:
            if second.in_space is None:
                second = second._bind(first.out_space)
            elif second.in_space != first.out_space:
                raise ShapeError(
                    f"cannot compose: first module outputs {first.out_space!r}, "
                    f"second expects {second.in_space!r}"
                )
        super().__init__(
            first.mass + second.mass,
            first.sensitivity * second.sensitivity,
            first.in_space,
            second.out_space,
            (first, second),
        )

    @property
    def first(self):
        return self.children[0]

    @property
    def second(self):
        return self.children[1]

    def _bind(self, in_space):
        return Compose(self.second, self.first._bind(in_space))

    def _bind_out(self, out_space):
        second = self.second._bind_out(out_space)
        return Compose(second, self.first._bind_out(second.in_space))

    def _with_mass_ratio(self, ratio):
        return Compose(self.second._with_mass_ratio(ratio), self.first._with_mass_ratio(ratio))

    def _fwd(self, w, x, want_tape):
        n1 = self.first.num_atoms
        y1, t1 = self.first._fwd(w[:n1], x, want_tape)
        y, t2 = self.second._fwd(w[n1:], y1, want_tape)
        return y, ((t1, y1, t2) if want_tape else None)

    def _bwd(self, w, x, tape, g):
        n1 = self.first.num_atoms
        if tape is None:
            y1, t1 = self.first._fwd(w[:n1], x, True)
            t2 = None
        else:
            t1, y1, t2 = tape
        gw2, gy1 = self.second._bwd(w[n1:], y1, t2, g)
        gw1, gx = self.first._bwd(w[:n1], x, t1, gy1)
        return gw1 + gw2, gx


class Concat(ModuleNode):
    """Parallel combination: both modules consume the same input; the output
    is the flattened tuple of their outputs."""

    kind = "concat"

    def __init__(self, first: ModuleNode, second: ModuleNode):
        if first.in_space is None and second.in_space is not None:
            first = first._bind(second.in_space)
        if second.in_space is None and first.in_space is not None:
            second = second._bind(first.in_space)
        if first.in_space != second.in_space:
            raise ShapeError(
                f"cannot concatenate: input spaces {first.in_space!r} and "
                f"{second.in_space!r} differ"
            )
        out = None
        if first.out_space is not None and second.out_space is not None:
            out = tuple_space(first.out_space, second.out_space)
        super().__init__(
            first.mass + second.mass,
            first.sensitivity + second.sensitivity,
            first.in_space,
            out,
            (first, second),
        )

    def _bind(self, in_space):
        return Concat(self.children[0]._bind(in_space), self.children[1]._bind(in_space))

    def _with_mass_ratio(self, ratio):
        return Concat(
            self.children[0]._with_mass_ratio(ratio), self.children[1]._with_mass_ratio(ratio)
        )

    def _fwd(self, w, x, want_tape):
        c1, c2 = self.children
        n1 = c1.num_atoms
        y1, t1 = c1._fwd(w[:n1], x, want_tape)
        y2, t2 = c2._fwd(w[n1:], x, want_tape)
        return value_parts(y1) + value_parts(y2), ((t1, t2) if want_tape else None)

    def _bwd(self, w, x, tape, g):
        c1, c2 = self.children
        n1 = c1.num_atoms
        t1, t2 = tape if tape is not None else (None, None)
        a1 = c1.out_arity
        g1 = g[0] if a1 == 1 else tuple(g[:a1])
        g2 = g[a1] if c2.out_arity == 1 else tuple(g[a1:])
        gw1, gx1 = c1._bwd(w[:n1], x, t1, g1)
        gw2, gx2 = c2._bwd(w[n1:], x, t2, g2)
        return gw1 + gw2, _add_grad(gx1, gx2)


class Broadcast(ModuleNode):
    """Extends a module's forward over a Cartesian power of its input space.
    Weights, mass, sensitivity, and norm are untouched; only the formal
    spaces change. Runtime forwards already tolerate the extra leading axis."""

    kind = "broadcast"

    def __init__(self, child: ModuleNode, h: int):
        if h < 1:
            raise ValueError(f"broadcast factor must be >= 1, got {h}")
        if child.in_space is None or child.out_space is None:
            raise ShapeError("cannot broadcast a module with unbound spaces")
        super().__init__(
            child.mass,
            child.sensitivity,
            child.in_space.broadcast(h),
            child.out_space.broadcast(h),
            (child,),
        )
        self.factor = h

    def _with_mass_ratio(self, ratio):
        return Broadcast(self.children[0]._with_mass_ratio(ratio), self.factor)

    def _fwd(self, w, x, want_tape):
        return self.children[0]._fwd(w, x, want_tape)

    def _bwd(self, w, x, tape, g):
        return self.children[0]._bwd(w, x, tape, g)


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def make_atom(kind: str, dims, mass: float = 1.0) -> Atom:
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims):
        raise ValueError(f"{kind} atom dims must be positive, got {dims}")
    if mass < 0:
        raise ValueError("atom mass must be nonnegative")
    if kind == "linear":
        d_out, d_in = dims
        return Atom("linear", dims, mass, vec(d_in), vec(d_out))
    if kind == "embed":
        n, d = dims
        return Atom("embed", dims, mass, vec(n), vec(d))
    if kind == "conv2d":
        d_out, d_in, _ = dims
        return Atom("conv2d", dims, mass, image(d_in), image(d_out))
    raise ValueError(f"unknown atom kind {kind!r}")


_BOND_SENSITIVITY = {
    "identity": 1,
    "add": 1,
    "abs": 1,
    "relu": INV_SQRT2,
    "scaled_relu": 1,
    "gelu": INV_SQRT2,
    "scaled_gelu": 1,
    "mean_subtract": 1,
    "rms_divide": 1,
    "func_attention": 1,
    "avg_pool": 1,
    "flatten": 1,
    "positions": 1,
    "add_heads": 1,
    "remove_heads": 1,
}


def make_bond(kind: str, **params) -> ModuleNode:
    if kind == "mul":
        a = params["a"]
        return Bond("mul", {"a": a}, abs(a))
    if kind == "layer_norm":
        return Compose(make_bond("rms_divide"), make_bond("mean_subtract"))
    if kind == "func_attention":
        ln, d_q, d_v = int(params["l"]), int(params["d_q"]), int(params["d_v"])
        mask = params.get("mask", "causal")
        if min(ln, d_q, d_v) < 1:
            raise ValueError(f"func_attention dims must be positive, got {(ln, d_q, d_v)}")
        if mask not in ("causal", "zero"):
            raise ValueError(f"unknown mask kind {mask!r}")
        in_space = tuple_space(mat(ln, d_q), mat(ln, d_q), mat(ln, d_v))
        return Bond(
            "func_attention",
            {"l": ln, "d_q": d_q, "d_v": d_v, "mask": mask},
            1,
            in_space,
            mat(ln, d_v),
        )
    if kind in ("add_heads", "remove_heads"):
        h = int(params["h"])
        if h < 1:
            raise ValueError(f"{kind} needs h >= 1, got {h}")
        return Bond(kind, {"h": h}, 1)
    if kind == "positions" and params:
        ln, n = int(params["l"]), int(params["n"])
        if min(ln, n) < 1:
            raise ValueError(f"positions dims must be positive, got {(ln, n)}")
        return Bond("positions", {}, 1, mat(ln, n), mat(ln, ln))
    if kind in _BOND_SENSITIVITY:
        return Bond(kind, {}, _BOND_SENSITIVITY[kind])
    raise ValueError(f"unknown bond kind {kind!r}")


def identity() -> Bond:
    return Bond("mul", {"a": 1}, 1)


def compose(second: ModuleNode, first: ModuleNode) -> Compose:
    """second . first — `first` is applied to the input, `second` to its output."""
    return Compose(second, first)


def concat(first: ModuleNode, second: ModuleNode) -> Concat:
    return Concat(first, second)


def module_add(m1: ModuleNode, m2: ModuleNode) -> ModuleNode:
    return compose(make_bond("add"), concat(m1, m2))


def module_scalar_mul(a, m: ModuleNode) -> ModuleNode:
    return compose(make_bond("mul", a=a), m)


def module_power(m: ModuleNode, exponent: int) -> ModuleNode:
    if exponent < 0:
        raise ValueError("module power requires a nonnegative exponent")
    if exponent == 0:
        return identity()
    out = m
    for _ in range(exponent - 1):
        out = compose(m, out)
    return out


def residual_block(m: ModuleNode, depth: int) -> ModuleNode:
    """(depth-1)/depth * Identity + 1/depth * m, with exact rational mixing
    coefficients so the block sensitivity is exactly 1."""
    a = Fraction(depth - 1, depth)
    b = Fraction(1, depth)
    return module_add(module_scalar_mul(a, identity()), module_scalar_mul(b, m))


def residual_stack(m: ModuleNode, depth: int) -> ModuleNode:
    return module_power(residual_block(m, depth), depth)


def tare(m: ModuleNode, m_new: float) -> ModuleNode:
    """Reset the tree's total mass to m_new, rescaling every descendant
    proportionally."""
    if m_new <= 0:
        raise ValueError("tare target mass must be positive")
    if m.mass == 0:
        raise ValueError("cannot tare a zero-mass module")
    return m._with_mass_ratio(m_new / m.mass)


def broadcast(m: ModuleNode, h: int) -> ModuleNode:
    return Broadcast(m, h)


# ---------------------------------------------------------------------------
# weight vectors and evaluation
# ---------------------------------------------------------------------------

class WeightVector:
    """Ordered list of weight tensors, one per atom in depth-first order."""

    __slots__ = ("leaves",)

    def __init__(self, leaves):
        self.leaves = [np.asarray(t, dtype=np.float64) for t in leaves]

    def _check(self, other: "WeightVector"):
        if len(self.leaves) != len(other.leaves) or any(
            a.shape != b.shape for a, b in zip(self.leaves, other.leaves)
        ):
            raise ShapeError("weight vectors have different sub-structure")

    def __len__(self):
        return len(self.leaves)

    def __iter__(self):
        return iter(self.leaves)

    def __getitem__(self, i):
        return self.leaves[i]

    def __add__(self, other):
        self._check(other)
        return WeightVector([a + b for a, b in zip(self.leaves, other.leaves)])

    def __sub__(self, other):
        self._check(other)
        return WeightVector([a - b for a, b in zip(self.leaves, other.leaves)])

    def __mul__(self, other):
        if isinstance(other, WeightVector):
            self._check(other)
            return WeightVector([a * b for a, b in zip(self.leaves, other.leaves)])
        return WeightVector([float(other) * a for a in self.leaves])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, WeightVector):
            self._check(other)
            return WeightVector([a / b for a, b in zip(self.leaves, other.leaves)])
        return WeightVector([a / float(other) for a in self.leaves])

    def map(self, fn):
        return WeightVector([fn(a) for a in self.leaves])

    def sqrt(self):
        return self.map(np.sqrt)

    def shift(self, c: float):
        return self.map(lambda a: a + c)

    def dot(self, other: "WeightVector") -> float:
        self._check(other)
        return float(sum(np.sum(a * b) for a, b in zip(self.leaves, other.leaves)))

    def copy(self):
        return WeightVector([a.copy() for a in self.leaves])

    def zeros_like(self):
        return WeightVector([np.zeros_like(a) for a in self.leaves])

    def allfinite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.leaves)


def _check_weights(m: ModuleNode, w: WeightVector):
    shapes = [a.weight_shape for a in m.atoms()]
    if len(w.leaves) != len(shapes):
        raise ShapeError(f"module has {len(shapes)} atoms but weight vector has {len(w.leaves)}")
    for i, (leaf, shape) in enumerate(zip(w.leaves, shapes)):
        if leaf.shape != shape:
            raise ShapeError(f"weight leaf {i} has shape {leaf.shape}, atom expects {shape}")


def forward(m: ModuleNode, w: WeightVector, x):
    _check_weights(m, w)
    return m.forward(list(w.leaves), x)


def vjp(m: ModuleNode, w: WeightVector, x, cotangent):
    """Pull a cotangent on the output back to (weight gradient, input gradient)."""
    _check_weights(m, w)
    y, tape = m._fwd(list(w.leaves), x, True)
    _check_cotangent(y, cotangent)
    gw, gx = m._bwd(list(w.leaves), x, tape, cotangent)
    return WeightVector(gw), gx


def _check_cotangent(y, g):
    if isinstance(y, tuple) != isinstance(g, tuple):
        raise ShapeError("cotangent arity does not match module output")
    ys = y if isinstance(y, tuple) else (y,)
    gs = g if isinstance(g, tuple) else (g,)
    if len(ys) != len(gs) or any(np.shape(a) != np.shape(b) for a, b in zip(ys, gs)):
        raise ShapeError(
            f"cotangent shapes {[np.shape(b) for b in gs]} do not match output "
            f"shapes {[np.shape(a) for a in ys]}"
        )


def initialize(m: ModuleNode, seed: int) -> WeightVector:
    """Deterministic per-atom init: orthogonal for linear/conv2d (conv kernels
    slice-wise), Gaussian columns projected to the unit sphere for embed."""
    return WeightVector([a.init_weight([seed, i]) for i, a in enumerate(m.atoms())])
