import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.special import ndtr

from modnorm.modules import (
    WeightVector,
    broadcast,
    compose,
    concat,
    forward,
    identity,
    initialize,
    make_atom,
    make_bond,
    module_add,
    module_power,
    module_scalar_mul,
    residual_block,
    tare,
    vjp,
)
from modnorm.norms import atom_norm, compute_scales, modular_norm
from modnorm.tensors import ShapeError


def wv(*arrays):
    return WeightVector(list(arrays))


class TestAtoms:
    def test_linear_identity_square(self):
        lin = make_atom("linear", (3, 3))
        y = forward(lin, wv(np.eye(3)), np.array([1.0, 2.0, 3.0]))
        assert np.array_equal(y, [1.0, 2.0, 3.0])

    def test_linear_tall_scale_factor(self):
        lin = make_atom("linear", (4, 1))
        w = np.array([[1.0], [0.0], [0.0], [0.0]])
        y = forward(lin, wv(w), np.array([1.0]))
        assert np.allclose(y, [2.0, 0.0, 0.0, 0.0])  # sqrt(4/1) = 2

    def test_embed_one_hot_column_lookup(self):
        emb = make_atom("embed", (2, 4))
        e = np.arange(8.0).reshape(4, 2)
        y = forward(emb, wv(e), np.array([1.0, 0.0]))
        assert np.allclose(y, 2.0 * e[:, 0])  # sqrt(d) = 2

    def test_embed_index_path_matches_one_hot(self):
        emb = make_atom("embed", (5, 3))
        e = np.random.default_rng(0).standard_normal((3, 5))
        onehot = np.eye(5)[2]
        assert np.allclose(forward(emb, wv(e), np.array(2)), forward(emb, wv(e), onehot))

    def test_atom_attributes(self):
        for kind, dims in [("linear", (3, 2)), ("embed", (4, 3)), ("conv2d", (2, 3, 3))]:
            a = make_atom(kind, dims)
            assert a.mass == 1.0 and a.sensitivity == 1

    def test_nonpositive_dims_rejected(self):
        with pytest.raises(ValueError):
            make_atom("linear", (0, 2))

    def test_zero_mass_atom_allowed(self):
        assert make_atom("linear", (2, 2), mass=0.0).mass == 0.0


class TestBonds:
    def test_gelu_values(self):
        g = make_bond("gelu")
        assert forward(g, wv(), np.array(0.0)) == 0.0
        assert abs(forward(g, wv(), np.array(1.0)) - ndtr(1.0)) < 1e-12
        assert abs(float(ndtr(1.0)) - 0.8413447460685429) < 1e-12

    def test_mean_subtract(self):
        ms = make_bond("mean_subtract")
        assert np.allclose(forward(ms, wv(), np.array([1.0, 2.0, 3.0])), [-1.0, 0.0, 1.0])

    def test_rms_divide_unit_output(self):
        rd = make_bond("rms_divide")
        y = forward(rd, wv(), np.array([3.0, 4.0]))
        assert abs(np.sqrt(np.mean(y**2)) - 1.0) < 1e-12

    def test_func_attention_single_position_returns_value(self):
        fa = make_bond("func_attention", l=1, d_q=4, d_v=3, mask="causal")
        q = np.ones((1, 4))
        k = np.ones((1, 4))
        v = np.array([[5.0, 6.0, 7.0]])
        assert np.allclose(forward(fa, wv(), (q, k, v)), v)

    def test_func_attention_causal_ignores_future(self):
        fa = make_bond("func_attention", l=3, d_q=2, d_v=2, mask="causal")
        rng = np.random.default_rng(0)
        q, k, v = rng.standard_normal((3, 2)), rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
        base = forward(fa, wv(), (q, k, v))
        k2, v2 = k.copy(), v.copy()
        k2[2] += 10.0
        v2[2] -= 3.0
        bumped = forward(fa, wv(), (q, k2, v2))
        assert np.allclose(base[0], bumped[0]) and np.allclose(base[1], bumped[1])
        assert not np.allclose(base[2], bumped[2])

    def test_sensitivities(self):
        assert make_bond("relu").sensitivity == pytest.approx(1 / math.sqrt(2))
        assert make_bond("gelu").sensitivity == pytest.approx(1 / math.sqrt(2))
        assert make_bond("mul", a=-2.5).sensitivity == 2.5
        for kind in ("identity", "add", "abs", "mean_subtract", "rms_divide",
                     "scaled_relu", "scaled_gelu", "layer_norm"):
            assert float(make_bond(kind).sensitivity) == 1.0
        assert make_bond("func_attention", l=2, d_q=2, d_v=2).sensitivity == 1

    def test_bond_mass_zero(self):
        assert make_bond("abs").mass == 0.0

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            make_bond("func_attention", l=0, d_q=2, d_v=2)
        with pytest.raises(ValueError):
            make_bond("func_attention", l=2, d_q=2, d_v=2, mask="diagonal")


class TestCombinators:
    def test_compose_attributes(self):
        m1 = make_atom("linear", (3, 2))
        m2 = make_atom("linear", (4, 3))
        m = compose(m2, m1)
        assert m.mass == 2.0 and m.sensitivity == 1

    def test_compose_sensitivity_product(self):
        m1 = module_scalar_mul(2.0, make_atom("linear", (3, 3)))
        m2 = module_scalar_mul(3.0, make_atom("linear", (3, 3)))
        assert float(compose(m2, m1).sensitivity) == pytest.approx(6.0)

    def test_compose_shape_mismatch(self):
        with pytest.raises(ShapeError):
            compose(make_atom("linear", (4, 5)), make_atom("linear", (3, 2)))

    def test_compose_norm_unit_masses(self):
        # two unit-mass atoms, unit downstream sensitivity:
        # norm = max(2 ||w1||, 2 ||w2||)
        m = compose(make_atom("linear", (3, 3)), make_atom("linear", (3, 3)))
        w = wv(2.0 * np.eye(3), 0.5 * np.eye(3))
        assert modular_norm(m, w) == pytest.approx(4.0)
        scales = [s.scale for s in compute_scales(m)]
        assert scales == pytest.approx([2.0, 2.0])

    def test_compose_zero_mass_second_drops_term(self):
        frozen = make_atom("linear", (3, 3), mass=0.0)
        m = compose(frozen, make_atom("linear", (3, 3)))
        w = wv(np.eye(3), 100.0 * np.eye(3))
        assert modular_norm(m, w) == pytest.approx(1.0)
        assert compute_scales(m)[1].frozen

    def test_concat_attributes_and_forward(self):
        m1 = make_atom("linear", (3, 2))
        m2 = make_atom("linear", (4, 2))
        m = concat(m1, m2)
        assert m.mass == 2.0 and m.sensitivity == 2
        w = initialize(m, 0)
        x = np.array([1.0, -1.0])
        y = forward(m, w, x)
        assert isinstance(y, tuple) and len(y) == 2
        assert np.array_equal(y[0], forward(m1, wv(w[0]), x))
        assert np.array_equal(y[1], forward(m2, wv(w[1]), x))

    def test_concat_norm_unit_masses(self):
        m = concat(make_atom("linear", (3, 2)), make_atom("linear", (3, 2)))
        assert [s.scale for s in compute_scales(m)] == pytest.approx([2.0, 2.0])

    def test_concat_input_mismatch(self):
        with pytest.raises(ShapeError):
            concat(make_atom("linear", (3, 2)), make_atom("linear", (3, 5)))

    def test_triple_chain_scales(self):
        chain = compose(
            make_atom("linear", (2, 2)),
            compose(make_atom("linear", (2, 2)), make_atom("linear", (2, 2))),
        )
        assert [s.scale for s in compute_scales(chain)] == pytest.approx([3.0, 3.0, 3.0])


class TestArithmetic:
    def test_half_identity_plus_half_module_sensitivity(self):
        m = module_add(
            module_scalar_mul(0.5, identity()),
            module_scalar_mul(0.5, make_atom("linear", (3, 3))),
        )
        assert float(m.sensitivity) == pytest.approx(1.0)

    def test_power_zero_is_identity(self):
        m0 = module_power(make_atom("linear", (3, 3)), 0)
        assert m0.num_atoms == 0 and float(m0.sensitivity) == 1.0
        x = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(forward(m0, wv(), x), x)

    def test_power_negative_rejected(self):
        with pytest.raises(ValueError):
            module_power(make_atom("linear", (2, 2)), -1)

    def test_residual_block_exact_unit_sensitivity_any_depth(self):
        for depth in (1, 2, 3, 7, 64):
            block = residual_block(make_atom("linear", (4, 4)), depth)
            assert block.sensitivity == Fraction(1)

    def test_forward_expansion_matches_by_hand(self):
        m = module_add(
            module_scalar_mul(Fraction(1, 2), identity()),
            module_scalar_mul(Fraction(1, 2), make_atom("linear", (3, 3))),
        )
        w = np.random.default_rng(0).standard_normal((3, 3))
        x = np.random.default_rng(1).standard_normal(3)
        got = forward(m, wv(w), x)
        assert np.allclose(got, 0.5 * x + 0.5 * (w @ x))


class TestTare:
    def test_tare_identity(self):
        m = compose(make_atom("linear", (3, 3)), make_atom("linear", (3, 3)))
        t = tare(m, m.mass)
        assert t.mass == m.mass
        assert [a.mass for a in t.atoms()] == [a.mass for a in m.atoms()]

    def test_tare_proportional(self):
        m = concat(make_atom("linear", (2, 2), mass=1.0), make_atom("linear", (2, 2), mass=3.0))
        t = tare(m, 1.0)
        assert [a.mass for a in t.atoms()] == pytest.approx([0.25, 0.75])
        assert t.mass == pytest.approx(1.0)

    def test_tare_changes_scales_by_mass_ratio(self):
        inner = compose(make_atom("linear", (3, 3)), make_atom("linear", (3, 3)))
        m = compose(make_atom("linear", (3, 3)), inner)
        t = compose(make_atom("linear", (3, 3)), tare(inner, 1.0))
        # untared chain of three unit atoms flattens to [3, 3, 3]; taring the
        # first two to total mass 1 gives root mass 2 and per-atom masses 0.5,
        # so their scales become 2 * (1/0.5) = 4 and the output atom's 2/1 = 2
        s_plain = [s.scale for s in compute_scales(m)]
        s_tared = [s.scale for s in compute_scales(t)]
        assert s_plain == pytest.approx([3.0, 3.0, 3.0])
        assert s_tared == pytest.approx([4.0, 4.0, 2.0])

    def test_tare_zero_mass_rejected(self):
        with pytest.raises(ValueError):
            tare(make_bond("abs"), 1.0)

    def test_tare_returns_new_tree(self):
        m = make_atom("linear", (2, 2))
        assert tare(m, 2.0) is not m and m.mass == 1.0


class TestBroadcast:
    def test_broadcast_rows(self):
        lin = make_atom("linear", (3, 2))
        b = broadcast(lin, 2)
        w = initialize(lin, 0)
        x = np.random.default_rng(0).standard_normal((2, 2))
        y = forward(b, w, x)
        # row-wise application; batched vs single matmul may differ in the
        # last bit, so compare to float precision rather than bitwise
        assert np.allclose(y[0], forward(lin, w, x[0]), atol=1e-15)
        assert np.allclose(y[1], forward(lin, w, x[1]), atol=1e-15)

    def test_broadcast_keeps_attributes(self):
        lin = make_atom("linear", (3, 2))
        b = broadcast(lin, 5)
        assert b.mass == lin.mass and b.sensitivity == lin.sensitivity
        w = wv(np.random.default_rng(1).standard_normal((3, 2)))
        assert modular_norm(b, w) == modular_norm(lin, w)

    def test_broadcast_one_behaves_identically(self):
        lin = make_atom("linear", (3, 3))
        b = broadcast(lin, 1)
        w = initialize(lin, 2)
        x = np.random.default_rng(2).standard_normal(3)
        assert np.array_equal(forward(b, w, x), forward(lin, w, x))

    def test_broadcast_rejects_bad_factor(self):
        with pytest.raises(ValueError):
            broadcast(make_atom("linear", (2, 2)), 0)


class TestEvaluation:
    def test_identity_weight_chain_is_identity(self):
        # square dims make every forward scale factor 1
        m = compose(make_atom("linear", (3, 3)), make_atom("linear", (3, 3)))
        x = np.array([0.5, -1.5, 2.0])
        assert np.allclose(forward(m, wv(np.eye(3), np.eye(3)), x), x)

    def test_forward_deterministic_bitwise(self):
        m = compose(make_atom("linear", (4, 4)), make_atom("linear", (4, 4)))
        w = initialize(m, 3)
        x = np.random.default_rng(3).standard_normal((5, 4))
        assert np.array_equal(forward(m, w, x), forward(m, w, x))

    def test_vjp_identity_linear_passes_cotangent(self):
        lin = make_atom("linear", (3, 3))
        g = np.array([1.0, -2.0, 0.5])
        _, gx = vjp(lin, wv(np.eye(3)), np.zeros(3), g)
        assert np.allclose(gx, g)

    def test_vjp_zero_cotangent_zero_grads(self):
        m = compose(make_atom("linear", (3, 3)), make_atom("linear", (3, 3)))
        w = initialize(m, 0)
        gw, gx = vjp(m, w, np.ones(3), np.zeros(3))
        assert all(np.all(leaf == 0) for leaf in gw) and np.all(gx == 0)

    def test_vjp_structural_mismatch(self):
        lin = make_atom("linear", (3, 2))
        with pytest.raises(ShapeError):
            vjp(lin, wv(np.zeros((3, 2))), np.zeros(2), np.zeros(4))

    def test_initialize_atoms_on_unit_norm(self):
        m = compose(
            make_atom("conv2d", (3, 2, 3)),
            compose(make_atom("conv2d", (2, 2, 2)), make_atom("conv2d", (2, 2, 1))),
        )
        w = initialize(m, 7)
        for atom, leaf in zip(m.atoms(), w):
            assert abs(atom_norm(atom, leaf) - 1.0) < 1e-10

    def test_initialize_deterministic(self):
        m = concat(make_atom("embed", (5, 4)), make_atom("embed", (5, 4)))
        w1, w2 = initialize(m, 11), initialize(m, 11)
        assert all(np.array_equal(a, b) for a, b in zip(w1, w2))
        # distinct leaves get distinct draws
        assert not np.array_equal(w1[0], w1[1])


class TestWeightVector:
    def test_arithmetic(self):
        a = wv(np.ones(2), 2.0 * np.ones(3))
        b = wv(np.ones(2), np.ones(3))
        assert np.array_equal((a + b)[1], 3.0 * np.ones(3))
        assert np.array_equal((a - b)[0], np.zeros(2))
        assert np.array_equal((2.0 * a)[1], 4.0 * np.ones(3))
        assert np.array_equal((a * b)[1], 2.0 * np.ones(3))
        assert (a / b).dot(b) == pytest.approx(2.0 + 6.0)

    def test_structure_mismatch(self):
        with pytest.raises(ShapeError):
            wv(np.ones(2)) + wv(np.ones(3))
