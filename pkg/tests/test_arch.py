import math
from fractions import Fraction

import numpy as np
import pytest

from modnorm.arch import (
    ArchSpec,
    build_architecture,
    gpt,
    loss_and_grad,
    loss_eval,
    multi_head_attention,
    res_mlp,
    res_net,
)
from modnorm.modules import forward, initialize
from modnorm.norms import atom_norm, compute_scales, modular_norm
from modnorm.sharpness import tree_sharpness


class TestResMLP:
    def test_mass_and_sensitivity(self):
        spec = ArchSpec(width=16, depth=3, block_depth=2, d_in=8, d_out=5, block_mass=0.5)
        tree = res_mlp(spec)
        assert tree.mass == pytest.approx(2.5)
        assert float(tree.sensitivity) == pytest.approx(1.0)

    def test_leaf_count(self):
        spec = ArchSpec(width=16, depth=3, block_depth=2, d_in=8, d_out=5)
        assert len(list(res_mlp(spec).atoms())) == 2 + 3 * 2

    def test_signal_propagation_at_init(self):
        # frozen from a measured run: block outputs decay geometrically toward
        # the centered-rectified floor but never blow up or vanish
        spec = ArchSpec(width=32, depth=4, block_depth=1, d_in=16, d_out=10)
        tree = res_mlp(spec)
        w = initialize(tree, 0)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((8, 16))
        x /= np.sqrt(np.mean(x**2, axis=-1, keepdims=True))
        inner = tree.children[0]
        in_lin, hidden = inner.children
        h = in_lin.forward([w[0]], x)
        rms = [float(np.sqrt(np.mean(h**2)))]

        def blocks(node, nb):
            if node.num_atoms > nb:
                yield from blocks(node.children[0], nb)
                yield node.children[1]
            else:
                yield node

        leaves = list(w)[1:-1]
        i = 0
        for b in blocks(hidden, 1):
            h = b.forward(leaves[i : i + b.num_atoms], h)
            i += b.num_atoms
            rms.append(float(np.sqrt(np.mean(h**2))))
        assert rms[0] == pytest.approx(1.0, abs=1e-12)  # orthogonal input layer
        assert rms == pytest.approx([1.0, 0.784, 0.600, 0.456, 0.384], abs=0.02)
        assert all(0.3 < r <= 1.001 for r in rms)

    def test_atoms_well_normed_at_init(self):
        spec = ArchSpec(width=12, depth=2, block_depth=1, d_in=6, d_out=4)
        tree = res_mlp(spec)
        w = initialize(tree, 3)
        for atom, leaf in zip(tree.atoms(), w):
            assert atom_norm(atom, leaf) == pytest.approx(1.0, abs=1e-10)

    def test_norm_at_init_equals_max_scale(self):
        spec = ArchSpec(width=12, depth=2, block_depth=1, d_in=6, d_out=4)
        tree = res_mlp(spec)
        w = initialize(tree, 5)
        scales = [s.scale for s in compute_scales(tree)]
        assert modular_norm(tree, w) == pytest.approx(max(scales), rel=1e-10)


class TestResNet:
    def test_structure(self):
        spec = ArchSpec(family="resnet", width=8, depth=2, block_depth=2, kernel=3,
                        d_in=3, d_out=10, block_mass=2.0)
        tree = res_net(spec)
        assert len(list(tree.atoms())) == 2 + 2 * 2
        assert float(tree.sensitivity) == pytest.approx(1.0)
        assert tree.mass == pytest.approx(4.0)

    def test_forward_image_to_logits(self):
        spec = ArchSpec(family="resnet", width=8, depth=1, block_depth=1, kernel=3,
                        d_in=3, d_out=10)
        tree = res_net(spec)
        x = np.random.default_rng(0).standard_normal((3, 32, 32))
        y = forward(tree, initialize(tree, 0), x)
        assert y.shape == (10,)
        batched = forward(tree, initialize(tree, 0), np.stack([x, x]))
        assert batched.shape == (2, 10)


class TestAttention:
    def test_unit_sensitivity_and_mass(self):
        m = multi_head_attention(8, 2, 6)
        assert float(m.sensitivity) == pytest.approx(1.0)
        assert m.mass == 4.0
        assert len(list(m.atoms())) == 4

    def test_single_head_matches_multi_head_shapes(self):
        for h in (1, 2, 4):
            m = multi_head_attention(8, h, 5)
            y = forward(m, initialize(m, 0), np.random.default_rng(0).standard_normal((5, 8)))
            assert y.shape == (5, 8)


class TestGPT:
    def spec(self, depth=2):
        return ArchSpec(family="gpt", width=12, depth=depth, heads=3, context=6,
                        vocab=11, block_mass=5.0, d_out=11)

    def test_block_sensitivity_exact(self):
        tree = gpt(self.spec())
        assert tree.sensitivity == Fraction(1)  # exact rational bookkeeping

    def test_mass_after_tare(self):
        tree = gpt(self.spec())
        assert tree.mass == pytest.approx(2.0 + 5.0)

    def test_input_layer_mass_one(self):
        tree = gpt(self.spec())
        # input layer = first-applied module of the outer chain
        input_layer = tree.children[0].children[0]
        assert input_layer.mass == pytest.approx(1.0)

    def test_token_sequence_to_logits(self):
        tree = gpt(self.spec())
        toks = np.arange(6) % 11
        logits = forward(tree, initialize(tree, 1), toks)
        assert logits.shape == (6, 11)

    def test_causal_masking(self):
        tree = gpt(self.spec(depth=1))
        w = initialize(tree, 2)
        toks = np.arange(6) % 11
        base = forward(tree, w, toks)
        bumped = toks.copy()
        bumped[-1] = (bumped[-1] + 3) % 11
        got = forward(tree, w, bumped)
        assert np.allclose(base[:-1], got[:-1])
        assert not np.allclose(base[-1], got[-1])

    def test_heads_must_divide_width(self):
        with pytest.raises(ValueError):
            ArchSpec(family="gpt", width=10, heads=3)

    def test_tree_sharpness_and_scales_apply(self):
        tree = gpt(self.spec(depth=1))
        triple = tree_sharpness(tree)
        assert all(math.isfinite(v) for v in triple.as_tuple())
        scales = compute_scales(tree)
        assert len(scales) == len(list(tree.atoms()))
        assert all(s.frozen or s.scale > 0 for s in scales)


class TestLosses:
    def test_square_zero_logits(self):
        assert loss_eval("square", np.zeros((3, 7)), np.array([0, 3, 6])) == pytest.approx(0.5)

    def test_square_exact_hit(self):
        d = 5
        y = math.sqrt(d) * np.eye(d)[2]
        assert loss_eval("square", y[None], np.array([2])) == pytest.approx(0.0)

    def test_cross_entropy_uniform(self):
        assert loss_eval("cross_entropy", np.zeros((4, 10)), np.zeros(4, dtype=int)) == \
            pytest.approx(math.log(10))

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            loss_eval("cross_entropy", np.zeros((2, 3)), np.array([0, 3]))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal((4, 6))
        t = rng.integers(0, 6, 4)
        for kind in ("square", "cross_entropy"):
            loss, grad = loss_and_grad(kind, y, t)
            d = rng.standard_normal(y.shape)
            eps = 1e-6
            num = (loss_eval(kind, y + eps * d, t) - loss_eval(kind, y - eps * d, t)) / (2 * eps)
            assert num == pytest.approx(float(np.sum(grad * d)), rel=1e-7)

    def test_gpt_style_batched_loss(self):
        logits = np.random.default_rng(1).standard_normal((2, 5, 7))
        targets = np.random.default_rng(2).integers(0, 7, (2, 5))
        loss, grad = loss_and_grad("cross_entropy", logits, targets)
        assert grad.shape == logits.shape and math.isfinite(loss)


def test_build_architecture_dispatch():
    assert build_architecture(ArchSpec(family="resmlp")).mass > 0
    with pytest.raises(ValueError):
        build_architecture(ArchSpec(family="transformer"))
