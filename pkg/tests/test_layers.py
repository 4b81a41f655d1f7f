"""Layer blocks: init contracts, causality, scan equivalence, gradients."""

import numpy as np
import pytest

import marvid.tensor as T
from marvid.errors import ContractError
from marvid.gradcheck import grad_check
from marvid.layers import (
    Linear, MlpLayer, PatchEmbed, SsmBlock, TransformerBlock,
    patch_vectors, selective_scan_ref,
)
from marvid.rng import Rng


class TestLinear:
    def test_matches_numpy(self):
        rng = Rng(0)
        lin = Linear(4, 3, rng)
        x = rng.normal(0.0, 1.0, (5, 4))
        want = x @ lin.w.data + lin.b.data
        assert np.allclose(lin(T.constant(x)).data, want, atol=1e-14)

    def test_zero_init(self):
        lin = Linear(4, 3, Rng(0), zero=True)
        assert not lin.w.data.any()

    def test_param_names_unique_and_ordered(self):
        mlp = MlpLayer(4, 4, Rng(1))
        names = [n for n, _ in mlp.params()]
        assert names == ["fc1.w", "fc1.b", "fc2.w", "fc2.b"]


class TestTransformerBlock:
    def test_shape_preserved_batched_and_not(self):
        blk = TransformerBlock(8, 2, Rng(2))
        assert blk(T.constant(Rng(3).normal(0.0, 1.0, (5, 8)))).shape == (5, 8)
        assert blk(T.constant(Rng(3).normal(0.0, 1.0, (2, 5, 8)))).shape == (2, 5, 8)

    def test_heads_must_divide_dim(self):
        with pytest.raises(ContractError):
            TransformerBlock(9, 2, Rng(0))

    def test_fresh_block_attention_path_is_dead(self):
        """W_o starts at zero, so output = input + mlp(ln2(input)) exactly."""
        blk = TransformerBlock(8, 2, Rng(4))
        x = T.constant(Rng(5).normal(0.0, 1.0, (3, 8)))
        want = T.add(x, blk.mlp(blk.ln2(x)))
        assert np.array_equal(blk(x).data, want.data)

    def test_causal_mask_blocks_future(self):
        rng = Rng(6)
        blk = TransformerBlock(8, 2, rng)
        blk.wo.w.data[:] = rng.normal(0.0, 0.3, (8, 8))  # wake the attention path
        mask = T.constant(np.where(np.tri(6) > 0, 0.0, T.MASK_OFF))
        x = rng.normal(0.0, 1.0, (6, 8))
        base = blk(T.constant(x), mask).data.copy()
        x2 = x.copy()
        x2[3] += 1.0
        bumped = blk(T.constant(x2), mask).data
        assert np.array_equal(bumped[:3], base[:3])
        assert (bumped[3:] != base[3:]).any()

    def test_gradcheck_through_block(self):
        blk = TransformerBlock(6, 2, Rng(7))
        blk.wo.w.data[:] = Rng(8).normal(0.0, 0.3, (6, 6))
        x = T.Tensor(Rng(9).normal(0.0, 1.0, (4, 6)), requires_grad=True)
        assert grad_check(lambda t: T.mean_all(T.tanh(blk(t))), x, samples=20) < 1e-5

    def test_gradcheck_attention_params(self):
        blk = TransformerBlock(6, 2, Rng(10))
        blk.wo.w.data[:] = Rng(11).normal(0.0, 0.3, (6, 6))
        x = T.constant(Rng(12).normal(0.0, 1.0, (4, 6)))
        f = lambda t: T.mean_all(T.tanh(blk(t if t is x else x)))
        for name, p in blk.params():
            if name in ("wq.w", "wo.w", "ln1.gamma", "mlp.fc2.b"):
                assert grad_check(lambda _t: T.mean_all(T.tanh(blk(x))), p, samples=10) < 1e-5, name


class TestSsmBlock:
    def test_fresh_block_is_identity(self):
        """Zero output projection makes the whole block the identity at init."""
        blk = SsmBlock(8, 4, Rng(13))
        x = Rng(14).normal(0.0, 1.0, (2, 6, 8))
        assert np.array_equal(blk(T.constant(x)).data, x)

    def test_unidirectional_is_causal(self):
        rng = Rng(15)
        blk = SsmBlock(8, 4, rng, bidirectional=False)
        blk.w_out.data[:] = rng.normal(0.0, 0.3, (16, 8))
        x = rng.normal(0.0, 1.0, (7, 8))
        base = blk(T.constant(x)).data.copy()
        x2 = x.copy()
        x2[4] += 1.0
        bumped = blk(T.constant(x2)).data
        assert np.array_equal(bumped[:4], base[:4])
        assert (bumped[4:] != base[4:]).any()

    def test_bidirectional_sees_the_future(self):
        rng = Rng(16)
        blk = SsmBlock(8, 4, rng, bidirectional=True)
        blk.w_out.data[:] = rng.normal(0.0, 0.3, (16, 8))
        x = rng.normal(0.0, 1.0, (7, 8))
        base = blk(T.constant(x)).data.copy()
        x2 = x.copy()
        x2[4] += 1.0
        bumped = blk(T.constant(x2)).data
        assert (bumped[:4] != base[:4]).any()

    def test_gradcheck_through_block(self):
        rng = Rng(17)
        blk = SsmBlock(6, 3, rng)
        blk.w_out.data[:] = rng.normal(0.0, 0.3, (12, 6))
        x = T.Tensor(rng.normal(0.0, 1.0, (5, 6)), requires_grad=True)
        assert grad_check(lambda t: T.mean_all(T.tanh(blk(t))), x, samples=25) < 1e-5

    def test_gradcheck_scan_parameters(self):
        rng = Rng(18)
        blk = SsmBlock(6, 3, rng, bidirectional=False)
        blk.w_out.data[:] = rng.normal(0.0, 0.3, (12, 6))
        x = T.constant(rng.normal(0.0, 1.0, (5, 6)))
        # a_log gradients for far-away states are ~1e-12, where central
        # differences at h=1e-5 are pure cancellation noise; h=1e-4 keeps the
        # probe honest for every parameter here
        for name in ("fwd.a_log", "fwd.conv", "fwd.delta_b", "fwd.d_skip", "w_in"):
            p = dict(blk.params())[name]
            assert grad_check(lambda _t: T.mean_all(T.tanh(blk(x))), p, samples=10, h=1e-4) < 1e-4, name


class TestScanEquivalence:
    def test_fused_matches_literal_loops(self):
        """The vectorized primitive and the literal recurrence must agree to
        1e-10 elementwise; a handful of shapes here, the wide sweep runs in
        the acceptance suite."""
        rng = Rng(19)
        for bshape, length, di, s in [((), 1, 1, 1), ((), 9, 4, 3), ((2,), 16, 5, 2), ((3,), 33, 2, 4)]:
            u = rng.normal(0.0, 1.0, bshape + (length, di))
            dl = rng.uniform(0.01, 0.8, bshape + (length, di))
            b = rng.normal(0.0, 1.0, bshape + (length, s))
            c = rng.normal(0.0, 1.0, bshape + (length, s))
            a = -np.exp(rng.normal(0.0, 0.5, (di, s)))
            d = rng.normal(0.0, 1.0, (di,))
            fused = T.selective_scan(*[T.constant(v) for v in (u, dl, b, c, a, d)]).data
            ref = selective_scan_ref(u, dl, b, c, a, d)
            assert np.abs(fused - ref).max() < 1e-10


class TestPatchEmbed:
    def test_projection_matches_numpy_route(self):
        rng = Rng(20)
        pe = PatchEmbed(frames=3, image=8, channels=2, patch=4, dim=5, rng=rng)
        clip = rng.uniform(0.0, 1.0, (3, 2, 8, 8))
        vecs = patch_vectors(clip, 4)                      # [T, N, 32]
        want = vecs.reshape(3 * 4, 32) @ pe.w_patch.data + pe.b_patch.data
        got = pe.project(T.constant(clip)).data
        assert np.allclose(got, want, atol=1e-13)

    def test_patch_vector_ordering(self):
        """Pixel (c=1, y=0, x=4) belongs to token 1 (grid row 0, col 1) at
        offset channel*patch*patch + y*patch + x_in_patch = 16 + 0 + 0."""
        clip = np.zeros((1, 2, 8, 8))
        clip[0, 1, 0, 4] = 7.0
        vecs = patch_vectors(clip, 4)
        assert vecs[0, 1, 16] == 7.0
        assert vecs.sum() == 7.0

    def test_position_terms_added_per_frame_and_slot(self):
        rng = Rng(21)
        pe = PatchEmbed(frames=2, image=8, channels=1, patch=4, dim=6, rng=rng)
        tokens = np.zeros((2 * 4, 6))
        out = pe.add_positions(T.constant(tokens)).data
        for t in range(2):
            for n in range(4):
                want = pe.pos.data[n] + pe.temporal.data[t]
                assert np.array_equal(out[t * 4 + n], want)

    def test_batched_embedding_matches_loop(self):
        rng = Rng(22)
        pe = PatchEmbed(frames=2, image=8, channels=1, patch=4, dim=6, rng=rng)
        clips = rng.uniform(0.0, 1.0, (3, 2, 1, 8, 8))
        batched = pe(T.constant(clips)).data
        for i in range(3):
            single = pe(T.constant(clips[i])).data
            assert np.array_equal(batched[i], single)

    def test_wrong_clip_shape_rejected(self):
        pe = PatchEmbed(frames=2, image=8, channels=1, patch=4, dim=6, rng=Rng(23))
        with pytest.raises(ContractError):
            pe.project(T.constant(np.zeros((2, 1, 8, 10))))

    def test_gradcheck_through_embed(self):
        rng = Rng(24)
        pe = PatchEmbed(frames=2, image=4, channels=1, patch=2, dim=4, rng=rng)
        x = T.Tensor(rng.uniform(0.0, 1.0, (2, 1, 4, 4)), requires_grad=True)
        assert grad_check(lambda t: T.mean_all(T.tanh(pe(t))), x, samples=16) < 1e-6
