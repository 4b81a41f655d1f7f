"""Frozen teacher: determinism, linearity of the oracle kind, saliency."""

import numpy as np
import pytest

import marvid.tensor as T
from marvid.config import ModelConfig
from marvid.errors import ContractError
from marvid.rng import Rng
from marvid.teacher import Teacher, oracle_matrix


def cfg(**kw):
    base = dict(frames=2, img_size=8, channels=1, patch=4, dim=8, depth=2,
                heads=2, state=4, teacher_dim=6)
    base.update(kw)
    return ModelConfig(**base).validate()


class TestTeacher:
    def test_feature_shape(self):
        t = Teacher(cfg())
        clip = Rng(1).uniform(0.0, 1.0, (2, 1, 8, 8))
        assert t.features(clip).shape == (2, 4, 6)
        batch = Rng(2).uniform(0.0, 1.0, (3, 2, 1, 8, 8))
        assert t.features(batch).shape == (3, 2, 4, 6)

    def test_bit_identical_across_calls(self):
        t = Teacher(cfg())
        clip = Rng(3).uniform(0.0, 1.0, (2, 1, 8, 8))
        assert np.array_equal(t.features(clip), t.features(clip))
        assert np.array_equal(t.features(clip), Teacher(cfg()).features(clip))

    def test_zero_clip_maps_to_zero(self):
        clip = np.zeros((2, 1, 8, 8))
        for kind in ("random-frozen", "oracle-linear"):
            assert not Teacher(cfg(), kind).features(clip).any(), kind

    def test_never_lands_on_tape(self):
        t = Teacher(cfg())
        clip = Rng(4).uniform(0.0, 1.0, (2, 1, 8, 8))
        with T.tape() as tp:
            t.features(clip)
            t.saliency(clip)
        assert len(tp) == 0
        assert isinstance(t.w1, np.ndarray)  # plain arrays, not Tensors

    def test_unknown_kind(self):
        with pytest.raises(ContractError):
            Teacher(cfg(), "distilled")


class TestOracleLinear:
    def test_is_homogeneous(self):
        t = Teacher(cfg(), "oracle-linear")
        clip = Rng(5).uniform(0.0, 1.0, (2, 1, 8, 8))
        assert np.allclose(t.features(2.0 * clip), 2.0 * t.features(clip), atol=1e-13)

    def test_matrix_matches_two_loops(self):
        m = oracle_matrix(3, 2)
        for i in range(3):
            for j in range(2):
                assert m[i, j] == pytest.approx(np.sin((i + 1) * (j + 1)) / np.sqrt(3.0), abs=1e-15)

    def test_feature_matches_explicit_product(self):
        t = Teacher(cfg(), "oracle-linear")
        clip = Rng(6).uniform(0.0, 1.0, (2, 1, 8, 8))
        from marvid.layers import patch_vectors
        vecs = patch_vectors(clip, 4)
        feat = t.features(clip)
        for f in range(2):
            for n in range(4):
                want = np.zeros(6)
                for j in range(6):
                    for i in range(16):
                        want[j] += vecs[f, n, i] * t.proj[i, j]
                assert np.allclose(feat[f, n], want, atol=1e-12)


class TestSaliency:
    def test_is_feature_norm(self):
        t = Teacher(cfg())
        clip = Rng(7).uniform(0.0, 1.0, (2, 1, 8, 8))
        sal = t.saliency(clip)
        want = np.sqrt((t.features(clip) ** 2).sum(-1))
        assert np.allclose(sal, want, atol=1e-12)

    def test_textured_patch_outscores_flat_patch(self):
        """A high-contrast patch carries more feature energy than a flat
        near-zero one for the oracle teacher."""
        t = Teacher(cfg(), "oracle-linear")
        clip = np.full((2, 1, 8, 8), 0.01)
        clip[0, 0, 0:4, 0:4] = Rng(8).uniform(0.5, 1.0, (4, 4))
        sal = t.saliency(clip)
        assert sal[0, 0] > sal[0, 1]
