"""Mask plans and autoregressive decoder masks against literal enumeration."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marvid.errors import ContractError, PlanError
from marvid.masking import ArMask, MaskPlan, build_ar_mask, mask_count, plan_mask
from marvid.rng import Rng
from marvid.tensor import MASK_OFF


class TestMaskCount:
    def test_frozen_counts(self):
        """Round half up: 0.2*16=3.2 -> 3, 0.5*16 -> 8, 0.8*16=12.8 -> 13,
        0.5*5=2.5 -> 3."""
        assert mask_count(0.2, 16) == 3
        assert mask_count(0.5, 16) == 8
        assert mask_count(0.8, 16) == 13
        assert mask_count(0.5, 5) == 3
        assert mask_count(0.0, 16) == 0
        assert mask_count(1.0, 16) == 16

    def test_ratio_bounds(self):
        with pytest.raises(ContractError):
            mask_count(1.5, 16)

    @given(st.floats(0.0, 1.0), st.integers(1, 64))
    @settings(max_examples=60, deadline=None)
    def test_count_always_in_range(self, ratio, n):
        assert 0 <= mask_count(ratio, n) <= n


class TestPlanMask:
    def test_low_saliency_picks_lowest(self):
        sal = np.array([[5.0, 1.0, 3.0, 2.0]])
        plan = plan_mask(sal, 0.5)
        assert plan.per_frame == ((1, 3),)

    def test_ties_break_toward_lower_index(self):
        sal = np.array([[2.0, 2.0, 2.0, 2.0]])
        plan = plan_mask(sal, 0.5)
        assert plan.per_frame == ((0, 1),)

    def test_every_frame_masks_same_count(self):
        sal = Rng(1).normal(0.0, 1.0, (6, 16))
        plan = plan_mask(sal, 0.5)
        assert all(len(idx) == 8 for idx in plan.per_frame)

    def test_random_policy_is_seeded(self):
        sal = np.zeros((4, 16))
        a = plan_mask(sal, 0.5, policy="random", rng=Rng(3))
        b = plan_mask(sal, 0.5, policy="random", rng=Rng(3))
        c = plan_mask(sal, 0.5, policy="random", rng=Rng(4))
        assert a.per_frame == b.per_frame
        assert a.per_frame != c.per_frame
        assert all(len(idx) == 8 for idx in a.per_frame)

    def test_unknown_policy(self):
        with pytest.raises(ContractError):
            plan_mask(np.zeros((2, 4)), 0.5, policy="middle")

    def test_flat_layout(self):
        plan = MaskPlan(2, 3, 0.5, ((1,), (0, 2)))
        assert plan.flat.tolist() == [False, True, False, True, False, True]


class TestMaskPlanValidation:
    def test_wrong_frame_count(self):
        with pytest.raises(PlanError):
            MaskPlan(3, 4, 0.5, ((0,), (1,)))

    def test_slot_out_of_range(self):
        with pytest.raises(PlanError):
            MaskPlan(1, 4, 0.5, ((4,),))

    def test_duplicate_slot(self):
        with pytest.raises(PlanError):
            MaskPlan(1, 4, 0.5, ((1, 1),))


def allowed_ref(mode: str, n: int, q: int, k: int) -> bool:
    """The visibility rule spelled out for one (query, key) pair."""
    fq, pq = divmod(q, n)
    fk, pk = divmod(k, n)
    if mode == "video":
        return True
    if mode == "frame":
        return fk <= fq
    return fk < fq or (fk == fq and pk <= pq)


class TestArMask:
    @pytest.mark.parametrize("mode", ["frame", "token", "video"])
    @pytest.mark.parametrize("frames,n", [(1, 1), (2, 3), (3, 2), (4, 4)])
    def test_matches_enumeration(self, mode, frames, n):
        mask = build_ar_mask(mode, frames, n)
        for q in range(frames * n):
            for k in range(frames * n):
                want = 0.0 if allowed_ref(mode, n, q, k) else MASK_OFF
                assert mask.matrix[q, k] == want, (mode, q, k)

    def test_frame_mode_diagonal_blocks(self):
        """frame mode at T=2, N=2: frame 0 rows see only frame 0 keys."""
        m = build_ar_mask("frame", 2, 2).matrix
        open_ = (m == 0.0)
        assert open_[0].tolist() == [True, True, False, False]
        assert open_[3].tolist() == [True, True, True, True]

    def test_token_mode_is_strict_prefix(self):
        m = build_ar_mask("token", 2, 2).matrix
        open_ = (m == 0.0)
        assert open_[0].tolist() == [True, False, False, False]
        assert open_[2].tolist() == [True, True, True, False]

    def test_video_mode_all_open(self):
        assert (build_ar_mask("video", 3, 4).matrix == 0.0).all()

    def test_every_query_sees_itself(self):
        for mode in ("frame", "token", "video"):
            m = build_ar_mask(mode, 3, 5).matrix
            assert (np.diag(m) == 0.0).all(), mode

    def test_bad_mode(self):
        with pytest.raises(ContractError):
            build_ar_mask("clip", 2, 2)
