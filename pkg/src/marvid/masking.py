"""Mask planning for pretraining and the autoregressive decoder masks.

A MaskPlan says which token slots of a clip are hidden from the encoder.
Masking is per frame: every frame hides the same count, round(ratio * N)
with halves up, so the sequence geometry the state-space layers depend on
never changes, only the content of the hidden slots does.

An ArMask is the additive attention mask that gives the decoder its
prediction order over the T*N token grid (no cls row; the decoder works on
tokens only).  Three granularities exist:

    frame: a query sees every key in its own frame and all earlier frames
    token: a query sees strictly earlier frames, plus same-frame keys up to
           and including its own position
    video: every query sees every key (no ordering)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, PlanError
from .rng import Rng
from .tensor import MASK_OFF

AR_MODES = ("frame", "token", "video")


def mask_count(ratio: float, n: int) -> int:
    """Slots hidden per frame: ratio * n rounded with halves up."""
    if not 0.0 <= ratio <= 1.0:
        raise ContractError(f"mask ratio must lie in [0, 1], got {ratio}")
    return int(math.floor(ratio * n + 0.5))


@dataclass
class MaskPlan:
    frames: int
    tokens_per_frame: int
    ratio: float
    per_frame: tuple  # one sorted tuple of hidden slot indices per frame

    def __post_init__(self):
        if len(self.per_frame) != self.frames:
            raise PlanError(f"{len(self.per_frame)} frame entries for {self.frames} frames")
        clean = []
        for t, idx in enumerate(self.per_frame):
            idx = tuple(sorted(int(i) for i in idx))
            if any(i < 0 or i >= self.tokens_per_frame for i in idx):
                raise PlanError(f"frame {t} masks a slot outside 0..{self.tokens_per_frame - 1}")
            if len(set(idx)) != len(idx):
                raise PlanError(f"frame {t} masks a slot twice")
            clean.append(idx)
        self.per_frame = tuple(clean)

    @property
    def flat(self) -> np.ndarray:
        """Boolean [frames * tokens_per_frame]; True where hidden."""
        out = np.zeros(self.frames * self.tokens_per_frame, dtype=bool)
        for t, idx in enumerate(self.per_frame):
            for i in idx:
                out[t * self.tokens_per_frame + i] = True
        return out


def plan_mask(saliency: np.ndarray, ratio: float, policy: str = "low_saliency",
              rng: Rng | None = None, seed: int = 0) -> MaskPlan:
    """Choose hidden slots per frame from a [frames, N] saliency array.

    low_saliency hides the lowest-scoring slots (ties resolved toward the
    lower index via a stable sort); random ignores the scores and draws a
    uniform subset per frame from rng.
    """
    saliency = np.asarray(saliency, dtype=np.float64)
    if saliency.ndim != 2:
        raise ContractError(f"saliency must be [frames, N], got shape {saliency.shape}")
    frames, n = saliency.shape
    k = mask_count(ratio, n)
    if policy == "low_saliency":
        chosen = [tuple(np.argsort(saliency[t], kind="stable")[:k]) for t in range(frames)]
    elif policy == "random":
        if rng is None:
            rng = Rng(seed)
        chosen = [tuple(rng.permutation(n)[:k]) for t in range(frames)]
    else:
        raise ContractError(f"unknown mask policy '{policy}'")
    return MaskPlan(frames, n, ratio, tuple(chosen))


@dataclass
class ArMask:
    mode: str
    frames: int
    tokens_per_frame: int
    matrix: np.ndarray = field(repr=False)  # [T*N, T*N] additive, 0 or MASK_OFF


def build_ar_mask(mode: str, frames: int, tokens_per_frame: int) -> ArMask:
    """Additive decoder mask for one of the AR_MODES granularities."""
    if mode not in AR_MODES:
        raise ContractError(f"ar mode must be one of {AR_MODES}, got '{mode}'")
    n = tokens_per_frame
    length = frames * n
    idx = np.arange(length)
    fq, fk = idx[:, None] // n, idx[None, :] // n
    pq, pk = idx[:, None] % n, idx[None, :] % n
    if mode == "frame":
        allowed = fk <= fq
    elif mode == "token":
        allowed = (fk < fq) | ((fk == fq) & (pk <= pq))
    else:
        allowed = np.ones((length, length), dtype=bool)
    return ArMask(mode, frames, n, np.where(allowed, 0.0, MASK_OFF))
