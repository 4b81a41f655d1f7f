"""Frozen feature teacher that the pretraining targets come from.

The teacher maps each patch vector to a teacher_dim feature.  It is plain
numpy end to end: its weights are ndarrays, never Tensors, so nothing it
computes can land on a tape or receive gradients, and its outputs for a
given clip are bit-identical across calls.

Two kinds exist.  "random-frozen" is a fixed random two-layer tanh network,
a stand-in for a pretrained embedding model.  "oracle-linear" is a fixed
deterministic linear map with no randomness at all, there so tests can
compute expected features with explicit loops.

The teacher's seed is independent of the model seed on purpose: it plays
the role of one fixed external reference model that every run, whatever its
own seed, distills from.
"""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .errors import ContractError
from .layers import patch_vectors
from .rng import Rng

TEACHER_KINDS = ("random-frozen", "oracle-linear")
DEFAULT_TEACHER_SEED = 97


def oracle_matrix(d_in: int, d_out: int) -> np.ndarray:
    """The fixed projection of the oracle-linear teacher.

    Entry (i, j) is sin((i+1) * (j+1)), scaled by 1/sqrt(d_in): fully
    deterministic, dense, and easy to reproduce with two loops.
    """
    i = np.arange(1, d_in + 1)[:, None]
    j = np.arange(1, d_out + 1)[None, :]
    return np.sin(i * j) / np.sqrt(d_in)


class Teacher:
    def __init__(self, config: ModelConfig, kind: str = "random-frozen",
                 seed: int = DEFAULT_TEACHER_SEED):
        if kind not in TEACHER_KINDS:
            raise ContractError(f"teacher kind must be one of {TEACHER_KINDS}, got '{kind}'")
        self.kind = kind
        self.patch = config.patch
        self.dim = config.teacher_dim
        d_in = config.patch * config.patch * config.channels
        if kind == "random-frozen":
            hidden = 2 * config.teacher_dim
            rng = Rng(seed)
            self.w1 = rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_in, hidden))
            self.w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, config.teacher_dim))
        else:
            self.proj = oracle_matrix(d_in, config.teacher_dim)

    def features(self, clip: np.ndarray) -> np.ndarray:
        """[*, T, C, H, W] pixels -> [*, T, N, teacher_dim] features."""
        vecs = patch_vectors(clip, self.patch)
        if self.kind == "random-frozen":
            return np.tanh(vecs @ self.w1) @ self.w2
        return vecs @ self.proj

    def saliency(self, clip: np.ndarray) -> np.ndarray:
        """Per-token feature energy: L2 norm of the feature, [*, T, N]."""
        return np.linalg.norm(self.features(clip), axis=-1)
