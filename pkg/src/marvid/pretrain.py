"""Masked autoregressive pretraining against the frozen teacher.

Each step hides the low-saliency half (by default) of every frame's tokens,
encodes the damaged clip, and asks a small autoregressive decoder to
produce, at slot t, the teacher's features of frame t+1.  The decoder sees
token representations only under its AR mask; the encoder's cls vector is
concatenated back onto every token channel-wise just before the output MLP,
restoring global context without touching the visibility pattern.

The loss is the mean squared error between predicted and teacher features
over slots 1..T-1 (slot T has no next frame and is dropped), all token
positions, all channels.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .backbone import Backbone
from .config import ModelConfig
from .errors import ContractError, NumericError, ShapeError
from .layers import MlpLayer, Module, TransformerBlock
from .masking import ArMask, build_ar_mask, plan_mask
from .optim import AdamW, warmup_cosine
from .rng import Rng
from .teacher import Teacher


class Decoder(Module):
    """decoder_depth attention blocks over the T*N tokens, then cls fusion
    and an MLP down to teacher_dim."""

    def __init__(self, config: ModelConfig, rng: Rng | None = None):
        super().__init__()
        config.validate()
        self.config = config
        rng = Rng(config.seed + 1) if rng is None else rng
        streams = rng.split(config.decoder_depth + 1)
        self.blocks = []
        for i in range(config.decoder_depth):
            blk = TransformerBlock(config.dim, config.heads, streams[i])
            self.blocks.append(blk)
            self._child(f"blocks.{i}", blk)
        # fused input is [token ; cls] = 2*dim channels
        self.head = self._child("head", MlpLayer(2 * config.dim, config.teacher_dim, streams[-1]))
        self.ar = build_ar_mask(config.ar_mode, config.frames, config.tokens_per_frame)

    def decode(self, encoder_out: T.Tensor, ar: ArMask | None = None) -> T.Tensor:
        """[*, T*N+1, dim] encoder rows -> [*, T, N, teacher_dim] predictions.

        Slot t (1-based) is the prediction of frame t+1's teacher features.
        """
        cfg = self.config
        tn = cfg.frames * cfg.tokens_per_frame
        if encoder_out.shape[-2] != tn + 1 or encoder_out.shape[-1] != cfg.dim:
            raise ShapeError(
                f"decoder wants [*, {tn + 1}, {cfg.dim}] encoder rows, got {encoder_out.shape}")
        ar = self.ar if ar is None else ar
        if ar.frames != cfg.frames or ar.tokens_per_frame != cfg.tokens_per_frame:
            raise ShapeError(f"AR mask geometry {ar.frames}x{ar.tokens_per_frame} mismatches config")
        cls_row = T.narrow(encoder_out, -2, 0, 1)
        tokens = T.narrow(encoder_out, -2, 1, tn)
        mask = T.constant(ar.matrix)
        for blk in self.blocks:
            tokens = blk(tokens, mask)
        fused = T.concat([tokens, T.expand(cls_row, tokens.shape)], axis=-1)
        out = self.head(fused)
        return T.reshape(out, encoder_out.shape[:-2] + (cfg.frames, cfg.tokens_per_frame,
                                                        cfg.teacher_dim))

    __call__ = decode


def decode_predict(encoder_out: T.Tensor, decoder: Decoder, ar: ArMask | None = None) -> T.Tensor:
    return decoder.decode(encoder_out, ar)


def map_loss(pred: T.Tensor, target) -> T.Tensor:
    """Mean squared error of next-frame predictions against teacher features.

    pred and target are [*, T, N, teacher_dim]; slot t of pred is compared
    to frame t+1 of target, so the last slot and the first frame drop out.
    """
    if not isinstance(target, T.Tensor):
        target = T.constant(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    axis = pred.ndim - 3
    frames = pred.shape[axis]
    if frames < 2:
        raise ContractError(f"need at least 2 frames for next-frame loss, got {frames}")
    slots = T.narrow(pred, axis, 0, frames - 1)
    future = T.narrow(target, axis, 1, frames - 1)
    diff = T.sub(slots, future)
    return T.mean_all(T.mul(diff, diff))


def make_plans(teacher: Teacher, clips: np.ndarray, config: ModelConfig,
               policy: str = "low_saliency", rng: Rng | None = None) -> list:
    """One MaskPlan per clip from teacher saliency at the config's ratio."""
    sal = teacher.saliency(clips)
    if sal.ndim == 2:
        sal = sal[None]
    return [plan_mask(sal[i], config.mask_ratio, policy=policy, rng=rng)
            for i in range(sal.shape[0])]


def pretrain_step(model: Backbone, decoder: Decoder, teacher: Teacher,
                  clips: np.ndarray, config: ModelConfig, opt: AdamW) -> float:
    """One masked-alignment update; returns the pre-update loss.

    clips is [B, T, C, H, W] (or one unbatched clip).  The optimizer's lr is
    taken as already set by the caller's schedule.
    """
    clips = np.asarray(clips, dtype=np.float64)
    target = teacher.features(clips)
    plans = make_plans(teacher, clips, config)
    with T.tape():
        enc = model.encode(clips, plans if clips.ndim == 5 else plans[0])
        pred = decoder.decode(enc)
        loss = map_loss(pred, target)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite pretraining loss {value}")
        T.backward(loss)
    opt.step()
    opt.zero_grad()
    return value


def run_pretrain(config: ModelConfig, clips: np.ndarray, steps: int,
                 batch_size: int = 8, base_lr: float = 1.5e-4,
                 teacher: Teacher | None = None, loss_stream=None,
                 warmup: int | None = None):
    """Train fresh model+decoder for a number of steps over a clip corpus.

    Batches walk the corpus in order, wrapping around.  Every run with the
    same config, corpus, and arguments reproduces the same loss curve bit
    for bit.  Returns (model, decoder, losses).
    """
    config.validate()
    clips = np.asarray(clips, dtype=np.float64)
    if clips.ndim != 5:
        raise ContractError(f"corpus must be [clips, T, C, H, W], got {clips.shape}")
    if clips.shape[0] < 1:
        raise ContractError("corpus is empty")
    teacher = Teacher(config) if teacher is None else teacher
    root = Rng(config.seed)
    model_rng, decoder_rng = root.split(2)
    model = Backbone(config, model_rng)
    decoder = Decoder(config, decoder_rng)
    opt = AdamW(model.param_tensors() + decoder.param_tensors(), lr=base_lr)
    if warmup is None:
        warmup = max(1, min(50, steps // 10))
    if loss_stream is not None:
        loss_stream.write("step,loss\n")
    n = clips.shape[0]
    losses = []
    for step in range(steps):
        idx = [(step * batch_size + j) % n for j in range(batch_size)]
        batch = clips[idx]
        opt.lr = warmup_cosine(step, steps, base_lr, warmup)
        value = pretrain_step(model, decoder, teacher, batch, config, opt)
        losses.append(value)
        if loss_stream is not None:
            loss_stream.write(f"{step},{value!r}\n")
    return model, decoder, losses
