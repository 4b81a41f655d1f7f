"""Hybrid scan/attention video encoder.

The encoder embeds T*N patch tokens plus a leading cls slot and runs them
through a stack that interleaves bidirectional state-space blocks with an
attention block after every mamba_per_attn of them (ratio 0 collapses to a
pure attention stack).  Masked pretraining replaces hidden tokens with one
learned embedding instead of dropping them: the state-space layers need the
sequence geometry intact, and the attention layers additionally refuse to
attend to hidden positions, so hidden content is gone from the computation
while its slot and position survive.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ContractError, PlanError, RangeError
from .layers import LayerNorm, Module, PatchEmbed, SsmBlock, TransformerBlock
from .masking import MaskPlan
from .rng import Rng


def layer_layout(depth: int, mamba_per_attn: int) -> list[str]:
    """Block kinds bottom to top, "ssm" or "attention".

    With ratio r > 0, every (r+1)-th layer is attention: zero-based index i
    is attention iff (i+1) % (r+1) == 0.  Ratio 0 or less means no scan
    layers at all.
    """
    if mamba_per_attn <= 0:
        return ["attention"] * depth
    return ["attention" if (i + 1) % (mamba_per_attn + 1) == 0 else "ssm"
            for i in range(depth)]


class Backbone(Module):
    """Patch embed + cls slot + hybrid block stack + final norm."""

    def __init__(self, config: ModelConfig, rng: Rng | None = None):
        super().__init__()
        config.validate()
        self.config = config
        rng = Rng(config.seed) if rng is None else rng
        # one child stream per component, so layer count changes do not
        # reshuffle the draws of earlier components
        streams = rng.split(config.depth + 2)
        self.embed = self._child("embed", PatchEmbed(
            config.frames, config.img_size, config.channels, config.patch,
            config.dim, streams[0]))
        self.cls = self._p("cls", T.create([1, config.dim], init="normal",
                                           std=0.02, rng=streams[1]))
        self.mask_emb = self._p("mask_emb", T.create([1, config.dim], init="normal",
                                                     std=0.02, rng=streams[1]))
        self.layout = layer_layout(config.depth, config.mamba_per_attn)
        self.blocks = []
        for i, kind in enumerate(self.layout):
            if kind == "ssm":
                blk = SsmBlock(config.dim, config.state, streams[2 + i], bidirectional=True)
            else:
                blk = TransformerBlock(config.dim, config.heads, streams[2 + i])
            self.blocks.append(blk)
            self._child(f"blocks.{i}", blk)
        self.norm = self._child("norm", LayerNorm(config.dim))

    # -- mask plumbing ------------------------------------------------------

    def _flat_masks(self, plan, batch: int | None) -> np.ndarray:
        """Validate plan(s) against the clip geometry; bool [rows, T*N]."""
        cfg = self.config
        plans = plan if isinstance(plan, (list, tuple)) else [plan]
        if batch is not None and len(plans) not in (1, batch):
            raise PlanError(f"{len(plans)} plans for a batch of {batch}")
        rows = []
        for p in plans:
            if p.frames != cfg.frames or p.tokens_per_frame != cfg.tokens_per_frame:
                raise PlanError(
                    f"plan geometry {p.frames}x{p.tokens_per_frame} does not match "
                    f"clip {cfg.frames}x{cfg.tokens_per_frame}")
            rows.append(p.flat)
        flat = np.stack(rows)
        if batch is not None and flat.shape[0] == 1 and batch > 1:
            flat = np.repeat(flat, batch, axis=0)
        return flat

    def _apply_mask_tokens(self, tokens: T.Tensor, flat: np.ndarray) -> T.Tensor:
        """Replace hidden slots with the learned mask embedding."""
        cfg = self.config
        tn = cfg.frames * cfg.tokens_per_frame
        col = flat.astype(np.float64)[..., None]          # [rows, TN, 1]
        if tokens.ndim == 2:
            col = col[0]
        keep = T.constant(1.0 - col)
        hide = T.constant(col)
        emb = T.expand(self.mask_emb, tokens.shape[:-2] + (tn, cfg.dim))
        return T.add(T.mul(tokens, T.expand(keep, tokens.shape)),
                     T.mul(emb, T.expand(hide, tokens.shape)))

    def _attention_mask(self, flat: np.ndarray, batched: bool) -> T.Tensor:
        """Column-blocking additive mask over the cls+tokens sequence.

        Hidden positions may still ask questions (their query rows are open)
        but nothing may look at them; the cls column stays open always.
        """
        rows, tn = flat.shape
        cols = np.zeros((rows, tn + 1))
        cols[:, 1:] = np.where(flat, T.MASK_OFF, 0.0)
        full = np.broadcast_to(cols[:, None, None, :], (rows, 1, tn + 1, tn + 1)).copy()
        return T.constant(full if batched else full[0])

    # -- encoding -----------------------------------------------------------

    def encode(self, clip, plan=None) -> T.Tensor:
        """[*, T, C, H, W] -> [*, T*N+1, dim] with the cls row first.

        plan hides token slots before any block runs: a single MaskPlan is
        shared across a batch, a list supplies one per sample.
        """
        if not isinstance(clip, T.Tensor):
            clip = T.constant(np.asarray(clip, dtype=np.float64))
        if clip.ndim not in (4, 5):
            raise ContractError(f"clip must be [T,C,H,W] or [B,T,C,H,W], got {clip.shape}")
        batched = clip.ndim == 5
        tokens = self.embed.project(clip)
        amask = None
        if plan is not None:
            flat = self._flat_masks(plan, clip.shape[0] if batched else None)
            tokens = self._apply_mask_tokens(tokens, flat)
            amask = self._attention_mask(flat, batched)
        tokens = self.embed.add_positions(tokens)
        if batched:
            cls = T.expand(T.reshape(self.cls, (1, 1, self.config.dim)),
                           (clip.shape[0], 1, self.config.dim))
        else:
            cls = self.cls
        x = T.concat([cls, tokens], axis=-2)
        for kind, blk in zip(self.layout, self.blocks):
            x = blk(x, amask) if kind == "attention" else blk(x)
        return self.norm(x)

    def causal_probe(self, clip, t: int) -> T.Tensor:
        """Encode with frames t+1..T fully hidden; rows for frames 1..t.

        t counts frames 1-based; valid range is 1..T-1.  Returns the
        [t*N+1, dim] slice (cls plus the visible frames' tokens), which by
        construction cannot depend on any pixel of frames t+1..T.
        """
        cfg = self.config
        if not 1 <= t <= cfg.frames - 1:
            raise RangeError(f"probe frame {t} outside 1..{cfg.frames - 1}")
        n = cfg.tokens_per_frame
        per_frame = tuple(() if f < t else tuple(range(n)) for f in range(cfg.frames))
        plan = MaskPlan(cfg.frames, n, 1.0, per_frame)
        out = self.encode(clip, plan)
        if out.ndim != 2:
            raise ContractError("causal_probe takes a single clip, not a batch")
        return T.narrow(out, 0, 0, t * n + 1)


def count_params(config: ModelConfig) -> int:
    """Total scalar parameter count of the encoder for this config."""
    model = Backbone(config)
    return sum(p.size for _, p in model.params())
