"""Neural building blocks on the tape: linear maps, attention, and the
input-dependent state-space block.

Every layer keeps its parameters as requires_grad Tensors and reports them
through params() as ordered (name, tensor) pairs; containers prefix names
with their slot, which is what the checkpoint format serializes.  Creation
order is the canonical order everywhere.

selective_scan_ref at the bottom is the trusted reference for the fused scan
primitive: the recurrence written as literal Python loops, one state cell at
a time.  Tests hold the fast path to it; nothing in the model calls it.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ContractError
from .rng import Rng


class Module:
    """Minimal parameter container with named, ordered parameters."""

    def __init__(self):
        self._params: list[tuple[str, T.Tensor]] = []
        self._children: list[tuple[str, "Module"]] = []

    def _p(self, name: str, tensor: T.Tensor) -> T.Tensor:
        tensor.requires_grad = True
        self._params.append((name, tensor))
        return tensor

    def _child(self, name: str, module: "Module") -> "Module":
        self._children.append((name, module))
        return module

    def params(self) -> list[tuple[str, T.Tensor]]:
        out = list(self._params)
        for cname, child in self._children:
            out.extend((f"{cname}.{pname}", p) for pname, p in child.params())
        return out

    def param_tensors(self) -> list[T.Tensor]:
        return [p for _, p in self.params()]


def affine(x: T.Tensor, w: T.Tensor, b: T.Tensor | None) -> T.Tensor:
    y = T.matmul(x, w)
    if b is not None:
        y = T.add(y, T.expand(b, y.shape))
    return y


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: Rng, zero: bool = False, bias: bool = True):
        super().__init__()
        if zero:
            w = T.create([d_in, d_out])
        else:
            w = T.create([d_in, d_out], init="normal", std=1.0 / math.sqrt(d_in), rng=rng)
        self.w = self._p("w", w)
        self.b = self._p("b", T.create([d_out])) if bias else None

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return affine(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gamma = self._p("gamma", T.create([dim], init="ones"))
        self.beta = self._p("beta", T.create([dim]))

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class MlpLayer(Module):
    """Two-layer feedforward with silu, hidden defaulting to 4x the input."""

    def __init__(self, d_in: int, d_out: int, rng: Rng, d_hidden: int | None = None):
        super().__init__()
        d_hidden = 4 * d_in if d_hidden is None else d_hidden
        self.fc1 = self._child("fc1", Linear(d_in, d_hidden, rng))
        self.fc2 = self._child("fc2", Linear(d_hidden, d_out, rng))

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return self.fc2(T.silu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm multi-head self-attention plus MLP, both residual.

    The attention output projection starts at zero so a fresh block passes
    its input through the attention path untouched; only the MLP residual is
    active at init.  An optional additive mask (0 keeps, MASK_OFF removes)
    broadcasts against the [*, heads, L, L] score array.
    """

    def __init__(self, dim: int, heads: int, rng: Rng):
        super().__init__()
        if dim % heads != 0:
            raise ContractError(f"dim {dim} not divisible by heads {heads}")
        self.dim, self.heads, self.head_dim = dim, heads, dim // heads
        self.ln1 = self._child("ln1", LayerNorm(dim))
        self.wq = self._child("wq", Linear(dim, dim, rng))
        self.wk = self._child("wk", Linear(dim, dim, rng))
        self.wv = self._child("wv", Linear(dim, dim, rng))
        self.wo = self._child("wo", Linear(dim, dim, rng, zero=True))
        self.ln2 = self._child("ln2", LayerNorm(dim))
        self.mlp = self._child("mlp", MlpLayer(dim, dim, rng))

    def _split_heads(self, t: T.Tensor, pre: tuple, length: int) -> T.Tensor:
        b0 = len(pre)
        t = T.reshape(t, pre + (length, self.heads, self.head_dim))
        return T.transpose(t, tuple(range(b0)) + (b0 + 1, b0, b0 + 2))

    def __call__(self, x: T.Tensor, add_mask: T.Tensor | None = None) -> T.Tensor:
        pre, length = x.shape[:-2], x.shape[-2]
        h = self.ln1(x)
        q = self._split_heads(self.wq(h), pre, length)
        k = self._split_heads(self.wk(h), pre, length)
        v = self._split_heads(self.wv(h), pre, length)
        kt = T.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
        scores = T.scale(T.matmul(q, kt), 1.0 / math.sqrt(self.head_dim))
        probs = T.masked_softmax(scores, add_mask)
        ctx = T.matmul(probs, v)
        b0 = len(pre)
        ctx = T.transpose(ctx, tuple(range(b0)) + (b0 + 1, b0, b0 + 2))
        ctx = T.reshape(ctx, pre + (length, self.dim))
        x = T.add(x, self.wo(ctx))
        return T.add(x, self.mlp(self.ln2(x)))


class _ScanBranch(Module):
    """Per-direction parameters of the state-space block."""

    def __init__(self, d_inner: int, state: int, rng: Rng, conv_width: int):
        super().__init__()
        self.conv = self._p("conv", T.create(
            [d_inner, conv_width], init="normal", std=1.0 / math.sqrt(conv_width), rng=rng))
        self.delta_w = self._p("delta_w", T.create(
            [d_inner, d_inner], init="normal", std=1.0 / math.sqrt(d_inner), rng=rng))
        # bias chosen so softplus(bias) covers step sizes 1e-3 .. 1e-1 log-uniformly
        dts = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), (d_inner,)))
        self.delta_b = self._p("delta_b", T.Tensor(np.log(np.expm1(dts))))
        self.b_proj = self._p("b_proj", T.create(
            [d_inner, state], init="normal", std=1.0 / math.sqrt(d_inner), rng=rng))
        self.c_proj = self._p("c_proj", T.create(
            [d_inner, state], init="normal", std=1.0 / math.sqrt(d_inner), rng=rng))
        # A = -exp(a_log) stays strictly negative for any real a_log
        self.a_log = self._p("a_log", T.Tensor(
            np.tile(np.log(np.arange(1, state + 1, dtype=np.float64)), (d_inner, 1))))
        self.d_skip = self._p("d_skip", T.create([d_inner], init="ones"))

    def __call__(self, stream: T.Tensor) -> T.Tensor:
        c = T.silu(T.depthwise_causal_conv(stream, self.conv))
        delta = T.softplus(affine(c, self.delta_w, self.delta_b))
        bm = T.matmul(c, self.b_proj)
        cm = T.matmul(c, self.c_proj)
        a = T.neg(T.exp(self.a_log))
        return T.selective_scan(c, delta, bm, cm, a, self.d_skip)


class SsmBlock(Module):
    """Pre-norm selective state-space block with gating, residual throughout.

    The input projection widens to d_inner = 2*dim and splits into a scan
    stream and a gate.  The stream passes through a width-4 causal conv,
    silu, and the selective scan; bidirectional mode runs an independent
    second branch on the time-reversed stream and sums the two.  The output
    projection starts at zero, so a fresh block is the identity exactly.
    """

    def __init__(self, dim: int, state: int, rng: Rng,
                 bidirectional: bool = True, conv_width: int = 4):
        super().__init__()
        self.dim, self.d_inner = dim, 2 * dim
        self.bidirectional = bidirectional
        self.ln = self._child("ln", LayerNorm(dim))
        self.w_in = self._p("w_in", T.create(
            [dim, 2 * self.d_inner], init="normal", std=1.0 / math.sqrt(dim), rng=rng))
        self.b_in = self._p("b_in", T.create([2 * self.d_inner]))
        self.fwd = self._child("fwd", _ScanBranch(self.d_inner, state, rng, conv_width))
        if bidirectional:
            self.rev = self._child("rev", _ScanBranch(self.d_inner, state, rng, conv_width))
        self.w_out = self._p("w_out", T.create([self.d_inner, dim]))
        self.b_out = self._p("b_out", T.create([dim]))

    def __call__(self, x: T.Tensor) -> T.Tensor:
        h = self.ln(x)
        proj = affine(h, self.w_in, self.b_in)
        stream = T.narrow(proj, -1, 0, self.d_inner)
        gate = T.narrow(proj, -1, self.d_inner, self.d_inner)
        y = self.fwd(stream)
        if self.bidirectional:
            y = T.add(y, T.flip(self.rev(T.flip(stream, -2)), -2))
        out = T.mul(y, T.silu(gate))
        return T.add(x, affine(out, self.w_out, self.b_out))


class PatchEmbed(Module):
    """Cut frames into square patches, project, and add position terms.

    A patch vector is the (channel, row, column) C-order flattening of one
    patch; token index within a frame is row-major over the patch grid.
    Learned spatial positions are shared across frames and a learned
    temporal term is shared across positions, added after projection.
    """

    def __init__(self, frames: int, image: int, channels: int, patch: int, dim: int, rng: Rng):
        super().__init__()
        if image % patch != 0:
            raise ContractError(f"image size {image} not divisible by patch {patch}")
        self.frames, self.image, self.channels, self.patch = frames, image, channels, patch
        self.grid = image // patch
        self.tokens_per_frame = self.grid * self.grid
        self.dim = dim
        pvec = patch * patch * channels
        self.w_patch = self._p("patch_w", T.create(
            [pvec, dim], init="normal", std=1.0 / math.sqrt(pvec), rng=rng))
        self.b_patch = self._p("patch_b", T.create([dim]))
        self.pos = self._p("pos", T.create(
            [self.tokens_per_frame, dim], init="normal", std=0.02, rng=rng))
        self.temporal = self._p("temporal", T.create([frames, dim], init="normal", std=0.02, rng=rng))

    def project(self, frames: T.Tensor) -> T.Tensor:
        """[*, T, C, H, W] -> [*, T*N, dim] patch projections, no positions."""
        t, c, h, w = frames.shape[-4:]
        if (t, c, h, w) != (self.frames, self.channels, self.image, self.image):
            raise ContractError(
                f"clip shape {frames.shape[-4:]} does not match embed "
                f"({self.frames}, {self.channels}, {self.image}, {self.image})")
        pre = frames.shape[:-4]
        g, p = self.grid, self.patch
        b0 = len(pre)
        x = T.reshape(frames, pre + (t, c, g, p, g, p))
        x = T.transpose(x, tuple(range(b0)) + (b0, b0 + 2, b0 + 4, b0 + 1, b0 + 3, b0 + 5))
        x = T.reshape(x, pre + (t * self.tokens_per_frame, c * p * p))
        return affine(x, self.w_patch, self.b_patch)

    def add_positions(self, tokens: T.Tensor) -> T.Tensor:
        """Add spatial + temporal terms to [*, T*N, dim] token arrays."""
        t, n, d = self.frames, self.tokens_per_frame, self.dim
        pos_f = T.reshape(T.expand(T.reshape(self.pos, (1, n, d)), (t, n, d)), (t * n, d))
        tem_f = T.reshape(T.expand(T.reshape(self.temporal, (t, 1, d)), (t, n, d)), (t * n, d))
        terms = T.add(pos_f, tem_f)
        if tokens.ndim == 3:
            terms = T.expand(T.reshape(terms, (1, t * n, d)), tokens.shape)
        return T.add(tokens, terms)

    def __call__(self, frames: T.Tensor) -> T.Tensor:
        return self.add_positions(self.project(frames))


def patch_vectors(frames: np.ndarray, patch: int) -> np.ndarray:
    """Numpy mirror of PatchEmbed's patch extraction: [*, T, C, H, W] ->
    [*, T, N, patch*patch*C] in the same channel-major, row-major order.

    The frozen teacher consumes raw patch vectors, so this is the single
    place that fixes the ordering contract between student and teacher.
    """
    frames = np.asarray(frames, dtype=np.float64)
    t, c, h, w = frames.shape[-4:]
    if h % patch != 0 or w % patch != 0:
        raise ContractError(f"frame {h}x{w} not divisible by patch {patch}")
    g = h // patch
    pre = frames.shape[:-4]
    x = frames.reshape(pre + (t, c, g, patch, g, patch))
    b0 = len(pre)
    x = np.transpose(x, tuple(range(b0)) + (b0, b0 + 2, b0 + 4, b0 + 1, b0 + 3, b0 + 5))
    return np.ascontiguousarray(x).reshape(pre + (t, g * g, c * patch * patch))


def selective_scan_ref(u, delta, B, C, A, D_skip) -> np.ndarray:
    """The scan recurrence as literal loops, one state cell at a time.

        h[d, s] <- exp(delta[l, d] * A[d, s]) * h[d, s]
                   + delta[l, d] * B[l, s] * u[l, d]
        y[l, d]  = sum_s C[l, s] * h[d, s] + D_skip[d] * u[l, d]

    Accepts the same [L, ...] or [batch, L, ...] shapes as the fused
    primitive and returns a plain ndarray.  Slow on purpose.
    """
    u, delta, B, C, A, D_skip = (np.asarray(v, dtype=np.float64) for v in (u, delta, B, C, A, D_skip))
    if u.ndim == 3:
        return np.stack([selective_scan_ref(u[i], delta[i], B[i], C[i], A, D_skip)
                         for i in range(u.shape[0])])
    length, di = u.shape
    state = B.shape[-1]
    h = np.zeros((di, state))
    y = np.zeros((length, di))
    for l in range(length):
        for d in range(di):
            for s in range(state):
                h[d, s] = math.exp(delta[l, d] * A[d, s]) * h[d, s] \
                    + delta[l, d] * B[l, s] * u[l, d]
        for d in range(di):
            acc = 0.0
            for s in range(state):
                acc += C[l, s] * h[d, s]
            y[l, d] = acc + D_skip[d] * u[l, d]
    return y
