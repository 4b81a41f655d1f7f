"""Reverse-mode autodiff on float64 numpy arrays with an explicit tape.

The design is deliberately boring: a Tensor wraps one contiguous float64
ndarray, every primitive op appends one TapeNode to the active Tape, and
backward() walks the tape once in reverse creation order.  Creation order is
already a topological order, so no sorting is needed and the sweep visits
each node exactly once (the tape counts visits so tests can assert this).

Ops record themselves only while a tape is active, so evaluation code runs
the same kernels with zero bookkeeping.  Gradients accumulate by addition
into the .grad buffer of every requires_grad leaf; buffers are never
allocated for tensors that do not require gradients.

Structural ops (reshape, transpose, narrow, concat, flip, expand) copy; the
package trades aliasing puzzles for memory, which is cheap at this scale.
Elementwise ops demand exactly equal shapes.  Broadcasting is spelled
explicitly with expand(), whose backward sums over the broadcast axes, so
there is exactly one place where that reduction logic lives.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from scipy.special import expit

from .errors import ContractError, InvalidShape, ShapeError

# Additive attention-mask value for "never attend here".  exp(MASK_OFF) is a
# clean 0.0 in float64 and sums of a few of them cannot overflow.
MASK_OFF = -1e30
_MASK_DETECT = -1e29  # entries at or below this count as blocked


class TapeNode:
    """One recorded primitive: inputs, output, and a closure for its VJP."""

    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitive ops for one forward computation."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.last_backward_visits = 0  # set by backward(), for tests

    def __len__(self):
        return len(self.nodes)


_ACTIVE: Tape | None = None


@contextmanager
def tape():
    """Activate a fresh Tape for the duration of the with-block."""
    global _ACTIVE
    prev = _ACTIVE
    _ACTIVE = Tape()
    try:
        yield _ACTIVE
    finally:
        _ACTIVE = prev


def active_tape() -> Tape | None:
    return _ACTIVE


class Tensor:
    """Shaped float64 value, optionally tracked on the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: TapeNode | None = None  # producing node on the active tape

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; scalars route to the constant-argument ops.
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("tensor/tensor division is not a primitive; use mul + reciprocal constants")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(data) -> Tensor:
    """Wrap data as a non-differentiable Tensor."""
    return Tensor(data, requires_grad=False)


def create(shape, init: str = "zeros", mean: float = 0.0, std: float = 1.0,
           seed: int = 0, rng=None, requires_grad: bool = False) -> Tensor:
    """Make a leaf tensor.  init is one of zeros|ones|normal.

    normal draws from Rng(seed) (or the rng argument) in flat C order, so the
    same seed always yields the same values regardless of call site.
    """
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0:
        raise InvalidShape("shape must have at least one dimension")
    if any(d <= 0 for d in shape):
        raise InvalidShape(f"all dimensions must be positive, got {shape}")
    if init == "zeros":
        data = np.zeros(shape)
    elif init == "ones":
        data = np.ones(shape)
    elif init == "normal":
        if std < 0:
            raise ContractError(f"std must be non-negative, got {std}")
        if rng is None:
            from .rng import Rng
            rng = Rng(seed)
        data = rng.normal(mean, std, shape)
    else:
        raise ContractError(f"unknown init '{init}'")
    return Tensor(data, requires_grad=requires_grad)


def _record(out: Tensor, inputs, backward_fn) -> Tensor:
    """Attach out to the active tape if any input is differentiable."""
    t = _ACTIVE
    if t is not None and any(i.requires_grad for i in inputs):
        out.requires_grad = True
        node = TapeNode(tuple(inputs), out, backward_fn)
        t.nodes.append(node)
        out.node = node
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to shape, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, d in enumerate(shape):
        if d == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into .grad of every requires_grad leaf.

    loss must be a single element produced on a still-reachable tape.  The
    sweep walks the tape once in reverse; nodes whose output did not
    influence loss are skipped without calling their backward closure.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
            return
        raise ContractError("loss was not produced on an active tape")
    tp = _ACTIVE
    if tp is None or loss.node not in _tail(tp):
        # loss may come from a tape whose with-block already closed; find it
        # through the node itself.  Nodes keep no tape pointer, so require the
        # caller to run backward inside the tape block or pass the tape.
        raise ContractError("backward must run inside the tape block that recorded the loss")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    visits = 0
    for node in reversed(tp.nodes):
        visits += 1
        g = grads.pop(id(node.output), None)
        holders.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
                holders[key] = inp
    tp.last_backward_visits = visits
    # whatever used to be in grads and was never popped is a leaf
    for key, g in grads.items():
        leaf = holders[key]
        leaf.grad = g if leaf.grad is None else leaf.grad + g


def _tail(tp: Tape):
    # membership helper kept trivial; identity check against the last nodes
    # would be O(1) but correctness matters more than speed here
    return tp.nodes if tp.nodes else ()


# ---------------------------------------------------------------------------
# elementwise ops (exact shape match; broadcasting goes through expand)

def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ; broadcast explicitly with expand()")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data
    return _record(out, (a, b), lambda g: (g * bd, g * ad))


def neg(x: Tensor) -> Tensor:
    out = Tensor(-x.data)
    return _record(out, (x,), lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * y,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * (1.0 - y * y),))


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x); derivative s + x*s*(1-s)."""
    s = expit(x.data)
    out = Tensor(x.data * s)
    xd = x.data
    return _record(out, (x,), lambda g: (g * (s + xd * s * (1.0 - s)),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), computed as logaddexp(0, x) for overflow safety."""
    out = Tensor(np.logaddexp(0.0, x.data))
    s = expit(x.data)
    return _record(out, (x,), lambda g: (g * s,))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * c)
    return _record(out, (x,), lambda g: (g * c,))


def shift(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data + float(c))
    return _record(out, (x,), lambda g: (g,))


_ELEMENTWISE = {
    "add": add, "mul": mul, "neg": neg, "exp": exp,
    "tanh": tanh, "silu": silu, "softplus": softplus,
}


def elementwise(op: str, *args: Tensor) -> Tensor:
    """Dispatch an elementwise op by name."""
    fn = _ELEMENTWISE.get(op)
    if fn is None:
        raise ContractError(f"unknown elementwise op '{op}'")
    return fn(*args)


# ---------------------------------------------------------------------------
# matmul

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes.

    Leading axes broadcast numpy-style; gradients are summed back over any
    broadcast batch axes, which is the entire reason matmul handles
    broadcasting while the elementwise ops refuse to.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        y = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"matmul batch dims incompatible: {a.shape} @ {b.shape}") from e
    out = Tensor(y)
    ad, bd = a.data, b.data
    ashape, bshape = a.shape, b.shape

    def bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ashape)
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bshape)
        return ga, gb

    return _record(out, (a, b), bw)


# ---------------------------------------------------------------------------
# structural ops

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape {x.shape} -> {shape} changes element count")
    out = Tensor(x.data.reshape(shape))
    xshape = x.shape
    return _record(out, (x,), lambda g: (g.reshape(xshape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose axes {axes} are not a permutation of {x.ndim} dims")
    out = Tensor(np.ascontiguousarray(np.transpose(x.data, axes)))
    inv = tuple(np.argsort(axes))
    return _record(out, (x,), lambda g: (np.ascontiguousarray(np.transpose(g, inv)),))


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice length elements starting at start along axis; backward zero-pads."""
    axis = axis % x.ndim
    if start < 0 or length <= 0 or start + length > x.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}] outside axis {axis} of {x.shape}")
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = Tensor(np.ascontiguousarray(x.data[sl]))
    xshape = x.shape

    def bw(g):
        full = np.zeros(xshape)
        full[sl] = g
        return (full,)

    return _record(out, (x,), bw)


def concat(parts, axis: int) -> Tensor:
    """Concatenate tensors along axis; backward splits the gradient back."""
    parts = list(parts)
    if not parts:
        raise ContractError("concat needs at least one tensor")
    axis = axis % parts[0].ndim
    for p in parts[1:]:
        if p.ndim != parts[0].ndim:
            raise ShapeError("concat operands must have equal rank")
        for ax in range(p.ndim):
            if ax != axis and p.shape[ax] != parts[0].shape[ax]:
                raise ShapeError(f"concat shapes {parts[0].shape} / {p.shape} differ off axis {axis}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]

    def bw(g):
        outs, off = [], 0
        for s in sizes:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(off, off + s)
            outs.append(np.ascontiguousarray(g[tuple(sl)]))
            off += s
        return tuple(outs)

    return _record(out, parts, bw)


def expand(x: Tensor, shape) -> Tensor:
    """Broadcast x up to shape (numpy rules); backward sums the extra axes."""
    shape = tuple(int(d) for d in shape)
    try:
        y = np.broadcast_to(x.data, shape)
    except ValueError as e:
        raise ShapeError(f"cannot expand {x.shape} to {shape}") from e
    out = Tensor(y.copy())
    xshape = x.shape
    return _record(out, (x,), lambda g: (_unbroadcast(g, xshape),))


def flip(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.ndim
    out = Tensor(np.ascontiguousarray(np.flip(x.data, axis=axis)))
    return _record(out, (x,), lambda g: (np.ascontiguousarray(np.flip(g, axis=axis)),))


# ---------------------------------------------------------------------------
# reductions

def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())
    xshape = x.shape
    return _record(out, (x,), lambda g: (np.broadcast_to(g, xshape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    out = Tensor(x.data.mean())
    xshape = x.shape
    return _record(out, (x,), lambda g: (np.broadcast_to(g / n, xshape).copy(),))


def mean_axis(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.ndim
    n = x.shape[axis]
    out = Tensor(x.data.mean(axis=axis))
    return _record(out, (x,), lambda g: (np.broadcast_to(np.expand_dims(g / n, axis), x.shape).copy(),))


# ---------------------------------------------------------------------------
# fused nn primitives

def masked_softmax(logits: Tensor, add_mask: Tensor | None = None) -> Tensor:
    """Softmax over the last axis after adding a 0/MASK_OFF additive mask.

    The mask broadcasts against logits.  Rows the mask blocks entirely come
    out as exact zeros; the decision is read from the mask itself, never from
    the shifted values, so a legitimate logit of -1e30 cannot fake a dead row.
    """
    z = logits.data
    if add_mask is not None:
        try:
            m = np.broadcast_to(add_mask.data, z.shape)
        except ValueError as e:
            raise ShapeError(f"mask {add_mask.shape} does not broadcast to logits {logits.shape}") from e
        z = z + m
        dead = (m <= _MASK_DETECT).all(axis=-1, keepdims=True)
    else:
        dead = None
    zmax = z.max(axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    p = e / e.sum(axis=-1, keepdims=True)
    if dead is not None and dead.any():
        p = np.where(dead, 0.0, p)
    out = Tensor(p)
    inputs = (logits,) if add_mask is None else (logits, add_mask)

    def bw(g):
        dz = p * (g - (g * p).sum(axis=-1, keepdims=True))
        return (dz,) if add_mask is None else (dz, None)

    return _record(out, inputs, bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift.

    Variance is the biased (1/D) estimate.  gamma and beta have shape [D].
    """
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine params must be [{d}], got {gamma.shape}/{beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(gamma.data * xhat + beta.data)
    gd = gamma.data

    def bw(g):
        red = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=red)
        dbeta = g.sum(axis=red)
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgamma, dbeta

    return _record(out, (x, gamma, beta), bw)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    logits is [B, K] (or [K] with a scalar label).  Computed through
    logsumexp so huge logits cannot overflow.
    """
    z = logits.data
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None, :]
    if z.ndim != 2:
        raise ShapeError(f"cross_entropy wants [B, K] logits, got {logits.shape}")
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    bsz, k = z.shape
    if lab.shape[0] != bsz:
        raise ShapeError(f"{bsz} logit rows but {lab.shape[0]} labels")
    if (lab < 0).any() or (lab >= k).any():
        raise ContractError(f"labels must lie in [0, {k})")
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    nll = lse - z[np.arange(bsz), lab]
    out = Tensor(nll.mean())

    def bw(g):
        p = np.exp(z - zmax)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(bsz), lab] -= 1.0
        dz = p * (np.asarray(g).item() / bsz)
        return ((dz[0] if squeeze else dz),)

    return _record(out, (logits,), bw)


def depthwise_causal_conv(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel causal convolution along the sequence axis.

    x is [L, D] or [B, L, D]; kernel is [D, W].  Output position l sees
    inputs l-W+1 .. l (zero padded on the left), with kernel[:, W-1]
    multiplying the current step, so the op is strictly causal.
    """
    if kernel.ndim != 2:
        raise ShapeError(f"kernel must be [D, W], got {kernel.shape}")
    if x.ndim not in (2, 3) or x.shape[-1] != kernel.shape[0]:
        raise ShapeError(f"conv input {x.shape} does not match kernel {kernel.shape}")
    d, w = kernel.shape
    xd = x.data if x.ndim == 3 else x.data[None]
    bsz, length, _ = xd.shape
    xp = np.concatenate([np.zeros((bsz, w - 1, d)), xd], axis=1)
    y = np.zeros_like(xd)
    kd = kernel.data
    for k in range(w):
        y += kd[:, k] * xp[:, k:k + length, :]
    out = Tensor(y if x.ndim == 3 else y[0])

    def bw(g):
        gb = g if g.ndim == 3 else g[None]
        gp = np.concatenate([gb, np.zeros((bsz, w - 1, d))], axis=1)
        dx = np.zeros_like(xd)
        dk = np.zeros_like(kd)
        for k in range(w):
            # y[l] uses xp[l+k] = x[l+k-(w-1)]; reversing gives x[m] <- g[m+w-1-k]
            dx += kd[:, k] * gp[:, w - 1 - k:w - 1 - k + length, :]
            dk[:, k] = (gb * xp[:, k:k + length, :]).sum(axis=(0, 1))
        return (dx if x.ndim == 3 else dx[0]), dk

    return _record(out, (x, kernel), bw)


def selective_scan(u: Tensor, delta: Tensor, B: Tensor, C: Tensor,
                   A: Tensor, D_skip: Tensor) -> Tensor:
    """Input-dependent linear state-space scan, fused as one tape node.

    Per step l (h starts at zero, elementwise over channels d and states s):

        h_l = exp(delta_l * A) * h_{l-1} + (delta_l * B_l) * u_l
        y_l = sum_s C_l[s] * h_l[:, s] + D_skip * u_l

    Shapes: u, delta [*, L, Di]; B, C [*, L, S]; A [Di, S]; D_skip [Di],
    where * is an optional shared batch axis.  The forward loop runs over L
    only; everything per-step is vectorized over (batch, Di, S).  The exact
    state trajectory is kept for backward, which runs the same loop in
    reverse and emits analytic gradients for all six inputs.
    """
    if u.shape != delta.shape or B.shape != C.shape:
        raise ShapeError(f"scan shapes disagree: u {u.shape} delta {delta.shape} B {B.shape} C {C.shape}")
    if u.ndim not in (2, 3) or B.ndim != u.ndim:
        raise ShapeError(f"scan wants rank-2 or rank-3 streams, got u {u.shape}, B {B.shape}")
    if u.shape[:-1] != B.shape[:-1]:
        raise ShapeError(f"scan length/batch mismatch: u {u.shape} vs B {B.shape}")
    di, s = A.shape if A.ndim == 2 else (-1, -1)
    if A.ndim != 2 or u.shape[-1] != di or B.shape[-1] != s:
        raise ShapeError(f"A {A.shape} inconsistent with u {u.shape} and B {B.shape}")
    if D_skip.shape != (di,):
        raise ShapeError(f"D_skip must be [{di}], got {D_skip.shape}")

    batched = u.ndim == 3
    ud = u.data if batched else u.data[None]
    dd = delta.data if batched else delta.data[None]
    Bd = B.data if batched else B.data[None]
    Cd = C.data if batched else C.data[None]
    Ad, Dd = A.data, D_skip.data
    bsz, length, _ = ud.shape

    P = np.exp(dd[:, :, :, None] * Ad[None, None])            # [b, L, Di, S]
    dBu = (dd * ud)[:, :, :, None] * Bd[:, :, None, :]
    H = np.zeros((bsz, length + 1, di, s))
    for l in range(length):
        H[:, l + 1] = P[:, l] * H[:, l] + dBu[:, l]
    y = np.einsum("blds,bls->bld", H[:, 1:], Cd) + Dd * ud
    out = Tensor(y if batched else y[0])

    def bw(g):
        gy = g if batched else g[None]
        du = Dd * gy
        dD = (gy * ud).sum(axis=(0, 1))
        dC = np.einsum("bld,blds->bls", gy, H[:, 1:])
        ddelta = np.zeros_like(dd)
        dB = np.zeros_like(Bd)
        dA = np.zeros_like(Ad)
        gh = np.zeros((bsz, di, s))
        du_su = dd * ud
        for l in range(length - 1, -1, -1):
            gh = gh + gy[:, l, :, None] * Cd[:, l, None, :]
            dP = gh * H[:, l]                   # h_{l-1}
            pp = dP * P[:, l]
            ddelta[:, l] = (pp * Ad).sum(axis=-1)
            dA += (pp * dd[:, l, :, None]).sum(axis=0)
            dB[:, l] = (gh * du_su[:, l, :, None]).sum(axis=1)
            gdu = (gh * Bd[:, l, None, :]).sum(axis=-1)
            ddelta[:, l] += gdu * ud[:, l]
            du[:, l] += gdu * dd[:, l]
            gh = P[:, l] * gh
        if not batched:
            du, ddelta, dB, dC = du[0], ddelta[0], dB[0], dC[0]
        return du, ddelta, dB, dC, dA, dD

    return _record(out, (u, delta, B, C, A, D_skip), bw)
