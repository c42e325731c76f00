"""Differentiable operations over Tensor plus parameter initializers.

Gradients are hand-derived per op and validated against central finite
differences in the test suite. Everything stays in float32.
"""

import math
from typing import Optional, Sequence, Union

import numpy as np

from ..errors import ShapeError
from .tensor import Parameter, Tensor

_EPS_PROB = 1e-7


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Union[Tensor, float]) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from None
    return Tensor(
        data, _parents=(a, b),
        _vjp=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def mul(a: Tensor, b: Union[Tensor, float]) -> Tensor:
    if isinstance(b, (int, float)):
        scale = float(b)
        a = _as_tensor(a)
        return Tensor(a.data * np.float32(scale), _parents=(a,),
                      _vjp=lambda g: (g * np.float32(scale),))
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from None
    return Tensor(
        data, _parents=(a, b),
        _vjp=lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with leading batch dimensions on either operand."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents disagree for {a.shape} @ {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: cannot multiply {a.shape} @ {b.shape}") from None

    def vjp(g):
        ga = gb = None
        if a.needs_grad():
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.needs_grad():
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor(data, _parents=(a, b), _vjp=vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, np.float32(0.0)), _parents=(x,),
                  _vjp=lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    y = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                 np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z)))).astype(np.float32)
    return Tensor(y, _parents=(x,), _vjp=lambda g: (g * y * (1.0 - y),))


def softmax_lastdim(x: Tensor) -> Tensor:
    """Row-stochastic softmax over the last axis, max-subtracted for stability."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    return Tensor(y, _parents=(x,), _vjp=vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize the last axis per position, then apply the affine pair."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} do not match feature dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = (xc * inv).astype(np.float32)
    out = xhat * gain.data + bias.data

    def vjp(g):
        gx = ggain = gbias = None
        if gain.needs_grad():
            ggain = _unbroadcast(g * xhat, gain.shape)
        if bias.needs_grad():
            gbias = _unbroadcast(g, bias.shape)
        if x.needs_grad():
            gh = g * gain.data
            gx = (gh - gh.mean(axis=-1, keepdims=True)
                  - xhat * (gh * xhat).mean(axis=-1, keepdims=True)) * inv
        return gx, ggain, gbias

    return Tensor(out.astype(np.float32), _parents=(x, gain, bias), _vjp=vjp)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def ffn(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Position-wise feed-forward: linear, ReLU, linear."""
    return linear(relu(linear(x, w1, b1)), w2, b2)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of `table`; gradient scatter-adds into the gathered rows."""
    ids = np.asarray(ids)
    v = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        bad = int(ids.max() if ids.max() >= v else ids.min())
        raise IndexError(f"token id {bad} outside embedding table of {v} rows")
    out = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return Tensor(out, _parents=(table,), _vjp=vjp)


def concat_lastdim(parts: Sequence[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[..., offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return Tensor(data, _parents=tuple(parts), _vjp=vjp)


def transpose_last2(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise ShapeError(f"transpose_last2 needs rank >= 2, got {x.shape}")
    return Tensor(np.swapaxes(x.data, -1, -2).copy(), _parents=(x,),
                  _vjp=lambda g: (np.swapaxes(g, -1, -2),))


def slice_seq(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice along the sequence axis (second to last)."""
    if x.ndim < 2:
        raise ShapeError(f"slice_seq needs rank >= 2, got {x.shape}")
    n = x.shape[-2]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice_seq [{start}:{stop}] out of range for extent {n}")

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[..., start:stop, :] = g
        return (gx,)

    return Tensor(x.data[..., start:stop, :].copy(), _parents=(x,), _vjp=vjp)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from None
    return Tensor(data, _parents=(x,), _vjp=lambda g: (g.reshape(x.shape),))


def sum_all(x: Tensor) -> Tensor:
    return Tensor(x.data.sum(), _parents=(x,),
                  _vjp=lambda g: (np.broadcast_to(g, x.shape).astype(np.float32),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return Tensor(x.data.mean(), _parents=(x,),
                  _vjp=lambda g: ((np.broadcast_to(g, x.shape) / np.float32(n)).astype(np.float32),))


def bce_loss(p: Tensor, y: Union[np.ndarray, float]) -> Tensor:
    """Binary cross-entropy, mean over elements, probabilities clamped to
    [1e-7, 1 - 1e-7] so perfect predictions stay finite."""
    y = np.asarray(y, dtype=np.float32)
    if y.shape != p.shape:
        y = np.broadcast_to(y, p.shape).astype(np.float32)
    pc = np.clip(p.data, _EPS_PROB, 1.0 - _EPS_PROB)
    losses = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    n = max(losses.size, 1)

    def vjp(g):
        return ((g * (pc - y) / (pc * (1.0 - pc)) / np.float32(n)).astype(np.float32),)

    return Tensor(np.float32(losses.mean()) if losses.size else np.float32(0.0),
                  _parents=(p,), _vjp=vjp)


def ce_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Cross-entropy of log-softmax(logits) against integer targets,
    mean over every position (padding included by design)."""
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(
            f"ce_loss: targets {targets.shape} do not match logits {logits.shape[:-1]}"
        )
    v = logits.shape[-1]
    flat = logits.data.reshape(-1, v)
    tgt = targets.reshape(-1)
    if tgt.size and (tgt.min() < 0 or tgt.max() >= v):
        bad = int(tgt.max() if tgt.max() >= v else tgt.min())
        raise IndexError(f"target id {bad} outside {v} classes")
    n = flat.shape[0]
    m = flat.max(axis=-1, keepdims=True)
    z = flat - m
    lse = np.log(np.exp(z).sum(axis=-1))
    picked = z[np.arange(n), tgt]
    loss = np.float32((lse - picked).mean())

    def vjp(g):
        probs = np.exp(z - lse[:, None])
        probs[np.arange(n), tgt] -= 1.0
        return ((g * probs / np.float32(n)).reshape(logits.shape).astype(np.float32),)

    return Tensor(loss, _parents=(logits,), _vjp=vjp)


def init_params(shape: tuple[int, ...], rng: np.random.Generator,
                scheme: str = "uniform-scaled") -> np.ndarray:
    """Initializer data: scaled-uniform (Glorot-style) or zeros."""
    if scheme == "zeros":
        return np.zeros(shape, dtype=np.float32)
    if scheme == "uniform-scaled":
        fan_in = shape[0] if len(shape) > 1 else shape[0]
        fan_out = shape[-1]
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape).astype(np.float32)
    raise ValueError(f"unknown init scheme {scheme!r}")


def uniform_param(shape: tuple[int, ...], rng: np.random.Generator, name: str) -> Parameter:
    return Parameter(init_params(shape, rng, "uniform-scaled"), name=name)


def zeros_param(shape: tuple[int, ...], name: str) -> Parameter:
    return Parameter(init_params(shape, np.random.default_rng(0), "zeros"), name=name)


def _attach_operators():
    Tensor.__add__ = lambda self, other: add(self, other)
    Tensor.__radd__ = lambda self, other: add(self, other)
    Tensor.__mul__ = lambda self, other: mul(self, other)
    Tensor.__rmul__ = lambda self, other: mul(self, other)
    Tensor.__matmul__ = lambda self, other: matmul(self, other)
    Tensor.reshape = lambda self, shape: reshape(self, shape)


_attach_operators()
