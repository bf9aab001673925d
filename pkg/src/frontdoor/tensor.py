"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps a float64 ndarray together with a gradient slot and a
closure that knows how to push gradients to its inputs.  Calling
``backward()`` on a scalar result topologically sorts the recorded graph
and replays it in reverse.  Everything runs in float64 so that
finite-difference checks can be tight.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / frozen models)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad, shape):
    # Sum a broadcast gradient back down to the original operand shape.
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._prev = ()
        self._backward = None

    # -- graph plumbing ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self):
        return Tensor(self.data)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo = []
        seen = set()

        def build(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._prev:
                build(p)
            topo.append(t)

        build(self)
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for t in reversed(topo):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        out = _result(np.add(self.data, other.data), (self, other))
        if out._prev:

            def bwd(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g, self.data.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g, other.data.shape))

            out._backward = bwd
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = _as_tensor(other)
        out = _result(np.multiply(self.data, other.data), (self, other))
        if out._prev:

            def bwd(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g * other.data, self.data.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g * self.data, other.data.shape))

            out._backward = bwd
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __truediv__(self, other):
        other = _as_tensor(other)
        out = _result(np.divide(self.data, other.data), (self, other))
        if out._prev:

            def bwd(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g / other.data, self.data.shape))
                if other.requires_grad:
                    other._accumulate(
                        _unbroadcast(-g * self.data / other.data**2, other.data.shape)
                    )

            out._backward = bwd
        return out

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __matmul__(self, other):
        other = _as_tensor(other)
        out = _result(self.data @ other.data, (self, other))
        if out._prev:

            def bwd(g):
                if self.requires_grad:
                    self._accumulate(g @ other.data.T)
                if other.requires_grad:
                    other._accumulate(self.data.T @ g)

            out._backward = bwd
        return out

    # -- elementwise ---------------------------------------------------

    def relu(self):
        out = _result(np.maximum(self.data, 0.0), (self,))
        if out._prev:
            mask = self.data > 0

            def bwd(g):
                self._accumulate(g * mask)

            out._backward = bwd
        return out

    def exp(self):
        out = _result(np.exp(self.data), (self,))
        if out._prev:

            def bwd(g):
                self._accumulate(g * out.data)

            out._backward = bwd
        return out

    def log(self):
        out = _result(np.log(self.data), (self,))
        if out._prev:

            def bwd(g):
                self._accumulate(g / self.data)

            out._backward = bwd
        return out

    def sqrt(self):
        out = _result(np.sqrt(self.data), (self,))
        if out._prev:

            def bwd(g):
                # derivative at exactly 0 is taken as 0, not inf
                self._accumulate(g * 0.5 / np.where(out.data > 0, out.data, np.inf))

            out._backward = bwd
        return out

    def clip_min(self, floor):
        """Elementwise max(self, floor) for a scalar floor; gradient passes
        through wherever the input is at or above the floor."""
        out = _result(np.maximum(self.data, floor), (self,))
        if out._prev:
            mask = self.data >= floor

            def bwd(g):
                self._accumulate(g * mask)

            out._backward = bwd
        return out

    # -- shape / reduction ---------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _result(self.data.reshape(shape), (self,))
        if out._prev:

            def bwd(g):
                self._accumulate(g.reshape(self.data.shape))

            out._backward = bwd
        return out

    def sum(self, axis=None, keepdims=False):
        out = _result(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out._prev:

            def bwd(g):
                gg = g
                if axis is not None and not keepdims:
                    gg = np.expand_dims(gg, axis)
                self._accumulate(np.broadcast_to(gg, self.data.shape).copy())

            out._backward = bwd
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for ax in axes:
                n *= self.data.shape[ax]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, inputs):
    track = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        out._prev = tuple(inputs)
    return out


# -- structural ops ----------------------------------------------------


def concat(tensors, axis=0):
    """Concatenate along ``axis``; the gradient splits back at the seams."""
    datas = [t.data for t in tensors]
    out = _result(np.concatenate(datas, axis=axis), tuple(tensors))
    if out._prev:
        sizes = [d.shape[axis] for d in datas]
        splits = np.cumsum(sizes)[:-1]

        def bwd(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                if t.requires_grad:
                    t._accumulate(piece)

        out._backward = bwd
    return out


# -- convolution and friends ------------------------------------------


def _im2col(x, kh, kw, stride):
    # x is already padded, NCHW.  Returns (N*OH*OW, C*KH*KW) plus the
    # output spatial extents.
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    sn, sc, sh, sw = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    col = np.ascontiguousarray(view.transpose(0, 4, 5, 1, 2, 3))
    return col.reshape(n * oh * ow, c * kh * kw), oh, ow


def _col2im(dcol, x_shape, kh, kw, stride, oh, ow):
    # Scatter-add column gradients back onto the padded input.
    n, c, h, w = x_shape
    dx = np.zeros(x_shape)
    d = dcol.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += d[
                :, :, i, j
            ]
    return dx


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D convolution, NCHW input, (out_ch, in_ch, KH, KW) weight."""
    n, c, h, w = x.data.shape
    co, ci, kh, kw = weight.data.shape
    if ci != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, weight {ci}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(
            f"conv2d kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{w + 2 * padding}"
        )
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    col, oh, ow = _im2col(xp, kh, kw, stride)
    wmat = weight.data.reshape(co, ci * kh * kw)
    out_flat = col @ wmat.T
    if bias is not None:
        out_flat = out_flat + bias.data.reshape(1, co)
    out_data = out_flat.reshape(n, oh, ow, co).transpose(0, 3, 1, 2)
    inputs = (x, weight) if bias is None else (x, weight, bias)
    out = _result(out_data, inputs)
    if out._prev:
        padded_shape = xp.shape

        def bwd(g):
            g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, co)
            if bias is not None and bias.requires_grad:
                bias._accumulate(g2.sum(axis=0).reshape(bias.data.shape))
            if weight.requires_grad:
                weight._accumulate((g2.T @ col).reshape(weight.data.shape))
            if x.requires_grad:
                dcol = g2 @ wmat
                dxp = _col2im(dcol, padded_shape, kh, kw, stride, oh, ow)
                if padding:
                    dxp = dxp[:, :, padding:-padding, padding:-padding]
                x._accumulate(dxp)

        out._backward = bwd
    return out


def avg_pool2d(x, k):
    """Non-overlapping k x k average pooling on NCHW input."""
    n, c, h, w = x.data.shape
    if h % k or w % k:
        raise ValueError(f"avg_pool2d: spatial dims {h}x{w} not divisible by {k}")
    blocks = x.data.reshape(n, c, h // k, k, w // k, k)
    out = _result(blocks.mean(axis=(3, 5)), (x,))
    if out._prev:

        def bwd(g):
            gg = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
            x._accumulate(gg)

        out._backward = bwd
    return out


def upsample_nearest(x, factor):
    """Nearest-neighbour upsampling by an integer factor on NCHW input."""
    out_data = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    out = _result(out_data, (x,))
    if out._prev:
        n, c, h, w = x.data.shape

        def bwd(g):
            gsum = g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5))
            x._accumulate(gsum)

        out._backward = bwd
    return out


# -- classification heads ----------------------------------------------


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    out = _result(p, (x,))
    if out._prev:

        def bwd(g):
            dot = (g * p).sum(axis=axis, keepdims=True)
            x._accumulate(p * (g - dot))

        out._backward = bwd
    return out


def softmax_crossentropy(logits, labels):
    """Fused softmax + mean cross-entropy.

    Returns (scalar loss, detached probability Tensor).  The gradient of
    the loss w.r.t. the logits is (softmax - onehot) / N.
    """
    labels = np.asarray(labels)
    n, c = logits.data.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels outside [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    probs = np.exp(logp)
    loss_val = -logp[np.arange(n), labels].mean()
    out = _result(np.float64(loss_val), (logits,))
    if out._prev:

        def bwd(g):
            d = probs.copy()
            d[np.arange(n), labels] -= 1.0
            logits._accumulate(g * d / n)

        out._backward = bwd
    return out, Tensor(probs)


def nll_probs(probs, labels):
    """Mean negative log-likelihood of already-formed class probabilities."""
    labels = np.asarray(labels)
    n = probs.data.shape[0]
    picked = probs.data[np.arange(n), labels]
    out = _result(np.float64(-np.log(picked).mean()), (probs,))
    if out._prev:

        def bwd(g):
            d = np.zeros_like(probs.data)
            d[np.arange(n), labels] = -g / (n * picked)
            probs._accumulate(d)

        out._backward = bwd
    return out
