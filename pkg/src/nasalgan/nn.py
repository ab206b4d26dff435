"""Minimal dense / 1-D convolutional network core with exact backpropagation.

Layers are plain numpy; parameters live on the layers and gradients
accumulate in matching buffers.  Beyond ordinary reverse-mode, the critic
loss needs the gradient of a gradient-norm penalty with respect to the
parameters; for the piecewise-linear layers used in the critic (dense,
conv1d, leaky relu, reshape, phase shuffle) this second pass is exact, since
the input-gradient map is itself linear in the parameters once the
activation masks are fixed.

Checkpoint format (``save_checkpoint`` / ``load_checkpoint``): magic
``b"NNCK"``, uint32 version (1), uint32 JSON-header length, JSON layer
specs, then each parameter tensor as raw little-endian float32 in layer
order.  All integers little-endian.
"""

from __future__ import annotations

import json
import struct

import numpy as np

CHECKPOINT_MAGIC = b"NNCK"
CHECKPOINT_VERSION = 1


class NumericalError(Exception):
    """Raised when training numerics go non-finite."""


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# conv1d primitives (shared by Conv1d, Conv1dTranspose, and the penalty pass)
# ---------------------------------------------------------------------------

def _im2col(x, kernel_width, stride, padding):
    """[B, C, L] -> [B, C, L_out, K] view of sliding windows."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(x, kernel_width, axis=2)
    return windows[:, :, ::stride, :]


def conv_out_len(length, kernel_width, stride, padding):
    return (length + 2 * padding - kernel_width) // stride + 1


def conv_transpose_out_len(length, kernel_width, stride, padding):
    return (length - 1) * stride + kernel_width - 2 * padding


def conv1d_core(x, weight, stride, padding):
    """Cross-correlation: x [B,C,L], weight [O,C,K] -> [B,O,L_out]."""
    cols = _im2col(x, weight.shape[2], stride, padding)
    return np.einsum("bclk,ock->bol", cols, weight, optimize=True)


def conv1d_kernel_grad(x, dy, stride, padding, kernel_width):
    """Gradient of conv1d_core w.r.t. weight, given input x and upstream dy."""
    cols = _im2col(x, kernel_width, stride, padding)
    return np.einsum("bol,bclk->ock", dy, cols, optimize=True)


def conv1d_input_grad(dy, weight, stride, padding, in_len):
    """Gradient of conv1d_core w.r.t. x; exact adjoint of the forward map."""
    out_ch, in_ch, k = weight.shape
    batch, _, out_len = dy.shape
    # column gradients, then scatter each kernel tap back onto the input axis
    dcols = np.einsum("bol,ock->bclk", dy, weight, optimize=True)
    dx = np.zeros((batch, in_ch, in_len + 2 * padding), dtype=dy.dtype)
    span = stride * (out_len - 1) + 1
    for tap in range(k):
        dx[:, :, tap:tap + span:stride] += dcols[:, :, :, tap]
    return dx[:, :, padding:padding + in_len]


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class Layer:
    """Base layer; subclasses fill in forward / backward and (optionally)
    the penalty-pass hooks ``backward_nograd`` / ``gp_push``."""

    def params(self):
        return []

    def grads(self):
        return []

    def zero_grad(self):
        for g in self.grads():
            g[...] = 0

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def backward_nograd(self, dy):
        """Input gradient only, stashing ``dy`` for a following gp_push."""
        raise NotImplementedError(f"{type(self).__name__} has no penalty-pass support")

    def gp_push(self, u):
        """Second-order pass: accumulate d(penalty)/d(params) given the
        upstream ``u`` at this layer's input side, return the upstream for
        the next layer toward the output."""
        raise NotImplementedError(f"{type(self).__name__} has no penalty-pass support")

    def spec(self):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        self.dtype = dtype
        rng = rng or np.random.default_rng(0)
        self.W = glorot_uniform(rng, (out_features, in_features), in_features, out_features, dtype)
        self.b = np.zeros(out_features, dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def forward(self, x):
        self._x = x
        return x @ self.W.T + self.b

    def backward(self, dy):
        self.dW += dy.T @ self._x
        self.db += dy.sum(axis=0)
        return dy @ self.W

    def backward_nograd(self, dy):
        self._g_out = dy
        return dy @ self.W

    def gp_push(self, u):
        self.dW += self._g_out.T @ u
        return u @ self.W.T

    def spec(self):
        return {"kind": "dense", "in_features": self.in_features,
                "out_features": self.out_features}


class Conv1d(Layer):
    def __init__(self, in_channels, out_channels, kernel_width, stride=1,
                 padding=0, rng=None, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_width = kernel_width
        self.stride = stride
        self.padding = padding
        self.dtype = dtype
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel_width
        fan_out = out_channels * kernel_width
        self.W = glorot_uniform(rng, (out_channels, in_channels, kernel_width),
                                fan_in, fan_out, dtype)
        self.b = np.zeros(out_channels, dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ValueError(f"conv1d expected [B, {self.in_channels}, L], got {x.shape}")
        if conv_out_len(x.shape[2], self.kernel_width, self.stride, self.padding) < 1:
            raise ValueError("conv1d output length < 1")
        self._x = x
        return conv1d_core(x, self.W, self.stride, self.padding) + self.b[None, :, None]

    def backward(self, dy):
        self.dW += conv1d_kernel_grad(self._x, dy, self.stride, self.padding, self.kernel_width)
        self.db += dy.sum(axis=(0, 2))
        return conv1d_input_grad(dy, self.W, self.stride, self.padding, self._x.shape[2])

    def backward_nograd(self, dy):
        self._g_out = dy
        return conv1d_input_grad(dy, self.W, self.stride, self.padding, self._x.shape[2])

    def gp_push(self, u):
        self.dW += conv1d_kernel_grad(u, self._g_out, self.stride, self.padding, self.kernel_width)
        return conv1d_core(u, self.W, self.stride, self.padding)

    def spec(self):
        return {"kind": "conv1d", "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel_width": self.kernel_width,
                "stride": self.stride, "padding": self.padding}


class Conv1dTranspose(Layer):
    """Exact adjoint of Conv1d with the same (kernel, stride, padding)."""

    def __init__(self, in_channels, out_channels, kernel_width, stride=1,
                 padding=0, rng=None, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_width = kernel_width
        self.stride = stride
        self.padding = padding
        self.dtype = dtype
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel_width
        fan_out = out_channels * kernel_width
        # stored in the adjoint conv's layout: [in_channels, out_channels, K]
        self.W = glorot_uniform(rng, (in_channels, out_channels, kernel_width),
                                fan_in, fan_out, dtype)
        self.b = np.zeros(out_channels, dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def out_len(self, in_len):
        return conv_transpose_out_len(in_len, self.kernel_width, self.stride, self.padding)

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ValueError(f"conv1d_transpose expected [B, {self.in_channels}, L], got {x.shape}")
        out_len = self.out_len(x.shape[2])
        if out_len < 1:
            raise ValueError("conv1d_transpose output length < 1")
        self._x = x
        y = conv1d_input_grad(x, self.W, self.stride, self.padding, out_len)
        return y + self.b[None, :, None]

    def backward(self, dy):
        self.dW += conv1d_kernel_grad(dy, self._x, self.stride, self.padding, self.kernel_width)
        self.db += dy.sum(axis=(0, 2))
        return conv1d_core(dy, self.W, self.stride, self.padding)

    def backward_nograd(self, dy):
        self._g_out = dy
        return conv1d_core(dy, self.W, self.stride, self.padding)

    def gp_push(self, u):
        self.dW += conv1d_kernel_grad(self._g_out, u, self.stride, self.padding, self.kernel_width)
        return conv1d_input_grad(u, self.W, self.stride, self.padding,
                                 self.out_len(u.shape[2]))

    def spec(self):
        return {"kind": "conv1d_transpose", "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel_width": self.kernel_width,
                "stride": self.stride, "padding": self.padding}


class LeakyReLU(Layer):
    def __init__(self, negative_slope=0.2):
        self.negative_slope = negative_slope

    def forward(self, x):
        self._mask = np.where(x > 0, 1.0, self.negative_slope).astype(x.dtype)
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask

    backward_nograd = backward
    gp_push = backward

    def spec(self):
        return {"kind": "leaky_relu", "negative_slope": self.negative_slope}


class Tanh(Layer):
    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, dy):
        return dy * (1.0 - self._y ** 2)

    def spec(self):
        return {"kind": "tanh"}


class Reshape(Layer):
    """Reshape trailing dims, keeping the batch axis."""

    def __init__(self, out_shape):
        self.out_shape = tuple(out_shape)

    def forward(self, x):
        self._in_shape = x.shape
        return x.reshape((x.shape[0],) + self.out_shape)

    def backward(self, dy):
        return dy.reshape(self._in_shape)

    backward_nograd = backward
    gp_push = forward

    def spec(self):
        return {"kind": "reshape", "out_shape": list(self.out_shape)}


class PhaseShuffle(Layer):
    """Per-example random time shift with reflected edges (critic regularizer)."""

    def __init__(self, radius, rng=None):
        if radius < 0:
            raise ValueError("radius must be >= 0")
        self.radius = radius
        self.rng = rng or np.random.default_rng(0)

    def _index_map(self, length, shift):
        idx = np.arange(length) - shift
        # reflect without repeating the edge sample
        idx = np.abs(idx)
        over = idx > length - 1
        idx[over] = 2 * (length - 1) - idx[over]
        return idx

    def forward(self, x):
        batch, _, length = x.shape
        if self.radius >= length:
            raise ValueError(f"shuffle radius {self.radius} >= length {length}")
        shifts = self.rng.integers(-self.radius, self.radius + 1, size=batch)
        self._maps = np.stack([self._index_map(length, s) for s in shifts])
        self._length = length
        return np.take_along_axis(x, self._maps[:, None, :], axis=2)

    def backward(self, dy):
        dx = np.zeros_like(dy)
        maps = np.broadcast_to(self._maps[:, None, :], dy.shape)
        np.add.at(dx, (np.arange(dy.shape[0])[:, None, None],
                       np.arange(dy.shape[1])[None, :, None], maps), dy)
        return dx

    def backward_nograd(self, dy):
        return self.backward(dy)

    def gp_push(self, u):
        return np.take_along_axis(u, self._maps[:, None, :], axis=2)

    def spec(self):
        return {"kind": "phase_shuffle", "radius": self.radius}


def shift_reflect(x, shift):
    """Reference single-channel shift used by PhaseShuffle, for oracles."""
    length = len(x)
    idx = np.arange(length) - shift
    idx = np.abs(idx)
    over = idx > length - 1
    idx[over] = 2 * (length - 1) - idx[over]
    return np.asarray(x)[idx]


LAYER_KINDS = {
    "dense": Dense,
    "conv1d": Conv1d,
    "conv1d_transpose": Conv1dTranspose,
    "leaky_relu": LeakyReLU,
    "tanh": Tanh,
    "reshape": Reshape,
    "phase_shuffle": PhaseShuffle,
}


def layer_from_spec(spec):
    kind = spec["kind"]
    kwargs = {k: v for k, v in spec.items() if k != "kind"}
    if kind not in LAYER_KINDS:
        raise ValueError(f"unknown layer kind {kind!r}")
    return LAYER_KINDS[kind](**kwargs)


# ---------------------------------------------------------------------------
# network container
# ---------------------------------------------------------------------------

class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        return [p for l in self.layers for p in l.params()]

    def grads(self):
        return [g for l in self.layers for g in l.grads()]

    def zero_grad(self):
        for l in self.layers:
            l.zero_grad()

    def forward(self, x):
        for l in self.layers:
            x = l.forward(x)
        return x

    __call__ = forward

    def backward(self, dy):
        """Accumulate parameter gradients; returns the input gradient."""
        for l in reversed(self.layers):
            dy = l.backward(dy)
        return dy

    def input_gradient(self, dy):
        """Input gradient of the last forward pass, no parameter accumulation.

        Stashes intermediates so a following :meth:`gp_accumulate` can take
        the penalty pass.
        """
        for l in reversed(self.layers):
            dy = l.backward_nograd(dy)
        return dy

    def gp_accumulate(self, u):
        """Accumulate d(penalty)/d(params) for a penalty that is a function
        of the input gradient; ``u`` is d(penalty)/d(input gradient)."""
        for l in self.layers:
            u = l.gp_push(u)
        return u

    def specs(self):
        return [l.spec() for l in self.layers]


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamState:
    def __init__(self, params, alpha=1e-4, beta1=0.5, beta2=0.9, eps=1e-8):
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]


def adam_step(params, grads, state: AdamState):
    """Standard Adam update with bias correction, in place.

    Aborts (raising :class:`NumericalError`) on any non-finite gradient,
    leaving parameters and state untouched.
    """
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter {i}")
    state.t += 1
    b1t = 1.0 - state.beta1 ** state.t
    b2t = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= state.alpha * (m / b1t) / (np.sqrt(v / b2t) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def categorical_cross_entropy(logits, targets):
    """Mean negative log softmax probability of the target class.

    ``targets`` may be one-hot rows or integer class indices.  Returns
    (loss, d loss / d logits).
    """
    targets = np.asarray(targets)
    if targets.ndim == 2:
        idx = targets.argmax(axis=1)
    else:
        idx = targets.astype(int)
    batch = logits.shape[0]
    probs = softmax(logits)
    loss = -np.mean(np.log(probs[np.arange(batch), idx] + 1e-300))
    grad = probs.copy()
    grad[np.arange(batch), idx] -= 1.0
    grad /= batch
    return loss, grad.astype(logits.dtype)


def wgan_gp_critic_loss(critic: Sequential, real_batch, fake_batch, lam, rng):
    """Wasserstein critic loss with gradient penalty; accumulates gradients.

    Loss = mean C(fake) - mean C(real) + lam * mean((||grad_xhat C|| - 1)^2)
    with xhat a per-sample convex combination of real and fake drawn from
    ``rng``.  Parameter gradients (including the exact penalty second-order
    term) are accumulated into the critic's grad buffers.  Returns
    (loss, penalty).
    """
    batch = real_batch.shape[0]
    if fake_batch.shape != real_batch.shape:
        raise ValueError("real and fake batches must share a shape")
    ones = np.ones((batch, 1), dtype=real_batch.dtype)

    c_real = critic.forward(real_batch)
    critic.backward(-ones / batch)
    c_fake = critic.forward(fake_batch)
    critic.backward(ones / batch)
    wloss = float(c_fake.mean() - c_real.mean())

    penalty = 0.0
    if lam != 0.0:
        eps = rng.uniform(size=(batch,) + (1,) * (real_batch.ndim - 1)).astype(real_batch.dtype)
        xhat = eps * real_batch + (1 - eps) * fake_batch
        critic.forward(xhat)
        g = critic.input_gradient(ones)
        norms = np.sqrt(np.sum(g.reshape(batch, -1) ** 2, axis=1))
        if not np.all(np.isfinite(norms)):
            raise NumericalError("non-finite interpolation gradient")
        penalty = float(np.mean((norms - 1.0) ** 2))
        safe = np.maximum(norms, 1e-12).reshape((batch,) + (1,) * (g.ndim - 1))
        coeff = (2.0 * lam / batch) * (norms - 1.0).reshape(safe.shape) / safe
        critic.gp_accumulate((coeff * g).astype(g.dtype))
    return wloss + lam * penalty, penalty


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(net: Sequential, path):
    header = json.dumps({"layers": net.specs(),
                         "shapes": [list(p.shape) for p in net.params()]}).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for p in net.params():
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_checkpoint(path, dtype=np.float32):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        hlen, = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        net = Sequential([layer_from_spec(s) for s in header["layers"]])
        for p, shape in zip(net.params(), header["shapes"]):
            if list(p.shape) != shape:
                raise ValueError(f"{path}: shape mismatch {p.shape} vs {shape}")
            raw = fh.read(int(np.prod(shape)) * 4)
            p[...] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(dtype)
    return net
