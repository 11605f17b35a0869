"""
Network layers built on the autodiff engine.

Convolution, pooling, batch normalization, the LSTM gate activation and the
loss are fused ops with hand-written backward closures; the LSTM recurrence
and dense layers are composed from autodiff primitives. Activations are laid
out [batch, length, channels].
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from autodiff import Tensor, as_tensor, concat, getitem, matmul, mul, relu, reshape, result, softmax, stack, tanh
from config import BN_EPSILON, BN_MOMENTUM, LSTM_FORGET_BIAS, POOL_SIZE, POOL_STRIDE
from errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "softmax", "none")


@dataclass
class LayerParams:
    """Trainable tensors plus persistent buffers (excluded from updates)."""
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.params[name]

    def add(self, name, array):
        if name in self.params or name in self.buffers:
            raise ConfigError(f"Duplicate layer parameter {name!r}")
        self.params[name] = Tensor(array, requires_grad=True)
        return self.params[name]

    def add_buffer(self, name, array):
        if name in self.params or name in self.buffers:
            raise ConfigError(f"Duplicate layer buffer {name!r}")
        self.buffers[name] = np.asarray(array, dtype=np.float64)

    def count(self):
        return sum(t.size for t in self.params.values())

    def buffer_count(self):
        return sum(b.size for b in self.buffers.values())


# Initializers

def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_conv1d(rng, in_ch, out_ch, kernel):
    layer = LayerParams()
    layer.add("kernel", glorot_uniform(rng, (kernel, in_ch, out_ch), kernel * in_ch, kernel * out_ch))
    layer.add("bias", np.zeros(out_ch))
    return layer


def init_batch_norm(channels):
    layer = LayerParams()
    layer.add("gamma", np.ones(channels))
    layer.add("beta", np.zeros(channels))
    layer.add_buffer("moving_mean", np.zeros(channels))
    layer.add_buffer("moving_var", np.ones(channels))
    return layer


def init_bilstm(rng, features, units):
    layer = LayerParams()
    for direction in ("forward", "backward"):
        bias = np.zeros(4 * units)
        bias[units:2 * units] = LSTM_FORGET_BIAS
        layer.add(f"{direction}_kernel", glorot_uniform(rng, (features, 4 * units), features, 4 * units))
        layer.add(f"{direction}_recurrent", glorot_uniform(rng, (units, 4 * units), units, 4 * units))
        layer.add(f"{direction}_bias", bias)
    return layer


def init_dense(rng, in_features, out_features):
    layer = LayerParams()
    layer.add("kernel", glorot_uniform(rng, (in_features, out_features), in_features, out_features))
    layer.add("bias", np.zeros(out_features))
    return layer


# Layers

def same_padding(kernel):
    left = (kernel - 1) // 2
    return left, kernel - 1 - left


def conv1d(x, params, stride=1):
    """Stride-1 cross-correlation with zero "same" padding."""
    x = as_tensor(x)
    weight, bias = params["kernel"], params["bias"]
    kernel, in_ch, out_ch = weight.shape
    if x.ndim != 3 or x.shape[2] != in_ch:
        raise ShapeError(f"conv1d: input {x.shape} does not match kernel {weight.shape}")
    if stride != 1:
        raise ConfigError(f"conv1d supports stride 1 only, got {stride}")
    batch, length, _ = x.shape
    left, right = same_padding(kernel)
    padded = np.pad(x.data, ((0, 0), (left, right), (0, 0)))
    # [B, L, C, K] -> rows of K*C taps
    cols = sliding_window_view(padded, kernel, axis=1).transpose(0, 1, 3, 2).reshape(batch * length, kernel * in_ch)
    flat_weight = weight.data.reshape(kernel * in_ch, out_ch)
    out = (cols @ flat_weight).reshape(batch, length, out_ch) + bias.data

    def backward(grad):
        grad2 = grad.reshape(batch * length, out_ch)
        if weight.requires_grad:
            weight.accumulate((cols.T @ grad2).reshape(kernel, in_ch, out_ch))
        if bias.requires_grad:
            bias.accumulate(grad.sum(axis=(0, 1)))
        if x.requires_grad:
            dcols = (grad2 @ flat_weight.T).reshape(batch, length, kernel, in_ch)
            dpadded = np.zeros_like(padded)
            for k in range(kernel):
                dpadded[:, k:k + length] += dcols[:, :, k]
            x.accumulate(dpadded[:, left:left + length])
    return result(out, (x, weight, bias), backward, "conv1d")


def pooled_length(length, size=POOL_SIZE, stride=POOL_STRIDE):
    return (length - size) // stride + 1


def maxpool1d(x, size=POOL_SIZE, stride=POOL_STRIDE):
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"maxpool1d: expected [batch, length, channels], got {x.shape}")
    batch, length, channels = x.shape
    if length < size:
        raise ShapeError(f"maxpool1d: length {length} is shorter than pool size {size}")
    windows = sliding_window_view(x.data, size, axis=1)[:, ::stride]
    argmax = windows.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]

    def backward(grad):
        positions = np.arange(out.shape[1])[None, :, None] * stride + argmax
        dx = np.zeros_like(x.data)
        b_idx = np.arange(batch)[:, None, None]
        c_idx = np.arange(channels)[None, None, :]
        np.add.at(dx, (b_idx, positions, c_idx), grad)
        x.accumulate(dx)
    return result(out, (x,), backward, "maxpool1d")


def batch_norm(x, params, training, epsilon=BN_EPSILON, momentum=BN_MOMENTUM):
    """Per-channel normalization over batch and length; training updates the moving statistics."""
    x = as_tensor(x)
    gamma, beta = params["gamma"], params["beta"]
    if x.ndim != 3 or x.shape[2] != gamma.shape[0]:
        raise ShapeError(f"batch_norm: input {x.shape} does not match {gamma.shape[0]} channels")
    count = x.shape[0] * x.shape[1]
    if training:
        if count < 2:
            raise ShapeError(f"batch_norm: training needs more than one value per channel, got input {x.shape}")
        mean = x.data.mean(axis=(0, 1))
        var = x.data.var(axis=(0, 1))
        buffers = params.buffers
        buffers["moving_mean"] = momentum * buffers["moving_mean"] + (1.0 - momentum) * mean
        buffers["moving_var"] = momentum * buffers["moving_var"] + (1.0 - momentum) * var
    else:
        mean, var = params.buffers["moving_mean"], params.buffers["moving_var"]
    inv_std = 1.0 / np.sqrt(var + epsilon)
    normalized = (x.data - mean) * inv_std
    out = normalized * gamma.data + beta.data

    def backward(grad):
        if gamma.requires_grad:
            gamma.accumulate((grad * normalized).sum(axis=(0, 1)))
        if beta.requires_grad:
            beta.accumulate(grad.sum(axis=(0, 1)))
        if x.requires_grad:
            dnorm = grad * gamma.data
            if training:
                dx = inv_std / count * (count * dnorm - dnorm.sum(axis=(0, 1))
                                        - normalized * (dnorm * normalized).sum(axis=(0, 1)))
            else:
                dx = dnorm * inv_std
            x.accumulate(dx)
    return result(out, (x, gamma, beta), backward, "batch_norm")


def lstm_gates(z, units):
    """Activate packed pre-activations [i | f | c | o]: sigmoid, sigmoid, tanh, sigmoid."""
    z = as_tensor(z)
    out = expit(z.data)
    candidate = slice(2 * units, 3 * units)
    out[:, candidate] = np.tanh(z.data[:, candidate])

    def backward(grad):
        local = out * (1.0 - out)
        local[:, candidate] = 1.0 - out[:, candidate] ** 2
        z.accumulate(grad * local)
    return result(out, (z,), backward, "lstm_gates")


def _run_direction(projected, recurrent, steps, units):
    batch = projected.shape[0]
    h = Tensor(np.zeros((batch, units)))
    c = Tensor(np.zeros((batch, units)))
    hidden = []
    for t in steps:
        gates = lstm_gates(getitem(projected, (slice(None), t)) + matmul(h, recurrent), units)
        i, f, g, o = (getitem(gates, (slice(None), slice(k * units, (k + 1) * units))) for k in range(4))
        c = mul(f, c) + mul(i, g)
        h = mul(o, tanh(c))
        hidden.append(h)
    return hidden


def bilstm(x, params, return_sequences=True):
    """Bidirectional LSTM over [batch, length, features].

    Returns (outputs [batch, length, 2*units] or None, final [batch, 2*units]);
    final joins the forward state after the last step with the backward state
    after the first.
    """
    x = as_tensor(x)
    kernel = params["forward_kernel"]
    features, units = kernel.shape[0], kernel.shape[1] // 4
    if x.ndim != 3 or x.shape[2] != features:
        raise ShapeError(f"bilstm: input {x.shape} does not match kernel {kernel.shape}")
    batch, length, _ = x.shape
    if length < 1:
        raise ShapeError("bilstm: sequence must have at least one step")
    flat = reshape(x, (batch * length, features))

    hidden = {}
    for direction, steps in (("forward", range(length)), ("backward", range(length - 1, -1, -1))):
        projected = reshape(matmul(flat, params[f"{direction}_kernel"]), (batch, length, 4 * units))
        projected = projected + params[f"{direction}_bias"]
        hidden[direction] = _run_direction(projected, params[f"{direction}_recurrent"], steps, units)

    final = concat([hidden["forward"][-1], hidden["backward"][-1]], axis=-1)
    if not return_sequences:
        return None, final
    outputs = concat([stack(hidden["forward"], axis=1), stack(hidden["backward"][::-1], axis=1)], axis=-1)
    return outputs, final


def dense(x, params, activation="none"):
    x = as_tensor(x)
    kernel = params["kernel"]
    if x.ndim != 2 or x.shape[1] != kernel.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match kernel {kernel.shape}")
    out = matmul(x, kernel) + params["bias"]
    if activation == "relu":
        return relu(out)
    if activation == "softmax":
        return softmax(out, axis=-1)
    if activation != "none":
        raise ConfigError(f"Unknown activation {activation!r}; expected one of {ACTIVATIONS}")
    return out


def mse_loss(pred, target, strict=True):
    """Mean over batch and classes of the squared difference to a one-hot target."""
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} and target {target.shape} differ")
    if strict:
        one_hot = np.all((target == 0.0) | (target == 1.0), axis=-1) & (target.sum(axis=-1) == 1.0)
        if not np.all(one_hot):
            rows = np.flatnonzero(~one_hot)[:5].tolist()
            raise ShapeError(f"mse_loss: target rows {rows} are not one-hot")
    diff = pred.data - target

    def backward(grad):
        pred.accumulate(grad * 2.0 * diff / diff.size)
    return result(np.mean(diff * diff), (pred,), backward, "mse_loss")


def one_hot(labels, num_classes):
    """Mode ids 1..num_classes to one-hot rows."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels - 1] = 1.0
    return out


# Multiply-accumulate estimates (one MAC per weight use; activations and norms ignored)

def conv1d_macs(length, in_ch, out_ch, kernel):
    return length * kernel * in_ch * out_ch


def bilstm_macs(length, features, units):
    return 2 * length * 4 * units * (features + units)


def dense_macs(in_features, out_features):
    return in_features * out_features
