"""
Feature-pyramid CNN + biLSTM classifier.

Every input channel runs through its own convolution stack (batch norm
before selected layers, conv, ReLU, max-pool). At each tapped pool level the
streams are concatenated along the feature axis and read by an independent
biLSTM; the final biLSTM states are concatenated and classified by the dense
head.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from autodiff import Tensor, concat, relu
from config import (BILSTM_UNITS, CONV_STACK, DEFAULT_CHANNELS, DENSE_SIZES, NUM_CLASSES,
                    POOL_SIZE, POOL_STRIDE, PYRAMID_TAPS, TARGET_HZ, WINDOW_S)
from dsp import CHANNEL_WIDTHS
from errors import ConfigError, ShapeError
from layers import (batch_norm, bilstm, bilstm_macs, conv1d, conv1d_macs, dense, dense_macs,
                    init_batch_norm, init_bilstm, init_conv1d, init_dense, maxpool1d, pooled_length)

logger = logging.getLogger(__name__)

L2_PARAMETERS = frozenset({"dense1.kernel"})


def _default_widths():
    return tuple(CHANNEL_WIDTHS[name.split("_")[1]] for name in DEFAULT_CHANNELS)


@dataclass(frozen=True)
class ModelConfig:
    channel_widths: tuple = field(default_factory=_default_widths)
    conv_stack: tuple = CONV_STACK
    num_conv_layers: int = len(CONV_STACK)
    pyramid_taps: tuple = PYRAMID_TAPS
    bilstm_units: int = BILSTM_UNITS
    dense_sizes: tuple = DENSE_SIZES
    pool_size: int = POOL_SIZE
    pool_stride: int = POOL_STRIDE

    def __post_init__(self):
        stack = tuple((int(f), int(k), bool(bn)) for f, k, bn in self.conv_stack)
        object.__setattr__(self, "conv_stack", stack)
        object.__setattr__(self, "channel_widths", tuple(int(w) for w in self.channel_widths))
        object.__setattr__(self, "pyramid_taps", tuple(sorted({int(t) for t in self.pyramid_taps})))
        object.__setattr__(self, "dense_sizes", tuple(int(d) for d in self.dense_sizes))

        if not self.channel_widths or any(w not in (1, 3) for w in self.channel_widths):
            raise ConfigError(f"Channel widths must be 1 or 3, got {self.channel_widths}")
        if any(f < 1 or k < 1 for f, k, _ in stack):
            raise ConfigError(f"Filters and kernels must be positive, got {stack}")
        if not 1 <= self.num_conv_layers <= len(stack):
            raise ConfigError(f"num_conv_layers must lie in 1..{len(stack)}, got {self.num_conv_layers}")
        if not self.pyramid_taps:
            raise ConfigError("At least one pyramid tap is required")
        outside = [t for t in self.pyramid_taps if not 1 <= t <= self.num_conv_layers]
        if outside:
            raise ConfigError(f"Pyramid taps {outside} reference pools beyond 1..{self.num_conv_layers}")
        if self.bilstm_units < 1:
            raise ConfigError(f"bilstm_units must be positive, got {self.bilstm_units}")
        if not self.dense_sizes or self.dense_sizes[-1] != NUM_CLASSES:
            raise ConfigError(f"The last dense layer must have {NUM_CLASSES} units, got {self.dense_sizes}")
        if self.pool_size < 1 or self.pool_stride < 1:
            raise ConfigError("Pool size and stride must be positive")

    @classmethod
    def for_features(cls, feature_cfg, **overrides):
        return cls(channel_widths=feature_cfg.widths, **overrides)

    def for_depth(self, depth):
        """Truncate to `depth` conv layers; keep the default taps that remain and always tap the last pool."""
        taps = {t for t in PYRAMID_TAPS if t <= depth} | {depth}
        return self.replace(num_conv_layers=depth, pyramid_taps=tuple(sorted(taps)))

    def replace(self, **changes):
        return ModelConfig(**{**self.to_dict(), **changes})

    @property
    def active_stack(self):
        return self.conv_stack[:self.num_conv_layers]

    @property
    def n_streams(self):
        return len(self.channel_widths)

    def tap_width(self, tap):
        return self.n_streams * self.conv_stack[tap - 1][0]

    def tap_lengths(self, input_length):
        lengths, length = {}, input_length
        for level in range(1, self.num_conv_layers + 1):
            length = pooled_length(length, self.pool_size, self.pool_stride)
            if length < 1:
                raise ShapeError(f"Input length {input_length} is too short for {self.num_conv_layers} pooling layers")
            lengths[level] = length
        return {tap: lengths[tap] for tap in self.pyramid_taps}

    def to_dict(self):
        return {
            "channel_widths": list(self.channel_widths),
            "conv_stack": [list(layer) for layer in self.conv_stack],
            "num_conv_layers": self.num_conv_layers,
            "pyramid_taps": list(self.pyramid_taps),
            "bilstm_units": self.bilstm_units,
            "dense_sizes": list(self.dense_sizes),
            "pool_size": self.pool_size,
            "pool_stride": self.pool_stride,
        }

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown model settings {sorted(unknown)}")
        return cls(**data)


@dataclass
class ModelSummary:
    parameter_count: int
    non_trainable_count: int
    input_length: int
    tap_lengths: dict
    tap_widths: dict
    macs: int
    rows: list

    @property
    def pyramid_vector(self):
        return sum(2 * r["units"] for r in self.rows if r["kind"] == "bilstm")

    def to_text(self):
        lines = [f"{'layer':<18}{'output shape':<18}{'params':>10}", "-" * 46]
        for row in self.rows:
            shape = "x".join(str(d) for d in row["shape"])
            lines.append(f"{row['name']:<18}{shape:<18}{row['params']:>10,}")
        lines.append("-" * 46)
        lines.append(f"Trainable parameters: {self.parameter_count:,}")
        lines.append(f"Non-trainable parameters: {self.non_trainable_count:,}")
        lines.append(f"Input length: {self.input_length}; taps "
                     + ", ".join(f"{t}: {self.tap_lengths[t]}x{self.tap_widths[t]}" for t in self.tap_lengths))
        lines.append(f"Multiply-accumulates per frame: {self.macs:,}")
        return "\n".join(lines)


class FPbiLSTM:
    """Parameters and forward pass of the pyramid network."""

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.layers = {}
        for stream, width in enumerate(cfg.channel_widths):
            in_ch = width
            for level, (filters, kernel, use_bn) in enumerate(cfg.active_stack, 1):
                if use_bn:
                    self.layers[f"stream{stream}.bn{level}"] = init_batch_norm(in_ch)
                self.layers[f"stream{stream}.conv{level}"] = init_conv1d(rng, in_ch, filters, kernel)
                in_ch = filters
        for tap in cfg.pyramid_taps:
            self.layers[f"tap{tap}"] = init_bilstm(rng, cfg.tap_width(tap), cfg.bilstm_units)
        in_features = 2 * cfg.bilstm_units * len(cfg.pyramid_taps)
        for index, size in enumerate(cfg.dense_sizes, 1):
            self.layers[f"dense{index}"] = init_dense(rng, in_features, size)
            in_features = size

    def named_parameters(self):
        return {f"{layer}.{name}": tensor
                for layer, params in self.layers.items() for name, tensor in params.params.items()}

    def named_buffers(self):
        return {f"{layer}.{name}": array
                for layer, params in self.layers.items() for name, array in params.buffers.items()}

    def parameter_count(self):
        return sum(p.count() for p in self.layers.values())

    def non_trainable_count(self):
        return sum(p.buffer_count() for p in self.layers.values())

    def zero_grad(self):
        for tensor in self.named_parameters().values():
            tensor.zero_grad()

    def state_dict(self):
        state = {f"params/{name}": t.data.copy() for name, t in self.named_parameters().items()}
        state.update({f"buffers/{name}": a.copy() for name, a in self.named_buffers().items()})
        return state

    def load_state(self, state):
        params, buffers = self.named_parameters(), self.named_buffers()
        expected = {f"params/{n}" for n in params} | {f"buffers/{n}" for n in buffers}
        missing, extra = expected - set(state), set(state) - expected
        if missing or extra:
            raise ShapeError(f"State does not fit this model: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for key, value in state.items():
            kind, name = key.split("/", 1)
            layer, field_name = name.rsplit(".", 1)
            current = params[name].data if kind == "params" else buffers[name]
            if current.shape != np.shape(value):
                raise ShapeError(f"{name}: stored shape {np.shape(value)} differs from model shape {current.shape}")
            if kind == "params":
                params[name].data = np.array(value, dtype=np.float64)
            else:
                self.layers[layer].buffers[field_name] = np.array(value, dtype=np.float64)

    def _check_inputs(self, inputs):
        widths = tuple(np.shape(x)[-1] for x in inputs)
        if widths != self.cfg.channel_widths:
            raise ShapeError(f"Input channel widths {widths} do not match model widths {self.cfg.channel_widths}")
        shapes = {np.shape(x)[:2] for x in inputs}
        if len(shapes) != 1:
            raise ShapeError(f"Input channels disagree on [batch, length]: {sorted(shapes)}")

    def forward(self, inputs, training=False, return_taps=False):
        """inputs: one [batch, length, width] array per channel. Returns class probabilities [batch, 8]."""
        inputs = getattr(inputs, "arrays", inputs)
        self._check_inputs(inputs)
        cfg = self.cfg
        pooled = {tap: [] for tap in cfg.pyramid_taps}
        for stream, x in enumerate(inputs):
            x = Tensor(x)
            for level, (_, _, use_bn) in enumerate(cfg.active_stack, 1):
                if use_bn:
                    x = batch_norm(x, self.layers[f"stream{stream}.bn{level}"], training)
                x = relu(conv1d(x, self.layers[f"stream{stream}.conv{level}"]))
                if x.shape[1] < cfg.pool_size:
                    raise ShapeError(f"Input length {np.shape(inputs[0])[1]} is too short for {cfg.num_conv_layers} pooling layers")
                x = maxpool1d(x, cfg.pool_size, cfg.pool_stride)
                if level in pooled:
                    pooled[level].append(x)

        taps = {tap: concat(streams, axis=-1) for tap, streams in pooled.items()}
        finals = [bilstm(taps[tap], self.layers[f"tap{tap}"], return_sequences=False)[1]
                  for tap in cfg.pyramid_taps]
        x = concat(finals, axis=-1)
        last = len(cfg.dense_sizes)
        for index in range(1, last + 1):
            x = dense(x, self.layers[f"dense{index}"], "softmax" if index == last else "relu")
        return (x, taps) if return_taps else x

    def predict_proba(self, inputs, batch_size=50):
        inputs = getattr(inputs, "arrays", inputs)
        total = np.shape(inputs[0])[0]
        chunks = [self.forward([x[start:start + batch_size] for x in inputs]).data
                  for start in range(0, total, batch_size)]
        return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, NUM_CLASSES))


def predict(probs):
    """Mode ids (1-based) of the highest score per row; ties go to the smallest id."""
    probs = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return np.argmax(probs, axis=1).astype(np.int64) + 1


def summarize(cfg, input_length=int(WINDOW_S * TARGET_HZ)):
    model = FPbiLSTM(cfg)
    tap_lengths = cfg.tap_lengths(input_length)
    rows, macs = [], 0

    for stream, width in enumerate(cfg.channel_widths):
        length, in_ch = input_length, width
        for level, (filters, kernel, use_bn) in enumerate(cfg.active_stack, 1):
            if use_bn:
                name = f"stream{stream}.bn{level}"
                rows.append({"name": name, "kind": "batch_norm", "shape": (length, in_ch),
                             "params": model.layers[name].count()})
            name = f"stream{stream}.conv{level}"
            rows.append({"name": name, "kind": "conv1d", "shape": (length, filters),
                         "params": model.layers[name].count()})
            macs += conv1d_macs(length, in_ch, filters, kernel)
            length, in_ch = pooled_length(length, cfg.pool_size, cfg.pool_stride), filters
            rows.append({"name": f"stream{stream}.pool{level}", "kind": "maxpool1d",
                         "shape": (length, filters), "params": 0})

    for tap in cfg.pyramid_taps:
        name = f"tap{tap}"
        rows.append({"name": name, "kind": "bilstm", "units": cfg.bilstm_units,
                     "shape": (2 * cfg.bilstm_units,), "params": model.layers[name].count()})
        macs += bilstm_macs(tap_lengths[tap], cfg.tap_width(tap), cfg.bilstm_units)

    in_features = 2 * cfg.bilstm_units * len(cfg.pyramid_taps)
    for index, size in enumerate(cfg.dense_sizes, 1):
        name = f"dense{index}"
        rows.append({"name": name, "kind": "dense", "shape": (size,), "params": model.layers[name].count()})
        macs += dense_macs(in_features, size)
        in_features = size

    return ModelSummary(
        parameter_count=model.parameter_count(),
        non_trainable_count=model.non_trainable_count(),
        input_length=input_length,
        tap_lengths=tap_lengths,
        tap_widths={tap: cfg.tap_width(tap) for tap in cfg.pyramid_taps},
        macs=int(macs),
        rows=rows,
    )
