"""Small numpy networks whose dense/conv layers can run in float or shift form.

Shift layers evaluate ``sign * x * 2**power`` in real arithmetic (exact in
binary floating point) and are *counted* as shift/add/sign-flip operations.
Gradients flow through every quantizer with a clipped straight-through
estimator.
"""
from __future__ import annotations

import copy
import enum
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .quant import (
    FixedPointFormat,
    RoundingMode,
    activation_pass_mask,
    dequantize,
    power_range,
    quantize_activation,
    quantize_ps,
    quantize_q,
    round_array,
)

CHECKPOINT_VERSION = 1
LN2 = math.log(2.0)


class NetworkError(ValueError):
    """Raised for malformed architectures or invalid conversions."""


class NumericOverflowError(ArithmeticError):
    def __init__(self, layer_index: int):
        super().__init__(f"non-finite activation produced by layer {layer_index}")
        self.layer_index = layer_index


class LayerMode(str, enum.Enum):
    FLOAT = "float"
    SHIFT_Q = "shift_q"
    SHIFT_PS = "shift_ps"


@dataclass
class OpCounts:
    multiplies: int = 0
    shifts: int = 0
    adds: int = 0
    sign_flips: int = 0

    def __add__(self, other: OpCounts) -> OpCounts:
        return OpCounts(
            self.multiplies + other.multiplies,
            self.shifts + other.shifts,
            self.adds + other.adds,
            self.sign_flips + other.sign_flips,
        )

    def scaled(self, factor: int) -> OpCounts:
        return OpCounts(
            self.multiplies * factor,
            self.shifts * factor,
            self.adds * factor,
            self.sign_flips * factor,
        )

    @classmethod
    def for_macs(cls, macs: int, shift: bool) -> OpCounts:
        if shift:
            return cls(shifts=macs, adds=macs, sign_flips=macs)
        return cls(multiplies=macs, adds=macs)


@dataclass(frozen=True)
class LayerSpec:
    """Architecture entry.

    ``dims`` by kind: dense ``in_features, out_features``; conv2d
    ``in_channels, out_channels, kernel, stride``; maxpool2d ``size``.
    """

    kind: str
    dims: dict = field(default_factory=dict)

    @classmethod
    def dense(cls, in_features: int, out_features: int) -> LayerSpec:
        return cls("dense", {"in_features": in_features, "out_features": out_features})

    @classmethod
    def conv2d(cls, in_channels: int, out_channels: int, kernel: int, stride: int = 1) -> LayerSpec:
        return cls(
            "conv2d",
            {"in_channels": in_channels, "out_channels": out_channels, "kernel": kernel, "stride": stride},
        )

    @classmethod
    def relu(cls) -> LayerSpec:
        return cls("relu")

    @classmethod
    def maxpool2d(cls, size: int = 2) -> LayerSpec:
        return cls("maxpool2d", {"size": size})

    @classmethod
    def flatten(cls) -> LayerSpec:
        return cls("flatten")


# ---------------------------------------------------------------------------
# layers


class Layer:
    kind = ""
    eligible = False

    def forward(self, x: np.ndarray, train: bool) -> tuple[np.ndarray, OpCounts]:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, OpCounts]:
        raise NotImplementedError

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0), OpCounts()

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0), OpCounts()


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1), OpCounts()

    def backward(self, grad):
        return grad.reshape(self._shape), OpCounts()

    def output_shape(self, shape):
        return (int(np.prod(shape)),)


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, size: int):
        self.size = size

    def output_shape(self, shape):
        if len(shape) != 3:
            raise NetworkError(f"maxpool2d expects (C, H, W) input, got {shape}")
        c, h, w = shape
        if h < self.size or w < self.size:
            raise NetworkError(f"pool size {self.size} larger than input {h}x{w}")
        return (c, h // self.size, w // self.size)

    def forward(self, x, train):
        n, c, h, w = x.shape
        k = self.size
        oh, ow = h // k, w // k
        self._in_shape = x.shape
        blocks = x[:, :, : oh * k, : ow * k].reshape(n, c, oh, k, ow, k)
        blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, k * k)
        self._argmax = blocks.argmax(axis=-1)
        return np.take_along_axis(blocks, self._argmax[..., None], axis=-1)[..., 0], OpCounts()

    def backward(self, grad):
        n, c, h, w = self._in_shape
        k = self.size
        oh, ow = grad.shape[2], grad.shape[3]
        blocks = np.zeros((n, c, oh, ow, k * k))
        np.put_along_axis(blocks, self._argmax[..., None], grad[..., None], axis=-1)
        blocks = blocks.reshape(n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros(self._in_shape)
        dx[:, :, : oh * k, : ow * k] = blocks.reshape(n, c, oh * k, ow * k)
        return dx, OpCounts()


class WeightLayer(Layer):
    """Shared state of dense and conv layers; holds float or shift parameters."""

    eligible = True

    def __init__(self, weight_shape: tuple[int, ...], fan_in: int, fan_out: int, rng: np.random.Generator):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        self.mode = LayerMode.FLOAT
        self.weight = rng.uniform(-limit, limit, size=weight_shape)
        self.bias = np.zeros(weight_shape[0])
        self.raw_powers: np.ndarray | None = None
        self.raw_signs: np.ndarray | None = None
        self.fmt: FixedPointFormat | None = None
        self.weight_bits: int | None = None
        self.rounding = RoundingMode.DETERMINISTIC
        self.p_offset = 0
        self.grads: dict[str, np.ndarray] = {}

    @property
    def is_shift(self) -> bool:
        return self.mode is not LayerMode.FLOAT

    def param_names(self) -> tuple[str, ...]:
        if self.mode is LayerMode.SHIFT_PS:
            return ("raw_powers", "raw_signs", "bias")
        return ("weight", "bias")

    def float_view(self) -> np.ndarray:
        """The weights this layer currently applies, as floats."""
        if self.mode is LayerMode.FLOAT:
            return self.weight
        return self.effective_weight(np.random.default_rng(0), RoundingMode.DETERMINISTIC)

    def effective_weight(self, rng: np.random.Generator, rounding: RoundingMode | None = None) -> np.ndarray:
        rounding = rounding or self.rounding
        if self.mode is LayerMode.FLOAT:
            return self.weight
        if self.mode is LayerMode.SHIFT_Q:
            sw = quantize_q(self.weight, self.weight_bits, rounding, rng, self.p_offset)
        else:
            sw = quantize_ps(self.raw_powers, self.raw_signs, self.weight_bits, rounding, rng, self.p_offset)
        return dequantize(sw)

    def to_shift(self, mode: LayerMode, weight_bits: int, fmt: FixedPointFormat, rounding: RoundingMode) -> None:
        w = self.float_view().copy()
        self.weight_bits = weight_bits
        self.fmt = fmt
        self.rounding = RoundingMode(rounding)
        if mode is LayerMode.SHIFT_Q:
            self.weight = w
            self.raw_powers = self.raw_signs = None
        else:
            p_min, _ = power_range(weight_bits, self.p_offset)
            nonzero = w != 0
            self.raw_powers = np.where(nonzero, np.log2(np.where(nonzero, np.abs(w), 1.0)), float(p_min))
            self.raw_signs = np.sign(w)
            self.weight = None
        self.mode = mode

    def to_float(self) -> None:
        self.weight = self.float_view().copy()
        self.raw_powers = self.raw_signs = None
        self.fmt = None
        self.weight_bits = None
        self.mode = LayerMode.FLOAT

    # forward/backward helpers shared by subclasses
    def _prepare(self, x: np.ndarray, rng: np.random.Generator, train: bool) -> tuple[np.ndarray, np.ndarray]:
        if self.mode is LayerMode.FLOAT:
            self._act_mask = None
            return x, self.weight
        self._act_mask = activation_pass_mask(x, self.fmt)
        # inference always snaps to the nearest power; stochastic rounding is a training device
        rounding = self.rounding if train else RoundingMode.DETERMINISTIC
        if self.mode is LayerMode.SHIFT_Q:
            self._sw = quantize_q(self.weight, self.weight_bits, rounding, rng, self.p_offset)
        else:
            self._sw = quantize_ps(self.raw_powers, self.raw_signs, self.weight_bits, rounding, rng, self.p_offset)
        w_eff = dequantize(self._sw)
        self._w_eff = w_eff
        return quantize_activation(x, self.fmt), w_eff

    def _weight_grad(self, d_w_eff: np.ndarray) -> None:
        """Route the gradient w.r.t. the applied weights to the trainable parameters."""
        p_min, p_max = power_range(self.weight_bits, self.p_offset) if self.is_shift else (0, 0)
        if self.mode is LayerMode.FLOAT:
            self.grads["weight"] = d_w_eff
        elif self.mode is LayerMode.SHIFT_Q:
            w = self.weight
            nonzero = w != 0
            logmag = np.log2(np.where(nonzero, np.abs(w), 1.0))
            unclamped = round_array(logmag, RoundingMode.DETERMINISTIC)
            inside = ~nonzero | ((unclamped >= p_min) & (unclamped <= p_max))
            self.grads["weight"] = np.where(inside, d_w_eff, 0.0)
        else:
            unclamped = np.rint(self.raw_powers)
            inside = (unclamped >= p_min) & (unclamped <= p_max)
            # d(s * 2**p)/dp = s * 2**p * ln 2, which is w_eff * ln 2
            self.grads["raw_powers"] = np.where(inside, d_w_eff * self._w_eff * LN2, 0.0)
            self.grads["raw_signs"] = d_w_eff * np.ldexp(1.0, self._sw.powers)

    def _input_grad(self, dx: np.ndarray) -> np.ndarray:
        if self._act_mask is None:
            return dx
        return np.where(self._act_mask, dx, 0.0)


class Dense(WeightLayer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__((out_features, in_features), in_features, out_features, rng)
        self.in_features = in_features
        self.out_features = out_features

    def output_shape(self, shape):
        if shape != (self.in_features,):
            raise NetworkError(f"dense expects ({self.in_features},) input, got {shape}")
        return (self.out_features,)

    def forward(self, x, train, rng=None):
        xq, w = self._prepare(x, rng, train)
        self._x = xq
        self._w = w
        macs = x.shape[0] * self.in_features * self.out_features
        return xq @ w.T + self.bias, OpCounts.for_macs(macs, self.is_shift)

    def backward(self, grad, need_input_grad=True):
        macs = grad.shape[0] * self.in_features * self.out_features
        self._weight_grad(grad.T @ self._x)
        self.grads["bias"] = grad.sum(axis=0)
        # weight-gradient pass is float work; the input-gradient pass runs on the applied weights
        ops = OpCounts.for_macs(macs, False)
        if not need_input_grad:
            return None, ops
        return self._input_grad(grad @ self._w), ops + OpCounts.for_macs(macs, self.is_shift)


class Conv2D(WeightLayer):
    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int, rng: np.random.Generator):
        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        super().__init__((out_channels, in_channels, kernel, kernel), fan_in, fan_out, rng)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.in_channels:
            raise NetworkError(f"conv2d expects ({self.in_channels}, H, W) input, got {shape}")
        _, h, w = shape
        if self.kernel > h or self.kernel > w:
            raise NetworkError(f"kernel {self.kernel} larger than input {h}x{w}")
        return (self.out_channels, (h - self.kernel) // self.stride + 1, (w - self.kernel) // self.stride + 1)

    def _macs(self, n: int, oh: int, ow: int) -> int:
        return n * oh * ow * self.out_channels * self.in_channels * self.kernel * self.kernel

    def forward(self, x, train, rng=None):
        xq, w = self._prepare(x, rng, train)
        k, s = self.kernel, self.stride
        n = x.shape[0]
        windows = sliding_window_view(xq, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        oh, ow = windows.shape[2], windows.shape[3]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, -1)
        self._cols = cols
        self._w = w
        self._in_shape = x.shape
        out = cols @ w.reshape(self.out_channels, -1).T + self.bias
        out = out.reshape(n, oh, ow, self.out_channels).transpose(0, 3, 1, 2)
        return out, OpCounts.for_macs(self._macs(n, oh, ow), self.is_shift)

    def backward(self, grad, need_input_grad=True):
        n, c, h, w = self._in_shape
        k, s = self.kernel, self.stride
        oh, ow = grad.shape[2], grad.shape[3]
        g2 = grad.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        self._weight_grad((g2.T @ self._cols).reshape(self._w.shape))
        self.grads["bias"] = g2.sum(axis=0)
        macs = self._macs(n, oh, ow)
        if not need_input_grad:
            return None, OpCounts.for_macs(macs, False)
        dcols = (g2 @ self._w.reshape(self.out_channels, -1)).reshape(n, oh, ow, c, k, k)
        dcols = np.ascontiguousarray(dcols.transpose(4, 5, 0, 3, 1, 2))
        dx = np.zeros((n, c, h, w))
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + s * oh : s, j : j + s * ow : s] += dcols[i, j]
        return self._input_grad(dx), OpCounts.for_macs(macs, self.is_shift) + OpCounts.for_macs(macs, False)


# ---------------------------------------------------------------------------
# model


class NetworkModel:
    def __init__(self, arch: list[LayerSpec], input_shape: tuple[int, ...], layers: list[Layer]):
        self.arch = list(arch)
        self.input_shape = tuple(input_shape)
        self.layers = layers
        self.rng = np.random.default_rng(0)

    @property
    def weight_layers(self) -> list[WeightLayer]:
        return [layer for layer in self.layers if layer.eligible]

    @property
    def eligible_count(self) -> int:
        return len(self.weight_layers)

    @property
    def shift_depth(self) -> int:
        return sum(layer.is_shift for layer in self.weight_layers)

    def forward(self, x: np.ndarray, train: bool = False) -> tuple[np.ndarray, OpCounts]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise NetworkError(f"batch shape {x.shape[1:]} does not match input shape {self.input_shape}")
        ops = OpCounts()
        for index, layer in enumerate(self.layers):
            if layer.eligible:
                x, layer_ops = layer.forward(x, train, self.rng)
            else:
                x, layer_ops = layer.forward(x, train)
            if not np.isfinite(x).all():
                raise NumericOverflowError(index)
            ops = ops + layer_ops
        return x, ops

    def backward(self, grad: np.ndarray) -> OpCounts:
        """Backpropagate ``grad`` (w.r.t. the logits), leaving parameter gradients in ``layer.grads``."""
        ops = OpCounts()
        for index in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[index]
            if index == 0 and layer.eligible:
                _, layer_ops = layer.backward(grad, need_input_grad=False)
                return ops + layer_ops
            grad, layer_ops = layer.backward(grad)
            if not np.isfinite(grad).all():
                raise NumericOverflowError(index)
            ops = ops + layer_ops
        return ops

    def parameters(self) -> list[tuple[WeightLayer, str]]:
        return [(layer, name) for layer in self.weight_layers for name in layer.param_names()]

    def copy(self) -> NetworkModel:
        return copy.deepcopy(self)


def build_network(arch: list[LayerSpec], input_shape: tuple[int, ...], seed: int) -> NetworkModel:
    """Instantiate ``arch`` with fan-scaled uniform initialization seeded by ``seed``."""
    if not arch:
        raise NetworkError("architecture is empty")
    if arch[-1].kind != "dense":
        raise NetworkError("architecture must end in a dense classifier layer")
    layers, _ = _instantiate(arch, tuple(input_shape), np.random.default_rng(seed))
    return NetworkModel(arch, input_shape, layers)


def _instantiate(
    arch: list[LayerSpec], shape: tuple[int, ...], rng: np.random.Generator
) -> tuple[list[Layer], tuple[int, ...]]:
    layers: list[Layer] = []
    for index, spec in enumerate(arch):
        d = spec.dims
        try:
            if spec.kind == "dense":
                layer = Dense(d["in_features"], d["out_features"], rng)
            elif spec.kind == "conv2d":
                layer = Conv2D(d["in_channels"], d["out_channels"], d["kernel"], d.get("stride", 1), rng)
            elif spec.kind == "relu":
                layer = ReLU()
            elif spec.kind == "maxpool2d":
                layer = MaxPool2D(d.get("size", 2))
            elif spec.kind == "flatten":
                layer = Flatten()
            else:
                raise NetworkError(f"unknown layer kind {spec.kind!r}")
            shape = layer.output_shape(shape)
        except (NetworkError, KeyError) as exc:
            raise NetworkError(f"layer {index} ({spec.kind}): {exc}") from exc
        if any(v <= 0 for v in shape):
            raise NetworkError(f"layer {index} ({spec.kind}) produces empty output {shape}")
        layers.append(layer)
    return layers, shape


def convert_to_shift(
    model: NetworkModel,
    depth: int,
    shift_type: str,
    weight_bits: int,
    fmt: FixedPointFormat,
    rounding: RoundingMode | str = RoundingMode.DETERMINISTIC,
) -> NetworkModel:
    """Return a copy whose first ``depth`` eligible layers (from the input side) are shift layers.

    Layers already in the requested shift mode are left untouched, so
    converting to ``d`` and then to ``d' > d`` equals converting straight to ``d'``.
    Layers past ``depth`` revert to float.
    """
    if not 0 <= depth <= model.eligible_count:
        raise NetworkError(f"shift depth {depth} outside [0, {model.eligible_count}]")
    mode = {"Q": LayerMode.SHIFT_Q, "PS": LayerMode.SHIFT_PS}.get(str(shift_type).upper())
    if mode is None:
        raise NetworkError(f"unknown shift type {shift_type!r}")
    power_range(weight_bits)
    rounding = RoundingMode(rounding)
    out = model.copy()
    for index, layer in enumerate(out.weight_layers):
        if index < depth:
            same = layer.mode is mode and layer.weight_bits == weight_bits and layer.fmt == fmt
            if same:
                layer.rounding = rounding
            else:
                layer.to_shift(mode, weight_bits, fmt, rounding)
        elif layer.is_shift:
            layer.to_float()
    return out


def op_counts_per_sample(model: NetworkModel) -> OpCounts:
    """Forward-pass operation counts for a single input."""
    _, ops = model.copy().forward(np.zeros((1, *model.input_shape)))
    return ops


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: NetworkModel, path: str | Path) -> None:
    arrays: dict[str, np.ndarray] = {}
    layer_meta = []
    for index, layer in enumerate(model.layers):
        meta: dict = {"kind": layer.kind}
        if layer.eligible:
            meta.update(
                mode=layer.mode.value,
                weight_bits=layer.weight_bits,
                rounding=layer.rounding.value,
                p_offset=layer.p_offset,
                fmt=None if layer.fmt is None else [layer.fmt.integer_bits, layer.fmt.fraction_bits],
            )
            for name in ("weight", "bias", "raw_powers", "raw_signs"):
                value = getattr(layer, name)
                if value is not None:
                    arrays[f"layer{index}.{name}"] = value
        layer_meta.append(meta)
    meta = {
        "version": CHECKPOINT_VERSION,
        "input_shape": list(model.input_shape),
        "arch": [asdict(spec) for spec in model.arch],
        "layers": layer_meta,
        "rng_state": model.rng.bit_generator.state,
    }
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    Path(path).write_bytes(buffer.getvalue())


def load_checkpoint(path: str | Path) -> NetworkModel:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise NetworkError(f"unsupported checkpoint version {meta.get('version')}")
        arch = [LayerSpec(d["kind"], d["dims"]) for d in meta["arch"]]
        model = build_network(arch, tuple(meta["input_shape"]), seed=0)
        for index, (layer, lm) in enumerate(zip(model.layers, meta["layers"])):
            if not layer.eligible:
                continue
            layer.mode = LayerMode(lm["mode"])
            layer.weight_bits = lm["weight_bits"]
            layer.rounding = RoundingMode(lm["rounding"])
            layer.p_offset = lm["p_offset"]
            layer.fmt = None if lm["fmt"] is None else FixedPointFormat(*lm["fmt"])
            for name in ("weight", "bias", "raw_powers", "raw_signs"):
                key = f"layer{index}.{name}"
                setattr(layer, name, data[key].copy() if key in data else None)
        model.rng.bit_generator.state = meta["rng_state"]
    return model


def desk_cnn(input_shape: tuple[int, int, int], num_classes: int) -> list[LayerSpec]:
    """Four-conv-layer CNN sized for desk-scale experiments on small images."""
    c, h, w = input_shape
    arch = [
        LayerSpec.conv2d(c, 4, 3),
        LayerSpec.relu(),
        LayerSpec.conv2d(4, 8, 3),
        LayerSpec.relu(),
        LayerSpec.maxpool2d(2),
    ]
    side = min((h - 4) // 2, (w - 4) // 2)
    k3 = min(3, side)
    side = side - k3 + 1
    k4 = min(3, side)
    arch += [
        LayerSpec.conv2d(8, 8, k3),
        LayerSpec.relu(),
        LayerSpec.conv2d(8, 16, k4),
        LayerSpec.relu(),
        LayerSpec.flatten(),
    ]
    _, shape = _instantiate(arch, tuple(input_shape), np.random.default_rng(0))
    arch.append(LayerSpec.dense(int(np.prod(shape)), num_classes))
    return arch
