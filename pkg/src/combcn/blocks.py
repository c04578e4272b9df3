"""Declarative convolution layers, shape calculus and functional forward passes.

Layer shapes in the calculus are channels-last tuples, ``(F, H, W, C)`` for
3D layers and ``(H, W, C)`` for 2D layers. The forward functions take torch
tensors in the usual channels-first batched layout, ``(N, C, F, H, W)`` and
``(N, C, H, W)``.

Stride and dilation act on the spatial axes only. The frame axis of a 3D
layer is convolved with the same kernel extent and zero "same" padding; it is
strided only when ``temporal_stride`` is set.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import torch
import torch.nn.functional as F

from .errors import IndivisibleSize, ShapeMismatch

ParameterSet = Dict[str, torch.Tensor]

BN_MOMENTUM = 0.1  # torch convention: running = 0.9 * running + 0.1 * batch
BN_EPS = 1e-5
LEARNABLE_ROLES = ("kernel", "bias", "bn_scale", "bn_shift")
STAT_ROLES = ("bn_running_mean", "bn_running_var")


class Kind(str, enum.Enum):
    CONV = "conv"
    CONV_DOWN = "conv_down"
    DECONV_UP = "deconv_up"
    DILATED_CONV = "dilated_conv"


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: Kind
    dims: int
    kernel: int
    stride: int
    out_channels: int
    dilation: int = 1
    has_bn_relu: bool = True
    temporal_stride: bool = False

    def __post_init__(self):
        if self.dims not in (2, 3):
            raise ValueError(f"{self.name}: dims must be 2 or 3")
        if self.stride not in (1, 2):
            raise ValueError(f"{self.name}: stride must be 1 or 2")
        if self.dilation < 1:
            raise ValueError(f"{self.name}: dilation must be >= 1")
        if self.kernel not in (3, 4, 5):
            raise ValueError(f"{self.name}: kernel must be 3, 4 or 5")
        if self.kind is Kind.DILATED_CONV and self.stride != 1:
            raise ValueError(f"{self.name}: dilated conv must have stride 1")
        if self.kind in (Kind.CONV_DOWN, Kind.DECONV_UP) and self.stride != 2:
            raise ValueError(f"{self.name}: {self.kind.value} requires stride 2")
        if self.kind in (Kind.CONV, Kind.DILATED_CONV) and self.stride != 1:
            raise ValueError(f"{self.name}: {self.kind.value} requires stride 1")
        if self.kind is not Kind.DECONV_UP and self.kernel % 2 == 0:
            raise ValueError(f"{self.name}: same padding needs an odd conv kernel")
        if self.temporal_stride and (self.dims != 3 or self.stride != 2):
            raise ValueError(f"{self.name}: temporal stride only for strided 3D layers")

    @property
    def index(self) -> int:
        return int(self.name.lstrip("L")) if self.name.startswith("L") else -1

    @property
    def frame_stride(self) -> int:
        return 2 if self.temporal_stride else 1

    def spatial_extent(self) -> int:
        """Spatial footprint of one kernel application, in input pixels."""
        return self.dilation * (self.kernel - 1) + 1


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple
    input_channels: int
    skips: frozenset = field(default_factory=frozenset)

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    @property
    def dims(self) -> int:
        return self.layers[0].dims


def layer_output_shape(spec: LayerSpec, in_shape: Sequence[int]) -> tuple:
    """Output shape of ``spec`` applied to a channels-last ``in_shape``."""
    in_shape = tuple(in_shape)
    if len(in_shape) != spec.dims + 1:
        raise ShapeMismatch(f"{spec.name}: {spec.dims}D layer got shape {in_shape}")
    if spec.dims == 3:
        frames, h, w = in_shape[:3]
    else:
        frames, (h, w) = None, in_shape[:2]

    if spec.kind is Kind.CONV_DOWN:
        if h % 2 or w % 2:
            raise IndivisibleSize(f"{spec.name}: {h}x{w} not divisible by 2")
        h, w = h // 2, w // 2
        if spec.temporal_stride:
            if frames % 2:
                raise IndivisibleSize(f"{spec.name}: {frames} frames not divisible by 2")
            frames //= 2
    elif spec.kind is Kind.DECONV_UP:
        h, w = h * 2, w * 2
        if spec.temporal_stride:
            frames *= 2

    if spec.dims == 3:
        return (frames, h, w, spec.out_channels)
    return (h, w, spec.out_channels)


def trace_shapes(net: NetworkSpec, in_shape: Sequence[int]) -> dict:
    """Map each layer name to its output shape; validates skip pairs."""
    in_shape = tuple(in_shape)
    if in_shape[-1] != net.input_channels:
        raise ShapeMismatch(f"{net.name}: expects {net.input_channels} channels, got {in_shape}")
    shapes = {}
    cur = in_shape
    for spec in net.layers:
        cur = layer_output_shape(spec, cur)
        shapes[spec.name] = cur
    for src, dst in net.skips:
        if shapes[src] != shapes[dst]:
            raise ShapeMismatch(f"{net.name}: skip {src}->{dst} joins {shapes[src]} and {shapes[dst]}")
    return shapes


def _in_channels(net: NetworkSpec) -> dict:
    chans = {}
    c = net.input_channels
    for spec in net.layers:
        chans[spec.name] = c
        c = spec.out_channels
    return chans


def kernel_shape(spec: LayerSpec, in_channels: int) -> tuple:
    taps = (spec.kernel,) * spec.dims
    if spec.kind is Kind.DECONV_UP:
        return (in_channels, spec.out_channels) + taps
    return (spec.out_channels, in_channels) + taps


def init_layer(spec: LayerSpec, in_channels: int, gen: torch.Generator,
               dtype=torch.float32) -> ParameterSet:
    fan_in = in_channels * spec.kernel ** spec.dims
    std = math.sqrt(2.0 / fan_in)
    p = {
        f"{spec.name}.kernel": torch.randn(kernel_shape(spec, in_channels), generator=gen, dtype=dtype) * std,
        f"{spec.name}.bias": torch.zeros(spec.out_channels, dtype=dtype),
    }
    if spec.has_bn_relu:
        c = spec.out_channels
        p[f"{spec.name}.bn_scale"] = torch.ones(c, dtype=dtype)
        p[f"{spec.name}.bn_shift"] = torch.zeros(c, dtype=dtype)
        p[f"{spec.name}.bn_running_mean"] = torch.zeros(c, dtype=dtype)
        p[f"{spec.name}.bn_running_var"] = torch.ones(c, dtype=dtype)
    return p


def init_params(net: NetworkSpec, rng_seed: int, dtype=torch.float32) -> ParameterSet:
    """He-normal kernels, zero biases, identity batch norm."""
    gen = torch.Generator().manual_seed(int(rng_seed))
    chans = _in_channels(net)
    params: ParameterSet = {}
    for spec in net.layers:
        params.update(init_layer(spec, chans[spec.name], gen, dtype))
    return params


def is_learnable(name: str) -> bool:
    return name.rsplit(".", 1)[-1] in LEARNABLE_ROLES


def _conv_geometry(spec: LayerSpec):
    k, d = spec.kernel, spec.dilation
    if spec.dims == 3:
        stride = (spec.frame_stride, spec.stride, spec.stride)
        dilation = (1, d, d)
        padding = (k // 2, d * (k // 2), d * (k // 2))
    else:
        stride = (spec.stride, spec.stride)
        dilation = (d, d)
        padding = (d * (k // 2),) * 2
    return stride, dilation, padding


def _deconv(spec: LayerSpec, x, weight, bias):
    # spatial padding (k - 2) / 2 makes a stride-2 transposed conv exactly double
    sp = (spec.kernel - 2) // 2
    if spec.dims == 2:
        return F.conv_transpose2d(x, weight, bias, stride=2, padding=sp)
    if spec.temporal_stride:
        return F.conv_transpose3d(x, weight, bias, stride=(2, 2, 2), padding=(sp, sp, sp))
    # stride-1 frame axis: keep the full response and crop the "same" window
    frames = x.shape[2]
    y = F.conv_transpose3d(x, weight, bias, stride=(1, 2, 2), padding=(0, sp, sp))
    start = (spec.kernel - 1) // 2
    return y[:, :, start:start + frames]


def apply_layer(spec: LayerSpec, params: ParameterSet, x: torch.Tensor,
                training: bool = False) -> torch.Tensor:
    """Convolution (or transposed convolution), then BN and ReLU if enabled."""
    weight = params[f"{spec.name}.kernel"]
    bias = params[f"{spec.name}.bias"]
    if x.dim() != spec.dims + 2:
        raise ShapeMismatch(f"{spec.name}: expected a {spec.dims + 2}-d tensor, got {tuple(x.shape)}")
    in_c = weight.shape[0] if spec.kind is Kind.DECONV_UP else weight.shape[1]
    if x.shape[1] != in_c:
        raise ShapeMismatch(f"{spec.name}: expected {in_c} channels, got {x.shape[1]}")

    if spec.kind is Kind.DECONV_UP:
        y = _deconv(spec, x, weight, bias)
    else:
        if spec.stride == 2 and (x.shape[-1] % 2 or x.shape[-2] % 2):
            raise IndivisibleSize(f"{spec.name}: spatial size {tuple(x.shape[-2:])} not even")
        stride, dilation, padding = _conv_geometry(spec)
        conv = F.conv3d if spec.dims == 3 else F.conv2d
        y = conv(x, weight, bias, stride=stride, padding=padding, dilation=dilation)

    if spec.has_bn_relu:
        y = F.batch_norm(
            y,
            params[f"{spec.name}.bn_running_mean"],
            params[f"{spec.name}.bn_running_var"],
            weight=params[f"{spec.name}.bn_scale"],
            bias=params[f"{spec.name}.bn_shift"],
            training=training,
            momentum=BN_MOMENTUM,
            eps=BN_EPS,
        )
        y = F.relu(y)
    return y


def additive_skip(encoder_out: torch.Tensor, decoder_out: torch.Tensor) -> torch.Tensor:
    if encoder_out.shape != decoder_out.shape:
        raise ShapeMismatch(
            f"skip shapes differ: {tuple(encoder_out.shape)} vs {tuple(decoder_out.shape)}"
        )
    return encoder_out + decoder_out


def forward_network(net: NetworkSpec, params: ParameterSet, x: torch.Tensor,
                    training: bool = False,
                    add_after: Optional[dict] = None,
                    add_before: Optional[dict] = None,
                    trace: Optional[list] = None) -> torch.Tensor:
    """Run every layer of ``net`` in order.

    ``add_after[name]`` is added to the output of layer ``name`` (after its
    skip connection) and ``add_before[name]`` to that layer's input. If
    ``trace`` is a list, each layer's output is appended to it as
    ``(name, tensor)``.
    """
    add_after = add_after or {}
    add_before = add_before or {}
    sources = {src for src, _ in net.skips}
    skip_into = {dst: src for src, dst in net.skips}
    saved = {}
    for spec in net.layers:
        if spec.name in add_before:
            x = additive_skip(add_before[spec.name], x)
        x = apply_layer(spec, params, x, training)
        if spec.name in skip_into:
            x = additive_skip(saved[skip_into[spec.name]], x)
        if spec.name in add_after:
            x = additive_skip(add_after[spec.name], x)
        if spec.name in sources:
            saved[spec.name] = x
        if trace is not None:
            trace.append((spec.name, x))
    return x


def learnable(params: ParameterSet) -> list:
    return [t for n, t in params.items() if is_learnable(n)]


def requires_grad_(params: ParameterSet, flag: bool = True) -> ParameterSet:
    for name, t in params.items():
        t.requires_grad_(flag and is_learnable(name))
    return params


def clone_params(params: ParameterSet) -> ParameterSet:
    return {n: t.detach().clone() for n, t in params.items()}
