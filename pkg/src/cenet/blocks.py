"""Building blocks of the context-aware enhancement network.

The network is an encoder-decoder over NCHW tensors: each encoder stage
computes features and halves the spatial extents, the bottleneck may apply
a non-local attention block (global context), and each decoder stage
upsamples, concatenates the matching encoder skip, and computes features.
Feature computation is a basic block of two 3x3 convolutions, optionally
augmented by a dense residual block (local context).
"""

import math
from dataclasses import dataclass

import numpy as np

from .tensor import (
    DimensionError,
    Parameter,
    Tensor,
    add,
    concat_channels,
    conv2d,
    matmul,
    maxpool2d,
    permute,
    prelu,
    reshape,
    softmax_rows,
    upsample_nearest2x,
)


def _param_rng(seed: int, name: str) -> np.random.Generator:
    # Keyed by name so adding or removing blocks never shifts the draws
    # of the blocks that remain.
    return np.random.default_rng(
        np.random.SeedSequence((int(seed), int.from_bytes(name.encode(), "little"))))


def _conv_param(name: str, c_out: int, c_in: int, k: int, seed: int, dtype,
                zero: bool = False) -> Parameter:
    if zero:
        return Parameter(name, np.zeros((c_out, c_in, k, k), dtype=dtype))
    bound = math.sqrt(6.0 / (c_in * k * k))
    data = _param_rng(seed, name).uniform(-bound, bound, (c_out, c_in, k, k))
    return Parameter(name, data.astype(dtype))


def _channel_param(name: str, channels: int, value: float, dtype) -> Parameter:
    return Parameter(name, np.full((1, channels, 1, 1), value, dtype=dtype))


class BasicBlock:
    """Two stacked 3x3 convolutions, each followed by a PReLU."""

    def __init__(self, name: str, c_in: int, c_out: int, seed: int, dtype=np.float32):
        self.conv1_w = _conv_param(f"{name}.conv1.weight", c_out, c_in, 3, seed, dtype)
        self.conv1_b = _channel_param(f"{name}.conv1.bias", c_out, 0.0, dtype)
        self.slope1 = _channel_param(f"{name}.act1.slope", c_out, 0.25, dtype)
        self.conv2_w = _conv_param(f"{name}.conv2.weight", c_out, c_out, 3, seed, dtype)
        self.conv2_b = _channel_param(f"{name}.conv2.bias", c_out, 0.0, dtype)
        self.slope2 = _channel_param(f"{name}.act2.slope", c_out, 0.25, dtype)

    def forward(self, f: Tensor) -> Tensor:
        y = prelu(conv2d(f, self.conv1_w, self.conv1_b, stride=1, padding=1), self.slope1)
        return prelu(conv2d(y, self.conv2_w, self.conv2_b, stride=1, padding=1), self.slope2)

    def parameters(self) -> list[Parameter]:
        return [self.conv1_w, self.conv1_b, self.slope1,
                self.conv2_w, self.conv2_b, self.slope2]


class DenseResidualBlock:
    """Three densely connected 3x3 convolutions closed by an input skip.

    Layer l consumes the channel concatenation of the block input and all
    previous layer outputs, so its input width is l times the block width.
    The last layer is linear and the skip makes the zero-weight block an
    exact identity.
    """

    def __init__(self, name: str, channels: int, seed: int, dtype=np.float32):
        self.channels = channels
        self.layer1_w = _conv_param(f"{name}.layer1.weight", channels, channels, 3, seed, dtype)
        self.layer1_b = _channel_param(f"{name}.layer1.bias", channels, 0.0, dtype)
        self.slope1 = _channel_param(f"{name}.act1.slope", channels, 0.25, dtype)
        self.layer2_w = _conv_param(f"{name}.layer2.weight", channels, 2 * channels, 3, seed, dtype)
        self.layer2_b = _channel_param(f"{name}.layer2.bias", channels, 0.0, dtype)
        self.slope2 = _channel_param(f"{name}.act2.slope", channels, 0.25, dtype)
        self.layer3_w = _conv_param(f"{name}.layer3.weight", channels, 3 * channels, 3, seed, dtype)
        self.layer3_b = _channel_param(f"{name}.layer3.bias", channels, 0.0, dtype)

    def forward(self, f: Tensor) -> Tensor:
        if f.shape[1] != self.channels:
            raise DimensionError(
                f"dense residual block expects {self.channels} channels, got {f.shape[1]}")
        y1 = prelu(conv2d(f, self.layer1_w, self.layer1_b, stride=1, padding=1), self.slope1)
        y2 = prelu(conv2d(concat_channels(f, y1), self.layer2_w, self.layer2_b,
                          stride=1, padding=1), self.slope2)
        y3 = conv2d(concat_channels(f, y1, y2), self.layer3_w, self.layer3_b,
                    stride=1, padding=1)
        return add(f, y3)

    def parameters(self) -> list[Parameter]:
        return [self.layer1_w, self.layer1_b, self.slope1,
                self.layer2_w, self.layer2_b, self.slope2,
                self.layer3_w, self.layer3_b]


class NonLocalBlock:
    """Residual self-attention over the full spatial extent.

    Query, key, and value are 1x1 projections into a bottleneck of
    ceil(C/2) channels; affinities are row-softmaxed dot products between
    query and key vectors, so every output position aggregates value
    vectors from all positions. The output projection starts at zero,
    which makes a freshly built block the identity map.
    """

    def __init__(self, name: str, channels: int, seed: int, dtype=np.float32):
        self.channels = channels
        self.inner = (channels + 1) // 2
        self.query_w = _conv_param(f"{name}.query.weight", self.inner, channels, 1, seed, dtype)
        self.query_b = _channel_param(f"{name}.query.bias", self.inner, 0.0, dtype)
        self.key_w = _conv_param(f"{name}.key.weight", self.inner, channels, 1, seed, dtype)
        self.key_b = _channel_param(f"{name}.key.bias", self.inner, 0.0, dtype)
        self.value_w = _conv_param(f"{name}.value.weight", self.inner, channels, 1, seed, dtype)
        self.value_b = _channel_param(f"{name}.value.bias", self.inner, 0.0, dtype)
        self.out_w = _conv_param(f"{name}.out.weight", channels, self.inner, 1, seed, dtype,
                                 zero=True)
        self.out_b = _channel_param(f"{name}.out.bias", channels, 0.0, dtype)

    def _attention(self, z: Tensor) -> tuple[Tensor, Tensor]:
        n, c, h, w = z.shape
        positions = h * w
        q = conv2d(z, self.query_w, self.query_b)
        k = conv2d(z, self.key_w, self.key_b)
        v = conv2d(z, self.value_w, self.value_b)
        q = permute(reshape(q, (n, self.inner, 1, positions)), (0, 2, 3, 1))
        k = permute(reshape(k, (n, self.inner, 1, positions)), (0, 2, 1, 3))
        v = permute(reshape(v, (n, self.inner, 1, positions)), (0, 2, 3, 1))
        attn = softmax_rows(matmul(q, k))
        return attn, v

    def attention_map(self, z: Tensor) -> Tensor:
        """Row-stochastic affinity matrix, shape (N, 1, H*W, H*W)."""
        attn, _ = self._attention(z)
        return attn

    def forward(self, z: Tensor) -> Tensor:
        if z.shape[1] != self.channels:
            raise DimensionError(
                f"non-local block expects {self.channels} channels, got {z.shape[1]}")
        n, c, h, w = z.shape
        attn, v = self._attention(z)
        mixed = matmul(attn, v)
        mixed = reshape(permute(mixed, (0, 3, 1, 2)), (n, self.inner, h, w))
        return add(z, conv2d(mixed, self.out_w, self.out_b))

    def parameters(self) -> list[Parameter]:
        return [self.query_w, self.query_b, self.key_w, self.key_b,
                self.value_w, self.value_b, self.out_w, self.out_b]


class FeatureBlock:
    """Per-stage feature computation: a basic block, densely augmented
    when local-context modeling is enabled.

    The dense residual block preserves its channel count, so the width
    change of a stage always happens in the basic block.
    """

    def __init__(self, name: str, c_in: int, c_out: int, local_context: bool,
                 seed: int, dtype=np.float32):
        self.basic = BasicBlock(f"{name}.bb", c_in, c_out, seed, dtype)
        self.dense = (DenseResidualBlock(f"{name}.drb", c_out, seed, dtype)
                      if local_context else None)

    def forward(self, f: Tensor) -> Tensor:
        y = self.basic.forward(f)
        if self.dense is not None:
            y = self.dense.forward(y)
        return y

    def parameters(self) -> list[Parameter]:
        params = self.basic.parameters()
        if self.dense is not None:
            params += self.dense.parameters()
        return params


class EncoderStage:
    """Feature block followed by 2x2 max pooling; the pre-pool features
    are returned as the skip for the matching decoder stage."""

    def __init__(self, name: str, c_in: int, c_out: int, local_context: bool,
                 seed: int, dtype=np.float32):
        self.features = FeatureBlock(name, c_in, c_out, local_context, seed, dtype)

    def forward(self, f: Tensor) -> tuple[Tensor, Tensor]:
        skip = self.features.forward(f)
        return maxpool2d(skip), skip

    def parameters(self) -> list[Parameter]:
        return self.features.parameters()


class DecoderStage:
    """Nearest 2x upsampling, skip concatenation, then a feature block."""

    def __init__(self, name: str, c_in: int, c_out: int, local_context: bool,
                 seed: int, dtype=np.float32):
        self.features = FeatureBlock(name, c_in, c_out, local_context, seed, dtype)

    def forward(self, z: Tensor, skip: Tensor) -> Tensor:
        up = upsample_nearest2x(z)
        if up.shape[2:] != skip.shape[2:]:
            raise DimensionError(
                f"upsampled extents {up.shape[2:]} do not match skip {skip.shape[2:]}")
        return self.features.forward(concat_channels(up, skip))

    def parameters(self) -> list[Parameter]:
        return self.features.parameters()


@dataclass
class NetworkConfig:
    """Architecture hyperparameters; spatial extents must divide 2**num_stages."""

    num_stages: int = 4
    base_channels: int = 32
    use_global_context: bool = True
    use_local_context: bool = True
    input_channels: int = 3
    output_channels: int = 3

    def validate(self):
        if self.num_stages < 1:
            raise ValueError(f"num_stages must be positive, got {self.num_stages}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be positive, got {self.base_channels}")
        if self.input_channels < 1 or self.output_channels < 1:
            raise ValueError("channel counts must be positive")

    @property
    def divisor(self) -> int:
        return 2 ** self.num_stages


class EnhancementNetwork:
    """Encoder-decoder enhancement network with optional global and local
    context modules.

    All parameters are drawn deterministically from (seed, parameter name),
    so two networks built from the same seed share every parameter they
    have in common regardless of the variant flags.
    """

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=np.float32):
        config.validate()
        self.config = config
        self.seed = seed
        m = config.num_stages
        lc = config.use_local_context
        self.encoder: list[EncoderStage] = []
        c_in = config.input_channels
        for i in range(m):
            c_out = config.base_channels * 2 ** i
            self.encoder.append(EncoderStage(f"enc{i}", c_in, c_out, lc, seed, dtype))
            c_in = c_out
        mid_channels = config.base_channels * 2 ** m
        self.mid = FeatureBlock("mid", c_in, mid_channels, lc, seed, dtype)
        self.attention = (NonLocalBlock("mid.attn", mid_channels, seed, dtype)
                          if config.use_global_context else None)
        self.decoder: list[DecoderStage] = []
        for i in reversed(range(m)):
            c_src = config.base_channels * 2 ** (i + 1)
            c_skip = config.base_channels * 2 ** i
            self.decoder.append(
                DecoderStage(f"dec{i}", c_src + c_skip, c_skip, lc, seed, dtype))
        self.head_w = _conv_param("head.weight", config.output_channels,
                                  config.base_channels, 3, seed, dtype)
        self.head_b = _channel_param("head.bias", config.output_channels, 0.0, dtype)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.config.input_channels:
            raise DimensionError(
                f"network expects {self.config.input_channels} input channels, got {c}")
        div = self.config.divisor
        if h % div or w % div:
            raise DimensionError(
                f"spatial extents {h}x{w} must be divisible by {div} "
                f"(2**num_stages with num_stages={self.config.num_stages})")
        skips = []
        f = x
        for stage in self.encoder:
            f, skip = stage.forward(f)
            skips.append(skip)
        f = self.mid.forward(f)
        if self.attention is not None:
            f = self.attention.forward(f)
        for stage, skip in zip(self.decoder, reversed(skips)):
            f = stage.forward(f, skip)
        return conv2d(f, self.head_w, self.head_b, stride=1, padding=1)

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for stage in self.encoder:
            params += stage.parameters()
        params += self.mid.parameters()
        if self.attention is not None:
            params += self.attention.parameters()
        for stage in self.decoder:
            params += stage.parameters()
        params += [self.head_w, self.head_b]
        return params

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def structure(self) -> dict[str, int]:
        """Structural census: block counts and total parameter scalars."""
        names = [p.name for p in self.parameters()]
        return {
            "attention_blocks": 1 if self.attention is not None else 0,
            "dense_blocks": sum(1 for n in names if n.endswith("drb.layer1.weight")),
            "parameter_tensors": len(names),
            "parameter_scalars": sum(p.size for p in self.parameters()),
        }


def build_network(config: NetworkConfig, seed: int = 0, dtype=np.float32) -> EnhancementNetwork:
    """Construct a network with seed-determined parameters."""
    return EnhancementNetwork(config, seed=seed, dtype=dtype)
