"""U-Net style encoder/decoder with a segmentation head after every block."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..nn import BatchNorm2d, Conv2d, Module, ShapeError, Tensor, no_grad
from ..nn import ops

LOSS_KINDS = ("generalized-dice", "weighted-cross-entropy")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Network hyperparameters.

    ``num_classes`` counts output classes: 1 means a single sigmoid
    foreground channel, K >= 2 means a K-way softmax including background.
    ``final_block`` appends one extra full-resolution decoder block without
    a skip input; with ``depth=5`` it gives the ten-head reference layout.
    """

    depth: int = 3
    base_channels: int = 8
    num_classes: int = 1
    in_channels: int = 1
    input_size: tuple[int, int] = (64, 64)
    final_block: bool = False
    loss: str = "generalized-dice"
    ce_weights: tuple[float, ...] = ()
    seed: int = 0

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.ce_weights = tuple(float(w) for w in self.ce_weights)
        self.validate()

    @property
    def out_channels(self) -> int:
        return self.num_classes

    @property
    def num_heads(self) -> int:
        return 2 * self.depth - 1 + int(self.final_block)

    def channels(self, stage: int) -> int:
        return self.base_channels * 2 ** stage

    def validate(self) -> None:
        errors = []
        if self.depth < 2:
            errors.append(f"depth must be >= 2, got {self.depth}")
        if self.base_channels < 1:
            errors.append(f"base_channels must be positive, got {self.base_channels}")
        if self.num_classes < 1:
            errors.append(f"num_classes must be >= 1, got {self.num_classes}")
        if self.in_channels < 1:
            errors.append(f"in_channels must be positive, got {self.in_channels}")
        if len(self.input_size) != 2:
            errors.append(f"input_size must be (H, W), got {self.input_size}")
        elif self.depth >= 1:
            div = 2 ** (self.depth - 1)
            if any(s <= 0 or s % div for s in self.input_size):
                errors.append(f"input_size {self.input_size} must be divisible by {div}")
        if self.loss not in LOSS_KINDS:
            errors.append(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.loss == "weighted-cross-entropy" and self.ce_weights:
            want = max(self.num_classes, 2)
            if len(self.ce_weights) != want:
                errors.append(f"ce_weights needs {want} entries, got {len(self.ce_weights)}")
        if errors:
            raise ConfigError("; ".join(errors))


@dataclass
class HeadOutputs:
    """Per-head class-probability maps for one image, shallowest head first."""

    probs: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        shapes = {p.shape for p in self.probs}
        if len(shapes) > 1:
            raise ShapeError(f"head maps disagree in shape: {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.probs)

    @property
    def num_classes(self) -> int:
        return self.probs[0].shape[0]

    def stack(self, skip: int = 0) -> np.ndarray:
        """Array [N - skip, K', H, W] of the retained heads."""
        return np.stack(self.probs[skip:])


class EncoderBlock(Module):
    """conv-BN-ReLU-conv-BN plus a projected residual, then ReLU.

    With ``stride=2`` the first conv is evaluated only at every other pixel
    (top-left of each 2x2 cell), which is a same-padded conv followed by
    nearest downsampling. On even inputs a symmetric pad would not tile
    evenly, so the input is padded on the top/left side only and convolved
    with stride 2. The 1x1 shortcut samples the same pixels.
    """

    def __init__(self, cin: int, cout: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.stride = stride
        self.conv1 = self.add_child("conv1", Conv2d(cin, cout, 3, rng))
        self.bn1 = self.add_child("bn1", BatchNorm2d(cout))
        self.conv2 = self.add_child("conv2", Conv2d(cout, cout, 3, rng))
        self.bn2 = self.add_child("bn2", BatchNorm2d(cout))
        self.shortcut = self.add_child("shortcut", Conv2d(cin, cout, 1, rng, padding=0))

    def __call__(self, x: Tensor) -> Tensor:
        if self.stride > 1:
            h = self.conv1.strided(x, self.stride)
            x = ops.downsample(x, self.stride)
        else:
            h = self.conv1(x)
        h = ops.relu(self.bn1(h))
        h = self.bn2(self.conv2(h))
        return ops.relu(ops.add(h, self.shortcut(x)))


class DecoderBlock(Module):
    """Optional 2x upsample and skip concatenation, then (conv-BN-ReLU) x2."""

    def __init__(self, cin: int, cout: int, upsample: bool, rng: np.random.Generator):
        super().__init__()
        self.upsample = upsample
        self.conv1 = self.add_child("conv1", Conv2d(cin, cout, 3, rng))
        self.bn1 = self.add_child("bn1", BatchNorm2d(cout))
        self.conv2 = self.add_child("conv2", Conv2d(cout, cout, 3, rng))
        self.bn2 = self.add_child("bn2", BatchNorm2d(cout))

    def __call__(self, x: Tensor, skip: Tensor | None = None) -> Tensor:
        if self.upsample:
            x = ops.upsample(x, 2)
        if skip is not None:
            x = ops.concat([x, skip], axis=1)
        h = ops.relu(self.bn1(self.conv1(x)))
        return ops.relu(self.bn2(self.conv2(h)))


class SegmentationHead(Module):
    """1x1 conv to class scores, activation, nearest upsample to input size.

    The 1x1 conv, the activations and nearest upsampling commute pixelwise,
    so running them at block resolution yields the same maps as
    upsampling first.
    """

    def __init__(self, cin: int, num_classes: int, factor: int, rng: np.random.Generator):
        super().__init__()
        self.factor = factor
        self.num_classes = num_classes
        self.conv = self.add_child("conv", Conv2d(cin, num_classes, 1, rng, padding=0))

    def __call__(self, x: Tensor) -> Tensor:
        z = self.conv(x)
        p = ops.sigmoid(z) if self.num_classes == 1 else ops.softmax_channels(z)
        return ops.upsample(p, self.factor)


class LayerEnsembleNet(Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        backbone_seq, heads_seq = np.random.SeedSequence(config.seed).spawn(2)
        rng = np.random.default_rng(backbone_seq)
        head_rngs = [np.random.default_rng(s) for s in heads_seq.spawn(config.num_heads)]

        d = config.depth
        self.encoders: list[EncoderBlock] = []
        self.decoders: list[DecoderBlock] = []
        self.head_scales: list[int] = []
        cin = config.in_channels
        for i in range(d):
            cout = config.channels(i)
            blk = EncoderBlock(cin, cout, 1 if i == 0 else 2, rng)
            self.encoders.append(self.add_child(f"enc{i}", blk))
            self.head_scales.append(i)
            cin = cout
        for j in range(d - 1):
            stage = d - 2 - j
            cout = config.channels(stage)
            blk = DecoderBlock(cin + cout, cout, True, rng)
            self.decoders.append(self.add_child(f"dec{j}", blk))
            self.head_scales.append(stage)
            cin = cout
        if config.final_block:
            blk = DecoderBlock(cin, config.channels(0), False, rng)
            self.decoders.append(self.add_child(f"dec{d - 1}", blk))
            self.head_scales.append(0)

        head_channels = [config.channels(i) for i in range(d)]
        head_channels += [config.channels(s) for s in self.head_scales[d:]]
        self.heads: list[SegmentationHead] = []
        for h, (c, s) in enumerate(zip(head_channels, self.head_scales)):
            head = SegmentationHead(c, config.out_channels, 2 ** s, head_rngs[h])
            self.heads.append(self.add_child(f"head{h}", head))

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    def _check_input(self, x: Tensor) -> None:
        c = self.config
        if x.data.ndim != 4 or x.shape[1] != c.in_channels or tuple(x.shape[2:]) != c.input_size:
            raise ShapeError(
                f"expected input [B, {c.in_channels}, {c.input_size[0]}, {c.input_size[1]}], got {x.shape}"
            )

    def features(self, x: Tensor, upto: int | None = None) -> list[Tensor]:
        """Block outputs in head order, stopping after block ``upto``."""
        self._check_input(x)
        last = self.num_heads - 1 if upto is None else upto
        feats: list[Tensor] = []
        h = x
        for enc in self.encoders:
            h = enc(h)
            feats.append(h)
            if len(feats) > last:
                return feats
        d = len(self.encoders)
        for j, dec in enumerate(self.decoders):
            skip = feats[d - 2 - j] if dec.upsample else None
            h = dec(h, skip)
            feats.append(h)
            if len(feats) > last:
                return feats
        return feats

    def __call__(self, x: Tensor) -> list[Tensor]:
        """Probability maps [B, K', H, W] from every head in one pass."""
        feats = self.features(x)
        return [head(f) for head, f in zip(self.heads, feats)]

    def forward_head(self, x: Tensor, index: int) -> Tensor:
        """Only the sub-network ending at head ``index``."""
        feats = self.features(x, upto=index)
        return self.heads[index](feats[index])


def build(config: ModelConfig) -> LayerEnsembleNet:
    return LayerEnsembleNet(config)


def forward_all_heads(net: LayerEnsembleNet, image: np.ndarray | Tensor) -> list[HeadOutputs]:
    """Single eval-mode pass; one :class:`HeadOutputs` per batch element.

    Accepts [C, H, W] or [B, C, H, W] input.
    """
    data = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if data.ndim == 3:
        data = data[None]
    was_training = net.training
    net.eval()
    try:
        with no_grad():
            maps = [m.data for m in net(Tensor(data))]
    finally:
        net.train(was_training)
    for m in maps:
        if not np.all(np.isfinite(m)):
            raise FloatingPointError("non-finite head output")
    return [HeadOutputs([m[b] for m in maps]) for b in range(data.shape[0])]


def predict_batches(net: LayerEnsembleNet, images: Sequence[np.ndarray], batch_size: int = 16) -> list[HeadOutputs]:
    out: list[HeadOutputs] = []
    for i in range(0, len(images), batch_size):
        out.extend(forward_all_heads(net, np.stack(images[i:i + batch_size])))
    return out
