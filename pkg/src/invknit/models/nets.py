"""Network graphs.

All modules take and return channels-first batched tensors; the single-
sample channels-last wrappers live in ops.py. Generation-side nets
(refiner, translator, discriminator) are normalization-free; the larger
inference nets (residual, unet) use batch normalization.
"""

from __future__ import annotations

import zlib

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError
from .config import ModelConfig


class PlainResBlock(nn.Module):
    """Normalization-free residual block, spatial-size preserving."""

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.conv1(x))
        h = self.conv2(h)
        return F.relu(x + h)


class NormResBlock(nn.Module):
    """Residual block with batch normalization; optional dilation."""

    def __init__(self, channels: int, dilation: int = 1) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=dilation,
                               dilation=dilation, bias=False)
        self.bn1 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=dilation,
                               dilation=dilation, bias=False)
        self.bn2 = nn.BatchNorm2d(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return F.relu(x + h)


def _upsample2(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


class Refiner(nn.Module):
    """Image-to-image cleanup net: photo in, machine-ready rendering out.

    Subtracts the dataset channel mean, encodes with stride-2 convs,
    passes residual blocks, then decodes with bilinear upsampling.
    Output is clamped to [0, 1].
    """

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        w = cfg.width
        self.register_buffer(
            "channel_mean", torch.tensor(cfg.channel_mean).view(1, 3, 1, 1)
        )
        self.enc1 = nn.Conv2d(cfg.image_channels, w, 3, stride=2, padding=1)
        self.enc2 = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.blocks = nn.Sequential(*[PlainResBlock(2 * w) for _ in range(cfg.res_blocks)])
        self.dec1 = nn.Conv2d(2 * w, w, 3, padding=1)
        self.to_rgb = nn.Conv2d(w, cfg.image_channels, 3, padding=1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        x = image - self.channel_mean
        x = F.relu(self.enc1(x))
        x = F.relu(self.enc2(x))
        x = self.blocks(x)
        x = F.relu(self.dec1(_upsample2(x)))
        x = self.to_rgb(_upsample2(x))
        return x.clamp(0.0, 1.0)


class Img2Prog(nn.Module):
    """Image to per-cell front-label logits at 1/8 resolution.

    Three stride-2 stages; earlier feature maps are folded to cell
    resolution with space-to-depth and 1x1 reductions, concatenated,
    then refined by residual blocks before the logit head.
    """

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        w = cfg.width
        self.down1 = nn.Conv2d(cfg.image_channels, w, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.down3 = nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1)
        self.skip1 = nn.Conv2d(w * 16, w, 1)
        self.skip2 = nn.Conv2d(2 * w * 4, w, 1)
        merged = 6 * w
        self.blocks = nn.Sequential(*[PlainResBlock(merged) for _ in range(cfg.res_blocks)])
        self.head = nn.Conv2d(merged, cfg.front_classes, 3, padding=1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        t1 = F.relu(self.down1(image))
        t2 = F.relu(self.down2(t1))
        t3 = F.relu(self.down3(t2))
        s1 = F.relu(self.skip1(F.pixel_unshuffle(t1, 4)))
        s2 = F.relu(self.skip2(F.pixel_unshuffle(t2, 2)))
        x = torch.cat([t3, s1, s2], dim=1)
        x = self.blocks(x)
        return self.head(x)


class PatchDiscriminator(nn.Module):
    """Conditional least-squares discriminator over image patches.

    The cell-resolution condition planes are nearest-upsampled to image
    resolution and concatenated to the image channels; output is an
    unbounded per-patch realism map at 1/8 resolution.
    """

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        w = cfg.width
        cin = cfg.image_channels + cfg.front_classes
        self.conv1 = nn.Conv2d(cin, w, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(2 * w, 3 * w, 3, stride=2, padding=1)
        self.head = nn.Conv2d(3 * w, 1, 3, padding=1)

    def forward(self, image: torch.Tensor, condition: torch.Tensor) -> torch.Tensor:
        cond = F.interpolate(condition, scale_factor=8, mode="nearest")
        x = torch.cat([image, cond], dim=1)
        x = F.relu(self.conv1(x))
        x = F.relu(self.conv2(x))
        x = F.relu(self.conv3(x))
        return self.head(x)


class Infer2Layer(nn.Module):
    """Two 3x3 conv layers; receptive field 5x5."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(cfg.front_classes, cfg.width, 3, padding=1)
        self.conv2 = nn.Conv2d(cfg.width, cfg.complete_classes, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv2(F.relu(self.conv1(x)))


class Infer5Layer(nn.Module):
    """Five 3x3 conv layers; receptive field 11x11."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        w = cfg.width
        self.conv1 = nn.Conv2d(cfg.front_classes, w, 3, padding=1)
        self.conv2 = nn.Conv2d(w, w, 3, padding=1)
        self.conv3 = nn.Conv2d(w, w, 3, padding=1)
        self.conv4 = nn.Conv2d(w, w, 3, padding=1)
        self.conv5 = nn.Conv2d(w, cfg.complete_classes, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in (self.conv1, self.conv2, self.conv3, self.conv4):
            x = F.relu(conv(x))
        return self.conv5(x)


class InferResidual(nn.Module):
    """Residual encoder-decoder with a dilated bottleneck and skips.

    Two max-pool downsamples, dilated residual blocks at the bottom so
    the receptive field spans the whole grid, then two upsampling stages
    that concatenate the saved skips.
    """

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        w = cfg.width
        self.stem = nn.Conv2d(cfg.front_classes, w, 3, padding=1, bias=False)
        self.stem_bn = nn.BatchNorm2d(w)
        self.block1 = NormResBlock(w)
        self.block2 = NormResBlock(w)
        self.bottom1 = NormResBlock(w, dilation=cfg.dilation)
        self.bottom2 = NormResBlock(w, dilation=cfg.dilation)
        self.up2 = nn.Conv2d(2 * w, w, 3, padding=1, bias=False)
        self.up2_bn = nn.BatchNorm2d(w)
        self.up1 = nn.Conv2d(2 * w, w, 3, padding=1, bias=False)
        self.up1_bn = nn.BatchNorm2d(w)
        self.head = nn.Conv2d(w, cfg.complete_classes, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.stem_bn(self.stem(x)))
        skip1 = self.block1(x)
        x = F.max_pool2d(skip1, 2)
        skip2 = self.block2(x)
        x = F.max_pool2d(skip2, 2)
        x = self.bottom2(self.bottom1(x))
        x = torch.cat([_upsample2(x), skip2], dim=1)
        x = F.relu(self.up2_bn(self.up2(x)))
        x = torch.cat([_upsample2(x), skip1], dim=1)
        x = F.relu(self.up1_bn(self.up1(x)))
        return self.head(x)


class _DoubleConv(nn.Module):
    def __init__(self, cin: int, cout: int) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.bn1(self.conv1(x)))
        return F.relu(self.bn2(self.conv2(x)))


class InferUNet(nn.Module):
    """Symmetric two-level encoder-decoder with skip concatenation."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        f = cfg.width
        self.enc1 = _DoubleConv(cfg.front_classes, f)
        self.enc2 = _DoubleConv(f, 2 * f)
        self.mid = _DoubleConv(2 * f, 4 * f)
        self.dec2 = _DoubleConv(6 * f, 2 * f)
        self.dec1 = _DoubleConv(3 * f, f)
        self.head = nn.Conv2d(f, cfg.complete_classes, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skip1 = self.enc1(x)
        skip2 = self.enc2(F.max_pool2d(skip1, 2))
        x = self.mid(F.max_pool2d(skip2, 2))
        x = self.dec2(torch.cat([_upsample2(x), skip2], dim=1))
        x = self.dec1(torch.cat([_upsample2(x), skip1], dim=1))
        return self.head(x)


_CLASSES = {
    "refiner": Refiner,
    "img2prog": Img2Prog,
    "discriminator": PatchDiscriminator,
    "infer_2lyr": Infer2Layer,
    "infer_5lyr": Infer5Layer,
    "infer_residual": InferResidual,
    "infer_unet": InferUNet,
}


def init_params(model: nn.Module, seed: int) -> None:
    """Deterministic re-initialization, stable across runs and platforms.

    Every conv weight gets its own generator keyed by (seed, module path),
    so adding or renaming layers elsewhere cannot shift another layer's
    draw. Norm layers reset to identity, biases to zero.
    """
    for name, m in sorted(model.named_modules(), key=lambda kv: kv[0]):
        if isinstance(m, nn.Conv2d):
            g = torch.Generator()
            # the CPU generator keeps only 32 seed bits, so fold the seed
            # and the module path into one 32-bit value together
            g.manual_seed(zlib.crc32(f"{int(seed)}:{name}".encode()))
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            with torch.no_grad():
                m.weight.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=g)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()
            m.reset_running_stats()
    if isinstance(model, Refiner):
        # start the decoder mid-range so early outputs are not black
        with torch.no_grad():
            model.to_rgb.bias.fill_(0.5)


def build_model(cfg: ModelConfig) -> nn.Module:
    """Instantiate and deterministically initialize the graph for a config."""
    cls = _CLASSES.get(cfg.kind)
    if cls is None:
        raise ConfigError(f"unknown model kind {cfg.kind!r}")
    model = cls(cfg)
    init_params(model, cfg.seed)
    return model
