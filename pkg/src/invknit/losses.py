"""Training losses for the generation and inference phases.

Public entry points take channels-last arrays or tensors — (H, W, K) or
(N, H, W, K) — and return 0-dim torch tensors so gradients flow when the
inputs carry them. Float64 inputs stay float64 throughout, which the
finite-difference gradient tests rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import NormalizationError, ShapeError
from .labels import StitchGrid

_PROB_TOL = 1e-5
_LOG_FLOOR = 1e-12


def _as_batched(t, what: str) -> torch.Tensor:
    if isinstance(t, StitchGrid):
        raise ShapeError(f"{what} must be probability planes, not a grid")
    t = torch.as_tensor(np.asarray(t) if isinstance(t, np.ndarray) else t)
    if t.ndim == 3:
        t = t.unsqueeze(0)
    if t.ndim != 4:
        raise ShapeError(f"{what} must be (H,W,K) or (N,H,W,K), got {tuple(t.shape)}")
    return t


def _check_normalized(probs: torch.Tensor, what: str) -> None:
    with torch.no_grad():
        worst_sum = float((probs.sum(dim=-1) - 1.0).abs().max())
        smallest = float(probs.min())
    if worst_sum > _PROB_TOL:
        raise NormalizationError(f"{what} cell sums deviate from 1 beyond {_PROB_TOL}")
    if smallest < -_PROB_TOL:
        raise NormalizationError(f"{what} contains negative probabilities")


def _as_truth(truth, probs: torch.Tensor) -> torch.Tensor:
    if isinstance(truth, StitchGrid):
        cells = torch.from_numpy(np.array(truth.cells))
    elif isinstance(truth, (list, tuple)) and truth and isinstance(truth[0], StitchGrid):
        cells = torch.from_numpy(np.stack([np.array(g.cells) for g in truth]))
    else:
        cells = torch.as_tensor(np.asarray(truth) if isinstance(truth, np.ndarray) else truth)
    cells = cells.long()
    if cells.ndim == 2:
        cells = cells.unsqueeze(0)
    if cells.shape != probs.shape[:3]:
        raise ShapeError(
            f"truth shape {tuple(cells.shape)} does not match probs {tuple(probs.shape[:3])}"
        )
    k = probs.shape[-1]
    if int(cells.min()) < 0 or int(cells.max()) >= k:
        raise ShapeError(f"truth labels outside [0, {k})")
    return cells


def cross_entropy(probs, truth) -> torch.Tensor:
    """Mean over cells of -log p(true class)."""
    p = _as_batched(probs, "probs")
    _check_normalized(p, "probs")
    cells = _as_truth(truth, p)
    p_true = p.gather(3, cells.unsqueeze(3)).squeeze(3)
    return -(p_true.clamp(min=_LOG_FLOOR).log()).mean()


def mil_cross_entropy(probs, truth, radius: int = 1) -> torch.Tensor:
    """Neighborhood-tolerant cross entropy.

    Each cell is charged -log of the best probability its true class
    attains anywhere in the (2*radius+1)^2 spatial window around it, so
    off-by-one placements stop being penalized. Edge windows clip.
    """
    if radius < 1:
        raise ShapeError("radius must be >= 1")
    p = _as_batched(probs, "probs")
    _check_normalized(p, "probs")
    cells = _as_truth(truth, p)
    per_class = p.permute(0, 3, 1, 2)
    pooled = F.max_pool2d(per_class, 2 * radius + 1, stride=1, padding=radius)
    p_best = pooled.permute(0, 2, 3, 1).gather(3, cells.unsqueeze(3)).squeeze(3)
    return -(p_best.clamp(min=_LOG_FLOOR).log()).mean()


def adversarial_losses(d_fake, d_real) -> tuple[torch.Tensor, torch.Tensor]:
    """Least-squares pairing: fake labeled 0, real labeled 1.

    Returns (generator loss, discriminator loss). The generator term only
    involves d_fake; callers pick which map carries the graph they need.
    """
    fake = torch.as_tensor(np.asarray(d_fake) if isinstance(d_fake, np.ndarray) else d_fake)
    real = torch.as_tensor(np.asarray(d_real) if isinstance(d_real, np.ndarray) else d_real)
    gen = ((fake - 1.0) ** 2).mean()
    disc = ((real - 1.0) ** 2).mean() + (fake ** 2).mean()
    return gen, disc


def gram_matrix(features) -> torch.Tensor:
    """Channel co-activation matrix, normalized by H*W*C."""
    f = torch.as_tensor(np.asarray(features) if isinstance(features, np.ndarray) else features)
    if f.ndim != 3:
        raise ShapeError(f"features must be (H,W,C), got {tuple(f.shape)}")
    h, w, c = f.shape
    flat = f.reshape(h * w, c)
    return flat.T @ flat / float(h * w * c)


class FrozenConvExtractor(nn.Module):
    """Fixed random conv stack standing in for pretrained style features.

    Three 3x3 conv + ReLU stages (the latter two stride 2); weights are
    seeded, variance-scaled, and frozen. Callers may substitute any
    module mapping (N, C, H, W) images to a list of feature maps.
    """

    def __init__(self, seed: int = 0, in_channels: int = 3,
                 widths: tuple[int, ...] = (16, 32, 64)) -> None:
        super().__init__()
        layers = []
        cin = in_channels
        for i, cout in enumerate(widths):
            layers.append(nn.Conv2d(cin, cout, 3, stride=1 if i == 0 else 2, padding=1))
            cin = cout
        self.convs = nn.ModuleList(layers)
        from .models.nets import init_params

        init_params(self, seed)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, images: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        x = images
        for conv in self.convs:
            weight = conv.weight.to(x.dtype)
            bias = conv.bias.to(x.dtype)
            x = F.relu(F.conv2d(x, weight, bias, stride=conv.stride, padding=conv.padding))
            feats.append(x)
        return feats


_default_extractor: FrozenConvExtractor | None = None


def default_extractor() -> FrozenConvExtractor:
    global _default_extractor
    if _default_extractor is None:
        _default_extractor = FrozenConvExtractor(seed=0)
    return _default_extractor


def _gram_batched(f: torch.Tensor) -> torch.Tensor:
    n, c = f.shape[0], f.shape[1]
    flat = f.reshape(n, c, -1)
    return flat @ flat.transpose(1, 2) / float(f.shape[2] * f.shape[3] * c)


def style_loss(generated, target, extractor=None, layer_weights=None) -> torch.Tensor:
    """Sum over layers of the squared Frobenius gap between Gram matrices."""
    g = _as_batched(generated, "generated")
    t = _as_batched(target, "target")
    if g.shape != t.shape:
        raise ShapeError(f"image shapes differ: {tuple(g.shape)} vs {tuple(t.shape)}")
    if extractor is None:
        extractor = default_extractor()
    g_feats = extractor(g.permute(0, 3, 1, 2))
    t_feats = extractor(t.permute(0, 3, 1, 2))
    if layer_weights is None:
        layer_weights = [1.0] * len(g_feats)
    if len(layer_weights) != len(g_feats):
        raise ShapeError(
            f"{len(layer_weights)} layer weights for {len(g_feats)} feature maps"
        )
    total = None
    for w, gf, tf in zip(layer_weights, g_feats, t_feats):
        gap = _gram_batched(gf) - _gram_batched(tf)
        term = float(w) * (gap ** 2).sum(dim=(1, 2)).mean()
        total = term if total is None else total + term
    return total


@dataclass(frozen=True)
class LossWeights:
    """Scales for the combined generation-phase loss."""

    w_ce: float = 0.2
    w_adv: float = 0.2
    w_style: float = 0.2
    w_syntax: float = 5e-4
    w_d: float = 1.0
    style_layers: tuple[float, ...] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        for name in ("w_ce", "w_adv", "w_style", "w_syntax", "w_d"):
            if getattr(self, name) < 0:
                raise ShapeError(f"{name} must be >= 0")
        object.__setattr__(self, "style_layers", tuple(float(v) for v in self.style_layers))

    def to_dict(self) -> dict:
        return {
            "w_ce": self.w_ce,
            "w_adv": self.w_adv,
            "w_style": self.w_style,
            "w_syntax": self.w_syntax,
            "w_d": self.w_d,
            "style_layers": list(self.style_layers),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        d = dict(d)
        if "style_layers" in d:
            d["style_layers"] = tuple(d["style_layers"])
        return cls(**d)


def total_generation_loss(
    ce=None, adversarial=None, style=None, syntax=None,
    weights: LossWeights = LossWeights(),
) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted sum of the generation-phase terms plus a logging breakdown.

    Terms may be omitted (None) when a variant disables them; the
    breakdown then records 0 for that term.
    """
    zero = torch.zeros(())
    terms = {
        "ce": (weights.w_ce, ce),
        "adv": (weights.w_adv, adversarial),
        "style": (weights.w_style, style),
        "syntax": (weights.w_syntax, syntax),
    }
    total = None
    breakdown: dict[str, float] = {}
    for name, (w, value) in terms.items():
        if value is None:
            breakdown[name] = 0.0
            continue
        value = torch.as_tensor(value)
        breakdown[name] = value.item()
        weighted = w * value
        total = weighted if total is None else total + weighted
    if total is None:
        total = zero
    breakdown["total"] = total.item()
    return total, breakdown
