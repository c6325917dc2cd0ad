"""Model configuration and parameter counting."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any

from ..errors import ConfigError

KINDS = (
    "refiner",
    "img2prog",
    "discriminator",
    "infer_2lyr",
    "infer_5lyr",
    "infer_residual",
    "infer_unet",
)

# default per-kind width knobs, sized so default parameter counts land close
# to the published complexity figures
_DEFAULT_WIDTHS = {
    "refiner": 24,
    "img2prog": 16,
    "discriminator": 32,
    "infer_2lyr": 48,
    "infer_5lyr": 234,
    "infer_residual": 88,
    "infer_unet": 24,
}

# kinds whose graphs pool twice, so the grid side must divide by 4
_POOLING_KINDS = ("infer_residual", "infer_unet")

TILE_STRIDE = 8  # image pixels per stitch cell


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters that fix a network graph.

    ``width`` scales every stage of the chosen kind. ``grid_size`` is the
    stitch-grid side; images are ``8 * grid_size`` pixels square. Shrinking
    both gives toy graphs for numeric gradient checks.
    """

    kind: str
    width: int
    grid_size: int = 20
    front_classes: int = 14
    complete_classes: int = 34
    image_channels: int = 3
    res_blocks: int = 2
    dilation: int = 2
    channel_mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        for name in ("width", "grid_size", "front_classes", "complete_classes",
                     "image_channels", "dilation"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.res_blocks < 0:
            raise ConfigError("res_blocks must be >= 0")
        if self.front_classes < 2 or self.complete_classes < 2:
            raise ConfigError("class counts must be >= 2")
        if self.kind in _POOLING_KINDS and self.grid_size % 4 != 0:
            raise ConfigError(f"{self.kind} needs grid_size divisible by 4")
        mean = tuple(float(v) for v in self.channel_mean)
        if len(mean) != 3:
            raise ConfigError("channel_mean must have 3 entries")
        if any(not 0.0 <= v <= 1.0 for v in mean):
            raise ConfigError("channel_mean entries must lie in [0, 1]")
        object.__setattr__(self, "channel_mean", mean)

    @property
    def image_px(self) -> int:
        return self.grid_size * TILE_STRIDE

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        if "kind" not in d or "width" not in d:
            raise ConfigError("config needs at least 'kind' and 'width'")
        d = dict(d)
        if "channel_mean" in d:
            d["channel_mean"] = tuple(d["channel_mean"])
        return cls(**d)


def default_config(kind: str, **overrides: Any) -> ModelConfig:
    """The documented default graph for a kind."""
    if kind not in KINDS:
        raise ConfigError(f"unknown model kind {kind!r}")
    base: dict[str, Any] = {"kind": kind, "width": _DEFAULT_WIDTHS[kind]}
    base.update(overrides)
    return ModelConfig(**base)


def count_parameters(config: ModelConfig) -> int:
    """Exact scalar parameter count of the instantiated graph."""
    from .nets import build_model

    return sum(p.numel() for p in build_model(config).parameters())
