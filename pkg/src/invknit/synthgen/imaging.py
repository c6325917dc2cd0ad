"""Rendering grids to images and recovering grids from clean renderings.

A render tile atlas assigns every label an 8x8 RGB tile built from the
label's display color plus an index-specific glyph; tiles are pairwise
distinct by more than 16/255 in max-abs pixel difference, which makes
``tile_decode`` an exact inverse of ``render`` on undegraded images.

``simulate_real`` turns a flat rendering into a photo-like image. The
degradation order is fixed: illumination gradient, per-channel color
jitter, Gaussian blur, additive Gaussian noise, elastic warp (at most
2 px). Zero-strength parameters leave the image untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np
from scipy import ndimage

from ..errors import InvknitError, ParamError, ShapeError, SpaceMismatchError
from ..labels import GRID_SIZE, LabelMap, StitchGrid

TILE_PX = 8
IMAGE_PX = GRID_SIZE * TILE_PX  # 160
#: smallest allowed max-abs difference between two tiles, in uint8 units
TILE_SEPARATION = 16


@dataclass(frozen=True)
class RenderTileAtlas:
    space: str  # 'front' or 'complete'
    tiles: np.ndarray  # (K, TILE_PX, TILE_PX, 3) uint8

    def __post_init__(self) -> None:
        t = self.tiles
        if t.ndim != 4 or t.shape[1:] != (TILE_PX, TILE_PX, 3) or t.dtype != np.uint8:
            raise ShapeError(f"tiles must be (K,{TILE_PX},{TILE_PX},3) uint8, got {t.shape}")
        t.setflags(write=False)

    @property
    def k(self) -> int:
        return self.tiles.shape[0]


def _glyph(index: int) -> np.ndarray:
    """(8, 8) bool pattern; distinct layout family per index."""
    yy, xx = np.mgrid[0:TILE_PX, 0:TILE_PX]
    kind = index % 4
    phase = index // 4
    if kind == 0:
        return (yy + phase) % 4 < 2  # horizontal stripes
    if kind == 1:
        return (xx + phase) % 4 < 2  # vertical stripes
    if kind == 2:
        return (xx + yy + phase) % 4 < 2  # diagonals
    return ((xx // 2 + yy // 2 + phase) % 2).astype(bool)  # checks


def build_atlas(label_map: LabelMap, seed: int) -> RenderTileAtlas:
    """Deterministic tile atlas for a label map."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed) % (2 ** 63), 0xA71A5)))
    base = label_map.colors().astype(np.int16)
    tiles = np.zeros((label_map.k, TILE_PX, TILE_PX, 3), dtype=np.int16)
    for i in range(label_map.k):
        jitter = rng.integers(-10, 11, size=3)
        color = np.clip(base[i] + jitter, 0, 255)
        tile = np.broadcast_to(color, (TILE_PX, TILE_PX, 3)).copy()
        mask = _glyph(i)
        # glyph pixels swing toward the opposite end of the value range
        toward = np.where(color.sum() > 382, -70, 70)
        tile[mask] = np.clip(tile[mask] + toward, 0, 255)
        tiles[i] = tile
    atlas = RenderTileAtlas(space=label_map.family, tiles=tiles.astype(np.uint8))
    _check_separation(atlas)
    return atlas


def _check_separation(atlas: RenderTileAtlas) -> None:
    t = atlas.tiles.astype(np.int16).reshape(atlas.k, -1)
    for i in range(atlas.k):
        diff = np.abs(t - t[i]).max(axis=1)
        diff[i] = 255
        if int(diff.min()) <= TILE_SEPARATION:
            j = int(diff.argmin())
            raise InvknitError(
                f"tiles {i} and {j} are only {int(diff.min())} apart (need > {TILE_SEPARATION})"
            )


def render(grid: StitchGrid, atlas: RenderTileAtlas) -> np.ndarray:
    """Tile a grid into a (160, 160, 3) uint8 rendering."""
    if grid.space != atlas.space:
        raise SpaceMismatchError(
            f"grid space {grid.space!r} does not match atlas space {atlas.space!r}"
        )
    if int(grid.cells.max()) >= atlas.k:
        raise ShapeError(f"grid cell {int(grid.cells.max())} outside atlas of {atlas.k} tiles")
    picked = atlas.tiles[grid.cells]  # (20, 20, 8, 8, 3)
    return (
        picked.transpose(0, 2, 1, 3, 4)
        .reshape(IMAGE_PX, IMAGE_PX, 3)
        .copy()
    )


def tile_decode(image: np.ndarray, atlas: RenderTileAtlas) -> StitchGrid:
    """Nearest tile per 8x8 block by sum of squared differences.

    Ties resolve to the lowest label index.
    """
    if image.shape != (IMAGE_PX, IMAGE_PX, 3):
        raise ShapeError(f"expected ({IMAGE_PX},{IMAGE_PX},3) image, got {image.shape}")
    img = image.astype(np.float32)
    if image.dtype != np.uint8:
        img = img * 255.0
    blocks = (
        img.reshape(GRID_SIZE, TILE_PX, GRID_SIZE, TILE_PX, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(GRID_SIZE * GRID_SIZE, -1)
    )
    flat = atlas.tiles.reshape(atlas.k, -1).astype(np.float32)
    d2 = ((blocks[:, None, :] - flat[None, :, :]) ** 2).sum(axis=2)
    cells = d2.argmin(axis=1).reshape(GRID_SIZE, GRID_SIZE)  # argmin takes first min
    return StitchGrid(atlas.space, cells.astype(np.int64))


@dataclass(frozen=True)
class DegradeParams:
    """Strengths of the photo-degradation stages, in documented ranges."""

    illumination: float = 0.25  # [0, 0.5] multiplicative gradient amplitude
    color_jitter: float = 0.08  # [0, 0.3] per-channel gain jitter
    blur_sigma: float = 0.7     # [0, 3] Gaussian blur, pixels
    noise_std: float = 0.04     # [0, 0.2] additive Gaussian noise on [0,1] scale
    warp_px: float = 1.5        # [0, 2] max elastic displacement, pixels

    _RANGES = {
        "illumination": 0.5,
        "color_jitter": 0.3,
        "blur_sigma": 3.0,
        "noise_std": 0.2,
        "warp_px": 2.0,
    }

    def __post_init__(self) -> None:
        for f in fields(self):
            if f.name.startswith("_"):
                continue
            value = getattr(self, f.name)
            hi = self._RANGES[f.name]
            if not 0.0 <= value <= hi:
                raise ParamError(f"{f.name}={value} outside [0, {hi}]")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if not f.name.startswith("_")}


def simulate_real(image: np.ndarray, params: DegradeParams, seed: int) -> np.ndarray:
    """Degrade a clean rendering into a pseudo-real photo. Deterministic in seed."""
    if image.shape != (IMAGE_PX, IMAGE_PX, 3):
        raise ShapeError(f"expected ({IMAGE_PX},{IMAGE_PX},3) image, got {image.shape}")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed) % (2 ** 63), 0xDE64)))
    x = image.astype(np.float32)
    if image.dtype == np.uint8:
        x = x / 255.0

    if params.illumination > 0:
        u = np.linspace(-1.0, 1.0, IMAGE_PX, dtype=np.float32)
        a, b = rng.uniform(-1.0, 1.0, size=2)
        plane = a * u[None, :] + b * u[:, None]
        peak = max(float(np.abs(plane).max()), 1e-6)
        gain = 1.0 + params.illumination * plane / peak
        x = x * gain[:, :, None]

    if params.color_jitter > 0:
        gains = 1.0 + rng.uniform(-params.color_jitter, params.color_jitter, size=3)
        x = x * gains.astype(np.float32)

    if params.blur_sigma > 0:
        x = ndimage.gaussian_filter(x, sigma=(params.blur_sigma, params.blur_sigma, 0.0))

    if params.noise_std > 0:
        x = x + rng.normal(0.0, params.noise_std, size=x.shape).astype(np.float32)

    if params.warp_px > 0:
        ctrl = rng.uniform(-1.0, 1.0, size=(2, 5, 5))
        disp = ndimage.zoom(ctrl, (1, IMAGE_PX / 5, IMAGE_PX / 5), order=1)
        peak = max(float(np.abs(disp).max()), 1e-6)
        disp = disp * (params.warp_px / peak)
        rows, cols = np.mgrid[0:IMAGE_PX, 0:IMAGE_PX].astype(np.float32)
        coords = np.stack([rows + disp[0], cols + disp[1]])
        warped = np.empty_like(x)
        for ch in range(3):
            warped[:, :, ch] = ndimage.map_coordinates(
                x[:, :, ch], coords, order=1, mode="reflect"
            )
        x = warped

    out = np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)
    return out
