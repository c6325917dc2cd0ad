"""Single-sample forward wrappers over the network graphs.

These take and return channels-last numpy arrays, so callers never touch
torch layout conventions. Training code uses the modules directly.
"""

from __future__ import annotations

import numpy as np
import torch

from ..errors import ConfigError, ConfigMismatchError, ShapeError
from ..labels import StitchGrid
from .checkpoint import ParameterStore, model_from_store

INFER_KINDS = ("infer_2lyr", "infer_5lyr", "infer_residual", "infer_unet")


def _require_kind(store: ParameterStore, *kinds: str) -> None:
    if store.config.kind not in kinds:
        raise ConfigMismatchError(
            f"store holds a {store.config.kind!r} model, need one of {kinds}"
        )


def _image_tensor(image: np.ndarray, cfg) -> torch.Tensor:
    expected = (cfg.image_px, cfg.image_px, cfg.image_channels)
    arr = np.asarray(image)
    if arr.shape != expected:
        raise ShapeError(f"expected image of shape {expected}, got {arr.shape}")
    arr = arr.astype(np.float32)
    if np.asarray(image).dtype == np.uint8:
        arr = arr / 255.0
    return torch.from_numpy(arr.copy()).permute(2, 0, 1).unsqueeze(0)


def _planes_tensor(planes: np.ndarray, cfg, channels: int, what: str) -> torch.Tensor:
    expected = (cfg.grid_size, cfg.grid_size, channels)
    arr = np.asarray(planes, dtype=np.float32)
    if arr.shape != expected:
        raise ShapeError(f"expected {what} of shape {expected}, got {arr.shape}")
    return torch.from_numpy(arr.copy()).permute(2, 0, 1).unsqueeze(0)


def _run(model: torch.nn.Module, *inputs: torch.Tensor) -> np.ndarray:
    model.eval()
    with torch.no_grad():
        out = model(*inputs)
    return out.squeeze(0).permute(1, 2, 0).numpy().astype(np.float32)


def refiner_forward(image: np.ndarray, store: ParameterStore) -> np.ndarray:
    """Clean up a fabric photo; shape-preserving, output in [0, 1]."""
    _require_kind(store, "refiner")
    return _run(model_from_store(store), _image_tensor(image, store.config))


def img2prog_forward(image: np.ndarray, store: ParameterStore) -> np.ndarray:
    """Image to per-cell front-label logits (grid x grid x classes)."""
    _require_kind(store, "img2prog")
    return _run(model_from_store(store), _image_tensor(image, store.config))


def discriminator_forward(
    image: np.ndarray, condition: np.ndarray, store: ParameterStore
) -> np.ndarray:
    """Patch realism map for an image under a per-cell label condition."""
    _require_kind(store, "discriminator")
    cfg = store.config
    return _run(
        model_from_store(store),
        _image_tensor(image, cfg),
        _planes_tensor(condition, cfg, cfg.front_classes, "condition"),
    )


def infer_forward(probs: np.ndarray, store: ParameterStore) -> np.ndarray:
    """Front-label planes to complete-label logits."""
    if store.config.kind not in INFER_KINDS:
        raise ConfigError(
            f"store holds a {store.config.kind!r} model, need one of {INFER_KINDS}"
        )
    cfg = store.config
    return _run(
        model_from_store(store),
        _planes_tensor(probs, cfg, cfg.front_classes, "front planes"),
    )


def one_hot_planes(grid: StitchGrid, classes: int) -> np.ndarray:
    """Grid to one-hot (grid x grid x classes) float32 planes."""
    cells = grid.cells
    if int(cells.max()) >= classes:
        raise ShapeError(f"cell {int(cells.max())} outside {classes} classes")
    planes = np.zeros((*cells.shape, classes), dtype=np.float32)
    rows, cols = np.indices(cells.shape)
    planes[rows, cols, cells] = 1.0
    return planes


def predicted_grid(logits: np.ndarray, space: str) -> StitchGrid:
    """Per-cell argmax; exact ties resolve to the lowest label index."""
    arr = np.asarray(logits)
    if arr.ndim != 3 or arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"expected (grid, grid, classes) logits, got {arr.shape}")
    return StitchGrid(space, np.argmax(arr, axis=2).astype(np.int64))
