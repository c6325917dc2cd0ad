"""Knittability syntax: which label adjacencies a machine can realize.

The rules are corpus-derived: a horizontal or vertical neighbor pair is
allowed iff it was observed in the corpus the matrix was built from.
Only the 4-neighborhood counts; diagonals are unconstrained. A 20x20
grid has 2 * 20 * 19 = 760 checked pairs.

``syntax_penalty`` is the differentiable counterpart of ``validate``:
for a soft label field it accumulates the probability mass expected to
fall on disallowed pairs, and on a one-hot field it equals the exact
violation count.

Transitions CSV: ``direction,a_name,b_name,allowed`` rows (direction
'h' or 'v'); pairs absent from the file are disallowed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
import torch

from .errors import GridFormatError, MapFormatError, NormalizationError, SpaceMismatchError
from .labels import GRID_SIZE, LabelMap, StitchGrid

#: checked neighbor pairs in one full grid (horizontal + vertical)
PAIRS_PER_GRID = 2 * GRID_SIZE * (GRID_SIZE - 1)

_NORM_TOL = 1e-5


class Violation(NamedTuple):
    """A disallowed adjacency anchored at its left/top cell."""

    row: int
    col: int
    direction: str  # 'h': (row,col)->(row,col+1); 'v': (row,col)->(row+1,col)
    pair: tuple[int, int]


@dataclass(frozen=True)
class TransitionMatrix:
    space: str  # 'front' or 'complete'
    horiz: np.ndarray  # (K, K) bool; horiz[a, b]: b may sit right of a
    vert: np.ndarray  # (K, K) bool; vert[a, b]: b may sit below a

    def __post_init__(self) -> None:
        for name in ("horiz", "vert"):
            m = getattr(self, name)
            if m.ndim != 2 or m.shape[0] != m.shape[1] or m.dtype != np.bool_:
                raise SpaceMismatchError(f"{name} must be a square bool matrix")
        if self.horiz.shape != self.vert.shape:
            raise SpaceMismatchError("horiz and vert must have the same shape")
        self.horiz.setflags(write=False)
        self.vert.setflags(write=False)

    @property
    def k(self) -> int:
        return self.horiz.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TransitionMatrix):
            return NotImplemented
        return (
            self.space == other.space
            and np.array_equal(self.horiz, other.horiz)
            and np.array_equal(self.vert, other.vert)
        )


def build_transitions(grids: Iterable[StitchGrid], label_map: LabelMap) -> TransitionMatrix:
    """Observe adjacent pairs over a corpus of same-space grids."""
    grids = list(grids)
    if not grids:
        raise SpaceMismatchError("cannot build transitions from an empty corpus")
    k = label_map.k
    horiz = np.zeros((k, k), dtype=np.bool_)
    vert = np.zeros((k, k), dtype=np.bool_)
    for grid in grids:
        if grid.space != label_map.family:
            raise SpaceMismatchError(
                f"grid space {grid.space!r} does not match map family {label_map.family!r}"
            )
        if int(grid.cells.max()) >= k:
            raise GridFormatError(
                f"grid cell {int(grid.cells.max())} outside map of size {k}"
            )
        cells = grid.cells
        horiz[cells[:, :-1].ravel(), cells[:, 1:].ravel()] = True
        vert[cells[:-1, :].ravel(), cells[1:, :].ravel()] = True
    return TransitionMatrix(space=label_map.family, horiz=horiz, vert=vert)


def validate(grid: StitchGrid, matrix: TransitionMatrix) -> list[Violation]:
    """List disallowed adjacencies, sorted row-major ('h' before 'v' per cell)."""
    if grid.space != matrix.space:
        raise SpaceMismatchError(
            f"grid space {grid.space!r} does not match matrix space {matrix.space!r}"
        )
    if int(grid.cells.max()) >= matrix.k:
        raise GridFormatError(
            f"grid cell {int(grid.cells.max())} outside matrix of size {matrix.k}"
        )
    cells = grid.cells
    out: list[Violation] = []
    for r in range(GRID_SIZE):
        for c in range(GRID_SIZE):
            a = int(cells[r, c])
            if c + 1 < GRID_SIZE:
                b = int(cells[r, c + 1])
                if not matrix.horiz[a, b]:
                    out.append(Violation(r, c, "h", (a, b)))
            if r + 1 < GRID_SIZE:
                b = int(cells[r + 1, c])
                if not matrix.vert[a, b]:
                    out.append(Violation(r, c, "v", (a, b)))
    return out


def count_violations(grid: StitchGrid, matrix: TransitionMatrix) -> int:
    """len(validate(grid, matrix)) without building the violation list."""
    if grid.space != matrix.space:
        raise SpaceMismatchError(
            f"grid space {grid.space!r} does not match matrix space {matrix.space!r}"
        )
    cells = grid.cells
    bad_h = ~matrix.horiz[cells[:, :-1], cells[:, 1:]]
    bad_v = ~matrix.vert[cells[:-1, :], cells[1:, :]]
    return int(bad_h.sum()) + int(bad_v.sum())


def syntax_penalty(probs: torch.Tensor, matrix: TransitionMatrix) -> torch.Tensor:
    """Expected disallowed-pair mass of a soft label field.

    ``probs`` is (H, W, K) or (B, H, W, K) with each cell's distribution
    summing to 1 (checked to 1e-5). Returns a differentiable scalar for
    a single field, or a (B,) vector for a batch. Equals the exact
    violation count when the field is one-hot.
    """
    if probs.ndim == 3:
        return _penalty_one(probs, matrix)
    if probs.ndim == 4:
        return torch.stack([_penalty_one(p, matrix) for p in probs])
    raise NormalizationError(f"probs must be (H,W,K) or (B,H,W,K), got {tuple(probs.shape)}")


def _penalty_one(probs: torch.Tensor, matrix: TransitionMatrix) -> torch.Tensor:
    if probs.shape[-1] != matrix.k:
        raise SpaceMismatchError(
            f"field has {probs.shape[-1]} channels, matrix expects {matrix.k}"
        )
    sums = probs.sum(dim=-1)
    if (sums - 1.0).abs().max().item() > _NORM_TOL:
        raise NormalizationError("cell distributions must sum to 1 (tol 1e-5)")
    dis_h = torch.as_tensor(~matrix.horiz, dtype=probs.dtype, device=probs.device)
    dis_v = torch.as_tensor(~matrix.vert, dtype=probs.dtype, device=probs.device)
    h = torch.einsum("rck,kl,rcl->", probs[:, :-1], dis_h, probs[:, 1:])
    v = torch.einsum("rck,kl,rcl->", probs[:-1, :], dis_v, probs[1:, :])
    return h + v


def save_transitions(matrix: TransitionMatrix, label_map: LabelMap, path: str | Path) -> None:
    """Write allowed pairs as ``direction,a_name,b_name,1`` rows."""
    if label_map.family != matrix.space or label_map.k != matrix.k:
        raise SpaceMismatchError("label map does not match the matrix space")
    names = label_map.names
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for direction, m in (("h", matrix.horiz), ("v", matrix.vert)):
        for a, b in zip(*np.nonzero(m)):
            writer.writerow([direction, names[a], names[b], 1])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_transitions(path: str | Path, label_map: LabelMap) -> TransitionMatrix:
    """Read a transitions CSV; pairs absent from the file are disallowed."""
    k = label_map.k
    horiz = np.zeros((k, k), dtype=np.bool_)
    vert = np.zeros((k, k), dtype=np.bool_)
    by_name = label_map.name_to_index
    text = Path(path).read_text(encoding="utf-8")
    for lineno, row in enumerate(csv.reader(io.StringIO(text))):
        if not row:
            continue
        if len(row) != 4:
            raise MapFormatError(f"{path}: line {lineno + 1}: expected 4 columns")
        direction, a_name, b_name, allowed = row
        if direction not in ("h", "v"):
            raise MapFormatError(f"{path}: line {lineno + 1}: bad direction {direction!r}")
        if a_name not in by_name or b_name not in by_name:
            raise SpaceMismatchError(
                f"{path}: line {lineno + 1}: label not in space {label_map.space_id!r}"
            )
        if allowed not in ("0", "1"):
            raise MapFormatError(f"{path}: line {lineno + 1}: bad allowed flag {allowed!r}")
        m = horiz if direction == "h" else vert
        m[by_name[a_name], by_name[b_name]] = allowed == "1"
    return TransitionMatrix(space=label_map.family, horiz=horiz, vert=vert)
