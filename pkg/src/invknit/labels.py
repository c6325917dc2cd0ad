"""Label spaces, stitch grids, and their file formats.

Two label spaces exist. The *front* space has exactly 14 labels and
describes what is visible on the fabric face; the *complete* space has up
to 34 labels and carries enough information to drive a knitting machine
(back-side operations included). Complete labels project onto front
labels via the map's ``front_index`` column.

Label map CSV (no header, one entry per line)::

    index,name,color[,front_index]

``name`` may contain commas and is then quoted ("H,M"). ``color`` is
``#rrggbb``. ``front_index`` is required for complete maps and must be
absent from front maps. Indices must be dense 0..K-1 in file order.

Stitch grid CSV: 20 lines of 20 comma-separated non-negative integers,
LF line endings, row 0 = top of the fabric.

Multi-yarn generators emit *colored* complete labels of the form
``(slot/Nj)NAME`` (e.g. ``(1/2j)FK,MAK``: yarn slot 1 of a 2-yarn
structure). ``aggregate_colored`` strips the prefix; storage and models
only ever see aggregated names.
"""

from __future__ import annotations

import csv
import io
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from importlib import resources

import numpy as np

from .errors import ColoredLabelError, GridFormatError, MapFormatError

GRID_SIZE = 20
FRONT_K = 14
COMPLETE_K_MAX = 34

#: space_id values accepted for label maps. front_sj and front_mj share the
#: same 14-label structure and differ only in display colors.
MAP_SPACE_IDS = ("front_sj", "front_mj", "complete")

_COLOR_RE = re.compile(r"^#[0-9a-fA-F]{6}$")
_COLORED_RE = re.compile(r"^\((\d+)/(\d+)j\)(.*)$")


@dataclass(frozen=True)
class LabelEntry:
    index: int
    name: str
    color: str
    front_index: int | None = None


@dataclass(frozen=True)
class YarnType:
    """Yarn structure of a sample: 'sj' is single-yarn, 'mj' multi-yarn."""

    kind: str
    color_count: int

    def __post_init__(self) -> None:
        if self.kind == "sj":
            if self.color_count != 1:
                raise ValueError("sj yarn has exactly one color")
        elif self.kind == "mj":
            if self.color_count not in (2, 3, 4):
                raise ValueError("mj yarn uses 2-4 colors")
        else:
            raise ValueError(f"unknown yarn kind {self.kind!r}")


SJ = YarnType("sj", 1)


@dataclass(frozen=True)
class ColoredLabel:
    """Parsed '(slot/Nj)NAME' label: which yarn slot a cell belongs to."""

    slot: int
    count: int
    base: str


@dataclass(frozen=True)
class LabelMap:
    space_id: str
    entries: tuple[LabelEntry, ...]
    name_to_index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "name_to_index", {e.name: e.index for e in self.entries}
        )

    @property
    def k(self) -> int:
        return len(self.entries)

    @property
    def family(self) -> str:
        """'front' or 'complete'; the space a grid of this map lives in."""
        return "complete" if self.space_id == "complete" else "front"

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    @property
    def front_projection(self) -> dict[int, int] | None:
        if self.family != "complete":
            return None
        return {e.index: e.front_index for e in self.entries}

    def colors(self) -> np.ndarray:
        """(K, 3) uint8 RGB table in index order."""
        out = np.zeros((self.k, 3), dtype=np.uint8)
        for e in self.entries:
            out[e.index] = [int(e.color[i : i + 2], 16) for i in (1, 3, 5)]
        return out


class StitchGrid:
    """A 20x20 grid of label indices; row 0 is the top of the fabric.

    Instances are immutable: ``cells`` is a read-only int array. ``space``
    is the label-space family ('front' or 'complete') the indices refer to.
    """

    __slots__ = ("space", "cells")

    def __init__(self, space: str, cells: np.ndarray) -> None:
        if space not in ("front", "complete"):
            raise GridFormatError(f"unknown grid space {space!r}")
        arr = np.asarray(cells)
        if arr.shape != (GRID_SIZE, GRID_SIZE):
            raise GridFormatError(
                f"grid must be {GRID_SIZE}x{GRID_SIZE}, got {arr.shape}"
            )
        if not np.issubdtype(arr.dtype, np.integer):
            raise GridFormatError(f"grid cells must be integers, got {arr.dtype}")
        if (arr < 0).any():
            raise GridFormatError("grid cells must be non-negative")
        arr = arr.astype(np.int64, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "cells", arr)

    def __setattr__(self, name: str, value: object) -> None:
        raise AttributeError("StitchGrid is immutable")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StitchGrid):
            return NotImplemented
        return self.space == other.space and bool(np.array_equal(self.cells, other.cells))

    def __hash__(self) -> int:
        return hash((self.space, self.cells.tobytes()))

    def __repr__(self) -> str:
        return f"StitchGrid(space={self.space!r}, cells=<{GRID_SIZE}x{GRID_SIZE}>)"


def parse_colored(name: str) -> ColoredLabel | None:
    """Parse a colored label name; None when the name has no prefix."""
    m = _COLORED_RE.match(name)
    if m is None:
        return None
    slot, count, base = int(m.group(1)), int(m.group(2)), m.group(3)
    if not 1 <= count <= 4:
        raise ColoredLabelError(f"yarn count {count} outside 1..4 in {name!r}")
    if not 1 <= slot <= count:
        raise ColoredLabelError(f"slot {slot} outside 1..{count} in {name!r}")
    if not base:
        raise ColoredLabelError(f"colored label {name!r} has an empty base name")
    if _COLORED_RE.match(base):
        # prefixes do not nest; this keeps aggregation idempotent
        raise ColoredLabelError(f"nested color prefix in {name!r}")
    return ColoredLabel(slot=slot, count=count, base=base)


def aggregate_colored(name: str) -> str:
    """Strip a '(slot/Nj)' prefix, if any. Idempotent."""
    parsed = parse_colored(name)
    return name if parsed is None else parsed.base


def load_label_map(path: str | Path, space_id: str | None = None) -> LabelMap:
    """Load a label map CSV.

    ``space_id`` defaults to the file stem and must be one of
    front_sj / front_mj / complete. Front maps must have exactly 14
    entries and no front_index column; complete maps at most 34 entries,
    each with a front_index into the front space.
    """
    path = Path(path)
    sid = space_id if space_id is not None else path.stem
    if sid not in MAP_SPACE_IDS:
        raise MapFormatError(f"unknown label space {sid!r} for {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MapFormatError(f"cannot read label map {path}: {exc}") from exc
    return _parse_label_map(text, sid, str(path))


def _parse_label_map(text: str, space_id: str, origin: str) -> LabelMap:
    is_complete = space_id == "complete"
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows:
        raise MapFormatError(f"{origin}: empty label map")
    want_cols = 4 if is_complete else 3
    entries: list[LabelEntry] = []
    seen_names: set[str] = set()
    for lineno, row in enumerate(rows):
        if len(row) != want_cols:
            raise MapFormatError(
                f"{origin}: line {lineno + 1}: expected {want_cols} columns, got {len(row)}"
            )
        try:
            index = int(row[0])
        except ValueError as exc:
            raise MapFormatError(f"{origin}: line {lineno + 1}: bad index {row[0]!r}") from exc
        if index != lineno:
            raise MapFormatError(
                f"{origin}: indices must be dense 0..K-1 in order; "
                f"line {lineno + 1} has index {index}"
            )
        name = row[1]
        if not name:
            raise MapFormatError(f"{origin}: line {lineno + 1}: empty name")
        if name in seen_names:
            raise MapFormatError(f"{origin}: duplicate name {name!r}")
        seen_names.add(name)
        color = row[2]
        if not _COLOR_RE.match(color):
            raise MapFormatError(f"{origin}: line {lineno + 1}: bad color {color!r}")
        front_index: int | None = None
        if is_complete:
            try:
                front_index = int(row[3])
            except ValueError as exc:
                raise MapFormatError(
                    f"{origin}: line {lineno + 1}: bad front_index {row[3]!r}"
                ) from exc
            if not 0 <= front_index < FRONT_K:
                raise MapFormatError(
                    f"{origin}: line {lineno + 1}: front_index {front_index} "
                    f"outside 0..{FRONT_K - 1}"
                )
        entries.append(LabelEntry(index, name, color, front_index))
    k = len(entries)
    if is_complete:
        if k > COMPLETE_K_MAX:
            raise MapFormatError(f"{origin}: complete map has {k} > {COMPLETE_K_MAX} entries")
    elif k != FRONT_K:
        raise MapFormatError(f"{origin}: front map has {k} entries, expected {FRONT_K}")
    return LabelMap(space_id=space_id, entries=tuple(entries))


def default_map_path(space_id: str) -> Path:
    """Path of a label map shipped with the package."""
    if space_id not in MAP_SPACE_IDS:
        raise MapFormatError(f"unknown label space {space_id!r}")
    return Path(str(resources.files("invknit.data") / f"{space_id}.csv"))


def load_default_map(space_id: str) -> LabelMap:
    return load_label_map(default_map_path(space_id), space_id)


def complete_to_front(grid: StitchGrid, label_map: LabelMap) -> StitchGrid:
    """Project a complete grid onto the front label space."""
    if grid.space != "complete":
        raise GridFormatError(f"expected a complete grid, got space {grid.space!r}")
    projection = label_map.front_projection
    if projection is None:
        raise GridFormatError(f"map {label_map.space_id!r} has no front projection")
    if int(grid.cells.max()) >= label_map.k:
        raise GridFormatError(
            f"grid cell {int(grid.cells.max())} outside map of size {label_map.k}"
        )
    lut = np.array([projection[i] for i in range(label_map.k)], dtype=np.int64)
    return StitchGrid("front", lut[grid.cells])


def save_grid(grid: StitchGrid, path: str | Path) -> None:
    """Write a grid as 20 lines of 20 comma-separated indices (LF endings)."""
    path = Path(path)
    body = "\n".join(",".join(str(v) for v in row) for row in grid.cells) + "\n"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body.encode("ascii"))
    os.replace(tmp, path)


def load_grid(path: str | Path, label_map: LabelMap) -> StitchGrid:
    """Read a grid CSV and range-check it against ``label_map``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except (OSError, UnicodeDecodeError) as exc:
        raise GridFormatError(f"cannot read grid {path}: {exc}") from exc
    lines = text.splitlines()
    if len(lines) != GRID_SIZE:
        raise GridFormatError(f"{path}: expected {GRID_SIZE} rows, got {len(lines)}")
    cells = np.zeros((GRID_SIZE, GRID_SIZE), dtype=np.int64)
    for r, line in enumerate(lines):
        parts = line.split(",")
        if len(parts) != GRID_SIZE:
            raise GridFormatError(
                f"{path}: row {r + 1} has {len(parts)} cells, expected {GRID_SIZE}"
            )
        for c, part in enumerate(parts):
            try:
                value = int(part)
            except ValueError as exc:
                raise GridFormatError(f"{path}: bad cell {part!r} at ({r},{c})") from exc
            if value < 0:
                raise GridFormatError(f"{path}: negative cell at ({r},{c})")
            if value >= label_map.k:
                raise GridFormatError(
                    f"{path}: cell {value} at ({r},{c}) outside map of size {label_map.k}"
                )
            cells[r, c] = value
    return StitchGrid(label_map.family, cells)


def grid_to_color_image(grid: StitchGrid, label_map: LabelMap, cell_px: int = 8) -> np.ndarray:
    """Render a grid as an RGB uint8 image, one cell_px x cell_px block per cell."""
    if cell_px < 1:
        raise ValueError("cell_px must be >= 1")
    if grid.space != label_map.family:
        raise GridFormatError(
            f"grid space {grid.space!r} does not match map family {label_map.family!r}"
        )
    if int(grid.cells.max()) >= label_map.k:
        raise GridFormatError(
            f"grid cell {int(grid.cells.max())} outside map of size {label_map.k}"
        )
    colored = label_map.colors()[grid.cells]  # (20, 20, 3)
    return np.repeat(np.repeat(colored, cell_px, axis=0), cell_px, axis=1)
