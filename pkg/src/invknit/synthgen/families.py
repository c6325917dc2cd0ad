"""Procedural stitch-pattern families.

Each family places a characteristic motif type on a knit background and
emits a complete-space grid. Single-yarn (sj) samples use plain label
names; multi-yarn (mj) samples are first written with colored
``(slot/Nj)`` prefixes and aggregated before indexing, mirroring how
colored instructions are collapsed for storage.

Structural conventions the complete labels encode (these are what the
inference task has to learn):

* sj background is FK; mj background is FK,MAK. The front projection of
  both is FK, so yarn type is invisible at cell level.
* a tuck directly on top of another tuck is T(F), otherwise T (sj);
  mj tucks are always FT,FMAK.
* chevron apexes: peak apex is E,V(R), valley apex E,V(L) for sj; mj
  uses E,V(L) for both.
* mj eyelets come as horizontal O(5),BK pairs or isolated AO(2) cells,
  never adjacent to other eyelets, so the two are locally separable.
* every mj grid carries one FO(2) bind-off notch (2-4 cells). Together
  with the eyelets this makes yarn type recoverable from the front grid,
  but only through long-range context.

Hem is not generated for mj yarns; asking for it raises GenerationError.
"""

from __future__ import annotations

import numpy as np

from ..errors import GenerationError
from ..labels import (
    GRID_SIZE,
    LabelMap,
    StitchGrid,
    YarnType,
    aggregate_colored,
    load_default_map,
)

FAMILIES = (
    "Hem", "Move1", "Miss", "Cable1", "Links2",
    "Move2", "Cable2", "Mesh", "Tuck", "Links1",
)
MJ_FAMILIES = tuple(f for f in FAMILIES if f != "Hem")

_FAMILY_INDEX = {name: i for i, name in enumerate(FAMILIES)}

_SJ_ROLES = {
    "bk": "BK",
    "hem_top": "H,M",
    "miss": "M",
    "tuck_plain": "T",
    "tuck_stacked": "T(F)",
    "mesh_a": "V,HM",
    "mesh_b": "Y,MATBK",
    "vr": "VR",
    "vl": "VL",
    "apex_peak": "E,V(R)",
    "apex_valley": "E,V(L)",
    "xr": "X(R)",
    "xl": "X(L)",
}

_MJ_ROLES = {
    "bk": "BK",
    "miss": "M",
    "tuck_plain": "FT,FMAK",
    "tuck_stacked": "FT,FMAK",
    "mesh_pair": "O(5),BK",
    "mesh_single": "AO(2)",
    "mesh_v": "V,M",
    "vr": "VR,FMAK",
    "vl": "VL",
    "apex_peak": "E,V(L)",
    "apex_valley": "E,V(L)",
    "xr": "X(R)",
    "xl": "X(L)",
    "notch": "FO(2)",
}

_default_complete_map: LabelMap | None = None


def _complete_map() -> LabelMap:
    global _default_complete_map
    if _default_complete_map is None:
        _default_complete_map = load_default_map("complete")
    return _default_complete_map


class _Palette:
    """Resolves motif roles to label names, coloring them for mj yarns."""

    def __init__(self, yarn: YarnType, rng: np.random.Generator) -> None:
        self.yarn = yarn
        self._rng = rng
        self._slot = 1

    def begin_motif(self) -> None:
        # background is yarn slot 1; motifs use a pattern yarn slot
        if self.yarn.kind == "mj":
            self._slot = int(self._rng.integers(2, self.yarn.color_count + 1))

    def background(self) -> str:
        if self.yarn.kind == "sj":
            return "FK"
        return f"(1/{self.yarn.color_count}j)FK,MAK"

    def name(self, role: str) -> str:
        if self.yarn.kind == "sj":
            return _SJ_ROLES[role]
        return f"({self._slot}/{self.yarn.color_count}j){_MJ_ROLES[role]}"


def _cells_free(occ: np.ndarray, cells: list[tuple[int, int]]) -> bool:
    # out-of-bounds halo cells count as free
    return all(
        not (0 <= r < GRID_SIZE and 0 <= c < GRID_SIZE and occ[r, c])
        for r, c in cells
    )


def _in_bounds(cells: list[tuple[int, int]]) -> bool:
    return all(0 <= r < GRID_SIZE and 0 <= c < GRID_SIZE for r, c in cells)


def _claim(occ: np.ndarray, cells: list[tuple[int, int]]) -> None:
    for r, c in cells:
        if 0 <= r < GRID_SIZE and 0 <= c < GRID_SIZE:
            occ[r, c] = True


def _paint(names: np.ndarray, cells: list[tuple[int, int]], label: str) -> None:
    for r, c in cells:
        names[r, c] = label


class _MotifFailure(Exception):
    """Internal: a mandatory motif could not be placed."""


def _place_motif(rng, occ, paint_cells_fn, tries=80, mandatory=False, what=""):
    """Sample anchors until the motif's cells are free, then claim them.

    ``paint_cells_fn(rng)`` returns (painted, claimed) cell lists or None
    when the sampled anchor is out of bounds. Cells in ``claimed`` must
    cover ``painted``.
    """
    for _ in range(tries):
        result = paint_cells_fn(rng)
        if result is None:
            continue
        painted, claimed = result
        if not _in_bounds([rc for rc, _label in painted]):
            continue
        if not _cells_free(occ, claimed):
            continue
        _claim(occ, claimed)
        return painted
    if mandatory:
        raise _MotifFailure(what or "mandatory motif")
    return None


# --------------------------------------------------------------- builders
# Every builder starts with one mandatory motif so the family-characteristic
# labels are always present.

def _build_hem(rng, names, occ, pal):
    n_bands = 1 if rng.random() < 0.55 else 2
    placed = 0
    for _ in range(n_bands):
        h = int(rng.integers(1, 5))

        def motif(rng, h=h):
            r0 = int(rng.integers(1, GRID_SIZE - h + 1))
            cells_top = [(r0 - 1, c) for c in range(GRID_SIZE)]
            cells_bk = [(r, c) for r in range(r0, r0 + h) for c in range(GRID_SIZE)]
            painted = [((r, c), "hem_top") for r, c in cells_top]
            painted += [((r, c), "bk") for r, c in cells_bk]
            return painted, cells_top + cells_bk

        pal.begin_motif()
        got = _place_motif(rng, occ, motif, mandatory=placed == 0, what="hem band")
        if got:
            placed += 1
            for (r, c), role in got:
                names[r, c] = pal.name(role)


def _build_links1(rng, names, occ, pal):
    n = int(rng.integers(8, 15))
    for i in range(n):
        h, w = int(rng.integers(2, 6)), int(rng.integers(2, 6))

        def motif(rng, h=h, w=w):
            r0 = int(rng.integers(0, GRID_SIZE - h + 1))
            c0 = int(rng.integers(0, GRID_SIZE - w + 1))
            cells = [(r, c) for r in range(r0, r0 + h) for c in range(c0, c0 + w)]
            return [((r, c), "bk") for r, c in cells], cells

        pal.begin_motif()
        got = _place_motif(rng, occ, motif, mandatory=i == 0, what="links patch")
        if got:
            for (r, c), role in got:
                names[r, c] = pal.name(role)


def _build_links2(rng, names, occ, pal):
    h, w = int(rng.integers(12, 19)), int(rng.integers(12, 19))
    b = int(rng.choice([2, 3, 4]))

    def motif(rng):
        r0 = int(rng.integers(0, GRID_SIZE - h + 1))
        c0 = int(rng.integers(0, GRID_SIZE - w + 1))
        claimed = [(r, c) for r in range(r0, r0 + h) for c in range(c0, c0 + w)]
        painted = [
            ((r, c), "bk")
            for r, c in claimed
            if ((r - r0) // b + (c - c0) // b) % 2 == 0
        ]
        return painted, claimed

    pal.begin_motif()
    got = _place_motif(rng, occ, motif, mandatory=True, what="checkerboard")
    for (r, c), role in got:
        names[r, c] = pal.name(role)


def _build_miss(rng, names, occ, pal):
    n = int(rng.integers(80, 181))
    for i in range(n):
        def motif(rng):
            r0 = int(rng.integers(0, GRID_SIZE))
            c0 = int(rng.integers(0, GRID_SIZE))
            return [((r0, c0), "miss")], [(r0, c0)]

        pal.begin_motif()
        got = _place_motif(rng, occ, motif, mandatory=i == 0, what="miss cell")
        if got:
            for (r, c), role in got:
                names[r, c] = pal.name(role)


def _build_tuck(rng, names, occ, pal):
    n_cols = int(rng.integers(10, 17))
    for i in range(n_cols):
        solid = rng.random() < 0.5
        n_cells = int(rng.integers(3, 9)) if solid else int(rng.integers(3, 7))

        def motif(rng, solid=solid, n_cells=n_cells):
            span = n_cells if solid else 2 * n_cells - 1
            if span > GRID_SIZE:
                return None
            r0 = int(rng.integers(0, GRID_SIZE - span + 1))
            c0 = int(rng.integers(0, GRID_SIZE))
            claimed = [(r, c0) for r in range(r0, r0 + span)]
            if solid:
                # stacked run: only the bottom cell is a plain tuck
                painted = [((r, c0), "tuck_stacked") for r in range(r0, r0 + n_cells - 1)]
                painted.append(((r0 + n_cells - 1, c0), "tuck_plain"))
            else:
                painted = [((r0 + 2 * j, c0), "tuck_plain") for j in range(n_cells)]
            return painted, claimed

        pal.begin_motif()
        got = _place_motif(rng, occ, motif, mandatory=i == 0, what="tuck column")
        if got:
            for (r, c), role in got:
                names[r, c] = pal.name(role)


def _build_mesh(rng, names, occ, pal):
    if pal.yarn.kind == "sj":
        n = int(rng.integers(20, 46))
        for i in range(n):
            def motif(rng):
                r0 = int(rng.integers(0, GRID_SIZE))
                c0 = int(rng.integers(0, GRID_SIZE - 1))
                cells = [(r0, c0), (r0, c0 + 1)]
                return [((r0, c0), "mesh_a"), ((r0, c0 + 1), "mesh_b")], cells

            pal.begin_motif()
            got = _place_motif(rng, occ, motif, mandatory=i == 0, what="eyelet pair")
            if got:
                for (r, c), role in got:
                    names[r, c] = pal.name(role)
        return

    # mj: O(5),BK comes in horizontal pairs, AO(2) isolated; a one-cell
    # horizontal halo keeps the two locally separable
    n_pairs = int(rng.integers(6, 13))
    for i in range(n_pairs):
        def motif(rng):
            r0 = int(rng.integers(0, GRID_SIZE - 1))
            c0 = int(rng.integers(0, GRID_SIZE - 1))
            pair = [(r0, c0), (r0, c0 + 1)]
            below = (r0 + 1, c0)
            claimed = pair + [(r0, c0 - 1), (r0, c0 + 2), below]
            painted = [((r0, c0), "mesh_pair"), ((r0, c0 + 1), "mesh_pair")]
            if below[0] < GRID_SIZE:
                painted.append((below, "mesh_v"))
            return painted, claimed

        pal.begin_motif()
        got = _place_motif(rng, occ, motif, mandatory=i == 0, what="eyelet pair")
        if got:
            for (r, c), role in got:
                names[r, c] = pal.name(role)

    n_singles = int(rng.integers(6, 15))
    for i in range(n_singles):
        def motif(rng):
            r0 = int(rng.integers(0, GRID_SIZE))
            c0 = int(rng.integers(0, GRID_SIZE))
            claimed = [(r0, c0), (r0, c0 - 1), (r0, c0 + 1)]
            return [((r0, c0), "mesh_single")], claimed

        pal.begin_motif()
        got = _place_motif(rng, occ, motif, mandatory=i == 0, what="isolated eyelet")
        if got:
            for (r, c), role in got:
                names[r, c] = pal.name(role)


def _build_move1(rng, names, occ, pal):
    n = int(rng.integers(6, 11))
    for i in range(n):
        right = rng.random() < 0.5
        length = int(rng.integers(6, 15))

        def motif(rng, right=right, length=length):
            r0 = int(rng.integers(length - 1, GRID_SIZE))
            if right:
                c0 = int(rng.integers(0, GRID_SIZE - length + 1))
                cells = [(r0 - j, c0 + j) for j in range(length)]
                role = "vr"
            else:
                c0 = int(rng.integers(length - 1, GRID_SIZE))
                cells = [(r0 - j, c0 - j) for j in range(length)]
                role = "vl"
            return [((r, c), role) for r, c in cells], cells

        pal.begin_motif()
        got = _place_motif(rng, occ, motif, mandatory=i == 0, what="move line")
        if got:
            for (r, c), role in got:
                names[r, c] = pal.name(role)


def _build_move2(rng, names, occ, pal):
    n = int(rng.integers(4, 9))
    for i in range(n):
        peak = rng.random() < 0.5
        arm = int(rng.integers(3, 8))

        def motif(rng, peak=peak, arm=arm):
            if peak:
                r0 = int(rng.integers(0, GRID_SIZE - arm))
                c0 = int(rng.integers(arm, GRID_SIZE - arm))
                painted = [((r0, c0), "apex_peak")]
                cells = [(r0, c0)]
                for j in range(1, arm + 1):
                    painted.append(((r0 + j, c0 - j), "vr"))
                    painted.append(((r0 + j, c0 + j), "vl"))
                    cells += [(r0 + j, c0 - j), (r0 + j, c0 + j)]
            else:
                r0 = int(rng.integers(arm, GRID_SIZE))
                c0 = int(rng.integers(arm, GRID_SIZE - arm))
                painted = [((r0, c0), "apex_valley")]
                cells = [(r0, c0)]
                for j in range(1, arm + 1):
                    painted.append(((r0 - j, c0 - j), "vl"))
                    painted.append(((r0 - j, c0 + j), "vr"))
                    cells += [(r0 - j, c0 - j), (r0 - j, c0 + j)]
            return painted, cells

        pal.begin_motif()
        got = _place_motif(rng, occ, motif, mandatory=i == 0, what="chevron")
        if got:
            for (r, c), role in got:
                names[r, c] = pal.name(role)


def _build_cable1(rng, names, occ, pal):
    n = int(rng.integers(4, 9))
    for i in range(n):
        period = int(rng.integers(3, 6))
        phase = int(rng.integers(0, period))

        def motif(rng, period=period, phase=phase):
            c0 = int(rng.integers(0, GRID_SIZE - 1))
            rows = list(range(phase, GRID_SIZE, period))
            if not rows:
                return None
            painted, cells = [], []
            for r in rows:
                painted += [((r, c0), "xr"), ((r, c0 + 1), "xl")]
                cells += [(r, c0), (r, c0 + 1)]
            return painted, cells

        pal.begin_motif()
        got = _place_motif(rng, occ, motif, mandatory=i == 0, what="cable strip")
        if got:
            for (r, c), role in got:
                names[r, c] = pal.name(role)


def _build_cable2(rng, names, occ, pal):
    n = int(rng.integers(2, 4))
    for i in range(n):
        period = int(rng.integers(4, 7))
        phase = int(rng.integers(0, period))

        def motif(rng, period=period, phase=phase):
            c0 = int(rng.integers(1, GRID_SIZE - 5))
            rows = list(range(phase, GRID_SIZE, period))
            if not rows:
                return None
            painted, cells = [], []
            for gc in (c0 - 1, c0 + 4):  # purl gutters flank the cable
                for r in range(GRID_SIZE):
                    painted.append(((r, gc), "bk"))
                    cells.append((r, gc))
            for r in rows:
                painted += [((r, c0), "xr"), ((r, c0 + 1), "xr")]
                painted += [((r, c0 + 2), "xl"), ((r, c0 + 3), "xl")]
                cells += [(r, c0 + j) for j in range(4)]
            return painted, cells

        pal.begin_motif()
        got = _place_motif(rng, occ, motif, mandatory=i == 0, what="wide cable")
        if got:
            for (r, c), role in got:
                names[r, c] = pal.name(role)


_BUILDERS = {
    "Hem": _build_hem,
    "Links1": _build_links1,
    "Links2": _build_links2,
    "Miss": _build_miss,
    "Tuck": _build_tuck,
    "Mesh": _build_mesh,
    "Move1": _build_move1,
    "Move2": _build_move2,
    "Cable1": _build_cable1,
    "Cable2": _build_cable2,
}


def _rng_for(family: str, yarn: YarnType, seed: int) -> np.random.Generator:
    yarn_code = 0 if yarn.kind == "sj" else yarn.color_count
    entropy = (int(seed) % (2 ** 63), _FAMILY_INDEX[family], yarn_code)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def generate_colored_names(family: str, yarn: YarnType, seed: int) -> np.ndarray:
    """20x20 array of (possibly colored) complete label names."""
    if family not in FAMILIES:
        raise GenerationError(f"unknown pattern family {family!r}")
    if yarn.kind == "mj" and family == "Hem":
        raise GenerationError("Hem is not generated for mj yarns")
    rng = _rng_for(family, yarn, seed)
    pal = _Palette(yarn, rng)
    names = np.full((GRID_SIZE, GRID_SIZE), pal.background(), dtype=object)
    occ = np.zeros((GRID_SIZE, GRID_SIZE), dtype=bool)
    try:
        _BUILDERS[family](rng, names, occ, pal)
        if yarn.kind == "mj":
            # bind-off notch: the always-present mj cue
            width = int(rng.integers(2, 5))

            def notch(rng, width=width):
                r0 = int(rng.integers(0, GRID_SIZE))
                c0 = int(rng.integers(0, GRID_SIZE - width + 1))
                cells = [(r0, c0 + j) for j in range(width)]
                return [((r, c), "notch") for r, c in cells], cells

            pal.begin_motif()
            for (r, c), role in _place_motif(rng, occ, notch, mandatory=True, what="notch"):
                names[r, c] = pal.name(role)
    except _MotifFailure as exc:
        raise GenerationError(
            f"could not place {exc} for family {family} (seed {seed})"
        ) from exc
    return names


def generate_pattern(
    family: str, yarn: YarnType, seed: int, label_map: LabelMap | None = None
) -> StitchGrid:
    """Generate one complete-space grid. Deterministic in (family, yarn, seed)."""
    names = generate_colored_names(family, yarn, seed)
    label_map = label_map if label_map is not None else _complete_map()
    lookup = label_map.name_to_index
    cells = np.zeros((GRID_SIZE, GRID_SIZE), dtype=np.int64)
    for r in range(GRID_SIZE):
        for c in range(GRID_SIZE):
            base = aggregate_colored(names[r, c])
            if base not in lookup:
                raise GenerationError(f"generated label {base!r} not in complete map")
            cells[r, c] = lookup[base]
    return StitchGrid("complete", cells)
