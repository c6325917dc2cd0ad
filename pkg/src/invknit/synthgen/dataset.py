"""Synthetic dataset builder and reader.

On-disk layout::

    dataset/
      manifest.json          build config, censuses, channel mean, counts
      maps/                  front_sj.csv, front_mj.csv, complete.csv
      transitions.csv        front-space corpus transition matrix
      samples/<id>/
        real.png             degraded pseudo-photo (160x160 RGB)
        rendering.png        clean tile rendering of the front grid
        front.csv            20x20 front label indices
        complete.csv         20x20 complete label indices
        meta.json            id, yarn, family, seed
      splits/
        train.txt val.txt test.txt    one sample id per line

Builds are deterministic: the same config produces byte-identical trees.
Splits are stratified per yarn kind with largest-remainder rounding
(ties go to later splits, so 165 samples at 80/10/10 give 132/16/17).
"""

from __future__ import annotations

import json
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigError, GenerationError
from ..labels import (
    LabelMap,
    StitchGrid,
    YarnType,
    complete_to_front,
    default_map_path,
    load_default_map,
    load_grid,
    load_label_map,
    save_grid,
)
from ..syntax import build_transitions, count_violations, save_transitions
from .families import FAMILIES, MJ_FAMILIES, generate_pattern
from .imaging import DegradeParams, build_atlas, render, simulate_real

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class DatasetConfig:
    """Build parameters. Default counts keep the documented 3000:1950 yarn ratio."""

    seed: int = 7
    sj_count: int = 200
    mj_count: int = 130
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    degrade: DegradeParams = field(default_factory=DegradeParams)

    def __post_init__(self) -> None:
        if self.sj_count < 0 or self.mj_count < 0:
            raise ConfigError("sample counts must be non-negative")
        if self.sj_count + self.mj_count == 0:
            raise ConfigError("dataset must contain at least one sample")
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f < 0 for f in fracs):
            raise ConfigError("split fractions must be non-negative")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fracs)}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "sj_count": self.sj_count,
            "mj_count": self.mj_count,
            "train_fraction": self.train_fraction,
            "val_fraction": self.val_fraction,
            "test_fraction": self.test_fraction,
            "degrade": self.degrade.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetConfig":
        data = dict(data)
        degrade = data.pop("degrade", None)
        known = {f for f in cls.__dataclass_fields__ if f != "degrade"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown dataset config keys: {sorted(unknown)}")
        try:
            params = DegradeParams(**degrade) if degrade is not None else DegradeParams()
        except TypeError as exc:
            raise ConfigError(f"bad degrade params: {exc}") from exc
        try:
            return cls(degrade=params, **data)
        except TypeError as exc:
            raise ConfigError(f"bad dataset config: {exc}") from exc


def split_counts(total: int, fractions: tuple[float, float, float]) -> tuple[int, ...]:
    """Largest-remainder apportionment; ties go to later splits."""
    floors = [math.floor(total * f) for f in fractions]
    remainders = [total * f - fl for f, fl in zip(fractions, floors)]
    seats = total - sum(floors)
    order = sorted(range(len(fractions)), key=lambda i: (-remainders[i], -i))
    for i in order[:seats]:
        floors[i] += 1
    return tuple(floors)


def _mix(*parts: int) -> int:
    """Stable derived seed from integer parts."""
    entropy = tuple(int(p) % (2 ** 63) for p in parts)
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _plan(config: DatasetConfig) -> list[dict]:
    """Per-sample plan: id, yarn, family, generator seed, degrade seed."""
    plan = []
    for i in range(config.sj_count):
        family = FAMILIES[i % len(FAMILIES)]
        plan.append(
            {
                "id": f"sj_{i:04d}",
                "yarn": YarnType("sj", 1),
                "family": family,
                "seed": _mix(config.seed, 1, i),
                "degrade_seed": _mix(config.seed, 2, i),
            }
        )
    for i in range(config.mj_count):
        family = MJ_FAMILIES[i % len(MJ_FAMILIES)]
        color_count = (2, 3, 4)[i % 3]
        plan.append(
            {
                "id": f"mj{color_count}_{i:04d}",
                "yarn": YarnType("mj", color_count),
                "family": family,
                "seed": _mix(config.seed, 3, i),
                "degrade_seed": _mix(config.seed, 4, i),
            }
        )
    return plan


def _assign_splits(config: DatasetConfig, plan: list[dict]) -> dict[str, list[str]]:
    fractions = (config.train_fraction, config.val_fraction, config.test_fraction)
    assigned: dict[str, list[str]] = {s: [] for s in SPLITS}
    for kind_idx, kind in enumerate(("sj", "mj")):
        ids = [p["id"] for p in plan if p["yarn"].kind == kind]
        if not ids:
            continue
        rng = np.random.default_rng(np.random.SeedSequence((config.seed % 2 ** 63, 5, kind_idx)))
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        counts = split_counts(len(ids), fractions)
        start = 0
        for split, n in zip(SPLITS, counts):
            assigned[split].extend(shuffled[start : start + n])
            start += n
    return {s: sorted(v) for s, v in assigned.items()}


def build_dataset(config: DatasetConfig, out_dir: str | Path) -> dict:
    """Generate all samples, splits, maps, transitions, and the manifest."""
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    (out / "splits").mkdir(exist_ok=True)
    (out / "maps").mkdir(exist_ok=True)

    complete_map = load_default_map("complete")
    front_map = load_default_map("front_sj")
    atlas = build_atlas(front_map, _mix(config.seed, 6, 0))

    plan = _plan(config)
    front_census = np.zeros(front_map.k, dtype=np.int64)
    complete_census = np.zeros(complete_map.k, dtype=np.int64)
    family_counts: dict[str, int] = {}
    front_grids = []
    complete_grids = []

    for item in plan:
        complete = generate_pattern(item["family"], item["yarn"], item["seed"], complete_map)
        front = complete_to_front(complete, complete_map)
        rendering = render(front, atlas)
        real = simulate_real(rendering, config.degrade, item["degrade_seed"])

        sample_dir = out / "samples" / item["id"]
        sample_dir.mkdir(exist_ok=True)
        Image.fromarray(real).save(sample_dir / "real.png")
        Image.fromarray(rendering).save(sample_dir / "rendering.png")
        save_grid(front, sample_dir / "front.csv")
        save_grid(complete, sample_dir / "complete.csv")
        meta = {
            "id": item["id"],
            "yarn": {"kind": item["yarn"].kind, "color_count": item["yarn"].color_count},
            "family": item["family"],
            "seed": item["seed"],
        }
        (sample_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")

        front_census += np.bincount(front.cells.ravel(), minlength=front_map.k)
        complete_census += np.bincount(complete.cells.ravel(), minlength=complete_map.k)
        family_counts[item["family"]] = family_counts.get(item["family"], 0) + 1
        front_grids.append(front)
        complete_grids.append(complete)

    # corpus transition matrices; every generated grid is valid by construction
    front_matrix = build_transitions(front_grids, front_map)
    complete_matrix = build_transitions(complete_grids, complete_map)
    for grid in complete_grids:
        bad = count_violations(grid, complete_matrix)
        if bad:
            raise GenerationError(f"pipeline self-check failed: {bad} syntax violations")
    save_transitions(front_matrix, front_map, out / "transitions.csv")

    assigned = _assign_splits(config, plan)
    for split in SPLITS:
        (out / "splits" / f"{split}.txt").write_text(
            "".join(sid + "\n" for sid in assigned[split])
        )

    for space_id in ("front_sj", "front_mj", "complete"):
        shutil.copyfile(default_map_path(space_id), out / "maps" / f"{space_id}.csv")

    train_ids = set(assigned["train"])
    mean_acc = np.zeros(3, dtype=np.float64)
    n_train = 0
    for item in plan:
        if item["id"] in train_ids:
            arr = np.asarray(Image.open(out / "samples" / item["id"] / "real.png"))
            mean_acc += arr.reshape(-1, 3).mean(axis=0) / 255.0
            n_train += 1
    channel_mean = (mean_acc / max(n_train, 1)).tolist()

    total_cells = int(front_census.sum())
    manifest = {
        "format_version": 1,
        "config": config.to_dict(),
        "counts": {
            "total": len(plan),
            "sj": config.sj_count,
            "mj": config.mj_count,
            "splits": {s: len(assigned[s]) for s in SPLITS},
        },
        "family_counts": dict(sorted(family_counts.items())),
        "front_census": {front_map.names[i]: int(front_census[i]) for i in range(front_map.k)},
        "complete_census": {
            complete_map.names[i]: int(complete_census[i]) for i in range(complete_map.k)
        },
        "fk_front_fraction": float(front_census[front_map.name_to_index["FK"]] / total_cells),
        "channel_mean": channel_mean,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


# ----------------------------------------------------------------- reading

@dataclass
class Sample:
    id: str
    yarn: YarnType
    family: str
    seed: int
    real: np.ndarray  # float32 [0,1] (160,160,3)
    rendering: np.ndarray  # float32 [0,1] (160,160,3)
    front: StitchGrid
    complete: StitchGrid


def read_manifest(dataset_dir: str | Path) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise ConfigError(f"{dataset_dir} is not a dataset (no manifest.json)")
    return json.loads(path.read_text())


def dataset_maps(dataset_dir: str | Path) -> dict[str, LabelMap]:
    maps_dir = Path(dataset_dir) / "maps"
    if not maps_dir.is_dir():
        raise ConfigError(f"{dataset_dir} is not a dataset (no maps directory)")
    return {
        sid: load_label_map(maps_dir / f"{sid}.csv", sid)
        for sid in ("front_sj", "front_mj", "complete")
    }


def split_ids(dataset_dir: str | Path, split: str) -> list[str]:
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    path = Path(dataset_dir) / "splits" / f"{split}.txt"
    if not path.exists():
        raise ConfigError(f"{dataset_dir} has no {split} split")
    return [line for line in path.read_text().splitlines() if line]


def _load_image(path: Path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    return arr / 255.0


def load_sample(dataset_dir: str | Path, sample_id: str, maps: dict[str, LabelMap] | None = None) -> Sample:
    base = Path(dataset_dir) / "samples" / sample_id
    if not base.exists():
        raise ConfigError(f"no sample {sample_id!r} under {dataset_dir}")
    if maps is None:
        maps = dataset_maps(dataset_dir)
    meta = json.loads((base / "meta.json").read_text())
    return Sample(
        id=meta["id"],
        yarn=YarnType(meta["yarn"]["kind"], meta["yarn"]["color_count"]),
        family=meta["family"],
        seed=meta["seed"],
        real=_load_image(base / "real.png"),
        rendering=_load_image(base / "rendering.png"),
        front=load_grid(base / "front.csv", maps["front_sj"]),
        complete=load_grid(base / "complete.csv", maps["complete"]),
    )


def load_split(dataset_dir: str | Path, split: str) -> list[Sample]:
    maps = dataset_maps(dataset_dir)
    return [load_sample(dataset_dir, sid, maps) for sid in split_ids(dataset_dir, split)]
