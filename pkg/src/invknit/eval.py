"""Per-class metrics, confusion matrices, and the four usage scenarios.

Scenario inputs and products:

* S1: real photo -> refined rendering + front grid.
* S2: real photo -> front probabilities -> combined inference net -> complete grid.
* S3: as S2 but routed to a yarn-specific inference net.
* S4: ground-truth front grid (one-hot) -> yarn-specific inference net.

When ground truth is available (always, for synthetic datasets), each run
emits an EvalReport plus report.json, confusion.csv, per-sample grid CSVs,
and color visualization PNGs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, ConfigMismatchError, EvalError
from .labels import LabelMap, StitchGrid, grid_to_color_image, save_grid
from .models import (
    INFER_KINDS,
    ParameterStore,
    img2prog_forward,
    infer_forward,
    load_checkpoint,
    one_hot_planes,
    predicted_grid,
    refiner_forward,
)
from .synthgen import dataset_maps, load_sample

SCENARIOS = (1, 2, 3, 4)


@dataclass(frozen=True)
class EvalReport:
    """Per-class precision/recall/F1 plus macro and truth-weighted summaries."""

    scenario: str
    space: str
    sample_count: int
    class_names: tuple[str, ...]
    class_counts: tuple[int, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    macro_f1: float
    weighted_f1: float
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "space": self.space,
            "sample_count": self.sample_count,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "classes": [
                {
                    "name": name,
                    "count": count,
                    "precision": p,
                    "recall": r,
                    "f1": f,
                }
                for name, count, p, r, f in zip(
                    self.class_names, self.class_counts,
                    self.precision, self.recall, self.f1,
                )
            ],
        }


def confusion(preds: list[StitchGrid], truths: list[StitchGrid], k: int) -> np.ndarray:
    """K x K counts; entry [t][p] = cells with truth t predicted p."""
    if len(preds) != len(truths):
        raise EvalError(f"{len(preds)} predictions vs {len(truths)} truths")
    if not preds:
        raise EvalError("nothing to evaluate")
    matrix = np.zeros((k, k), dtype=np.int64)
    for pred, truth in zip(preds, truths):
        if pred.space != truth.space:
            raise EvalError(f"space mismatch: {pred.space!r} vs {truth.space!r}")
        t = truth.cells.ravel()
        p = pred.cells.ravel()
        if int(t.max()) >= k or int(p.max()) >= k:
            raise EvalError(f"labels exceed {k} classes")
        matrix += np.bincount(k * t + p, minlength=k * k).reshape(k, k)
    return matrix


def report_from_confusion(
    matrix: np.ndarray, label_map: LabelMap, scenario: str, sample_count: int
) -> EvalReport:
    k = matrix.shape[0]
    truth_counts = matrix.sum(axis=1)
    pred_counts = matrix.sum(axis=0)
    tp = np.diag(matrix).astype(np.float64)
    precision = np.divide(tp, pred_counts, out=np.zeros(k), where=pred_counts > 0)
    recall = np.divide(tp, truth_counts, out=np.zeros(k), where=truth_counts > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros(k), where=pr > 0)
    present = truth_counts > 0
    macro = float(f1[present].mean()) if present.any() else 0.0
    weighted = (
        float((f1 * truth_counts).sum() / truth_counts.sum())
        if truth_counts.sum() > 0 else 0.0
    )
    return EvalReport(
        scenario=scenario,
        space=label_map.family,
        sample_count=sample_count,
        class_names=tuple(label_map.names),
        class_counts=tuple(int(c) for c in truth_counts),
        precision=tuple(float(v) for v in precision),
        recall=tuple(float(v) for v in recall),
        f1=tuple(float(v) for v in f1),
        macro_f1=macro,
        weighted_f1=weighted,
        confusion=matrix,
    )


def per_class_f1(
    preds: list[StitchGrid],
    truths: list[StitchGrid],
    label_map: LabelMap,
    scenario: str = "custom",
) -> EvalReport:
    """F1 per class; macro averages only classes present in the truth."""
    matrix = confusion(preds, truths, label_map.k)
    return report_from_confusion(matrix, label_map, scenario, len(preds))


def write_report(report: EvalReport, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    lines = ["truth\\pred," + ",".join(f'"{n}"' if "," in n else n
                                       for n in report.class_names)]
    for i, name in enumerate(report.class_names):
        quoted = f'"{name}"' if "," in name else name
        lines.append(quoted + "," + ",".join(str(int(v)) for v in report.confusion[i]))
    (out_dir / "confusion.csv").write_text("\n".join(lines) + "\n")


# ------------------------------------------------------------- scenarios

def load_generation_pair(path: str | Path) -> tuple[ParameterStore, ParameterStore]:
    """A generation checkpoint is a directory holding the trained pair."""
    path = Path(path)
    if not path.is_dir():
        raise ConfigError(f"generation checkpoint {path} is not a directory")
    refiner = path / "best.refiner.iknt"
    translator = path / "best.img2prog.iknt"
    for p in (refiner, translator):
        if not p.exists():
            raise ConfigError(f"generation checkpoint is missing {p.name}")
    return (
        load_checkpoint(refiner, expect_kind="refiner"),
        load_checkpoint(translator, expect_kind="img2prog"),
    )


def load_inference_store(path: str | Path) -> ParameterStore:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"inference checkpoint {path} does not exist")
    store = load_checkpoint(path)
    if store.config.kind not in INFER_KINDS:
        raise ConfigMismatchError(
            f"{path} holds a {store.config.kind!r} model, need one of {INFER_KINDS}"
        )
    return store


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)


def _save_png(array: np.ndarray, path: Path) -> None:
    if array.dtype != np.uint8:
        array = np.clip(np.rint(array * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(array, "RGB").save(path)


def _front_map_for(maps: dict[str, LabelMap], yarn_kind: str) -> LabelMap:
    return maps["front_mj" if yarn_kind == "mj" else "front_sj"]


def run_scenario(
    scenario: int,
    dataset_dir: str | Path,
    sample_ids: list[str],
    checkpoints: dict[str, str | Path],
    out_dir: str | Path,
    write_images: bool = True,
    input_source: str = "frompred",
) -> EvalReport:
    """Run one usage scenario over dataset samples and write its artifacts.

    ``checkpoints`` keys: ``generation`` (S1-S3), ``inference`` (S2), and
    ``inference_sj``/``inference_mj`` (S3-S4; only the yarns that occur in
    ``sample_ids`` are required). ``input_source`` picks what scenarios 2
    and 3 feed their expansion net: chained front predictions (default)
    or ground-truth one-hot planes.
    """
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}, got {scenario}")
    if input_source not in ("frompred", "fromtrue"):
        raise ConfigError(
            f"input_source must be frompred or fromtrue, got {input_source!r}"
        )
    if not sample_ids:
        raise EvalError("no samples selected")
    dataset_dir = Path(dataset_dir)
    out_dir = Path(out_dir)
    maps = dataset_maps(dataset_dir)
    samples = [load_sample(dataset_dir, sid, maps) for sid in sample_ids]

    gen_pair = None
    if scenario in (1, 2, 3):
        if "generation" not in checkpoints:
            raise ConfigError(f"scenario {scenario} needs a 'generation' checkpoint")
        gen_pair = load_generation_pair(checkpoints["generation"])

    infer_stores: dict[str, ParameterStore] = {}
    if scenario == 2:
        if "inference" not in checkpoints:
            raise ConfigError("scenario 2 needs an 'inference' checkpoint")
        combined = load_inference_store(checkpoints["inference"])
        infer_stores = {"sj": combined, "mj": combined}
    elif scenario in (3, 4):
        for sample in samples:
            key = f"inference_{sample.yarn.kind}"
            if sample.yarn.kind not in infer_stores:
                if key not in checkpoints:
                    raise ConfigError(
                        f"scenario {scenario} needs {key!r} for sample {sample.id}"
                    )
                infer_stores[sample.yarn.kind] = load_inference_store(checkpoints[key])

    pred_dir = out_dir / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)

    preds: list[StitchGrid] = []
    truths: list[StitchGrid] = []
    for sample in samples:
        front_map = _front_map_for(maps, sample.yarn.kind)
        if scenario == 4:
            front_probs = one_hot_planes(sample.front, front_map.k)
            refined = None
        else:
            refined = refiner_forward(sample.real, gen_pair[0])
            front_probs = _softmax(img2prog_forward(refined, gen_pair[1]))
        front_pred = predicted_grid(front_probs, "front")

        if scenario == 1:
            pred, truth = front_pred, sample.front
        else:
            planes = front_probs
            if scenario != 4 and input_source == "fromtrue":
                planes = one_hot_planes(sample.front, front_map.k)
            logits = infer_forward(planes, infer_stores[sample.yarn.kind])
            pred, truth = predicted_grid(logits, "complete"), sample.complete
        preds.append(pred)
        truths.append(truth)
        save_grid(pred, pred_dir / f"{sample.id}.csv")

        if write_images:
            if refined is not None:
                _save_png(refined, out_dir / f"{sample.id}_rendering_pred.png")
            _save_png(grid_to_color_image(front_pred, front_map),
                      out_dir / f"{sample.id}_front_pred.png")
            _save_png(grid_to_color_image(sample.front, front_map),
                      out_dir / f"{sample.id}_front_true.png")
            if pred.space == "complete":
                _save_png(grid_to_color_image(pred, maps["complete"]),
                          out_dir / f"{sample.id}_complete_pred.png")
                _save_png(grid_to_color_image(sample.complete, maps["complete"]),
                          out_dir / f"{sample.id}_complete_true.png")

    space_map = maps["front_sj"] if scenario == 1 else maps["complete"]
    report = per_class_f1(preds, truths, space_map, scenario=f"s{scenario}")
    write_report(report, out_dir)
    return report
