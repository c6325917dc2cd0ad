"""Training loops for both pipeline phases, built for exact reproducibility.

Every run writes a self-contained directory:

    <run_dir>/config.json       the TrainConfig that produced the run
    <run_dir>/metrics.jsonl     one record per logged step
    <run_dir>/ckpt-<step>.iknt  parameter snapshots (per-model suffixes for
                                the generation trio)
    <run_dir>/ckpt-<step>.opt.iknt  optimizer moments, so a resumed run
                                replays the uninterrupted one bit for bit
    <run_dir>/best.iknt         parameters at the best validation macro-F1

Batches are drawn by a counter-based generator keyed on (seed, step), so
step k samples the same indices whether the run was interrupted or not.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, ShapeError
from .eval import load_generation_pair, per_class_f1
from .labels import StitchGrid
from .losses import (
    LossWeights,
    adversarial_losses,
    cross_entropy,
    mil_cross_entropy,
    style_loss,
    total_generation_loss,
)
from .models import (
    INFER_KINDS,
    ParameterStore,
    build_model,
    default_config,
    load_checkpoint,
    model_from_store,
    one_hot_planes,
    save_checkpoint,
    store_from_model,
)
from .syntax import load_transitions, syntax_penalty
from .synthgen import dataset_maps, load_sample, read_manifest, split_ids

PHASES = ("generation", "inference")
DATASET_SELECTORS = ("default", "sj", "mj")
INPUT_SOURCES = ("fromtrue", "frompred")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run needs besides its output directory."""

    phase: str
    dataset_dir: str
    kind: str = ""
    dataset: str = "default"
    input_source: str = "fromtrue"
    predictions_dir: str | None = None
    learning_rate: float = 5e-4
    decay_steps: int = 50000
    decay_rate: float = 0.3
    max_iter: int = 1000
    batch_size: int = 8
    seed: int = 0
    log_every: int = 1
    checkpoint_every: int = 0
    val_every: int = 0
    width: int | None = None
    refiner_width: int | None = None
    img2prog_width: int | None = None
    discriminator_width: int | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    use_style: bool = True
    use_image_discriminator: bool = True
    use_mil: bool = False
    init_from: str | None = None

    def __post_init__(self) -> None:
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.phase == "inference":
            if self.kind not in INFER_KINDS:
                raise ConfigError(
                    f"inference training needs kind in {INFER_KINDS}, got {self.kind!r}"
                )
        elif self.kind:
            raise ConfigError("generation training picks its own models; leave kind empty")
        if self.dataset not in DATASET_SELECTORS:
            raise ConfigError(
                f"dataset must be one of {DATASET_SELECTORS}, got {self.dataset!r}"
            )
        if self.input_source not in INPUT_SOURCES:
            raise ConfigError(
                f"input_source must be one of {INPUT_SOURCES}, got {self.input_source!r}"
            )
        if self.input_source == "frompred":
            if self.phase != "inference":
                raise ConfigError("frompred inputs only apply to inference training")
            if not self.predictions_dir:
                raise ConfigError(
                    "frompred needs predictions_dir (see materialize_frompred)"
                )
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.decay_steps < 1:
            raise ConfigError(f"decay_steps must be >= 1, got {self.decay_steps}")
        if not 0 < self.decay_rate <= 1:
            raise ConfigError(f"decay_rate must be in (0, 1], got {self.decay_rate}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.log_every < 1:
            raise ConfigError(f"log_every must be >= 1, got {self.log_every}")
        if self.checkpoint_every < 0 or self.val_every < 0:
            raise ConfigError("checkpoint_every and val_every must be >= 0")
        for name in ("width", "refiner_width", "img2prog_width", "discriminator_width"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if not isinstance(self.weights, LossWeights):
            raise ConfigError("weights must be a LossWeights instance")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.to_dict() if f.name == "weights" else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
        if "phase" not in data or "dataset_dir" not in data:
            raise ConfigError("train config needs at least phase and dataset_dir")
        kwargs = dict(data)
        if "weights" in kwargs and not isinstance(kwargs["weights"], LossWeights):
            kwargs["weights"] = LossWeights.from_dict(kwargs["weights"])
        return cls(**kwargs)


def lr_schedule(step: int, config: TrainConfig) -> float:
    """Staircase decay: the base rate scaled down once per decay interval."""
    if step < 0:
        raise ConfigError(f"step must be >= 0, got {step}")
    return config.learning_rate * config.decay_rate ** (step // config.decay_steps)


def batch_indices(seed: int, step: int, population: int, batch_size: int) -> np.ndarray:
    """Indices for one step, a pure function of (seed, step)."""
    if population < 1:
        raise ConfigError("cannot sample from an empty dataset")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(step,)))
    return rng.integers(0, population, size=batch_size)


class Adam(object):
    """Plain Adam over named parameters with fully exposed state.

    The moments live in ordinary dicts so checkpoints can persist them and a
    resumed run continues with the exact same update sequence.
    """

    def __init__(self, named_params: list[tuple[str, torch.nn.Parameter]]):
        self.named = list(named_params)
        self.m = {n: torch.zeros_like(p) for n, p in self.named}
        self.v = {n: torch.zeros_like(p) for n, p in self.named}
        self.t = 0

    def zero_grad(self) -> None:
        for _, p in self.named:
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1 ** self.t
        bc2 = 1.0 - ADAM_BETA2 ** self.t
        with torch.no_grad():
            for name, p in self.named:
                if p.grad is None:
                    continue
                g = p.grad
                m, v = self.m[name], self.v[name]
                m.mul_(ADAM_BETA1).add_(g, alpha=1.0 - ADAM_BETA1)
                v.mul_(ADAM_BETA2).addcmul_(g, g, value=1.0 - ADAM_BETA2)
                p.addcdiv_(m / bc1, (v / bc2).sqrt_().add_(ADAM_EPS), value=-lr)

    def state_tensors(self, prefix: str) -> dict[str, torch.Tensor]:
        out = {f"{prefix}step": torch.tensor([float(self.t)])}
        for name, _ in self.named:
            out[f"{prefix}{name}.m"] = self.m[name]
            out[f"{prefix}{name}.v"] = self.v[name]
        return out

    def load_state(self, tensors: dict[str, torch.Tensor], prefix: str) -> None:
        try:
            self.t = int(tensors[f"{prefix}step"].item())
            for name, _ in self.named:
                self.m[name] = tensors[f"{prefix}{name}.m"].clone()
                self.v[name] = tensors[f"{prefix}{name}.v"].clone()
        except KeyError as missing:
            raise ConfigError(f"optimizer state is missing {missing}") from None


# --------------------------------------------------------------- run dirs

def checkpoint_path(run_dir: str | Path, step: int, part: str | None = None) -> Path:
    stem = f"ckpt-{step}.{part}" if part else f"ckpt-{step}"
    return Path(run_dir) / f"{stem}.iknt"


def read_metrics(run_dir: str | Path) -> list[dict]:
    path = Path(run_dir) / "metrics.jsonl"
    if not path.exists():
        raise ConfigError(f"{run_dir} has no metrics.jsonl")
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def metrics_equal_ignoring_wallclock(a: list[dict], b: list[dict]) -> bool:
    """Wall-clock times differ between any two runs; everything else must not."""
    strip = lambda recs: [{k: v for k, v in r.items() if k != "wall_clock"} for r in recs]
    return strip(a) == strip(b)


def _prepare_run_dir(run_dir: Path, config: TrainConfig, resume_step: int | None) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    config_path = run_dir / "config.json"
    payload = json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"
    metrics_path = run_dir / "metrics.jsonl"
    if resume_step is None:
        config_path.write_text(payload)
        metrics_path.write_text("")
        return
    if not config_path.exists():
        raise ConfigError(f"cannot resume: {config_path} does not exist")
    if json.loads(config_path.read_text()) != json.loads(payload):
        raise ConfigError("cannot resume: run config differs from the stored one")
    kept = [r for r in read_metrics(run_dir) if r["step"] <= resume_step]
    metrics_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in kept))


def _append_metric(run_dir: Path, record: dict) -> None:
    with open(run_dir / "metrics.jsonl", "a") as handle:
        handle.write(json.dumps(record, sort_keys=True) + "\n")


def _load_best_state(run_dir: Path) -> dict:
    path = run_dir / "state.json"
    if path.exists():
        return json.loads(path.read_text())
    return {"best_val_macro_f1": None, "best_step": None}


def _save_best_state(run_dir: Path, state: dict) -> None:
    tmp = run_dir / "state.json.tmp"
    tmp.write_text(json.dumps(state, sort_keys=True) + "\n")
    tmp.replace(run_dir / "state.json")


# ------------------------------------------------------------- data access

def _select_ids(ids: list[str], selector: str) -> list[str]:
    if selector == "sj":
        return [i for i in ids if i.startswith("sj")]
    if selector == "mj":
        return [i for i in ids if i.startswith("mj")]
    return list(ids)


def _split_ids_for(config: TrainConfig, split: str) -> list[str]:
    ids = _select_ids(split_ids(config.dataset_dir, split), config.dataset)
    if split == "train" and not ids:
        raise ConfigError(
            f"dataset selector {config.dataset!r} leaves no training samples"
        )
    return ids


def _to_u8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


def _image_batch(u8: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(u8.astype(np.float32) / 255.0).permute(0, 3, 1, 2).contiguous()


class _GenerationData:
    """Train/val tensors for the image half: photos, renderings, front grids."""

    def __init__(self, config: TrainConfig):
        maps = dataset_maps(config.dataset_dir)
        self.front_map = maps["front_sj"]
        self.transitions = load_transitions(
            Path(config.dataset_dir) / "transitions.csv", self.front_map
        )
        self.real: dict[str, np.ndarray] = {}
        self.rendering: dict[str, np.ndarray] = {}
        self.front: dict[str, np.ndarray] = {}
        self.ids: dict[str, list[str]] = {}
        for split in ("train", "val"):
            ids = _split_ids_for(config, split)
            real, rendering, front = [], [], []
            for sid in ids:
                sample = load_sample(config.dataset_dir, sid, maps)
                real.append(_to_u8(sample.real))
                rendering.append(_to_u8(sample.rendering))
                front.append(sample.front.cells)
            self.ids[split] = ids
            self.real[split] = np.stack(real) if ids else np.zeros((0,), np.uint8)
            self.rendering[split] = np.stack(rendering) if ids else np.zeros((0,), np.uint8)
            self.front[split] = np.stack(front) if ids else np.zeros((0,), np.int64)

    def batch(self, seed: int, step: int, size: int):
        idx = batch_indices(seed, step, len(self.ids["train"]), size)
        real = _image_batch(self.real["train"][idx])
        rendering = _image_batch(self.rendering["train"][idx])
        front = torch.from_numpy(self.front["train"][idx])
        return real, rendering, front


def frompred_planes(predictions_dir: str | Path, sample_id: str) -> np.ndarray:
    path = Path(predictions_dir) / f"{sample_id}.npy"
    if not path.exists():
        raise ConfigError(
            f"no prediction for {sample_id!r} under {predictions_dir}; "
            "run materialize_frompred first"
        )
    planes = np.load(path)
    if planes.ndim != 3 or planes.shape[0] != planes.shape[1]:
        raise ShapeError(f"{path}: expected (grid, grid, classes), got {planes.shape}")
    return planes.astype(np.float32)


class _InferenceData:
    """Front-label planes (true or predicted) paired with complete grids."""

    def __init__(self, config: TrainConfig):
        maps = dataset_maps(config.dataset_dir)
        self.complete_map = maps["complete"]
        self.inputs: dict[str, np.ndarray] = {}
        self.targets: dict[str, np.ndarray] = {}
        self.ids: dict[str, list[str]] = {}
        k = maps["front_sj"].k
        for split in ("train", "val"):
            ids = _split_ids_for(config, split)
            planes, cells = [], []
            for sid in ids:
                sample = load_sample(config.dataset_dir, sid, maps)
                if config.input_source == "frompred":
                    planes.append(frompred_planes(config.predictions_dir, sid))
                else:
                    planes.append(one_hot_planes(sample.front, k))
                cells.append(sample.complete.cells)
            self.ids[split] = ids
            self.inputs[split] = np.stack(planes) if ids else np.zeros((0,), np.float32)
            self.targets[split] = np.stack(cells) if ids else np.zeros((0,), np.int64)

    def batch(self, seed: int, step: int, size: int):
        idx = batch_indices(seed, step, len(self.ids["train"]), size)
        x = torch.from_numpy(self.inputs["train"][idx]).permute(0, 3, 1, 2).contiguous()
        y = torch.from_numpy(self.targets["train"][idx])
        return x, y


# ------------------------------------------------------------- validation

def _grids_from_argmax(pred: torch.Tensor, space: str) -> list[StitchGrid]:
    cells = pred.argmax(dim=1).numpy().astype(np.int64)
    return [StitchGrid(space, c) for c in cells]


def _val_front_f1(refiner, translator, data: _GenerationData) -> float | None:
    if not data.ids["val"]:
        return None
    refiner.eval()
    translator.eval()
    preds, truths = [], []
    with torch.no_grad():
        real, front = data.real["val"], data.front["val"]
        for lo in range(0, len(front), 16):
            logits = translator(refiner(_image_batch(real[lo:lo + 16])))
            preds.extend(_grids_from_argmax(logits, "front"))
    refiner.train()
    translator.train()
    truths = [StitchGrid("front", c) for c in front]
    return per_class_f1(preds, truths, data.front_map, scenario="val").macro_f1


def _val_complete_f1(model, data: _InferenceData) -> float | None:
    if not data.ids["val"]:
        return None
    model.eval()
    preds = []
    with torch.no_grad():
        inputs = data.inputs["val"]
        for lo in range(0, len(inputs), 64):
            x = torch.from_numpy(inputs[lo:lo + 64]).permute(0, 3, 1, 2).contiguous()
            preds.extend(_grids_from_argmax(model(x), "complete"))
    model.train()
    truths = [StitchGrid("complete", c) for c in data.targets["val"]]
    return per_class_f1(preds, truths, data.complete_map, scenario="val").macro_f1


# ---------------------------------------------------------- generation run

def _width_kw(override: int | None) -> dict:
    return {"width": override} if override is not None else {}


def train_generation(config: TrainConfig, run_dir: str | Path,
                     resume_step: int | None = None) -> dict:
    """Adversarial training of the photo refiner and instruction translator.

    Per step: one discriminator update on (ground-truth rendering vs refined
    photo, both conditioned on the true front grid), then one generator
    update on the combined loss.
    """
    if config.phase != "generation":
        raise ConfigError(f"train_generation got a {config.phase!r} config")
    run_dir = Path(run_dir)
    _prepare_run_dir(run_dir, config, resume_step)

    data = _GenerationData(config)
    manifest = read_manifest(config.dataset_dir)
    mean = tuple(manifest["channel_mean"])

    refiner_cfg = default_config(
        "refiner", seed=config.seed, channel_mean=mean,
        **_width_kw(config.refiner_width))
    translator_cfg = default_config(
        "img2prog", seed=config.seed + 1,
        **_width_kw(config.img2prog_width))
    disc_cfg = default_config(
        "discriminator", seed=config.seed + 2,
        **_width_kw(config.discriminator_width))

    refiner = build_model(refiner_cfg)
    translator = build_model(translator_cfg)
    disc = build_model(disc_cfg) if config.use_image_discriminator else None

    gen_params = [(f"refiner.{n}", p) for n, p in refiner.named_parameters()]
    gen_params += [(f"img2prog.{n}", p) for n, p in translator.named_parameters()]
    adam_gen = Adam(gen_params)
    adam_disc = Adam(list(disc.named_parameters())) if disc is not None else None

    start = 0
    if resume_step is not None:
        _load_generation_snapshot(run_dir, resume_step, refiner, translator, disc,
                                  adam_gen, adam_disc)
        start = resume_step
    best = _load_best_state(run_dir)

    weights = config.weights
    front_k = data.front_map.k

    for index in range(start, config.max_iter):
        step = index + 1
        lr = lr_schedule(index, config)
        real, rendering, front = data.batch(config.seed, index, config.batch_size)
        condition = F.one_hot(front, front_k).permute(0, 3, 1, 2).float()

        refined = refiner(real)
        disc_value = None
        if disc is not None:
            d_real = disc(rendering, condition)
            d_fake = disc(refined.detach(), condition)
            _, disc_loss = adversarial_losses(d_fake, d_real)
            adam_disc.zero_grad()
            (weights.w_d * disc_loss).backward()
            adam_disc.step(lr)
            disc_value = disc_loss.item()

        logits = translator(refined)
        probs = F.softmax(logits, dim=1).permute(0, 2, 3, 1)
        ce = (mil_cross_entropy(probs, front) if config.use_mil
              else cross_entropy(probs, front))
        adv = None
        if disc is not None:
            adv, _ = adversarial_losses(disc(refined, condition), d_real.detach())
        style = None
        if config.use_style:
            style = style_loss(refined.permute(0, 2, 3, 1),
                               rendering.permute(0, 2, 3, 1))
        syntax = syntax_penalty(probs, data.transitions).mean()
        total, breakdown = total_generation_loss(
            ce=ce, adversarial=adv, style=style, syntax=syntax, weights=weights)

        adam_gen.zero_grad()
        if disc is not None:
            adam_disc.zero_grad()
        total.backward()
        adam_gen.step(lr)

        val_f1 = None
        if (config.val_every and step % config.val_every == 0) or step == config.max_iter:
            val_f1 = _val_front_f1(refiner, translator, data)
            if val_f1 is not None and (best["best_val_macro_f1"] is None
                                       or val_f1 > best["best_val_macro_f1"]):
                best = {"best_val_macro_f1": val_f1, "best_step": step}
                _save_best_state(run_dir, best)
                _save_generation_best(run_dir, refiner_cfg, refiner,
                                      translator_cfg, translator)

        if step % config.log_every == 0 or step == config.max_iter:
            _append_metric(run_dir, {
                "step": step, "lr": lr, "loss": breakdown["total"],
                "ce": breakdown["ce"], "adv": breakdown["adv"],
                "style": breakdown["style"], "syntax": breakdown["syntax"],
                "disc": disc_value, "val_macro_f1": val_f1,
                "wall_clock": time.time(),
            })

        if (config.checkpoint_every and step % config.checkpoint_every == 0) \
                or step == config.max_iter:
            _save_generation_snapshot(run_dir, step, refiner_cfg, refiner,
                                      translator_cfg, translator, disc_cfg, disc,
                                      adam_gen, adam_disc)

    if not (run_dir / "best.refiner.iknt").exists():
        # no validation split: fall back to the final parameters
        _save_generation_best(run_dir, refiner_cfg, refiner, translator_cfg, translator)
    return {
        "run_dir": str(run_dir),
        "steps": config.max_iter,
        "best_val_macro_f1": best["best_val_macro_f1"],
        "best_step": best["best_step"],
    }


def _save_generation_best(run_dir, refiner_cfg, refiner, translator_cfg, translator):
    save_checkpoint(store_from_model(refiner_cfg, refiner),
                    run_dir / "best.refiner.iknt")
    save_checkpoint(store_from_model(translator_cfg, translator),
                    run_dir / "best.img2prog.iknt")


def _save_generation_snapshot(run_dir, step, refiner_cfg, refiner, translator_cfg,
                              translator, disc_cfg, disc, adam_gen, adam_disc):
    save_checkpoint(store_from_model(refiner_cfg, refiner),
                    checkpoint_path(run_dir, step, "refiner"))
    save_checkpoint(store_from_model(translator_cfg, translator),
                    checkpoint_path(run_dir, step, "img2prog"))
    state = adam_gen.state_tensors("gen.")
    if disc is not None:
        save_checkpoint(store_from_model(disc_cfg, disc),
                        checkpoint_path(run_dir, step, "discriminator"))
        state.update(adam_disc.state_tensors("disc."))
    save_checkpoint(ParameterStore(config=refiner_cfg, tensors=state),
                    checkpoint_path(run_dir, step, "opt"))


def _load_generation_snapshot(run_dir, step, refiner, translator, disc,
                              adam_gen, adam_disc):
    for part, model in (("refiner", refiner), ("img2prog", translator),
                        ("discriminator", disc)):
        if model is None:
            continue
        path = checkpoint_path(run_dir, step, part)
        if not path.exists():
            raise ConfigError(f"cannot resume: {path} does not exist")
        model.load_state_dict(load_checkpoint(path).tensors)
    opt_path = checkpoint_path(run_dir, step, "opt")
    if not opt_path.exists():
        raise ConfigError(f"cannot resume: {opt_path} does not exist")
    state = load_checkpoint(opt_path).tensors
    adam_gen.load_state(state, "gen.")
    if adam_disc is not None:
        adam_disc.load_state(state, "disc.")


# ----------------------------------------------------------- inference run

def train_inference(config: TrainConfig, run_dir: str | Path,
                    resume_step: int | None = None) -> dict:
    """Supervised training of a front-to-complete expansion net."""
    if config.phase != "inference":
        raise ConfigError(f"train_inference got a {config.phase!r} config")
    run_dir = Path(run_dir)
    _prepare_run_dir(run_dir, config, resume_step)

    data = _InferenceData(config)
    if config.init_from:
        init_path = Path(config.init_from)
        if not init_path.exists():
            raise ConfigError(f"init_from checkpoint {init_path} does not exist")
        store = load_checkpoint(init_path, expect_kind=config.kind)
        model_cfg = store.config
        model = model_from_store(store)
    else:
        model_cfg = default_config(config.kind, seed=config.seed,
                                   **_width_kw(config.width))
        model = build_model(model_cfg)
    adam = Adam(list(model.named_parameters()))

    start = 0
    if resume_step is not None:
        ckpt = checkpoint_path(run_dir, resume_step)
        opt = checkpoint_path(run_dir, resume_step, "opt")
        for path in (ckpt, opt):
            if not path.exists():
                raise ConfigError(f"cannot resume: {path} does not exist")
        model.load_state_dict(load_checkpoint(ckpt).tensors)
        adam.load_state(load_checkpoint(opt).tensors, "")
        start = resume_step
    best = _load_best_state(run_dir)

    for index in range(start, config.max_iter):
        step = index + 1
        lr = lr_schedule(index, config)
        x, y = data.batch(config.seed, index, config.batch_size)
        probs = F.softmax(model(x), dim=1).permute(0, 2, 3, 1)
        loss = (mil_cross_entropy(probs, y) if config.use_mil
                else cross_entropy(probs, y))
        adam.zero_grad()
        loss.backward()
        adam.step(lr)

        val_f1 = None
        if (config.val_every and step % config.val_every == 0) or step == config.max_iter:
            val_f1 = _val_complete_f1(model, data)
            if val_f1 is not None and (best["best_val_macro_f1"] is None
                                       or val_f1 > best["best_val_macro_f1"]):
                best = {"best_val_macro_f1": val_f1, "best_step": step}
                _save_best_state(run_dir, best)
                save_checkpoint(store_from_model(model_cfg, model),
                                run_dir / "best.iknt")

        if step % config.log_every == 0 or step == config.max_iter:
            _append_metric(run_dir, {
                "step": step, "lr": lr, "loss": loss.item(),
                "val_macro_f1": val_f1, "wall_clock": time.time(),
            })

        if (config.checkpoint_every and step % config.checkpoint_every == 0) \
                or step == config.max_iter:
            save_checkpoint(store_from_model(model_cfg, model),
                            checkpoint_path(run_dir, step))
            save_checkpoint(
                ParameterStore(config=model_cfg, tensors=adam.state_tensors("")),
                checkpoint_path(run_dir, step, "opt"))

    if not (run_dir / "best.iknt").exists():
        # no validation split: fall back to the final parameters
        save_checkpoint(store_from_model(model_cfg, model), run_dir / "best.iknt")
    return {
        "run_dir": str(run_dir),
        "steps": config.max_iter,
        "best_val_macro_f1": best["best_val_macro_f1"],
        "best_step": best["best_step"],
    }


# -------------------------------------------------------------- frompred

def materialize_frompred(dataset_dir: str | Path, generation_checkpoint: str | Path,
                         out_dir: str | Path) -> Path:
    """Write predicted front probabilities for every sample in the dataset.

    Inference nets trained with input_source "frompred" read these planes
    instead of one-hot ground truth; only the input field differs.
    """
    dataset_dir = Path(dataset_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    refiner_store, translator_store = load_generation_pair(generation_checkpoint)
    refiner = model_from_store(refiner_store)
    translator = model_from_store(translator_store)
    refiner.eval()
    translator.eval()

    maps = dataset_maps(dataset_dir)
    ids = []
    for split in ("train", "val", "test"):
        ids.extend(split_ids(dataset_dir, split))
    with torch.no_grad():
        for lo in range(0, len(ids), 16):
            chunk = ids[lo:lo + 16]
            real = np.stack([
                _to_u8(load_sample(dataset_dir, sid, maps).real) for sid in chunk
            ])
            logits = translator(refiner(_image_batch(real)))
            probs = F.softmax(logits, dim=1).permute(0, 2, 3, 1).numpy()
            for sid, planes in zip(chunk, probs):
                np.save(out_dir / f"{sid}.npy", planes.astype(np.float32))
    (out_dir / "frompred.json").write_text(json.dumps({
        "dataset_dir": str(dataset_dir),
        "generation_checkpoint": str(generation_checkpoint),
        "sample_count": len(ids),
    }, indent=2, sort_keys=True) + "\n")
    return out_dir
