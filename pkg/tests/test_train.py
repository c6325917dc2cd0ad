"""Training loops: schedules, optimizer, run artifacts, determinism, learning."""

import json

import numpy as np
import pytest
import torch

from invknit.errors import ConfigError, ConfigMismatchError
from invknit.losses import LossWeights
from invknit.models import build_model, load_checkpoint
from invknit.synthgen import DatasetConfig, build_dataset, split_ids
from invknit.train import (
    Adam,
    TrainConfig,
    batch_indices,
    checkpoint_path,
    lr_schedule,
    materialize_frompred,
    metrics_equal_ignoring_wallclock,
    read_metrics,
    train_generation,
    train_inference,
)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("train_data") / "dataset"
    build_dataset(DatasetConfig(seed=11, sj_count=60, mj_count=40), path)
    return path


def _inference_config(dataset_path, **overrides):
    base = dict(phase="inference", dataset_dir=str(dataset_path), kind="infer_2lyr",
                width=8, max_iter=4, batch_size=2, seed=1)
    base.update(overrides)
    return TrainConfig(**base)


def _generation_config(dataset_path, **overrides):
    base = dict(phase="generation", dataset_dir=str(dataset_path), max_iter=3,
                batch_size=2, seed=0, refiner_width=6, img2prog_width=6,
                discriminator_width=6)
    base.update(overrides)
    return TrainConfig(**base)


# ------------------------------------------------------------------ config

def test_lr_schedule_reference_points(dataset):
    cfg = _inference_config(dataset)
    assert lr_schedule(0, cfg) == pytest.approx(5e-4)
    assert lr_schedule(49_999, cfg) == pytest.approx(5e-4)
    assert lr_schedule(50_000, cfg) == pytest.approx(1.5e-4)
    assert lr_schedule(100_000, cfg) == pytest.approx(4.5e-5)
    with pytest.raises(ConfigError):
        lr_schedule(-1, cfg)


def test_lr_schedule_never_increases(dataset):
    cfg = _inference_config(dataset, decay_steps=10, decay_rate=0.5)
    rates = [lr_schedule(s, cfg) for s in range(100)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert rates[0] == 5e-4


def test_config_round_trips_through_json(dataset):
    cfg = _inference_config(dataset, weights=LossWeights(w_ce=0.3),
                            input_source="frompred", predictions_dir="/tmp/p",
                            use_mil=True)
    restored = TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert restored == cfg


@pytest.mark.parametrize("overrides", [
    {"phase": "finetune"},
    {"phase": "inference", "kind": ""},
    {"phase": "inference", "kind": "refiner"},
    {"phase": "generation", "kind": "infer_2lyr"},
    {"dataset": "everything"},
    {"input_source": "fromdisk"},
    {"phase": "inference", "kind": "infer_2lyr", "input_source": "frompred"},
    {"phase": "generation", "kind": "", "input_source": "frompred",
     "predictions_dir": "/tmp/p"},
    {"learning_rate": 0.0},
    {"decay_steps": 0},
    {"decay_rate": 0.0},
    {"decay_rate": 1.5},
    {"max_iter": 0},
    {"batch_size": 0},
    {"log_every": 0},
    {"checkpoint_every": -1},
    {"width": 0},
    {"refiner_width": -3},
])
def test_config_rejects_bad_values(overrides):
    base = dict(phase="inference", dataset_dir="/tmp/ds", kind="infer_2lyr")
    base.update(overrides)
    with pytest.raises(ConfigError):
        TrainConfig(**base)


def test_config_rejects_unknown_fields(dataset):
    data = _inference_config(dataset).to_dict()
    data["momentum"] = 0.9
    with pytest.raises(ConfigError):
        TrainConfig.from_dict(data)


def test_batch_indices_are_a_pure_function_of_seed_and_step():
    a = batch_indices(3, 17, 50, 8)
    assert (a == batch_indices(3, 17, 50, 8)).all()
    assert (a != batch_indices(3, 18, 50, 8)).any()
    assert (a != batch_indices(4, 17, 50, 8)).any()
    assert (batch_indices(0, 0, 1, 4) == 0).all()
    with pytest.raises(ConfigError):
        batch_indices(0, 0, 0, 4)


# --------------------------------------------------------------- optimizer

def test_adam_matches_torch_reference():
    torch.manual_seed(0)
    model_a = torch.nn.Conv2d(3, 4, 3)
    model_b = torch.nn.Conv2d(3, 4, 3)
    model_b.load_state_dict(model_a.state_dict())
    ours = Adam(list(model_a.named_parameters()))
    theirs = torch.optim.Adam(model_b.parameters(), lr=1e-3,
                              betas=(0.9, 0.999), eps=1e-8)
    x = torch.randn(2, 3, 8, 8)
    for _ in range(5):
        ours.zero_grad()
        (model_a(x) ** 2).mean().backward()
        ours.step(1e-3)
        theirs.zero_grad()
        (model_b(x) ** 2).mean().backward()
        theirs.step()
    for (_, pa), pb in zip(ours.named, model_b.parameters()):
        assert torch.allclose(pa, pb, atol=1e-6)


def test_adam_state_round_trip_continues_identically():
    torch.manual_seed(1)
    model_a = torch.nn.Conv2d(2, 2, 3)
    model_b = torch.nn.Conv2d(2, 2, 3)
    adam_a = Adam(list(model_a.named_parameters()))
    x = torch.randn(1, 2, 6, 6)

    def one_step(model, adam):
        adam.zero_grad()
        (model(x) ** 2).mean().backward()
        adam.step(1e-2)

    for _ in range(3):
        one_step(model_a, adam_a)
    state = {k: v.clone() for k, v in adam_a.state_tensors("").items()}
    model_b.load_state_dict(model_a.state_dict())
    adam_b = Adam(list(model_b.named_parameters()))
    adam_b.load_state(state, "")
    assert adam_b.t == 3
    one_step(model_a, adam_a)
    one_step(model_b, adam_b)
    for (_, pa), (_, pb) in zip(adam_a.named, adam_b.named):
        assert torch.equal(pa, pb)


def test_adam_load_state_missing_tensor():
    model = torch.nn.Conv2d(1, 1, 1)
    adam = Adam(list(model.named_parameters()))
    with pytest.raises(ConfigError):
        adam.load_state({"step": torch.tensor([1.0])}, "")


# ----------------------------------------------------------- run mechanics

def test_two_sample_dataset_trains_and_logs_every_step(tmp_path):
    dataset = tmp_path / "tiny"
    build_dataset(DatasetConfig(seed=5, sj_count=2, mj_count=0), dataset)
    cfg = TrainConfig(phase="inference", dataset_dir=str(dataset),
                      kind="infer_2lyr", width=4, max_iter=10, batch_size=2, seed=0)
    run = tmp_path / "run"
    summary = train_inference(cfg, run)
    records = read_metrics(run)
    assert len(records) == 10
    assert [r["step"] for r in records] == list(range(1, 11))
    assert all(np.isfinite(r["loss"]) for r in records)
    assert all(r["lr"] == pytest.approx(5e-4) for r in records)
    assert summary["steps"] == 10
    assert (run / "best.iknt").exists()


def test_run_directory_layout(dataset, tmp_path):
    cfg = _inference_config(dataset, max_iter=3)
    run = tmp_path / "run"
    train_inference(cfg, run)
    assert json.loads((run / "config.json").read_text()) == json.loads(
        json.dumps(cfg.to_dict()))
    assert (run / "metrics.jsonl").exists()
    assert checkpoint_path(run, 3).exists()
    assert checkpoint_path(run, 3, "opt").exists()
    assert (run / "best.iknt").exists()
    record = read_metrics(run)[-1]
    assert set(record) == {"step", "lr", "loss", "val_macro_f1", "wall_clock"}


def test_identical_runs_produce_identical_metrics(dataset, tmp_path):
    cfg = _inference_config(dataset, max_iter=5)
    train_inference(cfg, tmp_path / "a")
    train_inference(cfg, tmp_path / "b")
    a, b = read_metrics(tmp_path / "a"), read_metrics(tmp_path / "b")
    assert metrics_equal_ignoring_wallclock(a, b)
    assert all("wall_clock" in r for r in a)
    assert checkpoint_path(tmp_path / "a", 5).read_bytes() == \
        checkpoint_path(tmp_path / "b", 5).read_bytes()


def test_one_step_changes_parameters(dataset, tmp_path):
    cfg = _inference_config(dataset, max_iter=1)
    train_inference(cfg, tmp_path / "run")
    store = load_checkpoint(checkpoint_path(tmp_path / "run", 1))
    fresh = build_model(store.config).state_dict()
    changed = any(
        not torch.equal(store.tensors[name], fresh[name])
        for name in fresh if fresh[name].dtype.is_floating_point
    )
    assert changed


def test_resume_matches_uninterrupted_run(dataset, tmp_path):
    cfg = _inference_config(dataset, kind="infer_residual", width=8,
                            max_iter=8, checkpoint_every=4, val_every=4)
    run = tmp_path / "run"
    train_inference(cfg, run)
    metrics_full = read_metrics(run)
    final = checkpoint_path(run, 8).read_bytes()
    opt = checkpoint_path(run, 8, "opt").read_bytes()

    train_inference(cfg, run, resume_step=4)
    assert metrics_equal_ignoring_wallclock(read_metrics(run), metrics_full)
    assert checkpoint_path(run, 8).read_bytes() == final
    assert checkpoint_path(run, 8, "opt").read_bytes() == opt


def test_resume_requires_checkpoint_and_matching_config(dataset, tmp_path):
    cfg = _inference_config(dataset, max_iter=4, checkpoint_every=2)
    run = tmp_path / "run"
    train_inference(cfg, run)
    with pytest.raises(ConfigError):
        train_inference(cfg, run, resume_step=3)
    other = _inference_config(dataset, max_iter=4, checkpoint_every=2, seed=9)
    with pytest.raises(ConfigError):
        train_inference(other, run, resume_step=2)
    with pytest.raises(ConfigError):
        train_inference(cfg, tmp_path / "never_ran", resume_step=2)


def test_best_checkpoint_tracks_validation_score(dataset, tmp_path):
    cfg = _inference_config(dataset, max_iter=6, val_every=2)
    run = tmp_path / "run"
    summary = train_inference(cfg, run)
    scores = [r["val_macro_f1"] for r in read_metrics(run)
              if r["val_macro_f1"] is not None]
    assert scores
    assert summary["best_val_macro_f1"] == max(scores)
    state = json.loads((run / "state.json").read_text())
    assert state["best_val_macro_f1"] == max(scores)
    best = load_checkpoint(run / "best.iknt")
    assert best.config.kind == "infer_2lyr"


def test_selector_restricts_training_set(dataset, tmp_path):
    for selector in ("sj", "mj"):
        cfg = _inference_config(dataset, dataset=selector, max_iter=2)
        train_inference(cfg, tmp_path / selector)
        assert len(read_metrics(tmp_path / selector)) == 2


def test_selector_with_no_matches_raises(tmp_path):
    dataset = tmp_path / "sj_only"
    build_dataset(DatasetConfig(seed=5, sj_count=4, mj_count=0), dataset)
    cfg = TrainConfig(phase="inference", dataset_dir=str(dataset),
                      kind="infer_2lyr", width=4, max_iter=2, dataset="mj")
    with pytest.raises(ConfigError):
        train_inference(cfg, tmp_path / "run")


def test_phase_and_function_must_agree(dataset, tmp_path):
    with pytest.raises(ConfigError):
        train_inference(_generation_config(dataset), tmp_path / "a")
    with pytest.raises(ConfigError):
        train_generation(_inference_config(dataset), tmp_path / "b")


def test_missing_dataset_raises(tmp_path):
    cfg = TrainConfig(phase="inference", dataset_dir=str(tmp_path / "nope"),
                      kind="infer_2lyr", max_iter=1)
    with pytest.raises(ConfigError):
        train_inference(cfg, tmp_path / "run")


# ------------------------------------------------------- objective choices

def test_mil_loss_curve_stays_at_or_below_strict(dataset, tmp_path):
    base = dict(kind="infer_2lyr", width=16, max_iter=60, batch_size=4, seed=2)
    train_inference(_inference_config(dataset, **base), tmp_path / "strict")
    train_inference(_inference_config(dataset, **base, use_mil=True), tmp_path / "mil")
    strict = [r["loss"] for r in read_metrics(tmp_path / "strict")]
    relaxed = [r["loss"] for r in read_metrics(tmp_path / "mil")]
    assert len(strict) == len(relaxed) == 60
    assert all(m <= s + 1e-9 for m, s in zip(relaxed, strict))


def test_inference_training_learns(dataset, tmp_path):
    cfg = TrainConfig(phase="inference", dataset_dir=str(dataset),
                      kind="infer_residual", max_iter=300, batch_size=8,
                      seed=0, val_every=150)
    summary = train_inference(cfg, tmp_path / "run")
    assert summary["best_val_macro_f1"] >= 0.75


# ---------------------------------------------------------- generation run

def test_generation_run_layout_and_metrics(dataset, tmp_path):
    run = tmp_path / "run"
    summary = train_generation(_generation_config(dataset), run)
    records = read_metrics(run)
    assert len(records) == 3
    assert set(records[-1]) == {"step", "lr", "loss", "ce", "adv", "style",
                                "syntax", "disc", "val_macro_f1", "wall_clock"}
    assert all(np.isfinite(r["loss"]) for r in records)
    for part in ("refiner", "img2prog", "discriminator", "opt"):
        assert checkpoint_path(run, 3, part).exists()
    assert (run / "best.refiner.iknt").exists()
    assert (run / "best.img2prog.iknt").exists()
    assert summary["best_val_macro_f1"] is not None


def test_generation_resume_matches_uninterrupted(dataset, tmp_path):
    cfg = _generation_config(dataset, max_iter=6, checkpoint_every=3)
    run = tmp_path / "run"
    train_generation(cfg, run)
    metrics_full = read_metrics(run)
    finals = {part: checkpoint_path(run, 6, part).read_bytes()
              for part in ("refiner", "img2prog", "discriminator", "opt")}
    train_generation(cfg, run, resume_step=3)
    assert metrics_equal_ignoring_wallclock(read_metrics(run), metrics_full)
    for part, blob in finals.items():
        assert checkpoint_path(run, 6, part).read_bytes() == blob


def test_generation_ablation_flags(dataset, tmp_path):
    cfg = _generation_config(dataset, max_iter=2, use_image_discriminator=False,
                             use_style=False)
    run = tmp_path / "run"
    train_generation(cfg, run)
    record = read_metrics(run)[-1]
    assert record["disc"] is None
    assert record["adv"] == 0.0
    assert record["style"] == 0.0
    assert not checkpoint_path(run, 2, "discriminator").exists()


def test_generation_mil_flag_runs(dataset, tmp_path):
    cfg = _generation_config(dataset, max_iter=2, use_mil=True)
    train_generation(cfg, tmp_path / "run")
    assert len(read_metrics(tmp_path / "run")) == 2


# ---------------------------------------------------------------- frompred

@pytest.fixture(scope="module")
def generation_run(dataset, tmp_path_factory):
    run = tmp_path_factory.mktemp("gen_ckpt") / "run"
    train_generation(_generation_config(dataset), run)
    return run


def test_materialize_frompred_covers_every_sample(dataset, generation_run, tmp_path):
    out = materialize_frompred(dataset, generation_run, tmp_path / "preds")
    ids = [sid for split in ("train", "val", "test")
           for sid in split_ids(dataset, split)]
    files = sorted(p.stem for p in out.glob("*.npy"))
    assert files == sorted(ids)
    planes = np.load(out / f"{ids[0]}.npy")
    assert planes.shape == (20, 20, 14)
    assert planes.dtype == np.float32
    np.testing.assert_allclose(planes.sum(axis=2), 1.0, atol=1e-5)


def test_frompred_training_consumes_materialized_planes(
        dataset, generation_run, tmp_path):
    out = materialize_frompred(dataset, generation_run, tmp_path / "preds")
    cfg = _inference_config(dataset, max_iter=3, input_source="frompred",
                            predictions_dir=str(out))
    train_inference(cfg, tmp_path / "run")
    assert len(read_metrics(tmp_path / "run")) == 3


def test_frompred_missing_planes_raise(dataset, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    cfg = _inference_config(dataset, max_iter=2, input_source="frompred",
                            predictions_dir=str(empty))
    with pytest.raises(ConfigError):
        train_inference(cfg, tmp_path / "run")


def test_init_from_transfers_parameters(dataset, tmp_path):
    first = _inference_config(dataset, max_iter=2, checkpoint_every=2)
    train_inference(first, tmp_path / "first")
    start = checkpoint_path(tmp_path / "first", 2)

    second = _inference_config(dataset, max_iter=1, init_from=str(start), seed=4)
    train_inference(second, tmp_path / "second")
    trained = load_checkpoint(checkpoint_path(tmp_path / "second", 1))
    assert trained.config.width == 8

    wrong_kind = _inference_config(dataset, kind="infer_residual", max_iter=1,
                                   init_from=str(start))
    with pytest.raises(ConfigMismatchError):
        train_inference(wrong_kind, tmp_path / "third")
    missing = _inference_config(dataset, max_iter=1,
                                init_from=str(tmp_path / "ghost.iknt"))
    with pytest.raises(ConfigError):
        train_inference(missing, tmp_path / "fourth")
