"""Release gate: ten numbered end-to-end criteria.

Each test_cNN_* function checks one criterion, so its line in pytest -v
output is the pass/fail verdict for that criterion. The heavyweight
artifacts (a mixed-yarn dataset, one generation run, a fleet of trained
inference nets) are session fixtures shared by the later criteria; the
whole gate is sized to finish in well under half an hour on one CPU core.
"""

from __future__ import annotations

import hashlib
import math
import time

import numpy as np
import pytest
import torch

from invknit.labels import SJ, StitchGrid, load_default_map
from invknit.losses import (
    adversarial_losses,
    cross_entropy,
    default_extractor,
    mil_cross_entropy,
    style_loss,
)
from invknit.models import (
    ModelConfig,
    build_model,
    count_parameters,
    default_config,
    load_checkpoint,
    model_from_store,
    one_hot_planes,
    save_checkpoint,
    store_from_model,
)
from invknit.synthgen import (
    DatasetConfig,
    FAMILIES,
    build_atlas,
    build_dataset,
    generate_pattern,
    load_sample,
    read_manifest,
    render,
    split_ids,
    tile_decode,
)
from invknit.syntax import build_transitions, count_violations, syntax_penalty
from invknit.train import (
    TrainConfig,
    checkpoint_path,
    materialize_frompred,
    metrics_equal_ignoring_wallclock,
    read_metrics,
    train_generation,
    train_inference,
)
from invknit.eval import run_scenario

GEN_ITERS = 400
FLEET_ITERS = 500
FLEET_SEEDS = (0, 1, 2)
RESIDUAL_WIDTH = 32
TWO_LAYER_WIDTH = 48

# published parameter counts the default configs must stay within 2x of
PARAM_TARGETS = {
    "infer_2lyr": 21_026,
    "infer_5lyr": 1_585_422,
    "infer_residual": 872_034,
    "infer_unet": 279_138,
}


# ---------------------------------------------------------------- fixtures

@pytest.fixture(scope="session")
def shared_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept_data") / "dataset"
    build_dataset(DatasetConfig(), out)
    return out


@pytest.fixture(scope="session")
def generation_run(shared_dataset, tmp_path_factory):
    run = tmp_path_factory.mktemp("accept_gen") / "run"
    cfg = TrainConfig(
        phase="generation",
        dataset_dir=str(shared_dataset),
        max_iter=GEN_ITERS,
        batch_size=4,
        seed=0,
        val_every=50,
    )
    train_generation(cfg, run)
    return run


@pytest.fixture(scope="session")
def frompred_dir(shared_dataset, generation_run, tmp_path_factory):
    out = tmp_path_factory.mktemp("accept_fp") / "planes"
    materialize_frompred(shared_dataset, generation_run, out)
    return out


def _train_fleet_member(dataset_dir, run_dir, *, kind, width, selector,
                        source, seed, frompred=None):
    cfg = TrainConfig(
        phase="inference",
        dataset_dir=str(dataset_dir),
        kind=kind,
        width=width,
        dataset=selector,
        input_source=source,
        predictions_dir=str(frompred) if frompred is not None else None,
        max_iter=FLEET_ITERS,
        batch_size=8,
        seed=seed,
        val_every=250,
    )
    train_inference(cfg, run_dir)
    return run_dir / "best.iknt"


@pytest.fixture(scope="session")
def scenario_scores(shared_dataset, generation_run, frompred_dir,
                    tmp_path_factory):
    """Test-split macro-F1 per training seed for each deployment scenario.

    Every seed trains six nets under the same budget: the capacity pair
    (residual vs plain two-layer, both yarn-agnostic on predicted fronts)
    and the four yarn-specific nets behind scenarios 3 and 4.
    """
    base = tmp_path_factory.mktemp("accept_fleet")
    test_ids = split_ids(shared_dataset, "test")
    scores = {"s2_residual": [], "s2_2lyr": [], "s3": [], "s4": []}
    for seed in FLEET_SEEDS:
        member = {}
        for name, kind, width, selector, source in (
            ("res_comb", "infer_residual", RESIDUAL_WIDTH, "default", "frompred"),
            ("lyr_comb", "infer_2lyr", TWO_LAYER_WIDTH, "default", "frompred"),
            ("res_sj_fp", "infer_residual", RESIDUAL_WIDTH, "sj", "frompred"),
            ("res_mj_fp", "infer_residual", RESIDUAL_WIDTH, "mj", "frompred"),
            ("res_sj_ft", "infer_residual", RESIDUAL_WIDTH, "sj", "fromtrue"),
            ("res_mj_ft", "infer_residual", RESIDUAL_WIDTH, "mj", "fromtrue"),
        ):
            member[name] = _train_fleet_member(
                shared_dataset, base / f"seed{seed}_{name}",
                kind=kind, width=width, selector=selector, source=source,
                seed=seed,
                frompred=frompred_dir if source == "frompred" else None,
            )

        def score(scenario, checkpoints, tag):
            report = run_scenario(
                scenario, shared_dataset, test_ids, checkpoints,
                base / f"seed{seed}_eval_{tag}", write_images=False,
            )
            return report.macro_f1

        scores["s2_residual"].append(score(
            2, {"generation": generation_run, "inference": member["res_comb"]},
            "s2res"))
        scores["s2_2lyr"].append(score(
            2, {"generation": generation_run, "inference": member["lyr_comb"]},
            "s2lyr"))
        scores["s3"].append(score(
            3, {"generation": generation_run,
                "inference_sj": member["res_sj_fp"],
                "inference_mj": member["res_mj_fp"]}, "s3"))
        scores["s4"].append(score(
            4, {"inference_sj": member["res_sj_ft"],
                "inference_mj": member["res_mj_ft"]}, "s4"))
    return scores


# ------------------------------------------------------------ criterion 1

def test_c01_loss_analytics():
    start = time.perf_counter()

    uniform = torch.full((1, 20, 20, 14), 1.0 / 14, dtype=torch.float64)
    truth = np.random.default_rng(0).integers(0, 14, (1, 20, 20))
    ce = cross_entropy(uniform, truth).item()
    assert abs(ce - math.log(14)) <= 1e-6

    for level, want in ((0.0, 1.0), (0.5, 0.25), (1.0, 0.0)):
        gen, _ = adversarial_losses(
            torch.full((6,), level, dtype=torch.float64),
            torch.ones(6, dtype=torch.float64))
        assert abs(gen.item() - want) <= 1e-9

    image = torch.rand(2, 8, 8, 3)
    assert style_loss(image, image).item() == 0.0

    complete = load_default_map("complete")
    matrix = build_transitions(
        [generate_pattern(f, SJ, s) for f in FAMILIES for s in (1, 2)],
        complete)
    valid = generate_pattern(FAMILIES[3], SJ, 9)
    assert count_violations(valid, matrix) == 0
    one_hot = torch.from_numpy(one_hot_planes(valid, complete.k)).unsqueeze(0)
    assert syntax_penalty(one_hot.double(), matrix).item() == 0.0

    rng = np.random.default_rng(0)
    cells = np.array(valid.cells)
    spots = rng.choice(400, size=12, replace=False)
    cells[np.unravel_index(spots, (20, 20))] = rng.integers(0, complete.k, 12)
    broken = StitchGrid("complete", cells)
    violations = count_violations(broken, matrix)
    assert violations > 0
    one_hot = torch.from_numpy(one_hot_planes(broken, complete.k)).unsqueeze(0)
    assert syntax_penalty(one_hot.double(), matrix).item() == float(violations)

    assert time.perf_counter() - start < 1.0


# ------------------------------------------------------------ criterion 2

def _fd_worst(model, objective, coords_per_tensor=2,
              steps=(1e-5, 1e-6, 1e-7), seed=0):
    """Worst relative error between analytic and central-difference
    gradients over randomly sampled parameter coordinates.

    Per coordinate the best agreement across step sizes counts: near a
    pooling kink one step may straddle the corner, but a small enough one
    recovers the true one-sided slope, while a wrong analytic gradient
    disagrees at every step size.
    """
    rng = np.random.default_rng(seed)
    model.zero_grad()
    objective().backward()
    worst = 0.0
    for _, param in model.named_parameters():
        if param.grad is None:
            continue
        flat, grads = param.data.view(-1), param.grad.view(-1)
        count = flat.numel()
        for idx in rng.choice(count, size=min(coords_per_tensor, count),
                              replace=False):
            analytic = grads[idx].item()
            origin = flat[idx].item()
            best = float("inf")
            for h in steps:
                flat[idx] = origin + h
                with torch.no_grad():
                    upper = objective().item()
                flat[idx] = origin - h
                with torch.no_grad():
                    lower = objective().item()
                fd = (upper - lower) / (2 * h)
                err = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-8)
                best = min(best, err)
            flat[idx] = origin
            worst = max(worst, best)
    return worst


def test_c02_gradient_correctness():
    start = time.perf_counter()
    torch.manual_seed(0)
    front = load_default_map("front_sj")
    complete = load_default_map("complete")
    rng = np.random.default_rng(42)
    # two random grids leave many transition pairs unseen, so the penalty
    # stays positive and its gradient is live
    front_matrix = build_transitions(
        [StitchGrid("front", rng.integers(0, front.k, (20, 20)))
         for _ in range(2)], front)
    complete_matrix = build_transitions(
        [StitchGrid("complete", rng.integers(0, complete.k, (20, 20)))
         for _ in range(2)], complete)

    failures = []

    def check(tag, model, objective):
        worst = _fd_worst(model, objective)
        if worst >= 1e-4:
            failures.append(f"{tag}: {worst:.3e}")

    for kind in ("infer_2lyr", "infer_5lyr", "infer_residual", "infer_unet",
                 "img2prog"):
        if kind == "img2prog":
            cfg = ModelConfig(kind=kind, width=6, grid_size=1, seed=3)
            x = torch.rand(2, 3, 8, 8, dtype=torch.float64)
            k, matrix = front.k, front_matrix
            truth = torch.from_numpy(rng.integers(0, k, (2, 1, 1)))
        else:
            cfg = ModelConfig(kind=kind, width=8, grid_size=8, seed=3)
            x = torch.rand(2, 14, 8, 8, dtype=torch.float64)
            k, matrix = complete.k, complete_matrix
            truth = torch.from_numpy(rng.integers(0, k, (2, 8, 8)))
        model = build_model(cfg).double().eval()
        probs = lambda: torch.softmax(model(x), dim=1).permute(0, 2, 3, 1)
        if kind != "img2prog":
            # a single-cell grid has no adjacent pairs, so only the grid
            # nets can exercise a non-trivial penalty
            assert syntax_penalty(probs().detach(), matrix).mean().item() > 0
        check(f"ce+{kind}", model,
              lambda: cross_entropy(probs(), truth))
        check(f"mil+{kind}", model,
              lambda: mil_cross_entropy(probs(), truth))
        check(f"syntax+{kind}", model,
              lambda: syntax_penalty(probs(), matrix).mean())

    refiner = build_model(
        ModelConfig(kind="refiner", width=6, grid_size=1, res_blocks=1,
                    seed=5)).double().eval()
    x_img = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    target = torch.rand(2, 8, 8, 3, dtype=torch.float64)
    extractor = default_extractor().double().eval()
    check("style+refiner", refiner, lambda: style_loss(
        refiner(x_img).permute(0, 2, 3, 1), target, extractor=extractor))

    decoder = build_model(
        ModelConfig(kind="img2prog", width=6, grid_size=1, seed=9)
    ).double().eval()
    chain_truth = torch.from_numpy(rng.integers(0, front.k, (2, 1, 1)))
    chain = lambda: torch.softmax(
        decoder(refiner(x_img)), dim=1).permute(0, 2, 3, 1)
    check("ce+refiner_chain", refiner,
          lambda: cross_entropy(chain(), chain_truth))
    check("mil+refiner_chain", refiner,
          lambda: mil_cross_entropy(chain(), chain_truth))
    check("syntax+refiner_chain", refiner,
          lambda: syntax_penalty(chain(), front_matrix).mean())

    critic = build_model(
        ModelConfig(kind="discriminator", width=6, grid_size=1, seed=6)
    ).double().eval()
    condition = torch.rand(2, 14, 1, 1, dtype=torch.float64)
    real = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    fake = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    check("gen_adv+refiner", refiner, lambda: adversarial_losses(
        critic(refiner(x_img), condition), critic(real, condition))[0])
    check("disc_adv+discriminator", critic, lambda: adversarial_losses(
        critic(fake, condition), critic(real, condition))[1])

    assert not failures, f"gradient mismatches: {failures}"
    assert time.perf_counter() - start < 300.0


# ------------------------------------------------------------ criterion 3

def test_c03_neighborhood_tolerance_ordering():
    rng = np.random.default_rng(99)
    cells = 0
    for _ in range(25):
        raw = rng.random((1, 20, 20, 14))
        probs = torch.from_numpy(raw / raw.sum(axis=-1, keepdims=True))
        truth = rng.integers(0, 14, (1, 20, 20))
        relaxed = mil_cross_entropy(probs, truth).item()
        strict = cross_entropy(probs, truth).item()
        assert relaxed <= strict
        cells += 400
    assert cells == 10_000


# ------------------------------------------------------------ criterion 4

def test_c04_renderer_decoder_round_trip():
    start = time.perf_counter()
    compared = 0
    for space_id, space in (("front_sj", "front"), ("complete", "complete")):
        label_map = load_default_map(space_id)
        atlas = build_atlas(label_map, seed=6)
        rng = np.random.default_rng(5)
        for _ in range(500):
            grid = StitchGrid(space, rng.integers(0, label_map.k, (20, 20)))
            decoded = tile_decode(render(grid, atlas), atlas)
            assert decoded.space == grid.space
            assert np.array_equal(decoded.cells, grid.cells)
            compared += 400
    assert compared == 400_000
    assert time.perf_counter() - start < 60.0


# ------------------------------------------------------------ criterion 5

def test_c05_single_yarn_ground_truth_training(tmp_path_factory):
    start = time.perf_counter()
    base = tmp_path_factory.mktemp("accept_c5")
    dataset = base / "dataset"
    build_dataset(DatasetConfig(seed=13, sj_count=500, mj_count=0), dataset)
    cfg = TrainConfig(
        phase="inference",
        dataset_dir=str(dataset),
        kind="infer_residual",
        dataset="sj",
        input_source="fromtrue",
        max_iter=2000,
        batch_size=8,
        seed=4,
        val_every=500,
    )
    run = base / "run"
    train_inference(cfg, run)
    report = run_scenario(
        4, dataset, split_ids(dataset, "test"),
        {"inference_sj": run / "best.iknt"}, base / "eval",
        write_images=False)
    print(f"held-out macro-F1 {report.macro_f1:.4f} "
          f"over {report.sample_count} samples")
    assert report.macro_f1 >= 0.90
    assert time.perf_counter() - start <= 1800.0


# ------------------------------------------------------------ criterion 6

def test_c06_model_capacity_ordering(scenario_scores):
    residual = float(np.mean(scenario_scores["s2_residual"]))
    plain = float(np.mean(scenario_scores["s2_2lyr"]))
    print(f"residual {residual:.4f} (per seed "
          f"{[round(v, 4) for v in scenario_scores['s2_residual']]}) vs "
          f"2lyr {plain:.4f} (per seed "
          f"{[round(v, 4) for v in scenario_scores['s2_2lyr']]})")
    assert residual > plain


# ------------------------------------------------------------ criterion 7

def test_c07_information_ordering(scenario_scores):
    s2 = float(np.mean(scenario_scores["s2_residual"]))
    s3 = float(np.mean(scenario_scores["s3"]))
    s4 = float(np.mean(scenario_scores["s4"]))
    print(f"S4 {s4:.4f} >= S3 {s3:.4f} >= S2 {s2:.4f}")
    assert s4 >= s3 >= s2


# ------------------------------------------------------------ criterion 8

def test_c08_parameter_count_fingerprints():
    achieved = {}
    for kind, target in PARAM_TARGETS.items():
        count = count_parameters(default_config(kind))
        achieved[kind] = count
        print(f"{kind}: {count} parameters (target {target})")
        assert target / 2 <= count <= target * 2, (
            f"{kind}: {count} outside 2x of {target}")
    print(f"achieved counts: {achieved}")


# ------------------------------------------------------------ criterion 9

def _tree_hash(root):
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(str(path.relative_to(root)).encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def test_c09_determinism_and_persistence(tmp_path_factory):
    base = tmp_path_factory.mktemp("accept_c9")

    cfg = DatasetConfig(seed=3, sj_count=12, mj_count=8)
    build_dataset(cfg, base / "data_a")
    build_dataset(cfg, base / "data_b")
    assert _tree_hash(base / "data_a") == _tree_hash(base / "data_b")

    model_cfg = default_config("infer_residual")
    model = build_model(model_cfg).eval()
    probe = torch.rand(2, 14, 20, 20, generator=torch.Generator().manual_seed(8))
    with torch.no_grad():
        before = model(probe)
    save_checkpoint(store_from_model(model_cfg, model), base / "model.iknt")
    restored = model_from_store(load_checkpoint(base / "model.iknt")).eval()
    with torch.no_grad():
        after = restored(probe)
    assert torch.equal(before, after)

    train_cfg = TrainConfig(
        phase="inference",
        dataset_dir=str(base / "data_a"),
        kind="infer_residual",
        width=8,
        max_iter=6,
        batch_size=2,
        seed=1,
        checkpoint_every=3,
        val_every=3,
    )
    train_inference(train_cfg, base / "straight")
    train_inference(train_cfg, base / "resumed")
    # replay steps 4..6 on top of the step-3 snapshot
    train_inference(train_cfg, base / "resumed", resume_step=3)
    assert metrics_equal_ignoring_wallclock(
        read_metrics(base / "straight"), read_metrics(base / "resumed"))
    straight_final = checkpoint_path(base / "straight", 6)
    resumed_final = checkpoint_path(base / "resumed", 6)
    assert straight_final.read_bytes() == resumed_final.read_bytes()


# ----------------------------------------------------------- criterion 10

def test_c10_dataset_composition(shared_dataset):
    manifest = read_manifest(shared_dataset)
    counts = manifest["counts"]
    # same mix as a 3000:1950 corpus, scaled down without rounding error
    assert counts["sj"] * 1950 == counts["mj"] * 3000

    histogram = np.zeros(14, dtype=np.int64)
    total = 0
    for split in ("train", "val", "test"):
        for sample_id in split_ids(shared_dataset, split):
            sample = load_sample(shared_dataset, sample_id)
            histogram += np.bincount(sample.front.cells.ravel(), minlength=14)
            total += sample.front.cells.size
    assert total == counts["total"] * 400
    front = load_default_map("front_sj")
    fk = front.names.index("FK")
    fraction = histogram[fk] / total
    print(f"FK fraction {fraction:.4f}")
    assert histogram.argmax() == fk
    assert 0.60 <= fraction <= 0.85
