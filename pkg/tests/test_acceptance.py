"""Acceptance suite: one test per release criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see per-criterion lines.
"""

import json
import time

import numpy as np
import pytest

from lbpforge.bgs import BgsParams
from lbpforge.expr import enumerate_mutations, operator_count, parse
from lbpforge.lbp import NeighborhoodSpec, lbp_code, lbp_image, original_lbp, region_histograms_all
from lbpforge.metrics import ConfusionCounts, confusion, f_measure, score
from lbpforge.pipeline import main
from lbpforge.search import CmaState, SceneEvaluation, cma_ask, cma_tell, minimize
from lbpforge.synth import SyntheticSceneSpec, synthetic_scene, write_cdnet_scene

NEAREST = NeighborhoodSpec(p=8, r=1.0, sampling="nearest")
ACCEPT_PARAMS = BgsParams(k=3, t_p=0.65, t_b=0.8, alpha_b=0.05, alpha_w=0.05,
                          initial_weight=0.01, region_radius=1)
SCENE_SPEC = SyntheticSceneSpec(height=64, width=64, n_frames=60, square=16,
                                speed=2, seed=0, ignore_ring=2)


def _ok(name: str):
    print(f"ACCEPTANCE PASS: {name}")


def oracle_lbp_3x3(patch):
    """Independent brute-force oracle for Original LBP on a 3x3 patch."""
    steps = [(0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1)]
    code = 0
    for p, (dy, dx) in enumerate(steps):
        if patch[1 + dy][1 + dx] - patch[1][1] >= 0:
            code += 2**p
    return code


@pytest.fixture(scope="module")
def moving_scene():
    frames, gts = synthetic_scene(SCENE_SPEC)
    return SceneEvaluation(frames, gts, bgs_params=ACCEPT_PARAMS,
                           neighborhood=NEAREST, burn_in=20)


@pytest.fixture(scope="module")
def scene_on_disk(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance") / "synthetic"
    frames, gts = synthetic_scene(SCENE_SPEC)
    write_cdnet_scene(root, frames, gts)
    return str(root)


def test_oracle_equivalence_1000_patches():
    started = time.monotonic()
    rng = np.random.default_rng(100)
    d = original_lbp(NEAREST)
    patches = rng.integers(0, 256, (1000, 3, 3)).astype(float)
    mismatches = sum(
        lbp_code(d, patch, 1, 1) != oracle_lbp_3x3(patch) for patch in patches
    )
    elapsed = time.monotonic() - started
    assert mismatches == 0
    assert elapsed < 1.0
    _ok(f"oracle equivalence on 1000 patches, 100% exact ({elapsed:.2f}s)")


def test_histogram_laws_100_images():
    rng = np.random.default_rng(101)
    d = original_lbp(NEAREST)
    for _ in range(100):
        img = rng.integers(0, 256, (16, 16)).astype(float)
        codes = lbp_image(d, img)
        hists = region_histograms_all(codes, region_radius=4, n_bins=d.code_count)
        assert hists.shape[-1] == 2**8
        assert np.abs(hists.sum(axis=-1) - 1.0).max() <= 1e-9
    _ok("histogram laws: 2^P bins, sums within 1e-9, on 100 images")


def test_mutation_count_law():
    for eta in range(7):
        e = parse("g_p" + " + g_c" * eta)
        assert operator_count(e) == eta
        assert len(enumerate_mutations(e, cap=1024)) == min(4**eta, 1024)
    _ok("mutation count law min(4^eta, 1024) for eta in 0..6")


def test_illumination_invariance():
    rng = np.random.default_rng(102)
    d = original_lbp(NEAREST)
    for _ in range(100):
        img = rng.integers(0, 205, (12, 12)).astype(float)
        base = lbp_image(d, img)
        for c in (1.0, 50.0):
            np.testing.assert_array_equal(base, lbp_image(d, img + c))
    _ok("illumination invariance for c in {1, 50} on 100 images")


def test_cma_es_sphere_convergence():
    started = time.monotonic()
    target = np.array([0.5, -0.3, 0.8, -1.1, 0.2])

    def sphere(x):
        return float(np.sum((x - target) ** 2))

    for seed in range(10):
        best_x, _ = minimize(sphere, np.zeros(5), sigma0=0.5, budget=2000,
                             rng=np.random.default_rng(seed))
        assert np.linalg.norm(best_x - target) < 1e-3, f"seed {seed}"
    elapsed = time.monotonic() - started
    assert elapsed < 5.0
    _ok(f"sphere n=5 below 1e-3 within 2000 evals for 10/10 seeds ({elapsed:.2f}s)")


def test_sigma_rule_direction_property():
    from dataclasses import replace

    rng = np.random.default_rng(103)
    for _ in range(10_000):
        n = int(rng.integers(1, 6))
        state = CmaState.initial(rng.standard_normal(n),
                                 sigma0=float(10 ** rng.uniform(-3, 2)))
        state = replace(state, p_succ=float(rng.uniform(0, 1)))
        off, z = cma_ask(state, rng)
        if state.p_succ >= state.p_target:
            assert cma_tell(state, off, 1, z).sigma >= state.sigma
        if state.p_succ <= state.p_target:
            assert cma_tell(state, off, 0, z).sigma <= state.sigma
    _ok("sigma success-rule direction on 10^4 random states")


def test_bgs_synthetic_end_to_end(moving_scene):
    started = time.monotonic()
    s = moving_scene.evaluate_descriptor(original_lbp(NEAREST))
    assert s.fscore >= 0.90

    static_spec = SyntheticSceneSpec(height=64, width=64, n_frames=60,
                                     square=None, seed=0)
    frames, gts = synthetic_scene(static_spec)
    static = SceneEvaluation(frames, gts, bgs_params=ACCEPT_PARAMS,
                             neighborhood=NEAREST, burn_in=20)
    model_score = ConfusionCounts()
    from lbpforge.bgs import BackgroundModel

    model = BackgroundModel.for_frame_shape(original_lbp(NEAREST), ACCEPT_PARAMS,
                                            frames[0].shape)
    for i, frame in enumerate(frames):
        mask = model.process_frame(frame)
        if i >= 20:
            model_score = model_score + confusion(mask, gts[i][1:-1, 1:-1])
    fp_rate = model_score.fp / max(model_score.fp + model_score.tn, 1)
    elapsed = time.monotonic() - started
    assert fp_rate < 0.01
    assert elapsed < 30.0
    _ok(f"synthetic end-to-end: F={s.fscore:.4f} >= 0.90, "
        f"static FP rate {fp_rate:.5f} < 1% ({elapsed:.1f}s)")


def test_discovery_non_regression_and_determinism(moving_scene, scene_on_disk,
                                                  tmp_path):
    started = time.monotonic()
    corpus = tmp_path / "corpus20.txt"
    assert main(["sample", "--count", "20", "--seed", "13", "--max-depth", "3",
                 "--out", str(corpus)]) == 0
    assert len(corpus.read_text().splitlines()) == 20

    manifests = []
    for run in ("run1", "run2"):
        out = tmp_path / run
        status = main([
            "discover", "--scene", scene_on_disk, "--corpus", str(corpus),
            "--seed", "7", "--cap", "16", "--a-budget", "2", "--budget", "48",
            "--sampling", "nearest", "--region-radius", "1", "--burn-in", "20",
            "--tp", "0.65", "--alpha-b", "0.05", "--alpha-w", "0.05",
            "--out", str(out),
        ])
        assert status == 0
        manifests.append((out / "manifest.json").read_bytes())
    assert manifests[0] == manifests[1], "same seed must give byte-identical manifests"

    doc = json.loads(manifests[0])
    baseline = moving_scene.evaluate_descriptor(original_lbp(NEAREST))
    assert doc["best"]["fscore"] >= baseline.fscore
    assert any(c["source"] == "(g_p - g_c)" for c in doc["candidates"])
    elapsed = time.monotonic() - started
    assert elapsed < 600.0
    _ok(f"discovery: best F={doc['best']['fscore']:.4f} >= baseline "
        f"F={baseline.fscore:.4f}, manifests byte-identical ({elapsed:.0f}s)")


def test_metrics_exactness():
    s = score(ConfusionCounts(tp=8, fp=2, tn=10, fn=2))
    assert s.precision == 0.8 and s.recall == 0.8 and s.fscore == pytest.approx(0.8)
    z = score(ConfusionCounts())
    assert (z.precision, z.recall, z.fscore) == (0.0, 0.0, 0.0)
    assert f_measure(0.8163, 0.8098) == pytest.approx(0.8130, abs=5e-5)
    _ok("metrics exactness incl. F(0.8163, 0.8098) = 0.8130 +/- 5e-5")


def test_change_detection_layout_report(scene_on_disk, tmp_path):
    out = tmp_path / "report"
    status = main([
        "evaluate", "--scene", scene_on_disk,
        "--descriptor", "original", "--descriptor", "modified", "--a", "4.46",
        "--sampling", "nearest", "--region-radius", "1", "--burn-in", "20",
        "--tp", "0.65", "--alpha-b", "0.05", "--alpha-w", "0.05",
        "--out", str(out),
    ])
    assert status == 0
    with open(out / "report.json") as fh:
        doc = json.load(fh)
    assert len(doc) == 2
    for row in doc:
        assert set(row) == {"scene", "descriptor", "precision", "recall", "fscore"}
        for key in ("precision", "recall", "fscore"):
            assert 0.0 <= row[key] <= 1.0
    csv_text = (out / "report.csv").read_text().splitlines()
    assert csv_text[0] == "scene,descriptor,precision,recall,fscore"
    assert len(csv_text) == 3
    _ok("change-detection layout evaluate: end-to-end run and report schema")
