"""Release gates: exact-formula oracles, training quality, suite-level claims.

Every test here restates its oracle from scratch instead of importing the
implementation's helpers, pins its numeric tolerance, and asserts its own
runtime budget. The conftest hook prints one [ACCEPTANCE] line per gate at
the end of the run.
"""
import dataclasses
import math
import time

import numpy as np
import pytest

from mttrack import config as cfgmod
from mttrack import evaluation as ev
from mttrack.cli import main as cli_main
from mttrack.combinet import (
    ArchConfig,
    PathWindow,
    TrainConfig,
    TrainSample,
    batch_forward,
    gradient_check,
    init_model,
    load_windows,
    train,
)
from mttrack.fusion import Candidate, ScoreMap, fuse
from mttrack.geometry import BBox, ImageDims, NormBBox
from mttrack.selector import SelectorConfig, reliability_score, select
from mttrack.synthetic import ScenarioConfig, motion_sequences, scenario_suite
from mttrack.template_bag import (
    BagConfig,
    compute_thresholds,
    default_bag_config,
    init_bag,
    recompute_thresholds,
    try_update,
)

DIMS = ImageDims(640, 480)


def _random_ladder_config(rng):
    """Valid random (config, c_bar) draw for the adaptive threshold ladder.

    Weight ranges keep every raw threshold above tau_min so the ladder's
    floor clamp never engages; draws whose ladder is not strictly
    decreasing are rejected and redrawn.
    """
    while True:
        tau_min = rng.uniform(0.1, 0.8)
        c_bar = rng.uniform(tau_min + 0.05, 0.999)
        n_above = int(rng.integers(0, 4))
        n_below = int(rng.integers(1, 4))
        above = tuple(sorted(rng.uniform(5.0, 50.0, n_above), reverse=True))
        below = tuple(sorted(rng.uniform(1.0, 3.0, n_below), reverse=True))
        taus = [1.0]
        taus += [1.0 - (1.0 - c_bar) / t for t in above]
        taus += [1.0 + (tau_min - c_bar) / t for t in below]
        if any(a <= b for a, b in zip(taus, taus[1:])):
            continue
        n = 1 + n_above + n_below
        cfg = BagConfig(
            n=n,
            tau_min=tau_min,
            slot_weights_above=above,
            slot_weights_below=below,
            fusion_weights=(1.0 / n,) * n,
        )
        return cfg, c_bar, taus


@pytest.mark.criterion("threshold ladder oracle: 1000 draws within 1e-12, defaults monotone")
def test_threshold_ladder_matches_hand_evaluation():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    for _ in range(1000):
        cfg, c_bar, expected = _random_ladder_config(rng)
        bag = init_bag(cfg, "t0")
        bag.c_bar = c_bar
        got = recompute_thresholds(bag)
        assert len(got) == len(expected)
        for g, e in zip(got, expected):
            assert abs(g - e) <= 1e-12
    for n in (6, 10):
        cfg = default_bag_config(n)
        for c_bar in np.linspace(cfg.tau_min + 0.05 + 1e-9, 1.0 - 1e-9, 400):
            taus, degenerate = compute_thresholds(cfg, float(c_bar))
            assert not degenerate
            assert all(a > b for a, b in zip(taus, taus[1:]))
    assert time.perf_counter() - t0 < 1.0


def _brute_slot(taus, tau_min, c):
    """Interval scan: slot i takes [tau_i, tau_{i-1}), top interval closed."""
    if c < tau_min:
        return None
    n = len(taus)
    if n == 1:
        return None
    for i in range(2, n + 1):
        hi = 1.0 if i == 2 else taus[i - 2]
        lo = taus[i - 1]
        if lo <= c < hi or (i == 2 and c == hi):
            return i
    return n


@pytest.mark.criterion("update rule: 10k draws match interval scan, slot 1 immutable")
def test_update_rule_matches_interval_scan():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    configs = [_random_ladder_config(rng) for _ in range(100)]
    for trial in range(10_000):
        cfg, c_bar, _ = configs[trial % len(configs)]
        bag = init_bag(cfg, "t0")
        bag.c_bar = c_bar
        recompute_thresholds(bag)
        c = 1.0 if trial % 97 == 0 else float(rng.uniform(0.0, 1.0))
        before = [s.template for s in bag.slots]
        if c < cfg.tau_min:
            expected = None
            expected_taus = bag.thresholds
        else:
            a = cfg.cbar_alpha
            c2 = (1.0 - a) * c_bar + a * c
            expected_taus = [1.0]
            expected_taus += [1.0 - (1.0 - c2) / t for t in cfg.slot_weights_above]
            expected_taus += [1.0 + (cfg.tau_min - c2) / t for t in cfg.slot_weights_below]
            expected = _brute_slot(expected_taus, cfg.tau_min, c)
        fresh = object()
        got = try_update(bag, c, fresh, frame=trial)
        assert got == expected
        changed = [i for i, s in enumerate(bag.slots) if s.template is not before[i]]
        assert changed == ([] if got is None else [got - 1])
        for g, e in zip(bag.thresholds, expected_taus):
            assert abs(g - e) <= 1e-12

    marker = "first_frame"
    bag = init_bag(default_bag_config(6), marker)
    for frame in range(1, 1001):
        try_update(bag, float(rng.uniform(0.0, 1.0)), object(), frame)
        assert bag.slots[0].template == marker
        assert bag.slots[0].threshold == 1.0
        assert bag.slots[0].last_update_frame == 0
    assert time.perf_counter() - t0 < 5.0


def _random_score_map(rng, h, w):
    scores = rng.uniform(0.0, 1.0, (h, w))
    boxes = np.empty((h, w, 4))
    boxes[..., 0] = rng.uniform(0.0, 600.0, (h, w))
    boxes[..., 1] = rng.uniform(0.0, 440.0, (h, w))
    boxes[..., 2:] = rng.uniform(5.0, 40.0, (h, w, 2))
    return ScoreMap(scores=scores, boxes=boxes)


@pytest.mark.criterion("map fusion oracle: 1000 random sets within 1e-12, single-map bitwise")
def test_fusion_matches_double_loop():
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(2, 7))
        h, w = int(rng.integers(3, 9)), int(rng.integers(3, 9))
        maps = [_random_score_map(rng, h, w) for _ in range(n)]
        weights = rng.uniform(0.1, 1.0, n)
        weights = list(weights / weights.sum())
        fused = fuse(maps, weights)
        for r in range(h):
            for c in range(w):
                oracle = sum(weights[i] * float(maps[i].scores[r, c]) for i in range(n))
                assert abs(float(fused.scores[r, c]) - oracle) <= 1e-12

    single = _random_score_map(rng, 5, 7)
    out = fuse([single], [1.0])
    assert np.array_equal(out.scores, single.scores)
    assert np.array_equal(out.boxes, single.boxes)
    assert time.perf_counter() - t0 < 5.0


def _random_selector_config(rng, tau_select=None):
    return SelectorConfig(
        bonus_b=float(rng.uniform(0.0, 0.3)),
        rw=float(rng.uniform(0.5, 3.0)),
        tau_select=float(rng.uniform(0.0, 0.9)) if tau_select is None else tau_select,
        de_mode="sum" if rng.uniform() < 0.5 else "l1_mean",
    )


def _brute_select(cands, pc, sc, dims, cfg):
    """Independent re-evaluation: score each candidate, best-first tie chain."""
    scored = []
    for cand in cands:
        cc1 = cand.box.cx / dims.width
        cc2 = cand.box.cy / dims.height
        if cfg.de_mode == "sum":
            de = abs(pc[0] + pc[1] - cc1 - cc2) / 2.0
        else:
            de = (abs(pc[0] - cc1) + abs(pc[1] - cc2)) / 2.0
        rs = cand.confidence - (de - cfg.bonus_b) * sc * (1.0 - cand.confidence) / cfg.rw
        scored.append((rs, cand.confidence, de))
    best = 0
    for j in range(1, len(scored)):
        rs, conf, de = scored[j]
        brs, bconf, bde = scored[best]
        if rs > brs or (rs == brs and (conf > bconf or (conf == bconf and de < bde))):
            best = j
    return best, scored[best][0]


@pytest.mark.criterion(
    "reliability selection: exact identities, 10k brute-force matches, sc=0 argmax"
)
def test_reliability_selection_exactness():
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()

    for _ in range(100):
        cfg = _random_selector_config(rng)
        conf = float(rng.uniform(0.0, 1.0))
        sc = float(rng.uniform(0.0, 1.0))
        assert reliability_score(conf, cfg.bonus_b, sc, cfg) == conf
        assert reliability_score(1.0, float(rng.uniform(0.0, 2.0)), sc, cfg) == 1.0

    for _ in range(10_000):
        k = int(rng.integers(1, 9))
        cands = []
        for j in range(k):
            x = float(rng.uniform(0.0, 600.0))
            y = float(rng.uniform(0.0, 440.0))
            s = float(rng.uniform(5.0, 40.0))
            cands.append(
                Candidate(box=BBox(x, y, s, s),
                          confidence=float(rng.uniform(0.0, 1.0)),
                          cell=(j, 0))
            )
        pc = (float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.0, 1.0)))
        sc = float(rng.uniform(0.0, 1.0))
        cfg = _random_selector_config(rng)
        want_idx, want_rs = _brute_select(cands, pc, sc, DIMS, cfg)
        got = select(cands, pc, sc, DIMS, cfg)
        assert abs(got.reliability - want_rs) <= 1e-12
        if want_rs >= cfg.tau_select:
            assert got.tracked and got.index == want_idx
        else:
            assert not got.tracked and got.index is None

        zero = select(cands, pc, 0.0, DIMS, dataclasses.replace(cfg, tau_select=0.0))
        assert zero.index == int(np.argmax([c.confidence for c in cands]))
    assert time.perf_counter() - t0 < 5.0


def _random_train_sample(rng):
    boxes = []
    for _ in range(5):
        cx, cy = rng.uniform(0.15, 0.85, 2)
        nw, nh = rng.uniform(0.05, 0.25, 2)
        boxes.append(NormBBox(float(cx), float(cy), float(nw), float(nh)))
    return TrainSample(window=PathWindow(tuple(boxes[:4])), target=boxes[4])


@pytest.mark.criterion("path predictor gradients: rel error < 1e-6, mutation detected")
def test_gradient_check_passes_and_detects_mutation():
    rng = np.random.default_rng(505)
    t0 = time.perf_counter()
    for trial in range(20):
        # center_inputs stays at its default: uncentered inputs inflate the
        # loss magnitude and its roundoff can reach 1e-6 relative on
        # near-zero gradient entries, swamping the signal this gate checks
        arch = ArchConfig(
            conv_channels=int(rng.integers(3, 7)),
            kernel_size=3 if rng.uniform() < 0.7 else 5,
            n_outputs=2 if rng.uniform() < 0.7 else 4,
            linear_skip=bool(rng.uniform() < 0.8),
        )
        model = init_model(arch, seed=int(rng.integers(1 << 30)))
        sample = _random_train_sample(rng)
        assert gradient_check(model, sample, epsilon=1e-5) < 1e-6
    mutated = gradient_check(model, sample, epsilon=1e-5, mutate=("dense6_W", (0, 0)))
    assert mutated > 0.1
    assert time.perf_counter() - t0 < 30.0


@pytest.mark.criterion(
    "path predictor training: held-out error < 0.01 and <= 2x linear extrapolation"
)
def test_training_beats_error_budget_and_linear_oracle():
    t0 = time.perf_counter()
    dataset = load_windows(motion_sequences(1000, frames=54, seed=11))
    assert len(dataset) == 50_000
    result = train(dataset, TrainConfig(epochs=100, batch_size=1024, seed=0))

    held = load_windows(motion_sequences(200, frames=54, seed=12))
    X = np.stack([s.window.as_array() for s in held])
    T = np.stack([s.target_array(2) for s in held])
    preds, _ = batch_forward(result.model, X)
    model_err = float(np.mean(np.hypot(preds[:, 0] - T[:, 0], preds[:, 1] - T[:, 1])))

    # constant-velocity extrapolation from the last two window centers
    lin1 = 2.0 * X[:, 3, 0] - X[:, 2, 0]
    lin2 = 2.0 * X[:, 3, 1] - X[:, 2, 1]
    linear_err = float(np.mean(np.hypot(lin1 - T[:, 0], lin2 - T[:, 1])))

    assert model_err < 0.01
    assert model_err <= 2.0 * linear_err
    assert time.perf_counter() - t0 < 300.0


@pytest.mark.criterion(
    "multi-template suite gains: >= 5 AUC pts on distractor/drift, n10 within 2"
)
def test_multi_template_config_beats_single_template_baseline():
    t0 = time.perf_counter()
    suite = scenario_suite()
    full = ev.run_suite(suite, ev.ablation_pipeline_config(6, "adaptive", True))
    base = ev.run_suite(suite, ev.ablation_pipeline_config(1, "adaptive", False))
    wide = ev.run_suite(suite, ev.ablation_pipeline_config(10, "adaptive", True))

    for scen, f, b in zip(suite, full, base):
        gap = f.success_auc - b.success_auc
        if scen.name.endswith("_distractors") or scen.name.endswith("_drift"):
            assert gap >= 0.05, f"{scen.name}: gap {gap:.4f} below 5 points"
        elif scen.name.endswith("_clean"):
            assert gap >= 0.0, f"{scen.name}: clean gap {gap:.4f} negative"

    mean6 = float(np.mean([r.success_auc for r in full]))
    mean10 = float(np.mean([r.success_auc for r in wide]))
    assert abs(mean10 - mean6) <= 0.02
    assert time.perf_counter() - t0 < 120.0


@pytest.mark.criterion("adaptive thresholds >= mismatched constants on >= 10 of 12 scenarios")
def test_adaptive_thresholds_beat_mismatched_constants():
    t0 = time.perf_counter()
    suite = scenario_suite()
    adaptive = ev.run_suite(suite, ev.ablation_pipeline_config(6, "adaptive", True))
    constant = ev.run_suite(suite, ev.ablation_pipeline_config(6, "constant", True))
    wins = sum(a.success_auc >= c.success_auc for a, c in zip(adaptive, constant))
    assert wins >= 10, f"adaptive won only {wins}/12 scenarios"
    assert time.perf_counter() - t0 < 120.0


def _brute_curves(preds, gts):
    n = len(preds)
    ious, dists = [], []
    for p, g in zip(preds, gts):
        if p is None and g is None:
            ious.append(1.0)
            dists.append(0.0)
        elif p is None or g is None:
            ious.append(0.0)
            dists.append(math.inf)
        else:
            left, top = max(p.x, g.x), max(p.y, g.y)
            right = min(p.x + p.w, g.x + g.w)
            bottom = min(p.y + p.h, g.y + g.h)
            inter = max(0.0, right - left) * max(0.0, bottom - top)
            union = p.w * p.h + g.w * g.h - inter
            ious.append(inter / union if union > 0 else 0.0)
            dists.append(math.hypot(p.cx - g.cx, p.cy - g.cy))
    succ = [sum(v > t for v in ious) / n for t in ev.SUCCESS_THRESHOLDS]
    prec = [sum(d <= t for d in dists) / n for t in ev.PRECISION_THRESHOLDS]
    return succ, prec


def _random_box_track(rng, n, p_absent):
    out = []
    for _ in range(n):
        if rng.uniform() < p_absent:
            out.append(None)
        else:
            x = float(rng.uniform(0.0, 580.0))
            y = float(rng.uniform(0.0, 420.0))
            w = float(rng.uniform(8.0, 60.0))
            h = float(rng.uniform(8.0, 60.0))
            out.append(BBox(x, y, w, h))
    return out


@pytest.mark.criterion("metrics oracle: 100 random pairs within 1e-12, perfect run = 20/21")
def test_metrics_match_per_frame_recount():
    rng = np.random.default_rng(606)
    t0 = time.perf_counter()
    for _ in range(100):
        n = int(rng.integers(5, 61))
        gts = _random_box_track(rng, n, p_absent=0.15)
        while all(g is None for g in gts):
            gts = _random_box_track(rng, n, p_absent=0.15)
        preds = _random_box_track(rng, n, p_absent=0.15)
        ann = ev.SequenceAnnotation("pair", DIMS, tuple(gts))
        report = ev.compute_metrics(preds, ann)
        succ, prec = _brute_curves(preds, gts)
        for a, b in zip(report.success_curve, succ):
            assert abs(a - b) <= 1e-12
        for a, b in zip(report.precision_curve, prec):
            assert abs(a - b) <= 1e-12
        assert abs(report.success_auc - sum(succ) / len(succ)) <= 1e-12
        assert abs(report.precision_at_20 - prec[20]) <= 1e-12

    boxes = _random_box_track(rng, 40, p_absent=0.0)
    perfect = ev.compute_metrics(boxes, ev.SequenceAnnotation("perfect", DIMS, tuple(boxes)))
    assert perfect.success_auc == 20.0 / 21.0
    assert time.perf_counter() - t0 < 5.0


@pytest.mark.criterion("CLI reproducibility: byte-identical re-runs for every subcommand")
def test_cli_reruns_are_byte_identical(tmp_path):
    def tree(root):
        return {
            str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*"))
            if p.is_file()
        }

    scen_cfg = tmp_path / "scen.cfg"
    scen = ScenarioConfig(name="mini", seed=5, frames=30)
    cfgmod.save_config(scen_cfg, cfgmod.scenario_config_to(scen))
    train_cfg = tmp_path / "train.cfg"
    cfgmod.save_config(train_cfg, {"combinet.epochs": "3", "combinet.batch_size": "64"})

    def run_all(tag):
        base = tmp_path / tag
        assert cli_main(["simulate", "--config", str(scen_cfg),
                         "--out", str(base / "sim")]) == 0
        assert cli_main(["train-combinet", "--config", str(train_cfg),
                         "--sequences", "10", "--out", str(base / "model")]) == 0
        assert cli_main(["track", "--config", str(scen_cfg),
                         "--model", str(base / "model" / "combinet.json"),
                         "--out", str(base / "trk")]) == 0
        assert cli_main(["eval", "--results", str(base / "trk" / "mini_results.csv"),
                         "--annotations", str(base / "sim"),
                         "--out", str(base / "ev")]) == 0
        assert cli_main(["ablate", "--quick", "--out", str(base / "abl")]) == 0
        return base

    first = run_all("a")
    second = run_all("b")
    for sub in ("sim", "model", "trk", "ev", "abl"):
        assert tree(first / sub) == tree(second / sub), f"{sub} outputs differ between runs"
