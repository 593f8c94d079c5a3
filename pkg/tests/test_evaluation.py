"""Metrics, annotation loaders, results files, ablation wiring."""
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mttrack.evaluation import (
    MISMATCH_CBAR,
    PRECISION_THRESHOLDS,
    SUCCESS_THRESHOLDS,
    AblationCell,
    EvalError,
    MetricReport,
    SequenceAnnotation,
    ablation_pipeline_config,
    aggregate_reports,
    compute_metrics,
    export_otb_layout,
    load_annotations,
    mismatched_constant_thresholds,
    predictions_from_file,
    predictions_from_results,
    read_results,
    run_ablation,
    run_scenario,
    write_ablation_table,
    write_report,
    write_results,
)
from mttrack.geometry import BBox, ImageDims, center_distance, iou
from mttrack.pipeline import PipelineConfig
from mttrack.synthetic import ScenarioConfig, generate, target_boxes
from mttrack.template_bag import default_bag_config

DIMS = ImageDims(640, 480)


def annot(boxes, name="seq"):
    return SequenceAnnotation(name, DIMS, tuple(boxes))


def brute_force_curves(predicted, gt_boxes):
    """Independent per-frame recount of both protocol curves."""
    success = []
    for t in SUCCESS_THRESHOLDS:
        hits = 0
        for p, g in zip(predicted, gt_boxes):
            if p is None and g is None:
                v = 1.0
            elif p is None or g is None:
                v = 0.0
            else:
                v = iou(p, g)
            hits += v > t
        success.append(hits / len(predicted))
    precision = []
    for t in PRECISION_THRESHOLDS:
        hits = 0
        for p, g in zip(predicted, gt_boxes):
            if p is None and g is None:
                d = 0.0
            elif p is None or g is None:
                d = math.inf
            else:
                d = center_distance(p, g)
            hits += d <= t
        precision.append(hits / len(predicted))
    return success, precision


boxes_st = st.builds(
    BBox,
    st.floats(0, 600), st.floats(0, 440),
    st.floats(1, 40), st.floats(1, 40),
)
maybe_box_st = st.one_of(st.none(), boxes_st)


class TestComputeMetrics:
    def test_perfect_prediction_hits_the_strict_ceiling(self):
        boxes = [BBox(10.0 * i, 5.0 * i, 30, 20) for i in range(1, 9)]
        report = compute_metrics(boxes, annot(boxes))
        assert report.success_auc == 20 / 21
        assert report.success_curve[-1] == 0.0
        assert report.precision_at_20 == 1.0

    def test_total_miss_scores_zero(self):
        gt = [BBox(0, 0, 10, 10)] * 5
        pred = [BBox(300, 300, 10, 10)] * 5
        report = compute_metrics(pred, annot(gt))
        assert report.success_auc == 0.0
        assert report.precision_at_20 == 0.0

    def test_agreed_absence_counts_as_correct(self):
        report = compute_metrics([None] * 4, annot([None] * 4))
        assert report.success_auc == 20 / 21
        assert report.precision_curve == tuple([1.0] * 51)

    def test_half_perfect_half_disjoint_mixture(self):
        gt = [BBox(10, 10, 20, 20)] * 6
        pred = [BBox(10, 10, 20, 20)] * 3 + [BBox(500, 400, 20, 20)] * 3
        report = compute_metrics(pred, annot(gt))
        # every threshold below 1.0 splits the frames evenly; at t=1.0 even
        # the perfect half fails the strict inequality
        assert all(v == 0.5 for v in report.success_curve[:-1])
        assert report.success_curve[-1] == 0.0
        assert report.precision_at_20 == 0.5

    def test_disagreement_scores_as_miss(self):
        gt = [BBox(5, 5, 20, 20), None]
        pred = [None, BBox(5, 5, 20, 20)]
        report = compute_metrics(pred, annot(gt))
        assert report.success_auc == 0.0
        assert report.precision_at_20 == 0.0

    def test_length_mismatch_names_both_sides(self):
        with pytest.raises(EvalError, match="3 predictions for 2"):
            compute_metrics([None] * 3, annot([None, None]))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(maybe_box_st, maybe_box_st), min_size=1, max_size=30))
    def test_matches_brute_force_recount(self, pairs):
        pred = [p for p, _ in pairs]
        gt = [g for _, g in pairs]
        report = compute_metrics(pred, annot(gt))
        success, precision = brute_force_curves(pred, gt)
        assert np.allclose(report.success_curve, success, atol=1e-12)
        assert np.allclose(report.precision_curve, precision, atol=1e-12)
        assert report.success_auc == pytest.approx(np.mean(success), abs=1e-12)

    def test_report_validation_rejects_non_monotone_curves(self):
        good = compute_metrics([None], annot([None]))
        bad_success = list(good.success_curve)
        bad_success[2] = 0.4
        with pytest.raises(EvalError, match="non-increasing"):
            MetricReport(
                "x", 1, tuple(bad_success),
                good.success_auc, good.precision_curve, good.precision_at_20,
            )


class TestAggregate:
    def test_mean_of_curves_and_linearity(self):
        r1 = compute_metrics([BBox(0, 0, 10, 10)], annot([BBox(0, 0, 10, 10)]))
        r2 = compute_metrics([BBox(50, 50, 10, 10)], annot([BBox(0, 0, 10, 10)]))
        agg = aggregate_reports([r1, r2])
        assert agg.n_frames == 2
        for i in range(len(SUCCESS_THRESHOLDS)):
            assert agg.success_curve[i] == pytest.approx(
                (r1.success_curve[i] + r2.success_curve[i]) / 2, abs=1e-15
            )
        assert agg.success_auc == pytest.approx(
            (r1.success_auc + r2.success_auc) / 2, abs=1e-15
        )

    def test_empty_aggregate_rejected(self):
        with pytest.raises(EvalError):
            aggregate_reports([])


def write_otb_corpus(root):
    """Three small sequences exercising separators, absence, and dims."""
    a = root / "seq_comma"
    a.mkdir(parents=True)
    a.joinpath("groundtruth_rect.txt").write_text("10,20,30,40\n12,22,30,40\n")
    b = root / "seq_space"
    b.mkdir()
    b.joinpath("groundtruth_rect.txt").write_text("5 6 7 8\n5\t6\t7\t8\n6 7 8 9\n")
    c = root / "seq_absent"
    c.mkdir()
    c.joinpath("groundtruth_rect.txt").write_text("10,10,20,20\nNaN,NaN,NaN,NaN\n")
    c.joinpath("dims.txt").write_text("320 240\n")
    return root


class TestLoadAnnotations:
    def test_bundled_toy_corpus(self):
        corpus = Path(__file__).parent / "data" / "otb_toy"
        seqs = load_annotations(corpus, "otb")
        counts = {s.name: len(s.gt_boxes) for s in seqs}
        assert counts == {"seq_ball": 8, "seq_cart": 5, "seq_drone": 12}
        cart = next(s for s in seqs if s.name == "seq_cart")
        assert cart.gt_boxes[2] is None
        drone = next(s for s in seqs if s.name == "seq_drone")
        assert drone.dims == ImageDims(640, 360)

    def test_otb_layout_roundtrip(self, tmp_path):
        seqs = load_annotations(write_otb_corpus(tmp_path), "otb")
        by_name = {s.name: s for s in seqs}
        assert sorted(by_name) == ["seq_absent", "seq_comma", "seq_space"]
        assert by_name["seq_comma"].gt_boxes[0] == BBox(10, 20, 30, 40)
        assert len(by_name["seq_space"].gt_boxes) == 3
        assert by_name["seq_absent"].gt_boxes[1] is None
        assert by_name["seq_absent"].dims == ImageDims(320, 240)
        # no dims file: inferred from the farthest box edge
        assert by_name["seq_comma"].dims == ImageDims(42, 62)

    def test_malformed_line_names_file_and_line(self, tmp_path):
        bad = tmp_path / "seq"
        bad.mkdir()
        bad.joinpath("groundtruth_rect.txt").write_text("10,20,30\n")
        with pytest.raises(EvalError, match=r"groundtruth_rect\.txt:1"):
            load_annotations(tmp_path, "otb")

    def test_non_numeric_field_rejected(self, tmp_path):
        bad = tmp_path / "seq"
        bad.mkdir()
        bad.joinpath("groundtruth_rect.txt").write_text("10,20,abc,40\n")
        with pytest.raises(EvalError, match="seq"):
            load_annotations(tmp_path, "otb")

    def test_empty_directory_warns_and_returns_nothing(self, tmp_path, caplog):
        with caplog.at_level("WARNING"):
            assert load_annotations(tmp_path, "otb") == []
        assert "no sequences" in caplog.text

    def test_missing_directory_rejected(self, tmp_path):
        with pytest.raises(EvalError, match="does not exist"):
            load_annotations(tmp_path / "nope", "otb")

    def test_unknown_layout_rejected(self, tmp_path):
        with pytest.raises(EvalError, match="unknown layout"):
            load_annotations(tmp_path, "vot")

    def test_got10k_absence_labels(self, tmp_path):
        seq = tmp_path / "seq"
        seq.mkdir()
        seq.joinpath("groundtruth.txt").write_text("10,10,20,20\n11,11,20,20\n12,12,20,20\n")
        seq.joinpath("absence.label").write_text("0\n1\n0\n")
        (anns,) = load_annotations(tmp_path, "got10k")
        assert anns.gt_boxes[0] is not None
        assert anns.gt_boxes[1] is None
        assert anns.gt_boxes[2] is not None

    def test_got10k_absence_length_mismatch(self, tmp_path):
        seq = tmp_path / "seq"
        seq.mkdir()
        seq.joinpath("groundtruth.txt").write_text("10,10,20,20\n")
        seq.joinpath("absence.label").write_text("0\n1\n")
        with pytest.raises(EvalError, match="2 absence flags for 1"):
            load_annotations(tmp_path, "got10k")


class TestResultsFiles:
    def test_roundtrip_preserves_predictions(self, tmp_path):
        cfg = ScenarioConfig(seed=23, frames=30, occlusions=((10, 6),))
        report, results = run_scenario(cfg, PipelineConfig())
        path = tmp_path / "results.csv"
        write_results(path, results)
        rows = read_results(path)
        assert len(rows) == 30
        assert [s for _, _, _, _, s in rows] == [r.status for r in results]
        direct = predictions_from_results(results)
        loaded = predictions_from_file(path)
        for d, l in zip(direct, loaded):
            if d is None:
                assert l is None
            else:
                assert math.isclose(d.x, l.x, abs_tol=1e-5)

    def test_missing_header_rejected(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("0,1,2,3,4,5,6,tracked\n")
        with pytest.raises(EvalError, match="header"):
            read_results(p)

    def test_unknown_status_rejected(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("frame,x,y,w,h,confidence,rs,status\n0,1,2,3,4,0.5,0.5,gone\n")
        with pytest.raises(EvalError, match="unknown status"):
            read_results(p)


class TestExportOtb:
    def test_world_export_loads_back_identically(self, tmp_path):
        cfg = ScenarioConfig(seed=29, frames=25, occlusions=((8, 4),))
        world = generate(cfg)
        gts = target_boxes(world)
        export_otb_layout(tmp_path, "exported", cfg.arena, gts)
        (ann,) = load_annotations(tmp_path, "otb")
        assert ann.name == "exported"
        assert ann.dims == cfg.arena
        assert len(ann.gt_boxes) == len(gts)
        for orig, loaded in zip(gts, ann.gt_boxes):
            if orig is None:
                assert loaded is None
            else:
                assert math.isclose(orig.x, loaded.x, abs_tol=1e-5)
                assert math.isclose(orig.h, loaded.h, abs_tol=1e-5)


class TestReportFiles:
    def test_report_files_deterministic(self, tmp_path):
        report = compute_metrics([BBox(0, 0, 10, 10)], annot([BBox(1, 1, 10, 10)]))
        write_report(tmp_path / "out", report)
        first = (tmp_path / "out" / "success_curve.csv").read_bytes()
        write_report(tmp_path / "out", report)
        assert (tmp_path / "out" / "success_curve.csv").read_bytes() == first
        text = (tmp_path / "out" / "report.txt").read_text()
        assert "success_auc" in text and "precision_at_20" in text
        prec = (tmp_path / "out" / "precision_curve.csv").read_text().splitlines()
        assert len(prec) == 1 + len(PRECISION_THRESHOLDS)


class TestAblationWiring:
    def test_mismatched_ladder_is_valid_but_frozen(self):
        taus = mismatched_constant_thresholds(6)
        assert len(taus) == 5
        assert all(a > b for a, b in zip(taus, taus[1:]))
        assert all(t >= 0.5 for t in taus)
        cfg = default_bag_config(6)
        assert MISMATCH_CBAR == 0.55

    def test_config_builder_modes(self):
        adaptive = ablation_pipeline_config(6, "adaptive", True)
        constant = ablation_pipeline_config(6, "constant", False)
        assert adaptive.bag.threshold_mode == "adaptive"
        assert constant.bag.threshold_mode == "constant"
        assert constant.use_selector is False
        single = ablation_pipeline_config(1, "constant", True)
        assert single.bag.constant_thresholds == ()
        with pytest.raises(EvalError):
            ablation_pipeline_config(6, "frozen", True)

    def test_small_grid_produces_labelled_cells(self):
        scen = ScenarioConfig(seed=31, frames=12, name="tiny")
        cells = run_ablation(
            [scen], ns=(1, 2), threshold_modes=("adaptive",),
            noise_amplitudes=(0.05,), include_l1_mean_row=False,
        )
        assert len(cells) == 4
        labels = {c.label for c in cells}
        assert labels == {
            "n1_adaptive_sel_on", "n1_adaptive_sel_off",
            "n2_adaptive_sel_on", "n2_adaptive_sel_off",
        }
        for c in cells:
            assert c.error is None
            assert c.per_scenario[0][0] == "tiny"
            assert 0.0 <= c.mean_success_auc <= 1.0

    def test_noise_axis_and_extra_distance_mode_row(self):
        scen = ScenarioConfig(seed=31, frames=12, name="tiny")
        cells = run_ablation(
            [scen], ns=(6,), threshold_modes=("adaptive",), selector_states=(True,),
        )
        assert [c.label for c in cells] == [
            "n6_adaptive_sel_on",
            "n6_adaptive_sel_on_noise0.15",
            "n6_adaptive_sel_on_l1_mean",
        ]
        assert cells[1].noise_amplitude == 0.15
        assert cells[2].de_mode == "l1_mean"
        assert all(c.error is None for c in cells)

    def test_failing_cell_is_reported_not_raised(self):
        scen = ScenarioConfig(seed=31, frames=12)
        cells = run_ablation(
            [scen], ns=(0,), threshold_modes=("adaptive",), selector_states=(True,),
            noise_amplitudes=(0.05,), include_l1_mean_row=False,
        )
        assert len(cells) == 1
        assert cells[0].error is not None
        assert math.isnan(cells[0].mean_success_auc)

    def test_table_writer_emits_one_row_per_cell(self, tmp_path):
        scen = ScenarioConfig(seed=31, frames=12, name="tiny")
        cells = run_ablation(
            [scen], ns=(1,), threshold_modes=("adaptive",),
            noise_amplitudes=(0.05,), include_l1_mean_row=False,
        )
        path = tmp_path / "table.csv"
        write_ablation_table(path, cells)
        lines = path.read_text().splitlines()
        assert len(lines) == 1 + len(cells)
        assert lines[0].startswith("config,mean_success_auc")
