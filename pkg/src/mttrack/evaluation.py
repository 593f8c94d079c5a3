"""Annotation ingestion, OTB-protocol metrics, results files, ablation runner.

Success counts frames whose IoU strictly exceeds each of 21 thresholds
(0.00..1.00, step 0.05) and summarizes by the curve mean; precision counts
center errors within each of 51 pixel thresholds (0..50) with the 20 px point
as the headline. A lost prediction and an absent ground-truth frame that
agree are scored as a correct frame (effective IoU 1, distance 0); a
disagreement scores IoU 0 and infinite distance.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import BBox, ImageDims, center_distance, iou
from .pipeline import LOST, TRACKED, FrameResult, PipelineConfig, run_sequence
from .selector import SelectorConfig
from .synthetic import ScenarioConfig, generate, scenario_suite, scorer_for, target_boxes
from .template_bag import compute_thresholds, default_bag_config

logger = logging.getLogger(__name__)

SUCCESS_THRESHOLDS = tuple(round(0.05 * i, 2) for i in range(21))
PRECISION_THRESHOLDS = tuple(range(51))
PRECISION_HEADLINE_PX = 20

# running confidence assumed by the deliberately mismatched CONSTANT ladder
MISMATCH_CBAR = 0.55


class EvalError(ValueError):
    """Bad annotations, mismatched lengths, or malformed files."""


@dataclass(frozen=True)
class SequenceAnnotation:
    """Ground truth for one sequence; absent frames hold None."""

    name: str
    dims: ImageDims
    gt_boxes: tuple[BBox | None, ...]

    def __post_init__(self):
        if not self.gt_boxes:
            raise EvalError(f"sequence {self.name!r} has no frames")


@dataclass(frozen=True)
class MetricReport:
    name: str
    n_frames: int
    success_curve: tuple[float, ...]
    success_auc: float
    precision_curve: tuple[float, ...]
    precision_at_20: float

    def __post_init__(self):
        if len(self.success_curve) != len(SUCCESS_THRESHOLDS):
            raise EvalError(f"success curve needs {len(SUCCESS_THRESHOLDS)} points")
        if len(self.precision_curve) != len(PRECISION_THRESHOLDS):
            raise EvalError(f"precision curve needs {len(PRECISION_THRESHOLDS)} points")
        for v in self.success_curve + self.precision_curve:
            if not (0.0 <= v <= 1.0):
                raise EvalError(f"curve value {v} outside [0, 1]")
        if any(a < b for a, b in zip(self.success_curve, self.success_curve[1:])):
            raise EvalError("success curve must be non-increasing")
        if any(a > b for a, b in zip(self.precision_curve, self.precision_curve[1:])):
            raise EvalError("precision curve must be non-decreasing")


def _parse_box_line(line: str, where: str) -> BBox | None:
    parts = [p for p in re.split(r"[,\s]+", line.strip()) if p]
    if len(parts) != 4:
        raise EvalError(f"{where}: expected 4 fields, got {len(parts)}: {line.strip()!r}")
    try:
        x, y, w, h = (float(p) for p in parts)
    except ValueError as exc:
        raise EvalError(f"{where}: {exc}") from None
    if any(math.isnan(v) for v in (x, y, w, h)) or w <= 0 or h <= 0:
        return None
    return BBox(x, y, w, h)


def _infer_dims(boxes: Sequence[BBox | None], dims_file: Path) -> ImageDims:
    if dims_file.exists():
        parts = dims_file.read_text().split()
        if len(parts) != 2:
            raise EvalError(f"{dims_file}: expected 'width height'")
        return ImageDims(int(parts[0]), int(parts[1]))
    # no dims file: smallest frame that contains every annotated box
    xs = [b.x + b.w for b in boxes if b is not None]
    ys = [b.y + b.h for b in boxes if b is not None]
    if not xs:
        raise EvalError(f"{dims_file.parent}: all frames absent and no dims file")
    return ImageDims(int(math.ceil(max(xs))), int(math.ceil(max(ys))))


def load_annotations(path: str | Path, layout: str = "otb") -> list[SequenceAnnotation]:
    """Read every sequence under an annotation directory.

    OTB layout: <root>/<seq>/groundtruth_rect.txt, one 'x,y,w,h' line per
    frame (comma or whitespace separated). GOT-10k layout: groundtruth.txt
    plus optional absence.label (1 = absent). Either layout may add a
    dims.txt ('width height'); without one, dims are inferred from box
    extents. NaN or non-positive-size lines mean the target is absent.
    """
    if layout not in ("otb", "got10k"):
        raise EvalError(f"unknown layout {layout!r}")
    root = Path(path)
    if not root.is_dir():
        raise EvalError(f"annotation directory {root} does not exist")
    gt_name = "groundtruth_rect.txt" if layout == "otb" else "groundtruth.txt"
    out = []
    for seq_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        gt_file = seq_dir / gt_name
        if not gt_file.exists():
            logger.warning("skipping %s: no %s", seq_dir.name, gt_name)
            continue
        boxes: list[BBox | None] = []
        for i, line in enumerate(gt_file.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            boxes.append(_parse_box_line(line, f"{gt_file}:{i}"))
        if layout == "got10k":
            absence = seq_dir / "absence.label"
            if absence.exists():
                flags = [s for s in absence.read_text().split() if s]
                if len(flags) != len(boxes):
                    raise EvalError(
                        f"{absence}: {len(flags)} absence flags for {len(boxes)} boxes"
                    )
                boxes = [None if f == "1" else b for b, f in zip(boxes, flags)]
        dims = _infer_dims(boxes, seq_dir / "dims.txt")
        out.append(SequenceAnnotation(seq_dir.name, dims, tuple(boxes)))
    if not out:
        logger.warning("no sequences found under %s", root)
    return out


def compute_metrics(predicted: Sequence[BBox | None], gt: SequenceAnnotation) -> MetricReport:
    """Score one sequence's predictions against its annotation."""
    if len(predicted) != len(gt.gt_boxes):
        raise EvalError(
            f"{gt.name}: {len(predicted)} predictions for {len(gt.gt_boxes)} annotated frames"
        )
    ious = np.empty(len(predicted))
    dists = np.empty(len(predicted))
    for i, (p, g) in enumerate(zip(predicted, gt.gt_boxes)):
        if p is None and g is None:
            ious[i], dists[i] = 1.0, 0.0
        elif p is None or g is None:
            ious[i], dists[i] = 0.0, math.inf
        else:
            ious[i], dists[i] = iou(p, g), center_distance(p, g)
    success = tuple(float(np.mean(ious > t)) for t in SUCCESS_THRESHOLDS)
    precision = tuple(float(np.mean(dists <= t)) for t in PRECISION_THRESHOLDS)
    return MetricReport(
        name=gt.name,
        n_frames=len(predicted),
        success_curve=success,
        success_auc=float(np.mean(success)),
        precision_curve=precision,
        precision_at_20=precision[PRECISION_HEADLINE_PX],
    )


def aggregate_reports(reports: Sequence[MetricReport], name: str = "mean") -> MetricReport:
    """Average per-sequence curves with equal sequence weight."""
    if not reports:
        raise EvalError("nothing to aggregate")
    success = tuple(float(np.mean([r.success_curve[i] for r in reports]))
                    for i in range(len(SUCCESS_THRESHOLDS)))
    precision = tuple(float(np.mean([r.precision_curve[i] for r in reports]))
                      for i in range(len(PRECISION_THRESHOLDS)))
    return MetricReport(
        name=name,
        n_frames=sum(r.n_frames for r in reports),
        success_curve=success,
        success_auc=float(np.mean(success)),
        precision_curve=precision,
        precision_at_20=precision[PRECISION_HEADLINE_PX],
    )


def predictions_from_results(results: Sequence[FrameResult]) -> list[BBox | None]:
    """Lost frames claim absence; tracked frames claim their box."""
    return [r.box if r.status == TRACKED else None for r in results]


# -- results and report files -------------------------------------------------

RESULTS_HEADER = "frame,x,y,w,h,confidence,rs,status"


def write_results(path: str | Path, results: Sequence[FrameResult]) -> None:
    lines = [RESULTS_HEADER]
    for r in results:
        b = r.box
        lines.append(
            f"{r.frame_index},{b.x:.6f},{b.y:.6f},{b.w:.6f},{b.h:.6f},"
            f"{r.confidence:.6f},{r.rs:.6f},{r.status}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_results(path: str | Path) -> list[tuple[int, BBox, float, float, str]]:
    rows = []
    text = Path(path).read_text().splitlines()
    if not text or text[0] != RESULTS_HEADER:
        raise EvalError(f"{path}: missing results header")
    for i, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise EvalError(f"{path}:{i}: expected 8 fields, got {len(parts)}")
        frame = int(parts[0])
        box = BBox(*(float(p) for p in parts[1:5]))
        status = parts[7]
        if status not in (TRACKED, LOST):
            raise EvalError(f"{path}:{i}: unknown status {status!r}")
        rows.append((frame, box, float(parts[5]), float(parts[6]), status))
    return rows


def predictions_from_file(path: str | Path) -> list[BBox | None]:
    return [box if status == TRACKED else None for _, box, _, _, status in read_results(path)]


def write_report(out_dir: str | Path, report: MetricReport) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kv = [
        f"name {report.name}",
        f"n_frames {report.n_frames}",
        f"success_auc {report.success_auc:.6f}",
        f"precision_at_20 {report.precision_at_20:.6f}",
    ]
    (out / "report.txt").write_text("\n".join(kv) + "\n")
    succ = ["threshold,success"] + [
        f"{t:.2f},{v:.6f}" for t, v in zip(SUCCESS_THRESHOLDS, report.success_curve)
    ]
    (out / "success_curve.csv").write_text("\n".join(succ) + "\n")
    prec = ["threshold_px,precision"] + [
        f"{t},{v:.6f}" for t, v in zip(PRECISION_THRESHOLDS, report.precision_curve)
    ]
    (out / "precision_curve.csv").write_text("\n".join(prec) + "\n")


def export_otb_layout(
    root: str | Path, name: str, dims: ImageDims, boxes: Sequence[BBox | None]
) -> Path:
    """Write one sequence in the OTB directory layout; absent frames as NaN."""
    seq_dir = Path(root) / name
    seq_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for b in boxes:
        if b is None:
            lines.append("NaN,NaN,NaN,NaN")
        else:
            lines.append(f"{b.x:.6f},{b.y:.6f},{b.w:.6f},{b.h:.6f}")
    (seq_dir / "groundtruth_rect.txt").write_text("\n".join(lines) + "\n")
    (seq_dir / "dims.txt").write_text(f"{dims.width} {dims.height}\n")
    return seq_dir


# -- ablation -----------------------------------------------------------------


def mismatched_constant_thresholds(n: int) -> tuple[float, ...]:
    """Fixed ladder frozen at a low running confidence.

    Evaluating the adaptive formulas once at c_bar=0.55 and never again is
    the 'constant thresholds' comparison point: plausible numbers, wrong for
    most of a healthy run where the running confidence sits far higher.
    """
    cfg = default_bag_config(n)
    taus, _ = compute_thresholds(cfg, MISMATCH_CBAR)
    return tuple(taus[1:])


def ablation_pipeline_config(
    n: int, threshold_mode: str, use_selector: bool, selector: SelectorConfig | None = None
) -> PipelineConfig:
    if threshold_mode == "adaptive":
        bag = default_bag_config(n)
    elif threshold_mode == "constant":
        bag = default_bag_config(
            n,
            threshold_mode="constant",
            constant_thresholds=mismatched_constant_thresholds(n) if n > 1 else (),
        )
    else:
        raise EvalError(f"unknown threshold mode {threshold_mode!r}")
    return PipelineConfig(
        bag=bag,
        selector=selector if selector is not None else SelectorConfig(),
        use_selector=use_selector,
    )


@dataclass(frozen=True)
class AblationCell:
    n: int
    threshold_mode: str
    use_selector: bool
    per_scenario: tuple[tuple[str, float, float], ...]
    mean_success_auc: float
    mean_precision: float
    noise_amplitude: float = 0.05
    de_mode: str = "sum"
    mean_success_curve: tuple[float, ...] = ()
    mean_precision_curve: tuple[float, ...] = ()
    error: str | None = None

    @property
    def label(self) -> str:
        parts = [
            f"n{self.n}",
            self.threshold_mode,
            "sel_on" if self.use_selector else "sel_off",
        ]
        if self.noise_amplitude != 0.05:
            parts.append(f"noise{self.noise_amplitude:g}")
        if self.de_mode != "sum":
            parts.append(self.de_mode)
        return "_".join(parts)


def run_scenario(
    cfg: ScenarioConfig, pipe_cfg: PipelineConfig, model=None
) -> tuple[MetricReport, list[FrameResult]]:
    """Track one scenario against its own ground truth."""
    world = generate(cfg)
    scorer = scorer_for(cfg, world)
    gts = target_boxes(world)
    if gts[0] is None:
        raise EvalError(f"{cfg.name}: target occluded on the first frame")
    results = run_sequence(scorer, world, gts[0], cfg.arena, pipe_cfg, model)
    annotation = SequenceAnnotation(cfg.name, cfg.arena, tuple(gts))
    return compute_metrics(predictions_from_results(results), annotation), results


def run_suite(
    scenarios: Sequence[ScenarioConfig], pipe_cfg: PipelineConfig, model=None
) -> list[MetricReport]:
    """Run every scenario; sequences execute in parallel, results keep order."""
    with ThreadPoolExecutor() as pool:
        reports = list(pool.map(lambda s: run_scenario(s, pipe_cfg, model)[0], scenarios))
    return reports


def _ablation_cell(
    scenarios, n, mode, use_sel, noise, de_mode, selector, model
) -> AblationCell:
    meta = dict(
        n=n, threshold_mode=mode, use_selector=use_sel,
        noise_amplitude=noise, de_mode=de_mode,
    )
    try:
        sel_cfg = selector if selector is not None else SelectorConfig()
        if de_mode != sel_cfg.de_mode:
            sel_cfg = dataclasses.replace(sel_cfg, de_mode=de_mode)
        pipe_cfg = ablation_pipeline_config(n, mode, use_sel, sel_cfg)
        scens = [dataclasses.replace(s, noise_amplitude=noise) for s in scenarios]
        reports = run_suite(scens, pipe_cfg, model)
        rows = [
            (s.name, r.success_auc, r.precision_at_20) for s, r in zip(scens, reports)
        ]
        agg = aggregate_reports(reports)
        return AblationCell(
            per_scenario=tuple(rows),
            mean_success_auc=float(np.mean([r[1] for r in rows])),
            mean_precision=float(np.mean([r[2] for r in rows])),
            mean_success_curve=agg.success_curve,
            mean_precision_curve=agg.precision_curve,
            **meta,
        )
    except Exception as exc:
        return AblationCell(
            per_scenario=(),
            mean_success_auc=float("nan"),
            mean_precision=float("nan"),
            error=str(exc),
            **meta,
        )


def run_ablation(
    scenarios: Sequence[ScenarioConfig] | None = None,
    ns: Sequence[int] = (1, 6, 10),
    threshold_modes: Sequence[str] = ("adaptive", "constant"),
    selector_states: Sequence[bool] = (True, False),
    noise_amplitudes: Sequence[float] = (0.05, 0.15),
    include_l1_mean_row: bool = True,
    selector: SelectorConfig | None = None,
    model=None,
) -> list[AblationCell]:
    """Sweep template count x threshold mode x selector state x scorer noise.

    The scorer-noise axis stands in for a backbone-quality axis. One extra
    row runs the headline configuration with the per-axis distance error
    instead of the default summed form. A failing cell is reported with its
    error instead of aborting the sweep.
    """
    if scenarios is None:
        scenarios = scenario_suite()
    if not scenarios:
        raise EvalError("no scenarios to ablate")
    cells = []
    for noise in noise_amplitudes:
        for n in ns:
            for mode in threshold_modes:
                for use_sel in selector_states:
                    cells.append(
                        _ablation_cell(
                            scenarios, n, mode, use_sel, noise, "sum", selector, model
                        )
                    )
    if include_l1_mean_row:
        cells.append(
            _ablation_cell(
                scenarios, 6, "adaptive", True, noise_amplitudes[0], "l1_mean",
                selector, model,
            )
        )
    return cells


def write_ablation_table(path: str | Path, cells: Sequence[AblationCell]) -> None:
    if not cells:
        raise EvalError("no ablation cells to write")
    names = [name for name, _, _ in cells[0].per_scenario]
    header = ["config", "mean_success_auc", "mean_precision_at_20"]
    header += [f"auc_{n}" for n in names] + [f"p20_{n}" for n in names] + ["error"]
    lines = [",".join(header)]
    for c in cells:
        row = [c.label, f"{c.mean_success_auc:.6f}", f"{c.mean_precision:.6f}"]
        aucs = {name: auc for name, auc, _ in c.per_scenario}
        p20s = {name: p for name, _, p in c.per_scenario}
        row += [f"{aucs.get(n, float('nan')):.6f}" for n in names]
        row += [f"{p20s.get(n, float('nan')):.6f}" for n in names]
        row.append(c.error or "")
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")
