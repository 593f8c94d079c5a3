"""Command-line entry points.

Subcommands: simulate, train-combinet, track, eval, ablate. Every command
accepts --config, --seed, and --out; runs are reproducible, so re-running
with the same inputs writes byte-identical files.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import combinet, config as cfgmod, evaluation
from .evaluation import EvalError
from .pipeline import TRACKED
from .synthetic import generate, motion_sequences, scenario_suite, target_boxes

logger = logging.getLogger(__name__)

SCENARIO_SIDECAR = "scenario.cfg"
MODEL_FILENAME = "combinet.json"


class CliError(Exception):
    """User-facing failure; message printed, nonzero exit."""


def _load_values(args) -> dict[str, str]:
    if args.config is None:
        return {}
    path = Path(args.config)
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    return cfgmod.load_config(path)


def _resolve_scenario(args, values):
    """Scenario precedence: --sim directory sidecar, --scenario name, config."""
    sim = getattr(args, "sim", None)
    name = getattr(args, "scenario", None)
    if sim is not None and name is not None:
        raise CliError("give either --sim or --scenario, not both")
    if sim is not None:
        sidecar = Path(sim) / SCENARIO_SIDECAR
        if not sidecar.exists():
            raise CliError(f"{sim} has no {SCENARIO_SIDECAR}; run simulate first")
        scen = cfgmod.scenario_config_from(cfgmod.load_config(sidecar))
    elif name is not None:
        suite = {s.name: s for s in scenario_suite()}
        if name not in suite:
            raise CliError(f"unknown scenario {name!r}; suite: {', '.join(suite)}")
        scen = suite[name]
    else:
        scen = cfgmod.scenario_config_from(values)
    if args.seed is not None:
        scen = dataclasses.replace(scen, seed=args.seed)
    return scen


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    values = _load_values(args)
    scen = _resolve_scenario(args, values)
    out = _out_dir(args)
    world = generate(scen)
    seq_dir = evaluation.export_otb_layout(out, scen.name, scen.arena, target_boxes(world))
    # the sidecar lets `track --sim` regenerate the identical world later
    cfgmod.save_config(seq_dir / SCENARIO_SIDECAR, cfgmod.scenario_config_to(scen))
    print(f"wrote {seq_dir} ({scen.frames} frames)")
    return 0


def cmd_train_combinet(args) -> int:
    values = _load_values(args)
    arch, train_cfg = cfgmod.combinet_configs_from(values)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    if args.corpus is not None:
        annotations = evaluation.load_annotations(args.corpus, args.layout)
        sequences = [(a.dims, list(a.gt_boxes)) for a in annotations]
    else:
        sequences = motion_sequences(args.sequences, seed=train_cfg.seed)
    dataset = combinet.load_windows(sequences)
    if not dataset:
        raise CliError("training corpus produced no usable 5-frame windows")
    result = combinet.train(dataset, train_cfg, arch)
    out = _out_dir(args)
    model_path = out / MODEL_FILENAME
    combinet.save_model(result.model, model_path)
    log_lines = ["epoch,loss,lr"] + [
        f"{i},{loss:.10f},{lr:.10f}"
        for i, (loss, lr) in enumerate(zip(result.epoch_losses, result.learning_rates))
    ]
    (out / "loss_log.csv").write_text("\n".join(log_lines) + "\n")
    print(
        f"trained on {len(dataset)} windows for {train_cfg.epochs} epochs; "
        f"final loss {result.epoch_losses[-1]:.6f}; wrote {model_path}"
    )
    return 0


def cmd_track(args) -> int:
    values = _load_values(args)
    scen = _resolve_scenario(args, values)
    pipe_cfg = cfgmod.pipeline_config_from(values)
    model = combinet.load_model(args.model) if args.model else None
    report, results = evaluation.run_scenario(scen, pipe_cfg, model)
    out = _out_dir(args)
    path = out / f"{scen.name}_results.csv"
    evaluation.write_results(path, results)
    tracked = sum(r.status == TRACKED for r in results)
    print(
        f"wrote {path} ({tracked}/{len(results)} frames tracked, "
        f"success_auc {report.success_auc:.4f})"
    )
    return 0


def _eval_single(results_path: Path, annotation, out: Path) -> evaluation.MetricReport:
    predicted = evaluation.predictions_from_file(results_path)
    report = evaluation.compute_metrics(predicted, annotation)
    evaluation.write_report(out / annotation.name, report)
    return report


def cmd_eval(args) -> int:
    annotations = evaluation.load_annotations(args.annotations, args.layout)
    if not annotations:
        raise CliError(f"no sequences found under {args.annotations}")
    out = _out_dir(args)
    results_path = Path(args.results)
    reports = []
    if results_path.is_dir():
        for ann in sorted(annotations, key=lambda a: a.name):
            per_seq = results_path / f"{ann.name}_results.csv"
            if not per_seq.exists():
                raise CliError(f"missing results file {per_seq} for sequence {ann.name}")
            reports.append(_eval_single(per_seq, ann, out))
    else:
        if args.sequence is not None:
            match = [a for a in annotations if a.name == args.sequence]
            if not match:
                raise CliError(f"no annotation named {args.sequence!r}")
            ann = match[0]
        elif len(annotations) == 1:
            ann = annotations[0]
        else:
            raise CliError(
                "multiple annotated sequences; pick one with --sequence "
                f"({', '.join(a.name for a in annotations)})"
            )
        reports.append(_eval_single(results_path, ann, out))
    agg = evaluation.aggregate_reports(reports)
    evaluation.write_report(out / "aggregate", agg)
    print(
        f"evaluated {len(reports)} sequence(s): "
        f"success_auc {agg.success_auc:.4f}, precision@20 {agg.precision_at_20:.4f}"
    )
    return 0


def _write_cell_curves(out: Path, cell) -> None:
    lines = ["curve,threshold,value"]
    for t, v in zip(evaluation.SUCCESS_THRESHOLDS, cell.mean_success_curve):
        lines.append(f"success,{t:.2f},{v:.6f}")
    for t, v in zip(evaluation.PRECISION_THRESHOLDS, cell.mean_precision_curve):
        lines.append(f"precision,{t},{v:.6f}")
    (out / f"curves_{cell.label}.csv").write_text("\n".join(lines) + "\n")


def cmd_ablate(args) -> int:
    values = _load_values(args)
    selector = cfgmod.selector_config_from(values) if args.config else None
    model = combinet.load_model(args.model) if args.model else None
    scenarios = scenario_suite()
    if args.quick:
        scenarios = [dataclasses.replace(s, frames=30,
                                         occlusions=((10, 8),) if s.occlusions else ())
                     for s in scenarios]
    cells = evaluation.run_ablation(scenarios, selector=selector, model=model)
    out = _out_dir(args)
    evaluation.write_ablation_table(out / "ablation_table.csv", cells)
    for cell in cells:
        if cell.error is None:
            _write_cell_curves(out, cell)
    failed = [c.label for c in cells if c.error]
    note = f", failed: {', '.join(failed)}" if failed else ""
    print(f"wrote {out / 'ablation_table.csv'} ({len(cells)} cells{note})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mttrack",
        description="Multi-template tracking framework: simulate, train, track, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="unified key-value config file")
        p.add_argument("--seed", type=int, help="override the relevant seed")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("simulate", help="generate a scenario and export OTB annotations")
    common(p)
    p.add_argument("--scenario", help="name from the built-in suite")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-combinet", help="train the path predictor")
    common(p)
    p.add_argument("--corpus", help="annotation directory to train on")
    p.add_argument("--layout", default="otb", choices=("otb", "got10k"))
    p.add_argument("--sequences", type=int, default=1100,
                   help="synthetic sequences when no corpus is given")
    p.set_defaults(func=cmd_train_combinet)

    p = sub.add_parser("track", help="run the tracker on a scenario")
    common(p)
    p.add_argument("--scenario", help="name from the built-in suite")
    p.add_argument("--sim", help="directory written by simulate")
    p.add_argument("--model", help="trained CombiNet model file")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score results against annotations")
    common(p)
    p.add_argument("--results", required=True,
                   help="results file, or directory of <name>_results.csv")
    p.add_argument("--annotations", required=True, help="annotation directory")
    p.add_argument("--layout", default="otb", choices=("otb", "got10k"))
    p.add_argument("--sequence", help="annotation name when results is a single file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the built-in suite ablation sweep")
    common(p)
    p.add_argument("--model", help="trained CombiNet model file")
    p.add_argument("--quick", action="store_true", help="30-frame scenarios for smoke runs")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, EvalError, cfgmod.ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
