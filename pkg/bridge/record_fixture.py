#!/usr/bin/env python3
"""Record the bridge equivalence fixture from a native tracking run.

Runs the in-process pipeline on a frozen synthetic scenario, capturing for
every frame exactly what a host would send over the bridge (per-slot score
grids, the shared per-cell box grid, frame dims) and what the native step
decided (status, selected candidate, reliability, slot update). The client
test suite replays the inputs through the server and demands matching
decisions, so this recording defines the equivalence contract.

The scenario seed is frozen: the checked-in fixture bytes are the reference,
and re-running this script must reproduce them. A small path-predictor model
is trained here too (deterministically) so model inference runs through the
bridge rather than the short-history fallback.

Usage:
  python3 record_fixture.py            regenerate fixture + model, then verify
  python3 record_fixture.py --scan A B try scenario seeds in [A, B) and report
                                       which produce a rich enough recording
"""
from __future__ import annotations

import argparse
import base64
import json
import subprocess
import sys
from pathlib import Path

BRIDGE_DIR = Path(__file__).resolve().parent
sys.path.insert(0, str(BRIDGE_DIR.parent / "src"))

import numpy as np

from mttrack import pipeline
from mttrack.combinet import ArchConfig, CombiNetModel, TrainConfig, load_windows, save_model, train
from mttrack.config import dump_config, pipeline_config_to
from mttrack.pipeline import LOST, TRACKED, PipelineConfig
from mttrack.selector import SelectorConfig
from mttrack.synthetic import (
    MockScorer,
    ScenarioConfig,
    generate,
    motion_sequences,
    target_boxes,
)

GRID_SIZE = 16  # coarser than the default scorer grid to keep the fixture small
FRAMES = 50
SCENARIO_SEED = 4300
FIXTURE_DIR = BRIDGE_DIR / "test" / "fixtures"
MODEL_FILE = "combinet.json"
FIXTURE_FILE = "fixture.json"
MODEL_PLACEHOLDER = "__MODEL_PATH__"

# richness floors: a recording that never loses the target or never updates a
# slot would leave whole decision branches unexercised
MIN_TRACKED = 38
MIN_LOST = 2
MIN_UPDATES = 5
MIN_UPDATED_SLOTS = 2


def _b64(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def train_model() -> CombiNetModel:
    samples = load_windows(motion_sequences(60, frames=24, seed=21))
    arch = ArchConfig(conv_channels=4, kernel_size=3, n_outputs=2)
    result = train(samples, TrainConfig(epochs=40, batch_size=256, seed=3), arch)
    return result.model


def scenario(seed: int) -> ScenarioConfig:
    # moderate distractor similarity: strong enough to shape the maps, weak
    # enough that the occlusion window actually produces lost frames
    return ScenarioConfig(
        name="bridge_fixture",
        seed=seed,
        frames=FRAMES,
        motion="sine_weave",
        speed=2.0,
        n_distractors=3,
        distractor_similarity=0.4,
        appearance_drift_rate=0.01,
        occlusions=((22, 6),),
    )


def record(seed: int, model: CombiNetModel) -> dict:
    """Native run with recorded inputs; returns the full fixture document."""
    cfg = scenario(seed)
    world = generate(cfg)
    scorer = MockScorer(
        world,
        cfg.arena,
        noise_amplitude=cfg.noise_amplitude,
        noise_seed=cfg.seed,
        grid_size=GRID_SIZE,
    )
    init_box = target_boxes(world)[0]
    assert init_box is not None, "target must be visible on frame 0"
    # gate high enough that 0.4-similar distractors cannot carry the occlusion
    # window; also exercises a non-default selector config through the bridge
    pipe_cfg = PipelineConfig(selector=SelectorConfig(tau_select=0.55))
    state = pipeline.init(scorer, world[0], init_box, cfg.arena, pipe_cfg, model)
    frames = []
    counts = {"tracked": 0, "lost": 0, "updates": 0}
    updated_slots: set[int] = set()
    reacquired = False
    for wf in world:
        # scoring is pure, so these grids are bitwise what step() consumes
        maps = [scorer.score(wf, t) for t in state.bag.templates]
        result = pipeline.step(state, wf)
        frames.append(
            {
                "maps": {
                    "shape": [len(maps), GRID_SIZE, GRID_SIZE],
                    "data": _b64(np.stack([m.scores for m in maps])),
                },
                "boxes": {
                    "shape": [GRID_SIZE, GRID_SIZE, 4],
                    "data": _b64(maps[0].boxes),
                },
                "expected": {
                    "frame_index": result.frame_index,
                    "status": result.status,
                    "box": list(result.box.as_tuple()),
                    "confidence": result.confidence,
                    "rs": result.rs,
                    "selected_index": result.selected_index,
                    "updated_slot": result.updated_slot,
                },
            }
        )
        if result.status == TRACKED:
            counts["tracked"] += 1
            if counts["lost"]:
                reacquired = True
        else:
            counts["lost"] += 1
        if result.updated_slot is not None:
            counts["updates"] += 1
            updated_slots.add(result.updated_slot)

    config_values = pipeline_config_to(pipe_cfg)
    config_values["bridge.init_box"] = ",".join(repr(float(v)) for v in init_box.as_tuple())
    config_values["bridge.model"] = MODEL_PLACEHOLDER
    return {
        "config": dump_config(config_values),
        "model_file": MODEL_FILE,
        "dims": [cfg.arena.width, cfg.arena.height],
        "slots": pipe_cfg.bag.n,
        "counts": {
            **counts,
            "updated_slots": sorted(updated_slots),
            "reacquired": reacquired,
        },
        "scenario_seed": seed,
        "frames": frames,
    }


def rich_enough(counts: dict) -> bool:
    return (
        counts["tracked"] >= MIN_TRACKED
        and counts["lost"] >= MIN_LOST
        and counts["updates"] >= MIN_UPDATES
        and len(counts["updated_slots"]) >= MIN_UPDATED_SLOTS
        and counts["reacquired"]
    )


def verify(fixture: dict, model_path: Path) -> None:
    """Replay the recording through the server; demand bitwise-equal answers.

    Two interleaved sessions run side by side so cross-session leakage of any
    state would surface as a mismatch.
    """
    config = fixture["config"].replace(MODEL_PLACEHOLDER, str(model_path))
    proc = subprocess.Popen(
        [sys.executable, str(BRIDGE_DIR / "server.py")],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        text=True,
    )
    rid = 0

    def call(req: dict) -> dict:
        nonlocal rid
        rid += 1
        req["id"] = rid
        assert proc.stdin is not None and proc.stdout is not None
        proc.stdin.write(json.dumps(req) + "\n")
        proc.stdin.flush()
        resp = json.loads(proc.stdout.readline())
        assert resp["id"] == rid, f"response id {resp['id']} for request {rid}"
        if not resp["ok"]:
            raise AssertionError(f"server error: {resp['error']}")
        return resp

    try:
        sessions = [call({"op": "open", "config": config})["session"] for _ in range(2)]
        dims = fixture["dims"]
        for i, frame in enumerate(fixture["frames"]):
            exp = frame["expected"]
            for sid in sessions:
                decision = call(
                    {
                        "op": "step",
                        "session": sid,
                        "score_maps": frame["maps"],
                        "candidate_boxes": frame["boxes"],
                        "frame_dims": dims,
                    }
                )["decision"]
                got = {
                    "frame_index": decision["frame_index"],
                    "status": decision["status"],
                    "box": decision["box"],
                    "confidence": decision["confidence"],
                    "rs": decision["rs"],
                    "selected_index": decision["selected_index"],
                    "updated_slot": (
                        decision["slot_update"]["slot"] if decision["slot_update"] else None
                    ),
                }
                if got != exp:
                    raise AssertionError(
                        f"frame {i} session {sid} mismatch:\n  got      {got}\n  expected {exp}"
                    )
        for sid in sessions:
            call({"op": "close", "session": sid})
        stats = call({"op": "stats"})["stats"]
        assert stats["open_sessions"] == 0, stats
        call({"op": "shutdown"})
    finally:
        proc.stdin.close()
        proc.wait(timeout=10)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scan", nargs=2, type=int, metavar=("A", "B"))
    args = parser.parse_args()

    model = train_model()
    if args.scan:
        lo, hi = args.scan
        for seed in range(lo, hi):
            counts = record(seed, model)["counts"]
            mark = "OK " if rich_enough(counts) else "   "
            print(f"{mark}seed {seed}: {counts}")
        return 0

    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    model_path = FIXTURE_DIR / MODEL_FILE
    save_model(model, model_path)
    fixture = record(SCENARIO_SEED, model)
    if not rich_enough(fixture["counts"]):
        raise SystemExit(f"seed {SCENARIO_SEED} no longer rich enough: {fixture['counts']}")
    (FIXTURE_DIR / FIXTURE_FILE).write_text(json.dumps(fixture))
    verify(fixture, model_path)
    size = (FIXTURE_DIR / FIXTURE_FILE).stat().st_size
    print(f"seed {SCENARIO_SEED}: {fixture['counts']}")
    print(f"wrote {FIXTURE_DIR / FIXTURE_FILE} ({size / 1e6:.2f} MB), verified against the server")
    return 0


if __name__ == "__main__":
    sys.exit(main())
