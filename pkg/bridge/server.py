#!/usr/bin/env python3
"""Line-delimited JSON server exposing tracking decisions to a host process.

The host owns the appearance model: it correlates its own template embeddings
against each frame and sends the resulting score grids plus per-cell boxes
here. This process runs the decision layer on those inputs (fusion, candidate
extraction, path prediction, reliability selection, template-bag bookkeeping)
and answers with the selected box and, when a bag slot accepts the frame, an
instruction naming the slot whose embedding the host must replace. Embeddings
never cross the boundary in either direction.

Protocol: one JSON object per line on stdin, one JSON response per line on
stdout, in request order, `id` echoed back. Arrays travel as base64
little-endian float64 with explicit shape metadata. A failed request answers
`ok: false` with a kind and message and the loop continues; only EOF or a
`shutdown` request ends the process.

Operations:
  open     {"op": "open", "config": "<key = value lines>"}
  step     {"op": "step", "session": N, "score_maps": {"shape": [n, H, W], "data": b64},
            "candidate_boxes": {"shape": [H, W, 4] or [n, H, W, 4], "data": b64},
            "frame_dims": [width, height]}
  close    {"op": "close", "session": N}
  stats    {"op": "stats"}
  shutdown {"op": "shutdown"}

The config document uses the library's flat key=value format (bag.*,
selector.*, fusion.* sections, all optional) plus a bridge section:
  bridge.init_box   required, "x,y,w,h" pixels: the first-frame target box
  bridge.model      optional path to a saved path-predictor model

score_maps[i] is the host's correlation of bag slot i+1 (slots are 1-based).
A slot_update answer {"slot": s, "box": [...]} means: re-extract the
embedding at `box` in the current frame and use it to produce score_maps[s-1]
from the next step on.
"""
from __future__ import annotations

import base64
import binascii
import json
import math
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path

if __package__ in (None, ""):
    sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from mttrack import config as cfgmod
from mttrack import pipeline
from mttrack.combinet import CombiNetModel, load_model
from mttrack.fusion import ScoreMap
from mttrack.geometry import BBox, ImageDims
from mttrack.pipeline import PipelineConfig, TrackState


class RequestError(Exception):
    """Base for failures reported to the host instead of raised past the loop."""

    kind = "protocol"


class ProtocolError(RequestError):
    kind = "protocol"


class SessionError(RequestError):
    kind = "session"


class ShapeError(RequestError):
    kind = "shape"


class ModelError(RequestError):
    kind = "model"


class _ExternalScorer:
    """Replays host-supplied score maps in slot order.

    The pipeline scores bag slots in list order, so a per-step cursor maps
    the i-th score() call to the i-th supplied grid. make_template returns an
    opaque marker: the host keeps the real embeddings and is told through
    slot_update which one to swap.
    """

    def __init__(self):
        self._maps: list[ScoreMap] = []
        self._cursor = 0

    def load(self, maps: list[ScoreMap]) -> None:
        self._maps = maps
        self._cursor = 0

    def make_template(self, frame, box: BBox):
        return ("host-embedding", box.as_tuple())

    def score(self, frame, template) -> ScoreMap:
        m = self._maps[self._cursor]
        self._cursor += 1
        return m


@dataclass
class _Session:
    config: PipelineConfig
    model: CombiNetModel | None
    init_box: BBox
    scorer: _ExternalScorer = field(default_factory=_ExternalScorer)
    state: TrackState | None = None  # created on the first step, which carries dims
    steps: int = 0


def _decode_array(spec, name: str, allowed_ndims: tuple[int, ...]) -> np.ndarray:
    if not isinstance(spec, dict) or "shape" not in spec or "data" not in spec:
        raise ProtocolError(f"{name} must be an object with 'shape' and 'data'")
    shape = spec["shape"]
    if (
        not isinstance(shape, list)
        or len(shape) not in allowed_ndims
        or not all(isinstance(d, int) and d > 0 for d in shape)
    ):
        dims = " or ".join(f"{n}-d" for n in allowed_ndims)
        raise ShapeError(f"{name} shape must be {dims} with positive sizes, got {shape}")
    if not isinstance(spec["data"], str):
        raise ProtocolError(f"{name} data must be a base64 string")
    try:
        raw = base64.b64decode(spec["data"], validate=True)
    except binascii.Error as exc:
        raise ProtocolError(f"{name} data is not valid base64: {exc}") from None
    count = math.prod(shape)
    if len(raw) != count * 8:
        raise ShapeError(
            f"{name} carries {len(raw)} bytes but shape {shape} needs {count * 8}"
        )
    return np.frombuffer(raw, dtype="<f8").reshape(shape)


def _decode_dims(spec) -> ImageDims:
    if (
        not isinstance(spec, list)
        or len(spec) != 2
        or not all(isinstance(v, (int, float)) and float(v).is_integer() for v in spec)
    ):
        raise ShapeError(f"frame_dims must be [width, height] integers, got {spec!r}")
    return ImageDims(int(spec[0]), int(spec[1]))


def _parse_init_box(raw: str) -> BBox:
    try:
        parts = [float(p) for p in raw.split(",")]
        if len(parts) != 4:
            raise ValueError(f"needs 4 comma-separated values, got {len(parts)}")
        return BBox(*parts)
    except ValueError as exc:
        raise cfgmod.ConfigError(f"bridge.init_box: {exc}") from None


_BRIDGE_KEYS = {"init_box", "model"}


class BridgeServer:
    def __init__(self):
        self._sessions: dict[int, _Session] = {}
        self._next_id = 1
        self._total_opened = 0
        self._peak_sessions = 0
        self._total_steps = 0
        self.shutting_down = False

    # -- operations ------------------------------------------------------

    def _open(self, req: dict) -> dict:
        text = req.get("config")
        if not isinstance(text, str):
            raise ProtocolError("open needs a 'config' string")
        values = cfgmod.parse_config(text)
        bridge_vals: dict[str, str] = {}
        for key in list(values):
            section, _, name = key.partition(".")
            if section == "bridge":
                bridge_vals[name] = values.pop(key)
        unknown = sorted(set(bridge_vals) - _BRIDGE_KEYS)
        if unknown:
            raise cfgmod.ConfigError(
                f"unknown key bridge.{unknown[0]} (known: {sorted(_BRIDGE_KEYS)})"
            )
        if "init_box" not in bridge_vals:
            raise cfgmod.ConfigError("bridge.init_box is required ('x,y,w,h' in pixels)")
        init_box = _parse_init_box(bridge_vals["init_box"])
        config = cfgmod.pipeline_config_from(values)
        model = None
        if "model" in bridge_vals:
            path = bridge_vals["model"]
            try:
                model = load_model(path)
            except OSError as exc:
                raise ModelError(f"cannot load model {path}: {exc}") from None
            except ValueError as exc:
                raise ModelError(f"bad model file {path}: {exc}") from None
        sid = self._next_id
        self._next_id += 1
        self._sessions[sid] = _Session(config=config, model=model, init_box=init_box)
        self._total_opened += 1
        self._peak_sessions = max(self._peak_sessions, len(self._sessions))
        return {"session": sid, "slots": config.bag.n}

    def _get_session(self, req: dict) -> tuple[int, _Session]:
        sid = req.get("session")
        if not isinstance(sid, int):
            raise ProtocolError("request needs an integer 'session'")
        sess = self._sessions.get(sid)
        if sess is None:
            raise SessionError(f"session {sid} is unknown or closed")
        return sid, sess

    def _step(self, req: dict) -> dict:
        _, sess = self._get_session(req)
        n = sess.config.bag.n
        scores = _decode_array(req.get("score_maps"), "score_maps", (3,))
        if scores.shape[0] != n:
            raise ShapeError(
                f"score_maps has {scores.shape[0]} maps but the session has {n} slots"
            )
        h, w = int(scores.shape[1]), int(scores.shape[2])
        boxes = _decode_array(req.get("candidate_boxes"), "candidate_boxes", (3, 4))
        if boxes.ndim == 3:
            if boxes.shape != (h, w, 4):
                raise ShapeError(
                    f"candidate_boxes shape {list(boxes.shape)} does not match "
                    f"score grid ({h}, {w}, 4)"
                )
            per_slot = [boxes] * n
        else:
            if boxes.shape != (n, h, w, 4):
                raise ShapeError(
                    f"candidate_boxes shape {list(boxes.shape)} does not match "
                    f"({n}, {h}, {w}, 4)"
                )
            per_slot = [boxes[i] for i in range(n)]
        dims = _decode_dims(req.get("frame_dims"))
        maps = [ScoreMap(scores=scores[i], boxes=per_slot[i]) for i in range(n)]
        if sess.state is None:
            sess.state = pipeline.init(
                sess.scorer, None, sess.init_box, dims, sess.config, sess.model
            )
        else:
            sess.state.dims = dims
        sess.scorer.load(maps)
        result = pipeline.step(sess.state, sess.state.frame_index)
        sess.steps += 1
        self._total_steps += 1
        decision = {
            "frame_index": result.frame_index,
            "status": result.status,
            "box": list(result.box.as_tuple()),
            "confidence": result.confidence,
            "rs": result.rs,
            "selected_index": result.selected_index,
            "slot_update": None,
        }
        if result.updated_slot is not None:
            decision["slot_update"] = {
                "slot": result.updated_slot,
                "box": list(result.box.as_tuple()),
            }
        if result.error is not None:
            decision["error"] = result.error
        return {"decision": decision}

    def _close(self, req: dict) -> dict:
        sid, _ = self._get_session(req)
        del self._sessions[sid]
        return {}

    def _stats(self) -> dict:
        return {
            "stats": {
                "open_sessions": len(self._sessions),
                "peak_sessions": self._peak_sessions,
                "total_opened": self._total_opened,
                "total_steps": self._total_steps,
            }
        }

    # -- request loop ----------------------------------------------------

    def handle_line(self, line: str) -> dict:
        rid = None
        try:
            try:
                req = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"request is not valid JSON: {exc}") from None
            if not isinstance(req, dict):
                raise ProtocolError("request must be a JSON object")
            rid = req.get("id")
            op = req.get("op")
            if op == "open":
                body = self._open(req)
            elif op == "step":
                body = self._step(req)
            elif op == "close":
                body = self._close(req)
            elif op == "stats":
                body = self._stats()
            elif op == "shutdown":
                self.shutting_down = True
                body = {}
            else:
                raise ProtocolError(f"unknown op {op!r}")
            return {"id": rid, "ok": True, **body}
        except RequestError as exc:
            return _error(rid, exc.kind, str(exc))
        except cfgmod.ConfigError as exc:
            return _error(rid, "config", str(exc))
        except ValueError as exc:
            # covers score/box validation and any domain rule the step trips
            return _error(rid, "value", str(exc))
        except Exception as exc:  # keep serving; the host sees the failure
            traceback.print_exc()
            return _error(rid, "internal", f"{type(exc).__name__}: {exc}")


def _error(rid, kind: str, message: str) -> dict:
    return {"id": rid, "ok": False, "error": {"kind": kind, "message": message}}


def main() -> int:
    server = BridgeServer()
    for line in sys.stdin:
        if not line.strip():
            continue
        resp = server.handle_line(line)
        sys.stdout.write(json.dumps(resp, separators=(",", ":")) + "\n")
        sys.stdout.flush()
        if server.shutting_down:
            break
    return 0


if __name__ == "__main__":
    sys.exit(main())
