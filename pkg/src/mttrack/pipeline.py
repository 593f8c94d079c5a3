"""Per-frame tracking orchestration.

One step runs the fixed stage order: score the frame with every bag template,
fuse the maps, extract candidates, predict the next center from recent
history, select by reliability, then apply state updates. Tracked frames push
history, update the sequential confidence with the winner's confidence, and
offer a fresh template to the bag. Lost frames decay the sequential
confidence, freeze the bag and history, and hold the last tracked box so the
path window stays sane for re-acquisition.

The appearance model is pluggable: anything satisfying AppearanceScorer
(an object with make_template and score) drives the pipeline, so a real
Siamese backbone and the synthetic world scorer are interchangeable.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

from .combinet import CombiNetModel, predict_or_extrapolate
from .fusion import ScoreMap, fuse, top_candidates
from .geometry import BBox, ImageDims, NormBBox, normalize
from .selector import (
    CandidateScore,
    Selection,
    SelectorConfig,
    distance_error,
    reliability_score,
    select,
    update_sequential_confidence,
)
from .template_bag import BagConfig, TemplateBag, default_bag_config, init_bag, try_update

TRACKED = "tracked"
LOST = "lost"

HISTORY_CAPACITY = 8  # ring of recent tracked boxes; the predictor needs 4


class AppearanceScorer(Protocol):
    """Contract for appearance models plugged into the pipeline.

    Implementations must be deterministic for identical inputs and keep the
    score grid dimensions constant within a sequence.
    """

    def make_template(self, frame: Any, box: BBox) -> Any: ...

    def score(self, frame: Any, template: Any) -> ScoreMap: ...


@dataclass(frozen=True)
class PipelineConfig:
    """Cross-module knobs for one tracking run.

    use_selector=False disables the temporal branch entirely: the sequential
    confidence is frozen at zero and every frame reports the first
    highest-confidence candidate, which equals the raw score-map argmax
    because candidates arrive score-descending. That is the ablation
    baseline. The selector's distance tie-break is deliberately not applied
    in this mode.

    lazy_template skips building a candidate template when the winning
    confidence is already below the bag's update floor; the bag would reject
    it anyway, so this only saves scorer calls.
    """

    bag: BagConfig = field(default_factory=default_bag_config)
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    top_k: int = 10
    nms_radius: int = 2
    use_selector: bool = True
    lazy_template: bool = False
    sc_init: float = 0.5

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.nms_radius < 0:
            raise ValueError(f"nms_radius must be >= 0, got {self.nms_radius}")
        if not (0.0 <= self.sc_init <= 1.0):
            raise ValueError(f"sc_init must be in [0, 1], got {self.sc_init}")


@dataclass
class TrackState:
    scorer: AppearanceScorer
    dims: ImageDims
    config: PipelineConfig
    model: CombiNetModel | None
    bag: TemplateBag
    sc: float
    history: deque[NormBBox]
    last_output: BBox
    status: str
    frame_index: int


@dataclass(frozen=True)
class FrameResult:
    frame_index: int
    box: BBox
    confidence: float
    rs: float
    status: str
    updated_slot: int | None
    diagnostics: tuple[CandidateScore, ...]
    selected_index: int | None = None  # position in the candidate list; None when lost
    error: str | None = None


def init(
    scorer: AppearanceScorer,
    first_frame: Any,
    gt_box: BBox,
    dims: ImageDims,
    config: PipelineConfig | None = None,
    model: CombiNetModel | None = None,
) -> TrackState:
    """Start a sequence: every bag slot holds the first-frame template.

    Scorer failures propagate; a sequence that cannot build its ground-truth
    template has nothing to track.
    """
    config = config if config is not None else PipelineConfig()
    template = scorer.make_template(first_frame, gt_box)
    bag = init_bag(config.bag, template)
    history: deque[NormBBox] = deque([normalize(gt_box, dims)], maxlen=HISTORY_CAPACITY)
    sc = config.sc_init if config.use_selector else 0.0
    return TrackState(
        scorer=scorer,
        dims=dims,
        config=config,
        model=model,
        bag=bag,
        sc=sc,
        history=history,
        last_output=gt_box,
        status=TRACKED,
        frame_index=0,
    )


def _argmax_selection(
    cands: Sequence, pc: tuple[float, float], dims: ImageDims, cfg: SelectorConfig
) -> Selection:
    # baseline mode: first best-confidence candidate; diagnostics keep the
    # same shape as selector mode with the path term at sc=0
    diags = []
    for c in cands:
        cc = (c.box.cx / dims.width, c.box.cy / dims.height)
        de = distance_error(pc, cc, cfg.de_mode)
        diags.append(CandidateScore(c.confidence, de, reliability_score(c.confidence, de, 0.0, cfg)))
    best = max(range(len(cands)), key=lambda j: (cands[j].confidence, -j))
    return Selection(True, best, cands[best].box, diags[best].reliability, tuple(diags))


def _lost_result(state: TrackState, sel: Selection | None, error: str | None) -> FrameResult:
    cfg = state.config
    if cfg.use_selector:
        # explicit step-0 decay; the frame did not count as successful
        state.sc = (1.0 - cfg.selector.sc_alpha) * state.sc
    state.status = LOST
    if sel is not None:
        best = max(sel.diagnostics, key=lambda d: d.reliability)
        confidence, rs, diags = best.confidence, sel.reliability, sel.diagnostics
    else:
        confidence, rs, diags = 0.0, 0.0, ()
    result = FrameResult(
        frame_index=state.frame_index,
        box=state.last_output,
        confidence=confidence,
        rs=rs,
        status=LOST,
        updated_slot=None,
        diagnostics=diags,
        error=error,
    )
    state.frame_index += 1
    return result


def step(state: TrackState, frame: Any) -> FrameResult:
    """Process one frame and advance the state.

    Stage order is fixed: score, fuse, extract, predict, select, update.
    A scorer exception marks the frame lost with the failure recorded instead
    of aborting the sequence.
    """
    cfg = state.config
    try:
        maps = [state.scorer.score(frame, t) for t in state.bag.templates]
    except Exception as exc:
        return _lost_result(state, None, f"scorer failed: {exc}")
    fused = fuse(maps, list(state.bag.config.fusion_weights))
    cands = top_candidates(fused, k=cfg.top_k, nms_radius=cfg.nms_radius)
    pc = predict_or_extrapolate(state.model, list(state.history))
    if cfg.use_selector:
        sel = select(cands, pc, state.sc, state.dims, cfg.selector)
    else:
        sel = _argmax_selection(cands, pc, state.dims, cfg.selector)
    if not sel.tracked:
        return _lost_result(state, sel, None)

    winner = cands[sel.index]
    updated_slot = None
    if not cfg.lazy_template or winner.confidence >= state.bag.config.tau_min:
        try:
            new_template = state.scorer.make_template(frame, winner.box)
        except Exception as exc:
            return _lost_result(state, sel, f"scorer failed: {exc}")
        updated_slot = try_update(state.bag, winner.confidence, new_template, state.frame_index)
    state.history.append(normalize(winner.box, state.dims))
    if cfg.use_selector:
        state.sc = update_sequential_confidence(state.sc, winner.confidence, cfg.selector)
    state.last_output = winner.box
    state.status = TRACKED
    result = FrameResult(
        frame_index=state.frame_index,
        box=winner.box,
        confidence=winner.confidence,
        rs=sel.reliability,
        status=TRACKED,
        updated_slot=updated_slot,
        diagnostics=sel.diagnostics,
        selected_index=sel.index,
    )
    state.frame_index += 1
    return result


def run_sequence(
    scorer: AppearanceScorer,
    frames: Sequence[Any],
    gt_first_box: BBox,
    dims: ImageDims,
    config: PipelineConfig | None = None,
    model: CombiNetModel | None = None,
) -> list[FrameResult]:
    """Track a whole sequence: init on the first frame, then step every frame.

    The first frame is both the template source and the first step, so the
    result list matches the input length. Deterministic given identical
    inputs, config, and model.
    """
    if not frames:
        raise ValueError("no frames to track")
    state = init(scorer, frames[0], gt_first_box, dims, config, model)
    return [step(state, frame) for frame in frames]
