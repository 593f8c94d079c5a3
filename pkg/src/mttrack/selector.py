"""Reliability-gated candidate selection.

Appearance confidence alone switches to whatever looks most similar, so each
candidate's score is adjusted by how far its center lands from the temporally
predicted center. The adjustment pivots around a distance threshold b: closer
than b earns a bonus above the raw confidence, farther costs a penalty, and
the sequential confidence sc scales how much the path opinion is trusted. The
best-adjusted candidate is accepted only if it clears tau_select; otherwise
the frame is declared lost.

Sequential confidence is a plain float in [0, 1], an EMA over a per-frame
success indicator. It rises while tracking stays confident and decays as soon
as confidence drops, so the path penalty strengthens exactly when the tracker
has a trustworthy recent history.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .fusion import Candidate
from .geometry import BBox, ImageDims


class SelectorError(ValueError):
    """Invalid selector configuration or inputs."""


@dataclass(frozen=True)
class SelectorConfig:
    """Knobs for distance error, reliability, and the acceptance gate.

    de_mode "sum" is |(pc1+pc2) - (cc1+cc2)|/2, which cancels on diagonal
    offsets; "l1_mean" is (|pc1-cc1| + |pc2-cc2|)/2 and does not. "sum" stays
    the default because it penalizes drift along the motion direction harder.
    sc_from_raw_confidence switches the sc update from the binary success
    indicator to an EMA of the raw confidence.
    """

    bonus_b: float = 0.1
    rw: float = 1.0
    sc_alpha: float = 0.1
    tau_select: float = 0.35
    tau_conf: float = 0.6
    de_mode: str = "sum"
    sc_from_raw_confidence: bool = False

    def __post_init__(self):
        if self.bonus_b < 0.0:
            raise SelectorError(f"bonus_b must be >= 0, got {self.bonus_b}")
        if self.rw <= 0.0:
            raise SelectorError(f"rw must be > 0, got {self.rw}")
        if not (0.0 < self.sc_alpha < 1.0):
            raise SelectorError(f"sc_alpha must be in (0, 1), got {self.sc_alpha}")
        if not (0.0 <= self.tau_select < 1.0):
            raise SelectorError(f"tau_select must be in [0, 1), got {self.tau_select}")
        if not (0.0 <= self.tau_conf <= 1.0):
            raise SelectorError(f"tau_conf must be in [0, 1], got {self.tau_conf}")
        if self.de_mode not in ("sum", "l1_mean"):
            raise SelectorError(f"unknown de_mode {self.de_mode!r}")


class CandidateScore(NamedTuple):
    """Per-candidate diagnostics: what selection saw for one candidate."""

    confidence: float
    distance_error: float
    reliability: float


@dataclass(frozen=True)
class Selection:
    """Outcome of one selection round.

    index and box are set when tracked; reliability is the best RS either
    way, so a lost frame still reports how close its best candidate came.
    diagnostics is parallel to the candidate list passed to select().
    """

    tracked: bool
    index: int | None
    box: BBox | None
    reliability: float
    diagnostics: tuple[CandidateScore, ...]


def distance_error(
    pc: tuple[float, float], cand_center: tuple[float, float], mode: str = "sum"
) -> float:
    """Distance between predicted and candidate centers, both normalized.

    "sum" compares coordinate sums, so equal-and-opposite offsets on the two
    axes cancel to zero. "l1_mean" averages the per-axis absolute errors.
    """
    pc1, pc2 = pc
    cc1, cc2 = cand_center
    if mode == "sum":
        # grouped so coincident centers give exactly zero
        return abs((pc1 + pc2) - (cc1 + cc2)) / 2.0
    if mode == "l1_mean":
        return (abs(pc1 - cc1) + abs(pc2 - cc2)) / 2.0
    raise SelectorError(f"unknown de_mode {mode!r}")


def reliability_score(
    confidence: float, de: float, sc: float, cfg: SelectorConfig
) -> float:
    """Confidence adjusted by the path term: C - (DE - b) * sc * (1 - C) / RW.

    Deliberately unclamped: DE below b yields a bonus, so the result can
    exceed the raw confidence (and 1.0 slightly). At DE = b the path term is
    zero and the score equals the confidence exactly; at confidence 1 the
    (1 - C) factor kills the path term entirely.
    """
    return confidence - (de - cfg.bonus_b) * sc * (1.0 - confidence) / cfg.rw


def update_sequential_confidence(sc: float, confidence: float, cfg: SelectorConfig) -> float:
    """One EMA step of the sequential confidence.

    The step target is 1 when the frame counts as successfully tracked
    (confidence >= tau_conf) and 0 otherwise, or the raw confidence when
    sc_from_raw_confidence is set. Convexity keeps the result in [0, 1].
    """
    if cfg.sc_from_raw_confidence:
        step = confidence
    else:
        step = 1.0 if confidence >= cfg.tau_conf else 0.0
    return (1.0 - cfg.sc_alpha) * sc + cfg.sc_alpha * step


def _beats(a: CandidateScore, b: CandidateScore) -> bool:
    # tie chain: reliability, then confidence, then proximity; earlier index
    # wins any remaining tie because replacement requires a strict win
    if a.reliability != b.reliability:
        return a.reliability > b.reliability
    if a.confidence != b.confidence:
        return a.confidence > b.confidence
    return a.distance_error < b.distance_error


def select(
    candidates: Sequence[Candidate],
    pc: tuple[float, float],
    sc: float,
    dims: ImageDims,
    cfg: SelectorConfig,
) -> Selection:
    """Score every candidate and accept the best one if it clears tau_select.

    Candidate box centers are normalized by the image dims before the
    distance error is taken against pc. Diagnostics for all candidates are
    returned whether or not the frame is tracked.
    """
    if not candidates:
        raise SelectorError("no candidates to select from")
    diagnostics: list[CandidateScore] = []
    best = 0
    for j, cand in enumerate(candidates):
        cc = (cand.box.cx / dims.width, cand.box.cy / dims.height)
        de = distance_error(pc, cc, cfg.de_mode)
        rs = reliability_score(cand.confidence, de, sc, cfg)
        diagnostics.append(CandidateScore(cand.confidence, de, rs))
        if j > 0 and _beats(diagnostics[j], diagnostics[best]):
            best = j
    top = diagnostics[best]
    if top.reliability >= cfg.tau_select:
        return Selection(True, best, candidates[best].box, top.reliability, tuple(diagnostics))
    return Selection(False, None, None, top.reliability, tuple(diagnostics))
