"""Template bag with adaptive per-slot update thresholds.

The bag holds n appearance templates. Slot 1 keeps the first-frame target
forever and acts as the anchor; the remaining slots refresh whenever the frame
confidence C lands in their threshold interval. Thresholds derive from the
running average confidence c_bar: slots in the ABOVE_MEAN group use

    tau_i = 1 - (1 - c_bar) / T_i

and slots in the BELOW_MEAN group use

    tau_i = 1 + (tau_min - c_bar) / T_i

so the whole ladder breathes with tracking quality. T_i are positive per-slot
weights; a larger T_i pushes tau_i toward 1.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

logger = logging.getLogger(__name__)


class SlotGroup(Enum):
    FIXED = "fixed"
    ABOVE_MEAN = "above_mean"
    BELOW_MEAN = "below_mean"


class ThresholdMonotonicityError(ValueError):
    """Threshold ladder stopped being strictly decreasing."""


class BagConfigError(ValueError):
    """Invalid bag configuration."""


@dataclass
class BagConfig:
    """Static configuration of a template bag.

    slot_weights_above / slot_weights_below are the T_i values for the
    non-fixed slots, in slot order. threshold_mode is "adaptive" or
    "constant"; constant mode requires constant_thresholds (n-1 values for
    slots 2..n, strictly decreasing, each >= tau_min).
    """

    n: int = 6
    tau_min: float = 0.5
    slot_weights_above: tuple[float, ...] = (35.0, 14.0)
    slot_weights_below: tuple[float, ...] = (1.4, 1.2, 1.0)
    fusion_weights: tuple[float, ...] = (0.30, 0.20, 0.14, 0.14, 0.11, 0.11)
    cbar_alpha: float = 0.05
    cbar_cumulative: bool = False
    threshold_mode: str = "adaptive"
    constant_thresholds: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n < 1:
            raise BagConfigError(f"need at least one slot, got n={self.n}")
        if not (0.0 < self.tau_min < 1.0):
            raise BagConfigError(f"tau_min must be in (0, 1), got {self.tau_min}")
        # alpha 0 freezes c_bar; used by equivalence tests, harmless elsewhere
        if not (0.0 <= self.cbar_alpha < 1.0):
            raise BagConfigError(f"cbar_alpha must be in [0, 1), got {self.cbar_alpha}")
        n_weighted = len(self.slot_weights_above) + len(self.slot_weights_below)
        if self.n > 1 and n_weighted != self.n - 1:
            raise BagConfigError(
                f"slot weights cover {n_weighted} slots but n-1={self.n - 1} are needed"
            )
        if any(t <= 0 for t in self.slot_weights_above + self.slot_weights_below):
            raise BagConfigError("slot weights must be strictly positive")
        if len(self.fusion_weights) != self.n:
            raise BagConfigError(
                f"fusion_weights has {len(self.fusion_weights)} entries, need n={self.n}"
            )
        if abs(sum(self.fusion_weights) - 1.0) > 1e-9:
            raise BagConfigError(f"fusion_weights sum to {sum(self.fusion_weights)}, need 1")
        if self.threshold_mode not in ("adaptive", "constant"):
            raise BagConfigError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.threshold_mode == "constant":
            fixed = self.constant_thresholds
            if fixed is None or len(fixed) != self.n - 1:
                raise BagConfigError("constant mode needs n-1 fixed thresholds")
            if any(t < self.tau_min for t in fixed):
                raise BagConfigError("constant thresholds must be >= tau_min")
            if any(a <= b for a, b in zip(fixed, fixed[1:])):
                raise BagConfigError("constant thresholds must be strictly decreasing")

    @property
    def groups(self) -> tuple[SlotGroup, ...]:
        """Group of every slot, slot 1 first."""
        return (
            (SlotGroup.FIXED,)
            + (SlotGroup.ABOVE_MEAN,) * len(self.slot_weights_above)
            + (SlotGroup.BELOW_MEAN,) * len(self.slot_weights_below)
        )


def default_bag_config(n: int = 6, **overrides: Any) -> BagConfig:
    """Build a BagConfig with defaults appropriate for the given slot count."""
    if n == 1:
        base = dict(
            n=1,
            slot_weights_above=(),
            slot_weights_below=(),
            fusion_weights=(1.0,),
        )
    elif n == 6:
        base = dict(n=6)
    elif n == 10:
        base = dict(
            n=10,
            slot_weights_above=(35.0, 28.0, 21.0, 14.0),
            slot_weights_below=(1.4, 1.3, 1.2, 1.1, 1.0),
            fusion_weights=(0.30, 0.12, 0.10, 0.08, 0.08, 0.08, 0.06, 0.06, 0.06, 0.06),
        )
    else:
        n_above = (n - 1) // 2
        n_below = (n - 1) - n_above
        above = tuple(35.0 - (35.0 - 14.0) * i / max(n_above - 1, 1) for i in range(n_above))
        below = tuple(1.4 - (1.4 - 1.0) * i / max(n_below - 1, 1) for i in range(n_below))
        rest = round(0.7 / (n - 1), 12)
        fusion = (1.0 - rest * (n - 1),) + (rest,) * (n - 1)
        base = dict(
            n=n,
            slot_weights_above=above,
            slot_weights_below=below,
            fusion_weights=fusion,
        )
    base.update(overrides)
    return BagConfig(**base)


@dataclass
class TemplateSlot:
    index: int  # 1-based, matching the slot numbering in docs and logs
    template: Any
    threshold: float
    weight: float
    group: SlotGroup
    last_update_frame: int | None = None


@dataclass
class TemplateBag:
    slots: list[TemplateSlot]
    c_bar: float
    config: BagConfig
    degenerate_cbar: bool = False
    _qualifying_frames: int = field(default=1, repr=False)  # for cumulative mean

    @property
    def thresholds(self) -> list[float]:
        return [s.threshold for s in self.slots]

    @property
    def templates(self) -> list[Any]:
        return [s.template for s in self.slots]


def compute_thresholds(config: BagConfig, c_bar: float) -> tuple[list[float], bool]:
    """Evaluate the threshold ladder for a given running confidence.

    Returns (thresholds, degenerate) where degenerate means c_bar == 1 exactly
    collapsed every ABOVE_MEAN threshold to 1; updates are then restricted to
    BELOW_MEAN slots. A non-monotone ladder raises, naming the offending pair.
    """
    if config.threshold_mode == "constant":
        return [1.0] + list(config.constant_thresholds or ()), False
    if not (config.tau_min < c_bar <= 1.0):
        raise ThresholdMonotonicityError(
            f"running confidence {c_bar} outside (tau_min={config.tau_min}, 1]"
        )
    taus = [1.0]
    for t in config.slot_weights_above:
        taus.append(max(1.0 - (1.0 - c_bar) / t, config.tau_min))
    for t in config.slot_weights_below:
        taus.append(max(1.0 + (config.tau_min - c_bar) / t, config.tau_min))
    degenerate = c_bar == 1.0
    n_fixed_above = 1 + len(config.slot_weights_above)
    for i in range(len(taus) - 1):
        if degenerate and i + 1 < n_fixed_above:
            # above-mean thresholds legitimately tie at 1.0 here
            if taus[i + 1] > taus[i]:
                raise ThresholdMonotonicityError(
                    f"tau_{i + 1}={taus[i]} < tau_{i + 2}={taus[i + 1]} (slots {i + 1}, {i + 2})"
                )
        elif taus[i + 1] >= taus[i]:
            raise ThresholdMonotonicityError(
                f"tau_{i + 1}={taus[i]} <= tau_{i + 2}={taus[i + 1]} (slots {i + 1}, {i + 2})"
            )
    return taus, degenerate


def match_slot(thresholds: Sequence[float], tau_min: float, confidence: float,
               degenerate: bool = False, n_above: int = 0) -> int | None:
    """Pure slot-matching rule: 1-based slot index or None.

    Slot i (i >= 2) takes confidences in [tau_i, tau_{i-1}), the topmost
    updatable slot including 1.0. Confidences in [tau_min, tau_n) fall through
    to slot n. In the degenerate c_bar == 1 case the ABOVE_MEAN slots are
    skipped and the first BELOW_MEAN slot takes the top interval.
    """
    if confidence < tau_min:
        return None
    n = len(thresholds)
    if n == 1:
        return None  # single fixed slot, nothing updatable
    first = 2 + n_above if degenerate else 2
    if first > n:
        return None  # degenerate bag with no below-mean slots
    for i in range(first, n + 1):
        lo = thresholds[i - 1]
        hi = thresholds[i - 2] if i > first else 1.0
        if (lo <= confidence < hi) or (i == first and confidence == 1.0):
            return i
    if confidence >= tau_min:
        return n  # below tau_n but qualifying: most-diverse slot
    return None


def init_bag(config: BagConfig, first_template: Any) -> TemplateBag:
    """Create a bag whose every slot holds the first-frame template."""
    taus, degenerate = compute_thresholds(config, 1.0)
    groups = config.groups
    # slot 1 gets weight inf: the ABOVE_MEAN rule then pins tau_1 at exactly 1
    weights = (math.inf,) + config.slot_weights_above + config.slot_weights_below
    slots = [
        TemplateSlot(
            index=i + 1,
            template=copy.deepcopy(first_template),
            threshold=taus[i],
            weight=weights[i],
            group=groups[i],
            last_update_frame=0,
        )
        for i in range(config.n)
    ]
    return TemplateBag(slots=slots, c_bar=1.0, config=config, degenerate_cbar=degenerate)


def update_running_confidence(bag: TemplateBag, confidence: float) -> float:
    """Fold one frame confidence into c_bar; gated at tau_min."""
    if confidence < bag.config.tau_min:
        return bag.c_bar
    if bag.config.cbar_cumulative:
        k = bag._qualifying_frames
        bag.c_bar = (bag.c_bar * k + confidence) / (k + 1)
        bag._qualifying_frames = k + 1
    else:
        a = bag.config.cbar_alpha
        bag.c_bar = (1.0 - a) * bag.c_bar + a * confidence
    return bag.c_bar


def recompute_thresholds(bag: TemplateBag) -> list[float]:
    """Refresh every slot threshold from the current c_bar."""
    taus, degenerate = compute_thresholds(bag.config, bag.c_bar)
    if degenerate and not bag.degenerate_cbar:
        logger.warning("running confidence saturated at 1; only BELOW_MEAN slots can update")
    bag.degenerate_cbar = degenerate
    for slot, tau in zip(bag.slots, taus):
        slot.threshold = tau
    return taus


def try_update(bag: TemplateBag, confidence: float, new_template: Any,
               frame: int) -> int | None:
    """Offer a new template to the bag.

    Below tau_min nothing changes, not even c_bar. Otherwise c_bar absorbs the
    confidence first, thresholds refresh, and the matching slot takes the
    template. Returns the 1-based updated slot index, or None.
    """
    if not (0.0 <= confidence <= 1.0):
        raise ValueError(f"confidence {confidence} outside [0, 1]")
    if confidence < bag.config.tau_min:
        return None
    update_running_confidence(bag, confidence)
    taus = recompute_thresholds(bag)
    idx = match_slot(
        taus,
        bag.config.tau_min,
        confidence,
        degenerate=bag.degenerate_cbar,
        n_above=len(bag.config.slot_weights_above),
    )
    if idx is not None:
        slot = bag.slots[idx - 1]
        slot.template = new_template
        slot.last_update_frame = frame
    return idx
