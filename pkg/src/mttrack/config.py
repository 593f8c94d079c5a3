"""Flat key-value configuration files shared by the CLI and the bridge.

One `key = value` per line, `#` starts a comment, blank lines are ignored.
Keys carry a section prefix: `bag.`, `selector.`, `combinet.`, `fusion.`,
`scenario.`. Order is preserved on load and canonical on save, so diffs stay
reviewable. Sequence values are comma-joined; the bag's slot weight vector
separates its above-mean and below-mean groups with `|`; occlusion windows
are `start:length` pairs.

Placement of pipeline-level toggles: `selector.enabled` and
`selector.sc_init` ride with the selector they control, `fusion.top_k` and
`fusion.nms_radius` with candidate extraction, `bag.lazy_template` with the
template machinery it short-circuits.
"""
from __future__ import annotations

from pathlib import Path
from typing import Callable, Mapping

from .combinet import ArchConfig, TrainConfig
from .geometry import ImageDims
from .pipeline import PipelineConfig
from .selector import SelectorConfig
from .synthetic import ScenarioConfig
from .template_bag import BagConfig


class ConfigError(ValueError):
    """Malformed config text or unknown/duplicate keys."""


def parse_config(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {i}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key or "." not in key:
            raise ConfigError(f"line {i}: key must be 'section.name', got {key!r}")
        if key in values:
            raise ConfigError(f"line {i}: duplicate key {key!r}")
        values[key] = value
    return values


def load_config(path: str | Path) -> dict[str, str]:
    try:
        return parse_config(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def dump_config(values: Mapping[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())


def save_config(path: str | Path, values: Mapping[str, str]) -> None:
    Path(path).write_text(dump_config(values))


# -- typed readers ------------------------------------------------------------


def _parse_bool(s: str) -> bool:
    if s not in ("true", "false"):
        raise ValueError(f"expected true/false, got {s!r}")
    return s == "true"


def _parse_floats(s: str) -> tuple[float, ...]:
    if not s:
        return ()
    return tuple(float(p) for p in s.split(","))


def _parse_occlusions(s: str) -> tuple[tuple[int, int], ...]:
    if not s:
        return ()
    out = []
    for part in s.split(","):
        start, _, length = part.partition(":")
        out.append((int(start), int(length)))
    return tuple(out)


def _parse_arena(s: str) -> ImageDims:
    w, _, h = s.partition("x")
    return ImageDims(int(w), int(h))


class _Section:
    """Pulls typed values for one prefix and rejects keys it does not know."""

    def __init__(self, values: Mapping[str, str], prefix: str, known: set[str]):
        self.prefix = prefix
        self.raw = {}
        for key, value in values.items():
            section, _, name = key.partition(".")
            if section != prefix:
                continue
            if name not in known:
                raise ConfigError(f"unknown key {key!r} (known: {sorted(known)})")
            self.raw[name] = value

    def get(self, name: str, default, conv: Callable):
        if name not in self.raw:
            return default
        try:
            return conv(self.raw[name])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{self.prefix}.{name}: {exc}") from None


_BAG_KEYS = {
    "n", "tau_min", "slot_weights", "fusion_weights", "cbar_alpha",
    "cbar_cumulative", "threshold_mode", "constant_thresholds", "lazy_template",
}
_SELECTOR_KEYS = {
    "bonus_b", "rw", "sc_alpha", "tau_select", "tau_conf", "de_mode",
    "sc_from_raw_confidence", "enabled", "sc_init",
}
_FUSION_KEYS = {"top_k", "nms_radius"}
_SCENARIO_KEYS = {
    "name", "seed", "frames", "arena", "motion", "speed", "walk_sigma",
    "n_distractors", "distractor_similarity", "appearance_drift_rate",
    "occlusions", "noise_amplitude",
}
_COMBINET_KEYS = {
    "conv_channels", "kernel_size", "n_outputs", "center_inputs", "linear_skip",
    "batch_size", "momentum", "weight_decay", "epochs", "lr0", "lr_decay_base",
    "seed", "lr_schedule", "init_scale",
}


def _parse_slot_weights(s: str) -> tuple[tuple[float, ...], tuple[float, ...]]:
    above, sep, below = s.partition("|")
    if not sep:
        raise ValueError("slot_weights needs 'above|below' groups")
    return _parse_floats(above.strip()), _parse_floats(below.strip())


def bag_config_from(values: Mapping[str, str]) -> BagConfig:
    sec = _Section(values, "bag", _BAG_KEYS)
    defaults = BagConfig()
    above, below = sec.get(
        "slot_weights",
        (defaults.slot_weights_above, defaults.slot_weights_below),
        _parse_slot_weights,
    )
    constant = sec.get("constant_thresholds", None, _parse_floats)
    try:
        return BagConfig(
            n=sec.get("n", defaults.n, int),
            tau_min=sec.get("tau_min", defaults.tau_min, float),
            slot_weights_above=tuple(above),
            slot_weights_below=tuple(below),
            fusion_weights=sec.get("fusion_weights", defaults.fusion_weights, _parse_floats),
            cbar_alpha=sec.get("cbar_alpha", defaults.cbar_alpha, float),
            cbar_cumulative=sec.get("cbar_cumulative", defaults.cbar_cumulative, _parse_bool),
            threshold_mode=sec.get("threshold_mode", defaults.threshold_mode, str),
            constant_thresholds=constant,
        )
    except ValueError as exc:
        raise ConfigError(f"bag: {exc}") from None


def selector_config_from(values: Mapping[str, str]) -> SelectorConfig:
    sec = _Section(values, "selector", _SELECTOR_KEYS)
    defaults = SelectorConfig()
    try:
        return SelectorConfig(
            bonus_b=sec.get("bonus_b", defaults.bonus_b, float),
            rw=sec.get("rw", defaults.rw, float),
            sc_alpha=sec.get("sc_alpha", defaults.sc_alpha, float),
            tau_select=sec.get("tau_select", defaults.tau_select, float),
            tau_conf=sec.get("tau_conf", defaults.tau_conf, float),
            de_mode=sec.get("de_mode", defaults.de_mode, str),
            sc_from_raw_confidence=sec.get(
                "sc_from_raw_confidence", defaults.sc_from_raw_confidence, _parse_bool
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"selector: {exc}") from None


def pipeline_config_from(values: Mapping[str, str]) -> PipelineConfig:
    bag = bag_config_from(values)
    selector = selector_config_from(values)
    sel_sec = _Section(values, "selector", _SELECTOR_KEYS)
    fus_sec = _Section(values, "fusion", _FUSION_KEYS)
    bag_sec = _Section(values, "bag", _BAG_KEYS)
    pd = PipelineConfig()
    try:
        return PipelineConfig(
            bag=bag,
            selector=selector,
            top_k=fus_sec.get("top_k", pd.top_k, int),
            nms_radius=fus_sec.get("nms_radius", pd.nms_radius, int),
            use_selector=sel_sec.get("enabled", pd.use_selector, _parse_bool),
            lazy_template=bag_sec.get("lazy_template", pd.lazy_template, _parse_bool),
            sc_init=sel_sec.get("sc_init", pd.sc_init, float),
        )
    except ValueError as exc:
        raise ConfigError(f"pipeline: {exc}") from None


def scenario_config_from(values: Mapping[str, str]) -> ScenarioConfig:
    sec = _Section(values, "scenario", _SCENARIO_KEYS)
    d = ScenarioConfig()
    try:
        return ScenarioConfig(
            name=sec.get("name", d.name, str),
            seed=sec.get("seed", d.seed, int),
            frames=sec.get("frames", d.frames, int),
            arena=sec.get("arena", d.arena, _parse_arena),
            motion=sec.get("motion", d.motion, str),
            speed=sec.get("speed", d.speed, float),
            walk_sigma=sec.get("walk_sigma", d.walk_sigma, float),
            n_distractors=sec.get("n_distractors", d.n_distractors, int),
            distractor_similarity=sec.get(
                "distractor_similarity", d.distractor_similarity, float
            ),
            appearance_drift_rate=sec.get(
                "appearance_drift_rate", d.appearance_drift_rate, float
            ),
            occlusions=sec.get("occlusions", d.occlusions, _parse_occlusions),
            noise_amplitude=sec.get("noise_amplitude", d.noise_amplitude, float),
        )
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from None


def combinet_configs_from(values: Mapping[str, str]) -> tuple[ArchConfig, TrainConfig]:
    sec = _Section(values, "combinet", _COMBINET_KEYS)
    a, t = ArchConfig(), TrainConfig()
    try:
        arch = ArchConfig(
            conv_channels=sec.get("conv_channels", a.conv_channels, int),
            kernel_size=sec.get("kernel_size", a.kernel_size, int),
            n_outputs=sec.get("n_outputs", a.n_outputs, int),
            center_inputs=sec.get("center_inputs", a.center_inputs, _parse_bool),
            linear_skip=sec.get("linear_skip", a.linear_skip, _parse_bool),
        )
        train = TrainConfig(
            batch_size=sec.get("batch_size", t.batch_size, int),
            momentum=sec.get("momentum", t.momentum, float),
            weight_decay=sec.get("weight_decay", t.weight_decay, float),
            epochs=sec.get("epochs", t.epochs, int),
            lr0=sec.get("lr0", t.lr0, float),
            lr_decay_base=sec.get("lr_decay_base", t.lr_decay_base, float),
            seed=sec.get("seed", t.seed, int),
            lr_schedule=sec.get("lr_schedule", t.lr_schedule, str),
            init_scale=sec.get("init_scale", t.init_scale, float),
        )
    except ValueError as exc:
        raise ConfigError(f"combinet: {exc}") from None
    return arch, train


# -- typed writers ------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _fmt_floats(vals) -> str:
    return ",".join(repr(float(v)) for v in vals)


def pipeline_config_to(cfg: PipelineConfig) -> dict[str, str]:
    bag, sel = cfg.bag, cfg.selector
    out = {
        "bag.n": _fmt(bag.n),
        "bag.tau_min": _fmt(bag.tau_min),
        "bag.slot_weights": (
            _fmt_floats(bag.slot_weights_above) + "|" + _fmt_floats(bag.slot_weights_below)
        ),
        "bag.fusion_weights": _fmt_floats(bag.fusion_weights),
        "bag.cbar_alpha": _fmt(bag.cbar_alpha),
        "bag.cbar_cumulative": _fmt(bag.cbar_cumulative),
        "bag.threshold_mode": bag.threshold_mode,
        "bag.lazy_template": _fmt(cfg.lazy_template),
        "selector.enabled": _fmt(cfg.use_selector),
        "selector.sc_init": _fmt(cfg.sc_init),
        "selector.bonus_b": _fmt(sel.bonus_b),
        "selector.rw": _fmt(sel.rw),
        "selector.sc_alpha": _fmt(sel.sc_alpha),
        "selector.tau_select": _fmt(sel.tau_select),
        "selector.tau_conf": _fmt(sel.tau_conf),
        "selector.de_mode": sel.de_mode,
        "selector.sc_from_raw_confidence": _fmt(sel.sc_from_raw_confidence),
        "fusion.top_k": _fmt(cfg.top_k),
        "fusion.nms_radius": _fmt(cfg.nms_radius),
    }
    if bag.constant_thresholds is not None:
        out["bag.constant_thresholds"] = _fmt_floats(bag.constant_thresholds)
    return out


def scenario_config_to(cfg: ScenarioConfig) -> dict[str, str]:
    return {
        "scenario.name": cfg.name,
        "scenario.seed": _fmt(cfg.seed),
        "scenario.frames": _fmt(cfg.frames),
        "scenario.arena": f"{cfg.arena.width}x{cfg.arena.height}",
        "scenario.motion": cfg.motion,
        "scenario.speed": _fmt(cfg.speed),
        "scenario.walk_sigma": _fmt(cfg.walk_sigma),
        "scenario.n_distractors": _fmt(cfg.n_distractors),
        "scenario.distractor_similarity": _fmt(cfg.distractor_similarity),
        "scenario.appearance_drift_rate": _fmt(cfg.appearance_drift_rate),
        "scenario.occlusions": ",".join(f"{s}:{l}" for s, l in cfg.occlusions),
        "scenario.noise_amplitude": _fmt(cfg.noise_amplitude),
    }


def combinet_configs_to(arch: ArchConfig, train: TrainConfig) -> dict[str, str]:
    return {
        "combinet.conv_channels": _fmt(arch.conv_channels),
        "combinet.kernel_size": _fmt(arch.kernel_size),
        "combinet.n_outputs": _fmt(arch.n_outputs),
        "combinet.center_inputs": _fmt(arch.center_inputs),
        "combinet.linear_skip": _fmt(arch.linear_skip),
        "combinet.batch_size": _fmt(train.batch_size),
        "combinet.momentum": _fmt(train.momentum),
        "combinet.weight_decay": _fmt(train.weight_decay),
        "combinet.epochs": _fmt(train.epochs),
        "combinet.lr0": _fmt(train.lr0),
        "combinet.lr_decay_base": _fmt(train.lr_decay_base),
        "combinet.seed": _fmt(train.seed),
        "combinet.lr_schedule": train.lr_schedule,
        "combinet.init_scale": _fmt(train.init_scale),
    }
