"""Temporal path predictor: a 6-layer network mapping 4 past boxes to the next center.

Layers 1-4 each run two units in parallel over the same input: a 1-D
convolution along the time axis (local motion patterns) and a fully connected
transform (global layout), averaged before a leaky rectifier. Layers 5 and 6
are plain dense layers; layer 6 is linear and emits the predicted normalized
center (pc1, pc2), clamped to [0, 1] at inference.

A layer's 1-D state vector of width 4*channels is viewed as (4 time steps x
channels) whenever a conv unit consumes it. Everything is float64 numpy; the
backward pass is hand-written and validated against finite differences.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import BBox, ImageDims, NormBBox, normalize

logger = logging.getLogger(__name__)

WINDOW = 4  # frames of history per prediction
BOX_CHANNELS = 4  # (cx, cy, nw, nh) per frame
LEAKY_SLOPE = 0.01
MODEL_FORMAT = "combinet-model-v1"


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; message carries epoch and batch."""


@dataclass(frozen=True)
class ArchConfig:
    """Network shape. hidden width is WINDOW * conv_channels by construction.

    center_inputs shifts every input coordinate by -0.5 inside the model (the
    public contract stays [0, 1]); removing the large common-mode component
    keeps the loss curvature low enough for the aggressive published learning
    rates to converge.

    linear_skip adds a zero-initialized linear map from the centered input
    straight to the output. Its curvature is bounded by the input second
    moments, so it trains stably at learning rates near 1 where the deep
    tower alone either diverges or loses the input signal entirely; the
    tower then learns residual corrections once the rate decays.
    """

    conv_channels: int = 16
    kernel_size: int = 3
    n_outputs: int = 2  # 2 = center only, 4 = full box
    center_inputs: bool = True
    linear_skip: bool = True

    def __post_init__(self):
        if self.conv_channels < 1:
            raise ValueError("conv_channels must be positive")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd (same padding)")
        if self.n_outputs not in (2, 4):
            raise ValueError("n_outputs must be 2 or 4")

    @property
    def hidden(self) -> int:
        return WINDOW * self.conv_channels


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16384
    momentum: float = 0.9
    weight_decay: float = 0.001
    epochs: int = 1000
    lr0: float = 0.4
    lr_decay_base: float = 0.99
    seed: int = 0
    lr_schedule: str = "literal"  # "literal" or "multiplicative"
    init_scale: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must be in [0, 1)")
        if self.lr_schedule not in ("literal", "multiplicative"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def learning_rate(self, epoch: int) -> float:
        """Epoch-indexed learning rate, epoch 0 first.

        literal: lr0 on epoch 0, then decay_base**epoch outright (the initial
        rate stops mattering after the first epoch). multiplicative:
        lr0 * decay_base**epoch.
        """
        if self.lr_schedule == "literal":
            return self.lr0 if epoch == 0 else self.lr_decay_base**epoch
        return self.lr0 * self.lr_decay_base**epoch


@dataclass(frozen=True)
class PathWindow:
    """Exactly 4 normalized boxes, oldest first."""

    boxes: tuple[NormBBox, NormBBox, NormBBox, NormBBox]

    def __post_init__(self):
        if len(self.boxes) != WINDOW:
            raise ValueError(f"window needs {WINDOW} boxes, got {len(self.boxes)}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [[b.cx, b.cy, b.nw, b.nh] for b in self.boxes], dtype=np.float64
        )


@dataclass(frozen=True)
class TrainSample:
    window: PathWindow
    target: NormBBox  # ground-truth box of the following frame

    def target_array(self, n_outputs: int) -> np.ndarray:
        t = self.target
        full = np.array([t.cx, t.cy, t.nw, t.nh], dtype=np.float64)
        return full[:n_outputs]


@dataclass
class CombiNetModel:
    arch: ArchConfig
    params: dict[str, np.ndarray]

    def check_finite(self):
        for name, p in self.params.items():
            if not np.all(np.isfinite(p)):
                raise ValueError(f"non-finite parameter {name}")

    def copy(self) -> "CombiNetModel":
        return CombiNetModel(self.arch, {k: v.copy() for k, v in self.params.items()})


def _param_shapes(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    c, k, h = arch.conv_channels, arch.kernel_size, arch.hidden
    shapes: dict[str, tuple[int, ...]] = {}
    for layer in range(1, 5):
        in_ch = BOX_CHANNELS if layer == 1 else c
        in_dim = WINDOW * BOX_CHANNELS if layer == 1 else h
        shapes[f"conv{layer}_K"] = (c, in_ch, k)
        shapes[f"conv{layer}_b"] = (c,)
        shapes[f"dense{layer}_W"] = (h, in_dim)
        shapes[f"dense{layer}_b"] = (h,)
    shapes["dense5_W"] = (h, h)
    shapes["dense5_b"] = (h,)
    shapes["dense6_W"] = (arch.n_outputs, h)
    shapes["dense6_b"] = (arch.n_outputs,)
    if arch.linear_skip:
        shapes["skip_W"] = (arch.n_outputs, WINDOW * BOX_CHANNELS)
    return shapes


# with the linear bypass carrying the signal, the tower starts at plain
# fan-in scale; larger gains destabilize the published learning rates
DEFAULT_INIT_SCALE = 1.0


def init_model(arch: ArchConfig, seed: int, init_scale: float = DEFAULT_INIT_SCALE) -> CombiNetModel:
    """Uniform fan-in initialization, bound scale*sqrt(6/fan_in); biases zero.

    The zero-initialized bypass means the tower only has to learn residual
    corrections, so it starts at plain fan-in scale. Scales much above 1
    give the tower enough gain to diverge under the published learning-rate
    schedule; scales well below 1 are safe but slow its refinement.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in _param_shapes(arch).items():
        if name.endswith("_b") or name == "skip_W":
            # the skip starts at zero: the model begins as the constant
            # midpoint predictor and the bypass grows toward the linear
            # motion solution at a curvature the high learning rates tolerate
            params[name] = np.zeros(shape, dtype=np.float64)
            continue
        fan_in = int(np.prod(shape[1:]))
        bound = init_scale * np.sqrt(6.0 / fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float64)
    # outputs live in [0, 1]; starting the final bias at the midpoint keeps the
    # first-epoch residuals small, which the high published learning rates need
    params["dense6_b"][:] = 0.5
    return CombiNetModel(arch=arch, params=params)


def zero_model(arch: ArchConfig) -> CombiNetModel:
    params = {
        name: np.zeros(shape, dtype=np.float64)
        for name, shape in _param_shapes(arch).items()
    }
    return CombiNetModel(arch=arch, params=params)


def _leaky(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def _conv_time(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded 1-D convolution along the time axis.

    x: (B, T, C_in); kernel: (C_out, C_in, k); returns (B, T, C_out).
    Implemented as one matmul per kernel tap; T is tiny here so the padded
    slices are cheap views.
    """
    k = kernel.shape[2]
    pad = k // 2
    t_len = x.shape[1]
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    out = np.broadcast_to(bias, (x.shape[0], t_len, kernel.shape[0])).copy()
    for tap in range(k):
        out += xp[:, tap : tap + t_len, :] @ kernel[:, :, tap].T
    return out


def _conv_time_backward(
    x: np.ndarray, kernel: np.ndarray, d_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of _conv_time. Returns (dx, dK, db)."""
    k = kernel.shape[2]
    pad = k // 2
    t_len = x.shape[1]
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    dK = np.empty_like(kernel)
    dxp = np.zeros_like(xp)
    for tap in range(k):
        x_slice = xp[:, tap : tap + t_len, :]  # (B, T, C_in)
        dK[:, :, tap] = np.einsum("bto,btc->oc", d_out, x_slice)
        dxp[:, tap : tap + t_len, :] += d_out @ kernel[:, :, tap]
    db = d_out.sum(axis=(0, 1))
    dx = dxp[:, pad : pad + t_len, :]
    return dx, dK, db


def batch_forward(
    model: CombiNetModel, X: np.ndarray, keep_cache: bool = False
) -> tuple[np.ndarray, list | None]:
    """Raw (unclamped) outputs for a batch of windows X: (B, 4, 4)."""
    p = model.params
    c = model.arch.conv_channels
    cache = [] if keep_cache else None
    h = X - 0.5 if model.arch.center_inputs else X  # (B, T, C)
    for layer in range(1, 5):
        flat = h.reshape(h.shape[0], -1)
        conv_out = _conv_time(h, p[f"conv{layer}_K"], p[f"conv{layer}_b"])
        dense_out = flat @ p[f"dense{layer}_W"].T + p[f"dense{layer}_b"]
        pre = 0.5 * (conv_out.reshape(conv_out.shape[0], -1) + dense_out)
        act = _leaky(pre)
        if keep_cache:
            cache.append((h, flat, pre))
        h = act.reshape(act.shape[0], WINDOW, c)
    flat4 = h.reshape(h.shape[0], -1)
    pre5 = flat4 @ p["dense5_W"].T + p["dense5_b"]
    act5 = _leaky(pre5)
    y = act5 @ p["dense6_W"].T + p["dense6_b"]
    if model.arch.linear_skip:
        flat0 = (X - 0.5 if model.arch.center_inputs else X).reshape(X.shape[0], -1)
        y = y + flat0 @ p["skip_W"].T
    if keep_cache:
        cache.append((flat4, pre5, act5))
    return y, cache


def batch_backward(
    model: CombiNetModel, cache: list, d_y: np.ndarray
) -> dict[str, np.ndarray]:
    """Parameter gradients of the data loss given upstream d_y: (B, n_out)."""
    p = model.params
    c = model.arch.conv_channels
    grads: dict[str, np.ndarray] = {}
    flat4, pre5, act5 = cache[-1]
    grads["dense6_W"] = d_y.T @ act5
    grads["dense6_b"] = d_y.sum(axis=0)
    if model.arch.linear_skip:
        # cache[0] holds the (centered) layer-1 input, flattened
        grads["skip_W"] = d_y.T @ cache[0][1]
    d_act5 = d_y @ p["dense6_W"]
    d_pre5 = d_act5 * np.where(pre5 > 0, 1.0, LEAKY_SLOPE)
    grads["dense5_W"] = d_pre5.T @ flat4
    grads["dense5_b"] = d_pre5.sum(axis=0)
    d_flat = d_pre5 @ p["dense5_W"]
    for layer in range(4, 0, -1):
        h_in, flat_in, pre = cache[layer - 1]
        d_pre = d_flat * np.where(pre > 0, 1.0, LEAKY_SLOPE)
        d_avg = 0.5 * d_pre
        # dense branch
        grads[f"dense{layer}_W"] = d_avg.T @ flat_in
        grads[f"dense{layer}_b"] = d_avg.sum(axis=0)
        d_in_flat = d_avg @ p[f"dense{layer}_W"]
        # conv branch
        d_conv = d_avg.reshape(d_avg.shape[0], WINDOW, c)
        dx, dK, db = _conv_time_backward(h_in, p[f"conv{layer}_K"], d_conv)
        grads[f"conv{layer}_K"] = dK
        grads[f"conv{layer}_b"] = db
        d_flat = d_in_flat + dx.reshape(dx.shape[0], -1)
    return grads


def forward(model: CombiNetModel, window: PathWindow) -> tuple[float, float]:
    """Predicted next center, clamped to [0, 1]."""
    model.check_finite()
    y, _ = batch_forward(model, window.as_array()[None, :, :])
    out = np.clip(y[0], 0.0, 1.0)
    return float(out[0]), float(out[1])


def data_loss_and_grad(
    model: CombiNetModel, X: np.ndarray, T: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared error over a batch (raw outputs) and its parameter gradients."""
    y, cache = batch_forward(model, X, keep_cache=True)
    resid = y - T
    loss = float(np.mean(resid**2))
    d_y = 2.0 * resid / resid.size
    grads = batch_backward(model, cache, d_y)
    return loss, grads


def total_loss(model: CombiNetModel, X: np.ndarray, T: np.ndarray, weight_decay: float) -> float:
    y, _ = batch_forward(model, X)
    loss = float(np.mean((y - T) ** 2))
    penalty = 0.5 * weight_decay * sum(
        float(np.sum(p**2))
        for name, p in model.params.items()
        if not name.endswith("_b")
    )
    return loss + penalty


@dataclass
class TrainResult:
    model: CombiNetModel
    epoch_losses: list[float]
    learning_rates: list[float]
    config: TrainConfig


def _dataset_arrays(dataset: Sequence[TrainSample], n_outputs: int) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([s.window.as_array() for s in dataset])
    T = np.stack([s.target_array(n_outputs) for s in dataset])
    return X, T


def train(
    dataset: Sequence[TrainSample],
    cfg: TrainConfig,
    arch: ArchConfig | None = None,
) -> TrainResult:
    """SGD with momentum on MSE plus an L2 penalty folded into the gradient.

    Update rule per batch: v <- momentum*v + g; theta <- theta - lr*v, where
    g includes weight_decay * theta. Shuffling, init and batching are all
    driven by cfg.seed, so runs are reproducible bit for bit.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    arch = arch or ArchConfig()
    X, T = _dataset_arrays(dataset, arch.n_outputs)
    model = init_model(arch, cfg.seed, cfg.init_scale)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    shuffle_rng = np.random.default_rng(cfg.seed + 1)
    epoch_losses: list[float] = []
    lrs: list[float] = []
    n = len(dataset)
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate(epoch)
        lrs.append(lr)
        order = shuffle_rng.permutation(n)
        seen = 0
        loss_accum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            # overflow here is not a numpy error condition: the non-finite
            # loss check below turns it into a reported abort
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = data_loss_and_grad(model, X[idx], T[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            loss_accum += loss * len(idx)
            seen += len(idx)
            for name, p in model.params.items():
                g = grads[name]
                if not name.endswith("_b"):
                    # decay applies to weights only; a decayed output bias
                    # cannot hold the data mean and the fit reroutes the lost
                    # constant through penalized input channels
                    g = g + cfg.weight_decay * p
                velocity[name] = cfg.momentum * velocity[name] + g
                p -= lr * velocity[name]
        epoch_losses.append(loss_accum / seen)
    model.check_finite()
    return TrainResult(model=model, epoch_losses=epoch_losses, learning_rates=lrs, config=cfg)


def gradient_check(
    model: CombiNetModel,
    sample: TrainSample,
    epsilon: float = 1e-5,
    weight_decay: float = 0.001,
    mutate: tuple[str, tuple[int, ...]] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Differentiates the full regularized single-sample loss with respect to
    every parameter entry. `mutate` doubles one analytic gradient entry first,
    for verifying that the check actually detects wrong gradients.
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    X = sample.window.as_array()[None, :, :]
    T = sample.target_array(model.arch.n_outputs)[None, :]
    _, grads = data_loss_and_grad(model, X, T)
    analytic = {
        k: g if k.endswith("_b") else g + weight_decay * model.params[k]
        for k, g in grads.items()
    }
    if mutate is not None:
        name, idx = mutate
        analytic[name] = analytic[name].copy()
        analytic[name][idx] *= 2.0
    worst = 0.0
    for name, p in model.params.items():
        flat = p.ravel()
        a_flat = analytic[name].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = total_loss(model, X, T, weight_decay)
            flat[i] = orig - epsilon
            down = total_loss(model, X, T, weight_decay)
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            # floor keeps finite-difference roundoff on near-zero gradients
            # from registering as relative error; real backprop bugs produce
            # O(1) relative error on entries far above it
            denom = max(abs(a_flat[i]) + abs(numeric), 1e-5)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
    return worst


def predict_or_extrapolate(
    model: CombiNetModel | None, history: Sequence[NormBBox]
) -> tuple[float, float]:
    """Next-center prediction with short-history fallbacks.

    4+ boxes: network forward on the last 4 (requires a model; without one the
    linear rule below is used so selector-driven runs work model-free).
    2-3 boxes: linear extrapolation from the last two centers. 1 box: that
    center. Outputs clamped to [0, 1].
    """
    if not history:
        raise ValueError("history is empty")
    if len(history) >= WINDOW and model is not None:
        return forward(model, PathWindow(tuple(history[-WINDOW:])))
    if len(history) == 1:
        return history[0].cx, history[0].cy
    prev, last = history[-2], history[-1]
    pc1 = min(max(2.0 * last.cx - prev.cx, 0.0), 1.0)
    pc2 = min(max(2.0 * last.cy - prev.cy, 0.0), 1.0)
    return pc1, pc2


def load_windows(
    sequences: Iterable[tuple[ImageDims, Sequence[BBox | None]]],
) -> list[TrainSample]:
    """Sliding 5-frame windows: 4 input boxes plus the next frame's target.

    None entries mark absent/occluded frames; no window spans one. Sequences
    with fewer than 5 frames contribute nothing and are counted in a warning.
    """
    samples: list[TrainSample] = []
    skipped = 0
    for dims, boxes in sequences:
        if len(boxes) < WINDOW + 1:
            skipped += 1
            continue
        norm: list[NormBBox | None] = [
            normalize(b, dims) if b is not None else None for b in boxes
        ]
        for start in range(len(norm) - WINDOW):
            chunk = norm[start : start + WINDOW + 1]
            if any(b is None for b in chunk):
                continue
            samples.append(
                TrainSample(window=PathWindow(tuple(chunk[:WINDOW])), target=chunk[WINDOW])
            )
    if skipped:
        logger.warning("%d sequences shorter than %d frames skipped", skipped, WINDOW + 1)
    return samples


def save_model(model: CombiNetModel, path: str | Path) -> None:
    """Textual dump; float64 values survive the round-trip exactly (repr floats)."""
    doc = {
        "format": MODEL_FORMAT,
        "arch": {
            "conv_channels": model.arch.conv_channels,
            "kernel_size": model.arch.kernel_size,
            "n_outputs": model.arch.n_outputs,
            "center_inputs": model.arch.center_inputs,
            "linear_skip": model.arch.linear_skip,
        },
        "params": {
            name: {"shape": list(p.shape), "data": p.ravel().tolist()}
            for name, p in sorted(model.params.items())
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_model(path: str | Path) -> CombiNetModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: unknown model format {doc.get('format')!r}")
    arch = ArchConfig(**doc["arch"])
    expected = _param_shapes(arch)
    params: dict[str, np.ndarray] = {}
    for name, shape in expected.items():
        entry = doc["params"].get(name)
        if entry is None:
            raise ValueError(f"{path}: missing parameter {name}")
        if tuple(entry["shape"]) != shape:
            raise ValueError(f"{path}: {name} has shape {entry['shape']}, expected {shape}")
        params[name] = np.array(entry["data"], dtype=np.float64).reshape(shape)
    model = CombiNetModel(arch=arch, params=params)
    model.check_finite()
    return model
