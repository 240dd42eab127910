"""Losses, Adam, and the progressive / slimmable / individual training loops."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from snf import net as nn
from snf.metrics import MetricsReport, psnr_from_mse
from snf.tensor_core import DTYPE, Rng, ShapeError, as_matrix

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass
class LossSpec:
    """``full_mse`` fits every sample; ``masked_mse`` fits samples in ``mask`` and drives the rest to zero."""

    kind: str = "full_mse"
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("full_mse", "masked_mse"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "masked_mse":
            if self.mask is None:
                raise ValueError("masked_mse needs a mask")
            self.mask = np.asarray(self.mask, dtype=bool).ravel()

    @classmethod
    def masked(cls, mask) -> "LossSpec":
        return cls("masked_mse", mask)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    seed: int = 0
    batch_size: int | None = None  # None = full batch
    log_every: int = 100
    divergence_factor: float = 1e6

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


@dataclass
class StagePlan:
    width: int
    epochs: int
    loss: LossSpec = field(default_factory=LossSpec)


GrowthPlan = list  # list[StagePlan], widths strictly increasing


def _check_pair(pred, target):
    pred = as_matrix(pred)
    target = as_matrix(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return pred, target


def loss_full(pred, target) -> float:
    """Mean over samples of the squared L2 error summed over channels."""
    pred, target = _check_pair(pred, target)
    return float(np.sum((pred - target) ** 2) / pred.shape[0])


def _masked_target(target: np.ndarray, mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool).ravel()
    if mask.shape[0] != target.shape[0]:
        raise ShapeError(f"mask length {mask.shape[0]} != sample count {target.shape[0]}")
    return np.where(mask[:, None], target, 0.0)


def loss_masked(pred, target, mask) -> float:
    """Squared error against ``target`` inside ``mask`` and against zero outside, averaged over all samples."""
    pred, target = _check_pair(pred, target)
    return loss_full(pred, _masked_target(target, mask))


def effective_target(target: np.ndarray, loss: LossSpec) -> np.ndarray:
    if loss.kind == "masked_mse":
        return _masked_target(target, loss.mask)
    return target


def loss_and_grad(pred: np.ndarray, target: np.ndarray, loss: LossSpec):
    pred, target = _check_pair(pred, target)
    diff = pred - effective_target(target, loss)
    n = pred.shape[0]
    return float(np.sum(diff * diff) / n), (2.0 / n) * diff


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place, on the entries of ``params`` that have a gradient."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for key, g in grads.items():
        p = params[key]
        if p.shape != g.shape:
            raise ShapeError(f"gradient for {key} has shape {g.shape}, parameter {p.shape}")
        if key not in state.m:
            state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        m, v = state.m[key], state.v[key]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def _objective_psnr(loss_value: float, out_dim: int) -> float:
    # loss is in [-1, 1] units summed over channels; PSNR is reported in [0, 1] units
    return psnr_from_mse(loss_value / out_dim / 4.0)


class _Guard:
    def __init__(self, factor: float):
        self.factor = factor
        self.initial = None

    def check(self, epoch: int, value: float) -> None:
        if not np.isfinite(value):
            raise TrainingDiverged(epoch, value)
        if self.initial is None:
            self.initial = max(value, 1e-300)
        elif value > self.factor * self.initial:
            raise TrainingDiverged(epoch, value)


def train_stage(net: nn.StreamableNet, signal, loss: LossSpec | None, cfg: TrainConfig,
                report: MetricsReport | None = None, epoch_offset: int = 0) -> MetricsReport:
    """Fit the unfrozen stages of ``net`` (in place) to ``signal`` for ``cfg.epochs`` epochs.

    Frozen stages are never touched, and their activations are computed once
    and reused across epochs.
    """
    loss = loss or LossSpec()
    report = report if report is not None else MetricsReport()
    stage = net.num_stages
    trainable = net.trainable_stages()
    if not trainable:
        raise ValueError("net has no trainable stage")
    x = as_matrix(signal.coords)
    target = effective_target(as_matrix(signal.values), loss)
    n = x.shape[0]

    trace = nn.Trace(net, x, stage)
    nn.run_trace(net, trace)
    start = trainable[0] - 1
    params = net.params(trainable)
    state = AdamState()
    guard = _Guard(cfg.divergence_factor)
    rng = Rng(cfg.seed).spawn(stage)
    batch = cfg.batch_size if cfg.batch_size and cfg.batch_size < n else None

    def full_loss() -> float:
        pred = nn.run_trace(net, trace, start)
        diff = pred - target
        return float(np.sum(diff * diff) / n)

    def record(epoch: int, value: float) -> None:
        report.log(epoch_offset + epoch, stage, value, _objective_psnr(value, net.out_dim))

    for epoch in range(cfg.epochs):
        if batch is None:
            pred = nn.run_trace(net, trace, start)
            diff = pred - target
            value = float(np.sum(diff * diff) / n)
            guard.check(epoch, value)
            if epoch % cfg.log_every == 0:
                record(epoch, value)
            grads = nn.backprop(net, trace, (2.0 / n) * diff, trainable)
            adam_step(params, grads, state, cfg)
            continue
        if epoch % cfg.log_every == 0:
            value = full_loss()
            guard.check(epoch, value)
            record(epoch, value)
        order = rng.permutation(n)
        for i in range(0, n, batch):
            idx = order[i:i + batch]
            sub = trace.rows(idx)
            pred = nn.run_trace(net, sub, start)
            diff = pred - target[idx]
            grads = nn.backprop(net, sub, (2.0 / len(idx)) * diff, trainable)
            adam_step(params, grads, state, cfg)

    value = full_loss()
    guard.check(cfg.epochs, value)
    record(cfg.epochs, value)
    return report


def _stage_signals(signals, count: int) -> list:
    if isinstance(signals, (list, tuple)):
        if len(signals) != count:
            raise ValueError(f"need one signal per stage ({count}), got {len(signals)}")
        return list(signals)
    return [signals] * count


def train_progressive(net: nn.StreamableNet, signals, plan, cfg: TrainConfig, rng: Rng,
                      init_mode: str = "zero", report: MetricsReport | None = None):
    """Grow-then-train loop; returns ``(net, report)``.

    When the first plan entry's width equals the net's current width that
    stage is trained without growing.  ``signals`` is one signal shared by all
    stages or one per stage (temporal growing).
    """
    plan = list(plan)
    widths = [p.width for p in plan]
    if any(b <= a for a, b in zip(widths, widths[1:])):
        raise ValueError(f"plan widths must be strictly increasing: {widths}")
    report = report if report is not None else MetricsReport()
    per_stage = _stage_signals(signals, len(plan))
    offset = 0
    for i, (entry, signal) in enumerate(zip(plan, per_stage)):
        if not (i == 0 and entry.width == net.stage_widths[-1]):
            net = nn.grow(net, entry.width, rng, init_mode)
        log.info("stage %d: width %d, %d epochs", net.num_stages, entry.width, entry.epochs)
        stage_cfg = _with_epochs(cfg, entry.epochs)
        train_stage(net, signal, entry.loss, stage_cfg, report, offset)
        offset += entry.epochs
    net.freeze()
    return net, report


def _with_epochs(cfg: TrainConfig, epochs: int) -> TrainConfig:
    from dataclasses import replace

    return replace(cfg, epochs=epochs)


def slimmable_gradients(net: nn.StreamableNet, x: np.ndarray, target: np.ndarray):
    """Sum over every width prefix of the full-MSE gradient; returns (per-width losses, grads)."""
    losses, total = [], {}
    trace = nn.Trace(net, x, net.num_stages)
    nn.run_trace(net, trace)
    n = x.shape[0]
    for k in range(1, net.num_stages + 1):
        # prefix k reuses the columns of stages <= k; the head sums partial outputs up to k
        pred = trace.partial_out[0]
        for j in range(1, k):
            pred = pred + trace.partial_out[j]
        diff = pred - target
        losses.append(float(np.sum(diff * diff) / n))
        sub = _prefix_trace(trace, k)
        grads = nn.backprop(net, sub, (2.0 / n) * diff, range(1, k + 1))
        for key, g in grads.items():
            if key in total:
                total[key] += g
            else:
                total[key] = g.copy()
    return losses, total


def _prefix_trace(trace: nn.Trace, k: int) -> nn.Trace:
    sub = object.__new__(nn.Trace)
    sub.coords = trace.coords
    sub.stage = k
    sub.args = trace.args
    sub.acts = trace.acts
    sub.partial_out = trace.partial_out[:k]
    sub.valid_upto = k
    return sub


def train_slimmable(net: nn.StreamableNet, signal, cfg: TrainConfig,
                    report: MetricsReport | None = None):
    """Joint training of all width prefixes: gradients of every prefix are summed, then one Adam step."""
    report = report if report is not None else MetricsReport()
    net.unfreeze()
    x = as_matrix(signal.coords)
    target = as_matrix(signal.values)
    params = net.params()
    state = AdamState()
    guard = _Guard(cfg.divergence_factor)
    top = net.num_stages
    for epoch in range(cfg.epochs):
        losses, grads = slimmable_gradients(net, x, target)
        guard.check(epoch, losses[-1])
        if epoch % cfg.log_every == 0:
            report.log(epoch, top, losses[-1], _objective_psnr(losses[-1], net.out_dim))
        adam_step(params, grads, state, cfg)
    value = nn.backward(net, x, target, top, trainable=[])[0]
    guard.check(cfg.epochs, value)
    report.log(cfg.epochs, top, value, _objective_psnr(value, net.out_dim))
    return net, report


def train_individual(width: int, signal, cfg: TrainConfig, depth: int = 3,
                     activation: nn.ActivationConfig | None = None, rng: Rng | None = None,
                     loss: LossSpec | None = None):
    """Baseline: a plain single-stage net trained end to end."""
    x = as_matrix(signal.coords)
    y = as_matrix(signal.values)
    rng = rng or Rng(cfg.seed)
    net = nn.new_net(x.shape[1], y.shape[1], depth, width, activation, rng)
    report = train_stage(net, signal, loss, cfg)
    return net, report


def matched_width(target_params: int, in_dim: int, out_dim: int, depth: int) -> int:
    """Width of a single-stage net whose parameter count is closest to ``target_params``."""
    def count(w):
        return in_dim * w + w + (depth - 1) * (w * w + w) + out_dim * w

    best = min(range(1, 4096), key=lambda w: (abs(count(w) - target_params), w))
    return best
