"""End-to-end runs: build the signal a config describes, train, and evaluate per stage."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from snf import net as nn
from snf.config import RunConfig
from snf.metrics import MetricsReport, StageRow, mse, psnr_from_mse, ssim
from snf.signals import (SampledSignal, SinusoidSpec, image_grid, load_image_grid,
                         load_video_grid, make_sinusoid_1d, partition_spatial, strip_bounds, to_unit,
                         video_signal)
from snf.tensor_core import Rng
from snf.training import (LossSpec, StagePlan, TrainConfig, matched_width, train_individual,
                          train_progressive, train_slimmable)

log = logging.getLogger(__name__)


# --- signals and extents ------------------------------------------------------

def load_signal(cfg: RunConfig, rng: Rng) -> SampledSignal:
    if cfg.task == "sinusoid":
        spec = SinusoidSpec(tuple(cfg.frequencies), None, cfg.samples, cfg.sampling)
        return make_sinusoid_1d(spec, rng)
    if cfg.task == "image":
        return load_image_grid(cfg.signal)
    return load_video_grid(cfg.signal)


def value_range(signal: SampledSignal) -> tuple[float, float]:
    """Physical values that network outputs -1 and +1 stand for."""
    if signal.meta.get("kind") == "sinusoid":
        s = signal.meta["scale"]
        return (-s, s)
    return (0.0, 1.0)


def grid_coords(grid_shape) -> np.ndarray:
    """Coordinates of a regular sample grid: ``(N,)`` 1D, ``(H, W)`` image, ``(T, H, W)`` video.

    1D grids sample ``x = j / N`` on [0, 1) and map it onto [-1, 1].
    """
    shape = tuple(int(s) for s in grid_shape)
    if len(shape) == 1:
        return (2.0 * np.arange(shape[0]) / shape[0] - 1.0)[:, None]
    if len(shape) == 2:
        return image_grid(*shape)
    if len(shape) == 3:
        t, h, w = shape
        return video_signal(np.zeros((t, h, w, 1), dtype=np.uint8)).coords
    raise ValueError(f"unsupported grid shape {shape}")


def frame_count(cfg: RunConfig, stage: int, total: int) -> int:
    return min(total, stage * cfg.frames_per_stage)


def extent_mask(cfg: RunConfig, signal: SampledSignal, stage: int) -> np.ndarray:
    """Samples of ``signal`` a stage-``stage`` model is responsible for."""
    if cfg.growing == "spatial":
        return partition_spatial(signal, cfg.num_strips, stage, cfg.strip_order)
    if cfg.growing == "temporal":
        t, h, w = signal.grid_shape
        keep = np.zeros(t, dtype=bool)
        keep[:frame_count(cfg, stage, t)] = True
        return np.repeat(keep, h * w)
    return np.ones(len(signal), dtype=bool)


def stage_targets(cfg: RunConfig, signal: SampledSignal) -> tuple[list[SampledSignal], list[LossSpec]]:
    """Per-stage training signal and loss for the configured growing type."""
    signals, losses = [], []
    for k in range(1, cfg.num_stages + 1):
        if cfg.growing == "temporal":
            sub = signal.subset(extent_mask(cfg, signal, k))
            sub.grid_shape = (frame_count(cfg, k, signal.grid_shape[0]),) + signal.grid_shape[1:]
            signals.append(sub)
            losses.append(LossSpec())
        elif cfg.growing == "spatial":
            signals.append(signal)
            losses.append(LossSpec.masked(extent_mask(cfg, signal, k)))
        else:
            signals.append(signal)
            losses.append(LossSpec())
    return signals, losses


# --- evaluation ---------------------------------------------------------------

def _extent_box(grid_shape, mask):
    """Crop ``grid_shape`` to the bounding box of a mask that is a prefix of columns or frames."""
    full = np.asarray(mask).reshape(grid_shape)
    idx = np.nonzero(full)
    return tuple(slice(int(i.min()), int(i.max()) + 1) for i in idx)


def evaluate_stage(net: nn.StreamableNet, signal: SampledSignal, stage: int,
                   mask=None) -> StageRow:
    """Quality of the stage-``stage`` prefix on the masked samples, in [0, 1] display units.

    SSIM is reported for images and videos whose evaluated region is at
    least 11x11 (videos average it over frames).
    """
    stage = net.check_stage(stage)
    mask = np.ones(len(signal), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    pred = to_unit(nn.forward(net, signal.coords[mask], stage))
    target = to_unit(signal.values[mask])
    err = mse(pred, target)
    score = None
    kind = signal.meta.get("kind")
    if kind in ("image", "video") and len(signal.grid_shape) in (2, 3):
        box = _extent_box(signal.grid_shape, mask)
        shape = tuple(s.stop - s.start for s in box) + (signal.channels,)
        a = np.clip(pred, 0, 1).reshape(shape)
        b = target.reshape(shape)
        if min(shape[-3:-1]) >= 11:
            if kind == "image":
                score = ssim(a, b)
            else:
                score = float(np.mean([ssim(a[f], b[f]) for f in range(shape[0])]))
    return StageRow(stage, nn.param_count(net, stage), err, psnr_from_mse(err), score)


def evaluate(net: nn.StreamableNet, signal: SampledSignal, cfg: RunConfig | None = None,
             stages=None) -> list[StageRow]:
    stages = range(1, net.num_stages + 1) if stages is None else stages
    rows = []
    for k in stages:
        mask = None if cfg is None else extent_mask(cfg, signal, k)
        rows.append(evaluate_stage(net, signal, k, mask))
    return rows


def seam_statistic(image, boundaries) -> tuple[float, float]:
    """Largest column-to-column mean-abs jump at the given boundary columns, and the median elsewhere.

    ``boundaries`` are the first column index of each strip after the first.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    jumps = np.mean(np.abs(np.diff(img, axis=1)), axis=(0, 2))  # jump j sits between j and j + 1
    at = [b - 1 for b in boundaries]
    interior = np.delete(jumps, at)
    return float(max(jumps[at])), float(np.median(interior))


def strip_edges(width: int, num_strips: int) -> list[int]:
    """First column of every strip but the leftmost."""
    return [lo for lo, _ in strip_bounds(width, num_strips)[1:]]


# --- parameter accounting -----------------------------------------------------

def efficiency_table(widths, in_dim: int, out_dim: int, depth: int) -> list[tuple[int, int, int, float]]:
    """Rows ``(stage, streamable_params, cumulative_individual_params, ratio)``.

    Serving stage ``k`` with individual models needs one separately stored
    model per quality level, each matched in size to the streamable prefix.
    """
    rows, cumulative, prev = [], 0, 0
    for k, w in enumerate(widths, 1):
        # triangular prefix: stage j adds delta_j rows reading in_dim / w_j inputs
        delta = w - prev
        prev = w
        streamable = (rows[-1][1] if rows else 0) + delta * in_dim + delta + \
            (depth - 1) * (delta * w + delta) + out_dim * delta
        iw = matched_width(streamable, in_dim, out_dim, depth)
        cumulative += iw * in_dim + iw + (depth - 1) * (iw * iw + iw) + out_dim * iw
        rows.append((k, streamable, cumulative, cumulative / streamable))
    return rows


# --- training -----------------------------------------------------------------

@dataclass
class FitResult:
    nets: list[nn.StreamableNet]  # one net (progressive / slimmable) or one per width (individual)
    report: MetricsReport
    signal: SampledSignal
    value_range: tuple[float, float]
    config: RunConfig
    stage_nets: list[tuple[nn.StreamableNet, int]] = field(default_factory=list)  # (net, prefix) per stage

    @property
    def net(self) -> nn.StreamableNet:
        return self.nets[-1]


def train_config(cfg: RunConfig, epochs: int) -> TrainConfig:
    return TrainConfig(lr=cfg.lr, epochs=epochs, seed=cfg.seed,
                       batch_size=cfg.batch_size or None, log_every=cfg.log_every)


def fit(cfg: RunConfig, signal: SampledSignal | None = None) -> FitResult:
    """Train the configured model; raises ``TrainingDiverged`` on divergence."""
    rng = Rng(cfg.seed)
    if signal is None:
        signal = load_signal(cfg, rng)
    act = nn.ActivationConfig(cfg.omega0)
    in_dim, out_dim = signal.coords.shape[1], signal.channels
    signals, losses = stage_targets(cfg, signal)
    report = MetricsReport()
    if cfg.mode == "progressive":
        net = nn.new_net(in_dim, out_dim, cfg.depth, cfg.widths[0], act, rng)
        plan = [StagePlan(w, e, loss) for w, e, loss in zip(cfg.widths, cfg.epochs, losses)]
        net, report = train_progressive(net, signals, plan, train_config(cfg, 1), rng,
                                        cfg.init_mode, report)
        nets = [net]
        stage_nets = [(net, k) for k in range(1, net.num_stages + 1)]
    elif cfg.mode == "slimmable":
        net = nn.build_net(in_dim, out_dim, cfg.depth, cfg.widths, rng, act, cfg.init_mode)
        # one slimmable epoch runs every prefix, so K times the passes of a progressive epoch
        epochs = max(1, round(sum(cfg.epochs) / cfg.num_stages))
        net, report = train_slimmable(net, signal, train_config(cfg, epochs), report)
        net.freeze()
        nets = [net]
        stage_nets = [(net, k) for k in range(1, net.num_stages + 1)]
    else:
        nets, offset = [], 0
        for k, (w, e) in enumerate(zip(cfg.widths, cfg.epochs), 1):
            net, part = train_individual(w, signals[k - 1], train_config(cfg, e), cfg.depth,
                                         act, rng, losses[k - 1])
            for epoch, _, loss, p in part.series:
                report.log(offset + epoch, k, loss, p)
            offset += e
            net.freeze()
            nets.append(net)
        stage_nets = [(n, 1) for n in nets]
    for k, (n, prefix) in enumerate(stage_nets, 1):
        row = evaluate_stage(n, signal, prefix, extent_mask(cfg, signal, k))
        row.stage = k
        report.rows.append(row)
        log.info("stage %d: %d params, psnr %.2f dB", k, row.params, row.psnr)
    return FitResult(nets, report, signal, value_range(signal), cfg, stage_nets)
