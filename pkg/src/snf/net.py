"""Width-partitioned sine MLP whose width prefixes are runnable sub-networks.

Every growth stage ``k`` owns, for each hidden layer, one row slab of weights
of shape ``(delta_k, prev_width_k)`` plus a bias segment, and one column slab
of the output matrix.  ``prev_width_k`` is the input dimension for the first
layer and the cumulative width ``w_k`` for deeper layers, so a unit added at
stage ``k`` reads every unit of stages ``<= k`` but never anything newer.  The
first ``prev_width_{k-1}`` columns of a slab are the lateral block (old units
into new ones); the rest is the new-to-new block.  For the first layer the
whole slab is lateral, since the coordinates predate every stage.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from snf.tensor_core import DTYPE, Rng, ShapeError, as_matrix

# keys into a parameter / gradient mapping
#   ("W", stage, layer)   hidden weight slab
#   ("b", stage, layer)   hidden bias segment
#   ("V", stage, depth)   output column slab
ParamKey = tuple[str, int, int]
GradientSet = dict  # ParamKey -> ndarray, only for trainable stages

INIT_MODES = ("zero", "siren")


@dataclass(frozen=True)
class ActivationConfig:
    omega0: float = 30.0

    def __post_init__(self):
        if not self.omega0 > 0:
            raise ValueError(f"omega0 must be positive, got {self.omega0}")


@dataclass
class StageBlocks:
    hidden: list[np.ndarray]
    bias: list[np.ndarray]
    out: np.ndarray
    frozen: bool = False

    @property
    def delta(self) -> int:
        return self.out.shape[1]

    def size(self) -> int:
        return sum(w.size for w in self.hidden) + sum(b.size for b in self.bias) + self.out.size


@dataclass
class StreamableNet:
    in_dim: int
    out_dim: int
    depth: int
    activation: ActivationConfig = field(default_factory=ActivationConfig)
    stages: list[StageBlocks] = field(default_factory=list)

    @property
    def omega0(self) -> float:
        return self.activation.omega0

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def stage_widths(self) -> list[int]:
        widths, total = [], 0
        for s in self.stages:
            total += s.delta
            widths.append(total)
        return widths

    def prev_width(self, layer: int, stage: int) -> int:
        """Input width seen by layer ``layer`` slabs of (1-based) ``stage``."""
        return self.in_dim if layer == 0 else self.stage_widths[stage - 1]

    def check_stage(self, stage: int | None, lo: int = 1) -> int:
        if stage is None:
            return self.num_stages
        if not lo <= stage <= self.num_stages:
            raise ValueError(f"stage must be in [{lo}, {self.num_stages}], got {stage}")
        return stage

    def params(self, stages=None) -> dict[ParamKey, np.ndarray]:
        """Live views of the parameter arrays of the given (1-based) stages."""
        stages = range(1, self.num_stages + 1) if stages is None else stages
        out = {}
        for k in stages:
            blk = self.stages[k - 1]
            for layer in range(self.depth):
                out[("W", k, layer)] = blk.hidden[layer]
                out[("b", k, layer)] = blk.bias[layer]
            out[("V", k, self.depth)] = blk.out
        return out

    def trainable_stages(self) -> list[int]:
        return [k for k, s in enumerate(self.stages, 1) if not s.frozen]

    def freeze(self, upto: int | None = None) -> None:
        upto = self.num_stages if upto is None else upto
        for s in self.stages[:upto]:
            s.frozen = True

    def unfreeze(self) -> None:
        for s in self.stages:
            s.frozen = False

    def copy(self) -> "StreamableNet":
        return copy.deepcopy(self)


def init_siren(fan_in: int, first_layer: bool, rng: Rng, size) -> np.ndarray:
    """Sine-network weight init: U(-1/n, 1/n) on the first layer, else U(-sqrt(6/n), sqrt(6/n))."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    bound = 1.0 / fan_in if first_layer else np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size)


def _bias_init(fan_in: int, rng: Rng, n: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, n)


def _output_init(fan_in: int, omega0: float, rng: Rng, size) -> np.ndarray:
    # the linear head follows the sine-network convention of dividing by omega0
    bound = np.sqrt(6.0 / fan_in) / omega0
    return rng.uniform(-bound, bound, size)


def new_net(in_dim: int, out_dim: int, depth: int, width: int,
            activation: ActivationConfig | None = None, rng: Rng | None = None) -> StreamableNet:
    """A single-stage net of hidden width ``width`` with standard sine-network init."""
    if min(in_dim, out_dim, depth, width) < 1:
        raise ValueError("in_dim, out_dim, depth and width must all be >= 1")
    activation = activation or ActivationConfig()
    rng = rng or Rng(0)
    hidden, bias = [], []
    for layer in range(depth):
        fan_in = in_dim if layer == 0 else width
        hidden.append(init_siren(fan_in, layer == 0, rng, (width, fan_in)))
        bias.append(_bias_init(fan_in, rng, width))
    out = _output_init(width, activation.omega0, rng, (out_dim, width))
    net = StreamableNet(in_dim, out_dim, depth, activation)
    net.stages.append(StageBlocks(hidden, bias, out))
    return net


def grow(net: StreamableNet, new_width: int, rng: Rng, init_mode: str = "zero") -> StreamableNet:
    """Return a copy of ``net`` with one more stage, widening every hidden layer to ``new_width``.

    Lateral blocks get sine-network init with fan-in equal to the full width
    feeding the layer after growth.  With ``init_mode="zero"`` the new-to-new
    blocks, new biases and new output columns start at zero, so the grown net
    computes exactly what the old one did.  ``init_mode="siren"`` draws them
    like a fresh sine network instead (ablation only).
    """
    if init_mode not in INIT_MODES:
        raise ValueError(f"init_mode must be one of {INIT_MODES}")
    old_width = net.stage_widths[-1]
    if new_width <= old_width:
        raise ValueError(f"new width {new_width} must exceed current width {old_width}")
    delta = new_width - old_width
    grown = net.copy()
    grown.freeze()
    hidden, bias = [], []
    for layer in range(net.depth):
        if layer == 0:
            w = init_siren(net.in_dim, True, rng, (delta, net.in_dim))
        else:
            w = np.zeros((delta, new_width), dtype=DTYPE)
            w[:, :old_width] = init_siren(new_width, False, rng, (delta, old_width))
            if init_mode == "siren":
                w[:, old_width:] = init_siren(new_width, False, rng, (delta, delta))
        fan_in = net.in_dim if layer == 0 else new_width
        if init_mode == "siren":
            b = _bias_init(fan_in, rng, delta)
        else:
            b = np.zeros(delta, dtype=DTYPE)
        hidden.append(w)
        bias.append(b)
    if init_mode == "siren":
        out = _output_init(new_width, net.omega0, rng, (net.out_dim, delta))
    else:
        out = np.zeros((net.out_dim, delta), dtype=DTYPE)
    grown.stages.append(StageBlocks(hidden, bias, out))
    return grown


def build_net(in_dim: int, out_dim: int, depth: int, widths, rng: Rng,
              activation: ActivationConfig | None = None, init_mode: str = "zero") -> StreamableNet:
    """All stages at once (nothing frozen), e.g. for slimmable training."""
    net = new_net(in_dim, out_dim, depth, widths[0], activation, rng)
    for w in widths[1:]:
        net = grow(net, w, rng, init_mode)
    net.unfreeze()
    return net


def param_count(net: StreamableNet, stage: int | None = None) -> int:
    stage = net.check_stage(stage)
    return sum(s.size() for s in net.stages[:stage])


class Trace:
    """Per-layer sine arguments and activations of a forward pass (rows = samples).

    Columns of stages that will not change (frozen ones) can be computed once
    and reused while only the newest stage is refreshed.
    """

    def __init__(self, net: StreamableNet, coords: np.ndarray, stage: int):
        n = coords.shape[0]
        width = net.stage_widths[stage - 1]
        self.coords = coords
        self.stage = stage
        self.args = [np.empty((n, width), dtype=DTYPE) for _ in range(net.depth)]
        self.acts = [np.empty((n, width), dtype=DTYPE) for _ in range(net.depth)]
        self.partial_out = [None] * stage  # output contribution of each stage
        self.valid_upto = 0  # stages whose columns are current

    def rows(self, idx: np.ndarray) -> "Trace":
        sub = object.__new__(Trace)
        sub.coords = self.coords[idx]
        sub.stage = self.stage
        sub.args = [a[idx] for a in self.args]
        sub.acts = [a[idx] for a in self.acts]
        sub.partial_out = [None if p is None else p[idx] for p in self.partial_out]
        sub.valid_upto = self.valid_upto
        return sub


def run_trace(net: StreamableNet, trace: Trace, start: int = 0) -> np.ndarray:
    """(Re)compute stages ``start+1 .. trace.stage`` in ``trace``; return the output."""
    widths = net.stage_widths
    omega0 = net.omega0
    x = trace.coords
    for layer in range(net.depth):
        inp = x if layer == 0 else trace.acts[layer - 1]
        for k in range(start, trace.stage):
            blk = net.stages[k]
            lo = widths[k - 1] if k else 0
            hi = widths[k]
            pw = net.prev_width(layer, k + 1)
            z = inp[:, :pw] @ blk.hidden[layer].T + blk.bias[layer]
            if layer == 0:
                z = omega0 * z
            trace.args[layer][:, lo:hi] = z
            trace.acts[layer][:, lo:hi] = np.sin(z)
    last = trace.acts[-1]
    for k in range(start, trace.stage):
        lo = widths[k - 1] if k else 0
        trace.partial_out[k] = last[:, lo:widths[k]] @ net.stages[k].out.T
    trace.valid_upto = trace.stage
    y = trace.partial_out[0]
    for k in range(1, trace.stage):
        y = y + trace.partial_out[k]
    return y


def _coords(net: StreamableNet, coords) -> np.ndarray:
    x = as_matrix(coords, None if np.ndim(coords) != 1 or net.in_dim == 1 else net.in_dim)
    if x.shape[1] != net.in_dim:
        raise ShapeError(f"coords have {x.shape[1]} columns, net expects {net.in_dim}")
    return x


def forward(net: StreamableNet, coords, stage: int | None = None) -> np.ndarray:
    """Evaluate the width-``w_stage`` sub-network on an ``N x in_dim`` coordinate matrix."""
    stage = net.check_stage(stage)
    x = _coords(net, coords)
    return run_trace(net, Trace(net, x, stage))


def forward_residual(net: StreamableNet, coords, stage: int) -> np.ndarray:
    """Output of stage ``stage`` alone: all other output columns pruned to zero."""
    if stage < 2:
        raise ValueError("residual output is defined for stage >= 2; stage 1 is forward(x, 1)")
    stage = net.check_stage(stage, lo=2)
    trace = Trace(net, _coords(net, coords), stage)
    run_trace(net, trace)
    return trace.partial_out[stage - 1]


def backprop(net: StreamableNet, trace: Trace, dy: np.ndarray, trainable) -> GradientSet:
    """Gradients of a scalar loss w.r.t. the parameters of ``trainable`` stages.

    ``dy`` is dL/d(output) for the forward pass stored in ``trace``.  Only the
    units of stages ``>= min(trainable)`` are backpropagated through: older
    units do not depend on any trainable parameter.
    """
    trainable = sorted(set(trainable))
    grads: GradientSet = {}
    if not trainable:
        return grads
    widths = net.stage_widths
    top = trace.stage
    first = trainable[0]
    if trainable[-1] > top:
        raise ValueError("trainable stage lies beyond the traced stage")
    col0 = widths[first - 2] if first > 1 else 0
    width = widths[top - 1]

    def span(k):  # 1-based stage -> column slice
        return (widths[k - 2] if k > 1 else 0), widths[k - 1]

    last = trace.acts[-1]
    dh = np.empty((dy.shape[0], width - col0), dtype=DTYPE)
    for k in range(first, top + 1):
        lo, hi = span(k)
        out_w = net.stages[k - 1].out
        if k in trainable:
            grads[("V", k, net.depth)] = dy.T @ last[:, lo:hi]
        dh[:, lo - col0:hi - col0] = dy @ out_w

    for layer in range(net.depth - 1, -1, -1):
        du = dh * np.cos(trace.args[layer][:, col0:width])
        if layer == 0:
            du *= net.omega0
        inp = trace.coords if layer == 0 else trace.acts[layer - 1]
        if layer > 0:
            dh = np.zeros_like(du)
        for k in range(first, top + 1):
            lo, hi = span(k)
            du_k = du[:, lo - col0:hi - col0]
            w = net.stages[k - 1].hidden[layer]
            pw = net.prev_width(layer, k)
            if k in trainable:
                grads[("W", k, layer)] = du_k.T @ inp[:, :pw]
                grads[("b", k, layer)] = du_k.sum(axis=0)
            if layer > 0 and pw > col0:
                dh[:, :pw - col0] += du_k @ w[:, col0:pw]
    return grads


def backward(net: StreamableNet, coords, targets, stage: int | None = None, loss=None,
             trainable=None):
    """Loss value and exact gradients for the unfrozen stages ``<= stage``.

    ``loss`` is a :class:`snf.training.LossSpec` (full MSE when omitted).
    """
    from snf.training import LossSpec, loss_and_grad

    stage = net.check_stage(stage)
    x = _coords(net, coords)
    y = as_matrix(targets)
    if y.shape != (x.shape[0], net.out_dim):
        raise ShapeError(f"targets shape {y.shape} != ({x.shape[0]}, {net.out_dim})")
    if trainable is None:
        trainable = [k for k in net.trainable_stages() if k <= stage]
    trace = Trace(net, x, stage)
    pred = run_trace(net, trace)
    value, dy = loss_and_grad(pred, y, loss or LossSpec())
    return value, backprop(net, trace, dy, trainable)
