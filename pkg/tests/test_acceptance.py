"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary and on
stdout) before asserting.  The image criteria train on the 64x64 fixture at
desk scale; the heavy runs are module-scoped fixtures shared between tests.
"""
import os
import threading
import time

import numpy as np
import pytest

from snf import net as nn
from snf.codec import DecodeError, decode_prefix, pack
from snf.config import load_config, parse_config
from snf.experiment import (efficiency_table, extent_mask, fit, grid_coords, seam_statistic,
                            strip_edges)
from snf.metrics import dft_1d, max_drawdown, psnr, spectral_centroid
from snf.signals import moving_square, to_unit, write_frames
from snf.tensor_core import Rng
from snf.training import LossSpec, StagePlan, TrainConfig, loss_full, loss_masked, matched_width, \
    train_stage
from snf.transport import fetch, listen, serve_bytes

from conftest import ACCEPTANCE_LINES, FIXTURES, random_net
from oracles import finite_difference, naive_forward

IMAGE = os.path.join(FIXTURES, "astronaut64.ppm")
SEEDS = (0, 1, 2)

# reference run of the spectral-growing setup below (seed 0); asserted within +-0.5 dB
GOLDEN_PSNR = (18.565, 23.593, 24.713, 31.915)


def record(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def image_cfg(**extra):
    keys = {"task": "image", "signal": IMAGE, "depth": 3, "lr": "2e-4", "log_every": 50, **extra}
    return parse_config("\n".join(f"{k} = {v}" for k, v in keys.items()))


@pytest.fixture(scope="module")
def spectral_run():
    t = time.perf_counter()
    result = fit(image_cfg(widths="16, 32, 48, 64", epochs="2000, 2000, 2000, 2000"))
    return result, time.perf_counter() - t


# --- 1 --------------------------------------------------------------------------

def _random_plan(seed):
    g = np.random.default_rng(seed)
    depth = int(g.integers(1, 4))
    stages = int(g.integers(1, 4))
    widths = np.sort(g.choice(np.arange(1, 17), size=stages, replace=False))
    return depth, tuple(int(w) for w in widths), int(g.integers(1, 4)), int(g.integers(1, 4))


def test_gradient_correctness():
    t = time.perf_counter()
    worst, checked = 0.0, 0
    for seed in range(20):
        depth, widths, in_dim, out_dim = _random_plan(seed)
        net = random_net(100 + seed, in_dim, out_dim, depth, widths)
        net.unfreeze()  # check every block, not only the newest stage
        x = Rng(seed).uniform(-1, 1, (8, in_dim))
        y = Rng(seed + 50).uniform(-1, 1, (8, out_dim))
        _, grads = nn.backward(net, x, y)
        assert set(grads) == set(net.params())
        for key, g in grads.items():
            fd = finite_difference(net, x, y, net.num_stages, key, eps=1e-5)
            scale = np.maximum(np.abs(g), np.abs(fd))
            # entries whose true gradient vanishes are compared absolutely
            rel = np.abs(g - fd) / np.where(scale > 1e-8, scale, 1.0)
            worst = max(worst, float(rel.max()))
            checked += g.size
    elapsed = time.perf_counter() - t
    ok = worst < 1e-4 and elapsed < 30
    record(1, ok, f"{checked} gradient entries on 20 nets, max relative error {worst:.2e}, "
                  f"{elapsed:.1f} s")
    assert ok


def test_gradients_at_finer_step():
    # same nets with a smaller step: separates finite-difference truncation error
    # (which grows with omega0 cubed in the first layer) from analytic mistakes
    worst = 0.0
    for seed in range(20):
        depth, widths, in_dim, out_dim = _random_plan(seed)
        net = random_net(100 + seed, in_dim, out_dim, depth, widths)
        net.unfreeze()
        x = Rng(seed).uniform(-1, 1, (8, in_dim))
        y = Rng(seed + 50).uniform(-1, 1, (8, out_dim))
        _, grads = nn.backward(net, x, y)
        for key, g in grads.items():
            fd = finite_difference(net, x, y, net.num_stages, key, eps=1e-6)
            scale = np.maximum(np.abs(g), np.abs(fd))
            rel = np.abs(g - fd) / np.where(scale > 1e-8, scale, 1.0)
            worst = max(worst, float(rel.max()))
    assert worst < 1e-5


# --- 2 --------------------------------------------------------------------------

def test_structural_invariants():
    t = time.perf_counter()
    x = Rng(7).uniform(-1, 1, (64, 2))
    checks = {}

    net = random_net(3, widths=(5, 9))
    grown = nn.grow(net, 14, Rng(4))
    checks["growth no-op"] = np.array_equal(nn.forward(grown, x), nn.forward(net, x))

    y = Rng(8).uniform(-1, 1, (64, 3))
    before = {k: v.copy() for k, v in grown.params([1, 2]).items()}
    prefix = nn.forward(grown, x, 2)
    from snf.signals import SampledSignal
    train_stage(grown, SampledSignal(x, y, (64,)), None, TrainConfig(lr=1e-3, epochs=20))
    after = grown.params([1, 2])
    checks["frozen prefix bit-identical"] = (
        all(np.array_equal(before[k], after[k]) for k in before)
        and np.array_equal(nn.forward(grown, x, 2), prefix))

    deep = random_net(5, widths=(3, 6, 8, 11))
    total = nn.forward(deep, x, 1)
    worst = 0.0
    for k in range(2, 5):
        total = total + nn.forward_residual(deep, x, k)
        worst = max(worst, float(np.max(np.abs(total - nn.forward(deep, x, k)))))
    checks["residual telescoping"] = worst < 1e-12

    flat = max(float(np.max(np.abs(nn.forward(deep, x, k) - naive_forward(deep, x, k))))
               for k in range(1, 5))
    checks["flattening"] = flat < 1e-12

    pred = nn.forward(deep, x)
    checks["masked -> full"] = loss_masked(pred, y, np.ones(64, bool)) == loss_full(pred, y)

    elapsed = time.perf_counter() - t
    ok = all(checks.values()) and elapsed < 10
    failed = [k for k, v in checks.items() if not v]
    record(2, ok, f"{len(checks)} invariants, telescoping {worst:.1e}, flattening {flat:.1e}, "
                  f"{elapsed:.1f} s" + (f", failed: {failed}" if failed else ""))
    assert ok


# --- 3 --------------------------------------------------------------------------

@pytest.mark.slow
def test_sinusoid_growth():
    cfg = load_config("preset:sinusoid")
    t = time.perf_counter()
    result = fit(cfg)
    elapsed = time.perf_counter() - t
    sig, net = result.signal, result.net
    mses = [r.mse for r in result.report.rows]
    coords = grid_coords(sig.grid_shape)
    centroids = [spectral_centroid(dft_1d(nn.forward_residual(net, coords, k))) for k in (2, 3, 4)]
    decreasing = all(b < a for a, b in zip(mses, mses[1:]))
    increasing = all(b > a for a, b in zip(centroids, centroids[1:]))
    ratio = mses[3] / mses[0]  # scale-free: raw-scale MSE is a constant multiple
    ok = decreasing and increasing and ratio < 0.5 and elapsed < 120
    record(3, ok, f"stage MSE {['%.3g' % m for m in mses]}, residual centroids "
                  f"{['%.1f' % c for c in centroids]}, stage4/stage1 {ratio:.3f}, {elapsed:.1f} s")
    assert ok


# --- 4 --------------------------------------------------------------------------

@pytest.mark.slow
def test_spectral_growing(spectral_run):
    result, elapsed = spectral_run
    p = [r.psnr for r in result.report.rows]
    monotone = all(b >= a for a, b in zip(p, p[1:]))
    gain = p[3] - p[0]
    golden = all(abs(a - b) <= 0.5 for a, b in zip(p, GOLDEN_PSNR))
    ok = monotone and gain >= 2.0 and golden and elapsed < 600
    record(4, ok, f"PSNR {['%.2f' % v for v in p]} dB, gain {gain:.2f} dB, "
                  f"goldens {'match' if golden else 'differ'}, {elapsed:.0f} s")
    assert ok


# --- 5 --------------------------------------------------------------------------

@pytest.mark.slow
def test_progressive_beats_slimmable(spectral_run):
    result, _ = spectral_run
    slim = fit(image_cfg(mode="slimmable", widths="16, 32, 48, 64",
                         epochs="2000, 2000, 2000, 2000"))
    prog, sl = result.report.rows[-1].psnr, slim.report.rows[-1].psnr
    ok = prog - sl >= 0.5
    record(5, ok, f"progressive {prog:.2f} dB vs slimmable {sl:.2f} dB, margin {prog - sl:.2f} dB")
    assert ok


# --- 6 --------------------------------------------------------------------------

@pytest.mark.slow
def test_spatial_growing():
    cfg = image_cfg(growing="spatial", widths="32, 64", epochs="2000, 2000")
    result = fit(cfg)
    sig, net = result.signal, result.net
    outside = ~extent_mask(cfg, sig, 1)
    leak = float(np.mean(np.abs(nn.forward(net, sig.coords[outside], 1))))
    h, w = sig.grid_shape
    stitched = to_unit(nn.forward(net, sig.coords, 2)).reshape(h, w, -1)
    seam, interior = seam_statistic(stitched, strip_edges(w, 2))
    ok = leak < 0.05 and seam <= 2 * interior
    record(6, ok, f"mean |f| outside strip 1 = {leak:.4f}, boundary jump {seam:.4f} vs "
                  f"interior median {interior:.4f} (ratio {seam / interior:.2f})")
    assert ok


# --- 7 --------------------------------------------------------------------------

@pytest.mark.slow
def test_temporal_growing(tmp_path):
    frames = tmp_path / "square"
    write_frames(frames, list(moving_square(frames=8, size=32, square=8)))
    cfg = parse_config(f"task = video\nsignal = {frames}\ngrowing = temporal\nframes_per_stage = 4\n"
                       "depth = 3\nwidths = 48, 96\nepochs = 1000, 1000\nlr = 2e-4\nlog_every = 50")
    result = fit(cfg)
    p = [r.psnr for r in result.report.rows]
    ok = all(v >= 30.0 for v in p)
    record(7, ok, f"stage 1 on frames 1-4: {p[0]:.2f} dB, stage 2 on frames 1-8: {p[1]:.2f} dB")
    assert ok


# --- 8 --------------------------------------------------------------------------

@pytest.mark.slow
def test_zero_init_not_worse_than_siren_init(spectral_run):
    finals = {"zero": [], "siren": []}
    for seed in SEEDS:
        for mode in finals:
            if seed == 0 and mode == "zero":
                result = spectral_run[0]  # identical configuration
            else:
                result = fit(image_cfg(widths="16, 32, 48, 64", epochs="2000, 2000, 2000, 2000",
                                       seed=seed, init_mode=mode))
            finals[mode].append(result.report.rows[-1].psnr)
    zero, siren = np.mean(finals["zero"]), np.mean(finals["siren"])
    ok = zero >= siren
    record(8, ok, f"mean final PSNR zero-init {zero:.2f} dB vs siren-init {siren:.2f} dB "
                  f"(per seed {['%.2f' % v for v in finals['zero']]} / "
                  f"{['%.2f' % v for v in finals['siren']]})")
    assert ok


# --- 9 --------------------------------------------------------------------------

@pytest.mark.slow
def test_individual_less_stable_than_progressive():
    # lr 1e-3: at 2e-4 neither curve dips within a desk-scale budget
    widths, epochs, lr = "16, 32, 48, 64", 500, "1e-3"
    prog_dd, ind_dd = [], []
    for seed in SEEDS:
        prog = fit(image_cfg(widths=widths, epochs=", ".join([str(epochs)] * 4), lr=lr,
                             seed=seed, log_every=10))
        prog_dd.append(max_drawdown(prog.report.psnr_curve()))
        # largest baseline: one plain net matched to the full streamable model, same epoch total
        width = matched_width(nn.param_count(prog.net), 2, 3, 3)
        ind = fit(image_cfg(mode="individual", widths=width, epochs=4 * epochs, lr=lr,
                            seed=seed, log_every=10))
        ind_dd.append(max_drawdown(ind.report.psnr_curve()))
    p, i = float(np.median(prog_dd)), float(np.median(ind_dd))
    ok = i > p
    record(9, ok, f"median PSNR drawdown individual {i:.3f} dB vs progressive {p:.3f} dB "
                  f"(per seed {['%.3f' % v for v in ind_dd]} / {['%.3f' % v for v in prog_dd]})")
    assert ok


# --- 10 -------------------------------------------------------------------------

def test_codec_and_transport():
    t = time.perf_counter()
    cfg = image_cfg(widths="8, 16, 24", epochs="150, 150, 150", lr="1e-3")
    result = fit(cfg)
    net, sig = result.net, result.signal
    data = pack(net, sig.grid_shape, result.value_range)

    exact = True
    for k in range(1, net.num_stages + 1):
        back = decode_prefix(data, k)
        pa, pb = net.params(range(1, k + 1)), back.params()
        exact &= pa.keys() == pb.keys() and all(np.array_equal(pa[key], pb[key]) for key in pa)
        exact &= np.array_equal(nn.forward(back, sig.coords), nn.forward(net, sig.coords, k))

    missed = 0
    for pos in range(len(data)):
        bad = bytearray(data)
        bad[pos] ^= 0xFF
        try:
            decode_prefix(bytes(bad))
            missed += 1
        except DecodeError:
            pass

    srv = listen(0)
    port = srv.getsockname()[1]
    server = threading.Thread(target=serve_bytes, args=(srv, data))
    server.start()
    target = to_unit(sig.values)
    curve = []
    fetched = fetch("127.0.0.1", port,
                    on_chunk=lambda k, n: curve.append(psnr(np.clip(to_unit(nn.forward(n, sig.coords)), 0, 1),
                                                            target)))
    server.join()
    srv.close()
    monotone = len(curve) == net.num_stages and all(b >= a for a, b in zip(curve, curve[1:]))
    elapsed = time.perf_counter() - t
    ok = exact and missed == 0 and monotone and not fetched.truncated and elapsed < 10
    record(10, ok, f"prefix decode bit-exact: {exact}, undetected byte corruptions "
                   f"{missed}/{len(data)}, fetched PSNR {['%.2f' % v for v in curve]}, {elapsed:.1f} s")
    assert ok


# --- 11 -------------------------------------------------------------------------

def test_parameter_efficiency():
    rows = efficiency_table([4 * k for k in range(1, 16)], in_dim=2, out_dim=3, depth=3)
    ratios = [r[3] for r in rows]
    exceeds = all(r[2] > r[1] for r in rows[1:])
    increasing = all(b > a for a, b in zip(ratios, ratios[1:]))
    ok = exceeds and increasing
    record(11, ok, f"15 stages: streamable {rows[-1][1]} params vs cumulative individual "
                   f"{rows[-1][2]}, ratio x{ratios[1]:.2f} at stage 2 rising to x{ratios[-1]:.2f}")
    assert ok
