"""``snf`` command line: fit, eval, residual, pack, decode, serve, fetch, spectrum.

Exit codes: 0 success, 2 usage or config error, 3 training diverged,
4 I/O or stream decode error.  ``SNF_LOG`` sets the log level (default WARNING).
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from snf import codec, transport
from snf import net as nn
from snf.config import ConfigError, load_config
from snf.experiment import evaluate, fit, grid_coords, load_signal
from snf.metrics import MetricsReport, dft_1d, psnr, radial_profile, spectral_centroid, spectrum_2d
from snf.signals import (PnmError, FrameFormatError, load_image_grid, load_video_grid,
                         quantize, read_pnm, to_unit, write_frames, write_pnm)
from snf.tensor_core import Rng
from snf.training import TrainingDiverged

log = logging.getLogger("snf")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


# --- helpers ------------------------------------------------------------------

def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _write_bytes(path, data: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(data)


def _physical(values, vrange) -> np.ndarray:
    lo, hi = vrange
    return lo + to_unit(values) * (hi - lo)


def write_reconstruction(path: str, values, grid_shape, vrange) -> str:
    """Dump network outputs on a grid: PPM/PGM for images, a frame directory for videos, CSV for 1D.

    ``path`` is taken without extension; the written path is returned.
    """
    grid_shape = tuple(grid_shape)
    values = np.asarray(values, dtype=np.float64)
    if len(grid_shape) == 1:
        out = path + ".csv"
        x = np.arange(grid_shape[0]) / grid_shape[0]
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x"] + [f"value{c}" for c in range(values.shape[1])])
            for xi, row in zip(x, _physical(values, vrange)):
                w.writerow([repr(float(xi))] + [repr(float(v)) for v in row])
        return out
    img = quantize(to_unit(values)).reshape(grid_shape + (values.shape[1],))
    if len(grid_shape) == 2:
        out = path + (".pgm" if values.shape[1] == 1 else ".ppm")
        write_pnm(out, img)
        return out
    write_frames(path, list(img))
    return path


def _header_grid(header: codec.StreamHeader):
    if not header.grid_shape:
        raise UsageError("stream carries no sample grid; pass --signal or --config")
    return header.grid_shape


def _reference(args, net: nn.StreamableNet):
    """Evaluation signal plus optional config from ``--config`` / ``--signal``."""
    cfg = None
    if getattr(args, "config", None):
        overrides = {"signal": args.signal} if args.signal else None
        cfg = load_config(args.config, overrides)
        signal = load_signal(cfg, Rng(cfg.seed))
    elif getattr(args, "signal", None):
        signal = load_image_grid(args.signal) if os.path.isfile(args.signal) \
            else load_video_grid(args.signal)
    else:
        return None, None
    if signal.coords.shape[1] != net.in_dim or signal.channels != net.out_dim:
        raise UsageError(f"signal has {signal.coords.shape[1]} inputs / {signal.channels} channels, "
                         f"model expects {net.in_dim} / {net.out_dim}")
    return signal, cfg


# --- commands -------------------------------------------------------------------

def cmd_fit(args) -> int:
    overrides = {}
    if args.signal:
        overrides["signal"] = args.signal
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    cfg = load_config(args.config, overrides)
    result = fit(cfg)
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    sig = result.signal
    for i, net in enumerate(result.nets, 1):
        name = "model.snf" if net is result.net else f"model_{i}.snf"
        _write_bytes(os.path.join(out, name), codec.pack(net, sig.grid_shape, result.value_range))
    result.report.write_series_csv(os.path.join(out, "metrics.csv"))
    result.report.write_rows_csv(os.path.join(out, "stages.csv"))
    grid = sig.grid_shape
    coords = grid_coords(grid)  # randomly sampled 1D signals are reconstructed on the regular grid
    for k, (net, prefix) in enumerate(result.stage_nets, 1):
        write_reconstruction(os.path.join(out, f"recon_stage{k}"), nn.forward(net, coords, prefix),
                             grid, result.value_range)
    for row in result.report.rows:
        print(_row_text(row))
    return EXIT_OK


def _row_text(row) -> str:
    text = f"stage {row.stage}: params {row.params}  mse {row.mse:.6g}  psnr {row.psnr:.2f} dB"
    if row.ssim is not None:
        text += f"  ssim {row.ssim:.4f}"
    return text


def cmd_eval(args) -> int:
    data = _read(args.model)
    net = codec.decode_prefix(data, args.stage)
    signal, cfg = _reference(args, net)
    if signal is None:
        raise UsageError("eval needs --signal or --config")
    stages = [args.stage] if args.stage else None
    report = MetricsReport(evaluate(net, signal, cfg, stages))
    for row in report.rows:
        print(_row_text(row))
    if args.csv:
        report.write_rows_csv(args.csv)
    return EXIT_OK


def cmd_residual(args) -> int:
    data = _read(args.model)
    header, _ = codec.read_header(data)
    if not 2 <= args.stage <= header.num_stages:
        raise UsageError(f"residual stage must be in 2..{header.num_stages}, got {args.stage}")
    net = codec.decode_prefix(data, args.stage)
    grid = _header_grid(header)
    r = nn.forward_residual(net, grid_coords(grid), args.stage)
    np.save(args.out + ".npy", r)
    if len(grid) == 1:
        lo, hi = header.value_range
        path = _write_residual_csv(args.out, r * (hi - lo) / 2.0)
    else:
        # residuals are differences in [-1, 1] units; shown as 0.5 + r / 2 so zero is mid gray
        path = write_reconstruction(args.out, r, grid, (0.0, 1.0))
    print(path)
    return EXIT_OK


def _write_residual_csv(path, values) -> str:
    out = path + ".csv"
    n = values.shape[0]
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x"] + [f"residual{c}" for c in range(values.shape[1])])
        for j, row in enumerate(values):
            w.writerow([repr(j / n)] + [repr(float(v)) for v in row])
    return out


def cmd_pack(args) -> int:
    data = _read(args.model)
    header, _ = codec.read_header(data)
    net = codec.decode_prefix(data, args.stages)
    packed = codec.pack(net, header.grid_shape, header.value_range, args.f32)
    _write_bytes(args.out, packed)
    print(f"{args.out}: {net.num_stages} stages, {len(packed)} bytes")
    return EXIT_OK


def cmd_decode(args) -> int:
    data = _read(args.model)
    header, _ = codec.read_header(data)
    net = codec.decode_prefix(data, args.stage)
    print(f"{args.model}: K={header.num_stages} widths={header.stage_widths} "
          f"in={header.in_dim} out={header.out_dim} depth={header.depth} omega0={header.omega0:g}")
    print(f"decoded stages 1..{net.num_stages}: {nn.param_count(net)} params")
    if args.out:
        grid = _header_grid(header)
        print(write_reconstruction(args.out, nn.forward(net, grid_coords(grid)), grid,
                                   header.value_range))
    return EXIT_OK


def cmd_serve(args) -> int:
    def ready(port):
        print(f"serving {args.model} on {args.host}:{port}", flush=True)

    sent = transport.serve(args.model, args.port, args.host, args.stop_after, args.delay, ready)
    print(f"sent {sent} chunks")
    return EXIT_OK


def cmd_fetch(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    reference = None
    if args.signal:
        reference = load_image_grid(args.signal) if os.path.isfile(args.signal) \
            else load_video_grid(args.signal)
    state = {}

    def on_header(header):
        state["header"] = header
        if header.grid_shape:
            state["coords"] = grid_coords(header.grid_shape)

    def on_chunk(stage, net):
        header = state["header"]
        if "coords" not in state:
            print(f"chunk {stage}: decoded", flush=True)
            return
        y = nn.forward(net, state["coords"])
        path = write_reconstruction(os.path.join(args.out_dir, f"recon_chunk{stage}"), y,
                                    header.grid_shape, header.value_range)
        line = f"chunk {stage}: {path}"
        if reference is not None and reference.values.shape == y.shape:
            line += f"  psnr {psnr(np.clip(to_unit(y), 0, 1), to_unit(reference.values)):.2f} dB"
        print(line, flush=True)

    result = transport.fetch(args.host, args.port, args.k_max, on_chunk, args.timeout, on_header)
    _write_bytes(os.path.join(args.out_dir, "received.snf"), result.raw)
    if result.truncated:
        print(f"warning: {result.notice}", file=sys.stderr)
    total = result.header.num_stages if result.header else "?"
    print(f"received {len(result.nets)} of {total} stages")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    """Spectrum of an image, a 1D CSV column, or a decoded model output (optionally a residual)."""
    if args.input.endswith(".snf"):
        data = _read(args.input)
        header, _ = codec.read_header(data)
        grid = _header_grid(header)
        stage = args.stage or header.num_stages
        net = codec.decode_prefix(data, stage)
        coords = grid_coords(grid)
        y = nn.forward_residual(net, coords, stage) if args.residual else nn.forward(net, coords, stage)
        if len(grid) == 1:
            values = y[:, 0]
        elif len(grid) == 2:
            values = y.reshape(tuple(grid) + (y.shape[1],))
        else:
            raise UsageError("spectrum supports 1D and image models")
    elif args.input.endswith(".csv"):
        with open(args.input, newline="") as fh:
            rows = list(csv.reader(fh))
        values = np.array([float(r[1]) for r in rows[1:]])
    else:
        values = read_pnm(args.input).astype(np.float64) / 255.0
    if np.ndim(values) == 1:
        mags = dft_1d(values)
        header_row, label = ["bin", "magnitude"], "bin"
    else:
        mags = radial_profile(spectrum_2d(values))
        header_row, label = ["radius", "magnitude"], "radius"
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header_row)
            for i, m in enumerate(mags):
                w.writerow([i, repr(float(m))])
    try:
        print(f"spectral centroid: {spectral_centroid(mags):.4f} ({label})")
    except ValueError:
        print("spectral centroid: undefined (zero spectrum)")
    return EXIT_OK


# --- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snf", description="Streamable neural fields.")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="train a model from a config file or preset:NAME")
    f.add_argument("config")
    f.add_argument("--signal", help="override the config's signal path")
    f.add_argument("--out-dir", help="override the config's out_dir")
    f.add_argument("--seed", type=int)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="per-stage metrics of a model against a signal")
    e.add_argument("model")
    e.add_argument("--stage", type=int, help="evaluate only this stage (default: all)")
    e.add_argument("--signal", help="image file or frame directory")
    e.add_argument("--config", help="config whose signal and growing extents to use")
    e.add_argument("--csv", help="write stage rows to this CSV")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("residual", help="dump the output contribution of one stage")
    r.add_argument("model")
    r.add_argument("--stage", type=int, required=True)
    r.add_argument("--out", required=True, help="output path without extension")
    r.set_defaults(func=cmd_residual)

    k = sub.add_parser("pack", help="rewrite a stream, optionally truncated or as f32")
    k.add_argument("model")
    k.add_argument("--out", required=True)
    k.add_argument("--stages", type=int)
    k.add_argument("--f32", action="store_true")
    k.set_defaults(func=cmd_pack)

    d = sub.add_parser("decode", help="decode a stream prefix and optionally reconstruct")
    d.add_argument("model")
    d.add_argument("--stage", type=int)
    d.add_argument("--out", help="reconstruction path without extension")
    d.set_defaults(func=cmd_decode)

    s = sub.add_parser("serve", help="stream a model to one TCP client")
    s.add_argument("model")
    s.add_argument("--port", type=int, default=7878)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--stop-after", type=int, help="drop the connection after N chunks")
    s.add_argument("--delay", type=float, default=0.0, help="seconds between chunks")
    s.set_defaults(func=cmd_serve)

    g = sub.add_parser("fetch", help="receive a stream, reconstructing after every chunk")
    g.add_argument("--host", default="127.0.0.1")
    g.add_argument("--port", type=int, default=7878)
    g.add_argument("--k-max", type=int)
    g.add_argument("--out-dir", default="fetched")
    g.add_argument("--signal", help="reference image or frame directory for PSNR")
    g.add_argument("--timeout", type=float, default=30.0)
    g.set_defaults(func=cmd_fetch)

    c = sub.add_parser("spectrum", help="DFT magnitude summary of an image, CSV or model")
    c.add_argument("input")
    c.add_argument("--stage", type=int)
    c.add_argument("--residual", action="store_true")
    c.add_argument("--out", help="CSV of magnitudes by bin or radius")
    c.set_defaults(func=cmd_spectrum)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SNF_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (codec.DecodeError, PnmError, FrameFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
