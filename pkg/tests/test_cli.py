import os
import threading

import numpy as np
import pytest

from snf import net as nn
from snf.cli import main
from snf.codec import decode_prefix
from snf.experiment import grid_coords
from snf.signals import load_image_grid, quantize, read_pnm, to_unit, write_pnm
from snf.transport import listen, serve_bytes


@pytest.fixture
def run(tmp_path):
    yy, xx = np.mgrid[0:12, 0:12] / 12
    img = quantize(np.stack([0.5 + 0.4 * np.sin(3 * xx), 0.5 + 0.3 * yy, xx * yy], -1))
    write_pnm(tmp_path / "tiny.ppm", img)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"task = image\nsignal = {tmp_path / 'tiny.ppm'}\nwidths = 8, 16, 24\n"
                   f"epochs = 30, 30, 30\nlr = 1e-3\nlog_every = 10\nout_dir = {tmp_path / 'out'}\n")
    return tmp_path


def fit(run, capsys):
    assert main(["fit", str(run / "run.cfg")]) == 0
    return capsys.readouterr().out


def test_fit_writes_artifacts(run, capsys):
    out = fit(run, capsys)
    assert "stage 3:" in out
    files = set(os.listdir(run / "out"))
    assert {"model.snf", "metrics.csv", "stages.csv", "recon_stage1.ppm", "recon_stage3.ppm"} <= files
    header = (run / "out" / "metrics.csv").read_text().splitlines()[0]
    assert header == "epoch,stage,loss,psnr"
    assert (run / "out" / "stages.csv").read_text().startswith("stage,params,mse,psnr,ssim")
    assert read_pnm(run / "out" / "recon_stage2.ppm").shape == (12, 12, 3)


def test_fit_is_deterministic(run, capsys):
    fit(run, capsys)
    first = (run / "out" / "model.snf").read_bytes()
    fit(run, capsys)
    assert (run / "out" / "model.snf").read_bytes() == first


def test_eval_matches_fit_rows(run, capsys):
    fit(run, capsys)
    assert main(["eval", str(run / "out" / "model.snf"), "--signal", str(run / "tiny.ppm"),
                 "--csv", str(run / "eval.csv")]) == 0
    assert (run / "eval.csv").read_text() == (run / "out" / "stages.csv").read_text()
    assert main(["eval", str(run / "out" / "model.snf"), "--config", str(run / "run.cfg"),
                 "--stage", "2"]) == 0
    assert capsys.readouterr().out.splitlines()[-1].startswith("stage 2:")


def test_residuals_reconstruct_full_output(run, capsys):
    fit(run, capsys)
    model = str(run / "out" / "model.snf")
    net = decode_prefix((run / "out" / "model.snf").read_bytes())
    coords = grid_coords((12, 12))
    total = nn.forward(net, coords, 1)
    for k in (2, 3):
        assert main(["residual", model, "--stage", str(k), "--out", str(run / f"res{k}")]) == 0
        total = total + np.load(run / f"res{k}.npy")
        assert read_pnm(run / f"res{k}.ppm").shape == (12, 12, 3)
    full = quantize(to_unit(nn.forward(net, coords)))
    assert np.max(np.abs(quantize(to_unit(total)).astype(int) - full)) <= 1
    assert main(["residual", model, "--stage", "1", "--out", str(run / "r1")]) == 2
    assert "2..3" in capsys.readouterr().err


def test_pack_decode_round_trip(run, capsys):
    fit(run, capsys)
    model = str(run / "out" / "model.snf")
    small = str(run / "two.snf")
    assert main(["pack", model, "--out", small, "--stages", "2"]) == 0
    capsys.readouterr()
    main(["eval", small, "--signal", str(run / "tiny.ppm")])
    packed_rows = capsys.readouterr().out.splitlines()
    main(["eval", model, "--signal", str(run / "tiny.ppm")])
    assert capsys.readouterr().out.splitlines()[:2] == packed_rows
    assert main(["decode", model, "--stage", "2", "--out", str(run / "dec")]) == 0
    assert "K=3" in capsys.readouterr().out
    assert np.array_equal(read_pnm(run / "dec.ppm"), read_pnm(run / "out" / "recon_stage2.ppm"))
    assert main(["decode", model, "--stage", "5"]) == 4
    assert "K=3" in capsys.readouterr().err


def test_serve_fetch(run, capsys):
    fit(run, capsys)
    data = (run / "out" / "model.snf").read_bytes()
    srv = listen(0)
    port = srv.getsockname()[1]
    t = threading.Thread(target=serve_bytes, args=(srv, data))
    t.start()
    code = main(["fetch", "--port", str(port), "--out-dir", str(run / "got"),
                 "--signal", str(run / "tiny.ppm")])
    t.join()
    srv.close()
    assert code == 0
    out = capsys.readouterr().out
    psnrs = [float(line.split("psnr ")[1].split()[0]) for line in out.splitlines() if "psnr" in line]
    assert len(psnrs) == 3 and psnrs == sorted(psnrs)
    assert (run / "got" / "received.snf").read_bytes() == data
    assert sorted(os.listdir(run / "got")) == ["received.snf", "recon_chunk1.ppm",
                                               "recon_chunk2.ppm", "recon_chunk3.ppm"]


def test_spectrum(run, capsys):
    fit(run, capsys)
    csv_out = run / "spec.csv"
    assert main(["spectrum", str(run / "tiny.ppm"), "--out", str(csv_out)]) == 0
    assert "spectral centroid" in capsys.readouterr().out
    assert csv_out.read_text().startswith("radius,magnitude")
    assert main(["spectrum", str(run / "out" / "model.snf"), "--residual", "--stage", "2"]) == 0


def test_sinusoid_residual_csv(tmp_path, capsys):
    cfg = tmp_path / "s.cfg"
    cfg.write_text(f"task = sinusoid\nwidths = 4, 8\nepochs = 2, 2\nsamples = 64\n"
                   f"out_dir = {tmp_path / 'o'}\n")
    assert main(["fit", str(cfg)]) == 0
    assert main(["residual", str(tmp_path / "o" / "model.snf"), "--stage", "2",
                 "--out", str(tmp_path / "r")]) == 0
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "x,residual0" and len(lines) == 65
    assert main(["spectrum", str(tmp_path / "r.csv")]) == 0


def test_exit_codes(run, capsys, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("task = image\nwidths = 1\nbogus = 2\n")
    assert main(["fit", str(bad)]) == 2
    assert "bad.cfg:3" in capsys.readouterr().err
    wild = tmp_path / "wild.cfg"
    wild.write_text(f"task = image\nsignal = {run / 'tiny.ppm'}\nwidths = 8\nepochs = 200\n"
                    f"lr = 1000\nout_dir = {tmp_path / 'w'}\n")
    assert main(["fit", str(wild)]) == 3
    assert main(["decode", str(tmp_path / "missing.snf")]) == 4
    (tmp_path / "junk.snf").write_bytes(b"NOPE" + bytes(40))
    assert main(["decode", str(tmp_path / "junk.snf")]) == 4
    assert "magic" in capsys.readouterr().err
