"""Reconstruction quality (MSE / PSNR / SSIM) and spectrum summaries."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

PSNR_CAP = 99.0


@dataclass
class StageRow:
    stage: int
    params: int
    mse: float
    psnr: float
    ssim: float | None = None


@dataclass
class MetricsReport:
    rows: list[StageRow] = field(default_factory=list)
    series: list[tuple[int, int, float, float]] = field(default_factory=list)

    def log(self, epoch: int, stage: int, loss: float, psnr_db: float) -> None:
        self.series.append((epoch, stage, loss, psnr_db))

    def psnr_curve(self, stage: int | None = None) -> list[float]:
        return [p for _, s, _, p in self.series if stage is None or s == stage]

    def final_loss(self) -> float:
        return self.series[-1][2]

    def write_series_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "stage", "loss", "psnr"])
            for epoch, stage, loss, p in self.series:
                w.writerow([epoch, stage, repr(loss), repr(p)])

    def write_rows_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "params", "mse", "psnr", "ssim"])
            for r in self.rows:
                w.writerow([r.stage, r.params, repr(r.mse), repr(r.psnr),
                            "" if r.ssim is None else repr(r.ssim)])


def psnr_from_mse(mse: float, peak: float = 1.0) -> float:
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def psnr(pred, target, peak: float = 1.0) -> float:
    """PSNR in dB; identical inputs give the 99 dB cap."""
    return psnr_from_mse(mse(pred, target), peak)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    return g / g.sum()


def _local_mean(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(img, g, axis=0, mode="reflect")
    return ndimage.correlate1d(out, g, axis=1, mode="reflect")


def ssim(pred, target, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all pixels with a Gaussian window and reflected borders.

    Accepts ``H x W`` or ``H x W x C`` arrays; channels are averaged.
    """
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.ndim != 3 or min(a.shape[:2]) < win_size:
        raise ValueError(f"need an image of at least {win_size}x{win_size}, got {a.shape[:2]}")
    g = gaussian_window(win_size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    scores = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx, my = _local_mean(x, g), _local_mean(y, g)
        sxx = _local_mean(x * x, g) - mx * mx
        syy = _local_mean(y * y, g) - my * my
        sxy = _local_mean(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def dft_1d(values) -> np.ndarray:
    """Magnitudes of DFT bins ``0 .. N//2`` of a regularly sampled real sequence."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    return np.abs(np.fft.rfft(x))


def spectrum_2d(image) -> np.ndarray:
    """Centered 2D DFT magnitude; multi-channel input is averaged over channels first."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=2)
    if max(img.shape) > 512:
        raise ValueError("spectrum_2d supports grids up to 512x512")
    return np.abs(np.fft.fftshift(np.fft.fft2(img)))


def _radii(shape) -> np.ndarray:
    h, w = shape
    cy, cx = h // 2, w // 2
    yy, xx = np.indices(shape)
    return np.rint(np.hypot(yy - cy, xx - cx)).astype(int)


def radial_profile(spectrum) -> np.ndarray:
    """Mean magnitude over integer-radius annuli around the center bin."""
    spec = np.asarray(spectrum, dtype=np.float64)
    r = _radii(spec.shape)
    sums = np.bincount(r.ravel(), weights=spec.ravel())
    counts = np.bincount(r.ravel())
    return sums / np.maximum(counts, 1)


def high_frequency_fraction(image, radius: float) -> float:
    """Share of spectral energy (squared magnitude, DC excluded) at radius above ``radius``."""
    spec = spectrum_2d(image) ** 2
    r = _radii(spec.shape)
    spec[r == 0] = 0.0
    total = spec.sum()
    if total == 0:
        return 0.0
    return float(spec[r > radius].sum() / total)


def spectral_centroid(magnitudes) -> float:
    """Energy-weighted mean bin index."""
    energy = np.asarray(magnitudes, dtype=np.float64).ravel() ** 2
    total = energy.sum()
    if total == 0:
        raise ValueError("spectral centroid of an all-zero spectrum is undefined")
    return float(np.dot(np.arange(energy.size), energy) / total)


def max_drawdown(curve) -> float:
    """Largest drop of a curve below its running maximum."""
    c = np.asarray(curve, dtype=np.float64)
    if c.size == 0:
        return 0.0
    return float(np.max(np.maximum.accumulate(c) - c))
