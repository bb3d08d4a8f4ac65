"""Reconstruction quality measures for (B, H, W) cubes on a [0, 1] range.

PSNR is band-mean by default: bands are scored independently and averaged,
which matches per-band noise levels better than one cube-wide MSE. A band
with zero error would be infinite, so such bands are excluded from the mean
and reported through a flag instead. SSIM uses the standard 11x11 Gaussian
window (sigma 1.5, C1 = 0.01^2, C2 = 0.03^2) evaluated only where the window
fits entirely inside the band. SAM is the mean per-pixel angle between the
two spectra; pixels where either spectrum has zero norm are skipped and
counted.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SAM_EPS = 1e-12


def _check_pair(xhat, x, min_dims=3):
    xhat = np.asarray(xhat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if xhat.shape != x.shape:
        raise ShapeError(f"shape mismatch: {xhat.shape} vs {x.shape}")
    if xhat.ndim != min_dims:
        raise ShapeError(f"expected a (B, H, W) cube, got {xhat.shape}")
    return xhat, x


def band_psnr(xhat, x):
    """Per-band 10*log10(1/MSE_b); +inf where a band matches exactly."""
    xhat, x = _check_pair(xhat, x)
    d = xhat - x
    mse = np.mean(d * d, axis=(1, 2))
    out = np.full(mse.shape, np.inf)
    nz = mse > 0
    out[nz] = 10.0 * np.log10(1.0 / mse[nz])
    return out


def psnr(xhat, x, per_band=True):
    """Band-mean PSNR in dB; set per_band=False for one cube-wide MSE."""
    if not per_band:
        xhat, x = _check_pair(xhat, x)
        d = xhat - x
        mse = float(np.mean(d * d))
        return np.inf if mse == 0 else 10.0 * np.log10(1.0 / mse)
    vals = band_psnr(xhat, x)
    finite = np.isfinite(vals)
    if not finite.any():
        return np.inf
    return float(np.mean(vals[finite]))


def psnr_report(xhat, x):
    """(band-mean PSNR, per-band values, number of infinite bands)."""
    vals = band_psnr(xhat, x)
    finite = np.isfinite(vals)
    mean = float(np.mean(vals[finite])) if finite.any() else np.inf
    return mean, vals, int(np.sum(~finite))


def _gaussian_taps():
    half = SSIM_WINDOW // 2
    i = np.arange(SSIM_WINDOW, dtype=np.float64) - half
    g = np.exp(-(i * i) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return g / g.sum()


def _window_mean(img, taps):
    # boundary mode is irrelevant: callers crop to fully-valid centers
    t = ndimage.correlate1d(img, taps, axis=0, mode="nearest")
    return ndimage.correlate1d(t, taps, axis=1, mode="nearest")


def ssim(xhat, x):
    """Mean structural similarity over bands, valid-window region only."""
    xhat, x = _check_pair(xhat, x)
    b, h, w = x.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(
            f"bands are {h}x{w}; SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}"
        )
    taps = _gaussian_taps()
    half = SSIM_WINDOW // 2
    sl = (slice(half, h - half), slice(half, w - half))
    vals = np.empty(b)
    for bi in range(b):
        a = xhat[bi]
        r = x[bi]
        mu1 = _window_mean(a, taps)[sl]
        mu2 = _window_mean(r, taps)[sl]
        e11 = _window_mean(a * a, taps)[sl]
        e22 = _window_mean(r * r, taps)[sl]
        e12 = _window_mean(a * r, taps)[sl]
        v1 = e11 - mu1 * mu1
        v2 = e22 - mu2 * mu2
        cov = e12 - mu1 * mu2
        num = (2 * mu1 * mu2 + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mu1 * mu1 + mu2 * mu2 + SSIM_C1) * (v1 + v2 + SSIM_C2)
        vals[bi] = np.mean(num / den)
    return float(np.mean(vals))


def sam_report(xhat, x):
    """(mean spectral angle in radians, number of skipped zero-norm pixels)."""
    xhat, x = _check_pair(xhat, x)
    if x.shape[0] < 2:
        raise ShapeError("SAM needs at least 2 bands")
    a = xhat.reshape(x.shape[0], -1)
    r = x.reshape(x.shape[0], -1)
    na = np.linalg.norm(a, axis=0)
    nr = np.linalg.norm(r, axis=0)
    keep = (na > 0) & (nr > 0)
    skipped = int(np.sum(~keep))
    if not keep.any():
        return 0.0, skipped
    ak, rk = a[:, keep], r[:, keep]
    dot = np.sum(ak * rk, axis=0)
    # the guard only floors the denominator: identical spectra stay at
    # cos = 1 exactly, so the angle is 0 rather than ~sqrt(eps)
    den = np.maximum(na[keep] * nr[keep], SAM_EPS)
    ang = np.arccos(np.clip(dot / den, -1.0, 1.0))
    # arccos near 1 amplifies ulp-level rounding in dot/den; equal spectra
    # have angle 0 by definition, not ~1e-8
    ang[np.all(ak == rk, axis=0)] = 0.0
    return float(np.mean(ang)), skipped


def sam(xhat, x):
    return sam_report(xhat, x)[0]


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    sam: float
    per_band_psnr: list = field(default_factory=list)
    infinite_bands: int = 0
    sam_skipped: int = 0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            w.writerow(["psnr", repr(self.psnr)])
            w.writerow(["ssim", repr(self.ssim)])
            w.writerow(["sam", repr(self.sam)])
            w.writerow(["infinite_bands", self.infinite_bands])
            w.writerow(["sam_skipped", self.sam_skipped])
            for i, v in enumerate(self.per_band_psnr):
                w.writerow([f"psnr_band_{i}", repr(v)])

    def summary(self):
        return (
            f"psnr {self.psnr:.4f} dB  ssim {self.ssim:.6f}  sam {self.sam:.6f} rad"
        )


def evaluate(xhat, x):
    mean, per_band, n_inf = psnr_report(xhat, x)
    s = ssim(xhat, x)
    angle, skipped = sam_report(xhat, x)
    return MetricReport(
        psnr=mean,
        ssim=s,
        sam=angle,
        per_band_psnr=[float(v) for v in per_band],
        infinite_bands=n_inf,
        sam_skipped=skipped,
    )
