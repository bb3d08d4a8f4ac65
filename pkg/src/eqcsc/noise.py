"""Seeded synthetic degradations for hyperspectral cubes.

Three generators cover the usual benchmark settings:

  * add_noniid_gaussian: per-band Gaussian noise with band stds drawn
    uniformly from a quoted 8-bit range.
  * add_mixture: Gaussian everywhere plus one extra defect per band, with
    the bands split into three random groups (impulse / stripes / deadline).
  * add_corr_variance: Gaussian whose band std follows a smooth bell curve
    over the spectral index.

Noise levels are quoted in 8-bit units (e.g. "sigma 15") and applied as
sigma/255 because cubes live on [0, 1]. Every generator clips its output to
[0, 1] once, after all degradations; impulse and deadline values are exact
0/1 and survive the clip. Each band consumes its own child stream spawned
from the seed, so results do not depend on band evaluation order.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

SCALE = 255.0
IMPULSE_LO = 0.1
IMPULSE_HI = 0.7
DEFECT_FRAC_LO = 0.05
DEFECT_FRAC_HI = 0.15
STRIPE_OFFSET = 0.25
MIXTURE_SIGMA_HI = 95.0


def _check_cube(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected a (bands, height, width) cube, got {x.shape}")
    return x


def clip01(x):
    return np.clip(x, 0.0, 1.0)


@dataclass
class BandDegradation:
    band: int
    sigma: float
    extra: str = ""
    params: str = ""


@dataclass
class DegradationReport:
    rows: list = field(default_factory=list)

    @property
    def sigmas(self):
        return np.array([r.sigma for r in self.rows])

    def extra_bands(self, kind):
        return [r.band for r in self.rows if r.extra == kind]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["band", "sigma", "extra_type", "params"])
            for r in self.rows:
                w.writerow([r.band, repr(r.sigma), r.extra, r.params])


def report_from_sigmas(sigmas):
    return DegradationReport(
        rows=[BandDegradation(i, float(s)) for i, s in enumerate(sigmas)]
    )


def impulse_band(band, ratio, rng):
    """Salt-and-pepper: a `ratio` fraction of pixels replaced by 0 or 1."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"impulse ratio must be in [0, 1], got {ratio}")
    h, w = band.shape
    n = h * w
    count = int(round(ratio * n))
    out = band.copy()
    if count:
        idx = rng.choice(n, size=count, replace=False)
        vals = rng.integers(0, 2, size=count).astype(np.float64)
        out.reshape(-1)[idx] = vals
    return out


def stripe_band(band, rng, lo=DEFECT_FRAC_LO, hi=DEFECT_FRAC_HI):
    """Constant offset from U[-STRIPE_OFFSET, STRIPE_OFFSET] added to a
    random `lo`..`hi` fraction of columns; returns (band, columns, offsets)."""
    w = band.shape[1]
    frac = rng.uniform(lo, hi)
    ncols = max(1, int(round(frac * w)))
    cols = rng.choice(w, size=ncols, replace=False)
    offsets = rng.uniform(-STRIPE_OFFSET, STRIPE_OFFSET, size=ncols)
    out = band.copy()
    out[:, cols] += offsets
    return out, cols, offsets


def deadline_band(band, rng, lo=DEFECT_FRAC_LO, hi=DEFECT_FRAC_HI):
    """A random `lo`..`hi` fraction of columns or rows zeroed out; returns
    (band, axis name, zeroed indices)."""
    h, w = band.shape
    axis = "cols" if rng.random() < 0.5 else "rows"
    frac = rng.uniform(lo, hi)
    size = w if axis == "cols" else h
    count = max(1, int(round(frac * size)))
    idx = rng.choice(size, size=count, replace=False)
    out = band.copy()
    if axis == "cols":
        out[:, idx] = 0.0
    else:
        out[idx, :] = 0.0
    return out, axis, idx


def _band_streams(seed, bands, controls):
    children = np.random.SeedSequence(seed).spawn(bands + controls)
    ctrl = [np.random.default_rng(c) for c in children[:controls]]
    per_band = children[controls:]
    return ctrl, per_band


def add_noniid_gaussian(x, lo, hi, seed):
    """Per-band Gaussian with sigma_b ~ U[lo, hi] (8-bit units); returns
    (noisy cube, drawn sigmas)."""
    x = _check_cube(x)
    if not 0.0 <= lo <= hi:
        raise ValueError(f"need 0 <= lo <= hi, got lo={lo}, hi={hi}")
    (ctrl,), streams = _band_streams(seed, x.shape[0], 1)
    sigmas = ctrl.uniform(lo, hi, size=x.shape[0])
    y = np.empty_like(x)
    for i in range(x.shape[0]):
        rng = np.random.default_rng(streams[i])
        y[i] = x[i] + rng.standard_normal(x[i].shape) * (sigmas[i] / SCALE)
    return clip01(y), sigmas


def add_mixture(x, seed):
    """Gaussian sigma ~ U[0, 95] on every band, then the bands are randomly
    partitioned into three near-equal groups: the first gets salt-and-pepper
    impulse with ratio ~ U[0.1, 0.7], the second additive column stripes,
    the third zeroed-out columns or rows. Returns (noisy cube, report)."""
    x = _check_cube(x)
    b = x.shape[0]
    if b < 3:
        raise ValueError(f"mixture needs at least 3 bands, got {b}")
    (ctrl,), streams = _band_streams(seed, b, 1)
    sigmas = ctrl.uniform(0.0, MIXTURE_SIGMA_HI, size=b)
    groups = np.array_split(ctrl.permutation(b), 3)
    extra = {}
    for kind, members in zip(("impulse", "stripes", "deadline"), groups):
        for i in members:
            extra[int(i)] = kind
    y = np.empty_like(x)
    report = DegradationReport()
    for i in range(b):
        rng = np.random.default_rng(streams[i])
        band = x[i] + rng.standard_normal(x[i].shape) * (sigmas[i] / SCALE)
        kind = extra[i]
        # impulse 0/1 values and deadline zeros are clip-invariant, so the
        # single clip at the end leaves them exact
        if kind == "impulse":
            ratio = rng.uniform(IMPULSE_LO, IMPULSE_HI)
            band = impulse_band(band, ratio, rng)
            params = f"ratio={ratio!r}"
        elif kind == "stripes":
            band, cols, _ = stripe_band(band, rng)
            params = f"ncols={cols.size}"
        else:
            band, axis, idx = deadline_band(band, rng)
            params = f"axis={axis};count={idx.size}"
        y[i] = band
        report.rows.append(BandDegradation(i, float(sigmas[i]), kind, params))
    return clip01(y), report


def corr_sigma_profile(bands, beta, eta):
    """Band stds beta * exp(-(i/B - 1/2)^2 / (4 eta^2)) in 8-bit units."""
    if beta <= 0 or eta <= 0:
        raise ValueError(f"beta and eta must be positive, got {beta}, {eta}")
    u = np.arange(bands, dtype=np.float64) / bands - 0.5
    return beta * np.exp(-(u * u) / (4.0 * eta * eta))


def add_corr_variance(x, beta, eta, seed):
    """Gaussian whose per-band std follows corr_sigma_profile; returns
    (noisy cube, sigmas)."""
    x = _check_cube(x)
    sigmas = corr_sigma_profile(x.shape[0], beta, eta)
    _, streams = _band_streams(seed, x.shape[0], 1)
    y = np.empty_like(x)
    for i in range(x.shape[0]):
        rng = np.random.default_rng(streams[i])
        y[i] = x[i] + rng.standard_normal(x[i].shape) * (sigmas[i] / SCALE)
    return clip01(y), sigmas


@dataclass
class NoiseSpec:
    pattern: str = "noniid"
    lo: float = 0.0
    hi: float = 55.0
    beta: float = 23.08
    eta: float = 0.157
    seed: int = 0

    def validate(self):
        if self.pattern not in ("noniid", "mixture", "corr"):
            raise ValueError(
                f"pattern must be noniid, mixture or corr, got {self.pattern!r}"
            )
        if not 0.0 <= self.lo <= self.hi:
            raise ValueError(f"need 0 <= lo <= hi, got lo={self.lo}, hi={self.hi}")
        if self.beta <= 0 or self.eta <= 0:
            raise ValueError(
                f"beta and eta must be positive, got {self.beta}, {self.eta}"
            )

    def apply(self, x):
        """Degrade a cube per this spec; returns (noisy cube, report)."""
        self.validate()
        if self.pattern == "noniid":
            y, sigmas = add_noniid_gaussian(x, self.lo, self.hi, self.seed)
            return y, report_from_sigmas(sigmas)
        if self.pattern == "mixture":
            return add_mixture(x, self.seed)
        y, sigmas = add_corr_variance(x, self.beta, self.eta, self.seed)
        return y, report_from_sigmas(sigmas)
