"""Univariate Gaussian kernel density estimation and the truncation band.

The recruitment weights for a continuous covariate need the pool density
p(x), the 0.05/0.95 quantile band [x_l, x_u], the uniform height
q = 1/(x_u - x_l) and the constant c' = max over the band of q/p(x).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSample
from .pool import quantile

MIN_SAMPLE = 20
MIN_GRID_POINTS = 256
DEFAULT_GRID_POINTS = 1024
DENSITY_FLOOR = 1e-12
BAND_QUANTILES = (0.05, 0.95)

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
# Keeps the (grid x sample) temporaries around 8 MB.
_CHUNK_ELEMENTS = 1 << 20


def silverman_bandwidth(sample) -> float:
    """Silverman's rule of thumb, 0.9 * min(sd, IQR/1.34) * n^(-1/5).

    Falls back to the standard deviation when the IQR is zero.
    """
    x = np.asarray(sample, dtype=float)
    sd = float(np.std(x, ddof=1))
    q25, q75 = quantile(x, [0.25, 0.75])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * len(x) ** (-0.2)


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    sample: np.ndarray
    bandwidth: float

    @property
    def n(self) -> int:
        return len(self.sample)

    @property
    def support(self) -> tuple[float, float]:
        return float(self.sample[0]), float(self.sample[-1])

    def __call__(self, x) -> np.ndarray:
        """Exact kernel sum at each point of ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty(x.shape, dtype=float)
        flat_x, flat_out = x.ravel(), out.ravel()
        inv_h = 1.0 / self.bandwidth
        step = max(1, _CHUNK_ELEMENTS // max(1, self.n))
        for start in range(0, flat_x.size, step):
            z = flat_x[start:start + step, None] - self.sample[None, :]
            z *= inv_h
            np.square(z, out=z)
            z *= -0.5
            np.exp(z, out=z)
            flat_out[start:start + step] = z.sum(axis=1)
        out *= _INV_SQRT_2PI * inv_h / self.n
        return out


def kde_fit(sample, bandwidth: str | float = "silverman") -> DensityEstimate:
    """Gaussian KDE with Silverman's bandwidth or a fixed bandwidth ``h``."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise DegenerateSample("sample must be non-empty and finite")
    if x[0] == x[-1]:
        raise DegenerateSample("sample has zero standard deviation")
    if isinstance(bandwidth, str):
        if bandwidth.lower() != "silverman":
            raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
        if x.size < MIN_SAMPLE:
            raise DegenerateSample(
                f"need at least {MIN_SAMPLE} observations for a bandwidth rule, got {x.size}"
            )
        h = silverman_bandwidth(x)
        if not h > 0:
            raise DegenerateSample("bandwidth rule gave a non-positive bandwidth")
    else:
        h = float(bandwidth)
        if not h > 0:
            raise ValueError("fixed bandwidth must be positive")
    x.setflags(write=False)
    return DensityEstimate(x, h)


@dataclass(frozen=True, eq=False)
class TruncationBand:
    x_l: float
    x_u: float
    q: float
    c_prime: float
    grid: np.ndarray
    grid_density: np.ndarray

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= self.x_l) & (x <= self.x_u)

    def density(self, x) -> np.ndarray:
        """Density at in-band points, linearly interpolated from the band grid."""
        return np.interp(np.asarray(x, dtype=float), self.grid, self.grid_density)


def truncation_band(
    sample, estimate: DensityEstimate, grid_points: int = DEFAULT_GRID_POINTS
) -> TruncationBand:
    if grid_points < MIN_GRID_POINTS:
        raise ValueError(f"grid_points must be at least {MIN_GRID_POINTS}")
    x_l, x_u = (float(v) for v in quantile(sample, BAND_QUANTILES))
    if not x_u > x_l:
        raise DegenerateSample("0.05 and 0.95 quantiles coincide")
    q = 1.0 / (x_u - x_l)
    grid = np.linspace(x_l, x_u, grid_points)
    dens = np.maximum(estimate(grid), DENSITY_FLOOR)
    grid.setflags(write=False)
    dens.setflags(write=False)
    c_prime = float(np.max(q / dens))
    return TruncationBand(x_l, x_u, q, c_prime, grid, dens)
