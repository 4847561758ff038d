"""Equirectangular environment light with luminance importance sampling.

The map is a z-up latitude-longitude grid: row i spans polar angle
theta in [i, i+1) * pi/H measured from +z, column j spans azimuth
phi in [j, j+1) * 2*pi/W - pi with phi = atan2(y, x). Radiance is piecewise
constant per texel; sampling draws a texel from the sine-weighted luminance
distribution (row marginal, then column conditional) and a uniform point
inside it, which makes the solid-angle pdf exactly
P(texel) * H * W / (2 * pi^2 * sin(theta)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..fileio import load_pfm, save_pfm
from .camera import RenderError

_LUMA = np.array([0.2126, 0.7152, 0.0722])
_MIN_SIN = 1e-12


@dataclass(frozen=True)
class EnvMap:
    """HDR radiance grid plus the CDF tables used for importance sampling."""

    radiance: np.ndarray
    prob: np.ndarray = field(init=False, repr=False)
    row_cdf: np.ndarray = field(init=False, repr=False)
    cond_cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rad = np.asarray(self.radiance, np.float64)
        if rad.ndim != 3 or rad.shape[2] != 3 or rad.shape[0] < 1 or rad.shape[1] < 1:
            raise RenderError("radiance must have shape (H, W, 3)")
        if not np.all(np.isfinite(rad)):
            raise RenderError("radiance must be finite")
        if rad.min() < 0:
            raise RenderError("radiance must be non-negative")
        rad = rad.copy()
        rad.flags.writeable = False
        object.__setattr__(self, "radiance", rad)

        h, w = rad.shape[:2]
        theta_rows = (np.arange(h) + 0.5) * np.pi / h
        weights = (rad @ _LUMA) * np.sin(theta_rows)[:, None]
        total = weights.sum()
        if total > 0:
            prob = weights / total
        else:
            prob = np.zeros((h, w))
        row_mass = prob.sum(axis=1)
        row_cdf = np.cumsum(row_mass)
        if total > 0:
            row_cdf[-1] = 1.0
        cond = np.where(row_mass[:, None] > 0, prob / np.maximum(row_mass, 1e-300)[:, None],
                        1.0 / w)
        cond_cdf = np.cumsum(cond, axis=1)
        cond_cdf[:, -1] = 1.0
        for name, value in (("prob", prob), ("row_cdf", row_cdf), ("cond_cdf", cond_cdf)):
            value.flags.writeable = False
            object.__setattr__(self, name, value)

    @classmethod
    def constant(cls, value, shape=(8, 16)) -> "EnvMap":
        value = np.asarray(value, np.float64) * np.ones(3)
        return cls(np.broadcast_to(value, (*shape, 3)).copy())

    @classmethod
    def from_pfm(cls, path) -> "EnvMap":
        return cls(load_pfm(path))

    def to_pfm(self, path) -> None:
        save_pfm(path, self.radiance.astype(np.float32))

    @property
    def shape(self):
        return self.radiance.shape[:2]

    @property
    def is_uniform(self) -> bool:
        """True when luminance is zero everywhere and sampling fell back to uniform."""
        return bool(self.row_cdf[-1] == 0.0)

    def texel_of(self, dirs: np.ndarray):
        """Row/column indices of the texels containing unit directions."""
        d = np.asarray(dirs, np.float64).reshape(-1, 3)
        h, w = self.shape
        theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
        phi = np.arctan2(d[:, 1], d[:, 0])
        rows = np.minimum((theta / np.pi * h).astype(np.int64), h - 1)
        cols = np.minimum(((phi + np.pi) / (2.0 * np.pi) * w).astype(np.int64), w - 1)
        return rows, np.clip(cols, 0, w - 1)

    def eval(self, dirs: np.ndarray) -> np.ndarray:
        """Radiance arriving from unit directions; nearest-texel lookup."""
        dirs = np.asarray(dirs, np.float64)
        rows, cols = self.texel_of(dirs.reshape(-1, 3))
        return self.radiance[rows, cols].reshape(dirs.shape)

    def sample(self, u: np.ndarray):
        """Map uniform pairs u in [0,1)^2 to (directions, solid-angle pdf)."""
        u = np.asarray(u, np.float64).reshape(-1, 2)
        h, w = self.shape
        if self.is_uniform:
            z = 1.0 - 2.0 * u[:, 0]
            r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
            phi = 2.0 * np.pi * u[:, 1] - np.pi
            dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
            return dirs, np.full(len(u), 1.0 / (4.0 * np.pi))

        rows = np.minimum(np.searchsorted(self.row_cdf, u[:, 0], side="right"), h - 1)
        lo = np.where(rows > 0, self.row_cdf[rows - 1], 0.0)
        span = self.row_cdf[rows] - lo
        frac_r = np.where(span > 0, (u[:, 0] - lo) / np.maximum(span, 1e-300), 0.5)
        theta = (rows + np.clip(frac_r, 0.0, 1.0)) * np.pi / h

        cdf_rows = self.cond_cdf[rows]
        cols = np.minimum(
            (cdf_rows < u[:, 1, None]).sum(axis=1), w - 1)
        lo = np.where(cols > 0, cdf_rows[np.arange(len(u)), cols - 1], 0.0)
        span = cdf_rows[np.arange(len(u)), cols] - lo
        frac_c = np.where(span > 0, (u[:, 1] - lo) / np.maximum(span, 1e-300), 0.5)
        phi = (cols + np.clip(frac_c, 0.0, 1.0)) * 2.0 * np.pi / w - np.pi

        sin_t = np.sin(theta)
        dirs = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), np.cos(theta)], axis=1)
        pdf = self.prob[rows, cols] * h * w / (2.0 * np.pi ** 2 * np.maximum(sin_t, _MIN_SIN))
        return dirs, pdf

    def pdf(self, dirs: np.ndarray) -> np.ndarray:
        """Solid-angle pdf that :meth:`sample` assigns to unit directions."""
        d = np.asarray(dirs, np.float64).reshape(-1, 3)
        if self.is_uniform:
            return np.full(len(d), 1.0 / (4.0 * np.pi))
        h, w = self.shape
        rows, cols = self.texel_of(d)
        sin_t = np.sqrt(np.maximum(0.0, 1.0 - d[:, 2] ** 2))
        return self.prob[rows, cols] * h * w / (2.0 * np.pi ** 2 * np.maximum(sin_t, _MIN_SIN))
