"""Pinhole camera model shared by the rasterizer and the shader.

Screen convention: pixel (row, col) has its center at continuous coordinates
(col + 0.5, row + 0.5), x grows to the right and y grows downward. Depth is
the linear view-space distance along the camera's forward axis; points at or
behind the camera plane project to NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class RenderError(ValueError):
    pass


_NEAR = 1e-12


def _vec3(value, name: str) -> np.ndarray:
    v = np.asarray(value, np.float64).reshape(-1)
    if v.shape != (3,):
        raise RenderError(f"{name} must be a 3-vector")
    if not np.all(np.isfinite(v)):
        raise RenderError(f"{name} must be finite")
    v = v.copy()
    v.flags.writeable = False
    return v


@dataclass(frozen=True)
class Camera:
    """Perspective camera defined by position, target, up hint and vertical FOV."""

    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov_y: float = math.radians(50.0)
    width: int = 128
    height: int = 128

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position, "position"))
        object.__setattr__(self, "look_at", _vec3(self.look_at, "look_at"))
        object.__setattr__(self, "up", _vec3(self.up, "up"))
        fov = float(self.fov_y)
        if not (0.0 < fov < math.pi):
            raise RenderError("fov_y must lie in (0, pi)")
        object.__setattr__(self, "fov_y", fov)
        w, h = int(self.width), int(self.height)
        if w < 1 or h < 1:
            raise RenderError("image size must be positive")
        object.__setattr__(self, "width", w)
        object.__setattr__(self, "height", h)
        forward = self.look_at - self.position
        if np.linalg.norm(forward) < _NEAR:
            raise RenderError("camera position and look_at coincide")
        if np.linalg.norm(np.cross(forward, self.up)) < 1e-9:
            raise RenderError("up direction is parallel to the view direction")

    @classmethod
    def from_orbit(cls, azimuth_deg: float, elevation_deg: float,
                   distance: float = 2.8, target=(0.0, 0.0, 0.0),
                   fov_y: float = math.radians(50.0),
                   width: int = 128, height: int = 128) -> "Camera":
        """Camera on a z-up orbit around ``target``.

        Azimuth 0 looks down the -x axis from (+distance, 0, 0); elevation
        raises the camera toward +z.
        """
        if distance <= 0:
            raise RenderError("orbit distance must be positive")
        az = math.radians(azimuth_deg)
        el = math.radians(elevation_deg)
        target = np.asarray(target, np.float64)
        offset = np.array([math.cos(el) * math.cos(az),
                           math.cos(el) * math.sin(az),
                           math.sin(el)])
        up = (0.0, 0.0, 1.0)
        if abs(math.cos(el)) < 1e-6:
            up = (math.cos(az), math.sin(az), 0.0)
        return cls(position=target + distance * offset, look_at=target, up=up,
                   fov_y=fov_y, width=width, height=height)

    def basis(self):
        """Orthonormal (right, up, forward) axes in world space."""
        forward = self.look_at - self.position
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, self.up)
        right = right / np.linalg.norm(right)
        up = np.cross(right, forward)
        return right, up, forward

    @property
    def aspect(self) -> float:
        return self.width / self.height

    def view_coords(self, points: np.ndarray) -> np.ndarray:
        """World points -> (right, up, forward) view coordinates, shape (n, 3)."""
        pts = np.asarray(points, np.float64).reshape(-1, 3)
        right, up, forward = self.basis()
        rel = pts - self.position
        return rel @ np.stack([right, up, forward], axis=1)

    def project(self, points: np.ndarray):
        """Project world points to (pixel xy, view depth).

        Returns ``(xy, depth)`` with xy of shape (n, 2) in pixel units and
        depth (n,). Points with depth <= 0 get NaN pixel coordinates.
        """
        view = self.view_coords(points)
        depth = view[:, 2]
        safe = np.where(depth > _NEAR, depth, np.nan)
        t = math.tan(0.5 * self.fov_y)
        xn = view[:, 0] / (safe * t * self.aspect)
        yn = view[:, 1] / (safe * t)
        xy = np.empty((len(view), 2))
        xy[:, 0] = (xn + 1.0) * 0.5 * self.width
        xy[:, 1] = (1.0 - yn) * 0.5 * self.height
        return xy, depth

    def unproject(self, xy: np.ndarray, depth: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`project` for positive depths."""
        xy = np.asarray(xy, np.float64).reshape(-1, 2)
        depth = np.asarray(depth, np.float64).reshape(-1)
        t = math.tan(0.5 * self.fov_y)
        xn = xy[:, 0] * 2.0 / self.width - 1.0
        yn = 1.0 - xy[:, 1] * 2.0 / self.height
        right, up, forward = self.basis()
        local = np.stack([xn * t * self.aspect * depth, yn * t * depth, depth], axis=1)
        return self.position + local @ np.stack([right, up, forward])
