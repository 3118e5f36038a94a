"""Pinhole camera geometry: projection, pixel-size depth and multi-scale rescaling.

Pixel-size depth expresses metric depth in units of the camera's pixel size,
``d_p = (s / c) * d_g`` with ``s = sqrt(1/fx**2 + 1/fy**2)``.  For a square-pixel
camera the pixel-size depth of an object depends only on its physical and
projected heights, not on the focal length, which is what lets a depth
regressor transfer between cameras.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .synthworld import SceneSample

# pixel size of a reference fx = fy = 1000 camera
DEFAULT_DEPTH_CONSTANT = math.sqrt(2.0) / 1000.0

# (long edge, short edge) resolution bounds of the multi-scale resize list
MULTISCALE_RESOLUTIONS = (
    (1600, 840), (1600, 900), (1600, 960), (1600, 1020),
    (1600, 1080), (1600, 1140), (1600, 1200), (1600, 1260),
    (1540, 840), (1480, 780), (1420, 720), (1380, 680),
    (1660, 960), (1720, 1020), (1800, 1080), (1880, 1140),
)


class GeometryError(ValueError):
    """Raised for inputs outside the domain of a geometric operation."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    px: float
    py: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise GeometryError(f"image extent must be positive, got {self.width}x{self.height}")
        if not (0 <= self.px <= self.width and 0 <= self.py <= self.height):
            raise GeometryError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.px],
                         [0.0, self.fy, self.py],
                         [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(**{k: float(d[k]) for k in ("fx", "fy", "px", "py", "width", "height")})


@dataclass(frozen=True)
class ScaleFactors:
    rx: float
    ry: float

    def __post_init__(self):
        if not (self.rx > 0 and self.ry > 0):
            raise GeometryError(f"scale factors must be positive, got ({self.rx}, {self.ry})")


def project(point, K: CameraIntrinsics) -> tuple[float, float, float]:
    """Project a camera-frame point (x, y, z) to pixel coordinates and depth."""
    x, y, z = (float(c) for c in point)
    if not z > 0:
        raise GeometryError(f"cannot project a point with non-positive depth z={z}")
    return K.fx * x / z + K.px, K.fy * y / z + K.py, z


def backproject(u: float, v: float, depth: float, K: CameraIntrinsics) -> tuple[float, float, float]:
    """Inverse of :func:`project` for a known depth."""
    return (u - K.px) * depth / K.fx, (v - K.py) * depth / K.fy, depth


def pixel_size(K: CameraIntrinsics) -> float:
    return math.sqrt(1.0 / K.fx ** 2 + 1.0 / K.fy ** 2)


def _check_constant(c: float) -> None:
    if not c > 0:
        raise GeometryError(f"depth constant must be positive, got {c}")


def metric_to_pixel_depth(d_g, K: CameraIntrinsics, c: float = DEFAULT_DEPTH_CONSTANT):
    _check_constant(c)
    return (pixel_size(K) / c) * d_g


def pixel_to_metric_depth(d_p, K: CameraIntrinsics, c: float = DEFAULT_DEPTH_CONSTANT):
    _check_constant(c)
    return d_p * (c / pixel_size(K))


def rescale_intrinsics(K: CameraIntrinsics, scale: ScaleFactors) -> CameraIntrinsics:
    """Scale row 1 of K by rx and row 2 by ry, with the image extent."""
    return CameraIntrinsics(
        fx=scale.rx * K.fx, fy=scale.ry * K.fy,
        px=scale.rx * K.px, py=scale.ry * K.py,
        width=scale.rx * K.width, height=scale.ry * K.height,
    )


def gams_rescale(sample: "SceneSample", scale: ScaleFactors) -> "SceneSample":
    """Resize a scene: intrinsics and pixel-space features change, 3D boxes do not.

    Feature layout is ``[u, v, w_px, h_px, a1..a4]``; u and w_px scale with rx,
    v and h_px with ry.
    """
    if scale.rx == 1.0 and scale.ry == 1.0:
        return sample
    factors = np.ones(sample.features.shape[1])
    factors[[0, 2]] = scale.rx
    factors[[1, 3]] = scale.ry
    return dataclasses.replace(
        sample,
        camera=rescale_intrinsics(sample.camera, scale),
        features=sample.features * factors,
    )


def keep_ratio_scale(K: CameraIntrinsics, resolution: tuple[float, float]) -> ScaleFactors:
    """Scale factor of an aspect-preserving resize bounded by (long, short) edges."""
    long_edge, short_edge = max(resolution), min(resolution)
    r = min(long_edge / max(K.width, K.height), short_edge / min(K.width, K.height))
    return ScaleFactors(r, r)


def multiscale_set(K: CameraIntrinsics, resolutions=MULTISCALE_RESOLUTIONS) -> list[ScaleFactors]:
    return [keep_ratio_scale(K, res) for res in resolutions]


def sample_scale(rng: np.random.Generator, scale_set: Sequence[ScaleFactors]) -> ScaleFactors:
    if len(scale_set) == 0:
        raise GeometryError("scale set is empty")
    return scale_set[int(rng.integers(len(scale_set)))]
