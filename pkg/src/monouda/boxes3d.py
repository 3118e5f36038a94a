"""Oriented 3D boxes in the camera frame, rotated IoU, NMS and pair errors.

Camera frame convention: x right, y down, z forward (depth).  A box's ground
footprint lives in the (x, z) plane; ``dx`` is its length along the heading
``(cos yaw, sin yaw)``, ``dy`` its width and ``dz`` its vertical extent
around ``cy``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

AREA_EPS = 1e-9
MERGE_EPS = 1e-12


def normalize_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a < 0:
        a += 2.0 * math.pi
    a -= math.pi
    # fmod can round up to exactly +pi
    return -math.pi if a >= math.pi else a


@dataclass(frozen=True)
class Box3D:
    cx: float
    cy: float
    cz: float
    dx: float
    dy: float
    dz: float
    yaw: float
    class_id: int = 0

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0 and self.dz > 0):
            raise ValueError(f"box dimensions must be positive: {(self.dx, self.dy, self.dz)}")
        if not -math.pi <= self.yaw < math.pi:
            object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    @property
    def center(self) -> tuple[float, float, float]:
        return self.cx, self.cy, self.cz

    @property
    def dims(self) -> tuple[float, float, float]:
        return self.dx, self.dy, self.dz

    @property
    def volume(self) -> float:
        return self.dx * self.dy * self.dz

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz, self.dx, self.dy, self.dz, self.yaw])

    @classmethod
    def from_array(cls, arr, class_id: int = 0) -> "Box3D":
        return cls(*(float(a) for a in arr[:7]), class_id=class_id)

    def to_dict(self) -> dict:
        return {"cls": self.class_id, "loc": [self.cx, self.cy, self.cz],
                "dim": [self.dx, self.dy, self.dz], "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "Box3D":
        return cls(*map(float, d["loc"]), *map(float, d["dim"]), float(d["yaw"]),
                   class_id=int(d["cls"]))


@dataclass(frozen=True)
class Detection:
    box: Box3D
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


def bev_corners(box: Box3D) -> list[tuple[float, float]]:
    """Footprint corners in (x, z), counter-clockwise."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hl, hw = box.dx / 2.0, box.dy / 2.0
    pts = []
    for a, b in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        pts.append((box.cx + a * c - b * s, box.cz + a * s + b * c))
    return pts


def polygon_area(pts) -> float:
    n = len(pts)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * acc


def _clip(subject, a, b):
    # keep the part of `subject` left of the directed edge a->b
    ax, ay = a
    ex, ey = b[0] - ax, b[1] - ay
    out = []
    n = len(subject)
    for i in range(n):
        p, q = subject[i], subject[(i + 1) % n]
        sp = ex * (p[1] - ay) - ey * (p[0] - ax)
        sq = ex * (q[1] - ay) - ey * (q[0] - ax)
        if sp >= 0:
            out.append(p)
        if (sp >= 0) != (sq >= 0):
            t = sp / (sp - sq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    merged = []
    for p in out:
        if not merged or abs(p[0] - merged[-1][0]) > MERGE_EPS or abs(p[1] - merged[-1][1]) > MERGE_EPS:
            merged.append(p)
    if len(merged) > 1 and abs(merged[0][0] - merged[-1][0]) <= MERGE_EPS \
            and abs(merged[0][1] - merged[-1][1]) <= MERGE_EPS:
        merged.pop()
    return merged


def convex_intersection(p1, p2) -> list[tuple[float, float]]:
    """Sutherland-Hodgman clip of convex CCW polygon p1 by convex CCW polygon p2."""
    out = list(p1)
    n = len(p2)
    for i in range(n):
        if len(out) < 3:
            return []
        out = _clip(out, p2[i], p2[(i + 1) % n])
    return out if len(out) >= 3 else []


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    # cheap reject on circumscribed circles
    ra = 0.5 * math.hypot(a.dx, a.dy)
    rb = 0.5 * math.hypot(b.dx, b.dy)
    if math.hypot(a.cx - b.cx, a.cz - b.cz) >= ra + rb:
        return 0.0
    area = polygon_area(convex_intersection(bev_corners(a), bev_corners(b)))
    return area if area > AREA_EPS else 0.0


def bev_iou(a: Box3D, b: Box3D) -> float:
    inter = bev_intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    union = a.dx * a.dy + b.dx * b.dy - inter
    return min(1.0, inter / union)


def vertical_overlap(a: Box3D, b: Box3D) -> float:
    lo = max(a.cy - a.dz / 2.0, b.cy - b.dz / 2.0)
    hi = min(a.cy + a.dz / 2.0, b.cy + b.dz / 2.0)
    return max(0.0, hi - lo)


def iou3d(a: Box3D, b: Box3D) -> float:
    h = vertical_overlap(a, b)
    if h == 0.0:
        return 0.0
    inter = bev_intersection_area(a, b) * h
    if inter == 0.0:
        return 0.0
    return min(1.0, inter / (a.volume + b.volume - inter))


def nms(dets: Sequence[Detection], iou_thr: float, max_keep: int | None = None) -> list[Detection]:
    """Greedy rotated BEV NMS; ties in score keep input order."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    keep: list[Detection] = []
    for i in order:
        if max_keep is not None and len(keep) >= max_keep:
            break
        cand = dets[i]
        if all(bev_iou(cand.box, k.box) <= iou_thr for k in keep):
            keep.append(cand)
    return keep


def aligned_size_iou(a: Box3D, b: Box3D) -> float:
    inter = min(a.dx, b.dx) * min(a.dy, b.dy) * min(a.dz, b.dz)
    return inter / (a.volume + b.volume - inter)


def yaw_difference(a: float, b: float) -> float:
    """Smallest absolute angle between two headings, in [0, pi]."""
    d = abs(math.fmod(a - b, 2.0 * math.pi))
    return 2.0 * math.pi - d if d > math.pi else d


def pair_errors(pred: Box3D, gt: Box3D) -> tuple[float, float, float]:
    """(translation, scale, orientation) errors of a matched pair."""
    trans = math.hypot(pred.cx - gt.cx, pred.cz - gt.cz)
    return trans, 1.0 - aligned_size_iou(pred, gt), yaw_difference(pred.yaw, gt.yaw)


def flip_box(box: Box3D) -> Box3D:
    """Mirror a box about the camera's vertical plane (x -> -x)."""
    return Box3D(-box.cx, box.cy, box.cz, box.dx, box.dy, box.dz,
                 normalize_angle(math.pi - box.yaw), box.class_id)
