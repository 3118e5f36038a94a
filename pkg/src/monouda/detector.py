"""A small fully-connected monocular detector over candidate features.

The network maps each candidate to nine head outputs::

    [score_logit, depth_raw, du, dv, log_dx, log_dy, log_dz, yaw_sin, yaw_cos]

It only sees the translation-invariant part of a candidate (pixel size and
appearance), the way a convolutional head never sees its absolute image
position; ``u, v`` enter at decode time, where the box center is
back-projected along the ray through the (corrected) pixel.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .boxes3d import Box3D, Detection
from .camera_geom import (DEFAULT_DEPTH_CONSTANT, CameraIntrinsics, metric_to_pixel_depth,
                          pixel_size, project)

METRIC = "METRIC"
PIXEL_SIZE = "PIXEL_SIZE"
DEPTH_MODES = (METRIC, PIXEL_SIZE)

N_HEADS = 9
N_REG = 8
PRIOR_DIMS = np.array([4.0, 1.8, 1.6])
DEFAULT_MANIFEST = (6, 64, 64, N_HEADS)
CHECKPOINT_VERSION = 1


class StructuralError(ValueError):
    """Shapes or manifests that do not fit together."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass
class ModelParams:
    flat: np.ndarray
    manifest: tuple = DEFAULT_MANIFEST
    depth_mode: str = PIXEL_SIZE

    def __post_init__(self):
        self.manifest = tuple(int(m) for m in self.manifest)
        self.flat = np.asarray(self.flat, dtype=float)
        if self.flat.shape != (n_params(self.manifest),):
            raise StructuralError(f"flat vector of length {self.flat.shape} does not fit manifest {self.manifest}")
        if self.depth_mode not in DEPTH_MODES:
            raise ValueError(f"depth_mode must be one of {DEPTH_MODES}")

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into the flat vector, one pair per layer."""
        out, off = [], 0
        for fan_in, fan_out in zip(self.manifest[:-1], self.manifest[1:]):
            W = self.flat[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
            off += fan_in * fan_out
            b = self.flat[off:off + fan_out]
            off += fan_out
            out.append((W, b))
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(self.flat.copy(), self.manifest, self.depth_mode)

    def with_flat(self, flat) -> "ModelParams":
        return ModelParams(flat, self.manifest, self.depth_mode)


def n_params(manifest) -> int:
    return sum(a * b + b for a, b in zip(manifest[:-1], manifest[1:]))


def init_params(rng: np.random.Generator, manifest=DEFAULT_MANIFEST, depth_mode: str = PIXEL_SIZE,
                score_prior: float | None = None, depth_prior: float | None = None) -> ModelParams:
    """He-normal weights, zero biases.

    With ``score_prior`` the objectness bias starts at ``logit(score_prior)``
    so that an untrained model is confident about nothing; ``depth_prior``
    starts the depth head at that (regressed-unit) depth.
    """
    chunks = []
    for fan_in, fan_out in zip(manifest[:-1], manifest[1:]):
        chunks.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    if score_prior is not None:
        chunks[-1][0] = math.log(score_prior / (1.0 - score_prior))
    if depth_prior is not None:
        chunks[-1][1] = math.log(depth_prior)
    return ModelParams(np.concatenate(chunks), manifest, depth_mode)


def network_inputs(features: np.ndarray) -> np.ndarray:
    """Fixed input transform: log pixel sizes (around 100 px) and raw appearance."""
    f = np.atleast_2d(np.asarray(features, dtype=float))
    if f.shape[1] != 8:
        raise StructuralError(f"candidate features must have 8 columns, got {f.shape[1]}")
    sizes = np.log(np.maximum(f[:, 2:4], 1e-3) / 100.0)
    return np.concatenate([sizes, f[:, 4:8]], axis=1)


def _forward_cache(params: ModelParams, features):
    x = network_inputs(features)
    if x.shape[1] != params.manifest[0]:
        raise StructuralError(f"network expects {params.manifest[0]} inputs, got {x.shape[1]}")
    acts = [x]
    layers = params.layers()
    h = x
    # overflow surfaces as a non-finite loss, reported as divergence by the caller
    with np.errstate(over="ignore", invalid="ignore"):
        for i, (W, b) in enumerate(layers):
            z = h @ W + b
            h = np.maximum(z, 0.0) if i < len(layers) - 1 else z
            acts.append(h)
    return acts


def forward(params: ModelParams, features) -> np.ndarray:
    """Head outputs, shape (n_candidates, 9)."""
    return _forward_cache(params, features)[-1]


@dataclass
class HeadOutput:
    score_logit: float
    depth_raw: float
    du: float
    dv: float
    log_dims: np.ndarray
    yaw_sin: float
    yaw_cos: float

    @classmethod
    def from_row(cls, row) -> "HeadOutput":
        r = np.asarray(row, dtype=float)
        return cls(r[0], r[1], r[2], r[3], r[4:7].copy(), r[7], r[8])

    def as_row(self) -> np.ndarray:
        return np.concatenate([[self.score_logit, self.depth_raw, self.du, self.dv],
                               self.log_dims, [self.yaw_sin, self.yaw_cos]])


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def depth_scale(K: CameraIntrinsics, c: float, depth_mode: str) -> float:
    """Metric depth per unit of the regressed depth quantity."""
    if depth_mode == METRIC:
        return 1.0
    if depth_mode == PIXEL_SIZE:
        if not c > 0:
            raise ValueError("depth constant must be positive")
        return c / pixel_size(K)
    raise ValueError(f"unknown depth mode {depth_mode!r}")


def decode_arrays(outputs, features, K: CameraIntrinsics, c: float = DEFAULT_DEPTH_CONSTANT,
                  depth_mode: str = PIXEL_SIZE):
    """Vectorised decode: returns (boxes (n, 7), scores (n,), finite mask (n,))."""
    o = np.atleast_2d(outputs)
    f = np.atleast_2d(features)
    with np.errstate(over="ignore", invalid="ignore"):
        d = np.exp(o[:, 1]) * depth_scale(K, c, depth_mode)
        u = f[:, 0] + o[:, 2]
        v = f[:, 1] + o[:, 3]
        cx = (u - K.px) * d / K.fx
        cy = (v - K.py) * d / K.fy
        dims = PRIOR_DIMS * np.exp(o[:, 4:7])
        yaw = np.arctan2(o[:, 7], o[:, 8])
        boxes = np.column_stack([cx, cy, d, dims, yaw])
        scores = sigmoid(o[:, 0])
    ok = np.all(np.isfinite(boxes), axis=1) & np.isfinite(scores) & (d > 0) & np.all(dims > 0, axis=1)
    return boxes, scores, ok


def decode(output, features, K: CameraIntrinsics, c: float = DEFAULT_DEPTH_CONSTANT,
           depth_mode: str = PIXEL_SIZE) -> Detection | None:
    """Decode one candidate's head output; ``None`` when the result is not finite."""
    row = output.as_row() if isinstance(output, HeadOutput) else output
    boxes, scores, ok = decode_arrays(row, features, K, c, depth_mode)
    if not ok[0]:
        return None
    yaw = boxes[0, 6]
    yaw = -math.pi if yaw >= math.pi else yaw
    return Detection(Box3D(*boxes[0, :6], yaw), float(scores[0]))


def decode_scene(outputs, features, K, c=DEFAULT_DEPTH_CONSTANT, depth_mode=PIXEL_SIZE):
    """Detections for every decodable candidate plus the number dropped as non-finite."""
    boxes, scores, ok = decode_arrays(outputs, features, K, c, depth_mode)
    dets = []
    for i in np.flatnonzero(ok):
        yaw = boxes[i, 6]
        dets.append(Detection(Box3D(*boxes[i, :6], -math.pi if yaw >= math.pi else yaw), float(scores[i])))
    return dets, int((~ok).sum())


def encode_targets(gt: Box3D, features, K: CameraIntrinsics, c: float = DEFAULT_DEPTH_CONSTANT,
                   depth_mode: str = PIXEL_SIZE) -> np.ndarray:
    """Regression targets (8,) that decode back to ``gt`` from this candidate."""
    f = np.asarray(features, dtype=float).reshape(-1)
    u, v, d = project(gt.center, K)
    raw = d if depth_mode == METRIC else metric_to_pixel_depth(d, K, c)
    if depth_mode not in DEPTH_MODES:
        raise ValueError(f"unknown depth mode {depth_mode!r}")
    return np.concatenate([[math.log(raw), u - f[0], v - f[1]],
                           np.log(np.array(gt.dims) / PRIOR_DIMS),
                           [math.sin(gt.yaw), math.cos(gt.yaw)]])


def _bce_with_logits(z, y):
    # softplus(z) - y z, stable for large |z|
    with np.errstate(invalid="ignore"):
        return np.logaddexp(0.0, z) - y * z


def _smooth_l1(x, beta=1.0):
    a = np.abs(x)
    return np.where(a < beta, 0.5 * x * x / beta, a - 0.5 * beta)


def _smooth_l1_grad(x, beta=1.0):
    return np.where(np.abs(x) < beta, x / beta, np.sign(x))


def loss_and_grad(params: ModelParams, features, labels, targets=None, cls_weights=None,
                  reg_weights=None, reg_weight: float = 1.0, neg_weight: float = 1.0,
                  cls_scale: float = 1.0, code_weights=None):
    """Objectness BCE plus smooth-L1 box regression, with the exact gradient.

    ``labels`` holds 1 (positive), 0 (negative) or -1 (ignored) per candidate.
    ``cls_weights`` scales the positive classification terms (QAS weights);
    negatives are weighted by ``neg_weight``.  The classification loss is
    normalised by the number of non-ignored candidates, the regression loss by
    the number of positives; ``code_weights`` scales the eight regression
    components.  ``targets`` has one row per candidate; only
    positive rows are read.  Returns ``(L_cls, L_reg, grad)`` where ``grad`` is
    the gradient of ``cls_scale * L_cls + reg_weight * L_reg`` and ``L_cls``
    already includes ``cls_scale``.
    """
    labels = np.asarray(labels)
    n = len(labels)
    acts = _forward_cache(params, features)
    out = acts[-1]
    if out.shape[0] != n:
        raise StructuralError("one label per candidate required")
    pos = labels == 1
    neg = labels == 0
    n_cls = int(pos.sum() + neg.sum())
    n_pos = int(pos.sum())

    w = np.zeros(n)
    w[pos] = 1.0 if cls_weights is None else np.asarray(cls_weights, dtype=float)[pos]
    w[neg] = neg_weight
    z = out[:, 0]
    y = pos.astype(float)
    norm_c = cls_scale / max(1, n_cls)
    L_cls = norm_c * float(np.sum(w * _bce_with_logits(z, y)))

    g_out = np.zeros_like(out)
    g_out[:, 0] = norm_c * w * (sigmoid(z) - y)

    L_reg = 0.0
    if n_pos:
        if targets is None:
            raise ValueError("positives need regression targets")
        t = np.asarray(targets, dtype=float)
        rw = np.ones(n) if reg_weights is None else np.asarray(reg_weights, dtype=float)
        diff = out[pos, 1:] - t[pos]
        norm_r = 1.0 / n_pos
        cw = np.ones(N_REG) if code_weights is None else np.asarray(code_weights, dtype=float)
        L_reg = norm_r * float(np.sum(rw[pos, None] * cw * _smooth_l1(diff)))
        g_out[pos, 1:] = reg_weight * norm_r * rw[pos, None] * cw * _smooth_l1_grad(diff)

    if not (math.isfinite(L_cls) and math.isfinite(L_reg)):
        raise DivergenceError(f"non-finite loss (cls={L_cls}, reg={L_reg})")

    layers = params.layers()
    per_layer = [None] * len(layers)
    delta = g_out
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        per_layer[i] = ((acts[i].T @ delta).ravel(), delta.sum(axis=0))
        if i > 0:
            delta = (delta @ W.T) * (acts[i] > 0)
    return L_cls, L_reg, np.concatenate([g for pair in per_layer for g in pair])


@dataclass
class OptimState:
    """Step-decay SGD with linear warmup and global-norm gradient clipping."""
    base_lr: float = 0.002
    warmup_iters: int = 500
    warmup_ratio: float = 1.0 / 3.0
    decay_steps: tuple = ()
    decay_factor: float = 0.1
    clip_norm: float | None = 35.0
    momentum: float = 0.0
    iteration: int = 0
    velocity: np.ndarray | None = field(default=None, repr=False)

    def lr_at(self, it: int) -> float:
        if it < self.warmup_iters:
            return self.base_lr * (self.warmup_ratio + (1.0 - self.warmup_ratio) * it / self.warmup_iters)
        passed = sum(1 for s in self.decay_steps if it >= s)
        return self.base_lr * self.decay_factor ** passed

    @property
    def lr(self) -> float:
        return self.lr_at(self.iteration)


def clip_gradient(grad: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None:
        return grad
    norm = float(np.linalg.norm(grad))
    return grad * (max_norm / norm) if norm > max_norm else grad


def sgd_step(params: ModelParams, grad: np.ndarray, optim: OptimState) -> ModelParams:
    """One SGD update at the current schedule position; advances ``optim``."""
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient")
    g = clip_gradient(grad, optim.clip_norm)
    if optim.momentum:
        if optim.velocity is None:
            optim.velocity = np.zeros_like(g)
        optim.velocity = optim.momentum * optim.velocity + g
        g = optim.velocity
    with np.errstate(over="ignore", invalid="ignore"):
        flat = params.flat - optim.lr * g
    if not np.all(np.isfinite(flat)):
        raise DivergenceError("update produced non-finite parameters")
    optim.iteration += 1
    return params.with_flat(flat)


def save_checkpoint(path, params: ModelParams, extra: dict | None = None) -> None:
    """JSON checkpoint with a manifest header; floats keep full precision."""
    doc = {"version": CHECKPOINT_VERSION, "manifest": list(params.manifest),
           "depth_mode": params.depth_mode, "params": [float(x) for x in params.flat]}
    if extra:
        doc["extra"] = extra
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_checkpoint(path) -> ModelParams:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise StructuralError(f"unsupported checkpoint version {doc.get('version')}")
    return ModelParams(np.array(doc["params"], dtype=float), tuple(doc["manifest"]), doc["depth_mode"])


def load_checkpoint_extra(path) -> dict:
    with open(path) as fh:
        return json.load(fh).get("extra", {})
