"""KITTI-style evaluation: greedy matching, AP11/AP40, aggregate box errors, closed gap."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .boxes3d import Box3D, Detection, bev_iou, iou3d, pair_errors

AP_MODES = ("AP11", "AP40")
MATCH_SPACES = ("BEV", "3D")


class UndefinedGapError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    ap_mode: str = "AP40"
    match_space: str = "3D"

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError("iou_threshold must lie in (0, 1)")
        if self.ap_mode not in AP_MODES:
            raise ValueError(f"ap_mode must be one of {AP_MODES}")
        if self.match_space not in MATCH_SPACES:
            raise ValueError(f"match_space must be one of {MATCH_SPACES}")


@dataclass
class EvalResult:
    ap: float
    mATE: float | None
    mASE: float | None
    mAOE: float | None
    tp: int
    fp: int
    fn: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class MatchResult:
    flags: np.ndarray          # bool per detection, in global descending-score order
    scores: np.ndarray
    pairs: list[tuple[Box3D, Box3D]]
    n_gt: int


def match_detections(dets_per_scene: Sequence[Sequence[Detection]],
                     gts_per_scene: Sequence[Sequence[Box3D]],
                     cfg: EvalConfig = EvalConfig()) -> MatchResult:
    """Greedy KITTI matching over the globally score-sorted detection list.

    Each detection, in descending score order (ties by input order), claims the
    unmatched ground truth of its scene with the highest IoU; it is a true
    positive when that IoU reaches the threshold.
    """
    iou = iou3d if cfg.match_space == "3D" else bev_iou
    flat = [(d.score, s, j) for s, dets in enumerate(dets_per_scene) for j, d in enumerate(dets)]
    flat.sort(key=lambda t: -t[0])  # stable: ties stay in input order
    taken = [np.zeros(len(g), dtype=bool) for g in gts_per_scene]
    flags = np.zeros(len(flat), dtype=bool)
    pairs = []
    for k, (_, s, j) in enumerate(flat):
        det = dets_per_scene[s][j]
        best, best_iou = -1, 0.0
        for g, gt in enumerate(gts_per_scene[s]):
            if taken[s][g]:
                continue
            v = iou(det.box, gt)
            if v > best_iou:
                best, best_iou = g, v
        if best >= 0 and best_iou >= cfg.iou_threshold:
            taken[s][best] = True
            flags[k] = True
            pairs.append((det.box, gts_per_scene[s][best]))
    scores = np.array([t[0] for t in flat], dtype=float)
    return MatchResult(flags, scores, pairs, sum(len(g) for g in gts_per_scene))


def recall_anchors(ap_mode: str) -> np.ndarray:
    if ap_mode == "AP11":
        return np.arange(11) / 10.0
    if ap_mode == "AP40":
        return np.arange(1, 41) / 40.0
    raise ValueError(f"unknown ap_mode {ap_mode!r}")


def precision_recall(flags, scores, n_gt: int) -> tuple[np.ndarray, np.ndarray]:
    flags = np.asarray(flags, dtype=bool)
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    tp = np.cumsum(flags[order])
    fp = np.cumsum(~flags[order])
    precision = tp / np.maximum(tp + fp, 1)
    recall = tp / n_gt if n_gt > 0 else np.zeros_like(precision, dtype=float)
    return precision, recall


def average_precision(flags, scores, n_gt: int, ap_mode: str = "AP40") -> float:
    """Interpolated AP: mean over recall anchors of the best precision at recall >= anchor."""
    anchors = recall_anchors(ap_mode)
    if n_gt <= 0 or len(flags) == 0:
        return 0.0
    precision, recall = precision_recall(flags, scores, n_gt)
    # suffix max: best precision achievable at or beyond each PR point
    best_after = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, anchors, side="left")
    vals = np.where(idx < len(recall), best_after[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(vals.mean())


def aggregate_errors(pairs) -> tuple[float | None, float | None, float | None]:
    if not pairs:
        return None, None, None
    errs = np.array([pair_errors(p, g) for p, g in pairs])
    mate, mase, maoe = errs.mean(axis=0)
    return float(mate), float(mase), float(maoe)


def evaluate(dets_per_scene, gts_per_scene, cfg: EvalConfig = EvalConfig()) -> EvalResult:
    m = match_detections(dets_per_scene, gts_per_scene, cfg)
    ap = average_precision(m.flags, m.scores, m.n_gt, cfg.ap_mode)
    mate, mase, maoe = aggregate_errors(m.pairs)
    tp = int(m.flags.sum())
    return EvalResult(ap, mate, mase, maoe, tp, int(len(m.flags) - tp), m.n_gt - tp)


def closed_gap(result: float, source_only: float, oracle: float) -> float:
    """Percentage of the source-only to oracle gap recovered by ``result``."""
    if oracle == source_only:
        raise UndefinedGapError("oracle and source-only scores coincide; gap undefined")
    return 100.0 * (result - source_only) / (oracle - source_only)
