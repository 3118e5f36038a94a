"""Mean-teacher self-training for cross-domain adaptation, plus the baselines.

The student learns from labelled source scenes and from teacher pseudo labels
on unlabelled target scenes; the teacher is an exponential moving average of
the student.  Target supervision is positive-only, weighted by teacher
confidence, and gated by a threshold that rises during training.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .boxes3d import Box3D, Detection, nms
from .camera_geom import DEFAULT_DEPTH_CONSTANT, multiscale_set
from .detector import (PIXEL_SIZE, DivergenceError, ModelParams, OptimState, StructuralError,
                       decode_arrays, encode_targets, forward, init_params,
                       loss_and_grad, sgd_step)
from .synthworld import SceneSample, TransformRecord, perturb_strong, perturb_weak


@dataclass
class EmaTeacher:
    params: ModelParams
    momentum: float = 0.999

    def __post_init__(self):
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("EMA momentum must lie in [0, 1]")


def ema_update(teacher: EmaTeacher, student: ModelParams) -> EmaTeacher:
    if teacher.params.manifest != student.manifest:
        raise StructuralError(f"teacher manifest {teacher.params.manifest} != student {student.manifest}")
    m = teacher.momentum
    flat = m * teacher.params.flat + (1.0 - m) * student.flat
    return EmaTeacher(teacher.params.with_flat(flat), m)


@dataclass(frozen=True)
class ThresholdSchedule:
    """Score threshold: flat at ``alpha``, then rising by ``k`` per iteration, then flat."""
    n1: int
    n2: int
    alpha: float = 0.35
    k: float = 0.005

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if self.n1 > self.n2:
            raise ValueError("n1 must not exceed n2")
        if not self.alpha + self.k * (self.n2 - self.n1) < 1.0:
            raise ValueError("the threshold must stay below 1")

    @classmethod
    def for_run(cls, total_iters: int, alpha: float = 0.35, tau_max: float = 0.5,
                start: float = 0.6, stop: float = 0.85) -> "ThresholdSchedule":
        """Breakpoints at fractions of the run, slope chosen to reach ``tau_max``."""
        n1 = int(round(start * total_iters))
        n2 = max(n1, int(round(stop * total_iters)))
        k = (tau_max - alpha) / (n2 - n1) if n2 > n1 else 0.0
        return cls(n1, n2, alpha, k)


def threshold_at(schedule: ThresholdSchedule, it: int) -> float:
    if it < 0:
        raise ValueError("iteration must be non-negative")
    if it < schedule.n1:
        return schedule.alpha
    if it < schedule.n2:
        return schedule.alpha + schedule.k * (it - schedule.n1)
    return schedule.alpha + schedule.k * (schedule.n2 - schedule.n1)


@dataclass
class TrainConfig:
    """Everything a training loop needs.

    Defaults are sized for a desk-scale run of the synthetic world: SGD with
    momentum, a higher step size than large-backbone setups use, and a
    burn-in before any pseudo label is produced.
    """
    iterations: int = 12000
    batch_scenes: int = 8            # per domain, source:target 1:1
    lam: float = 1.0                 # source loss weight
    mu: float = 1.0                  # QAS scale
    qas_on_cls: bool = True
    qas_on_reg: bool = False
    pft: bool = True                 # drop target negatives
    dynamic_threshold: bool = True
    schedule: ThresholdSchedule | None = None
    ema_momentum: float = 0.999
    base_lr: float = 0.01
    warmup_iters: int = 500
    warmup_ratio: float = 1.0 / 3.0
    decay_at: tuple = (0.6, 0.9)     # fractions of the run
    momentum: float = 0.9
    clip_norm: float = 35.0
    reg_weight: float = 1.0
    # per-component regression weights: depth, du, dv, log-dims, sin, cos
    code_weights: tuple = (30.0, 0.1, 0.1, 3.0, 3.0, 3.0, 1.0, 1.0)
    depth_mode: str = PIXEL_SIZE
    gams: bool = True
    depth_constant: float = DEFAULT_DEPTH_CONSTANT
    nms_thr: float = 0.05
    max_per_img: int = 20
    assign_radius: float = 0.5       # position-based fallback, in candidate pixel extents
    flip_prob: float = 0.5
    erase_prob: float = 0.1
    tone_range: tuple = (0.8, 1.25)
    tau_max: float = 0.5
    manifest: tuple = (6, 64, 64, 9)
    score_prior: float | None = 0.01
    depth_prior: float | None = 20.0
    # fraction of the run before target supervision starts; the teacher mirrors the student until then
    burn_in: float = 0.7
    # naive self-training fine-tune: length as a fraction of the run, step size as a fraction of base_lr
    naive_finetune_frac: float = 0.1
    naive_finetune_lr: float = 0.1
    # whether naive fine-tuning treats candidates without a pseudo label as background
    naive_target_negatives: bool = False
    eval_interval: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not 0.0 <= self.burn_in < 1.0:
            raise ValueError("burn_in must lie in [0, 1)")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.schedule is None:
            object.__setattr__(self, "schedule", ThresholdSchedule.for_run(self.iterations, tau_max=self.tau_max))
        elif isinstance(self.schedule, dict):
            self.schedule = ThresholdSchedule(**self.schedule)

    def threshold(self, it: int) -> float:
        if not self.dynamic_threshold:
            return self.schedule.alpha
        return threshold_at(self.schedule, it)

    @property
    def burn_in_iters(self) -> int:
        return int(round(self.burn_in * self.iterations))

    def make_optim(self, iterations: int | None = None) -> OptimState:
        n = self.iterations if iterations is None else iterations
        return OptimState(base_lr=self.base_lr, warmup_iters=self.warmup_iters,
                          warmup_ratio=self.warmup_ratio,
                          decay_steps=tuple(int(round(f * n)) for f in self.decay_at),
                          clip_norm=self.clip_norm, momentum=self.momentum)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class PseudoLabelSet:
    """Pseudo boxes of one scene, in the frame of the view they will supervise.

    ``candidates`` names the candidate each box was decoded from.  Views of
    a scene keep candidate order, so this index carries the box to the same
    object in any augmented view.  It may be left empty for labels from
    elsewhere, which are then assigned by image position.
    """
    boxes: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    tau: float = 0.0
    candidates: list = field(default_factory=list)

    def __len__(self):
        return len(self.boxes)

    def to_dict(self) -> dict:
        labels = [{"box": b.to_dict(), "score": s} for b, s in zip(self.boxes, self.scores)]
        for lab, i in zip(labels, self.candidates):
            lab["cand"] = i
        return {"tau": self.tau, "labels": labels}

    @classmethod
    def from_dict(cls, d: dict) -> "PseudoLabelSet":
        labels = d["labels"]
        cands = [int(x["cand"]) for x in labels if "cand" in x]
        return cls([Box3D.from_dict(x["box"]) for x in labels], [float(x["score"]) for x in labels],
                   float(d["tau"]), cands if len(cands) == len(labels) else [])


def _atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_pseudo_labels(path, sets: Sequence[PseudoLabelSet]) -> None:
    _atomic_write(path, "".join(json.dumps(s.to_dict()) + "\n" for s in sets))


def load_pseudo_labels(path) -> list[PseudoLabelSet]:
    with open(path) as fh:
        return [PseudoLabelSet.from_dict(json.loads(line)) for line in fh if line.strip()]


def predict_scene_indexed(params: ModelParams, scene: SceneSample, c: float = DEFAULT_DEPTH_CONSTANT,
                          nms_thr: float = 0.05, max_per_img: int = 20,
                          score_thr: float = 0.0) -> tuple[list[Detection], list[int]]:
    """Like :func:`predict_scene`, also returning each detection's candidate index."""
    if len(scene) == 0:
        return [], []
    out = forward(params, scene.features)
    boxes, scores, ok = decode_arrays(out, scene.features, scene.camera, c, params.depth_mode)
    dets, index = [], {}
    for i in np.flatnonzero(ok & (scores >= score_thr)):
        yaw = boxes[i, 6]
        d = Detection(Box3D(*boxes[i, :6], -math.pi if yaw >= math.pi else yaw), float(scores[i]))
        index[id(d)] = int(i)
        dets.append(d)
    kept = nms(dets, nms_thr, max_per_img)
    return kept, [index[id(d)] for d in kept]


def predict_scene(params: ModelParams, scene: SceneSample, c: float = DEFAULT_DEPTH_CONSTANT,
                  nms_thr: float = 0.05, max_per_img: int = 20, score_thr: float = 0.0) -> list[Detection]:
    """Inference on one scene: forward, decode, score filter, rotated NMS."""
    return predict_scene_indexed(params, scene, c, nms_thr, max_per_img, score_thr)[0]


def generate_pseudo_labels(teacher: ModelParams, scene: SceneSample, tau: float,
                           teacher_record: TransformRecord | None = None,
                           student_record: TransformRecord | None = None,
                           c: float = DEFAULT_DEPTH_CONSTANT, nms_thr: float = 0.05,
                           max_per_img: int = 20) -> PseudoLabelSet:
    """Teacher detections surviving NMS and the threshold, moved into the student frame.

    ``scene`` is the teacher's view.  Its boxes are first mapped back to the
    original frame through ``teacher_record``, then into the student's view
    through ``student_record``.  Thresholding before NMS keeps the same boxes
    as thresholding after it, because greedy NMS never lets a lower-scored box
    suppress a higher-scored one.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    dets, cands = predict_scene_indexed(teacher, scene, c, nms_thr, max_per_img, score_thr=tau)
    boxes, scores = [], []
    for d in dets:
        b = d.box
        if teacher_record is not None:
            b = teacher_record.box_from_frame(b)
        if student_record is not None:
            b = student_record.box_to_frame(b)
        boxes.append(b)
        scores.append(d.score)
    return PseudoLabelSet(boxes, scores, tau, cands)


def supervised_arrays(scene: SceneSample, c: float, depth_mode: str, unlabelled: int = 0):
    """Labels and regression targets of a labelled scene.

    Candidates without a box get label ``unlabelled``: 0 for background, -1
    to leave them out of the loss.
    """
    n = len(scene)
    labels = np.full(n, unlabelled, dtype=int)
    targets = np.zeros((n, 8))
    for i, g in enumerate(scene.gts):
        if g is not None:
            labels[i] = 1
            targets[i] = encode_targets(g, scene.features[i], scene.camera, c, depth_mode)
    return labels, targets


def assign_pseudo(scene: SceneSample, pseudo: PseudoLabelSet, radius: float = 0.5) -> list[tuple[int, int]]:
    """Greedy (pseudo index, candidate index) pairs, highest teacher score first.

    A pseudo box goes to the free candidate whose image position lies closest
    to the box's projected center, distances measured in units of the
    candidate's own pixel width and height.  Candidates farther than
    ``radius`` are not eligible.
    """
    if len(scene) == 0 or len(pseudo) == 0:
        return []
    f = scene.features
    K = scene.camera
    taken = np.zeros(len(scene), dtype=bool)
    pairs = []
    for j in sorted(range(len(pseudo)), key=lambda j: -pseudo.scores[j]):
        b = pseudo.boxes[j]
        if b.cz <= 0:
            continue
        u = K.fx * b.cx / b.cz + K.px
        v = K.fy * b.cy / b.cz + K.py
        dist = np.hypot((f[:, 0] - u) / f[:, 2], (f[:, 1] - v) / f[:, 3])
        dist[taken] = np.inf
        i = int(np.argmin(dist))
        if dist[i] <= radius:
            taken[i] = True
            pairs.append((j, i))
    return pairs


def pseudo_pairs(scene: SceneSample, pseudo: PseudoLabelSet, radius: float = 0.5) -> list[tuple[int, int]]:
    """(pseudo index, candidate index) pairs: by origin when known, else by position."""
    if len(pseudo.candidates) == len(pseudo):
        return [(j, i) for j, i in enumerate(pseudo.candidates) if 0 <= i < len(scene)]
    return assign_pseudo(scene, pseudo, radius)


def target_arrays(student: ModelParams, scene: SceneSample, pseudo: PseudoLabelSet, cfg: TrainConfig):
    """Labels, targets and QAS weights of one student-view target scene."""
    n = len(scene)
    labels = np.full(n, -1 if cfg.pft else 0, dtype=int)
    targets = np.zeros((n, 8))
    weights = np.ones(n)
    if n == 0 or len(pseudo) == 0:
        return labels, targets, weights
    for j, i in pseudo_pairs(scene, pseudo, cfg.assign_radius):
        labels[i] = 1
        targets[i] = encode_targets(pseudo.boxes[j], scene.features[i], scene.camera,
                                    cfg.depth_constant, student.depth_mode)
        weights[i] = pseudo.scores[j]
    return labels, targets, weights


def target_domain_loss(student: ModelParams, scenes: Sequence[SceneSample],
                       pseudo: Sequence[PseudoLabelSet], cfg: TrainConfig):
    """Pseudo-label loss on student views: ``(L_T, L_T^c, L_T^r, grad, n_fg)``.

    Classification covers matched positives only, ``mu / N_fg * sum(w_i * l_i)``
    with ``w_i`` the teacher score (or 1 without QAS); regression is plain
    smooth-L1 over the same positives unless ``qas_on_reg`` is set.
    """
    parts = [target_arrays(student, s, p, cfg) for s, p in zip(scenes, pseudo)]
    if not parts:
        return 0.0, 0.0, 0.0, np.zeros_like(student.flat), 0
    labels = np.concatenate([p[0] for p in parts])
    n_fg = int((labels == 1).sum())
    if n_fg == 0 and cfg.pft:
        return 0.0, 0.0, 0.0, np.zeros_like(student.flat), 0
    feats = np.concatenate([s.features for s in scenes])
    targets = np.concatenate([p[1] for p in parts])
    w = np.concatenate([p[2] for p in parts])
    cls_w = w if cfg.qas_on_cls else None
    reg_w = w if cfg.qas_on_reg else None
    l_c, l_r, grad = loss_and_grad(student, feats, labels, targets, cls_weights=cls_w,
                                   reg_weights=reg_w, reg_weight=1.0, cls_scale=cfg.mu,
                                   code_weights=cfg.code_weights)
    return l_c + l_r, l_c, l_r, grad, n_fg


def source_loss(student: ModelParams, scenes: Sequence[SceneSample], cfg: TrainConfig, unlabelled: int = 0):
    if not scenes:
        return 0.0, 0.0, np.zeros_like(student.flat)
    parts = [supervised_arrays(s, cfg.depth_constant, student.depth_mode, unlabelled) for s in scenes]
    feats = np.concatenate([s.features for s in scenes])
    labels = np.concatenate([p[0] for p in parts])
    targets = np.concatenate([p[1] for p in parts])
    return loss_and_grad(student, feats, labels, targets, reg_weight=cfg.reg_weight,
                         code_weights=cfg.code_weights)


class Augmenter:
    """Per-domain augmentation policy (flip, multi-scale resize, appearance noise)."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self._scale_sets: dict = {}

    def scales(self, scene: SceneSample):
        if not self.cfg.gams:
            return None
        key = scene.camera
        if key not in self._scale_sets:
            self._scale_sets[key] = multiscale_set(scene.camera)
        return self._scale_sets[key]

    def weak(self, scene, rng):
        return perturb_weak(scene, rng, self.cfg.flip_prob, self.scales(scene))

    def strong(self, scene, rng):
        return perturb_strong(scene, rng, self.cfg.flip_prob, self.cfg.erase_prob,
                              self.cfg.tone_range, self.scales(scene))


@dataclass
class StepDiagnostics:
    iter: int
    lr: float
    tau: float | None
    n_pseudo: int
    loss_src_cls: float
    loss_src_reg: float
    loss_tgt_cls: float
    loss_tgt_reg: float
    teacher_ap: float | None = None
    student_ap: float | None = None


LOG_COLUMNS = ("iter", "lr", "tau", "n_pseudo", "loss_src_cls", "loss_src_reg",
               "loss_tgt_cls", "loss_tgt_reg", "teacher_ap", "student_ap")


def combined_step(student: ModelParams, teacher: EmaTeacher, optim: OptimState,
                  source_batch: Sequence[SceneSample], target_batch: Sequence[SceneSample],
                  it: int, cfg: TrainConfig, rng: np.random.Generator, aug: Augmenter | None = None):
    """One joint update: ``L = lam * L_S + L_T``, an SGD step, then the EMA update."""
    aug = aug or Augmenter(cfg)
    src_views = [aug.weak(s, rng)[0] for s in source_batch]
    tau = cfg.threshold(it)
    if it < cfg.burn_in_iters:
        ls_c, ls_r, g_s = source_loss(student, src_views, cfg)
        if not math.isfinite(ls_c + ls_r):
            raise DivergenceError(f"non-finite loss at iteration {it}")
        lr = optim.lr
        student = sgd_step(student, cfg.lam * g_s, optim)
        teacher = EmaTeacher(student.copy(), teacher.momentum)
        return student, teacher, StepDiagnostics(it, lr, tau, 0, ls_c, ls_r, 0.0, 0.0)
    student_views, pseudo = [], []
    for s in target_batch:
        t_view, t_rec = aug.weak(s, rng)
        s_view, s_rec = aug.strong(s, rng)
        pseudo.append(generate_pseudo_labels(teacher.params, t_view, tau, t_rec, s_rec,
                                             cfg.depth_constant, cfg.nms_thr, cfg.max_per_img))
        student_views.append(s_view)

    ls_c, ls_r, g_s = source_loss(student, src_views, cfg)
    _, lt_c, lt_r, g_t, n_fg = target_domain_loss(student, student_views, pseudo, cfg)
    total = cfg.lam * (ls_c + cfg.reg_weight * ls_r) + lt_c + lt_r
    if not math.isfinite(total):
        raise DivergenceError(f"non-finite loss at iteration {it}")
    lr = optim.lr
    student = sgd_step(student, cfg.lam * g_s + g_t, optim)
    teacher = ema_update(teacher, student)
    diag = StepDiagnostics(it, lr, tau, sum(len(p) for p in pseudo), ls_c, ls_r, lt_c, lt_r)
    return student, teacher, diag


@dataclass
class TrainResult:
    model: ModelParams
    log: list = field(default_factory=list)
    student: ModelParams | None = None
    extras: dict = field(default_factory=dict)


def _batches(rng, n: int, size: int):
    return rng.choice(n, size=min(size, n), replace=False)


def train_stmono3d(source: Sequence[SceneSample], target: Sequence[SceneSample], cfg: TrainConfig,
                   rng: np.random.Generator, evaluator: Callable | None = None) -> TrainResult:
    """End-to-end mean-teacher training from scratch; the teacher is the deployed model."""
    if not source or not target:
        raise ValueError("source and target datasets must be non-empty")
    student = init_params(rng, cfg.manifest, cfg.depth_mode, cfg.score_prior, cfg.depth_prior)
    teacher = EmaTeacher(student.copy(), cfg.ema_momentum)
    optim = cfg.make_optim()
    aug = Augmenter(cfg)
    log = []
    for it in range(cfg.iterations):
        src = [source[i] for i in _batches(rng, len(source), cfg.batch_scenes)]
        tgt = [target[i] for i in _batches(rng, len(target), cfg.batch_scenes)]
        try:
            student, teacher, diag = combined_step(student, teacher, optim, src, tgt, it, cfg, rng, aug)
        except DivergenceError as err:
            raise TrainingDiverged(str(err), teacher.params, student) from err
        if evaluator and cfg.eval_interval and (it + 1) % cfg.eval_interval == 0:
            diag.teacher_ap = evaluator(teacher.params)
            diag.student_ap = evaluator(student)
        log.append(diag)
    return TrainResult(teacher.params, log, student)


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, model: ModelParams, student: ModelParams | None = None):
        super().__init__(msg)
        self.model = model
        self.student = student


def train_supervised(dataset: Sequence[SceneSample], cfg: TrainConfig, rng: np.random.Generator,
                     init: ModelParams | None = None, iterations: int | None = None,
                     evaluator: Callable | None = None, unlabelled: int = 0) -> TrainResult:
    """Plain supervised loop (GAMS and flip per ``cfg``).

    ``unlabelled`` is the class given to candidates without a box, see
    :func:`supervised_arrays`.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    n_it = cfg.iterations if iterations is None else iterations
    params = init if init is not None else init_params(rng, cfg.manifest, cfg.depth_mode, cfg.score_prior, cfg.depth_prior)
    optim = cfg.make_optim(n_it)
    aug = Augmenter(cfg)
    log = []
    for it in range(n_it):
        views = [aug.weak(dataset[i], rng)[0] for i in _batches(rng, len(dataset), cfg.batch_scenes)]
        lr = optim.lr
        try:
            l_c, l_r, g = source_loss(params, views, cfg, unlabelled)
            params = sgd_step(params, g, optim)
        except DivergenceError as err:
            raise TrainingDiverged(str(err), params) from err
        diag = StepDiagnostics(it, lr, None, 0, l_c, l_r, 0.0, 0.0)
        if evaluator and cfg.eval_interval and (it + 1) % cfg.eval_interval == 0:
            diag.student_ap = evaluator(params)
        log.append(diag)
    return TrainResult(params, log)


def train_source_only(source: Sequence[SceneSample], cfg: TrainConfig, rng, **kw) -> TrainResult:
    return train_supervised(source, cfg, rng, **kw)


def train_oracle(target: Sequence[SceneSample], cfg: TrainConfig, rng, **kw) -> TrainResult:
    return train_supervised(target, cfg, rng, **kw)


def pseudo_label_dataset(model: ModelParams, scenes: Sequence[SceneSample], tau: float,
                         cfg: TrainConfig) -> list[PseudoLabelSet]:
    """One-shot pseudo labels on native-resolution, unflipped scenes."""
    return [generate_pseudo_labels(model, s, tau, c=cfg.depth_constant, nms_thr=cfg.nms_thr,
                                   max_per_img=cfg.max_per_img) for s in scenes]


def naive_st(source: Sequence[SceneSample], target: Sequence[SceneSample], cfg: TrainConfig,
             rng: np.random.Generator, pseudo_path=None) -> TrainResult:
    """Offline self-training: source training, one pseudo-labelling pass, target fine-tuning.

    Stage one is a full source-only run.  Its detections above the fixed
    threshold ``schedule.alpha`` label the target set once, and the pseudo
    boxes are then used as ground truth.  Candidates left without a pseudo box
    are ignored unless ``naive_target_negatives`` is set, in which case they
    are trained as background.  The fine-tune runs for
    ``naive_finetune_frac * iterations`` steps at ``naive_finetune_lr * base_lr``.
    """
    pre = train_supervised(source, cfg, rng)
    sets = pseudo_label_dataset(pre.model, target, cfg.schedule.alpha, cfg)
    if pseudo_path is not None:
        save_pseudo_labels(pseudo_path, sets)
    labelled = []
    for scene, ps in zip(target, sets):
        if len(scene) == 0:
            continue
        gts = [None] * len(scene)
        for j, i in pseudo_pairs(scene, ps, cfg.assign_radius):
            gts[i] = ps.boxes[j]
        labelled.append(SceneSample(scene.camera, scene.features, gts))
    n_ft = max(1, int(round(cfg.naive_finetune_frac * cfg.iterations)))
    ft_cfg = dataclasses.replace(cfg, base_lr=cfg.base_lr * cfg.naive_finetune_lr,
                                 warmup_iters=min(cfg.warmup_iters, n_ft // 10), schedule=cfg.schedule)
    if not labelled:
        return TrainResult(pre.model, pre.log, extras={"n_pseudo": 0})
    ft = train_supervised(labelled, ft_cfg, rng, init=pre.model, iterations=n_ft,
                          unlabelled=0 if cfg.naive_target_negatives else -1)
    n_pre = len(pre.log)
    log = pre.log + [dataclasses.replace(d, iter=d.iter + n_pre) for d in ft.log]
    return TrainResult(ft.model, log, extras={"n_pseudo": sum(len(s) for s in sets)})
