"""Experiment plumbing: configs, runs, evaluation files, diagnostics and reports.

Every file written here goes through :func:`atomic_write_text`, so a crashed
run never leaves a half-written artifact behind.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .boxes3d import bev_iou, iou3d
from .camera_geom import DEFAULT_DEPTH_CONSTANT
from .detector import METRIC, PIXEL_SIZE, ModelParams, load_checkpoint, load_checkpoint_extra, save_checkpoint
from .evalkit import EvalConfig, EvalResult, UndefinedGapError, closed_gap, evaluate
from .selftrain import (LOG_COLUMNS, ThresholdSchedule, TrainConfig, TrainingDiverged, naive_st,
                        predict_scene, train_oracle, train_source_only, train_stmono3d)
from .synthworld import SceneSample, load_dataset

TRAIN_MODES = ("oracle", "source-only", "naive-st", "stmono3d")
MODES = ("gen-data",) + TRAIN_MODES + ("eval", "diagnostics")
METRICS = ("AP40_3D", "AP40_BEV", "AP11_3D", "AP11_BEV")
HIST_BINS = 20
PSEUDO_WINDOW = 100


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows) -> None:
    atomic_write_text(path, _csv_text(header, rows))


# ---------------------------------------------------------------------------
# configuration

_EVAL_FIELDS = {f.name for f in dataclasses.fields(EvalConfig)}
_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}
_RUN_FIELDS = {"mode", "seed", "source_data", "target_data", "test_data"}


@dataclass
class ExperimentConfig:
    """One training run.  Serialized as a flat JSON object.

    Training and evaluation settings sit at the top level next to the run
    fields, e.g. ``{"mode": "stmono3d", "seed": 0, "iterations": 2000,
    "source_data": "src.jsonl", ...}``.  Relative paths resolve against the
    config file's directory.
    """
    mode: str
    seed: int = 0
    source_data: str | None = None
    target_data: str | None = None
    test_data: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise ConfigError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")

    @property
    def depth_mode(self) -> str:
        return self.train.depth_mode

    @property
    def gams_enabled(self) -> bool:
        return self.train.gams

    def required_paths(self) -> list[str]:
        need = {"oracle": ["target_data"], "source-only": ["source_data"],
                "naive-st": ["source_data", "target_data"], "stmono3d": ["source_data", "target_data"]}
        return need[self.mode]

    def validate_paths(self) -> None:
        for name in self.required_paths():
            p = getattr(self, name)
            if not p:
                raise ConfigError(f"mode {self.mode} needs {name}")
            if not os.path.exists(p):
                raise ConfigError(f"{name} not found: {p}")
        if self.test_data and not os.path.exists(self.test_data):
            raise ConfigError(f"test_data not found: {self.test_data}")

    def to_dict(self) -> dict:
        d = {"mode": self.mode, "seed": self.seed, "source_data": self.source_data,
             "target_data": self.target_data, "test_data": self.test_data}
        d.update(self.train.to_dict())
        d.update(dataclasses.asdict(self.eval))
        return _jsonable(d)

    @classmethod
    def from_dict(cls, d: dict, base_dir=None, mode: str | None = None) -> "ExperimentConfig":
        """Build from the flat JSON form; ``mode`` overrides the file's own."""
        d = dict(d)
        if mode is not None:
            d["mode"] = mode
        unknown = set(d) - _RUN_FIELDS - _TRAIN_FIELDS - _EVAL_FIELDS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "mode" not in d:
            raise ConfigError("config needs a mode")
        train_kw = {k: v for k, v in d.items() if k in _TRAIN_FIELDS}
        for k, v in train_kw.items():
            if isinstance(v, list):
                train_kw[k] = tuple(v)
        if isinstance(train_kw.get("schedule"), dict):
            try:
                train_kw["schedule"] = ThresholdSchedule(**train_kw["schedule"])
            except (TypeError, ValueError) as err:
                raise ConfigError(f"bad schedule: {err}") from err
        try:
            train = TrainConfig(**train_kw)
            ev = EvalConfig(**{k: v for k, v in d.items() if k in _EVAL_FIELDS})
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err
        if train.depth_mode not in (METRIC, PIXEL_SIZE):
            raise ConfigError(f"depth_mode must be {METRIC!r} or {PIXEL_SIZE!r}")
        if train.iterations < 1 or train.batch_scenes < 1:
            raise ConfigError("iterations and batch_scenes must be positive")

        def resolve(p):
            if p is None or base_dir is None or os.path.isabs(p):
                return p
            return os.path.join(base_dir, p)

        return cls(d["mode"], d.get("seed", 0), resolve(d.get("source_data")),
                   resolve(d.get("target_data")), resolve(d.get("test_data")), train, ev)

    @classmethod
    def load(cls, path, mode: str | None = None) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d, os.path.dirname(os.path.abspath(path)), mode)

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# evaluation

def evaluate_model(params: ModelParams, scenes: Sequence[SceneSample], cfg: EvalConfig = EvalConfig(),
                   c: float = DEFAULT_DEPTH_CONSTANT) -> dict[str, EvalResult]:
    """AP40 and AP11, each in 3D and BEV, of ``params`` on labelled ``scenes``.

    Keys look like ``"AP40_3D"``; ``cfg`` supplies the IoU threshold.
    """
    dets = [predict_scene(params, s, c) for s in scenes]
    gts = [s.gt_boxes for s in scenes]
    out = {}
    for mode in ("AP40", "AP11"):
        for space in ("3D", "BEV"):
            out[f"{mode}_{space}"] = evaluate(dets, gts, dataclasses.replace(cfg, ap_mode=mode, match_space=space))
    return out


def eval_document(results: dict[str, EvalResult], cfg: EvalConfig, **extra) -> dict:
    doc = {"iou_threshold": cfg.iou_threshold,
           "metrics": {k: r.to_dict() for k, r in results.items()}}
    doc.update(extra)
    return doc


def write_eval(path, results: dict[str, EvalResult], cfg: EvalConfig, **extra) -> dict:
    doc = eval_document(results, cfg, **extra)
    write_json(path, doc)
    return doc


def eval_checkpoint(model_path, data_path, out_path, cfg: EvalConfig = EvalConfig()) -> dict:
    params = load_checkpoint(model_path)
    c = load_checkpoint_extra(model_path).get("depth_constant", DEFAULT_DEPTH_CONSTANT)
    scenes = load_dataset(data_path)
    return write_eval(out_path, evaluate_model(params, scenes, cfg, c), cfg,
                      model=os.fspath(model_path), data=os.fspath(data_path))


# ---------------------------------------------------------------------------
# diagnostics

def score_iou_rows(params: ModelParams, scenes: Sequence[SceneSample], c: float = DEFAULT_DEPTH_CONSTANT):
    """(score, best BEV IoU, best 3D IoU) for every post-NMS detection."""
    rows = []
    for s in scenes:
        gts = s.gt_boxes
        for d in predict_scene(params, s, c):
            rows.append((d.score, max((bev_iou(d.box, g) for g in gts), default=0.0),
                         max((iou3d(d.box, g) for g in gts), default=0.0)))
    return rows


def score_histogram(scores, bins: int = HIST_BINS):
    counts, edges = np.histogram(np.asarray(scores, dtype=float), bins=bins, range=(0.0, 1.0))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def pseudo_counts(log, window: int = PSEUDO_WINDOW):
    """Pseudo-label totals per ``window`` consecutive iterations."""
    rows = []
    for start in range(0, len(log), window):
        chunk = log[start:start + window]
        rows.append((chunk[0].iter, chunk[-1].iter, int(sum(d.n_pseudo for d in chunk))))
    return rows


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) < 2:
        return float("nan")

    def ranks(a):
        order = np.argsort(a, kind="stable")
        r = np.empty(len(a))
        sa = a[order]
        i = 0
        while i < len(a):
            j = i
            while j + 1 < len(a) and sa[j + 1] == sa[i]:
                j += 1
            r[order[i:j + 1]] = (i + j) / 2.0
            i = j + 1
        return r

    rx, ry = ranks(x), ranks(y)
    sx, sy = rx.std(), ry.std()
    if sx == 0 or sy == 0:
        return float("nan")
    return float(((rx - rx.mean()) * (ry - ry.mean())).mean() / (sx * sy))


def export_diagnostics(params: ModelParams, scenes: Sequence[SceneSample], out_dir, log=None,
                       c: float = DEFAULT_DEPTH_CONSTANT) -> dict:
    """Write scatter, histogram and (given a training log) pseudo-count CSVs."""
    out_dir = Path(out_dir)
    rows = score_iou_rows(params, scenes, c)
    write_csv(out_dir / "score_iou.csv", ("score", "bev_iou", "iou3d"), rows)
    hist = score_histogram([r[0] for r in rows])
    write_csv(out_dir / "score_hist.csv", ("bin_lo", "bin_hi", "count"), hist)
    files = {"scatter": str(out_dir / "score_iou.csv"), "histogram": str(out_dir / "score_hist.csv")}
    if log is not None:
        write_csv(out_dir / "pseudo_counts.csv", ("iter_start", "iter_end", "n_pseudo"), pseudo_counts(log))
        files["pseudo_counts"] = str(out_dir / "pseudo_counts.csv")
    return files


# ---------------------------------------------------------------------------
# runs

def log_rows(log):
    return [tuple(getattr(d, k) for k in LOG_COLUMNS) for d in log]


def write_metric_log(path, log) -> None:
    write_csv(path, LOG_COLUMNS, log_rows(log))


@dataclass
class RunReport:
    mode: str
    results: dict = field(default_factory=dict)        # metric -> EvalResult dict
    closed_gap: dict = field(default_factory=dict)     # metric -> percent
    runtime: float = 0.0
    config_hash: str = ""
    status: str = "ok"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class DivergedRun(RuntimeError):
    """Training produced a non-finite loss; the last finite model was saved."""

    def __init__(self, msg, report: RunReport):
        super().__init__(msg)
        self.report = report


def _train(cfg: ExperimentConfig, src, tgt, rng):
    t = cfg.train
    if cfg.mode == "oracle":
        return train_oracle(tgt, t, rng)
    if cfg.mode == "source-only":
        return train_source_only(src, t, rng)
    if cfg.mode == "naive-st":
        return naive_st(src, tgt, t, rng)
    return train_stmono3d(src, tgt, t, rng)


def run(cfg: ExperimentConfig, out_dir) -> RunReport:
    """Train ``cfg.mode`` and write its artifacts into ``out_dir``.

    Files: ``config.json`` (every default spelled out), ``model.json`` (the
    deployed model; the teacher for stmono3d), ``student.json`` when there is
    one, ``metrics.csv``, and given test data ``eval.json`` plus the
    diagnostics CSVs.  ``report.json`` summarizes the run.
    """
    cfg.validate_paths()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    src = load_dataset(cfg.source_data) if cfg.source_data else []
    tgt = load_dataset(cfg.target_data) if cfg.target_data else []
    test = load_dataset(cfg.test_data) if cfg.test_data else None

    rng = np.random.default_rng(cfg.seed)
    c = cfg.train.depth_constant
    extra = {"mode": cfg.mode, "config_hash": cfg.hash(), "depth_constant": c}
    report = RunReport(cfg.mode, config_hash=cfg.hash())
    t0 = time.perf_counter()
    try:
        result = _train(cfg, src, tgt, rng)
    except TrainingDiverged as err:
        save_checkpoint(out / "model.json", err.model, {**extra, "diverged": True})
        report.status = "diverged"
        report.runtime = time.perf_counter() - t0
        write_json(out / "report.json", report.to_dict())
        raise DivergedRun(str(err), report) from err
    report.runtime = time.perf_counter() - t0

    save_checkpoint(out / "model.json", result.model, extra)
    if result.student is not None:
        save_checkpoint(out / "student.json", result.student, {**extra, "role": "student"})
    write_metric_log(out / "metrics.csv", result.log)
    if test is not None:
        results = evaluate_model(result.model, test, cfg.eval, c)
        report.results = {k: r.to_dict() for k, r in results.items()}
        write_eval(out / "eval.json", results, cfg.eval, mode=cfg.mode)
        export_diagnostics(result.model, test, out / "diagnostics",
                           result.log if cfg.mode in ("stmono3d", "naive-st") else None, c)
    write_json(out / "report.json", report.to_dict())
    return report


# ---------------------------------------------------------------------------
# reports

def _run_label(run_dir) -> tuple[str, dict]:
    with open(Path(run_dir) / "report.json") as fh:
        rep = json.load(fh)
    with open(Path(run_dir) / "config.json") as fh:
        conf = json.load(fh)
    return rep, conf


def gap_baseline_key(conf: dict) -> str:
    """Role of a source-only run: the plain baseline or its GAMS variant."""
    return "source-only+gams" if conf.get("gams", True) else "source-only"


def build_report(run_dirs: Sequence) -> dict:
    """Closed gap of every adapted run against the source-only and oracle runs.

    The gap baseline is the plain source-only model (no multi-scale
    augmentation).  When only a multi-scale source-only run exists it is
    used instead.  Closed gaps against the multi-scale source-only run are
    reported as well, under ``closed_gap_vs_gams``.
    """
    runs = []
    for d in run_dirs:
        rep, conf = _run_label(d)
        role = gap_baseline_key(conf) if rep["mode"] == "source-only" else rep["mode"]
        runs.append({"dir": os.fspath(d), "role": role, "report": rep})

    def metric(role, name):
        vals = [r["report"]["results"][name]["ap"] for r in runs
                if r["role"] == role and r["report"].get("results")]
        return float(np.mean(vals)) if vals else None

    out = {"runs": [], "mean_ap": {}}
    roles = sorted({r["role"] for r in runs})
    for role in roles:
        out["mean_ap"][role] = {m: metric(role, m) for m in METRICS}
    for r in runs:
        entry = {"dir": r["dir"], "role": r["role"], "status": r["report"].get("status", "ok"),
                 "config_hash": r["report"].get("config_hash"),
                 "ap": {m: r["report"]["results"][m]["ap"] for m in METRICS if r["report"].get("results")}}
        out["runs"].append(entry)

    for key, base_role in (("closed_gap", "source-only"), ("closed_gap_vs_gams", "source-only+gams")):
        if base_role == "source-only" and "source-only" not in roles:
            base_role = "source-only+gams"
        table = {}
        for role in roles:
            if role.startswith("source-only") or role == "oracle":
                continue
            row = {}
            for m in METRICS:
                res, base, orc = metric(role, m), metric(base_role, m), metric("oracle", m)
                if None in (res, base, orc):
                    continue
                try:
                    row[m] = closed_gap(res, base, orc)
                except UndefinedGapError:
                    row[m] = None
            if row:
                table[role] = row
        out[key] = table
    return out


def write_report(run_dirs: Sequence, out_path) -> dict:
    doc = build_report(run_dirs)
    write_json(out_path, doc)
    return doc


def finite_or_none(x):
    return x if x is not None and math.isfinite(x) else None
