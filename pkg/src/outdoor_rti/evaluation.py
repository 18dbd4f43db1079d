"""Metrics (energy coefficient, false alarms, RMSE) and the experiment harness
that runs every selection strategy over the same trace."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .channel_model import (CalibrationWindow, UnderdeterminedFitError, estimate_stats, fade_levels,
                            fit_path_loss)
from .pipeline import RtiPipeline, build_imaging
from .rti import RtiConfig
from .scene import Deployment
from .selection import Strategy, energy_coefficient, select
from .tracking import TrackerConfig

log = logging.getLogger(__name__)


class UndefinedMetricError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class AlarmSummary:
    rate: float                  # % of frames with |P_hat| != |P|
    empty_rate: float            # % of empty-area frames with a detection
    episodes: list               # (start_frame, n_frames, duration_s)

    @property
    def n_episodes(self):
        return len(self.episodes)

    @property
    def duration(self):
        return float(sum(e[2] for e in self.episodes))


def _counts(estimates):
    return np.array([len(e) for e in estimates])


def false_alarm_rate(estimates, truth, t_s: float = 0.34) -> AlarmSummary:
    est_n = _counts(estimates)
    true_n = truth.counts() if hasattr(truth, "counts") else _counts(truth)
    if len(est_n) != len(true_n):
        raise ValueError(f"misaligned traces: {len(est_n)} estimate frames vs {len(true_n)} truth frames")
    K = len(true_n)
    if K == 0:
        raise ValueError("no frames")
    bad = est_n != true_n
    episodes = []
    k = 0
    while k < K:
        if bad[k]:
            s = k
            while k < K and bad[k]:
                k += 1
            episodes.append((s, k - s, (k - s) * t_s))
        else:
            k += 1
    empty = true_n == 0
    empty_rate = 100.0 * float(np.mean(est_n[empty] > 0)) if empty.any() else float("nan")
    return AlarmSummary(100.0 * float(bad.mean()), empty_rate, episodes)


def standing_flags(truth, t_s: float, window_s: float = 1.0, speed: float = 0.1) -> list:
    """Per-frame motion flags (True = moving) from true positions: standing
    when the speed over a window of ``window_s`` centred on the frame is below
    ``speed``. Falls back to the trace's own flags when the person count
    changes inside the window or there is more than one person."""
    K = truth.n_frames
    h = max(1, int(round(window_s / t_s / 2)))
    out = []
    for k in range(K):
        p = truth.positions[k]
        a, b = max(0, k - h), min(K - 1, k + h)
        if len(p) == 1 and len(truth.positions[a]) == 1 and len(truth.positions[b]) == 1 and b > a:
            v = np.linalg.norm(truth.positions[b][0] - truth.positions[a][0]) / ((b - a) * t_s)
            out.append(np.array([v >= speed]))
        else:
            out.append(np.asarray(truth.moving[k], dtype=bool))
    return out


def localization_errors(estimates, truth, moving=None):
    """Errors and motion flags over frames with exactly one true and one
    estimated person."""
    moving = truth.moving if moving is None else moving
    err, mov = [], []
    for k, e in enumerate(estimates):
        if len(e) == 1 and len(truth.positions[k]) == 1:
            err.append(float(np.linalg.norm(np.asarray(e[0]) - truth.positions[k][0])))
            mov.append(bool(moving[k][0]))
    return np.array(err), np.array(mov, dtype=bool)


def rmse(estimates, truth, moving=None):
    """(e_m, e_s): RMSE over moving and standing single-person frames. A
    category without frames is NaN; no frames at all raises."""
    err, mov = localization_errors(estimates, truth, moving)
    if err.size == 0:
        raise UndefinedMetricError("no frames with exactly one true and one estimated person")

    def r(mask):
        return float(np.sqrt(np.mean(err[mask] ** 2))) if mask.any() else float("nan")

    return r(mov), r(~mov)


# ---------------------------------------------------------------------------
# Experiment harness
# ---------------------------------------------------------------------------

@dataclass
class Schedule:
    """Calibration/reselection cadence in frames (time-compressed)."""
    calib_frames: int
    reselect_every: int
    start: int = 0

    @classmethod
    def from_times(cls, t_s, delta_t_c=300.0, delta_t_n=7200.0):
        return cls(int(round(delta_t_c / t_s)), int(round(delta_t_n / t_s)))

    def windows(self, n_frames):
        out = []
        s = self.start
        while s + self.calib_frames <= n_frames:
            out.append(CalibrationWindow(s, s + self.calib_frames))
            s += self.reselect_every
        return out


@dataclass
class StrategyRun:
    strategy: str
    estimates: list
    selections: list
    theta_e: float
    subtract_background: bool = True


@dataclass
class ReportRow:
    strategy: str
    theta_e: float
    false_alarm_pct: float
    empty_false_alarm_pct: float
    e_m: float
    e_s: float
    frames: int
    n_estimates: int
    episodes: int
    episode_duration_s: float
    max_error: float
    background_subtraction: bool = True
    note: str = ""


@dataclass
class EvalReport:
    rows: list
    ablation: list = field(default_factory=list)
    sweeps: list = field(default_factory=list)  # dicts: parameter, value, e_m, e_s, ...
    episodes: dict = field(default_factory=dict)

    def row(self, strategy):
        s = Strategy.parse(strategy).value
        for r in self.rows:
            if r.strategy == s:
                return r
        raise KeyError(strategy)

    def to_csv(self, path):
        names = list(ReportRow.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.rows + self.ablation:
                w.writerow([getattr(r, n) for n in names])

    def episodes_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["strategy", "start_frame", "frames", "duration_s"])
            for s, eps in self.episodes.items():
                for e in eps:
                    w.writerow([s, *e])

    def sweeps_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "value", "e_m", "e_s", "false_alarm_pct"])
            for s in self.sweeps:
                w.writerow([s["parameter"], s["value"], s["e_m"], s["e_s"], s["false_alarm_pct"]])


def check_calibration_windows(windows, truth):
    if truth is None:
        return
    counts = truth.counts()
    for w in windows:
        if counts[w.start:w.end].any():
            raise ValueError(f"calibration window {w.start}-{w.end} is not empty of people")


def selection_for_window(trace, window, strategy, deployment, config: RtiConfig):
    """Statistics, path-loss fit (when the strategy needs one) and selection
    for one calibration window."""
    strategy = Strategy.parse(strategy) if not isinstance(strategy, Strategy) else strategy
    stats = estimate_stats(trace, window)
    mode = strategy.model_mode
    if mode is not None:
        model = fit_path_loss(stats, deployment, mode)
        stats = fade_levels(stats, model, deployment)
    return select(stats, strategy, config.upsilon_r)


def run_strategy(trace, deployment: Deployment, strategy, config: RtiConfig = RtiConfig(),
                 schedule: Schedule | None = None, tracker: TrackerConfig | None = None,
                 imaging=None, subtract_background: bool = True, gated: bool = True) -> StrategyRun:
    """Full processing loop for one strategy: every scheduled window, re-estimate
    statistics, refit the path-loss model, reselect; stream every frame."""
    strategy = Strategy.parse(strategy) if not isinstance(strategy, Strategy) else strategy
    schedule = schedule or Schedule.from_times(config.t_s)
    windows = schedule.windows(trace.n_frames)
    if not windows:
        raise ValueError("trace too short for any calibration window")
    pipe = RtiPipeline(deployment, config, tracker, imaging, subtract_background, gated)
    calib_end = {w.end: w for w in windows}
    in_calib = np.zeros(trace.n_frames, dtype=bool)
    for w in windows:
        in_calib[w.start:w.end] = True
    selections, estimates = [], []
    for k in range(trace.n_frames):
        if k in calib_end:
            sel = selection_for_window(trace, calib_end[k], strategy, deployment, config)
            selections.append(sel)
            pipe.set_selection(sel)
        res = pipe.step(trace.rss[k], calibrating=bool(in_calib[k]))
        estimates.append(res.estimates)
    if len(selections) < len(windows):  # window ending exactly at the trace end
        selections.append(selection_for_window(trace, windows[-1], strategy, deployment, config))
    n, c = deployment.n_nodes, len(deployment.channels)
    theta = float(np.mean([energy_coefficient(s, n, c) for s in selections]))
    return StrategyRun(strategy.value, estimates, selections, theta, subtract_background)


def summarize(run: StrategyRun, truth, t_s: float, moving=None, note="") -> ReportRow:
    alarms = false_alarm_rate(run.estimates, truth, t_s)
    err, mov = localization_errors(run.estimates, truth, moving)
    try:
        e_m, e_s = rmse(run.estimates, truth, moving)
    except UndefinedMetricError:
        e_m = e_s = float("nan")
    return ReportRow(run.strategy, run.theta_e, alarms.rate, alarms.empty_rate, e_m, e_s,
                     len(run.estimates), int(err.size), alarms.n_episodes, alarms.duration,
                     float(err.max()) if err.size else float("nan"), run.subtract_background, note)


def _flb_note(strategy):
    if strategy.startswith("FLB"):
        return "fixed lambda (fade-dependent ellipse width not modelled)"
    return ""


def _run_one(args):
    trace, truth, deployment, strategy, config, schedule, tracker, imaging, subtract, moving = args
    run = run_strategy(trace, deployment, strategy, config, schedule, tracker, imaging, subtract)
    return run, summarize(run, truth, config.t_s, moving, _flb_note(run.strategy))


def run_experiment(trace, truth, strategies, deployment: Deployment, config: RtiConfig = RtiConfig(),
                   schedule: Schedule | None = None, tracker: TrackerConfig | None = None,
                   ablation: bool = False, sweeps: dict | None = None, workers: int = 1,
                   imaging=None) -> EvalReport:
    """Run every strategy on the identical trace and report metrics.

    ``ablation`` adds an OUT+ run without background subtraction; ``sweeps``
    maps parameter names ("lambda", "t_w_t_b", "t_w", "t_b") to value lists
    and records OUT+ RMSEs for each value.
    """
    schedule = schedule or Schedule.from_times(config.t_s)
    check_calibration_windows(schedule.windows(trace.n_frames), truth)
    strategies = [Strategy.parse(s) for s in strategies]
    imaging = imaging or build_imaging(deployment, config)
    moving = standing_flags(truth, config.t_s)
    jobs = [(trace, truth, deployment, s, config, schedule, tracker, imaging, True, moving) for s in strategies]
    if ablation:
        jobs.append((trace, truth, deployment, Strategy.OUT_PLUS, config, schedule, tracker, imaging, False, moving))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    report = EvalReport([r for run, r in results if run.subtract_background],
                        [r for run, r in results if not run.subtract_background])
    for job, (run, row) in zip(jobs, results):
        key = run.strategy + ("" if run.subtract_background else " (no background subtraction)")
        report.episodes[key] = false_alarm_rate(run.estimates, truth, config.t_s).episodes
    for param, values in (sweeps or {}).items():
        for v in values:
            cfg = _sweep_config(config, param, v)
            img = imaging if cfg.lam == config.lam and cfg.p == config.p else build_imaging(deployment, cfg)
            run = run_strategy(trace, deployment, Strategy.OUT_PLUS, cfg, schedule, tracker, img)
            row = summarize(run, truth, cfg.t_s, moving)
            report.sweeps.append({"parameter": param, "value": v, "e_m": row.e_m, "e_s": row.e_s,
                                  "false_alarm_pct": row.false_alarm_pct})
    return report


def _sweep_config(config: RtiConfig, param: str, value: float) -> RtiConfig:
    if param in ("lambda", "lam"):
        return config.replace(lam=float(value))
    if param == "t_w":
        return config.replace(t_w=float(value))
    if param == "t_b":
        return config.replace(t_b=float(value))
    if param in ("t_w_t_b", "t_w=t_b"):
        return config.replace(t_w=float(value), t_b=float(value))
    raise ValueError(f"unknown sweep parameter {param!r}")
