"""Forward-model RSS trace generator.

Each sample is the planted node-specific log-distance prediction plus a
static multipath offset per (link, channel), minus a fixed human attenuation
whenever a walker stands inside the link's sensitivity ellipse, plus
zero-mean environmental noise whose spread grows with wind intensity and
shrinks with the pair's fade level.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel_model import NODE_SPECIFIC, PathLossModel
from .scene import Deployment, LinkGeometry, LinkKey, enumerate_links

RSS_MIN, RSS_MAX = -110.0, 10.0
SENSITIVITY_DBM = -97.0


@dataclass(frozen=True)
class FadeNoiseLaw:
    """std(F, w) = w * sigma_max * clamp(1 - F / f0, g_min, g_max)."""
    sigma_max: float = 3.0
    f0: float = 10.0
    g_min: float = 0.1
    g_max: float = 3.0

    def gain(self, fade):
        return np.clip(1.0 - np.asarray(fade, dtype=float) / self.f0, self.g_min, self.g_max)

    def std(self, fade, wind):
        return np.asarray(wind, dtype=float) * self.sigma_max * self.gain(fade)


def wind_noise_sample(fade, wind, rng: np.random.Generator, law: FadeNoiseLaw | None = None):
    """Zero-mean Gaussian environmental noise in dB for fade level(s) ``fade``."""
    if np.min(wind) < 0.0 or np.max(wind) > 1.0:
        raise ValueError("wind intensity must lie in [0, 1]")
    law = law or FadeNoiseLaw()
    sd = law.std(fade, wind)
    return rng.standard_normal(np.shape(sd)) * sd


@dataclass
class WindProfile:
    """Piecewise-constant wind intensity: ``breaks`` are (t_start, w)."""
    breaks: list[tuple[float, float]] = field(default_factory=lambda: [(0.0, 0.0)])

    def __post_init__(self):
        self.breaks = sorted((float(t), float(w)) for t, w in self.breaks)
        if not self.breaks:
            raise ValueError("wind profile needs at least one break")
        for _, w in self.breaks:
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"wind intensity {w} outside [0, 1]")

    @classmethod
    def constant(cls, w):
        return cls([(0.0, w)])

    def at(self, t):
        t = np.asarray(t, dtype=float)
        starts = np.array([b[0] for b in self.breaks])
        vals = np.array([b[1] for b in self.breaks])
        idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(vals) - 1)
        return vals[idx]


@dataclass
class Trajectory:
    """Walker path as (time, x, y) waypoints; absent outside [t_first, t_last]."""
    waypoints: list[tuple[float, float, float]]

    def __post_init__(self):
        self.waypoints = [tuple(map(float, w)) for w in self.waypoints]
        if not self.waypoints:
            raise ValueError("trajectory needs at least one waypoint")
        ts = [w[0] for w in self.waypoints]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("waypoint times must be strictly increasing")

    def state(self, t):
        """(x, y, moving) at time t, or None when the walker is absent."""
        wp = self.waypoints
        if t < wp[0][0] - 1e-12 or t > wp[-1][0] + 1e-12:
            return None
        if len(wp) == 1:
            return wp[0][1], wp[0][2], False
        i = 0
        while i < len(wp) - 2 and t >= wp[i + 1][0]:
            i += 1
        (t0, x0, y0), (t1, x1, y1) = wp[i], wp[i + 1]
        a = min(max((t - t0) / (t1 - t0), 0.0), 1.0)
        moving = not (x0 == x1 and y0 == y1)
        return x0 + a * (x1 - x0), y0 + a * (y1 - y0), moving


@dataclass
class ScenarioConfig:
    deployment: Deployment
    duration: float
    t_s: float = 0.34
    seed: int = 0
    walkers: list[Trajectory] = field(default_factory=list)
    a_h: float = 12.0
    lam: float = 1.0
    wind: WindProfile = field(default_factory=WindProfile)
    noise: FadeNoiseLaw = field(default_factory=FadeNoiseLaw)
    offset_range: tuple[float, float] = (-10.0, 6.0)
    eta_range: tuple[float, float] = (2.0, 3.5)
    p0_range: tuple[float, float] = (-48.0, -32.0)
    path_loss: PathLossModel | None = None
    drop_missing: bool = True

    def __post_init__(self):
        if not self.t_s > 0:
            raise ValueError("sample interval must be positive")
        if self.a_h < 0:
            raise ValueError("human attenuation must be non-negative")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        area = self.deployment.area
        for tr in self.walkers:
            for _, x, y in tr.waypoints:
                if not area.contains(x, y):
                    raise ValueError(f"trajectory waypoint ({x}, {y}) leaves the deployment area")

    @property
    def n_frames(self) -> int:
        return int(math.floor(self.duration / self.t_s + 1e-9))

    def to_dict(self):
        d = {
            "deployment": self.deployment.to_dict(),
            "duration": self.duration, "t_s": self.t_s, "seed": self.seed,
            "walkers": [[list(w) for w in tr.waypoints] for tr in self.walkers],
            "a_h": self.a_h, "lam": self.lam,
            "wind": [list(b) for b in self.wind.breaks],
            "noise": {"sigma_max": self.noise.sigma_max, "f0": self.noise.f0,
                      "g_min": self.noise.g_min, "g_max": self.noise.g_max},
            "offset_range": list(self.offset_range),
            "eta_range": list(self.eta_range),
            "p0_range": list(self.p0_range),
            "drop_missing": self.drop_missing,
        }
        if self.path_loss is not None:
            d["path_loss"] = self.path_loss.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        known = {"deployment", "duration", "t_s", "seed", "walkers", "a_h", "lam", "wind", "noise",
                 "offset_range", "eta_range", "p0_range", "drop_missing", "path_loss"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        kw = dict(d)
        kw["deployment"] = Deployment.from_dict(d["deployment"])
        kw["walkers"] = [Trajectory([tuple(w) for w in tr]) for tr in d.get("walkers", [])]
        if "wind" in d:
            w = d["wind"]
            kw["wind"] = WindProfile.constant(float(w)) if isinstance(w, (int, float)) else WindProfile([tuple(b) for b in w])
        if "noise" in d:
            kw["noise"] = FadeNoiseLaw(**d["noise"])
        for k in ("offset_range", "eta_range", "p0_range"):
            if k in d:
                kw[k] = tuple(d[k])
        if "path_loss" in d:
            kw["path_loss"] = PathLossModel.from_dict(d["path_loss"])
        return cls(**kw)


def load_scenario(path) -> ScenarioConfig:
    with open(path) as fh:
        return ScenarioConfig.from_dict(json.load(fh))


@dataclass
class RssTrace:
    """RSS samples as a dense (K, L, C) array in dBm; NaN marks a missing sample."""
    links: list[LinkKey]
    channels: list[int]
    t: np.ndarray
    rss: np.ndarray
    t_s: float = 0.34

    @property
    def n_frames(self) -> int:
        return self.rss.shape[0]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "t", "tx", "rx", "channel", "rss_dbm"])
            for k in range(self.n_frames):
                tk = f"{self.t[k]:.6f}"
                frame = self.rss[k]
                li, ci = np.nonzero(~np.isnan(frame))
                for i, j in zip(li, ci):
                    l = self.links[i]
                    w.writerow([k, tk, l.tx, l.rx, self.channels[j], f"{frame[i, j]:.6f}"])

    @classmethod
    def from_csv(cls, path, deployment: Deployment, t_s: float | None = None):
        links = enumerate_links(deployment)
        channels = list(deployment.channels)
        li = {(l.tx, l.rx): i for i, l in enumerate(links)}
        ci = {c: j for j, c in enumerate(channels)}
        rows = []
        times = {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                k = int(row["frame"])
                times[k] = float(row["t"])
                rows.append((k, li[(int(row["tx"]), int(row["rx"]))], ci[int(row["channel"])], float(row["rss_dbm"])))
        K = max(times) + 1 if times else 0
        rss = np.full((K, len(links), len(channels)), np.nan)
        for k, i, j, v in rows:
            rss[k, i, j] = v
        if t_s is None:
            t_s = (times[K - 1] - times[0]) / (K - 1) if K > 1 else 0.34
        t = np.array([times.get(k, k * t_s) for k in range(K)])
        return cls(links, channels, t, rss, t_s)


@dataclass
class TruthTrace:
    t: np.ndarray
    positions: list[np.ndarray]  # per frame (n_k, 2)
    moving: list[np.ndarray]     # per frame (n_k,) bool

    @property
    def n_frames(self):
        return len(self.t)

    def counts(self) -> np.ndarray:
        return np.array([len(p) for p in self.positions])

    def to_csv(self, path):
        width = max([len(p) for p in self.positions] + [0])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["frame", "t", "n_people"]
            for i in range(1, width + 1):
                head += [f"x{i}", f"y{i}", f"moving{i}"]
            w.writerow(head)
            for k, (p, m) in enumerate(zip(self.positions, self.moving)):
                row = [k, f"{self.t[k]:.6f}", len(p)]
                for (x, y), mv in zip(p, m):
                    row += [f"{x:.6f}", f"{y:.6f}", int(bool(mv))]
                row += [""] * (len(head) - len(row))
                w.writerow(row)

    @classmethod
    def from_csv(cls, path):
        t, pos, mov = [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                t.append(float(row["t"]))
                n = int(row["n_people"])
                pos.append(np.array([[float(row[f"x{i}"]), float(row[f"y{i}"])] for i in range(1, n + 1)]).reshape(n, 2))
                mov.append(np.array([bool(int(row[f"moving{i}"])) for i in range(1, n + 1)], dtype=bool))
        return cls(np.array(t), pos, mov)


def planted_path_loss(scenario: ScenarioConfig, rng: np.random.Generator) -> PathLossModel:
    params = {}
    for n in scenario.deployment.node_ids:
        eta = rng.uniform(*scenario.eta_range)
        p0 = rng.uniform(*scenario.p0_range)
        params[n] = (float(eta), float(p0), 1.0)
    return PathLossModel(NODE_SPECIFIC, params)


@dataclass
class GeneratedTrace:
    trace: RssTrace
    truth: TruthTrace
    model: PathLossModel
    offsets: np.ndarray   # planted (L, C) static fade offsets, i.e. true fade levels
    clean: np.ndarray     # (L, C) noise-free empty-area RSS

    def __iter__(self):
        return iter((self.trace, self.truth))


def generate_trace(scenario: ScenarioConfig) -> GeneratedTrace:
    """Generate (trace, truth) for a scenario. Fully determined by the seed.

    The returned object unpacks as ``trace, truth`` and also exposes the
    planted path-loss model and static offsets for oracle checks.
    """
    rng = np.random.default_rng(scenario.seed)
    dep = scenario.deployment
    geom = LinkGeometry(dep)
    L, C, K = len(geom), len(dep.channels), scenario.n_frames

    model = scenario.path_loss or planted_path_loss(scenario, rng)
    lo, hi = scenario.offset_range
    offsets = rng.uniform(lo, hi, size=(L, C)) if hi > lo else np.full((L, C), float(lo))
    clean = model.predict_links(geom)[:, None] + offsets

    t = np.arange(K) * scenario.t_s
    wind = scenario.wind.at(t)
    sd = scenario.noise.std(offsets[None], wind[:, None, None])
    noise = rng.standard_normal((K, L, C)) * sd
    drop_u = rng.uniform(size=(K, L, C))

    positions, moving = [], []
    shadow = np.zeros((K, L))
    for k, tk in enumerate(t):
        pk, mk = [], []
        for tr in scenario.walkers:
            s = tr.state(tk)
            if s is not None:
                pk.append(s[:2])
                mk.append(s[2])
        positions.append(np.array(pk, dtype=float).reshape(len(pk), 2))
        moving.append(np.array(mk, dtype=bool))
        if pk:
            shadow[k] = geom.covers(pk, scenario.lam)

    rss = clean[None] - scenario.a_h * shadow[:, :, None] + noise
    rss = np.clip(rss, RSS_MIN, RSS_MAX)
    if scenario.drop_missing:
        p_drop = np.clip((SENSITIVITY_DBM - rss) / (SENSITIVITY_DBM - RSS_MIN), 0.0, 1.0)
        rss = np.where(drop_u < p_drop, np.nan, rss)

    trace = RssTrace(list(geom.links), list(dep.channels), t, rss, scenario.t_s)
    truth = TruthTrace(t, positions, moving)
    return GeneratedTrace(trace, truth, model, offsets, clean)
