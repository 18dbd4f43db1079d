"""Calibration statistics, log-distance path-loss fitting and fade levels."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .scene import Deployment, LinkGeometry, LinkKey, enumerate_links

NODE_SPECIFIC = "node-specific"
GLOBAL = "global"


class UnderdeterminedFitError(ValueError):
    def __init__(self, nodes):
        self.nodes = list(nodes)
        super().__init__(f"path-loss fit underdetermined for transmitter(s) {self.nodes}")


@dataclass
class PathLossModel:
    """Log-distance model P(d) = P0 - 10 eta log10(d / d0).

    In node-specific mode ``params`` maps transmitter id -> (eta, p0, d0); in
    global mode it holds the single key ``None``.
    """
    mode: str
    params: dict

    def __post_init__(self):
        if self.mode not in (NODE_SPECIFIC, GLOBAL):
            raise ValueError(f"unknown path-loss mode {self.mode!r}")
        for key, (eta, p0, d0) in self.params.items():
            if not d0 > 0 or not np.isfinite(eta):
                raise ValueError(f"invalid path-loss parameters for {key}: {(eta, p0, d0)}")

    def entry(self, tx):
        key = None if self.mode == GLOBAL else tx
        if key not in self.params:
            raise KeyError(f"path-loss model has no entry for transmitter {tx}")
        return self.params[key]

    def predict(self, tx, d):
        eta, p0, d0 = self.entry(tx)
        return p0 - 10.0 * eta * np.log10(np.asarray(d, dtype=float) / d0)

    def predict_links(self, geometry: LinkGeometry) -> np.ndarray:
        return np.array([self.predict(l.tx, d) for l, d in zip(geometry.links, geometry.length)])

    def to_dict(self):
        return {
            "mode": self.mode,
            "nodes": {("global" if k is None else str(k)): {"eta": e, "p0_dbm": p, "d0_m": d}
                      for k, (e, p, d) in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d):
        params = {}
        for k, v in d["nodes"].items():
            key = None if k == "global" else int(k)
            params[key] = (float(v["eta"]), float(v["p0_dbm"]), float(v["d0_m"]))
        return cls(d["mode"], params)


def save_model(model: PathLossModel, path):
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=2)


def load_model(path) -> PathLossModel:
    with open(path) as fh:
        return PathLossModel.from_dict(json.load(fh))


@dataclass
class CalibrationWindow:
    start: int
    end: int  # exclusive

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError("calibration window must have end > start")

    @property
    def frames(self):
        return range(self.start, self.end)


@dataclass
class LinkChannelStats:
    """Per (link, channel) calibration statistics, arrays shaped (L, C).

    Pairs that received no packets have count 0 and NaN mean/variance.
    """
    links: list[LinkKey]
    channels: list[int]
    mean: np.ndarray
    var: np.ndarray
    count: np.ndarray
    fade: np.ndarray | None = None
    model_mode: str | None = None

    @property
    def present(self) -> np.ndarray:
        return self.count > 0

    def with_fade(self, fade, mode):
        return LinkChannelStats(self.links, self.channels, self.mean, self.var, self.count,
                                np.asarray(fade, dtype=float), mode)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tx", "rx", "channel", "mean_dbm", "var_db2", "n", "fade_db"])
            for i, l in enumerate(self.links):
                for j, c in enumerate(self.channels):
                    if self.count[i, j] == 0:
                        continue
                    fade = "" if self.fade is None or np.isnan(self.fade[i, j]) else repr(float(self.fade[i, j]))
                    w.writerow([l.tx, l.rx, c, repr(float(self.mean[i, j])),
                                repr(float(self.var[i, j])), int(self.count[i, j]), fade])

    @classmethod
    def from_csv(cls, path, deployment: Deployment):
        links = enumerate_links(deployment)
        channels = list(deployment.channels)
        li = {(l.tx, l.rx): i for i, l in enumerate(links)}
        ci = {c: j for j, c in enumerate(channels)}
        shape = (len(links), len(channels))
        mean, var, fade = np.full(shape, np.nan), np.full(shape, np.nan), np.full(shape, np.nan)
        count = np.zeros(shape, dtype=int)
        has_fade = False
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                i, j = li[(int(row["tx"]), int(row["rx"]))], ci[int(row["channel"])]
                mean[i, j] = float(row["mean_dbm"])
                var[i, j] = float(row["var_db2"])
                count[i, j] = int(row["n"])
                if row.get("fade_db"):
                    fade[i, j] = float(row["fade_db"])
                    has_fade = True
        return cls(links, channels, mean, var, count, fade if has_fade else None)


def estimate_stats(trace, window: CalibrationWindow) -> LinkChannelStats:
    """Sample mean and unbiased variance of every pair over the window."""
    block = trace.rss[window.start:window.end]
    if block.shape[0] == 0:
        raise ValueError("calibration window selects no frames")
    present = ~np.isnan(block)
    count = present.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, np.nansum(block, axis=0) / np.maximum(count, 1), np.nan)
        dev = np.where(present, block - mean[None], 0.0)
        ss = (dev ** 2).sum(axis=0)
        var = np.where(count > 1, ss / np.maximum(count - 1, 1), np.where(count == 1, 0.0, np.nan))
    return LinkChannelStats(list(trace.links), list(trace.channels), mean, var, count)


def _ols(x, y):
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef


def fit_path_loss(stats: LinkChannelStats, deployment: Deployment, mode: str = NODE_SPECIFIC,
                  d0: float = 1.0) -> PathLossModel:
    """Ordinary least squares of mean RSS against -10 log10(d / d0).

    All channels of a transmitter's links are pooled. Raises
    :class:`UnderdeterminedFitError` naming every transmitter (or ``global``)
    lacking defined means at two distinct distances.
    """
    geom = LinkGeometry(deployment)
    xs = -10.0 * np.log10(geom.length / d0)
    L, C = stats.mean.shape
    xb = np.repeat(xs[:, None], C, axis=1)
    ok = stats.present & ~np.isnan(stats.mean)

    def fit(mask):
        x, y = xb[mask], stats.mean[mask]
        if len(np.unique(np.round(x, 12))) < 2:
            return None
        p0, eta = _ols(x, y)
        return (float(eta), float(p0), float(d0))

    if mode == GLOBAL:
        res = fit(ok)
        if res is None:
            raise UnderdeterminedFitError(["global"])
        return PathLossModel(GLOBAL, {None: res})
    if mode != NODE_SPECIFIC:
        raise ValueError(f"unknown path-loss mode {mode!r}")
    tx = np.array([l.tx for l in stats.links])
    params, bad = {}, []
    for n in deployment.node_ids:
        res = fit(ok & (tx == n)[:, None])
        if res is None:
            bad.append(n)
        else:
            params[n] = res
    if bad:
        raise UnderdeterminedFitError(bad)
    return PathLossModel(NODE_SPECIFIC, params)


def fade_levels(stats: LinkChannelStats, model: PathLossModel, deployment: Deployment) -> LinkChannelStats:
    """Measured mean minus model prediction, using the transmitter's entry."""
    geom = LinkGeometry(deployment)
    predicted = np.empty(len(stats.links))
    for i, (l, d) in enumerate(zip(stats.links, geom.length)):
        if stats.present[i].any():
            predicted[i] = model.predict(l.tx, d)
        else:
            predicted[i] = np.nan
    fade = stats.mean - predicted[:, None]
    return stats.with_fade(fade, model.mode)
