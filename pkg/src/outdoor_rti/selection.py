"""Link-channel pair selection strategies and the energy-efficiency coefficient.

Every strategy is described by up to two filters and a scoring rule:

* a positivity filter ``Lp`` (fade level > 0, or relative fade level > 0),
* a connectivity filter ``Lr`` (calibration mean above ``upsilon_r``),
* either a per-link argmax over the surviving channels ("+" variants) or a
  weighted average over all of them ("w"/"p"/"f" variants).

Filters a strategy does not use are the full set of measured pairs, so
``Ls == Lp & Lr`` and ``L <= Ls`` hold for every strategy.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .channel_model import GLOBAL, NODE_SPECIFIC, LinkChannelStats
from .scene import LinkKey

log = logging.getLogger(__name__)

VAR_FLOOR = 0.01


class Strategy(str, Enum):
    OUT_PLUS = "OUT+"
    OUT_W = "OUTw"
    COM_PLUS = "COM+"
    COM_W = "COMw"
    FLB_U = "FLB_U"
    FLB_W = "FLB_w"
    FLB_PLUS = "FLB+"
    RFL_P = "RFL_p"
    RFL_F = "RFL_f"
    RFL_PLUS = "RFL+"

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        if isinstance(name, cls):
            return name
        key = str(name).replace("_", "").replace("^", "").replace("{", "").replace("}", "").upper()
        for s in cls:
            if s.value.replace("_", "").upper() == key:
                return s
        raise ValueError(f"unknown selection strategy {name!r}")

    @property
    def model_mode(self):
        """Path-loss mode whose fade levels drive the strategy (None: not needed)."""
        if self in (Strategy.OUT_PLUS, Strategy.OUT_W):
            return NODE_SPECIFIC
        if self in (Strategy.FLB_U, Strategy.RFL_P, Strategy.RFL_F, Strategy.RFL_PLUS):
            return None
        return GLOBAL

    @property
    def weighted(self) -> bool:
        return self in (Strategy.OUT_W, Strategy.COM_W, Strategy.FLB_U, Strategy.FLB_W,
                        Strategy.RFL_P, Strategy.RFL_F)


@dataclass
class SelectionSet:
    strategy: Strategy
    links: list[LinkKey]
    channels: list[int]
    sets: dict          # "Lp", "Lr", "Ls", "L" -> (L, C) bool masks
    weights: np.ndarray  # (L, C); zero outside "L"
    model_mode: str | None = None

    @property
    def mask(self) -> np.ndarray:
        return self.sets["L"]

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    @property
    def weighted(self) -> bool:
        return self.strategy.weighted

    def pairs(self):
        for i, j in zip(*np.nonzero(self.mask)):
            yield self.links[i], self.channels[j], float(self.weights[i, j])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tx", "rx", "channel", "weight", "set"])
            for name in ("Lp", "Lr", "Ls", "L"):
                m = self.sets[name]
                for i, j in zip(*np.nonzero(m)):
                    l = self.links[i]
                    w.writerow([l.tx, l.rx, self.channels[j], repr(float(self.weights[i, j])), name])


def pair_weight(fade, var, member, var_floor: float = VAR_FLOOR):
    """F / sigma^2 for members of Ls (variance floored), 0 otherwise."""
    fade = np.asarray(fade, dtype=float)
    var = np.maximum(np.asarray(var, dtype=float), var_floor)
    with np.errstate(invalid="ignore"):
        out = np.where(member, fade / var, 0.0)
    return float(out) if out.ndim == 0 else out


def relative_fade_levels(stats: LinkChannelStats) -> np.ndarray:
    """Mean RSS minus the lowest mean over the link's measured channels."""
    mean = np.where(stats.present, stats.mean, np.nan)
    out = np.full_like(mean, np.nan)
    has = ~np.all(np.isnan(mean), axis=1)
    out[has] = mean[has] - np.nanmin(mean[has], axis=1, keepdims=True)
    return out


def energy_coefficient(selected, n_nodes: int, n_channels: int) -> float:
    """Fraction of link-channel TDMA slots left unused by the selection.

    ``selected`` is a :class:`SelectionSet` or a pair count; a fractional
    count (the mean size over several reselections) is accepted.
    """
    size = selected.size if isinstance(selected, SelectionSet) else float(selected)
    total = n_nodes * (n_nodes - 1) * n_channels
    if not 0 <= size <= total:
        raise ValueError(f"selection size {size} outside [0, {total}]")
    return 1.0 - size / total


def _argmax_per_link(score, candidates, channels):
    """One channel per link: the highest score, ties to the lowest channel number."""
    order = np.argsort(channels, kind="stable")
    s = np.where(candidates, score, -np.inf)[:, order]
    best = np.argmax(s, axis=1)
    out = np.zeros_like(candidates)
    rows = np.nonzero(np.isfinite(s[np.arange(len(s)), best]))[0]
    out[rows, order[best[rows]]] = True
    return out


def select(stats: LinkChannelStats, strategy, upsilon_r: float = -90.0) -> SelectionSet:
    strategy = Strategy.parse(strategy) if not isinstance(strategy, Strategy) else strategy
    if upsilon_r > -80:
        raise ValueError(f"connectivity threshold {upsilon_r} dBm above the -80 dBm sanity bound")
    # absent pairs are treated as failing the connectivity test
    present = stats.present & ~np.isnan(stats.mean)
    channels = np.asarray(stats.channels)
    mode = strategy.model_mode
    if mode is not None:
        if stats.fade is None:
            raise ValueError(f"{strategy.value} needs fade levels ({mode} path-loss fit)")
        if stats.model_mode is not None and stats.model_mode != mode:
            raise ValueError(f"{strategy.value} needs {mode} fade levels, got {stats.model_mode}")
        score = stats.fade
    elif strategy is not Strategy.FLB_U:
        score = relative_fade_levels(stats)
    else:
        score = np.zeros_like(stats.mean)

    with np.errstate(invalid="ignore"):
        positive = present & (np.nan_to_num(score, nan=-np.inf) > 0)
        connected = present & (np.nan_to_num(stats.mean, nan=-np.inf) > upsilon_r)

    S = Strategy
    if strategy is S.FLB_U:
        lp, lr = present, present
    elif strategy in (S.FLB_PLUS, S.RFL_PLUS):
        lp, lr = present, connected
    elif strategy is S.RFL_P:
        lp, lr = positive, present
    else:
        lp, lr = positive, connected
    ls = lp & lr

    if strategy in (S.OUT_PLUS, S.OUT_W, S.COM_PLUS, S.COM_W):
        rho = pair_weight(score, stats.var, ls)
        final = _argmax_per_link(rho, ls, channels) if not strategy.weighted else ls
        weights = np.where(final, rho, 0.0)
    elif strategy in (S.FLB_PLUS, S.RFL_PLUS):
        final = _argmax_per_link(score, ls, channels)
        weights = final.astype(float)
    elif strategy is S.FLB_U:
        final = ls
        weights = final.astype(float)
    else:  # FLB_w, RFL_p, RFL_f: weighted by the (relative) fade level alone
        final = ls
        weights = np.where(final, score, 0.0)

    sel = SelectionSet(strategy, list(stats.links), list(stats.channels),
                       {"Lp": lp, "Lr": lr, "Ls": ls, "L": final}, weights, stats.model_mode)
    if sel.size == 0:
        log.warning("selection %s is empty; images will be blank", strategy.value)
    return sel
