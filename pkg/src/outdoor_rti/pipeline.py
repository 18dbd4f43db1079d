"""Streaming per-frame pipeline: reference update -> RSS change -> image ->
background subtraction -> detection/tracking."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rti import (ProjectionMatrix, ReferenceState, RtiConfig, build_projection, build_weight_matrix,
                  estimate_image, rss_change, update_reference)
from .scene import Deployment, LinkGeometry
from .tracking import BackgroundModel, Tracker, TrackerConfig, subtract, update_background


@dataclass
class FrameResult:
    estimates: np.ndarray   # (n, 2) confirmed positions
    image: np.ndarray       # raw image x_hat
    subtracted: np.ndarray  # x_hat - M(k), or x_hat when subtraction is off
    y: np.ndarray
    track_ids: list
    tracks: list = None     # (id, x, y, confirmed) of every track matched this frame


def build_imaging(deployment: Deployment, config: RtiConfig, area_mode: str = "analytic"):
    """Geometry, weight matrix and projection for a deployment (computed once)."""
    geom = LinkGeometry(deployment)
    grid = deployment.grid(config.p)
    W = build_weight_matrix(geom, config.lam, grid, area_mode)
    Pi = build_projection(W, config, grid)
    return geom, W, Pi


def unit_response_peak(projection: ProjectionMatrix, geometry: LinkGeometry, lam: float) -> float:
    """Image peak when every link whose ellipse holds the area centre changes by 1 dB."""
    a = projection.grid.area
    centre = [((a.xmin + a.xmax) / 2, (a.ymin + a.ymax) / 2)]
    y = geometry.covers(centre, lam).astype(float)
    return float(np.max(estimate_image(projection, y))) if y.any() else 0.0


class RtiPipeline:
    """Stateful single-writer pipeline; call :meth:`step` once per frame, in order."""

    def __init__(self, deployment: Deployment, config: RtiConfig = RtiConfig(),
                 tracker: TrackerConfig | None = None, imaging=None,
                 subtract_background: bool = True, gated: bool = True):
        self.deployment = deployment
        self.config = config
        self.geometry, self.W, self.projection = imaging or build_imaging(deployment, config)
        L = len(self.geometry)
        C = len(deployment.channels)
        self.reference = ReferenceState((L, C), config.n_w)
        self.background = BackgroundModel(self.projection.grid.size, config.n_b)
        self.tracker = Tracker(self.projection.grid, tracker or TrackerConfig(),
                               unit_response_peak(self.projection, self.geometry, config.lam))
        self.subtract_background = subtract_background
        self.gated = gated
        self.selection = None
        self.frame = -1

    def set_selection(self, selection):
        """Install a new selection. The image statistics change with the set of
        measured pairs, so background training restarts from this frame."""
        self.selection = selection
        self.background = BackgroundModel(self.projection.grid.size, self.config.n_b)

    def step(self, samples, calibrating: bool = False) -> FrameResult:
        """Process one full TDMA cycle of samples, shape (L, C), NaN = missing.

        While ``calibrating`` every pair is measured; otherwise only the
        selected pairs are (radios are off for the rest).
        """
        self.frame += 1
        if calibrating or self.selection is None:
            active = None if calibrating else np.zeros(self.reference.head.shape, dtype=bool)
        else:
            active = self.selection.mask
        gate_pos = self.tracker.gating_positions()
        ref = update_reference(self.reference, samples, gate_pos, self.geometry, self.config.lam,
                               active=active, gated=self.gated)
        if self.selection is None:
            y = np.zeros(len(self.geometry))
        else:
            y = rss_change(samples, ref, self.selection)
        x = estimate_image(self.projection, y)
        if self.subtract_background:
            update_background(self.background, x, self.config.k_b)
            xb = subtract(x, self.background)
        else:
            xb = x
        tracks = self.tracker.update(xb, self.frame)
        est = np.array([t.position for t in tracks], dtype=float).reshape(-1, 2)
        seen = [(t.id, t.x, t.y, t.confirmed) for t in self.tracker.tracks if t.matched]
        return FrameResult(est, x, xb, y, [t.id for t in tracks], seen)
