"""Per-pixel Gaussian background model, background subtraction, and a
simple blob detector / nearest-neighbour tracker producing position estimates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .scene import PixelGrid

SIGMA_FLOOR = 1e-4


class BackgroundModel:
    """FIFO of the last ``n_b`` background intensities for every pixel.

    For the first ``n_b`` frames (training) every pixel is treated as
    background, so buffers fill from the observed images.
    """

    def __init__(self, n_pixels: int, n_b: int, sigma_floor: float = SIGMA_FLOOR):
        self.n_b = int(n_b)
        self.sigma_floor = sigma_floor
        self.buf = np.zeros((n_pixels, self.n_b))
        self.head = np.zeros(n_pixels, dtype=int)
        self.count = np.zeros(n_pixels, dtype=int)
        self.frames = 0
        self.mu = np.zeros(n_pixels)
        self.sigma = np.full(n_pixels, sigma_floor)

    @property
    def training(self) -> bool:
        return self.frames < self.n_b

    @property
    def background(self) -> np.ndarray:
        """Background image M(k)."""
        return self.mu

    def _refresh(self, idx):
        c = self.count[idx]
        b = self.buf[idx]
        valid = np.arange(self.n_b)[None, :] < c[:, None]
        s = np.where(valid, b, 0.0).sum(axis=1)
        mu = s / np.maximum(c, 1)
        dev = np.where(valid, b - mu[:, None], 0.0)
        var = (dev ** 2).sum(axis=1) / np.maximum(c - 1, 1)
        self.mu[idx] = mu
        self.sigma[idx] = np.maximum(np.sqrt(var), self.sigma_floor)

    def classify(self, x, k_b: float) -> np.ndarray:
        """Boolean background mask for image ``x`` against the current model."""
        if self.training:
            return np.ones(len(x), dtype=bool)
        return np.abs(x - self.mu) / self.sigma <= k_b

    def copy(self):
        out = BackgroundModel(len(self.mu), self.n_b, self.sigma_floor)
        out.buf, out.head, out.count = self.buf.copy(), self.head.copy(), self.count.copy()
        out.frames, out.mu, out.sigma = self.frames, self.mu.copy(), self.sigma.copy()
        return out


def update_background(model: BackgroundModel, x, k_b: float) -> np.ndarray:
    """Classify pixels of ``x`` and push only background pixels into their
    buffers. Returns the background mask."""
    x = np.asarray(x, dtype=float)
    bg = model.classify(x, k_b)
    idx = np.nonzero(bg)[0]
    rows = model.head[idx]
    model.buf[idx, rows] = x[idx]
    model.head[idx] = (rows + 1) % model.n_b
    model.count[idx] = np.minimum(model.count[idx] + 1, model.n_b)
    model.frames += 1
    if idx.size:
        model._refresh(idx)
    return bg


def subtract(x, model: BackgroundModel) -> np.ndarray:
    return np.asarray(x, dtype=float) - model.background


# ---------------------------------------------------------------------------
# Detection and tracking
# ---------------------------------------------------------------------------

@dataclass
class TrackerConfig:
    k_mad: float = 3.0       # threshold multiple of the image's median absolute deviation
    tau_db: float = 2.5      # absolute threshold floor, in dB of per-link change
    min_pixels: int = 3
    gate: float = 5.0        # association radius, m
    birth_hits: int = 3      # B: consecutive hits to confirm a track
    max_misses: int = 9      # D: a track dies once it has missed D consecutive frames
    smoothing: float = 0.6   # weight of the new centroid in the exponential smoother

    @classmethod
    def from_dict(cls, d):
        names = set(cls.__dataclass_fields__)
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown tracker keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Blob:
    x: float
    y: float
    mass: float
    pixels: int


@dataclass
class Track:
    id: int
    x: float
    y: float
    hits: int = 1
    misses: int = 0
    confirmed: bool = False
    last_seen: int = 0
    matched: bool = True

    @property
    def position(self):
        return (self.x, self.y)


def mad(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.median(np.abs(x - np.median(x))))


def detect_blobs(image2d, grid: PixelGrid, threshold: float, min_pixels: int = 3) -> list[Blob]:
    """4-connected components strictly above ``threshold`` with at least
    ``min_pixels`` pixels.

    Centroids are pixel centres weighted by the intensity in excess of the
    threshold, which keeps the low skirt of a wide blob from dragging the
    centroid towards the middle of the network.
    """
    img = np.asarray(image2d, dtype=float)
    mask = img > threshold
    if not mask.any():
        return []
    labels, n = ndimage.label(mask)  # default structure is 4-connectivity
    centers = grid.centers().reshape(grid.ny, grid.nx, 2)
    out = []
    for lab in range(1, n + 1):
        sel = labels == lab
        npix = int(sel.sum())
        if npix < min_pixels:
            continue
        w = img[sel] - threshold
        wsum = w.sum()
        if not wsum > 0:
            w = np.ones_like(w)
            wsum = w.sum()
        c = centers[sel]
        out.append(Blob(float(w @ c[:, 0] / wsum), float(w @ c[:, 1] / wsum), float(wsum), npix))
    return out


class Tracker:
    """Greedy nearest-neighbour association with birth/death counters.

    ``scale`` converts ``tau_db`` into image intensity units (the image peak
    produced by a 1 dB change on every link covering a point).
    """

    def __init__(self, grid: PixelGrid, config: TrackerConfig | None = None, scale: float = 0.0):
        self.grid = grid
        self.config = config or TrackerConfig()
        self.scale = scale
        self.tracks: list[Track] = []
        self._next_id = 1
        self.frame = -1

    def threshold(self, xb) -> float:
        c = self.config
        return max(c.k_mad * mad(xb), c.tau_db * self.scale)

    def gating_positions(self) -> np.ndarray:
        """Positions of all live tracks, tentative ones included."""
        return np.array([t.position for t in self.tracks], dtype=float).reshape(-1, 2)

    def update(self, xb, frame: int | None = None) -> list[Track]:
        """Consume one background-subtracted image; return the confirmed
        tracks matched in this frame (the frame's position estimates)."""
        self.frame = self.frame + 1 if frame is None else frame
        c = self.config
        xb = np.asarray(xb, dtype=float)
        blobs = detect_blobs(self.grid.to_image(xb), self.grid, self.threshold(xb), c.min_pixels)

        pairs = []
        for ti, t in enumerate(self.tracks):
            for bi, b in enumerate(blobs):
                d = np.hypot(t.x - b.x, t.y - b.y)
                if d <= c.gate:
                    pairs.append((d, ti, bi))
        pairs.sort()
        used_t, used_b = set(), set()
        for d, ti, bi in pairs:
            if ti in used_t or bi in used_b:
                continue
            used_t.add(ti)
            used_b.add(bi)
            t, b = self.tracks[ti], blobs[bi]
            a = c.smoothing
            t.x, t.y = a * b.x + (1 - a) * t.x, a * b.y + (1 - a) * t.y
            t.hits += 1
            t.misses = 0
            t.last_seen = self.frame
            t.matched = True
            if t.hits >= c.birth_hits:
                t.confirmed = True

        survivors = []
        for ti, t in enumerate(self.tracks):
            if ti not in used_t:
                t.matched = False
                t.misses += 1
                # tentative tracks need consecutive hits, so one miss ends them
                if not t.confirmed or t.misses >= c.max_misses:
                    continue
            survivors.append(t)
        self.tracks = survivors

        for bi, b in enumerate(blobs):
            if bi in used_b:
                continue
            t = Track(self._next_id, b.x, b.y, hits=1, last_seen=self.frame)
            t.confirmed = c.birth_hits <= 1
            self._next_id += 1
            self.tracks.append(t)

        return [t for t in self.tracks if t.confirmed and t.matched]


def detect_and_track(xb, tracker: Tracker, frame: int | None = None) -> np.ndarray:
    """(n, 2) array of confirmed position estimates for this frame."""
    return np.array([t.position for t in tracker.update(xb, frame)], dtype=float).reshape(-1, 2)
