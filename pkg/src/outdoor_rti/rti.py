"""Reference RSS, RSS change vectors, weight/projection matrices and image
estimation."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.spatial.distance import cdist

from .scene import GeometryError, LinkGeometry, PixelGrid


class ProjectionError(np.linalg.LinAlgError):
    pass


# JSON/CLI key -> attribute; "lambda" is a Python keyword
_CONFIG_KEYS = {"upsilon_r": "upsilon_r", "t_w": "t_w", "lambda": "lam", "t_b": "t_b",
                "k_b": "k_b", "alpha_r": "alpha_r", "sigma2_x": "sigma2_x",
                "delta_c": "delta_c", "p": "p", "t_s": "t_s"}


@dataclass(frozen=True)
class RtiConfig:
    upsilon_r: float = -90.0
    t_w: float = 5.0
    lam: float = 2.0
    t_b: float = 5.0
    k_b: float = 1.0
    alpha_r: float = 0.1
    sigma2_x: float = 0.001
    delta_c: float = 1.0
    p: float = 0.65
    t_s: float = 0.34

    def __post_init__(self):
        for f in fields(self):
            if f.name != "upsilon_r" and not getattr(self, f.name) > 0:
                raise ValueError(f"config value {f.name} must be positive")
        if self.upsilon_r > -80:
            raise ValueError("upsilon_r above the -80 dBm sanity bound")

    @property
    def n_w(self) -> int:
        return max(1, int(math.floor(self.t_w / self.t_s + 1e-9)))

    @property
    def n_b(self) -> int:
        return max(1, int(math.floor(self.t_b / self.t_s + 1e-9)))

    def to_dict(self):
        return {k: getattr(self, a) for k, a in _CONFIG_KEYS.items()}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(_CONFIG_KEYS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{_CONFIG_KEYS[k]: float(v) for k, v in d.items()})

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return RtiConfig(**d)


# ---------------------------------------------------------------------------
# Reference RSS
# ---------------------------------------------------------------------------

class ReferenceState:
    """Per-pair FIFO buffers of the last ``n_w`` admitted RSS samples."""

    def __init__(self, shape, n_w: int):
        self.n_w = int(n_w)
        self.buf = np.full(tuple(shape) + (self.n_w,), np.nan)
        self.head = np.zeros(shape, dtype=int)
        self.count = np.zeros(shape, dtype=int)

    def push(self, samples, mask):
        """Append samples where ``mask`` is set and the sample is present."""
        samples = np.asarray(samples, dtype=float)
        m = np.asarray(mask, dtype=bool) & ~np.isnan(samples)
        idx = np.nonzero(m)
        self.buf[idx + (self.head[idx],)] = samples[idx]
        self.head[idx] = (self.head[idx] + 1) % self.n_w
        self.count[idx] = np.minimum(self.count[idx] + 1, self.n_w)

    def reference(self) -> np.ndarray:
        """Mean of each buffer; NaN where the buffer is empty."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.count > 0, np.nansum(self.buf, axis=-1) / np.maximum(self.count, 1), np.nan)

    def copy(self):
        out = ReferenceState(self.head.shape, self.n_w)
        out.buf, out.head, out.count = self.buf.copy(), self.head.copy(), self.count.copy()
        return out


def update_reference(state: ReferenceState, samples, estimates, geometry: LinkGeometry, lam: float,
                     active=None, gated: bool = True) -> np.ndarray:
    """Admit the frame's samples into the buffers of pairs whose sensitivity
    ellipse holds none of the previous-frame ``estimates``; return references.

    ``active`` restricts which pairs are being measured (default: all).
    """
    mask = np.ones(state.head.shape, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    if gated and len(estimates):
        blocked = geometry.covers(estimates, lam)
        mask = mask & ~blocked[:, None]
    state.push(samples, mask)
    return state.reference()


def rss_change(samples, reference, selection) -> np.ndarray:
    """Per-link RSS change y, length L.

    Single-channel selections give |r - r_ref| on the chosen channel. Weighted
    selections average |r - r_ref| over the link's selected channels with the
    selection weights, renormalised over channels with a sample and a defined
    reference this frame. Links with nothing usable get 0.
    """
    mask = selection.mask if hasattr(selection, "mask") else np.asarray(selection, dtype=bool)
    weights = selection.weights if hasattr(selection, "weights") else mask.astype(float)
    dev = np.abs(np.asarray(samples, dtype=float) - np.asarray(reference, dtype=float))
    ok = mask & ~np.isnan(dev)
    w = np.where(ok, weights, 0.0)
    wsum = w.sum(axis=1)
    num = np.where(ok, w * np.nan_to_num(dev), 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(wsum > 0, num / np.where(wsum > 0, wsum, 1.0), 0.0)


# ---------------------------------------------------------------------------
# Weight and projection matrices
# ---------------------------------------------------------------------------

@dataclass
class WeightMatrix:
    matrix: sparse.csr_matrix  # (L, P)
    area: np.ndarray           # (L,) ellipse areas in m^2
    support: np.ndarray        # (L, P) bool


def ellipse_area(length, lam):
    a = (np.asarray(length, dtype=float) + lam) / 2.0
    b = np.sqrt(a ** 2 - (np.asarray(length, dtype=float) / 2.0) ** 2)
    return np.pi * a * b


def build_weight_matrix(geometry: LinkGeometry, lam: float, grid: PixelGrid,
                        area_mode: str = "analytic") -> WeightMatrix:
    """w[l, q] = 1/A_l for pixel centres inside link l's ellipse, else 0.

    ``area_mode="pixels"`` uses covered-pixel count times pixel area for A_l
    instead of the analytic ellipse area.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if np.any(geometry.length == 0):
        raise GeometryError("link with coincident endpoints")
    support = geometry.excess(grid.centers()) < lam
    if area_mode == "analytic":
        area = ellipse_area(geometry.length, lam)
    elif area_mode == "pixels":
        area = np.maximum(support.sum(axis=1), 1) * grid.p ** 2
    else:
        raise ValueError(f"unknown area mode {area_mode!r}")
    W = sparse.csr_matrix(support / area[:, None])
    return WeightMatrix(W, area, support)


def covariance_matrix(grid: PixelGrid, sigma2_x: float, delta_c: float) -> np.ndarray:
    """Exponential spatial-decay prior covariance between pixel centres."""
    c = grid.centers()
    return sigma2_x * np.exp(-cdist(c, c) / delta_c)


@dataclass
class ProjectionMatrix:
    matrix: np.ndarray  # (P, L)
    grid: PixelGrid
    residual: float

    @property
    def shape(self):
        return self.matrix.shape


def build_projection(W, config: RtiConfig, grid: PixelGrid) -> ProjectionMatrix:
    """Pi = (W^T W + alpha_r C_x^-1)^-1 W^T via Cholesky factorisations."""
    Wm = W.matrix if isinstance(W, WeightMatrix) else W
    Wd = Wm.toarray() if sparse.issparse(Wm) else np.asarray(Wm)
    P = grid.size
    if Wd.shape[1] != P:
        raise ValueError(f"weight matrix has {Wd.shape[1]} columns, grid has {P} pixels")
    C = covariance_matrix(grid, config.sigma2_x, config.delta_c)
    try:
        Cinv = sla.cho_solve(sla.cho_factor(C, lower=True), np.eye(P))
        A = Wd.T @ Wd + config.alpha_r * Cinv
        A = 0.5 * (A + A.T)
        Pi = sla.cho_solve(sla.cho_factor(A, lower=True), Wd.T)
    except np.linalg.LinAlgError as exc:
        raise ProjectionError(f"factorisation failed (cond(C_x) ~ {np.linalg.cond(C):.3g}): {exc}") from exc
    residual = float(np.max(np.abs(A @ Pi - Wd.T))) if Wd.size else 0.0
    return ProjectionMatrix(Pi, grid, residual)


def estimate_image(projection, y) -> np.ndarray:
    Pi = projection.matrix if isinstance(projection, ProjectionMatrix) else np.asarray(projection)
    y = np.asarray(y, dtype=float)
    if y.shape != (Pi.shape[1],):
        raise ValueError(f"y has shape {y.shape}, projection expects ({Pi.shape[1]},)")
    return Pi @ y


def save_matrix_csv(matrix, path):
    np.savetxt(path, np.asarray(matrix.toarray() if sparse.issparse(matrix) else matrix), delimiter=",")


def write_pgm(image2d, path, lo=None, hi=None):
    """Binary 8-bit PGM, linearly scaled between lo and hi (image min/max by default)."""
    img = np.asarray(image2d, dtype=float)
    lo = float(np.min(img)) if lo is None else lo
    hi = float(np.max(img)) if hi is None else hi
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    data = np.clip((img - lo) * scale, 0, 255).astype(np.uint8)[::-1]  # row 0 = north edge
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())
