"""Deployment geometry: nodes, directed links, channels, pixel grid and
sensor-position estimation from length/angle surveys.

Angle convention used everywhere in the package: degrees clockwise from
North, with North = +y and East = +x.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


class GeometryError(ValueError):
    pass


class SurveyError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, objective):
        super().__init__(f"{message} (final objective {objective:.6g})")
        self.objective = objective


@dataclass(frozen=True)
class NodeRecord:
    id: int
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"node {self.id}: non-finite coordinates")


@dataclass(frozen=True)
class LinkKey:
    tx: int
    rx: int

    def __post_init__(self):
        if self.tx == self.rx:
            raise GeometryError(f"link with tx == rx == {self.tx}")

    def __iter__(self):
        return iter((self.tx, self.rx))


@dataclass(frozen=True)
class Area:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise GeometryError("area must have strictly positive extent")

    @property
    def width(self):
        return self.xmax - self.xmin

    @property
    def height(self):
        return self.ymax - self.ymin

    def contains(self, x, y, tol=1e-9):
        return (self.xmin - tol <= x <= self.xmax + tol) and (self.ymin - tol <= y <= self.ymax + tol)


@dataclass(frozen=True)
class PixelGrid:
    """Square pixels of side ``p`` covering ``area``; pixel index is row-major
    over (row along y, column along x)."""

    area: Area
    p: float
    nx: int
    ny: int

    @classmethod
    def covering(cls, area: Area, p: float) -> "PixelGrid":
        if p <= 0:
            raise GeometryError("pixel width must be positive")
        nx = max(1, int(math.ceil(area.width / p - 1e-9)))
        ny = max(1, int(math.ceil(area.height / p - 1e-9)))
        return cls(area, float(p), nx, ny)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self):
        return (self.ny, self.nx)

    def centers(self) -> np.ndarray:
        """(P, 2) array of pixel-center coordinates."""
        xs = self.area.xmin + (np.arange(self.nx) + 0.5) * self.p
        ys = self.area.ymin + (np.arange(self.ny) + 0.5) * self.p
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def to_image(self, values) -> np.ndarray:
        return np.asarray(values).reshape(self.shape)


@dataclass
class Deployment:
    nodes: list[NodeRecord]
    channels: list[int]
    area: Area
    pixel_width: float = 0.65

    def __post_init__(self):
        if len(self.nodes) < 3:
            raise GeometryError("a deployment needs at least 3 nodes")
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise GeometryError("node ids must be unique")
        if not self.channels:
            raise GeometryError("channel set is empty")
        if len(set(self.channels)) != len(self.channels):
            raise GeometryError("duplicate channel numbers")
        for c in self.channels:
            channel_center_frequency(c)
        if self.pixel_width <= 0:
            raise GeometryError("pixel width must be positive")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def node_ids(self) -> list[int]:
        return sorted(n.id for n in self.nodes)

    @property
    def positions(self) -> dict[int, tuple[float, float]]:
        return {n.id: (n.x, n.y) for n in self.nodes}

    def links(self) -> list[LinkKey]:
        return enumerate_links(self)

    def grid(self, p: float | None = None) -> PixelGrid:
        return PixelGrid.covering(self.area, self.pixel_width if p is None else p)

    def with_positions(self, nodes: Sequence[NodeRecord]) -> "Deployment":
        return Deployment(list(nodes), list(self.channels), self.area, self.pixel_width)

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n.id, "x": n.x, "y": n.y} for n in self.nodes],
            "channels": list(self.channels),
            "area": {"xmin": self.area.xmin, "ymin": self.area.ymin,
                     "xmax": self.area.xmax, "ymax": self.area.ymax},
            "pixel_width": self.pixel_width,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Deployment":
        nodes = [NodeRecord(int(n["id"]), float(n["x"]), float(n["y"])) for n in d["nodes"]]
        a = d["area"]
        area = Area(float(a["xmin"]), float(a["ymin"]), float(a["xmax"]), float(a["ymax"]))
        return cls(nodes, [int(c) for c in d["channels"]], area, float(d.get("pixel_width", 0.65)))


def load_deployment(path) -> Deployment:
    with open(path) as fh:
        return Deployment.from_dict(json.load(fh))


def save_deployment(deployment: Deployment, path):
    with open(path, "w") as fh:
        json.dump(deployment.to_dict(), fh, indent=2)


def enumerate_links(deployment: Deployment) -> list[LinkKey]:
    """All N(N-1) directed links, ascending by (tx, rx)."""
    ids = deployment.node_ids
    return [LinkKey(t, r) for t in ids for r in ids if t != r]


def channel_center_frequency(c: int) -> int:
    """IEEE 802.15.4 (2.4 GHz) channel center frequency in MHz."""
    if not 11 <= int(c) <= 26:
        raise ValueError(f"channel {c} outside the 802.15.4 range 11..26")
    return 2400 + 5 * (int(c) - 10)


def link_ellipse_contains(link, positions: Mapping, point, lam: float) -> bool:
    """True iff ``point`` lies strictly inside the link's sensitivity ellipse
    (foci at tx and rx, foci-distance sum below d_l + lam)."""
    if lam <= 0:
        raise ValueError("ellipse width lambda must be positive")
    tx, rx = link
    ax, ay = positions[tx]
    bx, by = positions[rx]
    d = math.hypot(bx - ax, by - ay)
    if d == 0:
        raise GeometryError(f"link {tx}->{rx} has coincident endpoints")
    px, py = point
    return math.hypot(px - ax, py - ay) + math.hypot(px - bx, py - by) < d + lam


class LinkGeometry:
    """Endpoint coordinates and lengths of the enumerated links, as arrays."""

    def __init__(self, deployment: Deployment):
        self.links = enumerate_links(deployment)
        pos = deployment.positions
        self.tx_xy = np.array([pos[l.tx] for l in self.links], dtype=float)
        self.rx_xy = np.array([pos[l.rx] for l in self.links], dtype=float)
        self.length = np.hypot(*(self.rx_xy - self.tx_xy).T)
        if np.any(self.length == 0):
            bad = self.links[int(np.argmin(self.length))]
            raise GeometryError(f"link {bad.tx}->{bad.rx} has coincident endpoints")
        self.index = {(l.tx, l.rx): i for i, l in enumerate(self.links)}

    def __len__(self):
        return len(self.links)

    def excess(self, points) -> np.ndarray:
        """(n_links, n_points) foci-distance sum minus link length."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dtx = np.hypot(pts[None, :, 0] - self.tx_xy[:, None, 0], pts[None, :, 1] - self.tx_xy[:, None, 1])
        drx = np.hypot(pts[None, :, 0] - self.rx_xy[:, None, 0], pts[None, :, 1] - self.rx_xy[:, None, 1])
        return dtx + drx - self.length[:, None]

    def covers(self, points, lam: float) -> np.ndarray:
        """Boolean (n_links,) mask: link ellipse contains any of ``points``."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(pts) == 0:
            return np.zeros(len(self), dtype=bool)
        return np.any(self.excess(pts) < lam, axis=1)


# ---------------------------------------------------------------------------
# Surveys and node-position estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurveyMeasurement:
    link: LinkKey
    length: float
    angle: float

    def __post_init__(self):
        if not self.length > 0:
            raise SurveyError(f"survey length must be positive, got {self.length}")
        object.__setattr__(self, "angle", float(self.angle) % 360.0)


@dataclass(frozen=True)
class SurveyNoiseConfig:
    """Variances of the survey process: length in m^2, angle in deg^2."""
    var_length: float = 0.5
    var_angle: float = 5.0

    def __post_init__(self):
        if self.var_length <= 0 or self.var_angle <= 0:
            raise SurveyError("survey noise variances must be positive")


def bearing_deg(dx, dy):
    """Bearing clockwise from North (+y) in [0, 360)."""
    return np.mod(np.degrees(np.arctan2(dx, dy)), 360.0)


def wrap_deg(a):
    """Wrap angle differences into (-180, 180]."""
    w = np.mod(np.asarray(a, dtype=float) + 180.0, 360.0) - 180.0
    return np.where(w == -180.0, 180.0, w)


def load_survey(path) -> list[SurveyMeasurement]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(SurveyMeasurement(LinkKey(int(row["tx"]), int(row["rx"])),
                                         float(row["length_m"]), float(row["angle_deg"])))
    return out


def save_survey(survey: Iterable[SurveyMeasurement], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tx", "rx", "length_m", "angle_deg"])
        for m in survey:
            w.writerow([m.link.tx, m.link.rx, repr(m.length), repr(m.angle)])


def chain_initial_positions(survey: Sequence[SurveyMeasurement], reference_node: int) -> dict[int, np.ndarray]:
    """Place nodes by forward/backward chaining along measurements.

    Repeatedly takes the first measurement (in survey order) joining a placed
    node to an unplaced one, so the chain is a spanning tree grown greedily.
    """
    nodes = {m.link.tx for m in survey} | {m.link.rx for m in survey}
    if reference_node not in nodes:
        raise SurveyError(f"reference node {reference_node} not in survey")
    placed = {reference_node: np.zeros(2)}
    while len(placed) < len(nodes):
        progressed = False
        for m in survey:
            tx, rx = m.link.tx, m.link.rx
            if (tx in placed) == (rx in placed):
                continue
            a = math.radians(m.angle)
            step = m.length * np.array([math.sin(a), math.cos(a)])
            if tx in placed:
                placed[rx] = placed[tx] + step
            else:
                placed[tx] = placed[rx] - step
            progressed = True
            break
        if not progressed:
            missing = sorted(nodes - set(placed))
            raise SurveyError(f"survey graph is disconnected; unreachable nodes: {missing}")
    return placed


def survey_objective(survey, positions: Mapping, noise: SurveyNoiseConfig) -> float:
    r = _residuals(survey, positions, noise)
    return float(r @ r)


def _residuals(survey, positions, noise):
    sd, sa = math.sqrt(noise.var_length), math.sqrt(noise.var_angle)
    out = np.empty(2 * len(survey))
    for i, m in enumerate(survey):
        dx, dy = np.asarray(positions[m.link.rx]) - np.asarray(positions[m.link.tx])
        out[2 * i] = (m.length - math.hypot(dx, dy)) / sd
        out[2 * i + 1] = float(wrap_deg(m.angle - bearing_deg(dx, dy))) / sa
    return out


def estimate_node_positions(survey: Sequence[SurveyMeasurement],
                            noise: SurveyNoiseConfig = SurveyNoiseConfig(),
                            reference_node: int | None = None,
                            tol: float = 1e-9, max_iter: int = 200,
                            history: list | None = None) -> list[NodeRecord]:
    """Maximum-likelihood node positions from length/angle measurements.

    The reference node is pinned at the origin. Starting from the chained
    initial guess, a damped Gauss-Newton (Levenberg-Marquardt) iteration
    minimises the variance-weighted sum of squared length and wrapped angle
    residuals over all measurements. A step is only accepted if it lowers the
    objective, so the objective sequence (appended to ``history`` if given)
    is non-increasing.
    """
    if not survey:
        raise SurveyError("empty survey")
    if reference_node is None:
        reference_node = survey[0].link.tx
    init = chain_initial_positions(survey, reference_node)
    ids = sorted(init)
    free = [n for n in ids if n != reference_node]
    col = {n: 2 * i for i, n in enumerate(free)}
    sd, sa = math.sqrt(noise.var_length), math.sqrt(noise.var_angle)

    def unpack(theta):
        pos = {reference_node: np.zeros(2)}
        for n in free:
            pos[n] = theta[col[n]:col[n] + 2]
        return pos

    def jacobian(pos):
        J = np.zeros((2 * len(survey), 2 * len(free)))
        for i, m in enumerate(survey):
            dx, dy = pos[m.link.rx] - pos[m.link.tx]
            d2 = dx * dx + dy * dy
            d = math.sqrt(d2)
            # residuals are (measured - predicted)/sigma; derivatives w.r.t. rx position
            g_len = -np.array([dx, dy]) / d / sd
            g_ang = -np.degrees(np.array([dy, -dx]) / d2) / sa
            for node, sign in ((m.link.rx, 1.0), (m.link.tx, -1.0)):
                if node in col:
                    c = col[node]
                    J[2 * i, c:c + 2] += sign * g_len
                    J[2 * i + 1, c:c + 2] += sign * g_ang
        return J

    theta = np.concatenate([init[n] for n in free]) if free else np.zeros(0)
    pos = unpack(theta)
    r = _residuals(survey, pos, noise)
    f = float(r @ r)
    if history is not None:
        history.append(f)
    mu = 1e-3
    for _ in range(max_iter):
        if f < 1e-24:
            break
        J = jacobian(pos)
        JtJ = J.T @ J
        g = J.T @ r
        accepted = False
        while mu < 1e12:
            A = JtJ + mu * np.diag(np.diag(JtJ) + 1e-12)
            step = np.linalg.solve(A, -g)
            cand = theta + step
            cpos = unpack(cand)
            cr = _residuals(survey, cpos, noise)
            cf = float(cr @ cr)
            if cf <= f:
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            break
        rel = (f - cf) / f if f > 0 else 0.0
        theta, pos, r, f = cand, cpos, cr, cf
        mu = max(mu / 10.0, 1e-12)
        if history is not None:
            history.append(f)
        if rel < tol:
            break
    else:
        raise ConvergenceError(f"node localisation did not converge in {max_iter} iterations", f)
    return [NodeRecord(n, float(pos[n][0]), float(pos[n][1])) for n in ids]


def simulate_survey(true_positions: Mapping, pairs: Sequence[tuple[int, int]],
                    sigma_length: float = 0.0, sigma_angle: float = 0.0,
                    rng: np.random.Generator | None = None) -> list[SurveyMeasurement]:
    """Length/angle measurements of ``pairs`` with additive Gaussian noise
    (standard deviations in m and degrees)."""
    rng = np.random.default_rng() if rng is None else rng
    out = []
    for tx, rx in pairs:
        dx, dy = np.subtract(true_positions[rx], true_positions[tx])
        d = math.hypot(dx, dy) + (rng.normal(0.0, sigma_length) if sigma_length else 0.0)
        a = float(bearing_deg(dx, dy)) + (rng.normal(0.0, sigma_angle) if sigma_angle else 0.0)
        out.append(SurveyMeasurement(LinkKey(tx, rx), max(d, 1e-3), a))
    return out


def forest_deployment(channels=(11, 16, 21, 26), pixel_width: float = 0.65,
                      width: float = 35.0, height: float = 60.0, n_nodes: int = 20,
                      seed: int = 7) -> Deployment:
    """A 20-node layout around the border of a 35 m x 60 m area, node 1 at the
    origin corner, with small seeded jitter to mimic trees used as mounts."""
    rng = np.random.default_rng(seed)
    perim = 2 * (width + height)
    nodes = []
    for i in range(n_nodes):
        s = perim * i / n_nodes
        if s < width:
            x, y = s, 0.0
        elif s < width + height:
            x, y = width, s - width
        elif s < 2 * width + height:
            x, y = width - (s - width - height), height
        else:
            x, y = 0.0, height - (s - 2 * width - height)
        if i > 0:
            x = float(np.clip(x + rng.uniform(-1.0, 1.0), 0.0, width))
            y = float(np.clip(y + rng.uniform(-1.0, 1.0), 0.0, height))
        nodes.append(NodeRecord(i + 1, x, y))
    return Deployment(nodes, list(channels), Area(0.0, 0.0, width, height), pixel_width)
