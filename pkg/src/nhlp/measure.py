"""Discrete measures on R^d, cubes, and mass/growth/doubling queries."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np


class MeasureError(ValueError):
    pass


BOUNDARY_RTOL = 1e-12


class CubeKind(str, Enum):
    STANDARD = "standard"
    POINT = "point"
    WHOLE = "whole"


@dataclass(frozen=True)
class Cube:
    """Closed axis-parallel cube in sup-norm geometry.

    Points and the whole space are treated as degenerate cubes:
    a ``POINT`` cube has side 0, a ``WHOLE`` cube has side +inf and no center.
    """

    kind: CubeKind
    center: tuple[float, ...] | None = None
    side: float = 0.0

    @classmethod
    def standard(cls, center, side: float) -> "Cube":
        if not side > 0:
            raise MeasureError(f"standard cube needs side > 0, got {side}")
        return cls(CubeKind.STANDARD, _as_tuple(center), float(side))

    @classmethod
    def point(cls, location) -> "Cube":
        return cls(CubeKind.POINT, _as_tuple(location), 0.0)

    @classmethod
    def whole(cls) -> "Cube":
        return cls(CubeKind.WHOLE, None, math.inf)

    @property
    def is_standard(self) -> bool:
        return self.kind is CubeKind.STANDARD

    @property
    def is_point(self) -> bool:
        return self.kind is CubeKind.POINT

    @property
    def is_whole(self) -> bool:
        return self.kind is CubeKind.WHOLE

    @property
    def z(self) -> np.ndarray:
        if self.center is None:
            raise MeasureError("the whole space has no center")
        return np.asarray(self.center, dtype=float)

    def dilate(self, rho: float) -> "Cube":
        if not rho > 0:
            raise MeasureError("dilation factor must be positive")
        if self.is_standard:
            return Cube.standard(self.center, self.side * rho)
        return self

    def contains(self, pts: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Boolean mask of rows of ``pts`` lying in the cube (boundary included).

        The boundary carries the same relative slack as the vectorized masks
        elsewhere, so grid sides off by roundoff still catch boundary atoms.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.is_whole:
            return np.ones(len(pts), dtype=bool)
        dist = np.max(np.abs(pts - self.z), axis=1)
        return dist <= self.side / 2 * (1 + BOUNDARY_RTOL) + tol

    def contains_cube(self, other: "Cube", tol: float = 1e-12) -> bool:
        if self.is_whole:
            return True
        if other.is_whole:
            return False
        gap = np.max(np.abs(other.z - self.z)) + other.side / 2
        return gap <= self.side / 2 + tol * max(1.0, self.side)

    def intersects(self, other: "Cube", tol: float = 1e-12) -> bool:
        if self.is_whole or other.is_whole:
            return True
        gap = np.max(np.abs(other.z - self.z))
        return gap <= (self.side + other.side) / 2 + tol

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "center": None if self.center is None else list(self.center),
                "side": None if self.is_whole else self.side}

    @classmethod
    def from_dict(cls, data: dict) -> "Cube":
        kind = CubeKind(data["kind"])
        if kind is CubeKind.WHOLE:
            return cls.whole()
        if kind is CubeKind.POINT:
            return cls.point(data["center"])
        return cls.standard(data["center"], data["side"])


def _as_tuple(x) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(x, dtype=float)))


@dataclass
class DiscreteMeasure:
    """Weighted point cloud standing in for a Radon measure with growth exponent ``n``."""

    points: np.ndarray
    weights: np.ndarray
    growth_exponent: float
    resolution: float
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] == 1 and self.points.ndim == 2 and len(self.weights) != 1:
            self.points = self.points.T
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if len(self.points) != len(self.weights):
            raise MeasureError("points and weights differ in length")
        if len(self.weights) == 0:
            raise MeasureError("empty measure")
        if np.any(self.weights <= 0):
            raise MeasureError("weights must be strictly positive")
        if not 0 < self.growth_exponent <= self.dim:
            raise MeasureError(f"need 0 < n <= d, got n={self.growth_exponent}, d={self.dim}")
        if not self.resolution > 0:
            raise MeasureError("resolution must be positive")
        if len(self.weights) > 1:
            dmin = self.min_distance()
            if dmin <= 0:
                raise MeasureError("points must be pairwise distinct")
            if self.resolution > dmin * (1 + 1e-9):
                raise MeasureError(f"resolution {self.resolution} exceeds min pairwise distance {dmin}")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n(self) -> float:
        return self.growth_exponent

    @property
    def size(self) -> int:
        return len(self.weights)

    def __len__(self) -> int:
        return self.size

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def distances(self) -> np.ndarray:
        """Euclidean distance matrix between atoms."""
        diff = self.points[:, None, :] - self.points[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    def sup_distances(self) -> np.ndarray:
        return np.max(np.abs(self.points[:, None, :] - self.points[None, :, :]), axis=2)

    def min_distance(self) -> float:
        dist = self.distances()
        np.fill_diagonal(dist, np.inf)
        return float(dist.min())

    def diameter(self) -> float:
        return float(self.distances().max())

    def scaled(self, factor: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, self.weights * factor, self.n, self.resolution,
                               self.label, dict(self.meta))

    def index_of(self, location, tol: float = 1e-12) -> int | None:
        d = np.max(np.abs(self.points - np.asarray(location, dtype=float)), axis=1)
        i = int(np.argmin(d))
        return i if d[i] <= tol else None

    # -- serialization -----------------------------------------------------
    def to_json(self) -> dict:
        return {"dim": self.dim, "n": self.n, "resolution": self.resolution, "label": self.label,
                "points": self.points.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "DiscreteMeasure":
        pts = np.asarray(data["points"], dtype=float).reshape(-1, int(data["dim"]))
        return cls(pts, data["weights"], float(data["n"]), float(data["resolution"]),
                   data.get("label", ""))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "DiscreteMeasure":
        return cls.from_json(json.loads(Path(path).read_text()))

    @classmethod
    def from_csv(cls, path, n: float, resolution: float | None = None, label: str = "") -> "DiscreteMeasure":
        """Rows ``x1,...,xd,w``; an optional non-numeric header row is skipped."""
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                try:
                    rows.append([float(v) for v in row])
                except ValueError:
                    if rows:
                        raise
        arr = np.asarray(rows, dtype=float)
        pts, w = arr[:, :-1], arr[:, -1]
        if resolution is None:
            tmp = DiscreteMeasure(pts, w, n, 1e-300, label)
            resolution = tmp.min_distance() if len(w) > 1 else 1.0
        return cls(pts, w, n, resolution, label or Path(path).stem)


# -- mass queries ----------------------------------------------------------

def ball_mass(mu: DiscreteMeasure, x, r: float) -> float:
    """Mass of the closed Euclidean ball B(x, r)."""
    if not r > 0:
        raise MeasureError("radius must be positive")
    d = np.linalg.norm(mu.points - np.asarray(x, dtype=float), axis=1)
    return float(mu.weights[d <= r].sum())


def cube_mass(mu: DiscreteMeasure, Q: Cube) -> float:
    if Q.is_whole:
        return mu.total_mass
    if Q.is_point:
        i = mu.index_of(Q.center)
        return 0.0 if i is None else float(mu.weights[i])
    return float(mu.weights[Q.contains(mu.points)].sum())


def _geometric_radii(mu: DiscreteMeasure, per_octave: int = 8) -> np.ndarray:
    diam = mu.diameter()
    m = math.ceil(per_octave * math.log2(max(diam / mu.resolution, 1.0)))
    return mu.resolution * 2.0 ** (np.arange(m + 1) / per_octave)


def growth_constant(mu: DiscreteMeasure, return_witness: bool = False):
    """Smallest C0 with mu(B(x,r)) <= C0 r^n and mu(Q(x,2r)) <= C0 (2r)^n for r >= resolution.

    Radii scanned per atom are its own Euclidean and sup-norm distances to the
    other atoms (where the masses jump, so the suprema are attained there),
    the resolution itself, and a geometric grid up to the diameter.
    """
    if mu.size < 2:
        raise MeasureError("growth constant needs at least two atoms (diameter 0)")
    geo = _geometric_radii(mu)
    n = mu.n
    eu = mu.distances()
    sup = mu.sup_distances()
    best, witness = -1.0, None
    for i in range(mu.size):
        radii = np.concatenate([eu[i], sup[i], geo])
        radii = np.unique(radii[radii >= mu.resolution])
        ordr = np.argsort(eu[i])
        cum_b = np.cumsum(mu.weights[ordr])
        mb = cum_b[np.searchsorted(eu[i][ordr], radii, side="right") - 1]
        ords = np.argsort(sup[i])
        cum_q = np.cumsum(mu.weights[ords])
        mq = cum_q[np.searchsorted(sup[i][ords], radii, side="right") - 1]
        rb = mb / radii ** n
        rq = mq / (2 * radii) ** n
        j = int(np.argmax(np.maximum(rb, rq)))
        val = max(rb[j], rq[j])
        if val > best:
            best = float(val)
            witness = {"point_index": i, "radius": float(radii[j]),
                       "form": "ball" if rb[j] >= rq[j] else "cube"}
    return (best, witness) if return_witness else best


def is_doubling(mu: DiscreteMeasure, Q: Cube, alpha: float = 2.0, beta: float | None = None) -> bool:
    """(alpha, beta)-doubling test; default beta = 2^(d+1)."""
    if beta is None:
        beta = 2.0 ** (mu.dim + 1)
    if alpha <= 1 or beta <= alpha ** mu.n:
        raise MeasureError("need alpha > 1 and beta > alpha^n")
    if Q.is_whole:
        return True
    if Q.is_point:
        return cube_mass(mu, Q) > 0
    m = cube_mass(mu, Q)
    if m <= 0:
        raise MeasureError("cube not centered on support mass")
    return cube_mass(mu, Q.dilate(alpha)) <= beta * m


def doubling_violation(mu: DiscreteMeasure, per_octave: int = 8, beta: float | None = None) -> dict:
    """Scan cubes centered at atoms for the worst mu(2Q)/mu(Q) ratio.

    The returned witness carries ``violation`` = ratio > beta.
    """
    if beta is None:
        beta = 2.0 ** (mu.dim + 1)
    sup = mu.sup_distances()
    diam = float(sup.max())
    sides = mu.resolution * 2.0 ** (np.arange(0, per_octave * math.ceil(math.log2(2 * diam / mu.resolution) + 1))
                                    / per_octave)
    worst = None
    for i in range(mu.size):
        order = np.argsort(sup[i])
        s = sup[i][order]
        cum = np.cumsum(mu.weights[order])
        m1 = cum[np.searchsorted(s, sides / 2 * (1 + BOUNDARY_RTOL), side="right") - 1]
        m2 = cum[np.searchsorted(s, sides * (1 + BOUNDARY_RTOL), side="right") - 1]
        ratio = m2 / m1
        j = int(np.argmax(ratio))
        if worst is None or ratio[j] > worst["ratio"]:
            worst = {"point_index": i, "center": mu.points[i].tolist(), "side": float(sides[j]),
                     "ratio": float(ratio[j]), "beta": beta}
    worst["violation"] = worst["ratio"] > beta
    return worst


# -- reference examples ----------------------------------------------------

EXAMPLE_KINDS = ("uniform_interval", "uniform_square", "cantor_quarter_planar", "comb",
                 "lipschitz_graph_arclength")

# parameters of the reference measures used by the acceptance suite (N <= 1024)
REFERENCE_MEASURES = {
    "uniform_interval": {"atoms": 1000},
    "uniform_square": {"atoms": 1024},
    "cantor_quarter_planar": {"level": 4},
    "comb": {"level": 5},
    "lipschitz_graph_arclength": {"atoms": 1000},
}


def reference_measure(kind: str) -> "DiscreteMeasure":
    kind = kind.replace("-", "_")
    return generate_example(kind, **REFERENCE_MEASURES[kind])


def generate_example(kind: str, atoms: int | None = None, level: int | None = None,
                     ratio: float = 0.25, mass: float = 1.0, seed: int = 0,
                     jitter: float = 0.0) -> DiscreteMeasure:
    """Build one of the reference measures.

    ``atoms`` sets the size for the interval/square/graph kinds, ``level``
    the depth for the cantor and comb kinds. ``jitter`` perturbs atom
    positions by a fraction of the spacing (seeded) to break symmetry.
    """
    kind = kind.replace("-", "_")
    rng = np.random.default_rng(seed)
    if kind == "uniform_interval":
        m = 100 if atoms is None else atoms
        if m < 2:
            raise MeasureError("atom count must be >= 2")
        h = 1.0 / m
        x = (np.arange(m) + 0.5) * h
        if jitter:
            x = x + rng.uniform(-jitter, jitter, m) * h / 2
        res = float(np.min(np.diff(np.sort(x))))
        mu = DiscreteMeasure(x[:, None], np.full(m, mass / m), 1.0, res, f"uniform_interval_{m}")
    elif kind == "uniform_square":
        m = 16 if atoms is None else int(round(math.sqrt(atoms)))
        if m < 2:
            raise MeasureError("atom count must be >= 4")
        h = 1.0 / m
        g = (np.arange(m) + 0.5) * h
        xx, yy = np.meshgrid(g, g, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        if jitter:
            pts = pts + rng.uniform(-jitter, jitter, pts.shape) * h / 2
        mu = DiscreteMeasure(pts, np.full(m * m, mass / (m * m)), 2.0, h * (1 - jitter),
                             f"uniform_square_{m * m}")
    elif kind == "cantor_quarter_planar":
        L = 4 if level is None else level
        if L < 1:
            raise MeasureError("level must be >= 1")
        centers = np.array([[0.5, 0.5]])
        side = 1.0
        offs = np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]], dtype=float) * 3.0 / 8.0
        for _ in range(L):
            centers = (centers[:, None, :] + offs[None, :, :] * side).reshape(-1, 2)
            side /= 4
        res = 3.0 * side
        mu = DiscreteMeasure(centers, np.full(len(centers), mass / len(centers)), 1.0, res * (1 - 1e-12),
                             f"cantor_quarter_planar_{L}")
    elif kind == "comb":
        mu = _comb(5 if level is None else level, ratio, atoms, mass)
    elif kind == "lipschitz_graph_arclength":
        mu = _lipschitz_graph(200 if atoms is None else atoms, mass)
    else:
        raise MeasureError(f"unknown example kind {kind!r}")
    mu.meta["kind"] = kind
    witness = doubling_violation(mu)
    mu.meta["doubling_witness"] = witness
    return mu


def _comb(levels: int, ratio: float, atoms: int | None, mass: float) -> DiscreteMeasure:
    # segment m: length ratio^m, density ratio^m, atoms on a common spacing h
    if levels < 1 or not 0 < ratio < 1:
        raise MeasureError("comb needs levels >= 1 and 0 < ratio < 1")
    if atoms is not None and atoms < levels:
        raise MeasureError("comb needs at least one atom per segment")
    length = sum(ratio ** m for m in range(levels))
    h = ratio ** (levels - 1) / 2 if atoms is None else length / atoms
    xs, ws = [], []
    start = 0.0
    for m in range(levels):
        length = ratio ** m
        count = max(1, int(round(length / h)))
        xs.append(start + (np.arange(count) + 0.5) * h)
        ws.append(np.full(count, h * ratio ** m))
        start += count * h + ratio ** (m + 1)
    x = np.concatenate(xs)
    w = np.concatenate(ws)
    w *= mass / w.sum()
    return DiscreteMeasure(x[:, None], w, 1.0, h * (1 - 1e-12), f"comb_{levels}")


def _lipschitz_graph(atoms: int, mass: float, slope: float = 0.6, teeth: int = 3) -> DiscreteMeasure:
    if atoms < 2:
        raise MeasureError("atom count must be >= 2")
    # zigzag graph t -> slope * dist(t * teeth, Z) / teeth on [0, 1], sampled by arclength
    period = 1.0 / teeth
    seg = math.sqrt(1 + slope ** 2)
    total = seg  # arclength per unit t is constant for |phi'| = slope
    s = (np.arange(atoms) + 0.5) * total / atoms
    t = s / seg
    frac = (t / period) % 1.0
    y = slope * period * np.minimum(frac, 1 - frac)
    pts = np.column_stack([t, y])
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    np.fill_diagonal(dist, np.inf)
    res = float(dist.min())
    return DiscreteMeasure(pts, np.full(atoms, mass / atoms), 1.0, res * (1 - 1e-12),
                           f"lipschitz_graph_{atoms}")
