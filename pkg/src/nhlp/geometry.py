"""Delta coefficients between cubes and searches for doubling cubes at a prescribed delta."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .measure import BOUNDARY_RTOL, Cube, DiscreteMeasure, cube_mass, growth_constant
from .report import VerificationReport


class GeometryError(ValueError):
    pass


def enclosing_cube(Q: Cube, R: Cube) -> Cube:
    """Smallest cube concentric with ``Q`` that contains both ``Q`` and ``R``."""
    if Q.is_whole:
        raise GeometryError("the whole space has no center")
    if R.is_whole:
        return Cube.whole()
    reach = float(np.max(np.abs(R.z - Q.z))) + R.side / 2
    side = max(Q.side, 2 * reach)
    if side <= 0:
        return Q
    if side == Q.side:
        return Q
    return Cube.standard(Q.center, side)


@dataclass
class DeltaValue:
    value: float
    witness_regions: tuple = field(default_factory=tuple)

    def __float__(self) -> float:
        return self.value


def _region_sum(mu: DiscreteMeasure, outer: Cube, inner: Cube) -> float:
    z = inner.z
    in_outer = outer.contains(mu.points)
    if inner.is_point:
        in_inner = np.all(mu.points == z, axis=1)
    else:
        in_inner = inner.contains(mu.points)
    mask = in_outer & ~in_inner
    if not mask.any():
        return 0.0
    dist = np.linalg.norm(mu.points[mask] - z, axis=1)
    if np.any(dist == 0):
        return math.inf
    return float(np.sum(mu.weights[mask] / dist ** mu.n))


def delta(mu: DiscreteMeasure, Q: Cube, R: Cube) -> DeltaValue:
    """max of the two annular sums of w/|x - z|^n over Q_R minus Q and R_Q minus R."""
    if Q == R or (Q.is_whole and R.is_whole):
        return DeltaValue(0.0, ())
    if Q.is_whole:
        Q, R = R, Q
    if R.is_whole:
        return DeltaValue(_region_sum(mu, Cube.whole(), Q), ((Cube.whole(), Q),))
    QR = enclosing_cube(Q, R)
    RQ = enclosing_cube(R, Q)
    a = _region_sum(mu, QR, Q)
    b = _region_sum(mu, RQ, R)
    return DeltaValue(max(a, b), ((QR, Q), (RQ, R)))


def quasi_distance(mu: DiscreteMeasure, Q: Cube, R: Cube) -> float:
    if Q == R:
        return 0.0
    return 1.0 + delta(mu, Q, R).value


# -- per-point level tables ----------------------------------------------------

@dataclass
class LevelTable:
    """Concentric-cube data for every atom on a geometric grid of sides.

    For atom ``i`` and side ``sides[g]``, ``level[i, g]`` is delta of the cube
    Q(x_i, sides[g]) against the whole space, ``mass[i, g]`` its mass and
    ``doubling[i, g]`` whether it is (2, 2^{d+1})-doubling. Since every cube
    concentric at ``x_i`` differs only by its side, delta between two of them
    is a difference of levels.
    """

    mu: DiscreteMeasure
    q: int
    sides: np.ndarray
    level: np.ndarray
    mass: np.ndarray
    doubling: np.ndarray
    point_level: np.ndarray
    beta: float

    @classmethod
    def build(cls, mu: DiscreteMeasure, q: int = 8, beta: float | None = None) -> "LevelTable":
        if q < 1:
            raise GeometryError("grid granularity must be positive")
        beta = 2.0 ** (mu.dim + 1) if beta is None else beta
        sup = mu.sup_distances()
        eu = mu.distances()
        far = float(sup.max()) if mu.size > 1 else mu.resolution
        ell0 = mu.resolution / 4
        top = max(4 * far, mu.resolution)
        G = int(math.ceil(q * math.log2(top / ell0))) + 1
        sides_ext = ell0 * 2.0 ** (np.arange(G + q) / q)
        N = mu.size
        level = np.empty((N, G + q))
        mass = np.empty((N, G + q))
        with np.errstate(divide="ignore"):
            contrib = np.where(eu > 0, mu.weights[None, :] / np.where(eu > 0, eu, 1.0) ** mu.n, 0.0)
        half = sides_ext / 2
        for i in range(N):
            order = np.argsort(sup[i], kind="stable")
            s = sup[i][order]
            cw = np.concatenate([[0.0], np.cumsum(mu.weights[order])])
            cc = np.concatenate([[0.0], np.cumsum(contrib[i][order])])
            idx = np.searchsorted(s, half * (1 + BOUNDARY_RTOL), side="right")
            mass[i] = cw[idx]
            # suffix sum taken directly so additivity is a difference of prefix sums
            level[i] = cc[-1] - cc[idx]
        doubling = mass[:, q:] <= beta * mass[:, :G]
        point_level = contrib.sum(axis=1)
        return cls(mu, q, sides_ext[:G], level[:, :G], mass[:, :G], doubling, point_level, beta)

    @property
    def n_sides(self) -> int:
        return len(self.sides)

    def cube(self, i: int, g: int) -> Cube:
        return Cube.standard(self.mu.points[i], float(self.sides[g]))

    def side_index(self, side: float) -> int:
        """Largest grid index with sides[g] <= side (-1 if none)."""
        return int(np.searchsorted(self.sides, side * (1 + BOUNDARY_RTOL), side="right")) - 1

    def search(self, i: int, target: float, lo: int = 0, hi: int | None = None,
               require_doubling: bool = True) -> int | None:
        """Grid index in [lo, hi] minimizing |level - target|; ties go to the smaller side."""
        hi = self.n_sides - 1 if hi is None else hi
        if hi < lo:
            return None
        lv = self.level[i, lo:hi + 1]
        dev = np.abs(lv - target)
        if require_doubling:
            dev = np.where(self.doubling[i, lo:hi + 1], dev, np.inf)
        if not np.isfinite(dev).any():
            return None
        return lo + int(np.argmin(dev))


# -- doubling cube searches ------------------------------------------------------

@dataclass
class DoublingSearchResult:
    cube: Cube
    achieved_delta: float
    target_delta: float
    is_doubling: bool
    scan_trace: list = field(default_factory=list)
    flag: str = ""

    @property
    def deviation(self) -> float:
        return abs(self.achieved_delta - self.target_delta)


def _side_grid(lo: float, hi: float, q: int) -> np.ndarray:
    if hi < lo:
        return np.array([lo])
    m = int(math.floor(q * math.log2(hi / lo) + 1e-9))
    return lo * 2.0 ** (np.arange(m + 1) / q)


def find_doubling_inner(mu: DiscreteMeasure, x, R0: Cube, target: float, q: int = 8) -> DoublingSearchResult:
    """Doubling cube Q centered at ``x`` inside 2R0 with delta(Q, 2R0) closest to ``target``."""
    x = np.asarray(x, dtype=float)
    R2 = R0.dilate(2.0) if R0.is_standard else R0
    P = Cube.point(x)
    top = delta(mu, P, R2).value
    if top <= target:
        return DoublingSearchResult(P, top, target, True, [], flag="stopping")
    if R2.is_whole:
        hi = 4 * float(np.max(np.abs(mu.points - x))) + mu.resolution
    else:
        hi = 2 * (R2.side / 2 - float(np.max(np.abs(R2.z - x))))
    if hi <= 0:
        raise GeometryError("query point lies outside 2R0")
    trace = []
    best = None
    for side in _side_grid(mu.resolution / 4, hi, q):
        Q = Cube.standard(x, side)
        val = delta(mu, Q, R2).value
        dbl = cube_mass(mu, Q.dilate(2)) <= 2.0 ** (mu.dim + 1) * cube_mass(mu, Q)
        trace.append((float(side), val, bool(dbl)))
        if dbl:
            key = (abs(val - target), side)
            if best is None or key < best[0]:
                best = (key, Q, val)
    if best is None:
        raise GeometryError(f"no doubling cube found in range; trace={trace[:5]}...")
    return DoublingSearchResult(best[1], best[2], target, True, trace)


def find_doubling_outer(mu: DiscreteMeasure, R0: Cube, target: float, q: int = 8) -> DoublingSearchResult:
    """Doubling cube S concentric with R0, side >= 2 l(R0), with delta(R0, S) closest to ``target``."""
    if R0.is_whole:
        return DoublingSearchResult(R0, 0.0, target, True, [], flag="initial")
    whole = delta(mu, R0, Cube.whole()).value
    if target >= whole:
        return DoublingSearchResult(Cube.whole(), whole, target, True, [], flag="initial")
    z = R0.z
    lo = max(2 * R0.side, mu.resolution / 4)
    hi = max(4 * float(np.max(np.abs(mu.points - z))) + mu.resolution, 2 * lo)
    trace = []
    best = None
    for side in _side_grid(lo, hi, q):
        S = Cube.standard(z, side)
        val = delta(mu, R0, S).value
        dbl = cube_mass(mu, S.dilate(2)) <= 2.0 ** (mu.dim + 1) * cube_mass(mu, S)
        trace.append((float(side), val, bool(dbl)))
        if dbl:
            key = (abs(val - target), side)
            if best is None or key < best[0]:
                best = (key, S, val)
    if best is None:
        raise GeometryError("no doubling cube found in range")
    return DoublingSearchResult(best[1], best[2], target, True, trace)


# -- verification --------------------------------------------------------------

def random_support_cubes(mu: DiscreteMeasure, count: int, rng: np.random.Generator) -> list[Cube]:
    """Standard cubes centered at random atoms with log-uniform sides."""
    diam = mu.diameter()
    lo, hi = math.log(mu.resolution / 2), math.log(2 * diam)
    idx = rng.integers(0, mu.size, count)
    sides = np.exp(rng.uniform(lo, hi, count))
    return [Cube.standard(mu.points[i], s) for i, s in zip(idx, sides)]


def verify_delta_properties(mu: DiscreteMeasure, sample: list[Cube] | None = None, seed: int = 0,
                            count: int = 200, C0: float | None = None) -> VerificationReport:
    """Check delta(Q, rho Q) bounds, concentric additivity, and measure eps0 and C6.

    ``sample`` is a list of standard cubes; triples are formed from it by
    concentric dilation (exact additivity) and by pairing with random other
    cubes (measured eps0 and quasi-triangle constant C6).
    """
    rng = np.random.default_rng(seed)
    if sample is None:
        sample = random_support_cubes(mu, count, rng)
    if not sample:
        raise GeometryError("empty sample")
    C0 = growth_constant(mu) if C0 is None else C0
    n = mu.n
    worst_a = (0.0, None)
    a_viol = 0
    for Q in sample:
        for rho in (1.5, 2.0, 4.0):
            val = delta(mu, Q, Q.dilate(rho)).value
            ratio = val / (C0 * 2 ** n * rho ** n)
            if ratio > worst_a[0]:
                worst_a = (ratio, {"center": list(Q.center), "side": Q.side, "rho": rho, "delta": val})
            a_viol += ratio > 1
    conc_res = 0.0
    eps0 = 0.0
    C6 = 0.0
    eps0_w = c6_w = None
    for Q in sample:
        P = Cube.standard(Q.center, Q.side * rng.uniform(0.1, 0.9))
        R = Cube.standard(Q.center, Q.side * rng.uniform(1.1, 8.0))
        res = abs(delta(mu, P, R).value - delta(mu, P, Q).value - delta(mu, Q, R).value)
        conc_res = max(conc_res, res)
        # non-concentric nested triple: P inside Q inside R with shifted centers
        j = rng.integers(0, mu.size)
        inside = np.flatnonzero(Q.contains(mu.points))
        j = inside[rng.integers(0, len(inside))]
        gap = Q.side / 2 - float(np.max(np.abs(mu.points[j] - Q.z)))
        if gap > 0:
            P2 = Cube.standard(mu.points[j], 2 * gap * rng.uniform(0.2, 1.0))
            R2 = Cube.standard(Q.center, Q.side * rng.uniform(1.1, 8.0))
            dev = abs(delta(mu, P2, R2).value - delta(mu, P2, Q).value - delta(mu, Q, R2).value)
            if dev > eps0:
                eps0, eps0_w = dev, {"P": P2.to_dict(), "Q": Q.to_dict(), "R": R2.to_dict()}
        # quasi-triangle on an arbitrary triple
        A_, B_, C_ = (sample[k] for k in rng.integers(0, len(sample), 3))
        dac = quasi_distance(mu, A_, C_)
        rhs = quasi_distance(mu, A_, B_) + quasi_distance(mu, B_, C_)
        if dac - rhs > C6:
            C6, c6_w = dac - rhs, {"P": A_.to_dict(), "Q": B_.to_dict(), "R": C_.to_dict()}
    tol = 1e-12
    passed = a_viol == 0 and conc_res <= tol * max(1.0, C0)
    return VerificationReport(
        "delta_properties",
        {"C0": C0, "max_ratio_delta_rhoQ": worst_a[0], "concentric_residual": conc_res,
         "eps0": eps0, "C6": C6, "samples": len(sample)},
        {"dilation": worst_a[1], "eps0": eps0_w, "C6": c6_w},
        passed,
        {"concentric_additivity": tol, "dilation_bound": "delta(Q,rhoQ) <= C0 2^n rho^n"},
    )


def measure_eps1(table: LevelTable, targets: np.ndarray | None = None) -> float:
    """Worst deviation of the grid search over a battery of in-range targets."""
    worst = 0.0
    for i in range(table.mu.size):
        top = table.point_level[i]
        tg = np.linspace(0.05, 0.95, 7) * top if targets is None else targets[targets < top]
        for t in tg:
            g = table.search(i, float(t))
            if g is not None:
                worst = max(worst, abs(table.level[i, g] - t))
    return worst
