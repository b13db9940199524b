"""Generation lattice Q_{x,k}, auxiliary cubes, and their structural checks.

Every cube attached to an atom is concentric with it, so the lattice is
stored as per-generation arrays of grid side indices into a LevelTable.
Sentinels: ``POINT`` (side 0) and ``WHOLE`` (side +inf).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .geometry import LevelTable
from .measure import BOUNDARY_RTOL, Cube, DiscreteMeasure
from .report import VerificationReport

POINT = -1
WHOLE = -2

AUX_NAMES = ("Q1", "Q1hat", "Q2", "Q2hat", "Q3", "Q1check", "Q1checkcheck", "Q3hathat")
ALL_NAMES = ("Q",) + AUX_NAMES


class LatticeError(ValueError):
    pass


class CubeClass(str, Enum):
    INITIAL = "initial"
    TRANSIT = "transit"
    STOPPING = "stopping"


_CLASS_CODE = {CubeClass.INITIAL: 0, CubeClass.TRANSIT: 1, CubeClass.STOPPING: 2}
_CODE_CLASS = {v: k for k, v in _CLASS_CODE.items()}


def theoretical_sigma(C0: float, n: float, eps0: float, eps1: float) -> float:
    return 100 * eps0 + 100 * eps1 + 12 ** (n + 1) * C0


@dataclass
class LatticeConfig:
    """Lattice constants.

    ``mode="theoretical"`` derives sigma from the closed formula and scales
    alpha1, alpha2, A by the multipliers. ``mode="calibrated"`` sizes A from
    the measured level range so that about ``target_generations`` transit
    generations exist, with sigma, alpha1, alpha2 fixed fractions of A.
    """

    A: float
    alpha1: float
    alpha2: float
    sigma: float
    eps0: float = 0.0
    eps1: float = 0.0
    k_min: int = -1
    k_max: int | None = None
    grid_q: int = 8
    mode: str = "calibrated"
    stop_fraction: float = 0.99

    def __post_init__(self):
        if not (0 < self.sigma and 0 < self.alpha1 and 0 < self.alpha2 and 0 < self.A):
            raise LatticeError("constants must be positive")
        if not self.sigma < self.alpha1 < self.alpha2 < self.A:
            raise LatticeError("need sigma < alpha1 < alpha2 < A")
        if self.A <= self.alpha1 + self.alpha2 + 3 * self.sigma:
            raise LatticeError("need A > alpha1 + alpha2 + 3 sigma")
        if self.k_min > 0:
            raise LatticeError("k_min must be <= 0 so the initial band is represented")

    @classmethod
    def theoretical(cls, C0: float, n: float, eps0: float = 0.0, eps1: float = 0.0,
              multipliers: tuple[float, float, float] = (10.0, 10.0, 10.0), **kw) -> "LatticeConfig":
        if min(multipliers) < 4:
            raise LatticeError("multipliers must be >= 4")
        sigma = theoretical_sigma(C0, n, eps0, eps1)
        a1 = multipliers[0] * sigma
        a2 = multipliers[1] * a1
        A = max(multipliers[2] * a2, a1 + a2 + 3 * sigma + sigma)
        return cls(A, a1, a2, sigma, eps0, eps1, mode="theoretical", **kw)

    @classmethod
    def calibrated(cls, table: LevelTable, target_generations: int = 4,
                   fractions: tuple[float, float, float] = (0.1, 0.2, 0.4),
                   eps0: float = 0.0, eps1: float = 0.0, **kw) -> "LatticeConfig":
        """fractions = (sigma/A, alpha1/A, alpha2/A)."""
        s, a1, a2 = fractions
        if a1 + a2 + 3 * s >= 1:
            raise LatticeError("fractions leave no room: need alpha1 + alpha2 + 3 sigma < A")
        top = float(np.median(table.point_level))
        A = top / (target_generations + 0.5)
        return cls(A, a1 * A, a2 * A, s * A, eps0, eps1, mode="calibrated", grid_q=table.q, **kw)

    def scaled(self, **factors) -> "LatticeConfig":
        d = asdict(self)
        for k, f in factors.items():
            d[k] *= f
        d["A"] = max(d["A"], 1.05 * (d["alpha1"] + d["alpha2"] + 3 * d["sigma"]))
        return LatticeConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GenerationEntry:
    point_index: int
    k: int
    Q: Cube
    cls: CubeClass
    aux: dict
    achieved_deltas: dict


@dataclass
class GenerationLattice:
    """Per-generation arrays: ``idx[name][r, i]`` is a side index or a sentinel,
    row ``r`` standing for generation ``ks[r]``."""

    mu: DiscreteMeasure
    table: LevelTable
    config: LatticeConfig
    ks: np.ndarray
    cls: np.ndarray
    idx: dict
    meta: dict = field(default_factory=dict)

    @property
    def k_min(self) -> int:
        return int(self.ks[0])

    @property
    def k_max(self) -> int:
        return int(self.ks[-1])

    def row(self, k: int) -> int:
        r = k - self.k_min
        if not 0 <= r < len(self.ks):
            raise LatticeError(f"generation {k} outside [{self.k_min}, {self.k_max}]")
        return r

    def sides(self, name: str, k: int) -> np.ndarray:
        """Side lengths for every atom (0 for points, inf for the whole space)."""
        g = self.idx[name][self.row(k)]
        out = np.where(g >= 0, self.table.sides[np.clip(g, 0, None)], 0.0)
        return np.where(g == WHOLE, np.inf, out)

    def levels(self, name: str, k: int) -> np.ndarray:
        """delta of each cube against the whole space."""
        g = self.idx[name][self.row(k)]
        N = self.mu.size
        lv = self.table.level[np.arange(N), np.clip(g, 0, None)]
        lv = np.where(g == POINT, self.table.point_level, lv)
        return np.where(g == WHOLE, 0.0, lv)

    def classes(self, k: int) -> np.ndarray:
        if k < self.k_min:
            return np.zeros(self.mu.size, dtype=int)
        if k > self.k_max:
            return np.full(self.mu.size, 2)
        return self.cls[self.row(k)]

    def cube(self, name: str, i: int, k: int) -> Cube:
        g = int(self.idx[name][self.row(k), i])
        if g == WHOLE:
            return Cube.whole()
        if g == POINT:
            return Cube.point(self.mu.points[i])
        return self.table.cube(i, g)

    def entry(self, i: int, k: int) -> GenerationEntry:
        aux = {name: self.cube(name, i, k) for name in AUX_NAMES}
        r = self.row(k)
        lq = self.levels("Q", k)[i]
        ach = {name: float(self.levels(name, k)[i]) for name in ALL_NAMES}
        ach["Q_vs_whole"] = float(lq)
        return GenerationEntry(i, k, self.cube("Q", i, k), _CODE_CLASS[int(self.cls[r, i])], aux, ach)

    def transit_generations(self) -> list[int]:
        return [int(k) for r, k in enumerate(self.ks) if np.any(self.cls[r] == 1)]

    def first_transit(self) -> int | None:
        t = self.transit_generations()
        return t[0] if t else None

    def to_json(self) -> dict:
        entries = []
        for r, k in enumerate(self.ks):
            for i in range(self.mu.size):
                e = self.entry(i, int(k))
                entries.append({"point_index": i, "k": int(k), "class": e.cls.value,
                                "cube": e.Q.to_dict(),
                                "aux": {n: c.to_dict() for n, c in e.aux.items()},
                                "achieved_deltas": e.achieved_deltas})
        return {"config": self.config.to_dict(), "k_min": self.k_min, "k_max": self.k_max,
                "label": self.mu.label, "entries": entries}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


def load_lattice(mu: DiscreteMeasure, path_or_data) -> GenerationLattice:
    """Rebuild a serialized lattice from its stored constants and check every entry matches."""
    data = path_or_data if isinstance(path_or_data, dict) else json.loads(Path(path_or_data).read_text())
    if len(data["entries"]) % mu.size or max(e["point_index"] for e in data["entries"]) >= mu.size:
        raise LatticeError("stored entries do not fit the measure's atoms")
    config = LatticeConfig(**data["config"])
    lat = build_lattice(mu, config)
    if (lat.k_min, lat.k_max) != (data["k_min"], data["k_max"]):
        raise LatticeError("stored generation range does not match the measure")
    for e in data["entries"]:
        got = lat.entry(e["point_index"], e["k"])
        if got.cls.value != e["class"] or got.Q.to_dict() != e["cube"]:
            raise LatticeError(f"entry (i={e['point_index']}, k={e['k']}) does not match the measure")
    return lat


def build_lattice(mu: DiscreteMeasure, config: LatticeConfig, table: LevelTable | None = None,
                  k_max_cap: int = 64) -> GenerationLattice:
    """Build Q_{x,k} and auxiliary cubes with the whole space as the reference cube."""
    if table is None or table.q != config.grid_q:
        table = LevelTable.build(mu, config.grid_q)
    A, a1, a2, s = config.A, config.alpha1, config.alpha2, config.sigma
    N = mu.size
    F0 = table.point_level
    top = table.n_sides - 1
    if config.k_max is None:
        # smallest k with at least stop_fraction of atoms stopping (kA >= F0)
        need = np.quantile(F0, config.stop_fraction, method="higher")
        k_max = max(1, int(math.ceil(need / A - 1e-12)))
        while np.mean(k_max * A >= F0) < config.stop_fraction:
            k_max += 1
        k_max = min(k_max, k_max_cap)
    else:
        k_max = config.k_max
    ks = np.arange(config.k_min, k_max + 1)
    R = len(ks)
    cls = np.zeros((R, N), dtype=int)
    idx = {name: np.full((R, N), WHOLE, dtype=int) for name in ALL_NAMES}

    transit_off = {"Q1": a1, "Q1hat": a1 + s, "Q2": a1 + a2, "Q2hat": a1 + a2 + s, "Q3": a1 + a2 + 2 * s}
    boundary_off = {"Q1": A - a1, "Q1hat": A - a1 - s, "Q2": A - a1 - a2, "Q2hat": A - a1 - a2 - s,
                    "Q3": A - a1 - a2 - 2 * s}
    check_off = {"Q1check": A - a1 + s, "Q1checkcheck": A - a1 + 2 * s, "Q3hathat": A - a1 - a2 - 3 * s}

    for i in range(N):
        prev = WHOLE
        for r, k in enumerate(ks):
            if k <= 0:
                continue  # whole space, sentinel already set
            if k * A >= F0[i]:
                cls[r, i] = 2
                g = POINT
            else:
                hi = top if prev == WHOLE else prev
                g = table.search(i, k * A, 0, hi)
                cls[r, i] = 1
            idx["Q"][r, i] = g
            prev_level = 0.0 if prev == WHOLE else (F0[i] if prev == POINT else table.level[i, prev])
            prev_hi = top if prev == WHOLE else prev
            if g >= 0:
                L = table.level[i, g]
                for name, off in transit_off.items():
                    idx[name][r, i] = table.search(i, L - off, g, top)
            elif prev == POINT:
                for name in transit_off:
                    idx[name][r, i] = POINT
            else:
                for name, off in boundary_off.items():
                    idx[name][r, i] = _relative_search(table, i, prev_level, off, prev_hi)
            if prev == POINT and g == POINT:
                for name in check_off:
                    idx[name][r, i] = POINT
            else:
                for name, off in check_off.items():
                    idx[name][r, i] = _relative_search(table, i, prev_level, off, prev_hi)
            prev = g
    meta = {"k_max_policy": "configured" if config.k_max is not None else f"stop_fraction={config.stop_fraction}"}
    return GenerationLattice(mu, table, config, ks, cls, idx, meta)


def _relative_search(table: LevelTable, i: int, ref_level: float, offset: float, hi: int) -> int:
    """Cube inside the reference with delta(cube, reference) closest to ``offset``; point if unreachable."""
    if table.point_level[i] - ref_level < offset:
        return POINT
    g = table.search(i, ref_level + offset, 0, hi)
    return POINT if g is None else g


# -- verification --------------------------------------------------------------

_CHAIN = ("Q", "Q1", "Q1hat", "Q2", "Q2hat", "Q3")


def verify_nesting(lattice: GenerationLattice) -> VerificationReport:
    """Chain Q in Q1 in Q1hat in Q2 in Q2hat in Q3 in Q_{k-1}, plus 2 Q2hat in Q3, for transit entries."""
    total = 0
    viol = 0
    worst = {}
    counts = {}
    for k in lattice.transit_generations():
        mask = lattice.classes(k) == 1
        total += int(mask.sum())
        sides = {name: lattice.sides(name, k)[mask] for name in _CHAIN}
        prev = lattice.sides("Q", k - 1)[mask] if k - 1 >= lattice.k_min else np.full(mask.sum(), np.inf)
        links = [(a, b, sides[a], sides[b]) for a, b in zip(_CHAIN[:-1], _CHAIN[1:])]
        links.append(("Q3", "Q_prev", sides["Q3"], prev))
        links.append(("2*Q2hat", "Q3", 2 * sides["Q2hat"], sides["Q3"]))
        bad = np.zeros(mask.sum(), dtype=bool)
        for a, b, sa, sb in links:
            # concentric cubes: containment is comparison of sides
            fail = sa > sb * (1 + BOUNDARY_RTOL)
            counts[f"{a}<={b}"] = counts.get(f"{a}<={b}", 0) + int(fail.sum())
            if fail.any() and not worst:
                j = int(np.flatnonzero(mask)[np.argmax(fail)])
                worst = {"point_index": j, "k": k, "link": f"{a} in {b}",
                         "sides": [float(sa[np.argmax(fail)]), float(sb[np.argmax(fail)])]}
            bad |= fail
        viol += int(bad.sum())
    rate = 1.0 if total == 0 else 1 - viol / total
    return VerificationReport("nesting", {"transit_entries": total, "violating_entries": viol,
                                          "pass_rate": rate, "violations_by_link": counts},
                              worst, viol == 0, {"required_pass_rate": 1.0})


def _pair_geometry(lattice: GenerationLattice, k: int):
    P = lattice.mu.points
    sup = lattice.mu.sup_distances() if "sup" not in lattice.meta else lattice.meta["sup"]
    lattice.meta["sup"] = sup
    return P, sup


def verify_regularity(lattice: GenerationLattice, min_pairs: int = 10_000) -> VerificationReport:
    """Regularity implications (a), (b), (c) over all intersecting pairs, and the size decay rate eta.

    All ordered pairs are scanned at every generation, which covers the
    sampled-pair requirement whenever at least ``min_pairs`` pairs intersect.
    """
    _, sup = _pair_geometry(lattice, 0)
    stats = {"a": [0, 0], "b": [0, 0], "c": [0, 0]}
    worst = {}

    def check(tag, s_small, s_big, k):
        # intersect: sup|x-y| <= (s_x + s_y)/2 ; contained: sup|x-y| + s_x/2 <= big_y/2
        with np.errstate(invalid="ignore"):
            inter = sup <= (s_small[:, None] + s_small[None, :]) / 2 * (1 + BOUNDARY_RTOL)
            inside = sup + s_small[:, None] / 2 <= s_big[None, :] / 2 * (1 + BOUNDARY_RTOL)
        inside |= np.isinf(s_big)[None, :]
        fail = inter & ~inside
        stats[tag][0] += int(inter.sum())
        stats[tag][1] += int(fail.sum())
        if fail.any() and tag not in worst:
            x, y = np.unravel_index(np.argmax(fail), fail.shape)
            worst[tag] = {"x": int(x), "y": int(y), "k": k, "sup_dist": float(sup[x, y]),
                          "side_x": float(s_small[x]), "side_y_big": float(s_big[y])}

    for k in lattice.transit_generations():
        check("a", lattice.sides("Q1", k), lattice.sides("Q1hat", k), k)
        check("b", lattice.sides("Q2", k), lattice.sides("Q2hat", k), k)
        if k - 1 >= lattice.k_min:
            check("c", lattice.sides("Q", k), lattice.sides("Q", k - 1), k)
    eta, eta_w, eta_pairs = fit_eta(lattice, sup)
    consts = {f"{t}_pairs": v[0] for t, v in stats.items()}
    consts.update({f"{t}_violations": v[1] for t, v in stats.items()})
    consts.update({f"{t}_pass_rate": (1 - v[1] / v[0]) if v[0] else 1.0 for t, v in stats.items()})
    consts["eta_hat"] = eta
    consts["eta_pairs"] = eta_pairs
    enough = min(v[0] for v in stats.values()) >= min_pairs
    passed = all(v[1] == 0 for v in stats.values()) and eta > 0
    if eta_w:
        worst["eta"] = eta_w
    return VerificationReport("regularity", consts, worst, passed,
                              {"required_pass_rate": 1.0, "min_pairs": min_pairs, "enough_pairs": enough,
                               "eta_hat": "> 0"})


def fit_eta(lattice: GenerationLattice, sup: np.ndarray | None = None):
    """Largest eta with l(Q_{y,k+m}) <= 2^{-eta m} l(Q_{x,k}) whenever 2Q_{x,k} meets 2Q_{y,k+m}."""
    if sup is None:
        sup = lattice.mu.sup_distances()
    eta = math.inf
    witness = None
    pairs = 0
    gens = lattice.transit_generations()
    for k in gens:
        sx = lattice.sides("Q", k)
        for k2 in gens:
            m = k2 - k
            if m < 1:
                continue
            sy = lattice.sides("Q", k2)
            ok = (sx[:, None] > 0) & (sy[None, :] > 0) & np.isfinite(sx)[:, None]
            inter = ok & (sup <= (sx[:, None] + sy[None, :]) * (1 + BOUNDARY_RTOL))
            if not inter.any():
                continue
            pairs += int(inter.sum())
            with np.errstate(divide="ignore", invalid="ignore"):
                rates = np.log2(sx[:, None] / sy[None, :]) / m
            rates = np.where(inter, rates, np.inf)
            j = np.unravel_index(np.argmin(rates), rates.shape)
            if rates[j] < eta:
                eta = float(rates[j])
                witness = {"x": int(j[0]), "y": int(j[1]), "k": k, "m": m,
                           "side_x": float(sx[j[0]]), "side_y": float(sy[j[1]])}
    if not math.isfinite(eta):
        eta = 0.0
    return eta, witness, pairs


def size_decay_ratio(lattice: GenerationLattice) -> float:
    """max over atoms and consecutive transit generations of l(Q_{x,k+1}) / l(Q_{x,k})."""
    worst = 0.0
    for k in lattice.transit_generations():
        if k + 1 > lattice.k_max:
            continue
        a = lattice.sides("Q", k)
        b = lattice.sides("Q", k + 1)
        mask = (lattice.classes(k) == 1) & (lattice.classes(k + 1) == 1)
        if mask.any():
            worst = max(worst, float(np.max(b[mask] / a[mask])))
    return worst
