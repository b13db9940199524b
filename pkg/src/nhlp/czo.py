"""Calderon-Zygmund kernels, truncations, the T(1) battery, pairing decay, Hormander checks and paraproducts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aoi import OperatorMatrix, lp_norm
from .lattice import GenerationLattice
from .lp import CubeBattery, LPDecomposition, _dist, _sym_norm, cube_battery, fit_decay, rbmo_norm
from .measure import BOUNDARY_RTOL, DiscreteMeasure
from .report import VerificationReport


class CZOError(ValueError):
    pass


KERNEL_KINDS = ("cauchy_real_part", "cauchy_imag_part", "riesz", "test_bounded", "abs_power")
_ALIASES = {"cauchy-re": "cauchy_real_part", "cauchy-im": "cauchy_imag_part", "cauchy_re": "cauchy_real_part",
            "cauchy_im": "cauchy_imag_part", "abs-power": "abs_power", "test-bounded": "test_bounded"}


def _planar(P: np.ndarray) -> np.ndarray:
    """Coordinates seen as points of the plane (a zero second coordinate in dimension one)."""
    if P.shape[1] >= 2:
        return P[:, :2]
    return np.column_stack([P[:, 0], np.zeros(len(P))])


@dataclass
class CZKernel:
    """Kernel k(x, y) with declared size constant C1, smoothness exponent delta and constant C2."""

    kind: str
    n: float = 1.0
    params: dict = field(default_factory=dict)
    C1: float = 1.0
    delta: float = 1.0
    C2: float = 8.0

    def __post_init__(self):
        self.kind = _ALIASES.get(self.kind, self.kind)
        if self.kind not in KERNEL_KINDS:
            raise CZOError(f"unknown kernel kind {self.kind!r}")
        if self.kind.startswith("cauchy"):
            self.n = 1.0

    @classmethod
    def builtin(cls, kind: str, n: float = 1.0, **params) -> "CZKernel":
        kind = _ALIASES.get(kind, kind)
        if kind.startswith("cauchy"):
            # |grad| <= |x - y|^{-2} and the segment stays at distance >= |x - y|/2
            return cls(kind, 1.0, params, 1.0, 1.0, 8.0)
        c2 = 2 * (n + 2) * 2 ** (n + 1)
        return cls(kind, n, params, 1.0, 1.0, c2)

    @classmethod
    def from_json(cls, data: dict) -> "CZKernel":
        kind = data["kind"]
        base = cls.builtin(kind, float(data.get("n", 1.0)), **data.get("params", {}))
        for key in ("C1", "delta", "C2"):
            if key in data:
                setattr(base, key, float(data[key]))
        return base

    @classmethod
    def load(cls, path) -> "CZKernel":
        return cls.from_json(json.loads(Path(path).read_text()))

    def to_json(self) -> dict:
        return {"kind": self.kind, "n": self.n, "params": self.params, "C1": self.C1, "delta": self.delta,
                "C2": self.C2}

    @property
    def antisymmetric(self) -> bool:
        return self.kind in ("cauchy_real_part", "cauchy_imag_part", "riesz", "test_bounded")

    def __call__(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return self.matrix(np.atleast_2d(X), np.atleast_2d(Y))

    def matrix(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """K[a, b] = k(X[a], Y[b]); coincident points get 0."""
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if self.kind.startswith("cauchy"):
            Xp, Yp = _planar(X), _planar(Y)
            diff = Xp[:, None, :] - Yp[None, :, :]
            # scale by the larger component so r^2 cannot underflow for distinct points
            s = np.max(np.abs(diff), axis=-1)
            live = s > 0
            s_safe = np.where(live, s, 1.0)
            u = diff / s_safe[..., None]
            num = u[..., 0] if self.kind == "cauchy_real_part" else -u[..., 1]
            den = np.where(live, s_safe * np.sum(u ** 2, axis=-1), 1.0)
            with np.errstate(over="ignore"):
                return np.where(live, num / den, 0.0)
        diff = X[:, None, :] - Y[None, :, :]
        r = np.sqrt(np.sum(diff ** 2, axis=-1))
        safe = np.where(r > 0, r, 1.0)
        n = self.n
        if self.kind == "riesz":
            c = int(self.params.get("component", 0))
            out = diff[..., c] / safe ** (n + 1)
        elif self.kind == "test_bounded":
            c = int(self.params.get("component", 0))
            out = diff[..., c] / (1.0 + safe ** 2) ** ((n + 1) / 2)
        else:
            out = safe ** (-n)
        return np.where(r > 0, out, 0.0)

    def measure_constants(self, mu: DiscreteMeasure, samples: int = 4000, seed: int = 0) -> dict:
        """Measured size and smoothness constants on atoms plus seeded random probes."""
        rng = np.random.default_rng(seed)
        P = mu.points
        lo, hi = P.min(0), P.max(0)
        probes = np.vstack([P, rng.uniform(lo, hi + mu.resolution, (min(samples, 4 * mu.size), mu.dim))])
        a = rng.integers(len(probes), size=samples)
        b = rng.integers(len(probes), size=samples)
        x, y = probes[a], probes[b]
        r = np.linalg.norm(x - y, axis=1)
        ok = r > 0
        kv = np.array([self.matrix(x[i:i + 1], y[i:i + 1])[0, 0] for i in np.flatnonzero(ok)])
        C1 = float(np.max(np.abs(kv) * r[ok] ** self.n)) if kv.size else 0.0
        # x' with |x - x'| <= |x - y| / 2
        u = rng.standard_normal((samples, mu.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        xp = x + u * (r * rng.uniform(0.0, 0.5, samples))[:, None]
        h = np.linalg.norm(x - xp, axis=1)
        ok2 = ok & (h > 0)
        C2 = 0.0
        for i in np.flatnonzero(ok2):
            X1, X2, Y1 = x[i:i + 1], xp[i:i + 1], y[i:i + 1]
            lhs = abs(self.matrix(X1, Y1)[0, 0] - self.matrix(X2, Y1)[0, 0]) + \
                abs(self.matrix(Y1, X1)[0, 0] - self.matrix(Y1, X2)[0, 0])
            C2 = max(C2, lhs * r[i] ** (self.n + self.delta) / h[i] ** self.delta)
        return {"C1": C1, "C2": float(C2), "declared_C1": self.C1, "declared_C2": self.C2,
                "size_ok": bool(C1 <= self.C1 * (1 + 1e-9)), "smoothness_ok": bool(C2 <= self.C2 * (1 + 1e-9))}


def smoothstep_cutoff(t: np.ndarray) -> np.ndarray:
    """Radial cutoff: 0 on [0, 1/2], 1 on [1, inf), 3s^2 - 2s^3 in between with s = 2t - 1."""
    s = np.clip(2.0 * np.asarray(t, dtype=float) - 1.0, 0.0, 1.0)
    return 3 * s ** 2 - 2 * s ** 3


@dataclass
class TruncatedOperator:
    """T_eps (hard) or the regularized T~_eps on L^2(mu); ``values`` acts on function values."""

    kernel: CZKernel
    epsilon: float
    regularized: bool
    mu: DiscreteMeasure
    values: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise CZOError("epsilon must be positive")
        if self.values is None:
            K = self.kernel.matrix(self.mu.points, self.mu.points)
            self.values = (K * truncation_weights(self.mu, self.epsilon, self.regularized)) * self.mu.weights[None, :]

    @property
    def matrix(self) -> OperatorMatrix:
        return OperatorMatrix.from_matrix(self.values, self.mu.weights)

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.values @ f

    def adjoint_values(self) -> np.ndarray:
        w = self.mu.weights
        return (self.values / w[None, :]).T * w[None, :]

    def T1(self) -> np.ndarray:
        return self.values @ np.ones(self.mu.size)

    def Tstar1(self) -> np.ndarray:
        return self.adjoint_values() @ np.ones(self.mu.size)


def truncation_weights(mu: DiscreteMeasure, eps: float, regularized: bool) -> np.ndarray:
    r = mu.distances()
    if regularized:
        return smoothstep_cutoff(r / eps)
    return (r > eps).astype(float)


def centered_maximal(mu: DiscreteMeasure, f: np.ndarray) -> np.ndarray:
    """Exact centered Hardy-Littlewood maximal function over closed balls centered at atoms."""
    r = mu.distances()
    w = mu.weights
    af = np.abs(f)
    order = np.argsort(r, axis=1, kind="stable")
    cw = np.cumsum(w[order], axis=1)
    cf = np.cumsum((w * af)[order], axis=1)
    rs = np.take_along_axis(r, order, axis=1)
    # only prefixes ending at a radius change are genuine balls
    last = np.ones_like(rs, dtype=bool)
    last[:, :-1] = rs[:, 1:] > rs[:, :-1]
    return np.max(np.where(last, cf / cw, 0.0), axis=1)


def verify_truncation_gap(mu: DiscreteMeasure, kernel: CZKernel, eps: float, family: np.ndarray,
                          C0: float) -> VerificationReport:
    """|T_eps f - T~_eps f| against the centered maximal function; bound C1 C0 2^n."""
    Th = TruncatedOperator(kernel, eps, False, mu)
    Tr = TruncatedOperator(kernel, eps, True, mu)
    F = np.asarray(family, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    worst = 0.0
    for f in F.T:
        gap = np.abs(Th.apply(f) - Tr.apply(f))
        M = centered_maximal(mu, f)
        pos = M > 0
        if np.any(~pos & (gap > 1e-14)):
            worst = math.inf
            break
        if pos.any():
            worst = max(worst, float(np.max(gap[pos] / M[pos])))
    bound = kernel.C1 * C0 * 2 ** kernel.n
    return VerificationReport("truncation_gap", {"ratio": worst, "bound": bound}, {}, worst <= bound * (1 + 1e-9),
                              {"bound": bound})


# -- T(1) battery ---------------------------------------------------------------

def default_eps_grid(mu: DiscreteMeasure) -> list:
    """resolution * 2^j below the diameter."""
    out = []
    e = mu.resolution
    while e < mu.diameter():
        out.append(e)
        e *= 2
    return out


def t1_cubes(lattice: GenerationLattice, seed: int = 0, atoms: int = 100, every: int = 4) -> tuple:
    """Cubes for the T(1) battery: lattice cubes Q_{x,k} and every ``every``-th grid side at sampled atoms."""
    mu = lattice.mu
    rng = np.random.default_rng(seed)
    sample = np.arange(mu.size) if mu.size <= atoms else np.sort(rng.choice(mu.size, atoms, replace=False))
    cs, ss = [], []
    grid = lattice.table.sides[::every]
    for i in sample:
        s = [lattice.sides("Q", int(k))[i] for k in lattice.transit_generations()]
        s = [v for v in s if 0 < v < np.inf] + list(grid)
        cs.extend([i] * len(s))
        ss.extend(s)
    pairs = np.unique(np.column_stack([cs, ss]), axis=0)
    return pairs[:, 0].astype(int), pairs[:, 1]


def _uniform(values: list, factor: float = 2.0) -> tuple[bool, float, float]:
    """No value exceeds ``factor`` times the median; also returns the upper and lower spreads.

    Only the upper spread bears on uniform boundedness: every family decays
    to 0 as eps approaches the diameter, so the lower spread is reported only.
    """
    v = np.asarray(values, dtype=float)
    if not np.any(v):
        return True, 1.0, 1.0
    med = float(np.median(v))
    if med <= 0:
        return False, math.inf, math.inf
    upper = float(v.max() / med)
    lower = float(med / v.min()) if v.min() > 0 else math.inf
    return upper <= factor, upper, lower


def t1_battery(lattice: GenerationLattice, kernel: CZKernel, p_list=None, rho: float = 2.0, gamma: float = 2.0,
               eps_list=None, regularized: bool = False, seed: int = 0, cubes=None,
               rbmo_battery: CubeBattery | None = None, factor: float = 2.0) -> VerificationReport:
    """Weak boundedness, L^p bounds on cube indicators and RBMO norms of T_eps 1, T_eps^* 1 over an eps grid.

    Passes when every family's sup over cubes stays within ``factor`` of its
    median across the grid (uniformity in eps).
    """
    mu = lattice.mu
    w = mu.weights
    _, sup = _dist(lattice)
    if p_list is None:
        p_list = [2.0] + ([mu.n / (mu.n - 1)] if mu.n > 1 else [])
    eps_list = list(eps_list or default_eps_grid(mu))
    cen, side = cubes if cubes is not None else t1_cubes(lattice, seed)
    X = (sup[cen] <= (side / 2)[:, None] * (1 + BOUNDARY_RTOL)).T.astype(float)       # N x B indicators
    m_rho = (sup[cen] <= (rho * side / 2)[:, None] * (1 + BOUNDARY_RTOL)) @ w
    m_gamma = (sup[cen] <= (gamma * side / 2)[:, None] * (1 + BOUNDARY_RTOL)) @ w
    rbmo_battery = rbmo_battery or cube_battery(lattice, seed, atoms=100)
    K = kernel.matrix(mu.points, mu.points)
    wb, lp_sup, r1, r1s = [], {p: [] for p in p_list}, [], []
    wb_witness = []
    for eps in eps_list:
        T = K * truncation_weights(mu, eps, regularized) * w[None, :]
        TX = T @ X
        pair = np.abs(np.einsum("nb,nb,n->b", X, TX, w))
        ratio = pair / m_rho
        b = int(np.argmax(ratio))
        wb.append(float(ratio[b]))
        wb_witness.append({"eps": eps, "center": int(cen[b]), "side": float(side[b]), "pairing": float(pair[b])})
        for p in p_list:
            norms = np.einsum("nb,n->b", np.abs(TX) ** p, w) ** (1 / p)
            lp_sup[p].append(float(np.max(norms / m_gamma ** (1 / p))))
        one = np.ones(mu.size)
        r1.append(rbmo_norm(lattice, T @ one, rbmo_battery).norm)
        Tstar = (T / w[None, :]).T * w[None, :]
        r1s.append(rbmo_norm(lattice, Tstar @ one, rbmo_battery).norm)
    fams = {"weak_boundedness": wb, "T1_rbmo": r1, "Tstar1_rbmo": r1s}
    fams.update({f"Lp_{p:g}": v for p, v in lp_sup.items()})
    uniform, spreads, lower = {}, {}, {}
    for name, vals in fams.items():
        uniform[name], spreads[name], lower[name] = _uniform(vals, factor)
    # weak-boundedness ratio along decreasing eps
    wb_arr = np.array(wb)
    seq = wb_arr[np.argsort(eps_list)[::-1]]
    monotone = bool(np.all(np.diff(seq) >= -1e-12 * max(1.0, seq.max())))
    growth = float(seq[-1] / seq[0]) if seq[0] > 0 else (math.inf if seq[-1] > 0 else 1.0)
    consts = {"sup_" + k: float(max(v)) for k, v in fams.items()}
    consts.update({"spread_" + k: v for k, v in spreads.items()})
    consts.update({"lower_spread_" + k: v for k, v in lower.items()})
    consts.update({"wb_growth": growth, "wb_monotone_in_eps": monotone, "kernel": kernel.kind,
                   "max_abs_pairing": float(max(x["pairing"] for x in wb_witness))})
    passed = all(uniform.values())
    return VerificationReport(f"t1_battery[{kernel.kind}]", consts, wb_witness[int(np.argmax(wb))], passed,
                              {"uniformity_factor": factor, "rho": rho, "gamma": gamma, "p_list": list(p_list)},
                              {"eps": eps_list, "families": fams, "uniform": uniform, "cubes": int(len(cen))})


def weak_boundedness_pairings(lattice: GenerationLattice, kernel: CZKernel, eps: float, cubes=None,
                              regularized: bool = False) -> np.ndarray:
    """<T_eps chi_Q, chi_Q> for each battery cube."""
    mu = lattice.mu
    w = mu.weights
    _, sup = _dist(lattice)
    cen, side = cubes if cubes is not None else t1_cubes(lattice)
    X = (sup[cen] <= (side / 2)[:, None] * (1 + BOUNDARY_RTOL)).T.astype(float)
    T = TruncatedOperator(kernel, eps, regularized, mu).values
    return np.einsum("nb,nb,n->b", X, T @ X, w)


def separated_pairing_check(lattice: GenerationLattice, kernel: CZKernel, eps: float | None = None,
                            count: int = 400, seed: int = 0, C2: float | None = None) -> VerificationReport:
    """|<T phi, psi>| <= C l(Q)^delta / dist(Q,R)^{n+delta} ||phi||_1 ||psi||_1 for mean-zero phi on Q.

    Pairs are kept only when dist(Q, R) >= sqrt(d) l(Q), which puts every
    (x, x_Q, y) triple inside the kernel's smoothness regime, so the
    measured constant must stay below C2 (sqrt(d)/2)^delta.
    """
    mu = lattice.mu
    w = mu.weights
    eu, sup = _dist(lattice)
    rng = np.random.default_rng(seed)
    eps = eps or mu.resolution / 2
    T = TruncatedOperator(kernel, eps, False, mu).values
    grid = lattice.table.sides
    worst, used, wit = 0.0, 0, {}
    d = mu.dim
    for _ in range(count * 4):
        if used >= count:
            break
        i, j = rng.integers(mu.size, size=2)
        s = float(rng.choice(grid))
        t = float(rng.choice(grid))
        inQ = sup[i] <= s / 2 * (1 + BOUNDARY_RTOL)
        inR = sup[j] <= t / 2 * (1 + BOUNDARY_RTOL)
        if inQ.sum() < 2 or not inR.any():
            continue
        dist = float(np.min(eu[np.ix_(inQ, inR)]))
        if dist < math.sqrt(d) * s or dist <= s / 2:
            continue
        phi = np.where(inQ, rng.standard_normal(mu.size), 0.0)
        phi[inQ] -= np.sum(phi[inQ] * w[inQ]) / np.sum(w[inQ])
        psi = np.where(inR, rng.standard_normal(mu.size), 0.0)
        lhs = abs(float(np.sum(w * psi * (T @ phi))))
        bound = s ** kernel.delta / dist ** (kernel.n + kernel.delta) * lp_norm(phi, w, 1) * lp_norm(psi, w, 1)
        used += 1
        if bound > 0 and lhs / bound > worst:
            worst = lhs / bound
            wit = {"Q_center": int(i), "Q_side": s, "R_center": int(j), "R_side": t, "dist": dist}
    C2 = kernel.C2 if C2 is None else C2
    limit = C2 * (math.sqrt(d) / 2) ** kernel.delta
    return VerificationReport("separated_pairing", {"C": worst, "pairs": used, "limit": limit}, wit,
                              worst <= limit * (1 + 1e-9), {"limit": limit})


# -- pairing decay --------------------------------------------------------------

def pairing_decay(decomp: LPDecomposition, kernel: CZKernel, eps: float | None = None, regularized: bool = True,
                  quadruples: int = 2000, seed: int = 0, r2_min: float = 0.8) -> VerificationReport:
    """||D_k T D_j|| over the band, the fitted rate nu, and the pointwise pairing-bound constants."""
    mu = decomp.mu
    w = mu.weights
    eps = eps or mu.resolution
    T = TruncatedOperator(kernel, eps, regularized, mu).values
    live = decomp.live()
    rows = []
    prods = {}
    for j in live:
        TD = T @ decomp.D[j]
        for k in live:
            M = decomp.D[k] @ TD
            prods[(j, k)] = M
            rows.append((j, k, abs(k - j), _sym_norm(M, w)))
    nu, r2, env = fit_decay(rows)
    Ca, Cb = _pointwise_pairing_constants(decomp, prods, kernel, nu, quadruples, seed)
    return VerificationReport(f"pairing_decay[{kernel.kind}]",
                              {"nu_hat": nu, "r2": r2, "C_a": Ca, "C_b": Cb, "eps": eps,
                               "T_norm": _sym_norm(T, w)},
                              {"envelope": env}, bool(nu > 0 and r2 >= r2_min), {"r2_min": r2_min},
                              {"norms": [list(r) for r in rows]})


def _side(lattice: GenerationLattice, k: int, i: np.ndarray) -> np.ndarray:
    if k < lattice.k_min:
        return np.full(len(i), np.inf)
    if k > lattice.k_max:
        k = lattice.k_max
    return lattice.sides("Q", k)[i]


def _pointwise_pairing_constants(decomp: LPDecomposition, prods: dict, kernel: CZKernel, nu: float,
                                 count: int, seed: int) -> tuple[float, float]:
    """Smallest constants making the separated (a) and overlapping (b) pairing bounds hold on a sample."""
    lattice = decomp.lattice
    w = decomp.weights
    eu, sup = _dist(lattice)
    rng = np.random.default_rng(seed)
    keys = list(prods)
    if not keys:
        return 0.0, 0.0
    n, dl = kernel.n, kernel.delta
    Ca = Cb = 0.0
    for _ in range(count):
        j, k = keys[rng.integers(len(keys))]
        x, y = rng.integers(len(w), size=2)
        t = abs(prods[(j, k)][y, x] / w[x])
        if t == 0:
            continue
        X, Y = np.array([x]), np.array([y])
        sx3, sy3 = _side(lattice, j - 3, X)[0], _side(lattice, k - 3, Y)[0]
        decay = 2.0 ** (-nu * abs(j - k))
        if np.isfinite(sx3) and np.isfinite(sy3) and sup[x, y] > sx3 + sy3:
            lx, ly = _side(lattice, j - 2, X)[0], _side(lattice, k - 2, Y)[0]
            bound = decay * min(lx, ly) ** (dl / 2) / (lx + ly + eu[x, y]) ** (n + dl / 2)
            Ca = max(Ca, t / bound) if bound > 0 else math.inf
        else:
            sx7, sy7 = _side(lattice, j - 7, X)[0], _side(lattice, k - 7, Y)[0]
            lxj, lyk = _side(lattice, j, X)[0], _side(lattice, k, Y)[0]
            b = 0.0
            if sup[x, y] <= sx7 / 2 and lxj + eu[x, y] > 0:
                b += 1.0 / (lxj + eu[x, y]) ** n
            if sup[y, x] <= sy7 / 2 and lyk + eu[x, y] > 0:
                b += 1.0 / (lyk + eu[x, y]) ** n
            Cb = max(Cb, t / (decay * b)) if b > 0 else math.inf
    return float(Ca), float(Cb)


# -- Hormander-type constants -----------------------------------------------------

def hormander_constants(A: OperatorMatrix, mu: DiscreteMeasure, pairs: int = 1000, seed: int = 0,
                        norm: bool = True) -> dict:
    """C1 (off-diagonal size), C2' (Hormander integral over sampled pairs) and the L^2 norm."""
    w = mu.weights
    eu = mu.distances()
    K = A.entries.copy()
    off = ~np.eye(mu.size, dtype=bool)
    C1 = float(np.max(np.where(off, np.abs(K) * eu ** mu.n, 0.0)))
    rng = np.random.default_rng(seed)
    xs = rng.integers(mu.size, size=pairs)
    xps = rng.integers(mu.size, size=pairs)
    C2 = 0.0
    for x, xp in zip(xs, xps):
        if x == xp:
            continue
        far = eu[x] >= 2 * eu[x, xp]
        val = np.sum(w[far] * (np.abs(K[x, far] - K[xp, far]) + np.abs(K[far, x] - K[far, xp])))
        C2 = max(C2, float(val))
    out = {"C1": C1, "C2_prime": C2}
    if norm:
        out["norm"] = A.norm()
    out["hczo_norm"] = out.get("norm", 0.0) + C1 + C2
    return out


def hormander_check(A: OperatorMatrix, mu: DiscreteMeasure, pairs: int = 1000, seed: int = 0) -> VerificationReport:
    c = hormander_constants(A, mu, pairs, seed)
    return VerificationReport("hormander", c, {}, bool(all(np.isfinite(list(c.values())))), {})


def hczo_curve(decomp: LPDecomposition, Ns=range(1, 7), pairs: int = 1000, seed: int = 0,
               rel_tol: float = 1e-9) -> VerificationReport:
    """HCZO constants of I_band - Phi_N as functions of N; each must be non-increasing.

    The identity part of I_band - Phi_N lives in the kernel as atom masses; as
    kernels are defined off the diagonal, the diagonal is excluded.
    """
    mu = decomp.mu
    w = mu.weights
    curve = []
    for N in Ns:
        A = OperatorMatrix.from_matrix(decomp.I_band - decomp.Phi(N), w)
        c = hormander_constants(A, mu, pairs, seed)
        c["N"] = int(N)
        curve.append(c)
    ok = True
    worst = {}
    for key in ("C1", "C2_prime", "norm"):
        vals = [c[key] for c in curve]
        for a, b, N in zip(vals[:-1], vals[1:], Ns):
            if b > a * (1 + rel_tol) + 1e-15:
                ok = False
                worst = worst or {"constant": key, "N": int(N) + 1, "values": [a, b]}
    at_chosen = _sym_norm(decomp.I_band - decomp.PhiN.matrix, w)
    consts = {"curve": curve, "I_minus_PhiN_at_N": at_chosen, "N": decomp.N}
    return VerificationReport("hczo_curve", consts, worst, ok and at_chosen <= 0.5,
                              {"monotone_rel_tol": rel_tol, "I_minus_PhiN": 0.5})


# -- paraproduct --------------------------------------------------------------------

@dataclass
class Paraproduct:
    U: OperatorMatrix
    m: int
    b: np.ndarray
    neumann_terms: int
    generations: list
    excluded: list


def paraproduct(decomp: LPDecomposition, b: np.ndarray, m: int, tol: float = 1e-8) -> Paraproduct:
    """U_{m,b} = sum_{|k| <= m} D_k P_k S_k with P_k multiplication by D_k^N Phi_N^{-1} b.

    The first generation, where D_k 1 != 0, is left out so that U^*(1) = 0
    holds exactly on the band.
    """
    b = np.asarray(b, dtype=float)
    w = decomp.weights
    inv, terms = decomp.phi_inverse(b, tol)
    total = np.zeros((len(w), len(w)))
    used, excluded = [], []
    for k in decomp.ks:
        if abs(k) > m or not np.any(decomp.D[k]):
            continue
        if k == decomp.first_generation:
            excluded.append(k)
            continue
        p = decomp.D_N(k) @ inv
        total += decomp.D[k] @ (p[:, None] * decomp.S(k))
        used.append(k)
    return Paraproduct(OperatorMatrix.from_matrix(total, w), m, b, terms, used, excluded)


def paraproduct_report(decomp: LPDecomposition, b: np.ndarray, ms=(2, 4, 8), battery: CubeBattery | None = None,
                       stable: float = 0.30) -> VerificationReport:
    """Bound ratio ||U_{m,b}|| / ||b||_* across m, U^*(1) residual and ||U(1) - I_band b||."""
    lattice = decomp.lattice
    w = decomp.weights
    battery = battery or cube_battery(lattice)
    bstar = rbmo_norm(lattice, b, battery).norm
    one = np.ones(len(w))
    target = decomp.band_project(b)
    rows = []
    for m in ms:
        P = paraproduct(decomp, b, m)
        Um = P.U.matrix
        Ustar1 = ((Um / w[None, :]).T * w[None, :]) @ one
        rows.append({"m": int(m), "norm": P.U.norm(), "ratio": P.U.norm() / bstar if bstar > 0 else 0.0,
                     "Ustar1_residual": float(np.max(np.abs(Ustar1))),
                     "U1_error": lp_norm(Um @ one - target, w, 2), "generations": P.generations})
    ratios = np.array([r["ratio"] for r in rows])
    variation = float(ratios.max() / ratios.min() - 1) if ratios.min() > 0 else (0.0 if not ratios.any() else math.inf)
    errs = [r["U1_error"] for r in rows]
    monotone = all(b2 <= a2 * (1 + 1e-12) for a2, b2 in zip(errs[:-1], errs[1:]))
    adj = max(r["Ustar1_residual"] for r in rows)
    ok = variation < stable and monotone and adj <= 1e-8
    return VerificationReport("paraproduct", {"rbmo_norm_b": bstar, "ratio_variation": variation,
                                              "U1_error_monotone": monotone, "Ustar1_residual": adj, "by_m": rows},
                              {}, ok, {"ratio_variation": stable, "Ustar1": 1e-8})


def paraproduct_kernel_check(P: Paraproduct, lattice: GenerationLattice, gap: int = 10, lead: int = 4,
                             count: int = 4000, seed: int = 0) -> VerificationReport:
    """C10 (size) over all pairs and C11 (regularity) over sampled (x, x', y) with the generation side conditions.

    Triples need x' in Q_{x,h} and y in Q_{x,j} minus Q_{x,j+1} with j <= h - gap;
    the regularity scale is l(Q_{x,j+lead}). Shallow lattices may leave no
    admissible triple, which the report flags as vacuous.
    """
    mu = lattice.mu
    w = mu.weights
    eu, sup = _dist(lattice)
    u = P.U.entries
    off = ~np.eye(mu.size, dtype=bool)
    C10 = float(np.max(np.where(off, np.abs(u) * eu ** mu.n, 0.0)))
    rng = np.random.default_rng(seed)
    gens = [int(k) for k in lattice.ks]
    C11, tested = 0.0, 0
    wit = {}
    for _ in range(count):
        x = int(rng.integers(mu.size))
        sides = np.array([_side(lattice, k, np.array([x]))[0] for k in gens + [gens[-1] + 1]])
        live = [a for a, k in enumerate(gens) if 0 < sides[a] < np.inf]
        if not live:
            continue
        a = int(rng.choice(live))
        h = gens[a]
        pool = np.flatnonzero(sup[x] <= sides[a] / 2 * (1 + BOUNDARY_RTOL))
        xp = int(rng.choice(pool))
        y = int(rng.integers(mu.size))
        if y in (x, xp) or xp == x:
            continue
        edge = sides / 2 * (1 + BOUNDARY_RTOL)
        ring = [gens[b] for b in range(len(gens)) if edge[b + 1] < sup[x, y] <= edge[b]]
        if not ring or ring[0] > h - gap:
            continue
        j = ring[0]
        lj4 = _side(lattice, j + lead, np.array([x]))[0]
        if not (0 < lj4 < np.inf):
            continue
        lhs = abs(u[x, y] - u[xp, y]) + abs(u[y, x] - u[y, xp])
        bound = eu[x, xp] / (lj4 * eu[x, y] ** mu.n)
        tested += 1
        if bound > 0 and lhs / bound > C11:
            C11 = lhs / bound
            wit = {"x": x, "x_prime": xp, "y": y, "h": h, "j": j}
    return VerificationReport(f"paraproduct_kernel[m={P.m}]", {"C10": C10, "C11": C11, "triples": tested,
                                                                "gap": gap, "lead": lead},
                              wit, bool(np.isfinite(C10) and np.isfinite(C11)), {}, {"vacuous": tested == 0})
