"""Littlewood-Paley differences D_k, the almost-identity Phi_N, square functions, RBMO and Carleson checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .aoi import AOI, OperatorMatrix, lp_norm, operator_norm
from .lattice import GenerationLattice
from .measure import BOUNDARY_RTOL, DiscreteMeasure
from .report import VerificationReport


class LPError(RuntimeError):
    pass


def _sym_norm(M: np.ndarray, w: np.ndarray, seed: int = 0) -> float:
    """L^2(mu) norm of a matrix acting on function values."""
    s = np.sqrt(w)
    return operator_norm(s[:, None] * M / s[None, :], seed=seed)


def loglinear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares fit of log2(y) = a + b x; returns (slope b, intercept a, R^2)."""
    x = np.asarray(x, dtype=float)
    ly = np.log2(np.asarray(y, dtype=float))
    if len(x) < 2 or np.ptp(x) == 0:
        return 0.0, float(ly.mean()) if len(ly) else 0.0, 0.0
    b, a = np.polyfit(x, ly, 1)
    resid = ly - (a + b * x)
    ss = float(np.sum((ly - ly.mean()) ** 2))
    # a flat series is fit exactly; its spread is roundoff
    flat = ss <= 1e-20 * max(1.0, float(ly @ ly))
    r2 = 1.0 if flat else 1.0 - float(np.sum(resid ** 2)) / ss
    return float(b), float(a), r2


# -- decomposition ---------------------------------------------------------------

@dataclass
class LPDecomposition:
    """Band-limited Littlewood-Paley data built from an AOI.

    ``D`` maps each generation of the band to the matrix of D_k acting on
    function values; ``Dk`` exposes the same operators as OperatorMatrix.
    """

    aoi: AOI
    ks: list
    D: dict
    N: int
    PhiN: OperatorMatrix
    I_minus_PhiN_norm: float
    phi_curve: list
    eta_hat: float
    eta_r2: float
    decay: list
    first_generation: int | None
    quasi_orth_constants: tuple | None = None
    meta: dict = field(default_factory=dict)

    @property
    def mu(self) -> DiscreteMeasure:
        return self.aoi.mu

    @property
    def lattice(self) -> GenerationLattice:
        return self.aoi.lattice

    @property
    def weights(self) -> np.ndarray:
        return self.aoi.mu.weights

    @property
    def k_max(self) -> int:
        return max(self.ks)

    @property
    def Dk(self) -> dict:
        return {k: OperatorMatrix.from_matrix(M, self.weights) for k, M in self.D.items()}

    @property
    def I_band(self) -> np.ndarray:
        return self.aoi.S(self.k_max).matrix

    def S(self, k: int) -> np.ndarray:
        return self.aoi.S(k).matrix

    def live(self) -> list:
        """Generations with D_k != 0."""
        return [k for k in self.ks if np.any(self.D[k])]

    def D_N(self, k: int, N: int | None = None) -> np.ndarray:
        N = self.N if N is None else N
        out = np.zeros_like(self.D[self.ks[0]])
        for j in self.ks:
            if abs(j - k) <= N:
                out += self.D[j]
        return out

    def E(self, k: int) -> np.ndarray:
        out = np.zeros_like(self.D[self.ks[0]])
        for j in self.ks:
            if j + k in self.D:
                out += self.D[j + k] @ self.D[j]
        return out

    def Phi(self, N: int) -> np.ndarray:
        return phi_matrix(self.D, self.ks, N)

    def band_project(self, f: np.ndarray) -> np.ndarray:
        return self.I_band @ f

    def coefficients(self, f: np.ndarray) -> np.ndarray:
        """Rows D_k f for k in the band (shape len(ks) x N, or with trailing family axis)."""
        return np.stack([self.D[k] @ f for k in self.ks])

    def energies(self, f: np.ndarray) -> np.ndarray:
        w = self.weights
        C = self.coefficients(f)
        return np.einsum("kn,n->k", C ** 2, w) if f.ndim == 1 else np.einsum("knf,n->kf", C ** 2, w)

    def phi_inverse(self, b: np.ndarray, tol: float = 1e-8) -> tuple[np.ndarray, int]:
        """Phi_N^{-1} b by the Neumann series sum_i (I_band - Phi_N)^i b on the band.

        The series is truncated once the certified tail 2^{-(I+1)} is below ``tol``.
        """
        if self.I_minus_PhiN_norm > 0.5 + 1e-12:
            raise LPError("Neumann series uncertified: ||I_band - Phi_N|| > 1/2")
        R = self.I_band - self.PhiN.matrix
        terms = int(math.ceil(math.log2(1.0 / tol)))
        term = self.band_project(b)
        out = term.copy()
        for _ in range(terms):
            term = R @ term
            out += term
        return out, terms

    def summary(self) -> dict:
        return {"k_range": [min(self.ks), max(self.ks)], "N": self.N,
                "I_minus_PhiN_norm": self.I_minus_PhiN_norm, "eta_hat": self.eta_hat,
                "eta_r2": self.eta_r2, "first_generation": self.first_generation,
                "quasi_orth_constants": self.quasi_orth_constants}


def phi_matrix(D: dict, ks: list, N: int) -> np.ndarray:
    """Phi_N = sum_{|l-j|<=N} D_l D_j = sum_j D_j^N D_j."""
    out = np.zeros_like(D[ks[0]])
    for j in ks:
        if not np.any(D[j]):
            continue
        DN = np.zeros_like(out)
        for l in ks:
            if abs(l - j) <= N:
                DN += D[l]
        out += DN @ D[j]
    return out


def decay_table(D: dict, ks: list, w: np.ndarray) -> list:
    """(j, k, |j-k|, ||D_j D_k||) over all live pairs j <= k."""
    live = [k for k in ks if np.any(D[k])]
    rows = []
    for a, j in enumerate(live):
        for k in live[a:]:
            rows.append((j, k, k - j, _sym_norm(D[j] @ D[k], w)))
    return rows


def fit_decay(rows: list, floor: float = 1e-14) -> tuple[float, float, list]:
    """Envelope fit: per-gap maximum of the norms against the gap; returns (eta_hat, R^2, envelope)."""
    gaps = sorted({r[2] for r in rows})
    env = []
    for g in gaps:
        vals = [r[3] for r in rows if r[2] == g]
        env.append((g, max(max(vals), floor)))
    if len(env) < 2:
        return 0.0, 0.0, env
    slope, _, r2 = loglinear_fit([e[0] for e in env], [e[1] for e in env])
    return -slope, r2, env


def build_decomposition(aoi: AOI, N_max: int = 10) -> LPDecomposition:
    mu = aoi.mu
    w = mu.weights
    ks = [int(k) for k in aoi.lattice.ks]
    S = {k: aoi.S(k).matrix for k in ks}
    prev = np.zeros((mu.size, mu.size))
    D = {}
    for k in ks:
        D[k] = S[k] - prev
        prev = S[k]
    ones = np.ones(mu.size)
    nonzero_one = [k for k in ks if np.max(np.abs(D[k] @ ones)) > 1e-9]
    first = nonzero_one[0] if nonzero_one else None
    I_band = S[ks[-1]]
    curve = []
    chosen = None
    for N in range(0, N_max + 1):
        Phi = phi_matrix(D, ks, N)
        nrm = _sym_norm(I_band - Phi, w)
        curve.append((N, nrm))
        if nrm <= 0.5:
            chosen = (N, Phi, nrm)
            break
    if chosen is None:
        raise LPError(f"no N <= {N_max} gives ||I_band - Phi_N|| <= 1/2: curve {curve}")
    rows = decay_table(D, ks, w)
    eta, r2, env = fit_decay(rows)
    return LPDecomposition(aoi, ks, D, chosen[0], OperatorMatrix.from_matrix(chosen[1], w), chosen[2],
                           curve, eta, r2, rows, first, meta={"decay_envelope": env,
                                                              "D1_nonzero_generations": nonzero_one})


def verify_lp_identities(decomp: LPDecomposition, tol: float = 1e-9) -> VerificationReport:
    """Telescoping, self-adjointness and D_k 1 = 0 away from the first generation."""
    w = decomp.weights
    total = sum(decomp.D.values())
    tele = float(np.max(np.abs(total - decomp.I_band)))
    sym = 0.0
    rows = 0.0
    ones = np.ones(decomp.mu.size)
    for k, M in decomp.D.items():
        K = M / w[None, :]
        sym = max(sym, float(np.max(np.abs(K - K.T))) / max(1.0, float(np.abs(K).max())))
        if k != decomp.first_generation:
            rows = max(rows, float(np.max(np.abs(M @ ones))))
    exceptions = decomp.meta["D1_nonzero_generations"]
    ok = tele <= 1e-10 and sym <= tol and rows <= tol and len(exceptions) <= 1
    return VerificationReport("lp_identities",
                              {"telescoping_residual": tele, "symmetry_residual": sym,
                               "row_sum_residual": rows, "first_generation": decomp.first_generation,
                               "exception_count": len(exceptions)},
                              {}, ok, {"telescoping": 1e-10, "symmetry": tol, "row_sum": tol})


def verify_decay(decomp: LPDecomposition, r2_min: float = 0.8) -> VerificationReport:
    """Fit quality of ||D_j D_k|| decay, the E_k envelope and the Phi_N certificate."""
    w = decomp.weights
    live = decomp.live()
    span = (max(live) - min(live)) if live else 0
    e_norms = {}
    for k in range(-span, span + 1):
        e_norms[k] = _sym_norm(decomp.E(k), w)
    eta = decomp.eta_hat
    env = [e_norms[k] / (abs(k) * 2.0 ** (-abs(k) * eta)) for k in e_norms if k != 0 and e_norms[k] > 0]
    C_env = max(env) if env else 0.0
    ok = eta > 0 and decomp.eta_r2 >= r2_min and decomp.I_minus_PhiN_norm <= 0.5
    return VerificationReport("lp_decay",
                              {"eta_hat": eta, "slope": -eta, "r2": decomp.eta_r2, "N": decomp.N,
                               "I_minus_PhiN_norm": decomp.I_minus_PhiN_norm, "E_envelope_C": C_env,
                               "E_norms": e_norms},
                              {"decay_envelope": decomp.meta["decay_envelope"]}, ok,
                              {"r2_min": r2_min, "I_minus_PhiN": 0.5})


# -- quasi-orthogonality and square functions --------------------------------------

def random_family(mu: DiscreteMeasure, count: int, seed: int = 0) -> np.ndarray:
    """Columns are i.i.d. standard Gaussians; the first columns do not depend on ``count``."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((count, mu.size)).T


def quasi_orthogonality(decomp: LPDecomposition, family: np.ndarray, project: bool = True) -> VerificationReport:
    """r(f) = sum_k ||D_k f||^2 / ||f||^2 over a family of columns, after band projection."""
    w = decomp.weights
    F = np.asarray(family, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if project:
        F = decomp.I_band @ F
    norms = np.einsum("nf,n->f", F ** 2, w)
    keep = norms > 1e-14 * max(1.0, float(norms.max(initial=0.0)))
    F = F[:, keep]
    if F.shape[1] == 0:
        return VerificationReport("quasi_orthogonality", {"count": 0}, {}, False, {})
    r = decomp.energies(F).sum(axis=0) / norms[keep]
    lo, hi = float(r.min()), float(r.max())
    decomp.quasi_orth_constants = (lo, hi)
    return VerificationReport("quasi_orthogonality",
                              {"count": int(F.shape[1]), "r_min": lo, "r_max": hi, "spread": hi / lo},
                              {"argmin": int(np.argmin(r)), "argmax": int(np.argmax(r))},
                              bool(0 < lo and np.isfinite(hi)), {}, {"r": r})


def square_function_lp(decomp: LPDecomposition, f: np.ndarray, p: float) -> tuple[float, float]:
    """(||f||_p, ||(sum_k |D_k f|^2)^{1/2}||_p) in L^p(mu)."""
    if not 1 < p < math.inf:
        raise LPError("p must lie in (1, inf)")
    w = decomp.weights
    sq = np.sqrt(np.sum(decomp.coefficients(f) ** 2, axis=0))
    return lp_norm(f, w, p), lp_norm(sq, w, p)


# -- RBMO --------------------------------------------------------------------------

@dataclass
class CubeBattery:
    """Concentric-family cube sample: cube b is centered at atom ``centers[b]`` with side ``sides[b]``.

    ``pairs`` rows are (inner, outer) battery indices with ``pair_delta`` the
    coefficient delta(inner, outer).
    """

    centers: np.ndarray
    sides: np.ndarray
    doubling: np.ndarray
    pairs: np.ndarray
    pair_delta: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.centers)

    def masks(self, sup: np.ndarray, sel=None, scale: float = 1.0) -> np.ndarray:
        c = self.centers if sel is None else self.centers[sel]
        s = self.sides if sel is None else self.sides[sel]
        return sup[c] <= (scale * s / 2)[:, None] * (1 + BOUNDARY_RTOL)


def _concentric_delta(eu_row: np.ndarray, sup_row: np.ndarray, w: np.ndarray, n: float,
                      inner: np.ndarray, outer: np.ndarray) -> np.ndarray:
    """delta between concentric cubes of sides inner <= outer: mass weighted by |x - z|^{-n} in between."""
    with np.errstate(divide="ignore"):
        dens = np.where(eu_row > 0, w / np.where(eu_row > 0, eu_row, 1.0) ** n, 0.0)
    order = np.argsort(sup_row, kind="stable")
    cs = np.concatenate([[0.0], np.cumsum(dens[order])])
    srt = sup_row[order]
    upto = lambda s: cs[np.searchsorted(srt, s / 2 * (1 + BOUNDARY_RTOL), side="right")]
    return upto(outer) - upto(inner)


def cube_battery(lattice: GenerationLattice, seed: int = 0, atoms: int = 200,
                 dilations=(1.0, 1.5, 2.0, 4.0), include_nondoubling: bool = False) -> CubeBattery:
    """Doubling cubes centered at a seeded atom sample: every doubling grid side, plus
    dilations of the lattice cubes Q_{x,k} kept when doubling; pairs are all nested
    concentric doubling pairs at each center."""
    mu = lattice.mu
    table = lattice.table
    rng = np.random.default_rng(seed)
    sample = np.arange(mu.size) if mu.size <= atoms else np.sort(rng.choice(mu.size, atoms, replace=False))
    eu, sup = _dist(lattice)
    w = mu.weights
    beta = 2.0 ** (mu.dim + 1)
    centers, sides, dbl, pairs, pdelta = [], [], [], [], []
    for i in sample:
        cand = list(table.sides)
        for k in lattice.transit_generations():
            s = lattice.sides("Q", k)[i]
            if 0 < s < np.inf:
                cand.extend(rho * s for rho in dilations)
        cand = np.unique(np.array(cand))
        srt = np.sort(sup[i])
        cum = np.concatenate([[0.0], np.cumsum(w[np.argsort(sup[i], kind="stable")])])
        mass = lambda s: cum[np.searchsorted(srt, s / 2 * (1 + BOUNDARY_RTOL), side="right")]
        m1, m2 = mass(cand), mass(2 * cand)
        is_dbl = m2 <= beta * m1
        keep = is_dbl | include_nondoubling
        cand, is_dbl = cand[keep], is_dbl[keep]
        base = len(centers)
        centers.extend([i] * len(cand))
        sides.extend(cand.tolist())
        dbl.extend(is_dbl.tolist())
        d_idx = np.flatnonzero(is_dbl)
        if len(d_idx) >= 2:
            a, b = np.triu_indices(len(d_idx), 1)
            inner, outer = d_idx[a], d_idx[b]
            pairs.append(np.column_stack([base + inner, base + outer]))
            pdelta.append(_concentric_delta(eu[i], sup[i], w, mu.n, cand[inner], cand[outer]))
    pairs = np.vstack(pairs) if pairs else np.zeros((0, 2), dtype=int)
    pdelta = np.concatenate(pdelta) if pdelta else np.zeros(0)
    return CubeBattery(np.array(centers), np.array(sides), np.array(dbl, dtype=bool), pairs, pdelta, seed,
                       {"atoms": len(sample), "dilations": list(dilations)})


def _dist(lattice: GenerationLattice):
    from .aoi import _distances
    return _distances(lattice)


@dataclass
class RBMOEstimate:
    norm: float
    oscillation_part: float
    transition_part: float
    witnesses: dict
    variant: str = "rbmo"


def _cube_stats(battery: CubeBattery, sup: np.ndarray, w: np.ndarray, f: np.ndarray, chunk: int = 2048,
                rho: float | None = None):
    """Mass, mean and integrated oscillation of f per battery cube; with ``rho`` also mu(rho Q)."""
    B = len(battery)
    mass = np.empty(B)
    mean = np.empty(B)
    osc = np.empty(B)
    rmass = np.empty(B) if rho is not None else None
    for s in range(0, B, chunk):
        sel = slice(s, min(B, s + chunk))
        M = battery.masks(sup, sel)
        mw = M * w[None, :]
        mass[sel] = mw.sum(1)
        mean[sel] = (mw @ f) / mass[sel]
        osc[sel] = np.sum(mw * np.abs(f[None, :] - mean[sel][:, None]), axis=1)
        if rho is not None:
            rmass[sel] = (battery.masks(sup, sel, rho) * w[None, :]).sum(1)
    return mass, mean, osc, rmass


def rbmo_norm(lattice: GenerationLattice, f: np.ndarray, battery: CubeBattery) -> RBMOEstimate:
    """Battery lower bound for the RBMO norm of f."""
    if len(battery) == 0:
        raise LPError("empty cube battery")
    w = lattice.mu.weights
    _, sup = _dist(lattice)
    f = np.asarray(f, dtype=float)
    mass, mean, osc, _ = _cube_stats(battery, sup, w, f)
    d = battery.doubling
    ratio = np.where(d, osc / mass, 0.0)
    o_idx = int(np.argmax(ratio))
    o = float(ratio[o_idx])
    t, t_idx = 0.0, None
    if len(battery.pairs):
        q, r = battery.pairs[:, 0], battery.pairs[:, 1]
        jumps = np.abs(mean[q] - mean[r]) / (1.0 + battery.pair_delta)
        t_idx = int(np.argmax(jumps))
        t = float(jumps[t_idx])
    wit = {"oscillation_cube": {"center": int(battery.centers[o_idx]), "side": float(battery.sides[o_idx])}}
    if t_idx is not None:
        a, b = battery.pairs[t_idx]
        wit["transition_pair"] = {"center": int(battery.centers[a]), "inner_side": float(battery.sides[a]),
                                  "outer_side": float(battery.sides[b]), "delta": float(battery.pair_delta[t_idx])}
    return RBMOEstimate(max(o, t), o, t, wit)


def bmo_rho_norm(lattice: GenerationLattice, f: np.ndarray, battery: CubeBattery, rho: float = 2.0) -> RBMOEstimate:
    """Battery lower bound for sup_Q (1/mu(rho Q)) int_Q |f - m_Q f| over all battery cubes."""
    w = lattice.mu.weights
    _, sup = _dist(lattice)
    _, _, osc, rmass = _cube_stats(battery, sup, w, np.asarray(f, dtype=float), rho=rho)
    ratio = osc / rmass
    i = int(np.argmax(ratio))
    return RBMOEstimate(float(ratio[i]), float(ratio[i]), 0.0,
                        {"cube": {"center": int(battery.centers[i]), "side": float(battery.sides[i])}}, "bmo_rho")


def log_distance(mu: DiscreteMeasure, x0_index: int | None = None) -> np.ndarray:
    """g(x) = log(resolution + |x - x0|) with x0 the atom nearest the barycenter by default."""
    if x0_index is None:
        bary = mu.weights @ mu.points / mu.total_mass
        x0_index = int(np.argmin(np.linalg.norm(mu.points - bary, axis=1)))
    return np.log(mu.resolution + np.linalg.norm(mu.points - mu.points[x0_index], axis=1))


def _generation_cubes(lattice: GenerationLattice, battery: CubeBattery):
    """Transit cubes Q_{x,k} at the battery's sample centers: arrays (center, k, side)."""
    centers = np.unique(battery.centers)
    rows = []
    for k in lattice.transit_generations():
        s = lattice.sides("Q", k)[centers]
        cls = lattice.classes(k)[centers]
        ok = (cls == 1) & np.isfinite(s) & (s > 0)
        rows.extend((int(c), k, float(v)) for c, v in zip(centers[ok], s[ok]))
    if not rows:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(0)
    c, k, s = zip(*rows)
    return np.array(c), np.array(k), np.array(s)


def verify_rbmo_square(decomp: LPDecomposition, f: np.ndarray, battery: CubeBattery, N0: int = 0,
                       rbmo: RBMOEstimate | None = None) -> VerificationReport:
    """max over generation cubes Q_k of sum_{j >= k - N0} ||D_j f||^2_{L^2(mu|Q_k)} / (||f||_*^2 mu(Q_k))."""
    lattice = decomp.lattice
    w = decomp.weights
    _, sup = _dist(lattice)
    rbmo = rbmo or rbmo_norm(lattice, f, battery)
    C = decomp.coefficients(f) ** 2
    tail = np.cumsum(C[::-1], axis=0)[::-1]          # tail[r] = sum_{j >= ks[r]} (D_j f)^2
    ks = decomp.ks
    cen, kk, sides = _generation_cubes(lattice, battery)
    if rbmo.norm <= 0 or len(cen) == 0:
        return VerificationReport(f"rbmo_square[N0={N0}]", {"C": 0.0, "rbmo_norm": rbmo.norm, "cubes": len(cen)},
                                  {}, True, {})
    M = sup[cen] <= (sides / 2)[:, None] * (1 + BOUNDARY_RTOL)
    rows = np.clip(np.searchsorted(ks, kk - N0), 0, len(ks) - 1)
    lhs = np.sum(M * w[None, :] * tail[rows], axis=1)
    ratio = lhs / (rbmo.norm ** 2 * (M @ w))
    i = int(np.argmax(ratio))
    return VerificationReport(f"rbmo_square[N0={N0}]",
                              {"C": float(ratio[i]), "rbmo_norm": rbmo.norm, "cubes": int(len(cen))},
                              {"center": int(cen[i]), "k": int(kk[i]), "side": float(sides[i])},
                              bool(np.isfinite(ratio[i])), {})


# -- discrete Carleson packing --------------------------------------------------------

def paraproduct_densities(decomp: LPDecomposition, g: np.ndarray, N: int | None = None) -> np.ndarray:
    """a_k = (D_k^N g)^2 for k in the band."""
    return np.stack([(decomp.D_N(k, N) @ g) ** 2 for k in decomp.ks])


def carleson_check(decomp: LPDecomposition, a: np.ndarray, f_family: np.ndarray, battery: CubeBattery,
                   rbmo: float | None = None) -> VerificationReport:
    """Packing constant C9 of nu_k = a_k mu over generation cubes, then the embedding ratio.

    ``a`` has one row per band generation. The ratio reported is
    max_f sum_k ||S_k f||^2_{L^2(nu_k)} / (C9 ||f||^2_{L^2(mu)}).
    """
    lattice = decomp.lattice
    w = decomp.weights
    _, sup = _dist(lattice)
    a = np.asarray(a, dtype=float)
    ks = decomp.ks
    nu_w = a * w[None, :]
    tail = np.cumsum(nu_w[::-1], axis=0)[::-1]
    cen, kk, sides = _generation_cubes(lattice, battery)
    C9 = 0.0
    wit = {}
    if len(cen):
        M = sup[cen] <= (sides / 2)[:, None] * (1 + BOUNDARY_RTOL)
        rows = np.clip(np.searchsorted(ks, kk - 2), 0, len(ks) - 1)
        packing = np.sum(M * tail[rows], axis=1) / (M @ w)
        i = int(np.argmax(packing))
        C9 = float(packing[i])
        wit = {"center": int(cen[i]), "k": int(kk[i]), "side": float(sides[i])}
    F = np.asarray(f_family, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    lhs = np.zeros(F.shape[1])
    for r, k in enumerate(ks):
        if np.any(a[r]):
            lhs += np.einsum("nf,n->f", (decomp.S(k) @ F) ** 2, nu_w[r])
    fn = np.einsum("nf,n->f", F ** 2, w)
    consts = {"C9": C9, "cubes": int(len(cen))}
    if rbmo is not None and rbmo > 0:
        consts["C9_over_rbmo_sq"] = C9 / rbmo ** 2
    if C9 == 0:
        consts["ratio"] = 0.0
        return VerificationReport("carleson", consts, wit, True, {}, {"trivial_family": True})
    ratio = lhs / (C9 * fn)
    consts["ratio"] = float(ratio.max())
    return VerificationReport("carleson", consts, wit, bool(np.isfinite(ratio.max())), {})


# -- maximal operators ---------------------------------------------------------------

def maximal_battery(lattice: GenerationLattice, dilations=(1.0, 1.5, 2.0, 4.0), anchors: int = 50,
                    seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """All lattice cubes (every name, every generation) dilated, plus grid cubes at sampled anchors."""
    mu = lattice.mu
    cs, ss = [], []
    names = lattice.idx.keys()
    for k in lattice.ks:
        for name in names:
            s = lattice.sides(name, int(k))
            ok = np.isfinite(s) & (s > 0)
            for rho in dilations:
                cs.append(np.flatnonzero(ok))
                ss.append(rho * s[ok])
    rng = np.random.default_rng(seed)
    anc = rng.choice(mu.size, min(anchors, mu.size), replace=False)
    g = lattice.table.sides
    cs.append(np.repeat(anc, len(g)))
    ss.append(np.tile(g, len(anc)))
    C = np.concatenate(cs)
    S = np.concatenate(ss)
    pairs = np.unique(np.column_stack([C, S]), axis=0)
    return pairs[:, 0].astype(int), pairs[:, 1]


def maximal_ops(decomp: LPDecomposition, f: np.ndarray, battery=None, chunk: int = 2048):
    """Battery versions of M_(2) f and M_S f as pointwise arrays."""
    lattice = decomp.lattice
    w = decomp.weights
    _, sup = _dist(lattice)
    cen, side = battery if battery is not None else maximal_battery(lattice)
    af = np.abs(np.asarray(f, dtype=float))
    M2 = np.zeros(len(w))
    tol = 1 + 1e-12
    for s in range(0, len(cen), chunk):
        c, sd = cen[s:s + chunk], side[s:s + chunk]
        inQ = sup[c] <= (sd / 2)[:, None] * tol
        in2Q = sup[c] <= sd[:, None] * tol
        vals = (inQ @ (w * af)) / (in2Q @ w)
        M2 = np.maximum(M2, np.max(np.where(inQ, vals[:, None], 0.0), axis=0))
    MS = np.zeros(len(w))
    for k in decomp.ks:
        Sf = np.abs(decomp.S(k) @ f)
        if not np.any(Sf):
            continue
        s = lattice.sides("Q", k)
        ok = np.isfinite(s) & (s > 0)
        if not ok.any():
            continue
        interior = sup[ok] < (s[ok] / 2)[:, None]       # rows z, columns x in (Q_{z,k})°
        MS = np.maximum(MS, np.max(np.where(interior, Sf[ok][:, None], 0.0), axis=0))
    return M2, MS


def maximal_ratio(M2: np.ndarray, MS: np.ndarray) -> float:
    pos = M2 > 0
    if np.any(~pos & (MS > 0)):
        return math.inf
    return float(np.max(MS[pos] / M2[pos])) if pos.any() else 0.0
