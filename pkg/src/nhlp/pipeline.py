"""Run configuration and verification suites shared by the CLI and the acceptance tests."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .aoi import (AOIConfig, build_aoi, kernel_bound_checks, tune_constants, verify_identities,
                  verify_kernel_bounds, verify_phi_norms, verify_psi_clauses)
from .czo import (CZKernel, hczo_curve, pairing_decay, paraproduct, paraproduct_kernel_check, paraproduct_report,
                  separated_pairing_check, t1_battery, t1_cubes, verify_truncation_gap, weak_boundedness_pairings)
from .geometry import LevelTable, verify_delta_properties
from .lattice import LatticeConfig, verify_nesting, verify_regularity
from .lp import (_dist, build_decomposition, carleson_check, cube_battery, log_distance, maximal_ops, maximal_ratio,
                 paraproduct_densities, quasi_orthogonality, random_family, rbmo_norm, square_function_lp,
                 verify_decay, verify_lp_identities, verify_rbmo_square)
from .measure import (BOUNDARY_RTOL, REFERENCE_MEASURES, DiscreteMeasure, doubling_violation, generate_example,
                      growth_constant)
from .report import VerificationReport, config_hash


class ConfigError(ValueError):
    pass


# exact-identity tolerances: overrides may tighten these, never loosen them
EXACT_TOLERANCES = {"row_sum": 1e-9, "symmetry": 1e-9, "telescoping": 1e-10, "concentric": 1e-12,
                    "antisymmetric_pairing": 1e-12, "adjoint_one": 1e-8}
PROPERTY_TOLERANCES = {"eps3": 0.5, "r2_min": 0.8, "uniformity_factor": 2.0, "paraproduct_variation": 0.30,
                       "quasi_orth_stability": 0.20}

SUITES = ("delta", "lattice", "aoi", "lp", "carleson", "t1", "paraproduct")


@dataclass
class RunConfig:
    """``measure`` is either {"file": path} or {"kind": name, **generator parameters}."""

    measure: dict = field(default_factory=lambda: {"kind": "uniform_interval", "atoms": 1000})
    lattice: dict = field(default_factory=lambda: {"mode": "calibrated", "target_generations": 4,
                                                   "fractions": [0.1, 0.2, 0.4], "multipliers": [10, 10, 10],
                                                   "k_min": -1, "grid_q": 8})
    tuning_rounds: int = 8
    seed: int = 0
    battery: dict = field(default_factory=lambda: {"atoms": 200, "t1_atoms": 100, "family": 100,
                                                   "hormander_pairs": 1000})
    kernel: dict = field(default_factory=lambda: {"kind": "cauchy_real_part"})
    t1: dict = field(default_factory=lambda: {"rho": 2.0, "gamma": 2.0, "p": None, "eps_grid": None})
    tolerances: dict = field(default_factory=dict)
    out: str = "out"
    threads: int | None = None

    def __post_init__(self):
        mult = self.lattice.get("multipliers", [10, 10, 10])
        if min(mult) < 4:
            raise ConfigError("all lattice multipliers must be >= 4")
        for key, val in self.tolerances.items():
            if key in EXACT_TOLERANCES and val > EXACT_TOLERANCES[key]:
                raise ConfigError(f"tolerance override {key}={val} would loosen an exact identity")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        base = cls()
        for key, val in data.items():
            if not hasattr(base, key):
                raise ConfigError(f"unknown config key {key!r}")
            cur = getattr(base, key)
            setattr(base, key, {**cur, **val} if isinstance(cur, dict) and isinstance(val, dict) else val)
        base.__post_init__()
        return base

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out")
        return config_hash(d)

    def tol(self, key: str) -> float:
        return self.tolerances.get(key, EXACT_TOLERANCES.get(key, PROPERTY_TOLERANCES.get(key)))


def reference_config(kind: str, **overrides) -> RunConfig:
    cfg = RunConfig(measure={"kind": kind, **REFERENCE_MEASURES[kind]})
    for key, val in overrides.items():
        setattr(cfg, key, val)
    return cfg


@dataclass
class SuiteResult:
    name: str
    reports: list
    tables: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


class Pipeline:
    """Lazily built stages: measure, level table, tuned lattice, AOI, decomposition."""

    def __init__(self, config: RunConfig, mu: DiscreteMeasure | None = None, lattice=None):
        self.config = config
        self._mu = mu if mu is not None else (lattice.mu if lattice is not None else None)
        self._lattice = lattice

    @cached_property
    def mu(self) -> DiscreteMeasure:
        if self._mu is not None:
            return self._mu
        spec = dict(self.config.measure)
        if "file" in spec:
            if str(spec["file"]).lower().endswith(".csv"):
                if "n" not in spec:
                    raise ConfigError("CSV measures need the growth exponent n")
                return DiscreteMeasure.from_csv(spec["file"], spec["n"], spec.get("resolution"))
            return DiscreteMeasure.load(spec["file"])
        kind = spec.pop("kind")
        return generate_example(kind, **spec)

    @cached_property
    def C0(self) -> float:
        return growth_constant(self.mu)

    @cached_property
    def table(self) -> LevelTable:
        return LevelTable.build(self.mu, self.config.lattice.get("grid_q", 8))

    @cached_property
    def base_lattice_config(self) -> LatticeConfig:
        lc = self.config.lattice
        k_min = lc.get("k_min", -1)
        if lc.get("mode", "calibrated") == "theoretical":
            return LatticeConfig.theoretical(self.C0, self.mu.n, multipliers=tuple(lc.get("multipliers", (10, 10, 10))),
                                       k_min=k_min, grid_q=self.table.q)
        return LatticeConfig.calibrated(self.table, lc.get("target_generations", 4),
                                        tuple(lc.get("fractions", (0.1, 0.2, 0.4))), k_min=k_min)

    @cached_property
    def tuning(self):
        return tune_constants(self.mu, self.base_lattice_config, AOIConfig(), self.table,
                              max_rounds=self.config.tuning_rounds)

    @property
    def lattice(self):
        return self._lattice if self._lattice is not None else self.tuning.lattice

    @cached_property
    def aoi(self):
        return build_aoi(self.lattice)

    @cached_property
    def decomp(self):
        return build_decomposition(self.aoi)

    @cached_property
    def battery(self):
        return cube_battery(self.lattice, self.config.seed, self.config.battery.get("atoms", 200))

    @cached_property
    def g(self) -> np.ndarray:
        return log_distance(self.mu)

    @cached_property
    def g_rbmo(self):
        return rbmo_norm(self.lattice, self.g, self.battery)

    @cached_property
    def kernel(self) -> CZKernel:
        spec = dict(self.config.kernel)
        if "file" in spec:
            return CZKernel.load(spec["file"])
        if "n" not in spec:
            spec["n"] = self.mu.n
        return CZKernel.from_json(spec)

    def family(self, count: int | None = None) -> np.ndarray:
        return random_family(self.mu, count or self.config.battery.get("family", 100), self.config.seed)

    def carleson_family(self, count: int = 60) -> np.ndarray:
        """Constant function, indicators of transit cubes and Gaussians, in that order."""
        mu = self.mu
        _, sup = _dist(self.lattice)
        rng = np.random.default_rng(self.config.seed)
        cols = [np.ones(mu.size)]
        cubes = [(i, k) for k in self.lattice.transit_generations()
                 for i in np.flatnonzero(self.lattice.classes(k) == 1)]
        take = rng.choice(len(cubes), min(count // 2, len(cubes)), replace=False) if cubes else []
        for t in take:
            i, k = cubes[int(t)]
            cols.append((sup[i] <= self.lattice.sides("Q", k)[i] / 2 * (1 + BOUNDARY_RTOL)).astype(float))
        gauss = random_family(mu, max(1, count - len(cols)), self.config.seed)
        return np.column_stack(cols + [gauss])

    def meta(self) -> dict:
        return {"config_hash": self.config.hash, "seed": self.config.seed, "measure": self.mu.label,
                "atoms": self.mu.size}

    # -- suites ------------------------------------------------------------------

    def run(self, suite: str) -> SuiteResult:
        if suite not in SUITES:
            raise ConfigError(f"unknown suite {suite!r}")
        return getattr(self, f"suite_{suite}")()

    def suite_delta(self) -> SuiteResult:
        mu = self.mu
        rep = verify_delta_properties(mu, seed=self.config.seed, C0=self.C0)
        rep.tolerances["concentric_additivity"] = self.config.tol("concentric")
        wit = doubling_violation(mu)
        growth = VerificationReport("growth", {"C0": self.C0, "n": mu.n, "worst_doubling_ratio": wit["ratio"],
                                               "doubling_violation": wit["violation"]}, wit, True, {})
        return SuiteResult("delta", [growth, rep])

    def suite_lattice(self) -> SuiteResult:
        lat = self.lattice
        if self._lattice is not None:
            return SuiteResult("lattice", [verify_nesting(lat), verify_regularity(lat)])
        tune = self.tuning
        tuning = VerificationReport("tuning", {"chosen_round": tune.chosen_round, "converged": tune.converged,
                                               "rounds": len(tune.rounds), "k_max": lat.k_max,
                                               "transit_generations": len(lat.transit_generations())},
                                    {}, True, {"max_rounds": self.config.tuning_rounds},
                                    {"config": tune.config.to_dict(), "log": tune.rounds})
        rows = [(d["round"], d["transit_generations"], d["eps3"], d["bound_violations"], d["nesting_pass_rate"])
                for d in tune.rounds]
        return SuiteResult("lattice", [tuning, verify_nesting(lat), verify_regularity(lat)],
                           {"tuning": (["round", "transit_generations", "eps3", "bound_violations",
                                        "nesting_pass_rate"], rows)})

    def suite_aoi(self) -> SuiteResult:
        lat, aoi = self.lattice, self.aoi
        reps = []
        for k in aoi.ks:
            if k < 1:
                continue
            ops = aoi.gens[k]
            reps.append(verify_identities(ops, min(self.config.tol("row_sum"), self.config.tol("symmetry"))))
            reps.append(kernel_bound_checks(lat, ops))
            rep = verify_phi_norms(lat, k, aoi.config, ops)
            reps.append(rep)
            reps.append(verify_kernel_bounds(lat, ops, seed=self.config.seed))
            reps.append(verify_psi_clauses(lat, k, seed=self.config.seed))
        return SuiteResult("aoi", reps)

    def suite_lp(self) -> SuiteResult:
        d = self.decomp
        reps = [verify_lp_identities(d, self.config.tol("row_sum")), verify_decay(d, self.config.tol("r2_min"))]
        count = self.config.battery.get("family", 100)
        fam = self.family(2 * count)
        q1 = quasi_orthogonality(d, fam[:, :count])
        q2 = quasi_orthogonality(d, fam)
        lo1, hi1 = q1.measured_constants["r_min"], q1.measured_constants["r_max"]
        lo2, hi2 = q2.measured_constants["r_min"], q2.measured_constants["r_max"]
        change = max(abs(lo2 - lo1) / lo1, abs(hi2 - hi1) / hi1)
        stab = self.config.tol("quasi_orth_stability")
        reps.append(VerificationReport("quasi_orthogonality", {"r_min": lo2, "r_max": hi2, "count": 2 * count,
                                                               "r_min_half": lo1, "r_max_half": hi1,
                                                               "endpoint_change": change},
                                       {}, q1.passed and q2.passed and change < stab, {"endpoint_change": stab}))
        proj = d.band_project(fam[:, :20])
        sq_rows = []
        for p in (1.5, 2.0, 3.0):
            ratios = []
            for f in proj.T:
                fn, sq = square_function_lp(d, f, p)
                ratios.append(sq / fn)
            sq_rows.append((p, float(np.min(ratios)), float(np.max(ratios))))
        reps.append(VerificationReport("square_function_lp", {f"p={p:g}": [lo, hi] for p, lo, hi in sq_rows},
                                       {}, all(np.isfinite(hi) and lo > 0 for _, lo, hi in sq_rows), {}))
        hc = hczo_curve(d, pairs=self.config.battery.get("hormander_pairs", 1000), seed=self.config.seed)
        reps.append(hc)
        for N0 in (0, 2):
            reps.append(verify_rbmo_square(d, self.g, self.battery, N0, self.g_rbmo))
        f = np.abs(fam[:, 0])
        M2, MS = maximal_ops(d, f)
        ratio = maximal_ratio(M2, MS)
        reps.append(VerificationReport("maximal_operators", {"C_hat": ratio}, {}, bool(np.isfinite(ratio)), {}))
        r = q2.details["r"]
        hist, edges = np.histogram(r, bins=20)
        tables = {
            "decay_curve": (["gap", "j", "k", "norm"], [(g, j, k, v) for j, k, g, v in d.decay]),
            "phi_curve": (["N", "norm"], [list(x) for x in d.phi_curve]),
            "quasi_orth_hist": (["left", "right", "count"], list(zip(edges[:-1], edges[1:], hist))),
            "hczo_curve": (["N", "C1", "C2_prime", "norm"],
                           [(c["N"], c["C1"], c["C2_prime"], c["norm"]) for c in hc.measured_constants["curve"]]),
            "square_function": (["p", "ratio_min", "ratio_max"], sq_rows),
        }
        return SuiteResult("lp", reps, tables)

    def suite_carleson(self) -> SuiteResult:
        d = self.decomp
        a = paraproduct_densities(d, self.g)
        rep = carleson_check(d, a, self.carleson_family(), self.battery, self.g_rbmo.norm)
        return SuiteResult("carleson", [rep])

    def suite_t1(self) -> SuiteResult:
        lat, mu, K = self.lattice, self.mu, self.kernel
        tc = self.config.t1
        consts = K.measure_constants(mu, seed=self.config.seed)
        reps = [VerificationReport(f"kernel_constants[{K.kind}]", consts, {},
                                   consts["size_ok"] and consts["smoothness_ok"], {})]
        cubes = t1_cubes(lat, self.config.seed, self.config.battery.get("t1_atoms", 100))
        rep = t1_battery(lat, K, tc.get("p"), tc.get("rho", 2.0), tc.get("gamma", 2.0), tc.get("eps_grid"),
                         seed=self.config.seed, cubes=cubes,
                         factor=self.config.tol("uniformity_factor"))
        reps.append(rep)
        if K.antisymmetric:
            tol = self.config.tol("antisymmetric_pairing")
            worst = max(float(np.max(np.abs(weak_boundedness_pairings(lat, K, e, cubes))))
                        for e in rep.details["eps"])
            reps.append(VerificationReport("antisymmetric_pairing", {"max_abs_pairing": worst}, {}, worst <= tol,
                                           {"max_abs_pairing": tol}))
        reps.append(separated_pairing_check(lat, K, seed=self.config.seed))
        reps.append(verify_truncation_gap(mu, K, 4 * mu.resolution, self.family(5), self.C0))
        reps.append(pairing_decay(self.decomp, K, seed=self.config.seed, r2_min=self.config.tol("r2_min")))
        fams = rep.details["families"]
        tables = {"t1_battery": (["eps"] + list(fams), [[e] + [fams[k][i] for k in fams]
                                                          for i, e in enumerate(rep.details["eps"])])}
        return SuiteResult("t1", reps, tables)

    def suite_paraproduct(self) -> SuiteResult:
        d = self.decomp
        rep = paraproduct_report(d, self.g, battery=self.battery,
                                 stable=self.config.tol("paraproduct_variation"))
        reps = [rep]
        for m in (4, 8):
            P = paraproduct(d, self.g, m)
            reps.append(paraproduct_kernel_check(P, self.lattice, seed=self.config.seed))
            shallow = paraproduct_kernel_check(P, self.lattice, gap=2, lead=1, seed=self.config.seed)
            shallow.lemma += "[gap=2,lead=1]"
            reps.append(shallow)
        rows = [(r["m"], r["norm"], r["ratio"], r["U1_error"], r["Ustar1_residual"])
                for r in rep.measured_constants["by_m"]]
        return SuiteResult("paraproduct", reps, {"paraproduct": (["m", "norm", "ratio", "U1_error",
                                                                  "Ustar1_residual"], rows)})
