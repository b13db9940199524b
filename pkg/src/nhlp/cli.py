"""Command-line front end: measure generation, lattice and AOI builds, verification suites."""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .aoi import AOIError, verify_identities
from .czo import KERNEL_KINDS, CZOError
from .geometry import GeometryError
from .lattice import LatticeError, load_lattice
from .lp import LPError, _dist, square_function_lp
from .measure import (BOUNDARY_RTOL, EXAMPLE_KINDS, REFERENCE_MEASURES, DiscreteMeasure, MeasureError,
                      doubling_violation, generate_example, growth_constant)
from .pipeline import SUITES, ConfigError, Pipeline, RunConfig, SuiteResult
from .plotting import plot_table
from .report import STABLE_DIGITS, VerificationReport, stable

_KIND_ALIASES = {"cantor": "cantor_quarter_planar", "lipschitz": "lipschitz_graph_arclength",
                 "lipschitz_graph": "lipschitz_graph_arclength"}
_CLI_KERNELS = {"cauchy-re": "cauchy_real_part", "cauchy-im": "cauchy_imag_part", "riesz": "riesz",
                "abs-power": "abs_power", "test-bounded": "test_bounded"}


def _kind(name: str) -> str:
    k = name.replace("-", "_")
    k = _KIND_ALIASES.get(k, k)
    if k not in EXAMPLE_KINDS:
        raise MeasureError(f"unknown measure kind {name!r}")
    return k


def _measure_spec(arg: str) -> dict:
    """A measure argument is a JSON or CSV file, or the name of a reference measure."""
    if Path(arg).exists():
        return {"file": arg}
    kind = _kind(arg)
    return {"kind": kind, **REFERENCE_MEASURES[kind]}


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_cell(v) for v in r])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(f"{float(v):.{STABLE_DIGITS}g}"))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_")


class Emitter:
    """Serialized writes of reports, CSV tables and PNG renderings under one output directory."""

    def __init__(self, out, meta: dict, plots: bool = True):
        self.out = Path(out)
        self.meta = meta
        self.plots = plots
        self.index = []

    def suite(self, result: SuiteResult) -> None:
        d = self.out / result.name
        d.mkdir(parents=True, exist_ok=True)
        seen = {}
        for rep in result.reports:
            slug = _slug(rep.lemma)
            seen[slug] = seen.get(slug, 0) + 1
            if seen[slug] > 1:
                slug = f"{slug}_{seen[slug]}"
            rep.write(d / f"{slug}.json", {**self.meta, "suite": result.name})
            self.index.append({"suite": result.name, "report": rep.lemma, "file": f"{result.name}/{slug}.json",
                               "pass": bool(rep.passed)})
            print(rep.summary()[:300])
        for name, (header, rows) in result.tables.items():
            self.table(d, name, header, rows)

    def table(self, d: Path, name: str, header, rows) -> None:
        d.mkdir(parents=True, exist_ok=True)
        _write_csv(d / f"{name}.csv", header, rows)
        if self.plots:
            plot_table(name, list(header), [list(r) for r in rows], d / f"{name}.png")

    def finish(self) -> int:
        self.out.mkdir(parents=True, exist_ok=True)
        ok = all(e["pass"] for e in self.index)
        summary = {**self.meta, "pass": ok, "reports": self.index}
        (self.out / "summary.json").write_text(json.dumps(stable(summary), sort_keys=True, indent=2) + "\n")
        if ok:
            print(f"all {len(self.index)} reports passed")
            return 0
        first = next(e for e in self.index if not e["pass"])
        print(f"FAIL: first failing report {first['report']} ({first['file']})", file=sys.stderr)
        return 1


# -- subcommands -----------------------------------------------------------------

def cmd_gen_measure(args, config: RunConfig) -> int:
    if args.from_csv:
        if args.n is None:
            raise ConfigError("--from-csv needs --n")
        mu = DiscreteMeasure.from_csv(args.from_csv, args.n, args.resolution)
    else:
        if args.kind is None:
            raise ConfigError("give a measure kind or --from-csv")
        mu = generate_example(_kind(args.kind), atoms=args.atoms, level=args.level, ratio=args.ratio,
                              seed=config.seed, jitter=args.jitter, mass=args.mass)
    out = Path(args.output) if args.output else Path(config.out) / f"{mu.label}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    mu.save(out)
    _print_growth(mu)
    print(f"wrote {out} ({mu.size} atoms, d={mu.dim}, n={mu.n:g})")
    return 0


def _print_growth(mu: DiscreteMeasure) -> tuple[float, dict]:
    C0 = growth_constant(mu)
    wit = doubling_violation(mu)
    print(f"growth constant C0 = {C0:.6g}")
    status = "non-doubling" if wit["violation"] else "no doubling violation found"
    print(f"doubling witness: mu(2Q)/mu(Q) = {wit['ratio']:.6g} at atom {wit['point_index']}, "
          f"side {wit['side']:.6g} (beta = {wit['beta']:g}): {status}")
    return C0, wit


def cmd_check_growth(args, config: RunConfig) -> int:
    pipe = Pipeline(config)
    C0, wit = _print_growth(pipe.mu)
    em = Emitter(config.out, pipe.meta(), plots=not args.no_plots)
    rep = VerificationReport("growth", {"C0": C0, "n": pipe.mu.n, "worst_doubling_ratio": wit["ratio"],
                                        "doubling_violation": wit["violation"]}, wit, True, {})
    em.suite(SuiteResult("growth", [rep]))
    return em.finish()


def cmd_build_lattice(args, config: RunConfig) -> int:
    pipe = Pipeline(config)
    em = Emitter(config.out, pipe.meta(), plots=not args.no_plots)
    em.suite(pipe.run("lattice"))
    path = Path(config.out) / "lattice.json"
    pipe.lattice.save(path)
    print(f"wrote {path}")
    return em.finish()


def cmd_build_aoi(args, config: RunConfig) -> int:
    pipe = Pipeline(config)
    if args.lattice:
        pipe = Pipeline(config, lattice=load_lattice(pipe.mu, args.lattice))
    aoi = pipe.aoi
    em = Emitter(config.out, pipe.meta(), plots=not args.no_plots)
    reps = [verify_identities(aoi.gens[k], min(config.tol("row_sum"), config.tol("symmetry")))
            for k in aoi.ks if k >= 1]
    em.suite(SuiteResult("aoi_build", reps))
    d = Path(config.out) / "aoi_kernels"
    d.mkdir(parents=True, exist_ok=True)
    for k in aoi.ks:
        aoi.S(k).to_csv(d / f"S_{k}.csv", k=k)
    print(f"wrote {len(aoi.ks)} kernel CSVs to {d}")
    return em.finish()


def cmd_verify(args, config: RunConfig) -> int:
    pipe = Pipeline(config)
    em = Emitter(config.out, pipe.meta(), plots=not args.no_plots)
    suites = SUITES if args.suite == "all" else (args.suite,)
    for s in suites:
        em.suite(pipe.run(s))
    return em.finish()


def _parse_f(spec: str, pipe: Pipeline) -> np.ndarray:
    mu = pipe.mu
    head, _, rest = spec.partition(":")
    if head == "constant":
        return np.full(mu.size, float(rest) if rest else 1.0)
    if head == "random":
        return np.random.default_rng(int(rest or 0)).standard_normal(mu.size)
    if head == "indicator":
        parts = rest.split(":") if rest else []
        i = int(parts[0]) if parts else 0
        _, sup = _dist(pipe.lattice)
        if len(parts) > 1:
            side = float(parts[1])
        else:
            k = pipe.lattice.first_transit()
            side = float(pipe.lattice.sides("Q", k)[i]) if k is not None else mu.diameter()
        return (sup[i] <= side / 2 * (1 + BOUNDARY_RTOL)).astype(float)
    raise ConfigError(f"unknown f spec {spec!r}; use constant[:c], random[:seed] or indicator[:atom[:side]]")


def cmd_lp_analyze(args, config: RunConfig) -> int:
    pipe = Pipeline(config)
    f = _parse_f(args.f, pipe)
    res = pipe.run("lp")
    d = pipe.decomp
    q = next(r for r in res.reports if r.lemma == "quasi_orthogonality").measured_constants
    E = d.energies(d.band_project(f[:, None]))[:, 0]
    fn = float(np.sum(d.weights * d.band_project(f) ** 2))
    r = float(E.sum() / fn) if fn > 0 else 0.0
    sq = []
    for p in (1.5, 2.0, 3.0):
        a, b = square_function_lp(d, d.band_project(f), p)
        sq.append((p, a, b, b / a if a > 0 else 0.0))
    within = bool(q["r_min"] * (1 - 1e-9) <= r <= q["r_max"] * (1 + 1e-9))
    nonzero = [int(k) for k, e in zip(d.ks, E) if e > 1e-20 * max(1.0, fn)]
    rep = VerificationReport("lp_analyze", {"f": args.f, "r": r, "recorded_r_min": q["r_min"],
                                            "recorded_r_max": q["r_max"], "r_within_recorded": within,
                                            "nonzero_energy_generations": nonzero, **d.summary()},
                             {}, True, {})
    res.reports.insert(0, rep)
    res.tables["energies"] = (["k", "energy"], [(int(k), float(e)) for k, e in zip(d.ks, E)])
    res.tables["square_function_f"] = (["p", "f_norm", "square_norm", "ratio"], sq)
    em = Emitter(config.out, pipe.meta(), plots=not args.no_plots)
    em.suite(res)
    return em.finish()


def cmd_t_one(args, config: RunConfig) -> int:
    if args.kernel == "file":
        if not args.kernel_file:
            raise ConfigError("--kernel file needs --kernel-file")
        config.kernel = {"file": args.kernel_file}
    elif args.kernel:
        config.kernel = {"kind": _CLI_KERNELS.get(args.kernel, args.kernel)}
    t1 = dict(config.t1)
    if args.rho is not None:
        t1["rho"] = args.rho
    if args.gamma is not None:
        t1["gamma"] = args.gamma
    if args.p:
        t1["p"] = args.p
    if args.eps_grid:
        t1["eps_grid"] = [float(x) for x in args.eps_grid.split(",")]
    config.t1 = t1
    pipe = Pipeline(config)
    em = Emitter(config.out, pipe.meta(), plots=not args.no_plots)
    res = pipe.run("t1")
    em.suite(res)
    code = em.finish()
    if args.report:
        blob = {**pipe.meta(), "pass": code == 0, "reports": [r.to_dict() for r in res.reports]}
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(json.dumps(stable(blob), sort_keys=True, indent=2) + "\n")
    return code


# -- parser ------------------------------------------------------------------------

def _globals(p: argparse.ArgumentParser, top: bool) -> None:
    d = None if top else argparse.SUPPRESS
    p.add_argument("--config", default=d, help="JSON RunConfig file")
    p.add_argument("--out", default=d, help="output directory")
    p.add_argument("--seed", type=int, default=d)
    p.add_argument("--threads", type=int, default=d, help="BLAS thread limit")
    p.add_argument("--no-plots", action="store_true", default=False if top else argparse.SUPPRESS,
                   help="skip PNG rendering of CSV tables")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nhlp", description=__doc__)
    _globals(parser, True)
    common = argparse.ArgumentParser(add_help=False)
    _globals(common, False)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-measure", parents=[common], help="write a measure file")
    g.add_argument("kind", nargs="?", help="uniform-interval, uniform-square, cantor, comb, lipschitz-graph")
    g.add_argument("--atoms", type=int)
    g.add_argument("--level", "--levels", dest="level", type=int)
    g.add_argument("--ratio", type=float, default=0.25)
    g.add_argument("--jitter", type=float, default=0.0)
    g.add_argument("--mass", type=float, default=1.0)
    g.add_argument("--from-csv", help="import atoms from CSV rows x1..xd,w")
    g.add_argument("--n", type=float, help="growth exponent for CSV import")
    g.add_argument("--resolution", type=float, help="resolution for CSV import")
    g.add_argument("-o", "--output", help="output file (default OUT/<label>.json)")
    g.set_defaults(func=cmd_gen_measure)

    def with_measure(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--measure", help="measure file or reference measure name")
        p.set_defaults(func=func)
        return p

    with_measure("check-growth", cmd_check_growth, "growth constant and doubling witness")
    with_measure("build-lattice", cmd_build_lattice, "auto-tuned generation lattice")
    p = with_measure("build-aoi", cmd_build_aoi, "approximation-of-identity kernels")
    p.add_argument("--lattice", help="lattice JSON written by build-lattice")
    p = with_measure("verify", cmd_verify, "run verification suites")
    p.add_argument("--suite", choices=SUITES + ("all",), default="all")
    p.add_argument("--kernel", choices=sorted(set(_CLI_KERNELS) | set(KERNEL_KINDS)))
    p = with_measure("lp-analyze", cmd_lp_analyze, "energies and square functions of one function")
    p.add_argument("--f", default="random:0", help="constant[:c], random[:seed] or indicator[:atom[:side]]")
    p = with_measure("t-one", cmd_t_one, "T(1) battery for one kernel")
    p.add_argument("--kernel", choices=sorted(_CLI_KERNELS) + ["file"], default="cauchy-re")
    p.add_argument("--kernel-file", help="JSON kernel spec for --kernel file")
    p.add_argument("--rho", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--p", type=float, action="append")
    p.add_argument("--eps-grid", help="comma-separated truncation scales")
    p.add_argument("--report", help="combined JSON report path")
    return parser


def _config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    if args.out is not None:
        config.out = args.out
    if args.seed is not None:
        config.seed = args.seed
    if args.threads is not None:
        config.threads = args.threads
    if getattr(args, "measure", None):
        config.measure = _measure_spec(args.measure)
    kernel = getattr(args, "kernel", None)
    if args.command == "verify" and kernel:
        config.kernel = {"kind": _CLI_KERNELS.get(kernel, kernel)}
    return config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config(args)
        if config.threads:
            ctx = threadpool_limits(limits=config.threads)
        else:
            ctx = nullcontext()
        with ctx:
            return args.func(args, config)
    except (ConfigError, MeasureError, LatticeError, CZOError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GeometryError, AOIError, LPError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
