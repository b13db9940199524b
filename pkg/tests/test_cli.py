import json

import numpy as np
import pytest

from nhlp.cli import main
from nhlp.measure import DiscreteMeasure


@pytest.fixture(scope="module")
def comb_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("measure")
    assert main(["gen-measure", "comb", "--levels", "3", "-o", str(d / "comb.json")]) == 0
    return d / "comb.json"


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestGenMeasure:
    def test_uniform_interval(self, tmp_path, capsys):
        out = tmp_path / "u.json"
        assert main(["gen-measure", "uniform-interval", "--atoms", "200", "-o", str(out)]) == 0
        mu = DiscreteMeasure.load(out)
        assert mu.size == 200 and mu.n == 1.0
        assert "growth constant C0" in capsys.readouterr().out

    def test_comb_non_doubling(self, tmp_path, capsys):
        assert main(["gen-measure", "comb", "--levels", "6", "--out", str(tmp_path)]) == 0
        assert "non-doubling" in capsys.readouterr().out

    def test_cantor_level(self, tmp_path):
        out = tmp_path / "c.json"
        assert main(["gen-measure", "cantor", "--level", "4", "-o", str(out)]) == 0
        assert DiscreteMeasure.load(out).size == 256

    def test_csv_import(self, tmp_path):
        src = tmp_path / "pts.csv"
        src.write_text("x,w\n0,1\n1,1\n3,2\n")
        out = tmp_path / "m.json"
        assert main(["gen-measure", "--from-csv", str(src), "--n", "1", "-o", str(out)]) == 0
        assert DiscreteMeasure.load(out).total_mass == 4.0

    def test_csv_needs_n(self, tmp_path, capsys):
        src = tmp_path / "pts.csv"
        src.write_text("x,w\n0,1\n1,1\n")
        assert main(["gen-measure", "--from-csv", str(src)]) == 2
        assert "--n" in capsys.readouterr().err


class TestErrors:
    def test_missing_measure_file(self, tmp_path):
        assert main(["check-growth", "--measure", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"lattice": {"multipliers": [10, 10, 10]}, "bogus": 1}))
        assert main(["verify", "--config", str(cfg), "--out", str(tmp_path)]) == 2
        assert "bogus" in capsys.readouterr().err

    def test_small_multiplier_rejected(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"lattice": {"multipliers": [3, 10, 10]}}))
        assert main(["verify", "--config", str(cfg), "--out", str(tmp_path)]) == 2

    def test_loosened_exact_tolerance_rejected(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"tolerances": {"row_sum": 1e-3}}))
        assert main(["verify", "--config", str(cfg), "--out", str(tmp_path)]) == 2

    def test_bad_f_spec(self, comb_file, tmp_path):
        assert main(["lp-analyze", "--measure", str(comb_file), "--f", "wavelet", "--out", str(tmp_path)]) == 2

    def test_mismatched_lattice(self, comb_file, tmp_path):
        assert main(["build-lattice", "--measure", str(comb_file), "--out", str(tmp_path), "--no-plots"]) in (0, 1)
        other = tmp_path / "other.json"
        assert main(["gen-measure", "uniform-interval", "--atoms", "30", "-o", str(other)]) == 0
        assert main(["build-aoi", "--measure", str(other), "--lattice", str(tmp_path / "lattice.json"),
                     "--out", str(tmp_path / "aoi")]) == 2


class TestPipelineCommands:
    def test_build_lattice_and_aoi(self, comb_file, tmp_path):
        main(["build-lattice", "--measure", str(comb_file), "--out", str(tmp_path), "--no-plots"])
        lat = json.loads((tmp_path / "lattice.json").read_text())
        assert lat["entries"]
        code = main(["build-aoi", "--measure", str(comb_file), "--lattice", str(tmp_path / "lattice.json"),
                     "--out", str(tmp_path / "aoi"), "--no-plots"])
        assert code == 0
        csvs = sorted((tmp_path / "aoi" / "aoi_kernels").glob("S_*.csv"))
        assert csvs
        K = np.loadtxt(csvs[-1], delimiter=",")
        np.testing.assert_allclose(K, K.T, atol=1e-12)

    def test_verify_writes_reports_and_exit_code(self, comb_file, tmp_path):
        code = main(["verify", "--measure", str(comb_file), "--suite", "lp", "--out", str(tmp_path)])
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert code == (0 if summary["pass"] else 1)
        for e in summary["reports"]:
            rep = json.loads((tmp_path / e["file"]).read_text())
            assert {"lemma", "measured_constants", "worst_witness", "pass", "config_hash", "seed"} <= set(rep)
        assert (tmp_path / "lp" / "decay_curve.csv").exists()
        assert (tmp_path / "lp" / "decay_curve.png").exists()

    def test_failing_report_named(self, comb_file, tmp_path, capsys):
        code = main(["verify", "--measure", str(comb_file), "--suite", "lattice", "--out", str(tmp_path),
                     "--no-plots"])
        summary = json.loads((tmp_path / "summary.json").read_text())
        err = capsys.readouterr().err
        if summary["pass"]:
            assert code == 0
        else:
            first = next(e for e in summary["reports"] if not e["pass"])
            assert code == 1 and first["report"] in err

    def test_byte_stable_reruns(self, comb_file, tmp_path):
        for name in ("a", "b"):
            main(["verify", "--measure", str(comb_file), "--suite", "aoi", "--out", str(tmp_path / name)])
        a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
        assert a.keys() == b.keys() and a == b

    @pytest.mark.parametrize("spec", ["constant", "constant:2.5", "random:7", "indicator:3"])
    def test_lp_analyze(self, comb_file, tmp_path, spec):
        main(["lp-analyze", "--measure", str(comb_file), "--f", spec, "--out", str(tmp_path), "--no-plots"])
        rep = json.loads((tmp_path / "lp" / "lp_analyze.json").read_text())["measured_constants"]
        assert rep["f"] == spec
        if spec.startswith("constant"):
            assert len(rep["nonzero_energy_generations"]) <= 1
        if spec.startswith("random"):
            assert rep["r_within_recorded"]

    def test_t_one_report(self, comb_file, tmp_path):
        report = tmp_path / "t1.json"
        code = main(["t-one", "--measure", str(comb_file), "--kernel", "cauchy-re", "--eps-grid", "0.03,0.06,0.12",
                     "--out", str(tmp_path), "--report", str(report), "--no-plots"])
        blob = json.loads(report.read_text())
        assert blob["pass"] == (code == 0)
        names = [r["lemma"] for r in blob["reports"]]
        assert any(n.startswith("t1_battery") for n in names)

    def test_t_one_kernel_file(self, comb_file, tmp_path):
        kf = tmp_path / "k.json"
        kf.write_text(json.dumps({"kind": "abs_power", "n": 1.0}))
        code = main(["t-one", "--measure", str(comb_file), "--kernel", "file", "--kernel-file", str(kf),
                     "--eps-grid", "0.03,0.06", "--out", str(tmp_path), "--no-plots"])
        assert code in (0, 1)
        assert (tmp_path / "summary.json").exists()
