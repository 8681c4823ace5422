import json

import numpy as np
import pytest

from countqr.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main
from countqr.config import RunConfig, load_config
from countqr.dataio import Dataset, ingest_csv, summary_table, write_dataset_csv
from countqr.errors import ConfigError, DataError
from countqr.pipeline import MANIFEST, RunManifest, curve_file, quantile_file, report
from countqr.quantiles import QuantileDrawMatrix
from countqr.regression import read_curves_csv

SMALL = ["--burn-in", "20", "--iterations", "40", "--thin", "4", "--chains", "1", "--M", "2",
         "--spline-knots", "5", "--grid-points", "25", "--taus", "0.1,0.5,0.9",
         "--discount", "0.2", "--strength", "1.0"]


def small_run(out, seed=1, n=60):
    return main(["run", "--setting", "2", "--n", str(n), "--seed", str(seed), "-o", str(out), *SMALL])


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert small_run(out) == EXIT_OK
    return out


class TestConfig:
    def test_round_trip(self):
        cfg = RunConfig(taus=[0.25, 0.75], seed=9, discount=0.3, strength=1.5, smoothing=0.2)
        assert RunConfig.loads(cfg.dumps()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            RunConfig.from_dict({"tau": [0.5]})

    @pytest.mark.parametrize("kw", [dict(taus=[1.0]), dict(taus=[]), dict(thin=0), dict(discount=0.2),
                                    dict(discount=0.5, strength=-0.6), dict(mode="fast"), dict(n=5),
                                    dict(burn_in=1.5), dict(exclude_rows=[0])])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            RunConfig(**kw)

    def test_precedence(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 4, "thin": 5, "taus": [0.3]}))
        cfg = load_config(path, {"seed": 7, "thin": None})
        assert (cfg.seed, cfg.thin, cfg.taus, cfg.iterations) == (7, 5, [0.3], RunConfig().iterations)

    def test_bad_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_config(path)
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")


class TestIngest:
    def write(self, path, text):
        path.write_text(text)
        return path

    def test_fractional_count_names_row(self, tmp_path):
        # data rows are numbered from 1, as for --exclude-rows
        p = self.write(tmp_path / "d.csv", "y,x\n1,0.5\n3.5,1.0\n2,2.0\n")
        with pytest.raises(DataError, match="row 2"):
            ingest_csv(p)

    def test_negative_and_nonnumeric(self, tmp_path):
        p = self.write(tmp_path / "d.csv", "y,x\n1,0.5\n-1,1.0\n")
        with pytest.raises(DataError, match="row 2"):
            ingest_csv(p)
        p = self.write(tmp_path / "e.csv", "y,x\n1,0.5\n2,abc\n")
        with pytest.raises(DataError, match="non-numeric"):
            ingest_csv(p)

    def test_missing_column(self, tmp_path):
        p = self.write(tmp_path / "d.csv", "count,x\n1,0.5\n2,1.0\n")
        with pytest.raises(DataError, match="response column"):
            ingest_csv(p)
        with pytest.raises(DataError, match="not found"):
            ingest_csv(p, response="count", covariates=["z"])

    def test_five_covariates(self, tmp_path):
        rng = np.random.default_rng(0)
        names = ["age", "hr", "sysbp", "diasbp", "bmi"]
        lines = ["los," + ",".join(names)]
        for _ in range(30):
            lines.append(",".join([str(rng.integers(1, 20))] + [f"{v:.3f}" for v in rng.normal(50, 10, 5)]))
        p = self.write(tmp_path / "w.csv", "\n".join(lines) + "\n")
        data = ingest_csv(p, response="los")
        assert data.p == 5 and data.n == 30 and data.column_names == names
        assert ingest_csv(p, response="los", covariates=["bmi", "age"]).column_names == ["bmi", "age"]

    def test_exclude_rows(self, tmp_path):
        p = self.write(tmp_path / "d.csv", "y,x\n1,0.5\n7,1.0\n2,2.0\n")
        data = ingest_csv(p, exclude_rows=[2])
        np.testing.assert_array_equal(data.y, [1, 2])

    def test_csv_fixpoint(self, tmp_path):
        data = Dataset(np.array([0, 3, 1]), np.array([[0.1, 1 / 3], [2.5, -1e-9], [np.pi, 7.0]]), ["a", "b"])
        write_dataset_csv(tmp_path / "a.csv", data)
        back = ingest_csv(tmp_path / "a.csv")
        np.testing.assert_array_equal(back.X, data.X)
        np.testing.assert_array_equal(back.y, data.y)
        write_dataset_csv(tmp_path / "b.csv", back)
        assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()

    def test_summary_command(self, tmp_path, capsys):
        p = self.write(tmp_path / "d.csv", "y,x\n1,0.0\n3,2.0\n")
        assert main(["summary", "--input", str(p)]) == EXIT_OK
        out = capsys.readouterr().out.splitlines()
        assert out[0].split() == ["Variable", "Mean", "SD"]
        assert out[1].split() == ["y", "2.000", "1.414"]
        assert summary_table(ingest_csv(p))[1] == ("x", 1.0, pytest.approx(np.sqrt(2)))


class TestPipeline:
    def test_run_outputs(self, run_dir):
        m = RunManifest.load(run_dir)
        assert m.status == "complete"
        assert set(m.stages) == {"simulate", "fit", "quantile", "regress"}
        for tau in (0.1, 0.5, 0.9):
            assert (run_dir / curve_file(tau)).exists()
            curves = read_curves_csv(run_dir / curve_file(tau))
            assert len(curves) == 1 and curves[0].grid.size == 25
        assert set(m.versions) >= {"countqr", "numpy", "scipy", "python"}

    def test_curves_do_not_cross_on_average(self, run_dir):
        means = [read_curves_csv(run_dir / curve_file(t))[0].mean for t in (0.1, 0.5, 0.9)]
        assert np.mean(np.diff(means, axis=0) > 0) > 0.9

    def test_quantile_csv_fixpoint(self, run_dir, tmp_path):
        mat = QuantileDrawMatrix.from_csv(run_dir / quantile_file(0.5))
        assert mat.values.shape == (10, 60)
        mat.to_csv(tmp_path / "q.csv")
        assert (tmp_path / "q.csv").read_text() == (run_dir / quantile_file(0.5)).read_text()

    def test_same_seed_same_checksums(self, run_dir, tmp_path):
        assert small_run(tmp_path) == EXIT_OK
        assert RunManifest.load(tmp_path).checksums == RunManifest.load(run_dir).checksums

    def test_different_seed_differs(self, run_dir, tmp_path):
        assert small_run(tmp_path, seed=2) == EXIT_OK
        a, b = RunManifest.load(tmp_path).checksums, RunManifest.load(run_dir).checksums
        assert a["draws.json"] != b["draws.json"]

    def test_compare_and_report(self, run_dir, capsys):
        for method in ("continuous-poisson", "jittering"):
            assert main(["compare", "-o", str(run_dir), "--baseline", method, "--n-jitters", "3", *SMALL]) == EXIT_OK
            rows = json.loads((run_dir / "comparison.json").read_text())
            assert [r["tau"] for r in rows] == [0.1, 0.5, 0.9]
            assert all(r["method"] == method and r["relative_ise"] > 0 for r in rows)
        capsys.readouterr()
        assert main(["report", "-o", str(run_dir)]) == EXIT_OK
        text = capsys.readouterr().out
        assert text.startswith("status: complete")
        assert "posterior number of clusters: mean" in text and "relative ISE" in text
        doc = report(run_dir)
        assert doc["cluster_count"]["draws"] == 10 and not doc["missing_artifacts"]

    def test_partial_manifest_on_failure(self, tmp_path, capsys):
        args = ["--setting", "2", "--n", "40", "-o", str(tmp_path), *SMALL]
        assert main(["simulate", *args]) == EXIT_OK
        assert main(["fit", *args]) == EXIT_OK
        before = RunManifest.load(tmp_path).checksums
        assert main(["regress", *args]) == EXIT_IO
        assert "regress" in capsys.readouterr().err
        m = RunManifest.load(tmp_path)
        assert m.status == "partial" and m.stages["regress"]["status"] == "failed"
        assert "error" in m.stages["regress"]
        assert m.checksums == before
        # recovery: the missing stage, then the failed one
        assert main(["quantile", *args]) == EXIT_OK
        assert main(["regress", *args]) == EXIT_OK
        assert RunManifest.load(tmp_path).status == "complete"

    def test_prior_only_report(self, tmp_path, capsys):
        args = ["-o", str(tmp_path), "--setting", "2", "--n", "30", "--prior-only", "--discount", "0.2",
                "--strength", "1.0", "--burn-in", "10", "--iterations", "100", "--thin", "5", "--chains", "1"]
        assert main(["simulate", *args]) == EXIT_OK
        assert main(["fit", *args]) == EXIT_OK
        capsys.readouterr()
        assert main(["report", *args]) == EXIT_OK
        assert "prior number of clusters: mean" in capsys.readouterr().out


class TestExitCodes:
    def test_config_error(self, tmp_path):
        assert main(["run", "--setting", "2", "--taus", "1.5", "-o", str(tmp_path)]) == EXIT_CONFIG

    def test_unknown_config_key(self, tmp_path):
        (tmp_path / "c.json").write_text('{"taus": [0.5], "colour": 1}')
        assert main(["run", "--config", str(tmp_path / "c.json"), "-o", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_input(self, tmp_path, capsys):
        code = main(["fit", "--input", str(tmp_path / "nope.csv"), "-o", str(tmp_path / "out")])
        assert code == EXIT_IO
        assert capsys.readouterr().err.startswith("countqr: error:")

    def test_numeric_failure(self, tmp_path):
        # the alternative latent variance goes negative on this data
        args = ["-o", str(tmp_path), "--setting", "2", "--n", "60", "--paper-latent", *SMALL]
        assert main(["simulate", *args]) == EXIT_OK
        assert main(["fit", *args]) == EXIT_NUMERIC
        assert RunManifest.load(tmp_path).status == "partial"

    def test_report_without_manifest(self, tmp_path):
        assert main(["report", "-o", str(tmp_path)]) == EXIT_IO
        (tmp_path / MANIFEST).write_text("{}")
        assert main(["report", "-o", str(tmp_path)]) == EXIT_IO

    def test_simulate_without_setting(self, tmp_path):
        assert main(["simulate", "-o", str(tmp_path)]) == EXIT_CONFIG
