import csv
import json
import textwrap

import numpy as np
import pytest

from abcmle.cli import emit_plotdata, main, observed_source, simulate_until
from abcmle.config import bundled_configs, load_config_text, parse_config, reference_doc
from abcmle.core import RngSeed
from abcmle.errors import ConfigError, EstimationFailure
from abcmle.models import BinomialModel

MINIMAL = """
model: {name: binomial}
data:
  generate: {theta: {p: 0.5}, seed: 3}
prior: {p: [0, 1]}
abc: {epsilon: 0.1}
"""

SMALL_RUN = """
model: {name: binomial, n: 30}
data:
  generate:
    theta: {p: 0.5}
    seed: 2013
    require: {statistic: [5.53], tol: 0.1}
prior: {p: [0, 1]}
abc: {epsilon: [0.5, 0.2], m: 300}
kde: {surface_points: 11}
replicates: 3
seed: 4
"""


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def errors_of(text, tmp_path=None):
    with pytest.raises(ConfigError) as info:
        load_config_text(textwrap.dedent(text), tmp_path / "c.yaml" if tmp_path else None)
    return info.value.errors


class TestConfig:
    def test_minimal_defaults(self):
        cfg = load_config_text(MINIMAL)
        assert cfg.abc.m_target == 10_000 and cfg.replicates == 1
        assert cfg.abc.max_proposals == 10_000_000
        assert cfg.epsilons == (0.1,)

    def test_negative_tolerance_named(self):
        errs = errors_of(MINIMAL.replace("epsilon: 0.1", "epsilon: [-0.1]"))
        assert any("abc.epsilon" in e for e in errs)

    def test_unknown_keys_named(self):
        errs = errors_of(MINIMAL + "colour: blue\n")
        assert any("colour" in e and "unknown key" in e for e in errs)
        errs = errors_of(MINIMAL.replace("abc: {epsilon: 0.1}", "abc: {epsilon: 0.1, mm: 3}"))
        assert any("abc.mm" in e for e in errs)

    def test_all_errors_reported_together(self):
        text = """
        model: {name: binomial, n: -3}
        data:
          generate: {theta: {p: 0.5}}
        prior: {p: [1, 0]}
        abc: {epsilon: -1, m: 0}
        replicates: 0
        """
        errs = errors_of(text)
        for key in ("model.n", "prior.p", "abc.epsilon", "abc.m", "replicates"):
            assert any(key in e for e in errs), key

    def test_missing_required(self):
        errs = errors_of("model: {name: binomial}\n")
        joined = " ".join(errs)
        assert "prior" in joined and "abc" in joined and "data" in joined

    def test_exactly_one_data_source(self, tmp_path):
        (tmp_path / "d.csv").write_text("5\n6\n")
        text = MINIMAL.replace("data:\n", "data:\n  file: d.csv\n")
        errs = errors_of(text, tmp_path)
        assert any(e.startswith("data") for e in errs)
        errs = errors_of(MINIMAL.replace("data:\n  generate: {theta: {p: 0.5}, seed: 3}\n", "data: {}\n"))
        assert any(e.startswith("data") for e in errs)

    def test_missing_file(self, tmp_path):
        text = MINIMAL.replace("data:\n  generate: {theta: {p: 0.5}, seed: 3}\n", "data: {file: nope.csv}\n")
        errs = errors_of(text, tmp_path)
        assert any("data.file" in e for e in errs)

    def test_bundled_configs_validate(self):
        names = bundled_configs()
        assert {"binomial_basic", "binomial_fig2", "normal", "stable", "superposed_table1",
                "superposed_table1_8stats", "superposed_table2", "locscale"} <= set(names)
        for n in names:
            cfg = parse_config(n)
            assert cfg.replicates >= 1
            text = cfg.path.read_text()
            assert text.startswith("#")

    def test_fig2_tolerances(self):
        cfg = parse_config("binomial_fig2")
        expect = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.01]
        np.testing.assert_allclose(sorted(cfg.epsilons, reverse=True), expect)

    def test_yaml_syntax_error(self):
        errs = errors_of("model: [unclosed\n")
        assert errs and "YAML" in errs[0]

    def test_reference_doc_lists_keys(self):
        doc = reference_doc()
        for key in ("`abc`", "`epsilon`", "`max_proposals`", "`superposed`", "`skewness`"):
            assert key in doc


class TestData:
    def test_simulate_until(self):
        m = BinomialModel()
        data = simulate_until(m, [0.5], {"statistic": [5.53], "tol": 0.1}, RngSeed(1).generator(), 10_000)
        assert abs(m.statistic(data)[0] - 5.53) <= 0.1
        with pytest.raises(EstimationFailure):
            simulate_until(m, [0.01], {"statistic": [9.0], "tol": 0.01}, RngSeed(1).generator(), 5)

    def test_fresh_source_is_callable(self):
        cfg = load_config_text(MINIMAL.replace("seed: 3}", "seed: 3}\n  fresh: true"))
        data, obs = observed_source(cfg)
        assert data is None and callable(obs)
        assert obs(RngSeed(1).generator()).shape == (1,)


class TestRun:
    def test_byte_identical_reruns(self, tmp_path):
        cfg = write(tmp_path, SMALL_RUN)
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        assert main(["run", str(cfg), "--out-dir", str(a)]) == 0
        assert main(["run", str(cfg), "--out-dir", str(b)]) == 0
        assert main(["run", str(cfg), "--out-dir", str(c), "--threads", "2"]) == 0
        files = sorted(p.name for p in a.iterdir())
        assert files == sorted(p.name for p in b.iterdir())
        for name in files:
            assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes(), name
        assert {"data.csv", "manifest.json", "study_eps0.5_m300.csv", "study_eps0.2_m300.csv",
                "study_summary_m300.json", "surface_eps0.5_m300.csv"} <= set(files)
        manifest = json.loads((a / "manifest.json").read_text())
        assert manifest["complete"] is True
        assert {x["path"] for x in manifest["artifacts"]} == set(files) - {"manifest.json"}

    def test_seed_override_changes_output(self, tmp_path):
        cfg = write(tmp_path, SMALL_RUN)
        main(["run", str(cfg), "--out-dir", str(tmp_path / "a")])
        main(["run", str(cfg), "--out-dir", str(tmp_path / "b"), "--seed", "99"])
        name = "study_eps0.2_m300.csv"
        assert (tmp_path / "a" / name).read_bytes() != (tmp_path / "b" / name).read_bytes()

    def test_all_failed_exit_code(self, tmp_path):
        text = SMALL_RUN.replace("epsilon: [0.5, 0.2], m: 300", "epsilon: 0.0001, m: 300, max_proposals: 1000")
        cfg = write(tmp_path, text)
        assert main(["run", str(cfg), "--out-dir", str(tmp_path / "o")]) == 3
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert manifest["complete"] is False

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = write(tmp_path, MINIMAL.replace("epsilon: 0.1", "epsilon: [-0.1]"))
        assert main(["validate", str(cfg)]) == 2
        assert "abc.epsilon" in capsys.readouterr().err
        ok = write(tmp_path, MINIMAL, "ok.yaml")
        assert main(["validate", str(ok)]) == 0
        assert main(["run", str(ok), "--max-proposals", "5"]) == 2
        assert main(["validate", str(tmp_path / "missing.yaml")]) == 2

    def test_surface_verb(self, tmp_path):
        text = SMALL_RUN + "curve:\n  grid: {p: [0.5, 0.6, 3]}\n  epsilon: [0.5]\n  n_sims: 2000\n"
        cfg = write(tmp_path, text)
        assert main(["surface", str(cfg), "--out-dir", str(tmp_path / "s")]) == 0
        rows = list(csv.DictReader((tmp_path / "s" / "curve_eps0.5_n2000.csv").open()))
        assert [float(r["p"]) for r in rows] == [0.5, 0.55, 0.6]
        assert sum(float(r["normalized"]) for r in rows) == pytest.approx(1.0)

    def test_config_reference_verb(self, capsys):
        assert main(["config-reference"]) == 0
        assert "# Experiment config reference" in capsys.readouterr().out


def study_csv(path, rows, names=("p",)):
    header = ["replicate", "seed", "config", "epsilon", *names, "density_at_mode", "acceptance_rate",
              "proposals", "status"]
    lines = [",".join(header)]
    for i, (eps, vals, status) in enumerate(rows):
        lines.append(",".join([str(i), "1:0/11/0", "h", repr(eps), *map(repr, vals), "1.0", "0.5", "10", status]))
    path.write_text("\n".join(lines) + "\n")
    return path


class TestPlotData:
    def test_single_replicate(self, tmp_path):
        rows = emit_plotdata([study_csv(tmp_path / "s.csv", [(0.1, [0.55], "ok")])])
        assert rows == [("p", 0.1, 1, 0.55, 0.55, 0.55, 0.55, 0.55)]

    def test_two_replicates_median(self, tmp_path):
        rows = emit_plotdata([study_csv(tmp_path / "s.csv", [(0.1, [0.5], "ok"), (0.1, [0.6], "ok")])])
        assert rows[0][5] == pytest.approx(0.55)

    def test_groups_in_descending_tolerance(self, tmp_path):
        a = study_csv(tmp_path / "a.csv", [(0.05, [0.55], "ok")])
        b = study_csv(tmp_path / "b.csv", [(1.0, [0.5], "ok"), (0.5, [0.52], "ok")])
        rows = emit_plotdata([a, b])
        assert [r[1] for r in rows] == [1.0, 0.5, 0.05]

    def test_failed_rows_skipped(self, tmp_path):
        p = tmp_path / "s.csv"
        study_csv(p, [(0.1, [0.55], "ok")])
        with p.open("a") as fh:
            fh.write("1,1:0/11/1,h,0.1,,,,,failed: budget exhausted with 3 draws\n")
        assert emit_plotdata([p])[0][2] == 1

    def test_malformed_rows_reported_with_lines(self, tmp_path, capsys):
        p = study_csv(tmp_path / "s.csv", [(0.1, [0.55], "ok")])
        with p.open("a") as fh:
            fh.write("1,2,3\n")
            fh.write("2,s,h,0.1,abc,1,1,1,ok\n")
        assert main(["plotdata", str(p)]) == 2
        err = capsys.readouterr().err
        assert "s.csv:3" in err and "s.csv:4" in err

    def test_cli_output_file(self, tmp_path):
        p = study_csv(tmp_path / "s.csv", [(0.1, [0.5], "ok"), (0.1, [0.6], "ok")])
        out = tmp_path / "plot.csv"
        assert main(["plotdata", str(p), "-o", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "parameter,epsilon,n,min,q1,median,q3,max"
        assert lines[1].startswith("p,0.1,2,0.5,")

    def test_multi_parameter_order(self, tmp_path):
        p = study_csv(tmp_path / "s.csv", [(0.2, [0.1, 1.0], "ok")], names=("mu", "sigma"))
        assert [r[0] for r in emit_plotdata([p])] == ["mu", "sigma"]
