import csv
import json
from pathlib import Path

import numpy as np
import pytest

from trimquad.cli import RunConfig, main, run_convergence, run_mass_table, run_timings


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


class TestRunConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            RunConfig(case="sphere")
        with pytest.raises(ValueError):
            RunConfig(degrees=[0])
        with pytest.raises(ValueError):
            RunConfig(degrees=[7])
        with pytest.raises(ValueError):
            RunConfig(meshes=[])

    def test_strategy_expansion(self):
        cfg = RunConfig()
        assert cfg.strategies("mass") == ("reference", "wq", "hybrid", "dwq")
        assert cfg.strategies("converge") == ("reference", "hybrid", "dwq")
        cfg = RunConfig(strategy="hybrid")
        assert cfg.strategies("time") == ("hybrid",)


class TestMassCommand:
    def test_table_contents(self, tmp_path):
        rc = main([
            "mass", "--case", "line", "--degrees", "1..2", "--meshes", "8",
            "--out", str(tmp_path),
        ])
        assert rc == 0
        header, rows = read_csv(tmp_path / "mass_line_n8.csv")
        assert header[:4] == [
            "degree", "hybrid_gauss", "disc_weighted_quadrature",
            "weighted_quadrature",
        ]
        for row in rows:
            rel_h = float(row[4])
            rel_d = float(row[5])
            wq_abs = float(row[3])
            assert rel_h <= 1e-12 and rel_d <= 1e-12
            assert 1e-6 <= wq_abs <= 1e-2

    def test_dumps(self, tmp_path):
        main([
            "mass", "--case", "line", "--degrees", "2", "--meshes", "6",
            "--out", str(tmp_path),
            "--dump-rules", str(tmp_path / "rules.json"),
            "--dump-cutcells", str(tmp_path / "cut.csv"),
        ])
        rules = json.loads((tmp_path / "rules.json").read_text())
        assert {r["direction"] for r in rules} == {0, 1}
        assert all(len(r["rows"]) > 0 and len(r["points"]) > 0 for r in rules)
        header, rows = read_csv(tmp_path / "cut.csv")
        assert header == ["u1", "u2", "weight"]
        assert all(float(r[2]) > 0 for r in rows)

    def test_deterministic_output(self, tmp_path):
        args = ["mass", "--case", "circle", "--degrees", "1,2", "--meshes", "6"]
        main(args + ["--out", str(tmp_path / "a")])
        main(args + ["--out", str(tmp_path / "b")])
        a = (tmp_path / "a" / "mass_circle_n6.csv").read_bytes()
        b = (tmp_path / "b" / "mass_circle_n6.csv").read_bytes()
        assert a == b


class TestConvergeCommand:
    def test_records_and_summary(self, tmp_path):
        main([
            "converge", "--case", "line", "--degrees", "1", "--meshes", "5,10,20",
            "--out", str(tmp_path),
        ])
        header, rows = read_csv(tmp_path / "convergence_line.csv")
        assert header == ["case", "strategy", "p", "h", "dofs", "l2_rel", "rate"]
        strategies = {row[1] for row in rows}
        assert strategies == {"reference", "hybrid", "dwq"}
        sheader, srows = read_csv(tmp_path / "convergence_line_summary.csv")
        assert sheader == ["case", "strategy", "p", "observed_rate", "rate_check",
                           "ref_agreement"]
        for row in srows:
            assert row[4] == "PASS"
            assert float(row[5]) <= 1e-10

    def test_json_config_with_custom_knots(self, tmp_path):
        # explicit knot vectors override the uniform mesh in run configs
        knots = {"degree": 2, "knots": [0, 0, 0, 0.2, 0.55, 0.55, 0.8, 1, 1, 1]}
        config = {
            "case": "line", "strategy": "hybrid", "degrees": [2], "meshes": [7],
            "out": str(tmp_path), "knots1": knots, "knots2": knots,
        }
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(config))
        rc = main(["mass", "--config", str(cfg_path)])
        assert rc == 0
        header, rows = read_csv(tmp_path / "mass_line_n7.csv")
        assert len(rows) == 1
        assert float(rows[0][4]) <= 1e-12  # hybrid still matches reference


class TestTimeCommand:
    def test_report_columns(self, tmp_path):
        main([
            "time", "--case", "line", "--degrees", "2", "--meshes", "5",
            "--out", str(tmp_path),
        ])
        header, rows = read_csv(tmp_path / "timings_line_n5.csv")
        assert header[:9] == ["strategy", "case", "p", "h", "t_weights",
                              "t_interior", "t_cutRegular", "t_cutElements",
                              "t_total"]
        by_strategy = {r[0]: r for r in rows}
        assert set(by_strategy) == {"reference", "hybrid", "dwq"}
        ref = by_strategy["reference"]
        assert float(ref[4]) <= 1e-3  # no weighted rules to set up
        for r in rows:
            assert all(float(v) >= 0 for v in r[4:9])
