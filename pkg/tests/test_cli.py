"""Command-line surface: layering, exit codes, and output documents."""

import json

import pytest

from contestlab.cli import main

MARKET = """\
time,contestant,prob
0,alpha,0.50
0,beta,0.30
0,gamma,0.20
1,alpha,0.10
1,beta,0.60
1,gamma,0.30
2,alpha,0.30
2,beta,0.20
2,gamma,0.50
3,alpha,0.05
3,beta,0.05
3,gamma,0.90
4,alpha,0.00
4,beta,0.00
4,gamma,1.00
"""


def run_json(tmp_path, argv, name="out.json"):
    out = tmp_path / name
    code = main(argv + ["--out", str(out)])
    assert code == 0
    return json.loads(out.read_text())


class TestExitCodes:
    def test_unknown_flag_is_validation_error(self, capsys):
        assert main(["simulate", "--bogus"]) == 2
        assert "usage:" in capsys.readouterr().err

    def test_missing_subcommand(self, capsys):
        assert main([]) == 2

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "simulate" in capsys.readouterr().out

    def test_missing_input_file(self, capsys):
        assert main(["analyze", "--csv", "/nonexistent/market.csv"]) == 2
        assert "file not found" in capsys.readouterr().err

    def test_invalid_threshold_pair(self, capsys):
        assert main(["bounds", "--a", "0.5", "--b", "0.2"]) == 2

    def test_bounds_requires_pair(self, capsys):
        assert main(["bounds"]) == 2

    def test_malformed_market_csv(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("time,contestant,prob\n0,x,1.5\n")
        assert main(["analyze", "--csv", str(path)]) == 2
        assert "outside [0, 1]" in capsys.readouterr().err

    def test_runtime_failure_is_exit_three(self, tmp_path, capsys):
        # every run truncates at a two-step cap: nothing left to estimate
        code = main([
            "wf", "--k", "3", "--h", "1e-3", "--a", "0.2", "--b", "0.4",
            "--runs", "4", "--max-time", "2e-3",
            "--out", str(tmp_path / "wf.json"),
        ])
        assert code == 3
        assert "truncated" in capsys.readouterr().err


class TestBounds:
    def test_reference_pair_document(self, tmp_path):
        doc = run_json(tmp_path, ["bounds", "--a", "0.1", "--b", "0.25"])
        assert doc["mean_Nb"] == 4.0
        assert doc["mean_Dab"] == 5.0
        assert doc["var_cap_Nb"] == 12.0
        assert doc["k_alpha"] == 5

    def test_prints_to_stdout_without_out(self, capsys):
        assert main(["bounds", "--a", "0.1", "--b", "0.25"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["command"] == "bounds"


class TestSimulate:
    def test_document_shape(self, tmp_path):
        doc = run_json(tmp_path, [
            "simulate", "--program", "survivor", "--n0", "20",
            "--a", "0.1", "--b", "0.25", "--runs", "50",
        ])
        assert doc["command"] == "simulate"
        assert set(doc["summaries"]) == {"n_b", "d_ab"}
        assert doc["summaries"]["n_b"]["n"] == 50
        names = {v["name"] for v in doc["bounds_report"]["verdicts"]}
        assert "mean_nb" in names

    def test_program_required(self, capsys):
        assert main(["simulate", "--runs", "5"]) == 2
        assert "program" in capsys.readouterr().err

    def test_byte_identical_reruns(self, tmp_path):
        argv = ["simulate", "--program", "sequential", "--b0", "0.02",
                "--a", "0.05", "--b", "0.1", "--runs", "40"]
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        assert main(argv + ["--out", str(a)]) == 0
        assert main(argv + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_seed_changes_document(self, tmp_path):
        argv = ["simulate", "--program", "sequential", "--b0", "0.02",
                "--a", "0.05", "--b", "0.1", "--runs", "40"]
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        assert main(argv + ["--seed", "1", "--out", str(a)]) == 0
        assert main(argv + ["--seed", "2", "--out", str(b)]) == 0
        da = json.loads(a.read_text())
        db = json.loads(b.read_text())
        assert da["config"]["seed"] == 1
        assert da["summaries"] != db["summaries"]

    def test_smallspread_reports_machine_count(self, tmp_path):
        doc = run_json(tmp_path, [
            "simulate", "--program", "smallspread",
            "--a", "0.05", "--b", "0.1", "--runs", "30",
        ])
        assert doc["machine_downcrossings"] >= 1

    def test_embed_with_p_file(self, tmp_path):
        pf = tmp_path / "p.txt"
        pf.write_text("0.6\n0.4\n")
        doc = run_json(tmp_path, [
            "simulate", "--program", "embed", "--p-file", str(pf),
            "--depth", "2", "--a", "0.1", "--b", "0.25", "--runs", "30",
        ])
        assert doc["config"]["depth"] == 2

    def test_empty_p_file_rejected(self, tmp_path, capsys):
        pf = tmp_path / "p.txt"
        pf.write_text("# nothing\n")
        code = main([
            "simulate", "--program", "embed", "--p-file", str(pf),
            "--a", "0.1", "--b", "0.25", "--runs", "5",
        ])
        assert code == 2

    def test_side_outputs_written(self, tmp_path):
        hist = tmp_path / "h.csv"
        trace = tmp_path / "t.csv"
        run_json(tmp_path, [
            "simulate", "--program", "survivor", "--n0", "10",
            "--a", "0.1", "--b", "0.25", "--runs", "25",
            "--hist-csv", str(hist), "--trace", str(trace),
        ])
        assert hist.read_text().splitlines()[0] == "statistic,value,count"
        lines = trace.read_text().splitlines()
        assert lines[0] == "run,n_b,d_ab,winner"
        assert len(lines) == 26


class TestLayering:
    ARGS = ["bounds", "--a", "0.1"]

    def test_env_supplies_missing_option(self, monkeypatch, capsys):
        monkeypatch.setenv("CML_B", "0.25")
        assert main(self.ARGS) == 0
        assert json.loads(capsys.readouterr().out)["b"] == 0.25

    def test_cli_beats_env(self, monkeypatch, capsys):
        monkeypatch.setenv("CML_B", "0.9")
        assert main(self.ARGS + ["--b", "0.25"]) == 0
        assert json.loads(capsys.readouterr().out)["b"] == 0.25

    def test_env_beats_config_file(self, tmp_path, monkeypatch, capsys):
        cfg = tmp_path / "cml.cfg"
        cfg.write_text("b = 0.5\n")
        monkeypatch.setenv("CML_B", "0.25")
        assert main(["--config", str(cfg)] + self.ARGS) == 0
        assert json.loads(capsys.readouterr().out)["b"] == 0.25

    def test_config_file_supplies_defaults(self, tmp_path, capsys):
        cfg = tmp_path / "cml.cfg"
        cfg.write_text("# shared\na = 0.05\nb = 0.1\nunrelated_key = 7\n")
        assert main(["--config", str(cfg), "bounds"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert (doc["a"], doc["b"]) == (0.05, 0.1)

    def test_config_via_environment_pointer(self, tmp_path, monkeypatch,
                                            capsys):
        cfg = tmp_path / "cml.cfg"
        cfg.write_text("b = 0.25\n")
        monkeypatch.setenv("CML_CONFIG", str(cfg))
        assert main(self.ARGS) == 0
        assert json.loads(capsys.readouterr().out)["b"] == 0.25

    def test_malformed_config_line(self, tmp_path, capsys):
        cfg = tmp_path / "cml.cfg"
        cfg.write_text("this is wrong\n")
        assert main(["--config", str(cfg)] + self.ARGS) == 2
        assert "expected key=value" in capsys.readouterr().err

    def test_uncastable_env_value(self, monkeypatch, capsys):
        monkeypatch.setenv("CML_B", "often")
        assert main(self.ARGS) == 2
        assert "CML_B" in capsys.readouterr().err


class TestWf:
    def test_document_shape(self, tmp_path):
        doc = run_json(tmp_path, [
            "wf", "--k", "4", "--h", "1e-3", "--a", "0.1", "--b", "0.2",
            "--runs", "12", "--no-bridge",
        ])
        assert doc["command"] == "wf"
        assert doc["config"]["bridge"] is False
        assert doc["n_truncated"] == 0
        assert doc["summaries"]["n_b"]["n"] == 12

    def test_cov3_mode(self, tmp_path):
        doc = run_json(tmp_path, [
            "wf", "--k", "3", "--h", "1e-3", "--a", "0.25", "--b", "0.5",
            "--cov3", "0.2,0.2", "--cov3-runs", "30",
        ])
        assert doc["cov3"]["n_runs"] == 30
        assert 0.0 <= doc["cov3"]["estimate"] <= 1.0

    def test_cov3_argument_format(self, capsys):
        assert main(["wf", "--b", "0.5", "--a", "0.25", "--cov3", "xy"]) == 2


class TestPde:
    def test_diagnostics_on_stdout_by_default(self, tmp_path, capsys):
        assert main(["pde", "--b", "0.5", "--m", "15"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["command"] == "pde"

    def test_diagnostics_document(self, tmp_path):
        grid = tmp_path / "grid.csv"
        diag = tmp_path / "diag.json"
        code = main([
            "pde", "--b", "0.5", "--m", "15", "--out", str(grid),
            "--json", str(diag),
        ])
        assert code == 0
        lines = grid.read_text().splitlines()
        assert lines[0] == "x,y,f"
        assert len(lines) == 1 + 17 * 17
        doc = json.loads(diag.read_text())
        assert doc["residual"] < 1e-10
        assert doc["symmetry_defect"] < 1e-8
        # b/64 sits below the spacing of a 15-node grid: ratios omitted
        assert doc["corner_ratios"] is None

    def test_corner_ratios_on_fine_grid(self, tmp_path):
        diag = tmp_path / "diag.json"
        assert main(["pde", "--b", "0.5", "--m", "63",
                     "--json", str(diag)]) == 0
        doc = json.loads(diag.read_text())
        assert len(doc["corner_ratios"]) == 4
        assert all(0.0 < r < 1.0 for r in doc["corner_ratios"])


class TestAnalyzeAndReport:
    def test_analyze_document(self, tmp_path):
        csv = tmp_path / "m.csv"
        csv.write_text(MARKET)
        doc = run_json(tmp_path, ["analyze", "--csv", str(csv),
                                  "--a", "0.1", "--b", "0.25"])
        assert doc["crossings"]["n_b"] == 3
        assert doc["crossings"]["d_ab"] == 3
        assert doc["n_contestants"] == 3

    def test_analyze_step_interp(self, tmp_path):
        csv = tmp_path / "m.csv"
        csv.write_text(MARKET)
        doc = run_json(tmp_path, ["analyze", "--csv", str(csv),
                                  "--interp", "step"])
        assert doc["crossings"]["interp"] == "step"

    def test_report_merges_documents(self, tmp_path):
        csv = tmp_path / "m.csv"
        csv.write_text(MARKET)
        first = tmp_path / "first.json"
        second = tmp_path / "second.json"
        assert main(["bounds", "--a", "0.1", "--b", "0.25",
                     "--out", str(first)]) == 0
        assert main(["analyze", "--csv", str(csv),
                     "--out", str(second)]) == 0
        doc = run_json(tmp_path, ["report", str(first), str(second)])
        assert doc["command"] == "report"
        assert doc["inputs"] == [str(first), str(second)]
        assert doc["reports"][str(first)]["mean_Nb"] == 4.0

    def test_report_rejects_bad_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("not json")
        assert main(["report", str(bad)]) == 2

    def test_report_needs_inputs(self, capsys):
        assert main(["report"]) == 2
