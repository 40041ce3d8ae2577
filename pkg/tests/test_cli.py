from __future__ import annotations

import json

from podtpi.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestDecisionTable:
    def test_csv_to_stdout(self, capsys):
        code, out, _ = run(capsys, "decision-table", "--pt", "0.3", "--eps", "0.05", "--nmax", "12")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "n,m,decision"
        assert "0,3,E" in lines
        assert "3,0,D" in lines

    def test_csv_to_file(self, capsys, tmp_path):
        target = tmp_path / "table.csv"
        code, _, _ = run(capsys, "decision-table", "--pt", "0.17", "--nmax", "6", "-o", str(target))
        assert code == 0
        assert target.read_text().startswith("n,m,decision")

    def test_invalid_target_is_runtime_error(self, capsys):
        code, _, err = run(capsys, "decision-table", "--pt", "0.02", "--eps", "0.05")
        assert code == 1
        assert "error" in json.loads(err)

    def test_bad_flag_exits_2(self, capsys):
        code, _, _ = run(capsys, "decision-table", "--pt", "not-a-number")
        assert code == 2


class TestWhatIf:
    def fig1a_file(self, tmp_path):
        doc = {
            "p_t": 0.3,
            "eps1": 0.05,
            "tau": 28.0,
            "k": 3,
            "n": 2,
            "m": 2,
            "dlt_times": [9.0, 26.0],
            "follow_ups": [15.0, 8.0],
            "seed": 2024,
            "n_iter": 3000,
            "burn_in": 1000,
        }
        path = tmp_path / "tally.json"
        path.write_text(json.dumps(doc))
        return path

    def test_fig1a_gammas(self, capsys, tmp_path):
        code, out, _ = run(capsys, "whatif", str(self.fig1a_file(tmp_path)))
        assert code == 0
        doc = json.loads(out)
        assert abs(doc["gamma"]["-1"] - 0.58) < 0.05
        assert abs(doc["gamma"]["0"] - 0.42) < 0.05
        assert doc["gamma"]["1"] == 0.0
        assert doc["a_star"] == -1
        assert doc["s_decisions"] == [0, -1, -1]

    def test_no_pending_is_deterministic(self, capsys, tmp_path):
        path = tmp_path / "t.json"
        path.write_text(json.dumps({"p_t": 0.3, "n": 1, "m": 2}))
        code, out, _ = run(capsys, "whatif", str(path))
        assert code == 0
        doc = json.loads(out)
        assert doc["gamma"] == {"-1": 0.0, "0": 1.0, "1": 0.0}
        assert doc["n_draws"] == 0

    def test_missing_file_exits_2(self, capsys):
        code, _, err = run(capsys, "whatif", "missing.json")
        assert code == 2
        assert "error" in json.loads(err)

    def test_draws_dump(self, capsys, tmp_path):
        dump = tmp_path / "draws.csv"
        doc = {
            "p_t": 0.3, "n": 1, "m": 2, "dlt_times": [9.0],
            "follow_ups": [10.0], "n_iter": 300, "burn_in": 100, "seed": 3,
        }
        tally = tmp_path / "t.json"
        tally.write_text(json.dumps(doc))
        code, _, _ = run(capsys, "whatif", str(tally), "--dump-draws", str(dump))
        assert code == 0
        lines = dump.read_text().strip().splitlines()
        assert lines[0] == "iter,p_1,w_1,w_2,w_3"
        assert len(lines) == 1 + 200
        first = lines[1].split(",")
        assert 0.0 < float(first[1]) < 1.0


class TestSimulateAndReport:
    def config(self, tmp_path, scenarios=(41,), n_trials=2):
        text = "\n".join(
            [
                "[campaign]",
                f"scenarios = {list(scenarios)}",
                "setting = 1",
                f"n_trials = {n_trials}",
                "seed = 11",
                "[design]",
                "pi_e = 1.0",
                "pi_d = 0.15",
                "[mcmc]",
                "n_iter = 400",
                "burn_in = 150",
            ]
        )
        path = tmp_path / "campaign.toml"
        path.write_text(text)
        return path

    def test_small_campaign_and_report(self, capsys, tmp_path):
        cfg = self.config(tmp_path)
        out_dir = tmp_path / "run1"
        code, _, _ = run(capsys, "simulate", "--config", str(cfg), "--out", str(out_dir))
        assert code == 0
        per_scn = (out_dir / "metrics_per_scenario.csv").read_text()
        assert per_scn.startswith("scn,design,")
        doc = json.loads((out_dir / "campaign.json").read_text())
        assert {row["design"] for row in doc["aggregate"]} == {"pod-tpi", "mtpi2"}
        assert "true_mtd_convention" in doc

        code, out, _ = run(capsys, "report", str(out_dir))
        assert code == 0
        assert "pod-tpi" in out and "mtpi2" in out

    def test_missing_config_exits_2(self, capsys):
        code, _, err = run(capsys, "simulate", "--config", "missing.toml")
        assert code == 2
        assert "error" in json.loads(err)

    def test_unknown_scenario_exits_2(self, capsys, tmp_path):
        cfg = self.config(tmp_path, scenarios=(999,))
        code, _, err = run(capsys, "simulate", "--config", str(cfg))
        assert code == 2
