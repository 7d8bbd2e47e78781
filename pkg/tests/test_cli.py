"""Command-line pipeline wiring and idempotence."""

import json
from pathlib import Path

import pytest

from ramals.cli import load_config, main, site_from_config, stage_seed

CONFIG = """
# desk-scale smoke scenario
n_sessions = 120
cv_fraction = 0.7
evse_count = 4
mean_gap_minutes = 150
alpha = 0.9
episodes = 3
hidden = 8
seed = 11
"""


@pytest.fixture()
def workdir(tmp_path):
    (tmp_path / "run.cfg").write_text(CONFIG)
    return tmp_path


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestConfig:
    def test_defaults_and_overrides(self, workdir):
        cfg = load_config(workdir / "run.cfg")
        assert cfg["episodes"] == 3
        assert cfg["gamma"] == 0.9  # untouched default
        site = site_from_config(cfg)
        assert len(site.evses) == 4

    def test_per_evse_override(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("evse_count = 2\nevse.EVSE-2.supply_capacity_kw = 22\n")
        site = site_from_config(load_config(path))
        assert site.evse("EVSE-1").supply_capacity_kw == 50.0
        assert site.evse("EVSE-2").supply_capacity_kw == 22.0

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("not_a_key = 1\n")
        with pytest.raises(Exception):
            load_config(path)

    def test_stage_seeds_distinct_and_stable(self):
        assert stage_seed(7, "gen") == stage_seed(7, "gen")
        assert stage_seed(7, "gen") != stage_seed(7, "train")
        assert stage_seed(7, "gen") != stage_seed(8, "gen")


class TestGenData:
    def test_writes_requested_count(self, workdir):
        out = workdir / "sessions.json"
        assert run_cli("gen-data", "--config", workdir / "run.cfg", "--out", out) == 0
        assert len(json.loads(out.read_text())) == 120

    def test_same_seed_identical_files(self, workdir):
        a, b = workdir / "a.json", workdir / "b.json"
        run_cli("gen-data", "--config", workdir / "run.cfg", "--out", a)
        run_cli("gen-data", "--config", workdir / "run.cfg", "--out", b)
        assert a.read_bytes() == b.read_bytes()

    def test_invalid_mix_exits_nonzero(self, workdir, capsys):
        bad = workdir / "bad.cfg"
        bad.write_text("cv_fraction = 1.7\n")
        code = run_cli("gen-data", "--config", bad, "--out", workdir / "x.json")
        assert code == 1
        assert "error" in capsys.readouterr().err


class TestPipeline:
    def generate(self, workdir):
        out = workdir / "sessions.json"
        run_cli("gen-data", "--config", workdir / "run.cfg", "--out", out)
        return out

    def test_fit_risk_fields(self, workdir):
        sessions = self.generate(workdir)
        out = workdir / "risk.json"
        assert run_cli("fit-risk", "--config", workdir / "run.cfg",
                       "--sessions", sessions, "--out", out) == 0
        payload = json.loads(out.read_text())
        for key in ("alpha", "dof", "location", "scale", "cutoff", "var",
                    "cvar_paper", "cvar_standard", "cvar_empirical",
                    "cvar_normalized"):
            assert key in payload
        assert 0.0 <= payload["cvar_normalized"] < 1.0

    def test_fit_risk_missing_file(self, workdir, capsys):
        code = run_cli("fit-risk", "--config", workdir / "run.cfg",
                       "--sessions", workdir / "nope.json",
                       "--out", workdir / "risk.json")
        assert code == 1

    def test_train_run_compare(self, workdir):
        sessions = self.generate(workdir)
        risk = workdir / "risk.json"
        run_cli("fit-risk", "--config", workdir / "run.cfg",
                "--sessions", sessions, "--out", risk)
        model = workdir / "model.json"
        log = workdir / "train.csv"
        assert run_cli("train", "--config", workdir / "run.cfg",
                       "--sessions", sessions, "--risk", risk,
                       "--out", model, "--log", log) == 0
        log_rows = log.read_text().strip().splitlines()
        assert log_rows[0] == "episode,cumulative_reward,value_loss,policy_loss,entropy_loss"
        assert len(log_rows) == 1 + 3  # header + one row per episode

        outcomes = workdir / "outcomes.jsonl"
        report = workdir / "report.csv"
        assert run_cli("run", "--config", workdir / "run.cfg",
                       "--sessions", sessions, "--model", model,
                       "--out", outcomes, "--report", report) == 0
        assert len(outcomes.read_text().strip().splitlines()) == 120

        base_out = workdir / "baseline.jsonl"
        base_report = workdir / "baseline.csv"
        assert run_cli("run", "--config", workdir / "run.cfg",
                       "--sessions", sessions, "--baseline",
                       "--out", base_out, "--report", base_report) == 0

        table = workdir / "table.csv"
        assert run_cli("compare", f"baseline={base_report}", f"ramals={report}",
                       "--out", table) == 0
        header = table.read_text().splitlines()[0]
        assert "delta_pct_ramals" in header

    def test_resume_continues_counter(self, workdir):
        sessions = self.generate(workdir)
        model = workdir / "model.json"
        run_cli("train", "--config", workdir / "run.cfg", "--sessions", sessions,
                "--risk-off", "--out", model)
        first = json.loads(model.read_text())["step"]
        run_cli("train", "--config", workdir / "run.cfg", "--sessions", sessions,
                "--risk-off", "--resume", model, "--out", model)
        assert json.loads(model.read_text())["step"] > first

    def test_corrupt_model_exits_with_field_name(self, workdir, capsys):
        sessions = self.generate(workdir)
        bad = workdir / "bad-model.json"
        bad.write_text('{"format": "ramals-model-v1"}')
        code = run_cli("run", "--config", workdir / "run.cfg",
                       "--sessions", sessions, "--model", bad,
                       "--out", workdir / "o.jsonl")
        assert code == 1
        assert "missing field" in capsys.readouterr().err

    def test_idempotent_rerun(self, workdir):
        sessions = self.generate(workdir)
        model_a, model_b = workdir / "m1.json", workdir / "m2.json"
        for model in (model_a, model_b):
            run_cli("train", "--config", workdir / "run.cfg", "--sessions", sessions,
                    "--risk-off", "--out", model,
                    "--log", workdir / (model.stem + ".csv"))
        assert model_a.read_bytes() == model_b.read_bytes()
        assert (workdir / "m1.csv").read_bytes() == (workdir / "m2.csv").read_bytes()
