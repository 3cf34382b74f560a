import json
import sys
import os

import pandas as pd
import pytest

# Add project root to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from experiment_app.config import build_problem, parse_config
from experiment_app.main import EXIT_CONFIG, EXIT_ERROR, EXIT_OK, main
from project_code.exceptions import ConfigError


def _write(tmp_path, text, name="experiment.yaml"):
    target = tmp_path / name
    target.write_text(text, encoding="utf-8")
    return str(target)


def _error(capsys):
    lines = [line for line in capsys.readouterr().err.splitlines() if line.startswith("{")]
    return json.loads(lines[-1])


def _result_files(directory):
    return {
        p.relative_to(directory).as_posix(): p.read_bytes()
        for p in directory.rglob("*")
        if p.is_file() and p.name != "provenance.json"
    }


SIMULATE_ZERO = """\
mode: simulate
problem: {{id: zero, params: {{xi: 2.5}}}}
T: 1
tau: "1/4"
h: "1/8"
n_paths: 3
base_seed: 9
output_dir: {out}
"""

CONVERGE_CUBIC = """\
mode: converge
problem: cubic_neutral
T: 1
tau: "1/4"
h_list: ["1/8", "1/16"]
h_ref: "1/64"
n_paths: 24
chunk_size: 5
base_seed: 3
output_dir: {out}
"""


class TestSimulate:

    def test_zero_problem_writes_constant_rows(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["simulate", "--config", _write(tmp_path, SIMULATE_ZERO.format(out=out))])
        assert code == EXIT_OK
        printed = capsys.readouterr().out.splitlines()
        assert any(line.endswith("simulate.json") for line in printed)

        frame = pd.read_csv(out / "paths" / "path_00002.csv")
        assert list(frame.columns) == ["n", "t", "x0"]
        assert frame["n"].iloc[0] == -2
        assert frame["t"].iloc[-1] == 1.0
        assert (frame["x0"] == 2.5).all()

        meta = json.loads((out / "simulate.json").read_text())
        assert [p["index"] for p in meta["paths"]] == [0, 1, 2]
        assert meta["grid"]["h"] == "1/8"
        assert meta["config"]["base_seed"] == 9
        assert (out / "provenance.json").exists()

    def test_same_config_is_byte_identical(self, tmp_path):
        config = _write(tmp_path, SIMULATE_ZERO.replace("zero, params: {{xi: 2.5}}", "cubic_neutral")
                        .format(out=tmp_path / "out"))
        assert main(["simulate", "--config", config]) == EXIT_OK
        first = _result_files(tmp_path / "out")
        assert main(["simulate", "--config", config]) == EXIT_OK
        assert _result_files(tmp_path / "out") == first

    def test_incommensurate_delay(self, tmp_path, capsys):
        text = SIMULATE_ZERO.format(out=tmp_path / "out").replace('tau: "1/4"', "tau: 0.3").replace('"1/8"', "0.125")
        assert main(["simulate", "--config", _write(tmp_path, text)]) == EXIT_ERROR
        assert _error(capsys)["error"] == "NotCommensurate"

    def test_untamed_jump_rejected(self, tmp_path, capsys):
        text = SIMULATE_ZERO.format(out=tmp_path / "out").replace("id: zero", "id: jump_zero") + "untamed: true\n"
        assert main(["simulate", "--config", _write(tmp_path, text)]) == EXIT_CONFIG
        assert _error(capsys)["field"] == "untamed"


class TestConverge:

    def test_thread_count_leaves_results_unchanged(self, tmp_path):
        config = _write(tmp_path, CONVERGE_CUBIC.format(out=tmp_path / "out"))
        assert main(["converge", "--config", config, "--threads", "1"]) == EXIT_OK
        first = _result_files(tmp_path / "out")
        assert main(["converge", "--config", config, "--threads", "3"]) == EXIT_OK
        assert _result_files(tmp_path / "out") == first

        provenance = json.loads((tmp_path / "out" / "provenance.json").read_text())
        assert provenance["threads"] == 3
        assert "wall_clock_seconds" in provenance

    def test_report_files(self, tmp_path):
        out = tmp_path / "out"
        assert main(["converge", "--config", _write(tmp_path, CONVERGE_CUBIC.format(out=out))]) == EXIT_OK
        header = (out / "converge.csv").read_text().splitlines()[0]
        assert header == "h,n_paths,p,err_p,err_root,stderr,moment_p"
        payload = json.loads((out / "converge.json").read_text())
        assert set(payload["fit"]) == {"slope", "intercept", "r_squared"}
        assert payload["h_ref"] == "1/64"
        assert payload["config"]["h_list"] == ["1/8", "1/16"]

    def test_self_reference_row(self, tmp_path):
        text = CONVERGE_CUBIC.format(out=tmp_path / "out").replace('["1/8", "1/16"]', '["1/64"]')
        assert main(["converge", "--config", _write(tmp_path, text)]) == EXIT_OK
        frame = pd.read_csv(tmp_path / "out" / "converge.csv")
        assert len(frame) == 1
        assert frame["err_p"].iloc[0] == 0.0

    def test_non_dyadic_step_list(self, tmp_path, capsys):
        text = CONVERGE_CUBIC.format(out=tmp_path / "out").replace('["1/8", "1/16"]', '["1/8", "1/12"]') \
            .replace('"1/64"', '"1/16"')
        assert main(["converge", "--config", _write(tmp_path, text)]) == EXIT_ERROR
        assert _error(capsys)["error"] == "NotDivisible"

    def test_exact_reference_needs_closed_form(self, tmp_path, capsys):
        text = CONVERGE_CUBIC.format(out=tmp_path / "out") + "reference: exact\n"
        assert main(["converge", "--config", _write(tmp_path, text)]) == EXIT_CONFIG
        assert _error(capsys)["field"] == "reference"


class TestMoments:

    def test_untamed_sweep(self, tmp_path):
        text = f"""\
mode: moments
problem: {{id: cubic_neutral, params: {{xi: 10.0}}}}
T: 1
tau: "1/4"
h_list: ["1/4"]
untamed: true
explosion_threshold: 1e10
n_paths: 50
base_seed: 0
output_dir: {tmp_path / "out"}
"""
        assert main(["moments", "--config", _write(tmp_path, text)]) == EXIT_OK
        payload = json.loads((tmp_path / "out" / "moments.json").read_text())
        assert payload["tamed"] is False
        assert payload["rows"][0]["exploded_fraction"] > 0


class TestCheck:

    def _check(self, tmp_path, problem):
        out = tmp_path / problem
        text = f"mode: check\nproblem: {problem}\nn_samples: 2000\nradius: 10.0\nbase_seed: 0\noutput_dir: {out}\n"
        assert main(["check", "--config", _write(tmp_path, text, f"{problem}.yaml")]) == EXIT_OK
        return json.loads((out / "check.json").read_text())

    def test_cubic_neutral_passes(self, tmp_path):
        payload = self._check(tmp_path, "cubic_neutral")
        assert payload["passed"] is True
        assert all(e["max_violation"] == 0 for e in payload["entries"])

    def test_negative_control_fails(self, tmp_path):
        payload = self._check(tmp_path, "broken_cubic")
        assert payload["passed"] is False

    def test_unknown_problem(self, tmp_path, capsys):
        text = f"mode: check\nproblem: quartic\nbase_seed: 0\noutput_dir: {tmp_path}\n"
        assert main(["check", "--config", _write(tmp_path, text)]) == EXIT_ERROR
        assert _error(capsys)["error"] == "UnknownProblem"


class TestConfigErrors:

    def test_bad_yaml_reports_line(self, tmp_path, capsys):
        text = "mode: check\nproblem: [zero\nbase_seed: 0\n"
        assert main(["check", "--config", _write(tmp_path, text)]) == EXIT_CONFIG
        err = _error(capsys)
        assert err["error"] == "ConfigError"
        assert err["line"] is not None

    def test_unknown_key_reports_field_and_line(self, tmp_path, capsys):
        text = "mode: check\nproblem: zero\nstepsize: 0.1\nbase_seed: 0\n"
        assert main(["check", "--config", _write(tmp_path, text)]) == EXIT_CONFIG
        err = _error(capsys)
        assert err["field"] == "stepsize"
        assert err["line"] == 3

    def test_mode_mismatch(self, tmp_path, capsys):
        text = SIMULATE_ZERO.format(out=tmp_path / "out")
        assert main(["converge", "--config", _write(tmp_path, text)]) == EXIT_CONFIG
        assert _error(capsys)["field"] == "mode"

    def test_missing_file(self, tmp_path, capsys):
        assert main(["check", "--config", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG

    def test_wrong_type_names_field(self):
        with pytest.raises(ConfigError) as info:
            parse_config("mode: simulate\nproblem: zero\nT: 1\ntau: 0.25\nh: 0.125\nn_paths: many\nbase_seed: 0\n")
        assert info.value.field == "n_paths"
        assert info.value.line == 6

    def test_missing_required_key(self):
        with pytest.raises(ConfigError) as info:
            parse_config("mode: converge\nproblem: zero\nT: 1\ntau: 0.25\nn_paths: 4\nbase_seed: 0\n")
        assert info.value.field == "h_list"

    def test_low_moment_order(self):
        with pytest.raises(ConfigError) as info:
            parse_config(CONVERGE_CUBIC.format(out="x") + "p: 1.5\n")
        assert info.value.field == "p"

    def test_driver_must_match_problem(self):
        config = parse_config(CONVERGE_CUBIC.format(out="x") + "driver: jump\n")
        with pytest.raises(ConfigError) as info:
            build_problem(config)
        assert info.value.field == "driver"

    def test_alpha_out_of_range(self):
        config = parse_config(CONVERGE_CUBIC.format(out="x") + "alpha: 0.9\n")
        with pytest.raises(ConfigError) as info:
            build_problem(config)
        assert info.value.field == "alpha"

    def test_jump_alpha_times_p_checked(self):
        text = "mode: check\nproblem: jump_linear\nalpha: 0.3\np: 4\nbase_seed: 0\n"
        with pytest.raises(ConfigError) as info:
            build_problem(parse_config(text))
        assert info.value.field == "alpha"
        assert info.value.line == 3

    def test_jump_moment_order_follows_p(self):
        text = "mode: check\nproblem: jump_linear\nalpha: 0.2\np: 4\nbase_seed: 0\n"
        system = build_problem(parse_config(text)).system
        assert system.moment_order == 4.0
        assert system.alpha == 0.2

    def test_jump_without_p_parameter_still_checked(self):
        text = "mode: check\nproblem: jump_zero\np: 5\nbase_seed: 0\n"
        with pytest.raises(ConfigError) as info:
            build_problem(parse_config(text))
        assert info.value.field == "alpha"

    def test_bad_problem_parameter_reports_field_and_line(self, tmp_path, capsys):
        text = "mode: check\nbase_seed: 0\nproblem: {id: cubic_neutral, params: {kappa: abc}}\n"
        assert main(["check", "--config", _write(tmp_path, text)]) == EXIT_CONFIG
        err = _error(capsys)
        assert err["error"] == "ConfigError"
        assert err["field"] == "problem"
        assert err["line"] == 3

    def test_unexpected_problem_parameter(self):
        config = parse_config("mode: check\nproblem: {id: zero, params: {speed: 1}}\nbase_seed: 0\n")
        with pytest.raises(ConfigError) as info:
            build_problem(config)
        assert info.value.field == "problem"


class TestEnvironment:

    def test_output_dir_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("NSDDE_OUTPUT_DIR", str(tmp_path / "env_out"))
        text = "mode: check\nproblem: zero\nn_samples: 50\nbase_seed: 0\n"
        assert main(["check", "--config", _write(tmp_path, text)]) == EXIT_OK
        assert (tmp_path / "env_out" / "check.json").exists()

    def test_threads_from_environment(self, monkeypatch):
        monkeypatch.setenv("NSDDE_THREADS", "4")
        config = parse_config("mode: check\nproblem: zero\nbase_seed: 0\n")
        assert config.threads == 4
        assert config.with_threads(2).threads == 2
