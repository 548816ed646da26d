"""
Integration tests for the certifier.py command-line interface.

Every command is run through ``main`` against the bundled models, with
results and logs written to a temporary directory, and the exit-code
contract is checked for conclusive, inconclusive, invalid and
resource-limited runs.
"""

import os

import pandas as pd
import pytest
import yaml

from certifier import build_run_config, exit_code_for, get_log_level, main, parse_args
from config import DEFAULT_CONFIG
from constants import (
    CERTIFICATE_FILE,
    EXIT_INCONCLUSIVE,
    EXIT_INTERNAL_LIMIT,
    EXIT_INVALID_MODEL,
    EXIT_OK,
    MANIFEST_FILE,
    REACH_FILE,
    TRAJECTORY_FILE,
)
from exceptions import DomainError, NodeLimitExceededError, NotConvergedError, SecurityError
from geometry import Polytope
from model_io import load_certificate, load_reach, save_set


def _run(command, target, temp_dir, *extra):
    out = os.path.join(temp_dir, "out")
    logs = os.path.join(temp_dir, "logs")
    code = main([command, str(target), "--out", out, "--log-dir", logs, "--skip-confirmation", *extra])
    return code, out


def _read_yaml(path):
    with open(path, encoding="utf-8") as handle:
        return yaml.safe_load(handle)


@pytest.mark.unit
class TestParseArgs:
    """Test command-line argument parsing."""

    def test_certify_defaults(self, monkeypatch):
        monkeypatch.delenv("PWA_CERT_OUT_DIR", raising=False)
        monkeypatch.delenv("PWA_CERT_SKIP_CONFIRMATION", raising=False)
        args = parse_args(["certify", "models/contraction.yaml"])

        assert args.command == "certify"
        assert args.uub is False
        assert args.asymptotic is False
        assert args.epsilon is None
        assert args.template is None
        assert args.dump_lp is False

    def test_uub_and_asymptotic_exclusive(self):
        with pytest.raises(SystemExit):
            parse_args(["certify", "m.yaml", "--uub", "--asymptotic"])

    def test_simulate_needs_x0(self):
        with pytest.raises(SystemExit):
            parse_args(["simulate", "m.yaml"])

    def test_reach_options(self):
        args = parse_args(["reach", "m.yaml", "--k", "3", "--from", "s.yaml", "--template", "oct"])
        assert (args.k, args.from_set, args.template) == (3, "s.yaml", "oct")

    def test_verify_needs_model(self):
        with pytest.raises(SystemExit):
            parse_args(["verify", "cert.yaml"])

    def test_log_level_priority(self, monkeypatch):
        monkeypatch.setenv("PWA_CERT_LOG_LEVEL", "ERROR")
        assert get_log_level("DEBUG") == 10
        assert get_log_level(None) == 40


@pytest.mark.unit
class TestRunConfiguration:
    """Tests for option precedence and the exit-code mapping."""

    def test_flags_override_model_options(self):
        run_cfg = build_run_config(
            DEFAULT_CONFIG, {"epsilon_shrink": 0.01, "k_limit": 9}, {"epsilon_shrink": 0.05, "k_limit": None}
        )
        assert run_cfg["certify"]["epsilon_shrink"] == 0.05
        assert run_cfg["certify"]["k_limit"] == 9
        assert run_cfg["certify"]["iter_limit"] == DEFAULT_CONFIG["certify"]["iter_limit"]

    def test_unknown_option_ignored(self):
        run_cfg = build_run_config(DEFAULT_CONFIG, {"template": "oct"}, {})
        assert run_cfg["reach"]["template"] == "box"

    @pytest.mark.parametrize(
        "error, code",
        [
            (NodeLimitExceededError("limit"), EXIT_INTERNAL_LIMIT),
            (DomainError("outside"), EXIT_INVALID_MODEL),
            (SecurityError("path"), EXIT_INVALID_MODEL),
            (FileNotFoundError("missing"), EXIT_INVALID_MODEL),
            (NotConvergedError("loop"), EXIT_INCONCLUSIVE),
        ],
    )
    def test_exit_codes(self, error, code):
        assert exit_code_for(error) == code


@pytest.mark.cli
class TestCertifyCommand:
    """End-to-end certify runs."""

    def test_contraction_is_certified(self, contraction_path, temp_dir):
        code, out = _run("certify", contraction_path, temp_dir, "--uub")

        assert code == EXIT_OK
        cert = load_certificate(os.path.join(out, CERTIFICATE_FILE))
        assert cert.conclusive
        assert cert.k_star == 19
        manifest = _read_yaml(os.path.join(out, MANIFEST_FILE))
        assert manifest["command"] == "certify"
        assert manifest["exit_code"] == EXIT_OK
        assert manifest["outputs"] == [CERTIFICATE_FILE]
        assert manifest["tolerances"]["tol_set"] == 1e-6

    def test_divergent_is_inconclusive(self, divergent_path, temp_dir):
        code, out = _run("certify", divergent_path, temp_dir)

        assert code == EXIT_INCONCLUSIVE
        cert = load_certificate(os.path.join(out, CERTIFICATE_FILE))
        assert not cert.conclusive
        assert cert.error == "NotConvergedError"

    def test_node_limit_exit_code(self, contraction_path, temp_dir):
        code, out = _run("certify", contraction_path, temp_dir, "--node-limit", "0")

        assert code == EXIT_INTERNAL_LIMIT
        assert _read_yaml(os.path.join(out, MANIFEST_FILE))["exit_code"] == EXIT_INTERNAL_LIMIT

    def test_epsilon_flag_changes_terminal_set(self, contraction_path, temp_dir):
        """A larger shrink slack accepts the terminal-set test earlier."""
        code, out = _run("certify", contraction_path, temp_dir, "--epsilon", "1000.0")

        assert code == EXIT_OK
        cert = load_certificate(os.path.join(out, CERTIFICATE_FILE))
        assert cert.epsilon_shrink == 1000.0
        assert cert.k_star == 9

    def test_malformed_model(self, temp_dir):
        path = os.path.join(temp_dir, "broken.yaml")
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("system: {regions: []}\nnetwork: {}\n")

        code, out = _run("certify", path, temp_dir)

        assert code == EXIT_INVALID_MODEL
        assert not os.path.exists(os.path.join(out, CERTIFICATE_FILE))
        assert _read_yaml(os.path.join(out, MANIFEST_FILE))["exit_code"] == EXIT_INVALID_MODEL

    def test_asymptotic_needs_dual_mode(self, contraction_path, temp_dir):
        code, _ = _run("certify", contraction_path, temp_dir, "--asymptotic")
        assert code == EXIT_INVALID_MODEL

    def test_dump_lp(self, contraction_path, temp_dir):
        code, out = _run("certify", contraction_path, temp_dir, "--dump-lp")

        assert code == EXIT_OK
        with open(os.path.join(out, "encoding.lp"), encoding="utf-8") as handle:
            assert "Maximize" in handle.read()


@pytest.mark.cli
class TestReachCommand:
    """End-to-end reach runs and their replay."""

    def test_one_step_reach(self, contraction_path, temp_dir):
        code, out = _run("reach", contraction_path, temp_dir, "--k", "1")

        assert code == EXIT_OK
        stored = load_reach(os.path.join(out, REACH_FILE))
        assert stored.optima == pytest.approx([0.5, 0.5], abs=1e-7)
        frame = pd.read_csv(os.path.join(out, "reach_optima.csv"))
        assert list(frame.columns) == ["c1", "optimum", "status"]
        assert frame["status"].tolist() == ["Optimal", "Optimal"]

    def test_reach_file_replays(self, contraction_path, temp_dir):
        _, out = _run("reach", contraction_path, temp_dir, "--k", "2")
        code, _ = _run("verify", os.path.join(out, REACH_FILE), temp_dir, "--model", str(contraction_path))
        assert code == EXIT_OK

    def test_initial_set_outside_x(self, contraction_path, temp_dir):
        start = save_set(os.path.join(temp_dir, "start.yaml"), Polytope.from_box([0.5], [1.5]))
        code, _ = _run("reach", contraction_path, temp_dir, "--from", str(start))
        assert code == EXIT_INVALID_MODEL

    def test_node_limit_exit_code(self, contraction_path, temp_dir):
        code, _ = _run("reach", contraction_path, temp_dir, "--node-limit", "0")
        assert code == EXIT_INTERNAL_LIMIT


@pytest.mark.cli
class TestVerifyCommand:
    """Certificate replay through the CLI."""

    def test_certificate_replays(self, contraction_path, temp_dir):
        _, out = _run("certify", contraction_path, temp_dir)
        code, _ = _run("verify", os.path.join(out, CERTIFICATE_FILE), temp_dir, "--model", str(contraction_path))
        assert code == EXIT_OK

    def test_tampered_certificate_fails(self, contraction_path, temp_dir):
        _, out = _run("certify", contraction_path, temp_dir)
        cert_path = os.path.join(out, CERTIFICATE_FILE)
        document = _read_yaml(cert_path)
        document["f_min"] = {"H": [[1.0], [-1.0]], "h": [0.1, 0.1]}
        tampered = os.path.join(temp_dir, "tampered.yaml")
        with open(tampered, "w", encoding="utf-8") as handle:
            yaml.safe_dump(document, handle)

        code, _ = _run("verify", tampered, temp_dir, "--model", str(contraction_path))
        assert code == EXIT_INCONCLUSIVE

    def test_model_mismatch(self, contraction_path, divergent_path, temp_dir):
        _, out = _run("certify", contraction_path, temp_dir)
        code, _ = _run("verify", os.path.join(out, CERTIFICATE_FILE), temp_dir, "--model", str(divergent_path))
        assert code == EXIT_INVALID_MODEL

    def test_inconclusive_certificate(self, divergent_path, temp_dir):
        _, out = _run("certify", divergent_path, temp_dir)
        code, _ = _run("verify", os.path.join(out, CERTIFICATE_FILE), temp_dir, "--model", str(divergent_path))
        assert code == EXIT_INCONCLUSIVE

    def test_set_file_rejected(self, contraction_path, temp_dir):
        path = save_set(os.path.join(temp_dir, "set.yaml"), Polytope.from_box([-1.0], [1.0]))
        code, _ = _run("verify", path, temp_dir, "--model", str(contraction_path))
        assert code == EXIT_INVALID_MODEL


@pytest.mark.cli
class TestSimulateCommand:
    """Trajectory export through the CLI."""

    def test_case_study_trajectory(self, case_study_path, temp_dir):
        code, out = _run("simulate", case_study_path, temp_dir, "--x0", "1,1", "--steps", "2")

        assert code == EXIT_OK
        frame = pd.read_csv(os.path.join(out, TRAJECTORY_FILE))
        assert list(frame.columns) == ["k", "x1", "x2", "u1", "region", "branch"]
        assert frame["x1"].tolist()[:2] == pytest.approx([1.0, -0.501])
        assert frame["x2"].iloc[2] == pytest.approx(-0.325016, abs=1e-6)
        assert frame["region"].tolist()[:2] == [0, 3]

    def test_start_outside_x(self, contraction_path, temp_dir):
        code, out = _run("simulate", contraction_path, temp_dir, "--x0", "2")

        assert code == EXIT_INVALID_MODEL
        assert _read_yaml(os.path.join(out, MANIFEST_FILE))["exit_code"] == EXIT_INVALID_MODEL

    def test_unparseable_start(self, contraction_path, temp_dir):
        code, _ = _run("simulate", contraction_path, temp_dir, "--x0", "a,b")
        assert code == EXIT_INVALID_MODEL


@pytest.mark.cli
@pytest.mark.slow
class TestAsymptoticWorkflow:
    """Dual-mode certificate, replay and simulation of the saturating model."""

    def test_certify_verify_simulate(self, saturating_path, temp_dir):
        code, out = _run("certify", saturating_path, temp_dir, "--asymptotic")
        assert code == EXIT_OK
        cert_path = os.path.join(out, CERTIFICATE_FILE)
        cert = load_certificate(cert_path)
        assert cert.kind == "Asymptotic"
        assert cert.s_scale == pytest.approx(0.50048828, abs=1e-7)

        code, _ = _run("verify", cert_path, temp_dir, "--model", str(saturating_path))
        assert code == EXIT_OK

        code, sim_out = _run(
            "simulate", saturating_path, temp_dir, "--x0", "1", "--steps", "40", "--dual-mode", cert_path
        )
        assert code == EXIT_OK
        frame = pd.read_csv(os.path.join(sim_out, TRAJECTORY_FILE))
        assert "kappa" in frame["branch"].tolist()
        assert abs(frame["x1"].iloc[-1]) < 1e-6
