"""
Unit tests for certify.py module.

Certificates are computed for the bundled scalar models, whose invariant and
terminal sets are known in closed form, and then replayed and tampered with.
"""

import dataclasses
import os

import numpy as np
import pytest

import certify
from certify import (
    KIND_ASYMPTOTIC,
    KIND_UUB,
    Certificate,
    CertifyOptions,
    CheckRecord,
    certify_asymptotic,
    certify_uub,
    check_input_admissible,
    check_pi,
    compute_fmax,
    compute_fmin,
    replay_certificate,
)
from encoder import derive_big_m
from exceptions import (
    CertificationError,
    EmptyResultError,
    KLimitExceededError,
    LyapunovCheckFailedError,
    NotConvergedError,
    PreconditionError,
    ScaleExceedsOneError,
)
from geometry import Ellipsoid, Polytope, bounding_box, contains, sample_polytope
from milp_core import MilpOptions
from model_io import load_model
from models import DualModeController, FeedbackPiece, MaxoutNet, PwaSystem, Region
from reach import ReachOptions, Template
from sim import audit_uub, rollout

MODELS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "models")
BOX_1D = Template.from_box(1)

UUB_CHECKS = ["input_admissible", "fmax_in_X", "fmax_invariant", "fmin_invariant", "fmin_in_fmax", "shrink_condition"]


@pytest.fixture(scope="module")
def contraction_run():
    bundle = load_model(os.path.join(MODELS_DIR, "contraction.yaml"))
    cfg = derive_big_m(bundle.system, bundle.net)
    cert = certify_uub(bundle.system, bundle.net, cfg, BOX_1D, model_digest=bundle.digest)
    return bundle, cfg, cert


@pytest.fixture(scope="module")
def saturating_run():
    bundle = load_model(os.path.join(MODELS_DIR, "saturating.yaml"))
    cfg = derive_big_m(bundle.system, bundle.net)
    cert = certify_uub(bundle.system, bundle.net, cfg, BOX_1D)
    return bundle, cfg, cert


def _interval(P: Polytope):
    lo, hi = bounding_box(P)
    return float(lo[0]), float(hi[0])


@pytest.mark.unit
class TestCertificate:
    """Tests for the certificate record."""

    def test_conclusive_needs_passed_checks(self):
        with pytest.raises(CertificationError, match="every check"):
            Certificate(
                kind=KIND_UUB,
                f_max=None,
                f_min=None,
                k_star=1,
                epsilon_shrink=1e-3,
                checks=(CheckRecord("fmax_in_X", False, 1.0, 1e-6),),
                conclusive=True,
            )

    def test_conclusive_needs_positive_k_star(self):
        with pytest.raises(CertificationError, match="k_star"):
            Certificate(kind=KIND_UUB, f_max=None, f_min=None, k_star=0, epsilon_shrink=1e-3, checks=(), conclusive=True)

    def test_inconclusive_may_fail_checks(self):
        cert = Certificate(
            kind=KIND_UUB,
            f_max=None,
            f_min=None,
            k_star=0,
            epsilon_shrink=1e-3,
            checks=(CheckRecord("fmax_in_X", False, 1.0, 1e-6),),
            conclusive=False,
        )
        assert [c.name for c in cert.failed_checks()] == ["fmax_in_X"]

    def test_options_from_config(self):
        options = CertifyOptions.from_config(
            {"certify": {"epsilon_shrink": 0.01, "k_limit": 7}, "sim": {"seed": 3}, "geometry": {"tol_set": 1e-5}}
        )
        assert options.epsilon_shrink == 0.01
        assert options.k_limit == 7
        assert options.seed == 3
        assert options.tol_set == 1e-5


@pytest.mark.unit
class TestBuildingBlocks:
    """Tests for the invariance check and the F_max and F_min loops."""

    def test_input_admissible(self, contraction_system, zero_net, contraction_cfg):
        record = check_input_admissible(contraction_system, zero_net, contraction_cfg)
        assert record.name == "input_admissible"
        assert record.passed
        assert record.residual == pytest.approx(-1.0)

    def test_input_not_admissible(self, contraction_system, abs_net):
        wide = MaxoutNet(layers=abs_net.layers, W_out=[[3.0]], b_out=[0.0])
        cfg = derive_big_m(contraction_system, wide)
        record = check_input_admissible(contraction_system, wide, cfg)
        assert not record.passed
        assert record.residual == pytest.approx(2.0, abs=1e-6)

    def test_check_pi(self, contraction_system, zero_net, contraction_cfg):
        pi = check_pi(contraction_system, zero_net, contraction_cfg, contraction_system.X, BOX_1D)
        assert pi.passed
        assert pi.max_residual == pytest.approx(-0.5, abs=1e-7)
        assert pi.reach_result.conclusive

    def test_fmax_is_x_for_contraction(self, contraction_system, zero_net, contraction_cfg):
        result = compute_fmax(contraction_system, zero_net, contraction_cfg, BOX_1D)
        assert result.iterations == 0
        assert _interval(result.set) == pytest.approx((-1.0, 1.0))

    def test_fmax_stagnates_for_divergent(self, divergent_path):
        bundle = load_model(divergent_path)
        cfg = derive_big_m(bundle.system, bundle.net)
        with pytest.raises(NotConvergedError, match="stopped changing"):
            compute_fmax(bundle.system, bundle.net, cfg, BOX_1D)

    def test_fmax_iteration_limit(self, divergent_path):
        bundle = load_model(divergent_path)
        cfg = derive_big_m(bundle.system, bundle.net)
        with pytest.raises(NotConvergedError, match="within 0 iterations"):
            compute_fmax(bundle.system, bundle.net, cfg, BOX_1D, CertifyOptions(iter_limit=0))

    def test_fmax_collapses(self, zero_net):
        """x+ = x + 3 pushes every state out of X."""
        system = PwaSystem(
            regions=(Region(A=[[1.0]], B=[[0.0]], p=[3.0], cell=Polytope.from_box([-5.0, -5.0], [5.0, 5.0])),),
            X=Polytope.from_box([-1.0], [1.0]),
            U=Polytope.from_box([-1.0], [1.0]),
        )
        cfg = derive_big_m(system, zero_net)
        with pytest.raises(EmptyResultError):
            compute_fmax(system, zero_net, cfg, BOX_1D)

    def test_fmin_of_contraction(self, contraction_system, zero_net, contraction_cfg):
        result = compute_fmin(contraction_system, zero_net, contraction_cfg, contraction_system.X, BOX_1D)
        assert result.k_star == 19
        assert _interval(result.set) == pytest.approx((-(2.0**-19), 2.0**-19), abs=1e-9)
        assert result.shrink_residual <= 1e-6

    def test_fmin_k_limit(self, contraction_system, zero_net, contraction_cfg):
        with pytest.raises(KLimitExceededError, match="k_limit=18"):
            compute_fmin(
                contraction_system, zero_net, contraction_cfg, contraction_system.X, BOX_1D, CertifyOptions(k_limit=18)
            )

    def test_fmin_needs_positive_epsilon(self, contraction_system, zero_net, contraction_cfg):
        with pytest.raises(ValueError, match="epsilon_shrink"):
            compute_fmin(
                contraction_system,
                zero_net,
                contraction_cfg,
                contraction_system.X,
                BOX_1D,
                CertifyOptions(epsilon_shrink=0.0),
            )

    def test_fmin_without_set_tolerance_hits_k_limit(self, contraction_system, zero_net, contraction_cfg):
        """With tol_set = 0 the contraction never meets the shrink condition at epsilon = 0.1."""
        options = CertifyOptions(reach=ReachOptions(tol_set=0.0), epsilon_shrink=0.1, k_limit=20)
        with pytest.raises(KLimitExceededError, match="k_limit=20"):
            compute_fmin(contraction_system, zero_net, contraction_cfg, contraction_system.X, BOX_1D, options)


@pytest.mark.unit
class TestCertifyUub:
    """Tests for certify_uub on the bundled models."""

    def test_contraction(self, contraction_run):
        bundle, _, cert = contraction_run

        assert cert.conclusive
        assert cert.kind == KIND_UUB
        assert [c.name for c in cert.checks] == UUB_CHECKS
        assert cert.k_star == 19
        assert cert.fmax_iterations == 0
        assert cert.model_digest == bundle.digest
        assert cert.failed_checks() == []
        assert _interval(cert.f_max) == pytest.approx((-1.0, 1.0))
        assert _interval(cert.f_min)[1] == pytest.approx(2.0**-19, abs=1e-9)

    def test_saturating(self, saturating_run):
        _, _, cert = saturating_run

        assert cert.conclusive
        assert cert.k_star == 10
        assert _interval(cert.f_max) == pytest.approx((-1.0, 1.0))
        assert _interval(cert.f_min) == pytest.approx((-0.50048828, 0.50048828), abs=1e-7)

    def test_divergent_is_inconclusive(self, divergent_path, mock_logger):
        bundle = load_model(divergent_path)
        cfg = derive_big_m(bundle.system, bundle.net)
        cert = certify_uub(bundle.system, bundle.net, cfg, BOX_1D, logger=mock_logger)

        assert not cert.conclusive
        assert cert.error == "NotConvergedError"
        assert cert.f_max is None
        assert "stopped changing" in cert.reason

    def test_k_limit_keeps_fmax(self, contraction_system, zero_net, contraction_cfg):
        cert = certify_uub(contraction_system, zero_net, contraction_cfg, BOX_1D, CertifyOptions(k_limit=18))

        assert not cert.conclusive
        assert cert.error == "KLimitExceededError"
        assert cert.f_max is not None
        assert cert.f_min is None
        assert cert.k_star == 0

    def test_inadmissible_network(self, contraction_system, abs_net):
        wide = MaxoutNet(layers=abs_net.layers, W_out=[[3.0]], b_out=[0.0])
        cfg = derive_big_m(contraction_system, wide)
        cert = certify_uub(contraction_system, wide, cfg, BOX_1D)

        assert cert.error == "PreconditionError"
        assert [c.name for c in cert.failed_checks()] == ["input_admissible"]

    def test_node_limit(self, contraction_system, zero_net, contraction_cfg):
        options = CertifyOptions(reach=ReachOptions(milp=MilpOptions(node_limit=0)))
        cert = certify_uub(contraction_system, zero_net, contraction_cfg, BOX_1D, options)

        assert not cert.conclusive
        assert cert.error == "InconclusiveError"


@pytest.mark.unit
class TestCertifyAsymptotic:
    """Tests for the dual-mode stability certificate."""

    def test_saturating_dual_mode(self, saturating_run):
        bundle, _, cert = saturating_run
        asym = certify_asymptotic(bundle.system, bundle.dual_mode, cert)

        assert asym.conclusive
        assert asym.kind == KIND_ASYMPTOTIC
        assert asym.s_scale == pytest.approx(0.50048828, abs=1e-7)
        names = [c.name for c in asym.checks]
        assert names == UUB_CHECKS + ["scale_at_most_one", "local_in_origin_regions", "lyapunov_decrease"]
        assert all(c.sampled for c in asym.checks[-2:])

    def test_small_ellipsoid(self, saturating_run):
        bundle, _, cert = saturating_run
        small = DualModeController(
            net=bundle.net, kappa=bundle.dual_mode.kappa, ellipsoid=Ellipsoid(S=[[1.0]], level=0.01)
        )
        with pytest.raises(ScaleExceedsOneError):
            certify_asymptotic(bundle.system, small, cert)

    def test_non_decreasing_feedback(self, saturating_run):
        """u = -0.5 x gives x+ = -x, so x' S x does not strictly decrease."""
        bundle, _, cert = saturating_run
        piece = FeedbackPiece(K=[[-0.5]], k=[0.0], cell=Polytope.from_box([-1.0], [1.0]))
        ctrl = DualModeController(net=bundle.net, kappa=(piece,), ellipsoid=bundle.dual_mode.ellipsoid)
        with pytest.raises(LyapunovCheckFailedError):
            certify_asymptotic(bundle.system, ctrl, cert, CertifyOptions(lyapunov_samples=200))

    def test_needs_conclusive_uub(self, saturating_run):
        bundle, _, cert = saturating_run
        failed = dataclasses.replace(cert, conclusive=False)
        with pytest.raises(PreconditionError):
            certify_asymptotic(bundle.system, bundle.dual_mode, failed)

    def test_lyapunov_sees_boundary_and_interior(self, saturating_run, mocker):
        bundle, _, cert = saturating_run
        spy = mocker.spy(certify, "_lyapunov_check")
        certify_asymptotic(bundle.system, bundle.dual_mode, cert, CertifyOptions(lyapunov_samples=50))

        points = spy.call_args.args[2]
        assert points.shape == (52, 1)
        np.testing.assert_allclose(np.abs(points[:2, 0]), [0.50048828, 0.50048828], atol=1e-7)
        assert np.all(np.abs(points[2:, 0]) <= 0.50048828 + 1e-7)


@pytest.mark.unit
class TestReplay:
    """Tests for replay_certificate."""

    def test_contraction_replays(self, contraction_run):
        bundle, cfg, cert = contraction_run
        report = replay_certificate(bundle.system, bundle.net, cfg, cert)

        assert report.passed
        assert [c.name for c in report.checks] == [
            "input_admissible",
            "fmax_in_X",
            "fmax_invariant",
            "fmin_invariant",
            "fmin_in_fmax",
            "fmin_matches_iterate",
            "shrink_condition",
        ]

    def test_tampered_fmin_fails(self, contraction_run):
        bundle, cfg, cert = contraction_run
        tampered = dataclasses.replace(cert, f_min=Polytope.from_box([-0.1], [0.1]))
        report = replay_certificate(bundle.system, bundle.net, cfg, tampered)

        assert not report.passed
        failed = {c.name for c in report.checks if not c.passed}
        assert "fmin_matches_iterate" in failed
        assert "shrink_condition" in failed

    def test_incomplete_certificate(self, contraction_run):
        bundle, cfg, cert = contraction_run
        report = replay_certificate(bundle.system, bundle.net, cfg, dataclasses.replace(cert, f_min=None))
        assert not report.passed
        assert report.checks[0].name == "certificate_complete"

    def test_asymptotic_replays(self, saturating_run):
        bundle, cfg, cert = saturating_run
        asym = certify_asymptotic(bundle.system, bundle.dual_mode, cert, CertifyOptions(lyapunov_samples=500))
        report = replay_certificate(
            bundle.system, bundle.dual_mode, cfg, asym, CertifyOptions(lyapunov_samples=500)
        )

        assert report.passed
        assert "scale_matches" in [c.name for c in report.checks]

    def test_asymptotic_needs_dual_mode(self, saturating_run):
        bundle, cfg, cert = saturating_run
        asym = certify_asymptotic(bundle.system, bundle.dual_mode, cert, CertifyOptions(lyapunov_samples=100))
        report = replay_certificate(bundle.system, bundle.net, cfg, asym)

        assert not report.passed
        assert report.checks[-1].name == "dual_mode_controller"
        assert np.isnan(report.checks[-1].residual)

    def test_inadmissible_network_fails_replay(self, contraction_run, abs_net):
        """u = 3 |x| leaves U = [-1, 1], so replay must not accept the stored sets."""
        bundle, _, cert = contraction_run
        wide = MaxoutNet(layers=abs_net.layers, W_out=[[3.0]], b_out=[0.0])
        report = replay_certificate(bundle.system, wide, derive_big_m(bundle.system, wide), cert)

        assert not report.passed
        admissible = report.checks[0]
        assert admissible.name == "input_admissible"
        assert not admissible.passed
        assert admissible.residual == pytest.approx(2.0, abs=1e-6)


@pytest.mark.integration
class TestEndToEnd:
    """Certificates checked against the closed loop they describe."""

    def test_case_study_fmax(self, case_study_saturated_bundle):
        bundle = case_study_saturated_bundle
        cfg = derive_big_m(bundle.system, bundle.net)
        result = compute_fmax(bundle.system, bundle.net, cfg, Template.from_box(2))

        assert result.iterations >= 1
        assert result.pi_check.passed
        assert contains(bundle.system.X, result.set)
        _, hi = bounding_box(result.set)
        assert np.all(hi <= 10.0 + 1e-6)
        assert hi[0] == pytest.approx(9.36, abs=1e-6)

    def test_saturating_audit(self, saturating_run):
        bundle, _, cert = saturating_run
        report = audit_uub(bundle.system, bundle.net, cert, 1000, seed=7)

        assert report.trajectories == 1000
        assert report.passed

    def test_dual_mode_reaches_origin(self, saturating_run):
        bundle, _, cert = saturating_run
        asym = certify_asymptotic(bundle.system, bundle.dual_mode, cert, CertifyOptions(lyapunov_samples=500))
        ctrl = bundle.dual_mode.with_scale(asym.s_scale)

        for x0 in sample_polytope(asym.f_max, 100, seed=11):
            traj = rollout(bundle.system, ctrl, x0, 500)
            assert not traj.exited
            assert np.max(np.abs(traj.final_state)) <= 1e-6
