"""
Invariance and stability certificates.

Pipeline:

1. :func:`check_input_admissible` confirms the network maps X into U.
2. :func:`compute_fmax` starts from ``F = X`` and replaces ``F`` with
   ``R1(F) & X`` until the one-step over-approximation ``R1(F)`` lies inside
   ``F``; the result is positively invariant.
3. :func:`compute_fmin` iterates ``S_k = R1(S_{k-1})`` from ``F_max`` until
   the shrunk set ``S_k / (1 + eps)`` maps into itself; ``S_k`` is then the
   terminal set every trajectory from ``F_max`` enters within ``k*`` steps.
4. :func:`certify_asymptotic` checks that a local feedback with a quadratic
   Lyapunov function covers the terminal set, which yields asymptotic
   stability of the dual-mode controller.

Every certificate can be replayed from its stored sets alone with
:func:`replay_certificate`.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

import python_logging_framework as plog
from constants import EPSILON_SHRINK, ITER_LIMIT, K_LIMIT, SET_TOL
from encoder import BigMConfig, MilpBuilder, encode_nn
from exceptions import (
    CertificationError,
    EmptyResultError,
    EmptySetError,
    InconclusiveError,
    KLimitExceededError,
    LyapunovCheckFailedError,
    NodeLimitExceededError,
    NoRegionError,
    NotConvergedError,
    PreconditionError,
    ReachError,
    ScaleExceedsOneError,
    SolverError,
)
from geometry import Polytope, containment_residuals, intersect, is_empty, min_cover_scale, same_set, scale
from lp_core import LE
from milp_core import MilpStatus, solve_milp
from models import DualModeController, MaxoutNet, PwaSystem, eval_kappa, region_index
from reach import ReachOptions, ReachResult, Template, iterate_reach, overapprox_reach

KIND_UUB = "UUB"
KIND_ASYMPTOTIC = "Asymptotic"

# Errors that end a certification run with an inconclusive certificate.
_RUN_ERRORS = (CertificationError, ReachError, SolverError, EmptySetError)


@dataclass(frozen=True)
class CheckRecord:
    """One named check of a certificate; ``sampled`` marks checks established by sampling only."""

    name: str
    passed: bool
    residual: float
    tolerance: float
    sampled: bool = False


@dataclass(frozen=True)
class CertifyOptions:
    """Limits, tolerances and sampling settings of a certification run."""

    reach: ReachOptions = field(default_factory=ReachOptions)
    epsilon_shrink: float = EPSILON_SHRINK
    k_limit: int = K_LIMIT
    iter_limit: int = ITER_LIMIT
    lyapunov_samples: int = 10_000
    boundary_samples: int = 720
    seed: int = 42

    @property
    def tol_set(self) -> float:
        return self.reach.tol_set

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "CertifyOptions":
        section = config.get("certify", {})
        return cls(
            reach=ReachOptions.from_config(config),
            epsilon_shrink=section.get("epsilon_shrink", EPSILON_SHRINK),
            k_limit=section.get("k_limit", K_LIMIT),
            iter_limit=section.get("iter_limit", ITER_LIMIT),
            lyapunov_samples=section.get("lyapunov_samples", 10_000),
            boundary_samples=section.get("boundary_samples", 720),
            seed=config.get("sim", {}).get("seed", 42),
        )


@dataclass(frozen=True)
class Certificate:
    """
    Result of a certification run.

    A conclusive certificate has every check passed. An inconclusive one
    names the failure in ``reason`` and the exception class in ``error``;
    its sets may be missing.
    """

    kind: str
    f_max: Optional[Polytope]
    f_min: Optional[Polytope]
    k_star: int
    epsilon_shrink: float
    checks: Tuple[CheckRecord, ...]
    conclusive: bool
    template: Optional[Template] = None
    s_scale: Optional[float] = None
    fmax_iterations: Optional[int] = None
    reason: str = ""
    error: Optional[str] = None
    seed: int = 42
    model_digest: str = ""

    def __post_init__(self) -> None:
        if self.conclusive:
            if not all(c.passed for c in self.checks):
                raise CertificationError("A conclusive certificate needs every check passed")
            if self.k_star < 1:
                raise CertificationError(f"k_star must be >= 1, got {self.k_star}")
        if self.s_scale is not None and not 0.0 < self.s_scale <= 1.0 and self.conclusive:
            raise CertificationError(f"s_scale must lie in (0, 1], got {self.s_scale}")

    def failed_checks(self) -> List[CheckRecord]:
        return [c for c in self.checks if not c.passed]


@dataclass(frozen=True)
class PiCheck:
    """Outcome of a positive-invariance test with per-row residuals of ``R1(F)`` against ``F``."""

    passed: bool
    residuals: np.ndarray
    reach_result: ReachResult

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals, initial=-np.inf))


@dataclass(frozen=True)
class FmaxResult:
    set: Polytope
    iterations: int
    pi_check: PiCheck


@dataclass(frozen=True)
class FminResult:
    set: Polytope
    k_star: int
    shrink_residual: float


def _record(name: str, residual: float, tolerance: float, logger=None, sampled: bool = False) -> CheckRecord:
    passed = bool(np.isfinite(residual) and residual <= tolerance)
    plog.log_check(logger, name, passed, residual, tolerance)
    return CheckRecord(name=name, passed=passed, residual=float(residual), tolerance=tolerance, sampled=sampled)


def _reach_one(system, net, cfg, F, template, options: CertifyOptions, logger) -> ReachResult:
    result = overapprox_reach(system, net, cfg, 1, F, template, options.reach, logger)
    if not result.conclusive:
        raise InconclusiveError(f"One-step reach inconclusive: {result.message}")
    return result


def check_pi(
    system: PwaSystem,
    net: MaxoutNet,
    cfg: BigMConfig,
    F: Polytope,
    template: Template,
    options: Optional[CertifyOptions] = None,
    logger=None,
) -> PiCheck:
    """
    Sufficient test of positive invariance: ``R1(F)`` inside ``F``.

    Raises:
    InconclusiveError: If a direction of the reach computation hit a limit
    """
    options = options or CertifyOptions()
    reach = _reach_one(system, net, cfg, F, template, options, logger)
    residuals = containment_residuals(F, reach.set)
    passed = bool(np.all(residuals <= options.tol_set))
    return PiCheck(passed=passed, residuals=residuals, reach_result=reach)


def check_input_admissible(
    system: PwaSystem, net: MaxoutNet, cfg: BigMConfig, options: Optional[CertifyOptions] = None, logger=None
) -> CheckRecord:
    """
    Check ``Phi(x)`` in U for every x in X by maximizing each row of ``H^U u``.

    Raises:
    InconclusiveError: If a MILP hit a solver limit
    """
    options = options or CertifyOptions()
    residual = _admissibility_residual(system, net, cfg, options, logger)
    return _record("input_admissible", residual, options.tol_set, logger)


def _admissibility_residual(
    system: PwaSystem, net: MaxoutNet, cfg: BigMConfig, options: CertifyOptions, logger=None
) -> float:
    """Largest ``max_x H^U_i Phi(x) - h^U_i`` over the rows of U."""
    builder = MilpBuilder()
    x = builder.add_variables("x[0]", system.n, cfg.x_lo, cfg.x_hi)
    builder.add_rows([(x, system.X.H)], LE, system.X.h)
    u, _, _ = encode_nn(builder, net, cfg, x, 0)
    base = builder.build()

    worst = -np.inf
    for row, rhs in zip(system.U.H, system.U.h):
        c = np.zeros(base.lp.num_vars)
        c[u] = row
        try:
            solution = solve_milp(base.with_objective(c), options.reach.milp, logger)
        except NodeLimitExceededError as e:
            raise InconclusiveError(f"Input admissibility MILP inconclusive: {e}") from e
        if solution.status is not MilpStatus.OPTIMAL:
            raise InconclusiveError(f"Input admissibility MILP ended {solution.status.value}")
        worst = max(worst, solution.value - rhs)
    return float(worst)


def compute_fmax(
    system: PwaSystem,
    net: MaxoutNet,
    cfg: BigMConfig,
    template: Template,
    options: Optional[CertifyOptions] = None,
    logger=None,
) -> FmaxResult:
    """
    Large positively invariant set inside X.

    Starts from ``F = X`` and sets ``F = R1(F) & X`` while ``R1(F)`` is not
    inside ``F``.

    Returns:
    FmaxResult: The set, the number of loop executions and the final PI check

    Raises:
    NotConvergedError: If ``iter_limit`` is reached or F stops changing
    EmptyResultError: If F becomes empty
    InconclusiveError: If a reach computation hit a solver limit
    """
    options = options or CertifyOptions()
    F = system.X
    iterations = 0
    while True:
        pi = check_pi(system, net, cfg, F, template, options, logger)
        if pi.passed:
            plog.log_info(logger, f"F_max found after {iterations} iterations ({F.num_rows} rows)")
            return FmaxResult(set=F, iterations=iterations, pi_check=pi)
        if iterations >= options.iter_limit:
            raise NotConvergedError(f"F_max not found within {options.iter_limit} iterations")
        F_next = intersect(pi.reach_result.set, system.X)
        if is_empty(F_next):
            raise EmptyResultError(f"F collapsed to the empty set after {iterations + 1} iterations")
        if same_set(F_next, F, options.tol_set):
            raise NotConvergedError(
                f"F stopped changing after {iterations} iterations without becoming invariant "
                f"(max residual {pi.max_residual:.3e})"
            )
        F = F_next
        iterations += 1
        plog.log_info(logger, f"F_max iteration {iterations}: max residual {pi.max_residual:.3e}")


def _shrink_residual(
    system, net, cfg, S: Polytope, template: Template, options: CertifyOptions, logger
) -> float:
    """Largest row residual of ``S / (1 + eps)`` against its own one-step set."""
    shrunk = scale(S, 1.0 / (1.0 + options.epsilon_shrink))
    T = _reach_one(system, net, cfg, shrunk, template, options, logger).set
    return float(np.max(containment_residuals(T, shrunk), initial=-np.inf))


def compute_fmin(
    system: PwaSystem,
    net: MaxoutNet,
    cfg: BigMConfig,
    f_max: Polytope,
    template: Template,
    options: Optional[CertifyOptions] = None,
    logger=None,
) -> FminResult:
    """
    Terminal set ``F_min = S_k*`` with ``S_0 = F_max`` and ``S_k = R1(S_{k-1})``.

    ``k*`` is the first ``k`` for which ``S_k / (1 + eps)`` lies inside its
    own one-step over-approximation.

    Raises:
    KLimitExceededError: If no k up to ``k_limit`` passes
    InconclusiveError: If a reach computation hit a solver limit
    """
    options = options or CertifyOptions()
    if not options.epsilon_shrink > 0:
        raise ValueError(f"epsilon_shrink must be positive, got {options.epsilon_shrink}")
    S = f_max
    for k in range(1, options.k_limit + 1):
        S = _reach_one(system, net, cfg, S, template, options, logger).set
        residual = _shrink_residual(system, net, cfg, S, template, options, logger)
        plog.log_debug(logger, f"F_min search k={k}: shrink residual {residual:.3e}")
        if residual <= options.tol_set:
            plog.log_info(logger, f"F_min found at k*={k}")
            return FminResult(set=S, k_star=k, shrink_residual=residual)
    raise KLimitExceededError(
        f"No terminal set within k_limit={options.k_limit} at epsilon={options.epsilon_shrink:g}; "
        "increase k_limit or epsilon"
    )


def _inconclusive(
    kind: str, checks: List[CheckRecord], error: Exception, options: CertifyOptions, **kwargs
) -> Certificate:
    return Certificate(
        kind=kind,
        f_max=kwargs.get("f_max"),
        f_min=kwargs.get("f_min"),
        k_star=kwargs.get("k_star", 0),
        epsilon_shrink=options.epsilon_shrink,
        checks=tuple(checks),
        conclusive=False,
        template=kwargs.get("template"),
        s_scale=kwargs.get("s_scale"),
        fmax_iterations=kwargs.get("fmax_iterations"),
        reason=str(error),
        error=type(error).__name__,
        seed=options.seed,
        model_digest=kwargs.get("model_digest", ""),
    )


def certify_uub(
    system: PwaSystem,
    net: MaxoutNet,
    cfg: BigMConfig,
    template: Template,
    options: Optional[CertifyOptions] = None,
    model_digest: str = "",
    logger=None,
) -> Certificate:
    """
    Uniform ultimate boundedness certificate.

    Runs the input admissibility precondition, :func:`compute_fmax` and
    :func:`compute_fmin`, then checks ``F_max`` inside X, invariance of both
    sets, ``F_min`` inside ``F_max`` and the shrink condition at ``k*``.

    Returns:
    Certificate: Conclusive only when every check passed; otherwise the
        failing check or error is recorded and ``conclusive`` is False
    """
    options = options or CertifyOptions()
    checks: List[CheckRecord] = []
    state: Dict[str, Any] = {"template": template, "model_digest": model_digest}
    try:
        admissible = check_input_admissible(system, net, cfg, options, logger)
        checks.append(admissible)
        if not admissible.passed:
            raise PreconditionError(
                f"Network output leaves U on X (residual {admissible.residual:.3e}); saturate the network"
            )
        fmax = compute_fmax(system, net, cfg, template, options, logger)
        state.update(f_max=fmax.set, fmax_iterations=fmax.iterations)
        checks.append(_record("fmax_in_X", _max_residual(system.X, fmax.set), options.tol_set, logger))
        checks.append(_record("fmax_invariant", fmax.pi_check.max_residual, options.tol_set, logger))

        fmin = compute_fmin(system, net, cfg, fmax.set, template, options, logger)
        state.update(f_min=fmin.set, k_star=fmin.k_star)
        fmin_pi = check_pi(system, net, cfg, fmin.set, template, options, logger)
        checks.append(_record("fmin_invariant", fmin_pi.max_residual, options.tol_set, logger))
        checks.append(_record("fmin_in_fmax", _max_residual(fmax.set, fmin.set), options.tol_set, logger))
        checks.append(_record("shrink_condition", fmin.shrink_residual, options.tol_set, logger))
    except _RUN_ERRORS as e:
        plog.log_warning(logger, f"UUB certification inconclusive: {type(e).__name__}: {e}")
        return _inconclusive(KIND_UUB, checks, e, options, **state)

    conclusive = all(c.passed for c in checks)
    plog.log_info(logger, f"UUB certificate {'conclusive' if conclusive else 'inconclusive'} (k*={fmin.k_star})")
    failed = [c.name for c in checks if not c.passed]
    return Certificate(
        kind=KIND_UUB,
        f_max=fmax.set,
        f_min=fmin.set,
        k_star=fmin.k_star,
        epsilon_shrink=options.epsilon_shrink,
        checks=tuple(checks),
        conclusive=conclusive,
        template=template,
        fmax_iterations=fmax.iterations,
        reason="" if conclusive else f"failed checks: {', '.join(failed)}",
        seed=options.seed,
        model_digest=model_digest,
    )


def _max_residual(outer: Polytope, inner: Polytope) -> float:
    return float(np.max(containment_residuals(outer, inner), initial=-np.inf))


def _local_samples(ctrl: DualModeController, s: float, options: CertifyOptions) -> Tuple[np.ndarray, np.ndarray]:
    E = ctrl.ellipsoid
    boundary = E.boundary_points(options.boundary_samples, scale=s, seed=options.seed)
    interior = E.sample_interior(options.lyapunov_samples, scale=s, seed=options.seed)
    return boundary, interior


def _origin_cover_check(
    system: PwaSystem, ctrl: DualModeController, points: np.ndarray, options: CertifyOptions, logger
) -> CheckRecord:
    origin = set(system.origin_regions())
    uncovered = 0
    for x in points:
        try:
            u = eval_kappa(ctrl.kappa, x)
        except NoRegionError:
            uncovered += 1
            continue
        xu = np.concatenate([x, u])
        if not any(system.regions[i].cell.contains_point(xu, options.tol_set) for i in origin):
            uncovered += 1
    return _record("local_in_origin_regions", float(uncovered), 0.0, logger, sampled=True)


def _lyapunov_check(
    system: PwaSystem, ctrl: DualModeController, points: np.ndarray, options: CertifyOptions, logger
) -> CheckRecord:
    E = ctrl.ellipsoid
    worst = -np.inf
    for x in points:
        v = E.value(x)
        if v <= 1e-14:
            continue
        try:
            u = eval_kappa(ctrl.kappa, x)
            x_next = system.regions[region_index(system, x, u)].step(x, u)
        except NoRegionError:
            worst = np.inf
            break
        worst = max(worst, (E.value(x_next) - v) / v)
    if worst == -np.inf:
        worst = -1.0
    # Strict decrease: the relative change must be negative.
    record = CheckRecord(
        name="lyapunov_decrease", passed=bool(worst < 0.0), residual=float(worst), tolerance=0.0, sampled=True
    )
    plog.log_check(logger, record.name, record.passed, record.residual, record.tolerance)
    return record


def certify_asymptotic(
    system: PwaSystem,
    ctrl: DualModeController,
    cert_uub: Certificate,
    options: Optional[CertifyOptions] = None,
    logger=None,
) -> Certificate:
    """
    Asymptotic stability certificate of the dual-mode controller.

    Computes the smallest ``s`` with ``F_min`` inside ``s * E`` and checks, by
    sampling ``s * E``, that the local feedback keeps (x, u) in the regions
    containing the origin and strictly decreases ``x' S x``.

    Raises:
    PreconditionError: If the UUB certificate is not conclusive
    ScaleExceedsOneError: If F_min does not fit in the supplied ellipsoid
    LyapunovCheckFailedError: If a sampled point does not decrease V
    """
    options = options or CertifyOptions()
    if not cert_uub.conclusive or cert_uub.f_min is None:
        raise PreconditionError("certify_asymptotic needs a conclusive UUB certificate")
    s = min_cover_scale(ctrl.ellipsoid, cert_uub.f_min)
    plog.log_info(logger, f"Cover scale of F_min: s = {s:.6g}")
    if s > 1.0:
        raise ScaleExceedsOneError(
            f"F_min needs scale s = {s:.6g} > 1 of the local ellipsoid; shrink F_min or enlarge the ellipsoid"
        )
    s = max(s, np.finfo(float).tiny)

    boundary, interior = _local_samples(ctrl, s, options)
    points = np.vstack([boundary, interior])
    checks = list(cert_uub.checks)
    checks.append(_record("scale_at_most_one", s - 1.0, 0.0, logger))
    checks.append(_origin_cover_check(system, ctrl, points, options, logger))
    lyapunov = _lyapunov_check(system, ctrl, points, options, logger)
    checks.append(lyapunov)
    if not lyapunov.passed:
        raise LyapunovCheckFailedError(
            f"x' S x does not decrease under the local feedback (worst relative change {lyapunov.residual:.3e})"
        )
    conclusive = all(c.passed for c in checks)
    return Certificate(
        kind=KIND_ASYMPTOTIC,
        f_max=cert_uub.f_max,
        f_min=cert_uub.f_min,
        k_star=cert_uub.k_star,
        epsilon_shrink=cert_uub.epsilon_shrink,
        checks=tuple(checks),
        conclusive=conclusive,
        template=cert_uub.template,
        s_scale=float(s),
        fmax_iterations=cert_uub.fmax_iterations,
        reason="" if conclusive else "local feedback does not cover the scaled ellipsoid",
        seed=options.seed,
        model_digest=cert_uub.model_digest,
    )


@dataclass(frozen=True)
class ReplayReport:
    checks: Tuple[CheckRecord, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def replay_certificate(
    system: PwaSystem,
    controller: Union[MaxoutNet, DualModeController],
    cfg: BigMConfig,
    cert: Certificate,
    options: Optional[CertifyOptions] = None,
    logger=None,
) -> ReplayReport:
    """
    Re-verify a certificate from its stored sets.

    Recomputes input admissibility of the network on X, ``F_max`` inside X,
    invariance of ``F_max`` and ``F_min``, ``F_min`` inside ``F_max``,
    ``F_min`` equal to the ``k*``-fold one-step set of ``F_max``, the shrink
    condition at ``k*`` and, for asymptotic certificates, the cover scale and
    the sampled local checks. Solver limits during replay fail the affected
    check.
    """
    options = options or CertifyOptions()
    net = controller.net if isinstance(controller, DualModeController) else controller
    tol = options.tol_set
    if cert.f_max is None or cert.f_min is None or cert.template is None or cert.k_star < 1:
        return ReplayReport(checks=(CheckRecord("certificate_complete", False, np.inf, 0.0),))
    template = cert.template
    checks: List[CheckRecord] = []

    def guarded(name: str, compute) -> None:
        try:
            checks.append(_record(name, compute(), tol, logger))
        except (ReachError, SolverError, EmptySetError, CertificationError) as e:
            plog.log_warning(logger, f"Replay of {name} failed: {e}")
            checks.append(CheckRecord(name=name, passed=False, residual=float("nan"), tolerance=tol))

    guarded("input_admissible", lambda: _admissibility_residual(system, net, cfg, options, logger))
    guarded("fmax_in_X", lambda: _max_residual(system.X, cert.f_max))
    guarded("fmax_invariant", lambda: check_pi(system, net, cfg, cert.f_max, template, options, logger).max_residual)
    guarded("fmin_invariant", lambda: check_pi(system, net, cfg, cert.f_min, template, options, logger).max_residual)
    guarded("fmin_in_fmax", lambda: _max_residual(cert.f_max, cert.f_min))

    def iterate_matches() -> float:
        result = iterate_reach(system, net, cfg, cert.k_star, cert.f_max, template, options.reach, logger)
        if not result.conclusive:
            raise InconclusiveError(result.message or "iterated reach inconclusive")
        return max(_max_residual(result.set, cert.f_min), _max_residual(cert.f_min, result.set))

    guarded("fmin_matches_iterate", iterate_matches)
    replay_options = CertifyOptions(
        reach=options.reach,
        epsilon_shrink=cert.epsilon_shrink,
        k_limit=options.k_limit,
        iter_limit=options.iter_limit,
        lyapunov_samples=options.lyapunov_samples,
        boundary_samples=options.boundary_samples,
        seed=cert.seed,
    )
    guarded(
        "shrink_condition", lambda: _shrink_residual(system, net, cfg, cert.f_min, template, replay_options, logger)
    )

    if cert.kind == KIND_ASYMPTOTIC:
        if not isinstance(controller, DualModeController) or cert.s_scale is None:
            checks.append(CheckRecord("dual_mode_controller", False, float("nan"), 0.0))
        else:
            s = min_cover_scale(controller.ellipsoid, cert.f_min)
            checks.append(_record("scale_at_most_one", s - 1.0, 0.0, logger))
            checks.append(_record("scale_matches", abs(s - cert.s_scale), 1e-9 * max(1.0, s), logger))
            boundary, interior = _local_samples(controller, max(s, np.finfo(float).tiny), replay_options)
            points = np.vstack([boundary, interior])
            checks.append(_origin_cover_check(system, controller, points, replay_options, logger))
            checks.append(_lyapunov_check(system, controller, points, replay_options, logger))

    report = ReplayReport(checks=tuple(checks))
    plog.log_info(logger, f"Certificate replay {'passed' if report.passed else 'FAILED'} ({len(checks)} checks)")
    return report
