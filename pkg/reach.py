"""
Reachability of the closed loop through mixed-integer support functions.

- :func:`support_reach` maximizes ``v x(k)`` over the K-step encoding; the
  optimum is the support of the exact k-step reachable set.
- :func:`overapprox_reach` solves one MILP per template direction and returns
  the polytope ``{C x <= c}``, tight in every direction of ``C``.
- :func:`iterate_reach` chains one-step over-approximations, feeding each
  result forward as the next initial set.

Per-direction MILPs of one call are independent; with ``workers > 1`` they run
in a process pool and are reassembled by direction index, so the result does
not depend on the worker count.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

import python_logging_framework as plog
from constants import SET_TOL
from encoder import BigMConfig, EncodedSystem, MilpBuilder, encode_closed_loop, encode_nn, encode_open_loop
from exceptions import (
    DimensionMismatchError,
    DomainError,
    EmptySetError,
    GeometryError,
    InconclusiveError,
    NodeLimitExceededError,
    UnboundedReachError,
)
from geometry import Polytope, bounding_box, contains, is_bounded, is_empty
from lp_core import LE
from milp_core import MilpOptions, MilpProblem, MilpStatus, solve_milp
from models import MaxoutNet, PwaSystem

WORKERS_ENV = "PWA_CERT_WORKERS"


def default_workers(fallback: int = 1) -> int:
    """Worker count from ``PWA_CERT_WORKERS``, or ``fallback`` when unset or invalid."""
    raw = os.getenv(WORKERS_ENV)
    if raw is None:
        return fallback
    try:
        return max(1, int(raw))
    except ValueError:
        return fallback


@dataclass(frozen=True)
class ReachOptions:
    """MILP options plus the number of worker processes for per-direction solves."""

    milp: MilpOptions = field(default_factory=MilpOptions)
    workers: int = 1
    tol_set: float = SET_TOL

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "ReachOptions":
        """Options from a full configuration dictionary; the environment overrides ``reach.workers``."""
        return cls(
            milp=MilpOptions.from_config(config.get("solver", {})),
            workers=default_workers(config.get("reach", {}).get("workers", 1)),
            tol_set=config.get("geometry", {}).get("tol_set", SET_TOL),
        )


@dataclass(frozen=True)
class Template:
    """
    Directions ``C`` of a template polytope ``{C x <= c}``.

    A template that does not positively span R^n is allowed, but the
    resulting over-approximation may be unbounded; see :meth:`is_bounded`.
    """

    C: np.ndarray
    name: str = "custom"

    def __post_init__(self) -> None:
        C = np.array(self.C, dtype=float)
        if C.ndim != 2 or C.shape[0] == 0:
            raise DimensionMismatchError(f"Template needs a non-empty direction matrix, got shape {C.shape}")
        if np.any(np.linalg.norm(C, axis=1) <= 1e-12):
            raise GeometryError("Template has a zero direction")
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    @property
    def dim(self) -> int:
        return int(self.C.shape[1])

    @property
    def size(self) -> int:
        return int(self.C.shape[0])

    @classmethod
    def from_box(cls, n: int) -> "Template":
        """Directions ``+e_i`` then ``-e_i``."""
        eye = np.eye(n)
        return cls(C=np.vstack([eye, -eye]), name="box")

    @classmethod
    def octagonal(cls, n: int) -> "Template":
        """Box directions plus ``+-e_i +- e_j`` for every pair ``i < j``."""
        rows = list(np.vstack([np.eye(n), -np.eye(n)]))
        for i in range(n):
            for j in range(i + 1, n):
                for si, sj in ((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)):
                    row = np.zeros(n)
                    row[i], row[j] = si, sj
                    rows.append(row)
        return cls(C=np.vstack(rows), name="oct")

    @classmethod
    def from_polytope(cls, P: Polytope, name: str = "file") -> "Template":
        """Use the rows of ``P.H`` as directions (``C = H^(X)`` for ``P = X``)."""
        return cls(C=P.H, name=name)

    def is_bounded(self) -> bool:
        """Whether ``{C x <= 1}`` is bounded, i.e. the directions positively span R^n."""
        return is_bounded(Polytope(H=self.C, h=np.ones(self.size)))


@dataclass(frozen=True)
class DirectionStats:
    """Solve statistics of one template direction."""

    status: str
    nodes: int
    wall_time: float


@dataclass(frozen=True)
class ReachResult:
    """
    Template over-approximation with per-direction optima.

    ``optima[i]`` is ``nan`` for a direction whose MILP hit a limit and
    ``inf`` for an unbounded direction; neither contributes a row to ``set``.
    """

    set: Polytope
    directions: np.ndarray
    optima: np.ndarray
    stats: Tuple[DirectionStats, ...]
    conclusive: bool
    steps: int = 1
    entry_invariant: Optional[bool] = None
    message: str = ""

    @property
    def total_nodes(self) -> int:
        return sum(s.nodes for s in self.stats)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "steps": self.steps,
            "conclusive": self.conclusive,
            "entry_invariant": self.entry_invariant,
            "directions": self.directions.tolist(),
            "optima": [float(c) for c in self.optima],
            "set": self.set.to_dict(),
            "message": self.message,
        }


def _solve_direction(problem: MilpProblem, options: MilpOptions) -> Tuple[str, float, int, float]:
    """Solve one direction; top-level so that worker processes can import it."""
    try:
        solution = solve_milp(problem, options)
    except NodeLimitExceededError as e:
        partial = e.solution
        nodes = partial.nodes if partial is not None else 0
        elapsed = partial.wall_time if partial is not None else 0.0
        return MilpStatus.NODE_LIMIT.value, float("nan"), nodes, elapsed
    return solution.status.value, solution.value, solution.nodes, solution.wall_time


def _solve_directions(
    problems: Sequence[MilpProblem], options: ReachOptions
) -> List[Tuple[str, float, int, float]]:
    if options.workers > 1 and len(problems) > 1:
        with ProcessPoolExecutor(max_workers=min(options.workers, len(problems))) as pool:
            futures = [pool.submit(_solve_direction, p, options.milp) for p in problems]
            return [f.result() for f in futures]
    return [_solve_direction(p, options.milp) for p in problems]


def _require_initial_set(system: PwaSystem, x0_set: Polytope, tol: float) -> None:
    if x0_set.dim != system.n:
        raise DimensionMismatchError(f"Initial set has dim {x0_set.dim}, state dim is {system.n}")
    if is_empty(x0_set):
        raise EmptySetError("Initial set is empty")
    if not contains(system.X, x0_set, tol):
        raise DomainError("Initial set is not contained in X")


def _template_reach(
    encoded: EncodedSystem, k: int, template: Template, options: ReachOptions, logger=None
) -> ReachResult:
    problems = [encoded.maximize_state(k, row) for row in template.C]
    outcomes = _solve_directions(problems, options)

    optima = np.empty(template.size)
    stats = []
    rows: List[int] = []
    failures: List[str] = []
    for i, (status, value, nodes, elapsed) in enumerate(outcomes):
        stats.append(DirectionStats(status=status, nodes=nodes, wall_time=elapsed))
        plog.log_debug(logger, f"Direction {i} {template.C[i].tolist()}: {status} value={value:.9g} nodes={nodes}")
        if status == MilpStatus.OPTIMAL.value:
            optima[i] = value
            rows.append(i)
        elif status == MilpStatus.UNBOUNDED.value:
            optima[i] = np.inf
            plog.log_warning(logger, f"Reachable set is unbounded along direction {i}; row dropped")
        elif status == MilpStatus.INFEASIBLE.value:
            raise EmptySetError(f"No {k}-step trajectory stays in X (direction {i} infeasible)")
        else:
            optima[i] = np.nan
            failures.append(f"direction {i} stopped on a solver limit")

    if failures:
        plog.log_warning(logger, f"Inconclusive reach: {'; '.join(failures)}")
    result_set = Polytope(H=template.C[rows], h=optima[rows])
    return ReachResult(
        set=result_set,
        directions=template.C,
        optima=optima,
        stats=tuple(stats),
        conclusive=not failures,
        steps=k,
        message="; ".join(failures),
    )


def support_reach(
    system: PwaSystem,
    net: MaxoutNet,
    cfg: BigMConfig,
    k: int,
    x0_set: Polytope,
    v: Sequence[float],
    options: Optional[ReachOptions] = None,
    logger=None,
) -> float:
    """
    Support of the exact k-step reachable set in direction ``v``.

    Parameters:
    system (PwaSystem): The plant
    net (MaxoutNet): The controller
    cfg (BigMConfig): Big-M constants derived for ``system`` and ``net``
    k (int): Number of steps (>= 1)
    x0_set (Polytope): Non-empty initial set inside X
    v (Sequence[float]): Direction

    Returns:
    float: ``max v x(k)`` over all admissible closed-loop trajectories

    Raises:
    InconclusiveError: If the MILP hit a node or time limit
    UnboundedReachError: If the MILP is unbounded
    EmptySetError: If no k-step trajectory from x0_set stays in X
    DomainError: If x0_set is not inside X
    """
    options = options or ReachOptions()
    _require_initial_set(system, x0_set, options.tol_set)
    v_arr = np.asarray(v, dtype=float).reshape(-1)
    if v_arr.size != system.n:
        raise DimensionMismatchError(f"Direction of size {v_arr.size}, state dim is {system.n}")
    encoded = encode_closed_loop(system, net, cfg, k, x0_set, logger=logger)
    return _solve_support(encoded.maximize_state(k, v_arr), options, logger)


def _solve_support(problem: MilpProblem, options: ReachOptions, logger=None) -> float:
    try:
        solution = solve_milp(problem, options.milp, logger)
    except NodeLimitExceededError as e:
        raise InconclusiveError(f"Support MILP inconclusive: {e}") from e
    if solution.status is MilpStatus.UNBOUNDED:
        raise UnboundedReachError("Support MILP is unbounded")
    if solution.status is MilpStatus.INFEASIBLE:
        raise EmptySetError("Support MILP is infeasible: no trajectory stays in X")
    return solution.value


def support_open_loop(
    system: PwaSystem,
    cfg: BigMConfig,
    k: int,
    x0_set: Polytope,
    v: Sequence[float],
    options: Optional[ReachOptions] = None,
    logger=None,
) -> float:
    """Support of the k-step reachable set with free inputs in U (no controller)."""
    options = options or ReachOptions()
    _require_initial_set(system, x0_set, options.tol_set)
    encoded = encode_open_loop(system, cfg, k, x0_set, logger=logger)
    return _solve_support(encoded.maximize_state(k, v), options, logger)


def overapprox_reach(
    system: PwaSystem,
    net: MaxoutNet,
    cfg: BigMConfig,
    k: int,
    x0_set: Polytope,
    template: Template,
    options: Optional[ReachOptions] = None,
    logger=None,
) -> ReachResult:
    """
    Template over-approximation ``{C x <= c}`` of the k-step reachable set.

    The closed loop is encoded once and re-solved with one objective per
    template row. A direction that hits a solver limit is reported in the
    stats, marks the result inconclusive and contributes no row.

    Raises:
    EmptySetError: If x0_set is empty or no trajectory stays in X
    DomainError: If x0_set is not inside X
    """
    options = options or ReachOptions()
    if template.dim != system.n:
        raise DimensionMismatchError(f"Template dim {template.dim}, state dim {system.n}")
    _require_initial_set(system, x0_set, options.tol_set)
    encoded = encode_closed_loop(system, net, cfg, k, x0_set, logger=logger)
    result = _template_reach(encoded, k, template, options, logger)
    plog.log_debug(logger, f"Over-approximation k={k}: c={result.optima.tolist()} nodes={result.total_nodes}")
    return result


def iterate_reach(
    system: PwaSystem,
    net: MaxoutNet,
    cfg: BigMConfig,
    k: int,
    F: Polytope,
    template: Template,
    options: Optional[ReachOptions] = None,
    logger=None,
) -> ReachResult:
    """
    ``k``-fold one-step over-approximation of ``F``.

    Records whether the first one-step set was inside ``F`` (then every
    iterate is inside the previous one). Stops early with an inconclusive
    result when an intermediate set leaves X or a direction hits a limit.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    options = options or ReachOptions()
    result = overapprox_reach(system, net, cfg, 1, F, template, options, logger)
    entry = contains(F, result.set, options.tol_set) if result.conclusive else None
    current = result
    for step in range(2, k + 1):
        if not current.conclusive:
            break
        if not contains(system.X, current.set, options.tol_set):
            plog.log_warning(logger, f"Iterated reach left X after {step - 1} steps")
            return ReachResult(
                set=current.set,
                directions=current.directions,
                optima=current.optima,
                stats=current.stats,
                conclusive=False,
                steps=step - 1,
                entry_invariant=entry,
                message=f"intermediate set after {step - 1} steps is not inside X",
            )
        current = overapprox_reach(system, net, cfg, 1, current.set, template, options, logger)
    return ReachResult(
        set=current.set,
        directions=current.directions,
        optima=current.optima,
        stats=current.stats,
        conclusive=current.conclusive,
        steps=k if current.conclusive else current.steps,
        entry_invariant=entry,
        message=current.message,
    )


def output_range(
    net: MaxoutNet,
    x_set: Polytope,
    cfg: Optional[BigMConfig] = None,
    options: Optional[ReachOptions] = None,
    logger=None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact lower and upper bound of every network output over a bounded set.

    Raises:
    InconclusiveError: If a MILP hit a solver limit
    EmptySetError: If x_set is empty
    """
    options = options or ReachOptions()
    if x_set.dim != net.input_dim:
        raise DimensionMismatchError(f"Set dim {x_set.dim}, network input dim {net.input_dim}")
    x_lo, x_hi = bounding_box(x_set)
    if cfg is None:
        cfg = BigMConfig.for_network(net, x_lo, x_hi)
    builder = MilpBuilder()
    x = builder.add_variables("x[0]", net.input_dim, np.maximum(x_lo, cfg.x_lo), np.minimum(x_hi, cfg.x_hi))
    if x_set.num_rows:
        builder.add_rows([(x, x_set.H)], LE, x_set.h)
    u, _, _ = encode_nn(builder, net, cfg, x, 0)
    base = builder.build()

    m = net.output_dim
    problems = []
    for j in range(m):
        c = np.zeros(base.lp.num_vars)
        c[u[j]] = 1.0
        problems.append(base.with_objective(c))
        problems.append(base.with_objective(-c))
    values = [_solve_support(p, options, logger) for p in problems]
    hi = np.array(values[0::2])
    lo = -np.array(values[1::2])
    plog.log_debug(logger, f"Network output range over set: lo={lo.tolist()} hi={hi.tolist()}")
    return lo, hi
