"""
Branch and bound for mixed-binary linear programs.

The search dives depth-first until the first incumbent is found and then
switches to best-bound node selection. Branching picks the most fractional
binary (ties broken by lowest index). Relaxations are solved from scratch by
:func:`lp_core.solve_lp`; bounds of fixed binaries are removed by the LP's
fixed-variable substitution, so deep nodes are cheap.
"""

import heapq
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Tuple

import numpy as np

import python_logging_framework as plog
from constants import GAP_ABS, INTEGRALITY_TOL
from exceptions import NodeLimitExceededError
from lp_core import DEFAULT_SETTINGS, LinearProgram, LpStatus, SolverSettings, solve_lp


class MilpStatus(str, Enum):
    """Outcome of a branch-and-bound solve."""

    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NODE_LIMIT = "NodeLimit"


@dataclass(frozen=True)
class MilpOptions:
    """Branch-and-bound options."""

    gap_abs: float = GAP_ABS
    node_limit: Optional[int] = None
    time_limit: Optional[float] = None
    integrality_tol: float = INTEGRALITY_TOL
    lp: SolverSettings = DEFAULT_SETTINGS

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> "MilpOptions":
        """Build options from the ``solver`` section of the configuration."""
        return cls(
            gap_abs=section.get("gap_abs", GAP_ABS),
            node_limit=section.get("node_limit"),
            time_limit=section.get("time_limit"),
            integrality_tol=section.get("integrality_tol", INTEGRALITY_TOL),
            lp=SolverSettings.from_config(section),
        )


@dataclass(frozen=True)
class MilpProblem:
    """An LP payload plus the indices of its binary variables."""

    lp: LinearProgram
    binaries: FrozenSet[int]

    def __post_init__(self) -> None:
        binaries = frozenset(int(j) for j in self.binaries)
        n = self.lp.num_vars
        if any(j < 0 or j >= n for j in binaries):
            raise ValueError(f"Binary index out of range for {n} variables")
        idx = np.fromiter(sorted(binaries), dtype=int, count=len(binaries))
        if idx.size and (np.any(self.lp.lo[idx] < 0.0) or np.any(self.lp.hi[idx] > 1.0)):
            raise ValueError("Binary variables must carry bounds within [0, 1]")
        object.__setattr__(self, "binaries", binaries)

    @classmethod
    def create(cls, lp: LinearProgram, binaries: Iterable[int]) -> "MilpProblem":
        """Build a problem, clipping the bounds of binary variables to [0, 1]."""
        idx = np.array(sorted(set(int(j) for j in binaries)), dtype=int)
        lo = lp.lo.copy()
        hi = lp.hi.copy()
        if idx.size:
            lo[idx] = np.maximum(lo[idx], 0.0)
            hi[idx] = np.minimum(hi[idx], 1.0)
        return cls(lp=lp.with_bounds(lo, hi), binaries=frozenset(idx.tolist()))

    @property
    def binary_indices(self) -> np.ndarray:
        return np.array(sorted(self.binaries), dtype=int)

    def with_objective(self, c: np.ndarray) -> "MilpProblem":
        """Return the same constraint system with a new objective."""
        return MilpProblem(lp=self.lp.with_objective(c), binaries=self.binaries)

    def with_bounds(self, lo: np.ndarray, hi: np.ndarray) -> "MilpProblem":
        """Return the same problem with new variable bounds."""
        return MilpProblem(lp=self.lp.with_bounds(lo, hi), binaries=self.binaries)

    def max_violation(self, x: np.ndarray) -> float:
        """
        Largest constraint, bound or integrality violation of an assignment.

        Parameters:
        x (np.ndarray): Full assignment

        Returns:
        float: Worst violation (0 for a feasible assignment)
        """
        worst = self.lp.row_violation(x)
        idx = self.binary_indices
        if idx.size:
            frac = np.abs(x[idx] - np.round(x[idx]))
            worst = max(worst, float(frac.max()))
        return worst


@dataclass(frozen=True)
class MilpSolution:
    """Result of :func:`solve_milp`."""

    status: MilpStatus
    value: float
    assignment: Optional[np.ndarray]
    bound: float
    nodes: int
    wall_time: float

    @property
    def conclusive(self) -> bool:
        return self.status is not MilpStatus.NODE_LIMIT


@dataclass(order=True)
class _Node:
    key: Tuple[float, int]
    lo: np.ndarray = field(compare=False)
    hi: np.ndarray = field(compare=False)
    bound: float = field(compare=False)
    depth: int = field(compare=False)


class BranchAndBound:
    """
    One branch-and-bound search over a fixed problem.

    Instances own their node tree and are single-use; create one per solve.
    """

    def __init__(self, problem: MilpProblem, options: MilpOptions, logger=None):
        self.problem = problem
        self.options = options
        self.logger = logger
        self.binaries = problem.binary_indices
        self.nodes = 0
        self.incumbent: Optional[np.ndarray] = None
        self.incumbent_value = -np.inf
        self._seq = 0
        self._stack: List[_Node] = []
        self._heap: List[_Node] = []

    def _make_node(self, lo: np.ndarray, hi: np.ndarray, bound: float, depth: int) -> _Node:
        self._seq += 1
        return _Node(key=(-bound, self._seq), lo=lo, hi=hi, bound=bound, depth=depth)

    def _open_bound(self) -> float:
        bounds = [node.bound for node in self._stack] + [node.bound for node in self._heap]
        return max([self.incumbent_value] + bounds)

    def _solution(self, status: MilpStatus, started: float, bound: Optional[float] = None) -> MilpSolution:
        value = self.incumbent_value if self.incumbent is not None else -np.inf
        return MilpSolution(
            status=status,
            value=float(value),
            assignment=None if self.incumbent is None else self.incumbent.copy(),
            bound=float(value if bound is None else bound),
            nodes=self.nodes,
            wall_time=time.perf_counter() - started,
        )

    def _pop(self) -> _Node:
        if self.incumbent is None and self._stack:
            return self._stack.pop()
        if self._stack:
            for node in self._stack:
                heapq.heappush(self._heap, node)
            self._stack.clear()
        return heapq.heappop(self._heap)

    def _push_children(self, node: _Node, j: int, xj: float, bound: float) -> None:
        down_hi = node.hi.copy()
        down_hi[j] = 0.0
        up_lo = node.lo.copy()
        up_lo[j] = 1.0
        down = self._make_node(node.lo, down_hi, bound, node.depth + 1)
        up = self._make_node(up_lo, node.hi, bound, node.depth + 1)
        if self.incumbent is None:
            # Stack is LIFO: the side nearer to the relaxation value goes last.
            first, second = (down, up) if xj >= 0.5 else (up, down)
            self._stack.extend([first, second])
        else:
            heapq.heappush(self._heap, down)
            heapq.heappush(self._heap, up)

    def _try_incumbent(self, node: _Node, x: np.ndarray) -> None:
        lo = node.lo.copy()
        hi = node.hi.copy()
        rounded = np.round(x[self.binaries])
        lo[self.binaries] = rounded
        hi[self.binaries] = rounded
        result = solve_lp(self.problem.lp.with_bounds(lo, hi), self.options.lp)
        if result.status is LpStatus.OPTIMAL and result.value > self.incumbent_value:
            self.incumbent = result.x
            self.incumbent_value = result.value
            plog.log_debug(self.logger, f"B&B node {self.nodes}: incumbent {result.value:.9g}")

    def run(self) -> MilpSolution:
        """Run the search to completion or to a limit."""
        started = time.perf_counter()
        opts = self.options
        lp = self.problem.lp
        self._stack.append(self._make_node(lp.lo.copy(), lp.hi.copy(), np.inf, 0))

        while self._stack or self._heap:
            limit_hit = opts.node_limit is not None and self.nodes >= opts.node_limit
            time_hit = opts.time_limit is not None and time.perf_counter() - started > opts.time_limit
            if limit_hit or time_hit:
                reason = "node limit" if limit_hit else "time limit"
                partial = self._solution(MilpStatus.NODE_LIMIT, started, bound=self._open_bound())
                plog.log_warning(self.logger, f"B&B stopped on {reason} after {self.nodes} nodes")
                raise NodeLimitExceededError(
                    f"Branch and bound stopped on {reason} after {self.nodes} nodes "
                    f"(incumbent {partial.value:.6g}, bound {partial.bound:.6g})",
                    solution=partial,
                )

            node = self._pop()
            if node.bound <= self.incumbent_value + opts.gap_abs:
                continue

            result = solve_lp(lp.with_bounds(node.lo, node.hi), opts.lp)
            self.nodes += 1
            if result.status is LpStatus.INFEASIBLE:
                continue
            if result.status is LpStatus.UNBOUNDED:
                return self._resolve_unbounded(started)
            if result.value <= self.incumbent_value + opts.gap_abs:
                continue

            x = result.x
            values = x[self.binaries] if self.binaries.size else np.zeros(0)
            frac = np.abs(values - np.round(values))
            if frac.size == 0 or frac.max() <= opts.integrality_tol:
                self._try_incumbent(node, x)
                continue

            # Most fractional binary, lowest index on ties (argmax returns the first).
            distance = np.minimum(values - np.floor(values), np.ceil(values) - values)
            pos = int(np.argmax(distance))
            j = int(self.binaries[pos])
            self._push_children(node, j, float(x[j]), result.value)

        if self.incumbent is None:
            return self._solution(MilpStatus.INFEASIBLE, started, bound=-np.inf)
        return self._solution(MilpStatus.OPTIMAL, started)

    def _resolve_unbounded(self, started: float) -> MilpSolution:
        # Binaries are bounded, so an unbounded relaxation means an unbounded
        # MILP exactly when some binary assignment is feasible.
        zero = self.problem.with_objective(np.zeros(self.problem.lp.num_vars))
        probe = BranchAndBound(zero, self.options, self.logger).run()
        self.nodes += probe.nodes
        if probe.status is MilpStatus.INFEASIBLE:
            return self._solution(MilpStatus.INFEASIBLE, started, bound=-np.inf)
        return MilpSolution(
            status=MilpStatus.UNBOUNDED,
            value=np.inf,
            assignment=probe.assignment,
            bound=np.inf,
            nodes=self.nodes,
            wall_time=time.perf_counter() - started,
        )


def solve_milp(problem: MilpProblem, options: Optional[MilpOptions] = None, logger=None) -> MilpSolution:
    """
    Maximize a mixed-binary linear program.

    Parameters:
    problem (MilpProblem): Problem with marked binaries
    options (MilpOptions): Gap, limits and LP tolerances
    logger (logging.Logger): Optional logger for solve statistics

    Returns:
    MilpSolution: Optimal, Infeasible or Unbounded result

    Raises:
    NodeLimitExceededError: If a node or time limit stops the search; the
        partial solution is attached as ``solution``
    """
    options = options or MilpOptions()
    solver = BranchAndBound(problem, options, logger)
    solution = solver.run()
    plog.log_debug(
        logger,
        f"MILP {solution.status.value}: value={solution.value:.9g} nodes={solution.nodes} "
        f"time={solution.wall_time:.3f}s",
    )
    return solution


def find_feasible(problem: MilpProblem, options: Optional[MilpOptions] = None, logger=None) -> MilpSolution:
    """
    Find any feasible assignment (zero objective).

    The depth-first dive stops at the first integral leaf because every other
    node is then pruned by its zero bound.
    """
    zero = problem.with_objective(np.zeros(problem.lp.num_vars))
    return solve_milp(zero, options, logger)
