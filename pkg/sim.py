"""
Closed-loop simulation and brute-force oracles.

The simulator evaluates the plant and controller pointwise and is the ground
truth the encodings are tested against. :func:`pattern_enum_reach` computes
one-step supports by enumerating every (region, activation pattern) pair and
solving the induced LP, which is exact for small networks.
"""

import itertools
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

import python_logging_framework as plog
from constants import DOMAIN_TOL, MAX_PATTERNS, SET_TOL
from exceptions import DimensionMismatchError, EmptySetError, NoRegionError, TooManyPatternsError
from geometry import UNBOUNDED, Polytope, sample_polytope
from lp_core import LinearProgram, LpStatus, SolverSettings, solve_lp
from models import DualModeController, MaxoutNet, PwaSystem, eval_controller, region_index, require_in_domain

if TYPE_CHECKING:
    from certify import Certificate

Controller = Union[MaxoutNet, DualModeController]


@dataclass(frozen=True)
class Trajectory:
    """
    States ``x(0..K)``, inputs ``u(0..K-1)`` and per-step (region, branch) modes.

    ``exited`` marks a run that stopped because the last state left X; that
    state is kept so the violation is visible.
    """

    states: np.ndarray
    inputs: np.ndarray
    modes: Tuple[Tuple[int, str], ...]
    exited: bool = False

    @property
    def length(self) -> int:
        return len(self.modes)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def to_frame(self) -> pd.DataFrame:
        """One row per state: ``k, x1.., u1.., region, branch`` (no input on the last row)."""
        n = self.states.shape[1]
        m = self.inputs.shape[1] if self.inputs.ndim == 2 and self.inputs.size else 0
        rows = []
        for k, x in enumerate(self.states):
            row = {"k": k}
            row.update({f"x{i + 1}": float(x[i]) for i in range(n)})
            if k < self.length:
                row.update({f"u{j + 1}": float(self.inputs[k][j]) for j in range(m)})
                row["region"] = self.modes[k][0]
                row["branch"] = self.modes[k][1]
            else:
                row.update({f"u{j + 1}": np.nan for j in range(m)})
                row["region"] = None
                row["branch"] = ""
            rows.append(row)
        return pd.DataFrame(rows)


def rollout(system: PwaSystem, controller: Controller, x0: Sequence[float], K: int, logger=None) -> Trajectory:
    """
    Simulate ``K`` steps of the closed loop.

    Halts early, with ``exited=True``, at the first state outside X.

    Raises:
    DomainError: If x0 is outside X
    NoRegionError: If some (x, u) lies in no region
    """
    x = require_in_domain(system, x0)
    states = [x]
    inputs: List[np.ndarray] = []
    modes: List[Tuple[int, str]] = []
    exited = False
    for k in range(K):
        u, branch = eval_controller(controller, x)
        i = region_index(system, x, u)
        x = system.regions[i].step(x, u)
        inputs.append(u)
        modes.append((i, branch))
        states.append(x)
        if not system.X.contains_point(x, DOMAIN_TOL):
            plog.log_debug(logger, f"Trajectory left X at step {k + 1}: x = {x.tolist()}")
            exited = True
            break
    m = system.m
    return Trajectory(
        states=np.vstack(states),
        inputs=np.vstack(inputs) if inputs else np.zeros((0, m)),
        modes=tuple(modes),
        exited=exited,
    )


def _pattern_count(system: PwaSystem, net: MaxoutNet) -> int:
    count = system.region_count
    for layer in net.layers:
        count *= layer.channels**layer.width
    return count


def _pattern_affine(
    net: MaxoutNet, pattern: Sequence[Sequence[int]], n: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Affine output ``u = Mu x + cu`` under a fixed activation pattern, and the
    rows ``G x <= g`` that make the pattern's winners maximal.
    """
    M = np.eye(n)
    c = np.zeros(n)
    G_rows: List[np.ndarray] = []
    g_rows: List[float] = []
    for layer, winners in zip(net.layers, pattern):
        Z = layer.W @ M
        z = layer.W @ c + layer.b
        p = layer.channels
        next_M = np.empty((layer.width, n))
        next_c = np.empty(layer.width)
        for neuron, w in enumerate(winners):
            win = neuron * p + w
            for j in range(neuron * p, (neuron + 1) * p):
                if j == win:
                    continue
                # z_j <= z_win
                G_rows.append(Z[j] - Z[win])
                g_rows.append(z[win] - z[j])
            next_M[neuron] = Z[win]
            next_c[neuron] = z[win]
        M, c = next_M, next_c
    Mu = net.W_out @ M
    cu = net.W_out @ c + net.b_out
    G = np.vstack(G_rows) if G_rows else np.zeros((0, n))
    return Mu, cu, G, np.array(g_rows)


def pattern_enum_reach(
    system: PwaSystem,
    net: MaxoutNet,
    x0_set: Polytope,
    v: Sequence[float],
    max_patterns: int = MAX_PATTERNS,
    settings: Optional[SolverSettings] = None,
    logger=None,
) -> float:
    """
    One-step support ``max v x(1)`` by exhaustive (region, pattern) enumeration.

    Each combination fixes the network and the plant to affine maps on a
    polyhedron, so its contribution is a plain LP over ``x(0)``.

    Raises:
    TooManyPatternsError: If there are more than ``max_patterns`` combinations
    EmptySetError: If no combination is feasible
    """
    n = system.n
    v_arr = np.asarray(v, dtype=float).reshape(-1)
    if v_arr.size != n or x0_set.dim != n:
        raise DimensionMismatchError("Direction and initial set must match the state dimension")
    total = _pattern_count(system, net)
    if total > max_patterns:
        raise TooManyPatternsError(f"{total} region/pattern combinations exceed the limit of {max_patterns}")

    per_layer = [list(itertools.product(range(layer.channels), repeat=layer.width)) for layer in net.layers]
    best = -np.inf
    feasible = 0
    for pattern in itertools.product(*per_layer):
        Mu, cu, G, g = _pattern_affine(net, pattern, n)
        for region in system.regions:
            Hx = region.cell.H[:, :n]
            Hu = region.cell.H[:, n:]
            A = np.vstack([system.X.H, x0_set.H, G, Hx + Hu @ Mu])
            b = np.concatenate([system.X.h, x0_set.h, g, region.cell.h - Hu @ cu])
            objective = v_arr @ (region.A + region.B @ Mu)
            offset = float(v_arr @ (region.B @ cu + region.p))
            result = solve_lp(LinearProgram.create(c=objective, A=A, b=b), settings)
            if result.status is LpStatus.INFEASIBLE:
                continue
            feasible += 1
            if result.status is LpStatus.UNBOUNDED:
                return UNBOUNDED
            best = max(best, result.value + offset)
    if not feasible:
        raise EmptySetError("No region/pattern combination is feasible")
    plog.log_debug(logger, f"Pattern enumeration: {total} combinations, {feasible} feasible, support {best:.9g}")
    return float(best)


@dataclass(frozen=True)
class AuditReport:
    """Seeded one-step falsification report; ``escapees`` are start points whose successor left F."""

    seed: int
    samples: int
    escapees: np.ndarray
    tolerance: float = SET_TOL

    @property
    def passed(self) -> bool:
        return self.escapees.shape[0] == 0

    def to_frame(self) -> pd.DataFrame:
        dim = self.escapees.shape[1] if self.escapees.ndim == 2 else 0
        return pd.DataFrame(self.escapees, columns=[f"x{i + 1}" for i in range(dim)])


def grid_audit(
    system: PwaSystem,
    controller: Controller,
    F: Polytope,
    samples: int,
    seed: int = 0,
    tol: float = SET_TOL,
    logger=None,
) -> AuditReport:
    """
    Sample ``F``, apply one closed-loop step and report successors outside ``F``.

    Points whose (x, u) lies in no region count as escapees. An empty ``F``
    gives an empty report.
    """
    points = sample_polytope(F, samples, seed)
    escapees = []
    for x in points:
        try:
            u, _ = eval_controller(controller, x)
            i = region_index(system, x, u)
        except NoRegionError:
            escapees.append(x)
            continue
        if not F.contains_point(system.regions[i].step(x, u), tol):
            escapees.append(x)
    report = AuditReport(
        seed=seed,
        samples=int(points.shape[0]),
        escapees=np.vstack(escapees) if escapees else np.zeros((0, F.dim)),
        tolerance=tol,
    )
    plog.log_info(logger, f"Grid audit: {report.samples} samples, {report.escapees.shape[0]} escapees (seed {seed})")
    return report


@dataclass(frozen=True)
class UubAuditReport:
    """Trajectory audit of a boundedness certificate."""

    seed: int
    trajectories: int
    x_violations: int
    fmax_exits: int
    late_entries: int
    fmin_exits: int
    failures: Tuple[Tuple[float, ...], ...] = field(default=())

    @property
    def passed(self) -> bool:
        return not (self.x_violations or self.fmax_exits or self.late_entries or self.fmin_exits)


def audit_uub(
    system: PwaSystem,
    controller: Controller,
    cert: "Certificate",
    count: int,
    seed: int = 0,
    extra_steps: int = 10,
    tol: float = SET_TOL,
    logger=None,
) -> UubAuditReport:
    """
    Roll out trajectories from seeded uniform starts in ``F_max``.

    Every trajectory must stay in X and ``F_max``, be inside ``F_min`` from
    step ``k_star`` on, and stay there for ``extra_steps`` further steps.
    """
    starts = sample_polytope(cert.f_max, count, seed)
    horizon = cert.k_star + extra_steps
    x_violations = fmax_exits = late = fmin_exits = 0
    failures = []
    for x0 in starts:
        traj = rollout(system, controller, x0, horizon)
        failed = False
        if traj.exited:
            x_violations += 1
            failed = True
        in_fmax = cert.f_max.contains_points(traj.states, tol)
        if not np.all(in_fmax):
            fmax_exits += 1
            failed = True
        tail = traj.states[cert.k_star :]
        in_fmin = cert.f_min.contains_points(tail, tol) if tail.size else np.zeros(0, dtype=bool)
        if not tail.size or not in_fmin[0]:
            late += 1
            failed = True
        elif not np.all(in_fmin):
            fmin_exits += 1
            failed = True
        if failed:
            failures.append(tuple(float(v) for v in x0))
    report = UubAuditReport(
        seed=seed,
        trajectories=int(starts.shape[0]),
        x_violations=x_violations,
        fmax_exits=fmax_exits,
        late_entries=late,
        fmin_exits=fmin_exits,
        failures=tuple(failures),
    )
    plog.log_info(
        logger,
        f"UUB audit: {report.trajectories} trajectories, {len(failures)} failures "
        f"(X {x_violations}, F_max {fmax_exits}, late {late}, F_min exits {fmin_exits})",
    )
    return report
