"""
Mixed-integer linear encodings of the closed loop.

Builds, on a shared :class:`MilpBuilder`:

- region selection: ``H_i (x, u) <= h_i + M_i (1 - gamma_i)`` and ``sum gamma = 1``;
- the PWA step through per-region copies ``xt_i`` that equal the selected
  affine successor and vanish otherwise, ``x(k+1) = sum_i xt_i``;
- maxout layers with the exact scheme: ``q_l >= z_j`` for every channel of the
  neuron, ``q_l <= z_j + S_j (1 - delta_j)``, ``sum delta = 1`` per neuron;
- the K-step closed loop from an initial polytope.

Big-M constants come from interval arithmetic over the bounding box of
X x U, where the input box is widened to the interval enclosure of the
network output so that the constants stay valid for every trajectory the
encoding admits.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import python_logging_framework as plog
from exceptions import DimensionMismatchError, EmptySetError, UnboundedDomainError, UnboundedSetError
from geometry import Polytope, bounding_box
from lp_core import EQ, LE, LinearProgram
from milp_core import MilpProblem
from models import MaxoutNet, PwaSystem

Term = Tuple[np.ndarray, np.ndarray]


def _interval_max(M: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Row-wise maximum of ``M @ xi`` over the box ``lo <= xi <= hi``."""
    return np.maximum(M * lo, M * hi).sum(axis=1)


def _interval_min(M: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.minimum(M * lo, M * hi).sum(axis=1)


@dataclass(frozen=True)
class LayerBounds:
    """Interval enclosure of one hidden layer and the channel slacks derived from it."""

    z_lo: np.ndarray
    z_hi: np.ndarray
    q_lo: np.ndarray
    q_hi: np.ndarray
    slack: np.ndarray


def propagate_intervals(
    net: MaxoutNet, lo: Sequence[float], hi: Sequence[float], margin: float = 1e-6
) -> Tuple[Tuple[LayerBounds, ...], np.ndarray, np.ndarray]:
    """
    Interval propagation through the network over the input box ``[lo, hi]``.

    Returns the per-layer bounds and the output enclosure. The slack of
    channel ``j`` in neuron ``l`` bounds ``q_l - z_j`` from above.
    """
    q_lo = np.asarray(lo, dtype=float).reshape(-1)
    q_hi = np.asarray(hi, dtype=float).reshape(-1)
    layers = []
    for layer in net.layers:
        z_lo = _interval_min(layer.W, q_lo, q_hi) + layer.b
        z_hi = _interval_max(layer.W, q_lo, q_hi) + layer.b
        grouped_lo = z_lo.reshape(layer.width, layer.channels)
        grouped_hi = z_hi.reshape(layer.width, layer.channels)
        q_lo = grouped_lo.max(axis=1)
        q_hi = grouped_hi.max(axis=1)
        slack = np.repeat(q_hi, layer.channels) - z_lo
        slack = slack + margin * (1.0 + np.abs(slack))
        layers.append(LayerBounds(z_lo=z_lo, z_hi=z_hi, q_lo=q_lo, q_hi=q_hi, slack=slack))
    out_lo = _interval_min(net.W_out, q_lo, q_hi) + net.b_out
    out_hi = _interval_max(net.W_out, q_lo, q_hi) + net.b_out
    return tuple(layers), out_lo, out_hi


@dataclass(frozen=True)
class BigMConfig:
    """
    Big-M constants of one encoding.

    ``region_M[i][r]`` relaxes row ``r`` of cell ``i``; ``state_M[i][c]``
    bounds component ``c`` of region ``i``'s affine successor over the input
    box; ``layer_bounds`` feed the maxout slacks. ``x_lo..u_hi`` is the box the
    constants were derived on.
    """

    region_M: Tuple[np.ndarray, ...]
    state_M: Tuple[np.ndarray, ...]
    layer_bounds: Tuple[LayerBounds, ...]
    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    mode: str = "auto"

    def __post_init__(self) -> None:
        arrays = list(self.region_M) + list(self.state_M) + [self.x_lo, self.x_hi, self.u_lo, self.u_hi]
        for lb in self.layer_bounds:
            arrays += [lb.q_lo, lb.q_hi, lb.slack]
        if any(not np.all(np.isfinite(a)) for a in arrays):
            raise UnboundedDomainError("Big-M constants must be finite")

    @classmethod
    def for_network(
        cls, net: MaxoutNet, x_lo: Sequence[float], x_hi: Sequence[float], margin: float = 1e-6
    ) -> "BigMConfig":
        """Constants for encoding only the network over the input box ``[x_lo, x_hi]``."""
        layer_bounds, out_lo, out_hi = propagate_intervals(net, x_lo, x_hi, margin)
        return cls(
            region_M=(),
            state_M=(),
            layer_bounds=layer_bounds,
            x_lo=np.asarray(x_lo, dtype=float),
            x_hi=np.asarray(x_hi, dtype=float),
            u_lo=out_lo,
            u_hi=out_hi,
        )


def derive_big_m(
    system: PwaSystem,
    net: Optional[MaxoutNet],
    margin: float = 1e-6,
    mode: str = "auto",
    manual_value: Optional[float] = None,
    logger=None,
) -> BigMConfig:
    """
    Derive big-M constants by interval arithmetic.

    Parameters:
    system (PwaSystem): The plant (X and U must be bounded)
    net (MaxoutNet): Controller, or None for the open-loop encoding
    margin (float): Relative safety margin added to every constant
    mode (str): ``auto`` or ``manual``
    manual_value (float): Constant used for all region and step rows in manual mode
    logger: Optional logger

    Returns:
    BigMConfig: The constants

    Raises:
    UnboundedDomainError: If X or U is unbounded
    """
    try:
        x_lo, x_hi = bounding_box(system.X)
        u_lo, u_hi = bounding_box(system.U)
    except (UnboundedSetError, EmptySetError) as e:
        raise UnboundedDomainError(f"Big-M derivation needs bounded, non-empty X and U: {e}") from e

    if net is not None:
        layer_bounds, out_lo, out_hi = propagate_intervals(net, x_lo, x_hi, margin)
        u_lo = np.minimum(u_lo, out_lo)
        u_hi = np.maximum(u_hi, out_hi)
    else:
        layer_bounds = ()

    box_lo = np.concatenate([x_lo, u_lo])
    box_hi = np.concatenate([x_hi, u_hi])
    region_M = []
    state_M = []
    for region in system.regions:
        excess = np.maximum(_interval_max(region.cell.H, box_lo, box_hi) - region.cell.h, 0.0)
        region_M.append(excess + margin * (1.0 + excess))
        AB = np.hstack([region.A, region.B])
        upper = _interval_max(AB, box_lo, box_hi) + region.p
        lower = _interval_min(AB, box_lo, box_hi) + region.p
        radius = np.maximum(np.abs(upper), np.abs(lower))
        state_M.append(radius + margin * (1.0 + radius))

    if mode == "manual":
        if manual_value is None:
            raise ValueError("manual big-M mode needs a value")
        smallest = min(float(np.max(M, initial=0.0)) for M in region_M + state_M)
        largest = max(float(np.max(M, initial=0.0)) for M in region_M + state_M)
        if manual_value < largest:
            plog.log_warning(
                logger,
                f"Manual big-M {manual_value:g} is below the derived maximum {largest:g}; "
                "the encoding may exclude admissible trajectories",
            )
        plog.log_debug(logger, f"Manual big-M {manual_value:g} replaces derived range [{smallest:g}, {largest:g}]")
        region_M = [np.full_like(M, manual_value) for M in region_M]
        state_M = [np.full_like(M, manual_value) for M in state_M]

    plog.log_debug(
        logger,
        f"Big-M ({mode}): max region M={max(float(np.max(M, initial=0.0)) for M in region_M):.4g}, "
        f"max state M={max(float(np.max(M)) for M in state_M):.4g}, input box u in [{u_lo}, {u_hi}]",
    )
    return BigMConfig(
        region_M=tuple(region_M),
        state_M=tuple(state_M),
        layer_bounds=layer_bounds,
        x_lo=x_lo,
        x_hi=x_hi,
        u_lo=u_lo,
        u_hi=u_hi,
        mode=mode,
    )


class MilpBuilder:
    """Accumulates named variables and dense row blocks, then emits a :class:`MilpProblem`."""

    def __init__(self) -> None:
        self.names: List[str] = []
        self._lo: List[float] = []
        self._hi: List[float] = []
        self._binary: List[int] = []
        self._blocks: List[Tuple[List[Term], str, np.ndarray]] = []
        self.num_rows = 0

    @property
    def num_vars(self) -> int:
        return len(self.names)

    def add_variables(self, name: str, size: int, lo=-np.inf, hi=np.inf, binary: bool = False) -> np.ndarray:
        """Add ``size`` variables named ``name[0..size-1]`` and return their indices."""
        start = self.num_vars
        lo_arr = np.broadcast_to(np.asarray(lo, dtype=float), (size,))
        hi_arr = np.broadcast_to(np.asarray(hi, dtype=float), (size,))
        for j in range(size):
            self.names.append(f"{name}_{j}")
        self._lo.extend(lo_arr.tolist())
        self._hi.extend(hi_arr.tolist())
        idx = np.arange(start, start + size)
        if binary:
            self._binary.extend(idx.tolist())
        return idx

    def add_rows(self, terms: Sequence[Term], sense: str, rhs) -> None:
        """Add rows ``sum_t M_t @ x[idx_t]  sense  rhs``."""
        rhs_arr = np.atleast_1d(np.asarray(rhs, dtype=float))
        checked = []
        for idx, M in terms:
            M = np.atleast_2d(np.asarray(M, dtype=float))
            if M.shape != (rhs_arr.size, len(idx)):
                raise DimensionMismatchError(f"Row block of shape {M.shape} for {rhs_arr.size} rows x {len(idx)} vars")
            checked.append((np.asarray(idx, dtype=int), M))
        self._blocks.append((checked, sense, rhs_arr))
        self.num_rows += rhs_arr.size

    def build(self, objective: Optional[np.ndarray] = None) -> MilpProblem:
        N = self.num_vars
        A = np.zeros((self.num_rows, N))
        b = np.zeros(self.num_rows)
        senses: List[str] = []
        r0 = 0
        for terms, sense, rhs in self._blocks:
            r1 = r0 + rhs.size
            for idx, M in terms:
                A[r0:r1, idx] += M
            b[r0:r1] = rhs
            senses.extend([sense] * rhs.size)
            r0 = r1
        c = np.zeros(N) if objective is None else np.asarray(objective, dtype=float)
        lp = LinearProgram(c=c, A=A, senses=tuple(senses), b=b, lo=np.array(self._lo), hi=np.array(self._hi))
        return MilpProblem.create(lp, self._binary)


def encode_region_selection(
    builder: MilpBuilder, system: PwaSystem, cfg: BigMConfig, x_idx: np.ndarray, u_idx: np.ndarray, k: int
) -> np.ndarray:
    """
    Region selection at step ``k``: ``gamma_i = 1`` forces ``(x, u)`` into cell ``i``.

    Returns the indices of ``gamma(k)``.
    """
    n = system.n
    gamma = builder.add_variables(f"gamma[{k}]", system.region_count, 0.0, 1.0, binary=True)
    for i, region in enumerate(system.regions):
        H = region.cell.H
        if not H.shape[0]:
            continue
        M = cfg.region_M[i]
        builder.add_rows(
            [(x_idx, H[:, :n]), (u_idx, H[:, n:]), (gamma[[i]], M[:, None])],
            LE,
            region.cell.h + M,
        )
    builder.add_rows([(gamma, np.ones((1, system.region_count)))], EQ, [1.0])
    return gamma


def encode_pwa_step(
    builder: MilpBuilder,
    system: PwaSystem,
    cfg: BigMConfig,
    x_idx: np.ndarray,
    u_idx: np.ndarray,
    gamma: np.ndarray,
    x_next: np.ndarray,
    k: int,
) -> List[np.ndarray]:
    """
    PWA step from ``x(k)`` to ``x(k+1)`` through the per-region copies ``xt_i``.

    Returns the indices of the copies, one array per region.
    """
    n = system.n
    eye = np.eye(n)
    copies = []
    for i, region in enumerate(system.regions):
        M = cfg.state_M[i]
        xt = builder.add_variables(f"xt{i}[{k + 1}]", n, -M, M)
        g = gamma[[i]]
        Mc = M[:, None]
        builder.add_rows([(x_idx, region.A), (u_idx, region.B), (xt, -eye), (g, Mc)], LE, M - region.p)
        builder.add_rows([(x_idx, -region.A), (u_idx, -region.B), (xt, eye), (g, Mc)], LE, M + region.p)
        builder.add_rows([(xt, eye), (g, -Mc)], LE, np.zeros(n))
        builder.add_rows([(xt, -eye), (g, -Mc)], LE, np.zeros(n))
        copies.append(xt)
    builder.add_rows([(xt, eye) for xt in copies] + [(x_next, -eye)], EQ, np.zeros(n))
    return copies


def encode_nn(
    builder: MilpBuilder, net: MaxoutNet, cfg: BigMConfig, q0_idx: np.ndarray, k: int
) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """
    Maxout network on input variables ``q0_idx``.

    Returns the output variables ``u(k)`` and, per hidden layer, the neuron
    outputs ``q`` and channel selectors ``delta``.
    """
    q_prev = np.asarray(q0_idx, dtype=int)
    qs: List[np.ndarray] = []
    deltas: List[np.ndarray] = []
    for i, layer in enumerate(net.layers):
        lb = cfg.layer_bounds[i]
        w, p = layer.width, layer.channels
        q = builder.add_variables(f"q{i + 1}[{k}]", w, lb.q_lo, lb.q_hi)
        delta = builder.add_variables(f"delta{i + 1}[{k}]", p * w, 0.0, 1.0, binary=True)
        select = np.zeros((p * w, w))
        select[np.arange(p * w), np.arange(p * w) // p] = 1.0
        builder.add_rows([(q_prev, layer.W), (q, -select)], LE, -layer.b)
        builder.add_rows([(q, select), (q_prev, -layer.W), (delta, np.diag(lb.slack))], LE, layer.b + lb.slack)
        builder.add_rows([(delta, select.T)], EQ, np.ones(w))
        qs.append(q)
        deltas.append(delta)
        q_prev = q
    m = net.output_dim
    u = builder.add_variables(f"u[{k}]", m, cfg.u_lo, cfg.u_hi)
    builder.add_rows([(u, np.eye(m)), (q_prev, -net.W_out)], EQ, net.b_out)
    return u, qs, deltas


@dataclass(frozen=True)
class EncodedSystem:
    """A K-step encoding with the index maps of all its variable groups."""

    problem: MilpProblem
    x: Tuple[np.ndarray, ...]
    u: Tuple[np.ndarray, ...]
    x_tilde: Tuple[Tuple[np.ndarray, ...], ...]
    gamma: Tuple[np.ndarray, ...]
    q: Tuple[Tuple[np.ndarray, ...], ...]
    delta: Tuple[Tuple[np.ndarray, ...], ...]
    horizon: int
    names: Tuple[str, ...] = field(default=())

    @property
    def num_binaries(self) -> int:
        return len(self.problem.binaries)

    def state_objective(self, k: int, v: Sequence[float]) -> np.ndarray:
        """Objective vector of ``v x(k)``."""
        c = np.zeros(self.problem.lp.num_vars)
        c[self.x[k]] = np.asarray(v, dtype=float)
        return c

    def maximize_state(self, k: int, v: Sequence[float]) -> MilpProblem:
        """The encoding with objective ``maximize v x(k)``."""
        return self.problem.with_objective(self.state_objective(k, v))

    def maximize_input(self, k: int, w: Sequence[float]) -> MilpProblem:
        """The encoding with objective ``maximize w u(k)``."""
        c = np.zeros(self.problem.lp.num_vars)
        c[self.u[k]] = np.asarray(w, dtype=float)
        return self.problem.with_objective(c)

    def fix_initial_state(self, x0: Sequence[float]) -> MilpProblem:
        """The encoding with ``x(0)`` fixed through its bounds."""
        lo = self.problem.lp.lo.copy()
        hi = self.problem.lp.hi.copy()
        x0_arr = np.asarray(x0, dtype=float)
        lo[self.x[0]] = x0_arr
        hi[self.x[0]] = x0_arr
        return self.problem.with_bounds(lo, hi)

    def trajectory(self, assignment: np.ndarray) -> np.ndarray:
        """States ``x(0..K)`` read from an assignment, one per row."""
        return np.vstack([assignment[idx] for idx in self.x])

    def selected_regions(self, assignment: np.ndarray) -> List[int]:
        return [int(np.argmax(assignment[g])) for g in self.gamma]


def _check_initial_set(system: PwaSystem, x0_set: Polytope) -> None:
    if x0_set.dim != system.n:
        raise DimensionMismatchError(f"Initial set has dim {x0_set.dim}, state dim is {system.n}")


def encode_closed_loop(
    system: PwaSystem, net: MaxoutNet, cfg: BigMConfig, K: int, x0_set: Polytope, logger=None
) -> EncodedSystem:
    """
    K-step closed loop ``x(k+1) = A_i x(k) + B_i Phi(x(k)) + p_i`` from ``x(0)`` in ``x0_set``.

    States ``x(0..K-1)`` are constrained to X (the plant is only defined
    there); ``x(K)`` is free.

    Raises:
    ValueError: If K < 1
    DimensionMismatchError: If the initial set or network does not match the plant
    """
    if K < 1:
        raise ValueError(f"Horizon must be >= 1, got {K}")
    _check_initial_set(system, x0_set)
    if net.input_dim != system.n or net.output_dim != system.m:
        raise DimensionMismatchError("Network dimensions do not match the plant")

    builder = MilpBuilder()
    xs = [builder.add_variables("x[0]", system.n, cfg.x_lo, cfg.x_hi)]
    if x0_set.num_rows:
        builder.add_rows([(xs[0], x0_set.H)], LE, x0_set.h)
    us, copies, gammas, qs, deltas = [], [], [], [], []
    for k in range(K):
        builder.add_rows([(xs[k], system.X.H)], LE, system.X.h)
        u, q, delta = encode_nn(builder, net, cfg, xs[k], k)
        gamma = encode_region_selection(builder, system, cfg, xs[k], u, k)
        inner = k + 1 < K
        x_next = builder.add_variables(
            f"x[{k + 1}]", system.n, cfg.x_lo if inner else -np.inf, cfg.x_hi if inner else np.inf
        )
        xt = encode_pwa_step(builder, system, cfg, xs[k], u, gamma, x_next, k)
        xs.append(x_next)
        us.append(u)
        copies.append(tuple(xt))
        gammas.append(gamma)
        qs.append(tuple(q))
        deltas.append(tuple(delta))

    problem = builder.build()
    plog.log_debug(
        logger,
        f"Encoded closed loop K={K}: {problem.lp.num_vars} variables, {problem.lp.num_rows} rows, "
        f"{len(problem.binaries)} binaries",
    )
    return EncodedSystem(
        problem=problem,
        x=tuple(xs),
        u=tuple(us),
        x_tilde=tuple(copies),
        gamma=tuple(gammas),
        q=tuple(qs),
        delta=tuple(deltas),
        horizon=K,
        names=tuple(builder.names),
    )


def encode_open_loop(system: PwaSystem, cfg: BigMConfig, K: int, x0_set: Polytope, logger=None) -> EncodedSystem:
    """
    K-step open loop with free inputs ``u(k)`` in U.

    ``cfg`` should come from :func:`derive_big_m` with ``net=None``.
    """
    if K < 1:
        raise ValueError(f"Horizon must be >= 1, got {K}")
    _check_initial_set(system, x0_set)
    builder = MilpBuilder()
    xs = [builder.add_variables("x[0]", system.n, cfg.x_lo, cfg.x_hi)]
    if x0_set.num_rows:
        builder.add_rows([(xs[0], x0_set.H)], LE, x0_set.h)
    us, copies, gammas = [], [], []
    for k in range(K):
        builder.add_rows([(xs[k], system.X.H)], LE, system.X.h)
        u = builder.add_variables(f"u[{k}]", system.m, cfg.u_lo, cfg.u_hi)
        builder.add_rows([(u, system.U.H)], LE, system.U.h)
        gamma = encode_region_selection(builder, system, cfg, xs[k], u, k)
        inner = k + 1 < K
        x_next = builder.add_variables(
            f"x[{k + 1}]", system.n, cfg.x_lo if inner else -np.inf, cfg.x_hi if inner else np.inf
        )
        xt = encode_pwa_step(builder, system, cfg, xs[k], u, gamma, x_next, k)
        xs.append(x_next)
        us.append(u)
        copies.append(tuple(xt))
        gammas.append(gamma)

    problem = builder.build()
    plog.log_debug(logger, f"Encoded open loop K={K}: {problem.lp.num_vars} variables, {len(problem.binaries)} binaries")
    return EncodedSystem(
        problem=problem,
        x=tuple(xs),
        u=tuple(us),
        x_tilde=tuple(copies),
        gamma=tuple(gammas),
        q=tuple(() for _ in range(K)),
        delta=tuple(() for _ in range(K)),
        horizon=K,
        names=tuple(builder.names),
    )


def _format_bound(value: float) -> str:
    if value == np.inf:
        return "+inf"
    if value == -np.inf:
        return "-inf"
    return repr(float(value))


def _format_expression(coefs: np.ndarray, names: Sequence[str]) -> str:
    parts = []
    for j in np.flatnonzero(coefs):
        sign = "-" if coefs[j] < 0 else "+"
        parts.append(f"{sign} {abs(float(coefs[j]))!r} {names[j]}")
    return " ".join(parts) if parts else "0 " + names[0]


def format_lp(problem: MilpProblem, names: Optional[Sequence[str]] = None) -> str:
    """
    Render a MILP in LP-format-style text.

    Grammar (write-only)::

        \\ comment
        Maximize
         obj: <terms>
        Subject To
         r<i>: <terms> (<=|=|>=) <rhs>
        Bounds
         <lo> <= <name> <= <hi>
        Binaries
         <names>
        End
    """
    lp = problem.lp
    names = list(names) if names else [f"v{j}" for j in range(lp.num_vars)]
    lines = ["\\ mixed-integer encoding", "Maximize", f" obj: {_format_expression(lp.c, names)}", "Subject To"]
    for i in range(lp.num_rows):
        lines.append(f" r{i}: {_format_expression(lp.A[i], names)} {lp.senses[i]} {float(lp.b[i])!r}")
    lines.append("Bounds")
    for j, name in enumerate(names):
        lines.append(f" {_format_bound(lp.lo[j])} <= {name} <= {_format_bound(lp.hi[j])}")
    lines.append("Binaries")
    binaries = [names[j] for j in sorted(problem.binaries)]
    for start in range(0, len(binaries), 8):
        lines.append(" " + " ".join(binaries[start : start + 8]))
    lines.append("End")
    return "\n".join(lines) + "\n"


def encoding_summary(encoded: EncodedSystem) -> Dict[str, int]:
    """Variable, row and binary counts."""
    return {
        "variables": encoded.problem.lp.num_vars,
        "rows": encoded.problem.lp.num_rows,
        "binaries": encoded.num_binaries,
        "horizon": encoded.horizon,
    }
