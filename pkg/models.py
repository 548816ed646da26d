"""
Executable semantics of the plant, the maxout controller and the dual-mode law.

- :class:`PwaSystem`: ``x+ = A_i x + B_i u + p_i`` on polyhedral cells of X x U,
  with the lowest-index cell winning on shared boundaries.
- :class:`MaxoutNet`: hidden layers whose neurons take the maximum over a
  contiguous group of ``p`` affine channels, followed by an affine output.
- :func:`saturate_nn`: the clamped network ``min(max(Phi(x) - Phi(0), lo), hi)``
  built as a maxout network with two extra layers.
- :class:`DualModeController`: local PWA feedback inside a scaled ellipsoid,
  the network elsewhere.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

import python_logging_framework as plog
from constants import BRANCH_KAPPA, BRANCH_NN, DOMAIN_TOL, REGION_TOL
from exceptions import BoxInvalidError, DimensionMismatchError, DomainError, ModelValidationError, NoRegionError
from geometry import Ellipsoid, Polytope, bounding_box, product


def _frozen(array, ndim: int, name: str) -> np.ndarray:
    arr = np.array(array, dtype=float)
    if ndim == 1:
        arr = arr.reshape(-1)
    elif arr.ndim != 2:
        raise DimensionMismatchError(f"{name} must be a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelValidationError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Region:
    """One affine mode ``x+ = A x + B u + p`` valid on ``cell`` (a polytope over (x, u))."""

    A: np.ndarray
    B: np.ndarray
    p: np.ndarray
    cell: Polytope

    def __post_init__(self) -> None:
        A = _frozen(self.A, 2, "A")
        B = _frozen(self.B, 2, "B")
        p = _frozen(self.p, 1, "p")
        n, m = A.shape[0], B.shape[1]
        if A.shape != (n, n) or B.shape[0] != n or p.size != n:
            raise DimensionMismatchError(f"Region dynamics shapes A{A.shape} B{B.shape} p{p.shape} are inconsistent")
        if self.cell.dim != n + m:
            raise DimensionMismatchError(f"Region cell has dim {self.cell.dim}, expected n+m={n + m}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "p", p)

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.A @ x + self.B @ u + self.p


@dataclass(frozen=True)
class PwaSystem:
    """Piecewise-affine plant over the state set ``X`` and input set ``U``."""

    regions: Tuple[Region, ...]
    X: Polytope
    U: Polytope

    def __post_init__(self) -> None:
        regions = tuple(self.regions)
        if not regions:
            raise ModelValidationError("A PWA system needs at least one region")
        n, m = regions[0].A.shape[0], regions[0].B.shape[1]
        for i, region in enumerate(regions):
            if region.A.shape[0] != n or region.B.shape[1] != m:
                raise DimensionMismatchError(f"Region {i} has different state/input dimensions")
        if self.X.dim != n or self.U.dim != m:
            raise DimensionMismatchError(f"X has dim {self.X.dim} and U dim {self.U.dim}, expected {n} and {m}")
        object.__setattr__(self, "regions", regions)

    @property
    def n(self) -> int:
        return int(self.regions[0].A.shape[0])

    @property
    def m(self) -> int:
        return int(self.regions[0].B.shape[1])

    @property
    def region_count(self) -> int:
        return len(self.regions)

    @property
    def domain(self) -> Polytope:
        """X x U."""
        return product(self.X, self.U)

    def origin_regions(self, tol: float = REGION_TOL) -> List[int]:
        """Indices of regions whose cell contains the origin of (x, u)."""
        zero = np.zeros(self.n + self.m)
        return [i for i, r in enumerate(self.regions) if r.cell.contains_point(zero, tol)]


def region_index(system: PwaSystem, x: Sequence[float], u: Sequence[float], tol: float = REGION_TOL) -> int:
    """
    Lowest index ``i`` with ``(x, u)`` in cell ``i`` up to ``tol``.

    Raises:
    NoRegionError: If no cell contains the point
    """
    xu = np.concatenate([np.asarray(x, dtype=float).reshape(-1), np.asarray(u, dtype=float).reshape(-1)])
    for i, region in enumerate(system.regions):
        if region.cell.contains_point(xu, tol):
            return i
    raise NoRegionError(f"No region contains (x, u) = {xu.tolist()}")


def eval_pwa(system: PwaSystem, x: Sequence[float], u: Sequence[float], check_domain: bool = True) -> np.ndarray:
    """
    One step of the PWA dynamics.

    Parameters:
    system (PwaSystem): The plant
    x, u: State and input
    check_domain (bool): Reject points outside X x U (tolerance 1e-7)

    Returns:
    np.ndarray: The successor state

    Raises:
    DomainError: If (x, u) lies outside X x U
    NoRegionError: If no region matches
    """
    x_arr = np.asarray(x, dtype=float).reshape(-1)
    u_arr = np.asarray(u, dtype=float).reshape(-1)
    if x_arr.size != system.n or u_arr.size != system.m:
        raise DimensionMismatchError(f"Expected x of size {system.n} and u of size {system.m}")
    if check_domain and not (
        system.X.contains_point(x_arr, DOMAIN_TOL) and system.U.contains_point(u_arr, DOMAIN_TOL)
    ):
        raise DomainError(f"(x, u) = ({x_arr.tolist()}, {u_arr.tolist()}) lies outside X x U")
    i = region_index(system, x_arr, u_arr)
    return system.regions[i].step(x_arr, u_arr)


@dataclass(frozen=True)
class MaxoutLayer:
    """Hidden layer: ``W`` has ``channels * width`` rows grouped contiguously per neuron."""

    W: np.ndarray
    b: np.ndarray
    channels: int

    def __post_init__(self) -> None:
        W = _frozen(self.W, 2, "W")
        b = _frozen(self.b, 1, "b")
        channels = int(self.channels)
        if channels < 1:
            raise ModelValidationError(f"Channel count must be >= 1, got {channels}")
        if W.shape[0] != b.size or W.shape[0] % channels:
            raise DimensionMismatchError(
                f"Layer with {W.shape[0]} rows, {b.size} biases and {channels} channels per neuron"
            )
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "channels", channels)

    @property
    def width(self) -> int:
        return int(self.W.shape[0] // self.channels)

    @property
    def input_dim(self) -> int:
        return int(self.W.shape[1])

    def preactivation(self, q: np.ndarray) -> np.ndarray:
        """Channel values ``z = W q + b`` (works on a batch of rows)."""
        return q @ self.W.T + self.b

    def forward(self, q: np.ndarray) -> np.ndarray:
        z = self.preactivation(q)
        return z.reshape(z.shape[:-1] + (self.width, self.channels)).max(axis=-1)


@dataclass(frozen=True)
class MaxoutNet:
    """Maxout network ``Phi``: hidden layers then the affine output ``W_out q + b_out``."""

    layers: Tuple[MaxoutLayer, ...]
    W_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self) -> None:
        layers = tuple(self.layers)
        W_out = _frozen(self.W_out, 2, "W_out")
        b_out = _frozen(self.b_out, 1, "b_out")
        for i in range(1, len(layers)):
            if layers[i].input_dim != layers[i - 1].width:
                raise DimensionMismatchError(
                    f"Layer {i} expects {layers[i].input_dim} inputs but layer {i - 1} has width {layers[i - 1].width}"
                )
        last = layers[-1].width if layers else W_out.shape[1]
        if W_out.shape[1] != last or W_out.shape[0] != b_out.size:
            raise DimensionMismatchError(f"Output layer W{W_out.shape} b{b_out.shape} does not match width {last}")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "W_out", W_out)
        object.__setattr__(self, "b_out", b_out)

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim if self.layers else int(self.W_out.shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.W_out.shape[0])

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def widths(self) -> List[int]:
        return [layer.width for layer in self.layers]

    @property
    def binaries_per_step(self) -> int:
        return sum(layer.channels * layer.width for layer in self.layers)

    @classmethod
    def zero(cls, n: int, m: int) -> "MaxoutNet":
        """The network ``Phi == 0`` with no hidden layer."""
        return cls(layers=(), W_out=np.zeros((m, n)), b_out=np.zeros(m))

    def hidden(self, x: np.ndarray) -> np.ndarray:
        q = np.asarray(x, dtype=float)
        for layer in self.layers:
            q = layer.forward(q)
        return q

    def __call__(self, x: Union[Sequence[float], np.ndarray]) -> np.ndarray:
        return eval_nn(self, x)


def eval_nn(net: MaxoutNet, x: Union[Sequence[float], np.ndarray]) -> np.ndarray:
    """
    Exact forward pass of the maxout network.

    Accepts a single input vector or a batch (one input per row).

    Raises:
    DimensionMismatchError: If the input size differs from the network's
    """
    x_arr = np.asarray(x, dtype=float)
    if x_arr.shape[-1] != net.input_dim:
        raise DimensionMismatchError(f"Network expects inputs of size {net.input_dim}, got {x_arr.shape[-1]}")
    return net.hidden(x_arr) @ net.W_out.T + net.b_out


def forward_trace(net: MaxoutNet, x: Sequence[float]) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """
    Per hidden layer: channel values ``z``, outputs ``q`` and the winning channel per neuron.

    Ties go to the lowest channel index.
    """
    q = np.asarray(x, dtype=float).reshape(-1)
    trace = []
    for layer in net.layers:
        z = layer.preactivation(q)
        grouped = z.reshape(layer.width, layer.channels)
        winners = grouped.argmax(axis=1)
        q = grouped.max(axis=1)
        trace.append((z, q, winners))
    return trace


def saturate_nn(net: MaxoutNet, u_lo: Sequence[float], u_hi: Sequence[float]) -> MaxoutNet:
    """
    Clamp a network to a box: ``min(max(Phi(x) - Phi(0), lo), hi)``.

    The result is again a maxout network. The old output layer becomes a
    two-channel layer pairing ``Phi_j - Phi_j(0)`` with ``lo_j``; a second
    two-channel layer pairs ``-y_j`` with ``-hi_j``; the new output is ``-I``.
    Channels are interleaved per output so that each neuron's group is
    contiguous.

    Raises:
    BoxInvalidError: If lo >= hi somewhere or the box excludes 0
    """
    lo = np.asarray(u_lo, dtype=float).reshape(-1)
    hi = np.asarray(u_hi, dtype=float).reshape(-1)
    m = net.output_dim
    if lo.size != m or hi.size != m:
        raise BoxInvalidError(f"Saturation box has size {lo.size}/{hi.size}, network output has {m}")
    if np.any(lo >= hi):
        raise BoxInvalidError("Saturation box needs u_lo < u_hi elementwise")
    if np.any(lo > 0.0) or np.any(hi < 0.0):
        raise BoxInvalidError("Saturation box must contain 0 so that the clamped network maps 0 to 0")

    phi0 = eval_nn(net, np.zeros(net.input_dim))
    width = net.W_out.shape[1]

    W1 = np.zeros((2 * m, width))
    b1 = np.zeros(2 * m)
    W1[0::2] = net.W_out
    b1[0::2] = net.b_out - phi0
    b1[1::2] = lo

    W2 = np.zeros((2 * m, m))
    b2 = np.zeros(2 * m)
    W2[0::2] = -np.eye(m)
    b2[1::2] = -hi

    layers = net.layers + (MaxoutLayer(W=W1, b=b1, channels=2), MaxoutLayer(W=W2, b=b2, channels=2))
    return MaxoutNet(layers=layers, W_out=-np.eye(m), b_out=np.zeros(m))


@dataclass(frozen=True)
class FeedbackPiece:
    """``kappa(x) = K x + k`` on ``cell`` (a polytope over x)."""

    K: np.ndarray
    k: np.ndarray
    cell: Polytope

    def __post_init__(self) -> None:
        K = _frozen(self.K, 2, "K")
        k = _frozen(self.k, 1, "k")
        if K.shape[0] != k.size or self.cell.dim != K.shape[1]:
            raise DimensionMismatchError(f"Feedback piece K{K.shape} k{k.shape} cell dim {self.cell.dim}")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "k", k)


@dataclass(frozen=True)
class DualModeController:
    """
    Network outside ``s_scale * E``, PWA feedback ``kappa`` inside.

    ``s_scale`` is the certified cover scale; it defaults to 1 until a
    certificate supplies the computed value.
    """

    net: MaxoutNet
    kappa: Tuple[FeedbackPiece, ...]
    ellipsoid: Ellipsoid
    s_scale: float = 1.0

    def __post_init__(self) -> None:
        kappa = tuple(self.kappa)
        if not kappa:
            raise ModelValidationError("Dual-mode controller needs at least one feedback piece")
        n, m = self.net.input_dim, self.net.output_dim
        for j, piece in enumerate(kappa):
            if piece.K.shape != (m, n):
                raise DimensionMismatchError(f"Feedback piece {j} has K{piece.K.shape}, expected ({m}, {n})")
        if self.ellipsoid.dim != n:
            raise DimensionMismatchError(f"Ellipsoid dim {self.ellipsoid.dim} differs from state dim {n}")
        if not 0.0 < self.s_scale <= 1.0:
            raise ModelValidationError(f"s_scale must lie in (0, 1], got {self.s_scale}")
        object.__setattr__(self, "kappa", kappa)

    def with_scale(self, s_scale: float) -> "DualModeController":
        return DualModeController(net=self.net, kappa=self.kappa, ellipsoid=self.ellipsoid, s_scale=s_scale)

    def in_local_mode(self, x: Sequence[float]) -> bool:
        return self.ellipsoid.contains_point(x, scale=self.s_scale, tol=REGION_TOL)


def eval_kappa(pieces: Sequence[FeedbackPiece], x: Sequence[float], tol: float = REGION_TOL) -> np.ndarray:
    """
    Local feedback from the lowest-index piece whose cell contains ``x``.

    Raises:
    NoRegionError: If no cell contains x
    """
    x_arr = np.asarray(x, dtype=float).reshape(-1)
    for piece in pieces:
        if piece.cell.contains_point(x_arr, tol):
            return piece.K @ x_arr + piece.k
    raise NoRegionError(f"No feedback piece covers x = {x_arr.tolist()}")


def eval_dual_mode(ctrl: DualModeController, x: Sequence[float]) -> np.ndarray:
    """``kappa(x)`` when ``x' S x <= s^2 level`` (closed set), otherwise ``Phi(x)``."""
    return eval_controller(ctrl, x)[0]


def eval_controller(
    controller: Union[MaxoutNet, DualModeController], x: Sequence[float]
) -> Tuple[np.ndarray, str]:
    """Input and branch name (``nn`` or ``kappa``) for either controller type."""
    if isinstance(controller, DualModeController):
        if controller.in_local_mode(x):
            return eval_kappa(controller.kappa, x), BRANCH_KAPPA
        return eval_nn(controller.net, x), BRANCH_NN
    return eval_nn(controller, x), BRANCH_NN


def _grid(lo: np.ndarray, hi: np.ndarray, points: int) -> np.ndarray:
    axes = [np.linspace(a, b, points) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.reshape(-1) for g in mesh])


def validate_pwa_system(system: PwaSystem, grid_points: int = 11, origin_tol: float = REGION_TOL, logger=None) -> None:
    """
    Check model-level invariants of a PWA system.

    - ``p_i = 0`` for every region whose cell contains the origin.
    - Every grid point of X x U lies in at least one region (sampled coverage).

    Raises:
    ModelValidationError: If an invariant fails
    """
    for i in system.origin_regions(origin_tol):
        if np.max(np.abs(system.regions[i].p)) > origin_tol:
            raise ModelValidationError(f"Region {i} contains the origin but has p = {system.regions[i].p.tolist()}")

    domain = system.domain
    lo, hi = bounding_box(domain)
    points = _grid(lo, hi, grid_points)
    points = points[domain.contains_points(points, tol=1e-12)]
    uncovered = 0
    for xu in points:
        if not any(r.cell.contains_point(xu, REGION_TOL) for r in system.regions):
            uncovered += 1
            if uncovered == 1:
                first = xu
    if uncovered:
        raise ModelValidationError(
            f"{uncovered} grid points of X x U lie in no region, e.g. (x, u) = {first.tolist()}"
        )
    plog.log_debug(logger, f"PWA system validated: {system.region_count} regions, {len(points)} grid points covered")


def validate_network(net: MaxoutNet, n: int, m: int, origin_tol: float = REGION_TOL) -> None:
    """
    Check network dimensions and ``Phi(0) = 0``.

    Raises:
    ModelValidationError: If a check fails
    """
    if net.input_dim != n or net.output_dim != m:
        raise ModelValidationError(f"Network maps R^{net.input_dim} to R^{net.output_dim}, plant needs R^{n} to R^{m}")
    phi0 = eval_nn(net, np.zeros(n))
    if np.max(np.abs(phi0)) > origin_tol:
        raise ModelValidationError(
            f"Network output at the origin is {phi0.tolist()}, not 0; apply saturation to enforce it"
        )


def validate_dual_mode(
    ctrl: DualModeController, boundary_samples: int = 720, seed: int = 0, scale: Optional[float] = None
) -> None:
    """
    Check ``kappa(0) = 0`` and that the feedback pieces cover ``s * E`` (sampled).

    Raises:
    ModelValidationError: If a check fails
    """
    s = ctrl.s_scale if scale is None else scale
    n = ctrl.net.input_dim
    k0 = eval_kappa(ctrl.kappa, np.zeros(n))
    if np.max(np.abs(k0)) > REGION_TOL:
        raise ModelValidationError(f"kappa(0) = {k0.tolist()}, expected 0")
    samples = np.vstack(
        [
            ctrl.ellipsoid.boundary_points(boundary_samples, scale=s, seed=seed),
            ctrl.ellipsoid.sample_interior(boundary_samples, scale=s, seed=seed),
        ]
    )
    for x in samples:
        try:
            eval_kappa(ctrl.kappa, x)
        except NoRegionError as e:
            raise ModelValidationError(f"Feedback pieces do not cover the local ellipsoid: {e}") from e


def require_in_domain(system: PwaSystem, x: Sequence[float], tol: float = DOMAIN_TOL) -> np.ndarray:
    """Return ``x`` as an array, raising :class:`DomainError` when it lies outside X."""
    x_arr = np.asarray(x, dtype=float).reshape(-1)
    if x_arr.size != system.n:
        raise DimensionMismatchError(f"State of size {x_arr.size}, expected {system.n}")
    if not system.X.contains_point(x_arr, tol):
        raise DomainError(f"x = {x_arr.tolist()} lies outside X")
    return x_arr
