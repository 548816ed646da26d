"""
H-representation polytopes and the ellipsoid of the local controller.

A :class:`Polytope` is ``{x | H x <= h}``. Every query that needs optimization
(support, emptiness, containment, bounding boxes) is answered with
:func:`lp_core.solve_lp`. Values are immutable, so all functions here are pure
and safe to call from worker processes.
"""

import itertools
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from constants import SET_TOL, VERTEX_TOL
from exceptions import (
    DimensionMismatchError,
    DimensionTooHighError,
    EmptySetError,
    GeometryError,
    NonPositiveScaleError,
    UnboundedSetError,
)
from lp_core import LinearProgram, LpStatus, SolverSettings, solve_lp

# Marker returned by support() for an unbounded direction.
UNBOUNDED = float("inf")

_ZERO_ROW_TOL = 1e-12


@dataclass(frozen=True)
class Polytope:
    """
    Convex polyhedron ``{x | H x <= h}`` in dimension ``dim``.

    A polytope without rows is the whole space. Zero rows of ``H`` are
    rejected; an empty polytope is a legal value.
    """

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self) -> None:
        H = np.array(self.H, dtype=float)
        h = np.array(self.h, dtype=float).reshape(-1)
        if H.ndim != 2:
            raise DimensionMismatchError(f"H must be a matrix, got shape {H.shape}")
        if H.shape[0] != h.size:
            raise DimensionMismatchError(f"H has {H.shape[0]} rows but h has {h.size} entries")
        if not np.all(np.isfinite(H)) or not np.all(np.isfinite(h)):
            raise GeometryError("Polytope data must be finite")
        if H.shape[0] and np.any(np.linalg.norm(H, axis=1) <= _ZERO_ROW_TOL):
            raise GeometryError("Polytope has a zero row in H")
        H.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @property
    def dim(self) -> int:
        return int(self.H.shape[1])

    @property
    def num_rows(self) -> int:
        return int(self.H.shape[0])

    @classmethod
    def from_box(cls, lo: Sequence[float], hi: Sequence[float]) -> "Polytope":
        """Axis-aligned box ``lo <= x <= hi``."""
        lo_arr = np.asarray(lo, dtype=float).reshape(-1)
        hi_arr = np.asarray(hi, dtype=float).reshape(-1)
        if lo_arr.size != hi_arr.size:
            raise DimensionMismatchError("Box bounds have different lengths")
        eye = np.eye(lo_arr.size)
        return cls(H=np.vstack([eye, -eye]), h=np.concatenate([hi_arr, -lo_arr]))

    @classmethod
    def universe(cls, dim: int) -> "Polytope":
        """The whole space R^dim."""
        return cls(H=np.zeros((0, dim)), h=np.zeros(0))

    @classmethod
    def singleton(cls, point: Sequence[float]) -> "Polytope":
        """The set containing only ``point``."""
        p = np.asarray(point, dtype=float).reshape(-1)
        return cls.from_box(p, p)

    def contains_point(self, x: Sequence[float], tol: float = 0.0) -> bool:
        """Whether ``H x <= h + tol`` holds."""
        x_arr = np.asarray(x, dtype=float).reshape(-1)
        if x_arr.size != self.dim:
            raise DimensionMismatchError(f"Point of size {x_arr.size} tested against a {self.dim}-D polytope")
        return bool(np.all(self.H @ x_arr <= self.h + tol))

    def contains_points(self, X: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Vectorized membership of the rows of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.num_rows:
            return np.ones(X.shape[0], dtype=bool)
        return np.all(X @ self.H.T <= self.h + tol, axis=1)

    def to_dict(self) -> dict:
        """Plain-list form used by the YAML writers."""
        return {"H": self.H.tolist(), "h": self.h.tolist()}


@dataclass(frozen=True)
class Ellipsoid:
    """The sublevel set ``{x | x' S x <= level}`` with ``S`` symmetric positive definite."""

    S: np.ndarray
    level: float

    def __post_init__(self) -> None:
        S = np.array(self.S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise DimensionMismatchError(f"S must be square, got shape {S.shape}")
        if not np.allclose(S, S.T, atol=1e-9, rtol=0.0):
            raise GeometryError("S must be symmetric within 1e-9")
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError as e:
            raise GeometryError("S must be positive definite") from e
        if not self.level > 0:
            raise GeometryError(f"Ellipsoid level must be positive, got {self.level}")
        S.setflags(write=False)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "level", float(self.level))

    @property
    def dim(self) -> int:
        return int(self.S.shape[0])

    def value(self, x: Sequence[float]) -> float:
        """Quadratic form ``x' S x``."""
        x_arr = np.asarray(x, dtype=float)
        return float(x_arr @ self.S @ x_arr)

    def contains_point(self, x: Sequence[float], scale: float = 1.0, tol: float = 1e-9) -> bool:
        """Membership in the scaled ellipsoid ``scale * E`` (closed)."""
        return self.value(x) <= scale**2 * self.level + tol

    def boundary_points(self, count: int, scale: float = 1.0, seed: int = 0) -> np.ndarray:
        """
        Points on the boundary of ``scale * E``.

        One dimension gives the two endpoints, two dimensions evenly spaced
        angles, higher dimensions seeded Gaussian directions.
        """
        n = self.dim
        if n == 1:
            directions = np.array([[1.0], [-1.0]])
        elif n == 2:
            angles = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
            directions = np.column_stack([np.cos(angles), np.sin(angles)])
        else:
            rng = np.random.default_rng(seed)
            directions = rng.standard_normal((count, n))
            directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        quad = np.einsum("ij,jk,ik->i", directions, self.S, directions)
        radius = scale * np.sqrt(self.level / quad)
        return directions * radius[:, None]

    def sample_interior(self, count: int, scale: float = 1.0, seed: int = 0) -> np.ndarray:
        """Seeded samples distributed uniformly in ``scale * E``."""
        n = self.dim
        rng = np.random.default_rng(seed)
        directions = rng.standard_normal((count, n))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        radii = rng.random(count) ** (1.0 / n)
        # Map the unit ball onto the ellipsoid through the Cholesky factor.
        L = np.linalg.cholesky(self.S / (scale**2 * self.level))
        ball = directions * radii[:, None]
        return np.linalg.solve(L.T, ball.T).T


def _check_dims(a: Polytope, b: Polytope) -> None:
    if a.dim != b.dim:
        raise DimensionMismatchError(f"Dimension mismatch: {a.dim} vs {b.dim}")


def _support_lp(P: Polytope, v: np.ndarray) -> LinearProgram:
    return LinearProgram.create(c=v, A=P.H, b=P.h)


def is_empty(P: Polytope, settings: Optional[SolverSettings] = None) -> bool:
    """Whether ``P`` is empty (one LP feasibility solve)."""
    result = solve_lp(_support_lp(P, np.zeros(P.dim)), settings)
    return result.status is LpStatus.INFEASIBLE


def support(P: Polytope, v: Sequence[float], settings: Optional[SolverSettings] = None) -> float:
    """
    Support function ``sup {v x | x in P}``.

    Parameters:
    P (Polytope): Non-empty polytope
    v (Sequence[float]): Direction
    settings (SolverSettings): LP tolerances

    Returns:
    float: The supremum, or ``UNBOUNDED`` (+inf)

    Raises:
    EmptySetError: If P is empty
    DimensionMismatchError: If v does not match P
    """
    v_arr = np.asarray(v, dtype=float).reshape(-1)
    if v_arr.size != P.dim:
        raise DimensionMismatchError(f"Direction of size {v_arr.size} for a {P.dim}-D polytope")
    if not np.all(np.isfinite(v_arr)):
        raise GeometryError("Direction must be finite")
    result = solve_lp(_support_lp(P, v_arr), settings)
    if result.status is LpStatus.INFEASIBLE:
        raise EmptySetError("support() of an empty polytope")
    if result.status is LpStatus.UNBOUNDED:
        return UNBOUNDED
    return result.value


def containment_residuals(
    outer: Polytope, inner: Polytope, settings: Optional[SolverSettings] = None
) -> np.ndarray:
    """Per-row ``support(inner, H_i) - h_i`` of ``outer`` (positive means a violated row)."""
    _check_dims(outer, inner)
    return np.array([support(inner, row, settings) - rhs for row, rhs in zip(outer.H, outer.h)])


def contains(outer: Polytope, inner: Polytope, tol: float = SET_TOL, settings: Optional[SolverSettings] = None) -> bool:
    """
    Whether ``inner`` is a subset of ``outer`` up to ``tol`` per row.

    The empty set is contained in every polytope.

    Raises:
    DimensionMismatchError: If dimensions differ
    """
    _check_dims(outer, inner)
    if outer.num_rows == 0:
        return True
    if is_empty(inner, settings):
        return True
    return bool(np.all(containment_residuals(outer, inner, settings) <= tol))


def same_set(a: Polytope, b: Polytope, tol: float = SET_TOL, settings: Optional[SolverSettings] = None) -> bool:
    """Mutual containment."""
    return contains(a, b, tol, settings) and contains(b, a, tol, settings)


def scale(P: Polytope, s: float) -> Polytope:
    """
    ``s * P`` for a polytope containing the origin: ``{H x <= s h}``.

    Raises:
    NonPositiveScaleError: If s <= 0
    """
    if not s > 0:
        raise NonPositiveScaleError(f"Scale factor must be positive, got {s}")
    if s == 1.0:
        return P
    return Polytope(H=P.H, h=s * P.h)


def intersect(a: Polytope, b: Polytope) -> Polytope:
    """Row concatenation of two H-representations."""
    _check_dims(a, b)
    return Polytope(H=np.vstack([a.H, b.H]), h=np.concatenate([a.h, b.h]))


def product(a: Polytope, b: Polytope) -> Polytope:
    """Cartesian product ``a x b`` (used for X x U)."""
    H = np.block(
        [
            [a.H, np.zeros((a.num_rows, b.dim))],
            [np.zeros((b.num_rows, a.dim)), b.H],
        ]
    )
    return Polytope(H=H, h=np.concatenate([a.h, b.h]))


def bounding_box(P: Polytope, settings: Optional[SolverSettings] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Tightest axis-aligned box around ``P``.

    Raises:
    EmptySetError: If P is empty
    UnboundedSetError: If P is unbounded along some axis
    """
    n = P.dim
    lo = np.empty(n)
    hi = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        upper = support(P, e, settings)
        lower = support(P, -e, settings)
        if upper == UNBOUNDED or lower == UNBOUNDED:
            raise UnboundedSetError(f"Polytope is unbounded along axis {i}")
        hi[i] = upper
        lo[i] = -lower
    return lo, hi


def is_bounded(P: Polytope, settings: Optional[SolverSettings] = None) -> bool:
    """Whether a non-empty ``P`` is bounded."""
    try:
        bounding_box(P, settings)
    except UnboundedSetError:
        return False
    return True


def vertices(P: Polytope, tol: float = VERTEX_TOL, settings: Optional[SolverSettings] = None) -> List[np.ndarray]:
    """
    Extreme points of a bounded polytope of dimension at most three.

    Candidates are the intersections of every ``dim`` rows; infeasible or
    duplicate candidates are dropped.

    Raises:
    DimensionTooHighError: If dim > 3
    EmptySetError: If P is empty
    UnboundedSetError: If P is unbounded
    """
    n = P.dim
    if n > 3:
        raise DimensionTooHighError(f"Vertex enumeration supports dim <= 3, got {n}")
    bounding_box(P, settings)

    found: List[np.ndarray] = []
    for rows in itertools.combinations(range(P.num_rows), n):
        idx = list(rows)
        M = P.H[idx]
        if abs(np.linalg.det(M)) < 1e-12 * max(1.0, float(np.prod(np.linalg.norm(M, axis=1)))):
            continue
        x = np.linalg.solve(M, P.h[idx])
        if np.any(P.H @ x > P.h + tol):
            continue
        if any(np.max(np.abs(x - y)) <= tol for y in found):
            continue
        found.append(x)
    if not found:
        raise EmptySetError("Polytope has no vertices")
    return found


def min_cover_scale(E: Ellipsoid, P: Polytope, settings: Optional[SolverSettings] = None) -> float:
    """
    Smallest ``s`` with ``P`` inside ``s * E``.

    The maximum of the convex quadratic over ``P`` is attained at a vertex,
    so ``s = max_v sqrt(v' S v / level)``.

    Raises:
    DimensionMismatchError: If dimensions differ
    GeometryError: If P does not contain the origin
    """
    if E.dim != P.dim:
        raise DimensionMismatchError(f"Ellipsoid dim {E.dim} vs polytope dim {P.dim}")
    if not P.contains_point(np.zeros(P.dim), tol=SET_TOL):
        raise GeometryError("min_cover_scale needs a polytope containing the origin")
    return max(float(np.sqrt(max(E.value(v), 0.0) / E.level)) for v in vertices(P, settings=settings))


def sample_polytope(P: Polytope, count: int, seed: int = 0, max_rounds: int = 1000) -> np.ndarray:
    """
    Seeded uniform samples from a bounded polytope by rejection from its box.

    Returns fewer than ``count`` rows only when ``P`` is empty or has
    negligible volume inside its bounding box.
    """
    if count <= 0 or is_empty(P):
        return np.zeros((0, P.dim))
    lo, hi = bounding_box(P)
    rng = np.random.default_rng(seed)
    accepted: List[np.ndarray] = []
    total = 0
    for _ in range(max_rounds):
        batch = rng.uniform(lo, hi, size=(max(count, 64), P.dim))
        keep = batch[P.contains_points(batch, tol=1e-12)]
        accepted.append(keep)
        total += keep.shape[0]
        if total >= count:
            break
    if not accepted:
        return np.zeros((0, P.dim))
    return np.vstack(accepted)[:count]
