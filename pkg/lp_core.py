"""
Dense revised-simplex solver for the linear programs of the certifier.

Every LP in the package (support functions, containment tests, branch-and-bound
relaxations, brute-force oracles) goes through :func:`solve_lp`. Programs are
stated as maximizations::

    maximize    c @ x
    subject to  A[i] @ x  (<= | = | >=)  b[i]
                lo <= x <= hi            (infinite bounds allowed)

The solver is a two-phase revised simplex on the standard form obtained by
shifting, reflecting or splitting variables. Fixed variables are substituted
out first; no other presolve is done. Pricing is largest reduced cost and
switches to Bland's rule after a run of degenerate pivots, which guarantees
termination. The basis inverse is kept explicitly and updated with
elementary row operations, with a fresh inversion every
``refactor_interval`` pivots.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from constants import BREAKDOWN_TOL, FEASIBILITY_TOL, OPTIMALITY_TOL, PIVOT_TOL
from exceptions import DimensionMismatchError, NumericalBreakdownError

LE = "<="
EQ = "="
GE = ">="
_SENSES = (LE, EQ, GE)


class LpStatus(str, Enum):
    """Outcome of an LP solve."""

    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


@dataclass(frozen=True)
class SolverSettings:
    """Numerical settings shared by the LP and MILP solvers."""

    feasibility_tol: float = FEASIBILITY_TOL
    optimality_tol: float = OPTIMALITY_TOL
    pivot_tol: float = PIVOT_TOL
    breakdown_tol: float = BREAKDOWN_TOL
    refactor_interval: int = 50
    max_iterations: Optional[int] = None

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> "SolverSettings":
        """Build settings from the ``solver`` section of the configuration."""
        return cls(
            feasibility_tol=section.get("feasibility_tol", FEASIBILITY_TOL),
            optimality_tol=section.get("optimality_tol", OPTIMALITY_TOL),
            pivot_tol=section.get("pivot_tol", PIVOT_TOL),
            breakdown_tol=section.get("breakdown_tol", BREAKDOWN_TOL),
            refactor_interval=section.get("refactor_interval", 50),
        )


DEFAULT_SETTINGS = SolverSettings()


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class LinearProgram:
    """
    A maximization LP with row senses and variable bounds.

    All arrays are copied to read-only float arrays on construction.
    """

    c: np.ndarray
    A: np.ndarray
    senses: Tuple[str, ...]
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        c = np.array(self.c, dtype=float).reshape(-1)
        n = c.size
        A = np.array(self.A, dtype=float).reshape(-1, n) if np.size(self.A) else np.zeros((0, n))
        b = np.array(self.b, dtype=float).reshape(-1)
        senses = tuple(self.senses)
        lo = np.array(self.lo, dtype=float).reshape(-1)
        hi = np.array(self.hi, dtype=float).reshape(-1)

        if A.shape[0] != b.size or len(senses) != b.size:
            raise DimensionMismatchError(
                f"LP has {A.shape[0]} rows, {b.size} right-hand sides and {len(senses)} senses"
            )
        if lo.size != n or hi.size != n:
            raise DimensionMismatchError(f"LP has {n} variables but {lo.size}/{hi.size} bounds")
        if any(sense not in _SENSES for sense in senses):
            raise ValueError(f"Row senses must be one of {_SENSES}")
        if not np.all(np.isfinite(b)):
            raise ValueError("Right-hand side must be finite")
        if not np.all(np.isfinite(A)) or not np.all(np.isfinite(c)):
            raise ValueError("Objective and constraint matrix must be finite")
        if np.any(lo > hi) or np.any(lo == np.inf) or np.any(hi == -np.inf):
            raise ValueError("Variable bounds must satisfy lo <= hi with lo < inf and hi > -inf")

        object.__setattr__(self, "c", _readonly(c))
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "b", _readonly(b))
        object.__setattr__(self, "senses", senses)
        object.__setattr__(self, "lo", _readonly(lo))
        object.__setattr__(self, "hi", _readonly(hi))

    @classmethod
    def create(
        cls,
        c: Sequence[float],
        A: Optional[Any] = None,
        b: Optional[Sequence[float]] = None,
        senses: Optional[Sequence[str]] = None,
        lo: Optional[Sequence[float]] = None,
        hi: Optional[Sequence[float]] = None,
    ) -> "LinearProgram":
        """
        Convenience constructor: rows default to ``<=``, bounds default to free.

        Parameters:
        c: Objective coefficients (maximized)
        A: Constraint matrix (rows x variables) or None
        b: Right-hand side or None
        senses: Row senses or None for all ``<=``
        lo, hi: Variable bounds or None for free variables

        Returns:
        LinearProgram: The program
        """
        c_arr = np.asarray(c, dtype=float).reshape(-1)
        n = c_arr.size
        A_arr = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float).reshape(-1, n)
        b_arr = np.zeros(0) if b is None else np.asarray(b, dtype=float).reshape(-1)
        senses_t = tuple(senses) if senses is not None else (LE,) * b_arr.size
        lo_arr = np.full(n, -np.inf) if lo is None else np.asarray(lo, dtype=float)
        hi_arr = np.full(n, np.inf) if hi is None else np.asarray(hi, dtype=float)
        return cls(c=c_arr, A=A_arr, senses=senses_t, b=b_arr, lo=lo_arr, hi=hi_arr)

    @property
    def num_vars(self) -> int:
        return int(self.c.size)

    @property
    def num_rows(self) -> int:
        return int(self.b.size)

    def with_bounds(self, lo: np.ndarray, hi: np.ndarray) -> "LinearProgram":
        """Return a copy with new variable bounds."""
        return LinearProgram(c=self.c, A=self.A, senses=self.senses, b=self.b, lo=lo, hi=hi)

    def with_objective(self, c: np.ndarray) -> "LinearProgram":
        """Return a copy with a new objective."""
        return LinearProgram(c=c, A=self.A, senses=self.senses, b=self.b, lo=self.lo, hi=self.hi)

    def row_violation(self, x: np.ndarray) -> float:
        """Largest violation of any row or bound at ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if self.num_rows:
            lhs = self.A @ x
            for sense, value, rhs in zip(self.senses, lhs, self.b):
                if sense == LE:
                    worst = max(worst, value - rhs)
                elif sense == GE:
                    worst = max(worst, rhs - value)
                else:
                    worst = max(worst, abs(value - rhs))
        with np.errstate(invalid="ignore"):
            worst = max(worst, float(np.max(self.lo - x, initial=0.0)), float(np.max(x - self.hi, initial=0.0)))
        return worst


@dataclass(frozen=True)
class LpResult:
    """
    Result of :func:`solve_lp`.

    ``duals`` holds one multiplier per row of the program (zero for rows
    dropped as redundant). For a ``<=`` row of a maximization the multiplier is
    non-negative. ``dual_value`` is the objective of the dual solution,
    including the contribution of finite variable bounds.
    """

    status: LpStatus
    value: float
    x: Optional[np.ndarray] = None
    duals: Optional[np.ndarray] = None
    dual_value: float = float("nan")
    iterations: int = 0
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def is_optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


@dataclass
class _StandardForm:
    """max c y s.t. A y = b, y >= 0, with bookkeeping to map back."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    basis: np.ndarray
    n_struct: int
    n_art: int
    T: np.ndarray
    offset: np.ndarray
    obj_const: float
    row_sign: np.ndarray
    n_orig_rows: int


def _to_standard_form(lp: LinearProgram, keep: np.ndarray, fixed_values: np.ndarray) -> _StandardForm:
    fixed = ~keep
    A_r = lp.A[:, keep]
    c_r = lp.c[keep]
    lo_r = lp.lo[keep]
    hi_r = lp.hi[keep]
    b_adj = lp.b - lp.A[:, fixed] @ fixed_values if fixed.any() else lp.b.copy()
    const = float(lp.c[fixed] @ fixed_values) if fixed.any() else 0.0

    nr = keep.sum()
    columns = []
    offset = np.zeros(nr)
    upper_rows = []
    for j in range(nr):
        if np.isfinite(lo_r[j]):
            offset[j] = lo_r[j]
            columns.append((j, 1.0))
            if np.isfinite(hi_r[j]):
                upper_rows.append((len(columns) - 1, hi_r[j] - lo_r[j]))
        elif np.isfinite(hi_r[j]):
            offset[j] = hi_r[j]
            columns.append((j, -1.0))
        else:
            columns.append((j, 1.0))
            columns.append((j, -1.0))
    n_std = len(columns)
    T = np.zeros((nr, n_std))
    for col, (j, sign) in enumerate(columns):
        T[j, col] = sign

    # Rows: original constraints, then upper-bound rows.
    signs = np.array([-1.0 if s == GE else 1.0 for s in lp.senses])
    rows_A = (A_r @ T) * signs[:, None] if lp.num_rows else np.zeros((0, n_std))
    rows_b = (b_adj - A_r @ offset) * signs if lp.num_rows else np.zeros(0)
    is_le = [s != EQ for s in lp.senses]
    if upper_rows:
        U = np.zeros((len(upper_rows), n_std))
        for r, (col, ub) in enumerate(upper_rows):
            U[r, col] = 1.0
        rows_A = np.vstack([rows_A, U])
        rows_b = np.concatenate([rows_b, [ub for _, ub in upper_rows]])
        is_le += [True] * len(upper_rows)

    m = rows_b.size
    n_slack = int(sum(is_le))
    S = np.zeros((m, n_slack))
    slack_of_row = np.full(m, -1)
    k = 0
    for i in range(m):
        if is_le[i]:
            S[i, k] = 1.0
            slack_of_row[i] = n_std + k
            k += 1

    flip = rows_b < 0
    row_sign = np.where(flip, -1.0, 1.0)
    A_full = np.hstack([rows_A, S]) * row_sign[:, None]
    b_full = rows_b * row_sign

    basis = np.empty(m, dtype=int)
    art_rows = []
    for i in range(m):
        if slack_of_row[i] >= 0 and not flip[i]:
            basis[i] = slack_of_row[i]
        else:
            art_rows.append(i)
    n_struct = n_std + n_slack
    if art_rows:
        Art = np.zeros((m, len(art_rows)))
        for a, i in enumerate(art_rows):
            Art[i, a] = 1.0
            basis[i] = n_struct + a
        A_full = np.hstack([A_full, Art])

    c_full = np.zeros(A_full.shape[1])
    c_full[:n_std] = c_r @ T
    return _StandardForm(
        A=A_full,
        b=b_full,
        c=c_full,
        basis=basis,
        n_struct=n_struct,
        n_art=len(art_rows),
        T=T,
        offset=offset,
        obj_const=const + float(c_r @ offset),
        row_sign=row_sign * np.concatenate([signs, np.ones(len(upper_rows))]) if m else row_sign,
        n_orig_rows=lp.num_rows,
    )


def _invert(B: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.inv(B)
    except np.linalg.LinAlgError as e:
        raise NumericalBreakdownError(f"Singular basis matrix: {e}") from e


def _simplex(
    A: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    basis: np.ndarray,
    settings: SolverSettings,
    allowed: np.ndarray,
) -> Tuple[LpStatus, np.ndarray, np.ndarray, int]:
    """Primal revised simplex from a feasible basis. Only ``allowed`` columns may enter."""
    m, N = A.shape
    Binv = _invert(A[:, basis])
    max_iter = settings.max_iterations or 50 * (m + N) + 1000
    degenerate_streak = 0
    bland = False
    since_refactor = 0

    for iteration in range(max_iter):
        if since_refactor >= settings.refactor_interval:
            Binv = _invert(A[:, basis])
            since_refactor = 0
        x_B = Binv @ b
        y = c[basis] @ Binv
        reduced = c - y @ A
        reduced[basis] = 0.0
        reduced[~allowed] = 0.0

        if bland:
            candidates = np.flatnonzero(reduced > settings.optimality_tol)
            if candidates.size == 0:
                return LpStatus.OPTIMAL, basis, Binv, iteration
            j = int(candidates[0])
        else:
            j = int(np.argmax(reduced))
            if reduced[j] <= settings.optimality_tol:
                return LpStatus.OPTIMAL, basis, Binv, iteration

        d = Binv @ A[:, j]
        positive = d > settings.pivot_tol
        if not positive.any():
            # One recovery attempt on a fresh inverse before deciding.
            Binv = _invert(A[:, basis])
            since_refactor = 0
            d = Binv @ A[:, j]
            positive = d > settings.pivot_tol
            if not positive.any():
                if np.any(d > settings.breakdown_tol):
                    raise NumericalBreakdownError(
                        f"Pivot magnitudes in ({settings.breakdown_tol:g}, {settings.pivot_tol:g}] on column {j}"
                    )
                return LpStatus.UNBOUNDED, basis, Binv, iteration
            x_B = Binv @ b

        ratios = np.full(m, np.inf)
        ratios[positive] = np.maximum(x_B[positive], 0.0) / d[positive]
        theta = float(ratios.min())
        ties = np.flatnonzero(ratios <= theta + 1e-12 * max(1.0, theta))
        if bland:
            r = int(ties[np.argmin(basis[ties])])
        else:
            r = int(ties[np.argmax(d[ties])])
        if abs(d[r]) < settings.breakdown_tol:
            raise NumericalBreakdownError(f"Pivot {d[r]:.3e} below breakdown tolerance")

        pivot_row = Binv[r] / d[r]
        Binv -= np.outer(d, pivot_row)
        Binv[r] = pivot_row
        basis[r] = j
        since_refactor += 1

        if theta <= settings.feasibility_tol:
            degenerate_streak += 1
            if degenerate_streak > 2 * (m + N):
                bland = True
        else:
            degenerate_streak = 0

    raise NumericalBreakdownError(f"Simplex did not terminate within {max_iter} iterations")


def _drive_out_artificials(
    sf: _StandardForm, basis: np.ndarray, Binv: np.ndarray, settings: SolverSettings
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Pivot zero-level artificials out of the basis; drop rows that are redundant."""
    A, b = sf.A, sf.b
    keep_rows = np.ones(A.shape[0], dtype=bool)
    for r in range(A.shape[0]):
        if basis[r] < sf.n_struct:
            continue
        row = Binv[r] @ A[:, : sf.n_struct]
        row[basis[basis < sf.n_struct]] = 0.0
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) > settings.pivot_tol:
            d = Binv @ A[:, j]
            pivot_row = Binv[r] / d[r]
            Binv -= np.outer(d, pivot_row)
            Binv[r] = pivot_row
            basis[r] = j
        else:
            keep_rows[r] = False

    A2 = A[keep_rows][:, : sf.n_struct]
    b2 = b[keep_rows]
    basis2 = basis[keep_rows].copy()
    return A2, b2, basis2, keep_rows


def solve_lp(lp: LinearProgram, settings: Optional[SolverSettings] = None) -> LpResult:
    """
    Solve a maximization LP with the two-phase revised simplex method.

    Parameters:
    lp (LinearProgram): The program
    settings (SolverSettings): Tolerances (defaults to the package tolerances)

    Returns:
    LpResult: Status, optimal value, primal point and duals

    Raises:
    NumericalBreakdownError: If no usable pivot exists after re-inversion
    """
    settings = settings or DEFAULT_SETTINGS
    n = lp.num_vars
    fixed = (lp.lo == lp.hi) & np.isfinite(lp.lo)
    keep = ~fixed
    fixed_values = lp.lo[fixed]

    sf = _to_standard_form(lp, keep, fixed_values)
    m = sf.b.size
    x_full = np.zeros(n)
    x_full[fixed] = fixed_values

    if m == 0:
        std_c = sf.c
        if np.any(std_c > settings.optimality_tol):
            return LpResult(status=LpStatus.UNBOUNDED, value=np.inf)
        x_full[keep] = sf.offset
        value = float(lp.c @ x_full)
        return LpResult(
            status=LpStatus.OPTIMAL,
            value=value,
            x=x_full,
            duals=np.zeros(lp.num_rows),
            dual_value=sf.obj_const,
        )

    basis = sf.basis.copy()
    iterations = 0
    A, b = sf.A, sf.b
    keep_rows = np.ones(m, dtype=bool)

    if sf.n_art:
        c1 = np.zeros(A.shape[1])
        c1[sf.n_struct :] = -1.0
        allowed = np.ones(A.shape[1], dtype=bool)
        _, basis, Binv, it1 = _simplex(A, b, c1, basis, settings, allowed)
        iterations += it1
        infeasibility = float(-(c1[basis] @ (Binv @ b)))
        if infeasibility > settings.feasibility_tol * (1.0 + float(np.max(np.abs(b)))):
            return LpResult(status=LpStatus.INFEASIBLE, value=-np.inf, iterations=iterations)
        A, b, basis, keep_rows = _drive_out_artificials(sf, basis, Binv, settings)
    else:
        A = A[:, : sf.n_struct]

    c2 = sf.c[: sf.n_struct]
    if b.size == 0:
        if np.any(c2 > settings.optimality_tol):
            return LpResult(status=LpStatus.UNBOUNDED, value=np.inf, iterations=iterations)
        y_std = np.zeros(sf.n_struct)
        Binv = np.zeros((0, 0))
    else:
        allowed = np.ones(A.shape[1], dtype=bool)
        status, basis, Binv, it2 = _simplex(A, b, c2, basis, settings, allowed)
        iterations += it2
        if status is LpStatus.UNBOUNDED:
            return LpResult(status=LpStatus.UNBOUNDED, value=np.inf, iterations=iterations)
        Binv = _invert(A[:, basis])
        y_std = np.zeros(sf.n_struct)
        y_std[basis] = np.maximum(Binv @ b, 0.0)

    n_std = sf.T.shape[1]
    x_full[keep] = sf.offset + sf.T @ y_std[:n_std]
    value = float(lp.c @ x_full)

    row_duals = np.zeros(m)
    if b.size:
        y = c2[basis] @ Binv
        row_duals[keep_rows] = y
    dual_value = float(row_duals @ sf.b) + sf.obj_const
    # Map back to the caller's rows: undo the rhs flip and the >= negation.
    duals = (row_duals * sf.row_sign)[: sf.n_orig_rows]

    return LpResult(
        status=LpStatus.OPTIMAL,
        value=value,
        x=x_full,
        duals=duals,
        dual_value=dual_value,
        iterations=iterations,
    )
