"""
Custom exception classes for the PWA certifier.

Every error raised by the library derives from :class:`PwaCertifierError`, so
callers (the CLI in particular) can map whole families of failures onto exit
codes with a single ``except`` clause.

Exception Hierarchy:
    PwaCertifierError (base)
    ├── ConfigurationError
    ├── ModelValidationError
    │   ├── NoRegionError
    │   ├── BoxInvalidError
    │   └── DomainError
    ├── GeometryError
    │   ├── DimensionMismatchError
    │   ├── EmptySetError
    │   ├── NonPositiveScaleError
    │   ├── DimensionTooHighError
    │   └── UnboundedSetError
    ├── SolverError
    │   ├── NumericalBreakdownError
    │   └── NodeLimitExceededError
    ├── EncodingError
    │   └── UnboundedDomainError
    ├── ReachError
    │   ├── InconclusiveError
    │   └── UnboundedReachError
    ├── CertificationError
    │   ├── NotConvergedError
    │   ├── EmptyResultError
    │   ├── KLimitExceededError
    │   ├── ScaleExceedsOneError
    │   ├── LyapunovCheckFailedError
    │   └── PreconditionError
    ├── TooManyPatternsError
    └── SecurityError

Usage:
    from exceptions import EmptySetError, ModelValidationError

    if is_empty(polytope):
        raise EmptySetError("support() called on an empty polytope")

    try:
        document = yaml.safe_load(handle)
    except yaml.YAMLError as e:
        raise ModelValidationError(f"{path}:{line}: invalid YAML: {e}") from e
"""

from typing import Any, Optional


class PwaCertifierError(Exception):
    """
    Base exception class for all certifier errors.

    Example:
        try:
            certificate = certify_uub(system, net, cfg, template)
        except PwaCertifierError as e:
            logger.error(f"Certification aborted: {e}")
    """

    pass


class ConfigurationError(PwaCertifierError):
    """
    Raised when configuration is invalid or cannot be loaded.

    Common scenarios include invalid values in config.yaml (negative
    tolerances, unknown template names) and invalid per-model ``options``.
    """

    pass


class ModelValidationError(PwaCertifierError):
    """
    Raised when a model file or an in-memory model violates its invariants.

    Common scenarios include:
    - Malformed YAML or schema violations (message is line-anchored)
    - Inconsistent matrix dimensions
    - Non-zero affine term p^(i) on a region containing the origin
    - A network with Phi(0) != 0
    - Regions that do not cover the sampled grid of X x U
    """

    pass


class NoRegionError(ModelValidationError):
    """Raised when a point (x, u) lies in no region of a PWA system."""

    pass


class BoxInvalidError(ModelValidationError):
    """Raised when a saturation box has u_lo >= u_hi or does not contain 0."""

    pass


class DomainError(ModelValidationError):
    """Raised when a state or input lies outside the admissible domain."""

    pass


class GeometryError(PwaCertifierError):
    """Base class for polytope and ellipsoid arithmetic failures."""

    pass


class DimensionMismatchError(GeometryError):
    """Raised when two sets (or a set and a vector) have different dimensions."""

    pass


class EmptySetError(GeometryError):
    """Raised when an operation needs a non-empty set and got an empty one."""

    pass


class NonPositiveScaleError(GeometryError):
    """Raised by scale() for a factor s <= 0."""

    pass


class DimensionTooHighError(GeometryError):
    """Raised by vertex enumeration for sets of dimension above three."""

    pass


class UnboundedSetError(GeometryError):
    """Raised when an operation needs a bounded set."""

    pass


class SolverError(PwaCertifierError):
    """Base class for LP and MILP solver failures."""

    pass


class NumericalBreakdownError(SolverError):
    """
    Raised when the simplex method cannot find a usable pivot.

    This signals ill-conditioning (pivot magnitudes below the breakdown
    tolerance after refactorization); the caller may rescale the problem.
    """

    pass


class NodeLimitExceededError(SolverError):
    """
    Raised when branch and bound stops on a node or time limit.

    The partial result (best incumbent, global bound, node count) is attached
    as ``solution``. Certification layers must treat this as a failure.

    Example:
        try:
            solution = solve_milp(problem, MilpOptions(node_limit=100))
        except NodeLimitExceededError as e:
            logger.warning(f"Inconclusive, bound={e.solution.bound}")
    """

    def __init__(self, message: str, solution: Optional[Any] = None):
        super().__init__(message)
        self.solution = solution


class EncodingError(PwaCertifierError):
    """Base class for failures while building mixed-integer encodings."""

    pass


class UnboundedDomainError(EncodingError):
    """Raised when big-M constants are requested over an unbounded X or U."""

    pass


class ReachError(PwaCertifierError):
    """Base class for reachability failures."""

    pass


class InconclusiveError(ReachError):
    """Raised when a reach computation hit a resource limit."""

    pass


class UnboundedReachError(ReachError):
    """Raised when a support MILP is unbounded."""

    pass


class CertificationError(PwaCertifierError):
    """Base class for invariance and stability certification failures."""

    pass


class NotConvergedError(CertificationError):
    """Raised when the maximal PI iteration stops without a PI set."""

    pass


class EmptyResultError(CertificationError):
    """Raised when the PI iteration collapses to the empty set."""

    pass


class KLimitExceededError(CertificationError):
    """Raised when no terminal set passes the shrink test within k_limit steps."""

    pass


class ScaleExceedsOneError(CertificationError):
    """Raised when F_min is not covered by the local controller's ellipsoid."""

    pass


class LyapunovCheckFailedError(CertificationError):
    """Raised when the sampled Lyapunov decrease or coverage check fails."""

    pass


class PreconditionError(CertificationError):
    """Raised when a certification precondition (e.g. Phi(X) within U) fails."""

    pass


class TooManyPatternsError(PwaCertifierError):
    """Raised when brute-force pattern enumeration would exceed its cap."""

    pass


class SecurityError(PwaCertifierError):
    """Raised for path traversal attempts or forbidden file extensions."""

    pass
