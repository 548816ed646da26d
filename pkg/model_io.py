"""
YAML model, set, reach and certificate files.

Every document is validated with pydantic. Schema and YAML errors are raised
as :class:`ModelValidationError` with a ``<path>:<line>:`` prefix; the line is
found by walking the composed YAML node tree along the failing field's
location.

Model file layout::

    system:
      regions:
        - {A: [[...]], B: [[...]], p: [...], H: [[...]], h: [...]}
      X: {H: [[...]], h: [...]}      # or {lo: [...], hi: [...]}
      U: {lo: [...], hi: [...]}
    network:
      layers:
        - {W: [[...]], b: [...], p: 2}
      output: {W: [[...]], b: [...]}
      saturate: {lo: [...], hi: [...]}   # optional
    dual_mode:                           # optional
      kappa:
        - {K: [[...]], k: [...], cell: {lo: [...], hi: [...]}}
      S: [[...]]
      xi_star: 1.0
    options:                             # optional per-model overrides
      template: box
      epsilon_shrink: 1.0e-3
"""

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

import python_logging_framework as plog
from certify import CheckRecord, Certificate
from constants import MANIFEST_FILE
from exceptions import ModelValidationError, PwaCertifierError
from geometry import Ellipsoid, Polytope
from models import (
    DualModeController,
    FeedbackPiece,
    MaxoutLayer,
    MaxoutNet,
    PwaSystem,
    Region,
    saturate_nn,
    validate_dual_mode,
    validate_network,
    validate_pwa_system,
)
from reach import ReachResult, Template
from security import ALLOWED_MODEL_EXTENSIONS, validate_file_path

__version__ = "1.0.0"

Matrix = List[List[float]]
Vector = List[float]

_DOCUMENT_CONFIG = ConfigDict(extra="forbid")


class SetSchema(BaseModel):
    """A polytope as ``H x <= h`` or as a box ``lo <= x <= hi``."""

    model_config = _DOCUMENT_CONFIG

    H: Optional[Matrix] = None
    h: Optional[Vector] = None
    lo: Optional[Vector] = None
    hi: Optional[Vector] = None

    @model_validator(mode="after")
    def exactly_one_form(self) -> "SetSchema":
        has_h = self.H is not None or self.h is not None
        has_box = self.lo is not None or self.hi is not None
        if has_h == has_box:
            raise ValueError("give either H and h, or lo and hi")
        if has_h and (self.H is None or self.h is None):
            raise ValueError("H and h must be given together")
        if has_box and (self.lo is None or self.hi is None):
            raise ValueError("lo and hi must be given together")
        return self

    def to_polytope(self) -> Polytope:
        if self.lo is not None:
            return Polytope.from_box(self.lo, self.hi)
        return Polytope(H=np.array(self.H, dtype=float).reshape(len(self.h), -1), h=self.h)


class RegionSchema(BaseModel):
    model_config = _DOCUMENT_CONFIG

    A: Matrix
    B: Matrix
    p: Vector
    H: Optional[Matrix] = None
    h: Optional[Vector] = None
    lo: Optional[Vector] = None
    hi: Optional[Vector] = None

    def cell(self) -> Polytope:
        return SetSchema(H=self.H, h=self.h, lo=self.lo, hi=self.hi).to_polytope()


class SystemSchema(BaseModel):
    model_config = _DOCUMENT_CONFIG

    n: Optional[int] = Field(default=None, ge=1)
    m: Optional[int] = Field(default=None, ge=1)
    regions: List[RegionSchema] = Field(min_length=1)
    X: SetSchema
    U: SetSchema


class LayerSchema(BaseModel):
    model_config = _DOCUMENT_CONFIG

    W: Matrix
    b: Vector
    p: int = Field(ge=1, description="Channels per neuron")


class AffineSchema(BaseModel):
    model_config = _DOCUMENT_CONFIG

    W: Matrix
    b: Vector


class BoxSchema(BaseModel):
    model_config = _DOCUMENT_CONFIG

    lo: Vector
    hi: Vector


class NetworkSchema(BaseModel):
    model_config = _DOCUMENT_CONFIG

    layers: List[LayerSchema] = Field(default_factory=list)
    output: AffineSchema
    saturate: Optional[BoxSchema] = None


class FeedbackSchema(BaseModel):
    model_config = _DOCUMENT_CONFIG

    K: Matrix
    k: Vector
    cell: SetSchema


class DualModeSchema(BaseModel):
    model_config = _DOCUMENT_CONFIG

    kappa: List[FeedbackSchema] = Field(min_length=1)
    S: Matrix
    xi_star: float = Field(gt=0.0)


class OptionsSchema(BaseModel):
    """Per-model overrides of ``config.yaml``."""

    model_config = _DOCUMENT_CONFIG

    template: Optional[str] = None
    epsilon_shrink: Optional[float] = Field(default=None, gt=0.0)
    k_limit: Optional[int] = Field(default=None, ge=1)
    iter_limit: Optional[int] = Field(default=None, ge=1)
    node_limit: Optional[int] = Field(default=None, ge=0)
    time_limit: Optional[float] = Field(default=None, gt=0.0)
    tol_set: Optional[float] = Field(default=None, gt=0.0)
    seed: Optional[int] = Field(default=None, ge=0)
    workers: Optional[int] = Field(default=None, ge=1)
    big_m_mode: Optional[str] = Field(default=None, pattern="^(auto|manual)$")
    big_m_value: Optional[float] = Field(default=None, gt=0.0)


class ModelSchema(BaseModel):
    model_config = _DOCUMENT_CONFIG

    name: Optional[str] = None
    description: Optional[str] = None
    system: SystemSchema
    network: NetworkSchema
    dual_mode: Optional[DualModeSchema] = None
    options: OptionsSchema = Field(default_factory=OptionsSchema)


class CheckSchema(BaseModel):
    model_config = _DOCUMENT_CONFIG

    name: str
    passed: bool
    residual: float
    tolerance: float
    sampled: bool = False


class TemplateSchema(BaseModel):
    model_config = _DOCUMENT_CONFIG

    name: str
    directions: Matrix


class CertificateSchema(BaseModel):
    model_config = _DOCUMENT_CONFIG

    kind: str = Field(pattern="^certificate$")
    certificate_type: str = Field(pattern="^(UUB|Asymptotic)$")
    conclusive: bool
    k_star: int = Field(ge=0)
    epsilon_shrink: float = Field(gt=0.0)
    s_scale: Optional[float] = None
    fmax_iterations: Optional[int] = None
    reason: str = ""
    error: Optional[str] = None
    seed: int = 42
    model_digest: str = ""
    template: Optional[TemplateSchema] = None
    f_max: Optional[SetSchema] = None
    f_min: Optional[SetSchema] = None
    checks: List[CheckSchema] = Field(default_factory=list)
    tool_version: Optional[str] = None


class SetFileSchema(BaseModel):
    model_config = _DOCUMENT_CONFIG

    kind: str = Field(pattern="^set$")
    set: SetSchema


class ReachFileSchema(BaseModel):
    model_config = _DOCUMENT_CONFIG

    kind: str = Field(pattern="^reach$")
    steps: int = Field(ge=1)
    conclusive: bool
    entry_invariant: Optional[bool] = None
    directions: Matrix
    optima: Vector
    set: SetSchema
    message: str = ""
    initial_set: SetSchema
    template: str = "box"
    model_digest: str = ""
    tool_version: Optional[str] = None


@dataclass(frozen=True)
class ModelBundle:
    """A loaded model file: plant, controller(s), per-model options and content digest."""

    system: PwaSystem
    net: MaxoutNet
    dual_mode: Optional[DualModeController]
    options: Dict[str, Any]
    digest: str
    path: Optional[Path] = None
    name: str = ""
    document: Dict[str, Any] = field(default_factory=dict, repr=False)


def _node_line(node: Optional[yaml.Node], loc: Sequence[Union[str, int]]) -> int:
    """1-based line of the deepest node reachable along ``loc``."""
    line = node.start_mark.line + 1 if node is not None else 1
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            match = next((v for k, v in node.value if k.value == key), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            match = node.value[key]
        else:
            match = None
        if match is None:
            break
        node = match
        line = node.start_mark.line + 1
    return line


def _read_yaml(path: Path) -> Tuple[Dict[str, Any], Optional[yaml.Node]]:
    text = path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        problem = getattr(e, "problem", None) or str(e)
        raise ModelValidationError(f"{path}:{line}: invalid YAML: {problem}") from e
    if not isinstance(data, dict):
        raise ModelValidationError(f"{path}:1: expected a mapping at the top level")
    return data, root


def _parse(schema, path: Path, data: Dict[str, Any], root: Optional[yaml.Node]):
    try:
        return schema.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = first.get("loc", ())
        line = _node_line(root, loc)
        where = ".".join(str(part) for part in loc) or "<document>"
        raise ModelValidationError(
            f"{path}:{line}: {where}: {first.get('msg')} ({e.error_count()} error(s))"
        ) from e


def _anchored(path: Path, root: Optional[yaml.Node], loc: Sequence[Union[str, int]], error: Exception):
    return ModelValidationError(f"{path}:{_node_line(root, loc)}: {error}")


def model_digest(document: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON of the system, network and dual-mode sections."""
    payload = {key: document.get(key) for key in ("system", "network", "dual_mode")}
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _build_system(schema: SystemSchema) -> PwaSystem:
    regions = tuple(Region(A=r.A, B=r.B, p=r.p, cell=r.cell()) for r in schema.regions)
    system = PwaSystem(regions=regions, X=schema.X.to_polytope(), U=schema.U.to_polytope())
    if schema.n is not None and schema.n != system.n:
        raise ModelValidationError(f"system.n = {schema.n} but the matrices have n = {system.n}")
    if schema.m is not None and schema.m != system.m:
        raise ModelValidationError(f"system.m = {schema.m} but the matrices have m = {system.m}")
    return system


def _build_network(schema: NetworkSchema, n: int) -> MaxoutNet:
    layers = tuple(MaxoutLayer(W=layer.W, b=layer.b, channels=layer.p) for layer in schema.layers)
    W_out = np.array(schema.output.W, dtype=float)
    if W_out.ndim != 2:
        W_out = W_out.reshape(len(schema.output.b), -1)
    if not layers and W_out.size == 0:
        W_out = np.zeros((len(schema.output.b), n))
    net = MaxoutNet(layers=layers, W_out=W_out, b_out=schema.output.b)
    if schema.saturate is not None:
        net = saturate_nn(net, schema.saturate.lo, schema.saturate.hi)
    return net


def _build_dual_mode(schema: DualModeSchema, net: MaxoutNet) -> DualModeController:
    pieces = tuple(FeedbackPiece(K=piece.K, k=piece.k, cell=piece.cell.to_polytope()) for piece in schema.kappa)
    return DualModeController(net=net, kappa=pieces, ellipsoid=Ellipsoid(S=schema.S, level=schema.xi_star))


def load_model(
    path: Union[str, Path],
    grid_points: int = 11,
    origin_tol: float = 1e-9,
    validate: bool = True,
    logger=None,
) -> ModelBundle:
    """
    Load and validate a model file.

    Re-checks every model invariant: dimensions, ``p_i = 0`` on regions
    containing the origin, sampled coverage of X x U, ``Phi(0) = 0`` and, when
    present, the dual-mode feedback.

    Raises:
    ModelValidationError: With a ``path:line:`` prefix on any failure
    SecurityError: If the path is not an allowed model file
    """
    resolved = validate_file_path(str(path), ALLOWED_MODEL_EXTENSIONS, must_exist=True, logger=logger)
    data, root = _read_yaml(resolved)
    schema = _parse(ModelSchema, resolved, data, root)

    try:
        system = _build_system(schema.system)
    except PwaCertifierError as e:
        raise _anchored(resolved, root, ("system",), e) from e
    try:
        net = _build_network(schema.network, system.n)
        if validate:
            validate_network(net, system.n, system.m, origin_tol)
    except PwaCertifierError as e:
        raise _anchored(resolved, root, ("network",), e) from e
    if validate:
        try:
            validate_pwa_system(system, grid_points, origin_tol, logger)
        except PwaCertifierError as e:
            raise _anchored(resolved, root, ("system", "regions"), e) from e

    dual_mode = None
    if schema.dual_mode is not None:
        try:
            dual_mode = _build_dual_mode(schema.dual_mode, net)
            if validate:
                validate_dual_mode(dual_mode)
        except PwaCertifierError as e:
            raise _anchored(resolved, root, ("dual_mode",), e) from e

    options = schema.options.model_dump(exclude_none=True)
    digest = model_digest(data)
    plog.log_info(
        logger,
        f"Loaded model {resolved.name}: n={system.n} m={system.m} regions={system.region_count} "
        f"layers={net.depth} binaries/step={net.binaries_per_step + system.region_count}",
    )
    return ModelBundle(
        system=system,
        net=net,
        dual_mode=dual_mode,
        options=options,
        digest=digest,
        path=resolved,
        name=schema.name or resolved.stem,
        document=data,
    )


def _polytope_dict(P: Optional[Polytope]) -> Optional[Dict[str, Any]]:
    return None if P is None else {"H": P.H.tolist(), "h": P.h.tolist()}


def _dump(path: Path, document: Dict[str, Any]) -> Path:
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(document, handle, sort_keys=False, default_flow_style=None)
    return path


def save_set(path: Union[str, Path], P: Polytope) -> Path:
    """Write a polytope as a set file."""
    return _dump(Path(path), {"kind": "set", "set": _polytope_dict(P)})


def load_set(path: Union[str, Path], logger=None) -> Polytope:
    """Read a set file; a certificate's or reach file's set is not accepted here."""
    resolved = validate_file_path(str(path), ALLOWED_MODEL_EXTENSIONS, must_exist=True, logger=logger)
    data, root = _read_yaml(resolved)
    schema = _parse(SetFileSchema, resolved, data, root)
    try:
        return schema.set.to_polytope()
    except PwaCertifierError as e:
        raise _anchored(resolved, root, ("set",), e) from e


def load_template(spec: str, n: int, logger=None) -> Template:
    """``box``, ``oct`` or the path of a set file whose rows become the directions."""
    if spec == "box":
        return Template.from_box(n)
    if spec in ("oct", "octagonal"):
        return Template.octagonal(n)
    template = Template.from_polytope(load_set(spec, logger), name="file")
    if template.dim != n:
        raise ModelValidationError(f"{spec}:1: template has dim {template.dim}, model has n = {n}")
    return template


def reach_to_dict(
    result: ReachResult, initial_set: Polytope, template_name: str, digest: str = ""
) -> Dict[str, Any]:
    document: Dict[str, Any] = {"kind": "reach"}
    document.update(result.to_dict())
    document.update(
        initial_set=_polytope_dict(initial_set),
        template=template_name,
        model_digest=digest,
        tool_version=__version__,
    )
    return document


def save_reach(
    path: Union[str, Path], result: ReachResult, initial_set: Polytope, template_name: str, digest: str = ""
) -> Path:
    """Write a reach result with its initial set, so that it can be recomputed."""
    return _dump(Path(path), reach_to_dict(result, initial_set, template_name, digest))


def load_reach(path: Union[str, Path], logger=None) -> ReachFileSchema:
    resolved = validate_file_path(str(path), ALLOWED_MODEL_EXTENSIONS, must_exist=True, logger=logger)
    data, root = _read_yaml(resolved)
    return _parse(ReachFileSchema, resolved, data, root)


def certificate_to_dict(cert: Certificate) -> Dict[str, Any]:
    template = None
    if cert.template is not None:
        template = {"name": cert.template.name, "directions": cert.template.C.tolist()}
    return {
        "kind": "certificate",
        "certificate_type": cert.kind,
        "conclusive": cert.conclusive,
        "k_star": int(cert.k_star),
        "epsilon_shrink": float(cert.epsilon_shrink),
        "s_scale": None if cert.s_scale is None else float(cert.s_scale),
        "fmax_iterations": cert.fmax_iterations,
        "reason": cert.reason,
        "error": cert.error,
        "seed": int(cert.seed),
        "model_digest": cert.model_digest,
        "template": template,
        "f_max": _polytope_dict(cert.f_max),
        "f_min": _polytope_dict(cert.f_min),
        "checks": [
            {
                "name": c.name,
                "passed": bool(c.passed),
                "residual": float(c.residual),
                "tolerance": float(c.tolerance),
                "sampled": bool(c.sampled),
            }
            for c in cert.checks
        ],
        "tool_version": __version__,
    }


def save_certificate(path: Union[str, Path], cert: Certificate) -> Path:
    """Write a certificate: all sets in H-representation, all scalars and check residuals."""
    return _dump(Path(path), certificate_to_dict(cert))


def load_certificate(path: Union[str, Path], logger=None) -> Certificate:
    """
    Read a certificate file.

    A document claiming ``conclusive`` with a failed check is rejected.
    """
    resolved = validate_file_path(str(path), ALLOWED_MODEL_EXTENSIONS, must_exist=True, logger=logger)
    data, root = _read_yaml(resolved)
    schema = _parse(CertificateSchema, resolved, data, root)
    try:
        return Certificate(
            kind=schema.certificate_type,
            f_max=schema.f_max.to_polytope() if schema.f_max else None,
            f_min=schema.f_min.to_polytope() if schema.f_min else None,
            k_star=schema.k_star,
            epsilon_shrink=schema.epsilon_shrink,
            checks=tuple(CheckRecord(**c.model_dump()) for c in schema.checks),
            conclusive=schema.conclusive,
            template=Template(C=schema.template.directions, name=schema.template.name) if schema.template else None,
            s_scale=schema.s_scale,
            fmax_iterations=schema.fmax_iterations,
            reason=schema.reason,
            error=schema.error,
            seed=schema.seed,
            model_digest=schema.model_digest,
        )
    except PwaCertifierError as e:
        raise _anchored(resolved, root, (), e) from e


def document_kind(path: Union[str, Path], logger=None) -> str:
    """The ``kind`` field of a result file (``certificate``, ``reach`` or ``set``)."""
    resolved = validate_file_path(str(path), ALLOWED_MODEL_EXTENSIONS, must_exist=True, logger=logger)
    data, _ = _read_yaml(resolved)
    kind = data.get("kind")
    if kind not in ("certificate", "reach", "set"):
        raise ModelValidationError(f"{resolved}:1: unknown document kind {kind!r}")
    return kind


def write_manifest(
    out_dir: Union[str, Path],
    command: str,
    inputs: Dict[str, str],
    outputs: List[str],
    seed: Optional[int],
    tolerances: Dict[str, Any],
    exit_code: int,
) -> Path:
    """Write ``manifest.yaml`` listing inputs, seed, tolerances, tool version and produced files."""
    document = {
        "tool": "pwa-certifier",
        "tool_version": __version__,
        "command": command,
        "created": datetime.now(timezone.utc).isoformat(),
        "inputs": inputs,
        "seed": seed,
        "tolerances": tolerances,
        "outputs": outputs,
        "exit_code": exit_code,
    }
    return _dump(Path(out_dir) / MANIFEST_FILE, document)
