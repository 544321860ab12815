"""OpenAPI operation model, producer/consumer dependency inference, coverage.

The parser accepts OpenAPI 3.x documents only and reduces each (path, method)
pair to a flat ``OperationDef``: parameters with primitive kinds, required
names, and response fields flattened to dotted paths.  Dependency inference
connects a producer's response field to a consumer's parameter by name, which
is what lets the fuzzer build stateful request chains.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import yaml

HTTP_METHODS = ("GET", "POST", "PUT", "PATCH", "DELETE")
PARAM_LOCATIONS = ("path", "query", "header", "body-field")

# Dotted response-field paths deeper than this are dropped.
MAX_FIELD_DEPTH = 3

_PLACEHOLDER = re.compile(r"\{([^{}/]+)\}")
_PRIMITIVES = ("string", "integer", "number", "boolean")


class MalformedSpec(Exception):
    """The document could not be parsed as an OpenAPI specification."""


class UnsupportedVersion(Exception):
    """The document is not OpenAPI 3.x (Swagger 2.0 is rejected)."""


class InconsistentSpec(Exception):
    """The document contradicts itself, e.g. an unbound path placeholder."""


class UnknownOperation(Exception):
    """An operation id that does not exist in the model."""


@dataclass(frozen=True)
class ParamDef:
    name: str
    location: str  # path | query | header | body-field
    kind: str  # schema type: string, integer, number, boolean, object, array
    constraints: tuple = ()  # sorted (key, value) pairs: enum, format, bounds

    def __post_init__(self):
        if self.location not in PARAM_LOCATIONS:
            raise ValueError(f"bad param location {self.location!r}")

    def constraint(self, key, default=None):
        return dict(self.constraints).get(key, default)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "location": self.location,
            "kind": self.kind,
            "constraints": [[k, v] for k, v in self.constraints],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParamDef":
        return cls(
            name=d["name"],
            location=d["location"],
            kind=d["kind"],
            constraints=tuple((k, _freeze(v)) for k, v in d.get("constraints", [])),
        )


@dataclass(frozen=True)
class ResponseField:
    status_class: str  # "2xx", "4xx", ...
    path: str  # dotted field path
    kind: str

    def to_dict(self) -> dict:
        return {"status_class": self.status_class, "path": self.path, "kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "ResponseField":
        return cls(d["status_class"], d["path"], d["kind"])


@dataclass(frozen=True)
class OperationDef:
    id: str
    method: str
    path_template: str
    params: tuple[ParamDef, ...] = ()
    required: frozenset[str] = frozenset()
    response_fields: tuple[ResponseField, ...] = ()

    def __post_init__(self):
        if self.method not in HTTP_METHODS:
            raise ValueError(f"unsupported method {self.method!r}")
        names = {p.name for p in self.params}
        if not self.required <= names:
            raise ValueError(f"required params {sorted(self.required - names)} not declared")

    def param(self, name: str) -> ParamDef | None:
        for p in self.params:
            if p.name == name:
                return p
        return None

    def last_static_segment(self) -> str:
        segments = [s for s in self.path_template.split("/") if s and not s.startswith("{")]
        return segments[-1] if segments else ""

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "method": self.method,
            "path_template": self.path_template,
            "params": [p.to_dict() for p in self.params],
            "required": sorted(self.required),
            "response_fields": [f.to_dict() for f in self.response_fields],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OperationDef":
        return cls(
            id=d["id"],
            method=d["method"],
            path_template=d["path_template"],
            params=tuple(ParamDef.from_dict(p) for p in d.get("params", [])),
            required=frozenset(d.get("required", [])),
            response_fields=tuple(ResponseField.from_dict(f) for f in d.get("response_fields", [])),
        )


@dataclass(frozen=True)
class ApiModel:
    operations: tuple[OperationDef, ...] = ()
    title: str = ""
    base_url: str = ""

    def __post_init__(self):
        seen = set()
        for op in self.operations:
            if op.id in seen:
                raise InconsistentSpec(f"duplicate operation id {op.id!r}")
            seen.add(op.id)
            declared = {p.name for p in op.params if p.location == "path"}
            for placeholder in _PLACEHOLDER.findall(op.path_template):
                if placeholder not in declared:
                    raise InconsistentSpec(
                        f"operation {op.id!r}: placeholder {{{placeholder}}} has no path parameter"
                    )

    def operation(self, op_id: str) -> OperationDef:
        for op in self.operations:
            if op.id == op_id:
                return op
        raise UnknownOperation(op_id)

    @property
    def operation_ids(self) -> set[str]:
        return {op.id for op in self.operations}

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "base_url": self.base_url,
            "operations": [op.to_dict() for op in self.operations],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ApiModel":
        return cls(
            operations=tuple(OperationDef.from_dict(o) for o in d.get("operations", [])),
            title=d.get("title", ""),
            base_url=d.get("base_url", ""),
        )


@dataclass(frozen=True)
class DependencyEdge:
    producer: str
    producer_field: str  # dotted response field path on the producer
    consumer: str
    consumer_param: str

    def __post_init__(self):
        if self.producer == self.consumer:
            raise ValueError("self-dependency rejected")

    def to_dict(self) -> dict:
        return {
            "producer": self.producer,
            "producer_field": self.producer_field,
            "consumer": self.consumer,
            "consumer_param": self.consumer_param,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DependencyEdge":
        return cls(d["producer"], d["producer_field"], d["consumer"], d["consumer_param"])


@dataclass(frozen=True)
class CoverageStats:
    total_operations: int
    executed_operations: int
    coverage: float

    def __post_init__(self):
        if self.executed_operations > self.total_operations:
            raise ValueError("executed exceeds total")

    def to_dict(self) -> dict:
        return {
            "total_operations": self.total_operations,
            "executed_operations": self.executed_operations,
            "coverage": self.coverage,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoverageStats":
        return cls(d["total_operations"], d["executed_operations"], d["coverage"])


def parse_spec(document: bytes, fmt: str) -> ApiModel:
    """Parse an OpenAPI 3.x document (bytes) into an ApiModel.

    ``fmt`` is ``"json"`` or ``"yaml"``.  Raises MalformedSpec on parse
    failure, UnsupportedVersion for anything that is not OpenAPI 3.x, and
    InconsistentSpec when a path placeholder has no matching parameter.
    """
    if fmt == "json":
        try:
            doc = json.loads(document)
        except (ValueError, UnicodeDecodeError) as exc:
            raise MalformedSpec(f"invalid JSON: {exc}") from exc
    elif fmt == "yaml":
        try:
            doc = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            raise MalformedSpec(f"invalid YAML: {exc}") from exc
    else:
        raise ValueError(f"unknown spec format {fmt!r}")

    if not isinstance(doc, dict):
        raise MalformedSpec("document root is not a mapping")
    if "swagger" in doc:
        raise UnsupportedVersion(f"Swagger {doc['swagger']} is not supported; use OpenAPI 3.x")
    version = doc.get("openapi")
    if not isinstance(version, str) or not version.startswith("3."):
        raise UnsupportedVersion(f"expected an OpenAPI 3.x document, got openapi={version!r}")

    paths = doc.get("paths", {})
    if not isinstance(paths, dict):
        raise MalformedSpec("paths is not a mapping")

    operations = []
    for path, path_item in paths.items():
        if not isinstance(path_item, dict):
            raise MalformedSpec(f"path item for {path!r} is not a mapping")
        shared_params = path_item.get("parameters", [])
        for method in HTTP_METHODS:
            op = path_item.get(method.lower())
            if op is None:
                continue
            if not isinstance(op, dict):
                raise MalformedSpec(f"{method} {path} is not a mapping")
            operations.append(_build_operation(path, method, op, shared_params))

    info = doc.get("info", {}) or {}
    servers = doc.get("servers") or []
    base_url = servers[0].get("url", "") if servers else ""
    operations.sort(key=lambda o: o.id)  # independent of document key order
    return ApiModel(operations=tuple(operations), title=info.get("title", ""), base_url=base_url)


def parse_spec_file(path: str) -> ApiModel:
    """Parse a spec file, inferring json/yaml from the suffix."""
    fmt = "yaml" if str(path).endswith((".yaml", ".yml")) else "json"
    try:
        with open(path, "rb") as fh:
            return parse_spec(fh.read(), fmt)
    except OSError as exc:
        raise MalformedSpec(f"cannot read spec file: {exc}") from exc


def _build_operation(path: str, method: str, op: dict, shared_params: list) -> OperationDef:
    params: dict[tuple[str, str], ParamDef] = {}
    required: set[str] = set()

    for raw in list(shared_params) + list(op.get("parameters", [])):
        if not isinstance(raw, dict) or "name" not in raw:
            raise MalformedSpec(f"{method} {path}: malformed parameter entry")
        loc = raw.get("in", "query")
        if loc not in ("path", "query", "header"):
            continue  # cookie params are out of scope
        schema = raw.get("schema") or {}
        p = ParamDef(
            name=raw["name"],
            location=loc,
            kind=schema.get("type", "string"),
            constraints=_constraints(schema),
        )
        params[(p.name, p.location)] = p
        if raw.get("required", False) or loc == "path":
            required.add(p.name)
        else:
            required.discard(p.name)

    body = op.get("requestBody") or {}
    body_schema = _json_content_schema(body.get("content") or {})
    if body_schema:
        body_required = set(body_schema.get("required", []))
        for name, prop in (body_schema.get("properties") or {}).items():
            prop = prop or {}
            p = ParamDef(
                name=name,
                location="body-field",
                kind=prop.get("type", "string"),
                constraints=_constraints(prop),
            )
            params[(name, "body-field")] = p
            if name in body_required:
                required.add(name)

    response_fields = []
    for status, response in (op.get("responses") or {}).items():
        status = str(status)
        if not (len(status) == 3 and status[0].isdigit()):
            continue  # "default" and friends carry no status class
        klass = status[0] + "xx"
        schema = _json_content_schema((response or {}).get("content") or {})
        for dotted, kind in _flatten_schema(schema):
            response_fields.append(ResponseField(klass, dotted, kind))

    op_id = op.get("operationId") or f"{method.lower()}_{_slug(path)}"
    # canonical ordering: the model must not depend on document key order
    ordered_params = sorted(params.values(), key=lambda p: (PARAM_LOCATIONS.index(p.location), p.name))
    response_fields.sort(key=lambda f: (f.status_class, f.path))
    return OperationDef(
        id=op_id,
        method=method,
        path_template=path,
        params=tuple(ordered_params),
        required=frozenset(required),
        response_fields=tuple(response_fields),
    )


def _json_content_schema(content: dict) -> dict:
    media = content.get("application/json") or {}
    return media.get("schema") or {}


def _flatten_schema(schema: dict, prefix: str = "", depth: int = 0) -> list[tuple[str, str]]:
    """Flatten a response schema to (dotted path, kind) leaves, depth-bounded.

    Array schemas descend into their element schema without adding a path
    segment, so an array of objects named ``items`` yields ``items.id``.
    """
    if not schema:
        return []
    kind = schema.get("type")
    if kind == "array":
        return _flatten_schema(schema.get("items") or {}, prefix, depth)
    out = []
    for name, prop in (schema.get("properties") or {}).items():
        prop = prop or {}
        dotted = f"{prefix}.{name}" if prefix else name
        if depth + 1 > MAX_FIELD_DEPTH:
            continue
        ptype = prop.get("type", "object" if prop.get("properties") else "string")
        if ptype in _PRIMITIVES:
            out.append((dotted, ptype))
        elif ptype in ("object", "array"):
            out.extend(_flatten_schema(prop, dotted, depth + 1))
    return out


def _constraints(schema: dict) -> tuple:
    keep = {}
    for key in ("enum", "format", "minimum", "maximum", "minLength", "maxLength", "pattern"):
        if key in schema and schema[key] is not None:
            keep[key] = _freeze(schema[key])
    return tuple(sorted(keep.items()))


def _freeze(value):
    return tuple(_freeze(v) for v in value) if isinstance(value, list) else value


def _slug(path: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", path).strip("_") or "root"


def field_matches_param(producer: OperationDef, field_path: str, param_name: str) -> bool:
    """Name-matching rule for dependency inference.

    Case-insensitive exact match between the field's terminal name and the
    parameter name, plus: a field named ``id`` matches ``<noun>Id`` when the
    producer path's last static segment, singularized by stripping a trailing
    ``s``, equals ``<noun>``.
    """
    field_name = field_path.rsplit(".", 1)[-1].lower()
    target = param_name.lower()
    if field_name == target:
        return True
    if field_name == "id":
        noun = producer.last_static_segment().lower()
        if noun.endswith("s"):
            noun = noun[:-1]
        return bool(noun) and target == noun + "id"
    return False


def infer_dependencies(model: ApiModel) -> list[DependencyEdge]:
    """All producer->consumer edges under the matching rule, sorted."""
    edges = set()
    for producer in model.operations:
        for rf in producer.response_fields:
            for consumer in model.operations:
                if consumer.id == producer.id:
                    continue
                for param in consumer.params:
                    if field_matches_param(producer, rf.path, param.name):
                        edges.add(DependencyEdge(producer.id, rf.path, consumer.id, param.name))
    return sorted(edges, key=lambda e: (e.producer, e.consumer, e.consumer_param, e.producer_field))


def coverage(model: ApiModel, executed: set[str]) -> CoverageStats:
    """Fraction of spec operations exercised by a run."""
    unknown = set(executed) - model.operation_ids
    if unknown:
        raise UnknownOperation(f"not in model: {sorted(unknown)}")
    total = len(model.operations)
    done = len(set(executed))
    return CoverageStats(total, done, done / total if total else 0.0)
