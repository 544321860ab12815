"""Stateful request-sequence generation, mutation, and serial execution.

Sequences chain producer operations in front of consumers so that path/body
parameters can be fed from earlier responses.  Mutation turns one case into a
malformed variant that differs in exactly one parameter (or the raw body).
Execution is strictly serial with a quiescence pause after every response so
that chronological trace attribution stays sound.
"""

from __future__ import annotations

import base64
import hashlib
import json
import random
import time
import urllib.parse
from dataclasses import dataclass, field, fields

import requests

from .api_model import ApiModel, DependencyEdge, OperationDef

MUTATION_KINDS = (
    "type-confusion",
    "boundary-value",
    "drop-required-field",
    "oversize-string",
    "invalid-enum",
    "garbage-bytes",
)

SKIP_DEPENDENCY_UNSATISFIED = "dependency-unsatisfied"
SKIP_ABORTED = "aborted"

DEFAULT_OVERSIZE_LENGTH = 65536
REQUEST_TIMEOUT = 10.0

# Deliberately not JSON, not UTF-8, not empty.
GARBAGE_BODY = b"\x00\xfe\xff{{[[(,\x07" + bytes(range(0, 64))


class InvalidTarget(Exception):
    """The mutation descriptor names a parameter the case does not have."""


class TargetUnreachable(Exception):
    """The BFF endpoint refused connections outright."""


@dataclass(frozen=True)
class MutationDescriptor:
    kind: str
    target_param: str = ""  # empty for garbage-bytes (whole body)

    def __post_init__(self):
        if self.kind not in MUTATION_KINDS:
            raise ValueError(f"unknown mutation kind {self.kind!r}")
        if self.kind != "garbage-bytes" and not self.target_param:
            raise ValueError(f"{self.kind} needs a target_param")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "target_param": self.target_param}

    @classmethod
    def from_dict(cls, d: dict) -> "MutationDescriptor":
        return cls(d["kind"], d.get("target_param", ""))


@dataclass(frozen=True)
class DependencyRef:
    """Placeholder binding: fill from an earlier case's response field."""

    case_index: int
    field_path: str

    def to_dict(self) -> dict:
        return {"$dep": {"case": self.case_index, "field": self.field_path}}


def _encode_binding(value):
    return value.to_dict() if isinstance(value, DependencyRef) else value


def _decode_binding(value):
    if isinstance(value, dict) and "$dep" in value:
        return DependencyRef(value["$dep"]["case"], value["$dep"]["field"])
    return value


@dataclass
class FuzzCase:
    operation: str
    bindings: dict = field(default_factory=dict)
    mutation: MutationDescriptor | None = None
    fed_from: dict = field(default_factory=dict)  # param -> DependencyRef
    body_override: bytes | None = None
    sent_at: int | None = None  # microseconds since epoch
    received_at: int | None = None
    response_status: int | None = None
    response_digest: str | None = None
    response_body: bytes | None = None
    skipped: str | None = None

    def to_dict(self) -> dict:
        d: dict = {
            "operation": self.operation,
            "bindings": {k: _encode_binding(v) for k, v in self.bindings.items()},
        }
        if self.mutation is not None:
            d["mutation"] = self.mutation.to_dict()
        if self.fed_from:
            d["fed_from"] = {k: v.to_dict() for k, v in self.fed_from.items()}
        if self.body_override is not None:
            d["body_override"] = base64.b64encode(self.body_override).decode("ascii")
        for name in ("sent_at", "received_at", "response_status", "response_digest", "skipped"):
            if getattr(self, name) is not None:
                d[name] = getattr(self, name)
        if self.response_body is not None:
            d["response_body"] = base64.b64encode(self.response_body).decode("ascii")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FuzzCase":
        return cls(
            operation=d["operation"],
            bindings={k: _decode_binding(v) for k, v in d.get("bindings", {}).items()},
            mutation=MutationDescriptor.from_dict(d["mutation"]) if "mutation" in d else None,
            fed_from={k: _decode_binding(v) for k, v in d.get("fed_from", {}).items()},
            body_override=base64.b64decode(d["body_override"]) if "body_override" in d else None,
            sent_at=d.get("sent_at"),
            received_at=d.get("received_at"),
            response_status=d.get("response_status"),
            response_digest=d.get("response_digest"),
            response_body=base64.b64decode(d["response_body"]) if "response_body" in d else None,
            skipped=d.get("skipped"),
        )


@dataclass
class TestSequence:
    __test__ = False  # not a pytest class, despite the name

    id: str
    cases: list[FuzzCase] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"id": self.id, "cases": [c.to_dict() for c in self.cases]}

    @classmethod
    def from_dict(cls, d: dict) -> "TestSequence":
        return cls(id=d["id"], cases=[FuzzCase.from_dict(c) for c in d.get("cases", [])])


@dataclass
class SequenceResult:
    sequence: TestSequence
    aborted: bool = False
    abort_reason: str | None = None


@dataclass(frozen=True)
class ValueDictionary:
    strings: tuple = ()
    integers: tuple = ()
    booleans: tuple = ()

    @classmethod
    def default(cls, oversize_length: int = DEFAULT_OVERSIZE_LENGTH) -> "ValueDictionary":
        return cls(
            strings=("", "null", "0", "-1", "' OR 1=1 --", "A" * oversize_length),
            integers=(0, -1, 2**31 - 1, 2**63 - 1),
            booleans=("true", "false"),
        )

    @classmethod
    def load(cls, path: str) -> "ValueDictionary":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(
            strings=tuple(raw.get("strings", ())),
            integers=tuple(raw.get("integers", ())),
            booleans=tuple(raw.get("booleans", ())),
        )


@dataclass(frozen=True)
class FuzzConfig:
    max_sequence_length: int = 4
    budget_sequences: int | None = 50
    budget_seconds: float | None = None
    quiescence_ms: int = 250
    seed: int = 0
    dictionary_path: str | None = None
    oversize_length: int = DEFAULT_OVERSIZE_LENGTH
    headers: tuple = ()  # static extra headers as (name, value) pairs

    def __post_init__(self):
        if self.max_sequence_length < 1:
            raise ValueError("max_sequence_length must be >= 1")
        if not self.budget_sequences and not self.budget_seconds:
            raise ValueError("one of budget_sequences / budget_seconds is required")
        if self.budget_sequences is not None and self.budget_sequences < 1:
            raise ValueError("budget_sequences must be >= 1")
        if self.budget_seconds is not None and self.budget_seconds <= 0:
            raise ValueError("budget_seconds must be > 0")

    def dictionary(self) -> ValueDictionary:
        if self.dictionary_path:
            return ValueDictionary.load(self.dictionary_path)
        return ValueDictionary.default(self.oversize_length)

    def to_dict(self) -> dict:
        return {
            "max_sequence_length": self.max_sequence_length,
            "budget_sequences": self.budget_sequences,
            "budget_seconds": self.budget_seconds,
            "quiescence_ms": self.quiescence_ms,
            "seed": self.seed,
            "dictionary_path": self.dictionary_path,
            "oversize_length": self.oversize_length,
            "headers": [list(h) for h in self.headers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FuzzConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in d.items() if k in known}
        headers = kwargs.get("headers")
        if isinstance(headers, dict):  # config files write a plain mapping
            kwargs["headers"] = tuple(sorted(headers.items()))
        elif headers is not None:
            kwargs["headers"] = tuple(tuple(h) for h in headers)
        return cls(**kwargs)


def _value_for(param, rng: random.Random):
    enum = param.constraint("enum")
    if enum:
        return rng.choice(list(enum))
    if param.kind == "integer":
        low = param.constraint("minimum", 0)
        high = param.constraint("maximum", 100)
        return rng.randint(int(low), int(high))
    if param.kind == "number":
        return round(rng.uniform(0, 100), 2)
    if param.kind == "boolean":
        return rng.choice((True, False))
    if param.constraint("format") == "email":
        return f"user{rng.randrange(10000)}@example.com"
    return f"x{rng.randrange(10000)}"


def _plan_case(
    op: OperationDef,
    rng: random.Random,
    edges_by_param: dict,
    producer_ops: dict[str, OperationDef],
    cases: list[FuzzCase],
    max_len: int,
) -> FuzzCase:
    """Plan one case for ``op``, prepending producer cases into ``cases``
    when a dependency edge can still fit under the length budget."""
    bindings: dict = {}
    fed_from: dict = {}
    producer_index = {c.operation: i for i, c in enumerate(cases)}
    for param in op.params:
        optional = param.name not in op.required
        if optional and rng.random() < 0.5:
            continue
        edges = edges_by_param.get((op.id, param.name), ())
        if edges and len(cases) + 1 < max_len and rng.random() < 0.9:
            edge = rng.choice(edges)
            if edge.producer not in producer_index:
                producer = producer_ops[edge.producer]
                producer_case = FuzzCase(
                    operation=producer.id,
                    bindings={
                        p.name: _value_for(p, rng)
                        for p in producer.params
                        if p.name in producer.required or rng.random() < 0.5
                    },
                )
                producer_index[producer.id] = len(cases)
                cases.append(producer_case)
            ref = DependencyRef(producer_index[edge.producer], edge.producer_field)
            bindings[param.name] = ref
            fed_from[param.name] = ref
        else:
            bindings[param.name] = _value_for(param, rng)
    case = FuzzCase(operation=op.id, bindings=bindings, fed_from=fed_from)
    cases.append(case)
    return case


def _mutation_candidates(op: OperationDef) -> list[MutationDescriptor]:
    out = []
    for param in op.params:
        for kind in ("type-confusion", "boundary-value", "oversize-string", "invalid-enum"):
            out.append(MutationDescriptor(kind, param.name))
        if param.name in op.required:
            out.append(MutationDescriptor("drop-required-field", param.name))
    if any(p.location == "body-field" for p in op.params):
        out.append(MutationDescriptor("garbage-bytes"))
    return out


def generate_sequences(model: ApiModel, deps: list[DependencyEdge], cfg: FuzzConfig, seed: int | None = None):
    """Deterministic stream of test sequences for a fixed seed.

    Every operation appears unmutated in the leading sequences (one per
    operation); after that, each sequence carries one mutated case.  The
    stream ends when budget_sequences is reached; a caller enforcing a time
    budget simply stops consuming.
    """
    rng = random.Random(cfg.seed if seed is None else seed)
    ops = sorted(model.operations, key=lambda o: o.id)
    if not ops:
        return
    producer_ops = {op.id: op for op in ops}
    edges_by_param: dict = {}
    for edge in deps:
        edges_by_param.setdefault((edge.consumer, edge.consumer_param), []).append(edge)
    dictionary = cfg.dictionary()

    emitted = 0

    def budget_left():
        return cfg.budget_sequences is None or emitted < cfg.budget_sequences

    for op in ops:
        if not budget_left():
            return
        cases: list[FuzzCase] = []
        _plan_case(op, rng, edges_by_param, producer_ops, cases, cfg.max_sequence_length)
        yield TestSequence(id=f"s{emitted:04d}", cases=cases)
        emitted += 1

    while budget_left():
        op = rng.choice(ops)
        cases = []
        _plan_case(op, rng, edges_by_param, producer_ops, cases, cfg.max_sequence_length)
        target_idx = len(cases) - 1
        candidates = _mutation_candidates(producer_ops[cases[target_idx].operation])
        if candidates:
            descriptor = rng.choice(candidates)
            cases[target_idx] = mutate_case(
                cases[target_idx], descriptor, dictionary, producer_ops[cases[target_idx].operation]
            )
        yield TestSequence(id=f"s{emitted:04d}", cases=cases)
        emitted += 1


def _is_numeric(value) -> bool:
    if isinstance(value, bool):
        return False
    if isinstance(value, (int, float)):
        return True
    try:
        float(str(value))
        return True
    except (TypeError, ValueError):
        return False


def mutate_case(
    template: FuzzCase,
    descriptor: MutationDescriptor,
    dictionary: ValueDictionary,
    operation: OperationDef | None = None,
) -> FuzzCase:
    """A copy of ``template`` differing in exactly the targeted parameter
    (or, for garbage-bytes, only in the raw request body)."""
    target = descriptor.target_param
    if descriptor.kind == "garbage-bytes":
        if operation is not None and not any(p.location == "body-field" for p in operation.params):
            raise InvalidTarget("operation has no request body to garble")
        return FuzzCase(
            operation=template.operation,
            bindings=dict(template.bindings),
            mutation=descriptor,
            fed_from=dict(template.fed_from),
            body_override=GARBAGE_BODY,
        )

    if operation is not None:
        if operation.param(target) is None:
            raise InvalidTarget(f"{template.operation} has no param {target!r}")
    elif target not in template.bindings:
        raise InvalidTarget(f"case binds no param {target!r}")

    bindings = dict(template.bindings)
    fed_from = dict(template.fed_from)
    current = bindings.get(target)

    if descriptor.kind == "drop-required-field":
        if target not in bindings:
            raise InvalidTarget(f"param {target!r} is not bound, cannot drop")
        del bindings[target]
        fed_from.pop(target, None)
        return FuzzCase(
            operation=template.operation, bindings=bindings, mutation=descriptor, fed_from=fed_from
        )

    if descriptor.kind == "type-confusion":
        if _is_numeric(current):
            value = next(s for s in dictionary.strings if not _is_numeric(s))
        else:
            value = next(i for i in dictionary.integers)
    elif descriptor.kind == "boundary-value":
        kind = operation.param(target).kind if operation else ("integer" if _is_numeric(current) else "string")
        pool = dictionary.integers if kind in ("integer", "number") else ("", "0", "-1")
        value = next(v for v in pool if v != current)
    elif descriptor.kind == "oversize-string":
        value = max(dictionary.strings, key=len)
        if value == current:
            value += "A"
    elif descriptor.kind == "invalid-enum":
        enum = operation.param(target).constraint("enum", ()) if operation else ()
        value = "__not_in_enum__"
        while value in enum or value == current:
            value += "_"
    else:  # pragma: no cover - MutationDescriptor validates kinds
        raise InvalidTarget(descriptor.kind)

    bindings[target] = value
    fed_from.pop(target, None)
    return FuzzCase(operation=template.operation, bindings=bindings, mutation=descriptor, fed_from=fed_from)


def extract_field(value, dotted_path: str):
    """Walk a dotted field path through parsed JSON; lists descend to [0]."""
    for segment in dotted_path.split("."):
        while isinstance(value, list):
            if not value:
                return None
            value = value[0]
        if not isinstance(value, dict) or segment not in value:
            return None
        value = value[segment]
    while isinstance(value, list):
        if not value:
            return None
        value = value[0]
    return value


def _now_us() -> int:
    return time.time_ns() // 1000


def build_request(model: ApiModel, case: FuzzCase) -> tuple[str, str, dict, object]:
    """(method, path-with-query, headers, body) for a resolved case."""
    op = model.operation(case.operation)
    path = op.path_template
    query = {}
    headers = {}
    body_fields = {}
    for param in op.params:
        if param.name not in case.bindings:
            continue
        value = case.bindings[param.name]
        if isinstance(value, DependencyRef):
            raise ValueError(f"unresolved dependency binding for {param.name}")
        if param.location == "path":
            path = path.replace("{%s}" % param.name, urllib.parse.quote(str(value), safe=""))
        elif param.location == "query":
            query[param.name] = value
        elif param.location == "header":
            headers[param.name] = str(value)
        else:
            body_fields[param.name] = value
    if query:
        path += "?" + urllib.parse.urlencode({k: str(v) for k, v in query.items()})
    if case.body_override is not None:
        return op.method, path, headers, case.body_override
    return op.method, path, headers, (body_fields if body_fields else None)


def execute_sequence(
    model: ApiModel,
    seq: TestSequence,
    target: str,
    quiescence: float = 0.25,
    extra_headers: dict | None = None,
) -> SequenceResult:
    """Run one sequence serially against ``target`` (base URL or host:port).

    Dependency-fed bindings are resolved from earlier responses in the same
    sequence; a consumer whose producer response lacks the field is skipped
    and marked.  A refused connection aborts the rest of the sequence.
    Waits the quiescence window after every response so trailing
    sub-requests land in the capture log before the next request.
    """
    base = target if target.startswith("http") else f"http://{target}"
    result = SequenceResult(sequence=seq)
    parsed_responses: list = [None] * len(seq.cases)
    session = requests.Session()
    try:
        for idx, case in enumerate(seq.cases):
            if result.aborted:
                case.skipped = SKIP_ABORTED
                continue
            if not _resolve_bindings(case, seq, parsed_responses):
                case.skipped = SKIP_DEPENDENCY_UNSATISFIED
                continue
            method, path, headers, body = build_request(model, case)
            if extra_headers:
                headers = {**extra_headers, **headers}
            kwargs: dict = {"timeout": REQUEST_TIMEOUT, "headers": headers}
            if isinstance(body, bytes):
                kwargs["data"] = body
            elif body is not None:
                kwargs["json"] = body
            case.sent_at = _now_us()
            try:
                response = session.request(method, base + path, **kwargs)
            except requests.exceptions.ConnectionError as exc:
                case.received_at = _now_us()
                case.skipped = SKIP_ABORTED
                result.aborted = True
                result.abort_reason = f"target unreachable: {exc.__class__.__name__}"
                continue
            except requests.exceptions.Timeout:
                case.received_at = _now_us()
                case.response_status = 0  # synthetic: no response observed
                time.sleep(quiescence)
                continue
            case.received_at = _now_us()
            case.response_status = response.status_code
            case.response_body = response.content
            case.response_digest = hashlib.sha256(response.content).hexdigest()
            try:
                parsed_responses[idx] = response.json()
            except ValueError:
                parsed_responses[idx] = None
            time.sleep(quiescence)
    finally:
        session.close()
    return result


def _resolve_bindings(case: FuzzCase, seq: TestSequence, parsed_responses: list) -> bool:
    for name, value in list(case.bindings.items()):
        if not isinstance(value, DependencyRef):
            continue
        producer = seq.cases[value.case_index]
        ok = (
            producer.skipped is None
            and producer.response_status is not None
            and 200 <= producer.response_status < 300
        )
        resolved = extract_field(parsed_responses[value.case_index], value.field_path) if ok else None
        if resolved is None:
            return False
        case.bindings[name] = resolved
    return True
