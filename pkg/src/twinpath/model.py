"""The immutable digital-twin network model and its JSON file format."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from types import MappingProxyType
from typing import Any, Mapping

from . import logic
from .logic import Expr
from .values import FactValue, FactValueError, ValueKind

FORMAT_VERSION = 1

LOCATIONS = ("container1", "link", "container2", "network")
RESERVED_IDS = frozenset(LOCATIONS)
REVISIT_POLICIES = ("link-once", "container-once", "unlimited")
CREATED_FACT_PREFIX = "new:"


class ModelError(Exception):
    """Base class for model loading failures."""


class ModelParseError(ModelError):
    pass


class ModelReferenceError(ModelError):
    pass


class ModelTypeError(ModelError):
    pass


def created_fact_id(entity: str, cpid: str) -> str:
    """Deterministic id for a fact materialised by post-create."""
    return f"{CREATED_FACT_PREFIX}{entity}:{cpid}"


# -- domain types --


@dataclass(frozen=True)
class CommonProperty:
    id: str
    name: str
    value_kind: ValueKind


@dataclass(frozen=True)
class ContainerType:
    id: str
    name: str


@dataclass(frozen=True)
class Fact:
    id: str
    cpid: str | None
    name: str
    value: FactValue

    def with_value(self, value: FactValue) -> Fact:
        return Fact(self.id, self.cpid, self.name, value)


@dataclass(frozen=True)
class Container:
    id: str
    name: str
    facts: tuple[str, ...] = ()
    parent: str | None = None
    container_type: str | None = None


@dataclass(frozen=True)
class Link:
    id: str
    name: str
    source: str
    destination: str
    traversability: Decimal
    facts: tuple[str, ...] = ()


@dataclass(frozen=True)
class Action:
    id: str
    description: str
    command: str


@dataclass(frozen=True)
class CIA:
    confidentiality: Decimal = Decimal(0)
    integrity: Decimal = Decimal(0)
    availability: Decimal = Decimal(0)


@dataclass(frozen=True)
class Requirement:
    """Where to find one input value: a location plus a fact id or CPID."""

    location: str
    fact: str | None = None
    cpid: str | None = None


@dataclass(frozen=True)
class Precondition:
    id: str
    requirements: tuple[Requirement, ...]
    expression: Expr


@dataclass(frozen=True)
class Target:
    """Postcondition target.

    ``kind`` is ``fact`` (by id), ``entity_cpid`` (``entity`` is a location name
    or a literal entity id) or ``all_with_cpid``.
    """

    kind: str
    fact: str | None = None
    entity: str | None = None
    cpid: str | None = None


@dataclass(frozen=True)
class Postcondition:
    id: str
    requirements: tuple[Requirement, ...]
    expression: Expr
    target: Target


@dataclass(frozen=True)
class Rule:
    id: str
    name: str
    is_traversal: bool
    success: Decimal
    run_time: Decimal = Decimal(0)
    cia: CIA = CIA()
    preconditions: tuple[Precondition, ...] = ()
    postconditions: tuple[Postcondition, ...] = ()
    actions: tuple[str, ...] = ()


@dataclass(frozen=True)
class Scenario:
    name: str
    start_container: str
    end_container: str
    max_nontraversal_per_connection: int = 0
    pre_ignore_missing: frozenset[str] = frozenset()
    post_ignore_facts: frozenset[str] = frozenset()
    post_ignore_cpids: frozenset[str] = frozenset()
    post_create_cpids: frozenset[str] = frozenset()
    initial_overrides: Mapping[str, FactValue] = field(default_factory=lambda: MappingProxyType({}))
    revisit_policy: str = "link-once"
    max_connections: int | None = None
    time_limit: Decimal | None = None
    branch_on_traversal_rules: bool = False


def _frozen(d: dict) -> Mapping:
    return MappingProxyType(d)


@dataclass(frozen=True)
class Network:
    """Fully resolved, read-only network.

    ``facts`` holds every base fact (entity-owned and network-level);
    ``network_facts`` lists the ids owned by the network itself.
    """

    common_properties: Mapping[str, CommonProperty]
    container_types: Mapping[str, ContainerType]
    containers: Mapping[str, Container]
    links: Mapping[str, Link]
    facts: Mapping[str, Fact]
    network_facts: tuple[str, ...]
    rules: Mapping[str, Rule]
    actions: Mapping[str, Action]
    scenarios: Mapping[str, Scenario]

    # derived lookups, excluded from equality
    fact_owner: Mapping[str, str | None] = field(compare=False, repr=False, default=None)  # type: ignore[assignment]
    entity_cpid: Mapping[tuple[str | None, str], str] = field(compare=False, repr=False, default=None)  # type: ignore[assignment]
    outgoing: Mapping[str, tuple[Link, ...]] = field(compare=False, repr=False, default=None)  # type: ignore[assignment]
    facts_by_cpid: Mapping[str, tuple[str, ...]] = field(compare=False, repr=False, default=None)  # type: ignore[assignment]
    rule_order: tuple[Rule, ...] = field(compare=False, repr=False, default=())

    def __post_init__(self) -> None:
        owner: dict[str, str | None] = {fid: None for fid in self.network_facts}
        for ent in (*self.containers.values(), *self.links.values()):
            for fid in ent.facts:
                owner[fid] = ent.id
        index: dict[tuple[str | None, str], str] = {}
        by_cpid: dict[str, list[str]] = {}
        for fid, ent_id in owner.items():
            cpid = self.facts[fid].cpid
            if cpid is not None:
                index.setdefault((ent_id, cpid), fid)
                by_cpid.setdefault(cpid, []).append(fid)
        out: dict[str, list[Link]] = {cid: [] for cid in self.containers}
        for link in self.links.values():
            out.setdefault(link.source, []).append(link)
        ordered = {
            cid: tuple(sorted(links, key=lambda l: (-l.traversability, l.id))) for cid, links in out.items()
        }
        order = tuple(sorted(self.rules.values(), key=lambda r: (-r.success, r.id)))
        object.__setattr__(self, "fact_owner", _frozen(owner))
        object.__setattr__(self, "entity_cpid", _frozen(index))
        object.__setattr__(self, "outgoing", _frozen(ordered))
        object.__setattr__(self, "rule_order", order)
        object.__setattr__(self, "facts_by_cpid", _frozen({k: tuple(sorted(v)) for k, v in by_cpid.items()}))

    def entity(self, entity_id: str) -> Container | Link | None:
        return self.containers.get(entity_id) or self.links.get(entity_id)

    def entity_facts(self, entity_id: str | None) -> tuple[str, ...]:
        if entity_id is None:
            return self.network_facts
        ent = self.entity(entity_id)
        return ent.facts if ent is not None else ()

    def fact_kind(self, fact_id: str) -> ValueKind:
        return self.facts[fact_id].value.kind

    def scenario(self, name: str | None = None) -> Scenario:
        if name is None:
            if not self.scenarios:
                raise KeyError("model defines no scenarios")
            return next(iter(self.scenarios.values()))
        return self.scenarios[name]


# -- loading --


def _req(doc: Mapping, key: str, where: str) -> Any:
    try:
        return doc[key]
    except (KeyError, TypeError):
        raise ModelParseError(f"{where}: missing required key {key!r}") from None


def _str(doc: Mapping, key: str, where: str, default: str | None = None) -> str:
    v = doc.get(key, default) if default is not None else _req(doc, key, where)
    if not isinstance(v, str):
        raise ModelParseError(f"{where}: {key!r} must be a string")
    return v


def _opt_str(doc: Mapping, key: str, where: str) -> str | None:
    v = doc.get(key)
    if v is not None and not isinstance(v, str):
        raise ModelParseError(f"{where}: {key!r} must be a string or null")
    return v


def _dec(raw: Any, where: str) -> Decimal:
    if isinstance(raw, bool):
        raise ModelParseError(f"{where}: expected a decimal, got a boolean")
    if isinstance(raw, (int, Decimal, str)):
        try:
            d = Decimal(raw)
        except InvalidOperation:
            raise ModelParseError(f"{where}: bad decimal {raw!r}") from None
        if not d.is_finite():
            raise ModelParseError(f"{where}: decimal must be finite")
        return d
    raise ModelParseError(f"{where}: expected a decimal, got {raw!r}")


def _list(doc: Mapping, key: str, where: str) -> list:
    v = doc.get(key, [])
    if not isinstance(v, list):
        raise ModelParseError(f"{where}: {key!r} must be a list")
    return v


def _value(raw: Any, where: str) -> FactValue:
    try:
        return FactValue.from_json(raw)
    except FactValueError as exc:
        raise ModelParseError(f"{where}: {exc}") from None


def _expr(raw: Any, where: str) -> Expr:
    try:
        return logic.expr_from_json(raw)
    except logic.ExpressionError as exc:
        raise ModelParseError(f"{where}: {exc}") from None


def _requirements(raw: Any, where: str) -> tuple[Requirement, ...]:
    if not isinstance(raw, list):
        raise ModelParseError(f"{where}: requirements must be a list")
    out = []
    for i, r in enumerate(raw):
        w = f"{where}.requirements[{i}]"
        loc = _str(r, "location", w)
        if loc not in LOCATIONS:
            raise ModelParseError(f"{w}: unknown location {loc!r}")
        fact, cpid = _opt_str(r, "fact", w), _opt_str(r, "cpid", w)
        if (fact is None) == (cpid is None):
            raise ModelParseError(f"{w}: exactly one of 'fact' or 'cpid' is required")
        out.append(Requirement(loc, fact, cpid))
    return tuple(out)


def _target(raw: Any, where: str) -> Target:
    if not isinstance(raw, dict) or len(raw) != 1:
        raise ModelParseError(f"{where}: target must be a one-key object")
    ((tag, body),) = raw.items()
    if tag == "fact" and isinstance(body, str):
        return Target("fact", fact=body)
    if tag == "all_with_cpid" and isinstance(body, str):
        return Target("all_with_cpid", cpid=body)
    if tag == "entity_cpid" and isinstance(body, dict):
        return Target("entity_cpid", entity=_str(body, "entity", where), cpid=_str(body, "cpid", where))
    raise ModelParseError(f"{where}: malformed target {raw!r}")


def _unique(items: list, where: str) -> dict:
    out: dict = {}
    for item in items:
        if item.id in out:
            raise ModelReferenceError(f"duplicate {where} id {item.id!r}")
        out[item.id] = item
    return out


def load_model(data: bytes | str) -> Network:
    """Parse and resolve a model file.

    Raises ``ModelParseError`` for malformed documents, ``ModelReferenceError``
    for dangling or duplicate ids and ``ModelTypeError`` when a fact's value
    kind differs from its common property's kind.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ModelParseError(f"model file is not UTF-8: {exc}") from None
    try:
        doc = json.loads(data, parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelParseError("model document must be a JSON object")
    if doc.get("format") != FORMAT_VERSION:
        raise ModelParseError(f"unsupported or missing format version {doc.get('format')!r}")

    cps = _unique(
        [
            CommonProperty(
                _str(c, "id", "common_property"),
                _str(c, "name", "common_property", default=c.get("id", "")),
                _kind(c),
            )
            for c in _list(doc, "common_properties", "model")
        ],
        "common property",
    )
    ctypes = _unique(
        [
            ContainerType(_str(t, "id", "container_type"), _str(t, "name", "container_type", default=t.get("id", "")))
            for t in _list(doc, "container_types", "model")
        ],
        "container type",
    )

    facts: list[Fact] = []

    def read_facts(raw: Any, where: str) -> tuple[str, ...]:
        if not isinstance(raw, list):
            raise ModelParseError(f"{where}: facts must be a list")
        ids = []
        for f in raw:
            fid = _str(f, "id", where)
            fact = Fact(fid, _opt_str(f, "cpid", where), _str(f, "name", where, default=fid), _value(_req(f, "value", where), f"{where}.{fid}"))
            facts.append(fact)
            ids.append(fid)
        return tuple(ids)

    containers = _unique(
        [
            Container(
                id=_str(c, "id", "container"),
                name=_str(c, "name", "container", default=c.get("id", "")),
                facts=read_facts(c.get("facts", []), f"container {c.get('id')!r}"),
                parent=_opt_str(c, "parent", "container"),
                container_type=_opt_str(c, "type", "container"),
            )
            for c in _list(doc, "containers", "model")
        ],
        "container",
    )
    links = _unique(
        [
            Link(
                id=_str(l, "id", "link"),
                name=_str(l, "name", "link", default=l.get("id", "")),
                source=_str(l, "source", "link"),
                destination=_str(l, "destination", "link"),
                traversability=_dec(l.get("traversability", "1"), f"link {l.get('id')!r}"),
                facts=read_facts(l.get("facts", []), f"link {l.get('id')!r}"),
            )
            for l in _list(doc, "links", "model")
        ],
        "link",
    )
    network_facts = read_facts(doc.get("facts", []), "network facts")
    all_facts = _unique(facts, "fact")
    if set(containers) & set(links):
        raise ModelReferenceError(f"ids shared by a container and a link: {sorted(set(containers) & set(links))}")

    actions = _unique(
        [
            Action(_str(a, "id", "action"), _str(a, "description", "action", default=""), _str(a, "command", "action"))
            for a in _list(doc, "actions", "model")
        ],
        "action",
    )
    rules = _unique([_rule(r) for r in _list(doc, "rules", "model")], "rule")
    scenarios_list = [_scenario(s) for s in _list(doc, "scenarios", "model")]
    scenarios: dict[str, Scenario] = {}
    for s in scenarios_list:
        if s.name in scenarios:
            raise ModelReferenceError(f"duplicate scenario name {s.name!r}")
        scenarios[s.name] = s

    # references
    for f in all_facts.values():
        if f.cpid is not None:
            if f.cpid not in cps:
                raise ModelReferenceError(f"fact {f.id!r} references unknown common property {f.cpid!r}")
            if cps[f.cpid].value_kind is not f.value.kind:
                raise ModelTypeError(
                    f"fact {f.id!r} holds a {f.value.kind.value} but {f.cpid!r} is {cps[f.cpid].value_kind.value}"
                )
    for c in containers.values():
        if c.parent is not None and c.parent not in containers:
            raise ModelReferenceError(f"container {c.id!r}: unknown parent {c.parent!r}")
        if c.container_type is not None and c.container_type not in ctypes:
            raise ModelReferenceError(f"container {c.id!r}: unknown container type {c.container_type!r}")
    for l in links.values():
        for end in (l.source, l.destination):
            if end not in containers:
                raise ModelReferenceError(f"link {l.id!r}: unknown container {end!r}")
    for r in rules.values():
        for a in r.actions:
            if a not in actions:
                raise ModelReferenceError(f"rule {r.id!r}: unknown action {a!r}")
        for cond in (*r.preconditions, *r.postconditions):
            for q in cond.requirements:
                if q.fact is not None and q.fact not in all_facts:
                    raise ModelReferenceError(f"condition {cond.id!r}: unknown fact {q.fact!r}")
                if q.cpid is not None and q.cpid not in cps:
                    raise ModelReferenceError(f"condition {cond.id!r}: unknown common property {q.cpid!r}")
        for post in r.postconditions:
            t = post.target
            if t.kind == "fact" and t.fact not in all_facts:
                raise ModelReferenceError(f"postcondition {post.id!r}: unknown target fact {t.fact!r}")
            if t.cpid is not None and t.cpid not in cps:
                raise ModelReferenceError(f"postcondition {post.id!r}: unknown common property {t.cpid!r}")
            if t.kind == "entity_cpid" and t.entity not in RESERVED_IDS and t.entity not in containers and t.entity not in links:
                raise ModelReferenceError(f"postcondition {post.id!r}: unknown entity {t.entity!r}")
    for s in scenarios.values():
        for end in (s.start_container, s.end_container):
            if end not in containers:
                raise ModelReferenceError(f"scenario {s.name!r}: unknown container {end!r}")
        for fid in (*s.post_ignore_facts, *s.initial_overrides):
            if fid not in all_facts:
                raise ModelReferenceError(f"scenario {s.name!r}: unknown fact {fid!r}")
        for cpid in (*s.post_ignore_cpids, *s.post_create_cpids):
            if cpid not in cps:
                raise ModelReferenceError(f"scenario {s.name!r}: unknown common property {cpid!r}")

    return Network(
        common_properties=_frozen(cps),
        container_types=_frozen(ctypes),
        containers=_frozen(containers),
        links=_frozen(links),
        facts=_frozen(all_facts),
        network_facts=network_facts,
        rules=_frozen(rules),
        actions=_frozen(actions),
        scenarios=_frozen(scenarios),
    )


def _kind(doc: Mapping) -> ValueKind:
    raw = _req(doc, "kind", "common_property")
    try:
        return ValueKind(raw)
    except ValueError:
        raise ModelParseError(f"common property {doc.get('id')!r}: unknown kind {raw!r}") from None


def _rule(r: Any) -> Rule:
    rid = _str(r, "id", "rule")
    w = f"rule {rid!r}"
    trav = r.get("is_traversal", False)
    if not isinstance(trav, bool):
        raise ModelParseError(f"{w}: is_traversal must be a boolean")
    cia_doc = r.get("cia", {}) or {}
    cia = CIA(*(_dec(cia_doc.get(k, "0"), f"{w}.cia.{k}") for k in ("confidentiality", "integrity", "availability")))
    pres = tuple(
        Precondition(_str(p, "id", w), _requirements(p.get("requirements", []), w), _expr(_req(p, "expression", w), w))
        for p in _list(r, "preconditions", w)
    )
    posts = tuple(
        Postcondition(
            _str(p, "id", w),
            _requirements(p.get("requirements", []), w),
            _expr(_req(p, "expression", w), w),
            _target(_req(p, "target", w), w),
        )
        for p in _list(r, "postconditions", w)
    )
    acts = _list(r, "actions", w)
    if not all(isinstance(a, str) for a in acts):
        raise ModelParseError(f"{w}: actions must be a list of ids")
    return Rule(
        id=rid,
        name=_str(r, "name", w, default=rid),
        is_traversal=trav,
        success=_dec(_req(r, "success", w), f"{w}.success"),
        run_time=_dec(r.get("run_time", "0"), f"{w}.run_time"),
        cia=cia,
        preconditions=pres,
        postconditions=posts,
        actions=tuple(acts),
    )


def _id_set(doc: Mapping, key: str, where: str) -> frozenset[str]:
    v = _list(doc, key, where)
    if not all(isinstance(x, str) for x in v):
        raise ModelParseError(f"{where}: {key!r} must list ids")
    return frozenset(v)


def _opt_int(doc: Mapping, key: str, where: str) -> int | None:
    v = doc.get(key)
    if v is None:
        return None
    if not isinstance(v, int) or isinstance(v, bool):
        raise ModelParseError(f"{where}: {key!r} must be an integer")
    return v


def _scenario(s: Any) -> Scenario:
    name = _str(s, "name", "scenario")
    w = f"scenario {name!r}"
    overrides_doc = s.get("initial_overrides", {}) or {}
    if not isinstance(overrides_doc, dict):
        raise ModelParseError(f"{w}: initial_overrides must be an object")
    policy = s.get("revisit_policy", "link-once")
    if policy not in REVISIT_POLICIES:
        raise ModelParseError(f"{w}: unknown revisit policy {policy!r}")
    branch = s.get("branch_on_traversal_rules", False)
    if not isinstance(branch, bool):
        raise ModelParseError(f"{w}: branch_on_traversal_rules must be a boolean")
    tl = s.get("time_limit")
    return Scenario(
        name=name,
        start_container=_str(s, "start", w),
        end_container=_str(s, "end", w),
        max_nontraversal_per_connection=_opt_int(s, "max_nontraversal_per_connection", w) or 0,
        pre_ignore_missing=_id_set(s, "pre_ignore_missing", w),
        post_ignore_facts=_id_set(s, "post_ignore_facts", w),
        post_ignore_cpids=_id_set(s, "post_ignore_cpids", w),
        post_create_cpids=_id_set(s, "post_create_cpids", w),
        initial_overrides=_frozen({k: _value(v, f"{w}.initial_overrides.{k}") for k, v in overrides_doc.items()}),
        revisit_policy=policy,
        max_connections=_opt_int(s, "max_connections", w),
        time_limit=None if tl is None else _dec(tl, f"{w}.time_limit"),
        branch_on_traversal_rules=branch,
    )


# -- serialization --


def _facts_doc(net: Network, ids: tuple[str, ...]) -> list[dict]:
    out = []
    for fid in ids:
        f = net.facts[fid]
        d: dict[str, Any] = {"id": f.id, "name": f.name, "value": f.value.to_json()}
        if f.cpid is not None:
            d["cpid"] = f.cpid
        out.append(d)
    return out


def _req_doc(q: Requirement) -> dict:
    d = {"location": q.location}
    if q.fact is not None:
        d["fact"] = q.fact
    else:
        d["cpid"] = q.cpid  # type: ignore[assignment]
    return d


def _target_doc(t: Target) -> dict:
    if t.kind == "fact":
        return {"fact": t.fact}
    if t.kind == "all_with_cpid":
        return {"all_with_cpid": t.cpid}
    return {"entity_cpid": {"entity": t.entity, "cpid": t.cpid}}


def model_to_doc(net: Network) -> dict[str, Any]:
    return {
        "format": FORMAT_VERSION,
        "common_properties": [
            {"id": c.id, "name": c.name, "kind": c.value_kind.value} for c in net.common_properties.values()
        ],
        "container_types": [{"id": t.id, "name": t.name} for t in net.container_types.values()],
        "containers": [
            {
                "id": c.id,
                "name": c.name,
                "parent": c.parent,
                "type": c.container_type,
                "facts": _facts_doc(net, c.facts),
            }
            for c in net.containers.values()
        ],
        "links": [
            {
                "id": l.id,
                "name": l.name,
                "source": l.source,
                "destination": l.destination,
                "traversability": str(l.traversability),
                "facts": _facts_doc(net, l.facts),
            }
            for l in net.links.values()
        ],
        "facts": _facts_doc(net, net.network_facts),
        "rules": [
            {
                "id": r.id,
                "name": r.name,
                "is_traversal": r.is_traversal,
                "success": str(r.success),
                "run_time": str(r.run_time),
                "cia": {
                    "confidentiality": str(r.cia.confidentiality),
                    "integrity": str(r.cia.integrity),
                    "availability": str(r.cia.availability),
                },
                "preconditions": [
                    {
                        "id": p.id,
                        "requirements": [_req_doc(q) for q in p.requirements],
                        "expression": logic.expr_to_json(p.expression),
                    }
                    for p in r.preconditions
                ],
                "postconditions": [
                    {
                        "id": p.id,
                        "requirements": [_req_doc(q) for q in p.requirements],
                        "expression": logic.expr_to_json(p.expression),
                        "target": _target_doc(p.target),
                    }
                    for p in r.postconditions
                ],
                "actions": list(r.actions),
            }
            for r in net.rules.values()
        ],
        "actions": [{"id": a.id, "description": a.description, "command": a.command} for a in net.actions.values()],
        "scenarios": [scenario_to_doc(s) for s in net.scenarios.values()],
    }


def scenario_to_doc(s: Scenario) -> dict[str, Any]:
    return {
        "name": s.name,
        "start": s.start_container,
        "end": s.end_container,
        "max_nontraversal_per_connection": s.max_nontraversal_per_connection,
        "pre_ignore_missing": sorted(s.pre_ignore_missing),
        "post_ignore_facts": sorted(s.post_ignore_facts),
        "post_ignore_cpids": sorted(s.post_ignore_cpids),
        "post_create_cpids": sorted(s.post_create_cpids),
        "initial_overrides": {k: v.to_json() for k, v in sorted(s.initial_overrides.items())},
        "revisit_policy": s.revisit_policy,
        "max_connections": s.max_connections,
        "time_limit": None if s.time_limit is None else str(s.time_limit),
        "branch_on_traversal_rules": s.branch_on_traversal_rules,
    }


def serialize_model(net: Network, *, indent: int | None = None) -> bytes:
    return json.dumps(model_to_doc(net), indent=indent, ensure_ascii=False).encode("utf-8")


def model_hash(net: Network) -> str:
    """SHA-256 over the serialized model; used to assert nothing mutated it."""
    return hashlib.sha256(serialize_model(net)).hexdigest()


# -- validation --


@dataclass(frozen=True)
class Diagnostic:
    id: str
    message: str

    def __str__(self) -> str:
        return f"{self.id}: {self.message}"


def requirement_kind(net: Network, q: Requirement) -> ValueKind:
    if q.fact is not None:
        return net.fact_kind(q.fact)
    return net.common_properties[q.cpid].value_kind  # type: ignore[index]


def validate_model(net: Network) -> list[Diagnostic]:
    """Check the invariants that loading does not enforce.

    Returns an empty list when the model is sound.
    """
    diags: list[Diagnostic] = []
    add = lambda i, m: diags.append(Diagnostic(i, m))  # noqa: E731

    for ent in (*net.containers.values(), *net.links.values()):
        if ent.id in RESERVED_IDS:
            add(ent.id, "entity id collides with a reserved location name")
        seen: dict[str, str] = {}
        for fid in ent.facts:
            cpid = net.facts[fid].cpid
            if cpid is None:
                continue
            if cpid in seen:
                add(ent.id, f"holds two facts for common property {cpid!r} ({seen[cpid]}, {fid})")
            seen[cpid] = fid
    seen_net: dict[str, str] = {}
    for fid in net.network_facts:
        cpid = net.facts[fid].cpid
        if cpid is not None:
            if cpid in seen_net:
                add("network", f"holds two facts for common property {cpid!r}")
            seen_net[cpid] = fid
    for fid in net.facts:
        if fid.startswith(CREATED_FACT_PREFIX):
            add(fid, f"fact ids starting with {CREATED_FACT_PREFIX!r} are reserved for created facts")

    for c in net.containers.values():
        seen_ids = {c.id}
        p = c.parent
        while p is not None:
            if p in seen_ids:
                add(c.id, "parent chain forms a cycle")
                break
            seen_ids.add(p)
            p = net.containers[p].parent

    for l in net.links.values():
        if not Decimal(0) <= l.traversability <= Decimal(1):
            add(l.id, f"traversability {l.traversability} outside [0, 1]")

    for a in net.actions.values():
        if not a.command.strip():
            add(a.id, "action command is empty")

    for r in net.rules.values():
        for name in ("confidentiality", "integrity", "availability"):
            v = getattr(r.cia, name)
            if not Decimal(0) <= v <= Decimal(1):
                add(r.id, f"{name} {v} outside [0, 1]")
        if r.run_time < 0:
            add(r.id, "run_time is negative")
        for p in r.preconditions:
            kinds = [requirement_kind(net, q) for q in p.requirements]
            if not isinstance(p.expression, logic.Compare):
                add(p.id, "precondition expression must be a comparison")
            try:
                logic.typecheck_expression(p.expression, kinds)
            except logic.ExpressionError as exc:
                add(p.id, str(exc))
            if logic.max_input_index(p.expression) + 1 != len(kinds):
                add(p.id, f"expression uses {logic.max_input_index(p.expression) + 1} input(s) for {len(kinds)} requirement(s)")
        for p in r.postconditions:
            kinds = [requirement_kind(net, q) for q in p.requirements]
            if not logic.is_value_root(p.expression):
                add(p.id, "postcondition expression must produce a value, not a comparison")
            try:
                result = logic.typecheck_expression(p.expression, kinds)
            except logic.ExpressionError as exc:
                add(p.id, str(exc))
                continue
            if logic.max_input_index(p.expression) + 1 != len(kinds):
                add(p.id, f"expression uses {logic.max_input_index(p.expression) + 1} input(s) for {len(kinds)} requirement(s)")
            t = p.target
            target_kind = (
                net.fact_kind(t.fact) if t.kind == "fact" else net.common_properties[t.cpid].value_kind  # type: ignore[index]
            )
            if not logic.assignable(result, target_kind):
                # integer division may still produce an integer at run time
                add(p.id, f"result kind {result.value} cannot be stored in a {target_kind.value} target")

    for s in net.scenarios.values():
        if s.max_nontraversal_per_connection < 0:
            add(s.name, "max_nontraversal_per_connection must be >= 0")
        if s.max_connections is not None and s.max_connections < 0:
            add(s.name, "max_connections must be >= 0")
        if s.revisit_policy == "unlimited" and s.max_connections is None and s.time_limit is None:
            add(s.name, "unlimited revisits need max_connections or time_limit to terminate")
        for fid, v in s.initial_overrides.items():
            if net.fact_kind(fid) is not v.kind:
                add(s.name, f"override for {fid!r} is {v.kind.value}, fact is {net.fact_kind(fid).value}")
    return diags
