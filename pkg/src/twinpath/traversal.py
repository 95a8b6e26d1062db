"""Reality-path engine.

A :class:`RealityPath` never touches the shared :class:`Network`; every fact
it changes or creates lives in the path's own :class:`VariantOverlay`. Lookups
consult the overlay first and fall back to the read-only base model.
"""

from __future__ import annotations

import json
import logging
import shlex
import shutil
import subprocess
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence, Union

from . import logic
from .metrics import TraversalMetrics
from .model import (
    LOCATIONS,
    Action,
    Fact,
    Link,
    Network,
    Postcondition,
    Precondition,
    Requirement,
    Rule,
    Scenario,
    Target,
    created_fact_id,
)
from .values import FactValue, ValueKind, default_value

__all__ = [
    "ActionLog",
    "Connection",
    "Missing",
    "Postcondition",
    "Precondition",
    "RealityPath",
    "Requirement",
    "VariantOverlay",
    "alter_fact",
    "apply_postconditions",
    "canonical_bytes",
    "create_post_fact",
    "evaluate_connection",
    "evaluate_rule_preconditions",
    "execute_action",
    "expand_path",
    "gather_requirements",
    "path_from_doc",
    "path_to_doc",
    "resolve_fact",
    "root_path",
    "run_traversal",
]

log = logging.getLogger(__name__)

ACTIVE, STALLED, FINAL = "active", "stalled", "final"
ADVANCED = "advanced"

FactKey = Union[str, tuple[Union[str, None], str]]
_UNSET = object()


class TraversalError(Exception):
    pass


class UnknownFact(TraversalError):
    pass


class KindMismatch(TraversalError):
    pass


class PostCreateError(TraversalError):
    pass


class PathFormatError(TraversalError):
    """A serialized path is malformed or refers to ids the local model lacks."""


# -- state --


class VariantOverlay:
    """Copy-on-write fact layer owned by a single path.

    ``by_fact_id`` holds the current state of every altered or created fact and
    only ever grows. ``by_entity_cpid`` is a lazily filled secondary index;
    ``created`` remembers the owner of each post-created fact.
    """

    __slots__ = ("by_fact_id", "by_entity_cpid", "created")

    def __init__(
        self,
        by_fact_id: dict[str, Fact] | None = None,
        by_entity_cpid: dict[tuple[str | None, str], str] | None = None,
        created: dict[str, tuple[str, str]] | None = None,
    ) -> None:
        self.by_fact_id = by_fact_id if by_fact_id is not None else {}
        self.by_entity_cpid = by_entity_cpid if by_entity_cpid is not None else {}
        self.created = created if created is not None else {}

    def copy(self) -> VariantOverlay:
        # Facts are immutable; alteration replaces the entry, so shallow copies isolate clones.
        return VariantOverlay(dict(self.by_fact_id), dict(self.by_entity_cpid), dict(self.created))

    def __len__(self) -> int:
        return len(self.by_fact_id)


@dataclass
class Connection:
    container1: str
    link: str
    container2: str
    triggered_rules: list[str] = field(default_factory=list)
    variant_snapshot: dict[str, FactValue] = field(default_factory=dict)

    def copy(self) -> Connection:
        return Connection(self.container1, self.link, self.container2, list(self.triggered_rules), dict(self.variant_snapshot))

    def entity_at(self, location: str) -> str | None:
        if location == "container1":
            return self.container1
        if location == "link":
            return self.link
        if location == "container2":
            return self.container2
        if location == "network":
            return None
        raise TraversalError(f"unknown location {location!r}")


class RealityPath:
    __slots__ = ("connections", "overlay", "used_links", "current_container", "status")

    def __init__(
        self,
        current_container: str,
        connections: tuple[Connection, ...] = (),
        overlay: VariantOverlay | None = None,
        used_links: frozenset[str] = frozenset(),
        status: str = ACTIVE,
    ) -> None:
        self.connections = connections
        self.overlay = overlay if overlay is not None else VariantOverlay()
        self.used_links = used_links
        self.current_container = current_container
        self.status = status

    def clone(self) -> RealityPath:
        # finished connections are never mutated, so the tuple is shared
        return RealityPath(self.current_container, self.connections, self.overlay.copy(), self.used_links, self.status)

    @property
    def id(self) -> str:
        """Route identity: the link sequence plus the rules triggered on it."""
        return "|".join(f"{c.link}[{','.join(c.triggered_rules)}]" for c in self.connections) or "<root>"

    @property
    def triggered_count(self) -> int:
        return sum(len(c.triggered_rules) for c in self.connections)

    def visited(self) -> list[str]:
        if not self.connections:
            return [self.current_container]
        return [self.connections[0].container1, *(c.container2 for c in self.connections)]

    def __repr__(self) -> str:
        return f"RealityPath({self.id!r}, status={self.status}, overlay={len(self.overlay)})"


@dataclass(frozen=True)
class Missing:
    """Requirement ``index`` of a condition could not be resolved."""

    index: int


# -- fact access --


def resolve_fact(path: RealityPath, net: Network, key: FactKey) -> Fact | None:
    """Look up a fact by id or by ``(entity id, CPID)``; overlay first.

    ``entity id`` of ``None`` addresses network-level facts.
    """
    ov = path.overlay
    if isinstance(key, str):
        f = ov.by_fact_id.get(key)
        return f if f is not None else net.facts.get(key)
    fid = ov.by_entity_cpid.get(key)
    if fid is not None:
        return ov.by_fact_id[fid]
    fid = net.entity_cpid.get(key)
    if fid is None:
        return None
    variant = ov.by_fact_id.get(fid)
    if variant is not None:
        ov.by_entity_cpid[key] = fid
        return variant
    return net.facts[fid]


def fact_owner(path: RealityPath, net: Network, fact_id: str) -> Any:
    """Owning entity id (``None`` for network facts), or ``_UNSET`` if unknown."""
    if fact_id in net.fact_owner:
        return net.fact_owner[fact_id]
    created = path.overlay.created.get(fact_id)
    return created[0] if created is not None else _UNSET


def alter_fact(path: RealityPath, net: Network, fact_id: str, new_value: FactValue) -> None:
    ov = path.overlay
    current = ov.by_fact_id.get(fact_id)
    if current is None:
        current = net.facts.get(fact_id)
        if current is None:
            raise UnknownFact(fact_id)
    if current.value.kind is not new_value.kind:
        raise KindMismatch(f"{fact_id} holds {current.value.kind.value}, got {new_value.kind.value}")
    ov.by_fact_id[fact_id] = current.with_value(new_value)


def create_post_fact(path: RealityPath, net: Network, entity_id: str, cpid: str, scenario: Scenario) -> str:
    """Materialise a ``cpid`` fact on ``entity_id`` inside the path's overlay."""
    if net.entity(entity_id) is None:
        raise PostCreateError(f"unknown entity {entity_id!r}")
    if cpid not in scenario.post_create_cpids:
        raise PostCreateError(f"{cpid!r} is not in the post-create list")
    if resolve_fact(path, net, (entity_id, cpid)) is not None:
        raise PostCreateError(f"{entity_id!r} already holds a {cpid!r} fact")
    cp = net.common_properties[cpid]
    fid = created_fact_id(entity_id, cpid)
    ov = path.overlay
    ov.by_fact_id[fid] = Fact(fid, cpid, cp.name, default_value(cp.value_kind))
    ov.by_entity_cpid[(entity_id, cpid)] = fid
    ov.created[fid] = (entity_id, cpid)
    return fid


def gather_requirements(
    path: RealityPath, net: Network, conn: Connection, reqs: Sequence[Requirement]
) -> list[FactValue] | Missing:
    slots: list[FactValue] = []
    for i, q in enumerate(reqs):
        ent = conn.entity_at(q.location)
        if q.cpid is not None:
            f = resolve_fact(path, net, (ent, q.cpid))
        else:
            f = resolve_fact(path, net, q.fact)  # type: ignore[arg-type]
            if f is not None and fact_owner(path, net, f.id) != ent:
                f = None
        if f is None:
            return Missing(i)
        slots.append(f.value)
    return slots


# -- rule evaluation --


class ActionLog:
    """Record of fired actions; ``live`` mode also spawns the commands."""

    def __init__(self, mode: str = "dry_run") -> None:
        if mode not in ("dry_run", "live"):
            raise ValueError(f"unknown action mode {mode!r}")
        self.mode = mode
        self.records: list[dict[str, Any]] = []
        self.spawned = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.records)

    def run(self, action: Action) -> dict[str, Any]:
        return execute_action(action, self.mode, self)


def execute_action(action: Action, mode: str, log_to: ActionLog) -> dict[str, Any]:
    record: dict[str, Any] = {"action": action.id, "command": action.command, "timestamp": time.time()}
    if mode == "live":
        argv = shlex.split(action.command)
        if not argv or shutil.which(argv[0]) is None:
            record["error"] = f"command not found: {argv[0] if argv else '<empty>'}"
        else:
            try:
                subprocess.Popen(
                    action.command, shell=True, stdin=subprocess.DEVNULL,
                    stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL, start_new_session=True,
                )
                with log_to._lock:
                    log_to.spawned += 1
            except OSError as exc:
                record["error"] = str(exc)
        if "error" in record:
            log.warning("action %s failed: %s", action.id, record["error"])
    with log_to._lock:
        log_to.records.append(record)
    return record


def evaluate_rule_preconditions(
    path: RealityPath,
    net: Network,
    conn: Connection,
    rule: Rule,
    scenario: Scenario,
    metrics: TraversalMetrics | None = None,
) -> bool:
    for pre in rule.preconditions:
        slots = gather_requirements(path, net, conn, pre.requirements)
        if isinstance(slots, Missing):
            if pre.id in scenario.pre_ignore_missing:
                continue
            return False
        try:
            result = logic.eval_expression(pre.expression, slots)
        except logic.ExpressionError:
            if metrics is not None:
                metrics.expression_errors += 1
            return False
        if result.kind is not ValueKind.BOOLEAN or not result.value:
            return False
    return True


def _target_facts(path: RealityPath, net: Network, conn: Connection, t: Target, scenario: Scenario) -> list[str]:
    if t.kind == "fact":
        return [t.fact] if resolve_fact(path, net, t.fact) is not None else []  # type: ignore[arg-type]
    if t.kind == "entity_cpid":
        ent = conn.entity_at(t.entity) if t.entity in LOCATIONS else t.entity  # type: ignore[arg-type]
        f = resolve_fact(path, net, (ent, t.cpid))  # type: ignore[arg-type]
        if f is not None:
            return [f.id]
        if ent is not None and t.cpid in scenario.post_create_cpids:
            return [create_post_fact(path, net, ent, t.cpid, scenario)]  # type: ignore[arg-type]
        return []
    base = net.facts_by_cpid.get(t.cpid, ())  # type: ignore[arg-type]
    created = [fid for fid, (_, cpid) in path.overlay.created.items() if cpid == t.cpid]
    return sorted((*base, *created))


def _coerce(value: FactValue, kind: ValueKind) -> FactValue | None:
    if value.kind is kind:
        return value
    if kind is ValueKind.DECIMAL and value.kind is ValueKind.INTEGER:
        return FactValue.decimal(value.value)  # type: ignore[arg-type]
    return None


def snapshot_for(path: RealityPath, net: Network, conn: Connection) -> dict[str, FactValue]:
    """Overlay entries owned by the connection's three entities."""
    touched = (conn.container1, conn.link, conn.container2)
    return {
        fid: f.value for fid, f in path.overlay.by_fact_id.items() if fact_owner(path, net, fid) in touched
    }


def apply_postconditions(
    path: RealityPath,
    net: Network,
    conn: Connection,
    rule: Rule,
    scenario: Scenario,
    metrics: TraversalMetrics | None = None,
) -> int:
    """Apply every postcondition of a triggered rule; return how many facts were written."""
    m = metrics if metrics is not None else TraversalMetrics()
    applied = 0
    for post in rule.postconditions:
        targets = _target_facts(path, net, conn, post.target, scenario)
        if not targets:
            m.postconditions_skipped += 1
            continue
        slots = gather_requirements(path, net, conn, post.requirements)
        if isinstance(slots, Missing):
            m.postconditions_skipped += 1
            continue
        try:
            value = logic.eval_expression(post.expression, slots)
        except logic.ExpressionError:
            m.expression_errors += 1
            m.postconditions_skipped += 1
            continue
        for fid in targets:
            if fid in scenario.post_ignore_facts:
                continue
            current = resolve_fact(path, net, fid)
            if current.cpid is not None and current.cpid in scenario.post_ignore_cpids:  # type: ignore[union-attr]
                continue
            v = _coerce(value, current.value.kind)  # type: ignore[union-attr]
            if v is None:
                m.expression_errors += 1
                continue
            alter_fact(path, net, fid, v)
            applied += 1
    conn.variant_snapshot = snapshot_for(path, net, conn)
    return applied


def _trigger(
    path: RealityPath,
    net: Network,
    conn: Connection,
    rule: Rule,
    scenario: Scenario,
    metrics: TraversalMetrics,
    actions: ActionLog | None,
) -> None:
    conn.triggered_rules.append(rule.id)
    metrics.rules_triggered += 1
    if actions is not None:
        for aid in rule.actions:
            actions.run(net.actions[aid])
    apply_postconditions(path, net, conn, rule, scenario, metrics)


def evaluate_connection(
    path: RealityPath,
    net: Network,
    conn: Connection,
    scenario: Scenario,
    metrics: TraversalMetrics | None = None,
    actions: ActionLog | None = None,
) -> tuple[str, list[str]]:
    """One ordered pass over the rules for a candidate connection.

    Returns ``("advanced", triggered)`` once a traversal rule fires, otherwise
    ``("stalled", triggered)``. Mutates ``path``'s overlay and ``conn``.
    """
    m = metrics if metrics is not None else TraversalMetrics()
    nontraversal = 0
    for rule in net.rule_order:
        m.rules_evaluated += 1
        if not evaluate_rule_preconditions(path, net, conn, rule, scenario, m):
            continue
        _trigger(path, net, conn, rule, scenario, m, actions)
        if rule.is_traversal:
            return ADVANCED, conn.triggered_rules
        nontraversal += 1
        if nontraversal > scenario.max_nontraversal_per_connection:
            return STALLED, conn.triggered_rules
    return STALLED, conn.triggered_rules


def _evaluate_branching(
    path: RealityPath,
    net: Network,
    conn: Connection,
    scenario: Scenario,
    m: TraversalMetrics,
    actions: ActionLog | None,
    start: int = 0,
    nontraversal: int = 0,
) -> list[tuple[RealityPath, Connection]]:
    """Like :func:`evaluate_connection`, but forks once per triggering traversal rule.

    Each fork continues the pass as though that traversal rule had not fired.
    """
    order = net.rule_order
    for i in range(start, len(order)):
        rule = order[i]
        m.rules_evaluated += 1
        if not evaluate_rule_preconditions(path, net, conn, rule, scenario, m):
            continue
        if rule.is_traversal:
            fork_path, fork_conn = path.clone(), conn.copy()
            _trigger(path, net, conn, rule, scenario, m, actions)
            rest = _evaluate_branching(fork_path, net, fork_conn, scenario, m, actions, i + 1, nontraversal)
            return [(path, conn), *rest]
        _trigger(path, net, conn, rule, scenario, m, actions)
        nontraversal += 1
        if nontraversal > scenario.max_nontraversal_per_connection:
            return []
    return []


def candidate_links(path: RealityPath, net: Network, scenario: Scenario) -> tuple[Link, ...]:
    links = net.outgoing.get(path.current_container, ())
    policy = scenario.revisit_policy
    if policy == "link-once":
        return tuple(l for l in links if l.id not in path.used_links)
    if policy == "container-once":
        seen = set(path.visited())
        return tuple(l for l in links if l.destination not in seen)
    return links


def _finish(path: RealityPath, net: Network, conn: Connection, scenario: Scenario, m: TraversalMetrics) -> None:
    conn.variant_snapshot = snapshot_for(path, net, conn)
    path.connections = (*path.connections, conn)
    path.used_links = path.used_links | {conn.link}
    path.current_container = conn.container2
    if conn.container2 == scenario.end_container:
        path.status = FINAL
        m.final_paths += 1


def expand_path(
    path: RealityPath,
    net: Network,
    scenario: Scenario,
    metrics: TraversalMetrics | None = None,
    actions: ActionLog | None = None,
    deadline: float | None = None,
) -> list[RealityPath]:
    """Evaluate every permitted outgoing link on its own clone of ``path``.

    Returns the successors that advanced; those that reached the scenario end
    have status ``final``. Stalled clones are dropped and counted.
    """
    m = metrics if metrics is not None else TraversalMetrics()
    if path.status != ACTIVE:
        return []
    m.paths_processed += 1
    candidates = candidate_links(path, net, scenario)
    if not candidates:
        m.paths_stalled += 1
        return []
    limited = scenario.max_connections is not None and len(path.connections) >= scenario.max_connections
    if limited or (deadline is not None and time.monotonic() > deadline):
        m.paths_stalled += len(candidates)
        return []
    successors: list[RealityPath] = []
    for link in candidates:
        clone = path.clone()
        conn = Connection(path.current_container, link.id, link.destination)
        if scenario.branch_on_traversal_rules:
            outcomes = _evaluate_branching(clone, net, conn, scenario, m, actions)
            if not outcomes:
                m.paths_stalled += 1
            for p, c in outcomes:
                _finish(p, net, c, scenario, m)
                successors.append(p)
            continue
        outcome, _ = evaluate_connection(clone, net, conn, scenario, m, actions)
        if outcome != ADVANCED:
            clone.status = STALLED
            m.paths_stalled += 1
            continue
        _finish(clone, net, conn, scenario, m)
        successors.append(clone)
    return successors


def root_path(net: Network, scenario: Scenario) -> RealityPath:
    path = RealityPath(scenario.start_container)
    for fid, value in sorted(scenario.initial_overrides.items()):
        alter_fact(path, net, fid, value)
    if scenario.start_container == scenario.end_container:
        path.status = FINAL
    return path


def run_traversal(
    net: Network,
    scenario: Scenario,
    sink: Callable[[RealityPath], Any],
    *,
    metrics: TraversalMetrics | None = None,
    actions: ActionLog | None = None,
    discipline: str = "lifo",
) -> TraversalMetrics:
    """Single-threaded exhaustive expansion from the scenario's start container.

    Every final path is handed to ``sink`` exactly once. ``discipline`` picks the
    worklist order (``lifo`` depth-first, ``fifo`` breadth-first); the set of
    final paths does not depend on it.
    """
    m = metrics if metrics is not None else TraversalMetrics()
    deadline = None if scenario.time_limit is None else time.monotonic() + float(scenario.time_limit)
    root = root_path(net, scenario)
    if root.status == FINAL:
        m.final_paths += 1
        sink(root)
        return m
    work: deque[RealityPath] = deque([root])
    pop = work.pop if discipline == "lifo" else work.popleft
    while work:
        for succ in expand_path(pop(), net, scenario, m, actions, deadline):
            if succ.status == FINAL:
                sink(succ)
            else:
                work.append(succ)
    return m


# -- canonical serialization --


def path_to_doc(path: RealityPath) -> dict[str, Any]:
    ov = path.overlay
    return {
        "connections": [
            {
                "container1": c.container1,
                "link": c.link,
                "container2": c.container2,
                "triggered_rules": list(c.triggered_rules),
                "variant_snapshot": {fid: v.to_json() for fid, v in c.variant_snapshot.items()},
            }
            for c in path.connections
        ],
        "overlay": {
            fid: {"cpid": f.cpid, "name": f.name, "value": f.value.to_json()} for fid, f in ov.by_fact_id.items()
        },
        # only post-create index entries travel; the rest are rebuilt on demand
        "by_entity_cpid": sorted([ent, cpid, fid] for fid, (ent, cpid) in ov.created.items()),
        "used_links": sorted(path.used_links),
        "current_container": path.current_container,
        "status": path.status,
    }


def dumps_canonical(doc: Any) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def canonical_bytes(path: RealityPath) -> bytes:
    return dumps_canonical(path_to_doc(path))


def _need(doc: Any, key: str, typ: type | tuple[type, ...]) -> Any:
    if not isinstance(doc, dict) or key not in doc or not isinstance(doc[key], typ):
        raise PathFormatError(f"path document: {key!r} missing or not {typ}")
    return doc[key]


def path_from_doc(doc: Any, net: Network | None = None) -> RealityPath:
    """Rebuild a path from its canonical document.

    With ``net`` given, every referenced id is checked against the local model.
    """
    try:
        conns = []
        for c in _need(doc, "connections", list):
            snap = {fid: FactValue.from_json(v) for fid, v in _need(c, "variant_snapshot", dict).items()}
            rules = _need(c, "triggered_rules", list)
            conns.append(
                Connection(_need(c, "container1", str), _need(c, "link", str), _need(c, "container2", str), list(rules), snap)
            )
        by_id: dict[str, Fact] = {}
        for fid, f in _need(doc, "overlay", dict).items():
            cpid = f.get("cpid") if isinstance(f, dict) else None
            by_id[fid] = Fact(fid, cpid, _need(f, "name", str), FactValue.from_json(_need(f, "value", dict)))
        created: dict[str, tuple[str, str]] = {}
        index: dict[tuple[str | None, str], str] = {}
        for entry in _need(doc, "by_entity_cpid", list):
            if not (isinstance(entry, list) and len(entry) == 3 and all(isinstance(x, str) for x in entry)):
                raise PathFormatError(f"bad by_entity_cpid entry {entry!r}")
            ent, cpid, fid = entry
            created[fid] = (ent, cpid)
            index[(ent, cpid)] = fid
        used = _need(doc, "used_links", list)
        status = _need(doc, "status", str)
        if status not in (ACTIVE, STALLED, FINAL):
            raise PathFormatError(f"unknown status {status!r}")
        path = RealityPath(
            _need(doc, "current_container", str),
            tuple(conns),
            VariantOverlay(by_id, index, created),
            frozenset(used),
            status,
        )
    except PathFormatError:
        raise
    except Exception as exc:  # malformed values, wrong shapes
        raise PathFormatError(f"malformed path document: {exc}") from None
    if net is not None:
        _check_against(path, net)
    return path


def _check_against(path: RealityPath, net: Network) -> None:
    def bad(what: str, ident: str) -> PathFormatError:
        return PathFormatError(f"model mismatch: unknown {what} {ident!r}")

    if path.current_container not in net.containers:
        raise bad("container", path.current_container)
    for c in path.connections:
        link = net.links.get(c.link)
        if link is None:
            raise bad("link", c.link)
        if (link.source, link.destination) != (c.container1, c.container2):
            raise PathFormatError(f"model mismatch: link {c.link!r} endpoints differ")
        for rid in c.triggered_rules:
            if rid not in net.rules:
                raise bad("rule", rid)
    for lid in path.used_links:
        if lid not in net.links:
            raise bad("link", lid)
    ov = path.overlay
    for fid, f in ov.by_fact_id.items():
        if fid in ov.created:
            ent, cpid = ov.created[fid]
            if net.entity(ent) is None:
                raise bad("entity", ent)
            if cpid not in net.common_properties:
                raise bad("common property", cpid)
        elif fid not in net.facts:
            raise bad("fact", fid)
        elif net.facts[fid].value.kind is not f.value.kind:
            raise PathFormatError(f"model mismatch: fact {fid!r} kind differs")
    for fid in ov.created:
        if fid not in ov.by_fact_id:
            raise PathFormatError(f"created fact {fid!r} missing from overlay")


def iter_final_paths(net: Network, scenario: Scenario) -> Iterable[RealityPath]:
    out: list[RealityPath] = []
    run_traversal(net, scenario, out.append)
    return out
