"""Naive reference enumerator.

Deliberately shares nothing with :mod:`twinpath.traversal`: the whole mutable
world (every fact of every entity) is deep-copied for each branch and facts are
rewritten in place. Output is the same canonical path document, so the two
implementations can be compared byte for byte.
"""

from __future__ import annotations

import copy
import hashlib
import json
from typing import Any, Iterable

from . import logic
from .model import Network, Scenario, created_fact_id
from .values import FactValue, ValueKind, default_value


class OracleLimitExceeded(RuntimeError):
    pass


class MultisetDigest:
    """Order-independent digest of a multiset of byte strings.

    Sum of per-item SHA-256 values modulo 2**256, so items may arrive in any
    order and from any number of producers.
    """

    def __init__(self) -> None:
        self.count = 0
        self._acc = 0

    def add(self, item: bytes) -> None:
        self.count += 1
        self._acc = (self._acc + int.from_bytes(hashlib.sha256(item).digest(), "big")) % (1 << 256)

    def update(self, items: Iterable[bytes]) -> MultisetDigest:
        for item in items:
            self.add(item)
        return self

    def hexdigest(self) -> str:
        return f"{self._acc:064x}"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, MultisetDigest) and (self.count, self._acc) == (other.count, other._acc)


def _world(net: Network, scenario: Scenario) -> dict[str, Any]:
    holdings: dict[Any, list[str]] = {None: list(net.network_facts)}
    for c in net.containers.values():
        holdings[c.id] = list(c.facts)
    for l in net.links.values():
        holdings[l.id] = list(l.facts)
    owner = {fid: ent for ent, fids in holdings.items() for fid in fids}
    facts = {fid: {"cpid": f.cpid, "name": f.name, "value": f.value} for fid, f in net.facts.items()}
    w = {
        "facts": facts,
        "holdings": holdings,
        "owner": owner,
        "touched": set(),
        "created": {},
        "route": [],
        "used": set(),
        "current": scenario.start_container,
    }
    for fid in sorted(scenario.initial_overrides):
        _write(w, fid, scenario.initial_overrides[fid])
    return w


def _write(w: dict, fid: str, value: FactValue) -> None:
    w["facts"][fid]["value"] = value
    w["touched"].add(fid)


def _find(w: dict, ent: Any, cpid: str) -> str | None:
    for fid in w["holdings"].get(ent, ()):
        if w["facts"][fid]["cpid"] == cpid:
            return fid
    return None


def _location(conn: dict, loc: str) -> Any:
    return {"container1": conn["container1"], "link": conn["link"], "container2": conn["container2"], "network": None}[loc]


def _inputs(w: dict, conn: dict, reqs) -> list[FactValue] | None:
    values = []
    for q in reqs:
        ent = _location(conn, q.location)
        if q.cpid is not None:
            fid = _find(w, ent, q.cpid)
        else:
            fid = q.fact if q.fact in w["facts"] and w["owner"].get(q.fact, "?") == ent else None
        if fid is None:
            return None
        values.append(w["facts"][fid]["value"])
    return values


def _satisfied(w: dict, conn: dict, rule, scenario: Scenario) -> bool:
    for pre in rule.preconditions:
        values = _inputs(w, conn, pre.requirements)
        if values is None:
            if pre.id in scenario.pre_ignore_missing:
                continue
            return False
        try:
            if logic.eval_expression(pre.expression, values) != FactValue(ValueKind.BOOLEAN, True):
                return False
        except logic.ExpressionError:
            return False
    return True


def _apply(w: dict, net: Network, conn: dict, rule, scenario: Scenario) -> None:
    for post in rule.postconditions:
        t = post.target
        if t.kind == "fact":
            targets = [t.fact] if t.fact in w["facts"] else []
        elif t.kind == "entity_cpid":
            ent = _location(conn, t.entity) if t.entity in ("container1", "link", "container2", "network") else t.entity
            fid = _find(w, ent, t.cpid)
            if fid is None and ent is not None and t.cpid in scenario.post_create_cpids:
                fid = created_fact_id(ent, t.cpid)
                cp = net.common_properties[t.cpid]
                w["facts"][fid] = {"cpid": t.cpid, "name": cp.name, "value": default_value(cp.value_kind)}
                w["holdings"][ent].append(fid)
                w["owner"][fid] = ent
                w["created"][fid] = (ent, t.cpid)
                w["touched"].add(fid)
            targets = [fid] if fid is not None else []
        else:
            targets = sorted(fid for fid, f in w["facts"].items() if f["cpid"] == t.cpid)
        if not targets:
            continue
        values = _inputs(w, conn, post.requirements)
        if values is None:
            continue
        try:
            result = logic.eval_expression(post.expression, values)
        except logic.ExpressionError:
            continue
        for fid in targets:
            fact = w["facts"][fid]
            if fid in scenario.post_ignore_facts or fact["cpid"] in scenario.post_ignore_cpids:
                continue
            kind = fact["value"].kind
            if result.kind is not kind:
                if kind is ValueKind.DECIMAL and result.kind is ValueKind.INTEGER:
                    _write(w, fid, FactValue.decimal(result.value))
                continue
            _write(w, fid, result)


def _step(w: dict, net: Network, conn: dict, scenario: Scenario, rules: list, start: int = 0, nontraversal: int = 0) -> list:
    """Run the rule pass on ``w`` from ``rules[start]``; return the advanced (world, connection) pairs."""
    for i in range(start, len(rules)):
        rule = rules[i]
        if not _satisfied(w, conn, rule, scenario):
            continue
        if rule.is_traversal and scenario.branch_on_traversal_rules:
            other = copy.deepcopy(w)
            other_conn = copy.deepcopy(conn)
            conn["rules"].append(rule.id)
            _apply(w, net, conn, rule, scenario)
            # the fork carries on as if this traversal rule had not fired
            rest = _step(other, net, other_conn, scenario, rules, i + 1, nontraversal)
            return [(w, conn), *rest]
        conn["rules"].append(rule.id)
        _apply(w, net, conn, rule, scenario)
        if rule.is_traversal:
            return [(w, conn)]
        nontraversal += 1
        if nontraversal > scenario.max_nontraversal_per_connection:
            return []
    return []


def _doc(w: dict) -> dict:
    w_values = {fid: f["value"] for fid, f in w["facts"].items()}
    return {
        "connections": [
            {
                "container1": c["container1"],
                "link": c["link"],
                "container2": c["container2"],
                "triggered_rules": list(c["rules"]),
                "variant_snapshot": c["snapshot"],
            }
            for c in w["route"]
        ],
        "overlay": {
            fid: {"cpid": w["facts"][fid]["cpid"], "name": w["facts"][fid]["name"], "value": w_values[fid].to_json()}
            for fid in w["touched"]
        },
        "by_entity_cpid": sorted([ent, cpid, fid] for fid, (ent, cpid) in w["created"].items()),
        "used_links": sorted(w["used"]),
        "current_container": w["current"],
        "status": "final",
    }


def enumerate_paths(net: Network, scenario: Scenario, *, max_branches: int = 500_000) -> list[bytes]:
    """Return canonical serializations of every final path (depth-first order)."""
    rules = sorted(net.rules.values(), key=lambda r: (-r.success, r.id))
    out: list[bytes] = []
    branches = 0

    def emit(w: dict) -> None:
        out.append(json.dumps(_doc(w), sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8"))

    def visit(w: dict) -> None:
        nonlocal branches
        if w["current"] == scenario.end_container:
            emit(w)
            return
        if scenario.max_connections is not None and len(w["route"]) >= scenario.max_connections:
            return
        links = sorted(
            (l for l in net.links.values() if l.source == w["current"]), key=lambda l: (-l.traversability, l.id)
        )
        if scenario.revisit_policy == "link-once":
            links = [l for l in links if l.id not in w["used"]]
        elif scenario.revisit_policy == "container-once":
            seen = {scenario.start_container, *(c["container2"] for c in w["route"])}
            links = [l for l in links if l.destination not in seen]
        for link in links:
            branches += 1
            if branches > max_branches:
                raise OracleLimitExceeded(f"more than {max_branches} branches")
            world = copy.deepcopy(w)
            conn = {"container1": w["current"], "link": link.id, "container2": link.destination, "rules": []}
            for nxt, c in _step(world, net, conn, scenario, rules):
                ents = (c["container1"], c["link"], c["container2"])
                c["snapshot"] = {
                    fid: nxt["facts"][fid]["value"].to_json() for fid in nxt["touched"] if nxt["owner"][fid] in ents
                }
                nxt["route"].append(c)
                nxt["used"].add(link.id)
                nxt["current"] = link.destination
                visit(nxt)

    root = _world(net, scenario)
    visit(root)
    return out


def oracle_digest(net: Network, scenario: Scenario, **kw: Any) -> MultisetDigest:
    return MultisetDigest().update(enumerate_paths(net, scenario, **kw))
