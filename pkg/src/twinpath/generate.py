"""Seeded model generators.

``synthetic_model`` builds large two-rule networks in the style of the
performance models (an ``Open`` fact per link; one rule crosses an open link,
one crosses it and closes it). ``random_model`` builds small, rule-heavy
networks with mixed value kinds for differential testing against the oracle.
"""

from __future__ import annotations

import json
import random
from typing import Any, Iterable

GEN_KINDS = ("umbrella", "grid", "hub")


def _cmp(op: str, left: dict, right: dict) -> dict:
    return {"compare": {"op": op, "left": left, "right": right}}


def _arith(op: str, left: dict, right: dict) -> dict:
    return {"arith": {"op": op, "left": left, "right": right}}


def _const(kind: str, v: Any) -> dict:
    return {"const": {kind: v}}


_INPUT0 = {"input": 0}


def _two_rules() -> list[dict]:
    open_pre = {
        "id": "P-open",
        "requirements": [{"location": "link", "cpid": "Open"}],
        "expression": _cmp("==", _INPUT0, _const("boolean", True)),
    }
    return [
        {
            "id": "R-cross",
            "name": "cross an open link",
            "is_traversal": True,
            "success": "0.6",
            "preconditions": [open_pre],
            "postconditions": [],
            "actions": [],
        },
        {
            "id": "R-cross-close",
            "name": "cross an open link and close it",
            "is_traversal": True,
            "success": "0.4",
            "preconditions": [dict(open_pre, id="P-open-2")],
            "postconditions": [
                {
                    "id": "Q-close",
                    "requirements": [],
                    "expression": _const("boolean", False),
                    "target": {"entity_cpid": {"entity": "link", "cpid": "Open"}},
                }
            ],
            "actions": [],
        },
    ]


class _Builder:
    def __init__(self, rng: random.Random) -> None:
        self.rng = rng
        self.containers: list[dict] = []
        self.links: list[dict] = []

    def container(self, cid: str) -> str:
        self.containers.append({"id": cid, "name": cid, "facts": []})
        return cid

    def link(self, src: str, dst: str) -> None:
        lid = f"L{len(self.links) + 1}"
        t = f"0.{self.rng.randint(10, 99)}"
        self.links.append(
            {
                "id": lid,
                "name": f"{src}->{dst}",
                "source": src,
                "destination": dst,
                "traversability": t,
                "facts": [{"id": f"F-{lid}", "cpid": "Open", "name": "open", "value": {"boolean": True}}],
            }
        )

    def both(self, a: str, b: str) -> None:
        self.link(a, b)
        self.link(b, a)


def synthetic_model(
    kind: str,
    *,
    size: int = 4,
    rows: int = 3,
    cols: int = 3,
    depth: int = 3,
    seed: int = 0,
    closed: Iterable[str] = (),
    branch: bool = False,
) -> dict[str, Any]:
    """Build a generated model document.

    ``hub``: In -> Hub <-> ``size`` satellites, Hub -> Out, link-once.
    ``grid``: ``rows`` x ``cols`` lattice with links both ways, container-once.
    ``umbrella``: ``size`` ribs of ``depth`` containers fanning from a top
    container to a bottom one, neighbouring ribs cross-linked, container-once.
    ``closed`` lists link ids whose ``Open`` fact starts false.
    """
    if kind not in GEN_KINDS:
        raise ValueError(f"unknown generator kind {kind!r}")
    if min(size, rows, cols, depth) < 1:
        raise ValueError("sizes must be >= 1")
    rng = random.Random(seed)
    b = _Builder(rng)
    if kind == "hub":
        start, hub, end = b.container("In"), b.container("Hub"), b.container("Out")
        b.link(start, hub)
        for i in range(1, size + 1):
            b.both(hub, b.container(f"S{i}"))
        b.link(hub, end)
        policy = "link-once"
    elif kind == "grid":
        cells = [[b.container(f"C{r}-{c}") for c in range(cols)] for r in range(rows)]
        for r in range(rows):
            for c in range(cols):
                if c + 1 < cols:
                    b.both(cells[r][c], cells[r][c + 1])
                if r + 1 < rows:
                    b.both(cells[r][c], cells[r + 1][c])
        start, end = cells[0][0], cells[-1][-1]
        policy = "container-once"
    else:
        start, end = b.container("Top"), b.container("Bottom")
        ribs = [[b.container(f"U{i}-{d}") for d in range(depth)] for i in range(size)]
        for rib in ribs:
            b.link(start, rib[0])
            for d in range(depth - 1):
                b.link(rib[d], rib[d + 1])
            b.link(rib[-1], end)
        for i in range(size - 1):
            for d in range(depth):
                b.both(ribs[i][d], ribs[i + 1][d])
        policy = "container-once"
    link_ids = {l["id"] for l in b.links}
    closed = sorted(set(closed))
    unknown = [c for c in closed if c not in link_ids]
    if unknown:
        raise ValueError(f"unknown link ids to close: {unknown}")
    return {
        "format": 1,
        "common_properties": [{"id": "Open", "name": "link open", "kind": "boolean"}],
        "container_types": [],
        "containers": b.containers,
        "links": b.links,
        "facts": [],
        "rules": _two_rules(),
        "actions": [],
        "scenarios": [
            {
                "name": f"{kind}-{start}-{end}",
                "start": start,
                "end": end,
                "max_nontraversal_per_connection": 0,
                "initial_overrides": {f"F-{lid}": {"boolean": False} for lid in closed},
                "revisit_policy": policy,
                "branch_on_traversal_rules": branch,
            }
        ],
    }


def dumps_model(doc: dict[str, Any]) -> bytes:
    return (json.dumps(doc, indent=1, sort_keys=False) + "\n").encode("utf-8")


# -- random differential-testing networks --

_KINDS = ("boolean", "integer", "decimal", "string")
_STRINGS = ("alpha", "beta", "gamma")


def _rand_value(rng: random.Random, kind: str) -> dict:
    if kind == "boolean":
        return {"boolean": rng.random() < 0.5}
    if kind == "integer":
        return {"integer": rng.randint(-3, 5)}
    if kind == "decimal":
        return {"decimal": rng.choice(["0", "0.5", "1.25", "2", "-1.5", "3.75"])}
    return {"string": rng.choice(_STRINGS)}


def _numeric_term(rng: random.Random, kind: str, slot: dict) -> dict:
    if rng.random() < 0.5:
        return slot
    other = _rand_value(rng, kind)
    op = rng.choice(["+", "-", "*"] + (["/"] if kind == "decimal" else []))
    return _arith(op, slot, {"const": other})


def random_model(seed: int, *, max_containers: int = 8, max_links: int = 16, max_rules: int = 6) -> dict[str, Any]:
    """A small random network that always passes validation."""
    rng = random.Random(seed)
    n = rng.randint(2, max_containers)
    cids = [f"C{i}" for i in range(n)]
    cps = [{"id": f"P{i}", "name": f"prop {i}", "kind": k} for i, k in enumerate(_KINDS)]
    cps.append({"id": "Mark", "name": "mark", "kind": "boolean"})
    cps.append({"id": "Score", "name": "score", "kind": "integer"})
    kind_of = {c["id"]: c["kind"] for c in cps}
    fact_ids: list[tuple[str, str]] = []

    def facts_for(owner: str) -> list[dict]:
        out = []
        for cp in cps:
            if cp["id"] in ("Mark",) or rng.random() < 0.35:
                continue
            fid = f"F-{owner}-{cp['id']}"
            fact_ids.append((fid, cp["id"]))
            out.append({"id": fid, "cpid": cp["id"], "name": cp["name"], "value": _rand_value(rng, cp["kind"])})
        return out

    containers = [{"id": c, "name": c, "facts": facts_for(c)} for c in cids]
    pairs = [(a, b) for a in cids for b in cids if a != b]
    rng.shuffle(pairs)
    m = rng.randint(1, min(max_links, len(pairs)))
    links = [
        {
            "id": f"L{i}",
            "name": f"{a}->{b}",
            "source": a,
            "destination": b,
            "traversability": rng.choice(["1", "0.9", "0.5", "0.5"]),
            "facts": facts_for(f"L{i}"),
        }
        for i, (a, b) in enumerate(pairs[:m])
    ]
    network_facts = facts_for("net")

    locations = ("container1", "link", "container2", "network")

    def requirement() -> tuple[dict, str]:
        if fact_ids and rng.random() < 0.15:
            fid, cp = rng.choice(fact_ids)
            owner = fid.split("-")[1]
            loc = "network" if owner == "net" else ("link" if owner.startswith("L") else rng.choice(["container1", "container2"]))
            return {"location": loc, "fact": fid}, kind_of[cp]
        cp = rng.choice([c for c in cps if c["id"] != "Mark"] + [cps[-2]])
        return {"location": rng.choice(locations), "cpid": cp["id"]}, cp["kind"]

    def condition_expr(kind: str) -> dict:
        if kind in ("boolean", "string"):
            return _cmp(rng.choice(["==", "!="]), _INPUT0, {"const": _rand_value(rng, kind)})
        other = rng.choice(["integer", "decimal"])
        return _cmp(
            rng.choice(["==", "!=", "<", ">", "<=", ">="]),
            _numeric_term(rng, kind, _INPUT0),
            {"const": _rand_value(rng, other)},
        )

    rules = []
    pre_ids: list[str] = []
    k = rng.randint(1, max_rules)
    for r in range(k):
        trav = r == 0 or rng.random() < 0.5
        pres = []
        for p in range(rng.choice([0, 1, 1, 2]) if trav else rng.choice([0, 0, 1])):
            req, kind = requirement()
            pid = f"P-{r}-{p}"
            pre_ids.append(pid)
            pres.append({"id": pid, "requirements": [req], "expression": condition_expr(kind)})
        posts = []
        for q in range(rng.randint(0, 2)):
            choice = rng.random()
            if choice < 0.5:
                cp = cps[-2] if rng.random() < 0.4 else rng.choice(cps)
                target = {"entity_cpid": {"entity": rng.choice(locations[:3]), "cpid": cp["id"]}}
            elif choice < 0.75 and fact_ids:
                fid, cpid = rng.choice(fact_ids)
                cp = next(c for c in cps if c["id"] == cpid)
                target = {"fact": fid}
            else:
                cp = rng.choice(cps)
                target = {"all_with_cpid": cp["id"]}
            kind = cp["kind"]
            reqs: list[dict] = []
            if kind in ("integer", "decimal") and rng.random() < 0.6:
                req, rkind = requirement()
                if rkind == kind or (kind == "decimal" and rkind == "integer"):
                    reqs = [req]
                    expr = _numeric_term(rng, kind, _INPUT0) if kind == "decimal" else _arith(
                        rng.choice(["+", "-", "*"]), _INPUT0, _const("integer", rng.randint(-2, 3))
                    )
                else:
                    expr = {"const": _rand_value(rng, kind)}
            else:
                expr = {"const": _rand_value(rng, kind)}
            posts.append({"id": f"Q-{r}-{q}", "requirements": reqs, "expression": expr, "target": target})
        rules.append(
            {
                "id": f"R{r}",
                "name": f"rule {r}",
                "is_traversal": trav,
                "success": rng.choice(["0.9", "0.5", "0.5", "0.1"]),
                "preconditions": pres,
                "postconditions": posts,
                "actions": [],
            }
        )

    policy = rng.choice(["link-once", "link-once", "link-once", "container-once", "unlimited"])
    max_conn = rng.randint(2, 5) if policy == "unlimited" else (rng.choice([None, None, 4, 6]))
    all_fact_ids = [f for f, _ in fact_ids]
    scenario = {
        "name": "random",
        "start": cids[0],
        "end": rng.choice(cids),
        "max_nontraversal_per_connection": rng.choice([0, 1, 1, 2]),
        "pre_ignore_missing": rng.sample(pre_ids, k=min(len(pre_ids), rng.randint(0, 2))),
        "post_ignore_facts": rng.sample(all_fact_ids, k=min(len(all_fact_ids), rng.randint(0, 1))),
        "post_ignore_cpids": rng.sample(["P0", "P1", "Score"], k=rng.randint(0, 1)),
        "post_create_cpids": (["Mark"] if rng.random() < 0.7 else []) + rng.sample(["Score", "P2", "P3"], k=rng.randint(0, 2)),
        "initial_overrides": {
            f: _rand_value(rng, kind_of[cp]) for f, cp in rng.sample(fact_ids, k=min(len(fact_ids), rng.randint(0, 2)))
        },
        "revisit_policy": policy,
        "max_connections": max_conn,
        "branch_on_traversal_rules": rng.random() < 0.2,
    }
    return {
        "format": 1,
        "common_properties": cps,
        "container_types": [],
        "containers": containers,
        "links": links,
        "facts": network_facts,
        "rules": rules,
        "actions": [],
        "scenarios": [scenario],
    }
