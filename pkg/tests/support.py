"""Shared helpers for the test suite."""

from __future__ import annotations

import copy
import json
import socket
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from twinpath.cluster import InFlightProbe, RunReport, control_serve, worker_serve
from twinpath.generate import dumps_model
from twinpath.jobpool import Jitter
from twinpath.model import Network, Scenario, load_model
from twinpath.oracle import MultisetDigest
from twinpath.pathstore import PathStore, PathStoreReader
from twinpath.traversal import canonical_bytes, run_traversal


def net_from(doc: dict) -> Network:
    return load_model(dumps_model(doc))


def engine_digest(net: Network, scenario: Scenario | None = None) -> MultisetDigest:
    d = MultisetDigest()
    run_traversal(net, scenario or net.scenario(), lambda p: d.add(canonical_bytes(p)))
    return d


def store_digest(directory: str | Path) -> MultisetDigest:
    with PathStoreReader(directory) as r:
        return MultisetDigest().update(r)


def const(kind: str, v: Any) -> dict:
    return {"const": {kind: v}}


def cmp(op: str, left: dict, right: dict) -> dict:
    return {"compare": {"op": op, "left": left, "right": right}}


def arith(op: str, left: dict, right: dict) -> dict:
    return {"arith": {"op": op, "left": left, "right": right}}


INPUT0 = {"input": 0}


def move_rule(rid: str = "R-move", success: str = "0.5") -> dict:
    return {
        "id": rid,
        "name": "move",
        "is_traversal": True,
        "success": success,
        "preconditions": [
            {
                "id": f"P-{rid}",
                "requirements": [{"location": "link", "cpid": "Open"}],
                "expression": cmp("==", INPUT0, const("boolean", True)),
            }
        ],
        "postconditions": [],
        "actions": [],
    }


def mini_doc() -> dict:
    """A -> B -> C chain plus B -> A, every kind of CPID, one network fact."""

    def link(lid: str, src: str, dst: str, t: str = "0.5") -> dict:
        return {
            "id": lid,
            "name": lid,
            "source": src,
            "destination": dst,
            "traversability": t,
            "facts": [{"id": f"{lid}-open", "cpid": "Open", "name": "open", "value": {"boolean": True}}],
        }

    return {
        "format": 1,
        "common_properties": [
            {"id": "Open", "name": "open", "kind": "boolean"},
            {"id": "Label", "name": "label", "kind": "string"},
            {"id": "Count", "name": "count", "kind": "integer"},
            {"id": "Level", "name": "level", "kind": "decimal"},
            {"id": "Flag", "name": "flag", "kind": "boolean"},
        ],
        "container_types": [],
        "containers": [
            {"id": "A", "name": "A", "facts": [{"id": "A-label", "cpid": "Label", "name": "label", "value": {"string": "alpha"}}]},
            {
                "id": "B",
                "name": "B",
                "facts": [
                    {"id": "B-count", "cpid": "Count", "name": "count", "value": {"integer": 3}},
                    {"id": "B-level", "cpid": "Level", "name": "level", "value": {"decimal": "1.5"}},
                    {"id": "B-flag", "cpid": "Flag", "name": "flag", "value": {"boolean": False}},
                ],
            },
            {"id": "C", "name": "C", "facts": [{"id": "C-flag", "cpid": "Flag", "name": "flag", "value": {"boolean": False}}]},
        ],
        "links": [link("L-ab", "A", "B", "0.9"), link("L-bc", "B", "C", "0.8"), link("L-ba", "B", "A", "0.1")],
        "facts": [{"id": "N-mode", "cpid": None, "name": "mode", "value": {"string": "lab"}}],
        "rules": [move_rule()],
        "actions": [],
        "scenarios": [{"name": "A-C", "start": "A", "end": "C", "max_nontraversal_per_connection": 1}],
    }


def with_changes(doc: dict, **changes: Any) -> dict:
    out = copy.deepcopy(doc)
    out.update(changes)
    return out


@dataclass
class ClusterRun:
    report: RunReport
    digest: MultisetDigest
    probe: InFlightProbe
    workers: dict[str, Any]
    directory: Path


def run_cluster(
    net: Network,
    *,
    workers: int = 3,
    jobs: int = 1,
    seed: int | None = None,
    max_delay: float = 0.05,
    probability: float = 0.2,
    job_probability: float = 0.0,
    directory: Path | None = None,
    buffer_size: int = 1 << 20,
    max_transfer: int = 4 * 1024 * 1024,
) -> ClusterRun:
    """1 control + ``workers`` loopback workers inside this process."""
    scenario = net.scenario()
    listener = socket.create_server(("127.0.0.1", 0))
    addr = listener.getsockname()
    probe = InFlightProbe()
    names = [f"w{i}" for i in range(1, workers + 1)]
    results: dict[str, Any] = {}

    def jitter(k: int, p: float):
        return Jitter(seed * 1000 + k, max_delay, p) if seed is not None and p > 0 else None

    def serve(i: int, name: str) -> None:
        try:
            results[name] = worker_serve(
                addr, name, job_count=jobs, probe=probe, jitter=jitter(i, probability), job_jitter=jitter(100 + i, job_probability)
            )
        except BaseException as exc:  # surfaced by the caller
            results[name] = exc

    threads = [threading.Thread(target=serve, args=(i, n), daemon=True) for i, n in enumerate(names, start=1)]
    for t in threads:
        t.start()
    out = directory or Path(tempfile.mkdtemp(prefix="twinpath-cluster-"))
    store = PathStore(out, buffer_size=buffer_size)
    try:
        report = control_serve(
            net,
            scenario,
            store,
            listener=listener,
            workers=names,
            job_count=jobs,
            probe=probe,
            jitter=jitter(0, probability),
            job_jitter=jitter(100, job_probability),
            max_transfer=max_transfer,
            accept_timeout=30.0,
        )
    finally:
        listener.close()
    for t in threads:
        t.join(timeout=60)
    return ClusterRun(report, store_digest(out), probe, results, out)


def dump(doc: dict, path: Path) -> Path:
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path
