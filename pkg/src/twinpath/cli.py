"""Command-line entry points (``twinpath <subcommand>``).

Exit codes: 0 success, 1 usage or other error, 2 invalid model,
3 I/O failure, 4 unreachable peer or protocol failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import socket
import sys
from collections import Counter
from decimal import Decimal, InvalidOperation
from pathlib import Path
from types import MappingProxyType
from typing import Any, Sequence

from .cluster import ClusterError, RunReport, WorkerUnavailable, control_serve, parse_address, worker_serve
from .generate import GEN_KINDS, dumps_model, synthetic_model
from .jobpool import JOBS_ENV, default_job_count
from .model import ModelError, Network, Scenario, load_model, validate_model
from .oracle import MultisetDigest, OracleLimitExceeded, oracle_digest
from .pathstore import DEFAULT_BUFFER_SIZE, CorruptRecord, PathStore, PathStoreReader
from .traversal import ActionLog

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_PEER = 4

log = logging.getLogger("twinpath")

__all__ = ["RunReport", "main", "build_parser"]


class CliError(Exception):
    def __init__(self, message: str, code: int) -> None:
        super().__init__(message)
        self.code = code


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _seconds(text: str) -> Decimal:
    try:
        d = Decimal(text)
    except InvalidOperation:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if d <= 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return d


def load_and_check(model_file: str, scenario_name: str | None, time_limit: Decimal | None = None) -> tuple[Network, Scenario]:
    try:
        data = Path(model_file).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {model_file}: {exc}", EXIT_IO) from None
    try:
        net = load_model(data)
    except ModelError as exc:
        raise CliError(f"invalid model: {exc}", EXIT_INVALID) from None
    diags = validate_model(net)
    if diags:
        lines = "\n".join(f"  {d.id}: {d.message}" for d in diags)
        raise CliError(f"invalid model ({len(diags)} problems):\n{lines}", EXIT_INVALID)
    try:
        scenario = net.scenario(scenario_name)
    except KeyError:
        raise CliError(f"no scenario {scenario_name!r}; have {sorted(net.scenarios)}", EXIT_INVALID) from None
    if time_limit is not None:
        scenario = dataclasses.replace(scenario, time_limit=time_limit)
        scenarios = dict(net.scenarios)
        scenarios[scenario.name] = scenario
        net = dataclasses.replace(net, scenarios=MappingProxyType(scenarios))
    return net, scenario


def _write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _finish_report(report: RunReport, out: Path, actions: ActionLog | None) -> dict[str, Any]:
    doc = report.to_dict()
    doc["files"]["metrics"] = str(out / "metrics.json")
    doc["files"]["report"] = str(out / "report.json")
    if actions is not None and actions.records:
        doc["files"]["actions"] = str(out / "actions.json")
        _write_json(out / "actions.json", actions.records)
    _write_json(out / "metrics.json", {"total": report.metrics, "per_node": report.per_node_metrics})
    _write_json(out / "report.json", doc)
    return doc


def _serve_control(args: argparse.Namespace, workers: Sequence[str], listener: socket.socket | None) -> int:
    net, scenario = load_and_check(args.model, args.scenario, args.time_limit)
    out = Path(args.out)
    actions = ActionLog("live" if args.enable_actions else "dry_run")
    try:
        store = PathStore(out, buffer_size=args.buffer_size)
    except OSError as exc:
        raise CliError(f"cannot open store in {out}: {exc}", EXIT_IO) from None
    try:
        report = control_serve(
            net,
            scenario,
            store,
            listener=listener,
            workers=workers,
            job_count=args.jobs,
            actions=actions,
            max_transfer=args.max_transfer,
            accept_timeout=getattr(args, "accept_timeout", 30.0),
        )
    except WorkerUnavailable as exc:
        raise CliError(str(exc), EXIT_PEER) from None
    except ClusterError as exc:
        raise CliError(f"cluster run failed: {exc}", EXIT_PEER) from None
    except OSError as exc:
        raise CliError(f"I/O failure: {exc}", EXIT_IO) from None
    try:
        doc = _finish_report(report, out, actions)
    except OSError as exc:
        raise CliError(f"cannot write report: {exc}", EXIT_IO) from None
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    return _serve_control(args, (), None)


def cmd_control(args: argparse.Namespace) -> int:
    workers = [w for w in args.workers.split(",") if w] if args.workers else []
    if len(set(workers)) != len(workers):
        raise CliError(f"duplicate worker in --workers {args.workers}", EXIT_ERROR)
    host, port = parse_address(args.listen)
    listener = None
    if workers:
        try:
            listener = socket.create_server((host, port), reuse_port=False)
        except OSError as exc:
            raise CliError(f"cannot listen on {args.listen}: {exc}", EXIT_PEER) from None
        log.info("control listening on %s:%d for %s", host, listener.getsockname()[1], workers)
    try:
        return _serve_control(args, workers, listener)
    finally:
        if listener is not None:
            listener.close()


def cmd_worker(args: argparse.Namespace) -> int:
    try:
        result = worker_serve(
            parse_address(args.connect),
            args.name,
            job_count=args.jobs,
            connect_timeout=args.connect_timeout,
            action_mode="live" if args.enable_actions else "dry_run",
        )
    except (ClusterError, OSError) as exc:
        raise CliError(str(exc), EXIT_PEER) from None
    print(json.dumps({"worker": result.name, "reported": result.reported, "metrics": result.metrics.to_dict()}))
    return EXIT_OK


# -- paths --


def render_text(i: int, doc: dict) -> str:
    conns = doc["connections"]
    route = [conns[0]["container1"]] if conns else [doc["current_container"]]
    route += [c["container2"] for c in conns]
    n_rules = sum(len(c["triggered_rules"]) for c in conns)
    lines = [f"path {i}: {len(conns)} connections, {n_rules} triggered rules", "  route: " + " -> ".join(route)]
    for k, c in enumerate(conns):
        lines.append(f"  [{k}] {c['container1']} --{c['link']}--> {c['container2']}: {', '.join(c['triggered_rules'])}")
        for fid, v in sorted(c["variant_snapshot"].items()):
            (kind, val), = v.items()
            lines.append(f"        {fid} = {val} ({kind})")
    return "\n".join(lines)


def _dot_id(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def render_dot(i: int, doc: dict) -> str:
    lines = [f"digraph path_{i} {{", "  rankdir=LR;"]
    conns = doc["connections"]
    if not conns:
        lines.append(f"  {_dot_id(doc['current_container'])};")
    for k, c in enumerate(conns):
        label = "\n".join([f"{k}: {c['link']}", *c["triggered_rules"]])
        lines.append(f"  {_dot_id(c['container1'])} -> {_dot_id(c['container2'])} [label={_dot_id(label)}];")
    lines.append("}")
    return "\n".join(lines)


def _render(i: int, doc: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    if fmt == "dot":
        return render_dot(i, doc)
    return render_text(i, doc)


def _summary(reader: PathStoreReader) -> dict[str, Any]:
    by_len: Counter[int] = Counter()
    by_rules: Counter[int] = Counter()
    for i in range(len(reader)):
        doc = reader.doc(i)
        by_len[len(doc["connections"])] += 1
        by_rules[sum(len(c["triggered_rules"]) for c in doc["connections"])] += 1
    return {
        "count": len(reader),
        "connections_histogram": {str(k): by_len[k] for k in sorted(by_len)},
        "triggered_rules_histogram": {str(k): by_rules[k] for k in sorted(by_rules)},
    }


def _longest(reader: PathStoreReader) -> list[int]:
    best: list[int] = []
    best_key = (-1, -1)
    for i in range(len(reader)):
        doc = reader.doc(i)
        key = (len(doc["connections"]), sum(len(c["triggered_rules"]) for c in doc["connections"]))
        if key > best_key:
            best, best_key = [i], key
        elif key == best_key:
            best.append(i)
    return best


def cmd_paths(args: argparse.Namespace) -> int:
    try:
        reader = PathStoreReader(args.out_dir)
    except FileNotFoundError as exc:
        raise CliError(f"no path store: {exc}", EXIT_IO) from None
    except CorruptRecord as exc:
        raise CliError(f"corrupt store: {exc}", EXIT_IO) from None
    with reader:
        try:
            if args.summary:
                s = _summary(reader)
                if args.format == "json":
                    print(json.dumps(s, sort_keys=True))
                else:
                    print(f"{s['count']} paths")
                    for k, v in s["connections_histogram"].items():
                        print(f"  {k:>4} connections: {v}")
                return EXIT_OK
            if args.longest:
                indices = _longest(reader)
                if not args.all:
                    indices = indices[:1]
            else:
                indices = [args.index]
            for i in indices:
                print(_render(i, reader.doc(i), args.format))
        except IndexError as exc:
            raise CliError(str(exc), EXIT_ERROR) from None
        except CorruptRecord as exc:
            raise CliError(f"corrupt store: {exc}", EXIT_IO) from None
    return EXIT_OK


# -- gen / oracle / validate --


def cmd_gen(args: argparse.Namespace) -> int:
    closed = [c for c in (args.closed or "").split(",") if c]
    try:
        doc = synthetic_model(
            args.kind,
            size=args.size,
            rows=args.rows,
            cols=args.cols,
            depth=args.depth,
            seed=args.seed,
            closed=closed,
            branch=args.branch,
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_ERROR) from None
    data = dumps_model(doc)
    if args.output in (None, "-"):
        sys.stdout.write(data.decode("utf-8"))
    else:
        try:
            Path(args.output).write_bytes(data)
        except OSError as exc:
            raise CliError(f"cannot write {args.output}: {exc}", EXIT_IO) from None
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    net, scenario = load_and_check(args.model, args.scenario)
    try:
        d = oracle_digest(net, scenario, max_branches=args.max_branches)
    except OracleLimitExceeded as exc:
        raise CliError(f"oracle limit exceeded: {exc}", EXIT_ERROR) from None
    print(json.dumps({"scenario": scenario.name, "count": d.count, "digest": d.hexdigest()}))
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    net, _ = load_and_check(args.model, None)
    print(f"ok: {len(net.containers)} containers, {len(net.links)} links, {len(net.rules)} rules, "
          f"{len(net.scenarios)} scenarios")
    return EXIT_OK


def cmd_digest(args: argparse.Namespace) -> int:
    """Count and order-independent digest of a written store (same digest as ``oracle``)."""
    try:
        with PathStoreReader(args.out_dir) as reader:
            d = MultisetDigest().update(reader)
    except FileNotFoundError as exc:
        raise CliError(f"no path store: {exc}", EXIT_IO) from None
    except CorruptRecord as exc:
        raise CliError(f"corrupt store: {exc}", EXIT_IO) from None
    print(json.dumps({"count": d.count, "digest": d.hexdigest()}))
    return EXIT_OK


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("model", help="model JSON file")
    p.add_argument("--scenario", help="scenario name (default: the first one)")
    p.add_argument("--jobs", type=_positive, default=None,
                   help=f"worker threads (default ${JOBS_ENV} or CPUs-1 = {default_job_count()})")
    p.add_argument("--out", default="twinpath-out", help="output directory")
    p.add_argument("--enable-actions", action="store_true", help="spawn rule action commands instead of logging them")
    p.add_argument("--time-limit", type=_seconds, default=None, help="stop extending paths after this many seconds")
    p.add_argument("--buffer-size", type=_positive, default=DEFAULT_BUFFER_SIZE, help="path store buffer bytes")
    p.add_argument("--max-transfer", type=_positive, default=4 * 1024 * 1024, help="max bytes per path report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twinpath", description="Exhaustive reality-path traversal of network models.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="single-node traversal")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("control", help="run as the control node of a cluster")
    _add_run_flags(p)
    p.add_argument("--listen", default="127.0.0.1:7070", help="ip:port to accept workers on")
    p.add_argument("--workers", default="", help="comma-separated worker names expected to connect")
    p.add_argument("--accept-timeout", type=float, default=30.0, help="seconds to wait for all workers")
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("worker", help="serve one run for a control node")
    p.add_argument("--connect", required=True, help="control ip:port")
    p.add_argument("--name", default=None, help="worker name (default host:pid)")
    p.add_argument("--jobs", type=_positive, default=None)
    p.add_argument("--connect-timeout", type=float, default=10.0)
    p.add_argument("--enable-actions", action="store_true")
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("paths", help="inspect a written path store")
    p.add_argument("out_dir")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--index", type=int)
    g.add_argument("--longest", action="store_true")
    g.add_argument("--summary", action="store_true")
    p.add_argument("--all", action="store_true", help="with --longest, print every tied path")
    p.add_argument("--format", choices=("text", "json", "dot"), default="text")
    p.set_defaults(func=cmd_paths)

    p = sub.add_parser("digest", help="count and multiset digest of a written path store")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_digest)

    p = sub.add_parser("gen", help="generate a synthetic model")
    p.add_argument("kind", choices=GEN_KINDS)
    p.add_argument("--size", type=_positive, default=4)
    p.add_argument("--rows", type=_positive, default=3)
    p.add_argument("--cols", type=_positive, default=3)
    p.add_argument("--depth", type=_positive, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--closed", default="", help="comma-separated link ids whose Open fact starts false")
    p.add_argument("--branch", action="store_true", help="fork on every triggering traversal rule")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("oracle", help="brute-force reference enumeration")
    p.add_argument("model")
    p.add_argument("--scenario")
    p.add_argument("--max-branches", type=_positive, default=500_000)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("validate", help="check a model file")
    p.add_argument("model")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "name", "") is None:
        args.name = f"{socket.gethostname()}:{os.getpid()}"
    try:
        return args.func(args)
    except CliError as exc:
        print(f"twinpath: {exc}", file=sys.stderr)
        return exc.code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
