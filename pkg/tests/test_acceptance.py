"""One test per acceptance criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in an
"acceptance" section at the end of the session.
"""

import json
import math
import os
import random
import socket
import subprocess
import sys
import time
from itertools import product

import pytest

from twinpath import load_fixture
from twinpath.generate import random_model, synthetic_model
from twinpath.logic import ARITH_OPS, COMPARE_OPS, Arith, Compare, Const, ExpressionTypeError, eval_expression, typecheck_expression
from twinpath.oracle import MultisetDigest, enumerate_paths
from twinpath.pathstore import DATA_NAME, PathStore, PathStoreReader, counting_opener
from twinpath.traversal import canonical_bytes, run_traversal
from twinpath.values import FactValue, ValueKind

from .support import engine_digest, net_from, run_cluster

CVE_1 = "CVE-2024-28394"


def finals(net):
    out = []
    start = time.perf_counter()
    run_traversal(net, net.scenario(), out.append)
    return out, time.perf_counter() - start


def cve_owners(paths):
    owners: dict[str, set[str]] = {}
    for p in paths:
        for fid, (entity, cpid) in p.overlay.created.items():
            if cpid.startswith("CVE-") and p.overlay.by_fact_id[fid].value == FactValue.boolean(True):
                owners.setdefault(cpid, set()).add(entity)
    return owners


def rule_count(p):
    return sum(len(c.triggered_rules) for c in p.connections)


def test_criterion_1_model1(criterion):
    net = load_fixture("model1")
    paths, elapsed = finals(net)
    longest = [p for p in paths if len(p.connections) == 10]
    owners = cve_owners(paths)
    ok = (
        len(paths) == 65
        and len(longest) == 24
        and all(rule_count(p) == 12 for p in longest)
        and owners == {CVE_1: {"PC-1", "PC-2"}}
        and elapsed <= 10
    )
    detail = f"{len(paths)} paths, {len(longest)} of length 10, CVE owners {sorted(owners.get(CVE_1, ()))}, {elapsed:.2f}s"
    assert criterion(1, ok, detail)


def test_criterion_2_model2(criterion):
    net = load_fixture("model2")
    paths, elapsed = finals(net)
    most = max(len(p.connections) for p in paths)
    longest = [p for p in paths if len(p.connections) == most]
    owners = cve_owners(paths)
    carried_by_pc03 = [c for c, ents in owners.items() if "PC-03" in ents]
    ok = (
        len(paths) == 65
        and most == 10
        and all(rule_count(p) == 14 for p in longest)
        and owners.get("CVE-2024-43491") == {"PC-01", "PC-02"}
        and "Admin Terminal 1" in owners.get("CVE-2024-6409", ())
        and "Admin Terminal 1" in owners.get("CVE-2024-218007", ())
        and not carried_by_pc03
        and elapsed <= 10
    )
    summary = {k: sorted(v) for k, v in sorted(owners.items())}
    assert criterion(2, ok, f"{len(paths)} paths, longest {most} connections, owners {summary}, {elapsed:.2f}s")


def test_criterion_3_oracle_equivalence(criterion):
    start = time.perf_counter()
    mismatches = []
    total = 0
    for seed in range(120):
        net = net_from(random_model(seed))
        want = enumerate_paths(net, net.scenario())
        got = engine_digest(net)
        total += len(want)
        if got.count != len(want) or got != MultisetDigest().update(want):
            mismatches.append(seed)
    elapsed = time.perf_counter() - start
    ok = not mismatches and elapsed <= 300
    assert criterion(3, ok, f"120 networks, {total} paths, mismatched seeds {mismatches}, {elapsed:.1f}s")


def test_criterion_4_distributed_conservation(criterion, tmp_path):
    failures = []
    runs = 0
    for name, net in (("model1", load_fixture("model1")), ("hub7", net_from(synthetic_model("hub", size=7)))):
        single = engine_digest(net)
        for rep in range(5):
            run = run_cluster(net, workers=3, jobs=2, seed=rep, max_delay=0.005, probability=0.05,
                              job_probability=0.01, directory=tmp_path / f"{name}-{rep}")
            runs += 1
            r = run.report
            if not (r.total_paths == single.count and sum(r.per_node.values()) == r.total_paths and run.digest == single):
                failures.append(f"{name}#{rep}: {r.total_paths}/{single.count}")
    ok = not failures and single.count == 13_700
    assert criterion(4, ok, f"{runs} runs, 1 control + 3 workers, failures {failures}")


def test_criterion_5_termination_safety(criterion, tmp_path):
    net = load_fixture("model1")
    single = engine_digest(net)
    bad = []
    for seed in range(50):
        run = run_cluster(net, workers=3, jobs=1, seed=seed, max_delay=0.05, probability=0.3,
                          job_probability=0.1, directory=tmp_path / str(seed))
        if run.digest != single or run.probe.violations or run.report.total_paths != 65:
            bad.append((seed, run.report.total_paths, run.probe.violations))
    assert criterion(5, not bad, f"{50 - len(bad)}/50 runs conserved with no in-flight termination")


def test_criterion_6_path_store(criterion, tmp_path):
    net = net_from(synthetic_model("hub", size=7))
    paths, _ = finals(net)
    records = [canonical_bytes(p) for p in paths]
    random.Random(6).shuffle(records)
    buffer_size = 64 * 1024
    ops = {}
    with PathStore(tmp_path, buffer_size=buffer_size, opener=counting_opener(ops)) as store:
        for i in range(0, len(records), 97):
            store.append_paths(records[i : i + 97])
    summary = store.close()
    with PathStoreReader(tmp_path) as r:
        back = list(r)
        increasing = all(a < b for a, b in zip(r.offsets, r.offsets[1:]))
    bound = math.ceil(summary.bytes / buffer_size) + 2
    writes = ops[DATA_NAME].write_ops
    ok = len(records) >= 10_000 and back == records and increasing and writes <= bound
    assert criterion(6, ok, f"{len(records)} records, byte-exact {back == records}, {writes} writes <= {bound}")


def test_criterion_7_typed_logic(criterion):
    samples = {
        ValueKind.BOOLEAN: [FactValue.boolean(False), FactValue.boolean(True)],
        ValueKind.INTEGER: [FactValue.integer(-2), FactValue.integer(3)],
        ValueKind.DECIMAL: [FactValue.decimal("-2.5"), FactValue.decimal("3.25")],
        ValueKind.STRING: [FactValue.string("abc"), FactValue.string("abd")],
    }
    numeric = {ValueKind.INTEGER, ValueKind.DECIMAL}
    pyop = {"==": lambda a, b: a == b, "!=": lambda a, b: a != b, "<": lambda a, b: a < b,
            "<=": lambda a, b: a <= b, ">": lambda a, b: a > b, ">=": lambda a, b: a >= b}
    wrong = []
    checked = 0
    for op, lk, rk in product(COMPARE_OPS, samples, samples):
        legal = (lk in numeric and rk in numeric) or (lk == rk and op in ("==", "!="))
        for a, b in product(samples[lk], samples[rk]):
            checked += 1
            e = Compare(op, Const(a), Const(b))
            try:
                typecheck_expression(e, [])
                got = eval_expression(e, [])
            except ExpressionTypeError:
                if legal:
                    wrong.append((op, a, b))
                continue
            if not legal or got != FactValue.boolean(pyop[op](a.value, b.value)):
                wrong.append((op, a, b))
    for op, lk, rk in product(ARITH_OPS, samples, samples):
        checked += 1
        try:
            typecheck_expression(Arith(op, Const(samples[lk][1]), Const(samples[rk][1])), [])
            legal_here = True
        except ExpressionTypeError:
            legal_here = False
        if legal_here != (lk in numeric and rk in numeric):
            wrong.append((op, lk, rk))
    d = FactValue.decimal
    boundaries = [
        eval_expression(Compare("<=", Const(d("11.2")), Const(d("11.2"))), []) == FactValue.boolean(True),
        eval_expression(Compare("<", Const(d("10240.20525")), Const(d("10240.20526"))), []) == FactValue.boolean(True),
    ]
    ok = not wrong and all(boundaries)
    assert criterion(7, ok, f"{checked} combinations, {len(wrong)} wrong, boundary cases {boundaries}")


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.mark.slow
def test_criterion_8_scaling_informational(criterion, tmp_path):
    """Cluster of four one-job processes against a one-job single node.

    On a machine with fewer cores than processes this cannot beat the single
    node; the line is printed either way and the test fails if the ratio misses.
    """
    model = tmp_path / "umbrella.json"
    cli = [sys.executable, "-m", "twinpath"]
    subprocess.run([*cli, "gen", "umbrella", "--size", "4", "--depth", "8", "-o", str(model)], check=True)

    start = time.perf_counter()
    single = subprocess.run([*cli, "run", str(model), "--jobs", "1", "--out", str(tmp_path / "single")],
                            check=True, capture_output=True)
    single_time = time.perf_counter() - start
    single_total = json.loads(single.stdout)["total_paths"]

    port = _free_port()
    start = time.perf_counter()
    control = subprocess.Popen(
        [*cli, "control", str(model), "--jobs", "1", "--listen", f"127.0.0.1:{port}",
         "--workers", "w1,w2,w3", "--out", str(tmp_path / "cluster")],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE,
    )
    workers = [
        subprocess.Popen([*cli, "worker", "--connect", f"127.0.0.1:{port}", "--name", f"w{i}", "--jobs", "1",
                          "--connect-timeout", "60"], stdout=subprocess.PIPE, stderr=subprocess.PIPE)
        for i in (1, 2, 3)
    ]
    out, err = control.communicate(timeout=1200)
    cluster_time = time.perf_counter() - start
    for w in workers:
        w.communicate(timeout=120)
    assert control.returncode == 0, err.decode()
    cluster_total = json.loads(out)["total_paths"]

    ratio = cluster_time / single_time
    cpus = len(os.sched_getaffinity(0))
    ok = single_total == cluster_total >= 200_000 and ratio <= 0.7
    detail = (f"{cluster_total} paths, single {single_time:.1f}s, cluster {cluster_time:.1f}s, "
              f"ratio {ratio:.2f} (target <= 0.70), {cpus} CPU(s) available")
    assert criterion(8, ok, detail)
