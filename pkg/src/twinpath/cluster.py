"""Control and worker nodes.

Star topology: workers connect to the control node and talk only to it. The
control seeds the root path into its own pool; workers start empty and ask for
work as soon as they are idle. Every node runs the same manager tasks
(request work, answer work requests, load balance) plus one of report
(worker) or write (control).

Termination is decided on the control node. It requires, in one consistent
snapshot: every local job idle, every worker flagged empty, no worker request
waiting for a WORK reply and no control request waiting on a worker. A worker
is flagged empty only when it asked for work while idle and the control
answered with an empty array; any later non-empty WORK or received path batch
clears the flag.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from .jobpool import CancellationToken, JobPool
from .metrics import TraversalMetrics, sum_metrics
from .model import Network, Scenario, load_model, model_hash, serialize_model
from .pathstore import PathStore
from .traversal import FINAL, ActionLog, RealityPath, dumps_canonical, path_to_doc, root_path
from .wire import (
    PROTOCOL_VERSION,
    Channel,
    MessageType,
    WireError,
    deserialize_paths,
    serialize_paths,
)

log = logging.getLogger(__name__)

DEFAULT_MAX_TRANSFER = 4 * 1024 * 1024
CONTROL_NAME = "control"
_POLL = 0.002


class ClusterError(Exception):
    pass


class WorkerUnavailable(ClusterError):
    """A configured worker never connected, or the control could not be reached."""


class ProtocolError(ClusterError):
    pass


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)


def _no_delay() -> None:
    return None


class InFlightProbe:
    """Test instrumentation shared by in-process nodes.

    Counts paths inside WORK frames between send and enqueue, and checks every
    registered pool at the moment the control decides to terminate.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.in_flight = 0
        self.pools: list[tuple[str, JobPool]] = []
        self.checks = 0
        self.violations: list[str] = []

    def register(self, name: str, pool: JobPool) -> None:
        with self._lock:
            self.pools.append((name, pool))

    def sent(self, n: int) -> None:
        with self._lock:
            self.in_flight += n

    def received(self, n: int) -> None:
        with self._lock:
            self.in_flight -= n

    def check(self) -> None:
        with self._lock:
            self.checks += 1
            busy = [name for name, pool in self.pools if not pool.all_idle()]
            if self.in_flight or busy:
                self.violations.append(f"terminated with {self.in_flight} paths in flight, busy pools {busy}")


# -- control-side registry --


@dataclass
class WorkerState:
    name: str
    channel: Channel
    address: str = ""
    jobs: int = 0
    empty_flag: bool = False
    finished: bool = False
    pending_requests: int = 0  # its REQUEST_WORK frames not yet answered by the control
    outstanding: int = 0  # control REQUEST_WORK frames it has not yet answered
    final_paths: int = 0
    metrics: TraversalMetrics | None = None
    replies: queue.Queue = field(default_factory=queue.Queue)
    control_msgs: queue.Queue = field(default_factory=queue.Queue)


class WorkerRegistry:
    def __init__(self) -> None:
        self.lock = threading.RLock()
        self.workers: dict[str, WorkerState] = {}
        self.generation = 0
        self.failure: str | None = None

    def add(self, w: WorkerState) -> None:
        with self.lock:
            self.workers[w.name] = w

    def __iter__(self):
        return iter(list(self.workers.values()))

    def __len__(self) -> int:
        return len(self.workers)

    def bump(self) -> None:
        self.generation += 1

    def fail(self, reason: str) -> None:
        with self.lock:
            if self.failure is None:
                self.failure = reason

    def quiescent(self) -> bool:
        with self.lock:
            return all(
                w.empty_flag and w.pending_requests == 0 and w.outstanding == 0 for w in self.workers.values()
            )


@dataclass
class OutgoingBuffer:
    requester: str
    paths: list[RealityPath] = field(default_factory=list)
    released: bool = False


def termination_check(pool: JobPool, registry: WorkerRegistry, token: CancellationToken) -> bool:
    """True when the whole cluster is out of work; trips ``token`` in that case.

    The registry generation is read before and after the pool check so that
    any handoff racing with the pool snapshot forces another round.
    """
    with registry.lock:
        if token.is_set():
            return True
        gen = registry.generation
        if not registry.quiescent():
            return False
        if not pool.all_idle():
            return False
        if registry.generation != gen:
            return False
        token.set()
        return True


def agglomerate_metrics(parts: Mapping[str, TraversalMetrics] | Sequence[TraversalMetrics]):
    """Field-wise sum plus the per-node breakdown it came from."""
    if isinstance(parts, Mapping):
        breakdown = {k: v.to_dict() for k, v in parts.items()}
        values = list(parts.values())
    else:
        values = list(parts)
        breakdown = {f"node{i}": v.to_dict() for i, v in enumerate(values)}
    return sum_metrics(values), breakdown


@dataclass
class RunReport:
    scenario: str
    wall_time: float
    total_paths: int
    per_node: dict[str, int]
    metrics: dict[str, int]
    per_node_metrics: dict[str, dict[str, int]] = field(default_factory=dict)
    files: dict[str, str] = field(default_factory=dict)
    lost_paths: dict[str, str] = field(default_factory=dict)
    jobs: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.total_paths != sum(self.per_node.values()):
            raise ValueError("total_paths must equal the sum of per-node counts")

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "wall_time": round(self.wall_time, 6),
            "total_paths": self.total_paths,
            "per_node": dict(self.per_node),
            "metrics": dict(self.metrics),
            "per_node_metrics": {k: dict(v) for k, v in self.per_node_metrics.items()},
            "files": dict(self.files),
            "lost_paths": dict(self.lost_paths),
            "jobs": dict(self.jobs),
        }


def _batches(docs: Iterable[bytes], max_transfer: int) -> list[list[bytes]]:
    """Split serialized documents so each JSON array payload fits ``max_transfer``."""
    out: list[list[bytes]] = []
    cur: list[bytes] = []
    size = 2
    for d in docs:
        extra = len(d) + (1 if cur else 0)
        if cur and size + extra > max_transfer:
            out.append(cur)
            cur, size = [], 2
            extra = len(d)
        if not cur and 2 + len(d) > max_transfer:
            log.warning("single path of %d bytes exceeds max transfer %d; sending it alone", len(d), max_transfer)
            out.append([d])
            continue
        cur.append(d)
        size += extra
    if cur:
        out.append(cur)
    return out


def _array(docs: list[bytes]) -> bytes:
    return b"[" + b",".join(docs) + b"]"


# -- control node --


class ControlNode:
    def __init__(
        self,
        net: Network,
        scenario: Scenario,
        store: PathStore,
        *,
        job_count: int | None = None,
        jitter: Callable[[], None] | None = None,
        job_jitter: Callable[[], None] | None = None,
        probe: InFlightProbe | None = None,
        actions: ActionLog | None = None,
        max_transfer: int = DEFAULT_MAX_TRANSFER,
        shutdown_timeout: float = 60.0,
    ) -> None:
        self.net = net
        self.scenario = scenario
        self.store = store
        self.pool = JobPool(net, scenario, job_count, actions=actions, jitter=job_jitter)
        self.registry = WorkerRegistry()
        self.token = CancellationToken()
        self.jitter = jitter or _no_delay
        self.probe = probe
        self.max_transfer = max_transfer
        self.shutdown_timeout = shutdown_timeout
        self.metrics = TraversalMetrics()
        self._mlock = threading.Lock()
        self.final_paths = 0
        self.lost: dict[str, str] = {}
        self._buffers: queue.Queue = queue.Queue()
        self._write_closed = threading.Event()
        self._threads: list[threading.Thread] = []
        if probe is not None:
            probe.register(CONTROL_NAME, self.pool)

    # startup

    def accept_workers(self, listener: socket.socket, expected: Sequence[str], timeout: float) -> None:
        if len(set(expected)) != len(expected):
            raise ClusterError(f"duplicate worker names in {list(expected)}")
        wanted = set(expected)
        deadline = time.monotonic() + timeout
        while wanted:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise WorkerUnavailable(f"workers never connected: {sorted(wanted)}")
            listener.settimeout(remaining)
            try:
                sock, addr = listener.accept()
            except socket.timeout:
                continue
            sock.settimeout(None)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            ch = Channel(sock)
            try:
                hello = ch.expect(MessageType.HELLO).body() or {}
            except (WireError, OSError) as exc:
                log.warning("bad handshake from %s: %s", addr, exc)
                ch.close()
                continue
            name = hello.get("name")
            if hello.get("version") != PROTOCOL_VERSION:
                ch.send(MessageType.ERROR, {"message": f"protocol version {hello.get('version')} != {PROTOCOL_VERSION}"})
                ch.close()
                continue
            if name not in wanted:
                ch.send(MessageType.ERROR, {"message": f"unexpected or duplicate worker {name!r}"})
                ch.close()
                continue
            wanted.discard(name)
            self.registry.add(WorkerState(name, ch, f"{addr[0]}:{addr[1]}", int(hello.get("jobs", 0))))
        model_text = serialize_model(self.net).decode("utf-8")
        for i, w in enumerate(self.registry, start=1):
            w.channel.send(
                MessageType.SCENARIO,
                {
                    "model": model_text,
                    "model_hash": model_hash(self.net),
                    "scenario": self.scenario.name,
                    "node": i,
                    "max_transfer": self.max_transfer,
                },
            )

    # tasks

    def _count(self, name: str, n: int = 1) -> None:
        with self._mlock:
            setattr(self.metrics, name, getattr(self.metrics, name) + n)

    def _guarded(self, target: Callable, *args: Any) -> None:
        try:
            target(*args)
        except Exception as exc:
            log.exception("control task %s failed", getattr(target, "__name__", target))
            self.registry.fail(f"control task failed: {exc}")

    def _spawn(self, target: Callable, name: str, *args: Any) -> None:
        t = threading.Thread(target=self._guarded, args=(target, *args), name=name, daemon=True)
        t.start()
        self._threads.append(t)

    def _reader(self, w: WorkerState) -> None:
        reg = self.registry
        while True:
            try:
                msg = w.channel.recv()
            except (WireError, OSError) as exc:
                if not w.finished:
                    reg.fail(f"lost worker {w.name}: {exc}")
                    w.control_msgs.put(None)
                    w.replies.put(None)
                return
            self.jitter()
            t = msg.msg_type
            if t is MessageType.REQUEST_WORK:
                self._count("work_requests_received")
                with reg.lock:
                    late = self.token.is_set()
                    if not late:
                        w.pending_requests += 1
                        reg.bump()
                if late:
                    self._send(w, MessageType.WORK, b"[]")
                else:
                    self._buffers.put(OutgoingBuffer(w.name))
            elif t is MessageType.WORK:
                w.replies.put(msg)
            elif t is MessageType.REPORT_PATHS:
                try:
                    n = self._accept_finals(w, msg.payload)
                except (ValueError, ProtocolError) as exc:
                    reg.fail(f"bad path report from {w.name}: {exc}")
                    return
                with reg.lock:
                    w.empty_flag = False
                    reg.bump()
                self._send(w, MessageType.REPORT_ACK, {"count": n})
            elif t in (MessageType.CANCEL_DONE, MessageType.METRICS):
                w.control_msgs.put(msg)
            elif t is MessageType.ERROR:
                reg.fail(f"worker {w.name} reported error: {msg.body()}")
                w.control_msgs.put(None)
                w.replies.put(None)
            else:
                reg.fail(f"unexpected {t.name} from worker {w.name}")

    def _send(self, w: WorkerState, t: MessageType, body: Any = None) -> None:
        try:
            w.channel.send(t, body)
        except OSError as exc:
            if not w.finished:
                self.registry.fail(f"send to {w.name} failed: {exc}")

    def _accept_finals(self, w: WorkerState, payload: bytes) -> int:
        docs = json.loads(payload)
        if not isinstance(docs, list) or not all(isinstance(d, dict) and d.get("status") == FINAL for d in docs):
            raise ProtocolError(f"malformed final-path batch from {w.name}")
        self.store.append_paths(dumps_canonical(d) for d in docs)
        w.final_paths += len(docs)
        return len(docs)

    def _outgoing_loop(self) -> None:
        reg = self.registry
        while True:
            buf = self._buffers.get()
            if buf is None:
                return
            self.jitter()
            w = reg.workers[buf.requester]
            buf.paths = [] if self.token.is_set() else self.pool.take_half_each()
            n = len(buf.paths)
            if self.probe is not None:
                self.probe.sent(n)
            with reg.lock:
                w.empty_flag = n == 0
                reg.bump()
            self._count("paths_sent", n)
            self._send(w, MessageType.WORK, serialize_paths(buf.paths))
            buf.released = True
            with reg.lock:
                w.pending_requests -= 1
                reg.bump()

    def _request_loop(self) -> None:
        reg = self.registry
        workers = list(reg)
        backoff = _POLL
        while not self.token.is_set() and reg.failure is None:
            if not workers or not self.pool.all_idle():
                time.sleep(_POLL)
                continue
            got = False
            for w in workers:
                with reg.lock:
                    if self.token.is_set():
                        return
                    w.outstanding += 1
                    reg.bump()
                self.jitter()
                self._count("work_requests_sent")
                self._send(w, MessageType.REQUEST_WORK)
                msg = w.replies.get()
                if msg is None:
                    return
                paths = deserialize_paths(msg.payload, self.net)
                if paths:
                    self.pool.add_work(paths)
                    if self.probe is not None:
                        self.probe.received(len(paths))
                    self._count("paths_received", len(paths))
                with reg.lock:
                    w.outstanding -= 1
                    if paths:
                        w.empty_flag = False
                    reg.bump()
                if paths:
                    got = True
                    break
            if got:
                backoff = _POLL
            else:
                time.sleep(backoff)
                backoff = min(backoff * 2, 0.05)

    def _balance_loop(self) -> None:
        while not self.token.is_set():
            if not self.pool.balance_tick():
                time.sleep(_POLL)

    def _write_loop(self) -> None:
        # stops when the completed-path channel is closed, not on the token
        while True:
            paths = self.pool.drain_completed(4096)
            if paths:
                self.store.append_paths(paths)
                self.final_paths += len(paths)
            elif self._write_closed.is_set():
                rest = self.pool.drain_completed()
                self.store.append_paths(rest)
                self.final_paths += len(rest)
                return
            else:
                time.sleep(_POLL)

    # run

    def run(self, poll: float = _POLL) -> None:
        for w in self.registry:
            self._spawn(self._reader, f"read-{w.name}", w)
        root = root_path(self.net, self.scenario)
        if root.status == FINAL:
            self.store.append_paths([root])
            self.final_paths += 1
            self.metrics.final_paths += 1
        else:
            self.pool.add_work([root])
        self.pool.start()
        self._spawn(self._outgoing_loop, "outgoing")
        self._spawn(self._request_loop, "request")
        self._spawn(self._balance_loop, "balance")
        writer = threading.Thread(target=self._write_loop, name="write", daemon=True)
        writer.start()
        try:
            while True:
                if self.registry.failure is not None:
                    self.token.set()
                    raise ClusterError(self.registry.failure)
                if termination_check(self.pool, self.registry, self.token):
                    if self.probe is not None:
                        self.probe.check()
                    break
                time.sleep(poll)
        finally:
            self.token.set()
            self.pool.stop()
            self._buffers.put(None)
        self.lost = self.shutdown_sequence(writer)

    def shutdown_sequence(self, writer: threading.Thread) -> dict[str, str]:
        """Cancel workers one by one, collect their last finals, close the writer, gather metrics."""
        lost: dict[str, str] = {}
        for w in self.registry:
            self._send(w, MessageType.CANCEL)
            msg = self._await(w, MessageType.CANCEL_DONE)
            if msg is None:
                lost[w.name] = "no CANCEL_DONE before timeout"
                continue
            self._accept_finals(w, msg.payload)
        self._write_closed.set()
        writer.join()
        for w in self.registry:
            if w.name in lost:
                continue
            self._send(w, MessageType.METRICS_REQUEST)
            msg = self._await(w, MessageType.METRICS)
            if msg is None:
                lost[w.name] = "no METRICS before timeout"
                continue
            w.metrics = TraversalMetrics.from_dict(msg.body()["metrics"])
            w.finished = True
            w.channel.close()
        return lost

    def _await(self, w: WorkerState, t: MessageType):
        try:
            msg = w.control_msgs.get(timeout=self.shutdown_timeout)
        except queue.Empty:
            return None
        if msg is None or msg.msg_type is not t:
            return None
        return msg

    def node_metrics(self) -> dict[str, TraversalMetrics]:
        own = sum_metrics([self.pool.metrics(), self.metrics])
        parts = {CONTROL_NAME: own}
        for w in self.registry:
            parts[w.name] = w.metrics or TraversalMetrics()
        return parts


def control_serve(
    net: Network,
    scenario: Scenario,
    store: PathStore,
    *,
    listener: socket.socket | None = None,
    workers: Sequence[str] = (),
    accept_timeout: float = 30.0,
    **node_kw: Any,
) -> RunReport:
    """Run a traversal as the control node and return the run report.

    ``workers`` names the workers expected to connect to ``listener``. With
    none, this is a single-node run through the same code path.
    """
    started = time.monotonic()
    node = ControlNode(net, scenario, store, **node_kw)
    if workers:
        if listener is None:
            raise ClusterError("workers configured but no listening socket")
        node.accept_workers(listener, workers, accept_timeout)
    try:
        node.run()
    except BaseException:
        for w in node.registry:
            w.finished = True
            w.channel.close()
        raise
    finally:
        summary = store.close()
    per_node = {CONTROL_NAME: node.final_paths}
    for w in node.registry:
        per_node[w.name] = w.final_paths
    total, breakdown = agglomerate_metrics(node.node_metrics())
    if summary.count != sum(per_node.values()):
        raise ClusterError(f"store holds {summary.count} paths but nodes delivered {sum(per_node.values())}")
    jobs = {CONTROL_NAME: len(node.pool.jobs)}
    jobs.update({w.name: w.jobs for w in node.registry})
    return RunReport(
        scenario=scenario.name,
        wall_time=time.monotonic() - started,
        total_paths=summary.count,
        per_node=per_node,
        metrics=total.to_dict(),
        per_node_metrics=breakdown,
        files={"data": summary.data_file, "index": summary.index_file},
        lost_paths=node.lost,
        jobs=jobs,
    )


# -- worker node --


@dataclass
class WorkerResult:
    name: str
    reported: int
    metrics: TraversalMetrics


class WorkerNode:
    def __init__(
        self,
        channel: Channel,
        name: str,
        *,
        job_count: int | None = None,
        jitter: Callable[[], None] | None = None,
        job_jitter: Callable[[], None] | None = None,
        probe: InFlightProbe | None = None,
        action_mode: str = "dry_run",
    ) -> None:
        self.channel = channel
        self.name = name
        self.job_count = job_count
        self.jitter = jitter or _no_delay
        self.job_jitter = job_jitter
        self.probe = probe
        self.actions = ActionLog(action_mode)
        self.metrics = TraversalMetrics()
        self.reported = 0
        self._stop = threading.Event()
        self._cancel = threading.Event()
        self._metrics_req = threading.Event()
        self._closing = False
        self._failure: str | None = None
        self._replies: queue.Queue = queue.Queue()
        self._acks: queue.Queue = queue.Queue()
        self._requests: queue.Queue = queue.Queue()

    def handshake(self) -> None:
        self.channel.send(
            MessageType.HELLO, {"version": PROTOCOL_VERSION, "jobs": self.job_count or 0, "name": self.name}
        )
        msg = self.channel.expect(MessageType.SCENARIO)
        body = msg.body()
        self.net = load_model(body["model"])
        if model_hash(self.net) != body["model_hash"]:
            raise ProtocolError("model hash mismatch after transfer")
        self.scenario = self.net.scenarios[body["scenario"]]
        self.max_transfer = int(body["max_transfer"])
        self.pool = JobPool(self.net, self.scenario, self.job_count, actions=self.actions, jitter=self.job_jitter)
        if self.probe is not None:
            self.probe.register(self.name, self.pool)

    def _reader(self) -> None:
        while True:
            try:
                msg = self.channel.recv()
            except (WireError, OSError) as exc:
                if not self._closing:
                    self._fail(f"connection to control lost: {exc}")
                return
            self.jitter()
            t = msg.msg_type
            if t is MessageType.REQUEST_WORK:
                self.metrics.work_requests_received += 1
                self._requests.put(msg)
            elif t is MessageType.WORK:
                self._replies.put(msg)
            elif t is MessageType.REPORT_ACK:
                self._acks.put(msg)
            elif t is MessageType.CANCEL:
                self._cancel.set()
            elif t is MessageType.METRICS_REQUEST:
                self._metrics_req.set()
            elif t is MessageType.ERROR:
                self._fail(f"control reported error: {msg.body()}")
                return
            else:
                self._fail(f"unexpected {t.name} from control")
                return

    def _fail(self, reason: str) -> None:
        if self._failure is None:
            self._failure = reason
        self._stop.set()
        self._cancel.set()
        self._metrics_req.set()
        self._replies.put(None)
        self._acks.put(None)
        self._requests.put(None)

    def _guarded(self, target: Callable[[], None]) -> None:
        try:
            target()
        except Exception as exc:
            log.exception("worker task %s failed", target.__name__)
            self._fail(f"worker task failed: {exc}")

    def _request_loop(self) -> None:
        while not self._stop.is_set():
            if not self.pool.all_idle():
                time.sleep(_POLL)
                continue
            self.jitter()
            self.metrics.work_requests_sent += 1
            self.channel.send(MessageType.REQUEST_WORK)
            msg = None
            while msg is None and not self._stop.is_set():
                try:
                    msg = self._replies.get(timeout=0.05)
                except queue.Empty:
                    continue
            if msg is None:
                return
            paths = deserialize_paths(msg.payload, self.net)
            if paths:
                self.pool.add_work(paths)
                if self.probe is not None:
                    self.probe.received(len(paths))
                self.metrics.paths_received += len(paths)
            else:
                time.sleep(_POLL)

    def _outgoing_loop(self) -> None:
        while True:
            msg = self._requests.get()
            if msg is None or self._stop.is_set():
                return
            self.jitter()
            paths = self.pool.take_half_each()
            if self.probe is not None:
                self.probe.sent(len(paths))
            self.metrics.paths_sent += len(paths)
            self.channel.send(MessageType.WORK, serialize_paths(paths))

    def _balance_loop(self) -> None:
        while not self._stop.is_set():
            if not self.pool.balance_tick():
                time.sleep(_POLL)

    def _send_batch(self, docs: list[bytes]) -> bool:
        self.channel.send(MessageType.REPORT_PATHS, _array(docs))
        ack = self._acks.get()
        if ack is None:
            return False
        self.reported += len(docs)
        return True

    def _report_loop(self) -> None:
        while not self._stop.is_set():
            paths = self.pool.drain_completed(4096)
            if not paths:
                time.sleep(_POLL)
                continue
            self.jitter()
            for batch in _batches((dumps_canonical(path_to_doc(p)) for p in paths), self.max_transfer):
                if not self._send_batch(batch):
                    return

    def run(self) -> WorkerResult:
        threads = [
            threading.Thread(target=self._guarded, args=(f,), name=f"{self.name}-{f.__name__}", daemon=True)
            for f in (self._request_loop, self._outgoing_loop, self._balance_loop)
        ]
        reporter = threading.Thread(target=self._guarded, args=(self._report_loop,), name=f"{self.name}-report", daemon=True)
        reader = threading.Thread(target=self._reader, name=f"{self.name}-read", daemon=True)
        reader.start()
        self.pool.start()
        for t in (*threads, reporter):
            t.start()
        self._cancel.wait()
        self._stop.set()
        self._requests.put(None)
        self.pool.stop()
        for t in threads:
            t.join()
        reporter.join()
        if self._failure is not None:
            raise ClusterError(self._failure)
        rest = [dumps_canonical(path_to_doc(p)) for p in self.pool.drain_completed()]
        batches = _batches(rest, self.max_transfer) or [[]]
        for batch in batches[:-1]:
            if not self._send_batch(batch):
                raise ClusterError(self._failure or "report aborted")
        self.channel.send(MessageType.CANCEL_DONE, _array(batches[-1]))
        self.reported += len(batches[-1])
        self._metrics_req.wait()
        if self._failure is not None:
            raise ClusterError(self._failure)
        total = sum_metrics([self.pool.metrics(), self.metrics])
        self._closing = True
        self.channel.send(MessageType.METRICS, {"metrics": total.to_dict(), "final_paths": self.reported})
        reader.join(timeout=self._join_timeout)
        self.channel.close()
        return WorkerResult(self.name, self.reported, total)

    _join_timeout = 10.0


def connect(address: tuple[str, int], timeout: float) -> socket.socket:
    deadline = time.monotonic() + timeout
    last: Exception | None = None
    while True:
        try:
            sock = socket.create_connection(address, timeout=max(0.1, deadline - time.monotonic()))
            sock.settimeout(None)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except OSError as exc:
            last = exc
        if time.monotonic() >= deadline:
            raise WorkerUnavailable(f"cannot reach control at {address[0]}:{address[1]}: {last}")
        time.sleep(0.05)


def worker_serve(
    address: tuple[str, int],
    name: str,
    *,
    connect_timeout: float = 10.0,
    **node_kw: Any,
) -> WorkerResult:
    """Serve one run for the control node at ``address``, then return."""
    channel = Channel(connect(address, connect_timeout))
    node = WorkerNode(channel, name, **node_kw)
    try:
        try:
            node.handshake()
        except WireError as exc:
            raise ProtocolError(str(exc)) from None
        return node.run()
    except BaseException:
        node._closing = True
        channel.close()
        raise
