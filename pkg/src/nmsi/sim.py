"""Deterministic whole-system simulation of the replication protocol.

Every network hop costs exactly `delta` ticks and events are dispatched
from a single priority queue keyed by (tick, sequence number), so a run
is a pure function of its configuration: same config, same trace, byte
for byte.  Each process hosts one :class:`~nmsi.protocol.Replica`; the
simulator plays the client side, drives transactions one operation at a
time, injects crashes, and records everything needed to audit a run:
message log, per-process decisions, install orders, op intervals.

`extract_history` replays those records as a partially ordered history
whose precedence combines real-time interval order, reads-from edges,
and per-object write order by delivered timestamp, which is what the
consistency checker consumes.  `account` reduces a trace to latency and
message-count profiles per transaction.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .amcast import Agree, Final, Group, Propose, Submit, validate_groups
from .depvec import Partition
from .history import ABORT, COMMIT, READ, WRITE, History, Operation
from .protocol import ReadRep, ReadReq, Replica, Vote

_WIRE_NAMES = {
    Submit: "SUBMIT", Propose: "PROPOSE", Agree: "AGREE", Final: "FINAL",
    ReadReq: "READREQ", ReadRep: "READREP", Vote: "VOTE",
}


class SimError(Exception):
    pass


@dataclass(frozen=True)
class Crash:
    tick: int
    process: str


@dataclass(frozen=True)
class Workload:
    txn_count: int = 20
    read_only_fraction: float = 0.5
    ops_per_txn: int = 3
    distribution: str = "uniform"  # or "zipf"


@dataclass(frozen=True)
class ScriptedTxn:
    id: str
    coordinator: str
    ops: tuple[tuple[str, ...], ...]  # ("r", obj) | ("w", obj[, value])


@dataclass(frozen=True)
class SimConfig:
    groups: tuple[Group, ...]
    delta: int = 1
    seed: int = 0
    vector_mode: str = "dv"
    partition: Partition | None = None
    workload: Workload = Workload()
    crashes: tuple[Crash, ...] = ()
    script: tuple[ScriptedTxn, ...] = ()

    def placement(self) -> dict[str, Group]:
        out: dict[str, Group] = {}
        for g in self.groups:
            for x in sorted(g.objects):
                if x in out:
                    raise SimError(f"object {x} is replicated by two groups")
                out[x] = g
        return out


def load_config(text: str) -> SimConfig:
    """Parse a TOML run description into a validated SimConfig."""
    raw = tomllib.loads(text)
    groups = tuple(
        Group(int(g["id"]), tuple(g["members"]), frozenset(g["objects"]))
        for g in raw.get("groups", ())
    )
    partition = None
    if "partition" in raw:
        classes = [(cid, tuple(objs))
                   for cid, objs in raw["partition"]["classes"].items()]
        partition = Partition(tuple(classes))
    wl = raw.get("workload", {})
    workload = Workload(
        txn_count=int(wl.get("txn_count", 20)),
        read_only_fraction=float(wl.get("read_only_fraction", 0.5)),
        ops_per_txn=int(wl.get("ops_per_txn", 3)),
        distribution=str(wl.get("distribution", "uniform")),
    )
    script = tuple(
        ScriptedTxn(str(t["id"]), str(t["coordinator"]),
                    tuple(tuple(op) for op in t["ops"]))
        for t in raw.get("txns", ())
    )
    return SimConfig(
        groups=groups,
        delta=int(raw.get("delta", 1)),
        seed=int(raw.get("seed", 0)),
        vector_mode=str(raw.get("vector_mode", "dv")),
        partition=partition,
        workload=workload,
        crashes=tuple(Crash(int(c["tick"]), str(c["process"]))
                      for c in raw.get("crashes", ())),
        script=script,
    )


# -- internal client events ---------------------------------------------------

@dataclass(frozen=True)
class _Continue:
    txn: str


@dataclass(frozen=True)
class _StartTxn:
    coordinator: str


@dataclass
class _Client:
    txn: str
    coordinator: str
    ops: tuple[tuple[str, ...], ...]
    next_op: int = 0
    started: int | None = None


@dataclass
class RunTrace:
    config: SimConfig
    txn_order: tuple[str, ...]
    scripts: dict[str, _Client]
    ops: dict[str, list[tuple[str, str | None, str | None, int, int]]]
    decisions: dict[str, bool]
    decisions_at: dict[tuple[str, str], tuple[bool, int]]
    latency: dict[str, tuple[int, int, int]]  # (start, submit, decide)
    messages: list[tuple[int, str, str, str, str]]
    state_lines: list[tuple[int, int, str]]
    steps: dict[str, set[str]]
    installs: dict[tuple[str, str], list[str]]
    timestamps: dict[str, tuple[int, int]]  # txn -> delivered amcast ts
    crashed: dict[str, int]

    def lines(self) -> list[str]:
        """The run as text: one line per message send or state change."""
        tagged = []
        for seq, (t, src, dst, kind, txn) in enumerate(self.messages):
            tagged.append(
                ((t, 0, seq), f"tick={t} from={src} to={dst} type={kind} msg={txn}"))
        for t, seq, text in self.state_lines:
            tagged.append(((t, 1, seq), f"tick={t} {text}"))
        return [text for _, text in sorted(tagged)]


class _Ctx:
    """What a Replica sees of the simulator during one dispatch."""

    __slots__ = ("sim", "pid", "sender", "txn")

    def __init__(self, sim: "Sim", pid: str, sender: str | None = None,
                 txn: str | None = None):
        self.sim = sim
        self.pid = pid
        self.sender = sender
        self.txn = txn

    def now(self) -> int:
        return self.sim.tick

    def send(self, dst: str, msg) -> None:
        self.sim.post(self.pid, dst, msg)

    def next_msg_id(self) -> int:
        self.sim.msg_seq += 1
        return self.sim.msg_seq

    def record_op(self, txn, kind, obj, version, start, end) -> None:
        self.sim.ops.setdefault(txn, []).append((kind, obj, version, start, end))

    def read_complete(self, txn, obj, value) -> None:
        self.sim.post_local(self.pid, _Continue(txn))

    def record_install(self, obj, txn) -> None:
        self.sim.installs.setdefault((self.pid, obj), []).append(txn)
        self.sim.state_lines.append(
            (self.sim.tick, self.sim.next_line_seq(),
             f"at={self.pid} install={obj} writer={txn}"))

    def record_delivery(self, txn, ts) -> None:
        self.sim.on_delivery(txn, ts)

    def txn_done(self, txn, committed, submit_tick) -> None:
        self.sim.on_txn_done(self.pid, txn, committed, submit_tick)


class Sim:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.gmap = validate_groups(cfg.groups)
        self.placement = cfg.placement()
        self.tick = 0
        self.seq = 0
        self.line_seq = 0
        self.msg_seq = 0
        self.queue: list = []
        self.processes: dict[str, Replica] = {}
        for g in cfg.groups:
            for p in g.members:
                self.processes[p] = Replica(
                    p, g, self.gmap, cfg.vector_mode, cfg.partition)
        self.crashed = {c.process: c.tick for c in cfg.crashes}
        self._validate_crashes()
        self.clients: dict[str, _Client] = {}
        self.by_coord: dict[str, list[str]] = {}
        self.txn_order: tuple[str, ...] = ()
        # recordings
        self.ops: dict[str, list] = {}
        self.decisions: dict[str, bool] = {}
        self.decisions_at: dict[tuple[str, str], tuple[bool, int]] = {}
        self.latency: dict[str, tuple[int, int, int]] = {}
        self.messages: list[tuple[int, str, str, str, str]] = []
        self.state_lines: list[tuple[int, int, str]] = []
        self.steps: dict[str, set[str]] = {}
        self.installs: dict[tuple[str, str], list[str]] = {}
        self.timestamps: dict[str, tuple[int, int]] = {}

    def _validate_crashes(self) -> None:
        for p, tick in self.crashed.items():
            if p not in self.processes:
                raise SimError(f"crash names unknown process {p}")
            if any(g.leader == p for g in self.cfg.groups):
                raise SimError(f"cannot crash group proposer {p}")
            if tick < 0:
                raise SimError("crash tick must not be negative")
        for g in self.cfg.groups:
            correct = [p for p in g.members if p not in self.crashed]
            if len(correct) <= len(g.members) // 2:
                raise SimError(f"group {g.id} loses its correct majority")

    def next_line_seq(self) -> int:
        self.line_seq += 1
        return self.line_seq

    # -- event plumbing ------------------------------------------------------

    def post(self, src: str, dst: str, msg) -> None:
        kind = _WIRE_NAMES.get(type(msg))
        if kind is not None:
            self.messages.append((self.tick, src, dst, kind, msg.txn))
        self.seq += 1
        heapq.heappush(
            self.queue, (self.tick + self.cfg.delta, self.seq, dst, src, msg))

    def post_local(self, dst: str, msg) -> None:
        # Client bookkeeping events take no network hop.
        self.seq += 1
        heapq.heappush(self.queue, (self.tick, self.seq, dst, None, msg))

    def _step(self, txn: str | None, pid: str) -> None:
        if txn is not None:
            self.steps.setdefault(txn, set()).add(pid)

    # -- client side -----------------------------------------------------------

    def _build_clients(self) -> None:
        if self.cfg.script:
            for t in self.cfg.script:
                if t.coordinator not in self.processes:
                    raise SimError(f"unknown coordinator {t.coordinator}")
                if t.coordinator in self.crashed:
                    raise SimError(f"coordinator {t.coordinator} crashes")
                if t.id in self.clients:
                    raise SimError(f"duplicate transaction id {t.id}")
                self.clients[t.id] = _Client(t.id, t.coordinator, t.ops)
            self.txn_order = tuple(t.id for t in self.cfg.script)
        else:
            self._generate_workload()
        for txn in self.txn_order:
            c = self.clients[txn]
            self.by_coord.setdefault(c.coordinator, []).append(txn)

    def _generate_workload(self) -> None:
        wl = self.cfg.workload
        rng = random.Random(self.cfg.seed)
        objects = sorted(self.placement)
        if not objects:
            raise SimError("no objects to operate on")
        coords = [p for p in sorted(self.processes) if p not in self.crashed]
        weights = None
        if wl.distribution == "zipf":
            weights = [1.0 / (i + 1) for i in range(len(objects))]
        elif wl.distribution != "uniform":
            raise SimError(f"unknown distribution {wl.distribution!r}")
        txns = []
        for k in range(wl.txn_count):
            txn = str(k + 1)
            coord = coords[k % len(coords)]
            n = rng.randint(1, max(1, min(wl.ops_per_txn, len(objects))))
            if weights is None:
                picked = rng.sample(objects, n)
            else:
                picked = []
                while len(picked) < n:
                    x = rng.choices(objects, weights)[0]
                    if x not in picked:
                        picked.append(x)
            ops: list[tuple[str, ...]] = [("r", x) for x in picked]
            if rng.random() >= wl.read_only_fraction:
                wset = rng.sample(picked, rng.randint(1, len(picked)))
                ops.extend(("w", x) for x in wset)
            self.clients[txn] = _Client(txn, coord, tuple(ops))
            txns.append(txn)
        self.txn_order = tuple(txns)

    def _start_next(self, coordinator: str) -> None:
        pending = self.by_coord.get(coordinator, [])
        if not pending:
            return
        txn = pending.pop(0)
        client = self.clients[txn]
        client.started = self.tick
        self.processes[coordinator].begin(txn)
        self.post_local(coordinator, _Continue(txn))

    def _client_op(self, txn: str) -> None:
        client = self.clients[txn]
        rep = self.processes[client.coordinator]
        ctx = _Ctx(self, client.coordinator, txn=txn)
        if client.next_op >= len(client.ops):
            rep.submit(ctx, txn)
            return
        op = client.ops[client.next_op]
        client.next_op += 1
        if op[0] == "r":
            value = rep.execute_read(ctx, txn, op[1])
            if value is not None:
                # Served from the transaction's own write buffer.
                self.post_local(client.coordinator, _Continue(txn))
        elif op[0] == "w":
            value = op[2] if len(op) > 2 else f"{txn}:{op[1]}"
            rep.execute_write(ctx, txn, op[1], value)
            self.post_local(client.coordinator, _Continue(txn))
        else:
            raise SimError(f"unknown scripted op {op!r}")

    def on_delivery(self, txn: str, ts: tuple[int, int]) -> None:
        if self.timestamps.setdefault(txn, ts) != ts:
            raise SimError(f"{txn} delivered under two timestamps")

    def on_txn_done(self, pid: str, txn: str, committed: bool,
                    submit_tick: int) -> None:
        client = self.clients[txn]
        self.decisions[txn] = committed
        self.latency[txn] = (client.started, submit_tick, self.tick)
        kind = COMMIT if committed else ABORT
        self.ops.setdefault(txn, []).append(
            (kind, None, None, submit_tick, self.tick))
        self.state_lines.append(
            (self.tick, self.next_line_seq(),
             f"at={pid} txn={txn} decide={'commit' if committed else 'abort'}"))
        self.post_local(pid, _StartTxn(pid))

    # -- main loop ---------------------------------------------------------------

    def run(self) -> RunTrace:
        self._build_clients()
        for coord in sorted(self.by_coord):
            self._start_next(coord)
        while self.queue:
            tick, _, dst, src, msg = heapq.heappop(self.queue)
            self.tick = tick
            crash = self.crashed.get(dst)
            if crash is not None and tick >= crash:
                continue
            if isinstance(msg, _Continue):
                self._step(msg.txn, dst)
                self._client_op(msg.txn)
            elif isinstance(msg, _StartTxn):
                self._start_next(dst)
            else:
                self._step(msg.txn, dst)
                rep = self.processes[dst]
                before = dict(rep.decisions)
                rep.handle(_Ctx(self, dst, sender=src, txn=msg.txn), msg)
                for t, verdict in rep.decisions.items():
                    if t not in before:
                        self.decisions_at[(dst, t)] = (verdict, tick)
                        if dst != self.clients[t].coordinator:
                            self.state_lines.append(
                                (tick, self.next_line_seq(),
                                 f"at={dst} txn={t} decide="
                                 f"{'commit' if verdict else 'abort'}"))
        self._check_run()
        return RunTrace(
            config=self.cfg, txn_order=self.txn_order, scripts=self.clients,
            ops=self.ops, decisions=self.decisions,
            decisions_at=self.decisions_at, latency=self.latency,
            messages=self.messages, state_lines=self.state_lines,
            steps=self.steps, installs=self.installs,
            timestamps=self.timestamps, crashed=self.crashed,
        )

    def _check_run(self) -> None:
        undecided = [t for t in self.txn_order if t not in self.decisions]
        if undecided:
            raise SimError(f"transactions never terminated: {undecided}")
        # Correct processes that decided a transaction agree on the verdict.
        for (pid, txn), (verdict, _) in self.decisions_at.items():
            if verdict != self.decisions[txn]:
                raise SimError(f"{pid} and the coordinator disagree on {txn}")
        # Members of a group install the same versions in the same order.
        for g in self.cfg.groups:
            correct = [p for p in g.members if p not in self.crashed]
            for x in sorted(g.objects):
                seqs = {tuple(self.installs.get((p, x), ())) for p in correct}
                if len(seqs) != 1:
                    raise SimError(f"replicas of {x} diverge: {sorted(seqs)}")


def run(cfg: SimConfig) -> RunTrace:
    return Sim(cfg).run()


def extract_history(trace: RunTrace) -> History:
    """Replay a trace as the partially ordered history it implements.

    Precedence: program order, interval order (op a ended strictly before
    op b started), reads-from (a committed read runs after the commit it
    read), and same-object writes in delivered-timestamp order.
    """
    ops: list[Operation] = []
    index: dict[tuple[str, str | None, str], int] = {}
    spans: list[tuple[int, int]] = []
    decided = {txn: recs[-1][4] for txn, recs in trace.ops.items() if recs}
    for txn in trace.txn_order:
        for kind, obj, version, start, end in trace.ops.get(txn, ()):
            if kind == READ:
                op = Operation(READ, txn, obj, version)
            elif kind == WRITE:
                # A write stays in flight from its buffering until the
                # decision lands; a point interval would order it before
                # writes that certify ahead of it.
                op = Operation(WRITE, txn, obj)
                end = decided[txn]
            else:
                op = Operation(kind, txn)
            index[(kind, obj, txn)] = len(ops)
            ops.append(op)
            spans.append((start, end))
    edges: set[tuple[int, int]] = set()
    for i, (_, end_i) in enumerate(spans):
        for j, (start_j, _) in enumerate(spans):
            if i != j and end_i < start_j:
                edges.add((i, j))
    for (kind, obj, txn), i in index.items():
        if kind == READ:
            version = ops[i].read_version
            if version != "0":
                edges.add((index[(COMMIT, None, version)], i))
    # Serialize same-object writes by delivered timestamp.  Replicas of an
    # object deliver, certify, and install in timestamp order, so for
    # committed writers this is the install order; aborted writers take
    # the slot they were certified in.  One global key keeps the direction
    # consistent across objects, which per-group orders alone do not when
    # two multi-object writers both abort.
    by_obj: dict[str, list[str]] = {}
    for txn in trace.txn_order:
        for kind, obj, _, _, _ in trace.ops.get(txn, ()):
            if kind == WRITE:
                by_obj.setdefault(obj, []).append(txn)
    for obj, writers in by_obj.items():
        writers.sort(key=lambda t: (trace.timestamps[t], t))
        for a, b in zip(writers, writers[1:]):
            edges.add((index[(WRITE, obj, a)], index[(WRITE, obj, b)]))
    return History.from_ops(ops, sorted(edges))


def account(trace: RunTrace) -> dict:
    """Latency and message profile of a run, per transaction and total."""
    delta = trace.config.delta
    per_txn: dict[str, dict] = {}
    msg_counts: dict[str, dict[str, int]] = {}
    for tick, src, dst, kind, txn in trace.messages:
        if src != dst:
            msg_counts.setdefault(txn, {}).setdefault(kind, 0)
            msg_counts[txn][kind] += 1
    for txn in trace.txn_order:
        start, submit, decide = trace.latency[txn]
        reads = [o for o in trace.ops.get(txn, ()) if o[0] == READ]
        remote = sum(1 for _, _, _, s, e in reads if e > s)
        local = len(reads) - remote
        per_txn[txn] = {
            "committed": trace.decisions[txn],
            "ops": len(trace.ops.get(txn, ())) - 1,
            "remote_reads": remote,
            "local_reads": local,
            "execution_delta": (submit - start) // delta if delta else 0,
            "termination_delta": (decide - submit) // delta if delta else 0,
            "latency_delta": (decide - start) // delta if delta else 0,
            "messages": msg_counts.get(txn, {}),
        }
    totals: dict[str, int] = {}
    for counts in msg_counts.values():
        for kind, n in counts.items():
            totals[kind] = totals.get(kind, 0) + n
    return {"txns": per_txn, "message_totals": totals,
            "committed": sum(trace.decisions.values()),
            "aborted": sum(not v for v in trace.decisions.values())}
