"""Per-process replication engine: optimistic execution and certification.

Each process runs one :class:`Replica`.  In its server role it answers
remote read requests with versions compatible with the requester's
snapshot, certifies delivered update transactions against its committed
set, votes, and applies decided write-sets to its local store.  In its
coordinator role it executes a client transaction's operations one at a
time, buffers writes, and submits the transaction for termination.

Read-only transactions commit at submission time without sending a
single termination message.  Update transactions are atomic-multicast to
the groups replicating their write-sets; every replica of a written
object certifies and votes, and any process can decide once it holds
votes from a quorum covering every written object.

Version bookkeeping is configurable: plain vectors count writers per
object; partitioned vectors count per object class and are stamped with
a per-class install sequence at commit time, which keeps same-class
snapshot tests decidable from one group's local state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from .amcast import Agree, Amcast, Final, Group, Propose, Submit
from .depvec import Partition, Vector
from .history import INITIAL_TXN

EXECUTING = "executing"
SUBMITTED = "submitted"
COMMITTED = "committed"
ABORTED = "aborted"


class ProtocolError(Exception):
    pass


@dataclass(frozen=True)
class TxnRecord:
    """Immutable transaction summary multicast for certification."""

    id: str
    coordinator: str
    read_set: tuple[tuple[str, str, Vector], ...]  # (object, version, vector)
    write_set: tuple[str, ...]
    write_values: tuple[tuple[str, object], ...]

    @property
    def kind(self) -> str:
        return "Update" if self.write_set else "ReadOnly"

    def read_vector(self, obj: str) -> Vector:
        for o, _, v in self.read_set:
            if o == obj:
                return v
        raise KeyError(obj)


class _Version(NamedTuple):
    writer: str
    value: object
    vector: Vector


@dataclass(frozen=True)
class ReadReq:
    txn: str
    obj: str
    reads: tuple[tuple[str, str, Vector], ...]


@dataclass(frozen=True)
class ReadRep:
    txn: str
    obj: str
    writer: str
    value: object
    vector: Vector


@dataclass(frozen=True)
class Vote:
    txn: str
    voter: str
    ok: bool
    # For each written class this voter stores: the install point its
    # group reserves, and the class's current state vector.  Queue order
    # makes both final at voting time.  A version's vector must join the
    # vectors of all earlier writes in its class, wherever they live, so
    # deciders assemble it from the covering votes.
    stamps: tuple[tuple[str, int, Vector], ...] = ()


@dataclass
class _CoordTxn:
    """Coordinator-side execution state of one client transaction."""

    phase: str = EXECUTING
    read_set: dict[str, tuple[str, object, Vector]] = field(default_factory=dict)
    update_set: dict[str, object] = field(default_factory=dict)
    read_order: list[str] = field(default_factory=list)
    awaiting: str | None = None
    read_started: dict[str, int] = field(default_factory=dict)
    submit_tick: int | None = None
    record: TxnRecord | None = None

    def advance(self, phase: str) -> None:
        order = (EXECUTING, SUBMITTED, COMMITTED, ABORTED)
        if order.index(phase) < order.index(self.phase):
            raise ProtocolError(f"phase cannot move {self.phase} -> {phase}")
        self.phase = phase


def vote_outcome(rec: TxnRecord, votes: dict[str, bool], replicas) -> bool | None:
    """Three-valued quorum outcome; None while no quorum is fully heard.

    `replicas` maps an object to the processes storing it.  A quorum for
    the transaction covers every written object with at least one voter.
    """
    if not rec.write_set:
        return True
    heard = set(votes)
    if any(not (heard & set(replicas(x))) for x in rec.write_set):
        return None
    approving = {q for q, ok in votes.items() if ok}
    if all(approving & set(replicas(x)) for x in rec.write_set):
        return True
    return False


class Replica:
    """State machine of one process; all interaction goes through `ctx`.

    The simulator calls :meth:`handle` with each received message and the
    client-facing methods for transactions this process coordinates.  A
    `ctx` provides: now(), send(dst, msg), next_msg_id(), and the
    recording hooks record_op / read_complete / record_install / txn_done.
    """

    def __init__(self, pid: str, group: Group, groups: dict[int, Group],
                 vector_mode: str = "dv", partition: Partition | None = None):
        if vector_mode not in ("dv", "pdv"):
            raise ProtocolError(f"unknown vector mode {vector_mode!r}")
        if vector_mode == "pdv":
            if partition is None:
                raise ProtocolError("pdv mode needs a partition")
            for cid in {c for c, _ in partition.classes}:
                members = frozenset(partition.members(cid))
                if not any(members <= g.objects for g in groups.values()):
                    raise ProtocolError(
                        f"class {cid} spans groups; same-class versions must "
                        "share a replica group")
        self.pid = pid
        self.group = group
        self.groups = groups
        self.mode = vector_mode
        self.partition = partition
        self.amcast = Amcast(pid, group, groups)
        self.db: dict[str, list[_Version]] = {
            x: [_Version(INITIAL_TXN, None, Vector())] for x in sorted(group.objects)
        }
        self.class_seq: dict[str, int] = {}
        # Per local class, the vector stamped at each install; index 0 is
        # the initial state.
        self.class_log: dict[str, list[Vector]] = {}
        if vector_mode == "pdv":
            for x in group.objects:
                self.class_log.setdefault(partition.class_of(x), [Vector()])
        self.committed: dict[str, tuple[Vector, frozenset[str]]] = {}
        self.aborted: set[str] = set()
        self.decisions: dict[str, bool] = {}
        self.certify_queue: list[str] = []
        self.records: dict[str, TxnRecord] = {}
        self.voted: set[str] = set()
        self.votes: dict[str, dict[str, bool]] = {}
        self.vote_stamps: dict[str, dict[str, tuple[tuple[str, int], ...]]] = {}
        self.parked: list[tuple[str, str, str]] = []  # (requester, txn, obj)
        self.parked_reads: dict[tuple[str, str], tuple] = {}
        self.coordinating: dict[str, _CoordTxn] = {}

    # -- shared helpers ------------------------------------------------------

    def _key(self, obj: str) -> str:
        return self.partition.class_of(obj) if self.mode == "pdv" else obj

    def replicas_of(self, obj: str):
        for g in self.groups.values():
            if obj in g.objects:
                return g.members
        raise ProtocolError(f"object {obj} is not placed in any group")

    def _candidate_vector(self, rec: TxnRecord) -> Vector:
        base = Vector.max_of([v for _, _, v in rec.read_set])
        return base.bump(sorted({self._key(x) for x in rec.write_set}))

    # -- execution: server side ------------------------------------------------

    def handle(self, ctx, msg) -> None:
        if isinstance(msg, (Submit, Propose, Agree, Final)):
            self.amcast.handle(ctx, msg)
            self._drain_deliveries(ctx)
        elif isinstance(msg, ReadReq):
            self.handle_remote_read(ctx, msg, ctx.sender)
        elif isinstance(msg, ReadRep):
            self._read_fulfilled(ctx, msg.txn, msg.obj, msg.writer, msg.value,
                                 msg.vector)
        elif isinstance(msg, Vote):
            self._on_vote(ctx, msg)
        else:
            raise ProtocolError(f"unhandled message {msg!r}")

    def handle_remote_read(self, ctx, req: ReadReq, requester: str) -> None:
        """Serve a compatible version, or park until a commit provides one."""
        if req.obj not in self.db:
            raise ProtocolError(f"{self.pid} does not replicate {req.obj}")
        found = self._serve(req.obj, req.reads)
        if found is None:
            self.parked.append((requester, req.txn, req.obj))
            self.parked_reads[(req.txn, req.obj)] = req.reads
        else:
            self._reply(ctx, requester, req.txn, req.obj, found)

    def _reply(self, ctx, requester, txn, obj, ver: _Version) -> None:
        rep = ReadRep(txn, obj, ver.writer, ver.value, ver.vector)
        if requester == self.pid:
            self._read_fulfilled(ctx, txn, obj, ver.writer, ver.value, ver.vector)
        else:
            ctx.send(requester, rep)

    def _serve(self, obj: str, reads) -> _Version | None:
        if self.mode == "pdv":
            return self._serve_class_state(obj, reads)
        # Freshness: among the compatible versions, the newest one.
        for ver in reversed(self.db[obj]):
            if all(
                self._compatible(obj, ver, y, l, vl) for y, l, vl in reads
            ):
                return ver
        return None

    def _compatible(self, x: str, xv: _Version, y: str, l: str, vl: Vector) -> bool:
        if x == y:
            raise ProtocolError(f"transaction reads {x} twice")
        vx = xv.vector
        return vx[x] >= vl[x] and vl[y] >= vx[y]

    def _serve_class_state(self, obj: str, reads) -> _Version | None:
        """Answer a read from a whole-class snapshot.

        Per-class installs are totally ordered, so the store of a class is
        a sequence of states; state s carries the vector stamped at its
        install.  A read returns the object's value within the freshest
        state compatible with every earlier read, under the vector of that
        state rather than the writing transaction's own.

        Every earlier read already depends on its vector's entry for this
        class, which bounds the usable states from below; the state at
        that bound is itself always compatible once installed, so a read
        parks only until the store catches up with the snapshot, never
        longer.
        """
        ky = self._key(obj)
        log = self.class_log.get(ky, [Vector()])
        floor = 0
        for x, _, vx in reads:
            if x == obj:
                raise ProtocolError(f"transaction reads {obj} twice")
            floor = max(floor, vx[ky])
        if len(log) - 1 < floor:
            return None
        for s in range(len(log) - 1, floor - 1, -1):
            vs = log[s]
            ok = True
            for x, l, vx in reads:
                if self._key(x) == ky:
                    # Keep the earlier read's component: states between its
                    # and this one must not reinstall that object.
                    if self._component_at(x, s)[0] != l:
                        ok = False
                        break
                elif vs[self._key(x)] > vx[self._key(x)]:
                    ok = False
                    break
            if ok:
                writer, value = self._component_at(obj, s)
                return _Version(writer, value, vs)
        return None

    def _component_at(self, obj: str, seq: int) -> tuple[str, object]:
        """The object's writer and value within class state `seq`."""
        newest = (INITIAL_TXN, None)
        key = self._key(obj)
        for ver in self.db[obj]:
            if ver.writer != INITIAL_TXN and ver.vector[key] <= seq:
                newest = (ver.writer, ver.value)
        return newest

    def _unpark(self, ctx) -> None:
        still: list[tuple[str, str, str]] = []
        for requester, txn, obj in self.parked:
            reads = self.parked_reads[(txn, obj)]
            found = self._serve(obj, reads)
            if found is None:
                still.append((requester, txn, obj))
            else:
                self._reply(ctx, requester, txn, obj, found)
        self.parked = still

    # -- execution: coordinator side -------------------------------------------

    def begin(self, txn: str) -> None:
        if txn in self.coordinating:
            raise ProtocolError(f"transaction {txn} already begun")
        self.coordinating[txn] = _CoordTxn()

    def execute_read(self, ctx, txn: str, obj: str):
        """Start a read; local answers complete now, remote ones via reply."""
        st = self.coordinating[txn]
        if st.phase != EXECUTING:
            raise ProtocolError(f"transaction {txn} is {st.phase}")
        if obj in st.update_set:
            return st.update_set[obj]  # own buffered write, no messages
        if obj in st.read_set:
            raise ProtocolError(f"transaction {txn} already read {obj}")
        st.read_started[obj] = ctx.now()
        reads = tuple(
            (o, st.read_set[o][0], st.read_set[o][2]) for o in st.read_order
        )
        if obj in self.db:
            found = self._serve(obj, reads)
            if found is None:
                self.parked.append((self.pid, txn, obj))
                self.parked_reads[(txn, obj)] = reads
            else:
                self._read_fulfilled(ctx, txn, obj, found.writer, found.value,
                                     found.vector)
            return None
        for p in self.replicas_of(obj):
            ctx.send(p, ReadReq(txn, obj, reads))
        return None

    def _read_fulfilled(self, ctx, txn, obj, writer, value, vector) -> None:
        st = self.coordinating.get(txn)
        if st is None or obj in st.read_set or st.phase != EXECUTING:
            return  # duplicate reply from a slower replica
        if self.mode == "pdv":
            # Reads from one class are components of a single class
            # snapshot, and serving verified the earlier components
            # unchanged at the freshest state, so that state subsumes
            # them.  Aligning their vectors keeps the per-class bounds
            # mutually coherent; an earlier read left at a lower point
            # would contradict a later class's state that this
            # transaction is already committed to.
            k = self._key(obj)
            for o, (w, val, vec) in st.read_set.items():
                if self._key(o) == k and vector[k] > vec[k]:
                    st.read_set[o] = (w, val, vector)
        st.read_set[obj] = (writer, value, vector)
        st.read_order.append(obj)
        ctx.record_op(txn, "read", obj, writer, st.read_started[obj], ctx.now())
        ctx.read_complete(txn, obj, value)

    def execute_write(self, ctx, txn: str, obj: str, value) -> None:
        st = self.coordinating[txn]
        if st.phase != EXECUTING:
            raise ProtocolError(f"transaction {txn} is {st.phase}")
        if obj not in st.read_set:
            raise ProtocolError(f"transaction {txn} writes {obj} without reading it")
        if obj in st.update_set:
            raise ProtocolError(f"transaction {txn} writes {obj} twice")
        st.update_set[obj] = value
        ctx.record_op(txn, "write", obj, txn, ctx.now(), ctx.now())

    def submit(self, ctx, txn: str) -> None:
        """Terminate execution: read-only commits here and now, updates are
        multicast to their write groups."""
        st = self.coordinating[txn]
        st.advance(SUBMITTED)
        st.submit_tick = ctx.now()
        rec = TxnRecord(
            id=txn,
            coordinator=self.pid,
            read_set=tuple((o, st.read_set[o][0], st.read_set[o][2])
                           for o in st.read_order),
            write_set=tuple(sorted(st.update_set)),
            write_values=tuple(sorted(st.update_set.items())),
        )
        st.record = rec
        if not rec.write_set:
            self.decisions[txn] = True
            st.advance(COMMITTED)
            ctx.txn_done(txn, True, st.submit_tick)
            return
        dests = sorted({self._group_of(x).id for x in rec.write_set})
        self.amcast.mcast(ctx, ctx.next_msg_id(), txn, dests, rec)

    def _group_of(self, obj: str) -> Group:
        for g in self.groups.values():
            if obj in g.objects:
                return g
        raise ProtocolError(f"object {obj} is not placed in any group")

    # -- termination -------------------------------------------------------------

    def _drain_deliveries(self, ctx) -> None:
        while (d := self.amcast.deliver_next()) is not None:
            rec: TxnRecord = d.payload
            ctx.record_delivery(rec.id, d.ts)
            self.records[rec.id] = rec
            self.certify_queue.append(rec.id)
            self._advance_queue(ctx)

    def _advance_queue(self, ctx) -> None:
        """Vote on the first undecided transaction once all its queue
        predecessors are decided."""
        for txn in self.certify_queue:
            if txn in self.decisions:
                continue
            if txn not in self.voted:
                rec = self.records[txn]
                verdict = self.certify(rec)
                stamps = ()
                if verdict and self.mode == "pdv":
                    stamps = tuple(
                        (c, self.class_seq.get(c, 0) + 1, self.class_log[c][-1])
                        for c in sorted({self._key(x) for x in rec.write_set
                                         if x in self.db})
                    )
                self.voted.add(txn)
                self.votes.setdefault(txn, {})[self.pid] = verdict
                self.vote_stamps.setdefault(txn, {})[self.pid] = stamps
                targets = set()
                for x in rec.write_set:
                    targets.update(self.replicas_of(x))
                targets.add(rec.coordinator)
                targets.discard(self.pid)
                for p in sorted(targets):
                    ctx.send(p, Vote(txn, self.pid, verdict, stamps))
                self._try_decide(ctx, txn)
            return

    def certify(self, rec: TxnRecord) -> bool:
        """True iff the transaction depends on every committed transaction
        it write-conflicts with, judged from vectors."""
        cand = self._candidate_vector(rec)
        ws = set(rec.write_set)
        for tj in sorted(self.committed):
            vj, wsj = self.committed[tj]
            shared = ws & wsj
            if not shared:
                continue
            if any(cand[k] < n for k, n in vj.entries.items()):
                return False
            # Strict growth on every contended coordinate: an equal count
            # there means the writer chains are unrelated.
            if any(cand[self._key(x)] <= vj[self._key(x)] for x in shared):
                return False
        return True

    def _on_vote(self, ctx, v: Vote) -> None:
        self.votes.setdefault(v.txn, {})[v.voter] = v.ok
        self.vote_stamps.setdefault(v.txn, {})[v.voter] = v.stamps
        self._try_decide(ctx, v.txn)

    def vote_outcome(self, rec: TxnRecord) -> bool | None:
        return vote_outcome(rec, self.votes.get(rec.id, {}), self.replicas_of)

    def _try_decide(self, ctx, txn: str) -> None:
        if txn in self.decisions:
            return
        rec = self.records.get(txn)
        if rec is None:
            st = self.coordinating.get(txn)
            rec = st.record if st else None
        if rec is None:
            return  # vote outran the delivery; outcome recheck follows it
        outcome = self.vote_outcome(rec)
        if outcome is None:
            return
        self.decisions[txn] = outcome
        if txn in self.records:
            self._apply(ctx, rec, outcome, self._merge_stamps(txn))
        st = self.coordinating.get(txn)
        if st is not None:
            st.advance(COMMITTED if outcome else ABORTED)
            ctx.txn_done(txn, outcome, st.submit_tick)
        self._advance_queue(ctx)

    def _merge_stamps(self, txn: str) -> tuple[dict[str, int], list[Vector]]:
        points: dict[str, int] = {}
        tips: list[Vector] = []
        for stamps in self.vote_stamps.get(txn, {}).values():
            for c, n, tip in stamps:
                if points.setdefault(c, n) != n:
                    raise ProtocolError(
                        f"voters reserve different points for class {c}")
                tips.append(tip)
        return points, tips

    def _apply(self, ctx, rec: TxnRecord, outcome: bool,
               stamps: tuple[dict[str, int], list[Vector]] | None = None) -> None:
        """Install a committed write-set into the local store.

        `stamps` carries every written class's install point and prior
        state, assembled from the covering votes; a version's vector must
        hold true points for all classes the writer touched and join all
        earlier writes in those classes, wherever they are stored.
        """
        if not outcome:
            self.aborted.add(rec.id)
            return
        vec = self._candidate_vector(rec)
        local = [x for x in rec.write_set if x in self.db]
        if self.mode == "pdv":
            points, tips = stamps if stamps else ({}, [])
            points = dict(points)
            local_classes = sorted({self._key(x) for x in local})
            tips.extend(self.class_log[c][-1] for c in local_classes)
            for c in local_classes:
                self.class_seq[c] = self.class_seq.get(c, 0) + 1
                if points.setdefault(c, self.class_seq[c]) != self.class_seq[c]:
                    raise ProtocolError(
                        f"class {c} installs at {self.class_seq[c]}, "
                        f"not the reserved {points[c]}")
            if points:
                vec = Vector.max_of([vec, *tips])
                items = dict(vec.entries)
                items.update(points)
                vec = Vector(items)
                for c in local_classes:
                    self.class_log[c].append(vec)
        self.committed[rec.id] = (vec, frozenset(rec.write_set))
        values = dict(rec.write_values)
        for x in sorted(local):
            self.db[x].append(_Version(rec.id, values[x], vec))
            ctx.record_install(x, rec.id)
        self._unpark(ctx)
