"""Genuine atomic multicast over the simulated network.

Timestamp agreement in the style of Skeen's algorithm, run at group
granularity: the first member of each group acts as its proposer.  A
message addressed to a set of groups travels a fixed four-stage pipeline,
one network hop per stage, so a contention-free multicast delivers in
exactly 4 hops at every destination member:

  1. the sender hands the message to each destination group's leader;
  2. leaders exchange timestamp proposals (logical clock, group id);
  3. each leader releases the agreed maximum to its own members, holding
     a message back while an earlier-proposed one is still unagreed so
     that releases leave the leader in timestamp order;
  4. members exchange acknowledgements and deliver once a majority of
     their group has acknowledged.

Only members of destination groups (plus the sender) ever handle a
message, which keeps the primitive genuine.  Deliveries at any two
processes agree on the relative order of common messages because both
orders are restrictions of one global (clock, group, sequence) order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field


class AmcastError(Exception):
    pass


@dataclass(frozen=True)
class Group:
    """A set of processes replicating the same set of objects."""

    id: int
    members: tuple[str, ...]
    objects: frozenset[str]

    def __post_init__(self):
        if not self.members:
            raise AmcastError(f"group {self.id} has no members")
        if len(set(self.members)) != len(self.members):
            raise AmcastError(f"group {self.id} repeats a member")
        object.__setattr__(self, "objects", frozenset(self.objects))

    @property
    def leader(self) -> str:
        return self.members[0]


def validate_groups(groups) -> dict[int, Group]:
    by_id: dict[int, Group] = {}
    seen: set[str] = set()
    for g in groups:
        if g.id in by_id:
            raise AmcastError(f"duplicate group id {g.id}")
        overlap = seen & set(g.members)
        if overlap:
            raise AmcastError(f"groups intersect on {sorted(overlap)}")
        seen |= set(g.members)
        by_id[g.id] = g
    return by_id


# Wire messages.  Every message names the transaction it travels for so
# the simulator can attribute steps.

@dataclass(frozen=True)
class Submit:
    msg_id: int
    txn: str
    dests: tuple[int, ...]
    payload: object


@dataclass(frozen=True)
class Propose:
    msg_id: int
    txn: str
    ts: tuple[int, int]


@dataclass(frozen=True)
class Agree:
    msg_id: int
    txn: str
    ts: tuple[int, int]
    dests: tuple[int, ...]
    payload: object


@dataclass(frozen=True)
class Final:
    msg_id: int
    txn: str
    ts: tuple[int, int]


@dataclass
class _Pending:
    txn: str
    dests: tuple[int, ...]
    payload: object
    my_prop: tuple[int, int]
    proposals: dict[int, tuple[int, int]] = field(default_factory=dict)
    agreed: tuple[int, int] | None = None


@dataclass(frozen=True)
class Delivery:
    msg_id: int
    txn: str
    ts: tuple[int, int]
    dests: tuple[int, ...]
    payload: object


class Amcast:
    """Per-process multicast endpoint, driven entirely by the event loop."""

    def __init__(self, pid: str, group: Group, groups: dict[int, Group]):
        self.pid = pid
        self.group = group
        self.groups = groups
        self.clock = 0
        self._pending: dict[int, _Pending] = {}
        self._released: set[int] = set()
        self._fifo: deque = deque()  # (msg_id, Agree) in leader release order
        self._acks: dict[int, set[str]] = {}
        self._out: deque[Delivery] = deque()
        self._delivered: set[int] = set()
        self._last_ts: tuple[int, int] | None = None

    @property
    def is_leader(self) -> bool:
        return self.pid == self.group.leader

    # -- sender side -------------------------------------------------------

    def mcast(self, ctx, msg_id: int, txn: str, dests, payload) -> None:
        dests = tuple(sorted(dests))
        if not dests:
            raise AmcastError("empty destination set")
        for gid in dests:
            if gid not in self.groups:
                raise AmcastError(f"unknown group id {gid}")
        for gid in dests:
            ctx.send(self.groups[gid].leader, Submit(msg_id, txn, dests, payload))

    # -- event handlers ------------------------------------------------------

    def handle(self, ctx, msg) -> None:
        if isinstance(msg, Submit):
            self._on_submit(ctx, msg)
        elif isinstance(msg, Propose):
            self._on_propose(ctx, msg)
        elif isinstance(msg, Agree):
            self._on_agree(ctx, msg)
        elif isinstance(msg, Final):
            self._on_final(ctx, msg)
        else:
            raise AmcastError(f"not a multicast message: {msg!r}")

    def _on_submit(self, ctx, m: Submit) -> None:
        if not self.is_leader:
            raise AmcastError(f"{self.pid} is not a group leader")
        self.clock += 1
        prop = (self.clock, self.group.id)
        self._pending[m.msg_id] = _Pending(m.txn, m.dests, m.payload, prop)
        # The proposal to ourselves travels the network like any other, so
        # a single-group message still pays the full agreement stage.
        for gid in m.dests:
            ctx.send(self.groups[gid].leader, Propose(m.msg_id, m.txn, prop))

    def _on_propose(self, ctx, m: Propose) -> None:
        self.clock = max(self.clock, m.ts[0])
        p = self._pending[m.msg_id]
        p.proposals[m.ts[1]] = m.ts
        if len(p.proposals) == len(p.dests):
            p.agreed = max(p.proposals.values())
            self._try_release(ctx)

    def _try_release(self, ctx) -> None:
        # Release agreed messages in timestamp order.  An unagreed message
        # whose proposal undercuts the smallest agreed timestamp blocks the
        # release: its final timestamp may still land below it.
        while self._pending:
            mid = min(
                self._pending,
                key=lambda i: self._pending[i].agreed or self._pending[i].my_prop,
            )
            p = self._pending[mid]
            if p.agreed is None:
                return
            del self._pending[mid]
            self._released.add(mid)
            for member in self.group.members:
                ctx.send(member, Agree(mid, p.txn, p.agreed, p.dests, p.payload))

    def _on_agree(self, ctx, m: Agree) -> None:
        self._fifo.append(m)
        self._acks.setdefault(m.msg_id, set())
        for member in self.group.members:
            ctx.send(member, Final(m.msg_id, m.txn, m.ts))
        self._try_deliver()

    def _on_final(self, ctx, m: Final) -> None:
        self._acks.setdefault(m.msg_id, set()).add(ctx.sender)
        self._try_deliver()

    def _try_deliver(self) -> None:
        quorum = len(self.group.members) // 2 + 1
        while self._fifo and len(self._acks.get(self._fifo[0].msg_id, ())) >= quorum:
            m = self._fifo.popleft()
            if m.msg_id in self._delivered:
                raise AmcastError(f"message {m.msg_id} delivered twice")
            if self._last_ts is not None and not (m.ts > self._last_ts):
                raise AmcastError("delivery out of timestamp order")
            self._last_ts = m.ts
            self._delivered.add(m.msg_id)
            self._out.append(Delivery(m.msg_id, m.txn, m.ts, m.dests, m.payload))

    # -- consumer side -------------------------------------------------------

    def deliver_next(self) -> Delivery | None:
        """Next message in this process's agreed delivery order, if any."""
        return self._out.popleft() if self._out else None
