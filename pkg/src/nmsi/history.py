"""Histories of transactional reads, writes, commits, and aborts.

A history is a partially ordered set of operations.  ``r1(x0)`` means
transaction 1 read version 0 of object x, ``w1(x1)`` means it wrote x
(versions are named after their writer), and ``c1`` / ``a1`` commit or abort
it.  Version 0 of every object belongs to an implicit initial transaction:
its commit precedes every operation and it never appears as an explicit op.

Two interchange formats exist.  The linear format is a dot-separated token
string (``r1(x0).w1(x1).c1``) and always denotes a total order.  The poset
format is JSON with an ``ops`` array and an ``edges`` array of index pairs;
program order within each transaction is implied by op order and added
automatically.  Both formats render canonically and round-trip.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import cached_property, lru_cache

READ = "read"
WRITE = "write"
COMMIT = "commit"
ABORT = "abort"

_KINDS = (READ, WRITE, COMMIT, ABORT)

INITIAL_TXN = "0"


class HistoryError(Exception):
    """Input text or op structure does not describe a valid history."""


@dataclass(frozen=True)
class Operation:
    kind: str
    txn: str
    obj: str | None = None
    read_version: str | None = None

    def __str__(self) -> str:
        if self.kind == READ:
            return f"r{self.txn}({self.obj}{self.read_version})"
        if self.kind == WRITE:
            return f"w{self.txn}({self.obj}{self.txn})"
        return ("c" if self.kind == COMMIT else "a") + self.txn


def transitive_closure(n: int, edges) -> tuple[int, ...] | None:
    """Reachability bitmasks for a DAG on nodes 0..n-1, or None on a cycle.

    Bit j of entry i is set iff i strictly precedes j.
    """
    succ: list[list[int]] = [[] for _ in range(n)]
    indeg = [0] * n
    for a, b in edges:
        succ[a].append(b)
        indeg[b] += 1
    stack = [i for i in range(n) if indeg[i] == 0]
    order: list[int] = []
    while stack:
        u = stack.pop()
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                stack.append(v)
    if len(order) < n:
        return None
    reach = [0] * n
    for u in reversed(order):
        r = 0
        for v in succ[u]:
            r |= reach[v] | (1 << v)
        reach[u] = r
    return tuple(reach)


def cycle_nodes(n: int, edges) -> tuple[int, ...]:
    """The nodes left unsorted by Kahn's algorithm (a cycle and its basin)."""
    indeg = [0] * n
    succ: list[list[int]] = [[] for _ in range(n)]
    for a, b in edges:
        succ[a].append(b)
        indeg[b] += 1
    stack = [i for i in range(n) if indeg[i] == 0]
    done = [False] * n
    while stack:
        u = stack.pop()
        done[u] = True
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                stack.append(v)
    return tuple(i for i in range(n) if not done[i])


@lru_cache(maxsize=64)
def _chain_edges(n: int) -> tuple[tuple[int, int], ...]:
    return tuple((i, i + 1) for i in range(n - 1))


@dataclass(frozen=True)
class History:
    """An indexed set of operations plus precedence edges over their indices.

    Constructing a History directly performs no checking; build through
    :meth:`from_ops`, :meth:`from_linear`, or the parse functions to get
    validation.  Instances are immutable; derived relations are memoized.
    """

    ops: tuple[Operation, ...] = ()
    edges: tuple[tuple[int, int], ...] = ()

    @classmethod
    def from_ops(cls, ops, edges=()) -> History:
        ops = tuple(ops)
        n = len(ops)
        for e in edges:
            if len(e) != 2 or not all(isinstance(v, int) for v in e):
                raise HistoryError(f"edge {e!r} is not a pair of indices")
            if not (0 <= e[0] < n and 0 <= e[1] < n):
                raise HistoryError(f"edge {tuple(e)!r} out of range")
        h = cls(ops, _with_program_order(ops, edges))
        _validate(h)
        return h

    @classmethod
    def from_linear(cls, ops) -> History:
        ops = tuple(ops)
        return cls.from_ops(ops, _chain_edges(len(ops)))

    # -- order ------------------------------------------------------------

    @cached_property
    def reach(self) -> tuple[int, ...]:
        n = len(self.ops)
        if self.edges == _chain_edges(n):
            full = (1 << n) - 1
            return tuple(full & ~((1 << (i + 1)) - 1) for i in range(n))
        r = transitive_closure(n, self.edges)
        if r is None:
            raise HistoryError("precedence contains a cycle")
        return r

    def precedes(self, i: int, j: int) -> bool:
        """Strict order: op i happens before op j."""
        return (self.reach[i] >> j) & 1 == 1

    @cached_property
    def is_linear(self) -> bool:
        return all(self.precedes(i, i + 1) for i in range(len(self.ops) - 1))

    # -- derived shape ----------------------------------------------------

    @cached_property
    def txns(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for op in self.ops:
            seen.setdefault(op.txn, None)
        return tuple(seen)

    @cached_property
    def objects(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for op in self.ops:
            if op.obj is not None:
                seen.setdefault(op.obj, None)
        return tuple(seen)

    @cached_property
    def txn_ops(self) -> dict[str, tuple[int, ...]]:
        out: dict[str, list[int]] = {}
        for i, op in enumerate(self.ops):
            out.setdefault(op.txn, []).append(i)
        return {t: tuple(v) for t, v in out.items()}

    @cached_property
    def terminator(self) -> dict[str, int]:
        return {
            op.txn: i
            for i, op in enumerate(self.ops)
            if op.kind in (COMMIT, ABORT)
        }

    @cached_property
    def commit_of(self) -> dict[str, int]:
        return {
            op.txn: i for i, op in enumerate(self.ops) if op.kind == COMMIT
        }

    @cached_property
    def committed(self) -> frozenset[str]:
        return frozenset(self.commit_of)

    @cached_property
    def aborted(self) -> frozenset[str]:
        return frozenset(
            op.txn for op in self.ops if op.kind == ABORT
        )

    def is_committed(self, txn: str) -> bool:
        """Committed in this history; the initial transaction always is."""
        return txn == INITIAL_TXN or txn in self.committed

    @cached_property
    def reads(self) -> tuple[tuple[int, str, str, str], ...]:
        """(index, txn, object, version read) for every read op."""
        return tuple(
            (i, op.txn, op.obj, op.read_version)
            for i, op in enumerate(self.ops)
            if op.kind == READ
        )

    @cached_property
    def reads_by_txn(self) -> dict[str, tuple[tuple[int, str, str], ...]]:
        """txn -> ((index, object, version), ...) in program order."""
        out: dict[str, list[tuple[int, str, str]]] = {}
        for i, t, x, j in self.reads:
            out.setdefault(t, []).append((i, x, j))
        return {t: tuple(v) for t, v in out.items()}

    @cached_property
    def writes(self) -> dict[str, tuple[int, ...]]:
        """object -> write op indices in storage order (not version order)."""
        out: dict[str, list[int]] = {}
        for i, op in enumerate(self.ops):
            if op.kind == WRITE:
                out.setdefault(op.obj, []).append(i)
        return {x: tuple(v) for x, v in out.items()}

    @cached_property
    def write_idx(self) -> dict[tuple[str, str], int]:
        """(txn, object) -> index of that write op."""
        return {
            (op.txn, op.obj): i
            for i, op in enumerate(self.ops)
            if op.kind == WRITE
        }

    @cached_property
    def read_set(self) -> dict[str, tuple[tuple[str, str], ...]]:
        return {
            t: tuple((x, j) for _, x, j in rs)
            for t, rs in self.reads_by_txn.items()
        }

    @cached_property
    def write_set(self) -> dict[str, frozenset[str]]:
        out: dict[str, set[str]] = {t: set() for t in self.txns}
        for (t, x) in self.write_idx:
            out[t].add(x)
        return {t: frozenset(v) for t, v in out.items()}

    # -- initial-transaction-aware comparisons ------------------------------

    def commit_precedes(self, k: str, l: str) -> bool:
        """c_k happens before c_l, honoring the implicit initial commit."""
        if k == l:
            return False
        if k == INITIAL_TXN:
            return l in self.committed
        if l == INITIAL_TXN:
            return False
        ck = self.commit_of.get(k)
        cl = self.commit_of.get(l)
        return ck is not None and cl is not None and self.precedes(ck, cl)

    def op_precedes_commit(self, i: int, l: str) -> bool:
        """Op at index i happens before c_l."""
        if l == INITIAL_TXN:
            return False
        cl = self.commit_of.get(l)
        return cl is not None and self.precedes(i, cl)

    def commit_precedes_op(self, j: str, i: int) -> bool:
        """c_j happens before the op at index i."""
        if j == INITIAL_TXN:
            return True
        cj = self.commit_of.get(j)
        return cj is not None and self.precedes(cj, i)

    # -- dependency ---------------------------------------------------------

    @cached_property
    def _dep_closure(self) -> dict[str, frozenset[str]]:
        adj: dict[str, set[str]] = {}
        for _, t, _, j in self.reads:
            adj.setdefault(t, set()).add(j)
        out: dict[str, frozenset[str]] = {}
        for t in self.txns:
            seen: set[str] = set()
            frontier = list(adj.get(t, ()))
            while frontier:
                u = frontier.pop()
                if u in seen:
                    continue
                seen.add(u)
                frontier.extend(adj.get(u, ()))
            out[t] = frozenset(seen)
        return out


def _with_program_order(ops, edges) -> tuple[tuple[int, int], ...]:
    eds = {(int(a), int(b)) for a, b in edges}
    last: dict[str, int] = {}
    for i, op in enumerate(ops):
        if op.txn in last:
            eds.add((last[op.txn], i))
        last[op.txn] = i
    return tuple(sorted(eds))


def _validate(h: History) -> None:
    terminated: set[str] = set()
    reads_seen: set[tuple[str, str]] = set()
    writes_seen: set[tuple[str, str]] = set()
    for i, op in enumerate(h.ops):
        if op.kind not in _KINDS:
            raise HistoryError(f"unknown operation kind {op.kind!r}")
        if not isinstance(op.txn, str) or not op.txn:
            raise HistoryError(f"op {i}: transaction id must be a non-empty string")
        if op.txn == INITIAL_TXN:
            raise HistoryError("transaction id 0 is reserved for the initial transaction")
        if op.kind in (READ, WRITE):
            if not isinstance(op.obj, str) or not op.obj:
                raise HistoryError(f"{op.kind} op {i}: object must be a non-empty string")
        else:
            if op.obj is not None or op.read_version is not None:
                raise HistoryError(f"terminator op {i} carries object fields")
        if op.kind == READ:
            if not isinstance(op.read_version, str) or not op.read_version:
                raise HistoryError(f"read op {i}: missing version")
            if op.read_version == op.txn:
                raise HistoryError(f"transaction {op.txn} reads its own version of {op.obj}")
        elif op.read_version is not None:
            raise HistoryError(f"{op.kind} op {i} carries a read version")

        t = op.txn
        if t in terminated:
            if op.kind in (COMMIT, ABORT):
                raise HistoryError(f"duplicate terminator for transaction {t}")
            raise HistoryError(f"operation after terminator of transaction {t}")
        if op.kind == READ:
            if (t, op.obj) in reads_seen:
                raise HistoryError(f"transaction {t} reads {op.obj} twice")
            reads_seen.add((t, op.obj))
        elif op.kind == WRITE:
            if (t, op.obj) in writes_seen:
                raise HistoryError(f"transaction {t} writes {op.obj} twice")
            if (t, op.obj) not in reads_seen:
                raise HistoryError(f"transaction {t} writes {op.obj} without a prior read")
            writes_seen.add((t, op.obj))
        else:
            terminated.add(t)

    h.reach  # raises on a precedence cycle

    for r, t, x, j in h.reads:
        if j == INITIAL_TXN:
            continue
        w = h.write_idx.get((j, x))
        if w is None:
            raise HistoryError(f"read of a version that is never written: {h.ops[r]}")
        if not h.precedes(w, r):
            raise HistoryError(f"write of {x}{j} does not precede {h.ops[r]}")

    for x, idxs in h.writes.items():
        for a in range(len(idxs)):
            for b in range(a + 1, len(idxs)):
                i, j = idxs[a], idxs[b]
                if not (h.precedes(i, j) or h.precedes(j, i)):
                    raise HistoryError(
                        f"writes on {x} are unordered: {h.ops[i]} and {h.ops[j]}"
                    )


# -- linear text format ----------------------------------------------------

_READ_RE = re.compile(r"r([A-Za-z0-9]+)\(([A-Za-z]+?)([0-9]+)\)")
_WRITE_RE = re.compile(r"w([A-Za-z0-9]+)\(([A-Za-z0-9]+)\)")
_TERM_RE = re.compile(r"([ca])([A-Za-z0-9]+)")


def _parse_token(tok: str) -> Operation:
    m = _READ_RE.fullmatch(tok)
    if m:
        return Operation(READ, m.group(1), m.group(2), m.group(3))
    m = _WRITE_RE.fullmatch(tok)
    if m:
        txn, body = m.group(1), m.group(2)
        if body != txn and body.endswith(txn):
            obj = body[: -len(txn)]
        elif body.isalpha():
            obj = body
        else:
            raise HistoryError(f"write version must name the writer: {tok!r}")
        if not obj.isalpha():
            raise HistoryError(f"malformed object name in {tok!r}")
        return Operation(WRITE, txn, obj)
    m = _TERM_RE.fullmatch(tok)
    if m:
        kind = COMMIT if m.group(1) == "c" else ABORT
        return Operation(kind, m.group(2))
    raise HistoryError(f"malformed token {tok!r}")


def parse_text(text: str) -> History:
    """Parse the dot-separated linear format into a totally ordered History."""
    text = text.strip()
    if not text:
        return History((), ())
    ops = [_parse_token(tok.strip()) for tok in text.split(".")]
    return History.from_linear(ops)


def render_text(h: History) -> str:
    """Render a totally ordered History to the linear format."""
    if not h.is_linear:
        raise HistoryError("history is not totally ordered; use render_json")
    for op in h.ops:
        if not op.txn.isalnum():
            raise HistoryError(f"transaction id {op.txn!r} has no linear-format token")
        if op.obj is not None and not op.obj.isalpha():
            raise HistoryError(f"object {op.obj!r} has no linear-format token")
        if op.kind == READ and not op.read_version.isdigit():
            raise HistoryError(
                f"version {op.read_version!r} has no linear-format token; use render_json"
            )
    return ".".join(str(op) for op in h.ops)


# -- poset JSON format -----------------------------------------------------

def parse_json(text: str) -> History:
    """Parse the JSON poset format: {"ops": [...], "edges": [[i, j], ...]}."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise HistoryError(f"not valid JSON: {e}") from None
    if not isinstance(doc, dict) or set(doc) != {"ops", "edges"}:
        raise HistoryError('document must have exactly the keys "ops" and "edges"')
    ops = []
    for i, entry in enumerate(doc["ops"]):
        if not isinstance(entry, dict):
            raise HistoryError(f"op {i} is not an object")
        allowed = {"kind", "txn", "obj", "readVersion"}
        extra = set(entry) - allowed
        if extra:
            raise HistoryError(f"op {i} has unexpected fields {sorted(extra)}")
        ops.append(
            Operation(
                entry.get("kind"),
                entry.get("txn"),
                entry.get("obj"),
                entry.get("readVersion"),
            )
        )
    edges = doc["edges"]
    if not isinstance(edges, list):
        raise HistoryError('"edges" must be a list of index pairs')
    return History.from_ops(ops, edges)


def render_json(h: History) -> str:
    """Render any History to the canonical JSON poset format."""
    ops = []
    for op in h.ops:
        d: dict[str, str] = {"kind": op.kind, "txn": op.txn}
        if op.obj is not None:
            d["obj"] = op.obj
        if op.read_version is not None:
            d["readVersion"] = op.read_version
        ops.append(d)
    doc = {"ops": ops, "edges": [list(e) for e in h.edges]}
    return json.dumps(doc, indent=2) + "\n"


def parse_history(text: str) -> History:
    """Parse either format, sniffing JSON by its leading brace."""
    if text.lstrip().startswith("{"):
        return parse_json(text)
    return parse_text(text)


def render_history(h: History) -> str:
    """Render to the linear format when possible, else to JSON."""
    if h.is_linear:
        try:
            return render_text(h)
        except HistoryError:
            pass
    return render_json(h)


# -- derived relations ------------------------------------------------------

def version_order(h: History) -> dict[str, tuple[str, ...]]:
    """Per-object version lists: writers ordered by their writes, 0 first."""
    out: dict[str, tuple[str, ...]] = {}
    for x in h.objects:
        idxs = list(h.writes.get(x, ()))
        mask = 0
        for i in idxs:
            mask |= 1 << i
        idxs.sort(key=lambda i: (h.reach[i] & mask).bit_count(), reverse=True)
        for a, b in zip(idxs, idxs[1:]):
            if not h.precedes(a, b):
                raise HistoryError(
                    f"writes on {x} are unordered: {h.ops[a]} and {h.ops[b]}"
                )
        out[x] = (INITIAL_TXN,) + tuple(h.ops[i].txn for i in idxs)
    return out


def depends(h: History, ti: str, tj: str) -> bool:
    """Transitive reads-from: ti read a version of tj, directly or through
    intermediaries.  Not reflexive."""
    return tj in h._dep_closure.get(ti, frozenset())


def snapshot_precedes(h: History, ti: str, tj: str) -> bool:
    """The snapshot read by ti is older than the one read by tj.

    Holds iff some reads r_i(x_k) and r_j(y_l) exist with either
    (i) r_i(x_k) before c_l, or (ii) T_l writes x and c_k before c_l.
    Callers normally ask about distinct transactions; the formula is
    well-defined for ti == tj and the monotonicity criterion evaluates it
    on such pairs as well.
    """
    ri = h.reads_by_txn.get(ti, ())
    rj = h.reads_by_txn.get(tj, ())
    for i_idx, x, k in ri:
        for _j_idx, _y, l in rj:
            if h.op_precedes_commit(i_idx, l):
                return True
            if (l, x) in h.write_idx and h.commit_precedes(k, l):
                return True
    return False
