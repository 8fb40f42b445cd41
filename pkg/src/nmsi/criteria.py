"""Consistency criteria over histories, plus an independent SI oracle.

The checker side decides membership in each criterion directly from the
quantified definitions: ACA (reads only committed versions), CONS (each
transaction observes a consistent snapshot), SCONSa/SCONSb (snapshots are
strictly consistent), MON (the snapshot-precedence relation is acyclic),
WCF (independent committed transactions never write the same object), and
the conjunctions SCONS, NMSI = ACA ∧ CONS ∧ WCF, and
SI_DECOMP = ACA ∧ SCONS ∧ MON ∧ WCF.

The oracle side decides snapshot isolation without any of those criteria:
it extends the history with one snapshot point per transaction, adds the
constructive edges (S1: the point precedes the transaction's ops; S2a: the
read versions' commits precede the point; S2b: the point precedes commits
of conflicting writers not already ordered before the read version), and
then verifies acyclicity and the snapshot rules D1.1-D1.3 and D2 on the
result.  The two routes share no code beyond the history module, so they
can machine-check the decomposition SI = ACA ∧ SCONS ∧ MON ∧ WCF against
each other over every small history.

MON deliberately evaluates snapshot precedence for a transaction against
itself as well: a self-loop is a one-edge cycle.  Dropping self-pairs
breaks the decomposition already at 7 ops (see the regression test with a
pending reader of a fresh and a stale version).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .history import (
    INITIAL_TXN,
    ABORT,
    COMMIT,
    READ,
    WRITE,
    History,
    Operation,
    cycle_nodes,
    depends,
    snapshot_precedes,
    transitive_closure,
    version_order,
)

ACA = "ACA"
CONS = "CONS"
SCONSA = "SCONSA"
SCONSB = "SCONSB"
SCONS = "SCONS"
MON = "MON"
WCF = "WCF"
NMSI = "NMSI"
SI_DECOMP = "SI_DECOMP"
SI_ORACLE = "SI_ORACLE"

CRITERIA = (ACA, CONS, SCONSA, SCONSB, SCONS, MON, WCF, NMSI, SI_DECOMP, SI_ORACLE)


@dataclass(frozen=True)
class Verdict:
    """Outcome of one criterion on one history.

    ``witness`` is empty iff the criterion holds; otherwise it carries the
    first violation found in a deterministic scan order.  Its layout depends
    on the criterion: op indices for ACA (read) and SCONSA (the two reads),
    (read index, transaction) for CONS, transaction ids for SCONSB
    (i, j, k, l), a transaction cycle for MON, (ti, tj, object) for WCF,
    and for conjunctions the failing tag followed by its witness.
    """

    criterion: str
    holds: bool
    witness: tuple = ()

    def to_json(self) -> str:
        return json.dumps(
            {
                "criterion": self.criterion,
                "holds": self.holds,
                "witness": list(self.witness),
            }
        )


def _check_aca(h: History) -> Verdict:
    for r, _t, _x, j in h.reads:
        if not h.commit_precedes_op(j, r):
            return Verdict(ACA, False, (r,))
    return Verdict(ACA, True)


def _version_positions(h: History) -> dict[str, dict[str, int]]:
    return {x: {t: p for p, t in enumerate(vs)} for x, vs in version_order(h).items()}


def _snapshot_witness(h: History, ti: str, pos) -> tuple | None:
    for r, x, j in h.reads_by_txn.get(ti, ()):
        pj = pos[x][j]
        for w in h.writes.get(x, ()):
            k = h.ops[w].txn
            if k != j and pos[x][k] > pj and depends(h, ti, k):
                return (r, k)
    return None


def consistent_snapshot(h: History, ti: str) -> bool:
    """True iff no dependency of ti wrote a version newer than one ti read."""
    return _snapshot_witness(h, ti, _version_positions(h)) is None


def _check_cons(h: History) -> Verdict:
    pos = _version_positions(h)
    for t in h.txns:
        w = _snapshot_witness(h, t, pos)
        if w is not None:
            return Verdict(CONS, False, w)
    return Verdict(CONS, True)


def _check_sconsa(h: History) -> Verdict:
    for i in h.txns:
        if i not in h.committed:
            continue
        reads = h.reads_by_txn.get(i, ())
        for r1, _x, j in reads:
            if not h.is_committed(j):
                continue
            for r2, _y, l in reads:
                if not h.is_committed(l):
                    continue
                if h.op_precedes_commit(r1, l):
                    return Verdict(SCONSA, False, (r1, r2))
    return Verdict(SCONSA, True)


def _check_sconsb(h: History) -> Verdict:
    for i in h.txns:
        if i not in h.committed:
            continue
        reads = h.reads_by_txn.get(i, ())
        for _r1, x, j in reads:
            if not h.is_committed(j):
                continue
            for _r2, _y, l in reads:
                if not h.is_committed(l):
                    continue
                for w in h.writes.get(x, ()):
                    k = h.ops[w].txn
                    if k == j or k not in h.committed:
                        continue
                    if h.commit_precedes(k, l) and not h.commit_precedes(k, j):
                        return Verdict(SCONSB, False, (i, j, k, l))
    return Verdict(SCONSB, True)


def _check_mon(h: History) -> Verdict:
    succ = {
        a: [b for b in h.txns if snapshot_precedes(h, a, b)] for a in h.txns
    }
    cyc = _digraph_cycle(h.txns, succ)
    if cyc is not None:
        return Verdict(MON, False, tuple(cyc))
    return Verdict(MON, True)


def _digraph_cycle(nodes, succ) -> list | None:
    color = {t: 0 for t in nodes}
    path: list = []

    def dfs(u):
        color[u] = 1
        path.append(u)
        for v in succ.get(u, ()):
            if color[v] == 1:
                return path[path.index(v):] + [v]
            if color[v] == 0:
                found = dfs(v)
                if found is not None:
                    return found
        color[u] = 2
        path.pop()
        return None

    for t in nodes:
        if color[t] == 0:
            found = dfs(t)
            if found is not None:
                return found
    return None


def _check_wcf(h: History) -> Verdict:
    committed = [t for t in h.txns if t in h.committed]
    for ai in range(len(committed)):
        for bi in range(ai + 1, len(committed)):
            a, b = committed[ai], committed[bi]
            if depends(h, a, b) or depends(h, b, a):
                continue
            common = h.write_set[a] & h.write_set[b]
            if common:
                x = next(o for o in h.objects if o in common)
                return Verdict(WCF, False, (a, b, x))
    return Verdict(WCF, True)


def _conjunction(tag, parts):
    def run(h: History) -> Verdict:
        for part in parts:
            v = check(h, part)
            if not v.holds:
                return Verdict(tag, False, (part,) + v.witness)
        return Verdict(tag, True)

    return run


_CHECKS = {
    ACA: _check_aca,
    CONS: _check_cons,
    SCONSA: _check_sconsa,
    SCONSB: _check_sconsb,
    MON: _check_mon,
    WCF: _check_wcf,
}
_CHECKS[SCONS] = _conjunction(SCONS, (SCONSA, SCONSB))
_CHECKS[NMSI] = _conjunction(NMSI, (ACA, CONS, WCF))
_CHECKS[SI_DECOMP] = _conjunction(SI_DECOMP, (ACA, SCONS, MON, WCF))
_CHECKS[SI_ORACLE] = lambda h: si_oracle(h)


def check(h: History, criterion: str) -> Verdict:
    """Decide one criterion on a history."""
    try:
        fn = _CHECKS[criterion]
    except KeyError:
        raise ValueError(f"unknown criterion {criterion!r}") from None
    return fn(h)


# -- the independent oracle --------------------------------------------------

@dataclass(frozen=True, eq=True)
class ExtendedHistory:
    """A history extended with one snapshot point per transaction.

    Nodes 0..len(ops)-1 are the base ops; node ``snapshot_points[t]`` is the
    snapshot point of transaction t.  ``extra_edges`` holds the constructive
    edges (S1, S2a, S2b) over this combined node space.
    """

    base: History
    snapshot_points: dict[str, int]
    extra_edges: tuple[tuple[int, int], ...]


def si_extension(h: History) -> ExtendedHistory:
    n = len(h.ops)
    s = {t: n + i for i, t in enumerate(h.txns)}
    extra: set[tuple[int, int]] = set()
    for t, idxs in h.txn_ops.items():
        extra.add((s[t], idxs[0]))  # program order carries it to the rest
    for _r, t, x, j in h.reads:
        if j != INITIAL_TXN:
            cj = h.commit_of.get(j)
            if cj is not None:
                extra.add((cj, s[t]))
        for w in h.writes.get(x, ()):
            k = h.ops[w].txn
            if k == j or k not in h.committed:
                continue
            if not h.commit_precedes(k, j):
                extra.add((s[t], h.commit_of[k]))
    return ExtendedHistory(h, s, tuple(sorted(extra)))


def si_oracle(h: History) -> Verdict:
    """Decide SI by constructing snapshot points and verifying D1/D2.

    Independent of the criterion checkers: the only shared machinery is the
    history representation itself.
    """
    ext = si_extension(h)
    n = len(h.ops)
    node_count = n + len(h.txns)
    edges = h.edges + ext.extra_edges
    reach = transitive_closure(node_count, edges)
    s = ext.snapshot_points
    if reach is None:
        stuck = cycle_nodes(node_count, edges)
        labels = tuple(
            str(h.ops[v]) if v < n else "s" + h.txns[v - n] for v in stuck
        )
        return Verdict(SI_ORACLE, False, ("cycle",) + labels)

    def before(a: int, b: int) -> bool:
        return (reach[a] >> b) & 1 == 1

    for r, t, x, j in h.reads:
        if j != INITIAL_TXN:
            cj = h.commit_of.get(j)
            if cj is None:
                return Verdict(SI_ORACLE, False, ("D1.1", r))
            if not before(cj, s[t]):
                return Verdict(SI_ORACLE, False, ("D1.2", r))
        for w in h.writes.get(x, ()):
            k = h.ops[w].txn
            if k == j or k not in h.committed:
                continue
            ck = h.commit_of[k]
            ordered_before_version = (
                j != INITIAL_TXN
                and j in h.commit_of
                and before(ck, h.commit_of[j])
            )
            if not ordered_before_version and not before(s[t], ck):
                return Verdict(SI_ORACLE, False, ("D1.3", r, k))
    committed = [t for t in h.txns if t in h.committed]
    for ai in range(len(committed)):
        for bi in range(ai + 1, len(committed)):
            a, b = committed[ai], committed[bi]
            if not h.write_set[a] & h.write_set[b]:
                continue
            if not (before(h.commit_of[a], s[b]) or before(h.commit_of[b], s[a])):
                return Verdict(SI_ORACLE, False, ("D2", a, b))
    return Verdict(SI_ORACLE, True)


# -- generators ---------------------------------------------------------------

_MAX_TXNS = 3
_MAX_OBJECTS = 2
_MAX_OPS = 8

_TXN_NAMES = ("1", "2", "3")
_OBJECT_NAMES = ("x", "y")


def enumerate_small_histories(max_txns: int, max_objects: int, max_ops: int):
    """Every valid complete totally-ordered history within the bounds.

    Transactions are named 1..n in order of first appearance and objects
    x, y likewise, which quotients away pure renaming.  Every transaction
    performs at least one read (transactions with no operations are
    invisible to every criterion).  The stream is deterministic.
    """
    if max_txns > _MAX_TXNS or max_objects > _MAX_OBJECTS or max_ops > _MAX_OPS:
        raise ValueError(
            f"enumeration budget exceeded: at most {_MAX_TXNS} transactions, "
            f"{_MAX_OBJECTS} objects, {_MAX_OPS} ops"
        )
    if min(max_txns, max_objects, max_ops) < 0:
        raise ValueError("bounds must be non-negative")
    return _enumerate(max_txns, max_objects, max_ops)


def _skeletons(objects: tuple[str, ...], max_len: int) -> list[tuple]:
    """All per-transaction programs: accesses plus a terminator, length >= 2."""
    out: list[tuple] = []

    def extend(seq: tuple, reads: frozenset, writes: frozenset) -> None:
        if seq and len(seq) + 1 <= max_len:
            out.append(seq + (("c",),))
            out.append(seq + (("a",),))
        if len(seq) + 2 > max_len:
            return
        for x in objects:
            if x not in reads:
                extend(seq + (("r", x),), reads | {x}, writes)
        for x in objects:
            if x in reads and x not in writes:
                extend(seq + (("w", x),), reads, writes | {x})

    extend((), frozenset(), frozenset())
    return out


def _merges(programs: tuple[tuple, ...]):
    """Interleavings preserving program order, transactions starting in order."""
    k = len(programs)
    lens = tuple(len(p) for p in programs)

    def rec(pos: tuple[int, ...], acc: tuple):
        if all(p == l for p, l in zip(pos, lens)):
            yield acc
            return
        for t in range(k):
            if pos[t] == lens[t]:
                continue
            if pos[t] == 0 and any(pos[u] == 0 for u in range(t)):
                continue  # transaction t may not start before t-1
            nxt = pos[:t] + (pos[t] + 1,) + pos[t + 1:]
            yield from rec(nxt, acc + ((t, programs[t][pos[t]]),))

    yield from rec((0,) * k, ())


def _assign_versions(seq: tuple):
    """All choices of read versions among previously written ones."""

    def rec(i: int, ops: tuple[Operation, ...], written: tuple):
        if i == len(seq):
            yield ops
            return
        t_idx, item = seq[i]
        t = _TXN_NAMES[t_idx]
        if item[0] == "r":
            x = item[1]
            for v in (INITIAL_TXN,) + tuple(
                w for (wx, w) in written if wx == x and w != t
            ):
                yield from rec(i + 1, ops + (Operation(READ, t, x, v),), written)
        elif item[0] == "w":
            x = item[1]
            yield from rec(
                i + 1, ops + (Operation(WRITE, t, x),), written + ((x, t),)
            )
        else:
            kind = COMMIT if item[0] == "c" else ABORT
            yield from rec(i + 1, ops + (Operation(kind, t),), written)

    yield from rec(0, (), ())


def _object_order_canonical(seq: tuple) -> bool:
    seen: list[str] = []
    for _t, item in seq:
        if len(item) == 2 and item[1] not in seen:
            seen.append(item[1])
    return seen == list(_OBJECT_NAMES[: len(seen)])


def _enumerate(max_txns: int, max_objects: int, max_ops: int):
    from .history import _chain_edges

    yield History((), ())
    objects = _OBJECT_NAMES[:max_objects]
    if not objects or max_ops < 2 or max_txns < 1:
        return
    shapes = _skeletons(objects, min(max_ops, 2 * len(objects) + 1))

    def combos(count: int, budget: int, acc: tuple):
        if count == 0:
            yield acc
            return
        for sh in shapes:
            if len(sh) <= budget - 2 * (count - 1):
                yield from combos(count - 1, budget - len(sh), acc + (sh,))

    for t_count in range(1, max_txns + 1):
        if 2 * t_count > max_ops:
            break
        for programs in combos(t_count, max_ops, ()):
            for seq in _merges(programs):
                if not _object_order_canonical(seq):
                    continue
                for ops in _assign_versions(seq):
                    # Construction guarantees validity; skip re-checking.
                    yield History(ops, _chain_edges(len(ops)))


def random_history(rng, max_txns: int = 3, max_objects: int = 3,
                   max_ops: int = 12) -> History:
    """One random valid linear history; transactions may be left pending."""
    from .history import _chain_edges

    objects = ("x", "y", "z", "u", "v")[:max_objects]
    n_txns = rng.randint(0, max_txns)
    programs: list[list] = []
    for _ in range(n_txns):
        reads = rng.sample(objects, rng.randint(1, len(objects)))
        writes = [x for x in reads if rng.random() < 0.4]
        prog: list = [("r", x) for x in reads]
        for x in writes:
            at = rng.randrange(prog.index(("r", x)) + 1, len(prog) + 1)
            prog.insert(at, ("w", x))
        roll = rng.random()
        if roll < 0.75:
            prog.append(("c",))
        elif roll < 0.9:
            prog.append(("a",))
        programs.append(prog)

    ops: list[Operation] = []
    written: list[tuple[str, str]] = []
    pending = [list(p) for p in programs]
    while any(pending):
        t_idx = rng.choice([i for i, p in enumerate(pending) if p])
        t = str(t_idx + 1)
        item = pending[t_idx].pop(0)
        if item[0] == "r":
            x = item[1]
            candidates = [INITIAL_TXN] + [w for (wx, w) in written
                                          if wx == x and w != t]
            ops.append(Operation(READ, t, x, rng.choice(candidates)))
        elif item[0] == "w":
            ops.append(Operation(WRITE, t, item[1]))
            written.append((item[1], t))
        else:
            kind = COMMIT if item[0] == "c" else ABORT
            ops.append(Operation(kind, t))
        if len(ops) >= max_ops:
            break
    return History(tuple(ops), _chain_edges(len(ops)))
