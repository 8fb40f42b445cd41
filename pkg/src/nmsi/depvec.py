"""Dependence vectors: per-version counters that encode read/write ancestry.

A version's vector counts, per object, how many writes precede it through
the chain of reads that produced it.  Two versions read by one transaction
form a consistent pair exactly when their vectors agree on the two objects
involved; this is what the replication protocol evaluates online instead of
materializing dependency graphs.

The partitioned variant coarsens vectors from objects to classes of a
partition whose intra-class writes are totally ordered, trading snapshot
freshness for vector size.  Both annotators work on any history whose
vector definitions are acyclic; they raise CyclicDependenceError otherwise.
"""

from __future__ import annotations

import heapq
import itertools
import warnings
from collections import defaultdict
from dataclasses import dataclass

from .criteria import ACA, WCF, Verdict, check
from .history import (
    INITIAL_TXN,
    READ,
    WRITE,
    History,
    HistoryError,
    Operation,
    version_order,
)


class CyclicDependenceError(HistoryError):
    """The vector definition chases its own tail on this history."""


class Vector:
    """Sparse map from component name to a natural counter; absent means 0."""

    __slots__ = ("_items", "_map")

    def __init__(self, entries=()):
        if isinstance(entries, dict):
            entries = entries.items()
        items = []
        for key, count in entries:
            count = int(count)
            if count < 0:
                raise ValueError("vector counters are natural numbers")
            if count:
                items.append((key, count))
        self._items = tuple(sorted(items))
        self._map = dict(self._items)

    @property
    def entries(self) -> dict:
        return dict(self._items)

    def __getitem__(self, key: str) -> int:
        return self._map.get(key, 0)

    def __eq__(self, other):
        return isinstance(other, Vector) and self._items == other._items

    def __hash__(self):
        return hash(self._items)

    def __bool__(self):
        return bool(self._items)

    def bump(self, keys) -> "Vector":
        """A copy with each named component incremented by one."""
        new = dict(self._items)
        for key in keys:
            new[key] = new.get(key, 0) + 1
        return Vector(new)

    def dominates(self, other: "Vector") -> bool:
        """Componentwise >= with strict inequality somewhere."""
        keys = set(self._map) | set(other._map)
        if not all(self[k] >= other[k] for k in keys):
            return False
        return any(self[k] > other[k] for k in keys)

    @staticmethod
    def max_of(vectors) -> "Vector":
        """Componentwise maximum; the empty collection gives the zero vector."""
        out: dict = {}
        for v in vectors:
            for key, count in v._items:
                if count > out.get(key, 0):
                    out[key] = count
        return Vector(out)

    def render(self) -> str:
        inner = ",".join(f"{k}:{n}" for k, n in self._items)
        return f"⟨{inner}⟩"

    def to_json(self) -> dict:
        return dict(self._items)

    def __str__(self):
        return self.render()

    def __repr__(self):
        return f"Vector({dict(self._items)!r})"


def _toposort(h: History, nodes, deps) -> list[int]:
    """Order `nodes` so every prerequisite comes first; ties go by index."""
    indeg = {i: 0 for i in nodes}
    succ = defaultdict(list)
    for node, pres in deps.items():
        for p in set(pres):
            succ[p].append(node)
            indeg[node] += 1
    ready = [i for i in nodes if indeg[i] == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        node = heapq.heappop(ready)
        out.append(node)
        for s in succ[node]:
            indeg[s] -= 1
            if indeg[s] == 0:
                heapq.heappush(ready, s)
    if len(out) != len(nodes):
        stuck = ", ".join(str(h.ops[i]) for i in sorted(n for n in nodes if indeg[n]))
        raise CyclicDependenceError(f"vector definition is circular over: {stuck}")
    return out


def _txn_reads(h: History, txn: str) -> list[int]:
    return [i for i in h.txn_ops[txn] if h.ops[i].kind == READ]


def dv_annotate(h: History) -> dict[int, Vector]:
    """Map every read and write (by op index) to its dependence vector.

    A read of the initial version gets the zero vector; any other read
    inherits the vector of the write it observed.  All writes of one
    transaction share a single vector: the componentwise max over the
    transaction's reads, plus one increment per object written.
    """
    nodes = []
    deps: dict[int, list[int]] = {}
    for idx, op in enumerate(h.ops):
        if op.kind == READ:
            nodes.append(idx)
            if op.read_version == INITIAL_TXN:
                deps[idx] = []
            else:
                deps[idx] = [h.write_idx[(op.read_version, op.obj)]]
        elif op.kind == WRITE:
            nodes.append(idx)
            deps[idx] = _txn_reads(h, op.txn)

    ann: dict[int, Vector] = {}
    txn_vec: dict[str, Vector] = {}
    for idx in _toposort(h, nodes, deps):
        op = h.ops[idx]
        if op.kind == READ:
            if op.read_version == INITIAL_TXN:
                ann[idx] = Vector()
            else:
                ann[idx] = ann[h.write_idx[(op.read_version, op.obj)]]
        else:
            if op.txn not in txn_vec:
                base = Vector.max_of(ann[r] for r in _txn_reads(h, op.txn))
                txn_vec[op.txn] = base.bump(sorted(h.write_set[op.txn]))
            ann[idx] = txn_vec[op.txn]
    return ann


def compatible(ti: str, read_x, read_y) -> bool:
    """Whether two versions read by `ti` can sit in one snapshot.

    Each argument is an (object, version, vector) triple for one of the
    transaction's reads.  The test is symmetric: each vector must be at
    least as advanced as the other on its own object.
    """
    x, _, vx = read_x
    y, _, vy = read_y
    if x == y:
        raise ValueError("compatibility is defined over two distinct objects")
    return vx[x] >= vy[x] and vy[y] >= vx[y]


def dv_snapshot_consistent(h: History, ti: str) -> bool:
    """Decide ti's snapshot by pairwise vector compatibility alone.

    Meaningful on histories whose reads observe committed versions and whose
    conflicting writers are dependence-ordered; outside that class the
    result is still computed but a warning flags it as unreliable.
    """
    if ti not in h.txns:
        raise ValueError(f"unknown transaction {ti!r}")
    for criterion in (ACA, WCF):
        if not check(h, criterion).holds:
            warnings.warn(
                f"history is outside {criterion}; "
                "vector-based snapshot test may be unreliable",
                stacklevel=2,
            )
    ann = dv_annotate(h)
    reads = [(obj, ver, ann[idx]) for idx, obj, ver in h.reads_by_txn.get(ti, ())]
    return all(compatible(ti, a, b) for a, b in itertools.combinations(reads, 2))


def dv_dominates(vi: Vector, vj: Vector) -> bool:
    """Strict vector dominance: componentwise >= and greater somewhere."""
    return vi.dominates(vj)


@dataclass(frozen=True)
class Partition:
    """Disjoint classes of objects, each named by a class id."""

    classes: tuple[tuple[str, frozenset[str]], ...]

    def __post_init__(self):
        seen: dict[str, str] = {}
        ids = set()
        for cid, members in self.classes:
            if not cid or cid in ids:
                raise ValueError("class ids must be non-empty and unique")
            ids.add(cid)
            if not members:
                raise ValueError(f"class {cid} is empty")
            for obj in members:
                if obj in seen:
                    raise ValueError(
                        f"classes {seen[obj]} and {cid} overlap on {obj}"
                    )
                seen[obj] = cid

    @classmethod
    def of(cls, *groups) -> "Partition":
        """Build from object groups; each class is named by its members."""
        classes = []
        for group in groups:
            members = frozenset(group)
            classes.append(("+".join(sorted(members)), members))
        return cls(tuple(classes))

    @classmethod
    def singletons(cls, objects) -> "Partition":
        return cls.of(*[(x,) for x in objects])

    @property
    def objects(self) -> frozenset:
        return frozenset(x for _, members in self.classes for x in members)

    def class_of(self, obj: str) -> str:
        for cid, members in self.classes:
            if obj in members:
                return cid
        raise ValueError(f"object {obj} is not covered by the partition")

    def members(self, cid: str) -> frozenset:
        for name, members in self.classes:
            if name == cid:
                return members
        raise ValueError(f"unknown class {cid}")


def is_proper_partition(h: History, p: Partition) -> Verdict:
    """Holds iff every pair of writes within one class is ordered.

    The witness names the class and the two unordered write ops by index.
    """
    for obj in h.objects:
        p.class_of(obj)  # coverage is a precondition; raises ValueError
    for cid, members in p.classes:
        writes = sorted(
            idx for obj in members for idx in h.writes.get(obj, ())
        )
        for i, j in itertools.combinations(writes, 2):
            if not (h.precedes(i, j) or h.precedes(j, i)):
                return Verdict("PROPER_PARTITION", False, (cid, i, j))
    return Verdict("PROPER_PARTITION", True)


def pdv_annotate(h: History, p: Partition) -> dict[int, Vector]:
    """Map every read and write to its class-granular dependence vector.

    Reads of the initial version get the zero vector.  Any other read takes
    the componentwise max over the class writes that precede it and stay
    strictly below every later version of the read's own object.  A write
    takes the max over its transaction's reads and all strictly-prior writes
    in its class, then adds one per class written.
    """
    verdict = is_proper_partition(h, p)
    if not verdict.holds:
        cid, i, j = verdict.witness
        raise ValueError(
            f"partition is not proper for this history: class {cid} "
            f"writes {h.ops[i]} and {h.ops[j]} are unordered"
        )
    vo = version_order(h)
    class_writes: dict[str, list[int]] = {cid: [] for cid, _ in p.classes}
    for obj, idxs in h.writes.items():
        class_writes[p.class_of(obj)].extend(idxs)

    nodes = []
    deps: dict[int, list[int]] = {}
    windows: dict[int, list[int]] = {}
    folds: dict[int, list[int]] = {}
    for idx, op in enumerate(h.ops):
        if op.kind == READ:
            nodes.append(idx)
            if op.read_version == INITIAL_TXN:
                deps[idx] = []
                continue
            chain = vo[op.obj]
            pos = chain.index(op.read_version)
            later = [h.write_idx[(k, op.obj)] for k in chain[pos + 1 :]]
            window = [
                w
                for w in class_writes[p.class_of(op.obj)]
                if h.precedes(w, idx)
                and all(h.precedes(w, lw) for lw in later)
            ]
            windows[idx] = window
            deps[idx] = window
        elif op.kind == WRITE:
            nodes.append(idx)
            fold = [
                w for w in class_writes[p.class_of(op.obj)] if h.precedes(w, idx)
            ]
            folds[idx] = fold
            deps[idx] = _txn_reads(h, op.txn) + fold

    ann: dict[int, Vector] = {}
    for idx in _toposort(h, nodes, deps):
        op = h.ops[idx]
        if op.kind == READ:
            if op.read_version == INITIAL_TXN:
                ann[idx] = Vector()
            else:
                ann[idx] = Vector.max_of(ann[w] for w in windows[idx])
        else:
            parts = [ann[r] for r in _txn_reads(h, op.txn)]
            parts += [ann[w] for w in folds[idx]]
            classes = sorted({p.class_of(z) for z in h.write_set[op.txn]})
            ann[idx] = Vector.max_of(parts).bump(classes)
    return ann


def _latest_before(h: History, obj: str, anchor_obj: str, anchor_ver: str) -> str:
    """Most recent version of obj written strictly before the anchor write."""
    if anchor_ver == INITIAL_TXN:
        return INITIAL_TXN
    anchor = h.write_idx[(anchor_ver, anchor_obj)]
    best = INITIAL_TXN
    for k in version_order(h)[obj][1:]:
        if h.precedes(h.write_idx[(k, obj)], anchor):
            best = k
    return best


def pdv_compatible(h: History, ti: str, read_x, read_y, p: Partition) -> bool:
    """Class-granular compatibility of two versions read by `ti`.

    Across distinct classes this is the plain componentwise test on the two
    class components.  Inside one class, writes are serialized, so the read
    with the strictly larger class counter must have observed its object at
    the latest version available when the smaller one was written: whichever
    side trails must sit at the most recent version of its object strictly
    before the leading side's write.
    """
    x, j, vx = read_x
    y, l, vy = read_y
    if x == y:
        raise ValueError("compatibility is defined over two distinct objects")
    cx, cy = p.class_of(x), p.class_of(y)
    if cx != cy:
        return vx[cx] >= vy[cx] and vy[cy] >= vx[cy]
    a, b = vx[cx], vy[cx]
    if a > b:
        return l == _latest_before(h, y, x, j)
    if b > a:
        return j == _latest_before(h, x, y, l)
    return True


def project(h: History, p: Partition) -> History:
    """Rename every object to its class, keeping order and versions.

    The result is validated: grouping can make it ill-formed (one
    transaction now touching a class twice), in which case HistoryError
    propagates and the projection is undefined.
    """
    ops = []
    for op in h.ops:
        if op.kind in (READ, WRITE):
            ops.append(Operation(op.kind, op.txn, p.class_of(op.obj), op.read_version))
        else:
            ops.append(op)
    return History.from_ops(tuple(ops), h.edges)
