"""Reference histories exercised by the checker tests, demos, and docs.

Each entry isolates one behavior of interest.  The linear sources are kept
alongside the parsed values so round-trip tests and the CLI docs can reuse
the exact canonical strings.
"""

from __future__ import annotations

from .history import History, parse_json, parse_text

# Two transactions on disjoint objects; nothing interesting can go wrong.
INDEPENDENT_COMMITS_SRC = "r1(x0).r2(y0).w2(y2).c1.c2"

# T_a reads T_1's write and therefore depends on it; T_b runs later in real
# time but reads only initial versions, so it depends on nothing.
DIRECT_DEPENDENCY_SRC = "r1(x0).w1(x1).c1.ra(x1).ca.rb(y0).cb"

# T_a reads fresh y2 (whose writer observed x1) and then stale x0: the two
# reads cannot come from one consistent snapshot.
STALE_READ_SRC = "r1(x0).w1(x1).c1.r2(x1).r2(y0).w2(y2).c2.ra(y2).ra(x0).ca"

# T_a reads x1 before T_2 commits, then reads y2 afterwards: the snapshot is
# assembled across a commit and is not strictly consistent.
FRACTURED_READS_SRC = "r1(x0).w1(x1).c1.ra(x1).r2(y0).w2(y2).c2.ra(y2).ca"

# T_a reads initial x0 beside y2, where the x-writer T_1 committed before
# T_2 but of course not before the initial transaction: the snapshot orders
# commits inconsistently even though each single read is fine.
COMMIT_ORDER_SKEW_SRC = "r1(x0).w1(x1).c1.r2(y0).w2(y2).c2.ra(x0).ra(y2).ca"

# T_a's read of x1 lands before c2 while T_b reads y2: T_a's snapshot is
# older by the read-before-commit rule.
PRECEDENCE_BY_READ_SRC = "r1(x0).w1(x1).c1.r2(y0).w2(y2).ra(x1).c2.rb(y2).ca.cb"

# T_b reads y2 whose writer also wrote x, and x's version read by T_a
# committed before c2: T_a's snapshot is older by the writer rule.
PRECEDENCE_BY_WRITE_SRC = (
    "r1(x0).w1(x1).c1.ra(x1).ca.r2(x1).r2(y0).w2(x2).w2(y2).c2.rb(y2).cb"
)

# Two independent transactions both write x and both commit.
CONFLICTING_SIBLINGS_SRC = "r1(x0).r2(x0).w1(x1).w2(x2).c1.c2"

# Two parallel branches (T_1 on x, T_2 on y) merged by a reader T_3 that
# starts after both commits.  w1(x1) and w2(y2) are incomparable, so this
# history is a genuine poset and only exists in the JSON format.
PARALLEL_BRANCHES_JSON = """\
{
  "ops": [
    {"kind": "read", "txn": "1", "obj": "x", "readVersion": "0"},
    {"kind": "write", "txn": "1", "obj": "x"},
    {"kind": "commit", "txn": "1"},
    {"kind": "read", "txn": "2", "obj": "y", "readVersion": "0"},
    {"kind": "write", "txn": "2", "obj": "y"},
    {"kind": "commit", "txn": "2"},
    {"kind": "read", "txn": "3", "obj": "x", "readVersion": "1"},
    {"kind": "read", "txn": "3", "obj": "y", "readVersion": "2"},
    {"kind": "write", "txn": "3", "obj": "y"},
    {"kind": "commit", "txn": "3"}
  ],
  "edges": [[0, 1], [1, 2], [2, 6], [3, 4], [4, 5], [5, 6], [6, 7], [7, 8], [8, 9]]
}
"""

INDEPENDENT_COMMITS = parse_text(INDEPENDENT_COMMITS_SRC)
DIRECT_DEPENDENCY = parse_text(DIRECT_DEPENDENCY_SRC)
STALE_READ = parse_text(STALE_READ_SRC)
FRACTURED_READS = parse_text(FRACTURED_READS_SRC)
COMMIT_ORDER_SKEW = parse_text(COMMIT_ORDER_SKEW_SRC)
PRECEDENCE_BY_READ = parse_text(PRECEDENCE_BY_READ_SRC)
PRECEDENCE_BY_WRITE = parse_text(PRECEDENCE_BY_WRITE_SRC)
CONFLICTING_SIBLINGS = parse_text(CONFLICTING_SIBLINGS_SRC)
PARALLEL_BRANCHES = parse_json(PARALLEL_BRANCHES_JSON)

LINEAR_SOURCES: dict[str, str] = {
    "independent_commits": INDEPENDENT_COMMITS_SRC,
    "direct_dependency": DIRECT_DEPENDENCY_SRC,
    "stale_read": STALE_READ_SRC,
    "fractured_reads": FRACTURED_READS_SRC,
    "commit_order_skew": COMMIT_ORDER_SKEW_SRC,
    "precedence_by_read": PRECEDENCE_BY_READ_SRC,
    "precedence_by_write": PRECEDENCE_BY_WRITE_SRC,
    "conflicting_siblings": CONFLICTING_SIBLINGS_SRC,
}

ALL: dict[str, History] = {
    **{name: parse_text(src) for name, src in LINEAR_SOURCES.items()},
    "parallel_branches": PARALLEL_BRANCHES,
}
