"""Partial replication under non-monotonic snapshot isolation.

The package has two halves.  The offline half models transactional
histories as posets, decides the consistency criteria (ACA, CONS, SCONSa,
SCONSb, SCONS, MON, WCF, NMSI, SI) and cross-checks the snapshot-isolation
decomposition with an independent constructive oracle.  The online half is
a deterministic discrete-event simulation of a partially replicated data
store whose read rule is driven by dependence vectors and whose termination
runs over a genuine atomic multicast; extracted histories feed back into
the offline checker.
"""

from __future__ import annotations

from .amcast import Amcast, AmcastError, Delivery, Group, validate_groups
from .criteria import (
    ACA,
    CONS,
    CRITERIA,
    MON,
    NMSI,
    SCONS,
    SCONSA,
    SCONSB,
    SI_DECOMP,
    SI_ORACLE,
    WCF,
    ExtendedHistory,
    Verdict,
    check,
    consistent_snapshot,
    enumerate_small_histories,
    random_history,
    si_extension,
    si_oracle,
)
from .depvec import (
    CyclicDependenceError,
    Partition,
    Vector,
    compatible,
    dv_annotate,
    dv_dominates,
    dv_snapshot_consistent,
    is_proper_partition,
    pdv_annotate,
    pdv_compatible,
    project,
)
from .history import (
    ABORT,
    COMMIT,
    INITIAL_TXN,
    READ,
    WRITE,
    History,
    HistoryError,
    Operation,
    depends,
    parse_history,
    parse_json,
    parse_text,
    render_history,
    render_json,
    render_text,
    snapshot_precedes,
    version_order,
)
from .protocol import ProtocolError, Replica, TxnRecord
from .sim import (
    Crash,
    RunTrace,
    ScriptedTxn,
    Sim,
    SimConfig,
    SimError,
    Workload,
    account,
    extract_history,
    load_config,
    run,
)

__all__ = [
    "ABORT",
    "ACA",
    "CONS",
    "CRITERIA",
    "MON",
    "NMSI",
    "SCONS",
    "SCONSA",
    "SCONSB",
    "SI_DECOMP",
    "SI_ORACLE",
    "WCF",
    "ExtendedHistory",
    "Verdict",
    "check",
    "consistent_snapshot",
    "enumerate_small_histories",
    "random_history",
    "si_extension",
    "si_oracle",
    "CyclicDependenceError",
    "Partition",
    "Vector",
    "compatible",
    "dv_annotate",
    "dv_dominates",
    "dv_snapshot_consistent",
    "is_proper_partition",
    "pdv_annotate",
    "pdv_compatible",
    "project",
    "COMMIT",
    "INITIAL_TXN",
    "READ",
    "WRITE",
    "History",
    "HistoryError",
    "Operation",
    "depends",
    "parse_history",
    "parse_json",
    "parse_text",
    "render_history",
    "render_json",
    "render_text",
    "snapshot_precedes",
    "version_order",
    "Amcast",
    "AmcastError",
    "Delivery",
    "Group",
    "validate_groups",
    "ProtocolError",
    "Replica",
    "TxnRecord",
    "Crash",
    "RunTrace",
    "ScriptedTxn",
    "Sim",
    "SimConfig",
    "SimError",
    "Workload",
    "account",
    "extract_history",
    "load_config",
    "run",
]
