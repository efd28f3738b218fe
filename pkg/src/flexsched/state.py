"""Scheduling environment over a heterogeneous graph view of the instance.

The mutable GraphState tracks the partial schedule plus per-machine and
per-job clocks.  Node/edge features for the policy network are materialised
on demand as a GraphSnapshot of plain numpy arrays: operation nodes exist
only for unscheduled operations, machine and job nodes persist, and
machine-job edges (the action set) always point at each unfinished job's
frontier operation.

Time-like features are divided by the instance's largest single processing
time; processing-time ratios are computed on raw values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .instance import Instance

FEATURE_SCHEMA_VERSION = 1

OP_FEATS = 2       # ready flag, pending work
MACHINE_FEATS = 2  # last completion, utilisation
JOB_FEATS = 4      # done flag, last completion, remaining ops, pending work
OM_EDGE_FEATS = 3  # time, time/op-max, time/machine-max
MJ_EDGE_FEATS = 4  # time, induced idle gap, and the two ratios

EARLIEST_START = "earliest_start"
EARLIEST_FINISH = "earliest_finish"


class Action(NamedTuple):
    machine: int
    job: int


@dataclass(frozen=True)
class MaskRule:
    """Keep only actions whose start (or finish) is among the k best values.

    Ties share a rank: "k best" means the k smallest distinct values, so the
    allowed set is never empty and grows with k.
    """

    variant: str
    k: int

    def __post_init__(self):
        if self.variant not in (EARLIEST_START, EARLIEST_FINISH):
            raise ValueError(f"unknown mask variant {self.variant!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class ScheduledOp:
    job: int
    op: int
    machine: int
    start: int
    end: int


@dataclass(frozen=True)
class Schedule:
    """A complete assignment; makespan is the latest end time."""

    entries: tuple[ScheduledOp, ...]
    makespan: int

    def to_csv(self, inst: Instance) -> str:
        offsets = np.concatenate(([0], np.cumsum(inst.op_counts)))
        rows = ["op_id,job,machine,start,end"]
        for e in sorted(self.entries, key=lambda e: (e.job, e.op)):
            rows.append(f"{offsets[e.job] + e.op},{e.job},{e.machine},{e.start},{e.end}")
        return "\n".join(rows) + "\n"

    def to_gantt_json(self, inst: Instance) -> str:
        lanes = []
        for m in range(inst.num_machines):
            spans = [
                {"job": e.job, "op": e.op, "start": e.start, "end": e.end}
                for e in sorted(self.entries, key=lambda e: e.start)
                if e.machine == m
            ]
            lanes.append({"machine": m, "spans": spans})
        return json.dumps(
            {"instance": inst.id, "makespan": self.makespan, "machines": lanes},
            indent=2,
        )


class ScheduleError(ValueError):
    """Raised by validate_schedule when a schedule violates the problem rules."""


def validate_schedule(inst: Instance, sched: Schedule) -> None:
    """Independent validity check, re-derived from the raw entries.

    Verifies coverage (each operation exactly once), machine compatibility,
    duration consistency, within-job precedence, machine non-overlap, and the
    reported makespan.  Raises ScheduleError on the first violation.
    """
    seen: dict[tuple[int, int], ScheduledOp] = {}
    for e in sched.entries:
        if not (0 <= e.job < inst.num_jobs):
            raise ScheduleError(f"job {e.job} out of range")
        if not (0 <= e.op < len(inst.jobs[e.job])):
            raise ScheduleError(f"op {e.op} out of range for job {e.job}")
        if (e.job, e.op) in seen:
            raise ScheduleError(f"operation ({e.job},{e.op}) scheduled twice")
        seen[(e.job, e.op)] = e
        op = inst.jobs[e.job].operations[e.op]
        if e.machine not in op.machines:
            raise ScheduleError(f"({e.job},{e.op}) on incompatible machine {e.machine}")
        if e.start < 0:
            raise ScheduleError(f"({e.job},{e.op}) starts before time zero")
        if e.end - e.start != op.time_on(e.machine):
            raise ScheduleError(f"({e.job},{e.op}) duration mismatch")
    if len(seen) != inst.num_operations:
        raise ScheduleError(f"covers {len(seen)} of {inst.num_operations} operations")
    for j, job in enumerate(inst.jobs):
        for o in range(1, len(job)):
            if seen[(j, o)].start < seen[(j, o - 1)].end:
                raise ScheduleError(f"job {j}: op {o} starts before op {o - 1} ends")
    by_machine: dict[int, list[ScheduledOp]] = {}
    for e in sched.entries:
        by_machine.setdefault(e.machine, []).append(e)
    for m, entries in by_machine.items():
        entries.sort(key=lambda e: e.start)
        for a, b in zip(entries, entries[1:]):
            if b.start < a.end:
                raise ScheduleError(
                    f"machine {m}: ({a.job},{a.op}) and ({b.job},{b.op}) overlap"
                )
    true_mk = max(e.end for e in sched.entries)
    if sched.makespan != true_mk:
        raise ScheduleError(f"makespan {sched.makespan} != max end {true_mk}")


@dataclass
class GraphSnapshot:
    """Frozen numpy view of one state, as consumed by the policy network.

    Operation nodes are re-indexed 0..n_ops-1 over the unscheduled operations
    (job-major order).  The mj_machine/mj_job pairs define the action list;
    actions, masks, and actor logits all share that ordering.
    """

    op_feat: np.ndarray        # (n_ops, OP_FEATS)
    machine_feat: np.ndarray   # (n_machines, MACHINE_FEATS)
    job_feat: np.ndarray       # (n_jobs, JOB_FEATS)
    op_job: np.ndarray         # (n_ops,) owning job of each op node
    op_succ: np.ndarray        # (n_ops,) successor op node, -1 for job-last
    om_op: np.ndarray          # (E_om,) op side of compatibility edges
    om_machine: np.ndarray     # (E_om,) machine side
    om_feat: np.ndarray        # (E_om, OM_EDGE_FEATS)
    mj_machine: np.ndarray     # (E_mj,) machine side of action edges
    mj_job: np.ndarray         # (E_mj,) job side
    mj_feat: np.ndarray        # (E_mj, MJ_EDGE_FEATS)

    @property
    def num_actions(self) -> int:
        return len(self.mj_machine)


class GraphState:
    """Mutable environment state; single-owner, clone before branching."""

    def __init__(self, inst: Instance):
        self.inst = inst
        self.frontier = np.zeros(inst.num_jobs, dtype=np.int64)
        self.mach_free = np.zeros(inst.num_machines, dtype=np.int64)
        self.mach_busy = np.zeros(inst.num_machines, dtype=np.int64)
        self.job_ready = np.zeros(inst.num_jobs, dtype=np.int64)
        self.makespan = 0
        self.ops_left = inst.num_operations
        self.entries: list[ScheduledOp] = []
        self._static = _static_tables(inst)

    # -- bookkeeping -------------------------------------------------------

    def clone(self) -> "GraphState":
        other = GraphState.__new__(GraphState)
        other.inst = self.inst
        other.frontier = self.frontier.copy()
        other.mach_free = self.mach_free.copy()
        other.mach_busy = self.mach_busy.copy()
        other.job_ready = self.job_ready.copy()
        other.makespan = self.makespan
        other.ops_left = self.ops_left
        other.entries = list(self.entries)
        other._static = self._static
        return other

    @property
    def is_terminal(self) -> bool:
        return self.ops_left == 0

    # -- actions -------------------------------------------------------------

    def action_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(machines, jobs, times) of the current machine-job edges."""
        machines, jobs, times = [], [], []
        for j in range(self.inst.num_jobs):
            k = self.frontier[j]
            if k >= len(self.inst.jobs[j]):
                continue
            for m, p in self.inst.jobs[j].operations[k].options:
                machines.append(m)
                jobs.append(j)
                times.append(p)
        return (
            np.array(machines, dtype=np.int64),
            np.array(jobs, dtype=np.int64),
            np.array(times, dtype=np.int64),
        )

    def legal_actions(self) -> list[Action]:
        if self.is_terminal:
            raise ValueError("terminal state has no actions")
        machines, jobs, _ = self.action_arrays()
        return [Action(int(m), int(j)) for m, j in zip(machines, jobs)]

    def action_start_end(self) -> tuple[np.ndarray, np.ndarray]:
        machines, jobs, times = self.action_arrays()
        starts = np.maximum(self.mach_free[machines], self.job_ready[jobs])
        return starts, starts + times

    def mask(self, rule: MaskRule | None) -> np.ndarray:
        """Boolean allow-vector aligned with legal_actions order."""
        starts, ends = self.action_start_end()
        if rule is None:
            return np.ones(len(starts), dtype=bool)
        values = starts if rule.variant == EARLIEST_START else ends
        distinct = np.unique(values)
        cutoff = distinct[min(rule.k, len(distinct)) - 1]
        return values <= cutoff

    def step(self, action: Action) -> int:
        """Schedule the frontier operation of action.job on action.machine.

        Mutates the state and returns the reward, the (non-positive) change
        in makespan.
        """
        m, j = action.machine, action.job
        k = self.frontier[j]
        if k >= len(self.inst.jobs[j]):
            raise ValueError(f"job {j} is already complete")
        op = self.inst.jobs[j].operations[k]
        try:
            p = op.time_on(m)
        except KeyError:
            raise ValueError(f"machine {m} incompatible with frontier op of job {j}")
        start = int(max(self.mach_free[m], self.job_ready[j]))
        end = start + p
        self.mach_free[m] = end
        self.mach_busy[m] += p
        self.job_ready[j] = end
        self.frontier[j] += 1
        self.ops_left -= 1
        self.entries.append(ScheduledOp(j, int(k), m, start, end))
        new_mk = max(self.makespan, end)
        reward = self.makespan - new_mk
        self.makespan = new_mk
        return reward

    def schedule(self) -> Schedule:
        if not self.is_terminal:
            raise ValueError("schedule requested before all operations placed")
        return Schedule(tuple(self.entries), self.makespan)

    # -- features ------------------------------------------------------------

    def snapshot(self) -> GraphSnapshot:
        inst = self.inst
        st = self._static
        scale = st.scale

        starts = [self.frontier[j] for j in range(inst.num_jobs)]
        op_slices = [np.arange(starts[j], int(inst.op_counts[j])) for j in range(inst.num_jobs)]
        live_counts = [len(s) for s in op_slices]
        n_live = sum(live_counts)
        base = np.concatenate(([0], np.cumsum(live_counts)))[:-1]

        op_feat = np.zeros((n_live, OP_FEATS))
        op_job = np.zeros(n_live, dtype=np.int64)
        op_succ = np.full(n_live, -1, dtype=np.int64)
        om_op, om_machine, om_feat = [], [], []
        mj_machine, mj_job, mj_gap = [], [], []
        mj_static = []
        for j in range(inst.num_jobs):
            c = live_counts[j]
            if c == 0:
                continue
            lo = base[j]
            k = starts[j]
            op_feat[lo, 0] = 1.0  # frontier op is the one that can run
            op_feat[lo:lo + c, 1] = st.pending[j][k:-1]
            op_job[lo:lo + c] = j
            op_succ[lo:lo + c - 1] = np.arange(lo + 1, lo + c)
            e0 = st.om_offsets[j][k]
            om_op.append(st.om_op[j][e0:] - k + lo)
            om_machine.append(st.om_machine[j][e0:])
            om_feat.append(st.om_feat[j][e0:])
            e1 = st.om_offsets[j][k + 1]
            n_front = e1 - e0
            mj_machine.append(st.om_machine[j][e0:e1])
            mj_job.append(np.full(n_front, j, dtype=np.int64))
            mj_static.append(st.mj_feat[j][e0:e1])
            gap = np.maximum(0, self.job_ready[j] - self.mach_free[st.om_machine[j][e0:e1]])
            mj_gap.append(gap / scale)

        machine_feat = np.zeros((inst.num_machines, MACHINE_FEATS))
        machine_feat[:, 0] = self.mach_free / scale
        machine_feat[:, 1] = self.mach_busy / np.maximum(1, self.mach_free)

        remaining = inst.op_counts - self.frontier
        job_feat = np.zeros((inst.num_jobs, JOB_FEATS))
        job_feat[:, 0] = (remaining == 0).astype(float)
        job_feat[:, 1] = self.job_ready / scale
        job_feat[:, 2] = remaining
        job_feat[:, 3] = [st.pending[j][starts[j]] for j in range(inst.num_jobs)]

        def cat(parts, dtype=np.int64, width=None):
            if parts:
                return np.concatenate(parts)
            if width is None:
                return np.zeros(0, dtype=dtype)
            return np.zeros((0, width))

        mj_feat = cat(mj_static, width=MJ_EDGE_FEATS)
        if len(mj_feat):
            mj_feat = mj_feat.copy()
            mj_feat[:, 1] = cat(mj_gap, dtype=float)
        return GraphSnapshot(
            op_feat=op_feat,
            machine_feat=machine_feat,
            job_feat=job_feat,
            op_job=op_job,
            op_succ=op_succ,
            om_op=cat(om_op),
            om_machine=cat(om_machine),
            om_feat=cat(om_feat, width=OM_EDGE_FEATS),
            mj_machine=cat(mj_machine),
            mj_job=cat(mj_job),
            mj_feat=mj_feat,
        )


class _StaticTables:
    """Per-instance arrays reused by every snapshot (features are sliced,
    never recomputed)."""

    def __init__(self, inst: Instance):
        self.scale = float(inst.max_time)
        self.pending = [suf / self.scale for suf in inst.mean_suffix]
        self.om_op = []
        self.om_machine = []
        self.om_feat = []
        self.mj_feat = []
        self.om_offsets = []
        mach_max = inst.machine_max_time.astype(float)
        for job in inst.jobs:
            ops, machines, feats, mjf, offsets = [], [], [], [], [0]
            for k, op in enumerate(job.operations):
                op_max = float(op.max_time)
                for m, p in op.options:
                    ops.append(k)
                    machines.append(m)
                    feats.append((p / self.scale, p / op_max, p / mach_max[m]))
                    mjf.append((p / self.scale, 0.0, p / op_max, p / mach_max[m]))
                offsets.append(len(ops))
            self.om_op.append(np.array(ops, dtype=np.int64))
            self.om_machine.append(np.array(machines, dtype=np.int64))
            self.om_feat.append(np.array(feats))
            self.mj_feat.append(np.array(mjf))
            self.om_offsets.append(np.array(offsets, dtype=np.int64))


def _static_tables(inst: Instance) -> _StaticTables:
    # cached in the instance's __dict__, same mechanism as cached_property
    tables = inst.__dict__.get("_sched_tables")
    if tables is None:
        tables = _StaticTables(inst)
        inst.__dict__["_sched_tables"] = tables
    return tables


# ---------------------------------------------------------------------------
# module-level API
# ---------------------------------------------------------------------------


def init_state(inst: Instance) -> GraphState:
    return GraphState(inst)


def legal_actions(state: GraphState) -> list[Action]:
    return state.legal_actions()


def mask_actions(state: GraphState, rule: MaskRule | None) -> np.ndarray:
    return state.mask(rule)


def step(state: GraphState, action: Action) -> tuple[GraphState, int]:
    reward = state.step(action)
    return state, reward


Chooser = Callable[[GraphState, list[Action], np.ndarray], int]


def rollout(inst: Instance, chooser: Chooser, rule: MaskRule | None = None) -> Schedule:
    """Run chooser to completion; exactly one step per operation."""
    state = GraphState(inst)
    while not state.is_terminal:
        actions = state.legal_actions()
        allowed = state.mask(rule)
        idx = chooser(state, actions, allowed)
        if not allowed[idx]:
            raise ValueError("chooser picked a masked action")
        state.step(actions[idx])
    return state.schedule()


def first_allowed_chooser(state, actions, allowed) -> int:
    return int(np.flatnonzero(allowed)[0])


def random_chooser(rng: np.random.Generator) -> Chooser:
    def choose(state, actions, allowed):
        return int(rng.choice(np.flatnonzero(allowed)))

    return choose
