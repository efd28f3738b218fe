"""Tiny-scale exact makespan solver.

Depth-first branch and bound over dispatch decisions.  At each node the
candidate (machine, job) pairs are narrowed to the conflict set of the
machine achieving the earliest possible completion: only operations that
could start strictly before that completion, on that machine, are branched.
This generates the active schedules, which always contain an optimum.  The
incumbent is seeded with the best dispatching-rule schedule, children expand
in earliest-completion order, and an admissible bound prunes the rest.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass

import numpy as np

from .instance import Instance
from .state import GraphState, Schedule, ScheduledOp


@dataclass
class SolverBudget:
    max_nodes: int | None = None
    max_seconds: float | None = None

    def __post_init__(self):
        if self.max_nodes is not None and self.max_nodes <= 0:
            raise ValueError("max_nodes must be positive")
        if self.max_seconds is not None and self.max_seconds <= 0:
            raise ValueError("max_seconds must be positive")


@dataclass
class ExactResult:
    makespan: int
    schedule: Schedule
    optimal: bool
    nodes: int


def lower_bound(state: GraphState) -> int:
    """Admissible makespan bound for a partial state.

    Max of: the current makespan; per job, its ready time plus the sum of its
    remaining minimum option times; per machine, its free time plus the work
    of remaining operations that can run nowhere else; and the average
    machine load, total remaining minimum work spread over the machines'
    residual capacity.
    """
    inst = state.inst
    bound = state.makespan
    total_min = 0
    for j in range(inst.num_jobs):
        rem = inst.min_suffix[j][state.frontier[j]]
        total_min += int(rem)
        b = state.job_ready[j] + rem
        if b > bound:
            bound = int(b)
    forced = np.zeros(inst.num_machines, dtype=np.int64)
    for j, job in enumerate(inst.jobs):
        fm = inst.forced_machine[j]
        for k in range(state.frontier[j], len(job)):
            if fm[k] >= 0:
                forced[fm[k]] += job.operations[k].options[0][1]
    for m in range(inst.num_machines):
        b = state.mach_free[m] + forced[m]
        if b > bound:
            bound = int(b)
    load = -(-(int(state.mach_free.sum()) + total_min) // inst.num_machines)
    return max(bound, load)


class _Search:
    """Undo-based depth-first search state; far lighter than GraphState."""

    def __init__(self, inst: Instance):
        self.inst = inst
        self.ops = [[op.options for op in job.operations] for job in inst.jobs]
        self.n_ops_per_job = [len(job) for job in inst.jobs]
        self.frontier = [0] * inst.num_jobs
        self.mach_free = [0] * inst.num_machines
        self.job_ready = [0] * inst.num_jobs
        self.makespan = 0
        self.remaining = inst.num_operations
        self.entries: list[ScheduledOp] = []
        self.min_suffix = inst.min_suffix
        # remaining single-option workload per machine, kept incrementally
        self.forced = [0] * inst.num_machines
        self.forced_of = []
        for j, job in enumerate(inst.jobs):
            row = []
            for k, op in enumerate(job.operations):
                if len(op.options) == 1:
                    m, p = op.options[0]
                    row.append((m, p))
                    self.forced[m] += p
                else:
                    row.append(None)
            self.forced_of.append(row)

    def bound(self) -> int:
        b = self.makespan
        total_min = 0
        for j in range(self.inst.num_jobs):
            rem = int(self.min_suffix[j][self.frontier[j]])
            total_min += rem
            jb = self.job_ready[j] + rem
            if jb > b:
                b = jb
        for m in range(self.inst.num_machines):
            mb = self.mach_free[m] + self.forced[m]
            if mb > b:
                b = mb
        load = -(-(sum(self.mach_free) + total_min) // len(self.mach_free))
        return b if b >= load else load

    def conflict_set(self) -> list[tuple[int, int, int, int]]:
        """(end, job, machine, time) for the earliest-completion machine's
        competing operations, sorted by completion."""
        best_end = None
        best_machine = None
        pairs = []
        for j in range(self.inst.num_jobs):
            k = self.frontier[j]
            if k >= self.n_ops_per_job[j]:
                continue
            ready = self.job_ready[j]
            for m, p in self.ops[j][k]:
                start = self.mach_free[m] if self.mach_free[m] > ready else ready
                end = start + p
                pairs.append((end, start, j, m, p))
                if best_end is None or end < best_end or \
                        (end == best_end and m < best_machine):
                    best_end, best_machine = end, m
        out = [(end, j, m, p) for end, start, j, m, p in pairs
               if m == best_machine and start < best_end]
        out.sort()
        return out

    def apply(self, j: int, m: int, p: int):
        ready = self.job_ready[j]
        start = self.mach_free[m] if self.mach_free[m] > ready else ready
        end = start + p
        undo = (j, m, self.mach_free[m], ready, self.makespan)
        k = self.frontier[j]
        self.entries.append(ScheduledOp(j, k, m, start, end))
        self.frontier[j] = k + 1
        self.mach_free[m] = end
        self.job_ready[j] = end
        if end > self.makespan:
            self.makespan = end
        self.remaining -= 1
        fo = self.forced_of[j][k]
        if fo is not None:
            self.forced[fo[0]] -= fo[1]
        return undo

    def revert(self, undo):
        j, m, mach_free, job_ready, makespan = undo
        self.entries.pop()
        self.frontier[j] -= 1
        fo = self.forced_of[j][self.frontier[j]]
        if fo is not None:
            self.forced[fo[0]] += fo[1]
        self.mach_free[m] = mach_free
        self.job_ready[j] = job_ready
        self.makespan = makespan
        self.remaining += 1


def solve_exact(inst: Instance, budget: SolverBudget | None = None,
                prune: bool = True) -> ExactResult:
    """Branch and bound over active schedules.

    Returns the optimum when the search runs to completion within budget,
    otherwise the best incumbent with optimal=False.  prune=False disables
    the lower-bound cut (kept for cross-checking the pruned search).
    """
    from .dispatch import all_rules, solve_dr

    budget = budget or SolverBudget()
    best: Schedule | None = None
    best_mk = np.inf
    for rule in all_rules():
        sched = solve_dr(inst, rule)
        if sched.makespan < best_mk:
            best, best_mk = sched, sched.makespan

    needed = inst.num_operations * 2 + 200
    if sys.getrecursionlimit() < needed:
        sys.setrecursionlimit(needed)
    deadline = None
    if budget.max_seconds is not None:
        deadline = time.perf_counter() + budget.max_seconds
    search = _Search(inst)
    nodes = 0
    exhausted = True

    def dfs() -> bool:
        """Returns False when the budget ran out."""
        nonlocal best, best_mk, nodes, exhausted
        nodes += 1
        if budget.max_nodes is not None and nodes > budget.max_nodes:
            exhausted = False
            return False
        if deadline is not None and nodes % 256 == 0 and time.perf_counter() > deadline:
            exhausted = False
            return False
        if search.remaining == 0:
            if search.makespan < best_mk:
                best_mk = search.makespan
                best = Schedule(tuple(search.entries), search.makespan)
            return True
        for _, j, m, p in search.conflict_set():
            undo = search.apply(j, m, p)
            keep = not prune or search.bound() < best_mk
            ok = dfs() if keep else True
            search.revert(undo)
            if not ok:
                return False
        return True

    dfs()
    assert best is not None
    return ExactResult(int(best_mk), best, exhausted, nodes)
