"""Classical dispatching rules: a job-selection rule paired with a
machine-selection rule, applied greedily until every operation is placed.

Job rules: FIFO (earliest job ready time, i.e. the job whose frontier
operation arrived first), MWKR / LWKR (most / least mean remaining work),
MOPNR (most remaining operations).  Machine rules: SPT (shortest processing
time among the frontier operation's options), EET (option that can start
earliest).  All ties break on the lowest job index, then the lowest machine
index, which keeps every rule deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .instance import Instance
from .state import Action, GraphState, Schedule

JOB_RULES = ("FIFO", "MWKR", "LWKR", "MOPNR")
MACHINE_RULES = ("SPT", "EET")


@dataclass(frozen=True)
class DispatchRule:
    job_rule: str
    machine_rule: str

    def __post_init__(self):
        if self.job_rule not in JOB_RULES:
            raise ValueError(f"unknown job rule {self.job_rule!r}")
        if self.machine_rule not in MACHINE_RULES:
            raise ValueError(f"unknown machine rule {self.machine_rule!r}")

    def __str__(self) -> str:
        return f"{self.job_rule}+{self.machine_rule}"

    @staticmethod
    def parse(text: str) -> "DispatchRule":
        job_rule, _, machine_rule = text.partition("+")
        return DispatchRule(job_rule.strip().upper(), machine_rule.strip().upper())


def all_rules() -> list[DispatchRule]:
    return [DispatchRule(j, m) for j, m in product(JOB_RULES, MACHINE_RULES)]


def _select_job(state: GraphState, rule: str) -> int:
    inst = state.inst
    open_jobs = [j for j in range(inst.num_jobs) if state.frontier[j] < len(inst.jobs[j])]
    if rule == "FIFO":
        key = [state.job_ready[j] for j in open_jobs]
        best = min(key)
    elif rule == "MWKR":
        key = [-inst.mean_suffix[j][state.frontier[j]] for j in open_jobs]
        best = min(key)
    elif rule == "LWKR":
        key = [inst.mean_suffix[j][state.frontier[j]] for j in open_jobs]
        best = min(key)
    else:  # MOPNR
        key = [-(len(inst.jobs[j]) - state.frontier[j]) for j in open_jobs]
        best = min(key)
    return open_jobs[key.index(best)]


def _select_machine(state: GraphState, job: int, rule: str) -> int:
    op = state.inst.jobs[job].operations[state.frontier[job]]
    if rule == "SPT":
        key = [p for _, p in op.options]
    else:  # EET: earliest possible start among the compatible machines
        key = [max(state.mach_free[m], state.job_ready[job]) for m, _ in op.options]
    best = min(key)
    return op.options[key.index(best)][0]


def solve_dr(inst: Instance, rule: DispatchRule) -> Schedule:
    """Build a schedule by repeatedly applying the rule pair."""
    state = GraphState(inst)
    while not state.is_terminal:
        j = _select_job(state, rule.job_rule)
        m = _select_machine(state, j, rule.machine_rule)
        state.step(Action(m, j))
    return state.schedule()


def best_dr(instances: list[Instance],
            rules: list[DispatchRule] | None = None,
            ) -> tuple[DispatchRule, dict[DispatchRule, float]]:
    """Evaluate every rule pair and return the one with the lowest mean makespan.

    Also returns the full rule -> mean-makespan table.  Ties go to the rule
    listed first in all_rules() order.
    """
    if not instances:
        raise ValueError("need at least one instance")
    if rules is None:
        rules = all_rules()
    table = {}
    for rule in rules:
        makespans = [solve_dr(inst, rule).makespan for inst in instances]
        table[rule] = float(np.mean(makespans))
    winner = min(rules, key=lambda r: table[r])
    return winner, table
