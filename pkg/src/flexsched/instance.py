"""Problem data model for the flexible job shop.

An instance is a set of jobs, each an ordered chain of operations, where every
operation can run on one or more machines with a machine-dependent integer
processing time.  Instances are immutable once built; derived quantities used
by the environment and solvers (per-operation means, suffix workloads, ratio
denominators) are cached on the instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class InstanceFormatError(ValueError):
    """Raised when benchmark-format text cannot be parsed into an instance."""


@dataclass(frozen=True)
class Operation:
    """One processing step: (machine, time) options, machines 0-indexed."""

    options: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.options:
            raise ValueError("operation needs at least one machine option")
        machines = [m for m, _ in self.options]
        if len(set(machines)) != len(machines):
            raise ValueError("duplicate machine in operation options")
        for m, p in self.options:
            if m < 0:
                raise ValueError(f"negative machine index {m}")
            if p <= 0:
                raise ValueError(f"non-positive processing time {p}")
        # canonical machine order, so equality and iteration are stable
        object.__setattr__(self, "options", tuple(sorted(self.options)))

    @property
    def machines(self) -> tuple[int, ...]:
        return tuple(m for m, _ in self.options)

    def time_on(self, machine: int) -> int:
        for m, p in self.options:
            if m == machine:
                return p
        raise KeyError(f"machine {machine} not compatible")

    @property
    def mean_time(self) -> float:
        return sum(p for _, p in self.options) / len(self.options)

    @property
    def min_time(self) -> int:
        return min(p for _, p in self.options)

    @property
    def max_time(self) -> int:
        return max(p for _, p in self.options)


@dataclass(frozen=True)
class Job:
    """Ordered chain of operations; the order is a hard precedence."""

    operations: tuple[Operation, ...]

    def __post_init__(self):
        if not self.operations:
            raise ValueError("job needs at least one operation")

    def __len__(self) -> int:
        return len(self.operations)


@dataclass(frozen=True)
class Instance:
    num_jobs: int
    num_machines: int
    jobs: tuple[Job, ...]
    id: str = ""

    def __post_init__(self):
        if self.num_jobs != len(self.jobs) or self.num_jobs < 1:
            raise ValueError("num_jobs does not match job list")
        if self.num_machines < 1:
            raise ValueError("need at least one machine")
        for j, job in enumerate(self.jobs):
            for op in job.operations:
                for m, _ in op.options:
                    if m >= self.num_machines:
                        raise ValueError(
                            f"job {j}: machine index {m} out of range "
                            f"(num_machines={self.num_machines})"
                        )

    # -- basic shape -----------------------------------------------------

    @cached_property
    def num_operations(self) -> int:
        return sum(len(j) for j in self.jobs)

    @cached_property
    def op_counts(self) -> np.ndarray:
        return np.array([len(j) for j in self.jobs], dtype=np.int64)

    @cached_property
    def max_time(self) -> int:
        """Largest single processing time; the feature normalisation scale."""
        return max(op.max_time for job in self.jobs for op in job.operations)

    def size_label(self) -> str:
        return f"{self.num_jobs}x{self.num_machines}"

    # -- cached per-operation tables used by the environment and solvers --

    @cached_property
    def mean_suffix(self) -> list[np.ndarray]:
        """Per job: suffix sums of mean option times, length n_ops+1.

        mean_suffix[j][k] is the expected remaining work of job j when
        operations k..end are still unscheduled (0 at k = n_ops).
        """
        out = []
        for job in self.jobs:
            means = np.array([op.mean_time for op in job.operations])
            suf = np.zeros(len(means) + 1)
            suf[:-1] = means[::-1].cumsum()[::-1]
            out.append(suf)
        return out

    @cached_property
    def min_suffix(self) -> list[np.ndarray]:
        """Per job: suffix sums of per-operation minimum times (int)."""
        out = []
        for job in self.jobs:
            mins = np.array([op.min_time for op in job.operations], dtype=np.int64)
            suf = np.zeros(len(mins) + 1, dtype=np.int64)
            suf[:-1] = mins[::-1].cumsum()[::-1]
            out.append(suf)
        return out

    @cached_property
    def machine_max_time(self) -> np.ndarray:
        """Per machine: max processing time over every option on it (0 if unused)."""
        out = np.zeros(self.num_machines, dtype=np.int64)
        for job in self.jobs:
            for op in job.operations:
                for m, p in op.options:
                    out[m] = max(out[m], p)
        return out

    @cached_property
    def forced_machine(self) -> list[np.ndarray]:
        """Per job, per op: the only compatible machine, or -1 if flexible."""
        return [
            np.array(
                [op.options[0][0] if len(op.options) == 1 else -1 for op in job.operations],
                dtype=np.int64,
            )
            for job in self.jobs
        ]


@dataclass(frozen=True)
class GenParams:
    """Sampling bounds for the synthetic instance generator.

    Counts are drawn uniformly from their inclusive ranges.  Each operation
    gets between min(4, num_machines) and min(op_max, num_machines) machine
    options; times are drawn around a per-operation mean in [1, p_bar] with
    relative deviation d and rounded to integers >= 1.
    """

    j_min: int
    j_max: int
    m_min: int
    m_max: int
    o_min: int
    o_max: int
    op_max: int
    p_bar: int
    d: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.j_min <= self.j_max):
            raise ValueError("bad job count range")
        if not (1 <= self.m_min <= self.m_max):
            raise ValueError("bad machine count range")
        if not (1 <= self.o_min <= self.o_max):
            raise ValueError("bad operations-per-job range")
        if self.op_max < 1:
            raise ValueError("op_max must be >= 1")
        if self.p_bar < 1:
            raise ValueError("p_bar must be >= 1")
        if not (0.0 <= self.d < 1.0):
            raise ValueError("d must be in [0, 1)")


# ---------------------------------------------------------------------------
# benchmark text format
# ---------------------------------------------------------------------------
#
# Header line: "<num_jobs> <num_machines> [flexibility]" (the trailing float,
# present in some published files, is ignored).  Then one job per line:
# "<op_count> { <option_count> { <machine> <time> }... }...", machines
# 1-indexed on disk.  Long jobs may wrap across lines; parsing is
# token-based after the header.


def parse_instance(text: str, id: str = "") -> Instance:
    """Parse benchmark-format text into an Instance.

    Raises InstanceFormatError on malformed input (bad header, count
    mismatches, out-of-range machines, non-positive times).
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InstanceFormatError("empty instance text")
    header = lines[0].split()
    if len(header) not in (2, 3):
        raise InstanceFormatError(f"bad header {lines[0]!r}")
    try:
        num_jobs = int(header[0])
        num_machines = int(header[1])
        if len(header) == 3:
            float(header[2])  # average flexibility, informational only
    except ValueError as exc:
        raise InstanceFormatError(f"bad header {lines[0]!r}") from exc
    if num_jobs < 1 or num_machines < 1:
        raise InstanceFormatError("header counts must be positive")

    tokens = " ".join(lines[1:]).split()
    pos = 0

    def take_int(what: str) -> int:
        nonlocal pos
        if pos >= len(tokens):
            raise InstanceFormatError(f"unexpected end of data reading {what}")
        try:
            value = int(tokens[pos])
        except ValueError as exc:
            raise InstanceFormatError(f"bad {what} token {tokens[pos]!r}") from exc
        pos += 1
        return value

    jobs = []
    for j in range(num_jobs):
        op_count = take_int(f"op count of job {j}")
        if op_count < 1:
            raise InstanceFormatError(f"job {j}: op count {op_count} < 1")
        ops = []
        for o in range(op_count):
            opt_count = take_int(f"option count of job {j} op {o}")
            if opt_count < 1:
                raise InstanceFormatError(f"job {j} op {o}: option count < 1")
            options = []
            for _ in range(opt_count):
                m = take_int("machine index")
                p = take_int("processing time")
                if not (1 <= m <= num_machines):
                    raise InstanceFormatError(
                        f"job {j} op {o}: machine {m} out of range 1..{num_machines}"
                    )
                if p <= 0:
                    raise InstanceFormatError(f"job {j} op {o}: time {p} <= 0")
                options.append((m - 1, p))
            try:
                ops.append(Operation(tuple(options)))
            except ValueError as exc:
                raise InstanceFormatError(f"job {j} op {o}: {exc}") from exc
        jobs.append(Job(tuple(ops)))
    if pos != len(tokens):
        raise InstanceFormatError(f"{len(tokens) - pos} trailing tokens after last job")
    return Instance(num_jobs, num_machines, tuple(jobs), id=id)


def write_instance(inst: Instance) -> str:
    """Serialize an Instance back to benchmark text (1-indexed machines)."""
    out = [f"{inst.num_jobs} {inst.num_machines}"]
    for job in inst.jobs:
        fields = [str(len(job))]
        for op in job.operations:
            fields.append(str(len(op.options)))
            for m, p in op.options:
                fields.append(str(m + 1))
                fields.append(str(p))
        out.append(" ".join(fields))
    return "\n".join(out) + "\n"


def load_instance(path) -> Instance:
    from pathlib import Path

    p = Path(path)
    return parse_instance(p.read_text(), id=p.stem)


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------


def generate_instance(params: GenParams, rng: np.random.Generator | None = None,
                      id: str = "") -> Instance:
    """Draw one synthetic instance from the uniform ranges in params.

    Deterministic for a given rng state; with rng omitted, a fresh generator
    seeded from params.seed is used, so equal params give equal instances.
    """
    if rng is None:
        rng = np.random.default_rng(params.seed)
    num_jobs = int(rng.integers(params.j_min, params.j_max + 1))
    num_machines = int(rng.integers(params.m_min, params.m_max + 1))
    opt_lo = min(4, num_machines)
    opt_hi = min(params.op_max, num_machines)
    if opt_hi < opt_lo:
        opt_hi = opt_lo
    jobs = []
    for _ in range(num_jobs):
        n_ops = int(rng.integers(params.o_min, params.o_max + 1))
        ops = []
        for _ in range(n_ops):
            n_opt = int(rng.integers(opt_lo, opt_hi + 1))
            machines = rng.choice(num_machines, size=n_opt, replace=False)
            p_mean = rng.uniform(1.0, params.p_bar)
            lo, hi = p_mean * (1.0 - params.d), p_mean * (1.0 + params.d)
            options = []
            for m in sorted(int(m) for m in machines):
                p = max(1, int(round(rng.uniform(lo, hi))))
                options.append((m, p))
            ops.append(Operation(tuple(options)))
        jobs.append(Job(tuple(ops)))
    return Instance(num_jobs, num_machines, tuple(jobs), id=id)


def generate_set(params: GenParams, count: int, rng: np.random.Generator,
                 prefix: str = "gen") -> list[Instance]:
    """Generate `count` instances, named <prefix>_000, <prefix>_001, ..."""
    return [generate_instance(params, rng, id=f"{prefix}_{i:03d}") for i in range(count)]


def fig2_instance() -> Instance:
    """The two-job, two-machine example used throughout the tests and demos."""
    return parse_instance("2 2\n2 1 1 5 1 2 3\n1 2 1 8 2 5\n", id="tiny2x2")
