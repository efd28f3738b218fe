"""Benchmark harness: run solution methods over instance sets, check every
schedule with the independent validator, and report gaps against reference
makespans grouped by instance size.

Reference tables for the two public benchmark sets ship with the package
(refs/vdata.csv carries literature upper bounds, refs/behnke.csv the
long-budget solver values); unknown instances can fall back to a
branch-and-bound reference computed on the spot.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import policy as P
from .dispatch import DispatchRule, solve_dr
from .exact import SolverBudget, solve_exact
from .instance import Instance, load_instance
from .state import GraphState, Schedule, random_chooser, rollout, validate_schedule


@dataclass(frozen=True)
class RefEntry:
    instance: str
    size: str
    reference: int
    dr_best: int | None
    source: str


def packaged_refs(which: str) -> dict[str, RefEntry]:
    """Reference table shipped with the package: 'vdata' or 'behnke'."""
    text = resources.files("flexsched.refs").joinpath(f"{which}.csv").read_text()
    return parse_refs(text)


def parse_refs(text: str) -> dict[str, RefEntry]:
    out = {}
    for row in csv.DictReader(io.StringIO(text)):
        ref = int(row["reference"])
        if ref <= 0:
            raise ValueError(f"non-positive reference for {row['instance']}")
        dr = row.get("dr_best")
        out[row["instance"]] = RefEntry(
            instance=row["instance"],
            size=row["size"],
            reference=ref,
            dr_best=int(dr) if dr not in (None, "") else None,
            source=row.get("source", "unknown"),
        )
    return out


def solver_reference(inst: Instance, budget: SolverBudget) -> RefEntry:
    res = solve_exact(inst, budget)
    tag = "bnb_optimal" if res.optimal else "bnb_best_found"
    return RefEntry(inst.id, inst.size_label(), res.makespan, None, tag)


# -- solution methods ----------------------------------------------------------


@dataclass(frozen=True)
class Method:
    """A named way of producing one schedule for one instance."""

    name: str
    kind: str                      # dr | random | greedy | sample | diverse
    rule: DispatchRule | None = None
    models: tuple = ()
    samples: int = 1
    seed: int = 0


def method_dr(rule: DispatchRule) -> Method:
    return Method(name=f"dr:{rule}", kind="dr", rule=rule)


def method_random(seed: int = 0) -> Method:
    return Method(name="random", kind="random", seed=seed)


def method_greedy(params: P.PolicyParams) -> Method:
    return Method(name="greedy", kind="greedy", models=(params,))


def method_sample(params: P.PolicyParams, n: int, seed: int = 0) -> Method:
    return Method(name=f"sample:{n}", kind="sample", models=(params,),
                  samples=n, seed=seed)


def method_diverse(models: list[P.PolicyParams]) -> Method:
    return Method(name=f"diverse:{len(models)}", kind="diverse",
                  models=tuple(models))


def _policy_chooser(params: P.PolicyParams, rng: np.random.Generator | None):
    def choose(state: GraphState, actions, allowed):
        dist = P.action_distribution(state.snapshot(), params, allowed)
        return dist.greedy() if rng is None else dist.sample(rng)

    return choose


def inference(inst: Instance, method: Method) -> Schedule:
    """Produce one schedule; deterministic for a fixed method and instance."""
    if method.kind == "dr":
        return solve_dr(inst, method.rule)
    if method.kind == "random":
        rng = np.random.default_rng([method.seed, _name_key(inst.id)])
        return rollout(inst, random_chooser(rng))
    if method.kind == "greedy":
        params = method.models[0]
        return rollout(inst, _policy_chooser(params, None), params.hyper.mask_rule())
    if method.kind == "sample":
        params = method.models[0]
        rule = params.hyper.mask_rule()
        rng = np.random.default_rng([method.seed, _name_key(inst.id)])
        best = None
        for _ in range(method.samples):
            sched = rollout(inst, _policy_chooser(params, rng), rule)
            if best is None or sched.makespan < best.makespan:
                best = sched
        return best
    if method.kind == "diverse":
        best = None
        for params in method.models:
            sched = rollout(inst, _policy_chooser(params, None),
                            params.hyper.mask_rule())
            if best is None or sched.makespan < best.makespan:
                best = sched
        return best
    raise ValueError(f"unknown method kind {method.kind!r}")


def _name_key(name: str) -> int:
    return int.from_bytes(name.encode("utf-8")[-8:] or b"0", "little")


# -- report ---------------------------------------------------------------------


@dataclass
class ReportRow:
    instance: str
    size: str
    method: str
    makespan: int
    gap: float
    seconds: float


@dataclass
class GapReport:
    rows: list[ReportRow]

    def group_means(self) -> list[tuple[str, str, float, float]]:
        """(size, method, mean gap, mean seconds), in first-seen size order."""
        order: list[tuple[str, str]] = []
        acc: dict[tuple[str, str], list[ReportRow]] = {}
        for row in self.rows:
            key = (row.size, row.method)
            if key not in acc:
                acc[key] = []
                order.append(key)
            acc[key].append(row)
        out = []
        for size, method in order:
            rows = acc[(size, method)]
            out.append((size, method,
                        float(np.mean([r.gap for r in rows])),
                        float(np.mean([r.seconds for r in rows]))))
        return out

    def mean_gap(self, method: str) -> float:
        gaps = [r.gap for r in self.rows if r.method == method]
        return float(np.mean(gaps))

    def to_csv(self, zero_seconds: bool = False) -> str:
        out = ["instance,size,method,makespan,gap,seconds"]
        for r in self.rows:
            secs = 0.0 if zero_seconds else r.seconds
            out.append(f"{r.instance},{r.size},{r.method},{r.makespan},"
                       f"{r.gap:.6f},{secs:.6f}")
        return "\n".join(out) + "\n"

    def to_markdown(self, zero_seconds: bool = False) -> str:
        methods: list[str] = []
        for r in self.rows:
            if r.method not in methods:
                methods.append(r.method)
        header = "| Size | Obj | " + " | ".join(methods) + " |"
        rule = "|---" * (len(methods) + 2) + "|"
        means = {(s, m): (g, t) for s, m, g, t in self.group_means()}
        sizes: list[str] = []
        for r in self.rows:
            if r.size not in sizes:
                sizes.append(r.size)
        lines = [header, rule]
        for size in sizes:
            gaps, times = [], []
            for m in methods:
                g, t = means.get((size, m), (float("nan"), float("nan")))
                gaps.append(f"{100 * g:.2f}")
                times.append("0.00" if zero_seconds else f"{t:.2f}")
            lines.append(f"| {size} | Gap(%) | " + " | ".join(gaps) + " |")
            lines.append(f"| {size} | Time (s.) | " + " | ".join(times) + " |")
        return "\n".join(lines) + "\n"


def _run_one(args):
    inst, methods, ref = args
    rows = []
    for method in methods:
        t0 = time.perf_counter()
        sched = inference(inst, method)
        seconds = time.perf_counter() - t0
        validate_schedule(inst, sched)
        gap = (sched.makespan - ref.reference) / ref.reference
        rows.append(ReportRow(inst.id, ref.size, method.name,
                              sched.makespan, gap, seconds))
    return rows


def run_bench(instances: list[Instance], methods: list[Method],
              references: dict[str, RefEntry], threads: int = 1,
              fallback_budget: SolverBudget | None = None) -> GapReport:
    """Run every method over every instance.

    Missing references raise, unless fallback_budget is given, in which case
    a branch-and-bound reference is computed and tagged as such.  Every
    schedule is validated before it enters the report.
    """
    refs = []
    for inst in instances:
        ref = references.get(inst.id)
        if ref is None:
            if fallback_budget is None:
                raise KeyError(f"no reference makespan for instance {inst.id!r}")
            ref = solver_reference(inst, fallback_budget)
        if ref.size != inst.size_label():
            ref = RefEntry(ref.instance, inst.size_label(), ref.reference,
                           ref.dr_best, ref.source)
        refs.append(ref)
    jobs = list(zip(instances, [methods] * len(instances), refs))
    if threads > 1:
        import multiprocessing as mp

        with mp.Pool(threads) as pool:
            chunks = pool.map(_run_one, jobs)
    else:
        chunks = [_run_one(j) for j in jobs]
    return GapReport([row for chunk in chunks for row in chunk])


def load_instance_dir(path) -> list[Instance]:
    """All parseable benchmark files in a directory, sorted by name."""
    path = Path(path)
    files = sorted(p for p in path.iterdir()
                   if p.suffix in (".fjs", ".txt") and p.is_file())
    if not files:
        raise FileNotFoundError(f"no .fjs/.txt instances under {path}")
    return [load_instance(p) for p in files]
