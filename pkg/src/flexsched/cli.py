"""Command-line front end.

Subcommands: gen, dr, exact, train, dssp, solve, bench.  All randomness flows
from --seed (or the seeds in the config file), and --timings zero writes
zeroed wall-clock columns so reruns with one seed produce byte-identical
files.  Exit codes: 0 success, 1 input error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import bench as B
from . import policy as P
from .dispatch import DispatchRule, all_rules, best_dr, solve_dr
from .dssp import HPDomain, dssp
from .exact import SolverBudget, solve_exact
from .instance import GenParams, InstanceFormatError, generate_set, write_instance
from .ppo import TrainConfig, train_policy
from .state import MaskRule, ScheduleError, validate_schedule

DEFAULT_GEN = GenParams(j_min=5, j_max=15, m_min=4, m_max=13, o_min=4, o_max=8,
                        op_max=9, p_bar=25, d=0.2, seed=0)


class InputError(ValueError):
    pass


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


# -- config file ---------------------------------------------------------------


def read_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is not None:
        if not Path(path).is_file():
            raise InputError(f"config file not found: {path}")
        cp.read(path)
    return cp


def gen_params(cp: configparser.ConfigParser, seed: int | None) -> GenParams:
    sec = cp["generator"] if cp.has_section("generator") else {}
    d = DEFAULT_GEN

    def geti(key, default):
        return int(sec.get(key, default)) if hasattr(sec, "get") else default

    base_seed = geti("seed", d.seed)
    return GenParams(
        j_min=geti("j_min", d.j_min), j_max=geti("j_max", d.j_max),
        m_min=geti("m_min", d.m_min), m_max=geti("m_max", d.m_max),
        o_min=geti("o_min", d.o_min), o_max=geti("o_max", d.o_max),
        op_max=geti("op_max", d.op_max), p_bar=geti("p_bar", d.p_bar),
        d=float(sec.get("d", d.d)) if hasattr(sec, "get") else d.d,
        seed=base_seed if seed is None else seed,
    )


def train_config(cp: configparser.ConfigParser, seed: int | None) -> TrainConfig:
    gen = gen_params(cp, seed)
    sec = cp["train"] if cp.has_section("train") else {}
    get = sec.get if hasattr(sec, "get") else (lambda k, v: v)
    mask_variant = get("mask_variant", "")
    mask = MaskRule(mask_variant, int(get("mask_k", 1))) if mask_variant else None
    cfg_seed = int(get("seed", 0)) if seed is None else seed
    return TrainConfig(
        gen=gen,
        n_eps=int(get("n_eps", 3000)),
        n_t=int(get("n_t", 20)),
        n_g=int(get("n_g", 500)),
        n_ins=int(get("n_ins", 50)),
        epochs=int(get("epochs", 3)),
        batch_size=int(get("batch_size", 64)),
        lr=float(get("lr", 3e-4)),
        eps_clip=float(get("eps_clip", 0.2)),
        coef_policy=float(get("coef_policy", 1.0)),
        coef_value=float(get("coef_value", 0.5)),
        coef_entropy=float(get("coef_entropy", 0.01)),
        grad_clip=float(get("grad_clip", 5.0)),
        num_layers=int(get("num_layers", 1)),
        hidden_dim=int(get("hidden_dim", 32)),
        mask=mask,
        seed=cfg_seed,
    )


# -- shared helpers --------------------------------------------------------------


def _collect_instances(paths: list[str]) -> list:
    from .instance import load_instance

    out = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            out.extend(B.load_instance_dir(p))
        elif p.is_file():
            out.append(load_instance(p))
        else:
            raise InputError(f"no such instance path: {raw}")
    if not out:
        raise InputError("no instances given")
    return out


def _load_models(paths: list[str]) -> list[P.PolicyParams]:
    files: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            files.extend(sorted(p.glob("*.bin")))
        elif p.is_file():
            files.append(p)
        else:
            raise InputError(f"no such model path: {raw}")
    if not files:
        raise InputError("no model files found")
    return [P.load_model(f) for f in files]


def _seconds(measured: float, timings: str) -> float:
    return 0.0 if timings == "zero" else measured


# -- subcommands -----------------------------------------------------------------


def cmd_gen(args) -> int:
    cp = read_config(args.config)
    params = gen_params(cp, args.seed)
    rng = np.random.default_rng(params.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    instances = generate_set(params, args.count, rng, prefix=args.prefix)
    for inst in instances:
        _atomic_write(out / f"{inst.id}.fjs", write_instance(inst))
    print(f"wrote {len(instances)} instances to {out}")
    return 0


def cmd_dr(args) -> int:
    instances = _collect_instances(args.instances)
    rules = all_rules() if args.rules == "all" else [
        DispatchRule.parse(r) for r in args.rules.split(",")]
    lines = ["instance,rule,makespan,seconds"]
    for inst in instances:
        for rule in rules:
            t0 = time.perf_counter()
            sched = solve_dr(inst, rule)
            secs = _seconds(time.perf_counter() - t0, args.timings)
            validate_schedule(inst, sched)
            lines.append(f"{inst.id},{rule},{sched.makespan},{secs:.6f}")
    _atomic_write(Path(args.out), "\n".join(lines) + "\n")
    if args.best:
        winner, table = best_dr(instances, rules)
        print("mean makespans:")
        for rule in rules:
            print(f"  {rule}: {table[rule]:.2f}")
        print(f"best rule: {winner}")
    print(f"wrote {args.out}")
    return 0


def cmd_exact(args) -> int:
    instances = _collect_instances(args.instances)
    budget = SolverBudget(max_nodes=args.nodes or None,
                          max_seconds=args.seconds or None)
    lines = ["instance,size,makespan,optimal,nodes,seconds"]
    for inst in instances:
        t0 = time.perf_counter()
        res = solve_exact(inst, budget)
        secs = _seconds(time.perf_counter() - t0, args.timings)
        validate_schedule(inst, res.schedule)
        lines.append(f"{inst.id},{inst.size_label()},{res.makespan},"
                     f"{int(res.optimal)},{res.nodes},{secs:.6f}")
        print(f"{inst.id}: makespan {res.makespan} "
              f"({'optimal' if res.optimal else 'best found'})")
    _atomic_write(Path(args.out), "\n".join(lines) + "\n")
    return 0


def cmd_train(args) -> int:
    cp = read_config(args.config)
    cfg = train_config(cp, args.seed)
    result = train_policy(cfg, checkpoint_dir=args.checkpoint_dir)
    P.save_model(result.params, args.out)
    if args.curve:
        cols = ["episode", "instance", "makespan", "policy_loss", "value_loss",
                "entropy", "clip_fraction", "grad_norm"]
        lines = [",".join(cols)]
        for row in result.curve:
            lines.append(",".join(_fmt(row.get(c, "")) for c in cols))
        _atomic_write(Path(args.curve), "\n".join(lines) + "\n")
    print(f"trained {cfg.n_eps} episodes; model saved to {args.out}")
    return 0


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def cmd_dssp(args) -> int:
    domain = HPDomain.desk_scale() if args.desk_scale else HPDomain()
    budget = SolverBudget(max_nodes=args.nodes, max_seconds=args.seconds)

    def progress(iteration, objective, accepted):
        if objective is None:
            print(f"iteration {iteration}: seed policy")
        else:
            tag = "accepted" if accepted else "rejected"
            print(f"iteration {iteration}: objective {objective:+.4f} ({tag})")

    result = dssp(domain, n_bo=args.n_bo, n_policies=args.n_policies,
                  n_val=args.n_val, seed=args.seed or 0, budget=budget,
                  out_dir=args.out, progress=progress)
    print(f"{len(result.candidates)} candidates, "
          f"selected {len(result.selected)}; run written to {args.out}")
    if result.short_of_policies:
        print("warning: fewer candidates than requested policies; "
              "returning all candidates")
    return 0


def cmd_solve(args) -> int:
    instances = _collect_instances(args.instances)
    models = _load_models(args.model)
    if args.mode == "greedy":
        method = B.method_greedy(models[0])
    elif args.mode.startswith("sample:"):
        method = B.method_sample(models[0], int(args.mode.split(":", 1)[1]),
                                 seed=args.seed or 0)
    elif args.mode == "diverse":
        method = B.method_diverse(models)
    else:
        raise InputError(f"unknown mode {args.mode!r}")
    lines = ["instance,size,method,makespan,seconds"]
    for inst in instances:
        t0 = time.perf_counter()
        sched = B.inference(inst, method)
        secs = _seconds(time.perf_counter() - t0, args.timings)
        validate_schedule(inst, sched)
        lines.append(f"{inst.id},{inst.size_label()},{method.name},"
                     f"{sched.makespan},{secs:.6f}")
        if args.schedule_dir:
            sdir = Path(args.schedule_dir)
            _atomic_write(sdir / f"{inst.id}.csv", sched.to_csv(inst))
            _atomic_write(sdir / f"{inst.id}.json", sched.to_gantt_json(inst))
    _atomic_write(Path(args.out), "\n".join(lines) + "\n")
    print(f"wrote {args.out}")
    return 0


def _bench_methods(args) -> list[B.Method]:
    methods = []
    models = _load_models(args.models) if args.models else []
    for spec in args.methods.split(","):
        spec = spec.strip()
        if spec.startswith("dr:"):
            methods.append(B.method_dr(DispatchRule.parse(spec[3:])))
        elif spec == "random":
            methods.append(B.method_random(seed=args.seed or 0))
        elif spec == "greedy":
            methods.append(B.method_greedy(models[0]))
        elif spec.startswith("sample:"):
            methods.append(B.method_sample(models[0], int(spec.split(":", 1)[1]),
                                           seed=args.seed or 0))
        elif spec == "diverse":
            methods.append(B.method_diverse(models))
        else:
            raise InputError(f"unknown method {spec!r}")
    return methods


def cmd_bench(args) -> int:
    instances = _collect_instances(args.instances)
    if args.refs in ("vdata", "behnke"):
        refs = B.packaged_refs(args.refs)
    elif args.refs == "auto":
        refs = {}
    else:
        p = Path(args.refs)
        if not p.is_file():
            raise InputError(f"reference file not found: {args.refs}")
        refs = B.parse_refs(p.read_text())
    fallback = SolverBudget(max_nodes=args.nodes, max_seconds=args.seconds) \
        if args.refs == "auto" else None
    methods = _bench_methods(args)
    report = B.run_bench(instances, methods, refs, threads=args.threads,
                         fallback_budget=fallback)
    zero = args.timings == "zero"
    _atomic_write(Path(args.out), report.to_csv(zero_seconds=zero))
    if args.markdown:
        _atomic_write(Path(args.markdown), report.to_markdown(zero_seconds=zero))
    for size, meth, gap, secs in report.group_means():
        print(f"{size:>8} {meth:<14} gap {100 * gap:7.2f}%  {secs:8.3f}s")
    print(f"wrote {args.out}")
    return 0


# -- parser -----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flexsched", description=__doc__)
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed; overrides seeds from the config file")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--timings", choices=("measure", "zero"),
                        default="measure",
                        help="zero writes 0.0 in seconds columns, for "
                             "byte-reproducible output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic instances")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--prefix", default="gen")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("dr", help="run dispatching rules")
    p.add_argument("--instances", nargs="+", required=True)
    p.add_argument("--rules", default="all",
                   help="'all' or comma list like FIFO+EET,MWKR+SPT")
    p.add_argument("--out", required=True)
    p.add_argument("--best", action="store_true",
                   help="also print the rule with the lowest mean makespan")
    p.set_defaults(func=cmd_dr)

    p = sub.add_parser("exact", help="branch-and-bound exact solver")
    p.add_argument("--instances", nargs="+", required=True)
    p.add_argument("--nodes", type=int, default=0,
                   help="node budget; 0 means unlimited")
    p.add_argument("--seconds", type=float, default=30.0,
                   help="per-instance time budget; 0 means unlimited")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("train", help="train one policy with PPO")
    p.add_argument("--out", required=True, help="model file (.bin)")
    p.add_argument("--curve", default=None, help="training curve CSV")
    p.add_argument("--checkpoint-dir", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dssp", help="generate a diverse policy set")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--n-bo", type=int, default=8)
    p.add_argument("--n-policies", type=int, default=3)
    p.add_argument("--n-val", type=int, default=10)
    p.add_argument("--desk-scale", action="store_true",
                   help="use the small search domain")
    p.add_argument("--nodes", type=int, default=200_000)
    p.add_argument("--seconds", type=float, default=20.0)
    p.set_defaults(func=cmd_dssp)

    p = sub.add_parser("solve", help="run trained policies on instances")
    p.add_argument("--instances", nargs="+", required=True)
    p.add_argument("--model", nargs="+", required=True)
    p.add_argument("--mode", default="greedy",
                   help="greedy | sample:N | diverse")
    p.add_argument("--out", required=True)
    p.add_argument("--schedule-dir", default=None,
                   help="also export per-instance schedule CSV and JSON")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="benchmark methods against references")
    p.add_argument("--instances", nargs="+", required=True)
    p.add_argument("--refs", default="auto",
                   help="vdata | behnke | auto | path to a reference CSV")
    p.add_argument("--methods", default="dr:FIFO+EET,random")
    p.add_argument("--models", nargs="*", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--markdown", default=None)
    p.add_argument("--nodes", type=int, default=100_000)
    p.add_argument("--seconds", type=float, default=10.0)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ScheduleError, AssertionError, RuntimeError) as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, InstanceFormatError, KeyError,
            P.ModelSchemaError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
