"""Diverse scheduling-policy generation.

A validation set with exact reference makespans anchors the search.  Each
iteration draws a hyperparameter sample (training-set shape, network size,
optimisation settings, masking rule), trains a policy, and scores it by the
largest improvement it offers over the running best gap on any validation
instance.  Positive scores enter the candidate set and tighten the best-gap
vector; every outcome updates the sampler, a quantile-split kernel-density
model that proposes where the improvement objective looks promising.
Finally the candidates' gap vectors are clustered and the member nearest each
centroid is kept for parallel inference.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import policy as P
from .exact import SolverBudget, solve_exact
from .instance import GenParams, Instance, generate_instance
from .ppo import TrainConfig, train_policy
from .state import EARLIEST_FINISH, EARLIEST_START, MaskRule, rollout


# -- hyperparameter domain ----------------------------------------------------


@dataclass(frozen=True)
class IntRange:
    lo: int
    hi: int

    def sample(self, rng):
        return int(rng.integers(self.lo, self.hi + 1))

    def contains(self, v):
        return self.lo <= v <= self.hi


@dataclass(frozen=True)
class LogRange:
    """Uniform in log10 space, for scale-like values such as learning rates."""

    lo: float
    hi: float

    def sample(self, rng):
        return float(10 ** rng.uniform(math.log10(self.lo), math.log10(self.hi)))

    def contains(self, v):
        return self.lo * (1 - 1e-12) <= v <= self.hi * (1 + 1e-12)

    def transform(self, v):
        return math.log10(v)

    def untransform(self, t):
        return float(10 ** t)


@dataclass(frozen=True)
class Choice:
    values: tuple

    def sample(self, rng):
        return self.values[int(rng.integers(len(self.values)))]

    def contains(self, v):
        return v in self.values


@dataclass(frozen=True)
class HPDomain:
    """Sampled dimensions plus the fixed generator settings they share."""

    j_min: IntRange = IntRange(5, 9)
    j_max: IntRange = IntRange(10, 15)
    m_min: IntRange = IntRange(4, 7)
    m_max: IntRange = IntRange(9, 13)
    op_max: IntRange = IntRange(5, 9)
    p_bar: IntRange = IntRange(8, 25)
    num_layers: IntRange = IntRange(1, 2)
    hidden_dim: Choice = Choice((32, 64, 128))
    n_eps: IntRange = IntRange(10_000, 15_000)
    lr: LogRange = LogRange(1e-4, 1e-3)
    batch_size: Choice = Choice((64, 128, 256))
    n_t: IntRange = IntRange(10, 100)
    mask_variant: Choice = Choice((EARLIEST_START, EARLIEST_FINISH))
    mask_k: IntRange = IntRange(1, 3)
    # not part of the search space
    o_min: int = 4     # operations-per-job bounds are not pinned anywhere;
    o_max: int = 8     # 4 matches the fixed minimum option count
    d: float = 0.2
    n_g: int = 500
    n_ins: int = 50
    epochs: int = 3

    @staticmethod
    def desk_scale() -> "HPDomain":
        """Small enough to train and solve exactly on a workstation."""
        return HPDomain(
            j_min=IntRange(2, 3),
            j_max=IntRange(3, 4),
            m_min=IntRange(2, 2),
            m_max=IntRange(2, 3),
            op_max=IntRange(2, 3),
            p_bar=IntRange(5, 12),
            num_layers=IntRange(1, 1),
            hidden_dim=Choice((8, 16)),
            n_eps=IntRange(150, 400),
            lr=LogRange(3e-4, 1.5e-3),
            batch_size=Choice((32, 64)),
            n_t=IntRange(10, 25),
            mask_k=IntRange(1, 3),
            o_min=2,
            o_max=3,
            n_g=200,
            n_ins=20,
        )

    def dimensions(self) -> dict:
        out = {}
        for f in fields(self):
            spec = getattr(self, f.name)
            if isinstance(spec, (IntRange, LogRange, Choice)):
                out[f.name] = spec
        return out

    def sample(self, rng: np.random.Generator) -> dict:
        return {name: spec.sample(rng) for name, spec in self.dimensions().items()}

    def contains(self, point: dict) -> bool:
        dims = self.dimensions()
        return set(point) == set(dims) and all(
            dims[k].contains(v) for k, v in point.items())

    def to_train_config(self, point: dict, seed: int) -> TrainConfig:
        gen = GenParams(
            j_min=point["j_min"], j_max=point["j_max"],
            m_min=point["m_min"], m_max=point["m_max"],
            o_min=self.o_min, o_max=self.o_max,
            op_max=point["op_max"], p_bar=point["p_bar"],
            d=self.d, seed=seed,
        )
        return TrainConfig(
            gen=gen,
            n_eps=point["n_eps"],
            n_t=point["n_t"],
            n_g=self.n_g,
            n_ins=self.n_ins,
            epochs=self.epochs,
            batch_size=point["batch_size"],
            lr=point["lr"],
            num_layers=point["num_layers"],
            hidden_dim=point["hidden_dim"],
            mask=MaskRule(point["mask_variant"], point["mask_k"]),
            seed=seed,
        )

    def validation_gen(self, seed: int) -> GenParams:
        """Generator spanning the whole domain, for the validation set."""
        return GenParams(
            j_min=self.j_min.lo, j_max=self.j_max.hi,
            m_min=self.m_min.lo, m_max=self.m_max.hi,
            o_min=self.o_min, o_max=self.o_max,
            op_max=self.op_max.hi, p_bar=self.p_bar.hi,
            d=self.d, seed=seed,
        )


# -- quantile-split kernel-density sampler ------------------------------------


class TpeSampler:
    """Proposes points maximising the density ratio between the top quantile
    of observed objective values and the rest.

    Numeric dimensions get Gaussian kernels at the observed values (log space
    for LogRange) with a small uniform floor; categorical dimensions use
    Laplace-smoothed frequencies.  The first n_startup proposals are uniform.
    """

    def __init__(self, domain: HPDomain, rng: np.random.Generator,
                 gamma: float = 0.25, n_candidates: int = 24,
                 n_startup: int = 4):
        self.domain = domain
        self.rng = rng
        self.gamma = gamma
        self.n_candidates = n_candidates
        self.n_startup = n_startup
        self.history: list[tuple[dict, float]] = []

    def update(self, point: dict, objective: float) -> None:
        if not self.domain.contains(point):
            raise ValueError("observation outside the domain")
        self.history.append((dict(point), float(objective)))

    def propose(self) -> dict:
        if len(self.history) < self.n_startup:
            return self.domain.sample(self.rng)
        ranked = sorted(self.history, key=lambda h: -h[1])
        n_good = max(1, math.ceil(self.gamma * len(ranked)))
        good = [p for p, _ in ranked[:n_good]]
        bad = [p for p, _ in ranked[n_good:]] or good
        best_point, best_score = None, -np.inf
        for _ in range(self.n_candidates):
            cand = {}
            score = 0.0
            for name, spec in self.domain.dimensions().items():
                g_vals = [p[name] for p in good]
                b_vals = [p[name] for p in bad]
                value = self._draw(spec, g_vals)
                cand[name] = value
                score += math.log(self._density(spec, g_vals, value))
                score -= math.log(self._density(spec, b_vals, value))
            if score > best_score:
                best_point, best_score = cand, score
        return best_point

    # numeric kernels work on a transformed axis: identity for IntRange,
    # log10 for LogRange

    def _bounds(self, spec):
        if isinstance(spec, LogRange):
            return spec.transform(spec.lo), spec.transform(spec.hi)
        return float(spec.lo), float(spec.hi)

    def _bandwidth(self, spec, n_points: int) -> float:
        lo, hi = self._bounds(spec)
        width = max(hi - lo, 1e-9)
        return width / (1.0 + math.sqrt(n_points))

    def _draw(self, spec, values):
        if isinstance(spec, Choice):
            counts = np.array([1.0 + sum(v == c for v in values)
                               for c in spec.values])
            return spec.values[int(self.rng.choice(len(spec.values),
                                                   p=counts / counts.sum()))]
        lo, hi = self._bounds(spec)
        center = values[int(self.rng.integers(len(values)))]
        t = center if isinstance(spec, IntRange) else spec.transform(center)
        t = float(np.clip(self.rng.normal(t, self._bandwidth(spec, len(values))),
                          lo, hi))
        if isinstance(spec, IntRange):
            return int(np.clip(round(t), spec.lo, spec.hi))
        return spec.untransform(t)

    def _density(self, spec, values, x) -> float:
        if isinstance(spec, Choice):
            counts = {c: 1.0 for c in spec.values}
            for v in values:
                counts[v] += 1.0
            return counts[x] / sum(counts.values())
        lo, hi = self._bounds(spec)
        t = float(x) if isinstance(spec, IntRange) else spec.transform(x)
        bw = self._bandwidth(spec, len(values))
        pts = np.array([v if isinstance(spec, IntRange) else spec.transform(v)
                        for v in values])
        kern = np.exp(-0.5 * ((t - pts) / bw) ** 2) / (bw * math.sqrt(2 * math.pi))
        floor = 0.05 / max(hi - lo, 1e-9)
        return float(kern.mean() + floor)


# -- validation set and policy evaluation -------------------------------------


@dataclass
class ValidationSet:
    instances: list[Instance]
    makespans: np.ndarray
    optimal: np.ndarray       # per instance: solver proved optimality


def build_validation(gen: GenParams, n_v: int, budget: SolverBudget,
                     rng: np.random.Generator) -> ValidationSet:
    """n_v instances with exact (or flagged best-found) reference makespans."""
    if n_v < 1:
        raise ValueError("validation set must not be empty")
    instances, mks, opts = [], [], []
    for i in range(n_v):
        inst = generate_instance(gen, rng, id=f"val_{i:03d}")
        res = solve_exact(inst, budget)
        instances.append(inst)
        mks.append(res.makespan)
        opts.append(res.optimal)
    return ValidationSet(instances, np.array(mks, dtype=np.int64),
                         np.array(opts, dtype=bool))


def greedy_makespan(inst: Instance, params: P.PolicyParams) -> int:
    rule = params.hyper.mask_rule()

    def choose(state, actions, allowed):
        dist = P.action_distribution(state.snapshot(), params, allowed)
        return dist.greedy()

    return rollout(inst, choose, rule).makespan


def eval_policy(vset: ValidationSet, params: P.PolicyParams) -> np.ndarray:
    """Greedy-rollout gap against the reference makespan, per instance."""
    gaps = np.zeros(len(vset.instances))
    for i, inst in enumerate(vset.instances):
        mk = greedy_makespan(inst, params)
        gaps[i] = (mk - vset.makespans[i]) / vset.makespans[i]
    return gaps


def improvement(best_gaps: np.ndarray, gaps: np.ndarray) -> float:
    """Largest per-instance gain a new gap vector offers over the running
    best; positive means it beats the candidate set somewhere."""
    return float((best_gaps - gaps).max())


# -- clustering ----------------------------------------------------------------


def cluster_policies(gap_matrix: np.ndarray, n_clusters: int,
                     rng: np.random.Generator, restarts: int = 50,
                     ) -> tuple[np.ndarray, list[int]]:
    """Group candidate gap vectors and pick the member nearest each centroid.

    Plain Lloyd iterations from `restarts` random starts; ties in the
    representative choice break on the lowest candidate index.
    """
    points = np.asarray(gap_matrix, dtype=float)
    n = len(points)
    if n < n_clusters:
        raise ValueError(f"{n} candidates cannot fill {n_clusters} clusters")
    best_labels, best_inertia = None, np.inf
    for _ in range(restarts):
        centroids = points[rng.choice(n, size=n_clusters, replace=False)].copy()
        labels = np.zeros(n, dtype=np.int64)
        for _ in range(100):
            dists = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
            new_labels = dists.argmin(axis=1)
            for c in range(n_clusters):
                member = new_labels == c
                if member.any():
                    centroids[c] = points[member].mean(axis=0)
                else:
                    centroids[c] = points[dists.min(axis=1).argmax()]
            if (new_labels == labels).all():
                break
            labels = new_labels
        inertia = float(((points - centroids[labels]) ** 2).sum())
        if inertia < best_inertia:
            best_inertia, best_labels = inertia, labels.copy()
    labels = best_labels
    reps = []
    for c in range(n_clusters):
        members = np.flatnonzero(labels == c)
        if len(members) == 0:
            continue
        centroid = points[members].mean(axis=0)
        d = ((points[members] - centroid) ** 2).sum(axis=1)
        reps.append(int(members[d.argmin()]))
    return labels, reps


# -- the full loop --------------------------------------------------------------


@dataclass
class DsspResult:
    selected: list[int]                  # candidate indices chosen for inference
    candidates: list[P.PolicyParams]
    gap_matrix: np.ndarray               # candidates x validation instances
    best_gaps: np.ndarray                # final elementwise best over candidates
    validation: ValidationSet
    manifest: dict
    short_of_policies: bool = False


def dssp(domain: HPDomain, n_bo: int, n_policies: int, n_val: int,
         seed: int = 0, budget: SolverBudget | None = None,
         out_dir=None, progress=None) -> DsspResult:
    """Seed policy, improvement-driven candidate loop, cluster selection."""
    budget = budget or SolverBudget(max_nodes=200_000, max_seconds=20.0)
    seeds = np.random.SeedSequence(seed).spawn(3)
    rng_val = np.random.default_rng(seeds[0])
    rng_tpe = np.random.default_rng(seeds[1])
    rng_cluster = np.random.default_rng(seeds[2])

    vset = build_validation(domain.validation_gen(seed), n_val, budget, rng_val)
    sampler = TpeSampler(domain, rng_tpe)
    manifest = {
        "seed": seed,
        "n_bo": n_bo,
        "n_policies": n_policies,
        "validation": {
            "makespans": vset.makespans.tolist(),
            "optimal": vset.optimal.tolist(),
        },
        "iterations": [],
    }

    def make(point: dict, iteration: int) -> P.PolicyParams:
        cfg = domain.to_train_config(point, seed=seed * 1000 + iteration)
        return train_policy(cfg).params

    point0 = sampler.propose()
    pol0 = make(point0, 0)
    best_gaps = eval_policy(vset, pol0)
    candidates = [pol0]
    gap_rows = [best_gaps.copy()]
    manifest["iterations"].append({
        "iteration": 0, "point": point0, "objective": None, "accepted": True,
        "gaps": best_gaps.tolist(),
    })
    if progress is not None:
        progress(0, None, True)

    for j in range(1, n_bo + 1):
        point = sampler.propose()
        pol = make(point, j)
        gaps = eval_policy(vset, pol)
        objective = improvement(best_gaps, gaps)
        accepted = objective > 0
        if accepted:
            candidates.append(pol)
            gap_rows.append(gaps.copy())
            best_gaps = np.minimum(best_gaps, gaps)
        sampler.update(point, objective)
        manifest["iterations"].append({
            "iteration": j, "point": point, "objective": objective,
            "accepted": accepted, "gaps": gaps.tolist(),
        })
        if progress is not None:
            progress(j, objective, accepted)

    gap_matrix = np.vstack(gap_rows)
    short = len(candidates) < n_policies
    if short:
        selected = list(range(len(candidates)))
        labels = np.arange(len(candidates), dtype=np.int64)
    else:
        labels, selected = cluster_policies(gap_matrix, n_policies, rng_cluster)
    manifest["clusters"] = labels.tolist()
    manifest["selected"] = [int(i) for i in selected]
    manifest["best_gaps"] = best_gaps.tolist()
    manifest["short_of_policies"] = short

    result = DsspResult(
        selected=list(selected),
        candidates=candidates,
        gap_matrix=gap_matrix,
        best_gaps=best_gaps,
        validation=vset,
        manifest=manifest,
        short_of_policies=short,
    )
    if out_dir is not None:
        _write_run(result, Path(out_dir))
    return result


def _write_run(result: DsspResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(
        json.dumps(result.manifest, indent=2, sort_keys=True) + "\n")
    store = out_dir / "policies"
    for i, params in enumerate(result.candidates):
        P.save_model(params, store / f"candidate_{i:03d}.bin")
    for rank, idx in enumerate(result.selected):
        P.save_model(result.candidates[idx],
                     store / f"selected_{rank:02d}.bin")
