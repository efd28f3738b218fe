"""Heterogeneous graph-attention policy and value network.

Each of L layers refreshes operation, machine, and job embeddings from typed
neighbourhoods: an operation attends to itself, its successor, and its
compatible machines; a machine to every machine and its processable
operations; a job to every job, its remaining operations, and the machines
that can take its frontier operation.  Scores follow the dynamic-attention
order (the learned vector is applied after the LeakyReLU of a summed linear
transform), edge-bearing relations add a transformed edge feature, and each
node normalises over its whole in-neighbourhood with one softmax.  Raw edge
features feed every layer.

The actor scores each machine-job edge from [machine emb, job emb, raw edge
feature]; the critic mean-pools a per-job head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .state import (FEATURE_SCHEMA_VERSION, JOB_FEATS, MACHINE_FEATS,
                    MJ_EDGE_FEATS, OM_EDGE_FEATS, OP_FEATS, GraphSnapshot,
                    MaskRule)
from .tensor import Tape, Tensor

MASK_FILL = -1e30

# relation -> (destination node kind, source node kind, edge feature width)
RELATIONS = {
    "oo": ("op", "op", 0),
    "om": ("op", "machine", OM_EDGE_FEATS),
    "mo": ("machine", "op", OM_EDGE_FEATS),
    "mm": ("machine", "machine", 0),
    "jj": ("job", "job", 0),
    "jo": ("job", "op", 0),
    "mj": ("job", "machine", MJ_EDGE_FEATS),
}

_RAW_DIMS = {"op": OP_FEATS, "machine": MACHINE_FEATS, "job": JOB_FEATS}


class ModelSchemaError(ValueError):
    """Model file does not match this feature schema or expected shapes."""


@dataclass
class RelationParams:
    w1: Tensor            # transforms the attending (destination) node
    w2: Tensor            # transforms the neighbour; also the value transform
    a: Tensor             # scoring vector, length d'
    w3: Tensor | None = None  # transforms the raw edge feature, when present


LayerParams = dict[str, RelationParams]


@dataclass(frozen=True)
class PolicyHyper:
    num_layers: int
    hidden_dim: int
    mask_variant: str | None
    mask_k: int
    schema_version: int = FEATURE_SCHEMA_VERSION
    meta: dict = field(default_factory=dict)

    def mask_rule(self) -> MaskRule | None:
        if self.mask_variant is None:
            return None
        return MaskRule(self.mask_variant, self.mask_k)


@dataclass
class PolicyParams:
    layers: list[LayerParams]
    actor_w1: Tensor
    actor_b1: Tensor
    actor_w2: Tensor
    actor_b2: Tensor
    critic_w1: Tensor
    critic_b1: Tensor
    critic_w2: Tensor
    critic_b2: Tensor
    hyper: PolicyHyper

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.layers):
            for rel in sorted(layer):
                p = layer[rel]
                out.append((f"layer{i}.{rel}.w1", p.w1))
                out.append((f"layer{i}.{rel}.w2", p.w2))
                out.append((f"layer{i}.{rel}.a", p.a))
                if p.w3 is not None:
                    out.append((f"layer{i}.{rel}.w3", p.w3))
        for name in ("actor_w1", "actor_b1", "actor_w2", "actor_b2",
                     "critic_w1", "critic_b1", "critic_w2", "critic_b2"):
            out.append((name, getattr(self, name)))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def _layer_dims(layer_index: int, hidden_dim: int) -> dict[str, int]:
    if layer_index == 0:
        return dict(_RAW_DIMS)
    return {k: hidden_dim for k in _RAW_DIMS}


def init_policy(num_layers: int, hidden_dim: int, mask: MaskRule | None,
                rng: np.random.Generator, meta: dict | None = None) -> PolicyParams:
    """Fresh parameters; weights are uniform in +-sqrt(6/(fan_in+fan_out))."""
    layers: list[LayerParams] = []
    for li in range(num_layers):
        dims = _layer_dims(li, hidden_dim)
        layer: LayerParams = {}
        for rel in sorted(RELATIONS):
            dst, src, edge_dim = RELATIONS[rel]
            layer[rel] = RelationParams(
                w1=T.glorot(rng, hidden_dim, dims[dst]),
                w2=T.glorot(rng, hidden_dim, dims[src]),
                a=T.glorot_vec(rng, hidden_dim),
                w3=T.glorot(rng, hidden_dim, edge_dim) if edge_dim else None,
            )
        layers.append(layer)
    actor_in = 2 * hidden_dim + MJ_EDGE_FEATS
    hyper = PolicyHyper(
        num_layers=num_layers,
        hidden_dim=hidden_dim,
        mask_variant=None if mask is None else mask.variant,
        mask_k=1 if mask is None else mask.k,
        meta=meta or {},
    )
    return PolicyParams(
        layers=layers,
        actor_w1=T.glorot(rng, hidden_dim, actor_in),
        actor_b1=Tensor(np.zeros(hidden_dim)),
        actor_w2=T.glorot(rng, 1, hidden_dim),
        actor_b2=Tensor(np.zeros(1)),
        critic_w1=T.glorot(rng, hidden_dim, hidden_dim),
        critic_b1=Tensor(np.zeros(hidden_dim)),
        critic_w2=T.glorot(rng, 1, hidden_dim),
        critic_b2=Tensor(np.zeros(1)),
        hyper=hyper,
    )


def attention_score(h_i: np.ndarray, h_j: np.ndarray, rel: RelationParams,
                    h_edge: np.ndarray | None = None) -> float:
    """Score of one (node, neighbour) pair, computed directly."""
    z = rel.w1.data @ h_i + rel.w2.data @ h_j
    if h_edge is not None:
        if rel.w3 is None:
            raise ValueError("relation has no edge transform")
        z = z + rel.w3.data @ h_edge
    if z.shape != rel.a.data.shape:
        raise ValueError(f"dimension mismatch: {z.shape} vs {rel.a.data.shape}")
    act = np.where(z > 0, z, T.LEAKY_SLOPE * z)
    return float(rel.a.data @ act)


def _dense_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(n, dtype=np.int64)
    return np.repeat(idx, n), np.tile(idx, n)


class _Neighborhood:
    """Per-relation attention pooling for one node type.

    Each relation's scores are normalised over that relation's neighbours of
    the node (so coefficients sum to one per relation), the values are
    convexly combined, and the per-relation results are summed before the
    final nonlinearity.  Splitting self/successor into one relation and the
    edge-bearing relations into their own keeps identical neighbours
    interchangeable.
    """

    def __init__(self, num_nodes: int, tape: Tape | None):
        self.num_nodes = num_nodes
        self.tape = tape
        self.pooled: list[Tensor] = []
        self.alphas: list[tuple[str, np.ndarray, np.ndarray]] = []

    def add(self, rel: str, dst: np.ndarray, q_rows: Tensor,
            value_rows: Tensor, a: Tensor):
        dst = np.asarray(dst, dtype=np.int64)
        pre = T.leaky_relu(T.add(q_rows, value_rows, self.tape), self.tape)
        scores = T.matmul(pre, a, self.tape)
        alpha = T.segment_softmax(scores, dst, self.num_nodes, self.tape)
        self.alphas.append((rel, dst, alpha.data))
        self.pooled.append(T.segment_sum(
            T.scale_rows(value_rows, alpha, self.tape),
            dst, self.num_nodes, self.tape))

    def aggregate(self) -> Tensor:
        out = self.pooled[0]
        for part in self.pooled[1:]:
            out = T.add(out, part, self.tape)
        return T.elu(out, self.tape)


def embed(snap: GraphSnapshot, params: PolicyParams, tape: Tape | None = None,
          alphas_out: list | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Run all layers; returns (op, machine, job) embedding tables.

    When alphas_out is a list, ("op"|"machine"|"job", destinations,
    coefficients) triples are appended per layer, for inspection.
    """
    n_op = len(snap.op_feat)
    n_m = len(snap.machine_feat)
    n_j = len(snap.job_feat)
    h_op = Tensor(snap.op_feat)
    h_m = Tensor(snap.machine_feat)
    h_j = Tensor(snap.job_feat)
    e_om = Tensor(snap.om_feat)
    e_mj = Tensor(snap.mj_feat)

    op_ids = np.arange(n_op, dtype=np.int64)
    has_succ = snap.op_succ >= 0
    succ_dst = op_ids[has_succ]
    succ_src = snap.op_succ[has_succ]
    mm_dst, mm_src = _dense_pairs(n_m)
    jj_dst, jj_src = _dense_pairs(n_j)

    oo_dst = np.concatenate([op_ids, succ_dst])
    oo_src = np.concatenate([op_ids, succ_src])

    for layer in params.layers:
        def scored(rel: str, h_dst: Tensor, h_src: Tensor,
                   dst: np.ndarray, src: np.ndarray,
                   e_feat: Tensor | None = None):
            p = layer[rel]
            q = T.gather_rows(T.linear(h_dst, p.w1, tape), dst, tape)
            v = T.gather_rows(T.linear(h_src, p.w2, tape), src, tape)
            if e_feat is not None:
                v = T.add(v, T.linear(e_feat, p.w3, tape), tape)
            return q, v, p.a

        # operations: self and successor share one relation, machines another
        hood = _Neighborhood(n_op, tape)
        hood.add("oo", oo_dst, *scored("oo", h_op, h_op, oo_dst, oo_src))
        hood.add("om", snap.om_op, *scored("om", h_op, h_m,
                                           snap.om_op, snap.om_machine, e_om))
        new_op = hood.aggregate()
        _collect(alphas_out, "op", hood)

        # machines: all machines, own operations
        hood = _Neighborhood(n_m, tape)
        hood.add("mm", mm_dst, *scored("mm", h_m, h_m, mm_dst, mm_src))
        if len(snap.om_op):
            hood.add("mo", snap.om_machine, *scored("mo", h_m, h_op,
                                                    snap.om_machine, snap.om_op,
                                                    e_om))
        new_m = hood.aggregate()
        _collect(alphas_out, "machine", hood)

        # jobs: all jobs, remaining operations, frontier machines
        hood = _Neighborhood(n_j, tape)
        hood.add("jj", jj_dst, *scored("jj", h_j, h_j, jj_dst, jj_src))
        if len(snap.op_job):
            hood.add("jo", snap.op_job, *scored("jo", h_j, h_op,
                                                snap.op_job, op_ids))
        if len(snap.mj_machine):
            hood.add("mj", snap.mj_job, *scored("mj", h_j, h_m,
                                                snap.mj_job, snap.mj_machine,
                                                e_mj))
        new_j = hood.aggregate()
        _collect(alphas_out, "job", hood)

        h_op, h_m, h_j = new_op, new_m, new_j
    return h_op, h_m, h_j


def _collect(alphas_out, kind: str, hood: _Neighborhood) -> None:
    if alphas_out is not None:
        for rel, dst, alpha in hood.alphas:
            alphas_out.append((f"{kind}.{rel}", dst, alpha))


def actor_logits(snap: GraphSnapshot, params: PolicyParams,
                 tape: Tape | None = None,
                 embeddings: tuple[Tensor, Tensor, Tensor] | None = None) -> Tensor:
    """Raw score per machine-job edge, in snapshot action order."""
    if embeddings is None:
        embeddings = embed(snap, params, tape)
    _, h_m, h_j = embeddings
    x = T.concat(
        [
            T.gather_rows(h_m, snap.mj_machine, tape),
            T.gather_rows(h_j, snap.mj_job, tape),
            Tensor(snap.mj_feat),
        ],
        axis=1,
        tape=tape,
    )
    hid = T.tanh(T.add_bias(T.linear(x, params.actor_w1, tape), params.actor_b1, tape), tape)
    out = T.add_bias(T.linear(hid, params.actor_w2, tape), params.actor_b2, tape)
    return T.reshape(out, (-1,), tape)


@dataclass
class ActionDistribution:
    """Masked softmax over the action edges, with tape-backed terms for the
    surrogate loss (log-probabilities and entropy)."""

    probs: np.ndarray       # exact zeros at masked actions
    shifted: Tensor         # logits + mask - max, on tape
    z: Tensor               # partition sum, on tape
    log_z: Tensor           # log partition, on tape
    _tape: Tape | None

    def log_prob(self, index: int) -> Tensor:
        return T.sub(T.pick(self.shifted, index, self._tape), self.log_z, self._tape)

    def entropy(self) -> Tensor:
        e = T.exp(self.shifted, self._tape)
        p_dot_s = T.div(T.total(T.mul(e, self.shifted, self._tape), self._tape),
                        self.z, self._tape)
        return T.sub(self.log_z, p_dot_s, self._tape)

    def greedy(self) -> int:
        return int(np.argmax(self.probs))

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.choice(len(self.probs), p=self.probs))


def action_distribution(snap: GraphSnapshot, params: PolicyParams,
                        allowed: np.ndarray, tape: Tape | None = None,
                        embeddings=None) -> ActionDistribution:
    if not allowed.any():
        raise RuntimeError("all actions masked; mask invariant violated")
    logits = actor_logits(snap, params, tape, embeddings)
    fill = np.where(allowed, 0.0, MASK_FILL)
    masked = T.add(logits, Tensor(fill), tape)
    shift = float(masked.data.max())
    shifted = T.add_const(masked, -shift, tape)
    z = T.total(T.exp(shifted, tape), tape)
    log_z = T.log(z, tape)
    probs = np.exp(shifted.data) / float(z.data)
    return ActionDistribution(probs=probs, shifted=shifted, z=z, log_z=log_z,
                              _tape=tape)


def critic_value(snap: GraphSnapshot, params: PolicyParams,
                 tape: Tape | None = None, embeddings=None) -> Tensor:
    """Mean over jobs of the value head applied to each job embedding."""
    if embeddings is None:
        embeddings = embed(snap, params, tape)
    _, _, h_j = embeddings
    hid = T.tanh(T.add_bias(T.linear(h_j, params.critic_w1, tape),
                            params.critic_b1, tape), tape)
    out = T.add_bias(T.linear(hid, params.critic_w2, tape), params.critic_b2, tape)
    return T.mean(out, tape)


# ---------------------------------------------------------------------------
# model files: binary weights + JSON hyperparameter sidecar
# ---------------------------------------------------------------------------


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_model(params: PolicyParams, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    T.save_arrays(path, [(n, t.data) for n, t in params.named_parameters()])
    h = params.hyper
    manifest = {
        "schema_version": h.schema_version,
        "num_layers": h.num_layers,
        "hidden_dim": h.hidden_dim,
        "mask_variant": h.mask_variant,
        "mask_k": h.mask_k,
        "meta": h.meta,
    }
    _sidecar(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_model(path) -> PolicyParams:
    path = Path(path)
    manifest = json.loads(_sidecar(path).read_text())
    if manifest.get("schema_version") != FEATURE_SCHEMA_VERSION:
        raise ModelSchemaError(
            f"model was written for feature schema {manifest.get('schema_version')}, "
            f"this build reads schema {FEATURE_SCHEMA_VERSION}"
        )
    hyper = PolicyHyper(
        num_layers=int(manifest["num_layers"]),
        hidden_dim=int(manifest["hidden_dim"]),
        mask_variant=manifest["mask_variant"],
        mask_k=int(manifest["mask_k"]),
        schema_version=int(manifest["schema_version"]),
        meta=manifest.get("meta", {}),
    )
    skeleton = init_policy(hyper.num_layers, hyper.hidden_dim, hyper.mask_rule(),
                           np.random.default_rng(0), meta=hyper.meta)
    expected = dict(skeleton.named_parameters())
    loaded = dict(T.load_arrays(path))
    if set(loaded) != set(expected):
        raise ModelSchemaError("parameter names do not match this architecture")
    for name, tensor in expected.items():
        arr = loaded[name]
        if arr.shape != tensor.data.shape:
            raise ModelSchemaError(
                f"{name}: stored shape {arr.shape} != expected {tensor.data.shape}")
        tensor.data = arr
    skeleton.hyper = hyper
    return skeleton
