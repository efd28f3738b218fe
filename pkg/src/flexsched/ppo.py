"""Clipped-surrogate policy optimisation over scheduling episodes.

Episodes are collected by sampling the masked action distribution; every n_t
episodes the buffered experience trains actor and critic for K epochs in
minibatches, and every n_g episodes the synthetic training set is redrawn.
Returns use an undiscounted sum, so an episode's return equals minus its
makespan.  Buffers keep (instance, action indices) and are replayed once per
update to rebuild feature snapshots, instead of storing every graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import policy as P
from . import tensor as T
from .instance import GenParams, Instance, generate_set
from .state import GraphState, MaskRule


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    gen: GenParams
    n_eps: int = 3000
    n_t: int = 20                # episodes between updates
    n_g: int = 500               # episodes between instance-set regeneration
    n_ins: int = 50              # instances per generated set
    epochs: int = 3              # K
    batch_size: int = 64         # b
    lr: float = 3e-4
    gamma: float = 1.0
    eps_clip: float = 0.2
    coef_policy: float = 1.0
    coef_value: float = 0.5
    coef_entropy: float = 0.01
    grad_clip: float = 5.0
    num_layers: int = 1
    hidden_dim: int = 32
    mask: MaskRule | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_eps < 0 or self.n_t < 1 or self.batch_size < 1:
            raise ValueError("bad episode/batch configuration")
        if self.n_t > self.n_eps and self.n_eps > 0:
            raise ValueError("n_t must not exceed n_eps")


@dataclass
class Episode:
    inst: Instance
    action_indices: list[int]
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray          # integers; sums to -makespan
    returns: np.ndarray
    makespan: int


@dataclass
class RolloutBuffer:
    episodes: list[Episode] = field(default_factory=list)

    def add(self, ep: Episode):
        self.episodes.append(ep)

    @property
    def num_steps(self) -> int:
        return sum(len(e.action_indices) for e in self.episodes)

    def clear(self):
        self.episodes.clear()


def _returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def collect_episode(inst: Instance, params: P.PolicyParams,
                    rule: MaskRule | None, rng: np.random.Generator,
                    greedy: bool = False) -> Episode:
    """One full episode, sampling from (or arg-maxing) the policy."""
    state = GraphState(inst)
    idxs: list[int] = []
    logps, values, rewards = [], [], []
    while not state.is_terminal:
        snap = state.snapshot()
        allowed = state.mask(rule)
        embs = P.embed(snap, params)
        dist = P.action_distribution(snap, params, allowed, embeddings=embs)
        value = P.critic_value(snap, params, embeddings=embs)
        idx = dist.greedy() if greedy else dist.sample(rng)
        actions = state.legal_actions()
        reward = state.step(actions[idx])
        idxs.append(idx)
        logps.append(np.log(dist.probs[idx]))
        values.append(float(value.data))
        rewards.append(reward)
    rewards = np.array(rewards, dtype=np.int64)
    return Episode(
        inst=inst,
        action_indices=idxs,
        log_probs=np.array(logps),
        values=np.array(values),
        rewards=rewards,
        returns=_returns(rewards, 1.0),
        makespan=state.makespan,
    )


@dataclass
class _Sample:
    snap: object
    allowed: np.ndarray
    action: int
    old_log_prob: float
    advantage: float
    target: float                # return, in normalised time units


def _replay(buffer: RolloutBuffer, rule: MaskRule | None) -> list[_Sample]:
    """Rebuild the per-step snapshots and masks for every buffered episode.

    Value targets and advantages are divided by the instance's time scale so
    losses are comparable across instance sizes.
    """
    samples = []
    for ep in buffer.episodes:
        scale = float(ep.inst.max_time)
        state = GraphState(ep.inst)
        for t, idx in enumerate(ep.action_indices):
            samples.append(_Sample(
                snap=state.snapshot(),
                allowed=state.mask(rule),
                action=idx,
                old_log_prob=float(ep.log_probs[t]),
                advantage=(ep.returns[t] / scale) - ep.values[t],
                target=ep.returns[t] / scale,
            ))
            state.step(state.legal_actions()[idx])
    return samples


def recompute_log_prob(ep: Episode, t: int, params: P.PolicyParams,
                       rule: MaskRule | None) -> float:
    """Log-probability of the t-th stored action under params, from replay."""
    state = GraphState(ep.inst)
    for idx in ep.action_indices[:t]:
        state.step(state.legal_actions()[idx])
    snap = state.snapshot()
    dist = P.action_distribution(snap, params, state.mask(rule))
    return float(np.log(dist.probs[ep.action_indices[t]]))


def ppo_update(buffer: RolloutBuffer, params: P.PolicyParams,
               adam: T.AdamState, cfg: TrainConfig,
               rng: np.random.Generator) -> dict:
    """K epochs of clipped-surrogate descent over the buffered steps."""
    if not buffer.episodes:
        raise ValueError("empty rollout buffer")
    samples = _replay(buffer, cfg.mask)
    tensors = params.parameters()
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
             "clip_fraction": 0.0, "grad_norm": 0.0, "batches": 0}
    for _ in range(cfg.epochs):
        order = rng.permutation(len(samples))
        for lo in range(0, len(samples), cfg.batch_size):
            batch = [samples[i] for i in order[lo:lo + cfg.batch_size]]
            adv = np.array([s.advantage for s in batch])
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            tape = T.Tape()
            surrogates, value_errs, entropies = [], [], []
            clipped = 0
            for s, a in zip(batch, adv):
                snap = s.snap
                embs = P.embed(snap, params, tape)
                dist = P.action_distribution(snap, params, s.allowed, tape, embs)
                value = P.critic_value(snap, params, tape, embs)
                logp = dist.log_prob(s.action)
                ratio = T.exp(T.add_const(logp, -s.old_log_prob, tape), tape)
                if abs(float(ratio.data) - 1.0) > cfg.eps_clip:
                    clipped += 1
                unclipped = T.scale(ratio, float(a), tape)
                clamped = T.scale(T.clip(ratio, 1.0 - cfg.eps_clip,
                                         1.0 + cfg.eps_clip, tape), float(a), tape)
                surrogates.append(T.minimum(unclipped, clamped, tape))
                value_errs.append(T.square(T.add_const(value, -s.target, tape), tape))
                entropies.append(dist.entropy())
            policy_term = T.mean(T.stack1d(surrogates, tape), tape)
            value_term = T.mean(T.stack1d(value_errs, tape), tape)
            entropy_term = T.mean(T.stack1d(entropies, tape), tape)
            loss = T.add(
                T.add(T.scale(policy_term, -cfg.coef_policy, tape),
                      T.scale(value_term, cfg.coef_value, tape), tape),
                T.scale(entropy_term, -cfg.coef_entropy, tape), tape)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(
                    f"non-finite loss: policy={float(policy_term.data)} "
                    f"value={float(value_term.data)} entropy={float(entropy_term.data)}")
            params.zero_grad()
            tape.backward(loss)
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                     for p in tensors]
            norm = T.clip_global_norm(grads, cfg.grad_clip)
            T.adam_step(tensors, grads, adam)
            stats["policy_loss"] += float(policy_term.data)
            stats["value_loss"] += float(value_term.data)
            stats["entropy"] += float(entropy_term.data)
            stats["clip_fraction"] += clipped / len(batch)
            stats["grad_norm"] += norm
            stats["batches"] += 1
    n = max(1, stats.pop("batches"))
    return {k: v / n for k, v in stats.items()}


@dataclass
class TrainResult:
    params: P.PolicyParams
    curve: list[dict]
    updates: list[dict]


def train_policy(cfg: TrainConfig,
                 checkpoint_dir=None,
                 progress=None) -> TrainResult:
    """Full training loop; deterministic for a fixed config and seed."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    rng_init = np.random.default_rng(seeds[0])
    rng_gen = np.random.default_rng(seeds[1])
    rng_act = np.random.default_rng(seeds[2])
    rng_upd = np.random.default_rng(seeds[3])
    params = P.init_policy(cfg.num_layers, cfg.hidden_dim, cfg.mask, rng_init,
                           meta={"train": _config_meta(cfg)})
    adam = T.AdamState(params.parameters(), cfg.lr)
    instances = generate_set(cfg.gen, cfg.n_ins, rng_gen, prefix="train0")
    buffer = RolloutBuffer()
    curve: list[dict] = []
    updates: list[dict] = []
    for ep in range(cfg.n_eps):
        if cfg.n_g > 0 and ep > 0 and ep % cfg.n_g == 0:
            instances = generate_set(cfg.gen, cfg.n_ins, rng_gen,
                                     prefix=f"train{ep // cfg.n_g}")
        inst = instances[ep % len(instances)]
        rec = collect_episode(inst, params, cfg.mask, rng_act)
        buffer.add(rec)
        row = {"episode": ep, "instance": inst.id, "makespan": rec.makespan}
        if (ep + 1) % cfg.n_t == 0:
            stats = ppo_update(buffer, params, adam, cfg, rng_upd)
            buffer.clear()
            updates.append({"episode": ep, **stats})
            row.update(stats)
            if checkpoint_dir is not None:
                from pathlib import Path

                ckpt = Path(checkpoint_dir)
                P.save_model(params, ckpt / f"checkpoint_{ep + 1:06d}.bin")
            if progress is not None:
                progress(ep, rec.makespan, stats)
        curve.append(row)
    return TrainResult(params=params, curve=curve, updates=updates)


def _config_meta(cfg: TrainConfig) -> dict:
    gen = cfg.gen
    return {
        "n_eps": cfg.n_eps, "n_t": cfg.n_t, "n_g": cfg.n_g, "n_ins": cfg.n_ins,
        "epochs": cfg.epochs, "batch_size": cfg.batch_size, "lr": cfg.lr,
        "gamma": cfg.gamma, "eps_clip": cfg.eps_clip,
        "coef_policy": cfg.coef_policy, "coef_value": cfg.coef_value,
        "coef_entropy": cfg.coef_entropy, "grad_clip": cfg.grad_clip,
        "num_layers": cfg.num_layers, "hidden_dim": cfg.hidden_dim,
        "mask_variant": None if cfg.mask is None else cfg.mask.variant,
        "mask_k": None if cfg.mask is None else cfg.mask.k,
        "seed": cfg.seed,
        "gen": {"j_min": gen.j_min, "j_max": gen.j_max, "m_min": gen.m_min,
                "m_max": gen.m_max, "o_min": gen.o_min, "o_max": gen.o_max,
                "op_max": gen.op_max, "p_bar": gen.p_bar, "d": gen.d,
                "seed": gen.seed},
    }
