import json

import numpy as np
import pytest

from flexsched import policy as P
from flexsched import tensor as T
from flexsched.instance import Instance, Job, Operation, parse_instance
from flexsched.state import (EARLIEST_FINISH, GraphState, MaskRule,
                             FEATURE_SCHEMA_VERSION)

from .oracles import central_difference


def make_params(rng, layers=1, dim=8, mask=None):
    return P.init_policy(layers, dim, mask, rng)


def zero_params(layers=1, dim=8):
    params = make_params(np.random.default_rng(0), layers, dim)
    for _, t in params.named_parameters():
        t.data[:] = 0.0
    return params


# -- attention scoring ---------------------------------------------------------


def test_attention_score_zero_vector():
    rng = np.random.default_rng(0)
    rel = P.RelationParams(w1=T.glorot(rng, 4, 3), w2=T.glorot(rng, 4, 3),
                           a=T.Tensor(np.zeros(4)))
    assert P.attention_score(rng.normal(size=3), rng.normal(size=3), rel) == 0.0


def test_attention_score_symmetric_identity():
    rng = np.random.default_rng(1)
    w = T.glorot(rng, 4, 3)
    rel = P.RelationParams(w1=w, w2=w, a=T.glorot_vec(rng, 4))
    h = rng.normal(size=3)
    z = 2.0 * (w.data @ h)
    expected = rel.a.data @ np.where(z > 0, z, 0.2 * z)
    assert P.attention_score(h, h, rel) == pytest.approx(expected, rel=1e-12)


def test_attention_score_with_edge_term_against_direct_formula():
    rng = np.random.default_rng(2)
    rel = P.RelationParams(w1=T.glorot(rng, 4, 4), w2=T.glorot(rng, 4, 4),
                           a=T.glorot_vec(rng, 4), w3=T.glorot(rng, 4, 3))
    h_i, h_j = rng.normal(size=4), rng.normal(size=4)
    h_e = rng.normal(size=3)
    z = rel.w1.data @ h_i + rel.w2.data @ h_j + rel.w3.data @ h_e
    act = np.where(z > 0, z, 0.2 * z)
    assert P.attention_score(h_i, h_j, rel, h_e) == pytest.approx(
        float(rel.a.data @ act), rel=1e-12)


def test_attention_score_dimension_mismatch():
    rng = np.random.default_rng(3)
    rel = P.RelationParams(w1=T.glorot(rng, 4, 3), w2=T.glorot(rng, 4, 3),
                           a=T.glorot_vec(rng, 4))
    with pytest.raises(ValueError):
        P.attention_score(np.zeros(2), np.zeros(3), rel)


# -- embeddings ------------------------------------------------------------------


def test_zero_weights_give_zero_embeddings(fig2):
    snap = GraphState(fig2).snapshot()
    h_op, h_m, h_j = P.embed(snap, zero_params(layers=2))
    assert not h_op.data.any()
    assert not h_m.data.any()
    assert not h_j.data.any()


def test_attention_normalised_per_relation(fig2):
    snap = GraphState(fig2).snapshot()
    params = make_params(np.random.default_rng(5), layers=2)
    alphas = []
    P.embed(snap, params, alphas_out=alphas)
    # 7 relations over two layers (every relation is populated on this graph)
    assert len(alphas) == 14
    seen = {name.split(".")[1] for name, _, _ in alphas}
    assert seen == {"oo", "om", "mo", "mm", "jj", "jo", "mj"}
    for name, dst, alpha in alphas:
        assert (alpha > 0).all()
        sums = np.zeros(dst.max() + 1)
        np.add.at(sums, dst, alpha)
        present = np.zeros(dst.max() + 1, dtype=bool)
        present[dst] = True
        assert np.allclose(sums[present], 1.0), name


def test_job_permutation_equivariance():
    rng = np.random.default_rng(7)
    ops1 = (Operation(((0, 3), (1, 7))), Operation(((1, 4),)))
    ops2 = (Operation(((0, 2),)),)
    ops3 = (Operation(((1, 6),)), Operation(((0, 5), (1, 9))))
    a = Instance(3, 2, (Job(ops1), Job(ops2), Job(ops3)))
    b = Instance(3, 2, (Job(ops3), Job(ops1), Job(ops2)))  # jobs rotated by 1
    params = make_params(rng, layers=2, dim=16)
    _, m_a, j_a = P.embed(GraphState(a).snapshot(), params)
    _, m_b, j_b = P.embed(GraphState(b).snapshot(), params)
    perm = [1, 2, 0]   # position of a's jobs inside b
    assert np.allclose(j_a.data, j_b.data[perm], atol=1e-9)
    assert np.allclose(m_a.data, m_b.data, atol=1e-9)


def test_machine_permutation_equivariance():
    rng = np.random.default_rng(8)
    ops = (Operation(((0, 3), (1, 7))), Operation(((1, 4), (2, 2))))
    a = Instance(1, 3, (Job(ops),))
    swapped = (Operation(((2, 3), (0, 7))), Operation(((0, 4), (1, 2))))
    b = Instance(1, 3, (Job(swapped),))   # machines relabelled 0->2, 1->0, 2->1
    params = make_params(rng, layers=1, dim=16)
    _, m_a, j_a = P.embed(GraphState(a).snapshot(), params)
    _, m_b, j_b = P.embed(GraphState(b).snapshot(), params)
    assert np.allclose(m_a.data, m_b.data[[2, 0, 1]], atol=1e-9)
    assert np.allclose(j_a.data, j_b.data, atol=1e-9)


# -- actor and critic ------------------------------------------------------------


def test_actor_uniform_with_zero_weights(fig2):
    state = GraphState(fig2)
    snap = state.snapshot()
    allowed = state.mask(MaskRule(EARLIEST_FINISH, 1))
    dist = P.action_distribution(snap, zero_params(), allowed)
    expected = np.where(allowed, 1.0 / allowed.sum(), 0.0)
    assert np.allclose(dist.probs, expected)


def test_masked_probability_exactly_zero(fig2):
    state = GraphState(fig2)
    snap = state.snapshot()
    allowed = state.mask(MaskRule(EARLIEST_FINISH, 1))
    params = make_params(np.random.default_rng(11))
    dist = P.action_distribution(snap, params, allowed)
    assert dist.probs[1] == 0.0          # the end-8 action
    assert abs(dist.probs.sum() - 1.0) < 1e-12
    assert dist.probs[allowed].min() > 0


def test_logit_shift_invariance(fig2):
    state = GraphState(fig2)
    snap = state.snapshot()
    allowed = state.mask(None)
    params = make_params(np.random.default_rng(12))
    before = P.action_distribution(snap, params, allowed)
    params.actor_b2.data += 7.5          # constant shift of every logit
    after = P.action_distribution(snap, params, allowed)
    assert np.allclose(before.probs, after.probs, atol=1e-12)
    assert before.greedy() == after.greedy()


def test_all_masked_is_an_internal_error(fig2):
    snap = GraphState(fig2).snapshot()
    with pytest.raises(RuntimeError):
        P.action_distribution(snap, zero_params(), np.zeros(3, dtype=bool))


def test_critic_zero_weights(fig2):
    snap = GraphState(fig2).snapshot()
    assert float(P.critic_value(snap, zero_params()).data) == 0.0


def test_critic_mean_pooling_matches_by_hand(fig2):
    snap = GraphState(fig2).snapshot()
    params = make_params(np.random.default_rng(13))
    _, _, h_j = P.embed(snap, params)
    per_job = []
    for row in h_j.data:
        hid = np.tanh(params.critic_w1.data @ row + params.critic_b1.data)
        per_job.append(params.critic_w2.data @ hid + params.critic_b2.data)
    assert float(P.critic_value(snap, params).data) == pytest.approx(
        float(np.mean(per_job)), rel=1e-12)


def test_critic_invariant_under_job_duplication():
    ops = (Operation(((0, 4), (1, 6))), Operation(((1, 2),)))
    single = Instance(1, 2, (Job(ops),))
    double = Instance(2, 2, (Job(ops), Job(ops)))
    params = make_params(np.random.default_rng(14), layers=2, dim=12)
    v1 = float(P.critic_value(GraphState(single).snapshot(), params).data)
    v2 = float(P.critic_value(GraphState(double).snapshot(), params).data)
    assert v1 == pytest.approx(v2, rel=1e-9)


def test_end_to_end_gradients_match_finite_differences(fig2):
    state = GraphState(fig2)
    snap = state.snapshot()
    allowed = state.mask(MaskRule(EARLIEST_FINISH, 2))
    params = make_params(np.random.default_rng(15), layers=2, dim=6)

    def loss(tape):
        embs = P.embed(snap, params, tape)
        dist = P.action_distribution(snap, params, allowed, tape, embs)
        value = P.critic_value(snap, params, tape, embs)
        first = int(np.flatnonzero(allowed)[0])
        pg = T.scale(dist.log_prob(first), -1.25, tape)
        ve = T.square(T.add_const(value, 0.8, tape), tape)
        ent = T.scale(dist.entropy(), -0.01, tape)
        return T.add(T.add(pg, ve, tape), ent, tape)

    tape = T.Tape()
    out = loss(tape)
    params.zero_grad()
    tape.backward(out)
    for name, t in params.named_parameters():
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        fd = central_difference(lambda: float(loss(None).data), t.data)
        denom = max(np.abs(fd).max(), np.abs(grad).max(), 1e-8)
        assert np.abs(fd - grad).max() / denom < 1e-3, name


# -- model files -----------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    params = make_params(np.random.default_rng(16), layers=2, dim=8,
                         mask=MaskRule(EARLIEST_FINISH, 2))
    path = tmp_path / "model.bin"
    P.save_model(params, path)
    loaded = P.load_model(path)
    for (na, ta), (nb, tb) in zip(params.named_parameters(),
                                  loaded.named_parameters()):
        assert na == nb
        assert np.array_equal(ta.data, tb.data)
    assert loaded.hyper == params.hyper
    assert loaded.hyper.mask_rule() == MaskRule(EARLIEST_FINISH, 2)


def test_load_rejects_other_schema_version(tmp_path):
    params = make_params(np.random.default_rng(17))
    path = tmp_path / "model.bin"
    P.save_model(params, path)
    sidecar = path.with_suffix(".json")
    manifest = json.loads(sidecar.read_text())
    manifest["schema_version"] = FEATURE_SCHEMA_VERSION + 1
    sidecar.write_text(json.dumps(manifest))
    with pytest.raises(P.ModelSchemaError, match="schema"):
        P.load_model(path)


def test_load_rejects_wrong_architecture(tmp_path):
    params = make_params(np.random.default_rng(18), layers=2)
    path = tmp_path / "model.bin"
    P.save_model(params, path)
    sidecar = path.with_suffix(".json")
    manifest = json.loads(sidecar.read_text())
    manifest["num_layers"] = 1
    sidecar.write_text(json.dumps(manifest))
    with pytest.raises(P.ModelSchemaError):
        P.load_model(path)


def test_load_rejects_truncated_weights(tmp_path):
    params = make_params(np.random.default_rng(19))
    path = tmp_path / "model.bin"
    P.save_model(params, path)
    path.write_bytes(path.read_bytes()[:-20])
    with pytest.raises(ValueError, match="truncated"):
        P.load_model(path)
