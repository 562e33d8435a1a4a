import itertools
import random

import numpy as np
import pytest
import torch

from vsrcap import errors
from vsrcap.roles import ROLES, VERB_ROLE, VSR, SubRole, role_by_name
from vsrcap.ssp import (
    PermutationMatrix,
    RLevelRanker,
    SLevelPlanner,
    hungarian_round,
    mention_order_target,
    plan,
    plan_role_order,
    plan_role_order_beam,
    rank_within_role,
    rlevel_soft,
    sinkhorn,
    ssp_losses,
)

torch.manual_seed(0)


# --------------------------------------------------------------------------
# doubly-stochastic normalization
# --------------------------------------------------------------------------

def oracle_sinkhorn(Z, iters):
    """Direct transcription of the normalization recurrence: exponentiate,
    then alternate row and column divisions.  Safe only for small Z."""
    S = np.exp(np.asarray(Z, dtype=np.float64))
    for _ in range(iters):
        S = S / S.sum(axis=1, keepdims=True)
        S = S / S.sum(axis=0, keepdims=True)
    return S


def test_sinkhorn_identity_concentration():
    Z = 20.0 * torch.eye(3, dtype=torch.float64)
    P = sinkhorn(Z, 20)
    assert torch.allclose(P, torch.eye(3, dtype=torch.float64), atol=1e-6)
    expect = oracle_sinkhorn(Z.numpy(), 20)
    assert np.abs(P.numpy() - expect).max() < 1e-9


def test_sinkhorn_uniform_fixed_point():
    P = sinkhorn(torch.zeros(4, 4, dtype=torch.float64), 20)
    assert torch.allclose(P, torch.full((4, 4), 0.25, dtype=torch.float64), atol=1e-12)


def test_sinkhorn_matches_direct_recurrence():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 8))
        Z = rng.uniform(-1, 1, size=(n, n))
        P = sinkhorn(torch.tensor(Z), 7).numpy()
        assert np.abs(P - oracle_sinkhorn(Z, 7)).max() < 1e-10


def test_sinkhorn_doubly_stochastic_property():
    """1000 random matrices, n <= 10, K = 20: sums within 1e-6."""
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = int(rng.integers(2, 11))
        Z = torch.tensor(rng.uniform(-1, 1, size=(n, n)))
        P = sinkhorn(Z, 20)
        assert (P.sum(0) - 1).abs().max() < 1e-6
        assert (P.sum(1) - 1).abs().max() < 1e-6
        PermutationMatrix(P.numpy(), "soft").check()


def test_sinkhorn_survives_large_potentials():
    P = sinkhorn(torch.full((3, 3), 500.0, dtype=torch.float64), 5)
    assert torch.isfinite(P).all()


def test_sinkhorn_rejects_bad_input():
    with pytest.raises(errors.NonFinite):
        sinkhorn(torch.tensor([[float("nan"), 0.0], [0.0, 0.0]]), 5)
    with pytest.raises(ValueError):
        sinkhorn(torch.zeros(2, 2), 0)


def test_sinkhorn_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    for n, iters in [(2, 1), (3, 3), (4, 5)]:
        Z = torch.tensor(rng.normal(size=(n, n)), requires_grad=True)
        W = torch.tensor(rng.normal(size=(n, n)))
        loss = (sinkhorn(Z, iters) * W).sum()
        loss.backward()
        analytic = Z.grad.clone()
        h = 1e-6
        for i in range(n):
            for j in range(n):
                Zp = Z.detach().clone(); Zp[i, j] += h
                Zm = Z.detach().clone(); Zm[i, j] -= h
                fd = ((sinkhorn(Zp, iters) * W).sum() - (sinkhorn(Zm, iters) * W).sum()) / (2 * h)
                rel = abs(analytic[i, j] - fd) / max(abs(fd), 1e-8)
                assert rel < 1e-4, (n, iters, i, j)


# --------------------------------------------------------------------------
# Hungarian rounding
# --------------------------------------------------------------------------

def oracle_assignment(P):
    """Exhaustive search over all permutations."""
    n = P.shape[0]
    best, best_val = None, -np.inf
    for perm in itertools.permutations(range(n)):
        val = sum(P[i, perm[i]] for i in range(n))
        if val > best_val:
            best_val, best = val, perm
    M = np.zeros_like(P, dtype=np.int64)
    for i, j in enumerate(best):
        M[i, j] = 1
    return M, best_val


def test_hungarian_near_identity():
    P = np.eye(4) * 0.9 + 0.025
    assert (hungarian_round(P) == np.eye(4, dtype=np.int64)).all()


def test_hungarian_two_by_two_unique_optimum():
    P = np.array([[0.6, 0.4], [0.6, 0.4]])
    hard = hungarian_round(P)
    # total 0.6 + 0.4 = 1.0 on the diagonal beats 0.4 + 0.6 = ... equal!
    # both assignments give 1.0; the diagonal is returned and is optimal
    _, best = oracle_assignment(P)
    got = (P * hard).sum()
    assert got == pytest.approx(best)
    PermutationMatrix(hard, "hard").check()


def test_hungarian_matches_bruteforce():
    rng = np.random.default_rng(3)
    for _ in range(120):
        n = int(rng.integers(2, 7))
        Z = torch.tensor(rng.normal(size=(n, n)))
        P = sinkhorn(Z, 10).numpy()
        hard = hungarian_round(P)
        _, best = oracle_assignment(P)
        assert (P * hard).sum() == pytest.approx(best, abs=1e-12)
        PermutationMatrix(hard, "hard").check()


# --------------------------------------------------------------------------
# sentence-level planning
# --------------------------------------------------------------------------

def _random_vsr(rng, max_roles=6):
    roles = rng.sample(list(ROLES), rng.randint(1, max_roles))
    return VSR("v", tuple((r, rng.randint(1, 3)) for r in roles))


def test_plan_role_order_is_permutation_of_inputs():
    rng = random.Random(0)
    planner = SLevelPlanner(n_verbs=3, d_model=32, heads=4, layers=1)
    for _ in range(100):
        vsr = _random_vsr(rng)
        order = plan_role_order(planner, rng.randrange(3), vsr)
        assert sorted(order) == sorted([VERB_ROLE.id] + [r.id for r, _ in vsr.roles])


def test_plan_role_order_rejects_too_many_roles():
    planner = SLevelPlanner(n_verbs=1, d_model=32, heads=4, layers=1, max_len=4)
    vsr = VSR("v", tuple((r, 1) for r in ROLES[:5]))
    with pytest.raises(errors.TooManyRoles):
        plan_role_order(planner, 0, vsr)


def test_plan_beam_orders_are_distinct_permutations():
    rng = random.Random(1)
    planner = SLevelPlanner(n_verbs=2, d_model=32, heads=4, layers=1)
    vsr = _random_vsr(rng, max_roles=3)
    hyps = plan_role_order_beam(planner, 0, vsr, beam=4)
    want = sorted([VERB_ROLE.id] + [r.id for r, _ in vsr.roles])
    assert len({tuple(o) for o, _ in hyps}) == len(hyps)
    for order, score in hyps:
        assert sorted(order) == want
        assert score <= 0.0
    assert hyps[0][1] == max(s for _, s in hyps)
    # beam(1) agrees with greedy
    assert plan_role_order_beam(planner, 0, vsr, beam=1)[0][0] == \
        plan_role_order(planner, 0, vsr)


# --------------------------------------------------------------------------
# role-level ranking
# --------------------------------------------------------------------------

def _toy_sets(rng, n, d_v=8, n_classes=5):
    sets = []
    for _ in range(n):
        m = rng.integers(1, 4)
        feats = torch.tensor(rng.normal(size=(m, d_v)), dtype=torch.float32)
        boxes = torch.tensor(rng.uniform(0, 1, size=(m, 4)), dtype=torch.float32)
        classes = torch.tensor(rng.integers(0, n_classes, size=m))
        sets.append((feats, boxes, classes))
    return sets


def test_rank_within_role_contracts():
    rng = np.random.default_rng(4)
    ranker = RLevelRanker(d_v=8, n_classes=5, n_max=10)
    assert rank_within_role(ranker, _toy_sets(rng, 1)) == [0]
    for n in (2, 3, 5, 10):
        order = rank_within_role(ranker, _toy_sets(rng, n))
        assert sorted(order) == list(range(n))
    with pytest.raises(errors.TooManySets):
        rank_within_role(ranker, _toy_sets(rng, 11))


def test_rlevel_padding_self_assigns():
    rng = np.random.default_rng(5)
    ranker = RLevelRanker(d_v=8, n_classes=5, n_max=6)
    soft = rlevel_soft(ranker, _toy_sets(rng, 2))
    hard = hungarian_round(soft)
    assert (hard[2:, 2:] == np.eye(4, dtype=np.int64)).all()
    assert hard[:2, 2:].sum() == 0 and hard[2:, :2].sum() == 0


def test_mention_order_target_shape():
    P = mention_order_target(2, [1, 0], n_max=5)
    assert P[0, 1] == 1 and P[1, 0] == 1
    assert (P[2:, 2:] == torch.eye(3)).all()
    PermutationMatrix(P.numpy(), "hard").check()


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------

def oracle_losses(logits, targets, preds, tgts, counts):
    ls = 0.0
    for t in range(len(targets)):
        z = logits[t] - logits[t].max()
        ls += -(z[targets[t]] - np.log(np.exp(z).sum()))
    lr = 0.0
    for p, q, n in zip(preds, tgts, counts):
        if n > 1:
            lr += np.mean((p - q) ** 2)
    return ls, lr


def test_ssp_losses_match_elementwise_oracle():
    rng = np.random.default_rng(6)
    for _ in range(20):
        T = int(rng.integers(1, 6))
        logits = rng.normal(size=(T, 25))
        targets = rng.integers(0, 25, size=T)
        counts = [int(rng.integers(1, 4)) for _ in range(3)]
        preds = [rng.random((4, 4)) for _ in counts]
        tgts = [rng.random((4, 4)) for _ in counts]
        l_s, l_r = ssp_losses(
            torch.tensor(logits), torch.tensor(targets),
            [torch.tensor(p) for p in preds], [torch.tensor(t) for t in tgts],
            counts)
        os, orr = oracle_losses(logits, targets, preds, tgts, counts)
        assert float(l_s) == pytest.approx(os, abs=1e-10)
        assert float(l_r) == pytest.approx(orr, abs=1e-10)


def test_ssp_losses_trivial_cases():
    # perfect one-hot predictions: sentence loss ~ 0
    targets = torch.tensor([3, 1])
    logits = torch.full((2, 25), -50.0)
    logits[0, 3] = 50.0
    logits[1, 1] = 50.0
    l_s, l_r = ssp_losses(logits, targets, [], [], [])
    assert float(l_s) == pytest.approx(0.0, abs=1e-8)
    # all single-count roles: role loss is zero by the indicator
    preds = [torch.rand(3, 3)]
    tgts = [torch.rand(3, 3)]
    _, l_r = ssp_losses(logits, targets, preds, tgts, [1])
    assert float(l_r) == 0.0


def test_ssp_losses_shape_mismatch():
    with pytest.raises(errors.ShapeMismatch):
        ssp_losses(torch.zeros(2, 25), torch.zeros(3, dtype=torch.long), [], [], [])
    with pytest.raises(errors.ShapeMismatch):
        ssp_losses(torch.zeros(1, 25), torch.zeros(1, dtype=torch.long),
                   [torch.zeros(2, 2)], [torch.zeros(3, 3)], [2])


# --------------------------------------------------------------------------
# full plan assembly
# --------------------------------------------------------------------------

def test_plan_alignment_contract():
    from vsrcap.scene import default_grammar, generate_dataset
    from vsrcap.gsrl import GsrlNet, ground

    g = default_grammar()
    lex = g.lexicon()
    slevel = SLevelPlanner(n_verbs=len(lex.verbs), d_model=32, heads=4, layers=1)
    rlevel = RLevelRanker(d_v=g.d_v, n_classes=len(g.class_names))
    net = GsrlNet(n_verbs=len(lex.verbs), d_v=g.d_v, attn_dim=16)
    for s in generate_dataset(g, 10, seed=21):
        vid = lex.verb_id(s.gt_vsr.verb)
        res = ground(net, s, s.gt_vsr, vid)
        seq = plan(slevel, rlevel, s.gt_vsr, res, s, vid)
        assert len(seq) == 1 + s.gt_vsr.total_subroles
        assert sum(slot.is_verb for slot in seq) == 1
        for slot in seq:
            if slot.is_verb:
                assert np.allclose(slot.pooled, s.global_feature)
            else:
                assert np.allclose(slot.pooled, s.sets[slot.set_index].pooled)
        # per role, the planned sets are exactly the grounded ones (order may
        # differ: that is the role-level planner's job)
        for role, n_i in s.gt_vsr.roles:
            planned = sorted(sl.set_index for sl in seq
                             if not sl.is_verb and sl.subrole.role == role)
            grounded = sorted(res.set_for(SubRole(role, k)) for k in range(1, n_i + 1))
            assert planned == grounded
        # sub-roles of one role sit contiguously and the planned multiset is exact
        names = [slot.subrole.role.name for slot in seq]
        for name in set(names):
            idxs = [i for i, n in enumerate(names) if n == name]
            assert idxs == list(range(idxs[0], idxs[-1] + 1))
        from vsrcap.roles import expand_sub_roles
        assert sorted(sl.subrole.key() for sl in seq if not sl.is_verb) == \
            sorted(s.key() for s in expand_sub_roles(s.gt_vsr))
