import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import parocpd.paro as paro
from parocpd.generators import MultTensorSpec, mult_tensor, random_init, random_kruskal
from parocpd.paro import (
    ImplicitResidue,
    MuSchedule,
    ParoState,
    admm_dual_start,
    admm_reference,
    apply_schedule,
    cpd_als,
    epc_init,
    implicit_contract_all_but,
    implicit_multi_mode_product,
    paro_decompose,
)
from parocpd.rank1 import solve_rank1
from parocpd.tensor import KruskalModel, contract_all_but, multi_mode_product, outer, reconstruct_kruskal, vec


def state_with(gamma_r, it):
    z = np.zeros((1,))
    return ParoState(z, z, z, z, z, [[np.ones(1)]] * 4, gamma_r, it)


# ---- schedules ----


def test_fixed_schedule_keeps_half():
    s = state_with(1.0, 0)
    for k in range(1, 50):
        s.iter = k
        apply_schedule(s, MuSchedule.fixed(1.0), [1.0] * (k + 1))
    assert s.mu == 0.5


def test_regular_schedule_after_one_period():
    s = state_with(1.0, 0)
    sched = MuSchedule.regular(10, math.sqrt(2))
    for k in range(1, 11):
        s.iter = k
        apply_schedule(s, sched, [1.0] * (k + 1))
    assert s.mu == pytest.approx(1 / (1 + 1 / math.sqrt(2)), abs=1e-14)


def test_adaptive_schedule_directions():
    sched = MuSchedule.adaptive(5, 2.0, 4.0)
    s = state_with(4.0, 5)
    apply_schedule(s, sched, [6, 5, 4, 3, 2, 1])
    assert s.gamma_r == 8.0
    s = state_with(4.0, 5)
    apply_schedule(s, sched, [6, 5, 4, 5, 2, 1])
    assert s.gamma_r == 2.0
    s = state_with(4.0, 4)
    apply_schedule(s, sched, [6, 5, 4, 3, 2])
    assert s.gamma_r == 4.0


def test_schedule_clamp():
    s = state_with(paro.GAMMA_R_MAX, 1)
    apply_schedule(s, MuSchedule.regular(1, 2.0), [1.0, 1.0])
    assert s.gamma_r == paro.GAMMA_R_MAX
    s = state_with(paro.GAMMA_R_MIN, 1)
    apply_schedule(s, MuSchedule.adaptive(1, 2.0), [1.0, 2.0])
    assert s.gamma_r == paro.GAMMA_R_MIN


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(1, 9))
def test_mu_gamma_consistency(gamma_r, rank):
    s = state_with(gamma_r, 0)
    s.components = [[np.ones(1)]] * rank
    assert abs(s.mu - s.gamma * rank / (1 + s.gamma * rank)) <= 1e-14


def test_schedule_parsing():
    assert MuSchedule.parse("fixed:2") == MuSchedule.fixed(2.0)
    assert MuSchedule.parse("regular:10:1.5") == MuSchedule.regular(10, 1.5, 1.0)
    assert MuSchedule.parse("adaptive:20:1.41421356:5").gamma_r == 5.0
    for bad in ("fixed", "regular:0:2", "adaptive:5:0.5", "weird:1", "fixed:x"):
        with pytest.raises(ValueError):
            MuSchedule.parse(bad)


def test_default_schedule():
    s = MuSchedule()
    assert (s.kind, s.period, s.gamma_r) == ("adaptive", 20, 5.0)
    assert s.factor == pytest.approx(math.sqrt(2))


# ---- implicit residue ----


def random_residue(rng, shape, dense=True, rank1=True):
    e = rng.standard_normal(shape) if dense else np.zeros(shape)
    us = [rng.standard_normal(s) if rank1 else np.zeros(s) for s in shape]
    return ImplicitResidue(e, us)


@pytest.mark.parametrize("dense,rank1", [(True, True), (False, True), (True, False)])
def test_implicit_matches_materialized(dense, rank1):
    rng = np.random.default_rng(0)
    for shape in [(3, 4, 5), (2, 3, 2, 4), (6,)]:
        res = random_residue(rng, shape, dense, rank1)
        full = res.materialize()
        vs = [rng.standard_normal(s) for s in shape]
        for n in range(len(shape)):
            np.testing.assert_allclose(
                implicit_contract_all_but(res, vs, n), contract_all_but(full, vs, n), atol=1e-12
            )
        mats = [rng.standard_normal((s, 2)) for s in shape]
        np.testing.assert_allclose(implicit_multi_mode_product(res, mats), multi_mode_product(full, mats), atol=1e-12)
        assert res.norm_sq() == pytest.approx(np.sum(full * full), rel=1e-12)


def test_implicit_shape_mismatch():
    with pytest.raises(ValueError):
        ImplicitResidue(np.zeros((2, 3)), [np.zeros(2), np.zeros(4)])


# ---- ADMM equivalence ----


@pytest.mark.parametrize("rank", [1, 2, 3])
@pytest.mark.parametrize("gamma_r", [1.0, 5.0])
def test_paro_matches_admm_reference(rank, gamma_r):
    _, t = random_kruskal((3, 3, 3), 2, seed=rank)
    init = random_init(t.shape, rank, 10 + rank)
    seen = []
    paro_decompose(
        t, rank, MuSchedule.fixed(gamma_r), init=init, tol=1e-300, stall_tol=0.0, max_iters=20,
        callback=lambda s: seen.append((vec(s.xbar_curr).copy(), vec(s.e).copy())),
    )
    gamma = gamma_r / rank
    ref = admm_reference(t, rank, gamma, init, 20, t0=admm_dual_start(t, rank, gamma, init))
    assert len(seen) == len(ref) == 21
    for (xbar, e), rec in zip(seen, ref):
        np.testing.assert_allclose(xbar, rec.xbar, atol=1e-10)
        np.testing.assert_allclose(e, rec.e, atol=1e-10)


def test_admm_first_z_from_zero_start():
    rng = np.random.default_rng(1)
    t = rng.standard_normal((2, 3, 2))
    rank, gamma = 3, 0.7
    # factors of 1e-120 reconstruct to exactly zero yet still normalize
    zero = KruskalModel([np.full((s, rank), 1e-120) for s in t.shape])
    assert not reconstruct_kruskal(zero).any()
    rec = admm_reference(t, rank, gamma, zero, 1)[1]
    expect = gamma / (1 + gamma * rank) * np.outer(vec(t), np.ones(rank))
    np.testing.assert_allclose(rec.z, expect, atol=1e-12)


def test_admm_tbar_identity():
    _, t = random_kruskal((3, 3, 3), 3, seed=4)
    rank, gamma = 2, 0.5
    recs = admm_reference(t, rank, gamma, random_init(t.shape, rank, 4), 10)
    for prev, cur in zip(recs, recs[1:]):
        np.testing.assert_allclose(cur.tbar, cur.xbar - prev.xbar - prev.e, atol=1e-12)


def test_admm_size_cap():
    with pytest.raises(ValueError):
        admm_reference(np.ones((50, 50, 50)), 2, 1.0, random_init((50, 50, 50), 2, 0), 1)


# ---- paro_decompose ----


def test_initial_residue_and_callback_state():
    _, t = random_kruskal((3, 4, 2), 2, seed=5)
    init = random_init(t.shape, 2, 5)
    states = []
    paro_decompose(t, 2, init=init, max_iters=3, callback=lambda s: states.append(
        (s.iter, s.e.copy(), s.xbar_curr.copy(), [[u.copy() for u in c] for c in s.components])))
    it, e0, xbar0, _ = states[0]
    assert it == 0
    np.testing.assert_array_equal(e0, t / 2 - reconstruct_kruskal(init) / 2)
    for _, _, xbar, comps in states:
        np.testing.assert_allclose(xbar, sum(outer(c) for c in comps) / 2, atol=1e-12)


def test_exactly_five_dense_buffers(monkeypatch):
    shapes = []
    monkeypatch.setattr(paro, "ALLOCATION_HOOK", shapes.append)
    _, t = random_kruskal((3, 4, 5), 3, seed=6)
    paro_decompose(t, 3, max_iters=30)
    assert shapes == [t.shape] * 5


def test_rank1_target_matches_plain_solve():
    rng = np.random.default_rng(7)
    t = outer([rng.standard_normal(d) for d in (3, 4, 5)])
    res = paro_decompose(t, 1, init=3, tol=1e-10, max_iters=200)
    assert res.error <= 1e-10 and res.reason == "tol"
    assert solve_rank1(t).error <= 1e-10


def test_parallel_workers_bitwise_identical():
    _, t = random_kruskal((4, 4, 4), 3, seed=8)
    a = paro_decompose(t, 3, init=1, max_iters=40)
    b = paro_decompose(t, 3, init=1, max_iters=40, workers=4)
    assert [r.relative_error for r in a.trace] == [r.relative_error for r in b.trace]


@pytest.mark.parametrize("inner", ["als", "r1lm", "roro"])
def test_inner_solvers_fit_low_rank(inner):
    _, t = random_kruskal((4, 4, 4), 2, seed=9)
    res = paro_decompose(t, 2, inner=inner, init=epc_init(t, random_init(t.shape, 2, 9)), max_iters=3000, tol=1e-6)
    assert res.error <= 1e-6


def test_mult222_rank7_converges():
    t = mult_tensor(MultTensorSpec(2, 2, 2))
    init = epc_init(t, random_init(t.shape, 7, 0))
    res = paro_decompose(t, 7, MuSchedule.adaptive(20, math.sqrt(2), 5.0), init=init, tol=1e-6, max_iters=3000)
    assert res.converged and res.error <= 1e-6


def test_degenerate_component_is_redrawn():
    t = np.zeros((2, 2, 2))
    t[0, 0, 0] = 1.0
    init = KruskalModel([np.array([[1.0, 0.0], [0.0, 1.0]])] * 3)
    res = paro_decompose(t, 2, MuSchedule.fixed(1.0), init=init, max_iters=5, seed=3)
    assert all(np.isfinite(f).all() for f in res.model.factors)
    assert isinstance(res.events, list)


def test_bad_arguments():
    t = np.ones((2, 2, 2))
    with pytest.raises(ValueError):
        paro_decompose(t, 0)
    with pytest.raises(ValueError):
        paro_decompose(t, 1, tol=0)
    with pytest.raises(ValueError):
        paro_decompose(np.zeros((2, 2)), 1)
    with pytest.raises(ValueError):
        paro_decompose(t, 2, init=random_init((2, 2, 3), 2, 0))


# ---- ALS baseline and EPC ----


def test_cpd_als_exact_rank():
    model, t = random_kruskal((5, 4, 3), 3, seed=10)
    res = cpd_als(t, 3, init=10, tol=1e-8, max_iters=2000)
    assert res.error <= 1e-8


def test_cpd_als_monotone():
    rng = np.random.default_rng(11)
    for s in range(10):
        t = rng.standard_normal((4, 4, 4))
        errs = [r.relative_error for r in cpd_als(t, 3, init=s, max_iters=200).trace]
        assert np.all(np.diff(errs) <= 1e-12)


def test_cpd_als_singular_gram_gets_ridge():
    t = np.ones((3, 3, 3))
    init = KruskalModel([np.ones((3, 2))] * 3)
    res = cpd_als(t, 2, init=init, max_iters=3)
    assert any("ridge" in e for e in res.events)


def test_epc_examples():
    model, t = random_kruskal((3, 3, 3), 2, seed=12)
    same = epc_init(t, model)
    np.testing.assert_allclose(reconstruct_kruskal(same), t, atol=1e-12)
    double = KruskalModel([model.factors[0] * 2] + model.factors[1:])
    np.testing.assert_allclose(reconstruct_kruskal(epc_init(t, double)), t, atol=1e-12)


def test_epc_never_worse():
    rng = np.random.default_rng(13)
    for s in range(50):
        t = rng.standard_normal((3, 4, 2))
        m = random_init(t.shape, 3, s)
        before = np.linalg.norm(t - reconstruct_kruskal(m))
        after = np.linalg.norm(t - reconstruct_kruskal(epc_init(t, m)))
        assert after <= before + 1e-12
