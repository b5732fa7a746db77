import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fixtures_data import ALS_TRAP_222, MORE_222
from parocpd.quantized import best_rank1_222
from parocpd.rank1 import Rank1Model, prepare, solve_rank1, target_project, ttsvd_init
from parocpd.roro import degenerate_mode_basis, roro_step, rotation_basis
from parocpd.tensor import outer


def unit_model(rng, dims):
    return Rank1Model([x / np.linalg.norm(x) for x in (rng.standard_normal(d) for d in dims)])


def test_degenerate_basis_e1():
    v = degenerate_mode_basis(np.array([1.0, 0.0, 0.0]))
    np.testing.assert_array_equal(v[:, 1], [0.0, 1.0, 0.0])


def test_degenerate_basis_diagonal():
    v = degenerate_mode_basis(np.array([1.0, 1.0]) / np.sqrt(2))
    np.testing.assert_allclose(v[:, 1], np.array([1.0, -1.0]) / np.sqrt(2), atol=1e-15)


def test_length_one_mode_is_frozen():
    rng = np.random.default_rng(0)
    t = rng.standard_normal((3, 1, 4))
    m = prepare(t, unit_model(rng, t.shape), "roro")
    b = rotation_basis(t, m)
    assert b.frozen == [False, True, False]
    out = roro_step(t, m)
    np.testing.assert_allclose(np.abs(out.factors[1]), [1.0])
    assert out.weight >= m.weight - 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_basis_is_orthonormal_and_w_consistent(seed):
    rng = np.random.default_rng(seed)
    t = rng.standard_normal((4, 3, 5))
    m = unit_model(rng, t.shape)
    b = rotation_basis(t, m)
    for v in b.columns:
        np.testing.assert_allclose(v.T @ v, np.eye(2), atol=1e-8)
    w = target_project(t, b.columns)
    assert w[0, 0, 0] == pytest.approx(b.xi, abs=1e-12)
    assert w[0, 0, 0] == pytest.approx(float(np.sum(t * outer(m.factors))), abs=1e-12)


def test_exact_rank1_at_optimum_is_unchanged():
    rng = np.random.default_rng(1)
    us = [x / np.linalg.norm(x) for x in (rng.standard_normal(d) for d in (3, 4, 2))]
    t = 2.5 * outer(us)
    out = roro_step(t, Rank1Model(us, 2.5))
    for a, b in zip(out.factors, us):
        np.testing.assert_allclose(a, b, atol=1e-12)
    assert out.weight == pytest.approx(2.5)


def test_xi_monotone_and_unit_length():
    rng = np.random.default_rng(2)
    for _ in range(200):
        t = rng.standard_normal((5, 5, 5))
        m = prepare(t, unit_model(rng, t.shape), "roro")
        prev = m.weight
        for _ in range(5):
            m = roro_step(t, m)
            assert m.weight >= prev - 1e-10
            for u in m.factors:
                assert np.linalg.norm(u) == pytest.approx(1.0, abs=1e-10)
            prev = m.weight


def test_order4_steps_monotone():
    rng = np.random.default_rng(3)
    for _ in range(20):
        t = rng.standard_normal((3, 3, 3, 3))
        m = prepare(t, unit_model(rng, t.shape), "roro")
        for _ in range(3):
            nxt = roro_step(t, m)
            assert nxt.weight >= m.weight - 1e-10
            m = nxt


def test_trap_tensor_escapes_als_point():
    for init in ("svd", "ttsvd-best"):
        res = solve_rank1(ALS_TRAP_222, "roro", init)
        assert res.model.weight == pytest.approx(2.9212, abs=5e-4)


def test_ttsvd_init_lands_on_als_point():
    m = ttsvd_init(ALS_TRAP_222)
    after = roro_step(ALS_TRAP_222, m)
    assert after.weight > m.weight + 0.1


def test_matches_closed_form_on_other_binary_tensors():
    for w in MORE_222:
        res = solve_rank1(w, "roro", "svd")
        assert res.model.weight == pytest.approx(best_rank1_222(w).sigma, abs=1e-8)
