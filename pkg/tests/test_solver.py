import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from satpredist.predistort import LinearCoeffs, OpCounter, solve_delta_lin, step_op_counts, trust_region
from satpredist.predistort.solver import quadratic_objective, update_error_counted

cplx = st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False)


def random_instance(rng, lc):
    eps = rng.standard_normal(lc) + 1j * rng.standard_normal(lc)
    a10 = rng.standard_normal(lc) + 1j * rng.standard_normal(lc)
    a01 = 0.3 * (rng.standard_normal(lc) + 1j * rng.standard_normal(lc))
    return eps, LinearCoeffs(0, a10, a01)


def test_br_bi_definition():
    c = LinearCoeffs(2, np.array([1 + 2j]), np.array([0.5 - 1j]))
    assert c.br[0] == pytest.approx(1.5 + 1j)
    assert c.bi[0] == pytest.approx(1j * (0.5 + 3j))
    d = 0.3 - 0.4j
    assert c.apply(d)[0] == pytest.approx(c.br[0] * d.real + c.bi[0] * d.imag)
    assert c.hi == 3


@pytest.mark.parametrize("lc", [1, 3, 18])
def test_solution_is_quadratic_minimum(lc, rng):
    eps, c = random_instance(rng, lc)
    d, degenerate = solve_delta_lin(eps, c)
    if lc == 1 and degenerate:
        return
    q0 = quadratic_objective(eps, c, d)
    g = d + 1e-3 * np.exp(1j * np.linspace(0, 2 * np.pi, 16, endpoint=False))
    assert np.all(quadratic_objective(eps, c, g) >= q0)


def test_exact_recovery_when_consistent(rng):
    _, c = random_instance(rng, 5)
    d0 = 0.2 - 0.7j
    eps = -c.apply(d0)
    d, degenerate = solve_delta_lin(eps, c)
    assert not degenerate and d == pytest.approx(d0, abs=1e-12)


def test_degenerate_system():
    c = LinearCoeffs(0, np.zeros(3, complex), np.zeros(3, complex))
    assert solve_delta_lin(np.ones(3, complex), c) == (0j, True)
    # a10 == a01 makes bi = 0, a rank-one system
    a = np.array([1 + 1j, 2 - 1j, 0.5j])
    assert solve_delta_lin(np.ones(3, complex), LinearCoeffs(0, a, a))[1]
    with pytest.raises(ValueError):
        solve_delta_lin(np.ones(2, complex), LinearCoeffs(0, a, a))


def test_counted_path_matches_vector_path(rng):
    eps, c = random_instance(rng, 7)
    ops = OpCounter()
    assert solve_delta_lin(eps, c, ops=ops)[0] == pytest.approx(solve_delta_lin(eps, c)[0], rel=1e-12)
    d = 0.1 + 0.05j
    assert np.allclose(update_error_counted(eps, c, d, ops), eps + c.apply(d))


@pytest.mark.parametrize("lc", [1, 3, 5, 12])
def test_op_counts(lc, rng):
    eps, c = random_instance(rng, lc)
    ops = OpCounter()
    solve_delta_lin(eps, c, ops=ops)
    update_error_counted(eps, c, 0.1j, ops)
    ref = step_op_counts(lc)
    assert ops["norm"]["mul"] == 10 * lc and ops["norm"]["add"] == 5 * (lc - 1)
    assert ops["solve"]["mul"] == 4 and ops["solve"]["add"] == 2
    assert ops["update"]["mul"] == 4 * lc and ops["update"]["add"] == 4 * lc
    for stage in ("norm", "solve", "update"):
        assert ops[stage]["mul"] == ref[stage]["mul"] and ops[stage]["add"] == ref[stage]["add"]


@given(cplx, st.floats(1e-3, 5))
def test_trust_region(d, dmax):
    gamma, applied = trust_region(d, dmax)
    assert 0 < gamma <= 1
    assert abs(applied) <= dmax * (1 + 1e-12)
    if abs(d) <= dmax:
        assert applied == d and gamma == 1
    else:
        assert np.angle(applied) == pytest.approx(np.angle(d), abs=1e-9)


def test_trust_region_rejects_nonpositive():
    with pytest.raises(ValueError):
        trust_region(1j, 0.0)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10), st.floats(0, 1))
def test_descent_along_scaled_step(seed, lc, gamma):
    eps, c = random_instance(np.random.default_rng(seed), lc)
    d, degenerate = solve_delta_lin(eps, c)
    q0 = float(np.sum(np.abs(eps) ** 2))
    assert quadratic_objective(eps, c, gamma * d) <= q0 * (1 + 1e-12) + 1e-12
