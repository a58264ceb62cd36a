import numpy as np
import pytest

from satpredist.channel import (ChannelConfig, HpaModel, add_awgn, build_channel, chebyshev_response, hpa_apply,
                                measure_operating_point, receiver_input_energy)
from satpredist.dsp import apsk32

A_A, B_A, A_P, B_P = 2.1587, 1.1517, 4.0033, 9.1040


def test_saleh_closed_form():
    h = HpaModel()
    r = np.array([0.0, 0.3, 1.0, 2.0])
    assert np.allclose(h.am_am(r), A_A * r / (1 + B_A * r**2))
    assert np.allclose(h.am_pm(r), A_P * r**2 / (1 + B_P * r**2))
    # saturation of A(r) = a r / (1 + b r^2) is at r = 1/sqrt(b) with A = a / (2 sqrt(b))
    assert h.input_saturation == pytest.approx(1 / np.sqrt(B_A))
    assert h.output_saturation == pytest.approx(A_A / (2 * np.sqrt(B_A)))
    assert h.small_signal_gain == pytest.approx(A_A)


def test_saleh_applies_phase_and_amplitude():
    h = HpaModel()
    u = 0.5 * np.exp(1j * 0.3)
    v = h(u)
    assert abs(v) == pytest.approx(A_A * 0.5 / (1 + B_A * 0.25))
    assert np.angle(v) == pytest.approx(0.3 + A_P * 0.25 / (1 + B_P * 0.25))


def test_hpa_apply_ibo_zero_is_saturation():
    h = HpaModel()
    assert abs(hpa_apply(np.array([1.0]), h, 0.0)[0]) == pytest.approx(h.output_saturation)
    with pytest.raises(ValueError):
        hpa_apply(np.array([1.0]), h, np.nan)


def test_table_hpa_matches_saleh_on_grid():
    s = HpaModel()
    r = np.linspace(0, 2, 401)
    t = HpaModel.from_tables(r, s.am_am(r), s.am_pm(r))
    q = np.linspace(0, 1.9, 37)
    assert np.allclose(t.am_am(q), s.am_am(q), atol=1e-4)
    # clamped beyond the table
    assert t.am_am(np.array([5.0]))[0] == pytest.approx(s.am_am(2.0))


@pytest.mark.parametrize("bad", [
    dict(table_in=[0, 1, 0.5], table_out=[0, 1, 1], table_phase=[0, 0, 0]),
    dict(table_in=[0.1, 1], table_out=[0, 1], table_phase=[0, 0]),
    dict(table_in=[0, 0.5, 1], table_out=[0, 1, 0.5 + 0.6], table_phase=[0, 0]),
])
def test_table_hpa_validation(bad):
    with pytest.raises(ValueError):
        HpaModel(kind="table", **bad)


def test_chebyshev_three_db_edges_and_ripple():
    H = chebyshev_response(4, 0.1, 36e6)
    assert 20 * np.log10(abs(H(18e6))) == pytest.approx(-3.0103, abs=1e-3)
    f = np.linspace(-14e6, 14e6, 2001)
    g = 20 * np.log10(np.abs(H(f)))
    assert g.max() <= 1e-9 and g.min() >= -0.1 - 1e-9


def test_build_channel_calibration(default_channel):
    ch = default_channel
    assert ch.Lc > 3
    s = apsk32().random_symbols(4096, 5)
    y = ch.simulate(s)
    # least-squares gain makes the error orthogonal to the output
    assert abs(np.vdot(y, y - s)) / np.vdot(y, y).real < 0.05
    # mean HPA input power is the requested back-off from saturation
    u = ch.hpa_input(s) * ch.hpa.input_saturation * 10 ** (-ch.ibo_db / 20)
    p = np.mean(np.abs(u) ** 2)
    assert 10 * np.log10(ch.hpa.input_saturation**2 / p) == pytest.approx(ch.ibo_db, abs=0.1)


def test_simulate_deterministic(default_channel):
    s = apsk32().random_symbols(300, 1)
    assert np.array_equal(default_channel.simulate(s), default_channel.simulate(s))


def test_linear_limit_matches_linear_simulation():
    ch = build_channel(ChannelConfig(ibo_db=40.0))
    s = apsk32().random_symbols(512, 2)
    y, yl = ch.simulate(s), ch.simulate_linear(s)
    assert np.linalg.norm(y - yl) / np.linalg.norm(yl) < 1e-3


def test_state_matches_full_simulation(default_channel, rng):
    ch = default_channel
    s = apsk32().random_symbols(200, rng)
    st = ch.state(s)
    assert np.allclose(st.y, ch.simulate(s), atol=1e-12)
    j, d = 77, 0.05 - 0.02j
    lo, hi = st.support(j)
    x2 = s.copy()
    x2[j] += d
    y2 = ch.simulate(x2)
    assert np.allclose(st.outputs_if(j, d, lo, hi), y2[lo:hi], atol=1e-12)
    # locality: outside the support nothing changes
    mask = np.ones(200, bool)
    mask[lo:hi] = False
    assert np.allclose(y2[mask], st.y[mask], atol=1e-12)
    st.commit(j, d)
    assert np.allclose(st.y, y2, atol=1e-12)


def test_operating_point_and_energy(default_channel):
    ch = default_channel
    s = apsk32().random_symbols(2048, 3)
    op = measure_operating_point(ch, s)
    assert 0 < op.obo_db < ch.ibo_db and op.omux_loss_db > 0
    assert receiver_input_energy(ch, s) > 0
    with pytest.raises(ValueError):
        measure_operating_point(ch, np.zeros(16))


def test_with_ibo_increases_obo(default_channel):
    s = apsk32().random_symbols(2048, 4)
    a = measure_operating_point(default_channel.with_ibo(2.0), s).obo_db
    b = measure_operating_point(default_channel.with_ibo(6.0), s).obo_db
    assert b > a


def test_add_awgn_power():
    y = np.ones(200000, complex)
    n = add_awgn(y, 10.0, seed=1) - y
    assert np.mean(np.abs(n) ** 2) == pytest.approx(0.1, rel=0.02)
    assert np.array_equal(add_awgn(y, np.inf), y)
