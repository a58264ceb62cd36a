import numpy as np
import pytest

from satpredist.dsp import apsk32, psk
from satpredist.predistort import (LutBudgetError, build_lut, estimate_coeffs_lut, estimate_coeffs_volterra,
                                   load_lut, save_lut)
from satpredist.volterra import reduce

from conftest import random_sparse_kernels


@pytest.fixture
def kernels(rng):
    return random_sparse_kernels(rng, 5, 1, 1, 10)


@pytest.mark.parametrize("lazy", [False, True])
def test_lut_equals_reduced_volterra_on_grid(kernels, rng, lazy):
    c = apsk32()
    lut = build_lut(kernels, c, 3, lazy=lazy)
    k = reduce(kernels, length=3)
    x = c.random_symbols(40, rng)
    for j in range(40):
        a = estimate_coeffs_lut(lut, x, j)
        b = estimate_coeffs_volterra(k, x, j)
        assert a.lo == b.lo
        assert np.allclose(a.a10, b.a10, atol=1e-14) and np.allclose(a.a01, b.a01, atol=1e-14)


def test_lut_window_five_lazy(rng):
    k = random_sparse_kernels(rng, 3, 2, 2, 12)
    c = apsk32()
    lut = build_lut(k, c, 5, lazy=True)
    x = c.random_symbols(30, rng)
    for j in (0, 1, 15, 28, 29):
        a = estimate_coeffs_lut(lut, x, j)
        b = estimate_coeffs_volterra(reduce(k, length=5), x, j)
        assert np.allclose(a.a10, b.a10) and np.allclose(a.a01, b.a01)
    assert len(lut) > 0


def test_lut_rounds_off_grid_inputs(kernels, rng):
    c = apsk32()
    lut = build_lut(kernels, c, 3)
    x = c.random_symbols(20, rng)
    a = estimate_coeffs_lut(lut, x + 0.01, 10)
    b = estimate_coeffs_lut(lut, x, 10)
    assert np.array_equal(a.a10, b.a10)


def test_frozen_lut_reads_data_block(kernels, rng):
    c = apsk32()
    lut = build_lut(kernels, c, 3, frozen_inputs=True)
    s = c.random_symbols(20, rng)
    a = estimate_coeffs_lut(lut, s + 0.3, 10, s=s)
    b = estimate_coeffs_lut(build_lut(kernels, c, 3), s, 10)
    assert np.allclose(a.a10, b.a10)
    with pytest.raises(ValueError):
        estimate_coeffs_lut(lut, s, 10)


def test_lut_budget(kernels):
    with pytest.raises(LutBudgetError):
        build_lut(kernels, apsk32(), 5, max_entries=1 << 20)


def test_lut_roundtrip_dense_and_sparse(kernels, rng, tmp_path):
    c = psk(8)
    lut = build_lut(kernels, c, 3, frozen_inputs=True)
    save_lut(lut, tmp_path / "d.lut")
    back = load_lut(tmp_path / "d.lut")
    assert back.is_dense and back.frozen_inputs and back.length == 3
    assert np.array_equal(back.dense_a10, lut.dense_a10)
    assert np.allclose(back.grid.points, c.points)

    lazy = build_lut(kernels, c, 5, lazy=True)
    x = c.random_symbols(20, rng)
    estimate_coeffs_lut(lazy, x, 10)
    save_lut(lazy, tmp_path / "s.lut")
    back = load_lut(tmp_path / "s.lut")
    assert not back.is_dense and set(back.cache) == set(lazy.cache)
    with pytest.raises(ValueError):
        (tmp_path / "bad.lut").write_bytes(b"garbage")
        load_lut(tmp_path / "bad.lut")


def test_lut_requires_odd_length(kernels):
    with pytest.raises(ValueError):
        build_lut(kernels, apsk32(), 4)
