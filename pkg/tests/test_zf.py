import numpy as np
import pytest

from satpredist.predistort import NotInvertibleError, zf_prefilter
from satpredist.predistort.zf import zf_from_taps
from satpredist.volterra import VolterraKernels


def test_zf_inverts_short_response():
    h = np.array([0.2, 1.0, -0.3j])
    f = zf_from_taps(h, 1, n_taps=63)
    g = np.convolve(h, f.taps)
    peak = int(np.argmax(np.abs(g)))
    assert abs(g[peak]) == pytest.approx(1.0, abs=1e-6)
    g[peak] = 0
    assert np.max(np.abs(g)) < 1e-6
    assert peak == f.delay + 1


def test_zf_spectral_null():
    with pytest.raises(NotInvertibleError):
        zf_from_taps(np.array([1.0, 1.0]), 0)


def test_zf_of_kernels_uses_linear_taps():
    k = VolterraKernels.from_entries({(-1,): 0.1, (0,): 1.0, (1,): 0.25, (0, 0, 0): -0.05})
    f = zf_prefilter(k)
    g = np.convolve(k.linear_taps(), f.taps)
    assert np.sort(np.abs(g))[-2] < 1e-6


def test_zf_reduces_channel_isi(default_channel):
    from satpredist.dsp import apsk32
    from satpredist.metrics import mse_db

    ch = default_channel.with_ibo(20.0)
    s = apsk32().random_symbols(2048, 3)
    raw = mse_db(s, ch.simulate(s))
    zf = mse_db(s, ch.with_prefilter(zf_prefilter(ch)).simulate(s))
    assert zf < raw - 5
