"""Zero-forcing linear pre-filter."""

from __future__ import annotations

import numpy as np

from ..dsp import FirFilter


class NotInvertibleError(ValueError):
    """The linear response has a spectral null in the working band."""


def zf_from_taps(h, L1: int, n_taps: int = 63, nfft: int = 1024, min_gain: float = 1e-3) -> FirFilter:
    """Symbol-rate FIR approximating ``1/H`` for a response ``h`` on lags
    ``-L1 .. len(h) - L1 - 1``.

    The inverse is taken on an ``nfft`` grid and its ``n_taps`` centre taps are
    kept (delay = centre tap).
    """
    h = np.asarray(h, dtype=complex)
    if n_taps < 1 or n_taps > nfft:
        raise ValueError("n_taps must lie in [1, nfft]")
    buf = np.zeros(nfft, complex)
    lags = np.arange(h.size) - L1
    np.add.at(buf, lags % nfft, h)
    H = np.fft.fft(buf)
    if np.min(np.abs(H)) < min_gain * np.max(np.abs(H)):
        raise NotInvertibleError(f"|H| drops to {np.min(np.abs(H)):.3g}")
    z = np.fft.ifft(1 / H)
    c = (n_taps - 1) // 2
    taps = np.r_[z[nfft - c :], z[: n_taps - c]] if c else z[:n_taps]
    return FirFilter(taps, c)


def linear_response(channel, L1: int, L2: int, n_train: int = 8192, seed: int = 7):
    """Best order-1 fit of ``channel`` on lags ``-L1..L2``."""
    from ..volterra import identify

    return identify(channel, 1, L1, L2, n_train=n_train, seed=seed).kernels.linear_taps()


def zf_prefilter(channel, n_taps: int = 63, L1: int | None = None, L2: int | None = None,
                 nfft: int = 1024) -> FirFilter:
    """ZF pre-filter for a channel or a kernel set.

    Kernels contribute their order-1 taps; a simulated channel is fitted by a
    linear least-squares model at its operating point over a window twice its
    calibrated memory.
    """
    from ..volterra import VolterraKernels

    if isinstance(channel, VolterraKernels):
        return zf_from_taps(channel.linear_taps(), channel.L1, n_taps, nfft)
    L1 = 2 * channel.L1 + 1 if L1 is None else L1
    L2 = 2 * channel.L2 + 1 if L2 is None else L2
    return zf_from_taps(linear_response(channel, L1, L2), L1, n_taps, nfft)
