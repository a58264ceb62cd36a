"""Complex-baseband DSP primitives.

Filters are stored as :class:`FirFilter` (taps plus a declared group delay in
samples). :func:`fir_filter` always returns an output of the same length as its
input, shifted so that the declared delay is compensated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import signal as sps
from scipy.optimize import least_squares


@dataclass(frozen=True)
class ComplexSignal:
    """Sampled complex-baseband signal at ``rate`` samples per symbol."""

    samples: np.ndarray
    rate: int = 1

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=complex)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        if self.rate < 1:
            raise ValueError("rate must be >= 1")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class FirFilter:
    taps: np.ndarray
    delay: int = 0

    def __post_init__(self):
        taps = np.atleast_1d(np.asarray(self.taps, dtype=complex))
        if taps.size == 0:
            raise ValueError("filter needs at least one tap")
        if not 0 <= self.delay < taps.size:
            raise ValueError(f"delay {self.delay} outside [0, {taps.size})")
        object.__setattr__(self, "taps", taps)

    def __len__(self):
        return len(self.taps)

    @classmethod
    def identity(cls) -> "FirFilter":
        return cls(np.array([1.0 + 0j]), 0)

    def cascade(self, other: "FirFilter") -> "FirFilter":
        """Series connection; delays add."""
        return FirFilter(np.convolve(self.taps, other.taps), self.delay + other.delay)

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.taps) ** 2))


@dataclass(frozen=True)
class Constellation:
    """Unit average energy point set with an optional bit labelling.

    ``labels[i]`` is the integer bit label of ``points[i]``; it defaults to the
    natural index labelling.
    """

    points: np.ndarray
    label: str = ""
    labels: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=complex)
        energy = np.mean(np.abs(pts) ** 2)
        if abs(energy - 1.0) > 1e-12:
            raise ValueError(f"constellation energy {energy} != 1")
        d = np.abs(pts[:, None] - pts[None, :]) + np.eye(len(pts))
        if np.min(d) < 1e-12:
            raise ValueError("constellation points must be distinct")
        object.__setattr__(self, "points", pts)
        labels = np.arange(len(pts)) if self.labels is None else np.asarray(self.labels, int)
        if sorted(labels.tolist()) != list(range(len(pts))):
            raise ValueError("labels must be a permutation of 0..P-1")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.points)

    @property
    def bits_per_symbol(self) -> int:
        return int(np.ceil(np.log2(len(self.points))))

    def random_symbols(self, n: int, rng: np.random.Generator | int | None = None) -> np.ndarray:
        rng = np.random.default_rng(rng)
        return self.points[rng.integers(0, len(self.points), n)]


def _normalize(points: np.ndarray) -> np.ndarray:
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


def apsk(ring_sizes, radii, phase_offsets, label: str = "apsk") -> Constellation:
    """Concentric-ring constellation, normalized to unit average energy."""
    pts = []
    for size, radius, offset in zip(ring_sizes, radii, phase_offsets):
        k = np.arange(size)
        pts.append(radius * np.exp(1j * (offset + 2 * np.pi * k / size)))
    return Constellation(_normalize(np.concatenate(pts)), label)


# DVB-S2 ring radius ratios (R2/R1, R3/R1) for 32-APSK, indexed by code rate.
APSK32_RATIOS = {
    "3/4": (2.84, 5.27),
    "4/5": (2.72, 4.87),
    "5/6": (2.64, 4.64),
    "8/9": (2.54, 4.33),
    "9/10": (2.53, 4.30),
}


def apsk32(code_rate: str = "3/4") -> Constellation:
    """DVB-S2 4+12+16 APSK."""
    g1, g2 = APSK32_RATIOS[code_rate]
    return apsk(
        (4, 12, 16),
        (1.0, g1, g2),
        (np.pi / 4, np.pi / 12, 0.0),
        label=f"32apsk-{code_rate}",
    )


def psk(order: int, offset: float = 0.0) -> Constellation:
    return apsk((order,), (1.0,), (offset,), label=f"{order}psk")


def qam(order: int) -> Constellation:
    m = int(round(np.sqrt(order)))
    if m * m != order:
        raise ValueError("square QAM only")
    levels = 2 * np.arange(m) - (m - 1)
    pts = (levels[:, None] + 1j * levels[None, :]).ravel()
    return Constellation(_normalize(pts), f"{order}qam")


def nearest_point(z, c: Constellation):
    """Index of the closest constellation point.

    Works elementwise on arrays. Ties go to the lowest index (``argmin``
    returns the first minimum).
    """
    z = np.asarray(z, dtype=complex)
    d = np.abs(z[..., None] - c.points) ** 2
    idx = np.argmin(d, axis=-1)
    return int(idx) if idx.ndim == 0 else idx


def design_srrc(rolloff: float, span_symbols: int = 32, osf: int = 8,
                nyquist_correct: bool = True) -> FirFilter:
    """Square-root raised cosine filter with unit energy.

    The filter has ``span_symbols * osf + 1`` taps (odd, so it has an integer
    centre) and its delay is the centre tap.

    Truncating the ideal response leaves residual ISI in the self-cascade
    (about 4e-3 of the peak for rolloff 0.1 over 32 symbols). With
    ``nyquist_correct`` the symmetric taps are nudged by a damped least-squares
    fit that drives the cascade's symbol-spaced samples to zero while staying
    close to the ideal response.
    """
    if not 0 < rolloff <= 1:
        raise ValueError("rolloff must lie in (0, 1]")
    if span_symbols < 1 or osf < 1 or span_symbols * osf < 2:
        raise ValueError("span_symbols * osf must be >= 2")
    taps = _srrc_taps(float(rolloff), int(span_symbols), int(osf), bool(nyquist_correct))
    return FirFilter(taps.astype(complex), (len(taps) - 1) // 2)


def _ideal_srrc(rolloff, n, osf):
    t = (np.arange(n) - (n - 1) / 2) / osf
    b = rolloff
    h = np.empty(n)
    zero = np.isclose(t, 0.0)
    pole = np.isclose(np.abs(4 * b * t), 1.0)
    rest = ~(zero | pole)
    tr = t[rest]
    h[rest] = (np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))) / (
        np.pi * tr * (1 - (4 * b * tr) ** 2)
    )
    h[zero] = 1 - b + 4 * b / np.pi
    h[pole] = b / np.sqrt(2) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
    )
    return h / np.sqrt(np.sum(h**2))


@lru_cache(maxsize=32)
def _srrc_taps(rolloff, span, osf, correct):
    n = span * osf + 1
    h0 = _ideal_srrc(rolloff, n, osf)
    if not correct or span < 2:
        return h0
    c = (n - 1) // 2
    half = h0[: c + 1]
    # symbol-spaced samples of h*h on one side of the centre (index 2c)
    lags = np.arange(2 * c + osf, 2 * (n - 1) + 1, osf)
    damp = np.sqrt(1e-4)
    # h = S @ p mirrors the half-filter parameters
    S = np.zeros((n, c + 1))
    S[np.arange(c + 1), np.arange(c + 1)] = 1
    S[n - 1 - np.arange(c), np.arange(c)] = 1

    def residual(p):
        h = S @ p
        return np.r_[np.convolve(h, h)[lags], damp * (p - half)]

    def jac(p):
        h = S @ p
        # d(h*h)[m]/dh_i = 2 h[m - i]
        i = np.arange(n)
        k = lags[:, None] - i[None, :]
        J = np.where((k >= 0) & (k < n), 2 * h[np.clip(k, 0, n - 1)], 0.0) @ S
        return np.vstack([J, damp * np.eye(c + 1)])

    p = least_squares(residual, half, jac=jac, method="lm").x
    h = S @ p
    return h / np.sqrt(np.sum(h**2))


def fir_filter(x: ComplexSignal | np.ndarray, f: FirFilter) -> ComplexSignal | np.ndarray:
    """Same-length, delay-compensated linear convolution.

    ``out[n] = sum_k taps[k] * x[n + delay - k]`` with ``x`` taken as zero
    outside its support. Plain arrays in give plain arrays out.
    """
    wrapped = isinstance(x, ComplexSignal)
    data = x.samples if wrapped else np.asarray(x, dtype=complex)
    if data.size == 0:
        raise ValueError("empty input")
    full = sps.oaconvolve(data, f.taps) if data.size > 4096 else np.convolve(data, f.taps)
    out = full[f.delay : f.delay + data.size]
    return ComplexSignal(out, x.rate) if wrapped else out


def upsample_insert_zeros(symbols, osf: int) -> ComplexSignal:
    symbols = np.asarray(symbols, dtype=complex)
    if osf < 1:
        raise ValueError("osf must be >= 1")
    out = np.zeros(symbols.size * osf, dtype=complex)
    out[::osf] = symbols
    return ComplexSignal(out, osf)


def downsample_at_symbol_instants(x: ComplexSignal | np.ndarray, osf: int, offset: int = 0) -> np.ndarray:
    data = x.samples if isinstance(x, ComplexSignal) else np.asarray(x, dtype=complex)
    if not 0 <= offset < osf:
        raise ValueError(f"offset {offset} outside [0, {osf})")
    return data[offset::osf].copy()


def fir_from_response(response, n_taps: int, osf: int, symbol_rate: float = 1.0, nfft: int = 8192,
                      window: str = "hann") -> FirFilter:
    """FIR approximation of a frequency response given as a callable of f (Hz).

    The response is sampled on an ``nfft`` grid over the sample rate
    ``osf * symbol_rate``, transformed to an impulse response, and the
    ``n_taps`` window holding most energy is kept (tapered by the right half
    of ``window`` on its tail). The delay is the tap of largest magnitude.
    """
    fs = osf * symbol_rate
    f = np.fft.fftfreq(nfft, d=1.0 / fs)
    h = np.fft.ifft(response(f))
    # keep a short pre-cursor so that non-causal ringing is not wrapped away
    pre = n_taps // 8
    taps = np.roll(h, pre)[:n_taps]
    tail = sps.get_window(window, 2 * (n_taps - pre))[n_taps - pre :]
    taps = taps.copy()
    taps[pre:] *= tail
    return FirFilter(taps, int(np.argmax(np.abs(taps))))
