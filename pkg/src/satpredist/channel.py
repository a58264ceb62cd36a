"""Oversampled simulation of the satellite transponder chain.

    x(n) -> upsample -> SRRC -> IMUX -> HPA -> OMUX -> SRRC -> sample -> y(n)

The two linear sections around the memoryless HPA are folded into a transmit
response ``g1`` (optional symbol-rate pre-filter, shaping filter, IMUX) and a
receive response ``g2`` (OMUX, matched filter). The simulator is noiseless;
:func:`add_awgn` is the only stochastic operation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import signal as sps

from .dsp import FirFilter, apsk32, design_srrc, fir_from_response

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# amplifier


@dataclass(frozen=True, eq=False)
class HpaModel:
    """Memoryless amplifier: AM-AM ``A(r)`` and AM-PM ``Phi(r)`` in radians.

    ``kind="saleh"`` uses ``A = aa r / (1 + ba r^2)`` and
    ``Phi = ap r^2 / (1 + bp r^2)``. ``kind="table"`` interpolates sampled
    curves linearly; inputs beyond the last table amplitude are clamped to the
    last table value.
    """

    kind: str = "saleh"
    alpha_a: float = 2.1587
    beta_a: float = 1.1517
    alpha_p: float = 4.0033
    beta_p: float = 9.1040
    table_in: np.ndarray | None = field(default=None, repr=False)
    table_out: np.ndarray | None = field(default=None, repr=False)
    table_phase: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "table":
            tin = np.asarray(self.table_in, float)
            tout = np.asarray(self.table_out, float)
            tph = np.asarray(self.table_phase, float)
            if not (tin.shape == tout.shape == tph.shape) or tin.size < 2:
                raise ValueError("AM-AM/AM-PM tables must have equal length >= 2")
            if np.any(np.diff(tin) <= 0):
                raise ValueError("table input amplitudes must be strictly increasing")
            if tin[0] != 0 or tout[0] != 0:
                raise ValueError("tables must start at (0, 0)")
            peak = int(np.argmax(tout))
            if np.any(np.diff(tout[: peak + 1]) < 0):
                raise ValueError("AM-AM must be non-decreasing up to saturation")
            object.__setattr__(self, "table_in", tin)
            object.__setattr__(self, "table_out", tout)
            object.__setattr__(self, "table_phase", tph)
        elif self.kind != "saleh":
            raise ValueError(f"unknown HPA kind {self.kind!r}")

    @classmethod
    def from_tables(cls, amp_in, amp_out, phase_rad) -> "HpaModel":
        return cls(kind="table", table_in=amp_in, table_out=amp_out, table_phase=phase_rad)

    def am_am(self, r):
        if self.kind == "saleh":
            return self.alpha_a * r / (1 + self.beta_a * r * r)
        return np.interp(r, self.table_in, self.table_out)

    def am_pm(self, r):
        if self.kind == "saleh":
            r2 = r * r
            return self.alpha_p * r2 / (1 + self.beta_p * r2)
        return np.interp(r, self.table_in, self.table_phase)

    @property
    def input_saturation(self) -> float:
        """Input amplitude of maximum output."""
        if self.kind == "saleh":
            return 1 / np.sqrt(self.beta_a)
        return float(self.table_in[np.argmax(self.table_out)])

    @property
    def output_saturation(self) -> float:
        return float(self.am_am(self.input_saturation))

    @property
    def small_signal_gain(self) -> float:
        """Output/input gain of the curve at vanishing drive."""
        if self.kind == "saleh":
            return self.alpha_a
        return float(self.table_out[1] / self.table_in[1])

    def __call__(self, u):
        r = np.abs(u)
        return self.am_am(r) * np.exp(1j * (np.angle(u) + self.am_pm(r)))


def hpa_apply(x, hpa: HpaModel, ibo_db: float) -> np.ndarray:
    """Drive the amplifier so that unit input amplitude sits ``ibo_db`` below
    the input saturation amplitude."""
    if not np.isfinite(ibo_db):
        raise ValueError("ibo_db must be finite")
    g = hpa.input_saturation * 10 ** (-ibo_db / 20)
    return hpa(g * np.asarray(x, dtype=complex))


# ---------------------------------------------------------------------------
# channel filters


def chebyshev_response(order: int, ripple_db: float, bw3db_hz: float, gd_parabolic_s: float = 0.0,
                       analog_phase: bool = False):
    """Baseband equivalent of a Chebyshev type-I bandpass prototype.

    Returns a callable ``H(f)``; the two-sided 3-dB bandwidth is ``bw3db_hz``
    and the peak magnitude is 1. By default only the magnitude of the
    prototype is kept (flat group delay, i.e. an ideally group-delay
    equalized multiplexer); ``analog_phase`` keeps the prototype's own phase.
    ``gd_parabolic_s`` adds a group delay of ``gd_parabolic_s * (2 f / bw3db_hz)^2``.
    """
    eps = np.sqrt(10 ** (ripple_db / 10) - 1)
    # ratio of the 3-dB frequency to the ripple-band edge
    ratio = np.cosh(np.arccosh(1 / eps) / order)
    f_edge = bw3db_hz / 2 / ratio
    z, p, k = sps.cheby1(order, ripple_db, 2 * np.pi * f_edge, analog=True, output="zpk")

    def response(f):
        f = np.asarray(f, float)
        _, h = sps.freqs_zpk(z, p, k, worN=2 * np.pi * f)
        if not analog_phase:
            h = np.abs(h)
        if gd_parabolic_s:
            fn = 2 * f / bw3db_hz
            h = h * np.exp(-2j * np.pi * gd_parabolic_s * fn**2 * f / 3)
        return h

    return response


# ---------------------------------------------------------------------------
# channel


@dataclass(frozen=True)
class OperatingPoint:
    ibo_db: float
    obo_db: float
    omux_loss_db: float


@dataclass(frozen=True, eq=False)
class ChannelModel:
    """Calibrated end-to-end channel.

    ``delay`` is the end-to-end sample delay such that
    ``y(n) = rx_gain * z[n * osf + delay]`` where ``z`` is the full
    convolution output of the receive section. ``drive`` scales the transmit
    section so that i.i.d. unit-energy symbols give unit mean power at the
    HPA input; ``ibo_db`` is then the back-off of that mean power from input
    saturation. ``L1``/``L2`` are the anti-causal/causal symbol memories used
    by the pre-distorter's coefficient window. ``prefilter`` is an optional
    symbol-rate filter applied before shaping (the zero-forcing filter).
    """

    tx_filter: FirFilter
    imux: FirFilter
    hpa: HpaModel
    ibo_db: float
    omux: FirFilter
    rx_filter: FirFilter
    osf: int = 8
    symbol_rate_hz: float = 36e6
    L1: int = 0
    L2: int = 0
    delay: int = 0
    drive: float = 1.0
    rx_gain: complex = 1.0
    prefilter: FirFilter | None = None

    def __post_init__(self):
        if self.osf < 1:
            raise ValueError("osf must be >= 1")
        if self.L1 < 0 or self.L2 < 0:
            raise ValueError("memory bounds must be non-negative")

    @property
    def Lc(self) -> int:
        return self.L1 + self.L2 + 1

    @cached_property
    def g1(self) -> np.ndarray:
        taps = np.convolve(self.tx_filter.taps, self.imux.taps)
        if self.prefilter is not None:
            up = np.zeros((len(self.prefilter) - 1) * self.osf + 1, complex)
            up[:: self.osf] = self.prefilter.taps
            taps = np.convolve(up, taps)
        return taps

    @cached_property
    def g2(self) -> np.ndarray:
        return np.convolve(self.omux.taps, self.rx_filter.taps)

    def hpa_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        up = np.zeros(x.size * self.osf, complex)
        up[:: self.osf] = x
        return self.drive * sps.oaconvolve(up, self.g1) if up.size > 2048 else self.drive * np.convolve(up, self.g1)

    def _receive(self, v) -> np.ndarray:
        return sps.oaconvolve(v, self.g2) if v.size > 2048 else np.convolve(v, self.g2)

    def _sample(self, z, n) -> np.ndarray:
        return self.rx_gain * z[self.delay + self.osf * np.arange(n)]

    def simulate(self, x) -> np.ndarray:
        """Noiseless received symbols, same length as ``x``.

        Symbols outside the block are zero; edge outputs beyond the block are
        discarded.
        """
        x = np.asarray(x, dtype=complex)
        if x.size < 1:
            raise ValueError("empty block")
        v = hpa_apply(self.hpa_input(x), self.hpa, self.ibo_db)
        return self._sample(self._receive(v), x.size)

    def simulate_linear(self, x) -> np.ndarray:
        """The chain with the HPA replaced by its small-signal gain."""
        x = np.asarray(x, dtype=complex)
        g = self.hpa.small_signal_gain * self.hpa.input_saturation * 10 ** (-self.ibo_db / 20)
        return self._sample(self._receive(g * self.hpa_input(x)), x.size)

    def state(self, x) -> "ChannelState":
        return ChannelState(self, x)

    def with_prefilter(self, prefilter: FirFilter | None, calibrate: bool = True) -> "ChannelModel":
        """Same chain with a symbol-rate filter in front of shaping.

        The drive is renormalized so ``ibo_db`` keeps its meaning for the
        filtered signal, the delay absorbs the pre-filter delay, and
        ``rx_gain`` and memory bounds are re-calibrated.
        """
        base = self.delay - (self.prefilter.delay * self.osf if self.prefilter is not None else 0)
        ch = replace(self, prefilter=prefilter,
                     delay=base + (prefilter.delay * self.osf if prefilter is not None else 0))
        ch = replace(ch, drive=_unit_drive(ch.g1, ch.osf))
        return calibrate_channel(ch) if calibrate else ch

    def with_ibo(self, ibo_db: float, calibrate: bool = True) -> "ChannelModel":
        ch = replace(self, ibo_db=float(ibo_db))
        return calibrate_channel(ch) if calibrate else ch

    def with_memory(self, L1: int, L2: int) -> "ChannelModel":
        return replace(self, L1=int(L1), L2=int(L2))


class ChannelState:
    """Exact incremental tracker of the channel for a block being edited.

    Holds the HPA input/output for the current block. Changing one symbol
    only touches ``len(g1)`` HPA samples, so the output change is a fixed
    matrix (``G``) applied to the HPA output change, independent of the
    position.
    """

    def __init__(self, ch: ChannelModel, x):
        x = np.array(x, dtype=complex)
        self.ch = ch
        self.n = x.size
        self.x = x
        self.u = ch.hpa_input(x)
        self.gain = ch.hpa.input_saturation * 10 ** (-ch.ibo_db / 20)
        self.v = ch.hpa(self.gain * self.u)
        self.y = ch._sample(ch._receive(self.v), x.size)
        self._g1 = ch.drive * ch.g1
        self.r_lo, self.r_hi, self.G = _output_matrix(ch)

    def support(self, j: int) -> tuple[int, int]:
        """Half-open range of outputs that depend on symbol ``j``."""
        return max(0, j + self.r_lo), min(self.n, j + self.r_hi + 1)

    def outputs_if(self, j: int, delta: complex, lo: int, hi: int) -> np.ndarray:
        """Outputs ``y[lo:hi]`` if ``x[j]`` were changed by ``delta``."""
        return self.y[lo:hi] + self._dy(j, delta, lo, hi)

    def _dv(self, j, delta):
        t = j * self.ch.osf
        seg = slice(t, t + self._g1.size)
        u_new = self.u[seg] + delta * self._g1
        return seg, u_new, self.ch.hpa(self.gain * u_new) - self.v[seg]

    def _dy(self, j, delta, lo, hi):
        _, _, dv = self._dv(j, delta)
        rows = slice(lo - j - self.r_lo, hi - j - self.r_lo)
        return self.ch.rx_gain * (self.G[rows] @ dv)

    def commit(self, j: int, delta: complex) -> None:
        seg, u_new, dv = self._dv(j, delta)
        lo, hi = self.support(j)
        rows = slice(lo - j - self.r_lo, hi - j - self.r_lo)
        self.y[lo:hi] += self.ch.rx_gain * (self.G[rows] @ dv)
        self.u[seg] = u_new
        self.v[seg] += dv
        self.x[j] += delta


def _output_matrix(ch: ChannelModel):
    key = "_output_matrix_cache"
    cached = ch.__dict__.get(key)
    if cached is not None:
        return cached
    n1, n2, osf, d = ch.g1.size, ch.g2.size, ch.osf, ch.delay
    r_lo = -(d // osf)
    r_hi = (n1 + n2 - 2 - d) // osf
    r = np.arange(r_lo, r_hi + 1)[:, None]
    tau = np.arange(n1)[None, :]
    k = r * osf + d - tau
    G = np.where((k >= 0) & (k < n2), ch.g2[np.clip(k, 0, n2 - 1)], 0)
    out = (int(r_lo), int(r_hi), G)
    ch.__dict__[key] = out
    return out


def _unit_drive(g1, osf):
    # mean HPA-input power for i.i.d. unit-energy symbols is sum|g1|^2 / osf
    return float(np.sqrt(osf / np.sum(np.abs(g1) ** 2)))


def calibrate_channel(ch: ChannelModel, n_cal: int = 4096, seed: int = 1234,
                      threshold_db: float = -40.0) -> ChannelModel:
    """Fix ``rx_gain`` by least squares on random 32-APSK data, then measure
    the memory bounds at the resulting drive."""
    s = apsk32().random_symbols(n_cal, seed)
    y = replace(ch, rx_gain=1.0).simulate(s)
    ch = replace(ch, rx_gain=complex(np.vdot(y, s) / np.vdot(y, y)))
    L1, L2 = measure_memory(ch, threshold_db=threshold_db, seed=seed)
    return replace(ch, L1=L1, L2=L2)


def measure_memory(ch: ChannelModel, threshold_db: float = -40.0, n: int = 512,
                   positions: int = 8, probe: float = 1e-4, seed: int = 0) -> tuple[int, int]:
    """Anti-causal/causal memory from the response to a single-symbol probe.

    A real and an imaginary probe are applied to ``positions`` symbols of a
    random block; outputs whose sensitivity stays below ``threshold_db``
    (power, relative to the peak) at every position are outside the memory.
    """
    rng = np.random.default_rng(seed)
    s = apsk32().random_symbols(n, rng)
    st = ch.state(s)
    env = np.zeros(st.r_hi - st.r_lo + 1)
    for j in rng.integers(n // 4, 3 * n // 4, positions):
        lo, hi = st.support(j)
        for d in (probe, 1j * probe):
            dy = np.abs(st.outputs_if(j, d, lo, hi) - st.y[lo:hi]) / probe
            env[lo - j - st.r_lo : hi - j - st.r_lo] = np.maximum(env[lo - j - st.r_lo : hi - j - st.r_lo], dy)
    keep = np.nonzero(env**2 >= env.max() ** 2 * 10 ** (threshold_db / 10))[0] + st.r_lo
    return int(-keep.min()), int(keep.max())


# ---------------------------------------------------------------------------
# configuration and construction


@dataclass
class ChannelConfig:
    """Parameters of the default transponder chain."""

    rolloff: float = 0.1
    srrc_span: int = 32
    osf: int = 8
    symbol_rate_hz: float = 36e6
    imux_order: int = 4
    imux_ripple_db: float = 0.1
    imux_bw_hz: float = 36e6
    imux_gd_s: float = 0.0
    omux_order: int = 4
    omux_ripple_db: float = 0.1
    omux_bw_hz: float = 36e6
    omux_gd_s: float = 0.0
    mux_analog_phase: bool = False
    mux_taps: int = 257
    flat_mux: bool = False
    hpa: HpaModel = field(default_factory=HpaModel)
    ibo_db: float = 3.0
    memory_threshold_db: float = -40.0


def build_channel(cfg: ChannelConfig | None = None, **overrides) -> ChannelModel:
    """Build and calibrate a channel from a configuration."""
    cfg = replace(cfg or ChannelConfig(), **overrides)
    if cfg.osf < 2:
        raise ValueError("osf must be >= 2 to avoid aliasing of the HPA products")
    srrc = design_srrc(cfg.rolloff, cfg.srrc_span, cfg.osf)
    if cfg.flat_mux:
        imux = omux = FirFilter.identity()
    else:
        imux = fir_from_response(
            chebyshev_response(cfg.imux_order, cfg.imux_ripple_db, cfg.imux_bw_hz, cfg.imux_gd_s,
                               cfg.mux_analog_phase),
            cfg.mux_taps, cfg.osf, cfg.symbol_rate_hz)
        omux = fir_from_response(
            chebyshev_response(cfg.omux_order, cfg.omux_ripple_db, cfg.omux_bw_hz, cfg.omux_gd_s,
                               cfg.mux_analog_phase),
            cfg.mux_taps, cfg.osf, cfg.symbol_rate_hz)
    lin = np.convolve(np.convolve(srrc.taps, imux.taps), np.convolve(omux.taps, srrc.taps))
    ch = ChannelModel(srrc, imux, cfg.hpa, float(cfg.ibo_db), omux, srrc, cfg.osf,
                      cfg.symbol_rate_hz, delay=int(np.argmax(np.abs(lin))))
    ch = replace(ch, drive=_unit_drive(ch.g1, ch.osf))
    ch = calibrate_channel(ch, threshold_db=cfg.memory_threshold_db)
    log.debug("channel ibo=%.2f dB L1=%d L2=%d rx_gain=%s", ch.ibo_db, ch.L1, ch.L2, ch.rx_gain)
    return ch


# ---------------------------------------------------------------------------
# noise and operating point


def add_awgn(y, esn0_db: float, seed=None) -> np.ndarray:
    """Circular complex Gaussian noise at ``Es/N0 = esn0_db`` where Es is the
    mean energy of ``y``. ``esn0_db = inf`` returns ``y`` unchanged."""
    y = np.asarray(y, dtype=complex)
    if np.isposinf(esn0_db):
        return y.copy()
    if not np.isfinite(esn0_db):
        raise ValueError("esn0_db must be finite or +inf")
    rng = np.random.default_rng(seed)
    es = np.mean(np.abs(y) ** 2)
    sigma = np.sqrt(es * 10 ** (-esn0_db / 10) / 2)
    return y + sigma * (rng.standard_normal(y.size) + 1j * rng.standard_normal(y.size))


def _blocks(x):
    if isinstance(x, np.ndarray) and x.ndim == 1:
        return [x.astype(complex)]
    return [np.asarray(b, dtype=complex) for b in x]


def _omux_output(ch: ChannelModel, x) -> tuple[np.ndarray, np.ndarray]:
    v = hpa_apply(ch.hpa_input(x), ch.hpa, ch.ibo_db)
    w = np.convolve(v, ch.omux.taps) if v.size <= 2048 else sps.oaconvolve(v, ch.omux.taps)
    return v, w


def measure_operating_point(ch: ChannelModel, x) -> OperatingPoint:
    """OBO of the HPA output and mean power loss across the OMUX.

    ``x`` is one block or a sequence of blocks; powers are pooled over all
    blocks. Each block is simulated in isolation (zero history).
    """
    p_in = p_out = p_omux = 0.0
    n = 0
    for b in _blocks(x):
        if not np.any(ch.hpa_input(b)):
            raise ValueError("zero-power input")
        v, w = _omux_output(ch, b)
        p_out += np.sum(np.abs(v) ** 2)
        p_omux += np.sum(np.abs(w) ** 2)
        n += b.size
    obo = 10 * np.log10(ch.hpa.output_saturation**2 / (p_out / (n * ch.osf)))
    loss = 10 * np.log10(p_out / p_omux)
    return OperatingPoint(ch.ibo_db, float(obo), float(loss))


def receiver_input_energy(ch: ChannelModel, x) -> float:
    """Mean symbol energy at the receiver input (OMUX output).

    With the unit-energy matched filter, white noise of this per-sample
    variance ``N0`` gives ``Es/N0`` at the decision variable.
    """
    total = 0.0
    n = 0
    for b in _blocks(x):
        total += np.sum(np.abs(_omux_output(ch, b)[1]) ** 2)
        n += b.size
    return float(total / n)
