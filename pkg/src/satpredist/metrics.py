"""Error metrics and link-budget evaluation.

Noise convention: the non-linear link is charged with white noise at the
receiver input. With ``Es`` the mean symbol energy there (after the OMUX) and
a unit-energy matched filter, the decision variable ``y`` carries noise of
variance ``|rx_gain|^2 * N0``. The AWGN reference is ``y = s + n`` with
``Es = 1``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .channel import ChannelModel, measure_operating_point, receiver_input_energy
from .dsp import Constellation, apsk32, nearest_point

log = logging.getLogger(__name__)

MSE_FLOOR_DB = -200.0
TD_HEADER = ("ibo_db", "obo_db", "omux_loss_db", "req_nl_db", "req_awgn_db", "td_db")


class TargetUnreachableError(RuntimeError):
    """The target error rate is not bracketed by the search range."""


def mse_db(s, y) -> float:
    """``10 log10(mean|y - s|^2 / mean|s|^2)``, floored at -200 dB."""
    s = np.asarray(s, dtype=complex)
    y = np.asarray(y, dtype=complex)
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {y.shape}")
    err = np.mean(np.abs(y - s) ** 2)
    ref = np.mean(np.abs(s) ** 2)
    if err == 0:
        return MSE_FLOOR_DB
    return float(max(MSE_FLOOR_DB, 10 * np.log10(err / ref)))


def gray_labels(c: Constellation) -> np.ndarray:
    """Quasi-Gray labelling: points sorted by ring then angle get consecutive
    reflected-binary codes, so angular neighbours on a ring differ in one bit."""
    r = np.round(np.abs(c.points), 9)
    ang = np.mod(np.angle(c.points), 2 * np.pi)
    order = np.lexsort((ang, r))
    labels = np.empty(len(c), int)
    i = np.arange(len(c))
    labels[order] = i ^ (i >> 1)
    return labels


@dataclass(frozen=True)
class Detection:
    ser: float
    ber: float
    symbol_errors: int
    bit_errors: int
    n_symbols: int


def detect_ser_ber(y, s, c: Constellation, mapping=None) -> Detection:
    """Memoryless nearest-point detection of ``y`` against the sent ``s``.

    ``mapping[i]`` is the bit label of point ``i`` (default: the
    constellation's own labels).
    """
    y = np.asarray(y, dtype=complex)
    s = np.asarray(s, dtype=complex)
    if y.shape != s.shape:
        raise ValueError("length mismatch")
    labels = np.asarray(c.labels if mapping is None else mapping, int)
    det = nearest_point(y, c)
    ref = nearest_point(s, c)
    sym = int(np.count_nonzero(det != ref))
    diff = labels[det] ^ labels[ref]
    bits = int(sum(int(b).bit_count() for b in diff[diff != 0]))
    n = y.size
    return Detection(sym / n, bits / (n * c.bits_per_symbol), sym, bits, n)


def union_bound_ser(c: Constellation, esn0_db) -> np.ndarray:
    """Pairwise union bound on the SER of ``c`` (unit energy) in AWGN."""
    n0 = 10 ** (-np.asarray(esn0_db, float) / 10)
    d = np.abs(c.points[:, None] - c.points[None, :])
    d = d[~np.eye(len(c), dtype=bool)]
    q = 0.5 * erfc(d[None, :] / np.sqrt(2 * np.atleast_1d(n0))[:, None] / np.sqrt(2))
    out = q.sum(axis=1) / len(c)
    return out if np.ndim(esn0_db) else float(out[0])


@dataclass
class Link:
    """Noiseless received blocks with the statistics needed to add noise.

    ``noise_scale`` multiplies unit-variance complex noise at ``Es/N0 = 0 dB``
    (``|rx_gain|^2 * Es`` for a simulated channel, 1 for AWGN).
    """

    y: list
    s: list
    noise_scale: float
    constellation: Constellation = field(default_factory=apsk32)

    @classmethod
    def awgn(cls, c: Constellation, n_symbols: int, seed=0) -> "Link":
        s = c.random_symbols(n_symbols, seed)
        return cls([s], [s], 1.0, c)

    @classmethod
    def from_channel(cls, ch: ChannelModel, x_blocks, s_blocks, c: Constellation | None = None) -> "Link":
        y = [ch.simulate(x) for x in x_blocks]
        es = receiver_input_energy(ch, x_blocks)
        return cls(y, [np.asarray(s) for s in s_blocks], abs(ch.rx_gain) ** 2 * es, c or apsk32())

    @property
    def n_symbols(self) -> int:
        return sum(b.size for b in self.y)


def _noise(shape_sizes, draws, seed):
    rng = np.random.default_rng(seed)
    return [[(rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2) for n in shape_sizes]
            for _ in range(draws)]


def error_rate(link: Link, esn0_db: float, noise, metric: str = "ser") -> tuple[float, int]:
    """Error rate and error count over every block and noise draw."""
    sigma = np.sqrt(link.noise_scale * 10 ** (-esn0_db / 10))
    errs = total = 0
    for draw in noise:
        for y, s, w in zip(link.y, link.s, draw):
            d = detect_ser_ber(y + sigma * w, s, link.constellation)
            if metric == "ser":
                errs += d.symbol_errors
                total += d.n_symbols
            else:
                errs += d.bit_errors
                total += d.n_symbols * link.constellation.bits_per_symbol
    return errs / total, errs


def required_esn0(link: Link, target: float = 1e-2, lo: float = 0.0, hi: float = 40.0, tol_db: float = 0.05,
                  min_errors: int = 100, seed=0, metric: str = "ser", max_draws: int = 256) -> float:
    """``Es/N0`` (dB) at which the error rate of ``link`` falls to ``target``.

    Bisection on ``[lo, hi]`` until the bracket is narrower than ``tol_db``.
    The same noise realizations are reused at every trial point, so the
    estimated error rate is monotone in ``Es/N0``. Enough noise draws are
    used to expect at least ``min_errors`` error events at the target.
    """
    if not 0 < target < 1:
        raise ValueError("target must lie in (0, 1)")
    if not lo < hi:
        raise ValueError("empty search range")
    bits = link.constellation.bits_per_symbol if metric == "ber" else 1
    draws = int(np.ceil(min_errors / (target * link.n_symbols * bits)))
    if draws > max_draws:
        raise ValueError(f"{link.n_symbols} symbols are too few for {min_errors} errors at {target}")
    noise = _noise([b.size for b in link.y], max(1, draws), seed)
    r_lo, _ = error_rate(link, lo, noise, metric)
    r_hi, _ = error_rate(link, hi, noise, metric)
    if not r_lo >= target > r_hi:
        raise TargetUnreachableError(
            f"target {target:g} not bracketed: rate {r_lo:.3g} at {lo} dB, {r_hi:.3g} at {hi} dB")
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        r, _ = error_rate(link, mid, noise, metric)
        if r >= target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# total degradation


@dataclass(frozen=True)
class TdPoint:
    ibo_db: float
    obo_db: float
    omux_loss_db: float
    req_esn0_nl_db: float
    req_esn0_awgn_db: float

    @property
    def td_db(self) -> float:
        return self.obo_db + self.omux_loss_db + self.req_esn0_nl_db - self.req_esn0_awgn_db

    def row(self) -> list[str]:
        vals = (self.ibo_db, self.obo_db, self.omux_loss_db, self.req_esn0_nl_db, self.req_esn0_awgn_db,
                self.td_db)
        return [f"{v:.6g}" for v in vals]


def no_predistortion(ch: ChannelModel):
    """Transmitter that sends the data unchanged."""
    return lambda s: (ch, s)


def total_degradation_sweep(channel: ChannelModel, predistorter, ibo_list, target: float = 1e-2,
                            n_blocks: int = 8, n_block: int = 2048, seed: int = 0,
                            awgn_symbols: int = 200_000, constellation: Constellation | None = None,
                            search=(0.0, 40.0), min_errors: int = 100) -> list[TdPoint]:
    """Total degradation of ``predistorter`` at each input back-off.

    ``predistorter(ch)`` is called once per back-off with the re-driven
    channel and returns a function mapping a data block ``s`` to
    ``(model, x)``: the channel actually driven (which may contain a
    pre-filter) and its input block. OBO and OMUX loss are measured on the
    transmitted blocks.
    """
    c = constellation or apsk32()
    req_awgn = required_esn0(Link.awgn(c, awgn_symbols, seed + 1), target, *search, min_errors=min_errors,
                             seed=seed + 2)
    points = []
    for ibo in ibo_list:
        ch = channel.with_ibo(ibo)
        tx = predistorter(ch)
        S = [c.random_symbols(n_block, np.random.default_rng([seed, b])) for b in range(n_blocks)]
        sent = [tx(s) for s in S]
        model = sent[0][0]
        X = [x for _, x in sent]
        op = measure_operating_point(model, X)
        link = Link.from_channel(model, X, S, c)
        req = required_esn0(link, target, *search, min_errors=min_errors, seed=seed + 3)
        p = TdPoint(float(ibo), op.obo_db, op.omux_loss_db, req, req_awgn)
        log.info("ibo %.2f: obo %.2f loss %.2f req %.2f td %.2f", ibo, p.obo_db, p.omux_loss_db, req, p.td_db)
        points.append(p)
    return points


def argmin_td(points) -> TdPoint:
    return min(points, key=lambda p: p.td_db)


def write_td_csv(points, path_or_file) -> None:
    own = not hasattr(path_or_file, "write")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TD_HEADER)
        for p in points:
            w.writerow(p.row())
    finally:
        if own:
            fh.close()
