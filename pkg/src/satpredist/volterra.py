"""Symbol-rate Volterra model of the channel.

A kernel of order ``2m+1`` is keyed by its index tuple ``(n_1, ..., n_{2m+1})``;
the first ``m+1`` indices multiply ``x(n - n_i)`` and the last ``m`` multiply
``conj(x(n - n_i))``. Keys are stored in canonical form (each group sorted),
and a kernel given in any other order is added into its canonical slot, so
the stored value already carries the permutation multiplicity.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .dsp import Constellation, apsk32

log = logging.getLogger(__name__)


class IllConditionedError(RuntimeError):
    """Raised when the identification normal equations are numerically singular."""


def canonical(indices) -> tuple[int, ...]:
    indices = tuple(int(i) for i in indices)
    if len(indices) % 2 == 0:
        raise ValueError(f"kernel order must be odd, got {len(indices)}")
    m = len(indices) // 2
    return tuple(sorted(indices[: m + 1])) + tuple(sorted(indices[m + 1 :]))


def split(key) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """(unconjugated indices, conjugated indices) of a canonical key."""
    m = len(key) // 2
    return key[: m + 1], key[m + 1 :]


@dataclass(frozen=True, eq=False)
class VolterraKernels:
    entries: dict
    L1: int
    L2: int

    def __post_init__(self):
        clean = {}
        for key, value in self.entries.items():
            key = canonical(key)
            clean[key] = clean[key] + complex(value) if key in clean else complex(value)
        clean = {k: v for k, v in clean.items() if v != 0}
        for key in clean:
            if min(key) < -self.L1 or max(key) > self.L2:
                raise ValueError(f"kernel {key} outside memory [-{self.L1}, {self.L2}]")
        object.__setattr__(self, "entries", dict(sorted(clean.items(), key=lambda kv: (len(kv[0]), kv[0]))))

    @classmethod
    def from_entries(cls, entries: dict, L1: int | None = None, L2: int | None = None) -> "VolterraKernels":
        """Kernels with memory bounds inferred from the indices when not given."""
        idx = [i for key in entries for i in key] or [0]
        return cls(entries, max(0, -min(idx)) if L1 is None else L1, max(0, max(idx)) if L2 is None else L2)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, key):
        return self.entries.get(canonical(key), 0j)

    @property
    def max_order(self) -> int:
        return max((len(k) for k in self.entries), default=1)

    @property
    def Lc(self) -> int:
        return self.L1 + self.L2 + 1

    def order(self, p: int) -> dict:
        return {k: v for k, v in self.entries.items() if len(k) == p}

    def linear_taps(self) -> np.ndarray:
        """Order-1 kernels as taps for lags ``-L1..L2``."""
        h = np.zeros(self.Lc, complex)
        for (d,), v in self.order(1).items():
            h[d + self.L1] = v
        return h

    # evaluation -----------------------------------------------------------

    def simulate(self, x) -> np.ndarray:
        return evaluate(self, x)

    def state(self, x) -> "KernelState":
        return KernelState(self, x)

    @cached_property
    def terms(self) -> "DerivativeTerms":
        return DerivativeTerms(self)


def _shifts(x, L1, L2):
    """``shifted[d + L1][n] = x[n - d]`` (zero outside the block)."""
    n = x.size
    out = np.zeros((L1 + L2 + 1, n), complex)
    for d in range(-L1, L2 + 1):
        if d >= 0:
            out[d + L1, d:] = x[: n - d] if d < n else 0
        else:
            out[d + L1, : n + d] = x[-d:] if -d < n else 0
    return out


def evaluate(k: VolterraKernels, x) -> np.ndarray:
    """Noiseless model output; history outside the block is zero."""
    x = np.asarray(x, dtype=complex)
    sh = _shifts(x, k.L1, k.L2)
    shc = sh.conj()
    y = np.zeros(x.size, complex)
    for key, h in k.entries.items():
        a, b = split(key)
        term = h * sh[a[0] + k.L1]
        for i in a[1:]:
            term = term * sh[i + k.L1]
        for i in b:
            term = term * shc[i + k.L1]
        y += term
    return y


class KernelState:
    """Incremental evaluator mirroring :class:`~satpredist.channel.ChannelState`."""

    def __init__(self, k: VolterraKernels, x):
        self.k = k
        self.x = np.array(x, dtype=complex)
        self.n = self.x.size
        self.y = evaluate(k, self.x)
        self.r_lo, self.r_hi = -k.L1, k.L2

    def support(self, j):
        return max(0, j - self.k.L1), min(self.n, j + self.k.L2 + 1)

    def _local(self, j, lo, hi, xj):
        # outputs lo..hi-1 only need x[lo - L2 : hi + L1]
        a = max(0, lo - self.k.L2)
        b = min(self.n, hi + self.k.L1)
        seg = self.x[a:b].copy()
        seg[j - a] = xj
        return evaluate(self.k, seg)[lo - a : hi - a]

    def outputs_if(self, j, delta, lo, hi):
        return self._local(j, lo, hi, self.x[j] + delta)

    def commit(self, j, delta):
        lo, hi = self.support(j)
        self.y[lo:hi] = self.outputs_if(j, delta, lo, hi)
        self.x[j] += delta


class DerivativeTerms:
    """First-order sensitivities of every kernel, flattened for vector use.

    Term ``t`` contributes ``coef[t] * prod x(n - ua[t]) * prod conj(x(n - ca[t]))``
    to ``dy(n)/dx(n - e[t])`` (``conj_slot[t]`` false) or to
    ``dy(n)/dconj(x(n - e[t]))`` (true). Unused factor slots point at a
    constant one.
    """

    PAD = 10**6

    def __init__(self, k: VolterraKernels):
        rows = []
        kernel = []
        for i, (key, h) in enumerate(k.entries.items()):
            a, b = split(key)
            for slot, group in ((False, a), (True, b)):
                for e in sorted(set(group)):
                    mult = group.count(e)
                    rest = list(group)
                    rest.remove(e)
                    ua = rest if not slot else list(a)
                    ca = list(b) if not slot else rest
                    rows.append((e, slot, mult * h, ua, ca))
                    kernel.append(i)
        self.L1, self.L2 = k.L1, k.L2
        self.size = len(rows)
        self.kernel = np.array(kernel, int)
        mu = max((len(r[3]) for r in rows), default=0)
        mc = max((len(r[4]) for r in rows), default=0)
        self.e = np.array([r[0] for r in rows], int)
        self.conj_slot = np.array([r[1] for r in rows], bool)
        self.coef = np.array([r[2] for r in rows], complex)
        self.ua = np.array([r[3] + [self.PAD] * (mu - len(r[3])) for r in rows], int).reshape(len(rows), mu)
        self.ca = np.array([r[4] + [self.PAD] * (mc - len(r[4])) for r in rows], int).reshape(len(rows), mc)

    def around_output(self, windows: np.ndarray, half: int) -> tuple[np.ndarray, np.ndarray]:
        """Sensitivities of output ``n`` for windows ``x(n - half .. n + half)``.

        ``windows`` has shape ``(B, 2*half + 1)``. Returns ``(a10, a01)`` of shape
        ``(B, 2*half + 1)`` where column ``c`` is the sensitivity to
        ``x(n + c - half)``.
        """
        windows = np.atleast_2d(windows)
        w = np.concatenate([windows, np.ones((windows.shape[0], 1))], axis=1)
        wc = w.conj()
        one = w.shape[1] - 1

        def col(offsets):
            # factor x(n - a) sits at column half - a
            c = half - offsets
            return np.where(offsets == self.PAD, one, c)

        val = self.coef[None, :] * np.prod(w[:, col(self.ua)], axis=2) * np.prod(wc[:, col(self.ca)], axis=2)
        a10 = np.zeros(windows.shape, complex)
        a01 = np.zeros(windows.shape, complex)
        cols = half - self.e
        for target, mask in ((a10, ~self.conj_slot), (a01, self.conj_slot)):
            for c in np.unique(cols[mask]):
                sel = mask & (cols == c)
                target[:, c] = val[:, sel].sum(axis=1)
        return a10, a01

    def at_step(self, x: np.ndarray, j: int, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
        """``dy(n)/dx(j)`` and ``dy(n)/dconj(x(j))`` for outputs ``lo..hi-1``."""
        n = x.size
        R = self.L1 + self.L2
        # window of x around j: positions j - R .. j + R, plus a trailing one
        a, b = j - R, j + R + 1
        w = np.zeros(2 * R + 2, complex)
        w[max(0, -a) : 2 * R + 1 - max(0, b - n)] = x[max(0, a) : min(n, b)]
        w[-1] = 1.0
        wc = w.conj()
        # factor x(n - a) with n = j + e sits at window column R + e - a
        ua = np.where(self.ua == self.PAD, 2 * R + 1, R + self.e[:, None] - self.ua)
        ca = np.where(self.ca == self.PAD, 2 * R + 1, R + self.e[:, None] - self.ca)
        val = self.coef * np.prod(w[ua], axis=1) * np.prod(wc[ca], axis=1)
        out = j + self.e - lo
        keep = (out >= 0) & (out < hi - lo)
        a10 = np.zeros(hi - lo, complex)
        a01 = np.zeros(hi - lo, complex)
        m10 = keep & ~self.conj_slot
        m01 = keep & self.conj_slot
        np.add.at(a10, out[m10], val[m10])
        np.add.at(a01, out[m01], val[m01])
        return a10, a01


# ---------------------------------------------------------------------------
# identification


def monomial_keys(max_order: int, L1: int, L2: int):
    """All canonical kernel keys of odd order up to ``max_order``."""
    if max_order < 1 or max_order % 2 == 0:
        raise ValueError("max_order must be odd and positive")
    rng = range(-L1, L2 + 1)
    keys = []
    for p in range(1, max_order + 1, 2):
        m = p // 2
        for a in itertools.combinations_with_replacement(rng, m + 1):
            for b in itertools.combinations_with_replacement(rng, m):
                keys.append(a + b)
    return keys


def design_matrix(x, keys, L1, L2) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    sh = _shifts(x, L1, L2)
    shc = sh.conj()
    phi = np.empty((x.size, len(keys)), complex)
    for col, key in enumerate(keys):
        a, b = split(key)
        term = sh[a[0] + L1].copy()
        for i in a[1:]:
            term *= sh[i + L1]
        for i in b:
            term *= shc[i + L1]
        phi[:, col] = term
    return phi


@dataclass(frozen=True)
class Identification:
    kernels: VolterraKernels
    residual_db: float
    condition: float
    n_train: int


def identify(channel, max_order: int = 3, L1: int = 1, L2: int = 1, n_train: int = 20000,
             ridge: float = 1e-8, seed=0, constellation: Constellation | None = None,
             jitter: float = 0.0, max_condition: float = 1e13) -> Identification:
    """Least-squares fit of all canonical monomials to simulated outputs.

    ``channel`` is anything with ``simulate(x)``. The training block is random
    constellation symbols, optionally perturbed by complex Gaussian noise of
    standard deviation ``jitter`` so that the fit also covers off-grid inputs.
    ``ridge`` is relative to the mean diagonal of the column-normalized Gram
    matrix.
    """
    keys = monomial_keys(max_order, L1, L2)
    if n_train < 2 * len(keys):
        raise ValueError(f"n_train={n_train} too small for {len(keys)} kernels")
    rng = np.random.default_rng(seed)
    c = constellation or apsk32()
    x = c.random_symbols(n_train, rng)
    if jitter:
        x = x + jitter * (rng.standard_normal(n_train) + 1j * rng.standard_normal(n_train)) / np.sqrt(2)
    y = np.asarray(channel.simulate(x))
    phi = design_matrix(x, keys, L1, L2)
    scale = np.linalg.norm(phi, axis=0)
    scale[scale == 0] = 1
    phi /= scale
    gram = phi.conj().T @ phi
    cond = float(np.linalg.cond(gram))
    lam = ridge * np.real(np.trace(gram)) / len(keys)
    if cond > max_condition and lam * max_condition < np.real(np.trace(gram)) / len(keys):
        raise IllConditionedError(f"normal equations ill-conditioned (cond={cond:.3g})")
    coef = np.linalg.solve(gram + lam * np.eye(len(keys)), phi.conj().T @ y)
    resid = y - phi @ coef
    coef /= scale
    res_db = 10 * np.log10(np.sum(np.abs(resid) ** 2) / np.sum(np.abs(y) ** 2))
    log.debug("identified %d kernels, residual %.2f dB, cond %.3g", len(keys), res_db, cond)
    k = VolterraKernels(dict(zip(keys, coef)), L1, L2)
    return Identification(k, float(res_db), cond, n_train)


def model_error_db(k: VolterraKernels, channel, x) -> float:
    """Normalized power of ``channel.simulate(x) - evaluate(k, x)`` in dB,
    floored at -200 dB."""
    y = np.asarray(channel.simulate(x))
    err = np.sum(np.abs(y - evaluate(k, x)) ** 2)
    if err == 0:
        return -200.0
    return float(max(-200.0, 10 * np.log10(err / np.sum(np.abs(y) ** 2))))


def sensitivity_design(x, keys, L1: int, L2: int, positions) -> tuple[np.ndarray, np.ndarray]:
    """Per-kernel first-order sensitivities at steps ``positions``.

    Returns ``(D10, D01)`` of shape ``(len(positions), L1 + L2 + 1, len(keys))``
    where ``D10[i, e + L1, k]`` is ``d y(j + e) / d x(j)`` of the monomial of
    ``keys[k]`` (unit kernel) at ``j = positions[i]``, and ``D01`` the
    derivative with respect to ``conj(x(j))``.
    """
    x = np.asarray(x, dtype=complex)
    keys = [canonical(k) for k in keys]
    unit = VolterraKernels({k: 1.0 for k in keys}, L1, L2)
    if len(unit) != len(keys):
        raise ValueError("duplicate kernel keys")
    col = {k: i for i, k in enumerate(keys)}
    kernel = np.array([col[k] for k in unit.entries])[unit.terms.kernel]
    t = unit.terms
    R = L1 + L2
    pos = np.asarray(positions, int)
    xp = np.concatenate([np.zeros(R, complex), x, np.zeros(R, complex)])
    w = np.lib.stride_tricks.sliding_window_view(xp, 2 * R + 1)[pos]
    w = np.concatenate([w, np.ones((w.shape[0], 1))], axis=1)
    ua = np.where(t.ua == t.PAD, 2 * R + 1, R + t.e[:, None] - t.ua)
    ca = np.where(t.ca == t.PAD, 2 * R + 1, R + t.e[:, None] - t.ca)
    val = t.coef.real[None, :] * np.prod(w[:, ua], axis=2) * np.prod(w.conj()[:, ca], axis=2)
    out = t.e + L1
    d10 = np.zeros((pos.size, R + 1, len(keys)), complex)
    d01 = np.zeros_like(d10)
    for target, m in ((d10, ~t.conj_slot), (d01, t.conj_slot)):
        np.add.at(target, (slice(None), out[m], kernel[m]), val[:, m])
    return d10, d01


def identify_sensitivities(model, blocks, max_order: int = 3, L1: int = 1, L2: int = 1,
                           max_distinct_indices: int | None = None, probe_eps: float = 1e-5,
                           stride: int = 1, ridge: float = 1e-10, max_condition: float = 1e13) -> Identification:
    """Least-squares fit of kernels to the channel's first-order sensitivities.

    For every step ``j`` (every ``stride``-th symbol away from the block
    edges) of every training block the coefficients ``a10``/``a01`` of
    outputs ``j - L1 .. j + L2`` are probed on ``model`` and the kernels are
    chosen so that their analytic derivatives match them. This targets the
    quantities the pre-distorter consumes; ``blocks`` should resemble its
    inputs (e.g. pre-distorted blocks). ``residual_db`` is the normalized
    sensitivity misfit.
    """
    from .predistort.coeffs import estimate_coeffs_sim

    keys = monomial_keys(max_order, L1, L2)
    if max_distinct_indices is not None:
        keys = [k for k in keys if len(set(k)) <= max_distinct_indices]
    R = L1 + L2
    rows, rhs = [], []
    for x in blocks:
        x = np.asarray(x, dtype=complex)
        pos = np.arange(R, x.size - R, stride)
        if pos.size == 0:
            continue
        d10, d01 = sensitivity_design(x, keys, L1, L2, pos)
        st = model.state(x)
        t10 = np.empty((pos.size, R + 1), complex)
        t01 = np.empty_like(t10)
        for i, j in enumerate(pos):
            c = estimate_coeffs_sim(model, x, int(j), probe_eps, state=st, window=(j - L1, j + L2 + 1))
            t10[i], t01[i] = c.a10, c.a01
        rows += [d10.reshape(-1, len(keys)), d01.reshape(-1, len(keys))]
        rhs += [t10.ravel(), t01.ravel()]
    if not rows:
        raise ValueError("training blocks too short")
    phi = np.vstack(rows)
    y = np.concatenate(rhs)
    if phi.shape[0] < 2 * len(keys):
        raise ValueError(f"{phi.shape[0]} sensitivity samples too few for {len(keys)} kernels")
    scale = np.linalg.norm(phi, axis=0)
    scale[scale == 0] = 1
    phi /= scale
    gram = phi.conj().T @ phi
    cond = float(np.linalg.cond(gram))
    lam = ridge * np.real(np.trace(gram)) / len(keys)
    if cond > max_condition and lam * max_condition < np.real(np.trace(gram)) / len(keys):
        raise IllConditionedError(f"normal equations ill-conditioned (cond={cond:.3g})")
    coef = np.linalg.solve(gram + lam * np.eye(len(keys)), phi.conj().T @ y)
    resid = y - phi @ coef
    coef /= scale
    res_db = 10 * np.log10(np.sum(np.abs(resid) ** 2) / np.sum(np.abs(y) ** 2))
    log.debug("sensitivity fit of %d kernels, misfit %.2f dB", len(keys), res_db)
    return Identification(VolterraKernels(dict(zip(keys, coef)), L1, L2), float(res_db), cond, int(y.size))


# ---------------------------------------------------------------------------
# reduction


def window_bounds(length: int) -> tuple[int, int]:
    """Index range ``[-lo, hi]`` of a centred window of ``length`` taps."""
    if length < 1:
        raise ValueError("window length must be >= 1")
    lo = (length - 1) // 2
    return lo, length - 1 - lo


def reduce(k: VolterraKernels, max_order: int | None = None, length: int | None = None,
           max_distinct_indices: int | None = None) -> VolterraKernels:
    """Keep kernels of order <= ``max_order`` whose indices lie in a centred
    window of ``length`` taps and that use at most ``max_distinct_indices``
    different index values."""
    lo, hi = (k.L1, k.L2) if length is None else window_bounds(length)
    lo, hi = min(lo, k.L1), min(hi, k.L2)
    kept = {}
    for key, v in k.entries.items():
        if max_order is not None and len(key) > max_order:
            continue
        if min(key) < -lo or max(key) > hi:
            continue
        if max_distinct_indices is not None and len(set(key)) > max_distinct_indices:
            continue
        kept[key] = v
    return VolterraKernels(kept, lo, hi)


# ---------------------------------------------------------------------------
# file format


def save_kernels(k: VolterraKernels, path) -> None:
    """One kernel per line: ``order n_1 ... n_p re im``; values use ``repr``."""
    lines = [f"# volterra kernels L1={k.L1} L2={k.L2}"]
    for key, v in k.entries.items():
        idx = " ".join(str(i) for i in key)
        lines.append(f"{len(key)} {idx} {float(v.real)!r} {float(v.imag)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_kernels(path) -> VolterraKernels:
    entries = {}
    L1 = L2 = None
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if tok.startswith("L1="):
                    L1 = int(tok[3:])
                elif tok.startswith("L2="):
                    L2 = int(tok[3:])
            continue
        tok = line.split()
        p = int(tok[0])
        if len(tok) != p + 3:
            raise ValueError(f"malformed kernel line: {line!r}")
        key = tuple(int(t) for t in tok[1 : p + 1])
        entries[key] = complex(float(tok[p + 1]), float(tok[p + 2]))
    return VolterraKernels.from_entries(entries, L1, L2)
