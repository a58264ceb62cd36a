"""Look-up table of A-coefficients keyed by rounded input windows.

Output ``n`` depends (in the reduced model) on the window
``x(n - h) .. x(n + h)`` with ``h = (L - 1) // 2``. Each window symbol is rounded
to its nearest constellation point and the tuple of point indices addresses
an entry holding the sensitivities of ``y(n)`` to every window position.
Symbols outside the block are zero.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dsp import Constellation, nearest_point
from ..volterra import VolterraKernels, reduce
from .solver import LinearCoeffs

MAGIC = b"SPLUT1\x00\x00"
_HEADER = struct.Struct("<IIBQ")


class LutBudgetError(MemoryError):
    """The dense table does not fit the configured entry budget."""


@dataclass(eq=False)
class LutTable:
    grid: Constellation
    length: int
    frozen_inputs: bool = False
    kernels: VolterraKernels | None = field(default=None, repr=False)
    dense_a10: np.ndarray | None = field(default=None, repr=False)
    dense_a01: np.ndarray | None = field(default=None, repr=False)
    cache: dict = field(default_factory=dict, repr=False)
    edge_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.length < 1 or self.length % 2 == 0:
            raise ValueError("LUT window length must be odd and positive")
        if self.dense_a10 is None and self.kernels is None and not self.cache:
            raise ValueError("a LUT needs dense entries, cached entries or kernels to fill from")
        self._weights = len(self.grid) ** np.arange(self.length - 1, -1, -1, dtype=np.int64)
        self._zero = nearest_point(0.0, self.grid)

    @property
    def half(self) -> int:
        return (self.length - 1) // 2

    @property
    def capacity(self) -> int:
        return len(self.grid) ** self.length

    @property
    def is_dense(self) -> bool:
        return self.dense_a10 is not None

    def __len__(self):
        return self.capacity if self.is_dense else len(self.cache)

    # keys ------------------------------------------------------------------

    def indices(self, z) -> np.ndarray:
        return np.asarray(nearest_point(np.atleast_1d(z), self.grid), dtype=np.int64)

    def keys_for(self, idx: np.ndarray, first: int, n: int, count: int) -> np.ndarray:
        """Keys of outputs ``first .. first + count - 1``.

        ``idx`` holds the point indices of positions ``first - half ..
        first + count - 1 + half``; positions outside ``[0, n)`` take the
        index of the point nearest to zero.
        """
        h = self.half
        pos = np.arange(first - h, first + count + h)
        idx = np.where((pos >= 0) & (pos < n), idx, self._zero)
        win = np.lib.stride_tricks.sliding_window_view(idx, self.length)
        return win @ self._weights

    def windows_of(self, keys) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        digits = (keys[:, None] // self._weights[None, :]) % len(self.grid)
        return self.grid.points[digits]

    # entries ---------------------------------------------------------------

    def lookup(self, keys) -> tuple[np.ndarray, np.ndarray]:
        """``(a10, a01)`` of shape ``(len(keys), length)`` for ``keys``."""
        keys = np.asarray(keys, dtype=np.int64)
        if self.is_dense:
            return self.dense_a10[keys], self.dense_a01[keys]
        missing = [k for k in dict.fromkeys(keys.tolist()) if k not in self.cache]
        if missing:
            if self.kernels is None:
                raise KeyError(f"LUT entry {missing[0]} not stored and no kernels to fill from")
            a10, a01 = self.kernels.terms.around_output(self.windows_of(missing), self.half)
            for k, r10, r01 in zip(missing, a10, a01):
                self.cache[k] = (r10, r01)
        rows = [self.cache[k] for k in keys.tolist()]
        return np.array([r[0] for r in rows]), np.array([r[1] for r in rows])

    def edge_entry(self, window: tuple) -> tuple[np.ndarray, np.ndarray]:
        """Entry for a window whose ``-1`` indices are outside the block (zero)."""
        if window not in self.edge_cache:
            w = np.array(window)
            z = np.where(w < 0, 0, self.grid.points[np.maximum(w, 0)])
            a10, a01 = self.kernels.terms.around_output(z[None, :], self.half)
            self.edge_cache[window] = (a10[0], a01[0])
        return self.edge_cache[window]


def build_lut(reduced: VolterraKernels, c: Constellation, length: int, frozen_inputs: bool = False,
              max_entries: int = 1 << 22, lazy: bool = False, chunk: int = 4096) -> LutTable:
    """Tabulate the coefficients of ``reduced`` for every window on ``c``.

    Kernels are first restricted to the centred ``length``-tap window. The
    dense table has ``len(c) ** length`` entries; above ``max_entries`` this
    is an error unless ``lazy``, in which case entries are computed on first
    use and memoized.
    """
    h = (length - 1) // 2
    k = reduce(reduced, length=length)
    k = VolterraKernels(k.entries, h, h)
    capacity = len(c) ** length
    if lazy:
        return LutTable(c, length, frozen_inputs, kernels=k)
    if capacity > max_entries:
        raise LutBudgetError(f"{len(c)}^{length} = {capacity} entries exceed budget {max_entries}")
    table = LutTable(c, length, frozen_inputs, kernels=k)
    a10 = np.empty((capacity, length), complex)
    a01 = np.empty((capacity, length), complex)
    for start in range(0, capacity, chunk):
        keys = np.arange(start, min(capacity, start + chunk))
        a10[keys], a01[keys] = k.terms.around_output(table.windows_of(keys), h)
    table.dense_a10, table.dense_a01 = a10, a01
    return table


def _window_indices(lut: LutTable, src, a: int, b: int) -> np.ndarray:
    """Point indices of positions ``a .. b-1``; ``-1`` marks positions outside the block."""
    n = len(src)
    idx = np.full(b - a, -1, np.int64)
    ia, ib = max(0, a), min(n, b)
    idx[ia - a : ib - a] = lut.indices(src[ia:ib])
    return idx


def estimate_coeffs_lut(lut: LutTable, x, j: int, s=None, idx: np.ndarray | None = None) -> LinearCoeffs:
    """Coefficients for a step at ``j`` read from the table.

    With ``lut.frozen_inputs`` the windows are taken from ``s`` (required);
    otherwise from the current ``x``. ``idx`` may carry the precomputed point
    indices of the whole source block. Windows reaching past the block edge
    are evaluated from the table's kernels with zeros outside the block (and
    memoized) when kernels are available, and looked up with out-of-block
    symbols rounded like zero otherwise.
    """
    x = np.asarray(x)
    n = x.size
    h = lut.half
    lo, hi = max(0, j - h), min(n, j + h + 1)
    a, b = lo - h, hi + h
    if idx is not None:
        pos = np.arange(a, b)
        inside = (pos >= 0) & (pos < n)
        w = np.full(b - a, -1, np.int64)
        w[inside] = idx[pos[inside]]
    else:
        src = s if lut.frozen_inputs else x
        if src is None:
            raise ValueError("frozen-input LUT needs the data block s")
        w = _window_indices(lut, np.asarray(src), a, b)
    keys = lut.keys_for(np.where(w < 0, lut._zero, w), lo, n, hi - lo)
    a10, a01 = lut.lookup(keys)
    if lut.kernels is not None and (lo - h < 0 or hi + h > n):
        for r, m in enumerate(range(lo, hi)):
            if m - h < 0 or m + h >= n:
                a10[r], a01[r] = lut.edge_entry(tuple(w[r : r + lut.length].tolist()))
    # output n holds the sensitivity to x(j) in column j - n + h
    cols = j - np.arange(lo, hi) + h
    rows = np.arange(hi - lo)
    return LinearCoeffs(lo, a10[rows, cols], a01[rows, cols])


class LutBackend:
    name = "lut"
    needs_state = False

    def __init__(self, lut: LutTable, s):
        self.lut = lut
        self.s = np.asarray(s)
        self.idx = lut.indices(self.s) if lut.frozen_inputs else None

    def __call__(self, x, state, j):
        return estimate_coeffs_lut(self.lut, x, j, s=self.s, idx=self.idx)


# persistence ---------------------------------------------------------------


def save_lut(lut: LutTable, path) -> None:
    """Binary container: magic, header ``(P, L, frozen, n)``, grid, keys, values."""
    if lut.is_dense:
        keys = np.arange(lut.capacity, dtype=np.int64)
        a10, a01 = lut.dense_a10, lut.dense_a01
    else:
        keys = np.array(sorted(lut.cache), dtype=np.int64)
        a10, a01 = lut.lookup(keys) if keys.size else (np.empty((0, lut.length), complex),) * 2
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(len(lut.grid), lut.length, int(lut.frozen_inputs), keys.size))
        fh.write(np.ascontiguousarray(lut.grid.points, "<c16").tobytes())
        fh.write(np.ascontiguousarray(keys, "<i8").tobytes())
        fh.write(np.ascontiguousarray(a10, "<c16").tobytes())
        fh.write(np.ascontiguousarray(a01, "<c16").tobytes())


def load_lut(path, kernels: VolterraKernels | None = None) -> LutTable:
    """Read a table written by :func:`save_lut`; ``kernels`` allow lazy filling."""
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError("not a LUT file")
    off = len(MAGIC)
    P, L, frozen, n = _HEADER.unpack_from(data, off)
    off += _HEADER.size

    def take(dtype, count):
        nonlocal off
        arr = np.frombuffer(data, dtype, count, off)
        off += arr.nbytes
        return arr.copy()

    grid = Constellation(take("<c16", P))
    keys = take("<i8", n)
    a10 = take("<c16", n * L).reshape(n, L)
    a01 = take("<c16", n * L).reshape(n, L)
    if off != len(data):
        raise ValueError("trailing bytes in LUT file")
    if n == P**L and np.array_equal(keys, np.arange(n)):
        return LutTable(grid, L, bool(frozen), kernels=kernels, dense_a10=a10, dense_a01=a01)
    cache = {int(k): (r10, r01) for k, r10, r01 in zip(keys, a10, a01)}
    return LutTable(grid, L, bool(frozen), kernels=kernels, cache=cache)
