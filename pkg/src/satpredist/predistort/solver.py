"""Per-step linearized solve and trust-region scaling.

With the perturbation written as ``delta = dr + 1j*di`` the linear output
change is ``F(n) = br(n)*dr + bi(n)*di`` where ``br = a10 + a01`` and
``bi = 1j*(a10 - a01)``. Minimizing ``sum |eps + F|^2`` over ``(dr, di)`` is a
2x2 real least-squares problem.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LinearCoeffs:
    """Sensitivities of outputs ``lo .. lo + len(a10) - 1`` to one input."""

    lo: int
    a10: np.ndarray
    a01: np.ndarray

    def __post_init__(self):
        if len(self.a10) != len(self.a01):
            raise ValueError("a10 and a01 must have equal length")

    def __len__(self):
        return len(self.a10)

    @property
    def hi(self) -> int:
        return self.lo + len(self.a10)

    @property
    def br(self) -> np.ndarray:
        return self.a10 + self.a01

    @property
    def bi(self) -> np.ndarray:
        return 1j * (self.a10 - self.a01)

    def apply(self, delta: complex) -> np.ndarray:
        """Linearized output change ``a10*delta + a01*conj(delta)``."""
        return self.a10 * delta + self.a01 * np.conj(delta)


class OpCounter:
    """Tally of real multiplications/additions per named stage.

    Counting convention: every real product is one multiplication; for the
    normal-equation sums each output contributes one accumulation per sum
    (the re/im pair of an inner product is taken as a fused pair).
    """

    def __init__(self):
        self.counts = defaultdict(lambda: {"mul": 0, "add": 0, "div": 0})

    def __call__(self, stage, mul=0, add=0, div=0):
        c = self.counts[stage]
        c["mul"] += mul
        c["add"] += add
        c["div"] += div

    def __getitem__(self, stage):
        return dict(self.counts[stage])

    def total(self, *stages):
        out = {"mul": 0, "add": 0, "div": 0}
        for s in stages or self.counts:
            for k, v in self.counts[s].items():
                out[k] += v
        return out


def step_op_counts(lc: int) -> dict:
    """Accounted cost of one step for a window of ``lc`` outputs."""
    return {
        "norm": {"mul": 10 * lc, "add": 5 * (lc - 1)},
        "solve": {"mul": 4, "add": 2},
        "update": {"mul": 4 * lc, "add": 4 * lc},
    }


def quadratic_objective(eps, c: LinearCoeffs, delta) -> np.ndarray:
    """``sum |eps + F(delta)|^2``, vectorized over an array of ``delta``."""
    delta = np.asarray(delta, dtype=complex)
    f = c.a10[:, None] * delta.ravel()[None, :] + c.a01[:, None] * np.conj(delta.ravel())[None, :]
    val = np.sum(np.abs(np.asarray(eps)[:, None] + f) ** 2, axis=0)
    return val.reshape(delta.shape)


def normal_equations(eps, br, bi):
    """``(S, T, U, P, R)`` of the real 2x2 system."""
    S = np.vdot(br, br).real
    U = np.vdot(bi, bi).real
    T = np.vdot(br, bi).real
    P = np.vdot(br, eps).real
    R = np.vdot(bi, eps).real
    return S, T, U, P, R


def _normal_equations_counted(eps, br, bi, ops: OpCounter):
    S = T = U = P = R = 0.0
    for n in range(len(eps)):
        e, r, i = eps[n], br[n], bi[n]
        s_n = r.real * r.real + r.imag * r.imag
        u_n = i.real * i.real + i.imag * i.imag
        t_n = r.real * i.real + r.imag * i.imag
        p_n = r.real * e.real + r.imag * e.imag
        q_n = i.real * e.real + i.imag * e.imag
        if n == 0:
            S, U, T, P, R = s_n, u_n, t_n, p_n, q_n
        else:
            S += s_n
            U += u_n
            T += t_n
            P += p_n
            R += q_n
    ops("norm", mul=10 * len(eps), add=5 * max(len(eps) - 1, 0))
    return S, T, U, P, R


def solve_delta_lin(eps_window, c: LinearCoeffs, ops: OpCounter | None = None,
                    rcond: float = 1e-12) -> tuple[complex, bool]:
    """Minimizer of ``||eps + a10*delta + a01*conj(delta)||^2``.

    Returns ``(delta, degenerate)``; a (numerically) singular 2x2 system gives
    ``(0, True)``. With ``ops`` the scalar path is used and real operations are
    tallied into the counter.
    """
    eps = np.asarray(eps_window, dtype=complex)
    if eps.shape != c.a10.shape:
        raise ValueError("error window and coefficients are misaligned")
    br, bi = c.br, c.bi
    if ops is None:
        S, T, U, P, R = normal_equations(eps, br, bi)
    else:
        S, T, U, P, R = _normal_equations_counted(eps, br, bi, ops)
    det = S * U - T * T
    if not det > rcond * S * U or S * U == 0:
        return 0j, True
    inv = 1.0 / det
    m11, m12, m22 = U * inv, -T * inv, S * inv
    dr = -(m11 * P + m12 * R)
    di = -(m12 * P + m22 * R)
    if ops is not None:
        ops("inverse", mul=5, add=1, div=1)
        ops("solve", mul=4, add=2)
    return complex(dr, di), False


def update_error_counted(eps_window, c: LinearCoeffs, delta: complex, ops: OpCounter) -> np.ndarray:
    """``eps + br*dr + bi*di`` with the operations tallied."""
    out = np.array(eps_window, dtype=complex)
    br, bi = c.br, c.bi
    dr, di = delta.real, delta.imag
    for n in range(len(out)):
        re = out[n].real + (br[n].real * dr + bi[n].real * di)
        im = out[n].imag + (br[n].imag * dr + bi[n].imag * di)
        out[n] = complex(re, im)
    ops("update", mul=4 * len(out), add=4 * len(out))
    return out


def trust_region(delta_lin: complex, delta_max: float) -> tuple[float, complex]:
    """Scale ``delta_lin`` so that its magnitude does not exceed ``delta_max``."""
    if not delta_max > 0:
        raise ValueError("delta_max must be positive")
    mag = abs(delta_lin)
    gamma = 1.0 if mag <= delta_max else delta_max / mag
    applied = gamma * delta_lin
    if abs(applied) > delta_max:  # rounding
        applied *= delta_max / abs(applied)
    return gamma, complex(applied)
