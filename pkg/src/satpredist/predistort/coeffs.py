"""A-coefficient back-ends: finite-difference probing and reduced Volterra.

Changing input ``x(j)`` by ``delta`` changes output ``y(n)`` by
``a10(n)*delta + a01(n)*conj(delta)`` to first order. Both back-ends return the
coefficients for the outputs ``n`` in the model window ``[j - L1, j + L2]``
clipped to the block.
"""

from __future__ import annotations

import numpy as np

from ..volterra import VolterraKernels
from .solver import LinearCoeffs


def coeff_window(model, j: int, n: int) -> tuple[int, int]:
    """Half-open range of outputs in the ``[j - L1, j + L2]`` window."""
    return max(0, j - model.L1), min(n, j + model.L2 + 1)


def estimate_coeffs_sim(model, x, j: int, probe_eps: float = 1e-4, state=None,
                        window: tuple[int, int] | None = None) -> LinearCoeffs:
    """Coefficients from three model runs: ``delta = 0``, ``eps`` and ``1j*eps``.

    ``model`` is a channel or kernel set (anything with ``state(x)``); an
    existing incremental ``state`` for ``x`` can be passed to avoid rebuilding
    it. Only the outputs of the window are evaluated.
    """
    if not probe_eps > 0:
        raise ValueError("probe_eps must be positive")
    if state is None:
        state = model.state(x)
    lo, hi = window if window is not None else coeff_window(model, j, state.n)
    y0 = state.y[lo:hi]
    dr = (state.outputs_if(j, probe_eps, lo, hi) - y0) / probe_eps
    di = (state.outputs_if(j, 1j * probe_eps, lo, hi) - y0) / (1j * probe_eps)
    # dr = a10 + a01, di = a10 - a01
    return LinearCoeffs(lo, 0.5 * (dr + di), 0.5 * (dr - di))


def estimate_coeffs_volterra(reduced: VolterraKernels, x, j: int,
                             window: tuple[int, int] | None = None) -> LinearCoeffs:
    """Analytic coefficients: the derivative of every kernel monomial at ``x``.

    Kernels without an index equal to ``n - j`` do not contribute to output
    ``n``; the flattened term table only holds the contributing ones.
    """
    x = np.asarray(x, dtype=complex)
    lo, hi = window if window is not None else coeff_window(reduced, j, x.size)
    a10, a01 = reduced.terms.at_step(x, j, lo, hi)
    return LinearCoeffs(lo, a10, a01)


class SimBackend:
    """Probing on the model the pre-distorter optimizes against."""

    name = "channel_sim"
    needs_state = True

    def __init__(self, model, probe_eps: float = 1e-4):
        self.model = model
        self.probe_eps = probe_eps

    def __call__(self, x, state, j):
        return estimate_coeffs_sim(self.model, x, j, self.probe_eps, state=state)


class VolterraBackend:
    name = "reduced_volterra"
    needs_state = False

    def __init__(self, kernels: VolterraKernels):
        self.kernels = kernels

    def __call__(self, x, state, j):
        return estimate_coeffs_volterra(self.kernels, x, j)
