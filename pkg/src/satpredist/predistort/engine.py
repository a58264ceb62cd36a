"""Per-block iterative small-variation pre-distortion.

Each iteration sweeps ``j = 0 .. N-1``. A step linearizes the output response
to ``x(j)``, solves for the best linear perturbation, clips it to the trust
region and either checks it against the true model (``per_step``) or applies
it and leaves the check to the end of the iteration (``per_iteration``).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ..volterra import VolterraKernels
from .coeffs import SimBackend, VolterraBackend
from .lut import LutBackend, LutTable
from .solver import LinearCoeffs, OpCounter, solve_delta_lin, step_op_counts, trust_region, \
    update_error_counted

log = logging.getLogger(__name__)

BACKENDS = ("channel_sim", "reduced_volterra", "lut")
CHECK_MODES = ("per_step", "per_iteration")


class ConfigError(ValueError):
    """Inconsistent pre-distorter configuration."""


@dataclass
class PredistortConfig:
    """Pre-distorter settings.

    ``refresh_every`` rebuilds the incremental model state from scratch every
    so many iterations in ``per_step`` mode (0 disables it; the state is
    already exact up to rounding). ``min_improvement_db`` stops the run when an
    iteration gains less.
    """

    n_block: int = 12960
    delta_max: float = 0.1
    max_iters: int = 10
    backend: str = "channel_sim"
    check_mode: str = "per_step"
    probe_eps: float = 1e-4
    lut: LutTable | None = None
    reduced_kernels: VolterraKernels | None = None
    min_improvement_db: float = 0.01
    refresh_every: int = 0
    record_steps: bool = False
    count_ops: bool = False

    def validate(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.check_mode not in CHECK_MODES:
            raise ConfigError(f"unknown check mode {self.check_mode!r}")
        if not 0 < self.delta_max <= 10:
            raise ConfigError("delta_max must lie in (0, 10]")
        if not 0 < self.probe_eps <= 1e-2:
            raise ConfigError("probe_eps must lie in (0, 1e-2]")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if self.backend == "lut" and self.lut is None:
            raise ConfigError("lut backend needs a LutTable")
        if self.backend == "reduced_volterra" and self.reduced_kernels is None:
            raise ConfigError("reduced_volterra backend needs reduced kernels")


@dataclass
class IterationRecord:
    iteration: int
    mse_db: float
    accepts: int = 0
    rejects: int = 0
    degenerate: int = 0
    mult_count: int = 0
    add_count: int = 0


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    reverted: bool = False
    final_iteration: int = 0
    steps: list = field(default_factory=list)
    ops: OpCounter | None = None

    @property
    def mse_db(self) -> np.ndarray:
        return np.array([r.mse_db for r in self.records])

    @property
    def final_mse_db(self) -> float:
        return self.records[-1].mse_db

    def to_csv(self, path_or_file) -> None:
        cols = ("iteration", "mse_db", "accepts", "rejects", "mult_count", "add_count")
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.records:
                w.writerow([r.iteration, f"{r.mse_db:.6g}", r.accepts, r.rejects, r.mult_count, r.add_count])
        finally:
            if own:
                fh.close()


def _mse_db(total: float, ref: float) -> float:
    if total <= 0:
        return -200.0
    return max(-200.0, 10 * np.log10(total / ref))


def make_backend(model, cfg: PredistortConfig, s):
    if cfg.backend == "channel_sim":
        return SimBackend(model, cfg.probe_eps)
    if cfg.backend == "reduced_volterra":
        return VolterraBackend(cfg.reduced_kernels)
    return LutBackend(cfg.lut, s)


def predistort_block(s, model, cfg: PredistortConfig, x0=None) -> tuple[np.ndarray, RunTrace]:
    """Pre-distort block ``s`` for ``model`` (a channel or kernel set).

    When ``model`` contains a pre-filter (see
    :meth:`~satpredist.channel.ChannelModel.with_prefilter`) the optimized
    variable is the pre-filter input, so the default start ``x0 = s`` puts
    the filtered data on the channel. Returns the pre-distorted block and the
    run trace; the trace MSE of iteration 0 is the starting point.
    """
    cfg.validate()
    s = np.asarray(s, dtype=complex)
    n = s.size
    if n < 1:
        raise ValueError("empty block")
    x = s.copy() if x0 is None else np.array(x0, dtype=complex)
    if x.shape != s.shape:
        raise ValueError("x0 and s differ in length")
    backend = make_backend(model, cfg, s)
    per_step = cfg.check_mode == "per_step"
    exact = per_step or backend.needs_state
    ref = float(np.sum(np.abs(s) ** 2))
    if ref == 0:
        raise ValueError("all-zero data block")

    state = model.state(x) if exact else None
    eps = (state.y if exact else np.asarray(model.simulate(x))) - s
    total = float(np.sum(np.abs(eps) ** 2))
    trace = RunTrace(ops=OpCounter() if cfg.count_ops else None)
    trace.records.append(IterationRecord(0, _mse_db(total, ref)))
    dmax = cfg.delta_max

    for it in range(1, cfg.max_iters + 1):
        rec = IterationRecord(it, 0.0)
        x_prev, total_prev = x.copy(), total
        for j in range(n):
            c = backend(x, state, j)
            lo, hi = c.lo, c.hi
            ew = eps[lo:hi]
            d_lin, degenerate = solve_delta_lin(ew, c, ops=trace.ops)
            ops = step_op_counts(len(c))
            rec.mult_count += ops["norm"]["mul"] + ops["solve"]["mul"]
            rec.add_count += ops["norm"]["add"] + ops["solve"]["add"]
            if degenerate:
                rec.degenerate += 1
                continue
            _, d = trust_region(d_lin, dmax)
            if d == 0:
                continue
            if per_step:
                slo, shi = state.support(j)
                y_new = state.outputs_if(j, d, slo, shi)
                before = float(np.sum(np.abs(eps[slo:shi]) ** 2))
                e_new = y_new - s[slo:shi]
                after = float(np.sum(np.abs(e_new) ** 2))
                if cfg.record_steps:
                    trace.steps.append((it, j, d, before, after))
                if after <= before:
                    state.commit(j, d)
                    x[j] += d
                    eps[slo:shi] = e_new
                    total += after - before
                    rec.accepts += 1
                else:
                    rec.rejects += 1
                continue
            x[j] += d
            rec.accepts += 1
            if state is not None:
                slo, shi = state.support(j)
                state.commit(j, d)
                eps[slo:shi] = state.y[slo:shi] - s[slo:shi]
            else:
                rec.mult_count += ops["update"]["mul"]
                rec.add_count += ops["update"]["add"]
                if trace.ops is not None:
                    eps[lo:hi] = update_error_counted(ew, c, d, trace.ops)
                else:
                    eps[lo:hi] += c.br * d.real + c.bi * d.imag

        if per_step:
            if cfg.refresh_every and it % cfg.refresh_every == 0:
                state = model.state(x)
                eps = state.y - s
                total = float(np.sum(np.abs(eps) ** 2))
        else:
            # one exact simulation per iteration
            eps = np.asarray(model.simulate(x)) - s
            total = float(np.sum(np.abs(eps) ** 2))
            if total > total_prev:
                x = x_prev
                total = total_prev
                eps = np.asarray(model.simulate(x)) - s
                if state is not None:
                    state = model.state(x)
                rec.mse_db = _mse_db(total, ref)
                trace.records.append(rec)
                trace.reverted = True
                trace.final_iteration = it - 1
                log.debug("iteration %d raised the MSE, reverted", it)
                break
        rec.mse_db = _mse_db(total, ref)
        trace.records.append(rec)
        trace.final_iteration = it
        log.debug("iteration %d mse %.3f dB (%d accepted, %d rejected)", it, rec.mse_db, rec.accepts, rec.rejects)
        if trace.records[-2].mse_db - rec.mse_db < cfg.min_improvement_db:
            break
    return x, trace


def objective_window(model, s, x, j: int, value: np.ndarray) -> np.ndarray:
    """Windowed squared error if ``x(j)`` took each of ``value``.

    The window covers every output that depends on ``x(j)``. Evaluated with
    the model's incremental state.
    """
    st = model.state(x)
    lo, hi = st.support(j)
    out = np.empty(np.size(value))
    for i, v in enumerate(np.ravel(value)):
        y = st.outputs_if(j, v - x[j], lo, hi)
        out[i] = np.sum(np.abs(y - s[lo:hi]) ** 2)
    return out.reshape(np.shape(value))


def exact_step_oracle(s, x, j: int, model, radius: float = 0.5, pitch: float = 1e-3,
                      coarse_pitch: float = 0.02, refine: bool = True, batch=None) -> complex:
    """Grid-search minimizer of the windowed squared error over ``x(j)``.

    The grid is ``x(j) + a + 1j*b`` with ``a, b`` multiples of the pitch in
    ``[-radius, radius]``. With ``refine`` a coarse grid is searched first and
    nested grids of halving pitch around the incumbent follow until ``pitch``
    is reached; each level contains the previous best point, so the objective
    never increases. ``batch(values)`` may supply a vectorized objective.
    """
    s = np.asarray(s, dtype=complex)
    x = np.asarray(x, dtype=complex)
    f = batch or (lambda v: objective_window(model, s, x, j, v))

    def search(centre, r, p):
        k = int(round(r / p))
        g = centre + p * (np.arange(-k, k + 1)[:, None] + 1j * np.arange(-k, k + 1)[None, :])
        val = f(g.ravel())
        i = int(np.argmin(val))
        return g.ravel()[i], val[i]

    if not refine:
        return complex(search(x[j], radius, pitch)[0])
    p = max(coarse_pitch, pitch)
    best, _ = search(x[j], radius, p)
    while p > pitch:
        q = max(p / 2, pitch)
        best, _ = search(best, 2 * p, q)
        p = q
    return complex(best)


__all__ = [
    "PredistortConfig",
    "RunTrace",
    "IterationRecord",
    "ConfigError",
    "predistort_block",
    "exact_step_oracle",
    "objective_window",
    "LinearCoeffs",
]
