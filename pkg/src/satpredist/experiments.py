"""Experiment drivers behind the command-line verbs."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelModel, measure_operating_point
from .dsp import apsk32
from .metrics import Link, TargetUnreachableError, TdPoint, no_predistortion, required_esn0
from .predistort import PredistortConfig, build_lut, predistort_block, zf_prefilter
from .volterra import identify, identify_sensitivities, reduce

log = logging.getLogger(__name__)


def parallel_map(fn, items, threads: int = 1):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def data_blocks(n_blocks: int, n_block: int, seed: int):
    c = apsk32()
    return [c.random_symbols(n_block, np.random.default_rng([seed, b])) for b in range(n_blocks)]


def prepare_model(ch: ChannelModel, zf: bool = True, zf_taps: int = 63) -> ChannelModel:
    """The channel the pre-distorter optimizes against: with ``zf`` the
    zero-forcing pre-filter sits in front of the shaping filter."""
    return ch.with_prefilter(zf_prefilter(ch, zf_taps)) if zf else ch


def _mse_of(model, s, x):
    y = model.simulate(x)
    return float(np.sum(np.abs(y - s) ** 2)), float(np.sum(np.abs(s) ** 2))


def pooled_db(err, ref) -> float:
    err, ref = float(np.sum(err)), float(np.sum(ref))
    return -200.0 if err <= 0 else max(-200.0, 10 * np.log10(err / ref))


# ---------------------------------------------------------------------------
# reduced-complexity back-ends


@dataclass
class BackendKernels:
    """Kernel sets of the reduced back-ends for one window length."""

    length: int
    rv: object
    lut: object
    misfit_db: float


def training_blocks(model, n_blocks: int = 6, n_block: int = 512, seed: int = 900, delta_max: float = 0.1,
                    max_iters: int = 10):
    """Blocks pre-distorted by the simulation back-end, used as training
    inputs for the reduced models."""
    cfg = PredistortConfig(delta_max=delta_max, max_iters=max_iters)
    return [predistort_block(s, model, cfg)[0] for s in data_blocks(n_blocks, n_block, seed)]


DEFAULT_ORDERS = {3: 5, 5: 3}


def fit_backend_kernels(model, blocks, length: int, order: int | None = None,
                        max_distinct: int = 2) -> BackendKernels:
    """Fit the reduced models for window ``length``.

    One sensitivity fit of all kernels up to ``order`` in the window feeds
    the LUT; the reduced-Volterra back-end keeps its kernels with at most
    ``max_distinct`` different indices. The default order is 5 for 3-symbol
    windows and 3 for longer ones.
    """
    order = order or DEFAULT_ORDERS.get(length, 3)
    h = (length - 1) // 2
    idn = identify_sensitivities(model, blocks, order, h, length - 1 - h)
    rv = reduce(idn.kernels, max_distinct_indices=max_distinct)
    return BackendKernels(length, rv, idn.kernels, idn.residual_db)


def backend_config(kind: str, kernels: BackendKernels | None = None, base: PredistortConfig | None = None,
                   frozen: bool = False, lut_budget: int = 1 << 22) -> PredistortConfig:
    base = base or PredistortConfig()
    if kind == "channel_sim":
        return replace(base, backend="channel_sim", lut=None, reduced_kernels=None)
    if kind == "reduced_volterra":
        return replace(base, backend="reduced_volterra", reduced_kernels=kernels.rv, lut=None)
    if kind == "lut":
        c = apsk32()
        lazy = len(c) ** kernels.length > lut_budget
        lut = build_lut(kernels.lut, c, kernels.length, frozen_inputs=frozen, max_entries=lut_budget, lazy=lazy)
        return replace(base, backend="lut", lut=lut, reduced_kernels=None)
    raise ValueError(f"unknown backend {kind!r}")


# ---------------------------------------------------------------------------
# convergence (MSE per iteration)


@dataclass
class ConvergenceSettings:
    delta_max: tuple = (0.05, 0.1, 0.2, 0.4)
    zf: tuple = (True, False)
    check_mode: tuple = ("per_step", "per_iteration")
    max_iters: int = 10
    n_blocks: int = 2
    n_block: int = 12960
    backend: str = "channel_sim"
    seed: int = 0


def _run_one(args):
    s, model, cfg = args
    x, tr = predistort_block(s, model, cfg)
    return x, tr


def pooled_trace(results, S, max_iters: int):
    """Block-pooled MSE per iteration; stopped runs keep their final value."""
    rows = []
    for it in range(max_iters + 1):
        err = ref = 0.0
        for (_, tr), s in zip(results, S):
            rec = tr.records[min(it, len(tr.records) - 1)]
            p = float(np.sum(np.abs(s) ** 2))
            err += p * 10 ** (rec.mse_db / 10)
            ref += p
        rows.append(pooled_db(err, ref))
    return rows


def run_convergence(ch: ChannelModel, st: ConvergenceSettings, threads: int = 1) -> list[dict]:
    """One row per (delta_max, zf, check_mode, iteration)."""
    S = data_blocks(st.n_blocks, st.n_block, st.seed)
    rows = []
    for zf in st.zf:
        model = prepare_model(ch, zf)
        for mode in st.check_mode:
            for dm in st.delta_max:
                cfg = PredistortConfig(n_block=st.n_block, delta_max=dm, max_iters=st.max_iters,
                                       check_mode=mode, backend=st.backend, min_improvement_db=0.0)
                res = parallel_map(_run_one, [(s, model, cfg) for s in S], threads)
                curve = pooled_trace(res, S, st.max_iters)
                reverted = sum(tr.reverted for _, tr in res)
                for it, m in enumerate(curve):
                    acc = sum(tr.records[it].accepts for _, tr in res if it < len(tr.records))
                    rej = sum(tr.records[it].rejects for _, tr in res if it < len(tr.records))
                    rows.append(dict(delta_max=dm, zf=int(zf), check_mode=mode, iteration=it, mse_db=m,
                                     accepts=acc, rejects=rej, reverted=reverted))
                log.info("zf=%s %s dmax=%g final %.2f dB", zf, mode, dm, curve[-1])
    return rows


# ---------------------------------------------------------------------------
# back-end comparison


@dataclass
class BackendLossSettings:
    ibo_db: tuple = (3.0, 4.0, 5.0)
    lengths: tuple = (3, 5)
    backends: tuple = ("lut", "reduced_volterra")
    n_blocks: int = 2
    n_block: int = 12960
    delta_max: float = 0.1
    max_iters: int = 10
    reduced_check: str = "per_iteration"
    order: int = 0
    max_distinct: int = 2
    train_blocks: int = 6
    train_block: int = 512
    frozen_lut: bool = False
    seed: int = 0


def run_backend_loss(ch: ChannelModel, st: BackendLossSettings, threads: int = 1) -> list[dict]:
    """MSE of every back-end and its loss against the simulation back-end."""
    S = data_blocks(st.n_blocks, st.n_block, st.seed)
    rows = []
    for ibo in st.ibo_db:
        model = prepare_model(ch.with_ibo(ibo))
        base = PredistortConfig(n_block=st.n_block, delta_max=st.delta_max, max_iters=st.max_iters)
        res = parallel_map(_run_one, [(s, model, base) for s in S], threads)
        ref = pooled_db(*zip(*[_mse_of(model, s, x) for s, (x, _) in zip(S, res)]))
        rows.append(dict(ibo_db=ibo, backend="channel_sim", length=model.Lc, mse_db=ref, loss_db=0.0))
        train = training_blocks(model, st.train_blocks, st.train_block, st.seed + 900, st.delta_max, st.max_iters)
        for L in st.lengths:
            kern = fit_backend_kernels(model, train, L, st.order or None, st.max_distinct)
            for b in st.backends:
                cfg = backend_config(b, kern, replace(base, check_mode=st.reduced_check), frozen=st.frozen_lut)
                out = parallel_map(_run_one, [(s, model, cfg) for s in S], threads)
                m = pooled_db(*zip(*[_mse_of(model, s, x) for s, (x, _) in zip(S, out)]))
                rows.append(dict(ibo_db=ibo, backend=b, length=L, mse_db=m, loss_db=m - ref))
                log.info("ibo %g %s L'=%d loss %.3f dB", ibo, b, L, m - ref)
    return rows


# ---------------------------------------------------------------------------
# total degradation


class Transmitter:
    """Per-back-off pre-distorter factories for the TD sweep (picklable)."""

    def __init__(self, kind: str, delta_max: float = 0.1, max_iters: int = 10, length: int = 3,
                 reduced_backend: str = "reduced_volterra", train_blocks: int = 6, train_block: int = 512,
                 seed: int = 0):
        self.kind = kind
        self.delta_max = delta_max
        self.max_iters = max_iters
        self.length = length
        self.reduced_backend = reduced_backend
        self.train_blocks = train_blocks
        self.train_block = train_block
        self.seed = seed

    def __call__(self, ch: ChannelModel):
        if self.kind == "none":
            return no_predistortion(ch)
        model = prepare_model(ch)
        if self.kind == "zf":
            return lambda s: (model, s)
        base = PredistortConfig(delta_max=self.delta_max, max_iters=self.max_iters)
        if self.kind == "sva":
            cfg = base
        elif self.kind == "sva-reduced":
            train = training_blocks(model, self.train_blocks, self.train_block, self.seed + 900,
                                    self.delta_max, self.max_iters)
            kern = fit_backend_kernels(model, train, self.length)
            cfg = backend_config(self.reduced_backend, kern, replace(base, check_mode="per_iteration"))
        else:
            raise ValueError(f"unknown pre-distorter {self.kind!r}")
        return lambda s: (model, predistort_block(s, model, cfg)[0])


def _td_point(args):
    ch, tx, ibo, S, c, target, req_awgn, search, min_errors, seed = args
    chi = ch.with_ibo(ibo)
    send = tx(chi)
    sent = [send(s) for s in S]
    model = sent[0][0]
    X = [x for _, x in sent]
    op = measure_operating_point(model, X)
    link = Link.from_channel(model, X, S, c)
    try:
        req = required_esn0(link, target, *search, min_errors=min_errors, seed=seed)
    except TargetUnreachableError:
        req = float("inf")
    return TdPoint(float(ibo), op.obo_db, op.omux_loss_db, req, req_awgn)


@dataclass
class TdSettings:
    ibo_db: tuple = (-1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0)
    predistorters: tuple = ("none", "sva", "sva-reduced")
    target_ser: float = 1e-2
    n_blocks: int = 4
    n_block: int = 2048
    awgn_symbols: int = 200_000
    min_errors: int = 100
    esn0_lo: float = 0.0
    esn0_hi: float = 40.0
    delta_max: float = 0.1
    max_iters: int = 10
    reduced_backend: str = "reduced_volterra"
    reduced_length: int = 3
    train_blocks: int = 6
    train_block: int = 512
    code_rate: float = 1.0

    def transmitters(self, seed: int = 0) -> dict:
        return {k: Transmitter(k, self.delta_max, self.max_iters, self.reduced_length, self.reduced_backend,
                               self.train_blocks, self.train_block, seed) for k in self.predistorters}

    def ebn0_offset_db(self) -> float:
        """``Es/N0 - Eb/N0`` for the configured code rate."""
        return float(10 * np.log10(apsk32().bits_per_symbol * self.code_rate))


def run_td_settings(ch: ChannelModel, st: TdSettings, seed: int = 0, threads: int = 1) -> dict:
    return run_td_sweep(ch, st.transmitters(seed), st.ibo_db, st.target_ser, st.n_blocks, st.n_block, seed,
                        st.awgn_symbols, (st.esn0_lo, st.esn0_hi), st.min_errors, threads)


def run_td_sweep(ch: ChannelModel, transmitters: dict, ibo_list, target: float = 1e-2, n_blocks: int = 4,
                 n_block: int = 2048, seed: int = 0, awgn_symbols: int = 200_000, search=(0.0, 40.0),
                 min_errors: int = 100, threads: int = 1) -> dict:
    """TD points per transmitter; unreachable targets give an infinite TD."""
    c = apsk32()
    req_awgn = required_esn0(Link.awgn(c, awgn_symbols, seed + 1), target, *search, min_errors=min_errors,
                             seed=seed + 2)
    S = data_blocks(n_blocks, n_block, seed)
    out = {}
    for name, tx in transmitters.items():
        jobs = [(ch, tx, ibo, S, c, target, req_awgn, search, min_errors, seed + 3) for ibo in ibo_list]
        out[name] = parallel_map(_td_point, jobs, threads)
        for p in out[name]:
            log.info("%s ibo %.2f obo %.2f td %.2f", name, p.ibo_db, p.obo_db, p.td_db)
    return out


# ---------------------------------------------------------------------------
# identification


@dataclass
class IdentifySettings:
    max_order: int = 3
    L1: int = 1
    L2: int = 1
    n_train: int = 20000
    ridge: float = 1e-8
    zf: bool = False
    n_test: int = 10000


def run_identify(ch: ChannelModel, st: IdentifySettings, seed: int = 0):
    from .volterra import model_error_db

    model = prepare_model(ch, st.zf)
    idn = identify(model, st.max_order, st.L1, st.L2, st.n_train, st.ridge, seed=seed)
    test = apsk32().random_symbols(st.n_test, np.random.default_rng([seed, 77]))
    return idn, model_error_db(idn.kernels, model, test)
