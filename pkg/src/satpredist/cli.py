"""Command-line experiment runner.

    satpredist identify      --config exp.cfg --out results/
    satpredist convergence   --config exp.cfg --out results/ --n-override 256
    satpredist backend-loss  --config exp.cfg --out results/ --threads 4
    satpredist td-sweep      --config exp.cfg --out results/ --seed 3

Each verb writes CSV files (header row, 6 significant digits) and a short
text summary into the output directory and prints the summary.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .channel import build_channel
from .config import ConfigFileError, ExperimentConfig, apply_fields, load_experiment
from .experiments import (BackendLossSettings, ConvergenceSettings, IdentifySettings, TdSettings,
                          run_backend_loss, run_convergence, run_identify, run_td_settings)
from .metrics import argmin_td, write_td_csv
from .predistort import ConfigError, LutBudgetError, NotInvertibleError
from .volterra import IllConditionedError, save_kernels

log = logging.getLogger("satpredist")

VERBS = {"identify": "identify", "convergence": "convergence", "backend-loss": "backend_loss",
         "td-sweep": "td_sweep"}
SETTINGS = {"identify": IdentifySettings, "convergence": ConvergenceSettings,
            "backend_loss": BackendLossSettings, "td_sweep": TdSettings}


def fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def write_rows(rows: list[dict], path: Path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(rows[0].keys())
        for r in rows:
            w.writerow([fmt(v) for v in r.values()])


def settings_for(exp: ExperimentConfig, n_override: int | None):
    cls = SETTINGS[exp.kind]
    values = dict(exp.settings)
    st = apply_fields(cls, values)
    if n_override is not None:
        if n_override < 1:
            raise ConfigFileError("--n-override must be positive")
        if hasattr(st, "n_block"):
            st.n_block = n_override
        else:
            st.n_train = max(n_override, st.n_train)
    if hasattr(st, "seed"):
        st.seed = exp.seed
    return st


def cmd_identify(exp, st: IdentifySettings, out: Path, threads: int) -> str:
    ch = build_channel(exp.channel)
    idn, err = run_identify(ch, st, exp.seed)
    save_kernels(idn.kernels, out / "kernels.txt")
    lines = [f"kernels          {len(idn.kernels)}",
             f"max_order        {idn.kernels.max_order}",
             f"memory           L1={idn.kernels.L1} L2={idn.kernels.L2}",
             f"train_residual   {idn.residual_db:.6g} dB",
             f"test_residual    {err:.6g} dB",
             f"condition        {idn.condition:.6g}"]
    return "\n".join(lines)


def cmd_convergence(exp, st: ConvergenceSettings, out: Path, threads: int) -> str:
    rows = run_convergence(build_channel(exp.channel), st, threads)
    write_rows(rows, out / "convergence.csv")
    last = {}
    for r in rows:
        last[(r["zf"], r["check_mode"], r["delta_max"])] = r
    lines = ["zf check_mode     delta_max final_mse_db reverted_blocks"]
    for (zf, mode, dm), r in sorted(last.items()):
        lines.append(f"{zf:<2} {mode:<14} {dm:<9.6g} {r['mse_db']:<12.6g} {r['reverted']}")
    return "\n".join(lines)


def cmd_backend_loss(exp, st: BackendLossSettings, out: Path, threads: int) -> str:
    rows = run_backend_loss(build_channel(exp.channel), st, threads)
    write_rows(rows, out / "backend_loss.csv")
    lines = ["ibo_db backend          length mse_db     loss_db"]
    for r in rows:
        lines.append(f"{r['ibo_db']:<6.6g} {r['backend']:<16} {r['length']:<6} {r['mse_db']:<10.6g} "
                     f"{r['loss_db']:.6g}")
    return "\n".join(lines)


def cmd_td_sweep(exp, st: TdSettings, out: Path, threads: int) -> str:
    res = run_td_settings(build_channel(exp.channel), st, exp.seed, threads)
    off = st.ebn0_offset_db()
    lines = [f"target SER {st.target_ser:.6g}; Eb/N0 = Es/N0 - {off:.6g} dB",
             "predistorter  ibo_db obo_db td_db"]
    for name, points in res.items():
        write_td_csv(points, out / f"td_{name}.csv")
        best = argmin_td(points)
        if np.isfinite(best.td_db):
            lines.append(f"{name:<13} {best.ibo_db:<6.6g} {best.obo_db:<6.6g} {best.td_db:.6g}")
        else:
            lines.append(f"{name:<13} target not reached at any back-off")
    return "\n".join(lines)


COMMANDS = {"identify": cmd_identify, "convergence": cmd_convergence, "backend_loss": cmd_backend_loss,
            "td_sweep": cmd_td_sweep}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="satpredist", description="Satellite data pre-distortion experiments")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        s = sub.add_parser(verb)
        s.add_argument("--config", required=True, type=Path, help="experiment file")
        s.add_argument("--out", type=Path, default=Path("results"), help="output directory")
        s.add_argument("--seed", type=int, default=None, help="override the file's seed")
        s.add_argument("--n-override", type=int, default=None, help="block length for desk-scale runs")
        s.add_argument("--threads", type=int, default=1, help="worker processes across blocks")
        s.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    kind = VERBS[args.verb]
    try:
        if args.threads < 1:
            raise ConfigFileError("--threads must be >= 1")
        exp = load_experiment(args.config, kind)
        if args.seed is not None:
            exp.seed = args.seed
        st = settings_for(exp, args.n_override)
        args.out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[kind](exp, st, args.out, args.threads)
    except (ConfigFileError, ConfigError, LutBudgetError, NotInvertibleError, IllConditionedError,
            ValueError, OSError) as exc:
        print(f"satpredist {args.verb}: error: {exc}", file=sys.stderr)
        return 2
    (args.out / f"{kind}_summary.txt").write_text(summary + "\n")
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
