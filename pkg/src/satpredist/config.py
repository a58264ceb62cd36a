"""Flat ``key = value`` configuration files.

An experiment file names its kind and refers to a channel file::

    kind = convergence
    channel = default_channel.cfg
    n_block = 256
    delta_max = 0.05, 0.1, 0.2

A channel file sets :class:`~satpredist.channel.ChannelConfig` fields. The
amplifier is either Saleh (``hpa_alpha_a`` .. ``hpa_beta_p``) or tabulated
(``hpa_am_am`` and ``hpa_am_pm`` pointing at two-column text files of input
amplitude against output amplitude or phase in degrees). Relative paths are
resolved against the file that names them. Keys are case sensitive. Lines
starting with ``#`` or ``;`` are comments; list values are comma separated.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .channel import ChannelConfig, HpaModel

KINDS = ("identify", "convergence", "backend_loss", "td_sweep")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigFileError(ValueError):
    """Malformed or inconsistent configuration file."""


def read_flat(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigFileError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str  # keys are field names, so keep their case
    try:
        parser.read_string("[root]\n" + path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigFileError(f"{path}: {exc}") from exc
    return dict(parser["root"])


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ConfigFileError(f"not a boolean: {text!r}")


def coerce(text: str, like):
    """Convert ``text`` to the type of the default value ``like``."""
    try:
        if isinstance(like, bool):
            return parse_bool(text)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            elem = like[0] if like else ""
            return tuple(coerce(t, elem) for t in items)
    except ValueError as exc:
        raise ConfigFileError(f"bad value {text!r}: {exc}") from exc
    return text.strip()


def apply_fields(obj_type, values: dict, **fixed):
    """Instantiate the dataclass ``obj_type`` from string ``values``; unknown
    keys are an error."""
    proto = obj_type(**fixed)
    known = {f.name: getattr(proto, f.name) for f in fields(obj_type)}
    kwargs = dict(fixed)
    for key, text in values.items():
        if key not in known:
            raise ConfigFileError(f"unknown key {key!r} for {obj_type.__name__}")
        kwargs[key] = coerce(text, known[key])
    return obj_type(**kwargs)


def read_table(path) -> tuple[np.ndarray, np.ndarray]:
    try:
        data = np.loadtxt(path, comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigFileError(f"cannot read table {path}: {exc}") from exc
    if data.shape[1] != 2:
        raise ConfigFileError(f"{path}: expected two columns, got {data.shape[1]}")
    return data[:, 0], data[:, 1]


def load_channel_config(path) -> ChannelConfig:
    path = Path(path)
    values = read_flat(path)
    hpa_vals = {k[4:]: values.pop(k) for k in list(values) if k.startswith("hpa_")}
    return ChannelConfig(**_channel_kwargs(values, hpa_vals, path.parent))


def _channel_kwargs(values: dict, hpa_vals: dict, base: Path) -> dict:
    proto = ChannelConfig()
    kwargs = {}
    for key, text in values.items():
        if key == "hpa" or not hasattr(proto, key):
            raise ConfigFileError(f"unknown channel key {key!r}")
        kwargs[key] = coerce(text, getattr(proto, key))
    kwargs["hpa"] = _hpa(hpa_vals, base)
    return kwargs


def _hpa(vals: dict, base: Path) -> HpaModel:
    vals = dict(vals)
    if "am_am" in vals or "am_pm" in vals:
        if "am_am" not in vals or "am_pm" not in vals:
            raise ConfigFileError("tabulated HPA needs both hpa_am_am and hpa_am_pm")
        a_in, a_out = read_table(base / vals.pop("am_am"))
        p_in, p_deg = read_table(base / vals.pop("am_pm"))
        if vals:
            raise ConfigFileError(f"unexpected HPA keys with tables: {sorted(vals)}")
        phase = np.interp(a_in, p_in, np.deg2rad(p_deg))
        try:
            return HpaModel.from_tables(a_in, a_out, phase)
        except ValueError as exc:
            raise ConfigFileError(str(exc)) from exc
    vals.pop("kind", None)
    return apply_fields(HpaModel, vals)


@dataclass
class ExperimentConfig:
    """Experiment file contents: the channel, the kind and its settings."""

    kind: str
    channel: ChannelConfig
    settings: dict = field(default_factory=dict)
    seed: int = 0
    source: Path | None = None


def load_experiment(path, kind: str | None = None) -> ExperimentConfig:
    """Read an experiment file; ``kind`` is the expected kind, which the file
    may omit but not contradict."""
    path = Path(path)
    values = read_flat(path)
    own = values.pop("kind", "").strip().replace("-", "_")
    if kind and own and own != kind:
        raise ConfigFileError(f"{path}: file is a {own!r} experiment, not {kind!r}")
    kind = own or kind or ""
    if kind not in KINDS:
        raise ConfigFileError(f"{path}: kind must be one of {', '.join(KINDS)}, got {kind!r}")
    ref = values.pop("channel", None)
    channel = load_channel_config(path.parent / ref) if ref else ChannelConfig()
    overrides = {k[8:]: values.pop(k) for k in list(values) if k.startswith("channel.")}
    if overrides:
        hpa_vals = {k[4:]: overrides.pop(k) for k in list(overrides) if k.startswith("hpa_")}
        kw = _channel_kwargs(overrides, {}, path.parent)
        if not hpa_vals:
            kw.pop("hpa")
        else:
            kw["hpa"] = _hpa(hpa_vals, path.parent)
        channel = ChannelConfig(**{**channel.__dict__, **kw})
    seed = int(values.pop("seed", 0))
    return ExperimentConfig(kind, channel, values, seed, path)
