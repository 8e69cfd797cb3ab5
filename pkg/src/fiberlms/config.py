"""Scenario configuration files (TOML) and their validation.

A scenario has the sections ``link``, ``signal``, ``noise``, ``sim``,
``twin``, ``lms`` and ``run``. Every key carries its unit in the name.
Unknown sections or keys are rejected with the line where they appear.
"""

import copy
import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import tomli

from .channel import Anomaly, GainProfile, LinkSpec, SpanSpec
from .waveforms import PulseSpec


class ConfigError(ValueError):
    """Invalid scenario; ``line`` is the 1-based line of the offending key when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line else f"{path}: "
        super().__init__(where + message)


@dataclass
class LinkSection:
    n_spans: int = 1
    span_length_km: float = 100.0
    alpha_db_per_km: float = 0.2
    dispersion_ps_nm_km: float = 17.0
    gamma_per_w_km: float = 1.26
    anomaly_positions_km: list = field(default_factory=list)
    anomaly_losses_db: list = field(default_factory=list)
    gain_profile_z_km: list = field(default_factory=list)
    gain_profile_db: list = field(default_factory=list)


@dataclass
class SignalSection:
    qam_order: int = 16
    symbol_rate_gbd: float = 64.0
    rolloff: float = 0.1
    pulse_span_symbols: int = 32
    power_dbm: float = 5.0
    n_pol: int = 2


@dataclass
class NoiseSection:
    snr_db: float = float("inf")


@dataclass
class SimSection:
    samples_per_symbol: int = 2
    first_step_m: float = 200.0
    max_step_m: float = 20e3


@dataclass
class TwinSection:
    grid_step_km: float = 5.0
    block_length_symbols: int = 0


@dataclass
class LmsSection:
    mu_bar: float = 0.05
    mu0_scale: float = 2e-4
    init: str = "nominal"
    phi_init: str = "fit"
    data_aided: bool = True
    clamp_nonnegative: bool = True


@dataclass
class RunSection:
    n_symbols: int = 8192
    realizations: int = 100
    seed: int = 1
    waveform_pool: int = 0
    trace_every_realizations: int = 1
    average_last_blocks: int = 0
    taps_every_blocks: int = 0
    rebound_threshold_db: float = 0.1


SECTIONS = {
    "link": LinkSection, "signal": SignalSection, "noise": NoiseSection, "sim": SimSection,
    "twin": TwinSection, "lms": LmsSection, "run": RunSection,
}


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    link: LinkSection = field(default_factory=LinkSection)
    signal: SignalSection = field(default_factory=SignalSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    sim: SimSection = field(default_factory=SimSection)
    twin: TwinSection = field(default_factory=TwinSection)
    lms: LmsSection = field(default_factory=LmsSection)
    run: RunSection = field(default_factory=RunSection)

    @property
    def symbol_period_s(self):
        return 1.0 / (self.signal.symbol_rate_gbd * 1e9)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, default=_json_default)


def _json_default(x):
    raise TypeError(f"not serializable: {x!r}")


def _key_lines(text):
    """Map ``section.key`` (and ``section``) to the line where it is defined."""
    lines = {}
    section = ""
    for n, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]$", s)
        if m:
            section = m.group(1)
            lines.setdefault(section, n)
            continue
        m = re.match(r"^([A-Za-z0-9_.\"-]+)\s*=", s)
        if m:
            key = m.group(1).strip('"')
            lines.setdefault(f"{section}.{key}" if section else key, n)
    return lines


def _coerce(value, default, where):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValueError(f"{where} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValueError(f"{where} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ValueError(f"{where} must be a list of numbers")
        return [float(v) for v in value]
    return value


def from_dict(data, path=None, lines=None):
    """Build a :class:`ScenarioConfig` from parsed TOML, rejecting unknown keys."""
    lines = lines or {}
    cfg = ScenarioConfig()
    for key, value in data.items():
        if key == "name":
            if not isinstance(value, str):
                raise ConfigError("name must be a string", path, lines.get(key))
            cfg.name = value
            continue
        if key not in SECTIONS:
            raise ConfigError(f"unknown section or key {key!r}", path, lines.get(key))
        if not isinstance(value, dict):
            raise ConfigError(f"{key!r} must be a table", path, lines.get(key))
        section = getattr(cfg, key)
        known = {f.name: f for f in fields(section)}
        for sub, v in value.items():
            where = f"{key}.{sub}"
            if sub not in known:
                raise ConfigError(f"unknown key {where!r}", path, lines.get(where, lines.get(key)))
            try:
                setattr(section, sub, _coerce(v, getattr(section, sub), where))
            except ValueError as exc:
                raise ConfigError(str(exc), path, lines.get(where)) from None
    try:
        check(cfg)
    except ValueError as exc:
        key = getattr(exc, "key", None)
        raise ConfigError(str(exc), path, lines.get(key)) from None
    return cfg


def _fail(msg, key):
    exc = ValueError(msg)
    exc.key = key
    raise exc


def check(cfg):
    """Physical sanity checks that do not need a run."""
    lk, sg = cfg.link, cfg.signal
    if lk.n_spans < 1:
        _fail("link.n_spans must be at least 1", "link.n_spans")
    if lk.span_length_km <= 0:
        _fail("link.span_length_km must be positive", "link.span_length_km")
    if len(lk.anomaly_positions_km) != len(lk.anomaly_losses_db):
        _fail("link.anomaly_positions_km and link.anomaly_losses_db differ in length",
              "link.anomaly_losses_db")
    total = lk.n_spans * lk.span_length_km
    for p in lk.anomaly_positions_km:
        if not 0 <= p <= total:
            _fail(f"anomaly at {p} km lies outside the {total:g} km link", "link.anomaly_positions_km")
    if any(x < 0 for x in lk.anomaly_losses_db):
        _fail("anomaly losses must be non-negative", "link.anomaly_losses_db")
    if len(lk.gain_profile_z_km) != len(lk.gain_profile_db):
        _fail("gain profile coordinates and values differ in length", "link.gain_profile_db")
    if sg.qam_order not in (4, 16, 64):
        _fail("signal.qam_order must be 4, 16 or 64", "signal.qam_order")
    if sg.n_pol not in (1, 2):
        _fail("signal.n_pol must be 1 or 2", "signal.n_pol")
    if not 0 <= sg.rolloff <= 1:
        _fail("signal.rolloff must lie in [0, 1]", "signal.rolloff")
    if cfg.sim.samples_per_symbol < 2:
        _fail("sim.samples_per_symbol must be at least 2", "sim.samples_per_symbol")
    if cfg.twin.grid_step_km <= 0:
        _fail("twin.grid_step_km must be positive", "twin.grid_step_km")
    if cfg.lms.init not in ("nominal", "zero", "random"):
        _fail("lms.init must be nominal, zero or random", "lms.init")
    if cfg.lms.phi_init not in ("fit", "zero"):
        _fail("lms.phi_init must be fit or zero", "lms.phi_init")
    if cfg.lms.mu_bar < 0 or cfg.lms.mu0_scale < 0:
        _fail("step sizes must be non-negative", "lms.mu_bar")
    if cfg.run.n_symbols < 1 or cfg.run.realizations < 1:
        _fail("run.n_symbols and run.realizations must be positive", "run.n_symbols")
    if cfg.run.waveform_pool < 0:
        _fail("run.waveform_pool must be non-negative", "run.waveform_pool")
    return cfg


def parse_value(text):
    """Parse an override value with TOML syntax, falling back to a bare string."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_overrides(data, overrides):
    """Apply ``section.key=value`` strings to a parsed TOML mapping (copied)."""
    data = copy.deepcopy(data)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} does not address a table key")
        node[parts[-1]] = parse_value(value.strip())
    return data


def load_config(path, overrides=()):
    """Read, override and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = re.search(r"line (\d+)", str(exc))
            line = int(m.group(1)) if m else None
        raise ConfigError(f"syntax error: {exc}", path, line) from None
    data = apply_overrides(data, overrides)
    return from_dict(data, path, _key_lines(text))


def build_link(cfg):
    lk = cfg.link
    spans = [SpanSpec(lk.span_length_km, lk.alpha_db_per_km, lk.dispersion_ps_nm_km,
                      lk.gamma_per_w_km) for _ in range(lk.n_spans)]
    anomalies = [Anomaly(p, x) for p, x in zip(lk.anomaly_positions_km, lk.anomaly_losses_db)]
    gp = None
    if lk.gain_profile_z_km:
        gp = GainProfile(list(lk.gain_profile_z_km), list(lk.gain_profile_db))
    return LinkSpec(spans, anomalies, gp)


def build_pulse(cfg, samples_per_symbol=None):
    sg = cfg.signal
    return PulseSpec(sg.rolloff, sg.pulse_span_symbols,
                     samples_per_symbol or cfg.sim.samples_per_symbol)


def steps_per_span(cfg):
    return cfg.link.span_length_km / cfg.twin.grid_step_km


def grid_gvd_phase(cfg):
    """GVD phase across one twin grid step at the signal's 3 dB band edge (half the symbol rate)."""
    from .channel import beta2_from_dispersion
    omega = np.pi * cfg.signal.symbol_rate_gbd * 1e9
    return abs(beta2_from_dispersion(cfg.link.dispersion_ps_nm_km)) * omega ** 2 \
        * cfg.twin.grid_step_km / 2


def warnings_for(cfg, phase_limit=0.9 * np.pi):
    """Non-fatal remarks about a valid scenario.

    The twin's mid-point rule degrades severely once the GVD phase across a
    grid step approaches pi at the band edge: about 14 steps per span
    (7 km) for 100 km spans at 17 ps/nm/km and 64 GBd.
    """
    out = []
    phase = grid_gvd_phase(cfg)
    if phase >= phase_limit:
        out.append(f"twin grid of {cfg.twin.grid_step_km:g} km ({steps_per_span(cfg):.1f} steps per "
                   f"span) accumulates {phase:.2f} rad of GVD phase per step at the band edge; "
                   f"estimation degrades severely around pi (about 14 steps per 100 km span)")
    return out
