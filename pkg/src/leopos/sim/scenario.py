"""Scenario configuration: TOML sections mapped onto typed, validated settings.

Every section and key is optional; omitted values take the defaults below.

.. code-block:: toml

    [constellation]
    altitude_km = 600
    inclination_deg = 70
    num_planes = 30
    sats_per_plane = 28

    [link]
    carrier_hz = 2e9
    eirp_density_dbw_per_mhz = 34
    bandwidth_hz = 1e6          # 1e6 or 5e6
    noise_figure_db = 7
    antenna_temp_k = 290
    ue_rx_ports = 1
    atmospheric_loss_db = 1
    misc_loss_db = 13

    [prs]
    n_symbols = 1
    scs_hz = 15e3
    periodicity_s = 0.040

    [schedule]
    max_sats = 4
    guard_slots = 1
    min_elevation_deg = 15

    [receiver]
    pfa = 1e-3
    combining = "noncoherent"
    doppler_span_hz = 45e3
    doppler_step_hz = 500
    delay_span_us = 100        # 0 searches the whole window
    calibration_trials = 10000
    calibration_seed = 12345

    [channel]
    rician_k_db = 10
    fading_rho = 0.9
    fading = true

    [engine]
    window_s = 0.400
    surface_constraint = true

    [drops]
    count = 200
    center_lat_deg = 0
    center_lon_deg = 0
    diameter_km = 50

    [sim]
    master_seed = 1
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..constants import DEG
from ..constellation import ConstellationSpec, UeLocation
from ..linkbudget import LinkParams
from ..prs import PrsConfig
from ..receiver import DetectionConfig, SearchGrid


class ConfigError(ValueError):
    """Invalid scenario configuration; the message names the offending field."""


@dataclass(frozen=True)
class ConstellationSection:
    altitude_km: float = 600.0
    inclination_deg: float = 70.0
    num_planes: int = 30
    sats_per_plane: int = 28


@dataclass(frozen=True)
class LinkSection:
    carrier_hz: float = 2e9
    eirp_density_dbw_per_mhz: float = 34.0
    bandwidth_hz: float = 1e6
    noise_figure_db: float = 7.0
    antenna_temp_k: float = 290.0
    ue_rx_ports: int = 1
    ue_antenna_gain_dbi: float = 0.0
    atmospheric_loss_db: float = 1.0
    # implementation margin placing 1 MHz single-port detection at the edge of reliability
    misc_loss_db: float = 13.0


@dataclass(frozen=True)
class PrsSection:
    n_symbols: int = 1
    scs_hz: float = 15e3
    periodicity_s: float = 0.040


@dataclass(frozen=True)
class ScheduleSection:
    max_sats: int = 4
    guard_slots: int = 1
    min_elevation_deg: float = 15.0
    window_limit_ms: float = 0.0  # 0 means no limit


@dataclass(frozen=True)
class ReceiverSection:
    pfa: float = 1e-3
    combining: str = "noncoherent"
    doppler_span_hz: float = 45e3
    doppler_step_hz: float = 500.0
    delay_span_us: float = 100.0
    calibration_trials: int = 10000
    calibration_seed: int = 12345


@dataclass(frozen=True)
class ChannelSection:
    rician_k_db: float = 10.0
    fading_rho: float = 0.9
    fading: bool = True


@dataclass(frozen=True)
class EngineSection:
    window_s: float = 0.400
    surface_constraint: bool = True


@dataclass(frozen=True)
class DropsSection:
    count: int = 200
    center_lat_deg: float = 0.0
    center_lon_deg: float = 0.0
    diameter_km: float = 50.0


@dataclass(frozen=True)
class SimSection:
    master_seed: int = 1


_SECTIONS = {
    "constellation": ConstellationSection,
    "link": LinkSection,
    "prs": PrsSection,
    "schedule": ScheduleSection,
    "receiver": ReceiverSection,
    "channel": ChannelSection,
    "engine": EngineSection,
    "drops": DropsSection,
    "sim": SimSection,
}


@dataclass(frozen=True)
class Scenario:
    constellation: ConstellationSection = field(default_factory=ConstellationSection)
    link: LinkSection = field(default_factory=LinkSection)
    prs: PrsSection = field(default_factory=PrsSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    receiver: ReceiverSection = field(default_factory=ReceiverSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    engine: EngineSection = field(default_factory=EngineSection)
    drops: DropsSection = field(default_factory=DropsSection)
    sim: SimSection = field(default_factory=SimSection)

    def __post_init__(self):
        validate(self)

    # typed views consumed by the library modules
    def constellation_spec(self) -> ConstellationSpec:
        c = self.constellation
        return ConstellationSpec(c.altitude_km * 1e3, c.inclination_deg * DEG, c.num_planes, c.sats_per_plane)

    def link_params(self) -> LinkParams:
        return LinkParams(**asdict(self.link))

    def prs_template(self) -> PrsConfig:
        return PrsConfig.for_bandwidth(self.link.bandwidth_hz, 0, self.prs.n_symbols, scs_hz=self.prs.scs_hz,
                                       periodicity_s=self.prs.periodicity_s)

    def search_grid(self) -> SearchGrid:
        r = self.receiver
        span = None if r.delay_span_us <= 0 else r.delay_span_us * 1e-6
        return SearchGrid(-r.doppler_span_hz, r.doppler_span_hz, r.doppler_step_hz, span)

    def detection(self) -> DetectionConfig:
        return DetectionConfig(self.receiver.pfa, None, self.receiver.combining, self.link.ue_rx_ports)

    @property
    def rx_rate_hz(self) -> float:
        return self.prs_template().rx_sample_rate_hz

    @property
    def center(self) -> UeLocation:
        return UeLocation.from_degrees(self.drops.center_lat_deg, self.drops.center_lon_deg)

    @property
    def n_occasions(self) -> int:
        return int(round(self.engine.window_s / self.prs.periodicity_s))

    def with_(self, **sections: dict[str, Any]) -> "Scenario":
        """Copy with some keys replaced, e.g. ``with_(link={"bandwidth_hz": 5e6})``."""
        kw = {}
        for name, upd in sections.items():
            if name not in _SECTIONS:
                raise ConfigError(f"unknown section [{name}]")
            try:
                kw[name] = replace(getattr(self, name), **upd)
            except TypeError as exc:
                raise ConfigError(f"[{name}]: {exc}") from None
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha1(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]


def _check(cond: bool, where: str, msg: str):
    if not cond:
        raise ConfigError(f"{where}: {msg}")


def validate(s: Scenario) -> None:
    _check(s.constellation.altitude_km > 0, "constellation.altitude_km", "must be positive")
    _check(0 < s.constellation.inclination_deg <= 180, "constellation.inclination_deg", "must lie in (0, 180]")
    _check(s.constellation.num_planes >= 1, "constellation.num_planes", "must be >= 1")
    _check(s.constellation.sats_per_plane >= 1, "constellation.sats_per_plane", "must be >= 1")
    _check(s.link.bandwidth_hz > 0, "link.bandwidth_hz", "must be positive")
    _check(s.link.ue_rx_ports in (1, 2), "link.ue_rx_ports", "must be 1 or 2")
    _check(s.link.carrier_hz > 0, "link.carrier_hz", "must be positive")
    _check(1 <= s.prs.n_symbols <= 14, "prs.n_symbols", "must lie in [1, 14]")
    _check(s.prs.scs_hz > 0, "prs.scs_hz", "must be positive")
    k = s.prs.periodicity_s / 1e-3
    _check(s.prs.periodicity_s > 0 and abs(k - round(k)) < 1e-9, "prs.periodicity_s", "must be a multiple of 1 ms")
    _check(s.schedule.max_sats >= 1, "schedule.max_sats", "must be >= 1")
    _check(s.schedule.guard_slots >= 0, "schedule.guard_slots", "must be >= 0")
    _check(0 <= s.schedule.min_elevation_deg < 90, "schedule.min_elevation_deg", "must lie in [0, 90)")
    _check(0 < s.receiver.pfa <= 1, "receiver.pfa", "must lie in (0, 1]")
    _check(s.receiver.combining in ("noncoherent", "coherent"), "receiver.combining",
           "must be 'noncoherent' or 'coherent'")
    _check(s.receiver.doppler_step_hz > 0, "receiver.doppler_step_hz", "must be positive")
    _check(s.receiver.doppler_span_hz >= 0, "receiver.doppler_span_hz", "must be >= 0")
    _check(s.receiver.calibration_trials >= math.ceil(10 / s.receiver.pfa), "receiver.calibration_trials",
           "must be at least 10 / pfa")
    _check(s.channel.rician_k_db > -50, "channel.rician_k_db", "out of range")
    _check(0 <= s.channel.fading_rho < 1, "channel.fading_rho", "must lie in [0, 1)")
    w = s.engine.window_s / s.prs.periodicity_s
    _check(s.engine.window_s > 0 and abs(w - round(w)) < 1e-9, "engine.window_s",
           "must be an integer multiple of prs.periodicity_s")
    _check(s.drops.count >= 1, "drops.count", "must be >= 1")
    _check(s.drops.diameter_km > 0, "drops.diameter_km", "must be positive")
    _check(-90 <= s.drops.center_lat_deg <= 90, "drops.center_lat_deg", "must lie in [-90, 90]")
    try:
        s.prs_template()
    except ValueError as exc:
        raise ConfigError(f"prs: {exc}") from None


def _coerce(section: str, cls, raw: dict) -> Any:
    if not isinstance(raw, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name: f for f in fields(cls)}
    kw = {}
    for key, val in raw.items():
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown key")
        default = known[key].default
        want = type(default)
        if want is bool:
            if not isinstance(val, bool):
                raise ConfigError(f"{section}.{key}: expected a boolean")
        elif want is int:
            if isinstance(val, bool) or not isinstance(val, (int, float)) or float(val) != int(val):
                raise ConfigError(f"{section}.{key}: expected an integer")
            val = int(val)
        elif want is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{section}.{key}: expected a number")
            val = float(val)
        elif want is str and not isinstance(val, str):
            raise ConfigError(f"{section}.{key}: expected a string")
        kw[key] = val
    return cls(**kw)


def scenario_from_dict(data: dict) -> Scenario:
    kw = {}
    for name, raw in data.items():
        if name not in _SECTIONS:
            raise ConfigError(f"[{name}]: unknown section")
        kw[name] = _coerce(name, _SECTIONS[name], raw)
    return Scenario(**kw)


def load_scenario(path: str | Path | None) -> Scenario:
    if path is None:
        return Scenario()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"scenario file is not valid TOML: {exc}") from None
    return scenario_from_dict(data)


def dump_scenario(s: Scenario) -> str:
    """Render as TOML (flat key/value sections only)."""
    lines = []
    for name in _SECTIONS:
        lines.append(f"[{name}]")
        for k, v in asdict(getattr(s, name)).items():
            if isinstance(v, bool):
                lines.append(f"{k} = {'true' if v else 'false'}")
            elif isinstance(v, str):
                lines.append(f'{k} = "{v}"')
            else:
                lines.append(f"{k} = {v!r}")
        lines.append("")
    return "\n".join(lines)
