"""Satellite-to-UE link budget and geometric delay/Doppler profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .constants import C_LIGHT, DEG, K_BOLTZMANN, OMEGA_EARTH
from .constellation import (
    ElementArray,
    OrbitalElements,
    UeLocation,
    VisibilityRecord,
    ecef_to_eci,
    enu_basis,
    look_angles,
)

BeamKind = Literal["service", "positioning"]

# raised-cosine (in dB) main lobe reaches -3 dB at this fraction of its null angle
_HALF_POWER_FRACTION = math.acos(1.0 - 2.0 * 3.0 / 30.0) / math.pi


@dataclass(frozen=True)
class LinkParams:
    carrier_hz: float = 2e9
    eirp_density_dbw_per_mhz: float = 34.0
    bandwidth_hz: float = 1e6
    noise_figure_db: float = 7.0
    antenna_temp_k: float = 290.0
    ue_rx_ports: int = 1
    ue_antenna_gain_dbi: float = 0.0
    atmospheric_loss_db: float = 1.0
    misc_loss_db: float = 0.0

    def __post_init__(self):
        if not self.bandwidth_hz > 0:
            raise ValueError("bandwidth_hz must be positive")
        if self.ue_rx_ports not in (1, 2):
            raise ValueError("ue_rx_ports must be 1 or 2")
        if self.carrier_hz <= 0:
            raise ValueError("carrier_hz must be positive")


@dataclass(frozen=True)
class BeamModel:
    beam_kind: BeamKind
    boresight_dir: np.ndarray
    hpbw_rad: float
    peak_gain_dbi: float
    pattern: str = "raised_cosine_db"
    floor_db: float = -30.0

    def __post_init__(self):
        if self.hpbw_rad <= 0:
            raise ValueError("hpbw_rad must be positive")
        if self.pattern != "raised_cosine_db":
            raise ValueError(f"unknown beam pattern {self.pattern!r}")

    @property
    def null_angle_rad(self) -> float:
        return 0.5 * self.hpbw_rad / _HALF_POWER_FRACTION

    def pointed(self, boresight_dir: np.ndarray) -> "BeamModel":
        d = np.asarray(boresight_dir, dtype=float)
        return BeamModel(
            self.beam_kind, d / np.linalg.norm(d), self.hpbw_rad, self.peak_gain_dbi,
            self.pattern, self.floor_db,
        )


def service_beam_hpbw(altitude_m: float = 600e3, footprint_diameter_m: float = 50e3) -> float:
    """Half-power beamwidth whose nadir footprint has the given diameter."""
    return 2.0 * math.atan(0.5 * footprint_diameter_m / altitude_m)


def service_beam(boresight_dir=(0.0, 0.0, -1.0), altitude_m: float = 600e3) -> BeamModel:
    hpbw = service_beam_hpbw(altitude_m)
    # aperture-efficiency rule of thumb G ~ 32400 / hpbw_deg^2
    peak = 10.0 * math.log10(32400.0 / (hpbw / DEG) ** 2)
    d = np.asarray(boresight_dir, dtype=float)
    return BeamModel("service", d / np.linalg.norm(d), hpbw, peak)


def positioning_beam(boresight_dir=(0.0, 0.0, -1.0), altitude_m: float = 600e3) -> BeamModel:
    """Wide beam: 3x the service beamwidth, peak gain lowered by 9.5 dB."""
    svc = service_beam(boresight_dir, altitude_m)
    return BeamModel("positioning", svc.boresight_dir, 3.0 * svc.hpbw_rad, svc.peak_gain_dbi - 9.5)


@dataclass(frozen=True)
class LinkProfile:
    sat_id: tuple[int, int]
    t_grid_s: np.ndarray
    delay_s: np.ndarray
    doppler_hz: np.ndarray
    snr_db: np.ndarray
    carrier_hz: float = 2e9

    def __post_init__(self):
        n = len(self.t_grid_s)
        if not (len(self.delay_s) == len(self.doppler_hz) == len(self.snr_db) == n):
            raise ValueError("profile series lengths differ")

    def delay_at(self, t: np.ndarray) -> np.ndarray:
        return np.interp(t, self.t_grid_s, self.delay_s)

    def doppler_at(self, t: np.ndarray) -> np.ndarray:
        return np.interp(t, self.t_grid_s, self.doppler_hz)

    def snr_at(self, t: float) -> float:
        return float(np.interp(t, self.t_grid_s, self.snr_db))

    def covers(self, t0: float, t1: float) -> bool:
        return self.t_grid_s[0] <= t0 + 1e-12 and t1 <= self.t_grid_s[-1] + 1e-12

    @classmethod
    def constant(cls, delay_s: float, doppler_hz: float = 0.0, snr_db: float = 0.0,
                 t_span=(0.0, 1.0), sat_id=(0, 0), carrier_hz: float = 2e9) -> "LinkProfile":
        t = np.asarray(t_span, dtype=float)
        return cls(sat_id, t, np.full(2, delay_s), np.full(2, doppler_hz), np.full(2, snr_db), carrier_hz)

    def csv_rows(self):
        for t, d, f, s in zip(self.t_grid_s, self.delay_s, self.doppler_hz, self.snr_db):
            yield (float(t), float(d) * 1e9, float(f), float(s))


def fspl_db(slant_range_m, carrier_hz):
    d = np.asarray(slant_range_m, dtype=float)
    if np.any(d <= 0) or carrier_hz <= 0:
        raise ValueError("range and frequency must be positive")
    out = 20.0 * np.log10(4.0 * math.pi * d * carrier_hz / C_LIGHT)
    return float(out) if out.ndim == 0 else out


def beam_gain_db(beam: BeamModel, direction) -> float:
    """Gain towards ``direction`` (unit vector from the satellite)."""
    d = np.asarray(direction, dtype=float)
    cosang = float(np.clip(d @ beam.boresight_dir / np.linalg.norm(d), -1.0, 1.0))
    return beam_gain_at_offset(beam, math.acos(cosang))


def beam_gain_at_offset(beam: BeamModel, offset_rad: float) -> float:
    x = offset_rad / beam.null_angle_rad
    if x >= 1.0:
        return beam.peak_gain_dbi + beam.floor_db
    atten = beam.floor_db * 0.5 * (1.0 - math.cos(math.pi * x))
    return beam.peak_gain_dbi + atten


def noise_power_dbw(params: LinkParams) -> float:
    return 10.0 * math.log10(
        K_BOLTZMANN * params.antenna_temp_k * params.bandwidth_hz
    ) + params.noise_figure_db


def link_snr_db(params: LinkParams, vis: VisibilityRecord, beam: BeamModel | None = None,
                direction=None) -> float:
    """Per-port in-band SNR.

    The EIRP density is the radiated density at the boresight of whichever
    beam carries the PRS; the beam enters through its gain relative to peak.
    """
    eirp = params.eirp_density_dbw_per_mhz + 10.0 * math.log10(params.bandwidth_hz / 1e6)
    rel_gain = 0.0
    if beam is not None and direction is not None:
        rel_gain = beam_gain_db(beam, direction) - beam.peak_gain_dbi
    rx = (
        eirp + rel_gain + params.ue_antenna_gain_dbi
        - fspl_db(vis.slant_range_m, params.carrier_hz)
        - params.atmospheric_loss_db - params.misc_loss_db
    )
    return rx - noise_power_dbw(params)


def slant_range_for_elevation(elev_rad: float, altitude_m: float = 600e3) -> float:
    from .constants import R_EARTH

    s = R_EARTH * math.sin(elev_rad)
    return math.sqrt(s * s + 2.0 * R_EARTH * altitude_m + altitude_m**2) - s


def light_time(elements: ElementArray, ue_pos_ecef: np.ndarray, t_rx: np.ndarray, iterations: int = 3):
    """Signal flight time to a static ECEF receiver, solved in the inertial frame.

    Returns ``(delay, range_rate)`` with shapes ``(len(t_rx), N)``; the range rate
    is ``c * d(delay)/dt_rx``.
    """
    t_rx = np.atleast_1d(np.asarray(t_rx, dtype=float))
    u_i = ecef_to_eci(np.asarray(ue_pos_ecef, dtype=float), t_rx)  # (T, 1, 3)
    v_u = OMEGA_EARTH * np.stack([-u_i[..., 1], u_i[..., 0], np.zeros_like(u_i[..., 0])], axis=-1)
    pos, _ = elements.eci(t_rx)
    tau = np.linalg.norm(pos - u_i, axis=-1) / C_LIGHT
    for _ in range(iterations):
        pos, _ = elements.eci(t_rx[:, None] - tau, per_sat=True)
        tau = np.linalg.norm(pos - u_i, axis=-1) / C_LIGHT
    pos, vel = elements.eci(t_rx[:, None] - tau, per_sat=True)
    rho = pos - u_i
    rho_hat = rho / np.linalg.norm(rho, axis=-1, keepdims=True)
    num = np.sum(rho_hat * (vel - v_u), axis=-1)
    den = C_LIGHT + np.sum(rho_hat * vel, axis=-1)
    return tau, C_LIGHT * num / den


def make_link_profile(
    elements: OrbitalElements | ElementArray,
    ue: UeLocation,
    params: LinkParams,
    beam: BeamModel | None,
    t_span: tuple[float, float],
    dt: float,
    min_elev_rad: float = 0.0,
    sat_index: int = 0,
    aim_ecef_m: np.ndarray | None = None,
) -> LinkProfile:
    """Sample delay, Doppler and SNR of one satellite-UE link over ``t_span``.

    With ``aim_ecef_m`` the beam boresight tracks that ground point; otherwise
    ``beam.boresight_dir`` is taken as a fixed ECEF direction.
    """
    arr = elements if isinstance(elements, ElementArray) else ElementArray([elements])
    t0, t1 = t_span
    n = max(2, int(math.ceil((t1 - t0) / dt - 1e-9)) + 1)
    t = t0 + dt * np.arange(n)
    tau, rr = light_time(arr, ue.pos_ecef_m, t)
    tau, rr = tau[:, sat_index], rr[:, sat_index]
    pos, _ = arr.ecef(t)
    pos = pos[:, sat_index]
    ue_pos = ue.pos_ecef_m
    el, _, _ = look_angles(pos, ue_pos, enu_basis(ue.lat_rad, ue.lon_rad))
    if not np.any(el >= min_elev_rad):
        raise ValueError(f"satellite {arr.sat_ids[sat_index]} never visible in {t_span}")
    snr = np.empty(n)
    for k in range(n):
        vis = VisibilityRecord(arr.sat_ids[sat_index], float(el[k]), 0.0, C_LIGHT * float(tau[k]), 0.0, False)
        direction = ue_pos - pos[k]
        direction = direction / np.linalg.norm(direction)
        b = beam
        if beam is not None and aim_ecef_m is not None:
            b = beam.pointed(np.asarray(aim_ecef_m) - pos[k])
        snr[k] = link_snr_db(params, vis, b, direction)
    doppler = -params.carrier_hz / C_LIGHT * rr
    return LinkProfile(arr.sat_ids[sat_index], t, tau, doppler, snr, params.carrier_hz)
