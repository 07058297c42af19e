"""Walker-style LEO constellation on circular orbits around a spherical Earth.

Positions are produced in an Earth-centred inertial frame (ECI) that coincides
with the Earth-fixed frame (ECEF) at ``t = 0``; ECEF follows from a rotation by
``OMEGA_EARTH * t`` about the z axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .constants import DEG, MU_EARTH, OMEGA_EARTH, R_EARTH

SatId = tuple[int, int]


@dataclass(frozen=True)
class ConstellationSpec:
    altitude_m: float = 600e3
    inclination_rad: float = 70.0 * DEG
    num_planes: int = 30
    sats_per_plane: int = 28
    raan_spacing_rad: float | None = None
    phase_offset_rad: float | None = None

    def __post_init__(self):
        if self.num_planes < 1 or self.sats_per_plane < 1:
            raise ValueError("num_planes and sats_per_plane must be >= 1")
        if not 0.0 < self.inclination_rad <= math.pi:
            raise ValueError("inclination_rad must lie in (0, pi]")
        if self.altitude_m <= 0:
            raise ValueError("altitude_m must be positive")

    @property
    def semi_major_axis_m(self) -> float:
        return R_EARTH + self.altitude_m

    @property
    def raan_step(self) -> float:
        if self.raan_spacing_rad is not None:
            return self.raan_spacing_rad
        return 2.0 * math.pi / self.num_planes

    @property
    def phase_step(self) -> float:
        # Walker-delta phasing: one in-plane slot spread across all planes.
        if self.phase_offset_rad is not None:
            return self.phase_offset_rad
        return (2.0 * math.pi / self.sats_per_plane) / self.num_planes

    @property
    def mean_motion(self) -> float:
        return math.sqrt(MU_EARTH / self.semi_major_axis_m**3)

    @property
    def period_s(self) -> float:
        return 2.0 * math.pi / self.mean_motion

    @property
    def size(self) -> int:
        return self.num_planes * self.sats_per_plane


@dataclass(frozen=True)
class OrbitalElements:
    """Circular-orbit elements; ``arg_latitude_rad`` is the anomaly at ``t = 0``."""

    sat_id: SatId
    semi_major_axis_m: float
    inclination_rad: float
    raan_rad: float
    arg_latitude_rad: float

    @property
    def mean_motion(self) -> float:
        return math.sqrt(MU_EARTH / self.semi_major_axis_m**3)

    @property
    def period_s(self) -> float:
        return 2.0 * math.pi / self.mean_motion


@dataclass(frozen=True)
class SatelliteState:
    sat_id: SatId
    pos_ecef_m: np.ndarray
    vel_ecef_mps: np.ndarray
    epoch_s: float
    pos_eci_m: np.ndarray = field(repr=False, default=None)
    vel_eci_mps: np.ndarray = field(repr=False, default=None)


@dataclass(frozen=True)
class UeLocation:
    lat_rad: float
    lon_rad: float
    alt_m: float = 0.0

    @property
    def pos_ecef_m(self) -> np.ndarray:
        return geodetic_to_ecef(self.lat_rad, self.lon_rad, self.alt_m)

    @classmethod
    def from_ecef(cls, pos: np.ndarray) -> "UeLocation":
        lat, lon, alt = ecef_to_geodetic(pos)
        return cls(lat, lon, alt)

    @classmethod
    def from_degrees(cls, lat_deg: float, lon_deg: float, alt_m: float = 0.0) -> "UeLocation":
        return cls(lat_deg * DEG, lon_deg * DEG, alt_m)


@dataclass(frozen=True)
class VisibilityRecord:
    sat_id: SatId
    elevation_rad: float
    azimuth_rad: float
    slant_range_m: float
    range_rate_mps: float
    ascending: bool


def geodetic_to_ecef(lat_rad: float, lon_rad: float, alt_m: float = 0.0) -> np.ndarray:
    r = R_EARTH + alt_m
    cl = math.cos(lat_rad)
    return np.array([r * cl * math.cos(lon_rad), r * cl * math.sin(lon_rad), r * math.sin(lat_rad)])


def ecef_to_geodetic(pos: np.ndarray) -> tuple[float, float, float]:
    x, y, z = (float(v) for v in pos)
    r = math.sqrt(x * x + y * y + z * z)
    return math.asin(z / r), math.atan2(y, x), r - R_EARTH


def enu_basis(lat_rad: float, lon_rad: float) -> np.ndarray:
    """Rows are the local east, north and up unit vectors in ECEF."""
    sl, cl = math.sin(lat_rad), math.cos(lat_rad)
    so, co = math.sin(lon_rad), math.cos(lon_rad)
    return np.array(
        [
            [-so, co, 0.0],
            [-sl * co, -sl * so, cl],
            [cl * co, cl * so, sl],
        ]
    )


def rot_z(angle: float | np.ndarray) -> np.ndarray:
    """Active rotation matrix about z; vectorised over ``angle``."""
    c, s = np.cos(angle), np.sin(angle)
    z, o = np.zeros_like(c), np.ones_like(c)
    return np.moveaxis(np.array([[c, -s, z], [s, c, z], [z, z, o]]), (0, 1), (-2, -1))


def build_constellation(spec: ConstellationSpec) -> list[OrbitalElements]:
    a = spec.semi_major_axis_m
    in_plane = 2.0 * math.pi / spec.sats_per_plane
    elements = []
    for p in range(spec.num_planes):
        raan = (p * spec.raan_step) % (2.0 * math.pi)
        for s in range(spec.sats_per_plane):
            u0 = (s * in_plane + p * spec.phase_step) % (2.0 * math.pi)
            elements.append(OrbitalElements((p, s), a, spec.inclination_rad, raan, u0))
    return elements


class ElementArray:
    """Column-wise view of a list of elements for vectorised propagation."""

    def __init__(self, elements: Sequence[OrbitalElements]):
        if not elements:
            raise ValueError("empty element list")
        self.elements = list(elements)
        self.sat_ids = [e.sat_id for e in elements]
        self.a = np.array([e.semi_major_axis_m for e in elements])
        self.inc = np.array([e.inclination_rad for e in elements])
        self.raan = np.array([e.raan_rad for e in elements])
        self.u0 = np.array([e.arg_latitude_rad for e in elements])
        self.n = np.sqrt(MU_EARTH / self.a**3)

    def __len__(self) -> int:
        return len(self.elements)

    def eci(self, t: float | np.ndarray, per_sat: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Inertial position/velocity, shape ``(..., N, 3)`` broadcasting ``t``.

        With ``per_sat`` the last axis of ``t`` (length N) gives one epoch per satellite.
        """
        t = np.asarray(t, dtype=float)
        if not per_sat:
            t = t[..., None]
        u = self.u0 + self.n * t
        cu, su = np.cos(u), np.sin(u)
        co, so = np.cos(self.raan), np.sin(self.raan)
        ci, si = np.cos(self.inc), np.sin(self.inc)
        pos = self.a[..., None] * np.stack(
            [co * cu - so * su * ci, so * cu + co * su * ci, su * si], axis=-1
        )
        speed = (self.a * self.n)[..., None]
        vel = speed * np.stack(
            [-co * su - so * cu * ci, -so * su + co * cu * ci, cu * si], axis=-1
        )
        return pos, vel

    def ecef(self, t: float | np.ndarray, per_sat: bool = False) -> tuple[np.ndarray, np.ndarray]:
        pos_i, vel_i = self.eci(t, per_sat)
        return eci_to_ecef(pos_i, vel_i, t, per_sat)


def eci_to_ecef(pos_i, vel_i, t, per_sat: bool = False):
    """``t`` broadcasts over the leading axes, or matches them exactly with ``per_sat``."""
    t = np.asarray(t, dtype=float)
    theta = OMEGA_EARTH * t
    c, s = np.cos(theta), np.sin(theta)
    if not per_sat:
        c, s = c[..., None], s[..., None]
    # r_ecef = Rz(-theta) r_eci
    px, py, pz = pos_i[..., 0], pos_i[..., 1], pos_i[..., 2]
    pos = np.stack([c * px + s * py, -s * px + c * py, pz], axis=-1)
    # v_ecef = Rz(-theta) (v_eci - w x r_eci)
    vx = vel_i[..., 0] + OMEGA_EARTH * py
    vy = vel_i[..., 1] - OMEGA_EARTH * px
    vel = np.stack([c * vx + s * vy, -s * vx + c * vy, vel_i[..., 2]], axis=-1)
    return pos, vel


def ecef_to_eci(pos_e, t):
    t = np.asarray(t, dtype=float)
    theta = OMEGA_EARTH * t
    c, s = np.cos(theta)[..., None], np.sin(theta)[..., None]
    px, py, pz = pos_e[..., 0], pos_e[..., 1], pos_e[..., 2]
    pz = np.broadcast_to(pz, np.broadcast_shapes(pz.shape, c.shape))
    return np.stack([c * px - s * py, s * px + c * py, pz], axis=-1)


def propagate(elements: OrbitalElements, t: float) -> SatelliteState:
    if t < 0:
        raise ValueError("t must be non-negative")
    arr = ElementArray([elements])
    pos_i, vel_i = arr.eci(t)
    pos_e, vel_e = eci_to_ecef(pos_i, vel_i, t)
    return SatelliteState(
        sat_id=elements.sat_id,
        pos_ecef_m=pos_e[0],
        vel_ecef_mps=vel_e[0],
        epoch_s=float(t),
        pos_eci_m=pos_i[0],
        vel_eci_mps=vel_i[0],
    )


def look_angles(sat_pos: np.ndarray, ue_pos: np.ndarray, basis: np.ndarray):
    """Elevation, azimuth and slant range for ECEF satellite positions ``(..., 3)``."""
    los = sat_pos - ue_pos
    rng = np.linalg.norm(los, axis=-1)
    enu = los @ basis.T
    el = np.arcsin(np.clip(enu[..., 2] / rng, -1.0, 1.0))
    az = np.mod(np.arctan2(enu[..., 0], enu[..., 1]), 2.0 * math.pi)
    return el, az, rng


def visibility(state: SatelliteState, ue: UeLocation, min_elev_rad: float) -> VisibilityRecord | None:
    ue_pos = ue.pos_ecef_m
    basis = enu_basis(ue.lat_rad, ue.lon_rad)
    el, az, rng = look_angles(state.pos_ecef_m, ue_pos, basis)
    if el < min_elev_rad:
        return None
    los_unit = (state.pos_ecef_m - ue_pos) / rng
    rr = float(los_unit @ state.vel_ecef_mps)
    return VisibilityRecord(
        sat_id=state.sat_id,
        elevation_rad=float(el),
        azimuth_rad=float(az),
        slant_range_m=float(rng),
        range_rate_mps=rr,
        ascending=bool(state.vel_ecef_mps[2] > 0),
    )


def visible_set(
    elements: ElementArray, t: float, ue: UeLocation, min_elev_rad: float
) -> list[VisibilityRecord]:
    """All satellites above ``min_elev_rad``, sorted by decreasing elevation."""
    pos, vel = elements.ecef(t)
    ue_pos = ue.pos_ecef_m
    el, az, rng = look_angles(pos, ue_pos, enu_basis(ue.lat_rad, ue.lon_rad))
    idx = np.flatnonzero(el >= min_elev_rad)
    out = []
    for i in idx:
        u = (pos[i] - ue_pos) / rng[i]
        out.append(
            VisibilityRecord(
                sat_id=elements.sat_ids[i],
                elevation_rad=float(el[i]),
                azimuth_rad=float(az[i]),
                slant_range_m=float(rng[i]),
                range_rate_mps=float(u @ vel[i]),
                ascending=bool(vel[i, 2] > 0),
            )
        )
    out.sort(key=lambda r: (-r.elevation_rad, r.sat_id))
    return out


def elevation_table(elements: ElementArray, ue: UeLocation, epochs: np.ndarray) -> np.ndarray:
    """Elevation of every satellite at every epoch, shape ``(len(epochs), N)``."""
    pos, _ = elements.ecef(np.asarray(epochs, dtype=float))
    el, _, _ = look_angles(pos, ue.pos_ecef_m, enu_basis(ue.lat_rad, ue.lon_rad))
    return el


@dataclass(frozen=True)
class CountCdf:
    threshold_deg: float
    counts: np.ndarray
    cdf: np.ndarray

    def rows(self) -> list[tuple[float, int, float]]:
        return [(self.threshold_deg, int(k), float(p)) for k, p in zip(self.counts, self.cdf)]


def visible_counts(
    spec: ConstellationSpec,
    ue_drops: Iterable[UeLocation],
    min_elev_rad: float,
    epochs: np.ndarray,
) -> np.ndarray:
    """Visible-satellite counts for every (drop, epoch) pair, flattened."""
    elements = ElementArray(build_constellation(spec))
    out = [
        np.sum(elevation_table(elements, ue, epochs) >= min_elev_rad, axis=1) for ue in ue_drops
    ]
    return np.concatenate(out)


def visible_count_cdf(
    spec: ConstellationSpec,
    ue_drops: Sequence[UeLocation],
    min_elev_list: Sequence[float],
    epochs: np.ndarray,
) -> list[CountCdf]:
    epochs = np.atleast_1d(np.asarray(epochs, dtype=float))
    if len(ue_drops) == 0 or epochs.size == 0:
        raise ValueError("visible_count_cdf needs at least one UE drop and one epoch")
    elements = ElementArray(build_constellation(spec))
    tables = [elevation_table(elements, ue, epochs) for ue in ue_drops]
    result = []
    for thr in min_elev_list:
        counts = np.concatenate([np.sum(el >= thr, axis=1) for el in tables])
        values = np.arange(0, counts.max() + 1)
        cdf = np.array([np.mean(counts <= v) for v in values])
        result.append(CountCdf(thr / DEG, values, cdf))
    return result


def sample_epochs(spec: ConstellationSpec, step_s: float = 10.0, span_s: float | None = None) -> np.ndarray:
    span = spec.period_s if span_s is None else span_s
    return np.arange(0.0, span, step_s)
