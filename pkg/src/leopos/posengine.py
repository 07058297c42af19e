"""TDOA formation and weighted nonlinear least-squares positioning."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constants import C_LIGHT, OMEGA_EARTH, R_EARTH
from .constellation import ElementArray, SatId, UeLocation, enu_basis
from .prs import NavMessage
from .receiver import Measurement


class SingularGeometryError(ValueError):
    """The normal equations are rank deficient for this satellite geometry."""


@dataclass(frozen=True)
class TdoaPair:
    sat_id: SatId
    tdoa_s: float
    weight: float
    sat_pos_ecef_m: np.ndarray


@dataclass(frozen=True)
class TdoaSet:
    occasion_index: int
    ref_sat_id: SatId
    ref_pos_ecef_m: np.ndarray
    pairs: tuple[TdoaPair, ...]
    time_s: float = 0.0

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("a TDOA set needs at least one pair")
        for p in self.pairs:
            if not p.weight > 0:
                raise ValueError("pair weights must be positive")
            if p.sat_id == self.ref_sat_id:
                raise ValueError("reference satellite paired with itself")

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class PositionEstimate:
    pos_ecef_m: np.ndarray
    covariance: np.ndarray
    residual_rms_m: float
    dop: float
    n_measurements_used: int
    converged: bool
    iterations: int = 0
    surface: bool = True

    @property
    def location(self) -> UeLocation:
        return UeLocation.from_ecef(self.pos_ecef_m)

    @property
    def lat_rad(self) -> float:
        return self.location.lat_rad

    @property
    def lon_rad(self) -> float:
        return self.location.lon_rad

    @property
    def alt_m(self) -> float:
        return self.location.alt_m

    def horizontal_error_m(self, truth_ecef: np.ndarray) -> float:
        loc = UeLocation.from_ecef(truth_ecef)
        d = enu_basis(loc.lat_rad, loc.lon_rad) @ (self.pos_ecef_m - truth_ecef)
        return float(math.hypot(d[0], d[1]))


def emission_time(nav: NavMessage, sat_id: SatId, occasion: int) -> float:
    """Emission instant of the PRS centre, known from the broadcast schedule."""
    prs = nav.prs[sat_id]
    return nav.schedule.tx_time(sat_id, occasion) + 0.5 * prs.duration_s


def form_tdoa(measurements: Sequence[Measurement], nav: NavMessage) -> TdoaSet | None:
    """Pair every detection against the strongest one; ``None`` with fewer than two."""
    det = [m for m in measurements if m.detected]
    if len(det) < 2:
        return None
    occ = det[0].occasion_index
    if any(m.occasion_index != occ for m in det):
        raise ValueError("measurements span several occasions")
    ref = max(det, key=lambda m: (m.snr_est_db if m.snr_est_db is not None else -math.inf))
    ids = [m.sat_id for m in det]
    t_emit = {sid: emission_time(nav, sid, occ) for sid in ids}
    arr = ElementArray([nav.ephemeris[sid] for sid in ids])
    pos, _ = arr.ecef(np.array([t_emit[sid] for sid in ids]), per_sat=True)
    pos_by = {sid: pos[i] for i, sid in enumerate(ids)}
    ref_var = (ref.toa_std_s or 1e-8) ** 2
    pairs = []
    for m in det:
        if m.sat_id == ref.sat_id:
            continue
        tdoa = (m.toa_s - ref.toa_s) - (t_emit[m.sat_id] - t_emit[ref.sat_id])
        var = (m.toa_std_s or 1e-8) ** 2 + ref_var
        pairs.append(TdoaPair(m.sat_id, tdoa, 1.0 / (C_LIGHT**2 * var), pos_by[m.sat_id]))
    return TdoaSet(occ, ref.sat_id, pos_by[ref.sat_id], tuple(pairs), ref.toa_s)


def _sagnac(sat: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Express emission-time ECEF positions in the frame of the reception instant."""
    tau = np.linalg.norm(sat - p, axis=-1) / C_LIGHT
    th = OMEGA_EARTH * tau
    c, s = np.cos(th), np.sin(th)
    x, y = sat[..., 0], sat[..., 1]
    return np.stack([c * x + s * y, -s * x + c * y, sat[..., 2]], axis=-1)


def _stack(sets: Sequence[TdoaSet]):
    sat, ref, z, w = [], [], [], []
    for s in sets:
        for p in s.pairs:
            sat.append(p.sat_pos_ecef_m)
            ref.append(s.ref_pos_ecef_m)
            z.append(C_LIGHT * p.tdoa_s)
            w.append(p.weight)
    return np.array(sat), np.array(ref), np.array(z), np.array(w)


def _model(sat, ref, p, earth_rotation: bool):
    if earth_rotation:
        sat, ref = _sagnac(sat, p), _sagnac(ref, p)
    ds, dr = p - sat, p - ref
    rs = np.linalg.norm(ds, axis=1)
    rr = np.linalg.norm(dr, axis=1)
    h = rs - rr
    jac = ds / rs[:, None] - dr / rr[:, None]
    return h, jac


def _tangent(p: np.ndarray) -> np.ndarray:
    """Rows: local east and north unit vectors at ``p``."""
    loc = UeLocation.from_ecef(p)
    return enu_basis(loc.lat_rad, loc.lon_rad)[:2]


def _checked_inverse(a: np.ndarray) -> np.ndarray:
    s = np.linalg.svd(a, compute_uv=False)
    if s[-1] <= 1e-12 * s[0] or not np.all(np.isfinite(s)):
        raise SingularGeometryError("rank-deficient geometry")
    return np.linalg.inv(a)


def solve_wnls(
    sets: Sequence[TdoaSet],
    prior: PositionEstimate | None = None,
    surface_constraint: bool = True,
    init_ecef_m: np.ndarray | None = None,
    surface_radius_m: float = R_EARTH,
    earth_rotation: bool = True,
    max_iter: int = 25,
    tol_m: float = 1e-4,
) -> PositionEstimate:
    """Gauss-Newton on range-difference residuals with an optional prior pseudo-measurement."""
    sets = [s for s in sets if s is not None and len(s) > 0]
    n = sum(len(s) for s in sets)
    need = 2 if surface_constraint else 3
    if n + (need if prior is not None else 0) < need:
        raise ValueError(f"need at least {need} TDOA pairs, got {n}")
    sat, ref, z, w = _stack(sets) if sets else (np.zeros((0, 3)),) * 2 + (np.zeros(0),) * 2
    if init_ecef_m is None:
        if prior is not None:
            init_ecef_m = prior.pos_ecef_m
        else:
            r = sets[0].ref_pos_ecef_m
            init_ecef_m = r / np.linalg.norm(r) * surface_radius_m
    p = np.array(init_ecef_m, dtype=float)
    if surface_constraint:
        p = p / np.linalg.norm(p) * surface_radius_m
    prior_info = None
    if prior is not None:
        cov = np.asarray(prior.covariance, dtype=float)
        prior_info = _checked_inverse(cov)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        h, jac = _model(sat, ref, p, earth_rotation) if n else (np.zeros(0), np.zeros((0, 3)))
        r = z - h
        basis = _tangent(p) if surface_constraint else np.eye(3)
        a = jac @ basis.T
        normal = a.T @ (w[:, None] * a)
        rhs = a.T @ (w * r)
        if prior_info is not None:
            pb = _tangent(prior.pos_ecef_m) if prior.surface and prior_info.shape[0] == 2 else np.eye(3)
            m = basis @ pb.T  # maps local step into the prior's coordinates
            info = m @ prior_info @ m.T
            dp = pb @ (prior.pos_ecef_m - p)
            normal = normal + info
            rhs = rhs + m @ prior_info @ dp
        step = _checked_inverse(normal) @ rhs
        p = p + basis.T @ step
        if surface_constraint:
            p = p / np.linalg.norm(p) * surface_radius_m
        if float(np.linalg.norm(step)) < tol_m:
            converged = True
            break
    h, jac = _model(sat, ref, p, earth_rotation) if n else (np.zeros(0), np.zeros((0, 3)))
    basis = _tangent(p) if surface_constraint else np.eye(3)
    a = jac @ basis.T
    normal = a.T @ (w[:, None] * a)
    if prior_info is not None:
        pb = _tangent(prior.pos_ecef_m) if prior.surface and prior_info.shape[0] == 2 else np.eye(3)
        m = basis @ pb.T
        normal = normal + m @ prior_info @ m.T
    cov = _checked_inverse(normal)
    cov = 0.5 * (cov + cov.T)
    res = z - h
    rms = float(np.sqrt(np.mean(res**2))) if n else 0.0
    try:
        dop = float(math.sqrt(np.trace(_checked_inverse(a.T @ a)))) if n >= a.shape[1] else math.inf
    except SingularGeometryError:
        dop = math.inf
    return PositionEstimate(p, cov, rms, dop, n, converged, it, surface_constraint)


def gdop(sat_positions: np.ndarray, ref_index: int, ue_ecef_m: np.ndarray, surface: bool = True,
         weights: np.ndarray | None = None) -> float:
    """Dilution of precision of the TDOA geometry (reference differenced)."""
    sats = np.asarray(sat_positions, dtype=float)
    if sats.shape[0] < 3:
        raise ValueError("need at least two TDOA pairs")
    others = np.delete(sats, ref_index, axis=0)
    ref = np.broadcast_to(sats[ref_index], others.shape)
    _, jac = _model(others, ref, np.asarray(ue_ecef_m, dtype=float), earth_rotation=False)
    basis = _tangent(ue_ecef_m) if surface else np.eye(3)
    a = jac @ basis.T
    w = np.ones(a.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    return float(math.sqrt(np.trace(_checked_inverse(a.T @ (w[:, None] * a)))))


@dataclass
class CombiningWindow:
    window_s: float = 0.400
    periodicity_s: float = 0.040
    prior: PositionEstimate | None = None
    surface_constraint: bool = True
    init_ecef_m: np.ndarray | None = None
    occasions: deque = field(default_factory=deque)
    estimate: PositionEstimate | None = None

    def __post_init__(self):
        k = self.window_s / self.periodicity_s
        if self.window_s <= 0 or abs(k - round(k)) > 1e-9:
            raise ValueError("window_s must be a positive integer multiple of the PRS periodicity")

    @property
    def n_occasions(self) -> int:
        return int(round(self.window_s / self.periodicity_s))

    @property
    def n_pairs(self) -> int:
        return sum(len(s) for s in self.occasions)


def combine_window(window: CombiningWindow, new_set: TdoaSet | None,
                   occasion_index: int | None = None) -> PositionEstimate | None:
    """Slide the window to the new occasion and re-solve with every retained set."""
    if new_set is not None and len(new_set) > 0:
        window.occasions.append(new_set)
        occasion_index = new_set.occasion_index if occasion_index is None else occasion_index
    if occasion_index is not None:
        while window.occasions and window.occasions[0].occasion_index <= occasion_index - window.n_occasions:
            window.occasions.popleft()
    if new_set is None or len(new_set) == 0:
        return window.estimate
    need = 2 if window.surface_constraint else 3
    if window.n_pairs < need and window.prior is None:
        return window.estimate
    init = window.estimate.pos_ecef_m if window.estimate is not None else window.init_ecef_m
    window.estimate = solve_wnls(list(window.occasions), window.prior, window.surface_constraint, init)
    return window.estimate


def positioning_latency(per_occasion: Sequence[Sequence[Measurement]], nav: NavMessage, min_pairs: int = 2,
                        search_window_s: float = 0.400) -> float:
    """Time until enough TDOA pairs have accumulated for a first fix."""
    period = nav.schedule.periodicity_s
    total = 0
    for k, row in enumerate(per_occasion):
        if (k + 1) * period > search_window_s + 1e-12:
            break
        s = form_tdoa(row, nav)
        total += 0 if s is None else len(s)
        if total >= min_pairs:
            return max(m.latency_s for m in row if m.detected)
    return search_window_s
