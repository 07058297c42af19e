"""Monte-Carlo orchestration over UE drops, noise and fading realisations.

Every random quantity is drawn from a stream keyed by
``(master_seed, trial, kind, ...)``, so results do not depend on the worker
count or on which other metrics are requested, and runs that differ only in
port count or bandwidth share their drops and fading draws.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from ..channel import (RxStream, SatLink, apply_doppler, apply_time_varying_delay, rician_gains,
                       stream_seed)
from ..constants import DEG, R_EARTH
from ..constellation import (ConstellationSpec, ElementArray, OrbitalElements, UeLocation, build_constellation,
                             elevation_table, enu_basis, visible_count_cdf, visible_set)
from ..linkbudget import LinkProfile, make_link_profile, positioning_beam
from ..posengine import SingularGeometryError, TdoaSet, form_tdoa, positioning_latency, solve_wnls
from ..prs import NavMessage, PrsConfig, prs_waveform, schedule_prs
from ..receiver import Correlator, Measurement, PrsReceiver, calibrate_thresholds, first_detection_latency
from .results import ResultTable
from .scenario import Scenario

KIND_DROP, KIND_FADING, KIND_NOISE, KIND_PD, KIND_GEOM = 1, 2, 3, 4, 5
PROFILE_DT_S = 0.005
MIN_PAIRS = 2
COMBINE_DEFAULT = (1, 3, 10)


class World:
    """The constellation, built once per process."""

    def __init__(self, spec: ConstellationSpec):
        self.spec = spec
        self.elements: list[OrbitalElements] = build_constellation(spec)
        self.array = ElementArray(self.elements)
        self.by_id = {e.sat_id: e for e in self.elements}


@lru_cache(maxsize=4)
def world_for(spec: ConstellationSpec) -> World:
    return World(spec)


@dataclass(frozen=True)
class Drop:
    trial: int
    ue: UeLocation
    epoch_s: float


def offset_location(center: UeLocation, east_m: float, north_m: float) -> UeLocation:
    """Ground point at a local east/north offset (spherical earth, small offsets)."""
    lat = center.lat_rad + north_m / R_EARTH
    lon = center.lon_rad + east_m / (R_EARTH * math.cos(center.lat_rad))
    return UeLocation(lat, lon, 0.0)


def draw_drop(scn: Scenario, trial: int) -> Drop:
    rng = stream_seed(scn.sim.master_seed, trial, KIND_DROP)
    r = 0.5 * scn.drops.diameter_km * 1e3 * math.sqrt(rng.random())
    az = 2.0 * math.pi * rng.random()
    ue = offset_location(scn.center, r * math.sin(az), r * math.cos(az))
    epoch = float(rng.random() * scn.constellation_spec().period_s)
    return Drop(trial, ue, epoch)


def drop_nav(scn: Scenario, world: World, epoch_s: float, template: PrsConfig) -> NavMessage | None:
    """Schedule the best satellites seen from the coverage centre; ``None`` when none are visible."""
    vis = visible_set(world.array, epoch_s, scn.center, scn.schedule.min_elevation_deg * DEG)
    if not vis:
        return None
    lim = scn.schedule.window_limit_ms * 1e-3 or None
    sched = schedule_prs(vis, template, scn.schedule.max_sats, scn.schedule.guard_slots, lim, epoch_s)
    return NavMessage.from_schedule(sched, world.elements, epoch_s, scn.center)


def fading_gains(scn: Scenario, trial: int, sat_index: int, n_ports: int, n_occasions: int) -> np.ndarray:
    """Per-port streams, so the first port is identical whatever the port count."""
    if not scn.channel.fading:
        return np.ones((n_occasions, n_ports), dtype=complex)
    cols = [rician_gains(stream_seed(scn.sim.master_seed, trial, KIND_FADING, sat_index, p), 1,
                         scn.channel.rician_k_db, n_occasions, scn.channel.fading_rho)[:, 0]
            for p in range(n_ports)]
    return np.stack(cols, axis=1)


def build_links(scn: Scenario, world: World, drop: Drop, nav: NavMessage, n_occasions: int,
                snr_offset_db: float = 0.0) -> list[SatLink]:
    params = scn.link_params()
    beam = positioning_beam(altitude_m=scn.constellation.altitude_km * 1e3)
    aim = scn.center.pos_ecef_m
    period = nav.schedule.periodicity_s
    t_span = (drop.epoch_s - 0.01, drop.epoch_s + (n_occasions + 1) * period + 0.02)
    links = []
    for i, entry in enumerate(nav.schedule.entries):
        prof = make_link_profile(world.by_id[entry.sat_id], drop.ue, params, beam, t_span, PROFILE_DT_S,
                                 aim_ecef_m=aim)
        gains = fading_gains(scn, drop.trial, i, scn.link.ue_rx_ports, n_occasions)
        sid = entry.sat_id
        links.append(SatLink(i, entry.prs, prof, gains, lambda k, sid=sid: nav.schedule.tx_time(sid, k),
                             snr_offset_db))
    return links


def true_toa(link: SatLink, occasion: int) -> float:
    """Receive time of the PRS centre: solves ``t = t_emit + delay(t)``."""
    t_emit = link.tx_time(occasion) + 0.5 * link.prs.duration_s
    t = t_emit + float(link.profile.delay_at(t_emit))
    for _ in range(4):
        t = t_emit + float(link.profile.delay_at(t))
    return t


class ReceiverContext:
    """Search grid, calibrated thresholds and a correlator cache for one PRS shape."""

    def __init__(self, scn: Scenario):
        self.template = scn.prs_template()
        self.grid = scn.search_grid()
        self.cfg = scn.detection()
        self.rx_rate = self.template.rx_sample_rate_hz
        self.carrier_hz = scn.link.carrier_hz
        self.reference = Correlator(self.template, self.rx_rate, self.grid)
        self.thresholds = calibrate_thresholds(self.reference, scn.receiver.pfa, scn.receiver.calibration_trials,
                                               scn.receiver.calibration_seed)
        self.correlators: dict = {}

    def receiver(self, nav: NavMessage) -> PrsReceiver:
        return PrsReceiver(nav, self.grid, self.cfg, self.rx_rate, self.thresholds, self.carrier_hz,
                           self.correlators)


_CONTEXTS: dict[str, ReceiverContext] = {}


def context_for(scn: Scenario) -> ReceiverContext:
    # one context per PRS shape and receiver section; port count does not matter
    key = repr((scn.prs_template(), scn.receiver, scn.link.ue_rx_ports, scn.link.carrier_hz))
    ctx = _CONTEXTS.get(key)
    if ctx is None:
        if len(_CONTEXTS) >= 4:
            _CONTEXTS.pop(next(iter(_CONTEXTS)))
        ctx = ReceiverContext(scn)
        _CONTEXTS[key] = ctx
    return ctx


@dataclass
class DropResult:
    trial: int
    ue: UeLocation
    epoch_s: float
    sat_ids: list = field(default_factory=list)
    elevations_deg: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # per occasion, one Measurement per scheduled satellite
    toa_err_ns: list = field(default_factory=list)  # first occasion, inf when missed
    toa_latency_s: list = field(default_factory=list)
    pos_latency_s: float = math.inf
    pos_err_m: dict = field(default_factory=dict)  # occasions combined -> horizontal error
    estimates: list = field(default_factory=list)  # (k, time_s, err_2d, err_3d, dop, n_pairs, converged)

    period_s: float = 0.04

    @property
    def first_attempt(self) -> bool:
        """Enough TDOA pairs came from the first occasion alone."""
        return self.pos_latency_s < self.period_s


def solve_combined(sets: Sequence[TdoaSet | None], scn: Scenario, truth: np.ndarray):
    sets = [s for s in sets if s is not None]
    n = sum(len(s) for s in sets)
    if n < MIN_PAIRS:
        return None
    try:
        return solve_wnls(sets, surface_constraint=scn.engine.surface_constraint,
                          init_ecef_m=scn.center.pos_ecef_m)
    except (SingularGeometryError, ValueError, np.linalg.LinAlgError):
        return None


def run_drop(scn: Scenario, trial: int, n_occasions: int | None = None,
             combine: Sequence[int] = COMBINE_DEFAULT) -> DropResult:
    world = world_for(scn.constellation_spec())
    ctx = context_for(scn)
    drop = draw_drop(scn, trial)
    res = DropResult(trial, drop.ue, drop.epoch_s, period_s=scn.prs.periodicity_s)
    n_occ = scn.n_occasions if n_occasions is None else n_occasions
    window_s = scn.engine.window_s
    nav = drop_nav(scn, world, drop.epoch_s, ctx.template)
    if nav is None:
        res.pos_latency_s = window_s
        res.pos_err_m = {k: math.inf for k in combine}
        return res
    links = build_links(scn, world, drop, nav, n_occ)
    seed = int(stream_seed(scn.sim.master_seed, trial, KIND_NOISE).integers(2**62))
    stream = RxStream(links, ctx.rx_rate, scn.link.ue_rx_ports, seed, scn.link.carrier_hz)
    rx = ctx.receiver(nav)
    rows = rx.measure_occasions(stream, n_occ)
    res.rows = rows
    res.sat_ids = list(nav.schedule.sat_ids)
    ue_pos = drop.ue.pos_ecef_m
    for link in links:
        t = true_toa(link, 0)
        pos, _ = ElementArray([world.by_id[link.profile.sat_id]]).ecef(t)
        e = enu_basis(drop.ue.lat_rad, drop.ue.lon_rad) @ (pos[0] - ue_pos)
        res.elevations_deg.append(math.degrees(math.atan2(e[2], math.hypot(e[0], e[1]))))
    for link, m in zip(links, rows[0]):
        res.toa_err_ns.append(abs(m.toa_s - true_toa(link, 0)) * 1e9 if m.detected else math.inf)
    for sid in res.sat_ids:
        res.toa_latency_s.append(first_detection_latency(rows, sid, window_s))
    res.pos_latency_s = positioning_latency(rows, nav, MIN_PAIRS, window_s)
    sets = [form_tdoa(row, nav) for row in rows]
    for k in combine:
        est = solve_combined(sets[:k], scn, ue_pos) if k <= len(sets) else None
        if est is None:
            res.pos_err_m[k] = math.inf
            continue
        err2 = est.horizontal_error_m(ue_pos)
        err3 = float(np.linalg.norm(est.pos_ecef_m - ue_pos))
        res.pos_err_m[k] = err2
        t_fix = max(m.latency_s for row in rows[:k] for m in row if m.detected)
        res.estimates.append((k, t_fix, err2, err3, est.dop, est.n_measurements_used, est.converged))
    return res


def _run_one(args):
    scn, trial, n_occ, combine = args
    return run_drop(scn, trial, n_occ, combine)


def run_drops(scn: Scenario, drops: int | None = None, workers: int = 1, n_occasions: int | None = None,
              combine: Sequence[int] = COMBINE_DEFAULT,
              progress: Callable[[int, int], None] | None = None) -> list[DropResult]:
    """Simulate drops ``0 .. drops-1``; output order follows the trial index."""
    n = scn.drops.count if drops is None else drops
    if n < 1:
        raise ValueError("drops must be >= 1")
    jobs = [(scn, t, n_occasions, tuple(combine)) for t in range(n)]
    out = []
    if workers <= 1:
        for i, j in enumerate(jobs):
            out.append(_run_one(j))
            if progress:
                progress(i + 1, n)
        return out
    context_for(scn)  # calibrate once in the parent so workers hit the threshold cache
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for i, r in enumerate(pool.map(_run_one, jobs, chunksize=max(1, n // (4 * workers)))):
            out.append(r)
            if progress:
                progress(i + 1, n)
    return out


def _meta(scn: Scenario, **extra) -> dict:
    m = {"scenario": scn.digest(), "bandwidth_hz": scn.link.bandwidth_hz, "ports": scn.link.ue_rx_ports,
         "n_symbols": scn.prs.n_symbols, "seed": scn.sim.master_seed}
    m.update(extra)
    return m


def tables_from_drops(scn: Scenario, results: Sequence[DropResult], metrics: Iterable[str],
                      combine: Sequence[int] = COMBINE_DEFAULT) -> list[ResultTable]:
    tables = []
    window_ms = scn.engine.window_s * 1e3
    for metric in metrics:
        if metric == "toa_error":
            vals = [v for r in results for v in r.toa_err_ns]
            tables.append(ResultTable.from_samples("toa_error", vals, "all", _meta(scn)))
        elif metric == "toa_latency":
            vals = [v * 1e3 for r in results for v in r.toa_latency_s]
            vals = [math.inf if v >= window_ms - 1e-9 else v for v in vals]
            tables.append(ResultTable.from_samples("toa_latency", vals, "per_sat", _meta(scn), window_ms))
        elif metric == "pos_latency":
            vals = [r.pos_latency_s * 1e3 for r in results]
            vals = [math.inf if v >= window_ms - 1e-9 else v for v in vals]
            tables.append(ResultTable.from_samples("pos_latency", vals, "fix", _meta(scn), window_ms))
        elif metric == "pos_error":
            for k in combine:
                vals = [r.pos_err_m.get(k, math.inf) for r in results]
                tables.append(ResultTable.from_samples("pos_error", vals, f"occasions={k}", _meta(scn, occasions=k)))
        else:
            raise ValueError(f"metric {metric!r} is not produced by drop simulation")
    return tables


def occasions_needed(metrics: Iterable[str], scn: Scenario, combine: Sequence[int]) -> int:
    metrics = set(metrics)
    if metrics & {"toa_latency", "pos_latency"}:
        return scn.n_occasions
    if "pos_error" in metrics:
        return min(scn.n_occasions, max(combine))
    return 1


def visibility_tables(scn: Scenario, thresholds_deg: Sequence[float] = (15.0, 30.0), n_epochs: int = 200,
                      drops: int | None = None) -> list[ResultTable]:
    """Visible-count CDFs over drops and epochs spread across one orbital period."""
    spec = scn.constellation_spec()
    n = min(scn.drops.count if drops is None else drops, 20)
    ues = [draw_drop(scn, t).ue for t in range(n)]
    rng = stream_seed(scn.sim.master_seed, 0, KIND_GEOM)
    epochs = np.sort(rng.random(n_epochs)) * spec.period_s
    out = []
    for c in visible_count_cdf(spec, ues, [t * DEG for t in thresholds_deg], epochs):
        out.append(ResultTable("visible_count", c.counts.astype(float), c.cdf, f"min_elev={c.threshold_deg:g}",
                               _meta(scn, min_elev_deg=c.threshold_deg)))
    return out


def run_scenario(scn: Scenario, metrics: Sequence[str], drops: int | None = None, workers: int = 1,
                 combine: Sequence[int] = COMBINE_DEFAULT) -> list[ResultTable]:
    """All requested metric tables for one scenario."""
    tables = []
    drop_metrics = [m for m in metrics if m in ("toa_error", "toa_latency", "pos_error", "pos_latency")]
    for m in metrics:
        if m not in ("toa_error", "toa_latency", "pos_error", "pos_latency", "visible_count", "pd_vs_snr"):
            raise ValueError(f"unknown metric {m!r}")
    if "visible_count" in metrics:
        tables += visibility_tables(scn, drops=drops)
    if "pd_vs_snr" in metrics:
        tables += pd_tables(scn, default_snr_grid(scn), n_trials=100)
    if drop_metrics:
        results = run_drops(scn, drops, workers, occasions_needed(drop_metrics, scn, combine), combine)
        tables += tables_from_drops(scn, results, drop_metrics, combine)
    return tables


# detection probability versus SNR

def default_snr_grid(scn: Scenario) -> np.ndarray:
    return np.arange(-16.0, 4.01, 1.0) if scn.link.bandwidth_hz < 2e6 else np.arange(-22.0, -1.99, 1.0)


def _signal_segment(prs: PrsConfig, rx_rate: float, seg_len: int, start: float, fd: float, phase: float,
                    carrier_hz: float) -> np.ndarray:
    """Unit in-band SNR (0 dB against unit-PSD noise) PRS starting ``start`` samples into the segment."""
    tx = prs_waveform(prs, 0.0)
    prof = LinkProfile.constant(start / rx_rate, fd, 0.0, (-1.0, 1.0), carrier_hz=carrier_hz)
    buf = apply_time_varying_delay(tx, prof, rx_rate, (0, seg_len))
    buf = apply_doppler(buf, prof, phase)
    amp = math.sqrt(prs.n_subcarriers * prs.scs_hz / rx_rate)
    return buf.samples * amp


def pd_curves(scn: Scenario, snr_db: Sequence[float], n_trials: int = 100, seed: int | None = None,
              modes: Sequence[str] = ("single", "noncoherent", "coherent")) -> dict[str, np.ndarray]:
    """Pd per combining mode over an AWGN SNR grid (in-band, per port).

    Each trial fixes one random delay/Doppler and one noise draw per port,
    then reuses them at every SNR: correlation is linear, so the grid at
    amplitude ``a`` is ``a * C_signal + C_noise``. Both ports see the same
    signal phase, which is the aligned case for coherent combining. A trial
    counts as a detection when the statistic crosses the threshold inside the
    main lobe of the ambiguity function around the truth: one resolution cell
    ``fs / B`` in lag and ``1 / T`` in Doppler.
    """
    ctx = context_for(scn)
    corr = ctx.reference
    seed = scn.sim.master_seed if seed is None else seed
    snr_db = np.asarray(snr_db, dtype=float)
    amps = np.sqrt(10.0 ** (snr_db / 10.0)).astype(np.float32)
    d = corr.decim
    step = ctx.grid.doppler_step_hz
    f_lim = max(0.0, min(abs(ctx.grid.doppler_min_hz), abs(ctx.grid.doppler_max_hz)) - step)
    lag_tol = max(d + 1.0, corr.rx_rate / (corr.prs.n_subcarriers * corr.prs.scs_hz))
    f_tol = max(1.5 * step, corr.rx_rate / corr.lp)
    hits = {m: np.zeros(snr_db.size) for m in modes}
    gam = {m: ctx.thresholds[m] for m in modes}
    for t in range(n_trials):
        rng = stream_seed(seed, t, KIND_PD)
        start = rng.uniform(d + 2, corr.n_lags - d - 3)
        fd = rng.uniform(-f_lim, f_lim)
        sig = _signal_segment(corr.prs, corr.rx_rate, corr.seg_len, start, fd, rng.uniform(0, 2 * math.pi),
                              ctx.carrier_hz)
        cs = corr.coarse(sig)
        cn = [corr.coarse(rng.standard_normal(2 * corr.seg_len, dtype=np.float32).view(np.complex64)
                          * np.float32(math.sqrt(0.5))) for _ in range(2)]
        for j, a in enumerate(amps):
            g0 = a * cs + cn[0]
            p0 = g0.real**2 + g0.imag**2
            stats = {}
            if "single" in modes:
                stats["single"] = p0
            if "noncoherent" in modes or "coherent" in modes:
                g1 = a * cs + cn[1]
                if "noncoherent" in modes:
                    stats["noncoherent"] = p0 + (g1.real**2 + g1.imag**2)
                if "coherent" in modes:
                    s = g0 + g1
                    stats["coherent"] = s.real**2 + s.imag**2
            for m, st in stats.items():
                k = int(np.argmax(st))
                if st.flat[k] <= gam[m]:
                    continue
                di, mi = divmod(k, st.shape[1])
                if abs(mi * d - start) <= lag_tol and abs(corr.dopplers[di] - fd) <= f_tol:
                    hits[m][j] += 1
    return {m: h / n_trials for m, h in hits.items()}


def pd_tables(scn: Scenario, snr_db: Sequence[float], n_trials: int = 100, seed: int | None = None,
              modes: Sequence[str] | None = None) -> list[ResultTable]:
    if modes is None:
        modes = ("single",) if scn.link.ue_rx_ports == 1 else ("single", "noncoherent", "coherent")
    curves = pd_curves(scn, snr_db, n_trials, seed, modes)
    bw = scn.link.bandwidth_hz / 1e6
    return [ResultTable("pd_vs_snr", np.asarray(snr_db, float), pd, f"{bw:g}MHz/{m}",
                        _meta(scn, mode=m, trials=n_trials)) for m, pd in curves.items()]


def snr_at_pd(snr_db: Sequence[float], pd: Sequence[float], target: float = 0.9) -> float:
    """SNR where the (monotonised) curve first reaches ``target``, by linear interpolation."""
    x = np.asarray(snr_db, dtype=float)
    y = np.maximum.accumulate(np.asarray(pd, dtype=float))
    i = int(np.searchsorted(y, target))
    if i >= y.size:
        return math.inf
    if i == 0:
        return float(x[0]) if y[0] >= target else math.nan
    x0, x1, y0, y1 = x[i - 1], x[i], y[i - 1], y[i]
    return float(x0 + (target - y0) * (x1 - x0) / (y1 - y0)) if y1 > y0 else float(x1)


# TOA error at fixed elevations

def find_geometries(scn: Scenario, elevation_deg: float, tol_deg: float = 1.0,
                    step_s: float = 5.0) -> list[tuple[float, tuple[int, int]]]:
    """(epoch, satellite) pairs seen from the centre within ``tol_deg`` of an elevation."""
    world = world_for(scn.constellation_spec())
    epochs = np.arange(0.0, scn.constellation_spec().period_s, step_s)
    el = elevation_table(world.array, scn.center, epochs) / DEG
    ti, si = np.nonzero(np.abs(el - elevation_deg) <= tol_deg)
    return [(float(epochs[a]), world.elements[b].sat_id) for a, b in zip(ti, si)]


def toa_error_samples(scn: Scenario, elevation_deg: float, n_trials: int, tol_deg: float = 1.0,
                      trial_offset: int = 0) -> np.ndarray:
    """Blind first-occasion TOA errors (ns, inf when missed) for one satellite near ``elevation_deg``."""
    world = world_for(scn.constellation_spec())
    ctx = context_for(scn)
    cands = find_geometries(scn, elevation_deg, tol_deg)
    if not cands:
        raise ValueError(f"no satellite passes within {tol_deg} deg of {elevation_deg} deg")
    out = np.empty(n_trials)
    for j in range(n_trials):
        trial = trial_offset + j
        rng = stream_seed(scn.sim.master_seed, trial, KIND_GEOM, int(round(elevation_deg * 100)))
        epoch, sid = cands[int(rng.integers(len(cands)))]
        base = draw_drop(scn, trial)
        drop = Drop(trial, base.ue, epoch)
        vis = [v for v in visible_set(world.array, epoch, scn.center, 0.0) if v.sat_id == sid]
        sched = schedule_prs(vis, ctx.template, 1, 0, None, epoch)
        nav = NavMessage.from_schedule(sched, world.elements, epoch, scn.center)
        links = build_links(scn, world, drop, nav, 1)
        seed = int(stream_seed(scn.sim.master_seed, trial, KIND_NOISE, 7).integers(2**62))
        stream = RxStream(links, ctx.rx_rate, scn.link.ue_rx_ports, seed, scn.link.carrier_hz)
        m: Measurement = ctx.receiver(nav).acquire_sat(stream, sid, 0)
        out[j] = abs(m.toa_s - true_toa(links[0], 0)) * 1e9 if m.detected else math.inf
    return out


def toa_tables(scn: Scenario, elevations_deg: Sequence[float] = (47.0, 26.0), n_trials: int = 200) -> list[ResultTable]:
    return [ResultTable.from_samples("toa_error", toa_error_samples(scn, e, n_trials), f"elev={e:g}",
                                     _meta(scn, elevation_deg=e)) for e in elevations_deg]
