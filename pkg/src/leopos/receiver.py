"""Blind PRS acquisition, multi-port combining and fine tracking.

The coarse search correlates a segment of received samples against
Doppler-rotated replicas in the frequency domain. Only the bins spanned by
the PRS band plus the Doppler range are multiplied, and the product is folded
onto a shorter inverse DFT, which samples the correlation every ``decimation``
lags without aliasing. Refinement and tracking use direct time-domain
correlation on a small lag/Doppler neighbourhood.

Statistics are normalised so that, with unit-PSD noise, each single-port cell
is exponentially distributed with unit mean.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Literal, Protocol, Sequence

import numpy as np
import scipy.fft as sfft
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .channel import interpolate_at
from .constellation import ElementArray, SatId
from .constants import C_LIGHT
from .linkbudget import light_time
from .prs import BasebandBuffer, NavMessage, PrsConfig, prs_waveform

Combining = Literal["noncoherent", "coherent"]


@dataclass(frozen=True)
class SearchGrid:
    doppler_min_hz: float = -45e3
    doppler_max_hz: float = 45e3
    doppler_step_hz: float = 500.0
    # half-width of the delay search around the predicted arrival; None searches the whole window
    delay_span_s: float | None = 100e-6
    full_window_s: float = 8e-3
    fine_doppler_step_hz: float = 50.0
    fine_doppler_span_hz: float = 250.0
    track_doppler_span_hz: float = 250.0
    track_lag_bins: int = 2
    fine_delay_oversample: int = 16
    decimation: int = 4
    band_guard_subcarriers: int = 8

    def __post_init__(self):
        if self.doppler_step_hz <= 0 or self.fine_doppler_step_hz <= 0:
            raise ValueError("Doppler steps must be positive")
        if self.doppler_max_hz < self.doppler_min_hz:
            raise ValueError("empty Doppler span")
        if self.delay_span_s is not None and self.delay_span_s <= 0:
            raise ValueError("delay_span_s must be positive")
        if self.decimation < 1 or self.fine_delay_oversample < 1 or self.track_lag_bins < 1:
            raise ValueError("decimation, oversample and track_lag_bins must be >= 1")

    @property
    def doppler_hypotheses_hz(self) -> np.ndarray:
        n = int(math.floor((self.doppler_max_hz - self.doppler_min_hz) / self.doppler_step_hz + 1e-9)) + 1
        return self.doppler_min_hz + self.doppler_step_hz * np.arange(n)

    def n_lags(self, rx_rate: float) -> int:
        span = self.full_window_s / 2 if self.delay_span_s is None else self.delay_span_s
        return 2 * int(round(span * rx_rate)) + 1


@dataclass(frozen=True)
class DetectionConfig:
    pfa: float = 1e-3
    threshold_gamma: float | None = None
    combining: Combining = "noncoherent"
    n_ports: int = 1

    def __post_init__(self):
        if not 0 < self.pfa <= 1:
            raise ValueError("pfa must lie in (0, 1]")
        if self.threshold_gamma is not None and self.threshold_gamma <= 0:
            raise ValueError("threshold must be positive")
        if self.combining not in ("noncoherent", "coherent"):
            raise ValueError(f"unknown combining {self.combining!r}")
        if self.n_ports not in (1, 2):
            raise ValueError("n_ports must be 1 or 2")

    @property
    def mode(self) -> str:
        if self.n_ports == 1:
            return "single"
        return self.combining


@dataclass(frozen=True)
class Measurement:
    """One satellite's result for one occasion.

    ``toa_s`` is the receive time of the PRS centre, the instant a correlator
    actually resolves when the delay drifts across the burst.
    """

    sat_id: SatId
    occasion_index: int
    detected: bool
    latency_s: float
    toa_s: float | None = None
    doppler_hz: float | None = None
    snr_est_db: float | None = None
    toa_std_s: float | None = None
    peak: float = 0.0
    tracked: bool = False

    def __post_init__(self):
        if not self.detected and (self.toa_s is not None or self.doppler_hz is not None):
            raise ValueError("undetected measurement cannot carry TOA or Doppler")


class SampleSource(Protocol):
    n_ports: int
    rx_rate: float

    def segment(self, m0: int, n: int, occasion: int, tag: int = 0) -> list[BasebandBuffer]: ...


class BufferSource:
    """Wrap already-received per-port buffers as a segment source."""

    def __init__(self, ports: Sequence[BasebandBuffer]):
        if not ports:
            raise ValueError("no receive ports")
        self.ports = list(ports)
        self.n_ports = len(ports)
        self.rx_rate = ports[0].sample_rate_hz
        self.m_start = int(round(ports[0].epoch_s * self.rx_rate))
        for p in ports:
            if p.sample_rate_hz != self.rx_rate or int(round(p.epoch_s * self.rx_rate)) != self.m_start:
                raise ValueError("ports must share rate and epoch")

    def segment(self, m0: int, n: int, occasion: int = 0, tag: int = 0) -> list[BasebandBuffer]:
        lo = m0 - self.m_start
        if lo < 0 or lo + n > len(self.ports[0]):
            raise ValueError("requested samples fall outside the received buffers (schedule mismatch)")
        return [BasebandBuffer(p.samples[lo : lo + n], self.rx_rate, m0 / self.rx_rate) for p in self.ports]


def rx_replica(prs: PrsConfig, rx_rate: float, delay_samples: float = 0.0) -> np.ndarray:
    """Transmit PRS resampled onto the receive grid, delayed by ``delay_samples``."""
    tx = prs_waveform(prs)
    ratio = prs.tx_sample_rate_hz / rx_rate
    n = int(math.floor((len(tx) - 1) / ratio)) + 1
    pos = (np.arange(n) - delay_samples) * ratio
    return interpolate_at(tx.samples, pos, prs.tx_sample_rate_hz, rx_rate)


def correlate_direct(seg: np.ndarray, replica: np.ndarray, lags: np.ndarray, dopplers: np.ndarray,
                     rx_rate: float) -> np.ndarray:
    """Time-domain correlation ``sum_n seg[lag+n] conj(replica[n]) exp(-j 2 pi f n / fs)``.

    Returns shape ``(len(dopplers), len(lags))``.
    """
    lp = replica.size
    win = sliding_window_view(np.asarray(seg), lp)[np.asarray(lags)]
    n = np.arange(lp)
    b = np.conj(replica)[None, :] * np.exp(-2j * math.pi * np.asarray(dopplers)[:, None] * n / rx_rate)
    return b @ win.T


def combine_ports(stats_per_port: Sequence[np.ndarray], combining: Combining = "noncoherent") -> np.ndarray:
    """Non-coherent: sum of ``|c|^2``; coherent: ``|sum c|^2``."""
    if not stats_per_port:
        raise ValueError("no port statistics")
    shape = np.shape(stats_per_port[0])
    if any(np.shape(s) != shape for s in stats_per_port):
        raise ValueError("port statistics have different shapes")
    if combining == "noncoherent":
        out = np.zeros(shape)
        for s in stats_per_port:
            out = out + (s.real**2 + s.imag**2)
        return out
    if combining == "coherent":
        tot = np.sum(np.stack(stats_per_port), axis=0)
        return tot.real**2 + tot.imag**2
    raise ValueError(f"unknown combining {combining!r}")


def parabolic_offset(ym: float, y0: float, yp: float) -> float:
    den = ym - 2.0 * y0 + yp
    if den >= 0.0:
        return 0.0
    return float(np.clip(0.5 * (ym - yp) / den, -0.5, 0.5))


class Correlator:
    """Coarse delay/Doppler correlator for one PRS configuration."""

    def __init__(self, prs: PrsConfig, rx_rate: float, grid: SearchGrid, n_lags: int | None = None,
                 exact: bool = False, dtype=np.complex64):
        self.prs = prs
        self.rx_rate = rx_rate
        self.grid = grid
        self.exact = exact
        self.dtype = dtype
        self.replica = rx_replica(prs, rx_rate)
        self.lp = self.replica.size
        self.energy = float(np.sum(np.abs(self.replica) ** 2))
        self.dopplers = grid.doppler_hypotheses_hz
        self.n_lags = grid.n_lags(rx_rate) if n_lags is None else int(n_lags)
        d = grid.decimation
        self.decim = d
        self.n_coarse = (self.n_lags - 1) // d + 1
        self.seg_len = (self.n_coarse - 1) * d + self.lp
        m = sfft.next_fast_len(-(-self.seg_len // d))
        self.fft_len = m * d
        self.m = m
        freqs = np.fft.fftfreq(self.fft_len, 1.0 / rx_rate)
        if exact:
            self.bins = np.arange(self.fft_len)
        else:
            edge = (prs.n_subcarriers / 2 + grid.band_guard_subcarriers) * prs.scs_hz
            edge += max(abs(self.dopplers[0]), abs(self.dopplers[-1]))
            self.bins = np.flatnonzero(np.abs(freqs) <= edge)
        self.dest = self.bins % m
        if not exact and np.unique(self.dest).size != self.dest.size:
            raise ValueError("decimation too large for the PRS band")
        n = np.arange(self.lp)
        spec = np.empty((self.dopplers.size, self.bins.size), dtype=dtype)
        norm = np.empty(self.dopplers.size)
        for lo in range(0, self.dopplers.size, 32):
            f = self.dopplers[lo : lo + 32, None]
            rf = (self.replica[None, :] * np.exp(2j * math.pi * f * n / rx_rate)).astype(dtype)
            full = sfft.fft(rf, self.fft_len, axis=1)[:, self.bins]
            norm[lo : lo + 32] = np.sqrt(np.sum(np.abs(full.astype(np.complex128)) ** 2, axis=1) / self.fft_len)
            spec[lo : lo + 32] = np.conj(full)
        self.spec = spec
        self.norm = norm
        # RMS bandwidth of the replica, for TOA variance
        rspec = np.abs(np.fft.fft(self.replica, self.fft_len)) ** 2
        self.rms_bw_hz = math.sqrt(float(np.sum(freqs**2 * rspec) / np.sum(rspec)))

    @property
    def n_cells(self) -> int:
        return self.dopplers.size * self.n_coarse

    def coarse(self, seg: np.ndarray) -> np.ndarray:
        """Complex correlation grid ``(n_doppler, n_coarse)`` at lags ``0, D, 2D, ...``."""
        seg = np.asarray(seg)
        if seg.size != self.seg_len:
            raise ValueError(f"segment length {seg.size} != {self.seg_len}")
        y = sfft.fft(seg.astype(self.dtype, copy=False), self.fft_len)
        if self.exact:
            prod = kernels.mul_fold(y.astype(np.complex128), self.spec.astype(np.complex128), self.decim)
        else:
            prod = np.zeros((self.dopplers.size, self.m), dtype=self.dtype)
            prod[:, self.dest] = self.spec * y[self.bins]
        c = sfft.ifft(prod, axis=1)[:, : self.n_coarse]
        return c * (self.m / self.fft_len / self.norm[:, None]).astype(np.float32 if self.dtype == np.complex64 else float)

    def direct(self, seg: np.ndarray, lags, dopplers, replica: np.ndarray | None = None) -> np.ndarray:
        r = self.replica if replica is None else replica
        return correlate_direct(seg, r, lags, dopplers, self.rx_rate) / math.sqrt(self.energy)

    def fractional_replicas(self) -> tuple[np.ndarray, np.ndarray]:
        """Replicas delayed by ``k / oversample`` samples for ``k`` in ``[-os, os]``."""
        cache = getattr(self, "_frac", None)
        if cache is None:
            os_ = self.grid.fine_delay_oversample
            shifts = np.arange(-os_, os_ + 1) / os_
            # band-limited fractional delays as phase ramps; zero padding keeps the wrap out of the window
            nfft = sfft.next_fast_len(2 * self.lp)
            f = np.fft.fftfreq(nfft)
            spec = sfft.fft(self.replica, nfft)
            reps = sfft.ifft(spec[None, :] * np.exp(-2j * math.pi * f[None, :] * shifts[:, None]), axis=1)
            cache = (shifts, reps[:, : self.lp])
            self._frac = cache
        return cache


def threshold_from_maxima(maxima: np.ndarray, pfa: float) -> float:
    """Smallest gamma with empirical P(max > gamma) <= pfa."""
    m = np.sort(np.asarray(maxima, dtype=float))
    n = m.size
    if not 0 < pfa <= 1:
        raise ValueError("pfa must lie in (0, 1]")
    if n < int(math.ceil(10.0 / pfa - 1e-9)):
        raise ValueError(f"need at least {math.ceil(10 / pfa)} noise trials, got {n}")
    k = int(math.floor(n * pfa + 1e-9))
    if k >= n:
        return 0.0
    return float(m[n - k - 1])


def _noise(rng: np.random.Generator, n: int, psd: float = 1.0) -> np.ndarray:
    z = rng.standard_normal(2 * n, dtype=np.float32).view(np.complex64)
    return z * np.float32(math.sqrt(psd / 2.0))


def noise_maxima(corr: Correlator, n_trials: int, seed: int = 0, n_ports: int = 2) -> dict[str, np.ndarray]:
    """Maxima of the single-port, non-coherent and coherent statistics over noise-only grids."""
    out = {"single": np.empty(n_trials)}
    if n_ports == 2:
        out["noncoherent"] = np.empty(n_trials)
        out["coherent"] = np.empty(n_trials)
    for t in range(n_trials):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(t,)))
        grids = [corr.coarse(_noise(rng, corr.seg_len)) for _ in range(n_ports)]
        p0 = grids[0].real**2 + grids[0].imag**2
        out["single"][t] = p0.max()
        if n_ports == 2:
            p1 = grids[1].real**2 + grids[1].imag**2
            out["noncoherent"][t] = (p0 + p1).max()
            s = grids[0] + grids[1]
            out["coherent"][t] = (s.real**2 + s.imag**2).max()
    return out


def default_cache_dir() -> Path:
    return Path(os.environ.get("LEOPOS_CACHE_DIR", Path.home() / ".cache" / "leopos"))


def _corr_key(corr: Correlator, n_trials: int, seed: int, pfa: float) -> str:
    desc = {
        "v": 1, "bw": corr.prs.bandwidth_hz, "nsc": corr.prs.n_subcarriers, "nsym": corr.prs.n_symbols,
        "scs": corr.prs.scs_hz, "tx": corr.prs.tx_sample_rate_hz, "rx": corr.rx_rate,
        "grid": asdict(corr.grid), "n_lags": corr.n_lags, "exact": corr.exact,
        "trials": n_trials, "seed": seed, "pfa": pfa,
    }
    return hashlib.sha1(json.dumps(desc, sort_keys=True).encode()).hexdigest()[:16]


def calibrate_thresholds(corr: Correlator, pfa: float = 1e-3, n_trials: int | None = None, seed: int = 12345,
                         cache_dir: Path | None = None) -> dict[str, float]:
    """Thresholds for every combining mode from one shared set of noise trials.

    Results are cached on disk keyed by the correlator shape, trial count and seed.
    """
    n_trials = int(math.ceil(10.0 / pfa)) if n_trials is None else n_trials
    key = _corr_key(corr, n_trials, seed, pfa)
    cache_dir = default_cache_dir() if cache_dir is None else Path(cache_dir)
    path = cache_dir / f"thr_{key}.json"
    if path.exists():
        return json.loads(path.read_text())["gamma"]
    maxima = noise_maxima(corr, n_trials, seed)
    gamma = {k: threshold_from_maxima(v, pfa) for k, v in maxima.items()}
    cache_dir.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"gamma": gamma, "n_trials": n_trials, "seed": seed, "pfa": pfa}))
    return gamma


def calibrate_threshold(corr: Correlator, cfg: DetectionConfig, n_trials: int, seed: int = 0) -> float:
    """Empirical threshold for ``cfg``'s combining mode."""
    if n_trials < int(math.ceil(10.0 / cfg.pfa - 1e-9)):
        raise ValueError(f"need at least {math.ceil(10 / cfg.pfa)} noise trials")
    maxima = noise_maxima(corr, n_trials, seed, n_ports=cfg.n_ports)
    return threshold_from_maxima(maxima[cfg.mode], cfg.pfa)


def predict_arrival(nav: NavMessage, sat_id: SatId, occasion: int, carrier_hz: float = 2e9) -> tuple[float, float]:
    """Arrival time and Doppler of the PRS start at the coverage-area centre."""
    if nav.coverage_center is None:
        raise ValueError("navigation message carries no coverage centre")
    tx = nav.schedule.tx_time(sat_id, occasion)
    arr = ElementArray([nav.ephemeris[sat_id]])
    pos = nav.coverage_center.pos_ecef_m
    t = tx
    for _ in range(4):
        tau, rr = light_time(arr, pos, np.array([t]))
        t = tx + float(tau[0, 0])
    return t, -carrier_hz / C_LIGHT * float(rr[0, 0])


class PrsReceiver:
    """Per-UE receiver: one correlator per scheduled satellite, shared thresholds."""

    def __init__(self, nav: NavMessage, grid: SearchGrid, cfg: DetectionConfig, rx_rate: float,
                 thresholds: dict[str, float] | None = None, carrier_hz: float = 2e9,
                 correlators: dict | None = None,
                 predictor: Callable[[SatId, int], tuple[float, float]] | None = None):
        self.nav = nav
        self.grid = grid
        self.cfg = cfg
        self.rx_rate = rx_rate
        self.carrier_hz = carrier_hz
        self.thresholds = thresholds or {}
        self._corr = correlators if correlators is not None else {}
        self.sat_index = {sid: i for i, sid in enumerate(nav.schedule.sat_ids)}
        self.predictor = predictor or (lambda sid, k: predict_arrival(nav, sid, k, carrier_hz))

    @property
    def gamma(self) -> float:
        if self.cfg.threshold_gamma is not None:
            return self.cfg.threshold_gamma
        try:
            return self.thresholds[self.cfg.mode]
        except KeyError:
            raise ValueError(f"no calibrated threshold for mode {self.cfg.mode!r}") from None

    def correlator(self, sat_id: SatId) -> Correlator:
        prs = self.nav.prs[sat_id]
        c = self._corr.get(prs)
        if c is None:
            if len(self._corr) >= 8:
                self._corr.pop(next(iter(self._corr)))
            c = Correlator(prs, self.rx_rate, self.grid)
            self._corr[prs] = c
        return c

    def _stat(self, grids: Sequence[np.ndarray]) -> np.ndarray:
        if self.cfg.n_ports == 1:
            g = grids[0]
            return g.real**2 + g.imag**2
        return combine_ports(grids[: self.cfg.n_ports], self.cfg.combining)

    def _snr_and_std(self, corr: Correlator, peak: float, floor: float) -> tuple[float, float]:
        n = self.cfg.n_ports
        per_port_floor = max(floor / n, 1e-12)
        rho = max(peak - floor, 1e-9) / per_port_floor  # post-correlation SNR of the combined peak
        if self.cfg.combining == "coherent" and n > 1:
            rho /= n
        occ_bw = corr.prs.n_subcarriers * corr.prs.scs_hz
        snr_in = rho / n / (corr.lp * occ_bw / self.rx_rate)
        std = 1.0 / (2.0 * math.pi * corr.rms_bw_hz * math.sqrt(2.0 * rho))
        return 10.0 * math.log10(max(snr_in, 1e-12)), std

    def _latency(self, toa: float, corr: Correlator) -> float:
        # the burst is fully received half a PRS after its centre
        return toa + 0.5 * corr.prs.duration_s - self.nav.schedule.window_start_s

    def _missed(self, sat_id: SatId, occasion: int) -> Measurement:
        return Measurement(sat_id, occasion, False, (occasion + 1) * self.nav.schedule.periodicity_s)

    def acquire_sat(self, source: SampleSource, sat_id: SatId, occasion: int = 0) -> Measurement:
        corr = self.correlator(sat_id)
        d = corr.decim
        pad = d + 2
        t_pred, _ = self.predictor(sat_id, occasion)
        half = (corr.n_lags - 1) // 2
        m_first = int(round(t_pred * self.rx_rate)) - half
        seg_ports = source.segment(m_first - pad, corr.seg_len + 2 * pad, occasion, tag=self.sat_index[sat_id])
        if len(seg_ports) < self.cfg.n_ports:
            raise ValueError("source provides fewer ports than configured")
        segs = [p.samples for p in seg_ports[: self.cfg.n_ports]]
        grids = [corr.coarse(s[pad : pad + corr.seg_len]) for s in segs]
        stat = self._stat(grids)
        di, mi = np.unravel_index(int(np.argmax(stat)), stat.shape)
        peak = float(stat[di, mi])
        if peak <= self.gamma:
            return self._missed(sat_id, occasion)
        floor = float(stat.mean())
        g = self.grid
        f0 = corr.dopplers[di]
        offsets = np.arange(-g.fine_doppler_span_hz, g.fine_doppler_span_hz + 1e-9, g.fine_doppler_step_hz)
        lags = pad + mi * d + np.arange(-d - 1, d + 2)
        # the coarse Doppler peak is broad, so recentre while the fine maximum sits on the span edge
        for _ in range(4):
            fine_f = f0 + offsets
            fine = self._stat([corr.direct(s, lags, fine_f) for s in segs])
            fi, li = np.unravel_index(int(np.argmax(fine)), fine.shape)
            if 0 < fi < fine_f.size - 1:
                break
            f0 = fine_f[fi]
        dl = parabolic_offset(*fine[fi, li - 1 : li + 2]) if 0 < li < lags.size - 1 else 0.0
        df = parabolic_offset(*fine[fi - 1 : fi + 2, li]) if 0 < fi < fine_f.size - 1 else 0.0
        lag = lags[li] - pad + dl
        toa = (m_first + lag) / self.rx_rate + 0.5 * corr.prs.duration_s
        fd = float(fine_f[fi] + df * g.fine_doppler_step_hz)
        snr_db, std = self._snr_and_std(corr, peak, floor)
        return Measurement(sat_id, occasion, True, self._latency(toa, corr), toa, fd, snr_db, std, peak)

    def acquire(self, source: SampleSource, occasion: int = 0) -> list[Measurement]:
        return [self.acquire_sat(source, sid, occasion) for sid in self.nav.schedule.sat_ids]

    def track_sat(self, source: SampleSource, prev: Measurement, occasion: int) -> Measurement:
        """Refine around a prior detection; lost lock returns ``detected=False``."""
        if not prev.detected:
            raise ValueError("tracking needs a prior detection")
        corr = self.correlator(prev.sat_id)
        g = self.grid
        period = self.nav.schedule.periodicity_s
        steps = occasion - prev.occasion_index
        # delay drifts at -fd/fc seconds per second
        t_pred = prev.toa_s - 0.5 * corr.prs.duration_s + steps * period * (1.0 - prev.doppler_hz / self.carrier_hz)
        span = g.track_lag_bins * corr.decim
        os_ = g.fine_delay_oversample
        m_pred = int(round(t_pred * self.rx_rate))
        m0 = m_pred - span - 2
        n = 2 * span + 5 + corr.lp
        ports = source.segment(m0, n, occasion, tag=1000 + self.sat_index[prev.sat_id])
        segs = [p.samples[: n] for p in ports[: self.cfg.n_ports]]
        lags = np.arange(0, 2 * span + 5)
        freqs = prev.doppler_hz + np.arange(-g.track_doppler_span_hz, g.track_doppler_span_hz + 1e-9,
                                            g.fine_doppler_step_hz)
        stat = self._stat([corr.direct(s, lags, freqs) for s in segs])
        inner = stat[:, 2:-2]
        fi, li = np.unravel_index(int(np.argmax(inner)), inner.shape)
        li += 2
        peak = float(stat[fi, li])
        if peak <= self.gamma:
            return self._missed(prev.sat_id, occasion)
        floor_ref = float(self.cfg.n_ports)  # expected noise mean of the combined statistic
        df = parabolic_offset(*stat[fi - 1 : fi + 2, li]) if 0 < fi < freqs.size - 1 else 0.0
        fd = float(freqs[fi] + df * g.fine_doppler_step_hz)
        # 1/os sample refinement with pre-delayed replicas
        shifts, reps = corr.fractional_replicas()
        frac = []
        for s in segs:
            w = s[lags[li] : lags[li] + corr.lp]
            b = np.conj(reps) * np.exp(-2j * math.pi * fd * np.arange(corr.lp) / self.rx_rate)[None, :]
            frac.append((b @ w) / math.sqrt(corr.energy))
        fs_ = self._stat([f[None, :] for f in frac])[0]
        k = int(np.argmax(fs_))
        dk = parabolic_offset(*fs_[k - 1 : k + 2]) if 0 < k < fs_.size - 1 else 0.0
        # a replica delayed by s matches a signal starting s samples later
        lag = lags[li] + shifts[k] + dk / os_
        toa = (m0 + lag) / self.rx_rate + 0.5 * corr.prs.duration_s
        snr_db, std = self._snr_and_std(corr, peak, floor_ref)
        return Measurement(prev.sat_id, occasion, True, self._latency(toa, corr), toa, fd, snr_db, std, peak,
                           tracked=True)

    def complexity_ratio(self, sat_id: SatId) -> float:
        """Acquisition cells per tracking cell."""
        corr = self.correlator(sat_id)
        g = self.grid
        n_f = int(round(2 * g.track_doppler_span_hz / g.fine_doppler_step_hz)) + 1
        n_l = 2 * g.track_lag_bins * corr.decim + 1
        return corr.n_cells / (n_f * n_l)

    def multi_occasion_search(self, source: SampleSource, search_window_s: float = 0.4) -> list[Measurement]:
        """First detection per satellite within the search window."""
        n_occ = int(round(search_window_s / self.nav.schedule.periodicity_s))
        out = []
        for sid in self.nav.schedule.sat_ids:
            m = None
            for k in range(n_occ):
                m = self.acquire_sat(source, sid, k)
                if m.detected:
                    break
            if m is None or not m.detected:
                m = Measurement(sid, n_occ - 1, False, search_window_s)
            out.append(m)
        return out

    def measure_occasions(self, source: SampleSource, n_occasions: int) -> list[list[Measurement]]:
        """Per-occasion measurements: acquire until detected, then track, re-acquiring on lost lock."""
        last: dict[SatId, Measurement | None] = {sid: None for sid in self.nav.schedule.sat_ids}
        out = []
        for k in range(n_occasions):
            row = []
            for sid in self.nav.schedule.sat_ids:
                prev = last[sid]
                m = self.track_sat(source, prev, k) if prev is not None else self.acquire_sat(source, sid, k)
                last[sid] = m if m.detected else None
                row.append(m)
            out.append(row)
        return out


def first_detection_latency(per_occasion: Sequence[Sequence[Measurement]], sat_id: SatId,
                            window_s: float) -> float:
    for row in per_occasion:
        for m in row:
            if m.sat_id == sat_id and m.detected:
                return m.latency_s
    return window_s
