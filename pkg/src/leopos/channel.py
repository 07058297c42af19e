"""LEO propagation channel applied to baseband waveforms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .linkbudget import LinkProfile
from .prs import BasebandBuffer, PrsConfig, TdmSchedule, prs_waveform

HALF_TAPS = 16
TABLE_OVERSAMPLE = 1024
KAISER_BETA = 8.6


@lru_cache(maxsize=16)
def interp_table(cutoff: float, half_taps: int = HALF_TAPS, oversample: int = TABLE_OVERSAMPLE,
                 beta: float = KAISER_BETA) -> np.ndarray:
    """Kaiser-windowed sinc sampled every ``1/oversample`` input samples.

    ``cutoff`` is the normalised bandwidth (1.0 = input Nyquist), so the
    kernel has unit DC gain.
    """
    u = np.arange(2 * half_taps * oversample + 1) / oversample - half_taps
    w = np.i0(beta * np.sqrt(np.clip(1.0 - (u / half_taps) ** 2, 0.0, None))) / np.i0(beta)
    h = cutoff * np.sinc(cutoff * u) * w
    h.setflags(write=False)
    return h


def resample_cutoff(rate_in: float, rate_out: float) -> float:
    # full band when not decimating, so integer shifts reproduce the input exactly
    return min(1.0, rate_out / rate_in)


def interpolate_at(x: np.ndarray, positions: np.ndarray, rate_in: float, rate_out: float) -> np.ndarray:
    """Band-limited evaluation of ``x`` at fractional sample ``positions``."""
    table = interp_table(round(resample_cutoff(rate_in, rate_out), 12))
    return kernels.sinc_interp(
        np.ascontiguousarray(x, dtype=np.complex128),
        np.ascontiguousarray(positions, dtype=np.float64),
        table, TABLE_OVERSAMPLE, HALF_TAPS,
    )


def arrival_span(tx: BasebandBuffer, profile: LinkProfile, rx_rate: float) -> tuple[int, int]:
    """Receiver sample indices ``[m0, m1)`` touched by ``tx`` after the link delay."""
    margin = (HALF_TAPS + 1) / tx.sample_rate_hz
    t_first = tx.epoch_s + float(profile.delay_at(tx.epoch_s)) - margin
    t_last = tx.end_s + float(profile.delay_at(tx.end_s)) + margin
    return int(math.floor(t_first * rx_rate)), int(math.ceil(t_last * rx_rate)) + 1


def apply_time_varying_delay(
    tx: BasebandBuffer,
    profile: LinkProfile,
    rx_rate: float,
    m_range: tuple[int, int] | None = None,
) -> BasebandBuffer:
    """Resample ``tx`` onto the receiver grid with ``y(t) = x(t - delay(t))``.

    The output covers receiver samples ``m0 .. m1-1`` (absolute indices on the
    ``k / rx_rate`` grid); by default the full arrival of the buffer.
    """
    m0, m1 = arrival_span(tx, profile, rx_rate) if m_range is None else m_range
    if m1 <= m0:
        return BasebandBuffer(np.zeros(0, complex), rx_rate, m0 / rx_rate)
    t = np.arange(m0, m1) / rx_rate
    if not profile.covers(float(t[0]), float(t[-1])):
        raise ValueError("link profile does not cover the requested span")
    tau = profile.delay_at(t)
    pos = (t - tau - tx.epoch_s) * tx.sample_rate_hz
    y = interpolate_at(tx.samples, pos, tx.sample_rate_hz, rx_rate)
    return BasebandBuffer(y, rx_rate, m0 / rx_rate)


def apply_doppler(buf: BasebandBuffer, profile: LinkProfile, phase0: float = 0.0) -> BasebandBuffer:
    """Rotate by ``exp(j(phase0 + 2 pi integral of doppler))`` from the first sample."""
    if len(buf) == 0:
        return buf
    t = buf.times()
    fd = profile.doppler_at(t)
    dphi = np.empty_like(fd)
    dphi[0] = 0.0
    # trapezoid rule: exact for piecewise-linear Doppler between samples
    dphi[1:] = np.cumsum(0.5 * (fd[1:] + fd[:-1])) / buf.sample_rate_hz
    phase = phase0 + 2.0 * math.pi * dphi
    return BasebandBuffer(buf.samples * np.exp(1j * phase), buf.sample_rate_hz, buf.epoch_s)


def rician_gains(rng: np.random.Generator, n_ports: int, k_db: float, n_occasions: int = 1,
                 rho: float = 0.9) -> np.ndarray:
    """Unit-mean-power Rician gains, shape ``(n_occasions, n_ports)``.

    The scattered part follows an AR(1) process across occasions with
    coefficient ``rho``; ports are independent. ``k_db = inf`` gives pure LOS.
    """
    if n_ports < 1 or n_occasions < 1:
        raise ValueError("n_ports and n_occasions must be >= 1")
    w = (rng.standard_normal((n_occasions, n_ports)) + 1j * rng.standard_normal((n_occasions, n_ports))) / math.sqrt(2)
    if math.isinf(k_db) and k_db > 0:
        return np.ones((n_occasions, n_ports), dtype=complex)
    k = 10.0 ** (k_db / 10.0)
    d = np.empty_like(w)
    d[0] = w[0]
    a = math.sqrt(max(0.0, 1.0 - rho * rho))
    for i in range(1, n_occasions):
        d[i] = rho * d[i - 1] + a * w[i]
    return math.sqrt(k / (k + 1.0)) + math.sqrt(1.0 / (k + 1.0)) * d


@dataclass
class ChannelRealization:
    profile: LinkProfile
    port_fading: np.ndarray
    rx_sample_rate_hz: float
    fading_k_db: float = 10.0
    noise_psd: float = 1.0
    occupied_bw_hz: float = 0.9e6
    snr_offset_db: float = 0.0

    def __post_init__(self):
        self.port_fading = np.atleast_1d(np.asarray(self.port_fading, dtype=complex))
        if not np.all(np.isfinite(self.port_fading)):
            raise ValueError("fading gains must be finite")

    def amplitude(self, t: float) -> float:
        """Signal amplitude giving the profile SNR (in-band, per port) against unit noise."""
        snr = 10.0 ** ((self.profile.snr_at(t) + self.snr_offset_db) / 10.0)
        return math.sqrt(snr * self.noise_psd * self.occupied_bw_hz / self.rx_sample_rate_hz)


def apply_fading(buf: BasebandBuffer, gains: Sequence[complex], amplitude: float = 1.0) -> list[BasebandBuffer]:
    return [BasebandBuffer(buf.samples * (amplitude * g), buf.sample_rate_hz, buf.epoch_s) for g in gains]


def add_noise(buf: BasebandBuffer, rng: np.random.Generator, noise_psd: float = 1.0) -> BasebandBuffer:
    n = len(buf)
    w = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * math.sqrt(noise_psd / 2.0)
    return BasebandBuffer(buf.samples + w, buf.sample_rate_hz, buf.epoch_s)


def apply_fading_and_noise(buf: BasebandBuffer, realization: ChannelRealization, n_ports: int,
                           rng: np.random.Generator | None = None, noise: bool = True) -> list[BasebandBuffer]:
    if n_ports not in (1, 2):
        raise ValueError("n_ports must be 1 or 2")
    if realization.port_fading.size < n_ports:
        raise ValueError("realization has fewer fading gains than ports")
    t_mid = buf.epoch_s + 0.5 * buf.duration_s
    ports = apply_fading(buf, realization.port_fading[:n_ports], realization.amplitude(t_mid))
    if noise:
        rng = rng if rng is not None else np.random.default_rng()
        ports = [add_noise(p, rng, realization.noise_psd) for p in ports]
    return ports


def superpose(buffers: Sequence[BasebandBuffer], epoch_s: float | None = None,
              n_samples: int | None = None) -> BasebandBuffer:
    """Sum buffers on a common sample grid (epochs must sit on that grid)."""
    if not buffers:
        raise ValueError("nothing to superpose")
    rate = buffers[0].sample_rate_hz
    if any(abs(b.sample_rate_hz - rate) > 1e-6 * rate for b in buffers):
        raise ValueError("sample-rate mismatch")
    starts = [b.epoch_s * rate for b in buffers]
    for s in starts:
        if abs(s - round(s)) > 1e-3:
            raise ValueError("buffer epoch is not on the sample grid")
    m_all = [int(round(s)) for s in starts]
    m0 = min(m_all) if epoch_s is None else int(round(epoch_s * rate))
    m1 = max(m + len(b) for m, b in zip(m_all, buffers)) if n_samples is None else m0 + n_samples
    out = np.zeros(max(0, m1 - m0), dtype=complex)
    for m, b in zip(m_all, buffers):
        lo, hi = max(m, m0), min(m + len(b), m1)
        if hi > lo:
            out[lo - m0 : hi - m0] += b.samples[lo - m : hi - m]
    return BasebandBuffer(out, rate, m0 / rate)


def stream_seed(master: int, *key: int) -> np.random.Generator:
    """Independent generator for a ``(trial, kind, sat, occasion, ...)`` key."""
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key)))


@dataclass
class SatLink:
    index: int
    prs: PrsConfig
    profile: LinkProfile
    gains: np.ndarray  # (n_occasions, n_ports)
    tx_time: Callable[[int], float]  # occasion -> emission time of the first PRS sample
    snr_offset_db: float = 0.0


@dataclass
class RxStream:
    """Lazily synthesised multi-port receive stream.

    Segments are generated on request: every satellite whose arrival overlaps
    the segment contributes, then independent unit-PSD noise is added per port.
    Noise for a segment is seeded from ``(seed, occasion, tag, port)`` so
    repeated requests are reproducible.
    """

    links: list[SatLink]
    rx_rate: float
    n_ports: int
    seed: int
    carrier_hz: float = 2e9
    noise: bool = True
    signal_scale: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False)

    def _sat_arrival(self, link: SatLink, occasion: int) -> BasebandBuffer:
        key = (link.index, occasion)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        tx = prs_waveform(link.prs, link.tx_time(occasion))
        buf = apply_time_varying_delay(tx, link.profile, self.rx_rate)
        phase0 = -2.0 * math.pi * self.carrier_hz * float(link.profile.delay_at(buf.epoch_s))
        buf = apply_doppler(buf, link.profile, math.remainder(phase0, 2.0 * math.pi))
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[key] = buf
        return buf

    def segment(self, m0: int, n: int, occasion: int, tag: int = 0) -> list[BasebandBuffer]:
        """Per-port samples ``m0 .. m0+n-1`` of the receive grid."""
        parts: list[list[BasebandBuffer]] = [[] for _ in range(self.n_ports)]
        for link in self.links:
            arr = self._sat_arrival(link, occasion)
            a0 = int(round(arr.epoch_s * self.rx_rate))
            if a0 >= m0 + n or a0 + len(arr) <= m0:
                continue
            t_mid = arr.epoch_s + 0.5 * arr.duration_s
            snr = 10.0 ** ((link.profile.snr_at(t_mid) + link.snr_offset_db) / 10.0)
            occ_bw = link.prs.n_subcarriers * link.prs.scs_hz
            amp = self.signal_scale * math.sqrt(snr * occ_bw / self.rx_rate)
            g = link.gains[min(occasion, link.gains.shape[0] - 1)]
            for p in range(self.n_ports):
                parts[p].append(BasebandBuffer(arr.samples * (amp * g[p]), self.rx_rate, arr.epoch_s))
        out = []
        for p in range(self.n_ports):
            base = BasebandBuffer(np.zeros(n, complex), self.rx_rate, m0 / self.rx_rate)
            buf = superpose([base] + parts[p], m0 / self.rx_rate, n)
            if self.noise:
                buf = add_noise(buf, stream_seed(self.seed, occasion, tag, p))
            out.append(buf)
        return out
