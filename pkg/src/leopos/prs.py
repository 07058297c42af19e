"""PRS sequences, OFDM waveform generation and TDM occasion scheduling."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .constellation import OrbitalElements, SatId, UeLocation, VisibilityRecord

SLOT_S = 1e-3
SYMBOLS_PER_SLOT = 14

# transmit FFT sizes for the two evaluated bandwidths; others fall back to a power-of-two rule
_TX_FFT = {1e6: 1024, 5e6: 4096}
# receive sampling rates used at the UE
RX_RATES = {1e6: 10.56e6, 5e6: 53.76e6}


def occupied_count(bandwidth_hz: float, scs_hz: float = 15e3, occupancy: float = 0.9) -> int:
    """Number of PRS subcarriers: 90% of the channel, rounded down to an even count."""
    n = int(math.floor(bandwidth_hz * occupancy / scs_hz + 1e-9))
    return n - (n % 2)


def occupied_subcarriers(n_subcarriers: int) -> np.ndarray:
    """Signed subcarrier indices around DC, DC itself left empty."""
    half = n_subcarriers // 2
    return np.concatenate([np.arange(-half, 0), np.arange(1, n_subcarriers - half + 1)])


@dataclass(frozen=True)
class PrsConfig:
    seed_cinit: int
    bandwidth_hz: float = 1e6
    n_subcarriers: int = 60
    n_symbols: int = 1
    scs_hz: float = 15e3
    periodicity_s: float = 0.040
    slot_offset: int = 0
    tx_sample_rate_hz: float = 15.36e6
    first_symbol: int = 0

    def __post_init__(self):
        if not 0 <= self.seed_cinit < 2**31:
            raise ValueError("seed_cinit must lie in [0, 2^31)")
        if self.n_subcarriers < 2 or self.n_subcarriers * self.scs_hz > self.bandwidth_hz + 1e-6:
            raise ValueError("occupied subcarriers exceed the bandwidth")
        if not 1 <= self.n_symbols <= SYMBOLS_PER_SLOT:
            raise ValueError("n_symbols must lie in [1, 14]")
        if not 0 <= self.first_symbol <= SYMBOLS_PER_SLOT - self.n_symbols:
            raise ValueError("PRS symbols must fit in one slot")
        slots = self.periodicity_s / SLOT_S
        if self.periodicity_s <= 0 or abs(slots - round(slots)) > 1e-9:
            raise ValueError("periodicity_s must be a positive multiple of the 1 ms slot")
        n_fft = self.tx_sample_rate_hz / self.scs_hz
        if abs(n_fft - round(n_fft)) > 1e-9 or round(n_fft) <= self.n_subcarriers:
            raise ValueError("tx_sample_rate_hz must be an integer multiple of scs_hz above the occupied band")
        if self.slot_offset < 0:
            raise ValueError("slot_offset must be non-negative")

    @classmethod
    def for_bandwidth(cls, bandwidth_hz: float, seed_cinit: int = 0, n_symbols: int = 1, **kw) -> "PrsConfig":
        scs = kw.pop("scs_hz", 15e3)
        n_sc = occupied_count(bandwidth_hz, scs)
        n_fft = _TX_FFT.get(float(bandwidth_hz))
        if n_fft is None:
            n_fft = 1 << int(math.ceil(math.log2(12 * n_sc)))
        return cls(seed_cinit, bandwidth_hz, n_sc, n_symbols, scs, tx_sample_rate_hz=n_fft * scs, **kw)

    @property
    def n_fft(self) -> int:
        return int(round(self.tx_sample_rate_hz / self.scs_hz))

    @property
    def rx_sample_rate_hz(self) -> float:
        return RX_RATES.get(float(self.bandwidth_hz), self.tx_sample_rate_hz)

    def cp_lengths(self) -> np.ndarray:
        """Cyclic prefix length (Tx samples) of each PRS symbol."""
        l = self.first_symbol + np.arange(self.n_symbols)
        long_cp = (l % (SYMBOLS_PER_SLOT // 2)) == 0
        return np.where(long_cp, 160 * self.n_fft // 2048, 144 * self.n_fft // 2048)

    @property
    def n_samples(self) -> int:
        return int(self.cp_lengths().sum() + self.n_symbols * self.n_fft)

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.tx_sample_rate_hz

    @property
    def offset_in_slot_s(self) -> float:
        """Start of the first PRS symbol relative to the slot boundary."""
        if self.first_symbol == 0:
            return 0.0
        full = replace(self, n_symbols=self.first_symbol, first_symbol=0)
        return full.duration_s


@dataclass
class BasebandBuffer:
    samples: np.ndarray
    sample_rate_hz: float
    epoch_s: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("buffer contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    @property
    def end_s(self) -> float:
        return self.epoch_s + self.duration_s

    def times(self) -> np.ndarray:
        return self.epoch_s + np.arange(self.samples.size) / self.sample_rate_hz

    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2)) if self.samples.size else 0.0


def gold_sequence(cinit: int, length: int) -> np.ndarray:
    """Length-31 Gold sequence with the usual 1600-chip advance, as uint8 bits."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if not 0 <= cinit < 2**31:
        raise ValueError("cinit must lie in [0, 2^31)")
    return np.asarray(kernels.gold_bits(int(cinit), int(length)), dtype=np.uint8)


def map_prs_symbol(bits, n_subcarriers: int) -> np.ndarray:
    """QPSK-map ``2 * n_subcarriers`` bits to subcarrier values."""
    b = np.asarray(bits, dtype=np.int8).ravel()
    if b.size < 2 * n_subcarriers:
        raise ValueError(f"need {2 * n_subcarriers} bits, got {b.size}")
    b = b[: 2 * n_subcarriers]
    return ((1 - 2 * b[0::2]) + 1j * (1 - 2 * b[1::2])) / math.sqrt(2.0)


def prs_grid(config: PrsConfig) -> np.ndarray:
    """Occupied-subcarrier grid, shape ``(n_symbols, n_subcarriers)``."""
    per_sym = 2 * config.n_subcarriers
    bits = gold_sequence(config.seed_cinit, per_sym * config.n_symbols)
    return np.stack(
        [map_prs_symbol(bits[l * per_sym : (l + 1) * per_sym], config.n_subcarriers)
         for l in range(config.n_symbols)]
    )


def _check_grid(grid: np.ndarray, config: PrsConfig) -> np.ndarray:
    g = np.atleast_2d(np.asarray(grid, dtype=np.complex128))
    if g.shape != (config.n_symbols, config.n_subcarriers):
        raise ValueError(f"grid shape {g.shape} does not match {(config.n_symbols, config.n_subcarriers)}")
    return g


def ofdm_modulate(grid, config: PrsConfig, epoch_s: float = 0.0) -> BasebandBuffer:
    """CP-OFDM modulation, scaled so unit-magnitude subcarriers give unit mean power."""
    g = _check_grid(grid, config)
    n_fft = config.n_fft
    k = occupied_subcarriers(config.n_subcarriers) % n_fft
    full = np.zeros((config.n_symbols, n_fft), dtype=np.complex128)
    full[:, k] = g
    body = np.fft.ifft(full, axis=1) * (n_fft / math.sqrt(config.n_subcarriers))
    parts = []
    for l, cp in enumerate(config.cp_lengths()):
        parts.append(body[l, n_fft - cp :])
        parts.append(body[l])
    return BasebandBuffer(np.concatenate(parts), config.tx_sample_rate_hz, epoch_s)


def ofdm_demodulate(buf: BasebandBuffer, config: PrsConfig) -> np.ndarray:
    n_fft = config.n_fft
    cps = config.cp_lengths()
    if len(buf) < config.n_samples:
        raise ValueError("buffer shorter than the configured PRS")
    k = occupied_subcarriers(config.n_subcarriers) % n_fft
    out = np.empty((config.n_symbols, config.n_subcarriers), dtype=np.complex128)
    pos = 0
    for l, cp in enumerate(cps):
        pos += cp
        spec = np.fft.fft(buf.samples[pos : pos + n_fft]) * (math.sqrt(config.n_subcarriers) / n_fft)
        out[l] = spec[k]
        pos += n_fft
    return out


@lru_cache(maxsize=64)
def _waveform_cached(config: PrsConfig) -> np.ndarray:
    s = ofdm_modulate(prs_grid(config), config).samples
    s.setflags(write=False)
    return s


def prs_waveform(config: PrsConfig, epoch_s: float = 0.0) -> BasebandBuffer:
    """Transmit PRS for one occasion at the Tx rate (bit-exact for a given config)."""
    return BasebandBuffer(_waveform_cached(config), config.tx_sample_rate_hz, epoch_s)


def cinit_for(sat_id: SatId) -> int:
    """Deterministic 31-bit sequence seed derived from the satellite id."""
    key = f"{sat_id[0]}:{sat_id[1]}".encode()
    return zlib.crc32(key) & 0x7FFFFFFF


@dataclass(frozen=True)
class ScheduleEntry:
    sat_id: SatId
    slot_index: int
    prs: PrsConfig


@dataclass(frozen=True)
class TdmSchedule:
    window_start_s: float
    window_len_s: float
    entries: tuple[ScheduleEntry, ...]
    guard_slots: int = 1
    slot_s: float = SLOT_S

    def __post_init__(self):
        slots = [e.slot_index for e in self.entries]
        if len(set(slots)) != len(slots):
            raise ValueError("two satellites share a slot")
        for e in self.entries:
            if (e.slot_index + 1) * self.slot_s > self.window_len_s + 1e-12:
                raise ValueError(f"entry {e.sat_id} falls outside the window")

    @property
    def sat_ids(self) -> list[SatId]:
        return [e.sat_id for e in self.entries]

    @property
    def periodicity_s(self) -> float:
        return self.entries[0].prs.periodicity_s

    def entry(self, sat_id: SatId) -> ScheduleEntry:
        for e in self.entries:
            if e.sat_id == sat_id:
                return e
        raise KeyError(sat_id)

    def tx_time(self, sat_id: SatId, occasion: int = 0) -> float:
        """Emission time of the first PRS sample for a given occasion."""
        e = self.entry(sat_id)
        return (self.window_start_s + occasion * e.prs.periodicity_s
                + e.slot_index * self.slot_s + e.prs.offset_in_slot_s)


def schedule_prs(
    visible: Sequence[VisibilityRecord],
    template: PrsConfig,
    max_sats: int = 4,
    guard_slots: int = 1,
    window_limit_s: float | None = None,
    window_start_s: float = 0.0,
    slot_s: float = SLOT_S,
) -> TdmSchedule:
    """TDM pattern: highest elevations first, one slot each separated by guard slots."""
    if not visible:
        raise ValueError("no visible satellites to schedule")
    if max_sats < 1 or guard_slots < 0:
        raise ValueError("max_sats must be >= 1 and guard_slots >= 0")
    ranked = sorted(visible, key=lambda v: (-v.elevation_rad, v.sat_id))
    n = min(max_sats, len(ranked))
    if window_limit_s is not None:
        while n > 1 and (n + (n - 1) * guard_slots) * slot_s > window_limit_s + 1e-12:
            n -= 1
    entries = tuple(
        ScheduleEntry(v.sat_id, i * (1 + guard_slots),
                      replace(template, seed_cinit=cinit_for(v.sat_id), slot_offset=i * (1 + guard_slots)))
        for i, v in enumerate(ranked[:n])
    )
    window_len = (n + (n - 1) * guard_slots) * slot_s
    return TdmSchedule(window_start_s, window_len, entries, guard_slots, slot_s)


@dataclass(frozen=True)
class NavMessage:
    """Assistance data delivered to the UE before the search starts."""

    ephemeris: dict[SatId, OrbitalElements]
    ephemeris_epoch_s: float
    prs: dict[SatId, PrsConfig]
    schedule: TdmSchedule
    coverage_center: UeLocation | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        for sid in self.schedule.sat_ids:
            if sid not in self.ephemeris or sid not in self.prs:
                raise ValueError(f"scheduled satellite {sid} lacks ephemeris or PRS config")

    @classmethod
    def from_schedule(cls, schedule: TdmSchedule, elements: Sequence[OrbitalElements],
                      epoch_s: float = 0.0, coverage_center: UeLocation | None = None) -> "NavMessage":
        by_id = {e.sat_id: e for e in elements}
        eph = {sid: by_id[sid] for sid in schedule.sat_ids}
        prs = {e.sat_id: e.prs for e in schedule.entries}
        return cls(eph, epoch_s, prs, schedule, coverage_center)


def write_iq(buf: BasebandBuffer, path: str | Path) -> Path:
    """Interleaved float32 I/Q file plus a JSON sidecar with rate and epoch."""
    path = Path(path)
    iq = np.empty(2 * len(buf), dtype=np.float32)
    iq[0::2] = buf.samples.real
    iq[1::2] = buf.samples.imag
    iq.tofile(path)
    meta = {"sample_rate_hz": buf.sample_rate_hz, "epoch_s": buf.epoch_s,
            "n_samples": len(buf), "format": "cf32_interleaved"}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))
    return path


def read_iq(path: str | Path) -> BasebandBuffer:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    iq = np.fromfile(path, dtype=np.float32)
    return BasebandBuffer(iq[0::2].astype(np.float64) + 1j * iq[1::2], meta["sample_rate_hz"], meta["epoch_s"])
