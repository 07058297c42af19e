import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from leopos.channel import (
    ChannelRealization,
    add_noise,
    apply_doppler,
    apply_fading_and_noise,
    apply_time_varying_delay,
    rician_gains,
    stream_seed,
    superpose,
)
from leopos.constants import C_LIGHT
from leopos.linkbudget import LinkProfile
from leopos.prs import BasebandBuffer, PrsConfig, prs_waveform

CFG = PrsConfig.for_bandwidth(1e6, 999)
RX = CFG.rx_sample_rate_hz
TX = CFG.tx_sample_rate_hz


def linear_profile(tau0, rate, t_span=(-0.01, 0.05), tau2=0.0):
    t = np.linspace(*t_span, 2001)
    tau = tau0 + rate * (t - t_span[0]) + tau2 * (t - t_span[0]) ** 2
    return LinkProfile((0, 0), t, tau, -2e9 * (rate + 2 * tau2 * (t - t_span[0])), np.zeros_like(t))


def fine_peak(y, ref, up=16):
    """Lag (in samples of ``y``) maximising |xcorr|, by zero-padded FFT then parabola."""
    n = 1 << int(math.ceil(math.log2(len(y) + len(ref))))
    spec = np.fft.fft(y, n) * np.conj(np.fft.fft(ref, n))
    full = np.zeros(n * up, complex)
    h = n // 2
    full[:h] = spec[:h]
    full[-h:] = spec[-h:]
    c = np.abs(np.fft.ifft(full))
    k = int(np.argmax(c))
    ym, y0, yp = c[k - 1], c[k], c[(k + 1) % c.size]
    k = k + 0.5 * (ym - yp) / (ym - 2 * y0 + yp)
    if k > c.size - len(ref) * up:  # negative lags wrap to the end
        k -= c.size
    return k / up


def test_integer_delay_identity():
    tx = BasebandBuffer(prs_waveform(CFG).samples, TX, 0.0)
    # same-rate resampling with a delay of exactly 7 samples
    out = apply_time_varying_delay(tx, LinkProfile.constant(7 / TX, t_span=(-1e-3, 1e-2)), TX)
    m0 = int(round(out.epoch_s * TX))
    ref = np.zeros(len(out), complex)
    ref[7 - m0 : 7 - m0 + len(tx)] = tx.samples
    err = np.sum(np.abs(out.samples - ref) ** 2) / np.sum(np.abs(ref) ** 2)
    assert 10 * math.log10(err) < -60


def test_negated_round_trip():
    tx = BasebandBuffer(prs_waveform(CFG).samples, TX, 0.0)
    fwd = apply_time_varying_delay(tx, linear_profile(3.37 / TX, 1e-6), TX)
    t = np.linspace(-0.01, 0.05, 2001)
    inv = LinkProfile((0, 0), t, -np.interp(t, fwd.times(), np.interp(fwd.times(), t, 3.37 / TX + 1e-6 * (t + 0.01))),
                      np.zeros_like(t), np.zeros_like(t))
    back = apply_time_varying_delay(fwd, inv, TX, (0, len(tx)))
    trim = 40  # interpolator support at the burst edges
    a, b = back.samples[trim:-trim], tx.samples[trim:-trim]
    err = np.sum(np.abs(a - b) ** 2) / np.sum(np.abs(b) ** 2)
    assert 10 * math.log10(err) < -50


def test_compression_factor():
    # two bursts 10 ms apart; a closing satellite squeezes their spacing by (1 + rdot / c)
    rdot = -7000.0
    gap = int(0.010 * TX)
    x = np.zeros(gap + len(prs_waveform(CFG)), complex)
    w = prs_waveform(CFG).samples
    x[: len(w)] += w
    x[gap : gap + len(w)] += w
    tx = BasebandBuffer(x, TX, 0.0)
    out = apply_time_varying_delay(tx, linear_profile(2e-3, rdot / C_LIGHT), RX)
    ref = apply_time_varying_delay(BasebandBuffer(w, TX, 0.0), LinkProfile.constant(0.0, t_span=(-1e-3, 1e-2)), RX)
    half = len(out) // 2
    p1 = fine_peak(out.samples[:half], ref.samples)
    p2 = half + fine_peak(out.samples[half:], ref.samples)
    spacing = (p2 - p1) / RX
    compression = 1.0 - spacing / (gap / TX)
    assert -rdot / C_LIGHT == pytest.approx(2.33e-5, abs=0.01e-5)
    assert compression == pytest.approx(-rdot / C_LIGHT, rel=0.03)


def test_profile_coverage_error():
    tx = BasebandBuffer(prs_waveform(CFG).samples, TX, 0.0)
    with pytest.raises(ValueError):
        apply_time_varying_delay(tx, LinkProfile.constant(2e-3, t_span=(0.0, 1e-3)), RX)


def toa_error(cfg, tau0, rate, accel, snr_db, seed):
    """Measured minus true delay (Rx samples) of one burst, true delay taken at the burst centre."""
    tx = prs_waveform(cfg)
    rx = cfg.rx_sample_rate_hz
    prof = linear_profile(tau0, rate, tau2=accel)
    out = apply_time_varying_delay(tx, prof, rx)
    ref = apply_time_varying_delay(tx, LinkProfile.constant(0.0, t_span=(-1e-3, 1e-2)), rx)
    y = out.samples
    if snr_db is not None:
        # in-band SNR against unit-PSD noise
        amp = math.sqrt(10 ** (snr_db / 10) * cfg.n_subcarriers * cfg.scs_hz / rx)
        y = add_noise(BasebandBuffer(y * amp, rx, out.epoch_s), np.random.default_rng(seed)).samples
    lag = fine_peak(y, ref.samples) + (out.epoch_s - ref.epoch_s) * rx
    return lag - float(prof.delay_at(tau0 + 0.5 * cfg.duration_s)) * rx


CFG14 = PrsConfig.for_bandwidth(1e6, 999, 14)
smooth = dict(tau0=st.floats(1e-3, 5e-3), rate=st.floats(-2.5e-5, 2.5e-5), accel=st.floats(-1e-5, 1e-5))


@given(**smooth)
def test_delay_fidelity_noiseless(tau0, rate, accel):
    assert abs(toa_error(CFG, tau0, rate, accel, None, 0)) < 0.01


@given(seed=st.integers(0, 2**32 - 1), **smooth)
def test_delay_fidelity_20db(tau0, rate, accel, seed):
    assert abs(toa_error(CFG14, tau0, rate, accel, 20.0, seed)) < 0.1


def test_single_symbol_spread_is_crlb_limited():
    # a 1-symbol burst at 20 dB carries only ~64 samples of processing gain; its TOA spread
    # sits at the Cramer-Rao bound 1 / (2 pi B_rms sqrt(2 E/N0))
    errs = np.array([toa_error(CFG, 2.3e-3, 0.0, 0.0, 20.0, s) for s in range(150)])
    occ = CFG.n_subcarriers * CFG.scs_hz
    k = np.arange(1, CFG.n_subcarriers // 2 + 1) * CFG.scs_hz
    b_rms = math.sqrt(np.mean(k**2))
    e_n0 = 100.0 * occ * (CFG.n_fft / CFG.tx_sample_rate_hz)
    crlb = RX / (2 * math.pi * b_rms * math.sqrt(2 * e_n0))
    assert abs(np.mean(errs)) < 3 * crlb / math.sqrt(errs.size)
    assert np.std(errs) == pytest.approx(crlb, rel=0.25)


def test_doppler_identity_and_phase():
    buf = BasebandBuffer(np.ones(1000, complex), 1e6, 0.0)
    assert np.array_equal(apply_doppler(buf, LinkProfile.constant(0.0, 0.0)).samples, buf.samples)
    ms = BasebandBuffer(np.ones(10001, complex), 10e6, 0.0)
    rot = apply_doppler(ms, LinkProfile.constant(0.0, 30e3))
    total = np.unwrap(np.angle(rot.samples))[-1]
    assert total == pytest.approx(2 * math.pi * 30, rel=1e-9)


def test_doppler_moves_tone():
    fs, n, f0 = 1e6, 4096, 50 * 1e6 / 4096
    buf = BasebandBuffer(np.exp(2j * np.pi * f0 * np.arange(n) / fs), fs, 0.0)
    fd = 100 * fs / n
    out = apply_doppler(buf, LinkProfile.constant(0.0, fd, t_span=(0.0, 1.0)))
    k = int(np.argmax(np.abs(np.fft.fft(out.samples))))
    assert k * fs / n == pytest.approx(f0 + fd)


def test_pure_los_ports_identical():
    tx = BasebandBuffer(prs_waveform(CFG).samples, RX, 0.0)
    g = rician_gains(np.random.default_rng(1), 2, math.inf)
    real = ChannelRealization(LinkProfile.constant(0.0, snr_db=3.0), g[0], RX)
    a, b = apply_fading_and_noise(tx, real, 2, noise=False)
    assert np.array_equal(a.samples, b.samples)
    assert np.allclose(a.samples, tx.samples * real.amplitude(0.0))


def test_measured_snr_matches_target():
    n = 100_000
    clean = BasebandBuffer(np.exp(2j * np.pi * 0.01 * np.arange(n)), RX, 0.0)
    real = ChannelRealization(LinkProfile.constant(0.0, snr_db=-4.0, t_span=(0.0, 1.0)), [1.0], RX,
                              occupied_bw_hz=CFG.n_subcarriers * CFG.scs_hz)
    (port,) = apply_fading_and_noise(clean, real, 1, np.random.default_rng(3))
    sig = clean.samples * real.amplitude(0.0)
    noise_in_band = np.mean(np.abs(port.samples - sig) ** 2) * real.occupied_bw_hz / RX
    snr = 10 * math.log10(np.mean(np.abs(sig) ** 2) / noise_in_band)
    assert snr == pytest.approx(-4.0, abs=0.2)


def test_fading_statistics():
    rng = np.random.default_rng(4)
    g = np.concatenate([rician_gains(rng, 2, 10.0) for _ in range(1000)])
    assert np.mean(np.abs(g) ** 2) == pytest.approx(1.0, abs=0.03)
    d = g - g.mean(axis=0)
    rho = abs(np.mean(d[:, 0] * np.conj(d[:, 1]))) / np.sqrt(np.mean(np.abs(d[:, 0]) ** 2) * np.mean(np.abs(d[:, 1]) ** 2))
    assert rho < 0.1


def test_fading_temporal_correlation():
    g = rician_gains(np.random.default_rng(5), 1, 10.0, n_occasions=20000, rho=0.9)[:, 0]
    d = g - g.mean()
    r1 = np.mean(d[1:] * np.conj(d[:-1])).real / np.mean(np.abs(d) ** 2)
    assert r1 == pytest.approx(0.9, abs=0.02)


def test_port_validation():
    real = ChannelRealization(LinkProfile.constant(0.0), [1.0], RX)
    buf = BasebandBuffer(np.ones(4), RX)
    with pytest.raises(ValueError):
        apply_fading_and_noise(buf, real, 3)
    with pytest.raises(ValueError):
        apply_fading_and_noise(buf, real, 2)


def test_energy_bookkeeping():
    tx = BasebandBuffer(prs_waveform(CFG).samples, TX, 0.0)
    out = apply_time_varying_delay(tx, linear_profile(2.1e-3, -2e-5), RX)
    real = ChannelRealization(LinkProfile.constant(0.0, snr_db=6.0, t_span=(0.0, 1.0)), [1.0], RX)
    (port,) = apply_fading_and_noise(out, real, 1, noise=False)
    e_in = np.sum(np.abs(tx.samples) ** 2) / TX
    e_out = np.sum(np.abs(port.samples) ** 2) / RX
    assert e_out / (e_in * real.amplitude(0.0) ** 2) == pytest.approx(1.0, rel=1e-3)


def test_superpose_identity_and_rate_check():
    b = BasebandBuffer(np.arange(5, dtype=complex), 10.0, 0.3)
    s = superpose([b])
    assert np.array_equal(s.samples, b.samples) and s.epoch_s == pytest.approx(0.3)
    with pytest.raises(ValueError):
        superpose([b, BasebandBuffer(np.ones(3), 20.0)])
    with pytest.raises(ValueError):
        superpose([])


def test_superpose_delay_separation():
    tx = BasebandBuffer(prs_waveform(CFG).samples, TX, 0.0)
    d1, d2 = 2.0e-3, 2.0e-3 + 150.5 / RX
    a = apply_time_varying_delay(tx, LinkProfile.constant(d1, t_span=(0.0, 0.01)), RX)
    b = apply_time_varying_delay(tx, LinkProfile.constant(d2, t_span=(0.0, 0.01)), RX)
    mix = superpose([a, b])
    ref = apply_time_varying_delay(tx, LinkProfile.constant(0.0, t_span=(-1e-3, 0.01)), RX)
    half = int(round((d1 * RX + 75 - mix.epoch_s * RX))) + len(ref) // 2
    p1 = fine_peak(mix.samples[:half], ref.samples)
    p2 = half + fine_peak(mix.samples[half:], ref.samples)
    assert p2 - p1 == pytest.approx(150.5, abs=0.1)


def test_stream_seeds_reproducible_and_distinct():
    a = stream_seed(1, 2, 3).standard_normal(4)
    assert np.array_equal(a, stream_seed(1, 2, 3).standard_normal(4))
    assert not np.array_equal(a, stream_seed(1, 3, 2).standard_normal(4))
