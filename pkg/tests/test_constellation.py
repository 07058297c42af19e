import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from leopos.constants import DEG, MU_EARTH, R_EARTH
from leopos.constellation import (
    ConstellationSpec,
    ElementArray,
    OrbitalElements,
    UeLocation,
    build_constellation,
    propagate,
    sample_epochs,
    visibility,
    visible_count_cdf,
    visible_counts,
    visible_set,
)
from leopos.linkbudget import slant_range_for_elevation

SPEC = ConstellationSpec()
EQUATOR = UeLocation.from_degrees(0.0, 0.0)


def test_default_constellation_size():
    assert len(build_constellation(SPEC)) == 840 == SPEC.size


def test_degenerate_constellation():
    (e,) = build_constellation(ConstellationSpec(num_planes=1, sats_per_plane=1))
    assert e.raan_rad == 0.0 and e.arg_latitude_rad == 0.0


def test_same_plane_spacing_brute_force():
    els = build_constellation(SPEC)
    arr = ElementArray(els)
    pos, _ = arr.eci(0.0)
    for p in (0, 7, 29):
        idx = [i for i, e in enumerate(els) if e.sat_id[0] == p]
        r = pos[idx] / np.linalg.norm(pos[idx], axis=1, keepdims=True)
        ang = np.arccos(np.clip(np.sum(r * np.roll(r, -1, axis=0), axis=1), -1, 1))
        assert np.allclose(ang, 2 * math.pi / 28, atol=1e-12)


def test_raan_evenly_spaced():
    raans = sorted({e.raan_rad for e in build_constellation(SPEC)})
    assert np.allclose(np.diff(raans), 2 * math.pi / 30)


def test_invalid_spec_rejected():
    with pytest.raises(ValueError):
        ConstellationSpec(num_planes=0)
    with pytest.raises(ValueError):
        ConstellationSpec(inclination_rad=0.0)
    with pytest.raises(ValueError):
        ConstellationSpec(altitude_m=-1.0)


def test_propagate_identity_at_zero():
    e = OrbitalElements((0, 0), R_EARTH + 600e3, 70 * DEG, 0.0, 0.0)
    s = propagate(e, 0.0)
    assert np.allclose(s.pos_ecef_m, [R_EARTH + 600e3, 0, 0])
    assert np.allclose(s.pos_ecef_m, s.pos_eci_m)
    with pytest.raises(ValueError):
        propagate(e, -1.0)


def test_orbital_speed_oracle():
    a = 6971e3
    s = propagate(OrbitalElements((0, 0), a, 70 * DEG, 0.3, 1.1), 123.0)
    assert np.linalg.norm(s.vel_eci_mps) == pytest.approx(math.sqrt(MU_EARTH / a), rel=1e-9)
    assert np.linalg.norm(s.vel_eci_mps) == pytest.approx(7561.8, abs=0.1)


def test_period_returns_to_start():
    e = OrbitalElements((0, 0), 6971e3, 70 * DEG, 0.4, 0.2)
    assert e.period_s == pytest.approx(2 * math.pi * math.sqrt(6971e3**3 / MU_EARTH), rel=1e-12)
    assert e.period_s == pytest.approx(5790.5, abs=2.0)
    p0, p1 = propagate(e, 0.0).pos_eci_m, propagate(e, e.period_s).pos_eci_m
    assert np.linalg.norm(p1 - p0) / np.linalg.norm(p0) < 1e-6


@given(t=st.floats(0.0, 2e4), raan=st.floats(0, 2 * math.pi), u0=st.floats(0, 2 * math.pi),
       inc=st.floats(0.01, math.pi), h=st.floats(300e3, 2000e3))
def test_radius_speed_conservation(t, raan, u0, inc, h):
    a = R_EARTH + h
    s = propagate(OrbitalElements((0, 0), a, inc, raan, u0), t)
    assert abs(np.linalg.norm(s.pos_ecef_m) - a) / a < 1e-6
    assert abs(np.linalg.norm(s.vel_eci_mps) - math.sqrt(MU_EARTH / a)) / math.sqrt(MU_EARTH / a) < 1e-6
    assert abs(s.pos_eci_m @ s.vel_eci_mps) / (a * np.linalg.norm(s.vel_eci_mps)) < 1e-9


@given(t=st.floats(0.0, 1e4))
def test_ecef_velocity_is_derivative(t):
    e = OrbitalElements((1, 2), 6971e3, 70 * DEG, 0.7, 2.0)
    h = 1e-3
    fd = (propagate(e, t + h).pos_ecef_m - propagate(e, t).pos_ecef_m) / h
    assert np.allclose(fd, propagate(e, t + h / 2).vel_ecef_mps, atol=1e-3)


def test_zenith_satellite():
    ue = UeLocation.from_degrees(10.0, 20.0)
    # orbit in the plane through the UE so the satellite sits overhead at t=0
    a = R_EARTH + 600e3
    e = OrbitalElements((0, 0), a, 90 * DEG, 20 * DEG, 10 * DEG)
    v = visibility(propagate(e, 0.0), ue, 15 * DEG)
    assert v.elevation_rad == pytest.approx(math.pi / 2, abs=1e-6)
    assert v.slant_range_m == pytest.approx(600e3, rel=1e-9)
    assert v.ascending


def test_slant_range_law_of_cosines():
    # independent oracle: triangle earth-centre / UE / satellite
    el = 30 * DEG
    a = R_EARTH + 600e3
    nadir = math.asin(R_EARTH * math.cos(el) / a)
    central = math.pi / 2 - el - nadir
    d = math.sqrt(R_EARTH**2 + a**2 - 2 * R_EARTH * a * math.cos(central))
    assert slant_range_for_elevation(el) == pytest.approx(d, rel=1e-9)
    assert d == pytest.approx(1075.1e3, abs=0.5e3)


def test_visibility_record_fields():
    arr = ElementArray(build_constellation(SPEC))
    recs = visible_set(arr, 500.0, EQUATOR, 15 * DEG)
    assert recs
    el = [r.elevation_rad for r in recs]
    assert el == sorted(el, reverse=True)
    pos, vel = arr.ecef(500.0)
    for r in recs:
        i = arr.sat_ids.index(r.sat_id)
        assert r.slant_range_m >= SPEC.altitude_m
        assert -math.pi / 2 <= r.elevation_rad <= math.pi / 2
        assert r.ascending == (vel[i, 2] > 0)
        # range rate = derivative of slant range
        h = 1e-2
        p1, _ = arr.ecef(500.0 + h)
        d0 = np.linalg.norm(pos[i] - EQUATOR.pos_ecef_m)
        d1 = np.linalg.norm(p1[i] - EQUATOR.pos_ecef_m)
        assert (d1 - d0) / h == pytest.approx(r.range_rate_mps, abs=0.5)


@pytest.fixture(scope="module")
def epoch_counts():
    # offset keeps the grid off t=0, where satellite (0, 0) sits exactly overhead
    epochs = sample_epochs(SPEC, 30.0) + 7.3
    return {thr: visible_counts(SPEC, [EQUATOR], thr * DEG, epochs) for thr in (0, 15, 30, 90)}


def test_visible_count_band(epoch_counts):
    c15 = epoch_counts[15]
    assert np.mean((c15 >= 6) & (c15 <= 9)) >= 0.9
    assert epoch_counts[30].min() >= 2
    assert epoch_counts[90].max() == 0


def test_visibility_monotone_in_threshold(epoch_counts):
    assert np.all(epoch_counts[0] >= epoch_counts[15])
    assert np.all(epoch_counts[15] >= epoch_counts[30])


def test_ascending_descending_mix():
    arr = ElementArray(build_constellation(SPEC))
    epochs = sample_epochs(SPEC, 60.0)
    both = [len({r.ascending for r in visible_set(arr, t, EQUATOR, 15 * DEG)}) == 2 for t in epochs]
    assert np.mean(both) >= 0.8


def test_count_cdf_table():
    epochs = sample_epochs(SPEC, 120.0)
    lo, hi = visible_count_cdf(SPEC, [EQUATOR], [0.0, 15 * DEG], epochs)
    assert lo.threshold_deg == 0 and hi.threshold_deg == pytest.approx(15)
    assert np.all(np.diff(hi.cdf) >= 0) and hi.cdf[-1] == pytest.approx(1.0)
    # the 0 degree CDF is stochastically larger: its CDF never exceeds the 15 degree one
    for k, p in zip(lo.counts, lo.cdf):
        q = hi.cdf[min(k, len(hi.cdf) - 1)]
        assert p <= q + 1e-12
    with pytest.raises(ValueError):
        visible_count_cdf(SPEC, [], [0.0], epochs)
