import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chronon.core import ChrononError, HalfIntCoord
from chronon.kcalculus import (
    RadarSample,
    TwoObserverRecord,
    classical_radar_coords,
    classical_radar_intervals,
    doppler_link,
    interval_identity_holds,
    k_from_velocity,
    ksq_estimate,
    lorentz_map,
    radar_ensemble,
    radar_experiment,
    two_observer_experiment,
    velocity_estimate,
    velocity_from_k,
)
from chronon.sampling import RngStream


@pytest.mark.parametrize("v, k", [(0.0, 1.0), (1 / 3, math.sqrt(2)), (0.6, 2.0)])
def test_k_from_velocity(v, k):
    assert k_from_velocity(v) == pytest.approx(k, rel=1e-15)
    assert velocity_from_k(k) == pytest.approx(v, rel=1e-15, abs=1e-16)


def test_k_from_velocity_rejects_light_speed():
    for v in (1.0, -1.0, 1.5):
        with pytest.raises(ChrononError):
            k_from_velocity(v)


@pytest.mark.parametrize("n_e, n_r, v", [(10**6, 10**6 + 2, 1 / (10**6 + 1)), (1, 2, 1 / 3), (5, 5, 0.0)])
def test_velocity_estimate(n_e, n_r, v):
    assert velocity_estimate(RadarSample(n_e, n_r)) == pytest.approx(v, rel=1e-15, abs=0)
    assert velocity_estimate(RadarSample(10**6, 10**6 + 2)) == pytest.approx(1e-6, rel=1e-5)


def test_velocity_estimate_degenerate():
    s = RadarSample(3, 0)
    assert s.degenerate
    assert velocity_estimate(s) == -1.0
    assert velocity_estimate(RadarSample(3, 1)) > -1.0


@given(st.integers(1, 10**9), st.integers(1, 10**9))
def test_velocity_estimate_antisymmetric(a, b):
    assert velocity_estimate((a, b)) == -velocity_estimate((b, a))


@pytest.mark.parametrize("n_e, n_r, ksq", [(1, 2, 2.0), (4, 4, 1.0), (10**6, 10**6 + 2, 1.000002)])
def test_ksq_estimate(n_e, n_r, ksq):
    assert ksq_estimate(RadarSample(n_e, n_r)) == ksq


def test_radar_sample_validation():
    with pytest.raises(ChrononError):
        RadarSample(0, 3)
    with pytest.raises(ChrononError):
        RadarSample(1, -1)


def test_radar_experiment_single():
    s = radar_experiment(2.0, 50, RngStream(9))
    assert s.n_e == 50 and s.n_r >= 0
    assert s == radar_experiment(2.0, 50, RngStream(9))


def test_rest_velocity_unbiased_at_large_interval():
    n_r = radar_ensemble(1.0, 10**6, 10**6, RngStream(11, "rest"))
    v = velocity_estimate((10**6, n_r))
    assert abs(v.mean()) <= 2.5e-6


def test_single_chronon_emission_distribution():
    # n_e = 1 at rest: 0 and 1 echo chronons are equally likely, each e^-1
    n_r = radar_ensemble(1.0, 1, 10**6, RngStream(12, "ne1"))
    freq = np.bincount(n_r, minlength=3) / n_r.size
    assert freq[0] == pytest.approx(math.exp(-1), abs=5 * math.sqrt(0.25 / 1e6))
    assert freq[1] == pytest.approx(math.exp(-1), abs=5 * math.sqrt(0.25 / 1e6))
    assert freq[0] + freq[1] == pytest.approx(0.7358, abs=0.003)


def test_echo_std_law():
    n_r = radar_ensemble(2.0, 400, 10**6, RngStream(13, "std"))
    assert n_r.std(ddof=1) == pytest.approx(40.0, rel=0.01)


def test_doppler_link_means():
    rng = RngStream(14, "link").generator()
    assert doppler_link(1.0, 1, rng) >= 0
    x = doppler_link(1.0, 37, rng, size=200_000)
    assert abs(x.mean() - 37) <= 5 * math.sqrt(37 / 2e5)
    x = doppler_link(2.0, 100, rng, size=10**6)
    assert 199.93 <= x.mean() <= 200.07
    k1 = doppler_link(math.sqrt(2), 1000, rng, size=10**5) / 1000
    assert abs(k1.mean() - math.sqrt(2)) <= 5 * k1.std(ddof=1) / math.sqrt(k1.size)
    with pytest.raises(ChrononError):
        doppler_link(1.0, 0, rng)


def test_two_observer_record_identities():
    rng = RngStream(15, "records").generator()
    checked = 0
    for _ in range(300):
        rec = two_observer_experiment(2.0, 30, 120, rng)
        if rec.degenerate:
            continue
        assert interval_identity_holds(rec)
        T, X = rec.coords
        Tp, Xp = lorentz_map(rec.k1, rec.k2, T, X)
        assert (Tp, Xp) == (rec.coords_prime[0].exact, rec.coords_prime[1].exact)
        checked += 1
    assert checked > 250


def test_two_observer_degenerate_record():
    rec = TwoObserverRecord(N_e=1, N_e_prime=0, N_r_prime=1, N_r=2)
    assert rec.degenerate and rec.k1 is None and rec.k2 == 2
    with pytest.raises(ChrononError):
        interval_identity_holds(rec)
    with pytest.raises(ChrononError):
        two_observer_experiment(1.0, 0, 1, RngStream(0))


def test_two_observer_rest_means():
    rng = RngStream(16, "rest").generator()
    recs = [two_observer_experiment(1.0, 400, 900, rng) for _ in range(4000)]
    k1 = np.array([float(r.k1) for r in recs])
    k2 = np.array([float(r.k2) for r in recs])
    for x in (k1, k2):
        assert abs(x.mean() - 1.0) <= 5 * x.std(ddof=1) / math.sqrt(x.size)


def test_lorentz_map_examples():
    assert lorentz_map(1.0, 1.0, 5.0, 3.0) == (5.0, 3.0)
    Tp, Xp = lorentz_map(2.0, 2.0, 5.0, 3.0)
    assert (Tp, Xp) == (4.0, 0.0)
    assert Tp**2 - Xp**2 == 5.0**2 - 3.0**2
    Tp, Xp = lorentz_map(Fraction(2), Fraction(2), HalfIntCoord(10), HalfIntCoord(6))
    assert (Tp, Xp) == (Fraction(4), Fraction(0))
    with pytest.raises(ChrononError):
        lorentz_map(0.0, 1.0, 1.0, 0.0)


@given(st.integers(1, 10**6), st.integers(1, 10**6), st.integers(1, 10**6), st.integers(1, 10**6))
def test_lorentz_map_interval_scaling(N_e, N_ep, N_rp, N_r):
    rec = TwoObserverRecord(N_e, N_ep, N_rp, N_r)
    assert interval_identity_holds(rec)
    T, X = rec.coords
    Tp, Xp = lorentz_map(rec.k1, rec.k2, T, X)
    assert Tp**2 - Xp**2 == (rec.k1 / rec.k2) * (T.exact**2 - X.exact**2)


def test_classical_radar():
    k, s = math.sqrt(2), 1.0
    dT, dX, v = classical_radar_intervals(k, s)
    assert (dT, dX) == pytest.approx((1.5, 0.5), rel=1e-15)
    assert v == pytest.approx(1 / 3, rel=1e-15)
    assert classical_radar_coords(s, k * k * s) == pytest.approx((1.5, 0.5))
    assert classical_radar_coords(1.0, 1.0) == (1.0, 0.0)
    for s in (0.1, 1.0, 42.0):
        assert classical_radar_intervals(1.0, s)[1] == 0.0
    assert classical_radar_intervals(0.5, 1.0)[2] == pytest.approx(velocity_from_k(0.5))
    with pytest.raises(ChrononError):
        classical_radar_coords(2.0, 1.0)


def test_ksq_estimator_consistency():
    k = 1.5
    for n_e in (10**2, 10**4, 10**6):
        n_r = radar_ensemble(k, n_e, 10**5, RngStream(17, f"cons{n_e}"))
        sd = ksq_estimate((n_e, n_r)).std(ddof=1)
        assert sd == pytest.approx(k / math.sqrt(n_e), rel=0.05)
