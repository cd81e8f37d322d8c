import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_reversible
from ctmcfresh import (
    Erlang, Exponential, Martingale, NoUniqueMaximum, PMap, PMapSchedule,
    RandomizedEstimatorUnsupported, TauMap, expected_fresh_time, expected_fresh_times,
    map_structure, mbf, mbf_erlang, mbf_exponential, mbf_general, mbf_martingale, mbf_pmap,
    mbf_tau_map, pmap_from_map, preset, verify_martingale_vs_taustar,
)
from ctmcfresh.presets import TABLE_PRESETS

INF = np.inf


def binary_me(m, a):
    return (m + a) / (m + 2 * a)


def test_binary_martingale(binary):
    assert mbf_martingale(binary, 1.0) == pytest.approx(2 / 3, abs=1e-14)
    assert mbf_martingale(binary, 1.0, "trace") == pytest.approx(2 / 3, abs=1e-14)
    for m in (0.1, 0.5, 3.0):
        assert mbf_martingale(binary, m) == pytest.approx(binary_me(m, 1.0), abs=1e-13)


def test_binary_fresh_time(binary):
    target = 1 / 2 + 1 / (2 * 3)
    for method in ("spectral", "resolvent", "quadrature"):
        assert expected_fresh_time(binary, Martingale(), 1, 1.0, method) == pytest.approx(target, abs=1e-9)
    assert mbf_general(binary, Martingale(), 1.0) == pytest.approx(2 / 3, abs=1e-12)


def test_exponential_zero_rate_is_martingale(fig6a, fig4):
    for c in (fig6a, fig4):
        for mu in (0.1, 1.0):
            assert mbf_exponential(c, mu, 0.0) == pytest.approx(mbf_martingale(c, mu), abs=1e-13)


def test_fast_sampling_limit(fig6a, ring4):
    assert mbf_exponential(fig6a, 1e6, 1.0) > 0.999
    for c in (fig6a, ring4):
        F = expected_fresh_time(c, Martingale(), 0, 1e6)
        assert F == pytest.approx(1e-6, rel=1e-4)


def test_erlang_two_stage_equals_exponential(fig6a, fig4):
    for c in (fig6a, fig4):
        for lam in (0.3, 2.0):
            assert mbf_erlang(c, 0.5, 2, lam / 2) == pytest.approx(mbf_exponential(c, 0.5, lam), abs=1e-12)


def test_erlang_small_rate_approaches_martingale(binary):
    assert mbf_erlang(binary, 1.0, 10, 1e-8) == pytest.approx(2 / 3, abs=1e-6)


def test_erlang_increases_toward_tau_map():
    c = preset("fig5")
    tau = map_structure(c).global_tau_star
    vals = [mbf_erlang(c, 0.5, g, 1 / tau) for g in (2, 5, 10, 50)]
    assert np.all(np.diff(vals) >= -1e-12)
    assert mbf_tau_map(c, 0.5, tau) - vals[-1] < mbf_tau_map(c, 0.5, tau) - vals[0]


def test_tau_map_limits(fig6a, binary):
    for mu in (0.2, 1.0):
        assert mbf_tau_map(fig6a, mu, INF) == pytest.approx(mbf_martingale(fig6a, mu), abs=1e-13)
        assert mbf_tau_map(fig6a, mu, 0.0) == pytest.approx(fig6a.pi[fig6a.i_star], abs=1e-13)
    v = mbf_tau_map(binary, 1.0, 1.0)
    assert 0.5 < v < 1.0


def test_pmap_degenerate_schedules(fig6a):
    mu = 0.4
    single = PMapSchedule.single_stage(4)
    assert mbf_pmap(fig6a, mu, single) == pytest.approx(mbf_martingale(fig6a, mu), abs=1e-13)
    two = PMapSchedule.two_stage(4, 2.0, fig6a.i_star)
    assert mbf_pmap(fig6a, mu, two) == pytest.approx(mbf_tau_map(fig6a, mu, 2.0), abs=1e-13)
    assert mbf_pmap(fig6a, mu, two, "trace") == pytest.approx(mbf_tau_map(fig6a, mu, 2.0), abs=1e-12)
    assert expected_fresh_time(fig6a, PMap(single), 2, mu) == pytest.approx(
        expected_fresh_time(fig6a, Martingale(), 2, mu), abs=1e-14)


def test_fig6a_gains(fig6a, fig6a_map):
    mu = 0.3
    me = mbf_martingale(fig6a, mu)
    tm = mbf_tau_map(fig6a, mu, fig6a_map.global_tau_star)
    pm = mbf_pmap(fig6a, mu, pmap_from_map(fig6a, fig6a_map))
    np.testing.assert_allclose([me, tm, pm], [0.534853, 0.563367, 0.618420], atol=1e-6)
    assert pm > tm > me


def test_general_matches_closed_star():
    c = preset("fig6c")
    tau = map_structure(c).global_tau_star
    closed = mbf_tau_map(c, 0.5, tau)
    for method in ("spectral", "resolvent"):
        assert mbf_general(c, TauMap(tau), 0.5, method) == pytest.approx(closed, abs=1e-8)


@pytest.mark.parametrize("name", TABLE_PRESETS)
def test_route_agreement(name):
    c = preset(name)
    if not c.reversible:
        pytest.skip("spectral route needs a reversible chain")
    ms = map_structure(c)
    specs = [Martingale(), TauMap(ms.global_tau_star), PMap(pmap_from_map(c, ms))]
    for mu in (0.1, 1.0):
        for spec in specs:
            a = mbf(c, spec, mu).value
            b = mbf(c, spec, mu, "general").value
            assert a == pytest.approx(b, abs=1e-10)
        for lam, g in ((1 / ms.global_tau_star, 5), (0.7, 3)):
            assert mbf_exponential(c, mu, lam, "spectral") == pytest.approx(
                mbf_exponential(c, mu, lam, "trace"), abs=1e-10)
            assert mbf_erlang(c, mu, g, lam, "spectral") == pytest.approx(
                mbf_erlang(c, mu, g, lam, "trace"), abs=1e-10)


def test_quadrature_matches_resolvent(ring4):
    ms = map_structure(ring4, horizon=20.0)
    spec = PMap(pmap_from_map(ring4, ms, 4))
    a = expected_fresh_times(ring4, spec, 1.0, "resolvent")
    b = expected_fresh_times(ring4, spec, 1.0, "quadrature")
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_randomized_fresh_time_unsupported(fig6a):
    with pytest.raises(RandomizedEstimatorUnsupported):
        expected_fresh_times(fig6a, Exponential(1.0), 1.0)


def test_report_provenance(fig6a, ring4):
    assert mbf(fig6a, Martingale(), 1.0).method == "closed"
    r = mbf(ring4, TauMap(1.0), 1.0)
    assert r.method == "general" and r.std_error is None and r.ci95 is None


def test_nonpositive_rate(fig6a):
    with pytest.raises(ValueError):
        mbf_martingale(fig6a, 0.0)


def test_martingale_vs_taustar(fig6a, binary):
    me, tm = verify_martingale_vs_taustar(fig6a, 0.3)
    assert tm > me
    with pytest.raises(NoUniqueMaximum):
        verify_martingale_vs_taustar(binary, 1.0)


def test_random_chains_inequality():
    rng = np.random.default_rng(11)
    for _ in range(25):
        c = random_reversible(rng, int(rng.integers(2, 6)))
        me, tm = verify_martingale_vs_taustar(c, rng.uniform(0.05, 5))
        assert tm >= me - 1e-12


@given(st.floats(0.05, 5.0), st.floats(0.0, 5.0), st.integers(2, 30), st.floats(0.0, 20.0))
def test_outputs_in_unit_interval(mu, lam, g, tau):
    c = preset("fig9")
    vals = [mbf_martingale(c, mu), mbf_exponential(c, mu, lam),
            mbf_erlang(c, mu, g, max(lam, 1e-3)), mbf_tau_map(c, mu, tau)]
    for v in vals:
        assert 0.0 <= v <= 1 + 1e-12


@pytest.mark.parametrize("g", [10, 50, 200])
def test_erlang_equals_mixture_of_tau_map(g):
    # the switch time is Gamma(g-1, rate lam*g) and is redrawn every query
    from scipy import integrate, stats
    c = preset("fig5")
    tau = map_structure(c).global_tau_star
    lam, mu = 1 / tau, 0.5
    d = stats.gamma(g - 1, scale=1 / (lam * g))
    ref = integrate.quad(lambda t: d.pdf(t) * mbf_tau_map(c, mu, t), d.ppf(1e-12), d.ppf(1 - 1e-12),
                         epsabs=1e-12, limit=200)[0]
    assert mbf_erlang(c, mu, g, lam) == pytest.approx(ref, abs=1e-9)
