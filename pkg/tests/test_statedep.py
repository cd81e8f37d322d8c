import numpy as np
import pytest

from conftest import random_reversible
from ctmcfresh import (
    Fixed, Martingale, NonpositiveRate, PMap, PerState, SemiSimple, TauMap, build_chain,
    build_joint_generator, joint_stationary, map_structure, mbf, mbf_statedep, omega,
    pmap_from_map, preset, ssp_metrics,
)
from ctmcfresh.statedep import mbf_statedep_general


def two_state(a, b):
    return build_chain([[-a, a], [b, -b]])


def binary_psi(a, b, m1, m2):
    den = (a + b) * (m1 * m2 + a * m1 + b * m2)
    return np.array([[b * m2 * (b + m1), a * b * m1],
                     [a * b * m2, a * m1 * (m2 + a)]]) / den


def test_binary_psi_closed_form():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b, m1, m2 = rng.uniform(0.05, 5.0, 4)
        js = joint_stationary(two_state(a, b), [m1, m2])
        np.testing.assert_allclose(js.psi, binary_psi(a, b, m1, m2), atol=1e-13)


def test_symmetric_binary_trace():
    for m, a in ((1.0, 1.0), (0.3, 2.0), (4.0, 0.5)):
        c = two_state(a, a)
        assert mbf_statedep(c, Martingale(), PerState([m, m])) == pytest.approx((m + a) / (m + 2 * a), abs=1e-13)


def test_joint_generator_structure(fig6a):
    QM = build_joint_generator(fig6a, [0.2, 0.5, 1.0, 2.0])
    np.testing.assert_allclose(QM.sum(axis=1), 0, atol=1e-12)
    off = QM - np.diag(np.diag(QM))
    assert off.min() >= 0


def test_psi_marginals_and_balance(fig6a):
    rates = np.array([0.2, 0.5, 1.0, 2.0])
    js = joint_stationary(fig6a, rates)
    np.testing.assert_allclose(js.psi.sum(axis=1), fig6a.pi, atol=1e-12)
    assert js.psi.sum() == pytest.approx(1.0, abs=1e-14)
    # sampling flow out of each estimate equals the sampling flow into it
    np.testing.assert_allclose(rates * js.pi_tilde, js.psi @ rates, atol=1e-13)
    assert js.omega == pytest.approx(js.pi_tilde @ rates, abs=1e-15)


@pytest.mark.parametrize("name", ["fig6a", "fig4", "fig9"])
def test_uniform_rates_reduce_to_fixed(name):
    c = preset(name)
    specs = [Martingale()]
    if c.unique_max:
        specs.append(TauMap(map_structure(c).global_tau_star))
    for spec in specs:
        for m in (0.2, 1.5):
            assert mbf_statedep(c, spec, Fixed(m)) == pytest.approx(mbf(c, spec, m).value, abs=1e-12)
            assert omega(c, np.full(c.size, m)) == pytest.approx(m, abs=1e-12)


def test_closed_forms_match_general_route():
    rng = np.random.default_rng(5)
    for _ in range(5):
        c = random_reversible(rng, 4)
        ms = map_structure(c)
        rates = rng.uniform(0.1, 3.0, 4)
        for spec in (Martingale(), TauMap(ms.global_tau_star), PMap(pmap_from_map(c, ms))):
            a = mbf_statedep(c, spec, PerState(rates))
            b = mbf_statedep_general(c, spec, rates, "resolvent")
            assert a == pytest.approx(b, abs=1e-12)


def test_nonpositive_rate(fig6a):
    with pytest.raises(NonpositiveRate):
        joint_stationary(fig6a, [0.0, 1.0, 1.0, 1.0])
    with pytest.raises(NonpositiveRate):
        mbf_statedep(fig6a, Martingale(), PerState([1.0, -1.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        mbf_statedep(fig6a, Martingale(), PerState([1.0, 1.0]))


@pytest.mark.parametrize("method", ["exact", "effective"])
def test_ssp_endpoints(fig9, method):
    tau = map_structure(fig9).global_tau_star
    base = np.array([0.3, 0.6, 0.4, 0.1])
    for spec in (Martingale(), TauMap(tau)):
        for p, m in ((1.0, 0.9), (0.0, 0.05)):
            pol = SemiSimple(base, 2, 0.9, 0.05, p)
            f, w = ssp_metrics(fig9, spec, pol, method)
            ref = pol.branch(m)
            assert f == pytest.approx(mbf_statedep(fig9, spec, PerState(ref)), abs=1e-12)
            assert w == pytest.approx(omega(fig9, ref), abs=1e-12)


def test_ssp_binary_pinned(binary):
    pol = SemiSimple(np.array([1.0, 1.0]), 1, 0.5, 2.0, 0.5)
    f, w = ssp_metrics(binary, Martingale(), pol)
    assert f == pytest.approx(0.646067, abs=1e-6)
    assert w == pytest.approx(0.88764, abs=1e-5)
    fe, _ = ssp_metrics(binary, Martingale(), pol, "effective")
    assert fe == pytest.approx(0.645575, abs=1e-6)
    assert mbf_statedep(binary, Martingale(), pol) == f


def test_ssp_rate_between_branches(fig9):
    base = np.array([0.3, 0.6, 0.4, 0.1])
    lo = omega(fig9, SemiSimple(base, 0, 0.05, 0.9, 1.0).branch(0.05))
    hi = omega(fig9, SemiSimple(base, 0, 0.05, 0.9, 1.0).branch(0.9))
    ws = [ssp_metrics(fig9, Martingale(), SemiSimple(base, 0, 0.05, 0.9, p))[1] for p in np.linspace(0, 1, 11)]
    assert np.all(np.diff(ws) < 0)
    assert min(ws) == pytest.approx(lo) and max(ws) == pytest.approx(hi)


def test_invalid_probability():
    with pytest.raises(ValueError):
        SemiSimple(np.ones(2), 0, 1.0, 2.0, 1.5)
