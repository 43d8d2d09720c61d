"""Tests for the cavity emission dynamics: closed forms, oracles, sampling."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavitycluster import dynamics as dyn
from cavitycluster.dynamics import (
    PhysicalParams,
    RB_PARAMS,
    ION_PARAMS,
    amplitudes_at,
    beta,
    emission_probability,
    event_probabilities,
    leak_probability_quadrature,
    leak_probability_total,
    maximize_emission_probability,
    ode_oracle_integrate,
    sample_emission_events,
    spont_probability_quadrature,
    spont_probability_total,
    wavepacket_overlap,
)

RATE = st.floats(min_value=0.5, max_value=300.0)


def test_params_from_mhz_roundtrip():
    p = dyn.params_from_mhz(27.0, 2.4, 6.0)
    assert p.h == pytest.approx(2 * np.pi * 27.0)
    assert p.kappa == pytest.approx(2 * np.pi * 2.4)
    assert p.gamma == pytest.approx(2 * np.pi * 6.0)


def test_default_window_is_three_cavity_lifetimes():
    assert RB_PARAMS.default_window() == pytest.approx(3.0 / RB_PARAMS.kappa)


def test_initial_conditions():
    a = amplitudes_at(RB_PARAMS, 0.0)
    assert a.c_alpha == pytest.approx(1.0)
    assert a.c_g == 0.0
    assert a.c_e == 0.0


def test_symmetry_of_ground_state_amplitudes():
    # the two target levels are populated identically at all times
    for t in (0.01, 0.05, 0.2):
        a = amplitudes_at(RB_PARAMS, t)
        assert a.c_g == a.c_e


def test_closed_form_matches_ode_at_reference_point():
    ts = np.linspace(0.0, 0.3, 31)
    ode = ode_oracle_integrate(RB_PARAMS, ts)
    for t, o in zip(ts, ode):
        a = amplitudes_at(RB_PARAMS, t)
        assert abs(a.c_alpha - o.c_alpha) < 1e-10
        assert abs(a.c_g - o.c_g) < 1e-10


@given(h=RATE, kappa=RATE, gamma=RATE, t=st.floats(min_value=0.0, max_value=0.5))
@settings(max_examples=60, deadline=None)
def test_amplitudes_bounded(h, kappa, gamma, t):
    p = PhysicalParams(h=h, kappa=kappa, gamma=gamma)
    a = amplitudes_at(p, t)
    total = abs(a.c_alpha) ** 2 + abs(a.c_g) ** 2 + abs(a.c_e) ** 2
    assert total <= 1.0 + 1e-10


@given(h=RATE, kappa=RATE, gamma=RATE)
@settings(max_examples=40, deadline=None)
def test_conservation_closed_form(h, kappa, gamma):
    p = PhysicalParams(h=h, kappa=kappa, gamma=gamma)
    total = leak_probability_total(p) + spont_probability_total(p)
    assert total == pytest.approx(1.0, abs=1e-10)


def test_leak_closed_form_vs_quadrature():
    for p in (RB_PARAMS, ION_PARAMS):
        assert leak_probability_total(p) == pytest.approx(
            leak_probability_quadrature(p), abs=1e-8
        )
        assert spont_probability_total(p) == pytest.approx(
            spont_probability_quadrature(p), abs=1e-8
        )


def test_leak_reference_values():
    # frozen from the closed form, cross-checked by time integration above
    assert leak_probability_total(RB_PARAMS) == pytest.approx(
        0.4358353510895884, abs=1e-12
    )
    assert leak_probability_total(ION_PARAMS) == pytest.approx(
        0.3629032258064516, abs=1e-12
    )


def test_beta_imaginary_in_strong_coupling():
    b = beta(RB_PARAMS)
    assert b.real == pytest.approx(0.0, abs=1e-12)
    assert b.imag == pytest.approx(119.9430288061957, abs=1e-9)


def test_beta_continuity_across_degeneracy():
    # amplitudes must pass smoothly through the point where beta -> 0
    kappa, gamma = 10.0, 4.0
    h_crit = np.sqrt((kappa + gamma / 2) ** 2 / 2 - gamma * kappa)
    t = 0.07
    lo = amplitudes_at(PhysicalParams(h=h_crit * (1 - 1e-9), kappa=kappa, gamma=gamma), t)
    hi = amplitudes_at(PhysicalParams(h=h_crit * (1 + 1e-9), kappa=kappa, gamma=gamma), t)
    assert abs(lo.c_alpha - hi.c_alpha) < 1e-7
    assert abs(lo.c_g - hi.c_g) < 1e-7


def test_emission_probability_peak():
    t_star, p_star = maximize_emission_probability(RB_PARAMS)
    assert t_star == pytest.approx(0.0119247407703, abs=1e-6)
    assert p_star == pytest.approx(0.654320855989, abs=1e-9)
    # frozen from a dense scan; confirm it is a local maximum
    eps = 1e-4
    assert emission_probability(RB_PARAMS, t_star - eps) < p_star
    assert emission_probability(RB_PARAMS, t_star + eps) < p_star


def test_lossless_emission_is_certain():
    p = PhysicalParams(h=50.0, kappa=0.0, gamma=0.0)
    t = np.pi / (np.sqrt(2.0) * p.h)
    assert emission_probability(p, t) == pytest.approx(1.0, abs=1e-12)


def test_window_event_probabilities_sum_to_one():
    window = RB_PARAMS.default_window()
    leak, spont, none = event_probabilities(RB_PARAMS, window)
    assert leak + spont + none == pytest.approx(1.0, abs=1e-10)
    assert leak == pytest.approx(leak_probability_quadrature(RB_PARAMS, upper=window), abs=1e-8)


def test_event_sampler_frequencies():
    rng = np.random.default_rng(11)
    window = RB_PARAMS.default_window()
    kinds, _, _ = sample_emission_events(RB_PARAMS, rng, 20000, window=window)
    leak, spont, none = event_probabilities(RB_PARAMS, window)
    n_leak = np.sum(kinds == dyn.EventKind.PHOTON_LEAK)
    sigma = np.sqrt(leak * (1 - leak) / kinds.size)
    assert abs(n_leak / kinds.size - leak) < 4 * sigma


def test_sampled_leak_times_within_window():
    rng = np.random.default_rng(3)
    window = RB_PARAMS.default_window()
    kinds, times, _ = sample_emission_events(RB_PARAMS, rng, 500, window=window)
    mask = kinds != dyn.EventKind.NO_EVENT
    assert np.all(times[mask] >= 0.0)
    assert np.all(times[mask] <= window)


def test_wavepacket_overlap_normalisation():
    assert wavepacket_overlap(RB_PARAMS, RB_PARAMS) == pytest.approx(1.0, abs=1e-9)


def test_wavepacket_overlap_mismatched_cavities():
    pert = PhysicalParams(
        h=RB_PARAMS.h * 1.1, kappa=RB_PARAMS.kappa, gamma=RB_PARAMS.gamma
    )
    ov = wavepacket_overlap(RB_PARAMS, pert)
    assert abs(ov) < 1.0
    assert abs(ov) == pytest.approx(0.8869569217792003, abs=1e-7)
    assert wavepacket_overlap(pert, RB_PARAMS) == pytest.approx(np.conj(ov), abs=1e-9)


def test_reset_leak_probability_reference():
    q = dyn.reset_leak_probability(RB_PARAMS.h / 2, RB_PARAMS.gamma / 2, RB_PARAMS.kappa)
    assert q == pytest.approx(0.4275534441805225, abs=1e-12)


def test_zero_decay_with_coupling_rejected():
    p = PhysicalParams(h=10.0, kappa=0.0, gamma=0.0)
    with pytest.raises(ValueError):
        leak_probability_total(p)
