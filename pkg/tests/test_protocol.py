"""Tests for chain generation, fusion, growth and the imperfection model."""

import numpy as np
import pytest

from cavitycluster.dynamics import RB_PARAMS, PhysicalParams
from cavitycluster.hilbert import (
    AtomLevel,
    BasisLabel,
    apply_local_unitary,
    fidelity,
    inner_product,
    HADAMARD,
)
from cavitycluster import protocol as pr
from cavitycluster.protocol import (
    ChainState,
    IDEAL_MODEL,
    ImperfectionModel,
    RoundSampler,
    build_linear_cluster,
    build_four_qubit_target,
    build_fused_six_state,
    emitted_pair_state,
    fuse,
    fused_chain,
    grow_chain,
    hadamard_ends,
    loss_scaling_comparison,
    restart,
    run_generation_round,
)


def amp(chain, levels):
    return chain.state.terms.get(BasisLabel.make(levels), 0.0)


def test_emitted_pair_is_maximally_entangled():
    s = emitted_pair_state(1, None)
    assert s.norm2() == pytest.approx(1.0, abs=1e-12)
    assert len(s.terms) == 2  # |g>|L> + |e>|R>
    for label in s.terms:
        assert label.photon_count() == 1


def test_four_qubit_target_amplitudes():
    chain = build_four_qubit_target()
    expect = {
        ("g", "g", "g", "g"): 0.5,
        ("e", "e", "g", "g"): 0.5,
        ("g", "g", "e", "e"): 0.5,
        ("e", "e", "e", "e"): -0.5,
    }
    for levels, a in expect.items():
        assert amp(chain, levels) == pytest.approx(a, abs=1e-12)
    assert chain.state.norm2() == pytest.approx(1.0, abs=1e-12)


def test_briegel_cluster_signs():
    chain = build_linear_cluster(3)
    # sign flips once per adjacent pair of excited atoms
    assert amp(chain, ("e", "e", "g")) == pytest.approx(-amp(chain, ("g", "g", "g")))
    assert amp(chain, ("e", "e", "e")) == pytest.approx(amp(chain, ("g", "g", "g")))
    assert chain.state.norm2() == pytest.approx(1.0, abs=1e-12)


def test_target_equals_cluster_after_end_hadamards():
    rotated = hadamard_ends(build_four_qubit_target())
    cluster = build_linear_cluster(4)
    overlap = abs(inner_product(rotated.state, cluster.state))
    assert overlap == pytest.approx(1.0, abs=1e-12)


def test_ideal_generation_round():
    table = run_generation_round(IDEAL_MODEL)
    assert table.network_acceptance == pytest.approx(1.0 / 8.0, abs=1e-12)
    assert table.emission_joint == pytest.approx(1.0, abs=1e-12)
    assert table.acceptance == pytest.approx(1.0 / 8.0, abs=1e-12)
    assert table.mean_corrected_fidelity == pytest.approx(1.0, abs=1e-12)
    assert sum(e.probability for e in table.entries) == pytest.approx(1.0, abs=1e-12)


def test_cavity_model_scales_acceptance():
    model = ImperfectionModel(cavity_params=(RB_PARAMS,) * 4)
    table = run_generation_round(model)
    leak = table.per_cavity_leak[0]
    assert leak == pytest.approx(0.4358353510895884, abs=1e-9)
    assert table.emission_joint == pytest.approx(leak ** 4, abs=1e-12)
    assert table.acceptance == pytest.approx(leak ** 4 / 8.0, abs=1e-12)
    assert table.mean_corrected_fidelity == pytest.approx(1.0, abs=1e-9)


def test_mismatched_cavities_reduce_fidelity():
    detuned = PhysicalParams(h=RB_PARAMS.h * 1.2, kappa=RB_PARAMS.kappa,
                             gamma=RB_PARAMS.gamma)
    model = ImperfectionModel(cavity_params=(RB_PARAMS, detuned, RB_PARAMS,
                                             RB_PARAMS))
    table = run_generation_round(model)
    assert table.mean_corrected_fidelity < 1.0 - 1e-6
    assert table.mean_corrected_fidelity > 0.5


def test_fusion_target_amplitudes():
    chain = build_fused_six_state()
    root = 1.0 / (2.0 * np.sqrt(2.0))
    expect = {
        ("g",) * 6: root,
        ("e", "e", "g", "g", "g", "g"): root,
        ("g", "g", "e", "e", "g", "g"): root,
        ("g", "g", "g", "g", "e", "e"): root,
        ("e", "e", "e", "e", "g", "g"): -root,
        ("e", "e", "g", "g", "e", "e"): root,
        ("g", "g", "e", "e", "e", "e"): -root,
        ("e", "e", "e", "e", "e", "e"): root,
    }
    assert len(chain.state.terms) == 8
    for levels, a in expect.items():
        assert amp(chain, levels) == pytest.approx(a, abs=1e-12)


def test_fusion_of_two_ideal_chains():
    a = build_four_qubit_target()
    b = ChainState(tuple(i + 4 for i in a.atom_ids), a.state)
    result = fuse(a, b)
    assert result.acceptance == pytest.approx(0.5, abs=1e-12)
    assert result.fused_length == 6
    assert result.mean_corrected_fidelity == pytest.approx(1.0, abs=1e-12)
    merged = fused_chain(result)
    assert len(merged.atom_ids) == 6
    assert abs(inner_product(merged.state, build_fused_six_state().state)) \
        == pytest.approx(1.0, abs=1e-12)


def test_fusion_patterns_uniform():
    a = build_four_qubit_target()
    b = ChainState(tuple(i + 4 for i in a.atom_ids), a.state)
    result = fuse(a, b)
    accepted = [e for e in result.entries if e.accepted]
    assert len(accepted) == 4
    for e in accepted:
        assert e.probability == pytest.approx(1.0 / 8.0, abs=1e-12)


def test_round_sampler_matches_exact_acceptance():
    sampler = RoundSampler(IDEAL_MODEL)
    rng = np.random.default_rng(42)
    acc = sampler.sample_acceptances(rng, 40000)
    freq = acc.mean()
    sigma = np.sqrt((1 / 8) * (7 / 8) / acc.size)
    assert abs(freq - 1 / 8) < 4 * sigma


def test_round_sampler_round_draw():
    sampler = RoundSampler(IDEAL_MODEL)
    rng = np.random.default_rng(1)
    seen_accept = False
    for _ in range(60):
        result = sampler.sample_round(rng)
        if result.accepted:
            seen_accept = True
            assert result.fidelity_to_target == pytest.approx(1.0, abs=1e-9)
    assert seen_accept


def test_restart_probability():
    q = pr.restart_step2_leak_probability(RB_PARAMS)
    assert q == pytest.approx(0.4275534441805225, abs=1e-12)
    rng = np.random.default_rng(9)
    res = restart(AtomLevel.G, RB_PARAMS, rng=rng)
    assert res.success_probability == pytest.approx(q, abs=1e-12)
    many = restart(AtomLevel.G, RB_PARAMS, rng=rng, retries=50)
    # cumulative success over 51 independent tries
    assert many.success_probability == pytest.approx(1 - (1 - q) ** 51, abs=1e-9)


def test_grow_chain_reaches_target():
    rng = np.random.default_rng(31)
    stats = grow_chain(8, IDEAL_MODEL, rng=rng)
    assert len(stats.final_chain.atom_ids) >= 8
    assert stats.fusion_attempts >= 1
    assert stats.generation_rounds >= stats.fusion_attempts


def test_loss_scaling_comparison():
    out = loss_scaling_comparison(0.1, 5)
    assert out["this_scheme"] == pytest.approx(0.9 ** 5, abs=1e-15)
    assert out["cascade_scheme"] == pytest.approx(0.9 ** 10, abs=1e-15)
    ratio = out["this_scheme"] / out["cascade_scheme"]
    assert ratio == pytest.approx(0.9 ** -5, rel=1e-12)


def test_dark_probability_conversion():
    kappa = 2 * np.pi * 2.4
    model = ImperfectionModel(dark_rate_hz=100.0, window=3.0 / kappa)
    # 100 Hz over a 0.199 us window
    assert model.dark_probability() == pytest.approx(1.98943678865e-05, rel=1e-9)
