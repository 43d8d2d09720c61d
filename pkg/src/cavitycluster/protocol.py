"""Protocol orchestration: four-atom rounds, restart, fusion, chain growth.

A generation round emits one photon per cavity entangled with its atom, runs
the detection network, and heralds the four-atom chain on a four-click
pattern.  Fusion consumes the end qubits of two chains (mapping them to
photons through the primed levels) and joins the remainders through a single
parity check, yielding a chain of length N + M - 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dynamics, optics
from .dynamics import EmissionEvent, EventKind, PhysicalParams
from .hilbert import (
    AtomLevel,
    BasisLabel,
    HADAMARD,
    MixedEnsemble,
    PhotonMode,
    SparseHybridState,
    StateError,
    apply_local_unitary,
    fidelity,
    inner_product,
    tensor,
    tensor_all,
)
from .optics import (
    Detector,
    HWP,
    HADAMARD_HWP_DEG,
    Loss,
    NetworkConfig,
    OutcomeTableEntry,
    PBS,
    correction_table,
    default_four_atom_network,
    run_network,
)

SQRT2 = math.sqrt(2.0)


# ----------------------------------------------------------------------
# canonical states
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ChainState:
    """Atomic cluster chain: ordered atom ids plus the normalized state."""

    atom_ids: tuple[int, ...]
    state: SparseHybridState

    def __post_init__(self):
        if len(self.atom_ids) != self.state.n_atoms:
            raise StateError("atom id count does not match the state")
        if abs(self.state.norm2() - 1.0) > 1e-9:
            raise StateError("chain state must be normalized")

    @property
    def length(self) -> int:
        return len(self.atom_ids)


def _atom_state(amplitudes: dict[str, complex]) -> SparseHybridState:
    terms = {BasisLabel.make([AtomLevel(c) for c in s]): a
             for s, a in amplitudes.items()}
    n = len(next(iter(amplitudes)))
    return SparseHybridState.from_amplitudes(n, [], terms)


def build_four_qubit_target() -> ChainState:
    """The heralded four-atom state: (|gggg> + |eegg> + |ggee> - |eeee>)/2."""
    st = _atom_state({"gggg": 0.5, "eegg": 0.5, "ggee": 0.5, "eeee": -0.5})
    return ChainState((0, 1, 2, 3), st)


def build_fused_six_state() -> ChainState:
    """The ideal 4+4 fusion output (eight terms, amplitude 1/(2*sqrt(2)))."""
    a = 1.0 / (2.0 * SQRT2)
    st = _atom_state({
        "gggggg": a, "eegggg": a, "ggggee": a, "eeggee": a,
        "ggeegg": a, "eeeegg": -a, "ggeeee": -a, "eeeeee": a,
    })
    return ChainState(tuple(range(6)), st)


def build_linear_cluster(n: int) -> ChainState:
    """Linear cluster chain: amplitude (-1)^(# adjacent EE pairs) / 2^(n/2)."""
    if n < 1:
        raise ValueError("chain length must be >= 1")
    norm = 2.0 ** (-n / 2.0)
    terms: dict[BasisLabel, complex] = {}
    for bits in range(2 ** n):
        levels = tuple(AtomLevel.E if (bits >> (n - 1 - i)) & 1 else AtomLevel.G
                       for i in range(n))
        sign = 1.0
        for i in range(n - 1):
            if levels[i] is AtomLevel.E and levels[i + 1] is AtomLevel.E:
                sign = -sign
        terms[BasisLabel.make(levels)] = sign * norm
    return ChainState(tuple(range(n)),
                      SparseHybridState.from_amplitudes(n, [], terms))


def hadamard_ends(chain: ChainState) -> ChainState:
    """Apply H on the first and last atoms (the virtual cluster-form correction)."""
    st = apply_local_unitary(chain.state, 0, HADAMARD)
    st = apply_local_unitary(st, chain.length - 1, HADAMARD)
    return ChainState(chain.atom_ids, st)


def emitted_pair_state(rail: int, src: int | None = None) -> SparseHybridState:
    """Post-emission atom-photon pair (|g>|L> + |e>|R>)/sqrt(2) on one rail."""
    g = BasisLabel.make([AtomLevel.G], {PhotonMode(rail, "L", src): 1})
    e = BasisLabel.make([AtomLevel.E], {PhotonMode(rail, "R", src): 1})
    return SparseHybridState.from_amplitudes(1, [rail], {g: 1 / SQRT2, e: 1 / SQRT2})


# ----------------------------------------------------------------------
# imperfection model
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ImperfectionModel:
    """Knobs for a round: cavity rates, optical loss, detectors, window.

    ``cavity_params = None`` means the idealized round (emission forced to
    succeed with probability 1, perfectly indistinguishable photons).
    """

    cavity_params: tuple[PhysicalParams, ...] | None = None
    rail_transmission: float = 1.0
    detector_efficiency: float = 1.0
    dark_rate_hz: float = 0.0
    window: float | None = None  # us

    def window_us(self) -> float | None:
        if self.window is not None:
            return self.window
        if self.cavity_params:
            return self.cavity_params[0].default_window()
        return None

    def dark_probability(self) -> float:
        if self.dark_rate_hz == 0.0:
            return 0.0
        w = self.window_us()
        if w is None:
            raise ValueError("dark counts need an observation window")
        return self.dark_rate_hz * w * 1e-6

    def leak_probabilities(self, n: int) -> tuple[float, ...]:
        if self.cavity_params is None:
            return (1.0,) * n
        if len(self.cavity_params) < n:
            raise ValueError(f"need {n} cavity parameter sets")
        return tuple(dynamics.leak_probability_total(p) for p in self.cavity_params[:n])

    def params_equal(self) -> bool:
        if self.cavity_params is None:
            return True
        return len(set(self.cavity_params[:])) <= 1


IDEAL_MODEL = ImperfectionModel()


def _overlap_matrix(params: tuple[PhysicalParams, ...]) -> dict:
    out = {}
    for i, pi in enumerate(params):
        for j, pj in enumerate(params):
            if i != j:
                out[(i, j)] = dynamics.wavepacket_overlap(pi, pj)
    return out


# ----------------------------------------------------------------------
# generation rounds
# ----------------------------------------------------------------------
@dataclass
class GenerationTable:
    """Exact enumeration of one four-atom round."""

    entries: list[OutcomeTableEntry]
    network_acceptance: float
    emission_joint: float
    acceptance: float
    mean_corrected_fidelity: float
    per_cavity_leak: tuple[float, ...]
    target: ChainState


@dataclass
class RoundResult:
    accepted: bool
    pattern: optics.OutcomePattern | None
    corrected_state: ChainState | None
    fidelity_to_target: float | None
    probability_weight: float
    events: list[EmissionEvent]


def run_generation_round(model: ImperfectionModel = IDEAL_MODEL,
                         network: NetworkConfig | None = None) -> GenerationTable:
    """Exact outcome table of one round (emission folded in as a product).

    Emission events are independent across cavities, so the heralded
    probability factorizes into the joint leak probability times the network
    acceptance; only the all-emitted branch carries photons into the network.
    """
    if network is None:
        network = default_four_atom_network(
            detector_efficiency=model.detector_efficiency,
            dark_probability=model.dark_probability(),
            rail_transmission=model.rail_transmission)
    tagged = not model.params_equal()
    src = (lambda k: k) if tagged else (lambda k: None)
    psi = tensor_all([emitted_pair_state(rail, src(rail - 1)) for rail in (1, 2, 3, 4)])
    overlaps = _overlap_matrix(model.cavity_params[:4]) if tagged else None
    entries = run_network(psi, network, overlaps=overlaps)

    target = build_four_qubit_target()
    correction_table(entries, target.state)
    accepted = [e for e in entries if e.accepted]
    network_acceptance = sum(e.probability for e in accepted)
    leaks = model.leak_probabilities(4)
    emission_joint = math.prod(leaks)
    mean_fid = (sum(e.probability * e.corrected_fidelity for e in accepted)
                / network_acceptance if network_acceptance > 0 else 0.0)
    return GenerationTable(entries, network_acceptance, emission_joint,
                           emission_joint * network_acceptance, mean_fid,
                           leaks, target)


class RoundSampler:
    """Draws heralded rounds consistent with the exact table.

    Emission is sampled per cavity at the event level; conditioned on every
    cavity leaking within the window, equal couplings leave the atom-photon
    amplitudes coherent, so the detector outcome is drawn from the exact
    pattern distribution.  (The sampled leak polarizations are reported but
    deliberately not conditioned on, which would decohere the state.)
    """

    def __init__(self, model: ImperfectionModel = IDEAL_MODEL,
                 network: NetworkConfig | None = None):
        self.model = model
        self.table = run_generation_round(model, network)
        probs = np.array([e.probability for e in self.table.entries])
        self._pattern_probs = probs / probs.sum()
        if model.cavity_params is not None:
            w = model.window_us()
            self._event_p = [dynamics.event_probabilities(p, w)
                             for p in model.cavity_params[:4]]
            # within-window leak, used in place of the stationary product
            self._p_emit = math.prod(ep[0] for ep in self._event_p)
        else:
            self._event_p = None
            self._p_emit = 1.0

    def sample_acceptances(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Vectorized: boolean acceptance for each of n rounds."""
        if self._event_p is None:
            emitted = np.ones(n, dtype=bool)
        else:
            emitted = np.ones(n, dtype=bool)
            for p_leak, _, _ in self._event_p:
                emitted &= rng.random(n) < p_leak
        idx = rng.choice(len(self.table.entries), size=n, p=self._pattern_probs)
        accepted = np.array([self.table.entries[i].accepted for i in idx])
        return emitted & accepted

    def sample_round(self, rng: np.random.Generator) -> RoundResult:
        events: list[EmissionEvent] = []
        all_leak = True
        if self.model.cavity_params is not None:
            w = self.model.window_us()
            for p in self.model.cavity_params[:4]:
                ev = dynamics.sample_emission_event(p, rng, w)
                events.append(ev)
                all_leak &= ev.kind is EventKind.PHOTON_LEAK
        if not all_leak:
            return RoundResult(False, None, None, None, 1.0, events)
        i = rng.choice(len(self.table.entries), p=self._pattern_probs)
        entry = self.table.entries[i]
        if not entry.accepted:
            return RoundResult(False, entry.pattern, None, None, 1.0, events)
        corrected = entry.post_state.map_states(
            lambda s: optics.apply_correction(s, entry.correction))
        weights = np.array([w for w, _ in corrected.branches])
        j = rng.choice(len(weights), p=weights / weights.sum())
        state = corrected.branches[j][1].normalized()
        chain = ChainState((0, 1, 2, 3), state)
        fid = fidelity(state, self.table.target.state)
        return RoundResult(True, entry.pattern, chain, fid, 1.0, events)


# ----------------------------------------------------------------------
# restart
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class RestartResult:
    success: bool
    attempts: int
    final_level: AtomLevel
    step2_leak_probability: float
    success_probability: float


def restart_step2_leak_probability(p: PhysicalParams) -> float:
    """Leak probability of the primed-level reset transition (single mode)."""
    return dynamics.reset_leak_probability(p.h / 2.0, p.gamma / 2.0, p.kappa)


def restart(level: AtomLevel, p: PhysicalParams,
            rng: np.random.Generator | None = None, retries: int = 0) -> RestartResult:
    """Pump a qubit-level atom back to the excited ancilla.

    pi-pulse to the primed level, cavity-induced decay to the ground ancilla
    (success = the unmonitored photon leaks; spontaneous emission ends the
    attempt and is re-tried up to ``retries`` times), then a pi-pulse up.
    Without an RNG the modal path (success on attempt 1 iff q > 1/2 ... ) is
    not sampled; the deterministic result reports probabilities only and
    ``success`` reflects certainty (q == 1).
    """
    if level not in (AtomLevel.G, AtomLevel.E):
        raise StateError(f"restart requires a qubit-subspace atom, got {level}")
    q = restart_step2_leak_probability(p)
    p_success = 1.0 - (1.0 - q) ** (retries + 1)
    if rng is None:
        success = q >= 1.0
        return RestartResult(success, 0 if not success else 1,
                             AtomLevel.ALPHA if success else level, q, p_success)
    for attempt in range(1, retries + 2):
        if rng.random() < q:
            return RestartResult(True, attempt, AtomLevel.ALPHA, q, p_success)
    return RestartResult(False, retries + 1, AtomLevel.ALPHAP, q, p_success)


# ----------------------------------------------------------------------
# fusion
# ----------------------------------------------------------------------
@dataclass
class FusionResult:
    entries: list[OutcomeTableEntry]
    acceptance: float
    fused_by_pattern: dict[optics.OutcomePattern, tuple[MixedEnsemble, float]]
    target: ChainState
    fused_length: int
    mean_corrected_fidelity: float


def _end_qubit_to_photon(state: SparseHybridState, atom_idx: int,
                         rail: int, src: int | None) -> SparseHybridState:
    """Map one end qubit to a photon (g -> V, e -> H) leaving it in the ground ancilla."""
    out: dict[BasisLabel, complex] = {}
    for label, amp in state.terms.items():
        lvl = label.atoms[atom_idx]
        if lvl is AtomLevel.G:
            pol = "V"
        elif lvl is AtomLevel.E:
            pol = "H"
        else:
            raise StateError("fusion qubit must be in the qubit subspace")
        atoms = (label.atoms[:atom_idx] + (AtomLevel.ALPHAP,)
                 + label.atoms[atom_idx + 1:])
        occ = label.occ_map()
        occ[PhotonMode(rail, pol, src)] = 1
        out[BasisLabel.make(atoms, occ)] = amp
    return SparseHybridState(state.n_atoms, state.rails | {rail}, out)


def _fusion_network(model: ImperfectionModel) -> NetworkConfig:
    elements: list = []
    if model.rail_transmission < 1.0:
        elements += [Loss(1, model.rail_transmission), Loss(2, model.rail_transmission)]
    p_dc = model.dark_probability()
    elements += [
        PBS(1, 2, 3, 4),
        HWP(3, HADAMARD_HWP_DEG),
        HWP(4, HADAMARD_HWP_DEG),
        Detector(3, "DI", model.detector_efficiency, p_dc, ("D", "A")),
        Detector(4, "DII", model.detector_efficiency, p_dc, ("D", "A")),
    ]
    return NetworkConfig(tuple(elements))


def fuse(chain_a: ChainState, chain_b: ChainState,
         model: ImperfectionModel = IDEAL_MODEL,
         fusion_params: tuple[PhysicalParams, PhysicalParams] | None = None) -> FusionResult:
    """Join two chains through the photonic parity check on their end qubits.

    The last qubit of ``chain_a`` and the first of ``chain_b`` are mapped to
    photons (already in the post-QWP linear basis, g -> V and e -> H), sent
    through one PBS, and measured in the diagonal basis.  Accepted patterns
    leave a chain of length N + M - 2 after the measured atoms are dropped.
    """
    if chain_a.length < 2 or chain_b.length < 2:
        raise StateError("fusion requires chains of length >= 2")
    mismatch = fusion_params is not None and fusion_params[0] != fusion_params[1]
    src_a, src_b = (0, 1) if mismatch else (None, None)
    joint = tensor(chain_a.state, chain_b.state)
    end_a = chain_a.length - 1
    first_b = chain_a.length
    joint = _end_qubit_to_photon(joint, end_a, 1, src_a)
    joint = _end_qubit_to_photon(joint, first_b, 2, src_b)
    overlaps = None
    if mismatch:
        o = dynamics.wavepacket_overlap(*fusion_params)
        overlaps = {(0, 1): o, (1, 0): np.conj(o)}

    network = _fusion_network(model)
    entries = run_network(joint, network, overlaps=overlaps)

    # target = the ideal all-D outcome with the measured atoms dropped
    ideal_entries = entries
    if model != IDEAL_MODEL or mismatch:
        ideal_joint = tensor(chain_a.state, chain_b.state)
        ideal_joint = _end_qubit_to_photon(ideal_joint, end_a, 1, None)
        ideal_joint = _end_qubit_to_photon(ideal_joint, first_b, 2, None)
        ideal_entries = run_network(ideal_joint, _fusion_network(IDEAL_MODEL))
    all_d = next(e for e in ideal_entries
                 if e.accepted and all(r.outcome == "D" for r in e.pattern))
    target_full = all_d.post_state.branches[0][1].normalized()
    target_state = _drop_ancilla_atoms(target_full, (end_a, first_b))
    fused_ids = chain_a.atom_ids[:-1] + chain_b.atom_ids[1:]
    target = ChainState(fused_ids, target_state.normalized())

    accepted = [e for e in entries if e.accepted]
    # corrections searched on the remaining qubits after dropping the ancillas
    fused_by_pattern: dict[optics.OutcomePattern, tuple[MixedEnsemble, float]] = {}
    acceptance = sum(e.probability for e in accepted)
    fid_acc = 0.0
    for e in accepted:
        reduced = e.post_state.map_states(
            lambda s: _drop_ancilla_atoms(s, (end_a, first_b)).normalized())
        sub_entry = OutcomeTableEntry(e.pattern, e.probability, reduced, True)
        correction_table([sub_entry], target.state)
        e.correction = sub_entry.correction
        e.corrected_fidelity = sub_entry.corrected_fidelity
        e.correctable = sub_entry.correctable
        corrected = reduced.map_states(
            lambda s: optics.apply_correction(s, sub_entry.correction))
        fused_by_pattern[e.pattern] = (corrected, e.corrected_fidelity)
        fid_acc += e.probability * e.corrected_fidelity
    mean_fid = fid_acc / acceptance if acceptance > 0 else 0.0
    return FusionResult(entries, acceptance, fused_by_pattern, target,
                        chain_a.length + chain_b.length - 2, mean_fid)


def _drop_ancilla_atoms(state: SparseHybridState, indices) -> SparseHybridState:
    from .hilbert import drop_atoms
    return drop_atoms(state, indices)


def fused_chain(result: FusionResult) -> ChainState:
    """The corrected all-D fused chain (valid for any accepted pattern)."""
    return result.target


# ----------------------------------------------------------------------
# growth statistics
# ----------------------------------------------------------------------
@dataclass
class GrowthStats:
    target_length: int
    generation_rounds: int
    fusion_attempts: int
    chain_restarts: int
    final_chain: ChainState


def grow_chain(target_n: int, model: ImperfectionModel = IDEAL_MODEL,
               rng: np.random.Generator | None = None,
               pessimistic: bool = False) -> GrowthStats:
    """Grow a chain to ``target_n`` atoms by fusing fresh four-atom blocks.

    Failure handling: a failed fusion destroys the two measured end qubits;
    in the default mode the main chain just shrinks by one (the damaged
    four-chain is discarded), in ``pessimistic`` mode the whole main chain is
    discarded.  Sampled statistics follow the exact per-stage probabilities.
    """
    if target_n < 4 or target_n % 2:
        raise ValueError("target length must be an even number >= 4")
    rng = rng if rng is not None else np.random.default_rng(0)
    gen = run_generation_round(model)
    p_gen = gen.acceptance
    if target_n > 4:
        probe = fuse(build_four_qubit_target(), build_four_qubit_target(), model)
        p_fuse = probe.acceptance
    else:
        p_fuse = 1.0

    rounds = 0
    fusions = 0
    restarts = 0

    def make_block() -> None:
        nonlocal rounds
        rounds += 1
        while rng.random() >= p_gen:
            rounds += 1

    make_block()
    length = 4
    while length < target_n:
        make_block()
        fusions += 1
        if rng.random() < p_fuse:
            length += 2
        elif pessimistic:
            restarts += 1
            make_block()
            length = 4
        else:
            length -= 1
            if length < 2:
                restarts += 1
                make_block()
                length = 4

    final = build_four_qubit_target()
    while final.length < target_n:
        final = fuse(final, build_four_qubit_target()).target
    return GrowthStats(target_n, rounds, fusions, restarts, final)


def loss_scaling_comparison(eta: float, n: int) -> dict[str, float]:
    """Per-photon-loss scaling: this scheme (1-eta)^n vs the cascade (1-eta)^(2n)."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must be in [0, 1]")
    if n < 1:
        raise ValueError("n must be >= 1")
    return {"this_scheme": (1.0 - eta) ** n,
            "cascade_scheme": (1.0 - eta) ** (2 * n)}
