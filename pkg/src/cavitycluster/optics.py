"""Polarization linear optics on sparse hybrid states.

Elements: quarter-wave plate (circular -> linear relabeling), half-wave plate
(Jones rotation), polarizing beam splitter (transmit H, reflect V, no
reflection phase), per-rail loss, and polarization-resolving detectors with
efficiency and dark counts.  ``run_network`` applies an element list in order
and enumerates every click pattern exactly, including rejected ones, so the
pattern probabilities always sum to 1.

Photons carrying distinct source tags are treated as distinct modes; at
detection, coherence between source assignments is weighted by the supplied
temporal-overlap matrix (partial-distinguishability model).  Two-photon modes
use sorted pairwise overlap matching, an approximation documented in the
package notes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product as iter_product
from typing import Callable, Iterable, Mapping

import numpy as np

from .hilbert import (
    BasisLabel,
    MixedEnsemble,
    PAULI_X,
    PAULI_Z,
    PhotonMode,
    SparseHybridState,
    StateError,
    _canonical_occ,
    apply_local_unitary,
    apply_rail_jones,
    as_ensemble,
    inner_product,
    move_modes,
    relabel_rail_pols,
)

HADAMARD_HWP_DEG = 22.5


class NetworkError(ValueError):
    """Raised for ill-formed network configurations."""


# ----------------------------------------------------------------------
# elements
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class QWP:
    rail: int


@dataclass(frozen=True)
class HWP:
    rail: int
    angle_deg: float


@dataclass(frozen=True)
class PBS:
    in_a: int
    in_b: int
    out_1: int
    out_2: int


@dataclass(frozen=True)
class Loss:
    rail: int
    transmission: float


@dataclass(frozen=True)
class Detector:
    rail: int
    id: str
    efficiency: float = 1.0
    dark_probability: float = 0.0
    labels: tuple[str, str] = ("H", "V")  # display names of the (H, V) channels


Element = QWP | HWP | PBS | Loss | Detector


@dataclass(frozen=True)
class NetworkConfig:
    """Ordered element list; acceptance is one click per declared detector."""

    elements: tuple[Element, ...]

    def __post_init__(self):
        consumed: set[int] = set()
        live: set[int] = set()
        for el in self.elements:
            if isinstance(el, (QWP, HWP, Loss)):
                if el.rail in consumed:
                    raise NetworkError(f"element {el} uses consumed rail {el.rail}")
                live.add(el.rail)
                if isinstance(el, Loss) and not 0.0 <= el.transmission <= 1.0:
                    raise NetworkError("transmission must be in [0, 1]")
                if isinstance(el, HWP) and not 0.0 <= el.angle_deg < 180.0:
                    raise NetworkError("HWP angle must be in [0, 180)")
            elif isinstance(el, PBS):
                for r in (el.in_a, el.in_b):
                    if r in consumed:
                        raise NetworkError(f"PBS input rail {r} already consumed")
                    consumed.add(r)
                for r in (el.out_1, el.out_2):
                    if r in consumed or r in live:
                        raise NetworkError(f"PBS output rail {r} is not fresh")
                    live.add(r)
            elif isinstance(el, Detector):
                if el.rail in consumed:
                    raise NetworkError(f"detector rail {el.rail} already consumed")
                consumed.add(el.rail)
                if not 0.0 <= el.efficiency <= 1.0 or not 0.0 <= el.dark_probability <= 1.0:
                    raise NetworkError("detector efficiency/dark probability out of range")
            else:
                raise NetworkError(f"unknown element {el!r}")
        ids = [el.id for el in self.elements if isinstance(el, Detector)]
        if len(ids) != len(set(ids)):
            raise NetworkError("duplicate detector ids")

    @property
    def detectors(self) -> tuple[Detector, ...]:
        return tuple(el for el in self.elements if isinstance(el, Detector))


# ----------------------------------------------------------------------
# element actions
# ----------------------------------------------------------------------
def _rail_pols(state: SparseHybridState, rail: int) -> set[str]:
    return {m.pol for label in state.terms for m, _ in label.occ if m.rail == rail}


def apply_qwp(state: SparseHybridState, rail: int) -> SparseHybridState:
    """Relabel circular to linear polarization on one rail: L -> H, R -> V."""
    if _rail_pols(state, rail) & {"H", "V"}:
        raise StateError(f"QWP on rail {rail}: rail already linear-polarized")
    return relabel_rail_pols(state, rail, {"L": "H", "R": "V"})


def hwp_jones(angle_deg: float) -> np.ndarray:
    th = math.radians(angle_deg)
    c, s = math.cos(2 * th), math.sin(2 * th)
    return np.array([[c, s], [s, -c]], dtype=complex)


def apply_hwp(state: SparseHybridState, rail: int, angle_deg: float) -> SparseHybridState:
    """Half-wave plate: H -> cos2t H + sin2t V, V -> sin2t H - cos2t V."""
    if _rail_pols(state, rail) & {"L", "R"}:
        raise StateError(f"HWP on rail {rail}: rail still circular-polarized")
    return apply_rail_jones(state, rail, hwp_jones(angle_deg))


def apply_pbs(state: SparseHybridState, in_a: int, in_b: int,
              out_1: int, out_2: int) -> SparseHybridState:
    """Transmit H, reflect V: H_a -> H_1, V_a -> V_2, H_b -> H_2, V_b -> V_1."""
    if (_rail_pols(state, in_a) | _rail_pols(state, in_b)) & {"L", "R"}:
        raise StateError("PBS inputs must be linear-polarized")
    routing = {
        (in_a, "H"): (out_1, "H"),
        (in_a, "V"): (out_2, "V"),
        (in_b, "H"): (out_2, "H"),
        (in_b, "V"): (out_1, "V"),
    }
    return move_modes(state, routing, new_rails=(out_1, out_2))


def _loss_records(label: BasisLabel, rail: int):
    """All (lost-count per mode) patterns for this label's photons on ``rail``."""
    modes = [(m, c) for m, c in label.occ if m.rail == rail]
    choices = [range(c + 1) for _, c in modes]
    for losses in iter_product(*choices):
        yield tuple((m, k) for (m, _c), k in zip(modes, losses))


def apply_loss(obj, rail: int, transmission: float) -> MixedEnsemble:
    """Per-photon beamsplitter loss on one rail, branching into a mixture.

    Branch states are unnormalized: each branch's probability is its weight
    times its squared norm, so coherences within a branch are preserved.
    """
    if not 0.0 <= transmission <= 1.0:
        raise StateError("transmission must be in [0, 1]")
    eta = transmission
    out = MixedEnsemble()
    for w, state in as_ensemble(obj).branches:
        if eta == 1.0:
            out.add(w, state)
            continue
        branches: dict[tuple, dict[BasisLabel, complex]] = {}
        for label, amp in state.terms.items():
            for record in _loss_records(label, rail):
                factor = 1.0
                occ = label.occ_map()
                for mode, lost in record:
                    n = occ[mode]
                    kept = n - lost
                    factor *= math.sqrt(math.comb(n, lost)) \
                        * eta ** (kept / 2.0) * (1.0 - eta) ** (lost / 2.0)
                    if kept:
                        occ[mode] = kept
                    else:
                        del occ[mode]
                if factor == 0.0:
                    continue
                key = tuple(sorted(((m.sort_key(), k) for m, k in record if k)))
                dst = branches.setdefault(key, {})
                new_label = BasisLabel(label.atoms, _canonical_occ(occ))
                dst[new_label] = dst.get(new_label, 0.0) + amp * factor
        for terms in branches.values():
            out.add(w, SparseHybridState(state.n_atoms, state.rails, terms, prune_eps=0.0))
    return out


# ----------------------------------------------------------------------
# detection
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class DetectionRecord:
    detector_id: str
    outcome: str  # channel label, "none", or "both"

    @property
    def clicked(self) -> bool:
        return self.outcome != "none"


OutcomePattern = tuple[DetectionRecord, ...]


@dataclass
class OutcomeTableEntry:
    pattern: OutcomePattern
    probability: float
    post_state: MixedEnsemble  # branch weights sum to 1, states normalized
    accepted: bool
    correction: list[tuple[int, str]] | None = None
    corrected_fidelity: float | None = None
    correctable: bool | None = None


def _overlap_fn(overlaps) -> Callable[[int | None, int | None], complex]:
    if overlaps is None:
        return lambda s1, s2: 1.0 + 0.0j
    if callable(overlaps):
        return overlaps

    def ov(s1, s2):
        if s1 == s2:
            return 1.0 + 0.0j
        return complex(overlaps[(s1, s2)])

    return ov


def _pattern_of(config, det_order, labels_by_id) -> OutcomePattern:
    """Observable click pattern from an untagged occupation config."""
    counts = {did: [0, 0] for did in det_order}
    for (did, pol), c in config:
        counts[did]["HV".index(pol)] += c
    records = []
    for did in det_order:
        nh, nv = counts[did]
        lab_h, lab_v = labels_by_id[did]
        if nh and nv:
            outcome = "both"
        elif nh:
            outcome = lab_h
        elif nv:
            outcome = lab_v
        else:
            outcome = "none"
        records.append(DetectionRecord(did, outcome))
    return tuple(records)


def _sigma_gram(sigmas, ov) -> np.ndarray:
    """Gram matrix of temporal-mode overlap factors between source assignments.

    ``sigmas[i]`` is a tuple over untagged modes of sorted source tuples.
    """
    n = len(sigmas)
    g = np.eye(n, dtype=complex)
    for i in range(n):
        for j in range(i + 1, n):
            f = 1.0 + 0.0j
            for srcs_i, srcs_j in zip(sigmas[i], sigmas[j]):
                for a, b in zip(srcs_i, srcs_j):
                    f *= ov(a, b)
            g[i, j] = f
            g[j, i] = np.conj(f)
    return g


def detect_all(obj, network: NetworkConfig, overlaps=None) -> list[OutcomeTableEntry]:
    """Enumerate all polarization-resolved click patterns with exact probabilities.

    The input must have every surviving photon on a detector rail.  Detector
    efficiency is applied as loss in front of an ideal photon-number
    measurement; dark counts then upgrade empty detectors to false clicks at
    the pattern level.
    """
    detectors = network.detectors
    if not detectors:
        raise NetworkError("network declares no detectors")
    det_by_rail = {d.rail: d for d in detectors}
    det_order = [d.id for d in detectors]
    labels_by_id = {d.id: d.labels for d in detectors}
    ov = _overlap_fn(overlaps)

    ens = as_ensemble(obj)
    for d in detectors:
        if d.efficiency < 1.0:
            ens = apply_loss(ens, d.rail, d.efficiency)

    # pattern -> list of (weight, unnormalized atom state)
    collected: dict[OutcomePattern, list[tuple[float, SparseHybridState]]] = {}
    totals: dict[OutcomePattern, float] = {}

    for w, state in ens.branches:
        # group terms by untagged config, then by source assignment sigma
        by_config: dict[tuple, dict[tuple, dict[BasisLabel, complex]]] = {}
        for label, amp in state.terms.items():
            untagged: dict[tuple[str, str], int] = {}
            tagged: dict[tuple[str, str], list] = {}
            for mode, count in label.occ:
                det = det_by_rail.get(mode.rail)
                if det is None:
                    raise NetworkError(
                        f"photon amplitude on unterminated rail {mode.rail}")
                key = (det.id, mode.pol)
                untagged[key] = untagged.get(key, 0) + count
                tagged.setdefault(key, []).extend([mode.src] * count)
            config = tuple(sorted(untagged.items()))
            sigma = tuple(tuple(sorted(tagged[k], key=lambda s: -1 if s is None else s))
                          for k, _ in config)
            atom_label = BasisLabel(label.atoms, ())
            dst = by_config.setdefault(config, {}).setdefault(sigma, {})
            dst[atom_label] = dst.get(atom_label, 0.0) + amp

        for config, sigma_groups in by_config.items():
            pattern = _pattern_of(config, det_order, labels_by_id)
            sigmas = list(sigma_groups)
            vecs = [sigma_groups[s] for s in sigmas]
            if len(sigmas) == 1:
                sub = [(1.0, vecs[0])]
            else:
                g = _sigma_gram(sigmas, ov)
                evals, evecs = np.linalg.eigh(g)
                sub = []
                for m in range(len(sigmas)):
                    lam = float(evals[m])
                    if lam <= 1e-14:
                        continue
                    terms: dict[BasisLabel, complex] = {}
                    for s_idx in range(len(sigmas)):
                        coeff = evecs[s_idx, m]
                        if coeff == 0.0:
                            continue
                        for lab, a in vecs[s_idx].items():
                            terms[lab] = terms.get(lab, 0.0) + coeff * a
                    sub.append((lam, terms))
            bucket = collected.setdefault(pattern, [])
            for lam, terms in sub:
                s_atoms = SparseHybridState(state.n_atoms, frozenset(), terms,
                                            prune_eps=0.0)
                p_here = w * lam * s_atoms.norm2()
                if p_here <= 0.0:
                    continue
                bucket.append((w * lam, s_atoms))
                totals[pattern] = totals.get(pattern, 0.0) + p_here

    entries = _assemble_entries(collected, totals)
    entries = _apply_dark_counts(entries, detectors, labels_by_id, det_order)
    for e in entries:
        e.accepted = all(r.outcome not in ("none", "both") for r in e.pattern)
    entries.sort(key=lambda e: tuple((r.detector_id, r.outcome) for r in e.pattern))
    return entries


def _assemble_entries(collected, totals) -> list[OutcomeTableEntry]:
    entries = []
    for pattern, bucket in collected.items():
        prob = totals[pattern]
        post = MixedEnsemble()
        for w, s in bucket:
            p_branch = w * s.norm2()
            if p_branch > 0.0:
                post.add(p_branch / prob, s.normalized())
        entries.append(OutcomeTableEntry(pattern, prob, post, accepted=False))
    return entries


def _apply_dark_counts(entries, detectors, labels_by_id, det_order):
    if all(d.dark_probability == 0.0 for d in detectors):
        return entries
    p_dark = {d.id: d.dark_probability for d in detectors}
    merged: dict[OutcomePattern, OutcomeTableEntry] = {}
    for entry in entries:
        # every empty detector independently stays empty or fires a dark click
        # in one of its two channels (equiprobable); saturated detectors keep
        # their outcome
        options = []
        for rec in entry.pattern:
            pd = p_dark[rec.detector_id]
            if rec.outcome != "none" or pd == 0.0:
                options.append([(rec, 1.0)])
            else:
                lab_h, lab_v = labels_by_id[rec.detector_id]
                options.append([
                    (rec, 1.0 - pd),
                    (DetectionRecord(rec.detector_id, lab_h), pd / 2.0),
                    (DetectionRecord(rec.detector_id, lab_v), pd / 2.0),
                ])
        for combo in iter_product(*options):
            weight = 1.0
            records = []
            for rec, wgt in combo:
                weight *= wgt
                records.append(rec)
            if weight == 0.0:
                continue
            pattern = tuple(records)
            tgt = merged.get(pattern)
            if tgt is None:
                tgt = merged[pattern] = OutcomeTableEntry(pattern, 0.0, MixedEnsemble(),
                                                          accepted=False)
            add_p = entry.probability * weight
            tgt.probability += add_p
            for bw, bs in entry.post_state.branches:
                tgt.post_state.add(bw * add_p, bs)
    out = []
    for e in merged.values():
        if e.probability > 0.0:
            e.post_state = MixedEnsemble(
                [(bw / e.probability, bs) for bw, bs in e.post_state.branches])
        out.append(e)
    return out


def run_network(obj, network: NetworkConfig, overlaps=None) -> list[OutcomeTableEntry]:
    """Apply all passive elements in order, then enumerate detector outcomes."""
    ens = as_ensemble(obj)
    for el in network.elements:
        if isinstance(el, QWP):
            ens = ens.map_states(lambda s, el=el: apply_qwp(s, el.rail))
        elif isinstance(el, HWP):
            ens = ens.map_states(lambda s, el=el: apply_hwp(s, el.rail, el.angle_deg))
        elif isinstance(el, PBS):
            ens = ens.map_states(
                lambda s, el=el: apply_pbs(s, el.in_a, el.in_b, el.out_1, el.out_2))
        elif isinstance(el, Loss):
            ens = apply_loss(ens, el.rail, el.transmission)
    return detect_all(ens, network, overlaps=overlaps)


# ----------------------------------------------------------------------
# corrections
# ----------------------------------------------------------------------
_PAULI_BY_NAME = {"Z": PAULI_Z, "X": PAULI_X}


def apply_correction(state: SparseHybridState,
                     ops: Iterable[tuple[int, str]]) -> SparseHybridState:
    for idx, name in ops:
        state = apply_local_unitary(state, idx, _PAULI_BY_NAME[name])
    return state


def _correction_candidates(n_atoms: int):
    """I/Z products first (cheap and usually sufficient), then X and XZ mixes."""
    for combo in iter_product(*[["I", "Z"] for _ in range(n_atoms)]):
        yield [(i, p) for i, p in enumerate(combo) if p != "I"]
    for combo in iter_product(*[["I", "Z", "X", "XZ"] for _ in range(n_atoms)]):
        if all(p in ("I", "Z") for p in combo):
            continue
        ops = []
        for i, p in enumerate(combo):
            for ch in p:
                if ch != "I":
                    ops.append((i, ch))
        yield ops


def ensemble_fidelity(ens: MixedEnsemble, target: SparseHybridState) -> float:
    num = 0.0
    den = 0.0
    for w, s in ens.branches:
        num += w * abs(inner_product(target, s)) ** 2 / s.norm2()
        den += w
    return num / den if den else 0.0


def correction_table(entries: list[OutcomeTableEntry], target: SparseHybridState,
                     threshold: float = 1.0 - 1e-9) -> dict[OutcomePattern, list]:
    """Search single-atom Z/X products maximizing corrected fidelity to ``target``.

    Annotates the accepted entries in place and returns pattern -> ops.
    """
    n_atoms = target.n_atoms
    table: dict[OutcomePattern, list] = {}
    for entry in entries:
        if not entry.accepted:
            continue
        best_ops: list = []
        best_fid = -1.0
        for ops in _correction_candidates(n_atoms):
            corrected = entry.post_state.map_states(
                lambda s, ops=ops: apply_correction(s, ops))
            fid = ensemble_fidelity(corrected, target)
            if fid > best_fid + 1e-15:
                best_fid = fid
                best_ops = ops
            if best_fid >= threshold:
                break
        entry.correction = best_ops
        entry.corrected_fidelity = best_fid
        entry.correctable = best_fid >= threshold
        table[entry.pattern] = best_ops
    return table


# ----------------------------------------------------------------------
# canned networks
# ----------------------------------------------------------------------
def default_four_atom_network(detector_efficiency: float = 1.0,
                              dark_probability: float = 0.0,
                              rail_transmission: float = 1.0) -> NetworkConfig:
    """Four-cavity network: QWPs, three PBS stages, diagonal-basis detectors.

    Rails 1-4 are the cavity outputs; 5-10 are internal (PBS1 -> 5, 6;
    PBS2 -> 7, 8; PBS3 -> 9, 10).  Each PBS stage halves the acceptance, so
    the total heralded probability is 1/8.
    """
    elements: list[Element] = [QWP(r) for r in (1, 2, 3, 4)]
    if rail_transmission < 1.0:
        elements += [Loss(r, rail_transmission) for r in (1, 2, 3, 4)]
    elements += [
        PBS(1, 2, 5, 6),
        PBS(3, 4, 7, 8),
        HWP(5, HADAMARD_HWP_DEG),
        HWP(6, HADAMARD_HWP_DEG),
        HWP(8, HADAMARD_HWP_DEG),
        PBS(6, 7, 9, 10),
        HWP(9, HADAMARD_HWP_DEG),
        HWP(10, HADAMARD_HWP_DEG),
        Detector(5, "D1", detector_efficiency, dark_probability, ("D", "A")),
        Detector(9, "D2", detector_efficiency, dark_probability, ("D", "A")),
        Detector(10, "D3", detector_efficiency, dark_probability, ("D", "A")),
        Detector(8, "D4", detector_efficiency, dark_probability, ("D", "A")),
    ]
    return NetworkConfig(tuple(elements))


def parity_check_network(rail_a: int = 1, rail_b: int = 2,
                         diagonal_basis: bool = True,
                         detector_efficiency: float = 1.0,
                         dark_probability: float = 0.0) -> NetworkConfig:
    """Single PBS with two detectors: the two-photon parity check / fusion stage."""
    out_1, out_2 = max(rail_a, rail_b) + 1, max(rail_a, rail_b) + 2
    elements: list[Element] = [QWP(rail_a), QWP(rail_b), PBS(rail_a, rail_b, out_1, out_2)]
    labels = ("H", "V")
    if diagonal_basis:
        elements += [HWP(out_1, HADAMARD_HWP_DEG), HWP(out_2, HADAMARD_HWP_DEG)]
        labels = ("D", "A")
    elements += [
        Detector(out_1, "DI", detector_efficiency, dark_probability, labels),
        Detector(out_2, "DII", detector_efficiency, dark_probability, labels),
    ]
    return NetworkConfig(tuple(elements))


# ----------------------------------------------------------------------
# serialization (order-significant structured text)
# ----------------------------------------------------------------------
def _element_to_dict(el: Element) -> dict:
    if isinstance(el, QWP):
        return {"type": "qwp", "rail": el.rail}
    if isinstance(el, HWP):
        return {"type": "hwp", "rail": el.rail, "angle_deg": el.angle_deg}
    if isinstance(el, PBS):
        return {"type": "pbs", "in_a": el.in_a, "in_b": el.in_b,
                "out_1": el.out_1, "out_2": el.out_2}
    if isinstance(el, Loss):
        return {"type": "loss", "rail": el.rail, "transmission": el.transmission}
    if isinstance(el, Detector):
        return {"type": "detector", "rail": el.rail, "id": el.id,
                "efficiency": el.efficiency, "dark_probability": el.dark_probability,
                "labels": list(el.labels)}
    raise NetworkError(f"cannot serialize {el!r}")


def _element_from_dict(doc: Mapping, index: int) -> Element:
    try:
        kind = doc["type"]
        if kind == "qwp":
            return QWP(int(doc["rail"]))
        if kind == "hwp":
            return HWP(int(doc["rail"]), float(doc["angle_deg"]))
        if kind == "pbs":
            return PBS(int(doc["in_a"]), int(doc["in_b"]),
                       int(doc["out_1"]), int(doc["out_2"]))
        if kind == "loss":
            return Loss(int(doc["rail"]), float(doc["transmission"]))
        if kind == "detector":
            return Detector(int(doc["rail"]), str(doc["id"]),
                            float(doc.get("efficiency", 1.0)),
                            float(doc.get("dark_probability", 0.0)),
                            tuple(doc.get("labels", ("H", "V"))))
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkError(f"malformed element at index {index}: {exc}") from exc
    raise NetworkError(f"unknown element type {kind!r} at index {index}")


def network_to_json(net: NetworkConfig) -> str:
    return json.dumps({"elements": [_element_to_dict(e) for e in net.elements]},
                      indent=2, sort_keys=True)


def network_from_json(text: str) -> NetworkConfig:
    try:
        doc = json.loads(text)
        items = doc["elements"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise NetworkError(f"malformed network document: {exc}") from exc
    return NetworkConfig(tuple(_element_from_dict(d, i) for i, d in enumerate(items)))
