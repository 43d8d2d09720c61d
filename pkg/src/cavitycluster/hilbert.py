"""Sparse complex state vectors over hybrid atom/photon basis labels.

A basis label is an ordered tuple of atomic levels together with a map from
photonic modes (spatial rail + polarization, optionally a source tag used by
the partial-distinguishability model) to occupation numbers.  States are
dictionaries basis label -> complex amplitude.  Everything here is pure:
operations return new states and never mutate their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping, NamedTuple

import numpy as np

PRUNE_EPS = 1e-15
UNITARY_TOL = 1e-12
# Four emitted photons can pile onto a single mode in rejected branches of the
# three-stage network, so the hard cap is the system photon number, not 2.
MAX_OCCUPATION = 4


class AtomLevel(Enum):
    """Six-level atom: qubit pair (G, E), primed pair, and the two ancillas."""

    G = "g"
    E = "e"
    GP = "g'"
    EP = "e'"
    ALPHA = "a"
    ALPHAP = "a'"


#: Levels subject to spontaneous emission (amplitude decay at rate gamma/2).
EXCITED_LEVELS = frozenset({AtomLevel.ALPHA, AtomLevel.GP, AtomLevel.EP})

#: Canonical ordering used by 6x6 single-atom matrices.
LEVEL_ORDER = (
    AtomLevel.G,
    AtomLevel.E,
    AtomLevel.GP,
    AtomLevel.EP,
    AtomLevel.ALPHA,
    AtomLevel.ALPHAP,
)

_QUBIT_INDEX = {AtomLevel.G: 0, AtomLevel.E: 1}

CIRCULAR_POLS = ("L", "R")
LINEAR_POLS = ("H", "V")
ALL_POLS = CIRCULAR_POLS + LINEAR_POLS


class PhotonMode(NamedTuple):
    """A single photonic mode: spatial rail, polarization label, source tag.

    ``src`` identifies the emitting cavity when temporal-envelope
    distinguishability matters; ``None`` means fully indistinguishable.
    """

    rail: int
    pol: str
    src: int | None = None

    def sort_key(self):
        return (self.rail, self.pol, -1 if self.src is None else self.src)


class StateError(ValueError):
    """Raised for malformed states or invalid operations on them."""


def _canonical_occ(occ) -> tuple[tuple[PhotonMode, int], ...]:
    items = []
    for mode, count in (occ.items() if isinstance(occ, Mapping) else occ):
        if count == 0:
            continue
        if count < 0 or count > MAX_OCCUPATION:
            raise StateError(f"occupation {count} out of range for mode {mode}")
        if mode.pol not in ALL_POLS:
            raise StateError(f"unknown polarization {mode.pol!r}")
        items.append((mode, int(count)))
    items.sort(key=lambda mc: mc[0].sort_key())
    return tuple(items)


class BasisLabel(NamedTuple):
    atoms: tuple[AtomLevel, ...]
    occ: tuple[tuple[PhotonMode, int], ...]

    @staticmethod
    def make(atoms: Iterable[AtomLevel], occ=()) -> "BasisLabel":
        levels = tuple(a if isinstance(a, AtomLevel) else AtomLevel(a) for a in atoms)
        return BasisLabel(levels, _canonical_occ(dict(occ) if not isinstance(occ, Mapping) else occ))

    def photon_count(self) -> int:
        return sum(c for _, c in self.occ)

    def occ_map(self) -> dict[PhotonMode, int]:
        return dict(self.occ)


class SparseHybridState:
    """Sparse complex amplitude map over :class:`BasisLabel`.

    Immutable by convention: all operations return new instances.
    """

    __slots__ = ("n_atoms", "rails", "terms")

    def __init__(self, n_atoms: int, rails: frozenset[int], terms: Mapping[BasisLabel, complex],
                 prune_eps: float = PRUNE_EPS):
        self.n_atoms = int(n_atoms)
        self.rails = frozenset(rails)
        clean: dict[BasisLabel, complex] = {}
        for label, amp in terms.items():
            if abs(amp) <= prune_eps:
                continue
            if len(label.atoms) != self.n_atoms:
                raise StateError(f"label has {len(label.atoms)} atoms, expected {self.n_atoms}")
            for mode, _ in label.occ:
                if mode.rail not in self.rails:
                    raise StateError(f"mode on unregistered rail {mode.rail}")
            if label.photon_count() > self.n_atoms:
                raise StateError("photon number exceeds atom count")
            clean[label] = complex(amp)
        self.terms = clean

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------
    @staticmethod
    def from_atoms(levels: Iterable[AtomLevel]) -> "SparseHybridState":
        """Product basis state of bare atoms, no photonic modes."""
        levels = tuple(levels)
        return SparseHybridState(len(levels), frozenset(), {BasisLabel(levels, ()): 1.0})

    @staticmethod
    def from_amplitudes(n_atoms: int, rails: Iterable[int],
                        amplitudes: Mapping[BasisLabel, complex]) -> "SparseHybridState":
        return SparseHybridState(n_atoms, frozenset(rails), amplitudes)

    def with_rails(self, rails: Iterable[int]) -> "SparseHybridState":
        """Same state with additional registered (possibly empty) rails."""
        return SparseHybridState(self.n_atoms, self.rails | frozenset(rails), self.terms)

    # ------------------------------------------------------------------
    # basic linear algebra
    # ------------------------------------------------------------------
    def norm2(self) -> float:
        return sum(abs(a) ** 2 for a in self.terms.values())

    def norm(self) -> float:
        return math.sqrt(self.norm2())

    def scaled(self, factor: complex) -> "SparseHybridState":
        return SparseHybridState(self.n_atoms, self.rails,
                                 {l: a * factor for l, a in self.terms.items()})

    def normalized(self) -> "SparseHybridState":
        n = self.norm()
        if n == 0.0:
            raise StateError("cannot normalize the zero state")
        return self.scaled(1.0 / n)

    def add(self, other: "SparseHybridState") -> "SparseHybridState":
        if other.n_atoms != self.n_atoms:
            raise StateError("atom count mismatch in superposition")
        out = dict(self.terms)
        for l, a in other.terms.items():
            out[l] = out.get(l, 0.0) + a
        return SparseHybridState(self.n_atoms, self.rails | other.rails, out)

    def __len__(self) -> int:
        return len(self.terms)


def tensor(a: SparseHybridState, b: SparseHybridState) -> SparseHybridState:
    """Tensor product; ``b``'s atoms are appended after ``a``'s.

    Rail registries must be disjoint (photonic modes keep their rail ids).
    """
    if a.rails & b.rails:
        raise StateError(f"overlapping rail ids {sorted(a.rails & b.rails)} in tensor product")
    terms: dict[BasisLabel, complex] = {}
    for la, aa in a.terms.items():
        for lb, ab in b.terms.items():
            label = BasisLabel(la.atoms + lb.atoms, _canonical_occ(la.occ + lb.occ))
            terms[label] = aa * ab
    return SparseHybridState(a.n_atoms + b.n_atoms, a.rails | b.rails, terms)


def tensor_all(states: Iterable[SparseHybridState]) -> SparseHybridState:
    states = list(states)
    out = states[0]
    for s in states[1:]:
        out = tensor(out, s)
    return out


def inner_product(a: SparseHybridState, b: SparseHybridState) -> complex:
    """<a|b>, conjugate-linear in ``a``.  Requires identical system shape."""
    if a.n_atoms != b.n_atoms:
        raise StateError("inner product between states of different atom count")
    if len(a.terms) > len(b.terms):
        return complex(np.conj(inner_product(b, a)))
    total = 0.0 + 0.0j
    for label, amp in a.terms.items():
        other = b.terms.get(label)
        if other is not None:
            total += np.conj(amp) * other
    return complex(total)


def _is_unitary(u: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    return bool(np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=tol, rtol=0))


def apply_local_unitary(state: SparseHybridState, target, u, *,
                        allow_nonunitary: bool = False) -> SparseHybridState:
    """Apply a single-atom matrix (2x2 qubit block or 6x6 full level space).

    ``target`` is an atom index.  A 2x2 matrix acts on the (G, E) subspace and
    leaves other levels untouched (block identity), which keeps it unitary.
    """
    u = np.asarray(u, dtype=complex)
    if u.shape not in ((2, 2), (6, 6)):
        raise StateError(f"atom matrix must be 2x2 or 6x6, got {u.shape}")
    if not allow_nonunitary and not _is_unitary(u):
        raise StateError("matrix is not unitary within tolerance")
    idx = int(target)
    if not 0 <= idx < state.n_atoms:
        raise StateError(f"atom index {idx} out of range")
    out: dict[BasisLabel, complex] = {}
    for label, amp in state.terms.items():
        lvl = label.atoms[idx]
        if u.shape == (2, 2):
            col = _QUBIT_INDEX.get(lvl)
            if col is None:
                out[label] = out.get(label, 0.0) + amp
                continue
            images = ((AtomLevel.G, u[0, col]), (AtomLevel.E, u[1, col]))
        else:
            col = LEVEL_ORDER.index(lvl)
            images = tuple((LEVEL_ORDER[r], u[r, col]) for r in range(6))
        for new_lvl, coeff in images:
            if coeff == 0.0:
                continue
            new_atoms = label.atoms[:idx] + (new_lvl,) + label.atoms[idx + 1:]
            key = BasisLabel(new_atoms, label.occ)
            out[key] = out.get(key, 0.0) + amp * coeff
    return SparseHybridState(state.n_atoms, state.rails, out)


def map_atom_level(state: SparseHybridState, idx: int,
                   mapping: Mapping[AtomLevel, AtomLevel]) -> SparseHybridState:
    """Relabel one atom's level per ``mapping`` (identity off the mapped set)."""
    out: dict[BasisLabel, complex] = {}
    for label, amp in state.terms.items():
        lvl = mapping.get(label.atoms[idx], label.atoms[idx])
        key = BasisLabel(label.atoms[:idx] + (lvl,) + label.atoms[idx + 1:], label.occ)
        out[key] = out.get(key, 0.0) + amp
    return SparseHybridState(state.n_atoms, state.rails, out)


def relabel_rail_pols(state: SparseHybridState, rail: int,
                      mapping: Mapping[str, str]) -> SparseHybridState:
    """Relabel polarizations on one rail (e.g. the QWP map L->H, R->V)."""
    out: dict[BasisLabel, complex] = {}
    for label, amp in state.terms.items():
        occ = []
        for mode, count in label.occ:
            if mode.rail == rail and mode.pol in mapping:
                mode = PhotonMode(rail, mapping[mode.pol], mode.src)
            occ.append((mode, count))
        key = BasisLabel(label.atoms, _canonical_occ(occ))
        out[key] = out.get(key, 0.0) + amp
    return SparseHybridState(state.n_atoms, state.rails, out)


def move_modes(state: SparseHybridState, routing: Mapping[tuple[int, str], tuple[int, str]],
               new_rails: Iterable[int] = ()) -> SparseHybridState:
    """Relabel (rail, pol) pairs per ``routing`` (a mode permutation, e.g. PBS)."""
    rails = state.rails | frozenset(new_rails)
    out: dict[BasisLabel, complex] = {}
    for label, amp in state.terms.items():
        merged: dict[PhotonMode, int] = {}
        for mode, count in label.occ:
            tgt = routing.get((mode.rail, mode.pol))
            if tgt is not None:
                mode = PhotonMode(tgt[0], tgt[1], mode.src)
            merged[mode] = merged.get(mode, 0) + count
        key = BasisLabel(label.atoms, _canonical_occ(merged))
        out[key] = out.get(key, 0.0) + amp
    return SparseHybridState(state.n_atoms, rails, out)


def _pair_images(n1: int, n2: int, u: np.ndarray):
    """Expand (b1^+)^n1 (b2^+)^n2 / sqrt(n1! n2!) after b_i^+ -> sum_j u[j,i] c_j^+.

    Returns [(m1, m2, coeff)] with bosonic normalization folded in.
    """
    if n1 + n2 == 0:
        return [(0, 0, 1.0 + 0.0j)]
    # polynomial in (c1^+, c2^+): coefficients poly[(m1, m2)]
    poly = {(0, 0): 1.0 + 0.0j}
    for col, reps in ((0, n1), (1, n2)):
        for _ in range(reps):
            nxt: dict[tuple[int, int], complex] = {}
            for (m1, m2), c in poly.items():
                for row, dm in ((0, (1, 0)), (1, (0, 1))):
                    if u[row, col] == 0.0:
                        continue
                    key = (m1 + dm[0], m2 + dm[1])
                    nxt[key] = nxt.get(key, 0.0) + c * u[row, col]
            poly = nxt
    norm_in = math.sqrt(math.factorial(n1) * math.factorial(n2))
    out = []
    for (m1, m2), c in poly.items():
        if m1 > MAX_OCCUPATION or m2 > MAX_OCCUPATION:
            raise StateError("mode mixing produced occupation above the cap")
        c *= math.sqrt(math.factorial(m1) * math.factorial(m2)) / norm_in
        if c != 0.0:
            out.append((m1, m2, c))
    return out


def apply_rail_jones(state: SparseHybridState, rail: int, u: np.ndarray,
                     pols: tuple[str, str] = ("H", "V")) -> SparseHybridState:
    """Two-mode mixing of the (pols[0], pols[1]) pair on one rail.

    Acts independently on every source tag present (tagged photons are
    distinct modes sharing the same Jones matrix).  Handles occupations up to
    2 with correct bosonic factors.
    """
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2):
        raise StateError("Jones matrix must be 2x2")
    if not _is_unitary(u):
        raise StateError("Jones matrix is not unitary within tolerance")
    p0, p1 = pols
    out: dict[BasisLabel, complex] = {}
    for label, amp in state.terms.items():
        srcs = sorted({m.src for m, _ in label.occ if m.rail == rail},
                      key=lambda s: -1 if s is None else s)
        expansions = [(label, amp)]
        for src in srcs:
            nxt: list[tuple[BasisLabel, complex]] = []
            for lab, a in expansions:
                occ = lab.occ_map()
                n0 = occ.pop(PhotonMode(rail, p0, src), 0)
                n1 = occ.pop(PhotonMode(rail, p1, src), 0)
                if n0 + n1 == 0:
                    nxt.append((lab, a))
                    continue
                for m0, m1, coeff in _pair_images(n0, n1, u):
                    new_occ = dict(occ)
                    if m0:
                        new_occ[PhotonMode(rail, p0, src)] = m0
                    if m1:
                        new_occ[PhotonMode(rail, p1, src)] = m1
                    nxt.append((BasisLabel(lab.atoms, _canonical_occ(new_occ)), a * coeff))
            expansions = nxt
        for lab, a in expansions:
            out[lab] = out.get(lab, 0.0) + a
    return SparseHybridState(state.n_atoms, state.rails, out)


def project(state: SparseHybridState,
            predicate: Callable[[BasisLabel], bool]) -> tuple[SparseHybridState, float]:
    """Keep terms satisfying ``predicate``; returns (unnormalized state, probability)."""
    kept = {l: a for l, a in state.terms.items() if predicate(l)}
    prob = sum(abs(a) ** 2 for a in kept.values())
    return SparseHybridState(state.n_atoms, state.rails, kept, prune_eps=0.0), prob


def strip_photons(state: SparseHybridState) -> SparseHybridState:
    """Drop all (empty after projection) photonic registers, keeping atoms only."""
    out: dict[BasisLabel, complex] = {}
    for label, amp in state.terms.items():
        if label.occ:
            raise StateError("strip_photons on a state with photons present")
        out[label] = out.get(label, 0.0) + amp
    return SparseHybridState(state.n_atoms, frozenset(), out, prune_eps=0.0)


def drop_atoms(state: SparseHybridState, indices: Iterable[int]) -> SparseHybridState:
    """Remove atoms at ``indices``; they must be in a definite product level."""
    drop = sorted(set(indices), reverse=True)
    levels = {i: None for i in drop}
    out: dict[BasisLabel, complex] = {}
    for label, amp in state.terms.items():
        atoms = list(label.atoms)
        for i in drop:
            if levels[i] is None:
                levels[i] = atoms[i]
            elif levels[i] != atoms[i]:
                raise StateError(f"atom {i} is entangled; cannot drop it")
            del atoms[i]
        key = BasisLabel(tuple(atoms), label.occ)
        out[key] = out.get(key, 0.0) + amp
    return SparseHybridState(state.n_atoms - len(drop), state.rails, out, prune_eps=0.0)


@dataclass
class MixedEnsemble:
    """Weighted list of pure branches; weights are probabilities (sum <= 1)."""

    branches: list[tuple[float, SparseHybridState]] = field(default_factory=list)

    def total_weight(self) -> float:
        return sum(w for w, _ in self.branches)

    def add(self, weight: float, state: SparseHybridState) -> None:
        if weight < -1e-15:
            raise StateError("negative branch weight")
        if weight > PRUNE_EPS:
            self.branches.append((float(weight), state))

    def map_states(self, fn) -> "MixedEnsemble":
        return MixedEnsemble([(w, fn(s)) for w, s in self.branches])


def as_ensemble(obj) -> MixedEnsemble:
    if isinstance(obj, MixedEnsemble):
        return obj
    return MixedEnsemble([(1.0, obj)])


def fidelity(obj, reference: SparseHybridState) -> float:
    """Overlap fidelity |<ref|s>|^2 / |s|^2, weight-averaged over ensembles."""
    if abs(reference.norm2() - 1.0) > 1e-9:
        raise StateError("reference state must be normalized")
    ens = as_ensemble(obj)
    num = 0.0
    den = 0.0
    for w, s in ens.branches:
        n2 = s.norm2()
        if n2 == 0.0:
            raise StateError("zero-norm branch in fidelity")
        num += w * abs(inner_product(reference, s)) ** 2 / n2
        den += w
    if den == 0.0:
        raise StateError("empty ensemble in fidelity")
    return num / den


# ----------------------------------------------------------------------
# common single-qubit matrices
# ----------------------------------------------------------------------
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def _mode_text(mode: PhotonMode, count: int) -> str:
    src = "" if mode.src is None else f"#{mode.src}"
    rep = f"{mode.rail}{mode.pol}{src}"
    return rep if count == 1 else f"{rep}x{count}"


def debug_text(state: SparseHybridState) -> str:
    """Deterministic, sorted, human-readable dump used by golden-file tests."""
    lines = []
    for label in sorted(state.terms,
                        key=lambda l: (tuple(a.value for a in l.atoms),
                                       tuple(m.sort_key() + (c,) for m, c in l.occ))):
        amp = state.terms[label]
        atoms = ",".join(a.value for a in label.atoms)
        modes = " ".join(_mode_text(m, c) for m, c in label.occ) or "vac"
        lines.append(f"|{atoms}; {modes}> -> {amp.real:.12g},{amp.imag:.12g}")
    return "\n".join(lines)
