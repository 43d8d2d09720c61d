"""Single-excitation dynamics of one atom-cavity cell under conditional decay.

The no-jump evolution couples the excited ancilla amplitude to the two
one-photon cavity amplitudes while the cavity field leaks at rate 2*kappa and
the excited level decays at rate gamma.  Everything reduces to a damped
two-level amplitude system (excited ancilla vs the symmetric photon mode),
for which we carry both the closed-form solution and an independent
adaptive-ODE integrator used as the cross-check oracle.

Units: all rates are angular frequencies in rad/us; times in us.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad, solve_ivp

DEFAULT_WINDOW_KAPPAS = 3.0  # waiting window 3/kappa
_SERIES_CUTOFF = 1e-4
_CDF_GRID_POINTS = 4096


@dataclass(frozen=True)
class PhysicalParams:
    """Per-cavity rates (rad/us) and the observation window (us)."""

    h: float
    kappa: float
    gamma: float
    window: float | None = None

    def __post_init__(self):
        if self.h < 0 or self.kappa < 0 or self.gamma < 0:
            raise ValueError("rates must be non-negative")
        if self.window is not None and self.window <= 0:
            raise ValueError("window must be positive")

    def default_window(self) -> float:
        if self.window is not None:
            return self.window
        if self.kappa > 0:
            return DEFAULT_WINDOW_KAPPAS / self.kappa
        raise ValueError("no finite default window when kappa = 0")


def params_from_mhz(h_mhz: float, kappa_mhz: float, gamma_mhz: float,
                    window: float | None = None) -> PhysicalParams:
    """Convenience constructor for rates quoted as 2*pi x MHz."""
    two_pi = 2.0 * math.pi
    return PhysicalParams(two_pi * h_mhz, two_pi * kappa_mhz, two_pi * gamma_mhz, window)


#: Rubidium cavity numbers quoted in the experimental discussion.
RB_PARAMS = params_from_mhz(27.0, 2.4, 6.0)
#: Trapped-ion numbers (h ~ 30 MHz, kappa ten times smaller, gamma = 10 MHz).
ION_PARAMS = params_from_mhz(30.0, 3.0, 10.0)


@dataclass(frozen=True)
class EmissionAmplitudes:
    """No-jump amplitudes: excited ancilla and the two one-photon branches."""

    c_alpha: complex
    c_g: complex
    c_e: complex
    beta: complex

    def survival(self) -> float:
        return abs(self.c_alpha) ** 2 + abs(self.c_g) ** 2 + abs(self.c_e) ** 2


class EventKind(enum.Enum):
    PHOTON_LEAK = "leak"
    SPONTANEOUS = "spont"
    NO_EVENT = "none"


@dataclass(frozen=True)
class EmissionEvent:
    kind: EventKind
    time: float | None = None
    polarization: str | None = None  # "L" or "R" for PHOTON_LEAK


def _sinhc(z: complex) -> complex:
    """sinh(z)/z, stable through z = 0 (4-term Taylor series below cutoff)."""
    if abs(z) < _SERIES_CUTOFF:
        z2 = z * z
        return 1.0 + z2 / 6.0 * (1.0 + z2 / 20.0 * (1.0 + z2 / 42.0))
    return np.sinh(z) / z


def beta(p: PhysicalParams) -> complex:
    """Principal root of (1/4)[(kappa + gamma/2)^2 - 2(gamma*kappa + h^2)].

    Real on the overdamped side, purely imaginary on the oscillatory side.
    """
    disc = (p.kappa + p.gamma / 2.0) ** 2 - 2.0 * (p.gamma * p.kappa + p.h ** 2)
    return 0.5 * np.sqrt(complex(disc))


def _two_level_amplitudes(omega: float, decay0: float, decay1: float,
                          t: float) -> tuple[complex, complex, complex]:
    """Amplitudes of dc0 = -decay0*c0 - i*omega*c1, dc1 = -decay1*c1 - i*omega*c0.

    Returns (c0(t), c1(t), b) from c(0) = (1, 0), with
    b = sqrt(((decay1 - decay0)/2)^2 - omega^2).
    """
    s = 0.5 * (decay0 + decay1)
    d = 0.5 * (decay1 - decay0)
    b = np.sqrt(complex(d * d - omega * omega))
    bt = b * t
    if abs(bt) < _SERIES_CUTOFF:
        env = np.exp(-s * t)
        shc = _sinhc(bt)
        c0 = env * (np.cosh(bt) + d * t * shc)
        c1 = env * (-1j * omega * t * shc)
    else:
        # exponential form: exp(-s t) cosh/sinh overflow for large real b t,
        # but the mode exponents (b - s) t and -(b + s) t never do
        e_plus = np.exp((b - s) * t)
        e_minus = np.exp(-(b + s) * t)
        c0 = 0.5 * ((1.0 + d / b) * e_plus + (1.0 - d / b) * e_minus)
        c1 = -1j * (omega / (2.0 * b)) * (e_plus - e_minus)
    return complex(c0), complex(c1), complex(b)


def amplitudes_at(p: PhysicalParams, t: float) -> EmissionAmplitudes:
    """Closed-form no-jump amplitudes at time ``t`` (t >= 0)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    c0, c_sym, b = _two_level_amplitudes(p.h / math.sqrt(2.0), p.gamma / 2.0, p.kappa, t)
    c_g = c_sym / math.sqrt(2.0)
    return EmissionAmplitudes(c_alpha=c0, c_g=c_g, c_e=c_g, beta=b)


def emission_probability(p: PhysicalParams, t: float) -> float:
    """Probability a one-photon branch is populated at time t: |c_g|^2 + |c_e|^2."""
    a = amplitudes_at(p, t)
    return abs(a.c_g) ** 2 + abs(a.c_e) ** 2


def _leak_closed_form(omega: float, decay0: float, decay1: float) -> float:
    """Total probability the excitation exits through the c1 channel (rate 2*decay1)."""
    if decay0 + decay1 <= 0:
        if omega == 0:
            return 0.0
        raise ValueError("no stationary limit with zero total decay and nonzero coupling")
    denom = (decay0 + decay1) * (decay0 * decay1 + omega * omega)
    if denom == 0.0:
        # decay1 = 0 with omega > 0: photon can never leave; or omega = 0.
        return 0.0
    return decay1 * omega * omega / denom


def leak_probability_total(p: PhysicalParams) -> float:
    """Total cavity-leak probability 2*kappa * integral(|c_g|^2 + |c_e|^2) dt.

    Closed form kappa*h^2 / ((kappa + gamma/2)(gamma*kappa + h^2)).
    """
    if p.kappa == 0 and p.gamma == 0 and p.h > 0:
        raise ValueError("kappa = gamma = 0 with h > 0 has no stationary limit")
    return _leak_closed_form(p.h / math.sqrt(2.0), p.gamma / 2.0, p.kappa)


def spont_probability_total(p: PhysicalParams) -> float:
    """Complementary spontaneous-emission probability (sums with leak to 1)."""
    if p.kappa == 0 and p.gamma == 0 and p.h > 0:
        raise ValueError("kappa = gamma = 0 with h > 0 has no stationary limit")
    if p.kappa == 0 and p.gamma == 0:
        return 0.0
    return 1.0 - leak_probability_total(p)


def reset_leak_probability(coupling: float, upper_decay: float, field_decay: float) -> float:
    """Leak probability of the reset (primed-level) transition.

    Amplitude system dc0 = -upper_decay*c0 - i*coupling*c1,
    dc1 = -field_decay*c1 - i*coupling*c0 with leak channel 2*field_decay*|c1|^2;
    closed form field_decay*coupling^2 /
    ((upper_decay + field_decay)(upper_decay*field_decay + coupling^2)).
    """
    if upper_decay + field_decay <= 0:
        raise ValueError("need a nonzero decay rate")
    return _leak_closed_form(coupling, upper_decay, field_decay)


def jump_rates(p: PhysicalParams, t: float) -> tuple[float, float]:
    """(cavity-leak rate, spontaneous rate) at time t along the no-jump path."""
    a = amplitudes_at(p, t)
    leak = 2.0 * p.kappa * (abs(a.c_g) ** 2 + abs(a.c_e) ** 2)
    spont = p.gamma * abs(a.c_alpha) ** 2
    return leak, spont


def decay_timescale(p: PhysicalParams) -> float:
    """Slowest amplitude decay rate; sets the quadrature/sampling horizon."""
    s = 0.5 * (p.gamma / 2.0 + p.kappa)
    b = beta(p)
    rate = s - b.real
    if rate <= 0:
        raise ValueError("undamped dynamics has no decay timescale")
    return 1.0 / rate


def leak_probability_quadrature(p: PhysicalParams, upper: float | None = None) -> float:
    """Numerical quadrature of the leak rate; oracle for the closed form."""
    if upper is None:
        upper = 40.0 * decay_timescale(p)
    val, _ = quad(lambda t: jump_rates(p, t)[0], 0.0, upper, limit=400)
    return val


def spont_probability_quadrature(p: PhysicalParams, upper: float | None = None) -> float:
    if upper is None:
        upper = 40.0 * decay_timescale(p)
    val, _ = quad(lambda t: jump_rates(p, t)[1], 0.0, upper, limit=400)
    return val


def ode_oracle_integrate(p: PhysicalParams, t_grid) -> list[EmissionAmplitudes]:
    """Adaptive high-order integration of the three-amplitude system.

    Deliberately independent of the closed form: integrates
    dc_a = -(gamma/2) c_a - i (h/2)(c_g + c_e),
    dc_g = -kappa c_g - i (h/2) c_a,  dc_e likewise.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be a monotone 1-D array")
    b = beta(p)

    def rhs(_t, y):
        ca, cg, ce = y[0] + 1j * y[1], y[2] + 1j * y[3], y[4] + 1j * y[5]
        dca = -(p.gamma / 2.0) * ca - 1j * (p.h / 2.0) * (cg + ce)
        dcg = -p.kappa * cg - 1j * (p.h / 2.0) * ca
        dce = -p.kappa * ce - 1j * (p.h / 2.0) * ca
        return [dca.real, dca.imag, dcg.real, dcg.imag, dce.real, dce.imag]

    # integrate segment by segment so every reported point is a true step
    # endpoint (dense-output interpolation between large steps is far less
    # accurate than the integration itself)
    out = []
    y = np.array([1.0, 0, 0, 0, 0, 0])
    t_prev = 0.0
    for t in t_grid:
        t = float(t)
        if t > t_prev:
            sol = solve_ivp(rhs, (t_prev, t), y, method="DOP853",
                            rtol=1e-12, atol=1e-14)
            if not sol.success:
                raise RuntimeError(f"ODE integration failed: {sol.message}")
            y = sol.y[:, -1]
            t_prev = t
        out.append(EmissionAmplitudes(complex(y[0], y[1]), complex(y[2], y[3]),
                                      complex(y[4], y[5]), b))
    return out


def event_probabilities(p: PhysicalParams, window: float | None = None) -> tuple[float, float, float]:
    """(leak, spontaneous, survive) probabilities within the waiting window."""
    w = window if window is not None else p.default_window()
    leak, err1 = quad(lambda t: jump_rates(p, t)[0], 0.0, w, limit=400)
    spont, err2 = quad(lambda t: jump_rates(p, t)[1], 0.0, w, limit=400)
    survive = amplitudes_at(p, w).survival()
    return leak, spont, survive


class _EventSampler:
    """Inverse-CDF sampler for jump times on a fixed grid over the window."""

    def __init__(self, p: PhysicalParams, window: float):
        self.p = p
        self.window = window
        self.t = np.linspace(0.0, window, _CDF_GRID_POINTS)
        rates = np.array([jump_rates(p, t) for t in self.t])
        self.cum_leak = np.concatenate(([0.0], cumulative_trapezoid(rates[:, 0], self.t)))
        self.cum_spont = np.concatenate(([0.0], cumulative_trapezoid(rates[:, 1], self.t)))
        self.p_leak = float(self.cum_leak[-1])
        self.p_spont = float(self.cum_spont[-1])

    def _invert(self, cum: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.interp(u, cum, self.t)

    def sample(self, rng: np.random.Generator, n: int):
        """Vectorized draw of n events; returns (kinds, times, pols) arrays."""
        u = rng.random(n)
        pol_draw = rng.random(n)
        kinds = np.full(n, EventKind.NO_EVENT, dtype=object)
        times = np.full(n, np.nan)
        pols = np.full(n, None, dtype=object)
        leak_mask = u < self.p_leak
        spont_mask = (~leak_mask) & (u < self.p_leak + self.p_spont)
        kinds[leak_mask] = EventKind.PHOTON_LEAK
        kinds[spont_mask] = EventKind.SPONTANEOUS
        if leak_mask.any():
            times[leak_mask] = self._invert(self.cum_leak, u[leak_mask])
            pols[leak_mask] = np.where(pol_draw[leak_mask] < 0.5, "L", "R")
        if spont_mask.any():
            times[spont_mask] = self._invert(self.cum_spont, u[spont_mask] - self.p_leak)
        return kinds, times, pols


_sampler_cache: dict[tuple, _EventSampler] = {}


def _get_sampler(p: PhysicalParams, window: float) -> _EventSampler:
    key = (p.h, p.kappa, p.gamma, window)
    s = _sampler_cache.get(key)
    if s is None:
        s = _sampler_cache[key] = _EventSampler(p, window)
    return s


def sample_emission_event(p: PhysicalParams, rng: np.random.Generator,
                          window: float | None = None) -> EmissionEvent:
    """Draw one quantum-jump event (kind, time, leak polarization) in the window."""
    w = window if window is not None else p.default_window()
    kinds, times, pols = _get_sampler(p, w).sample(rng, 1)
    kind = kinds[0]
    if kind is EventKind.NO_EVENT:
        return EmissionEvent(kind)
    return EmissionEvent(kind, float(times[0]), pols[0])


def sample_emission_events(p: PhysicalParams, rng: np.random.Generator, n: int,
                           window: float | None = None):
    """Vectorized batch version of :func:`sample_emission_event`."""
    w = window if window is not None else p.default_window()
    return _get_sampler(p, w).sample(rng, n)


def leaked_envelope(p: PhysicalParams, t: float) -> complex:
    """Temporal amplitude of the leaked photon, f(t) = sqrt(2*kappa) * c_g(t)."""
    return math.sqrt(2.0 * p.kappa) * amplitudes_at(p, t).c_g


def wavepacket_overlap(p1: PhysicalParams, p2: PhysicalParams) -> complex:
    """Normalized temporal-mode overlap of the two leaked-photon envelopes."""
    if leak_probability_total(p1) <= 0 or leak_probability_total(p2) <= 0:
        raise ValueError("wavepacket overlap requires nonzero leak probability")
    upper = 40.0 * max(decay_timescale(p1), decay_timescale(p2))

    def integ(f):
        re, _ = quad(lambda t: f(t).real, 0.0, upper, limit=400)
        im, _ = quad(lambda t: f(t).imag, 0.0, upper, limit=400)
        return complex(re, im)

    cross = integ(lambda t: np.conj(leaked_envelope(p1, t)) * leaked_envelope(p2, t))
    n1 = integ(lambda t: abs(leaked_envelope(p1, t)) ** 2 + 0j).real
    n2 = integ(lambda t: abs(leaked_envelope(p2, t)) ** 2 + 0j).real
    return cross / math.sqrt(n1 * n2)


def maximize_emission_probability(p: PhysicalParams,
                                  t_hi: float | None = None) -> tuple[float, float]:
    """Golden-section maximization of the one-photon population; (t*, P*)."""
    if t_hi is None:
        t_hi = 10.0 * decay_timescale(p)
    # The population can oscillate (imaginary beta): bracket the global peak
    # on a dense grid first, then refine by golden section inside the bracket.
    grid = np.linspace(0.0, t_hi, 4001)
    vals = [emission_probability(p, t) for t in grid]
    k = int(np.argmax(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, len(grid) - 1)]
    t_hi = b
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    while b - a > 1e-12 * t_hi:
        if emission_probability(p, c) > emission_probability(p, d):
            b = d
        else:
            a = c
        c = b - inv_phi * (b - a)
        d = a + inv_phi * (b - a)
    t_star = 0.5 * (a + b)
    return t_star, emission_probability(p, t_star)
