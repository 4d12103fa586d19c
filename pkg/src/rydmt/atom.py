"""Four-level ladder atom: Hamiltonian harmonics, dissipator, static steady state.

Level ordering (0-based array indices in parentheses):

    |1> (0)  ground state,            5S1/2
    |2> (1)  intermediate state,      5P3/2   <- probe, ~780 nm
    |3> (2)  first Rydberg state,     nD5/2   <- coupling, ~480 nm
    |4> (3)  second Rydberg state,    n'P3/2  <- RF, ~17 GHz

All rates and Rabi amplitudes are angular (rad/s); lengths, fields and dipoles
are SI.  Time-periodic drives are held as maps ``harmonic index -> complex
Rabi amplitude`` so that the rotating-frame Hamiltonian is

    H(t) = sum_m H_m exp(-i m w_mod t),      H_{-m} = H_m^dagger.

Sign conventions (fixed throughout the package):

* probe along +z, coupling along -z, so an atom with velocity v sees
  Doppler-shifted detunings  dp_eff = dp - k_p v  and  dc_eff = dc + k_c v;
  the RF Doppler shift is neglected (k_RF v is far below every linewidth).
* carrier diagonal  (0, -dp_eff, -(dp_eff+dc_eff), -(dp_eff+dc_eff+d_rf)).
* the harmonic-m Rabi amplitude of each field enters H_m at the
  (lower, upper) element of its transition with weight Omega/2; Hermiticity
  puts the conjugate at the mirrored element of H_{-m}.

With these choices the probe-transition coherence that radiates into the
probe field is the element ``rho[0, 1]``; in the weak-probe two-level limit
it equals  +i*Omega_p / (gamma2 + 2*gamma_transit)  on resonance, and the
thin-layer field update  E += i*C*rho[0,1]*dz  (C > 0) attenuates the beam.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.constants import c as C_LIGHT
from scipy.constants import hbar as HBAR
from scipy.constants import k as K_B

N_LEVELS = 4
N_SUPER = N_LEVELS * N_LEVELS

# vec(identity) picks out the trace of a row-major vectorized 4x4 matrix
TRACE_ROW = np.eye(N_LEVELS, dtype=complex).reshape(N_SUPER)

# couplings sit on the (lower, upper) element of each transition
_PROBE_IDX = (0, 1)
_COUPLING_IDX = (1, 2)
_RF_IDX = (2, 3)


class SingularSystemError(RuntimeError):
    """Steady-state generator does not have a one-dimensional null space."""


class HarmonicCapError(ValueError):
    """A drive harmonic index exceeds the configured cap."""


def mean_thermal_speed(temperature: float, mass: float) -> float:
    """Mean speed sqrt(8 kB T / (pi m)) of a Maxwell-Boltzmann gas."""
    return float(np.sqrt(8.0 * K_B * temperature / (np.pi * mass)))


def transit_rate(beam_diameter: float, temperature: float, mass: float) -> float:
    """Effective beam-transit relaxation rate, mean thermal speed / diameter."""
    return mean_thermal_speed(temperature, mass) / beam_diameter


@dataclass(frozen=True)
class AtomModel:
    """Decay rates, transit rate, dipole moments and wavelengths of the ladder.

    ``gamma2/3/4`` are the population decay rates of levels |2>, |3>, |4>;
    the decay chain is  |4> -> |3> -> |2> -> |1>  (effective-model choice:
    the small Rydberg decays are routed down the chain, not directly to the
    ground state).  ``gamma_transit`` uniformly relaxes every level and
    refills |1>.
    """

    gamma2: float
    gamma3: float
    gamma4: float
    gamma_transit: float
    d21: float
    d32: float
    d43: float
    lambda_p: float
    lambda_c: float
    mass: float
    abundance: float = 0.73

    def __post_init__(self) -> None:
        for name in ("gamma2", "gamma3", "gamma4", "d21", "d32", "d43",
                     "lambda_p", "lambda_c", "mass"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"AtomModel.{name} must be strictly positive")
        if self.gamma_transit < 0.0:
            raise ValueError("AtomModel.gamma_transit must be non-negative")
        if not 0.0 < self.abundance <= 1.0:
            raise ValueError("AtomModel.abundance must lie in (0, 1]")

    @property
    def k_p(self) -> float:
        """Probe wave number (rad/m)."""
        return 2.0 * np.pi / self.lambda_p

    @property
    def k_c(self) -> float:
        """Coupling wave number (rad/m)."""
        return 2.0 * np.pi / self.lambda_c

    @property
    def omega_p(self) -> float:
        """Probe carrier angular frequency (rad/s)."""
        return 2.0 * np.pi * C_LIGHT / self.lambda_p


# Default parameter set for the Rb-85 receiver (50D5/2 / 51P3/2 Rydberg pair).
#
# gamma2 and d21 are the well-established D2-line values; gamma3, gamma4, d32
# and d43 are reconstructions from open atomic-structure calculators
# (room-temperature lifetimes of the Rydberg pair, and the 5P3/2 -> 50D5/2 /
# 50D5/2 -> 51P3/2 effective dipoles for linearly polarized light).  They are
# configuration inputs, not hard-coded truths; override them freely.
RB85_MASS = 84.9117893 * 1.66053906892e-27  # kg

_DEFAULTS = dict(
    gamma2=2.0 * np.pi * 6.0666e6,
    gamma3=2.0 * np.pi * 4.0e3,
    gamma4=2.0 * np.pi * 2.0e3,
    d21=2.537e-29,
    d32=5.0e-32,
    d43=1.2e-26,
    lambda_p=780.241e-9,
    lambda_c=480.0e-9,
    mass=RB85_MASS,
    abundance=0.73,
)


def rb85_default(temperature: float = 293.0,
                 beam_diameter: float = 0.3e-3,
                 **overrides) -> AtomModel:
    """Rb-85 receiver defaults; transit rate from beam size and temperature."""
    params = dict(_DEFAULTS)
    params["gamma_transit"] = transit_rate(beam_diameter, temperature,
                                           params["mass"])
    params.update(overrides)
    return AtomModel(**params)


def rabi_from_field(E, d: float):
    """Rabi amplitude d*E/hbar (rad/s); E may be complex to carry phase."""
    if d <= 0.0:
        raise ValueError("dipole moment must be strictly positive")
    return d * E / HBAR


@dataclass(frozen=True)
class DriveConfig:
    """Harmonic-resolved Rabi amplitudes plus detunings and modulation rate.

    Each ``*_harmonics`` map sends a small integer harmonic index to the
    complex Rabi amplitude riding at ``carrier + index * omega_mod``; index 0
    is the carrier.  A phase-modulated coupling beam with sideband/carrier
    ratio r is {-1: -r*O_c, 0: O_c, +1: +r*O_c} (opposite-sign sidebands).
    """

    omega_p_harmonics: Mapping[int, complex]
    omega_c_harmonics: Mapping[int, complex]
    omega_rf_harmonics: Mapping[int, complex]
    delta_p: float = 0.0
    delta_c: float = 0.0
    delta_rf: float = 0.0
    omega_mod: float = 0.0

    def __post_init__(self) -> None:
        if self.has_sidebands and self.omega_mod <= 0.0:
            raise ValueError("omega_mod must be positive when any field has "
                             "a nonzero harmonic at index != 0")

    @property
    def has_sidebands(self) -> bool:
        return any(m != 0 and np.any(amp != 0)
                   for h in self._maps for m, amp in h.items())

    @property
    def _maps(self):
        return (self.omega_p_harmonics, self.omega_c_harmonics,
                self.omega_rf_harmonics)

    @property
    def max_harmonic(self) -> int:
        indices = [abs(m) for h in self._maps for m, amp in h.items()
                   if np.any(amp != 0)]
        return max(indices, default=0)


def phase_modulated(carrier, ratio: float) -> dict[int, complex]:
    """Opposite-sign first-order sidebands of a phase-modulated field."""
    return {-1: -ratio * carrier, 0: carrier, +1: ratio * carrier}


@dataclass
class HamiltonianHarmonics:
    """Map harmonic index m -> H_m with H(t) = sum_m H_m exp(-i m w_mod t).

    Every H_m is a complex array of shape (..., 4, 4); leading axes are
    broadcast batch dimensions (velocity classes, sweep points).  The pairing
    H_{-m} = H_m^dagger keeps H(t) Hermitian at all times.
    """

    terms: dict[int, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, m: int) -> np.ndarray:
        return self.terms[m]

    def __contains__(self, m: int) -> bool:
        return m in self.terms

    @property
    def indices(self) -> list[int]:
        return sorted(self.terms)

    @property
    def max_harmonic(self) -> int:
        return max((abs(m) for m in self.terms), default=0)

    def at_phase(self, theta: float) -> np.ndarray:
        """H evaluated at modulation phase theta = w_mod * t."""
        out = None
        for m, h in self.terms.items():
            term = h * np.exp(-1j * m * theta)
            out = term if out is None else out + term
        return out


def _add_coupling(terms: dict[int, np.ndarray], harmonics: Mapping[int, complex],
                  idx: tuple[int, int], shape: tuple[int, ...],
                  max_harmonic: int) -> None:
    i, j = idx
    for m, amp in harmonics.items():
        if not np.any(amp != 0):
            continue
        if abs(m) > max_harmonic:
            raise HarmonicCapError(
                f"harmonic index {m} exceeds the configured cap {max_harmonic}")
        half = 0.5 * np.asarray(amp, dtype=complex)
        for idx_m, (a, b), value in (((m), (i, j), half),
                                     ((-m), (j, i), np.conj(half))):
            if idx_m not in terms:
                terms[idx_m] = np.zeros(shape, dtype=complex)
            terms[idx_m][..., a, b] += value


def build_hamiltonian(drive: DriveConfig, velocity, atom: AtomModel,
                      max_harmonic: int = 3) -> HamiltonianHarmonics:
    """Rotating-frame Hamiltonian harmonics for one or many velocity classes.

    ``velocity`` may be a scalar or an array; drive harmonic amplitudes may
    themselves be arrays broadcastable against it, and the returned H_m have
    the broadcast shape + (4, 4).
    """
    v = np.asarray(velocity, dtype=float)
    dp = drive.delta_p - atom.k_p * v
    dc = drive.delta_c + atom.k_c * v

    batch = np.broadcast_shapes(
        v.shape, *(np.asarray(amp).shape for h in (drive.omega_p_harmonics,
                                                   drive.omega_c_harmonics,
                                                   drive.omega_rf_harmonics)
                   for amp in h.values()))
    shape = batch + (N_LEVELS, N_LEVELS)

    h0 = np.zeros(shape, dtype=complex)
    h0[..., 1, 1] = -dp
    h0[..., 2, 2] = -(dp + dc)
    h0[..., 3, 3] = -(dp + dc + drive.delta_rf)

    terms = {0: h0}
    _add_coupling(terms, drive.omega_p_harmonics, _PROBE_IDX, shape, max_harmonic)
    _add_coupling(terms, drive.omega_c_harmonics, _COUPLING_IDX, shape, max_harmonic)
    _add_coupling(terms, drive.omega_rf_harmonics, _RF_IDX, shape, max_harmonic)
    return HamiltonianHarmonics(terms)


def commutator_superop(h: np.ndarray) -> np.ndarray:
    """Superoperator of -i[H, .] acting on row-major vec(rho); batched.

    Row-major vectorization:  vec(H rho)[(a,b),(c,d)] = H[a,c] delta[b,d]
    and  vec(rho H)[(a,b),(c,d)] = delta[a,c] H[d,b].
    """
    h = np.asarray(h, dtype=complex)
    eye = np.eye(N_LEVELS, dtype=complex)
    left = np.einsum("...ac,bd->...abcd", h, eye)
    right = np.einsum("ac,...db->...abcd", eye, h)
    return (-1j * (left - right)).reshape(h.shape[:-2] + (N_SUPER, N_SUPER))


def _lindblad_superop(op: np.ndarray) -> np.ndarray:
    """Superoperator of C rho C+ - (C+C rho + rho C+C)/2 for a single jump op."""
    cdc = op.conj().T @ op
    eye = np.eye(N_LEVELS, dtype=complex)
    sandwich = np.kron(op, op.conj())
    anti = 0.5 * (np.kron(cdc, eye) + np.kron(eye, cdc.T))
    return sandwich - anti


def build_dissipator(atom: AtomModel) -> np.ndarray:
    """16x16 Lindblad generator: chain decay plus transit relaxation.

    Chain decay |4> -> |3> -> |2> -> |1> at gamma4 / gamma3 / gamma2;
    transit drains every level at gamma_transit and feeds the whole loss
    back into |1>, so the generator is trace-preserving.
    """
    dis = np.zeros((N_SUPER, N_SUPER), dtype=complex)
    chain = ((0, 1, atom.gamma2), (1, 2, atom.gamma3), (2, 3, atom.gamma4))
    for lower, upper, rate in chain:
        op = np.zeros((N_LEVELS, N_LEVELS), dtype=complex)
        op[lower, upper] = np.sqrt(rate)
        dis += _lindblad_superop(op)
    if atom.gamma_transit > 0.0:
        ground = np.zeros(N_SUPER, dtype=complex)
        ground[0] = 1.0  # vec(|1><1|)
        dis += atom.gamma_transit * (np.outer(ground, TRACE_ROW)
                                     - np.eye(N_SUPER, dtype=complex))
    return dis


def apply_superop(superop: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Apply a (...,16,16) superoperator to a (...,4,4) density matrix."""
    vec = np.asarray(rho, dtype=complex).reshape(rho.shape[:-2] + (N_SUPER,))
    out = np.einsum("...ij,...j->...i", superop, vec)
    return out.reshape(rho.shape)


def _solve_with_trace(generator: np.ndarray) -> np.ndarray:
    """Solve L[rho] = 0 with tr(rho) = 1; generator is (...,16,16)."""
    lhs = np.array(generator, dtype=complex)
    lhs[..., 0, :] = TRACE_ROW
    rhs = np.zeros(lhs.shape[:-1], dtype=complex)
    rhs[..., 0] = 1.0
    vec = np.linalg.solve(lhs, rhs[..., None])[..., 0]
    return vec.reshape(lhs.shape[:-2] + (N_LEVELS, N_LEVELS))


def steady_state_static(h0: np.ndarray, dissipator: np.ndarray,
                        null_tol: float = 1e-5) -> np.ndarray:
    """Steady state of L = -i[H0,.] + D, solved as a linear system.

    One equation is replaced by the unit-trace constraint.  Raises
    :class:`SingularSystemError` when the null space of L is not
    one-dimensional at ``null_tol`` (relative to the largest singular value),
    which happens for pathological rate choices.
    """
    h0 = np.asarray(h0, dtype=complex)
    if h0.shape != (N_LEVELS, N_LEVELS):
        raise ValueError("steady_state_static expects a single 4x4 Hamiltonian")
    gen = commutator_superop(h0) + dissipator
    sv = np.linalg.svd(gen, compute_uv=False)
    null_dim = int(np.sum(sv < null_tol * sv[0]))
    if null_dim != 1:
        raise SingularSystemError(
            f"steady-state null space has dimension {null_dim}, expected 1")
    try:
        return _solve_with_trace(gen)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded above
        raise SingularSystemError(str(exc)) from exc
