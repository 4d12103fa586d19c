"""Layered propagation of the probe through the optically thick vapor cell.

The cell is split into thin layers (default 100).  Inside each layer the
probe carrier and first-order sidebands drive the atoms together with the
coupling and RF fields; the Doppler-averaged probe coherence harmonics then
source the field update

    E_{p,n} <- E_{p,n} + i * (w_p N d21 / (2 eps0 c)) * <rho21^(n)> * dz

for n in {-1, 0, +1}, where N is the number density of the interacting
isotope.  Coupling and RF amplitudes pass through unchanged (no depletion:
the coupling beam is orders of magnitude stronger than what the thin vapor
absorbs via the weakly populated intermediate state).

Two probe-feedback modes are provided.  ``feedback="self-consistent"``
(default) drives each layer with the full probe harmonic set at its actual
strength, saturation effects included.  ``feedback="linear"`` treats the
probe to first order: the layer response is the exact linearization of the
atomic response in the joint (carrier + sideband) probe vector, realized by
scaling the probe drive down by a factor eps and the resulting coherence
harmonics back up.  Sidebands still absorb and refract in both modes; the
difference is purely probe saturation, which stays below 1e-3 on the
normalized signals at the sub-microwatt design power (tested).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np
from scipy.constants import c as C_LIGHT
from scipy.constants import epsilon_0 as EPS0

from rydmt.atom import (
    AtomModel,
    DriveConfig,
    build_dissipator,
    build_hamiltonian,
    rabi_from_field,
)
from rydmt.doppler import VelocityGrid, average_stacked
from rydmt.floquet import (
    FloquetConfig,
    HarmonicDensityMatrix,
    assemble_blocks,
    resolve_truncation,
    solve_continued_fraction,
)

PROBE_SIDEBAND_ORDERS = (-1, 0, +1)


class NotBracketedError(RuntimeError):
    """The density search interval cannot reach the target transmission."""


class LayerSolveError(RuntimeError):
    """A layer's atomic solve failed; carries the layer index."""

    def __init__(self, layer: int, message: str):
        super().__init__(f"atomic solve failed in layer {layer}: {message}")
        self.layer = layer


@dataclass(frozen=True)
class CellModel:
    """Vapor cell geometry and density of the interacting isotope.

    ``number_density`` already includes the isotopic abundance factor (the
    other isotope is ignored entirely).  ``perturbation_factor`` is the ratio
    of the average RF field inside the dielectric cell to the applied field.
    """

    length: float = 0.075
    n_layers: int = 100
    number_density: float = 0.0
    perturbation_factor: float = 0.52

    def __post_init__(self) -> None:
        if self.length <= 0.0:
            raise ValueError("CellModel.length must be positive")
        if self.n_layers < 1:
            raise ValueError("CellModel.n_layers must be >= 1")
        if self.number_density < 0.0:
            raise ValueError("CellModel.number_density must be >= 0")
        if not 0.0 < self.perturbation_factor <= 1.0:
            raise ValueError("CellModel.perturbation_factor must lie in (0, 1]")

    @property
    def layer_thickness(self) -> float:
        return self.length / self.n_layers


def effective_rf_field(e_applied: float, cell: CellModel) -> float:
    """Average RF field inside the cell for a given applied field."""
    if np.any(np.asarray(e_applied) < 0):
        raise ValueError("applied RF field must be >= 0")
    return cell.perturbation_factor * e_applied


@dataclass(frozen=True)
class ProbeHarmonics:
    """Probe field amplitudes (V/m) at carrier + n * omega_mod, n in {-1,0,+1}.

    Amplitudes may be scalars or equal-shaped arrays (sweep batches).
    """

    fields: Mapping[int, complex]

    def __post_init__(self) -> None:
        extra = set(self.fields) - set(PROBE_SIDEBAND_ORDERS)
        if extra:
            raise ValueError(f"unsupported probe harmonic indices {sorted(extra)}")
        for n, amp in self.fields.items():
            if not np.all(np.isfinite(np.asarray(amp))):
                raise ValueError(f"non-finite probe amplitude at harmonic {n}")

    @classmethod
    def carrier_only(cls, e0) -> "ProbeHarmonics":
        return cls({-1: np.zeros_like(np.asarray(e0, dtype=complex)),
                    0: np.asarray(e0, dtype=complex),
                    +1: np.zeros_like(np.asarray(e0, dtype=complex))})

    def __getitem__(self, n: int):
        if n in self.fields:
            return self.fields[n]
        return np.zeros_like(np.asarray(self.fields[0]))

    @property
    def total_power(self):
        """Sum of |E_n|^2 over the three tracked harmonics."""
        return sum(np.abs(np.asarray(self[n])) ** 2 for n in PROBE_SIDEBAND_ORDERS)


@dataclass(frozen=True)
class CellDrive:
    """Coupling and RF drive shared by every layer (Rabi amplitudes, rad/s)."""

    coupling_harmonics: Mapping[int, complex]
    rf_harmonics: Mapping[int, complex]
    delta_p: float = 0.0
    delta_c: float = 0.0
    delta_rf: float = 0.0
    omega_mod: float = 0.0

    def with_probe(self, probe_rabi: Mapping[int, complex]) -> DriveConfig:
        return DriveConfig(
            omega_p_harmonics=probe_rabi,
            omega_c_harmonics=self.coupling_harmonics,
            omega_rf_harmonics=self.rf_harmonics,
            delta_p=self.delta_p,
            delta_c=self.delta_c,
            delta_rf=self.delta_rf,
            omega_mod=self.omega_mod,
        )


# probe scaling used by the linearized mode; small enough to suppress
# saturation terms (O(eps^2)), large enough to stay far above solver noise
_LINEAR_EPS = 1e-4


def _probe_rabi(probe: ProbeHarmonics, atom: AtomModel, feedback: str,
                batch_extra: int) -> dict[int, np.ndarray]:
    """Probe Rabi harmonics entering the atomic drive.

    Amplitudes get a trailing singleton axis so that they broadcast against
    the velocity grid axis appended by the Hamiltonian builder.  In linear
    mode the whole probe vector is scaled by ``_LINEAR_EPS``; the layer
    update divides the response by the same factor, which yields the exact
    first-order (in probe) response with all sideband propagation effects.
    """
    def shaped(amp):
        arr = np.asarray(amp, dtype=complex)
        return arr.reshape(arr.shape + (1,) * batch_extra)

    if feedback == "self-consistent":
        scale = 1.0
    elif feedback == "linear":
        scale = _LINEAR_EPS
    else:
        raise ValueError(f"unknown feedback mode {feedback!r}")
    return {n: scale * rabi_from_field(shaped(probe[n]), atom.d21)
            for n in PROBE_SIDEBAND_ORDERS}


def _solve_layer(drive: DriveConfig, atom: AtomModel, dissipator: np.ndarray,
                 grid: VelocityGrid, floquet: FloquetConfig
                 ) -> HarmonicDensityMatrix:
    hamiltonian = build_hamiltonian(drive, grid.nodes, atom)
    blocks = assemble_blocks(hamiltonian, dissipator)
    if drive.has_sidebands:
        return average_stacked(
            solve_continued_fraction(blocks, drive.omega_mod, floquet), grid)
    # static drive: directly solve the carrier balance with the trace row
    from rydmt.atom import _solve_with_trace

    rho0 = _solve_with_trace(blocks[0])
    return average_stacked(HarmonicDensityMatrix({0: rho0}), grid)


def layer_step(probe_in: ProbeHarmonics, drive: CellDrive, atom: AtomModel,
               cell: CellModel, grid: VelocityGrid,
               floquet: FloquetConfig | None = None,
               feedback: str = "self-consistent",
               dissipator: np.ndarray | None = None,
               layer_index: int = 0) -> ProbeHarmonics:
    """Advance the probe harmonics through one thin layer."""
    if cell.number_density == 0.0:
        return probe_in
    floquet = floquet or FloquetConfig()
    dis = dissipator if dissipator is not None else build_dissipator(atom)
    local = drive.with_probe(_probe_rabi(probe_in, atom, feedback, 1))
    try:
        averaged = _solve_layer(local, atom, dis, grid, floquet)
    except Exception as exc:
        raise LayerSolveError(layer_index, str(exc)) from exc

    prefactor = (atom.omega_p * cell.number_density * atom.d21
                 / (2.0 * EPS0 * C_LIGHT))
    if feedback == "linear":
        prefactor = prefactor / _LINEAR_EPS
    dz = cell.layer_thickness
    fields = {}
    for n in PROBE_SIDEBAND_ORDERS:
        fields[n] = np.asarray(probe_in[n], dtype=complex) \
            + 1j * prefactor * averaged.rho21(n) * dz
    return ProbeHarmonics(fields)


def propagate(probe_in: ProbeHarmonics, drive: CellDrive, atom: AtomModel,
              cell: CellModel, grid: VelocityGrid,
              floquet: FloquetConfig | None = None,
              feedback: str = "self-consistent") -> ProbeHarmonics:
    """Fold :func:`layer_step` over all layers of the cell.

    For modulated drives the harmonic truncation order is resolved once from
    the entry drive (adaptive doubling) and then frozen: deeper layers see a
    weaker probe, which only improves convergence.
    """
    floquet = floquet or FloquetConfig()
    dis = build_dissipator(atom)

    entry = drive.with_probe(_probe_rabi(probe_in, atom, feedback, 1))
    if entry.has_sidebands and floquet.adapt and cell.number_density > 0.0:
        blocks = assemble_blocks(
            build_hamiltonian(entry, grid.nodes[::4], atom), dis)
        n_resolved = resolve_truncation(blocks, entry.omega_mod, floquet)
        floquet = replace(floquet, n_max=n_resolved, adapt=False)

    probe = probe_in
    for layer in range(cell.n_layers):
        probe = layer_step(probe, drive, atom, cell, grid, floquet,
                           feedback=feedback, dissipator=dis,
                           layer_index=layer)
    return probe


def transmission(probe_out: ProbeHarmonics, e_in) -> np.ndarray:
    """Carrier intensity transmission |E'_0|^2 / |E_in|^2."""
    return np.abs(np.asarray(probe_out[0])) ** 2 / np.abs(np.asarray(e_in)) ** 2


def calibrate_density(target_transmission: float, atom: AtomModel,
                      cell: CellModel, grid: VelocityGrid, probe_field: float,
                      delta_p: float = 0.0,
                      density_bounds: tuple[float, float] = (0.0, 2e17),
                      tol: float = 1e-4, max_iter: int = 200) -> float:
    """Bisect the number density to a coupling-off carrier transmission.

    Coupling and RF are off and the probe sits at ``delta_p`` (resonance by
    default).  Returns the density whose transmission matches
    ``target_transmission`` within ``tol``; raises
    :class:`NotBracketedError` when the bounds cannot reach the target.
    The default upper bound keeps the per-layer optical depth well inside
    the thin-layer regime while still reaching transmissions below 1e-10.
    """
    if not 0.0 < target_transmission <= 1.0:
        raise ValueError("target transmission must lie in (0, 1]")
    if target_transmission == 1.0:
        return 0.0

    drive = CellDrive({}, {}, delta_p=delta_p)
    probe_in = ProbeHarmonics.carrier_only(probe_field)

    def trans(density: float) -> float:
        out = propagate(probe_in, drive, atom, replace(cell, number_density=density),
                        grid)
        return float(transmission(out, probe_field))

    lo, hi = density_bounds
    if trans(hi) > target_transmission:
        raise NotBracketedError(
            f"upper density bound {hi:g} m^-3 still transmits more than "
            f"{target_transmission}")

    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        t_mid = trans(mid)
        if abs(t_mid - target_transmission) <= 0.5 * tol:
            return mid
        if t_mid > target_transmission:
            lo = mid
        else:
            hi = mid
    raise NotBracketedError("density bisection failed to converge")
