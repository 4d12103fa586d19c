"""Semi-classical simulator of an EIT-based Rydberg RF receiver.

Library layers, bottom to top:

* :mod:`rydmt.atom`     four-level ladder, Hamiltonian harmonics, dissipator,
                        static steady state
* :mod:`rydmt.floquet`  periodic steady states by matrix continued fractions,
                        with direct-block and time-domain cross-check solvers
* :mod:`rydmt.doppler`  Maxwell-Boltzmann velocity grids and averaging
* :mod:`rydmt.cell`     layered propagation through the optically thick cell
* :mod:`rydmt.signals`  conventional and modulation-transfer signals, sweeps,
                        slope fits, shot-noise sensitivity
* :mod:`rydmt.config`   run configuration, presets and experiment runner
* :mod:`rydmt.cli`      command-line front end
"""

from rydmt.atom import (
    AtomModel,
    DriveConfig,
    HamiltonianHarmonics,
    HarmonicCapError,
    SingularSystemError,
    build_dissipator,
    build_hamiltonian,
    phase_modulated,
    rabi_from_field,
    rb85_default,
    steady_state_static,
    transit_rate,
)

__all__ = [
    "AtomModel",
    "DriveConfig",
    "HamiltonianHarmonics",
    "HarmonicCapError",
    "SingularSystemError",
    "build_dissipator",
    "build_hamiltonian",
    "phase_modulated",
    "rabi_from_field",
    "rb85_default",
    "steady_state_static",
    "transit_rate",
]

__version__ = "0.1.0"
