"""Periodic steady states of the modulated ladder by matrix continued fractions.

The density matrix of a system driven at harmonics of ``omega_mod`` settles
into  rho(t) = sum_n rho^(n) exp(-i n w t)  with  rho^(-n) = rho^(n)^dagger.
Inserting the expansion into  drho/dt = -i[H(t), rho] + D[rho]  and matching
harmonics gives the balance equations

    (L_0 + i n w) rho^(n) + sum_{m != 0} L_m rho^(n-m) = 0,

with L_0 = -i[H_0, .] + D and L_m = -i[H_m, .].  For drives limited to
|m| <= 1 the system is block tridiagonal in n and is eliminated by the
two-sided matrix continued fraction; :func:`solve_direct` stacks all
harmonics into one linear system instead, and :func:`time_domain_oracle`
integrates the master equation to its periodic attractor.  The three
routes agree to solver precision and cross-check each other in the tests.

All superoperator blocks act on row-major vec(rho) and may carry leading
batch axes (velocity classes, sweep points); the continued fraction then
runs batched through ``numpy.linalg.solve``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from rydmt.atom import (
    N_LEVELS,
    N_SUPER,
    TRACE_ROW,
    HamiltonianHarmonics,
    SingularSystemError,
    commutator_superop,
)

EYE16 = np.eye(N_SUPER, dtype=complex)


class NotTridiagonalError(ValueError):
    """Drive harmonics beyond |m| = 1: the continued fraction does not apply."""


class NoConvergenceError(RuntimeError):
    """Growing the truncation order keeps changing the first-harmonic blocks."""


class StepFailureError(RuntimeError):
    """The time-domain integrator did not meet its tolerance."""


@dataclass(frozen=True)
class FloquetConfig:
    """Truncation control for the harmonic expansion.

    ``n_max`` is the starting truncation order; with ``adapt`` enabled the
    order is doubled until the first-harmonic solution moves by less than
    ``tol`` (relative), up to ``n_limit``.
    """

    n_max: int = 5
    tol: float = 1e-8
    adapt: bool = True
    n_limit: int = 48

    def __post_init__(self) -> None:
        if self.n_max < 1:
            raise ValueError("FloquetConfig.n_max must be >= 1")
        if self.tol <= 0.0:
            raise ValueError("FloquetConfig.tol must be positive")


@dataclass
class HarmonicDensityMatrix:
    """Map harmonic index n in [-N, N] -> rho^(n), arrays of shape (..., 4, 4).

    Invariants (enforced by the solvers, verified in tests): reality pairing
    rho^(-n) = rho^(n)^dagger, tr rho^(0) = 1 and tr rho^(n) = 0 otherwise.
    """

    terms: dict[int, np.ndarray]

    def __getitem__(self, n: int) -> np.ndarray:
        return self.terms[n]

    def __contains__(self, n: int) -> bool:
        return n in self.terms

    @property
    def n_max(self) -> int:
        return max(abs(n) for n in self.terms)

    def rho(self, n: int) -> np.ndarray:
        """rho^(n), or zeros beyond the truncation order."""
        if n in self.terms:
            return self.terms[n]
        ref = self.terms[0]
        return np.zeros_like(ref)

    def rho21(self, n: int) -> np.ndarray:
        """Harmonic n of the probe-transition coherence (element [0, 1])."""
        return self.rho(n)[..., 0, 1]

    def at_phase(self, theta: float) -> np.ndarray:
        """rho evaluated at modulation phase theta = w t."""
        out = np.zeros_like(self.terms[0])
        for n, r in self.terms.items():
            out = out + r * np.exp(-1j * n * theta)
        return out


def assemble_blocks(hamiltonian: HamiltonianHarmonics,
                    dissipator: np.ndarray) -> dict[int, np.ndarray]:
    """Superoperator blocks L_m of the harmonic balance equations.

    L_0 = -i[H_0, .] + D;  L_m = -i[H_m, .] for m != 0.  Batch axes of the
    Hamiltonian harmonics are preserved.
    """
    blocks: dict[int, np.ndarray] = {}
    for m in hamiltonian.indices:
        block = commutator_superop(hamiltonian[m])
        if m == 0:
            block = block + dissipator
        blocks[m] = block
    return blocks


def balance_residual(blocks, omega_mod, solution: HarmonicDensityMatrix) -> float:
    """Max norm of the harmonic balance equations over all solved n."""
    worst = 0.0
    for n in sorted(solution.terms):
        acc = np.einsum("...ij,...j->...i", blocks[0] + 1j * n * omega_mod * EYE16,
                        solution.rho(n).reshape(solution.rho(n).shape[:-2] + (N_SUPER,)))
        for m in blocks:
            if m == 0:
                continue
            rho_nm = solution.rho(n - m)
            acc = acc + np.einsum("...ij,...j->...i", blocks[m],
                                  rho_nm.reshape(rho_nm.shape[:-2] + (N_SUPER,)))
        worst = max(worst, float(np.abs(acc).max()))
    return worst


def _solve_zero_harmonic(a_eff: np.ndarray) -> np.ndarray:
    """Solve the effective carrier equation with the unit-trace row."""
    lhs = np.array(a_eff)
    lhs[..., 0, :] = TRACE_ROW
    rhs = np.zeros(lhs.shape[:-1], dtype=complex)
    rhs[..., 0] = 1.0
    try:
        return np.linalg.solve(lhs, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc


def _continued_fraction_once(blocks, omega_mod: float, n_max: int
                             ) -> HarmonicDensityMatrix:
    l0 = blocks[0]
    lp = blocks.get(+1)
    lm = blocks.get(-1)
    batch = l0.shape[:-2]
    zeros = np.zeros(batch + (N_SUPER, N_SUPER), dtype=complex)
    if lp is None:
        lp = zeros
    if lm is None:
        lm = zeros

    # upward ladder rho^(n) = S_n rho^(n-1), downward rho^(-n) = T_n rho^(-(n-1))
    s_ladder: dict[int, np.ndarray] = {}
    t_ladder: dict[int, np.ndarray] = {}
    s_next = zeros
    t_next = zeros
    for n in range(n_max, 0, -1):
        a_up = l0 + (1j * n * omega_mod) * EYE16
        a_dn = l0 - (1j * n * omega_mod) * EYE16
        s_ladder[n] = -np.linalg.solve(a_up + lm @ s_next, lp)
        t_ladder[n] = -np.linalg.solve(a_dn + lp @ t_next, lm)
        s_next = s_ladder[n]
        t_next = t_ladder[n]

    a_eff = l0 + lm @ s_ladder[1] + lp @ t_ladder[1]
    vec0 = _solve_zero_harmonic(a_eff)

    terms = {0: vec0.reshape(batch + (N_LEVELS, N_LEVELS))}
    up = vec0
    down = vec0
    for n in range(1, n_max + 1):
        up = np.einsum("...ij,...j->...i", s_ladder[n], up)
        down = np.einsum("...ij,...j->...i", t_ladder[n], down)
        terms[n] = up.reshape(batch + (N_LEVELS, N_LEVELS))
        terms[-n] = down.reshape(batch + (N_LEVELS, N_LEVELS))
    return HarmonicDensityMatrix(terms)


def _first_harmonic_change(a: HarmonicDensityMatrix,
                           b: HarmonicDensityMatrix) -> float:
    scale = max(float(np.abs(a.rho(1)).max()), float(np.abs(a.rho(-1)).max()), 1e-300)
    diff = max(float(np.abs(a.rho(1) - b.rho(1)).max()),
               float(np.abs(a.rho(-1) - b.rho(-1)).max()))
    # fall back to an absolute criterion when the sidebands are essentially zero
    if scale < 1e-18:
        return diff
    return diff / scale


def _check_tridiagonal(blocks) -> None:
    bad = [m for m, block in blocks.items() if abs(m) > 1 and np.any(block != 0)]
    if bad:
        raise NotTridiagonalError(
            f"nonzero drive blocks at harmonics {sorted(bad)}; use solve_direct")


def _adaptive_solve(blocks, omega_mod: float, cfg: FloquetConfig
                    ) -> tuple[int, HarmonicDensityMatrix]:
    """Double the truncation order until the first harmonics stop moving.

    Returns the smallest converged order together with the solution at twice
    that order (the more accurate of the two).
    """
    n = cfg.n_max
    current = _continued_fraction_once(blocks, omega_mod, n)
    while True:
        grown = _continued_fraction_once(blocks, omega_mod, 2 * n)
        if _first_harmonic_change(grown, current) <= cfg.tol:
            return n, grown
        n *= 2
        current = grown
        if 2 * n > cfg.n_limit:
            raise NoConvergenceError(
                f"first harmonics still moving at truncation order {n}")


def resolve_truncation(blocks, omega_mod: float, cfg: FloquetConfig) -> int:
    """Smallest truncation order at which the first harmonics have converged."""
    _check_tridiagonal(blocks)
    return _adaptive_solve(blocks, omega_mod, cfg)[0]


def solve_continued_fraction(blocks, omega_mod: float,
                             cfg: FloquetConfig | None = None
                             ) -> HarmonicDensityMatrix:
    """Periodic steady state by two-sided matrix continued fraction.

    Requires a block-tridiagonal system (drive harmonics |m| <= 1); raises
    :class:`NotTridiagonalError` otherwise, in which case
    :func:`solve_direct` is the general fallback.  With ``cfg.adapt`` the
    truncation order doubles until the first harmonic stops moving.
    """
    cfg = cfg or FloquetConfig()
    _check_tridiagonal(blocks)
    if omega_mod <= 0.0:
        raise ValueError("omega_mod must be positive")
    if not cfg.adapt:
        return _continued_fraction_once(blocks, omega_mod, cfg.n_max)
    return _adaptive_solve(blocks, omega_mod, cfg)[1]


def solve_direct(blocks, omega_mod: float, n_max: int) -> HarmonicDensityMatrix:
    """Periodic steady state by one stacked linear solve over all harmonics.

    Handles arbitrary drive harmonics (not just tridiagonal); serves as the
    direct oracle for the continued-fraction path.  The trace constraint
    replaces one equation inside the n = 0 block.
    """
    offsets = [m for m in blocks if m != 0]
    if n_max < max((abs(m) for m in offsets), default=0):
        raise ValueError("n_max must be at least the largest drive harmonic")
    count = 2 * n_max + 1
    batch = blocks[0].shape[:-2]
    big = np.zeros(batch + (count * N_SUPER, count * N_SUPER), dtype=complex)
    for row, n in enumerate(range(-n_max, n_max + 1)):
        sl_r = slice(row * N_SUPER, (row + 1) * N_SUPER)
        big[..., sl_r, sl_r] = blocks[0] + (1j * n * omega_mod) * EYE16
        for m in offsets:
            col = row - m  # couples rho^(n-m)
            if 0 <= col < count:
                sl_c = slice(col * N_SUPER, (col + 1) * N_SUPER)
                big[..., sl_r, sl_c] += blocks[m]
    zero_row = n_max * N_SUPER  # first equation of the n = 0 block
    big[..., zero_row, :] = 0.0
    big[..., zero_row, zero_row:zero_row + N_SUPER] = TRACE_ROW
    rhs = np.zeros(batch + (count * N_SUPER,), dtype=complex)
    rhs[..., zero_row] = 1.0
    try:
        stacked = np.linalg.solve(big, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    terms = {}
    for row, n in enumerate(range(-n_max, n_max + 1)):
        vec = stacked[..., row * N_SUPER:(row + 1) * N_SUPER]
        terms[n] = vec.reshape(batch + (N_LEVELS, N_LEVELS))
    return HarmonicDensityMatrix(terms)


def liouvillian_gap(blocks) -> float:
    """Slowest relaxation rate of the carrier generator L_0 (scalar blocks)."""
    eigvals = np.linalg.eigvals(blocks[0])
    rates = -eigvals.real
    rates = rates[rates > 1e-9 * rates.max()]
    return float(rates.min())


def time_domain_oracle(hamiltonian: HamiltonianHarmonics, dissipator: np.ndarray,
                       omega_mod: float, duration: float | None = None,
                       sample_count: int = 256, rtol: float = 1e-10,
                       atol: float = 1e-12) -> HarmonicDensityMatrix:
    """Brute-force periodic steady state from direct time integration.

    Integrates  drho/dt = -i[H(t), rho] + D[rho]  from rho(0) = |1><1| for
    ``duration`` (default 20 relaxation times, estimated from the carrier
    Liouvillian gap), then projects the final modulation period onto
    exp(-i n w t) by uniform quadrature.  Independent of the harmonic-balance
    solvers; used as their oracle.  Scalar (unbatched) blocks only.
    """
    blocks = assemble_blocks(hamiltonian, dissipator)
    if blocks[0].shape != (N_SUPER, N_SUPER):
        raise ValueError("time_domain_oracle expects unbatched harmonics")
    if omega_mod <= 0.0:
        raise ValueError("omega_mod must be positive")
    if duration is None:
        duration = 20.0 / liouvillian_gap(blocks)

    period = 2.0 * np.pi / omega_mod
    n_periods = max(int(np.ceil(duration / period)), 1)
    t_end = n_periods * period

    indices = np.array(sorted(blocks))
    stack = np.stack([blocks[m] for m in indices])

    def rhs(t, y):
        phases = np.exp(-1j * indices * omega_mod * t)
        gen = np.tensordot(phases, stack, axes=1)
        return gen @ y

    rho0 = np.zeros(N_SUPER, dtype=complex)
    rho0[0] = 1.0

    t_samples = t_end - period + np.arange(sample_count) * (period / sample_count)
    # make sure the sample window is inside the integration range
    t_eval = np.clip(t_samples, 0.0, t_end)
    sol = solve_ivp(rhs, (0.0, t_end), rho0, method="DOP853",
                    t_eval=t_eval, rtol=rtol, atol=atol)
    if not sol.success:
        raise StepFailureError(sol.message)

    samples = sol.y.T.reshape(sample_count, N_LEVELS, N_LEVELS)
    n_keep = max(hamiltonian.max_harmonic * 4, 6)
    terms = {}
    for n in range(-n_keep, n_keep + 1):
        weights = np.exp(1j * n * omega_mod * t_samples)
        terms[n] = np.tensordot(weights, samples, axes=1) / sample_count
    return HarmonicDensityMatrix(terms)
