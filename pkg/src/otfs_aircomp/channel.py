"""Path sampling, time-domain / effective channel matrices, CSI aging and
channel-error matrices.

A :class:`PathSet` stores its paths as parallel arrays. The time-domain
channel is kept sparse (one cyclic shift plus one phase vector per path);
dense matrices are assembled on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .otfs import DENSE_LIMIT, doppler_phases, otfs_modulate

__all__ = [
    "INTEGER",
    "FRACTIONAL",
    "InfeasibleConfigError",
    "PathSet",
    "GaussMarkovModel",
    "EffectiveChannel",
    "complex_normal",
    "split_doppler",
    "sample_paths",
    "path_phase_vector",
    "apply_time_domain_channel",
    "build_time_domain_channel",
    "build_effective_channel",
    "round_trip_paths",
    "evolve_gains",
    "build_error_matrix",
    "error_covariance_theory",
]

INTEGER = "integer"
FRACTIONAL = "fractional"
_MODES = (INTEGER, FRACTIONAL)


class InfeasibleConfigError(ValueError):
    """A configuration that cannot be realized on the grid."""


def complex_normal(rng: np.random.Generator, size, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with the given variance."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def split_doppler(total) -> tuple[np.ndarray, np.ndarray]:
    """Split a real Doppler value into nearest integer plus remainder.

    The remainder lies in ``[-0.5, 0.5)``.
    """
    total = np.asarray(total, dtype=float)
    k = np.floor(total + 0.5)
    return k.astype(int), total - k


@dataclass(frozen=True)
class PathSet:
    """``P`` propagation paths.

    Attributes
    ----------
    delays : int array
        Delay taps ``l_p``.
    dopplers : int array
        Integer Doppler taps ``k_p``.
    fractions : float array
        Fractional Doppler parts ``kappa_p`` in ``[-0.5, 0.5]`` (all zero in
        integer mode).
    gains : complex array
        Path gains ``h_p``.
    mode : str
        ``"integer"`` or ``"fractional"``.
    """

    delays: np.ndarray
    dopplers: np.ndarray
    fractions: np.ndarray
    gains: np.ndarray
    mode: str = INTEGER

    def __post_init__(self):
        delays = np.atleast_1d(np.asarray(self.delays, dtype=int))
        dopplers = np.atleast_1d(np.asarray(self.dopplers, dtype=int))
        fractions = np.atleast_1d(np.asarray(self.fractions, dtype=float))
        gains = np.atleast_1d(np.asarray(self.gains, dtype=complex))
        P = delays.shape[0]
        if P < 1:
            raise ValueError("a PathSet needs at least one path")
        for name, arr in (("dopplers", dopplers), ("fractions", fractions), ("gains", gains)):
            if arr.shape != (P,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({P},)")
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == INTEGER and np.any(fractions != 0):
            raise ValueError("integer-mode paths must have zero fractional Doppler")
        if np.any(np.abs(fractions) > 0.5 + 1e-12):
            raise ValueError("fractional Doppler must lie in [-0.5, 0.5]")
        for name, arr in (("delays", delays), ("dopplers", dopplers), ("fractions", fractions), ("gains", gains)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def integer(cls, delays, dopplers, gains) -> "PathSet":
        delays = np.atleast_1d(delays)
        return cls(delays, dopplers, np.zeros(delays.shape[0]), gains, INTEGER)

    @property
    def P(self) -> int:
        return int(self.delays.shape[0])

    @property
    def total_dopplers(self) -> np.ndarray:
        """``k_p + kappa_p``."""
        return self.dopplers + self.fractions

    def with_gains(self, gains) -> "PathSet":
        return replace(self, gains=np.asarray(gains, dtype=complex))

    def permuted(self, order) -> "PathSet":
        order = np.asarray(order)
        return PathSet(
            self.delays[order], self.dopplers[order], self.fractions[order], self.gains[order], self.mode
        )


def sample_paths(
    P: int, l_max: int, k_max: int, mode: str, rng: np.random.Generator
) -> PathSet:
    """Draw a random :class:`PathSet`.

    Delay taps are distinct (drawn without replacement from ``0..l_max``),
    Doppler taps uniform on ``-k_max..k_max``, fractional parts uniform on
    ``[-0.5, 0.5]`` in fractional mode, gains ``CN(0, 1/P)``.
    """
    if mode not in _MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if P < 1:
        raise InfeasibleConfigError("P must be at least 1")
    if P > l_max + 1:
        raise InfeasibleConfigError(
            f"P = {P} paths need distinct delay taps but only {l_max + 1} exist (P > l_max + 1)"
        )
    delays = rng.choice(l_max + 1, size=P, replace=False)
    dopplers = rng.integers(-k_max, k_max + 1, size=P)
    if mode == FRACTIONAL:
        fractions = rng.uniform(-0.5, 0.5, size=P)
    else:
        fractions = np.zeros(P)
    gains = complex_normal(rng, P, 1.0 / P)
    return PathSet(delays, dopplers, fractions, gains, mode)


def path_phase_vector(MN: int, delay: int, doppler: float, wrapped: bool) -> np.ndarray:
    """Doppler diagonal of a single path.

    Unwrapped: ``w^i`` for ``i = 0..MN-1``. Wrapped (fractional builder):
    ``w^0 .. w^(MN-1-l), w^-l .. w^-1``, with ``w = exp(j 2 pi nu / MN)``.
    """
    phases = doppler_phases(MN, doppler)
    if wrapped and delay > 0:
        tail = np.arange(MN - delay, MN) - MN
        phases[MN - delay :] = np.exp(2j * np.pi * doppler * tail / MN)
    return phases


def _check_taps(paths: PathSet, M: int, N: int) -> None:
    if np.any(paths.delays < 0) or np.any(paths.delays >= M):
        raise ValueError(f"delay taps {paths.delays.tolist()} outside [0, {M - 1}]")
    if np.any(np.abs(paths.total_dopplers) > N / 2):
        raise ValueError(f"Doppler taps {paths.total_dopplers.tolist()} exceed N/2 = {N / 2}")


def _sparse_terms(paths: PathSet, M: int, N: int):
    MN = M * N
    wrapped = paths.mode == FRACTIONAL
    for l, nu, h in zip(paths.delays, paths.total_dopplers, paths.gains):
        yield int(l), h * path_phase_vector(MN, int(l), float(nu), wrapped)


def apply_time_domain_channel(paths: PathSet, x: np.ndarray, M: int, N: int) -> np.ndarray:
    """Compute ``H^TD x`` without forming the matrix.

    ``x`` may carry trailing batch dimensions.
    """
    _check_taps(paths, M, N)
    x = np.asarray(x)
    out = np.zeros(x.shape, dtype=complex)
    bshape = (-1,) + (1,) * (x.ndim - 1)
    for l, diag in _sparse_terms(paths, M, N):
        out += np.roll(diag.reshape(bshape) * x, l, axis=0)
    return out


def build_time_domain_channel(paths: PathSet, M: int, N: int) -> np.ndarray:
    """Dense ``H^TD``.

    Integer mode gives ``sum_p h_p Pi^l_p Delta^k_p``; fractional mode uses the
    delay-wrapped diagonal ``Delta(p)`` instead of ``Delta^k_p``.
    """
    _check_taps(paths, M, N)
    MN = M * N
    if MN > DENSE_LIMIT:
        raise ValueError(f"refusing to materialize a {MN}x{MN} dense matrix")
    H = np.zeros((MN, MN), dtype=complex)
    cols = np.arange(MN)
    for l, diag in _sparse_terms(paths, M, N):
        H[(cols + l) % MN, cols] += diag
    return H


@dataclass(frozen=True)
class EffectiveChannel:
    """``H = H^TD (W_N^H kron I_M)`` together with the paths it came from."""

    matrix: np.ndarray
    paths: PathSet
    M: int
    N: int


def _right_modulate(A: np.ndarray, M: int, N: int) -> np.ndarray:
    # (W_N^H kron I_M) is symmetric, so A @ it == (it @ A.T).T
    return otfs_modulate(A.T, M, N).T


def build_effective_channel(paths: PathSet, M: int, N: int) -> EffectiveChannel:
    H_td = build_time_domain_channel(paths, M, N)
    return EffectiveChannel(_right_modulate(H_td, M, N), paths, M, N)


def round_trip_paths(paths: PathSet, M: int) -> PathSet:
    """Echo (round-trip) paths: doubled delay and Doppler, same gains.

    In fractional mode ``2 (k + kappa)`` is re-split into nearest integer plus
    remainder.
    """
    delays = 2 * paths.delays
    if np.any(delays >= M):
        raise ValueError(f"round-trip delay taps {delays.tolist()} exceed the grid (M = {M})")
    k, kappa = split_doppler(2 * paths.total_dopplers)
    if paths.mode == INTEGER:
        kappa = np.zeros_like(kappa)
    return PathSet(delays, k, kappa, paths.gains, paths.mode)


@dataclass(frozen=True)
class GaussMarkovModel:
    """First-order Gauss-Markov gain aging plus the pilot noise budget.

    ``sigma_e_sq`` is the variance of ``h_t - rho * h_hat_{t-1}``.
    """

    rho: float
    sigma_w_sq: float
    pilot_amplitude: float
    P: int

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.sigma_w_sq < 0:
            raise ValueError("sigma_w_sq must be nonnegative")
        if self.pilot_amplitude <= 0:
            raise ValueError("pilot amplitude must be positive")
        if self.P < 1:
            raise ValueError("P must be at least 1")

    @property
    def sigma_e_sq(self) -> float:
        rho_sq = self.rho**2
        return rho_sq * self.sigma_w_sq / self.pilot_amplitude**2 + (1.0 - rho_sq) / self.P


def evolve_gains(paths: PathSet, model: GaussMarkovModel, rng: np.random.Generator) -> PathSet:
    """One step ``h_t = rho h_{t-1} + sqrt(1 - rho^2) z``, ``z ~ CN(0, 1/P)``."""
    z = complex_normal(rng, paths.P, 1.0 / model.P)
    rho = model.rho
    return paths.with_gains(rho * paths.gains + np.sqrt(1.0 - rho**2) * z)


def build_error_matrix(paths: PathSet, errors, M: int, N: int) -> np.ndarray:
    """Effective-domain error matrix with per-path errors ``e_p`` in place of the gains."""
    errors = np.asarray(errors, dtype=complex)
    if errors.shape != (paths.P,):
        raise ValueError(f"expected {paths.P} path errors, got shape {errors.shape}")
    return build_effective_channel(paths.with_gains(errors), M, N).matrix


def error_covariance_theory(P: int, sigma_e_sq: float) -> float:
    """Scalar ``c`` in ``E[E^H E] = c I``."""
    if P < 1 or sigma_e_sq < 0:
        raise ValueError("need P >= 1 and sigma_e_sq >= 0")
    return P * sigma_e_sq
