"""Robust and non-robust MMSE precoders and their MSE evaluators.

Both precoders are regularized inverses

    F = (H^H H + lam I)^-1 H^H

with ``lam = sigma_n^2 + P sigma_e^2`` (robust) or ``lam = sigma_n^2``
(non-robust). The closed-form MSE and the Monte Carlo MSE serve as oracles
for each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .channel import EffectiveChannel, PathSet, complex_normal, path_phase_vector, FRACTIONAL
from .otfs import otfs_modulate

__all__ = [
    "ROBUST",
    "NON_ROBUST",
    "CUSTOM",
    "SingularPrecoderError",
    "NoiseBudget",
    "Precoder",
    "power_normalization",
    "robust_mmse",
    "non_robust_mmse",
    "solve_residual",
    "mse_closed_form",
    "mse_monte_carlo",
    "gradient_check",
]

ROBUST = "robust"
NON_ROBUST = "nonrobust"
CUSTOM = "custom"


class SingularPrecoderError(LinAlgError):
    """The regularized normal matrix is not invertible."""


@dataclass(frozen=True)
class NoiseBudget:
    """Noise and error statistics seen by the precoder.

    ``P_t`` defaults to the matrix dimension (unit power per DD symbol).
    """

    sigma_n_sq: float
    sigma_e_sq: float = 0.0
    P: int = 1
    P_t: float | None = None

    def __post_init__(self):
        if self.sigma_n_sq < 0 or self.sigma_e_sq < 0:
            raise ValueError("noise variances must be nonnegative")
        if self.P < 1:
            raise ValueError("P must be at least 1")
        if self.P_t is not None and self.P_t <= 0:
            raise ValueError("P_t must be positive")

    @property
    def regularizer(self) -> float:
        return self.sigma_n_sq + self.P * self.sigma_e_sq

    def total_power(self, dim: int) -> float:
        return float(dim) if self.P_t is None else float(self.P_t)


def power_normalization(F: np.ndarray, P_t: float) -> float:
    """``gamma = sqrt(P_t / tr(F F^H))``; infinite for the zero precoder."""
    energy = float(np.vdot(F, F).real)
    return np.inf if energy == 0 else float(np.sqrt(P_t / energy))


@dataclass(frozen=True)
class Precoder:
    F: np.ndarray
    gamma: float
    scheme: str = CUSTOM

    @classmethod
    def from_matrix(cls, F: np.ndarray, P_t: float | None = None, scheme: str = CUSTOM) -> "Precoder":
        F = np.asarray(F, dtype=complex)
        return cls(F, power_normalization(F, F.shape[0] if P_t is None else P_t), scheme)

    @property
    def scaled(self) -> np.ndarray:
        """The power-normalized precoder ``gamma F``."""
        return self.gamma * self.F


def _as_matrix(H) -> np.ndarray:
    return np.asarray(H.matrix if isinstance(H, EffectiveChannel) else H, dtype=complex)


def _regularized_inverse(H: np.ndarray, lam: float) -> np.ndarray:
    Hh = H.conj().T
    G = Hh @ H
    G[np.diag_indices_from(G)] += lam
    try:
        factor = cho_factor(G, lower=False, check_finite=False)
    except LinAlgError as exc:
        raise SingularPrecoderError(
            f"H^H H + {lam:g} I is not positive definite; the channel estimate is rank deficient"
        ) from exc
    F = cho_solve(factor, Hh, check_finite=False)
    if not np.all(np.isfinite(F)):
        raise SingularPrecoderError("precoder solve produced non-finite entries")
    return F


def robust_mmse(H_hat, budget: NoiseBudget) -> Precoder:
    """MMSE precoder that accounts for the CSI error variance."""
    H = _as_matrix(H_hat)
    F = _regularized_inverse(H, budget.regularizer)
    return Precoder(F, power_normalization(F, budget.total_power(H.shape[1])), ROBUST)


def non_robust_mmse(H_hat, budget: NoiseBudget) -> Precoder:
    """MMSE precoder that treats the estimate as exact (receiver noise only)."""
    H = _as_matrix(H_hat)
    F = _regularized_inverse(H, budget.sigma_n_sq)
    return Precoder(F, power_normalization(F, budget.total_power(H.shape[1])), NON_ROBUST)


def solve_residual(H_hat, F: np.ndarray, lam: float) -> float:
    """Relative residual ``||(H^H H + lam I) F - H^H||_F / ||H^H||_F``."""
    H = _as_matrix(H_hat)
    Hh = H.conj().T
    G = Hh @ H + lam * np.eye(H.shape[1])
    return float(np.linalg.norm(G @ F - Hh) / np.linalg.norm(Hh))


def mse_closed_form(H_hat, F: np.ndarray, budget: NoiseBudget) -> float:
    """Expected MSE of precoder ``F`` under the Gaussian CSI-error model.

    ``tr(H F F^H H^H - H F - F^H H^H + I + lam F F^H)`` with
    ``lam = sigma_n^2 + P sigma_e^2``. The ``sigma_n^2 tr(F F^H)`` part is the
    power of the noise ``n / gamma`` when ``gamma`` normalizes ``F`` to unit
    power per symbol, so this equals :func:`mse_monte_carlo` with
    ``use_gamma=True`` and the default ``P_t = MN``.
    """
    H = _as_matrix(H_hat)
    F = np.asarray(F)
    if H.shape[1] != F.shape[0] or F.shape[1] != H.shape[0]:
        raise ValueError(f"shape mismatch: H {H.shape}, F {F.shape}")
    HF = H @ F
    FFh = F @ F.conj().T
    T = H @ FFh @ H.conj().T - HF - HF.conj().T + np.eye(H.shape[0]) + budget.regularizer * FFh
    value = np.trace(T)
    if abs(value.imag) > 1e-9 * max(abs(value.real), 1e-300):
        raise ArithmeticError(f"MSE trace has a non-negligible imaginary part {value.imag:g}")
    return float(value.real)


def _draw_symbols(rng: np.random.Generator, shape) -> np.ndarray:
    return complex_normal(rng, shape, 1.0)


def mse_monte_carlo(
    H_hat,
    F: np.ndarray,
    budget: NoiseBudget,
    paths: PathSet | None = None,
    samples: int = 10_000,
    rng: np.random.Generator | None = None,
    *,
    M: int | None = None,
    N: int | None = None,
    use_gamma: bool = False,
    gamma: float | None = None,
    batch: int = 1000,
) -> float:
    """Sample average of ``||((H + E) F - I) x + n / gamma||^2``.

    ``x ~ CN(0, I)``, ``n ~ CN(0, sigma_n^2 I)`` and ``E`` is the effective
    error matrix on the taps of ``paths`` with ``e_p ~ CN(0, sigma_e^2)``.
    With ``use_gamma=False`` the noise is not scaled; otherwise ``gamma`` is
    taken from the power normalization of ``F`` unless given explicitly.
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    H = _as_matrix(H_hat)
    if isinstance(H_hat, EffectiveChannel):
        paths = H_hat.paths if paths is None else paths
        M, N = H_hat.M, H_hat.N
    if paths is None or M is None or N is None:
        raise ValueError("paths and grid dimensions are required for the error draws")
    F = np.asarray(F, dtype=complex)
    MN = M * N
    if use_gamma:
        g = power_normalization(F, budget.total_power(MN)) if gamma is None else gamma
    else:
        g = 1.0
    wrapped = paths.mode == FRACTIONAL
    shifts = [
        (int(l), path_phase_vector(MN, int(l), float(nu), wrapped))
        for l, nu in zip(paths.delays, paths.total_dopplers)
    ]
    total = 0.0
    done = 0
    while done < samples:
        b = min(batch, samples - done)
        x = _draw_symbols(rng, (MN, b))
        n = complex_normal(rng, (MN, b), budget.sigma_n_sq)
        e = complex_normal(rng, (paths.P, b), budget.sigma_e_sq)
        Fx = F @ x
        r = H @ Fx - x
        if np.isfinite(g):
            r += n / g
        u = otfs_modulate(Fx, M, N)
        for p, (l, phases) in enumerate(shifts):
            r += e[p] * np.roll(phases[:, None] * u, l, axis=0)
        total += float(np.sum(np.abs(r) ** 2))
        done += b
    return total / samples


def gradient_check(
    H_hat,
    budget: NoiseBudget,
    F_star: np.ndarray,
    directions=20,
    rng: np.random.Generator | None = None,
    step: float = 1e-5,
) -> float:
    """Largest central-difference directional derivative of the closed-form MSE at ``F_star``.

    ``directions`` is either a count of random unit-Frobenius directions or an
    explicit sequence of direction matrices. Random directions alternate
    between purely real, purely imaginary and general complex perturbations.
    """
    F_star = np.asarray(F_star, dtype=complex)
    if isinstance(directions, int):
        rng = np.random.default_rng() if rng is None else rng
        dirs = []
        for i in range(directions):
            re = rng.standard_normal(F_star.shape)
            im = rng.standard_normal(F_star.shape)
            D = (re, 1j * im, re + 1j * im)[i % 3]
            dirs.append(D / np.linalg.norm(D))
    else:
        dirs = [np.asarray(D, dtype=complex) for D in directions]
    worst = 0.0
    for D in dirs:
        up = mse_closed_form(H_hat, F_star + step * D, budget)
        down = mse_closed_form(H_hat, F_star - step * D, budget)
        worst = max(worst, abs(up - down) / (2 * step))
    return worst
