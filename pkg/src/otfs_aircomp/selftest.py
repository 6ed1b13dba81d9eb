"""Fast property checks run by ``otfs-aircomp selftest``.

Each suite returns a :class:`SuiteResult` with the measured quantity and the
tolerance it is held to; everything runs on an 8 x 8 grid.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import estimation
from .channel import FRACTIONAL, INTEGER, PathSet, build_effective_channel, build_error_matrix, round_trip_paths, sample_paths
from .otfs import otfs_demodulate, otfs_modulate
from .precoder import NoiseBudget, gradient_check, mse_closed_form, mse_monte_carlo, robust_mmse

__all__ = ["SuiteResult", "SUITES", "run_selftest", "format_table"]

M = N = 8
SEED = 20240611


@dataclass(frozen=True)
class SuiteResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    seconds: float = 0.0


def _crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def unitarity(rng) -> tuple[float, float]:
    """Norm preservation and round trip of the OTFS transform, relative error."""
    worst = 0.0
    for _ in range(100):
        d = _crandn(rng, M * N)
        s = otfs_modulate(d, M, N)
        nd = np.linalg.norm(d)
        worst = max(worst, abs(np.linalg.norm(s) - nd) / nd, np.linalg.norm(otfs_demodulate(s, M, N) - d) / nd)
    return worst, 1e-12


def beta_identities(rng) -> tuple[float, float]:
    """Leakage kernel against its geometric-sum definition, plus energy conservation."""
    n = np.arange(N)
    worst = abs(estimation.beta(0, 0.0, N) - 1)
    kappas = np.round(np.arange(-0.5, 0.5 + 1e-9, 0.01), 10)
    for kappa in kappas:
        direct = np.exp(2j * np.pi * (n[:, None] + kappa) * n[None, :] / N).sum(axis=1) / N
        got = estimation.beta(n, kappa, N)
        worst = max(worst, np.max(np.abs(got - direct)), abs(np.sum(np.abs(got) ** 2) - 1))
    return float(worst), 1e-10


def estimator_exactness(rng) -> tuple[float, float]:
    """Zero-noise integer and on-grid fractional estimation, worst gain/tap error."""
    worst = 0.0
    cfg = estimation.PilotConfig.for_channel(M, N, 1, 1, sigma_w_sq=0.0, x_o=1.3, l_c=3)
    for _ in range(20):
        paths = sample_paths(2, 1, 1, INTEGER, rng)
        rt = round_trip_paths(paths, M)
        csi = estimation.estimate_integer(estimation.simulate_echo_pilot_integer(paths, cfg, rng), rt, cfg)
        worst = max(worst, np.max(np.abs(csi.gains - paths.gains)))
        worst = max(worst, float(np.any(csi.paths.delays != paths.delays) or np.any(csi.paths.dopplers != paths.dopplers)))
        total = rng.integers(-2, 3) + rng.choice(cfg.candidates)
        k = int(np.floor(total / 2 + 0.5))
        one = PathSet([1], [k], [total / 2 - k], [complex(*rng.standard_normal(2))], FRACTIONAL)
        est = estimation.estimate_fractional(estimation.simulate_echo_pilot_fractional(one, cfg, rng), cfg, 1)
        worst = max(worst, abs(est.round_trip.total_dopplers[0] - total), abs(est.gains[0] - one.gains[0]))
        worst = max(worst, float(est.round_trip.delays[0] != 2))
    return float(worst), 1e-10


def _problem(rng):
    paths = sample_paths(3, 2, 1, INTEGER, rng)
    H = build_effective_channel(paths, M, N)
    budget = NoiseBudget(0.1, 0.05, P=3)
    return H, budget


def precoder_stationarity(rng) -> tuple[float, float]:
    """Largest directional derivative at the robust precoder, relative to its MSE."""
    H, budget = _problem(rng)
    F = robust_mmse(H, budget).F
    return gradient_check(H, budget, F, directions=20, rng=rng) / mse_closed_form(H, F, budget), 1e-6


def mse_agreement(rng) -> tuple[float, float]:
    """Closed-form versus Monte Carlo MSE (10^4 samples), relative difference."""
    H, budget = _problem(rng)
    F = robust_mmse(H, budget).F
    cf = mse_closed_form(H, F, budget)
    mc = mse_monte_carlo(H, F, budget, samples=10_000, rng=rng, use_gamma=True)
    return abs(mc - cf) / cf, 0.02


def error_covariance(rng) -> tuple[float, float]:
    """Sample mean of E^H E over 2000 draws against P sigma_e^2 I."""
    P, s = 3, 0.2
    paths = sample_paths(P, 4, 2, INTEGER, rng)
    acc = np.zeros((M * N, M * N), dtype=complex)
    for _ in range(2000):
        e = np.sqrt(s / 2) * (rng.standard_normal(P) + 1j * rng.standard_normal(P))
        E = build_error_matrix(paths, e, M, N)
        acc += E.conj().T @ E
    acc /= 2000
    c = P * s
    diag = np.max(np.abs(np.diag(acc).real - c)) / c
    off = np.max(np.abs(acc - np.diag(np.diag(acc)))) / c
    return float(max(diag, off)), 0.05


SUITES: dict[str, Callable] = {
    "unitarity": unitarity,
    "beta identities": beta_identities,
    "estimator exactness (zero noise)": estimator_exactness,
    "precoder stationarity": precoder_stationarity,
    "closed-form vs Monte Carlo MSE": mse_agreement,
    "error covariance E[E^H E]": error_covariance,
}


def run_selftest(seed: int = SEED) -> list[SuiteResult]:
    results = []
    for i, (name, fn) in enumerate(SUITES.items()):
        rng = np.random.default_rng([seed, i])
        start = time.perf_counter()
        try:
            measured, tol = fn(rng)
            ok = bool(np.isfinite(measured) and measured <= tol)
        except Exception:  # a crash is a failed suite, not a crashed selftest
            measured, tol, ok = float("nan"), float("nan"), False
        results.append(SuiteResult(name, float(measured), tol, ok, time.perf_counter() - start))
    return results


def format_table(results: list[SuiteResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'suite':<{width}}  {'measured':>10}  {'tolerance':>9}  {'time':>6}  result"]
    for r in results:
        lines.append(
            f"{r.name:<{width}}  {r.measured:>10.3g}  {r.tolerance:>9.0e}  {r.seconds:>5.1f}s  {'PASS' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)
