"""Figure presets and the trend checks applied to their results.

Every preset is a list of named series; each series is one
:class:`SweepConfig` plus the kind of sweep to run on it. The trend checks
compare curves with the standard errors the sweep reports, so they are
statistical statements about the configured trial count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DESK_DEFAULTS, PAPER_SCALE, SweepConfig
from .precoder import NON_ROBUST, ROBUST
from .sim import SweepResult

__all__ = [
    "PRESETS",
    "Series",
    "TrendCheck",
    "figure_series",
    "high_error_config",
    "robust_le_nonrobust",
    "nonrobust_rises",
    "robust_non_increasing",
    "high_snr_degradation",
    "interior_minimum",
    "evaluate_figure",
]

PRESETS = ("fig3", "fig4a", "fig4b", "fig4c", "fig5")

#: Trial count used for full-scale (64 x 64) runs; each trial solves 4096-dim systems.
FULL_SCALE_TRIALS = 20


@dataclass(frozen=True)
class Series:
    name: str
    config: SweepConfig
    kind: str = "snr"  # "snr" or "power_ratio"


@dataclass(frozen=True)
class TrendCheck:
    series: str
    description: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        tail = f" ({self.detail})" if self.detail else ""
        return f"[{self.series}] {self.description}: {status}{tail}"


def high_error_config(base: SweepConfig = DESK_DEFAULTS) -> SweepConfig:
    """Strong outdating and a noisy pilot: the regime where the two schemes separate."""
    return base.replace(rho=0.95, pilot_snr_db=10.0)


def _base(scale: str, **overrides) -> SweepConfig:
    if scale == "desk":
        return DESK_DEFAULTS.replace(**overrides)
    if scale == "full":
        return SweepConfig(**{**PAPER_SCALE, "trials": FULL_SCALE_TRIALS, **overrides})
    raise ValueError(f"unknown scale {scale!r}")


def figure_series(preset: str, scale: str = "desk", **overrides) -> list[Series]:
    """Series that make up one figure preset.

    ``overrides`` (e.g. ``seed``, ``trials``, ``schemes``) apply to every
    series of the preset.
    """
    base = _base(scale, **overrides)
    if preset == "fig3":
        return [
            Series("low_error", base),
            Series("high_error", high_error_config(base)),
            Series("fractional", base.replace(mode="fractional")),
        ]
    if preset in ("fig4a", "fig4b", "fig4c"):
        which = {"fig4a": "delay", "fig4b": "doppler", "fig4c": "both"}[preset]
        reference = high_error_config(base)
        return [
            Series("no_offset", reference),
            Series(f"offset_{which}", reference.replace(offset_probability=0.1, offset_which=which)),
        ]
    if preset == "fig5":
        cfg = base.replace(rho=0.99, snr_db=(10.0, 20.0), tie_pilot_snr=True)
        if "schemes" not in overrides:
            cfg = cfg.replace(schemes=(ROBUST,))
        return [Series("power_ratio", cfg, "power_ratio")]
    raise ValueError(f"unknown preset {preset!r}; choose one of {PRESETS}")


def _pair_se(a: float, b: float) -> float:
    return float(np.hypot(a, b))


def robust_le_nonrobust(result: SweepResult, k: float = 2.0) -> tuple[bool, str]:
    """Robust mean NMSE at most non-robust plus ``k`` combined standard errors at every point."""
    worst, where = -np.inf, None
    for p in result.points:
        if p.scheme != ROBUST:
            continue
        q = result.get(NON_ROBUST, p.snr_db, p.ratio)
        margin = p.nmse - q.nmse - k * _pair_se(p.stderr, q.stderr)
        if margin > worst:
            worst, where = margin, p.snr_db
    return bool(worst <= 0), f"worst margin {worst:+.4g} at {where:g} dB"


def nonrobust_rises(result: SweepResult) -> tuple[bool, str]:
    """Non-robust NMSE at the highest SNR strictly above its grid minimum."""
    m, _ = result.curve(NON_ROBUST)
    gap = float(m[-1] - m.min())
    return bool(gap > 0), f"NMSE(last) - min = {gap:.4g}"


def robust_non_increasing(result: SweepResult, k: float = 2.0, scheme: str = ROBUST) -> tuple[bool, str]:
    """Each step of the curve rises by at most ``k`` combined standard errors."""
    m, se = result.curve(scheme)
    excess = np.diff(m) - k * np.hypot(se[:-1], se[1:])
    worst = float(excess.max()) if excess.size else -np.inf
    return bool(worst <= 0), f"worst step excess {worst:+.4g}"


def high_snr_degradation(result: SweepResult, scheme: str = NON_ROBUST) -> float:
    """``NMSE(highest SNR) - min NMSE`` of one curve."""
    m, _ = result.curve(scheme)
    return float(m[-1] - m.min())


def interior_minimum(result: SweepResult, snr_db: float, scheme: str = ROBUST, k: float = 2.0) -> tuple[bool, str]:
    """The ratio curve's minimum is interior and both endpoints exceed it by more than ``k`` SE."""
    m, se = result.curve(scheme, snr_db)
    i = int(np.argmin(m))
    if i in (0, len(m) - 1):
        return False, f"minimum at endpoint index {i}"
    gaps = [(m[j] - m[i]) / _pair_se(se[j], se[i]) for j in (0, len(m) - 1)]
    ratios = [p.ratio for p in result.points if p.scheme == scheme and p.snr_db == snr_db]
    return bool(min(gaps) > k), f"minimum at ratio {ratios[i]:g}; endpoint gaps {gaps[0]:.1f}, {gaps[1]:.1f} SE"


def evaluate_figure(preset: str, results: dict[str, SweepResult]) -> list[TrendCheck]:
    """Trend checks of a preset, given its results keyed by series name."""
    checks: list[TrendCheck] = []

    def add(series, description, outcome):
        checks.append(TrendCheck(series, description, *outcome))

    def both(r):
        return {ROBUST, NON_ROBUST} <= set(r.schemes)

    if preset == "fig3":
        for name, r in results.items():
            if both(r):
                add(name, "robust <= non-robust at all points (2 SE)", robust_le_nonrobust(r))
        r = results["high_error"]
        if NON_ROBUST in r.schemes:
            add("high_error", "non-robust NMSE at highest SNR above its minimum", nonrobust_rises(r))
        if ROBUST in r.schemes:
            add("high_error", "robust NMSE non-increasing (2 SE)", robust_non_increasing(r))
    elif preset in ("fig4a", "fig4b", "fig4c"):
        ref = results["no_offset"]
        name = next(n for n in results if n != "no_offset")
        r = results[name]
        if ROBUST in r.schemes:
            add(name, "robust NMSE non-increasing (2 SE)", robust_non_increasing(r))
        if NON_ROBUST in r.schemes:
            add(name, "non-robust NMSE at highest SNR above its minimum", nonrobust_rises(r))
            d_off, d_ref = high_snr_degradation(r), high_snr_degradation(ref)
            add(
                name,
                "non-robust high-SNR degradation larger than without offsets",
                (d_off > d_ref, f"{d_off:.4g} vs {d_ref:.4g}"),
            )
        if both(r):
            add(name, "robust <= non-robust at all points (2 SE)", robust_le_nonrobust(r))
    elif preset == "fig5":
        r = results["power_ratio"]
        for scheme in r.schemes:
            for snr in r.config.snr_db:
                add("power_ratio", f"{scheme} interior minimum at {snr:g} dB", interior_minimum(r, snr, scheme))
    else:
        raise ValueError(f"unknown preset {preset!r}")
    return checks
