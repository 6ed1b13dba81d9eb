"""Two-frame AirComp pipeline, NMSE aggregation and Monte Carlo sweeps.

Each trial simulates every sensor through one estimate-then-precode cycle:
the echo pilot of frame ``t-1`` yields CSI, which is aged by ``rho`` and
used to precode frame ``t`` over the true (evolved) frame-``t`` channel.
All MN cells carry unit-variance data on the aggregation path; the pilot
layout only matters on the estimation path.

Randomness: every trial gets its own ``SeedSequence`` derived from the master
seed and the trial index (plus SNR index and scheme when common random
numbers are switched off); every sensor gets one named child stream per
random ingredient. Results are aggregated in trial order, so the output does
not depend on the number of workers.
"""

from __future__ import annotations

import concurrent.futures as cf
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    FRACTIONAL,
    EffectiveChannel,
    GaussMarkovModel,
    build_effective_channel,
    complex_normal,
    evolve_gains,
    round_trip_paths,
    sample_paths,
)
from .config import SCHEMES, SweepConfig
from .estimation import (
    PilotConfig,
    estimate_fractional,
    estimate_integer,
    inject_tap_offsets,
    scale_outdated,
    simulate_echo_pilot_fractional,
    simulate_echo_pilot_integer,
)
from .otfs import CellKind
from .precoder import ROBUST, NoiseBudget, Precoder, non_robust_mmse, robust_mmse

__all__ = [
    "SensorState",
    "FrameResult",
    "PointStats",
    "SweepResult",
    "snr_to_noise",
    "pilot_configs",
    "check_pilot_orthogonality",
    "draw_symbols",
    "run_frame",
    "nmse",
    "nmse_stderr",
    "trial_seed",
    "run_two_frame_pipeline",
    "monte_carlo_sweep",
    "power_ratio_split",
    "power_ratio_sweep",
]


def snr_to_noise(snr_db: float) -> float:
    """Receiver noise variance for unit symbol power."""
    return 10.0 ** (-snr_db / 10.0)


@dataclass
class SensorState:
    """One sensor's view of a frame."""

    q: int
    channel: EffectiveChannel
    precoder: Precoder
    pilot: PilotConfig | None = None
    csi: object = None
    rng: np.random.Generator | None = None


@dataclass(frozen=True)
class FrameResult:
    y: np.ndarray
    target: np.ndarray
    error_energy: float
    target_energy: float


def pilot_configs(cfg: SweepConfig, x_o: float, sigma_w_sq: float) -> list[PilotConfig]:
    """Orthogonal pilot placement: sensor ``q`` owns delay rows ``q (2 l_max + 1) ...``."""
    stride = 2 * cfg.l_max + 1
    return [
        PilotConfig.for_channel(
            cfg.M, cfg.N, cfg.l_max, cfg.k_max,
            x_o=x_o, l_c=q * stride, sigma_w_sq=sigma_w_sq, candidates=cfg.candidates,
        )
        for q in range(cfg.Q)
    ]


def check_pilot_orthogonality(pilots: list[PilotConfig], mode: str) -> None:
    """Raise if the pilot/guard regions of any two sensors overlap."""
    occupied = None
    for p in pilots:
        region = p.layout(mode) != CellKind.DATA
        if occupied is None:
            occupied = np.zeros_like(region)
        if np.any(occupied & region):
            raise ValueError("pilot regions of distinct sensors overlap")
        occupied |= region


def draw_symbols(rng: np.random.Generator, size: int, kind: str = "gaussian") -> np.ndarray:
    """Zero-mean unit-variance i.i.d. data symbols."""
    if kind == "gaussian":
        return complex_normal(rng, size, 1.0)
    if kind == "qpsk":
        bits = rng.integers(0, 2, size=(2, size))
        return ((2 * bits[0] - 1) + 1j * (2 * bits[1] - 1)) / np.sqrt(2)
    raise ValueError(f"unknown symbol kind {kind!r}")


def run_frame(
    sensors, sigma_n_sq: float, rng: np.random.Generator | None = None, symbols: str = "gaussian"
) -> FrameResult:
    """Aggregate ``y = sum_q (H_q F_q x_q + n_q / gamma_q)`` against ``sum_q x_q``.

    Symbols and noise are drawn from each sensor's own ``rng`` when it has
    one, otherwise from the shared ``rng`` in sensor order.
    """
    sensors = list(sensors)
    if not sensors:
        raise ValueError("need at least one sensor")
    dim = sensors[0].channel.matrix.shape[0]
    y = np.zeros(dim, dtype=complex)
    target = np.zeros(dim, dtype=complex)
    for s in sensors:
        H, F = s.channel.matrix, s.precoder.F
        if H.shape != (dim, dim) or F.shape != (dim, dim):
            raise ValueError("all sensors must share the same MN x MN dimensions")
        gen = s.rng if s.rng is not None else rng
        if gen is None:
            raise ValueError("no random generator available for sensor %d" % s.q)
        x = draw_symbols(gen, dim, symbols)
        n = complex_normal(gen, dim, sigma_n_sq)
        y += H @ (F @ x)
        if np.isfinite(s.precoder.gamma):
            y += n / s.precoder.gamma
        target += x
    err = y - target
    return FrameResult(y, target, float(np.vdot(err, err).real), float(np.vdot(target, target).real))


def nmse(numerators, denominators) -> float:
    """Ratio-of-sums NMSE estimator."""
    num = np.asarray(numerators, dtype=float)
    den = np.asarray(denominators, dtype=float)
    if num.size == 0:
        raise ValueError("no trials to aggregate")
    if num.shape != den.shape:
        raise ValueError("numerators and denominators differ in length")
    if np.any(den <= 0):
        raise ValueError("denominators must be positive")
    return float(num.sum() / den.sum())


def nmse_stderr(numerators, denominators) -> float:
    """Delta-method standard error of the ratio-of-sums estimator."""
    num = np.asarray(numerators, dtype=float)
    den = np.asarray(denominators, dtype=float)
    T = num.size
    if T < 2:
        return float("nan")
    ratio = num.sum() / den.sum()
    resid = num - ratio * den
    return float(np.sqrt(np.sum(resid**2) / (T * (T - 1))) / den.mean())


_STREAMS = ("paths", "pilot", "offsets", "aging", "data")


def trial_seed(
    master: int, trial: int, snr_index: int = 0, scheme: str = ROBUST, common: bool = True
) -> np.random.SeedSequence:
    """Seed of one trial.

    With ``common=True`` (default) the seed depends on the trial index only,
    so every SNR point, scheme and preset replays the same channels and noise
    (common random numbers). ``common=False`` also keys on SNR index and scheme.
    """
    if common:
        return np.random.SeedSequence(master, spawn_key=(trial,))
    return np.random.SeedSequence(master, spawn_key=(trial, snr_index, SCHEMES.index(scheme)))


def sensor_streams(seed: np.random.SeedSequence, q: int) -> dict[str, np.random.Generator]:
    """Independent named generators for sensor ``q`` of a trial.

    Each random ingredient (path draw, pilot noise, tap offsets, gain aging,
    data/receiver noise) has its own stream, so switching one ingredient on or
    off leaves the others' draws unchanged.
    """
    return {
        name: np.random.default_rng(np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + (q, i)))
        for i, name in enumerate(_STREAMS)
    }


def _estimate(cfg: SweepConfig, paths_prev, pilot: PilotConfig, rng):
    if cfg.mode == FRACTIONAL:
        obs = simulate_echo_pilot_fractional(paths_prev, pilot, rng)
        return estimate_fractional(obs, pilot, cfg.P)
    obs = simulate_echo_pilot_integer(paths_prev, pilot, rng)
    return estimate_integer(obs, round_trip_paths(paths_prev, cfg.M), pilot)


def run_two_frame_pipeline(
    cfg: SweepConfig,
    snr_db: float,
    scheme: str,
    rng,
    *,
    pilot_amplitude: float = 1.0,
    sigma_w_sq: float | None = None,
    data_power: float | None = None,
) -> tuple[float, float]:
    """One trial; returns ``(||y - target||^2, ||target||^2)``.

    ``rng`` is a trial ``SeedSequence`` (see :func:`sensor_streams`) or a
    ``Generator`` shared by everything. ``sigma_w_sq`` defaults to the
    value that gives ``cfg.pilot_snr_db`` at ``pilot_amplitude``;
    ``data_power`` defaults to ``cfg.data_power``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if sigma_w_sq is None:
        sigma_w_sq = pilot_amplitude**2 * 10.0 ** (-cfg.pilot_snr_db / 10.0)
    data_power = cfg.data_power if data_power is None else data_power
    if isinstance(rng, np.random.SeedSequence):
        streams = [sensor_streams(rng, q) for q in range(cfg.Q)]
        shared = None
    else:
        streams = [dict.fromkeys(_STREAMS, rng)] * cfg.Q
        shared = rng

    sigma_n_sq = snr_to_noise(snr_db)
    model = GaussMarkovModel(cfg.rho, sigma_w_sq, pilot_amplitude, cfg.P)
    # Unit-variance symbols scaled to data_power by gamma: equivalent to noise sigma_n^2 / data_power.
    budget = NoiseBudget(sigma_n_sq / data_power, model.sigma_e_sq, cfg.P)
    design = robust_mmse if scheme == ROBUST else non_robust_mmse
    pilots = pilot_configs(cfg, pilot_amplitude, sigma_w_sq)

    sensors = []
    for q, (pilot, gen) in enumerate(zip(pilots, streams)):
        paths_prev = sample_paths(cfg.P, cfg.l_max, cfg.k_max, cfg.mode, gen["paths"])
        csi = _estimate(cfg, paths_prev, pilot, gen["pilot"])
        if cfg.offset_which != "none" and cfg.offset_probability > 0:
            csi = inject_tap_offsets(
                csi, cfg.offset_probability, cfg.offset_which, gen["offsets"],
                delay_range=(0, cfg.M - 1), doppler_range=(-(cfg.N // 2) + 1, cfg.N // 2 - 1),
            )
        csi = scale_outdated(csi, cfg.rho)
        H_hat = build_effective_channel(csi.paths, cfg.M, cfg.N)
        precoder = design(H_hat, budget)
        paths_now = evolve_gains(paths_prev, model, gen["aging"])
        channel = build_effective_channel(paths_now, cfg.M, cfg.N)
        sensors.append(SensorState(q, channel, precoder, pilot, csi, None if shared else gen["data"]))

    frame = run_frame(sensors, sigma_n_sq / data_power, shared, cfg.symbols)
    return frame.error_energy, frame.target_energy


@dataclass(frozen=True)
class PointStats:
    snr_db: float
    scheme: str
    nmse: float
    stderr: float
    trials: int
    ratio: float | None = None


@dataclass
class SweepResult:
    config: SweepConfig
    points: list[PointStats]
    seeds: dict = field(default_factory=dict)
    elapsed_s: float = 0.0
    mode: str = "snr"

    def get(self, scheme: str, snr_db: float | None = None, ratio: float | None = None) -> PointStats:
        for p in self.points:
            if p.scheme == scheme and (snr_db is None or p.snr_db == snr_db) and (ratio is None or p.ratio == ratio):
                return p
        raise KeyError((scheme, snr_db, ratio))

    def curve(self, scheme: str, snr_db: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """``(nmse, stderr)`` arrays in sweep order for one scheme."""
        pts = [p for p in self.points if p.scheme == scheme and (snr_db is None or p.snr_db == snr_db)]
        return np.array([p.nmse for p in pts]), np.array([p.stderr for p in pts])

    @property
    def schemes(self) -> list[str]:
        return sorted({p.scheme for p in self.points}, key=SCHEMES.index)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "kind": self.mode,
            "config": self.config.to_dict(),
            "points": [p.__dict__.copy() for p in self.points],
            "seeds": self.seeds,
            "elapsed_s": self.elapsed_s,
        }


def _seed_record(cfg: SweepConfig) -> dict:
    key = "(trial,)" if cfg.common_random_numbers else "(trial, snr_index, scheme_index)"
    return {
        "master": cfg.seed,
        "derivation": f"numpy SeedSequence(master, spawn_key={key}); sensor q stream i: spawn_key + (q, i)",
        "streams": list(_STREAMS),
        "trial_spawn_keys": [[t] for t in range(cfg.trials)],
    }


def _run_trial(args) -> tuple[float, float]:
    cfg, snr_db, scheme, seed, kwargs = args
    return run_two_frame_pipeline(cfg, snr_db, scheme, seed, **kwargs)


def _map(tasks, workers: int):
    if workers <= 1:
        return [_run_trial(t) for t in tasks]
    with cf.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_trial, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def _aggregate(results) -> tuple[float, float]:
    num = np.array([r[0] for r in results])
    den = np.array([r[1] for r in results])
    return nmse(num, den), nmse_stderr(num, den)


def monte_carlo_sweep(cfg: SweepConfig, workers: int = 1, progress=None) -> SweepResult:
    """NMSE versus SNR for every scheme in ``cfg.schemes``."""
    start = time.perf_counter()
    points = []
    for i, snr in enumerate(cfg.snr_db):
        for scheme in cfg.schemes:
            tasks = [(cfg, snr, scheme, trial_seed(cfg.seed, t, i, scheme, cfg.common_random_numbers), {}) for t in range(cfg.trials)]
            mean, se = _aggregate(_map(tasks, workers))
            points.append(PointStats(float(snr), scheme, mean, se, cfg.trials))
            if progress:
                progress(points[-1])
    return SweepResult(cfg, points, _seed_record(cfg), time.perf_counter() - start, "snr")


def power_ratio_split(ratio: float, MN: int, pilot_snr_db: float) -> tuple[float, float, float]:
    """Split a fixed frame energy between data and pilot.

    ``ratio`` is total data energy over pilot energy, ``MN P_d / x_o^2``. The
    budget ``E = 2 MN`` puts unit data power and pilot energy ``MN`` at
    ``ratio = 1``; ``pilot_snr_db`` is the pilot SNR at that balanced split,
    which fixes the sensor noise ``sigma_w^2``.

    Returns ``(data_power, pilot_amplitude, sigma_w_sq)``.
    """
    if ratio <= 0:
        raise ValueError("power ratio must be positive")
    total = 2.0 * MN
    pilot_energy = total / (1.0 + ratio)
    data_power = (total - pilot_energy) / MN
    sigma_w_sq = MN * 10.0 ** (-pilot_snr_db / 10.0)
    return data_power, float(np.sqrt(pilot_energy)), sigma_w_sq


def power_ratio_sweep(cfg: SweepConfig, ratios=None, workers: int = 1, progress=None) -> SweepResult:
    """NMSE versus data/pilot energy ratio at each SNR in ``cfg.snr_db``.

    With ``cfg.tie_pilot_snr`` the balanced-split pilot SNR equals the data
    SNR of the point (one noise level for both links); otherwise it is
    ``cfg.pilot_snr_db``. Trial seeds do not depend on the ratio, so every
    ratio sees the same channels and noise draws.
    """
    ratios = tuple(cfg.power_ratios if ratios is None else ratios)
    if not ratios or any(r <= 0 for r in ratios):
        raise ValueError("power ratios must be positive")
    start = time.perf_counter()
    points = []
    for i, snr in enumerate(cfg.snr_db):
        pilot_snr = snr if cfg.tie_pilot_snr else cfg.pilot_snr_db
        for scheme in cfg.schemes:
            for r in ratios:
                data_power, x_o, sigma_w_sq = power_ratio_split(r, cfg.MN, pilot_snr)
                kw = dict(pilot_amplitude=x_o, sigma_w_sq=sigma_w_sq, data_power=data_power)
                tasks = [
                    (cfg, snr, scheme, trial_seed(cfg.seed, t, i, scheme, cfg.common_random_numbers), kw)
                    for t in range(cfg.trials)
                ]
                mean, se = _aggregate(_map(tasks, workers))
                points.append(PointStats(float(snr), scheme, mean, se, cfg.trials, float(r)))
                if progress:
                    progress(points[-1])
    return SweepResult(cfg, points, _seed_record(cfg), time.perf_counter() - start, "power_ratio")
