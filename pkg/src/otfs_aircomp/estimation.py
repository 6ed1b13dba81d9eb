"""Echo-based pilot observation and CSI recovery.

Integer Doppler uses the single-pilot scalar model, one complex observation per
path. Fractional Doppler observes the full pilot block and runs a
maximum-likelihood search over a finite set of fractional Doppler candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .channel import FRACTIONAL, INTEGER, PathSet, complex_normal, round_trip_paths, split_doppler
from .otfs import fractional_pilot_layout, integer_pilot_layout

__all__ = [
    "DEFAULT_CANDIDATES",
    "GuardViolationError",
    "PilotConfig",
    "PilotObservation",
    "EstimatedCsi",
    "beta",
    "simulate_echo_pilot_integer",
    "estimate_integer",
    "simulate_echo_pilot_fractional",
    "estimate_fractional",
    "scale_outdated",
    "inject_tap_offsets",
    "gain_residual",
]

DEFAULT_CANDIDATES = tuple(np.round(np.linspace(-0.5, 0.5, 11), 10))


class GuardViolationError(ValueError):
    """Echo taps fall outside the pilot guard region."""


def beta(a, kappa, N: int):
    """Fractional-Doppler leakage ``(1/N) sum_n exp(j 2 pi (a + kappa) n / N)``.

    Evaluated in closed form; where ``a + kappa`` is a multiple of ``N`` the
    removable singularity takes its limit value 1. Broadcasts over ``a`` and
    ``kappa``.
    """
    if N < 1:
        raise ValueError("N must be positive")
    x = np.asarray(a, dtype=float) + np.asarray(kappa, dtype=float)
    num = np.expm1(2j * np.pi * x)
    den = np.expm1(2j * np.pi * x / N)
    singular = np.abs(np.sin(np.pi * x / N)) < 1e-13
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(singular, 1.0 + 0j, num / np.where(singular, 1.0, den) / N)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class PilotConfig:
    """Pilot placement and sensor-side noise for one sensor.

    ``delay_span``/``doppler_span`` size the integer-mode guard box;
    ``rows`` is the number of full-Doppler delay rows reserved in fractional
    mode (the observed block is ``rows x N``).
    """

    M: int
    N: int
    x_o: float = 1.0
    l_c: int = 0
    k_c: int | None = None
    delay_span: int = 4
    doppler_span: int = 9
    sigma_w_sq: float = 1e-3
    rows: int = 5
    candidates: tuple = DEFAULT_CANDIDATES

    def __post_init__(self):
        if self.x_o <= 0:
            raise ValueError("pilot amplitude must be positive")
        if self.sigma_w_sq < 0:
            raise ValueError("sigma_w_sq must be nonnegative")
        if self.k_c is None:
            object.__setattr__(self, "k_c", self.N // 2)
        if not 0 <= self.k_c < self.N:
            raise ValueError("k_c outside the Doppler axis")
        cands = tuple(float(c) for c in self.candidates)
        if not cands or any(abs(c) > 0.5 + 1e-12 for c in cands):
            raise ValueError("fractional candidates must lie in [-0.5, 0.5]")
        object.__setattr__(self, "candidates", cands)

    @classmethod
    def for_channel(cls, M: int, N: int, l_max: int, k_max: int, **kw) -> "PilotConfig":
        """Guard spans sized to cover every round-trip tap of the channel."""
        kw.setdefault("delay_span", 2 * l_max)
        kw.setdefault("doppler_span", 2 * (2 * k_max) + 1)
        kw.setdefault("rows", 2 * l_max + 1)
        return cls(M, N, **kw)

    @property
    def pilot_snr(self) -> float:
        return np.inf if self.sigma_w_sq == 0 else self.x_o**2 / self.sigma_w_sq

    def layout(self, mode: str) -> np.ndarray:
        if mode == FRACTIONAL:
            return fractional_pilot_layout(self.M, self.N, self.l_c, self.k_c, self.rows)
        return integer_pilot_layout(self.M, self.N, self.l_c, self.k_c, self.delay_span, self.doppler_span)

    def phase(self, doppler) -> np.ndarray:
        """Pilot-position phase ``exp(j 2 pi l_c nu / MN)`` for round-trip Doppler ``nu``."""
        return np.exp(2j * np.pi * self.l_c * np.asarray(doppler, dtype=float) / (self.M * self.N))


@dataclass(frozen=True)
class PilotObservation:
    """Per-path scalars (integer mode) or the ``rows x N`` pilot block (fractional)."""

    mode: str
    values: np.ndarray | None = None
    block: np.ndarray | None = None


@dataclass(frozen=True)
class EstimatedCsi:
    """Recovered CSI.

    ``paths`` holds the one-way estimate (gains included); ``round_trip``
    the round-trip taps the estimator actually resolved. ``weak_rows`` counts
    selected pilot rows whose energy did not clear the noise floor.
    """

    paths: PathSet
    round_trip: PathSet
    frame: int = 0
    scaled: bool = False
    weak_rows: int = 0
    odd_delays: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def gains(self) -> np.ndarray:
        return self.paths.gains


def _check_integer_guard(rt: PathSet, cfg: PilotConfig) -> None:
    half = cfg.doppler_span // 2
    if np.any(rt.delays > cfg.delay_span) or np.any(np.abs(rt.dopplers) > half):
        raise GuardViolationError(
            f"round-trip taps (l={rt.delays.tolist()}, k={rt.dopplers.tolist()}) exceed the guard "
            f"(delay span {cfg.delay_span}, Doppler half-span {half})"
        )


def simulate_echo_pilot_integer(
    true_paths: PathSet, cfg: PilotConfig, rng: np.random.Generator
) -> PilotObservation:
    """Per-path echo observation ``h_p theta_p x_o + w_p``, ``w_p ~ CN(0, sigma_w^2)``."""
    if true_paths.mode != INTEGER:
        raise ValueError("integer pilot simulation needs integer-mode paths")
    rt = round_trip_paths(true_paths, cfg.M)
    _check_integer_guard(rt, cfg)
    theta = cfg.phase(rt.dopplers)
    noise = complex_normal(rng, rt.P, cfg.sigma_w_sq)
    return PilotObservation(INTEGER, values=rt.gains * theta * cfg.x_o + noise)


def estimate_integer(obs: PilotObservation, round_trip: PathSet, cfg: PilotConfig, frame: int = 0) -> EstimatedCsi:
    """Gain estimate ``obs_p / (x_o theta_p)``; taps are taken as known and halved."""
    if obs.mode != INTEGER or obs.values is None:
        raise ValueError("expected an integer-mode observation")
    values = np.asarray(obs.values)
    if values.shape != (round_trip.P,):
        raise ValueError("observation count does not match the number of paths")
    if np.any(round_trip.delays % 2) or np.any(round_trip.dopplers % 2):
        raise ValueError("round-trip taps must be even to be halved")
    gains = values / (cfg.x_o * cfg.phase(round_trip.dopplers))
    rt = round_trip.with_gains(gains)
    one_way = PathSet.integer(round_trip.delays // 2, round_trip.dopplers // 2, gains)
    return EstimatedCsi(one_way, rt, frame=frame)


def simulate_echo_pilot_fractional(
    true_paths: PathSet, cfg: PilotConfig, rng: np.random.Generator
) -> PilotObservation:
    """Received ``rows x N`` pilot block of the echo, with AWGN on every cell."""
    rt = round_trip_paths(true_paths, cfg.M)
    if np.any(rt.delays >= cfg.rows):
        raise GuardViolationError(f"round-trip delays {rt.delays.tolist()} exceed the {cfg.rows} pilot rows")
    if len(set(rt.delays.tolist())) != rt.P:
        raise ValueError("paths collide on the same round-trip delay row")
    N = cfg.N
    a = np.arange(N)
    block = np.zeros((cfg.rows, N), dtype=complex)
    for l, k, kappa, h in zip(rt.delays, rt.dopplers, rt.fractions, rt.gains):
        cols = (cfg.k_c + k - a) % N
        block[l, cols] += cfg.x_o * h * cfg.phase(k + kappa) * beta(a, kappa, N)
    block += complex_normal(rng, block.shape, cfg.sigma_w_sq)
    return PilotObservation(FRACTIONAL, block=block)


def estimate_fractional(obs: PilotObservation, cfg: PilotConfig, P: int, frame: int = 0) -> EstimatedCsi:
    """Maximum-likelihood fractional-Doppler channel estimation.

    1. The ``P`` highest-energy rows of the pilot block give the round-trip
       delays.
    2. In each such row the strongest cell gives the integer round-trip
       Doppler.
    3. For every candidate ``kappa`` a template row is synthesized from the
       peak value and the leakage kernel; the candidate with the smallest
       squared residual wins.
    4. The gain is the peak value with pilot amplitude, leakage and pilot
       phase removed.
    5. Round-trip quantities are halved.

    Ties in any ranking go to the lowest index.
    """
    if obs.mode != FRACTIONAL or obs.block is None:
        raise ValueError("expected a fractional-mode observation")
    Y = np.asarray(obs.block)
    if Y.shape[1] != cfg.N:
        raise ValueError("pilot block width must equal N")
    N = cfg.N
    cands = np.asarray(cfg.candidates)
    n = np.arange(N)

    row_energy = np.sum(np.abs(Y) ** 2, axis=1)
    rows = np.argsort(-row_energy, kind="stable")[:P]
    floor = 2.0 * N * cfg.sigma_w_sq
    weak = int(np.sum(row_energy[rows] <= floor)) if cfg.sigma_w_sq > 0 else int(np.sum(row_energy[rows] == 0))

    rt_l = np.empty(P, dtype=int)
    rt_k = np.empty(P, dtype=int)
    rt_kappa = np.empty(P)
    gains = np.empty(P, dtype=complex)
    beta0 = beta(0, cands, N)
    # templates[c, n] = beta(j* - n, kappa_c) / beta(0, kappa_c); shift by j* per row
    for i, row in enumerate(rows):
        y = Y[row]
        j_star = int(np.argmax(np.abs(y)))
        offsets = (j_star - n) % N
        templates = y[j_star] * beta(offsets[None, :], cands[:, None], N) / beta0[:, None]
        residual = np.sum(np.abs(templates - y[None, :]) ** 2, axis=1)
        c = int(np.argmin(residual))
        k = (j_star - cfg.k_c + N // 2) % N - N // 2
        rt_l[i], rt_k[i], rt_kappa[i] = row, k, cands[c]
        gains[i] = y[j_star] / (cfg.x_o * beta0[c] * cfg.phase(k + cands[c]))

    round_trip = PathSet(rt_l, rt_k, rt_kappa, gains, FRACTIONAL)
    k_one, kappa_one = split_doppler((rt_k + rt_kappa) / 2.0)
    one_way = PathSet(rt_l // 2, k_one, kappa_one, gains, FRACTIONAL)
    return EstimatedCsi(
        one_way, round_trip, frame=frame, weak_rows=weak, odd_delays=int(np.sum(rt_l % 2))
    )


def gain_residual(csi: EstimatedCsi, true_paths: PathSet) -> np.ndarray:
    """Empirical multiplicative gain error ``h_hat_p / h_p``, matched by delay tap.

    Off-grid fractional Doppler leaves a factor ``beta(0, kappa) / beta(0, kappa_hat)``
    times a phase in the estimate; this measures it (together with any noise)
    instead of assuming a distribution. Paths whose delay was not recovered
    give ``nan``.
    """
    est = dict(zip(csi.paths.delays.tolist(), csi.paths.gains))
    return np.array([est.get(int(l), np.nan) / h for l, h in zip(true_paths.delays, true_paths.gains)], dtype=complex)


def scale_outdated(csi: EstimatedCsi, rho: float) -> EstimatedCsi:
    """Scale the estimated gains by ``rho`` to predict the next frame."""
    if csi.scaled:
        raise ValueError("CSI gains are already rho-scaled")
    return replace(csi, paths=csi.paths.with_gains(rho * csi.paths.gains), scaled=True)


def inject_tap_offsets(
    csi: EstimatedCsi,
    p_offset: float,
    which: str,
    rng: np.random.Generator,
    delay_range: tuple[int, int] = (0, 2**31 - 1),
    doppler_range: tuple[int, int] = (-(2**31), 2**31 - 1),
) -> EstimatedCsi:
    """Corrupt estimated taps by one grid step with probability ``p_offset``.

    ``which`` is ``"delay"``, ``"doppler"`` or ``"both"``. Each selected tap of
    each path is hit independently; the step sign is equiprobable and the
    result is clamped to the given range.
    """
    if not 0.0 <= p_offset <= 1.0:
        raise ValueError("p_offset must lie in [0, 1]")
    if which not in ("delay", "doppler", "both"):
        raise ValueError(f"unknown tap selection {which!r}")
    paths = csi.paths
    P = paths.P

    def corrupt(taps, lo, hi):
        hit = rng.random(P) < p_offset
        step = np.where(rng.random(P) < 0.5, -1, 1)
        return np.clip(taps + hit * step, lo, hi)

    delays, dopplers = paths.delays, paths.dopplers
    if which in ("delay", "both"):
        delays = corrupt(delays, *delay_range)
    if which in ("doppler", "both"):
        dopplers = corrupt(dopplers, *doppler_range)
    new = PathSet(delays, dopplers, paths.fractions, paths.gains, paths.mode)
    return replace(csi, paths=new)
