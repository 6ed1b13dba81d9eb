"""Delay-Doppler grid, OTFS (de)modulation and the delay/Doppler operators.

Conventions
-----------
* Grids are ``M x N`` (delay x Doppler) and are stacked column-major, so grid
  element ``(m, n)`` sits at vector index ``n * M + m``.
* ``W_N`` is the *unitary* N-point DFT, hence the modulation matrix
  ``W_N^H kron I_M`` is unitary.
* ``Pi`` is the cyclic down-shift, ``Pi e_i = e_{(i + 1) mod MN}``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import fft, ifft
from scipy.linalg import dft

__all__ = [
    "CellKind",
    "DDFrame",
    "UnitaryDDTransform",
    "DENSE_LIMIT",
    "vectorize",
    "devectorize",
    "otfs_modulate",
    "otfs_demodulate",
    "modulation_matrix",
    "delay_matrix_power",
    "doppler_matrix_power",
    "doppler_phases",
    "integer_pilot_layout",
    "fractional_pilot_layout",
]

# Dense operator matrices are only materialized up to this dimension.
DENSE_LIMIT = 4096


class CellKind(enum.IntEnum):
    DATA = 0
    PILOT = 1
    GUARD = 2


def vectorize(grid: np.ndarray) -> np.ndarray:
    """Column-major stacking of an ``M x N`` grid (delay index fastest)."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError(f"expected a 2-D grid, got shape {grid.shape}")
    return grid.reshape(-1, order="F")


def devectorize(vec: np.ndarray, M: int, N: int) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    vec = np.asarray(vec)
    if vec.shape != (M * N,):
        raise ValueError(f"expected a vector of length {M * N}, got shape {vec.shape}")
    return vec.reshape((M, N), order="F")


@dataclass(frozen=True)
class DDFrame:
    """An ``M x N`` delay-Doppler grid together with its cell layout.

    ``layout`` holds one :class:`CellKind` value per cell. When omitted every
    cell is a data cell.
    """

    M: int
    N: int
    grid: np.ndarray
    layout: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ValueError("M and N must be positive")
        grid = np.asarray(self.grid, dtype=complex)
        if grid.shape != (self.M, self.N):
            raise ValueError(f"grid shape {grid.shape} != ({self.M}, {self.N})")
        layout = self.layout
        if layout is None:
            layout = np.full((self.M, self.N), CellKind.DATA, dtype=np.int8)
        layout = np.asarray(layout, dtype=np.int8)
        if layout.shape != (self.M, self.N):
            raise ValueError(f"layout shape {layout.shape} != ({self.M}, {self.N})")
        grid.setflags(write=False)
        layout.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "layout", layout)

    @classmethod
    def from_vector(cls, vec: np.ndarray, M: int, N: int, layout=None) -> "DDFrame":
        return cls(M, N, devectorize(vec, M, N), layout)

    def vector(self) -> np.ndarray:
        return vectorize(self.grid)

    @property
    def pilot_cells(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.layout == CellKind.PILOT)
        return list(zip(rows.tolist(), cols.tolist()))


def _check_length(x: np.ndarray, M: int, N: int) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 0 or x.shape[0] != M * N:
        raise ValueError(f"leading dimension must be M*N = {M * N}, got shape {x.shape}")
    return x


def otfs_modulate(d: np.ndarray, M: int, N: int) -> np.ndarray:
    """Map DD-domain symbols to time-domain samples, ``s = (W_N^H kron I_M) d``.

    Implemented as an N-point inverse DFT along the Doppler axis of the
    devectorized grid. ``d`` may carry trailing batch dimensions; the first
    axis must have length ``M * N``.
    """
    d = _check_length(d, M, N)
    grid = d.reshape((N, M) + d.shape[1:])  # row n of this view = Doppler column n
    return ifft(grid, axis=0, norm="ortho").reshape(d.shape)


def otfs_demodulate(s: np.ndarray, M: int, N: int) -> np.ndarray:
    """Inverse of :func:`otfs_modulate`, ``d = (W_N kron I_M) s``."""
    s = _check_length(s, M, N)
    grid = s.reshape((N, M) + s.shape[1:])
    return fft(grid, axis=0, norm="ortho").reshape(s.shape)


def modulation_matrix(M: int, N: int) -> np.ndarray:
    """Dense ``W_N^H kron I_M``; meant for oracle checks on small grids."""
    if M * N > DENSE_LIMIT:
        raise ValueError(f"refusing to materialize a {M * N}x{M * N} dense matrix")
    W = dft(N, scale="sqrtn")
    return np.kron(W.conj().T, np.eye(M))


@dataclass(frozen=True)
class UnitaryDDTransform:
    """The OTFS transform pair as a callable object.

    ``direction`` is ``"to_time"`` (modulation) or ``"to_dd"`` (demodulation).
    """

    M: int
    N: int
    direction: str = "to_time"

    def __post_init__(self):
        if self.direction not in ("to_time", "to_dd"):
            raise ValueError(f"unknown direction {self.direction!r}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.direction == "to_time":
            return otfs_modulate(x, self.M, self.N)
        return otfs_demodulate(x, self.M, self.N)

    @property
    def inverse(self) -> "UnitaryDDTransform":
        return UnitaryDDTransform(self.M, self.N, "to_dd" if self.direction == "to_time" else "to_time")

    def matrix(self) -> np.ndarray:
        A = modulation_matrix(self.M, self.N)
        return A if self.direction == "to_time" else A.conj().T


def delay_matrix_power(MN: int, l: int, *, allow_full_period: bool = False) -> np.ndarray:
    """Dense ``Pi^l`` (cyclic down-shift by ``l``)."""
    upper = MN if allow_full_period else MN - 1
    if not 0 <= l <= upper:
        raise ValueError(f"delay power {l} outside [0, {upper}]")
    if MN > DENSE_LIMIT:
        raise ValueError(f"refusing to materialize a {MN}x{MN} dense matrix")
    return np.roll(np.eye(MN, dtype=complex), l, axis=0)


def doppler_phases(MN: int, k: float) -> np.ndarray:
    """Diagonal of ``Delta^k``: ``exp(j 2 pi k i / MN)`` for ``i = 0..MN-1``."""
    return np.exp(2j * np.pi * k * np.arange(MN) / MN)


def doppler_matrix_power(MN: int, k: float) -> np.ndarray:
    """Dense diagonal ``Delta^k``; ``k`` may be fractional."""
    if MN > DENSE_LIMIT:
        raise ValueError(f"refusing to materialize a {MN}x{MN} dense matrix")
    return np.diag(doppler_phases(MN, k))


def integer_pilot_layout(
    M: int, N: int, l_c: int, k_c: int, delay_span: int, doppler_span: int
) -> np.ndarray:
    """Layout with a single pilot at ``(l_c, k_c)`` and a guard box around it.

    The guard covers delay rows ``l_c .. l_c + delay_span`` and the
    ``doppler_span`` Doppler columns centred on ``k_c`` (cyclically).
    """
    if not (0 <= l_c and l_c + delay_span < M):
        raise ValueError("pilot guard region exceeds the delay axis")
    if doppler_span > N:
        raise ValueError("Doppler guard span exceeds N")
    layout = np.full((M, N), CellKind.DATA, dtype=np.int8)
    half = doppler_span // 2
    cols = (k_c + np.arange(-half, doppler_span - half)) % N
    layout[np.ix_(np.arange(l_c, l_c + delay_span + 1), cols)] = CellKind.GUARD
    layout[l_c, k_c] = CellKind.PILOT
    return layout


def fractional_pilot_layout(M: int, N: int, l_c: int, k_c: int, rows: int) -> np.ndarray:
    """Layout whose pilot/guard region fills every Doppler bin of ``rows`` delay rows."""
    if not (0 <= l_c and l_c + rows <= M):
        raise ValueError("pilot guard region exceeds the delay axis")
    layout = np.full((M, N), CellKind.DATA, dtype=np.int8)
    layout[l_c : l_c + rows, :] = CellKind.GUARD
    layout[l_c, k_c] = CellKind.PILOT
    return layout
