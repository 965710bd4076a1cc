"""Peak sets, ECD curves and conversions between them.

All curves live on a fixed 1-nm wavelength grid from 80 to 450 nm (371
points) in mdeg, clipped to +/-200.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

GRID_START_NM = 80
GRID_STOP_NM = 450
GRID = np.arange(GRID_START_NM, GRID_STOP_NM + 1, dtype=np.float64)
N_GRID = GRID.size  # 371
INTENSITY_LIMIT = 200.0
MAX_PEAKS = 9
HC_EV_NM = 1239.84
MAX_STATES = 20


class SpectrumError(ValueError):
    """Invalid spectrum, peak set or rendering parameter."""


@dataclass(frozen=True)
class Peak:
    position_nm: float
    symbol: int
    height_mdeg: float

    def __post_init__(self):
        if self.symbol not in (1, -1):
            raise SpectrumError(f"peak symbol must be +1 or -1, got {self.symbol!r}")
        pos = float(self.position_nm)
        if not np.isfinite(pos) or not GRID_START_NM <= pos <= GRID_STOP_NM:
            raise SpectrumError(f"peak position {pos} outside [80, 450] nm")
        height = float(self.height_mdeg)
        if not np.isfinite(height) or abs(height) > INTENSITY_LIMIT:
            raise SpectrumError(f"peak height {height} outside +/-200 mdeg")
        # the sign of a peak is carried by its symbol; heights are stored signed
        object.__setattr__(self, "position_nm", pos)
        object.__setattr__(self, "height_mdeg", self.symbol * abs(height))

    def to_dict(self) -> dict:
        return {"position_nm": self.position_nm, "symbol": self.symbol,
                "height_mdeg": self.height_mdeg}

    @classmethod
    def from_dict(cls, d: dict) -> "Peak":
        try:
            return cls(float(d["position_nm"]), int(d["symbol"]), float(d["height_mdeg"]))
        except (KeyError, TypeError) as exc:
            raise SpectrumError(f"malformed peak {d!r}") from exc


@dataclass(frozen=True)
class PeakSet:
    """Ordered peaks of one spectrum, strictly increasing in wavelength."""

    peaks: tuple[Peak, ...] = field(default_factory=tuple)

    def __post_init__(self):
        peaks = tuple(self.peaks)
        object.__setattr__(self, "peaks", peaks)
        for a, b in zip(peaks, peaks[1:]):
            if not a.position_nm < b.position_nm:
                raise SpectrumError("peak positions must be strictly increasing")

    @classmethod
    def from_tuples(cls, items: Iterable[Sequence[float]]) -> "PeakSet":
        """Build from ``(position_nm, symbol, height_mdeg)`` triples, sorting by position."""
        peaks = [Peak(float(p), int(s), float(h)) for p, s, h in items]
        return cls(tuple(sorted(peaks, key=lambda pk: pk.position_nm)))

    def __len__(self) -> int:
        return len(self.peaks)

    def __iter__(self):
        return iter(self.peaks)

    def __getitem__(self, i):
        return self.peaks[i]

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.position_nm for p in self.peaks], dtype=np.float64)

    @property
    def symbols(self) -> np.ndarray:
        return np.array([p.symbol for p in self.peaks], dtype=np.int64)

    @property
    def heights(self) -> np.ndarray:
        return np.array([p.height_mdeg for p in self.peaks], dtype=np.float64)

    def negated(self) -> "PeakSet":
        return PeakSet(tuple(Peak(p.position_nm, -p.symbol, -p.height_mdeg) for p in self.peaks))

    def to_list(self) -> list[dict]:
        return [p.to_dict() for p in self.peaks]

    @classmethod
    def from_list(cls, items: Iterable[dict]) -> "PeakSet":
        return cls(tuple(Peak.from_dict(d) for d in items))


@dataclass(frozen=True)
class ExcitedState:
    wavelength_nm: float
    rotatory_strength: float


def validate_spectrum(values, tol: float = 1e-6) -> np.ndarray:
    """Return a clipped float64 copy of ``values`` or raise :class:`SpectrumError`.

    Values may exceed the +/-200 mdeg limit by at most ``tol`` before clipping.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size != N_GRID:
        raise SpectrumError(f"expected {N_GRID} grid points, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise SpectrumError("spectrum contains non-finite values")
    worst = float(np.max(np.abs(arr))) if arr.size else 0.0
    if worst > INTENSITY_LIMIT + tol:
        raise SpectrumError(f"intensity {worst:.6g} outside +/-200 mdeg")
    return np.clip(arr, -INTENSITY_LIMIT, INTENSITY_LIMIT)


def _clip(curve: np.ndarray) -> np.ndarray:
    return np.clip(curve, -INTENSITY_LIMIT, INTENSITY_LIMIT)


def render_unclipped(peaks: PeakSet, mode: str = "amplitude", sigma0_nm: float = 10.0,
                     amplitude0: float = 100.0, grid: np.ndarray = GRID) -> np.ndarray:
    """Sum of truncated Gaussians, one per peak, before clipping.

    ``mode="amplitude"`` draws each peak with height ``l_h`` and a fixed width
    ``sigma0_nm``.  ``mode="literal"`` uses the peak height as the Gaussian
    standard deviation and a fixed amplitude ``amplitude0`` signed by the peak.
    Each Gaussian is zero outside the open interval ``(mu - 6 sigma, mu + 6 sigma)``.
    """
    if mode not in ("amplitude", "literal"):
        raise SpectrumError(f"unknown render mode {mode!r}")
    if mode == "amplitude" and not sigma0_nm > 0:
        raise SpectrumError(f"sigma must be positive, got {sigma0_nm}")
    curve = np.zeros_like(grid, dtype=np.float64)
    for p in peaks:
        if mode == "amplitude":
            sigma, amp = sigma0_nm, p.height_mdeg
        else:
            sigma, amp = abs(p.height_mdeg), p.symbol * amplitude0
            if not sigma > 0:
                raise SpectrumError(f"sigma must be positive, got {sigma} (peak at {p.position_nm} nm)")
        offset = grid - p.position_nm
        inside = np.abs(offset) < 6.0 * sigma
        curve[inside] += amp * np.exp(-offset[inside] ** 2 / (2.0 * sigma ** 2))
    return curve


def render(peaks: PeakSet, mode: str = "amplitude", sigma0_nm: float = 10.0,
           amplitude0: float = 100.0) -> np.ndarray:
    """Render a peak set to a 371-point curve in mdeg, clipped to +/-200."""
    return _clip(render_unclipped(peaks, mode, sigma0_nm, amplitude0))


def synthesize_from_states(states: Sequence[ExcitedState] | Sequence[tuple[float, float]],
                           half_width_ev: float = 0.3, calibration: float = 1.0) -> np.ndarray:
    """Gaussian broadening of excited states in the energy domain.

    Each state contributes ``R_k * exp(-((E - E_k) / half_width_ev) ** 2)`` with
    ``E = 1239.84 / wavelength``, evaluated on the wavelength grid.
    """
    states = [s if isinstance(s, ExcitedState) else ExcitedState(*s) for s in states]
    if len(states) > MAX_STATES:
        raise SpectrumError(f"at most {MAX_STATES} excited states, got {len(states)}")
    if not half_width_ev > 0:
        raise SpectrumError(f"half width must be positive, got {half_width_ev}")
    energy = HC_EV_NM / GRID
    curve = np.zeros(N_GRID, dtype=np.float64)
    for s in states:
        if not s.wavelength_nm > 0:
            raise SpectrumError(f"non-positive excitation wavelength {s.wavelength_nm}")
        e_k = HC_EV_NM / s.wavelength_nm
        curve += s.rotatory_strength * np.exp(-(((energy - e_k) / half_width_ev) ** 2))
    return _clip(calibration * curve)


def _local_extrema(x: np.ndarray) -> list[int]:
    """Indices of sign-consistent strict extrema; plateaus report their left edge."""
    n = x.size
    out = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[j + 1] == x[i]:
            j += 1
        v = x[i]
        if v != 0:
            left = x[i - 1] if i > 0 else None
            right = x[j + 1] if j + 1 < n else None
            if v > 0:
                ok = (left is None or left < v) and (right is None or right < v)
            else:
                ok = (left is None or left > v) and (right is None or right > v)
            if ok:
                out.append(i)
        i = j + 1
    return out


def extract_peaks(spectrum, prominence_frac: float = 0.05, min_sep_nm: float = 5.0) -> PeakSet:
    """Pick the signed extrema of a curve as a :class:`PeakSet`.

    Extrema below ``prominence_frac * max|intensity|`` are dropped.  Of two
    extrema closer than ``min_sep_nm`` the larger in magnitude survives (ties
    favour the shorter wavelength).
    """
    x = np.asarray(spectrum, dtype=np.float64)
    if x.shape != (N_GRID,):
        raise SpectrumError(f"expected {N_GRID} grid points, got {x.size}")
    x = _clip(x)
    top = float(np.max(np.abs(x)))
    if top == 0.0:
        return PeakSet()
    floor = prominence_frac * top
    cands = [i for i in _local_extrema(x) if abs(x[i]) >= floor]
    cands.sort(key=lambda i: (-abs(x[i]), i))
    kept: list[int] = []
    for i in cands:
        if all(abs(GRID[i] - GRID[k]) >= min_sep_nm for k in kept):
            kept.append(i)
    kept.sort()
    return PeakSet(tuple(Peak(GRID[i], 1 if x[i] > 0 else -1, x[i]) for i in kept))
