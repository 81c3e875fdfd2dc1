"""OFDM numerology, resource grids and pilot patterns."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np


@dataclass(frozen=True)
class Numerology:
    subcarrier_spacing_hz: float
    symbol_duration_s: float
    data_subcarriers: int
    data_symbols: int
    wideband_subcarriers: int
    wideband_symbols: int
    data_band_offset: int
    data_symbol_offset: int

    def __post_init__(self):
        if self.subcarrier_spacing_hz <= 0 or self.symbol_duration_s <= 0:
            raise ValueError("subcarrier spacing and symbol duration must be positive")
        counts = (self.data_subcarriers, self.data_symbols,
                  self.wideband_subcarriers, self.wideband_symbols)
        if min(counts) < 1:
            raise ValueError("all grid dimensions must be >= 1")
        if self.data_band_offset < 0 or self.data_symbol_offset < 0:
            raise ValueError("offsets must be non-negative")
        if self.data_band_offset + self.data_subcarriers > self.wideband_subcarriers:
            raise ValueError("data subband does not fit inside the wideband")
        if self.data_symbol_offset + self.data_symbols > self.wideband_symbols:
            raise ValueError("data symbols do not fit inside the wideband burst")

    @property
    def data_shape(self) -> tuple[int, int]:
        return (self.data_subcarriers, self.data_symbols)

    @property
    def wideband_shape(self) -> tuple[int, int]:
        return (self.wideband_subcarriers, self.wideband_symbols)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Numerology":
        names = {f for f in cls.__dataclass_fields__}
        if set(d) != names:
            raise ValueError(f"numerology fields mismatch: {sorted(set(d) ^ names)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "Numerology":
        return cls.from_dict(json.loads(s))


def default_numerology() -> Numerology:
    """48x12 data grid centred in a 624-subcarrier, two-subframe burst at 15 kHz."""
    return Numerology(
        subcarrier_spacing_hz=15e3,
        symbol_duration_s=1e-3 / 14,
        data_subcarriers=48,
        data_symbols=12,
        wideband_subcarriers=624,
        wideband_symbols=28,
        data_band_offset=288,
        data_symbol_offset=2,
    )


@dataclass
class ResourceGrid:
    """Complex frequency x time matrix; rows are subcarriers, columns symbols."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2:
            raise ValueError("resource grid must be 2-D")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("resource grid contains non-finite entries")

    @property
    def n_subcarriers(self) -> int:
        return self.values.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


class PilotKind(str, Enum):
    DMRS = "DMRS"
    TRS = "TRS"


@dataclass(frozen=True)
class PilotPattern:
    freq_indices: tuple[int, ...]
    time_indices: tuple[int, ...]
    kind: PilotKind
    grid_shape: tuple[int, int] = field(default=(0, 0))

    def __post_init__(self):
        for name, idx, bound in (("freq", self.freq_indices, self.grid_shape[0]),
                                 ("time", self.time_indices, self.grid_shape[1])):
            arr = np.asarray(idx)
            if arr.size == 0:
                raise ValueError(f"{name} indices are empty")
            if np.any(np.diff(arr) <= 0):
                raise ValueError(f"{name} indices must be strictly increasing")
            if arr[0] < 0 or arr[-1] >= bound:
                raise ValueError(f"{name} indices fall outside the grid")

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.freq_indices), len(self.time_indices))

    def positions(self) -> np.ndarray:
        """(k, n) pairs of the pilot set, frequency-major (time index varies fastest)."""
        k, n = np.meshgrid(self.freq_indices, self.time_indices, indexing="ij")
        return np.stack([k.ravel(), n.ravel()], axis=1)

    def take(self, grid: np.ndarray) -> np.ndarray:
        return np.asarray(grid)[np.ix_(self.freq_indices, self.time_indices)]


def dmrs_pattern(num: Numerology) -> PilotPattern:
    """Even subcarriers on data-grid symbols 0 and 9."""
    return PilotPattern(
        freq_indices=tuple(range(0, num.data_subcarriers, 2)),
        time_indices=(0, 9),
        kind=PilotKind.DMRS,
        grid_shape=num.data_shape,
    )


def trs_pattern(num: Numerology) -> PilotPattern:
    """Every fourth wideband subcarrier on burst symbols 6, 10, 20, 24."""
    return PilotPattern(
        freq_indices=tuple(range(0, num.wideband_subcarriers, 4)),
        time_indices=(6, 10, 20, 24),
        kind=PilotKind.TRS,
        grid_shape=num.wideband_shape,
    )
