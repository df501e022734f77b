"""Acquisition geometry, elevation grid, and steering-matrix construction.

A stack of N single-look complex channels observes, per range-azimuth pixel,
the reflectivity along elevation.  On a grid of L elevation positions s_l,
channel n (cross-track baseline b_n) measures

    y_n = sum_l exp(-j 2 pi xi_n s_l) gamma_l,      xi_n = 2 b_n / (lambda r),

i.e. y = R gamma with R the N x L complex steering matrix.  Everything here
is a pure function of immutable inputs; double precision throughout.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "AcquisitionGeometry",
    "ElevationGrid",
    "SteeringMatrix",
    "ReflectivityProfile",
    "Measurement",
    "spatial_frequency",
    "build_steering_matrix",
    "forward",
    "as_profile",
    "as_measurement",
    "canonical_json",
    "sha256_hex",
]

# Reflectivity profiles (gamma, length L) and channel measurements (y, length
# N) are plain complex128 vectors.  The aliases document intent in signatures;
# as_profile / as_measurement validate at operation boundaries.
ReflectivityProfile = np.ndarray
Measurement = np.ndarray


def canonical_json(obj) -> str:
    """Deterministic JSON encoding (sorted keys, no whitespace, no NaN)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(data) -> str:
    """SHA-256 hex digest of bytes (str is encoded as UTF-8 first)."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True, eq=False)
class AcquisitionGeometry:
    """Multi-baseline acquisition: N channels at cross-track baselines b_n.

    Parameters
    ----------
    baselines : array_like, shape (N,)
        Perpendicular baseline of each channel in meters.  At least two
        channels with at least two distinct values (a constant-baseline
        stack has a rank-1 sensing matrix).
    wavelength : float
        Carrier wavelength in meters, > 0.  Always taken verbatim; it is
        never derived from a carrier frequency.
    slant_range : float
        Slant range to the scene in meters, > 0.
    look_angle : float, optional
        Incidence angle in degrees.  Informational: it only enters when
        exported point clouds map elevation to height above ground.
    """

    baselines: np.ndarray
    wavelength: float
    slant_range: float
    look_angle: float = 45.0

    def __post_init__(self):
        b = np.array(self.baselines, dtype=float, copy=True)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("baselines must be a 1-D sequence of length >= 2")
        if not np.all(np.isfinite(b)):
            raise ValueError("baselines must be finite")
        if np.unique(b).size < 2:
            raise ValueError(
                "baselines must contain at least two distinct values "
                "(otherwise the sensing matrix has rank 1)"
            )
        if not (math.isfinite(self.wavelength) and self.wavelength > 0):
            raise ValueError("wavelength must be a positive finite number")
        if not (math.isfinite(self.slant_range) and self.slant_range > 0):
            raise ValueError("slant_range must be a positive finite number")
        if not math.isfinite(self.look_angle):
            raise ValueError("look_angle must be finite")
        b.flags.writeable = False
        object.__setattr__(self, "baselines", b)
        object.__setattr__(self, "wavelength", float(self.wavelength))
        object.__setattr__(self, "slant_range", float(self.slant_range))
        object.__setattr__(self, "look_angle", float(self.look_angle))

    @property
    def num_channels(self) -> int:
        return int(self.baselines.size)

    def content_hash(self) -> str:
        payload = {
            "baselines": [float(v) for v in self.baselines],
            "wavelength": self.wavelength,
            "slant_range": self.slant_range,
            "look_angle": self.look_angle,
        }
        return sha256_hex(canonical_json(payload))


@dataclass(frozen=True, eq=False)
class ElevationGrid:
    """Uniform elevation grid: L strictly increasing positions s_l (meters).

    Non-uniform grids are rejected at validation; each step must match the
    mean spacing to within 1e-9 m.
    """

    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=float, copy=True)
        if s.ndim != 1 or s.size < 2:
            raise ValueError("grid needs at least two samples")
        if not np.all(np.isfinite(s)):
            raise ValueError("grid samples must be finite")
        steps = np.diff(s)
        if not np.all(steps > 0):
            raise ValueError("grid samples must be strictly increasing")
        spacing = (s[-1] - s[0]) / (s.size - 1)
        if np.max(np.abs(steps - spacing)) >= 1e-9:
            raise ValueError("grid must be uniform (step deviation >= 1e-9 m)")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @classmethod
    def regular(cls, start: float, stop: float, num: int) -> "ElevationGrid":
        """Grid of `num` evenly spaced samples over [start, stop]."""
        return cls(np.linspace(float(start), float(stop), int(num)))

    @property
    def num_positions(self) -> int:
        return int(self.samples.size)

    @property
    def spacing(self) -> float:
        return float((self.samples[-1] - self.samples[0]) / (self.samples.size - 1))

    def content_hash(self) -> str:
        return sha256_hex(self.samples.astype("<f8").tobytes())


def _all_finite(arr: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(arr.real)) and np.all(np.isfinite(arr.imag)))


@dataclass(frozen=True, eq=False)
class SteeringMatrix:
    """N x L complex sensing operator with a hash binding it to its origin.

    `geometry_hash` identifies the (geometry, grid) pair that produced the
    matrix; downstream artifacts (analytic weights, trained models) carry it
    so mismatched pairings are refused instead of silently computed.
    """

    entries: np.ndarray
    geometry_hash: str

    def __post_init__(self):
        m = np.array(self.entries, dtype=np.complex128, copy=True, order="C")
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise ValueError("steering matrix must be a 2-D complex array")
        if not _all_finite(m):
            raise ValueError("steering matrix entries must be finite")
        m.flags.writeable = False
        object.__setattr__(self, "entries", m)

    @classmethod
    def from_entries(cls, entries, geometry_hash: str | None = None) -> "SteeringMatrix":
        """Wrap an explicit matrix (tests, file loading).

        Entries are not required to have unit modulus here; matrices built
        from a physical geometry always do, but synthetic operators (e.g. a
        unitary matrix) are legitimate library-level inputs.  When no hash
        is given, one is derived from the entry bytes so hash binding still
        works.
        """
        m = np.asarray(entries, dtype=np.complex128)
        if geometry_hash is None:
            geometry_hash = sha256_hex(np.ascontiguousarray(m).astype("<c16").tobytes())
        return cls(m, geometry_hash)

    @property
    def num_channels(self) -> int:
        return int(self.entries.shape[0])

    @property
    def num_positions(self) -> int:
        return int(self.entries.shape[1])


def spatial_frequency(geometry: AcquisitionGeometry, channel_index: int) -> float:
    """Elevation spatial frequency xi_n = 2 b_n / (lambda r) in 1/meters.

    `channel_index` must satisfy 0 <= channel_index < N (no negative
    wrap-around indexing).
    """
    n = int(channel_index)
    if not 0 <= n < geometry.num_channels:
        raise IndexError(
            f"channel_index {channel_index} out of range for {geometry.num_channels} channels"
        )
    return 2.0 * float(geometry.baselines[n]) / (geometry.wavelength * geometry.slant_range)


def steering_hash(geometry: AcquisitionGeometry, grid: ElevationGrid) -> str:
    """Hash binding a steering matrix to the geometry and grid behind it."""
    return sha256_hex(geometry.content_hash() + ":" + grid.content_hash())


def build_steering_matrix(geometry: AcquisitionGeometry, grid: ElevationGrid) -> SteeringMatrix:
    """Construct R with R_nl = exp(-j 2 pi xi_n s_l); every entry unit-modulus."""
    xi = np.array(
        [spatial_frequency(geometry, n) for n in range(geometry.num_channels)]
    )
    phase = -2.0 * np.pi * np.outer(xi, grid.samples)
    entries = np.exp(1j * phase)
    return SteeringMatrix(entries, steering_hash(geometry, grid))


def as_profile(values, num_positions: int) -> np.ndarray:
    """Validate and return a length-L complex128 reflectivity vector."""
    g = np.asarray(values, dtype=np.complex128)
    if g.shape != (num_positions,):
        raise ValueError(f"profile has shape {g.shape}, expected ({num_positions},)")
    if not _all_finite(g):
        raise ValueError("profile entries must be finite")
    return g


def as_measurement(values, num_channels: int) -> np.ndarray:
    """Validate and return a length-N complex128 measurement vector."""
    y = np.asarray(values, dtype=np.complex128)
    if y.shape != (num_channels,):
        raise ValueError(f"measurement has shape {y.shape}, expected ({num_channels},)")
    if not _all_finite(y):
        raise ValueError("measurement entries must be finite")
    return y


def forward(R: SteeringMatrix, gamma: ReflectivityProfile) -> Measurement:
    """Noiseless forward model y = R @ gamma."""
    g = as_profile(gamma, R.num_positions)
    return R.entries @ g
