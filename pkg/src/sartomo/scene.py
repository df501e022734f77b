"""Synthetic urban scene generation and labeled sample assembly.

The simulated scene is a parametric box building on flat ground.  Every
range-azimuth pixel carries a sparse elevation profile: plain ground pixels
hold a single scatterer at elevation 0, while pixels inside the facade
footprint additionally see the building wall at a pixel-dependent elevation
(layover), giving the 2-sparse profiles the solvers must separate.

Sample sets pair noisy measurements with labels under two schemes: ground
truth (the scene's own profiles) or classical-solver reconstructions that
survive a residual/peak-ratio selection filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model import (
    AcquisitionGeometry,
    ElevationGrid,
    _all_finite,
    build_steering_matrix,
    forward,
)
from .solvers import GreedyConfig, iht_solve

__all__ = [
    "SceneSpec",
    "Labeling",
    "PixelSample",
    "SampleSet",
    "SelectionCriteria",
    "generate_scene",
    "add_noise",
    "build_sample_set",
    "select_cs_labels",
]

_MAX_SEED = 2**64


class Labeling(str, Enum):
    """How labels are produced: scene truth or filtered solver output."""

    GROUND_TRUTH = "ground_truth"
    CS_RECONSTRUCTION = "cs_reconstruction"


@dataclass(frozen=True)
class SceneSpec:
    """Parametric box-building scene on flat ground.

    The building occupies the central `building_azimuth_fraction` of azimuth
    columns; within those columns the central `facade_range_fraction` of
    range rows form the facade footprint, where the wall elevation ramps
    linearly up to `building_height` (meters along the elevation axis).
    Setting either fraction to 0 yields flat ground everywhere.

    Scatterer amplitudes are fixed moduli (`facade_amplitude`,
    `ground_amplitude`) with uniformly random phase per scatterer, drawn from
    a per-pixel substream of `random_seed`, so generation is deterministic
    and safe to parallelize over pixels.
    """

    azimuth_extent: int
    range_extent: int
    building_height: float
    facade_amplitude: float = 1.0
    ground_amplitude: float = 1.0
    max_scatterers_per_pixel: int = 2
    random_seed: int = 0
    building_azimuth_fraction: float = 0.5
    facade_range_fraction: float = 0.5

    def __post_init__(self):
        if int(self.azimuth_extent) < 1 or int(self.range_extent) < 1:
            raise ValueError("scene extents must be >= 1 pixel")
        if not (math.isfinite(self.building_height) and self.building_height > 0):
            raise ValueError("building_height must be positive")
        if not (self.facade_amplitude > 0 and self.ground_amplitude > 0):
            raise ValueError("scatterer amplitudes must be positive")
        if not 1 <= int(self.max_scatterers_per_pixel) <= 3:
            raise ValueError("max_scatterers_per_pixel must be in 1..3")
        if not 0 <= int(self.random_seed) < _MAX_SEED:
            raise ValueError("random_seed must be a 64-bit unsigned integer")
        for name in ("building_azimuth_fraction", "facade_range_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def building_footprint(self) -> tuple[int, int, int, int]:
        """(az0, az_span, rg0, rg_span) of the facade-overlap rectangle."""
        az_span = int(round(self.azimuth_extent * self.building_azimuth_fraction))
        rg_span = int(round(self.range_extent * self.facade_range_fraction))
        az0 = (self.azimuth_extent - az_span) // 2
        rg0 = (self.range_extent - rg_span) // 2
        return az0, az_span, rg0, rg_span


@dataclass(frozen=True)
class SelectionCriteria:
    """Filter for solver-produced labels.

    A pixel is kept when the relative residual ||y - R g|| / ||y|| is at most
    `max_residual` and, for estimates with two or more nonzeros, the ratio of
    the largest to second-largest modulus is at least `min_peak_ratio`.
    """

    max_residual: float = 0.1
    min_peak_ratio: float = 2.0

    def __post_init__(self):
        if self.max_residual < 0:
            raise ValueError("max_residual must be nonnegative")
        if self.min_peak_ratio < 1.0:
            raise ValueError("min_peak_ratio must be >= 1")


@dataclass(frozen=True, eq=False)
class PixelSample:
    """One labeled training/evaluation pair (y, gamma) for a pixel."""

    measurement: np.ndarray
    label: np.ndarray
    label_provenance: Labeling
    pixel_coords: tuple[int, int]
    snr_db: float

    def __post_init__(self):
        object.__setattr__(
            self, "measurement", np.asarray(self.measurement, dtype=np.complex128)
        )
        object.__setattr__(self, "label", np.asarray(self.label, dtype=np.complex128))
        object.__setattr__(self, "pixel_coords", tuple(int(c) for c in self.pixel_coords))


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Samples plus the hashes binding them to a geometry/grid and split tags.

    `splits` maps tag -> sorted sample indices; the tags partition the set.
    """

    samples: tuple
    geometry_hash: str
    grid_hash: str
    splits: dict

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.samples:
            n_chan = self.samples[0].measurement.size
            n_pos = self.samples[0].label.size
            for s in self.samples:
                if s.measurement.size != n_chan or s.label.size != n_pos:
                    raise ValueError("samples disagree on geometry/grid dimensions")
        assigned = sorted(i for idx in self.splits.values() for i in idx)
        if assigned != list(range(len(self.samples))):
            raise ValueError("split tags must partition the sample list")

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, tag: str) -> list:
        return [self.samples[i] for i in self.splits[tag]]

    def measurements(self, tag: str | None = None) -> np.ndarray:
        rows = self.subset(tag) if tag else list(self.samples)
        return np.array([s.measurement for s in rows])

    def labels(self, tag: str | None = None) -> np.ndarray:
        rows = self.subset(tag) if tag else list(self.samples)
        return np.array([s.label for s in rows])


def _nearest_index(grid: ElevationGrid, s: float) -> int:
    return int(np.argmin(np.abs(grid.samples - s)))


def generate_scene(spec: SceneSpec, grid: ElevationGrid) -> dict:
    """Per-pixel sparse profiles for the box-building scene.

    Returns {(azimuth, range): length-L complex profile}.  Each profile is
    exactly k-sparse with k <= spec.max_scatterers_per_pixel; deterministic
    given spec.random_seed (each pixel draws from its own substream).
    """
    if spec.building_height > grid.samples[-1]:
        raise ValueError(
            f"building_height {spec.building_height} exceeds the grid extent "
            f"(max elevation {grid.samples[-1]})"
        )
    az0, az_span, rg0, rg_span = spec.building_footprint()
    ground_idx = _nearest_index(grid, 0.0)
    num_pos = grid.num_positions

    scene = {}
    for az in range(spec.azimuth_extent):
        for rg in range(spec.range_extent):
            rng = np.random.default_rng(
                np.random.SeedSequence([spec.random_seed, az, rg])
            )
            profile = np.zeros(num_pos, dtype=np.complex128)
            on_facade = (
                az_span > 0
                and rg_span > 0
                and az0 <= az < az0 + az_span
                and rg0 <= rg < rg0 + rg_span
            )
            if on_facade:
                t = rg - rg0
                s_wall = spec.building_height * (t + 1) / rg_span
                wall_idx = _nearest_index(grid, s_wall)
                profile[wall_idx] += spec.facade_amplitude * np.exp(
                    2j * np.pi * rng.random()
                )
                if spec.max_scatterers_per_pixel >= 2:
                    profile[ground_idx] += spec.ground_amplitude * np.exp(
                        2j * np.pi * rng.random()
                    )
            else:
                profile[ground_idx] += spec.ground_amplitude * np.exp(
                    2j * np.pi * rng.random()
                )
            scene[(az, rg)] = profile
    return scene


def add_noise(y_clean: np.ndarray, snr_db: float, seed) -> np.ndarray:
    """Circular complex Gaussian noise at the requested per-pixel SNR.

    Per-sample noise variance is sigma^2 = ||y||^2 / (N * 10^(snr_db/10)).
    The unit-variance draw depends only on the seed, so scaling y scales the
    realized noise by the same factor.  snr_db = +inf returns y unchanged.

    `seed` may be an int, a SeedSequence, or a Generator.
    """
    y = np.asarray(y_clean, dtype=np.complex128)
    if not _all_finite(y):
        raise ValueError("y_clean must be finite")
    if math.isinf(snr_db) and snr_db > 0:
        return y.copy()
    energy = float(np.sum(np.abs(y) ** 2))
    if energy == 0.0:
        raise ValueError("SNR is undefined for an all-zero measurement")
    n = y.size
    sigma = math.sqrt(energy / (n * 10.0 ** (snr_db / 10.0)))
    rng = np.random.default_rng(seed)
    z = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
    return y + sigma * z


def select_cs_labels(
    reconstructions: dict,
    measurements: dict,
    R,
    criteria: SelectionCriteria = SelectionCriteria(),
) -> dict:
    """Keep the reconstructions trustworthy enough to serve as labels.

    A pixel survives iff its relative residual is at most
    criteria.max_residual and (for 2-or-more-sparse estimates) the
    peak-to-secondary modulus ratio is at least criteria.min_peak_ratio.
    Raises if nothing survives, which signals criteria too strict to build
    a training set from.
    """
    kept = {}
    A = R.entries
    for coord in sorted(reconstructions):
        gam = np.asarray(reconstructions[coord], dtype=np.complex128)
        y = np.asarray(measurements[coord], dtype=np.complex128)
        norm_y = float(np.linalg.norm(y))
        norm_err = float(np.linalg.norm(y - A @ gam))
        if norm_y == 0.0:
            residual = 0.0 if norm_err == 0.0 else np.inf
        else:
            residual = norm_err / norm_y
        if residual > criteria.max_residual:
            continue
        mags = np.sort(np.abs(gam[gam != 0]))[::-1]
        if mags.size >= 2 and mags[0] / mags[1] < criteria.min_peak_ratio:
            continue
        kept[coord] = gam
    if not kept:
        raise ValueError(
            "label selection rejected every pixel; criteria too strict "
            f"(max_residual={criteria.max_residual}, min_peak_ratio={criteria.min_peak_ratio})"
        )
    return kept


def build_sample_set(
    scene: dict,
    geometry: AcquisitionGeometry,
    grid: ElevationGrid,
    snr_db: float,
    labeling: Labeling,
    seed: int,
    *,
    split_fractions: tuple = (0.8, 0.1, 0.1),
    label_config: GreedyConfig | None = None,
    criteria: SelectionCriteria = SelectionCriteria(),
) -> SampleSet:
    """Assemble labeled (y, gamma) pairs from a generated scene.

    Measurements are forward(R, truth) + noise at `snr_db` (per-pixel noise
    substreams of `seed`).  Ground-truth labeling keeps every pixel with the
    scene profile as label; CS labeling reconstructs each pixel with IHT
    (`label_config`, default K=2) and keeps only pixels passing `criteria`.
    Split tags train/validation/test are assigned by a seeded shuffle with
    the given fractions.
    """
    labeling = Labeling(labeling)
    fr = tuple(float(f) for f in split_fractions)
    if len(fr) != 3 or min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
        raise ValueError("split_fractions must be three nonnegative numbers summing to 1")
    if not 0 <= int(seed) < _MAX_SEED:
        raise ValueError("seed must be a 64-bit unsigned integer")

    R = build_steering_matrix(geometry, grid)
    coords = sorted(scene)
    measurements = {}
    for az, rg in coords:
        y_clean = forward(R, scene[(az, rg)])
        measurements[(az, rg)] = add_noise(
            y_clean, snr_db, np.random.SeedSequence([seed, 0, az, rg])
        )

    if labeling is Labeling.GROUND_TRUTH:
        labels = {c: np.array(scene[c], dtype=np.complex128) for c in coords}
        kept_coords = coords
    else:
        cfg = label_config if label_config is not None else GreedyConfig(sparsity=2, max_iters=100)
        recon = {c: iht_solve(measurements[c], R, cfg).estimate for c in coords}
        labels = select_cs_labels(recon, measurements, R, criteria)
        kept_coords = sorted(labels)

    samples = [
        PixelSample(
            measurement=measurements[c],
            label=labels[c],
            label_provenance=labeling,
            pixel_coords=c,
            snr_db=float(snr_db),
        )
        for c in kept_coords
    ]

    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    perm = rng.permutation(len(samples))
    n_train = int(round(fr[0] * len(samples)))
    n_val = int(round(fr[1] * len(samples)))
    n_val = min(n_val, len(samples) - n_train)
    splits = {
        "train": tuple(sorted(int(i) for i in perm[:n_train])),
        "validation": tuple(sorted(int(i) for i in perm[n_train : n_train + n_val])),
        "test": tuple(sorted(int(i) for i in perm[n_train + n_val :])),
    }
    return SampleSet(tuple(samples), geometry.content_hash(), grid.content_hash(), splits)
