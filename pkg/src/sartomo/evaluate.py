"""Reconstruction quality metrics, timing benchmarks, and point-cloud export.

NMSE is reported in a negated-dB convention: -10*log10(sum||err||^2 /
sum||truth||^2), so larger numbers mean better reconstructions and an exact
match saturates at +300.  Benchmarks time full per-pixel passes of a solver
callable and report both wall time and summed per-pixel (lane) time so
multi-lane runs stay comparable.  Point clouds map per-pixel elevation
profiles into scene coordinates: a scatterer at elevation s within pixel
(az, rg) lands at

    x = az * azimuth_spacing
    y = rg * range_spacing - s * sin(look_angle)
    z = s * cos(look_angle)

with the look angle taken from the acquisition geometry (layover: elevated
scatterers project toward the sensor in ground range).
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .alista import AlistaModel, alista_forward
from .model import AcquisitionGeometry, ElevationGrid, SteeringMatrix
from .solvers import GreedyConfig, IstaConfig, ista_solve, iht_solve, omp_solve

__all__ = [
    "NmseReport",
    "BenchReport",
    "PointCloud",
    "nmse_db",
    "benchmark",
    "to_point_cloud",
    "make_solver",
]

_CAP_DB = 300.0


def _capped_db(num: float, den: float) -> float:
    if num == 0.0:
        return _CAP_DB
    if den == 0.0:
        return -_CAP_DB
    return float(min(_CAP_DB, max(-_CAP_DB, -10.0 * math.log10(num / den))))


@dataclass(frozen=True, eq=False)
class NmseReport:
    """Per-pixel and aggregate NMSE for one solver's estimates.

    Stores the raw per-pixel error/truth energies so the aggregate is
    recomputable; construction verifies that to 1e-10.
    """

    solver: str
    mode: str
    numerators: tuple
    denominators: tuple
    per_pixel_db: tuple
    aggregate_ratio: float
    aggregate_db: float

    def __post_init__(self):
        if len(self.numerators) != len(self.denominators) or len(self.numerators) != len(
            self.per_pixel_db
        ):
            raise ValueError("per-pixel lists must have equal lengths")
        num = float(sum(self.numerators))
        den = float(sum(self.denominators))
        if den == 0.0:
            raise ValueError("aggregate NMSE undefined: truths carry zero energy")
        ratio = num / den
        if abs(ratio - self.aggregate_ratio) > 1e-10 * max(1.0, abs(ratio)):
            raise ValueError("aggregate ratio does not match stored per-pixel energies")
        if abs(_capped_db(num, den) - self.aggregate_db) > 1e-10:
            raise ValueError("aggregate dB does not match stored per-pixel energies")

    @property
    def sample_count(self) -> int:
        return len(self.numerators)


def nmse_db(estimates, truths, solver: str = "", mode: str = "full") -> NmseReport:
    """Aggregate and per-pixel NMSE of `estimates` against `truths`.

    mode "full" compares whole profiles; mode "support" restricts each pixel
    to the estimate's detected (nonzero) positions, measuring amplitude
    accuracy there while ignoring missed scatterers.
    """
    if mode not in ("full", "support"):
        raise ValueError("mode must be 'full' or 'support'")
    est = [np.asarray(e, dtype=np.complex128) for e in estimates]
    tru = [np.asarray(t, dtype=np.complex128) for t in truths]
    if len(est) != len(tru) or len(est) == 0:
        raise ValueError("estimates and truths must be nonempty, equal-length lists")
    numerators = []
    denominators = []
    per_pixel = []
    for e, t in zip(est, tru):
        if e.shape != t.shape:
            raise ValueError("estimate/truth dimension mismatch")
        if mode == "support":
            keep = e != 0
            e, t = e[keep], t[keep]
        num = float(np.sum(np.abs(e - t) ** 2))
        den = float(np.sum(np.abs(t) ** 2))
        numerators.append(num)
        denominators.append(den)
        per_pixel.append(_capped_db(num, den))
    total_num = float(sum(numerators))
    total_den = float(sum(denominators))
    if total_den == 0.0:
        raise ValueError("aggregate NMSE undefined: truths carry zero energy")
    return NmseReport(
        solver=solver,
        mode=mode,
        numerators=tuple(numerators),
        denominators=tuple(denominators),
        per_pixel_db=tuple(per_pixel),
        aggregate_ratio=total_num / total_den,
        aggregate_db=_capped_db(total_num, total_den),
    )


@dataclass(frozen=True, eq=False)
class BenchReport:
    """Timing of one solver over a full per-pixel pass (median of reps)."""

    solver: str
    pixels: int
    iteration_budget: int
    repetitions: int
    lanes: int
    total_wall_seconds: float
    total_lane_seconds: float
    per_pixel_mean_seconds: float
    per_pixel_median_seconds: float

    def __post_init__(self):
        if self.pixels > 0:
            expected = self.per_pixel_mean_seconds * self.pixels
            if abs(expected - self.total_lane_seconds) > 0.05 * max(
                self.total_lane_seconds, 1e-12
            ):
                raise ValueError("per-pixel mean inconsistent with lane total")


def _timed_pass(solve, measurements, lanes: int):
    """One full pass; returns (wall seconds, per-pixel seconds array)."""
    per_pixel = np.zeros(len(measurements))

    def run(idx_y):
        idx, y = idx_y
        t0 = time.perf_counter()
        solve(y)
        per_pixel[idx] = time.perf_counter() - t0

    wall0 = time.perf_counter()
    if lanes <= 1:
        for item in enumerate(measurements):
            run(item)
    else:
        with ThreadPoolExecutor(max_workers=lanes) as pool:
            list(pool.map(run, enumerate(measurements)))
    wall = time.perf_counter() - wall0
    return wall, per_pixel


def benchmark(
    solver_name: str,
    solve,
    sample_set,
    iteration_budget: int,
    repetitions: int = 3,
    lanes: int = 1,
) -> BenchReport:
    """Median-of-repetitions timing of `solve` over every measurement.

    `sample_set` may be a SampleSet or a plain sequence of measurement
    vectors.  One untimed warm-up pass runs first; the reported pass is the
    one with the median wall time.  Solver exceptions abort the report.
    """
    if repetitions < 3:
        raise ValueError("repetitions must be >= 3 for a stable median")
    if lanes < 1:
        raise ValueError("lanes must be >= 1")
    measurements = (
        [s.measurement for s in sample_set.samples]
        if hasattr(sample_set, "samples")
        else list(sample_set)
    )
    if len(measurements) == 0:
        return BenchReport(
            solver=solver_name,
            pixels=0,
            iteration_budget=int(iteration_budget),
            repetitions=int(repetitions),
            lanes=int(lanes),
            total_wall_seconds=0.0,
            total_lane_seconds=0.0,
            per_pixel_mean_seconds=0.0,
            per_pixel_median_seconds=0.0,
        )
    _timed_pass(solve, measurements, lanes)  # warm-up
    passes = [_timed_pass(solve, measurements, lanes) for _ in range(repetitions)]
    passes.sort(key=lambda p: p[0])
    wall, per_pixel = passes[len(passes) // 2]
    lane_total = float(np.sum(per_pixel))
    return BenchReport(
        solver=solver_name,
        pixels=len(measurements),
        iteration_budget=int(iteration_budget),
        repetitions=int(repetitions),
        lanes=int(lanes),
        total_wall_seconds=float(wall),
        total_lane_seconds=lane_total,
        per_pixel_mean_seconds=lane_total / len(measurements),
        per_pixel_median_seconds=float(np.median(per_pixel)),
    )


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Detected scatterers in scene coordinates: rows of (x, y, z, amplitude)."""

    points: np.ndarray
    detection_threshold: float

    def __post_init__(self):
        p = np.array(self.points, dtype=float).reshape(-1, 4)
        if p.size and not np.all(np.isfinite(p)):
            raise ValueError("point coordinates must be finite")
        if p.size and np.any(p[:, 3] <= 0):
            raise ValueError("point amplitudes must be positive")
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return int(self.points.shape[0])


def to_point_cloud(
    estimates: dict,
    grid: ElevationGrid,
    geometry: AcquisitionGeometry,
    detection_threshold: float = 0.1,
    *,
    azimuth_spacing: float = 1.0,
    range_spacing: float = 1.0,
) -> PointCloud:
    """Threshold per-pixel profiles into a 3-D point cloud.

    `estimates` maps (azimuth, range) pixel indices to elevation profiles.
    A profile entry becomes a point when its modulus is at least
    `detection_threshold` times the maximum modulus over the whole scene
    (and strictly positive).  An empty cloud is legitimate.
    """
    if not 0.0 <= detection_threshold:
        raise ValueError("detection_threshold must be nonnegative")
    look = math.radians(geometry.look_angle)
    sin_l, cos_l = math.sin(look), math.cos(look)
    global_max = 0.0
    for profile in estimates.values():
        mags = np.abs(np.asarray(profile))
        if mags.size:
            global_max = max(global_max, float(np.max(mags)))
    cutoff = detection_threshold * global_max
    rows = []
    for (az, rg) in sorted(estimates):
        profile = np.asarray(estimates[(az, rg)], dtype=np.complex128)
        if profile.shape != (grid.num_positions,):
            raise ValueError("estimate length does not match the elevation grid")
        mags = np.abs(profile)
        for l in np.flatnonzero((mags >= cutoff) & (mags > 0)):
            s = float(grid.samples[l])
            rows.append(
                (
                    az * azimuth_spacing,
                    rg * range_spacing - s * sin_l,
                    s * cos_l,
                    float(mags[l]),
                )
            )
    points = np.array(rows, dtype=float).reshape(-1, 4)
    return PointCloud(points, float(detection_threshold))


def make_solver(
    name: str,
    R: SteeringMatrix,
    *,
    ista_config: IstaConfig | None = None,
    greedy_config: GreedyConfig | None = None,
    model: AlistaModel | None = None,
):
    """Uniform per-pixel solver callables (y -> profile) for comparisons.

    Names: "omp" and "iht" (need greedy_config), "ista" (needs ista_config),
    "alista" (needs a trained model).
    """
    if name == "ista":
        if ista_config is None:
            raise ValueError("solver 'ista' requires ista_config")
        return lambda y: ista_solve(y, R, ista_config).estimate
    if name == "omp":
        if greedy_config is None:
            raise ValueError("solver 'omp' requires greedy_config")
        return lambda y: omp_solve(y, R, greedy_config).estimate
    if name == "iht":
        if greedy_config is None:
            raise ValueError("solver 'iht' requires greedy_config")
        return lambda y: iht_solve(y, R, greedy_config).estimate
    if name == "alista":
        if model is None:
            raise ValueError("solver 'alista' requires a trained model")
        return lambda y: alista_forward(model, y, R)
    raise ValueError(f"unknown solver '{name}' (expected omp, iht, ista, or alista)")
