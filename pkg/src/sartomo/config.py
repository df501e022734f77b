"""Run configuration: one TOML file drives the whole pipeline.

Schema (all sections required unless noted; unknown keys are rejected):

    schema_version = 1

    [geometry]    baselines (list of meters), wavelength, slant_range,
                  look_angle (optional, default 45)
    [grid]        start, stop (meters), positions (L)
    [scene]       azimuth_extent, range_extent, building_height,
                  facade_amplitude*, ground_amplitude*,
                  max_scatterers_per_pixel*, building_azimuth_fraction*,
                  facade_range_fraction*          (* optional)
    [dataset]     snr_db, labeling ("ground_truth" | "cs_reconstruction"),
                  split_fractions*, label_sparsity*, label_max_iters*,
                  max_residual*, min_peak_ratio*
    [solvers.omp] sparsity, max_iters*, residual_tolerance*
    [solvers.iht] sparsity, max_iters*, residual_tolerance*
    [solvers.ista] alpha, max_iters*, tolerance*   (step size is derived
                  from the steering matrix: 1/(1.01 * lambda_max))
    [alista]      layers, learning_rate*, epochs*, batch_size*, momentum*,
                  tied*, loss_mode*, gradient_mode*, validation_fraction*,
                  layer_schedule*
    [eval]        detection_threshold*, nmse_mode*, bench_repetitions*
    [io]          output_dir, root_seed, workers*

Reproducibility: every artifact records `config_hash`, the SHA-256 of the
normalized configuration with io.output_dir and io.workers removed (neither
affects numerical results; the root seed does and stays in the hash).  All
stage randomness fans out from io.root_seed through named substreams:
seed(stage) = SeedSequence([root_seed, STAGE_IDS[stage]]).  Relative paths
resolve against the directory containing the config file.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from .alista import TrainConfig
from .model import AcquisitionGeometry, ElevationGrid, canonical_json, sha256_hex
from .scene import Labeling, SceneSpec, SelectionCriteria
from .solvers import GreedyConfig, IstaConfig

__all__ = ["ConfigError", "RunConfig", "load_config", "STAGE_IDS"]

SCHEMA_VERSION = 1

# Substream ids for the per-stage seed derivation; part of the file contract.
STAGE_IDS = {"scene": 1, "dataset": 2, "train": 3, "bench": 4}


class ConfigError(ValueError):
    """Configuration rejected: unknown key, missing key, or bad value."""


# (type, required, default); sections are dotted for nesting.
_SCHEMA = {
    "": {"schema_version": (int, True, None)},
    "geometry": {
        "baselines": (list, True, None),
        "wavelength": (float, True, None),
        "slant_range": (float, True, None),
        "look_angle": (float, False, 45.0),
    },
    "grid": {
        "start": (float, True, None),
        "stop": (float, True, None),
        "positions": (int, True, None),
    },
    "scene": {
        "azimuth_extent": (int, True, None),
        "range_extent": (int, True, None),
        "building_height": (float, True, None),
        "facade_amplitude": (float, False, 1.0),
        "ground_amplitude": (float, False, 1.0),
        "max_scatterers_per_pixel": (int, False, 2),
        "building_azimuth_fraction": (float, False, 0.5),
        "facade_range_fraction": (float, False, 0.5),
    },
    "dataset": {
        "snr_db": (float, True, None),
        "labeling": (str, True, None),
        "split_fractions": (list, False, [0.8, 0.1, 0.1]),
        "label_sparsity": (int, False, 2),
        "label_max_iters": (int, False, 100),
        "max_residual": (float, False, 0.1),
        "min_peak_ratio": (float, False, 2.0),
    },
    "solvers.omp": {
        "sparsity": (int, True, None),
        "max_iters": (int, False, 0),
        "residual_tolerance": (float, False, 0.0),
    },
    "solvers.iht": {
        "sparsity": (int, True, None),
        "max_iters": (int, False, 100),
        "residual_tolerance": (float, False, 0.0),
    },
    "solvers.ista": {
        "alpha": (float, True, None),
        "max_iters": (int, False, 500),
        "tolerance": (float, False, 0.0),
    },
    "alista": {
        "layers": (int, True, None),
        "learning_rate": (float, False, 0.01),
        "epochs": (int, False, 50),
        "batch_size": (int, False, 64),
        "momentum": (float, False, 0.0),
        "tied": (bool, False, False),
        "loss_mode": (str, False, "complex"),
        "gradient_mode": (str, False, "analytic"),
        "validation_fraction": (float, False, 0.1),
        "layer_schedule": (list, False, []),
    },
    "eval": {
        "detection_threshold": (float, False, 0.1),
        "nmse_mode": (str, False, "full"),
        "bench_repetitions": (int, False, 3),
    },
    "io": {
        "output_dir": (str, True, None),
        "root_seed": (int, True, None),
        "workers": (int, False, 0),
    },
}

# io keys that change where/how work runs but never what comes out.
_HASH_EXCLUDED = {("io", "output_dir"), ("io", "workers")}


def _coerce(section: str, key: str, kind, value):
    # TOML distinguishes 3 from 3.0; accept ints where floats are declared.
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{section}.{key}: expected an integer, got a boolean")
    if not isinstance(value, kind):
        where = f"{section}.{key}" if section else key
        raise ConfigError(f"{where}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _normalize(doc: dict, source: str) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: config root must be a table")
    flat = {}
    for name, content in doc.items():
        if name in _SCHEMA[""]:
            flat.setdefault("", {})[name] = content
        elif isinstance(content, dict):
            for sub, subcontent in content.items():
                if isinstance(subcontent, dict):
                    flat[f"{name}.{sub}"] = subcontent
                else:
                    flat.setdefault(name, {})[sub] = subcontent
        else:
            raise ConfigError(f"{source}: unknown top-level key '{name}'")

    normalized = {}
    for section, keys in _SCHEMA.items():
        given = flat.pop(section, {})
        out = {}
        for key, (kind, required, default) in keys.items():
            if key in given:
                out[key] = _coerce(section, key, kind, given.pop(key))
            elif required:
                where = f"{section}.{key}" if section else key
                raise ConfigError(f"{source}: missing required key '{where}'")
            else:
                out[key] = default
        if given:
            where = f"{section}." if section else ""
            names = ", ".join(f"'{where}{k}'" for k in sorted(given))
            raise ConfigError(f"{source}: unknown key(s) {names}")
        normalized[section] = out
    if flat:
        names = ", ".join(f"'{k}'" for k in sorted(flat))
        raise ConfigError(f"{source}: unknown section(s) {names}")
    if normalized[""]["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"{source}: schema_version {normalized['']['schema_version']} "
            f"unsupported (this build reads {SCHEMA_VERSION})"
        )
    return normalized


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated pipeline configuration plus its reproducibility hash."""

    sections: dict
    config_hash: str
    base_dir: Path

    def __getitem__(self, dotted: str):
        section, _, key = dotted.rpartition(".")
        return self.sections[section][key]

    def stage_seed(self, stage: str) -> int:
        if stage not in STAGE_IDS:
            raise ConfigError(f"unknown seed stage '{stage}'")
        ss = np.random.SeedSequence([self["io.root_seed"], STAGE_IDS[stage]])
        return int(ss.generate_state(1, np.uint64)[0])

    def output_dir(self) -> Path:
        return (self.base_dir / self["io.output_dir"]).resolve()

    def workers(self) -> int:
        w = self["io.workers"]
        if w < 0:
            raise ConfigError("io.workers must be >= 0 (0 = machine parallelism)")
        if w == 0:
            import os

            return os.cpu_count() or 1
        return w

    # --- domain-object accessors (each validates via its own constructor) ---

    def geometry(self) -> AcquisitionGeometry:
        g = self.sections["geometry"]
        return AcquisitionGeometry(
            baselines=np.array([float(b) for b in g["baselines"]]),
            wavelength=g["wavelength"],
            slant_range=g["slant_range"],
            look_angle=g["look_angle"],
        )

    def grid(self) -> ElevationGrid:
        g = self.sections["grid"]
        return ElevationGrid.regular(g["start"], g["stop"], g["positions"])

    def scene_spec(self) -> SceneSpec:
        s = self.sections["scene"]
        return SceneSpec(random_seed=self.stage_seed("scene"), **s)

    def labeling(self) -> Labeling:
        try:
            return Labeling(self["dataset.labeling"])
        except ValueError:
            raise ConfigError(
                f"dataset.labeling must be one of "
                f"{[m.value for m in Labeling]}, got '{self['dataset.labeling']}'"
            ) from None

    def selection_criteria(self) -> SelectionCriteria:
        d = self.sections["dataset"]
        return SelectionCriteria(d["max_residual"], d["min_peak_ratio"])

    def label_config(self) -> GreedyConfig:
        d = self.sections["dataset"]
        return GreedyConfig(sparsity=d["label_sparsity"], max_iters=d["label_max_iters"])

    def greedy_config(self, solver: str) -> GreedyConfig:
        if solver not in ("omp", "iht"):
            raise ConfigError(f"no greedy section for solver '{solver}'")
        s = self.sections[f"solvers.{solver}"]
        # OMP runs exactly `sparsity` selections; max_iters = 0 means "same".
        iters = s["max_iters"] if s["max_iters"] > 0 else s["sparsity"]
        return GreedyConfig(
            sparsity=s["sparsity"],
            max_iters=iters,
            residual_tolerance=s["residual_tolerance"],
        )

    def ista_config(self, lipschitz: float) -> IstaConfig:
        s = self.sections["solvers.ista"]
        return IstaConfig(
            alpha=s["alpha"],
            lipschitz=float(lipschitz),
            max_iters=s["max_iters"],
            tolerance=s["tolerance"],
        )

    def train_config(self) -> TrainConfig:
        a = dict(self.sections["alista"])
        a.pop("layers")
        schedule = a.pop("layer_schedule")
        return TrainConfig(
            seed=self.stage_seed("train"),
            layer_schedule=tuple(int(k) for k in schedule) or None,
            **a,
        )


def load_config(path) -> RunConfig:
    """Parse, validate, and hash a TOML run configuration."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from None
    sections = _normalize(doc, str(path))

    hashed = {
        section: {
            key: value
            for key, value in keys.items()
            if (section, key) not in _HASH_EXCLUDED
        }
        for section, keys in sections.items()
    }
    config_hash = sha256_hex(canonical_json(hashed))

    cfg = RunConfig(sections, config_hash, path.parent.resolve())
    # Fail fast on values the section constructors would reject anyway.
    try:
        cfg.geometry()
        cfg.grid()
        cfg.scene_spec()
        cfg.labeling()
        cfg.selection_criteria()
        cfg.label_config()
        cfg.greedy_config("omp")
        cfg.greedy_config("iht")
        cfg.ista_config(1.0)
        cfg.train_config()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cfg
