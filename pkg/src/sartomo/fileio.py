"""On-disk artifact formats: binary containers, report files, point-cloud export.

Every binary artifact shares one framing so tools can sniff files cheaply:

    magic    8 bytes   b"SARTOMO\\0"
    kind     8 bytes   ASCII tag, NUL-padded ("steering", "weights", ...)
    version  u32 LE    format version (currently 1)
    hlen     u64 LE    byte length of the JSON header
    header   hlen bytes of canonical JSON (sorted keys, no whitespace)
    payload  raw little-endian arrays, layout recorded in the header

The header always stores a SHA-256 of the payload plus the hashes binding the
artifact to its inputs (geometry, grid, steering matrix, configuration), so a
load refuses corruption and mismatched pairings instead of computing garbage.
Reports and manifests are plain canonical-JSON text files; point clouds are
ASCII XYZ (x y z amplitude) and ASCII PLY with an amplitude property.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .alista import AlistaModel, AnalyticWeights
from .evaluate import BenchReport, NmseReport, PointCloud
from .model import SteeringMatrix, canonical_json, sha256_hex
from .scene import Labeling, PixelSample, SampleSet

__all__ = [
    "FORMAT_VERSION",
    "read_header",
    "save_steering",
    "load_steering",
    "save_weights",
    "load_weights",
    "save_dataset",
    "load_dataset",
    "save_model",
    "load_model",
    "save_estimates",
    "load_estimates",
    "report_to_dict",
    "save_report",
    "load_report",
    "save_json",
    "load_json",
    "write_xyz",
    "write_ply",
]

MAGIC = b"SARTOMO\x00"
FORMAT_VERSION = 1

_PROVENANCE_CODES = {Labeling.GROUND_TRUTH: 0, Labeling.CS_RECONSTRUCTION: 1}
_PROVENANCE_NAMES = {v: k for k, v in _PROVENANCE_CODES.items()}


def _kind_tag(kind: str) -> bytes:
    raw = kind.encode("ascii")
    if not 0 < len(raw) <= 8:
        raise ValueError(f"bad artifact kind {kind!r}")
    return raw.ljust(8, b"\x00")


def _write_container(path, kind: str, header: dict, payload: bytes) -> None:
    header = dict(header)
    header["payload_sha256"] = sha256_hex(payload)
    header_bytes = canonical_json(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_kind_tag(kind))
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def _read_container(path, kind: str) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 28 or blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a sartomo artifact file")
    actual_kind = blob[8:16].rstrip(b"\x00").decode("ascii")
    if actual_kind != kind:
        raise ValueError(f"{path}: artifact kind is '{actual_kind}', expected '{kind}'")
    (version,) = struct.unpack_from("<I", blob, 16)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    (hlen,) = struct.unpack_from("<Q", blob, 20)
    if 28 + hlen > len(blob):
        raise ValueError(f"{path}: truncated header")
    try:
        header = json.loads(blob[28 : 28 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: corrupt header ({exc})") from None
    payload = blob[28 + hlen :]
    if sha256_hex(payload) != header.get("payload_sha256"):
        raise ValueError(f"{path}: payload does not match its recorded hash")
    return header, payload


def read_header(path, kind: str | None = None) -> dict:
    """Header of any container artifact (payload integrity still verified)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        tag = fh.read(8)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a sartomo artifact file")
    actual = tag.rstrip(b"\x00").decode("ascii")
    header, _ = _read_container(path, kind if kind is not None else actual)
    return header


def _take(payload: bytes, offset: int, dtype: str, count: int) -> tuple[np.ndarray, int]:
    dt = np.dtype(dtype)
    end = offset + dt.itemsize * count
    if end > len(payload):
        raise ValueError("payload ended mid-record")
    return np.frombuffer(payload, dtype=dt, count=count, offset=offset), end


# --- steering / weights -----------------------------------------------------


def save_steering(path, R: SteeringMatrix, *, extra_header: dict | None = None) -> None:
    """Write a steering matrix: dims, geometry hash, row-major complex entries."""
    payload = np.ascontiguousarray(R.entries, dtype="<c16").tobytes()
    header = {
        "num_channels": R.num_channels,
        "num_positions": R.num_positions,
        "geometry_hash": R.geometry_hash,
        "payload_layout": "entries <c16 row-major [N, L]",
    }
    header.update(extra_header or {})
    _write_container(path, "steering", header, payload)


def load_steering(path) -> SteeringMatrix:
    header, payload = _read_container(path, "steering")
    n, l = int(header["num_channels"]), int(header["num_positions"])
    flat, end = _take(payload, 0, "<c16", n * l)
    if end != len(payload):
        raise ValueError(f"{path}: payload size does not match the recorded dims")
    return SteeringMatrix.from_entries(
        flat.reshape(n, l).astype(np.complex128), header["geometry_hash"]
    )


def save_weights(path, W: AnalyticWeights, *, extra_header: dict | None = None) -> None:
    payload = np.ascontiguousarray(W.entries, dtype="<c16").tobytes()
    header = {
        "num_channels": int(W.entries.shape[0]),
        "num_positions": int(W.entries.shape[1]),
        "steering_hash": W.steering_hash,
        "objective_value": W.objective_value,
        "constraint": "unit_diagonal",
        "payload_layout": "entries <c16 row-major [N, L]",
    }
    header.update(extra_header or {})
    _write_container(path, "weights", header, payload)


def load_weights(path, steering: SteeringMatrix | None = None) -> AnalyticWeights:
    """Load analytic weights; with `steering` given, re-verify the pairing.

    The checks repeat what the solver would silently rely on: the hash
    binding, the unit-diagonal constraint (1e-8), and the stored objective
    value against a recomputation of ||W^H R||_F^2 (1e-10 relative).
    """
    header, payload = _read_container(path, "weights")
    n, l = int(header["num_channels"]), int(header["num_positions"])
    flat, end = _take(payload, 0, "<c16", n * l)
    if end != len(payload):
        raise ValueError(f"{path}: payload size does not match the recorded dims")
    W = AnalyticWeights(
        flat.reshape(n, l).astype(np.complex128),
        header["steering_hash"],
        float(header["objective_value"]),
    )
    if steering is not None:
        if steering.geometry_hash != W.steering_hash:
            raise ValueError(
                f"{path}: weights were derived from a different steering matrix "
                f"(hash {W.steering_hash[:12]}... vs {steering.geometry_hash[:12]}...)"
            )
        if W.constraint_residual(steering) > 1e-8:
            raise ValueError(f"{path}: unit-diagonal constraint violated after load")
        objective = float(
            np.sum(np.abs(np.conj(W.entries.T) @ steering.entries) ** 2)
        )
        if abs(objective - W.objective_value) > 1e-10 * max(1.0, abs(objective)):
            raise ValueError(
                f"{path}: stored objective {W.objective_value!r} does not match "
                f"recomputation {objective!r}"
            )
    return W


# --- datasets ----------------------------------------------------------------

# Per-sample record: azimuth i32, range i32, provenance u8, snr f64,
# y as N c16 pairs, nnz u32, indices u32[nnz], values c16[nnz].


def save_dataset(path, dataset: SampleSet, *, extra_header: dict | None = None) -> None:
    provenances = {s.label_provenance for s in dataset.samples}
    labeling = provenances.pop().value if len(provenances) == 1 else "mixed"
    n_chan = dataset.samples[0].measurement.size if dataset.samples else 0
    n_pos = dataset.samples[0].label.size if dataset.samples else 0
    buf = bytearray()
    for s in dataset.samples:
        az, rg = s.pixel_coords
        code = _PROVENANCE_CODES[Labeling(s.label_provenance)]
        buf += struct.pack("<iiBd", az, rg, code, float(s.snr_db))
        buf += np.ascontiguousarray(s.measurement, dtype="<c16").tobytes()
        nz = np.flatnonzero(s.label)
        buf += struct.pack("<I", nz.size)
        buf += nz.astype("<u4").tobytes()
        buf += np.ascontiguousarray(s.label[nz], dtype="<c16").tobytes()
    header = {
        "num_samples": len(dataset),
        "num_channels": int(n_chan),
        "num_positions": int(n_pos),
        "geometry_hash": dataset.geometry_hash,
        "grid_hash": dataset.grid_hash,
        "labeling": labeling,
        "splits": {tag: list(map(int, idx)) for tag, idx in sorted(dataset.splits.items())},
        "payload_layout": "records of (az i32, rg i32, prov u8, snr f64, "
        "y c16[N], nnz u32, idx u32[nnz], val c16[nnz])",
    }
    header.update(extra_header or {})
    _write_container(path, "dataset", header, bytes(buf))


def load_dataset(path) -> SampleSet:
    header, payload = _read_container(path, "dataset")
    count = int(header["num_samples"])
    n_chan = int(header["num_channels"])
    n_pos = int(header["num_positions"])
    samples = []
    offset = 0
    for _ in range(count):
        az, rg, code, snr = struct.unpack_from("<iiBd", payload, offset)
        offset += struct.calcsize("<iiBd")
        y, offset = _take(payload, offset, "<c16", n_chan)
        (nnz,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        if nnz > n_pos:
            raise ValueError(f"{path}: record claims {nnz} nonzeros on a {n_pos} grid")
        idx, offset = _take(payload, offset, "<u4", nnz)
        val, offset = _take(payload, offset, "<c16", nnz)
        label = np.zeros(n_pos, dtype=np.complex128)
        label[idx.astype(int)] = val
        samples.append(
            PixelSample(
                measurement=y.astype(np.complex128),
                label=label,
                label_provenance=_PROVENANCE_NAMES[code],
                pixel_coords=(az, rg),
                snr_db=float(snr),
            )
        )
    if offset != len(payload):
        raise ValueError(f"{path}: {len(payload) - offset} trailing payload bytes")
    splits = {tag: tuple(idx) for tag, idx in header["splits"].items()}
    return SampleSet(tuple(samples), header["geometry_hash"], header["grid_hash"], splits)


# --- trained models ----------------------------------------------------------


def save_model(path, model: AlistaModel, *, extra_header: dict | None = None) -> None:
    """Model file: K/N/L + hashes in the header, then theta, eta, W payload."""
    W = model.weights
    payload = (
        np.ascontiguousarray(model.theta, dtype="<f8").tobytes()
        + np.ascontiguousarray(model.eta, dtype="<f8").tobytes()
        + np.ascontiguousarray(W.entries, dtype="<c16").tobytes()
    )
    header = {
        "layers": model.layers,
        "num_channels": int(W.entries.shape[0]),
        "num_positions": int(W.entries.shape[1]),
        "steering_hash": W.steering_hash,
        "objective_value": W.objective_value,
        "metadata": model.metadata,
        "payload_layout": "theta f8[K], eta f8[K], W <c16 row-major [N, L]",
    }
    header.update(extra_header or {})
    _write_container(path, "model", header, payload)


def load_model(path, steering: SteeringMatrix | None = None) -> AlistaModel:
    """Load a trained model; with `steering` given, validate the hash binding."""
    header, payload = _read_container(path, "model")
    k = int(header["layers"])
    n, l = int(header["num_channels"]), int(header["num_positions"])
    theta, offset = _take(payload, 0, "<f8", k)
    eta, offset = _take(payload, offset, "<f8", k)
    flat, offset = _take(payload, offset, "<c16", n * l)
    if offset != len(payload):
        raise ValueError(f"{path}: payload size does not match the recorded dims")
    weights = AnalyticWeights(
        flat.reshape(n, l).astype(np.complex128),
        header["steering_hash"],
        float(header["objective_value"]),
    )
    if steering is not None:
        if steering.geometry_hash != weights.steering_hash:
            raise ValueError(
                f"{path}: model was trained against a different steering matrix "
                f"(hash {weights.steering_hash[:12]}... vs "
                f"{steering.geometry_hash[:12]}...)"
            )
        if (steering.num_channels, steering.num_positions) != (n, l):
            raise ValueError(f"{path}: model dims do not match the steering matrix")
    return AlistaModel(
        weights, k, theta.astype(float), eta.astype(float), dict(header["metadata"])
    )


# --- per-pixel estimates -----------------------------------------------------


def save_estimates(
    path,
    coords,
    profiles,
    *,
    solver: str,
    geometry_hash: str,
    grid_hash: str,
    extra_header: dict | None = None,
) -> None:
    """Dense per-pixel profile estimates, one length-L row per coordinate."""
    prof = np.ascontiguousarray(profiles, dtype="<c16")
    coord_arr = np.ascontiguousarray([(int(a), int(r)) for a, r in coords], dtype="<i4")
    if prof.ndim != 2 or coord_arr.shape != (prof.shape[0], 2):
        raise ValueError("profiles must be [P, L] with one (az, rg) pair per row")
    header = {
        "num_pixels": int(prof.shape[0]),
        "num_positions": int(prof.shape[1]),
        "solver": solver,
        "geometry_hash": geometry_hash,
        "grid_hash": grid_hash,
        "payload_layout": "coords <i4 [P, 2], profiles <c16 row-major [P, L]",
    }
    header.update(extra_header or {})
    _write_container(path, "estimate", header, coord_arr.tobytes() + prof.tobytes())


def load_estimates(path) -> tuple[list, np.ndarray, dict]:
    """Returns (coords, profiles [P, L], header)."""
    header, payload = _read_container(path, "estimate")
    p, l = int(header["num_pixels"]), int(header["num_positions"])
    coords_flat, offset = _take(payload, 0, "<i4", 2 * p)
    prof, offset = _take(payload, offset, "<c16", p * l)
    if offset != len(payload):
        raise ValueError(f"{path}: payload size does not match the recorded dims")
    coords = [(int(a), int(r)) for a, r in coords_flat.reshape(p, 2)]
    return coords, prof.reshape(p, l).astype(np.complex128), header


# --- reports and manifests ---------------------------------------------------


def report_to_dict(report) -> dict:
    """Structured form of an NMSE or benchmark report for serialization."""
    if isinstance(report, NmseReport):
        return {
            "kind": "nmse_report",
            "solver": report.solver,
            "mode": report.mode,
            "sample_count": report.sample_count,
            "aggregate_ratio": report.aggregate_ratio,
            "aggregate_db": report.aggregate_db,
            "numerators": list(report.numerators),
            "denominators": list(report.denominators),
            "per_pixel_db": list(report.per_pixel_db),
        }
    if isinstance(report, BenchReport):
        return {
            "kind": "bench_report",
            "solver": report.solver,
            "pixels": report.pixels,
            "iteration_budget": report.iteration_budget,
            "repetitions": report.repetitions,
            "lanes": report.lanes,
            "total_wall_seconds": report.total_wall_seconds,
            "total_lane_seconds": report.total_lane_seconds,
            "per_pixel_mean_seconds": report.per_pixel_mean_seconds,
            "per_pixel_median_seconds": report.per_pixel_median_seconds,
        }
    raise TypeError(f"cannot serialize report of type {type(report).__name__}")


def save_report(path, report, *, extra: dict | None = None) -> None:
    doc = report_to_dict(report)
    doc.update(extra or {})
    save_json(path, doc)


def load_report(path) -> dict:
    return load_json(path)


def save_json(path, obj: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canonical_json(obj))
        fh.write("\n")


def load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# --- point clouds ------------------------------------------------------------


def _fmt(v: float) -> str:
    # repr of a Python float is the shortest round-trip form -> deterministic.
    return repr(float(v))


def write_xyz(path, cloud: PointCloud, *, comment: str | None = None) -> None:
    """ASCII XYZ: one 'x y z amplitude' line per detected scatterer."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        for x, y, z, a in cloud.points:
            fh.write(f"{_fmt(x)} {_fmt(y)} {_fmt(z)} {_fmt(a)}\n")


def write_ply(path, cloud: PointCloud, *, comment: str | None = None) -> None:
    """ASCII PLY with x/y/z plus an amplitude property."""
    lines = ["ply", "format ascii 1.0"]
    if comment:
        lines.append(f"comment {comment}")
    lines += [
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
        "property double amplitude",
        "end_header",
    ]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")
        for x, y, z, a in cloud.points:
            fh.write(f"{_fmt(x)} {_fmt(y)} {_fmt(z)} {_fmt(a)}\n")
