import json

import numpy as np
import pytest

from sartomo.alista import AlistaModel, TrainConfig, compute_analytic_weights, train
from sartomo.evaluate import PointCloud, benchmark, nmse_db
from sartomo.fileio import (
    load_dataset,
    load_estimates,
    load_model,
    load_report,
    load_steering,
    load_weights,
    read_header,
    save_dataset,
    save_estimates,
    save_model,
    save_report,
    save_steering,
    save_weights,
    write_ply,
    write_xyz,
)
from sartomo.model import (
    AcquisitionGeometry,
    ElevationGrid,
    SteeringMatrix,
    build_steering_matrix,
)
from sartomo.scene import Labeling, SceneSpec, build_sample_set, generate_scene


def table1_geometry():
    return AcquisitionGeometry(
        baselines=np.arange(8) * 0.1,
        wavelength=0.003125,
        slant_range=400.0,
        look_angle=45.0,
    )


def small_grid(positions=16):
    return ElevationGrid.regular(-1.0, -1.0 + 6.25 * (positions - 1) / positions, positions)


def small_dataset(seed=3):
    geometry, grid = table1_geometry(), small_grid()
    spec = SceneSpec(
        azimuth_extent=10, range_extent=4, building_height=3.0, random_seed=5
    )
    scene = generate_scene(spec, grid)
    return build_sample_set(scene, geometry, grid, 20.0, Labeling.GROUND_TRUTH, seed=seed)


# ---------------------------------------------------------------------------
# container framing


def test_steering_round_trip(tmp_path):
    R = build_steering_matrix(table1_geometry(), small_grid())
    path = tmp_path / "steering.bin"
    save_steering(path, R)
    loaded = load_steering(path)
    np.testing.assert_array_equal(loaded.entries, R.entries)
    assert loaded.geometry_hash == R.geometry_hash


def test_save_is_byte_deterministic(tmp_path):
    R = build_steering_matrix(table1_geometry(), small_grid())
    save_steering(tmp_path / "a.bin", R)
    save_steering(tmp_path / "b.bin", R)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_kind_mismatch_rejected(tmp_path):
    R = build_steering_matrix(table1_geometry(), small_grid())
    path = tmp_path / "steering.bin"
    save_steering(path, R)
    with pytest.raises(ValueError, match="kind"):
        load_weights(path)


def test_non_artifact_file_rejected(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not an artifact at all, sorry")
    with pytest.raises(ValueError, match="not a sartomo artifact"):
        load_steering(path)


def test_corrupted_payload_rejected(tmp_path):
    R = build_steering_matrix(table1_geometry(), small_grid())
    path = tmp_path / "steering.bin"
    save_steering(path, R)
    blob = bytearray(path.read_bytes())
    blob[-1] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="hash"):
        load_steering(path)


def test_read_header_exposes_dims(tmp_path):
    R = build_steering_matrix(table1_geometry(), small_grid())
    path = tmp_path / "steering.bin"
    save_steering(path, R, extra_header={"config_hash": "abc123"})
    header = read_header(path)
    assert header["num_channels"] == 8
    assert header["num_positions"] == 16
    assert header["config_hash"] == "abc123"
    with pytest.raises(ValueError, match="kind"):
        read_header(path, "dataset")


# ---------------------------------------------------------------------------
# weights


def test_weights_round_trip_validates_against_steering(tmp_path):
    R = build_steering_matrix(table1_geometry(), small_grid())
    W = compute_analytic_weights(R)
    path = tmp_path / "weights.bin"
    save_weights(path, W)
    loaded = load_weights(path, steering=R)
    np.testing.assert_array_equal(loaded.entries, W.entries)
    assert loaded.objective_value == W.objective_value


def test_weights_refuse_foreign_steering(tmp_path):
    R = build_steering_matrix(table1_geometry(), small_grid())
    other = build_steering_matrix(table1_geometry(), small_grid(32))
    path = tmp_path / "weights.bin"
    save_weights(path, compute_analytic_weights(R))
    with pytest.raises(ValueError, match="different steering"):
        load_weights(path, steering=other)


def test_weights_objective_recomputation_guard(tmp_path):
    R = build_steering_matrix(table1_geometry(), small_grid())
    W = compute_analytic_weights(R)
    from sartomo.alista import AnalyticWeights

    tampered = AnalyticWeights(W.entries, W.steering_hash, W.objective_value + 1e-3)
    path = tmp_path / "weights.bin"
    save_weights(path, tampered)
    with pytest.raises(ValueError, match="objective"):
        load_weights(path, steering=R)
    assert load_weights(path) is not None  # without R there is nothing to check


# ---------------------------------------------------------------------------
# datasets


def test_dataset_round_trip(tmp_path):
    ds = small_dataset()
    path = tmp_path / "dataset.bin"
    save_dataset(path, ds, extra_header={"config_hash": "deadbeef"})
    loaded = load_dataset(path)
    assert len(loaded) == len(ds)
    assert loaded.geometry_hash == ds.geometry_hash
    assert loaded.grid_hash == ds.grid_hash
    assert {t: tuple(i) for t, i in loaded.splits.items()} == {
        t: tuple(i) for t, i in ds.splits.items()
    }
    for a, b in zip(loaded.samples, ds.samples):
        np.testing.assert_array_equal(a.measurement, b.measurement)
        np.testing.assert_array_equal(a.label, b.label)
        assert a.pixel_coords == b.pixel_coords
        assert a.label_provenance == b.label_provenance
        assert a.snr_db == b.snr_db
    assert read_header(path)["labeling"] == "ground_truth"


def test_dataset_payload_scales_with_nonzeros(tmp_path):
    # labels are stored as (index, value) pairs, so the payload size is exact
    import struct

    ds = small_dataset()
    path = tmp_path / "dataset.bin"
    save_dataset(path, ds)
    blob = path.read_bytes()
    (header_len,) = struct.unpack_from("<Q", blob, 20)
    payload_len = len(blob) - 28 - header_len
    nnz = sum(int(np.count_nonzero(s.label)) for s in ds.samples)
    assert payload_len == len(ds) * (8 + 1 + 8 + 8 * 16 + 4) + nnz * (4 + 16)


# ---------------------------------------------------------------------------
# models


def test_model_round_trip_and_hash_binding(tmp_path):
    R = build_steering_matrix(table1_geometry(), small_grid())
    ds = small_dataset()
    model = train(ds, R, 3, TrainConfig(epochs=2, seed=1))
    path = tmp_path / "model.bin"
    save_model(path, model)
    loaded = load_model(path, steering=R)
    np.testing.assert_array_equal(loaded.theta, model.theta)
    np.testing.assert_array_equal(loaded.eta, model.eta)
    np.testing.assert_array_equal(loaded.weights.entries, model.weights.entries)
    assert loaded.layers == model.layers
    assert loaded.metadata == json.loads(json.dumps(model.metadata))
    other = build_steering_matrix(table1_geometry(), small_grid(32))
    with pytest.raises(ValueError, match="different steering"):
        load_model(path, steering=other)


# ---------------------------------------------------------------------------
# estimates, reports, point clouds


def test_estimates_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    profiles = rng.standard_normal((5, 16)) + 1j * rng.standard_normal((5, 16))
    coords = [(i, 2 * i) for i in range(5)]
    path = tmp_path / "estimates.bin"
    save_estimates(
        path, coords, profiles, solver="omp", geometry_hash="g", grid_hash="h"
    )
    got_coords, got_profiles, header = load_estimates(path)
    assert got_coords == coords
    np.testing.assert_array_equal(got_profiles, profiles)
    assert header["solver"] == "omp"


def test_nmse_report_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    truths = [rng.standard_normal(8) + 1j * rng.standard_normal(8) for _ in range(3)]
    report = nmse_db([t * 1.1 for t in truths], truths, solver="ista")
    path = tmp_path / "report.json"
    save_report(path, report, extra={"config_hash": "c0ffee"})
    doc = load_report(path)
    assert doc["kind"] == "nmse_report"
    assert doc["solver"] == "ista"
    assert doc["aggregate_db"] == report.aggregate_db
    assert doc["config_hash"] == "c0ffee"
    assert len(doc["per_pixel_db"]) == 3


def test_bench_report_round_trip(tmp_path):
    ys = [np.ones(4, dtype=complex)] * 6
    report = benchmark("noop", lambda y: y, ys, iteration_budget=1)
    path = tmp_path / "bench.json"
    save_report(path, report)
    doc = load_report(path)
    assert doc["kind"] == "bench_report"
    assert doc["pixels"] == 6


def test_xyz_and_ply_output(tmp_path):
    cloud = PointCloud(np.array([[1.0, 2.0, 3.0, 0.5], [4.0, 5.5, 6.0, 2.0]]), 0.1)
    xyz, ply = tmp_path / "c.xyz", tmp_path / "c.ply"
    write_xyz(xyz, cloud, comment="config_hash f00")
    write_ply(ply, cloud, comment="config_hash f00")
    xyz_lines = xyz.read_text().splitlines()
    assert xyz_lines[0] == "# config_hash f00"
    assert xyz_lines[1] == "1.0 2.0 3.0 0.5"
    assert len(xyz_lines) == 3
    ply_lines = ply.read_text().splitlines()
    assert ply_lines[0] == "ply"
    assert "comment config_hash f00" in ply_lines
    assert f"element vertex {len(cloud)}" in ply_lines
    assert ply_lines.index("end_header") == len(ply_lines) - 3
    assert ply_lines[-1] == "4.0 5.5 6.0 2.0"


def test_empty_cloud_exports(tmp_path):
    cloud = PointCloud(np.empty((0, 4)), 0.1)
    write_xyz(tmp_path / "e.xyz", cloud)
    write_ply(tmp_path / "e.ply", cloud)
    assert (tmp_path / "e.xyz").read_text() == ""
    assert "element vertex 0" in (tmp_path / "e.ply").read_text()
