"""Phantom volume, slicing, standard planes, trajectories."""

import logging
import math

import numpy as np
import pytest

from echoworld.phantom import (
    Ellipsoid,
    ImageSpec,
    PhantomConfig,
    PhantomError,
    ScanGenerationError,
    TrajectoryConfig,
    build_phantom,
    generate_scan,
    plane_points,
    pose_separation,
    quantize_image,
    slice_image,
    standard_plane_poses,
)
from echoworld.phantom.slicing import _trilinear_numpy, sample_volume
from echoworld.phantom.volume import Phantom, rasterize_structures
from echoworld.pose_algebra import Pose, pose_from_rotation, relative
from echoworld.scan_store import PLANE_IDS


def test_build_deterministic(phantom):
    again = build_phantom(PhantomConfig(), seed=0)
    assert np.array_equal(phantom.volume, again.volume)
    assert np.array_equal(phantom.labels, again.labels)


def test_build_seed_changes_volume(phantom):
    other = build_phantom(PhantomConfig(), seed=1)
    assert (phantom.volume != other.volume).mean() >= 0.01


def test_build_rejects_small_resolution():
    with pytest.raises(PhantomError, match="resolution"):
        build_phantom(PhantomConfig(resolution=16), seed=0)


def test_build_rejects_empty_structures():
    with pytest.raises(PhantomError):
        build_phantom(PhantomConfig(structures=()), seed=0)


def test_build_rejects_degenerate_histogram():
    # a single tiny structure barely changes the constant background
    structs = (Ellipsoid((0, 0, 0), (2, 2, 2), intensity=0.3),) * 6
    with pytest.raises(PhantomError, match="histogram"):
        build_phantom(PhantomConfig(structures=structs), seed=0)


def test_volume_intensities_in_unit_range(phantom):
    assert phantom.volume.min() >= 0.0
    assert phantom.volume.max() <= 1.0
    assert phantom.volume.std() > 0.05


def _sphere_phantom(radius=40.0, resolution=128) -> Phantom:
    config = PhantomConfig(
        resolution=resolution,
        base_intensity=0.0,
        smooth_sigma_vox=0.0,
        structures=(Ellipsoid((0, 0, 0), (radius,) * 3, intensity=1.0),),
    )
    volume, labels = rasterize_structures(config, config.structures)
    return Phantom(
        volume=volume,
        labels=labels,
        extent_mm=config.extent_mm,
        structures=config.structures,
        seed=0,
        config=config,
    )


def test_slice_matches_analytic_cross_section():
    radius = 40.0
    ph = _sphere_phantom(radius)
    spec = ImageSpec(height=128, width=128, extent_mm=160.0, noise=0.0)
    # plane offset d from the center cuts a disc of radius sqrt(r^2 - d^2)
    for d in (0.0, 20.0, 30.0):
        pose = Pose(0.0, 0.0, d)
        img = slice_image(ph, pose, spec)
        px_mm = spec.extent_mm / spec.width
        expected_r = math.sqrt(radius**2 - d**2)
        area = float((img > 0.5).sum())
        measured_r = math.sqrt(area / math.pi) * px_mm
        assert abs(measured_r - expected_r) <= ph.voxel_mm


def test_slice_noise_free_is_deterministic(phantom, plane_poses):
    spec = ImageSpec(noise=0.0)
    a = slice_image(phantom, plane_poses["A4C"], spec)
    b = slice_image(phantom, plane_poses["A4C"], spec)
    assert np.array_equal(a, b)


def test_slice_noise_per_call_seed(phantom, plane_poses):
    spec = ImageSpec(noise=0.3)
    a = slice_image(phantom, plane_poses["A4C"], spec, noise_seed=1)
    b = slice_image(phantom, plane_poses["A4C"], spec, noise_seed=1)
    c = slice_image(phantom, plane_poses["A4C"], spec, noise_seed=2)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_slice_outside_volume_returns_zeros_and_warns(phantom, caplog):
    spec = ImageSpec(noise=0.0)
    pose = Pose(500.0, 0.0, 0.0)
    with caplog.at_level(logging.WARNING):
        img, ok = slice_image(phantom, pose, spec, with_flag=True)
    assert not ok
    assert img.sum() == 0.0
    assert any("outside" in rec.message for rec in caplog.records)


def test_slice_mirror_symmetry():
    ph = _sphere_phantom()
    spec = ImageSpec(height=64, width=64, extent_mm=120.0, noise=0.0)
    pose = Pose(6.0, 3.0, 5.0, yaw=25.0, pitch=0.0, roll=10.0)
    img = slice_image(ph, pose, spec)
    # mirror across x=0: R' = M R diag(-1,1,1), origin' = M origin
    mirror = np.diag([-1.0, 1.0, 1.0])
    r2 = mirror @ pose.rotation() @ np.diag([-1.0, 1.0, 1.0])
    pose2 = pose_from_rotation(r2, mirror @ pose.translation)
    img2 = slice_image(ph, pose2, spec)
    assert np.allclose(img2, img[:, ::-1], atol=1e-6)


def test_sampling_backends_bit_identical(phantom, plane_poses):
    spec = ImageSpec(noise=0.0)
    pts = phantom.world_to_voxel(plane_points(plane_poses["PLAX"], spec))
    pts = np.ascontiguousarray(pts.reshape(-1, 3), dtype=np.float64)
    jit_out = sample_volume(phantom.volume, pts)
    np_out = np.empty(pts.shape[0], dtype=np.float64)
    _trilinear_numpy(np.ascontiguousarray(phantom.volume, np.float32), pts, np_out)
    assert np.array_equal(jit_out, np_out)


def test_quantize_image_roundtrip_range():
    img = np.linspace(0, 1, 64, dtype=np.float32).reshape(8, 8)
    q = quantize_image(img)
    assert q.dtype == np.uint8
    assert q.min() == 0 and q.max() == 255


# ---------------------------------------------------------------------------
# standard planes


def test_standard_planes_ids_and_count(plane_poses):
    assert set(plane_poses) == set(PLANE_IDS)
    assert len(plane_poses) == 10


def test_standard_planes_pairwise_separation(plane_poses):
    ids = list(plane_poses)
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            trans, rot = pose_separation(plane_poses[ids[i]], plane_poses[ids[j]])
            assert trans >= 5.0 or rot >= 10.0, (ids[i], ids[j], trans, rot)


def test_standard_planes_deterministic(phantom):
    a = standard_plane_poses(phantom)
    b = standard_plane_poses(build_phantom(PhantomConfig(), seed=0))
    for plane in PLANE_IDS:
        assert np.array_equal(a[plane].to_vector(), b[plane].to_vector())


def test_standard_planes_require_layout():
    ph = _sphere_phantom()
    with pytest.raises(PhantomError, match="layout"):
        standard_plane_poses(ph)


def test_standard_planes_low_pitch(plane_poses):
    for pose in plane_poses.values():
        assert abs(pose.pitch) <= 80.0


# ---------------------------------------------------------------------------
# trajectories


def test_generate_scan_hits_planes_exactly(phantom, plane_poses, image_spec):
    scan = generate_scan(phantom, TrajectoryConfig(seed=3), image_spec)
    assert set(scan.annotations) == set(PLANE_IDS)
    for plane, s_k in scan.annotations.items():
        idx = scan.index_of(s_k)
        assert np.array_equal(scan.poses[idx], plane_poses[plane].to_vector())


def test_generate_scan_velocity_bounds(phantom, image_spec):
    scan = generate_scan(phantom, TrajectoryConfig(seed=4), image_spec)
    for i in range(scan.n_frames - 1):
        m = relative(scan.pose_at(i + 1), scan.pose_at(i))
        assert np.linalg.norm(m.translation) <= 5.0
        assert max(abs(m.yaw), abs(m.pitch), abs(m.roll)) <= 5.0


def test_generate_scan_pitch_limited(phantom, image_spec):
    scan = generate_scan(phantom, TrajectoryConfig(seed=5), image_spec)
    assert np.abs(scan.poses[:, 4]).max() <= 80.0


def test_generate_scan_rejects_short_duration(phantom, image_spec):
    with pytest.raises(ScanGenerationError, match="too short"):
        generate_scan(
            phantom, TrajectoryConfig(duration=50, smoothing_window=9), image_spec
        )


def test_trajectory_config_validates():
    with pytest.raises(ValueError, match="permutation"):
        TrajectoryConfig(visit_order=("PLAX",) * 10)
    with pytest.raises(ValueError, match="non-negative"):
        TrajectoryConfig(jitter_trans_mm=(-1.0, 0.0, 0.0))


def test_jitter_monotonicity(phantom, image_spec):
    """Raising jitter scales does not lower the mean per-frame movement."""

    def mean_motion(scale: float) -> float:
        total = 0.0
        for seed in range(20):
            traj = TrajectoryConfig(
                duration=120,
                jitter_trans_mm=(scale,) * 3,
                jitter_rot_deg=(scale,) * 3,
                seed=seed,
            )
            scan = generate_scan(phantom, traj, image_spec)
            steps = np.diff(scan.poses[:, :3], axis=0)
            total += float(np.linalg.norm(steps, axis=1).mean())
        return total / 20

    assert mean_motion(2.0) >= mean_motion(0.5)


def test_generate_scan_deterministic(phantom, image_spec):
    a = generate_scan(phantom, TrajectoryConfig(seed=6), image_spec)
    b = generate_scan(phantom, TrajectoryConfig(seed=6), image_spec)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.poses, b.poses)
