"""Pose arithmetic against an independent homogeneous-matrix oracle.

The oracle builds and multiplies 4x4 matrices with plain Python floats and
loops, sharing no code with the library path.
"""

import math

import numpy as np
import pytest

from echoworld.pose_algebra import (
    Pose,
    batch_guidance_targets,
    compose,
    guidance_target,
    inverse,
    is_near_gimbal,
    pairwise_relative_vectors,
    pose_error,
    relative,
    wrap_angle,
    wrap_angles,
)

# ---------------------------------------------------------------------------
# oracle: homogeneous matrices from scratch


def oracle_matrix(pose: Pose) -> list[list[float]]:
    cy, sy = math.cos(math.radians(pose.yaw)), math.sin(math.radians(pose.yaw))
    cp, sp = math.cos(math.radians(pose.pitch)), math.sin(math.radians(pose.pitch))
    cr, sr = math.cos(math.radians(pose.roll)), math.sin(math.radians(pose.roll))
    rz = [[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]]
    ry = [[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]]
    rx = [[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]]

    def mat3(a, b):
        return [
            [sum(a[i][k] * b[k][j] for k in range(3)) for j in range(3)]
            for i in range(3)
        ]

    r = mat3(mat3(rz, ry), rx)
    return [
        [r[0][0], r[0][1], r[0][2], pose.x],
        [r[1][0], r[1][1], r[1][2], pose.y],
        [r[2][0], r[2][1], r[2][2], pose.z],
        [0.0, 0.0, 0.0, 1.0],
    ]


def oracle_matmul(a, b):
    return [
        [sum(a[i][k] * b[k][j] for k in range(4)) for j in range(4)]
        for i in range(4)
    ]


def oracle_inverse(m):
    rt = [[m[j][i] for j in range(3)] for i in range(3)]
    t = [
        -sum(rt[i][k] * m[k][3] for k in range(3))
        for i in range(3)
    ]
    return [
        [rt[0][0], rt[0][1], rt[0][2], t[0]],
        [rt[1][0], rt[1][1], rt[1][2], t[1]],
        [rt[2][0], rt[2][1], rt[2][2], t[2]],
        [0.0, 0.0, 0.0, 1.0],
    ]


def random_pose(rng, max_pitch=85.0) -> Pose:
    return Pose(
        *rng.uniform(-100, 100, 3),
        yaw=rng.uniform(-179.9, 179.9),
        pitch=rng.uniform(-max_pitch, max_pitch),
        roll=rng.uniform(-179.9, 179.9),
    )


# ---------------------------------------------------------------------------


def test_wrap_angle_cases():
    assert wrap_angle(180.0) == 180.0
    assert wrap_angle(-180.0) == 180.0
    assert wrap_angle(190.0) == pytest.approx(-170.0)
    assert wrap_angle(-190.0) == pytest.approx(170.0)
    assert wrap_angle(0.0) == 0.0
    arr = wrap_angles(np.array([180.0, -180.0, 540.0, -360.0]))
    assert np.allclose(arr, [180.0, 180.0, 180.0, 0.0])


def test_pose_constructor_wraps():
    p = Pose(0, 0, 0, 270.0, 0, -540.0)
    assert p.yaw == pytest.approx(-90.0)
    assert p.roll == pytest.approx(180.0)


def test_compose_identity_and_translation():
    q = Pose(4, 5, 6, -20, 10, 70)
    assert np.allclose(compose(Pose.identity(), q).to_vector(), q.to_vector(), atol=1e-12)
    a = Pose(1, 2, 3)
    b = Pose(4, 5, 6)
    assert np.allclose(compose(a, b).to_vector(), [5, 7, 9, 0, 0, 0], atol=1e-12)


def test_compose_single_axis_rotation_adds():
    a = Pose(yaw=90.0)
    assert compose(a, a).yaw == pytest.approx(180.0, abs=1e-9)


def test_compose_against_matrix_oracle():
    rng = np.random.default_rng(7)
    for _ in range(200):
        p, q = random_pose(rng), random_pose(rng)
        got = compose(p, q).to_matrix()
        want = np.array(oracle_matmul(oracle_matrix(p), oracle_matrix(q)))
        assert np.allclose(got, want, atol=1e-9)


def test_inverse_cases_and_oracle():
    assert np.allclose(inverse(Pose.identity()).to_vector(), np.zeros(6), atol=0)
    assert np.allclose(inverse(Pose(1, 0, 0)).to_vector(), [-1, 0, 0, 0, 0, 0], atol=1e-12)
    rng = np.random.default_rng(8)
    for _ in range(200):
        p = random_pose(rng)
        left = compose(inverse(p), p).to_matrix()
        assert np.allclose(left, np.eye(4), atol=1e-9)
        want = np.array(oracle_inverse(oracle_matrix(p)))
        assert np.allclose(inverse(p).to_matrix(), want, atol=1e-9)


def test_relative_definition_and_antisymmetry():
    rng = np.random.default_rng(9)
    for _ in range(100):
        a, b = random_pose(rng), random_pose(rng)
        rel = relative(a, b)
        assert np.allclose(compose(rel, b).to_matrix(), a.to_matrix(), atol=1e-9)
        assert np.allclose(relative(a, a).to_vector(), np.zeros(6), atol=1e-9)
        inv_rel = inverse(relative(b, a))
        assert np.allclose(rel.to_matrix(), inv_rel.to_matrix(), atol=1e-9)


def test_guidance_target_matches_relative():
    rng = np.random.default_rng(10)
    for _ in range(100):
        p_star, p_t = random_pose(rng), random_pose(rng)
        tgt = guidance_target(p_star, p_t)
        assert np.allclose(tgt.to_vector(), relative(p_star, p_t).to_vector(), atol=0)
        assert np.allclose(compose(tgt, p_t).to_matrix(), p_star.to_matrix(), atol=1e-9)
    p = random_pose(rng)
    assert np.allclose(guidance_target(p, p).to_vector(), np.zeros(6), atol=1e-9)
    t10 = guidance_target(Pose(10, 0, 0), Pose.identity())
    assert np.allclose(t10.to_vector(), [10, 0, 0, 0, 0, 0], atol=1e-12)


def test_associativity():
    rng = np.random.default_rng(11)
    for _ in range(200):
        a, b, c = (random_pose(rng) for _ in range(3))
        left = compose(compose(a, b), c).to_matrix()
        right = compose(a, compose(b, c)).to_matrix()
        assert np.allclose(left, right, atol=1e-8)


def test_roundtrip_matrix_euler():
    rng = np.random.default_rng(12)
    for _ in range(300):
        p = random_pose(rng, max_pitch=88.9)
        back = Pose.from_matrix(p.to_matrix())
        assert np.allclose(back.to_vector(), p.to_vector(), atol=1e-9)


def test_returned_angles_always_wrapped():
    rng = np.random.default_rng(13)
    for _ in range(100):
        p = compose(random_pose(rng), random_pose(rng))
        for angle in (p.yaw, p.pitch, p.roll):
            assert -180.0 < angle <= 180.0


def test_gimbal_tiebreak_roll_zero():
    p = Pose(0, 0, 0, 30.0, 90.0, 25.0)
    back = Pose.from_matrix(p.to_matrix())
    assert back.roll == 0.0
    assert back.pitch == pytest.approx(90.0)
    # the recovered pose still represents the same rotation
    assert np.allclose(back.to_matrix(), p.to_matrix(), atol=1e-9)
    assert is_near_gimbal(back)
    assert not is_near_gimbal(Pose(pitch=45.0))


def test_pose_error_cases():
    p = Pose(1, 2, 3, 10, 20, 30)
    assert pose_error(p, p) == (0.0, 0.0)
    a, b = Pose(yaw=179.0), Pose(yaw=-179.0)
    trans, rot = pose_error(a, b)
    assert trans == 0.0
    assert rot == pytest.approx(2.0 / 3.0)


def test_pose_error_against_scalar_loop():
    rng = np.random.default_rng(14)
    for _ in range(100):
        a, b = random_pose(rng), random_pose(rng)
        trans, rot = pose_error(a, b)
        va, vb = a.to_vector(), b.to_vector()
        want_t = sum(abs(va[i] - vb[i]) for i in range(3)) / 3.0
        diffs = []
        for i in range(3, 6):
            d = math.fmod(va[i] - vb[i] + 180.0, 360.0)
            if d <= 0:
                d += 360.0
            diffs.append(abs(d - 180.0))
        want_r = sum(diffs) / 3.0
        assert trans == pytest.approx(want_t, abs=1e-12)
        assert rot == pytest.approx(want_r, abs=1e-12)


def test_from_matrix_rejects_bad_input():
    with pytest.raises(ValueError):
        Pose.from_matrix(np.zeros((4, 4)))
    m = np.eye(4)
    m[0, 0] = 2.0
    with pytest.raises(ValueError):
        Pose.from_matrix(m)


def test_batched_helpers_match_scalar():
    rng = np.random.default_rng(15)
    vecs = np.stack([random_pose(rng).to_vector() for _ in range(7)])
    pw = pairwise_relative_vectors(vecs)
    for i in range(7):
        for j in range(7):
            ref = relative(Pose.from_vector(vecs[j]), Pose.from_vector(vecs[i]))
            assert np.allclose(pw[i, j], ref.to_vector(), atol=1e-9)
    targets = batch_guidance_targets(vecs[:4], vecs[6])
    for k in range(4):
        ref = guidance_target(Pose.from_vector(vecs[k]), Pose.from_vector(vecs[6]))
        assert np.allclose(targets[k], ref.to_vector(), atol=1e-9)
