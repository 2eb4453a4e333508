import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poseadv.body import (
    BodyShape, CameraParams, Capsule, LightParams, PosedBody, PoseParams, capsule_uv, default_body,
    default_pose_bounds, load_body, pose_body, ray_alpha, render_iuv, rodrigues,
)
from poseadv.errors import ConfigError


def stick(radius=0.5, density=1.0, length=1.0):
    """One vertical capsule from the origin up +y."""
    return BodyShape([-1, 0], [[0, 0, 0], [0, length, 0]], [Capsule(0, 1, radius, 0, density, "bone")], ["p"])


def cross_body(density=3.0):
    """Two crossing capsules of different parts, symmetric about the z axis."""
    return BodyShape(
        [-1, 0, 0, 2],
        [[-0.5, -0.5, 0], [1, 1, 0], [1, 0, 0], [-1, 1, 0]],
        [Capsule(0, 1, 0.2, 0, density, "a"), Capsule(2, 3, 0.2, 1, density, "b")],
        ["a", "b"],
    )


# ---------------------------------------------------------------- kinematics

def test_zero_pose_gives_rest_positions_exactly():
    body = default_body()
    posed = pose_body(body, np.zeros(3 * body.n_joints))
    rest = body.rest_positions()
    assert np.array_equal(posed.joints, rest)
    assert np.array_equal(posed.a, rest[[c.joint for c in body.capsules]])
    assert np.array_equal(posed.b, rest[[c.child for c in body.capsules]])


def test_root_rotation_pi_about_z_negates_x_and_y():
    body = default_body()
    theta = np.zeros(3 * body.n_joints)
    theta[2] = np.pi
    p0 = pose_body(body, np.zeros_like(theta)).joints
    p1 = pose_body(body, theta).joints
    np.testing.assert_allclose(p1[:, :2], -p0[:, :2], atol=1e-12)
    np.testing.assert_allclose(p1[:, 2], p0[:, 2], atol=1e-12)


def test_two_link_elbow_bend_end_effector():
    # hand derivation: elbow at (0,1,0); Rz(90deg) maps the (0,1,0) forearm to (-1,0,0)
    body = BodyShape([-1, 0, 1], [[0, 0, 0], [0, 1, 0], [0, 1, 0]],
                     [Capsule(0, 1, 0.1, 0, 1.0), Capsule(1, 2, 0.1, 0, 1.0)], ["arm"])
    theta = np.zeros(9)
    theta[5] = np.pi / 2
    np.testing.assert_allclose(pose_body(body, theta).joints[2], [-1.0, 1.0, 0.0], atol=1e-12)


def test_rodrigues_is_a_rotation():
    rng = np.random.default_rng(0)
    R = rodrigues(rng.normal(size=(20, 3)))
    np.testing.assert_allclose(R @ np.swapaxes(R, -1, -2), np.broadcast_to(np.eye(3), R.shape), atol=1e-12)
    np.testing.assert_allclose(np.linalg.det(R), 1.0, atol=1e-12)
    np.testing.assert_allclose(rodrigues(np.array([0.0, 0.0, 1e-12])), np.eye(3), atol=1e-11)


def test_pose_dimension_mismatch():
    with pytest.raises(ConfigError):
        pose_body(default_body(), np.zeros(5))


# ---------------------------------------------------------------- ray alpha

def test_ray_missing_everything():
    m, contrib = ray_alpha(pose_body(stick(), np.zeros(6)), [5, 0.5, 5], [0, 0, -1.0], 0.01)
    assert m == 0.0 and contrib == {}


def test_chord_matches_exponential():
    # chord through a radius-0.5 cylinder at offset 0.2 from the axis
    x = 0.2
    chord = 2 * np.sqrt(0.25 - x * x)
    posed = pose_body(stick(density=5.0 / chord), np.zeros(6))
    m, contrib = ray_alpha(posed, [x, 0.5, 3.0], [0, 0, -1.0], chord / 100)
    expected = 1 - np.exp(-5.0)
    assert abs(m - expected) / expected < 0.01
    assert set(contrib) == {0} and contrib[0][0] == pytest.approx(1.0)


def test_symmetric_overlap_splits_weights_evenly():
    posed = pose_body(cross_body(), np.zeros(12))
    m, contrib = ray_alpha(posed, [0, 0, 3.0], [0, 0, -1.0], 0.005)
    assert m > 0
    assert contrib[0][0] == pytest.approx(0.5, abs=1e-3)
    assert contrib[1][0] == pytest.approx(0.5, abs=1e-3)


def test_ray_alpha_rejects_unnormalised_direction():
    with pytest.raises(ConfigError):
        ray_alpha(pose_body(stick(), np.zeros(6)), [0, 0, 3], [0, 0, -2.0], 0.01)


def test_mask_monotone_in_density():
    rng = np.random.default_rng(3)
    posed = pose_body(default_body(), np.zeros(51))
    for _ in range(10):
        o = rng.normal(size=3)
        o = 4 * o / np.linalg.norm(o)
        target = rng.normal(scale=0.2, size=3)
        d = (target - o) / np.linalg.norm(target - o)
        m1, _ = ray_alpha(posed, o, d)
        m2, _ = ray_alpha(posed.with_density(2 * posed.density), o, d)
        assert m2 >= m1


def test_step_halving_converges():
    posed = pose_body(default_body(), np.zeros(51))
    o, target = np.array([0.3, 0.2, 4.0]), np.array([0.01, 0.1, 0.0])
    d = (target - o) / np.linalg.norm(target - o)
    ms = [ray_alpha(posed, o, d, 0.05 / 2**k)[0] for k in range(4)]
    for k in range(2, 4):
        assert abs(ms[k] - ms[k - 1]) <= 4 * abs(ms[k - 1] - ms[k - 2]) + 1e-12


# ---------------------------------------------------------------- capsule uv

def test_capsule_uv_anchors():
    posed = pose_body(stick(), np.zeros(6))
    a, b, ref = posed.a[0], posed.b[0], posed.ref[0]
    assert capsule_uv(posed, 0, a + 0.5 * ref) == pytest.approx((0.0, 0.0), abs=1e-12)
    assert capsule_uv(posed, 0, b + 0.5 * ref)[1] == pytest.approx(1.0)
    assert capsule_uv(posed, 0, a - 0.5 * ref)[0] == pytest.approx(0.5)


def test_capsule_uv_zero_axis():
    p = pose_body(stick(), np.zeros(6))
    bad = PosedBody(p.a, p.a.copy(), p.radius, p.density, p.part, p.ref, p.binormal, p.n_parts, p.joints)
    with pytest.raises(ConfigError):
        capsule_uv(bad, 0, [0.1, 0, 0])


# ---------------------------------------------------------------- rendering

def test_camera_facing_away_sees_nothing():
    posed = pose_body(default_body(), np.zeros(51))
    cam = CameraParams(180.0, 0.0, 5.0, 16, 16, 30.0, target=(0.0, 0.0, 10.0))
    assert not np.any(render_iuv(posed, cam).mask)


def test_thick_capsule_centre_pixel_opaque():
    body = BodyShape([-1, 0], [[0, -0.5, 0], [0, 1, 0]], [Capsule(0, 1, 0.4, 0, 7.0)], ["p"])
    posed = pose_body(body, np.zeros(6))
    iuv = render_iuv(posed, CameraParams(0.0, 0.0, 4.0, 33, 33, 30.0))
    assert iuv.mask[16, 16] >= 0.99


def test_side_views_mirror():
    posed = pose_body(default_body(), np.zeros(51))
    c = tuple(default_body().bounding_sphere()[0])
    left = render_iuv(posed, CameraParams(90.0, 10.0, 4.5, 32, 32, 30.0, c)).mask
    right = render_iuv(posed, CameraParams(-90.0, 10.0, 4.5, 32, 32, 30.0, c)).mask
    np.testing.assert_allclose(left, right[:, ::-1], atol=1e-6)


def test_render_is_deterministic():
    posed = pose_body(default_body(), np.random.default_rng(1).uniform(-0.3, 0.3, 51))
    cam = CameraParams(33.0, 12.0, 4.5, 32, 32, 30.0, tuple(default_body().bounding_sphere()[0]))
    a, b = render_iuv(posed, cam), render_iuv(posed, cam)
    for f in ("mask", "weights", "u", "v"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_camera_inside_body_rejected():
    with pytest.raises(ConfigError):
        render_iuv(pose_body(default_body(), np.zeros(51)), CameraParams(0.0, 0.0, 0.3))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), az=st.floats(-180, 180), el=st.floats(0, 30))
def test_iuv_invariants(seed, az, el):
    body = default_body()
    lo, hi = default_pose_bounds(body.n_joints)
    theta = np.random.default_rng(seed).uniform(0.5 * lo, 0.5 * hi)
    iuv = render_iuv(pose_body(body, theta), CameraParams(az, el, 4.5, 24, 24, 30.0, tuple(body.bounding_sphere()[0])))
    m, w = iuv.mask, iuv.weights
    assert np.all((m >= 0) & (m <= 1))
    assert np.array_equal(m > 0, np.any(w > 0, axis=-1))
    np.testing.assert_allclose(w.sum(-1)[m > 0], 1.0, atol=1e-6)
    assert np.all((iuv.u >= 0) & (iuv.u <= 1) & (iuv.v >= 0) & (iuv.v <= 1))
    if m.any():
        r, c = np.argwhere(m > 0)[0]
        assert sum(p for _, p, _, _ in iuv.contributions(r, c)) == pytest.approx(1.0)


# ---------------------------------------------------------------- types and files

def test_default_body_layout():
    body = default_body()
    assert body.n_joints == 17 and body.n_parts == 10
    assert set(c.part for c in body.capsules) == set(range(10))


def test_body_json_round_trip(tmp_path):
    body = default_body()
    path = tmp_path / "body.json"
    path.write_text(json.dumps(body.to_dict()))
    again = load_body(path)
    assert again.to_dict() == body.to_dict()


@pytest.mark.parametrize("mutate", [
    lambda d: d["joints"][3].update(parent=5),
    lambda d: d["capsules"][0].update(radius=0.0),
    lambda d: d["capsules"][0].update(part=99),
    lambda d: d["capsules"].pop(),
])
def test_body_validation(tmp_path, mutate):
    d = default_body().to_dict()
    mutate(d)
    # popping the last capsule removes the only shin of one side
    with pytest.raises(ConfigError):
        BodyShape.from_dict(d)


def test_pose_and_light_validation():
    lo, hi = default_pose_bounds(2)
    assert PoseParams(np.zeros(6), lo, hi).inside()
    assert not PoseParams(hi.copy(), lo, hi).inside()
    with pytest.raises(ConfigError):
        PoseParams(np.zeros(6), hi, lo)
    with pytest.raises(ConfigError):
        LightParams((1.0, 1.0, 0.0))
    with pytest.raises(ConfigError):
        CameraParams(0.0, 0.0, -1.0)
