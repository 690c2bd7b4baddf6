import numpy as np
import pytest

from graspbo import hand as H
from graspbo.contact import ContactPoint
from graspbo.exceptions import EmptyContacts, JointLimit
from graspbo.geom import Pose6, axis_angle_quat, sdf
from graspbo.hand import (HandModel, JointConfig, close_fingers, fingertip_poses,
                          hand_jacobian, link_collision_count, link_frames)

from conftest import sphere

HAND = HandModel()


def random_pose(rng):
    return Pose6(rng.uniform(-0.5, 0.5, 3), rng.standard_normal(4))


def random_q(rng, hand=HAND):
    return JointConfig(rng.uniform(0, 1, 6) * hand.limits())


def test_finger_size_invariant():
    assert HAND.finger_size == pytest.approx(HAND.proximal_length + HAND.distal_length
                                             + HAND.fingertip_radius)
    with pytest.raises(ValueError):
        HandModel(q_max=(3.5, 1.0))
    with pytest.raises(ValueError):
        HandModel(proximal_length=0.0)


def test_open_hand_tips_hand_computed():
    tips = fingertip_poses(HAND, Pose6(), JointConfig())
    L = HAND.proximal_length + HAND.distal_length
    for phi, t in zip(HAND.finger_angles, tips):
        u = np.array([np.cos(phi), np.sin(phi), 0.0])
        base = HAND.base_radius * u + np.array([0, 0, HAND.palm_radius])
        expected = base + L * (np.sin(HAND.splay) * u + np.cos(HAND.splay) * np.array([0, 0, 1]))
        assert np.allclose(t.position, expected, atol=1e-12)


def test_fk_equivariance(rng):
    q = random_q(rng)
    ref = [t.position for t in fingertip_poses(HAND, Pose6(), q)]
    shift = np.array([0.3, -0.2, 0.7])
    moved = fingertip_poses(HAND, Pose6(shift), q)
    for a, b in zip(ref, moved):
        assert np.allclose(b.position, a + shift, atol=1e-12)
    R = Pose6(np.zeros(3), rng.standard_normal(4))
    rotated = fingertip_poses(HAND, R, q)
    for a, b in zip(ref, rotated):
        assert np.allclose(b.position, R.rotation @ a, atol=1e-12)


def test_joint_limits_enforced():
    with pytest.raises(JointLimit):
        fingertip_poses(HAND, Pose6(), JointConfig(np.full(6, 2.0)))
    with pytest.raises(JointLimit):
        fingertip_poses(HAND, Pose6(), JointConfig(np.full(6, -0.1)))


def test_vectorized_chain_matches_frames(rng):
    for _ in range(10):
        palm, q = random_pose(rng), random_q(rng)
        a = q.angles.reshape(3, 2)
        _, j2, tip = H._chain_points(HAND, palm, a[:, 0], a[:, 1])
        for f in range(3):
            _, _, dist, t = link_frames(HAND, palm, q, f)
            assert np.allclose(j2[f], dist.position, atol=1e-12)
            assert np.allclose(tip[f], t.position, atol=1e-12)


def test_close_unreachable_object():
    q, contacts = close_fingers(HAND, Pose6(), sphere(0.01, (0, 0, 1.0)))
    assert contacts == []
    assert np.allclose(q.angles, HAND.limits())


def test_close_over_sphere_gives_three_radial_contacts():
    center = np.array([0.0, 0.0, 0.08])
    obj = sphere(0.03, center)
    q, contacts = close_fingers(HAND, Pose6(), obj)
    assert len(contacts) == 3
    assert sorted(c.link_id for c in contacts) == [1, 3, 5]
    for c in contacts:
        radial = (c.position - center) / np.linalg.norm(c.position - center)
        assert np.linalg.norm(c.normal - radial) < 1e-3
        assert abs(sdf(obj, c.position)) <= H.CONTACT_TOL
        assert c.fingertip
    q.check(HAND)


def test_close_with_tip_already_penetrating():
    tip = fingertip_poses(HAND, Pose6(), JointConfig())[0].position
    # offset so the sphere center is not an axis sample (gradient undefined there)
    q, contacts = close_fingers(HAND, Pose6(), sphere(0.012, tip + np.array([0.0, 0.0, 0.003])))
    assert q.angles[0] == 0.0 and q.angles[1] == 0.0
    assert any(c.link_id == 1 for c in contacts)


def test_contact_tolerance_on_library_objects(rng):
    from graspbo import env, geom

    for name in geom.OBJECT_LIBRARY:
        obj = geom.get_object(name)
        b = env.pose_bounds(obj, HAND)
        found = 0
        for _ in range(60):
            x = b.from_unit(rng.random(4))
            palm = geom.align_to_center(x[:3], x[3], obj.center)
            _, contacts = close_fingers(HAND, palm, obj)
            for c in contacts:
                assert abs(sdf(obj, c.position)) <= H.CONTACT_TOL
                found += 1
        assert found > 0


def test_collision_count_examples():
    big = sphere(1.0)
    assert link_collision_count(HAND, Pose6(np.array([0, 0, 3.0])), JointConfig(), big) == 0
    assert link_collision_count(HAND, Pose6(), JointConfig(), big) == 7
    tip = fingertip_poses(HAND, Pose6(), JointConfig())[0].position
    small = sphere(0.01, tip)
    mask = H.colliding_links(HAND, Pose6(), JointConfig(), small)
    assert mask.sum() == 1 and mask[1]
    # per-link oracle: min SDF over dense axis samples minus radius
    pts = H.link_axis_samples(HAND, Pose6(), JointConfig(), n=200)
    depth = [np.min(sdf(small, p)) - HAND.link_radius for p in pts]
    assert [d < -H.PENETRATION_TOL for d in depth] == list(mask[:6])


def test_collision_monotone_along_approach():
    # the object is larger than the hand, so links never pass beyond it
    obj = sphere(0.5, (0, 0, 0.8))
    counts = []
    for z in np.linspace(0.0, 0.8, 81):
        counts.append(link_collision_count(HAND, Pose6(np.array([0, 0, z])), JointConfig(), obj))
    assert all(a <= b for a, b in zip(counts, counts[1:]))
    assert counts[0] == 0 and counts[-1] == 7


def _point_in_link(hand, palm, q, finger, link, local):
    frames = link_frames(hand, palm, q, finger)
    return frames[1 + link].apply(local)


def test_jacobian_matches_finite_differences(rng):
    worst = 0.0
    for _ in range(100):
        palm, q = random_pose(rng), JointConfig(rng.uniform(0.05, 0.95, 6) * HAND.limits())
        f, link = int(rng.integers(3)), int(rng.integers(2))
        length = HAND.proximal_length if link == 0 else HAND.distal_length
        local = np.array([rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01),
                          rng.uniform(0, length)])
        p = _point_in_link(HAND, palm, q, f, link, local)
        c = ContactPoint(p, [0, 0, 1], link_id=2 * f + link)
        J = hand_jacobian(HAND, palm, q, [c])
        h = 1e-6
        for j in range(6):
            dq = np.zeros(6)
            dq[j] = h
            plus = _point_in_link(HAND, palm, JointConfig(q.angles + dq), f, link, local)
            minus = _point_in_link(HAND, palm, JointConfig(q.angles - dq), f, link, local)
            worst = max(worst, np.max(np.abs(J[:, j] - (plus - minus) / (2 * h))))
    assert worst < 1e-5


def test_jacobian_zero_blocks_and_errors(rng):
    palm, q = random_pose(rng), random_q(rng)
    tip = fingertip_poses(HAND, palm, q)[1].position
    J = hand_jacobian(HAND, palm, q, [ContactPoint(tip, [1, 0, 0], link_id=3)])
    assert np.all(J[:, [0, 1, 4, 5]] == 0)
    assert np.all(J @ np.zeros(6) == 0)
    with pytest.raises(EmptyContacts):
        hand_jacobian(HAND, palm, q, [])
    with pytest.raises(ValueError):
        hand_jacobian(HAND, palm, q, [ContactPoint(tip, [1, 0, 0], link_id=H.PALM_LINK)])


def test_lowest_point_open_hand_facing_down():
    palm = Pose6(np.array([0, 0, 0.5]), axis_angle_quat((1, 0, 0), np.pi))
    z = H.lowest_point(HAND, palm)
    tips = fingertip_poses(HAND, palm, JointConfig())
    assert z == pytest.approx(min(t.position[2] for t in tips) - HAND.link_radius)
