"""Kinematic model of a three-finger hand.

Each finger is a planar two-link chain mounted on the palm's front face and
flexing toward the palm axis (+Z, the approach direction). Links are capsules;
the palm is a rounded plate (a rectangle swept by a sphere).

Link ids: ``2 * finger + joint`` for finger links (0 = proximal, 1 = distal)
and :data:`PALM_LINK` for the palm body.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contact import ContactPoint
from .exceptions import EmptyContacts, JointLimit
from .geom import ObjectModel, Pose6, axis_angle_quat, sdf, surface_normal

PALM_LINK = 6
N_FINGERS = 3

CONTACT_TOL = 1e-4
PENETRATION_TOL = 1e-4
BISECTION_ITERS = 30


@dataclass(frozen=True)
class HandModel:
    """Geometry of the hand. Lengths in meters, angles in radians."""

    proximal_length: float = 0.055
    distal_length: float = 0.045
    link_radius: float = 0.009
    base_radius: float = 0.06
    finger_angles: tuple = (np.pi / 2, np.pi / 2 + 2 * np.pi / 3, np.pi / 2 + 4 * np.pi / 3)
    splay: float = 0.3
    q_max: tuple = (1.5, 1.2)
    palm_half_extent: tuple = (0.045, 0.045)
    palm_radius: float = 0.012
    palm_clearance: float = 0.02

    def __post_init__(self):
        if self.proximal_length <= 0 or self.distal_length <= 0 or self.link_radius <= 0:
            raise ValueError("link lengths and radius must be positive")
        if len(self.finger_angles) != N_FINGERS:
            raise ValueError("the hand has exactly three fingers")
        if not all(0 < q < np.pi for q in self.q_max):
            raise ValueError("joint limits must lie in (0, pi)")

    @property
    def fingertip_radius(self) -> float:
        return self.link_radius

    @property
    def finger_size(self) -> float:
        return self.proximal_length + self.distal_length + self.fingertip_radius

    @property
    def finger_count(self) -> int:
        return N_FINGERS

    def base_pose(self, finger: int) -> Pose6:
        """Finger base frame in palm coordinates (x radial, z along palm axis)."""
        phi = self.finger_angles[finger]
        pos = np.array([self.base_radius * np.cos(phi), self.base_radius * np.sin(phi),
                        self.palm_radius])
        return Pose6(pos, axis_angle_quat((0, 0, 1), phi))

    def limits(self) -> np.ndarray:
        return np.tile(np.asarray(self.q_max, dtype=float), N_FINGERS)


@dataclass(frozen=True)
class JointConfig:
    """Six joint angles ordered ``(finger0.prox, finger0.dist, finger1.prox, ...)``."""

    angles: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=float).reshape(6)
        object.__setattr__(self, "angles", a)

    @classmethod
    def from_closure(cls, hand: HandModel, s) -> "JointConfig":
        """Coupled closing: both joints of finger ``i`` at ``s[i]`` of their range."""
        s = np.broadcast_to(np.asarray(s, dtype=float), (N_FINGERS,))
        return cls((s[:, None] * np.asarray(hand.q_max)[None, :]).ravel())

    def check(self, hand: HandModel) -> None:
        lim = hand.limits()
        if np.any(self.angles < -1e-12) or np.any(self.angles > lim + 1e-12):
            raise JointLimit(f"joint angles {self.angles} outside [0, {lim}]")


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------

def _ry(angle: float) -> Pose6:
    return Pose6(np.zeros(3), axis_angle_quat((0, 1, 0), angle))


def _tz(length: float) -> Pose6:
    return Pose6(np.array([0.0, 0.0, length]))


def link_frames(hand: HandModel, palm: Pose6, q: JointConfig, finger: int):
    """Proximal, distal and tip frames of one finger as a composed chain."""
    q1, q2 = q.angles[2 * finger], q.angles[2 * finger + 1]
    base = palm.compose(hand.base_pose(finger))
    prox = base.compose(_ry(hand.splay - q1))
    dist = prox.compose(_tz(hand.proximal_length)).compose(_ry(-q2))
    tip = dist.compose(_tz(hand.distal_length))
    return base, prox, dist, tip


def fingertip_poses(hand: HandModel, palm: Pose6, q: JointConfig) -> list[Pose6]:
    """World poses of the three fingertip frames (at the distal link end)."""
    q.check(hand)
    return [link_frames(hand, palm, q, f)[3] for f in range(N_FINGERS)]


def _chain_points(hand: HandModel, palm: Pose6, q1: np.ndarray, q2: np.ndarray):
    """Vectorized joint/tip positions in world frame.

    ``q1``/``q2`` have shape ``(3, ...)`` (per finger). Returns ``(b, j2, tip)``
    with shapes ``(3, ..., 3)``.
    """
    R, t = palm.rotation, palm.position
    phis = np.asarray(hand.finger_angles)
    u = np.stack([np.cos(phis), np.sin(phis), np.zeros(3)], axis=-1) @ R.T  # (3,3)
    z = R[:, 2]
    b = hand.base_radius * np.stack([np.cos(phis), np.sin(phis), np.zeros(3)], axis=-1)
    b[:, 2] = hand.palm_radius
    b = b @ R.T + t
    extra = (1,) * (np.ndim(q1) - 1)
    th1 = hand.splay - q1
    th2 = th1 - q2
    uu = u.reshape((3,) + extra + (3,))
    bb = b.reshape((3,) + extra + (3,))
    d1 = np.sin(th1)[..., None] * uu + np.cos(th1)[..., None] * z
    d2 = np.sin(th2)[..., None] * uu + np.cos(th2)[..., None] * z
    j2 = bb + hand.proximal_length * d1
    tip = j2 + hand.distal_length * d2
    return np.broadcast_to(bb, j2.shape), j2, tip


def _segment_samples(a: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    w = np.linspace(0.0, 1.0, n)
    return a[..., None, :] * (1 - w)[:, None] + b[..., None, :] * w[:, None]


def palm_samples(hand: HandModel, palm: Pose6, n: int = 7) -> np.ndarray:
    """Sample points on the palm's core rectangle (world frame), shape ``(n*n, 3)``."""
    hx, hy = hand.palm_half_extent
    r = hand.palm_radius
    gx = np.linspace(-(hx - r), hx - r, n)
    gy = np.linspace(-(hy - r), hy - r, n)
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), np.zeros(n * n)], axis=-1)
    return palm.apply(pts)


def link_axis_samples(hand: HandModel, palm: Pose6, q: JointConfig, n: int = 8) -> list[np.ndarray]:
    """Axis samples for the six finger links, ordered by link id."""
    a = q.angles.reshape(3, 2)
    b, j2, tip = _chain_points(hand, palm, a[:, 0], a[:, 1])
    out = []
    for f in range(N_FINGERS):
        out.append(_segment_samples(b[f], j2[f], n))
        out.append(_segment_samples(j2[f], tip[f], n))
    return out


def link_collision_count(hand: HandModel, palm: Pose6, q: JointConfig, obj: ObjectModel,
                         penetration_tol: float = PENETRATION_TOL) -> int:
    """Number of hand links (six finger links + palm) penetrating ``obj``."""
    return int(sum(colliding_links(hand, palm, q, obj, penetration_tol)))


def colliding_links(hand: HandModel, palm: Pose6, q: JointConfig, obj: ObjectModel,
                    penetration_tol: float = PENETRATION_TOL) -> np.ndarray:
    """Boolean mask over the 7 link ids."""
    # a link whose swept box misses the object AABB cannot collide
    lo, hi = obj.aabb
    links = link_axis_samples(hand, palm, q)
    mask = np.zeros(7, dtype=bool)
    for i, pts in enumerate(links):
        r = hand.link_radius
        if np.any(pts.min(axis=0) - r > hi) or np.any(pts.max(axis=0) + r < lo):
            continue
        mask[i] = np.min(sdf(obj, pts)) - r < -penetration_tol
    pts = palm_samples(hand, palm)
    r = hand.palm_radius
    if not (np.any(pts.min(axis=0) - r > hi) or np.any(pts.max(axis=0) + r < lo)):
        mask[PALM_LINK] = np.min(sdf(obj, pts)) - r < -penetration_tol
    return mask


def lowest_point(hand: HandModel, palm: Pose6, q: JointConfig | None = None) -> float:
    """Lowest world z reached by any hand surface."""
    q = JointConfig() if q is None else q
    zs = [np.min(p[:, 2]) - hand.link_radius for p in link_axis_samples(hand, palm, q, n=2)]
    zs.append(np.min(palm_samples(hand, palm, n=2)[:, 2]) - hand.palm_radius)
    return float(min(zs))


# ---------------------------------------------------------------------------
# finger closing
# ---------------------------------------------------------------------------

def _distal_gap(hand: HandModel, palm: Pose6, obj: ObjectModel, s: np.ndarray, n_axis: int = 6):
    """Clearance of each distal capsule from the object.

    ``s`` has shape ``(3, S)``; returns gaps ``(3, S)`` and the axis points
    ``(3, S, n_axis, 3)``.
    """
    q1 = s * hand.q_max[0]
    q2 = s * hand.q_max[1]
    _, j2, tip = _chain_points(hand, palm, q1, q2)
    pts = _segment_samples(j2, tip, n_axis)
    gaps = sdf(obj, pts) - hand.link_radius
    return np.asarray(gaps).min(axis=-1), pts


def close_fingers(hand: HandModel, palm: Pose6, obj: ObjectModel,
                  contact_tol: float = CONTACT_TOL, n_scan: int = 24,
                  n_bisect: int = BISECTION_ITERS):
    """Close all fingers with coupled joints until each fingertip touches.

    Each finger's closure fraction ``s`` (both joints moving proportionally)
    is scanned coarsely for the first sign change of the distal-capsule
    clearance and then refined by bisection. Fingers that reach their limit
    without touching report no contact.

    Returns
    -------
    (JointConfig, list of ContactPoint)
    """
    grid = np.linspace(0.0, 1.0, n_scan + 1)
    gaps, _ = _distal_gap(hand, palm, obj, np.tile(grid, (3, 1)))
    s_final = np.ones(N_FINGERS)
    touching = np.zeros(N_FINGERS, dtype=bool)
    lo = np.zeros(N_FINGERS)
    hi = np.ones(N_FINGERS)
    for f in range(N_FINGERS):
        if gaps[f, 0] <= contact_tol:
            s_final[f], touching[f] = 0.0, True
            continue
        hit = np.nonzero(gaps[f] <= 0.0)[0]
        if hit.size:
            k = hit[0]
            lo[f], hi[f] = grid[k - 1], grid[k]
            touching[f] = True
    active = touching & (s_final > 0)
    if np.any(active):
        for _ in range(n_bisect):
            mid = 0.5 * (lo + hi)
            g, _ = _distal_gap(hand, palm, obj, mid[:, None])
            inside = g[:, 0] <= 0.0
            hi = np.where(active & inside, mid, hi)
            lo = np.where(active & ~inside, mid, lo)
        s_final = np.where(active, hi, s_final)
    q = JointConfig.from_closure(hand, s_final)
    contacts = []
    if np.any(touching):
        gap, pts = _distal_gap(hand, palm, obj, s_final[:, None])
        for f in np.nonzero(touching)[0]:
            axis_pts = pts[f, 0]
            d = np.asarray(sdf(obj, axis_pts))
            c = axis_pts[int(np.argmin(d))]
            contacts.append(_surface_contact(obj, c, link_id=2 * int(f) + 1))
    return q, contacts


def _surface_contact(obj: ObjectModel, c: np.ndarray, link_id: int) -> ContactPoint:
    d = sdf(obj, c)
    n = surface_normal(obj, c)
    p = c - d * n
    # correct for non-exact interior distances (unions, cylinder caps)
    for _ in range(3):
        dp = sdf(obj, p)
        if abs(dp) <= 1e-9:
            break
        p = p - dp * surface_normal(obj, p)
    if d <= 1e-9:
        n = surface_normal(obj, p)
    return ContactPoint(p, n, link_id, True)


# ---------------------------------------------------------------------------
# Jacobian
# ---------------------------------------------------------------------------

def joint_axes(hand: HandModel, palm: Pose6, q: JointConfig):
    """World joint axes and joint positions, each ``(3, 2, 3)`` (finger, joint)."""
    a = q.angles.reshape(3, 2)
    b, j2, _ = _chain_points(hand, palm, a[:, 0], a[:, 1])
    axes = np.empty((3, 2, 3))
    for f in range(N_FINGERS):
        ax = palm.compose(hand.base_pose(f)).rotation @ np.array([0.0, -1.0, 0.0])
        axes[f] = ax
    return axes, np.stack([b, j2], axis=1)


def hand_jacobian(hand: HandModel, palm: Pose6, q: JointConfig, contacts) -> np.ndarray:
    """Contact-point linear velocities per unit joint rate, shape ``(3k, 6)``."""
    if len(contacts) == 0:
        raise EmptyContacts("hand Jacobian needs at least one contact")
    axes, origins = joint_axes(hand, palm, q)
    J = np.zeros((3 * len(contacts), 6))
    for i, c in enumerate(contacts):
        if c.link_id == PALM_LINK:
            raise ValueError("palm contacts have no finger joints")
        f, link = divmod(c.link_id, 2)
        for j in range(link + 1):
            J[3 * i:3 * i + 3, 2 * f + j] = np.cross(axes[f, j], c.position - origins[f, j])
    return J
