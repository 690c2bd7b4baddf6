"""Rigid poses and signed-distance geometry for primitive-composed objects.

Quaternions are stored scalar-first ``(w, x, y, z)``. All distances are in
meters and all angles in radians. Point arrays have shape ``(..., 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import DegenerateGradient, DegeneratePose

PRIMITIVE_KINDS = ("sphere", "box", "cylinder", "capsule")

# number of dimensions each primitive kind takes (radius / half-extents)
_N_DIMS = {"sphere": 1, "box": 3, "cylinder": 2, "capsule": 2}


# ---------------------------------------------------------------------------
# quaternion helpers
# ---------------------------------------------------------------------------

def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Convert a rotation matrix to a unit quaternion with ``w >= 0``."""
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                      (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                      0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def axis_angle_quat(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


@dataclass(frozen=True)
class Pose6:
    """Rigid transform: rotation (unit quaternion) followed by translation."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if n == 0:
            raise ValueError("orientation quaternion must be non-zero")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q / n)
        object.__setattr__(self, "_R", quat_to_matrix(q / n))

    @classmethod
    def from_matrix(cls, R: np.ndarray, position=(0.0, 0.0, 0.0)) -> "Pose6":
        return cls(np.asarray(position, dtype=float), matrix_to_quat(np.asarray(R)))

    @property
    def rotation(self) -> np.ndarray:
        return self._R

    def compose(self, other: "Pose6") -> "Pose6":
        """Return ``self * other`` (apply ``other`` first, then ``self``)."""
        q = quat_multiply(self.orientation, other.orientation)
        return Pose6(self.position + self._R @ other.position, q)

    def inverse(self) -> "Pose6":
        w, x, y, z = self.orientation
        qi = np.array([w, -x, -y, -z])
        return Pose6(-(self._R.T @ self.position), qi)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self._R.T + self.position

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return (points - self.position) @ self._R

    def translated(self, t) -> "Pose6":
        return Pose6(self.position + np.asarray(t, dtype=float), self.orientation)

    def allclose(self, other: "Pose6", atol: float = 1e-9) -> bool:
        # q and -q encode the same rotation
        return (np.allclose(self.position, other.position, atol=atol)
                and np.allclose(self._R, other._R, atol=atol))


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShapePrimitive:
    """A convex solid in its own local frame.

    ``dimensions`` holds half-sizes: ``(r,)`` for a sphere, ``(hx, hy, hz)``
    for a box, ``(r, half_height)`` for a z-aligned cylinder and
    ``(r, half_length)`` for a z-aligned capsule (segment part only).
    """

    kind: str
    dimensions: tuple
    local_pose: Pose6 = field(default_factory=Pose6)

    def __post_init__(self):
        if self.kind not in PRIMITIVE_KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        dims = tuple(float(d) for d in np.atleast_1d(self.dimensions))
        if len(dims) != _N_DIMS[self.kind]:
            raise ValueError(f"{self.kind} takes {_N_DIMS[self.kind]} dimensions, got {len(dims)}")
        if min(dims) <= 0:
            raise ValueError("primitive dimensions must be positive")
        object.__setattr__(self, "dimensions", dims)

    def local_sdf(self, p: np.ndarray) -> np.ndarray:
        k, d = self.kind, self.dimensions
        if k == "sphere":
            return np.linalg.norm(p, axis=-1) - d[0]
        if k == "box":
            q = np.abs(p) - np.asarray(d)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            return outside + np.minimum(q.max(axis=-1), 0.0)
        if k == "cylinder":
            q = np.stack([np.hypot(p[..., 0], p[..., 1]) - d[0],
                          np.abs(p[..., 2]) - d[1]], axis=-1)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            return outside + np.minimum(q.max(axis=-1), 0.0)
        # capsule
        a = p.copy()
        a[..., 2] = p[..., 2] - np.clip(p[..., 2], -d[1], d[1])
        return np.linalg.norm(a, axis=-1) - d[0]

    def local_gradient(self, p: np.ndarray) -> np.ndarray:
        """Analytic gradient of :meth:`local_sdf` at a single point (unnormalized)."""
        k, d = self.kind, self.dimensions
        if k == "sphere":
            return p.copy()
        if k == "capsule":
            a = p.copy()
            a[2] = p[2] - np.clip(p[2], -d[1], d[1])
            return a
        if k == "box":
            b = np.asarray(d)
            q = np.abs(p) - b
            if np.any(q > 0):
                return np.sign(p) * np.maximum(q, 0.0)
            g = np.zeros(3)
            i = int(np.argmax(q))
            g[i] = np.sign(p[i])
            return g
        # cylinder
        rho = np.hypot(p[0], p[1])
        radial = p[:2] / rho if rho > 0 else np.zeros(2)
        qr, qz = rho - d[0], abs(p[2]) - d[1]
        if qr > 0 or qz > 0:
            gr, gz = max(qr, 0.0), max(qz, 0.0)
        elif qr > qz:
            gr, gz = 1.0, 0.0
        else:
            gr, gz = 0.0, 1.0
        return np.array([gr * radial[0], gr * radial[1], gz * np.sign(p[2])])

    def local_aabb(self) -> tuple[np.ndarray, np.ndarray]:
        k, d = self.kind, self.dimensions
        if k == "sphere":
            h = np.full(3, d[0])
        elif k == "box":
            h = np.asarray(d)
        elif k == "cylinder":
            h = np.array([d[0], d[0], d[1]])
        else:
            h = np.array([d[0], d[0], d[1] + d[0]])
        return -h, h

    def world_aabb(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.local_aabb()
        corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                            for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
        w = self.local_pose.apply(corners)
        if self.kind in ("sphere", "capsule", "cylinder"):
            # tighter bound for round solids along their axis
            R = self.local_pose.rotation
            c = self.local_pose.position
            r = d0 = self.dimensions[0]
            if self.kind == "sphere":
                return c - r, c + r
            ax = R[:, 2] * (self.dimensions[1])
            if self.kind == "capsule":
                ends = np.array([c - ax, c + ax])
                return ends.min(axis=0) - d0, ends.max(axis=0) + d0
            # cylinder: disk extent along each world axis is r*sqrt(1 - a_i^2)
            ext = r * np.sqrt(np.clip(1.0 - R[:, 2] ** 2, 0.0, 1.0))
            ends = np.array([c - ax, c + ax])
            return ends.min(axis=0) - ext, ends.max(axis=0) + ext
        return w.min(axis=0), w.max(axis=0)


# ---------------------------------------------------------------------------
# objects and scenes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectModel:
    """Union of primitives with a reference center and a world AABB."""

    primitives: tuple
    name: str = "object"
    center: np.ndarray | None = None

    def __post_init__(self):
        prims = tuple(self.primitives)
        if not prims:
            raise ValueError("an object needs at least one primitive")
        object.__setattr__(self, "primitives", prims)
        boxes = [p.world_aabb() for p in prims]
        lo = np.min([b[0] for b in boxes], axis=0)
        hi = np.max([b[1] for b in boxes], axis=0)
        object.__setattr__(self, "aabb", (lo, hi))
        c = 0.5 * (lo + hi) if self.center is None else np.asarray(self.center, dtype=float)
        if np.any(c < lo - 1e-12) or np.any(c > hi + 1e-12):
            raise ValueError("object center must lie inside its bounding box")
        object.__setattr__(self, "center", c)
        # cache per-primitive inverse transforms for fast batched queries
        object.__setattr__(self, "_frames",
                           [(p.local_pose.rotation, p.local_pose.position) for p in prims])

    def primitive_sdfs(self, points: np.ndarray) -> np.ndarray:
        """Per-primitive distances, shape ``(n_primitives, ...)``."""
        points = np.asarray(points, dtype=float)
        out = []
        for prim, (R, t) in zip(self.primitives, self._frames):
            out.append(prim.local_sdf((points - t) @ R))
        return np.stack(out)

    @property
    def torque_scale(self) -> float:
        """Largest distance from the center to an AABB corner."""
        lo, hi = self.aabb
        return float(np.linalg.norm(np.maximum(np.abs(lo - self.center),
                                                np.abs(hi - self.center))))


def sdf(obj: ObjectModel, p) -> np.ndarray | float:
    """Signed distance from ``p`` to ``obj`` (negative inside)."""
    p = np.asarray(p, dtype=float)
    d = obj.primitive_sdfs(p).min(axis=0)
    return float(d) if d.ndim == 0 else d


def sdf_gradient(obj: ObjectModel, p) -> np.ndarray:
    """Unit outward normal of the level set through ``p``.

    Raises
    ------
    DegenerateGradient
        If the analytic gradient vanishes (e.g. at the exact center of a
        box or sphere). Use :func:`surface_normal` for a safe fallback.
    """
    p = np.asarray(p, dtype=float).reshape(3)
    i = int(np.argmin(obj.primitive_sdfs(p)))
    prim = obj.primitives[i]
    R, t = obj._frames[i]
    g = R @ prim.local_gradient((p - t) @ R)
    n = np.linalg.norm(g)
    if n < 1e-9:
        raise DegenerateGradient(f"gradient vanishes at {p}")
    return g / n


def fd_gradient(obj: ObjectModel, p, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of the SDF, normalized."""
    p = np.asarray(p, dtype=float).reshape(3)
    offs = np.eye(3) * h
    g = (sdf(obj, p + offs) - sdf(obj, p - offs)) / (2 * h)
    n = np.linalg.norm(g)
    if n < 1e-12:
        raise DegenerateGradient(f"finite-difference gradient vanishes at {p}")
    return g / n


def surface_normal(obj: ObjectModel, p) -> np.ndarray:
    try:
        return sdf_gradient(obj, p)
    except DegenerateGradient:
        return fd_gradient(obj, p)


def closest_surface_point(obj: ObjectModel, p, iters: int = 4) -> np.ndarray:
    """Project ``p`` onto the zero level set by repeated gradient steps."""
    x = np.asarray(p, dtype=float).reshape(3).copy()
    for _ in range(iters):
        d = sdf(obj, x)
        if abs(d) < 1e-12:
            break
        x = x - d * surface_normal(obj, x)
    return x


@dataclass(frozen=True)
class Scene:
    object: ObjectModel
    table_height: float = 0.0
    capability: object = None

    def __post_init__(self):
        if self.object.aabb[0][2] < self.table_height - 1e-9:
            raise ValueError("object must rest on or above the workbench")


# ---------------------------------------------------------------------------
# palm alignment
# ---------------------------------------------------------------------------

def align_to_center(position, roll: float, center) -> Pose6:
    """Palm pose at ``position`` whose +Z axis points at ``center``.

    The in-plane reference axis is the projection of world +Z (or world +X
    when the approach is nearly vertical) onto the palm plane, then rotated
    by ``roll`` about the approach axis.
    """
    position = np.asarray(position, dtype=float)
    center = np.asarray(center, dtype=float)
    v = center - position
    n = np.linalg.norm(v)
    if n <= 1e-6:
        raise DegeneratePose("palm position coincides with the object center")
    z = v / n
    ref = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.99 else np.array([1.0, 0.0, 0.0])
    x0 = ref - (ref @ z) * z
    x0 /= np.linalg.norm(x0)
    y0 = np.cross(z, x0)
    x = np.cos(roll) * x0 + np.sin(roll) * y0
    y = np.cross(z, x)
    return Pose6.from_matrix(np.column_stack([x, y, z]), position)


# ---------------------------------------------------------------------------
# object library
# ---------------------------------------------------------------------------

def _prim(kind, dims, pos=(0, 0, 0), quat=(1, 0, 0, 0)):
    return ShapePrimitive(kind, tuple(dims), Pose6(np.asarray(pos, float), np.asarray(quat, float)))


def make_bottle() -> ObjectModel:
    """Mustard-bottle stand-in: flat box body with a capsule neck."""
    return ObjectModel((
        _prim("box", (0.045, 0.03, 0.065), (0, 0, 0.065)),
        _prim("capsule", (0.018, 0.02), (0, 0, 0.15)),
    ), name="bottle")


def make_mug() -> ObjectModel:
    """Mug stand-in: cylinder body with a handle ring of 8 capsules."""
    prims = [_prim("cylinder", (0.04, 0.05), (0, 0, 0.05))]
    ring_c = np.array([0.062, 0.0, 0.05])
    ring_r, tube = 0.025, 0.007
    angles = np.linspace(0.0, 2 * np.pi, 9)
    for a0, a1 in zip(angles[:-1], angles[1:]):
        p0 = ring_c + ring_r * np.array([np.cos(a0), 0.0, np.sin(a0)])
        p1 = ring_c + ring_r * np.array([np.cos(a1), 0.0, np.sin(a1)])
        mid, seg = 0.5 * (p0 + p1), p1 - p0
        half = 0.5 * np.linalg.norm(seg)
        # rotate local +z onto the segment direction
        zax = seg / np.linalg.norm(seg)
        ref = np.array([0.0, 1.0, 0.0])
        xax = np.cross(ref, zax)
        xax /= np.linalg.norm(xax)
        yax = np.cross(zax, xax)
        q = matrix_to_quat(np.column_stack([xax, yax, zax]))
        prims.append(_prim("capsule", (tube, half), mid, q))
    return ObjectModel(tuple(prims), name="mug", center=np.array([0.0, 0.0, 0.05]))


def make_drill() -> ObjectModel:
    """Power-drill stand-in: battery box, handle box and a horizontal barrel."""
    barrel_q = axis_angle_quat((0, 1, 0), np.pi / 2)
    return ObjectModel((
        _prim("box", (0.05, 0.04, 0.02), (0, 0, 0.02)),
        _prim("box", (0.02, 0.025, 0.06), (0, 0, 0.1)),
        _prim("cylinder", (0.03, 0.08), (0.04, 0, 0.18), barrel_q),
    ), name="drill")


OBJECT_LIBRARY = {"bottle": make_bottle, "mug": make_mug, "drill": make_drill}


def object_from_dict(name: str, spec: dict) -> ObjectModel:
    """Build an object from a config mapping.

    The mapping has a ``primitives`` list whose items carry ``kind``,
    ``dimensions`` and optionally ``position`` and ``orientation``
    (scalar-first quaternion); an optional ``center`` overrides the AABB center.
    """
    prims = []
    for i, item in enumerate(spec.get("primitives", [])):
        unknown = set(item) - {"kind", "dimensions", "position", "orientation"}
        if unknown:
            raise ValueError(f"objects.{name}.primitives[{i}]: unknown keys {sorted(unknown)}")
        prims.append(_prim(item["kind"], item["dimensions"],
                           item.get("position", (0, 0, 0)),
                           item.get("orientation", (1, 0, 0, 0))))
    center = spec.get("center")
    return ObjectModel(tuple(prims), name=name,
                       center=None if center is None else np.asarray(center, float))


def get_object(name: str) -> ObjectModel:
    try:
        return OBJECT_LIBRARY[name]()
    except KeyError:
        raise KeyError(f"unknown object {name!r}; available: {sorted(OBJECT_LIBRARY)}") from None
