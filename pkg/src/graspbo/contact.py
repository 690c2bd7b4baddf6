"""Point contacts with Coulomb friction: cone edges, wrenches, grasp matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyContacts


@dataclass(frozen=True)
class ContactPoint:
    """A contact on the object surface; ``normal`` points out of the object."""

    position: np.ndarray
    normal: np.ndarray
    link_id: int = 1
    fingertip: bool = True

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("contact normal must be non-zero")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "normal", n / norm)


@dataclass(frozen=True)
class FrictionModel:
    mu: float = 0.5
    cone_edges: int = 8

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("friction coefficient must be non-negative")
        if self.cone_edges < 3:
            raise ValueError("need at least 3 cone edges")


@dataclass(frozen=True)
class WrenchSet:
    """Wrench primitives ``[force; torque / torque_scale]``, shape ``(n, 6)``."""

    primitives: np.ndarray
    torque_scale: float = 1.0

    def __len__(self):
        return len(self.primitives)


def tangent_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tangents ``(t1, t2)`` such that ``(t1, t2, -n)`` is right-handed."""
    m = -np.asarray(n, dtype=float)
    ref = np.array([1.0, 0.0, 0.0]) if abs(m[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = ref - (ref @ m) * m
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(m, t1)
    return t1, t2


def friction_cone_edges(c: ContactPoint, f: FrictionModel) -> np.ndarray:
    """Unit force directions along the linearized cone, shape ``(E, 3)``."""
    t1, t2 = tangent_basis(c.normal)
    phi = 2 * np.pi * np.arange(f.cone_edges) / f.cone_edges
    d = -c.normal + f.mu * (np.cos(phi)[:, None] * t1 + np.sin(phi)[:, None] * t2)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def wrench_primitives(contacts, f: FrictionModel, center, torque_scale: float) -> WrenchSet:
    if len(contacts) == 0:
        raise EmptyContacts("no contacts to build a wrench set from")
    center = np.asarray(center, dtype=float)
    rows = []
    for c in contacts:
        d = friction_cone_edges(c, f)
        tau = np.cross(c.position - center, d) / torque_scale
        rows.append(np.hstack([d, tau]))
    return WrenchSet(np.vstack(rows), float(torque_scale))


def cross_matrix(r: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]])


def grasp_matrix(contacts, center, torque_scale: float) -> np.ndarray:
    """``G`` (6 x 3k) mapping stacked contact forces to the object wrench."""
    if len(contacts) == 0:
        raise EmptyContacts("no contacts to build a grasp matrix from")
    center = np.asarray(center, dtype=float)
    blocks = [np.vstack([np.eye(3), cross_matrix(c.position - center) / torque_scale])
              for c in contacts]
    return np.hstack(blocks)


def _rotate(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    # Rodrigues
    return (v * np.cos(angle) + np.cross(axis, v) * np.sin(angle)
            + axis * (axis @ v) * (1 - np.cos(angle)))


def perturb_contacts(contacts, sigma_pos: float, sigma_ang: float, rng: np.random.Generator):
    """Gaussian position noise and random-axis normal rotation per contact."""
    if sigma_pos < 0 or sigma_ang < 0:
        raise ValueError("noise levels must be non-negative")
    if sigma_pos == 0 and sigma_ang == 0:
        return list(contacts)
    out = []
    for c in contacts:
        p = c.position + sigma_pos * rng.standard_normal(3)
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        n = _rotate(c.normal, axis, sigma_ang * rng.standard_normal())
        out.append(ContactPoint(p, n / np.linalg.norm(n), c.link_id, c.fingertip))
    return out
