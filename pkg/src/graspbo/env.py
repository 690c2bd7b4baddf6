"""Grasp-trial pipeline: bounds, reachability, collisions, closing, scoring."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import hand as handmod
from . import heuristics as H
from .contact import FrictionModel, grasp_matrix, perturb_contacts, wrench_primitives
from .exceptions import DegeneratePose, NoContacts
from .geom import ObjectModel, Pose6, Scene, align_to_center
from .hand import HandModel, JointConfig
from .metrics import (MetricScaler, MetricWeights, QualityVector, combine, force_closure,
                      q_epsilon, q_isotropy, q_uniformity, q_volume)

PREGRASP_OFFSET = 0.10
APPROACH_STEP = 0.01


@dataclass(frozen=True)
class GraspPose:
    x: float
    y: float
    z: float
    roll: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.roll])

    @classmethod
    def from_array(cls, a) -> "GraspPose":
        a = np.asarray(a, dtype=float).reshape(4)
        return cls(*map(float, a))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class NoiseConfig:
    sigma_pos: float = 1e-3
    sigma_ang: float = 0.02
    sigma_y: float = 0.0

    def __post_init__(self):
        if min(self.sigma_pos, self.sigma_ang, self.sigma_y) < 0:
            raise ValueError("noise levels must be non-negative")


# ---------------------------------------------------------------------------
# capability map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CapabilityMap:
    """Voxel grid of dexterity indices in ``[0, 1]``.

    ``origin`` is the min corner of voxel ``(0, 0, 0)``; voxel ``(i, j, k)``
    covers ``origin + resolution * [i, i+1) x [j, j+1) x [k, k+1)``.
    """

    origin: np.ndarray
    resolution: float
    values: np.ndarray
    threshold: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or np.any(v < 0) or np.any(v > 1):
            raise ValueError("capability values must be a 3D grid in [0, 1]")
        object.__setattr__(self, "values", v)

    def dexterity(self, p) -> float:
        idx = np.floor((np.asarray(p, dtype=float) - self.origin) / self.resolution).astype(int)
        if np.any(idx < 0) or np.any(idx >= self.values.shape):
            return 0.0
        return float(self.values[tuple(idx)])

    def with_threshold(self, threshold: float) -> "CapabilityMap":
        return CapabilityMap(self.origin, self.resolution, self.values, threshold)

    def save(self, path) -> None:
        q = np.round(self.values * 255).astype(np.uint8)
        np.savez_compressed(path, origin=self.origin, resolution=self.resolution,
                            values=q, threshold=self.threshold)

    @classmethod
    def load(cls, path) -> "CapabilityMap":
        with np.load(path) as f:
            return cls(f["origin"], float(f["resolution"]), f["values"].astype(float) / 255.0,
                       float(f["threshold"]))


def build_radial_map(base=(-0.45, 0.0, 0.05), peak_radius=0.45, width=0.1, max_radius=0.8,
                     origin=(-0.4, -0.4, -0.1), shape=(40, 40, 35), resolution=0.02,
                     threshold=0.1) -> CapabilityMap:
    """Dexterity as a Gaussian bump in distance from the robot base."""
    origin = np.asarray(origin, dtype=float)
    idx = np.stack(np.meshgrid(*[np.arange(n) for n in shape], indexing="ij"), axis=-1)
    centers = origin + (idx + 0.5) * resolution
    r = np.linalg.norm(centers - np.asarray(base), axis=-1)
    vals = np.exp(-((r - peak_radius) / width) ** 2)
    vals[r > max_radius] = 0.0
    # quantize like the shipped file so built and loaded maps agree
    vals = np.round(vals * 255) / 255
    return CapabilityMap(origin, resolution, vals, threshold)


def default_capability_map() -> CapabilityMap:
    with resources.as_file(resources.files("graspbo") / "data" / "capability_map.npz") as p:
        return CapabilityMap.load(p)


def reachable(cmap: CapabilityMap, pose: Pose6) -> bool:
    return cmap.dexterity(pose.position) >= cmap.threshold


# ---------------------------------------------------------------------------
# bounds and collisions
# ---------------------------------------------------------------------------

def pose_bounds(obj: ObjectModel, hand: HandModel, table_height: float = 0.0):
    """Search box: object AABB grown by the finger size; roll over a full turn."""
    from .bo import Bounds

    lo, hi = obj.aabb
    fs = hand.finger_size
    lo = lo - fs
    hi = hi + fs
    lo[2] = max(lo[2], table_height + hand.palm_clearance)
    return Bounds(np.append(lo, -np.pi), np.append(hi, np.pi))


def classify_collision(scene: Scene, hand: HandModel, palm: Pose6):
    """Workbench contact invalidates the pose; object contact only counts links."""
    q0 = JointConfig()
    if handmod.lowest_point(hand, palm, q0) < scene.table_height:
        return H.FeasibilityResult(0, "workbench_collision"), 0
    n_j = handmod.link_collision_count(hand, palm, q0, scene.object)
    return H.FeasibilityResult(1, "ok"), n_j


def pregrasp_approach(scene: Scene, hand: HandModel, target: Pose6,
                      offset: float = PREGRASP_OFFSET, step: float = APPROACH_STEP):
    """Straight approach along the palm axis from ``offset`` behind ``target``.

    Returns ``(feasible, pregrasp_pose)``; infeasible when any sampled
    approach pose touches the workbench.
    """
    if offset <= 0:
        raise ValueError("pre-grasp offset must be positive")
    axis = target.rotation[:, 2]
    pre = target.translated(-offset * axis)
    n = int(np.ceil(offset / step))
    q0 = JointConfig()
    for k in range(n + 1):
        pose = target.translated(-(offset * (1 - k / n)) * axis)
        if handmod.lowest_point(hand, pose, q0) < scene.table_height:
            return False, pre
    return True, pre


# ---------------------------------------------------------------------------
# evaluation record
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("iteration", "x", "y", "z", "roll", "q_c", "reason", "n_j", "n_c",
               "q_iso_raw", "q_eps_raw", "q_v_raw", "q_uni_raw",
               "q_iso", "q_eps", "q_v", "q_uni", "q_f", "Q_m", "AR", "CR",
               "y", "incumbent", "y_common", "success", "eps_path", "wall_ms")

SCHEMA_VERSION = "graspbo-history/1"


@dataclass
class EvalRecord:
    pose: GraspPose
    arm: str
    q_c: int = 0
    reason: str = "ok"
    n_j: int = 0
    n_c: int = 0
    contacts: list = field(default_factory=list)
    measured_contacts: list = field(default_factory=list)
    quality: QualityVector | None = None
    q_m: float = 0.0
    ar: float = 0.0
    cr: float = 0.0
    y: float = 0.0
    y_common: float = 0.0
    eps_path: str = "exact"
    success: int = 0
    wall_ms: float = 0.0
    palm: Pose6 | None = None
    joints: JointConfig | None = None

    @property
    def q_f(self) -> int:
        return 0 if self.quality is None else self.quality.q_f

    def row(self, iteration: int, incumbent: float, elapsed_ms: float | None = None) -> list:
        """CSV fields in :data:`CSV_COLUMNS` order; ``wall_ms`` is blank unless given."""
        raw = np.zeros(4) if self.quality is None else self.quality.raw
        nrm = np.zeros(4) if self.quality is None else self.quality.normalized
        p = self.pose
        return [iteration, _f(p.x), _f(p.y), _f(p.z), _f(p.roll), self.q_c, self.reason,
                self.n_j, self.n_c, *map(_f, raw), *map(_f, nrm), self.q_f, _f(self.q_m),
                _f(self.ar), _f(self.cr), _f(self.y), _f(incumbent), _f(self.y_common),
                self.success, self.eps_path, "" if elapsed_ms is None else f"{elapsed_ms:.3f}"]


def _f(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# the trial
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialSettings:
    """Everything ``execute_grasp`` needs besides the pose and the rng."""

    arm: str = "gr"
    weights: MetricWeights = field(default_factory=MetricWeights)
    params: H.HeuristicParams = field(default_factory=H.HeuristicParams)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    friction: FrictionModel = field(default_factory=FrictionModel)
    eps_path: str = "exact"
    volume_samples: int = 2048
    pregrasp_offset: float = PREGRASP_OFFSET

    def __post_init__(self):
        if self.arm not in H.ARMS:
            raise ValueError(f"unknown arm {self.arm!r}")


def raw_quality(scene: Scene, hand: HandModel, palm: Pose6, joints: JointConfig, contacts,
                settings: TrialSettings, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Raw ``(q_iso, q_eps, q_v, q_uni)`` and the closure flag for a contact set.

    ``q_eps`` and ``q_v`` are only computed under force closure.
    """
    obj = scene.object
    ts = obj.torque_scale
    W = wrench_primitives(contacts, settings.friction, obj.center, ts)
    q_f = force_closure(W)
    q_iso = q_isotropy(grasp_matrix(contacts, obj.center, ts))
    q_uni = q_uniformity(handmod.hand_jacobian(hand, palm, joints, contacts))
    q_eps = q_v = 0.0
    if q_f:
        q_eps = q_epsilon(W, method=settings.eps_path, rng=rng)
        q_v = q_volume(W, settings.volume_samples, rng)
    return np.array([q_iso, q_eps, q_v, q_uni]), q_f


def execute_grasp(scene: Scene, hand: HandModel, g: GraspPose, settings: TrialSettings,
                  scaler: MetricScaler | None, rng: np.random.Generator) -> EvalRecord:
    """Run one grasp trial and score it under ``settings.arm``.

    Stages: align palm to the object center, reachability, pre-grasp
    approach, collision classification, finger closing, contact noise,
    metrics, normalization, arm-specific outcome, observation noise.
    """
    t0 = time.perf_counter()
    rec = EvalRecord(pose=g, arm=settings.arm, eps_path=settings.eps_path)
    p = settings.params
    try:
        palm = align_to_center(g.position, g.roll, scene.object.center)
    except DegeneratePose:
        palm = None
    rec.palm = palm
    if palm is None or not reachable(scene.capability, palm):
        rec.q_c, rec.reason = 0, "unreachable"
        return _finish(rec, t0)
    ok, _ = pregrasp_approach(scene, hand, palm, settings.pregrasp_offset)
    if not ok:
        rec.q_c, rec.reason = 0, "workbench_collision"
        return _finish(rec, t0)
    feas, n_j = classify_collision(scene, hand, palm)
    rec.q_c, rec.reason, rec.n_j = feas.q_c, feas.reason, n_j
    if not feas.q_c:
        return _finish(rec, t0)
    if n_j:
        # collision regime: fingers stay open, the pose only feeds AR/CP
        rec.joints, contacts = JointConfig(), []
    else:
        rec.joints, contacts = handmod.close_fingers(hand, palm, scene.object)
    rec.contacts = contacts
    rec.n_c = sum(1 for c in contacts if c.fingertip)
    if contacts:
        measured = perturb_contacts(contacts, settings.noise.sigma_pos, settings.noise.sigma_ang, rng)
        rec.measured_contacts = measured
        raw, q_f = raw_quality(scene, hand, palm, rec.joints, measured, settings, rng)
        nrm = scaler.transform(raw[None])[0] if scaler is not None else raw.copy()
        rec.quality = QualityVector(raw, nrm, q_f)
        rec.q_m = combine(nrm, settings.weights) if q_f else 0.0
        rec.y_common = float(nrm[1]) if q_f else 0.0
    rec.ar = H.approximation_reward(rec.n_j, p.lam)
    rec.cr = H.contact_reward(rec.n_c, p.lam)
    rec.y = H.evaluate_arm(settings.arm, rec.q_c, rec.q_f, rec.q_m, rec.n_j, rec.n_c, p)
    if settings.noise.sigma_y > 0:
        floor = -p.alpha if settings.arm == "cp" else 0.0
        rec.y = max(floor, rec.y + settings.noise.sigma_y * rng.standard_normal())
    return _finish(rec, t0)


def _finish(rec: EvalRecord, t0: float) -> EvalRecord:
    rec.wall_ms = 1e3 * (time.perf_counter() - t0)
    return rec


def success_proxy(record: EvalRecord, scene: Scene, hand: HandModel, settings: TrialSettings,
                  rng: np.random.Generator, k_trials: int = 20, min_closure_rate: float = 0.9,
                  eps_min: float = 0.05) -> bool:
    """Robustness stand-in for a lift test.

    Re-measures the nominal contacts ``k_trials`` times under the trial noise;
    succeeds when closure holds in at least ``min_closure_rate`` of them and
    the median raw epsilon quality reaches ``eps_min``.
    """
    if not record.contacts:
        raise NoContacts("the record has no contacts to re-test")
    obj = scene.object
    closures, eps = [], []
    s = settings.noise
    for _ in range(k_trials):
        cs = perturb_contacts(record.contacts, s.sigma_pos, s.sigma_ang, rng)
        W = wrench_primitives(cs, settings.friction, obj.center, obj.torque_scale)
        closures.append(force_closure(W))
        eps.append(q_epsilon(W) if closures[-1] else 0.0)
    return bool(np.mean(closures) >= min_closure_rate and np.median(eps) >= eps_min)


# ---------------------------------------------------------------------------
# campaign-level helpers
# ---------------------------------------------------------------------------

def calibrate_scaler(scene: Scene, hand: HandModel, settings: TrialSettings,
                     n_samples: int = 200, seed: int = 0, mode: str = "fixed") -> MetricScaler:
    """Fit metric bounds on closure grasps from ``n_samples`` Latin-hypercube poses."""
    from .bo import initial_design

    rng = np.random.default_rng(seed)
    bounds = pose_bounds(scene.object, hand, scene.table_height)
    raws = []
    for x in initial_design(bounds, n_samples, rng):
        rec = execute_grasp(scene, hand, GraspPose.from_array(x), settings, None, rng)
        if rec.q_f:
            raws.append(rec.quality.raw)
    if len(raws) >= 2:
        return MetricScaler(mode=mode).fit(np.array(raws))
    # too few closures to calibrate: fall back to the natural [0, 1] ranges
    return MetricScaler(mode=mode, bounds=[[0.0] * 4, [1.0] * 4]).fit(None)


class GraspEvaluator:
    """Callable ``pose array -> (EvalRecord, y)`` for the optimizer.

    With ``success_rng`` set, every closure grasp is also scored by
    :func:`success_proxy` (``success_kw`` are passed through) and the flag is
    stored on the record.
    """

    def __init__(self, scene: Scene, hand: HandModel, settings: TrialSettings,
                 scaler: MetricScaler | None, rng: np.random.Generator,
                 success_rng: np.random.Generator | None = None, success_kw: dict | None = None):
        self.scene = scene
        self.hand = hand
        self.settings = settings
        self.scaler = scaler
        self.rng = rng
        self.success_rng = success_rng
        self.success_kw = success_kw or {}

    def __call__(self, x):
        rec = execute_grasp(self.scene, self.hand, GraspPose.from_array(x), self.settings,
                            self.scaler, self.rng)
        if self.scaler is not None and self.scaler.mode == "running" and rec.q_f:
            self.scaler.partial_fit(rec.quality.raw[None])
        if self.success_rng is not None and rec.q_f:
            rec.success = int(success_proxy(rec, self.scene, self.hand, self.settings,
                                            self.success_rng, **self.success_kw))
        return rec, rec.y


def make_scene(obj: ObjectModel, capability: CapabilityMap | None = None,
               table_height: float = 0.0) -> Scene:
    return Scene(obj, table_height, default_capability_map() if capability is None else capability)


def write_default_map(path: Path) -> None:
    build_radial_map().save(path)
