"""Feasibility gating, shaping rewards and the per-arm evaluation functions.

``cp`` is a reconstruction of the collision-penalty baseline (graded negative
reward for hand-object collision); it exists only as an ablation arm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

ARMS = ("simple", "cp", "ar", "gr")

REASONS = ("ok", "unreachable", "workbench_collision")


@dataclass(frozen=True)
class HeuristicParams:
    lam: float = 0.1
    alpha: float = 0.1

    def __post_init__(self):
        if self.lam <= 0 or self.alpha <= 0:
            raise ValueError("lambda and alpha must be positive")


@dataclass(frozen=True)
class FeasibilityResult:
    q_c: int
    reason: str = "ok"

    def __post_init__(self):
        if self.reason not in REASONS:
            raise ValueError(f"unknown reason {self.reason!r}")
        if (self.q_c == 0) != (self.reason != "ok"):
            raise ValueError("q_c = 0 exactly when the reason is not 'ok'")


def _check_count(n: int) -> None:
    if n < 0:
        raise ValueError("counts must be non-negative")


def approximation_reward(n_j: int, lam: float) -> float:
    """``exp(-lam * n_j)`` for colliding poses, 0 when no link collides."""
    _check_count(n_j)
    return math.exp(-lam * n_j) if n_j > 0 else 0.0


def contact_reward(n_c: int, lam: float) -> float:
    _check_count(n_c)
    return 1.0 - math.exp(-lam * n_c)


def collision_penalty_baseline(n_j: int, lam: float) -> float:
    """``-(1 - exp(-lam * n_j))``: zero without collision, tends to -1."""
    _check_count(n_j)
    return -(1.0 - math.exp(-lam * n_j)) if n_j > 0 else 0.0


def evaluate_simple(q_c: int, q_f: int, q_m: float) -> float:
    return q_c * q_f * q_m


def evaluate_ar(q_c: int, q_f: int, q_m: float, ar: float, alpha: float) -> float:
    """``q_c * (q_f * q_m + alpha * ar)``.

    The closure flag gates the metric only. Gating ``ar`` as well would zero
    every colliding pose (colliding poses are never closed), making this arm
    identical to :func:`evaluate_simple`.
    """
    return q_c * (q_f * q_m + alpha * ar)


def evaluate_gr(q_c: int, q_m: float, ar: float, cr: float, alpha: float) -> float:
    """``q_c * (q_m + alpha * (ar + cr))``; ``q_m`` must already be 0 without closure."""
    return q_c * (q_m + alpha * (ar + cr))


def evaluate_cp(q_c: int, q_f: int, q_m: float, cp: float, alpha: float) -> float:
    return q_c * (q_f * q_m + alpha * cp)


def evaluate_arm(arm: str, q_c: int, q_f: int, q_m: float, n_j: int, n_c: int,
                 params: HeuristicParams) -> float:
    """Dispatch to the evaluation function of an ablation arm."""
    if arm == "simple":
        return evaluate_simple(q_c, q_f, q_m)
    if arm == "ar":
        return evaluate_ar(q_c, q_f, q_m, approximation_reward(n_j, params.lam), params.alpha)
    if arm == "gr":
        return evaluate_gr(q_c, q_m if q_f else 0.0, approximation_reward(n_j, params.lam),
                           contact_reward(n_c, params.lam), params.alpha)
    if arm == "cp":
        return evaluate_cp(q_c, q_f, q_m, collision_penalty_baseline(n_j, params.lam),
                           params.alpha)
    raise ValueError(f"unknown arm {arm!r}; expected one of {ARMS}")
