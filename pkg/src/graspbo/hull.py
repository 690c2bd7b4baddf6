"""Convex-hull queries in 2 to 6 dimensions.

Two independent routes are kept on purpose: facet enumeration (Qhull) for
exact facet distances and volume membership, and a min-norm-point solver
(Wolfe's algorithm) for origin containment and the support-function
approximation of the facet distance. Tests cross-validate them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.special import gammaln

from .exceptions import Degenerate, OriginOutside

CLOSURE_TOL = 1e-6


@dataclass(frozen=True)
class Facet:
    normal: np.ndarray
    offset: float
    vertices: tuple


def affine_rank(points: np.ndarray, rtol: float = 1e-10) -> int:
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return 0
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def convex_hull(points) -> list[Facet]:
    """Facets of the hull of ``points`` (rows), merged across coplanar simplices.

    Facets are sorted lexicographically by normal so the result does not
    depend on Qhull's internal ordering.

    Raises
    ------
    Degenerate
        If the points do not span the ambient dimension.
    """
    P = np.asarray(points, dtype=float)
    n, d = P.shape
    if not 2 <= d <= 6:
        raise ValueError("dimension must be between 2 and 6")
    if n < d + 1 or affine_rank(P) < d:
        raise Degenerate(f"{n} points do not span {d} dimensions")
    try:
        hull = ConvexHull(P)
    except QhullError as err:
        raise Degenerate(str(err)) from err
    merged: dict = {}
    for eq, simplex in zip(hull.equations, hull.simplices):
        normal, off = eq[:-1], -eq[-1]
        key = tuple(np.round(np.append(normal, off), 9))
        if key in merged:
            merged[key][2].update(int(v) for v in simplex)
        else:
            merged[key] = (normal, off, set(int(v) for v in simplex))
    facets = [Facet(nrm, float(off), tuple(sorted(vs))) for nrm, off, vs in merged.values()]
    facets.sort(key=lambda f: tuple(f.normal))
    return facets


def facet_arrays(facets) -> tuple[np.ndarray, np.ndarray]:
    return (np.array([f.normal for f in facets]), np.array([f.offset for f in facets]))


# ---------------------------------------------------------------------------
# min-norm point (Wolfe 1976)
# ---------------------------------------------------------------------------

def _affine_minimizer(Q: np.ndarray) -> np.ndarray:
    """Weights (summing to one) of the min-norm point of aff(Q)."""
    k = len(Q)
    M = np.ones((k + 1, k + 1))
    M[:k, :k] = Q @ Q.T
    M[k, k] = 0.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return sol[:k]


def min_norm_point(points, tol: float = 1e-12, max_iter: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """Point of ``conv(points)`` closest to the origin.

    Returns the point and the convex weights over the input rows.
    """
    P = np.asarray(points, dtype=float)
    scale = max(np.max(np.sum(P * P, axis=1)), 1e-300)
    i0 = int(np.argmin(np.sum(P * P, axis=1)))
    S = [i0]
    w = np.array([1.0])
    x = P[i0].copy()
    for _ in range(max_iter):
        if x @ x <= tol * tol * scale:
            break
        j = int(np.argmin(P @ x))
        if x @ x - P[j] @ x <= tol * scale or j in S:
            break
        S.append(j)
        w = np.append(w, 0.0)
        while True:
            a = _affine_minimizer(P[S])
            if np.all(a > tol):
                w = a
                break
            mask = a <= tol
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(mask, w / (w - a), np.inf)
            theta = min(1.0, float(np.min(ratios)))
            w = theta * a + (1 - theta) * w
            keep = w > tol
            if not np.any(keep):
                keep[np.argmax(w)] = True
            S = [s for s, k in zip(S, keep) if k]
            w = w[keep]
            w = w / w.sum()
            if len(S) == 1:
                break
        x = w @ P[S]
    weights = np.zeros(len(P))
    weights[S] = w
    return x, weights


def distance_to_hull(points, q) -> float:
    P = np.asarray(points, dtype=float) - np.asarray(q, dtype=float)
    x, _ = min_norm_point(P)
    return float(np.linalg.norm(x))


def contains_origin(points, margin: float = CLOSURE_TOL) -> bool:
    """True iff the origin lies strictly inside ``conv(points)``.

    Interiority is certified by membership of the 2d points ``+-margin e_i``
    (a cross-polytope around the origin), each checked by a min-norm-point
    solve. This never touches the facet enumeration.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or len(P) == 0:
        return False
    d = P.shape[1]
    if len(P) < d + 1:
        return False
    scale = float(np.max(np.abs(P)))
    if scale == 0:
        return False
    member_tol = 1e-3 * margin
    if distance_to_hull(P, np.zeros(d)) > member_tol:
        return False
    for i in range(d):
        for sgn in (1.0, -1.0):
            q = np.zeros(d)
            q[i] = sgn * margin
            if distance_to_hull(P, q) > member_tol:
                return False
    return True


# ---------------------------------------------------------------------------
# facet distance
# ---------------------------------------------------------------------------

def min_facet_distance(facets) -> float:
    """Radius of the largest origin-centered ball inside the hull."""
    if not facets:
        raise OriginOutside("no facets")
    normals, offsets = facet_arrays(facets)
    dist = offsets / np.linalg.norm(normals, axis=1)
    m = float(dist.min())
    if m <= 0:
        raise OriginOutside("origin is not interior to the hull")
    return m


def support(points: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Support function ``h(u) = max_i <u, p_i>``; ``u`` may be ``(k, d)``."""
    return np.max(np.asarray(u) @ np.asarray(points).T, axis=-1)


def _facet_snap(P: np.ndarray, u: np.ndarray):
    """Normal of the hyperplane through the ``d`` points most active at ``u``."""
    d = P.shape[1]
    top = np.argsort(-(P @ u), kind="stable")[:d]
    try:
        a = np.linalg.solve(P[top], np.ones(d))
    except np.linalg.LinAlgError:
        return None
    na = np.linalg.norm(a)
    if not np.isfinite(na) or na == 0:
        return None
    v = a / na
    return v if v @ u > 0 else None


def _refine_direction(P: np.ndarray, u: np.ndarray, n_steps: int) -> float:
    """Steepest descent of ``h`` on the unit sphere.

    The descent direction is the tangent part of the min-norm element of the
    delta-subdifferential (the hull of near-active points). Each step also
    tries the normal through the most active points, which lands on the
    local minimum once the active set is right.
    """
    h = float(support(P, u))
    step = 0.5
    delta = 0.05 * max(h, 1e-12)
    for _ in range(n_steps):
        v = _facet_snap(P, u)
        if v is not None:
            hv = float(support(P, v))
            if hv < h:
                u, h = v, hv
        vals = P @ u
        active = P[vals >= h - delta]
        g, _ = min_norm_point(active)
        gt = g - (g @ u) * u
        gn = np.linalg.norm(gt)
        if gn < 1e-14:
            if delta < 1e-10 * max(h, 1e-12):
                break
            delta *= 0.25
            continue
        improved = False
        while step > 1e-10:
            cand = u - step * gt / gn
            cand /= np.linalg.norm(cand)
            hc = float(support(P, cand))
            if hc < h:
                u, h = cand, hc
                step = min(1.0, step * 1.5)
                improved = True
                break
            step *= 0.5
        if not improved:
            delta *= 0.25
            step = 0.5
            if delta < 1e-10 * max(h, 1e-12):
                break
    return h


def support_epsilon(points, n_dirs: int, rng: np.random.Generator, n_refine: int = 48,
                    n_steps: int = 8, directions=None) -> float:
    """Upper bound on the facet distance from sampled support values.

    Samples ``n_dirs`` uniform unit directions (plus any given
    ``directions``), keeps the ``n_refine`` smallest support values and
    refines each by descent on the sphere. Every returned value is ``h(u)``
    at some unit ``u`` and hence never below the exact distance.
    """
    P = np.asarray(points, dtype=float)
    if not contains_origin(P):
        raise OriginOutside("support_epsilon needs the origin inside the hull")
    d = P.shape[1]
    U = rng.standard_normal((n_dirs, d))
    if directions is not None:
        U = np.vstack([U, np.atleast_2d(directions)])
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    h = support(P, U)
    order = np.argsort(h, kind="stable")[:n_refine]
    best = float(h[order[0]])
    for i in order:
        best = min(best, _refine_direction(P, U[i], n_steps))
    return best


# ---------------------------------------------------------------------------
# volume
# ---------------------------------------------------------------------------

def unit_ball_volume(d: int) -> float:
    return float(np.exp(0.5 * d * np.log(np.pi) - gammaln(0.5 * d + 1)))


def mc_volume(points, n_samples: int, rng: np.random.Generator,
              method: str = "radial") -> tuple[float, float]:
    """Monte-Carlo hull volume and its standard error.

    ``method="rejection"`` samples the bounding box and counts halfspace
    members (binomial standard error). ``method="radial"`` averages
    ``V_d * r(u)^d`` over uniform directions ``u`` from an interior point,
    where ``r(u)`` is the ray length to the boundary; it is unbiased with far
    smaller variance for thin or pointed hulls. Degenerate inputs give
    ``(0, 0)``.
    """
    P = np.asarray(points, dtype=float)
    try:
        facets = convex_hull(P)
    except Degenerate:
        return 0.0, 0.0
    A, b = facet_arrays(facets)
    d = P.shape[1]
    if method == "rejection":
        lo, hi = P.min(axis=0), P.max(axis=0)
        box = float(np.prod(hi - lo))
        X = lo + (hi - lo) * rng.random((n_samples, d))
        inside = np.all(X @ A.T <= b + 1e-12, axis=1)
        f = inside.mean()
        return box * f, box * np.sqrt(f * (1 - f) / n_samples)
    if method != "radial":
        raise ValueError(f"unknown volume method {method!r}")
    c = P.mean(axis=0)
    slack = b - A @ c
    U = rng.standard_normal((n_samples, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    cosines = U @ A.T
    with np.errstate(divide="ignore"):
        ray = np.where(cosines > 0, slack / cosines, np.inf)
    r = ray.min(axis=1)
    vals = unit_ball_volume(d) * r ** d
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_samples))
