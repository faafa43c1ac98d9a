"""Euclidean projection onto closed convex target sets in R^m.

Supported sets: convex hulls of finitely many points (optionally including
the origin) and the half-line (-inf, b] for scalar values.  Hull projection
runs an active-set nearest-point iteration over affine subproblems.  Every
projection is certified against the variational inequality

    (x - Px) . (z - Px) <= tol   for all generators z,

with tol = 1e-10 * (1 + |x|^2); a certificate failure raises, and global
counters keep the worst observed slack for later inspection.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .field import NodalField

__all__ = [
    "ConvexSet",
    "finite_hull",
    "half_line",
    "hull_with_origin",
    "project_point",
    "project_field",
    "contains",
    "boundary_hull",
    "is_extreme",
    "check_variational_inequality",
    "CertificateError",
    "certificate_stats",
    "reset_certificate_stats",
    "CERT_REL_TOL",
]

CERT_REL_TOL = 1e-10
# duplicate generators are collapsed below this relative spacing
_DEDUP_REL = 1e-14


class CertificateError(AssertionError):
    """A projection result failed its variational inequality certificate."""


@dataclass
class CertificateStats:
    projections: int = 0
    worst_slack: float = -np.inf   # max over projections of (dot - tol)

    def record(self, slack: float):
        self.projections += 1
        if slack > self.worst_slack:
            self.worst_slack = slack


_STATS = CertificateStats()


def certificate_stats() -> CertificateStats:
    return _STATS


def reset_certificate_stats() -> CertificateStats:
    global _STATS
    _STATS = CertificateStats()
    return _STATS


def _dedup_points(points: np.ndarray) -> np.ndarray:
    scale = 1.0 + (np.abs(points).max() if points.size else 0.0)
    tol = _DEDUP_REL * scale
    kept: list = []
    for p in points:
        if not any(np.abs(p - q).max() <= tol for q in kept):
            kept.append(p)
    return np.array(kept)


@dataclass(frozen=True)
class ConvexSet:
    """Closed convex target set; kind 'hull' or 'half-line'."""

    kind: str
    m: int
    generators: np.ndarray | None = None
    bound: float | None = None
    includes_origin: bool = False
    _extra: dict = dataclass_field(default_factory=dict)


def finite_hull(points) -> ConvexSet:
    """Convex hull of finitely many points in R^m (m >= 1)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("hull needs at least one generator point")
    if not np.isfinite(points).all():
        raise ValueError("hull generators contain non-finite entries")
    points = _dedup_points(points)
    points.flags.writeable = False
    return ConvexSet(kind="hull", m=points.shape[1], generators=points)


def hull_with_origin(points) -> ConvexSet:
    """Convex hull of the given points together with the origin."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    points = np.vstack([points, np.zeros((1, points.shape[1]))])
    hull = finite_hull(points)
    return ConvexSet(kind="hull", m=hull.m, generators=hull.generators,
                     includes_origin=True)


def half_line(bound: float) -> ConvexSet:
    """The scalar half-line (-inf, bound]."""
    bound = float(bound)
    if not np.isfinite(bound):
        raise ValueError("half-line bound must be finite")
    return ConvexSet(kind="half-line", m=1, bound=bound)


def _affine_coefficients(P: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Coefficients of the point of the affine hull of rows of P nearest x.

    Coefficients sum to one but may be negative.  Solved through least
    squares with rcond 1e-13 so affinely dependent active sets stay stable.
    """
    k = len(P)
    if k == 1:
        return np.ones(1)
    Q = P[1:] - P[0]
    rhs = Q @ (x - P[0])
    M = Q @ Q.T
    nu, *_ = np.linalg.lstsq(M, rhs, rcond=1e-13)
    mu = np.empty(k)
    mu[1:] = nu
    mu[0] = 1.0 - nu.sum()
    return mu


def _project_hull(points: np.ndarray, x: np.ndarray):
    """Active-set nearest point iteration over the hull of ``points``."""
    d2 = ((points - x) ** 2).sum(axis=1)
    active = [int(np.argmin(d2))]
    lam = np.ones(1)
    max_outer = 20 * len(points) + 200

    y = points[active[0]]
    for _ in range(max_outer):
        gap = (points - y) @ (x - y)
        j = int(np.argmax(gap))
        if gap[j] <= 1e-14 * (1.0 + x @ x) or j in active:
            break
        active.append(j)
        lam = np.append(lam, 0.0)

        # restore feasibility of the affine minimiser over the active set
        for _ in range(2 * len(points) + 50):
            mu = _affine_coefficients(points[active], x)
            if (mu >= -1e-12).all():
                lam = np.clip(mu, 0.0, None)
                s = lam.sum()
                lam = lam / s if s > 0 else np.ones(len(active)) / len(active)
                break
            shrink = lam - mu
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(shrink > 1e-300, lam / shrink, np.inf)
            alpha = min(1.0, float(ratio.min()))
            lam = lam + alpha * (mu - lam)
            keep = lam > 1e-14
            if keep.all():
                # numerical stall: drop the smallest coefficient
                keep[int(np.argmin(lam))] = False
            active = [a for a, k_ in zip(active, keep) if k_]
            lam = lam[keep]
            s = lam.sum()
            lam = lam / s if s > 0 else np.ones(len(active)) / len(active)
        y = lam @ points[active]
    return y


def check_variational_inequality(K: ConvexSet, x, Px) -> float:
    """Worst generator slack (x - Px).(z - Px); certified when <= tol(x)."""
    x = np.asarray(x, dtype=float)
    Px = np.asarray(Px, dtype=float)
    if K.kind == "half-line":
        z = np.array([min(float(x[0]), K.bound)])
        return float((x - Px) @ (z - Px))
    gaps = (K.generators - Px) @ (x - Px)
    return float(gaps.max())


def _certify(K: ConvexSet, x: np.ndarray, Px: np.ndarray) -> np.ndarray:
    tol = CERT_REL_TOL * (1.0 + float(x @ x))
    worst = check_variational_inequality(K, x, Px)
    _STATS.record(worst - tol)
    if worst > tol:
        raise CertificateError(
            f"projection certificate failed: slack {worst:.3e} exceeds {tol:.3e}"
        )
    return Px


def project_point(K: ConvexSet, x) -> np.ndarray:
    """Euclidean projection of x onto K, certified before returning."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (K.m,):
        raise ValueError(f"point has dimension {x.shape[0]}, set lives in R^{K.m}")
    if not np.isfinite(x).all():
        raise ValueError("cannot project a non-finite point")

    if K.kind == "half-line":
        y = np.array([min(float(x[0]), K.bound)])
        return _certify(K, x, y)

    pts = K.generators
    # quick exits: single generator, or x already optimal at nearest vertex
    if len(pts) == 1:
        return _certify(K, x, pts[0].copy())
    y = _project_hull(pts, x)
    return _certify(K, x, y)


def contains(K: ConvexSet, x, tol: float = 0.0) -> bool:
    """Membership via projection distance <= tol."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = project_point(K, x)
    return float(np.linalg.norm(x - y)) <= tol


def project_field(K: ConvexSet, field: NodalField) -> NodalField:
    """Project every vertex value; boundary and interior alike."""
    if field.m != K.m:
        raise ValueError(f"field has m={field.m}, set lives in R^{K.m}")
    out = np.empty_like(field.values)
    for i in range(len(out)):
        out[i] = project_point(K, field.values[i])
    return field.with_values(out)


def boundary_hull(field: NodalField, include_origin: bool = False) -> ConvexSet:
    """Convex hull of the field's boundary vertex values."""
    bvals = field.values[field.mesh.boundary_nodes]
    if include_origin:
        return hull_with_origin(bvals)
    return finite_hull(bvals)


def is_extreme(points, index: int, tol: float) -> bool:
    """Whether points[index] is an extreme point of the hull of all points.

    True exactly when the point stays at distance > tol from the hull of the
    other points (points within tol of it are ignored as duplicates).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if not 0 <= index < len(points):
        raise IndexError(f"index {index} out of range [0, {len(points)})")
    p = points[index]
    dist = np.linalg.norm(points - p, axis=1)
    others = points[(dist > tol) & (np.arange(len(points)) != index)]
    if len(others) == 0:
        return True
    hull = finite_hull(others)
    q = project_point(hull, p)
    return float(np.linalg.norm(p - q)) > tol
