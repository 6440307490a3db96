"""Geometric-optics rays across a two-speed interface.

Rays travel straight at speed sqrt(a) inside each region, refract at the
inner interface by Snell's law (with total internal reflection past the
critical angle), and stop when they reach the outer boundary.  This is
the mechanism behind the crossing/trapping dichotomy: a fast inclusion
lets every interior ray escape, a slow one traps the steep ones near the
interface, and a non-convex inclusion can hold a bouncing ray captive.

The validated DomainPair only admits the fast convex inclusion, so the
demonstrations that need the opposite ordering or a non-convex inclusion
use RayMedium, which carries the same fields without those checks.

The module also reconstructs the interface from first-return traveltimes
as the envelope of circles: a boundary point x with traveltime tau saw a
reflection from distance sqrt(a2) tau / 2, so the interface is the zero
level set of F(p) = min_x (|p - x| - r(x)).
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DomainError, TangencyError
from .geometry import DomainPair, InterfaceCurve
from .runtime import parallel_map

__all__ = [
    "RayMedium",
    "RaySegment",
    "RayEvent",
    "RayPath",
    "TraveltimeRecord",
    "EnvelopeResult",
    "refract",
    "critical_angle",
    "trace",
    "crossing_fraction",
    "oracle_traveltimes",
    "envelope_reconstruct",
    "hausdorff_to_curve",
]

EVENT_KINDS = ("refract", "total_internal_reflection", "exit", "step_limit")

_N_MARCH = 512          # sign-change scan resolution per segment
_TANGENT_COS = 1e-9     # below this |cos| an incidence counts as tangential


@dataclass(frozen=True)
class RayMedium:
    """Two nested curves with speed-squared coefficients, unvalidated
    beyond nesting so that slow or non-convex inclusions are allowed."""

    inner: InterfaceCurve
    outer: InterfaceCurve
    a1: float
    a2: float

    def __post_init__(self):
        if not (self.a1 > 0.0 and self.a2 > 0.0):
            raise DomainError("speed coefficients must be positive")
        th = np.linspace(0.0, 2.0 * np.pi, 2048, endpoint=False)
        if float(np.min(self.outer.radial_margin(self.inner.point(th)))) <= 0.0:
            raise DomainError("inclusion must lie strictly inside the outer curve")

    def label(self, x):
        x = np.asarray(x, dtype=float)
        inside_outer = self.outer.contains(x)
        inside_inner = self.inner.contains(x)
        return np.where(inside_inner, 1, np.where(inside_outer, 2, 0)).astype(np.int8)


Medium = Union[DomainPair, RayMedium]


def _speeds(med: Medium) -> Tuple[float, float]:
    return float(np.sqrt(med.a1)), float(np.sqrt(med.a2))


def _refract_many(d: np.ndarray, normal: np.ndarray, c_in: float,
                  c_out: float) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized Snell step; returns (directions, total_internal mask)."""
    nn = np.linalg.norm(normal, axis=-1, keepdims=True)
    if np.any(nn == 0.0):
        raise ValueError("zero normal vector")
    n = normal / nn
    # orient the normal against the ray so cos(theta_in) > 0
    dn = np.sum(d * n, axis=-1, keepdims=True)
    m = np.where(dn > 0.0, -n, n)
    cos_in = -np.sum(d * m, axis=-1, keepdims=True)
    sin_in = np.sqrt(np.maximum(0.0, 1.0 - cos_in ** 2))
    sin_out = (c_out / c_in) * sin_in
    tir = (sin_out > 1.0)[..., 0]
    reflected = d - 2.0 * np.sum(d * n, axis=-1, keepdims=True) * n
    tangential = d + cos_in * m
    tnorm = np.linalg.norm(tangential, axis=-1, keepdims=True)
    that = np.divide(tangential, tnorm, out=np.zeros_like(tangential),
                     where=tnorm > 0.0)
    cos_out = np.sqrt(np.maximum(0.0, 1.0 - np.minimum(sin_out, 1.0) ** 2))
    transmitted = np.minimum(sin_out, 1.0) * that - cos_out * m
    # normal incidence keeps the direction exactly
    transmitted = np.where(sin_in == 0.0, d, transmitted)
    return np.where(tir[..., None], reflected, transmitted), tir


def refract(incident_dir, normal, c_in: float, c_out: float):
    """One Snell step: sin(theta_out) = (c_out/c_in) sin(theta_in).

    Returns (direction, total_internal).  Past the critical angle the
    direction is the mirror reflection and the flag is set.
    """
    if not (c_in > 0.0 and c_out > 0.0):
        raise ValueError("speeds must be positive")
    d = np.asarray(incident_dir, dtype=float)
    d = d / np.linalg.norm(d)
    out, tir = _refract_many(d[None], np.asarray(normal, float)[None],
                             c_in, c_out)
    return out[0], bool(tir[0])


def critical_angle(a_in: float, a_out: float) -> Optional[float]:
    """arcsin(sqrt(a_in/a_out)) for a slow-to-fast crossing, else None."""
    if not (a_in > 0.0 and a_out > 0.0):
        raise ValueError("coefficients must be positive")
    if a_in >= a_out:
        return None
    return float(np.arcsin(np.sqrt(a_in / a_out)))


@dataclass(frozen=True)
class RaySegment:
    start: np.ndarray
    direction: np.ndarray
    speed: float
    traveltime: float

    @property
    def length(self) -> float:
        return self.speed * self.traveltime

    @property
    def end(self) -> np.ndarray:
        return self.start + self.length * self.direction


@dataclass(frozen=True)
class RayEvent:
    kind: str
    point: np.ndarray
    time: float        # cumulative traveltime at the event


@dataclass
class RayPath:
    segments: List[RaySegment] = field(default_factory=list)
    events: List[RayEvent] = field(default_factory=list)

    @property
    def total_time(self) -> float:
        return float(sum(s.traveltime for s in self.segments))

    @property
    def exited(self) -> bool:
        return bool(self.events) and self.events[-1].kind == "exit"

    @property
    def trapped(self) -> bool:
        return bool(self.events) and self.events[-1].kind == "step_limit"

    def points(self) -> np.ndarray:
        if not self.segments:
            return np.empty((0, 2))
        pts = [s.start for s in self.segments] + [self.segments[-1].end]
        return np.asarray(pts)


def _first_crossing(curve: InterfaceCurve, p: np.ndarray, d: np.ndarray,
                    t_lo: float, t_hi: float, tol: float) -> Optional[float]:
    """First sign change of the radial margin along p + t d in (t_lo, t_hi).

    A uniform scan brackets the crossing, bisection refines it.  The scan
    can miss a tangential double crossing narrower than a scan step; such
    grazing contacts are treated as no crossing.
    """
    ts = np.linspace(t_lo, t_hi, _N_MARCH + 1)
    vals = curve.radial_margin(p[None] + ts[:, None] * d[None])
    sign0 = vals[0] > 0.0
    flips = np.nonzero((vals > 0.0) != sign0)[0]
    if flips.size == 0:
        return None
    lo, hi = ts[flips[0] - 1], ts[flips[0]]
    f = lambda t: curve.radial_margin(p + t * d)
    v_lo = f(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if (f(mid) > 0.0) == (v_lo > 0.0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _trace_once(med: Medium, origin: np.ndarray, direction: np.ndarray,
                max_events: int) -> RayPath:
    c1, c2 = _speeds(med)
    diam = 2.0 * med.outer.max_radius()
    tol = 1e-12 * diam
    push = 1e-9 * diam
    path = RayPath()
    p = origin.copy()
    d = direction.copy()
    region = int(med.label(p))
    if region == 0:
        raise DomainError("ray origin lies outside the domain")
    t_elapsed = 0.0
    while len(path.events) < max_events:
        start = p + push * d      # step off the previous hit point
        t_out = float(med.outer.ray_exit(start[None], d[None])[0])
        t_in = _first_crossing(med.inner, start, d, 0.0, t_out, tol)
        hit_inner = t_in is not None and t_in < t_out - tol
        t_hit = (t_in if hit_inner else t_out) + push
        speed = c1 if region == 1 else c2
        path.segments.append(RaySegment(p, d, speed, t_hit / speed))
        p = p + t_hit * d
        t_elapsed += t_hit / speed
        if not hit_inner:
            path.events.append(RayEvent("exit", p, t_elapsed))
            return path
        normal = med.inner.outward_normal(float(med.inner.angle_of(p)))
        if abs(float(np.dot(d, normal))) < _TANGENT_COS:
            raise TangencyError(
                f"tangential interface contact at {p} after "
                f"{len(path.segments)} segments")
        c_in, c_out = (c1, c2) if region == 1 else (c2, c1)
        d, tir = refract(d, normal, c_in, c_out)
        if tir:
            path.events.append(RayEvent("total_internal_reflection", p, t_elapsed))
        else:
            path.events.append(RayEvent("refract", p, t_elapsed))
            region = 2 if region == 1 else 1
    path.events.append(RayEvent("step_limit", p, t_elapsed))
    return path


def trace(med: Medium, origin, direction, max_events: int = 200) -> RayPath:
    """Trace one ray until it exits the outer boundary or the event
    budget runs out (the trapped classification).

    A tangential interface contact is retried once with the launch
    direction rotated by 1e-9 radians.
    """
    origin = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    nd = np.linalg.norm(d)
    if nd == 0.0:
        raise ValueError("ray direction must be nonzero")
    d = d / nd
    if max_events < 1:
        raise ValueError("max_events must be positive")
    try:
        return _trace_once(med, origin, d, max_events)
    except TangencyError:
        c, s = np.cos(1e-9), np.sin(1e-9)
        d2 = np.array([c * d[0] - s * d[1], s * d[0] + c * d[1]])
        return _trace_once(med, origin, d2, max_events)


def _crossing_fraction_batch(med: Medium, origin: np.ndarray,
                             n_angles: int, max_events: int) -> float:
    """All-angles Snell scan, vectorized.

    Valid when the inclusion is convex: a ray that leaves a convex body
    cannot re-enter it, so every successful refraction outward reaches
    the outer boundary, and the trapped rays bounce inside the inclusion
    where the star-shaped exit solver applies.
    """
    c1, c2 = _speeds(med)
    diam = 2.0 * med.outer.max_radius()
    push = 1e-9 * diam
    ang = 2.0 * np.pi * np.arange(n_angles) / n_angles
    d = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    p = np.tile(origin, (n_angles, 1))
    active = np.ones(n_angles, dtype=bool)
    crossed = np.zeros(n_angles, dtype=bool)
    for _ in range(max_events):
        if not active.any():
            break
        pa, da = p[active], d[active]
        t = med.inner.ray_exit(pa, da)
        hits = pa + t[:, None] * da
        normals = med.inner.outward_normal(med.inner.angle_of(hits))
        newd, tir = _refract_many(da, normals, c1, c2)
        idx = np.nonzero(active)[0]
        crossed[idx[~tir]] = True
        active[idx[~tir]] = False
        if tir.any():
            cos = np.abs(np.sum(newd[tir] * normals[tir], axis=-1))
            step = push / np.maximum(cos, 1e-3)
            nxt = hits[tir] + step[:, None] * newd[tir]
            # keep reflected starts strictly interior for the exit solver
            margin = med.inner.radial_margin(nxt)
            bad = margin <= 0.0
            if bad.any():
                pole = med.inner.pole
                rad = nxt[bad] - pole
                rad /= np.linalg.norm(rad, axis=-1, keepdims=True)
                nxt[bad] -= (2.0 * np.abs(margin[bad]) + push)[:, None] * rad
            p[idx[tir]] = nxt
            d[idx[tir]] = newd[tir]
    return float(np.count_nonzero(crossed)) / n_angles


def crossing_fraction(med: Medium, origin, n_angles: int,
                      max_events: int = 200) -> float:
    """Fraction of uniformly launched rays from a point in the inclusion
    that reach the outer boundary."""
    if n_angles < 360:
        raise ValueError("n_angles must be at least 360")
    origin = np.asarray(origin, dtype=float)
    if not bool(med.inner.contains(origin)):
        raise DomainError("launch point must lie inside the inclusion")
    ok, _ = _inner_is_convex(med)
    if ok:
        return _crossing_fraction_batch(med, origin, n_angles, max_events)
    ang = 2.0 * np.pi * np.arange(n_angles) / n_angles
    hits = parallel_map(
        lambda a: trace(med, origin, (np.cos(a), np.sin(a)),
                        max_events=max_events).exited, ang)
    return float(sum(hits)) / n_angles


def _inner_is_convex(med: Medium):
    from .geometry import check_strict_convexity
    return check_strict_convexity(med.inner)


# -- traveltime envelope ---------------------------------------------------


@dataclass(frozen=True)
class TraveltimeRecord:
    """First-return traveltime observed at one outer-boundary point."""

    point: np.ndarray
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        if not self.tau > 0.0:
            raise ValueError(f"traveltime must be positive, got {self.tau}")


def oracle_traveltimes(med: Medium, points) -> List[TraveltimeRecord]:
    """First-arrival reflection times from the nearest interface point:
    tau(x) = 2 dist(x, interface) / sqrt(a2)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    c2 = float(np.sqrt(med.a2))
    th = np.linspace(0.0, 2.0 * np.pi, 2048, endpoint=False)
    curve_pts = med.inner.point(th)
    out = []
    for x in pts:
        d2 = np.sum((curve_pts - x) ** 2, axis=-1)
        k = int(np.argmin(d2))
        # parabolic refinement through the three nearest samples
        tm, t0, tp = th[k - 1], th[k], th[(k + 1) % th.size]
        if k + 1 == th.size:
            tp += 2.0 * np.pi
        fm, f0, fp = d2[k - 1], d2[k], d2[(k + 1) % th.size]
        denom = fm - 2.0 * f0 + fp
        shift = 0.5 * (fm - fp) / denom if denom > 0 else 0.0
        t_star = t0 + shift * (tp - tm) / 2.0
        dist = float(np.linalg.norm(med.inner.point(t_star) - x))
        out.append(TraveltimeRecord(x, 2.0 * dist / c2))
    return out


@dataclass
class EnvelopeResult:
    xs: np.ndarray
    ys: np.ndarray
    field: np.ndarray          # F(p) = min_x (|p - x| - r(x)), row-major
    contour: np.ndarray        # (k, 2) zero-crossing points
    spacing: float
    low_coverage: bool
    hausdorff: Optional[float] = None


def envelope_reconstruct(records: Sequence[TraveltimeRecord], a2: float,
                         grid_spec, *, truth: Optional[InterfaceCurve] = None
                         ) -> EnvelopeResult:
    """Interface estimate as the envelope of reflection circles.

    ``grid_spec`` is either an integer n (n-by-n raster over the record
    bounding box) or (n, (xmin, xmax, ymin, ymax)).  When the true curve
    is supplied the Hausdorff distance to it is reported.
    """
    if not records:
        raise ValueError("need at least one traveltime record")
    if not a2 > 0.0:
        raise ValueError("a2 must be positive")
    pts = np.asarray([r.point for r in records], dtype=float)
    radii = 0.5 * np.sqrt(a2) * np.asarray([r.tau for r in records])
    if len(records) > 1:
        extent = float(np.hypot(np.ptp(pts[:, 0]), np.ptp(pts[:, 1])))
        if np.min(radii) > extent:
            raise DomainError(
                "every reflection circle exceeds the domain size; "
                "no envelope can form")
    if isinstance(grid_spec, int):
        n = grid_spec
        pad = 0.05 * max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1.0)
        if len(records) < 3:
            pad += float(np.max(radii))    # degenerate: show the circles
        bounds = (pts[:, 0].min() - pad, pts[:, 0].max() + pad,
                  pts[:, 1].min() - pad, pts[:, 1].max() + pad)
    else:
        n, bounds = grid_spec
    if n < 2:
        raise ValueError("grid must have at least 2 points per axis")
    xs = np.linspace(bounds[0], bounds[1], n)
    ys = np.linspace(bounds[2], bounds[3], n)
    gx, gy = np.meshgrid(xs, ys)
    F = np.full((n, n), np.inf)
    for x, r in zip(pts, radii):
        np.minimum(F, np.hypot(gx - x[0], gy - x[1]) - r, out=F)
    contour = _zero_crossings(xs, ys, F)
    if len(records) >= 3:
        contour = _inside_record_loop(contour, pts)
    spacing = max(xs[1] - xs[0], ys[1] - ys[0])
    hd = None
    if truth is not None and contour.shape[0] > 0:
        hd = hausdorff_to_curve(contour, truth)
    return EnvelopeResult(xs, ys, F, contour, spacing,
                          low_coverage=len(records) < 16, hausdorff=hd)


def _inside_record_loop(contour: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Keep contour points inside the closed loop of measurement points.

    Reflection circles also envelope an outer branch beyond the
    measurement curve; the interface estimate is the inner one.  The
    records sit on a closed star-shaped boundary, so radial comparison
    against the angular interpolation of their radii separates the two.
    """
    if contour.shape[0] == 0:
        return contour
    c = pts.mean(axis=0)
    ang = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])
    order = np.argsort(ang)
    ang_s = ang[order]
    rad_s = np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1])[order]
    qa = np.arctan2(contour[:, 1] - c[1], contour[:, 0] - c[0])
    qr = np.hypot(contour[:, 0] - c[0], contour[:, 1] - c[1])
    lim = np.interp(qa, np.concatenate([ang_s - 2 * np.pi, ang_s,
                                        ang_s + 2 * np.pi]),
                    np.tile(rad_s, 3))
    return contour[qr < lim]


def _zero_crossings(xs, ys, F) -> np.ndarray:
    """Linearly interpolated zero points on grid edges (marching squares
    without connectivity; distances only need the point cloud)."""
    pts = []
    sx = F[:, :-1] * F[:, 1:] < 0.0
    if sx.any():
        j, i = np.nonzero(sx)
        f0, f1 = F[j, i], F[j, i + 1]
        t = f0 / (f0 - f1)
        pts.append(np.stack([xs[i] + t * (xs[i + 1] - xs[i]), ys[j]], axis=-1))
    sy = F[:-1, :] * F[1:, :] < 0.0
    if sy.any():
        j, i = np.nonzero(sy)
        f0, f1 = F[j, i], F[j + 1, i]
        t = f0 / (f0 - f1)
        pts.append(np.stack([xs[i], ys[j] + t * (ys[j + 1] - ys[j])], axis=-1))
    if not pts:
        return np.empty((0, 2))
    return np.concatenate(pts, axis=0)


def hausdorff_to_curve(points: np.ndarray, curve: InterfaceCurve,
                       n_samples: int = 4096) -> float:
    """Symmetric Hausdorff distance between a point cloud and a curve."""
    th = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
    ref = curve.point(th)
    d = np.sqrt(((points[:, None, :] - ref[None, :, :]) ** 2).sum(-1))
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))
