"""Planar domain geometry in polar Fourier form.

Both the inclusion boundary and the outer boundary are stored as radius
functions about a pole,

    rho(theta) = c0 + sum_k (a_k cos(k theta) + b_k sin(k theta)),

which makes radial projection, curvature, and ray intersections cheap and
exact up to the stored modes.  The inclusion must be strictly convex; the
outer curve only needs to be star shaped about its pole, which the polar
representation gives by construction.

The weight construction needs the radius function about poles other than
the stored one.  ``InterfaceCurve.repole`` computes it by bisecting the
ray-curve crossing for a fan of directions (uniqueness follows from star
shape) and refitting the Fourier series through the sampled radii.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ResolutionError

_BISECT_TOL = 1e-12


def _as_point(x) -> np.ndarray:
    p = np.asarray(x, dtype=float)
    if p.shape != (2,):
        raise ValueError(f"expected a 2d point, got shape {p.shape}")
    return p


@dataclass(frozen=True)
class InterfaceCurve:
    """Closed curve rho(theta) about ``pole`` with Fourier coefficients
    ``coeffs = [c0, a1, b1, a2, b2, ...]``."""

    pole: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pole", _as_point(self.pole))
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if c.ndim != 1 or c.size < 1:
            raise ValueError("coeffs must be a 1d array [c0, a1, b1, ...]")
        object.__setattr__(self, "coeffs", c)
        n_modes = c.size // 2
        a = np.zeros(n_modes)
        b = np.zeros(n_modes)
        a[: len(c[1::2])] = c[1::2]
        b[: len(c[2::2])] = c[2::2]
        object.__setattr__(self, "_ks", np.arange(1, n_modes + 1, dtype=float))
        object.__setattr__(self, "_a", a)
        object.__setattr__(self, "_b", b)
        if self.min_radius() <= 0.0:
            raise DomainError("curve radius must stay positive")

    # -- radius and derivatives ------------------------------------------

    def _harmonics(self):
        return self._ks, self._a, self._b

    def radius(self, theta):
        """rho(theta); theta may be any array shape."""
        theta = np.asarray(theta, dtype=float)
        ks, a, b = self._harmonics()
        if ks.size == 0:
            return np.full_like(theta, self.coeffs[0], dtype=float)
        kt = np.multiply.outer(theta, ks)
        return self.coeffs[0] + np.cos(kt) @ a + np.sin(kt) @ b

    def radius_d1(self, theta):
        theta = np.asarray(theta, dtype=float)
        ks, a, b = self._harmonics()
        if ks.size == 0:
            return np.zeros_like(theta, dtype=float)
        kt = np.multiply.outer(theta, ks)
        return -np.sin(kt) @ (ks * a) + np.cos(kt) @ (ks * b)

    def radius_d2(self, theta):
        theta = np.asarray(theta, dtype=float)
        ks, a, b = self._harmonics()
        if ks.size == 0:
            return np.zeros_like(theta, dtype=float)
        kt = np.multiply.outer(theta, ks)
        return -np.cos(kt) @ (ks * ks * a) - np.sin(kt) @ (ks * ks * b)

    def min_radius(self, n: int = 2048) -> float:
        th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        return float(np.min(self.radius(th)))

    def max_radius(self, n: int = 2048) -> float:
        th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        return float(np.max(self.radius(th)))

    # -- points, normals, containment ------------------------------------

    def point(self, theta):
        """Curve point(s) at polar angle theta."""
        theta = np.asarray(theta, dtype=float)
        r = self.radius(theta)
        return self.pole + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)

    def outward_normal(self, theta):
        """Unit outward normal; for gamma = pole + rho e_r the tangent is
        rho' e_r + rho e_theta, so rotating by -90 deg gives rho e_r - rho' e_theta."""
        theta = np.asarray(theta, dtype=float)
        r = self.radius(theta)
        r1 = self.radius_d1(theta)
        er = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        et = np.stack([-np.sin(theta), np.cos(theta)], axis=-1)
        n = r[..., None] * er - r1[..., None] * et
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def speed(self, theta):
        """|d gamma / d theta|, the arc length density."""
        theta = np.asarray(theta, dtype=float)
        return np.hypot(self.radius(theta), self.radius_d1(theta))

    def angle_of(self, x):
        """Polar angle(s) of point(s) x about the pole."""
        x = np.asarray(x, dtype=float)
        d = x - self.pole
        return np.arctan2(d[..., 1], d[..., 0])

    def radial_margin(self, x):
        """rho(theta(x)) - |x - pole|; positive strictly inside."""
        x = np.asarray(x, dtype=float)
        d = x - self.pole
        r = np.hypot(d[..., 0], d[..., 1])
        return self.radius(np.arctan2(d[..., 1], d[..., 0])) - r

    def contains(self, x):
        return self.radial_margin(x) > 0.0

    # -- ray intersection and re-poling -----------------------------------

    def ray_exit(self, origins, directions, tol: float = _BISECT_TOL):
        """Distance along each ray from an interior origin to the curve.

        Bisection on g(t) = |P(t) - pole| - rho(angle(P(t))); star shape
        about the pole gives exactly one sign change for interior origins.
        """
        origins = np.atleast_2d(np.asarray(origins, dtype=float))
        directions = np.atleast_2d(np.asarray(directions, dtype=float))
        origins, directions = np.broadcast_arrays(origins, directions)
        if np.any(self.radial_margin(origins) <= 0.0):
            raise DomainError("ray origin must lie strictly inside the curve")

        def g(t):
            p = origins + t[:, None] * directions
            d = p - self.pole
            r = np.hypot(d[:, 0], d[:, 1])
            return r - self.radius(np.arctan2(d[:, 1], d[:, 0]))

        norm_dir = np.linalg.norm(directions, axis=1)
        if np.any(norm_dir <= 0):
            raise ValueError("ray direction must be nonzero")
        t_hi = (np.linalg.norm(origins - self.pole, axis=1)
                + self.max_radius() + 1.0) / norm_dir
        t_lo = np.zeros_like(t_hi)
        n_iter = int(np.ceil(np.log2(np.max(t_hi) / tol))) + 2
        for _ in range(n_iter):
            mid = 0.5 * (t_lo + t_hi)
            inside = g(mid) < 0.0
            t_lo = np.where(inside, mid, t_lo)
            t_hi = np.where(inside, t_hi, mid)
        return 0.5 * (t_lo + t_hi)

    def repole(self, new_pole, n_samples: int = 2048) -> "InterfaceCurve":
        """Same curve, radius function re-expanded about ``new_pole``.

        Radii are sampled along n_samples rays and refit by FFT.  The fit
        is checked against the samples; failure means the pole is too close
        to the curve for the requested sample count.
        """
        new_pole = _as_point(new_pole)
        if not bool(self.contains(new_pole)):
            raise DomainError("new pole must lie inside the curve")
        th = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
        radii = self.ray_exit(np.tile(new_pole, (n_samples, 1)), dirs)
        spec = np.fft.rfft(radii) / n_samples
        c0 = spec[0].real
        a = 2.0 * spec[1:].real
        b = -2.0 * spec[1:].imag
        # trim negligible high modes to keep later evaluations cheap
        mags = np.abs(a) + np.abs(b)
        keep = mags > 1e-14 * max(abs(c0), 1.0)
        n_keep = int(np.max(np.nonzero(keep)[0])) + 1 if np.any(keep) else 0
        coeffs = np.empty(1 + 2 * n_keep)
        coeffs[0] = c0
        coeffs[1::2] = a[:n_keep]
        coeffs[2::2] = b[:n_keep]
        out = InterfaceCurve(new_pole, coeffs)
        err = float(np.max(np.abs(out.radius(th) - radii)))
        if err > 1e-9 * max(c0, 1.0):
            raise ResolutionError(
                f"re-poling fit error {err:.2e}; raise n_samples or move the pole")
        return out


def rho_of(curve: InterfaceCurve, x) -> np.ndarray:
    """Radius of the curve along the ray from its pole through x."""
    return curve.radius(curve.angle_of(x))


def radial_point(curve: InterfaceCurve, x) -> np.ndarray:
    """Projection of x onto the curve along the ray from the pole."""
    x = np.asarray(x, dtype=float)
    d = x - curve.pole
    r = np.hypot(d[..., 0], d[..., 1])
    if np.any(r == 0.0):
        raise DomainError("radial projection undefined at the pole itself")
    th = np.arctan2(d[..., 1], d[..., 0])
    return curve.pole + (rho_of(curve, x) / r)[..., None] * d


def curvature(curve: InterfaceCurve, theta):
    """Signed curvature of the polar curve,
    kappa = (rho^2 + 2 rho'^2 - rho rho'') / (rho^2 + rho'^2)^(3/2)."""
    r = curve.radius(theta)
    r1 = curve.radius_d1(theta)
    r2 = curve.radius_d2(theta)
    return (r * r + 2.0 * r1 * r1 - r * r2) / np.power(r * r + r1 * r1, 1.5)


def check_strict_convexity(curve: InterfaceCurve, n_samples: int = 4096):
    """(is_convex, min_curvature) over a uniform angle grid."""
    th = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
    kmin = float(np.min(curvature(curve, th)))
    return kmin > 0.0, kmin


def _refine_extremum(f, th0: float, span: float, minimize: bool, iters: int = 60):
    """Golden-section refinement of a sampled extremum of f over angle."""
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    lo, hi = th0 - span, th0 + span
    sgn = 1.0 if minimize else -1.0
    c = hi - inv_phi * (hi - lo)
    d = lo + inv_phi * (hi - lo)
    fc, fd = sgn * f(c), sgn * f(d)
    for _ in range(iters):
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - inv_phi * (hi - lo)
            fc = sgn * f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + inv_phi * (hi - lo)
            fd = sgn * f(d)
    tm = 0.5 * (lo + hi)
    return tm, f(tm)


def _extreme_distance(curve: InterfaceCurve, x, minimize: bool, n_coarse: int = 4096):
    x = _as_point(x)

    def dist(theta):
        p = curve.point(theta)
        return float(np.hypot(p[..., 0] - x[0], p[..., 1] - x[1]))

    th = np.linspace(0.0, 2.0 * np.pi, n_coarse, endpoint=False)
    p = curve.point(th)
    d = np.hypot(p[:, 0] - x[0], p[:, 1] - x[1])
    i = int(np.argmin(d) if minimize else np.argmax(d))
    span = 2.0 * np.pi / n_coarse
    _, val = _refine_extremum(dist, th[i], span, minimize)
    return float(val)


@dataclass(frozen=True)
class DomainPair:
    """Strictly convex inclusion (speed squared a1) inside an outer curve
    (speed squared a2 in the annulus), with a1 > a2 > 0."""

    inner: InterfaceCurve
    outer: InterfaceCurve
    a1: float
    a2: float
    clearance: float = field(init=False)

    def __post_init__(self):
        if not (self.a1 > self.a2 > 0.0):
            raise DomainError(
                f"need a1 > a2 > 0, got a1={self.a1}, a2={self.a2}")
        ok, kmin = check_strict_convexity(self.inner)
        if not ok:
            raise DomainError(
                f"inclusion boundary must be strictly convex (min curvature {kmin:.3g})")
        th = np.linspace(0.0, 2.0 * np.pi, 2048, endpoint=False)
        margin = float(np.min(self.outer.radial_margin(self.inner.point(th))))
        if margin <= 0.0:
            raise DomainError(
                f"inclusion must lie strictly inside the outer curve (margin {margin:.3g})")
        object.__setattr__(self, "clearance", margin)

    def label(self, x):
        """Region labels: 1 inclusion, 2 annulus, 0 outside."""
        x = np.asarray(x, dtype=float)
        inside_outer = self.outer.contains(x)
        inside_inner = self.inner.contains(x)
        return np.where(inside_inner, 1, np.where(inside_outer, 2, 0)).astype(np.int8)

    def speed_squared(self, x):
        """Piecewise speed squared a(x); 0 outside."""
        lbl = self.label(x)
        return np.where(lbl == 1, self.a1, np.where(lbl == 2, self.a2, 0.0))


@dataclass(frozen=True)
class PoleData:
    """Distances controlling the observation-time bound for one pole."""

    pole: np.ndarray
    alpha: float     # Euclidean distance from the pole to the inclusion boundary
    d_max: float     # max distance from the pole to the inclusion boundary
    r_sup: float     # sup over the annulus of |x - radial projection of x|

    @property
    def d0(self) -> float:
        return (self.r_sup + self.alpha) / self.alpha


def pole_data(dp: DomainPair, x0, n_samples: int = 4096) -> PoleData:
    """Geometric data for a weight pole inside the inclusion.

    r_sup is realized on the outer boundary because |x - y(x)| grows along
    each ray, so it equals the max over directions of the gap between the
    outer and inner crossing distances.
    """
    x0 = _as_point(x0)
    if not bool(dp.inner.contains(x0)):
        raise DomainError("weight pole must lie inside the inclusion")
    alpha = _extreme_distance(dp.inner, x0, minimize=True, n_coarse=n_samples)
    d_max = _extreme_distance(dp.inner, x0, minimize=False, n_coarse=n_samples)

    th = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
    dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
    orig = np.tile(x0, (n_samples, 1))
    gap_samples = dp.outer.ray_exit(orig, dirs) - dp.inner.ray_exit(orig, dirs)
    i = int(np.argmax(gap_samples))

    def gap(theta):
        d = np.array([[np.cos(theta), np.sin(theta)]])
        o = x0[None, :]
        return float(dp.outer.ray_exit(o, d)[0] - dp.inner.ray_exit(o, d)[0])

    _, r_sup = _refine_extremum(gap, th[i], 2.0 * np.pi / n_samples, minimize=False)
    return PoleData(pole=x0, alpha=alpha, d_max=d_max, r_sup=float(r_sup))


def epsilon_bound(dp: DomainPair, x1, x2) -> float:
    """Strict upper bound for the pole cutoff radius in the two-pole setup.

    With d = |x1 - x2|/2, alpha_j the pole-to-inclusion distances and D_j the
    max distances, the bound is min(d alpha_1 / D_2, d alpha_2 / D_1), capped
    just below min(alpha_1, alpha_2) so the cut ball stays in the inclusion.
    """
    x1 = _as_point(x1)
    x2 = _as_point(x2)
    d = 0.5 * float(np.linalg.norm(x1 - x2))
    if d <= 0.0:
        raise DomainError("the two poles must be distinct")
    p1 = pole_data(dp, x1)
    p2 = pole_data(dp, x2)
    cap = (1.0 - 1e-6) * min(p1.alpha, p2.alpha)
    return min(d * p1.alpha / p2.d_max, d * p2.alpha / p1.d_max, cap)


def ellipse_curve(a: float, b: float, center=(0.0, 0.0), n_modes: int = 64) -> InterfaceCurve:
    """Axis-aligned ellipse fitted to the polar Fourier form.

    rho(theta) = a b / sqrt(b^2 cos^2 + a^2 sin^2) is analytic, so the fit
    is accurate to machine precision for modest n_modes.
    """
    if a <= 0 or b <= 0:
        raise DomainError("ellipse semi-axes must be positive")
    n = max(8 * n_modes, 256)
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    rho = a * b / np.sqrt((b * np.cos(th)) ** 2 + (a * np.sin(th)) ** 2)
    spec = np.fft.rfft(rho) / n
    coeffs = np.empty(1 + 2 * n_modes)
    coeffs[0] = spec[0].real
    coeffs[1::2] = 2.0 * spec[1: n_modes + 1].real
    coeffs[2::2] = -2.0 * spec[1: n_modes + 1].imag
    return InterfaceCurve(np.asarray(center, dtype=float), coeffs)


def circle_curve(radius: float, center=(0.0, 0.0)) -> InterfaceCurve:
    if radius <= 0:
        raise DomainError("circle radius must be positive")
    return InterfaceCurve(np.asarray(center, dtype=float), np.array([radius]))
