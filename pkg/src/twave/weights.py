"""Interface-adapted weight function and its grid certification.

The weight attached to a pole x0 inside the inclusion is

    phi(x, t) = eta(|x - x0|) abar(x) |x - x0|^2 / rho(x)^2 - beta t^2 + M(x)

where rho(x) is the radius of the inclusion boundary seen from x0 along
the ray through x, abar swaps the two squared speeds across the
interface (a2 inside, a1 in the annulus), M is a region-wise additive
constant and eta tapers the singular factor to zero near the pole.  The
crossed abar makes phi continuous across the interface exactly when
M1 - M2 = a1 - a2, and makes a1 phi_1 and a2 phi_2 share every spatial
derivative there, which is what the estimates downstream lean on.

Derivatives are closed-form in polar coordinates about the pole wherever
the taper is flat; inside the taper they fall back to centered
differences of phi itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigError, DomainError, InfeasibleWindowError, StencilError
from .fdops import fd_weights, smoothstep
from .geometry import DomainPair, InterfaceCurve, PoleData, pole_data

__all__ = [
    "WeightParams",
    "WeightField",
    "ConditionReport",
    "Prop1Report",
    "TimeReport",
    "ParameterWindow",
    "cutoff_eta",
    "phi",
    "grad_hess_phi",
    "check_prop1",
    "parameter_window",
    "minimal_time",
    "check_time_monotonicity",
    "build_weight_field",
    "domain_diameter",
    "default_M2",
]


@dataclass(frozen=True)
class WeightParams:
    """Parameters of one weight pole.

    Structural constraints are enforced at construction.  The
    geometry-dependent ones (cut ball inside the inclusion, gamma inside
    the admissible window, continuity of the interface trace) are
    certified by check_prop1 and parameter_window rather than assumed.
    """

    a1: float
    a2: float
    beta: float
    gamma: float
    M1: float
    M2: float
    x0: np.ndarray
    eps: float
    eps1: float
    eps2: float
    s: float = 1.0
    lam: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(2))
        if not (self.a1 > self.a2 > 0.0):
            raise ConfigError(f"need a1 > a2 > 0, got a1={self.a1}, a2={self.a2}")
        if self.M1 <= 0.0 or self.M2 <= 0.0:
            raise ConfigError("additive constants M1, M2 must be positive")
        if not (0.0 < self.eps1 < self.eps2 < self.eps):
            raise ConfigError(
                "taper radii must satisfy 0 < eps1 < eps2 < eps, got "
                f"({self.eps1}, {self.eps2}, {self.eps})")
        if not (0.0 < self.gamma < 1.0):
            raise ConfigError(f"gamma must lie strictly in (0, 1), got {self.gamma}")
        if self.beta <= 0.0 or self.T <= 0.0:
            raise ConfigError("beta and T must be positive")
        if self.beta * self.T ** 2 >= min(self.M1, self.M2):
            raise ConfigError(
                "beta*T^2 must stay below min(M1, M2); raise M2 or shrink beta")
        if self.s < 0.0 or self.lam <= 0.0:
            raise ConfigError("need s >= 0 and lam > 0")

    @classmethod
    def from_M2(cls, *, a1, a2, beta, gamma, M2, x0, eps, eps1, eps2,
                s: float = 1.0, lam: float = 1.0, T: float = 1.0):
        """Constructor that links M1 = M2 + a1 - a2, which is exactly the
        choice that makes the weight continuous across the interface."""
        return cls(a1=a1, a2=a2, beta=beta, gamma=gamma, M1=M2 + a1 - a2,
                   M2=M2, x0=x0, eps=eps, eps1=eps1, eps2=eps2,
                   s=s, lam=lam, T=T)

    @property
    def M_min(self) -> float:
        return min(self.M1, self.M2)


def default_M2(a1: float, beta: float, T: float) -> float:
    """Smallest annulus constant keeping the end-band condition
    beta*T^2 < M satisfiable; a1 keeps exp(lam*phi) well scaled."""
    return max(a1, 1.1 * beta * T * T)


def cutoff_eta(r, eps1: float, eps2: float):
    """Smooth radial taper: 0 for r <= eps1, 1 for r >= eps2."""
    if not 0.0 < eps1 < eps2:
        raise ConfigError(f"need 0 < eps1 < eps2, got ({eps1}, {eps2})")
    return smoothstep((np.asarray(r, dtype=float) - eps1) / (eps2 - eps1))


def _points(x):
    pts = np.asarray(x, dtype=float)
    if pts.shape[-1] != 2:
        raise DomainError("points need a trailing dimension of length 2")
    return pts.reshape(-1, 2), pts.shape[:-1]


def _scale(curve: InterfaceCurve) -> float:
    return float(abs(curve.coeffs[0])) or 1.0


def _rho_curve(params: WeightParams, geom: DomainPair) -> InterfaceCurve:
    """Inclusion boundary as a polar graph about the pole.  Callers that
    evaluate repeatedly should compute this once and pass it through."""
    inner = geom.inner
    if float(np.linalg.norm(params.x0 - inner.pole)) <= 1e-13 * _scale(inner):
        return inner
    if not bool(inner.contains(params.x0)):
        raise DomainError("weight pole must lie strictly inside the inclusion")
    return inner.repole(params.x0)


def phi(params: WeightParams, geom: DomainPair, x, t=0.0, *, rho_curve=None):
    """Weight value at points x and time t (scalar or broadcastable).

    The two one-sided limits agree on the interface whenever
    M1 - M2 = a1 - a2, so no side argument is needed for values.
    """
    pts, lead = _points(x)
    out_margin = geom.outer.radial_margin(pts)
    tol = 1e-9 * _scale(geom.outer)
    if np.any(out_margin < -tol):
        n_bad = int(np.sum(out_margin < -tol))
        raise DomainError(f"{n_bad} evaluation point(s) outside the domain")
    rc = rho_curve if rho_curve is not None else _rho_curve(params, geom)
    is_inner = geom.inner.radial_margin(pts) > 0.0
    abar = np.where(is_inner, params.a2, params.a1)
    M = np.where(is_inner, params.M1, params.M2)
    d = pts - params.x0
    r = np.hypot(d[:, 0], d[:, 1])
    rho = rc.radius(np.arctan2(d[:, 1], d[:, 0]))
    space = cutoff_eta(r, params.eps1, params.eps2) * abar * (r / rho) ** 2
    out = (space + M).reshape(lead) - params.beta * np.asarray(t, dtype=float) ** 2
    return float(out) if out.ndim == 0 else out


def _polar_derivatives(rc: InterfaceCurve, abar, r, theta):
    """Closed-form gradient/Hessian/Laplacian of abar r^2 / rho(theta)^2
    in the frame (e_r, e_theta), rotated to Cartesian axes."""
    rho = rc.radius(theta)
    d1 = rc.radius_d1(theta)
    d2 = rc.radius_d2(theta)
    c2 = 2.0 * abar / rho ** 2
    ct, st = np.cos(theta), np.sin(theta)
    gr = c2 * r
    gt = -c2 * r * d1 / rho
    grad = np.stack([gr * ct - gt * st, gr * st + gt * ct], axis=-1)
    h_rr = c2
    h_rt = -c2 * d1 / rho
    h_tt = c2 * (3.0 * d1 ** 2 - rho * d2 + rho ** 2) / rho ** 2
    h11 = ct ** 2 * h_rr - 2.0 * ct * st * h_rt + st ** 2 * h_tt
    h12 = ct * st * (h_rr - h_tt) + (ct ** 2 - st ** 2) * h_rt
    h22 = st ** 2 * h_rr + 2.0 * ct * st * h_rt + ct ** 2 * h_tt
    hess = np.stack([np.stack([h11, h12], axis=-1),
                     np.stack([h12, h22], axis=-1)], axis=-2)
    return grad, hess, h_rr + h_tt


def _taper_derivatives(params, geom, rc, pts):
    # centered differences of phi(); the taper transition is steep, so
    # the step follows the transition width rather than the domain size
    h = max(1e-5 * domain_diameter(geom.outer),
            1e-3 * (params.eps2 - params.eps1))

    def f(shift):
        return np.atleast_1d(phi(params, geom, pts + shift, 0.0, rho_curve=rc))

    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    f0 = f(np.zeros(2))
    fxp, fxm, fyp, fym = f(ex), f(-ex), f(ey), f(-ey)
    fpp, fpm = f(ex + ey), f(ex - ey)
    fmp, fmm = f(-ex + ey), f(-ex - ey)
    gx = (fxp - fxm) / (2.0 * h)
    gy = (fyp - fym) / (2.0 * h)
    hxx = (fxp - 2.0 * f0 + fxm) / h ** 2
    hyy = (fyp - 2.0 * f0 + fym) / h ** 2
    hxy = (fpp - fpm - fmp + fmm) / (4.0 * h ** 2)
    grad = np.stack([gx, gy], axis=-1)
    hess = np.stack([np.stack([hxx, hxy], axis=-1),
                     np.stack([hxy, hyy], axis=-1)], axis=-2)
    return grad, hess, hxx + hyy


def grad_hess_phi(params: WeightParams, geom: DomainPair, x, t=0.0, *,
                  side: Optional[str] = None, rho_curve=None):
    """Spatial gradient, Hessian, Laplacian plus phi_t and phi_tt.

    Points sitting exactly on the interface are ambiguous because abar
    jumps there; pass side="inner" or side="outer" to pick the limit.
    """
    pts, lead = _points(x)
    rc = rho_curve if rho_curve is not None else _rho_curve(params, geom)
    if np.any(geom.outer.radial_margin(pts) < -1e-9 * _scale(geom.outer)):
        raise DomainError("evaluation point(s) outside the domain")
    in_margin = geom.inner.radial_margin(pts)
    if side is None:
        if np.any(np.abs(in_margin) <= 1e-12 * _scale(geom.inner)):
            raise DomainError(
                "point(s) on the interface: pass side='inner' or side='outer'")
        is_inner = in_margin > 0.0
    elif side == "inner":
        is_inner = np.ones(len(pts), dtype=bool)
    elif side == "outer":
        is_inner = np.zeros(len(pts), dtype=bool)
    else:
        raise ConfigError(f"side must be 'inner' or 'outer', got {side!r}")
    abar = np.where(is_inner, params.a2, params.a1)

    d = pts - params.x0
    r = np.hypot(d[:, 0], d[:, 1])
    theta = np.arctan2(d[:, 1], d[:, 0])
    grad = np.zeros((len(pts), 2))
    hess = np.zeros((len(pts), 2, 2))
    lap = np.zeros(len(pts))
    ana = r >= params.eps2
    if np.any(ana):
        g, H, L = _polar_derivatives(rc, abar[ana], r[ana], theta[ana])
        grad[ana], hess[ana], lap[ana] = g, H, L
    if np.any(~ana):
        g, H, L = _taper_derivatives(params, geom, rc, pts[~ana])
        grad[~ana], hess[~ana], lap[~ana] = g, H, L

    phi_t = -2.0 * params.beta * np.asarray(t, dtype=float)
    phi_tt = -2.0 * params.beta
    if lead == ():
        pt = float(phi_t) if phi_t.ndim == 0 else phi_t
        return grad[0], hess[0], float(lap[0]), pt, phi_tt
    return (grad.reshape(lead + (2,)), hess.reshape(lead + (2, 2)),
            lap.reshape(lead), phi_t, phi_tt)


# -- certification ---------------------------------------------------------

@dataclass(frozen=True)
class ConditionReport:
    name: str
    value: float
    threshold: float
    passed: bool
    witness: Optional[np.ndarray] = None
    note: str = ""


@dataclass(frozen=True)
class Prop1Report:
    """Grid certificate for the weight's pointwise properties."""

    delta: float            # min of the gradient floor and the normal slope
    delta1: float           # smallest Hessian eigenvalue over the sample set
    h: float                # lattice spacing used for the area scan
    h_d: float              # stencil step used for the transmission check
    sup_laplacian: float    # max |lap phi| off the cut ball (window input)
    conditions: Dict[str, ConditionReport]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    def rows(self):
        order = ("grad_floor", "normal_slope", "continuity",
                 "derivative_match", "laplacian_excess", "convexity")
        return [(n, self.conditions[n].value, self.conditions[n].threshold,
                 self.conditions[n].passed) for n in order]


def _lattice(geom: DomainPair, nx: int):
    th = np.linspace(0.0, 2.0 * np.pi, 1024, endpoint=False)
    b = geom.outer.point(th)
    x0, x1 = float(b[:, 0].min()), float(b[:, 0].max())
    y0, y1 = float(b[:, 1].min()), float(b[:, 1].max())
    h = (x1 - x0) / nx
    ny = max(4, int(math.ceil((y1 - y0) / h)))
    xs = x0 + (np.arange(nx) + 0.5) * h
    ys = y0 + (np.arange(ny) + 0.5) * h
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    return pts, geom.label(pts), h


_MATCH_ORDERS = ((1, 0), (0, 1), (2, 0), (1, 1), (0, 2),
                 (3, 0), (2, 1), (1, 2), (0, 3))


def _derivative_match(params, geom, rc, th, h_d):
    """Worst transmission residual max |a1 D phi_1 - a2 D phi_2| over all
    derivative orders 1..3, via 4x4 tensor stencils displaced 3.5 h_d off
    the interface (order 0 is excluded: the additive constants differ by
    construction and belong to the continuity condition instead)."""
    pts = geom.inner.point(th)
    nu = geom.inner.outward_normal(th)
    offs = np.array([-1.5, -0.5, 0.5, 1.5]) * h_d
    ox, oy = np.meshgrid(offs, offs, indexing="ij")
    box = np.stack([ox, oy], axis=-1)[None]      # (1, 4, 4, 2)
    vals = {}
    for name, sign, want in (("inner", -1.0, 1), ("outer", 1.0, 2)):
        centers = pts + sign * 3.5 * h_d * nu
        stencil = centers[:, None, None, :] + box
        if not np.all(geom.label(stencil) == want):
            raise StencilError(
                f"transmission stencil at step {h_d:.3g} leaves the {name} "
                "region; shrink the step")
        if name == "inner":
            rr = np.linalg.norm(stencil - params.x0, axis=-1)
            if float(rr.min()) < params.eps2:
                raise StencilError(
                    "transmission stencil reaches into the taper; shrink the "
                    "step or the cut radii")
        vals[name] = phi(params, geom, stencil, 0.0, rho_curve=rc)
    w1 = {k: fd_weights(offs, k) for k in range(4)}
    worst = 0.0
    for kx, ky in _MATCH_ORDERS:
        w = np.outer(w1[kx], w1[ky])
        d_in = np.einsum("ij,nij->n", w, vals["inner"])
        d_out = np.einsum("ij,nij->n", w, vals["outer"])
        worst = max(worst, float(np.max(np.abs(
            params.a1 * d_in - params.a2 * d_out))))
    return worst


def check_prop1(params: WeightParams, geom: DomainPair, *, nx: int = 192,
                n_interface: int = 720, h_d: Optional[float] = None) -> Prop1Report:
    """Certify the weight's pointwise properties on a lattice.

    Conditions reported (extremal value, threshold, pass):

    * ``grad_floor``: min |grad phi| off the cut ball; also checks the
      pointwise floor 2 abar eps / diam^2.
    * ``normal_slope``: min of grad phi_1 . nu over the interface.
    * ``continuity``: jump of the one-sided interface traces,
      |(a2 + M1) - (a1 + M2)|.
    * ``derivative_match``: transmission residual of scaled derivatives
      up to third order; passes when halving the stencil step shrinks it.
    * ``laplacian_excess``: min of (lap phi - 2 abar / rho^2).
    * ``convexity``: min Hessian eigenvalue (reported as delta1).
    """
    x0 = params.x0
    rc = _rho_curve(params, geom)
    pd = pole_data(geom, x0)
    if params.eps >= pd.alpha:
        raise ConfigError(
            f"cut radius eps={params.eps} must stay below the pole-to-interface "
            f"distance {pd.alpha:.6g}")
    pts, labels, h = _lattice(geom, nx)
    r = np.linalg.norm(pts - x0, axis=-1)
    margin = geom.inner.radial_margin(pts)
    q = ((labels > 0) & (r > params.eps)
         & (np.abs(margin) > 1e-12 * _scale(geom.inner)))
    qp = pts[q]
    grad, hess, lap, _, _ = grad_hess_phi(params, geom, qp, 0.0, rho_curve=rc)
    gn = np.linalg.norm(grad, axis=-1)
    abar = np.where(margin[q] > 0.0, params.a2, params.a1)
    diam = domain_diameter(geom.outer)
    floor = 2.0 * abar * params.eps / diam ** 2
    slack = float(np.min(gn - floor))
    i = int(np.argmin(gn))
    cond_a = ConditionReport(
        "grad_floor", float(gn[i]), 0.0,
        bool(gn[i] > 0.0 and slack > -1e-9), witness=qp[i],
        note=f"min slack over the pointwise floor: {slack:.3e}")

    th = np.linspace(0.0, 2.0 * np.pi, n_interface, endpoint=False)
    ipts = geom.inner.point(th)
    nu = geom.inner.outward_normal(th)
    gi, _, _, _, _ = grad_hess_phi(params, geom, ipts, 0.0,
                                   side="inner", rho_curve=rc)
    slope = np.sum(gi * nu, axis=-1)
    j = int(np.argmin(slope))
    cond_b = ConditionReport("normal_slope", float(slope[j]), 0.0,
                             bool(slope[j] > 0.0), witness=ipts[j])

    resid_c = abs((params.a2 + params.M1) - (params.a1 + params.M2))
    cond_c = ConditionReport("continuity", float(resid_c), 1e-9,
                             bool(resid_c <= 1e-9))

    if h_d is None:
        reach = min(geom.clearance, pd.alpha - params.eps)
        h_d = reach / 24.0
    res_fine = _derivative_match(params, geom, rc, th, h_d)
    res_coarse = _derivative_match(params, geom, rc, th, 2.0 * h_d)
    thr_d = 0.8 * res_coarse + 1e-9
    cond_d = ConditionReport(
        "derivative_match", float(res_fine), float(thr_d),
        bool(res_fine <= thr_d),
        note=f"residual {res_coarse:.3e} at step {2 * h_d:.3g} -> "
             f"{res_fine:.3e} at {h_d:.3g}")

    dq = qp - x0
    rho_q = rc.radius(np.arctan2(dq[:, 1], dq[:, 0]))
    excess = lap - 2.0 * abar / rho_q ** 2
    k = int(np.argmin(excess))
    cond_e = ConditionReport("laplacian_excess", float(excess[k]), 0.0,
                             bool(excess[k] > 0.0), witness=qp[k])

    tr = hess[:, 0, 0] + hess[:, 1, 1]
    disc = np.sqrt((0.5 * (hess[:, 0, 0] - hess[:, 1, 1])) ** 2
                   + hess[:, 0, 1] ** 2)
    eigmin = 0.5 * tr - disc
    m = int(np.argmin(eigmin))
    cond_f = ConditionReport("convexity", float(eigmin[m]), 0.0,
                             bool(eigmin[m] > 0.0), witness=qp[m])

    conditions = {c.name: c for c in
                  (cond_a, cond_b, cond_c, cond_d, cond_e, cond_f)}
    return Prop1Report(delta=float(min(gn[i], slope[j])),
                       delta1=float(eigmin[m]), h=h, h_d=float(h_d),
                       sup_laplacian=float(np.max(np.abs(lap))),
                       conditions=conditions)


@dataclass(frozen=True)
class TimeReport:
    """Certificate that the weight peaks at t = 0 and dips below its
    additive constant near the ends of the time window."""

    decay_residual: float   # max |phi(x,t) - phi(x,0) + beta t^2|
    peak_ok: bool           # M <= phi(x, 0) everywhere
    band_ok: bool           # phi(x, +-T) < M everywhere
    sup_space: float        # sup of the spatial part eta abar (r/rho)^2
    band_margin: float      # beta T^2 - sup_space
    delta_max: float        # widest end band on which phi < M holds
    h: float
    witness: Optional[np.ndarray] = None

    @property
    def passed(self) -> bool:
        return self.peak_ok and self.band_ok and self.decay_residual <= 1e-10

    def rows(self):
        return [
            ("monotone_decay", self.decay_residual, 1e-10,
             self.decay_residual <= 1e-10),
            ("peak_at_zero", self.sup_space, 0.0, self.peak_ok),
            ("end_band", self.band_margin, 0.0, self.band_ok),
            ("band_width", self.delta_max, 0.0, self.band_ok),
        ]


def check_time_monotonicity(params: WeightParams, geom: DomainPair, *,
                            nx: int = 192, nt: int = 33) -> TimeReport:
    """Grid check of the end-of-window behavior.

    The time dependence is the exact parabola -beta t^2, so the checks
    reduce to bounds on the spatial part; the parabola itself is verified
    on a subsample as a guard against regressions in phi().
    """
    rc = _rho_curve(params, geom)
    pts, labels, h = _lattice(geom, nx)
    p_in = pts[labels > 0]
    is_inner = geom.inner.radial_margin(p_in) > 0.0
    M = np.where(is_inner, params.M1, params.M2)
    space = phi(params, geom, p_in, 0.0, rho_curve=rc) - M
    sup = float(np.max(space))
    witness = p_in[int(np.argmax(space))]
    peak_ok = bool(np.min(space) >= -1e-12)
    bt2 = params.beta * params.T ** 2
    band_ok = bool(sup < bt2)
    delta_max = params.T - math.sqrt(sup / params.beta) if band_ok else 0.0

    sub = p_in[:: max(1, len(p_in) // 512)]
    v0 = phi(params, geom, sub, 0.0, rho_curve=rc)
    resid = 0.0
    for t in np.linspace(-params.T, params.T, nt):
        vt = phi(params, geom, sub, float(t), rho_curve=rc)
        resid = max(resid, float(np.max(np.abs(vt - v0 + params.beta * t * t))))
    return TimeReport(decay_residual=resid, peak_ok=peak_ok, band_ok=band_ok,
                      sup_space=sup, band_margin=float(bt2 - sup),
                      delta_max=float(delta_max), h=h, witness=witness)


# -- admissible parameters -------------------------------------------------

@dataclass(frozen=True)
class ParameterWindow:
    """Admissible (beta, gamma) region for the conjugated-operator split.

    beta must stay strictly below beta_max; for each such beta the split
    exponent gamma must fall in gamma_interval(beta) intersected with
    (0, 1).  Shrinking beta always reopens the window, so choose_beta
    halves from a starting guess until it fits.
    """

    a1: float
    a2: float
    delta1: float
    M: float
    T: float
    diam: float
    norm_laplacian_phi: float
    beta_max: float = field(init=False)

    def __post_init__(self):
        vals = (self.a1, self.a2, self.delta1, self.M, self.T, self.diam,
                self.norm_laplacian_phi)
        if any(v <= 0.0 for v in vals):
            raise ConfigError("window inputs must all be positive")
        object.__setattr__(
            self, "beta_max",
            min(min(self.a1, self.a2) * self.delta1 / 2.0, self.M / self.T ** 2))

    def gamma_interval(self, beta: float) -> Tuple[float, float]:
        if beta <= 0.0:
            raise ConfigError("beta must be positive")
        lo = 2.0 * beta / (beta + self.a1 * self.a2 / self.diam ** 2)
        hi = (2.0 * min(self.a1, self.a2) * self.delta1
              / (2.0 * beta + max(self.a1, self.a2)
                 * self.norm_laplacian_phi ** 2))
        return lo, hi

    def feasible(self, beta: float) -> bool:
        if not 0.0 < beta < self.beta_max:
            return False
        lo, hi = self.gamma_interval(beta)
        return lo < min(hi, 1.0)

    def choose_beta(self, start: Optional[float] = None,
                    floor: float = 1e-12) -> float:
        b = 0.45 * self.beta_max if start is None else start
        while b > floor:
            if self.feasible(b):
                return b
            b *= 0.5
        raise InfeasibleWindowError(
            f"gamma window stays empty for every beta above {floor:.3g} "
            f"(beta_max {self.beta_max:.3g}, delta1 {self.delta1:.3g}); "
            "the convexity margin is too small for this geometry")

    def choose_gamma(self, beta: float) -> float:
        if not self.feasible(beta):
            raise InfeasibleWindowError(f"gamma window is empty at beta={beta:.6g}")
        lo, hi = self.gamma_interval(beta)
        return 0.5 * (lo + min(hi, 1.0))


def parameter_window(a1: float, a2: float, delta1: float, M: float, T: float,
                     diam: float, norm_laplacian_phi: float) -> ParameterWindow:
    """Window from the certified constants: delta1 from check_prop1,
    M = min(M1, M2), diam the domain diameter, and the sup of |lap phi|."""
    return ParameterWindow(a1=a1, a2=a2, delta1=delta1, M=M, T=T, diam=diam,
                           norm_laplacian_phi=norm_laplacian_phi)


def minimal_time(pole1: PoleData, pole2: PoleData, a1: float,
                 beta: float) -> float:
    """Shortest horizon past which the end-band condition can hold for
    both poles: D0 sqrt(a1/beta) with D0 = max (r_sup + alpha)/alpha."""
    if beta <= 0.0:
        raise ConfigError("beta must be positive")
    return max(pole1.d0, pole2.d0) * math.sqrt(a1 / beta)


def domain_diameter(curve: InterfaceCurve, n: int = 4096) -> float:
    """Largest pairwise distance between boundary samples."""
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    p = curve.point(th)
    best = 0.0
    for i in range(0, n, 512):
        blk = p[i:i + 512]
        d2 = ((blk[:, None, :] - p[None, :, :]) ** 2).sum(axis=-1)
        best = max(best, float(d2.max()))
    return math.sqrt(best)


# -- gridded field ---------------------------------------------------------

@dataclass(frozen=True)
class WeightField:
    """Immutable per-grid evaluation of one pole's weight.

    Only the spatial part is stored; the time dependence is the exact
    parabola -beta t^2 plus closed-form derivatives, synthesized on
    demand, so the field serves every time step of a solve.
    """

    params: WeightParams
    labels: np.ndarray
    phi_space: np.ndarray   # eta abar (r/rho)^2 + M, zero outside
    grad: np.ndarray        # (ny, nx, 2) spatial gradient, zero outside
    lap: np.ndarray
    abar: np.ndarray
    rho: np.ndarray

    @property
    def interior(self) -> np.ndarray:
        return self.labels > 0

    def phi(self, t: float) -> np.ndarray:
        return np.where(self.interior,
                        self.phi_space - self.params.beta * t * t, 0.0)

    def phi_t(self, t: float) -> float:
        return -2.0 * self.params.beta * t

    @property
    def phi_tt(self) -> float:
        return -2.0 * self.params.beta


def build_weight_field(params: WeightParams, grid) -> WeightField:
    """Evaluate the weight and its spatial derivatives at the cell
    centers of a solver grid (forward.SimGrid or anything with labels,
    cell_points and dp)."""
    dp = grid.dp
    rc = _rho_curve(params, dp)
    labels = grid.labels
    flat = grid.cell_points().reshape(-1, 2)
    lab = labels.ravel()
    interior = lab > 0
    inner = lab == 1
    d = flat - params.x0
    r = np.hypot(d[:, 0], d[:, 1])
    theta = np.arctan2(d[:, 1], d[:, 0])
    rho = rc.radius(theta)
    abar = np.where(inner, params.a2, np.where(lab == 2, params.a1, 0.0))
    M = np.where(inner, params.M1, np.where(lab == 2, params.M2, 0.0))
    eta = cutoff_eta(r, params.eps1, params.eps2)
    space = np.where(interior, eta * abar * (r / rho) ** 2 + M, 0.0)

    grad = np.zeros((len(flat), 2))
    lap = np.zeros(len(flat))
    ana = interior & (r >= params.eps2)
    if np.any(ana):
        g, _, L = _polar_derivatives(rc, abar[ana], r[ana], theta[ana])
        grad[ana], lap[ana] = g, L
    taper = interior & (r < params.eps2)
    if np.any(taper):
        g, _, L = _taper_derivatives(params, dp, rc, flat[taper])
        grad[taper], lap[taper] = g, L

    ny, nx = labels.shape
    return WeightField(params=params, labels=labels,
                       phi_space=space.reshape(ny, nx),
                       grad=grad.reshape(ny, nx, 2),
                       lap=lap.reshape(ny, nx),
                       abar=abar.reshape(ny, nx),
                       rho=np.where(interior, rho, 0.0).reshape(ny, nx))
