"""Single-measurement recovery of a source profile and a potential.

The observation is one Neumann flux record on the outer boundary.  Its
H1-in-time norm controls the unknown, which makes the least-squares
problem behind ``reconstruct_linearized`` well posed: minimize

    1/2 || Lam f - g ||^2_{H1(0,T;L2(Gamma))} + mu/2 ||f||^2_{L2}

where Lam maps a spatial profile f to the boundary flux of the wave
driven by the separable source f(x) R(x,t) with zero data.  The adjoint
is the transpose of the implemented time stepper (a backward wave solve
fed by the scattered trace residual), not a hand-derived continuous
adjoint, so the dot-product test holds to round-off by construction.

Potentials are recovered by outer linearization: with reference p and
target q, the difference field u(q) - u(p) solves the wave equation with
source (p - q) u(p) up to second order, so each outer step reconstructs
f ~ p_k - q against R = u(p_k) and updates p_{k+1} = p_k - f.

``stability_ratio`` measures ||p - q|| / ||flux difference||, the
empirical Lipschitz constant of the measurement.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from .errors import DomainError
from .forward import (_TRACE_DERIV, FluxTrace, SimGrid, div_a_grad, solve,
                      solve_linearized)
from .rng import trial_rng
from .runtime import parallel_map

__all__ = [
    "InverseConfig",
    "StabilityTrial",
    "StabilityReport",
    "LinearizedResult",
    "PotentialResult",
    "h1_flux_norm",
    "h1_linf_surrogate",
    "stability_ratio",
    "stability_ensemble",
    "random_potential",
    "adjoint_check",
    "reconstruct_linearized",
    "reconstruct_potential",
]

INVISIBILITY_FLOOR = 1e-14


@dataclass
class InverseConfig:
    """Problem data shared by the stability and reconstruction runs.

    ``t_min`` is the minimal observation horizon required by the
    stability theory (computed by the weight machinery); the grid's time
    span must exceed it strictly.
    """

    grid: SimGrid
    p: np.ndarray
    m: float
    u0: np.ndarray
    u1: np.ndarray
    r: float
    t_min: float = 0.0
    mu: Optional[float] = None          # None: 1e-8 of the normal-operator scale
    cg_maxiter: int = 80
    cg_tol: float = 1e-10
    outer_maxiter: int = 10
    outer_tol: float = 1e-7

    def __post_init__(self):
        g = self.grid
        interior = g.interior
        if not self.r > 0.0:
            raise DomainError("positivity floor r must be > 0")
        if float(np.min(np.abs(self.u0[interior]))) < self.r:
            raise DomainError(
                "initial data must satisfy |u0| >= r on interior cells")
        if float(np.max(np.abs(self.p[interior]))) > self.m + 1e-12:
            raise DomainError("reference potential exceeds the bound m")
        span = g.t1 - g.t0
        if not span > self.t_min:
            raise DomainError(
                f"time span {span:.6g} does not exceed the minimal "
                f"observation time {self.t_min:.6g}")
        if self.mu is not None and self.mu < 0.0:
            raise DomainError("regularization weight must be >= 0")


# -- H1(0,T; L2(Gamma)) machinery -------------------------------------------


def _time_weights(n: int, dt: float) -> np.ndarray:
    w = np.full(n, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def _time_deriv(g: np.ndarray, dt: float) -> np.ndarray:
    out = np.empty_like(g)
    out[1:-1] = (g[2:] - g[:-2]) / (2.0 * dt)
    out[0] = (g[1] - g[0]) / dt
    out[-1] = (g[-1] - g[-2]) / dt
    return out


def _time_deriv_t(y: np.ndarray, dt: float) -> np.ndarray:
    # exact transpose of _time_deriv
    out = np.zeros_like(y)
    out[2:] += y[1:-1] / (2.0 * dt)
    out[:-2] -= y[1:-1] / (2.0 * dt)
    out[0] -= y[0] / dt
    out[1] += y[0] / dt
    out[-1] += y[-1] / dt
    out[-2] -= y[-1] / dt
    return out


def h1_flux_norm(trace: FluxTrace) -> float:
    """sqrt of the time integral of ||g||^2 + ||g_t||^2 over the boundary,
    trapezoid in time, centered differences inside the interval."""
    g = trace.values
    if g.shape[0] < 3:
        raise ValueError("need at least 3 time levels")
    dt = trace.dt
    gt = _time_deriv(g, dt)
    tw = _time_weights(g.shape[0], dt)
    total = np.einsum("t,tb,b->", tw, g * g + gt * gt, trace.weights)
    return math.sqrt(float(total))


def _h1_gram(g: np.ndarray, dt: float, wq: np.ndarray) -> np.ndarray:
    """Apply the Gram operator of the h1_flux_norm inner product."""
    tw = _time_weights(g.shape[0], dt)
    base = tw[:, None] * g * wq[None, :]
    dpart = _time_deriv_t(tw[:, None] * _time_deriv(g, dt) * wq[None, :], dt)
    return base + dpart


def h1_linf_surrogate(states: np.ndarray, dt: float) -> float:
    """sup_t sup_x |u| + sup_t sup_x |u_t| with forward difference
    quotients; the size of the probing wave that enters the stability
    constant."""
    if states.shape[0] < 2:
        raise ValueError("need at least 2 time levels")
    sup_u = float(np.max(np.abs(states)))
    sup_ut = float(np.max(np.abs(np.diff(states, axis=0)))) / dt
    return sup_u + sup_ut


# -- stability ---------------------------------------------------------------


@dataclass(frozen=True)
class StabilityTrial:
    l2_diff: float
    flux_h1: float
    ratio: float              # nan when the flux fell below the floor
    near_invisible: bool
    delta_inf: float          # sup-norm of the perturbation, diagnostics


@dataclass
class StabilityReport:
    trials: List[StabilityTrial]
    seed: Optional[int] = None

    @property
    def ratios(self) -> np.ndarray:
        return np.array([t.ratio for t in self.trials])

    @property
    def max_ratio(self) -> float:
        return float(np.nanmax(self.ratios))

    @property
    def median_ratio(self) -> float:
        return float(np.nanmedian(self.ratios))

    @property
    def n_near_invisible(self) -> int:
        return sum(t.near_invisible for t in self.trials)


def _l2_field(grid: SimGrid, f: np.ndarray) -> float:
    return math.sqrt(float(np.sum(f[grid.interior] ** 2)) * grid.h * grid.h)


def stability_ratio(cfg: InverseConfig, q: np.ndarray) -> StabilityTrial:
    """||p - q||_L2 over the H1 flux-difference norm for one perturbation.

    A flux difference below the invisibility floor with p != q is
    flagged and the ratio reported as nan rather than divided out.
    """
    g = cfg.grid
    interior = g.interior
    if float(np.max(np.abs(q[interior]))) > cfg.m + 1e-12:
        raise DomainError("perturbed potential exceeds the bound m")
    diff = np.where(interior, cfg.p - q, 0.0)
    l2 = _l2_field(g, diff)
    if l2 == 0.0:
        raise DomainError("q must differ from the reference potential")
    trace_p = solve(g, cfg.u0, cfg.u1, potential=cfg.p, want_trace=True).trace
    trace_q = solve(g, cfg.u0, cfg.u1, potential=q, want_trace=True).trace
    d = FluxTrace(times=trace_p.times, values=trace_q.values - trace_p.values,
                  weights=trace_p.weights, arclength=trace_p.arclength,
                  points=trace_p.points)
    fh1 = h1_flux_norm(d)
    invisible = fh1 < INVISIBILITY_FLOOR
    ratio = math.nan if invisible else l2 / fh1
    return StabilityTrial(l2_diff=l2, flux_h1=fh1, ratio=ratio,
                          near_invisible=invisible,
                          delta_inf=float(np.max(np.abs(diff))))


def _bump(r: np.ndarray, radius: float) -> np.ndarray:
    x = np.clip(r / radius, 0.0, 1.0)
    out = np.zeros_like(x)
    inside = x < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - x[inside] ** 2))
    return out


def random_potential(grid: SimGrid, rng: np.random.Generator, *,
                     amp: float, width: Optional[float] = None,
                     n_bumps: int = 1) -> np.ndarray:
    """Signed bump perturbation with sup norm exactly amp.

    One bump of a fixed length scale at a disk-uniform random center, so
    ensemble ratios compare positions rather than bump scales; summing
    several signed bumps (n_bumps > 1) adds dipole-like cancellation and
    widens the ratio spread accordingly.
    """
    r_out = grid.dp.outer.min_radius()
    if width is None:
        width = 0.5 * r_out
    X, Y = grid.mesh()
    q = np.zeros((grid.ny, grid.nx))
    for _ in range(n_bumps):
        ang = rng.uniform(0.0, 2.0 * np.pi)
        rad = 0.6 * r_out * math.sqrt(rng.uniform())
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        q += sign * _bump(np.hypot(X - rad * math.cos(ang),
                                   Y - rad * math.sin(ang)), width)
    peak = float(np.max(np.abs(q[grid.interior])))
    if peak == 0.0:
        q[grid.interior] = 1.0
        peak = 1.0
    return np.where(grid.interior, q * (amp / peak), 0.0)


def stability_ensemble(cfg: InverseConfig, n_trials: int = 50, *,
                       seed: int = 0, amp: Optional[float] = None
                       ) -> StabilityReport:
    """Stability ratios for random bump perturbations q = p + dq with
    ||dq||_inf = amp (default: half the headroom below the bound m)."""
    head = cfg.m - float(np.max(np.abs(cfg.p[cfg.grid.interior])))
    if amp is None:
        amp = 0.5 * head
    if not 0.0 < amp <= head + 1e-12:
        raise DomainError(f"perturbation amplitude {amp} exceeds the bound")

    def one(k: int) -> StabilityTrial:
        dq = random_potential(cfg.grid, trial_rng(seed, k), amp=amp)
        return stability_ratio(cfg, cfg.p + dq)

    return StabilityReport(trials=list(parallel_map(one, range(n_trials))),
                           seed=seed)


# -- linearized reconstruction ----------------------------------------------


def _as_levels(R, nt1: int):
    if callable(R):
        return R
    R = np.asarray(R)
    if R.shape[0] != nt1:
        raise DomainError("R must be sampled at all time levels")
    return R


def _R_at(R, n: int) -> np.ndarray:
    return R(n) if callable(R) else R[n]


def _lambda_apply(grid: SimGrid, f: np.ndarray, R,
                  potential: Optional[np.ndarray]) -> np.ndarray:
    return solve_linearized(grid, f, R, potential=potential).trace.values


def _scatter_trace(grid: SimGrid, lam_level: np.ndarray) -> np.ndarray:
    """Transpose of the Neumann trace extraction for one time level."""
    b = grid.boundary
    scale = grid.dp.a2 / b.offset
    out = np.zeros(grid.ny * grid.nx)
    for c, sampler in zip(_TRACE_DERIV, b.samplers):
        out += c * sampler.scatter(scale * lam_level)
    field2 = out.reshape(grid.ny, grid.nx)
    field2[~grid.interior] = 0.0
    return field2


def _lambda_adjoint(grid: SimGrid, lam: np.ndarray, R,
                    potential: Optional[np.ndarray]) -> np.ndarray:
    """Transpose of _lambda_apply: backward sweep of the leapfrog scheme.

    The forward scheme injects dt^2 f R^n into u^{n+1} (half weight at
    n = 0 through the virtual starting level), so the adjoint recursion
      ybar^n = q^n + 2 ybar^{n+1} - ybar^{n+2} + dt^2 A ybar^{n+1}
    collects dt^2 [ R^0 ybar^1 / 2 + sum_{n>=1} R^n ybar^{n+1} ] with
    q^n the scattered trace dual.
    """
    dt2 = grid.dt * grid.dt
    nt = grid.nt
    y_next = np.zeros((grid.ny, grid.nx))      # ybar^{n+1}
    y_next2 = np.zeros_like(y_next)            # ybar^{n+2}
    acc = np.zeros_like(y_next)
    for n in range(nt, 0, -1):
        ay = div_a_grad(grid, y_next)
        if potential is not None:
            ay -= potential * y_next
        y = _scatter_trace(grid, lam[n]) + 2.0 * y_next - y_next2 + dt2 * ay
        y[~grid.interior] = 0.0
        if n >= 2:
            acc += _R_at(R, n - 1) * y
        else:
            acc += 0.5 * _R_at(R, 0) * y
        y_next2 = y_next
        y_next = y
    out = dt2 * acc
    out[~grid.interior] = 0.0
    return out


def adjoint_check(grid: SimGrid, R, potential: Optional[np.ndarray] = None,
                  *, n_pairs: int = 5, seed: int = 0) -> float:
    """Max relative defect of <Lam f, g>_H1 = <f, Lam* g>_L2 over random
    pairs; round-off sized when the transpose is consistent."""
    R = _as_levels(R, grid.nt + 1)
    wq = grid.boundary.weights
    h2 = grid.h * grid.h
    worst = 0.0
    for k in range(n_pairs):
        rng = trial_rng(seed, k)
        f = np.where(grid.interior, rng.standard_normal((grid.ny, grid.nx)), 0.0)
        g = rng.standard_normal((grid.nt + 1, wq.size))
        lf = _lambda_apply(grid, f, R, potential)
        wg = _h1_gram(g, grid.dt, wq)
        lhs = float(np.sum(lf * wg))
        rhs = float(np.sum(f * _lambda_adjoint(grid, wg, R, potential)))
        scale = max(abs(lhs), abs(rhs), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


@dataclass
class LinearizedResult:
    f: np.ndarray
    iterations: int
    residuals: List[float]
    update_norms: List[float]
    converged: bool
    mu: float
    adjoint_defect: float


def _normal_apply(grid: SimGrid, f: np.ndarray, R, potential,
                  mu: float) -> np.ndarray:
    """(Lam* W Lam + mu) f in the L2 pairing (1/h^2 absorbs the cell area)."""
    lf = _lambda_apply(grid, f, R, potential)
    wlf = _h1_gram(lf, grid.dt, grid.boundary.weights)
    back = _lambda_adjoint(grid, wlf, R, potential) / (grid.h * grid.h)
    return back + mu * f


def _power_mu(grid: SimGrid, R, potential, seed: int = 0,
              iters: int = 10) -> float:
    """1e-8 of the largest normal-operator eigenvalue, power iteration."""
    rng = trial_rng(seed, 9999)
    v = np.where(grid.interior, rng.standard_normal((grid.ny, grid.nx)), 0.0)
    v /= math.sqrt(float(np.sum(v * v)))
    lam_max = 0.0
    for _ in range(iters):
        w = _normal_apply(grid, v, R, potential, 0.0)
        lam_max = float(np.sum(v * w))
        norm = math.sqrt(float(np.sum(w * w)))
        if norm == 0.0:
            break
        v = w / norm
    return 1e-8 * lam_max


def reconstruct_linearized(cfg: InverseConfig, observed: Union[FluxTrace, np.ndarray],
                           R, *, mu: Optional[float] = None,
                           check_adjoint: bool = True) -> LinearizedResult:
    """Least-squares source profile from one flux record.

    Conjugate gradients on the regularized normal equations; the adjoint
    consistency check runs first (one pair) unless disabled by a caller
    that already verified it.  Hitting the iteration cap returns the
    partial iterate with its residual history rather than raising.
    """
    grid = cfg.grid
    R = _as_levels(R, grid.nt + 1)
    r0 = np.abs(_R_at(R, 0))[grid.interior]
    if float(r0.min()) < cfg.r:
        raise DomainError("|R(., 0)| must stay above the floor r")
    g = observed.values if isinstance(observed, FluxTrace) else np.asarray(observed)
    if g.shape != (grid.nt + 1, grid.boundary.points.shape[0]):
        raise DomainError("observed flux has the wrong shape")

    defect = adjoint_check(grid, R, cfg.p, n_pairs=1) if check_adjoint else 0.0
    if defect > 1e-6:
        raise DomainError(f"adjoint consistency defect {defect:.2e}; "
                          "the operator pair is inconsistent")
    if mu is None:
        mu = cfg.mu if cfg.mu is not None else _power_mu(grid, R, cfg.p)

    h2 = grid.h * grid.h
    b = _lambda_adjoint(grid, _h1_gram(g, grid.dt, grid.boundary.weights),
                        R, cfg.p) / h2
    f = np.zeros((grid.ny, grid.nx))
    r = b.copy()
    p = r.copy()
    rr = float(np.sum(r * r))
    b_norm = math.sqrt(float(np.sum(b * b)))
    residuals = [math.sqrt(rr)]
    updates: List[float] = []
    converged = b_norm == 0.0
    it = 0
    while not converged and it < cfg.cg_maxiter:
        ap = _normal_apply(grid, p, R, cfg.p, mu)
        alpha = rr / float(np.sum(p * ap))
        f += alpha * p
        r -= alpha * ap
        rr_new = float(np.sum(r * r))
        residuals.append(math.sqrt(rr_new))
        updates.append(abs(alpha) * _l2_field(grid, p))
        it += 1
        if math.sqrt(rr_new) <= cfg.cg_tol * b_norm:
            converged = True
        beta = rr_new / rr
        rr = rr_new
        p = r + beta * p
    f[~grid.interior] = 0.0
    return LinearizedResult(f=f, iterations=it, residuals=residuals,
                            update_norms=updates, converged=converged,
                            mu=mu, adjoint_defect=defect)


# -- outer potential loop ----------------------------------------------------


@dataclass
class PotentialResult:
    q: np.ndarray
    history: List[dict]
    converged: bool
    diverged: bool
    mu: float


def reconstruct_potential(cfg: InverseConfig,
                          observed: Union[FluxTrace, np.ndarray]
                          ) -> PotentialResult:
    """Outer linearization around the current reference potential.

    Each pass solves the wave with the current p_k, reconstructs the
    profile of the flux mismatch against R = u(p_k), and subtracts it.
    Three consecutive residual increases abort with the trajectory kept.
    """
    grid = cfg.grid
    g_obs = observed.values if isinstance(observed, FluxTrace) else np.asarray(observed)
    p_k = np.where(grid.interior, cfg.p, 0.0)
    history: List[dict] = []
    mu = cfg.mu
    worse = 0
    best = math.inf
    scale = None
    for it in range(cfg.outer_maxiter):
        run = solve(grid, cfg.u0, cfg.u1, potential=p_k, want_trace=True,
                    store="f64")
        resid = g_obs - run.trace.values
        res_trace = FluxTrace(times=run.trace.times, values=resid,
                              weights=run.trace.weights,
                              arclength=run.trace.arclength,
                              points=run.trace.points)
        res_norm = h1_flux_norm(res_trace)
        if scale is None:
            obs_trace = FluxTrace(times=run.trace.times, values=g_obs,
                                  weights=run.trace.weights,
                                  arclength=run.trace.arclength,
                                  points=run.trace.points)
            scale = max(h1_flux_norm(obs_trace), 1e-300)
        if res_norm > best:
            worse += 1
            if worse >= 3:
                history.append({"iter": it, "residual": res_norm,
                                "update_norm": 0.0})
                return PotentialResult(q=p_k, history=history, converged=False,
                                       diverged=True, mu=mu or 0.0)
        else:
            worse = 0
            best = res_norm
        if res_norm <= cfg.outer_tol * scale:
            history.append({"iter": it, "residual": res_norm,
                            "update_norm": 0.0})
            return PotentialResult(q=p_k, history=history, converged=True,
                                   diverged=False, mu=mu or 0.0)
        sub = InverseConfig(grid=grid, p=p_k, m=cfg.m, u0=cfg.u0, u1=cfg.u1,
                            r=cfg.r, t_min=cfg.t_min, mu=mu,
                            cg_maxiter=cfg.cg_maxiter, cg_tol=cfg.cg_tol)
        step = reconstruct_linearized(sub, resid, run.states,
                                      check_adjoint=(it == 0))
        if mu is None:
            mu = step.mu       # freeze the auto scale across outer passes
        update = np.where(grid.interior, step.f, 0.0)
        up_norm = _l2_field(grid, update)
        history.append({"iter": it, "residual": res_norm,
                        "update_norm": up_norm})
        # projection keeps the iterate inside the admissible sup-norm ball
        p_k = np.where(grid.interior, np.clip(p_k - update, -cfg.m, cfg.m), 0.0)
        if up_norm <= cfg.outer_tol * max(_l2_field(grid, p_k), 1.0):
            return PotentialResult(q=p_k, history=history, converged=True,
                                   diverged=False, mu=mu or 0.0)
    return PotentialResult(q=p_k, history=history, converged=False,
                           diverged=False, mu=mu or 0.0)
