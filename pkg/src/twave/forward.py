"""Conservative finite-difference solver for the transmission wave equation

    u_tt - div(a grad u) + p u = f,   u = 0 on the outer boundary,

with piecewise-constant a (a1 in the inclusion, a2 in the annulus).  The
divergence form is discretized with face coefficients: the face between two
cells of the same region carries that region's a, a face crossing the
interface carries the harmonic mean 2 a1 a2 / (a1 + a2), and faces to
exterior cells carry the interior side's a against the zero Dirichlet
ghost value.  Leapfrog in time with a second-order Taylor start; stability
requires dt <= cfl * h / sqrt(2 max a), enforced when the grid is built.

Neumann data on the outer boundary is extracted at true curve quadrature
points: the normal derivative comes from a 3-point one-sided stencil of
bilinear samples strictly inside the annulus, scaled by a2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, InstabilityError, StencilError
from .fdops import BilinearSampler, RegionStencils, smoothstep
from .geometry import DomainPair

_TRACE_DERIV = np.array([2.5, -4.0, 1.5])   # d/ds at 0 from samples at d,2d,3d
_TRACE_VALUE = np.array([3.0, -3.0, 1.0])   # value at 0 from samples at d,2d,3d


@dataclass
class CurveQuadrature:
    """Quadrature points on a stored curve with one-sided sample stencils."""

    theta: np.ndarray
    points: np.ndarray      # (n, 2)
    normals: np.ndarray     # (n, 2) outward
    weights: np.ndarray     # (n,) arc length weights
    arclength: np.ndarray   # (n,) cumulative arc length coordinate
    offset: float           # stencil spacing d
    samplers: tuple         # one BilinearSampler per ring (depth d, 2d, 3d)
    valid: np.ndarray       # (n,) all three rings supported

    def sample_rings(self, fld: np.ndarray) -> np.ndarray:
        """Stack of ring samples, shape (..., 3, n)."""
        return np.stack([s.sample(fld) for s in self.samplers], axis=-2)

    def normal_derivative(self, fld: np.ndarray) -> np.ndarray:
        """Outward normal derivative at the quadrature points (one-sided)."""
        g = self.sample_rings(fld)
        return np.tensordot(g, _TRACE_DERIV, axes=([-2], [0])) / self.offset

    def boundary_value(self, fld: np.ndarray) -> np.ndarray:
        """One-sided extrapolation of the field value onto the curve."""
        g = self.sample_rings(fld)
        return np.tensordot(g, _TRACE_VALUE, axes=([-2], [0]))


def _make_quadrature(curve, n_points, origin, h, labels, accept, side, offset,
                     require_valid):
    th = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
    pts = curve.point(th)
    nrm = curve.outward_normal(th)
    speed = curve.speed(th)
    w = speed * (2.0 * np.pi / n_points)
    arclen = np.concatenate([[0.0], np.cumsum(w)[:-1]])
    samplers = []
    for k in (1, 2, 3):
        ring = pts + side * k * offset * nrm
        samplers.append(BilinearSampler(ring, origin, h, labels, accept=accept))
    valid = samplers[0].valid & samplers[1].valid & samplers[2].valid
    if require_valid and not valid.all():
        n_bad = int((~valid).sum())
        raise StencilError(
            f"{n_bad}/{n_points} quadrature stencils lack interior support; "
            "refine the grid or reduce the stencil offset")
    return CurveQuadrature(theta=th, points=pts, normals=nrm, weights=w,
                           arclength=arclen, offset=offset,
                           samplers=tuple(samplers), valid=valid)


@dataclass
class SimGrid:
    """Cell-centered grid over a square box covering the domain pair."""

    dp: DomainPair
    nx: int
    ny: int
    h: float
    origin: np.ndarray          # coordinates of the lower-left box corner
    labels: np.ndarray          # (ny, nx) int8: 0 exterior, 1 inclusion, 2 annulus
    a_cell: np.ndarray
    face_x: np.ndarray          # (ny, nx-1)
    face_y: np.ndarray          # (ny-1, nx)
    dt: float
    nt: int
    t0: float
    t1: float
    cfl: float
    boundary: CurveQuadrature
    interface: CurveQuadrature       # stencils sampling the inclusion side
    interface_out: CurveQuadrature   # same points, stencils in the annulus
    stencils: RegionStencils = field(repr=False, default=None)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nt + 1)

    @property
    def xs(self) -> np.ndarray:
        return self.origin[0] + self.h * (np.arange(self.nx) + 0.5)

    @property
    def ys(self) -> np.ndarray:
        return self.origin[1] + self.h * (np.arange(self.ny) + 0.5)

    @property
    def interior(self) -> np.ndarray:
        return self.labels > 0

    def mesh(self):
        return np.meshgrid(self.xs, self.ys)

    def cell_points(self) -> np.ndarray:
        x, y = self.mesh()
        return np.stack([x, y], axis=-1)

    def r_from(self, point) -> np.ndarray:
        x, y = self.mesh()
        return np.hypot(x - point[0], y - point[1])

    def zeros(self) -> np.ndarray:
        return np.zeros((self.ny, self.nx))


def _face_coeffs(a1: float, a2: float, labels: np.ndarray, axis: int):
    if axis == 0:
        l1, l2 = labels[:-1, :], labels[1:, :]
    else:
        l1, l2 = labels[:, :-1], labels[:, 1:]
    sp1 = np.choose(l1, [0.0, a1, a2])
    sp2 = np.choose(l2, [0.0, a1, a2])
    both = (l1 > 0) & (l2 > 0)
    mixed = both & (l1 != l2)
    face = np.where(both, np.maximum(sp1, sp2), sp1 + sp2)
    hm = np.zeros_like(face)
    np.divide(2.0 * sp1 * sp2, sp1 + sp2, out=hm, where=(sp1 + sp2) > 0)
    return np.where(mixed, hm, face)


def build_grid(dp: DomainPair, nx: int, T: float, *, ny: Optional[int] = None,
               box: Optional[float] = None, cfl: float = 0.5, t0: float = 0.0,
               n_boundary: Optional[int] = None, n_interface: Optional[int] = None,
               trace_offset: float = 1.5) -> SimGrid:
    """Build the labeled grid, face coefficients, time step, and quadratures.

    ``box`` is the half-width of the square computational box centered on
    the outer curve's pole; default adds 8 percent beyond the outer curve.
    ``T`` is the final time (the axis runs from t0 to T).
    """
    if nx < 16:
        raise DomainError("grid too coarse, need nx >= 16")
    ny = nx if ny is None else ny
    r_out = dp.outer.max_radius()
    if box is None:
        box = 1.08 * r_out
    h = 2.0 * box / nx
    if 2.0 * box / ny != h:
        raise DomainError("cells must be square: box/nx must equal box/ny")
    if r_out + h > box:
        raise DomainError("computational box must clear the outer curve by >= h")
    origin = np.asarray(dp.outer.pole, dtype=float) - box
    xs = origin[0] + h * (np.arange(nx) + 0.5)
    ys = origin[1] + h * (np.arange(ny) + 0.5)
    x, y = np.meshgrid(xs, ys)
    pts = np.stack([x, y], axis=-1)
    labels = dp.label(pts)
    a_cell = dp.speed_squared(pts)

    if T <= t0:
        raise DomainError("need T > t0")
    dt_max = cfl * h / np.sqrt(2.0 * max(dp.a1, dp.a2))
    nt = int(np.ceil((T - t0) / dt_max))
    dt = (T - t0) / nt

    nb = n_boundary if n_boundary is not None else max(192, 3 * nx)
    ni = n_interface if n_interface is not None else max(128, 2 * nx)
    d = trace_offset * h
    boundary = _make_quadrature(dp.outer, nb, origin, h, labels, accept=(2,),
                                side=-1.0, offset=d, require_valid=True)
    interface_in = _make_quadrature(dp.inner, ni, origin, h, labels, accept=(1,),
                                    side=-1.0, offset=d, require_valid=False)
    interface_out = _make_quadrature(dp.inner, ni, origin, h, labels, accept=(2,),
                                     side=+1.0, offset=d, require_valid=False)

    grid = SimGrid(dp=dp, nx=nx, ny=ny, h=h, origin=origin, labels=labels,
                   a_cell=a_cell, face_x=_face_coeffs(dp.a1, dp.a2, labels, 1),
                   face_y=_face_coeffs(dp.a1, dp.a2, labels, 0),
                   dt=dt, nt=nt, t0=t0, t1=T, cfl=cfl,
                   boundary=boundary, interface=interface_in,
                   interface_out=interface_out,
                   stencils=RegionStencils(labels, h))
    return grid


def div_a_grad(grid: SimGrid, u: np.ndarray) -> np.ndarray:
    """Conservative div(a grad u) at cell centers (zero on exterior cells)."""
    out = np.zeros_like(u)
    gx = grid.face_x * (u[:, 1:] - u[:, :-1])
    out[:, :-1] += gx
    out[:, 1:] -= gx
    gy = grid.face_y * (u[1:, :] - u[:-1, :])
    out[:-1, :] += gy
    out[1:, :] -= gy
    out /= grid.h * grid.h
    out[~grid.interior] = 0.0
    return out


@dataclass
class WaveState:
    u: np.ndarray        # level n
    u_prev: np.ndarray   # level n-1 (virtual level for n=0)
    n: int
    t: float


def _source_at(source, n: int, t: float, grid: SimGrid):
    if source is None:
        return None
    if callable(source):
        return source(n, t)
    return source[n]


def initial_state(grid: SimGrid, u0: np.ndarray, u1: np.ndarray, *,
                  source=None, potential: Optional[np.ndarray] = None) -> WaveState:
    """State at t0 with the Taylor-consistent virtual previous level."""
    u0 = np.where(grid.interior, u0, 0.0)
    u1 = np.where(grid.interior, u1, 0.0)
    acc = div_a_grad(grid, u0)
    if potential is not None:
        acc -= potential * u0
    f0 = _source_at(source, 0, grid.t0, grid)
    if f0 is not None:
        acc = acc + f0
    u_virtual = u0 - grid.dt * u1 + 0.5 * grid.dt ** 2 * acc
    u_virtual[~grid.interior] = 0.0
    return WaveState(u=u0, u_prev=u_virtual, n=0, t=grid.t0)


def step(grid: SimGrid, state: WaveState, *, source=None,
         potential: Optional[np.ndarray] = None,
         boundary_value: float = 0.0) -> WaveState:
    """Advance one leapfrog step; exterior cells pinned to the Dirichlet datum."""
    acc = div_a_grad(grid, state.u)
    if potential is not None:
        acc -= potential * state.u
    f = _source_at(source, state.n, state.t, grid)
    if f is not None:
        acc = acc + f
    u_next = 2.0 * state.u - state.u_prev + grid.dt ** 2 * acc
    u_next[~grid.interior] = boundary_value
    return WaveState(u=u_next, u_prev=state.u, n=state.n + 1, t=state.t + grid.dt)


def energy(grid: SimGrid, state: WaveState,
           potential: Optional[np.ndarray] = None) -> float:
    """Leapfrog-compatible discrete energy, exactly conserved for f = 0.

    Uses the staggered form with the stiffness cross term between levels:
    E = h^2/2 [ |(u - u_prev)/dt|^2 + sum_faces a (du)(du_prev)/h^2
                + sum p u u_prev ].
    """
    h2 = grid.h * grid.h
    v = (state.u - state.u_prev) / grid.dt
    kin = np.sum(v * v)
    sx = grid.face_x * (state.u[:, 1:] - state.u[:, :-1]) \
        * (state.u_prev[:, 1:] - state.u_prev[:, :-1])
    sy = grid.face_y * (state.u[1:, :] - state.u[:-1, :]) \
        * (state.u_prev[1:, :] - state.u_prev[:-1, :])
    stiff = (np.sum(sx) + np.sum(sy)) / h2
    if potential is not None:
        stiff += np.sum(potential * state.u * state.u_prev)
    return 0.5 * h2 * (kin + stiff)


def neumann_trace(grid: SimGrid, u: np.ndarray) -> np.ndarray:
    """a2 du/dnu at the outer-boundary quadrature points.

    First-order accurate pointwise: the bilinear ring samples carry O(h^2)
    error which the 1/d derivative stencil amplifies to O(h).  Synthetic
    data and reconstructions use the same extractor, so the bias cancels
    in data-fit loops.
    """
    return grid.dp.a2 * grid.boundary.normal_derivative(u)


@dataclass
class FluxTrace:
    """Neumann data on the outer boundary over the full time axis."""

    times: np.ndarray       # (nt+1,)
    values: np.ndarray      # (nt+1, n_points)
    weights: np.ndarray     # (n_points,) arc length quadrature
    arclength: np.ndarray   # (n_points,)
    points: np.ndarray      # (n_points, 2)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


@dataclass
class SolveResult:
    state: WaveState
    trace: Optional[FluxTrace] = None
    states: Optional[np.ndarray] = None   # (nt+1, ny, nx) when stored
    energies: Optional[np.ndarray] = None


def solve(grid: SimGrid, u0: np.ndarray, u1: np.ndarray, *, source=None,
          potential: Optional[np.ndarray] = None, boundary_value: float = 0.0,
          want_trace: bool = False, store: Optional[str] = None,
          track_energy: bool = False, on_step: Optional[Callable] = None,
          check_every: int = 1) -> SolveResult:
    """Run the scheme from t0 to t1.

    ``store`` is None, 'f32' or 'f64'; stored array holds all nt+1 levels.
    NaN or Inf in any checked step raises InstabilityError with the step.
    """
    state = initial_state(grid, u0, u1, source=source, potential=potential)
    trace_vals = None
    if want_trace:
        trace_vals = np.empty((grid.nt + 1, grid.boundary.points.shape[0]))
        trace_vals[0] = neumann_trace(grid, state.u)
    states = None
    if store is not None:
        dtype = np.float32 if store == "f32" else np.float64
        states = np.empty((grid.nt + 1, grid.ny, grid.nx), dtype=dtype)
        states[0] = state.u
    energies = np.empty(grid.nt + 1) if track_energy else None
    if track_energy:
        energies[0] = energy(grid, state, potential)
    if on_step is not None:
        on_step(grid, state)
    for n in range(grid.nt):
        state = step(grid, state, source=source, potential=potential,
                     boundary_value=boundary_value)
        if check_every and state.n % check_every == 0:
            if not np.isfinite(state.u).all():
                raise InstabilityError(state.n)
        if want_trace:
            trace_vals[state.n] = neumann_trace(grid, state.u)
        if states is not None:
            states[state.n] = state.u
        if track_energy:
            energies[state.n] = energy(grid, state, potential)
        if on_step is not None:
            on_step(grid, state)
    trace = None
    if want_trace:
        b = grid.boundary
        trace = FluxTrace(times=grid.times, values=trace_vals, weights=b.weights,
                          arclength=b.arclength, points=b.points)
    return SolveResult(state=state, trace=trace, states=states, energies=energies)


def solve_linearized(grid: SimGrid, f: np.ndarray, R, *,
                     potential: Optional[np.ndarray] = None,
                     store: Optional[str] = None) -> SolveResult:
    """Wave solve with zero data and separable source f(x) R(x, t).

    ``R`` is an array over all time levels (nt+1, ny, nx) or a callable
    n -> field; f is a spatial field.
    """
    if callable(R):
        src = lambda n, t: f * R(n)
    else:
        if R.shape[0] != grid.nt + 1:
            raise DomainError("R must be sampled at all nt+1 time levels")
        src = lambda n, t: f * R[n]
    z = grid.zeros()
    return solve(grid, z, z.copy(), source=src, potential=potential,
                 want_trace=True, store=store)


def even_extension(values: np.ndarray) -> np.ndarray:
    """Reflect a (nt+1, ...) time series about t = 0: result covers
    [-T, T] with 2 nt + 1 levels and out[nt + k] = out[nt - k] = values[k]."""
    if values.shape[0] < 2:
        raise ValueError("need at least two time levels")
    return np.concatenate([values[:0:-1], values], axis=0)


def time_cutoff(times: np.ndarray, T: float, delta: float) -> np.ndarray:
    """Smooth even cutoff: 1 for |t| <= T - delta, 0 at |t| = T."""
    if not (0.0 < delta < T):
        raise ValueError("need 0 < delta < T")
    return smoothstep((T - np.abs(np.asarray(times, dtype=float))) / delta)
