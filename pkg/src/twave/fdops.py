"""Finite-difference helpers on labeled Cartesian grids.

Fields live at cell centers with integer region labels (0 exterior,
1 inclusion, 2 annulus).  Derivatives never difference across a label
change: cells use centered stencils where both neighbors share their
label and fall back to one-sided second-order stencils otherwise.
Cells with insufficient same-region support are reported in a validity
mask rather than silently extrapolated.
"""

from __future__ import annotations

import numpy as np

_PAD = 3


def smoothstep(t):
    """C-infinity ramp: 0 for t <= 0, 1 for t >= 1, g(t)/(g(t)+g(1-t))
    in between with g(t) = exp(-1/t)."""
    t = np.asarray(t, dtype=float)
    below = t <= 0.0
    above = t >= 1.0
    mid = ~(below | above)
    out = np.where(above, 1.0, 0.0)
    if np.any(mid):
        tm = np.clip(t, 1e-12, 1.0 - 1e-12)
        g = np.exp(-1.0 / tm)
        gc = np.exp(-1.0 / (1.0 - tm))
        out = np.where(mid, g / (g + gc), out)
    return out if out.shape else float(out)


def fd_weights(offsets, order: int) -> np.ndarray:
    """Finite-difference weights for the given derivative order at 0,
    from samples at ``offsets`` (Vandermonde solve)."""
    offsets = np.asarray(offsets, dtype=float)
    n = offsets.size
    if order >= n:
        raise ValueError("need more sample points than derivative order")
    v = np.vander(offsets, n, increasing=True).T  # v[m, i] = offsets[i]^m
    rhs = np.zeros(n)
    rhs[order] = float(np.prod(np.arange(1, order + 1))) if order > 0 else 1.0
    return np.linalg.solve(v, rhs)


def _padded(arr, fill=0.0):
    return np.pad(arr, _PAD, mode="constant", constant_values=fill)


class RegionStencils:
    """Precomputed stencil selection masks for one label array.

    For each axis, a cell is 'centered' when both neighbors share its
    label, 'forward'/'backward' when three cells on that side do, and
    invalid otherwise.  The masks are reused for every field on the grid.
    """

    def __init__(self, labels: np.ndarray, h: float):
        self.h = float(h)
        self.labels = labels
        lp = _padded(labels, fill=0)
        self.interior = labels > 0

        def same(dy, dx):
            sl = lp[_PAD + dy: _PAD + dy + labels.shape[0],
                    _PAD + dx: _PAD + dx + labels.shape[1]]
            return (sl == labels) & self.interior

        masks = {}
        for axis, (dy, dx) in (("y", (1, 0)), ("x", (0, 1))):
            plus = [same(k * dy, k * dx) for k in (1, 2, 3)]
            minus = [same(-k * dy, -k * dx) for k in (1, 2, 3)]
            centered = plus[0] & minus[0]
            fwd = plus[0] & plus[1] & plus[2]
            bwd = minus[0] & minus[1] & minus[2]
            masks[axis] = {
                "centered": centered,
                "fwd": ~centered & fwd,
                "bwd": ~centered & ~fwd & bwd,
                "valid": centered | fwd | bwd,
            }
        self._masks = masks
        self.deriv_valid = masks["x"]["valid"] & masks["y"]["valid"]
        # cells whose 5-point stencil stays in one region on both axes
        self.centered = masks["x"]["centered"] & masks["y"]["centered"]

    def _shift(self, fp, k, axis):
        ny, nx = self.labels.shape
        dy, dx = (k, 0) if axis == "y" else (0, k)
        return fp[_PAD + dy: _PAD + dy + ny, _PAD + dx: _PAD + dx + nx]

    def d1(self, f: np.ndarray, axis: str) -> np.ndarray:
        """First derivative along 'x' or 'y', second order everywhere valid."""
        m = self._masks[axis]
        fp = _padded(f)
        s = lambda k: self._shift(fp, k, axis)
        h = self.h
        out = np.where(m["centered"], (s(1) - s(-1)) / (2 * h), 0.0)
        out = np.where(m["fwd"], (-3 * f + 4 * s(1) - s(2)) / (2 * h), out)
        out = np.where(m["bwd"], (3 * f - 4 * s(-1) + s(-2)) / (2 * h), out)
        return out

    def d2(self, f: np.ndarray, axis: str) -> np.ndarray:
        """Second derivative along one axis, second order everywhere valid."""
        m = self._masks[axis]
        fp = _padded(f)
        s = lambda k: self._shift(fp, k, axis)
        h2 = self.h * self.h
        out = np.where(m["centered"], (s(1) - 2 * f + s(-1)) / h2, 0.0)
        out = np.where(m["fwd"], (2 * f - 5 * s(1) + 4 * s(2) - s(3)) / h2, out)
        out = np.where(m["bwd"], (2 * f - 5 * s(-1) + 4 * s(-2) - s(-3)) / h2, out)
        return out

    def gradient(self, f: np.ndarray):
        return self.d1(f, "x"), self.d1(f, "y")

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        return self.d2(f, "x") + self.d2(f, "y")


def time_d1(f: np.ndarray, dt: float) -> np.ndarray:
    """d/dt along axis 0, centered inside, one-sided 3-point at the ends."""
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2 * dt)
    out[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * dt)
    out[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * dt)
    return out


def time_d2(f: np.ndarray, dt: float) -> np.ndarray:
    """d2/dt2 along axis 0, centered inside, one-sided 4-point at the ends."""
    out = np.empty_like(f)
    dt2 = dt * dt
    out[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / dt2
    out[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / dt2
    out[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / dt2
    return out


class BilinearSampler:
    """Bilinear interpolation from cell centers at fixed sample points.

    Validity of a point requires all four surrounding cells to carry one
    of the accepted labels; the mask is exposed so callers can decide
    whether invalid points are an error or just excluded.
    """

    def __init__(self, points, origin, h, labels, accept=(1, 2)):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        ny, nx = labels.shape
        fx = (points[:, 0] - origin[0]) / h - 0.5
        fy = (points[:, 1] - origin[1]) / h - 0.5
        ix = np.floor(fx).astype(int)
        iy = np.floor(fy).astype(int)
        wx = fx - ix
        wy = fy - iy
        in_grid = (ix >= 0) & (ix + 1 < nx) & (iy >= 0) & (iy + 1 < ny)
        ixc = np.clip(ix, 0, nx - 2)
        iyc = np.clip(iy, 0, ny - 2)
        corners = np.stack([
            iyc * nx + ixc,
            iyc * nx + ixc + 1,
            (iyc + 1) * nx + ixc,
            (iyc + 1) * nx + ixc + 1,
        ], axis=1)
        weights = np.stack([
            (1 - wx) * (1 - wy),
            wx * (1 - wy),
            (1 - wx) * wy,
            wx * wy,
        ], axis=1)
        lbl_ok = np.isin(labels.ravel()[corners], accept).all(axis=1)
        self.indices = corners
        self.weights = weights
        self.valid = in_grid & lbl_ok
        self.n_cells = ny * nx

    def sample(self, field: np.ndarray) -> np.ndarray:
        """Interpolate; field shape (..., ny, nx) -> values (..., n_points)."""
        flat = field.reshape(field.shape[:-2] + (self.n_cells,))
        return np.einsum("...pc,pc->...p", flat[..., self.indices], self.weights)

    def scatter(self, values: np.ndarray) -> np.ndarray:
        """Transpose of sample for a single time level: (n_points,) -> (ny*nx,)."""
        contrib = (values[:, None] * self.weights).ravel()
        return np.bincount(self.indices.ravel(), weights=contrib,
                           minlength=self.n_cells)
