"""Experiment configs: flat dotted-key text files and object builders.

The on-disk grammar is TOML restricted to scalars, point literals
``[x, y]``, and numeric lists.  Keys are validated against the
subcommand's schema; anything unrecognized is an error that names the
offending keys, so typos cannot silently change an experiment.

``beta``, ``gamma``, and ``M2`` accept the string ``"auto"``: beta and
gamma are then resolved through the admissible parameter window (built
from the constants in the ``window`` block) and M2 from the end-band
condition.  Infeasibility aborts the run rather than degrading it.
"""

import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import numpy as np

from .errors import ConfigError
from .forward import build_grid
from .geometry import DomainPair, InterfaceCurve
from .weights import WeightParams, default_M2, parameter_window

__all__ = [
    "load_config",
    "flatten",
    "validate_keys",
    "get",
    "build_pair",
    "build_simgrid",
    "build_weight_params",
    "build_window",
    "KEYSETS",
]

# keys shared by every subcommand
_COMMON = {
    "geometry.inner.pole", "geometry.inner.fourier",
    "geometry.outer.pole", "geometry.outer.fourier",
    "geometry.a1", "geometry.a2",
    "output.dir",
}

_GRID = {"grid.nx", "grid.ny", "grid.T", "grid.t0", "grid.cfl", "grid.nt"}

_WEIGHTS = {
    "weights.beta", "weights.gamma", "weights.M2", "weights.T",
    "weights.pole", "weights.eps", "weights.eps1", "weights.eps2",
    "weights.pole2", "weights.pole2_eps",
    "weights.s", "weights.lambda",
}

_WINDOW = {
    "window.delta1", "window.M", "window.diam", "window.norm_lap",
    "window.T", "window.beta",
}

KEYSETS: Dict[str, set] = {
    "geometry check": _COMMON,
    "weights check": _COMMON | _GRID | _WEIGHTS,
    "weights window": _COMMON | _WINDOW | {"geometry.a1", "geometry.a2"},
    "carleman sweep": _COMMON | _GRID | _WEIGHTS | {
        "sweep.s", "sweep.lambda", "sweep.trials", "sweep.seed",
        "sweep.ablate", "sweep.full_boundary"},
    "carleman identity": _COMMON | _WEIGHTS | {
        "identity.nx", "identity.s", "identity.lambda", "identity.T"},
    "forward run": _COMMON | _GRID | {
        "forward.amp", "forward.bump_center", "forward.bump_width",
        "forward.potential_amp", "forward.potential_center",
        "forward.potential_width", "forward.track_energy"},
    "rays trace": _COMMON | {
        "rays.origin", "rays.angle_deg", "rays.max_events"},
    "rays envelope": _COMMON | {
        "rays.records", "rays.grid_n", "rays.pgm"},
    "invert stability": _COMMON | _GRID | _WEIGHTS | {
        "invert.m", "invert.r", "invert.trials", "invert.seed",
        "invert.amp", "invert.t_factor"},
    "invert reconstruct": _COMMON | _GRID | _WEIGHTS | {
        "invert.task", "invert.m", "invert.r", "invert.mu",
        "invert.cg_maxiter", "invert.outer_maxiter", "invert.amp",
        "invert.seed", "invert.noise"},
}


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def flatten(nested: dict, prefix: str = "") -> Dict[str, object]:
    flat: Dict[str, object] = {}
    for key, value in nested.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def validate_keys(flat: Dict[str, object], subcommand: str) -> None:
    allowed = KEYSETS[subcommand]
    unknown = sorted(k for k in flat if k not in allowed)
    if unknown:
        raise ConfigError(
            f"unknown config keys for '{subcommand}': {', '.join(unknown)}")


_MISSING = object()


def get(flat: Dict[str, object], key: str, default=_MISSING):
    if key in flat:
        return flat[key]
    if default is _MISSING:
        raise ConfigError(f"missing required config key '{key}'")
    return default


def _point(flat, key) -> np.ndarray:
    v = get(flat, key)
    arr = np.asarray(v, dtype=float)
    if arr.shape != (2,):
        raise ConfigError(f"'{key}' must be a point literal [x, y]")
    return arr


def build_pair(flat: Dict[str, object]) -> DomainPair:
    inner = InterfaceCurve(_point(flat, "geometry.inner.pole"),
                           get(flat, "geometry.inner.fourier"))
    outer = InterfaceCurve(_point(flat, "geometry.outer.pole"),
                           get(flat, "geometry.outer.fourier"))
    return DomainPair(inner, outer, a1=float(get(flat, "geometry.a1")),
                      a2=float(get(flat, "geometry.a2")))


def build_simgrid(flat: Dict[str, object], dp: DomainPair, *,
                  T: Optional[float] = None):
    nx = int(get(flat, "grid.nx"))
    T = float(get(flat, "grid.T")) if T is None else T
    kwargs = {}
    if "grid.ny" in flat:
        kwargs["ny"] = int(flat["grid.ny"])
    if "grid.cfl" in flat:
        kwargs["cfl"] = float(flat["grid.cfl"])
    t0 = float(get(flat, "grid.t0", 0.0))
    return build_grid(dp, nx, T=T, t0=t0, **kwargs)


def build_window(flat: Dict[str, object], *, a1: float, a2: float):
    return parameter_window(
        a1=a1, a2=a2,
        delta1=float(get(flat, "window.delta1")),
        M=float(get(flat, "window.M")),
        T=float(get(flat, "window.T")),
        diam=float(get(flat, "window.diam")),
        norm_laplacian_phi=float(get(flat, "window.norm_lap")))


def _resolve_beta_gamma(flat, a1, a2, T):
    """Numbers pass through; 'auto' goes through the parameter window."""
    beta = get(flat, "weights.beta")
    gamma = get(flat, "weights.gamma")
    if beta == "auto" or gamma == "auto":
        win = build_window(flat, a1=a1, a2=a2)   # raises if block missing
        if beta == "auto":
            beta = win.choose_beta()
        else:
            beta = float(beta)
        if gamma == "auto":
            gamma = win.choose_gamma(beta)       # InfeasibleWindowError if empty
        else:
            gamma = float(gamma)
    return float(beta), float(gamma)


def build_weight_params(flat: Dict[str, object], dp: DomainPair, *,
                        which: int = 1, T: Optional[float] = None,
                        s: Optional[float] = None,
                        lam: Optional[float] = None) -> WeightParams:
    if T is None:
        T = float(get(flat, "weights.T", get(flat, "grid.T", 1.0)))
    beta, gamma = _resolve_beta_gamma(flat, dp.a1, dp.a2, T)
    m2 = get(flat, "weights.M2", "auto")
    if m2 == "auto":
        m2 = default_M2(dp.a1, beta, T)
    if which == 1:
        x0 = _point(flat, "weights.pole")
        eps = float(get(flat, "weights.eps"))
        eps1 = float(get(flat, "weights.eps1"))
        eps2 = float(get(flat, "weights.eps2"))
    else:
        x0 = _point(flat, "weights.pole2")
        triple = get(flat, "weights.pole2_eps")
        if not isinstance(triple, (list, tuple)) or len(triple) != 3:
            raise ConfigError("'weights.pole2_eps' must be [eps, eps1, eps2]")
        eps, eps1, eps2 = (float(v) for v in triple)
    return WeightParams.from_M2(
        a1=dp.a1, a2=dp.a2, beta=beta, gamma=gamma, M2=float(m2), x0=x0,
        eps=eps, eps1=eps1, eps2=eps2,
        s=float(s if s is not None else get(flat, "weights.s", 1.0)),
        lam=float(lam if lam is not None else get(flat, "weights.lambda", 1.0)),
        T=T)
