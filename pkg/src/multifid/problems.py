"""Benchmark problems: closed-form multi-fidelity test functions, their
nominal input-space mappings, and dataset-backed placeholders for the
structural and aerodynamic cases whose high-fidelity responses come from
external solvers (ingested as CSV files).

Fidelity indexing is 0 = low, 1 = high throughout.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import NominalMapping
from .errors import DatasetBacked, DimensionMismatch, OutOfBounds

_PARK_X1_GUARD = 1e-8


@dataclass(frozen=True)
class ProblemSpec:
    """One benchmark: per-fidelity evaluators, bounds, and the nominal map.

    ``lf_func``/``hf_func`` are vectorized (n, d) -> (n,) or None when that
    fidelity is dataset-backed.  ``exact_lf`` marks an analytically
    evaluable low fidelity (required by input-mapping calibration).
    """

    name: str
    lf_bounds: np.ndarray
    hf_bounds: np.ndarray
    nominal: NominalMapping
    lf_func: Callable[[np.ndarray], np.ndarray] | None = None
    hf_func: Callable[[np.ndarray], np.ndarray] | None = None
    default_test_size: int = 1000
    default_lf_size: int = 30

    def __post_init__(self):
        object.__setattr__(self, "lf_bounds", np.asarray(self.lf_bounds, float).reshape(-1, 2))
        object.__setattr__(self, "hf_bounds", np.asarray(self.hf_bounds, float).reshape(-1, 2))

    @property
    def lf_dim(self) -> int:
        return self.lf_bounds.shape[0]

    @property
    def hf_dim(self) -> int:
        return self.hf_bounds.shape[0]

    @property
    def exact_lf(self) -> bool:
        return self.lf_func is not None

    @property
    def dataset_backed(self) -> bool:
        return self.lf_func is None or self.hf_func is None


def _check_bounds(x, bounds, what):
    span = np.maximum(bounds[:, 1] - bounds[:, 0], 1.0)
    if np.any(x < bounds[:, 0] - 1e-9 * span) or np.any(x > bounds[:, 1] + 1e-9 * span):
        raise OutOfBounds(f"{what}: point outside declared bounds")


def eval_problem(spec: ProblemSpec, fidelity: int, x):
    """Exact closed-form response at fidelity 0 (low) or 1 (high).

    Accepts a single point (d,) returning a scalar, or a matrix (n, d)
    returning a vector.  Raises DatasetBacked when no closed form exists.
    """
    bounds = spec.lf_bounds if fidelity == 0 else spec.hf_bounds
    func = spec.lf_func if fidelity == 0 else spec.hf_func
    if func is None:
        raise DatasetBacked(
            f"{spec.name}: fidelity {fidelity} has no closed form; load it from CSV"
        )
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != bounds.shape[0]:
        raise DimensionMismatch(
            f"{spec.name}: expected {bounds.shape[0]} columns, got {pts.shape[1]}"
        )
    _check_bounds(pts, bounds, spec.name)
    out = np.asarray(func(pts), dtype=float).ravel()
    return float(out[0]) if single else out


def nominal_map(spec: ProblemSpec, x_hf) -> np.ndarray:
    """Nominal mapped low-fidelity coordinates of high-fidelity points."""
    x_hf = np.atleast_2d(np.asarray(x_hf, dtype=float))
    _check_bounds(x_hf, spec.hf_bounds, spec.name)
    return spec.nominal.apply(x_hf)


# ---------------------------------------------------------------------------
# Illustrative 1-D problem: the high fidelity composes the low fidelity with
# an affine input transformation, so the nominal mapping is known exactly.


def _illustrative_lf(z):
    return np.cos(15.0 * z[:, 0])


def _illustrative_hf(x):
    return x[:, 0] * np.exp(np.cos(15.0 * (2.0 * x[:, 0] - 0.2))) - 1.0


def illustrative() -> ProblemSpec:
    return ProblemSpec(
        name="illustrative",
        lf_bounds=[[-0.2, 1.8]],
        hf_bounds=[[0.0, 1.0]],
        nominal=NominalMapping(
            source_dim=1, target_dim=1, linear=(np.array([[2.0]]), np.array([-0.2]))
        ),
        lf_func=_illustrative_lf,
        hf_func=_illustrative_hf,
    )


# ---------------------------------------------------------------------------
# Problem 1: four-dimensional high fidelity whose low fidelity drops the last
# two variables (nominal mapping = coordinate projection).


def _park_hf(x):
    x1 = np.maximum(x[:, 0], _PARK_X1_GUARD)  # guards the x4/x1^2 singularity
    x2, x3, x4 = x[:, 1], x[:, 2], x[:, 3]
    first = 0.5 * x1 * (np.sqrt(1.0 + (x2 + x3**2) * x4 / x1**2) - 1.0)
    return first + (x1 + 3.0 * x4) * np.exp(1.0 + np.sin(x3))


def _park_lf(z):
    x1, x2 = z[:, 0], z[:, 1]
    full = np.column_stack([x1, x2, np.full_like(x1, 0.5), np.full_like(x1, 0.5)])
    return (1.0 + np.sin(x1) / 10.0) * _park_hf(full) - 2.0 * x1 + x2**2 + 0.75


_PARK_A0 = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]])


def problem1() -> ProblemSpec:
    return ProblemSpec(
        name="problem1",
        lf_bounds=[[0.0, 1.0]] * 2,
        hf_bounds=[[0.0, 1.0]] * 4,
        nominal=NominalMapping(source_dim=4, target_dim=2, linear=(_PARK_A0, np.zeros(2))),
        lf_func=_park_lf,
        hf_func=_park_hf,
    )


# ---------------------------------------------------------------------------
# Problem 2: spherical high-fidelity parametrization versus a cartesian
# low-fidelity one (different dimensions and coordinate systems).


def _spherical_hf(x):
    r, theta, phi = x[:, 0], x[:, 1], x[:, 2]
    a = r * np.cos(0.5 * np.pi * phi)
    b = r * np.sin(0.5 * np.pi * theta)
    c = np.abs(r * np.cos(0.5 * np.pi * theta) - 2.0 * r * np.sin(0.5 * np.pi * theta))
    return 3.5 * a + 2.2 * b + 0.85 * c**2.2 + 2.0 * np.cos(np.pi * phi) / (
        1.0 + 3.0 * r**2 + 10.0 * theta**2
    )


def _spherical_lf(z):
    x1, x2 = z[:, 0], z[:, 1]
    return 3.0 * x1 + 2.0 * x2 + 0.7 * np.abs(x1 - 1.7 * x2) ** 2.35


def _spherical_nominal(x):
    r, theta, phi = x[:, 0], x[:, 1], x[:, 2]
    return np.column_stack([r * np.cos(0.5 * np.pi * phi), r * np.sin(0.5 * np.pi * theta)])


def problem2() -> ProblemSpec:
    return ProblemSpec(
        name="problem2",
        lf_bounds=[[0.0, 1.0]] * 2,
        hf_bounds=[[0.0, 1.0]] * 3,
        nominal=NominalMapping(source_dim=3, target_dim=2, func=_spherical_nominal),
        lf_func=_spherical_lf,
        hf_func=_spherical_hf,
    )


# ---------------------------------------------------------------------------
# Structural beam: analytic low fidelity (von Mises stress of a solid
# cantilever at its clamped end), dataset-backed high fidelity (bored beam,
# finite elements).  LF variables: force F, length L, width d; HF adds the
# bore width and length.


def _beam_lf(z):
    F, L, d = z[:, 0], z[:, 1], z[:, 2]
    sigma_b = 6.0 * F * L / d**3
    tau_sh = F / d**2  # shear at the clamped end of a square d x d section
    return np.sqrt(sigma_b**2 + 3.0 * tau_sh**2)


_BEAM_LF_BOUNDS = [[1.0, 10.0], [1.0, 5.0], [0.5, 1.5]]
_BEAM_HF_BOUNDS = _BEAM_LF_BOUNDS + [[0.05, 0.4], [0.1, 1.0]]
_BEAM_A0 = np.vstack([np.eye(3), np.zeros((2, 3))])


def beam() -> ProblemSpec:
    return ProblemSpec(
        name="beam",
        lf_bounds=_BEAM_LF_BOUNDS,
        hf_bounds=_BEAM_HF_BOUNDS,
        nominal=NominalMapping(source_dim=5, target_dim=3, linear=(_BEAM_A0, np.zeros(3))),
        lf_func=_beam_lf,
        hf_func=None,
    )


# ---------------------------------------------------------------------------
# Aerodynamic wing: both fidelities dataset-backed.  The high-fidelity wing
# and canard have two sections each; the nominal mapping collapses each pair
# of sections into a single equivalent section with the same surface.
# HF layout per block: (RC, TC1, TC2, beta1, beta2, alpha); LF: (RC, TC, beta).


def _wing_block(b):
    rc, tc1, tc2, b1, b2, alpha = (b[:, j] for j in range(6))
    tc = tc1 + (1.0 - alpha) * tc2 + (alpha - 1.0) * rc
    beta = alpha * b1 + (1.0 - alpha) * b2
    return np.column_stack([rc, tc, beta])


def _aero_nominal(x):
    return np.column_stack([_wing_block(x[:, :6]), _wing_block(x[:, 6:])])


def aero() -> ProblemSpec:
    return ProblemSpec(
        name="aero",
        lf_bounds=[[0.0, 1.0]] * 6,
        hf_bounds=[[0.0, 1.0]] * 12,
        nominal=NominalMapping(source_dim=12, target_dim=6, func=_aero_nominal),
        lf_func=None,
        hf_func=None,
        default_test_size=250,
        default_lf_size=120,
    )


PROBLEMS: dict[str, Callable[[], ProblemSpec]] = {
    "illustrative": illustrative,
    "problem1": problem1,
    "problem2": problem2,
    "beam": beam,
    "aero": aero,
}


def get_problem(name: str) -> ProblemSpec:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise KeyError(
            f"unknown problem {name!r}; available: {sorted(PROBLEMS)}"
        ) from None
