"""Local stability of moment-map equilibria: finite-difference Jacobian + Schur test."""
from __future__ import annotations

import enum
import sys
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .equilibrium import DEFAULT_Z_MAX, solve_equilibrium, Verdict
from .errors import NumericFailure, StabilityUndefined
from .moment_map import MomentState, Params, step_values

FD_SCALE = sys.float_info.epsilon ** (1.0 / 3.0)
HALVING_RTOL = 1e-5
ROUNDING_ULPS = 32


@dataclass(frozen=True)
class StabilityReport:
    jacobian: np.ndarray
    trace: float
    det: float
    schur: Tuple[bool, bool, bool]
    stable: bool
    fd_step: Optional[Tuple[float, float]] = None


def _steps(x):
    # Relative steps keep every stencil point in the positive quadrant.
    return tuple(abs(xj) * FD_SCALE for xj in x)


def central_jacobian(fn: Callable, x, h):
    x = np.asarray(x, dtype=float)
    n = len(x)
    jac = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h[j]
        jac[:, j] = (np.asarray(fn(*(x + e))) - np.asarray(fn(*(x - e)))) / (2 * h[j])
    return jac


def _entrywise_close(a, b, noise, rtol=HALVING_RTOL):
    # Differences below the rounding-noise level of the stencil are not evidence of non-convergence.
    return bool(np.all(np.abs(a - b) <= rtol * np.maximum(np.abs(a), np.abs(b)) + noise))


def _rounding_noise(magnitude, h):
    """Rounding error of a central difference, entrywise: ~ eps * |terms of G_i| / h_j."""
    return ROUNDING_ULPS * sys.float_info.epsilon * np.outer(magnitude, 1.0 / np.asarray(h))


def _safe_map(p):
    def fn(mu, s):
        if not (mu > 0 and s > 0):
            raise StabilityUndefined(f"stencil left the positive quadrant at mu={mu}, s={s}")
        try:
            mu1, s1 = step_values(mu, s, p)
        except NumericFailure as exc:
            raise StabilityUndefined(str(exc)) from exc
        if not (mu1 > 0 and s1 > 0):
            raise StabilityUndefined(f"variance update non-positive at stencil point ({mu}, {s})")
        return mu1, s1

    return fn


def _term_magnitudes(p, x):
    # G2 is a difference of two terms of size E[X'^2]; its noise scales with that, not with s'.
    mu1, s1 = step_values(x[0], x[1], p)
    return np.array([abs(mu1), abs(s1) + mu1 * mu1])


@dataclass(frozen=True)
class JacobianEstimate:
    jacobian: np.ndarray
    coarse: np.ndarray
    fd_step: Tuple[float, float]
    richardson: bool


def estimate_jacobian(point: MomentState, p: Params, map_fn: Optional[Callable] = None) -> JacobianEstimate:
    fn = map_fn or _safe_map(p)
    x = (point.mu, point.s)
    h = _steps(x)
    h2 = tuple(t / 2 for t in h)
    if map_fn is None:
        magnitude = _term_magnitudes(p, x)
    else:
        magnitude = np.abs(np.asarray(fn(*x), dtype=float))
    j1 = central_jacobian(fn, x, h)
    j2 = central_jacobian(fn, x, h2)
    if not (np.all(np.isfinite(j1)) and np.all(np.isfinite(j2))):
        raise StabilityUndefined("non-finite Jacobian entries")
    if _entrywise_close(j1, j2, _rounding_noise(magnitude, h2)):
        return JacobianEstimate(j2, j1, h, False)
    # Central differences have O(h^2) error, so one Richardson level removes it;
    # coarser steps are used so the retry reduces rounding noise rather than adding to it.
    j_2h = central_jacobian(fn, x, tuple(2 * t for t in h))
    j_4h = central_jacobian(fn, x, tuple(4 * t for t in h))
    fine = (4 * j1 - j_2h) / 3
    coarse = (4 * j_2h - j_4h) / 3
    if not _entrywise_close(fine, coarse, _rounding_noise(magnitude, h)):
        raise StabilityUndefined("finite-difference Jacobian did not converge under step halving")
    return JacobianEstimate(fine, coarse, h, True)


def numerical_jacobian(point: MomentState, p: Params, map_fn: Optional[Callable] = None) -> np.ndarray:
    """Central-difference Jacobian of the moment map at ``point``.

    Accepted only if halving the step changes every entry by less than 1e-5
    (relative); otherwise retried once with Richardson extrapolation.
    Raises :class:`StabilityUndefined` if a stencil point breaks down.
    """
    return estimate_jacobian(point, p, map_fn).jacobian


def schur_test(J) -> StabilityReport:
    J = np.asarray(J, dtype=float)
    tr = float(J[0, 0] + J[1, 1])
    det = float(J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0])
    flags = (1 - tr + det > 0, 1 + tr + det > 0, 1 - det > 0)
    return StabilityReport(J, tr, det, flags, all(flags))


class CellClass(str, enum.Enum):
    STABLE_FEASIBLE = "StableFeasible"
    UNSTABLE_FEASIBLE = "UnstableFeasible"
    INFEASIBLE_ROOT = "InfeasibleRoot"
    NO_ROOT_FOUND = "NoRootFound"
    STABILITY_UNDEFINED = "StabilityUndefined"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class Classification:
    label: CellClass
    equilibrium: object
    report: Optional[StabilityReport] = None
    detail: str = ""


def classify_detailed(p: Params, z_max=DEFAULT_Z_MAX) -> Classification:
    try:
        eq = solve_equilibrium(p, z_max)
    except Exception as exc:  # classify is total: every cell gets a label
        return Classification(CellClass.STABILITY_UNDEFINED, None, detail=str(exc))
    if eq.verdict is Verdict.NO_ROOT_FOUND:
        return Classification(CellClass.NO_ROOT_FOUND, eq)
    if eq.verdict is Verdict.INFEASIBLE_ROOT:
        return Classification(CellClass.INFEASIBLE_ROOT, eq)
    try:
        est = estimate_jacobian(MomentState(eq.mu_star, eq.s_star), p)
    except (StabilityUndefined, ValueError) as exc:
        return Classification(CellClass.STABILITY_UNDEFINED, eq, detail=str(exc))
    fine = schur_test(est.jacobian)
    coarse = schur_test(est.coarse)
    report = StabilityReport(fine.jacobian, fine.trace, fine.det, fine.schur, fine.stable, est.fd_step)
    if fine.stable != coarse.stable:
        return Classification(CellClass.STABILITY_UNDEFINED, eq, report, "classification flips under step halving")
    label = CellClass.STABLE_FEASIBLE if fine.stable else CellClass.UNSTABLE_FEASIBLE
    return Classification(label, eq, report)


def classify(p: Params, z_max=DEFAULT_Z_MAX) -> CellClass:
    return classify_detailed(p, z_max).label
