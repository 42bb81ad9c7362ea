"""Closed (mean, variance) recurrence of the stochastic Ricker map under the Gamma closure.

One step of the map reads::

    mu'  = e^r  E[X e^{-rX}]
    s'   = v e^{2r} E[X^2 e^{-2rX}] - mu'^2

with both expectations supplied by :func:`gamma_kernels.laplace_moment`.
A step whose variance comes out non-positive is a *breakdown* of the
closure and is reported as such instead of being clamped.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import List, Optional

from .errors import DomainError, NumericFailure, require_positive
from .gamma_kernels import laplace_moment


@dataclass(frozen=True)
class Params:
    r: float
    v: float

    def __post_init__(self):
        require_positive("r", self.r)
        if not self.v > 1:
            raise DomainError("v", self.v, "> 1")


@dataclass(frozen=True)
class MomentState:
    mu: float
    s: float

    def __post_init__(self):
        require_positive("mu", self.mu)
        require_positive("s", self.s)


@dataclass(frozen=True)
class Breakdown:
    """Raw (mu, s) produced by a step that left the feasible region."""

    mu: float
    s: float


@dataclass(frozen=True)
class StepOutcome:
    next: MomentState | Breakdown
    raw_second_moment: float

    @property
    def broke_down(self):
        return isinstance(self.next, Breakdown)


def _raw_step(mu, s, r, v):
    with_r = laplace_moment(mu, s, r, 1)
    with_2r = laplace_moment(mu, s, 2.0 * r, 2)
    try:
        growth = math.exp(r)
    except OverflowError:
        raise NumericFailure("exp(r) overflowed", {"mu": mu, "s": s, "r": r, "v": v}) from None
    mu_next = growth * with_r
    second = v * growth * growth * with_2r
    s_next = second - mu_next * mu_next
    if not (math.isfinite(mu_next) and math.isfinite(second) and math.isfinite(s_next)):
        raise NumericFailure(
            "non-finite value in moment step", {"mu": mu, "s": s, "r": r, "v": v}
        )
    return mu_next, s_next, second


def step(state: MomentState, p: Params) -> StepOutcome:
    mu_next, s_next, second = _raw_step(state.mu, state.s, p.r, p.v)
    if mu_next > 0 and s_next > 0:
        return StepOutcome(MomentState(mu_next, s_next), second)
    return StepOutcome(Breakdown(mu_next, s_next), second)


def step_values(mu, s, p: Params):
    """Unvalidated (mu', s') pair, used by finite-difference stencils."""
    mu_next, s_next, _ = _raw_step(mu, s, p.r, p.v)
    return mu_next, s_next


@dataclass
class Trajectory:
    states: List[MomentState] = field(default_factory=list)
    reason: str = "completed"
    breakdown_step: Optional[int] = None
    breakdown: Optional[Breakdown] = None

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]

    @property
    def completed(self):
        return self.reason == "completed"

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n", "mu", "s"])
        for n, st in enumerate(self.states):
            writer.writerow([n, f"{st.mu:.17g}", f"{st.s:.17g}"])
        if self.breakdown_step is not None:
            buf.write(f"# breakdown at n={self.breakdown_step}\n")
        elif self.reason != "completed":
            buf.write(f"# terminated at n={len(self.states)}: {self.reason}\n")
        return buf.getvalue()


def iterate(state0: MomentState, p: Params, n_steps: int) -> Trajectory:
    """Dense trajectory of the moment map; stops early on breakdown or numeric failure."""
    if n_steps < 0:
        raise DomainError("n_steps", n_steps, ">= 0")
    traj = Trajectory(states=[state0])
    current = state0
    for n in range(n_steps):
        try:
            out = step(current, p)
        except NumericFailure as exc:
            traj.reason = f"numeric failure: {exc}"
            return traj
        if out.broke_down:
            traj.reason = "breakdown"
            traj.breakdown_step = n + 1
            traj.breakdown = out.next
            return traj
        current = out.next
        traj.states.append(current)
    return traj


def classical_ricker_step(x, r):
    return x * math.exp(r * (1.0 - x))


@dataclass(frozen=True)
class LimitGap:
    gap: float
    reason: str = "completed"


def deterministic_limit_gap(mu0, r, eps_v, eps_s, n_steps) -> LimitGap:
    """Largest |mu_n - x_n| between the moment map near (v=1, s=0) and the plain Ricker orbit."""
    for name, eps in (("eps_v", eps_v), ("eps_s", eps_s)):
        if not 0 < eps <= 1e-4:
            raise DomainError(name, eps, "in (0, 1e-4]")
    p = Params(r, 1.0 + eps_v)
    traj = iterate(MomentState(mu0, eps_s * mu0 * mu0), p, n_steps)
    if not traj.completed:
        return LimitGap(math.inf, traj.reason)
    x = mu0
    gap = 0.0
    for st in traj.states[1:]:
        x = classical_ricker_step(x, r)
        gap = max(gap, abs(st.mu - x))
    return LimitGap(gap)
