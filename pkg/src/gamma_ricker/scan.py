"""(r, v) parameter-plane maps of equilibrium existence and stability."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import DomainError
from .equilibrium import DEFAULT_Z_MAX, Verdict, count_roots, solve_equilibrium, threshold_R
from .montecarlo import thread_count
from .moment_map import Params
from .stability import CellClass, classify_detailed

FEASIBLE_LABELS = {Verdict.FEASIBLE_UNIQUE.value, CellClass.STABLE_FEASIBLE.value, CellClass.UNSTABLE_FEASIBLE.value}
SCAN_ROOT_GRID = 2048


@dataclass
class ScanGrid:
    kind: str
    r_axis: np.ndarray
    v_axis: np.ndarray
    verdict: np.ndarray  # (nv, nr) of str
    z_star: np.ndarray
    mu_star: np.ndarray
    s_star: np.ndarray
    stable: np.ndarray  # object array: True / False / None
    root_count: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.verdict.shape

    def feasible_mask(self):
        return np.isin(self.verdict, list(FEASIBLE_LABELS))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "v", "verdict", "z_star", "mu_star", "s_star", "stable"])

        def num(x):
            return "" if not math.isfinite(x) else f"{x:.17g}"

        for i, v in enumerate(self.v_axis):
            for j, r in enumerate(self.r_axis):
                st = self.stable[i, j]
                w.writerow([
                    f"{r:.17g}", f"{v:.17g}", self.verdict[i, j],
                    num(self.z_star[i, j]), num(self.mu_star[i, j]), num(self.s_star[i, j]),
                    "" if st is None else str(bool(st)).lower(),
                ])
        return buf.getvalue()

    def sidecar(self):
        return {
            "kind": self.kind,
            "r_axis": [float(x) for x in self.r_axis],
            "v_axis": [float(x) for x in self.v_axis],
            "resolution": {"nr": len(self.r_axis), "nv": len(self.v_axis)},
            **self.meta,
        }

    def sidecar_json(self):
        return json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n"


def _axis(name, lo, hi, n):
    if n < 1:
        raise DomainError(f"n{name}", n, ">= 1")
    if n == 1:
        if lo != hi:
            raise DomainError(f"{name}_max", hi, f"== {name}_min for a one-point axis")
        return np.array([float(lo)])
    if not hi > lo:
        raise DomainError(f"{name}_max", hi, f"> {name}_min={lo}")
    return np.linspace(lo, hi, n)


def _existence_row(args):
    v, r_axis, z_max = args
    row = []
    for r in r_axis:
        p = Params(r, v)
        eq = solve_equilibrium(p, z_max)
        row.append((eq.verdict.value, eq.z_star, eq.mu_star, eq.s_star, None, count_roots(p, z_max, SCAN_ROOT_GRID)))
    return row


def _stability_row(args):
    v, r_axis, z_max = args
    row = []
    for r in r_axis:
        c = classify_detailed(Params(r, v), z_max)
        eq = c.equilibrium
        stable = None if c.report is None else bool(c.report.stable)
        if eq is None:
            row.append((c.label.value, None, None, None, stable, -1))
        else:
            row.append((c.label.value, eq.z_star, eq.mu_star, eq.s_star, stable, -1))
    return row


def _run(kind, row_fn, r_range, v_range, nr, nv, z_max, workers):
    r_axis = _axis("r", *r_range, nr)
    v_axis = _axis("v", *v_range, nv)
    # Validate the corners here so workers never raise.
    Params(float(r_axis[0]), float(v_axis[0]))
    jobs = [(float(v), [float(r) for r in r_axis], z_max) for v in v_axis]
    workers = min(thread_count(workers), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(row_fn, jobs))
    else:
        rows = [row_fn(j) for j in jobs]
    shape = (nv, nr)
    verdict = np.empty(shape, dtype=object)
    stable = np.empty(shape, dtype=object)
    z = np.full(shape, np.nan)
    mu = np.full(shape, np.nan)
    s = np.full(shape, np.nan)
    roots = np.zeros(shape, dtype=int)
    for i, row in enumerate(rows):
        for j, (lab, zz, mm, ss, st, nroot) in enumerate(row):
            verdict[i, j] = lab
            stable[i, j] = st
            z[i, j] = np.nan if zz is None else zz
            mu[i, j] = np.nan if mm is None else mm
            s[i, j] = np.nan if ss is None else ss
            roots[i, j] = nroot
    meta = {"z_max": z_max, "seed_free": True, "root_grid_n": SCAN_ROOT_GRID if kind == "existence" else None}
    return ScanGrid(kind, r_axis, v_axis, verdict, z, mu, s, stable, roots, meta)


def existence_scan(r_range=(0.5, 10.0), v_range=(1.05, 4.5), nr=200, nv=200, z_max=DEFAULT_Z_MAX, workers=None) -> ScanGrid:
    """Equilibrium verdict and root multiplicity per cell; rows are v, columns r."""
    return _run("existence", _existence_row, r_range, v_range, nr, nv, z_max, workers)


def stability_scan(r_range=(0.5, 10.0), v_range=(1.05, 4.5), nr=200, nv=200, z_max=DEFAULT_Z_MAX, workers=None) -> ScanGrid:
    return _run("stability", _stability_row, r_range, v_range, nr, nv, z_max, workers)


@dataclass
class BoundaryReport:
    max_deviation: Optional[float]
    deviations: List[tuple]  # (r, v_flip_midpoint, R(r), |deviation|)
    skipped_columns: List[float]
    multi_flip_columns: List[float]
    dv: Optional[float]


def boundary_error(grid: ScanGrid) -> BoundaryReport:
    """Distance in v between each column's feasible->infeasible flip and the curve v = R(r)."""
    feas = grid.feasible_mask()
    devs, skipped, multi = [], [], []
    for j, r in enumerate(grid.r_axis):
        col = feas[:, j]
        flips = np.nonzero(col[:-1] != col[1:])[0]
        if len(flips) == 0:
            skipped.append(float(r))
            continue
        if len(flips) > 1:
            multi.append(float(r))
        i = flips[0]
        mid = 0.5 * (grid.v_axis[i] + grid.v_axis[i + 1])
        R = threshold_R(r)
        devs.append((float(r), float(mid), R, abs(mid - R)))
    dv = float(grid.v_axis[1] - grid.v_axis[0]) if len(grid.v_axis) > 1 else None
    worst = max((d[3] for d in devs), default=None)
    return BoundaryReport(worst, devs, skipped, multi, dv)
