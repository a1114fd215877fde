"""Experiment drivers: particle/deterministic comparison, phase table and the isolated-zero example."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from kbrw.displacement import DisplacementLaw, TailProfile, h_value
from kbrw.frontdyn import front_gap_chi, gamma_critical, phase_of, traveling_wave, wave_speed
from kbrw.logprofile import (
    PiecewiseProfile,
    evolve,
    project_pi,
    reproduce_profile_grid,
    select_grid,
    solve_sigma_star_grid,
    sup_on,
    support_components,
)
from kbrw.particle_sim import SimParams, empirical_log_profile, run_trajectory


# Particle system against the deterministic profile ------------------------

@dataclass
class CompareReport:
    """Cellwise comparison at step ``t``.

    Errors are taken between positive parts, as in the profile metric: an empty
    cell and a single-particle cell both count as 0.
    """

    N: int
    t: int
    seed: int
    threshold: float
    cell_left: np.ndarray
    cell_right: np.ndarray
    empirical: np.ndarray
    deterministic: np.ndarray
    error: np.ndarray
    max_error: float
    metadata: dict = field(default_factory=dict)

    def rows(self):
        return list(zip(self.cell_left, self.cell_right, self.empirical, self.deterministic, self.error))

    def considered(self) -> np.ndarray:
        return self.deterministic > self.threshold


def aligned_grid(z: np.ndarray, width: float) -> np.ndarray:
    """Cells ``(j w, (j+1) w]`` covering every point of ``z``."""
    if not width > 0:
        raise ValueError("cell width must be positive")
    j0 = math.ceil(float(np.min(z)) / width) - 1
    j1 = math.ceil(float(np.max(z)) / width)
    return np.arange(j0, j1 + 1) * width


def compare(params: SimParams, init: str = "point", cell_width: float = 0.2,
            threshold: float = 0.1, workers: int | None = None) -> CompareReport:
    """Run both engines for ``params.T`` steps and tabulate cellwise errors at the last step."""
    if params.law.rho != 1.0:
        raise ValueError("the deterministic engine needs rho = 1")
    tail = params.law.tail
    if init == "point":
        g0 = PiecewiseProfile.point(0.0, params.gamma)
        wave = None
    elif init == "wave":
        wave = traveling_wave(params.gamma, params.beta, params.law.c_minus).G
        g0 = wave
    else:
        raise ValueError(f"unknown initial condition {init!r}")
    gT = evolve(g0, tail, params.gamma, params.beta, params.T)[-1].g
    tr = run_trajectory(params, init, wave, workers=workers, record_profiles=False)
    z = tr.final.positions / params.c_N
    grid = aligned_grid(z, cell_width)
    emp = empirical_log_profile(tr.final, params.c_N, grid, params.log_N).values
    det = np.array([sup_on(gT, a, b) for a, b in zip(grid[:-1], grid[1:])])
    err = np.abs(np.maximum(emp, 0.0) - np.maximum(det, 0.0))
    mask = det > threshold
    mx = float(err[mask].max()) if np.any(mask) else 0.0
    meta = dict(tr.metadata, threshold=threshold, cell_width=cell_width, t=params.T)
    return CompareReport(int(params.N), params.T, params.seed, threshold, grid[:-1], grid[1:],
                         emp, det, err, mx, meta)


def compare_sweep(Ns, seeds, gamma: float, beta: float, law: DisplacementLaw, T: int,
                  init: str = "point", cell_width: float = 0.2, threshold: float = 0.1,
                  workers: int | None = None):
    """``{N: [max error per seed]}`` for the listed population sizes."""
    out = {}
    for N in Ns:
        out[int(N)] = [compare(SimParams(int(N), gamma, beta, law, int(s), T), init, cell_width,
                               threshold, workers).max_error for s in seeds]
    return out


# Phase diagram -------------------------------------------------------------

PHASE_COLUMNS = ("beta", "gamma", "gamma_c", "nu", "chi", "phase")


def phase_rows(betas, gammas):
    rows = []
    for b in betas:
        gc = gamma_critical(b)
        for g in gammas:
            rows.append((float(b), float(g), gc, wave_speed(g, b), max(front_gap_chi(g, b), 0.0),
                         phase_of(g, b)))
    return rows


# Isolated zero after selection ---------------------------------------------

@dataclass
class CounterexampleResult:
    rho: float
    beta: float
    gamma: float
    sigma_star: float
    sigma_closed_form: float
    components: list
    a: float
    b: float
    isolated_zero: float | None
    grid: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    s: np.ndarray = field(repr=False)

    @property
    def support_ok(self) -> bool:
        return len(self.components) == 2 and self.isolated_zero is not None


def check_counterexample_params(rho: float, beta: float, gamma: float, tol: float = 1e-12):
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if abs(beta - (1.0 - gamma)) > tol:
        raise ValueError(f"need beta = 1 - gamma, got beta = {beta}, gamma = {gamma}")
    if not rho < beta < 1:
        raise ValueError(f"need rho < beta < 1, got rho = {rho}, beta = {beta}")


def counterexample(rho: float = 0.25, beta: float = 0.4, gamma: float = 0.6, c_minus: float = 1.0,
                   step: float = 1e-3, half_width: float = 1.5) -> CounterexampleResult:
    """Selection of ``pi(1 + h)`` on a grid; the support splits off a single point at ``x = 1``.

    The grid is ``step * j`` for integer ``j`` and therefore contains ``x = 1``
    exactly when ``1/step`` is an integer. Interior support endpoints are
    refined by root finding on the selected curve.
    """
    check_counterexample_params(rho, beta, gamma)
    n = int(round(half_width / step))
    if abs(round(1.0 / step) * step - 1.0) > 1e-15 or n * step < 1.0:
        raise ValueError("the grid must contain x = 1")
    grid = np.arange(-n, n + 1) * step
    tail = TailProfile(rho, c_minus)
    r = project_pi(1.0 + h_value(tail, grid))
    sigma_num = solve_sigma_star_grid(grid, r, gamma, beta)
    sigma_cf = (1.0 - gamma) / beta
    if abs(sigma_num - sigma_cf) > 1e-9:
        raise RuntimeError(f"grid threshold {sigma_num} differs from {sigma_cf}")
    # Selecting at the bisection value could drop x = 1 by a rounding margin.
    s = select_grid(grid, r, sigma_cf, beta)
    comps = support_components(grid, s)

    def f(x):
        return 1.0 + h_value(tail, x) + beta * min(x - sigma_cf, 0.0)

    main = max(comps, key=lambda c: c[2])
    a = brentq(f, main[0] - step, main[0], xtol=1e-15)
    b = brentq(f, main[1], main[1] + step, xtol=1e-15)
    iso = None
    for lo, hi, mx in comps:
        if lo == hi and abs(mx) <= 1e-12:
            iso = lo
    return CounterexampleResult(rho, beta, gamma, sigma_num, sigma_cf, comps, float(a), float(b), iso,
                                grid, r, s)


def counterexample_via_reproduction(rho: float, beta: float, gamma: float, c_minus: float = 1.0,
                                    step: float = 1e-3, half_width: float = 1.5) -> np.ndarray:
    """``r`` built by the generic grid reproduction from a point mass of height ``gamma`` at 0."""
    n = int(round(half_width / step))
    grid = np.arange(-n, n + 1) * step
    g = np.where(grid == 0.0, gamma, -np.inf)
    return reproduce_profile_grid(grid, g, TailProfile(rho, c_minus), gamma)
