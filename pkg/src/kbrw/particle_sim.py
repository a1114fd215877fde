"""Stochastic noisy K-branching random walk with Gibbs selection.

Each step every one of the ``K`` particles has ``m`` children displaced by
i.i.d. draws of the displacement law. ``K`` children are then kept by
sampling without replacement with weights ``exp(beta_N * y)``. Selection
uses Gumbel keys ``beta_N * y + G``: the ``K`` largest keys are exactly the
``K`` earliest exponential clocks with rates ``exp(beta_N * y)``.

Random numbers come from counter-derived Philox streams keyed by
``(seed, step, stage, chunk)`` with a fixed chunk size. Results therefore do
not depend on how many worker threads fill the chunks.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from kbrw import __version__
from kbrw.displacement import DisplacementLaw, quantile_scale, sample

CHUNK = 1 << 16
STAGE_REPRODUCE = 0
STAGE_SELECT = 1
RNG_ALGORITHM = (f"numpy-{np.__version__}/Philox4x64-10/"
                 f"SeedSequence(seed, spawn_key=(step, stage, chunk))/chunk={CHUNK}")


def default_workers() -> int:
    """Worker count: ``KBRW_THREADS`` if set, else up to 4 CPUs."""
    env = os.environ.get("KBRW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, min(4, os.cpu_count() or 1))


@dataclass(frozen=True)
class CounterStreams:
    """Deterministic sub-streams indexed by ``(step, stage, chunk)``."""

    seed: int

    def generator(self, step: int, stage: int, chunk: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed & (2 ** 64 - 1), spawn_key=(step, stage, chunk))
        return np.random.Generator(np.random.Philox(ss))

    def fill(self, step: int, stage: int, n: int, draw, workers: int | None = None) -> np.ndarray:
        """Concatenate ``draw(gen, size)`` over fixed-size chunks of ``n`` values."""
        n_chunks = max(1, -(-n // CHUNK))
        sizes = [min(CHUNK, n - c * CHUNK) for c in range(n_chunks)]

        def job(c):
            return draw(self.generator(step, stage, c), sizes[c])

        workers = default_workers() if workers is None else workers
        if workers <= 1 or n_chunks == 1:
            parts = [job(c) for c in range(n_chunks)]
        else:
            with ThreadPoolExecutor(max_workers=min(workers, n_chunks)) as ex:
                parts = list(ex.map(job, range(n_chunks)))
        return np.concatenate(parts) if parts else np.empty(0)


def _int_pow_floor(N: int, gamma: float) -> int:
    K = int(math.floor(math.exp(gamma * math.log(N)) * (1.0 + 1e-12)))
    return max(K, 1)


@dataclass(frozen=True)
class SimParams:
    N: int
    gamma: float
    beta: float
    law: DisplacementLaw = field(default_factory=DisplacementLaw)
    seed: int = 0
    T: int = 10

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 4:
            raise ValueError(f"N must be an integer >= 4, got {self.N}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.T < 0:
            raise ValueError("T must be non-negative")
        if not (self.c_N > 0 and math.isfinite(self.beta_N)):
            raise ValueError("the law gives a non-positive scale c_N for this N")

    @property
    def K(self) -> int:
        return _int_pow_floor(int(self.N), self.gamma)

    @property
    def m(self) -> int:
        return int(self.N) // self.K

    @property
    def N_eff(self) -> int:
        return self.K * self.m

    @property
    def log_N(self) -> float:
        return math.log(self.N)

    @property
    def c_N(self) -> float:
        return quantile_scale(self.law, self.N_eff)

    @property
    def beta_N(self) -> float:
        return self.beta / self.c_N * self.log_N

    def describe(self) -> dict:
        d = asdict(self)
        d.update(K=self.K, m=self.m, N_eff=self.N_eff, c_N=self.c_N, beta_N=self.beta_N)
        return d


@dataclass(frozen=True)
class Population:
    positions: np.ndarray
    step: int = 0

    def __post_init__(self):
        arr = np.array(self.positions, dtype=float).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("positions must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "positions", arr)

    def __len__(self):
        return len(self.positions)

    def sorted(self) -> np.ndarray:
        return np.sort(self.positions)


@dataclass(frozen=True)
class StepRecord:
    step: int
    sigma_star_N: float
    front: float
    back: float


@dataclass(frozen=True)
class EmpiricalProfile:
    grid: np.ndarray
    counts: np.ndarray
    values: np.ndarray
    log_N: float

    @property
    def cell_left(self) -> np.ndarray:
        return self.grid[:-1]

    @property
    def cell_right(self) -> np.ndarray:
        return self.grid[1:]

    def total(self) -> int:
        return int(self.counts.sum())


def reproduce(pop: Population, params: SimParams, streams: CounterStreams,
              workers: int | None = None) -> np.ndarray:
    """Offspring vector; child ``j`` of parent ``i`` sits at index ``i*m + j``."""
    if len(pop) != params.K:
        raise ValueError(f"population has {len(pop)} particles, expected K = {params.K}")
    n = params.N_eff
    law = params.law
    X = streams.fill(pop.step, STAGE_REPRODUCE, n, lambda g, size: sample(law, g, size), workers)
    return np.repeat(pop.positions, params.m) + X


def top_k_indices(keys: np.ndarray, K: int):
    """Indices of the ``K`` largest keys (ties go to lower indices) and the ``K``-th largest key."""
    n = keys.size
    if K > n:
        raise ValueError(f"cannot select K = {K} of {n}")
    if K < 1:
        raise ValueError("K must be positive")
    kth = float(np.partition(keys, n - K)[n - K])
    above = np.nonzero(keys > kth)[0]
    ties = np.nonzero(keys == kth)[0][:K - above.size]
    idx = np.sort(np.concatenate([above, ties]))
    return idx, kth


def gibbs_select(offspring, K: int, beta_N: float, rng, sigma_scale: float = 1.0):
    """Draw ``K`` offspring without replacement with weights ``exp(beta_N * y)``.

    ``rng`` is a numpy ``Generator`` or a callable returning ``n`` standard
    Gumbel variates. Returns the selected population and ``kappa /
    sigma_scale`` where ``kappa`` is the ``K``-th largest key; with
    ``sigma_scale = beta * log N`` this is the threshold exponent in ``c_N``
    units.
    """
    y = np.asarray(offspring, dtype=float)
    if K > y.size:
        raise ValueError(f"cannot select K = {K} of {y.size} offspring")
    if beta_N < 0:
        raise ValueError("beta_N must be non-negative")
    n = y.size
    noise = rng.gumbel(size=n) if isinstance(rng, np.random.Generator) else rng(n)
    keys = beta_N * y + noise
    idx, kappa = top_k_indices(keys, K)
    return Population(y[idx]), kappa / sigma_scale


def clock_select(offspring, K: int, beta_N: float, rng: np.random.Generator) -> np.ndarray:
    """Reference sampler: the ``K`` earliest exponential clocks with rates ``exp(beta_N * y)``.

    Indices are returned in ring order. Meant for small instances.
    """
    y = np.asarray(offspring, dtype=float)
    rates = np.exp(beta_N * (y - y.max()))
    times = rng.standard_exponential(y.size) / rates
    return np.argsort(times, kind="stable")[:K]


def step(pop: Population, params: SimParams, streams: CounterStreams, workers: int | None = None):
    """Reproduction followed by selection; returns the new population and its record."""
    off = reproduce(pop, params, streams, workers)
    noise = lambda n: streams.fill(pop.step, STAGE_SELECT, n, lambda g, size: g.gumbel(size=size), workers)
    sel, sig = gibbs_select(off, params.K, params.beta_N, noise, sigma_scale=params.beta * params.log_N)
    new = Population(sel.positions, pop.step + 1)
    z = new.positions / params.c_N
    return new, StepRecord(new.step, float(sig), float(z.max()), float(z.min()))


def default_grid(pop: Population, c_N: float, cells: int = 64, pad: float = 0.05) -> np.ndarray:
    z = pop.positions / c_N
    return np.linspace(z.min() - pad, z.max() + pad, cells + 1)


def empirical_log_profile(pop: Population, c_N: float, grid, log_N: float) -> EmpiricalProfile:
    """Cell values ``log(count)/log N`` on cells ``(a_i, a_{i+1}]`` in ``c_N`` units."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing with at least one cell")
    z = pop.positions / c_N
    if z.min() <= grid[0] or z.max() > grid[-1]:
        raise ValueError("grid does not cover the population")
    cell = np.searchsorted(grid, z, side="left") - 1
    counts = np.bincount(cell, minlength=grid.size - 1)
    with np.errstate(divide="ignore"):
        values = np.where(counts > 0, np.log(np.maximum(counts, 1)) / log_N, -np.inf)
    return EmpiricalProfile(grid, counts, values, log_N)


def initial_population(params: SimParams, init: str = "point", wave_profile=None,
                       cells: int = 64) -> Population:
    """``point``: all particles at 0. ``wave``: cell counts shaped like ``N**wave_profile``."""
    K = params.K
    if init == "point":
        return Population(np.zeros(K))
    if init != "wave":
        raise ValueError(f"unknown initial condition {init!r}")
    if wave_profile is None:
        raise ValueError("wave initial condition needs a profile")
    from kbrw.logprofile import sup_on

    g = wave_profile
    grid = np.linspace(g.L - 0.05, g.U + 0.05, cells + 1)
    vals = np.array([sup_on(g, a, b) for a, b in zip(grid[:-1], grid[1:])])
    fin = np.isfinite(vals)
    w = np.where(fin, np.exp(np.where(fin, vals, 0.0) * params.log_N), 0.0)
    counts = np.floor(w).astype(np.int64)
    if counts.sum() > K:
        counts = np.floor(K * w / w.sum()).astype(np.int64)
    counts[int(np.argmax(w))] += K - int(counts.sum())
    mids = 0.5 * (grid[:-1] + grid[1:])
    pos = np.repeat(mids, counts) * params.c_N
    return Population(pos)


@dataclass
class Trajectory:
    profiles: list
    records: list
    metadata: dict
    final: Population | None = None


def run_trajectory(params: SimParams, init: str = "point", wave_profile=None, cells: int = 64,
                   workers: int | None = None, record_profiles: bool = True) -> Trajectory:
    """Run ``T`` steps from the chosen initial condition."""
    streams = CounterStreams(params.seed)
    pop = initial_population(params, init, wave_profile)
    profiles = []
    if record_profiles:
        profiles.append(empirical_log_profile(pop, params.c_N, default_grid(pop, params.c_N, cells), params.log_N))
    records = []
    for _ in range(params.T):
        pop, rec = step(pop, params, streams, workers)
        records.append(rec)
        if record_profiles:
            grid = default_grid(pop, params.c_N, cells)
            profiles.append(empirical_log_profile(pop, params.c_N, grid, params.log_N))
    meta = {
        "params": params.describe(),
        "seed": params.seed,
        "rng_algorithm": RNG_ALGORITHM,
        "N_eff": params.N_eff,
        "c_N": params.c_N,
        "beta_N": params.beta_N,
        "init": init,
        "cells": cells,
        "code_version": __version__,
    }
    return Trajectory(profiles, records, meta, pop)
