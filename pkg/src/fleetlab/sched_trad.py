"""Once-per-day traditional fleet redistribution strategies.

All strategies produce a nonnegative per-region allocation summing to the
fleet total; trucks move vehicles between regions but never add or remove
them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .util import as_rng, largest_remainder


@dataclass
class TradScheduleRequest:
    s_pre_trad: np.ndarray          # (N,) current layout
    predicted_demand: np.ndarray    # (T, N, N) forecast for the day
    fleet_total: int

    def __post_init__(self):
        self.s_pre_trad = np.asarray(self.s_pre_trad, dtype=np.int64)
        if int(self.s_pre_trad.sum()) != self.fleet_total:
            raise ValueError("fleet_total must equal sum(s_pre_trad)")


def sdsm_allocate(request: TradScheduleRequest, historical_origin_demand) -> np.ndarray:
    """Static demand-supply matching: allocate proportionally to historical
    origin demand (largest-remainder integerization, ties to lower index).
    All-zero history degrades to a uniform split."""
    hist = np.asarray(historical_origin_demand, dtype=float)
    if hist.shape != (request.s_pre_trad.size,):
        raise ValueError("historical demand must have one entry per region")
    if np.any(hist < 0):
        raise ValueError("historical demand must be nonnegative")
    return largest_remainder(hist, request.fleet_total)


@dataclass
class GaParams:
    population: int = 32
    generations: int = 100
    mutation_rate: float = 0.1
    elitism: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must be in [0, 1]")
        if not 0 <= self.elitism <= self.population:
            raise ValueError("elitism must be in [0, population]")


def _random_allocation(n: int, total: int, rng) -> np.ndarray:
    return rng.multinomial(total, np.full(n, 1.0 / n))


def _crossover(a: np.ndarray, b: np.ndarray, total: int, rng) -> np.ndarray:
    """Per-region integer blend of two parents, repaired back to the fleet
    total by handing the floored shortfall to random regions."""
    child = (a + b) // 2
    shortfall = total - int(child.sum())
    for _ in range(shortfall):
        child[rng.integers(child.size)] += 1
    return child


def _mutate(child: np.ndarray, rng) -> None:
    # move one vehicle between two random regions
    donors = np.flatnonzero(child > 0)
    if donors.size == 0:
        return
    src = int(donors[rng.integers(donors.size)])
    dst = int(rng.integers(child.size))
    child[src] -= 1
    child[dst] += 1


@dataclass
class GaResult:
    allocation: np.ndarray
    fitness: float
    best_by_generation: list


def ga_allocate(request: TradScheduleRequest, fitness, params: GaParams) -> GaResult:
    """Genetic search over integer allocations.

    `fitness(allocation) -> float` is typically a day of simulation on the
    predicted demand with no self-driving vehicles. Elitism keeps the best
    individuals verbatim, so the best fitness never decreases.
    """
    rng = as_rng(params.seed)
    n = request.s_pre_trad.size
    total = request.fleet_total

    population = [_random_allocation(n, total, rng) for _ in range(params.population)]
    population[0] = request.s_pre_trad.copy()   # current layout always competes
    scores = np.array([fitness(ind) for ind in population])

    best_by_generation = []
    for _ in range(params.generations):
        order = np.lexsort((np.arange(len(population)), -scores))
        elite = [population[k].copy() for k in order[: params.elitism]]
        next_pop = elite
        while len(next_pop) < params.population:
            i, j = rng.integers(len(population), size=2)
            a = population[i] if scores[i] >= scores[j] else population[j]
            i, j = rng.integers(len(population), size=2)
            b = population[i] if scores[i] >= scores[j] else population[j]
            child = _crossover(a, b, total, rng)
            if rng.random() < params.mutation_rate:
                _mutate(child, rng)
            next_pop.append(child)
        population = next_pop
        scores = np.array([fitness(ind) for ind in population])
        best_by_generation.append(float(scores.max()))

    best = int(np.lexsort((np.arange(len(population)), -scores))[0])
    return GaResult(allocation=population[best].copy(), fitness=float(scores[best]),
                    best_by_generation=best_by_generation)


class SdsmScheduler:
    """Allocator bound to a fixed historical origin-demand profile."""

    def __init__(self, historical_origin_demand):
        self.historical = np.asarray(historical_origin_demand, dtype=float)

    def allocate(self, request: TradScheduleRequest) -> np.ndarray:
        return sdsm_allocate(request, self.historical)


class GaScheduler:
    """Allocator that evolves against a caller-supplied fitness factory.

    `fitness_factory(request)` must return a callable scoring an allocation;
    the factory runs once per allocate call so fitness can close over the
    request's forecast.
    """

    def __init__(self, fitness_factory, params: GaParams | None = None):
        self.fitness_factory = fitness_factory
        self.params = params or GaParams()
        self.last_result: GaResult | None = None

    def allocate(self, request: TradScheduleRequest) -> np.ndarray:
        fitness = self.fitness_factory(request)
        self.last_result = ga_allocate(request, fitness, self.params)
        return self.last_result.allocation


class FileTradScheduler:
    """Stub for externally computed allocations: one `region,count` line each.

    This is also the integration point for third-party schedulers that are
    not part of this package; they write the file, we consume it.
    """

    def __init__(self, path):
        self.path = path

    def allocate(self, request: TradScheduleRequest) -> np.ndarray:
        n = request.s_pre_trad.size
        alloc = np.zeros(n, dtype=np.int64)
        seen = set()
        with open(self.path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#") or line.lower() == "region,count":
                    continue
                region_s, count_s = (p.strip() for p in line.split(","))
                region, count = int(region_s), int(count_s)
                if not 0 <= region < n:
                    raise ValueError(f"{self.path}:{lineno}: region {region} out of range")
                if region in seen:
                    raise ValueError(f"{self.path}:{lineno}: duplicate region {region}")
                if count < 0:
                    raise ValueError(f"{self.path}:{lineno}: negative count")
                seen.add(region)
                alloc[region] = count
        if int(alloc.sum()) != request.fleet_total:
            raise ValueError(
                f"{self.path}: allocation sums to {int(alloc.sum())}, "
                f"fleet total is {request.fleet_total}")
        return alloc
