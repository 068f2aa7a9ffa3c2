"""Episodic fleet simulation.

One episode is one operating day: traditional vehicles are redistributed
once before interval 0, self-driving vehicles are deployed once, and then T
intervals run. Each interval has three phases:

1. rebalance - every available self-driving vehicle moves to its target,
   paying battery for the inter-centroid distance;
2. serve - requested trips are matched against vehicles in the origin
   region (traditional fleet first, then self-driving), each vehicle serving
   at most one trip per interval and relocating to the trip destination;
3. account - satisfied/unsatisfied tallies are recorded, and the terminal
   interval emits the day's demand-satisfaction rate as the reward.

All randomness (fault selection, per-region trip ordering) flows from the
seed given to `reset`, so identical inputs replay bit-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .forecast import DemandPredictor, predict
from .ingest import DemandTensor
from .sched_asmv import HighLevelObservation, LowLevelObservation
from .sched_trad import TradScheduleRequest
from .util import as_rng
from .world import RegionMap, WorldConfig, feasible_targets


@dataclass
class AsmVehicle:
    vid: int
    location: int | None        # region index; None until deployed
    battery: float              # miles remaining
    faulted: bool = False

    def is_available(self, threshold_miles: float) -> bool:
        return (not self.faulted and self.location is not None
                and self.battery >= threshold_miles)


@dataclass
class FleetState:
    config: WorldConfig
    region_map: RegionMap
    trad_counts: np.ndarray             # (N,) int
    trad_batteries: list                # per-region list of battery miles
    asmvs: list
    interval: int = 0
    served_total: int = 0
    demand_total: int = 0
    rng: np.random.Generator = None

    @property
    def trad_total(self) -> int:
        return int(self.trad_counts.sum())

    def available_asmvs(self) -> list:
        thr = self.config.battery_threshold_miles
        return [v for v in self.asmvs if v.is_available(thr)]

    def copy(self) -> "FleetState":
        clone = FleetState(
            config=self.config, region_map=self.region_map,
            trad_counts=self.trad_counts.copy(),
            trad_batteries=[list(b) for b in self.trad_batteries],
            asmvs=[AsmVehicle(v.vid, v.location, v.battery, v.faulted)
                   for v in self.asmvs],
            interval=self.interval, served_total=self.served_total,
            demand_total=self.demand_total)
        clone.rng = np.random.default_rng()
        clone.rng.bit_generator.state = self.rng.bit_generator.state
        return clone


@dataclass
class ServedTrip:
    origin: int
    dest: int
    distance_m: float
    duration_s: float
    served_by: str               # "trad" | "asmv"


@dataclass
class StepOutcome:
    satisfied: np.ndarray        # (N,) served trips by origin
    unsatisfied: np.ndarray      # (N,) unmet trips by origin
    trips_served: list
    reward: float


def reset(config: WorldConfig, region_map: RegionMap, s_pre_trad,
          demand: DemandTensor, asmv_count: int, fault_rate: float = 0.0,
          seed=None) -> FleetState:
    """Fresh day state: full batteries, seeded fault set, vehicles unplaced."""
    n = region_map.region_count
    counts = np.asarray(s_pre_trad, dtype=np.int64)
    if counts.shape != (n,) or np.any(counts < 0):
        raise ValueError("s_pre_trad must be nonnegative with one entry per region")
    if demand.regions != n or demand.intervals != config.intervals_per_day:
        raise ValueError("demand tensor shape does not match the world")
    if asmv_count < 0:
        raise ValueError("asmv_count must be nonnegative")
    if not 0.0 <= fault_rate <= 0.5:
        raise ValueError("fault_rate must be in [0, 0.5]")
    rng = as_rng(config.seed if seed is None else seed)
    n_fault = int(np.floor(fault_rate * asmv_count))
    faulted = set(int(i) for i in rng.permutation(asmv_count)[:n_fault])
    cap = config.battery_capacity_miles
    state = FleetState(
        config=config, region_map=region_map,
        trad_counts=counts.copy(),
        trad_batteries=[[cap] * int(c) for c in counts],
        asmvs=[AsmVehicle(vid=i, location=None, battery=cap, faulted=i in faulted)
               for i in range(asmv_count)],
        rng=rng)
    return state


def deploy_traditional(state: FleetState, s0_trad) -> FleetState:
    """Truck redistribution: replace the traditional layout, recharge all."""
    n = state.region_map.region_count
    target = np.asarray(s0_trad, dtype=np.int64)
    if target.shape != (n,) or np.any(target < 0):
        raise ValueError("s0_trad must be nonnegative with one entry per region")
    if int(target.sum()) != state.trad_total:
        raise ValueError(
            f"fleet size mismatch: have {state.trad_total}, got {int(target.sum())}")
    cap = state.config.battery_capacity_miles
    state.trad_counts = target.copy()
    state.trad_batteries = [[cap] * int(c) for c in target]
    return state


def deploy_asmv(state: FleetState, allocation) -> FleetState:
    """Place non-faulted self-driving vehicles: id order fills region order."""
    n = state.region_map.region_count
    alloc = np.asarray(allocation, dtype=np.int64)
    if alloc.shape != (n,) or np.any(alloc < 0):
        raise ValueError("allocation must be nonnegative with one entry per region")
    active = [v for v in state.asmvs if not v.faulted]
    if int(alloc.sum()) != len(active):
        raise ValueError(
            f"allocation sums to {int(alloc.sum())} but {len(active)} vehicles are active")
    it = iter(sorted(active, key=lambda v: v.vid))
    for region in range(n):
        for _ in range(int(alloc[region])):
            next(it).location = region
    return state


def aggregate(state: FleetState) -> np.ndarray:
    """Per-region census of non-faulted self-driving vehicles."""
    counts = np.zeros(state.region_map.region_count, dtype=np.int64)
    for v in state.asmvs:
        if not v.faulted and v.location is not None:
            counts[v.location] += 1
    return counts


def _serve_one(pool_batteries: list, cost: float):
    """Index of the highest-battery entry covering `cost`, else None."""
    best, best_b = None, -1.0
    for k, b in enumerate(pool_batteries):
        if b >= cost and b > best_b:
            best, best_b = k, b
    return best


def step(state: FleetState, demand_t, low_actions) -> StepOutcome:
    """Advance one interval. `demand_t` is an IntervalDemand slice;
    `low_actions` maps every available vehicle id to a target region."""
    cfg = state.config
    rmap = state.region_map
    n = rmap.region_count
    t_total = cfg.intervals_per_day
    if state.interval >= t_total:
        raise ValueError("day already complete")

    # --- Phase 1: self-rebalancing moves -------------------------------
    thr = cfg.battery_threshold_miles
    available = {v.vid for v in state.asmvs if v.is_available(thr)}
    given = {int(k) for k in low_actions}
    if given != available:
        extra = sorted(given - available)
        missing = sorted(available - given)
        raise ValueError(
            f"actions must cover exactly the available vehicles "
            f"(unexpected {extra}, missing {missing})")
    for vid in sorted(given):
        v = state.asmvs[vid]
        target = int(low_actions[vid])
        if not 0 <= target < n:
            raise ValueError(f"vehicle {vid}: target region {target} out of range")
        if target != v.location:
            d = float(rmap.distance[v.location, target])
            if not (d <= cfg.move_range_miles and d <= v.battery):
                raise ValueError(
                    f"vehicle {vid}: target {target} outside feasible range")
            v.battery -= d
            v.location = target

    # --- Phase 2: trip fulfillment -------------------------------------
    by_origin: list[list] = [[] for _ in range(n)]
    for trip in demand_t.trips:
        by_origin[trip[0]].append(trip)
    for i in range(n):
        if len(by_origin[i]) > 1:
            perm = state.rng.permutation(len(by_origin[i]))
            by_origin[i] = [by_origin[i][k] for k in perm]

    asmv_pool: list[list] = [[] for _ in range(n)]
    for v in state.asmvs:
        if v.is_available(thr):
            asmv_pool[v.location].append(v)

    trad_arrivals: list[tuple[int, float]] = []
    satisfied = np.zeros(n, dtype=np.int64)
    unsatisfied = np.zeros(n, dtype=np.int64)
    trips_served: list[ServedTrip] = []

    for i in range(n):
        if cfg.service_neighbor_k > 0:
            search = [i] + [int(r) for r in rmap.neighbors(i, cfg.service_neighbor_k)]
        else:
            search = [i]
        for (_, j, dist_m, dur_s) in by_origin[i]:
            trip_miles = dist_m / cfg.meters_per_mile
            served = None
            for r in search:
                cost = float(rmap.distance[r, i]) + trip_miles
                k = _serve_one(state.trad_batteries[r], cost)
                if k is not None:
                    b = state.trad_batteries[r].pop(k)
                    state.trad_counts[r] -= 1
                    trad_arrivals.append((j, b - cost))
                    served = "trad"
                    break
            if served is None:
                for r in search:
                    cost = float(rmap.distance[r, i]) + trip_miles
                    best = None
                    for v in asmv_pool[r]:
                        if v.battery >= cost and (
                                best is None or v.battery > best.battery
                                or (v.battery == best.battery and v.vid < best.vid)):
                            best = v
                    if best is not None:
                        asmv_pool[r].remove(best)
                        best.battery -= cost
                        best.location = j
                        served = "asmv"
                        break
            if served is None:
                unsatisfied[i] += 1
            else:
                satisfied[i] += 1
                trips_served.append(ServedTrip(i, j, dist_m, dur_s, served))

    for j, b in trad_arrivals:
        state.trad_counts[j] += 1
        state.trad_batteries[j].append(b)

    # --- Phase 3: accounting -------------------------------------------
    d_t = int(satisfied.sum())
    u_t = d_t + int(unsatisfied.sum())
    state.served_total += d_t
    state.demand_total += u_t
    state.interval += 1
    if state.interval == t_total:
        reward = (state.served_total / state.demand_total
                  if state.demand_total > 0 else 1.0)
    else:
        reward = 0.0
    return StepOutcome(satisfied=satisfied, unsatisfied=unsatisfied,
                       trips_served=trips_served, reward=reward)


class TradScheduler(Protocol):
    def allocate(self, request: TradScheduleRequest) -> np.ndarray: ...


class AsmvScheduler(Protocol):
    def deploy(self, obs: HighLevelObservation, count: int) -> np.ndarray: ...
    def rebalance(self, observations: list) -> dict: ...


@dataclass
class StepRecord:
    interval: int
    origin_demand: np.ndarray
    satisfied: np.ndarray
    unsatisfied: np.ndarray
    trad_counts: np.ndarray
    auto_counts: np.ndarray
    actions: dict
    trips_served: list
    reward: float


@dataclass
class EpisodeTrace:
    seed: object
    s_pre_trad: np.ndarray
    s0_trad: np.ndarray
    deployment: np.ndarray
    asmv_count: int
    fault_count: int
    trad_moves: int
    steps: list
    served_total: int
    demand_total: int
    d_rate: float
    asmv_energy_used: list

    def origin_demand_by_interval(self) -> np.ndarray:
        return np.stack([s.origin_demand for s in self.steps])

    def satisfied_by_interval(self) -> np.ndarray:
        return np.stack([s.satisfied for s in self.steps])

    def to_jsonl(self) -> str:
        lines = [json.dumps({
            "kind": "meta", "seed": self.seed,
            "s_pre_trad": self.s_pre_trad.tolist(),
            "s0_trad": self.s0_trad.tolist(),
            "deployment": self.deployment.tolist(),
            "asmv_count": self.asmv_count, "fault_count": self.fault_count,
            "trad_moves": self.trad_moves,
            "served_total": self.served_total, "demand_total": self.demand_total,
            "d_rate": self.d_rate,
            "asmv_energy_used": self.asmv_energy_used,
        })]
        for s in self.steps:
            lines.append(json.dumps({
                "kind": "step", "t": s.interval,
                "origin_demand": s.origin_demand.tolist(),
                "satisfied": s.satisfied.tolist(),
                "unsatisfied": s.unsatisfied.tolist(),
                "trad_counts": s.trad_counts.tolist(),
                "auto_counts": s.auto_counts.tolist(),
                "actions": {str(k): int(v) for k, v in s.actions.items()},
                "trips_served": [[tr.origin, tr.dest, tr.distance_m,
                                  tr.duration_s, tr.served_by]
                                 for tr in s.trips_served],
                "reward": s.reward,
            }))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "EpisodeTrace":
        meta = None
        steps = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec["kind"] == "meta":
                meta = rec
            elif rec["kind"] == "step":
                steps.append(StepRecord(
                    interval=rec["t"],
                    origin_demand=np.asarray(rec["origin_demand"], dtype=np.int64),
                    satisfied=np.asarray(rec["satisfied"], dtype=np.int64),
                    unsatisfied=np.asarray(rec["unsatisfied"], dtype=np.int64),
                    trad_counts=np.asarray(rec["trad_counts"], dtype=np.int64),
                    auto_counts=np.asarray(rec["auto_counts"], dtype=np.int64),
                    actions={int(k): int(v) for k, v in rec["actions"].items()},
                    trips_served=[ServedTrip(*tr) for tr in rec["trips_served"]],
                    reward=rec["reward"],
                ))
        if meta is None:
            raise ValueError("trace text has no meta record")
        return cls(
            seed=meta["seed"],
            s_pre_trad=np.asarray(meta["s_pre_trad"], dtype=np.int64),
            s0_trad=np.asarray(meta["s0_trad"], dtype=np.int64),
            deployment=np.asarray(meta["deployment"], dtype=np.int64),
            asmv_count=meta["asmv_count"], fault_count=meta["fault_count"],
            trad_moves=meta["trad_moves"], steps=steps,
            served_total=meta["served_total"], demand_total=meta["demand_total"],
            d_rate=meta["d_rate"], asmv_energy_used=meta["asmv_energy_used"])


def run_episode(state: FleetState, demand: DemandTensor,
                trad_sched: TradScheduler, asmv_sched: AsmvScheduler,
                predictor: DemandPredictor, horizon: int | None = None,
                seed_label=None):
    """Run one full day and return (EpisodeTrace, demand-satisfaction rate)."""
    cfg = state.config
    rmap = state.region_map
    t_total = cfg.intervals_per_day
    if predictor.intervals < t_total or predictor.regions != rmap.region_count:
        raise ValueError("predictor shape does not match the world")
    h = t_total if horizon is None else int(horizon)
    if not 1 <= h <= t_total:
        raise ValueError("horizon must be in [1, T]")

    s_pre = state.trad_counts.copy()
    request = TradScheduleRequest(
        s_pre_trad=s_pre, predicted_demand=predict(predictor, 0, t_total),
        fleet_total=state.trad_total)
    s0_trad = np.asarray(trad_sched.allocate(request), dtype=np.int64)
    trad_moves = int(np.abs(s0_trad - s_pre).sum()) // 2
    deploy_traditional(state, s0_trad)

    active = sum(1 for v in state.asmvs if not v.faulted)
    high_obs = HighLevelObservation(
        trad_deployment=s0_trad.copy(),
        predicted_horizon=predict(predictor, 0, h))
    deployment = np.asarray(asmv_sched.deploy(high_obs, active), dtype=np.int64)
    deploy_asmv(state, deployment)

    thr = cfg.battery_threshold_miles
    steps: list[StepRecord] = []
    for t in range(t_total):
        predicted_next = predict(predictor, t, 1)[0]
        trad_snapshot = state.trad_counts.copy()
        auto_snapshot = aggregate(state)
        observations = [
            LowLevelObservation(
                vehicle_id=v.vid, own_location=v.location,
                trad_counts=trad_snapshot, auto_counts=auto_snapshot,
                predicted_next=predicted_next, own_battery=v.battery,
                interval=t)
            for v in state.asmvs if v.is_available(thr)]
        actions = asmv_sched.rebalance(observations)
        demand_t = demand.interval(t)
        outcome = step(state, demand_t, actions)
        steps.append(StepRecord(
            interval=t,
            origin_demand=demand_t.counts.sum(axis=1),
            satisfied=outcome.satisfied, unsatisfied=outcome.unsatisfied,
            trad_counts=state.trad_counts.copy(), auto_counts=aggregate(state),
            actions=dict(actions), trips_served=outcome.trips_served,
            reward=outcome.reward))

    d_rate = (state.served_total / state.demand_total
              if state.demand_total > 0 else 1.0)
    cap = cfg.battery_capacity_miles
    trace = EpisodeTrace(
        seed=seed_label,
        s_pre_trad=s_pre, s0_trad=s0_trad, deployment=deployment,
        asmv_count=len(state.asmvs),
        fault_count=sum(1 for v in state.asmvs if v.faulted),
        trad_moves=trad_moves, steps=steps,
        served_total=state.served_total, demand_total=state.demand_total,
        d_rate=d_rate,
        asmv_energy_used=[float(cap - v.battery) for v in state.asmvs])
    return trace, d_rate
