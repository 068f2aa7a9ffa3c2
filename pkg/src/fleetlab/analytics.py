"""Metrics, statistics, and economics over episode traces.

Money is handled in integer cents with per-trip half-up rounding so totals
are exactly reproducible across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .util import as_rng, round_half_up_cents

UNLOCK_FEE_DOLLARS = 1.00
PER_MINUTE_DOLLARS = 0.39
CHARGE_COST_DOLLARS = 4.00
DEPLOYMENT_COST_DOLLARS = 1000.00


def satisfaction_rate(trace, mode: str = "micro") -> float:
    """Demand satisfaction of one day.

    micro: total served / total requested (1.0 when nothing was requested).
    macro: mean over regions of served_i / requested_i, regions with zero
    requests excluded (1.0 when every region is empty).
    """
    demand = trace.origin_demand_by_interval().sum(axis=0)
    served = trace.satisfied_by_interval().sum(axis=0)
    if mode == "micro":
        total = int(demand.sum())
        return float(served.sum() / total) if total > 0 else 1.0
    if mode == "macro":
        active = demand > 0
        if not np.any(active):
            return 1.0
        return float((served[active] / demand[active]).mean())
    raise ValueError(f"unknown mode {mode!r}")


def trip_revenue_cents(trips_served) -> int:
    """Exact fare total in integer cents: unlock fee plus per-minute rate,
    each trip rounded half-up to a cent."""
    total = 0
    for trip in trips_served:
        dur_s = trip.duration_s if hasattr(trip, "duration_s") else float(trip)
        if dur_s < 0:
            raise ValueError("durations must be nonnegative")
        fare = UNLOCK_FEE_DOLLARS + PER_MINUTE_DOLLARS * (dur_s / 60.0)
        total += round_half_up_cents(fare)
    return total


def trip_revenue(trips_served) -> float:
    return trip_revenue_cents(trips_served) / 100.0


@dataclass
class EconLedger:
    trip_revenue: float
    charging_cost: float
    deployment_cost: float
    net: float
    cumulative: list          # [(day, cumulative net dollars), ...]

    def check_identity(self) -> None:
        if abs(self.net - (self.trip_revenue - self.charging_cost
                           - self.deployment_cost)) > 1e-9:
            raise AssertionError("ledger identity violated")


def charge_events_from_traces(traces) -> list:
    """Per-day count of self-driving vehicles that consumed any energy
    (each gets one recharge event for that day)."""
    return [sum(1 for used in tr.asmv_energy_used if used > 0.0)
            for tr in traces]


def net_revenue(day_traces, asmv_count: int, charge_events) -> EconLedger:
    """Cumulative economics over a run of days.

    Deployment is charged once at day 0 (per vehicle); charging is charged
    per recharge event; revenue counts every served trip regardless of which
    fleet served it.
    """
    day_traces = list(day_traces)
    events = list(charge_events)
    if len(events) != len(day_traces):
        raise ValueError("need one charge-event count per day")
    deploy_cents = round_half_up_cents(DEPLOYMENT_COST_DOLLARS) * asmv_count
    cum = -deploy_cents
    revenue_cents = 0
    charge_cents = 0
    series = []
    for day, (trace, n_events) in enumerate(zip(day_traces, events)):
        day_rev = sum(trip_revenue_cents(s.trips_served) for s in trace.steps)
        day_charge = round_half_up_cents(CHARGE_COST_DOLLARS) * int(n_events)
        revenue_cents += day_rev
        charge_cents += day_charge
        cum += day_rev - day_charge
        series.append((day, cum / 100.0))
    ledger = EconLedger(
        trip_revenue=revenue_cents / 100.0,
        charging_cost=charge_cents / 100.0,
        deployment_cost=deploy_cents / 100.0,
        net=(revenue_cents - charge_cents - deploy_cents) / 100.0,
        cumulative=series)
    ledger.check_identity()
    return ledger


def break_even_day(ledger: EconLedger):
    """First day with nonnegative cumulative net, or None."""
    for day, value in ledger.cumulative:
        if value >= 0.0:
            return day
    return None


# ---------------------------------------------------------------------------
# Two-sample Kolmogorov-Smirnov test

def _kolmogorov_sf(lam: float, terms: int = 100) -> float:
    """Survival function Q(lam) of the Kolmogorov distribution.

    Uses the alternating series for moderate arguments and the
    theta-transformed series for small ones, where the alternating series
    converges too slowly.
    """
    if lam <= 0.0:
        return 1.0
    if lam < 1.0:
        s = 0.0
        for k in range(1, terms + 1):
            odd = 2 * k - 1
            s += math.exp(-(odd * odd) * math.pi ** 2 / (8.0 * lam * lam))
        return max(0.0, min(1.0, 1.0 - math.sqrt(2.0 * math.pi) / lam * s))
    s = 0.0
    for k in range(1, terms + 1):
        s += (-1.0) ** (k - 1) * math.exp(-2.0 * k * k * lam * lam)
    return max(0.0, min(1.0, 2.0 * s))


def ks_two_sample(sample_a, sample_b):
    """Two-sample KS statistic and asymptotic p-value.

    The statistic is the sup-norm distance between the two empirical CDFs;
    the p-value evaluates the asymptotic Kolmogorov distribution at
    sqrt(n*m/(n+m)) * statistic.
    """
    a = np.sort(np.asarray(sample_a, dtype=float))
    b = np.sort(np.asarray(sample_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    stat = float(np.max(np.abs(cdf_a - cdf_b)))
    ne = a.size * b.size / (a.size + b.size)
    p = _kolmogorov_sf(math.sqrt(ne) * stat)
    return stat, p


# ---------------------------------------------------------------------------
# Spatial/temporal demand-shift report

@dataclass
class DiffReport:
    per_region: np.ndarray        # mean daily trips, low-performance minus other
    per_hour: np.ndarray
    total_increase_pct: float
    low_day_count: int
    other_day_count: int


def split_by_performance(traces, threshold: float = 0.85):
    """Partition traces into (low-performance, other) by micro satisfaction."""
    low = [t for t in traces if satisfaction_rate(t, "micro") < threshold]
    other = [t for t in traces if satisfaction_rate(t, "micro") >= threshold]
    return low, other


def diff_report(traces_low, traces_other) -> DiffReport:
    """Mean per-region and per-hour requested-trip differences between the
    low-performance days and the rest, plus the total percentage increase."""
    traces_low = list(traces_low)
    traces_other = list(traces_other)
    if not traces_low or not traces_other:
        raise ValueError("both trace sets must be nonempty")

    def mean_profiles(traces):
        per_region = np.mean([t.origin_demand_by_interval().sum(axis=0)
                              for t in traces], axis=0)
        per_hour = np.mean([t.origin_demand_by_interval().sum(axis=1)
                            for t in traces], axis=0)
        return per_region, per_hour

    low_r, low_h = mean_profiles(traces_low)
    oth_r, oth_h = mean_profiles(traces_other)
    other_total = float(oth_r.sum())
    pct = (float(low_r.sum()) - other_total) / other_total * 100.0 \
        if other_total > 0 else float("inf")
    return DiffReport(per_region=low_r - oth_r, per_hour=low_h - oth_h,
                      total_increase_pct=pct,
                      low_day_count=len(traces_low),
                      other_day_count=len(traces_other))


# ---------------------------------------------------------------------------
# Configuration sweeps

@dataclass
class SweepRow:
    label: str
    value: float
    mean: float
    std: float
    replications: int


def sweep(configs, run_fn, replications: int, seed=0) -> list:
    """Evaluate `run_fn(label, value, replication_seed) -> satisfaction` for
    each (label, value) configuration; rows come back sorted by (label,
    value) with the mean and standard deviation over replications."""
    if replications < 1:
        raise ValueError("replications must be >= 1")
    seeds = np.random.SeedSequence(seed).spawn(len(configs) * replications)
    rows = []
    for c_idx, (label, value) in enumerate(configs):
        scores = []
        for r in range(replications):
            child = seeds[c_idx * replications + r]
            scores.append(float(run_fn(label, value, child)))
        scores = np.asarray(scores)
        rows.append(SweepRow(label=str(label), value=float(value),
                             mean=float(scores.mean()),
                             std=float(scores.std(ddof=0)),
                             replications=replications))
    rows.sort(key=lambda r: (r.label, r.value))
    return rows


def sweep_csv(rows) -> str:
    lines = ["label,value,mean,std,replications"]
    for r in rows:
        lines.append(f"{r.label},{r.value:g},{r.mean:.6f},{r.std:.6f},{r.replications}")
    return "\n".join(lines) + "\n"
