"""Demand forecasting.

The scheduler contract only needs a deterministic forecast source, so the
predictor is a per-interval historical mean over training days. It sits
behind a tiny interface (fit + predict) so a learned model can be swapped in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import DemandTensor
from .util import read_tijc, write_tijc


@dataclass(frozen=True)
class DemandPredictor:
    mean_table: np.ndarray       # (T, N, N) real-valued mean demand
    training_day_count: int

    @property
    def intervals(self) -> int:
        return self.mean_table.shape[0]

    @property
    def regions(self) -> int:
        return self.mean_table.shape[1]

    def save(self, path) -> None:
        write_tijc(path, self.mean_table)

    @classmethod
    def load(cls, path, intervals=None, regions=None,
             training_day_count: int = 0) -> "DemandPredictor":
        table = read_tijc(path, intervals=intervals, regions=regions, dtype=float)
        return cls(mean_table=table, training_day_count=training_day_count)


def fit_predictor(history) -> DemandPredictor:
    """Average a list of demand tensors cell by cell, in index order."""
    history = list(history)
    if not history:
        raise ValueError("history must hold at least one training day")
    shape = history[0].counts.shape
    acc = np.zeros(shape, dtype=float)
    for tensor in history:
        if tensor.counts.shape != shape:
            raise ValueError("training tensors must share one shape")
        acc += tensor.counts
    table = acc / float(len(history))
    table.flags.writeable = False
    return DemandPredictor(mean_table=table, training_day_count=len(history))


def predict(predictor: DemandPredictor, t_start: int, horizon: int) -> np.ndarray:
    """Forecast slice for intervals [t_start, t_start + horizon).

    Horizon T - t_start yields the whole remaining day; horizon 1 yields the
    next-interval forecast. No wrapping across days.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if t_start < 0 or t_start + horizon > predictor.intervals:
        raise ValueError("prediction window out of range")
    return predictor.mean_table[t_start:t_start + horizon].copy()
