"""Small shared helpers: integer apportionment, seeding, columnar tensor IO."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def largest_remainder(weights, total: int) -> np.ndarray:
    """Split `total` units into nonnegative integer counts proportional to `weights`.

    Exact shares are floored and the leftover units go to the largest
    fractional remainders; remainder ties break toward the lower index.
    All-zero weights fall back to a uniform split with the leftover units
    going to the lowest indices.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty 1-D sequence")
    if total < 0:
        raise ValueError("total must be nonnegative")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    n = w.size
    counts = np.zeros(n, dtype=np.int64)
    wsum = w.sum()
    if wsum <= 0.0:
        counts[:] = total // n
        counts[: total % n] += 1
        return counts
    shares = w * (total / wsum)
    counts = np.floor(shares).astype(np.int64)
    leftover = total - int(counts.sum())
    if leftover > 0:
        # quantize so float noise cannot break genuine remainder ties,
        # which must resolve toward the lower index
        frac = np.round(shares - counts, 9)
        order = np.lexsort((np.arange(n), -frac))
        counts[order[:leftover]] += 1
    return counts


def as_rng(seed) -> np.random.Generator:
    """Accept an int seed, a SeedSequence, a Generator, or None."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_seeds(master_seed: int, n: int) -> list[np.random.SeedSequence]:
    """Derive `n` independent child seed sequences from one master seed."""
    return np.random.SeedSequence(master_seed).spawn(n)


def write_tijc(path, values: np.ndarray) -> None:
    """Write a (T, N, N) tensor as `t,i,j,count` text, one row per nonzero cell."""
    arr = np.asarray(values)
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValueError("expected a (T, N, N) tensor")
    t_idx, i_idx, j_idx = np.nonzero(arr)
    with open(path, "w") as fh:
        fh.write("t,i,j,count\n")
        for t, i, j in zip(t_idx, i_idx, j_idx):
            v = arr[t, i, j]
            if arr.dtype.kind in "iu":
                fh.write(f"{t},{i},{j},{int(v)}\n")
            else:
                fh.write(f"{t},{i},{j},{float(v)!r}\n")


def read_tijc(path, intervals: int | None = None, regions: int | None = None,
              dtype=np.int64) -> np.ndarray:
    """Read a `t,i,j,count` text file back into a dense (T, N, N) array.

    Dimensions are taken from `intervals`/`regions` when given, otherwise
    inferred as max index + 1.
    """
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().lower().replace(" ", "")
        if header != "t,i,j,count":
            raise ValueError(f"unexpected header {header!r} in {path}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            t_s, i_s, j_s, c_s = line.split(",")
            rows.append((int(t_s), int(i_s), int(j_s), float(c_s)))
    t_max = max((r[0] for r in rows), default=-1)
    ij_max = max((max(r[1], r[2]) for r in rows), default=-1)
    t_count = intervals if intervals is not None else t_max + 1
    n = regions if regions is not None else ij_max + 1
    if t_max >= t_count or ij_max >= n:
        raise ValueError("indices exceed the declared tensor shape")
    out = np.zeros((t_count, n, n), dtype=dtype)
    for t, i, j, c in rows:
        out[t, i, j] = c
    return out


def round_half_up_cents(dollars: float) -> int:
    """Round a dollar amount to integer cents, halves away from zero upward."""
    import math

    return int(math.floor(dollars * 100.0 + 0.5))
