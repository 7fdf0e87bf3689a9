"""Rank primitives: stable ordering, tied ranks and Kendall rank correlation.

Every function here is pure.  Ranks are 1-based and stored as float64, so
tied (half-integer) ranks are exact for any realistic vector length.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .errors import DegenerateInput, InvalidValue, ShapeMismatch

__all__ = [
    "make_rng",
    "argsort",
    "tied_ranks",
    "kendall_tau",
    "kendall_tau_sampled",
    "count_inversions",
]

_SEED_MASK = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator; any 64-bit integer (signed or not) is accepted."""
    return np.random.default_rng(int(seed) & _SEED_MASK)


def _as_values(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64).ravel()
    if arr.size and not np.isfinite(arr).all():
        raise InvalidValue("vector contains NaN or infinite entries")
    return arr


def argsort(v) -> np.ndarray:
    """Stable ascending argsort; ties keep ascending original index."""
    return np.argsort(_as_values(v), kind="stable")


def _run_starts(sorted_values: np.ndarray) -> np.ndarray:
    """Start offsets of each run of equal values, plus a trailing ``n``."""
    n = sorted_values.size
    change = np.flatnonzero(sorted_values[1:] != sorted_values[:-1]) + 1
    return np.concatenate(([0], change, [n]))


def tied_ranks(v) -> np.ndarray:
    """1-based ranks where each run of equal values gets its mean rank.

    >>> tied_ranks([3, 1, 1, 2]).tolist()
    [4.0, 1.5, 1.5, 3.0]
    """
    arr = _as_values(v)
    n = arr.size
    out = np.empty(n, dtype=np.float64)
    if n == 0:
        return out
    order = np.argsort(arr, kind="stable")
    bounds = _run_starts(arr[order])
    lengths = np.diff(bounds)
    # run [s, e) occupies ranks s+1..e, whose mean is (s + 1 + e) / 2
    run_rank = (bounds[:-1] + 1 + bounds[1:]) / 2.0
    out[order] = np.repeat(run_rank, lengths)
    return out


@numba.njit(cache=True)
def _inversions(x):
    """Count pairs i < j with x[i] > x[j] by bottom-up merge sort."""
    n = x.size
    src = x.copy()
    dst = np.empty_like(src)
    count = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i = lo
            j = mid
            k = lo
            while i < mid and j < hi:
                if src[j] < src[i]:
                    dst[k] = src[j]
                    count += mid - i
                    j += 1
                else:
                    dst[k] = src[i]
                    i += 1
                k += 1
            while i < mid:
                dst[k] = src[i]
                i += 1
                k += 1
            while j < hi:
                dst[k] = src[j]
                j += 1
                k += 1
        src, dst = dst, src
        width *= 2
    return count


def count_inversions(x) -> int:
    """Number of strictly inverted pairs in ``x``; O(n log n)."""
    arr = np.ascontiguousarray(x)
    if arr.size < 2:
        return 0
    if arr.dtype.kind == "f":
        arr = np.ascontiguousarray(arr, dtype=np.float64)
    else:
        arr = np.ascontiguousarray(arr, dtype=np.int64)
    return int(_inversions(arr))


def _tied_pairs(sorted_values: np.ndarray) -> int:
    lengths = np.diff(_run_starts(sorted_values)).astype(np.int64)
    return int((lengths * (lengths - 1) // 2).sum())


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = _as_values(a)
    b = _as_values(b)
    if a.size != b.size:
        raise ShapeMismatch(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise DegenerateInput("need at least two entries")
    if a.min() == a.max() or b.min() == b.max():
        raise DegenerateInput("all entries tied in one input")
    return a, b


def kendall_tau(a, b) -> float:
    """Tie-corrected Kendall tau-b in O(n log n).

    Pairs are sorted by ``a`` then ``b``; discordant pairs are then exactly
    the strict inversions of the reordered ``b`` (Knight's method).  All
    pair counts are exact integers.
    """
    a, b = _check_pair(a, b)
    n = a.size
    order = np.lexsort((b, a))
    a_s = a[order]
    b_s = b[order]

    n0 = n * (n - 1) // 2
    n1 = _tied_pairs(a_s)
    # joint ties: runs equal in both a and b are contiguous after lexsort
    joint_change = (a_s[1:] != a_s[:-1]) | (b_s[1:] != b_s[:-1])
    bounds = np.concatenate(([0], np.flatnonzero(joint_change) + 1, [n]))
    joint = np.diff(bounds).astype(np.int64)
    n3 = int((joint * (joint - 1) // 2).sum())
    n2 = _tied_pairs(np.sort(b))

    discordant = count_inversions(b_s)
    untied = n0 - n1 - n2 + n3
    numerator = untied - 2 * discordant
    return numerator / math.sqrt((n0 - n1) * (n0 - n2))


def kendall_tau_sampled(a, b, num_pairs: int, seed: int) -> tuple[float, float]:
    """Monte Carlo tau-a from ``num_pairs`` random index pairs.

    Pairs are drawn with replacement, each pair made of two distinct indices,
    so the estimate is unbiased for tau-a (tied pairs score 0).  Returns
    ``(estimate, standard_error)``.
    """
    a, b = _check_pair(a, b)
    if num_pairs < 1:
        raise ValueError("num_pairs must be >= 1")
    n = a.size
    rng = make_rng(seed)
    i = rng.integers(0, n, size=num_pairs)
    j = (i + rng.integers(1, n, size=num_pairs)) % n
    prod = np.sign(a[i] - a[j]) * np.sign(b[i] - b[j])
    estimate = float(prod.mean())
    if num_pairs == 1:
        return estimate, 0.0
    return estimate, float(prod.std(ddof=1) / math.sqrt(num_pairs))
