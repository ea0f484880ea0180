"""Half-open tick interval arithmetic.

Interval sets are tuples of ``(start, end)`` pairs kept normalized: sorted,
pairwise disjoint and non-adjacent. Masks are boolean numpy arrays indexed
relative to an ``offset`` tick.
"""

from typing import Iterable, Sequence, Tuple

import numpy as np

IntervalTuple = Tuple[int, int]


def normalize(intervals: Iterable[IntervalTuple]) -> Tuple[IntervalTuple, ...]:
    """Sort, merge overlapping and adjacent intervals, drop empty ones.

    Parameters
    ----------
    intervals : iterable of (int, int)
        Half-open ``[start, end)`` pairs.

    Returns
    -------
    tuple of (int, int)
        Normalized interval set.
    """
    items = sorted((int(s), int(e)) for s, e in intervals if e > s)
    merged = []
    for s, e in items:
        if merged and s <= merged[-1][1]:
            if e > merged[-1][1]:
                merged[-1] = (merged[-1][0], e)
        else:
            merged.append((s, e))
    return tuple(merged)


def intersect(
    a: Sequence[IntervalTuple], b: Sequence[IntervalTuple]
) -> Tuple[IntervalTuple, ...]:
    """Intersect two normalized interval sets."""
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        s = max(a[i][0], b[j][0])
        e = min(a[i][1], b[j][1])
        if s < e:
            out.append((s, e))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return normalize(out)


def clip(intervals: Sequence[IntervalTuple], start: int, end: int):
    """Restrict an interval set to ``[start, end)``."""
    return intersect(normalize(intervals), ((start, end),))


def covers(intervals: Sequence[IntervalTuple], start: int, end: int) -> bool:
    """Return True if ``[start, end)`` is a subset of the interval set."""
    if end <= start:
        return True
    return any(s <= start and end <= e for s, e in normalize(intervals))


def total_length(intervals: Sequence[IntervalTuple]) -> int:
    """Return the number of ticks covered by a normalized interval set."""
    return sum(e - s for s, e in intervals)


def mask_to_intervals(mask: np.ndarray, offset: int = 0):
    """Convert a boolean mask into the normalized set of its True runs.

    Parameters
    ----------
    mask : array of bool
        Per-tick flags.
    offset : int, default=0
        Tick of ``mask[0]``.

    Returns
    -------
    tuple of (int, int)
        Maximal runs of True as half-open intervals.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return ()
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    starts = edges[0::2] + offset
    ends = edges[1::2] + offset
    return tuple((int(s), int(e)) for s, e in zip(starts, ends))


def intervals_to_mask(intervals: Sequence[IntervalTuple], start: int, end: int):
    """Rasterize an interval set over ``[start, end)``.

    Returns
    -------
    array of bool
        ``mask[k]`` is True iff tick ``start + k`` lies in the set.
    """
    mask = np.zeros(max(end - start, 0), dtype=bool)
    for s, e in intervals:
        lo = max(s, start)
        hi = min(e, end)
        if lo < hi:
            mask[lo - start : hi - start] = True
    return mask
