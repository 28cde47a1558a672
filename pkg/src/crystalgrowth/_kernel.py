"""Compiled inner loop of the Poisson construction."""
import numba
import numpy as np


@numba.njit(cache=True, inline="always")
def _higher(heights, i, boundary):
    n = heights.shape[0]
    x = heights[i]
    v = 0
    if i > 0:
        if heights[i - 1] > x:
            v += 1
    elif boundary == 1:
        if heights[n - 1] > x:
            v += 1
    elif boundary == 2:
        v += 1
    if i < n - 1:
        if heights[i + 1] > x:
            v += 1
    elif boundary == 1:
        if heights[0] > x:
            v += 1
    elif boundary == 2 or boundary == 3:
        v += 1
    return v


@numba.njit(cache=True)
def process_chunk(times, sites, levels, heights, boundary, rates, thresholds,
                  schedule, sched_pos, snapshots, path_t, path_s, path_pos, deposits):
    """Apply one time-ordered chunk of stream events in place.

    An event ``(t, j, k)`` deposits at ``j`` iff ``rates[V_j] >= thresholds[k]``.
    Snapshots scheduled strictly before an event are taken before it is applied.
    Returns the updated ``(sched_pos, path_pos)``; ``path_pos < 0`` disables
    path recording.
    """
    n_sched = schedule.shape[0]
    for e in range(times.shape[0]):
        t = times[e]
        while sched_pos < n_sched and schedule[sched_pos] < t:
            snapshots[sched_pos, :] = heights
            sched_pos += 1
        j = sites[e]
        if rates[_higher(heights, j, boundary)] >= thresholds[levels[e]]:
            heights[j] += 1
            deposits[j] += 1
            if path_pos >= 0:
                path_t[path_pos] = t
                path_s[path_pos] = j
                path_pos += 1
    return sched_pos, path_pos


@numba.njit(cache=True)
def neighbor_counts(heights, boundary):
    n = heights.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        out[i] = _higher(heights, i, boundary)
    return out
