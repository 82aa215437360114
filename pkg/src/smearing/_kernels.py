"""Compiled inner loops for the peeling decoder."""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def peel_rounds(adjacency, n_bins):
    """Synchronous-sweep peeling on a (K, d) adjacency of global bin ids.

    Each round removes every ball found alone in some bin at the start of the
    round, then updates bin loads. Repeated bins within one ball count once.

    Returns ``(active, trajectory)`` where ``trajectory[t]`` is the fraction of
    balls still active after round ``t + 1``.
    """
    K, d = adjacency.shape
    # distinct bins per ball; duplicates become -1
    adj = adjacency.copy()
    for k in range(K):
        for e in range(1, d):
            b = adj[k, e]
            for e2 in range(e):
                if adj[k, e2] == b:
                    adj[k, e] = -1
                    break

    load = np.zeros(n_bins, np.int64)
    ptr = np.zeros(n_bins + 1, np.int64)
    for k in range(K):
        for e in range(d):
            b = adj[k, e]
            if b >= 0:
                load[b] += 1
                ptr[b + 1] += 1
    for b in range(n_bins):
        ptr[b + 1] += ptr[b]
    fill = ptr[:-1].copy()
    members = np.empty(ptr[n_bins], np.int64)
    for k in range(K):
        for e in range(d):
            b = adj[k, e]
            if b >= 0:
                members[fill[b]] = k
                fill[b] += 1

    active = np.ones(K, np.bool_)
    frontier = np.empty(n_bins, np.int64)
    n_front = 0
    for b in range(n_bins):
        if load[b] == 1:
            frontier[n_front] = b
            n_front += 1

    removed = np.empty(K, np.int64)
    trajectory = np.empty(K + 1, np.float64)
    remaining = K
    rounds = 0
    while n_front > 0 and remaining > 0:
        n_removed = 0
        for i in range(n_front):
            b = frontier[i]
            if load[b] != 1:
                continue
            for j in range(ptr[b], ptr[b + 1]):
                k = members[j]
                if active[k]:
                    active[k] = False
                    removed[n_removed] = k
                    n_removed += 1
                    break
        n_front = 0
        for i in range(n_removed):
            k = removed[i]
            for e in range(d):
                b = adj[k, e]
                if b >= 0:
                    load[b] -= 1
                    if load[b] == 1:
                        frontier[n_front] = b
                        n_front += 1
        remaining -= n_removed
        trajectory[rounds] = remaining / K
        rounds += 1
    return active, trajectory[:rounds]


@numba.njit(cache=True, nogil=True)
def staged_starts_to_adjacency(starts, pattern, sizes, offsets):
    K, g = starts.shape
    d = 0
    for i in range(g):
        d += pattern[i]
    adj = np.empty((K, d), np.int64)
    for k in range(K):
        e = 0
        for i in range(g):
            for o in range(pattern[i]):
                adj[k, e] = offsets[i] + (starts[k, i] + o) % sizes[i]
                e += 1
    return adj
