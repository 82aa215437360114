"""Peeling decoder and Monte Carlo estimates of recovery.

A bin holding exactly one active ball reveals it; the ball is removed from
every bin it touches, which may expose new singleton bins. Decoding stops when
all balls are gone or no singleton bin is left.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .ensemble import BinLayout, Shared, SmearGraph, SmearPattern, Staged, draw_starts
from .thresholds import MONTE_CARLO, ThresholdEstimate, bisect_ratio

__all__ = [
    "DecoderState",
    "PeelResult",
    "McResult",
    "peel",
    "peel_reference",
    "layout_for_ratio",
    "trial_seed",
    "mc_recovery",
    "mc_trajectory",
    "empirical_threshold",
    "recovery_curve",
    "CSV_HEADER",
    "rows_to_csv",
]

CSV_HEADER = ("pattern", "ratio", "K", "trials", "p_full", "mean_residual", "std_err", "seed")


@dataclass(frozen=True)
class PeelResult:
    recovered_count: int
    residual_fraction: float
    rounds: int
    success: bool
    trajectory: tuple[float, ...] = ()


class DecoderState:
    """Mutable bookkeeping for a plain-Python peel of one graph.

    ``bin_load[b]`` is the number of distinct active balls in bin ``b`` and
    ``worklist`` holds exactly the bins whose load is one.
    """

    def __init__(self, graph: SmearGraph):
        self.graph = graph
        self.active = np.ones(graph.K, dtype=bool)
        self.ball_bins = [sorted(set(row)) for row in graph.adjacency.tolist()]
        self.bin_members: list[set[int]] = [set() for _ in range(graph.n_bins)]
        for k, bins in enumerate(self.ball_bins):
            for b in bins:
                self.bin_members[b].add(k)
        self.bin_load = np.array([len(m) for m in self.bin_members], dtype=np.int64)
        self.worklist = {b for b in range(graph.n_bins) if self.bin_load[b] == 1}

    def lone_ball(self, b: int) -> int:
        for k in self.bin_members[b]:
            if self.active[k]:
                return k
        raise LookupError(f"bin {b} holds no active ball")

    def remove(self, k: int) -> None:
        self.active[k] = False
        for b in self.ball_bins[k]:
            self.bin_load[b] -= 1
            if self.bin_load[b] == 1:
                self.worklist.add(b)
            else:
                self.worklist.discard(b)

    def check(self) -> None:
        for b, members in enumerate(self.bin_members):
            assert self.bin_load[b] == sum(1 for k in members if self.active[k])
        assert self.worklist == {b for b in range(len(self.bin_members)) if self.bin_load[b] == 1}


def peel_reference(graph: SmearGraph, rng: np.random.Generator | None = None, check: bool = False):
    """Peel one singleton at a time, picking the next bin at random.

    Slow; used to confirm that the outcome does not depend on processing order.
    Returns the final :class:`DecoderState`.
    """
    state = DecoderState(graph)
    while state.worklist:
        pool = sorted(state.worklist)
        b = pool[int(rng.integers(len(pool)))] if rng is not None else pool[0]
        state.remove(state.lone_ball(b))
        if check:
            state.check()
    return state


def _result(active: np.ndarray, trajectory: np.ndarray) -> PeelResult:
    K = active.shape[0]
    left = int(active.sum())
    return PeelResult(
        recovered_count=K - left,
        residual_fraction=left / K,
        rounds=int(trajectory.shape[0]),
        success=left == 0,
        trajectory=tuple(float(v) for v in trajectory),
    )


def peel(graph: SmearGraph) -> PeelResult:
    """Run the peeling decoder in synchronous rounds."""
    active, trajectory = _kernels.peel_rounds(np.ascontiguousarray(graph.adjacency), graph.n_bins)
    return _result(active, trajectory)


def layout_for_ratio(pattern: SmearPattern, ratio: float, K: int, layout: str = "shared") -> BinLayout:
    """Bin layout with about ``ratio * K`` bins in total.

    ``"shared"`` gives ``Shared(round(ratio K))``; ``"staged"`` splits the bins
    evenly, ``round(ratio K / g)`` per group.
    """
    if not ratio > 0:
        raise ValueError("ratio must be positive")
    if layout == "shared":
        return Shared(max(pattern.max_smear, round(ratio * K)))
    if layout == "staged":
        f = round(ratio * K / pattern.g)
        return Staged(tuple(max(s, f) for s in pattern.entries))
    raise ValueError(f"unknown layout {layout!r}; expected 'shared' or 'staged'")


def trial_seed(seed: int, index: int) -> int:
    """Seed of trial ``index`` under master ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint64)[0])


def _trial(pattern: SmearPattern, layout: BinLayout, K: int, seed: int):
    sizes = np.asarray(layout.space_sizes(pattern.g), dtype=np.int64)
    offsets = np.asarray(layout.space_offsets(pattern.g), dtype=np.int64)
    starts = draw_starts(K, sizes, seed)
    adj = _kernels.staged_starts_to_adjacency(
        starts, np.asarray(pattern.entries, dtype=np.int64), sizes, offsets
    )
    return _kernels.peel_rounds(adj, layout.n_bins)


def _run_trials(pattern, layout, K, trials, seed, jobs):
    seeds = [trial_seed(seed, i) for i in range(trials)]
    if jobs is None or jobs <= 1 or trials == 1:
        return [_trial(pattern, layout, K, s) for s in seeds]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda s: _trial(pattern, layout, K, s), seeds))


@dataclass(frozen=True)
class McResult:
    pattern: SmearPattern
    ratio: float
    K: int
    trials: int
    seed: int
    p_full: float
    mean_residual: float
    std_err: float
    p_full_se: float

    def row(self) -> tuple:
        return (str(self.pattern), self.ratio, self.K, self.trials, self.p_full,
                self.mean_residual, self.std_err, self.seed)


def mc_recovery(
    pattern: SmearPattern | str | Sequence[int],
    ratio: float,
    K: int,
    trials: int,
    seed: int = 0,
    layout: str | BinLayout = "shared",
    jobs: int | None = 1,
) -> McResult:
    """Monte Carlo estimate of full-recovery probability and residual fraction.

    ``std_err`` is the standard error of ``mean_residual``; ``p_full_se`` the
    binomial standard error of ``p_full``.
    """
    pattern = SmearPattern.parse(pattern)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if K < 1:
        raise ValueError("K must be >= 1")
    lay = layout if isinstance(layout, (Shared, Staged)) else layout_for_ratio(pattern, ratio, K, layout)
    outcomes = _run_trials(pattern, lay, K, trials, seed, jobs)
    residual = np.array([a.sum() / K for a, _ in outcomes])
    p_full = float(np.mean(residual == 0))
    se = float(residual.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("nan")
    return McResult(
        pattern=pattern,
        ratio=float(ratio),
        K=K,
        trials=trials,
        seed=seed,
        p_full=p_full,
        mean_residual=float(residual.mean()),
        std_err=se,
        p_full_se=math.sqrt(p_full * (1 - p_full) / trials),
    )


def mc_trajectory(
    pattern: SmearPattern | str | Sequence[int],
    ratio: float,
    K: int,
    trials: int,
    seed: int = 0,
    layout: str | BinLayout = "staged",
    jobs: int | None = 1,
) -> np.ndarray:
    """Mean fraction of unrecovered balls after each synchronous round.

    Trials that stop early are held at their final value. Entry ``t - 1`` is
    comparable with the density-evolution iterate ``x_t``.
    """
    pattern = SmearPattern.parse(pattern)
    lay = layout if isinstance(layout, (Shared, Staged)) else layout_for_ratio(pattern, ratio, K, layout)
    outcomes = _run_trials(pattern, lay, K, trials, seed, jobs)
    length = max(1, max(len(t) for _, t in outcomes))
    padded = np.empty((trials, length))
    for i, (_, traj) in enumerate(outcomes):
        if len(traj) == 0:
            padded[i] = 1.0
        else:
            padded[i, : len(traj)] = traj
            padded[i, len(traj):] = traj[-1]
    return padded.mean(axis=0)


def empirical_threshold(
    pattern: SmearPattern | str | Sequence[int],
    K: int,
    trials: int,
    target: float = 0.5,
    tol: float = 0.005,
    seed: int = 0,
    layout: str = "shared",
    bracket: tuple[float, float] | None = None,
    jobs: int | None = 1,
) -> ThresholdEstimate:
    """Bisect ``M/K`` until the full-recovery probability crosses ``target``.

    Every probe reuses the same trial seeds, so the estimated success
    probability moves monotonically with the ratio up to graph-size rounding.
    The default bracket is ``[1, d]``; a bracket that does not straddle the
    target raises :class:`~smearing.thresholds.BracketError`.
    """
    pattern = SmearPattern.parse(pattern)
    if not 0 < target < 1:
        raise ValueError("target must lie in (0, 1)")
    lo, hi = bracket if bracket is not None else (1.0, float(pattern.d))
    probes: dict[float, float] = {}

    def succeeds(r: float) -> bool:
        res = mc_recovery(pattern, r, K, trials, seed=seed, layout=layout, jobs=jobs)
        probes[r] = res.p_full
        return res.p_full >= target

    ratio = bisect_ratio(succeeds, lo, hi, tol)
    return ThresholdEstimate(
        ratio,
        MONTE_CARLO,
        {"K": K, "trials": trials, "seed": seed, "target": target, "tol": tol,
         "layout": layout, "probes": dict(sorted(probes.items()))},
    )


def recovery_curve(
    pattern: SmearPattern | str | Sequence[int],
    ratio_grid: Iterable[float],
    K: int,
    trials: int,
    seed: int = 0,
    layout: str = "shared",
    jobs: int | None = 1,
) -> list[McResult]:
    """One :func:`mc_recovery` result per grid point, in grid order."""
    grid = list(ratio_grid)
    if not grid:
        raise ValueError("ratio grid is empty")
    return [mc_recovery(pattern, r, K, trials, seed=seed, layout=layout, jobs=jobs) for r in grid]


def rows_to_csv(results: Iterable[McResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for res in results:
        writer.writerow(res.row())
    return buf.getvalue()
