"""Threshold estimates and the bisection shared by DE and Monte Carlo searches."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

__all__ = ["ThresholdEstimate", "BracketError", "bisect_ratio", "DE_EXACT", "DE_BOUND", "MONTE_CARLO"]

DE_EXACT = "DE-exact"
DE_BOUND = "DE-bound"
MONTE_CARLO = "MonteCarlo"


class BracketError(RuntimeError):
    """The search interval does not straddle the success/failure boundary."""


@dataclass(frozen=True)
class ThresholdEstimate:
    """A bins-per-ball ratio ``M/K`` at which peeling switches to success."""

    ratio: float
    method: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.ratio > 0:
            raise ValueError("threshold ratio must be positive")
        if self.method not in (DE_EXACT, DE_BOUND, MONTE_CARLO):
            raise ValueError(f"unknown method {self.method!r}")


def bisect_ratio(succeeds: Callable[[float], bool], lo: float, hi: float, tol: float) -> float:
    """Smallest ratio in ``[lo, hi]`` (within ``tol``) at which ``succeeds`` holds.

    ``succeeds`` must fail at ``lo`` and hold at ``hi``; otherwise
    :class:`BracketError` is raised. Returns the midpoint of the final bracket.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not hi > lo:
        raise BracketError(f"empty search interval [{lo}, {hi}]")
    if succeeds(lo):
        raise BracketError(f"already succeeds at the lower end {lo}; threshold is below the interval")
    if not succeeds(hi):
        raise BracketError(f"still fails at the upper end {hi}; threshold is above the interval")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if succeeds(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
