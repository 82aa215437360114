"""Recovery of sparse 1-stage Haar coefficients from shifted Fourier subsamples.

Signal model: ``x = W^{-1} alpha`` with the orthonormal block Haar transform
(blocks of two samples) and ``alpha`` K-sparse. The length is
``n = f_1 f_2 f_3`` with pairwise coprime factors and ``f_1`` even.

For each factor ``f`` two sample sets of the spectrum ``X = fft(x)`` are read,
``{k n/f}`` and ``{k n/f + 1}``. A length-``f`` inverse FFT of each turns them
into the modulo-``f`` folds of ``x`` and of ``x[t] w^t`` with
``w = exp(-2 pi i / n)``. The folded pair of a bin that holds a single time
sample ``t`` has ratio ``w^t``, which reveals ``t`` (the ratio test).

Because ``f_1`` is even, Haar blocks never straddle fold boundaries in stage 1,
so a forward Haar transform of the fold aliases ``alpha`` itself modulo
``f_1`` (the good stage). The odd stages see each coefficient spread over the
two samples of its block (bad stages), so a singleton there fixes a time sample
but leaves the coefficient type (scaling or detail) open. Such a block is
kept as a pending hypothesis pair until some bin it touches tells the two
apart.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .ensemble import SmearGraph, SmearPattern, Staged, from_stream_starts

__all__ = [
    "DecodeError",
    "SparseVector",
    "WaveletProblem",
    "StageObservation",
    "ObservationSet",
    "haar1_synthesize",
    "haar1_analyze",
    "acquire",
    "acquire_sparse",
    "goodify_stage",
    "induced_graph",
    "HypothesisList",
    "DecodeResult",
    "basis_aware_peel",
    "VerifyResult",
    "verify",
    "coprime_factors",
    "run_instance",
    "bench",
    "WAVELET_CSV_HEADER",
]

WAVELET_CSV_HEADER = ("n", "f1", "f2", "f3", "K", "samples", "recovered", "success", "max_err", "seconds")

_SQRT2 = math.sqrt(2.0)


class DecodeError(RuntimeError):
    """The observations contradict the noiseless signal model."""


def _check_factors(factors: Sequence[int]) -> tuple[int, ...]:
    factors = tuple(int(f) for f in factors)
    if len(factors) != 3:
        raise ValueError(f"need three factors, got {factors}")
    if any(f < 2 for f in factors):
        raise ValueError("factors must be >= 2")
    for a, b in itertools.combinations(factors, 2):
        if math.gcd(a, b) != 1:
            raise ValueError(f"factors {factors} are not pairwise coprime")
    if factors[0] % 2:
        raise ValueError(f"the first factor must be even, got {factors[0]}")
    return factors


def _twiddle(t, n: int):
    """``exp(-2 pi i t / n)`` with ``t`` reduced modulo ``n`` first."""
    t = np.mod(np.asarray(t, dtype=np.int64), n)
    return np.exp(-2j * np.pi * (t / n))


# ----------------------------------------------------------------------------
# data types


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Sparse complex vector of length ``n`` with sorted, unique indices."""

    n: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        val = np.asarray(self.values, dtype=np.complex128).reshape(-1)
        if idx.shape != val.shape:
            raise ValueError("indices and values differ in length")
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise ValueError("index out of range")
        order = np.argsort(idx, kind="stable")
        idx, val = idx[order], val[order]
        if np.any(np.diff(idx) == 0):
            raise ValueError("duplicate indices")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_dense(cls, dense, tol: float = 0.0) -> SparseVector:
        dense = np.asarray(dense, dtype=np.complex128)
        idx = np.flatnonzero(np.abs(dense) > tol)
        return cls(dense.shape[0], idx, dense[idx])

    @classmethod
    def from_dict(cls, n: int, items: dict) -> SparseVector:
        keys = sorted(items)
        return cls(n, np.array(keys, dtype=np.int64), np.array([items[k] for k in keys], dtype=np.complex128))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.n, dtype=np.complex128)
        out[self.indices] = self.values
        return out

    @property
    def K(self) -> int:
        return int(self.indices.size)

    def to_text(self) -> str:
        """One ``index,re,im`` line per entry, preceded by ``# n=<n>``."""
        lines = [f"# n={self.n}"]
        lines += [f"{int(i)},{float(v.real)!r},{float(v.imag)!r}" for i, v in zip(self.indices, self.values)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> SparseVector:
        n = None
        idx, vals = [], []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line[1:].strip().startswith("n="):
                    n = int(line[1:].strip()[2:])
                continue
            i, re_, im = line.split(",")
            idx.append(int(i))
            vals.append(complex(float(re_), float(im)))
        if n is None:
            raise ValueError("missing '# n=' header")
        return cls(n, np.array(idx, dtype=np.int64), np.array(vals, dtype=np.complex128))


@dataclass(frozen=True, eq=False)
class WaveletProblem:
    """Ground truth for one recovery instance."""

    factors: tuple[int, int, int]
    alpha: SparseVector
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "factors", _check_factors(self.factors))
        if self.alpha.n != self.n:
            raise ValueError(f"alpha has length {self.alpha.n}, expected {self.n}")

    @property
    def n(self) -> int:
        f1, f2, f3 = self.factors
        return f1 * f2 * f3

    @property
    def K(self) -> int:
        return self.alpha.K

    @classmethod
    def random(
        cls,
        factors: Sequence[int],
        K: int,
        seed: int = 0,
        floor: float = 1.0,
        complex_values: bool = True,
        one_per_block: bool = False,
    ) -> WaveletProblem:
        """Uniformly random support of size ``K`` with distinct magnitudes.

        Magnitudes are drawn from ``[floor, 2 floor)``. With ``one_per_block``
        at most one of the two coefficients of each Haar block is active, so
        every coefficient owns its own stream in the odd stages.
        """
        factors = _check_factors(factors)
        n = factors[0] * factors[1] * factors[2]
        if not 1 <= K <= (n // 2 if one_per_block else n):
            raise ValueError(f"K={K} does not fit n={n}")
        if not floor > 0:
            raise ValueError("floor must be positive")
        rng = np.random.default_rng(seed)
        if one_per_block:
            blocks = rng.choice(n // 2, size=K, replace=False)
            support = 2 * blocks + rng.integers(0, 2, size=K)
        else:
            support = rng.choice(n, size=K, replace=False)
        mags = floor * (1.0 + rng.random(K))
        while np.unique(mags).size < K:  # pragma: no cover - probability zero
            mags = floor * (1.0 + rng.random(K))
        if complex_values:
            vals = mags * np.exp(2j * np.pi * rng.random(K))
        else:
            vals = mags * rng.choice([-1.0, 1.0], size=K)
        return cls(factors, SparseVector(n, support, vals), seed)


# ----------------------------------------------------------------------------
# transforms and acquisition


def haar1_synthesize(alpha) -> np.ndarray:
    """Inverse 1-stage Haar transform; ``alpha[2j]`` scales, ``alpha[2j+1]`` details."""
    alpha = np.asarray(alpha, dtype=np.complex128)
    if alpha.ndim != 1 or alpha.shape[0] % 2:
        raise ValueError("length must be even")
    a, b = alpha[0::2], alpha[1::2]
    x = np.empty_like(alpha)
    x[0::2] = (a + b) / _SQRT2
    x[1::2] = (a - b) / _SQRT2
    return x


def haar1_analyze(x) -> np.ndarray:
    """Forward 1-stage Haar transform (inverse of :func:`haar1_synthesize`)."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1 or x.shape[0] % 2:
        raise ValueError("length must be even")
    e, o = x[0::2], x[1::2]
    alpha = np.empty_like(x)
    alpha[0::2] = (e + o) / _SQRT2
    alpha[1::2] = (e - o) / _SQRT2
    return alpha


@dataclass(frozen=True, eq=False)
class StageObservation:
    """Folded observations of one stage.

    ``y0``/``y1`` are the inverse FFTs of the unshifted and shifted sample
    sets, whose spectrum indices are ``idx0`` and ``idx1``.
    """

    f: int
    y0: np.ndarray
    y1: np.ndarray
    idx0: np.ndarray
    idx1: np.ndarray

    @property
    def kind(self) -> str:
        return "good" if self.f % 2 == 0 else "bad"


@dataclass(frozen=True, eq=False)
class ObservationSet:
    n: int
    stages: tuple[StageObservation, ...]

    @property
    def count(self) -> int:
        return int(sum(s.idx0.size + s.idx1.size for s in self.stages))

    @property
    def factors(self) -> tuple[int, ...]:
        return tuple(s.f for s in self.stages)


def _sample_indices(n: int, f: int, shift: int) -> np.ndarray:
    return np.arange(f, dtype=np.int64) * (n // f) + shift


def acquire(x, factors: Sequence[int], shifts: Sequence[int] = (0, 1)) -> ObservationSet:
    """Read the stride-``n/f`` samples of ``fft(x)`` and fold them back.

    Only the declared sample positions of the full spectrum are used.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[0]
    factors = tuple(int(f) for f in factors)
    shifts = tuple(int(s) for s in shifts)
    if len(shifts) != 2:
        raise ValueError("need exactly two shifts")
    for f in factors:
        if f < 1 or n % f:
            raise ValueError(f"factor {f} does not divide n={n}")
    X = np.fft.fft(x)
    stages = []
    for f in factors:
        idx = [_sample_indices(n, f, s) for s in shifts]
        ys = [np.fft.ifft(X[i % n]) for i in idx]
        stages.append(StageObservation(f, ys[0], ys[1], idx[0], idx[1]))
    return ObservationSet(n, tuple(stages))


def acquire_sparse(alpha: SparseVector, factors: Sequence[int]) -> ObservationSet:
    """Same observations as ``acquire(haar1_synthesize(alpha), factors)``.

    Computed in ``O(K + sum f)`` straight from the coefficients, for lengths
    where a full FFT is out of reach.
    """
    n = alpha.n
    factors = tuple(int(f) for f in factors)
    for f in factors:
        if f < 1 or n % f:
            raise ValueError(f"factor {f} does not divide n={n}")
    p = alpha.indices
    v = alpha.values
    block = p // 2
    sign = np.where(p % 2 == 0, 1.0, -1.0)
    times = np.concatenate([2 * block, 2 * block + 1])
    xval = np.concatenate([v / _SQRT2, sign * v / _SQRT2])
    tw = _twiddle(times, n)
    stages = []
    for f in factors:
        y0 = np.zeros(f, dtype=np.complex128)
        y1 = np.zeros(f, dtype=np.complex128)
        bins = times % f
        np.add.at(y0, bins, xval)
        np.add.at(y1, bins, xval * tw)
        stages.append(StageObservation(f, y0, y1, _sample_indices(n, f, 0), _sample_indices(n, f, 1)))
    return ObservationSet(n, tuple(stages))


def goodify_stage(y, n: int | None = None, shifted: bool = False) -> np.ndarray:
    """Forward Haar transform of an even-length fold.

    For the unshifted fold the result is ``alpha`` aliased modulo ``f``. For
    the shifted fold (``shifted=True``, needs ``n``) odd bins are first
    multiplied by ``w^{-1}`` so each block carries the common phase
    ``w^{2j}``; the result then aliases ``alpha[p] w^{2 (p // 2)}``.
    """
    y = np.asarray(y, dtype=np.complex128)
    if y.shape[0] % 2:
        raise ValueError("good stage needs an even number of bins")
    if shifted:
        if n is None:
            raise ValueError("n is required for the shifted fold")
        y = y.copy()
        y[1::2] *= np.exp(2j * np.pi / n)
    return haar1_analyze(y)


def induced_graph(problem: WaveletProblem) -> SmearGraph:
    """Balls are the active coefficients in index order.

    Coefficient ``p`` in block ``j = p // 2`` goes to bin ``p mod f_1`` of the
    good stage and to bins ``2j, 2j+1`` modulo ``f_2`` and ``f_3``.
    """
    f1, f2, f3 = problem.factors
    p = problem.alpha.indices
    j2 = 2 * (p // 2)
    starts = np.stack([p % f1, j2 % f2, j2 % f3], axis=1)
    return from_stream_starts(
        problem.K, Staged((f1, f2, f3)), SmearPattern((1, 2, 2)), starts, seed=problem.seed
    )


# ----------------------------------------------------------------------------
# decoder


class HypothesisList:
    """Per-bin sets of pending blocks whose hypotheses touch that bin."""

    def __init__(self):
        self._by_bin: dict[tuple[int, int], set[int]] = {}

    def add(self, key: tuple[int, int], block: int) -> None:
        self._by_bin.setdefault(key, set()).add(block)

    def discard(self, key: tuple[int, int], block: int) -> None:
        entries = self._by_bin.get(key)
        if entries is not None:
            entries.discard(block)
            if not entries:
                del self._by_bin[key]

    def at(self, key: tuple[int, int]) -> list[int]:
        return sorted(self._by_bin.get(key, ()))

    def __len__(self):
        return sum(len(v) for v in self._by_bin.values())


@dataclass
class DecodeResult:
    alpha_hat: SparseVector
    complete: bool
    rounds: int
    pending: int
    stats: dict = field(default_factory=dict)


_EMPTY, _CLEAN, _GHOST, _MULTI = "empty", "clean", "ghost", "multi"


class _Block:
    __slots__ = ("times", "coefs", "closed", "hyp_time")

    def __init__(self):
        self.times: dict[int, complex] = {}  # full time-domain value x[t]
        self.coefs: dict[int, complex] = {}
        self.closed = False
        self.hyp_time: int | None = None  # set while the block is pending


class _Decoder:
    def __init__(self, obs: ObservationSet, loc_tol, mag_tol, empty_tol, max_hyp):
        if len(obs.stages) != 3:
            raise ValueError("need three stages")
        self.n = n = obs.n
        self.factors = _check_factors(obs.factors)
        if n != self.factors[0] * self.factors[1] * self.factors[2]:
            raise ValueError("factors do not multiply to n")
        self.loc_tol = loc_tol if loc_tol is not None else max(1e-6, 16.0 * n * np.finfo(float).eps)
        self.mag_tol = mag_tol
        self.empty_tol = empty_tol
        self.max_hyp = max_hyp
        good = obs.stages[0]
        self.y0 = [goodify_stage(good.y0).copy()]
        self.y1 = [goodify_stage(good.y1, n=n, shifted=True).copy()]
        for st in obs.stages[1:]:
            self.y0.append(np.array(st.y0, dtype=np.complex128))
            self.y1.append(np.array(st.y1, dtype=np.complex128))
        self.blocks: dict[int, _Block] = {}
        self.sub_t: dict[int, complex] = {}
        self.hyps = HypothesisList()
        self.dirty: set[tuple[int, int]] = {(s, b) for s in range(3) for b in range(self.factors[s])}
        self.found: dict[int, complex] = {}
        self.combos_checked = 0

    # -- helpers -----------------------------------------------------------
    def _w(self, t: int) -> complex:
        return complex(_twiddle(t, self.n))

    def _block(self, j: int) -> _Block:
        blk = self.blocks.get(j)
        if blk is None:
            blk = self.blocks[j] = _Block()
        return blk

    def _subtract(self, stage: int, b: int, v0: complex, v1: complex) -> None:
        self.y0[stage][b] -= v0
        self.y1[stage][b] -= v1
        self.dirty.add((stage, b))

    def _good_term(self, p: int, v: complex):
        j = p // 2
        return p % self.factors[0], v, v * self._w(2 * j)

    @staticmethod
    def _tap(p: int, t: int) -> float:
        return -1.0 if (p % 2 == 1 and t % 2 == 1) else 1.0

    def _subtract_time(self, t: int, amount: complex) -> None:
        wt = self._w(t)
        for s in (1, 2):
            self._subtract(s, t % self.factors[s], amount, amount * wt)
        self.sub_t[t] = self.sub_t.get(t, 0.0) + amount

    def _pending_bins(self, j: int, t: int) -> list[tuple[int, int]]:
        f1 = self.factors[0]
        other = t ^ 1
        keys = [(0, (2 * j) % f1), (0, (2 * j + 1) % f1)]
        keys += [(s, other % self.factors[s]) for s in (1, 2)]
        return keys

    # -- knowledge updates ---------------------------------------------------
    def _confirm(self, p: int, v: complex) -> None:
        """Record coefficient ``p`` and remove it from the bins not yet cleared."""
        j = p // 2
        blk = self._block(j)
        if p in blk.coefs:
            return
        blk.coefs[p] = v
        self.found[p] = v
        b, g0, g1 = self._good_term(p, v)
        self._subtract(0, b, g0, g1)
        for t in (2 * j, 2 * j + 1):
            if t not in blk.times:
                self._subtract_time(t, self._tap(p, t) * v / _SQRT2)

    def _learn_time(self, t: int, residual: complex) -> None:
        j = t // 2
        blk = self._block(j)
        if blk.closed or t in blk.times:
            return
        blk.times[t] = self.sub_t.get(t, 0.0) + residual
        self._subtract_time(t, residual)
        self._settle(j)

    def _close(self, j: int, blk: _Block) -> None:
        if blk.hyp_time is not None:
            for key in self._pending_bins(j, blk.hyp_time):
                self.hyps.discard(key, j)
                self.dirty.add(key)
            blk.hyp_time = None
        blk.closed = True

    def _settle(self, j: int) -> None:
        blk = self._block(j)
        if blk.closed:
            return
        if len(blk.times) == 2:
            # both samples known: the block's Haar pair follows exactly
            x0, x1 = blk.times[2 * j], blk.times[2 * j + 1]
            for p, v in ((2 * j, (x0 + x1) / _SQRT2), (2 * j + 1, (x0 - x1) / _SQRT2)):
                if p not in blk.coefs and abs(v) > self.empty_tol:
                    blk.coefs[p] = v
                    self.found[p] = v
                    b, g0, g1 = self._good_term(p, v)
                    self._subtract(0, b, g0, g1)
            self._close(j, blk)
            return
        if len(blk.times) == 1 and blk.coefs:
            (t,) = blk.times
            rest = blk.times[t] - sum(self._tap(p, t) * v / _SQRT2 for p, v in blk.coefs.items())
            missing = [p for p in (2 * j, 2 * j + 1) if p not in blk.coefs]
            self._close(j, blk)
            if missing and abs(rest) > self.empty_tol:
                q = missing[0]
                vq = _SQRT2 * rest / self._tap(q, t)
                blk.coefs[q] = vq
                self.found[q] = vq
                b, g0, g1 = self._good_term(q, vq)
                self._subtract(0, b, g0, g1)
                other = t ^ 1
                self._subtract_time(other, self._tap(q, other) * vq / _SQRT2)
            return
        if len(blk.times) == 1:
            (t,) = blk.times
            blk.hyp_time = t
            for key in self._pending_bins(j, t):
                self.hyps.add(key, j)
                self.dirty.add(key)
            return
        if len(blk.coefs) == 2:
            blk.closed = True

    # -- bin tests -------------------------------------------------------------
    def _ratio_location(self, stage: int, y0: complex, y1: complex):
        """Location implied by the ratio test, or ``None``."""
        if abs(y0) <= self.empty_tol:
            return None
        ratio = y1 / y0
        if abs(abs(ratio) - 1.0) > self.mag_tol:
            return None
        pos = -math.atan2(ratio.imag, ratio.real) * self.n / (2.0 * math.pi)
        loc = round(pos)
        if abs(pos - loc) > self.loc_tol:
            return None
        return loc % self.n

    def _classify(self, stage: int, b: int, y0: complex, y1: complex, involved: Iterable[int]):
        if abs(y0) <= self.empty_tol and abs(y1) <= self.empty_tol:
            return _EMPTY, None
        loc = self._ratio_location(stage, y0, y1)
        if loc is None:
            return _MULTI, None
        f = self.factors[stage]
        if stage == 0:
            if loc % 2:
                return _MULTI, None
            loc = loc + (b % 2)
        if loc % f != b:
            return None, loc  # inconsistent with its own bin
        if (loc // 2) in set(involved):
            return _GHOST, loc
        return _CLEAN, loc

    def _options(self, j: int):
        """The two hypotheses of pending block ``j``: (coefficient, value)."""
        blk = self.blocks[j]
        t = blk.hyp_time
        xt = blk.times[t]
        return [(2 * j, _SQRT2 * xt), (2 * j + 1, _SQRT2 * xt / self._tap(2 * j + 1, t))]

    def _option_term(self, j: int, option: tuple[int, complex], stage: int, b: int):
        p, v = option
        if stage == 0:
            gb, g0, g1 = self._good_term(p, v)
            return (g0, g1) if gb == b else (0.0, 0.0)
        other = self.blocks[j].hyp_time ^ 1
        if other % self.factors[stage] != b:
            return 0.0, 0.0
        x = self._tap(p, other) * v / _SQRT2
        return x, x * self._w(other)

    def _examine(self, stage: int, b: int) -> None:
        y0, y1 = self.y0[stage][b], self.y1[stage][b]
        involved = self.hyps.at((stage, b))
        kind, loc = self._classify(stage, b, y0, y1, ())
        if kind is None and not involved:
            raise DecodeError(f"stage {stage} bin {b}: decoded location {loc} does not alias to this bin")
        if kind == _CLEAN:
            if stage == 0:
                self._confirm(loc, y0)
                self._settle(loc // 2)
            else:
                self._learn_time(loc, y0)
            return
        if kind == _EMPTY or not involved or len(involved) > self.max_hyp:
            return
        options = [self._options(j) for j in involved]
        terms = [[self._option_term(j, o, stage, b) for o in opts] for j, opts in zip(involved, options)]
        winners = []
        for choice in itertools.product((0, 1), repeat=len(involved)):
            r0, r1 = y0, y1
            for k, c in enumerate(choice):
                r0 -= terms[k][c][0]
                r1 -= terms[k][c][1]
            self.combos_checked += 1
            ck, _ = self._classify(stage, b, r0, r1, involved)
            if ck in (_EMPTY, _CLEAN):
                winners.append(choice)
                if len(winners) > 1:
                    return
        if len(winners) != 1:
            return
        for j, opts, c in zip(involved, options, winners[0]):
            if self.blocks[j].closed:
                continue
            p, v = opts[c]
            self._confirm(p, v)
            self._settle(j)

    def run(self, max_rounds: int) -> tuple[int, bool]:
        rounds = 0
        while self.dirty and rounds < max_rounds:
            batch = sorted(self.dirty)
            self.dirty = set()
            for stage, b in batch:
                self._examine(stage, b)
            rounds += 1
        return rounds, not self.dirty

    def residual_empty(self) -> bool:
        tol = self.empty_tol
        return all(np.all(np.abs(a) <= tol) for a in self.y0) and all(np.all(np.abs(a) <= tol) for a in self.y1)


def basis_aware_peel(
    observations: ObservationSet,
    K: int | None = None,
    C: int = 10,
    loc_tol: float | None = None,
    mag_tol: float = 1e-6,
    empty_tol: float = 1e-7,
    max_hypotheses: int = 10,
) -> DecodeResult:
    """Peel the good stage directly and the odd stages through hypotheses.

    Bins are revisited in rounds until nothing changes. A good-stage singleton
    gives a coefficient outright. An odd-stage singleton gives one time sample
    ``x[t]``; its block becomes pending with two hypotheses (scaling or
    detail). At a bin touched by ``m`` pending blocks all ``2^m`` hypothesis
    combinations are tried and they are accepted only if exactly one of them
    leaves the bin empty or a clean singleton outside those blocks. Blocks
    with both samples known are solved exactly.

    ``loc_tol`` (location units) defaults to ``1e-6``, widened to
    ``16 n eps`` for very long signals where double precision cannot resolve
    the phase any better. The round cap is ``C * K`` (``K`` defaults to the
    number of bins). ``complete`` reports that every bin was emptied.
    """
    dec = _Decoder(observations, loc_tol, mag_tol, empty_tol, max_hypotheses)
    cap = C * max(1, K if K is not None else sum(dec.factors))
    rounds, _ = dec.run(cap)
    pending = sum(1 for blk in dec.blocks.values() if blk.hyp_time is not None)
    complete = dec.residual_empty() and pending == 0
    alpha_hat = SparseVector.from_dict(observations.n, dec.found)
    return DecodeResult(alpha_hat, complete, rounds, pending, {"combos": dec.combos_checked})


@dataclass(frozen=True)
class VerifyResult:
    max_err: float
    support_match: bool

    @property
    def exact(self) -> bool:
        return self.support_match and self.max_err < 1e-9


def verify(alpha_hat, alpha) -> VerifyResult:
    """Compare supports exactly and report the largest value error."""
    if isinstance(alpha_hat, SparseVector) and isinstance(alpha, SparseVector):
        if alpha_hat.n != alpha.n:
            raise ValueError(f"dimension mismatch: {alpha_hat.n} vs {alpha.n}")
        ha = {int(i): v for i, v in zip(alpha_hat.indices, alpha_hat.values) if v != 0}
        hb = {int(i): v for i, v in zip(alpha.indices, alpha.values) if v != 0}
        err = max((abs(ha.get(i, 0) - hb.get(i, 0)) for i in ha.keys() | hb.keys()), default=0.0)
        return VerifyResult(float(err), ha.keys() == hb.keys())
    a = alpha_hat.to_dense() if isinstance(alpha_hat, SparseVector) else np.asarray(alpha_hat, dtype=np.complex128)
    b = alpha.to_dense() if isinstance(alpha, SparseVector) else np.asarray(alpha, dtype=np.complex128)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    sa = set(np.flatnonzero(a).tolist())
    sb = set(np.flatnonzero(b).tolist())
    err = float(np.max(np.abs(a - b))) if a.size else 0.0
    return VerifyResult(err, sa == sb)


# ----------------------------------------------------------------------------
# experiments


def coprime_factors(target: float) -> tuple[int, int, int]:
    """Three pairwise coprime factors near ``target``, the first one even."""
    base = max(2, int(round(target)))
    f1 = base + (base % 2)
    f2 = max(3, base | 1)
    while math.gcd(f2, f1) != 1:
        f2 += 2
    f3 = f2 + 2
    while math.gcd(f3, f1) != 1 or math.gcd(f3, f2) != 1:
        f3 += 2
    return f1, f2, f3


def run_instance(problem: WaveletProblem, sparse: bool = False, **decoder_kw) -> tuple[DecodeResult, VerifyResult, float]:
    """Acquire, decode and verify one problem; returns the decode wall time too."""
    if sparse:
        obs = acquire_sparse(problem.alpha, problem.factors)
    else:
        obs = acquire(haar1_synthesize(problem.alpha.to_dense()), problem.factors)
    t0 = time.perf_counter()
    res = basis_aware_peel(obs, K=problem.K, **decoder_kw)
    seconds = time.perf_counter() - t0
    return res, verify(res.alpha_hat, problem.alpha), seconds


def bench(
    Ks: Sequence[int] = tuple(2**e for e in range(10, 17)),
    ratio: float = 1.6,
    seed: int = 0,
    repeats: int = 1,
) -> list[dict]:
    """Decoder wall time against ``K`` with ``sum f = ratio K``.

    Observations come from :func:`acquire_sparse`; only the decoder is timed.
    Each row carries ``c = seconds / (K log K)`` and its ratio to the median
    ``c`` over the sweep.
    """
    rows = []
    for K in Ks:
        factors = coprime_factors(ratio * K / 3.0)
        best = math.inf
        ok = True
        for r in range(repeats):
            prob = WaveletProblem.random(factors, K, seed=seed + r)
            res, ver, secs = run_instance(prob, sparse=True)
            best = min(best, secs)
            ok = ok and res.complete and ver.exact
        rows.append({"K": K, "factors": factors, "n": math.prod(factors), "seconds": best,
                     "success": ok, "c": best / (K * math.log(K))})
    med = float(np.median([r["c"] for r in rows]))
    for r in rows:
        r["c_ratio"] = r["c"] / med
    return rows
