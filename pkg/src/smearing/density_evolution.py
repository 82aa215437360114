"""Density evolution for peeling on smearing graphs.

Every engine tracks, per group (stage) of a reference ball, the probability
``u`` that this stage has not revealed the ball after ``t`` synchronous rounds.
Stages interact only through the other-stage product
``w = prod_{m != l} u_m``: the chance that a neighbouring ball is still unknown
to all of its other stages. The unrecovered fraction is ``x_t = prod_l u_l``.

Stage kinds
-----------
* 1-smear: ``u_t = 1 - exp(-lam * w_{t-1})``.
* 2-smear (exact, one step of memory)::

      d_t = exp(-lam w_{t-1})
      s_t = exp(-lam w_{t-1}) + lam s_{t-1} w_{t-1} exp(-lam w_{t-2})
      u_t = 1 - d_t (1 - (1 - s_t)^2)

* L-smear lower bound: ``d_t`` as above and, for ``i = 1..L-1``::

      s_t^(i) = exp(-i lam w_{t-1}) + lam w_{t-1} exp(-lam w_{t-2}) r^(i)
      r^(i)   = sum_{j<=i} sum_{k<=j} s^(k) exp(-(L-k-1) lam w') exp(-(k-1) lam w'')

  with ``u_t = 1 - q_from_components(d_t, s_t)``.
* 3-smear exact for ``[1,1,3]``: two steps of memory, see :class:`Smear113Stage`.

With ``w = q^2`` for three identical stages the 2-smear stage reproduces the
classic ``x_t = q_t^3`` recursion.

Memory slots before the first round hold ``u = 1`` (nothing removed) and
``s = 0`` (no help through a shared bin can have arrived yet).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .ensemble import SmearPattern
from .thresholds import DE_BOUND, DE_EXACT, ThresholdEstimate, bisect_ratio

__all__ = [
    "DEParams",
    "DETrace",
    "FixedPoint",
    "q_from_components",
    "de_2smear",
    "de_all_ones",
    "de_lower_bound",
    "de_113",
    "fixed_point",
    "de_threshold",
    "engine_by_name",
    "exact_engine_for",
    "trace_to_csv",
]


def _clamp(v: float) -> float:
    return 0.0 if v < 0.0 else 1.0 if v > 1.0 else v


@dataclass(frozen=True)
class DEParams:
    """Inputs of a density-evolution run.

    ``lam`` is the uniform load ``g K / M``; ``loads`` optionally gives one
    load ``K / f_l`` per stage instead.
    """

    pattern: SmearPattern
    lam: float | None = None
    loads: tuple[float, ...] | None = None
    max_iters: int = 10_000
    tol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "pattern", SmearPattern.parse(self.pattern))
        if (self.lam is None) == (self.loads is None):
            raise ValueError("give exactly one of lam or loads")
        if self.loads is not None:
            loads = tuple(float(v) for v in self.loads)
            if len(loads) != self.pattern.g:
                raise ValueError(f"need {self.pattern.g} stage loads, got {len(loads)}")
            if any(not v > 0 for v in loads):
                raise ValueError("stage loads must be positive")
            object.__setattr__(self, "loads", loads)
        elif not self.lam > 0:
            raise ValueError("lam must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    @classmethod
    def from_ratio(cls, pattern, ratio: float, fractions: Sequence[float] | None = None, **kw) -> DEParams:
        """Parameters at bins-per-ball ``ratio = M/K``.

        Without ``fractions`` the load is uniform, ``lam = g / ratio``. With
        ``fractions`` (stage ``l`` gets ``fractions[l] * M`` bins) the loads are
        ``1 / (fractions[l] * ratio)``.
        """
        pattern = SmearPattern.parse(pattern)
        if not ratio > 0:
            raise ValueError("ratio must be positive")
        if fractions is None:
            return cls(pattern, lam=pattern.g / ratio, **kw)
        return cls(pattern, loads=tuple(1.0 / (phi * ratio) for phi in fractions), **kw)

    def stage_loads(self) -> tuple[float, ...]:
        if self.loads is not None:
            return self.loads
        return (float(self.lam),) * self.pattern.g


@dataclass
class DETrace:
    """Per-round quantities of a run (row ``t - 1`` holds round ``t``).

    ``u`` has one column per stage. ``q``, ``d``, ``s`` and ``r`` describe the
    first smeared stage and ``p`` the first 1-smear stage; unused ones are
    empty.
    """

    x: np.ndarray
    u: np.ndarray
    q: np.ndarray
    d: np.ndarray
    s: np.ndarray
    r: np.ndarray
    p: np.ndarray
    params: DEParams | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.x)

    @property
    def final(self) -> float:
        return float(self.x[-1]) if len(self.x) else 1.0


# ----------------------------------------------------------------------------
# composition of one L-smear stage


def q_from_components(d: float, s: Sequence[float], strict: bool = True) -> float:
    """Probability that an L-smear stage reveals the reference ball, ``1 - q``.

    ``d`` is the probability that the ball's own stream is clear and
    ``s[i - 1] = s^(i)`` for ``i = 1..L-1``. Evaluates::

        d * (2 s^(L-1) + sum_{i=2}^{L-1} s^(i-1) s^(L-i) - sum_{i=1}^{L-1} s^(i) s^(L-i))

    clamped to ``[0, 1]``. With ``strict`` the ordering
    ``1 >= d >= s^(1) >= ... >= s^(L-1) >= 0`` is enforced.
    """
    s = [float(v) for v in s]
    L = len(s) + 1
    if L < 2:
        raise ValueError("need at least one s component (L >= 2)")
    if strict:
        chain = [1.0, float(d), *s, 0.0]
        if any(a < b for a, b in zip(chain, chain[1:])):
            raise ValueError(f"components must satisfy 1 >= d >= s^(1) >= ... >= 0, got d={d}, s={s}")

    def S(i):
        return s[i - 1]

    bracket = 2.0 * S(L - 1)
    for i in range(2, L):
        bracket += S(i - 1) * S(L - i)
    for i in range(1, L):
        bracket -= S(i) * S(L - i)
    return _clamp(d * bracket)


# ----------------------------------------------------------------------------
# stages


class _Stage:
    kind = "?"

    def __init__(self, load: float):
        self.load = load
        self.d = self.q = math.nan
        self.s: list[float] = []
        self.r: list[float] = []

    def step(self, w1: float, w2: float, w3: float) -> float:
        raise NotImplementedError


class OneSmearStage(_Stage):
    kind = "1"

    def step(self, w1, w2, w3):
        self.q = 1.0 - math.exp(-self.load * w1)
        return self.q


class TwoSmearStage(_Stage):
    kind = "2"

    def __init__(self, load):
        super().__init__(load)
        self.s_prev = 0.0

    def step(self, w1, w2, w3):
        lam = self.load
        d = math.exp(-lam * w1)
        s = _clamp(math.exp(-lam * w1) + lam * self.s_prev * w1 * math.exp(-lam * w2))
        self.d, self.s, self.r, self.s_prev = d, [s], [], s
        self.q = _clamp(1.0 - d * (1.0 - (1.0 - s) ** 2))
        return self.q


class BoundStage(_Stage):
    """L-smear stage of the lower-bound recursion.

    ``memory=1`` feeds ``r`` with the previous round (``s_{t-1}``,
    ``w_{t-2}``, ``w_{t-1}``), which makes ``L = 2`` coincide with the exact
    2-smear stage. ``memory=2`` shifts those inputs one round further back.
    """

    def __init__(self, load, L: int, memory: int = 1):
        super().__init__(load)
        if L < 2:
            raise ValueError("bound stage needs L >= 2")
        if memory not in (1, 2):
            raise ValueError("memory must be 1 or 2")
        self.L, self.memory = L, memory
        self.kind = str(L)
        self.hist = [[0.0] * (L - 1), [0.0] * (L - 1)]  # s_{t-1}, s_{t-2}

    def step(self, w1, w2, w3):
        lam, L = self.load, self.L
        if self.memory == 1:
            s_old, far, near = self.hist[0], w2, w1
        else:
            s_old, far, near = self.hist[1], w3, w2
        terms = [
            s_old[k - 1] * math.exp(-(L - k - 1) * lam * far) * math.exp(-(k - 1) * lam * near)
            for k in range(1, L)
        ]
        help_ = lam * w1 * math.exp(-lam * w2)
        r, s = [], []
        for i in range(1, L):
            # sum_{j<=i} sum_{k<=j} T_k = sum_{k<=i} (i - k + 1) T_k
            ri = sum((i - k + 1) * terms[k - 1] for k in range(1, i + 1))
            r.append(ri)
            s.append(_clamp(math.exp(-i * lam * w1) + help_ * ri))
        self.d = math.exp(-lam * w1)
        self.s, self.r = s, r
        self.hist = [s, self.hist[0]]
        self.q = 1.0 - q_from_components(self.d, s, strict=False)
        return self.q


class Smear113Stage(_Stage):
    """Exact 3-smear stage of ``[1,1,3]`` with two steps of memory.

    ``w`` here is the product of the two 1-smear stages (``p^2`` for equal
    loads). With ``e(k, w) = exp(-k lam w)`` and ``w1, w2, w3`` the products
    one, two and three rounds back::

        A     = lam w1 e(1, w2)
        H2    = (e(1, w2) + s2_{t-1} lam w2 e(1, w3)) * lam w2 e(c, w3)
        H3    = s2_{t-2} lam w2 e(1, w3) - s2_{t-2} lam w2 e(2, w3)
        s1_t  = e(1, w1) + A (s1_{t-1} e(1, w2) + H2 + H3)
        s2_t  = e(2, w1) + A (2 s1_{t-1} e(1, w2) + H2 + H3)
        1 - q = e(1, w1) (2 s2 + s1^2 - 2 s1 s2)

    ``variant="displayed"`` uses ``c = 2`` in ``H2`` and ``"prose"`` uses
    ``c = 1``. Terms that cancel exactly are left out.
    """

    kind = "3"

    def __init__(self, load, variant: str = "displayed"):
        super().__init__(load)
        if variant not in ("displayed", "prose"):
            raise ValueError("variant must be 'displayed' or 'prose'")
        self.c = 2 if variant == "displayed" else 1
        self.s1 = [0.0, 0.0]  # t-1, t-2
        self.s2 = [0.0, 0.0]

    def step(self, w1, w2, w3):
        lam = self.load

        def e(k, w):
            return math.exp(-k * lam * w)

        A = lam * w1 * e(1, w2)
        H2 = (e(1, w2) + self.s2[0] * lam * w2 * e(1, w3)) * lam * w2 * e(self.c, w3)
        H3 = self.s2[1] * lam * w2 * (e(1, w3) - e(2, w3))
        s1 = _clamp(e(1, w1) + A * (self.s1[0] * e(1, w2) + H2 + H3))
        s2 = _clamp(e(2, w1) + A * (2.0 * self.s1[0] * e(1, w2) + H2 + H3))
        self.s1 = [s1, self.s1[0]]
        self.s2 = [s2, self.s2[0]]
        self.d = e(1, w1)
        self.s, self.r = [s1, s2], []
        self.q = 1.0 - q_from_components(self.d, [s1, s2], strict=False)
        return self.q


# ----------------------------------------------------------------------------
# engine driver


def _run(stages: list[_Stage], params: DEParams) -> DETrace:
    g = len(stages)
    hist = [[1.0] * g for _ in range(3)]  # u_{t-1}, u_{t-2}, u_{t-3}
    smeared = next((i for i, st in enumerate(stages) if not isinstance(st, OneSmearStage)), None)
    single = next((i for i, st in enumerate(stages) if isinstance(st, OneSmearStage)), None)
    xs, us, qs, ds, ss, rs = [], [], [], [], [], []
    x_prev = 1.0
    for _ in range(params.max_iters):
        new = []
        for l, st in enumerate(stages):
            w = []
            for h in hist:
                prod = 1.0
                for m in range(g):
                    if m != l:
                        prod *= h[m]
                w.append(prod)
            new.append(_clamp(st.step(*w)))
        x = 1.0
        for v in new:
            x *= v
        xs.append(x)
        us.append(new)
        if smeared is not None:
            st = stages[smeared]
            qs.append(new[smeared])
            ds.append(st.d)
            ss.append(list(st.s))
            rs.append(list(st.r))
        hist = [new, hist[0], hist[1]]
        if x < params.tol or abs(x - x_prev) < params.tol * x:
            break
        x_prev = x
    T = len(xs)
    u = np.array(us, dtype=float).reshape(T, g)

    def mat(rows):
        width = max((len(r) for r in rows), default=0)
        return np.array(rows, dtype=float).reshape(T if rows else 0, width)

    return DETrace(
        x=np.array(xs),
        u=u,
        q=np.array(qs) if smeared is not None else u[:, 0].copy(),
        d=np.array(ds),
        s=mat(ss) if smeared is not None else np.zeros((0, 0)),
        r=mat(rs) if smeared is not None and rs and rs[0] else np.zeros((0, 0)),
        p=u[:, single].copy() if single is not None else np.zeros(0),
        params=params,
    )


def de_2smear(params: DEParams) -> DETrace:
    """Exact DE for patterns ``[2] * g``."""
    if any(s != 2 for s in params.pattern):
        raise ValueError(f"de_2smear needs every smear length to be 2, got {params.pattern}")
    return _run([TwoSmearStage(lam) for lam in params.stage_loads()], params)


def de_all_ones(params: DEParams) -> DETrace:
    """Classic Poisson DE for patterns ``[1] * g``.

    For equal loads the edge message obeys ``y_{t+1} = (1 - exp(-lam y_t))^(g-1)``
    from ``y_0 = 1``, and the node residual is ``(1 - exp(-lam y_t))^g``.
    """
    if any(s != 1 for s in params.pattern):
        raise ValueError(f"de_all_ones needs every smear length to be 1, got {params.pattern}")
    return _run([OneSmearStage(lam) for lam in params.stage_loads()], params)


def de_lower_bound(params: DEParams, memory: int = 1) -> DETrace:
    """Lower-bound DE for patterns mixing 1-smear and one common L-smear.

    The returned ``x_t`` bounds the unrecovered fraction from above.
    """
    entries = params.pattern.entries
    lengths = {s for s in entries if s > 1}
    if len(lengths) > 1:
        raise ValueError(f"all smeared stages must share one length, got {sorted(lengths)}")
    stages: list[_Stage] = []
    for s, lam in zip(entries, params.stage_loads()):
        stages.append(OneSmearStage(lam) if s == 1 else BoundStage(lam, s, memory=memory))
    return _run(stages, params)


def de_113(params: DEParams, variant: str = "displayed") -> DETrace:
    """Exact DE for ``[1,1,3]`` (any order of the groups)."""
    if sorted(params.pattern.entries) != [1, 1, 3]:
        raise ValueError(f"de_113 needs the pattern [1,1,3], got {params.pattern}")
    stages: list[_Stage] = []
    for s, lam in zip(params.pattern.entries, params.stage_loads()):
        stages.append(OneSmearStage(lam) if s == 1 else Smear113Stage(lam, variant=variant))
    return _run(stages, params)


Engine = Callable[[DEParams], DETrace]

_ENGINES: dict[str, tuple[Engine, str]] = {
    "de_2smear": (de_2smear, DE_EXACT),
    "de_all_ones": (de_all_ones, DE_EXACT),
    "de_113": (de_113, DE_EXACT),
    "de_lower_bound": (de_lower_bound, DE_BOUND),
}


def engine_by_name(name: str) -> Engine:
    try:
        return _ENGINES[name][0]
    except KeyError:
        raise ValueError(f"unknown engine {name!r}; choose from {sorted(_ENGINES)}") from None


def _method_of(engine: Engine) -> str:
    for fn, method in _ENGINES.values():
        if fn is engine:
            return method
    return DE_EXACT


def exact_engine_for(pattern) -> Engine:
    """The exact engine covering ``pattern``, if there is one."""
    pattern = SmearPattern.parse(pattern)
    if all(s == 1 for s in pattern):
        return de_all_ones
    if all(s == 2 for s in pattern):
        return de_2smear
    if sorted(pattern.entries) == [1, 1, 3]:
        return de_113
    raise ValueError(f"no exact DE for {pattern}; use the lower-bound engine")


@dataclass(frozen=True)
class FixedPoint:
    x_inf: float
    converged: bool
    iters: int
    trace: DETrace = field(repr=False)


def fixed_point(engine: Engine, params: DEParams) -> FixedPoint:
    """Drive ``engine`` until success, stall or ``max_iters``.

    ``converged`` means the last iterate fell below ``params.tol``, i.e. the
    decoder succeeds. A run that stalls or is still moving at the cap is
    reported as not converged.
    """
    trace = engine(params)
    x_inf = trace.final
    return FixedPoint(x_inf=x_inf, converged=x_inf < params.tol, iters=len(trace), trace=trace)


def de_threshold(
    engine: Engine,
    pattern,
    tol: float = 1e-4,
    fractions: Sequence[float] | None = None,
    bracket: tuple[float, float] | None = None,
    max_iters: int = 10_000,
    success_tol: float = 1e-8,
) -> ThresholdEstimate:
    """Bisect ``M/K`` for the boundary between DE success and failure."""
    pattern = SmearPattern.parse(pattern)
    lo, hi = bracket if bracket is not None else (1.0, float(pattern.d))

    def succeeds(ratio: float) -> bool:
        params = DEParams.from_ratio(pattern, ratio, fractions, max_iters=max_iters, tol=success_tol)
        return fixed_point(engine, params).converged

    ratio = bisect_ratio(succeeds, lo, hi, tol)
    return ThresholdEstimate(
        ratio,
        _method_of(engine),
        {"engine": getattr(engine, "__name__", repr(engine)), "tol": tol, "max_iters": max_iters, "success_tol": success_tol,
         "fractions": None if fractions is None else tuple(fractions)},
    )


def trace_to_csv(trace: DETrace) -> str:
    """CSV with columns ``t,x,q,d,s1,...,p``."""
    n_s = trace.s.shape[1] if trace.s.size else 0
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["t", "x", "q", "d"] + [f"s{i}" for i in range(1, n_s + 1)] + ["p"]
    writer.writerow(header)
    for t in range(len(trace)):
        row = [t + 1, repr(float(trace.x[t])), repr(float(trace.q[t]))]
        row.append(repr(float(trace.d[t])) if len(trace.d) else "")
        row.extend(repr(float(v)) for v in (trace.s[t] if n_s else []))
        row.append(repr(float(trace.p[t])) if len(trace.p) else "")
        writer.writerow(row)
    return buf.getvalue()
