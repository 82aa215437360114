"""Random graphs from the smearing ensemble.

A ball (left node) is thrown as ``g`` groups. Group ``i`` picks a uniform
start bin ``b_i`` and occupies the ``s_i`` consecutive bins
``b_i, b_i + 1, ..., b_i + s_i - 1`` modulo the size of its bin space.

Two bin layouts are supported:

* :class:`Shared` -- every group draws from the same ``M`` bins (the
  balls-and-bins game).
* :class:`Staged` -- group ``i`` owns a private space of ``f_i`` bins, as
  produced by subsampling at coprime strides. Bins are numbered globally, the
  space of group ``i`` starting at ``f_0 + ... + f_{i-1}``.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "SmearPattern",
    "Shared",
    "Staged",
    "BinLayout",
    "SmearGraph",
    "sample_graph",
    "from_stream_starts",
    "draw_starts",
    "degree_histogram",
    "write_graph",
    "read_graph",
    "format_graph",
    "parse_graph",
]


@dataclass(frozen=True)
class SmearPattern:
    """Smear lengths ``s_1..s_g`` of the groups of every ball."""

    entries: tuple[int, ...]

    def __post_init__(self):
        entries = tuple(int(s) for s in self.entries)
        if not entries:
            raise ValueError("a smear pattern needs at least one group")
        if any(s < 1 for s in entries):
            raise ValueError(f"smear lengths must be >= 1, got {entries}")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def parse(cls, text: str | Sequence[int] | SmearPattern) -> SmearPattern:
        if isinstance(text, SmearPattern):
            return text
        if isinstance(text, str):
            parts = [p.strip() for p in text.replace("[", "").replace("]", "").split(",")]
            try:
                return cls(tuple(int(p) for p in parts if p))
            except ValueError:
                raise ValueError(f"cannot parse smear pattern {text!r}") from None
        return cls(tuple(text))

    @property
    def g(self) -> int:
        return len(self.entries)

    @property
    def d(self) -> int:
        return sum(self.entries)

    @property
    def max_smear(self) -> int:
        return max(self.entries)

    def __str__(self) -> str:
        return ",".join(str(s) for s in self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class Shared:
    """All groups share one space of ``M`` bins."""

    M: int

    def space_sizes(self, g: int) -> tuple[int, ...]:
        return (self.M,) * g

    def space_offsets(self, g: int) -> tuple[int, ...]:
        return (0,) * g

    @property
    def n_bins(self) -> int:
        return self.M

    def __str__(self) -> str:
        return str(self.M)


@dataclass(frozen=True)
class Staged:
    """Group ``i`` owns ``sizes[i]`` private bins."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(f) for f in self.sizes))

    @classmethod
    def equal(cls, M: int, g: int) -> Staged:
        """Split roughly ``M`` bins evenly over ``g`` groups."""
        return cls((max(1, round(M / g)),) * g)

    def space_sizes(self, g: int) -> tuple[int, ...]:
        return self.sizes

    def space_offsets(self, g: int) -> tuple[int, ...]:
        return tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.sizes)[:-1]]))

    @property
    def n_bins(self) -> int:
        return sum(self.sizes)

    def __str__(self) -> str:
        body = ",".join(str(f) for f in self.sizes)
        return body + "," if len(self.sizes) == 1 else body


BinLayout = Shared | Staged


def _check_compatible(layout: BinLayout, pattern: SmearPattern) -> None:
    if isinstance(layout, Shared):
        if layout.M < 1:
            raise ValueError("M must be positive")
        if layout.M < pattern.max_smear:
            raise ValueError(
                f"shared layout with M={layout.M} cannot hold a smear of length {pattern.max_smear}"
            )
    elif isinstance(layout, Staged):
        if len(layout.sizes) != pattern.g:
            raise ValueError(
                f"staged layout has {len(layout.sizes)} spaces but the pattern has {pattern.g} groups"
            )
        for f, s in zip(layout.sizes, pattern.entries):
            if f < s:
                raise ValueError(f"stage of size {f} cannot hold a smear of length {s}")
    else:
        raise TypeError(f"unknown layout {layout!r}")


@dataclass(frozen=True, eq=False)
class SmearGraph:
    """An immutable realisation of ``G(K, layout, pattern)``.

    Attributes
    ----------
    starts : ndarray, shape (K, g)
        Start bin of every group, local to the group's bin space.
    adjacency : ndarray, shape (K, d)
        Global bin ids of every ball, multiplicity kept.
    bin_ptr, bin_balls : ndarray
        CSR transpose of ``adjacency``: the balls incident to bin ``b`` are
        ``bin_balls[bin_ptr[b]:bin_ptr[b + 1]]`` (one entry per edge).
    """

    K: int
    layout: BinLayout
    pattern: SmearPattern
    starts: np.ndarray
    adjacency: np.ndarray
    bin_ptr: np.ndarray = field(repr=False)
    bin_balls: np.ndarray = field(repr=False)
    seed: int | None = None

    @property
    def n_bins(self) -> int:
        return self.layout.n_bins

    def bins_of(self, ball: int) -> list[int]:
        return self.adjacency[ball].tolist()

    def balls_in(self, b: int) -> list[int]:
        return self.bin_balls[self.bin_ptr[b] : self.bin_ptr[b + 1]].tolist()

    def __eq__(self, other):
        if not isinstance(other, SmearGraph):
            return NotImplemented
        return (
            self.K == other.K
            and self.layout == other.layout
            and self.pattern == other.pattern
            and np.array_equal(self.starts, other.starts)
        )


def _build(K: int, layout: BinLayout, pattern: SmearPattern, starts: np.ndarray, seed) -> SmearGraph:
    g = pattern.g
    sizes = np.asarray(layout.space_sizes(g), dtype=np.int64)
    offsets = np.asarray(layout.space_offsets(g), dtype=np.int64)
    cols = []
    for i, s in enumerate(pattern.entries):
        for o in range(s):
            cols.append(offsets[i] + (starts[:, i] + o) % sizes[i])
    adjacency = np.stack(cols, axis=1).astype(np.int64)
    flat = adjacency.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=layout.n_bins)
    bin_ptr = np.zeros(layout.n_bins + 1, dtype=np.int64)
    np.cumsum(counts, out=bin_ptr[1:])
    bin_balls = (order // pattern.d).astype(np.int64)
    for arr in (starts, adjacency, bin_ptr, bin_balls):
        arr.setflags(write=False)
    return SmearGraph(K, layout, pattern, starts, adjacency, bin_ptr, bin_balls, seed)


def draw_starts(K: int, sizes: Sequence[int], seed: int) -> np.ndarray:
    """Uniform start bins for ``K`` balls, one column per group.

    The draw for ``(ball, group)`` is output ``ball * g + group`` of a Philox
    counter-based stream keyed by ``seed``, so it depends only on the seed and
    the ball index. Any block of balls can be regenerated on its own, and a
    graph with fewer balls is a prefix of one with more.
    """
    g = len(sizes)
    key = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    raw = np.random.Philox(key=key).random_raw(K * g).reshape(K, g)
    unit = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return np.floor(unit * np.asarray(sizes, dtype=np.float64)).astype(np.int64)


def sample_graph(K: int, layout: BinLayout, pattern: SmearPattern | str | Sequence[int], seed: int) -> SmearGraph:
    """Draw a graph from the smearing ensemble.

    Identical ``(K, layout, pattern, seed)`` always give the identical graph.
    """
    pattern = SmearPattern.parse(pattern)
    if K < 1:
        raise ValueError("K must be at least 1")
    _check_compatible(layout, pattern)
    starts = draw_starts(K, layout.space_sizes(pattern.g), seed)
    return _build(K, layout, pattern, starts, int(seed))


def from_stream_starts(
    K: int,
    layout: BinLayout,
    pattern: SmearPattern | str | Sequence[int],
    starts,
    seed: int | None = None,
) -> SmearGraph:
    """Build a graph with explicitly given start bins (one row per ball)."""
    pattern = SmearPattern.parse(pattern)
    if K < 1:
        raise ValueError("K must be at least 1")
    _check_compatible(layout, pattern)
    starts = np.array(starts, dtype=np.int64).reshape(-1, pattern.g) if len(starts) else None
    if starts is None or starts.shape != (K, pattern.g):
        raise ValueError(f"expected {K} start rows of length {pattern.g}")
    sizes = np.asarray(layout.space_sizes(pattern.g))
    bad = (starts < 0) | (starts >= sizes)
    if bad.any():
        k, i = map(int, np.argwhere(bad)[0])
        raise ValueError(f"start bin {starts[k, i]} of ball {k}, group {i} is outside [0, {sizes[i]})")
    return _build(K, layout, pattern, starts.copy(), seed)


def _stream_keys(graph: SmearGraph) -> list[tuple[int, int, int]]:
    keys = []
    shared = isinstance(graph.layout, Shared)
    for i, s in enumerate(graph.pattern.entries):
        space = 0 if shared else i
        keys.extend((space, s, int(b)) for b in graph.starts[:, i])
    return keys


def degree_histogram(graph: SmearGraph, include_empty: bool = False) -> dict[int, int]:
    """Histogram of stream occupancies: ``{balls in stream: number of streams}``.

    A stream is the set of group throws landing on the same bin set, i.e. the
    same bin space, smear length and start bin. Only occupied streams are
    counted unless ``include_empty`` is set, in which case every possible
    stream of every (space, smear length) class present contributes.
    """
    occupancy = Counter(_stream_keys(graph))
    hist = Counter(occupancy.values())
    if include_empty:
        sizes = graph.layout.space_sizes(graph.pattern.g)
        classes = {}
        for i, s in enumerate(graph.pattern.entries):
            space = 0 if isinstance(graph.layout, Shared) else i
            classes[(space, s)] = sizes[i]
        empty = sum(classes.values()) - len(occupancy)
        if empty:
            hist[0] = empty
    return dict(sorted(hist.items()))


# Text format
# -----------
# line 1:   K LAYOUT PATTERN SEED
#           LAYOUT is M for a shared layout, or f1,f2,...,fg for a staged one
#           (a single staged space is written with a trailing comma, "f1,").
#           SEED is "-" for graphs built from explicit starts.
# then K lines, one per ball, holding its g start bins separated by spaces.


def format_graph(graph: SmearGraph) -> str:
    seed = "-" if graph.seed is None else str(graph.seed)
    lines = [f"{graph.K} {graph.layout} {graph.pattern} {seed}"]
    lines.extend(" ".join(str(int(b)) for b in row) for row in graph.starts)
    return "\n".join(lines) + "\n"


def parse_graph(text: str) -> SmearGraph:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not rows or len(rows[0]) != 4:
        raise ValueError("graph header must read 'K LAYOUT PATTERN SEED'")
    K_text, layout_text, pattern_text, seed_text = rows[0]
    K = int(K_text)
    layout: BinLayout
    if "," in layout_text:
        layout = Staged(tuple(int(v) for v in layout_text.split(",") if v))
    else:
        layout = Shared(int(layout_text))
    pattern = SmearPattern.parse(pattern_text)
    seed = None if seed_text == "-" else int(seed_text)
    starts = [[int(v) for v in r] for r in rows[1:]]
    if len(starts) != K:
        raise ValueError(f"header announces {K} balls but {len(starts)} rows follow")
    return from_stream_starts(K, layout, pattern, starts, seed=seed)


def write_graph(graph: SmearGraph, path: str | Path) -> None:
    Path(path).write_text(format_graph(graph))


def read_graph(path: str | Path) -> SmearGraph:
    return parse_graph(Path(path).read_text())
