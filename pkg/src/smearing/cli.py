"""Command-line entry point: ``smearing <subcommand> [flags]``.

Every output begins with ``#`` lines carrying the tool version, the merged
configuration as JSON and the master seed, followed by CSV. Nothing in the
output depends on the clock, so identical configurations give identical bytes.

Exit status: 0 on success, 1 for usage errors (bad flags, bad pattern syntax,
unreadable config), 2 for failures while running.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .density_evolution import (
    DEParams,
    de_lower_bound,
    de_threshold,
    exact_engine_for,
    fixed_point,
    trace_to_csv,
)
from .ensemble import Shared, SmearPattern, Staged, format_graph, read_graph, sample_graph
from .peeling import (
    CSV_HEADER,
    empirical_threshold,
    layout_for_ratio,
    mc_recovery,
    peel,
    trial_seed,
)
from .thresholds import DE_BOUND, DE_EXACT, MONTE_CARLO
from .wavelet_ffast import WAVELET_CSV_HEADER, WaveletProblem, bench, run_instance

TABLE1_REFERENCE = (
    ("1,1,1,1,1,1", 1.570),
    ("1,1,1,1,2", 1.533),
    ("1,1,1,3", 1.489),
    ("1,1,4", 1.518),
    ("1,1,2,2", 1.533),
    ("1,2,3", 1.542),
    ("2,2,2", 1.547),
)

_DEFAULTS = {
    "pattern": None,
    "ratio": None,
    "grid": None,
    "K": 100_000,
    "M": None,
    "sizes": None,
    "layout": "shared",
    "trials": 20,
    "seed": 0,
    "tol": None,
    "max_iters": 10_000,
    "method": "de",
    "factors": None,
    "out": None,
    "jobs": None,
    "graph": None,
    "one_per_block": False,
    "sparse": False,
    "ratio_factor": 1.6,
    "kmin_exp": 10,
    "kmax_exp": 16,
    "memory": 1,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _pattern(text) -> SmearPattern:
    try:
        return SmearPattern.parse(text)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad pattern {text!r}: {exc}") from None


def _int_list(text, what: str) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"bad {what} {text!r}; expected comma-separated integers") from None


def parse_grid(text: str) -> list[float]:
    """``lo:hi:step`` with both ends included (up to rounding of the step)."""
    try:
        lo, hi, step = (float(v) for v in str(text).split(":"))
    except ValueError:
        raise UsageError(f"bad grid {text!r}; expected lo:hi:step") from None
    if not step > 0 or hi < lo:
        raise UsageError(f"bad grid {text!r}; need step > 0 and hi >= lo")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 12) for i in range(count)]


def _add_common(p: argparse.ArgumentParser, *names: str) -> None:
    options = {
        "pattern": dict(help="smear pattern, e.g. 1,2,2"),
        "ratio": dict(type=float, help="bins per ball M/K"),
        "grid": dict(help="ratio grid lo:hi:step"),
        "K": dict(type=int, help="number of balls / active coefficients"),
        "M": dict(type=int, help="bin count of a shared layout"),
        "sizes": dict(help="per-group bin counts of a staged layout"),
        "layout": dict(choices=["shared", "staged"], help="bin layout for ratio-driven runs"),
        "trials": dict(type=int, help="Monte Carlo trials (or wavelet instances)"),
        "seed": dict(type=int, help="master seed"),
        "tol": dict(type=float, help="tolerance (threshold bisection, or DE success level for 'de')"),
        "max_iters": dict(type=int, help="DE iteration cap"),
        "method": dict(choices=["de", "de-bound", "mc"], help="threshold method"),
        "factors": dict(help="wavelet factors f1,f2,f3 (f1 even, pairwise coprime)"),
        "jobs": dict(type=int, help="parallel workers (default: all cores)"),
        "memory": dict(type=int, choices=[1, 2], help="memory of the lower-bound recursion"),
    }
    for name in names:
        flag = "--" + name.replace("_", "-")
        p.add_argument(flag, dest=name, default=None, **options[name])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smearing", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"smearing {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_, *common):
        p = sub.add_parser(name, help=help_)
        _add_common(p, *common)
        p.add_argument("--config", default=None, help="JSON file with defaults; flags win")
        p.add_argument("--out", dest="out", default=None, help="output path (default stdout)")
        return p

    add("sample", "sample a graph and write it in text form",
        "pattern", "K", "M", "sizes", "ratio", "layout", "seed")
    p = add("peel", "peel a graph file")
    p.add_argument("--graph", dest="graph", default=None, help="graph file from 'sample'")
    add("mc", "Monte Carlo recovery over a ratio grid",
        "pattern", "ratio", "grid", "K", "trials", "seed", "layout", "jobs")
    add("threshold", "threshold by DE or Monte Carlo",
        "pattern", "method", "tol", "K", "trials", "seed", "layout", "max_iters", "jobs", "memory")
    add("de", "density-evolution trace", "pattern", "ratio", "method", "tol", "max_iters", "memory")
    p = add("wavelet", "end-to-end sparse Haar recovery", "factors", "K", "seed", "trials")
    p.add_argument("--one-per-block", dest="one_per_block", action="store_const", const=True, default=None,
                   help="draw at most one active coefficient per Haar block")
    p.add_argument("--sparse", dest="sparse", action="store_const", const=True, default=None,
                   help="compute folds from the coefficients instead of a full FFT")
    add("table1", "empirical thresholds for the seven reference patterns",
        "K", "trials", "seed", "tol", "layout", "jobs")
    add("fig4", "bound and Monte Carlo recovery curves for [1,1,L]",
        "grid", "K", "trials", "seed", "layout", "max_iters", "jobs")
    p = add("bench", "decoder wall time against K", "seed")
    p.add_argument("--ratio-factor", dest="ratio_factor", type=float, default=None,
                   help="sum of factors divided by K")
    p.add_argument("--kmin-exp", dest="kmin_exp", type=int, default=None)
    p.add_argument("--kmax-exp", dest="kmax_exp", type=int, default=None)
    return parser


def merge_config(args: argparse.Namespace) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = dict(_DEFAULTS)
    if args.command in ("table1", "fig4"):
        cfg["layout"] = "staged"
        cfg["trials"] = 50
    if args.command == "fig4":
        cfg["grid"] = "1.2:1.8:0.05"
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(loaded) - set(_DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in ("command", "config"):
            continue
        if value is not None:
            cfg[key] = value
    cfg["command"] = args.command
    if cfg["jobs"] is None:
        cfg["jobs"] = os.cpu_count() or 1
    return cfg


def _header(cfg: dict) -> str:
    shown = {k: v for k, v in sorted(cfg.items()) if k not in ("out", "jobs")}
    return (
        f"# smearing {__version__}\n"
        f"# config: {json.dumps(shown, sort_keys=True)}\n"
        f"# seed: {cfg['seed']}\n"
    )


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def _require(cfg: dict, *keys: str) -> None:
    for key in keys:
        if cfg.get(key) is None:
            raise UsageError(f"--{key.replace('_', '-')} is required for '{cfg['command']}'")


def sweep(points: Sequence, work: Callable, jobs: int = 1, label: str = "grid point") -> list:
    """Run ``work(index, point)`` for every point; results keep grid order.

    A failure is re-raised as :class:`RuntimeError` naming the point.
    """
    if not points:
        raise UsageError("empty grid")

    def task(i):
        try:
            return work(i, points[i])
        except Exception as exc:  # noqa: BLE001 - surfaced with context
            raise RuntimeError(f"{label} {points[i]!r} failed: {exc}") from exc

    if jobs <= 1 or len(points) == 1:
        return [task(i) for i in range(len(points))]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(task, range(len(points))))


def _ratios(cfg: dict) -> list[float]:
    if cfg.get("grid"):
        return parse_grid(cfg["grid"])
    _require(cfg, "ratio")
    return [float(cfg["ratio"])]


# ----------------------------------------------------------------------------
# subcommands


def cmd_sample(cfg: dict) -> str:
    _require(cfg, "pattern")
    pattern = _pattern(cfg["pattern"])
    K = int(cfg["K"])
    if cfg.get("sizes"):
        layout = Staged(_int_list(cfg["sizes"], "sizes"))
    elif cfg.get("M"):
        layout = Shared(int(cfg["M"]))
    else:
        _require(cfg, "ratio")
        layout = layout_for_ratio(pattern, float(cfg["ratio"]), K, cfg["layout"])
    return format_graph(sample_graph(K, layout, pattern, int(cfg["seed"])))


def cmd_peel(cfg: dict) -> str:
    _require(cfg, "graph")
    try:
        graph = read_graph(cfg["graph"])
    except OSError as exc:
        raise UsageError(f"cannot read graph {cfg['graph']}: {exc}") from None
    res = peel(graph)
    return _csv(("K", "recovered", "residual_fraction", "rounds", "success"),
                [(graph.K, res.recovered_count, res.residual_fraction, res.rounds, int(res.success))])


def cmd_mc(cfg: dict) -> str:
    _require(cfg, "pattern")
    pattern = _pattern(cfg["pattern"])
    ratios = _ratios(cfg)
    K, trials, seed = int(cfg["K"]), int(cfg["trials"]), int(cfg["seed"])

    def work(i, r):
        return mc_recovery(pattern, r, K, trials, seed=trial_seed(seed, i), layout=cfg["layout"], jobs=1)

    results = sweep(ratios, work, int(cfg["jobs"]), label="ratio")
    return _csv(CSV_HEADER, [res.row() for res in results])


def _de_threshold_for(pattern: SmearPattern, cfg: dict, bound: bool):
    tol = float(cfg["tol"]) if cfg.get("tol") is not None else 1e-4
    if bound:
        mem = int(cfg.get("memory") or 1)

        def engine(params):
            return de_lower_bound(params, memory=mem)

        engine.__name__ = "de_lower_bound"
        est = de_threshold(engine, pattern, tol=tol, max_iters=int(cfg["max_iters"]))
        return est.ratio, DE_BOUND, tol
    try:
        engine = exact_engine_for(pattern)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    est = de_threshold(engine, pattern, tol=tol, max_iters=int(cfg["max_iters"]))
    return est.ratio, DE_EXACT, tol


def cmd_threshold(cfg: dict) -> str:
    _require(cfg, "pattern")
    pattern = _pattern(cfg["pattern"])
    method = cfg["method"]
    if method == "mc":
        tol = float(cfg["tol"]) if cfg.get("tol") is not None else 0.005
        est = empirical_threshold(pattern, int(cfg["K"]), int(cfg["trials"]), tol=tol,
                                  seed=int(cfg["seed"]), layout=cfg["layout"], jobs=int(cfg["jobs"]))
        row = (str(pattern), MONTE_CARLO, est.ratio, tol)
    else:
        ratio, tag, tol = _de_threshold_for(pattern, cfg, bound=(method == "de-bound"))
        row = (str(pattern), tag, ratio, tol)
    return _csv(("pattern", "method", "ratio", "tol"), [row])


def cmd_de(cfg: dict) -> str:
    _require(cfg, "pattern", "ratio")
    pattern = _pattern(cfg["pattern"])
    kw = {"max_iters": int(cfg["max_iters"])}
    if cfg.get("tol") is not None:
        kw["tol"] = float(cfg["tol"])
    try:
        params = DEParams.from_ratio(pattern, float(cfg["ratio"]), **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if cfg["method"] == "de-bound":
        trace = de_lower_bound(params, memory=int(cfg.get("memory") or 1))
    else:
        try:
            trace = exact_engine_for(pattern)(params)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return trace_to_csv(trace)


def cmd_wavelet(cfg: dict) -> str:
    _require(cfg, "factors")
    factors = _int_list(cfg["factors"], "factors")
    K = int(cfg["K"])
    trials, seed = int(cfg["trials"]), int(cfg["seed"])
    try:
        WaveletProblem.random(factors, 1, seed=0)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = []
    for i in range(trials):
        prob = WaveletProblem.random(factors, K, seed=trial_seed(seed, i), one_per_block=bool(cfg["one_per_block"]))
        res, ver, secs = run_instance(prob, sparse=bool(cfg["sparse"]))
        found = dict(zip(res.alpha_hat.indices.tolist(), res.alpha_hat.values))
        recovered = sum(1 for p, v in zip(prob.alpha.indices.tolist(), prob.alpha.values)
                        if p in found and abs(found[p] - v) < 1e-9)
        success = res.complete and ver.exact
        rows.append((prob.n, *factors, K, 2 * sum(factors), recovered, int(success),
                     ver.max_err, f"{secs:.6f}"))
    return _csv(WAVELET_CSV_HEADER, rows)


def cmd_table1(cfg: dict) -> str:
    K, trials, seed = int(cfg["K"]), int(cfg["trials"]), int(cfg["seed"])
    tol = float(cfg["tol"]) if cfg.get("tol") is not None else 0.005
    patterns = [p for p, _ in TABLE1_REFERENCE]

    def work(i, text):
        est = empirical_threshold(text, K, trials, tol=tol, seed=seed, layout=cfg["layout"], jobs=1)
        return est.ratio

    ratios = sweep(patterns, work, int(cfg["jobs"]), label="pattern")
    rows = [(str(SmearPattern.parse(p)), ref, r, r - ref, MONTE_CARLO, K, trials, seed)
            for (p, ref), r in zip(TABLE1_REFERENCE, ratios)]
    return _csv(("pattern", "reference", "ratio", "diff", "method", "K", "trials", "seed"), rows)


def fig4_rows(grid: Sequence[float], K: int, trials: int, seed: int, layout: str = "staged",
              max_iters: int = 10_000, jobs: int = 1, Ls: Sequence[int] = (2, 3, 4)) -> list[tuple]:
    """Rows ``(pattern, curve, ratio, recovery, std_err)`` for ``[1,1,L]``.

    ``recovery`` is the probability that a random ball is removed when peeling
    stops: ``1 - x_inf`` for the bound curve, ``1 - mean_residual`` for Monte
    Carlo.
    """
    rows = []
    for L in Ls:
        pattern = SmearPattern((1, 1, L))
        for r in grid:
            fp = fixed_point(de_lower_bound, DEParams.from_ratio(pattern, r, max_iters=max_iters))
            rows.append((str(pattern), "bound", r, 1.0 - fp.x_inf, 0.0))

        def work(i, r, pattern=pattern, L=L):
            return mc_recovery(pattern, r, K, trials, seed=trial_seed(seed, 100 * L + i), layout=layout, jobs=1)

        for r, res in zip(grid, sweep(list(grid), work, jobs, label=f"[1,1,{L}] ratio")):
            rows.append((str(pattern), "mc", r, 1.0 - res.mean_residual, res.std_err))
    return rows


def cmd_fig4(cfg: dict) -> str:
    rows = fig4_rows(parse_grid(cfg["grid"]), int(cfg["K"]), int(cfg["trials"]), int(cfg["seed"]),
                     layout=cfg["layout"], max_iters=int(cfg["max_iters"]), jobs=int(cfg["jobs"]))
    return _csv(("pattern", "curve", "ratio", "recovery", "std_err"), rows)


def cmd_bench(cfg: dict) -> str:
    Ks = [2**e for e in range(int(cfg["kmin_exp"]), int(cfg["kmax_exp"]) + 1)]
    if not Ks:
        raise UsageError("empty K range")
    rows = bench(Ks, ratio=float(cfg["ratio_factor"]), seed=int(cfg["seed"]))
    # wall times vary run to run; they are the only non-deterministic column
    return _csv(("K", "n", "f1", "f2", "f3", "seconds", "c", "c_ratio", "success"),
                [(r["K"], r["n"], *r["factors"], f"{r['seconds']:.6f}", f"{r['c']:.6e}",
                  f"{r['c_ratio']:.4f}", int(r["success"])) for r in rows])


COMMANDS = {
    "sample": cmd_sample,
    "peel": cmd_peel,
    "mc": cmd_mc,
    "threshold": cmd_threshold,
    "de": cmd_de,
    "wavelet": cmd_wavelet,
    "table1": cmd_table1,
    "fig4": cmd_fig4,
    "bench": cmd_bench,
}


def run(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        cfg = merge_config(args)
        body = COMMANDS[cfg["command"]](cfg)
    except UsageError as exc:
        print(f"smearing: usage error: {exc}", file=stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - reported as runtime failure
        print(f"smearing: error: {exc}", file=stderr)
        return 2
    text = _header(cfg) + body
    if cfg.get("out"):
        try:
            Path(cfg["out"]).write_text(text)
        except OSError as exc:
            print(f"smearing: error: cannot write {cfg['out']}: {exc}", file=stderr)
            return 2
    else:
        stdout.write(text)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
