"""Experiment harness: benchmark grids, CSV emission and the early-stopping study.

``bench_rows.csv`` holds one row per (instance, configuration) cell with the
columns of :class:`BenchRow`.  ``bench_summary.csv`` groups rows by every
configuration key except ``seed`` and reports means over the group; timed-out
rows are excluded from ``mean_time`` and counted in ``timeouts``.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
import statistics
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .bnb import BranchAndBound, StopRule, early_stop_threshold
from .datagen import GenConfig, make_instance
from .formulation import ENCODINGS, MODES, build_problem
from .graphs import shd
from .score import bic_lambda

log = logging.getLogger(__name__)

LAMBDA_RULES = ("bic", "logm")
INSTANCE_CLASSES = ("moral", "complete")


def base_lambda(rule: str, m: int, n: int) -> float:
    """``ln n`` for ``bic``, ``ln m`` for ``logm``."""
    if rule == "bic":
        return bic_lambda(n)
    if rule == "logm":
        return math.log(m)
    raise ValueError(f"lambda rule must be one of {LAMBDA_RULES}, got {rule!r}")


@dataclass
class BenchSpec:
    """Grid of experiment cells; every combination of the list fields is run."""

    m_list: tuple = (10,)
    n: int = 100
    d: float = 2.0
    seeds: tuple = tuple(range(10))
    instance_class: str = "moral"
    modes: tuple = ("persp",)
    encodings: tuple = ("cp_lazy",)
    lambda_mults: tuple = (1.0,)
    gammas: tuple = (2.0,)
    mus: tuple = (0.0,)
    lambda_rule: str = "bic"
    delta: str = "eig"
    early_stop: bool = False
    root_only: bool = False
    stop: StopRule = field(default_factory=lambda: StopRule(0.0, 1e-4))
    # StopRule.default_for(m) time limit when stop.time_limit is infinite
    default_time_limit: bool = True
    workers: int = 1

    def __post_init__(self):
        for name in ("m_list", "seeds", "modes", "encodings", "lambda_mults", "gammas", "mus"):
            val = tuple(getattr(self, name))
            if not val:
                raise ValueError(f"{name} must be non-empty")
            setattr(self, name, val)
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.instance_class not in INSTANCE_CLASSES:
            raise ValueError(f"instance_class must be one of {INSTANCE_CLASSES}")
        bad = [x for x in self.modes if x not in MODES] + [x for x in self.encodings if x not in ENCODINGS]
        if bad:
            raise ValueError(f"unknown mode/encoding {bad}")
        if self.lambda_rule not in LAMBDA_RULES:
            raise ValueError(f"lambda_rule must be one of {LAMBDA_RULES}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def cells(self):
        return itertools.product(self.m_list, self.seeds, self.modes, self.encodings,
                                 self.lambda_mults, self.gammas, self.mus)


@dataclass
class BenchRow:
    m: int
    n: int
    d: float
    seed: int
    instance_class: str
    mode: str
    encoding: str
    lambda_mult: float
    lambda_n: float
    gamma: float
    mu: float
    tau: float
    status: str
    ub: float = math.nan
    lb: float = math.nan
    gap: float = math.nan
    rgap: float = math.nan
    wall_seconds: float = math.nan
    nodes_explored: int = 0
    root_relaxation_value: float = math.nan
    shd: int = -1
    true_arcs: int = 0
    super_edges: int = 0
    error: str = ""
    # full solver report; kept in memory only, not written to CSV
    report: object = field(default=None, repr=False, compare=False, metadata={"csv": False})


ROW_FIELDS = [f.name for f in fields(BenchRow) if f.metadata.get("csv", True)]
GROUP_KEYS = ["m", "n", "d", "instance_class", "mode", "encoding", "lambda_mult", "gamma", "mu"]
TIMEOUTS = ("time_limit", "node_limit")


def _run_cell(spec: BenchSpec, cell) -> BenchRow:
    m, seed, mode, enc, t, gamma, mu = cell
    inst = make_instance(GenConfig(m=m, n=spec.n, d=spec.d, seed=seed))
    sup = getattr(inst, spec.instance_class)
    lam = t * base_lambda(spec.lambda_rule, m, spec.n)
    tau = early_stop_threshold(m, spec.n, len(sup.edges)) if spec.early_stop else 0.0
    row = BenchRow(m, spec.n, spec.d, seed, spec.instance_class, mode, enc, t, lam, gamma, mu,
                   tau, "error", true_arcs=len(inst.true_dag.arcs), super_edges=len(sup.edges))
    try:
        prob, _ = build_problem(inst.data, sup, lambda_n=lam, mu=mu, gamma=gamma,
                                delta=spec.delta, mode=mode, encoding=enc)
        stop = spec.stop
        if spec.early_stop:
            stop = replace(stop, abs_gap=tau)
        if spec.root_only:
            stop = replace(stop, node_limit=1)
        elif spec.default_time_limit and math.isinf(stop.time_limit):
            stop = replace(stop, time_limit=StopRule.default_for(m).time_limit)
        rep = BranchAndBound(prob, stop).run()
    except Exception as exc:  # a failed cell is recorded, never fatal
        log.exception("cell %s failed", cell)
        row.error = f"{type(exc).__name__}: {exc}"
        return row
    row.report = rep
    row.status = rep.status
    row.ub, row.lb, row.gap, row.rgap = rep.ub, rep.lb, rep.gap, rep.rgap
    row.wall_seconds = rep.wall_seconds
    row.nodes_explored = rep.nodes_explored
    row.root_relaxation_value = rep.root_relaxation_value
    row.shd = shd(inst.true_dag, rep.dag) if rep.arcs or math.isfinite(rep.ub) else -1
    return row


def _mean(xs):
    xs = [x for x in xs if x is not None and math.isfinite(x)]
    return statistics.fmean(xs) if xs else math.nan


def summarize(rows: list[BenchRow]) -> list[dict]:
    groups: dict[tuple, list[BenchRow]] = {}
    for r in rows:
        groups.setdefault(tuple(getattr(r, k) for k in GROUP_KEYS), []).append(r)
    out = []
    for key, rs in groups.items():
        ok = [r for r in rs if r.status != "error"]
        done = [r for r in ok if r.status not in TIMEOUTS]
        shds = [r.shd for r in ok if r.shd >= 0]
        out.append({
            **dict(zip(GROUP_KEYS, key)),
            "runs": len(rs),
            "errors": len(rs) - len(ok),
            "timeouts": len(ok) - len(done),
            "mean_ub": _mean(r.ub for r in ok),
            "mean_lb": _mean(r.lb for r in ok),
            "mean_gap": _mean(r.gap for r in ok),
            "mean_rgap": _mean(r.rgap for r in ok),
            "mean_time": _mean(r.wall_seconds for r in done),
            "mean_nodes": _mean(r.nodes_explored for r in ok),
            "mean_root": _mean(r.root_relaxation_value for r in ok),
            "mean_shd": _mean(shds),
            "std_shd": statistics.pstdev(shds) if shds else math.nan,
        })
    return out


def _write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        w.writerows(rows)


def run_bench(spec: BenchSpec, out_dir: str | Path | None = None) -> list[BenchRow]:
    """Run every cell; optionally write ``bench_rows.csv`` and ``bench_summary.csv``.

    Rows are appended to the rows file as cells finish, under a lock, and
    returned in grid order.
    """
    cells = list(spec.cells())
    lock = threading.Lock()
    fh = writer = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "bench_rows.csv", "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=ROW_FIELDS)
        writer.writeheader()

    def job(cell):
        row = _run_cell(spec, cell)
        log.info("cell m=%d seed=%d %s/%s t=%g: %s ub=%.6g shd=%d", row.m, row.seed, row.mode,
                 row.encoding, row.lambda_mult, row.status, row.ub, row.shd)
        if writer is not None:
            with lock:
                writer.writerow({k: getattr(row, k) for k in ROW_FIELDS})
                fh.flush()
        return row

    try:
        if spec.workers > 1:
            with ThreadPoolExecutor(spec.workers) as pool:
                rows = list(pool.map(job, cells))
        else:
            rows = [job(c) for c in cells]
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        summ = summarize(rows)
        header = GROUP_KEYS + [k for k in (summ[0] if summ else {}) if k not in GROUP_KEYS]
        _write_csv(Path(out_dir) / "bench_summary.csv", header, summ)
    return rows


@dataclass
class ArmSummary:
    tau_rule: str
    runs: int
    mean_shd: float
    std_shd: float
    mean_gap: float
    total_time: float
    mean_time: float
    timeouts: int
    rows: list = field(default_factory=list, repr=False)


@dataclass
class EarlyStopSummary:
    m: int
    n: int
    exact: ArmSummary
    early: ArmSummary


def _arm(name: str, rows: list[BenchRow]) -> ArmSummary:
    done = [r for r in rows if r.status not in TIMEOUTS + ("error",)]
    shds = [r.shd for r in rows if r.shd >= 0]
    return ArmSummary(name, len(rows), _mean(shds), statistics.pstdev(shds) if shds else math.nan,
                      _mean(r.gap for r in rows), sum(r.wall_seconds for r in rows),
                      _mean(r.wall_seconds for r in done), len(rows) - len(done), rows)


def compare_early_stop(m: int, n: int, seeds, *, d: float = 2.0, instance_class: str = "moral",
                       mode: str = "persp", time_limit: float | None = None,
                       repeats: int = 1) -> EarlyStopSummary:
    """Solve each instance with tau=0 and tau=s_m ln(m)/n at lambda_n = ln m.

    Wall time per run is the minimum over ``repeats`` identical solves, and
    the arm order alternates between seeds so slow drift hits both arms.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    tl = StopRule.default_for(m).time_limit if time_limit is None else time_limit
    arms = {False: [], True: []}
    for i, seed in enumerate(seeds):
        order = (False, True) if i % 2 == 0 else (True, False)
        for early in order:
            bs = BenchSpec(m_list=(m,), n=n, d=d, seeds=(seed,), instance_class=instance_class,
                           modes=(mode,), lambda_rule="logm", early_stop=early,
                           stop=StopRule(0.0, 0.0, time_limit=tl))
            runs = [_run_cell(bs, next(bs.cells())) for _ in range(repeats)]
            best = min(runs, key=lambda r: r.wall_seconds if math.isfinite(r.wall_seconds) else math.inf)
            arms[early].append(best)
    return EarlyStopSummary(m, n, _arm("tau=0", arms[False]), _arm("tau=s_m*ln(m)/n", arms[True]))
