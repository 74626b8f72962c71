"""Command-line entry point: ``dagbnb {gen,solve,oracle,eval,bench}``.

Exit codes: 0 success, 1 usage error, 2 solver failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__, kernels
from .bnb import BranchAndBound, SolveReport, StopRule, early_stop_threshold
from .datagen import GenConfig, make_instance, read_csv, write_instance
from .evalbench import LAMBDA_RULES, BenchSpec, base_lambda, run_bench, summarize
from .formulation import DELTA_RULES, ENCODINGS, MODES, FormulationError, build_problem
from .graphs import DirectedGraph, UndirectedGraph, read_digraph, read_undirected, shd
from .oracle import OracleError, exact_solve
from .relax import SolverFailure

log = logging.getLogger("dagbnb")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _number(kind, lo=None, strict=False):
    def conv(text):
        try:
            x = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a valid {kind.__name__}: {text!r}")
        if kind is float and math.isnan(x):
            raise argparse.ArgumentTypeError("NaN is not allowed")
        if lo is not None and (x <= lo if strict else x < lo):
            raise argparse.ArgumentTypeError(f"must be {'>' if strict else '>='} {lo}, got {text}")
        return x
    return conv


def _list(kind, lo=None, strict=False):
    one = _number(kind, lo, strict)

    def conv(text):
        items = [t for t in text.split(",") if t.strip()]
        if not items:
            raise argparse.ArgumentTypeError("empty list")
        return tuple(one(t.strip()) for t in items)
    return conv


def _names(allowed):
    def conv(text):
        items = tuple(t.strip() for t in text.split(",") if t.strip())
        bad = [t for t in items if t not in allowed]
        if not items or bad:
            raise argparse.ArgumentTypeError(f"choose from {', '.join(allowed)} (got {text!r})")
        return items
    return conv


nonneg = _number(float, 0.0)
positive = _number(float, 0.0, strict=True)


def _problem_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("problem")
    g.add_argument("--data", required=True, help="data CSV (n rows, m columns, no header)")
    g.add_argument("--super", dest="super_graph", help="super-structure edge file (default: complete)")
    g.add_argument("--lambda", dest="lam", type=nonneg, help="l0 weight; overrides --lambda-rule")
    g.add_argument("--lambda-rule", choices=LAMBDA_RULES, default="bic",
                   help="bic: ln n, logm: ln m (default bic)")
    g.add_argument("--mu", type=nonneg, default=0.0, help="ridge weight (default 0)")
    g.add_argument("--gamma", type=positive, default=2.0, help="big-M inflation factor (default 2)")
    g.add_argument("--big-m", type=positive, help="explicit big-M bound")
    g.add_argument("--delta", choices=DELTA_RULES, default="eig", help="diagonal split rule")


def _stop_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("search")
    g.add_argument("--mode", choices=MODES, default="persp")
    g.add_argument("--encoding", choices=ENCODINGS, default="cp_lazy")
    g.add_argument("--abs-gap", type=nonneg, default=0.0)
    g.add_argument("--rel-gap", type=nonneg, default=1e-4)
    g.add_argument("--time-limit", type=positive, help="seconds (default 50*m)")
    g.add_argument("--node-limit", type=_number(int, 0, strict=True))
    g.add_argument("--early-stop", action="store_true",
                   help="absolute gap s_m ln(m)/n with s_m the super-structure edge count")
    g.add_argument("--tau", type=nonneg, help="explicit early-stop gap (implies --early-stop)")
    g.add_argument("--branching", choices=("max_beta", "most_fractional"), default="max_beta")
    g.add_argument("--threads", type=_number(int, 1), default=1)
    g.add_argument("--deterministic", action="store_true", help="force one thread")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dagbnb", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version",
                   version=f"dagbnb {__version__} (kernels: {kernels.BACKEND})")
    p.add_argument("--log-level", default="WARNING",
                   choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic instance")
    g.add_argument("--nodes", type=_number(int, 2), required=True)
    g.add_argument("--samples", type=_number(int, 1), required=True)
    g.add_argument("--degree", type=positive, default=2.0)
    g.add_argument("--seed", type=_number(int, 0), default=0)
    g.add_argument("--weight-low", type=positive, default=0.1)
    g.add_argument("--weight-high", type=positive, default=1.0)
    g.add_argument("--noise-sd", type=nonneg, default=1.0)
    g.add_argument("--sign-flip", action="store_true")
    g.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("solve", help="branch-and-bound solve")
    _problem_flags(s)
    _stop_flags(s)
    s.add_argument("--true", dest="true_dag", help="true DAG file; adds SHD to the summary")
    s.add_argument("--out", help="report JSON path (default: JSON on stdout)")

    o = sub.add_parser("oracle", help="exact dynamic-programming solve (m <= 16)")
    _problem_flags(o)
    o.add_argument("--true", dest="true_dag")
    o.add_argument("--out")

    e = sub.add_parser("eval", help="structural Hamming distance between two DAGs")
    e.add_argument("--true", dest="true_dag", required=True)
    e.add_argument("--est", required=True, help="DAG file or a solve/oracle report JSON")

    b = sub.add_parser("bench", help="run a benchmark grid")
    b.add_argument("--nodes", type=_list(int, 2), default=(10,), help="comma list, e.g. 10,20")
    b.add_argument("--samples", type=_number(int, 1), default=100)
    b.add_argument("--degree", type=positive, default=2.0)
    b.add_argument("--seeds", type=_number(int, 1), default=10, help="seeds 0..N-1")
    b.add_argument("--class", dest="instance_class", choices=("moral", "complete"), default="moral")
    b.add_argument("--modes", type=_names(MODES), default=("persp",))
    b.add_argument("--encodings", type=_names(ENCODINGS), default=("cp_lazy",))
    b.add_argument("--lambda-mults", type=_list(float, 0.0), default=(1.0,))
    b.add_argument("--lambda-rule", choices=LAMBDA_RULES, default="bic")
    b.add_argument("--gammas", type=_list(float, 0.0, strict=True), default=(2.0,))
    b.add_argument("--mus", type=_list(float, 0.0), default=(0.0,))
    b.add_argument("--delta", choices=DELTA_RULES, default="eig")
    b.add_argument("--early-stop", action="store_true")
    b.add_argument("--root-only", action="store_true", help="solve the root relaxation only")
    b.add_argument("--rel-gap", type=nonneg, default=1e-4)
    b.add_argument("--time-limit", type=positive, help="seconds per cell (default 50*m)")
    b.add_argument("--threads", type=_number(int, 1), default=1, help="concurrent cells")
    b.add_argument("--deterministic", action="store_true", help="run cells one at a time")
    b.add_argument("--out", required=True, help="output directory")
    return p


# ---------------------------------------------------------------- helpers

def _read_data(path):
    try:
        return read_csv(path)
    except (OSError, ValueError) as exc:
        raise InputError(f"--data {path}: {exc}") from exc


def _read_graph(path, flag, directed):
    try:
        return read_digraph(path) if directed else read_undirected(path)
    except (OSError, ValueError) as exc:
        raise InputError(f"{flag} {path}: {exc}") from exc


def _problem(args):
    X = _read_data(args.data)
    n, m = X.shape
    sup = _read_graph(args.super_graph, "--super", False) if args.super_graph else UndirectedGraph.complete(m)
    if sup.m != m:
        raise UsageError(f"--super {args.super_graph}: graph has {sup.m} nodes, data has {m} columns")
    if args.lam is not None:
        lam = args.lam
    else:
        if args.lambda_rule == "bic" and n < 2:
            raise UsageError("--lambda-rule bic needs at least 2 samples")
        lam = base_lambda(args.lambda_rule, m, n)
    spec, _ = build_problem(X, sup, lambda_n=lam, mu=args.mu, gamma=args.gamma, big_m=args.big_m,
                            delta=args.delta, mode=getattr(args, "mode", "persp"),
                            encoding=getattr(args, "encoding", "cp_lazy"))
    return spec, sup


def _write_json(path, payload):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")
    except OSError as exc:
        raise InputError(f"--out {path}: {exc}") from exc


def _summary(rep: SolveReport, true_dag: DirectedGraph | None) -> str:
    parts = [f"status={rep.status}", f"ub={rep.ub:.6f}", f"lb={rep.lb:.6f}",
             f"gap={rep.gap:.3e}", f"rgap={rep.rgap:.3e}", f"nodes={rep.nodes_explored}",
             f"time={rep.wall_seconds:.2f}s", f"arcs={len(rep.arcs)}"]
    if true_dag is not None:
        parts.append(f"shd={shd(true_dag, rep.dag)}")
    return " ".join(parts)


def _emit(args, rep: SolveReport):
    true_dag = _read_graph(args.true_dag, "--true", True) if args.true_dag else None
    if true_dag is not None and true_dag.m != rep.config.get("m"):
        raise UsageError(f"--true {args.true_dag}: DAG has {true_dag.m} nodes")
    if args.out:
        _write_json(args.out, rep.to_dict())
        print(_summary(rep, true_dag))
    else:
        print(rep.to_json(indent=2))
        print(_summary(rep, true_dag), file=sys.stderr)


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    try:
        cfg = GenConfig(m=args.nodes, n=args.samples, d=args.degree, weight_low=args.weight_low,
                        weight_high=args.weight_high, noise_sd=args.noise_sd, seed=args.seed,
                        sign_flip=args.sign_flip)
    except ValueError as exc:
        raise UsageError(f"gen: {exc} (check --nodes/--degree/--weight-low/--weight-high)") from exc
    inst = make_instance(cfg)
    try:
        paths = write_instance(inst, args.out)
    except OSError as exc:
        raise InputError(f"--out {args.out}: {exc}") from exc
    print(f"wrote {', '.join(p.name for p in paths)} to {args.out} "
          f"(m={cfg.m} n={cfg.n} true arcs={len(inst.true_dag)} moral edges={len(inst.moral)})")
    return EXIT_OK


def cmd_solve(args) -> int:
    spec, sup = _problem(args)
    abs_gap = args.abs_gap
    if args.tau is not None or args.early_stop:
        tau = args.tau if args.tau is not None else early_stop_threshold(spec.m, spec.gram_data.n, len(sup))
        abs_gap = max(abs_gap, tau)
        log.info("early stop at absolute gap %.6g", tau)
    stop = StopRule(abs_gap, args.rel_gap,
                    args.time_limit if args.time_limit else StopRule.default_for(spec.m).time_limit,
                    args.node_limit if args.node_limit else math.inf)
    threads = 1 if args.deterministic else args.threads
    rep = BranchAndBound(spec, stop, threads=threads, branching=args.branching).run()
    _emit(args, rep)
    return EXIT_SOLVER if rep.status == "solver_failure" else EXIT_OK


def cmd_oracle(args) -> int:
    spec, _ = _problem(args)
    res = exact_solve(spec)
    arcs = sorted([j, k, float(b)] for (j, k), b in res.beta.items())
    rep = SolveReport("exact", res.score, res.score, 0.0, 0.0, 0, 0, 0, 0.0, arcs,
                      {**spec.echo(), "subsets_evaluated": res.subsets_evaluated},
                      m_binding=res.m_binding)
    _emit(args, rep)
    return EXIT_OK


def _read_estimate(path):
    if str(path).endswith(".json"):
        try:
            d = json.loads(Path(path).read_text())
            return DirectedGraph(int(d["config"]["m"]), frozenset((int(j), int(k)) for j, k, _ in d["arcs"]))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise InputError(f"--est {path}: {exc}") from exc
    return _read_graph(path, "--est", True)


def cmd_eval(args) -> int:
    truth = _read_graph(args.true_dag, "--true", True)
    est = _read_estimate(args.est)
    if truth.m != est.m:
        raise UsageError(f"--est {args.est}: {est.m} nodes, --true has {truth.m}")
    print(f"SHD {shd(truth, est)}")
    return EXIT_OK


def cmd_bench(args) -> int:
    stop = StopRule(0.0, args.rel_gap, args.time_limit or math.inf)
    spec = BenchSpec(m_list=args.nodes, n=args.samples, d=args.degree, seeds=tuple(range(args.seeds)),
                     instance_class=args.instance_class, modes=args.modes, encodings=args.encodings,
                     lambda_mults=args.lambda_mults, gammas=args.gammas, mus=args.mus,
                     lambda_rule=args.lambda_rule, delta=args.delta, early_stop=args.early_stop,
                     root_only=args.root_only, stop=stop,
                     workers=1 if args.deterministic else args.threads)
    for m in spec.m_list:
        if not 0 < args.degree < m:
            raise UsageError(f"--degree {args.degree} must lie in (0, {m}) for --nodes {m}")
    try:
        rows = run_bench(spec, args.out)
    except OSError as exc:
        raise InputError(f"--out {args.out}: {exc}") from exc
    for s in summarize(rows):
        print(f"m={s['m']} {s['mode']}/{s['encoding']} t={s['lambda_mult']} runs={s['runs']} "
              f"timeouts={s['timeouts']} errors={s['errors']} rgap={s['mean_rgap']:.3e} "
              f"time={s['mean_time']:.2f}s nodes={s['mean_nodes']:.1f} root={s['mean_root']:.4f} "
              f"shd={s['mean_shd']:.2f}")
    print(f"wrote bench_rows.csv and bench_summary.csv to {args.out}")
    return EXIT_SOLVER if any(r.status == "error" for r in rows) else EXIT_OK


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "oracle": cmd_oracle, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SolverFailure, FormulationError, OracleError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
