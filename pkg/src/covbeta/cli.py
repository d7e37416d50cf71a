"""Command-line interface: ``covbeta fit | test | simulate | qq``.

Exit codes
    0  success (fit converged)
    1  input or I/O error
    2  the MLE does not exist (degree screen or divergence)
    3  the fit stopped without converging
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import __version__
from .estimation import Existence, FitConfig, check_existence, degenerate_nodes, fit
from .fisher import blocks_from_probs
from .inference import gamma_inference, homogeneity_stats, two_sided_pvalue
from .io import (InputError, build_graph, default_labels, parse_dyad_covariates,
                 parse_node_covariates, prune_degenerate, read_config, read_edge_list)
from .model import DyadCovariates, ModelParams, prob_matrix
from .simulation import QQ_COLUMNS, design_dict, rows_to_csv, run_campaign

EXIT_OK, EXIT_IO, EXIT_NONEXIST, EXIT_NOCONV = 0, 1, 2, 3

log = logging.getLogger("covbeta")


def _err(msg: str):
    print(f"covbeta: {msg}", file=sys.stderr)


def _load_inputs(args):
    """Graph, dyad covariates, labels and covariate names from the fit arguments."""
    edges = read_edge_list(args.edges)
    names: tuple[str, ...] = ()
    if args.covariates and args.covariate_mode == "node":
        text = Path(args.covariates).read_text()
        labels, nodes = parse_node_covariates(text, args.covariates)
        if args.n is not None and args.n != len(labels):
            raise InputError(f"--n {args.n} disagrees with {len(labels)} nodes in covariates")
        if args.normalize:
            nodes = nodes.normalized()
        graph = build_graph(edges, labels, args.edges)
        Z = nodes.to_dyad()
        names = nodes.names
    else:
        labels = default_labels(edges, args.zero_based, args.n)
        graph = build_graph(edges, labels, args.edges)
        if args.covariates:
            text = Path(args.covariates).read_text()
            names, Z = parse_dyad_covariates(text, labels, args.covariates)
        else:
            Z = DyadCovariates.empty(graph.n)
    if args.prune:
        keep, graph = prune_degenerate(graph, labels)
        labels = labels[keep]
        Z = DyadCovariates(Z.z[np.ix_(keep, keep)])
    return graph, Z, np.asarray(labels), tuple(names)


def _fit_report(labels, names, result, report, blocks) -> dict:
    n = result.params.n
    se = report.se_theta
    return {
        "version": __version__,
        "n": n,
        "p": result.params.p,
        "labels": [int(x) for x in labels],
        "covariates": list(names),
        "converged": result.converged,
        "outer_iters": result.outer_iters,
        "inner_iters": result.inner_iters,
        "loglik": result.loglik,
        "score_norm": result.final_score_norm,
        "alpha": result.params.alpha.tolist(),
        "beta": result.params.beta.tolist(),
        "se_alpha": se[:n].tolist(),
        "se_beta": se[n:].tolist() + [None],
        "v_diag": blocks.v_diag.tolist(),
        "gamma": report.gamma_hat.tolist(),
        "gamma_bc": report.gamma_bc.tolist(),
        "se_gamma": report.se_gamma.tolist(),
        "bias_B": report.bias_B.tolist(),
        "p_gamma": np.atleast_1d(report.p_gamma).tolist(),
        "p_gamma_naive": np.atleast_1d(report.p_gamma_naive).tolist(),
        "ci_level": report.ci_level,
        "ci_gamma": report.ci_gamma.tolist(),
        "info_mode": report.info_mode,
    }


def _print_tables(rep: dict, out):
    print(f"nodes: {rep['n']}  covariates: {rep['p']}  loglik: {rep['loglik']:.4f}  "
          f"converged: {rep['converged']}", file=out)
    print(f"{'node':>6} {'alpha':>10} {'se':>8} {'beta':>10} {'se':>8}", file=out)
    for k, lab in enumerate(rep["labels"]):
        sb = rep["se_beta"][k]
        sb = f"{sb:8.3f}" if sb is not None else f"{'-':>8}"
        print(f"{lab:>6} {rep['alpha'][k]:10.3f} {rep['se_alpha'][k]:8.3f} "
              f"{rep['beta'][k]:10.3f} {sb}", file=out)
    if rep["p"]:
        print(file=out)
        print(f"{'covariate':>14} {'estimate':>10} {'corrected':>10} {'se':>8} {'p-value':>10}",
              file=out)
        for k, name in enumerate(rep["covariates"] or [f"z{k + 1}" for k in range(rep["p"])]):
            print(f"{name:>14} {rep['gamma'][k]:10.3f} {rep['gamma_bc'][k]:10.3f} "
                  f"{rep['se_gamma'][k]:8.3f} {rep['p_gamma'][k]:10.3g}", file=out)


def cmd_fit(args) -> int:
    try:
        graph, Z, labels, names = _load_inputs(args)
    except (OSError, InputError, ValueError) as exc:
        _err(str(exc))
        return EXIT_IO

    if check_existence(graph) is Existence.NONEXISTENT:
        bad = degenerate_nodes(graph)
        parts = [f"{kind}: {[int(labels[i]) for i in idx]}" for kind, idx in bad.items() if idx]
        msg = "MLE does not exist; degenerate degrees at nodes " + "; ".join(parts)
        if not args.force:
            _err(msg + " (use --prune to drop them or --force to attempt a fit)")
            return EXIT_NONEXIST
        log.warning(msg)

    cfg = FitConfig(exact_inverse=True if args.exact_inverse else None)
    result = fit(graph, Z, cfg)
    if not result.exists:
        _err(f"MLE does not exist: {result.message}")
        return EXIT_NONEXIST

    P = prob_matrix(result.params, Z)
    blocks = blocks_from_probs(P, Z)
    mode = "exact" if args.exact_inverse else None
    report = gamma_inference(result, Z, blocks, args.level, mode)
    rep = _fit_report(labels, names, result, report, blocks)
    _print_tables(rep, sys.stdout)
    if args.json:
        Path(args.json).write_text(json.dumps(rep, indent=2) + "\n")
    if not result.converged:
        _err(f"fit did not converge: {result.message}")
        return EXIT_NOCONV
    return EXIT_OK


def _parse_pair(text: str) -> tuple[int, int]:
    try:
        a, b = text.split(",")
        return int(a), int(b)
    except ValueError:
        raise InputError(f"pair must look like 'i,j', got {text!r}") from None


def cmd_test(args) -> int:
    try:
        rep = json.loads(Path(args.report).read_text())
        n = rep["n"]
        params = ModelParams(np.array(rep["alpha"]), np.array(rep["beta"]),
                             np.array(rep["gamma"]))
        v_diag = np.array(rep["v_diag"])
        index = {lab: k for k, lab in enumerate(rep["labels"])}
        pairs = [_parse_pair(s) for s in args.pair]
    except (OSError, KeyError, ValueError, InputError) as exc:
        _err(f"cannot read fitted report: {exc}")
        return EXIT_IO

    blocks = _DiagOnly(v_diag, n)
    print("kind,i,j,statistic,p_value")
    for i, j in pairs:
        try:
            if i not in index or j not in index:
                raise InputError(f"unknown node label in pair ({i}, {j})")
            stat = homogeneity_stats(params, blocks, args.kind, index[i], index[j])
        except (InputError, ValueError, IndexError) as exc:
            _err(f"invalid pair ({i}, {j}): {exc}")
            return EXIT_IO
        print(f"{args.kind},{i},{j},{stat!r},{two_sided_pvalue(stat)!r}")
    return EXIT_OK


class _DiagOnly:
    """Minimal stand-in exposing ``n`` and ``v_diag`` from a saved report."""

    def __init__(self, v_diag, n):
        self.v_diag = v_diag
        self.n = n


def cmd_simulate(args) -> int:
    try:
        cfg = read_config(args.config, {"reps": args.reps, "seed": args.seed,
                                        "level": args.level})
    except (OSError, InputError) as exc:
        _err(str(exc))
        return EXIT_IO
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    workers = args.workers or cfg["workers"]
    rows, qq = [], _io.StringIO()
    w = csv.writer(qq, lineterminator="\n")
    w.writerow(("n", "regime", *QQ_COLUMNS))
    for design in cfg["designs"]:
        log.info("running n=%d regime=%s reps=%d", design.n, design.L_regime, design.reps)
        table = run_campaign(design, workers=workers)
        rows.extend(table.rows)
        for rep, name, value in table.qq:
            w.writerow((design.n, design.L_regime, rep, name, repr(float(value))))
    (out / "table.csv").write_text(rows_to_csv(rows))
    (out / "qq_raw.csv").write_text(qq.getvalue())
    manifest = {
        "version": __version__,
        "config": str(args.config),
        "designs": [design_dict(d) for d in cfg["designs"]],
        "outputs": ["table.csv", "qq_raw.csv"],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(rows_to_csv(rows), end="")
    return EXIT_OK


def qq_points(values) -> tuple[np.ndarray, np.ndarray]:
    """Normal plotting positions ``Phi^{-1}((k - 0.5) / m)`` against sorted values."""
    values = np.sort(np.asarray(values, dtype=float))
    m = len(values)
    if m == 0:
        raise ValueError("no statistics to plot")
    theo = norm.ppf((np.arange(1, m + 1) - 0.5) / m)
    return theo, values


def cmd_qq(args) -> int:
    try:
        with open(args.raw, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        _err(str(exc))
        return EXIT_IO
    groups: dict[tuple, list[float]] = {}
    for lineno, row in enumerate(rows, start=2):
        if args.statistic and row["statistic"] != args.statistic:
            continue
        key = (row.get("n", ""), row.get("regime", ""), row["statistic"])
        try:
            groups.setdefault(key, []).append(float(row["value"]))
        except (TypeError, ValueError):
            _err(f"{args.raw}:{lineno}: bad value {row['value']!r}")
            return EXIT_IO
    if not groups:
        _err("no raw statistics found; the campaign is empty or the filter matched nothing")
        return EXIT_IO
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("n", "regime", "statistic", "theoretical", "empirical"))
    for key in sorted(groups):
        theo, emp = qq_points(groups[key])
        for t, e in zip(theo, emp):
            w.writerow((*key, repr(float(t)), repr(float(e))))
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covbeta",
        description="Directed degree-heterogeneity model with dyad covariates.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the model to an edge list")
    p.add_argument("edges", help="edge list file")
    p.add_argument("--covariates", help="covariate CSV")
    p.add_argument("--covariate-mode", choices=("node", "dyad"), default="node")
    p.add_argument("--zero-based", action="store_true", help="edge list node ids start at 0")
    p.add_argument("--n", type=int, help="declared node count")
    p.add_argument("--force", action="store_true",
                   help="attempt a fit even when the degree screen fails")
    p.add_argument("--prune", action="store_true",
                   help="drop nodes with zero in- or out-degree before fitting")
    p.add_argument("--level", type=float, default=0.95, help="confidence level")
    p.add_argument("--normalize", action="store_true",
                   help="center and scale continuous node covariates")
    p.add_argument("--exact-inverse", action="store_true",
                   help="always use the dense solve for the profile information")
    p.add_argument("--json", help="write the fit report as JSON to this path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", help="homogeneity tests from a saved fit report")
    p.add_argument("report", help="JSON report written by 'fit --json'")
    p.add_argument("--kind", choices=("xi", "zeta", "eta"), required=True,
                   help="xi: alpha_i = alpha_j; zeta: alpha_i = beta_j; eta: beta_i = beta_j")
    p.add_argument("--pair", action="append", required=True, metavar="I,J",
                   help="node labels; repeatable")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("simulate", help="run a Monte Carlo campaign from a TOML config")
    p.add_argument("config")
    p.add_argument("--out", default="campaign", help="output directory")
    p.add_argument("--reps", type=int, help="override the replicate count")
    p.add_argument("--seed", type=int, help="override the seed")
    p.add_argument("--level", type=float, help="override the confidence level")
    p.add_argument("--workers", type=int, help="worker processes")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("qq", help="normal QQ coordinates from raw campaign statistics")
    p.add_argument("raw", help="qq_raw.csv written by 'simulate'")
    p.add_argument("--statistic", help="only this statistic, e.g. xi_50_51")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_qq)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    warnings.simplefilter("default")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
