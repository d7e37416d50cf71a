"""Edge lists, covariate tables and campaign configuration files.

Edge list
    One directed edge ``src dst`` per line, whitespace separated. Blank lines
    and ``#`` comments are skipped. A comment of the form ``# nodes: N``
    declares the node count. Self-loops and duplicate edges are rejected.

Covariate table (CSV with a header row)
    Node mode: ``node,<name>[:absdiff|:equal],...``, one row per node. The
    suffix selects the pairwise transform (default ``absdiff``).
    Dyad mode: ``src,dst,<name>,...``, one row per ordered pair.

Node labels are integers. Internally nodes are re-indexed ``0..n-1`` in
ascending label order; the labels are carried alongside for reporting.
"""
from __future__ import annotations

import csv
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import TRANSFORMS, DirectedGraph, DyadCovariates, NodeCovariates
from .simulation import REGIMES, SimDesign

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_NODES_RE = re.compile(r"#\s*nodes\s*:\s*(\d+)\s*$")


class InputError(ValueError):
    """Malformed input file; the message names the file and line."""


@dataclass(frozen=True)
class EdgeList:
    """Raw parsed edges with their source line numbers."""

    edges: tuple[tuple[int, int], ...]
    lines: tuple[int, ...]
    declared_n: int | None = None


def parse_edge_list(text: str, source: str = "<edges>") -> EdgeList:
    edges, lines = [], []
    declared = None
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _NODES_RE.match(line)
            if m:
                declared = int(m.group(1))
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InputError(f"{source}:{lineno}: expected 'src dst', got {raw!r}")
        try:
            src, dst = int(parts[0]), int(parts[1])
        except ValueError:
            raise InputError(
                f"{source}:{lineno}: node ids must be integers, got {raw!r}") from None
        if src == dst:
            raise InputError(f"{source}:{lineno}: self-loop {src} -> {dst} is not allowed")
        if (src, dst) in seen:
            first = seen[src, dst]
            raise InputError(
                f"{source}:{lineno}: duplicate edge {src} -> {dst} (first on line {first})")
        seen[src, dst] = lineno
        edges.append((src, dst))
        lines.append(lineno)
    return EdgeList(tuple(edges), tuple(lines), declared)


def read_edge_list(path) -> EdgeList:
    path = Path(path)
    return parse_edge_list(path.read_text(), str(path))


def default_labels(edges: EdgeList, zero_based: bool = False, n: int | None = None) -> np.ndarray:
    """Contiguous labels ``1..n`` (or ``0..n-1``); ``n`` inferred when not given."""
    base = 0 if zero_based else 1
    if n is None:
        n = edges.declared_n
    if n is None:
        top = max((max(e) for e in edges.edges), default=base - 1)
        n = top - base + 1
    return np.arange(base, base + n)


def build_graph(edges: EdgeList, labels, source: str = "<edges>") -> DirectedGraph:
    """Map labelled edges onto the internal index given by ``labels``."""
    labels = np.asarray(labels)
    index = {int(lab): k for k, lab in enumerate(labels)}
    n = len(labels)
    if n < 2:
        raise InputError(f"{source}: need at least two nodes, got {n}")
    adj = np.zeros((n, n), dtype=np.int8)
    for (src, dst), lineno in zip(edges.edges, edges.lines):
        for node in (src, dst):
            if node not in index:
                raise InputError(f"{source}:{lineno}: node {node} is not among the known nodes")
        adj[index[src], index[dst]] = 1
    return DirectedGraph(adj)


def format_edge_list(graph: DirectedGraph, labels=None) -> str:
    labels = np.arange(1, graph.n + 1) if labels is None else np.asarray(labels)
    out = [f"# nodes: {graph.n}"]
    out += [f"{labels[i]} {labels[j]}" for i, j in graph.edges()]
    return "\n".join(out) + "\n"


def write_edge_list(path, graph: DirectedGraph, labels=None):
    Path(path).write_text(format_edge_list(graph, labels))


def _parse_float(value: str, source: str, lineno: int) -> float:
    try:
        x = float(value)
    except ValueError:
        raise InputError(f"{source}:{lineno}: non-numeric value {value!r}") from None
    if not math.isfinite(x):
        raise InputError(f"{source}:{lineno}: non-finite value {value!r}")
    return x


def _parse_label(value: str, source: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise InputError(f"{source}:{lineno}: node id must be an integer, got {value!r}") from None


def _rows(text: str, source: str):
    reader = csv.reader(text.splitlines())
    rows = [(k, r) for k, r in enumerate(reader, start=1) if r and not r[0].startswith("#")]
    if not rows:
        raise InputError(f"{source}: empty covariate file")
    return rows[0][1], rows[1:]


def parse_node_covariates(text: str, source: str = "<covariates>"):
    """Return ``(labels, NodeCovariates)`` sorted by label."""
    header, rows = _rows(text, source)
    if len(header) < 2:
        raise InputError(f"{source}:1: need a node column and at least one covariate")
    names, transforms = [], []
    for col in header[1:]:
        name, _, rule = col.strip().partition(":")
        rule = rule or "absdiff"
        if rule not in TRANSFORMS:
            raise InputError(f"{source}:1: unknown transform {rule!r} for column {name!r}")
        names.append(name)
        transforms.append(rule)
    values = {}
    for lineno, row in rows:
        if len(row) != len(header):
            raise InputError(f"{source}:{lineno}: expected {len(header)} fields, got {len(row)}")
        label = _parse_label(row[0], source, lineno)
        if label in values:
            raise InputError(f"{source}:{lineno}: node {label} listed twice")
        values[label] = [_parse_float(v, source, lineno) for v in row[1:]]
    labels = np.array(sorted(values))
    x = np.array([values[lab] for lab in labels], dtype=float).reshape(len(labels), len(names))
    return labels, NodeCovariates(x, tuple(transforms), tuple(names))


def parse_dyad_covariates(text: str, labels, source: str = "<covariates>"):
    """Return ``(names, DyadCovariates)``; every ordered pair must be present."""
    header, rows = _rows(text, source)
    if len(header) < 3:
        raise InputError(f"{source}:1: need src, dst and at least one covariate column")
    names = tuple(h.strip() for h in header[2:])
    labels = np.asarray(labels)
    index = {int(lab): k for k, lab in enumerate(labels)}
    n, p = len(labels), len(names)
    z = np.zeros((n, n, p))
    filled = np.eye(n, dtype=bool)
    for lineno, row in rows:
        if len(row) != len(header):
            raise InputError(f"{source}:{lineno}: expected {len(header)} fields, got {len(row)}")
        src, dst = (_parse_label(v, source, lineno) for v in row[:2])
        if src not in index or dst not in index:
            raise InputError(f"{source}:{lineno}: unknown node in pair ({src}, {dst})")
        i, j = index[src], index[dst]
        if i == j:
            raise InputError(f"{source}:{lineno}: self pair ({src}, {dst})")
        if filled[i, j]:
            raise InputError(f"{source}:{lineno}: pair ({src}, {dst}) listed twice")
        z[i, j] = [_parse_float(v, source, lineno) for v in row[2:]]
        filled[i, j] = True
    if not filled.all():
        i, j = np.argwhere(~filled)[0]
        missing = int((~filled).sum())
        raise InputError(
            f"{source}: {missing} ordered pairs missing, e.g. ({labels[i]}, {labels[j]})")
    return names, DyadCovariates(z)


def format_node_covariates(labels, nodes: NodeCovariates) -> str:
    header = ["node"] + [f"{nm}:{t}" for nm, t in zip(nodes.names, nodes.transform)]
    lines = [",".join(header)]
    for lab, row in zip(labels, nodes.x):
        lines.append(",".join([str(lab)] + [repr(float(v)) for v in row]))
    return "\n".join(lines) + "\n"


def format_dyad_covariates(labels, Z: DyadCovariates, names=None) -> str:
    names = names or tuple(f"z{k + 1}" for k in range(Z.p))
    lines = [",".join(["src", "dst", *names])]
    for i in range(Z.n):
        for j in range(Z.n):
            if i != j:
                vals = [repr(float(v)) for v in Z.z[i, j]]
                lines.append(",".join([str(labels[i]), str(labels[j]), *vals]))
    return "\n".join(lines) + "\n"


def prune_degenerate(graph: DirectedGraph, labels, keep=None):
    """Drop nodes with zero out- or in-degree, repeating until none remain.

    Returns the kept internal indices and the induced subgraph.
    """
    keep = np.arange(graph.n) if keep is None else np.asarray(keep)
    adj = graph.adj
    while len(keep):
        sub = adj[np.ix_(keep, keep)]
        ok = (sub.sum(axis=1) > 0) & (sub.sum(axis=0) > 0)
        if ok.all():
            break
        keep = keep[ok]
    if len(keep) < 2:
        raise InputError("fewer than two nodes remain after pruning")
    return keep, DirectedGraph(adj[np.ix_(keep, keep)])


# Campaign configuration (TOML). All keys live in a [campaign] table.
CONFIG_KEYS = {
    "n": (int, list), "regimes": (list,), "reps": (int,), "seed": (int,), "p": (int,),
    "gamma_star": (list,), "level": (float, int), "pairs": (list,), "workers": (int,),
}


def parse_config(text: str, source: str = "<config>", overrides: dict | None = None) -> dict:
    """Validate a campaign config; return ``designs`` and ``workers``.

    Example::

        [campaign]
        n = [100, 200]
        regimes = ["zero", "loglog", "sqrtlog", "log"]
        reps = 1000
        seed = 20240101
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"{source}: {exc}") from None
    if set(doc) != {"campaign"}:
        raise InputError(f"{source}: expected a single [campaign] table, got {sorted(doc)}")
    camp = dict(doc["campaign"])
    camp.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for key, value in camp.items():
        if key not in CONFIG_KEYS:
            raise InputError(f"{source}: unknown key {key!r}")
        if isinstance(value, bool) or not isinstance(value, CONFIG_KEYS[key]):
            raise InputError(f"{source}: key {key!r} has the wrong type")
    for key in ("n", "regimes", "reps", "seed"):
        if key not in camp:
            raise InputError(f"{source}: missing required key {key!r}")
    ns = camp["n"] if isinstance(camp["n"], list) else [camp["n"]]
    for r in camp["regimes"]:
        if r not in REGIMES:
            raise InputError(f"{source}: invalid regime {r!r}; expected one of {REGIMES}")
    if camp["reps"] < 1:
        raise InputError(f"{source}: reps must be at least 1")
    return {
        "designs": designs_from(camp, ns, source),
        "workers": camp.get("workers", 1),
    }


def designs_from(camp: dict, ns, source: str = "<config>"):
    extra = {}
    if "p" in camp:
        extra["p"] = camp["p"]
    if "gamma_star" in camp:
        extra["gamma_star"] = tuple(camp["gamma_star"])
    if "pairs" in camp:
        extra["pairs"] = tuple(tuple(pr) for pr in camp["pairs"])
    designs = []
    for n in ns:
        for regime in camp["regimes"]:
            try:
                designs.append(SimDesign(
                    n=n, L_regime=regime,
                    reps=camp["reps"], seed=camp["seed"],
                    level=float(camp.get("level", 0.95)),
                    **extra))
            except (ValueError, TypeError) as exc:
                raise InputError(f"{source}: {exc}") from None
    return designs


def read_config(path, overrides: dict | None = None) -> dict:
    path = Path(path)
    return parse_config(path.read_text(), str(path), overrides)
