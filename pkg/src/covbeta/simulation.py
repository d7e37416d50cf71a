"""Monte Carlo harness for coverage, interval length and MLE nonexistence.

Each replicate draws Beta(2, 2) node attributes, builds absolute-difference
dyad covariates, samples a graph at the linear-ramp truth, fits, and records
interval coverage for ``alpha_i - alpha_j`` and for ``gamma`` with and
without bias correction.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .estimation import Existence, FitConfig, check_existence, fit
from .fisher import blocks_from_probs
from .inference import gamma_inference, homogeneity_stats, normal_quantile
from .model import DirectedGraph, DyadCovariates, ModelParams, NodeCovariates, prob_matrix

REGIMES = ("zero", "loglog", "sqrtlog", "log")

TABLE_COLUMNS = ("n", "regime", "L", "target", "estimator", "coverage", "mean_length",
                 "mean_abs_bias", "nonexistence", "nonexist_screen", "nonexist_diverged",
                 "n_exist", "reps", "coverage_uncond")
QQ_COLUMNS = ("replicate", "statistic", "value")


def regime_value(regime: str, n: int) -> float:
    """Heterogeneity range ``L`` for a named regime."""
    if regime == "zero":
        return 0.0
    if regime == "loglog":
        return math.log(math.log(n))
    if regime == "sqrtlog":
        return math.sqrt(math.log(n))
    if regime == "log":
        return math.log(n)
    raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")


def default_pairs(n: int) -> tuple[tuple[int, int], ...]:
    return ((1, 2), (n // 2, n // 2 + 1), (n - 1, n))


@dataclass(frozen=True)
class SimDesign:
    """One simulation cell. ``pairs`` use 1-based node labels."""

    n: int
    L_regime: str = "zero"
    p: int = 2
    gamma_star: tuple[float, ...] = (1.0, 1.5)
    reps: int = 1000
    seed: int = 0
    pairs: tuple[tuple[int, int], ...] | None = None
    level: float = 0.95

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("n must be at least 3")
        if self.L_regime not in REGIMES:
            raise ValueError(f"unknown regime {self.L_regime!r}; expected one of {REGIMES}")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        gamma_star = tuple(float(g) for g in self.gamma_star)
        if len(gamma_star) != self.p:
            raise ValueError(f"gamma_star has {len(gamma_star)} entries but p = {self.p}")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must be in (0, 1)")
        pairs = default_pairs(self.n) if self.pairs is None else self.pairs
        pairs = tuple((int(i), int(j)) for i, j in pairs)
        for i, j in pairs:
            if not (1 <= i <= self.n and 1 <= j <= self.n) or i == j:
                raise ValueError(f"pair ({i}, {j}) is invalid for n = {self.n}")
        object.__setattr__(self, "gamma_star", gamma_star)
        object.__setattr__(self, "pairs", pairs)

    @property
    def L(self) -> float:
        return regime_value(self.L_regime, self.n)


def make_truth(design: SimDesign) -> ModelParams:
    """Linear ramp ``alpha*_{i+1} = (n - 1 - i) L / (n - 1)``, ``beta* = alpha*``."""
    n = design.n
    alpha = (n - 1 - np.arange(n)) * design.L / (n - 1)
    beta = alpha.copy()
    beta[-1] = 0.0
    return ModelParams(alpha, beta, np.array(design.gamma_star))


def draw_attributes(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """``n x p`` i.i.d. Beta(2, 2) draws (numpy's gamma-ratio sampler)."""
    return rng.beta(2.0, 2.0, size=(n, p))


def make_covariates(design: SimDesign, rng: np.random.Generator):
    """Beta(2, 2) node attributes and their absolute-difference dyad covariates."""
    nodes = NodeCovariates(draw_attributes(design.n, design.p, rng), "absdiff")
    return nodes, nodes.to_dyad()


def sample_graph(params: ModelParams, Z: DyadCovariates, rng: np.random.Generator) -> DirectedGraph:
    """Independent Bernoulli edges at the model probabilities."""
    P = prob_matrix(params, Z)
    adj = (rng.random(P.shape) < P).astype(np.int8)
    np.fill_diagonal(adj, 0)
    return DirectedGraph(adj)


def replicate_rng(seed: int, rep: int) -> np.random.Generator:
    """Counter-based (Philox) stream for one replicate."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(rep,))))


@dataclass
class ReplicateRecord:
    rep: int
    screen_nonexistent: bool
    diverged: bool
    pair_stats: dict = field(default_factory=dict)
    gamma_hat: np.ndarray | None = None
    gamma_bc: np.ndarray | None = None
    se_gamma: np.ndarray | None = None

    @property
    def exists(self) -> bool:
        return not (self.screen_nonexistent or self.diverged)


def run_replicate(design: SimDesign, rep: int, cfg: FitConfig | None = None) -> ReplicateRecord:
    """Simulate and fit one replicate of ``design``."""
    rng = replicate_rng(design.seed, rep)
    truth = make_truth(design)
    _, Z = make_covariates(design, rng)
    graph = sample_graph(truth, Z, rng)

    if check_existence(graph) is Existence.NONEXISTENT:
        return ReplicateRecord(rep, True, False)
    result = fit(graph, Z, cfg)
    if not (result.exists and result.converged):
        return ReplicateRecord(rep, False, True)

    est = result.params
    blocks = blocks_from_probs(prob_matrix(est, Z), Z)
    n = design.n
    stats = {}
    for i1, j1 in design.pairs:
        i, j = i1 - 1, j1 - 1
        entry = {"xi": homogeneity_stats(est, blocks, "xi", i, j, truth)}
        entry["sd"] = math.sqrt(1.0 / blocks.v_diag[i] + 1.0 / blocks.v_diag[j])
        entry["err"] = (est.alpha[i] - est.alpha[j]) - (truth.alpha[i] - truth.alpha[j])
        if j < n - 1:
            entry["zeta"] = homogeneity_stats(est, blocks, "zeta", i, j, truth)
            if i < n - 1:
                entry["eta"] = homogeneity_stats(est, blocks, "eta", i, j, truth)
        stats[(i1, j1)] = entry
    report = gamma_inference(result, Z, blocks, design.level)
    return ReplicateRecord(rep, False, False, stats, report.gamma_hat, report.gamma_bc,
                           report.se_gamma)


def _run_chunk(args):
    design, reps, cfg = args
    return [run_replicate(design, r, cfg) for r in reps]


@dataclass
class SimTable:
    """Tabulated campaign output plus raw standardized statistics."""

    design: SimDesign
    rows: list[dict]
    qq: list[tuple[int, str, float]]
    records: list[ReplicateRecord] = field(repr=False, default_factory=list)

    def row(self, target: str, estimator: str = "mle") -> dict:
        for r in self.rows:
            if r["target"] == target and r["estimator"] == estimator:
                return r
        raise KeyError((target, estimator))

    def statistic(self, name: str) -> np.ndarray:
        return np.array([v for _, s, v in self.qq if s == name])

    def table_csv(self, header: bool = True) -> str:
        return rows_to_csv(self.rows, header)

    def qq_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(QQ_COLUMNS)
        for rep, name, value in self.qq:
            w.writerow((rep, name, repr(float(value))))
        return buf.getvalue()


def _fmt(value):
    if isinstance(value, float):
        return "NA" if math.isnan(value) else f"{value:.6f}"
    return value


def rows_to_csv(rows: Iterable[dict], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(TABLE_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in TABLE_COLUMNS])
    return buf.getvalue()


def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else math.nan


def tabulate(design: SimDesign, records: list[ReplicateRecord]) -> SimTable:
    """Aggregate replicate records; coverage is conditional on existence."""
    reps = len(records)
    exist = [r for r in records if r.exists]
    m = len(exist)
    screen = sum(r.screen_nonexistent for r in records)
    diverged = sum(r.diverged for r in records)
    base = {
        "n": design.n, "regime": design.L_regime, "L": design.L,
        "nonexistence": 100.0 * (reps - m) / reps,
        "nonexist_screen": 100.0 * screen / reps,
        "nonexist_diverged": 100.0 * diverged / reps,
        "n_exist": m, "reps": reps,
    }
    z = normal_quantile(design.level)
    rows = []
    for pair in design.pairs:
        errs = np.array([r.pair_stats[pair]["err"] for r in exist])
        sds = np.array([r.pair_stats[pair]["sd"] for r in exist])
        covered = np.abs(errs) <= z * sds
        rows.append({**base, "target": f"alpha_{pair[0]}-alpha_{pair[1]}", "estimator": "mle",
                     "coverage": 100.0 * _mean(covered), "mean_length": _mean(2 * z * sds),
                     "mean_abs_bias": _mean(np.abs(errs)),
                     "coverage_uncond": 100.0 * covered.sum() / reps})
    gamma_star = np.array(design.gamma_star)
    for k in range(design.p):
        se = np.array([r.se_gamma[k] for r in exist])
        for name, attr in (("mle", "gamma_hat"), ("bc", "gamma_bc")):
            err = np.array([getattr(r, attr)[k] for r in exist]) - gamma_star[k]
            covered = np.abs(err) <= z * se
            rows.append({**base, "target": f"gamma_{k + 1}", "estimator": name,
                         "coverage": 100.0 * _mean(covered), "mean_length": _mean(2 * z * se),
                         "mean_abs_bias": _mean(np.abs(err)),
                         "coverage_uncond": 100.0 * covered.sum() / reps})
    qq = []
    for r in exist:
        for (i1, j1), entry in r.pair_stats.items():
            for stat in ("xi", "zeta", "eta"):
                if stat in entry:
                    qq.append((r.rep, f"{stat}_{i1}_{j1}", entry[stat]))
    return SimTable(design, rows, qq, records)


def run_campaign(design: SimDesign, cfg: FitConfig | None = None, workers: int = 1,
                 chunk: int = 25) -> SimTable:
    """Run every replicate of ``design`` and tabulate.

    Replicates draw from their own counter-based stream keyed by the
    replicate index, so the output does not depend on ``workers``.
    """
    indices = list(range(design.reps))
    if workers <= 1:
        records = [run_replicate(design, r, cfg) for r in indices]
    else:
        chunks = [(design, indices[s:s + chunk], cfg) for s in range(0, len(indices), chunk)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = [rec for part in pool.map(_run_chunk, chunks) for rec in part]
    records.sort(key=lambda r: r.rep)
    return tabulate(design, records)


def design_dict(design: SimDesign) -> dict:
    d = asdict(design)
    d["pairs"] = [list(p) for p in design.pairs]
    d["gamma_star"] = list(design.gamma_star)
    d["L"] = design.L
    return d
