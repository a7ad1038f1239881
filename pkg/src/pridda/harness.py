"""Turns an ExperimentConfig into engine runs and plot-ready CSV files."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import metrics
from .config import ExperimentConfig
from .engine import Reference, RunConfig, RunTrace, mean_dual_recursion_check, run
from .errors import ConfigError, PriddaError
from .privacy import PrivacyBudget, calibrate
from .problems import (
    ProblemInstance,
    Regularizer,
    generate_synthetic,
    load_libsvm,
    partition_even,
)
from .reference import ReferenceSolution
from .schedules import Schedule
from .topology import GossipSampler, build_complete_graph

TRACE_COLUMNS = (
    "t",
    "subopt_ergodic_mean_node",
    "consensus_err",
    "eps_hat",
    "thm2_envelope",
    "lemma4_envelope",
    "subopt_y_ergodic",
    "consensus_err_ergodic",
    "dist_sq_ergodic",
    "objective_ergodic_mean_node",
)
SWEEP_COLUMNS = ("axis", "value", "seed", "final_subopt", "final_consensus_err", "final_eps_hat", "sigma", "iota")
PAIR_COLUMNS = ("axis", "value_a", "value_b", "pairs", "a_lower_fraction", "mean_difference")


class RunFailure(PriddaError):
    """An engine run raised; carries the seed for the error message."""


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return "%.17g" % float(v)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_keyvalue(path: Path, items: Dict[str, object]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for k, v in items.items():
            fh.write(f"{k}={fmt(v)}\n")


def read_keyvalue(path: Path) -> Dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno} is not key=value")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


# ---- building blocks -------------------------------------------------------


def build_regularizer(cfg: ExperimentConfig) -> Regularizer:
    p = cfg.problem
    if p.regularizer == "zero":
        return Regularizer.zero()
    try:
        return Regularizer(p.regularizer, p.reg_param)
    except PriddaError as exc:
        raise ConfigError(f"[problem] {exc}") from None


def build_problem(cfg: ExperimentConfig) -> ProblemInstance:
    p = cfg.problem
    rng = np.random.default_rng(p.data_seed)
    if p.source == "libsvm":
        samples = load_libsvm(cfg.resolve(p.path))
    else:
        samples = generate_synthetic(p.samples, p.dimension, p.margin, rng)
    return ProblemInstance.from_partition(partition_even(samples, p.nodes, rng), build_regularizer(cfg))


def build_schedule(cfg: ExperimentConfig, reg: Regularizer) -> Schedule:
    return Schedule(cfg.schedule.kind, gamma=cfg.schedule.gamma, mu=reg.modulus)


@dataclass(frozen=True)
class Variant:
    """One point of a sweep; ``None`` fields keep the config's value."""

    label: str = "run"
    epsilon: Optional[float] = None
    strategy: Optional[str] = None
    k_edges: Optional[int] = None


def build_sampler(cfg: ExperimentConfig, variant: Variant, n: int) -> GossipSampler:
    strategy = variant.strategy or cfg.topology.strategy
    k = variant.k_edges if variant.k_edges is not None else cfg.topology.k_edges
    return GossipSampler(build_complete_graph(n), strategy, k)


def sweep_variants(cfg: ExperimentConfig) -> List[Variant]:
    axis, values = cfg.run.sweep_axis, cfg.run.sweep_values
    if axis is None or not values:
        raise ConfigError("[run] sweep_axis and sweep_values are required for a sweep")
    n = cfg.problem.nodes
    out = []
    for v in values:
        label = f"{axis}_{fmt(v)}"
        if axis == "epsilon":
            if cfg.privacy.mode != "dp":
                raise ConfigError("an epsilon sweep needs [privacy] mode = \"dp\"")
            out.append(Variant(label, epsilon=float(v)))
        elif axis == "k_edges":
            if v != int(v) or v < 1:
                raise ConfigError(f"k_edges values must be positive integers, got {v}")
            out.append(Variant(label, strategy="matching", k_edges=int(v)))
        else:
            if math.isclose(v, 1.0):
                out.append(Variant(label, strategy="full"))
                continue
            k = v * n / 2
            if not 0 < v < 1 or not math.isclose(k, round(k), abs_tol=1e-9):
                raise ConfigError(f"iota={v} is not 2k/{n} for an integer k")
            out.append(Variant(label, strategy="matching", k_edges=int(round(k))))
    return out


def make_run_config(cfg: ExperimentConfig, problem: ProblemInstance, variant: Variant, seed: int,
                    reference: Optional[Reference]) -> RunConfig:
    sampler = build_sampler(cfg, variant, problem.n)
    T = cfg.run.horizon
    cal = None
    if cfg.privacy.mode == "dp":
        eps = variant.epsilon if variant.epsilon is not None else cfg.privacy.epsilon
        budget = PrivacyBudget(eps, cfg.privacy.delta0, sampler.iota, problem.lipschitz, problem.min_samples, T)
        cal = calibrate(budget)
    return RunConfig(
        problem=problem,
        schedule=build_schedule(cfg, problem.regularizer),
        sampler=sampler,
        horizon=T,
        seed=seed,
        trace_stride=cfg.run.trace_stride,
        calibration=cal,
        reference=reference,
        beta=cfg.topology.beta,
    )


# ---- reference files -------------------------------------------------------


def write_reference(path: Path, sol: ReferenceSolution) -> None:
    write_keyvalue(path, {
        "method": sol.method,
        "iterations": int(sol.iterations),
        "dimension": int(sol.x_star.size),
        "f_star": sol.f_star,
        "x_star": ",".join(fmt(v) for v in sol.x_star),
    })


def read_reference(path: Path, dimension: Optional[int] = None) -> Reference:
    if not Path(path).is_file():
        raise ConfigError(f"reference file {path} does not exist; run the reference command first")
    kv = read_keyvalue(Path(path))
    try:
        f_star = float(kv["f_star"])
        x = np.array([float(v) for v in kv["x_star"].split(",")])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"malformed reference file {path}: {exc}") from None
    if dimension is not None and x.size != dimension:
        raise ConfigError(f"reference has dimension {x.size}, problem has {dimension}")
    return Reference(f_star, x)


def config_reference(cfg: ExperimentConfig, dimension: int) -> Optional[Reference]:
    path = cfg.resolve(cfg.run.reference)
    return read_reference(path, dimension) if path is not None else None


# ---- traces ----------------------------------------------------------------


def trace_table(trace: RunTrace) -> np.ndarray:
    """Columns of TRACE_COLUMNS; t is stored as float for aggregation."""
    dist = trace.dist_sq_ergodic if trace.dist_sq_ergodic is not None else np.full(len(trace), math.nan)
    return np.column_stack([
        trace.t.astype(float),
        trace.subopt_mean_ergodic,
        trace.consensus_err,
        trace.eps_hat,
        trace.thm2_envelope,
        trace.lemma4_envelope,
        trace.subopt_y_ergodic,
        trace.consensus_err_ergodic,
        dist,
        trace.objective_mean_ergodic,
    ])


def _table_rows(table: np.ndarray):
    for row in table:
        yield [int(row[0])] + list(row[1:])


def aggregate(tables: Sequence[np.ndarray]):
    """Per-row mean and standard error across seeds (identical values give se 0)."""
    stack = np.stack(tables)
    header = ["t"]
    cols = [stack[0, :, 0]]
    for j, name in enumerate(TRACE_COLUMNS[1:], start=1):
        vals = stack[:, :, j]
        same = np.all(vals == vals[0], axis=0)
        with np.errstate(invalid="ignore"):
            mean, se = metrics.mean_and_se(vals, axis=0)
        mean = np.where(same, vals[0], mean)
        se = np.where(same, 0.0, se)
        header += [f"{name}_mean", f"{name}_se"]
        cols += [mean, se]
    return header, np.column_stack(cols)


@dataclass
class SeedResult:
    seed: int
    table: np.ndarray
    sigma: float
    iota: float
    beta: float
    mean_dual_ok: bool


def _execute(args) -> SeedResult:
    cfg, variant, seed, reference = args
    problem = build_problem(cfg)
    rc = make_run_config(cfg, problem, variant, seed, reference)
    try:
        trace = run(rc)
    except Exception as exc:
        raise RunFailure(f"seed {seed} failed: {exc}") from exc
    return SeedResult(seed, trace_table(trace), trace.sigma, trace.iota, trace.beta,
                      mean_dual_recursion_check(trace))


def thread_cap() -> int:
    raw = os.environ.get("PRIDDA_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"PRIDDA_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("PRIDDA_THREADS must be positive")
    return n


def prepare(cfg: ExperimentConfig, variants: Sequence[Variant]):
    """Build the problem and validate every run before any work starts.

    Everything that can fail here is a configuration problem.
    """
    try:
        problem = build_problem(cfg)
        reference = config_reference(cfg, problem.dimension)
        for v in variants:
            make_run_config(cfg, problem, v, cfg.run.seeds[0], reference)
    except ConfigError:
        raise
    except (PriddaError, OSError) as exc:
        raise ConfigError(str(exc)) from exc
    return problem, reference


def execute(cfg: ExperimentConfig, variants: Sequence[Variant], threads: Optional[int] = None):
    """Run every (variant, seed) pair; returns {label: [SeedResult, ...]}."""
    _, reference = prepare(cfg, variants)
    jobs = [(cfg, v, s, reference) for v in variants for s in cfg.run.seeds]
    threads = thread_cap() if threads is None else threads
    if threads <= 1 or len(jobs) == 1:
        results = [_execute(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            results = list(pool.map(_execute, jobs))
    grouped: Dict[str, List[SeedResult]] = {v.label: [] for v in variants}
    for (_, v, _, _), res in zip(jobs, results):
        grouped[v.label].append(res)
    return grouped


def write_run_outputs(out_dir: Path, cfg: ExperimentConfig, variant: Variant, results: Sequence[SeedResult]):
    for res in results:
        write_csv(out_dir / f"seed_{res.seed}.csv", TRACE_COLUMNS, _table_rows(res.table))
    header, agg = aggregate([r.table for r in results])
    write_csv(out_dir / "aggregate.csv", header, _table_rows(agg))
    first = results[0]
    strategy = variant.strategy or cfg.topology.strategy
    meta = {
        "strategy": strategy,
        "k_edges": variant.k_edges if variant.k_edges is not None else cfg.topology.k_edges,
        "iota": first.iota,
        "beta": first.beta,
        "sigma": first.sigma,
        "privacy": cfg.privacy.mode,
        "seeds": ",".join(str(r.seed) for r in results),
        "mean_dual_check": "pass" if all(r.mean_dual_ok for r in results) else "fail",
    }
    if cfg.privacy.mode == "dp":
        meta["epsilon"] = variant.epsilon if variant.epsilon is not None else cfg.privacy.epsilon
        meta["delta0"] = cfg.privacy.delta0
        if strategy == "full":
            meta["accountant_note"] = "baseline noise calibrated with the sampled accountant at iota=1"
    write_keyvalue(out_dir / "metadata.txt", meta)


def write_sweep_outputs(out_dir: Path, cfg: ExperimentConfig, variants: Sequence[Variant], grouped):
    axis, values = cfg.run.sweep_axis, cfg.run.sweep_values
    rows = []
    finals = []
    for v, value in zip(variants, values):
        write_run_outputs(out_dir / v.label, cfg, v, grouped[v.label])
        final = []
        for res in grouped[v.label]:
            last = res.table[-1]
            rows.append([axis, value, res.seed, last[1], last[2], last[3], res.sigma, res.iota])
            final.append(last[1])
        finals.append(np.array(final))
    write_csv(out_dir / "sweep.csv", SWEEP_COLUMNS, rows)
    pairs = []
    for a in range(len(values)):
        for b in range(a + 1, len(values)):
            diff = finals[a] - finals[b]
            pairs.append([axis, values[a], values[b], len(diff), float(np.mean(finals[a] < finals[b])),
                          float(np.mean(diff))])
    write_csv(out_dir / "sweep_pairs.csv", PAIR_COLUMNS, pairs)
