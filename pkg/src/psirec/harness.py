"""
Experiment loop: one PureSVD fit at step 0, then per time step either a full
PureSVD refit on the accumulated history or one PSI update with the step's
delta, followed by top-n evaluation of that step's holdout users.
"""
from __future__ import annotations

import csv
import dataclasses
import gc
import io
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from psirec.data import StepSplit, load_csv, load_split, parse_schema, preprocess, stepwise_split
from psirec.metrics import REPORT_FIELDS, StepReport, coverage, hit_rate, mrr, stability
from psirec.model import FactorModel, psi_step, save_model, train_puresvd
from psirec.recommend import recommend_users

log = logging.getLogger(__name__)

MODELS = ("puresvd", "psi")
METRICS = ("hr", "mrr", "coverage", "stability")
DEFAULT_RANKS = (10, 30, 100, 300)
DEFAULT_HOLDBACK = 8 * 30 * 86400


@dataclass
class ExperimentConfig:
    dataset: Optional[str] = None
    schema: str = "movielens"
    min_rating: float = 4.0
    min_user_items: int = 1
    holdback: int = DEFAULT_HOLDBACK
    n_steps: int = 8
    ranks: Sequence[int] = DEFAULT_RANKS
    n: int = 10
    models: Sequence[str] = MODELS
    seed: int = 0
    output_dir: Optional[str] = None
    split_dir: Optional[str] = None
    psi_decomposition: str = "qr"
    save_models: bool = False
    overwrite: bool = False

    def __post_init__(self):
        self.ranks = tuple(int(r) for r in self.ranks)
        self.models = tuple(self.models)
        if not self.ranks or min(self.ranks) < 1:
            raise ValueError(f"ranks must be a non-empty list of positive integers, got {self.ranks}")
        if self.n < 1:
            raise ValueError(f"top-n cutoff must be >= 1, got {self.n}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        unknown = set(self.models) - set(MODELS)
        if not self.models or unknown:
            raise ValueError(f"models must be a non-empty subset of {MODELS}, got {self.models}")

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ranks"] = list(self.ranks)
        d["models"] = list(self.models)
        d.pop("overwrite")
        return d


def prepare_split(config: ExperimentConfig) -> StepSplit:
    if config.split_dir:
        return load_split(config.split_dir)
    if not config.dataset:
        raise ValueError("config needs either split_dir or dataset")
    raw = load_csv(config.dataset, parse_schema(config.schema))
    clean = preprocess(raw, config.min_rating, config.min_user_items)
    return stepwise_split(clean, config.holdback, config.n_steps)


class ReportWriter:
    """Appends step reports to ``reports.csv`` / ``reports.jsonl`` as they are produced."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.csv_path = out_dir / "reports.csv"
        self.json_path = out_dir / "reports.jsonl"
        with open(self.csv_path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(REPORT_FIELDS)
        self.json_path.write_text("")

    def write(self, report: StepReport) -> None:
        with open(self.csv_path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(report.as_row())
        with open(self.json_path, "a") as fh:
            fh.write(report.to_json() + "\n")


def _claim_output_dir(path, overwrite: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise FileExistsError(f"{out} already contains files; refusing to overwrite (pass overwrite to replace)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_experiment(config: ExperimentConfig, split: Optional[StepSplit] = None) -> list[StepReport]:
    """
    Run every (rank, model) pipeline over all steps of the split.

    Both models start from the same PureSVD fit of the initial data. Lists
    for step ``k`` are generated for that step's holdout users from their
    history through delta ``k``; stability compares them with the lists the
    step ``k-1`` model produced for the same users from the history known
    then.
    """
    if split is None:
        split = prepare_split(config)
    writer = None
    if config.output_dir:
        out = _claim_output_dir(config.output_dir, config.overwrite)
        (out / "run_config.json").write_text(json.dumps(config.as_dict(), indent=2, sort_keys=True) + "\n")
        writer = ReportWriter(out)

    n_items = split.shape[1]
    K = len(split.steps)
    histories = [sp.csr_matrix(split.initial_training.matrix)]
    for step in split.steps:
        histories.append(sp.csr_matrix(histories[-1] + step.delta.matrix))
    eval_users = [set()] + [set(step.holdout) for step in split.steps] + [set()]

    reports = []
    for r in config.ranks:
        if r > min(split.shape):
            raise ValueError(f"rank {r} exceeds matrix dimensions {split.shape}")
        base = train_puresvd(histories[0], r, seed=config.seed)
        for name in config.models:
            model = base
            prev = recommend_users(model, histories[0], eval_users[1], config.n)
            for k in range(1, K + 1):
                step = split.steps[k - 1]
                try:
                    model = _advance(name, model, step.delta.matrix, histories[k], r, k, config)
                except Exception:
                    log.error("%s r=%d failed at step %d", name, r, k)
                    raise
                lists = recommend_users(model, histories[k], eval_users[k] | eval_users[k + 1], config.n)
                curr = {u: lists[u] for u in eval_users[k] if u in lists}
                if step.holdout:
                    common = set(prev) & set(curr)
                    report = StepReport(
                        step_index=k,
                        model_name=name,
                        rank=r,
                        n=config.n,
                        hr=hit_rate(curr, step.holdout),
                        mrr=mrr(curr, step.holdout),
                        coverage=coverage(curr, n_items),
                        stability=stability(prev, curr, config.n) if common else None,
                        n_eval_users=len(step.holdout),
                    )
                    reports.append(report)
                    if writer:
                        writer.write(report)
                    log.info("%s r=%d step %d: hr=%.4f mrr=%.4f cov=%.4f stab=%s", name, r, k,
                             report.hr, report.mrr, report.coverage, report.stability)
                else:
                    log.warning("%s r=%d step %d: empty holdout, no report", name, r, k)
                prev = {u: lists[u] for u in eval_users[k + 1] if u in lists}
            if config.save_models and config.output_dir:
                models_dir = Path(config.output_dir) / "models"
                models_dir.mkdir(exist_ok=True)
                save_model(model, models_dir / f"{name}_r{r}.psif")

    if config.output_dir:
        out = Path(config.output_dir)
        write_summary(aggregate(reports), out / "summary.csv")
        emit_plot_data(reports, out)
    return reports


def _advance(name: str, model: FactorModel, delta, history, r: int, k: int,
             config: ExperimentConfig) -> FactorModel:
    if name == "psi":
        model = psi_step(model, delta, decomposition=config.psi_decomposition)
        model.check()
        return model
    fitted = train_puresvd(history, r, seed=config.seed)
    return dataclasses.replace(fitted, step_index=k)


def _mean(values) -> Optional[float]:
    values = [v for v in values if v is not None]
    return math.fsum(values) / len(values) if values else None


def aggregate(reports: Sequence[StepReport]) -> list[dict]:
    """Per (model, rank): unweighted mean of each metric over steps."""
    groups: dict[tuple[str, int], list[StepReport]] = {}
    for rep in reports:
        groups.setdefault((rep.model_name, rep.rank), []).append(rep)
    rows = []
    for (name, r), reps in sorted(groups.items()):
        reps = sorted(reps, key=lambda x: x.step_index)
        row = {"model_name": name, "rank": r, "n": reps[0].n, "n_steps": len(reps)}
        for metric in METRICS:
            row[metric] = _mean(getattr(x, metric) for x in reps)
        rows.append(row)
    return rows


SUMMARY_FIELDS = ("model_name", "rank", "n", "n_steps") + METRICS


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def summary_text(rows: Sequence[dict], fmt: str = "csv") -> str:
    if fmt == "json":
        return json.dumps([{k: row[k] for k in SUMMARY_FIELDS} for row in rows], indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for row in rows:
        w.writerow([_fmt(row[k]) for k in SUMMARY_FIELDS])
    return buf.getvalue()


def write_summary(rows: Sequence[dict], path) -> None:
    Path(path).write_text(summary_text(rows, "csv"))


def emit_plot_data(reports: Sequence[StepReport], out_dir=None) -> dict[str, list[tuple]]:
    """
    Long-format (rank, model, step, value) tables, one per metric.

    Values are the exact strings of the report rows; a missing stability is an
    empty field. When ``out_dir`` is given each table goes to ``plot_<metric>.csv``.
    """
    if not reports:
        raise ValueError("no reports to emit")
    ordered = sorted(reports, key=lambda x: (x.rank, x.model_name, x.step_index))
    tables = {}
    for metric in METRICS:
        tables[metric] = [(rep.rank, rep.model_name, rep.step_index, _fmt(getattr(rep, metric)))
                          for rep in ordered]
    if out_dir is not None:
        for metric, rows in tables.items():
            with open(Path(out_dir) / f"plot_{metric}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("rank", "model", "step", "value"))
                w.writerows(rows)
    return tables


def read_reports(run_dir) -> list[StepReport]:
    path = Path(run_dir) / "reports.csv"
    with open(path, newline="") as fh:
        return [StepReport.from_row(row) for row in csv.DictReader(fh)]


def time_alternating(jobs: Sequence, repeats: int = 9) -> np.ndarray:
    """
    Wall times of zero-argument callables run in alternation (a, b, a, b, ...)
    so that neighbouring samples see the same machine state. Returns an array
    of shape ``(repeats, len(jobs))``.
    """
    times = np.empty((repeats, len(jobs)))
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for t in range(repeats):
            for i, job in enumerate(jobs):
                t0 = time.perf_counter()
                job()
                times[t, i] = time.perf_counter() - t0
    finally:
        if gc_was_enabled:
            gc.enable()
    return times


def measure_step_costs(split: StepSplit, rank: int, seed: int = 0, repeats: int = 5) -> dict[str, list[float]]:
    """
    Wall time per step of the PSI update and of the PureSVD refit on the
    accumulated history.

    Every (model, step) job runs ``repeats`` times in a seeded random order
    and keeps its fastest time, so a slow spell on the machine is spread over
    many steps instead of inflating a few neighbouring ones. Histories are
    materialized up front; memory grows with the summed history size.
    Garbage collection is paused while timing, as ``timeit`` does.
    """
    histories, models = [], []
    history = sp.csr_matrix(split.initial_training.matrix)
    model = train_puresvd(history, rank, seed=seed)
    for step in split.steps:
        history = sp.csr_matrix(history + step.delta.matrix)
        histories.append(history)
        models.append(model)
        model = psi_step(model, step.delta.matrix)

    n_steps = len(split.steps)
    jobs = [(name, k) for name in ("psi", "puresvd") for k in range(n_steps)] * repeats
    order = np.random.default_rng(seed).permutation(len(jobs))
    costs = {"psi": [math.inf] * n_steps, "puresvd": [math.inf] * n_steps}
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for j in order:
            name, k = jobs[j]
            # fresh copies, so no single memory placement decides a step's time
            matrix = (split.steps[k].delta.matrix if name == "psi" else histories[k]).copy()
            t0 = time.perf_counter()
            if name == "psi":
                psi_step(models[k], matrix)
            else:
                train_puresvd(matrix, rank, seed=seed)
            costs[name][k] = min(costs[name][k], time.perf_counter() - t0)
    finally:
        if gc_was_enabled:
            gc.enable()
    return costs
