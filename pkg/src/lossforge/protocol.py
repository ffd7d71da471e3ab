"""Post-evolution protocol: staged elimination, comparisons, surrogate fidelity.

A plan round ``(count, steps)`` trains ``count`` candidates from scratch
for ``steps`` steps. Round one takes the best ``count`` distinct genotypes
of the archive; each later round takes the top of the previous ranking.
"""
from __future__ import annotations

import csv
import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from lossforge.data import Dataset
from lossforge.evolve import Individual, best_of
from lossforge.graph import LossGraph, serialize, to_document, to_expression
from lossforge.references import reference_loss  # noqa: F401  (re-exported)
from lossforge.stats import kendall_tau, welch_t
from lossforge.surrogate import TrainConfig, train

__all__ = ["EliminationPlan", "paper_plan", "desk_plan", "Survivor", "eliminate",
           "write_ladder", "ComparisonRow", "ComparisonReport", "derived_seeds", "compare",
           "FidelityResult", "fidelity_study", "kendall_tau", "welch_t", "reference_loss"]


# --- elimination -------------------------------------------------------------

@dataclass(frozen=True)
class EliminationPlan:
    rounds: tuple[tuple[int, int], ...]

    def __post_init__(self):
        rounds = tuple((int(c), int(s)) for c, s in self.rounds)
        object.__setattr__(self, "rounds", rounds)
        if not rounds:
            raise ValueError("an elimination plan needs at least one round")
        for count, steps in rounds:
            if count < 1 or steps < 1:
                raise ValueError("round counts and steps must be positive")
        for (c0, s0), (c1, s1) in zip(rounds, rounds[1:]):
            if c1 >= c0:
                raise ValueError("candidate counts must strictly decrease across rounds")
            if s1 <= s0:
                raise ValueError("training steps must strictly increase across rounds")

    @property
    def candidates_in(self) -> int:
        return self.rounds[0][0]

    def to_dict(self) -> dict:
        return {"rounds": [list(r) for r in self.rounds]}


def paper_plan(steps: int = 16000) -> EliminationPlan:
    return EliminationPlan(((150, steps), (50, 2 * steps), (25, 3 * steps), (10, 4 * steps)))


def desk_plan(steps: int = 500) -> EliminationPlan:
    return EliminationPlan(((16, steps), (8, 2 * steps), (4, 3 * steps), (2, 4 * steps)))


@dataclass(frozen=True)
class Survivor:
    individual: Individual
    score: float
    rank: int

    def to_dict(self) -> dict:
        return {"rank": self.rank, "score": self.score, "archive_fitness": self.individual.fitness,
                "birth": self.individual.birth, "expression": to_expression(self.individual.graph),
                "genotype": to_document(self.individual.graph)}


def _distinct(archive: Sequence[Individual]) -> list[Individual]:
    seen, out = set(), []
    for ind in best_of(list(archive), len(archive)):
        key = serialize(ind.graph)
        if key not in seen:
            seen.add(key)
            out.append(ind)
    return out


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def eliminate(archive: Sequence[Individual], plan: EliminationPlan,
              trainer: Callable[[LossGraph, int], Optional[float]],
              threads: int = 1) -> list[list[Survivor]]:
    """Run every round and return the ranked candidate list of each.

    ``trainer(graph, steps)`` returns a validation accuracy (``None`` scores
    as 0). Ties keep the previous order, so round one ties fall back to
    archive fitness and then birth.
    """
    pool = _distinct(archive)
    if len(pool) < plan.candidates_in:
        raise ValueError(f"plan needs {plan.candidates_in} distinct candidates, "
                         f"archive has {len(pool)}")
    current = pool[: plan.candidates_in]
    ladder: list[list[Survivor]] = []
    for count, steps in plan.rounds:
        current = current[:count]
        scores = _map(lambda ind: trainer(ind.graph, steps), current, threads)
        scores = [0.0 if s is None else float(s) for s in scores]
        order = sorted(range(len(current)), key=lambda i: (-scores[i], i))
        ranked = [Survivor(current[i], scores[i], r + 1) for r, i in enumerate(order)]
        ladder.append(ranked)
        current = [s.individual for s in ranked]
    return ladder


def write_ladder(ladder: list[list[Survivor]], plan: EliminationPlan, out_dir: str | Path) -> list[Path]:
    """One JSON file per round: ``round_1.json`` ... ``round_R.json``."""
    out_dir = Path(out_dir)
    paths = []
    for r, (ranked, (count, steps)) in enumerate(zip(ladder, plan.rounds), start=1):
        doc = {"round": r, "candidates": count, "steps": steps,
               "survivors": [s.to_dict() for s in ranked]}
        path = out_dir / f"round_{r}.json"
        path.write_text(json.dumps(doc, indent=2) + "\n")
        paths.append(path)
    return paths


# --- comparison --------------------------------------------------------------

def derived_seeds(seed: int, runs: int) -> list[int]:
    """Distinct per-run seeds, identical for every loss under comparison."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(runs)]


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    scores: tuple[float, ...]
    p_vs_baseline: Optional[float]

    @property
    def runs(self) -> int:
        return len(self.scores)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.scores)

    @property
    def std(self) -> float:
        return statistics.stdev(self.scores)


@dataclass(frozen=True)
class ComparisonReport:
    baseline: str
    alternative: str
    rows: tuple[ComparisonRow, ...]

    def row(self, name: str) -> ComparisonRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["loss", "mean", "std", "runs", "p_vs_baseline"])
            for r in self.rows:
                p = "" if r.p_vs_baseline is None else repr(r.p_vs_baseline)
                w.writerow([r.name, repr(r.mean), repr(r.std), r.runs, p])


def compare(losses: Sequence[tuple[str, LossGraph]], dataset: Dataset | None, runs: int,
            cfg: TrainConfig, baseline: str, *,
            trainer: Callable[[LossGraph, int], Optional[float]] | None = None,
            alternative: str = "two-sided", threads: int = 1) -> ComparisonReport:
    """Train each loss ``runs`` times and test it against ``baseline`` with Welch's t.

    ``trainer(graph, seed)`` defaults to a full surrogate run on ``dataset``.
    With ``alternative="greater"`` the test asks whether a loss beats the baseline.
    """
    if runs < 2:
        raise ValueError("compare needs at least two runs per loss")
    names = [n for n, _ in losses]
    if len(set(names)) != len(names):
        raise ValueError("loss names must be unique")
    if baseline not in names:
        raise ValueError(f"baseline {baseline!r} is not among the losses")
    if trainer is None:
        def trainer(graph, seed):
            return train(None, dataset, graph, replace(cfg, seed=seed)).best_val_acc
    seeds = derived_seeds(cfg.seed, runs)
    jobs = [(g, s) for _, g in losses for s in seeds]
    flat = _map(lambda job: trainer(*job), jobs, threads)
    flat = [0.0 if s is None else float(s) for s in flat]
    scores = {n: tuple(flat[i * runs:(i + 1) * runs]) for i, n in enumerate(names)}
    rows = []
    for n in names:
        p = welch_t(scores[n], scores[baseline], alternative).p
        rows.append(ComparisonRow(n, scores[n], p))
    return ComparisonReport(baseline, alternative, tuple(rows))


# --- surrogate fidelity --------------------------------------------------------

@dataclass(frozen=True)
class FidelityResult:
    names: tuple[str, ...]
    cheap_scores: tuple[tuple[float, ...], ...]   # one row per cheap configuration
    expensive_scores: tuple[float, ...]
    taus: tuple[Optional[float], ...]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["config", "tau", *self.names])
            for i, (tau, row) in enumerate(zip(self.taus, self.cheap_scores)):
                w.writerow([f"cheap_{i}", "" if tau is None else repr(tau), *map(repr, row)])
            self_tau = kendall_tau(self.expensive_scores, self.expensive_scores)
            w.writerow(["expensive", "" if self_tau is None else repr(self_tau),
                        *map(repr, self.expensive_scores)])


def fidelity_study(losses: Sequence[tuple[str, LossGraph]], cheap_cfgs: Sequence[TrainConfig],
                   expensive_cfg: TrainConfig, dataset: Dataset | None, *,
                   trainer: Callable[[LossGraph, TrainConfig], Optional[float]] | None = None,
                   threads: int = 1) -> FidelityResult:
    """Kendall's tau between each cheap ranking and the expensive one."""
    if len(losses) < 2:
        raise ValueError("a fidelity study needs at least two losses")
    if trainer is None:
        def trainer(graph, cfg):
            return train(None, dataset, graph, cfg).best_val_acc

    def score_all(cfg: TrainConfig) -> tuple[float, ...]:
        out = _map(lambda item: trainer(item[1], cfg), losses, threads)
        return tuple(0.0 if s is None else float(s) for s in out)

    expensive = score_all(expensive_cfg)
    cheap = tuple(score_all(c) for c in cheap_cfgs)
    taus = tuple(kendall_tau(row, expensive) for row in cheap)
    return FidelityResult(tuple(n for n, _ in losses), cheap, expensive, taus)
