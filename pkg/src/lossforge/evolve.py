"""Regularized evolution over loss graphs.

Mutation-only aging GA: tournament-select a parent, mutate until the child
passes the integrity check, train it, and let it replace the oldest member.
A fitness function returns a validation accuracy, or ``None`` when the
candidate is rejected by early stopping.
"""
from __future__ import annotations

import csv
import json
import logging
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from lossforge import ops
from lossforge.graph import (ALL_REFS, HIDDEN_REFS, LossGraph, Node, Phenotype,
                             from_document, is_hidden, phenotype, to_document)
from lossforge.integrity import SimilarityPool, VerdictLog, integrity_check

log = logging.getLogger(__name__)

FitnessFn = Callable[[LossGraph], Optional[float]]

OP_CHANGE, ARITY_SWAP, CONNECTION = "op", "arity", "connection"
BRANCH_PROBS = (0.70, 0.15, 0.15)
SWAP_PROB = 0.20
HISTORY_FIELDS = ("iteration", "best", "mean", "median", "accepted", "reason", "best_so_far")


@dataclass
class EvolveConfig:
    initial_size: int = 1000
    population_size: int = 100
    tournament_k: int = 20
    max_mutation_attempts: int = 2500
    max_redo: int = 7
    iterations: Optional[int] = None
    time_budget: Optional[float] = None  # seconds; not reproducible, use iterations for that
    seed: int = 0
    checkpoint_every: int = 25
    similarity_rms: bool = True

    def __post_init__(self):
        if not 1 <= self.tournament_k <= self.population_size <= self.initial_size:
            raise ValueError("need 1 <= tournament_k <= population_size <= initial_size")
        if self.max_redo < 1 or self.max_mutation_attempts < 1:
            raise ValueError("max_redo and max_mutation_attempts must be positive")
        if self.iterations is None and self.time_budget is None:
            raise ValueError("set iterations or time_budget")


@dataclass
class Individual:
    graph: LossGraph
    fitness: float
    birth: int

    def to_dict(self) -> dict:
        return {"birth": self.birth, "fitness": self.fitness, "genotype": to_document(self.graph)}

    @classmethod
    def from_dict(cls, doc: dict) -> "Individual":
        return cls(from_document(doc["genotype"]), float(doc["fitness"]), int(doc["birth"]))


@dataclass
class MutationRecord:
    node: str          # "root" or "h0".."h3"
    branch: str        # OP_CHANGE, ARITY_SWAP or CONNECTION
    detail: str = ""   # "swap" / "resample" for binary connection changes


@dataclass
class EvolutionState:
    rng: np.random.Generator
    population: list[Individual] = field(default_factory=list)
    archive: list[Individual] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    iteration: int = 0
    next_birth: int = 0
    counters: dict = field(default_factory=lambda: {
        "integrity_failures": 0, "mutation_exhausted": 0,
        "failed_evaluations": 0, "skipped_iterations": 0})
    verdict_offset: Optional[int] = None   # integrity log length at the checkpoint
    _phenotypes: dict = field(default_factory=dict, repr=False)

    def phenotype_of(self, ind: Individual) -> Phenotype:
        ph = self._phenotypes.get(ind.birth)
        if ph is None:
            ph = self._phenotypes[ind.birth] = phenotype(ind.graph)
        return ph

    def similarity_pool(self, rms: bool = True) -> SimilarityPool:
        return SimilarityPool((self.phenotype_of(i) for i in self.population), rms=rms)


# --- sampling ---------------------------------------------------------------

def _random_op(rng, arity: int | None = None, exclude: str | None = None) -> str:
    if arity is None:
        choices = [k.id for k in ops.catalog()]
    else:
        choices = list(ops.UNARY_IDS if arity == 1 else ops.BINARY_IDS)
    if exclude is not None:
        choices.remove(exclude)
    return choices[int(rng.integers(len(choices)))]


def _random_ref(rng, exclude: str | None = None) -> str:
    choices = [r for r in ALL_REFS if r != exclude]
    return choices[int(rng.integers(len(choices)))]


def random_graph(rng: np.random.Generator) -> LossGraph:
    """Uniform ops and connections; the root gets at least one hidden argument."""
    hidden = []
    for _ in HIDDEN_REFS:
        op = _random_op(rng)
        hidden.append(Node(op, tuple(_random_ref(rng) for _ in range(ops.BY_ID[op].arity))))
    op = _random_op(rng)
    while True:
        args = tuple(_random_ref(rng) for _ in range(ops.BY_ID[op].arity))
        if any(is_hidden(a) for a in args):
            break
    return LossGraph(tuple(hidden), Node(op, args), sign=1)


def _root_ok(args) -> bool:
    return any(is_hidden(a) for a in args)


def _mutate_node(node: Node, rng, is_root: bool) -> tuple[Node, str, str]:
    r = rng.random()
    if r < BRANCH_PROBS[0]:
        return Node(_random_op(rng, node.arity, exclude=node.op), node.args), OP_CHANGE, ""
    if r < BRANCH_PROBS[0] + BRANCH_PROBS[1]:
        if node.arity == 1:
            op = _random_op(rng, 2)
            return Node(op, (node.args[0], _random_ref(rng))), ARITY_SWAP, ""
        op = _random_op(rng, 1)
        while True:
            kept = (node.args[int(rng.integers(2))],)
            if not is_root or _root_ok(kept):
                return Node(op, kept), ARITY_SWAP, ""
    if node.arity == 1:
        while True:
            args = (_random_ref(rng, exclude=node.args[0]),)
            if not is_root or _root_ok(args):
                return Node(node.op, args), CONNECTION, "resample"
    if rng.random() < SWAP_PROB:
        return Node(node.op, node.args[::-1]), CONNECTION, "swap"
    which = int(rng.integers(2))
    while True:
        args = list(node.args)
        args[which] = _random_ref(rng, exclude=node.args[which])
        if not is_root or _root_ok(args):
            return Node(node.op, tuple(args)), CONNECTION, "resample"


def mutate_with_record(parent: LossGraph, rng: np.random.Generator) -> tuple[LossGraph, MutationRecord]:
    choice = int(rng.integers(len(HIDDEN_REFS) + 1))
    if choice == len(HIDDEN_REFS):
        root, branch, detail = _mutate_node(parent.root, rng, is_root=True)
        child = LossGraph(parent.hidden, root, parent.sign, parent.smoothing)
        return child, MutationRecord("root", branch, detail)
    hidden = list(parent.hidden)
    hidden[choice], branch, detail = _mutate_node(hidden[choice], rng, is_root=False)
    child = LossGraph(tuple(hidden), parent.root, parent.sign, parent.smoothing)
    return child, MutationRecord(HIDDEN_REFS[choice], branch, detail)


def mutate(parent: LossGraph, rng: np.random.Generator) -> LossGraph:
    return mutate_with_record(parent, rng)[0]


def tournament_select(population: list[Individual], k: int, rng: np.random.Generator) -> Individual:
    """Best of ``k`` distinct members; ties go to the older individual."""
    if not 1 <= k <= len(population):
        raise ValueError(f"tournament size {k} invalid for population of {len(population)}")
    picks = rng.choice(len(population), size=k, replace=False)
    return max((population[i] for i in picks), key=lambda ind: (ind.fitness, -ind.birth))


def best_of(individuals: list[Individual], count: int) -> list[Individual]:
    return sorted(individuals, key=lambda ind: (-ind.fitness, ind.birth))[:count]


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# --- engine -----------------------------------------------------------------

def initialize_population(config: EvolveConfig, fitness_fn: FitnessFn,
                          rng: np.random.Generator | None = None, *,
                          verdicts: VerdictLog | None = None,
                          threads: int = 1) -> list[Individual]:
    """Draw ``initial_size`` integrity-passing graphs and score them.

    Each candidate is checked against the ones already accepted. Failed
    evaluations get fitness 0.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    pool = SimilarityPool(rms=config.similarity_rms)
    accepted: list[LossGraph] = []
    draws = 0
    while len(accepted) < config.initial_size:
        g = random_graph(rng)
        draws += 1
        verdict = integrity_check(g, pool, rms=config.similarity_rms)
        if verdicts is not None:
            verdicts.write(0, verdict, g)
        if verdict.accepted:
            accepted.append(verdict.graph)
            pool.add(verdict.phenotype)
    log.info("initial population: %d accepted from %d draws", len(accepted), draws)
    fitness = _map(fitness_fn, accepted, threads)
    return [Individual(g, 0.0 if f is None else float(f), i)
            for i, (g, f) in enumerate(zip(accepted, fitness))]


def start_state(config: EvolveConfig, initial: list[Individual],
                rng: np.random.Generator) -> EvolutionState:
    state = EvolutionState(rng=rng)
    state.archive = list(initial)
    state.population = sorted(best_of(initial, config.population_size), key=lambda i: i.birth)
    state.next_birth = max((i.birth for i in initial), default=-1) + 1
    return state


def _stats(state: EvolutionState) -> dict:
    fits = [i.fitness for i in state.population]
    return {"best": max(fits), "mean": statistics.fmean(fits), "median": statistics.median(fits),
            "best_so_far": max(i.fitness for i in state.archive)}


def evolve_step(state: EvolutionState, fitness_fn: FitnessFn, config: EvolveConfig, *,
                verdicts: VerdictLog | None = None) -> EvolutionState:
    """One iteration: select, mutate, evaluate, age. Mutates ``state`` in place."""
    rng = state.rng
    state.iteration += 1
    parent = tournament_select(state.population, config.tournament_k, rng)
    pool = state.similarity_pool(config.similarity_rms)
    child: Individual | None = None
    for _ in range(config.max_redo):
        candidate, ph = None, None
        for _ in range(config.max_mutation_attempts):
            mutant = mutate(parent.graph, rng)
            verdict = integrity_check(mutant, pool, rms=config.similarity_rms)
            if verdicts is not None:
                verdicts.write(state.iteration, verdict, mutant)
            if verdict.accepted:
                candidate, ph = verdict.graph, verdict.phenotype
                break
            state.counters["integrity_failures"] += 1
        if candidate is None:
            # mutation did not take place; the parent's clone is trained instead
            state.counters["mutation_exhausted"] += 1
            candidate, ph = parent.graph, state.phenotype_of(parent)
        fitness = fitness_fn(candidate)
        if fitness is None:
            state.counters["failed_evaluations"] += 1
            continue
        child = Individual(candidate, float(fitness), state.next_birth)
        break
    if child is None:
        state.counters["skipped_iterations"] += 1
    else:
        state.next_birth += 1
        state._phenotypes[child.birth] = ph
        oldest = min(state.population, key=lambda i: i.birth)
        state.population.remove(oldest)
        state._phenotypes.pop(oldest.birth, None)
        state.population.append(child)
        state.archive.append(child)
    row = {"iteration": state.iteration, **_stats(state), "accepted": child is not None,
           "reason": "" if child is not None else "redo_exhausted"}
    state.history.append({k: row[k] for k in HISTORY_FIELDS})
    return state


@dataclass
class EvolutionReport:
    history: list[dict]
    archive: list[Individual]
    population: list[Individual]
    counters: dict

    def best_so_far(self) -> list[float]:
        return [row["best_so_far"] for row in self.history]

    def top(self, k: int) -> list[Individual]:
        return best_of(self.archive, k)


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(state: EvolutionState, path: str | Path, config: EvolveConfig | None = None,
                    verdict_offset: int | None = None) -> None:
    doc = {
        "version": 1,
        "config": asdict(config) if config is not None else None,
        "rng": state.rng.bit_generator.state,
        "iteration": state.iteration,
        "next_birth": state.next_birth,
        "counters": state.counters,
        "population": [i.birth for i in state.population],
        "archive": [i.to_dict() for i in state.archive],
        "history": state.history,
        "verdict_offset": verdict_offset,
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> EvolutionState:
    doc = json.loads(Path(path).read_text())
    rng = np.random.default_rng()
    rng.bit_generator.state = doc["rng"]
    archive = [Individual.from_dict(d) for d in doc["archive"]]
    by_birth = {i.birth: i for i in archive}
    return EvolutionState(
        rng=rng,
        population=[by_birth[b] for b in doc["population"]],
        archive=archive,
        history=doc["history"],
        iteration=doc["iteration"],
        next_birth=doc["next_birth"],
        counters=doc["counters"],
        verdict_offset=doc.get("verdict_offset"),
    )


def write_history_csv(rows: list[dict], path: str | Path, append: bool = False) -> None:
    path = Path(path)
    header = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(HISTORY_FIELDS)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in HISTORY_FIELDS])


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(float(v))
    return v


def _checkpoint(state, path, config, verdicts):
    save_checkpoint(state, path, config, verdicts.tell() if verdicts is not None else None)


def run_evolution(config: EvolveConfig, fitness_fn: FitnessFn, *,
                  initial_fitness_fn: FitnessFn | None = None,
                  state: EvolutionState | None = None,
                  checkpoint_path: str | Path | None = None,
                  verdicts: VerdictLog | None = None,
                  on_iteration: Callable[[dict], None] | None = None,
                  threads: int = 1) -> EvolutionReport:
    """Initialize (unless resuming from ``state``), then iterate until the budget.

    ``initial_fitness_fn`` scores the initial population (a cheaper trainer);
    it defaults to ``fitness_fn``.
    """
    if state is None:
        rng = np.random.default_rng(config.seed)
        initial = initialize_population(config, initial_fitness_fn or fitness_fn, rng,
                                        verdicts=verdicts, threads=threads)
        state = start_state(config, initial, rng)
        if checkpoint_path is not None:
            _checkpoint(state, checkpoint_path, config, verdicts)
    start = time.monotonic()
    while True:
        if config.iterations is not None and state.iteration >= config.iterations:
            break
        if config.time_budget is not None and time.monotonic() - start >= config.time_budget:
            break
        evolve_step(state, fitness_fn, config, verdicts=verdicts)
        if on_iteration is not None:
            on_iteration(state.history[-1])
        if checkpoint_path is not None and state.iteration % config.checkpoint_every == 0:
            _checkpoint(state, checkpoint_path, config, verdicts)
    if checkpoint_path is not None:
        _checkpoint(state, checkpoint_path, config, verdicts)
    return EvolutionReport(state.history, state.archive, state.population, state.counters)
