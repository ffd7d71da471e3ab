"""Integrity check run on every new loss before it is trained.

Order: cycle, y/yhat presence, finite phenotype, shape classification
(multimodal and constant curves are rejected), sign orientation, parabolic
optimum too close to 0.5, and similarity to the current population.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from lossforge.graph import (LossGraph, Phenotype, active_nodes, is_hidden,
                             normalize_phenotype, phenotype, to_expression)

MONOTONE_DECREASING = "monotone_decreasing"
MONOTONE_INCREASING = "monotone_increasing"
PARABOLIC_MIN = "parabolic_min"
PARABOLIC_MAX = "parabolic_max"
MULTIMODAL = "multimodal"
NONFINITE = "nonfinite"
DEGENERATE = "degenerate_constant"

REASONS = ("cycle", "missing_input", "multimodal", "nonfinite",
           "optimum_near_half", "too_similar", "ok")

CLASSIFY_TOL = 1e-6
SIMILARITY_THRESHOLD = 0.01
NEAR_HALF = 0.005


@dataclass(frozen=True)
class PhenotypeClass:
    tag: str
    optimum_p: float | None = None


@dataclass(frozen=True)
class IntegrityVerdict:
    accepted: bool
    reason: str
    oriented_sign: int
    graph: LossGraph | None = None       # oriented graph when the phenotype was computed
    phenotype: Phenotype | None = None   # oriented phenotype, same condition
    phenotype_class: PhenotypeClass | None = None


def has_cycle(graph: LossGraph) -> bool:
    """True if the active part of the hidden-node graph has a directed cycle."""
    active = [r for r in active_nodes(graph) if is_hidden(r)]
    state: dict[str, int] = {}

    def visit(ref: str) -> bool:
        state[ref] = 1
        for arg in graph.node(ref).args:
            if not is_hidden(arg):
                continue
            mark = state.get(arg)
            if mark == 1 or (mark is None and visit(arg)):
                return True
        state[ref] = 2
        return False

    return any(state.get(r) is None and visit(r) for r in sorted(active))


def inputs_present(graph: LossGraph) -> bool:
    active = active_nodes(graph)
    return "y" in active and "yhat" in active


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive (start, end) index pairs of contiguous True stretches."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    ends = np.concatenate([idx[breaks], [idx[-1]]])
    return list(zip(starts.tolist(), ends.tolist()))


def classify(ph: Phenotype, tolerance: float = CLASSIFY_TOL) -> PhenotypeClass:
    if not ph.finite:
        return PhenotypeClass(NONFINITE)
    v = ph.values
    if v.max() - v.min() < tolerance:
        return PhenotypeClass(DEGENERATE)
    v = normalize_phenotype(ph).values
    n = v.size
    min_runs = _runs(v <= tolerance)
    max_runs = _runs(v >= 1.0 - tolerance)
    if len(min_runs) > 1 or len(max_runs) > 1:
        return PhenotypeClass(MULTIMODAL)
    d = np.diff(v)
    if np.all(d <= tolerance):
        return PhenotypeClass(MONOTONE_DECREASING)
    if np.all(d >= -tolerance):
        return PhenotypeClass(MONOTONE_INCREASING)
    (lo_start, lo_end), = min_runs
    if 0 < lo_start and lo_end < n - 1:
        if np.all(d[:lo_start] <= tolerance) and np.all(d[lo_end:] >= -tolerance):
            return PhenotypeClass(PARABOLIC_MIN, float(ph.grid[lo_start + np.argmin(v[lo_start:lo_end + 1])]))
    (hi_start, hi_end), = max_runs
    if 0 < hi_start and hi_end < n - 1:
        if np.all(d[:hi_start] >= -tolerance) and np.all(d[hi_end:] <= tolerance):
            return PhenotypeClass(PARABOLIC_MAX, float(ph.grid[hi_start + np.argmax(v[hi_start:hi_end + 1])]))
    return PhenotypeClass(MULTIMODAL)


_FLIP = {MONOTONE_INCREASING: MONOTONE_DECREASING, PARABOLIC_MAX: PARABOLIC_MIN}


def orient(graph: LossGraph, cls: PhenotypeClass) -> tuple[LossGraph, PhenotypeClass]:
    """Flip the sign of increasing or upside-down-parabola losses."""
    if cls.tag in (MULTIMODAL, NONFINITE):
        raise ValueError(f"cannot orient a {cls.tag} phenotype")
    if cls.tag in _FLIP:
        return graph.flipped(), PhenotypeClass(_FLIP[cls.tag], cls.optimum_p)
    return graph, cls


def near_half_reject(cls: PhenotypeClass, half_width: float = NEAR_HALF) -> bool:
    if cls.tag != PARABOLIC_MIN:
        return False
    return abs(cls.optimum_p - 0.5) <= half_width


def phenotype_distance(a: Phenotype, b: Phenotype, rms: bool = True) -> float:
    """Euclidean distance of the normalized curves, divided by sqrt(len) if ``rms``."""
    if a.grid.shape != b.grid.shape or not np.array_equal(a.grid, b.grid):
        raise ValueError("phenotypes use different grids")
    diff = normalize_phenotype(a).values - normalize_phenotype(b).values
    dist = float(np.linalg.norm(diff))
    return dist / np.sqrt(diff.size) if rms else dist


class SimilarityPool:
    """Normalized phenotypes stacked in one matrix for fast distance checks."""

    def __init__(self, phenotypes: Iterable[Phenotype] = (), rms: bool = True):
        self.rms = rms
        self._rows: list[np.ndarray] = []
        self.grid: np.ndarray | None = None
        for ph in phenotypes:
            self.add(ph)

    def add(self, ph: Phenotype) -> None:
        if self.grid is None:
            self.grid = ph.grid
        elif not np.array_equal(self.grid, ph.grid):
            raise ValueError("phenotypes use different grids")
        self._rows.append(normalize_phenotype(ph).values)

    def __len__(self) -> int:
        return len(self._rows)

    def min_distance(self, ph: Phenotype) -> float:
        if not self._rows:
            return float("inf")
        if not np.array_equal(self.grid, ph.grid):
            raise ValueError("phenotypes use different grids")
        diff = np.asarray(self._rows) - normalize_phenotype(ph).values
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        if self.rms:
            dist = dist / np.sqrt(diff.shape[1])
        return float(dist.min())


def too_similar(ph: Phenotype, pool, threshold: float = SIMILARITY_THRESHOLD,
                rms: bool = True) -> bool:
    if not isinstance(pool, SimilarityPool):
        pool = SimilarityPool(pool, rms=rms)
    return pool.min_distance(ph) < threshold


def integrity_check(graph: LossGraph, pool=(), *, threshold: float = SIMILARITY_THRESHOLD,
                    rms: bool = True, tolerance: float = CLASSIFY_TOL) -> IntegrityVerdict:
    """Run every check in order and report the first failure.

    ``pool`` is a sequence of phenotypes or a :class:`SimilarityPool`.
    """
    if has_cycle(graph):
        return IntegrityVerdict(False, "cycle", graph.sign)
    if not inputs_present(graph):
        return IntegrityVerdict(False, "missing_input", graph.sign)
    ph = phenotype(graph)
    if not ph.finite:
        return IntegrityVerdict(False, "nonfinite", graph.sign, graph, ph)
    cls = classify(ph, tolerance)
    if cls.tag in (MULTIMODAL, DEGENERATE):
        return IntegrityVerdict(False, "multimodal", graph.sign, graph, ph, cls)
    oriented, cls = orient(graph, cls)
    if oriented is not graph:
        ph = Phenotype(ph.grid, -ph.values)
    if near_half_reject(cls):
        return IntegrityVerdict(False, "optimum_near_half", oriented.sign, oriented, ph, cls)
    if too_similar(ph, pool, threshold, rms):
        return IntegrityVerdict(False, "too_similar", oriented.sign, oriented, ph, cls)
    return IntegrityVerdict(True, "ok", oriented.sign, oriented, ph, cls)


class VerdictLog:
    """CSV sink with rows ``iteration, reason, expression``."""

    def __init__(self, path: str | Path, append: bool = False):
        self.path = Path(path)
        new = not (append and self.path.exists())
        self._fh = open(self.path, "a" if append else "w", newline="")
        self._w = csv.writer(self._fh)
        if new:
            self._w.writerow(["iteration", "reason", "expression"])

    def write(self, iteration: int, verdict: IntegrityVerdict, graph: LossGraph) -> None:
        self._w.writerow([iteration, verdict.reason, to_expression(verdict.graph or graph)])

    def tell(self) -> int:
        """Byte length written so far, used to truncate on resume."""
        self._fh.flush()
        return self._fh.tell()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

