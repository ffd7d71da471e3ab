"""Run configuration: one JSON file, validated up front.

Seed precedence is ``--seed``, then ``LOSSFORGE_SEED``, then the file.
Relative paths inside the file resolve against the file's directory.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from lossforge.data import Dataset, generate_synthetic, load_csv, load_idx
from lossforge.evolve import EvolveConfig
from lossforge.protocol import EliminationPlan, desk_plan, paper_plan
from lossforge.surrogate import TrainConfig

SEED_ENV = "LOSSFORGE_SEED"


class ConfigError(ValueError):
    pass


_NOISE = {"blobs": 0.3, "spirals": 0.05}


@dataclass
class DatasetSpec:
    kind: str = "spirals"             # blobs, spirals, csv or idx
    path: Optional[str] = None        # csv file or IDX image file
    labels: Optional[str] = None      # IDX label file (derived from path if omitted)
    n: int = 3000
    k: int = 3
    d: int = 2
    noise: Optional[float] = None     # 0.3 for blobs, 0.05 for spirals
    val_fraction: float = 0.1
    seed: Optional[int] = None        # defaults to the run seed

    def __post_init__(self):
        if self.kind not in ("blobs", "spirals", "csv", "idx"):
            raise ConfigError(f"dataset.kind: unknown kind {self.kind!r}")
        if self.kind in ("csv", "idx") and not self.path:
            raise ConfigError(f"dataset.path is required for kind {self.kind!r}")

    def load(self, run_seed: int) -> Dataset:
        seed = self.seed if self.seed is not None else run_seed
        if self.kind == "csv":
            return load_csv(self.path, val_fraction=self.val_fraction, seed=seed)
        if self.kind == "idx":
            return load_idx(self.path, self.labels, val_fraction=self.val_fraction, seed=seed)
        noise = self.noise if self.noise is not None else _NOISE[self.kind]
        return generate_synthetic(self.kind, self.n, self.k, self.d, noise, seed,
                                  self.val_fraction)

    def check_files(self) -> None:
        for name in ("path", "labels"):
            value = getattr(self, name)
            if value is not None and not Path(value).is_file():
                raise FileNotFoundError(f"dataset.{name}: no such file: {value}")


@dataclass
class EliminationSpec:
    plan: Any = "desk"                # "desk", "paper" or [[count, steps], ...]
    steps: int = 500                  # base steps for the named plans
    archive: Optional[str] = None     # defaults to <out>/archive.json

    def build(self) -> EliminationPlan:
        if self.plan == "desk":
            return desk_plan(self.steps)
        if self.plan == "paper":
            return paper_plan(self.steps)
        if isinstance(self.plan, list):
            return EliminationPlan(tuple(tuple(r) for r in self.plan))
        raise ConfigError(f"elimination.plan: expected 'desk', 'paper' or a list, got {self.plan!r}")


@dataclass
class CompareSpec:
    losses: list = field(default_factory=lambda: ["ce", "neuroloss1"])
    runs: int = 10
    baseline: str = "ce"
    alternative: str = "two-sided"


@dataclass
class FidelitySpec:
    losses: list = field(default_factory=lambda: ["ce", "neuroloss1", "neuroloss2", "neuroloss3", "bessel"])
    cheap: list = field(default_factory=lambda: [{"steps": 300}, {"steps": 600}])
    expensive: dict = field(default_factory=lambda: {"steps": 2000})


# desk-scale evolution defaults; full-scale numbers are the EvolveConfig defaults
_EVOLVE_DEFAULTS = {"initial_size": 50, "population_size": 16, "tournament_k": 4, "iterations": 100}


@dataclass
class RunConfig:
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    evolve: EvolveConfig = field(default_factory=lambda: EvolveConfig(**_EVOLVE_DEFAULTS))
    initial_fitness: str = "proxy"    # "proxy" or "full"
    loss: str = "ce"                  # genotype for the train command
    elimination: EliminationSpec = field(default_factory=EliminationSpec)
    compare: CompareSpec = field(default_factory=CompareSpec)
    fidelity: FidelitySpec = field(default_factory=FidelitySpec)
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    def resolve(self, path: str | None) -> str | None:
        if path is None:
            return None
        p = Path(path)
        return str(p if p.is_absolute() else self.base_dir / p)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc.pop("base_dir")
        return doc


def _build(cls, doc, where: str, **extra):
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**{**doc, **extra})
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def build_config(doc: dict, base_dir: Path = Path("."), seed: int | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    sections = {"dataset", "train", "evolve", "elimination", "compare", "fidelity"}
    top = {"seed", "initial_fitness", "loss"}
    unknown = sorted(set(doc) - sections - top)
    if unknown:
        raise ConfigError(f"config: unknown key(s) {', '.join(unknown)}")
    env = os.environ.get(SEED_ENV)
    if seed is None and env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}: not an integer: {env!r}") from None
    if seed is None:
        seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
    for section in ("train", "evolve"):
        if "seed" in (doc.get(section) or {}):
            raise ConfigError(f"{section}.seed: set the run seed at the top level")
    evolve_doc = {**_EVOLVE_DEFAULTS, **(doc.get("evolve") or {})}
    cfg = RunConfig(
        seed=seed,
        dataset=_build(DatasetSpec, doc.get("dataset"), "dataset"),
        train=_build(TrainConfig, doc.get("train"), "train", seed=seed),
        evolve=_build(EvolveConfig, evolve_doc, "evolve", seed=seed),
        initial_fitness=doc.get("initial_fitness", "proxy"),
        loss=doc.get("loss", "ce"),
        elimination=_build(EliminationSpec, doc.get("elimination"), "elimination"),
        compare=_build(CompareSpec, doc.get("compare"), "compare"),
        fidelity=_build(FidelitySpec, doc.get("fidelity"), "fidelity"),
        base_dir=base_dir,
    )
    if cfg.initial_fitness not in ("proxy", "full"):
        raise ConfigError("initial_fitness: expected 'proxy' or 'full'")
    if cfg.compare.runs < 2:
        raise ConfigError("compare.runs: need at least 2")
    if cfg.compare.alternative not in ("two-sided", "greater"):
        raise ConfigError("compare.alternative: expected 'two-sided' or 'greater'")
    ds = cfg.dataset
    ds.path, ds.labels = cfg.resolve(ds.path), cfg.resolve(ds.labels)
    cfg.elimination.archive = cfg.resolve(cfg.elimination.archive)
    try:
        cfg.elimination.build()
    except ValueError as exc:
        raise ConfigError(f"elimination.plan: {exc}") from None
    return cfg


def load_config(path: str | Path | None, seed: int | None = None) -> RunConfig:
    if path is None:
        return build_config({}, Path("."), seed)
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return build_config(doc, path.parent, seed)


def train_config(base: TrainConfig, overrides: dict, where: str) -> TrainConfig:
    return _build(TrainConfig, {**asdict(base), **overrides}, where)
