"""Command-line drivers.

Exit codes: 0 success or accepted, 1 domain rejection, 2 usage or I/O error.
Genotype arguments accept a built-in reference name (``ce``, ``neuroloss1``,
``ce_smoothed(0.1)``...), a genotype JSON file, or ``FILE#N`` for the N-th
entry of an ``archive.json`` (by fitness) or an elimination round file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from lossforge import evolve as ev
from lossforge.config import ConfigError, RunConfig, load_config, train_config
from lossforge.data import LoadError
from lossforge.graph import (LossGraph, ParseError, from_document, load,
                             normalize_phenotype, phenotype, to_expression, write_phenotype_csv)
from lossforge.integrity import VerdictLog, classify, integrity_check
from lossforge.protocol import compare, eliminate, fidelity_study, write_ladder
from lossforge.references import reference_loss
from lossforge.surrogate import make_fitness, make_proxy_fitness, train, train_network

log = logging.getLogger("lossforge")

EXIT_OK, EXIT_REJECTED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# --- helpers -----------------------------------------------------------------

def _dump(doc, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n")


def _read_json(path: Path, what: str):
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"{what}: no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _archive(path: Path) -> list[ev.Individual]:
    doc = _read_json(path, "archive")
    try:
        return [ev.Individual.from_dict(d) for d in doc["individuals"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: not an archive file ({exc})") from None


def resolve_genotype(spec: str, base: Path | None = None) -> LossGraph:
    """Reference name, genotype file, or ``FILE#N`` into an archive or round file."""
    try:
        return reference_loss(spec)
    except ValueError:
        pass
    text, _, index = spec.partition("#")
    path = Path(text)
    if base is not None and not path.is_absolute() and not path.exists():
        path = base / path
    if not path.exists():
        raise UsageError(f"genotype: not a built-in loss or file: {spec}")
    if not index:
        return load(path)
    try:
        rank = int(index)
    except ValueError:
        raise UsageError(f"genotype: bad entry index in {spec!r}") from None
    doc = _read_json(path, "genotype")
    if isinstance(doc, dict) and "survivors" in doc:
        entries = [s["genotype"] for s in doc["survivors"]]
    elif isinstance(doc, dict) and "individuals" in doc:
        entries = [i.to_dict()["genotype"] for i in ev.best_of(_archive(path), len(doc["individuals"]))]
    else:
        raise UsageError(f"{path}: '#N' needs an archive or elimination round file")
    if not 1 <= rank <= len(entries):
        raise UsageError(f"{spec}: index out of range 1..{len(entries)}")
    return from_document(entries[rank - 1])


def _losses(entries: list, base: Path) -> list[tuple[str, LossGraph]]:
    out = []
    for e in entries:
        if isinstance(e, str):
            name, spec = e, e
        elif isinstance(e, dict) and set(e) == {"name", "genotype"}:
            name, spec = e["name"], e["genotype"]
        else:
            raise ConfigError(f"losses: expected a name or {{name, genotype}}, got {e!r}")
        out.append((name, resolve_genotype(spec, base)))
    return out


def _prepare(args, cfg: RunConfig):
    """Load the dataset before anything is written, then create the output dir."""
    cfg.dataset.check_files()
    dataset = cfg.dataset.load(cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return dataset, out


def _write_run_config(cfg: RunConfig, out: Path) -> None:
    _dump(cfg.to_dict(), out / "run_config.json")


# --- commands -------------------------------------------------------------------

def cmd_evolve(args, cfg: RunConfig) -> int:
    checkpoint = Path(args.out) / "checkpoint.json"
    if args.resume and not checkpoint.is_file():
        raise UsageError(f"--resume: no checkpoint at {checkpoint}")
    dataset, out = _prepare(args, cfg)
    fitness = make_fitness(dataset, cfg.train)
    initial = make_proxy_fitness(dataset, cfg.train) if cfg.initial_fitness == "proxy" else fitness
    integrity_path = out / "integrity.csv"
    state = None
    if args.resume:
        state = ev.load_checkpoint(checkpoint)
        if state.verdict_offset is not None and integrity_path.exists():
            with open(integrity_path, "r+b") as fh:
                fh.truncate(state.verdict_offset)
        log.info("resuming at iteration %d", state.iteration)
    _write_run_config(cfg, out)

    def progress(row):
        log.info("iteration %d best %.4f mean %.4f", row["iteration"], row["best"], row["mean"])

    with VerdictLog(integrity_path, append=args.resume) as verdicts:
        report = ev.run_evolution(cfg.evolve, fitness, initial_fitness_fn=initial, state=state,
                                  checkpoint_path=checkpoint, verdicts=verdicts,
                                  on_iteration=progress, threads=args.threads)
    ev.write_history_csv(report.history, out / "iterations.csv")
    _dump({"individuals": [dict(i.to_dict(), expression=to_expression(i.graph))
                           for i in report.archive]}, out / "archive.json")
    top = report.top(10)
    _dump({"config": cfg.to_dict(), "iterations": len(report.history),
           "archive_size": len(report.archive), "counters": report.counters,
           "best_fitness": top[0].fitness if top else None,
           "population": [i.birth for i in report.population],
           "top": [dict(i.to_dict(), expression=to_expression(i.graph)) for i in top]},
          out / "report.json")
    print(f"best fitness {top[0].fitness:.4f}: {to_expression(top[0].graph)}")
    return EXIT_OK


def cmd_check(args, cfg: RunConfig) -> int:
    graph = resolve_genotype(args.genotype)
    verdict = integrity_check(graph)
    if verdict.accepted:
        print(f"accepted: {to_expression(verdict.graph)}")
        return EXIT_OK
    print(f"rejected: {verdict.reason}")
    if verdict.graph is not None:
        print(f"expression: {to_expression(verdict.graph)}")
    return EXIT_REJECTED


def cmd_phenotype(args, cfg: RunConfig) -> int:
    graph = resolve_genotype(args.genotype)
    verdict = integrity_check(graph)
    if verdict.reason in ("cycle", "missing_input", "nonfinite"):
        print(f"rejected: {verdict.reason}")
        return EXIT_REJECTED
    ph = phenotype(graph)
    target = Path(args.csv) if args.csv else Path(args.out) / "phenotype.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_phenotype_csv(ph, target)
    write_phenotype_csv(normalize_phenotype(ph), target.with_name(target.stem + "_normalized.csv"))
    cls = classify(ph)
    argmin = float(ph.grid[int(ph.values.argmin())])
    print(f"{cls.tag}: argmin p = {argmin!r} ({len(ph.grid)} points) -> {target}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    graph = resolve_genotype(args.genotype or cfg.loss, cfg.base_dir)
    dataset, out = _prepare(args, cfg)
    _write_run_config(cfg, out)
    run, _ = train_network(None, dataset, graph, cfg.train)
    run.write_csv(out / "curves.csv")
    _dump({"loss": args.genotype or cfg.loss, "expression": to_expression(graph),
           "best_val_acc": run.best_val_acc, "final_train_acc": run.final_train_acc,
           "stop_reason": run.stop_reason, "last_step": run.steps[-1]}, out / "result.json")
    print(f"best validation accuracy {run.best_val_acc:.4f} ({run.stop_reason})")
    return EXIT_OK


def cmd_eliminate(args, cfg: RunConfig) -> int:
    plan = cfg.elimination.build()
    archive_path = Path(cfg.elimination.archive or Path(args.out) / "archive.json")
    archive = _archive(archive_path)
    dataset, out = _prepare(args, cfg)

    def trainer(graph, steps):
        return train(None, dataset, graph, cfg.train, steps=steps).best_val_acc

    try:
        ladder = eliminate(archive, plan, trainer, threads=args.threads)
    except ValueError as exc:
        raise UsageError(f"elimination: {exc}") from None
    _write_run_config(cfg, out)
    write_ladder(ladder, plan, out)
    for r, ranked in enumerate(ladder, start=1):
        print(f"round {r}: best {ranked[0].score:.4f} of {len(ranked)}")
    print(f"winner: {to_expression(ladder[-1][0].individual.graph)}")
    return EXIT_OK


def cmd_compare(args, cfg: RunConfig) -> int:
    spec = cfg.compare
    losses = _losses(spec.losses, cfg.base_dir)
    dataset, out = _prepare(args, cfg)
    try:
        report = compare(losses, dataset, spec.runs, cfg.train, spec.baseline,
                         alternative=spec.alternative, threads=args.threads)
    except ValueError as exc:
        raise UsageError(f"compare: {exc}") from None
    _write_run_config(cfg, out)
    report.write_csv(out / "comparison.csv")
    for row in report.rows:
        p = "n/a" if row.p_vs_baseline is None else f"{row.p_vs_baseline:.4g}"
        print(f"{row.name}: {row.mean:.4f} +- {row.std:.4f} over {row.runs} runs, p = {p}")
    return EXIT_OK


def cmd_fidelity(args, cfg: RunConfig) -> int:
    spec = cfg.fidelity
    losses = _losses(spec.losses, cfg.base_dir)
    cheap = [train_config(cfg.train, c, f"fidelity.cheap[{i}]") for i, c in enumerate(spec.cheap)]
    expensive = train_config(cfg.train, spec.expensive, "fidelity.expensive")
    dataset, out = _prepare(args, cfg)
    try:
        result = fidelity_study(losses, cheap, expensive, dataset, threads=args.threads)
    except ValueError as exc:
        raise UsageError(f"fidelity: {exc}") from None
    _write_run_config(cfg, out)
    result.write_csv(out / "fidelity.csv")
    for i, tau in enumerate(result.taus):
        print(f"cheap_{i}: tau = {'undefined' if tau is None else f'{tau:.4f}'}")
    return EXIT_OK


COMMANDS = {"evolve": cmd_evolve, "check": cmd_check, "phenotype": cmd_phenotype,
            "train": cmd_train, "eliminate": cmd_eliminate, "compare": cmd_compare,
            "fidelity": cmd_fidelity}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--resume", action="store_true", help="continue from <out>/checkpoint.json")
    common.add_argument("--threads", type=int, default=1, help="worker threads for independent trainings")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="lossforge", description="Neural loss function search.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("evolve", parents=[common], help="run regularized evolution")
    p = sub.add_parser("check", parents=[common], help="integrity-check a genotype")
    p.add_argument("genotype")
    p = sub.add_parser("phenotype", parents=[common], help="export the binary phenotype as CSV")
    p.add_argument("genotype")
    p.add_argument("csv", nargs="?", help="output CSV (default: <out>/phenotype.csv)")
    p = sub.add_parser("train", parents=[common], help="train the surrogate with one loss")
    p.add_argument("genotype", nargs="?", help="loss to train (default: config 'loss')")
    sub.add_parser("eliminate", parents=[common], help="staged elimination over an archive")
    sub.add_parser("compare", parents=[common], help="repeated runs and Welch tests")
    sub.add_parser("fidelity", parents=[common], help="rank correlation of cheap vs expensive runs")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        if args.resume and args.command != "evolve":
            raise UsageError("--resume only applies to evolve")
        cfg = load_config(args.config, args.seed)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError, ParseError, LoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
