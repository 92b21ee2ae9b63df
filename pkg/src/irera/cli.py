"""Operator command surface. One declarative config file drives every
subcommand; exit codes are categorized (2 config, 3 data, 4 transport)."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import program as prog
from .config import Engine, RunConfig, build_engine, embed_fn_for, load_run_config
from .data import load_dataset
from .errors import (
    ConfigError,
    DuplicateLabelName,
    EmptyDataset,
    IreraError,
    MalformedRecord,
    MalformedResponse,
    PriorOutOfRange,
    TransportError,
)
from .evaluation import evaluate, evaluation_report, verify_budget
from .lm.cache import DiskCache
from .optimizer import OptimizerConfig, sequential_optimize
from .retrieval import EmbeddingIndex

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRANSPORT = 4

BASELINES = ("prior", "exact", "retrieve")


def _dataset_path(cfg: RunConfig, name: str) -> Path:
    named = {"train": cfg.paths.train, "validation": cfg.paths.validation, "test": cfg.paths.test}
    if name in named:
        if named[name] is None:
            raise ConfigError(f"config has no paths.{name} dataset")
        return named[name]  # type: ignore[return-value]
    path = Path(name)
    if not path.exists():
        raise ConfigError(f"dataset {name!r} is neither a config dataset name nor a file")
    return path


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                    encoding="utf-8")


# -- subcommands ----------------------------------------------------------------


def cmd_index_build(args) -> int:
    cfg = load_run_config(args.config)
    engine = build_engine(cfg, need_index=False, need_program=False)
    out = Path(args.out) if args.out else cfg.paths.embeddings
    if out is None:
        raise ConfigError("no output path: pass --out or set paths.embeddings")
    texts = None
    if args.texts:
        texts = [line for line in Path(args.texts).read_text(encoding="utf-8").splitlines()
                 if line.strip()]
    index = EmbeddingIndex.build(engine.ontology, embed_fn_for(engine), texts=texts)
    out.parent.mkdir(parents=True, exist_ok=True)
    index.save(out)
    print(f"built embedding index: {len(index)} labels x {index.dim} dims -> {out}")
    return EXIT_OK


def _load_program(engine: Engine, artifact_path: str | None) -> tuple[prog.InferRetrieveRank, str]:
    assert engine.program is not None
    if not artifact_path:
        return engine.program, ""
    artifact = prog.load_artifact(artifact_path)
    digest = hashlib.sha256(Path(artifact_path).read_bytes()).hexdigest()
    return prog.apply_artifact(engine.program, artifact), digest


def cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    engine = build_engine(cfg)
    program, _ = _load_program(engine, args.program)

    if args.text is not None:
        texts = [args.text]
    else:
        texts = []
        for lineno, line in enumerate(
                Path(args.input).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            if not isinstance(record, dict) or not isinstance(record.get("text"), str):
                raise MalformedRecord(lineno, "record must be an object with a string 'text'")
            texts.append(record["text"])

    results = []
    for text in texts:
        prediction = program.forward(text, use_rank=not args.infer_retrieve)
        top = [{"id": int(i), "name": engine.ontology.name_of(int(i))}
               for i in prediction.final_order[:args.top]]
        results.append({"text": text, "labels": top, "queries": prediction.queries,
                        "failed": prediction.failed})

    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for row in results:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
        print(f"wrote {len(results)} prediction(s) to {args.out}")
    else:
        for row in results:
            names = ", ".join(entry["name"] for entry in row["labels"])
            print(f"{names}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = load_run_config(args.config)
    engine = build_engine(cfg)
    if cfg.paths.train is None or cfg.paths.validation is None:
        raise ConfigError("optimize needs paths.train and paths.validation")
    train = load_dataset(cfg.paths.train, engine.ontology, require_labels=False).examples
    validation = load_dataset(cfg.paths.validation, engine.ontology, require_labels=True).examples

    ocfg = OptimizerConfig(
        train_inputs=train, validation=validation,
        num_programs=cfg.num_programs, max_demos=cfg.max_demos,
        rng_seed=cfg.rng_seed, metric=cfg.metric, max_workers=cfg.max_concurrency)
    result = sequential_optimize(engine.program, ocfg, config_digest=cfg.digest)

    artifact_out = Path(args.artifact_out) if args.artifact_out else (
        cfg.paths.artifact_out or Path("irera-program.json"))
    artifact_out.parent.mkdir(parents=True, exist_ok=True)
    digest = prog.save_artifact(artifact_out, prog.program_artifact(result.program, cfg.digest))
    budget_out = Path(args.budget_out) if args.budget_out else artifact_out.with_suffix(".budget.json")
    _write_json(budget_out, result.budget)

    for stage in result.stages:
        if stage.error:
            print(f"stage[{stage.module}] FAILED: {stage.error}")
        else:
            print(f"stage[{stage.module}] selected candidate {stage.selected_candidate} "
                  f"({cfg.metric}={stage.score:.4f}, zero-shot {stage.zero_shot_score:.4f}, "
                  f"{stage.num_usable_traces} usable traces)")
    print(f"compiled program -> {artifact_out} (sha256 {digest[:12]})")
    print(f"budget report    -> {budget_out}")
    return EXIT_FAILURE if any(s.error for s in result.stages) else EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args.config)
    need_program = args.baseline is None
    need_index = need_program or args.baseline == "retrieve"
    engine = build_engine(cfg, need_index=need_index, need_program=need_program)
    examples = load_dataset(_dataset_path(cfg, args.dataset), engine.ontology,
                            require_labels=True).examples

    digest = ""
    if args.baseline == "prior":
        forward = lambda text: prog.baseline_prior(engine.ontology)  # noqa: E731
        name = "baseline-prior"
    elif args.baseline == "exact":
        forward = lambda text: prog.baseline_exact_match(engine.ontology, text)  # noqa: E731
        name = "baseline-exact-match"
    elif args.baseline == "retrieve":
        embed = embed_fn_for(engine)
        forward = lambda text: prog.baseline_naive_retrieve(  # noqa: E731
            engine.ontology, engine.index, embed, text)
        name = "baseline-naive-retrieve"
    else:
        program, digest = _load_program(engine, args.program)
        use_rank = not args.infer_retrieve
        forward = lambda text: program.forward(text, use_rank=use_rank)  # noqa: E731
        name = "infer-retrieve" if args.infer_retrieve else "infer-retrieve-rank"

    report = evaluate(forward, examples, ks=cfg.ks, num_labels=len(engine.ontology),
                      ledger=engine.client.ledger, max_workers=cfg.max_concurrency)
    print(f"program: {name}")
    print(report.render_text())

    out = Path(args.report_out) if args.report_out else cfg.paths.report_out
    if out is not None:
        _write_json(out, evaluation_report(report, dataset_id=str(args.dataset),
                                           program_digest=digest))
        print(f"report -> {out}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    args.baseline = args.which
    args.program = None
    args.infer_retrieve = False
    return cmd_evaluate(args)


def cmd_cache_stats(args) -> int:
    cfg = load_run_config(args.config)
    cache = DiskCache(cfg.paths.cache_dir)
    entries = cache.entries()
    total = sum(size for _, size in entries)
    print(f"cache dir: {cfg.paths.cache_dir}")
    print(f"entries: {len(entries)}   total bytes: {total}")
    for digest, size in entries:
        print(f"  {digest}  {size}")
    return EXIT_OK


def cmd_budget_check(args) -> int:
    cfg = load_run_config(args.config)
    budget = json.loads(Path(args.report).read_text(encoding="utf-8"))
    expected = budget.get("expected", {})
    ok, checks = verify_budget(
        budget,
        train_size=int(expected.get("train_size", 0)),
        val_size=int(expected.get("validation_size", 0)),
        num_programs=int(expected.get("num_programs", cfg.num_programs)),
    )
    for check in checks:
        print(check.render())
    print("budget: " + ("PASS" if ok else "FAIL"))
    return EXIT_OK if ok else EXIT_FAILURE


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irera",
        description="Extreme multi-label classification with the Infer-Retrieve-Rank program.")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="embedding index maintenance")
    index_sub = p_index.add_subparsers(dest="index_command", required=True)
    p_build = index_sub.add_parser("build", help="embed ontology labels into an index file")
    p_build.add_argument("--config", required=True)
    p_build.add_argument("--texts", help="optional file with one embedding text per label")
    p_build.add_argument("--out", help="output path (default: paths.embeddings)")
    p_build.set_defaults(fn=cmd_index_build)

    p_run = sub.add_parser("run", help="predict labels for raw inputs")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--program", help="compiled program artifact")
    group = p_run.add_mutually_exclusive_group(required=True)
    group.add_argument("--text", help="a single input document")
    group.add_argument("--input", help="JSONL file of {\"text\": ...} records")
    p_run.add_argument("--infer-retrieve", action="store_true",
                       help="ablation: skip the rank module")
    p_run.add_argument("--top", type=int, default=10)
    p_run.add_argument("--out", help="write JSONL predictions here")
    p_run.set_defaults(fn=cmd_run)

    p_opt = sub.add_parser("optimize", help="bootstrap demos and compile the program")
    p_opt.add_argument("--config", required=True)
    p_opt.add_argument("--artifact-out")
    p_opt.add_argument("--budget-out")
    p_opt.set_defaults(fn=cmd_optimize)

    p_eval = sub.add_parser("evaluate", help="score a program or baseline on a dataset")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--dataset", required=True,
                        help="train | validation | test | path to a JSONL file")
    p_eval.add_argument("--program", help="compiled program artifact")
    p_eval.add_argument("--baseline", choices=BASELINES)
    p_eval.add_argument("--infer-retrieve", action="store_true",
                        help="ablation: skip the rank module")
    p_eval.add_argument("--report-out")
    p_eval.set_defaults(fn=cmd_evaluate)

    p_base = sub.add_parser("baseline", help="evaluate a baseline (shorthand)")
    p_base.add_argument("which", choices=BASELINES)
    p_base.add_argument("--config", required=True)
    p_base.add_argument("--dataset", required=True)
    p_base.add_argument("--report-out")
    p_base.set_defaults(fn=cmd_baseline)

    p_cache = sub.add_parser("cache", help="inspect the call cache")
    cache_sub = p_cache.add_subparsers(dest="cache_command", required=True)
    p_stats = cache_sub.add_parser("stats", help="list cache entries and sizes")
    p_stats.add_argument("--config", required=True)
    p_stats.set_defaults(fn=cmd_cache_stats)

    p_budget = sub.add_parser("budget", help="verify cost accounting")
    budget_sub = p_budget.add_subparsers(dest="budget_command", required=True)
    p_check = budget_sub.add_parser("check", help="check a budget report against the cost model")
    p_check.add_argument("--config", required=True)
    p_check.add_argument("--report", required=True, help="budget report from `irera optimize`")
    p_check.set_defaults(fn=cmd_budget_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MalformedRecord, EmptyDataset, DuplicateLabelName, PriorOutOfRange) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TransportError, MalformedResponse) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except IreraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
