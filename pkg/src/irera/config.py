"""Declarative run configuration: one YAML/JSON file drives every command.

Secrets never live in the config; HTTP backends read their bearer token from
the environment variable named by `api_key_env`. Validation collects every
offending key before raising, so a config is fixed in one pass.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path

import yaml

from .data import load_dataset, load_ontology
from .errors import ConfigError
from .lm.backends import BackendParams, BackendSpec, EMBED_SCRIPTED, CHAT_SCRIPTED, LMClient
from .lm.cache import DiskCache
from .lm.ledger import CallLedger
from .lm.mocks import OneHotEmbedder, glass_box_chat
from .program import InContextModule, InferRetrieveRank
from .retrieval import EmbeddingIndex, LabelOntology
from .signatures import PRESETS, Signature, resolve_signature

TASKS = ("biodex", "esco", "custom")

TASK_SIGNATURES = {
    "biodex": {"infer": "biodex-infer", "rank": "biodex-rank"},
    "esco": {"infer": "esco-infer", "rank": "esco-rank"},
}

# validated prior-reweighting strengths per task; custom tasks default to 0
TASK_PRIOR_STRENGTH = {"biodex": 1000.0, "esco": 0.0, "custom": 0.0}

GLASS_BOX_PREFIX = "glass-box:"
ONE_HOT_SCRIPT = "one-hot"


@dataclass
class RunPaths:
    ontology: Path
    cache_dir: Path
    priors: Path | None = None
    embeddings: Path | None = None
    train: Path | None = None
    validation: Path | None = None
    test: Path | None = None
    artifact_out: Path | None = None
    report_out: Path | None = None


@dataclass
class RunConfig:
    task: str
    paths: RunPaths
    backends: dict[str, BackendSpec]
    signature_refs: dict[str, object]
    prior_strength: float = 0.0
    num_options: int = 50
    n: int = 1
    num_programs: int = 10
    max_demos: int = 4
    ks: tuple[int, ...] = (5, 10)
    max_concurrency: int = 4
    rng_seed: int = 0
    metric: str = "rp@10"
    digest: str = ""

    def backend(self, key: str) -> BackendSpec | None:
        return self.backends.get(key)

    def require_backend(self, key: str) -> BackendSpec:
        spec = self.backends.get(key)
        if spec is None:
            raise ConfigError(f"config has no backend for {key!r}")
        return spec


def _parse_backend(key: str, raw: dict, errors: list[str]) -> BackendSpec | None:
    if not isinstance(raw, dict):
        errors.append(f"backends.{key}: must be a mapping")
        return None
    try:
        params = BackendParams(
            temperature=float(raw.get("temperature", 0.0)),
            max_tokens=int(raw.get("max_tokens", 512)),
            n=int(raw.get("n", 1)),
            seed=raw.get("seed"),
        )
        return BackendSpec(
            id=str(raw.get("id", key)),
            kind=str(raw.get("kind", "")),
            model_name=str(raw.get("model_name", "")),
            endpoint=str(raw.get("endpoint", "")),
            script=str(raw.get("script", "")),
            params=params,
            api_key_env=str(raw.get("api_key_env", "OPENAI_API_KEY")),
        )
    except (ValueError, TypeError) as exc:
        errors.append(f"backends.{key}: {exc}")
        return None


def _resolve_module_backends(raw: dict, errors: list[str]) -> dict[str, BackendSpec]:
    """Per-module keys (infer_student, rank_teacher, ...) with plain
    student/teacher as fallbacks for both modules."""
    parsed: dict[str, BackendSpec] = {}
    for key, value in raw.items():
        spec = _parse_backend(key, value, errors)
        if spec is not None:
            parsed[key] = spec
    out: dict[str, BackendSpec] = {}
    for module in ("infer", "rank"):
        for role in ("student", "teacher"):
            spec = parsed.get(f"{module}_{role}", parsed.get(role))
            if spec is not None:
                out[f"{module}_{role}"] = spec
    if "embedder" in parsed:
        out["embedder"] = parsed["embedder"]
    return out


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate a config file; raises ConfigError listing every
    offending key at once."""
    raw_bytes = Path(path).read_bytes()
    try:
        data = yaml.safe_load(raw_bytes)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")

    errors: list[str] = []
    task = str(data.get("task", "custom"))
    if task not in TASKS:
        errors.append(f"task: must be one of {TASKS}, got {task!r}")
        task = "custom"

    paths_raw = data.get("paths", {})
    if not isinstance(paths_raw, dict):
        errors.append("paths: must be a mapping")
        paths_raw = {}

    def path_of(key: str) -> Path | None:
        value = paths_raw.get(key)
        return Path(value) if value else None

    ontology_path = path_of("ontology")
    if ontology_path is None:
        errors.append("paths.ontology: required")
    cache_dir = path_of("cache_dir")
    if cache_dir is None:
        errors.append("paths.cache_dir: required")

    paths = RunPaths(
        ontology=ontology_path or Path("."),
        cache_dir=cache_dir or Path("."),
        priors=path_of("priors"),
        embeddings=path_of("embeddings"),
        train=path_of("train"),
        validation=path_of("validation"),
        test=path_of("test"),
        artifact_out=path_of("artifact_out"),
        report_out=path_of("report_out"),
    )
    # inputs must exist at load; outputs and the cache need not
    for key in ("ontology", "priors", "train", "validation", "test"):
        value = getattr(paths, key)
        if value is not None and not value.exists():
            errors.append(f"paths.{key}: {value} does not exist")

    backends_raw = data.get("backends", {})
    if not isinstance(backends_raw, dict):
        errors.append("backends: must be a mapping")
        backends_raw = {}
    backends = _resolve_module_backends(backends_raw, errors)

    sig_raw = data.get("signatures", {}) or {}
    if not isinstance(sig_raw, dict):
        errors.append("signatures: must be a mapping with 'infer' and 'rank'")
        sig_raw = {}
    signature_refs = dict(TASK_SIGNATURES.get(task, {}))
    signature_refs.update(sig_raw)
    for module in ("infer", "rank"):
        if module not in signature_refs:
            errors.append(f"signatures.{module}: required for task {task!r}")

    hp = data.get("hyperparameters", {}) or {}
    if not isinstance(hp, dict):
        errors.append("hyperparameters: must be a mapping")
        hp = {}

    def number(key: str, default, cast, minimum=None):
        try:
            value = cast(hp.get(key, default))
        except (TypeError, ValueError):
            errors.append(f"hyperparameters.{key}: not a valid {cast.__name__}")
            return default
        if minimum is not None and value < minimum:
            errors.append(f"hyperparameters.{key}: must be >= {minimum}, got {value}")
            return default
        return value

    prior_strength = number("prior_strength", TASK_PRIOR_STRENGTH[task], float, 0.0)
    num_options = number("num_options", 50, int, 1)
    n = number("n", 1, int, 1)
    num_programs = number("num_programs", 10, int, 1)
    max_demos = number("max_demos", 4, int, 1)
    max_concurrency = number("max_concurrency", 4, int, 1)
    rng_seed = number("rng_seed", 0, int)
    metric = str(hp.get("metric", "rp@10"))
    ks_raw = hp.get("ks", [5, 10])
    try:
        ks = tuple(sorted({int(k) for k in ks_raw}))
        if any(k <= 0 for k in ks) or not ks:
            raise ValueError
    except (TypeError, ValueError):
        errors.append(f"hyperparameters.ks: must be positive integers, got {ks_raw!r}")
        ks = (5, 10)

    if errors:
        raise ConfigError(f"{path}: invalid config:\n  - " + "\n  - ".join(errors))

    return RunConfig(
        task=task,
        paths=paths,
        backends=backends,
        signature_refs=signature_refs,
        prior_strength=prior_strength,
        num_options=num_options,
        n=n,
        num_programs=num_programs,
        max_demos=max_demos,
        ks=ks,
        max_concurrency=max_concurrency,
        rng_seed=rng_seed,
        metric=metric,
        digest=hashlib.sha256(raw_bytes).hexdigest(),
    )


# -- engine assembly -----------------------------------------------------------


@dataclass
class Engine:
    """Everything a command needs, wired from one config."""

    config: RunConfig
    client: LMClient
    ontology: LabelOntology
    index: EmbeddingIndex | None = None
    program: InferRetrieveRank | None = None


def build_client(cfg: RunConfig) -> LMClient:
    return LMClient(DiskCache(cfg.paths.cache_dir), CallLedger(),
                    max_concurrency=cfg.max_concurrency)


def _register_scripted(cfg: RunConfig, client, ontology: LabelOntology) -> None:
    """In-process runtimes for scripted specs with special script values:
    'one-hot' embeds by vocabulary basis vectors; 'glass-box:DATASET' answers
    with the gold labels of the dataset example found in the prompt."""
    for spec in set(cfg.backends.values()):
        if spec.kind == EMBED_SCRIPTED and spec.script == ONE_HOT_SCRIPT:
            client.register(spec.id, OneHotEmbedder(ontology.names))
        elif spec.kind == CHAT_SCRIPTED and spec.script.startswith(GLASS_BOX_PREFIX):
            dataset_path = spec.script[len(GLASS_BOX_PREFIX):]
            load = load_dataset(dataset_path, ontology, require_labels=True)
            client.register(spec.id, glass_box_chat(load.examples, ontology))


def _module_signature(cfg: RunConfig, module: str) -> tuple[Signature, str]:
    ref = cfg.signature_refs[module]
    sig = resolve_signature(ref)
    preset = ref if isinstance(ref, str) and ref in PRESETS else ""
    return sig, preset


def _with_n(spec: BackendSpec, n: int) -> BackendSpec:
    if spec.params.n == n:
        return spec
    return dataclasses.replace(spec, params=dataclasses.replace(spec.params, n=n))


def build_engine(cfg: RunConfig, *, need_index: bool = True,
                 need_program: bool = True) -> Engine:
    """Load the ontology, attach the index, and assemble the program."""
    ontology = load_ontology(cfg.paths.ontology, cfg.paths.priors)
    client = build_client(cfg)
    _register_scripted(cfg, client, ontology)

    index = None
    if need_index:
        if cfg.paths.embeddings is None or not cfg.paths.embeddings.exists():
            raise ConfigError(
                f"paths.embeddings: {cfg.paths.embeddings} not found; run `irera index build` first")
        index = EmbeddingIndex.load(cfg.paths.embeddings)
        if len(index) != len(ontology):
            raise ConfigError(
                f"embedding index has {len(index)} rows but the ontology has {len(ontology)} labels")

    program = None
    if need_program:
        infer_sig, infer_preset = _module_signature(cfg, "infer")
        rank_sig, rank_preset = _module_signature(cfg, "rank")
        infer = InContextModule(
            name="infer", signature=infer_sig, signature_name=infer_preset,
            student=_with_n(cfg.require_backend("infer_student"), cfg.n),
            teacher=cfg.backend("infer_teacher"))
        rank = InContextModule(
            name="rank", signature=rank_sig, signature_name=rank_preset,
            student=cfg.require_backend("rank_student"),
            teacher=cfg.backend("rank_teacher"))
        if index is None:
            raise ConfigError("a program needs an embedding index (paths.embeddings)")
        program = InferRetrieveRank(
            infer=infer, rank=rank, ontology=ontology, index=index,
            embedder=cfg.require_backend("embedder"), client=client,
            prior_strength=cfg.prior_strength, num_options=cfg.num_options)
    return Engine(config=cfg, client=client, ontology=ontology, index=index, program=program)


def embed_fn_for(engine: Engine):
    spec = engine.config.require_backend("embedder")
    return lambda texts: engine.client.embed(spec, texts)
