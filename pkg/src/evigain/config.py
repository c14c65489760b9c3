"""TOML application configuration with strict key validation.

Every command reads one optional config file; CLI flags override file
values.  Unknown keys are rejected with the offending key named, so a
typo never silently falls back to a default.  The API key is referenced
by environment-variable name only and never appears in the file or on
the command line.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields as dataclass_fields
from pathlib import Path
from typing import Any

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib  # type: ignore[no-redef]

from .confidence import ConfidenceStrategy, IdfTable
from .errors import ConfigError
from .mig import LabelingConfig
from .pipeline import (
    DEFAULT_BLOCK_SEPARATOR,
    DEFAULT_BLOCK_TEMPLATE,
    DEFAULT_CONTEXT_TEMPLATE,
    DEFAULT_EMPTY_CONTEXT_TEMPLATE,
    ContextTemplate,
)
from .reranker import TrainConfig
from .teacher import (
    DEFAULT_PROMPT_TEMPLATE,
    EMPTY_DOC_PROMPT_TEMPLATE,
    ClientOptions,
    HttpTeacher,
    MockTeacher,
    MockTeacherParams,
)


@dataclass
class TeacherSettings:
    provider: str = "mock"  # "mock" | "http"
    endpoint: str = ""
    api_key_env: str = "EVIGAIN_API_KEY"
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    empty_doc_template: str = EMPTY_DOC_PROMPT_TEMPLATE
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5
    max_in_flight: int = 4
    mock: MockTeacherParams = field(default_factory=MockTeacherParams)


@dataclass
class ConfidenceSettings:
    kind: str = "positional"
    k: float = 0.2
    c: float = 1.5
    peak: float = 5.0
    peak_mode: str = "fixed"
    normalize_weights: bool = False
    tau_freq: float = 0.15
    idf_path: str = ""


@dataclass
class LabelingSettings:
    b1: float = 0.2
    b2: float = -0.2
    balance: bool = True


@dataclass
class TrainSettings:
    alpha: float = 0.74
    sigma: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 32
    pair_cap_per_query: int = 100
    optimizer: str = "adam"
    architecture: str = "linear"
    hidden_units: int = 8
    pair_policy: str = "label"
    mig_margin: float = 0.0
    ranknet_mean: bool = False


@dataclass
class PipelineSettings:
    m: int = 20
    k: int = 3
    ndcg_k: int = 3
    context_template: str = DEFAULT_CONTEXT_TEMPLATE
    empty_context_template: str = DEFAULT_EMPTY_CONTEXT_TEMPLATE
    block_template: str = DEFAULT_BLOCK_TEMPLATE
    block_separator: str = DEFAULT_BLOCK_SEPARATOR


@dataclass
class AppConfig:
    seed: int = 0
    teacher: TeacherSettings = field(default_factory=TeacherSettings)
    confidence: ConfidenceSettings = field(default_factory=ConfidenceSettings)
    labeling: LabelingSettings = field(default_factory=LabelingSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)


def _fill_dataclass(cls, data: dict, where: str):
    allowed = {f.name for f in dataclass_fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        dotted = f"{where}.{key}" if where else key
        if key not in allowed:
            raise ConfigError(f"unknown config key {dotted}")
        if isinstance(value, dict):
            nested_cls = _NESTED.get(key)
            if nested_cls is None:
                raise ConfigError(f"config key {dotted} does not take a table")
            kwargs[key] = _fill_dataclass(nested_cls, value, dotted)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad config section {where or '(root)'}: {e}") from e


_NESTED = {
    "teacher": TeacherSettings,
    "confidence": ConfidenceSettings,
    "labeling": LabelingSettings,
    "train": TrainSettings,
    "pipeline": PipelineSettings,
    "mock": MockTeacherParams,
}


def load_config(path: str | None) -> AppConfig:
    """Parse and validate the TOML config; None gives all defaults."""
    if path is None:
        return AppConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = tomllib.loads(p.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config file {p} is not valid TOML: {e}") from e
    return _fill_dataclass(AppConfig, data, "")


# -- factories --------------------------------------------------------------


def make_provider(cfg: AppConfig):
    t = cfg.teacher
    if t.provider == "mock":
        return MockTeacher(t.mock)
    if t.provider == "http":
        if not t.endpoint:
            raise ConfigError("teacher.endpoint is required for the http provider")
        opts = ClientOptions(
            timeout=t.timeout,
            max_retries=t.max_retries,
            backoff_base=t.backoff_base,
            max_in_flight=t.max_in_flight,
            api_key_env=t.api_key_env,
            prompt_template=t.prompt_template,
            empty_doc_template=t.empty_doc_template,
        )
        return HttpTeacher(t.endpoint, opts=opts)
    raise ConfigError(f"unknown teacher.provider {t.provider!r}")


def make_strategy(cfg: AppConfig) -> ConfidenceStrategy:
    c = cfg.confidence
    idf = None
    if c.kind == "semantic_anchor":
        if not c.idf_path:
            raise ConfigError("confidence.idf_path is required for the semantic_anchor strategy")
        idf = IdfTable.load(c.idf_path)
    return ConfidenceStrategy(
        kind=c.kind,
        k=c.k,
        c=c.c,
        peak=c.peak,
        peak_mode=c.peak_mode,
        normalize_weights=c.normalize_weights,
        tau_freq=c.tau_freq,
        idf=idf,
    )


def make_labeling(cfg: AppConfig) -> LabelingConfig:
    return LabelingConfig(b1=cfg.labeling.b1, b2=cfg.labeling.b2)


def make_train_config(cfg: AppConfig, seed: int | None = None, alpha: float | None = None) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        alpha=t.alpha if alpha is None else alpha,
        sigma=t.sigma,
        learning_rate=t.learning_rate,
        epochs=t.epochs,
        batch_size=t.batch_size,
        pair_cap_per_query=t.pair_cap_per_query,
        seed=cfg.seed if seed is None else seed,
        optimizer=t.optimizer,
        architecture=t.architecture,
        hidden_units=t.hidden_units,
        pair_policy=t.pair_policy,
        mig_margin=t.mig_margin,
        ranknet_mean=t.ranknet_mean,
    )


def make_context_template(cfg: AppConfig) -> ContextTemplate:
    p = cfg.pipeline
    return ContextTemplate(
        template=p.context_template,
        empty_template=p.empty_context_template,
        block_template=p.block_template,
        block_separator=p.block_separator,
    )
