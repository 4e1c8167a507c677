"""Experiment configuration: a YAML document validated into :class:`ExperimentConfig`.

Every section is optional; an empty document is a complete default
``toy-pipeline`` run. Unknown keys, wrong types and out-of-range values are
rejected with the dotted path of the offending key.
"""

from __future__ import annotations

import hashlib
import re
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..exceptions import ConfigError
from ..linalg import RankSelection
from ..masking import BudgetSpec, SelectionStrategy
from ..optimizer import AdamHyperparams
from ..rng import derive_seed
from ..toymodel import EarlyStopConfig, MethodSpec, PipelineConfig

EXPERIMENT_KINDS = ("toy-pipeline", "spectral-study", "perturb-eval", "mask-inspect")
ExperimentKind = Literal["toy-pipeline", "spectral-study", "perturb-eval", "mask-inspect"]
StrategyName = Literal[
    "full", "lift", "lift_structured", "weight_magnitude", "gradient_magnitude", "movement", "random"
]
RankVariantName = Literal["largest", "smallest", "random", "hybrid"]


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads YAML 1.2 floats such as ``1e-3``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+][0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


class DatasetConfig(_Section):
    n_pre: int = Field(5000, ge=2)
    n_ft: int = Field(100, ge=2)
    d: int = Field(512, ge=69)
    h: int = Field(128, ge=1)
    val_fraction: float = Field(0.2, gt=0.0, lt=1.0)


class ModelConfig(_Section):
    activation: Literal["relu", "tanh"] = "relu"
    tune_head: bool = True


class AdamConfig(_Section):
    lr: float = Field(1e-3, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    weight_decay: float = Field(0.0, ge=0.0)
    total_steps: int = Field(1000, ge=0)


class OptimizerConfig(AdamConfig):
    update_mask_interval: Optional[int] = 200

    @field_validator("update_mask_interval")
    @classmethod
    def _interval(cls, v):
        if v is not None and v < 1:
            raise ValueError("update_mask_interval must be ≥ 1")
        return v


class EarlyStopSection(_Section):
    patience: int = Field(20, ge=1)
    min_delta: float = Field(0.0, ge=0.0)


class MethodConfig(_Section):
    name: str = Field(pattern=r"^[A-Za-z0-9_.-]+$")
    strategy: StrategyName
    rank: Optional[int] = Field(None, ge=1)
    rank_variant: RankVariantName = "largest"
    rank_seed: int = 0
    seed: int = 0
    block: int = Field(4, ge=1)
    k: Optional[int] = Field(None, ge=1)
    lora_rank: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _budget(self):
        if self.name == "pretrain":
            raise ValueError("'pretrain' is reserved for the pre-training log")
        if self.strategy == "full":
            if self.k is not None or self.lora_rank is not None:
                raise ValueError("full fine-tuning takes no budget")
            return self
        if (self.k is None) == (self.lora_rank is None):
            raise ValueError("give exactly one of k or lora_rank")
        if self.strategy in ("lift", "lift_structured") and self.rank is None and self.lora_rank is None:
            raise ValueError("lift strategies need rank (defaults to lora_rank when given)")
        if self.rank_variant == "hybrid" and (self.rank or self.lora_rank or 0) < 2:
            raise ValueError("hybrid rank selection needs rank >= 2")
        return self


def _default_methods() -> list[MethodConfig]:
    return [
        MethodConfig(name="full", strategy="full"),
        MethodConfig(name="lift", strategy="lift", lora_rank=8),
        MethodConfig(name="weight_magnitude", strategy="weight_magnitude", lora_rank=8),
        MethodConfig(name="gradient_magnitude", strategy="gradient_magnitude", lora_rank=8),
        MethodConfig(name="random", strategy="random", lora_rank=8),
    ]


class SpectralStudyConfig(_Section):
    dims: list[list[int]] = Field(default_factory=lambda: [[256, 256], [512, 512], [1024, 1024]])
    trials: int = Field(10, ge=1)
    noise_std: float = Field(0.1, gt=0.0)
    lora_rank: int = Field(64, ge=1)
    lift_rank: Optional[int] = Field(None, ge=1)
    strategies: list[StrategyName] = Field(default_factory=lambda: ["lift", "random", "weight_magnitude"])
    antithetic: bool = True

    @field_validator("dims")
    @classmethod
    def _dims(cls, v):
        for dim in v:
            if len(dim) != 2:
                raise ValueError("each entry of dims is a [rows, cols] pair")
            if dim[0] < 1 or dim[1] < 1:
                raise ValueError("matrix dimensions must be positive")
        return v

    @field_validator("strategies")
    @classmethod
    def _no_grad(cls, v):
        bad = [s for s in v if s in ("gradient_magnitude", "movement", "full")]
        if bad:
            raise ValueError(f"strategies {bad} are not available without a gradient / budget")
        return v


class PerturbEvalConfig(_Section):
    noise_std: float = Field(0.05, gt=0.0)
    seeds: int = Field(5, ge=1)
    lora_rank: int = Field(8, ge=1)
    lift_rank: Optional[int] = Field(None, ge=1)
    strategies: list[StrategyName] = Field(default_factory=lambda: ["lift", "random", "weight_magnitude"])

    @field_validator("strategies")
    @classmethod
    def _no_full(cls, v):
        if "full" in v:
            raise ValueError("use k or lora_rank strategies; 'full' is not a selection")
        return v


class MaskInspectConfig(_Section):
    checkpoint: Optional[str] = None
    reference: StrategyName = "lift"
    against: list[StrategyName] = Field(default_factory=lambda: ["weight_magnitude", "random"])
    rank: Optional[int] = Field(None, ge=1)
    k: Optional[int] = Field(None, ge=1)
    lora_rank: Optional[int] = Field(8, ge=1)


class ExperimentConfig(_Section):
    experiment: ExperimentKind = "toy-pipeline"
    seed: int = Field(0, ge=0)
    output_dir: str = "runs/default"
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    pretrain: AdamConfig = Field(default_factory=AdamConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    early_stop: EarlyStopSection = Field(default_factory=EarlyStopSection)
    methods: list[MethodConfig] = Field(default_factory=_default_methods)
    spectral_study: SpectralStudyConfig = Field(default_factory=SpectralStudyConfig)
    perturb_eval: PerturbEvalConfig = Field(default_factory=PerturbEvalConfig)
    mask_inspect: MaskInspectConfig = Field(default_factory=MaskInspectConfig)

    @field_validator("methods")
    @classmethod
    def _unique(cls, v):
        names = [m.name for m in v]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValueError(f"duplicate method names {dupes}")
        return v


def _format_error(err: ValidationError) -> ConfigError:
    first = err.errors()[0]
    key = ".".join(str(p) for p in first["loc"]) or "<root>"
    msg = first["msg"]
    if msg.startswith("Value error, "):
        msg = msg[len("Value error, "):]
    if first["type"] == "extra_forbidden":
        msg = "unknown key"
    return ConfigError(f"{key}: {msg}", key=key)


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = yaml.load(text, Loader=_Loader) if text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"<document>: not valid YAML ({exc})") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("<document>: top level must be a mapping")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise _format_error(exc) from None


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=True, allow_unicode=True)


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(config).encode("utf-8")).hexdigest()


def adam_hyperparams(section: AdamConfig) -> AdamHyperparams:
    interval = getattr(section, "update_mask_interval", None)
    return AdamHyperparams(
        lr=section.lr,
        beta1=section.beta1,
        beta2=section.beta2,
        eps=section.eps,
        weight_decay=section.weight_decay,
        update_mask_interval=interval,
        total_steps=section.total_steps,
    )


def strategy_from(
    kind: str, rank: int | None, variant: str = "largest", rank_seed: int = 0, seed: int = 0, block: int = 4
) -> SelectionStrategy | None:
    if kind == "full":
        return None
    if kind in ("lift", "lift_structured"):
        return SelectionStrategy(kind, RankSelection(variant, rank, rank_seed), block=block)
    return SelectionStrategy(kind, seed=seed)


def method_spec(method: MethodConfig, master_seed: int) -> MethodSpec:
    if method.strategy == "full":
        return MethodSpec(method.name)
    seed = derive_seed(master_seed, "random-mask", method.seed) if method.strategy == "random" else method.seed
    strategy = strategy_from(
        method.strategy,
        method.rank or method.lora_rank,
        method.rank_variant,
        method.rank_seed,
        seed,
        method.block,
    )
    budget = BudgetSpec(k_exact=method.k) if method.k is not None else BudgetSpec(lora_rank=method.lora_rank)
    return MethodSpec(method.name, strategy, budget)


def pipeline_config(config: ExperimentConfig) -> PipelineConfig:
    ds = config.dataset
    return PipelineConfig(
        d=ds.d,
        h=ds.h,
        n_pre=ds.n_pre,
        n_ft=ds.n_ft,
        val_fraction=ds.val_fraction,
        activation=config.model.activation,
        seed=config.seed,
        pretrain=adam_hyperparams(config.pretrain),
        finetune=adam_hyperparams(config.optimizer),
        early_stop=EarlyStopConfig(config.early_stop.patience, config.early_stop.min_delta),
        methods=[method_spec(m, config.seed) for m in config.methods],
        tune_head=config.model.tune_head,
    )
