"""Experiment configuration: one YAML file per run, validated before any IO."""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from radlabel.backend import API_KEY_ENV, DEFAULT_MAX_IN_FLIGHT, GenerationParams
from radlabel.corpus import DatasetError, MentionClass, TaxonomySpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    kind: str = "http"  # "http" or "mock"
    url: str = ""
    model: str = ""
    api_key_env: str = API_KEY_ENV
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT
    max_attempts: int = 3
    mock_answers: Path | None = None

    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env)


@dataclass(frozen=True)
class RunConfig:
    taxonomy: TaxonomySpec
    dataset: Path
    output_dir: Path
    seed: int = 42
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    dev_size: int | None = None
    min_support: int | None = None
    support_scope: str = "train"
    top_k: int | None = None
    shots: int = 0
    balanced_shots: bool = False
    train_fraction: float = 1.0
    generation: GenerationParams = field(default_factory=GenerationParams)
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    target_lang: str | None = None
    augment_mode: str = "union"
    translation_max_tokens: int = 2048

    @property
    def manifest_path(self) -> Path:
        return self.output_dir / "split.jsonl"

    def override(self, **changes: Any) -> RunConfig:
        changes = {k: v for k, v in changes.items() if v is not None}
        if "seed" in changes and "generation" not in changes:
            changes["generation"] = replace(self.generation, seed=changes["seed"])
        return _validated(replace(self, **changes)) if changes else self


def _validated(cfg: RunConfig) -> RunConfig:
    fr = cfg.fractions
    if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1) > 1e-9:
        raise ConfigError(f"split fractions must be three nonnegative numbers summing to 1, got {list(fr)}")
    if not isinstance(cfg.seed, int):
        raise ConfigError("seed must be an integer")
    if cfg.shots < 0:
        raise ConfigError("shots must be >= 0")
    if not 0 < cfg.train_fraction <= 1:
        raise ConfigError("train_fraction must be in (0, 1]")
    if cfg.support_scope not in ("train", "all"):
        raise ConfigError("support_scope must be 'train' or 'all'")
    if cfg.min_support is not None and cfg.min_support < 1:
        raise ConfigError("min_support must be >= 1")
    if cfg.top_k is not None and not 1 <= cfg.top_k <= len(cfg.taxonomy.findings):
        raise ConfigError("top_k out of range for the declared taxonomy")
    if cfg.augment_mode not in ("translated_only", "union"):
        raise ConfigError("augment.mode must be 'translated_only' or 'union'")
    if cfg.translation_max_tokens < 1:
        raise ConfigError("augment.max_tokens must be >= 1")
    ep = cfg.endpoint
    if ep.kind not in ("http", "mock"):
        raise ConfigError(f"endpoint.kind must be 'http' or 'mock', got {ep.kind!r}")
    if ep.kind == "http" and (not ep.url or not ep.model):
        raise ConfigError("http endpoint needs url and model")
    if ep.max_in_flight < 1:
        raise ConfigError("endpoint.max_in_flight must be >= 1")
    return cfg


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return value


def parse_config(raw: dict, base_dir: Path) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    tax = _section(raw, "taxonomy")
    if not tax.get("findings"):
        raise ConfigError("taxonomy.findings is required")
    try:
        taxonomy = TaxonomySpec(
            str(tax.get("dataset_id", "dataset")),
            tuple(tax["findings"]),
            frozenset(MentionClass.parse(c) for c in tax.get("mention_classes", ["positive"])),
        )
    except DatasetError as exc:
        raise ConfigError(str(exc)) from exc
    if "dataset" not in raw:
        raise ConfigError("dataset path is required")

    def resolve(p: str | None) -> Path | None:
        return None if p is None else (base_dir / p).resolve()

    split = _section(raw, "split")
    filters = _section(raw, "filters")
    prompt = _section(raw, "prompt")
    gen = _section(raw, "generation")
    ep = _section(raw, "endpoint")
    aug = _section(raw, "augment")
    seed = raw.get("seed", 42)
    try:
        generation = GenerationParams(
            temperature=float(gen.get("temperature", 0.5)),
            min_p=float(gen.get("min_p", 0.1)),
            seed=int(gen.get("seed", seed)),
            stop=gen.get("stop", "}"),
            max_sequence_tokens=int(gen.get("max_sequence_tokens", 2048)),
        )
        endpoint = EndpointConfig(
            kind=str(ep.get("kind", "http")),
            url=str(ep.get("url", "")),
            model=str(ep.get("model", "")),
            api_key_env=str(ep.get("api_key_env", API_KEY_ENV)),
            max_in_flight=int(ep.get("max_in_flight", DEFAULT_MAX_IN_FLIGHT)),
            max_attempts=int(ep.get("max_attempts", 3)),
            mock_answers=resolve(ep.get("mock_answers")),
        )
        cfg = RunConfig(
            taxonomy=taxonomy,
            dataset=resolve(raw["dataset"]),  # type: ignore[arg-type]
            output_dir=resolve(raw.get("output_dir", "runs")),  # type: ignore[arg-type]
            seed=seed,
            fractions=tuple(float(f) for f in split.get("fractions", (0.7, 0.1, 0.2))),  # type: ignore[arg-type]
            dev_size=split.get("dev_size"),
            min_support=filters.get("min_support"),
            support_scope=str(filters.get("support_scope", "train")),
            top_k=filters.get("top_k"),
            shots=int(prompt.get("shots", 0)),
            balanced_shots=bool(prompt.get("balanced_shots", False)),
            train_fraction=float(prompt.get("train_fraction", 1.0)),
            generation=generation,
            endpoint=endpoint,
            target_lang=aug.get("target_lang"),
            augment_mode=str(aug.get("mode", "union")),
            translation_max_tokens=int(aug.get("max_tokens", 2048)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.endpoint.mock_answers is not None and not cfg.endpoint.mock_answers.exists():
        raise ConfigError(f"mock answers file {cfg.endpoint.mock_answers} does not exist")
    if not cfg.dataset.exists():
        raise ConfigError(f"dataset {cfg.dataset} does not exist")
    return _validated(cfg)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw, path.parent)
