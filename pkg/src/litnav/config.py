"""Typed runtime settings and the key=value config-file format.

Every tunable constant the modules expose — retry policy, linker thresholds,
ranking shapes, index geometry, recommender weights — has one dotted key here
(``section.name``). A config file is plain ``key=value`` lines with ``#``
comments; unknown keys and untypeable values are errors, never warnings, so a
typo cannot silently run with defaults. The ``NAV_CONFIG`` environment
variable supplies the file path when the caller does not.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    """A config file could not be parsed into valid settings."""


class UnknownConfigKey(ConfigError):
    pass


class InvalidConfigValue(ConfigError):
    pass


_BUCKETS = ("month", "year")


@dataclass(frozen=True)
class Settings:
    """One immutable snapshot of every runtime constant.

    Field names map to config keys by replacing the first underscore with a
    dot: ``experts_k_docs`` is set by the line ``experts.k_docs=50``.
    """

    # Ingest pipeline: retry policy and parallelism.
    pipeline_max_retries: int = 3
    pipeline_base_delay_ms: int = 100
    pipeline_workers: int = 1
    # Citation linking: title similarity threshold and year slack.
    link_title_threshold: float = 0.9
    link_year_tolerance: int = 1
    # Concept linking: string/embedding blend, acceptance threshold, context.
    concept_string_weight: float = 0.6
    concept_embed_weight: float = 0.4
    concept_link_threshold: float = 0.75
    concept_context_tokens: int = 20
    # Keyword ranking: recency half-life scale, n-gram cap, dismax blend.
    keyword_recency_tau_days: float = 730.0
    keyword_max_ngram: int = 3
    keyword_dismax_tiebreak: float = 0.1
    keyword_stopword_boost: float = 0.25
    # Vector indices: embedding width and graph geometry.
    vector_dim: int = 256
    vector_m: int = 16
    vector_ef_construction: int = 200
    vector_ef_search: int = 100
    vector_chunk_size: int = 10
    vector_seed: int = 0
    # Search behaviour shared across modes.
    search_rrf_offset: int = 60
    search_default_k: int = 10
    # Expert ranking: retrieval depth, rank decay, prolific damping.
    experts_k_docs: int = 50
    experts_gamma: float = 0.85
    experts_beta: float = 0.5
    # Recommender: freshness window and module mix.
    recommend_window_days: int = 30
    recommend_weight_content: float = 1.0
    recommend_weight_citation: float = 1.0
    recommend_weight_author: float = 1.0
    recommend_weight_popularity: float = 1.0
    # Analytics: popularity bucketing.
    analytics_bucket: str = "month"
    # Service process and storage location.
    service_host: str = "127.0.0.1"
    service_port: int = 8080
    storage_dir: str = "navdata"

    def __post_init__(self) -> None:
        positive_ints = (
            "pipeline_workers",
            "vector_dim",
            "vector_m",
            "vector_ef_construction",
            "vector_chunk_size",
            "search_default_k",
            "experts_k_docs",
            "recommend_window_days",
        )
        for name in positive_ints:
            if getattr(self, name) < 1:
                raise InvalidConfigValue(f"{key_for(name)} must be >= 1")
        non_negative = (
            "pipeline_max_retries",
            "pipeline_base_delay_ms",
            "link_year_tolerance",
            "concept_context_tokens",
            "search_rrf_offset",
            "vector_seed",
        )
        for name in non_negative:
            if getattr(self, name) < 0:
                raise InvalidConfigValue(f"{key_for(name)} must be >= 0")
        if self.keyword_max_ngram < 1:
            raise InvalidConfigValue("keyword.max_ngram must be >= 1")
        if self.analytics_bucket not in _BUCKETS:
            raise InvalidConfigValue(
                f"analytics.bucket must be one of {', '.join(_BUCKETS)}"
            )
        if not 1 <= self.service_port <= 65535:
            raise InvalidConfigValue("service.port must be in 1..65535")

    @property
    def pipeline_base_delay(self) -> float:
        """Retry base delay in seconds."""
        return self.pipeline_base_delay_ms / 1000.0


def key_for(attr: str) -> str:
    """The config-file key for a Settings attribute (``a_b_c`` -> ``a.b_c``)."""
    return attr.replace("_", ".", 1)


def attr_for(key: str) -> str:
    return key.replace(".", "_", 1)


CONFIG_KEYS: tuple[str, ...] = tuple(key_for(f.name) for f in fields(Settings))


def _parse_value(attr: str, text: str, lineno: int) -> int | float | str:
    kind = Settings.__dataclass_fields__[attr].default
    try:
        if isinstance(kind, bool):  # guard: bools are ints; none exist today
            raise TypeError("bool settings are not supported")
        if isinstance(kind, int):
            return int(text)
        if isinstance(kind, float):
            return float(text)
        return text
    except ValueError:
        wanted = "integer" if isinstance(kind, int) else "number"
        raise InvalidConfigValue(
            f"line {lineno}: {key_for(attr)} expects {wanted}, got {text!r}"
        ) from None


def parse_config(text: str) -> Settings:
    """Parse ``key=value`` lines into Settings; reject anything unrecognised."""
    overrides: dict[str, int | float | str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key = key.strip()
        attr = attr_for(key)
        if attr not in Settings.__dataclass_fields__:
            raise UnknownConfigKey(f"line {lineno}: unknown config key {key!r}")
        overrides[attr] = _parse_value(attr, value.strip(), lineno)
    return replace(Settings(), **overrides)


def load_config(path: str | Path | None = None) -> Settings:
    """Load settings from ``path``, else ``$NAV_CONFIG``, else defaults."""
    if path is None:
        path = os.environ.get("NAV_CONFIG") or None
    if path is None:
        return Settings()
    file = Path(path)
    if not file.exists():
        raise ConfigError(f"config file not found: {file}")
    return parse_config(file.read_text(encoding="utf-8"))


def dump_config(settings: Settings) -> str:
    """Render settings in the same key=value format parse_config accepts."""
    lines = [
        f"{key_for(f.name)}={getattr(settings, f.name)}" for f in fields(Settings)
    ]
    return "\n".join(lines) + "\n"
