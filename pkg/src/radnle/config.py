"""TOML configuration and custom lexicon loading.

Precedence everywhere is defaults < config file < command-line flags.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .keywords import KeywordLexicon
from .labels import Label, MentionLexicon, default_mention_lexicon


class ConfigError(Exception):
    """Malformed configuration or lexicon file."""


_KEYWORD_FIELDS = (
    "explanation",
    "exemptions",
    "history",
    "recommendations",
    "technical",
    "extra_excluded",
)


def _load_toml(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _string_list(payload: dict, key: str, path: Path | str) -> tuple[str, ...]:
    value = payload[key]
    if not isinstance(value, list) or not all(isinstance(item, str) for item in value):
        raise ConfigError(f"{path}: {key!r} must be an array of strings")
    return tuple(item.lower() for item in value)


def keyword_lexicon_from_dict(payload: dict, source: Path | str = "<config>") -> KeywordLexicon:
    """Build a keyword lexicon from the six list fields (missing fields
    keep their defaults)."""
    kwargs = {
        key: _string_list(payload, key, source)
        for key in _KEYWORD_FIELDS
        if key in payload
    }
    unknown = set(payload) - set(_KEYWORD_FIELDS)
    if unknown:
        raise ConfigError(f"{source}: unknown keyword lexicon field {sorted(unknown)[0]!r}")
    try:
        return KeywordLexicon(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_keyword_lexicon(path: str | Path) -> KeywordLexicon:
    return keyword_lexicon_from_dict(_load_toml(path), path)


def load_mention_lexicon(path: str | Path) -> MentionLexicon:
    return mention_lexicon_from_dict(_load_toml(path), path)


def mention_lexicon_from_dict(payload: dict, source: Path | str = "<config>") -> MentionLexicon:
    """Build a mention lexicon; the [phrases] table maps label display
    names to phrase arrays. Omitted parts keep their defaults."""
    default = default_mention_lexicon()
    phrases = dict(default.phrases)
    if "phrases" in payload:
        table = payload["phrases"]
        if not isinstance(table, dict):
            raise ConfigError(f"{source}: 'phrases' must be a table")
        for name, plist in table.items():
            try:
                label = Label.from_display(name)
            except ValueError as exc:
                raise ConfigError(f"{source}: {exc}") from None
            if not isinstance(plist, list):
                raise ConfigError(f"{source}: phrases for {name!r} must be an array")
            phrases[label] = tuple(str(item).lower() for item in plist)
    negation = (
        _string_list(payload, "negation_cues", source)
        if "negation_cues" in payload
        else default.negation_cues
    )
    uncertainty = (
        _string_list(payload, "uncertainty_cues", source)
        if "uncertainty_cues" in payload
        else default.uncertainty_cues
    )
    unknown = set(payload) - {"phrases", "negation_cues", "uncertainty_cues"}
    if unknown:
        raise ConfigError(f"{source}: unknown mention lexicon field {sorted(unknown)[0]!r}")
    try:
        return MentionLexicon(
            phrases=phrases, negation_cues=negation, uncertainty_cues=uncertainty
        )
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


_CONFIG_KEYS = {
    "jobs",
    "threshold",
    "labeler",
    "labels_file",
    "pathologies",
    "dedup_ignore_certainty",
    "keyword_lexicon",
    "mention_lexicon",
}


def load_config(path: str | Path) -> dict[str, Any]:
    """Load the optional pipeline config file.

    Recognized keys: jobs, threshold, labeler, labels_file, pathologies,
    dedup_ignore_certainty, plus inline [keyword_lexicon] and
    [mention_lexicon] tables.
    """
    payload = _load_toml(path)
    unknown = set(payload) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown config key {sorted(unknown)[0]!r}")
    if "keyword_lexicon" in payload:
        payload["keyword_lexicon"] = keyword_lexicon_from_dict(
            payload["keyword_lexicon"], path
        )
    if "mention_lexicon" in payload:
        payload["mention_lexicon"] = mention_lexicon_from_dict(
            payload["mention_lexicon"], path
        )
    if "pathologies" in payload:
        try:
            payload["pathologies"] = tuple(
                Label.from_display(name) for name in payload["pathologies"]
            )
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return payload
