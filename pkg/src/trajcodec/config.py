"""Flat ``section.field = value`` configuration covering every pipeline stage."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .core import SegmentationConfig
from .errors import CodecError, ParseError
from .guidance import GuidanceConfig
from .motion import ClusterConfig, ScoringConfig
from .sampler import SAMPLING_MODES, BudgetConfig
from .tracker import TrackerConfig


@dataclass(frozen=True)
class RunConfig:
    sampling: str = "sparse"
    seed: int = 0
    latent_factor: int = 8
    # optional per-frame embedding file; empty means the histogram provider
    embeddings: str = ""

    def __post_init__(self):
        if self.sampling not in SAMPLING_MODES:
            raise ParseError(f"unknown sampling mode {self.sampling!r}", field="run.sampling")
        if self.latent_factor < 1:
            raise ParseError("must be >= 1", field="run.latent_factor")


@dataclass(frozen=True)
class PipelineConfig:
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    run: RunConfig = field(default_factory=RunConfig)


# fields that hold objects rather than values are configured elsewhere
_SKIP = {("scoring", "provider")}


def _sections(cfg: PipelineConfig):
    for f in dataclasses.fields(cfg):
        yield f.name, getattr(cfg, f.name)


def _leaf_fields(section_name: str, section) -> list[dataclasses.Field]:
    return [f for f in dataclasses.fields(section) if (section_name, f.name) not in _SKIP]


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_scalar(text: str, kind: type, key: str):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ParseError(f"cannot parse {text!r} as {kind.__name__}", field=key) from None


def _kind(section, name: str):
    """Python type of a field, judged from its default value."""
    default = getattr(type(section)(), name)
    if name == "feature_scales":
        return "floats"
    if name == "score_norm":
        return "optional_float"
    return type(default)


def _parse_value(section, name: str, text: str, key: str):
    kind = _kind(section, name)
    if kind == "floats":
        if text.strip().lower() == "none":
            return None
        return tuple(_parse_scalar(part, float, key) for part in text.split(","))
    if kind == "optional_float":
        if text.strip().lower() == "none":
            return None
        return _parse_scalar(text, float, key)
    return _parse_scalar(text, kind, key)


def dump_config(cfg: PipelineConfig) -> str:
    """Canonical text: every field, sorted by key."""
    lines = []
    for sname, section in _sections(cfg):
        for f in _leaf_fields(sname, section):
            lines.append(f"{sname}.{f.name} = {_format(getattr(section, f.name))}")
    return "\n".join(sorted(lines)) + "\n"


def config_digest(cfg: PipelineConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()


def apply_overrides(cfg: PipelineConfig, pairs: Iterable[tuple[str, str, int | None]]) -> PipelineConfig:
    """Apply ``(key, raw_value, line)`` assignments in order."""
    updates: dict[str, dict[str, Any]] = {}
    sections = dict(_sections(cfg))
    for key, raw, line in pairs:
        sname, _, fname = key.partition(".")
        section = sections.get(sname)
        if section is None or not fname or fname not in {f.name for f in _leaf_fields(sname, section)}:
            raise ParseError(f"unknown config key {key!r}", line=line)
        try:
            updates.setdefault(sname, {})[fname] = _parse_value(section, fname, raw, key)
        except ParseError as exc:
            raise ParseError(str(exc), line=line) from None
    new = {}
    for sname, section in sections.items():
        if sname in updates:
            try:
                new[sname] = dataclasses.replace(section, **updates[sname])
            except ParseError:
                raise
            except (CodecError, ValueError) as exc:
                raise ParseError(str(exc), field=sname) from None
        else:
            new[sname] = section
    return PipelineConfig(**new)


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        pairs.append((key, value, lineno))
    return apply_overrides(base or PipelineConfig(), pairs)


def load_config(path: str | Path | None, overrides: Iterable[str] = ()) -> PipelineConfig:
    """Read a config file (or defaults when ``path`` is None), then apply ``key=value`` overrides."""
    cfg = PipelineConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ParseError(f"cannot read config {path}: {exc.strerror}") from None
        cfg = parse_config(text, cfg)
    pairs = []
    for item in overrides:
        if "=" not in item:
            raise ParseError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        pairs.append((key.strip(), value, None))
    return apply_overrides(cfg, pairs)
