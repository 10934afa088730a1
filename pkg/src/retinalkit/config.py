"""Pipeline configuration: one YAML file, validated up front with field-level messages.

Relative paths resolve against the config file's directory.  Mix source
paths may name a compiled corpus with ``@alignment`` or ``@tuning``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .conversations import DEFAULT_PROFILES, TaskProfile, default_profile
from .errors import ConfigError
from .lesions import DEFAULT_MIN_AREA
from .mixing import INTERLEAVE_MODES, MixSource, MixSpec
from .paraphrase import LLMClientConfig
from .selection import DEFAULT_CAP, DEFAULT_RHO, NULL_LIMIT
from .vascular import SCHEMA_VERSION

STAGE_REFS = ("@alignment", "@tuning")


class ConfigValidationError(ConfigError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n" + "\n".join(f"  {p}" for p in problems))


@dataclass
class DatasetConfig:
    name: str
    task: str
    labels: dict
    normal_labels: tuple = ()
    temporal_side: str = "left"
    box_mode: str = "pixels"

    def profile(self) -> TaskProfile:
        return default_profile(self.task, self.name, self.box_mode)


@dataclass
class PipelineConfig:
    manifest: Path
    output_dir: Path
    datasets: dict
    question_pool: Path
    seeds: dict
    feature_schema: str = SCHEMA_VERSION
    box_count_scales: list | None = None
    min_lesion_area: int = DEFAULT_MIN_AREA
    selection: dict = field(default_factory=dict)
    mix: dict | None = None
    llm: LLMClientConfig | None = None
    evaluate: dict | None = None
    base_dir: Path = Path(".")

    def mix_spec(self, stage_paths: dict) -> MixSpec:
        sources = []
        for s in self.mix["sources"]:
            path = s["path"]
            path = stage_paths[path] if path in STAGE_REFS else self.base_dir / path
            sources.append(MixSource(str(path), s.get("take"), s.get("proportion"), s.get("name", "")))
        return MixSpec(tuple(sources), self.seeds["mix"], self.mix.get("interleave", "shuffled"),
                       self.mix.get("total"))

    def questions(self) -> list[str]:
        return [q.strip() for q in self.question_pool.read_text(encoding="utf-8").splitlines() if q.strip()]


def _path(base: Path, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path, seed_override: int | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigValidationError([f"config: file {path} does not exist"]) from None
    except yaml.YAMLError as exc:
        raise ConfigValidationError([f"config: not valid YAML ({exc})"]) from None
    if not isinstance(raw, dict):
        raise ConfigValidationError(["config: top level must be a mapping"])
    return validate(raw, path.parent, seed_override)


def validate(raw: dict, base: Path, seed_override: int | None = None) -> PipelineConfig:
    problems: list[str] = []

    def need(key, kind=None):
        if key not in raw or raw[key] is None:
            problems.append(f"{key}: required")
            return None
        if kind is not None and not isinstance(raw[key], kind):
            problems.append(f"{key}: expected {kind.__name__}")
            return None
        return raw[key]

    manifest = need("manifest", str)
    if manifest is not None and not _path(base, manifest).is_file():
        problems.append(f"manifest: file {_path(base, manifest)} does not exist")
    pool = need("question_pool", str)
    if pool is not None and not _path(base, pool).is_file():
        problems.append(f"question_pool: file {_path(base, pool)} does not exist")
    out = need("output_dir", str)

    schema = raw.get("feature_schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        problems.append(f"feature_schema: only {SCHEMA_VERSION} is supported, got {schema!r}")

    scales = raw.get("box_count_scales")
    if scales is not None and (not isinstance(scales, list) or not all(isinstance(s, int) for s in scales)):
        problems.append("box_count_scales: expected a list of integers or null")
    min_area = raw.get("min_lesion_area", DEFAULT_MIN_AREA)
    if not isinstance(min_area, int) or min_area < 1:
        problems.append("min_lesion_area: expected a positive integer")

    sel = raw.get("selection") or {}
    selection = {"cap": sel.get("cap", DEFAULT_CAP), "redundancy_rho": sel.get("redundancy_rho", DEFAULT_RHO),
                 "min_per_label": sel.get("min_per_label", 10), "null_limit": sel.get("null_limit", NULL_LIMIT),
                 "allow": list(sel.get("allow", [])), "deny": list(sel.get("deny", []))}
    if not isinstance(selection["cap"], int) or selection["cap"] < 1:
        problems.append("selection.cap: expected a positive integer")
    if not isinstance(selection["redundancy_rho"], (int, float)) or not 0 < selection["redundancy_rho"] <= 1:
        problems.append("selection.redundancy_rho: expected a number in (0, 1]")

    datasets = {}
    for name, d in (need("datasets", dict) or {}).items():
        if not isinstance(d, dict):
            problems.append(f"datasets.{name}: expected a mapping")
            continue
        task = d.get("task")
        if task not in DEFAULT_PROFILES:
            problems.append(f"datasets.{name}.task: expected one of {sorted(DEFAULT_PROFILES)}, got {task!r}")
        labels = d.get("labels")
        if not isinstance(labels, dict) or not labels:
            problems.append(f"datasets.{name}.labels: expected a non-empty mapping of raw label to text")
            labels = {}
        side = d.get("temporal_side", "left")
        if side not in ("left", "right"):
            problems.append(f"datasets.{name}.temporal_side: expected left or right")
        box_mode = d.get("box_mode", "pixels")
        if box_mode not in ("pixels", "normalized"):
            problems.append(f"datasets.{name}.box_mode: expected pixels or normalized")
        datasets[name] = DatasetConfig(name, task, {str(k): str(v) for k, v in labels.items()},
                                       tuple(d.get("normal_labels", ())), side, box_mode)

    seeds = raw.get("seeds") or {}
    if seed_override is not None:
        seeds = {"compile": seed_override, "mix": seed_override}
    for stage in ("compile", "mix"):
        if not isinstance(seeds.get(stage), int):
            problems.append(f"seeds.{stage}: an explicit integer seed is required")

    mix = raw.get("mix")
    if mix is not None:
        if not isinstance(mix, dict) or not isinstance(mix.get("sources"), list) or not mix["sources"]:
            problems.append("mix.sources: expected a non-empty list")
        else:
            for k, s in enumerate(mix["sources"]):
                p = s.get("path") if isinstance(s, dict) else None
                if not isinstance(p, str):
                    problems.append(f"mix.sources[{k}].path: required")
                elif p not in STAGE_REFS and not _path(base, p).is_file():
                    problems.append(f"mix.sources[{k}].path: file {_path(base, p)} does not exist")
            if mix.get("interleave", "shuffled") not in INTERLEAVE_MODES:
                problems.append(f"mix.interleave: expected one of {INTERLEAVE_MODES}")

    llm = None
    if raw.get("llm"):
        try:
            llm = LLMClientConfig(**raw["llm"])
        except (TypeError, ConfigError) as exc:
            problems.append(f"llm: {exc}")

    ev = raw.get("evaluate")
    if ev is not None:
        t = ev.get("transcripts") if isinstance(ev, dict) else None
        if not isinstance(t, str):
            problems.append("evaluate.transcripts: required")
        elif not _path(base, t).is_file():
            problems.append(f"evaluate.transcripts: file {_path(base, t)} does not exist")

    if problems:
        raise ConfigValidationError(problems)
    return PipelineConfig(
        manifest=_path(base, manifest),
        output_dir=_path(base, out),
        datasets=datasets,
        question_pool=_path(base, pool),
        seeds=dict(seeds),
        feature_schema=schema,
        box_count_scales=scales,
        min_lesion_area=min_area,
        selection=selection,
        mix=mix,
        llm=llm,
        evaluate=ev,
        base_dir=base,
    )
