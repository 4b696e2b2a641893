"""Run configuration: typed sections parsed from a flat ``[section]`` / ``key = value`` file.

Grammar::

    file     := (blank | comment | header | entry)*
    comment  := ('#' | ';') any text
    header   := '[' section ']'
    entry    := key '=' value

Sections are ``model``, ``tracker``, ``loss``, ``optim``, ``scenario``,
``eval`` and ``run``.  Values are parsed according to the type of the
corresponding dataclass field; booleans accept true/false/1/0/yes/no.
Command-line overrides use ``section.key=value``.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields
from typing import Any


class ConfigError(ValueError):
    """Invalid configuration; carries one message per offending field."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class ModelConfig:
    d_k: int = 32
    num_layers: int = 4
    num_det_queries: int = 32
    ffn_dim: int = 64
    aux_token: bool = False
    aux_self_attn: bool = True
    aux_propagate: bool = True
    block_det_to_track: bool = False
    block_track_to_det: bool = False
    edge_iteration: bool = True
    pos_encoding: str = "box"
    tau_pos: float = 2.0
    pos_scale: float = 10.0
    layer_norm: bool = True
    obs_sink: bool = True
    init_spread: float = 20.0
    seed: int = 0


@dataclass
class TrackerConfig:
    tau_s: float = 0.3
    tau_new: float = 0.4
    max_age: int = 5
    w_t: float = 0.0


@dataclass
class LossConfig:
    lambda_cls: float = 2.0
    lambda_reg: float = 0.25
    lambda_asso: float = 10.0
    lambda_ce: float = 0.1
    cls_alpha: float = 0.25
    cls_gamma: float = 2.0
    asso_alpha: float = 0.5
    asso_gamma: float = 1.0


@dataclass
class OptimConfig:
    lr: float = 2e-3
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    steps: int = 2000
    seq_len: int = 3
    batch: int = 4
    cosine: bool = True
    grad_clip: float = 10.0
    log_every: int = 50


@dataclass
class ScenarioConfig:
    arena: float = 20.0
    frames: int = 20
    dt: float = 0.5
    initial_objects: int = 4
    birth_rate: float = 0.3
    max_objects: int = 8
    death_prob: float = 0.02
    speed_min: float = 0.5
    speed_max: float = 4.0
    process_noise: float = 0.1
    sigma_pos: float = 0.1
    sigma_size: float = 0.05
    sigma_yaw: float = 0.05
    sigma_vel: float = 0.1
    occlusion_prob: float = 0.05
    occlusion_spell: int = 1
    clutter_rate: float = 0.0
    ego_speed: float = 1.0
    ego_yaw_rate: float = 0.05
    obs_dim: int = 32
    encoder_seed: int = 7
    seed: int = 0


@dataclass
class EvalConfig:
    dist_threshold: float = 2.0
    num_thresholds: int = 40
    min_recall: float = 0.1


@dataclass
class RunSection:
    seed: int = 0
    train_sequences: int = 20
    eval_sequences: int = 1
    eval_seed_offset: int = 1000
    ab_seeds: int = 5
    output_dir: str = "runs/default"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> "RunConfig":
        problems = []
        m, t, s, e, o = self.model, self.tracker, self.scenario, self.eval, self.optim
        if m.d_k < 1:
            problems.append("model.d_k must be >= 1")
        if m.num_layers < 1:
            problems.append("model.num_layers must be >= 1")
        if m.num_det_queries < 1:
            problems.append("model.num_det_queries must be >= 1")
        if m.pos_encoding not in ("box", "center", "none", "appearance"):
            problems.append(f"model.pos_encoding must be box|center|none|appearance, got {m.pos_encoding!r}")
        if s.obs_dim != m.d_k:
            problems.append(f"scenario.obs_dim ({s.obs_dim}) must equal model.d_k ({m.d_k})")
        if m.tau_pos <= 0:
            problems.append("model.tau_pos must be > 0")
        if not 0.0 <= t.w_t <= 1.0:
            problems.append("tracker.w_t must be in [0, 1]")
        if not 0.0 <= t.tau_s <= 1.0 or not 0.0 <= t.tau_new <= 1.0:
            problems.append("tracker thresholds must be in [0, 1]")
        if t.max_age < 0:
            problems.append("tracker.max_age must be >= 0")
        if o.seq_len < 1:
            problems.append("optim.seq_len must be >= 1")
        if o.batch < 1:
            problems.append("optim.batch must be >= 1")
        if o.lr < 0:
            problems.append("optim.lr must be >= 0")
        for name in ("death_prob", "occlusion_prob"):
            if not 0.0 <= getattr(s, name) <= 1.0:
                problems.append(f"scenario.{name} must be in [0, 1]")
        for name in ("sigma_pos", "sigma_size", "sigma_yaw", "sigma_vel", "process_noise",
                     "birth_rate", "clutter_rate"):
            if getattr(s, name) < 0:
                problems.append(f"scenario.{name} must be >= 0")
        if s.dt <= 0:
            problems.append("scenario.dt must be > 0")
        if s.frames < 1:
            problems.append("scenario.frames must be >= 1")
        if s.occlusion_spell < 1:
            problems.append("scenario.occlusion_spell must be >= 1")
        if s.speed_min < 0 or s.speed_max < s.speed_min:
            problems.append("scenario speed range must satisfy 0 <= speed_min <= speed_max")
        if e.dist_threshold <= 0:
            problems.append("eval.dist_threshold must be > 0")
        if e.num_thresholds < 2:
            problems.append("eval.num_thresholds must be >= 2")
        if not 0.0 <= e.min_recall < 1.0:
            problems.append("eval.min_recall must be in [0, 1)")
        if problems:
            raise ConfigError(problems)
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"[{f.name}]")
            section = getattr(self, f.name)
            for sf in fields(section):
                value = getattr(section, sf.name)
                if isinstance(value, bool):
                    value = "true" if value else "false"
                elif isinstance(value, float):
                    value = repr(value)
                lines.append(f"{sf.name} = {value}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def replace(self, **overrides: Any) -> "RunConfig":
        """Copy with ``section__key=value`` overrides (or ``section.key`` via apply_overrides)."""
        cfg = dataclasses.replace(self, **{f.name: dataclasses.replace(getattr(self, f.name))
                                           for f in fields(self)})
        apply_overrides(cfg, [f"{k.replace('__', '.')}={v}" for k, v in overrides.items()])
        return cfg


def _coerce(raw: str, kind, where: str):
    raw = raw.strip()
    if kind is bool or kind == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{where}: expected a boolean, got {raw!r}")
    if kind is int or kind == "int":
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"{where}: expected an integer, got {raw!r}") from None
    if kind is float or kind == "float":
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"{where}: expected a number, got {raw!r}") from None
    return raw


def _set(cfg: RunConfig, section: str, key: str, raw: str, problems: list[str]) -> None:
    sections = {f.name for f in fields(cfg)}
    if section not in sections:
        problems.append(f"unknown section [{section}]")
        return
    target = getattr(cfg, section)
    kinds = {f.name: f.type for f in fields(target)}
    if key not in kinds:
        problems.append(f"unknown key {section}.{key}")
        return
    try:
        setattr(target, key, _coerce(raw, kinds[key], f"{section}.{key}"))
    except ValueError as exc:
        problems.append(str(exc))


def apply_overrides(cfg: RunConfig, overrides: list[str], problems: list[str] | None = None) -> RunConfig:
    """Apply ``section.key=value`` items; collects into ``problems`` if given, else raises."""
    collect = problems is not None
    problems = [] if problems is None else problems
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            problems.append(f"override {item!r} is not section.key=value")
            continue
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        _set(cfg, section, key, raw, problems)
    if problems and not collect:
        raise ConfigError(problems)
    return cfg


def parse_config(text: str, overrides: list[str] | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    cfg = RunConfig()
    problems: list[str] = []
    for section in parser.sections():
        for key, raw in parser.items(section):
            _set(cfg, section, key, raw, problems)
    apply_overrides(cfg, overrides or [], problems)
    try:
        cfg.validate()
    except ConfigError as exc:
        problems.extend(exc.problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path, overrides: list[str] | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)


def config_from_text_block(text: str) -> RunConfig:
    """Parse a config embedded in an artifact header."""
    return parse_config(text)


def comment_block(text: str) -> str:
    buf = io.StringIO()
    for line in text.splitlines():
        buf.write(f"#| {line}\n")
    return buf.getvalue()


def strip_comment_block(lines: list[str]) -> str:
    return "\n".join(line[3:].rstrip("\n") for line in lines if line.startswith("#| "))
