"""Flat key = value run configuration with dotted section prefixes.

An empty file is a valid config (every field has a default); unknown keys
are an error so typos cannot silently change a run.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .agent import PpoConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    ppo: PpoConfig = PpoConfig()
    reward_smooth_fuzzy: bool = False
    reward_success_dominates: bool = False
    backbone: str = "frozen"          # frozen | finetune
    curriculum: str = "packed"        # packed | clutter | grasp
    two_stage: bool = False
    arms: str = "dual"                # dual | single
    single_arm: str = "right"
    eval_case: int = 2
    eval_episodes: int = 100
    seed: int = 0
    out_dir: str = "runs/out"

    def __post_init__(self):
        if self.backbone not in ("frozen", "finetune"):
            raise ConfigError(f"backbone must be frozen|finetune, got {self.backbone!r}")
        if self.curriculum not in ("packed", "clutter", "grasp"):
            raise ConfigError(f"unknown curriculum {self.curriculum!r}")
        if self.arms not in ("dual", "single"):
            raise ConfigError(f"arms must be dual|single, got {self.arms!r}")
        if self.single_arm not in ("left", "right"):
            raise ConfigError(f"single_arm must be left|right, got {self.single_arm!r}")


_BOOL = {"true": True, "1": True, "yes": True, "on": True,
         "false": False, "0": False, "no": False, "off": False}

_PPO_FIELDS = {f.name: f.type for f in fields(PpoConfig)}
_RUN_FIELDS = {f.name for f in fields(RunConfig)} - {"ppo"}


def _convert(raw: str, typ: str, key: str):
    raw = raw.strip()
    if typ == "bool":
        if raw.lower() not in _BOOL:
            raise ConfigError(f"{key}: cannot parse {raw!r} as bool")
        return _BOOL[raw.lower()]
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"{key}: {e}") from None
    return raw


def parse_config(text: str) -> RunConfig:
    ppo_kwargs = {}
    run_kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("ppo."):
            name = key[4:]
            if name not in _PPO_FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            ppo_kwargs[name] = _convert(value, _PPO_FIELDS[name], key)
        elif key in _RUN_FIELDS:
            default = getattr(RunConfig(), key)
            typ = type(default).__name__
            run_kwargs[key] = _convert(value, typ, key)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return RunConfig(ppo=PpoConfig(**ppo_kwargs), **run_kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: RunConfig) -> str:
    """Resolved copy; parsing it back yields an identical RunConfig."""
    lines = []
    for f in fields(PpoConfig):
        lines.append(f"ppo.{f.name} = {getattr(cfg.ppo, f.name)}")
    for f in fields(RunConfig):
        if f.name == "ppo":
            continue
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: RunConfig, **kwargs) -> RunConfig:
    ppo_over = {k: v for k, v in kwargs.items() if k in _PPO_FIELDS and v is not None}
    run_over = {k: v for k, v in kwargs.items() if k in _RUN_FIELDS and v is not None}
    if ppo_over:
        run_over["ppo"] = replace(cfg.ppo, **ppo_over)
    return replace(cfg, **run_over)
