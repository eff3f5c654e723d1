"""Flat ``key = value`` configuration files.

One setting per line, ``#`` starts a comment, lists are comma separated.
Unknown keys are rejected so typos do not silently fall back to defaults.
"""
from __future__ import annotations

import ast
from dataclasses import dataclass, field, fields
from pathlib import Path

from .cpem import CpemConfig
from .eanet import EanetConfig
from .schedule import DEFAULT_DELTA, NoiseSchedule, build_schedule
from .training import TrainConfig


@dataclass
class ScheduleConfig:
    T: int = 100
    delta: float = DEFAULT_DELTA
    shape: str = "linear"
    ramp_ratio: float = 10.0

    def build(self) -> NoiseSchedule:
        return build_schedule(self.T, self.delta, self.shape, self.ramp_ratio)


@dataclass
class ToolkitConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    eanet: EanetConfig = field(default_factory=EanetConfig)
    cpem: CpemConfig = field(default_factory=CpemConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cpem_enabled: bool = True
    train_dir: str = "data/train"
    out_dir: str = "runs/default"


# flat key -> (section, attribute)
KEYS = {
    "T": ("schedule", "T"),
    "delta": ("schedule", "delta"),
    "schedule_shape": ("schedule", "shape"),
    "ramp_ratio": ("schedule", "ramp_ratio"),
    "channels": ("eanet", "base_channels"),
    "enc_counts": ("eanet", "enc_counts"),
    "dec_counts": ("eanet", "dec_counts"),
    "mid_count": ("eanet", "mid_count"),
    "time_dim": ("eanet", "time_dim"),
    "scale": ("cpem", "scale"),
    "cpem_n_rcab": ("cpem", "n_rcab"),
    "cpem_channels": ("cpem", "channels"),
    "cpem_reduction": ("cpem", "ca_reduction"),
    "cpem_enabled": (None, "cpem_enabled"),
    "train_dir": (None, "train_dir"),
    "out_dir": (None, "out_dir"),
}
KEYS.update({f.name: ("train", f.name) for f in fields(TrainConfig)})


def _convert(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("true", "yes", "1", "on"):
            return True
        if raw.lower() in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, list) or (default is None and "," in raw):
        return [ast.literal_eval(x.strip()) for x in raw.strip("[]").split(",") if x.strip()]
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default is None:
        return None if raw.lower() == "none" else [float(raw)]
    return raw


def parse_config(text: str, source: str = "<config>") -> ToolkitConfig:
    sections = {"schedule": {}, "eanet": {}, "cpem": {}, "train": {}, None: {}}
    defaults = ToolkitConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        section, attr = KEYS[key]
        owner = defaults if section is None else getattr(defaults, section)
        try:
            sections[section][attr] = _convert(value, getattr(owner, attr))
        except (ValueError, SyntaxError) as e:
            raise ValueError(f"{source}:{lineno}: bad value for {key}: {e}") from None
    return ToolkitConfig(
        schedule=ScheduleConfig(**sections["schedule"]),
        eanet=EanetConfig(**sections["eanet"]),
        cpem=CpemConfig(**sections["cpem"]),
        train=TrainConfig(**sections["train"]),
        **sections[None],
    )


def load_config(path) -> ToolkitConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def dump_config(cfg: ToolkitConfig) -> str:
    lines = []
    for key, (section, attr) in KEYS.items():
        owner = cfg if section is None else getattr(cfg, section)
        value = getattr(owner, attr)
        if isinstance(value, list):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def configs_from_echo(echo: str):
    """Recover (EanetConfig, CpemConfig, cpem_enabled, ScheduleConfig) from a checkpoint echo."""
    from .training import parse_echo

    items = {k: ast.literal_eval(v) if k != "schedule.shape" else v for k, v in parse_echo(echo).items()}
    eanet = EanetConfig(**{k[6:]: v for k, v in items.items() if k.startswith("eanet.")})
    cpem = CpemConfig(**{k[5:]: v for k, v in items.items() if k.startswith("cpem.") and k != "cpem.enabled"})
    sched = ScheduleConfig(**{k[9:]: v for k, v in items.items() if k.startswith("schedule.")})
    return eanet, cpem, items.get("cpem.enabled", True), sched
