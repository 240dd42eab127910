"""Line-oriented ``key = value`` run configuration."""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from importlib import resources

TASKS = ("sinusoid", "image", "video")
MODES = ("progressive", "slimmable", "individual")
GROWING = ("spectral", "spatial", "temporal")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path:
            where = f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line


@dataclass
class RunConfig:
    task: str = "image"
    mode: str = "progressive"
    growing: str = "spectral"
    depth: int = 3
    widths: list[int] = field(default_factory=lambda: [16, 32, 48, 64])
    epochs: list[int] = field(default_factory=lambda: [2000] * 4)
    lr: float = 2e-4
    seed: int = 0
    omega0: float = 30.0
    init_mode: str = "zero"
    batch_size: int = 0  # 0: full batch
    log_every: int = 100
    signal: str = ""
    out_dir: str = "run"
    strips: int = 0  # spatial growing; 0 means one strip per stage
    strip_order: str = "left"  # left | center
    frames_per_stage: int = 0  # temporal growing
    samples: int = 1000  # sinusoid
    sampling: str = "grid"
    frequencies: list[float] = field(default_factory=lambda: [float(k) for k in range(5, 55, 5)])

    @property
    def num_stages(self) -> int:
        return len(self.widths)

    @property
    def num_strips(self) -> int:
        return self.strips or self.num_stages


_INT_LISTS = {"widths", "epochs"}
_FLOAT_LISTS = {"frequencies"}
_CHOICES = {"task": TASKS, "mode": MODES, "growing": GROWING, "init_mode": ("zero", "siren"),
            "sampling": ("grid", "random"), "strip_order": ("left", "center")}


def _convert(name: str, raw: str, kind):
    if name in _INT_LISTS:
        return [int(v) for v in raw.split(",") if v.strip()]
    if name in _FLOAT_LISTS:
        return [float(v) for v in raw.split(",") if v.strip()]
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


def _checked(key, raw, kind, lineno, path):
    try:
        value = _convert(key, raw, kind)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}", lineno, path) from None
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(f"{key} must be one of {', '.join(_CHOICES[key])}", lineno, path)
    return value


def parse_config(text: str, path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Parse config text; ``overrides`` (key -> raw string) replace file values."""
    types = {f.name: f.type for f in fields(RunConfig)}
    values, seen = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {line.strip()!r}", lineno, path)
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in types:
            raise ConfigError(f"unknown key {key!r}", lineno, path)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", lineno, path)
        values[key] = _checked(key, raw, types[key], lineno, path)
        seen[key] = lineno
    for key, raw in (overrides or {}).items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r}", None, path)
        values[key] = _checked(key, str(raw), types[key], None, path)
        seen.pop(key, None)
    cfg = RunConfig(**values)
    _validate(cfg, seen, path)
    return cfg


def _validate(cfg: RunConfig, seen: dict, path) -> None:
    def fail(msg, key):
        raise ConfigError(msg, seen.get(key), path)

    if not cfg.widths:
        fail("widths must not be empty", "widths")
    if len(cfg.widths) != len(cfg.epochs):
        fail(f"widths ({len(cfg.widths)}) and epochs ({len(cfg.epochs)}) differ in length", "epochs")
    if any(w < 1 for w in cfg.widths):
        fail("widths must be positive", "widths")
    if cfg.mode != "individual" and any(b <= a for a, b in zip(cfg.widths, cfg.widths[1:])):
        fail("widths must be strictly increasing", "widths")
    if any(e < 1 for e in cfg.epochs):
        fail("epochs must be positive", "epochs")
    if cfg.depth < 1:
        fail("depth must be >= 1", "depth")
    if cfg.lr <= 0:
        fail("lr must be positive", "lr")
    if cfg.growing == "spatial" and cfg.task != "image":
        fail("spatial growing needs task = image", "growing")
    if cfg.growing == "temporal":
        if cfg.task != "video":
            fail("temporal growing needs task = video", "growing")
        if cfg.frames_per_stage < 1:
            fail("temporal growing needs frames_per_stage >= 1", "frames_per_stage")
    if cfg.growing == "spatial" and cfg.num_strips != cfg.num_stages:
        fail("strips must equal the number of stages", "strips")
    if cfg.mode == "slimmable" and cfg.growing != "spectral":
        fail("slimmable training supports spectral growing only", "mode")
    if cfg.task != "sinusoid" and not cfg.signal:
        fail(f"task {cfg.task} needs a signal path", "signal")


def load_config(path: str, overrides: dict | None = None) -> RunConfig:
    """Read a config file; ``preset:NAME`` loads a bundled preset."""
    if path.startswith("preset:"):
        name = path.split(":", 1)[1]
        try:
            text = resources.files("snf.presets").joinpath(f"{name}.cfg").read_text()
        except FileNotFoundError:
            raise ConfigError(f"no bundled preset {name!r} (have: {', '.join(presets())})") from None
        return parse_config(text, path, overrides)
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        return parse_config(fh.read(), path, overrides)


def presets() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("snf.presets").iterdir()
                  if p.name.endswith(".cfg"))
