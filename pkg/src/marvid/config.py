"""Model configuration: one flat record, a text format, and validation.

Config files are plain key=value lines (# comments and blank lines are
fine).  The same text block is echoed into checkpoints, and its CRC doubles
as the config hash quoted in evaluation reports, so serialization has to be
canonical: fixed field order, repr-style floats.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, fields

from .errors import ConfigError
from .masking import AR_MODES


@dataclass
class ModelConfig:
    frames: int = 8          # T
    img_size: int = 32       # square frames
    channels: int = 1
    patch: int = 8           # N = (img_size / patch)^2 tokens per frame
    dim: int = 64
    depth: int = 5
    mamba_per_attn: int = 4  # scan layers per attention layer; 0 = all attention
    heads: int = 4
    state: int = 8           # S
    mask_ratio: float = 0.5
    teacher_dim: int = 32
    decoder_depth: int = 3
    ar_mode: str = "frame"
    seed: int = 0

    @property
    def grid(self) -> int:
        return self.img_size // self.patch

    @property
    def tokens_per_frame(self) -> int:
        return self.grid * self.grid

    @property
    def seq_len(self) -> int:
        """Encoder sequence length: all patch tokens plus the cls slot."""
        return self.frames * self.tokens_per_frame + 1

    def validate(self) -> "ModelConfig":
        def need(cond, key, why):
            if not cond:
                raise ConfigError(f"config key '{key}': {why}")
        need(self.frames >= 1, "frames", "must be at least 1")
        need(self.img_size >= 1, "img_size", "must be at least 1")
        need(self.channels >= 1, "channels", "must be at least 1")
        need(self.patch >= 1, "patch", "must be at least 1")
        need(self.img_size % self.patch == 0, "patch",
             f"must divide img_size {self.img_size}, got {self.patch}")
        need(self.dim >= 1, "dim", "must be at least 1")
        need(self.heads >= 1, "heads", "must be at least 1")
        need(self.dim % self.heads == 0, "heads",
             f"must divide dim {self.dim}, got {self.heads}")
        need(self.depth >= 1, "depth", "must be at least 1")
        need(self.mamba_per_attn >= 0, "mamba_per_attn", "must be non-negative")
        need(self.state >= 1, "state", "must be at least 1")
        need(0.0 <= self.mask_ratio <= 1.0, "mask_ratio",
             f"must lie in [0, 1], got {self.mask_ratio}")
        need(self.teacher_dim >= 1, "teacher_dim", "must be at least 1")
        need(self.decoder_depth >= 1, "decoder_depth", "must be at least 1")
        need(self.ar_mode in AR_MODES, "ar_mode",
             f"must be one of {', '.join(AR_MODES)}, got '{self.ar_mode}'")
        return self


_FIELD_TYPES = {f.name: f.type for f in fields(ModelConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"config key '{key}': cannot parse '{raw}'") from e


def parse_config(path: str | None = None, overrides: dict | None = None) -> ModelConfig:
    """Build a validated config from an optional file plus overrides.

    Overrides (typically CLI flags) win over file values, which win over
    defaults.  Unknown keys and unparseable values raise ConfigError naming
    the key.
    """
    values: dict = {}
    if path is not None:
        try:
            text = open(path, "r", encoding="utf-8").read()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        for ln, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key=value, got '{line}'")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in _FIELD_TYPES:
                raise ConfigError(f"unknown config key '{key}'")
            values[key] = _coerce(key, raw)
    for key, val in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key '{key}'")
        values[key] = _coerce(key, str(val)) if isinstance(val, str) else val
    return ModelConfig(**values).validate()


def config_text(config: ModelConfig) -> str:
    """Canonical key=value block, one field per line in declaration order."""
    lines = [f"{f.name}={getattr(config, f.name)!r}" if isinstance(getattr(config, f.name), str)
             else f"{f.name}={getattr(config, f.name)}" for f in fields(ModelConfig)]
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ModelConfig:
    """Inverse of config_text, used when reading checkpoints."""
    values: dict = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, raw = line.split("=", 1)
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key '{key}' in stored config")
        if _FIELD_TYPES[key] == "str":
            raw = raw.strip("'\"")
        values[key] = _coerce(key, raw)
    return ModelConfig(**values).validate()


def config_hash(config: ModelConfig) -> str:
    """Stable 8-hex-digit fingerprint of the canonical text."""
    return f"{zlib.crc32(config_text(config).encode('utf-8')):08x}"
