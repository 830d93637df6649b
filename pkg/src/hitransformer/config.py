"""Model hyperparameters and the flat ``key=value`` text format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass
class ModelConfig:
    d: int = 256
    heads: int = 8
    layers: int = 2
    k_max: int = 32
    m_max: int = 64
    d_ff: int = 0  # 0 means 4 * d
    vocab_size: int = 30000
    num_classes: int = 2
    dropout: float = 0.2
    flat_max_len: int = 512
    use_context_propagation: bool = True
    flat: bool = False  # build the flat baseline instead of the hierarchical model
    pretrained_dim: int = 0  # 0: embeddings of width d; else table of this width + projection
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d_ff == 0:
            self.d_ff = 4 * self.d
        self.validate()

    def validate(self) -> None:
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"heads ({self.heads}) must divide d ({self.d})")
        for name in ("layers", "k_max", "m_max", "flat_max_len", "vocab_size", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_ff < self.d:
            raise ConfigError(f"d_ff ({self.d_ff}) must be >= d ({self.d})")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.pretrained_dim < 0:
            raise ConfigError("pretrained_dim must be >= 0")

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """The gradcheck-sized model: d=8, 2 heads, 1 layer, M=3, K=5, vocab 50, 2 classes."""
        base = dict(d=8, heads=2, layers=1, k_max=5, m_max=3, vocab_size=50, num_classes=2, dropout=0.0, flat_max_len=15)
        base.update(overrides)
        return cls(**base)

    def to_text(self) -> str:
        return dump_kv(dataclasses.asdict(self))

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        return cls(**coerce_fields(cls, parse_kv(text)))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text())


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def dump_kv(values: dict) -> str:
    lines = []
    for key in sorted(values):
        value = values[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        elif value is None:
            value = ""
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def coerce(value: str, typ, key: str):
    try:
        if typ is bool or typ == "bool":
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ is int or typ == "int":
            return int(value)
        if typ is float or typ == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r} as {getattr(typ, '__name__', typ)}") from None
    return value


def coerce_fields(cls, raw: dict[str, str]) -> dict:
    fields = {f.name: f.type for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return {k: coerce(v, fields[k], k) for k, v in raw.items()}
