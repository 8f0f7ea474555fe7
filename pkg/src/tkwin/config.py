"""Pipeline configuration and its JSON form."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class PipelineConfig:
    size: list[int] = field(default_factory=lambda: [128, 128])
    stages: int = 4
    topk_schedule: str = "auto"
    features: str = "learned"
    widths: list[int] = field(default_factory=lambda: [8, 16, 32, 64])
    attn_temperature: float = 1.0
    match_temperature: float = 0.1
    refine_temperature: float = 1.0
    threshold: float = 0.2
    fine_window: int = 5
    loss_weights: list[float] = field(default_factory=lambda: [1.0, 1.0, 0.25])
    loss_window: int = 2
    learning_rate: float = 1e-3
    seed: int = 0
    ransac_iters: int = 1000
    inlier_px: float = 3.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if len(self.size) != 2 or any(int(v) <= 0 or int(v) % 16 for v in self.size):
            raise ConfigError(f"size must be two positive multiples of 16, got {self.size}")
        if self.stages < 1:
            raise ConfigError(f"stages must be >= 1, got {self.stages}")
        self.fixed_topk  # parses topk_schedule
        if self.features not in ("learned", "handcrafted"):
            raise ConfigError(f"features must be 'learned' or 'handcrafted', got {self.features!r}")
        if len(self.widths) != 4 or any(int(w) < 1 for w in self.widths):
            raise ConfigError(f"widths needs four positive entries, got {self.widths}")
        for name in ("attn_temperature", "match_temperature", "refine_temperature"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.fine_window < 1 or self.fine_window % 2 == 0:
            raise ConfigError(f"fine_window must be a positive odd integer, got {self.fine_window}")
        if len(self.loss_weights) != 3 or any(w < 0 for w in self.loss_weights) or not any(
            w > 0 for w in self.loss_weights
        ):
            raise ConfigError(f"loss_weights needs three nonnegative values, one positive: {self.loss_weights}")
        if self.loss_window < 1:
            raise ConfigError("loss_window must be >= 1")
        if self.ransac_iters < 1 or self.inlier_px <= 0:
            raise ConfigError("ransac_iters must be >= 1 and inlier_px > 0")

    @property
    def fixed_topk(self) -> int | None:
        """None for the automatic 2^m schedule, else the fixed top-k."""
        if self.topk_schedule == "auto":
            return None
        if self.topk_schedule.startswith("fixed:"):
            try:
                k = int(self.topk_schedule.split(":", 1)[1])
            except ValueError:
                k = 0
            if k >= 1:
                return k
        raise ConfigError(f"topk_schedule must be 'auto' or 'fixed:<k>', got {self.topk_schedule!r}")

    @property
    def height(self) -> int:
        return int(self.size[0])

    @property
    def width(self) -> int:
        return int(self.size[1])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)
