"""Run configuration: every tunable with its default, loadable from JSON.

Precedence is command-line flag > config file > built-in default; the CLI
logs the effective values at startup.
"""

import json
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError
from .imaging import GeometryConfig, SkinBounds


@dataclass
class RunConfig:
    rows: int = 61
    cols: int = 57
    left_eye_target: tuple = (0.38, 0.30)
    right_eye_target: tuple = (0.38, 0.70)
    g: int | None = None          # None selects the 95%-energy count
    h: int | None = None
    energy: float = 0.95
    q: int = 1
    d: int = 1
    ridge: float = 1e-6
    bins: int = 64
    hist_lo: float = -128.0
    hist_hi: float = 128.0
    skin_cr_lo: float = 133.0
    skin_cr_hi: float = 173.0
    skin_cb_lo: float = 77.0
    skin_cb_hi: float = 127.0
    fusion_mode: str = "fused"
    weight_step: float = 0.05
    threshold_mode: str = "global"
    seed: int = 0

    def __post_init__(self):
        self.left_eye_target = tuple(self.left_eye_target)
        self.right_eye_target = tuple(self.right_eye_target)
        if self.energy <= 0.0 or self.energy > 1.0:
            raise ConfigError(f"energy {self.energy} outside (0, 1]")
        if self.q < 1 or self.d < 1:
            raise ConfigError("q and d must be >= 1")
        if self.ridge < 0.0:
            raise ConfigError("ridge must be >= 0")
        if not 0.0 < self.weight_step <= 1.0:
            raise ConfigError(f"weight_step {self.weight_step} outside (0, 1]")
        if self.fusion_mode not in ("grey_only", "color_only", "fused"):
            raise ConfigError(f"unknown fusion_mode {self.fusion_mode!r}")
        if self.threshold_mode not in ("global", "per_client"):
            raise ConfigError(f"unknown threshold_mode {self.threshold_mode!r}")
        # These constructors validate their own ranges.
        self.geometry()
        self.skin_bounds()
        if not self.hist_lo < self.hist_hi:
            raise ConfigError("hist_lo must be < hist_hi")
        if self.bins < 2:
            raise ConfigError("need at least 2 histogram bins")

    def geometry(self) -> GeometryConfig:
        return GeometryConfig(rows=self.rows, cols=self.cols,
                              left_eye_target=self.left_eye_target,
                              right_eye_target=self.right_eye_target)

    def skin_bounds(self) -> SkinBounds:
        return SkinBounds(cr_lo=self.skin_cr_lo, cr_hi=self.skin_cr_hi,
                          cb_lo=self.skin_cb_lo, cb_hi=self.skin_cb_hi)

    def weight_grid(self):
        steps = round(1.0 / self.weight_step)
        return [min(1.0, i * self.weight_step) for i in range(steps + 1)]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["left_eye_target"] = list(self.left_eye_target)
        out["right_eye_target"] = list(self.right_eye_target)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(data)
