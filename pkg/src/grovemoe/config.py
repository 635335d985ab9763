"""Architecture hyperparameters and their validity constraints."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path


@dataclass(frozen=True)
class GroveConfig:
    """Everything needed to build a layer.

    d: token feature dimension
    n: expert count
    k: experts activated per token
    g: adjugate group count (g must divide n)
    h: adjugate intermediate dimension
    m: expert intermediate dimension
    lam: adjugate scaling factor, 0 < lam <= g/n
    alpha: balance-bias update rate
    sigma_init: std of the adjugate gate/up init
    seed: RNG seed for all stochastic construction
    """

    d: int = 32
    n: int = 128
    k: int = 8
    g: int = 64
    h: int = 8
    m: int = 48
    lam: float = 0.05
    alpha: float = 0.001
    sigma_init: float = 0.006
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("d", "n", "k", "g", "h", "m"):
            if getattr(self, name) < 0 or (name in ("d", "n", "k", "g") and getattr(self, name) < 1):
                raise ValueError(f"config field {name!r} must be positive, got {getattr(self, name)}")
        if self.n % self.g != 0:
            raise ValueError(f"config field 'g': group count {self.g} must divide expert count {self.n}")
        if not (1 <= self.k <= self.n):
            raise ValueError(f"config field 'k': top-k {self.k} must lie in [1, {self.n}]")
        bound = self.g / self.n
        if not (0 < self.lam <= bound):
            raise ValueError(
                f"config field 'lambda': scaling factor {self.lam} must lie in (0, g/n] = (0, {bound}]"
            )
        if self.sigma_init < 0:
            raise ValueError(f"config field 'sigma_init' must be nonnegative, got {self.sigma_init}")
        if self.alpha < 0:
            raise ValueError(f"config field 'alpha' must be nonnegative, got {self.alpha}")

    @property
    def group_size(self) -> int:
        return self.n // self.g

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "GroveConfig":
        raw = dict(raw)
        if "lambda" in raw:
            raw["lam"] = raw.pop("lambda")
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path: str | Path) -> "GroveConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_file(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
