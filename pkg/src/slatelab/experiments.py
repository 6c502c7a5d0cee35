"""Experiment configuration, deterministic bucketing, exposure tagging.

A visitor's bucket comes from a stable hash of the experiment salt and
visitor id, so assignment is reproducible across processes and runs.
Raising the traffic fraction only adds visitors (monotone inclusion):
anyone below the old fraction stays below the new one.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .hashing import hash64
from .scoring import ScoreParams

RANKER_MODES = ("scored", "baseline")


class ExperimentError(Exception):
    pass


class ConflictingVariantError(ExperimentError):
    pass


@dataclass
class Variant:
    variant_tag: str
    weight: float
    score_params: ScoreParams = field(default_factory=ScoreParams)
    ranker_mode: str = "scored"
    model_versions: dict[str, int] = field(default_factory=dict)
    is_control: bool = False

    def to_dict(self) -> dict:
        return {
            "variant_tag": self.variant_tag,
            "weight": self.weight,
            "score_params": self.score_params.to_dict(),
            "ranker_mode": self.ranker_mode,
            "model_versions": self.model_versions,
            "is_control": self.is_control,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Variant":
        return cls(
            variant_tag=raw["variant_tag"],
            weight=float(raw["weight"]),
            score_params=ScoreParams.from_dict(raw.get("score_params", {})),
            ranker_mode=raw.get("ranker_mode", "scored"),
            model_versions={k: int(v) for k, v in
                            raw.get("model_versions", {}).items()},
            is_control=bool(raw.get("is_control", False)),
        )


@dataclass
class ExperimentConfig:
    experiment_id: str
    name: str
    salt: str
    traffic_fraction: float
    variants: list[Variant]
    start_date: dt.date
    end_date: dt.date

    def validate(self) -> None:
        if not 0 < self.traffic_fraction <= 1:
            raise ExperimentError("traffic_fraction must be in (0, 1]")
        if not self.variants:
            raise ExperimentError("experiment needs at least one variant")
        tags = [v.variant_tag for v in self.variants]
        if len(set(tags)) != len(tags):
            raise ExperimentError("variant tags must be unique")
        total = sum(v.weight for v in self.variants)
        if abs(total - 1.0) > 1e-9:
            raise ExperimentError(f"variant weights sum to {total}, not 1")
        if any(v.weight <= 0 for v in self.variants):
            raise ExperimentError("variant weights must be positive")
        controls = [v for v in self.variants if v.is_control]
        if len(controls) != 1:
            raise ExperimentError(
                f"exactly one control variant required, found {len(controls)}")
        for variant in self.variants:
            if variant.ranker_mode not in RANKER_MODES:
                raise ExperimentError(
                    f"unknown ranker_mode {variant.ranker_mode!r}")
        if self.end_date < self.start_date:
            raise ExperimentError("end_date precedes start_date")

    @property
    def control(self) -> Variant:
        return next(v for v in self.variants if v.is_control)

    def variant(self, tag: str) -> Variant:
        for variant in self.variants:
            if variant.variant_tag == tag:
                return variant
        raise ExperimentError(f"unknown variant {tag!r}")

    def variant_tags(self) -> list[str]:
        return [v.variant_tag for v in self.variants]

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "name": self.name,
            "salt": self.salt,
            "traffic_fraction": self.traffic_fraction,
            "variants": [v.to_dict() for v in self.variants],
            "start_date": self.start_date.isoformat(),
            "end_date": self.end_date.isoformat(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        config = cls(
            experiment_id=raw["experiment_id"],
            name=raw.get("name", raw["experiment_id"]),
            salt=raw["salt"],
            traffic_fraction=float(raw["traffic_fraction"]),
            variants=[Variant.from_dict(v) for v in raw["variants"]],
            start_date=dt.date.fromisoformat(raw["start_date"]),
            end_date=dt.date.fromisoformat(raw["end_date"]),
        )
        config.validate()
        return config


def bucket_value(salt: str, visitor_id: str) -> float:
    """The visitor's stable position in [0, 1) for this salt."""
    return hash64(f"{salt}:{visitor_id}") / 2.0**64


def assign(visitor_id: str, config: ExperimentConfig) -> Optional[str]:
    """Deterministic variant assignment; None when outside the ramp.

    The bucket value below traffic_fraction is rescaled to [0, 1) and
    mapped through the cumulative variant weights.
    """
    config.validate()
    h = bucket_value(config.salt, visitor_id)
    if h >= config.traffic_fraction:
        return None
    u = h / config.traffic_fraction
    cumulative = 0.0
    for variant in config.variants:
        cumulative += variant.weight
        if u < cumulative:
            return variant.variant_tag
    return config.variants[-1].variant_tag  # u == 1 - eps edge


def tag_exposure(row, variant_tag: str):
    """Stamp a funnel row (or raw event dict) with its variant.

    Re-tagging with the same tag is a no-op; a different tag means two
    code paths disagree about the assignment and is refused.
    """
    current = (row.get("variant_tag", "") if isinstance(row, dict)
               else row.variant_tag)
    if current and current != variant_tag:
        raise ConflictingVariantError(
            f"row already tagged {current!r}, refusing {variant_tag!r}")
    if isinstance(row, dict):
        row["variant_tag"] = variant_tag
    else:
        row.variant_tag = variant_tag
    return row


class ExperimentStore:
    """JSON-file config store; ended experiments stay listed forever."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._configs: dict[str, ExperimentConfig] = {}
        for path in sorted(self.root.glob("*.json")):
            raw = json.loads(path.read_text(encoding="utf-8"))
            config = ExperimentConfig.from_dict(raw)
            self._configs[config.experiment_id] = config

    def save(self, config: ExperimentConfig) -> None:
        config.validate()
        path = self.root / f"{config.experiment_id}.json"
        path.write_text(json.dumps(config.to_dict(), indent=2),
                        encoding="utf-8")
        self._configs[config.experiment_id] = config

    def get(self, experiment_id: str) -> ExperimentConfig:
        try:
            return self._configs[experiment_id]
        except KeyError:
            raise ExperimentError(
                f"unknown experiment {experiment_id!r}") from None

    def list_experiments(self) -> list[ExperimentConfig]:
        return [self._configs[k] for k in sorted(self._configs)]
