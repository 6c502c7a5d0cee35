"""Factorized course scoring over active tree models.

The score multiplies a predicted enrollment rate by optional price,
consumption, and quality factors, each gated by its exponent, then by
the explore/exploit interest multiplier raised to tau. Exponents of
zero switch a factor off entirely, so presets can mix and match models
without retraining anything.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .features import INTEREST_MULTIPLIERS, FeatureSnapshot
from .hashing import hash64
from .trees import RegressionTree

CACHE_FORMAT = "slatelab-score-cache"
CACHE_VERSION = 1


class ScoringError(Exception):
    pass


class MissingActiveModelError(ScoringError):
    pass


@dataclass(frozen=True)
class ScoreParams:
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    tau: float = 0.0
    p_min: float = 1.0

    def validate(self) -> None:
        for name in ("alpha", "beta", "gamma", "tau", "p_min"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ScoringError(f"{name} must be finite")
            if value < 0:
                raise ScoringError(f"{name} must be non-negative")
        if self.p_min <= 0:
            raise ScoringError("p_min must be positive")

    def required_targets(self) -> tuple[str, ...]:
        targets = ["epmi"]
        if self.beta != 0:
            targets.append("cpe")
        if self.gamma != 0:
            targets.append("npe")
        return tuple(targets)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
                "tau": self.tau, "p_min": self.p_min}

    @classmethod
    def from_dict(cls, raw: dict) -> "ScoreParams":
        params = cls(**{k: float(v) for k, v in raw.items()
                        if k in ("alpha", "beta", "gamma", "tau", "p_min")})
        params.validate()
        return params


# Named presets, one per targeting metric; "quality" is the
# enrollment-weighted quality product and "blended" splits the
# difference on every factor.
PRESETS = {
    "enrollment": ScoreParams(0.0, 0.0, 0.0),
    "consumption": ScoreParams(0.0, 1.0, 0.0),
    "revenue": ScoreParams(1.0, 0.0, 0.0),
    "quality": ScoreParams(0.0, 0.0, 1.0),
    "blended": ScoreParams(0.5, 0.5, 0.5),
}


@dataclass(slots=True)
class ScoreCacheEntry:
    visitor_id: str
    as_of: str
    scores: dict[int, float]
    variant_tag: str = ""


class Scorer:
    """Scores courses for visitors against one feature snapshot.

    Pure over the snapshot and models: the batch cache and the
    on-request path call the same code, so they agree to the bit.
    """

    def __init__(self, snapshot: FeatureSnapshot,
                 models: dict[str, RegressionTree]):
        self.snapshot = snapshot
        self.models = models

    def _require_models(self, params: ScoreParams) -> None:
        missing = [t for t in params.required_targets()
                   if t not in self.models]
        if missing:
            raise MissingActiveModelError(
                f"no active model for target(s): {', '.join(missing)}")

    def score(self, visitor_id: str, course_id: int,
              params: ScoreParams, context: str = "featured") -> float:
        params.validate()
        self._require_models(params)
        vector = self.snapshot.feature_vector(visitor_id, course_id, context)
        return self._score_vector(vector, params)

    def _score_vector(self, vector: dict, params: ScoreParams) -> float:
        score = max(self.models["epmi"].predict(vector), 0.0)
        if params.alpha != 0:
            price = max(vector["price"], params.p_min)
            score *= price ** params.alpha
        if params.beta != 0:
            cpe = max(self.models["cpe"].predict(vector), 0.0)
            score *= cpe ** params.beta
        if params.gamma != 0:
            npe = max(self.models["npe"].predict(vector), 0.0)
            score *= npe ** params.gamma
        if params.tau != 0:
            base = INTEREST_MULTIPLIERS[vector["course_interest_state"]]
            score *= base ** params.tau
        return score

    def score_many(self, visitor_id: str, course_ids: Iterable[int],
                   params: ScoreParams,
                   context: str = "featured") -> dict[int, float]:
        """The per-request path: one visitor, a candidate set."""
        params.validate()
        self._require_models(params)
        out = {}
        for course_id in course_ids:
            vector = self.snapshot.feature_vector(visitor_id, course_id,
                                                  context)
            out[course_id] = self._score_vector(vector, params)
        return out


@dataclass
class BatchReport:
    partitions: int
    completed: list[int] = field(default_factory=list)
    skipped: list[int] = field(default_factory=list)
    failed: list[tuple[int, str]] = field(default_factory=list)
    entries: int = 0


def batch_score(scorer: Scorer, visitor_ids: Iterable[str],
                course_ids: Iterable[int], params: ScoreParams,
                out_dir: Optional[str | Path] = None,
                partitions: int = 4,
                variant_tag: str = "") -> tuple[dict[str, ScoreCacheEntry],
                                                BatchReport]:
    """Score every visitor against the candidate set, per partition.

    Visitors hash into partitions; each partition lands in its own
    snapshot file written atomically, so a restarted job skips the
    partitions already on disk and a failed partition never leaves a
    half-written file behind.
    """
    course_ids = list(course_ids)
    as_of = scorer.snapshot.as_of.isoformat()
    buckets: dict[int, list[str]] = {i: [] for i in range(partitions)}
    for visitor in visitor_ids:
        buckets[hash64(visitor) % partitions].append(visitor)

    report = BatchReport(partitions=partitions)
    entries: dict[str, ScoreCacheEntry] = {}
    for part in range(partitions):
        path = None
        if out_dir is not None:
            path = Path(out_dir) / f"scores-part{part:04d}.ndjson"
            if path.exists():
                report.skipped.append(part)
                for entry in read_cache_snapshot(path).values():
                    entries[entry.visitor_id] = entry
                continue
        try:
            part_entries = {}
            for visitor in buckets[part]:
                scores = scorer.score_many(visitor, course_ids, params)
                part_entries[visitor] = ScoreCacheEntry(
                    visitor_id=visitor, as_of=as_of, scores=scores,
                    variant_tag=variant_tag)
        except Exception as exc:  # noqa: BLE001 - partition isolation
            report.failed.append((part, str(exc)))
            continue
        if path is not None:
            write_cache_snapshot(path, part_entries.values(), as_of, params)
        entries.update(part_entries)
        report.completed.append(part)
        report.entries += len(part_entries)
    return entries, report


def write_cache_snapshot(path: str | Path, entries, as_of: str,
                         params: ScoreParams) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "format": CACHE_FORMAT, "version": CACHE_VERSION,
            "as_of": as_of, "params": params.to_dict(),
        }) + "\n")
        for entry in entries:
            fh.write(json.dumps({
                "visitor_id": entry.visitor_id,
                "variant_tag": entry.variant_tag,
                "scores": {str(k): v for k, v in entry.scores.items()},
            }) + "\n")
    os.replace(tmp, path)


def read_cache_snapshot(path: str | Path) -> dict[str, ScoreCacheEntry]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != CACHE_FORMAT:
            raise ScoringError(f"{path} is not a score cache snapshot")
        if header.get("version") != CACHE_VERSION:
            raise ScoringError(
                f"unsupported cache version {header.get('version')}")
        as_of = header["as_of"]
        out = {}
        for line in fh:
            raw = json.loads(line)
            out[raw["visitor_id"]] = ScoreCacheEntry(
                visitor_id=raw["visitor_id"], as_of=as_of,
                scores={int(k): float(v) for k, v in raw["scores"].items()},
                variant_tag=raw.get("variant_tag", ""))
    return out
