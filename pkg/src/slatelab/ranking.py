"""Featured-page ranking: scored units with top-4 de-duplication.

Courses sort by personalized score inside each unit. Units are then
picked greedily: a unit's score is the sum of its current top-4 course
scores; after each pick, that winner's top 4 disappear from every
remaining unit's candidates, which keeps the page's initial view free
of repeats while letting deeper expansion rows overlap.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

UNIT_TYPES = (
    "because-you-searched",
    "because-you-enrolled",
    "also-viewed",
    "new-noteworthy",
    "now-viewing",
    "bestsellers",
    "custom",
)

VISIBLE_DEFAULT = 4
EXPAND_TO = 12
MAX_CANDIDATES = 24


class RankingError(Exception):
    pass


class MissingScoreError(RankingError):
    pass


@dataclass
class Unit:
    unit_id: int
    candidate_courses: list[int]
    unit_type: str = "custom"

    def validate(self) -> None:
        if self.unit_type not in UNIT_TYPES:
            raise RankingError(f"unknown unit_type {self.unit_type!r}")
        if len(self.candidate_courses) > MAX_CANDIDATES:
            raise RankingError(
                f"unit {self.unit_id} has {len(self.candidate_courses)} "
                f"candidates, max is {MAX_CANDIDATES}")
        if len(set(self.candidate_courses)) != len(self.candidate_courses):
            raise RankingError(f"unit {self.unit_id} has duplicate candidates")


@dataclass
class RankedUnit:
    unit_id: int
    course_ids: list[int]
    unit_score: float

    def visible(self) -> list[int]:
        """The default view: the unit's first four courses."""
        return self.course_ids[:VISIBLE_DEFAULT]

    def expanded(self) -> list[int]:
        """The view after the expansion button: up to twelve courses."""
        return self.course_ids[:EXPAND_TO]


@dataclass
class RankedPage:
    units: list[RankedUnit] = field(default_factory=list)

    def visible_courses(self) -> list[list[int]]:
        return [unit.visible() for unit in self.units]


def rank_unit(unit: Unit, scores: Mapping[int, float]) -> list[int]:
    """Candidates by score descending, course id breaking ties."""
    unit.validate()
    missing = [c for c in unit.candidate_courses if c not in scores]
    if missing:
        raise MissingScoreError(
            f"unit {unit.unit_id} has unscored courses: {missing}")
    return sorted(unit.candidate_courses, key=lambda c: (-scores[c], c))


def rank_page(units: Sequence[Unit], scores: Mapping[int, float]) -> RankedPage:
    """Greedy page assembly with first-4 de-duplication.

    Each round scores every remaining unit as the sum of its current
    top-min(4, n) courses, selects the highest (lower unit_id on ties),
    then strikes the winner's top 4 from all other units. Units drained
    of candidates drop off the page.
    """
    if not units:
        raise RankingError("no units to rank")
    ids = [u.unit_id for u in units]
    if len(set(ids)) != len(ids):
        raise RankingError("duplicate unit_id on page")
    pool: dict[int, list[int]] = {}
    for unit in units:
        ordered = rank_unit(unit, scores)
        if ordered:
            pool[unit.unit_id] = ordered

    removed: set[int] = set()
    page = RankedPage()
    while pool:
        best_id = None
        best_score = 0.0
        best_courses: list[int] = []
        for unit_id in sorted(pool):
            current = [c for c in pool[unit_id] if c not in removed]
            if not current:
                continue
            unit_score = sum(scores[c] for c in current[:VISIBLE_DEFAULT])
            if best_id is None or unit_score > best_score:
                best_id, best_score, best_courses = (unit_id, unit_score,
                                                     current)
        if best_id is None:
            break
        page.units.append(RankedUnit(best_id, best_courses, best_score))
        removed.update(best_courses[:VISIBLE_DEFAULT])
        del pool[best_id]
    return page


def baseline_page(units: Sequence[Unit], rng: random.Random) -> RankedPage:
    """Control-arm page: configured unit order, shuffled courses.

    Matches the pre-launch behavior being tested against: a rule-based
    unit ordering with course order re-randomized on every page view,
    and no de-duplication.
    """
    if not units:
        raise RankingError("no units to rank")
    page = RankedPage()
    for unit in units:
        unit.validate()
        courses = list(unit.candidate_courses)
        rng.shuffle(courses)
        if courses:
            page.units.append(RankedUnit(unit.unit_id, courses, 0.0))
    return page


def units_from_dicts(raw_units: Iterable[dict]) -> list[Unit]:
    units = []
    for raw in raw_units:
        unit = Unit(
            unit_id=int(raw["unit_id"]),
            candidate_courses=[int(c) for c in raw["candidate_courses"]],
            unit_type=raw.get("unit_type", "custom"),
        )
        unit.validate()
        units.append(unit)
    return units
