"""Seeded marketplace simulator with plantable effects.

Generates a course catalog with latent appeal/quality, then plays
visitor sessions day by day: assign a variant, build candidate units,
rank the page (baseline shuffle or trailing-aggregate scores with the
interest multiplier), examine units under geometric position bias, and
draw clicks, enrollments, consumption, and NPS from documented
distributions. Every impression is logged, clicks or not, so negative
feedback is first-class.

Scenarios plant ground truth the analytics stack must recover: "aa"
plants nothing, "uniform_lift" scales one behavior probability in the
test arm, "interest_ratios" conditions per-impression enrollment on the
visitor's prior-day interest state at exact multipliers, and
"explore_vs_popularity" applies the same state multipliers to clicks so
an interest-aware ranker beats a popularity-only one.

Determinism: all randomness derives from the config seed through
per-session stable hashes; a config re-run reproduces the event log
byte for byte.
"""

from __future__ import annotations

import datetime as dt
import json
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .experiments import ExperimentConfig, assign
from .features import (
    INTEREST_MULTIPLIERS,
    TRAILING_WINDOW_DAYS,
    compute_trailing_aggregates,
)
from .hashing import hash64
from .ranking import Unit, baseline_page, rank_page
from .store import FunnelStore

SCENARIO_KINDS = ("aa", "uniform_lift", "interest_ratios",
                  "explore_vs_popularity")

UNIT_TYPE_CYCLE = ("bestsellers", "new-noteworthy", "also-viewed",
                   "because-you-searched", "now-viewing", "custom")


class SimError(Exception):
    pass


@dataclass(frozen=True)
class Scenario:
    kind: str = "aa"
    measure: str = "clicks"  # uniform_lift target: clicks | enrollments
    lift_pct: float = 0.0
    ratios: tuple[float, float, float] = (0.8, 1.0, 3.1)  # neg, null, pos

    def validate(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise SimError(f"unknown scenario {self.kind!r}")
        if self.kind == "uniform_lift" and self.measure not in (
                "clicks", "enrollments"):
            raise SimError(f"cannot plant a lift on {self.measure!r}")

    def multiplier(self, state: str) -> float:
        neg, null, pos = self.ratios
        return {"negative": neg, "null": null, "positive": pos}[state]


@dataclass
class SimConfig:
    """Full behavioral parameterization; every constant lives here."""

    seed: int = 7
    n_courses: int = 300
    n_subcategories: int = 30
    n_visitors: int = 500
    n_days: int = 14
    free_course_fraction: float = 0.25
    position_bias_decay: float = 0.85
    scenario: Scenario = field(default_factory=Scenario)
    start_date: dt.date = dt.date(2024, 1, 1)
    visit_probability: float = 1.0
    n_units: int = 6
    unit_size: int = 24
    # click model: sigmoid(base + appeal_scale*appeal + affinity + planted)
    click_base_logit: float = -2.2
    appeal_scale: float = 0.7
    affinity_scale: float = 0.5
    enroll_given_click: float = 0.18
    # per-impression enrollment rate planted by interest_ratios
    base_enrollment_rate: float = 0.02
    minutes_scale: float = 60.0
    nps_response_rate: float = 0.5
    price_tiers: tuple[float, ...] = (9.99, 19.99, 49.99, 99.99, 199.99)

    def validate(self) -> None:
        if not 0 <= self.free_course_fraction <= 1:
            raise SimError("free_course_fraction must be in [0, 1]")
        if not 0 < self.position_bias_decay <= 1:
            raise SimError("position_bias_decay must be in (0, 1]")
        for name in ("n_courses", "n_subcategories", "n_visitors", "n_days",
                     "n_units", "unit_size"):
            if getattr(self, name) <= 0:
                raise SimError(f"{name} must be positive")
        self.scenario.validate()

    def to_dict(self) -> dict:
        raw = asdict(self)
        raw["start_date"] = self.start_date.isoformat()
        raw["scenario"] = {"kind": self.scenario.kind,
                           "measure": self.scenario.measure,
                           "lift_pct": self.scenario.lift_pct,
                           "ratios": list(self.scenario.ratios)}
        raw["price_tiers"] = list(self.price_tiers)
        return raw

    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        raw = dict(raw)
        if "scenario" in raw:
            s = dict(raw["scenario"])
            if "ratios" in s:
                s["ratios"] = tuple(s["ratios"])
            raw["scenario"] = Scenario(**s)
        if "start_date" in raw:
            raw["start_date"] = dt.date.fromisoformat(raw["start_date"])
        if "price_tiers" in raw:
            raw["price_tiers"] = tuple(raw["price_tiers"])
        config = cls(**raw)
        config.validate()
        return config


@dataclass(slots=True)
class LatentCourse:
    course_id: int
    appeal: float
    quality: float
    price: float
    subcategory_id: int
    published_date: dt.date


def generate_catalog(config: SimConfig) -> tuple[list[LatentCourse],
                                                 list[dict]]:
    """Courses with latent behavior drivers, plus their dimension rows.

    Appeal is standard normal (drives clicks); quality is a clipped
    normal around 0.65 (drives minutes and NPS). Subcategories group
    five to a category; the free fraction of the catalog is priced 0.
    """
    config.validate()
    rng = random.Random(hash64(f"{config.seed}:catalog"))
    courses = []
    rows = []
    for cid in range(1, config.n_courses + 1):
        appeal = rng.gauss(0.0, 1.0)
        quality = min(max(rng.gauss(0.65, 0.15), 0.05), 1.0)
        free = rng.random() < config.free_course_fraction
        price = 0.0 if free else rng.choice(list(config.price_tiers))
        subcategory = rng.randrange(config.n_subcategories) + 1
        published = config.start_date - dt.timedelta(
            days=rng.randint(30, 400))
        courses.append(LatentCourse(cid, appeal, quality, price,
                                    subcategory, published))
        rows.append({
            "course_id": cid,
            "subcategory_id": subcategory,
            "category_id": (subcategory + 4) // 5,
            "price": price,
            "published_date": published.isoformat(),
        })
    return courses, rows


@dataclass
class SimResult:
    config: SimConfig
    experiment: ExperimentConfig
    catalog: list[LatentCourse]
    course_rows: list[dict]
    events: list[dict]
    store: FunnelStore

    def free_course_ids(self) -> set[int]:
        return {c.course_id for c in self.catalog if c.price == 0.0}


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


class _Marketplace:
    """One simulation run; split out of run_sessions for readability."""

    def __init__(self, config: SimConfig, experiment: ExperimentConfig):
        config.validate()
        experiment.validate()
        self.config = config
        self.experiment = experiment
        self.catalog, self.course_rows = generate_catalog(config)
        self.by_id = {c.course_id: c for c in self.catalog}
        self.course_ids = [c.course_id for c in self.catalog]
        self.store = FunnelStore()
        self.store.register_dimension("course", ["course_id"],
                                      self.course_rows)
        # (visitor, course) -> (last impression date, clicked that day)
        self.state: dict[tuple[str, int], tuple[dt.date, bool]] = {}
        self.affinity_cache: dict[tuple[str, int], float] = {}
        self.events: list[dict] = []

    def affinity(self, visitor: str, subcategory: int) -> float:
        key = (visitor, subcategory)
        cached = self.affinity_cache.get(key)
        if cached is None:
            rng = random.Random(hash64(
                f"{self.config.seed}:aff:{visitor}:{subcategory}"))
            cached = rng.gauss(0.0, 1.0) * self.config.affinity_scale
            self.affinity_cache[key] = cached
        return cached

    def interest_state(self, visitor: str, course: int,
                       date: dt.date) -> str:
        entry = self.state.get((visitor, course))
        if entry is None:
            return "null"
        last_date, clicked = entry
        lookback = (date - dt.timedelta(days=1)) - dt.timedelta(
            days=TRAILING_WINDOW_DAYS - 1)
        if last_date > date - dt.timedelta(days=1) or last_date < lookback:
            return "null"
        return "positive" if clicked else "negative"

    def variant_scores(self, visitor: str, date: dt.date,
                       aggregates, params) -> dict[int, float]:
        """Trailing-aggregate stand-in for the model-backed score.

        Same factor structure as the scoring engine, with the trailing
        91-day estimates in place of tree predictions.
        """
        scores = {}
        for course in self.catalog:
            agg = aggregates[course.course_id]
            value = agg.epmi
            if params.alpha != 0:
                value *= max(course.price, params.p_min) ** params.alpha
            if params.beta != 0:
                value *= agg.cpe ** params.beta
            if params.gamma != 0:
                value *= agg.npe ** params.gamma
            if params.tau != 0:
                state = self.interest_state(visitor, course.course_id, date)
                value *= INTEREST_MULTIPLIERS[state] ** params.tau
            scores[course.course_id] = value
        return scores

    def build_units(self, rng: random.Random) -> list[Unit]:
        units = []
        for idx in range(self.config.n_units):
            candidates = rng.sample(self.course_ids, self.config.unit_size)
            units.append(Unit(
                unit_id=idx + 1,
                candidate_courses=candidates,
                unit_type=UNIT_TYPE_CYCLE[idx % len(UNIT_TYPE_CYCLE)]))
        return units

    def session(self, visitor: str, date: dt.date, day_index: int,
                aggregates) -> list[dict]:
        config = self.config
        rng = random.Random(hash64(f"{config.seed}:{visitor}:{day_index}"))
        if rng.random() >= config.visit_probability:
            return []
        tag = assign(visitor, self.experiment)
        units = self.build_units(rng)

        if tag is None:
            page = baseline_page(units, rng)
            in_test_arm = False
        else:
            variant = self.experiment.variant(tag)
            in_test_arm = not variant.is_control
            if variant.ranker_mode == "baseline":
                page = baseline_page(units, rng)
            else:
                scores = self.variant_scores(visitor, date, aggregates,
                                             variant.score_params)
                page = rank_page(units, scores)

        scenario = config.scenario
        events = []
        for rank, ranked_unit in enumerate(page.units):
            if rng.random() >= config.position_bias_decay ** rank:
                continue
            for course_id in ranked_unit.visible():
                course = self.by_id[course_id]
                state = self.interest_state(visitor, course_id, date)
                logit = (config.click_base_logit
                         + config.appeal_scale * course.appeal
                         + self.affinity(visitor, course.subcategory_id))
                if scenario.kind == "explore_vs_popularity":
                    logit += math.log(scenario.multiplier(state))
                p_click = _sigmoid(logit)
                p_enroll_given_click = config.enroll_given_click
                if scenario.kind == "uniform_lift" and in_test_arm:
                    factor = 1.0 + scenario.lift_pct / 100.0
                    if scenario.measure == "clicks":
                        p_click = min(p_click * factor, 0.95)
                    else:
                        p_enroll_given_click = min(
                            p_enroll_given_click * factor, 0.95)

                if scenario.kind == "interest_ratios":
                    # enrollment planted per impression at exact state
                    # multipliers; a click is forced along with it
                    q = min(config.base_enrollment_rate
                            * scenario.multiplier(state), 0.95)
                    enrolled = rng.random() < q
                    clicked = enrolled or rng.random() < p_click
                else:
                    clicked = rng.random() < p_click
                    enrolled = clicked and rng.random() < p_enroll_given_click

                event = {
                    "visitor_id": visitor,
                    "course_id": course_id,
                    "date": date.isoformat(),
                    "page_context": "featured",
                    "variant_tag": tag or "",
                    "impressions": 1,
                    "clicks": 1 if clicked else 0,
                    "enrollments": 1 if enrolled else 0,
                    "revenue": course.price if enrolled else 0.0,
                    "minutes_consumed": 0.0,
                    "nps_response": None,
                }
                if enrolled:
                    event["minutes_consumed"] = round(
                        course.quality * config.minutes_scale
                        * rng.uniform(0.5, 1.5), 3)
                    if rng.random() < config.nps_response_rate:
                        raw = round(10.0 * course.quality + rng.gauss(0, 1))
                        event["nps_response"] = min(max(raw, 0), 10)
                events.append(event)
                self.state[(visitor, course_id)] = (date, clicked)
        return events

    def run(self) -> list[dict]:
        config = self.config
        visitors = [f"v{i:06d}" for i in range(1, config.n_visitors + 1)]
        needs_scores = any(v.ranker_mode == "scored"
                           for v in self.experiment.variants)
        for day_index in range(config.n_days):
            date = config.start_date + dt.timedelta(days=day_index)
            aggregates = None
            if needs_scores:
                as_of = date - dt.timedelta(days=1)
                if self.store.min_date is not None \
                        and as_of < self.store.min_date:
                    as_of = self.store.min_date
                aggregates = compute_trailing_aggregates(
                    self.store, as_of,
                    catalog=_CatalogView(self.course_ids))
            day_events = []
            for visitor in visitors:
                day_events.extend(self.session(visitor, date, day_index,
                                               aggregates))
            report = self.store.ingest_events(day_events)
            if report.rejects:
                raise SimError(
                    f"simulator produced invalid events: "
                    f"{report.rejects[0].reason}")
            self.events.extend(day_events)
        return self.events


class _CatalogView:
    """Just enough of the catalog surface for aggregate fallbacks."""

    def __init__(self, course_ids):
        self._ids = list(course_ids)

    def course_ids(self):
        return self._ids


def run_sessions(config: SimConfig, experiment: ExperimentConfig,
                 out_path: Optional[str | Path] = None) -> SimResult:
    """Simulate the full horizon and return the log plus the fed store."""
    market = _Marketplace(config, experiment)
    events = market.run()
    if out_path is not None:
        write_events(events, out_path)
    return SimResult(config=config, experiment=experiment,
                     catalog=market.catalog, course_rows=market.course_rows,
                     events=events, store=market.store)


def write_events(events: list[dict], out_path: str | Path) -> None:
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for event in events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")


def measure_free_share(events, free_course_ids) -> Optional[float]:
    """Share of logged impressions landing on free courses.

    Returns None on a log with no impressions (undefined ratio).
    """
    free = total = 0
    for event in events:
        imp = event.get("impressions", 0) if isinstance(event, dict) else 0
        if not imp:
            continue
        total += imp
        if event["course_id"] in free_course_ids:
            free += imp
    if total == 0:
        return None
    return free / total
