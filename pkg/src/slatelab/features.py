"""Trailing course aggregates and personalized interest features.

Everything here is a pure function of an immutable store snapshot and a
calendar date. The same `FeatureVector` layout feeds both training-set
rows and request-time scoring, so the two paths can never drift apart.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .store import SLATE_CONTEXTS, FunnelStore

TRAILING_WINDOW_DAYS = 91  # window is [as_of - 90, as_of], inclusive
SUBCATEGORY_PRIOR = 0.05

# Multiplier bases per interest state; an exponent (tau) dials the
# explore/exploit strength up or down, tau=0 disabling it entirely.
INTEREST_MULTIPLIERS = {"negative": 0.8, "null": 1.0, "positive": 3.1}

# Marketplace-level fallbacks used only when the whole trailing window
# has a zero denominator (an empty or cold store).
EMPTY_MARKET_PRIORS = {"epmi": 1.0, "cpe": 30.0, "npe": 0.5}

FEATURE_SCHEMA: tuple[tuple[str, str], ...] = (
    ("epmi", "continuous"),
    ("cpe", "continuous"),
    ("npe", "continuous"),
    ("price", "continuous"),
    ("is_free", "continuous"),
    ("course_age_days", "continuous"),
    ("course_interest_state", "categorical"),
    ("subcategory_interest", "continuous"),
    ("subcategory_seen_count", "continuous"),
    ("page_context", "categorical"),
)

FEATURE_NAMES = tuple(name for name, _ in FEATURE_SCHEMA)


class FeatureError(Exception):
    pass


class UnknownCourseError(FeatureError):
    pass


class UnknownSubcategoryError(FeatureError):
    pass


class InterestState(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    NULL = "null"


def interest_multiplier(state: InterestState | str, tau: float) -> float:
    """Score multiplier for an interest state, raised to the tau knob."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    base = INTEREST_MULTIPLIERS[InterestState(state).value]
    return base ** tau


@dataclass(slots=True)
class TrailingCourseAggregates:
    course_id: int
    as_of: dt.date
    impressions_91d: int = 0
    clicks_91d: int = 0
    enrollments_91d: int = 0
    revenue_91d: float = 0.0
    minutes_91d: float = 0.0
    nps_responses_91d: int = 0
    nps_score_sum_91d: int = 0
    epmi: float = 0.0
    cpe: float = 0.0
    npe: float = 0.0


@dataclass(slots=True)
class SubcategoryInterest:
    visitor_id: str
    subcategory_id: int
    value: float
    seen_count: int


@dataclass
class FeatureConfig:
    """Knobs for the subcategory-interest family.

    The defaults reproduce the plain clicked-share definition: f is an
    indicator of positive interest and g weighs every seen course
    equally. A recency half-life switches g to exponential decay; the
    signed f maps negative/positive interest to -1/+1.
    """

    f_spec: str = "positive_indicator"
    g_half_life_days: Optional[float] = None

    def f(self, state: InterestState) -> float:
        if self.f_spec == "positive_indicator":
            return 1.0 if state is InterestState.POSITIVE else 0.0
        if self.f_spec == "signed":
            return {InterestState.POSITIVE: 1.0,
                    InterestState.NEGATIVE: -1.0,
                    InterestState.NULL: 0.0}[state]
        raise ValueError(f"unknown f_spec {self.f_spec!r}")

    def g(self, days_since_seen: float) -> float:
        if self.g_half_life_days is None:
            return 1.0
        return 0.5 ** (days_since_seen / self.g_half_life_days)


class CourseCatalog:
    """Typed view over the course dimension rows."""

    def __init__(self, rows):
        self._courses: dict[int, dict] = {}
        subcat_category: dict[int, int] = {}
        for raw in rows:
            row = dict(raw)
            cid = int(row["course_id"])
            row["course_id"] = cid
            row["subcategory_id"] = int(row["subcategory_id"])
            row["category_id"] = int(row["category_id"])
            row["price"] = float(row["price"])
            if row["price"] < 0:
                raise ValueError(f"course {cid} has negative price")
            if not isinstance(row.get("published_date"), dt.date):
                row["published_date"] = dt.date.fromisoformat(
                    str(row["published_date"]))
            sub, cat = row["subcategory_id"], row["category_id"]
            if subcat_category.setdefault(sub, cat) != cat:
                raise ValueError(
                    f"subcategory {sub} mapped to two categories")
            self._courses[cid] = row
        self._by_subcategory: dict[int, list[int]] = {}
        for cid, row in self._courses.items():
            self._by_subcategory.setdefault(row["subcategory_id"], []).append(cid)
        for members in self._by_subcategory.values():
            members.sort()

    @classmethod
    def from_store(cls, store: FunnelStore, name: str = "course"):
        return cls(store.dimension(name).rows)

    def __contains__(self, course_id: int) -> bool:
        return course_id in self._courses

    def __len__(self) -> int:
        return len(self._courses)

    def course_ids(self) -> list[int]:
        return sorted(self._courses)

    def require(self, course_id: int) -> dict:
        try:
            return self._courses[course_id]
        except KeyError:
            raise UnknownCourseError(f"unknown course {course_id}") from None

    def price(self, course_id: int) -> float:
        return self.require(course_id)["price"]

    def subcategory_id(self, course_id: int) -> int:
        return self.require(course_id)["subcategory_id"]

    def published_date(self, course_id: int) -> dt.date:
        return self.require(course_id)["published_date"]

    def subcategory_ids(self) -> list[int]:
        return sorted(self._by_subcategory)

    def courses_in(self, subcategory_id: int) -> list[int]:
        try:
            return self._by_subcategory[subcategory_id]
        except KeyError:
            raise UnknownSubcategoryError(
                f"unknown subcategory {subcategory_id}") from None


def window_start(as_of: dt.date) -> dt.date:
    return as_of - dt.timedelta(days=TRAILING_WINDOW_DAYS - 1)


def compute_trailing_aggregates(
    store: FunnelStore,
    as_of: dt.date,
    catalog: Optional[CourseCatalog] = None,
    prior_overrides: Optional[dict[int, dict[str, float]]] = None,
) -> dict[int, TrailingCourseAggregates]:
    """Per-course sums over the trailing window ending at as_of.

    Courses with a zero denominator fall back to the global trailing
    means (or a per-course override when one is registered); a catalog
    widens the result to courses with no rows at all.
    """
    if store.min_date is not None and as_of < store.min_date:
        raise FeatureError(
            f"as_of {as_of} precedes the store start {store.min_date}")
    start = window_start(as_of)
    sums: dict[int, list] = {}
    for date in store.dates(start, as_of):
        for row in store.rows_on(date):
            agg = sums.get(row.course_id)
            if agg is None:
                agg = sums[row.course_id] = [0, 0, 0, 0.0, 0.0, 0, 0]
            agg[0] += row.impressions
            agg[1] += row.clicks
            agg[2] += row.enrollments
            agg[3] += row.revenue
            agg[4] += row.minutes_consumed
            agg[5] += row.nps_responses
            agg[6] += row.nps_score_sum

    total = [0, 0, 0, 0.0, 0.0, 0, 0]
    for agg in sums.values():
        for i, v in enumerate(agg):
            total[i] += v
    priors = {
        "epmi": 1000.0 * total[2] / total[0] if total[0] > 0
        else EMPTY_MARKET_PRIORS["epmi"],
        "cpe": total[4] / total[2] if total[2] > 0
        else EMPTY_MARKET_PRIORS["cpe"],
        "npe": (total[6] / total[5]) / 10.0 if total[5] > 0
        else EMPTY_MARKET_PRIORS["npe"],
    }

    course_ids = set(sums)
    if catalog is not None:
        course_ids.update(catalog.course_ids())
    out: dict[int, TrailingCourseAggregates] = {}
    overrides = prior_overrides or {}
    for cid in course_ids:
        agg = sums.get(cid, [0, 0, 0, 0.0, 0.0, 0, 0])
        fallback = {**priors, **overrides.get(cid, {})}
        epmi = 1000.0 * agg[2] / agg[0] if agg[0] > 0 else fallback["epmi"]
        cpe = agg[4] / agg[2] if agg[2] > 0 else fallback["cpe"]
        npe = (agg[6] / agg[5]) / 10.0 if agg[5] > 0 else fallback["npe"]
        out[cid] = TrailingCourseAggregates(
            course_id=cid, as_of=as_of,
            impressions_91d=agg[0], clicks_91d=agg[1], enrollments_91d=agg[2],
            revenue_91d=agg[3], minutes_91d=agg[4],
            nps_responses_91d=agg[5], nps_score_sum_91d=agg[6],
            epmi=epmi, cpe=cpe, npe=npe,
        )
    return out


def compute_course_interest(store: FunnelStore, visitor_id: str,
                            course_id: int, as_of: dt.date) -> InterestState:
    """Interest from the most recent slate impression in the window.

    Null when unseen; otherwise positive exactly when the last day the
    course was seen carries a click (a clicked row wins a same-day tie).
    """
    start = window_start(as_of)
    last_date: Optional[dt.date] = None
    clicked = False
    for row in store.rows():
        if row.visitor_id != visitor_id or row.course_id != course_id:
            continue
        if not _is_seen_row(row):
            continue
        if row.date < start or row.date > as_of:
            continue
        if last_date is None or row.date > last_date:
            last_date, clicked = row.date, row.clicks > 0
        elif row.date == last_date and row.clicks > 0:
            clicked = True
    if last_date is None:
        return InterestState.NULL
    return InterestState.POSITIVE if clicked else InterestState.NEGATIVE


def compute_subcategory_interest(
    store: FunnelStore,
    catalog: CourseCatalog,
    visitor_id: str,
    subcategory_id: int,
    as_of: dt.date,
    config: Optional[FeatureConfig] = None,
) -> SubcategoryInterest:
    """Weighted interest share over seen courses of one subcategory."""
    config = config or FeatureConfig()
    members = catalog.courses_in(subcategory_id)
    num = 0.0
    den = 0.0
    seen = 0
    for cid in members:
        last = _last_seen(store, visitor_id, cid, as_of)
        if last is None:
            continue
        last_date, clicked = last
        state = InterestState.POSITIVE if clicked else InterestState.NEGATIVE
        weight = config.g((as_of - last_date).days)
        num += config.f(state) * weight
        den += weight
        seen += 1
    value = num / den if seen else SUBCATEGORY_PRIOR
    return SubcategoryInterest(visitor_id, subcategory_id, value, seen)


def _is_seen_row(row) -> bool:
    return row.impressions > 0 and row.page_context in SLATE_CONTEXTS


def _last_seen(store, visitor_id, course_id, as_of):
    start = window_start(as_of)
    last_date = None
    clicked = False
    for row in store.rows():
        if row.visitor_id != visitor_id or row.course_id != course_id:
            continue
        if not _is_seen_row(row) or not start <= row.date <= as_of:
            continue
        if last_date is None or row.date > last_date:
            last_date, clicked = row.date, row.clicks > 0
        elif row.date == last_date and row.clicks > 0:
            clicked = True
    if last_date is None:
        return None
    return last_date, clicked


class FeatureSnapshot:
    """Immutable per-as_of feature state for fast repeated lookups.

    Builds the trailing aggregates plus per-visitor exposure maps in one
    store pass; afterwards every feature-vector call is dictionary work.
    Query methods agree exactly with the standalone compute_* functions,
    which the test suite uses as the reference.
    """

    def __init__(self, store: FunnelStore, catalog: CourseCatalog,
                 as_of: dt.date, config: Optional[FeatureConfig] = None,
                 prior_overrides: Optional[dict] = None):
        self.store = store
        self.catalog = catalog
        self.as_of = as_of
        self.config = config or FeatureConfig()
        self.aggregates = compute_trailing_aggregates(
            store, as_of, catalog, prior_overrides)
        start = window_start(as_of)
        # visitor -> course -> (last seen date, clicked on that date)
        self._exposure: dict[str, dict[int, tuple[dt.date, bool]]] = {}
        for date in store.dates(start, as_of):
            for row in store.rows_on(date):
                if not _is_seen_row(row):
                    continue
                courses = self._exposure.setdefault(row.visitor_id, {})
                prev = courses.get(row.course_id)
                if prev is None or row.date > prev[0]:
                    courses[row.course_id] = (row.date, row.clicks > 0)
                elif row.date == prev[0] and row.clicks > 0:
                    courses[row.course_id] = (row.date, True)
        self._subcat_cache: dict[tuple[str, int], SubcategoryInterest] = {}

    def course_interest(self, visitor_id: str, course_id: int) -> InterestState:
        entry = self._exposure.get(visitor_id, {}).get(course_id)
        if entry is None:
            return InterestState.NULL
        return InterestState.POSITIVE if entry[1] else InterestState.NEGATIVE

    def subcategory_interest(self, visitor_id: str,
                             subcategory_id: int) -> SubcategoryInterest:
        key = (visitor_id, subcategory_id)
        cached = self._subcat_cache.get(key)
        if cached is not None:
            return cached
        members = self.catalog.courses_in(subcategory_id)
        exposure = self._exposure.get(visitor_id, {})
        num = den = 0.0
        seen = 0
        for cid in members:
            entry = exposure.get(cid)
            if entry is None:
                continue
            last_date, clicked = entry
            state = (InterestState.POSITIVE if clicked
                     else InterestState.NEGATIVE)
            weight = self.config.g((self.as_of - last_date).days)
            num += self.config.f(state) * weight
            den += weight
            seen += 1
        value = num / den if seen else SUBCATEGORY_PRIOR
        result = SubcategoryInterest(visitor_id, subcategory_id, value, seen)
        self._subcat_cache[key] = result
        return result

    def feature_vector(self, visitor_id: str, course_id: int,
                       context: str = "featured") -> dict:
        """Assemble the shared feature vector, in schema order."""
        course = self.catalog.require(course_id)
        agg = self.aggregates[course_id]
        price = course["price"]
        state = self.course_interest(visitor_id, course_id)
        subcat = self.subcategory_interest(visitor_id, course["subcategory_id"])
        return {
            "epmi": agg.epmi,
            "cpe": agg.cpe,
            "npe": agg.npe,
            "price": price,
            "is_free": 1.0 if price == 0 else 0.0,
            "course_age_days": float(
                (self.as_of - course["published_date"]).days),
            "course_interest_state": state.value,
            "subcategory_interest": subcat.value,
            "subcategory_seen_count": float(subcat.seen_count),
            "page_context": context,
        }


def build_training_set(store: FunnelStore, catalog: CourseCatalog,
                       target: str, date_from: dt.date, date_to: dt.date,
                       config: Optional[FeatureConfig] = None) -> list:
    """Training rows for one target, weighted per the aggregation rule.

    Features for an outcome on day d are computed as of d-1 (what the
    nightly batch knew when it served that day), which is exactly what
    `FeatureSnapshot` reproduces at scoring time: the parity the whole
    data model exists to provide. Rows on the store's first day have no
    prior snapshot and are skipped.

    The EPMI set carries one row per impression-funnel row with weight =
    impressions; the CPE/NPE sets carry one row per derived enrollment
    (the row-expanded equivalent of weighting by enrollments).
    """
    from .trees import TrainingRow

    if target not in ("epmi", "cpe", "npe"):
        raise FeatureError(f"unknown training target {target!r}")
    snapshots: dict[dt.date, FeatureSnapshot] = {}

    def snapshot_for(as_of: dt.date) -> Optional[FeatureSnapshot]:
        if store.min_date is None or as_of < store.min_date:
            return None
        snap = snapshots.get(as_of)
        if snap is None:
            snap = FeatureSnapshot(store, catalog, as_of, config)
            snapshots[as_of] = snap
        return snap

    rows: list[TrainingRow] = []
    if target == "epmi":
        for date in store.dates(date_from, date_to):
            snap = snapshot_for(date - dt.timedelta(days=1))
            if snap is None:
                continue
            for row in store.rows_on(date):
                if row.impressions <= 0 or row.course_id not in catalog:
                    continue
                vector = snap.feature_vector(row.visitor_id, row.course_id,
                                             row.page_context)
                value = 1000.0 * row.enrollments / row.impressions
                rows.append(TrainingRow(vector, value,
                                        float(row.impressions)))
        return rows

    for enrollment in store.build_enrollment_funnel(date_to):
        if not date_from <= enrollment.enrollment_date <= date_to:
            continue
        if enrollment.course_id not in catalog:
            continue
        snap = snapshot_for(enrollment.enrollment_date
                            - dt.timedelta(days=1))
        if snap is None:
            continue
        if target == "npe" and enrollment.nps_response is None:
            continue
        vector = snap.feature_vector(enrollment.visitor_id,
                                     enrollment.course_id, "other")
        if target == "cpe":
            rows.append(TrainingRow(vector, enrollment.minutes_consumed, 1.0))
        else:
            rows.append(TrainingRow(vector, enrollment.nps_response / 10.0,
                                    1.0))
    return rows


AGGREGATE_CSV_COLUMNS = (
    "course_id", "as_of", "impressions_91d", "clicks_91d", "enrollments_91d",
    "revenue_91d", "minutes_91d", "nps_responses_91d", "nps_score_sum_91d",
    "epmi", "cpe", "npe",
)


def save_aggregates_csv(aggregates: dict[int, TrailingCourseAggregates],
                        path) -> None:
    """Persist a per-course aggregate table, one row per course."""
    import csv
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_CSV_COLUMNS)
        for cid in sorted(aggregates):
            agg = aggregates[cid]
            writer.writerow([
                agg.course_id, agg.as_of.isoformat(), agg.impressions_91d,
                agg.clicks_91d, agg.enrollments_91d, agg.revenue_91d,
                agg.minutes_91d, agg.nps_responses_91d, agg.nps_score_sum_91d,
                agg.epmi, agg.cpe, agg.npe,
            ])


def naive_bayes_state_rates(store: FunnelStore, date_from: dt.date,
                            date_to: dt.date) -> dict[str, dict[str, float]]:
    """Per-interest-state EPMI over slate impressions in a date range.

    Each impression row is grouped by the visitor's interest in that
    course as of the previous day; the per-state enrollment rates act
    as a single-feature naive Bayes estimate and, on simulated logs,
    recover the planted state ratios.
    """
    history: dict[tuple[str, int], list[tuple[dt.date, bool]]] = {}
    for row in store.rows():
        if _is_seen_row(row):
            history.setdefault((row.visitor_id, row.course_id), []).append(
                (row.date, row.clicks > 0))
    for entries in history.values():
        entries.sort()

    counts = {s.value: [0, 0] for s in InterestState}  # impressions, enrollments
    for row in store.rows():
        if not _is_seen_row(row) or not date_from <= row.date <= date_to:
            continue
        as_of = row.date - dt.timedelta(days=1)
        start = window_start(as_of)
        state = InterestState.NULL
        last_date = None
        for date, clicked in history.get((row.visitor_id, row.course_id), ()):
            if date > as_of or date < start:
                continue
            if last_date is None or date > last_date:
                last_date = date
                state = (InterestState.POSITIVE if clicked
                         else InterestState.NEGATIVE)
            elif date == last_date and clicked:
                state = InterestState.POSITIVE
        counts[state.value][0] += row.impressions
        counts[state.value][1] += row.enrollments

    out = {}
    for state, (impressions, enrollments) in counts.items():
        epmi = 1000.0 * enrollments / impressions if impressions else None
        out[state] = {
            "impressions": impressions,
            "enrollments": enrollments,
            "epmi": epmi,
        }
    return out
