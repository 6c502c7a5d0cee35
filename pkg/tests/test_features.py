import datetime as dt
import random

import pytest

from slatelab.features import (
    EMPTY_MARKET_PRIORS,
    SUBCATEGORY_PRIOR,
    CourseCatalog,
    FeatureConfig,
    FeatureError,
    FeatureSnapshot,
    InterestState,
    UnknownCourseError,
    UnknownSubcategoryError,
    compute_course_interest,
    compute_subcategory_interest,
    compute_trailing_aggregates,
    interest_multiplier,
    naive_bayes_state_rates,
)
from slatelab.store import FunnelStore

from conftest import make_event

AS_OF = dt.date(2024, 3, 31)


def catalog_rows(n=6, subcats=(1, 1, 2, 2, 3, 3), prices=(0, 10, 20, 30, 40, 50)):
    return [
        {"course_id": i + 1, "subcategory_id": subcats[i],
         "category_id": (subcats[i] + 1) // 2, "price": prices[i],
         "published_date": "2023-06-01"}
        for i in range(n)
    ]


@pytest.fixture
def catalog():
    return CourseCatalog(catalog_rows())


class TestTrailingAggregates:
    def test_epmi_from_window_counts(self, store):
        store.ingest_events([
            make_event("v1", 1, "2024-03-01", impressions=2000, clicks=50,
                       enrollments=6, revenue=60.0),
        ])
        aggs = compute_trailing_aggregates(store, AS_OF)
        assert aggs[1].epmi == pytest.approx(3.0)

    def test_zero_impression_course_gets_global_prior(self, store, catalog):
        store.ingest_events([
            make_event("v1", 1, "2024-03-01", impressions=1000, clicks=10,
                       enrollments=2),
        ])
        aggs = compute_trailing_aggregates(store, AS_OF, catalog)
        assert aggs[2].impressions_91d == 0
        assert aggs[2].epmi == pytest.approx(aggs[1].epmi) == pytest.approx(2.0)

    def test_empty_store_uses_shipped_priors(self, store, catalog):
        aggs = compute_trailing_aggregates(store, AS_OF, catalog)
        assert aggs[1].epmi == EMPTY_MARKET_PRIORS["epmi"]
        assert aggs[1].cpe == EMPTY_MARKET_PRIORS["cpe"]
        assert aggs[1].npe == EMPTY_MARKET_PRIORS["npe"]

    def test_per_course_prior_override_hook(self, store, catalog):
        aggs = compute_trailing_aggregates(
            store, AS_OF, catalog, prior_overrides={3: {"epmi": 9.5}})
        assert aggs[3].epmi == 9.5
        assert aggs[1].epmi == EMPTY_MARKET_PRIORS["epmi"]

    def test_as_of_before_store_start_rejected(self, store):
        store.ingest_events([make_event(date="2024-03-01", impressions=1)])
        with pytest.raises(FeatureError):
            compute_trailing_aggregates(store, dt.date(2024, 2, 28))

    def test_window_sums_match_brute_force(self, store):
        rng = random.Random(11)
        events = []
        for _ in range(400):
            date = dt.date(2024, 1, 1) + dt.timedelta(days=rng.randint(0, 170))
            imp = rng.randint(1, 4)
            clicks = rng.randint(0, imp)
            enr = rng.randint(0, clicks)
            events.append(make_event(
                visitor=f"v{rng.randint(1, 30)}", course=rng.randint(1, 8),
                date=date.isoformat(), impressions=imp, clicks=clicks,
                enrollments=enr, revenue=2.5 * enr, minutes_consumed=7.0 * enr,
                nps_response=rng.randint(0, 10) if enr and rng.random() < 0.5
                else None,
            ))
        store.ingest_events(events)

        as_of = dt.date(2024, 5, 15)
        lo = as_of - dt.timedelta(days=90)
        expected = {}
        for ev in events:  # independent brute-force window sum over raw events
            date = dt.date.fromisoformat(ev["date"])
            if not lo <= date <= as_of:
                continue
            agg = expected.setdefault(ev["course_id"],
                                      {"imp": 0, "enr": 0, "min": 0.0})
            agg["imp"] += ev["impressions"]
            agg["enr"] += ev["enrollments"]
            agg["min"] += ev.get("minutes_consumed", 0.0)
        aggs = compute_trailing_aggregates(store, as_of)
        assert set(aggs) == set(expected)
        for cid, exp in expected.items():
            assert aggs[cid].impressions_91d == exp["imp"]
            assert aggs[cid].enrollments_91d == exp["enr"]
            assert aggs[cid].minutes_91d == pytest.approx(exp["min"])
            if exp["imp"]:
                assert aggs[cid].epmi == pytest.approx(
                    1000.0 * exp["enr"] / exp["imp"])

    def test_sliding_window_delta_oracle(self, store):
        rng = random.Random(5)
        events = []
        for _ in range(300):
            date = dt.date(2024, 1, 1) + dt.timedelta(days=rng.randint(0, 140))
            events.append(make_event(
                visitor=f"v{rng.randint(1, 10)}", course=rng.randint(1, 5),
                date=date.isoformat(), impressions=rng.randint(1, 3),
            ))
        store.ingest_events(events)
        day_a = dt.date(2024, 4, 20)
        day_b = day_a + dt.timedelta(days=1)
        agg_a = compute_trailing_aggregates(store, day_a)
        agg_b = compute_trailing_aggregates(store, day_b)

        entering = day_b
        leaving = day_a - dt.timedelta(days=90)
        for cid in set(agg_a) | set(agg_b):
            before = agg_a[cid].impressions_91d if cid in agg_a else 0
            after = agg_b[cid].impressions_91d if cid in agg_b else 0
            delta = sum(r.impressions for r in store.rows_on(entering)
                        if r.course_id == cid)
            delta -= sum(r.impressions for r in store.rows_on(leaving)
                         if r.course_id == cid)
            assert after - before == delta


class TestCourseInterest:
    def test_unseen_course_is_null(self, store):
        assert compute_course_interest(store, "v1", 1, AS_OF) is InterestState.NULL

    def test_last_impression_clicked_is_positive(self, store):
        store.ingest_events([
            make_event("v1", 1, "2024-03-10", impressions=1, clicks=1),
        ])
        assert (compute_course_interest(store, "v1", 1, AS_OF)
                is InterestState.POSITIVE)

    def test_recency_rule_uses_last_impression(self, store):
        store.ingest_events([
            make_event("v1", 1, "2024-03-01", impressions=1, clicks=1),
            make_event("v1", 1, "2024-03-05", impressions=1, clicks=0),
        ])
        assert (compute_course_interest(store, "v1", 1, AS_OF)
                is InterestState.NEGATIVE)

    def test_same_day_tie_clicked_wins(self, store):
        store.ingest_events([
            make_event("v1", 1, "2024-03-05", context="search",
                       impressions=1, clicks=0),
            make_event("v1", 1, "2024-03-05", context="featured",
                       impressions=1, clicks=1),
        ])
        assert (compute_course_interest(store, "v1", 1, AS_OF)
                is InterestState.POSITIVE)

    def test_impression_outside_91_day_window_is_null(self, store):
        store.ingest_events([
            make_event("v1", 1, "2023-12-25", impressions=1, clicks=1),
        ])
        assert compute_course_interest(store, "v1", 1, AS_OF) is InterestState.NULL

    def test_direct_landing_rows_never_count_as_seen(self, store):
        store.ingest_events([
            make_event("v1", 1, "2024-03-10", context="email", enrollments=1),
        ])
        assert compute_course_interest(store, "v1", 1, AS_OF) is InterestState.NULL


class TestInterestMultiplier:
    @pytest.mark.parametrize("state,tau,expected", [
        (InterestState.POSITIVE, 1.0, 3.1),
        (InterestState.NULL, 1.0, 1.0),
        (InterestState.NEGATIVE, 1.0, 0.8),
        (InterestState.POSITIVE, 0.0, 1.0),
        (InterestState.NEGATIVE, 0.0, 1.0),
        (InterestState.NULL, 0.0, 1.0),
        (InterestState.NEGATIVE, 2.0, 0.8 ** 2),
    ])
    def test_multiplier_table(self, state, tau, expected):
        assert interest_multiplier(state, tau) == pytest.approx(expected)

    def test_negative_tau_rejected(self):
        with pytest.raises(ValueError):
            interest_multiplier(InterestState.NULL, -1.0)


class TestSubcategoryInterest:
    def test_default_clicked_share(self, store):
        rows = []
        for i in range(10):
            rows.append({"course_id": i + 1, "subcategory_id": 1,
                         "category_id": 1, "price": 10,
                         "published_date": "2023-06-01"})
        catalog = CourseCatalog(rows)
        events = []
        for i in range(10):
            events.append(make_event("v1", i + 1, "2024-03-20",
                                     impressions=1, clicks=1 if i < 3 else 0))
        store.ingest_events(events)
        res = compute_subcategory_interest(store, catalog, "v1", 1, AS_OF)
        assert res.value == pytest.approx(0.30)
        assert res.seen_count == 10

    def test_unseen_subcategory_gets_prior(self, store, catalog):
        res = compute_subcategory_interest(store, catalog, "v1", 1, AS_OF)
        assert res.value == SUBCATEGORY_PRIOR
        assert res.seen_count == 0

    def test_unknown_subcategory_errors(self, store, catalog):
        with pytest.raises(UnknownSubcategoryError):
            compute_subcategory_interest(store, catalog, "v1", 99, AS_OF)

    def test_recency_weighted_share_hand_computed(self, store, catalog):
        # courses 1 and 2 are subcategory 1; course 1 clicked today
        # (g=1), course 2 ignored 30 days ago (g=0.5). Weighted share is
        # 1*1 / (1 + 0.5) = 2/3. Then add course 7 seen 60 days ago,
        # clicked, via a widened catalog: (1 + 0.25) / 1.75 = 5/7.
        rows = catalog_rows() + [{
            "course_id": 7, "subcategory_id": 1, "category_id": 1,
            "price": 5, "published_date": "2023-06-01"}]
        wide = CourseCatalog(rows)
        store.ingest_events([
            make_event("v1", 1, AS_OF.isoformat(), impressions=1, clicks=1),
            make_event("v1", 2, (AS_OF - dt.timedelta(days=30)).isoformat(),
                       impressions=1, clicks=0),
            make_event("v1", 7, (AS_OF - dt.timedelta(days=60)).isoformat(),
                       impressions=1, clicks=1),
        ])
        config = FeatureConfig(g_half_life_days=30.0)
        res = compute_subcategory_interest(store, wide, "v1", 1, AS_OF, config)
        assert res.value == pytest.approx(1.25 / 1.75)
        assert res.seen_count == 3

    def test_signed_f_spec(self, store, catalog):
        store.ingest_events([
            make_event("v1", 1, "2024-03-20", impressions=1, clicks=1),
            make_event("v1", 2, "2024-03-20", impressions=1, clicks=0),
        ])
        config = FeatureConfig(f_spec="signed")
        res = compute_subcategory_interest(store, catalog, "v1", 1, AS_OF, config)
        assert res.value == pytest.approx(0.0)


class TestFeatureVector:
    def test_cold_visitor_gets_null_and_prior(self, store, catalog):
        snapshot = FeatureSnapshot(store, catalog, AS_OF)
        vec = snapshot.feature_vector("v-new", 3)
        assert vec["course_interest_state"] == "null"
        assert vec["subcategory_interest"] == SUBCATEGORY_PRIOR
        assert vec["subcategory_seen_count"] == 0.0

    def test_hand_assembled_fixture_vector(self, store, catalog):
        store.ingest_events([
            make_event("v1", 3, "2024-03-20", impressions=2, clicks=1,
                       enrollments=1, revenue=20.0, minutes_consumed=40.0,
                       nps_response=8),
            make_event("v1", 4, "2024-03-25", impressions=1, clicks=0),
            make_event("v2", 3, "2024-03-25", impressions=2, clicks=0),
        ])
        snapshot = FeatureSnapshot(store, catalog, AS_OF)
        vec = snapshot.feature_vector("v1", 3, context="featured")
        # course 3: 4 impressions, 1 enrollment -> epmi 250; 40 minutes
        # over 1 enrollment -> cpe 40; one response of 8 -> npe 0.8
        assert vec == {
            "epmi": pytest.approx(250.0),
            "cpe": pytest.approx(40.0),
            "npe": pytest.approx(0.8),
            "price": 20.0,
            "is_free": 0.0,
            "course_age_days": float((AS_OF - dt.date(2023, 6, 1)).days),
            "course_interest_state": "positive",
            "subcategory_interest": pytest.approx(0.5),
            "subcategory_seen_count": 2.0,
            "page_context": "featured",
        }
        assert list(vec) == [
            "epmi", "cpe", "npe", "price", "is_free", "course_age_days",
            "course_interest_state", "subcategory_interest",
            "subcategory_seen_count", "page_context",
        ]

    def test_determinism(self, store, catalog):
        store.ingest_events([make_event("v1", 1, "2024-03-10", impressions=1)])
        snapshot = FeatureSnapshot(store, catalog, AS_OF)
        assert (snapshot.feature_vector("v1", 1)
                == snapshot.feature_vector("v1", 1))

    def test_unknown_course_errors(self, store, catalog):
        snapshot = FeatureSnapshot(store, catalog, AS_OF)
        with pytest.raises(UnknownCourseError):
            snapshot.feature_vector("v1", 99)

    def test_free_course_flag(self, store, catalog):
        snapshot = FeatureSnapshot(store, catalog, AS_OF)
        assert snapshot.feature_vector("v1", 1)["is_free"] == 1.0
        assert snapshot.feature_vector("v1", 2)["is_free"] == 0.0


class TestSnapshotAgreesWithReference:
    def test_interest_parity_on_random_store(self, store, catalog):
        rng = random.Random(23)
        events = []
        for _ in range(300):
            date = AS_OF - dt.timedelta(days=rng.randint(0, 120))
            imp = rng.randint(1, 2)
            events.append(make_event(
                visitor=f"v{rng.randint(1, 6)}", course=rng.randint(1, 6),
                date=date.isoformat(), impressions=imp,
                clicks=rng.randint(0, imp),
                context=rng.choice(["featured", "search", "email"]),
                enrollments=0,
            ))
        # email events with clicks > impressions would be rejected; scrub
        for ev in events:
            if ev["page_context"] == "email":
                ev["impressions"] = 0
                ev["clicks"] = 0
        store.ingest_events(events)
        snapshot = FeatureSnapshot(store, catalog, AS_OF)
        for visitor in [f"v{i}" for i in range(1, 7)]:
            for course in range(1, 7):
                assert snapshot.course_interest(visitor, course) is \
                    compute_course_interest(store, visitor, course, AS_OF)
            for subcat in (1, 2, 3):
                assert snapshot.subcategory_interest(visitor, subcat) == \
                    compute_subcategory_interest(store, catalog, visitor,
                                                 subcat, AS_OF)


class TestTrainingScoringParity:
    def test_training_rows_reproduce_scoring_vectors(self, store, catalog):
        from slatelab.features import build_training_set

        rng = random.Random(77)
        events = []
        for day in range(1, 15):
            for _ in range(40):
                imp = rng.randint(1, 3)
                clicks = rng.randint(0, imp)
                events.append(make_event(
                    visitor=f"v{rng.randint(1, 12)}",
                    course=rng.randint(1, 6),
                    date=f"2024-03-{day:02d}",
                    context=rng.choice(["featured", "search"]),
                    impressions=imp, clicks=clicks,
                    enrollments=rng.randint(0, clicks),
                ))
        store.ingest_events(events)

        # rebuild each day's vector through a fresh snapshot and compare
        # with what the training-set builder emitted
        rows = build_training_set(store, catalog, "epmi",
                                  dt.date(2024, 3, 2), dt.date(2024, 3, 14))
        assert rows
        idx = 0
        for date in store.dates(dt.date(2024, 3, 2), dt.date(2024, 3, 14)):
            snapshot = FeatureSnapshot(store, catalog,
                                       date - dt.timedelta(days=1))
            for row in store.rows_on(date):
                if row.impressions <= 0:
                    continue
                expected = snapshot.feature_vector(
                    row.visitor_id, row.course_id, row.page_context)
                assert rows[idx].features == expected
                assert rows[idx].weight == row.impressions
                idx += 1
        assert idx == len(rows)


class TestNaiveBayesEstimator:
    def test_states_grouped_by_prior_day(self, store):
        store.ingest_events([
            # day 1 exposures set the states for day 2
            make_event("v1", 1, "2024-03-01", impressions=1, clicks=1),
            make_event("v2", 2, "2024-03-01", impressions=1, clicks=0),
            # day 2: v1 sees course 1 (positive), v2 sees course 2
            # (negative), v3 sees course 3 (null)
            make_event("v1", 1, "2024-03-02", impressions=1, clicks=1,
                       enrollments=1),
            make_event("v2", 2, "2024-03-02", impressions=1),
            make_event("v3", 3, "2024-03-02", impressions=1),
        ])
        rates = naive_bayes_state_rates(store, dt.date(2024, 3, 2),
                                        dt.date(2024, 3, 2))
        assert rates["positive"]["impressions"] == 1
        assert rates["positive"]["enrollments"] == 1
        assert rates["negative"]["impressions"] == 1
        assert rates["null"]["impressions"] == 1
        assert rates["positive"]["epmi"] == pytest.approx(1000.0)
        assert rates["null"]["epmi"] == pytest.approx(0.0)
