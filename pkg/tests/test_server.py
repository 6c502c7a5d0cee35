import datetime as dt
import json

import pytest
from fastapi.testclient import TestClient

from slatelab.cubes import AnalyticsTable, build_cubes
from slatelab.experiments import ExperimentConfig, ExperimentStore, Variant, assign
from slatelab.features import FEATURE_SCHEMA, CourseCatalog, build_training_set
from slatelab.pmml import to_pmml
from slatelab.repository import ModelRepository
from slatelab.scoring import ScoreParams
from slatelab.server import create_app
from slatelab.sim import SimConfig, run_sessions
from slatelab.store import FunnelStore
from slatelab.trees import TreeParams, train_tree

from conftest import make_event

START = dt.date(2024, 1, 1)
END = dt.date(2024, 1, 6)


def platform_experiment():
    return ExperimentConfig(
        experiment_id="exp-main", name="scored vs baseline", salt="main-salt",
        traffic_fraction=1.0,
        variants=[
            Variant("control", 0.5, ranker_mode="baseline", is_control=True),
            Variant("test", 0.5, ranker_mode="scored",
                    score_params=ScoreParams()),
        ],
        start_date=START, end_date=END)


@pytest.fixture(scope="module")
def platform_dir(tmp_path_factory):
    """A populated data directory: store, dims, experiment, cubes, model."""
    root = tmp_path_factory.mktemp("platform")
    config = SimConfig(seed=5, n_courses=50, n_subcategories=6,
                       n_visitors=60, n_days=6)
    experiment = platform_experiment()
    result = run_sessions(config, experiment)

    store = FunnelStore(root)
    store.register_dimension("course", ["course_id"], result.course_rows)
    store.ingest_events(result.events)
    store.compact()

    ExperimentStore(root / "experiments").save(experiment)

    rows = build_cubes(store, experiment,
                       numerator_dims=["page_context",
                                       "course.subcategory_id"])
    table = AnalyticsTable()
    table.replace_experiment(experiment.experiment_id, rows)
    table.save(root / "analytics/analytics.csv")

    catalog = CourseCatalog.from_store(store)
    training = build_training_set(store, catalog, "epmi", START, END)
    tree = train_tree(training, TreeParams(4, 50.0, 1e-9),
                      feature_schema=FEATURE_SCHEMA, target_name="epmi")
    repo = ModelRepository(root / "models")
    repo.save_model(to_pmml(tree), "epmi_tree", "epmi",
                    (START.isoformat(), END.isoformat()))

    units = [{"unit_id": i + 1,
              "candidate_courses": list(range(i * 8 + 1, i * 8 + 9)),
              "unit_type": "custom"} for i in range(4)]
    (root / "units.json").write_text(json.dumps(units), encoding="utf-8")
    return root


@pytest.fixture(scope="module")
def client(platform_dir):
    return TestClient(create_app(platform_dir))


def visitor_in_arm(tag):
    experiment = platform_experiment()
    for i in range(1000):
        visitor = f"v{i:06d}"
        if assign(visitor, experiment) == tag:
            return visitor
    raise AssertionError(f"no visitor found for arm {tag}")


class TestHealthAndListing:
    def test_healthz(self, client):
        response = client.get("/healthz")
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "ok"
        assert body["snapshot"] == 1

    def test_experiments_carry_exact_config_fields(self, client):
        body = client.get("/experiments").json()
        assert "snapshot" in body
        configs = body["experiments"]
        assert len(configs) == 1
        config = configs[0]
        assert set(config) == {"experiment_id", "name", "salt",
                               "traffic_fraction", "variants",
                               "start_date", "end_date"}
        # round-trips through the dataclass contract
        ExperimentConfig.from_dict(config)
        meta = body["analytics_meta"]["exp-main"]
        assert "page_context" in meta["cubes"]
        assert "_overall" in meta["cubes"]
        assert "nps" in meta["measures"]

    def test_models_listing(self, client):
        body = client.get("/models").json()
        assert len(body["models"]) == 1
        model = body["models"][0]
        assert model["target"] == "epmi"
        assert model["active"] is True

    def test_cors_enabled(self, client):
        response = client.get("/healthz",
                              headers={"Origin": "http://localhost:5173"})
        assert response.headers.get("access-control-allow-origin") == "*"


class TestRank:
    def test_scored_visitor_is_deterministic(self, client):
        visitor = visitor_in_arm("test")
        payload = {"visitor_id": visitor, "experiment_id": "exp-main"}
        first = client.post("/rank", json=payload)
        assert first.status_code == 200
        second = client.post("/rank", json=payload)
        body = first.json()
        assert body["variant_tag"] == "test"
        assert body == second.json()
        assert body["units"]
        for unit in body["units"]:
            assert unit["course_ids"]
            # scored responses expose the personalized scores
            assert unit["scores"]

    def test_scored_units_sorted_and_deduped(self, client):
        visitor = visitor_in_arm("test")
        body = client.post("/rank", json={
            "visitor_id": visitor, "experiment_id": "exp-main"}).json()
        seen = set()
        for unit in body["units"]:
            scores = [unit["scores"][str(c)] for c in unit["course_ids"]]
            assert scores == sorted(scores, reverse=True)
            visible = unit["course_ids"][:4]
            assert not (set(visible) & seen)
            seen.update(visible)

    def test_control_visitor_gets_randomized_baseline(self, client):
        visitor = visitor_in_arm("control")
        payload = {"visitor_id": visitor, "experiment_id": "exp-main"}
        first = client.post("/rank", json=payload).json()
        second = client.post("/rank", json=payload).json()
        assert first["variant_tag"] == "control"
        # same candidates, re-randomized order per page view
        assert sorted(first["units"][0]["course_ids"]) == \
            sorted(second["units"][0]["course_ids"])
        assert any(first["units"][i]["course_ids"]
                   != second["units"][i]["course_ids"]
                   for i in range(len(first["units"])))

    def test_rank_with_explicit_units(self, client):
        visitor = visitor_in_arm("test")
        response = client.post("/rank", json={
            "visitor_id": visitor, "experiment_id": "exp-main",
            "units": [{"unit_id": 9,
                       "candidate_courses": [1, 2, 3, 4, 5]}]})
        body = response.json()
        assert [u["unit_id"] for u in body["units"]] == [9]
        assert sorted(body["units"][0]["course_ids"]) == [1, 2, 3, 4, 5]

    def test_unknown_experiment_404(self, client):
        response = client.post("/rank", json={
            "visitor_id": "v1", "experiment_id": "ghost"})
        assert response.status_code == 404

    def test_malformed_body_400(self, client):
        response = client.post("/rank", json={"visitor_id": "v1"})
        assert response.status_code == 400


class TestCube:
    def test_cube_payload_matches_direct_query(self, client, platform_dir):
        response = client.get("/cube", params={
            "experiment": "exp-main", "numerator": "course.subcategory_id",
            "measure": "clicks"})
        assert response.status_code == 200
        body = response.json()
        table = AnalyticsTable.load(platform_dir / "analytics/analytics.csv")
        expected = table.query("exp-main", "course.subcategory_id", "clicks",
                               test_variant="test", control_variant="control")
        assert body["bins"] == [r.to_dict() for r in expected]
        assert body["test_variant"] == "test"
        assert body["control_variant"] == "control"
        assert "snapshot" in body

    def test_cube_filters(self, client):
        day = START.isoformat()
        body = client.get("/cube", params={
            "experiment": "exp-main", "numerator": "_overall",
            "measure": "impressions", "filters": f"date:{day}"}).json()
        assert body["filters"] == {"date": day}
        assert body["bins"]

    def test_cube_error_codes(self, client):
        assert client.get("/cube", params={"experiment": "ghost"}) \
            .status_code == 404
        assert client.get("/cube", params={
            "experiment": "exp-main", "measure": "velocity"}) \
            .status_code == 404
        assert client.get("/cube", params={
            "experiment": "exp-main", "filters": "oops"}) \
            .status_code == 400

    def test_missing_analytics_is_409(self, client, platform_dir):
        fresh = ExperimentConfig(
            experiment_id="exp-fresh", name="fresh", salt="fresh",
            traffic_fraction=1.0,
            variants=[Variant("a", 0.5, is_control=True), Variant("b", 0.5)],
            start_date=START, end_date=END)
        ExperimentStore(platform_dir / "experiments").save(fresh)
        response = client.get("/cube", params={"experiment": "exp-fresh"})
        assert response.status_code == 409


class TestIngest:
    def test_ingest_reports_and_bumps_snapshot(self, platform_dir):
        # separate client so the module-scoped one keeps snapshot 1
        client = TestClient(create_app(platform_dir))
        before = client.get("/healthz").json()["snapshot"]
        events = "\n".join(json.dumps(make_event(
            visitor=f"ing-{i}", course=1, date="2024-01-03", impressions=1))
            for i in range(5))
        response = client.post("/ingest", content=events)
        assert response.status_code == 200
        body = response.json()
        assert body["created"] == 5
        assert body["rejects"] == []
        assert body["snapshot"] == before + 1
        assert client.get("/healthz").json()["snapshot"] == before + 1

    def test_ingest_reject_reporting(self, platform_dir):
        client = TestClient(create_app(platform_dir))
        response = client.post("/ingest", content="{broken\n")
        body = response.json()
        assert body["created"] == 0
        assert body["rejects"][0]["line"] == 1
