"""Thin HTTP facade over the store, ranker, experiments, and cubes.

Every handler reads from immutable published state (store snapshot,
feature snapshot, analytics table, model repo) captured at request
start, and every response carries the store snapshot id it was served
from. Ingestion is the single writer and publishes a new snapshot
atomically.
"""

from __future__ import annotations

import datetime as dt
import itertools
import random
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .cubes import (
    ALL_MEASURES,
    AnalyticsMissingError,
    AnalyticsTable,
    CubeError,
)
from .experiments import ExperimentConfig, ExperimentError, assign
from .features import (
    CourseCatalog,
    FeatureError,
    FeatureSnapshot,
    UnknownCourseError,
)
from .hashing import hash64
from .ranking import RankingError, baseline_page, rank_page, units_from_dicts
from .repository import MissingModelError, ModelRepository
from .scoring import MissingActiveModelError, Scorer, ScoringError
from .store import FunnelStore, UnknownDimensionError

ANALYTICS_FILE = "analytics/analytics.csv"
UNITS_PRESET_FILE = "units.json"


class UnitSpec(BaseModel):
    unit_id: int
    candidate_courses: list[int]
    unit_type: str = "custom"


class RankRequest(BaseModel):
    visitor_id: str
    experiment_id: str
    page_context: str = "featured"
    units: Optional[list[UnitSpec]] = None
    preset: Optional[str] = None
    as_of: Optional[dt.date] = Field(
        default=None, description="feature snapshot date; defaults to the "
        "latest store date")


class AppState:
    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.store = FunnelStore(self.data_dir)
        self.experiments = ExperimentStoreLazy(self.data_dir / "experiments")
        self.repo = ModelRepository(self.data_dir / "models")
        self.analytics = AnalyticsTable.load(self.data_dir / ANALYTICS_FILE)
        self._catalog: Optional[CourseCatalog] = None
        self._snapshots: dict[tuple, FeatureSnapshot] = {}
        self._view_counter = itertools.count()

    def catalog(self) -> CourseCatalog:
        if self._catalog is None:
            self._catalog = CourseCatalog.from_store(self.store)
        return self._catalog

    def feature_snapshot(self, as_of: dt.date) -> FeatureSnapshot:
        key = (as_of, self.store.snapshot_id)
        snapshot = self._snapshots.get(key)
        if snapshot is None:
            snapshot = FeatureSnapshot(self.store, self.catalog(), as_of)
            self._snapshots.clear()  # one live snapshot per published store
            self._snapshots[key] = snapshot
        return snapshot

    def invalidate(self) -> None:
        self._catalog = None
        self._snapshots.clear()

    def models_for(self, variant) -> dict:
        models = {}
        pinned = variant.model_versions or {}
        for target in variant.score_params.required_targets():
            if target in pinned:
                manifest = next(
                    (m for m in self.repo.list_manifests()
                     if m.target == target and m.version == pinned[target]),
                    None)
                if manifest is None:
                    raise MissingModelError(
                        f"no saved model for target {target!r} version "
                        f"{pinned[target]}")
                tree, _ = self.repo.load(manifest.model_id, manifest.version)
            else:
                tree, _ = self.repo.get_active(target)
            models[target] = tree
        return models


class ExperimentStoreLazy:
    """Re-reads experiment configs from disk on each access.

    Configs are tiny JSON files and scripts may add them while the
    server runs; rereading keeps the facade coherent without a watcher.
    """

    def __init__(self, root: Path):
        self.root = root

    def _load(self):
        from .experiments import ExperimentStore
        return ExperimentStore(self.root)

    def get(self, experiment_id: str) -> ExperimentConfig:
        return self._load().get(experiment_id)

    def list_experiments(self) -> list[ExperimentConfig]:
        return self._load().list_experiments()


def create_app(data_dir: str | Path) -> FastAPI:
    app = FastAPI(title="slatelab", version="0.1.0")
    state = AppState(data_dir)
    app.state.slatelab = state

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"detail": str(exc.errors()[:3])})

    status_by_error = {
        AnalyticsMissingError: 409,
        MissingActiveModelError: 409,
        MissingModelError: 409,
        ExperimentError: 404,
        CubeError: 404,
        UnknownDimensionError: 404,
        UnknownCourseError: 404,
        FeatureError: 404,
        RankingError: 404,
        ScoringError: 400,
        ValueError: 400,
    }

    def _register(error_cls, status):
        async def handler(request: Request, exc: Exception):
            return JSONResponse(status_code=status,
                                content={"detail": str(exc)})

        app.add_exception_handler(error_cls, handler)

    # starlette resolves handlers along the exception MRO, so the
    # specific 409 classes win over their 404 base classes
    for error_cls, status in status_by_error.items():
        _register(error_cls, status)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "snapshot": state.store.snapshot_id}

    @app.get("/experiments")
    def list_experiments():
        configs = state.experiments.list_experiments()
        meta = {}
        for config in configs:
            experiment_id = config.experiment_id
            if experiment_id in state.analytics.experiments():
                meta[experiment_id] = {
                    "cubes": state.analytics.cubes(experiment_id),
                    "measures": list(ALL_MEASURES),
                    "filter_dims": state.analytics.denominator_columns(
                        experiment_id),
                }
        return {
            "snapshot": state.store.snapshot_id,
            "experiments": [c.to_dict() for c in configs],
            "analytics_meta": meta,
        }

    @app.get("/models")
    def list_models():
        return {
            "snapshot": state.store.snapshot_id,
            "models": [
                {
                    "model_id": m.model_id,
                    "target": m.target,
                    "version": m.version,
                    "created_at": m.created_at,
                    "training_window": list(m.training_window),
                    "document_digest": m.document_digest,
                    "active": m.active,
                }
                for m in state.repo.list_manifests()
            ],
        }

    @app.post("/ingest")
    async def ingest(request: Request):
        body = await request.body()
        lines = body.decode("utf-8").splitlines()
        report = state.store.ingest_events(lines)
        snapshot = state.store.compact()
        state.invalidate()
        return {
            "snapshot": snapshot,
            "merged": report.merged,
            "created": report.created,
            "deduped": report.deduped,
            "rejects": [{"line": r.line, "reason": r.reason}
                        for r in report.rejects],
        }

    @app.post("/rank")
    def rank(body: RankRequest):
        config = state.experiments.get(body.experiment_id)
        if body.units is not None:
            units = units_from_dicts([u.model_dump() for u in body.units])
        else:
            units = _load_preset_units(state, body.preset)
        variant_tag = assign(body.visitor_id, config)

        if variant_tag is None or \
                config.variant(variant_tag).ranker_mode == "baseline":
            seed = hash64(f"view:{body.visitor_id}:"
                          f"{next(state._view_counter)}")
            page = baseline_page(units, random.Random(seed))
            scores = {}
        else:
            variant = config.variant(variant_tag)
            as_of = body.as_of or state.store.max_date
            if as_of is None:
                raise ScoringError("store is empty; nothing to score with")
            snapshot = state.feature_snapshot(as_of)
            scorer = Scorer(snapshot, state.models_for(variant))
            candidates = {c for u in units for c in u.candidate_courses}
            scores = scorer.score_many(body.visitor_id, sorted(candidates),
                                       variant.score_params,
                                       context=body.page_context)
            page = rank_page(units, scores)

        return {
            "snapshot": state.store.snapshot_id,
            "variant_tag": variant_tag,
            "experiment_id": body.experiment_id,
            "units": [
                {
                    "unit_id": unit.unit_id,
                    "course_ids": unit.course_ids,
                    "unit_score": unit.unit_score,
                    "scores": {str(c): scores[c] for c in unit.course_ids
                               if c in scores},
                }
                for unit in page.units
            ],
        }

    @app.get("/cube")
    def cube(experiment: str, numerator: str = "_overall",
             measure: str = "impressions", filters: str = "",
             test_variant: Optional[str] = None,
             control_variant: Optional[str] = None):
        config = state.experiments.get(experiment)
        control = control_variant or config.control.variant_tag
        if test_variant is None:
            test_variant = next(
                (v.variant_tag for v in config.variants
                 if v.variant_tag != control), control)
        parsed_filters = _parse_filters(filters)
        results = state.analytics.query(
            experiment, numerator, measure,
            test_variant=test_variant, control_variant=control,
            filters=parsed_filters)
        return {
            "snapshot": state.store.snapshot_id,
            "experiment_id": experiment,
            "cube": numerator,
            "measure": measure,
            "test_variant": test_variant,
            "control_variant": control,
            "filters": parsed_filters,
            "bins": [r.to_dict() for r in results],
        }

    return app


def _parse_filters(raw: str) -> dict:
    filters = {}
    if not raw:
        return filters
    for clause in raw.split(","):
        if not clause:
            continue
        if ":" not in clause:
            raise ValueError(
                f"malformed filter {clause!r}; expected dim:value")
        key, value = clause.split(":", 1)
        filters[key.strip()] = value.strip()
    return filters


def _load_preset_units(state: AppState, preset: Optional[str]):
    import json

    path = state.data_dir / UNITS_PRESET_FILE
    if not path.exists():
        raise RankingError(
            "no units in request and no units.json preset on the server")
    presets = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(presets, list):
        return units_from_dicts(presets)
    name = preset or "featured"
    if name not in presets:
        raise RankingError(f"unknown unit preset {name!r}")
    return units_from_dicts(presets[name])


def run_server(data_dir: str | Path, host: str = "127.0.0.1",
               port: int = 8330) -> None:
    import uvicorn

    uvicorn.run(create_app(data_dir), host=host, port=port)
