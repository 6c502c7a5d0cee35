"""Hypercube experiment analytics over visitor-day units.

One cube per numerator dimension (a dimension that does not collapse
onto visitor and date). Cube cells hold, per measure, the sum, sum of
squares, and count of per-visitor-day values, which is everything a
two-sample t-test needs. All cubes for all experiments append into one
long-format analytics table; queries never touch raw logs again.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from scipy import stats as scipy_stats

from .experiments import ExperimentConfig
from .store import FUNNEL_KEY_FIELDS, FunnelStore

ADDITIVE_MEASURES = (
    "impressions",
    "clicks",
    "enrollments",
    "revenue",
    "minutes_consumed",
    "nps_responses",
    "nps_score_sum",
)
# nps is the per-visitor-day mean 0-10 response; its cells count only
# visitor-days that actually carried a response
DERIVED_MEASURES = ("nps",)
ALL_MEASURES = ADDITIVE_MEASURES + DERIVED_MEASURES

OVERALL_CUBE = "_overall"
OVERALL_VALUE = "(all)"
NULL_VALUE = "(null)"

BASE_COLUMNS = ("experiment_id", "cube", "numerator_value", "variant_tag",
                "date")
TAIL_COLUMNS = ("measure", "sum_x", "sum_x2", "n")

SMALL_SAMPLE_N = 30
ZERO_VARIANCE_EPS = 1e-12


class CubeError(Exception):
    pass


class DimensionClassificationError(CubeError):
    pass


class AnalyticsMissingError(CubeError):
    """No analytics rows exist for the requested experiment."""


def classify_dimension(store: FunnelStore, spec: str) -> str:
    """'numerator' or 'denominator' for a dimension spec string.

    Specs are funnel fields (``page_context``, ``course_id``), built-in
    denominators (``date``, ``variant_tag``, ``visitor_newness``), or
    ``<dimension>.<field>`` against a registered dimension. A dimension
    is a denominator exactly when its keys collapse onto visitor/date.
    """
    if spec in ("page_context", "course_id"):
        return "numerator"
    if spec in ("date", "variant_tag", "visitor_newness"):
        return "denominator"
    if "." in spec:
        dim_name, _ = spec.split(".", 1)
        dim = store.dimension(dim_name)
        if set(dim.key_fields) <= {"visitor_id", "date"}:
            return "denominator"
        return "numerator"
    raise CubeError(f"unknown dimension spec {spec!r}")


def _dim_accessor(store: FunnelStore, spec: str):
    if spec == "page_context":
        return lambda row: row.page_context
    if spec == "course_id":
        return lambda row: row.course_id
    dim_name, field_name = spec.split(".", 1)
    dim = store.dimension(dim_name)
    keys = dim.key_fields

    def accessor(row):
        joined = dim.lookup(tuple(getattr(row, k) for k in keys))
        if joined is None:
            return NULL_VALUE
        return joined.get(field_name, NULL_VALUE)

    return accessor


def build_cubes(
    store: FunnelStore,
    config: ExperimentConfig,
    numerator_dims: Iterable[str] = ("page_context",),
    denominator_dims: Iterable[str] = ("visitor_newness",),
    date_from: Optional[dt.date] = None,
    date_to: Optional[dt.date] = None,
    include_overall: bool = True,
) -> list[dict]:
    """Aggregate tagged funnel rows into analytics-table rows.

    The statistical unit is the visitor-day. Within one cube, a
    visitor-day contributes one observation to every numerator value it
    touched that day: the observation is the sum of the measure over
    the matching rows. The extra ``_overall`` cube (single bin) carries
    the experiment-wide aggregates.
    """
    numerator_dims = list(numerator_dims)
    denominator_dims = list(denominator_dims)
    for spec in numerator_dims:
        if classify_dimension(store, spec) != "numerator":
            raise DimensionClassificationError(
                f"{spec!r} maps onto (visitor_id, date); it is a "
                "denominator dimension, not a numerator")
    for spec in denominator_dims:
        if classify_dimension(store, spec) != "denominator":
            raise DimensionClassificationError(
                f"{spec!r} does not map onto (visitor_id, date); it "
                "cannot be a denominator dimension")

    date_from = date_from or config.start_date
    date_to = date_to or config.end_date
    tags = set(config.variant_tags())

    first_seen: dict[str, dt.date] = {}
    for row in store.rows():
        seen = first_seen.get(row.visitor_id)
        if seen is None or row.date < seen:
            first_seen[row.visitor_id] = row.date

    accessors = {spec: _dim_accessor(store, spec) for spec in numerator_dims}
    denom_accessors = {}
    for spec in denominator_dims:
        if spec == "visitor_newness":
            continue  # derived below
        denom_accessors[spec] = _dim_accessor(store, spec)

    # cell key -> measure -> [sum_x, sum_x2, n]
    cells: dict[tuple, dict[str, list]] = {}

    def accumulate(cube, value, variant, date, extras, rows):
        key = (cube, str(value), variant, date, extras)
        cell = cells.get(key)
        if cell is None:
            cell = cells[key] = {m: [0.0, 0.0, 0] for m in ALL_MEASURES}
        for measure in ADDITIVE_MEASURES:
            x = float(sum(getattr(r, measure) for r in rows))
            agg = cell[measure]
            agg[0] += x
            agg[1] += x * x
            agg[2] += 1
        responses = sum(r.nps_responses for r in rows)
        if responses > 0:
            x = sum(r.nps_score_sum for r in rows) / responses
            agg = cell["nps"]
            agg[0] += x
            agg[1] += x * x
            agg[2] += 1

    # visitor-days never span store date partitions, so group one date
    # at a time and keep peak memory at a single day's rows
    for date in store.dates(date_from, date_to):
        by_visitor: dict[str, list] = {}
        for row in store.rows_on(date):
            if row.variant_tag in tags:
                by_visitor.setdefault(row.visitor_id, []).append(row)
        for visitor, rows in by_visitor.items():
            row_tags = {r.variant_tag for r in rows}
            if len(row_tags) > 1:
                raise CubeError(
                    f"visitor {visitor!r} on {date} carries conflicting "
                    f"variant tags {sorted(row_tags)}")
            variant = rows[0].variant_tag
            extras = []
            for spec in denominator_dims:
                if spec == "visitor_newness":
                    extras.append("new" if first_seen[visitor] == date
                                  else "returning")
                else:
                    extras.append(str(denom_accessors[spec](rows[0])))
            extras = tuple(extras)

            if include_overall:
                accumulate(OVERALL_CUBE, OVERALL_VALUE, variant, date,
                           extras, rows)
            for spec in numerator_dims:
                accessor = accessors[spec]
                slices: dict[str, list] = {}
                for row in rows:
                    slices.setdefault(str(accessor(row)), []).append(row)
                for value, matching in slices.items():
                    accumulate(spec, value, variant, date, extras, matching)

    out = []
    for (cube, value, variant, date, extras) in sorted(cells):
        cell = cells[(cube, value, variant, date, extras)]
        for measure in ALL_MEASURES:
            sum_x, sum_x2, n = cell[measure]
            if measure in DERIVED_MEASURES and n == 0:
                continue
            record = {
                "experiment_id": config.experiment_id,
                "cube": cube,
                "numerator_value": value,
                "variant_tag": variant,
                "date": date.isoformat(),
                "measure": measure,
                "sum_x": sum_x,
                "sum_x2": sum_x2,
                "n": n,
            }
            for spec, extra in zip(denominator_dims, extras):
                record[spec] = extra
            out.append(record)
    return out


@dataclass
class DifferentialResult:
    measure: str
    bin: str
    mean_test: Optional[float]
    mean_control: Optional[float]
    diff_pct: Optional[float]
    t_stat: Optional[float]
    df: Optional[float]
    significant_95: str  # positive | negative | not-significant
    small_sample_flag: bool
    n_test: int = 0
    n_control: int = 0
    undefined: bool = False

    def to_dict(self) -> dict:
        return {
            "measure": self.measure,
            "bin": self.bin,
            "mean_test": self.mean_test,
            "mean_control": self.mean_control,
            "diff_pct": self.diff_pct,
            "t_stat": self.t_stat,
            "df": self.df,
            "significant_95": self.significant_95,
            "small_sample_flag": self.small_sample_flag,
            "n_test": self.n_test,
            "n_control": self.n_control,
            "undefined": self.undefined,
        }


def welch_ttest(test_agg: tuple[float, float, int],
                control_agg: tuple[float, float, int],
                measure: str = "", bin_label: str = "") -> DifferentialResult:
    """Welch's unequal-variance t-test from (sum, sum of squares, n).

    Arms with fewer than two observations yield an undefined marker
    rather than an error; two flat arms with equal means pin t at 0.
    """
    sx_t, sx2_t, n_t = test_agg
    sx_c, sx2_c, n_c = control_agg
    small = n_t < SMALL_SAMPLE_N or n_c < SMALL_SAMPLE_N
    if n_t < 2 or n_c < 2:
        return DifferentialResult(
            measure=measure, bin=bin_label,
            mean_test=sx_t / n_t if n_t else None,
            mean_control=sx_c / n_c if n_c else None,
            diff_pct=None, t_stat=None, df=None,
            significant_95="not-significant", small_sample_flag=True,
            n_test=n_t, n_control=n_c, undefined=True)

    mean_t = sx_t / n_t
    mean_c = sx_c / n_c
    var_t = max((sx2_t - sx_t * sx_t / n_t) / (n_t - 1), 0.0)
    var_c = max((sx2_c - sx_c * sx_c / n_c) / (n_c - 1), 0.0)
    diff = mean_t - mean_c

    if var_t < ZERO_VARIANCE_EPS and var_c < ZERO_VARIANCE_EPS:
        if diff == 0.0:
            t_stat = 0.0
        else:
            t_stat = math.copysign(math.inf, diff)
        df = float(n_t + n_c - 2)
    else:
        se2_t = var_t / n_t
        se2_c = var_c / n_c
        t_stat = diff / math.sqrt(se2_t + se2_c)
        df = (se2_t + se2_c) ** 2 / (
            se2_t ** 2 / (n_t - 1) + se2_c ** 2 / (n_c - 1))

    critical = float(scipy_stats.t.ppf(0.975, df))
    if t_stat > critical:
        significance = "positive"
    elif t_stat < -critical:
        significance = "negative"
    else:
        significance = "not-significant"

    diff_pct = 100.0 * diff / mean_c if mean_c != 0 else None
    return DifferentialResult(
        measure=measure, bin=bin_label, mean_test=mean_t, mean_control=mean_c,
        diff_pct=diff_pct,
        t_stat=t_stat if math.isfinite(t_stat) else None,
        df=df, significant_95=significance, small_sample_flag=small,
        n_test=n_t, n_control=n_c)


class AnalyticsTable:
    """Long-format cube rows for every experiment, with a query index."""

    def __init__(self, rows: Optional[list[dict]] = None):
        self.rows: list[dict] = []
        self._index: dict[tuple, list[dict]] = {}
        self._query_cache: dict[tuple, list["DifferentialResult"]] = {}
        if rows:
            self.append_rows(rows)

    def append_rows(self, rows: Iterable[dict]) -> None:
        self._query_cache.clear()
        for row in rows:
            self.rows.append(row)
            key = (row["experiment_id"], row["cube"], row["measure"])
            self._index.setdefault(key, []).append(row)

    def replace_experiment(self, experiment_id: str,
                           rows: Iterable[dict]) -> None:
        """Idempotent rebuild: drop the experiment's rows, then append."""
        self.rows = [r for r in self.rows
                     if r["experiment_id"] != experiment_id]
        self._index = {}
        self._query_cache.clear()
        existing, self.rows = self.rows, []
        self.append_rows(existing)
        self.append_rows(list(rows))

    def experiments(self) -> list[str]:
        return sorted({r["experiment_id"] for r in self.rows})

    def cubes(self, experiment_id: str) -> list[str]:
        return sorted({r["cube"] for r in self.rows
                       if r["experiment_id"] == experiment_id})

    def denominator_columns(self, experiment_id: str) -> list[str]:
        skip = set(BASE_COLUMNS) | set(TAIL_COLUMNS)
        columns: list[str] = []
        for row in self.rows:
            if row["experiment_id"] != experiment_id:
                continue
            for column in row:
                if column not in skip and column not in columns:
                    columns.append(column)
        return columns

    def query(
        self,
        experiment_id: str,
        cube: str,
        measure: str,
        test_variant: str,
        control_variant: str,
        filters: Optional[dict[str, str]] = None,
    ) -> list[DifferentialResult]:
        """Per-bin test-vs-control differentials for one cube rotation.

        Filters restrict denominator coordinates (``date``,
        ``visitor_newness``, any configured extras); the surviving cells
        are summed per bin and arm, which is sound because cells
        partition disjoint visitor-day sets.
        """
        if measure not in ALL_MEASURES:
            raise CubeError(f"unknown measure {measure!r}")
        if experiment_id not in {r["experiment_id"] for r in self.rows}:
            raise AnalyticsMissingError(
                f"no analytics rows for experiment {experiment_id!r}")
        rows = self._index.get((experiment_id, cube, measure))
        if not rows:
            raise CubeError(
                f"no cube {cube!r} with measure {measure!r} for "
                f"experiment {experiment_id!r}")
        filters = dict(filters or {})
        for column in filters:
            if column in ("experiment_id", "cube", "measure", "sum_x",
                          "sum_x2", "n", "variant_tag", "numerator_value"):
                raise CubeError(f"cannot filter on {column!r}")
            # rows of one (experiment, cube, measure) share their columns
            if column not in rows[0]:
                raise CubeError(f"unknown filter dimension {column!r}")

        # cell coordinates are stored as strings both by build_cubes and
        # the CSV loader, so filters compare without re-conversion
        filter_items = [(col, str(val)) for col, val in filters.items()]
        cache_key = (experiment_id, cube, measure, test_variant,
                     control_variant, tuple(sorted(filter_items)))
        cached = self._query_cache.get(cache_key)
        if cached is not None:
            return cached
        per_bin: dict[str, dict[str, list]] = {}
        for row in rows:
            variant = row["variant_tag"]
            if variant != test_variant and variant != control_variant:
                continue
            matched = True
            for col, val in filter_items:
                if row.get(col) != val:
                    matched = False
                    break
            if not matched:
                continue
            bins = per_bin.setdefault(row["numerator_value"], {})
            agg = bins.setdefault(variant, [0.0, 0.0, 0])
            agg[0] += row["sum_x"]
            agg[1] += row["sum_x2"]
            agg[2] += row["n"]

        results = []
        for bin_value in sorted(per_bin):
            arms = per_bin[bin_value]
            test_agg = tuple(arms.get(test_variant, [0.0, 0.0, 0]))
            control_agg = tuple(arms.get(control_variant, [0.0, 0.0, 0]))
            results.append(welch_ttest(test_agg, control_agg,
                                       measure=measure, bin_label=bin_value))
        self._query_cache[cache_key] = results
        return results

    # -- persistence -----------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        extra_columns: list[str] = []
        skip = set(BASE_COLUMNS) | set(TAIL_COLUMNS)
        for row in self.rows:
            for column in row:
                if column not in skip and column not in extra_columns:
                    extra_columns.append(column)
        header = list(BASE_COLUMNS) + extra_columns + list(TAIL_COLUMNS)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=header, restval="")
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)

    @classmethod
    def load(cls, path: str | Path) -> "AnalyticsTable":
        table = cls()
        path = Path(path)
        if not path.exists():
            return table
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            rows = []
            for raw in reader:
                row = dict(raw)
                row["sum_x"] = float(row["sum_x"])
                row["sum_x2"] = float(row["sum_x2"])
                row["n"] = int(row["n"])
                rows.append(row)
        table.append_rows(rows)
        return table
