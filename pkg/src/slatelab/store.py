"""Impression-funnel event store with star-schema dimensions.

The central table holds one row per (visitor, course, date, page
context, variant tag) carrying all funnel measures. Dimensions join
against it only through subsets of the funnel keys. Ingestion merges
NDJSON events additively; compaction persists a key-unique snapshot
that readers treat as immutable.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import os
import shutil
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Iterator, Optional

PAGE_CONTEXTS = ("featured", "search", "course-landing", "email", "other")

# Contexts where a row represents a slate exposure: clicks cannot exceed
# impressions and enrollments cannot exceed clicks. Direct-landing
# contexts (an email click straight to a course page) may carry
# enrollments with zero impressions.
SLATE_CONTEXTS = frozenset({"featured", "search", "course-landing"})

FUNNEL_KEY_FIELDS = ("visitor_id", "course_id", "date")

MEASURE_FIELDS = (
    "impressions",
    "clicks",
    "enrollments",
    "revenue",
    "minutes_consumed",
    "nps_responses",
    "nps_score_sum",
)

INT_MEASURES = frozenset(
    {"impressions", "clicks", "enrollments", "nps_responses", "nps_score_sum"}
)

DEFAULT_RETENTION_DAYS = 400
ATTRIBUTION_WINDOW_DAYS = 30


class FunnelError(Exception):
    """Base class for funnel-store failures."""


class StarSchemaViolation(FunnelError):
    """Dimension keys are not a subset of the funnel keys."""


class UnknownDimensionError(FunnelError):
    """A filter or join referenced a dimension or field that does not exist."""


@dataclass(slots=True)
class ImpressionRow:
    visitor_id: str
    course_id: int
    date: dt.date
    page_context: str = "other"
    variant_tag: str = ""
    impressions: int = 0
    clicks: int = 0
    enrollments: int = 0
    revenue: float = 0.0
    minutes_consumed: float = 0.0
    nps_responses: int = 0
    nps_score_sum: int = 0

    def key(self) -> tuple:
        return (
            self.visitor_id,
            self.course_id,
            self.date,
            self.page_context,
            self.variant_tag,
        )

    def merge(self, other: "ImpressionRow") -> None:
        self.impressions += other.impressions
        self.clicks += other.clicks
        self.enrollments += other.enrollments
        self.revenue += other.revenue
        self.minutes_consumed += other.minutes_consumed
        self.nps_responses += other.nps_responses
        self.nps_score_sum += other.nps_score_sum

    def to_record(self) -> dict:
        rec = {f.name: getattr(self, f.name) for f in fields(self)}
        rec["date"] = self.date.isoformat()
        return rec


@dataclass(slots=True)
class EnrollmentRow:
    """One enrollment derived from the impression funnel.

    Consumption minutes and the NPS response are whatever landed inside
    the attribution window (ATTRIBUTION_WINDOW_DAYS after enrollment),
    attributed back to the enrollment date.
    """

    visitor_id: str
    course_id: int
    enrollment_date: dt.date
    revenue: float
    minutes_consumed: float
    nps_response: Optional[int] = None


@dataclass(slots=True)
class Reject:
    line: Optional[int]
    reason: str


@dataclass(slots=True)
class IngestReport:
    merged: int = 0
    created: int = 0
    rejects: list[Reject] = field(default_factory=list)
    deduped: int = 0


@dataclass(slots=True)
class Dimension:
    name: str
    key_fields: tuple[str, ...]
    rows: list[dict]
    index: dict[tuple, dict]

    def lookup(self, key: tuple) -> Optional[dict]:
        return self.index.get(key)


def parse_date(value) -> dt.date:
    if isinstance(value, dt.date):
        return value
    return dt.date.fromisoformat(str(value))


def _coerce_event(raw: dict) -> ImpressionRow:
    """Validate one raw event record and convert it to a row delta.

    Raw events carry a single optional ``nps_response`` (0-10); rows
    store response counts plus a score sum so they merge additively.
    """
    for req in ("visitor_id", "course_id", "date"):
        if raw.get(req) in (None, ""):
            raise ValueError(f"missing required field {req!r}")
    visitor_id = str(raw["visitor_id"])
    course_id = int(raw["course_id"])
    date = parse_date(raw["date"])
    context = raw.get("page_context") or "other"
    if context not in PAGE_CONTEXTS:
        raise ValueError(f"unknown page_context {context!r}")
    variant = raw.get("variant_tag") or ""

    measures = {}
    for name in ("impressions", "clicks", "enrollments"):
        value = int(raw.get(name) or 0)
        if value < 0:
            raise ValueError(f"negative {name}")
        measures[name] = value
    for name in ("revenue", "minutes_consumed"):
        value = float(raw.get(name) or 0.0)
        if value < 0:
            raise ValueError(f"negative {name}")
        measures[name] = value

    nps = raw.get("nps_response")
    if nps is None:
        responses, score_sum = 0, 0
    else:
        nps = int(nps)
        if not 0 <= nps <= 10:
            raise ValueError(f"nps_response {nps} outside 0-10")
        responses, score_sum = 1, nps

    if context in SLATE_CONTEXTS:
        if measures["clicks"] > measures["impressions"]:
            raise ValueError("clicks exceed impressions on a slate context")
        if measures["enrollments"] > measures["clicks"]:
            raise ValueError("enrollments exceed clicks on a slate context")

    return ImpressionRow(
        visitor_id=visitor_id,
        course_id=course_id,
        date=date,
        page_context=context,
        variant_tag=variant,
        nps_responses=responses,
        nps_score_sum=score_sum,
        **measures,
    )


class FunnelStore:
    """Single-writer, many-reader store of the impression funnel.

    In memory the store is always key-unique (events merge on arrival).
    With a data directory, raw events append to date-partitioned NDJSON
    files and ``compact()`` folds them into a new immutable snapshot,
    published by atomically rewriting the CURRENT pointer.
    """

    def __init__(self, data_dir: Optional[str | Path] = None,
                 retention_days: int = DEFAULT_RETENTION_DAYS):
        self.retention_days = retention_days
        self._rows: dict[tuple, ImpressionRow] = {}
        self._by_date: dict[dt.date, list[ImpressionRow]] = {}
        self._tokens: set[str] = set()
        self._dims: dict[str, Dimension] = {}
        self._anchor: Optional[dt.date] = None
        self._replaying = False
        self.snapshot_id = 0
        self.data_dir = Path(data_dir) if data_dir is not None else None
        if self.data_dir is not None:
            self._load()

    # -- paths -----------------------------------------------------------

    def _funnel_dir(self) -> Path:
        return self.data_dir / "funnel"

    def _events_dir(self) -> Path:
        return self._funnel_dir() / "events"

    def _snapshots_dir(self) -> Path:
        return self._funnel_dir() / "snapshots"

    def _dims_dir(self) -> Path:
        return self.data_dir / "dimensions"

    # -- ingestion -------------------------------------------------------

    def ingest_events(self, events: Iterable[str | dict]) -> IngestReport:
        """Merge a batch of raw events into the store.

        Accepts NDJSON lines or already-decoded dicts. Records with a
        ``dedup_token`` already seen are skipped, making re-ingestion of
        a tokened batch a no-op.
        """
        report = IngestReport()
        parsed: list[tuple[int, ImpressionRow, Optional[str], dict]] = []
        batch_max: Optional[dt.date] = None
        for line_no, item in enumerate(events, start=1):
            if isinstance(item, str):
                text = item.strip()
                if not text:
                    continue
                try:
                    raw = json.loads(text)
                except json.JSONDecodeError as exc:
                    report.rejects.append(Reject(line_no, f"malformed JSON: {exc}"))
                    continue
            else:
                raw = item
            if not isinstance(raw, dict):
                report.rejects.append(Reject(line_no, "event is not an object"))
                continue
            try:
                row = _coerce_event(raw)
            except (ValueError, TypeError) as exc:
                report.rejects.append(Reject(line_no, str(exc)))
                continue
            parsed.append((line_no, row, raw.get("dedup_token"), raw))
            if batch_max is None or row.date > batch_max:
                batch_max = row.date

        # The retention anchor only moves forward; rows older than the
        # trailing window relative to it are refused.
        anchor = self._anchor
        if batch_max is not None and (anchor is None or batch_max > anchor):
            anchor = batch_max
        cutoff = None
        if anchor is not None:
            cutoff = anchor - dt.timedelta(days=self.retention_days)

        appended: list[tuple[dt.date, dict]] = []
        for line_no, row, token, raw in parsed:
            if cutoff is not None and row.date < cutoff:
                report.rejects.append(
                    Reject(line_no, f"date {row.date} outside retention window")
                )
                continue
            if token is not None:
                if token in self._tokens:
                    report.deduped += 1
                    continue
                self._tokens.add(token)
            existing = self._rows.get(row.key())
            if existing is None:
                self._rows[row.key()] = row
                self._by_date.setdefault(row.date, []).append(row)
                report.created += 1
            else:
                existing.merge(row)
                report.merged += 1
            appended.append((row.date, raw))

        self._anchor = anchor
        if self.data_dir is not None and appended and not self._replaying:
            self._append_events(appended)
        return report

    def _append_events(self, events: list[tuple[dt.date, dict]]) -> None:
        self._events_dir().mkdir(parents=True, exist_ok=True)
        handles: dict[dt.date, list[str]] = {}
        for date, raw in events:
            handles.setdefault(date, []).append(json.dumps(raw, sort_keys=True))
        for date, lines in handles.items():
            path = self._events_dir() / f"{date.isoformat()}.ndjson"
            with path.open("a", encoding="utf-8") as fh:
                fh.write("\n".join(lines) + "\n")

    # -- dimensions ------------------------------------------------------

    def register_dimension(self, name: str, key_fields: Iterable[str],
                           rows: Iterable[dict]) -> None:
        """Attach a dimension whose keys are a subset of the funnel keys."""
        keys = tuple(key_fields)
        bad = [k for k in keys if k not in FUNNEL_KEY_FIELDS]
        if bad or not keys:
            raise StarSchemaViolation(
                f"dimension {name!r} keyed by {keys}; keys must be a non-empty "
                f"subset of {FUNNEL_KEY_FIELDS}"
            )
        stored = []
        index = {}
        for raw in rows:
            row = dict(raw)
            for k in keys:
                if k not in row:
                    raise FunnelError(f"dimension {name!r} row missing key {k!r}")
            if "course_id" in row:
                row["course_id"] = int(row["course_id"])
            if "date" in row:
                row["date"] = parse_date(row["date"])
            stored.append(row)
            index[tuple(row[k] for k in keys)] = row
        self._dims[name] = Dimension(name, keys, stored, index)
        if self.data_dir is not None:
            self._persist_dimension(self._dims[name])

    def dimension(self, name: str) -> Dimension:
        if name not in self._dims:
            raise UnknownDimensionError(f"unknown dimension {name!r}")
        return self._dims[name]

    def dimension_names(self) -> list[str]:
        return sorted(self._dims)

    def join_dimension(self, row: ImpressionRow, name: str) -> Optional[dict]:
        dim = self.dimension(name)
        key = tuple(getattr(row, k) for k in dim.key_fields)
        return dim.lookup(key)

    def check_closure(self, name: str) -> list[tuple]:
        """Return funnel-side keys that dangle against a dimension."""
        dim = self.dimension(name)
        missing = set()
        for row in self._rows.values():
            key = tuple(getattr(row, k) for k in dim.key_fields)
            if key not in dim.index:
                missing.add(key)
        return sorted(missing)

    # -- reads -----------------------------------------------------------

    def __len__(self) -> int:
        return len(self._rows)

    @property
    def min_date(self) -> Optional[dt.date]:
        return min(self._by_date) if self._by_date else None

    @property
    def max_date(self) -> Optional[dt.date]:
        return max(self._by_date) if self._by_date else None

    def rows(self) -> Iterator[ImpressionRow]:
        return iter(self._rows.values())

    def rows_on(self, date: dt.date) -> list[ImpressionRow]:
        return self._by_date.get(date, [])

    def dates(self, date_from: Optional[dt.date] = None,
              date_to: Optional[dt.date] = None) -> list[dt.date]:
        out = [
            d for d in self._by_date
            if (date_from is None or d >= date_from)
            and (date_to is None or d <= date_to)
        ]
        out.sort()
        return out

    def scan(self, filters: Optional[dict] = None,
             date_from: Optional[dt.date] = None,
             date_to: Optional[dt.date] = None) -> Iterator[ImpressionRow]:
        """Stream rows matching the filters in date-partition order.

        Filter keys are funnel fields (``course_id=7``) or dimension
        fields written as ``<dimension>.<field>``; rows whose join key
        dangles are treated as nulls and never match.
        """
        predicates = self._compile_filters(filters or {})
        for date in self.dates(date_from, date_to):
            day_rows = sorted(self._by_date[date], key=lambda r: r.key())
            for row in day_rows:
                if all(pred(row) for pred in predicates):
                    yield row

    def _compile_filters(self, filters: dict):
        predicates = []
        funnel_fields = {f.name for f in fields(ImpressionRow)}
        for key, value in filters.items():
            if "." in key:
                dim_name, field_name = key.split(".", 1)
                dim = self.dimension(dim_name)  # raises if unknown

                def dim_pred(row, _d=dim, _f=field_name, _v=value):
                    joined = _d.lookup(
                        tuple(getattr(row, k) for k in _d.key_fields)
                    )
                    return joined is not None and _match(joined.get(_f), _v)

                predicates.append(dim_pred)
            elif key in funnel_fields:
                coerced = _coerce_filter_value(key, value)
                predicates.append(
                    lambda row, _k=key, _v=coerced: getattr(row, _k) == _v
                )
            else:
                raise UnknownDimensionError(f"unknown filter field {key!r}")
        return predicates

    def totals(self) -> dict[str, float]:
        """Measure sums over the whole store (conservation checks)."""
        out = {name: 0 for name in MEASURE_FIELDS}
        for row in self._rows.values():
            for name in MEASURE_FIELDS:
                out[name] += getattr(row, name)
        return out

    # -- enrollment funnel -------------------------------------------------

    def build_enrollment_funnel(self, as_of: dt.date) -> list[EnrollmentRow]:
        """Derive one row per enrollment, with windowed attribution.

        Minutes and NPS responses land on the most recent enrollment of
        the same (visitor, course) no older than the attribution window;
        revenue comes only from rows that carry the enrollments.
        """
        per_pair: dict[tuple[str, int], dict[dt.date, list]] = {}
        for row in self._rows.values():
            if row.date > as_of:
                continue
            if not (row.enrollments or row.minutes_consumed or row.nps_responses):
                continue
            days = per_pair.setdefault((row.visitor_id, row.course_id), {})
            agg = days.get(row.date)
            if agg is None:
                # [enrollments, revenue, minutes, responses, score_sum]
                agg = days[row.date] = [0, 0.0, 0.0, 0, 0]
            agg[0] += row.enrollments
            agg[1] += row.revenue if row.enrollments else 0.0
            agg[2] += row.minutes_consumed
            agg[3] += row.nps_responses
            agg[4] += row.nps_score_sum

        window = dt.timedelta(days=ATTRIBUTION_WINDOW_DAYS)
        out: list[EnrollmentRow] = []
        for (visitor_id, course_id), days in sorted(per_pair.items()):
            enroll_dates = sorted(d for d, agg in days.items() if agg[0] > 0)
            if not enroll_dates:
                continue
            # minutes/score attributed per enrollment date
            attributed: dict[dt.date, list] = {
                d: [0.0, 0, 0] for d in enroll_dates
            }
            for date, agg in days.items():
                if not (agg[2] or agg[3]):
                    continue
                target = None
                for e in enroll_dates:
                    if e <= date <= e + window:
                        target = e
                if target is None:
                    continue
                attributed[target][0] += agg[2]
                attributed[target][1] += agg[3]
                attributed[target][2] += agg[4]
            for e in enroll_dates:
                count = days[e][0]
                revenue = days[e][1]
                minutes, responses, score_sum = attributed[e]
                response = (
                    int(round(score_sum / responses)) if responses else None
                )
                for _ in range(count):
                    out.append(
                        EnrollmentRow(
                            visitor_id=visitor_id,
                            course_id=course_id,
                            enrollment_date=e,
                            revenue=revenue / count,
                            minutes_consumed=minutes / count,
                            nps_response=response,
                        )
                    )
        return out

    # -- persistence -------------------------------------------------------

    def compact(self) -> int:
        """Fold pending events into a new key-unique snapshot.

        Rows older than the retention window (relative to the anchor
        date) are dropped from the snapshot. Publishing is atomic: the
        snapshot directory is fully written before CURRENT is swapped.
        """
        if self._anchor is not None:
            cutoff = self._anchor - dt.timedelta(days=self.retention_days)
            stale = [k for k, row in self._rows.items() if row.date < cutoff]
            for key in stale:
                row = self._rows.pop(key)
                self._by_date[row.date].remove(row)
                if not self._by_date[row.date]:
                    del self._by_date[row.date]

        new_id = self.snapshot_id + 1
        if self.data_dir is not None:
            snap = self._snapshots_dir() / f"{new_id:06d}"
            tmp = snap.with_suffix(".tmp")
            for leftover in (tmp, snap):
                if leftover.exists():
                    shutil.rmtree(leftover)
            tmp.mkdir(parents=True)
            with (tmp / "rows.ndjson").open("w", encoding="utf-8") as fh:
                for date in self.dates():
                    for row in sorted(self._by_date[date], key=lambda r: r.key()):
                        fh.write(json.dumps(row.to_record(), sort_keys=True) + "\n")
            (tmp / "tokens.txt").write_text(
                "".join(f"{t}\n" for t in sorted(self._tokens)), encoding="utf-8"
            )
            meta = {
                "snapshot_id": new_id,
                "anchor": self._anchor.isoformat() if self._anchor else None,
                "retention_days": self.retention_days,
            }
            (tmp / "meta.json").write_text(json.dumps(meta), encoding="utf-8")
            os.replace(tmp, snap)
            current_tmp = self._funnel_dir() / "CURRENT.tmp"
            current_tmp.write_text(str(new_id), encoding="utf-8")
            os.replace(current_tmp, self._funnel_dir() / "CURRENT")
            if self._events_dir().exists():
                shutil.rmtree(self._events_dir())
        self.snapshot_id = new_id
        return new_id

    def _persist_dimension(self, dim: Dimension) -> None:
        self._dims_dir().mkdir(parents=True, exist_ok=True)
        field_names: list[str] = []
        for row in dim.rows:
            for name in row:
                if name not in field_names:
                    field_names.append(name)
        path = self._dims_dir() / f"{dim.name}.csv"
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=field_names)
            writer.writeheader()
            for row in dim.rows:
                rec = dict(row)
                if isinstance(rec.get("date"), dt.date):
                    rec["date"] = rec["date"].isoformat()
                if isinstance(rec.get("published_date"), dt.date):
                    rec["published_date"] = rec["published_date"].isoformat()
                writer.writerow(rec)
        meta = {"name": dim.name, "key_fields": list(dim.key_fields)}
        (self._dims_dir() / f"{dim.name}.meta.json").write_text(
            json.dumps(meta), encoding="utf-8"
        )

    def _load(self) -> None:
        current = self._funnel_dir() / "CURRENT"
        if current.exists():
            snap_id = int(current.read_text(encoding="utf-8").strip())
            snap = self._snapshots_dir() / f"{snap_id:06d}"
            meta = json.loads((snap / "meta.json").read_text(encoding="utf-8"))
            self.snapshot_id = snap_id
            if meta.get("anchor"):
                self._anchor = parse_date(meta["anchor"])
            tokens_path = snap / "tokens.txt"
            if tokens_path.exists():
                self._tokens = {
                    line for line in
                    tokens_path.read_text(encoding="utf-8").splitlines() if line
                }
            with (snap / "rows.ndjson").open(encoding="utf-8") as fh:
                for line in fh:
                    rec = json.loads(line)
                    rec["date"] = parse_date(rec["date"])
                    row = ImpressionRow(**rec)
                    self._rows[row.key()] = row
                    self._by_date.setdefault(row.date, []).append(row)
        # replay events appended after the snapshot; the flag keeps the
        # replay from re-appending them to the event files
        if self._events_dir().exists():
            self._replaying = True
            try:
                for path in sorted(self._events_dir().glob("*.ndjson")):
                    with path.open(encoding="utf-8") as fh:
                        self.ingest_events(fh)
            finally:
                self._replaying = False
        if self._dims_dir().exists():
            for meta_path in sorted(self._dims_dir().glob("*.meta.json")):
                meta = json.loads(meta_path.read_text(encoding="utf-8"))
                csv_path = self._dims_dir() / f"{meta['name']}.csv"
                with csv_path.open(encoding="utf-8", newline="") as fh:
                    rows = list(csv.DictReader(fh))
                dim_rows = [_coerce_dim_row(r) for r in rows]
                dim = self._build_dimension(meta["name"], meta["key_fields"], dim_rows)
                self._dims[meta["name"]] = dim

    def _build_dimension(self, name, key_fields, rows) -> Dimension:
        keys = tuple(key_fields)
        index = {tuple(r[k] for k in keys): r for r in rows}
        return Dimension(name, keys, rows, index)


def _coerce_dim_row(row: dict) -> dict:
    out = {}
    for key, value in row.items():
        if key == "course_id" or key.endswith("_id"):
            try:
                out[key] = int(value)
                continue
            except (TypeError, ValueError):
                pass
        if key in ("date", "published_date") and value:
            try:
                out[key] = parse_date(value)
                continue
            except ValueError:
                pass
        if key == "price":
            out[key] = float(value)
            continue
        out[key] = value
    return out


def _coerce_filter_value(field_name: str, value):
    if field_name == "course_id":
        return int(value)
    if field_name == "date":
        return parse_date(value)
    if field_name in INT_MEASURES:
        return int(value)
    if field_name in ("revenue", "minutes_consumed"):
        return float(value)
    return value


def _match(left, right) -> bool:
    if left == right:
        return True
    return str(left) == str(right)
