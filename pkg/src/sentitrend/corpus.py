"""Comment-dump ingestion, study-window filtering, and covariate tables.

Comments arrive as line-delimited JSON with anonymized integer author ids
and an optional parent link (the reply relation). School covariates arrive
as a CSV keyed by school id. Both are validated on ingestion; the line /
row number is part of every error so bad records can be located in
multi-gigabyte dumps.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Optional

TOMBSTONE_BODIES = ("[deleted]", "[removed]")

COMMENT_FIELDS = ("msg_id", "school_id", "parent_id", "created_utc", "body", "author_dummy")

COVARIATE_HEADER = (
    "school_id,region,type,d1,cchie,medical,city_population,doctoral_programs,"
    "tenure,enrollment,graduate_student,selectivity,graduation_rate"
)


class CorpusFormatError(ValueError):
    """Malformed or invalid record; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class CovariateError(ValueError):
    """Invalid covariate cell; carries row number and column name."""

    def __init__(self, row_no: int, column: str, message: str):
        super().__init__(f"row {row_no}, column {column!r}: {message}")
        self.row_no = row_no
        self.column = column


class Region(Enum):
    WEST = "West"
    SOUTH = "South"
    NORTHEAST = "Northeast"
    MIDWEST = "Midwest"


class SchoolType(Enum):
    PUBLIC = "Public"
    PRIVATE = "Private"


class Cchie(Enum):
    """Carnegie classification with the two small categories merged."""

    BACC_OR_MASTERS = "BaccalaureateOrMasters"
    DOCTORAL_HIGH = "DoctoralHigh"
    DOCTORAL_VERY_HIGH = "DoctoralVeryHigh"


# Alternative spellings accepted on ingestion; the two unmerged source
# categories collapse into the merged level.
_CCHIE_ALIASES = {
    "baccalaureateormasters": Cchie.BACC_OR_MASTERS,
    "baccalaureate or master's": Cchie.BACC_OR_MASTERS,
    "baccalaureate": Cchie.BACC_OR_MASTERS,
    "masters": Cchie.BACC_OR_MASTERS,
    "master's": Cchie.BACC_OR_MASTERS,
    "doctoralhigh": Cchie.DOCTORAL_HIGH,
    "doctoral: high research activity": Cchie.DOCTORAL_HIGH,
    "doctoralveryhigh": Cchie.DOCTORAL_VERY_HIGH,
    "doctoral: very high research activity": Cchie.DOCTORAL_VERY_HIGH,
}

_BOOL_LITERALS = {
    "yes": True, "no": False, "true": True, "false": False, "1": True, "0": False,
}


@dataclass(frozen=True)
class RawComment:
    msg_id: str
    school_id: str
    parent_id: Optional[str]
    created_utc: int
    body: str
    author_dummy: int

    @property
    def is_tombstone(self) -> bool:
        """Platform-deleted body; kept for graph structure, flagged for scoring."""
        return self.body in TOMBSTONE_BODIES


@dataclass(frozen=True)
class SchoolCovariates:
    school_id: str
    region: Optional[Region] = None
    school_type: Optional[SchoolType] = None
    d1: Optional[bool] = None
    cchie: Optional[Cchie] = None
    medical: Optional[bool] = None
    city_population: Optional[float] = None  # thousands of persons
    doctoral_programs: Optional[float] = None
    tenure: Optional[float] = None  # faculty count
    enrollment: Optional[float] = None  # thousands of students
    graduate_student: Optional[float] = None  # thousands of students
    selectivity: Optional[float] = None  # fraction in [0, 1]
    graduation_rate: Optional[float] = None  # percent in [0, 100]

    @property
    def is_complete(self) -> bool:
        return all(
            getattr(self, name) is not None
            for name in (
                "region", "school_type", "d1", "cchie", "medical",
                "city_population", "doctoral_programs", "tenure", "enrollment",
                "graduate_student", "selectivity", "graduation_rate",
            )
        )


@dataclass(frozen=True)
class Window:
    years: frozenset
    months: frozenset

    def __post_init__(self):
        if not self.months:
            raise ValueError("window needs at least one month")
        bad = [m for m in self.months if not 1 <= int(m) <= 12]
        if bad:
            raise ValueError(f"months outside 1..12: {sorted(bad)}")

    def contains(self, created_utc: int) -> bool:
        dt = datetime.fromtimestamp(created_utc, tz=timezone.utc)
        return dt.month in self.months and dt.year in self.years


STUDY_WINDOW = Window(years=frozenset({2019, 2020, 2021, 2022}), months=frozenset({8, 9, 10, 11}))


@dataclass
class Corpus:
    """Window-filtered comments with year labels, grouped by school.

    `messages[i]` carries year label `years[i]`; `by_school` maps each
    school to message indices in appearance order. Instances are treated
    as immutable once built.
    """

    messages: list = field(default_factory=list)
    years: list = field(default_factory=list)
    window: Window = STUDY_WINDOW
    by_school: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.messages)

    def schools(self) -> list:
        return list(self.by_school)

    def school_messages(self, school_id: str) -> list:
        if school_id not in self.by_school:
            raise KeyError(f"unknown school: {school_id!r}")
        return [self.messages[i] for i in self.by_school[school_id]]


def parse_comments(stream, on_error: str = "abort", errors: Optional[list] = None) -> list:
    """Parse line-delimited JSON comments, preserving appearance order.

    `stream` is an iterable of lines (or a str/bytes blob). Malformed lines
    abort with a line-numbered error by default; with on_error="skip" they
    are counted into `errors` (a list of (line_no, reason) tuples) and
    parsing continues. Duplicate msg_ids always abort.
    """
    if on_error not in ("abort", "skip"):
        raise ValueError(f"on_error must be 'abort' or 'skip', got {on_error!r}")
    if isinstance(stream, bytes):
        stream = stream.decode("utf-8")
    if isinstance(stream, str):
        stream = io.StringIO(stream)

    comments = []
    seen = set()
    for line_no, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            comments.append(_parse_comment_line(line, line_no))
        except CorpusFormatError as exc:
            if on_error == "abort":
                raise
            if errors is not None:
                errors.append((line_no, str(exc)))
            continue
        cid = comments[-1].msg_id
        if cid in seen:
            raise CorpusFormatError(line_no, f"duplicate msg_id {cid!r}")
        seen.add(cid)
    return comments


def _parse_comment_line(line: str, line_no: int) -> RawComment:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(line_no, f"invalid JSON ({exc.msg})") from exc
    if not isinstance(rec, dict):
        raise CorpusFormatError(line_no, "record is not a JSON object")
    for key in ("msg_id", "school_id", "created_utc", "body"):
        if key not in rec or rec[key] is None:
            raise CorpusFormatError(line_no, f"missing field {key!r}")

    msg_id = str(rec["msg_id"])
    parent_id = rec.get("parent_id")
    if parent_id is not None:
        parent_id = str(parent_id)
        if parent_id == msg_id:
            raise CorpusFormatError(line_no, f"message {msg_id!r} replies to itself")
    try:
        created_utc = int(rec["created_utc"])
    except (TypeError, ValueError):
        raise CorpusFormatError(line_no, f"created_utc not an integer: {rec['created_utc']!r}")
    author = rec.get("author_dummy", 1)
    try:
        author = int(author)
    except (TypeError, ValueError):
        raise CorpusFormatError(line_no, f"author_dummy not an integer: {author!r}")
    if author < 1:
        raise CorpusFormatError(line_no, f"author_dummy must be >= 1, got {author}")

    return RawComment(
        msg_id=msg_id,
        school_id=str(rec["school_id"]),
        parent_id=parent_id,
        created_utc=created_utc,
        body=str(rec["body"]),
        author_dummy=author,
    )


def serialize_comments(comments: Iterable) -> str:
    """Canonical JSONL form; parse o serialize is the identity on its output."""
    lines = []
    for c in comments:
        rec = {
            "msg_id": c.msg_id,
            "school_id": c.school_id,
            "parent_id": c.parent_id,
            "created_utc": c.created_utc,
            "body": c.body,
            "author_dummy": c.author_dummy,
        }
        lines.append(json.dumps(rec, ensure_ascii=False, separators=(",", ":")))
    return "\n".join(lines) + ("\n" if lines else "")


def filter_window(comments, years, months=None) -> Corpus:
    """Retain comments whose UTC calendar date falls in the window.

    `comments` may be a list of RawComment or an existing Corpus (whose
    messages are refiltered; the operation is idempotent). Year labels are
    assigned from the UTC timestamp.
    """
    if isinstance(comments, Corpus):
        comments = comments.messages
    window = Window(years=frozenset(int(y) for y in years),
                    months=frozenset(int(m) for m in (months or range(1, 13))))
    corpus = Corpus(window=window, by_school={})
    for c in comments:
        dt = datetime.fromtimestamp(c.created_utc, tz=timezone.utc)
        if dt.month not in window.months or dt.year not in window.years:
            continue
        corpus.by_school.setdefault(c.school_id, []).append(len(corpus.messages))
        corpus.messages.append(c)
        corpus.years.append(dt.year)
    return corpus


def _parse_covariate_value(column: str, raw: str, row_no: int):
    raw = raw.strip()
    if raw == "":
        return None
    if column == "region":
        for level in Region:
            if raw.lower() == level.value.lower():
                return level
        raise CovariateError(row_no, column, f"unknown region {raw!r}")
    if column == "type":
        for level in SchoolType:
            if raw.lower() == level.value.lower():
                return level
        raise CovariateError(row_no, column, f"unknown school type {raw!r}")
    if column == "cchie":
        key = raw.lower()
        if key in _CCHIE_ALIASES:
            return _CCHIE_ALIASES[key]
        raise CovariateError(row_no, column, f"unknown classification {raw!r}")
    if column in ("d1", "medical"):
        key = raw.lower()
        if key in _BOOL_LITERALS:
            return _BOOL_LITERALS[key]
        raise CovariateError(row_no, column, f"unknown boolean literal {raw!r}")
    # numeric columns
    try:
        value = float(raw)
    except ValueError:
        raise CovariateError(row_no, column, f"non-numeric value {raw!r}")
    if value < 0:
        raise CovariateError(row_no, column, f"negative value {value}")
    if column == "selectivity" and not 0.0 <= value <= 1.0:
        raise CovariateError(row_no, column, f"selectivity {value} outside [0, 1]")
    if column == "graduation_rate" and not 0.0 <= value <= 100.0:
        raise CovariateError(row_no, column, f"graduation rate {value} outside [0, 100]")
    return value


def load_covariates(source) -> list:
    """Load the school covariate CSV; missing cells leave fields None.

    `source` is a path, file object, or CSV text. The header row must match
    the declared schema exactly. Rows with missing cells are returned with
    `is_complete` False (they are dropped later at model-building time,
    but kept for descriptive summaries).
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = str(source)
        if "\n" not in text and "," not in text:
            with open(text, "r", encoding="utf-8") as fh:
                text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty covariate table")
    header = [h.strip() for h in rows[0]]
    expected = COVARIATE_HEADER.split(",")
    if header != expected:
        raise ValueError(f"covariate header mismatch: expected {expected}, got {header}")

    out = []
    seen = set()
    for row_no, row in enumerate(rows[1:], start=2):
        if not any(cell.strip() for cell in row):
            continue
        if len(row) != len(expected):
            raise CovariateError(row_no, "*", f"expected {len(expected)} cells, got {len(row)}")
        school_id = row[0].strip()
        if not school_id:
            raise CovariateError(row_no, "school_id", "empty school id")
        if school_id in seen:
            raise CovariateError(row_no, "school_id", f"duplicate school {school_id!r}")
        seen.add(school_id)
        values = {
            col: _parse_covariate_value(col, cell, row_no)
            for col, cell in zip(expected[1:], row[1:])
        }
        out.append(SchoolCovariates(
            school_id=school_id,
            region=values["region"],
            school_type=values["type"],
            d1=values["d1"],
            cchie=values["cchie"],
            medical=values["medical"],
            city_population=values["city_population"],
            doctoral_programs=values["doctoral_programs"],
            tenure=values["tenure"],
            enrollment=values["enrollment"],
            graduate_student=values["graduate_student"],
            selectivity=values["selectivity"],
            graduation_rate=values["graduation_rate"],
        ))
    return out


CATEGORICAL_VARIABLES = ("region", "school_type", "d1", "cchie", "medical")
NUMERIC_VARIABLES = (
    "city_population", "doctoral_programs", "tenure", "enrollment",
    "graduate_student", "selectivity", "graduation_rate",
)


@dataclass(frozen=True)
class CategoricalSummary:
    variable: str
    levels: tuple  # (level name, count, percentage)


@dataclass(frozen=True)
class NumericSummary:
    variable: str
    n: int
    mean: float
    sd: Optional[float]  # None when n == 1 (sample SD undefined)
    minimum: float
    maximum: float


def descriptive_stats(covariates) -> dict:
    """Per-variable summaries: counts/percentages or mean, SD, min, max.

    Each variable is summarized over the rows where it is present, so
    incomplete schools still contribute to the columns they do have.
    Sample SD uses the n-1 denominator and is None for a single value.
    """
    import numpy as np

    out = {}
    for var in CATEGORICAL_VARIABLES:
        values = [getattr(c, var) for c in covariates if getattr(c, var) is not None]
        counts = {}
        for v in values:
            label = v.value if isinstance(v, Enum) else ("Yes" if v else "No")
            counts[label] = counts.get(label, 0) + 1
        total = sum(counts.values())
        levels = tuple(
            (label, count, 100.0 * count / total)
            for label, count in sorted(counts.items())
        ) if total else ()
        out[var] = CategoricalSummary(variable=var, levels=levels)

    for var in NUMERIC_VARIABLES:
        values = np.array([getattr(c, var) for c in covariates if getattr(c, var) is not None],
                          dtype=float)
        if values.size == 0:
            continue
        sd = float(np.std(values, ddof=1)) if values.size >= 2 else None
        out[var] = NumericSummary(
            variable=var,
            n=int(values.size),
            mean=float(np.mean(values)),
            sd=sd,
            minimum=float(np.min(values)),
            maximum=float(np.max(values)),
        )
    return out
