"""Weekly mortality (STMF) and Treasury-bill (FRED) ingestion and alignment."""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

WEEKS = 52
STMF_REQUIRED = ("CountryCode", "Year", "Week", "Sex", "DTotal", "RTotal")
STMF_COLUMNS = (
    "CountryCode", "Year", "Week", "Sex",
    "D0_14", "D15_64", "D65_74", "D75_84", "D85p", "DTotal",
    "R0_14", "R15_64", "R65_74", "R75_84", "R85p", "RTotal",
    "Split", "SplitSex", "Forecast",
)
ALIGNED_HEADER = ("date", "excess_mortality", "rate_percent")
DEFAULT_REFERENCE_YEARS = tuple(range(2015, 2020))


class FormatError(ValueError):
    """Malformed input; ``line`` is the 1-based source line when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = f"{source or 'input'}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class CoverageError(ValueError):
    pass


@dataclass(frozen=True)
class WeeklyMortalityRecord:
    year: int
    iso_week: int
    deaths_total: float
    rate_total: float
    sex: str = "b"
    country: str = ""
    line: int = 0

    def __post_init__(self):
        if not 1 <= self.iso_week <= 53:
            raise ValueError("iso_week must lie in 1..53")
        if self.rate_total < 0 or self.deaths_total < 0:
            raise ValueError("deaths and rates must be nonnegative")


@dataclass(frozen=True)
class RateSeries:
    dates: tuple
    values: np.ndarray
    filled: np.ndarray  # True where a missing value was carried forward


@dataclass(frozen=True)
class BaselineCurve:
    expected_rate: np.ndarray
    reference_years: tuple
    synthetic: bool = False

    def __post_init__(self):
        v = np.asarray(self.expected_rate, dtype=float)
        if v.shape != (WEEKS,):
            raise ValueError("baseline must have 52 entries")
        if np.any(v <= 0):
            raise ValueError("baseline entries must be positive")
        object.__setattr__(self, "expected_rate", v)

    def for_week(self, iso_week: int) -> float:
        return float(self.expected_rate[min(iso_week, WEEKS) - 1])


@dataclass(frozen=True)
class AlignedSeries:
    dates: tuple
    excess_mortality: np.ndarray
    rate: np.ndarray
    provenance: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        if not len(self.dates) == len(self.excess_mortality) == len(self.rate):
            raise ValueError("aligned columns must have equal lengths")

    def __len__(self) -> int:
        return len(self.dates)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_text(source) -> tuple[str, str]:
    if isinstance(source, (str, Path)) and Path(source).exists():
        return Path(source).read_text(encoding="utf-8-sig"), str(source)
    if hasattr(source, "read"):
        return source.read(), getattr(source, "name", "stream")
    raise FileNotFoundError(source)


def _number(text: str, name: str, line: int, source: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise FormatError(f"{name}={text!r} is not a number", line, source) from None
    if not math.isfinite(val):
        raise FormatError(f"{name} is not finite", line, source)
    return val


def _integer(text: str, name: str, line: int, source: str) -> int:
    val = _number(text, name, line, source)
    if val != int(val):
        raise FormatError(f"{name}={text!r} is not an integer", line, source)
    return int(val)


def parse_stmf(source) -> list[WeeklyMortalityRecord]:
    """Unisex (Sex == "b") weekly totals from an STMF CSV file.

    Lines before the header row (the one starting with ``CountryCode``) are
    skipped, which tolerates the title line of per-country downloads.
    """
    text, name = _read_text(source)
    lines = text.splitlines()
    start = next((i for i, ln in enumerate(lines) if ln.strip().startswith("CountryCode")), None)
    if start is None:
        raise FormatError("no header row starting with CountryCode", None, name)
    reader = csv.reader(lines[start:])
    header = [h.strip() for h in next(reader)]
    missing = [c for c in STMF_REQUIRED if c not in header]
    if missing:
        raise FormatError(f"missing required columns {missing}", start + 1, name)
    col = {c: header.index(c) for c in STMF_REQUIRED}
    out = []
    for offset, row in enumerate(reader, start=start + 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise FormatError(f"expected {len(header)} fields, got {len(row)}", offset, name)
        if row[col["Sex"]].strip() != "b":
            continue
        year = _integer(row[col["Year"]], "Year", offset, name)
        week = _integer(row[col["Week"]], "Week", offset, name)
        deaths = _number(row[col["DTotal"]], "DTotal", offset, name)
        rate = _number(row[col["RTotal"]], "RTotal", offset, name)
        if not 1 <= week <= 53:
            raise FormatError(f"Week={week} outside 1..53", offset, name)
        if deaths < 0 or rate < 0:
            raise FormatError("negative deaths or rate", offset, name)
        out.append(WeeklyMortalityRecord(year, week, deaths, rate, "b", row[col["CountryCode"]].strip(), offset))
    return out


def serialize_stmf(records) -> str:
    """STMF-shaped CSV holding the retained columns; unused columns are blank."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STMF_COLUMNS)
    for r in records:
        row = dict.fromkeys(STMF_COLUMNS, "")
        row.update(CountryCode=r.country, Year=r.year, Week=r.iso_week, Sex=r.sex, DTotal=repr(r.deaths_total), RTotal=repr(r.rate_total))
        w.writerow([row[c] for c in STMF_COLUMNS])
    return buf.getvalue()


def parse_fred(source) -> RateSeries:
    """Two-column FRED export: date, rate in percent ("." or blank = missing).

    Missing values are carried forward and flagged.
    """
    text, name = _read_text(source)
    reader = csv.reader(text.splitlines())
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("empty file", None, name) from None
    if len(header) != 2:
        raise FormatError(f"expected 2 columns, got {len(header)}", 1, name)
    dates, vals, filled = [], [], []
    last = None
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise FormatError(f"expected 2 fields, got {len(row)}", line, name)
        try:
            day = dt.date.fromisoformat(row[0].strip())
        except ValueError:
            raise FormatError(f"bad date {row[0]!r}", line, name) from None
        if dates and day <= dates[-1]:
            raise FormatError("dates must be strictly increasing", line, name)
        raw = row[1].strip()
        if raw in ("", "."):
            if last is None:
                raise FormatError("leading missing value cannot be forward-filled", line, name)
            vals.append(last)
            filled.append(True)
        else:
            last = _number(raw, "rate", line, name)
            vals.append(last)
            filled.append(False)
        dates.append(day)
    if not dates:
        raise FormatError("no observations", None, name)
    return RateSeries(tuple(dates), np.array(vals), np.array(filled, dtype=bool))


def build_baseline(records, reference_years=DEFAULT_REFERENCE_YEARS) -> BaselineCurve:
    """Week-of-year mean rate over the reference years; week 53 counts as week 52."""
    years = set(reference_years)
    sums = np.zeros(WEEKS)
    counts = np.zeros(WEEKS, dtype=int)
    for r in records:
        if r.year in years:
            w = min(r.iso_week, WEEKS) - 1
            sums[w] += r.rate_total
            counts[w] += 1
    if np.any(counts == 0):
        absent = (np.flatnonzero(counts == 0) + 1).tolist()
        raise CoverageError(f"weeks {absent} absent from reference years {sorted(years)}")
    return BaselineCurve(sums / counts, tuple(sorted(years)))


def synthetic_baseline(level: float = 0.0088, amplitude: float = 0.08) -> BaselineCurve:
    """Seasonal stand-in (winter peak, cosine shape) for runs without STMF data."""
    weeks = np.arange(WEEKS)
    curve = level * (1.0 + amplitude * np.cos(2 * np.pi * weeks / WEEKS))
    return BaselineCurve(curve, (), synthetic=True)


def excess_mortality(records, baseline: BaselineCurve) -> np.ndarray:
    return np.array([r.rate_total - baseline.for_week(r.iso_week) for r in records])


def week_friday(year: int, week: int) -> dt.date:
    return dt.date.fromisocalendar(year, week, 5)


def align(records, rates: RateSeries, baseline: BaselineCurve, provenance: dict | None = None) -> AlignedSeries:
    """Join mortality and rates on ISO (year, week); the date is that week's Friday.

    The result must be a gap-free run of consecutive weeks.
    """
    mort = {}
    for r in records:
        key = (r.year, r.iso_week)
        if key in mort:
            raise FormatError(f"duplicate mortality week {key}", r.line)
        mort[key] = r
    rate_by_week = {}
    filled_by_week = {}
    for day, val, flag in zip(rates.dates, rates.values, rates.filled):
        iso = day.isocalendar()
        rate_by_week[(iso[0], iso[1])] = float(val)
        filled_by_week[(iso[0], iso[1])] = bool(flag)
    keys = sorted(set(mort) & set(rate_by_week))
    if not keys:
        raise CoverageError("mortality and rate files share no weeks")
    dates = tuple(week_friday(*k) for k in keys)
    gaps = [str(b) for a, b in zip(dates, dates[1:]) if (b - a).days != 7]
    if gaps:
        raise CoverageError(f"aligned weeks are not contiguous (gap before {gaps[0]})")
    excess = np.array([mort[k].rate_total - baseline.for_week(k[1]) for k in keys])
    rate = np.array([rate_by_week[k] for k in keys])
    flags = {
        "rate_forward_filled": [str(d) for d, k in zip(dates, keys) if filled_by_week[k]],
        "week53_on_week52_baseline": [str(d) for d, k in zip(dates, keys) if k[1] == 53],
        "synthetic_baseline": baseline.synthetic,
        "reference_years": list(baseline.reference_years),
    }
    return AlignedSeries(dates, excess, rate, dict(provenance or {}), flags)


def ingest(stmf_path, fred_path, reference_years=DEFAULT_REFERENCE_YEARS) -> AlignedSeries:
    records = parse_stmf(stmf_path)
    rates = parse_fred(fred_path)
    baseline = build_baseline(records, reference_years)
    prov = {"stmf_sha256": file_digest(stmf_path), "fred_sha256": file_digest(fred_path)}
    return align(records, rates, baseline, prov)


def fmt(x: float) -> str:
    """10 significant digits, fixed across platforms."""
    return f"{x:.10g}"


def write_aligned_csv(series: AlignedSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ALIGNED_HEADER)
        for d, e, r in zip(series.dates, series.excess_mortality, series.rate):
            w.writerow([d.isoformat(), fmt(e), fmt(r)])


def read_aligned_csv(path) -> AlignedSeries:
    text, name = _read_text(path)
    reader = csv.reader(text.splitlines())
    header = tuple(next(reader, ()))
    if header != ALIGNED_HEADER:
        raise FormatError(f"header must be {','.join(ALIGNED_HEADER)}", 1, name)
    dates, exc, rate = [], [], []
    for line, row in enumerate(reader, start=2):
        if len(row) != 3:
            raise FormatError("expected 3 fields", line, name)
        try:
            dates.append(dt.date.fromisoformat(row[0]))
        except ValueError:
            raise FormatError(f"bad date {row[0]!r}", line, name) from None
        exc.append(_number(row[1], "excess_mortality", line, name))
        rate.append(_number(row[2], "rate_percent", line, name))
    if not dates:
        raise FormatError("no rows", None, name)
    return AlignedSeries(tuple(dates), np.array(exc), np.array(rate), {"aligned_sha256": file_digest(path)})
