"""CSV ingestion, calendar repair and preprocessing into a ``PanelDataset``.

Hourly inputs: one CSV per country with header
``timestamp,price,<high-frequency covariates...>`` (ISO-8601 local time).
Daily inputs: one shared CSV with header ``date,<low-frequency covariates...>``.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .config import ModelSpec, config_hash

log = logging.getLogger(__name__)

MINUTES_PER_DAY = 1440
PREPROCESSING_NOTES = {
    "fossil_shift": "daily covariates shifted by one day after gap interpolation",
    "solar": "solar forecasts standardized like every other covariate (affine map over all hours)",
    "standardization": "per country and series over the estimation window, population sd (ddof=0)",
    "interpolation": "linear, for clock-change gaps and daily-price gaps",
}


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class HourlyTable:
    country: str
    timestamps: list[datetime]
    columns: dict[str, np.ndarray]
    H: int = 24

    @property
    def T(self) -> int:
        return len(self.timestamps)

    @property
    def dates(self) -> list[date]:
        """Calendar days with a complete set of H rows."""
        return [self.timestamps[i].date() for i in range(0, self.T - self.H + 1, self.H)]


@dataclass
class DailyTable:
    dates: list[date]
    columns: dict[str, np.ndarray]


def _slot_width(H: int) -> int:
    if MINUTES_PER_DAY % H:
        raise DataError(f"H={H} does not divide a day into whole minutes")
    return MINUTES_PER_DAY // H


def _parse_float(text: str, path, lineno: int) -> float:
    if text.strip() == "":
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{path}:{lineno}: cannot parse number {text!r}") from None


def _fill_gaps(values: np.ndarray, what: str) -> np.ndarray:
    """Linearly interpolate interior NaNs; edge NaNs have no anchor."""
    missing = np.isnan(values)
    if not missing.any():
        return values
    if missing[0] or missing[-1]:
        raise DataError(f"{what}: missing value at the start/end of the range, cannot interpolate")
    idx = np.arange(len(values))
    out = values.copy()
    out[missing] = np.interp(idx[missing], idx[~missing], values[~missing])
    return out


def ingest_hourly(path, country: str, H: int = 24) -> HourlyTable:
    """Read one country's hourly CSV and repair clock changes.

    A day with H+1 rows loses its repeated hour; a day with H-1 rows gets the
    missing hour linearly interpolated from its neighbours.
    """
    path = Path(path)
    width = _slot_width(H)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header[:2] != ["timestamp", "price"]:
            raise DataError(f"{path}: header must start with 'timestamp,price', got {header[:2]}")
        names = header[1:]
        rows: list[tuple[datetime, list[float]]] = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                ts = datetime.fromisoformat(rec[0].strip().replace("Z", "+00:00"))
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad timestamp {rec[0]!r}") from None
            rows.append((ts.replace(tzinfo=None), [_parse_float(f, path, lineno) for f in rec[1:]]))
    if not rows:
        raise DataError(f"{path}: no data rows")

    by_day: dict[date, list] = {}
    for ts, vals in rows:
        by_day.setdefault(ts.date(), []).append((ts, vals))
    days = list(by_day)
    if days != sorted(days):
        raise DataError(f"{path}: timestamps are not in increasing order")

    stamps: list[datetime] = []
    values: list[list[float]] = []
    nan_row = [np.nan] * len(names)
    for i, day in enumerate(days):
        recs = by_day[day]
        slots = [(ts.hour * 60 + ts.minute) // width for ts, _ in recs]
        n = len(recs)
        if n == H + 1:
            dup = [s for s, c in Counter(slots).items() if c > 1]
            if len(dup) != 1:
                raise DataError(f"{path}: day {day} has {n} rows but no single repeated hour")
            second = [k for k, s in enumerate(slots) if s == dup[0]][1]
            del recs[second], slots[second]
            log.debug("%s: dropped repeated hour %d on %s", country, dup[0], day)
        elif n == H - 1 and H > 1:
            gap = sorted(set(range(H)) - set(slots))
            if len(gap) != 1:
                raise DataError(f"{path}: day {day} has {n} rows with inconsistent hours")
            start = datetime.combine(day, datetime.min.time())
            recs.insert(gap[0], (start + timedelta(minutes=gap[0] * width), nan_row))
            slots.insert(gap[0], gap[0])
            log.debug("%s: interpolating missing hour %d on %s", country, gap[0], day)
        elif n != H and not (i == len(days) - 1 and n < H):
            raise DataError(f"{path}: day {day} has {n} rows, expected {H - 1}, {H} or {H + 1}")
        if slots != list(range(len(slots))):
            raise DataError(f"{path}: day {day} hours are not consecutive")
        for ts, vals in recs:
            stamps.append(ts)
            values.append(vals)

    arr = np.asarray(values, dtype=float)
    columns = {name: _fill_gaps(arr[:, k], f"{path}:{name}") for k, name in enumerate(names)}
    return HourlyTable(country=country, timestamps=stamps, columns=columns, H=H)


def ingest_daily(path) -> DailyTable:
    """Read the daily CSV, filling weekend/holiday gaps by linear interpolation."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header[:1] != ["date"]:
            raise DataError(f"{path}: header must start with 'date'")
        names = header[1:]
        observed: dict[date, list[float]] = {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                day = date.fromisoformat(rec[0].strip()[:10])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad date {rec[0]!r}") from None
            if day in observed:
                raise DataError(f"{path}:{lineno}: duplicate date {day}")
            observed[day] = [_parse_float(f, path, lineno) for f in rec[1:]]
    if not observed:
        raise DataError(f"{path}: no data rows")
    first, last = min(observed), max(observed)
    dates = [first + timedelta(days=k) for k in range((last - first).days + 1)]
    arr = np.array([observed.get(d, [np.nan] * len(names)) for d in dates], dtype=float)
    columns = {name: _fill_gaps(arr[:, k], f"{path}:{name}") for k, name in enumerate(names)}
    return DailyTable(dates=dates, columns=columns)


@dataclass
class PanelDataset:
    """Estimation-ready panel.

    ``y`` has shape (G, T) in levels; ``x_high`` (G, T, n_high) and ``x_low``
    (G, T~, n_low) hold standardized covariates, where ``x_low[g, d]`` is the
    value known on day ``d`` (already shifted). ``scaling[(country, name)]`` is
    the (mean, sd) used for standardization.
    """

    spec: ModelSpec
    countries: list[str]
    dates: list[date]
    y: np.ndarray
    x_high: np.ndarray
    x_low: np.ndarray
    scaling: dict[tuple[str, str], tuple[float, float]] = field(default_factory=dict)
    notes: dict = field(default_factory=lambda: dict(PREPROCESSING_NOTES))

    def __post_init__(self):
        G, H = len(self.countries), self.spec.H
        D = len(self.dates)
        if self.y.shape != (G, D * H):
            raise DataError(f"y has shape {self.y.shape}, expected {(G, D * H)}")
        if self.x_high.shape != (G, D * H, self.spec.n_high):
            raise DataError("x_high shape inconsistent with spec")
        if self.x_low.shape != (G, D, self.spec.n_low):
            raise DataError("x_low shape inconsistent with spec")
        if G != self.spec.n_countries:
            raise DataError(f"{G} countries in data but spec has n_countries={self.spec.n_countries}")

    @property
    def T(self) -> int:
        return self.y.shape[1]

    @property
    def T_tilde(self) -> int:
        return self.T // self.spec.H

    @property
    def presample_days(self) -> int:
        return self.spec.presample_days

    @property
    def estimation_days(self) -> int:
        return self.T_tilde - self.presample_days

    @property
    def n_obs(self) -> int:
        return self.spec.G * self.estimation_days * self.spec.H

    def covariate_column(self, g: int, name: str) -> np.ndarray:
        """Hourly view of covariate ``name`` for country ``g`` (daily values repeated H times)."""
        names = self.spec.covariate_names
        j = names.index(name)
        if j < self.spec.n_high:
            return self.x_high[g, :, j]
        return np.repeat(self.x_low[g, :, j - self.spec.n_high], self.spec.H)

    def equals(self, other: "PanelDataset") -> bool:
        return (
            self.spec == other.spec
            and self.countries == other.countries
            and self.dates == other.dates
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.x_high, other.x_high)
            and np.array_equal(self.x_low, other.x_low)
            and self.scaling == other.scaling
        )


def _standardize(values: np.ndarray, what: str) -> tuple[np.ndarray, float, float]:
    mean = float(values.mean())
    sd = float(values.std())
    if not sd > 0 or sd < 1e-12 * max(1.0, abs(mean)):
        raise DataError(f"{what}: zero variance, cannot standardize")
    return (values - mean) / sd, mean, sd


def _day_range(start: date, end: date) -> list[date]:
    return [start + timedelta(days=k) for k in range((end - start).days + 1)]


def _as_date(d) -> date:
    if isinstance(d, datetime):
        return d.date()
    if isinstance(d, date):
        return d
    return date.fromisoformat(str(d))


def align_and_preprocess(hourly, daily: DailyTable | None, spec: ModelSpec, date_filter=None) -> PanelDataset:
    """Align country tables on a shared calendar and apply the preprocessing rules.

    Prices stay in levels; every covariate is standardized per country over the
    window; daily covariates on day t carry the day t-1 settlement. The first
    ``spec.presample_days`` days only feed lags.
    """
    tables = list(hourly.values()) if isinstance(hourly, dict) else list(hourly)
    if len(tables) != spec.n_countries:
        raise DataError(f"got {len(tables)} country tables, spec expects {spec.n_countries}")
    H = spec.H
    high = [c.name for c in spec.covariates if c.freq == "high"]
    low = [c.name for c in spec.covariates if c.freq == "low"]

    if date_filter is not None:
        start, end = (_as_date(d) for d in date_filter)
        if end < start:
            raise DataError("date filter end precedes start")
        window = _day_range(start, end)
    else:
        window = None

    y_rows, xh_rows, xl_rows = [], [], []
    scaling: dict[tuple[str, str], tuple[float, float]] = {}
    for tab in tables:
        if tab.H != H:
            raise DataError(f"{tab.country}: table has H={tab.H}, spec has H={H}")
        days = tab.dates
        if window is None:
            window = days
            if window != _day_range(window[0], window[-1]):
                raise DataError(f"{tab.country}: calendar has missing days")
        pos = {d: k for k, d in enumerate(days)}
        if window[0] not in pos or window[-1] not in pos:
            raise DataError(f"{tab.country}: does not cover {window[0]}..{window[-1]}")
        k0 = pos[window[0]]
        if days[k0 : k0 + len(window)] != window:
            raise DataError(f"{tab.country}: country length mismatch over {window[0]}..{window[-1]}")
        rows = slice(k0 * H, (k0 + len(window)) * H)
        if "price" not in tab.columns:
            raise DataError(f"{tab.country}: no price column")
        y_rows.append(np.asarray(tab.columns["price"][rows], dtype=float))
        cols = []
        for name in high:
            if name not in tab.columns:
                raise DataError(f"{tab.country}: missing covariate column {name!r}")
            z, m, s = _standardize(tab.columns[name][rows], f"{tab.country}:{name}")
            scaling[(tab.country, name)] = (m, s)
            cols.append(z)
        xh_rows.append(np.stack(cols, axis=-1) if cols else np.empty((len(window) * H, 0)))

    D = len(window)
    if D <= spec.presample_days:
        raise DataError(
            f"insufficient presample history: {D} days, need more than {spec.presample_days}"
        )

    if low:
        if daily is None:
            raise DataError("spec has low-frequency covariates but no daily table was given")
        dpos = {d: k for k, d in enumerate(daily.dates)}
        lead = window[0] - timedelta(days=1)
        if lead not in dpos or window[-1] not in dpos:
            raise DataError(f"daily table must cover {lead}..{window[-1]} (window plus one leading day)")
        k0 = dpos[lead]
        shifted = {}
        for name in low:
            if name not in daily.columns:
                raise DataError(f"daily table missing column {name!r}")
            shifted[name] = np.asarray(daily.columns[name][k0 : k0 + D], dtype=float)
        for tab in tables:
            cols = []
            for name in low:
                z, m, s = _standardize(shifted[name], f"{tab.country}:{name}")
                scaling[(tab.country, name)] = (m, s)
                cols.append(z)
            xl_rows.append(np.stack(cols, axis=-1))
    else:
        xl_rows = [np.empty((D, 0)) for _ in tables]

    return PanelDataset(
        spec=spec,
        countries=[t.country for t in tables],
        dates=list(window),
        y=np.stack(y_rows),
        x_high=np.stack(xh_rows),
        x_low=np.stack(xl_rows),
        scaling=scaling,
    )


def write_hourly_csv(table: HourlyTable, path) -> None:
    names = list(table.columns)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", *names])
        cols = [table.columns[n] for n in names]
        for i, ts in enumerate(table.timestamps):
            w.writerow([ts.isoformat(timespec="minutes"), *(repr(float(c[i])) for c in cols)])


def write_daily_csv(table: DailyTable, path) -> None:
    names = list(table.columns)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *names])
        cols = [table.columns[n] for n in names]
        for i, d in enumerate(table.dates):
            w.writerow([d.isoformat(), *(repr(float(c[i])) for c in cols)])


def export_panel(data: PanelDataset, directory) -> Path:
    """Write one canonical CSV per country plus ``manifest.json``.

    Floats are written with ``repr`` so re-reading is bit-exact.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    spec, H = data.spec, data.spec.H
    names = spec.covariate_names
    for g, country in enumerate(data.countries):
        cols = [data.covariate_column(g, n) for n in names]
        with (directory / f"panel_{country}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "hour", "y", *names])
            for i in range(data.T):
                w.writerow(
                    [
                        data.dates[i // H].isoformat(),
                        i % H,
                        repr(float(data.y[g, i])),
                        *(repr(float(c[i])) for c in cols),
                    ]
                )
    manifest = {
        "spec": spec.to_dict(),
        "spec_hash": config_hash(spec.to_dict()),
        "countries": data.countries,
        "date_range": [data.dates[0].isoformat(), data.dates[-1].isoformat()],
        "presample_days": data.presample_days,
        "scaling": [
            {"country": c, "series": n, "mean": m, "sd": s} for (c, n), (m, s) in data.scaling.items()
        ],
        "notes": data.notes,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return path


def read_panel(directory) -> PanelDataset:
    """Inverse of :func:`export_panel`."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest.json in {directory}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    spec = ModelSpec.from_dict(manifest["spec"])
    H, nh = spec.H, spec.n_high
    names = spec.covariate_names
    ys, xhs, xls = [], [], []
    dates = None
    for country in manifest["countries"]:
        with (directory / f"panel_{country}.csv").open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["date", "hour", "y", *names]:
                raise DataError(f"panel_{country}.csv: unexpected header {header}")
            recs = list(reader)
        arr = np.array([[float(v) for v in r[2:]] for r in recs], dtype=float).reshape(len(recs), -1)
        day_list = [date.fromisoformat(r[0]) for r in recs[::H]]
        if dates is None:
            dates = day_list
        elif day_list != dates:
            raise DataError("country length mismatch in canonical export")
        ys.append(arr[:, 0])
        xhs.append(arr[:, 1 : 1 + nh])
        xls.append(arr[::H, 1 + nh :])
    scaling = {(s["country"], s["series"]): (s["mean"], s["sd"]) for s in manifest["scaling"]}
    return PanelDataset(
        spec=spec,
        countries=list(manifest["countries"]),
        dates=dates,
        y=np.stack(ys),
        x_high=np.stack(xhs),
        x_low=np.stack(xls),
        scaling=scaling,
        notes=manifest.get("notes", {}),
    )
