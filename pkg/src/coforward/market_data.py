"""Futures quote panels, return panels and initial forward curves.

Input files are UTF-8 CSV with a ``date,delivery_month,price`` header, one
file per energy. Delivery is taken to happen on the first calendar day of
the delivery month.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import (
    DuplicateKeyError,
    FormatError,
    InsufficientDataError,
    NoDataError,
    NotFoundError,
    ParameterError,
)
from .model import check_energy
from .numerics import DAYS_PER_YEAR

REQUIRED_COLUMNS = ("date", "delivery_month", "price")


def parse_month(text: str) -> np.datetime64:
    text = text.strip()
    y, m = text.split("-")
    if len(y) != 4 or len(m) != 2:
        raise ValueError(f"delivery month {text!r} is not YYYY-MM")
    return np.datetime64(f"{int(y):04d}-{int(m):02d}", "M")


def delivery_date(month):
    return np.asarray(month, dtype="datetime64[M]").astype("datetime64[D]")


def months_between(quote_dates, months) -> np.ndarray:
    """Whole months from the quote month to the delivery month (>= 1 for live contracts)."""
    qm = np.asarray(quote_dates).astype("datetime64[M]").astype(int)
    return np.asarray(months).astype("datetime64[M]").astype(int) - qm


class Rejection(NamedTuple):
    row: int
    reason: str


@dataclass(frozen=True)
class QuotePanel:
    energy: str
    quote_dates: np.ndarray  # datetime64[D]
    delivery_months: np.ndarray  # datetime64[M]
    prices: np.ndarray
    unit: str = ""
    rejections: tuple = ()

    def __post_init__(self):
        check_energy(self.energy)
        d = np.asarray(self.quote_dates, dtype="datetime64[D]")
        m = np.asarray(self.delivery_months, dtype="datetime64[M]")
        p = np.asarray(self.prices, dtype=float)
        if not (d.shape == m.shape == p.shape) or d.ndim != 1:
            raise ParameterError("quote arrays must be 1-d and of equal length")
        if d.size == 0:
            raise NoDataError(f"empty quote panel for energy {self.energy!r}")
        if np.any(~np.isfinite(p)) or np.any(p <= 0):
            raise ParameterError("prices must be finite and positive")
        if np.any(d >= delivery_date(m)):
            raise ParameterError("quote dates must precede the delivery month")
        order = np.lexsort((m, d))
        d, m, p = d[order], m[order], p[order]
        same = (d[1:] == d[:-1]) & (m[1:] == m[:-1])
        if np.any(same):
            k = int(np.argmax(same))
            raise DuplicateKeyError(f"duplicate quote for ({d[k]}, {m[k]})")
        for name, arr in (("quote_dates", d), ("delivery_months", m), ("prices", p)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.prices.size

    @property
    def dates(self) -> np.ndarray:
        return np.unique(self.quote_dates)

    @property
    def contracts(self) -> np.ndarray:
        return np.unique(self.delivery_months)


def load_quotes(path, energy: str, unit: str = "", *, delimiter: str = ",") -> QuotePanel:
    """Read and validate a quote CSV.

    Rows with a non-positive price, an unparseable field or a quote date on or
    after delivery are skipped and listed in ``panel.rejections`` (row numbers
    count the header as line 1). A repeated (date, delivery month) pair is an
    error.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        try:
            reader = csv.reader(fh, delimiter=delimiter)
            header = next(reader, None)
            if header is None:
                raise NoDataError(f"{path}: empty file")
            cols = [h.strip().lower() for h in header]
            missing = [c for c in REQUIRED_COLUMNS if c not in cols]
            if missing:
                raise FormatError(f"{path}: missing column(s) {missing}; header was {header}")
            idx = [cols.index(c) for c in REQUIRED_COLUMNS]
            rows = list(reader)
        except (csv.Error, UnicodeDecodeError) as exc:
            raise FormatError(f"{path}: cannot parse CSV ({exc})") from exc

    dates, months, prices, rejected = [], [], [], []
    seen = {}
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            d = np.datetime64(dt.date.fromisoformat(row[idx[0]].strip()), "D")
            m = parse_month(row[idx[1]])
            p = float(row[idx[2]])
        except (IndexError, ValueError) as exc:
            rejected.append(Rejection(lineno, f"unparseable row: {exc}"))
            continue
        if not np.isfinite(p) or p <= 0:
            rejected.append(Rejection(lineno, f"non-positive price {row[idx[2]].strip()}"))
            continue
        if d >= delivery_date(m):
            rejected.append(Rejection(lineno, f"quote date {d} not before delivery month {m}"))
            continue
        key = (d, m)
        if key in seen:
            raise DuplicateKeyError(
                f"{path}: duplicate quote for (date={d}, delivery_month={m}) at rows {seen[key]} and {lineno}"
            )
        seen[key] = lineno
        dates.append(d)
        months.append(m)
        prices.append(p)
    if not prices:
        raise NoDataError(f"{path}: no valid quotes")
    return QuotePanel(
        energy,
        np.array(dates, dtype="datetime64[D]"),
        np.array(months, dtype="datetime64[M]"),
        np.array(prices),
        unit=unit,
        rejections=tuple(rejected),
    )


def write_quotes(panel: QuotePanel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REQUIRED_COLUMNS)
        for d, m, p in zip(panel.quote_dates, panel.delivery_months, panel.prices):
            w.writerow([str(d), str(m), repr(float(p))])


def write_rejections(panel: QuotePanel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "reason"])
        for r in panel.rejections:
            w.writerow([r.row, r.reason])


@dataclass(frozen=True)
class ReturnPanel:
    """Simple returns between consecutive quotes of the same contract.

    Long format: one entry per (observation, contract). Observations are the
    distinct (start, end) date pairs; ``bucket`` is the months-to-delivery at
    the start date and ``tenor`` the exact time to delivery in years.
    """

    energy: str
    start: np.ndarray
    end: np.ndarray
    delivery_months: np.ndarray
    returns: np.ndarray
    bucket: np.ndarray
    tenor: np.ndarray
    obs: np.ndarray  # observation index of each entry
    obs_start: np.ndarray
    obs_end: np.ndarray
    violations: tuple = field(default=())

    @property
    def n_obs(self) -> int:
        return self.obs_start.size

    @property
    def dt(self) -> np.ndarray:
        return (self.obs_end - self.obs_start).astype(int) / DAYS_PER_YEAR

    @property
    def buckets(self) -> np.ndarray:
        return np.unique(self.bucket)

    def matrix(self, buckets=None):
        """Dense (obs x bucket) returns, NaN where a bucket is not quoted."""
        buckets = self.buckets if buckets is None else np.asarray(buckets)
        pos = {int(b): j for j, b in enumerate(buckets)}
        out = np.full((self.n_obs, buckets.size), np.nan)
        ten = np.full_like(out, np.nan)
        for o, b, r, x in zip(self.obs, self.bucket, self.returns, self.tenor):
            j = pos.get(int(b))
            if j is not None:
                out[o, j] = r
                ten[o, j] = x
        return out, ten

    def contract(self, month):
        month = np.datetime64(month, "M")
        sel = self.delivery_months == month
        return self.start[sel], self.end[sel], self.returns[sel]


def compute_returns(panel: QuotePanel, sanity_bound: float = 1.0) -> ReturnPanel:
    starts, ends, months, rets, prev_prices = [], [], [], [], []
    for month in panel.contracts:
        sel = panel.delivery_months == month
        d = panel.quote_dates[sel]
        p = panel.prices[sel]
        if d.size < 2:
            continue
        starts.append(d[:-1])
        ends.append(d[1:])
        months.append(np.full(d.size - 1, month))
        rets.append(p[1:] / p[:-1] - 1.0)
    if not rets:
        raise InsufficientDataError(f"no contract of energy {panel.energy!r} has two quotes")
    start = np.concatenate(starts)
    end = np.concatenate(ends)
    month = np.concatenate(months).astype("datetime64[M]")
    ret = np.concatenate(rets)
    order = np.lexsort((month, end, start))
    start, end, month, ret = start[order], end[order], month[order], ret[order]
    pairs = np.stack([start.astype(int), end.astype(int)], axis=1)
    uniq, obs = np.unique(pairs, axis=0, return_inverse=True)
    obs = np.asarray(obs).ravel()
    bucket = months_between(start, month)
    tenor = (delivery_date(month) - start).astype(int) / DAYS_PER_YEAR
    bad = np.flatnonzero(np.abs(ret) >= sanity_bound)
    violations = tuple(
        (str(start[i]), str(end[i]), str(month[i]), float(ret[i])) for i in bad
    )
    return ReturnPanel(
        panel.energy,
        start,
        end,
        month,
        ret,
        bucket,
        tenor,
        obs,
        uniq[:, 0].astype("datetime64[D]"),
        uniq[:, 1].astype("datetime64[D]"),
        violations,
    )


class PriceSeries(NamedTuple):
    dates: np.ndarray
    prices: np.ndarray


def fixed_maturity_series(panel: QuotePanel, delivery_month) -> PriceSeries:
    month = np.datetime64(delivery_month, "M")
    sel = panel.delivery_months == month
    if not np.any(sel):
        raise NotFoundError(f"no quotes for delivery month {month} in {panel.energy!r} panel")
    return PriceSeries(panel.quote_dates[sel], panel.prices[sel])


@dataclass(frozen=True)
class ForwardCurve:
    """Initial curve F(0, T_j); log-linear in between, flat outside."""

    energy: str
    valuation_date: np.datetime64
    maturities: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.maturities, dtype=float)
        p = np.asarray(self.prices, dtype=float)
        if t.ndim != 1 or t.shape != p.shape or t.size == 0:
            raise ParameterError("curve needs matching non-empty maturity and price arrays")
        if np.any(np.diff(t) <= 0):
            raise ParameterError("curve maturities must be strictly increasing")
        if np.any(p <= 0) or not np.all(np.isfinite(p)):
            raise ParameterError("curve prices must be positive")
        object.__setattr__(self, "maturities", t)
        object.__setattr__(self, "prices", p)

    def price(self, maturity):
        t, p = self.maturities, self.prices
        x = np.clip(np.asarray(maturity, dtype=float), t[0], t[-1])
        if t.size == 1:
            return np.broadcast_to(p[0], x.shape).copy() if x.ndim else p[0]
        j = np.clip(np.searchsorted(t, x, side="right") - 1, 0, t.size - 2)
        w = (x - t[j]) / (t[j + 1] - t[j])
        # geometric interpolation written so knot prices come back exactly
        out = np.where(w >= 1.0, p[j + 1], p[j] * (p[j + 1] / p[j]) ** w)
        return out if out.ndim else float(out)

    @classmethod
    def flat(cls, energy: str, price: float, maturities=(1.0 / 12.0,)) -> "ForwardCurve":
        m = np.asarray(maturities, dtype=float)
        return cls(energy, np.datetime64("1970-01-01"), m, np.full(m.shape, float(price)))


def initial_curve(panel: QuotePanel, valuation_date) -> ForwardCurve:
    vd = np.datetime64(valuation_date, "D")
    sel = panel.quote_dates == vd
    if not np.any(sel):
        raise NoDataError(f"no {panel.energy!r} quotes on valuation date {vd}")
    months = panel.delivery_months[sel]
    order = np.argsort(months)
    t = (delivery_date(months[order]) - vd).astype(int) / DAYS_PER_YEAR
    return ForwardCurve(panel.energy, vd, t, panel.prices[sel][order])
