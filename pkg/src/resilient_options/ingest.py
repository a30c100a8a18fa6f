"""Parsing, cleaning and date-splitting of daily option-chain archives."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

DEFAULT_SCHEMA = {
    "symbol": "Symbol",
    "date": "Date",
    "expiry": "Expiry",
    "option_type": "Option Type",
    "strike": "Strike Price",
    "open": "Open",
    "close": "Close",
    "underlying_value": "Underlying Value",
}
DEFAULT_DATE_FORMATS = ("%d-%b-%Y", "%Y-%m-%d")
DEFAULT_SPLIT = (dt.date(2019, 8, 31), dt.date(2019, 12, 31), dt.date(2020, 4, 30))


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class RawOptionRow:
    """One archive row. Numeric cells that fail to parse (e.g. ``"-"``) are None."""

    symbol: str
    date: dt.date
    expiry: dt.date
    option_type: str
    strike: float | None
    open: float | None
    close: float | None
    underlying_value: float | None

    @property
    def contract(self) -> tuple:
        return (self.symbol, self.expiry, self.strike)


@dataclass(frozen=True)
class CleanOptionQuote:
    symbol: str
    date: dt.date
    expiry: dt.date
    strike: float
    spot: float
    option_close: float
    prev_option_close: float
    prev_spot: float

    @property
    def ttm_days(self) -> int:
        return (self.expiry - self.date).days

    @property
    def moneyness(self) -> float:
        return self.strike / self.spot


QUOTE_COLUMNS = [f.name for f in fields(CleanOptionQuote)]


@dataclass
class FilterConfig:
    band: float = 0.04
    # "strike_over_spot": |K/S - 1| <= band; "spot_over_strike": |1 - S/K| <= band
    orientation: str = "strike_over_spot"
    min_ttm: int = 3
    max_ttm: int = 45
    option_type: str = "CE"

    def in_band(self, strike: float, spot: float) -> bool:
        if self.orientation == "strike_over_spot":
            ratio = strike / spot
        elif self.orientation == "spot_over_strike":
            ratio = spot / strike
        else:
            raise ValueError(f"unknown moneyness orientation {self.orientation!r}")
        # small slack so band edges such as 0.96 survive float rounding
        return abs(ratio - 1.0) <= self.band + 1e-12


@dataclass
class DropReport:
    counts: Counter = field(default_factory=Counter)
    n_in: int = 0
    n_out: int = 0

    def to_text(self) -> str:
        lines = [f"rows_in\t{self.n_in}"]
        for reason in sorted(self.counts):
            lines.append(f"drop.{reason}\t{self.counts[reason]}")
        lines.append(f"rows_out\t{self.n_out}")
        return "\n".join(lines) + "\n"


@dataclass
class DatasetSplit:
    train: list
    typical_test: list
    atypical_test: list
    split_dates: tuple

    def __iter__(self):
        yield from (("train", self.train), ("typical", self.typical_test),
                    ("atypical", self.atypical_test))


def _parse_number(cell: str) -> float | None:
    cell = (cell or "").strip().replace(",", "")
    if cell in ("", "-"):
        return None
    try:
        return float(cell)
    except ValueError:
        return None


def parse_date(cell: str, formats: Sequence[str] = DEFAULT_DATE_FORMATS) -> dt.date:
    cell = cell.strip()
    for fmt in formats:
        try:
            return dt.datetime.strptime(cell, fmt).date()
        except ValueError:
            continue
    raise ValueError(f"unparseable date {cell!r}")


def parse_chain_csv(path, schema: dict | None = None,
                    date_formats: Sequence[str] = DEFAULT_DATE_FORMATS) -> list[RawOptionRow]:
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: missing header row") from None
        missing = [name for name in schema.values() if name not in header]
        if missing:
            raise SchemaError(f"{path}: missing required columns {missing}")
        idx = {key: header.index(name) for key, name in schema.items()}
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                rows.append(RawOptionRow(
                    symbol=rec[idx["symbol"]].strip(),
                    date=parse_date(rec[idx["date"]], date_formats),
                    expiry=parse_date(rec[idx["expiry"]], date_formats),
                    option_type=rec[idx["option_type"]].strip().upper(),
                    strike=_parse_number(rec[idx["strike"]]),
                    open=_parse_number(rec[idx["open"]]),
                    close=_parse_number(rec[idx["close"]]),
                    underlying_value=_parse_number(rec[idx["underlying_value"]]),
                ))
            except (IndexError, ValueError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return rows


def _usable(row: RawOptionRow) -> str | None:
    """Reason a row cannot be used even as a previous-day reference, or None."""
    if row.strike is None or row.underlying_value is None:
        return "blank_strike_or_underlying"
    if row.open is None or row.close is None:
        return "blank_open_or_close"
    if row.open == 0 or row.close == 0:
        return "zero_open_or_close"
    if row.underlying_value <= 0 or row.strike <= 0 or row.close < 0:
        return "nonpositive_value"
    return None


def _refilter(quotes: Iterable[CleanOptionQuote], cfg: FilterConfig, report: DropReport):
    out = []
    for q in quotes:
        if not cfg.in_band(q.strike, q.spot):
            report.counts["moneyness"] += 1
        elif not cfg.min_ttm <= q.ttm_days <= cfg.max_ttm:
            report.counts["ttm"] += 1
        elif min(q.spot, q.option_close, q.prev_option_close, q.prev_spot) <= 0:
            report.counts["nonpositive_value"] += 1
        else:
            out.append(q)
    return out


def clean_and_filter(rows: Sequence, cfg: FilterConfig | None = None,
                     report: DropReport | None = None) -> list[CleanOptionQuote]:
    """Drop unusable rows, apply moneyness/TTM filters, attach previous-day closes.

    "Previous day" is the previous trading date of the symbol, where trading
    dates are the dates present in ``rows``. A contract without a usable row on
    that date is dropped. Already-clean quotes are re-filtered only, which makes
    the function idempotent.
    """
    cfg = cfg or FilterConfig()
    report = report if report is not None else DropReport()
    report.n_in = len(rows)
    if rows and all(isinstance(r, CleanOptionQuote) for r in rows):
        out = _refilter(rows, cfg, report)
        report.n_out = len(out)
        return out

    dedup: dict[tuple, RawOptionRow] = {}
    for row in rows:
        key = (row.symbol, row.date, row.expiry, row.option_type, row.strike)
        if key in dedup:
            report.counts["duplicate"] += 1
        dedup[key] = row
    if report.counts["duplicate"]:
        log.info("dropped %d duplicate rows (kept last)", report.counts["duplicate"])

    trading_dates: dict[str, set[dt.date]] = {}
    for row in dedup.values():
        trading_dates.setdefault(row.symbol, set()).add(row.date)
    prev_date = {}
    for sym, dates in trading_dates.items():
        ordered = sorted(dates)
        prev_date.update({(sym, d): p for p, d in zip(ordered, ordered[1:])})

    usable: dict[tuple, RawOptionRow] = {}
    candidates = []
    for row in dedup.values():
        if row.option_type != cfg.option_type:
            report.counts["option_type"] += 1
            continue
        reason = _usable(row)
        if reason:
            report.counts[reason] += 1
            continue
        if row.date > row.expiry:
            report.counts["past_expiry"] += 1
            continue
        usable[(row.symbol, row.date, row.expiry, row.strike)] = row
        candidates.append(row)

    staged = []
    for row in sorted(candidates, key=lambda r: (r.symbol, r.date, r.expiry, r.strike)):
        if not cfg.in_band(row.strike, row.underlying_value):
            report.counts["moneyness"] += 1
            continue
        ttm = (row.expiry - row.date).days
        if not cfg.min_ttm <= ttm <= cfg.max_ttm:
            report.counts["ttm"] += 1
            continue
        pd_ = prev_date.get((row.symbol, row.date))
        prev = usable.get((row.symbol, pd_, row.expiry, row.strike)) if pd_ else None
        if prev is None:
            report.counts["no_prev_close"] += 1
            continue
        staged.append(CleanOptionQuote(
            symbol=row.symbol, date=row.date, expiry=row.expiry, strike=row.strike,
            spot=row.underlying_value, option_close=row.close,
            prev_option_close=prev.close, prev_spot=prev.underlying_value,
        ))
    report.n_out = len(staged)
    return staged


def underlying_closes(rows: Iterable[RawOptionRow]) -> dict[str, dict[dt.date, float]]:
    """Per-symbol daily underlying close taken from the chain's underlying column.

    When a date carries several values the most frequent one wins (ties: last
    seen).
    """
    votes: dict[tuple, Counter] = {}
    for row in rows:
        if row.underlying_value is not None and row.underlying_value > 0:
            votes.setdefault((row.symbol, row.date), Counter())[row.underlying_value] += 1
    out: dict[str, dict[dt.date, float]] = {}
    for (sym, day), counter in sorted(votes.items()):
        best = max(counter.values())
        value = [v for v, c in counter.items() if c == best][-1]
        out.setdefault(sym, {})[day] = value
    return out


def split_by_date(quotes: Sequence[CleanOptionQuote],
                  boundaries: tuple = DEFAULT_SPLIT) -> DatasetSplit:
    """Partition into train (<= b0), typical (b0, b1], atypical (b1, b2].

    Quotes after the last boundary are discarded.
    """
    b0, b1, b2 = boundaries
    if not b0 < b1 < b2:
        raise ValueError("split boundaries must be strictly increasing")
    train, typical, atypical = [], [], []
    beyond = 0
    for q in quotes:
        if q.date <= b0:
            train.append(q)
        elif q.date <= b1:
            typical.append(q)
        elif q.date <= b2:
            atypical.append(q)
        else:
            beyond += 1
    if beyond:
        log.warning("%d quotes after %s discarded", beyond, b2)
    split = DatasetSplit(train, typical, atypical, (b0, b1, b2))
    for name, part in split:
        if not part:
            log.warning("split %r is empty", name)
    return split


def write_quotes_csv(quotes: Sequence[CleanOptionQuote], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(QUOTE_COLUMNS)
        for q in quotes:
            w.writerow([q.symbol, q.date.isoformat(), q.expiry.isoformat(), repr(q.strike),
                        repr(q.spot), repr(q.option_close), repr(q.prev_option_close),
                        repr(q.prev_spot)])


def read_quotes_csv(path) -> list[CleanOptionQuote]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != QUOTE_COLUMNS:
            raise SchemaError(f"{path}: unexpected quote columns {reader.fieldnames}")
        return [CleanOptionQuote(
            symbol=r["symbol"], date=dt.date.fromisoformat(r["date"]),
            expiry=dt.date.fromisoformat(r["expiry"]), strike=float(r["strike"]),
            spot=float(r["spot"]), option_close=float(r["option_close"]),
            prev_option_close=float(r["prev_option_close"]), prev_spot=float(r["prev_spot"]),
        ) for r in reader]
