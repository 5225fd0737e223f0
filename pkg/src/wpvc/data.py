"""Price ingestion, log returns and synthetic data generators."""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .paircopula import PairCopula
from .vine import build_candidate_vine, inverse_levels, inverse_rosenblatt


class IngestionError(ValueError):
    """Malformed input file; the message names the row and column."""


class DataSizeError(ValueError):
    pass


@dataclass(frozen=True)
class PricePanel:
    """Close prices, one column per instrument; ``nan`` marks a missing cell."""

    dates: tuple
    instruments: tuple
    prices: np.ndarray
    source_hash: str = ""

    def __post_init__(self):
        p = np.asarray(self.prices, dtype=float)
        object.__setattr__(self, "prices", p)
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "instruments", tuple(self.instruments))
        if p.shape != (len(self.dates), len(self.instruments)):
            raise ValueError("price matrix does not match dates x instruments")
        for a, b in zip(self.dates, self.dates[1:]):
            if not a < b:
                raise IngestionError(f"dates not strictly increasing at {b}")
        bad = ~np.isnan(p) & ~(p > 0)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise IngestionError(f"non-positive price on {self.dates[r]} for {self.instruments[c]}")

    @property
    def missing(self) -> int:
        return int(np.isnan(self.prices).sum())


@dataclass(frozen=True)
class ReturnsPanel:
    dates: tuple
    instruments: tuple
    returns: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        r = np.asarray(self.returns, dtype=float)
        object.__setattr__(self, "returns", r)
        if r.shape != (len(self.dates), len(self.instruments)):
            raise ValueError("returns matrix does not match dates x instruments")
        if np.isnan(r).any():
            raise ValueError("returns panel has missing cells")

    def __len__(self):
        return len(self.dates)

    def between(self, start=None, end=None) -> "ReturnsPanel":
        """Rows with ``start <= date <= end`` (ISO strings or dates; ``None`` is open)."""
        lo = _as_date(start) if start is not None else None
        hi = _as_date(end) if end is not None else None
        keep = [i for i, d in enumerate(self.dates) if (lo is None or d >= lo) and (hi is None or d <= hi)]
        return replace(self, dates=tuple(self.dates[i] for i in keep), returns=self.returns[keep])


def _as_date(x) -> _dt.date:
    if isinstance(x, _dt.date):
        return x
    return _dt.date.fromisoformat(str(x))


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_prices(path, format="csv") -> PricePanel:
    """Read ``date,<name1>,<name2>,...`` with ISO dates; empty cells are missing."""
    if format != "csv":
        raise IngestionError(f"unsupported price format {format!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError("empty price file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0].lower() != "date" or len(header) < 2:
        raise IngestionError("header must be 'date,<instrument>,...'")
    names = header[1:]
    dates, values, seen = [], [], set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise IngestionError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            d = _dt.date.fromisoformat(row[0].strip())
        except ValueError:
            raise IngestionError(f"row {lineno}, column date: cannot parse {row[0]!r}") from None
        if d in seen:
            raise IngestionError(f"row {lineno}: duplicate date {d.isoformat()}")
        seen.add(d)
        vals = []
        for name, cell in zip(names, row[1:]):
            cell = cell.strip()
            if not cell:
                vals.append(math.nan)
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise IngestionError(f"row {lineno}, column {name}: cannot parse {cell!r}") from None
        dates.append(d)
        values.append(vals)
    return PricePanel(tuple(dates), tuple(names), np.array(values, dtype=float).reshape(len(dates), len(names)),
                      _file_hash(path))


def save_prices(panel: PricePanel, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *panel.instruments])
        for d, row in zip(panel.dates, panel.prices):
            w.writerow([d.isoformat(), *("" if np.isnan(x) else repr(float(x)) for x in row)])


def to_log_returns(panel: PricePanel, alignment="intersection", max_fill=5) -> ReturnsPanel:
    """``r_t = ln(P_t / P_{t-1})`` after aligning missing cells.

    ``intersection`` keeps dates where every instrument has a price;
    ``forward-fill`` carries the last price forward for at most ``max_fill``
    consecutive dates, then drops rows that are still incomplete.
    """
    P = panel.prices.copy()
    if alignment == "forward-fill":
        for j in range(P.shape[1]):
            run = 0
            for i in range(1, P.shape[0]):
                if np.isnan(P[i, j]):
                    run += 1
                    if run <= max_fill:
                        P[i, j] = P[i - 1, j]
                else:
                    run = 0
    elif alignment != "intersection":
        raise ValueError(f"unknown alignment policy {alignment!r}")
    keep = ~np.isnan(P).any(axis=1)
    P = P[keep]
    dates = [d for d, k in zip(panel.dates, keep) if k]
    if len(dates) < 2:
        raise DataSizeError("fewer than two aligned dates")
    R = np.diff(np.log(P), axis=0)
    prov = {"source_hash": panel.source_hash, "alignment": alignment}
    return ReturnsPanel(tuple(dates[1:]), panel.instruments, R, prov)


def save_returns(rp: ReturnsPanel, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *rp.instruments])
        for d, row in zip(rp.dates, rp.returns):
            w.writerow([d.isoformat(), *(repr(float(x)) for x in row)])


def load_returns(path) -> ReturnsPanel:
    """Read a returns CSV (same layout as prices; values may be negative)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header = rows[0]
    if header[0].lower() != "date":
        raise IngestionError("header must start with 'date'")
    dates, vals = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            dates.append(_dt.date.fromisoformat(row[0]))
            vals.append([float(x) for x in row[1:]])
        except ValueError as exc:
            raise IngestionError(f"row {lineno}: {exc}") from None
    for a, b in zip(dates, dates[1:]):
        if not a < b:
            raise IngestionError(f"dates not strictly increasing at {b}")
    return ReturnsPanel(tuple(dates), tuple(header[1:]), np.array(vals, dtype=float).reshape(len(dates), -1),
                        {"source_hash": _file_hash(path)})


# -- synthetic data -------------------------------------------------------------

def business_days(start, n):
    d = _as_date(start)
    out = []
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += _dt.timedelta(days=1)
    return tuple(out)


def clayton_vine(dim, theta=2.0, decay=0.5, rho=0.5):
    """A regular vine with Clayton edges; tree ``j`` uses ``theta * decay**(j-1)``."""
    corr = np.full((dim, dim), rho)
    np.fill_diagonal(corr, 1.0)
    v = build_candidate_vine(corr, inverse_levels(dim)[0])
    return v.replace_edges(
        lambda e: replace(e, copula=PairCopula("clayton", (theta * decay ** len(e.conditioning),)))
    )


def simulate_ar1_vine(n_steps, dim=2, phi=0.5, scale=0.01, vine=None, seed=0):
    """AR(1) returns ``r_t = phi r_{t-1} + scale * e_t`` with vine-coupled normal innovations.

    ``phi`` may be a scalar or one coefficient per dimension.
    """
    rng = np.random.default_rng(seed)
    vine = clayton_vine(dim) if vine is None else vine
    U = inverse_rosenblatt(vine, rng.random((n_steps, dim)))
    E = special.ndtri(np.clip(U, 1e-12, 1 - 1e-12))
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (dim,))
    R = np.zeros((n_steps, dim))
    R[0] = scale * E[0] / np.sqrt(1 - phi**2)
    for t in range(1, n_steps):
        R[t] = phi * R[t - 1] + scale * E[t]
    return R


def synthetic_prices(n_steps=400, names=("AAA", "BBB"), start="2016-01-04", seed=0, **kw) -> PricePanel:
    R = simulate_ar1_vine(n_steps - 1, len(names), seed=seed, **kw)
    P = 100.0 * np.exp(np.vstack([np.zeros(len(names)), np.cumsum(R, axis=0)]))
    return PricePanel(business_days(start, n_steps), tuple(names), np.round(P, 6))


def bundled_prices_path():
    """Path to the bundled 2-instrument synthetic price file."""
    from importlib import resources

    return str(resources.files("wpvc").joinpath("datasets/synthetic_2.csv"))
