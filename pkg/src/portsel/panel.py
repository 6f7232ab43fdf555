"""Firm-month characteristics panel: ingestion, cleaning, and predictor expansion.

The cleaning pipeline is: cross-sectional winsorization of each raw
characteristic, per-month standardization to mean 0 / sd 1 (sample sd,
n-1 denominator), imputation of missing cells to 0 (the cross-sectional
mean), and expansion of the predictor space with squares and pairwise
interactions of the standardized bases.  Every final predictor column is
a unit-scale long-short portfolio.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

DEFAULT_SCHEMA = {"date": "date", "id": "id", "ret_fwd": "ret_fwd"}

#: columns every panel CSV must provide (after schema mapping)
MANDATORY_COLUMNS = ("date", "id", "ret_fwd")


class PanelError(ValueError):
    """Base class for panel ingestion and validation failures."""


class PanelSchemaError(PanelError):
    """Missing or inconsistent columns / metadata."""


class PanelParseError(PanelError):
    """Malformed file content; message carries a line number when known."""


@dataclass(frozen=True)
class MonthBlock:
    """One month's slice of the panel.

    values is firms x characteristics with NaN marking missing cells;
    ret_fwd holds each firm's next-month simple return (decimal).
    """

    firm_ids: tuple
    values: np.ndarray
    ret_fwd: np.ndarray


@dataclass
class CharacteristicsPanel:
    """Raw firm-month characteristic values plus next-month returns."""

    char_names: list
    months: list
    blocks: dict
    binary: frozenset = frozenset()
    square_exclusions: frozenset = frozenset()
    interaction_exclusions: frozenset = frozenset()
    size_column: Optional[str] = None
    dropped_rows: int = 0

    def n_firms(self, month) -> int:
        return len(self.blocks[month].firm_ids)

    def char_index(self, name: str) -> int:
        try:
            return self.char_names.index(name)
        except ValueError:
            raise PanelSchemaError(f"unknown characteristic {name!r}") from None


@dataclass(frozen=True)
class PredictorSpec:
    """Defines the expanded predictor space built from base characteristics.

    Interaction pairs are canonicalized so the lexically smaller name comes
    first.  Base names must not themselves look like expansion names
    (ending in ``_sq`` or containing ``_x_``), so every expanded name
    classifies unambiguously.
    """

    base_names: tuple
    include_squares: bool = True
    include_interactions: bool = True
    square_exclusions: frozenset = frozenset()
    interaction_exclusions: frozenset = frozenset()

    def __post_init__(self):
        if not self.base_names:
            raise PanelSchemaError("PredictorSpec needs at least one base characteristic")
        if len(set(self.base_names)) != len(self.base_names):
            raise PanelSchemaError("duplicate base characteristic names")
        for name in self.base_names:
            if name.endswith("_sq") or "_x_" in name:
                raise PanelSchemaError(
                    f"base name {name!r} collides with the expansion naming scheme"
                )
        canon = frozenset(canonical_pair(a, b) for a, b in self.interaction_exclusions)
        object.__setattr__(self, "interaction_exclusions", canon)
        object.__setattr__(self, "base_names", tuple(self.base_names))

    @classmethod
    def from_panel(cls, panel: CharacteristicsPanel, include_squares: bool = True,
                   include_interactions: bool = True) -> "PredictorSpec":
        return cls(
            base_names=tuple(panel.char_names),
            include_squares=include_squares,
            include_interactions=include_interactions,
            square_exclusions=frozenset(panel.binary) | frozenset(panel.square_exclusions),
            interaction_exclusions=frozenset(panel.interaction_exclusions),
        )

    @property
    def expanded_names(self) -> list:
        return expand_predictors(self)


@dataclass(frozen=True)
class PredictorMatrix:
    """Standardized predictor matrix for one month (firms x predictors).

    Non-degenerate columns have cross-sectional mean 0 and sample sd 1;
    degenerate columns (zero variance or fewer than 2 observations) are
    all-zero and flagged, keeping predictor indexing stable across months.
    """

    month: int
    firm_ids: tuple
    values: np.ndarray
    predictor_names: tuple
    degenerate: np.ndarray

    @property
    def n_firms(self) -> int:
        return self.values.shape[0]

    @property
    def n_predictors(self) -> int:
        return self.values.shape[1]


def canonical_pair(a: str, b: str):
    """Order an interaction pair so the lexically smaller name comes first."""
    if a == b:
        raise PanelSchemaError(f"interaction of {a!r} with itself is a square, not a pair")
    return (a, b) if a < b else (b, a)


def classify_predictor(name: str) -> str:
    """Classify an expanded predictor name as main, square, or interaction."""
    if "_x_" in name:
        return "interaction"
    if name.endswith("_sq"):
        return "square"
    return "main"


def expand_predictors(spec: PredictorSpec) -> list:
    """Ordered expanded predictor names: bases, then squares, then interactions.

    Squares follow base order and carry the ``_sq`` suffix; interactions are
    ``a_x_b`` in lexicographic pair order with exclusions removed.
    """
    names = list(spec.base_names)
    if spec.include_squares:
        names.extend(f"{b}_sq" for b in spec.base_names if b not in spec.square_exclusions)
    if spec.include_interactions:
        for a, b in itertools.combinations(sorted(spec.base_names), 2):
            if (a, b) not in spec.interaction_exclusions:
                names.append(f"{a}_x_{b}")
    if len(set(names)) != len(names):
        raise PanelSchemaError("expanded predictor names collide")
    return names


def _parse_list(text: str) -> list:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def load_metadata(path) -> dict:
    """Parse the key-value metadata sidecar.

    Recognized keys: ``binary``, ``square_exclude`` (comma lists),
    ``interaction_exclude`` (comma list of ``a:b`` pairs), ``size_column``.
    Lines starting with ``#`` are comments.
    """
    meta = {"binary": [], "square_exclude": [], "interaction_exclude": [], "size_column": None}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise PanelParseError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key == "binary":
                meta["binary"] = _parse_list(value)
            elif key == "square_exclude":
                meta["square_exclude"] = _parse_list(value)
            elif key == "interaction_exclude":
                pairs = []
                for tok in _parse_list(value):
                    if ":" not in tok:
                        raise PanelParseError(
                            f"{path}:{lineno}: interaction pair {tok!r} must be 'a:b'"
                        )
                    a, _, b = tok.partition(":")
                    pairs.append(canonical_pair(a.strip(), b.strip()))
                meta["interaction_exclude"] = pairs
            elif key == "size_column":
                meta["size_column"] = value or None
            else:
                raise PanelParseError(f"{path}:{lineno}: unknown metadata key {key!r}")
    return meta


def _first_bad_line(series: pd.Series) -> int:
    """1-based file line of the first non-numeric entry (header is line 1)."""
    coerced = pd.to_numeric(series, errors="coerce")
    bad = coerced.isna() & series.notna()
    return int(bad.idxmax()) + 2


def load_panel(path, schema: Optional[Mapping] = None,
               metadata_path=None) -> CharacteristicsPanel:
    """Load a characteristics CSV into a month-sorted panel.

    Parameters
    ----------
    path : CSV with a header row and columns date (YYYYMM), id, ret_fwd,
        plus one column per characteristic.  ``schema`` remaps the three
        mandatory column names if the file uses different ones.
    metadata_path : optional sidecar listing binary characteristics and
        exclusion lists (see :func:`load_metadata`).

    Rows with a missing return are dropped and counted; duplicate
    (month, firm) rows are an error.
    """
    colmap = dict(DEFAULT_SCHEMA)
    if schema:
        colmap.update(schema)
    try:
        df = pd.read_csv(path, dtype={colmap["id"]: str})
    except FileNotFoundError:
        raise
    except pd.errors.ParserError as exc:
        raise PanelParseError(f"{path}: {exc}") from exc

    for role in MANDATORY_COLUMNS:
        if colmap[role] not in df.columns:
            raise PanelSchemaError(f"{path}: missing mandatory column {colmap[role]!r}")
    df = df.rename(columns={colmap[r]: r for r in MANDATORY_COLUMNS})

    char_names = [c for c in df.columns if c not in MANDATORY_COLUMNS]
    if not char_names:
        raise PanelSchemaError(f"{path}: no characteristic columns found")

    for col in ["date", "ret_fwd"] + char_names:
        if df[col].dtype == object:
            coerced = pd.to_numeric(df[col], errors="coerce")
            if (coerced.isna() & df[col].notna()).any():
                raise PanelParseError(
                    f"{path}:{_first_bad_line(df[col])}: non-numeric value in column {col!r}"
                )
            df[col] = coerced
    df["date"] = df["date"].astype(np.int64)

    dup = df.duplicated(subset=["date", "id"], keep=False)
    if dup.any():
        month, firm = df.loc[dup.idxmax(), ["date", "id"]]
        raise PanelError(f"duplicate (month, firm) pair ({month}, {firm})")

    n_dropped = int(df["ret_fwd"].isna().sum())
    if n_dropped:
        logger.info("dropping %d rows with missing next-month return", n_dropped)
        df = df[df["ret_fwd"].notna()]
    if df.empty:
        raise PanelError(f"{path}: no usable rows after dropping missing returns")

    df = df.sort_values(["date", "id"], kind="stable")

    meta = load_metadata(metadata_path) if metadata_path else {
        "binary": [], "square_exclude": [], "interaction_exclude": [], "size_column": None,
    }
    for name in meta["binary"] + meta["square_exclude"]:
        if name not in char_names:
            raise PanelSchemaError(f"metadata names unknown characteristic {name!r}")
    binary = frozenset(meta["binary"])
    for name in binary:
        vals = df[name].dropna()
        if not vals.isin((0.0, 1.0)).all():
            raise PanelError(f"binary characteristic {name!r} has values outside {{0, 1}}")

    blocks = {}
    months = []
    for month, grp in df.groupby("date", sort=True):
        months.append(int(month))
        blocks[int(month)] = MonthBlock(
            firm_ids=tuple(grp["id"]),
            values=grp[char_names].to_numpy(dtype=np.float64),
            ret_fwd=grp["ret_fwd"].to_numpy(dtype=np.float64),
        )
    return CharacteristicsPanel(
        char_names=char_names,
        months=months,
        blocks=blocks,
        binary=binary,
        square_exclusions=frozenset(meta["square_exclude"]),
        interaction_exclusions=frozenset(meta["interaction_exclude"]),
        size_column=meta["size_column"],
        dropped_rows=n_dropped,
    )


def winsorize_cross_section(panel: CharacteristicsPanel, lower: float = 0.01,
                            upper: float = 0.99) -> CharacteristicsPanel:
    """Clip each characteristic at its per-month empirical percentiles.

    Percentiles use linear interpolation (numpy's default rule).  Binary
    characteristics are untouched; cross-sections with fewer than two
    observations pass through unchanged.
    """
    if not (0.0 <= lower < upper <= 1.0):
        raise ValueError(f"invalid winsorization limits ({lower}, {upper})")
    binary_idx = {j for j, c in enumerate(panel.char_names) if c in panel.binary}
    new_blocks = {}
    for month in panel.months:
        block = panel.blocks[month]
        values = block.values.copy()
        for j in range(values.shape[1]):
            if j in binary_idx:
                continue
            col = values[:, j]
            finite = col[np.isfinite(col)]
            if finite.size < 2:
                logger.debug("month %s char %s: <2 observations, winsorization skipped",
                             month, panel.char_names[j])
                continue
            lo, hi = np.quantile(finite, [lower, upper])
            values[:, j] = np.clip(col, lo, hi)
        new_blocks[month] = replace(block, values=values)
    return replace(panel, blocks=new_blocks)


def _standardize_base(col: np.ndarray):
    """Standardize one base column over non-missing firms, impute 0.

    Returns (column, degenerate).  Imputed cells are exactly 0; the final
    rescale to unit full-column sd is multiplicative so they stay 0.
    """
    out = np.zeros_like(col)
    mask = np.isfinite(col)
    n_obs = int(mask.sum())
    if n_obs < 2:
        return out, True
    obs = col[mask]
    sd = obs.std(ddof=1)
    if sd == 0.0 or not np.isfinite(sd):
        return out, True
    out[mask] = (obs - obs.mean()) / sd
    full_sd = out.std(ddof=1)
    if full_sd == 0.0 or not np.isfinite(full_sd):
        return np.zeros_like(col), True
    out /= full_sd
    return out, False


def _standardize_expansion(col: np.ndarray):
    sd = col.std(ddof=1)
    if sd == 0.0 or not np.isfinite(sd):
        return np.zeros_like(col), True
    return (col - col.mean()) / sd, False


def standardize_and_impute(panel: CharacteristicsPanel, month: int,
                           spec: PredictorSpec) -> PredictorMatrix:
    """Build the standardized, feature-expanded predictor matrix for a month.

    Order of operations: standardize each base over the firms observed that
    month, impute missing cells to 0, rescale to unit full-column sd, then
    compute squares/interactions from the standardized bases and standardize
    those.  Degenerate columns come out all-zero and flagged.
    """
    if month not in panel.blocks:
        raise PanelError(f"month {month} not in panel")
    block = panel.blocks[month]
    names = expand_predictors(spec)
    n = len(block.firm_ids)
    base_cols = {}
    base_degen = {}
    for name in spec.base_names:
        col, degen = _standardize_base(block.values[:, panel.char_index(name)])
        base_cols[name] = col
        base_degen[name] = degen
        if degen:
            logger.debug("month %s: base %s degenerate", month, name)

    values = np.empty((n, len(names)))
    degenerate = np.zeros(len(names), dtype=bool)
    for k, name in enumerate(names):
        kind = classify_predictor(name)
        if kind == "main":
            values[:, k] = base_cols[name]
            degenerate[k] = base_degen[name]
        elif kind == "square":
            base = name[: -len("_sq")]
            if base_degen[base]:
                values[:, k], degenerate[k] = np.zeros(n), True
            else:
                values[:, k], degenerate[k] = _standardize_expansion(base_cols[base] ** 2)
        else:
            a, _, b = name.partition("_x_")
            if base_degen[a] or base_degen[b]:
                values[:, k], degenerate[k] = np.zeros(n), True
            else:
                values[:, k], degenerate[k] = _standardize_expansion(
                    base_cols[a] * base_cols[b]
                )
    return PredictorMatrix(
        month=month,
        firm_ids=block.firm_ids,
        values=values,
        predictor_names=tuple(names),
        degenerate=degenerate,
    )


def standardize_months(panel: CharacteristicsPanel, spec: PredictorSpec,
                       months: Optional[Sequence] = None) -> dict:
    """Standardized predictor matrices for several months (keyed by month)."""
    target = list(months) if months is not None else list(panel.months)
    return {m: standardize_and_impute(panel, m, spec) for m in target}
