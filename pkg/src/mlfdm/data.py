"""Mortality data types, HMD table parsing and the canonical CSV format."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, TextIO

import numpy as np

SEXES = ("female", "male", "total")
HMD_COLUMNS = ("Female", "Male", "Total")
CANONICAL_COLUMNS = ("population", "sex", "region", "year", "age", "rate", "exposure")


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class StructureError(DataError):
    pass


class CellReason(str, Enum):
    ZERO_RATE = "zero_rate"
    MISSING = "missing"
    IMPUTED = "imputed"


@dataclass(frozen=True)
class CellFlag:
    year: int
    age_index: int
    reason: CellReason


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AgeGrid:
    """Age-group centers; ``open_ended_last`` marks a final ``NN+`` group."""

    ages: np.ndarray
    open_ended_last: bool = True

    def __post_init__(self):
        ages = _frozen(self.ages)
        if ages.ndim != 1 or len(ages) < 2:
            raise DataError("an age grid needs at least two ages")
        if np.any(np.diff(ages) <= 0):
            raise DataError("ages must be strictly increasing")
        object.__setattr__(self, "ages", ages)

    @property
    def p(self) -> int:
        return len(self.ages)

    @property
    def widths(self) -> np.ndarray:
        """Widths of the closed age groups (length p - 1)."""
        return np.diff(self.ages)

    def labels(self) -> list[str]:
        out = [_fmt_age(a) for a in self.ages]
        if self.open_ended_last:
            out[-1] += "+"
        return out

    def index_of(self, age: float) -> int:
        hits = np.flatnonzero(np.isclose(self.ages, age))
        if not len(hits):
            raise KeyError(age)
        return int(hits[0])

    def __eq__(self, other):
        return (isinstance(other, AgeGrid) and self.open_ended_last == other.open_ended_last
                and np.array_equal(self.ages, other.ages))

    def __hash__(self):
        return hash((tuple(self.ages.tolist()), self.open_ended_last))


def _fmt_age(a: float) -> str:
    return str(int(a)) if float(a).is_integer() else repr(float(a))


@dataclass(frozen=True, order=True)
class PopulationLabel:
    name: str
    sex: str = "total"
    region: str | None = None

    def __post_init__(self):
        sex = self.sex.lower()
        if sex not in SEXES:
            raise DataError(f"unknown sex {self.sex!r}; expected one of {SEXES}")
        object.__setattr__(self, "sex", sex)
        if self.region == "":
            object.__setattr__(self, "region", None)

    @property
    def key(self) -> str:
        parts = [self.name, self.sex] + ([self.region] if self.region else [])
        return "/".join(parts)

    @classmethod
    def parse(cls, text: str) -> "PopulationLabel":
        parts = text.split("/")
        if not 1 <= len(parts) <= 3:
            raise DataError(f"bad population key {text!r}")
        return cls(*parts)

    @classmethod
    def from_mapping(cls, m: Mapping) -> "PopulationLabel":
        return cls(str(m["name"]), str(m.get("sex", "total")), m.get("region"))

    def __str__(self):
        return self.key


@dataclass(frozen=True)
class PopulationData:
    rates: np.ndarray
    exposures: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rates", _frozen(self.rates))
        object.__setattr__(self, "exposures", _frozen(self.exposures))
        if self.rates.shape != self.exposures.shape:
            raise StructureError("rate and exposure matrices differ in shape")


@dataclass(frozen=True)
class HierarchyNode:
    """A node of the population tree; ``label`` is the node's own observed series."""

    name: str
    label: PopulationLabel | None = None
    children: tuple["HierarchyNode", ...] = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self) -> list["HierarchyNode"]:
        if self.is_leaf:
            return [self]
        out = []
        for c in self.children:
            out.extend(c.leaves())
        return out

    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(c.depth() for c in self.children)

    def labels(self) -> list[PopulationLabel]:
        out = [self.label] if self.label is not None else []
        for c in self.children:
            out.extend(c.labels())
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "HierarchyNode":
        label = d.get("population")
        if isinstance(label, str):
            label = PopulationLabel.parse(label)
        elif label is not None:
            label = PopulationLabel.from_mapping(label)
        children = tuple(cls.from_dict(c) for c in d.get("children", ()))
        name = d.get("name") or (label.key if label else None)
        if name is None:
            raise StructureError("hierarchy node needs a name or a population")
        return cls(str(name), label, children)

    def to_dict(self) -> dict:
        out: dict = {"name": self.name}
        if self.label is not None:
            out["population"] = {"name": self.label.name, "sex": self.label.sex}
            if self.label.region:
                out["population"]["region"] = self.label.region
        if self.children:
            out["children"] = [c.to_dict() for c in self.children]
        return out


def infer_hierarchy(labels: Iterable[PopulationLabel]) -> HierarchyNode:
    """Build the natural tree: group -> sexes, with a synthetic root over several groups."""
    labels = sorted(labels)
    if len(labels) == 1:
        return HierarchyNode(labels[0].key, labels[0])
    groups: dict[tuple, list[PopulationLabel]] = {}
    for lab in labels:
        groups.setdefault((lab.name, lab.region), []).append(lab)
    nodes = []
    for (name, region), labs in groups.items():
        total = [lab for lab in labs if lab.sex == "total"]
        sexed = [lab for lab in labs if lab.sex != "total"]
        gname = f"{name}/{region}" if region else name
        if sexed:
            nodes.append(HierarchyNode(gname, total[0] if total else None,
                                       tuple(HierarchyNode(s.key, s) for s in sexed)))
        else:
            nodes.append(HierarchyNode(gname, total[0]))
    if len(nodes) == 1:
        return nodes[0]
    return HierarchyNode("Total", None, tuple(nodes))


def load_hierarchy(path: str | os.PathLike) -> HierarchyNode:
    """Read a YAML or JSON hierarchy spec."""
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        spec = json.loads(text)
    else:
        import yaml

        spec = yaml.safe_load(text)
    if not isinstance(spec, Mapping):
        raise StructureError("hierarchy spec must be a mapping")
    return HierarchyNode.from_dict(spec.get("hierarchy", spec))


@dataclass(frozen=True)
class MortalityDataset:
    grid: AgeGrid
    years: np.ndarray
    populations: Mapping[PopulationLabel, PopulationData]
    hierarchy: HierarchyNode | None = None
    flags: Mapping[PopulationLabel, tuple[CellFlag, ...]] = field(default_factory=dict)

    def __post_init__(self):
        years = _frozen(self.years, dtype=np.int64)
        if years.ndim != 1 or len(years) < 1:
            raise StructureError("years must be a non-empty sequence")
        if np.any(np.diff(years) != 1):
            raise StructureError("years must be contiguous")
        object.__setattr__(self, "years", years)
        shape = (len(years), self.grid.p)
        for lab, pd in self.populations.items():
            if pd.rates.shape != shape:
                raise StructureError(f"{lab}: matrices are {pd.rates.shape}, expected {shape}")
        object.__setattr__(self, "populations", dict(self.populations))
        hier = self.hierarchy or infer_hierarchy(self.populations)
        known = set(self.populations)
        for lab in hier.labels():
            if lab not in known:
                raise StructureError(f"hierarchy references unknown population {lab}")
        leaf_labels = [n.label for n in hier.leaves()
                       if n.label is not None and n.label.sex != "total"]
        non_total = {lab for lab in known if lab.sex != "total"}
        if non_total and (len(leaf_labels) != len(set(leaf_labels))
                          or set(leaf_labels) != non_total):
            raise StructureError("hierarchy leaves must partition the non-total populations")
        object.__setattr__(self, "hierarchy", hier)
        object.__setattr__(self, "flags", {k: tuple(v) for k, v in self.flags.items()})

    @property
    def n(self) -> int:
        return len(self.years)

    @property
    def labels(self) -> list[PopulationLabel]:
        return list(self.populations)

    def __getitem__(self, label: PopulationLabel | str) -> PopulationData:
        if isinstance(label, str):
            label = PopulationLabel.parse(label)
        return self.populations[label]

    def log_rates(self, label) -> np.ndarray:
        return np.log(self[label].rates)

    def subset_years(self, start: int, stop: int) -> "MortalityDataset":
        """Rows ``start:stop`` (positional) as a new dataset."""
        pops = {k: PopulationData(v.rates[start:stop], v.exposures[start:stop])
                for k, v in self.populations.items()}
        years = self.years[start:stop]
        flags = {k: tuple(f for f in v if years[0] <= f.year <= years[-1])
                 for k, v in self.flags.items()}
        return MortalityDataset(self.grid, years, pops, self.hierarchy, flags)


# ---------------------------------------------------------------------------
# HMD tables


@dataclass(frozen=True)
class HMDTable:
    grid: AgeGrid
    years: np.ndarray
    values: Mapping[str, np.ndarray]  # sex -> n x p, NaN where missing
    missing: Mapping[str, np.ndarray]  # sex -> bool n x p


def _parse_age(token: str, lineno: int) -> tuple[int, bool]:
    open_ended = token.endswith("+")
    body = token[:-1] if open_ended else token
    if not body.isdigit():
        raise ParseError(f"bad age token {token!r}", lineno)
    return int(body), open_ended


def parse_hmd_table(stream: TextIO | str, kind: str, age_cap: int | None = 95,
                    exposure_table: HMDTable | None = None) -> HMDTable:
    """Parse an HMD-style ``Year Age Female Male Total`` table.

    Ages above ``age_cap`` are folded into one ``cap+`` group: exposures are
    summed and rates are exposure-weighted averages, which requires the
    matching ``exposure_table`` (parsed uncapped or capped identically).
    Missing cells are written ``.`` and come back as NaN with a mask.
    """
    if kind not in ("rates", "exposures"):
        raise ValueError(f"kind must be 'rates' or 'exposures', not {kind!r}")
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows: dict[int, dict[int, list[float]]] = {}
    open_ages: set[int] = set()
    seen_header = False
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if not seen_header:
            if tokens[:2] == ["Year", "Age"]:
                if tokens[2:5] != list(HMD_COLUMNS):
                    raise ParseError("header must be 'Year Age Female Male Total'", lineno)
                seen_header = True
            continue
        if len(tokens) != 5:
            raise ParseError(f"expected 5 fields, got {len(tokens)}", lineno)
        try:
            year = int(tokens[0])
        except ValueError:
            raise ParseError(f"bad year {tokens[0]!r}", lineno) from None
        age, is_open = _parse_age(tokens[1], lineno)
        if is_open:
            open_ages.add(age)
        vals = []
        for tok in tokens[2:]:
            if tok == ".":
                vals.append(np.nan)
                continue
            try:
                vals.append(float(tok))
            except ValueError:
                raise ParseError(f"bad value {tok!r}", lineno) from None
        rows.setdefault(year, {})[age] = vals
    if not seen_header:
        raise ParseError("no 'Year Age Female Male Total' header found")
    if not rows:
        raise ParseError("table has no data rows")
    years = np.array(sorted(rows))
    if np.any(np.diff(years) != 1):
        raise StructureError("years are not contiguous")
    ages = sorted(rows[years[0]])
    for y in years:
        if sorted(rows[y]) != ages:
            raise StructureError(f"year {y} has a different age set")
    data = np.array([[rows[y][a] for a in ages] for y in years])  # n x p x 3
    open_last = bool(open_ages) and max(open_ages) == ages[-1]
    ages_arr = np.array(ages, dtype=float)

    if age_cap is not None and ages[-1] > age_cap:
        keep = ages_arr < age_cap
        fold = ~keep
        if kind == "exposures":
            tail = np.nansum(data[:, fold, :], axis=1)
            tail[np.all(np.isnan(data[:, fold, :]), axis=1)] = np.nan
        else:
            if exposure_table is None:
                raise DataError("aggregating rates above the age cap needs exposures")
            expo = _exposure_for_fold(exposure_table, years, ages_arr, fold)
            tail = _weighted_tail(data[:, fold, :], expo)
        data = np.concatenate([data[:, keep, :], tail[:, None, :]], axis=1)
        ages_arr = np.append(ages_arr[keep], float(age_cap))
        open_last = True

    grid = AgeGrid(ages_arr, open_last)
    values = {sex: data[:, :, k] for k, sex in enumerate(SEXES)}
    missing = {sex: np.isnan(v) for sex, v in values.items()}
    return HMDTable(grid, years, values, missing)


def _exposure_for_fold(table: HMDTable, years, ages, fold) -> np.ndarray:
    if not np.array_equal(table.years, years):
        raise StructureError("exposure table years differ from the rate table")
    idx = []
    for a in ages[fold]:
        hits = np.flatnonzero(table.grid.ages == a)
        if not len(hits):
            raise StructureError(
                f"exposure table lacks age {a:g}; parse it with age_cap=None first")
        idx.append(hits[0])
    return np.stack([table.values[s][:, idx] for s in SEXES], axis=2)


def _weighted_tail(rates: np.ndarray, expo: np.ndarray) -> np.ndarray:
    ok = ~np.isnan(rates) & ~np.isnan(expo)
    w = np.where(ok, expo, 0.0)
    r = np.where(ok, rates, 0.0)
    wsum = w.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        weighted = (w * r).sum(axis=1) / wsum
        plain = r.sum(axis=1) / ok.sum(axis=1)
    return np.where(wsum > 0, weighted, plain)


# ---------------------------------------------------------------------------
# dataset assembly


def impute_rates(rates: np.ndarray, exposures: np.ndarray, years: np.ndarray,
                 missing: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, list[CellFlag]]:
    """Replace zero/missing rates by the age's smallest positive rate over years.

    Missing exposures are replaced the same way from the exposure column.
    Returns new (rates, exposures, flags).
    """
    rates = np.array(rates, dtype=float)
    exposures = np.array(exposures, dtype=float)
    if missing is None:
        missing = np.isnan(rates)
    flags = []
    for j in range(rates.shape[1]):
        col = rates[:, j]
        bad = missing[:, j] | np.isnan(col) | (col <= 0)
        if bad.any():
            pos = col[~bad]
            if not len(pos):
                pos = rates[(rates > 0) & ~np.isnan(rates)]
                if not len(pos):
                    raise DataError("no positive rates to impute from")
            fill = pos.min()
            for i in np.flatnonzero(bad):
                reason = CellReason.MISSING if (missing[i, j] or np.isnan(col[i])) else CellReason.ZERO_RATE
                flags.append(CellFlag(int(years[i]), j, reason))
                flags.append(CellFlag(int(years[i]), j, CellReason.IMPUTED))
            rates[bad, j] = fill
        ecol = exposures[:, j]
        ebad = np.isnan(ecol) | (ecol <= 0)
        if ebad.any():
            epos = ecol[~ebad]
            if not len(epos):
                raise DataError(f"no positive exposures at age index {j}")
            for i in np.flatnonzero(ebad):
                flags.append(CellFlag(int(years[i]), j, CellReason.IMPUTED))
            exposures[ebad, j] = epos.min()
    return rates, exposures, flags


def load_dataset(rate_files: Mapping[str, str | os.PathLike],
                 exposure_files: Mapping[str, str | os.PathLike],
                 hierarchy_spec: HierarchyNode | Mapping | str | os.PathLike | None = None,
                 age_cap: int | None = 95) -> MortalityDataset:
    """Load HMD rate/exposure file pairs keyed by population name.

    Each file contributes Female, Male and Total populations named after its key.
    """
    if set(rate_files) != set(exposure_files):
        raise StructureError("rate and exposure files cover different populations")
    pops: dict[PopulationLabel, PopulationData] = {}
    flags: dict[PopulationLabel, tuple[CellFlag, ...]] = {}
    grid = years = None
    for name in sorted(rate_files):
        expo_text = Path(exposure_files[name]).read_text(encoding="utf-8")
        raw_expo = parse_hmd_table(expo_text, "exposures", age_cap=None)
        ex = parse_hmd_table(expo_text, "exposures", age_cap)
        rate_text = Path(rate_files[name]).read_text(encoding="utf-8")
        if not np.array_equal(parse_hmd_table(rate_text, "rates", None).years, raw_expo.years):
            rt_years = parse_hmd_table(rate_text, "rates", None).years
            raise StructureError(
                f"{name}: rate years {rt_years[0]}-{rt_years[-1]} differ from exposure years "
                f"{raw_expo.years[0]}-{raw_expo.years[-1]}")
        rt = parse_hmd_table(rate_text, "rates", age_cap, exposure_table=raw_expo)
        if rt.grid != ex.grid:
            raise StructureError(f"{name}: rate and exposure age grids differ")
        if grid is None:
            grid, years = rt.grid, rt.years
        elif rt.grid != grid or not np.array_equal(rt.years, years):
            raise StructureError(f"{name}: grid or year range differs from other populations")
        for sex in SEXES:
            lab = PopulationLabel(name, sex)
            r, e, fl = impute_rates(rt.values[sex], ex.values[sex], rt.years, rt.missing[sex])
            pops[lab] = PopulationData(r, e)
            flags[lab] = tuple(fl)
    hier = _coerce_hierarchy(hierarchy_spec)
    return MortalityDataset(grid, years, pops, hier, flags)


def _coerce_hierarchy(spec) -> HierarchyNode | None:
    if spec is None or isinstance(spec, HierarchyNode):
        return spec
    if isinstance(spec, Mapping):
        return HierarchyNode.from_dict(spec.get("hierarchy", spec))
    return load_hierarchy(spec)


# ---------------------------------------------------------------------------
# canonical CSV


def _fmt(v: float) -> str:
    return "." if np.isnan(v) else repr(float(v))


def write_canonical_csv(dataset: MortalityDataset, path_or_stream) -> None:
    own = isinstance(path_or_stream, (str, os.PathLike))
    fh = open(path_or_stream, "w", encoding="utf-8", newline="") if own else path_or_stream
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CANONICAL_COLUMNS)
        labels = dataset.grid.labels()
        for lab, pd in dataset.populations.items():
            for i, y in enumerate(dataset.years):
                for j, age in enumerate(labels):
                    w.writerow([lab.name, lab.sex, lab.region or "", int(y), age,
                                _fmt(pd.rates[i, j]), _fmt(pd.exposures[i, j])])
    finally:
        if own:
            fh.close()


def read_canonical_csv(path_or_stream, hierarchy_spec=None) -> MortalityDataset:
    """Read the canonical long CSV; '.' cells are imputed and flagged."""
    own = isinstance(path_or_stream, (str, os.PathLike))
    fh = open(path_or_stream, encoding="utf-8", newline="") if own else path_or_stream
    try:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CANONICAL_COLUMNS:
            raise ParseError(f"canonical CSV columns must be {','.join(CANONICAL_COLUMNS)}", 1)
        cells: dict[PopulationLabel, dict[tuple[int, str], tuple[float, float]]] = {}
        age_order: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            try:
                lab = PopulationLabel(row["population"], row["sex"], row["region"] or None)
                year = int(row["year"])
                rate = np.nan if row["rate"] == "." else float(row["rate"])
                expo = np.nan if row["exposure"] == "." else float(row["exposure"])
            except (ValueError, TypeError) as exc:
                raise ParseError(str(exc), lineno) from None
            if row["age"] not in age_order:
                age_order.append(row["age"])
            cells.setdefault(lab, {})[(year, row["age"])] = (rate, expo)
    finally:
        if own:
            fh.close()
    if not cells:
        raise ParseError("canonical CSV has no rows")
    open_last = age_order[-1].endswith("+")
    ages = np.array([float(a.rstrip("+")) for a in age_order])
    grid = AgeGrid(ages, open_last)
    years = np.array(sorted({y for c in cells.values() for (y, _) in c}))
    pops, flags = {}, {}
    for lab, c in cells.items():
        r = np.full((len(years), len(ages)), np.nan)
        e = np.full_like(r, np.nan)
        for i, y in enumerate(years):
            for j, a in enumerate(age_order):
                if (y, a) not in c:
                    raise StructureError(f"{lab}: missing row for year {y}, age {a}")
                r[i, j], e[i, j] = c[(y, a)]
        missing = np.isnan(r)
        if missing.any() or np.any(r <= 0) or np.any(~(e > 0)):
            r, e, fl = impute_rates(r, e, years, missing)
        else:
            fl = []
        pops[lab] = PopulationData(r, e)
        flags[lab] = tuple(fl)
    return MortalityDataset(grid, years, pops, _coerce_hierarchy(hierarchy_spec), flags)
