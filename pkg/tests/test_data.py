import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import hmd_text
from mlfdm.data import (AgeGrid, CellReason, DataError, HierarchyNode, MortalityDataset,
                        ParseError, PopulationData, PopulationLabel, StructureError, impute_rates,
                        infer_hierarchy, load_dataset, parse_hmd_table, read_canonical_csv,
                        write_canonical_csv)


def _tables(tmp_path, years, ages, seed=0, rate_years=None, zero=None):
    rng = np.random.default_rng(seed)
    n, p = len(years), len(ages)
    expo = rng.uniform(1e3, 1e5, (n, p, 3))
    rates = np.exp(-8 + 0.08 * np.asarray(ages)[None, :, None] + 0.1 * rng.standard_normal((n, p, 3)))
    if zero is not None:
        rates[zero] = 0.0
    ry = years if rate_years is None else rate_years
    rp, ep = tmp_path / "r.txt", tmp_path / "e.txt"
    rp.write_text(hmd_text(ry, ages, rates[:len(ry)]))
    ep.write_text(hmd_text(years, ages, expo))
    return rp, ep, rates, expo


def test_parse_hmd_table_basic():
    vals = np.array([[[0.01, 0.02, 0.015], [0.5, np.nan, 0.4]]])
    t = parse_hmd_table(hmd_text([2000], [0, 1], vals), "rates", age_cap=None)
    assert t.grid.open_ended_last and t.grid.p == 2
    assert t.values["male"][0, 0] == 0.02
    assert t.missing["male"][0, 1] and not t.missing["female"][0, 1]


@pytest.mark.parametrize("text", [
    "no header here\n",
    "Year Age Female Male Total\n",
    "Year Age Female Male Total\n2000 0 0.1 0.2\n",
    "Year Age Female Male Total\n2000 x 0.1 0.2 0.3\n",
    "Year Age Female Male Total\n2000 0 0.1 abc 0.3\n",
    "Year Age Woman Man All\n2000 0 0.1 0.2 0.3\n",
])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse_hmd_table(text, "rates", age_cap=None)


def test_year_gap_is_error():
    vals = np.full((2, 2, 3), 0.01)
    text = hmd_text([2000, 2002], [0, 1], vals)
    with pytest.raises(StructureError):
        parse_hmd_table(text, "rates", age_cap=None)


def test_load_dataset_with_age_cap(tmp_path):
    ages = list(range(0, 8))
    rp, ep, rates, expo = _tables(tmp_path, [2000, 2001, 2002], ages)
    ds = load_dataset({"X": rp}, {"X": ep}, age_cap=5)
    assert ds.grid.labels() == ["0", "1", "2", "3", "4", "5+"]
    assert ds.n == 3 and len(ds.labels) == 3
    # open group is the exposure-weighted rate and exposures add up
    for k, sex in enumerate(("female", "male", "total")):
        pd = ds[PopulationLabel("X", sex)]
        e_tail = expo[:, 5:, k].round(6)
        r_tail = rates[:, 5:, k].round(6)
        np.testing.assert_allclose(pd.exposures[:, -1], e_tail.sum(axis=1), rtol=1e-12)
        np.testing.assert_allclose(pd.rates[:, -1], (e_tail * r_tail).sum(1) / e_tail.sum(1),
                                   rtol=1e-10)
        assert np.all(pd.rates[:, -1] >= r_tail.min(axis=1) - 1e-15)
        assert np.all(pd.rates[:, -1] <= r_tail.max(axis=1) + 1e-15)


def test_year_range_mismatch(tmp_path):
    rp, ep, *_ = _tables(tmp_path, [2000, 2001, 2002], [0, 1, 2], rate_years=[2000, 2001])
    with pytest.raises(StructureError, match="years"):
        load_dataset({"X": rp}, {"X": ep}, age_cap=None)


def test_zero_rates_imputed_and_flagged(tmp_path):
    rp, ep, rates, _ = _tables(tmp_path, [2000, 2001, 2002], [0, 1, 2], zero=(1, 2, 0))
    ds = load_dataset({"X": rp}, {"X": ep}, age_cap=None)
    lab = PopulationLabel("X", "female")
    col = rates[:, 2, 0].round(6)
    assert ds[lab].rates[1, 2] == min(col[0], col[2])
    reasons = {(f.year, f.age_index, f.reason) for f in ds.flags[lab]}
    assert (2001, 2, CellReason.IMPUTED) in reasons
    assert (2001, 2, CellReason.ZERO_RATE) in reasons
    assert np.all(ds[lab].rates > 0)


def test_single_population_gets_trivial_hierarchy():
    lab = PopulationLabel("Solo")
    ds = MortalityDataset(AgeGrid(np.arange(3.0)), np.arange(2000, 2003),
                          {lab: PopulationData(np.full((3, 3), 0.01), np.full((3, 3), 100.0))})
    assert ds.hierarchy.is_leaf and ds.hierarchy.label == lab


def test_hierarchy_unknown_label_rejected():
    lab = PopulationLabel("A", "female")
    bad = HierarchyNode("root", None, (HierarchyNode("B/male", PopulationLabel("B", "male")),))
    with pytest.raises(StructureError):
        MortalityDataset(AgeGrid(np.arange(3.0)), np.arange(2000, 2003),
                         {lab: PopulationData(np.full((3, 3), 0.01), np.full((3, 3), 1.0))}, bad)


def test_infer_hierarchy_two_sex():
    labs = [PopulationLabel("UK", s) for s in ("female", "male", "total")]
    h = infer_hierarchy(labs)
    assert h.label == PopulationLabel("UK", "total")
    assert [c.label.sex for c in h.children] == ["female", "male"]


def test_label_key_round_trip():
    lab = PopulationLabel("AUS", "male", "VIC")
    assert PopulationLabel.parse(lab.key) == lab
    with pytest.raises(DataError):
        PopulationLabel("AUS", "other")


def test_impute_rates_all_missing_column_uses_global_min():
    r = np.array([[0.1, np.nan], [0.2, np.nan]])
    out, _, flags = impute_rates(r, np.ones_like(r), np.array([1, 2]))
    assert np.all(out[:, 1] == 0.1) and len(flags) == 4


@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(3, 8))
def test_canonical_csv_round_trip_is_bit_exact(seed, n, p):
    rng = np.random.default_rng(seed)
    pops = {PopulationLabel("P", s): PopulationData(rng.uniform(1e-5, 1, (n, p)),
                                                   rng.uniform(1, 1e6, (n, p)))
            for s in ("female", "male")}
    ds = MortalityDataset(AgeGrid(np.arange(p, dtype=float)), np.arange(1990, 1990 + n), pops)
    buf = io.StringIO()
    write_canonical_csv(ds, buf)
    back = read_canonical_csv(io.StringIO(buf.getvalue()))
    assert back.grid == ds.grid
    for lab in ds.labels:
        assert np.array_equal(back[lab].rates, ds[lab].rates)
        assert np.array_equal(back[lab].exposures, ds[lab].exposures)


@given(st.integers(0, 10_000))
def test_open_group_between_min_and_max_of_folded_rates(seed):
    rng = np.random.default_rng(seed)
    ages = list(range(6))
    rates = rng.uniform(0.01, 0.9, (2, 6, 3))
    expo = rng.uniform(1, 1e4, (2, 6, 3))
    et = parse_hmd_table(hmd_text([2000, 2001], ages, expo), "exposures", age_cap=None)
    rt = parse_hmd_table(hmd_text([2000, 2001], ages, rates), "rates", age_cap=3,
                         exposure_table=et)
    tail = rates[:, 3:, :].round(6)
    for k, sex in enumerate(("female", "male", "total")):
        v = rt.values[sex][:, -1]
        assert np.all(v >= tail[:, :, k].min(axis=1) - 1e-12)
        assert np.all(v <= tail[:, :, k].max(axis=1) + 1e-12)
