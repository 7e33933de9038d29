import json
from pathlib import Path

import numpy as np
import pytest

from w2fair.data import (
    ClassBias,
    ConfigError,
    CsvSchema,
    DataError,
    Dataset,
    SyntheticSpec,
    generate,
    load_csv,
    save_csv,
    split,
    split_indices,
)
from w2fair.trainer import TrainConfig, evaluate, fit

MALFORMED = Path(__file__).parent / "fixtures" / "malformed"


def test_three_row_file(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("a,b,label,group\n1,2,0,0\n3,4,1,1\n5,6.5,1,0\n")
    ds = load_csv(f)
    assert len(ds) == 3 and ds.n_classes == 2 and ds.n_features == 2
    np.testing.assert_array_equal(ds.X[2], [5, 6.5])
    np.testing.assert_array_equal(ds.support(), [[1, 0], [1, 1]])


def test_named_labels_and_feature_subset(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("id,x,occ,sex\n7,0.5,nurse,1\n8,0.1,surgeon,0\n")
    ds = load_csv(f, CsvSchema(label="occ", group="sex", features=["x"], class_names=["nurse", "surgeon"]))
    np.testing.assert_array_equal(ds.y, [0, 1])
    assert ds.class_names == ["nurse", "surgeon"] and ds.n_features == 1


def test_group_value_two_names_row_and_column(tmp_path):
    with pytest.raises(DataError) as e:
        load_csv(MALFORMED / "bad_group.csv")
    assert e.value.row == 3 and e.value.column == "group"
    assert "row 3" in str(e.value) and "'group'" in str(e.value)


@pytest.mark.parametrize("name", sorted(json.loads((MALFORMED / "expected.json").read_text())))
def test_malformed_corpus(name):
    expected = json.loads((MALFORMED / "expected.json").read_text())[name]
    with pytest.raises(DataError) as e:
        load_csv(MALFORMED / name, CsvSchema(**expected.get("schema", {})))
    assert e.value.row == expected["row"]
    assert e.value.column == expected["column"]


def test_every_malformed_file_has_an_expectation():
    listed = set(json.loads((MALFORMED / "expected.json").read_text()))
    assert listed == {p.name for p in MALFORMED.glob("*.csv")}


def test_empty_and_header_only(tmp_path):
    (tmp_path / "e.csv").write_text("")
    (tmp_path / "h.csv").write_text("x,label,group\n")
    for name in ("e.csv", "h.csv"):
        with pytest.raises(DataError):
            load_csv(tmp_path / name)


def test_round_trip_10k(tmp_path):
    rng = np.random.default_rng(0)
    n = 10_000
    ds = Dataset(rng.normal(size=(n, 5)) * 1e3, np.arange(n) % 4, rng.integers(0, 2, n), 4)
    save_csv(ds, tmp_path / "big.csv")
    assert load_csv(tmp_path / "big.csv").equals(ds)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), [0, 3], [0, 1], 2)
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), [0, 1], [0, 2], 2)
    with pytest.raises(DataError):
        Dataset(np.array([[np.nan], [0]]), [0, 1], [0, 1], 2)


def test_one_hot_view():
    ds = Dataset(np.zeros((3, 1)), [2, 0, 1], [0, 0, 1], 3)
    np.testing.assert_array_equal(ds.one_hot(), np.eye(3)[[2, 0, 1]])


# split

def test_single_stratum_counts():
    ds = Dataset(np.zeros((100, 1)), np.zeros(100, int), np.zeros(100, int), 1)
    assert [len(p) for p in split(ds, (0.7, 0.1, 0.2), seed=0)] == [70, 10, 20]


def test_split_deterministic_and_disjoint():
    ds = generate(SyntheticSpec(n_per_group=57, seed=1))
    a = split_indices(ds, seed=3)
    b = split_indices(ds, seed=3)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    allidx = np.concatenate(a)
    assert np.array_equal(np.sort(allidx), np.arange(len(ds)))
    c = split_indices(ds, seed=4)
    assert not np.array_equal(a[0], c[0])


def test_split_strata_within_one_of_target():
    rng = np.random.default_rng(5)
    n = 10_000
    ds = Dataset(np.zeros((n, 1)), rng.integers(0, 5, n), rng.integers(0, 2, n), 5)
    parts = split(ds, (0.7, 0.1, 0.2), seed=0)
    total = ds.support()
    for part, f in zip(parts, (0.7, 0.1, 0.2)):
        assert np.all(np.abs(part.support() - total * f) <= 1)


def test_split_stratum_proportions_chi_square():
    rng = np.random.default_rng(6)
    n = 10_000
    ds = Dataset(np.zeros((n, 1)), rng.integers(0, 5, n), rng.integers(0, 2, n), 5)
    fr = np.array([0.7, 0.1, 0.2])
    observed = np.stack([p.support().ravel() for p in split(ds, fr, seed=1)], axis=1)  # (10, 3)
    expected = observed.sum(axis=1, keepdims=True) * fr
    chi2 = float(((observed - expected) ** 2 / expected).sum())
    # 20 degrees of freedom; 5% critical value is about 31.4
    assert chi2 < 31.4


def test_split_rejects_bad_fractions():
    ds = Dataset(np.zeros((4, 1)), [0, 0, 0, 0], [0, 1, 0, 1], 1)
    with pytest.raises(ConfigError):
        split(ds, (0.5, 0.6), seed=0)


def test_tiny_stratum_warns():
    ds = Dataset(np.zeros((2, 1)), [0, 0], [0, 1], 1)
    with pytest.warns(UserWarning):
        parts = split(ds, (0.7, 0.1, 0.2), seed=0)
    assert [len(p) for p in parts] == [2, 0, 0]


# generator

def test_generator_counts_and_determinism():
    table = [[10, 20], [0, 5], [7, 7]]
    spec = SyntheticSpec(n_classes=3, n_features=4, n_per_group=table, seed=9)
    ds = generate(spec)
    np.testing.assert_array_equal(ds.support(), table)
    assert generate(spec).equals(ds)
    assert not generate(SyntheticSpec(n_classes=3, n_features=4, n_per_group=table, seed=10)).equals(ds)


def test_generator_spec_json_round_trip(tmp_path):
    spec = SyntheticSpec(bias={2: ClassBias(toward=3, shift=2.0, flip_rate=0.1)}, seed=4)
    (tmp_path / "s.json").write_text(json.dumps(spec.to_dict()))
    assert SyntheticSpec.from_json(tmp_path / "s.json") == spec


@pytest.mark.parametrize("bad", [
    dict(bias={0: ClassBias(toward=0)}),
    dict(bias={0: ClassBias(toward=1, flip_rate=0.5)}),
    dict(n_per_group=-1),
])
def test_generator_rejects_bad_spec(bad):
    with pytest.raises(ConfigError):
        SyntheticSpec(**bad)


def test_label_flips_move_to_confusable_class():
    ds = generate(SyntheticSpec(n_per_group=2000, bias={1: ClassBias(toward=0, flip_rate=0.2)}, seed=0))
    sup = ds.support()
    assert sup[1, 0] == 2000
    assert 1500 < sup[1, 1] < 1700
    assert sup[0, 1] == 2000 + (2000 - sup[1, 1])


def _holdout_gaps(bias, seed):
    spec = dict(separation=4.0, bias=bias)
    train = generate(SyntheticSpec(seed=seed, **spec))
    holdout = generate(SyntheticSpec(seed=1000 + seed, n_per_group=5000, **spec))
    params = fit(train, TrainConfig(seed=seed, epochs=10))
    return evaluate(params, holdout).tpr_gap


def test_unbiased_generator_gives_small_gaps():
    assert np.all(np.abs(_holdout_gaps({}, 0)) <= 0.05)


def test_shift_bias_gives_large_gap():
    gaps = _holdout_gaps({2: ClassBias(toward=3, shift=2.0)}, 0)
    assert abs(gaps[2]) >= 0.15
