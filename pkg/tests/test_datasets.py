import json
import math
from pathlib import Path

import numpy as np
import pytest

from lder.datasets import (
    Dataset,
    dataset_from_dict,
    dataset_from_training_set,
    impute_mean,
    kfold_split,
    load_csv,
    standardize,
    standardize_stats_from_dict,
    synth_pwl,
    write_csv,
)
from lder.errors import DomainError, ImputationError, LoadError
from lder.loss import mse
from lder.models import STREAM_DATA, STREAM_INIT, STREAM_SHUFFLE, STREAM_TRUTH, ModelDims, rng_stream
from lder.morph import flatten
from lder.sgd import init_params


def _write(tmp_path: Path, text: str, name: str = "data.csv") -> Path:
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_csv_with_missing_cell(tmp_path: Path) -> None:
    d = load_csv(_write(tmp_path, "a,b,y\n1,2,3\n4,,6\n7,8,9\n"))
    assert d.name == "data"
    assert d.feature_names == ("a", "b")
    assert d.target_name == "y"
    assert d.y.tolist() == [3.0, 6.0, 9.0]
    assert math.isnan(d.X[1, 1])
    assert d.missing_count == 1
    with pytest.raises(DomainError):
        d.training_set()


def test_load_csv_named_target_and_blank_lines(tmp_path: Path) -> None:
    d = load_csv(_write(tmp_path, "y,a\n1,10\n\n2,20\n"), target_column="y", name="demo")
    assert d.name == "demo"
    assert d.feature_names == ("a",)
    assert d.X[:, 0].tolist() == [10.0, 20.0]
    assert d.y.tolist() == [1.0, 2.0]


@pytest.mark.parametrize(
    "text,row",
    [
        ("", 1),
        ("a,y\n", 1),
        ("a,y\n1,2\n3\n", 3),
        ("a,y\n1,\n", 2),
        ("a,y\n1,abc\n", 2),
        ("a,y\n1,inf\n", 2),
        ("y\n1\n", 1),
    ],
)
def test_load_csv_errors_carry_row(tmp_path: Path, text: str, row: int) -> None:
    with pytest.raises(LoadError) as info:
        load_csv(_write(tmp_path, text))
    assert info.value.row == row


def test_load_csv_unknown_target_and_missing_file(tmp_path: Path) -> None:
    with pytest.raises(LoadError) as info:
        load_csv(_write(tmp_path, "a,y\n1,2\n"), target_column="z")
    assert info.value.column == "z"
    with pytest.raises(LoadError):
        load_csv(tmp_path / "missing.csv")


def test_write_csv_roundtrip(tmp_path: Path) -> None:
    rng = np.random.default_rng(0)
    X = rng.standard_normal((6, 3))
    X[2, 1] = np.nan
    d = Dataset(name="rt", X=X, y=rng.standard_normal(6), feature_names=("p", "q", "r"), target_name="out")
    back = load_csv(write_csv(d, tmp_path / "rt.csv"), target_column="out")
    assert back.feature_names == d.feature_names
    assert np.array_equal(back.y, d.y)
    assert np.array_equal(np.isnan(back.X), np.isnan(d.X))
    assert np.array_equal(np.nan_to_num(back.X), np.nan_to_num(d.X))


def test_dataset_dict_roundtrip() -> None:
    X = np.array([[1.0, np.nan], [2.0, 3.0]])
    d = Dataset(name="small", X=X, y=np.array([0.5, 1.5]), feature_names=("a", "b"))
    payload = json.loads(json.dumps(d.as_dict()))
    assert payload["X"][0][1] is None
    back = dataset_from_dict(payload)
    assert back.missing_count == 1
    assert back.X[1].tolist() == [2.0, 3.0]
    with pytest.raises(LoadError):
        dataset_from_dict({"name": "x"})


def test_impute_mean() -> None:
    X = np.array([[1.0, 2.0], [3.0, np.nan], [5.0, 6.0]])
    d = impute_mean(Dataset(name="d", X=X, y=np.zeros(3), feature_names=("a", "b")))
    assert d.X.tolist() == [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]
    assert d.missing_count == 0

    full = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(impute_mean(Dataset(name="f", X=full, y=np.zeros(2), feature_names=("a", "b"))).X, full)

    empty = np.array([[1.0, np.nan], [2.0, np.nan]])
    with pytest.raises(ImputationError) as info:
        impute_mean(Dataset(name="e", X=empty, y=np.zeros(2), feature_names=("a", "b")))
    assert info.value.column == "b"


def test_standardize_examples() -> None:
    Xs, stats = standardize(np.array([[1.0, 5.0], [3.0, 5.0]]))
    assert Xs.tolist() == [[-1.0, 0.0], [1.0, 0.0]]
    assert stats.mean.tolist() == [2.0, 5.0]
    assert stats.std[0] == 1.0

    rng = np.random.default_rng(1)
    X = rng.normal(3.0, 2.0, size=(50, 4))
    Xs, stats = standardize(X)
    assert np.max(np.abs(Xs.mean(axis=0))) <= 1e-12
    assert np.max(np.abs(Xs.std(axis=0) - 1.0)) <= 1e-12
    assert np.max(np.abs(stats.inverse(Xs) - X)) <= 1e-12

    back = standardize_stats_from_dict(json.loads(json.dumps(stats.as_dict())))
    assert np.array_equal(back.apply(X), Xs)
    with pytest.raises(LoadError):
        standardize_stats_from_dict({"mean": [0.0, 1.0], "std": [1.0]})


def test_kfold_split_sizes_and_partition() -> None:
    plan = kfold_split(11, 5, seed=3)
    assert sorted(plan.sizes(), reverse=True) == [3, 2, 2, 2, 2]
    seen = np.concatenate([plan.test_indices(f) for f in range(plan.k)])
    assert sorted(seen.tolist()) == list(range(11))
    for f in range(plan.k):
        assert set(plan.train_indices(f)).isdisjoint(plan.test_indices(f))
        assert len(plan.train_indices(f)) + len(plan.test_indices(f)) == 11

    assert np.array_equal(kfold_split(11, 5, seed=3).assignments, plan.assignments)
    loo = kfold_split(4, 4, seed=0)
    assert loo.sizes() == [1, 1, 1, 1]


def test_kfold_split_rejects_bad_k() -> None:
    with pytest.raises(DomainError):
        kfold_split(5, 1, seed=0)
    with pytest.raises(DomainError):
        kfold_split(5, 6, seed=0)


def test_synth_pwl_noise_free_and_noisy() -> None:
    dims = ModelDims(n=3, r1=2, r2=2)
    T, truth = synth_pwl(dims, 200, 0.0, seed=4)
    assert T.X.shape == (200, 3)
    assert np.all(np.abs(T.X) <= 1.0)
    assert mse(truth, T) == 0.0

    T, truth = synth_pwl(dims, 10_000, 0.1, seed=4)
    assert abs(mse(truth, T) - 0.01) <= 0.002


def test_synth_pwl_determinism_and_offset() -> None:
    dims = ModelDims(n=2, r1=3, r2=1)
    T1, _ = synth_pwl(dims, 30, 0.05, seed=9)
    T2, _ = synth_pwl(dims, 30, 0.05, seed=9)
    assert np.array_equal(T1.X, T2.X) and np.array_equal(T1.y, T2.y)

    base, _ = synth_pwl(dims, 30, 0.0, seed=9)
    shifted, _ = synth_pwl(dims, 30, 0.0, seed=9, offset=5.0)
    assert np.max(np.abs(shifted.y - base.y - 5.0)) <= 1e-12

    with pytest.raises(DomainError):
        synth_pwl(dims, 0, 0.0, seed=0)
    with pytest.raises(DomainError):
        synth_pwl(dims, 5, -1.0, seed=0)


@pytest.mark.parametrize("seed", [0, 3, 17])
def test_synth_truth_is_not_the_trainer_start(seed: int) -> None:
    dims = ModelDims(n=2, r1=2, r2=2)
    T, truth = synth_pwl(dims, 50, 0.0, seed=seed)
    start = init_params(dims, seed, 1.0)
    assert not np.allclose(flatten(truth), flatten(start))
    assert mse(start, T) > 1e-3


def test_seed_streams_are_independent() -> None:
    streams = (STREAM_INIT, STREAM_SHUFFLE, STREAM_TRUTH, STREAM_DATA)
    draws = [rng_stream(7, s).random(4) for s in streams]
    for i in range(len(draws)):
        for j in range(i + 1, len(draws)):
            assert not np.allclose(draws[i], draws[j])
    assert np.array_equal(rng_stream(7, STREAM_DATA).random(4), draws[3])
    assert not np.allclose(np.random.default_rng(7).random(4), draws[0])


def test_dataset_from_training_set_names_features() -> None:
    T, _ = synth_pwl(ModelDims(n=2, r1=1, r2=1), 5, 0.0, seed=0)
    d = dataset_from_training_set("syn", T)
    assert d.feature_names == ("x1", "x2")
    assert d.training_set().m == 5
