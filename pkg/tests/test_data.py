import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfssd.data import (
    CsvSchema,
    Dataset,
    FullClass,
    RandomFraction,
    SubClass,
    load_csv,
    make_split,
    sample_blobs_like,
    save_csv,
    synthesize_blobs,
)
from lfssd.errors import EmptyFileError, ParseError, SchemaError, SplitError
from lfssd.model import ModelSpec, init_model
from lfssd.training import TrainConfig, accuracy, train


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_small_csv(tmp_path):
    p = write(tmp_path / "d.csv", "a,b,y\n1.5,2,0\n-3,4e-1,1\n0,0,2\n")
    ds = load_csv(p, CsvSchema(("a", "b"), "y"))
    assert ds.features.shape == (3, 2)
    np.testing.assert_array_equal(ds.features[1], [-3.0, 0.4])
    np.testing.assert_array_equal(ds.fine_labels, [0, 1, 2])
    assert ds.coarse_labels is None


def test_missing_label_column(tmp_path):
    p = write(tmp_path / "d.csv", "a,b\n1,2\n")
    with pytest.raises(SchemaError) as info:
        load_csv(p, CsvSchema(("a", "b"), "y"))
    assert info.value.column == "y"


def test_non_numeric_cell_reports_row(tmp_path):
    p = write(tmp_path / "d.csv", "a,b,y\n1,2,0\n3,abc,1\n")
    with pytest.raises(ParseError) as info:
        load_csv(p, CsvSchema(("a", "b"), "y"))
    assert info.value.row == 3
    assert info.value.column == "b"
    assert info.value.value == "abc"


def test_negative_label_rejected(tmp_path):
    p = write(tmp_path / "d.csv", "a,y\n1,-1\n")
    with pytest.raises(ParseError):
        load_csv(p, CsvSchema(("a",), "y"))


def test_empty_file(tmp_path):
    with pytest.raises(EmptyFileError):
        load_csv(write(tmp_path / "d.csv", ""), CsvSchema(("a",), "y"))
    with pytest.raises(EmptyFileError):
        load_csv(write(tmp_path / "e.csv", "a,y\n"), CsvSchema(("a",), "y"))


def test_csv_round_trip(tmp_path):
    ds = synthesize_blobs(2, 5, 3, 4.0, seed=0, subclasses_per_class=2)
    schema = save_csv(ds, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv", schema)
    assert back.features.tobytes() == ds.features.tobytes()
    np.testing.assert_array_equal(back.coarse_labels, ds.coarse_labels)


def test_blob_counts_and_determinism():
    a = synthesize_blobs(3, 100, 2, 8.0, seed=4)
    b = synthesize_blobs(3, 100, 2, 8.0, seed=4)
    assert len(a) == 300
    assert set(a.fine_labels.tolist()) == {0, 1, 2}
    assert a.features.tobytes() == b.features.tobytes()


def test_blob_means_respect_separation():
    ds = synthesize_blobs(6, 2000, 5, 3.0, seed=9)
    means = np.array([ds.features[ds.fine_labels == c].mean(axis=0) for c in range(6)])
    d = np.linalg.norm(means[:, None] - means[None], axis=-1)
    # sample means are within ~0.1 of the true centres
    assert d[np.triu_indices(6, 1)].min() > 3.0 - 0.2


def test_subclass_blobs():
    ds = synthesize_blobs(4, 10, 3, 5.0, seed=1, subclasses_per_class=3)
    assert len(ds) == 120
    assert ds.n_fine == 12 and ds.n_coarse == 4
    np.testing.assert_array_equal(ds.coarse_labels, ds.fine_labels // 3)


def test_held_out_draws_share_centres():
    args = dict(n_classes=3, n_per_class=500, n_features=2, separation=8.0, seed=3)
    train_set = synthesize_blobs(**args)
    test_set = sample_blobs_like(args, 500, seed=77)
    for c in range(3):
        gap = train_set.features[train_set.fine_labels == c].mean(0) - test_set.features[test_set.fine_labels == c].mean(0)
        assert np.linalg.norm(gap) < 0.3
    assert not np.array_equal(train_set.features, test_set.features)


def test_well_separated_blobs_are_learnable():
    # Desk run: separation 8, unit variance, a linear probe trained on
    # everything reaches 100% on held-out draws.
    args = dict(n_classes=3, n_per_class=100, n_features=2, separation=8.0, seed=5)
    ds = synthesize_blobs(**args)
    test_set = sample_blobs_like(args, 100, seed=6)
    spec = ModelSpec((2, 3), init_seed=0)
    theta, _ = train(spec, init_model(spec), ds, np.arange(len(ds)), TrainConfig(epochs=20, learning_rate=0.05))
    assert accuracy(spec, theta, test_set, np.arange(len(test_set))) >= 95.0


def test_random_fraction_split():
    ds = Dataset(np.zeros((100, 1)), np.zeros(100, dtype=int))
    split = make_split(ds, RandomFraction(0.1, seed=3))
    assert split.forget_indices.size == 10
    assert split.retain_indices.size == 90
    assert not set(split.forget_indices) & set(split.retain_indices)


def test_full_class_split():
    ds = synthesize_blobs(3, 100, 2, 8.0, seed=0)
    split = make_split(ds, FullClass(2))
    assert split.forget_indices.size == 100
    assert np.all(ds.fine_labels[split.forget_indices] == 2)


def test_subclass_split_keeps_all_coarse_classes():
    ds = synthesize_blobs(3, 20, 2, 5.0, seed=0, subclasses_per_class=2)
    split = make_split(ds, SubClass(4))
    assert np.all(ds.fine_labels[split.forget_indices] == 4)
    assert set(ds.coarse_labels[split.retain_indices].tolist()) == {0, 1, 2}


@pytest.mark.parametrize("rule", [FullClass(6), SubClass(9), RandomFraction(0.0), RandomFraction(1.0)])
def test_bad_rules(rule):
    ds = synthesize_blobs(3, 5, 2, 5.0, seed=0, subclasses_per_class=2)
    with pytest.raises(SplitError):
        make_split(ds, rule)


def test_subclass_requires_coarse_labels():
    with pytest.raises(SplitError):
        make_split(synthesize_blobs(3, 5, 2, 5.0, seed=0), SubClass(0))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 300), fraction=st.floats(0.001, 0.999), seed=st.integers(0, 2**32))
def test_partition_invariant_random(n, fraction, seed):
    ds = Dataset(np.zeros((n, 1)), np.zeros(n, dtype=int))
    split = make_split(ds, RandomFraction(fraction, seed))
    both = np.concatenate([split.forget_indices, split.retain_indices])
    assert np.array_equal(np.sort(both), np.arange(n))
    assert split.forget_indices.size == int(np.floor(fraction * n + 0.5))
    again = make_split(ds, RandomFraction(fraction, seed))
    assert np.array_equal(again.forget_indices, split.forget_indices)


@pytest.mark.parametrize("cls", range(6))
def test_partition_invariant_class_rules(cls):
    ds = synthesize_blobs(3, 7, 2, 5.0, seed=1, subclasses_per_class=2)
    for rule in (FullClass(cls), SubClass(cls)):
        split = make_split(ds, rule)
        both = np.concatenate([split.forget_indices, split.retain_indices])
        assert np.array_equal(np.sort(both), np.arange(len(ds)))
