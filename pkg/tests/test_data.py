"""Dataset generators: determinism, split discipline, batching, ingestion."""

import math
import random

import pytest

from kdlab.data import (
    Batch,
    Dataset,
    batch_iter,
    gaussian_mixture,
    load_tabular,
    mixture_means,
    spirals,
    split_train_test,
)
from kdlab.errors import ContractError, ParseError


def _rows(ds: Dataset) -> list[tuple]:
    d = ds.dim
    return [tuple(ds.features.data[i * d : (i + 1) * d]) for i in range(ds.n)]


class TestGaussianMixture:
    def test_bitwise_determinism(self):
        a_train, a_test = gaussian_mixture(4, 3, 20, 0.5, seed=42)
        b_train, b_test = gaussian_mixture(4, 3, 20, 0.5, seed=42)
        assert a_train.features.data == b_train.features.data
        assert a_test.features.data == b_test.features.data
        assert a_train.labels == b_train.labels

    def test_split_sizes_and_tags(self):
        train, test = gaussian_mixture(5, 4, 10, 0.5, seed=0)
        assert train.split == "train" and test.split == "test"
        assert train.n == 5 * 8 and test.n == 5 * 2

    def test_splits_disjoint(self):
        train, test = gaussian_mixture(3, 4, 15, 0.7, seed=7)
        assert not set(_rows(train)) & set(_rows(test))

    def test_tiny_spread_nearest_mean_is_perfect(self):
        classes, dim = 4, 5
        seed = 11
        _, test = gaussian_mixture(classes, dim, 30, 1e-9, seed=seed)
        means = mixture_means(classes, dim, seed)
        hits = 0
        for i in range(test.n):
            row = test.features.data[i * dim : (i + 1) * dim]
            dists = [
                sum((row[j] - mu[j]) ** 2 for j in range(dim)) for mu in means
            ]
            hits += dists.index(min(dists)) == test.labels[i]
        assert hits == test.n

    def test_means_lie_on_unit_sphere(self):
        for mu in mixture_means(6, 8, seed=3):
            assert abs(math.sqrt(sum(v * v for v in mu)) - 1.0) < 1e-12

    def test_contract_errors(self):
        with pytest.raises(ContractError):
            gaussian_mixture(1, 4, 10, 0.5, seed=0)
        with pytest.raises(ContractError):
            gaussian_mixture(3, 1, 10, 0.5, seed=0)
        with pytest.raises(ContractError):
            gaussian_mixture(3, 4, 10, 0.0, seed=0)
        with pytest.raises(ContractError):
            gaussian_mixture(3, 4, 1, 0.5, seed=0)


class TestSpirals:
    def test_noise_free_arms_disjoint(self):
        train, test = spirals(2, 40, 0.0, seed=5)
        pts = _rows(train) + _rows(test)
        assert len(pts) == len(set(pts))

    def test_determinism(self):
        a = spirals(3, 25, 0.3, seed=9)[0]
        b = spirals(3, 25, 0.3, seed=9)[0]
        assert a.features.data == b.features.data

    def test_classes_balanced_per_split(self):
        train, test = spirals(3, 20, 0.1, seed=1)
        for c in range(3):
            assert sum(1 for v in train.labels if v == c) == 16
            assert sum(1 for v in test.labels if v == c) == 4

    def test_linear_model_below_mlp_over_seeds(self):
        # the arms are not linearly separable; hidden units must help
        from statistics import mean

        from kdlab.models import ModelSpec
        from kdlab.training import Schedule, train_scratch

        data = spirals(3, 60, 0.08, seed=2)
        sched = Schedule(epochs=120, batch_size=16, lr0=0.1, decay_stages=(90,),
                         decay_rate=0.1, momentum=0.9, weight_decay=1e-4)
        linear = mean(
            train_scratch(ModelSpec(2, (), 3), data, sched, s).final_accuracy
            for s in range(1, 6)
        )
        mlp = mean(
            train_scratch(ModelSpec(2, (32,), 3), data, sched, s).final_accuracy
            for s in range(1, 6)
        )
        assert linear < mlp


class TestLoadTabular:
    def test_two_row_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0,1.0,2.0\n1,3.0,-4.0\n")
        ds = load_tabular(str(p), classes=2)
        assert ds.n == 2 and ds.dim == 2
        assert list(ds.labels) == [0, 1]

    def test_ragged_row_names_line(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0,1.0,2.0\n1,3.0\n")
        with pytest.raises(ParseError, match="line 2"):
            load_tabular(str(p), classes=2)

    def test_non_numeric_field_names_line(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0,1.0,2.0\n1,x,4.0\n")
        with pytest.raises(ParseError, match="line 2"):
            load_tabular(str(p), classes=2)

    def test_label_out_of_range_names_line(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0,1.0\n5,2.0\n")
        with pytest.raises(ParseError, match="line 2"):
            load_tabular(str(p), classes=2)

    def test_standardization(self, tmp_path):
        rng = random.Random(3)
        rows = [
            f"{rng.randrange(3)},{rng.uniform(-9, 9)},{rng.uniform(100, 200)}"
            for _ in range(40)
        ]
        p = tmp_path / "d.csv"
        p.write_text("\n".join(rows) + "\n")
        ds = load_tabular(str(p), classes=3)
        for j in range(ds.dim):
            col = [ds.features.data[i * ds.dim + j] for i in range(ds.n)]
            mean = math.fsum(col) / len(col)
            std = math.sqrt(math.fsum((v - mean) ** 2 for v in col) / len(col))
            assert abs(mean) < 1e-9
            assert abs(std - 1.0) < 1e-9

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(OSError):
            load_tabular(str(tmp_path / "nope.csv"), classes=2)


class TestSplitTrainTest:
    def test_partition(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("\n".join(f"{i % 2},{i}.0" for i in range(10)) + "\n")
        full = load_tabular(str(p), classes=2)
        train, test = split_train_test(full, 0.2)
        assert train.n == 8 and test.n == 2
        assert not set(_rows(train)) & set(_rows(test))


class TestBatchIter:
    def test_single_batch_when_batch_size_covers_all(self):
        train, _ = gaussian_mixture(3, 4, 10, 0.5, seed=0)
        batches = list(batch_iter(train, batch_size=1000, seed=1))
        assert len(batches) == 1
        assert batches[0].features.shape == (train.n, 4)

    def test_every_sample_exactly_once(self):
        train, _ = gaussian_mixture(3, 4, 10, 0.5, seed=0)
        seen = []
        for batch in batch_iter(train, batch_size=7, seed=5, epoch=2):
            seen.extend(_rows(Dataset(batch.features, batch.labels, 3, "train")))
        assert sorted(seen) == sorted(_rows(train))

    def test_same_seed_epoch_reproduces_order(self):
        train, _ = gaussian_mixture(3, 4, 12, 0.5, seed=0)
        a = [b.features.data for b in batch_iter(train, 8, seed=4, epoch=3)]
        b = [b.features.data for b in batch_iter(train, 8, seed=4, epoch=3)]
        assert a == b

    def test_epochs_reshuffle(self):
        train, _ = gaussian_mixture(3, 4, 40, 0.5, seed=0)
        orders = []
        for epoch in range(10):
            first = next(iter(batch_iter(train, 16, seed=4, epoch=epoch)))
            orders.append(tuple(first.features.data))
        assert len(set(orders)) > 1

    def test_final_batch_short(self):
        train, _ = gaussian_mixture(2, 4, 10, 0.5, seed=0)  # 16 train rows
        sizes = [b.features.shape[0] for b in batch_iter(train, 6, seed=0)]
        assert sizes == [6, 6, 4]

    def test_bad_batch_size(self):
        train, _ = gaussian_mixture(2, 4, 10, 0.5, seed=0)
        with pytest.raises(ContractError):
            list(batch_iter(train, 0, seed=0))
