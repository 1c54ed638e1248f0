import numpy as np
import pytest

from stopmap import dataset as ds
from stopmap import evalharness as ev
from stopmap.errors import DataError, ShapeError
from stopmap.featurize import FeaturizeConfig
from stopmap.nncore import TrainConfig

# Reference aggregate confusion matrix (rows true, cols predicted, AM/JM/AF/JF)
# with frozen expected metrics: 74/96 overall, 30/48 male, 44/48 female.
REFERENCE_CM = [
    [22, 2, 0, 0],
    [9, 8, 1, 6],
    [0, 4, 20, 0],
    [0, 0, 0, 24],
]


def planted_items(seed=0, cages=4, per_cage=8, shape=(2, 6, 6), scale=4.0):
    """Low-noise class prototypes so tiny CNNs can learn them quickly."""
    rng = np.random.default_rng(seed)
    protos = np.abs(rng.normal(scale=scale, size=(4, *shape)))
    items = []
    for cage in range(cages):
        for i in range(per_cage):
            c = i % 4
            feats = protos[c] + rng.normal(scale=0.1, size=shape)
            items.append((f"c{cage}r{i}", f"cage{cage}", np.abs(feats), c))
    return items


class TestConfusionMatrix:
    def test_add_and_total(self):
        cm = ev.ConfusionMatrix()
        cm.add(0, 0)
        cm.add(0, 1)
        cm.add(3, 3)
        assert cm.total == 3
        assert cm.counts[0, 1] == 1

    def test_sum_of_matrices(self):
        a = ev.ConfusionMatrix(np.eye(4, dtype=int))
        b = ev.ConfusionMatrix(np.ones((4, 4), dtype=int))
        assert (a + b).total == 4 + 16

    def test_bad_shape(self):
        with pytest.raises(ShapeError):
            ev.ConfusionMatrix(np.zeros((3, 3)))

    def test_negative_counts(self):
        with pytest.raises(DataError):
            ev.ConfusionMatrix(-np.ones((4, 4)))


class TestMetrics:
    def test_reference_matrix_exact(self):
        m = ev.metrics(ev.ConfusionMatrix(np.array(REFERENCE_CM)))
        assert m["overall"] == 74 / 96
        assert m["male"] == 30 / 48
        assert m["female"] == 44 / 48

    def test_perfect(self):
        m = ev.metrics(ev.ConfusionMatrix(5 * np.eye(4, dtype=int)))
        assert m == {"overall": 1.0, "male": 1.0, "female": 1.0}

    def test_empty_groups_are_none(self):
        m = ev.metrics(ev.ConfusionMatrix())
        assert m["overall"] is None and m["male"] is None and m["female"] is None
        cm = ev.ConfusionMatrix()
        cm.add(0, 0)  # only male samples
        m = ev.metrics(cm)
        assert m["female"] is None and m["male"] == 1.0

    def test_values_are_plain_floats(self):
        m = ev.metrics(ev.ConfusionMatrix(np.eye(4, dtype=int)))
        assert all(type(v) is float for v in m.values())


class TestTrain:
    def test_loss_trace_length_and_decrease(self):
        items = planted_items()
        data = [(it[2], it[3]) for it in items]
        cfg = TrainConfig(learning_rate=0.1, epochs=30, batch_size=8, rng_seed=0)
        params, losses = ev.train(data, cfg)
        assert len(losses) == 30
        assert losses[-1] < losses[0]
        cm = ev.evaluate(params, data)
        assert np.trace(cm.counts) / cm.total >= 0.9

    def test_deterministic(self):
        data = [(it[2], it[3]) for it in planted_items()]
        cfg = TrainConfig(learning_rate=0.1, epochs=3, batch_size=8, rng_seed=1)
        p1, l1 = ev.train(data, cfg)
        p2, l2 = ev.train(data, cfg)
        assert l1 == l2
        assert np.array_equal(p1.linear_weights, p2.linear_weights)

    def test_seed_changes_init(self):
        data = [(it[2], it[3]) for it in planted_items()]
        cfg = TrainConfig(epochs=1, rng_seed=0)
        p1, _ = ev.train(data, cfg, rng_seed=0)
        p2, _ = ev.train(data, cfg, rng_seed=1)
        assert not np.array_equal(p1.conv_a_weights, p2.conv_a_weights)

    def test_empty_train_set(self):
        with pytest.raises(DataError):
            ev.train([], TrainConfig())


class TestEvaluate:
    def test_counts_rows_are_true_labels(self):
        items = planted_items()
        data = [(it[2], it[3]) for it in items]
        cfg = TrainConfig(learning_rate=0.1, epochs=20, batch_size=8, rng_seed=0)
        params, _ = ev.train(data, cfg)
        cm = ev.evaluate(params, data)
        row_totals = cm.counts.sum(axis=1)
        for c in range(4):
            assert row_totals[c] == sum(1 for _, lab in data if lab == c)

    def test_empty_test_set(self):
        assert ev.evaluate(None, []).total == 0


class TestFoldSeeds:
    def test_distinct_and_stable(self):
        seeds = [ev.fold_seed(7, i) for i in range(12)]
        assert len(set(seeds)) == 12
        assert seeds == [ev.fold_seed(7, i) for i in range(12)]

    def test_base_seed_matters(self):
        assert ev.fold_seed(0, 0) != ev.fold_seed(1, 0)


class TestLoco:
    def test_folds_partition_items(self):
        items = planted_items()
        folds = ev.loco_item_folds(items)
        assert [f[0] for f in folds] == sorted({it[1] for it in items})
        for cage, train, test in folds:
            assert all(it[1] == cage for it in test)
            assert all(it[1] != cage for it in train)
            assert len(train) + len(test) == len(items)

    def test_single_cage_rejected(self):
        with pytest.raises(DataError):
            ev.loco_item_folds([("r", "cage0", None, 0)])

    def test_run_loco_items_report(self):
        items = planted_items()
        cfg = TrainConfig(learning_rate=0.1, epochs=25, batch_size=8, rng_seed=0)
        saved = {}
        report = ev.run_loco_items(items, cfg, save_fold_params=saved)
        assert set(report.fold_matrices) == {f"cage{i}" for i in range(4)}
        assert report.aggregate.total == len(items)
        total = ev.ConfusionMatrix()
        for cm in report.fold_matrices.values():
            total = total + cm
        assert np.array_equal(total.counts, report.aggregate.counts)
        assert report.overall_accuracy >= 0.75  # prototypes generalize across cages
        assert set(saved) == set(report.fold_matrices)
        assert report.wall_time > 0

    def test_parallel_matches_serial(self):
        items = planted_items(1)
        cfg = TrainConfig(learning_rate=0.1, epochs=10, batch_size=8, rng_seed=3)
        serial = ev.run_loco_items(items, cfg, jobs=1)
        parallel = ev.run_loco_items(items, cfg, jobs=2)
        assert np.array_equal(serial.aggregate.counts, parallel.aggregate.counts)
        for cage in serial.fold_matrices:
            assert np.array_equal(
                serial.fold_matrices[cage].counts,
                parallel.fold_matrices[cage].counts,
            )

    def test_run_loco_end_to_end_on_simulated_data(self):
        recs = ds.simulate(ds.SimConfig(cages=2, duration=60.0, rng_seed=0))
        fcfg = FeaturizeConfig(grid_n=10, intervals_t=2, interval_len=30.0)
        tcfg = TrainConfig(epochs=2, batch_size=8, rng_seed=0)
        report = ev.run_loco(recs, fcfg, tcfg)
        assert report.aggregate.total == len(recs)
        assert "featurize" in report.config and "train" in report.config


class TestEvalReport:
    def test_round_trip(self, tmp_path):
        items = planted_items()
        cfg = TrainConfig(learning_rate=0.1, epochs=5, batch_size=8, rng_seed=0)
        report = ev.run_loco_items(items, cfg)
        report.save(tmp_path / "report.json")
        back = ev.EvalReport.load(tmp_path / "report.json")
        assert np.array_equal(back.aggregate.counts, report.aggregate.counts)
        assert back.overall_accuracy == report.overall_accuracy
        assert set(back.fold_matrices) == set(report.fold_matrices)
