import numpy as np
import pytest

from failcast import forest as forest_mod
from failcast import ocsvm as ocsvm_mod
from failcast import pipeline
from failcast.errors import DegenerateTrainingError, StratificationError
from failcast.features import FeatureConfig, Instance
from failcast.forest import ForestParams
from failcast.ocsvm import OcsvmModel, OcsvmParams
from failcast.pipeline import CascadeModel, GridSpec
from failcast.trace_model import FailureType

DIM = 12  # FeatureConfig(lags=1)
FCFG = FeatureConfig(lags=1)


def make_instances(n_normal=300, n_fail=60, seed=0, separation=0.5):
    """Normals cluster near 0.3, failures near 0.3 + separation."""
    rng = np.random.default_rng(seed)
    instances = []
    for i in range(n_normal):
        x = np.clip(rng.normal(0.3, 0.03, DIM), 0, 1)
        instances.append(Instance(FailureType.NORMAL, x, machine_id=0, interval=i))
    for i in range(n_fail):
        x = np.clip(rng.normal(0.3 + separation, 0.03, DIM), 0, 1)
        cls = FailureType(1 + i % 3)
        instances.append(Instance(cls, x, machine_id=1, interval=i))
    return instances


def cascade(instances, nu=0.1, gamma=1.0, trees=20, seed=0):
    return pipeline.train(
        instances,
        OcsvmParams(nu=nu, gamma=gamma),
        ForestParams(n_trees=trees, mtry=4, rng_seed=seed),
        FCFG,
    )


class TestTrain:
    def test_forest_trains_only_on_flagged_instances(self):
        instances = make_instances()
        model = cascade(instances)
        n_fail = sum(1 for i in instances if i.y != FailureType.NORMAL)
        stage2 = model.manifest["data"]["stage2_train"]
        # all failures flagged plus the leaked normal tail
        assert stage2 >= n_fail
        assert stage2 < len(instances)
        counts = model.manifest["data"]["stage2_class_counts"]
        assert sum(counts[1:]) == n_fail

    def test_nu_one_routes_everything_to_stage_two(self):
        instances = make_instances(n_normal=80, n_fail=20)
        model = cascade(instances, nu=1.0)
        # exact-boundary points (decision == 0) count as normal, so allow
        # the odd one out; everything else must reach stage 2
        assert model.manifest["data"]["stage2_train"] >= len(instances) - 2
        counts = model.manifest["data"]["stage2_class_counts"]
        assert sum(counts[1:]) == 20

    def test_no_surviving_failures_is_degenerate(self):
        # failures identical to the normal cluster center: stage 1 clears them
        rng = np.random.default_rng(1)
        instances = [
            Instance(FailureType.NORMAL, np.clip(rng.normal(0.3, 0.05, DIM), 0, 1), 0, i)
            for i in range(200)
        ]
        center = np.full(DIM, 0.3)
        instances += [
            Instance(FailureType.IMMEDIATE_REBOOT, center.copy(), 1, i)
            for i in range(3)
        ]
        with pytest.raises(DegenerateTrainingError):
            pipeline.train(
                instances,
                OcsvmParams(nu=0.05, gamma=0.5),
                ForestParams(n_trees=5, rng_seed=0),
                FCFG,
            )

    def test_needs_both_classes(self):
        rng = np.random.default_rng(2)
        only_normals = [
            Instance(FailureType.NORMAL, rng.random(DIM), 0, i) for i in range(50)
        ]
        with pytest.raises(ValueError):
            cascade(only_normals)

    def test_stage_two_batch_is_exactly_the_flagged_set(self):
        instances = make_instances(n_normal=200, n_fail=40, seed=3)
        model = cascade(instances, nu=0.15)
        X = np.stack([i.x for i in instances])
        flagged = int(np.sum(ocsvm_mod.classify(model.ocsvm, X) == 1))
        assert model.manifest["data"]["stage2_train"] == flagged

    def test_manifest_records_hyperparameters_and_digest(self):
        instances = make_instances(n_normal=150, n_fail=30)
        model = cascade(instances, nu=0.2, gamma=0.7, trees=9, seed=5)
        m = model.manifest
        assert m["ocsvm"]["nu"] == 0.2
        assert m["forest"]["n_trees"] == 9
        assert len(m["data"]["sha256"]) == 64


class TestPredict:
    def test_cleared_points_are_normal_without_forest(self, monkeypatch):
        instances = make_instances()
        model = cascade(instances)
        normal_x = np.full(DIM, 0.3)
        assert ocsvm_mod.classify(model.ocsvm, normal_x) == 0

        def boom(*args, **kwargs):
            raise AssertionError("forest must not run for cleared points")

        monkeypatch.setattr(pipeline.forest_mod, "predict", boom)
        assert pipeline.predict(model, normal_x) == FailureType.NORMAL

    def test_flagged_points_take_forest_class(self):
        instances = make_instances()
        model = cascade(instances)
        far = np.full(DIM, 0.8)
        assert ocsvm_mod.classify(model.ocsvm, far) == 1
        assert pipeline.predict(model, far) == forest_mod.predict(model.forest, far)

    def test_forest_may_return_normal(self):
        # stage 2 trained on leaked normals only votes Normal for them
        instances = make_instances()
        model = cascade(instances, nu=0.3)
        flagged_normals = [
            i.x
            for i in instances
            if i.y == FailureType.NORMAL
            and ocsvm_mod.classify(model.ocsvm, i.x) == 1
        ]
        assert flagged_normals, "nu=0.3 must leak some normals"
        got = {int(pipeline.predict(model, x)) for x in flagged_normals}
        assert 0 in got

    def test_batch_matches_single_calls(self):
        instances = make_instances(n_normal=100, n_fail=30, seed=4)
        model = cascade(instances)
        X = np.stack([i.x for i in instances[::5]])
        preds, scores = pipeline.predict_batch(model, X)
        for x, p, s in zip(X, preds, scores):
            assert pipeline.predict(model, x) == p
            assert pipeline.score(model, x) == pytest.approx(s, abs=1e-12)


class TestScore:
    def _toy(self, rho, forest_class):
        sv = np.zeros((1, DIM))
        m1 = OcsvmModel(
            support_vectors=sv, alphas=np.array([1.0]), rho=rho, gamma=1.0
        )
        X = np.random.default_rng(0).random((10, DIM))
        y = np.full(10, forest_class)
        m2 = forest_mod.train(X, y, ForestParams(n_trees=4, rng_seed=0))
        return CascadeModel(ocsvm=m1, forest=m2, feature_config=FCFG, manifest={})

    def test_boundary_point_scores_quarter(self):
        x = np.full(DIM, 0.1)
        sv = np.zeros((1, DIM))
        rho = float(np.exp(-1.0 * np.sum((sv[0] - x) ** 2)))
        model = self._toy(rho=rho, forest_class=1)
        assert ocsvm_mod.decision(model.ocsvm, x) == 0.0
        assert pipeline.score(model, x) == 0.25

    def test_unanimous_failure_votes_score_one(self):
        model = self._toy(rho=1.5, forest_class=2)  # everything flagged
        x = np.full(DIM, 0.5)
        assert pipeline.score(model, x) == 1.0

    def test_unanimous_normal_votes_score_half(self):
        model = self._toy(rho=1.5, forest_class=0)
        x = np.full(DIM, 0.5)
        assert pipeline.score(model, x) == 0.5

    def test_score_prediction_consistency(self):
        instances = make_instances(seed=9)
        model = cascade(instances)
        rng = np.random.default_rng(10)
        for x in rng.random((100, DIM)):
            s = pipeline.score(model, x)
            if pipeline.predict(model, x) == FailureType.NORMAL and (
                ocsvm_mod.classify(model.ocsvm, x) == 0
            ):
                assert s < 0.5
            else:
                assert s >= 0.5
            assert 0.0 < s <= 1.0


class TestGridSearch:
    def test_single_cell_identity(self):
        instances = make_instances(n_normal=150, n_fail=30)
        grid = GridSpec(gammas=(1.0,), nus=(0.1,), tree_counts=(10,), folds=3)
        best, table = pipeline.grid_search_cv(instances, grid, rng_seed=0)
        assert best == (1.0, 0.1, 10)
        assert len(table) == 1
        assert len(table[0].fold_f3) == 3

    def test_dominating_cell_wins(self):
        # nu=1e-6 is infeasible on folds this small, scoring 0 everywhere,
        # so the workable cell dominates on every fold
        instances = make_instances(n_normal=200, n_fail=40)
        grid = GridSpec(gammas=(1.0,), nus=(0.1, 1e-6), tree_counts=(10,), folds=3)
        best, table = pipeline.grid_search_cv(instances, grid, rng_seed=0)
        assert best[1] == 0.1
        by_nu = {c.nu: c for c in table}
        assert all(
            a > b
            for a, b in zip(by_nu[0.1].fold_f3, by_nu[1e-6].fold_f3)
        )

    def test_tie_breaks_toward_fewer_trees(self):
        instances = make_instances(n_normal=150, n_fail=30)
        grid = GridSpec(gammas=(1.0,), nus=(0.1,), tree_counts=(50, 10), folds=3)
        best, table = pipeline.grid_search_cv(instances, grid, rng_seed=0)
        scores = {c.n_trees: c.mean_f3 for c in table}
        if scores[10] == scores[50]:
            assert best[2] == 10

    def test_deterministic_given_seed(self):
        instances = make_instances(n_normal=120, n_fail=30)
        grid = GridSpec(gammas=(1.0, 0.3), nus=(0.1,), tree_counts=(5,), folds=3)
        best_a, table_a = pipeline.grid_search_cv(instances, grid, rng_seed=3)
        best_b, table_b = pipeline.grid_search_cv(instances, grid, rng_seed=3)
        assert best_a == best_b
        assert [c.fold_f3 for c in table_a] == [c.fold_f3 for c in table_b]

    def test_threads_do_not_change_results(self):
        instances = make_instances(n_normal=120, n_fail=30)
        grid = GridSpec(gammas=(1.0, 0.3), nus=(0.1,), tree_counts=(5,), folds=2)
        _, table_a = pipeline.grid_search_cv(instances, grid, rng_seed=3, threads=1)
        _, table_b = pipeline.grid_search_cv(instances, grid, rng_seed=3, threads=4)
        assert [c.fold_f3 for c in table_a] == [c.fold_f3 for c in table_b]

    def test_too_few_failures_for_folds_rejected(self):
        instances = make_instances(n_normal=100, n_fail=3)
        grid = GridSpec(gammas=(1.0,), nus=(0.1,), tree_counts=(5,), folds=5)
        with pytest.raises(StratificationError):
            pipeline.grid_search_cv(instances, grid, rng_seed=0)


class TestBundles:
    def test_bundle_round_trip_preserves_decisions(self, tmp_path):
        instances = make_instances(n_normal=150, n_fail=30)
        model = cascade(instances)
        pipeline.save_bundle(model, tmp_path / "bundle")
        restored = pipeline.load_bundle(tmp_path / "bundle")
        rng = np.random.default_rng(0)
        X = rng.random((50, DIM))
        a = pipeline.predict_batch(model, X)
        b = pipeline.predict_batch(restored, X)
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])

    def test_retraining_reproduces_bundle_bytes(self, tmp_path):
        instances = make_instances(n_normal=150, n_fail=30)
        a = cascade(instances, seed=7)
        b = cascade(instances, seed=7)
        pipeline.save_bundle(a, tmp_path / "a")
        pipeline.save_bundle(b, tmp_path / "b")
        for name in pipeline.BUNDLE_FILES:
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes()

    def test_archive_round_trip_and_reproducible_bytes(self, tmp_path):
        instances = make_instances(n_normal=120, n_fail=30)
        model = cascade(instances)
        pipeline.save_archive(model, tmp_path / "m1.zip")
        pipeline.save_archive(model, tmp_path / "m2.zip")
        assert (tmp_path / "m1.zip").read_bytes() == (tmp_path / "m2.zip").read_bytes()
        restored = pipeline.load_archive(tmp_path / "m1.zip")
        x = np.full(DIM, 0.8)
        assert pipeline.predict(restored, x) == pipeline.predict(model, x)
