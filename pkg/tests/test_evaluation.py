import itertools
import random

import numpy as np
import pytest

from caravan.errors import InvalidArgument
from caravan.evaluation import METRIC_NAMES, ConfusionMatrix, confusion, kmeans, metrics, project

from reference_impls import brute_force_confusion, brute_force_metrics


class TestConfusion:
    def test_perfect_prediction(self):
        cm = confusion(["a"] * 4, ["a"] * 4, {"a", "b"})
        assert cm.counts["a"] == {"tp": 4, "tn": 0, "fp": 0, "fn": 0}
        assert cm.counts["b"] == {"tp": 0, "tn": 4, "fp": 0, "fn": 0}

    def test_hand_counted_example(self):
        truths = ["a", "a", "b", "b"]
        preds = ["a", "b", "b", "b"]
        cm = confusion(preds, truths, {"a", "b"})
        assert cm.counts["a"] == {"tp": 1, "fn": 1, "fp": 0, "tn": 2}
        assert cm.counts["b"] == {"tp": 2, "fp": 1, "fn": 0, "tn": 1}

    def test_empty_inputs_all_zero(self):
        cm = confusion([], [], {"a", "b"})
        assert all(sum(c.values()) == 0 for c in cm.counts.values())

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgument):
            confusion(["a"], [], {"a"})

    def test_unknown_label(self):
        with pytest.raises(InvalidArgument):
            confusion(["z"], ["a"], {"a"})

    def test_invariants_per_class(self):
        rng = random.Random(99)
        classes = ["a", "b", "c"]
        truths = [rng.choice(classes) for _ in range(60)]
        preds = [rng.choice(classes) for _ in range(60)]
        cm = confusion(preds, truths, classes)
        correct = sum(1 for p, t in zip(preds, truths) if p == t)
        assert sum(cm.counts[c]["tp"] for c in classes) == correct
        for cls in classes:
            c = cm.counts[cls]
            assert sum(c.values()) == 60
            assert c["tp"] + c["fn"] == truths.count(cls)


class TestMetrics:
    def test_hand_arithmetic_example(self):
        cm = ConfusionMatrix(("x",), {"x": {"tp": 40, "tn": 50, "fp": 10, "fn": 0}})
        values = metrics(cm)["per_class"]["x"]["values"]
        assert values["accuracy"] == pytest.approx(0.9)
        assert values["precision"] == pytest.approx(0.8)
        assert values["recall"] == pytest.approx(1.0)
        assert values["specificity"] == pytest.approx(50 / 60)
        assert values["f1"] == pytest.approx(2 * 0.8 / 1.8)

    def test_zero_over_zero_flagged(self):
        cm = ConfusionMatrix(("x",), {"x": {"tp": 0, "tn": 5, "fp": 0, "fn": 0}})
        report = metrics(cm)["per_class"]["x"]
        assert report["values"]["precision"] == 0.0
        assert "precision" in report["undefined"]

    def test_all_zero_matrix_everything_flagged(self):
        cm = ConfusionMatrix(("x",), {"x": {"tp": 0, "tn": 0, "fp": 0, "fn": 0}})
        report = metrics(cm)["per_class"]["x"]
        assert set(report["undefined"]) == set(METRIC_NAMES)
        assert all(v == 0.0 for v in report["values"].values())

    def test_macro_flags_propagate(self):
        cm = ConfusionMatrix(
            ("a", "b"),
            {
                "a": {"tp": 2, "tn": 2, "fp": 0, "fn": 0},
                "b": {"tp": 0, "tn": 4, "fp": 0, "fn": 0},
            },
        )
        report = metrics(cm)
        assert "precision" in report["macro"]["undefined"]
        assert report["macro"]["values"]["accuracy"] == pytest.approx(1.0)

    def test_oracle_1000_random_instances(self):
        rng = random.Random(20240502)
        for _ in range(1000):
            classes = sorted(
                rng.sample(["a", "b", "c", "d", "e"], rng.randint(1, 5))
            )
            n = rng.randint(0, 30)
            truths = [rng.choice(classes) for _ in range(n)]
            preds = [rng.choice(classes) for _ in range(n)]
            cm = confusion(preds, truths, classes)
            reference_counts = brute_force_confusion(preds, truths, classes)
            assert cm.counts == reference_counts
            report = metrics(cm)
            reference = brute_force_metrics(reference_counts)
            for cls in classes:
                for name in METRIC_NAMES:
                    assert (
                        abs(report["per_class"][cls]["values"][name] - reference[cls]["values"][name])
                        < 1e-12
                    )
                assert set(report["per_class"][cls]["undefined"]) == reference[cls]["undefined"]
                # identities wherever both sides are defined
                values = report["per_class"][cls]["values"]
                undefined = set(report["per_class"][cls]["undefined"])
                if "recall" not in undefined:
                    assert values["recall"] + values["fnr"] == pytest.approx(1.0, abs=1e-12)
                if "specificity" not in undefined:
                    assert values["specificity"] + values["fpr"] == pytest.approx(1.0, abs=1e-12)

    def test_micro_precision_equals_accuracy(self):
        rng = random.Random(77)
        classes = ["a", "b", "c"]
        truths = [rng.choice(classes) for _ in range(200)]
        preds = [rng.choice(classes) for _ in range(200)]
        cm = confusion(preds, truths, classes)
        tp = sum(cm.counts[c]["tp"] for c in classes)
        fp = sum(cm.counts[c]["fp"] for c in classes)
        accuracy = sum(1 for p, t in zip(preds, truths) if p == t) / 200
        assert tp / (tp + fp) == pytest.approx(accuracy, abs=1e-12)


class TestProject:
    def test_rotation_preserves_pairwise_distances(self):
        rng = np.random.default_rng(3)
        latent = rng.normal(size=(12, 2))
        coords = project(latent, 2, latent)
        for i in range(12):
            for j in range(12):
                original = np.linalg.norm(latent[i] - latent[j])
                projected = np.linalg.norm(coords[i] - coords[j])
                assert abs(original - projected) < 1e-9

    def test_collinear_second_coordinate_zero(self):
        latent = np.array([[float(i), float(i)] for i in range(6)])
        coords = project(latent, 2, latent)
        assert np.abs(coords[:, 1]).max() < 1e-9

    def test_pad_third_coordinate_exactly_zero(self):
        latent = np.random.default_rng(0).normal(size=(5, 2))
        coords = project(latent, 3, latent)
        assert coords.shape == (5, 3)
        assert np.all(coords[:, 2] == 0.0)

    def test_empty_fit_set_rejected(self):
        with pytest.raises(InvalidArgument):
            project(np.zeros((3, 2)), 2, np.zeros((0, 2)))

    def test_bad_dims_rejected(self):
        with pytest.raises(InvalidArgument):
            project(np.zeros((3, 2)), 4, np.zeros((3, 2)))


TOY = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]])


def exhaustive_best_two_clusters(points: np.ndarray):
    """Oracle: enumerate all 2-cluster assignments, centroids = cluster means."""
    best = None
    n = len(points)
    for labels in itertools.product([0, 1], repeat=n):
        if len(set(labels)) < 2:
            continue
        labels = np.array(labels)
        inertia = 0.0
        centroids = []
        for cluster in (0, 1):
            members = points[labels == cluster]
            center = members.mean(axis=0)
            centroids.append(center)
            inertia += ((members - center) ** 2).sum()
        if best is None or inertia < best[0]:
            best = (inertia, {tuple(c) for c in centroids})
    return best


class TestKMeans:
    def test_toy_example_matches_exhaustive_oracle(self):
        oracle_inertia, oracle_centroids = exhaustive_best_two_clusters(TOY)
        assert oracle_inertia == 1.0
        assert oracle_centroids == {(0.0, 0.5), (10.0, 10.5)}
        result = kmeans(TOY, 2, seed=0)
        assert result.inertia == oracle_inertia
        assert {tuple(c) for c in result.centroids} == oracle_centroids

    def test_toy_example_many_seeds(self):
        for seed in range(25):
            result = kmeans(TOY, 2, seed=seed)
            assert result.inertia == 1.0

    def test_k_equals_points_zero_inertia(self):
        result = kmeans(TOY, 4, seed=3)
        assert result.inertia == 0.0

    def test_k_larger_than_rows_rejected(self):
        with pytest.raises(InvalidArgument):
            kmeans(TOY, 5, seed=0)

    def test_inertia_non_increasing_100_seeds(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(40, 3))
        for seed in range(100):
            history = kmeans(X, 4, seed=seed).inertia_history
            assert all(
                history[i + 1] <= history[i] + 1e-9 for i in range(len(history) - 1)
            )

    def test_row_permutation_invariant_up_to_relabel(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(20, 2))
        base = kmeans(X, 3, seed=5)
        perm = rng.permutation(20)
        permuted = kmeans(X[perm], 3, seed=5)
        base_sets = {
            frozenset(np.flatnonzero(np.array(base.assignments) == j).tolist())
            for j in range(3)
        }
        permuted_sets = {
            frozenset(perm[np.flatnonzero(np.array(permuted.assignments) == j)].tolist())
            for j in range(3)
        }
        assert {tuple(sorted(s)) for s in base_sets} == {
            tuple(sorted(s)) for s in permuted_sets
        }

    def test_single_class_purity_one(self):
        result = kmeans(TOY, 2, seed=1, labels=["only"] * 4)
        assert result.purity == 1.0

    def test_purity_definition(self):
        result = kmeans(TOY, 2, seed=1, labels=["a", "a", "b", "a"])
        # clusters are {0,1} and {2,3}: majorities 2 (a) and 1 (either) -> 3/4
        assert result.purity == 0.75

    def test_contingency_counts(self):
        result = kmeans(TOY, 2, seed=1, labels=["a", "a", "b", "b"])
        totals = sorted(sum(v.values()) for v in result.contingency.values())
        assert totals == [2, 2]
