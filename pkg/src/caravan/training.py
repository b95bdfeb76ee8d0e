"""Stage 3: model training, automatic evaluation, and the prediction view.

Model artifacts are zips of ``model.json`` + ``weights.bin`` (float64
little-endian, layers in order) + ``training_log.json``; evaluation artifacts
are a single canonical ``evaluation.json``, so re-evaluating a model yields
the identical artifact id.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .collection import Catalog
from .core import canonical_json, derive_seed, utcnow
from .datasets import MergedData, load_merged, unzip_payload, zip_payload
from .errors import Conflict, InvalidArgument, NotFound
from .evaluation import confusion, kmeans, metrics, project
from .models import Autoencoder, KNNClassifier, SoftmaxRegression
from .registry import PluginRegistry, encode_value
from .store import ArtifactStore, ProvenanceRecord

ALGORITHM_CLASSES = ("autoencoder", "classical", "clustering")


@dataclass(frozen=True)
class TrainConfig:
    processed_id: str
    algorithm_class: str
    algorithm_id: str
    hyperparams: dict
    seed: int
    model_name: str

    def __post_init__(self):
        if self.algorithm_class not in ALGORITHM_CLASSES:
            raise InvalidArgument(f"unknown algorithm class: {self.algorithm_class}")
        if not self.model_name:
            raise InvalidArgument("model_name must be nonempty")


@dataclass
class LoadedModel:
    algorithm_class: str
    algorithm_id: str
    hyperparams: dict
    column_ids: list[str]
    latent_dim: int
    model_name: str
    seed: int
    dataset_id: str
    estimator: object
    training_log: list


def _build_estimator(registry: PluginRegistry, config: TrainConfig, params: dict):
    descriptor, factory = registry.get("train", config.algorithm_id)
    if descriptor.algorithm_class != config.algorithm_class:
        raise InvalidArgument(
            f"plugin {config.algorithm_id} belongs to class "
            f"{descriptor.algorithm_class}, not {config.algorithm_class}"
        )
    return factory(params, config.seed)


def train(
    store: ArtifactStore,
    registry: PluginRegistry,
    catalog: Catalog,
    config: TrainConfig,
    user: str = "system",
    run_id: Optional[str] = None,
) -> str:
    """Train a model on a processed dataset and persist the artifact."""
    params = registry.validate(config.algorithm_id, "train", config.hyperparams)
    dataset = load_merged(store, config.processed_id, "dataset_processed")
    estimator = _build_estimator(registry, config, params)

    train_matrix = dataset.train_matrix
    train_labels = [label for _, label in dataset.train_labels]
    if isinstance(estimator, Autoencoder):
        estimator.fit(train_matrix)
        latent_dim = estimator.latent_dim_
    else:
        estimator.fit(train_matrix, train_labels)
        latent_dim = (
            len(estimator.classes_)
            if isinstance(estimator, SoftmaxRegression)
            else train_matrix.shape[1]
        )

    model_doc = {
        "algorithm_class": config.algorithm_class,
        "algorithm_id": config.algorithm_id,
        "hyperparams": params,
        "column_ids": dataset.column_ids,
        "latent_dim": latent_dim,
        "model_name": config.model_name,
        "seed": config.seed,
        "dataset_id": config.processed_id,
        "classes": sorted({label for _, label in dataset.train_labels + dataset.test_labels}),
    }
    weights = estimator.weight_bytes() if hasattr(estimator, "weight_bytes") else b""
    training_log = [[epoch, loss] for epoch, loss in estimator.training_log_]
    payload = zip_payload(
        {
            "model.json": canonical_json(model_doc),
            "weights.bin": weights,
            "training_log.json": canonical_json(training_log),
        }
    )
    now = utcnow()
    record = ProvenanceRecord(
        run_id=run_id or str(uuid.uuid4()),
        stage="train",
        plugin_id=config.algorithm_id,
        plugin_version=registry.descriptor("train", config.algorithm_id).version,
        params=tuple(
            [
                ("model_name", config.model_name),
                ("algorithm_class", config.algorithm_class),
                ("dataset", config.processed_id),
            ]
            + registry.encode_params(config.algorithm_id, "train", params)
        ),
        seed=config.seed,
        user=user,
        started_at=now,
        finished_at=utcnow(),
    )
    artifact_id = store.put(payload, "model", [config.processed_id], record)
    existing = catalog.lookup_name("model", config.model_name)
    if existing is None:
        catalog.register_name("model", config.model_name, artifact_id)
    elif existing != artifact_id:
        raise Conflict(f"model name already used: {config.model_name}")
    return artifact_id


def load_model(store: ArtifactStore, model_id: str) -> LoadedModel:
    meta = store.meta(model_id)
    if meta.kind != "model":
        raise InvalidArgument(f"artifact {model_id} is {meta.kind}, not model")
    members = unzip_payload(store.get(model_id))
    doc = json.loads(members["model.json"].decode("utf-8"))
    weights = members["weights.bin"]
    n_features = len(doc["column_ids"])
    params = doc["hyperparams"]
    if doc["algorithm_id"] == "autoencoder":
        estimator = Autoencoder(
            encoder_layers=list(params["encoder_layers"]),
            activation=params["activation"],
            loss=params["loss"],
            optimizer=params["optimizer"],
            learning_rate=params["learning_rate"],
            batch_size=params["batch_size"],
            epochs=params["epochs"],
            momentum=params["momentum"],
            beta1=params["beta1"],
            beta2=params["beta2"],
            epsilon=params["epsilon"],
            seed=doc["seed"],
        ).load_weight_bytes(weights, n_features)
    elif doc["algorithm_id"] == "softmax_regression":
        estimator = SoftmaxRegression(
            learning_rate=params["learning_rate"],
            epochs=params["epochs"],
            l2=params["l2"],
            seed=doc["seed"],
        ).load_weight_bytes(weights, n_features, doc["classes"])
    elif doc["algorithm_id"] == "knn":
        estimator = KNNClassifier(k=params["k"], distance=params["distance"])
    else:
        raise InvalidArgument(f"unknown algorithm: {doc['algorithm_id']}")
    return LoadedModel(
        algorithm_class=doc["algorithm_class"],
        algorithm_id=doc["algorithm_id"],
        hyperparams=params,
        column_ids=doc["column_ids"],
        latent_dim=doc["latent_dim"],
        model_name=doc["model_name"],
        seed=doc["seed"],
        dataset_id=doc["dataset_id"],
        estimator=estimator,
        training_log=json.loads(members["training_log.json"].decode("utf-8")),
    )


def latent(model: LoadedModel, matrix) -> np.ndarray:
    """Latent embedding: encoder output, class probabilities, or identity."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != len(model.column_ids):
        raise InvalidArgument(
            f"expected a matrix with {len(model.column_ids)} columns"
        )
    estimator = model.estimator
    if isinstance(estimator, Autoencoder):
        return estimator.encode(matrix)
    if isinstance(estimator, SoftmaxRegression):
        return estimator.predict_proba(matrix)
    return matrix.copy()


def _fit_knn(model: LoadedModel, dataset: MergedData) -> None:
    if isinstance(model.estimator, KNNClassifier):
        model.estimator.fit(
            dataset.train_matrix, [label for _, label in dataset.train_labels]
        )


def _predict(
    model: LoadedModel, dataset: MergedData, train_latent: np.ndarray, query_latent: np.ndarray, query_matrix: np.ndarray
) -> tuple[list[str], list[float]]:
    """Predicted labels + confidences for the query rows."""
    train_labels = [label for _, label in dataset.train_labels]
    estimator = model.estimator
    if isinstance(estimator, SoftmaxRegression):
        probs = estimator.predict_proba(query_matrix)
        indices = probs.argmax(axis=1)
        return (
            [str(estimator.classes_[i]) for i in indices],
            [float(probs[r, i]) for r, i in enumerate(indices)],
        )
    if isinstance(estimator, KNNClassifier):
        votes = estimator.predict_proba(query_matrix)
        indices = votes.argmax(axis=1)
        return (
            [str(estimator.classes_[i]) for i in indices],
            [float(votes[r, i]) for r, i in enumerate(indices)],
        )
    # Autoencoder: nearest train-latent neighbor's label; confidence is
    # 1 / (1 + distance to the predicted class's latent centroid).
    classes = sorted(set(train_labels))
    centroids = {
        cls: train_latent[[i for i, lbl in enumerate(train_labels) if lbl == cls]].mean(axis=0)
        for cls in classes
    }
    predictions: list[str] = []
    confidences: list[float] = []
    for row in query_latent:
        distances = np.sqrt(((train_latent - row) ** 2).sum(axis=1))
        nearest = int(np.argsort(distances, kind="stable")[0])
        label = train_labels[nearest]
        predictions.append(label)
        centroid_distance = float(np.sqrt(((centroids[label] - row) ** 2).sum()))
        confidences.append(1.0 / (1.0 + centroid_distance))
    return predictions, confidences


def evaluate(
    store: ArtifactStore,
    catalog: Catalog,
    model_id: str,
    user: str = "system",
    run_id: Optional[str] = None,
    n_clusters: Optional[int] = None,
) -> str:
    """Evaluate a trained model on its source dataset; deterministic per model."""
    model = load_model(store, model_id)
    dataset = load_merged(store, model.dataset_id, "dataset_processed")
    _fit_knn(model, dataset)

    train_latent = latent(model, dataset.train_matrix)
    test_latent = latent(model, dataset.test_matrix)
    all_latent = np.vstack([train_latent, test_latent])
    all_labels = [label for _, label in dataset.train_labels + dataset.test_labels]
    all_pids = [pid for pid, _ in dataset.train_labels + dataset.test_labels]
    partitions = ["train"] * len(dataset.train_labels) + ["test"] * len(dataset.test_labels)
    classes = sorted(set(all_labels))

    train_predictions, train_confidences = _predict(
        model, dataset, train_latent, train_latent, dataset.train_matrix
    )
    if len(dataset.test_labels):
        test_predictions, test_confidences = _predict(
            model, dataset, train_latent, test_latent, dataset.test_matrix
        )
    else:
        test_predictions, test_confidences = [], []

    cm = confusion(test_predictions, [l for _, l in dataset.test_labels], classes)
    report_metrics = metrics(cm)

    reconstruction_error = None
    if isinstance(model.estimator, Autoencoder) and len(dataset.test_matrix):
        reconstructed = model.estimator.reconstruct(dataset.test_matrix)
        reconstruction_error = float(np.mean((reconstructed - dataset.test_matrix) ** 2))

    coords2 = project(all_latent, 2, train_latent)
    coords3 = project(all_latent, 3, train_latent)

    k = n_clusters if n_clusters is not None else max(len(classes), 1)
    k = min(k, all_latent.shape[0])
    clustering = kmeans(
        all_latent, k, derive_seed(model.seed, "kmeans"), labels=all_labels
    )

    predictions = train_predictions + test_predictions
    confidences = train_confidences + test_confidences
    points = [
        {
            "package_id": all_pids[i],
            "partition": partitions[i],
            "true_label": all_labels[i],
            "predicted_label": predictions[i],
            "confidence": confidences[i],
            "latent": [float(v) for v in all_latent[i]],
            "coords2": [float(v) for v in coords2[i]],
            "coords3": [float(v) for v in coords3[i]],
        }
        for i in range(len(all_pids))
    ]
    report = {
        "model_id": model_id,
        "dataset_id": model.dataset_id,
        "model_name": model.model_name,
        "algorithm_id": model.algorithm_id,
        "classes": classes,
        "confusion": cm.to_dict(),
        "metrics": report_metrics,
        "reconstruction_error": reconstruction_error,
        "kmeans": clustering.to_dict(),
        "points": points,
    }
    now = utcnow()
    record = ProvenanceRecord(
        run_id=run_id or str(uuid.uuid4()),
        stage="evaluate",
        plugin_id="evaluator",
        plugin_version="1.0",
        params=(
            ("model", model_id),
            ("dataset", model.dataset_id),
            ("clusters", encode_value("int", k)),
        ),
        seed=derive_seed(model.seed, "kmeans"),
        user=user,
        started_at=now,
        finished_at=utcnow(),
    )
    evaluation_id = store.put(
        canonical_json(report), "evaluation", [model_id, model.dataset_id], record
    )
    existing = catalog.lookup_name("evaluation", model_id)
    if existing is None:
        catalog.register_name("evaluation", model_id, evaluation_id)
    elif existing != evaluation_id:
        raise Conflict(f"model {model_id} already evaluated differently")
    return evaluation_id


def load_evaluation(store: ArtifactStore, catalog: Catalog, model_id: str) -> dict:
    evaluation_id = catalog.lookup_name("evaluation", model_id)
    if evaluation_id is None:
        raise NotFound(f"no evaluation for model {model_id}")
    return json.loads(store.get(evaluation_id).decode("utf-8"))


def prediction_view(
    store: ArtifactStore,
    catalog: Catalog,
    model_id: str,
    dims: int = 2,
    focal: Optional[str] = None,
    k_neighbors: int = 5,
    show_incorrect: bool = True,
) -> dict:
    """Scatter payload: projected points, arrows to predicted-class centroids,
    and (optionally) the focal package's nearest latent neighbors."""
    if dims not in (2, 3):
        raise InvalidArgument("dims must be 2 or 3")
    if k_neighbors < 1:
        raise InvalidArgument("k_neighbors must be positive")
    report = load_evaluation(store, catalog, model_id)
    points = report["points"]
    coords_key = "coords2" if dims == 2 else "coords3"

    # Class centroids in projected space, over train points' true labels.
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for point in points:
        if point["partition"] != "train":
            continue
        label = point["true_label"]
        vector = np.asarray(point[coords_key])
        sums[label] = sums.get(label, np.zeros(dims)) + vector
        counts[label] = counts.get(label, 0) + 1
    centroids = {label: (sums[label] / counts[label]).tolist() for label in sums}

    view_points = []
    arrows = []
    for point in points:
        correct = point["predicted_label"] == point["true_label"]
        if not show_incorrect and not correct:
            continue
        view_points.append(
            {
                "package_id": point["package_id"],
                "coords": point[coords_key],
                "true_label": point["true_label"],
                "predicted_label": point["predicted_label"],
                "confidence": point["confidence"],
                "partition": point["partition"],
            }
        )
        target = centroids.get(point["predicted_label"])
        if target is not None:
            arrows.append(
                {
                    "from": point["package_id"],
                    "to": target,
                    "color": "green" if correct else "red",
                }
            )

    neighbors = None
    if focal is not None:
        focal_point = next((p for p in points if p["package_id"] == focal), None)
        if focal_point is None:
            raise NotFound(f"package {focal} not in the evaluated dataset")
        focal_latent = np.asarray(focal_point["latent"])
        ranked = sorted(
            (
                (
                    float(np.sqrt(((np.asarray(p["latent"]) - focal_latent) ** 2).sum())),
                    p["package_id"],
                )
                for p in points
                if p["package_id"] != focal
            ),
        )
        neighbors = [
            {"package_id": pid, "distance": distance}
            for distance, pid in ranked[: min(k_neighbors, len(ranked))]
        ]

    return {
        "model_id": model_id,
        "dims": dims,
        "show_incorrect": show_incorrect,
        "points": view_points,
        "arrows": arrows,
        "centroids": centroids,
        "focal": focal,
        "neighbors": neighbors,
    }
