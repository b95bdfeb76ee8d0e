"""Training algorithms: feed-forward autoencoder, softmax regression, k-NN.

Backpropagation, both optimizers, and the distance math are written out
directly (numpy only); sklearn supplies just the estimator base class so the
models expose get_params/fit/predict like the rest of the ecosystem.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .errors import CaravanError, InvalidArgument, Unsupported
from .transforms import check_matrix

ACTIVATIONS = ("relu", "sigmoid")
LOSSES = ("mse", "bce")
OPTIMIZERS = ("sgd", "adam")


class TrainingDiverged(CaravanError):
    """Non-finite loss; surfaced as a non-retryable task failure."""

    code = "diverged"

    def __init__(self, epoch: int):
        super().__init__(f"diverged at epoch {epoch}")
        self.epoch = epoch


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    return 1.0 / (1.0 + np.exp(-z))


def _activate_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(np.float64)
    return a * (1.0 - a)


def _xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Autoencoder(BaseEstimator):
    """Symmetric fully-connected autoencoder trained by mini-batch backprop.

    ``encoder_layers`` lists the encoder widths, last entry = latent dim; the
    decoder mirrors them back to the input width. Hidden layers (including
    the latent layer) use ``activation``; the output layer is sigmoid for bce
    loss and linear for mse.
    """

    def __init__(
        self,
        encoder_layers=(8, 3),
        activation="sigmoid",
        loss="mse",
        optimizer="sgd",
        learning_rate=0.1,
        batch_size=16,
        epochs=10,
        momentum=0.0,
        beta1=0.9,
        beta2=0.999,
        epsilon=1e-8,
        seed=0,
    ):
        self.encoder_layers = encoder_layers
        self.activation = activation
        self.loss = loss
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.momentum = momentum
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.seed = seed

    # -- architecture ----------------------------------------------------

    def _layer_dims(self, n_features: int) -> list[int]:
        enc = list(self.encoder_layers)
        if not enc or any(w < 1 for w in enc):
            raise InvalidArgument("encoder_layers must be positive integers")
        return [n_features] + enc + enc[-2::-1] + [n_features]

    def _validate(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation: {self.activation}")
        if self.loss not in LOSSES:
            raise InvalidArgument(f"unknown loss: {self.loss}")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidArgument(f"unknown optimizer: {self.optimizer}")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidArgument("batch_size must be >= 1 and epochs >= 0")

    def initialize(self, n_features: int) -> "Autoencoder":
        """Xavier-uniform weights, zero biases; deterministic under seed."""
        self._validate()
        dims = self._layer_dims(n_features)
        rng = np.random.Generator(np.random.PCG64(self.seed))
        self.weights_ = [
            _xavier_uniform(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)
        ]
        self.biases_ = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
        self.n_features_ = n_features
        self.latent_dim_ = list(self.encoder_layers)[-1]
        self.training_log_ = []
        return self

    # -- forward / backward ------------------------------------------------

    def _forward(self, X: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Returns (pre-activations per layer, activations incl. input)."""
        zs: list[np.ndarray] = []
        activations = [X]
        last = len(self.weights_) - 1
        for index, (W, b) in enumerate(zip(self.weights_, self.biases_)):
            z = activations[-1] @ W + b
            zs.append(z)
            if index == last:
                a = _activate("sigmoid", z) if self.loss == "bce" else z
            else:
                a = _activate(self.activation, z)
            activations.append(a)
        return zs, activations

    def _loss_value(self, output: np.ndarray, target: np.ndarray) -> float:
        if self.loss == "mse":
            return float(np.mean((output - target) ** 2))
        return float(
            -np.mean(target * np.log(output) + (1.0 - target) * np.log(1.0 - output))
        )

    def loss_and_gradients(
        self, X: np.ndarray
    ) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
        """Reconstruction loss on X plus analytic gradients for every layer."""
        X = check_matrix(X, allow_empty_rows=False)
        zs, activations = self._forward(X)
        output = activations[-1]
        loss = self._loss_value(output, X)
        n_elements = X.shape[0] * X.shape[1]
        # dL/dz at the output layer; both losses reduce to (output - x)
        # scaled by the mean denominator (bce pairs with the sigmoid output).
        if self.loss == "mse":
            delta = 2.0 * (output - X) / n_elements
        else:
            delta = (output - X) / n_elements
        grads_w: list[np.ndarray] = [np.empty(0)] * len(self.weights_)
        grads_b: list[np.ndarray] = [np.empty(0)] * len(self.biases_)
        for layer in range(len(self.weights_) - 1, -1, -1):
            grads_w[layer] = activations[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights_[layer].T) * _activate_grad(
                    self.activation, zs[layer - 1], activations[layer]
                )
        return loss, grads_w, grads_b

    # -- optimizers ---------------------------------------------------------

    def _make_optimizer_state(self):
        shapes = [w.shape for w in self.weights_] + [b.shape for b in self.biases_]
        if self.optimizer == "sgd":
            return {"velocity": [np.zeros(s) for s in shapes]}
        return {
            "m": [np.zeros(s) for s in shapes],
            "v": [np.zeros(s) for s in shapes],
            "t": 0,
        }

    def _apply_gradients(self, state, grads_w, grads_b) -> None:
        params = self.weights_ + self.biases_
        grads = grads_w + grads_b
        if self.optimizer == "sgd":
            for i, (param, grad) in enumerate(zip(params, grads)):
                state["velocity"][i] = (
                    self.momentum * state["velocity"][i] - self.learning_rate * grad
                )
                param += state["velocity"][i]
            return
        state["t"] += 1
        t = state["t"]
        for i, (param, grad) in enumerate(zip(params, grads)):
            state["m"][i] = self.beta1 * state["m"][i] + (1 - self.beta1) * grad
            state["v"][i] = self.beta2 * state["v"][i] + (1 - self.beta2) * grad**2
            m_hat = state["m"][i] / (1 - self.beta1**t)
            v_hat = state["v"][i] / (1 - self.beta2**t)
            param -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)

    # -- estimator API --------------------------------------------------------

    def fit(self, X, y=None):
        X = check_matrix(X, allow_empty_rows=False)
        self.initialize(X.shape[1])
        shuffle_rng = np.random.Generator(np.random.PCG64(self.seed ^ 0x5DEECE66D))
        state = self._make_optimizer_state()
        n = X.shape[0]
        # Overflow to inf is how divergence manifests; the loss check reports it.
        with np.errstate(over="ignore", invalid="ignore"):
            for epoch in range(self.epochs):
                order = shuffle_rng.permutation(n)
                total = 0.0
                for start in range(0, n, self.batch_size):
                    batch = X[order[start : start + self.batch_size]]
                    loss, grads_w, grads_b = self.loss_and_gradients(batch)
                    total += loss * batch.shape[0]
                    self._apply_gradients(state, grads_w, grads_b)
                epoch_loss = total / n
                if not np.isfinite(epoch_loss):
                    raise TrainingDiverged(epoch)
                self.training_log_.append((epoch, epoch_loss))
        return self

    def encode(self, X) -> np.ndarray:
        """Latent representation: forward pass through the encoder half."""
        X = check_matrix(X)
        if X.shape[1] != self.n_features_:
            raise InvalidArgument(
                f"expected {self.n_features_} columns, got {X.shape[1]}"
            )
        a = X
        for index in range(len(self.encoder_layers)):
            z = a @ self.weights_[index] + self.biases_[index]
            a = _activate(self.activation, z)
        return a

    def reconstruct(self, X) -> np.ndarray:
        X = check_matrix(X)
        if X.shape[1] != self.n_features_:
            raise InvalidArgument(
                f"expected {self.n_features_} columns, got {X.shape[1]}"
            )
        return self._forward(X)[1][-1]

    def transform(self, X) -> np.ndarray:
        return self.encode(X)

    # -- weight (de)serialization -------------------------------------------

    def weight_bytes(self) -> bytes:
        """Layers in order: row-major weight matrix then bias vector, float64 LE."""
        parts = []
        for W, b in zip(self.weights_, self.biases_):
            parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
        return b"".join(parts)

    def load_weight_bytes(self, blob: bytes, n_features: int) -> "Autoencoder":
        self._validate()
        dims = self._layer_dims(n_features)
        flat = np.frombuffer(blob, dtype="<f8")
        expected = sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))
        if flat.size != expected:
            raise InvalidArgument(
                f"weight blob has {flat.size} values, architecture needs {expected}"
            )
        self.weights_, self.biases_ = [], []
        cursor = 0
        for i in range(len(dims) - 1):
            size = dims[i] * dims[i + 1]
            self.weights_.append(flat[cursor : cursor + size].reshape(dims[i], dims[i + 1]).copy())
            cursor += size
            self.biases_.append(flat[cursor : cursor + dims[i + 1]].copy())
            cursor += dims[i + 1]
        self.n_features_ = n_features
        self.latent_dim_ = list(self.encoder_layers)[-1]
        self.training_log_ = getattr(self, "training_log_", [])
        return self


def gradient_check(model: Autoencoder, rows, h: float) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per weight is |a - n| / max(1e-12, |a| + |n|), evaluated
    over every weight and bias on the given rows.
    """
    if not isinstance(model, Autoencoder):
        raise Unsupported("gradient_check supports autoencoder models only")
    if h <= 0:
        raise InvalidArgument("step size h must be positive")
    X = check_matrix(rows, allow_empty_rows=False)
    _, grads_w, grads_b = model.loss_and_gradients(X)
    analytic = grads_w + grads_b
    params = model.weights_ + model.biases_
    worst = 0.0
    for param, grad in zip(params, analytic):
        flat_param = param.reshape(-1)
        flat_grad = grad.reshape(-1)
        for index in range(flat_param.size):
            original = flat_param[index]
            flat_param[index] = original + h
            loss_plus = model._loss_value(model._forward(X)[1][-1], X)
            flat_param[index] = original - h
            loss_minus = model._loss_value(model._forward(X)[1][-1], X)
            flat_param[index] = original
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            a = flat_grad[index]
            error = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
            worst = max(worst, error)
    return worst


class SoftmaxRegression(BaseEstimator):
    """Multinomial logistic regression trained by full-batch gradient descent."""

    def __init__(self, learning_rate=0.1, epochs=100, l2=0.0, seed=0):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.l2 = l2
        self.seed = seed

    @staticmethod
    def _softmax(logits: np.ndarray) -> np.ndarray:
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        return exp / exp.sum(axis=1, keepdims=True)

    def fit(self, X, y):
        X = check_matrix(X, allow_empty_rows=False)
        y = np.asarray(y)
        if y.shape[0] != X.shape[0]:
            raise InvalidArgument("label count does not match row count")
        self.classes_ = np.array(sorted(set(y.tolist())))
        class_index = {c: i for i, c in enumerate(self.classes_.tolist())}
        targets = np.zeros((X.shape[0], len(self.classes_)))
        for row, label in enumerate(y.tolist()):
            targets[row, class_index[label]] = 1.0
        n, d = X.shape
        k = len(self.classes_)
        self.coef_ = np.zeros((d, k))
        self.intercept_ = np.zeros(k)
        self.training_log_ = []
        for epoch in range(self.epochs):
            probs = self._softmax(X @ self.coef_ + self.intercept_)
            loss = float(
                -np.mean(np.log(np.maximum(probs[targets.astype(bool)], 1e-300)))
                + 0.5 * self.l2 * np.sum(self.coef_**2)
            )
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch)
            self.training_log_.append((epoch, loss))
            grad_w = X.T @ (probs - targets) / n + self.l2 * self.coef_
            grad_b = (probs - targets).sum(axis=0) / n
            self.coef_ -= self.learning_rate * grad_w
            self.intercept_ -= self.learning_rate * grad_b
        return self

    def predict_proba(self, X) -> np.ndarray:
        X = check_matrix(X)
        if X.shape[1] != self.coef_.shape[0]:
            raise InvalidArgument(
                f"expected {self.coef_.shape[0]} columns, got {X.shape[1]}"
            )
        return self._softmax(X @ self.coef_ + self.intercept_)

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        # np.argmax takes the first maximum: classes_ is sorted, so ties
        # resolve to the lexicographically smallest class.
        return self.classes_[np.argmax(probs, axis=1)]

    def weight_bytes(self) -> bytes:
        return (
            np.ascontiguousarray(self.coef_, dtype="<f8").tobytes()
            + np.ascontiguousarray(self.intercept_, dtype="<f8").tobytes()
        )

    def load_weight_bytes(self, blob: bytes, n_features: int, classes: list) -> "SoftmaxRegression":
        self.classes_ = np.array(classes)
        k = len(classes)
        flat = np.frombuffer(blob, dtype="<f8")
        if flat.size != n_features * k + k:
            raise InvalidArgument("weight blob does not match architecture")
        self.coef_ = flat[: n_features * k].reshape(n_features, k).copy()
        self.intercept_ = flat[n_features * k :].copy()
        self.training_log_ = getattr(self, "training_log_", [])
        return self


class KNNClassifier(BaseEstimator):
    """k-nearest-neighbor classifier (euclidean), majority vote with
    lexicographic tie-break; distance ties resolve by train row order."""

    def __init__(self, k=1, distance="euclidean"):
        self.k = k
        self.distance = distance

    def fit(self, X, y):
        X = check_matrix(X, allow_empty_rows=False)
        if self.distance != "euclidean":
            raise InvalidArgument(f"unknown distance: {self.distance}")
        if self.k < 1:
            raise InvalidArgument("k must be positive")
        y = np.asarray(y)
        if y.shape[0] != X.shape[0]:
            raise InvalidArgument("label count does not match row count")
        self.train_X_ = X
        self.train_y_ = y
        self.classes_ = np.array(sorted(set(y.tolist())))
        self.training_log_ = []
        return self

    def _neighbor_votes(self, X: np.ndarray) -> np.ndarray:
        """Vote fractions per class for each query row."""
        k = min(self.k, self.train_X_.shape[0])
        distances = np.sqrt(
            np.maximum(
                ((X[:, None, :] - self.train_X_[None, :, :]) ** 2).sum(axis=2), 0.0
            )
        )
        votes = np.zeros((X.shape[0], len(self.classes_)))
        class_index = {c: i for i, c in enumerate(self.classes_.tolist())}
        for row in range(X.shape[0]):
            nearest = np.argsort(distances[row], kind="stable")[:k]
            for train_row in nearest:
                votes[row, class_index[self.train_y_[train_row]]] += 1.0
        return votes / k

    def predict_proba(self, X) -> np.ndarray:
        X = check_matrix(X)
        if X.shape[1] != self.train_X_.shape[1]:
            raise InvalidArgument(
                f"expected {self.train_X_.shape[1]} columns, got {X.shape[1]}"
            )
        return self._neighbor_votes(X)

    def predict(self, X) -> np.ndarray:
        votes = self.predict_proba(X)
        return self.classes_[np.argmax(votes, axis=1)]
