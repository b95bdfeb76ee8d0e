"""Builtin plugin descriptors and executors (6 preprocessing, 3 training).

Descriptions are mandatory on every plugin and parameter; the web UI renders
them next to each generated control.
"""

from __future__ import annotations

from .errors import ValidationFailure
from .models import Autoencoder, KNNClassifier, SoftmaxRegression
from .registry import ParamDescriptor, PluginDescriptor, PluginRegistry
from .transforms import (
    Binarizer,
    MinMaxScaler,
    PCAReduce,
    StandardScaler,
    TfidfTransform,
    VarianceThreshold,
)

BUILTIN_VERSION = "1.0"


def _minmax_factory(params: dict) -> MinMaxScaler:
    feature_range = params["feature_range"]
    if len(feature_range) != 2 or feature_range[0] >= feature_range[1]:
        raise ValidationFailure(
            "invalid feature_range",
            details=[("feature_range", "must be two integers min,max with min < max")],
        )
    return MinMaxScaler(feature_range=(float(feature_range[0]), float(feature_range[1])))


def _autoencoder_factory(params: dict, seed: int) -> Autoencoder:
    return Autoencoder(
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
        seed=seed,
    )


def _softmax_factory(params: dict, seed: int) -> SoftmaxRegression:
    return SoftmaxRegression(
        learning_rate=params["learning_rate"],
        epochs=params["epochs"],
        l2=params["l2"],
        seed=seed,
    )


def _knn_factory(params: dict, seed: int) -> KNNClassifier:
    return KNNClassifier(k=params["k"], distance=params["distance"])


def register_builtin_plugins(registry: PluginRegistry) -> None:
    registry.register(
        PluginDescriptor(
            plugin_id="minmax_scaler",
            version=BUILTIN_VERSION,
            stage="preprocess",
            title="Min-max scaler",
            description="Rescales each column linearly so train values span the target range.",
            feature_sensitive=True,
            params=(
                ParamDescriptor(
                    name="feature_range",
                    kind="int_list",
                    default=[0, 1],
                    description="Target range as min,max (two integers, min < max).",
                ),
            ),
        ),
        _minmax_factory,
    )
    registry.register(
        PluginDescriptor(
            plugin_id="standard_scaler",
            version=BUILTIN_VERSION,
            stage="preprocess",
            title="Standard scaler",
            description=(
                "Centers each column to zero mean and unit population standard "
                "deviation; constant columns keep scale 1 and are flagged."
            ),
            feature_sensitive=True,
            params=(),
        ),
        lambda params: StandardScaler(),
    )
    registry.register(
        PluginDescriptor(
            plugin_id="binarizer",
            version=BUILTIN_VERSION,
            stage="preprocess",
            title="Binarizer",
            description="Maps values strictly above the threshold to 1 and the rest to 0.",
            feature_sensitive=True,
            params=(
                ParamDescriptor(
                    name="threshold",
                    kind="float",
                    default=0.5,
                    description="Cut point; values above it become 1.",
                ),
            ),
        ),
        lambda params: Binarizer(threshold=params["threshold"]),
    )
    registry.register(
        PluginDescriptor(
            plugin_id="tfidf_transform",
            version=BUILTIN_VERSION,
            stage="preprocess",
            title="TF-IDF weighting",
            description=(
                "Multiplies values by inverse document frequency computed on the "
                "train rows, down-weighting tokens that appear everywhere."
            ),
            feature_sensitive=True,
            params=(
                ParamDescriptor(
                    name="smooth",
                    kind="bool",
                    default=True,
                    description="Use smoothed idf = ln((1+N)/(1+df)) + 1.",
                ),
            ),
        ),
        lambda params: TfidfTransform(smooth=params["smooth"]),
    )
    registry.register(
        PluginDescriptor(
            plugin_id="variance_threshold",
            version=BUILTIN_VERSION,
            stage="preprocess",
            title="Variance threshold",
            description="Removes columns whose train variance is at or below the threshold.",
            feature_sensitive=True,
            params=(
                ParamDescriptor(
                    name="threshold",
                    kind="float",
                    default=0.0,
                    range=(0.0, None),
                    description="Columns with train variance <= threshold are dropped.",
                ),
            ),
        ),
        lambda params: VarianceThreshold(threshold=params["threshold"]),
    )
    registry.register(
        PluginDescriptor(
            plugin_id="pca_reduce",
            version=BUILTIN_VERSION,
            stage="preprocess",
            title="PCA reduction",
            description=(
                "Replaces the selected columns with their top principal components "
                "fitted on the train rows."
            ),
            feature_sensitive=True,
            params=(
                ParamDescriptor(
                    name="n_components",
                    kind="int",
                    default=2,
                    range=(1, None),
                    description="Number of principal components to keep.",
                ),
            ),
        ),
        lambda params: PCAReduce(n_components=params["n_components"]),
    )

    registry.register(
        PluginDescriptor(
            plugin_id="autoencoder",
            version=BUILTIN_VERSION,
            stage="train",
            algorithm_class="autoencoder",
            title="Feed-forward autoencoder",
            description=(
                "Symmetric fully-connected autoencoder trained by mini-batch "
                "backpropagation; the latent layer is the last encoder width."
            ),
            params=(
                ParamDescriptor(
                    name="encoder_layers",
                    kind="int_list",
                    default=[8, 3],
                    range=(1, 4096),
                    description="Encoder layer widths; the last entry is the latent dimension.",
                ),
                ParamDescriptor(
                    name="activation",
                    kind="enum",
                    default="sigmoid",
                    range=("relu", "sigmoid"),
                    description="Activation for hidden and latent layers.",
                ),
                ParamDescriptor(
                    name="loss",
                    kind="enum",
                    default="mse",
                    range=("mse", "bce"),
                    description="Reconstruction loss; bce pairs with a sigmoid output layer.",
                ),
                ParamDescriptor(
                    name="optimizer",
                    kind="enum",
                    default="sgd",
                    range=("sgd", "adam"),
                    description="Weight update rule.",
                ),
                ParamDescriptor(
                    name="learning_rate",
                    kind="float",
                    default=0.1,
                    range=(1e-6, 10.0),
                    description="Step size for each update.",
                ),
                ParamDescriptor(
                    name="batch_size",
                    kind="int",
                    default=16,
                    range=(1, 65536),
                    description="Rows per mini-batch; the final partial batch is kept.",
                ),
                ParamDescriptor(
                    name="epochs",
                    kind="int",
                    default=10,
                    range=(0, 100000),
                    description="Full passes over the training rows.",
                ),
                ParamDescriptor(
                    name="momentum",
                    kind="float",
                    default=0.0,
                    range=(0.0, 0.999),
                    description="Momentum coefficient (sgd only).",
                ),
                ParamDescriptor(
                    name="beta1",
                    kind="float",
                    default=0.9,
                    range=(0.0, 0.9999),
                    description="Adam first-moment decay rate.",
                ),
                ParamDescriptor(
                    name="beta2",
                    kind="float",
                    default=0.999,
                    range=(0.0, 0.999999),
                    description="Adam second-moment decay rate.",
                ),
                ParamDescriptor(
                    name="epsilon",
                    kind="float",
                    default=1e-8,
                    range=(1e-16, 1.0),
                    description="Adam denominator stabilizer.",
                ),
            ),
        ),
        _autoencoder_factory,
    )
    registry.register(
        PluginDescriptor(
            plugin_id="softmax_regression",
            version=BUILTIN_VERSION,
            stage="train",
            algorithm_class="classical",
            title="Softmax regression",
            description=(
                "Multinomial logistic regression trained by full-batch gradient "
                "descent on cross-entropy loss."
            ),
            params=(
                ParamDescriptor(
                    name="learning_rate",
                    kind="float",
                    default=0.1,
                    range=(1e-6, 10.0),
                    description="Step size for each epoch's update.",
                ),
                ParamDescriptor(
                    name="epochs",
                    kind="int",
                    default=100,
                    range=(0, 100000),
                    description="Gradient descent iterations.",
                ),
                ParamDescriptor(
                    name="l2",
                    kind="float",
                    default=0.0,
                    range=(0.0, 10.0),
                    description="L2 penalty coefficient on the weights.",
                ),
            ),
        ),
        _softmax_factory,
    )
    registry.register(
        PluginDescriptor(
            plugin_id="knn",
            version=BUILTIN_VERSION,
            stage="train",
            algorithm_class="classical",
            title="k-nearest neighbors",
            description=(
                "Classifies each row by majority vote of its k nearest training "
                "rows; ties pick the lexicographically smallest class."
            ),
            params=(
                ParamDescriptor(
                    name="k",
                    kind="int",
                    default=1,
                    range=(1, 1000),
                    description="Number of neighbors consulted per prediction.",
                ),
                ParamDescriptor(
                    name="distance",
                    kind="enum",
                    default="euclidean",
                    range=("euclidean",),
                    description="Distance metric used for the neighbor search.",
                ),
            ),
        ),
        _knn_factory,
    )
