"""Model representation, D-SGD local training and federated averaging."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from ._compat import StrEnum
from typing import TYPE_CHECKING, TypeAlias

import numpy as np
import numpy.typing as npt

from .const import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_DROPOUT_RATE,
    DEFAULT_LEARNING_RATE,
    DEFAULT_LOCAL_EPOCHS,
    INIT_WEIGHT_RANGE,
)
from .exceptions import (
    DimensionMismatchError,
    EmptyDatasetError,
    SpecificationError,
)

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

_LOGGER = logging.getLogger(__name__)

ParameterVector: TypeAlias = npt.NDArray[np.float64]


def as_parameter_vector(values: npt.ArrayLike) -> ParameterVector:
    """Return ``values`` as a flat, finite float64 vector."""
    vector = np.asarray(values, dtype=np.float64)
    if vector.ndim != 1 or vector.size == 0:
        msg = f"Parameter vector must be one-dimensional and non-empty, got shape {vector.shape}"
        raise DimensionMismatchError(msg)
    ensure_finite(vector)
    return vector


def ensure_finite(vector: ParameterVector) -> None:
    """Raise if any entry is NaN or infinite."""
    if not np.all(np.isfinite(vector)):
        msg = "Parameter vector contains non-finite values"
        raise SpecificationError(msg)


def _check_same_dim(left: ParameterVector, right: ParameterVector) -> None:
    if left.shape != right.shape:
        msg = f"Dimension mismatch: {left.shape[0]} != {right.shape[0]}"
        raise DimensionMismatchError(msg)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Examples (rows of ``features``) with class labels in [0, class_count)."""

    features: npt.NDArray[np.float64]
    labels: npt.NDArray[np.int64]
    class_count: int

    def __post_init__(self) -> None:
        """Validate shapes and freeze the arrays."""
        features = np.array(self.features, dtype=np.float64, copy=True, ndmin=2)
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if features.shape[0] != labels.shape[0]:
            msg = f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
            raise SpecificationError(msg)
        if self.class_count < 1:
            msg = f"class_count must be positive, got {self.class_count}"
            raise SpecificationError(msg)
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            msg = f"labels must lie in [0, {self.class_count})"
            raise SpecificationError(msg)
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        """Return the number of examples."""
        return int(self.labels.shape[0])

    @property
    def input_dim(self) -> int:
        """Number of feature columns."""
        return int(self.features.shape[1])

    def label_counts(self) -> npt.NDArray[np.int64]:
        """Number of examples per class."""
        return np.bincount(self.labels, minlength=self.class_count).astype(np.int64)

    def label_distribution(self) -> npt.NDArray[np.float64]:
        """Fraction of examples per class."""
        if len(self) == 0:
            msg = "Empty dataset has no label distribution"
            raise EmptyDatasetError(msg)
        return self.label_counts() / len(self)

    def subset(self, indices: npt.ArrayLike) -> Dataset:
        """Return the rows at ``indices`` (in that order)."""
        index = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[index], self.labels[index], self.class_count)

    def with_labels(self, labels: npt.ArrayLike) -> Dataset:
        """Return a copy with the same features and new labels."""
        return Dataset(self.features, np.asarray(labels), self.class_count)

    @classmethod
    def concat(cls, datasets: Sequence[Dataset]) -> Dataset:
        """Stack datasets row-wise."""
        if not datasets:
            msg = "Cannot concatenate an empty list of datasets"
            raise EmptyDatasetError(msg)
        return cls(
            np.concatenate([data.features for data in datasets]),
            np.concatenate([data.labels for data in datasets]),
            datasets[0].class_count,
        )


class ModelKind(StrEnum):
    """Supported model families."""

    LOGISTIC = "logistic"
    MLP = "mlp"


@dataclass(frozen=True)
class ModelSpec:
    """Model family and layer sizes."""

    kind: ModelKind
    input_dim: int
    class_count: int
    hidden: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        """Reject zero or negative dimensions."""
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "hidden", tuple(int(size) for size in self.hidden))
        if self.input_dim < 1 or self.class_count < 1:
            msg = f"input_dim and class_count must be positive: {self}"
            raise SpecificationError(msg)
        if self.kind is ModelKind.LOGISTIC and self.hidden:
            msg = "A logistic model has no hidden layers"
            raise SpecificationError(msg)
        if self.kind is ModelKind.MLP and (
            not self.hidden or min(self.hidden) < 1
        ):
            msg = "An mlp needs at least one hidden layer of positive size"
            raise SpecificationError(msg)

    def layer_shapes(self) -> list[tuple[int, int]]:
        """Return (fan_in, fan_out) for every dense layer, input to output."""
        sizes = [self.input_dim, *self.hidden, self.class_count]
        return list(zip(sizes[:-1], sizes[1:], strict=True))

    @property
    def parameter_count(self) -> int:
        """Number of scalar parameters, weights then bias per layer."""
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_shapes())


@dataclass(frozen=True)
class TrainingConfig:
    """Local D-SGD settings."""

    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = DEFAULT_LEARNING_RATE
    local_epochs: int = DEFAULT_LOCAL_EPOCHS
    dropout_rate: float = DEFAULT_DROPOUT_RATE

    def __post_init__(self) -> None:
        """Validate ranges."""
        if self.batch_size < 1 or self.local_epochs < 1:
            msg = "batch_size and local_epochs must be positive"
            raise SpecificationError(msg)
        # zero is accepted: a zero step size is a legal no-op
        if self.learning_rate < 0:
            msg = f"learning_rate must not be negative, got {self.learning_rate}"
            raise SpecificationError(msg)
        if not 0.0 <= self.dropout_rate < 1.0:
            msg = f"dropout_rate must lie in [0, 1), got {self.dropout_rate}"
            raise SpecificationError(msg)


@dataclass(frozen=True, eq=False)
class GlobalModel:
    """The global model issued by the task publisher, one version per round."""

    params: ParameterVector
    round: int
    spec: ModelSpec

    def __post_init__(self) -> None:
        """Freeze the parameters and check their dimension."""
        params = as_parameter_vector(self.params).copy()
        if params.shape[0] != self.spec.parameter_count:
            msg = f"Model {self.spec} needs {self.spec.parameter_count} parameters, got {params.shape[0]}"
            raise DimensionMismatchError(msg)
        params.setflags(write=False)
        object.__setattr__(self, "params", params)


def _layers(
    params: ParameterVector, spec: ModelSpec
) -> list[tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]]:
    """Split a flat vector into (weights, bias) views per layer."""
    if params.shape != (spec.parameter_count,):
        msg = f"Model {spec.kind} expects {spec.parameter_count} parameters, got {params.shape[0]}"
        raise DimensionMismatchError(msg)
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_shapes():
        weights = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        bias = params[offset : offset + fan_out]
        offset += fan_out
        layers.append((weights, bias))
    return layers


def _check_data(spec: ModelSpec, data: Dataset) -> None:
    if len(data) == 0:
        msg = "Dataset is empty"
        raise EmptyDatasetError(msg)
    if data.input_dim != spec.input_dim or data.class_count != spec.class_count:
        msg = (
            f"Data shape ({data.input_dim} inputs, {data.class_count} classes) "
            f"does not match model ({spec.input_dim}, {spec.class_count})"
        )
        raise DimensionMismatchError(msg)


def _softmax(logits: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def predict_logits(
    params: ParameterVector, spec: ModelSpec, features: npt.NDArray[np.float64]
) -> npt.NDArray[np.float64]:
    """Forward pass without dropout."""
    activations = features
    layers = _layers(params, spec)
    for depth, (weights, bias) in enumerate(layers):
        activations = activations @ weights + bias
        if depth < len(layers) - 1:
            activations = np.maximum(activations, 0.0)
    return activations


def loss_and_gradient(
    params: ParameterVector,
    spec: ModelSpec,
    features: npt.NDArray[np.float64],
    labels: npt.NDArray[np.int64],
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[float, ParameterVector]:
    """
    Mean softmax cross-entropy and its gradient with respect to ``params``.

    Inverted dropout is applied to hidden activations when ``dropout_rate`` is
    positive; it needs ``rng`` for the masks.
    """
    layers = _layers(params, spec)
    count = features.shape[0]
    inputs: list[npt.NDArray[np.float64]] = []
    pre_activations: list[npt.NDArray[np.float64]] = []
    masks: list[npt.NDArray[np.float64] | None] = []

    activations = features
    for depth, (weights, bias) in enumerate(layers):
        inputs.append(activations)
        z = activations @ weights + bias
        pre_activations.append(z)
        if depth == len(layers) - 1:
            activations = z
            continue
        activations = np.maximum(z, 0.0)
        mask = None
        if dropout_rate > 0.0:
            if rng is None:
                msg = "dropout needs a random stream"
                raise SpecificationError(msg)
            keep = 1.0 - dropout_rate
            mask = (rng.random(activations.shape) < keep) / keep
            activations = activations * mask
        masks.append(mask)

    probabilities = _softmax(activations)
    rows = np.arange(count)
    loss = float(-np.mean(np.log(np.clip(probabilities[rows, labels], 1e-300, None))))

    grad_z = probabilities
    grad_z[rows, labels] -= 1.0
    grad_z /= count

    grads: list[npt.NDArray[np.float64]] = []
    for depth in range(len(layers) - 1, -1, -1):
        weights, _ = layers[depth]
        grads.append(grad_z.sum(axis=0))
        grads.append((inputs[depth].T @ grad_z).reshape(-1))
        if depth == 0:
            break
        grad_a = grad_z @ weights.T
        mask = masks[depth - 1]
        if mask is not None:
            grad_a = grad_a * mask
        grad_z = grad_a * (pre_activations[depth - 1] > 0.0)

    return loss, np.concatenate(grads[::-1])


def init_global_model(spec: ModelSpec, seed: int) -> GlobalModel:
    """Seeded uniform initialisation in [-0.05, 0.05], round 0."""
    rng = np.random.Generator(np.random.Philox(seed))
    params = rng.uniform(-INIT_WEIGHT_RANGE, INIT_WEIGHT_RANGE, spec.parameter_count)
    return GlobalModel(params=params, round=0, spec=spec)


def local_train(
    global_model: GlobalModel,
    data: Dataset,
    cfg: TrainingConfig,
    rng: np.random.Generator,
) -> ParameterVector:
    """
    Run ``cfg.local_epochs`` epochs of mini-batch SGD from the global model.

    Returns the update delta (local minus global parameters). Rows are
    shuffled once per epoch from ``rng``.
    """
    spec = global_model.spec
    _check_data(spec, data)
    batch_size = min(cfg.batch_size, len(data))
    dropout = cfg.dropout_rate if spec.kind is ModelKind.MLP else 0.0

    params = global_model.params.copy()
    for _ in range(cfg.local_epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), batch_size):
            batch = order[start : start + batch_size]
            _, gradient = loss_and_gradient(
                params,
                spec,
                data.features[batch],
                data.labels[batch],
                dropout_rate=dropout,
                rng=rng,
            )
            params -= cfg.learning_rate * gradient

    delta = params - global_model.params
    ensure_finite(delta)
    _LOGGER.debug(
        "Trained %d examples for %d epochs, update norm %.6g",
        len(data),
        cfg.local_epochs,
        float(np.linalg.norm(delta)),
    )
    return delta


def evaluate_accuracy(params: ParameterVector, spec: ModelSpec, data: Dataset) -> float:
    """Fraction of examples whose argmax prediction (lowest index on ties) is the label."""
    _check_data(spec, data)
    predictions = np.argmax(predict_logits(params, spec, data.features), axis=1)
    return float(np.mean(predictions == data.labels))


def federated_average(updates: Sequence[ParameterVector]) -> ParameterVector:
    """
    Component-wise arithmetic mean of the updates.

    Each coordinate is summed in sorted order so the result does not depend on
    the order of ``updates``.
    """
    if not updates:
        msg = "Cannot average an empty list of updates"
        raise EmptyDatasetError(msg)
    first = as_parameter_vector(updates[0])
    for update in updates[1:]:
        _check_same_dim(first, np.asarray(update))
    stacked = np.stack([as_parameter_vector(update) for update in updates])
    mean = np.sort(stacked, axis=0).sum(axis=0) / len(updates)
    ensure_finite(mean)
    return mean


def apply_update(global_model: GlobalModel, avg_update: ParameterVector) -> GlobalModel:
    """Return w_{t+1} = w_t + avg_update with the round advanced by one."""
    update = as_parameter_vector(avg_update)
    _check_same_dim(global_model.params, update)
    return GlobalModel(
        params=global_model.params + update,
        round=global_model.round + 1,
        spec=global_model.spec,
    )


def has_converged(history: Iterable[float], window: int, tol: float) -> bool:
    """True iff accuracy moved less than ``tol`` over the last ``window`` rounds."""
    if window < 2:  # noqa: PLR2004
        msg = f"window must be at least 2, got {window}"
        raise SpecificationError(msg)
    recent = list(history)[-window:]
    if len(recent) < window:
        return False
    return max(recent) - min(recent) < tol
