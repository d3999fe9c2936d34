"""
Fully connected network used for both the actor and the critic.

60 inputs, three hidden layers of 256 leaky-ReLU units and one linear output.
Training is plain full-batch gradient descent on MAE or MSE. All arithmetic is
float64.

Weight file layout (little endian):
    b"LFQW1" | u32 layer count | per layer u32 rows, u32 cols
    | per layer: rows*cols f64 weights (row-major), then cols f64 biases
Weights and biases interleave layer by layer; they are not grouped as all
weights followed by all biases.
A JSON sidecar next to the weights records how they were produced.
"""

import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, Field

from lfq.config import FEATURE_ORDER_VERSION, LEARNING_RATE
from lfq.errors import ModelError, WeightFormatError
from lfq.features import NUM_FEATURES

ARCHITECTURE: Tuple[int, ...] = (NUM_FEATURES, 256, 256, 256, 1)
LEAKY_SLOPE = 0.01
MAGIC = b"LFQW1"
SIDECAR_SUFFIX = ".json"

logger = structlog.get_logger(__name__)


class LossKind(str, Enum):
    MAE = "MAE"
    MSE = "MSE"


@dataclass(frozen=True)
class TrainStep:
    """One full-batch gradient step."""
    inputs: np.ndarray
    targets: np.ndarray
    loss_kind: LossKind
    learning_rate: float = LEARNING_RATE

    def __post_init__(self) -> None:
        if len(self.inputs) < 1:
            raise ValueError("batch size must be at least 1")
        if len(self.inputs) != len(self.targets):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.targets)} targets")


class WeightsMetadata(BaseModel):
    """Sidecar describing a weight file."""
    role: str = "actor"
    mode: Optional[str] = None
    seed: Optional[int] = None
    alpha: Optional[float] = None
    flows: int = 0
    feature_order_version: int = FEATURE_ORDER_VERSION
    architecture: List[int] = Field(default_factory=lambda: list(ARCHITECTURE))
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))


def leaky_relu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, z, LEAKY_SLOPE * z)


def leaky_relu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, 1.0, LEAKY_SLOPE)


class Mlp:
    """Weights and biases of a feed-forward network with leaky-ReLU hidden layers."""

    def __init__(self, weights: List[np.ndarray], biases: List[np.ndarray]):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def create(cls, seed: int, sizes: Sequence[int] = ARCHITECTURE) -> 'Mlp':
        """Uniform fan-in initialization in +-1/sqrt(fan_in)."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @property
    def sizes(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def copy(self) -> 'Mlp':
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward_batch(self, inputs: np.ndarray) -> np.ndarray:
        """Outputs for a batch of feature vectors, shape (N,)."""
        h = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = leaky_relu(z) if i < last else z
        out = h[:, 0]
        if not np.all(np.isfinite(out)):
            raise ModelError("network produced a non-finite output", layer=last)
        return out

    def forward(self, x: np.ndarray) -> float:
        return float(self.forward_batch(x)[0])

    # Used as the queue controller callback
    predict = forward

    def loss_and_gradients(self, inputs: np.ndarray, targets: np.ndarray,
                           loss_kind: LossKind) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
        """Mean loss over the batch and its gradients for every layer."""
        x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        y = np.asarray(targets, dtype=np.float64).reshape(-1)
        n = x.shape[0]
        last = len(self.weights) - 1

        activations = [x]
        pre_activations = []
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre_activations.append(z)
            h = leaky_relu(z) if i < last else z
            activations.append(h)

        residual = h[:, 0] - y
        if loss_kind == LossKind.MAE:
            loss = float(np.mean(np.abs(residual)))
            grad = np.sign(residual) / n
        else:
            loss = float(np.mean(residual ** 2))
            grad = 2.0 * residual / n
        g = grad.reshape(-1, 1)

        grad_w: List[np.ndarray] = [np.empty(0)] * len(self.weights)
        grad_b: List[np.ndarray] = [np.empty(0)] * len(self.weights)
        for i in range(last, -1, -1):
            grad_w[i] = activations[i].T @ g
            grad_b[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * leaky_relu_grad(pre_activations[i - 1])
        return loss, grad_w, grad_b

    def checked_gradients(self, step: TrainStep) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
        """
        Loss and gradients of one step, without touching the weights.

        Raises:
            ModelError: If the targets, the loss or any gradient is not finite
        """
        if not np.all(np.isfinite(step.targets)):
            raise ModelError("training targets must be finite")
        loss, grad_w, grad_b = self.loss_and_gradients(step.inputs, step.targets, step.loss_kind)
        if not np.isfinite(loss):
            raise ModelError(f"non-finite {step.loss_kind.value} loss")
        for i, (gw, gb) in enumerate(zip(grad_w, grad_b)):
            if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
                raise ModelError(f"non-finite gradient in layer {i}", layer=i)
        return loss, grad_w, grad_b

    def apply_gradients(self, grad_w: List[np.ndarray], grad_b: List[np.ndarray], learning_rate: float) -> None:
        for w, b, gw, gb in zip(self.weights, self.biases, grad_w, grad_b):
            w -= learning_rate * gw
            b -= learning_rate * gb

    def backward_and_step(self, step: TrainStep) -> float:
        """
        Apply one gradient-descent step.

        Returns:
            The loss before the step

        Raises:
            ModelError: If the loss or any gradient is not finite (weights untouched)
        """
        loss, grad_w, grad_b = self.checked_gradients(step)
        self.apply_gradients(grad_w, grad_b, step.learning_rate)
        return loss

    def save(self, path: str, metadata: Optional[WeightsMetadata] = None) -> None:
        """Write the binary weight file and, when given, its JSON sidecar."""
        chunks = [MAGIC, struct.pack("<I", len(self.weights))]
        for w in self.weights:
            chunks.append(struct.pack("<II", *w.shape))
        for w, b in zip(self.weights, self.biases):
            chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
            chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(b"".join(chunks))
        if metadata is not None:
            sidecar_path(path).write_text(metadata.model_dump_json(indent=2))
        logger.debug("weights_saved", path=str(target), sizes=self.sizes)

    @classmethod
    def load(cls, path: str, expected_sizes: Optional[Sequence[int]] = ARCHITECTURE) -> 'Mlp':
        """
        Read a weight file written by save().

        Raises:
            WeightFormatError: On bad magic, truncation, trailing bytes or
                a layer shape that differs from expected_sizes
        """
        source = Path(path)
        if not source.is_file():
            raise WeightFormatError(f"weights file '{path}' does not exist", path=str(path))
        data = source.read_bytes()

        if data[:len(MAGIC)] != MAGIC:
            raise WeightFormatError(f"'{path}' is not an LFQ weight file (bad magic)", path=str(path))
        offset = len(MAGIC)
        try:
            (layer_count,) = struct.unpack_from("<I", data, offset)
            offset += 4
            shapes = []
            for _ in range(layer_count):
                shapes.append(struct.unpack_from("<II", data, offset))
                offset += 8
        except struct.error:
            raise WeightFormatError(f"'{path}' is truncated in its header", path=str(path))

        if expected_sizes is not None:
            expected = list(zip(expected_sizes[:-1], expected_sizes[1:]))
            if layer_count != len(expected):
                raise WeightFormatError(
                    f"'{path}' has {layer_count} layers, expected {len(expected)}", path=str(path))
            for i, (found, wanted) in enumerate(zip(shapes, expected)):
                if tuple(found) != tuple(wanted):
                    raise WeightFormatError(
                        f"'{path}' layer {i}: expected {wanted[0]}x{wanted[1]}, found {found[0]}x{found[1]}",
                        path=str(path), layer=i)

        needed = offset + sum(8 * (rows * cols + cols) for rows, cols in shapes)
        if len(data) != needed:
            raise WeightFormatError(
                f"'{path}' holds {len(data)} bytes, expected {needed} (truncated or corrupt)",
                path=str(path))

        weights, biases = [], []
        for rows, cols in shapes:
            w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols)
            offset += 8 * rows * cols
            b = np.frombuffer(data, dtype="<f8", count=cols, offset=offset)
            offset += 8 * cols
            weights.append(w.astype(np.float64))
            biases.append(b.astype(np.float64))
        return cls(weights, biases)


def sidecar_path(path: str) -> Path:
    return Path(str(path) + SIDECAR_SUFFIX)


def load_metadata(path: str) -> Optional[WeightsMetadata]:
    """Read the sidecar of a weight file, None when there is none."""
    meta = sidecar_path(path)
    if not meta.is_file():
        return None
    return WeightsMetadata.model_validate_json(meta.read_text())
