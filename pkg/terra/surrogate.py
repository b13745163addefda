"""
Neural Surrogate Terramechanics Model
=====================================
Feedforward network with tanh hidden layers and a linear output layer,
mapping the 10 wheel/terrain conditions to tire force. The network is smooth
by construction; first derivatives are exact reverse-mode rules and
Hessian-vector products differentiate those rules forward along a direction.

Inputs and outputs pass through stored affine normalization records mapping
the training range onto [-1, 1], so a saved model is independent of the units
the training data was expressed in.
"""

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ValidationError

from .errors import CorruptModelError, ExtrapolationWarning, ModelVersionError
from .sampling import INPUT_NAMES

logger = logging.getLogger(__name__)

FORMAT_NAME = "terra-mlp"
FORMAT_VERSION = 1
DEFAULT_HIDDEN = (35, 35, 35)


@dataclass(frozen=True)
class Normalization:
    """Per-feature affine map: normalized = (value - shift) / scale"""
    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def from_bounds(cls, low: np.ndarray, high: np.ndarray) -> "Normalization":
        low, high = np.asarray(low, dtype=float), np.asarray(high, dtype=float)
        scale = (high - low) / 2.0
        scale = np.where(scale > 0, scale, 1.0)
        return cls(shift=(high + low) / 2.0, scale=scale)

    @classmethod
    def from_data(cls, values: np.ndarray) -> "Normalization":
        values = np.atleast_2d(values)
        return cls.from_bounds(values.min(axis=0), values.max(axis=0))

    @classmethod
    def identity(cls, size: int) -> "Normalization":
        return cls(shift=np.zeros(size), scale=np.ones(size))

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.shift) / self.scale

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return values * self.scale + self.shift


@dataclass(frozen=True)
class Mlp:
    """Layered tanh network with normalization records"""
    weights: Tuple[np.ndarray, ...]   # W_k has shape (fan_out, fan_in)
    biases: Tuple[np.ndarray, ...]
    input_norm: Normalization
    output_norm: Normalization
    output_names: Tuple[str, ...] = ("fy",)
    input_bounds: Optional[np.ndarray] = None  # (2, n_inputs) training range
    manifest: Dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def layer_sizes(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @classmethod
    def initialize(cls, layer_sizes: Sequence[int], rng: np.random.Generator,
                   input_norm: Normalization, output_norm: Normalization, **kwargs) -> "Mlp":
        """Uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-limit, limit, size=fan_out))
        return cls(tuple(weights), tuple(biases), input_norm, output_norm, **kwargs)

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int], input_norm: Normalization,
              output_norm: Normalization, **kwargs) -> "Mlp":
        weights = tuple(np.zeros((o, i)) for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))
        biases = tuple(np.zeros(o) for o in layer_sizes[1:])
        return cls(weights, biases, input_norm, output_norm, **kwargs)

    def flat_parameters(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.extend([w.ravel(), b])
        return np.concatenate(parts)

    def with_parameters(self, theta: np.ndarray) -> "Mlp":
        weights, biases, offset = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(theta[offset:offset + w.size].reshape(w.shape))
            offset += w.size
            biases.append(theta[offset:offset + b.size].copy())
            offset += b.size
        return replace(self, weights=tuple(weights), biases=tuple(biases))

    def output_index(self, name: str = "fy") -> int:
        return self.output_names.index(name)

    def lateral_force(self, inputs: np.ndarray) -> np.ndarray:
        """Lateral force (N) for a batch of input rows."""
        return forward(self, np.atleast_2d(inputs))[:, self.output_index("fy")]


def activations(m: Mlp, xn: np.ndarray) -> List[np.ndarray]:
    """Hidden activations of normalized inputs (batch rows), followed by the linear output."""
    layers = [xn]
    a = xn
    last = len(m.weights) - 1
    for k, (w, b) in enumerate(zip(m.weights, m.biases)):
        z = a @ w.T + b
        a = z if k == last else np.tanh(z)
        layers.append(a)
    return layers


def _check_inputs(m: Mlp, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("Surrogate inputs must be finite")
    if m.input_bounds is not None:
        outside = (x < m.input_bounds[0]) | (x > m.input_bounds[1])
        if np.any(outside):
            warnings.warn("Surrogate evaluated outside its training bounds", ExtrapolationWarning, stacklevel=3)
    return x


def forward(m: Mlp, x: np.ndarray) -> np.ndarray:
    """
    Evaluate the network.

    Args:
        m: Network
        x: One input vector (10,) or a batch (N, 10) in physical units

    Returns:
        Outputs (T,) or (N, T) in physical units
    """
    x = _check_inputs(m, x)
    xn = m.input_norm.normalize(np.atleast_2d(x))
    y = m.output_norm.denormalize(activations(m, xn)[-1])
    return y[0] if x.ndim == 1 else y


def _backward(m: Mlp, layers: List[np.ndarray], output: int) -> List[np.ndarray]:
    """Sensitivities of one denormalized output w.r.t. every layer pre-activation."""
    batch = layers[0].shape[0]
    delta = np.zeros((batch, m.weights[-1].shape[0]))
    delta[:, output] = m.output_norm.scale[output]
    deltas = [delta]
    for k in range(len(m.weights) - 1, 0, -1):
        a = layers[k]
        delta = (delta @ m.weights[k]) * (1.0 - a * a)
        deltas.append(delta)
    return deltas[::-1]


def jacobian(m: Mlp, x: np.ndarray, output: int = 0) -> np.ndarray:
    """
    Exact gradient of one output with respect to the physical inputs.

    Returns:
        (10,) for a single input vector, (N, 10) for a batch
    """
    x = _check_inputs(m, x)
    layers = activations(m, m.input_norm.normalize(np.atleast_2d(x)))
    deltas = _backward(m, layers, output)
    grad = (deltas[0] @ m.weights[0]) / m.input_norm.scale
    return grad[0] if x.ndim == 1 else grad


def hessian_vec(m: Mlp, x: np.ndarray, v: np.ndarray, output: int = 0) -> np.ndarray:
    """
    Hessian-vector product H(x) v of one output (forward-over-reverse).

    The forward pass carries tangents of every activation along v; the
    reverse recursion is then differentiated along the same direction.
    """
    x = _check_inputs(m, x)
    v = np.asarray(v, dtype=float)
    if x.ndim != 1 or v.shape != x.shape:
        raise ValueError("hessian_vec expects one input vector and a direction of the same shape")
    xn = m.input_norm.normalize(x)[None, :]
    layers = activations(m, xn)
    deltas = _backward(m, layers, output)

    # forward tangents
    tangents = [(v / m.input_norm.scale)[None, :]]
    last = len(m.weights) - 1
    for k, w in enumerate(m.weights):
        dz = tangents[-1] @ w.T
        tangents.append(dz if k == last else (1.0 - layers[k + 1] ** 2) * dz)

    # reverse recursion differentiated along v
    d_delta = np.zeros_like(deltas[-1])
    for k in range(len(m.weights) - 1, 0, -1):
        a, da = layers[k], tangents[k]
        back = deltas[k] @ m.weights[k]
        d_back = d_delta @ m.weights[k]
        d_delta = -2.0 * a * da * back + (1.0 - a * a) * d_back
    hv = (d_delta @ m.weights[0]) / m.input_norm.scale
    return hv[0]


class _NormalizationRecord(BaseModel):
    shift: List[float]
    scale: List[float]


class ModelFile(BaseModel):
    """On-disk layout of a saved network"""
    format: str
    version: int
    layer_sizes: List[int]
    activation: str = "tanh"
    input_names: List[str]
    output_names: List[str]
    weights: List[List[List[float]]]
    biases: List[List[float]]
    input_normalization: _NormalizationRecord
    output_normalization: _NormalizationRecord
    input_bounds: Optional[List[List[float]]] = None
    manifest: Dict[str, Any] = {}


def save(m: Mlp, path: Path) -> Path:
    """Write the network as a versioned JSON container (floats round-trip exactly)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    record = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "layer_sizes": m.layer_sizes,
        "activation": "tanh",
        "input_names": list(INPUT_NAMES),
        "output_names": list(m.output_names),
        "weights": [w.tolist() for w in m.weights],
        "biases": [b.tolist() for b in m.biases],
        "input_normalization": {"shift": m.input_norm.shift.tolist(), "scale": m.input_norm.scale.tolist()},
        "output_normalization": {"shift": m.output_norm.shift.tolist(), "scale": m.output_norm.scale.tolist()},
        "input_bounds": None if m.input_bounds is None else m.input_bounds.tolist(),
        "manifest": m.manifest,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=1, default=str)
    logger.info(f"Saved surrogate {m.layer_sizes} to {path}")
    return path


def load(path: Path) -> Mlp:
    """
    Read a network written by save().

    Raises:
        ModelVersionError: format name or version differs
        CorruptModelError: truncated, unparsable or inconsistent file
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise CorruptModelError(f"Model file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise CorruptModelError(f"Model file {path} does not hold a model record")
    if raw.get("format") != FORMAT_NAME or raw.get("version") != FORMAT_VERSION:
        raise ModelVersionError(
            f"Model file {path} has format {raw.get('format')!r} v{raw.get('version')}, "
            f"expected {FORMAT_NAME!r} v{FORMAT_VERSION}"
        )
    try:
        record = ModelFile.model_validate(raw)
    except ValidationError as exc:
        raise CorruptModelError(f"Model file {path} is structurally invalid: {exc}") from exc

    weights = tuple(np.array(w, dtype=float) for w in record.weights)
    biases = tuple(np.array(b, dtype=float) for b in record.biases)
    sizes = record.layer_sizes
    if len(weights) != len(sizes) - 1 or len(biases) != len(weights):
        raise CorruptModelError(f"Model file {path}: layer count does not match {sizes}")
    for k, (w, b) in enumerate(zip(weights, biases)):
        if w.shape != (sizes[k + 1], sizes[k]) or b.shape != (sizes[k + 1],):
            raise CorruptModelError(f"Model file {path}: layer {k} shape {w.shape} does not match {sizes}")
    if not all(np.all(np.isfinite(p)) for p in weights + biases):
        raise CorruptModelError(f"Model file {path} holds non-finite parameters")

    norm_in, norm_out = record.input_normalization, record.output_normalization
    return Mlp(
        weights=weights,
        biases=biases,
        input_norm=Normalization(np.array(norm_in.shift), np.array(norm_in.scale)),
        output_norm=Normalization(np.array(norm_out.shift), np.array(norm_out.scale)),
        output_names=tuple(record.output_names),
        input_bounds=None if record.input_bounds is None else np.array(record.input_bounds),
        manifest=record.manifest,
    )
