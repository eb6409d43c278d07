"""Feed-forward networks with affine layers and pointwise ReLU activations."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import IO, Sequence, Union

import numpy as np


class ModelError(ValueError):
    """Raised when a model description cannot be parsed or validated."""

    def __init__(self, message: str, layer: int | None = None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


class Activation(str, Enum):
    RELU = "relu"
    IDENTITY = "identity"


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.RELU

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2:
            raise ModelError("weight must be a 2-D matrix")
        if b.shape[0] != w.shape[0]:
            raise ModelError(f"bias length {b.shape[0]} != weight rows {w.shape[0]}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ModelError("non-finite entry")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def is_relu(self) -> bool:
        return self.activation is Activation.RELU


class Network:
    """An immutable stack of layers computing ``f = f_L o ... o f_1``.

    Layer ``i`` maps ``z_{i-1}`` to ``zhat_i = W_i z_{i-1} + b_i`` and then
    ``z_i = act_i(zhat_i)``. The last layer must be an identity layer, so the
    outputs are logits.
    """

    def __init__(self, layers: Sequence[Layer]):
        layers = tuple(layers)
        if not layers:
            raise ModelError("network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise ModelError(
                    f"input dim {layers[i].in_dim} does not match previous output dim "
                    f"{layers[i - 1].out_dim}",
                    layer=i,
                )
        if layers[-1].activation is not Activation.IDENTITY:
            raise ModelError("final layer must use the identity activation", layer=len(layers) - 1)
        self._layers = layers

    @property
    def layers(self) -> tuple[Layer, ...]:
        return self._layers

    @property
    def input_dim(self) -> int:
        return self._layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self._layers[-1].out_dim

    @property
    def num_layers(self) -> int:
        return len(self._layers)

    @property
    def hidden_sizes(self) -> list[int]:
        return [layer.out_dim for layer in self._layers[:-1]]

    def relu_neurons(self) -> list[tuple[int, int]]:
        """All (layer, index) pairs carrying a ReLU, in layer-major order."""
        return [
            (k, j)
            for k, layer in enumerate(self._layers)
            if layer.is_relu
            for j in range(layer.out_dim)
        ]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "layers": [
                {
                    "weights": layer.weight.tolist(),
                    "bias": layer.bias.tolist(),
                    "activation": layer.activation.value,
                }
                for layer in self._layers
            ],
        }

    def __repr__(self) -> str:
        dims = [self.input_dim] + [layer.out_dim for layer in self._layers]
        return f"Network({'->'.join(map(str, dims))})"


def network_from_dict(data: dict) -> Network:
    if not isinstance(data, dict) or "layers" not in data:
        raise ModelError("model must be an object with a 'layers' list")
    raw_layers = data["layers"]
    if not isinstance(raw_layers, list):
        raise ModelError("'layers' must be a list")
    layers = []
    for i, raw in enumerate(raw_layers):
        try:
            act = raw.get("activation", "relu")
            if act not in ("relu", "identity"):
                raise ModelError(f"unsupported activation {act!r}", layer=i)
            w = np.asarray(raw["weights"], dtype=np.float64)
            b = np.asarray(raw["bias"], dtype=np.float64)
            layers.append(Layer(w, b, Activation(act)))
        except ModelError as exc:
            if exc.layer is None:
                raise ModelError(str(exc), layer=i) from None
            raise
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ModelError(f"malformed layer ({exc})", layer=i) from None
    if layers and "input_dim" in data and int(data["input_dim"]) != layers[0].in_dim:
        raise ModelError(
            f"declared input_dim {data['input_dim']} != weight columns {layers[0].in_dim}", layer=0
        )
    return Network(layers)


def load_network(source: Union[str, bytes, IO]) -> Network:
    """Parse a model from JSON text, bytes, or a readable stream."""
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    try:
        data = json.loads(source)
    except json.JSONDecodeError as exc:
        raise ModelError(f"malformed JSON: {exc}") from None
    return network_from_dict(data)


def dump_network(net: Network) -> str:
    # repr() of floats round-trips exactly through json
    return json.dumps(net.to_dict())


def _check_input(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != net.input_dim:
        raise ModelError(f"expected input of length {net.input_dim}, got {x.shape[0]}")
    return x


def forward_trace(net: Network, x) -> list[np.ndarray]:
    """Pre-activation vectors ``zhat_1 .. zhat_L`` for input ``x``."""
    z = _check_input(net, x)
    pre = []
    for layer in net.layers:
        zhat = layer.weight @ z + layer.bias
        pre.append(zhat)
        z = np.maximum(zhat, 0.0) if layer.is_relu else zhat
    return pre


def forward(net: Network, x) -> np.ndarray:
    return forward_trace(net, x)[-1]


def forward_batch(net: Network, xs: np.ndarray) -> np.ndarray:
    """Evaluate the network on the rows of ``xs``."""
    z = np.asarray(xs, dtype=np.float64)
    for layer in net.layers:
        z = z @ layer.weight.T + layer.bias
        if layer.is_relu:
            z = np.maximum(z, 0.0)
    return z


def predicted_label(net: Network, x) -> int:
    # np.argmax returns the first maximal index: lowest index wins ties
    return int(np.argmax(forward(net, x)))


def activation_pattern(net: Network, x) -> tuple[tuple[bool, ...], ...]:
    """Active flags (``zhat > 0``) of every ReLU layer at ``x``."""
    pre = forward_trace(net, x)
    return tuple(
        tuple(bool(v > 0) for v in zhat)
        for zhat, layer in zip(pre, net.layers)
        if layer.is_relu
    )


def random_network(
    rng: np.random.Generator,
    input_dim: int,
    hidden: Sequence[int],
    output_dim: int,
    scale: float = 1.0,
    bias_scale: float = 0.5,
) -> Network:
    """Gaussian-weight ReLU network, used by tests and benchmarks."""
    dims = [input_dim, *hidden, output_dim]
    layers = []
    for i in range(len(dims) - 1):
        w = rng.normal(0.0, scale / np.sqrt(dims[i]), size=(dims[i + 1], dims[i]))
        b = rng.normal(0.0, bias_scale, size=dims[i + 1])
        act = Activation.IDENTITY if i == len(dims) - 2 else Activation.RELU
        layers.append(Layer(w, b, act))
    return Network(layers)


def example_network() -> Network:
    """The 2-2-2-2 running-example network with zero biases."""
    return Network(
        [
            Layer([[1.0, 1.0], [1.0, -1.0]], [0.0, 0.0], Activation.RELU),
            Layer([[1.0, 3.0], [-1.0, 2.0]], [0.0, 0.0], Activation.RELU),
            Layer([[1.0, 0.0], [-2.0, -1.0]], [0.0, 0.0], Activation.IDENTITY),
        ]
    )
