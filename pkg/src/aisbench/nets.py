"""Feed-forward networks: exact forward evaluation, input gradients, JSON weight files."""

from __future__ import annotations

import json

import numpy as np
from scipy.special import expit

FORMAT_VERSION = 1
ACTIVATIONS = ("linear", "tanh", "relu", "sigmoid")
ROLES = ("decoder", "encoder")


class ModelFormatError(ValueError):
    """Malformed weight file: bad JSON, unknown activation, or broken dimension chain."""


def _apply_activation(name, pre):
    # pre is a freshly allocated array, so in-place is safe
    if name == "tanh":
        return np.tanh(pre, out=pre)
    if name == "relu":
        return np.maximum(pre, 0.0, out=pre)
    if name == "sigmoid":
        return expit(pre, out=pre)
    return pre  # linear


def _activation_backward(name, out, g):
    """Multiply upstream g by the activation derivative, expressed via the layer output."""
    if name == "tanh":
        return (1.0 - out * out) * g
    if name == "relu":
        # subgradient 0 at the kink: out > 0 iff pre > 0
        return np.where(out > 0.0, g, 0.0)
    if name == "sigmoid":
        return out * (1.0 - out) * g
    return g


class Layer:
    """One affine map plus activation. Arrays are frozen after construction."""

    __slots__ = ("w", "b", "activation", "w_t", "in_dim", "out_dim")

    def __init__(self, w, b, activation):
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if activation not in ACTIVATIONS:
            raise ModelFormatError(f"unknown activation {activation!r}")
        if w.ndim != 2:
            raise ModelFormatError(f"weight matrix must be 2-D, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise ModelFormatError(
                f"bias shape {b.shape} does not match weight rows {w.shape[0]}"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ModelFormatError("non-finite weight or bias")
        self.w = w
        self.b = b
        self.w_t = np.ascontiguousarray(w.T)
        self.activation = activation
        self.out_dim, self.in_dim = w.shape
        for arr in (self.w, self.b, self.w_t):
            arr.flags.writeable = False


class MlpNetwork:
    """Immutable stack of affine+activation layers.

    All operations are pure functions of the input, so a network can be shared
    freely across worker processes or threads.
    """

    __slots__ = ("layers", "role", "input_dim", "output_dim", "metadata")

    def __init__(self, layers, role="decoder", metadata=None):
        if not layers:
            raise ModelFormatError("network needs at least one layer")
        if role not in ROLES:
            raise ModelFormatError(f"unknown role {role!r}")
        for k in range(1, len(layers)):
            if layers[k].in_dim != layers[k - 1].out_dim:
                raise ModelFormatError(
                    f"dimension chain broken: layer {k - 1} out_dim "
                    f"{layers[k - 1].out_dim} != layer {k} in_dim {layers[k].in_dim}"
                )
        self.layers = tuple(layers)
        self.role = role
        self.input_dim = layers[0].in_dim
        self.output_dim = layers[-1].out_dim
        self.metadata = dict(metadata) if metadata else {}

    def forward(self, z):
        """Evaluate the network at a single input vector."""
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.input_dim,):
            raise ValueError(f"input shape {z.shape} != ({self.input_dim},)")
        h = z
        for lyr in self.layers:
            pre = lyr.w @ h
            pre += lyr.b
            h = _apply_activation(lyr.activation, pre)
        return h

    def forward_trace(self, z):
        """Forward pass that also returns per-layer outputs for backprop. No validation."""
        outs = []
        h = z
        for lyr in self.layers:
            pre = lyr.w @ h
            pre += lyr.b
            h = _apply_activation(lyr.activation, pre)
            outs.append(h)
        return h, outs

    def backprop(self, trace, upstream):
        """Pull an output-space cotangent back to input space: returns J^T @ upstream."""
        g = upstream
        for k in range(len(self.layers) - 1, -1, -1):
            lyr = self.layers[k]
            g = _activation_backward(lyr.activation, trace[k], g)
            g = lyr.w_t @ g
        return g

    def grad_input(self, z, upstream):
        """Gradient of upstream . forward(z) with respect to z."""
        z = np.asarray(z, dtype=np.float64)
        upstream = np.asarray(upstream, dtype=np.float64)
        if z.shape != (self.input_dim,):
            raise ValueError(f"input shape {z.shape} != ({self.input_dim},)")
        if upstream.shape != (self.output_dim,):
            raise ValueError(f"upstream shape {upstream.shape} != ({self.output_dim},)")
        _, trace = self.forward_trace(z)
        return self.backprop(trace, upstream)


def save_model(net: MlpNetwork) -> bytes:
    """Serialize a network to the JSON weight-file format."""
    doc = {
        "format_version": FORMAT_VERSION,
        "role": net.role,
        "layers": [
            {
                "in": lyr.in_dim,
                "out": lyr.out_dim,
                "activation": lyr.activation,
                "w": lyr.w.tolist(),
                "b": lyr.b.tolist(),
            }
            for lyr in net.layers
        ],
    }
    if net.metadata:
        doc["metadata"] = net.metadata
    return json.dumps(doc, indent=1).encode()


def load_model(data) -> MlpNetwork:
    """Parse a JSON weight file (bytes or str) into a network.

    Rejects unknown activations, shape mismatches, and breaks in the
    layer-dimension chain with errors naming the offending layer.
    """
    if isinstance(data, bytes):
        data = data.decode()
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ModelFormatError("top level must be an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {version!r}")
    role = doc.get("role")
    if role not in ROLES:
        raise ModelFormatError(f"unknown role {role!r}")
    raw_layers = doc.get("layers")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise ModelFormatError("layers must be a nonempty list")
    layers = []
    for k, entry in enumerate(raw_layers):
        try:
            lyr = Layer(entry["w"], entry["b"], entry["activation"])
        except KeyError as e:
            raise ModelFormatError(f"layer {k}: missing field {e}") from e
        except ModelFormatError as e:
            raise ModelFormatError(f"layer {k}: {e}") from e
        if lyr.in_dim != entry.get("in", lyr.in_dim) or lyr.out_dim != entry.get(
            "out", lyr.out_dim
        ):
            raise ModelFormatError(
                f"layer {k}: declared dims ({entry.get('in')}, {entry.get('out')}) "
                f"do not match arrays ({lyr.in_dim}, {lyr.out_dim})"
            )
        layers.append(lyr)
    try:
        return MlpNetwork(layers, role=role, metadata=doc.get("metadata"))
    except ModelFormatError:
        raise


def load_model_file(path) -> MlpNetwork:
    """Load a network from a weight file on disk."""
    with open(path, "rb") as f:
        return load_model(f.read())


def save_model_file(net: MlpNetwork, path) -> None:
    with open(path, "wb") as f:
        f.write(save_model(net))


def random_network(dims, activations, rng, role="decoder", scale=None, metadata=None):
    """Build a random network for simulations and tests.

    dims is the unit count per layer including input and output; activations
    has one entry per affine layer. Weights are Gaussian with std
    scale/sqrt(in_dim) (scale defaults to 1).
    """
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    scale = 1.0 if scale is None else scale
    layers = []
    for k in range(len(dims) - 1):
        w = rng.standard_normal((dims[k + 1], dims[k])) * (scale / np.sqrt(dims[k]))
        b = rng.standard_normal(dims[k + 1]) * 0.1
        layers.append(Layer(w, b, activations[k]))
    return MlpNetwork(layers, role=role, metadata=metadata)
