"""Sequential network over the layer kinds in ``layers``.

``forward`` returns the full list of activations (input included); the
list plus the parameters is everything ``backward`` needs, so gradients
are an explicit function call rather than hidden tape state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteError, ShapeMismatchError

MODES = ("train", "infer")


@dataclass
class Activations:
    """Per-layer activations of one forward call, input first."""

    values: list = field(default_factory=list)
    mode: str = "infer"

    def __getitem__(self, idx):
        return self.values[idx]

    def __len__(self):
        return len(self.values)

    @property
    def output(self):
        return self.values[-1]


class Network:
    """An ordered stack of layers with a train/infer mode switch."""

    def __init__(self, layers, input_shape, mode="train"):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.set_mode(mode)
        # Validate the chain once; per-layer shapes are fixed thereafter.
        self.layer_shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                self.layer_shapes.append(layer.out_shape(self.layer_shapes[-1]))
            except ShapeMismatchError as exc:
                raise ShapeMismatchError(f"layer {i} ({layer.kind})", exc.expected, exc.actual) from None

    @property
    def output_shape(self):
        return self.layer_shapes[-1]

    def set_mode(self, mode):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.mode = mode

    def forward(self, x, mode=None):
        mode = self.mode if mode is None else mode
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatchError("network input", ("N",) + self.input_shape, x.shape)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError("network input contains non-finite values")
        acts = Activations(values=[x], mode=mode)
        for i, layer in enumerate(self.layers):
            try:
                acts.values.append(layer.forward(acts.values[-1], mode))
            except ShapeMismatchError as exc:
                raise ShapeMismatchError(f"layer {i} ({layer.kind})", exc.expected, exc.actual) from None
        if not np.all(np.isfinite(acts.values[-1])):
            raise NonFiniteError("network output contains non-finite values")
        return acts

    def backward(self, acts, output_grad, at_layer=None, need_param_grads=True):
        """Gradients of a scalar loss from the grad of activation ``at_layer``.

        Returns ``(param_grads, input_grad)`` where ``param_grads`` maps
        ``"<layer index>.<param name>"`` to arrays for every layer below
        ``at_layer`` (default: the network output).
        """
        if acts.mode != self.mode:
            raise ValueError(
                f"backward in mode {self.mode!r} but activations were produced in mode {acts.mode!r}"
            )
        if at_layer is None:
            at_layer = len(self.layers)
        grad = np.asarray(output_grad, dtype=np.float64)
        if grad.shape != acts.values[at_layer].shape:
            raise ShapeMismatchError("output_grad", acts.values[at_layer].shape, grad.shape)
        param_grads = {}
        for i in range(at_layer - 1, -1, -1):
            layer = self.layers[i]
            pg, grad = layer.backward(
                acts.values[i], acts.values[i + 1], grad, acts.mode, need_param_grads
            )
            for name, g in pg.items():
                param_grads[f"{i}.{name}"] = g
        return param_grads, grad

    def parameters(self):
        """Stable (key, array) list; keys match ``backward`` grad keys."""
        out = []
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                out.append((f"{i}.{name}", layer.params[name]))
        return out

    def set_parameter(self, key, value):
        idx, name = key.split(".", 1)
        layer = self.layers[int(idx)]
        if layer.params[name].shape != value.shape:
            raise ShapeMismatchError(f"parameter {key}", layer.params[name].shape, value.shape)
        layer.params[name] = np.asarray(value, dtype=np.float64)
