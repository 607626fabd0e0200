"""Layer objects over the raw ops: parameters, caching, backprop wiring."""

from __future__ import annotations

import math

import numpy as np

from . import ops


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int,
                    dtype=np.float32) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    """Base layer: named parameters with matching gradient slots."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def _register(self, name: str, value: np.ndarray) -> None:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0)

    def astype(self, dtype) -> "Layer":
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
            self.grads[k] = self.grads[k].astype(dtype)
        return self

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1, pad: int = 0,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.stride, self.pad = stride, pad
        rng = rng or np.random.default_rng(0)
        self._register("weight", kaiming_uniform(rng, (cout, cin, k, k), cin * k * k))
        self._register("bias", np.zeros(cout, dtype=np.float32))

    def forward(self, x):
        self._cache = x
        return ops.conv2d_forward(x, self.params["weight"], self.params["bias"],
                                  self.stride, self.pad)

    def backward(self, grad):
        gx, gw, gb = ops.conv2d_backward(grad, self._cache, self.params["weight"],
                                         self.stride, self.pad)
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        return gx


class DepthwiseConv(Layer):
    def __init__(self, channels: int, k: int = 3, pad: int = 1,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.pad = pad
        rng = rng or np.random.default_rng(0)
        self._register("weight", kaiming_uniform(rng, (channels, k, k), k * k))
        self._register("bias", np.zeros(channels, dtype=np.float32))

    def forward(self, x):
        self._cache = x
        return ops.depthwise_forward(x, self.params["weight"], self.params["bias"], self.pad)

    def backward(self, grad):
        gx, gw, gb = ops.depthwise_backward(grad, self._cache, self.params["weight"], self.pad)
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        return gx


class PointwiseConv(Layer):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self._register("weight", kaiming_uniform(rng, (cout, cin), cin))
        self._register("bias", np.zeros(cout, dtype=np.float32))

    def forward(self, x):
        self._cache = x
        return ops.pointwise_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, grad):
        gx, gw, gb = ops.pointwise_backward(grad, self._cache, self.params["weight"])
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        return gx


class Linear(Layer):
    def __init__(self, din: int, dout: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self._register("weight", kaiming_uniform(rng, (dout, din), din))
        self._register("bias", np.zeros(dout, dtype=np.float32))

    def forward(self, x):
        self._cache = x
        return ops.fc_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, grad):
        gx, gw, gb = ops.fc_backward(grad, self._cache, self.params["weight"])
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        return gx


class ReLU(Layer):
    def forward(self, x):
        self._cache = x
        return ops.relu_forward(x)

    def backward(self, grad):
        return ops.relu_backward(grad, self._cache)


class AdaptiveAvgPool(Layer):
    def __init__(self, out_hw: tuple[int, int] = (7, 7)):
        super().__init__()
        self.out_hw = out_hw

    def forward(self, x):
        self._cache = x.shape[2:]
        return ops.adaptive_avg_pool_forward(x, self.out_hw)

    def backward(self, grad):
        return ops.adaptive_avg_pool_backward(grad, self._cache)


class Flatten(Layer):
    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._cache)


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def zero_grads(self) -> None:
        for layer in self.layers:
            layer.zero_grads()

    def astype(self, dtype) -> "Sequential":
        for layer in self.layers:
            layer.astype(dtype)
        return self

    def named_params(self):
        """Yields (name, param array, grad array) triples."""
        for i, layer in enumerate(self.layers):
            for key in layer.params:
                yield f"layers.{i}.{key}", layer.params[key], layer.grads[key]

    def param_arrays(self) -> list[np.ndarray]:
        return [p for _, p, _ in self.named_params()]

    def grad_arrays(self) -> list[np.ndarray]:
        return [g for _, _, g in self.named_params()]

    def load_state(self, state: dict, prefix: str = "") -> None:
        for name, p, _ in self.named_params():
            src = state[prefix + name]
            if src.shape != p.shape:
                raise ValueError(f"shape mismatch for {prefix + name}: "
                                 f"{src.shape} vs {p.shape}")
            p[...] = src
