"""Small fully connected networks with hand-written backpropagation.

Everything is float64. Parameters are exposed as a list
``[W0, b0, W1, b1, ...]`` with ``W_i`` of shape ``(fan_in, fan_out)``; every
entry is a view into one contiguous vector ``net.flat`` so optimizer and
target-network updates touch a single array.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DimensionError, StateError

OUTPUTS = ("linear", "sigmoid", "softmax", "softmax-columns")


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def action_activation(z: np.ndarray, M: int, K: int) -> np.ndarray:
    """Softmax over the M eAP weights of every UE column.

    ``z`` holds the flattened (row-major) ``M x K`` logits, optionally with
    leading batch dimensions. Output has the same layout.
    """
    z = np.asarray(z, dtype=float)
    shaped = z.reshape(z.shape[:-1] + (M, K))
    return softmax(shaped, axis=-2).reshape(z.shape)


def _softmax_backward(y, dy, axis):
    return y * (dy - (y * dy).sum(axis=axis, keepdims=True))


class Mlp:
    """ReLU multilayer perceptron with a configurable output activation.

    ``output="softmax-columns"`` needs ``action_shape=(M, K)`` and applies
    :func:`action_activation` to the final layer.
    """

    def __init__(self, sizes, output: str = "linear", rng=None, action_shape=None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if output not in OUTPUTS:
            raise ValueError(f"unknown output activation {output!r}")
        if output == "softmax-columns":
            if action_shape is None or action_shape[0] * action_shape[1] != sizes[-1]:
                raise DimensionError("softmax-columns needs action_shape with M*K == output size")
        self.sizes = [int(s) for s in sizes]
        self.output = output
        self.action_shape = None if action_shape is None else tuple(int(a) for a in action_shape)
        rng = np.random.default_rng(rng)
        self._bind(np.empty(self.param_count(self.sizes)))
        for fan_in, W, b in zip(self.sizes[:-1], self.params[0::2], self.params[1::2]):
            bound = 1.0 / np.sqrt(fan_in)
            W[...] = rng.uniform(-bound, bound, size=W.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)
        self._cache = None

    @staticmethod
    def param_count(sizes) -> int:
        return int(sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:])))

    def _bind(self, flat: np.ndarray) -> None:
        # leading axes of ``flat`` (none for a single net) index stacked agents
        self.flat = flat
        lead = flat.shape[:-1]
        bias_shape = lead + (1,) * len(lead)
        self.params = []
        pos = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.params.append(flat[..., pos:pos + fan_in * fan_out].reshape(lead + (fan_in, fan_out)))
            pos += fan_in * fan_out
            self.params.append(flat[..., pos:pos + fan_out].reshape(bias_shape + (fan_out,)))
            pos += fan_out

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def copy(self):
        other = type(self).__new__(type(self))
        other.sizes = list(self.sizes)
        other.output = self.output
        other.action_shape = self.action_shape
        other._bind(self.flat.copy())
        other._cache = None
        return other

    def get_params(self) -> list:
        return [p.copy() for p in self.params]

    def set_params(self, params) -> None:
        for dst, src in zip(self.params, params):
            if dst.shape != src.shape:
                raise DimensionError(f"parameter shape {src.shape} != {dst.shape}")
            dst[...] = src

    def _activate_out(self, z):
        if self.output == "linear":
            return z
        if self.output == "sigmoid":
            return sigmoid(z)
        if self.output == "softmax":
            return softmax(z, axis=-1)
        return action_activation(z, *self.action_shape)

    def forward(self, x, cache: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == self.flat.ndim
        h = x[..., None, :] if single else x
        if h.shape[-1] != self.sizes[0]:
            raise DimensionError(f"input size {h.shape[-1]} != {self.sizes[0]}")
        inputs = []
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            inputs.append(h)
            z = h @ W
            z += b
            h = np.maximum(z, 0.0, out=z) if i < self.n_layers - 1 else self._activate_out(z)
        if cache:
            self._cache = (inputs, h, single)
        return h[..., 0, :] if single else h

    __call__ = forward

    def backward(self, dy, param_grads: bool = True, need_input: bool = True) -> tuple[list, np.ndarray]:
        """Gradients of ``sum(dy * y)`` w.r.t. the parameters and the input.

        Uses the activations cached by the most recent :meth:`forward`. With
        ``param_grads=False`` only the input gradient is formed and the
        returned list holds ``None`` entries; ``need_input=False`` skips the
        input gradient (returned as ``None``).
        """
        if self._cache is None:
            raise StateError("backward() called before forward()")
        inputs, y, single = self._cache
        g = np.asarray(dy, dtype=float)
        if single:
            g = g[..., None, :]
        if self.output == "sigmoid":
            g = g * y * (1.0 - y)
        elif self.output == "softmax":
            g = _softmax_backward(y, g, -1)
        elif self.output == "softmax-columns":
            M, K = self.action_shape
            ys = y.reshape(y.shape[:-1] + (M, K))
            g = _softmax_backward(ys, g.reshape(ys.shape), -2).reshape(y.shape)
        grads = [None] * len(self.params)
        for i in reversed(range(self.n_layers)):
            h = inputs[i]
            W, b = self.params[2 * i], self.params[2 * i + 1]
            if param_grads:
                grads[2 * i] = h.swapaxes(-1, -2) @ g
                grads[2 * i + 1] = g.sum(axis=-2).reshape(b.shape)
            if i > 0:
                g = g @ W.swapaxes(-1, -2)
                np.multiply(g, h > 0, out=g)   # h = relu(z): z > 0 exactly where h > 0
            elif need_input:
                g = g @ W.swapaxes(-1, -2)
            else:
                g = None
        if g is not None and single:
            g = g[..., 0, :]
        return grads, g

    # -- checkpoints --------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "cellfree-mlp-v1",
            "sizes": self.sizes,
            "output": self.output,
            "action_shape": self.action_shape,
            "params": [p.ravel().tolist() for p in self.params],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mlp":
        net = cls(data["sizes"], data["output"], rng=0, action_shape=data.get("action_shape"))
        for dst, flat in zip(net.params, data["params"]):
            dst[...] = np.asarray(flat, dtype=float).reshape(dst.shape)
        return net

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Mlp":
        return cls.from_dict(json.loads(Path(path).read_text()))


class AdamState:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step = 0
        # reused scratch: large fresh temporaries are costly to allocate
        self._work = [np.empty_like(p) for p in params]


def adam_step(params, grads, state: AdamState) -> list:
    """Bias-corrected Adam descent step applied to ``params`` in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v, w in zip(params, grads, state.m, state.v, state._work):
        m *= b1
        np.multiply(g, 1.0 - b1, out=w)
        m += w
        v *= b2
        np.multiply(g, g, out=w)
        w *= 1.0 - b2
        v += w
        # p -= lr * (m / c1) / (sqrt(v / c2) + eps)
        np.divide(v, c2, out=w)
        np.sqrt(w, out=w)
        w += state.eps
        np.divide(m, w, out=w)
        w *= state.lr / c1
        p -= w
    return params


class Adam:
    """Stateful optimizer for an :class:`Mlp` (flat fast path) or a parameter list."""

    def __init__(self, params, lr=1e-3, **kw):
        if isinstance(params, Mlp):
            self._flat = params.flat
            self.params = params.params
            self.state = AdamState([self._flat], lr=lr, **kw)
        else:
            self._flat = None
            self.params = params
            self.state = AdamState(params, lr=lr, **kw)

    def step(self, grads) -> None:
        if self._flat is None:
            adam_step(self.params, grads, self.state)
        else:
            if not hasattr(self, "_g"):
                self._g = np.empty_like(self._flat)
            lead = self._flat.shape[:-1]
            np.concatenate([x.reshape(lead + (-1,)) for x in grads], axis=-1, out=self._g)
            adam_step([self._flat], [self._g], self.state)


def _pairs(target, source):
    if isinstance(target, Mlp) and isinstance(source, Mlp):
        return [target.flat], [source.flat]
    return target, source


def polyak_update(target_params, source_params, tau: float):
    """theta' <- tau * theta + (1 - tau) * theta', in place (lists or :class:`Mlp`)."""
    for t, s in zip(*_pairs(target_params, source_params)):
        t *= 1.0 - tau
        t += tau * s
    return target_params


def hard_update(target_params, source_params):
    for t, s in zip(*_pairs(target_params, source_params)):
        t[...] = s
    return target_params
