"""Differentiable layers of the multi-path wavelet network.

Every layer keeps whatever its backward pass needs on ``self.cache`` during a
training-mode forward call; ``backward`` consumes and clears it, so a second
backward without a fresh forward raises :class:`StateError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError, DimensionError, StateError
from .filters import alternating_flip, lowpass_gradients, lowpass_taps
from .transform import analyze, analyze_backward, output_size

TWO_PI = 2.0 * math.pi

# Neuron activations: logistic sigmoid minus a constant offset.
ACTIVATION_OFFSETS = {"sigmoid": 0.0, "centered_sigmoid": 0.5}


@dataclass
class NetworkConfig:
    paths: int = 8
    levels_per_path: int = 3
    fc_widths: tuple[int, ...] = (32, 32)
    classes: int = 10
    input_shape: tuple[int, int, int] = (28, 28, 1)
    dropout_keep: float = 0.8
    activation: str = "centered_sigmoid"

    def __post_init__(self):
        self.fc_widths = tuple(int(w) for w in self.fc_widths)
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.validate()

    def validate(self) -> None:
        if self.paths < 1:
            raise ConfigError(f"paths must be >= 1, got {self.paths}")
        if self.levels_per_path < 1:
            raise ConfigError(f"levels_per_path must be >= 1, got {self.levels_per_path}")
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        if any(w < 1 for w in self.fc_widths):
            raise ConfigError(f"fully connected widths must be positive, got {self.fc_widths}")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (height, width, channels), got {self.input_shape}")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigError(f"dropout_keep must lie in (0, 1], got {self.dropout_keep}")
        if self.activation not in ACTIVATION_OFFSETS:
            raise ConfigError(
                f"activation must be one of {sorted(ACTIVATION_OFFSETS)}, got {self.activation!r}"
            )

    def path_output_shape(self) -> tuple[int, int, int]:
        h, w, c = self.input_shape
        for _ in range(self.levels_per_path):
            h, w, c = output_size(h), output_size(w), 4 * c
        return h, w, c

    def flat_features(self) -> int:
        h, w, c = self.path_output_shape()
        return self.paths * h * w * c

    def dense_shapes(self) -> list[tuple[int, int]]:
        """``(out, in)`` for every dense layer, classifier last."""
        widths = [self.flat_features(), *self.fc_widths, self.classes]
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]

    def to_dict(self) -> dict:
        return {
            "paths": self.paths,
            "levels_per_path": self.levels_per_path,
            "fc_widths": list(self.fc_widths),
            "classes": self.classes,
            "input_shape": list(self.input_shape),
            "dropout_keep": self.dropout_keep,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> NetworkConfig:
        return cls(**d)


def param_count(config: NetworkConfig) -> int:
    wavelet = 2 * config.levels_per_path * config.paths
    dense = sum(o * i + o for o, i in config.dense_shapes())
    return wavelet + dense


def sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(z)


class WaveletNeuron:
    """One DWT level with learnable angles, followed by a sigmoid on every coefficient.

    ``activation="sigmoid"`` is the plain logistic function with outputs in
    (0, 1); ``"centered_sigmoid"`` subtracts 1/2 so outputs lie in (-1/2, 1/2)
    and carry no constant offset into the next level or the dense head.

    ``alpha`` and ``beta`` are 0-d arrays so that an optimizer updating them in
    place is seen by the neuron immediately.
    """

    def __init__(self, alpha, beta, activation: str = "centered_sigmoid"):
        if activation not in ACTIVATION_OFFSETS:
            raise ConfigError(f"unknown neuron activation {activation!r}")
        self.alpha = alpha if isinstance(alpha, np.ndarray) else np.array(float(alpha))
        self.beta = beta if isinstance(beta, np.ndarray) else np.array(float(beta))
        self.offset = ACTIVATION_OFFSETS[activation]
        self.cache = None

    def lowpass(self) -> np.ndarray:
        return lowpass_taps(float(self.alpha), float(self.beta))

    def forward(self, x: np.ndarray, keep_cache: bool = True) -> np.ndarray:
        if x.ndim != 4:
            raise DimensionError(f"expected (batch, height, width, channels), got shape {x.shape}")
        a, b = float(self.alpha), float(self.beta)
        coeffs, tcache = analyze(x, lowpass_taps(a, b))
        s = sigmoid(coeffs)
        self.cache = (tcache, s, a, b) if keep_cache else None
        return s - self.offset if self.offset else s

    def backward(self, grad_out: np.ndarray) -> tuple[np.ndarray, float, float]:
        if self.cache is None:
            raise StateError("wavelet neuron backward called without a matching training forward")
        tcache, s, a, b = self.cache
        self.cache = None
        if grad_out.shape != s.shape:
            raise DimensionError(f"gradient shape {grad_out.shape} does not match output {s.shape}")
        dz = grad_out * s * (1.0 - s)
        da, db = lowpass_gradients(a, b)
        dx, (ga, gb) = analyze_backward(dz, tcache, (da, db))
        return dx, ga, gb


def neuron_forward(x: np.ndarray, neuron: WaveletNeuron) -> np.ndarray:
    return neuron.forward(x)


def neuron_backward(grad_out: np.ndarray, neuron: WaveletNeuron) -> tuple[np.ndarray, float, float]:
    return neuron.backward(grad_out)


class DenseLayer:
    def __init__(self, weights: np.ndarray, biases: np.ndarray, activation: str = "relu"):
        if activation not in ("relu", "none"):
            raise ConfigError(f"unknown activation {activation!r}")
        if weights.ndim != 2 or biases.shape != (weights.shape[0],):
            raise ConfigError(f"inconsistent dense shapes {weights.shape} and {biases.shape}")
        self.weights = weights
        self.biases = biases
        self.activation = activation
        self.cache = None

    def forward(self, x: np.ndarray, keep_cache: bool = True) -> np.ndarray:
        z = x @ self.weights.T + self.biases
        if self.activation == "relu":
            z = np.maximum(z, 0.0)
        self.cache = (x, z) if keep_cache else None
        return z

    def backward(self, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.cache is None:
            raise StateError("dense backward called without a matching training forward")
        x, z = self.cache
        self.cache = None
        if self.activation == "relu":
            grad_out = grad_out * (z > 0)
        return grad_out @ self.weights, grad_out.T @ x, grad_out.sum(axis=0)


def dropout(
    x: np.ndarray, keep: float, train: bool, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout. Returns the output and the scaling mask (``None`` when inactive)."""
    if not 0.0 < keep <= 1.0:
        raise ConfigError(f"keep probability must lie in (0, 1], got {keep}")
    if not train or keep == 1.0:
        return x, None
    if rng is None:
        raise ConfigError("training-mode dropout needs a random generator")
    mask = (rng.random(x.shape) < keep) / keep
    return x * mask, mask


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DataError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - shifted[rows, labels]))
    grad = np.exp(shifted - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


def param_names(config: NetworkConfig) -> list[str]:
    names = []
    for p in range(config.paths):
        for lvl in range(config.levels_per_path):
            names += [f"path{p}.level{lvl}.alpha", f"path{p}.level{lvl}.beta"]
    for i in range(len(config.dense_shapes())):
        names += [f"dense{i}.weight", f"dense{i}.bias"]
    return names


def init_params(config: NetworkConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Angles uniform over one period; dense weights Glorot-uniform, biases zero."""
    params: dict[str, np.ndarray] = {}
    for p in range(config.paths):
        for lvl in range(config.levels_per_path):
            a, b = rng.uniform(0.0, TWO_PI, size=2)
            params[f"path{p}.level{lvl}.alpha"] = np.array(a)
            params[f"path{p}.level{lvl}.beta"] = np.array(b)
    for i, (fan_out, fan_in) in enumerate(config.dense_shapes()):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params[f"dense{i}.weight"] = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        params[f"dense{i}.bias"] = np.zeros(fan_out)
    return params


def check_params(config: NetworkConfig, params: dict[str, np.ndarray]) -> None:
    expected = param_names(config)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ConfigError(f"parameters do not match config (missing {missing}, unexpected {extra})")
    for i, (o, n) in enumerate(config.dense_shapes()):
        if params[f"dense{i}.weight"].shape != (o, n) or params[f"dense{i}.bias"].shape != (o,):
            raise ConfigError(
                f"dense{i} has shape {params[f'dense{i}.weight'].shape}, config requires {(o, n)}"
            )
    for name in expected:
        if name.endswith((".alpha", ".beta")) and params[name].shape != ():
            raise ConfigError(f"{name} must be a scalar, got shape {params[name].shape}")


@dataclass
class _ForwardState:
    batch_shape: tuple[int, ...]
    path_shape: tuple[int, int, int]
    masks: list = field(default_factory=list)


class WaveletNetwork:
    """Parallel wavelet paths, concatenated and flattened, then a dense head.

    Holds references (not copies) to the arrays in ``params``; in-place
    updates by an optimizer take effect on the next forward call.
    """

    def __init__(self, config: NetworkConfig, params: dict[str, np.ndarray]):
        check_params(config, params)
        self.config = config
        self.params = params
        self.paths = [
            [
                WaveletNeuron(
                    params[f"path{p}.level{lvl}.alpha"],
                    params[f"path{p}.level{lvl}.beta"],
                    config.activation,
                )
                for lvl in range(config.levels_per_path)
            ]
            for p in range(config.paths)
        ]
        shapes = config.dense_shapes()
        self.dense = [
            DenseLayer(
                params[f"dense{i}.weight"],
                params[f"dense{i}.bias"],
                "relu" if i < len(shapes) - 1 else "none",
            )
            for i in range(len(shapes))
        ]
        self._state: _ForwardState | None = None

    @classmethod
    def initialize(cls, config: NetworkConfig, rng: np.random.Generator) -> WaveletNetwork:
        return cls(config, init_params(config, rng))

    def forward(
        self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None
    ) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[..., None]
        if x.shape[1:] != self.config.input_shape:
            raise ConfigError(
                f"input shape {x.shape[1:]} does not match configured {self.config.input_shape}"
            )
        outs = []
        for path in self.paths:
            h = x
            for neuron in path:
                h = neuron.forward(h, keep_cache=train)
            outs.append(h)
        feats = np.concatenate(outs, axis=3)
        state = _ForwardState(x.shape, outs[0].shape[1:])
        h = feats.reshape(x.shape[0], -1)
        for i, layer in enumerate(self.dense):
            h = layer.forward(h, keep_cache=train)
            if i < len(self.dense) - 1:
                h, mask = dropout(h, self.config.dropout_keep, train, rng)
                state.masks.append(mask)
        self._state = state if train else None
        return h

    def backward(self, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
        state = self._state
        if state is None:
            raise StateError("backward requires a preceding training-mode forward (cache is stale or missing)")
        self._state = None
        grads: dict[str, np.ndarray] = {}
        g = np.asarray(grad_logits, dtype=np.float64)
        for i in reversed(range(len(self.dense))):
            if i < len(self.dense) - 1 and state.masks[i] is not None:
                g = g * state.masks[i]
            g, gw, gb = self.dense[i].backward(g)
            grads[f"dense{i}.weight"] = gw
            grads[f"dense{i}.bias"] = gb

        ph, pw, pc = state.path_shape
        g = g.reshape(state.batch_shape[0], ph, pw, pc * self.config.paths)
        for p, path in enumerate(self.paths):
            gp = g[..., p * pc : (p + 1) * pc]
            for lvl in reversed(range(len(path))):
                gp, ga, gb = path[lvl].backward(gp)
                grads[f"path{p}.level{lvl}.alpha"] = np.array(ga)
                grads[f"path{p}.level{lvl}.beta"] = np.array(gb)
        return {name: grads[name] for name in param_names(self.config)}

    def predict(self, x: np.ndarray, batch_size: int = 500) -> np.ndarray:
        return np.concatenate(
            [self.forward(x[i : i + batch_size]).argmax(axis=1) for i in range(0, len(x), batch_size)]
        )

    def filters(self) -> dict[str, np.ndarray]:
        """Current lowpass/highpass taps of every neuron, keyed ``path{p}.level{l}``."""
        out = {}
        for p, path in enumerate(self.paths):
            for lvl, neuron in enumerate(path):
                h = neuron.lowpass()
                out[f"path{p}.level{lvl}"] = np.stack([h, alternating_flip(h)])
        return out
