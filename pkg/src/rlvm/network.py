"""Small numpy multilayer perceptron with analytic backpropagation, plus Adam."""

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np


@dataclass
class MLP:
    """Fully connected network: tanh hidden layers, linear output.

    Weights are stored as ``(fan_in, fan_out)`` matrices so a batch of row
    vectors is propagated with ``x @ W + b``.
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def init(
        cls,
        sizes: Sequence[int],
        rng: np.random.Generator,
        output_bias: float = 0.0,
        output_gain: float = 0.1,
    ) -> "MLP":
        """Glorot-uniform weights, zero hidden biases; the output layer is scaled by ``output_gain``."""
        weights, biases = [], []
        layers = list(zip(sizes[:-1], sizes[1:]))
        for index, (fan_in, fan_out) in enumerate(layers):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            b = np.zeros(fan_out)
            if index == len(layers) - 1:
                w *= output_gain
                b += output_bias
            weights.append(w)
            biases.append(b)
        return cls(weights, biases)

    @property
    def sizes(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def parameters(self) -> List[np.ndarray]:
        """Parameter arrays in the order W0, b0, W1, b1, ..."""
        params: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        """Return the output batch and the layer activations needed by :meth:`backward`."""
        activations = [np.atleast_2d(np.asarray(x, dtype=float))]
        last = len(self.weights) - 1
        for index, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = activations[-1] @ w + b
            activations.append(z if index == last else np.tanh(z))
        return activations[-1], activations

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, activations: List[np.ndarray], grad_out: np.ndarray) -> List[np.ndarray]:
        """Gradients of a scalar loss w.r.t. the parameters, given dLoss/dOutput."""
        grads: List[np.ndarray] = [np.empty(0)] * (2 * len(self.weights))
        delta = np.atleast_2d(grad_out)
        for index in range(len(self.weights) - 1, -1, -1):
            inputs = activations[index]
            grads[2 * index] = inputs.T @ delta
            grads[2 * index + 1] = delta.sum(axis=0)
            if index > 0:
                delta = (delta @ self.weights[index].T) * (1.0 - inputs**2)
        return grads

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def load_flat(self, vector: np.ndarray) -> None:
        offset = 0
        for param in self.parameters():
            size = param.size
            param[...] = vector[offset : offset + size].reshape(param.shape)
            offset += size

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())


def clip_by_global_norm(grads: List[np.ndarray], max_norm: float) -> Tuple[List[np.ndarray], float]:
    """Scale gradients so their joint L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads, norm


@dataclass
class Adam:
    """Adam optimizer with bias correction, updating parameters in place.

    m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
    p <- p - lr * m_hat / (sqrt(v_hat) + eps)
    """

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    def apply(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        """Take one descent step on ``params`` along ``grads``."""
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step += 1
        correction1 = 1.0 - self.beta1**self.step
        correction2 = 1.0 - self.beta2**self.step
        for param, grad, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
