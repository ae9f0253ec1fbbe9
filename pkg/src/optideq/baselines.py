"""Digital reference models: logistic regression and two-hidden-layer ReLU MLPs.

Both are trained with the same Adam / early-stopping loop as the equilibrium
model (:func:`optideq.training.train`).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from optideq.deq import predict_class
from optideq.errors import ConfigurationError
from optideq.training import cross_entropy

MLP_SMALL_WIDTH = 48
MLP_LARGE_WIDTH = 128
MLP_SMALL_LR = 5e-4
MLP_LARGE_LR = 1e-3
LOGREG_L2 = 1e-4
LOGREG_LR = 1e-2
DEQ_LR = 3e-4


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    kind = "mlp"

    @classmethod
    def init(cls, d_in: int, width: int = MLP_SMALL_WIDTH, seed: int = 0) -> "MlpParams":
        """Uniform init in +-1/sqrt(fan_in) for weights and biases."""
        rng = np.random.default_rng(seed)

        def layer(fan_out, fan_in):
            lim = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-lim, lim, (fan_out, fan_in)), rng.uniform(-lim, lim, fan_out)

        W1, b1 = layer(width, d_in)
        W2, b2 = layer(width, width)
        W3, b3 = layer(2, width)
        return cls(W1, b1, W2, b2, W3, b3)

    @classmethod
    def zeros(cls, d_in: int, width: int) -> "MlpParams":
        return cls(np.zeros((width, d_in)), np.zeros(width), np.zeros((width, width)),
                   np.zeros(width), np.zeros((2, width)), np.zeros(2))

    @property
    def d_in(self) -> int:
        return self.W1.shape[1]

    @property
    def width(self) -> int:
        return self.W1.shape[0]

    def params(self) -> dict:
        return {name: getattr(self, name) for name in ("W1", "b1", "W2", "b2", "W3", "b3")}

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def copy(self) -> "MlpParams":
        return copy.deepcopy(self)

    def predict_logits(self, X) -> np.ndarray:
        return mlp_forward(self, X)

    def predict(self, X) -> np.ndarray:
        return predict_class(self.predict_logits(X))

    def loss_and_grads(self, X, y):
        loss, grads = mlp_backward(self, (X, y))
        return loss, grads


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """affine -> ReLU -> affine -> ReLU -> affine, for one row or a batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.d_in:
        raise ConfigurationError(f"input width {x.shape[-1]} does not match d_in={params.d_in}")
    h1 = np.maximum(x @ params.W1.T + params.b1, 0.0)
    h2 = np.maximum(h1 @ params.W2.T + params.b2, 0.0)
    return h2 @ params.W3.T + params.b3


def mlp_backward(params: MlpParams, batch):
    """Mean cross-entropy over ``batch = (X, y)`` and analytic gradients."""
    X, y = batch
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    a1 = X @ params.W1.T + params.b1
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ params.W2.T + params.b2
    h2 = np.maximum(a2, 0.0)
    logits = h2 @ params.W3.T + params.b3
    losses, dz = cross_entropy(logits, y)
    dz = dz / n
    g = {"W3": dz.T @ h2, "b3": dz.sum(axis=0)}
    d2 = (dz @ params.W3) * (a2 > 0)
    g["W2"] = d2.T @ h1
    g["b2"] = d2.sum(axis=0)
    d1 = (d2 @ params.W2) * (a1 > 0)
    g["W1"] = d1.T @ X
    g["b1"] = d1.sum(axis=0)
    return float(np.mean(losses)), g


def mlp_small(d_in: int, seed: int = 0) -> MlpParams:
    return MlpParams.init(d_in, MLP_SMALL_WIDTH, seed)


def mlp_large(d_in: int, seed: int = 0) -> MlpParams:
    return MlpParams.init(d_in, MLP_LARGE_WIDTH, seed)


@dataclass
class LogRegParams:
    """Two-logit logistic regression with an L2 penalty on the weights."""

    W: np.ndarray
    b: np.ndarray
    l2: float = LOGREG_L2

    kind = "logreg"

    @classmethod
    def init(cls, d_in: int, seed: int = 0, l2: float = LOGREG_L2) -> "LogRegParams":
        rng = np.random.default_rng(seed)
        lim = 1.0 / np.sqrt(d_in)
        return cls(rng.uniform(-lim, lim, (2, d_in)), np.zeros(2), l2)

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    def params(self) -> dict:
        return {"W": self.W, "b": self.b}

    def parameter_count(self) -> int:
        return self.W.size + self.b.size

    def copy(self) -> "LogRegParams":
        return copy.deepcopy(self)

    def predict_logits(self, X) -> np.ndarray:
        return logreg_forward(self, X)

    def predict(self, X) -> np.ndarray:
        return predict_class(self.predict_logits(X))

    def loss_and_grads(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        losses, dz = cross_entropy(logreg_forward(self, X), y)
        dz = dz / n
        loss = float(np.mean(losses)) + 0.5 * self.l2 * float(np.sum(self.W * self.W))
        return loss, {"W": dz.T @ X + self.l2 * self.W, "b": dz.sum(axis=0)}


def logreg_forward(params: LogRegParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.d_in:
        raise ConfigurationError(f"input width {x.shape[-1]} does not match d_in={params.d_in}")
    return x @ params.W.T + params.b


def default_learning_rate(model) -> float:
    if isinstance(model, MlpParams):
        return MLP_LARGE_LR if model.width >= MLP_LARGE_WIDTH else MLP_SMALL_LR
    if isinstance(model, LogRegParams):
        return LOGREG_LR
    return DEQ_LR
