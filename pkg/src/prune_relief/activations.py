"""Pointwise activation functions with derivatives and Lipschitz constants.

Each activation is a frozen record so layers can be serialized by name.
Derivatives are taken with respect to the pre-activation input; the ReLU
derivative at exactly zero uses the conventional subgradient 0.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Activation:
    name: str
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    lipschitz: float


def _relu(z):
    return np.maximum(z, 0)


def _relu_df(z):
    return (z > 0).astype(z.dtype)


def _elu(z):
    # alpha = 1; computed on the clipped negative part so exp never overflows
    out = np.where(z > 0, z, np.expm1(np.minimum(z, 0)))
    return out.astype(z.dtype, copy=False)


def _elu_df(z):
    out = np.where(z > 0, 1.0, np.exp(np.minimum(z, 0)))
    return out.astype(z.dtype, copy=False)


def _sigmoid(z):
    # split by sign for numerical stability at large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _sigmoid_df(z):
    s = _sigmoid(z)
    return s * (1 - s)


def _tanh_df(z):
    t = np.tanh(z)
    return 1 - t * t


def _identity(z):
    return z


def _identity_df(z):
    return np.ones_like(z)


ACTIVATIONS = {
    "relu": Activation("relu", _relu, _relu_df, 1.0),
    "elu": Activation("elu", _elu, _elu_df, 1.0),
    "sigmoid": Activation("sigmoid", _sigmoid, _sigmoid_df, 0.25),
    "tanh": Activation("tanh", np.tanh, _tanh_df, 1.0),
    "identity": Activation("identity", _identity, _identity_df, 1.0),
}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(
            f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}"
        ) from None
