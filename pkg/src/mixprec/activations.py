"""Activation functions shared by the network and conditioning modules."""

from __future__ import annotations

import enum

import numpy as np

__all__ = ["ActivationKind", "activation_value", "activation_derivative"]


class ActivationKind(enum.Enum):
    RELU = "relu"
    TANH = "tanh"


def activation_value(v, kind: ActivationKind):
    """Componentwise activation, evaluated in float64."""
    v = np.asarray(v, dtype=np.float64)
    if kind is ActivationKind.RELU:
        return np.maximum(v, 0.0)
    return np.tanh(v)


def activation_derivative(v, kind: ActivationKind):
    """Analytic derivative; the ReLU subgradient at 0 is taken as 0."""
    v = np.asarray(v, dtype=np.float64)
    if kind is ActivationKind.RELU:
        return (v > 0.0).astype(np.float64)
    t = np.tanh(v)
    return 1.0 - t * t
