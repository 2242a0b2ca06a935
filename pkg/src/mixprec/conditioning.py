"""Condition numbers of dot products and activations.

The recompute criterion scores each output component by the product of two
condition numbers: the dot-product condition number ``|W||x| / |Wx|`` (how
much cancellation occurred) and the activation condition number
``|v phi'(v) / phi(v)|`` (how much the activation damps or passes input
perturbations).  The practical estimator drops the expensive ``|W||x|``
numerator, scoring by ``kappa_phi / |v|`` instead; the dropped constant
folds into the tolerance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .activations import ActivationKind
from .linalg import Matrix, Vector, mma_values_batch
from .precision import FloatFormat

__all__ = [
    "EstimatorMode",
    "KappaEstimator",
    "kappa_dot",
    "kappa_phi",
    "kappa_layer_exact",
    "kappa_layer_practical",
    "estimate_kappa_batch",
]


class EstimatorMode(enum.Enum):
    #: exact kappa from a float64 pass (numerator, denominator, and
    #: activation condition all from wide-precision quantities)
    EXACT_WIDE = "exact_wide"
    #: exact formula, but every ingredient computed with low-precision
    #: accumulation (what the estimator fidelity plots compare against)
    EXACT_LOW = "exact_low"
    #: drop the |W||x| numerator: kappa_phi / |v_low| from quantities the
    #: low pass already produced
    APPROX_INVERSE_V = "approx_inverse_v"


@dataclass(frozen=True)
class KappaEstimator:
    mode: EstimatorMode = EstimatorMode.APPROX_INVERSE_V
    #: diagnostic stand-in for the dropped numerator; never tuned, since
    #: scaling the score by c is the same as scaling the tolerance by 1/c
    constant_c: float = 3.0


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """num/den with 0/0 -> 0 and x/0 -> inf for x > 0."""
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    out = np.where((den == 0.0) & (num == 0.0), 0.0, out)
    out = np.where((den == 0.0) & (num > 0.0), np.inf, out)
    return out


def kappa_dot(W: Matrix | np.ndarray, x, v) -> np.ndarray:
    """Condition number of each row's dot product: (|W||x|)_i / |v_i|.

    ``v`` is the computed product (in whatever precision); components with
    v_i = 0 but positive numerator are infinitely ill-conditioned, and
    0/0 is 0 by convention (an all-zero row is insensitive).
    """
    Wd = W.data if isinstance(W, Matrix) else np.asarray(W, dtype=np.float64)
    xd = x.data if isinstance(x, Vector) else np.asarray(x, dtype=np.float64)
    vd = v.data if isinstance(v, Vector) else np.asarray(v, dtype=np.float64)
    num = np.einsum("ij,j->i", np.abs(Wd), np.abs(xd))
    return _safe_ratio(num, np.abs(vd))


def kappa_phi(v, kind: ActivationKind) -> np.ndarray:
    """Activation condition number |v phi'(v) / phi(v)|, componentwise.

    ReLU: 1 for v > 0, else 0 (a dead output is insensitive to relative
    input perturbations below 100%).  Tanh: |v (1 - tanh^2 v) / tanh v|,
    evaluated in the cancellation-free form |2v / sinh(2v)| and extended
    continuously to 1 at v = 0; decreases monotonically in |v|.
    """
    vd = np.asarray(v.data if isinstance(v, Vector) else v, dtype=np.float64)
    if kind is ActivationKind.RELU:
        return (vd > 0.0).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.abs(2.0 * vd / np.sinh(2.0 * vd))
    return np.where(vd == 0.0, 1.0, out)


def _combine(kphi: np.ndarray, kdot: np.ndarray) -> np.ndarray:
    # 0 * inf resolves to 0: a dead component is insensitive regardless
    # of how much cancellation produced it
    with np.errstate(invalid="ignore"):
        prod = kphi * kdot
    return np.where(kphi == 0.0, 0.0, prod)


def kappa_layer_exact(W, x, v, kind: ActivationKind) -> np.ndarray:
    """Layer condition number kappa_phi(v) o kappa_dot(W, x, v)."""
    return _combine(kappa_phi(v, kind), kappa_dot(W, x, v))


def kappa_layer_practical(v_low, kind: ActivationKind) -> np.ndarray:
    """Estimator used on the fast path: kappa_phi(v_low) / |v_low|.

    Needs nothing beyond the already-computed low-precision pre-activation;
    zero components with nonzero kappa_phi map to inf (always recompute).
    """
    vd = np.asarray(v_low.data if isinstance(v_low, Vector) else v_low)
    return _safe_ratio(kappa_phi(vd, kind), np.abs(vd))


def estimate_kappa_batch(
    estimator: KappaEstimator,
    W: np.ndarray,
    H_prev: np.ndarray,
    V_low: np.ndarray,
    kind: ActivationKind,
    low: FloatFormat,
) -> np.ndarray:
    """Per-component kappa for a batch: rows of H_prev/V_low are inputs."""
    if estimator.mode is EstimatorMode.APPROX_INVERSE_V:
        return _safe_ratio(kappa_phi(V_low, kind), np.abs(V_low))
    if estimator.mode is EstimatorMode.EXACT_WIDE:
        V = H_prev @ W.T
        num = np.abs(H_prev) @ np.abs(W).T
        return _combine(kappa_phi(V, kind), _safe_ratio(num, np.abs(V)))
    # EXACT_LOW: numerator accumulated in the low format, like the low pass
    num = mma_values_batch(np.abs(W), np.abs(H_prev), low, w_fmt=low, x_fmt=low)
    return _combine(kappa_phi(V_low, kind), _safe_ratio(num, np.abs(V_low)))
