"""MLP model and its forward-pass strategies.

Three ways to run a network whose weights are stored in a low-precision
format: accumulate everything uniformly in one format, or run the adaptive
strategy that computes each layer in the low format first, estimates the
per-component condition numbers from that output, and recomputes only the
badly conditioned components in a higher format before requantizing them.

The bias of each layer is folded into an extra weight column against a
constant-1 input component, so a layer is a single matrix-vector product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import ActivationKind, activation_value
from .conditioning import KappaEstimator, estimate_kappa_batch
from .linalg import (
    DimensionError,
    Matrix,
    SaturationCounter,
    Vector,
    mma_values_batch,
    mma_values_pairs,
)
from .precision import FloatFormat, quantize

__all__ = [
    "Layer",
    "Network",
    "LayerTrace",
    "BatchResult",
    "activate",
    "forward_uniform",
    "forward_mixed",
    "forward_multi",
    "forward_oracle",
    "forward_batch_uniform",
    "forward_batch_multi",
    "forward_batch_oracle",
]


@dataclass(frozen=True)
class Layer:
    """One dense layer: bias-augmented weights plus an activation."""

    weights: Matrix  # (out_dim, in_dim + 1); last column is the bias
    activation: ActivationKind

    @property
    def in_dim(self) -> int:
        return self.weights.cols - 1

    @property
    def out_dim(self) -> int:
        return self.weights.rows


@dataclass(frozen=True)
class Network:
    layers: tuple[Layer, ...]
    low_format: FloatFormat
    high_format: FloatFormat

    def __post_init__(self) -> None:
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionError(
                    f"layer dims do not chain: {a.out_dim} -> {b.in_dim}"
                )
        for ly in layers:
            if ly.weights.fmt != self.low_format:
                raise ValueError("layer weights must be stored in the low format")
        if not self.high_format.unit_roundoff < self.low_format.unit_roundoff:
            raise ValueError("high format must have smaller unit roundoff than low")
        object.__setattr__(self, "layers", layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def depth(self) -> int:
        return len(self.layers)


@dataclass
class LayerTrace:
    """Everything recorded about one layer of one forward pass."""

    v: np.ndarray  # pre-activation actually used (recomputed where masked)
    h: np.ndarray  # post-activation output fed to the next layer
    kappa: np.ndarray | None  # estimated condition numbers, None if unused
    recompute_mask: np.ndarray  # True where the component was recomputed
    rho_layer: float  # fraction of components recomputed
    bucket: np.ndarray | None = None  # format index per component (multi)


def activate(v, kind: ActivationKind, fmt: FloatFormat):
    """phi evaluated in float64, then rounded once to ``fmt``."""
    if isinstance(v, Vector):
        return Vector(quantize(activation_value(v.data, kind), fmt), fmt)
    return quantize(activation_value(v, kind), fmt)


def _as_input(net: Network, x) -> np.ndarray:
    xd = x.data if isinstance(x, Vector) else np.asarray(x, dtype=np.float64)
    if xd.ndim != 1 or xd.shape[0] != net.in_dim:
        raise DimensionError(f"input must have length {net.in_dim}")
    # input quantization is treated as part of the data, not of the error
    return quantize(xd, net.low_format)


def _augment(H: np.ndarray) -> np.ndarray:
    ones = np.ones((*H.shape[:-1], 1))
    return np.ascontiguousarray(np.concatenate([H, ones], axis=-1))


def _validate_multi(
    net: Network, thresholds, formats
) -> tuple[np.ndarray, tuple[FloatFormat, ...]]:
    taus = np.asarray(thresholds, dtype=np.float64)
    fmts = tuple(formats)
    if len(fmts) != taus.shape[0] + 1:
        raise ValueError("need exactly one more format than thresholds")
    if taus.shape[0] == 0:
        raise ValueError("at least one threshold is required")
    if not (np.all(np.isfinite(taus)) and np.all(taus > 0)):
        raise ValueError("thresholds must be positive and finite")
    if np.any(np.diff(taus) <= 0):
        raise ValueError("thresholds must be strictly ascending")
    roundoffs = [f.unit_roundoff for f in fmts]
    if np.any(np.diff(roundoffs) >= 0):
        raise ValueError("formats must be ordered from lowest to highest precision")
    if fmts[0] != net.low_format:
        raise ValueError("the first format must be the network's low format")
    return taus, fmts


# ---------------------------------------------------------------------------
# batched engine (rows of X are independent inputs)
# ---------------------------------------------------------------------------


@dataclass
class BatchResult:
    outputs: np.ndarray  # (B, out_dim), entries in the low format
    rho: float  # fraction of inner products recomputed, all layers pooled
    per_layer_rho: list[float]
    rho_per_format: list[float]  # index j: fraction recomputed in formats[j]
    zero_kappa_fraction: float | None  # fraction of kappa estimates equal to 0
    saturations: int


def forward_batch_uniform(
    net: Network,
    X: np.ndarray,
    fmt: FloatFormat,
    estimator: KappaEstimator | None = None,
    saturation: SaturationCounter | None = None,
) -> BatchResult:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    H = quantize(X, net.low_format)
    low = net.low_format
    zero_k = 0
    total = 0
    for ly in net.layers:
        Ha = _augment(H)
        w_codes = ly.weights.codes if _codes_ok(ly, low, fmt, saturation) else None
        V = mma_values_batch(
            ly.weights.data, Ha, fmt,
            w_fmt=low, x_fmt=low if fmt == low else None,
            w_codes=w_codes, saturation=saturation,
        )
        if estimator is not None:
            K = estimate_kappa_batch(estimator, ly.weights.data, Ha, V,
                                     ly.activation, low)
            zero_k += int(np.count_nonzero(K == 0.0))
            total += K.size
        H = quantize(activation_value(V, ly.activation), fmt)
    return BatchResult(
        outputs=H,
        rho=1.0 if fmt == net.high_format else 0.0,
        per_layer_rho=[1.0 if fmt == net.high_format else 0.0] * net.depth,
        rho_per_format=[],
        zero_kappa_fraction=(zero_k / total) if estimator is not None else None,
        saturations=saturation.count if saturation is not None else 0,
    )


def _codes_ok(ly: Layer, low, fmt, saturation) -> bool:
    return saturation is None and fmt == low and low.total_bits == 8


def forward_batch_multi(
    net: Network,
    X: np.ndarray,
    thresholds,
    formats,
    estimator: KappaEstimator | None = None,
    saturation: SaturationCounter | None = None,
) -> BatchResult:
    taus, fmts = _validate_multi(net, thresholds, formats)
    estimator = estimator or KappaEstimator()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    low = net.low_format
    H = quantize(X, low)
    B = X.shape[0]

    per_layer_rho: list[float] = []
    recomputed_per_fmt = np.zeros(len(fmts), dtype=np.int64)
    recomputed = 0
    zero_k = 0
    total = 0

    for ly in net.layers:
        Ha = _augment(H)
        w_codes = ly.weights.codes if _codes_ok(ly, low, fmts[0], saturation) else None
        V = mma_values_batch(
            ly.weights.data, Ha, fmts[0],
            w_fmt=low, x_fmt=low, w_codes=w_codes, saturation=saturation,
        )
        K = estimate_kappa_batch(estimator, ly.weights.data, Ha, V,
                                 ly.activation, low)
        bucket = np.searchsorted(taus, K)  # 0 keeps; j recomputes in fmts[j]
        H_new = quantize(activation_value(V, ly.activation), low)

        layer_recomputed = 0
        for j in range(1, len(fmts)):
            b_idx, r_idx = np.nonzero(bucket == j)
            if b_idx.size == 0:
                continue
            v_hi = mma_values_pairs(ly.weights.data, Ha, b_idx, r_idx, fmts[j],
                                    saturation=saturation)
            h_hi = quantize(activation_value(v_hi, ly.activation), fmts[j])
            H_new[b_idx, r_idx] = quantize(h_hi, low)
            layer_recomputed += b_idx.size
            recomputed_per_fmt[j] += b_idx.size

        per_layer_rho.append(layer_recomputed / (B * ly.out_dim))
        recomputed += layer_recomputed
        zero_k += int(np.count_nonzero(K == 0.0))
        total += K.size
        H = H_new

    n_components = B * sum(ly.out_dim for ly in net.layers)
    return BatchResult(
        outputs=H,
        rho=recomputed / n_components,
        per_layer_rho=per_layer_rho,
        rho_per_format=[c / n_components for c in recomputed_per_fmt],
        zero_kappa_fraction=zero_k / total,
        saturations=saturation.count if saturation is not None else 0,
    )


def forward_batch_oracle(net: Network, X: np.ndarray) -> np.ndarray:
    """float64 reference pass (same quantized input and weights, no rounding)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    H = quantize(X, net.low_format)
    for ly in net.layers:
        V = _augment(H) @ ly.weights.data.T
        H = activation_value(V, ly.activation)
    return H


# ---------------------------------------------------------------------------
# single-input passes with traces (the spec-level operations)
# ---------------------------------------------------------------------------


def forward_uniform(
    net: Network,
    x,
    fmt: FloatFormat,
    estimator: KappaEstimator | None = None,
    saturation: SaturationCounter | None = None,
) -> tuple[Vector, list[LayerTrace]]:
    """Accumulate every inner product of every layer in ``fmt``."""
    h = _as_input(net, x)
    low = net.low_format
    traces: list[LayerTrace] = []
    for ly in net.layers:
        ha = _augment(h[None, :])
        w_codes = ly.weights.codes if _codes_ok(ly, low, fmt, saturation) else None
        v = mma_values_batch(
            ly.weights.data, ha, fmt,
            w_fmt=low, x_fmt=low if fmt == low else None,
            w_codes=w_codes, saturation=saturation,
        )[0]
        kappa = None
        if estimator is not None:
            kappa = estimate_kappa_batch(estimator, ly.weights.data, ha,
                                         v[None, :], ly.activation, low)[0]
        h = quantize(activation_value(v, ly.activation), fmt)
        traces.append(LayerTrace(
            v=v, h=h, kappa=kappa,
            recompute_mask=np.zeros(ly.out_dim, dtype=bool),
            rho_layer=0.0,
        ))
    return Vector(h, fmt), traces


def forward_multi(
    net: Network,
    x,
    thresholds,
    formats,
    estimator: KappaEstimator | None = None,
    saturation: SaturationCounter | None = None,
) -> tuple[Vector, list[LayerTrace]]:
    """Adaptive pass with one low pass and per-bucket recomputation.

    Components whose estimated kappa falls in (tau_j, tau_{j+1}] are
    recomputed in formats[j+1] (tau_len+1 := inf), then requantized to the
    low format so the next layer consumes a uniformly low-precision vector.
    A two-format call is bitwise identical to :func:`forward_mixed`.
    """
    taus, fmts = _validate_multi(net, thresholds, formats)
    estimator = estimator or KappaEstimator()
    low = net.low_format
    h = _as_input(net, x)
    traces: list[LayerTrace] = []
    for ly in net.layers:
        ha = _augment(h[None, :])
        w_codes = ly.weights.codes if _codes_ok(ly, low, fmts[0], saturation) else None
        v = mma_values_batch(
            ly.weights.data, ha, fmts[0],
            w_fmt=low, x_fmt=low, w_codes=w_codes, saturation=saturation,
        )[0]
        kappa = estimate_kappa_batch(estimator, ly.weights.data, ha,
                                     v[None, :], ly.activation, low)[0]
        bucket = np.searchsorted(taus, kappa)
        v_final = v.copy()
        h_final = quantize(activation_value(v, ly.activation), low)
        for j in range(1, len(fmts)):
            idx = np.flatnonzero(bucket == j)
            if idx.size == 0:
                continue
            v_hi = mma_values_pairs(
                ly.weights.data, ha, np.zeros(idx.size, dtype=np.int64), idx,
                fmts[j], saturation=saturation,
            )
            h_hi = quantize(activation_value(v_hi, ly.activation), fmts[j])
            v_final[idx] = v_hi
            h_final[idx] = quantize(h_hi, low)
        mask = bucket > 0
        traces.append(LayerTrace(
            v=v_final, h=h_final, kappa=kappa, recompute_mask=mask,
            rho_layer=float(np.count_nonzero(mask)) / ly.out_dim,
            bucket=bucket,
        ))
        h = h_final
    return Vector(h, low), traces


def forward_mixed(
    net: Network,
    x,
    tau: float,
    estimator: KappaEstimator | None = None,
    saturation: SaturationCounter | None = None,
) -> tuple[Vector, list[LayerTrace]]:
    """Two-precision adaptive pass: recompute components with kappa > tau."""
    if not (np.isfinite(tau) and tau > 0):
        raise ValueError("tau must be positive and finite")
    return forward_multi(
        net, x, [tau], [net.low_format, net.high_format],
        estimator=estimator, saturation=saturation,
    )


def forward_oracle(net: Network, x) -> tuple[np.ndarray, list[LayerTrace]]:
    """float64 reference pass with traces (v, h exact; no rounding)."""
    h = _as_input(net, x)
    traces: list[LayerTrace] = []
    for ly in net.layers:
        v = np.einsum("ij,j->i", ly.weights.data, np.append(h, 1.0))
        h = activation_value(v, ly.activation)
        traces.append(LayerTrace(
            v=v, h=h, kappa=None,
            recompute_mask=np.zeros(ly.out_dim, dtype=bool), rho_layer=0.0,
        ))
    return h, traces
