"""Componentwise forward error bounds and the cost model.

The per-layer error recurrence states that the componentwise relative error
of a layer's output is the incoming error plus the local backward error of
the matrix-vector product, amplified by the product of the dot-product and
activation condition numbers, plus the activation rounding error:

    eps_l = kphi o kdot o (eps_W + ||eps_{l-1}||_inf (1 + eps_W)) o (1 + eps_phi)
            + eps_phi

Collapsing to infinity norms gives a scalar recurrence whose unrolled form
is a sum over layers weighted by the downstream condition-number products.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .activations import ActivationKind, activation_value
from .conditioning import _combine as _kappa_product
from .conditioning import _safe_ratio, kappa_phi
from .network import Network, _as_input, _augment, forward_oracle, forward_uniform
from .precision import FloatFormat

__all__ = [
    "ErrorBoundState",
    "CostModel",
    "eps_recurrence_step",
    "eps_first_order_step",
    "eps_scalar_recurrence",
    "eps_closed_form",
    "tolerance_from_target",
    "mixed_cost",
    "mixed_cost_multi",
    "backward_error_bound",
    "relative_error",
    "measure_empirical_error",
    "check_theorem_bounds",
    "BoundCheck",
]


@dataclass
class ErrorBoundState:
    """Per-layer bound vectors eps^h and their infinity norms."""

    per_layer_eps: list[np.ndarray] = field(default_factory=list)
    per_layer_inf_norm: list[float] = field(default_factory=list)
    eps_W: list[np.ndarray] = field(default_factory=list)
    eps_phi: list[np.ndarray] = field(default_factory=list)

    def push(self, eps: np.ndarray, eps_w: np.ndarray, eps_phi: np.ndarray) -> None:
        self.per_layer_eps.append(eps)
        self.per_layer_inf_norm.append(float(np.max(eps)))
        self.eps_W.append(eps_w)
        self.eps_phi.append(eps_phi)


@dataclass(frozen=True)
class CostModel:
    """Modeled inference cost, with the uniform-high cost normalized to 1."""

    ratio_low_high: float  # c_low / c_high
    rho: float  # fraction of inner products recomputed in high precision

    def __post_init__(self) -> None:
        if not 0.0 < self.ratio_low_high <= 1.0:
            raise ValueError("ratio_low_high must lie in (0, 1]")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")

    @property
    def cost(self) -> float:
        return self.ratio_low_high + self.rho


def mixed_cost(ratio_low_high: float, rho: float) -> float:
    """c_mixed / c_high = c_low/c_high + rho."""
    return CostModel(ratio_low_high, rho).cost


def mixed_cost_multi(costs, rho_per_format) -> float:
    """More than two precisions: c_1 + sum_j rho_j c_j over recompute formats."""
    costs = list(costs)
    rho = list(rho_per_format)
    if len(costs) != len(rho):
        raise ValueError("costs and rho_per_format must have equal length")
    return costs[0] + sum(r * c for r, c in zip(rho[1:], costs[1:]))


def tolerance_from_target(epsilon: float, n: int, low_fmt: FloatFormat) -> float:
    """Tolerance giving ||kappa o eps_W||_inf <= epsilon: tau = eps / (n u)."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if n < 1:
        raise ValueError("n must be at least 1")
    return epsilon / (n * low_fmt.unit_roundoff)


def eps_recurrence_step(kphi, kdot, eps_w, eps_prev_inf: float, eps_phi) -> np.ndarray:
    """One layer of the full (not first-order) error recurrence."""
    kphi = np.asarray(kphi, dtype=np.float64)
    kdot = np.asarray(kdot, dtype=np.float64)
    eps_w = np.asarray(eps_w, dtype=np.float64)
    eps_phi = np.asarray(eps_phi, dtype=np.float64)
    k = _kappa_product(kphi, kdot)
    with np.errstate(invalid="ignore"):
        inner = k * (eps_w + eps_prev_inf * (1.0 + eps_w)) * (1.0 + eps_phi)
    inner = np.where(k == 0.0, 0.0, inner)  # dead components stay dead
    return inner + eps_phi


def eps_first_order_step(kphi, kdot, eps_w, eps_prev_inf: float, eps_phi) -> np.ndarray:
    """First-order version: kphi o kdot o (eps_W + ||eps_prev||) + eps_phi."""
    k = _kappa_product(np.asarray(kphi, float), np.asarray(kdot, float))
    with np.errstate(invalid="ignore"):
        inner = k * (np.asarray(eps_w, float) + eps_prev_inf)
    inner = np.where(k == 0.0, 0.0, inner)
    return inner + np.asarray(eps_phi, float)


def eps_scalar_recurrence(kappa_inf, kappa_w_inf, phi_inf) -> list[float]:
    """Unrolled scalar recurrence on the infinity norms.

    ``kappa_inf[l] = ||kphi o kdot||_inf``, ``kappa_w_inf[l] =
    ||kphi o kdot o eps_W||_inf``, ``phi_inf[l] = ||eps_phi||_inf``.
    Returns the whole sequence ||eps^h_l||_inf, starting after layer 1.
    """
    out: list[float] = []
    prev = 0.0  # the input is exact by convention
    for a, b, c in zip(kappa_inf, kappa_w_inf, phi_inf):
        prev = b + a * prev + c
        out.append(prev)
    return out


def eps_closed_form(kappa_inf, kappa_w_inf, phi_inf) -> float:
    """Closed form of the scalar recurrence for the final layer.

    sum_l [ prod_{k>l} kappa_inf[k] ] * (kappa_w_inf[l] + phi_inf[l]);
    must agree with the unrolled recurrence to working-precision roundoff.
    """
    kappa_inf = list(kappa_inf)
    kappa_w_inf = list(kappa_w_inf)
    phi_inf = list(phi_inf)
    L = len(kappa_inf)
    if L < 1:
        raise ValueError("need at least one layer")
    total = 0.0
    for layer in range(L):
        downstream = 1.0
        for k in range(layer + 1, L):
            downstream *= kappa_inf[k]
        total += downstream * (kappa_w_inf[layer] + phi_inf[layer])
    return total


def backward_error_bound(
    n_terms: int,
    fmt: FloatFormat,
    mode: str = "first_order",
    abs_row_sums: np.ndarray | None = None,
):
    """Rowwise backward error of an n-term sequential rounded dot product.

    ``first_order`` is the n*u model.  ``strict`` is the exact product-form
    bound (1+u)^n - 1 (valid for any n*u, and below gamma_n = nu/(1-nu)
    whenever the latter is defined), plus, when ``abs_row_sums`` is given,
    an absolute term covering roundings that landed in the subnormal range,
    where the relative-error-per-operation model does not hold.
    """
    u = fmt.unit_roundoff
    if mode == "first_order":
        return float(n_terms * u)
    if mode != "strict":
        raise ValueError("mode must be 'first_order' or 'strict'")
    base = np.expm1(n_terms * np.log1p(u))  # (1+u)^n - 1, evaluated stably
    if abs_row_sums is None:
        return float(base)
    abs_row_sums = np.asarray(abs_row_sums, dtype=np.float64)
    # 2n roundings, each off by at most half a subnormal quantum, inflated
    # by at most (1+u)^n by the later roundings
    correction_abs = 2 * n_terms * (fmt.min_subnormal / 2.0) * (1.0 + base)
    with np.errstate(divide="ignore"):
        corr = np.where(abs_row_sums > 0.0, correction_abs / abs_row_sums, 0.0)
    return base + corr


def relative_error(reference, computed) -> np.ndarray:
    """|computed - reference| / |reference| with 0/0 -> 0, x/0 -> inf."""
    ref = np.asarray(reference, dtype=np.float64)
    comp = np.asarray(computed, dtype=np.float64)
    return _safe_ratio(np.abs(comp - ref), np.abs(ref))


def measure_empirical_error(net: Network, x, strategy) -> list[np.ndarray]:
    """Per-layer componentwise relative error of a strategy vs the oracle.

    ``strategy`` is a callable ``(net, x) -> (output, traces)``; the oracle
    is the float64 pass over the same quantized input and weights.
    """
    _, ref_traces = forward_oracle(net, x)
    _, hat_traces = strategy(net, x)
    return [
        relative_error(r.h, c.h) for r, c in zip(ref_traces, hat_traces)
    ]


@dataclass
class BoundCheck:
    """Outcome of checking measured errors against the theorem bounds."""

    bounds: list[np.ndarray]
    measured: list[np.ndarray]
    kappa: list[np.ndarray]  # exact kphi o kdot per layer
    flagged_inf: list[np.ndarray]  # non-finite bound
    flagged_flip: list[np.ndarray]  # ReLU activation-pattern mismatch
    scalar_recurrence: list[float]
    closed_form: float
    state: ErrorBoundState

    @property
    def n_components(self) -> int:
        return sum(b.size for b in self.bounds)

    @property
    def n_flagged(self) -> int:
        return int(sum(np.count_nonzero(i | f) for i, f in
                       zip(self.flagged_inf, self.flagged_flip)))

    @property
    def n_violations(self) -> int:
        total = 0
        for b, m, fi, ff in zip(self.bounds, self.measured,
                                self.flagged_inf, self.flagged_flip):
            ok = fi | ff
            total += int(np.count_nonzero((m > b) & ~ok))
        return total


# headroom for the float64 evaluation error of tanh and of the bound itself
_EVAL_SLACK = 2.0**-40


def check_theorem_bounds(
    net: Network,
    x,
    mode: str = "strict",
    strategy=None,
) -> BoundCheck:
    """Instrument one input: theorem bounds vs measured relative errors.

    The defaults instrument the uniform low-precision pass.  Components
    with non-finite bounds, and ReLU components whose activation pattern
    differs between the computed and reference pass (the kappa_phi = inf
    artifact), are flagged rather than compared.
    """
    low = net.low_format
    if strategy is None:
        strategy = lambda n_, x_: forward_uniform(n_, x_, low)
    _, ref_traces = forward_oracle(net, x)
    _, hat_traces = strategy(net, x)

    h_prev_ref = _as_input(net, x)
    state = ErrorBoundState()
    bounds, measured, kappas, f_inf, f_flip = [], [], [], [], []
    a_terms, b_terms, c_terms = [], [], []
    eps_prev = 0.0

    for ly, rt, ht in zip(net.layers, ref_traces, hat_traces):
        ha_ref = _augment(h_prev_ref[None, :])[0]
        num = np.einsum("ij,j->i", np.abs(ly.weights.data), np.abs(ha_ref))
        kphi = kappa_phi(rt.v, ly.activation)
        kdot = _safe_ratio(num, np.abs(rt.v))
        n_terms = ly.in_dim + 1

        eps_w = backward_error_bound(
            n_terms, low, mode=mode,
            abs_row_sums=num if mode == "strict" else None,
        )
        eps_w = np.broadcast_to(np.asarray(eps_w, dtype=np.float64),
                                (ly.out_dim,)).copy()

        # activation error actually incurred at the computed point, with
        # slack for the float64 evaluation of phi itself
        phi_hat = activation_value(ht.v, ly.activation)
        eps_phi = relative_error(phi_hat, ht.h)
        eps_phi = np.where(np.isfinite(eps_phi), eps_phi, 0.0)
        eps_phi = eps_phi * (1.0 + _EVAL_SLACK) + _EVAL_SLACK

        bound = eps_recurrence_step(kphi, kdot, eps_w, eps_prev, eps_phi)
        meas = relative_error(rt.h, ht.h)

        flip = np.zeros(ly.out_dim, dtype=bool)
        if ly.activation is ActivationKind.RELU:
            flip = (ht.v > 0) != (rt.v > 0)
        inf_flag = ~np.isfinite(bound)

        k = _kappa_product(kphi, kdot)
        bounds.append(bound)
        measured.append(meas)
        kappas.append(k)
        f_inf.append(inf_flag)
        f_flip.append(flip)
        state.push(bound, eps_w, eps_phi)

        a_terms.append(float(np.max(k)) if k.size else 0.0)
        with np.errstate(invalid="ignore"):
            kw = k * eps_w
        kw = np.where(k == 0.0, 0.0, kw)
        b_terms.append(float(np.max(kw)))
        c_terms.append(float(np.max(eps_phi)))

        eps_prev = float(np.max(bound))
        h_prev_ref = rt.h

    return BoundCheck(
        bounds=bounds,
        measured=measured,
        kappa=kappas,
        flagged_inf=f_inf,
        flagged_flip=f_flip,
        scalar_recurrence=eps_scalar_recurrence(a_terms, b_terms, c_terms),
        closed_form=eps_closed_form(a_terms, b_terms, c_terms),
        state=state,
    )
