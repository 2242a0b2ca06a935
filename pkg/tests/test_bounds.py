"""Error recurrence, closed form, cost model, and bound instrumentation."""

import numpy as np
import pytest

from mixprec.activations import ActivationKind
from mixprec.bounds import (
    CostModel,
    backward_error_bound,
    check_theorem_bounds,
    eps_closed_form,
    eps_first_order_step,
    eps_recurrence_step,
    eps_scalar_recurrence,
    measure_empirical_error,
    mixed_cost,
    mixed_cost_multi,
    relative_error,
    tolerance_from_target,
)
from mixprec.data import synthetic_inputs, synthetic_net
from mixprec.network import forward_oracle, forward_uniform
from mixprec.precision import FP8_E4M3, FP16


class TestRecurrenceStep:
    def test_dead_components_only_accumulate_activation_error(self):
        kphi = np.zeros(4)
        kdot = np.array([1.0, 5.0, np.inf, 0.0])
        eps_w = np.full(4, 0.5)
        eps_phi = np.full(4, 0.01)
        out = eps_recurrence_step(kphi, kdot, eps_w, 0.2, eps_phi)
        assert np.array_equal(out, eps_phi)

    def test_first_layer_base_case(self):
        # with no incoming error the recurrence is k*(eps_W)*(1+eps_phi)+eps_phi
        kphi = np.array([1.0, 0.5])
        kdot = np.array([2.0, 4.0])
        eps_w = np.array([0.1, 0.2])
        eps_phi = np.array([0.01, 0.02])
        out = eps_recurrence_step(kphi, kdot, eps_w, 0.0, eps_phi)
        expect = kphi * kdot * eps_w * (1 + eps_phi) + eps_phi
        assert np.allclose(out, expect, rtol=1e-15)

    def test_matches_symbolic_unrolling(self, rng):
        for _ in range(100):
            n = rng.integers(1, 9)
            kphi = rng.uniform(0, 1, n)
            kdot = rng.uniform(1, 10, n)
            eps_w = rng.uniform(0, 0.3, n)
            eps_phi = rng.uniform(0, 0.05, n)
            prev = float(rng.uniform(0, 0.3))
            out = eps_recurrence_step(kphi, kdot, eps_w, prev, eps_phi)
            for i in range(n):
                direct = (kphi[i] * kdot[i]
                          * (eps_w[i] + prev * (1 + eps_w[i]))
                          * (1 + eps_phi[i]) + eps_phi[i])
                assert out[i] == pytest.approx(direct, rel=1e-14)

    def test_inf_kappa_propagates(self):
        out = eps_recurrence_step([1.0], [np.inf], [0.1], 0.0, [0.01])
        assert np.isinf(out[0])

    def test_first_order_agreement_at_small_eps(self, rng):
        # full and first-order recurrences differ by O(eps^2)
        for _ in range(200):
            n = rng.integers(1, 8)
            kphi = rng.uniform(0, 1, n)
            kdot = rng.uniform(1, 20, n)
            e = 2.0**-8
            eps_w = rng.uniform(0, e, n)
            eps_phi = rng.uniform(0, e, n)
            prev = float(rng.uniform(0, e))
            full = eps_recurrence_step(kphi, kdot, eps_w, prev, eps_phi)
            fo = eps_first_order_step(kphi, kdot, eps_w, prev, eps_phi)
            k = kphi * kdot
            assert np.all(full - fo >= -1e-18)
            assert np.all(full - fo <= 4.0 * np.maximum(k, 1.0) * e * e)


class TestScalarRecurrenceAndClosedForm:
    def test_single_layer_base_case(self):
        got = eps_scalar_recurrence([2.0], [0.3], [0.01])
        assert got == [0.3 + 0.01]
        assert eps_closed_form([2.0], [0.3], [0.01]) == 0.31

    def test_unit_kappas_sum_contributions(self):
        # L = 2 with all kappa-norms 1: each layer contributes (b + c)
        a, b, c = [1.0, 1.0], [0.1, 0.2], [0.01, 0.02]
        assert eps_closed_form(a, b, c) == pytest.approx(0.11 + 0.22, rel=1e-15)

    def test_dead_relu_layers_keep_phi_error_only(self):
        got = eps_scalar_recurrence([0.0, 0.0], [0.0, 0.0], [0.01, 0.01])
        assert got == [0.01, 0.01]

    def test_closed_form_equals_recurrence(self, rng):
        for _ in range(500):
            L = int(rng.integers(1, 9))
            a = rng.uniform(0, 4, L)
            b = rng.uniform(0, 2, L)
            c = rng.uniform(0, 0.1, L)
            rec = eps_scalar_recurrence(a, b, c)[-1]
            closed = eps_closed_form(a, b, c)
            tol = 10 * np.finfo(float).eps * max(abs(rec), abs(closed), 1.0)
            assert abs(rec - closed) <= tol


class TestCostModel:
    def test_paper_specialization(self):
        assert mixed_cost(0.5, 0.2) == pytest.approx(0.7)

    def test_zero_rho_costs_low_only(self):
        assert mixed_cost(0.5, 0.0) == 0.5

    def test_break_even(self):
        assert mixed_cost(0.5, 0.5) == pytest.approx(1.0)

    def test_monotone_in_rho(self):
        costs = [mixed_cost(0.5, r) for r in np.linspace(0, 1, 11)]
        assert np.all(np.diff(costs) > 0)

    def test_validation(self):
        with pytest.raises(ValueError):
            mixed_cost(0.0, 0.5)
        with pytest.raises(ValueError):
            mixed_cost(0.5, 1.5)
        with pytest.raises(ValueError):
            CostModel(1.2, 0.0)

    def test_multi_precision_sum(self):
        # first format is the always-paid pass; others weighted by rho_j
        got = mixed_cost_multi([0.25, 0.5, 1.0], [0.0, 0.3, 0.1])
        assert got == pytest.approx(0.25 + 0.3 * 0.5 + 0.1 * 1.0)


class TestToleranceFromTarget:
    def test_unit_case(self):
        assert tolerance_from_target(0.0625, 1, FP8_E4M3) == 1.0

    def test_paper_width(self):
        got = tolerance_from_target(1.0, 784, FP8_E4M3)
        assert got == pytest.approx(1.0 / (784 * 0.0625), rel=1e-15)

    def test_linear_in_epsilon(self):
        a = tolerance_from_target(0.1, 32, FP8_E4M3)
        b = tolerance_from_target(1.0, 32, FP8_E4M3)
        assert b == pytest.approx(10 * a, rel=1e-15)


class TestBackwardErrorBound:
    def test_first_order_is_nu(self):
        assert backward_error_bound(8, FP16) == 8 * FP16.unit_roundoff

    def test_strict_exceeds_first_order_slightly(self):
        u = FP16.unit_roundoff
        strict = backward_error_bound(64, FP16, mode="strict")
        assert 64 * u < strict < 64 * u / (1 - 64 * u)  # below gamma_n

    def test_strict_finite_beyond_nu_equals_one(self):
        # n*u = 4 for FP8 at n=64: gamma_n undefined, product form still valid
        strict = backward_error_bound(64, FP8_E4M3, mode="strict")
        assert np.isfinite(strict) and strict > 1.0

    def test_subnormal_correction_added(self):
        sums = np.array([1.0, 0.0])
        out = backward_error_bound(4, FP8_E4M3, mode="strict", abs_row_sums=sums)
        base = backward_error_bound(4, FP8_E4M3, mode="strict")
        assert out[0] > base
        assert out[1] == pytest.approx(base)  # zero row: no correction


class TestRelativeError:
    def test_conventions(self):
        got = relative_error([0.0, 0.0, 2.0], [0.0, 1.0, 1.0])
        assert got[0] == 0.0
        assert np.isinf(got[1])
        assert got[2] == 0.5


class TestEmpiricalMeasurement:
    def test_oracle_strategy_measures_zero(self, rng):
        net = synthetic_net(2, [6, 5, 4], ActivationKind.TANH, 0.4)
        x = rng.uniform(-1, 1, 6)
        errs = measure_empirical_error(net, x, lambda n, v: forward_oracle(n, v))
        assert all(np.all(e == 0.0) for e in errs)

    def test_uniform_low_bounded_by_theorem(self):
        # the acceptance suite runs the large version of this harness
        violations = flagged = total = 0
        for seed in range(50):
            dims = [6, 8, 5]
            kind = ActivationKind.RELU if seed % 2 else ActivationKind.TANH
            net = synthetic_net(seed, dims, kind, 0.5 / np.sqrt(dims[0] + 1))
            x = synthetic_inputs(seed + 1000, 1, dims[0])[0]
            chk = check_theorem_bounds(net, x, mode="strict")
            violations += chk.n_violations
            flagged += chk.n_flagged
            total += chk.n_components
        assert violations == 0
        assert flagged / total < 0.05

    def test_scalar_recurrence_and_closed_form_agree(self, rng):
        net = synthetic_net(9, [7, 6, 5, 4], ActivationKind.TANH, 0.4)
        x = rng.uniform(-1, 1, 7)
        chk = check_theorem_bounds(net, x)
        rec = chk.scalar_recurrence[-1]
        tol = 10 * np.finfo(float).eps * max(abs(rec), 1.0)
        assert abs(rec - chk.closed_form) <= tol

    def test_mixed_usually_no_worse_than_low(self):
        # paired comparison: mixed with small tau rarely loses to uniform low
        # in final-layer infinity norm.  Measured win rate is ~0.91; the few
        # losses happen on components kept in low precision whose upstream
        # inputs changed, so the bar sits below the measured rate.
        from mixprec.network import forward_mixed

        better = 0
        trials = 120
        for seed in range(trials):
            dims = [16, 16, 10]
            net = synthetic_net(seed, dims, ActivationKind.TANH,
                                0.5 / np.sqrt(dims[0] + 1))
            x = synthetic_inputs(seed + 5000, 1, dims[0])[0]
            e_low = measure_empirical_error(
                net, x, lambda n, v: forward_uniform(n, v, FP8_E4M3))[-1]
            e_mix = measure_empirical_error(
                net, x, lambda n, v: forward_mixed(n, v, 1e-3))[-1]
            lo = np.max(e_low[np.isfinite(e_low)], initial=0.0)
            mx = np.max(e_mix[np.isfinite(e_mix)], initial=0.0)
            if mx <= lo + 1e-12:
                better += 1
        assert better / trials >= 0.85
