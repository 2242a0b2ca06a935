"""Command-line surface: train, infer, sweep, bounds-report.

Exit codes: 0 success, 2 usage errors, 3 data/ingestion errors, 4 numeric
divergence.  All commands are deterministic given their flags and seeds.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import bounds as bounds_mod
from . import data as data_mod
from . import network as net_mod
from .activations import ActivationKind
from .conditioning import EstimatorMode, KappaEstimator
from .precision import FORMATS, FloatFormat
from .trainer import TrainConfig, TrainingDivergedError, train

DATA_DIR_ENV = "MIXPREC_DATA_DIR"

_DEFAULT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

_ESTIMATORS = {
    "approx": EstimatorMode.APPROX_INVERSE_V,
    "exact-low": EstimatorMode.EXACT_LOW,
    "exact-wide": EstimatorMode.EXACT_WIDE,
}


@dataclass(frozen=True)
class StrategySpec:
    kind: str  # low | high | oracle | mixed | multi
    tau: float | None = None
    thresholds: tuple[float, ...] = ()
    formats: tuple[FloatFormat, ...] = ()

    def describe(self) -> str:
        if self.kind == "mixed":
            return f"mixed:{self.tau:g}"
        if self.kind == "multi":
            return "multi:" + ",".join(f"{t:g}" for t in self.thresholds)
        return self.kind


def parse_format(name: str) -> FloatFormat:
    try:
        return FORMATS[name]
    except KeyError:
        raise argparse.ArgumentTypeError(
            f"unknown format {name!r}; known: {', '.join(FORMATS)}"
        ) from None


def parse_strategy(text: str, formats_csv: str | None = None) -> StrategySpec:
    """Parse low | high | oracle | mixed:TAU | multi:T1,T2[,...]."""
    if text in ("low", "high", "oracle"):
        return StrategySpec(kind=text)
    if text.startswith("mixed:"):
        return StrategySpec(kind="mixed", tau=float(text.split(":", 1)[1]))
    if text.startswith("multi:"):
        taus = tuple(float(t) for t in text.split(":", 1)[1].split(","))
        names = (formats_csv or "fp8_e4m3,fp16,fp32").split(",")
        fmts = tuple(parse_format(n.strip()) for n in names[: len(taus) + 1])
        if len(fmts) != len(taus) + 1:
            raise ValueError("multi needs one more format than thresholds")
        return StrategySpec(kind="multi", thresholds=taus, formats=fmts)
    raise ValueError(f"unknown strategy {text!r}")


def run_batch(
    net: net_mod.Network,
    X: np.ndarray,
    spec: StrategySpec,
    estimator: KappaEstimator | None = None,
) -> net_mod.BatchResult:
    if spec.kind == "low":
        return net_mod.forward_batch_uniform(net, X, net.low_format,
                                             estimator=estimator or KappaEstimator())
    if spec.kind == "high":
        return net_mod.forward_batch_uniform(net, X, net.high_format)
    if spec.kind == "oracle":
        out = net_mod.forward_batch_oracle(net, X)
        return net_mod.BatchResult(out, 0.0, [0.0] * net.depth, [], None, 0)
    if spec.kind == "mixed":
        return net_mod.forward_batch_multi(
            net, X, [spec.tau], [net.low_format, net.high_format],
            estimator=estimator,
        )
    return net_mod.forward_batch_multi(
        net, X, list(spec.thresholds), list(spec.formats), estimator=estimator
    )


def strategy_callable(spec: StrategySpec, estimator: KappaEstimator | None = None):
    """Single-input (net, x) -> (output, traces) for the bounds module."""

    def run(net, x):
        if spec.kind == "low":
            return net_mod.forward_uniform(net, x, net.low_format)
        if spec.kind == "high":
            return net_mod.forward_uniform(net, x, net.high_format)
        if spec.kind == "oracle":
            return net_mod.forward_oracle(net, x)
        if spec.kind == "mixed":
            return net_mod.forward_mixed(net, x, spec.tau, estimator=estimator)
        return net_mod.forward_multi(net, x, list(spec.thresholds),
                                     list(spec.formats), estimator=estimator)

    return run


def accuracy(outputs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(outputs, axis=1) == labels))


def parse_tau_grid(text: str) -> np.ndarray:
    """Either 'lo:hi:count' (log-spaced) or a comma-separated list."""
    if ":" in text:
        lo, hi, count = text.split(":")
        return np.logspace(np.log10(float(lo)), np.log10(float(hi)), int(count))
    return np.asarray([float(t) for t in text.split(",")])


def _layer1_sweep_cache(net, X, estimator):
    """First-layer quantities shared by every tau of a sweep.

    The layer-1 low pass, its kappa estimates, and the per-row high
    recomputation do not depend on tau, so a sweep computes them once and
    splices per tau; outputs are bitwise identical to the per-tau pass.
    """
    from mixprec.activations import activation_value
    from mixprec.linalg import mma_values_batch
    from mixprec.network import _augment
    from mixprec.precision import quantize
    from mixprec.conditioning import estimate_kappa_batch

    low, high = net.low_format, net.high_format
    ly = net.layers[0]
    Ha = _augment(quantize(X, low))
    V = mma_values_batch(ly.weights.data, Ha, low, w_fmt=low, x_fmt=low,
                         w_codes=ly.weights.codes if low.total_bits == 8 else None)
    K = estimate_kappa_batch(estimator, ly.weights.data, Ha, V, ly.activation, low)
    H_low = quantize(activation_value(V, ly.activation), low)
    V_hi = mma_values_batch(ly.weights.data, Ha, high, w_fmt=low)
    H_hi = quantize(quantize(activation_value(V_hi, ly.activation), high), low)
    return K, H_low, H_hi


def run_sweep(
    net: net_mod.Network,
    X: np.ndarray,
    labels: np.ndarray,
    taus: np.ndarray,
    cost_ratio: float = 0.5,
    estimator: KappaEstimator | None = None,
) -> list[dict]:
    """Mixed inference per tau plus the two uniform baselines.

    Rows are (strategy, tau, accuracy, rho, cost); uniform-high is reported
    at rho = 1 by plotting convention, uniform-low at rho = 0.
    """
    taus = np.asarray(taus, dtype=np.float64)
    if taus.size == 0:
        raise ValueError("tau grid is empty")
    estimator = estimator or KappaEstimator()
    rows = []
    low = net_mod.forward_batch_uniform(net, X, net.low_format)
    rows.append({
        "strategy": "low", "tau": "", "accuracy": accuracy(low.outputs, labels),
        "rho": 0.0, "cost": cost_ratio,
    })
    high = net_mod.forward_batch_uniform(net, X, net.high_format)
    rows.append({
        "strategy": "high", "tau": "", "accuracy": accuracy(high.outputs, labels),
        "rho": 1.0, "cost": 1.0,
    })

    cache = _layer1_sweep_cache(net, X, estimator) if net.depth > 1 else None
    n_total = X.shape[0] * sum(ly.out_dim for ly in net.layers)
    for tau in taus:
        if cache is None:
            res = net_mod.forward_batch_multi(
                net, X, [float(tau)], [net.low_format, net.high_format],
                estimator=estimator,
            )
            rho = res.rho
            outputs = res.outputs
        else:
            K, H_low, H_hi = cache
            mask = K > tau
            H1 = np.where(mask, H_hi, H_low)
            tail = net_mod.Network(net.layers[1:], net.low_format, net.high_format)
            res = net_mod.forward_batch_multi(
                tail, H1, [float(tau)], [net.low_format, net.high_format],
                estimator=estimator,
            )
            n_tail = X.shape[0] * sum(ly.out_dim for ly in tail.layers)
            rho = (int(np.count_nonzero(mask)) + res.rho * n_tail) / n_total
            outputs = res.outputs
        rows.append({
            "strategy": "mixed", "tau": float(tau),
            "accuracy": accuracy(outputs, labels),
            "rho": rho,
            "cost": bounds_mod.mixed_cost(cost_ratio, rho),
        })
    return rows


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


def _resolve_data(args, split: str) -> tuple[str, str]:
    images = getattr(args, "data_images", None)
    labels = getattr(args, "data_labels", None)
    if images and labels:
        return images, labels
    base = os.environ.get(DATA_DIR_ENV)
    if not base:
        # nothing was specified at all: a usage error, not a data error
        raise ValueError(
            "no --data-images/--data-labels given and "
            f"${DATA_DIR_ENV} is not set"
        )
    img_name, lbl_name = _DEFAULT_FILES[split]
    out = []
    for name in (img_name, lbl_name):
        for candidate in (os.path.join(base, name), os.path.join(base, name + ".gz")):
            if os.path.exists(candidate):
                out.append(candidate)
                break
        else:
            raise data_mod.DataError(f"{name}[.gz] not found under {base}")
    return out[0], out[1]


def _load_split(args, split: str) -> data_mod.Dataset:
    images, labels = _resolve_data(args, split)
    return data_mod.load_dataset(images, labels, split)


def _write_csv(path: str, rows: list[dict], schema: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# mixprec {schema}\n")
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _paper_dims(n_layers: int) -> list[int]:
    if n_layers < 2:
        raise ValueError("--layers must be at least 2")
    return [784] * (n_layers - 1) + [128, 10]


def cmd_train(args) -> int:
    ds = _load_split(args, "train")
    dims = (
        [int(d) for d in args.dims.split(",")]
        if args.dims
        else _paper_dims(args.layers)
    )
    cfg = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    net, history = train(
        ds, dims, ActivationKind(args.activation), cfg,
        low=args.low_format, high=args.high_format,
    )
    meta = {
        "dims": dims,
        "activation": args.activation,
        **cfg.as_metadata(),
    }
    data_mod.save_model(net, args.out, metadata=meta)
    log_rows = [
        {"epoch": h.epoch, "loss": h.loss, "accuracy": h.accuracy} for h in history
    ]
    _write_csv(args.out + ".train.csv", log_rows, "training-log schema v1")
    print(f"saved model to {args.out} "
          f"(final train accuracy { history[-1].accuracy:.4f})")
    return 0


def cmd_infer(args) -> int:
    net, _ = data_mod.load_model(args.model)
    ds = _load_split(args, "test")
    spec = parse_strategy(args.strategy, args.formats)
    estimator = KappaEstimator(mode=_ESTIMATORS[args.estimator])
    X = ds.images[: args.limit] if args.limit else ds.images
    y = ds.labels[: args.limit] if args.limit else ds.labels
    res = run_batch(net, X, spec, estimator=estimator)
    if spec.kind == "multi":
        ratios = [float(c) for c in args.cost_ratios.split(",")]
        cost = bounds_mod.mixed_cost_multi(ratios, res.rho_per_format or [0.0] * len(ratios))
    elif spec.kind == "high":
        cost = 1.0
    elif spec.kind == "mixed":
        cost = bounds_mod.mixed_cost(args.cost_ratio, res.rho)
    else:
        cost = args.cost_ratio if spec.kind == "low" else float("nan")
    report = {
        "strategy": spec.describe(),
        "inputs": int(X.shape[0]),
        "accuracy": accuracy(res.outputs, y),
        "rho": res.rho if spec.kind != "high" else 1.0,
        "per_layer_rho": res.per_layer_rho,
        "modeled_cost": cost,
        "zero_kappa_fraction": res.zero_kappa_fraction,
    }
    for key, value in report.items():
        print(f"{key}: {value}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2)
    return 0


def cmd_sweep(args) -> int:
    net, _ = data_mod.load_model(args.model)
    ds = _load_split(args, "test")
    taus = parse_tau_grid(args.tau_grid)
    if taus.size == 0:
        raise ValueError("tau grid is empty")
    X = ds.images[: args.limit] if args.limit else ds.images
    y = ds.labels[: args.limit] if args.limit else ds.labels
    rows = run_sweep(net, X, y, taus, cost_ratio=args.cost_ratio)
    _write_csv(args.out, rows, "sweep schema v1")
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_bounds(args) -> int:
    net, _ = data_mod.load_model(args.model)
    if args.data_images or os.environ.get(DATA_DIR_ENV):
        try:
            ds = _load_split(args, "test")
            inputs = ds.images[: args.count]
        except data_mod.DataError:
            inputs = data_mod.synthetic_inputs(args.seed, args.count, net.in_dim)
    else:
        inputs = data_mod.synthetic_inputs(args.seed, args.count, net.in_dim)
    spec = parse_strategy(args.strategy, args.formats)
    estimator = KappaEstimator(mode=_ESTIMATORS[args.estimator])
    strategy = strategy_callable(spec, estimator=estimator)

    rows = []
    for input_index, x in enumerate(inputs):
        check = bounds_mod.check_theorem_bounds(net, x, mode="strict",
                                                strategy=strategy)
        traces = strategy(net, x)[1]
        for layer_idx in range(net.depth):
            rec = check.scalar_recurrence[layer_idx]
            mask_trace = traces[layer_idx].recompute_mask
            for comp in range(len(check.bounds[layer_idx])):
                rows.append({
                    "input": input_index,
                    "layer": layer_idx,
                    "component": comp,
                    "kappa": check.kappa[layer_idx][comp],
                    "bound": check.bounds[layer_idx][comp],
                    "measured": check.measured[layer_idx][comp],
                    "mask": int(mask_trace[comp]),
                    "flagged": int(check.flagged_inf[layer_idx][comp]
                                   or check.flagged_flip[layer_idx][comp]),
                    "eps_inf_recurrence": rec,
                    "eps_inf_closed_form": check.closed_form
                    if layer_idx == net.depth - 1 else "",
                })
    _write_csv(args.out, rows, "bounds schema v1")
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mixprec",
        description="Mixed-precision accumulation for MLP inference",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def add_data_flags(sp):
        sp.add_argument("--data-images", help="IDX image file (optionally .gz)")
        sp.add_argument("--data-labels", help="IDX label file (optionally .gz)")

    def add_common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--low-format", type=parse_format, default=FORMATS["fp8_e4m3"])
        sp.add_argument("--high-format", type=parse_format, default=FORMATS["fp16"])

    sp = sub.add_parser("train", help="QAT a network and write a model file")
    add_data_flags(sp)
    add_common(sp)
    sp.add_argument("--layers", type=int, default=3,
                    help="number of layers in the standard 784/.../128/10 shape")
    sp.add_argument("--dims", help="explicit comma-separated layer dims")
    sp.add_argument("--activation", choices=["relu", "tanh"], default="relu")
    sp.add_argument("--epochs", type=int, default=4)
    sp.add_argument("--lr", type=float, default=0.1)
    sp.add_argument("--batch-size", type=int, default=128)
    sp.add_argument("--out", required=True, help="model file to write")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="run a forward strategy over a test set")
    add_data_flags(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--strategy", default="mixed:1.0",
                    help="low | high | oracle | mixed:TAU | multi:T1,T2[,..]")
    sp.add_argument("--formats", help="formats for multi, lowest precision first")
    sp.add_argument("--estimator", choices=sorted(_ESTIMATORS), default="approx")
    sp.add_argument("--cost-ratio", type=float, default=0.5,
                    help="c_low / c_high in the cost model")
    sp.add_argument("--cost-ratios", default="0.25,0.5,1",
                    help="per-format costs for multi strategies")
    sp.add_argument("--limit", type=int, help="evaluate only the first N inputs")
    sp.add_argument("--out", help="also write the report as JSON")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("sweep", help="tau sweep producing a cost/accuracy CSV")
    add_data_flags(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--tau-grid", default="1e-3:10:16",
                    help="'lo:hi:count' log grid or comma-separated list")
    sp.add_argument("--cost-ratio", type=float, default=0.5)
    sp.add_argument("--limit", type=int, help="evaluate only the first N inputs")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("bounds", help="bound-vs-measured report")
    add_data_flags(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--strategy", default="low")
    sp.add_argument("--formats")
    sp.add_argument("--estimator", choices=sorted(_ESTIMATORS), default="approx")
    sp.add_argument("--count", type=int, default=1, help="number of inputs")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_bounds)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (data_mod.DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
