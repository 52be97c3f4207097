"""``laplace-audit`` command line.

Model specs
-----------
``logistic:n=100,p=10,seed=1``
    Synthetic logistic classification data.
``logistic-csv:path/to/data.csv``
    Labels in the first column (+-1), features after; prior sd ``1/sqrt(p)``.
``gaussian:p=3``
    Standard Gaussian (exact null case).
``quartic:eps=0.001``
    ``x^2/2 + eps x^4`` in one dimension.
``mixture:sigma=100``
    Thin-plus-wide Gaussian mixture in one dimension.
``radial:p=5,eps=0.01``
    Radially symmetric quartic perturbation of the standard Gaussian.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import bounds as _bounds
from .diagnostics import estimate_klvar, estimate_lsi, estimate_var_elbo, combine_klvar_lsi
from .experiments import ExperimentConfig, demo_mixture, load_config, run_sweep
from .geometry import RngStream
from .laplace import fit_laplace
from .plotting import PLOT_KINDS, plot_file
from .reference import ChainError, kl_direct, kl_via_chain, nuts_sample
from .targets import (LogisticDataset, gaussian_target, generate_logistic_data, logistic_target,
                      mixture_target_1d, quartic_target_1d, radial_quartic_target)
from .taylor import compute_tensors, taylor_klvar, taylor_lsi

COVERAGE_LEVELS = (0.5, 0.9, 0.95, 0.99)


class Model:
    """A parsed model spec: the target, its MAP initializer and optional data."""

    def __init__(self, target, init=None, data=None, label=""):
        self.target, self.init, self.data, self.label = target, init, data, label


def _kv(body: str) -> dict:
    out = {}
    for part in filter(None, body.split(",")):
        if "=" not in part:
            raise ValueError(f"expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _need(kv, keys, kind):
    missing = [k for k in keys if k not in kv]
    if missing:
        raise ValueError(f"{kind} model needs {', '.join(missing)}")
    extra = sorted(set(kv) - set(keys))
    if extra:
        raise ValueError(f"{kind} model does not take {', '.join(extra)}")


def parse_model(spec: str) -> Model:
    """Build a :class:`Model` from a spec string (see module docstring)."""
    kind, _, body = spec.partition(":")
    if kind == "logistic":
        kv = _kv(body)
        _need(kv, ("n", "p", "seed"), kind)
        n, p, seed = int(kv["n"]), int(kv["p"]), int(kv["seed"])
        data = generate_logistic_data(n, p, seed)
        return Model(logistic_target(data), np.full(p, 1.0 / np.sqrt(p)), data, spec)
    if kind == "logistic-csv":
        if not body:
            raise ValueError("logistic-csv model needs a path")
        data = LogisticDataset.from_csv(body)
        return Model(logistic_target(data), None, data, spec)
    if kind == "gaussian":
        kv = _kv(body)
        _need(kv, ("p",), kind)
        p = int(kv["p"])
        return Model(gaussian_target(np.zeros(p), np.eye(p)), label=spec)
    if kind == "quartic":
        kv = _kv(body)
        _need(kv, ("eps",), kind)
        return Model(quartic_target_1d(float(kv["eps"])), label=spec)
    if kind == "mixture":
        kv = _kv(body)
        _need(kv, ("sigma",), kind)
        return Model(mixture_target_1d(float(kv["sigma"])), label=spec)
    if kind == "radial":
        kv = _kv(body)
        _need(kv, ("p", "eps"), kind)
        return Model(radial_quartic_target(int(kv["p"]), float(kv["eps"])), label=spec)
    raise ValueError(f"unknown model kind {kind!r}")


def _fit(model: Model):
    return fit_laplace(model.target, init=model.init)


def _print_estimates(ests, out):
    out.write(f"{'estimator':<18}{'value':>16}{'std_error':>14}{'n':>10}  notes\n")
    for e in ests:
        out.write(f"{e.estimator_name:<18}{e.value:>16.8g}{e.std_error:>14.3g}{e.n_samples:>10}  {e.notes}\n")


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, allow_nan=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_fit(args, out):
    lap, _ = _fit(parse_model(args.model))
    text = lap.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        out.write(text + "\n")
    return 0


def _pair(text):
    try:
        a, b = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected Se,Sr") from None
    return a, b


def cmd_diagnose(args, out):
    _, st = _fit(parse_model(args.model))
    rng = RngStream(args.seed, 0xD1A6)
    kv = estimate_klvar(st, args.samples, rng.child(1))
    lsi = estimate_lsi(st, args.samples, rng.child(2))
    ests = [kv, lsi, combine_klvar_lsi(kv, lsi)]
    if args.var_elbo:
        ests.append(estimate_var_elbo(st, *args.var_elbo, rng=rng.child(3)))
    closed = {}
    if args.taylor:
        T3, T4 = compute_tensors(st)
        closed = {"taylor_klvar": taylor_klvar(T3, T4), "taylor_lsi": taylor_lsi(T3, T4)}
    _print_estimates(ests, out)
    for k, v in closed.items():
        out.write(f"{k:<18}{v:>16.8g}{'':>14}{'':>10}  closed form\n")
    if closed:
        out.write("taylor_klvar approximates the full KL variance; compare half of it with klvar.\n")
    if args.json:
        _write_json(args.json, {"model": args.model, "estimates": [e.as_dict() for e in ests],
                                "closed_forms": closed})
    return 0


def cmd_bounds(args, out):
    model = parse_model(args.model)
    lap, st = _fit(model)
    if args.delta3 is not None:
        d3 = args.delta3
    elif model.data is not None:
        d3 = _bounds.delta3_upper_logistic(model.data, lap)
    else:
        raise ValueError("this model needs --delta3 (only logistic models have a built-in bound)")
    cb = _bounds.psi_min_second(lap.dim, d3)
    out.write(f"delta3 bound        {d3:.8g}\n")
    out.write(f"psi'' min           {cb.psi_min_second:.8g}  ({cb.branch})\n")
    kl_bound = None
    if cb.psi_min_second > 0:
        rb = _bounds.radial_kl_bound(st, cb, args.samples, RngStream(args.seed, 0xB0))
        kl_bound = rb.value
        out.write(f"radial KL bound     {rb.value:.8g} +- {rb.std_error:.2g}\n")
    else:
        out.write("radial KL bound     vacuous (non-positive curvature bound)\n")
    kl = args.kl if args.kl is not None else kl_bound
    if kl is None:
        return 0
    out.write(f"Pinsker TV bound    {_bounds.pinsker_tv_bound(kl):.8g}  (KL = {kl:.6g})\n")
    out.write(f"{'p_g':>6}  {'p_f lower':>12}  {'p_f upper':>12}\n")
    for pg in COVERAGE_LEVELS:
        lo, hi = _bounds.coverage_bounds(pg, kl)
        out.write(f"{pg:>6.2f}  {lo:>12.6f}  {hi:>12.6f}\n")
    return 0


def cmd_reference_kl(args, out):
    model = parse_model(args.model)
    _, st = _fit(model)
    rng = RngStream(args.seed, 0x8EF)
    chain = nuts_sample(model.target, n_samples=args.chain_samples, n_warmup=args.warmup,
                        seed=args.seed, st=st)
    if args.chain_csv:
        chain.to_csv(args.chain_csv)
    ests = [kl_direct(st, args.samples, rng.child(1)),
            kl_via_chain(st, chain, args.samples, rng.child(2), require_gate=False)]
    _print_estimates(ests, out)
    out.write(f"step size {chain.step_size:.4g}, divergences {chain.n_divergences}, "
              f"backend {chain.backend}\n")
    if args.json:
        _write_json(args.json, {"model": args.model, "estimates": [e.as_dict() for e in ests],
                                "step_size": chain.step_size, "n_divergences": chain.n_divergences})
    return 0


def cmd_experiment(args, out):
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.full:
        config = config.with_full_grid()

    def progress(cell, rows):
        n, p, seed = cell
        out.write(f"cell n={n} p={p} seed={seed}: {len(rows)} rows\n")
        out.flush()

    added = run_sweep(config, args.out, progress=progress if args.verbose else None)
    out.write(f"{added} rows written to {args.out}\n")
    return 0


def cmd_plot(args, out):
    plot_file(args.inp, args.kind, args.out)
    out.write(f"wrote {args.out}\n")
    return 0


def cmd_demo_mixture(args, out):
    out.write(demo_mixture(args.sigma, args.samples, args.seed).text() + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="laplace-audit",
                                 description="Measure how far a density is from its Laplace approximation.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="MAP and Laplace approximation as JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("diagnose", help="sampling KL diagnostics")
    p.add_argument("--model", required=True)
    p.add_argument("--samples", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--var-elbo", type=_pair, metavar="SE,SR")
    p.add_argument("--taylor", action="store_true")
    p.add_argument("--json")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("bounds", help="rigorous curvature, KL, TV and coverage bounds")
    p.add_argument("--model", required=True)
    p.add_argument("--delta3", type=float, help="user-supplied third-derivative bound")
    p.add_argument("--kl", type=float, help="KL value for Pinsker and coverage (default: radial bound)")
    p.add_argument("--samples", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("reference-kl", help="reference KL by direct sampling and by NUTS")
    p.add_argument("--model", required=True)
    p.add_argument("--chain-samples", type=int, default=50_000)
    p.add_argument("--warmup", type=int, default=10_000)
    p.add_argument("--samples", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json")
    p.add_argument("--chain-csv")
    p.set_defaults(func=cmd_reference_kl)

    p = sub.add_parser("experiment", help="run a logistic sweep into a CSV file")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--full", action="store_true", help="use the large grid")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("plot", help="SVG figure from a results CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--kind", choices=PLOT_KINDS, default="kl_vs_n")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("demo-mixture", help="non-log-concave counterexample")
    p.add_argument("--sigma", type=float, default=100.0)
    p.add_argument("--samples", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo_mixture)
    return ap


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except (ValueError, OSError, ChainError) as exc:
        sys.stderr.write(f"laplace-audit: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
