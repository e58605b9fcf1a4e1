"""Command-line front end.

Subcommands: ``fit`` (factor a tensor file), ``gradcheck`` (finite
difference audit of the analytic gradients), ``synth`` (sample data
from a seeded ground-truth model), ``predict`` (held-out binary
prediction experiment), ``export`` (reconstruct a tensor from exported
factors).

Configuration comes from flags, or from a JSON file via ``--config``
whose keys match the long flag names; explicit flags win over the file.
Every run is deterministic given its inputs, flags, and seeds.

Exit codes: 0 success, 1 validation or domain error (bad flags, malformed
files, infeasible data), 2 numerical failure.
"""

from __future__ import annotations

import argparse
import io as stringio
import json
import os
import sys

import numpy as np
from numpy.random import Generator, Philox

from . import io as tio
from .exceptions import GCPError, NumericalError
from .fitting import fit_gcp
from .gradcheck import check_gradients, random_interior_model
from .kruskal import KruskalTensor
from .losses import LOSS_NAMES
from .objective import FitProblem
from .optimize import OptOptions
from .tensors import CooTensor
from .validation import as_loss_spec

__all__ = ["main"]

_PREDICT_LOSSES = ("gaussian", "bernoulli_odds", "bernoulli_logit")
# fallback loss parameters for gradcheck runs over the whole catalog
_GRADCHECK_PARAMS = {"delta": 0.25, "beta": 0.5, "failures": 1.5}
_GRADCHECK_BOUND = 1e-4


class _UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # raise instead of exiting so main() can map usage problems to exit 1
    def error(self, message):
        raise _UsageError(message)


def _int_list(text):
    return [int(t) for t in str(text).split(",") if t.strip()]


def _float_list(text):
    return [float(t) for t in str(text).split(",") if t.strip()]


def _add_core_flags(p):
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--tensor", help="input tensor file")
    p.add_argument("--loss", help="loss name from the catalog")
    p.add_argument("--epsilon", type=float, help="log/denominator shift")
    p.add_argument("--delta", type=float, help="huber transition width")
    p.add_argument("--beta", type=float, help="beta_div exponent")
    p.add_argument("--failures", type=float, help="negbinom failure count")
    p.add_argument("--rank", type=int, help="number of components")
    p.add_argument("--reg", type=_float_list, metavar="ETA[,ETA...]",
                   help="L2 penalty, scalar or one per mode")
    p.add_argument("--seeds", type=_int_list, metavar="S1[,S2...]",
                   help="random starts; best final objective wins")
    p.add_argument("--maxiters", type=int, help="solver iteration cap")
    p.add_argument("--gtol", type=float, help="projected-gradient tolerance")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gcptensor", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a low-rank model to a tensor file")
    _add_core_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser(
        "gradcheck",
        help="finite-difference audit of analytic gradients",
        description="Checks every analytic gradient against central finite "
        "differences on random problems; kinked losses are sampled with "
        "continuous data so evaluation at a transition point has "
        "probability zero.",
    )
    _add_core_flags(p)
    p.add_argument("--shape", type=_int_list, metavar="N1,N2,...",
                   help="tensor shape of the random problems (default 5,4,3)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="sample a tensor from a seeded ground truth")
    _add_core_flags(p)
    p.add_argument("--shape", type=_int_list, metavar="N1,N2,...",
                   help="tensor shape to generate")
    p.add_argument("--scale", type=float,
                   help="component weight applied to the uniform(0,1) factors")
    p.add_argument("--sigma", type=float,
                   help="gaussian noise level (0 = noiseless)")
    p.add_argument("--gamma-shape", dest="gamma_shape", type=float,
                   help="gamma sampling shape parameter")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("predict", help="held-out binary prediction experiment")
    _add_core_flags(p)
    p.add_argument("--losses", help="comma-separated losses to compare")
    p.add_argument("--trials", type=int, help="number of holdout repetitions")
    p.add_argument("--ones", type=int, help="held-out ones per trial")
    p.add_argument("--zeros", type=int, help="held-out zeros per trial")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("export", help="reconstruct a tensor from exported factors")
    _add_core_flags(p)
    p.add_argument("--model", help="directory holding factor_k.csv and lambda.csv")
    p.add_argument("--probability", action="store_true", default=None,
                   help="export probabilities instead of raw model values")
    p.set_defaults(func=cmd_export)
    return parser


_DEFAULTS = {
    "loss": "gaussian",
    "epsilon": None,
    "delta": None,
    "beta": None,
    "failures": None,
    "reg": 0.0,
    "seeds": [0],
    "maxiters": 1000,
    "gtol": 1e-5,
    "rank": None,
    "tensor": None,
    "out": None,
    "shape": [5, 4, 3],
    "scale": 1.0,
    "sigma": 1.0,
    "gamma_shape": None,
    "losses": ",".join(_PREDICT_LOSSES),
    "trials": 1,
    "ones": 50,
    "zeros": 50,
    "model": None,
    "probability": False,
}


def _merge_config(args) -> tuple:
    """Layer defaults, config file, and flags; flags win.

    Returns the merged dict and the set of keys the user set explicitly
    (by flag or config), so commands can tell a default apart from a
    deliberate choice.
    """
    cfg = dict(_DEFAULTS)
    explicit = set()
    if getattr(args, "config", None):
        with open(args.config) as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise _UsageError(f"config file: {exc}")
        if not isinstance(loaded, dict):
            raise _UsageError("config file must hold a JSON object")
        unknown = set(loaded) - set(_DEFAULTS)
        if unknown:
            raise _UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
        explicit |= set(loaded)
    for key, val in vars(args).items():
        if key in ("config", "func", "command") or val is None:
            continue
        cfg[key] = val
        explicit.add(key)
    # normalize list-ish fields that may arrive as strings or scalars
    if isinstance(cfg["seeds"], (int, float, str)):
        cfg["seeds"] = _int_list(cfg["seeds"])
    cfg["seeds"] = [int(s) for s in cfg["seeds"]]
    if isinstance(cfg["reg"], str):
        cfg["reg"] = _float_list(cfg["reg"])
    if isinstance(cfg["reg"], (list, tuple)) and len(cfg["reg"]) == 1:
        cfg["reg"] = float(cfg["reg"][0])
    if isinstance(cfg["shape"], str):
        cfg["shape"] = _int_list(cfg["shape"])
    cfg["shape"] = tuple(int(n) for n in cfg["shape"])
    if isinstance(cfg["losses"], (list, tuple)):
        cfg["losses"] = ",".join(cfg["losses"])
    if not cfg["seeds"]:
        raise _UsageError("--seeds needs at least one seed")
    return cfg, explicit


def _require(cfg, command, *keys):
    for key in keys:
        if cfg[key] is None:
            raise _UsageError(f"{command} requires --{key}")


def _loss_spec(cfg):
    return as_loss_spec(
        cfg["loss"], cfg["epsilon"], cfg["delta"], cfg["beta"], cfg["failures"]
    )


def _solver_options(cfg) -> OptOptions:
    return OptOptions(max_iters=cfg["maxiters"], grad_tol=cfg["gtol"])


def _write_trace(trace, path) -> None:
    buf = stringio.StringIO()
    trace.to_csv(buf)
    tio.atomic_write_text(path, buf.getvalue())


def cmd_fit(args) -> int:
    cfg, _ = _merge_config(args)
    _require(cfg, "fit", "tensor", "rank", "out")
    data = tio.read_tensor(cfg["tensor"])
    problem = FitProblem(data, _loss_spec(cfg), rank=cfg["rank"], reg=cfg["reg"])
    options = _solver_options(cfg)
    results = [fit_gcp(problem, seed=s, options=options) for s in cfg["seeds"]]
    best_at = min(range(len(results)), key=lambda i: results[i].objective)
    best = results[best_at]

    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    tio.export_model(best.model, out)
    _write_trace(best.trace, os.path.join(out, "trace.csv"))
    lines = ["seed,objective,status,iterations,selected"]
    for i, (seed, res) in enumerate(zip(cfg["seeds"], results)):
        lines.append(
            f"{seed},{res.objective:.17g},{res.trace.status.value},"
            f"{res.trace.n_iters},{int(i == best_at)}"
        )
    tio.atomic_write_text(os.path.join(out, "summary.csv"), "\n".join(lines) + "\n")

    for seed, res in zip(cfg["seeds"], results):
        print(f"seed {seed}: F={res.objective:.10g} "
              f"({res.trace.status.value}, {res.trace.n_iters} iterations)")
    print(f"best: seed {cfg['seeds'][best_at]}, F={best.objective:.10g}")
    print(f"wrote factors, lambda.csv, trace.csv, summary.csv to {out}")
    return 0


def _gradcheck_data(name: str, shape, rng) -> np.ndarray:
    if name in ("bernoulli_odds", "bernoulli_logit"):
        return (rng.uniform(size=shape) < 0.5).astype(np.float64)
    if name in ("poisson", "poisson_log", "negbinom"):
        return rng.poisson(2.0, size=shape).astype(np.float64)
    if name in ("gamma", "rayleigh", "beta_div"):
        return rng.gamma(2.0, 1.0, size=shape)
    return rng.standard_normal(shape)


def cmd_gradcheck(args) -> int:
    cfg, explicit = _merge_config(args)
    names = [cfg["loss"]] if "loss" in explicit else list(LOSS_NAMES)
    rank = cfg["rank"] if cfg["rank"] is not None else 2
    shape = cfg["shape"]
    needs = {"huber": "delta", "beta_div": "beta", "negbinom": "failures"}
    worst = 0.0
    for name in names:
        params = {}
        if name in needs:
            key = needs[name]
            value = cfg[key] if cfg[key] is not None else _GRADCHECK_PARAMS[key]
            params[key] = value
        spec = as_loss_spec(name, cfg["epsilon"], **params)
        for seed in cfg["seeds"]:
            rng = Generator(Philox(int(seed)))
            data = _gradcheck_data(name, shape, rng)
            problem = FitProblem(data, spec, rank=rank)
            model = random_interior_model(problem, seed)
            report = check_gradients(problem, model)
            for k, err in enumerate(report.mode_errors):
                print(f"{name} seed {seed} mode {k}: {err:.3e}")
            worst = max(worst, report.max_error)
    verdict = "PASS" if worst <= _GRADCHECK_BOUND else "FAIL"
    print(f"max relative error {worst:.3e} ({verdict}, bound {_GRADCHECK_BOUND:g})")
    return 0 if worst <= _GRADCHECK_BOUND else 1


def cmd_synth(args) -> int:
    cfg, _ = _merge_config(args)
    _require(cfg, "synth", "out")
    seed = cfg["seeds"][0]
    rank = cfg["rank"] if cfg["rank"] is not None else 2
    if rank < 1:
        raise _UsageError("--rank must be at least 1")
    rng = Generator(Philox(int(seed)))
    factors = [rng.uniform(0.0, 1.0, size=(n, rank)) for n in cfg["shape"]]
    truth = KruskalTensor(factors, weights=np.full(rank, float(cfg["scale"])))
    data = tio.sample_from_model(
        truth,
        cfg["loss"],
        seed=seed + 1,
        sigma=cfg["sigma"],
        gamma_shape=cfg["gamma_shape"],
        failures=cfg["failures"],
    )
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    tio.write_tensor(data, os.path.join(out, "data.tns"))
    tio.export_model(truth, os.path.join(out, "truth"))
    implied = float(_implied_data_mean(cfg["loss"], truth.full()).mean())
    print(f"wrote {data.size} entries to {os.path.join(out, 'data.tns')}")
    print(f"implied data mean {implied:.6g}, sample mean {float(data.mean()):.6g}")
    return 0


def _implied_data_mean(name: str, vals: np.ndarray) -> np.ndarray:
    """Expected data value per entry under the sampling distribution."""
    if name == "poisson_log":
        return np.exp(vals)
    if name == "bernoulli_odds":
        return vals / (1.0 + vals)
    if name == "bernoulli_logit":
        return np.exp(vals - np.logaddexp(0.0, vals))
    # the identity-mean distributions: gaussian, poisson, gamma,
    # rayleigh, negbinom
    return vals


def cmd_predict(args) -> int:
    cfg, _ = _merge_config(args)
    _require(cfg, "predict", "tensor", "rank", "out")
    names = [t.strip() for t in cfg["losses"].split(",") if t.strip()]
    bad = [n for n in names if n not in _PREDICT_LOSSES]
    if bad:
        raise _UsageError(
            f"losses {bad} lack a probability interpretation; "
            f"choose from {list(_PREDICT_LOSSES)}"
        )
    data = tio.read_tensor(cfg["tensor"])
    if isinstance(data, CooTensor):
        if data.scarce:
            raise ValueError("prediction protocol needs a fully observed tensor")
        data = data.to_dense()
    options = _solver_options(cfg)
    base = cfg["seeds"][0]
    rows = []
    for trial in range(int(cfg["trials"])):
        holdout = tio.make_holdout(
            data, cfg["ones"], cfg["zeros"], seed=base + trial
        )
        for name in names:
            spec = as_loss_spec(name, cfg["epsilon"])
            problem = FitProblem(
                data, spec, rank=cfg["rank"], reg=cfg["reg"],
                mask=holdout.train_mask,
            )
            result = fit_gcp(problem, seed=base + trial, options=options)
            ll = tio.heldout_loglik(result.model, holdout, spec)
            rows.append((trial, name, ll))
            print(f"trial {trial} {name}: heldout loglik {ll:.6g}")

    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    lines = ["trial,loss,heldout_loglik"]
    lines += [f"{t},{n},{ll:.17g}" for t, n, ll in rows]
    tio.atomic_write_text(os.path.join(out, "predictions.csv"),
                          "\n".join(lines) + "\n")
    lines = ["loss,q1,median,q3"]
    for name in names:
        vals = np.array([ll for t, n, ll in rows if n == name])
        q1, med, q3 = np.percentile(vals, [25, 50, 75])
        lines.append(f"{name},{q1:.17g},{med:.17g},{q3:.17g}")
        print(f"{name}: median {med:.6g} (q1 {q1:.6g}, q3 {q3:.6g})")
    tio.atomic_write_text(os.path.join(out, "summary.csv"), "\n".join(lines) + "\n")
    return 0


def cmd_export(args) -> int:
    cfg, _ = _merge_config(args)
    _require(cfg, "export", "model", "out")
    model = tio.load_model(cfg["model"])
    values = model.full()
    if cfg["probability"]:
        values = np.asarray(_loss_spec(cfg).probability(values))
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    target = os.path.join(out, "reconstruction.tns")
    tio.write_tensor(values, target)
    print(f"wrote {values.size} entries to {target}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if getattr(args, "command", None) is None:
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (GCPError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
