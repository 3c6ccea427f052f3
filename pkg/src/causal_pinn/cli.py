"""Command-line entry point.

Exit codes: 0 success, 2 usage or parse error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import io
from .diagnostics import REPORT_SCHEMA, counterfactual_deviation, diagnose, stable_domain
from .model import Intervention, ModelError, SpaceTimeDomain, StructuralModel, library_of
from .operators import AnalyticField, OperatorError
from .pipeline import diagnostic_model, run_benchmark, run_suite, summary_markdown, write_metrics_csv
from .solvers import BENCHMARKS, SUITE_ROWS, SolverError, generate_benchmark, get_benchmark, solve_fd
from .sparse import SparseError
from .surrogate import load_net, save_net
from .trainer import NonFiniteLoss, TrainingDivergence, retrain_counterfactual, train, train_baseline_pinn

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
log = logging.getLogger("causal_pinn")


class UsageError(ValueError):
    pass


def _out_dir(args) -> str:
    d = args.out or os.environ.get(io.ENV_OUT) or "runs"
    os.makedirs(d, exist_ok=True)
    return d


def _benchmark(name):
    if name not in BENCHMARKS:
        raise UsageError(f"unknown benchmark {name!r}; choose from {', '.join(sorted(BENCHMARKS))}")
    return get_benchmark(name)


def _meta_dict(spec, samples) -> dict:
    return {"benchmark": spec.name, "model": io.model_to_dict(spec.true_model),
            "library": [s.name for s in spec.library], "ic": spec.ic,
            "domain": io.domain_to_dict(spec.domain), "exact": spec.exact,
            "colloc_axes": [a.tolist() for a in samples.colloc_axes],
            "noise_sigma": samples.noise_sigma, "n": len(samples),
            "contaminated": spec.contaminated, "deviation_mode": spec.deviation_mode}


def _run_config(args):
    file_cfg = io.load_config_file(args.config) if getattr(args, "config", None) else {}
    train = {k: v for k, v in {"epochs": getattr(args, "epochs", None),
                                "lambda_s": getattr(args, "lambda_s", None),
                                "lr": getattr(args, "lr", None)}.items() if v is not None}
    over = {"benchmark": getattr(args, "benchmark", None),
            "dataset": getattr(args, "samples", None),
            "library": args.library.split(";") if getattr(args, "library", None) else None,
            "seeds": io.parse_seeds(args.seeds) if getattr(args, "seeds", None) else None,
            "out": args.out, "train": train}
    if over["benchmark"] and "dataset" in file_cfg:
        file_cfg = {k: v for k, v in file_cfg.items() if k != "dataset"}
    if over["dataset"] and "benchmark" in file_cfg:
        file_cfg = {k: v for k, v in file_cfg.items() if k != "benchmark"}
    try:
        return io.build_run_config(file_cfg, over)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


# -- subcommands -----------------------------------------------------------------

def cmd_generate(args) -> int:
    overrides = {}
    if args.n is not None:
        overrides["n"] = args.n
    if args.noise is not None:
        overrides["noise"] = args.noise
    if args.benchmark not in BENCHMARKS:
        raise UsageError(f"unknown benchmark {args.benchmark!r}")
    spec = get_benchmark(args.benchmark, **overrides)
    samples, truth = generate_benchmark(spec, args.seed)
    out = _out_dir(args)
    io.write_samples(samples, os.path.join(out, "samples.csv"))
    io.write_grid(truth, os.path.join(out, "truth_grid.csv"))
    io.write_json(_meta_dict(spec, samples), os.path.join(out, "truth_model.json"))
    print(f"wrote {len(samples)} samples of {spec.name} to {out}")
    return EXIT_OK


def _load_meta(path):
    if path and os.path.exists(path):
        return io.read_json(path)
    return None


def _dataset_problem(cfg, meta_path):
    """Samples, library, initial data and domain for a dataset run."""
    meta_path = meta_path or os.path.join(os.path.dirname(os.path.abspath(cfg.dataset)), "truth_model.json")
    meta = _load_meta(meta_path)
    colloc = [np.asarray(a) for a in meta["colloc_axes"]] if meta else None
    samples = io.read_samples(cfg.dataset, colloc_axes=colloc,
                              noise_sigma=float(meta.get("noise_sigma", 0.0)) if meta else 0.0)
    names = cfg.library or (meta or {}).get("library")
    if not names:
        raise UsageError("no operator library given (use --library or a config file)")
    library = library_of(names)
    if meta:
        domain, ic = io.domain_from_dict(meta["domain"]), meta["ic"]
    else:
        ax = samples.colloc_axes
        domain = SpaceTimeDomain(samples.dim, tuple(a[0] for a in ax[:-1]), tuple(a[-1] for a in ax[:-1]),
                                 float(ax[-1][-1]), tuple(a.size for a in ax[:-1]), ax[-1].size)
        ic = None
    return samples, library, domain, ic, meta


def cmd_discover(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(argparse.Namespace(out=args.out or cfg.out))
    for seed in cfg.seeds:
        tcfg = io.TrainConfig(**{**cfg.train.as_dict(), "seed": seed})
        sub = os.path.join(out, f"seed{seed}")
        if cfg.benchmark:
            spec = _benchmark(cfg.benchmark)
            if cfg.library:
                spec = replace(spec, library=library_of(cfg.library))
            try:
                row, report, est = run_benchmark(spec.name, seed, tcfg, sub, args.baseline, cfg.eps, cfg.eta, spec)
            except TrainingDivergence as exc:
                _dump_partial(exc, sub)
                raise
            print(f"seed {seed}: support {est.support_names}  alpha {np.round(est.coeffs, 4).tolist()}")
            continue
        samples, library, domain, ic, meta = _dataset_problem(cfg, args.meta)
        os.makedirs(sub, exist_ok=True)
        try:
            net, est, trace = train(samples, library, tcfg)
        except TrainingDivergence as exc:
            _dump_partial(exc, sub)
            raise
        if ic is None:
            ic = _net_initial_condition(net, domain)
        model = StructuralModel(library, tuple(est.pruned()))
        report = diagnose(net, model, ic, domain, samples.colloc_axes, cfg.eps, cfg.eta,
                          config={"dataset": cfg.dataset, "seed": seed, "train": tcfg.as_dict()})
        report.extra.update(estimate=dict(zip(est.names, est.alpha_hat)), estimated_support=est.support_names)
        if args.baseline:
            frozen = StructuralModel(library, tuple([tcfg.alpha_init] * len(library)))
            _, btrace = train_baseline_pinn(samples, frozen, tcfg)
            report.extra["baseline"] = {"support": frozen.support(tcfg.prune_tol), "data_loss": btrace.data[-1],
                                        "residual": btrace.residual[-1]}
        report.to_json(os.path.join(sub, "report.json"))
        trace.to_csv(os.path.join(sub, "trace.csv"))
        save_net(net, os.path.join(sub, "net.txt"))
        write_metrics_csv(report, os.path.join(sub, "metrics.csv"))
        print(f"seed {seed}: support {est.support_names}  alpha {np.round(est.coeffs, 4).tolist()}")
    return EXIT_OK


def _dump_partial(exc, sub):
    if getattr(exc, "trace", None) is not None:
        os.makedirs(sub, exist_ok=True)
        exc.trace.to_csv(os.path.join(sub, "trace.csv"))


def _net_initial_condition(net, domain):
    def ic(*mesh):
        pts = np.stack([m.ravel() for m in mesh] + [np.zeros(mesh[0].size)], axis=1)
        return net(pts).reshape(mesh[0].shape)
    return ic


def _model_arg(args, spec, meta):
    if args.model:
        d = io.read_json(args.model)
        if "model" in d and isinstance(d["model"], dict):
            d = d["model"]
        elif "diagnosed_model" in d.get("extra", {}):
            d = d["extra"]["diagnosed_model"]
        return io.model_from_dict(d)
    if spec is not None:
        return diagnostic_model(spec, spec.embedded_truth().alpha)
    if meta is not None:
        return io.model_from_dict(meta["model"])
    raise UsageError("no model given (use --model, --benchmark or --meta)")


def _problem_from_args(args):
    """(spec or None, meta or None, ic, domain)."""
    if args.benchmark:
        spec = _benchmark(args.benchmark)
        return spec, None, spec.ic, spec.domain
    meta = _load_meta(args.meta)
    if meta is None:
        raise UsageError("need --benchmark or an existing --meta file")
    return None, meta, meta["ic"], io.domain_from_dict(meta["domain"])


def _intervention(args) -> Intervention:
    if args.action == "replace":
        if not args.replacement:
            raise UsageError("--action replace needs --replacement")
        return io.intervention_from_dict({"target": args.target, "action": "replace",
                                          "replacement": args.replacement})
    return Intervention(args.target, args.action, args.factor)


def cmd_counterfactual(args) -> int:
    spec, meta, ic, domain = _problem_from_args(args)
    model = _model_arg(args, spec, meta)
    iv = _intervention(args)
    from .model import apply_intervention
    cf_model = apply_intervention(model, iv)
    out = _out_dir(args)
    result = {"model": io.model_to_dict(model), "intervened": io.model_to_dict(cf_model),
              "intervention": {"target": iv.target, "action": iv.action, "factor": iv.factor},
              "method": args.method}
    if args.method == "fd":
        dom = stable_domain(cf_model, stable_domain(model, domain))
        fact = solve_fd(model, ic, dom)
        cf = solve_fd(cf_model, ic, dom)
        io.write_grid(fact, os.path.join(out, "factual_grid.csv"))
        io.write_grid(cf, os.path.join(out, "cf_grid.csv"))
        result["deviation"] = counterfactual_deviation(fact, cf)
        if dom.dim in (1, 2):
            result["deviation_mode1"] = counterfactual_deviation(fact, cf, "mode1")
    else:
        if not (args.net and args.samples):
            raise UsageError("--method surrogate needs --net and --samples")
        net = load_net(args.net)
        if meta:
            colloc = [np.asarray(a) for a in meta["colloc_axes"]]
        else:
            colloc = list(spec.colloc_axes()) if spec is not None else None
        samples = io.read_samples(args.samples, colloc_axes=colloc)
        cf_net, delta = retrain_counterfactual(net, model, iv, samples)
        save_net(cf_net, os.path.join(out, "cf_net.txt"))
        result["deviation"] = delta
    io.write_json(result, os.path.join(out, "counterfactual.json"))
    print(f"deviation {result['deviation']:.6g}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    spec, meta, ic, domain = _problem_from_args(args)
    model = _model_arg(args, spec, meta)
    mode = spec.deviation_mode if spec else (meta or {}).get("deviation_mode", "full")
    if args.net:
        field = load_net(args.net)
    else:
        expr = spec.exact if spec else meta.get("exact")
        if not expr:
            raise UsageError("no closed-form field for this problem; pass --net")
        field = AnalyticField(expr, domain.dim)
    if spec is not None:
        axes = spec.colloc_axes()
    elif meta is not None:
        axes = tuple(np.asarray(a) for a in meta["colloc_axes"])
    report = diagnose(field, model, ic, domain, axes, args.eps, args.eta, deviation_mode=mode,
                      n_bound_checks=args.bound_checks,
                      config={"benchmark": args.benchmark, "model": io.model_to_dict(model)})
    out = _out_dir(args)
    report.to_json(os.path.join(out, "report.json"))
    write_metrics_csv(report, os.path.join(out, "metrics.csv"))
    print(f"support {report.support}; misattributed {report.misattributed}")
    return EXIT_OK


def cmd_suite(args) -> int:
    file_cfg = io.load_config_file(args.config) if args.config else {}
    train_d = dict(file_cfg.get("train") or {})
    if args.epochs is not None:
        train_d["epochs"] = args.epochs
    try:
        tcfg = io.TrainConfig(**train_d)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    seeds = io.parse_seeds(args.seeds or str(file_cfg.get("seeds", "1-5")))
    names = args.benchmarks.split(",") if args.benchmarks else list(SUITE_ROWS)
    for n in names:
        _benchmark(n)
    workers = args.workers or io.default_workers()
    out = _out_dir(args)
    rows = run_suite(seeds, out, names, tcfg, workers, args.baseline,
                     float(file_cfg.get("eps", 0.05)), float(file_cfg.get("eta", 0.01)))
    print(summary_markdown(rows))
    return EXIT_NUMERIC if any(r["error"] for r in rows) else EXIT_OK


def cmd_report(args) -> int:
    import jsonschema
    found = []
    for root, _, files in sorted(os.walk(args.run_dir)):
        if "report.json" in files:
            found.append(os.path.join(root, "report.json"))
    if not found:
        raise UsageError(f"no report.json under {args.run_dir}")
    lines = ["| Run | Support | Misattributed | mu | coherence ok |", "|---|---|---|---|---|"]
    for path in sorted(found):
        rep = io.read_json(path)
        try:
            jsonschema.validate(rep, REPORT_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise io.FormatError(f"schema violation: {exc.message}", path) from None
        cert = rep.get("certificate", {})
        mu = cert.get("mu")
        lines.append(f"| {os.path.relpath(os.path.dirname(path), args.run_dir) or '.'} | "
                     f"{', '.join(rep['support']) or '-'} | {', '.join(rep.get('misattributed', [])) or '-'} | "
                     f"{'' if mu is None else f'{mu:.3f}'} | {cert.get('coherence_satisfied', '')} |")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(args.run_dir, "report.md"), "w") as fh:
        fh.write(text)
    print(text)
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causal-pinn", description="Causal operator discovery on spatiotemporal data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic benchmark dataset")
    g.add_argument("--benchmark", required=True)
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("discover", help="train and diagnose, one run per seed")
    src = d.add_mutually_exclusive_group()
    src.add_argument("--samples", help="samples.csv with header x[,y],t,u")
    src.add_argument("--benchmark")
    d.add_argument("--meta", help="truth_model.json describing the domain (default: next to samples)")
    d.add_argument("--library", help="operators separated by ';', e.g. 'U;U2;DXX'")
    d.add_argument("--config", help="YAML run configuration")
    d.add_argument("--seeds")
    d.add_argument("--epochs", type=int)
    d.add_argument("--lambda-s", dest="lambda_s", type=float)
    d.add_argument("--lr", type=float)
    d.add_argument("--baseline", action="store_true", help="also fit the fixed-operator baseline")
    d.add_argument("--out")
    d.set_defaults(func=cmd_discover)

    for name, func, hlp in (("counterfactual", cmd_counterfactual, "solve an intervened model"),
                            ("diagnose", cmd_diagnose, "per-operator causal metrics")):
        c = sub.add_parser(name, help=hlp)
        c.add_argument("--benchmark")
        c.add_argument("--meta")
        c.add_argument("--model", help="JSON model file (library/alpha or name->coefficient)")
        c.add_argument("--net", help="network checkpoint")
        c.add_argument("--out")
        if name == "counterfactual":
            c.add_argument("--target", required=True)
            c.add_argument("--action", choices=["zero", "scale", "replace"], default="zero")
            c.add_argument("--factor", type=float, default=1.0)
            c.add_argument("--replacement")
            c.add_argument("--method", choices=["fd", "surrogate"], default="fd")
            c.add_argument("--samples")
        else:
            c.add_argument("--eps", type=float, default=0.05)
            c.add_argument("--eta", type=float, default=0.01)
            c.add_argument("--bound-checks", dest="bound_checks", type=int, default=0)
        c.set_defaults(func=func)

    s = sub.add_parser("benchmark-suite", help="all benchmark rows across seeds")
    s.add_argument("--seeds")
    s.add_argument("--benchmarks", help="comma separated subset")
    s.add_argument("--workers", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--config")
    s.add_argument("--baseline", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_suite)

    r = sub.add_parser("report", help="validate and tabulate report.json files")
    r.add_argument("run_dir")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, io.FormatError, ModelError, OperatorError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, TrainingDivergence, NonFiniteLoss, SparseError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
