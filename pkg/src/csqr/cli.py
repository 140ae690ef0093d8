"""Command line interface: ``csqr simulate | fit | sqte | eval | report | sensitivity``.

Every subcommand takes ``--config FILE``, a flat JSON object mapping option
names to values. Explicit flags override the file, which overrides the
built-in defaults. Each output file gets a ``<name>.manifest.json`` sidecar
whose ``arguments`` block can itself be passed back as ``--config``.

Exit codes: 0 success, 2 usage/configuration, 3 data/schema/IO, 4 numeric.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .causal import SENSITIVITY_COVERAGES, AdjustmentConfig, bootstrap_ci, estimate_surface, neighborhood_adjusted_fit
from .data import read_csv
from .evaluation import (
    DEFAULT_TAUS,
    ModelVariant,
    evaluate_field,
    fields_from_frame,
    report_frame,
    run_study,
    sensitivity_frame,
)
from .exceptions import CompatibilityError, ConfigurationError, CsqrError, InsufficientDataError, SchemaError
from .network import QuantileModel, TrainConfig, train
from .plots import render_report, render_sensitivity
from .simulate import ScenarioSpec, export_frame, generate
from .spatial import FeatureSpec, variant_spec

logger = logging.getLogger("csqr")

CONFIG_HELP = (
    "--config FILE reads a flat JSON object of option names to values "
    '(e.g. {"epochs": 100, "seed": 3}); precedence is flags > config file > defaults. '
    "A manifest sidecar written by any command is also accepted."
)


# --------------------------------------------------------------------------
# value parsing


def _floats(value):
    if value is None:
        return None
    if isinstance(value, (int, float)):
        return [float(value)]
    if isinstance(value, str):
        return [float(v) for v in value.split(",") if v.strip()]
    return [float(v) for v in value]


def _ints(value):
    return [int(v) for v in _floats(value)] if value is not None else None


def _variant_list(value):
    out = _ints(value) or []
    for v in out:
        if v not in range(1, 6):
            raise ConfigurationError(f"model variant must be 1-5, got {v}")
    return out


def _train_config(args):
    cfg = TrainConfig(
        seed=int(args.seed),
        K=int(args.K),
        hidden=tuple(_ints(args.hidden)),
        learning_rate=float(args.learning_rate),
        batch_size=int(args.batch_size),
        epochs=int(args.epochs),
        scaler=args.scaler,
    )
    cfg.validate()
    return cfg


def _manifest_path(path):
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def _write_text(path, text):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_manifest(out, args, **extra):
    arguments = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command", "config", "verbose")}
    doc = {"artifact": "csqr", "version": __version__, "command": args.command, "arguments": arguments}
    doc.update(extra)
    _write_text(_manifest_path(out), json.dumps(doc, sort_keys=True, indent=1, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (tuple, set)):
        return list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _write_csv(frame, path):
    _write_text(path, frame.to_csv(index=False, lineterminator="\n"))


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    spec = ScenarioSpec(args.scenario, args.grid, args.n, args.replicates, args.seed, args.treatment_level)
    frames, nonmono = [], []
    for r in range(args.first_replicate, args.first_replicate + args.replicates):
        field = generate(spec, r)
        frames.append(export_frame(field, args.with_oracle))
        nonmono.append(field.n_nonmonotone)
    frame = pd.concat(frames, ignore_index=True)
    _write_csv(frame, args.out)
    _write_manifest(args.out, args, spec=spec.to_dict(), rows=len(frame), nonmonotone_rows=nonmono)
    print(f"wrote {len(frame)} rows to {args.out}")
    return 0


def _feature_spec(args):
    return variant_spec(args.variant, args.coordinates)


def cmd_fit(args):
    obs = read_csv(args.data, _covariates(args.covariates))
    cfg = _train_config(args)
    spec = _feature_spec(args)
    if args.adjust:
        adj = AdjustmentConfig(float(args.coverage), min_rows=int(args.min_rows))
        model = neighborhood_adjusted_fit(obs, spec, cfg, adj)
    else:
        model = train(obs, spec.fit(obs), cfg)
    model.train_meta["variant"] = int(args.variant)
    model.train_meta["feature_spec"] = {
        "node_counts": list(spec.node_counts),
        "include_coordinates": bool(spec.include_coordinates),
    }
    _write_text(args.out, model.dumps() + "\n")
    extra = {"final_nll": model.train_meta["final_nll"], "n_train": model.train_meta["n_train"]}
    if "adjustment" in model.train_meta:
        extra["adjustment"] = model.train_meta["adjustment"]
    _write_manifest(args.out, args, **extra)
    print(f"final NLL: {model.train_meta['final_nll']:.6f}")
    if args.adjust:
        a = model.train_meta["adjustment"]
        print(f"neighbourhood radius {a['radius']:.6f}, subset {a['subset_size']} of {a['n_total']} rows")
    return 0


def _covariates(value):
    if value is None or value == "":
        return None
    if isinstance(value, str):
        return [c.strip() for c in value.split(",") if c.strip()]
    return list(value)


def _load_for_model(model, data_path):
    names = list(model.recipe.covariate_names or [])
    try:
        obs = read_csv(data_path, names or None)
    except SchemaError as exc:
        if exc.column in names:
            raise CompatibilityError(f"data lacks covariate {exc.column!r} the model was trained on") from exc
        raise
    if obs.X.shape[1] != model.recipe.n_covariates:
        raise CompatibilityError(
            f"model expects {model.recipe.n_covariates} covariates, data has {obs.X.shape[1]}"
        )
    return obs


def _spec_from_model(model):
    fs = model.train_meta.get("feature_spec")
    if fs is None:
        raise CompatibilityError("model file has no feature spec; refit with the csqr fit command to bootstrap")
    return FeatureSpec(tuple(fs["node_counts"]), bool(fs["include_coordinates"]))


def cmd_sqte(args):
    model = QuantileModel.load(args.model)
    obs = _load_for_model(model, args.data)
    taus = _floats(args.tau)
    if args.bootstrap:
        c = dict(model.train_meta["config"])
        c["hidden"] = tuple(c["hidden"])
        cfg = TrainConfig(**c)
        a = model.train_meta.get("adjustment")
        adj = AdjustmentConfig(a["coverage"], a["mode"]) if a else None
        surface = bootstrap_ci(obs, _spec_from_model(model), cfg, int(args.bootstrap), taus, args.bootstrap_seed, adj)
    else:
        surface = estimate_surface(model, obs, taus)
    frame = surface.to_frame()
    _write_csv(frame, args.out)
    _write_manifest(args.out, args, locations=len(surface.locations))
    avg = ", ".join(f"tau={t:g}: {v:.6g}" for t, v in zip(surface.taus, surface.average))
    print(f"spatial average SQTE {avg}")
    return 0


def _variants(args, adjusted_key="adjusted_variants"):
    out = [ModelVariant(v) for v in _variant_list(args.variants)]
    out += [ModelVariant(v, adjusted=True) for v in _variant_list(getattr(args, adjusted_key, None))]
    if not out:
        raise ConfigurationError("no model variants selected")
    return out


def _study(args, variants, adj):
    cfg = _train_config(args)
    taus = _floats(args.taus)
    if args.data:
        fields = fields_from_frame(pd.read_csv(args.data), args.scenario)
        results = []
        for rep, truth in fields:
            results.extend(evaluate_field(truth, rep, args.data_seed, variants, cfg, taus, adj, args.fraction))
        return results
    if int(args.replicates) < 1:
        raise InsufficientDataError("empty replicate set")
    spec = ScenarioSpec(args.scenario, args.grid, args.n, int(args.replicates), args.data_seed)
    return run_study(spec, variants, cfg, taus, adj, workers=args.workers, progress=_progress)


def _progress(r):
    logger.info("replicate %d done", r)


def cmd_eval(args):
    adj = AdjustmentConfig(float(args.coverage), args.adjust_mode, int(args.min_rows))
    results = _study(args, _variants(args), adj)
    frame = report_frame(results, args.scenario)
    _write_csv(frame, args.out)
    extra = {}
    if not args.data:
        extra["spec"] = ScenarioSpec(args.scenario, args.grid, args.n, int(args.replicates), args.data_seed).to_dict()
    _write_manifest(args.out, args, **extra)
    if args.plots:
        for p in render_report(frame, args.plots):
            print(f"wrote {p}")
    print(f"wrote {len(frame)} report rows to {args.out}")
    return 0


def cmd_report(args):
    frame = pd.read_csv(args.report)
    missing = {"variant", "adjusted", "tau", "lon", "lat", "metric", "mean", "sd"} - set(frame.columns)
    if missing:
        raise SchemaError(f"report lacks columns {sorted(missing)}", column=sorted(missing)[0])
    if len(frame) == 0:
        raise SchemaError("report has no rows")
    for p in render_report(frame, args.out_dir, float(args.map_tau)):
        print(f"wrote {p}")
    return 0


def cmd_sensitivity(args):
    coverages = _floats(args.coverages)
    base = _variant_list(args.variants)
    if not base:
        raise ConfigurationError("no model variants selected")
    by_cov = {0.0: _study(args, [ModelVariant(v) for v in base], None)}
    for rho in coverages:
        adj = AdjustmentConfig(rho, args.adjust_mode, int(args.min_rows))
        by_cov[rho] = _study(args, [ModelVariant(v, adjusted=True) for v in base], adj)
    frame = sensitivity_frame(by_cov, args.scenario)
    _write_csv(frame, args.out)
    _write_manifest(args.out, args)
    svg = Path(args.out).with_suffix(".svg")
    render_sensitivity(frame, svg)
    print(f"wrote {args.out} and {svg}")
    return 0


# --------------------------------------------------------------------------
# parser


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--seed", type=int, default=0, help="fit seed (initialisation and shuffling)")
    g.add_argument("--K", type=int, default=10, help="number of spline basis functions")
    g.add_argument("--hidden", default="32,32", help="comma-separated hidden layer widths")
    g.add_argument("--learning-rate", type=float, default=1e-3)
    g.add_argument("--batch-size", type=int, default=256)
    g.add_argument("--epochs", type=int, default=200)
    g.add_argument("--scaler", choices=("quantile", "minmax"), default="quantile", help="response scaling")


def _add_study_flags(p, variants):
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--data", help="oracle-bearing CSV from 'simulate --with-oracle'; generated when omitted")
    p.add_argument("--grid", type=int, default=10, help="grid side when generating")
    p.add_argument("--n", type=int, default=200, help="rows per location when generating")
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--data-seed", type=int, default=0, help="simulation and split seed")
    p.add_argument("--variants", default=variants, help="comma-separated model variants (1-5)")
    p.add_argument("--taus", default=",".join(f"{t:g}" for t in DEFAULT_TAUS))
    p.add_argument("--fraction", type=float, default=0.8, help="training fraction per location")
    p.add_argument("--adjust-mode", choices=("center", "per_location"), default="center")
    p.add_argument("--min-rows", type=int, default=50)
    p.add_argument("--workers", type=int, default=1, help="replicate worker processes")
    _add_train_flags(p)


def build_parser():
    parser = argparse.ArgumentParser(prog="csqr", description="Causal spatial quantile regression.", epilog=CONFIG_HELP)
    parser.add_argument("--version", action="version", version=f"csqr {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_, epilog=CONFIG_HELP)
        p.add_argument("--config", help="flat JSON key-value file of option defaults")
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "Generate a simulated dataset.")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--grid", type=int, default=20, help="locations per side")
    p.add_argument("--n", type=int, default=1000, help="rows per location")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicates", type=int, default=1, help="replicates to write")
    p.add_argument("--first-replicate", type=int, default=0)
    p.add_argument("--treatment-level", choices=("location", "row"), default=None)
    p.add_argument("--with-oracle", action="store_true", help="also write h1-h3 and u")
    p.add_argument("--out", required=True)

    p = add("fit", cmd_fit, "Fit a quantile model to a CSV dataset.")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", type=int, choices=range(1, 6), default=1)
    p.add_argument("--coordinates", action=argparse.BooleanOptionalAction, default=None,
                   help="force raw coordinates in or out of the features")
    p.add_argument("--covariates", default=None, help="comma-separated covariate columns (default: all others)")
    p.add_argument("--adjust", action="store_true", help="fit on the neighbourhood of the domain centre")
    p.add_argument("--coverage", type=float, default=0.2, help="neighbourhood fraction of rows")
    p.add_argument("--min-rows", type=int, default=50)
    p.add_argument("--out", required=True)
    _add_train_flags(p)

    p = add("sqte", cmd_sqte, "Estimate the effect surface with a fitted model.")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tau", default="0.05,0.5", help="comma-separated quantile levels")
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap replicates (0 = none)")
    p.add_argument("--bootstrap-seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "RMISE study over simulation replicates.")
    _add_study_flags(p, "1,2,3,4,5")
    p.add_argument("--adjusted-variants", default="", help="variants also fitted with neighbourhood adjustment")
    p.add_argument("--coverage", type=float, default=0.2)
    p.add_argument("--plots", default=None, help="directory for SVG renderings")
    p.add_argument("--out", required=True)

    p = add("report", cmd_report, "Render SVG plots from a report CSV.")
    p.add_argument("--report", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--map-tau", type=float, default=0.05)

    p = add("sensitivity", cmd_sensitivity, "Effect RMISE across neighbourhood fractions.")
    _add_study_flags(p, "1,2")
    p.add_argument("--coverages", default=",".join(f"{c:g}" for c in SENSITIVITY_COVERAGES))
    p.add_argument("--out", required=True)
    return parser, sub


def _load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path}: {exc}") from exc
    if isinstance(doc, dict) and "arguments" in doc and "artifact" in doc:
        doc = doc["arguments"]
    if not isinstance(doc, dict) or any(isinstance(v, dict) for v in doc.values()):
        raise ConfigurationError(f"config file {path} must be a flat JSON object")
    return {k.replace("-", "_"): v for k, v in doc.items()}


def _prescan(argv, commands):
    """Find the subcommand and ``--config`` path before the real parse."""
    command = config = None
    for i, tok in enumerate(argv):
        if command is None and tok in commands:
            command = tok
        elif tok == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif tok.startswith("--config="):
            config = tok.split("=", 1)[1]
    return command, config


def parse_args(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, sub = build_parser()
    command, config = _prescan(argv, sub.choices)
    if command and config:
        conf = _load_config(config)
        subparser = sub.choices[command]
        known = {a.dest for a in subparser._actions}
        unknown = sorted(set(conf) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        # options supplied by the file stop being required on the command line
        for action in subparser._actions:
            if action.dest in conf:
                action.required = False
        subparser.set_defaults(**conf)
    return parser.parse_args(argv)


def main(argv=None):
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
        return args.func(args)
    except CsqrError as exc:
        print(f"csqr: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        print(f"csqr: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
