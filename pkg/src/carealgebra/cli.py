"""Command-line entry point: ``carealgebra <subcommand> ...``.

Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields

import numpy as np

from .baselines import BowConfig, DeeprConfig
from .data import load_cohort, write_cohort
from .errors import CareAlgebraError, ConfigurationError
from .evaluation import (
    MODEL_KINDS,
    ModelSpec,
    cross_validate,
    evaluate,
    fit,
    gradient_suite,
    trace_states,
    write_trace_csv,
)
from .model import RiskConfig
from .optim import TrainConfig
from .serialization import config_digest, load_model
from .synth import SynthConfig, gen_synthetic

log = logging.getLogger("carealgebra")

TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
DATA_KEYS = {"truncate_icd", "label_window", "strict"}
MODEL_KEYS = {
    "mdmt": {f.name for f in fields(RiskConfig)} - {"variant", "seed"},
    "mdmtp": {f.name for f in fields(RiskConfig)} - {"variant", "seed"},
    "bow-lr": {f.name for f in fields(BowConfig)} - {"seed"},
    "deepr-mini": {f.name for f in fields(DeeprConfig)} - {"seed"},
}


class RunConfig:
    """Flat key-value run configuration split into model, training and data parts."""

    def __init__(self, kind, values):
        allowed = MODEL_KEYS[kind] | TRAIN_KEYS | DATA_KEYS
        unknown = sorted(set(values) - allowed)
        if unknown:
            raise ConfigurationError(f"unknown config keys for model {kind!r}: {unknown}")
        self.kind = kind
        self.values = dict(values)
        self.model = {k: v for k, v in values.items() if k in MODEL_KEYS[kind]}
        self.train = TrainConfig(**{k: v for k, v in values.items() if k in TRAIN_KEYS})
        self.data = {k: values[k] for k in DATA_KEYS if k in values}
        self.spec = ModelSpec(kind, self.model)
        # build once so invalid hyperparameters fail before any work starts
        if kind in ("mdmt", "mdmtp"):
            RiskConfig(variant=kind.upper(), **self.model)
        elif kind == "bow-lr":
            BowConfig(**self.model)
        else:
            DeeprConfig(**self.model)

    @property
    def seed(self):
        return self.train.seed

    def effective(self):
        return {"model": self.kind, **self.values, "seed": self.seed}

    def digest(self):
        return config_digest(self.effective())


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _load_config(path, overrides, seed, kind):
    values = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            values = json.load(fh)
        if not isinstance(values, dict):
            raise ConfigurationError("config file must hold a JSON object")
    for item in overrides or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        values[key] = _parse_value(val)
    if seed is not None:
        values["seed"] = seed
    cfg = RunConfig(kind, values)
    print(json.dumps(cfg.effective(), sort_keys=True), file=sys.stderr)
    return cfg


def _read_data(path, data_opts):
    return load_cohort(path, strict=data_opts.get("strict", True),
                       truncate=data_opts.get("truncate_icd", False),
                       label_window=data_opts.get("label_window"))


def _write_json(obj, path):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _split_validation(records, seed, fraction=0.1):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x76616C]))
    order = rng.permutation(len(records))
    n_val = int(round(fraction * len(records)))
    return [records[i] for i in order[n_val:]], [records[i] for i in order[:n_val]]


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_synth(args):
    base = SynthConfig.large_scale() if args.preset == "large" else SynthConfig()
    overrides = {"patients": args.patients, "seed": args.seed}
    if args.prevalence is not None:
        overrides["prevalence"] = args.prevalence
    cfg = SynthConfig(**{**{f.name: getattr(base, f.name) for f in fields(SynthConfig)}, **overrides})
    cohort = gen_synthetic(cfg)
    write_cohort(cohort, args.out)
    with open(args.out + ".meta.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(cohort.provenance, sort_keys=True, indent=2) + "\n")
    log.info("wrote %d records to %s", len(cohort), args.out)
    return 0


def cmd_train(args):
    cfg = _load_config(args.config, args.set, args.seed, args.model)
    cohort = _read_data(args.data, cfg.data)
    fit_records, val = _split_validation(cohort.records, cfg.seed)
    if args.model == "bow-lr":
        fit_records, val = cohort.records, []

    def progress(row):
        log.info("epoch %d train_loss %.5f val_auc %s", row["epoch"], row["train_loss"], row["val_auc"])

    model, history = fit(cfg.spec, cohort.vocabulary, fit_records, val, cfg.train, seed=cfg.seed,
                         progress=progress)
    prov = {"seed": cfg.seed, "config_digest": cfg.digest(), "run_config": cfg.effective()}
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(model.to_json(prov))
    if args.history_out:
        with open(args.history_out, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# seed={cfg.seed}\n# config_digest={cfg.digest()}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_auc"])
            for row in history:
                w.writerow([row["epoch"], repr(row["train_loss"]),
                            "" if row["val_auc"] is None else repr(row["val_auc"])])
    return 0


def _model_provenance(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh).get("provenance", {})


def cmd_eval(args):
    model = load_model(args.model_file)
    prov = _model_provenance(args.model_file)
    cohort = load_cohort(args.data)
    metrics = evaluate(model, cohort.records)
    metrics.update({"model_type": model.model_type, "seed": prov.get("seed"),
                    "config_digest": prov.get("config_digest")})
    _write_json(metrics, args.metrics_out)
    return 0


def cmd_cv(args):
    cfg = _load_config(args.config, args.set, args.seed, args.model)
    cohort = _read_data(args.data, cfg.data)
    report = cross_validate(cohort, cfg.spec, k=args.folds, seed=cfg.seed, train_cfg=cfg.train,
                            jobs=args.jobs)
    out = report.to_dict()
    out["run_config"] = cfg.effective()
    out["run_config_digest"] = cfg.digest()
    _write_json(out, args.metrics_out)
    return 0


def cmd_trace(args):
    model = load_model(args.model_file)
    if not hasattr(model, "lstm"):
        raise ConfigurationError("trace needs an mdmt or mdmtp model file")
    prov = _model_provenance(args.model_file)
    cohort = load_cohort(args.data)
    try:
        record = cohort.by_id(args.patient)
    except KeyError:
        raise ConfigurationError(f"patient {args.patient!r} not found in {args.data}") from None
    rows = trace_states(model, record)
    meta = {"seed": prov.get("seed"), "config_digest": prov.get("config_digest"), "patient": args.patient}
    if args.out in (None, "-"):
        write_trace_csv(rows, sys.stdout, meta)
    else:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_trace_csv(rows, fh, meta)
    return 0


def cmd_gradcheck(args):
    failed = 0
    for label, report in gradient_suite(seed=args.seed, tolerance=args.tolerance):
        status = "ok" if report.passed else "FAIL"
        print(f"{label:32s} max_rel_err={report.worst:.3e} {status}")
        failed += not report.passed
    return 1 if failed else 0


def cmd_embed_export(args):
    model = load_model(args.model_file)
    table = getattr(model, "embedding", None)
    weights = table.weight.value if hasattr(table, "weight") else getattr(table, "value", None)
    if weights is None:
        raise ConfigurationError(f"model type {model.model_type!r} has no embedding table")
    vocab = model.vocab
    prov = _model_provenance(args.model_file)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# seed={prov.get('seed')}\n# config_digest={prov.get('config_digest')}\n")
        w = csv.writer(fh, lineterminator="\n")
        for row in range(len(vocab)):
            ns, code = vocab.entry(row)
            w.writerow([ns, code, *(repr(float(x)) for x in weights[row])])
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="carealgebra", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="write a synthetic cohort")
    g.add_argument("--patients", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--preset", choices=("default", "large"), default="default")
    g.add_argument("--prevalence", type=float)
    g.set_defaults(func=cmd_gen_synth)

    def config_args(sp):
        sp.add_argument("--config", help="JSON file of flat key-value settings")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="train a model and save it")
    t.add_argument("--data", required=True)
    t.add_argument("--model", choices=MODEL_KINDS, required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--history-out")
    config_args(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a saved model on a cohort")
    e.add_argument("--data", required=True)
    e.add_argument("--model-file", required=True)
    e.add_argument("--metrics-out", default="-")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cv", help="k-fold cross-validation")
    c.add_argument("--data", required=True)
    c.add_argument("--model", choices=MODEL_KINDS, required=True)
    c.add_argument("--folds", type=int, default=5)
    c.add_argument("--metrics-out", default="-")
    c.add_argument("--jobs", type=int, default=1)
    config_args(c)
    c.set_defaults(func=cmd_cv)

    tr = sub.add_parser("trace", help="per-visit illness states and risk for one patient")
    tr.add_argument("--model-file", required=True)
    tr.add_argument("--data", required=True)
    tr.add_argument("--patient", required=True)
    tr.add_argument("--out", default="-")
    tr.set_defaults(func=cmd_trace)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.set_defaults(func=cmd_gradcheck)

    ex = sub.add_parser("embed-export", help="write code embeddings as CSV")
    ex.add_argument("--model-file", required=True)
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_embed_export)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CareAlgebraError, OSError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
