"""Command-line entry points: synth, preprocess, train, eval, report.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path


from .config import OUTPUT_ROOT_ENV, ExperimentConfig, default_output_root, parse_value
from .errors import (ConfigError, InvalidParams, InvariantViolation, ModeMismatch,
                     NonFiniteLoss, RegistrationDiverged, SocketfitError)

log = logging.getLogger("socketfit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _dump(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- synth -------------------------------------------------------------------

def cmd_synth(args):
    from .synth import generate_dataset

    out = Path(args.out) if args.out else default_output_root() / "synth"
    manifest = generate_dataset(args.n, out, seed=args.seed)
    print(f"wrote {args.n} pairs, manifest {manifest}")
    return EXIT_OK


# -- preprocess --------------------------------------------------------------

def cmd_preprocess(args):
    from .dataset import build_dataset
    from .preprocess import LandmarkSamplerConfig, load_manifest

    entries = load_manifest(args.manifest)
    out = Path(args.out) if args.out else default_output_root() / "preprocessed"
    out.mkdir(parents=True, exist_ok=True)
    sampler = None
    if args.variants > 0:
        sampler = LandmarkSamplerConfig(count=args.variants, seed=args.seed)
    data, logs = build_dataset(entries, sampler=sampler)
    data.save(out / "dataset.npz")
    with open(out / "residuals.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "status", "residual_stump", "residual_socket", "message"])
        for s in logs:
            w.writerow([s.id, s.status,
                        "" if s.residual_stump is None else repr(s.residual_stump),
                        "" if s.residual_socket is None else repr(s.residual_socket), s.message])
    failures = [asdict(s) for s in logs if s.status != "ok"]
    _dump(out / "failures.json", {"failed": len(failures), "samples": failures})
    _dump(out / "preprocess_config.json",
          {"manifest": str(args.manifest), "variants": args.variants, "seed": args.seed})
    print(f"preprocessed {len(data)} of {len(entries)} samples into {out / 'dataset.npz'}; "
          f"{len(failures)} failed")
    return EXIT_OK if len(data) else EXIT_DATA


# -- train -------------------------------------------------------------------

def _experiment_config(args) -> ExperimentConfig:
    base = ExperimentConfig.load(args.config).to_dict() if args.config else {}
    for key in ("dataset", "method", "mode", "representation", "folds", "seed", "out",
                "augment", "budget", "holdout"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    params = dict(base.get("params", {}))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        params[k] = parse_value(v)
    base["params"] = params
    if base.get("dataset"):
        base["dataset"] = str(base["dataset"])
    cfg = ExperimentConfig.from_dict(base)
    return replace(cfg, out=str(cfg.output_dir()))


def run_experiment(cfg: ExperimentConfig):
    """Cross-validate ``cfg`` and write models, loss logs and the report."""
    from .dataset import CorrespondedDataset
    from .evaluation import write_report
    from .models.harness import combine_folds, cross_validate, holdout_validate

    cfg.resolved()
    algo = cfg.algorithm()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    data = CorrespondedDataset.load(dataset_file(cfg.dataset))
    if cfg.holdout > 0:
        reports = holdout_validate(data, algo, cfg.holdout, cfg.seed, out_dir=out / "models")
    else:
        reports = cross_validate(data, algo, cfg.folds, cfg.seed, out_dir=out / "models")
    report = combine_folds(reports)
    write_report(report, out / "report.json", config=cfg.to_dict())
    return report


def dataset_file(path) -> Path:
    p = Path(path)
    return p / "dataset.npz" if p.is_dir() else p


def cmd_train(args):
    cfg = _experiment_config(args)
    report = run_experiment(cfg)
    o = report.overall
    print(f"{cfg.name}: median {o['median']:.4f} mm (Q1 {o['q1']:.4f}, Q3 {o['q3']:.4f}); "
          f"report {Path(cfg.out) / 'report.json'}")
    return EXIT_OK


# -- eval --------------------------------------------------------------------

def evaluate_run(run_dir, out_dir=None, dataset=None):
    """Re-evaluate the saved fold models of a training run on their
    held-out folds and export best/median/worst distance maps.
    """
    from .dataset import CorrespondedDataset
    from .evaluation import (aggregate_reports, evaluate_prediction, export_distance_map,
                             select_cases, write_report)
    from .geometry import MeshIndex
    from .models.harness import TrainedModel, fold_indices, holdout_split, predict_sockets
    from .template import CorrespondedMesh

    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        raise FileNotFoundError(cfg_path)
    cfg = ExperimentConfig.load(cfg_path)
    if dataset is not None:
        cfg = replace(cfg, dataset=str(dataset))
    data = CorrespondedDataset.load(dataset_file(cfg.dataset))
    if cfg.holdout > 0:
        folds = [holdout_split(len(data), cfg.holdout, cfg.seed)[1]]
    else:
        folds = fold_indices(len(data), cfg.folds, cfg.seed)
    records, maps, preds = [], [], []
    for f, test_idx in enumerate(folds):
        model_dir = run_dir / "models" / f"fold{f}"
        model = TrainedModel.load(model_dir)
        test = data.subset(test_idx)
        for sid, pred, truth in zip(test.ids, predict_sockets(model, test.stumps), test.sockets):
            truth_mesh = CorrespondedMesh(truth)
            rec, dmap = evaluate_prediction(pred, truth_mesh, sid, f, MeshIndex(truth_mesh),
                                            return_map=True)
            records.append(rec)
            maps.append(dmap)
            preds.append(pred)
    report = aggregate_reports(records, None, cfg.method, cfg.mode, cfg.representation)
    out = Path(out_dir) if out_dir else run_dir / "eval"
    write_report(report, out / "report.json", config=cfg.to_dict())
    picks = select_cases([r.s2s_median for r in records])
    for label, i in zip(("best", "median", "worst"), picks):
        export_distance_map(preds[i], maps[i], out / f"distance_{label}_{records[i].id}.ply")
    return report


def cmd_eval(args):
    from .evaluation import write_comparison_csv

    reports = []
    out_root = Path(args.out) if args.out else None
    for run in args.runs:
        out = out_root / Path(run).name if out_root else None
        rep = evaluate_run(run, out, args.dataset)
        reports.append(rep)
        print(f"{rep.method}/{rep.mode}/{rep.representation}: median {rep.overall['median']:.4f} mm")
    if out_root:
        out_root.mkdir(parents=True, exist_ok=True)
        write_comparison_csv(reports, out_root / "comparison.csv")
        _dump(out_root / "comparison.json", {"rows": _rows(reports)})
    return EXIT_OK


def _rows(reports):
    from .evaluation import comparison_table

    return comparison_table(reports)


# -- report ------------------------------------------------------------------

def cmd_report(args):
    from .evaluation import load_report, write_comparison_csv

    reports = []
    for p in args.reports:
        p = Path(p)
        reports.append(load_report(p / "report.json" if p.is_dir() else p))
    rows = _rows(reports)
    for r in rows:
        print(f"{r['method']:<9} {r['mode']:<12} {r['representation']:<8} "
              f"median {r['median']:.4f}  ({r['q1']:.4f}, {r['q3']:.4f})  n={r['n']}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        if out.suffix == ".csv":
            write_comparison_csv(reports, out)
        else:
            _dump(out, {"rows": rows})
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="socketfit", description="Socket shape prediction pipeline. "
                f"Outputs default to ${OUTPUT_ROOT_ENV} (or ./runs).")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="generate a synthetic scan-pair corpus")
    s.add_argument("--n", type=_positive_int, default=118)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="correspond all pairs of a manifest to the template")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out")
    s.add_argument("--variants", type=int, default=0,
                   help="landmark-perturbation variants per sample (augmentation)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="cross-validate one method/mode/representation")
    s.add_argument("--config", help="experiment JSON; flags override its values")
    s.add_argument("--dataset")
    s.add_argument("--method", choices=("Forest", "Ffnn", "PointSet"))
    s.add_argument("--mode", choices=("Adaptations", "SocketShape"))
    s.add_argument("--representation", choices=("Raw", "Reduced"))
    s.add_argument("--folds", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--augment", type=int)
    s.add_argument("--budget", choices=("full", "reduced"))
    s.add_argument("--holdout", type=float,
                   help="test fraction of a single seeded split instead of k-fold CV")
    s.add_argument("--out")
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a method hyperparameter (repeatable)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="re-evaluate trained runs and export distance maps")
    s.add_argument("runs", nargs="+", help="training output directories")
    s.add_argument("--dataset", help="override the dataset recorded in each run")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="comparison table from report files")
    s.add_argument("reports", nargs="+", help="report.json files or run directories")
    s.add_argument("--out", help="write the table as .csv or .json")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidParams, InvariantViolation, ModeMismatch, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLoss, RegistrationDiverged, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SocketfitError, OSError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
