"""Command-line entry points: synth, train, eval, export-attention.

Every command is deterministic given its inputs; all randomness flows from
the seed in the config (or the --seed override).  Exit codes: 0 success,
1 configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import (ConfigError, DataSection, RunConfig, load_run_config,
                     write_resolved_config)
from .data import (DataError, PhenoStats, SyntheticSpec, center_segment,
                   compute_pheno_stats, encode_phenotype, generate_synthetic,
                   load_dataset, load_phenotypic_table, load_subject_series,
                   split_train_val, write_dataset)
from .attention import export_scores
from .model import init_parameters, load_checkpoint, model_forward, save_checkpoint
from .rng import RngStreams
from .tensor import DegenerateMaskError, NumericsError
from .training import (center_samples, metrics_report, predict_proba,
                       save_history, train)


class _Parser(argparse.ArgumentParser):
    """Routes argparse usage errors through the config-error exit code."""

    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="roiformer",
                     description="ROI time-series attention classifier")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="JSON file with synthetic spec fields")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the generator seed")
    p.add_argument("--subjects", type=int, help="number of subjects")
    p.add_argument("--t-full", type=int, help="time points per subject")
    p.add_argument("--rois", type=int, help="number of ROIs")
    p.add_argument("--signal-rois", type=int,
                   help="signal carried by the first N ROIs")
    p.add_argument("--effect", type=float, help="signal effect size")
    p.add_argument("--noise", type=float, help="noise standard deviation")
    p.add_argument("--balance", type=float, help="positive-class probability")

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.add_argument("--quiet", action="store_true", help="suppress progress lines")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--series-dir", required=True)
    p.add_argument("--pheno-table", required=True)
    p.add_argument("--out", required=True, help="report file to write")
    p.add_argument("--split", choices=("all", "val"), default="all",
                   help="evaluate everything or only the stored validation ids")
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("export-attention",
                       help="write per-(layer, head) attention score matrices")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--series", required=True, help="one subject series file")
    p.add_argument("--pheno-table", required=True)
    p.add_argument("--out", required=True, help="output directory")
    return parser


# -- synth ----------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec_dict: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path) as fh:
                spec_dict = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(spec_dict, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    flag_map = {"subjects": "n_subjects", "t_full": "t_full", "rois": "n_rois",
                "effect": "effect_size", "noise": "noise_std",
                "balance": "balance", "seed": "seed"}
    for flag, field in flag_map.items():
        value = getattr(args, flag)
        if value is not None:
            spec_dict[field] = value
    if args.signal_rois is not None:
        spec_dict["signal_rois"] = list(range(args.signal_rois))
    try:
        spec = SyntheticSpec.from_dict(spec_dict)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    series_list, records = generate_synthetic(spec)
    write_dataset(out_dir, series_list, records)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump({"spec": spec.to_dict(), "seed": spec.seed}, fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
    print(f"wrote {spec.n_subjects} subjects to {out_dir}")
    return 0


# -- train ----------------------------------------------------------------------


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    if run.data is None:
        raise ConfigError("train requires a data section "
                          "(series_dir, pheno_table, out_dir)")
    if args.seed is not None:
        run = dataclasses.replace(
            run, train=dataclasses.replace(run.train, seed=args.seed))
    if args.out is not None:
        run = dataclasses.replace(
            run, data=dataclasses.replace(run.data, out_dir=args.out))
    model_cfg, train_cfg, data_cfg = run.model, run.train, run.data

    subjects = load_dataset(data_cfg.series_dir, data_cfg.pheno_table,
                            min_length=train_cfg.segment_length)
    by_id = {s.subject_id: s for s in subjects}
    streams = RngStreams(train_cfg.seed)
    try:
        train_ids, val_ids = split_train_val(list(by_id), data_cfg.val_frac,
                                             streams.stream("split"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    train_subjects = [by_id[i] for i in train_ids]
    val_subjects = [by_id[i] for i in val_ids]
    stats = compute_pheno_stats([s.record for s in train_subjects])
    params = init_parameters(model_cfg, streams.stream("init"))

    log = None if args.quiet else lambda line: print(line, flush=True)
    try:
        ckpt, history = train(params, train_subjects, val_subjects, model_cfg,
                              train_cfg, stats, log=log)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    out_dir = Path(data_cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    extra = {"seed": train_cfg.seed,
             "train_config": train_cfg.to_dict(),
             "pheno_stats": stats.to_dict(),
             "train_ids": train_ids,
             "val_ids": val_ids,
             "best_epoch": ckpt.epoch,
             "val_report": ckpt.val_report.to_dict()}
    save_checkpoint(out_dir / "checkpoint.npz", ckpt.params, model_cfg, extra)
    save_history(out_dir / "history.tsv", history)
    write_resolved_config(out_dir / "resolved_config.json", run)
    auc = ("NA" if not ckpt.val_report.auc_defined
           else f"{ckpt.val_report.auc:.4f}")
    print(f"best epoch {ckpt.epoch}: val acc {ckpt.val_report.acc:.4f} "
          f"auc {auc}; artifacts in {out_dir}")
    return 0


# -- eval -----------------------------------------------------------------------


def _check_rois(model_cfg, subjects) -> None:
    for s in subjects:
        if s.series.n_rois != model_cfg.n_rois:
            raise DataError(f"checkpoint expects {model_cfg.n_rois} ROIs but "
                            f"subject {s.subject_id} has {s.series.n_rois}")


def cmd_eval(args) -> int:
    params, model_cfg, extra = load_checkpoint(args.checkpoint)
    if "pheno_stats" not in extra:
        raise ConfigError(f"{args.checkpoint}: no phenotype statistics stored; "
                          "cannot encode phenotypes consistently")
    stats = PhenoStats.from_dict(extra["pheno_stats"])
    subjects = load_dataset(args.series_dir, args.pheno_table,
                            min_length=model_cfg.segment_len)
    if args.split == "val":
        if "val_ids" not in extra:
            raise ConfigError(f"{args.checkpoint}: no validation ids stored")
        wanted = set(extra["val_ids"])
        missing = wanted - {s.subject_id for s in subjects}
        if missing:
            raise DataError(f"validation subjects absent from dataset: "
                            f"{sorted(missing)}")
        subjects = [s for s in subjects if s.subject_id in wanted]
    _check_rois(model_cfg, subjects)

    samples = center_samples(subjects, stats, model_cfg.segment_len)
    probs = [predict_proba(params, model_cfg, s) for s in samples]
    report = metrics_report(probs, [s.label for s in samples],
                            threshold=args.threshold)
    payload = report.to_dict()
    payload["n"] = report.n
    payload["subjects"] = [{"subject_id": s.subject_id, "label": smp.label,
                            "prob": p}
                           for s, smp, p in zip(subjects, samples, probs)]
    out_path = Path(args.out)
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    auc = "NA" if not report.auc_defined else f"{report.auc:.4f}"
    print(f"n={report.n} acc {report.acc:.4f} spe {report.spe:.4f} "
          f"sen {report.sen:.4f} auc {auc}; report at {out_path}")
    return 0


# -- export-attention -------------------------------------------------------------


def cmd_export_attention(args) -> int:
    params, model_cfg, extra = load_checkpoint(args.checkpoint)
    series = load_subject_series(args.series)
    if series.n_rois != model_cfg.n_rois:
        raise DataError(f"checkpoint expects {model_cfg.n_rois} ROIs but "
                        f"{args.series} has {series.n_rois}")
    records = {r.subject_id: r for r in load_phenotypic_table(args.pheno_table)}
    if series.subject_id not in records:
        raise DataError(f"no phenotype row for subject {series.subject_id!r} "
                        f"in {args.pheno_table}")
    if "pheno_stats" not in extra:
        raise ConfigError(f"{args.checkpoint}: no phenotype statistics stored")
    stats = PhenoStats.from_dict(extra["pheno_stats"])
    pheno = encode_phenotype(records[series.subject_id], stats)

    segment = center_segment(series, model_cfg.segment_len)
    result = model_forward(params, model_cfg, segment, pheno, mode="eval")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = export_scores(result.traces, out_dir)
    print(f"wrote {len(paths)} score matrices to {out_dir}")
    return 0


# -- entry point -------------------------------------------------------------------


_COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
             "export-attention": cmd_export_attention}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericsError, DegenerateMaskError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
