"""Command line entry point.

Subcommands cover the staged pipeline (synth, preprocess, extract, train,
eval), the full experiment sweep (run-all), and report re-rendering
(report).  Exit codes: 0 success, 1 usage/config error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import folds_from_families, generate_synthetic_dataset, load_manifest
from .errors import ConfigError, DataError, NumericError
from .evaluate import EvalReport, FeatureSet, fit_fold, model_from_basis, score_fold
from .gabor import load_feature_batch, save_feature_batch
from .pipeline import (
    MethodResult,
    RunConfig,
    atomic_write_text,
    extract_features,
    load_config,
    render_report_csv,
    render_report_from_csv,
    render_report_text,
    resolve_manifest,
    run_all,
)
from .preprocess import METHODS, PreprocConfig, preprocess_pipeline, save_image
from .txqda import load_basis, save_basis


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; route through ConfigError
    # so usage problems map to exit code 1 instead.
    def error(self, message):
        raise ConfigError(message)


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.eval = replace(cfg.eval, seed=args.seed)
    if getattr(args, "k", None) is not None:
        cfg.eval = replace(cfg.eval, k=args.k)
    return cfg


def _single_method(args, cfg: RunConfig) -> str:
    method = getattr(args, "method", None) or cfg.methods[0]
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    return method


def _cmd_synth(args) -> int:
    manifest = generate_synthetic_dataset(
        n_families=args.families,
        image_size=(args.size[0], args.size[1]),
        kin_noise=args.kin_noise,
        seed=args.seed,
        out_dir=args.out,
        illum_strength=args.illum,
    )
    print(manifest.root_dir / "manifest.csv")
    return 0


def _cmd_preprocess(args) -> int:
    manifest = load_manifest(args.manifest)
    pre = PreprocConfig.for_method(args.method)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    debug_dir = out_dir / "stages" if args.debug else None
    for entry in manifest.entries:
        for path in (entry.parent_path, entry.child_path):
            processed = preprocess_pipeline(path, pre, debug_dir)
            save_image(out_dir / f"{path.stem}.png", processed)
    print(out_dir)
    return 0


_META_NAME = "features_meta.json"


def _cmd_extract(args) -> int:
    cfg = _load_cfg(args)
    method = _single_method(args, cfg)
    manifest = resolve_manifest(cfg)
    features = extract_features(manifest, method, cfg)
    out_dir = Path(args.out or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_feature_batch(out_dir / "features_parent.bin", features.parents)
    save_feature_batch(out_dir / "features_child.bin", features.children)
    meta = {
        "format_version": 1,
        "method": method,
        "families": [int(f) for f in features.families],
        "block_pixels": int(features.block_pixels),
        "mode_dims": [int(v) for v in features.mode_dims],
        "config": cfg.echo(),
    }
    atomic_write_text(out_dir / _META_NAME, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(out_dir)
    return 0


def _load_features(features_dir) -> tuple[FeatureSet, dict]:
    features_dir = Path(features_dir)
    meta_path = features_dir / _META_NAME
    if not meta_path.is_file():
        raise DataError(f"missing {meta_path}; run the extract stage first")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("format_version") != 1:
        raise DataError(f"{meta_path}: unsupported metadata version {meta.get('format_version')}")
    parents = load_feature_batch(features_dir / "features_parent.bin")
    children = load_feature_batch(features_dir / "features_child.bin")
    features = FeatureSet(
        parents=parents,
        children=children,
        families=np.asarray(meta["families"], dtype=np.int64),
        block_pixels=int(meta["block_pixels"]),
    )
    return features, meta


def _cmd_train(args) -> int:
    cfg = _load_cfg(args)
    features, _ = _load_features(args.features)
    folds = folds_from_families(features.families, cfg.eval.k, cfg.eval.seed)
    d_max = max(cfg.txqda.d_sweep)
    tx = cfg.txqda.config_for(features.mode_dims, d_max)
    out_dir = Path(args.out or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for fold in range(folds.k):
        model = fit_fold(
            features, folds, fold, tx, cfg.eval.seed, cfg.eval.negatives_per_positive
        )
        save_basis(out_dir / f"basis_fold{fold}.npz", model.basis)
    print(out_dir)
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    features, meta = _load_features(args.features)
    method = args.method or meta.get("method") or cfg.methods[0]
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    folds = folds_from_families(features.families, cfg.eval.k, cfg.eval.seed)
    bases_dir = Path(args.bases)
    d_sweep = sorted(set(int(d) for d in cfg.txqda.d_sweep))
    reports: dict[int, EvalReport] = {}
    models = []
    for fold in range(folds.k):
        basis_path = bases_dir / f"basis_fold{fold}.npz"
        if not basis_path.is_file():
            raise DataError(f"missing basis file {basis_path}; run the train stage first")
        basis = load_basis(basis_path)
        models.append(
            model_from_basis(
                features, folds, fold, basis, cfg.eval.seed, cfg.eval.negatives_per_positive
            )
        )
    echo = cfg.echo()
    for d in d_sweep:
        results = [score_fold(model, d) for model in models]
        accs = [r.accuracy for r in results]
        reports[d] = EvalReport(
            per_fold_accuracy=accs,
            mean_accuracy=float(np.mean(accs)),
            threshold_per_fold=[r.threshold for r in results],
            config_echo=echo,
            fold_results=results,
        )
    result = MethodResult(method=method, reports=reports)
    out_dir = Path(args.out or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "report.txt", render_report_text([result], echo))
    atomic_write_text(out_dir / "report.csv", render_report_csv([result], echo))
    print(out_dir / "report.csv")
    return 0


def _cmd_run_all(args) -> int:
    cfg = _load_cfg(args)
    run_all(cfg, quiet=args.quiet)
    out_dir = Path(cfg.output_dir)
    print(out_dir / "report.txt")
    print(out_dir / "report.csv")
    return 0


def _cmd_report(args) -> int:
    text = render_report_from_csv(args.csv)
    if args.out:
        atomic_write_text(args.out, text)
        print(args.out)
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kinverify", description=__doc__)
    parser.add_argument("--version", action="version", version=f"kinverify {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic family dataset")
    p.add_argument("--families", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, nargs=2, default=(200, 200), metavar=("H", "W"))
    p.add_argument("--kin-noise", dest="kin_noise", type=float, default=0.2)
    p.add_argument("--illum", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("preprocess", help="preprocess every manifest image")
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", choices=METHODS, default="retinex+mask")
    p.add_argument("--out", required=True)
    p.add_argument("--debug", action="store_true", help="also write per-stage images")
    p.set_defaults(func=_cmd_preprocess)

    for name, func, needs in (
        ("extract", _cmd_extract, ()),
        ("train", _cmd_train, ("features",)),
        ("eval", _cmd_eval, ("features", "bases")),
        ("run-all", _cmd_run_all, ()),
    ):
        p = sub.add_parser(name, help=f"{name} stage")
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--k", type=int, default=None)
        if name in ("extract", "eval"):
            p.add_argument("--method", choices=METHODS, default=None)
        if name == "run-all":
            p.add_argument("--quiet", action="store_true")
        for dep in needs:
            p.add_argument(f"--{dep}", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="re-render tables from a report CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
