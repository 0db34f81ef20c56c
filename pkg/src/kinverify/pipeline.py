"""Experiment wiring: run configuration, feature extraction over a
manifest, the method-by-d sweep, and report rendering.

A run configuration is a JSON file with sections ``dataset``,
``preprocess``, ``features``, ``txqda``, ``eval`` plus ``output_dir`` and
``methods``.  Every effective value, defaults included, is echoed into the
reports so a run is reproducible from its outputs.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    FoldAssignment,
    PairManifest,
    generate_synthetic_dataset,
    load_manifest,
    make_folds,
)
from .errors import ConfigError, DataError
from .evaluate import EvalReport, FeatureSet, fit_fold, roc_points, score_fold
from .gabor import BlockGrid, GaborBank, default_bank, extract_feature_tensor
from .preprocess import METHODS, PreprocConfig, preprocess_pipeline
from .txqda import TxqdaConfig

DEFAULT_D_SWEEP = (150, 160, 170, 180, 190, 200)


@dataclass(frozen=True)
class PreprocParams:
    retinex_sigma: float = 15.0
    mask_fill: float = 0.0

    def __post_init__(self):
        if self.retinex_sigma <= 0:
            raise ConfigError("preprocess.retinex_sigma must be positive")


@dataclass(frozen=True)
class FeatureParams:
    n_scales: int = 6
    grid_rows: int = 4
    grid_cols: int = 4
    orientations_deg: tuple[float, ...] = (45.0, 67.5, 90.0, 112.5)
    psis_deg: tuple[float, ...] = (0.0, 90.0)
    gamma: float = 1.0
    base_wavelength: float = 16.0
    wavelength_ratio: float = math.sqrt(2.0)
    kernel_radius_factor: float = 2.5
    conv_method: str = "auto"

    def __post_init__(self):
        if self.n_scales < 1 or self.grid_rows < 1 or self.grid_cols < 1:
            raise ConfigError("features.n_scales and grid dimensions must be positive")
        if self.conv_method not in ("auto", "direct", "fft"):
            raise ConfigError("features.conv_method must be auto, direct, or fft")
        if self.base_wavelength <= 0 or self.wavelength_ratio <= 0 or self.gamma <= 0:
            raise ConfigError("features wavelengths and gamma must be positive")

    def bank(self) -> GaborBank:
        return default_bank(
            n_scales=self.n_scales,
            orientations_deg=self.orientations_deg,
            psis_deg=self.psis_deg,
            gamma=self.gamma,
            base_wavelength=self.base_wavelength,
            wavelength_ratio=self.wavelength_ratio,
            kernel_radius_factor=self.kernel_radius_factor,
        )


@dataclass(frozen=True)
class EvalParams:
    k: int = 5
    seed: int = 42
    negatives_per_positive: int = 1

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError("eval.k must be at least 2")
        if self.seed < 0:
            raise ConfigError("eval.seed must be non-negative")
        if self.negatives_per_positive < 1:
            raise ConfigError("eval.negatives_per_positive must be at least 1")


@dataclass(frozen=True)
class SynthParams:
    families: int = 50
    height: int = 200
    width: int = 200
    kin_noise: float = 0.2
    illum_strength: float = 0.3
    seed: int = 7
    out_dir: str = "synthetic"

    def __post_init__(self):
        if self.families < 2:
            raise ConfigError("synthetic.families must be at least 2")
        if self.height < 64 or self.width < 64:
            raise ConfigError("synthetic image size must be at least 64x64")
        if not 0.0 <= self.kin_noise <= 1.0:
            raise ConfigError("synthetic.kin_noise must lie in [0, 1]")
        if self.illum_strength < 0:
            raise ConfigError("synthetic.illum_strength must be non-negative")
        if self.seed < 0:
            raise ConfigError("synthetic.seed must be non-negative")


@dataclass(frozen=True)
class TxqdaParams:
    target_mode1: int = 64  # bin-axis reduction; other modes stay full
    iteration_max: int = 2
    eps_stop: float = 1e-3
    reg: float = 1e-3
    residual_tol: float = 1e-8
    d: int = 190
    d_sweep: tuple[int, ...] = DEFAULT_D_SWEEP

    def __post_init__(self):
        if self.target_mode1 < 1:
            raise ConfigError("txqda.target_mode1 must be positive")
        if self.iteration_max < 1:
            raise ConfigError("txqda.iteration_max must be at least 1")
        if self.eps_stop <= 0 or self.residual_tol <= 0:
            raise ConfigError("txqda tolerances must be positive")
        if self.reg < 0:
            raise ConfigError("txqda.reg must be non-negative")
        if self.d < 1 or any(d < 1 for d in self.d_sweep):
            raise ConfigError("txqda feature counts must be positive")

    def config_for(self, mode_dims: tuple[int, ...], d: int) -> TxqdaConfig:
        target = (min(self.target_mode1, mode_dims[0]),) + tuple(mode_dims[1:])
        return TxqdaConfig(
            target_dims=target,
            iteration_max=self.iteration_max,
            eps_stop=self.eps_stop,
            reg=self.reg,
            d=d,
            residual_tol=self.residual_tol,
        )


@dataclass
class RunConfig:
    manifest: str | None = None
    synthetic: SynthParams | None = None
    methods: tuple[str, ...] = METHODS
    preproc: PreprocParams = field(default_factory=PreprocParams)
    features: FeatureParams = field(default_factory=FeatureParams)
    txqda: TxqdaParams = field(default_factory=TxqdaParams)
    eval: EvalParams = field(default_factory=EvalParams)
    output_dir: str = "out"

    def __post_init__(self):
        if (self.manifest is None) == (self.synthetic is None):
            raise ConfigError("dataset section must give exactly one of manifest/synthetic")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
        if not self.txqda.d_sweep:
            raise ConfigError("txqda.d_sweep must not be empty")

    def echo(self) -> dict:
        """Every effective parameter, defaults included."""
        return {
            "kinverify_version": __version__,
            "dataset": (
                {"manifest": self.manifest}
                if self.manifest is not None
                else {"synthetic": asdict(self.synthetic)}
            ),
            "methods": list(self.methods),
            "preprocess": asdict(self.preproc),
            "features": {
                **asdict(self.features),
                "orientations_deg": list(self.features.orientations_deg),
                "psis_deg": list(self.features.psis_deg),
            },
            "txqda": {**asdict(self.txqda), "d_sweep": list(self.txqda.d_sweep)},
            "eval": asdict(self.eval),
            "output_dir": self.output_dir,
        }


def _build_section(cls, data: dict, section: str, base=None):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    known = {f.name for f in cls.__dataclass_fields__.values()} if hasattr(cls, "__dataclass_fields__") else set()
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
    coerced = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    try:
        return replace(base, **coerced) if base is not None else cls(**coerced)
    except TypeError as exc:
        raise ConfigError(f"bad config section {section!r}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    known = {"dataset", "methods", "preprocess", "features", "txqda", "eval", "output_dir"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    dataset = data.get("dataset", {})
    if not isinstance(dataset, dict) or len(dataset) != 1 or next(iter(dataset)) not in (
        "manifest",
        "synthetic",
    ):
        raise ConfigError("dataset section must be {'manifest': path} or {'synthetic': {...}}")
    manifest = dataset.get("manifest")
    synthetic = (
        _build_section(SynthParams, dataset["synthetic"], "dataset.synthetic")
        if "synthetic" in dataset
        else None
    )
    return RunConfig(
        manifest=manifest,
        synthetic=synthetic,
        methods=tuple(data.get("methods", METHODS)),
        preproc=_build_section(PreprocParams, data.get("preprocess", {}), "preprocess"),
        features=_build_section(FeatureParams, data.get("features", {}), "features"),
        txqda=_build_section(TxqdaParams, data.get("txqda", {}), "txqda"),
        eval=_build_section(EvalParams, data.get("eval", {}), "eval"),
        output_dir=str(data.get("output_dir", "out")),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def resolve_manifest(cfg: RunConfig, base_dir=None) -> PairManifest:
    """Load the configured manifest, generating the synthetic set if asked."""
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    if cfg.manifest is not None:
        return load_manifest(base / cfg.manifest)
    sp = cfg.synthetic
    return generate_synthetic_dataset(
        n_families=sp.families,
        image_size=(sp.height, sp.width),
        kin_noise=sp.kin_noise,
        seed=sp.seed,
        out_dir=base / sp.out_dir,
        illum_strength=sp.illum_strength,
    )


def preproc_config(cfg: RunConfig, method: str) -> PreprocConfig:
    return PreprocConfig.for_method(
        method,
        retinex_sigma=cfg.preproc.retinex_sigma,
        mask_fill=cfg.preproc.mask_fill,
    )


def extract_features(
    manifest: PairManifest, method: str, cfg: RunConfig, debug_dir=None
) -> FeatureSet:
    """Preprocess and featurize every manifest pair for one method."""
    pre = preproc_config(cfg, method)
    bank = cfg.features.bank()
    grid = BlockGrid.for_shape(
        pre.cropped_shape, cfg.features.grid_rows, cfg.features.grid_cols
    )
    parents = []
    children = []
    for entry in manifest.entries:
        p_img = preprocess_pipeline(entry.parent_path, pre, debug_dir)
        c_img = preprocess_pipeline(entry.child_path, pre, debug_dir)
        parents.append(extract_feature_tensor(p_img, bank, grid, cfg.features.conv_method).data)
        children.append(extract_feature_tensor(c_img, bank, grid, cfg.features.conv_method).data)
    return FeatureSet(
        parents=np.stack(parents),
        children=np.stack(children),
        families=manifest.families,
        block_pixels=grid.block_pixels,
    )


@dataclass
class MethodResult:
    method: str
    reports: dict[int, EvalReport]  # keyed by d

    @property
    def best_d(self) -> int:
        # ties break toward the smaller d
        return max(sorted(self.reports), key=lambda d: self.reports[d].mean_accuracy)

    @property
    def best_report(self) -> EvalReport:
        return self.reports[self.best_d]


def run_method(features: FeatureSet, folds: FoldAssignment, cfg: RunConfig, method: str) -> MethodResult:
    """Cross-validate one method across the whole d sweep.

    The basis is trained once per fold at the largest d; smaller d values
    reuse it, which is exact because ranked coordinates are a prefix.
    """
    d_sweep = sorted(set(int(d) for d in cfg.txqda.d_sweep))
    tx = cfg.txqda.config_for(features.mode_dims, max(d_sweep))
    models = [
        fit_fold(features, folds, fold, tx, cfg.eval.seed, cfg.eval.negatives_per_positive)
        for fold in range(folds.k)
    ]
    echo = cfg.echo()
    reports: dict[int, EvalReport] = {}
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
    return MethodResult(method=method, reports=reports)


@dataclass
class RunAllResult:
    method_results: list[MethodResult]
    config_echo: dict
    report_txt: str
    report_csv: str


def _fmt_pct(value: float) -> str:
    return f"{100.0 * value:.2f}"


def render_report_text(results: list[MethodResult], echo: dict) -> str:
    lines = ["kinship verification report", "=" * 27, ""]
    lines.append("[configuration]")
    lines.append(json.dumps(echo, indent=2, sort_keys=True))
    lines.append("")
    for mr in results:
        lines.append(f"[method: {mr.method}]")
        lines.append(f"{'features kept':>14}  {'mean accuracy %':>16}  fold accuracies %")
        for d in sorted(mr.reports):
            rep = mr.reports[d]
            folds = " ".join(_fmt_pct(a) for a in rep.per_fold_accuracy)
            lines.append(f"{d:>14d}  {_fmt_pct(rep.mean_accuracy):>16}  {folds}")
        lines.append("")
    lines.append("[best of each method]")
    lines.append(f"{'method':<24}{'features kept':>14}  {'mean accuracy %':>16}")
    for mr in results:
        lines.append(
            f"{mr.method:<24}{mr.best_d:>14d}  {_fmt_pct(mr.best_report.mean_accuracy):>16}"
        )
    lines.append("")
    for mr in results:
        rep = mr.best_report
        scores = np.concatenate([r.test_scores for r in rep.fold_results])
        labels = np.concatenate([r.test_labels for r in rep.fold_results])
        lines.append(f"[roc: {mr.method} at d={mr.best_d}] pooled test scores")
        lines.append(f"{'threshold':>12}  {'tpr':>8}  {'fpr':>8}")
        for t, tpr, fpr in roc_points(scores, labels):
            lines.append(f"{t:>12.6f}  {tpr:>8.4f}  {fpr:>8.4f}")
        lines.append("")
    return "\n".join(lines) + "\n"


CSV_HEADER = "method,d,fold,n_test,threshold,accuracy"


def render_report_csv(results: list[MethodResult], echo: dict) -> str:
    lines = ["# kinverify report v1"]
    lines.append("# config: " + json.dumps(echo, sort_keys=True, separators=(",", ":")))
    lines.append(CSV_HEADER)
    for mr in results:
        for d in sorted(mr.reports):
            for r in mr.reports[d].fold_results:
                lines.append(
                    f"{mr.method},{d},{r.fold},{len(r.test_labels)},"
                    f"{float(r.threshold)!r},{float(r.accuracy)!r}"
                )
    return "\n".join(lines) + "\n"


def atomic_write_text(path, text: str) -> None:
    """Write-temp-then-rename so partially written reports never appear."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def run_all(cfg: RunConfig, base_dir=None, quiet: bool = True) -> RunAllResult:
    """Run every configured method over the d sweep and write both reports."""
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    manifest = resolve_manifest(cfg, base)
    folds = make_folds(manifest, cfg.eval.k, cfg.eval.seed)
    results = []
    for method in cfg.methods:
        if not quiet:
            print(f"extracting features: {method}")
        features = extract_features(manifest, method, cfg)
        results.append(run_method(features, folds, cfg, method))
    echo = cfg.echo()
    txt = render_report_text(results, echo)
    csv_text = render_report_csv(results, echo)
    out_dir = base / cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "report.txt", txt)
    atomic_write_text(out_dir / "report.csv", csv_text)
    return RunAllResult(
        method_results=results, config_echo=echo, report_txt=txt, report_csv=csv_text
    )


def parse_report_csv(path):
    """Read back a report CSV: (config_echo, rows as dicts)."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read report CSV {path}: {exc}") from exc
    echo = {}
    rows = []
    header = None
    for line in lines:
        if line.startswith("# config: "):
            echo = json.loads(line[len("# config: ") :])
            continue
        if line.startswith("#") or not line.strip():
            continue
        if header is None:
            header = line.split(",")
            if header != CSV_HEADER.split(","):
                raise DataError(f"{path}: unexpected CSV header {line!r}")
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise DataError(f"{path}: malformed CSV row {line!r}")
        rows.append(dict(zip(header, parts)))
    if header is None:
        raise DataError(f"{path}: no CSV header found")
    return echo, rows


def render_report_from_csv(path) -> str:
    """Re-render the per-method tables from a report CSV (no ROC section)."""
    echo, rows = parse_report_csv(path)
    lines = ["kinship verification report (from CSV)", "=" * 38, ""]
    if echo:
        lines.append("[configuration]")
        lines.append(json.dumps(echo, indent=2, sort_keys=True))
        lines.append("")
    by_method: dict[str, dict[int, list[float]]] = {}
    order: list[str] = []
    for row in rows:
        method = row["method"]
        if method not in by_method:
            by_method[method] = {}
            order.append(method)
        by_method[method].setdefault(int(row["d"]), []).append(float(row["accuracy"]))
    best = {}
    for method in order:
        lines.append(f"[method: {method}]")
        lines.append(f"{'features kept':>14}  {'mean accuracy %':>16}  fold accuracies %")
        for d in sorted(by_method[method]):
            accs = by_method[method][d]
            mean = float(np.mean(accs))
            lines.append(
                f"{d:>14d}  {_fmt_pct(mean):>16}  " + " ".join(_fmt_pct(a) for a in accs)
            )
            if method not in best or mean > best[method][1]:
                best[method] = (d, mean)
        lines.append("")
    lines.append("[best of each method]")
    lines.append(f"{'method':<24}{'features kept':>14}  {'mean accuracy %':>16}")
    for method in order:
        d, mean = best[method]
        lines.append(f"{method:<24}{d:>14d}  {_fmt_pct(mean):>16}")
    lines.append("")
    return "\n".join(lines) + "\n"
