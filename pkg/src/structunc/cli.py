"""Command-line interface.

Subcommands: tune, measure, evaluate, curves, phantom, report. Settings come
from defaults, then an optional flat ``key = value`` config file, then flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .io import DatasetManifest, write_volume
from .metrics import DEFAULT_NDSC_R, DEFAULT_TPL_IOU
from .phantom import PhantomPackingError, PhantomSpec, phantom_suite, write_phantom_dataset
from .pipeline import (
    ConfigError,
    EvalConfig,
    dump_json,
    load_patient,
    measure,
    run_evaluate,
    write_csv,
    write_curves,
    write_report,
)
from .retention import BASELINES, DEFAULT_TAU
from .stats import BootstrapConfig, bootstrap_mean, spearman_rho
from .structural import LESION_MEASURES, PATIENT_MEASURES
from .voxel_measures import VOXEL_MEASURES
from .tuning import DEFAULT_CANDIDATES, sweep_probabilities
from .volume import DEFAULT_CONNECTIVITY, DEFAULT_MIN_LESION_VOXELS

log = logging.getLogger("structunc")

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}
_EXTRA_KEYS = {"manifest", "out_dir", "thresholds"}


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split(sep, 1))
        key = key.replace("-", "_")
        if key not in _EXTRA_KEYS and key not in {f.name for f in fields(EvalConfig)}:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _coerce(name: str, value):
    if value is None or not isinstance(value, str):
        return value
    if name == "member_alphas":
        return tuple(float(v) for v in value.replace(",", " ").split())
    if name == "filter_member_masks":
        low = value.lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    if name in ("connectivity", "min_lesion_voxels", "seed", "n_bootstrap", "jobs"):
        return int(value)
    if name in ("alpha", "tau", "tpl_iou", "ndsc_r", "confidence_level"):
        return float(value)
    return value


def resolve_settings(args) -> tuple[EvalConfig, dict]:
    """Merge defaults, config file and flags into an EvalConfig plus path settings."""
    merged: dict = {}
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config))
    for key in [f.name for f in fields(EvalConfig)] + sorted(_EXTRA_KEYS):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    try:
        values = {k: _coerce(k, v) for k, v in merged.items()}
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    thresholds = values.pop("thresholds", None)
    extras = {k: values.pop(k) for k in list(values) if k in _EXTRA_KEYS}
    if thresholds:
        tuned = json.loads(Path(thresholds).read_text())
        values.setdefault("alpha", tuned.get("alpha"))
        if tuned.get("member_alphas") is not None:
            values.setdefault("member_alphas", tuple(tuned["member_alphas"]))
    return EvalConfig(**values), extras


def _require(extras: dict, key: str) -> str:
    if not extras.get(key):
        raise ConfigError(f"--{key.replace('_', '-')} is required")
    return extras[key]


def _load_manifest(extras: dict) -> DatasetManifest:
    manifest = DatasetManifest.load(_require(extras, "manifest"))
    try:
        manifest.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return manifest


# ---------------------------------------------------------------- commands


def cmd_tune(args) -> int:
    cfg, extras = resolve_settings(args)
    manifest = _load_manifest(extras)
    out_dir = Path(_require(extras, "out_dir"))
    candidates = args.candidates or DEFAULT_CANDIDATES
    patients = [load_patient(p) for p in manifest.patients]
    gts = [p.gt for p in patients]
    brains = [p.brain for p in patients]
    kw = dict(min_lesion_voxels=cfg.min_lesion_voxels, connectivity=cfg.connectivity)

    ensemble = sweep_probabilities([p.ensemble.mean for p in patients], gts, brains, candidates, **kw)
    rows = [{"model": "ensemble", **r} for r in ensemble.rows()]
    member_best = []
    for m in range(manifest.n_members):
        res = sweep_probabilities([p.ensemble.members[m] for p in patients], gts, brains, candidates, **kw)
        member_best.append(res.best)
        rows += [{"model": f"member{m}", **r} for r in res.rows()]

    write_csv(out_dir / "threshold_sweep.csv", rows, ("model", "threshold", "mean_dsc"))
    dump_json(
        out_dir / "thresholds.json",
        {
            "alpha": ensemble.best,
            "alpha_mean_dsc": ensemble.best_dsc,
            "member_alphas": member_best,
            "candidates": list(ensemble.candidates),
            "min_lesion_voxels": cfg.min_lesion_voxels,
            "connectivity": cfg.connectivity,
            "dataset_id": manifest.dataset_id,
        },
    )
    print(f"alpha = {ensemble.best} (mean DSC {ensemble.best_dsc:.4f})")
    print("member alphas = " + ", ".join(str(a) for a in member_best))
    return 0


def cmd_measure(args) -> int:
    cfg, extras = resolve_settings(args)
    cfg.validate()
    manifest = _load_manifest(extras)
    out_dir = Path(_require(extras, "out_dir"))
    lesion_rows, patient_rows = [], []
    for entry in manifest.patients:
        patient = load_patient(entry)
        pm = measure(patient, cfg)
        if not args.no_maps:
            for name, umap in pm.voxel_maps.items():
                write_volume(out_dir / "maps" / patient.patient_id / f"{name}{args.map_suffix}", umap.astype(np.float32), patient.affine)
        for les in pm.lesions:
            lesion_rows.append(
                {
                    "patient_id": patient.patient_id,
                    "lesion_id": les.lesion_id,
                    "volume_voxels": les.volume_voxels,
                    **les.uncertainties,
                    "classification": les.classification,
                }
            )
        patient_rows.append({"patient_id": patient.patient_id, **pm.patient.scores})
    write_csv(out_dir / "lesions.csv", lesion_rows, ("patient_id", "lesion_id", "volume_voxels", *LESION_MEASURES, "classification"))
    write_csv(out_dir / "patient_uncertainty.csv", patient_rows, ("patient_id", *PATIENT_MEASURES))
    dump_json(out_dir / "measure_config.json", cfg.echo(manifest.n_members))
    print(f"measured {len(patient_rows)} patients, {len(lesion_rows)} lesions -> {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    cfg, extras = resolve_settings(args)
    manifest = DatasetManifest.load(_require(extras, "manifest"))
    out_dir = Path(_require(extras, "out_dir"))
    report = run_evaluate(manifest, cfg)
    write_report(report, out_dir)
    for failure in report["failures"]:
        log.warning("quarantined %s: %s", failure["patient_id"], failure["error"])
    print(render_summary([report]))
    return 0


def cmd_curves(args) -> int:
    cfg, extras = resolve_settings(args)
    manifest = DatasetManifest.load(_require(extras, "manifest"))
    out_dir = Path(_require(extras, "out_dir"))
    report = run_evaluate(manifest, cfg)
    paths = write_curves(report, out_dir)
    print(f"wrote {len(paths)} curve files to {out_dir}")
    return 0


def cmd_phantom(args) -> int:
    out_dir = Path(args.out_dir)
    base = PhantomSpec(
        shape=tuple(args.shape),
        n_lesions=args.n_lesions,
        lesion_radius_range=tuple(args.radius),
        member_count=args.members,
        fp_support=args.fp_support,
        dropout_members=args.dropout_members,
        softness=args.softness,
        member_noise=args.member_noise,
    )
    suite = phantom_suite(
        args.n_patients,
        base,
        seed=args.seed,
        border_jitter=args.border_jitter,
        fp_injection_rate=args.fp_rate,
        member_dropout_rate=args.dropout_rate,
    )
    manifest = write_phantom_dataset(out_dir, suite, dataset_id=args.dataset_id, domain_tag=args.domain_tag, suffix=args.suffix)
    dump_json(out_dir / "truth_ledger.json", {pid: ph.ledger for pid, ph in suite})
    print(f"wrote {len(manifest.patients)} phantom patients to {out_dir / 'manifest.json'}")
    return 0


def _fmt(v, digits=4):
    if v is None:
        return "NA"
    if isinstance(v, float):
        return f"{v:.{digits}f}"
    return str(v)


_DISPLAY_ORDER = {name: i for i, name in enumerate(LESION_MEASURES + PATIENT_MEASURES + VOXEL_MEASURES + BASELINES)}


def _ordered(table: dict) -> list:
    # report.json is written with sorted keys, so restore a fixed display order
    return sorted(table.items(), key=lambda kv: (_DISPLAY_ORDER.get(kv[0], len(_DISPLAY_ORDER)), kv[0]))


def render_summary(reports: Sequence[dict], boot: Optional[BootstrapConfig] = None) -> str:
    """Plain-text tables: patient metrics, retention AUCs and Spearman correlations."""
    lines = []
    for rep in reports:
        cfg = rep["config"]
        ds = rep["dataset"]
        b = boot or BootstrapConfig(cfg["n_bootstrap"], cfg["confidence_level"], cfg["seed"])
        level = int(round(100 * cfg["confidence_level"]))
        lines.append(f"== {ds['dataset_id']} ({ds['domain_tag'] or '-'}): {ds['n_patients']} patients, M={ds['n_members']}")
        lines.append(
            f"   alpha={cfg['alpha']} tau={cfg['tau']} ({cfg['grid_points']} points) connectivity={cfg['connectivity']} "
            f"min_lesion_voxels={cfg['min_lesion_voxels']} tpl_iou={cfg['tpl_iou']} ndsc_r={cfg['ndsc_r']} seed={cfg['seed']}"
        )
        lines.append(f"-- segmentation quality (mean, {level}% bootstrap CI)")
        for metric in ("dsc", "ndsc", "ltpr", "lppv", "lf1"):
            vals = [p[metric] for p in rep["patients"] if p.get(metric) is not None]
            if len(vals) >= 2:
                ci = bootstrap_mean(vals, b)
                lines.append(f"   {metric:6s} {_fmt(ci.point)} [{_fmt(ci.lo)}, {_fmt(ci.hi)}]")
        for scale in ("voxel", "lesion", "patient"):
            by = rep["curves"].get(scale) or {}
            if not by:
                continue
            lines.append(f"-- {scale}-scale retention AUC")
            for name, s in _ordered(by):
                ci = s.get("ci")
                band = f" [{_fmt(ci['lo'])}, {_fmt(ci['hi'])}]" if ci else ""
                lines.append(f"   {name:10s} {_fmt(s['auc'])}{band}")
        if rep["correlations"]:
            lines.append("-- Spearman rho(patient uncertainty, DSC)")
            for name, c in _ordered(rep["correlations"]):
                lines.append(f"   {name:10s} {_fmt(c['rho'], 3)} (n={c['n']}, dropped={c['dropped']})")
        if rep["failures"]:
            lines.append(f"-- {len(rep['failures'])} patients quarantined")
    if len(reports) > 1:
        lines.append("== joint Spearman rho(patient uncertainty, DSC)")
        rows = [p for rep in reports for p in rep["patients"]]
        for name in PATIENT_MEASURES:
            sr = spearman_rho([p.get(name) for p in rows], [p["dsc"] for p in rows])
            lines.append(f"   {name:10s} {_fmt(sr.rho, 3)} (n={sr.n}, dropped={sr.dropped})")
    return "\n".join(lines)


def cmd_report(args) -> int:
    reports = [json.loads(Path(p).read_text()) for p in args.reports]
    text = render_summary(reports)
    print(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.txt").write_text(text + "\n")
        rows = []
        for rep in reports:
            for name, c in rep["correlations"].items():
                rows.append({"measure": name, "dataset": rep["dataset"]["dataset_id"], **c})
        if len(reports) > 1:
            pts = [p for rep in reports for p in rep["patients"]]
            for name in PATIENT_MEASURES:
                sr = spearman_rho([p.get(name) for p in pts], [p["dsc"] for p in pts])
                rows.append({"measure": name, "dataset": "joint", "rho": sr.rho, "n": sr.n, "dropped": sr.dropped})
        write_csv(out / "correlations.csv", rows, ("measure", "dataset", "rho", "n", "dropped"))
    return 0


# ---------------------------------------------------------------- parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="dataset manifest (JSON)")
    p.add_argument("--config", help="flat key = value config file; flags override it")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("--thresholds", help="thresholds.json written by 'tune'")
    p.add_argument("--alpha", type=float, help="ensemble threshold")
    p.add_argument("--member-alphas", dest="member_alphas", help="comma-separated member thresholds")
    p.add_argument("--tau", type=float, help=f"retention step (default {DEFAULT_TAU})")
    p.add_argument("--min-lesion-voxels", dest="min_lesion_voxels", type=int, help=f"default {DEFAULT_MIN_LESION_VOXELS}")
    p.add_argument("--tpl-iou", dest="tpl_iou", type=float, help=f"default {DEFAULT_TPL_IOU}")
    p.add_argument("--connectivity", type=int, choices=(6, 18, 26), help=f"default {DEFAULT_CONNECTIVITY}")
    p.add_argument("--ndsc-r", dest="ndsc_r", type=float, help=f"default {DEFAULT_NDSC_R}")
    p.add_argument("--seed", type=int, help="seed for random baselines and bootstrap (default 0)")
    p.add_argument("--n-bootstrap", dest="n_bootstrap", type=int, help="bootstrap resamples (default 1000)")
    p.add_argument("--confidence-level", dest="confidence_level", type=float, help="default 0.90")
    p.add_argument(
        "--filter-member-masks",
        dest="filter_member_masks",
        action="store_const",
        const=True,
        help="apply the small-component filter to member masks too",
    )
    p.add_argument("--jobs", type=int, help="worker processes (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="structunc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tune", help="sweep ensemble and member thresholds on a validation manifest")
    _add_common(p)
    p.add_argument("--candidates", type=float, nargs="+", help="candidate thresholds (default 0.05..0.95)")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("measure", help="write voxel uncertainty maps and lesion/patient tables")
    _add_common(p)
    p.add_argument("--no-maps", action="store_true", help="skip writing voxel maps")
    p.add_argument("--map-suffix", default=".nii.gz", help="file suffix for maps (.nii.gz, .nii or .vol)")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("evaluate", help="run the full evaluation protocol")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("curves", help="write retention curves as JSON")
    _add_common(p)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("phantom", help="generate a synthetic dataset")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--n-patients", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", type=int, nargs=3, default=(48, 48, 48))
    p.add_argument("--members", type=int, default=5)
    p.add_argument("--n-lesions", type=int, default=5)
    p.add_argument("--radius", type=float, nargs=2, default=(2.5, 4.0))
    p.add_argument("--border-jitter", type=float, default=1.0, help="jitter at the highest corruption level")
    p.add_argument("--fp-rate", type=float, default=0.6, help="false positives per lesion at the highest corruption level")
    p.add_argument("--dropout-rate", type=float, default=0.5, help="lesion dropout probability at the highest corruption level")
    p.add_argument("--fp-support", type=int, default=1)
    p.add_argument("--dropout-members", type=int, default=1)
    p.add_argument("--softness", type=float, default=0.5)
    p.add_argument("--member-noise", type=float, default=0.0)
    p.add_argument("--dataset-id", default="phantom")
    p.add_argument("--domain-tag", default="in")
    p.add_argument("--suffix", default=".nii.gz", help="volume file suffix (.nii.gz, .nii or .vol)")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("report", help="render summary tables from one or more report.json files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PhantomPackingError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
