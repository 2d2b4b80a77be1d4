"""End-to-end evaluation: segment, measure, score, build retention curves, summarize."""
from __future__ import annotations

import csv
import json
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import retention as rc
from .io import PROBABILITY, MASK, DatasetManifest, PatientEntry, load_volume, read_volume
from .metrics import (
    DEFAULT_NDSC_R,
    DEFAULT_TPL_IOU,
    classify_lesions,
    confusion,
    dsc,
    lesion_metrics,
    ndsc,
    ppv,
    tpr,
)
from .stats import BOOTSTRAP_METHOD, BootstrapConfig, bootstrap_mean, bootstrap_patient_auc, spearman_rho
from .structural import (
    LESION_MEASURES,
    PATIENT_MEASURES,
    PatientMeasures,
    ThresholdSet,
    measure_patient,
)
from .voxel_measures import VOXEL_MEASURES, EnsemblePrediction
from .volume import DEFAULT_CONNECTIVITY, DEFAULT_MIN_LESION_VOXELS, check_same_shape, label_components

log = logging.getLogger(__name__)

PATIENT_METRICS = ("dsc", "ndsc", "tpr", "ppv", "ltpr", "lppv", "lf1", "n_tpl", "n_fpl", "n_fnl", "n_lesions")


class ConfigError(ValueError):
    """Invalid run configuration; aborts the whole run."""


@dataclass
class EvalConfig:
    alpha: Optional[float] = None
    member_alphas: Optional[tuple[float, ...]] = None
    tau: float = rc.DEFAULT_TAU
    connectivity: int = DEFAULT_CONNECTIVITY
    min_lesion_voxels: int = DEFAULT_MIN_LESION_VOXELS
    tpl_iou: float = DEFAULT_TPL_IOU
    ndsc_r: float = DEFAULT_NDSC_R
    seed: int = 0
    n_bootstrap: int = 1000
    confidence_level: float = 0.90
    filter_member_masks: bool = False
    jobs: int = 1

    def validate(self) -> None:
        if self.alpha is None:
            raise ConfigError("no ensemble threshold: set alpha or pass tuned thresholds")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.connectivity not in (6, 18, 26):
            raise ConfigError(f"connectivity must be 6, 18 or 26, got {self.connectivity}")
        if self.min_lesion_voxels < 0:
            raise ConfigError("min_lesion_voxels must be non-negative")
        if not 0.0 < self.tpl_iou <= 1.0:
            raise ConfigError("tpl_iou must lie in (0, 1]")
        if not 0.0 < self.ndsc_r < 1.0:
            raise ConfigError("ndsc_r must lie in (0, 1)")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        try:
            rc.retention_grid(self.tau)
            self.bootstrap()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def thresholds(self, n_members: int) -> ThresholdSet:
        member_alphas = self.member_alphas if self.member_alphas is not None else (self.alpha,) * n_members
        try:
            ts = ThresholdSet(self.alpha, tuple(member_alphas))
            ts.check_members(n_members)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return ts

    def bootstrap(self) -> BootstrapConfig:
        return BootstrapConfig(self.n_bootstrap, self.confidence_level, self.seed)

    def echo(self, n_members: int) -> dict:
        ts = self.thresholds(n_members)
        return {
            "alpha": ts.alpha,
            "member_alphas": list(ts.member_alphas),
            "member_alphas_tuned": self.member_alphas is not None,
            "threshold_rule": "p > alpha",
            "tau": self.tau,
            "grid_points": len(rc.retention_grid(self.tau)),
            "connectivity": self.connectivity,
            "min_lesion_voxels": self.min_lesion_voxels,
            "tpl_iou": self.tpl_iou,
            "tpl_rule": "max IoU >= tpl_iou",
            "fnl_rule": "zero overlap with prediction",
            "ndsc_r": self.ndsc_r,
            "log_base": "e",
            "seed": self.seed,
            "n_bootstrap": self.n_bootstrap,
            "confidence_level": self.confidence_level,
            "bootstrap_method": BOOTSTRAP_METHOD,
            "filter_member_masks": self.filter_member_masks,
            "voxel_refilter_after_replacement": False,
        }


@dataclass
class PatientData:
    patient_id: str
    ensemble: EnsemblePrediction
    gt: np.ndarray
    brain: np.ndarray
    affine: Optional[np.ndarray] = None


def load_patient(entry: PatientEntry) -> PatientData:
    members, affine = [], None
    for path in entry.members:
        data, aff = load_volume(path, PROBABILITY)
        affine = aff if affine is None else affine
        members.append(data)
    gt = read_volume(entry.ground_truth, MASK)
    brain = read_volume(entry.brain_mask, MASK)
    check_same_shape(*members, gt, brain)
    return PatientData(entry.patient_id, EnsemblePrediction.from_members(members), gt, brain, affine)


@dataclass
class PatientResult:
    patient_id: str
    metrics: dict
    scores: dict
    lesions: list[dict]
    voxel_curves: dict[str, np.ndarray] = field(default_factory=dict)
    lesion_curves: dict[str, np.ndarray] = field(default_factory=dict)

    def row(self) -> dict:
        return {"patient_id": self.patient_id, **self.metrics, **self.scores}


def patient_seed(seed: int, patient_id: str) -> tuple[int, int]:
    return (int(seed), zlib.crc32(patient_id.encode()))


def measure(patient: PatientData, cfg: EvalConfig) -> PatientMeasures:
    return measure_patient(
        patient.patient_id,
        patient.ensemble,
        patient.brain,
        cfg.thresholds(patient.ensemble.size),
        min_lesion_voxels=cfg.min_lesion_voxels,
        connectivity=cfg.connectivity,
        filter_member_masks=cfg.filter_member_masks,
    )


def evaluate_patient(patient: PatientData, cfg: EvalConfig) -> PatientResult:
    grid = rc.retention_grid(cfg.tau)
    pm = measure(patient, cfg)
    gt_labels = label_components(patient.gt, cfg.connectivity)
    classes, counts = classify_lesions(pm.pred_labels, gt_labels, cfg.tpl_iou)
    for les, cls in zip(pm.lesions, classes):
        les.classification = cls

    cc = confusion(pm.pred_mask, patient.gt, patient.brain)
    ltpr, lppv, lf1 = lesion_metrics(counts)
    metrics = {
        "dsc": dsc(cc),
        "ndsc": ndsc(cc, cfg.ndsc_r),
        "tpr": tpr(cc),
        "ppv": ppv(cc),
        "ltpr": ltpr,
        "lppv": lppv,
        "lf1": lf1,
        "n_tpl": counts.n_tpl,
        "n_fpl": counts.n_fpl,
        "n_fnl": counts.n_fnl,
        "n_lesions": len(pm.lesions),
    }

    seed = patient_seed(cfg.seed, patient.patient_id)
    voxel_curves = {
        name: rc.voxel_dsc_rc(pm.voxel_maps[name], pm.pred_mask, patient.gt, patient.brain, grid, name).values
        for name in VOXEL_MEASURES
    }
    for kind in rc.BASELINES:
        voxel_curves[kind] = rc.voxel_baseline(kind, pm.pred_mask, patient.gt, patient.brain, grid, seed).values

    lesion_curves = {}
    if pm.lesions:
        for name in LESION_MEASURES:
            lesion_curves[name] = rc.lesion_lppv_rc(pm.lesions, name, grid).values
        for kind in rc.BASELINES:
            lesion_curves[kind] = rc.lesion_baseline(kind, pm.lesions, grid, seed).values

    lesion_rows = [
        {
            "patient_id": patient.patient_id,
            "lesion_id": les.lesion_id,
            "volume_voxels": les.volume_voxels,
            **{name: les.uncertainties[name] for name in LESION_MEASURES},
            "classification": les.classification,
        }
        for les in pm.lesions
    ]
    return PatientResult(patient.patient_id, metrics, dict(pm.patient.scores), lesion_rows, voxel_curves, lesion_curves)


def _evaluate_entry(args):
    entry, cfg = args
    try:
        data = entry if isinstance(entry, PatientData) else load_patient(entry)
        return evaluate_patient(data, cfg), None
    except Exception as exc:  # quarantined per patient
        pid = entry.patient_id
        log.warning("patient %s failed: %s", pid, exc)
        return None, {"patient_id": pid, "error": f"{type(exc).__name__}: {exc}"}


def _curve_summary(kind: str, name: str, per_patient: list[np.ndarray], grid, boot: BootstrapConfig) -> dict:
    curves = [rc.RetentionCurve(kind, name, grid, v) for v in per_patient]
    mean = rc.mean_curve(curves)
    aucs = [c.auc for c in curves]
    out = {"n_patients": len(curves), "auc": mean.auc, "points": mean.to_dict()["points"]}
    out["ci"] = bootstrap_mean(aucs, boot).to_dict() if len(aucs) >= 2 else None
    out["patient_aucs"] = aucs
    return out


def summarize(
    results: Sequence[PatientResult],
    cfg: EvalConfig,
    n_members: int,
    dataset_id: str = "dataset",
    domain_tag: str = "",
    failures: Sequence[dict] = (),
) -> dict:
    """Dataset-level report from per-patient results (ordered by patient id)."""
    results = sorted(results, key=lambda r: r.patient_id)
    grid = rc.retention_grid(cfg.tau)
    boot = cfg.bootstrap()
    curves: dict[str, dict] = {"voxel": {}, "lesion": {}, "patient": {}}

    if results:
        for name in (*VOXEL_MEASURES, *rc.BASELINES):
            curves["voxel"][name] = _curve_summary(rc.VOXEL_DSC, name, [r.voxel_curves[name] for r in results], grid, boot)

    with_lesions = [r for r in results if r.lesion_curves]
    if with_lesions:
        for name in (*LESION_MEASURES, *rc.BASELINES):
            curves["lesion"][name] = _curve_summary(
                rc.LESION_LPPV, name, [r.lesion_curves[name] for r in with_lesions], grid, boot
            )

    undefined: dict[str, list[str]] = {}
    dscs = [r.metrics["dsc"] for r in results]
    if len(results) >= 2:
        pseed = (cfg.seed, zlib.crc32(dataset_id.encode()))
        rows_all = [(r.patient_id, r.metrics["dsc"], 0.0) for r in results]
        for kind in rc.BASELINES:
            c = rc.patient_baseline(kind, rows_all, grid, rng_seed=pseed)
            curves["patient"][kind] = {"n_patients": len(results), "auc": c.auc, "points": c.to_dict()["points"]}
        for name in PATIENT_MEASURES:
            rows = [(r.patient_id, r.metrics["dsc"], r.scores[name]) for r in results if r.scores[name] is not None]
            undefined[name] = [r.patient_id for r in results if r.scores[name] is None]
            if len(rows) < 2:
                continue
            c = rc.patient_dsc_rc(rows, grid, name)
            ci = bootstrap_patient_auc([(d, s) for _, d, s in rows], boot, grid)
            curves["patient"][name] = {
                "n_patients": len(rows),
                "auc": c.auc,
                "points": c.to_dict()["points"],
                "ci": ci.to_dict(),
            }

    correlations = {}
    if len(results) >= 3:
        for name in PATIENT_MEASURES:
            sr = spearman_rho([r.scores[name] for r in results], dscs)
            correlations[name] = {"rho": sr.rho, "n": sr.n, "dropped": sr.dropped}

    return {
        "config": cfg.echo(n_members),
        "dataset": {
            "dataset_id": dataset_id,
            "domain_tag": domain_tag,
            "n_patients": len(results),
            "n_members": n_members,
        },
        "patients": [r.row() for r in results],
        "lesions": [row for r in results for row in r.lesions],
        "curves": curves,
        "correlations": correlations,
        "exclusions": {
            "lesion_curve_patients_without_lesions": [r.patient_id for r in results if not r.lesion_curves],
            "patient_curve_undefined_scores": undefined,
        },
        "failures": list(failures),
    }


def evaluate_dataset(
    patients: Sequence,
    cfg: EvalConfig,
    dataset_id: str = "dataset",
    domain_tag: str = "",
) -> dict:
    """Run the full protocol on ``PatientData`` objects or manifest entries."""
    if not patients:
        raise ConfigError("no patients to evaluate")
    cfg.validate()
    n_members = patients[0].ensemble.size if isinstance(patients[0], PatientData) else len(patients[0].members)
    cfg.thresholds(n_members)
    tasks = [(p, cfg) for p in patients]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(_evaluate_entry, tasks))
    else:
        outcomes = [_evaluate_entry(t) for t in tasks]
    results = [r for r, _ in outcomes if r is not None]
    failures = sorted((f for _, f in outcomes if f is not None), key=lambda f: f["patient_id"])
    return summarize(results, cfg, n_members, dataset_id, domain_tag, failures)


def run_evaluate(manifest: DatasetManifest, cfg: EvalConfig) -> dict:
    try:
        manifest.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return evaluate_dataset(manifest.patients, cfg, manifest.dataset_id, manifest.domain_tag)


# ---------------------------------------------------------------- writers


def _fmt(v):
    if v is None:
        return "NA"
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return v


def write_csv(path, rows: Sequence[dict], columns: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])
    return path


def dump_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n")
    return path


def write_curves(report: dict, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    dataset_id = report["dataset"]["dataset_id"]
    written = []
    for scale, by_measure in report["curves"].items():
        for name, summary in by_measure.items():
            payload = {
                "scale": scale,
                "measure": name,
                "dataset_id": dataset_id,
                "auc": summary["auc"],
                "ci": summary.get("ci"),
                "points": summary["points"],
            }
            safe = name.replace("+", "plus")
            written.append(dump_json(out_dir / f"{scale}_{safe}_{dataset_id}.json", payload))
    return written


def write_report(report: dict, out_dir) -> dict[str, Path]:
    """Write report.json plus the patient, lesion and correlation CSV tables."""
    out_dir = Path(out_dir)
    paths = {"report": dump_json(out_dir / "report.json", report)}
    paths["patients"] = write_csv(
        out_dir / "patient_metrics.csv", report["patients"], ("patient_id", *PATIENT_METRICS, *PATIENT_MEASURES)
    )
    paths["lesions"] = write_csv(
        out_dir / "lesions.csv",
        report["lesions"],
        ("patient_id", "lesion_id", "volume_voxels", *LESION_MEASURES, "classification"),
    )
    ds = report["dataset"]["dataset_id"]
    corr_rows = [{"measure": m, "dataset": ds, **c} for m, c in report["correlations"].items()]
    paths["correlations"] = write_csv(out_dir / "correlations.csv", corr_rows, ("measure", "dataset", "rho", "n", "dropped"))
    write_curves(report, out_dir / "curves")
    return paths


CONFIG_FIELDS = {f.name: f for f in fields(EvalConfig)}
