"""Experiment harness: configs, synthetic scenes, trial runs, and reports.

Configs and manifests are versioned JSON; per-trial outcome records are
JSON; aggregate tables are CSV plus JSON. Every random quantity derives
from the master seed and the trial id, so reruns of the same config are
byte-identical except for the per-trial wall-clock fields, which live only
in the records file and never in reports.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .correspond import CorrespondenceSet  # noqa: F401  (re-export convenience)
from .crops import DEFAULT_CROP_PAD
from .errors import (
    BehindCameraError,
    ConfigurationError,
    DegeneracyError,
    FlowFileMissingError,
    MeshHashMismatchError,
    RobustFailureError,
    SolverError,
)
from .exemplars import (
    EXEMPLAR_SIZE,
    ExemplarSet,
    generate_exemplar_set,
    load_set,
)
from .flow import FlowNoiseSpec, OracleFlowSource, load_flow, save_flow
from .geometry import CameraIntrinsics, RigidPose, pose_jitter, random_rotation
from .mesh import MeshModel, load_mesh, make_box, mesh_digest
from .metrics import auc_metric, pose_error_report
from .raster import SceneSpec
from .refine import MAX_CORRESPONDENCES, RansacConfig, refine_pose

SCHEMA_VERSION = 1

DEFAULT_TARGET_CAMERA = CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480)
DEFAULT_EXEMPLAR_CAMERA = CameraIntrinsics(
    400.0, 400.0, 128.0, 128.0, EXEMPLAR_SIZE, EXEMPLAR_SIZE
)

_TRIAL_FAILURES = (
    RobustFailureError,
    SolverError,
    FlowFileMissingError,
    DegeneracyError,
    BehindCameraError,
)


def derive_seed(master: int, *parts) -> int:
    """Stable 63-bit seed derived from the master seed and any labels."""
    text = repr((int(master),) + tuple(parts)).encode("utf-8")
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "little") >> 1


def worker_count() -> int:
    """Trial-level parallelism, capped by the PFA_THREADS env var."""
    raw = os.environ.get("PFA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"PFA_THREADS must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _camera_from_dict(d: dict) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            int(d["width"]), int(d["height"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad camera spec {d!r}: {exc}") from exc


def _camera_to_dict(c: CameraIntrinsics) -> dict:
    return {
        "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
        "width": c.width, "height": c.height,
    }


@dataclass
class ExperimentConfig:
    """Everything one refinement experiment needs, JSON round-trippable."""

    mesh_path: str = ""
    trials: int = 100
    seed: int = 0
    label: str = "experiment"
    n_exemplars: int = 4

    exemplar_path: str | None = None
    gen_count: int = 2048
    gen_z_bar: float = 1.0
    gen_seed: int = 0
    gen_name: str = "object"
    exemplar_camera: CameraIntrinsics = field(default_factory=lambda: DEFAULT_EXEMPLAR_CAMERA)

    target_camera: CameraIntrinsics = field(default_factory=lambda: DEFAULT_TARGET_CAMERA)
    occluder_count: int = 0
    occluder_coverage: float = 0.4
    lateral_range: float = 0.05
    depth_fraction: float = 0.2
    z_center: float | None = None

    jitter_max_rot_deg: float = 20.0
    jitter_max_reproj_px: float = 10.0

    flow_source: str = "oracle"  # "oracle" | "files"
    flow_directory: str | None = None
    noise: FlowNoiseSpec | None = None
    dump_flow_dir: str | None = None

    inlier_threshold: float = 2.0
    max_iterations: int = 1000
    confidence: float = 0.999
    min_inliers: int = 12

    crop_pad: float = DEFAULT_CROP_PAD
    max_correspondences: int = MAX_CORRESPONDENCES

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigurationError("trial count must be >= 1")
        if self.n_exemplars < 1:
            raise ConfigurationError("n_exemplars must be >= 1")
        if self.flow_source not in ("oracle", "files"):
            raise ConfigurationError(f"unknown flow source {self.flow_source!r}")
        if self.flow_source == "files" and not self.flow_directory:
            raise ConfigurationError("flow source 'files' needs a flow directory")
        if not (0 <= self.depth_fraction < 1 and self.lateral_range >= 0):
            raise ConfigurationError("invalid scene translation ranges")
        if self.jitter_max_rot_deg < 0 or self.jitter_max_reproj_px < 0:
            raise ConfigurationError("jitter bounds must be non-negative")
        if self.occluder_count < 0 or self.occluder_coverage < 0:
            raise ConfigurationError("invalid occluder parameters")

    @property
    def scene_z_center(self) -> float:
        return self.z_center if self.z_center is not None else self.gen_z_bar

    def ransac(self, trial_seed: int) -> RansacConfig:
        return RansacConfig(
            inlier_threshold=self.inlier_threshold,
            max_iterations=self.max_iterations,
            confidence=self.confidence,
            min_inliers=self.min_inliers,
            seed=trial_seed,
        )

    def to_dict(self) -> dict:
        noise = None
        if self.noise is not None:
            noise = {
                "gaussian_sigma": self.noise.gaussian_sigma,
                "outlier_ratio": self.noise.outlier_ratio,
                "outlier_range": self.noise.outlier_range,
                "dropout_ratio": self.noise.dropout_ratio,
            }
        return {
            "schema_version": SCHEMA_VERSION,
            "label": self.label,
            "mesh": self.mesh_path,
            "trials": self.trials,
            "seed": self.seed,
            "n_exemplars": self.n_exemplars,
            "exemplars": {
                "path": self.exemplar_path,
                "generate": {
                    "count": self.gen_count,
                    "z_bar": self.gen_z_bar,
                    "seed": self.gen_seed,
                    "name": self.gen_name,
                    "camera": _camera_to_dict(self.exemplar_camera),
                },
            },
            "target_camera": _camera_to_dict(self.target_camera),
            "scene": {
                "occluder_count": self.occluder_count,
                "occluder_coverage": self.occluder_coverage,
                "lateral_range": self.lateral_range,
                "depth_fraction": self.depth_fraction,
                "z_center": self.z_center,
            },
            "jitter": {
                "max_rot_deg": self.jitter_max_rot_deg,
                "max_reproj_px": self.jitter_max_reproj_px,
            },
            "flow": {
                "source": self.flow_source,
                "directory": self.flow_directory,
                "noise": noise,
                "dump_dir": self.dump_flow_dir,
            },
            "ransac": {
                "inlier_threshold": self.inlier_threshold,
                "max_iterations": self.max_iterations,
                "confidence": self.confidence,
                "min_inliers": self.min_inliers,
            },
            "crop": {
                "pad": self.crop_pad,
                "max_correspondences": self.max_correspondences,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a JSON object")
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigurationError(
                f"config schema version {version} unsupported, expected {SCHEMA_VERSION}"
            )
        exemplars = data.get("exemplars", {}) or {}
        generate = exemplars.get("generate", {}) or {}
        scene = data.get("scene", {}) or {}
        jitter = data.get("jitter", {}) or {}
        flow = data.get("flow", {}) or {}
        ransac = data.get("ransac", {}) or {}
        crop = data.get("crop", {}) or {}
        noise_dict = flow.get("noise")
        noise = None
        if noise_dict is not None:
            preset = noise_dict.get("preset")
            if preset == "default":
                noise = FlowNoiseSpec.default_preset(
                    dropout_ratio=float(noise_dict.get("dropout_ratio", 0.20))
                )
            elif preset in (None, "none"):
                noise = FlowNoiseSpec(
                    gaussian_sigma=float(noise_dict.get("gaussian_sigma", 0.0)),
                    outlier_ratio=float(noise_dict.get("outlier_ratio", 0.0)),
                    outlier_range=float(noise_dict.get("outlier_range", 0.0)),
                    dropout_ratio=float(noise_dict.get("dropout_ratio", 0.0)),
                )
            else:
                raise ConfigurationError(f"unknown noise preset {preset!r}")
        try:
            return cls(
                mesh_path=data.get("mesh", ""),
                trials=int(data.get("trials", 100)),
                seed=int(data.get("seed", 0)),
                label=str(data.get("label", "experiment")),
                n_exemplars=int(data.get("n_exemplars", 4)),
                exemplar_path=exemplars.get("path"),
                gen_count=int(generate.get("count", 2048)),
                gen_z_bar=float(generate.get("z_bar", 1.0)),
                gen_seed=int(generate.get("seed", 0)),
                gen_name=str(generate.get("name", "object")),
                exemplar_camera=(
                    _camera_from_dict(generate["camera"])
                    if "camera" in generate
                    else DEFAULT_EXEMPLAR_CAMERA
                ),
                target_camera=(
                    _camera_from_dict(data["target_camera"])
                    if "target_camera" in data
                    else DEFAULT_TARGET_CAMERA
                ),
                occluder_count=int(scene.get("occluder_count", 0)),
                occluder_coverage=float(scene.get("occluder_coverage", 0.4)),
                lateral_range=float(scene.get("lateral_range", 0.05)),
                depth_fraction=float(scene.get("depth_fraction", 0.2)),
                z_center=(
                    float(scene["z_center"]) if scene.get("z_center") is not None else None
                ),
                jitter_max_rot_deg=float(jitter.get("max_rot_deg", 20.0)),
                jitter_max_reproj_px=float(jitter.get("max_reproj_px", 10.0)),
                flow_source=str(flow.get("source", "oracle")),
                flow_directory=flow.get("directory"),
                noise=noise,
                dump_flow_dir=flow.get("dump_dir"),
                inlier_threshold=float(ransac.get("inlier_threshold", 2.0)),
                max_iterations=int(ransac.get("max_iterations", 1000)),
                confidence=float(ransac.get("confidence", 0.999)),
                min_inliers=int(ransac.get("min_inliers", 12)),
                crop_pad=float(crop.get("pad", DEFAULT_CROP_PAD)),
                max_correspondences=int(
                    crop.get("max_correspondences", MAX_CORRESPONDENCES)
                ),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed config value: {exc}") from exc


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a config file and apply flag overrides (flags win)."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    config = ExperimentConfig.from_dict(data)
    if overrides:
        fields = {k: v for k, v in overrides.items() if v is not None}
        if fields:
            config = replace(config, **fields)
    return config


def resolve_exemplar_set(config: ExperimentConfig, mesh: MeshModel) -> ExemplarSet:
    if config.exemplar_path:
        return load_set(config.exemplar_path)
    return generate_exemplar_set(
        mesh, config.gen_count, config.gen_z_bar, config.exemplar_camera,
        config.gen_seed, config.gen_name,
    )


# ---------------------------------------------------------------------------
# Pose / manifest serialization
# ---------------------------------------------------------------------------


def pose_to_dict(pose: RigidPose) -> dict:
    return {
        "rotation": [[float(x) for x in row] for row in pose.rotation],
        "translation": [float(x) for x in pose.translation],
    }


def pose_from_dict(d: dict) -> RigidPose:
    return RigidPose(np.array(d["rotation"]), np.array(d["translation"]))


def synth_scene_manifest(config: ExperimentConfig, mesh: MeshModel) -> dict:
    """Sample ground-truth poses, occluder layouts, and jittered initials."""
    z_center = config.scene_z_center
    cam = config.target_camera
    trials = []
    for trial_id in range(config.trials):
        rng = np.random.default_rng(derive_seed(config.seed, "scene", trial_id))
        rotation = random_rotation(rng)
        lateral = rng.uniform(-config.lateral_range, config.lateral_range, size=2)
        depth = z_center * (1.0 + rng.uniform(-config.depth_fraction, config.depth_fraction))
        gt = RigidPose(rotation, [lateral[0], lateral[1], depth])

        occluders = []
        for _ in range(config.occluder_count):
            frac = rng.uniform(0.45, 0.70)
            z_occ = depth * frac
            radius_px = cam.fx * mesh.bounding_radius / depth
            offset = rng.uniform(-0.7, 0.7, size=2) * radius_px
            center_px = np.array(
                [
                    cam.fx * gt.translation[0] / depth + cam.cx,
                    cam.fy * gt.translation[1] / depth + cam.cy,
                ]
            )
            target_px = center_px + offset
            center = np.array(
                [
                    (target_px[0] - cam.cx) / cam.fx * z_occ,
                    (target_px[1] - cam.cy) / cam.fy * z_occ,
                    z_occ,
                ]
            )
            side = config.occluder_coverage * mesh.diameter * frac
            extents = (side, side, max(side * 0.2, 1e-3))
            occluders.append(
                {
                    "extents": [float(e) for e in extents],
                    "pose": pose_to_dict(RigidPose(random_rotation(rng), center)),
                }
            )

        initial = pose_jitter(
            gt, cam, mesh,
            config.jitter_max_rot_deg, config.jitter_max_reproj_px,
            seed=derive_seed(config.seed, "jitter", trial_id),
        )
        trials.append(
            {
                "trial_id": trial_id,
                "gt_pose": pose_to_dict(gt),
                "initial_pose": pose_to_dict(initial),
                "occluders": occluders,
                "background_seed": derive_seed(config.seed, "background", trial_id),
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "label": config.label,
        "mesh_hash": mesh_digest(mesh).hex(),
        "z_center": z_center,
        "target_camera": _camera_to_dict(cam),
        "trials": trials,
    }


def scene_from_manifest_entry(
    entry: dict, mesh: MeshModel, camera: CameraIntrinsics
) -> tuple[SceneSpec, RigidPose, RigidPose]:
    gt = pose_from_dict(entry["gt_pose"])
    initial = pose_from_dict(entry["initial_pose"])
    occluders = tuple(
        (make_box(o["extents"]), pose_from_dict(o["pose"])) for o in entry["occluders"]
    )
    scene = SceneSpec(mesh, gt, occluders, camera, int(entry["background_seed"]))
    return scene, gt, initial


# ---------------------------------------------------------------------------
# Flow sources for the harness
# ---------------------------------------------------------------------------


def flow_file_name(trial_id: int, rank: int) -> str:
    return f"trial{trial_id:05d}_rank{rank}.pfaf"


class DirectoryFlowSource:
    """Reads externally produced flow files named trialNNNNN_rankR.pfaf."""

    def __init__(self, directory, trial_id: int):
        self.directory = Path(directory)
        self.trial_id = trial_id

    def flow_for(self, exemplar, rank, crop_exemplar, crop_target):
        path = self.directory / flow_file_name(self.trial_id, rank)
        if not path.exists():
            raise FlowFileMissingError(f"flow file not found: {path}")
        return load_flow(path)


class _DumpingSource:
    def __init__(self, inner, directory, trial_id: int):
        self.inner = inner
        self.directory = Path(directory)
        self.trial_id = trial_id

    def flow_for(self, exemplar, rank, crop_exemplar, crop_target):
        field = self.inner.flow_for(exemplar, rank, crop_exemplar, crop_target)
        self.directory.mkdir(parents=True, exist_ok=True)
        save_flow(field, self.directory / flow_file_name(self.trial_id, rank))
        return field


# ---------------------------------------------------------------------------
# Trial execution
# ---------------------------------------------------------------------------


def _report_to_dict(report) -> dict:
    return {
        "add": report.add,
        "add_s": report.add_s,
        "rotation_err_deg": report.rotation_err,
        "translation_err_m": report.translation_err,
    }


def run_trial(
    config: ExperimentConfig,
    mesh: MeshModel,
    exemplar_set: ExemplarSet,
    entry: dict,
) -> dict:
    trial_id = int(entry["trial_id"])
    scene, gt, initial = scene_from_manifest_entry(entry, mesh, config.target_camera)

    if config.flow_source == "files":
        source = DirectoryFlowSource(config.flow_directory, trial_id)
    else:
        source = OracleFlowSource(
            scene, gt, config.noise, base_seed=derive_seed(config.seed, "noise", trial_id)
        )
    if config.dump_flow_dir:
        source = _DumpingSource(source, config.dump_flow_dir, trial_id)

    record = {
        "trial_id": trial_id,
        "gt_pose": entry["gt_pose"],
        "initial_pose": entry["initial_pose"],
        "refined_pose": None,
        "failure_reason": None,
        "exemplars": [],
        "initial_report": _report_to_dict(pose_error_report(gt, initial, mesh)),
        "refined_report": None,
        "wall_time_ms": 0.0,
    }

    start = time.perf_counter()
    try:
        result = refine_pose(
            initial, exemplar_set, mesh, config.target_camera, source,
            config.n_exemplars, config.ransac(derive_seed(config.seed, "ransac", trial_id)),
            crop_pad=config.crop_pad,
            max_correspondences=config.max_correspondences,
        )
    except _TRIAL_FAILURES as failure:
        record["failure_reason"] = f"{type(failure).__name__}: {failure}"
        reports = getattr(failure, "exemplar_reports", None) or []
        record["exemplars"] = [
            {
                "id": r.exemplar_id,
                "distance_deg": r.distance_deg,
                "n_correspondences": r.n_correspondences,
                "inlier_count": r.inlier_count,
            }
            for r in reports
        ]
    else:
        refined = result.estimate.pose
        record["refined_pose"] = pose_to_dict(refined)
        record["refined_report"] = _report_to_dict(pose_error_report(gt, refined, mesh))
        record["exemplars"] = [
            {
                "id": r.exemplar_id,
                "distance_deg": r.distance_deg,
                "n_correspondences": r.n_correspondences,
                "inlier_count": r.inlier_count,
            }
            for r in result.exemplar_reports
        ]
    record["wall_time_ms"] = (time.perf_counter() - start) * 1000.0
    return record


def run_refinement(
    config: ExperimentConfig,
    mesh: MeshModel,
    exemplar_set: ExemplarSet,
    manifest: dict,
) -> dict:
    """Run every manifest trial; returns the records document."""
    digest = mesh_digest(mesh)
    if manifest.get("mesh_hash") != digest.hex():
        raise MeshHashMismatchError("manifest was built for a different mesh")
    if exemplar_set.mesh_hash != digest:
        raise MeshHashMismatchError("exemplar set was built for a different mesh")

    entries = sorted(manifest["trials"], key=lambda e: int(e["trial_id"]))
    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(
                pool.map(lambda e: run_trial(config, mesh, exemplar_set, e), entries)
            )
    else:
        records = [run_trial(config, mesh, exemplar_set, e) for e in entries]
    records.sort(key=lambda r: r["trial_id"])

    return {
        "schema_version": SCHEMA_VERSION,
        "label": config.label,
        "n_exemplars": config.n_exemplars,
        "mesh_hash": digest.hex(),
        "diameter": mesh.diameter,
        "z_bar": exemplar_set.z_bar,
        "config": config.to_dict(),
        "trials": records,
    }


# ---------------------------------------------------------------------------
# Aggregation and reports
# ---------------------------------------------------------------------------


def _errors_with_failures(trials: list, which: str, key: str) -> np.ndarray:
    values = []
    for t in trials:
        report = t.get(which)
        values.append(float("inf") if report is None else float(report[key]))
    return np.array(values)


def summarize_records(records: dict) -> dict:
    """Aggregate metrics of one records document (failures count as inf)."""
    trials = records["trials"]
    diameter = float(records["diameter"])
    out = {}
    for stage in ("initial_report", "refined_report"):
        add = _errors_with_failures(trials, stage, "add")
        add_s = _errors_with_failures(trials, stage, "add_s")
        rot = _errors_with_failures(trials, stage, "rotation_err_deg")
        trans = _errors_with_failures(trials, stage, "translation_err_m")
        good = np.isfinite(add)
        summary = {
            "add_01d": float(np.mean(add < 0.1 * diameter)),
            "add_05d": float(np.mean(add < 0.5 * diameter)),
            "auc_add": auc_metric(add),
            "auc_add_s": auc_metric(add_s),
            "mean_rotation_err_deg": float(rot[good].mean()) if good.any() else None,
            "mean_translation_err_m": float(trans[good].mean()) if good.any() else None,
            "failure_count": int(np.sum(~good)),
        }
        out["initial" if stage == "initial_report" else "refined"] = summary
    return {
        "schema_version": SCHEMA_VERSION,
        "label": records["label"],
        "n_exemplars": records["n_exemplars"],
        "trials": len(trials),
        "diameter": diameter,
        "initial": out["initial"],
        "refined": out["refined"],
    }


_SUMMARY_COLUMNS = [
    "add_01d", "add_05d", "auc_add", "auc_add_s",
    "mean_rotation_err_deg", "mean_translation_err_m", "failure_count",
]


def write_json(document: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")


def write_report_csv(summary: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["stage"] + _SUMMARY_COLUMNS)
        for stage in ("initial", "refined"):
            row = [stage] + [_csv_cell(summary[stage][c]) for c in _SUMMARY_COLUMNS]
            writer.writerow(row)


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def evaluate_records(record_documents: list) -> tuple[list, list]:
    """Metric table plus accuracy-vs-threshold curve rows for many runs.

    Rows are keyed by (label, n_exemplars); curves sample the refined ADD
    accuracy on [0, 0.10] m for AUC plotting.
    """
    if not record_documents:
        raise ConfigurationError("no records to evaluate")
    table = []
    curves = []
    thresholds = np.linspace(0.0, 0.10, 101)
    for records in record_documents:
        if not records.get("trials"):
            raise ConfigurationError(
                f"records {records.get('label')!r} contain no trials"
            )
        summary = summarize_records(records)
        row = {
            "label": summary["label"],
            "n_exemplars": summary["n_exemplars"],
            "trials": summary["trials"],
        }
        for stage in ("initial", "refined"):
            for column in _SUMMARY_COLUMNS:
                row[f"{stage}_{column}"] = summary[stage][column]
        table.append(row)

        add = _errors_with_failures(records["trials"], "refined_report", "add")
        for threshold in thresholds:
            curves.append(
                {
                    "label": summary["label"],
                    "n_exemplars": summary["n_exemplars"],
                    "threshold_m": float(threshold),
                    "accuracy": float(np.mean(add < threshold)),
                }
            )
    table.sort(key=lambda r: (r["label"], r["n_exemplars"]))
    curves.sort(key=lambda r: (r["label"], r["n_exemplars"], r["threshold_m"]))
    return table, curves


def write_table_csv(rows: list, path) -> None:
    if not rows:
        raise ConfigurationError("empty table")
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        header = list(rows[0].keys())
        writer.writerow(header)
        for row in rows:
            writer.writerow([_csv_cell(row[h]) for h in header])


def load_records_documents(records_dir) -> list:
    root = Path(records_dir)
    if root.is_file():
        paths = [root]
    else:
        paths = sorted(root.rglob("records*.json"))
    documents = []
    for path in paths:
        try:
            with open(path, "r", encoding="utf-8") as f:
                doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: malformed records: {exc}") from exc
        if doc.get("schema_version") != SCHEMA_VERSION or "trials" not in doc:
            raise ConfigurationError(f"{path}: not a records document")
        documents.append(doc)
    if not documents:
        raise ConfigurationError(f"no records files found under {records_dir}")
    return documents
