"""File-level pipeline steps shared by the command line and the tests.

Every step is a pure function of (config, input directories, seed) and
writes deterministic files: JSON with sorted keys, CSV with ``repr``
floats, PPM/PFM/PGM rasters.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import replace
from typing import Sequence

import numpy as np

from .augment import AugmentationPlan, AugmentationSpec, sample_plan
from .config import AblationEntry, ConfigError, RunConfig
from .engine import DepthPoseOptimizer, NumericalAbort
from .imaging import ensure_dir, read_pfm, read_ppm, write_mask_pgm, write_pfm, write_ppm
from .metrics import CSV_HEADER, DepthMetrics, evaluate, metrics_csv
from .synth import generate_dataset, read_dataset, read_manifest, write_dataset

CONFIG_ECHO = "config.json"
PLAN_FILE = "plan.json"
STEP_LOG = "steps.jsonl"
RESULTS = "results.json"
ABLATION_CSV = "ablation.csv"


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_config_echo(cfg: RunConfig, out_dir: str) -> None:
    with open(os.path.join(ensure_dir(out_dir), CONFIG_ECHO), "w") as fh:
        fh.write(cfg.dumps())


# -- generate / augment ---------------------------------------------------------


def run_generate(cfg: RunConfig, out_dir: str) -> dict:
    sc = cfg.scene
    records = generate_dataset(sc.preset, cfg.seed, sc.count, sc.height, sc.width)
    try:
        manifest = write_dataset(records, ensure_dir(out_dir), sc.preset, cfg.seed)
    except OSError as exc:
        raise ConfigError(f"cannot write dataset to {out_dir}: {exc}") from exc
    write_config_echo(cfg, out_dir)
    return manifest


def load_plan_file(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read plan {path}: {exc}") from exc


def plans_for(cfg: RunConfig, n: int, plan_doc: dict | None = None) -> list[AugmentationPlan]:
    """Plans from a plan document (replayed if it carries drawn plans) or from the config pool."""
    if plan_doc is not None and "plans" in plan_doc:
        plans = [AugmentationPlan.from_dict(p) for p in plan_doc["plans"]]
        if len(plans) != n:
            raise ConfigError(f"plan file holds {len(plans)} plans for {n} triplets")
        return plans
    if plan_doc is not None:
        unknown = set(plan_doc) - {"pool", "consistency"}
        if unknown:
            raise ConfigError(f"unknown plan keys: {sorted(unknown)}")
        pool = [AugmentationSpec.from_dict(d) for d in plan_doc.get("pool", [])]
        consistency = plan_doc.get("consistency", cfg.augmentation.consistency)
    else:
        pool = cfg.pool_specs()
        consistency = cfg.augmentation.consistency
    if not pool:
        raise ConfigError("augmentation pool is empty")
    try:
        return [sample_plan(pool, cfg.seed, i, consistency) for i in range(n)]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def run_augment(cfg: RunConfig, dataset_dir: str, out_dir: str, plan_path: str | None = None) -> list[AugmentationPlan]:
    manifest = read_manifest(dataset_dir)
    records = read_dataset(dataset_dir)
    plans = plans_for(cfg, len(records), None if plan_path is None else load_plan_file(plan_path))
    ensure_dir(out_dir)
    for entry, rec, plan in zip(manifest["triplets"], records, plans):
        for name, img in zip(entry["frames"], plan.apply(rec.frames, rec.depths)):
            write_ppm(img, os.path.join(out_dir, name))
    _write_json(os.path.join(out_dir, PLAN_FILE), {"plans": [p.to_dict() for p in plans]})
    write_config_echo(cfg, out_dir)
    return plans


def read_augmented(dataset_dir: str, aug_dir: str) -> list[list[np.ndarray]]:
    manifest = read_manifest(dataset_dir)
    out = []
    for entry in manifest["triplets"]:
        paths = [os.path.join(aug_dir, f) for f in entry["frames"]]
        for p in paths:
            if not os.path.exists(p):
                raise FileNotFoundError(f"missing augmented frame {p}")
        out.append([read_ppm(p) for p in paths])
    return out


# -- optimize / eval ------------------------------------------------------------


def fit_estimator(cfg: RunConfig, records, augmented, toggles=None) -> DepthPoseOptimizer:
    est = DepthPoseOptimizer(**cfg.estimator_params(toggles))
    return est.fit(records, augmented=augmented)


def dump_maps(maps: dict, out_dir: str) -> None:
    d = ensure_dir(os.path.join(out_dir, "nan_dump"))
    for name, arr in sorted(maps.items()):
        write_pfm(np.nan_to_num(arr, nan=-1.0, posinf=-1.0, neginf=-1.0), os.path.join(d, f"{name}.pfm"))


def write_fit_outputs(est: DepthPoseOptimizer, out_dir: str) -> None:
    ensure_dir(out_dir)
    with open(os.path.join(out_dir, STEP_LOG), "w") as fh:
        fh.write(est.step_log())
    results = {"final": est.final_, "triplets": [], "unaug_trained": bool(est.unaug_trained_),
               "aug_trained": bool(est.aug_trained_)}
    branches = [b for b, on in (("unaug", est.unaug_trained_), ("aug", est.aug_trained_)) if on]
    depths = {b: est.predict(branch=b) for b in branches}
    poses = {b: est.poses(b) for b in branches}
    for i, bd in enumerate(est.final_breakdowns_):
        entry = {"index": i, "breakdown": bd.summary(), "poses": {}}
        for b in branches:
            write_pfm(depths[b][i], os.path.join(out_dir, f"depth_{b}_{i}.pfm"))
            entry["poses"][b] = [p.to_dict() for p in poses[b][i]]
        for key in ("mu", "mu_aug", "m_v", "m_a"):
            m = getattr(bd, key)
            if m is not None:
                write_mask_pgm(m, os.path.join(out_dir, f"mask_{key}_{i}.pgm"))
        results["triplets"].append(entry)
    _write_json(os.path.join(out_dir, RESULTS), results)


def run_optimize(cfg: RunConfig, dataset_dir: str, out_dir: str, aug_dir: str | None = None) -> DepthPoseOptimizer:
    """Optimise from files; the augmented branch exists iff ``aug_dir`` is given."""
    records = read_dataset(dataset_dir)
    augmented = None if aug_dir is None else read_augmented(dataset_dir, aug_dir)
    write_config_echo(cfg, out_dir)
    try:
        est = fit_estimator(cfg, records, augmented)
    except NumericalAbort as exc:
        dump_maps(exc.maps, out_dir)
        raise
    write_fit_outputs(est, out_dir)
    return est


def evaluate_branch(depths: Sequence[np.ndarray], records, cfg: RunConfig) -> list[DepthMetrics]:
    return [evaluate(d, r.target_depth, median_scale=cfg.median_scale, clamp=(cfg.d_min, cfg.d_max))
            for d, r in zip(depths, records)]


def run_eval(cfg: RunConfig, pred_dir: str, dataset_dir: str, out_dir: str) -> dict:
    """Write ``eval_<branch>.csv`` for every branch with depth files in ``pred_dir``."""
    records = read_dataset(dataset_dir)
    ensure_dir(out_dir)
    written = {}
    for branch in ("unaug", "aug"):
        paths = [os.path.join(pred_dir, f"depth_{branch}_{i}.pfm") for i in range(len(records))]
        present = [os.path.exists(p) for p in paths]
        if not any(present):
            continue
        if not all(present):
            missing = [p for p, ok in zip(paths, present) if not ok]
            raise FileNotFoundError(f"missing prediction files: {missing}")
        rows = evaluate_branch([read_pfm(p) for p in paths], records, cfg)
        path = os.path.join(out_dir, f"eval_{branch}.csv")
        with open(path, "w") as fh:
            fh.write(metrics_csv(rows))
        written[branch] = rows
    if not written:
        raise FileNotFoundError(f"no depth_<branch>_<i>.pfm predictions in {pred_dir}")
    write_config_echo(cfg, out_dir)
    return written


# -- ablation ---------------------------------------------------------------------


def ablation_rows(cfg: RunConfig, records, augmented, entries: Sequence[AblationEntry] | None = None):
    """(name, condition, DepthMetrics | None) per entry; None for a branch that was not optimised."""
    out = []
    for entry in entries if entries is not None else cfg.ablation:
        est = fit_estimator(cfg, records, augmented if entry.augmented else None, entry.toggles)
        for cond, branch, on in (("clean", "unaug", est.unaug_trained_), ("augmented", "aug", est.aug_trained_)):
            if not on:
                out.append((entry.name, cond, None))
                continue
            # round through float32 exactly as the PFM files of a standalone run do
            depths = [d.astype(np.float32).astype(float) for d in est.predict(branch=branch)]
            m = DepthMetrics.mean(evaluate_branch(depths, records, cfg))
            out.append((entry.name, cond, m))
    return out


def run_ablate(cfg: RunConfig, out_dir: str, dataset_dir: str | None = None, aug_dir: str | None = None) -> list:
    """Run the ablation matrix; inputs go through the same files as standalone runs."""
    ensure_dir(out_dir)
    if dataset_dir is None:
        dataset_dir = os.path.join(out_dir, "dataset")
        run_generate(cfg, dataset_dir)
    if aug_dir is None:
        aug_dir = os.path.join(out_dir, "augmented")
        run_augment(cfg, dataset_dir, aug_dir)
    records = read_dataset(dataset_dir)
    augmented = read_augmented(dataset_dir, aug_dir)
    rows = ablation_rows(cfg, records, augmented)
    with open(os.path.join(out_dir, ABLATION_CSV), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("config", "condition") + CSV_HEADER)
        for name, cond, m in rows:
            vals = ["nan"] * len(CSV_HEADER) if m is None else [repr(float(x)) for x in m.as_tuple()]
            w.writerow([name, cond] + vals)
    write_config_echo(cfg, out_dir)
    return rows


def with_overrides(cfg: RunConfig, seed: int | None = None) -> RunConfig:
    return cfg if seed is None else replace(cfg, seed=int(seed))
