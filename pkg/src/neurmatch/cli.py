"""Command-line interface: gen, train, match, verify, eval, bench, inspect.

Configuration precedence (lowest to highest): NEURMATCH_<SECTION>_<KEY>
environment variables, a --config INI file with [section] key = value
entries, then explicit flags. Unknown sections or keys are rejected.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import FORMAT_VERSIONS, __version__
from . import baseline, benchkernels, descriptors, evalmetrics, gccm, geometry, matcher, nn, synthdata

log = logging.getLogger("neurmatch")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(ValueError):
    pass


# configuration schema: section -> key -> cast
SCHEMA = {
    "scene": {
        "image_size": int,
        "n_neurons": int,
        "blob_radius_min": float,
        "blob_radius_max": float,
        "intensity_min": float,
        "intensity_max": float,
        "min_separation": float,
    },
    "deform": {
        "grid": int,
        "displacement_sigma": float,
        "max_rotation": float,
        "max_scale_jitter": float,
    },
    "matcher": {"temperature": float, "min_score": float},
    "gccm": {"tau": float, "min_coverage": int, "corruption": float},
    "ransac": {"iterations": int, "inlier_threshold": float, "min_inliers": int},
    "train": {"learning_rate": float, "batch_size": int, "epochs": int, "optimizer": str},
    "bench": {"count": int},
}


def load_config_file(path: str) -> dict:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file {path} not found")
    out: dict = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise UsageError(f"unknown config section [{section}]")
        out[section] = {}
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                raise UsageError(f"unknown config key {key!r} in section [{section}]")
            out[section][key] = SCHEMA[section][key](value)
    return out


def env_config() -> dict:
    out: dict = {}
    for section, keys in SCHEMA.items():
        for key, cast in keys.items():
            raw = os.environ.get(f"NEURMATCH_{section.upper()}_{key.upper()}")
            if raw is not None:
                out.setdefault(section, {})[key] = cast(raw)
    return out


class Settings:
    """Merged env < file < flags lookup."""

    def __init__(self, config_path: str | None):
        self.layers = [env_config()]
        if config_path:
            self.layers.append(load_config_file(config_path))

    def get(self, section: str, key: str, flag_value, default):
        if flag_value is not None:
            return flag_value
        for layer in reversed(self.layers):
            if key in layer.get(section, {}):
                return layer[section][key]
        return default


def _scene_cfg(s: Settings, args) -> synthdata.SceneConfig:
    return synthdata.SceneConfig(
        image_size=s.get("scene", "image_size", getattr(args, "size", None), 512),
        n_neurons=s.get("scene", "n_neurons", getattr(args, "neurons", None), 50),
        blob_radius_range=(
            s.get("scene", "blob_radius_min", None, 2.0),
            s.get("scene", "blob_radius_max", None, 6.0),
        ),
        intensity_range=(
            s.get("scene", "intensity_min", None, 0.35),
            s.get("scene", "intensity_max", None, 1.0),
        ),
        min_separation=s.get("scene", "min_separation", None, 12.0),
    )


def _deform_cfg(s: Settings, args, image_size: int) -> synthdata.DeformConfig:
    sigma = s.get("deform", "displacement_sigma", getattr(args, "displacement", None), 0.05 * image_size)
    return synthdata.DeformConfig(
        grid=s.get("deform", "grid", getattr(args, "grid", None), 4),
        displacement_sigma=sigma,
        max_rotation=s.get("deform", "max_rotation", None, 0.05),
        max_scale_jitter=s.get("deform", "max_scale_jitter", None, 0.03),
    )


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def _gen_one_pretrain(job):
    scene_cfg, deform_cfg, seed, out_dir = job
    task = synthdata.make_pretrain_task(scene_cfg, deform_cfg, seed=seed)
    synthdata.save_task(task, Path(out_dir) / task.task_id)
    return task.task_id


def _gen_one_crossmodal(job):
    scene_cfg, deform_cfg, aug, seed, out_dir = job
    tasks = synthdata.make_crossmodal_task(scene_cfg, deform_cfg, aug=aug, seed=seed)
    ids = []
    for task in tasks:
        synthdata.save_task(task, Path(out_dir) / task.task_id)
        ids.append(task.task_id)
    return ids


def _run_jobs(jobs, fn, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def cmd_gen(args, settings: Settings) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene_cfg = _scene_cfg(settings, args)
    deform_cfg = _deform_cfg(settings, args, scene_cfg.image_size)
    if args.kind == "pretrain":
        jobs = [(scene_cfg, deform_cfg, args.seed + i, str(out)) for i in range(args.count)]
        ids = _run_jobs(jobs, _gen_one_pretrain, args.workers)
    else:
        jobs = [(scene_cfg, deform_cfg, args.aug, args.seed + p, str(out)) for p in range(args.pairs)]
        ids = [tid for group in _run_jobs(jobs, _gen_one_crossmodal, args.workers) for tid in group]
    manifest = {
        "format_version": synthdata.TASK_FORMAT_VERSION,
        "kind": args.kind,
        "seed": args.seed,
        "count": len(ids),
        "tasks": sorted(ids),
        "scene": {
            "image_size": scene_cfg.image_size,
            "n_neurons": scene_cfg.n_neurons,
            "blob_radius_range": list(scene_cfg.blob_radius_range),
            "intensity_range": list(scene_cfg.intensity_range),
            "min_separation": scene_cfg.min_separation,
        },
        "deform": {
            "grid": deform_cfg.grid,
            "displacement_sigma": deform_cfg.displacement_sigma,
            "max_rotation": deform_cfg.max_rotation,
            "max_scale_jitter": deform_cfg.max_scale_jitter,
        },
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
        f.write("\n")
    log.info("wrote %d tasks to %s", len(ids), out)
    return EXIT_OK


def load_task_dir(path: Path, with_images: bool = False):
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {path}")
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    return [synthdata.load_task(path / tid, with_images=with_images) for tid in manifest["tasks"]], manifest


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _train_cfg(settings: Settings, args, default_epochs: int, default_batch: int = 128) -> nn.TrainConfig:
    return nn.TrainConfig(
        learning_rate=settings.get("train", "learning_rate", args.lr, 1e-3),
        batch_size=settings.get("train", "batch_size", args.batch_size, default_batch),
        epochs=settings.get("train", "epochs", args.epochs, default_epochs),
        optimizer=settings.get("train", "optimizer", None, "adam"),
        seed=args.seed,
    )


def fusion_pairs_from_tasks(tasks):
    """Aligned [local ; semantic] rows for ground-truth corresponding keypoints."""
    rows_a, rows_b = [], []
    for t in tasks:
        if t.desc_a is None or t.desc_b is None:
            continue
        if t.desc_a.semantic is None or t.desc_b.semantic is None:
            continue
        ia = t.gt_matches[:, 0]
        jb = t.gt_matches[:, 1]
        rows_a.append(np.concatenate([t.desc_a.local[ia], t.desc_a.semantic[ia]], axis=1))
        rows_b.append(np.concatenate([t.desc_b.local[jb], t.desc_b.semantic[jb]], axis=1))
    if not rows_a:
        raise UsageError("no tasks with local+semantic descriptors on both sides")
    return np.vstack(rows_a).astype(np.float64), np.vstack(rows_b).astype(np.float64)


def cmd_train(args, settings: Settings) -> int:
    tasks, _ = load_task_dir(Path(args.tasks))
    if args.target == "fusion":
        cfg = _train_cfg(settings, args, default_epochs=30)
        xa, xb = fusion_pairs_from_tasks(tasks)
        fusion, curve = descriptors.train_fusion(xa, xb, cfg)
        descriptors.save_fusion(fusion, args.out)
        metrics = {"loss_curve": curve, "n_pairs": int(xa.shape[0])}
    else:
        if args.stage == "finetune" and not args.init:
            raise UsageError("--stage finetune requires --init MODEL")
        cfg = _train_cfg(settings, args, default_epochs=150, default_batch=256)
        corruption = settings.get("gccm", "corruption", args.corruption, 10.0 * synthdata.GT_TOLERANCE)
        feats, labels = gccm.make_gccm_training_set(
            tasks, n_pos=args.n_pos, n_neg=args.n_neg, corruption=corruption, seed=args.seed
        )
        init_model = gccm.load_gccm(args.init) if args.init else None
        model, metrics = gccm.train_gccm(feats, labels, cfg, init_model=init_model)
        gccm.save_gccm(model, args.out)
    metrics_path = Path(args.out).with_suffix(".metrics.json")
    with open(metrics_path, "w", encoding="utf-8") as f:
        json.dump(metrics, f, sort_keys=True)
        f.write("\n")
    log.info("wrote %s and %s", args.out, metrics_path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# match / verify / eval
# ---------------------------------------------------------------------------


def _load_set_for_matching(path: str, map_path: str | None, fusion) -> descriptors.DescriptorSet:
    ds = descriptors.read_descriptors(path)
    if fusion is not None:
        if ds.semantic is None:
            if map_path is None:
                raise UsageError(f"{path} has no semantic vectors; pass a feature map to fuse")
            ds = descriptors.attach_semantic(ds, descriptors.read_feature_map(map_path))
        ds = descriptors.fuse(ds, fusion)
    return ds


def cmd_match(args, settings: Settings) -> int:
    fusion = descriptors.load_fusion(args.fusion) if args.fusion else None
    if args.local_only and fusion is not None:
        raise UsageError("--local-only and --fusion are mutually exclusive")
    ds_a = _load_set_for_matching(args.a, args.map_a, fusion)
    ds_b = _load_set_for_matching(args.b, args.map_b, fusion)
    mode = "local" if args.local_only else ("fused" if fusion is not None else "auto")
    result = matcher.match_initial(
        ds_a,
        ds_b,
        temperature=settings.get("matcher", "temperature", args.temperature, matcher.DEFAULT_TEMPERATURE),
        min_score=settings.get("matcher", "min_score", args.min_score, matcher.DEFAULT_MIN_SCORE),
        descriptor=mode,
    )
    matcher.save_matches(result, args.out)
    log.info("wrote %d matches to %s", len(result), args.out)
    return EXIT_OK


def cmd_verify(args, settings: Settings) -> int:
    matches = matcher.load_matches(args.matches)
    ds_a = descriptors.read_descriptors(args.a)
    ds_b = descriptors.read_descriptors(args.b)
    if args.method == "ransac":
        cfg = baseline.RansacConfig(
            iterations=settings.get("ransac", "iterations", args.ransac_iterations, 1000),
            inlier_threshold=settings.get("ransac", "inlier_threshold", args.ransac_threshold, 3.0),
            min_inliers=settings.get("ransac", "min_inliers", None, 4),
            seed=args.seed,
        )
        result = baseline.ransac_similarity(matches, ds_a.keypoints, ds_b.keypoints, cfg)
        payload = {
            "method": "ransac",
            "n_consensus": result.n_consensus,
            "no_consensus": result.no_consensus,
            "model": None if result.model is None else geometry.transform_to_dict(result.model),
            "final": result.inliers.to_dict(),
        }
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(payload, f, sort_keys=True)
            f.write("\n")
        log.info("ransac kept %d / %d matches", len(result.inliers), len(matches))
        return EXIT_OK
    if not args.model:
        raise UsageError("verify --method gccm requires --model")
    model = gccm.load_gccm(args.model)
    if args.image_size is not None:
        size = args.image_size
    else:
        coords = np.vstack([ds_a.keypoints, ds_b.keypoints])
        size = int(np.ceil(coords.max())) + 1 if len(coords) else 1
    tau = settings.get("gccm", "tau", args.tau, gccm.DEFAULT_TAU)
    result = gccm.verify(
        model,
        matches,
        ds_a.keypoints,
        ds_b.keypoints,
        size,
        tau=tau,
        seed=args.seed,
        min_coverage=settings.get("gccm", "min_coverage", None, gccm.DEFAULT_MIN_COVERAGE),
    )
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(result.to_dict(), f, sort_keys=True)
        f.write("\n")
    log.info("kept %d / %d matches at tau=%.3f", len(result.final), len(matches), tau)
    return EXIT_OK


def cmd_eval(args, settings: Settings) -> int:
    task = synthdata.load_task(Path(args.task))
    payload = json.loads(Path(args.matches).read_text(encoding="utf-8"))
    if "final" in payload:  # verification result; evaluate the pruned set
        matches = matcher.MatchSet.from_dict(payload["final"])
    else:
        matches = matcher.MatchSet.from_dict(payload)
    labels = matcher.apply_gt_labels(matches, task)
    prec, n_inl = evalmetrics.precision(matches, labels)
    tre = evalmetrics.compute_tre(matches, task, args.estimator, args.tre_lambda)
    report = {
        "task_id": task.task_id,
        "n_predicted": len(matches),
        "precision": prec,
        "n_inliers": n_inl,
        "tre_gt": tre.tre_gt if tre.defined else None,
        "tre_pred": tre.tre_pred if tre.defined else None,
        "tre_undefined_reason": None if tre.defined else tre.reason,
        "unit": "px",
    }
    text = json.dumps(report, sort_keys=True, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def make_bench_tasks(suite: str, count: int, seed: int, settings: Settings, workers: int = 1):
    scene = _scene_cfg(settings, argparse.Namespace(size=None, neurons=None))
    frac = 0.10 if suite == "strong-warp" else 0.05
    deform = synthdata.DeformConfig(
        grid=4, displacement_sigma=frac * scene.image_size, max_rotation=0.05, max_scale_jitter=0.03
    )
    jobs = [(scene, deform, seed + 10_000 + i) for i in range(count)]
    if workers <= 1:
        groups = [_bench_task_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(_bench_task_job, jobs))
    return [t for g in groups for t in g]


def _bench_task_job(job):
    scene, deform, seed = job
    return synthdata.make_crossmodal_task(scene, deform, aug=1, seed=seed)


def cmd_bench(args, settings: Settings) -> int:
    if args.suite == "kernels":
        report = benchkernels.run_kernel_bench(repeats=args.repeats)
        sys.stdout.write(benchkernels.format_kernel_report(report))
        if args.out:
            Path(args.out).write_text(json.dumps(report, sort_keys=True, indent=1) + "\n", encoding="utf-8")
        return EXIT_OK
    models = evalmetrics.PipelineModels(
        fusion=descriptors.load_fusion(args.fusion) if args.fusion else None,
        gccm=gccm.load_gccm(args.gccm) if args.gccm else None,
    )
    method_names = args.methods.split(",") if args.methods else list(evalmetrics.DEFAULT_METHODS)
    unknown = [m for m in method_names if m not in evalmetrics.DEFAULT_METHODS]
    if unknown:
        raise UsageError(f"unknown methods: {', '.join(unknown)}")
    methods = {m: evalmetrics.DEFAULT_METHODS[m] for m in method_names}
    needs_gccm = any(s.verifier == "gccm" for s in methods.values())
    needs_fusion = any(s.descriptor == "fused" for s in methods.values())
    if needs_gccm and models.gccm is None:
        raise UsageError("selected methods need --gccm MODEL")
    if needs_fusion and models.fusion is None:
        raise UsageError("selected methods need --fusion MODEL")
    if args.tasks:
        tasks, _ = load_task_dir(Path(args.tasks))
        if not tasks:
            raise UsageError(f"no tasks found under {args.tasks}")
    else:
        count = settings.get("bench", "count", args.count, 100)
        tasks = make_bench_tasks(args.suite, count, args.seed, settings, args.workers)
    params = evalmetrics.BenchParams(
        temperature=settings.get("matcher", "temperature", args.temperature, matcher.DEFAULT_TEMPERATURE),
        min_score=settings.get("matcher", "min_score", args.min_score, matcher.DEFAULT_MIN_SCORE),
        tau=settings.get("gccm", "tau", args.tau, gccm.DEFAULT_TAU),
        ransac_iterations=settings.get("ransac", "iterations", None, 1000),
        ransac_threshold=settings.get("ransac", "inlier_threshold", None, 3.0),
    )
    report = evalmetrics.benchmark(
        tasks,
        models,
        methods=methods,
        params=params,
        seed=args.seed,
        timing=args.timing == "on",
        suite_name=args.suite,
    )
    sys.stdout.write(evalmetrics.format_report(report, args.format))
    if args.out:
        Path(args.out).write_text(evalmetrics.report_to_json(report), encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------


def _matrix_summary(name: str, mat) -> dict | None:
    if mat is None:
        return None
    return {
        "shape": list(mat.shape),
        "dtype": str(mat.dtype),
        "sha256": hashlib.sha256(np.ascontiguousarray(mat).tobytes()).hexdigest(),
    }


def cmd_inspect(args, settings: Settings) -> int:
    path = Path(args.path)
    raw = path.read_bytes()
    if raw[:4] == descriptors.NMDS_MAGIC:
        ds = descriptors.read_descriptors(path)
        out = {
            "format": "nmds",
            "version": descriptors.NMDS_VERSION,
            "n": len(ds),
            "d_local": 0 if ds.local is None else ds.local.shape[1],
            "d_sem": 0 if ds.semantic is None else ds.semantic.shape[1],
            "d_fused": 0 if ds.fused is None else ds.fused.shape[1],
            "keypoints": ds.keypoints.tolist() if args.full else ds.keypoints[:8].tolist(),
            "local": _matrix_summary("local", ds.local),
            "semantic": _matrix_summary("semantic", ds.semantic),
            "fused": _matrix_summary("fused", ds.fused),
        }
        if args.full:
            for name in ("local", "semantic", "fused"):
                mat = getattr(ds, name)
                if mat is not None:
                    out[name]["data"] = mat.tolist()
        if args.roundtrip:
            out["roundtrip_bitexact"] = descriptors.descriptors_to_bytes(ds) == raw
    elif raw[:4] == descriptors.NMFM_MAGIC:
        fm = descriptors.read_feature_map(path)
        out = {
            "format": "nmfm",
            "version": descriptors.NMFM_VERSION,
            "height": fm.height,
            "width": fm.width,
            "channels": fm.channels,
            "stride": fm.stride,
            "data": _matrix_summary("data", fm.data),
        }
        if args.sample:
            x, y = (float(v) for v in args.sample.split(","))
            out["sample_at"] = [x, y]
            out["sample"] = [float(v) for v in descriptors.bilinear_sample(fm, (x, y))]
        if args.full:
            out["data"]["values"] = fm.data.tolist()
    elif path.suffix == ".json":
        out = {"format": "json", "content": json.loads(raw.decode("utf-8"))}
    elif path.suffix == ".png":
        img = synthdata._read_png16(path)
        out = {
            "format": "png16",
            "height": img.shape[0],
            "width": img.shape[1],
            "min": float(img.min()),
            "max": float(img.max()),
        }
    else:
        raise descriptors.FormatError(f"unrecognized file {path}", 0)
    sys.stdout.write(json.dumps(out, sort_keys=True, indent=1) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neurmatch", description=__doc__)
    p.add_argument("--version", action="store_true", help="print tool and file-format versions")
    p.add_argument("--config", help="INI config file (see SCHEMA sections)")
    p.add_argument("--log-level", default="WARNING", help="stderr logging level")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("gen", help="generate synthetic task directories")
    gsub = g.add_subparsers(dest="kind", required=True)
    gp = gsub.add_parser("pretrain", help="single-modality warped pairs")
    gp.add_argument("--count", type=int, default=2000)
    gc = gsub.add_parser("crossmodal", help="two-modality pairs expanded by augmentation")
    gc.add_argument("--pairs", type=int, default=12)
    gc.add_argument("--aug", type=int, default=50, help="tasks per pair (multiples of 5 use 5 contrast variants)")
    for gx in (gp, gc):
        gx.add_argument("--out", required=True)
        gx.add_argument("--seed", type=int, default=0)
        gx.add_argument("--size", type=int, default=None, help="image size override")
        gx.add_argument("--neurons", type=int, default=None)
        gx.add_argument("--displacement", type=float, default=None, help="control displacement sigma (px)")
        gx.add_argument("--grid", type=int, default=None)
        gx.add_argument("--workers", type=int, default=1)
        gx.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train the fusion or confidence model")
    tsub = t.add_subparsers(dest="target", required=True)
    tf = tsub.add_parser("fusion")
    tg = tsub.add_parser("gccm")
    tg.add_argument("--stage", choices=["pretrain", "finetune"], default="pretrain")
    tg.add_argument("--init", help="model to continue from (required for finetune)")
    tg.add_argument("--n-pos", type=int, default=8000)
    tg.add_argument("--n-neg", type=int, default=8000)
    tg.add_argument("--corruption", type=float, default=None, help="negative jitter magnitude (px)")
    for tx in (tf, tg):
        tx.add_argument("--tasks", required=True)
        tx.add_argument("--out", required=True)
        tx.add_argument("--seed", type=int, default=0)
        tx.add_argument("--epochs", type=int, default=None)
        tx.add_argument("--lr", type=float, default=None)
        tx.add_argument("--batch-size", type=int, default=None)
        tx.set_defaults(func=cmd_train)

    m = sub.add_parser("match", help="dual-softmax putative matching of two NMDS files")
    m.add_argument("--a", required=True)
    m.add_argument("--b", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--fusion", help="fusion model for hybrid descriptors")
    m.add_argument("--map-a", help="NMFM map to sample if --a lacks semantic vectors")
    m.add_argument("--map-b")
    m.add_argument("--local-only", action="store_true")
    m.add_argument("--temperature", type=float, default=None)
    m.add_argument("--min-score", type=float, default=None)
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_match)

    v = sub.add_parser("verify", help="filter matches (confidence model or RANSAC baseline)")
    v.add_argument("--method", choices=["gccm", "ransac"], default="gccm")
    v.add_argument("--model", help="confidence model (required for --method gccm)")
    v.add_argument("--matches", required=True)
    v.add_argument("--a", required=True)
    v.add_argument("--b", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--tau", type=float, default=None)
    v.add_argument("--image-size", type=int, default=None)
    v.add_argument("--ransac-iterations", type=int, default=None)
    v.add_argument("--ransac-threshold", type=float, default=None)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("eval", help="score a match file against a task's ground truth")
    e.add_argument("--task", required=True)
    e.add_argument("--matches", required=True)
    e.add_argument("--out")
    e.add_argument("--estimator", choices=["tps", "similarity"], default="tps")
    e.add_argument("--tre-lambda", type=float, default=1.0)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="run a benchmark suite")
    b.add_argument("--suite", choices=["default", "strong-warp", "kernels"], default="default")
    b.add_argument("--out")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--count", type=int, default=None, help="number of held-out tasks")
    b.add_argument("--tasks", help="evaluate a generated task directory instead")
    b.add_argument("--fusion")
    b.add_argument("--gccm")
    b.add_argument("--methods", help="comma-separated subset of the registry")
    b.add_argument("--tau", type=float, default=None)
    b.add_argument("--temperature", type=float, default=None)
    b.add_argument("--min-score", type=float, default=None)
    b.add_argument("--timing", choices=["on", "off"], default="on")
    b.add_argument("--format", choices=["table", "json", "csv"], default="table")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--repeats", type=int, default=5, help="kernels suite repetitions")
    b.set_defaults(func=cmd_bench)

    i = sub.add_parser("inspect", help="dump any artifact file as JSON")
    i.add_argument("path")
    i.add_argument("--full", action="store_true", help="include full matrix payloads")
    i.add_argument("--sample", help="X,Y image position to bilinearly sample (NMFM)")
    i.add_argument("--roundtrip", action="store_true", help="check write(read(file)) is bit-identical")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING), stream=sys.stderr)
    if args.version:
        print(f"neurmatch {__version__}")
        for name, ver in FORMAT_VERSIONS.items():
            print(f"format {name}: v{ver}")
        return EXIT_OK
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        settings = Settings(args.config)
        return args.func(args, settings)
    except UsageError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (descriptors.FormatError, FileNotFoundError, json.JSONDecodeError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (
        geometry.DegenerateConfigurationError,
        nn.DivergenceError,
        gccm.InsufficientMatchesError,
        FloatingPointError,
    ) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
