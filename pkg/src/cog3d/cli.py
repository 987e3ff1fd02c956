"""Command-line entry points: synth, train, layout-train, detect,
cascade-train, eval.

Every text output begins with a provenance header line (tool version,
configuration digest, seed). Exit codes: 0 on success, a distinct
nonzero code per error class (see EXIT_CODES).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cascade import detections_to_text
from .descriptors import FeatureConfig, SceneContext
from .errors import (
    Cog3dError,
    CountMismatch,
    InvalidSpec,
    Malformed,
    MissingModel,
    NoAnnotations,
    NoCandidates,
    NoGroundTruth,
    NonConvergence,
    NoPositiveExamples,
    SingleClass,
    VersionMismatch,
)
from .evaluation import (
    ap_table_csv,
    average_precision,
    evaluate_layouts,
    match_detections,
    pr_curve,
)
from .geometry import OrientedCuboid
from .learn import TrainConfig
from .persistence import (
    config_digest,
    load_kernel_model,
    load_linear_model,
    save_kernel_model,
    save_linear_model,
)
from .pipeline import (
    LayoutOptions,
    ProposalOptions,
    cascade_labels,
    detect_scene,
    train_cascade,
    train_detector,
    train_detector_latent,
    train_layout_model,
)
from .proposals import Detection, compute_size_quantiles
from .scene import SceneRecord, load_manifest, load_scene, save_manifest, save_scene
from .synth import PlacedObject, SyntheticSceneSpec, synthesize_scene

EXIT_CODES: dict[type, int] = {
    InvalidSpec: 2,
    NoPositiveExamples: 3,
    MissingModel: 4,
    CountMismatch: 5,
    Malformed: 6,
    VersionMismatch: 7,
    NoAnnotations: 8,
    NonConvergence: 9,
    NoCandidates: 10,
    NoGroundTruth: 11,
    SingleClass: 12,
}


def _provenance(seed: int, config: dict) -> str:
    digest = hashlib.sha256(
        json.dumps(config, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]
    return f"# cog3d {__version__} config={digest} seed={seed}\n"


def _parse_object(d: dict) -> PlacedObject:
    return PlacedObject(
        category=d["category"],
        size=tuple(d["size"]),
        position=tuple(d["position"]),
        yaw=float(d.get("yaw", 0.0)),
        surface_frac=float(d.get("surface_frac", 1.0)),
        texture=d.get("texture", "checker"),
        children=[_parse_object(c) for c in d.get("children", [])],
    )


def cmd_synth(args) -> int:
    with open(args.spec) as f:
        spec = json.load(f)
    if "scenes" not in spec or not isinstance(spec["scenes"], list):
        raise InvalidSpec("spec file must contain a 'scenes' list")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, sd in enumerate(spec["scenes"]):
        try:
            scene_spec = SyntheticSceneSpec(
                scene_id=sd["scene_id"],
                room=tuple(sd["room"]),
                camera_eye=tuple(sd["camera_eye"]),
                camera_target=tuple(sd["camera_target"]),
                objects=[_parse_object(o) for o in sd.get("objects", [])],
                image_size=tuple(sd.get("image_size", (160, 120))),
                focal=float(sd.get("focal", 130.0)),
                texture_seed=int(sd.get("texture_seed", args.seed + i)),
            )
        except (KeyError, TypeError) as e:
            raise InvalidSpec(f"scene {i}: {e}") from e
        record = synthesize_scene(scene_spec)
        rel = f"{record.scene_id}.c3s"
        save_scene(record, out_dir / rel)
        entries.append((record.scene_id, sd.get("split", "train"), rel))
    save_manifest(entries, out_dir / "manifest.tsv")
    print(f"wrote {len(entries)} scenes to {out_dir}")
    return 0


def _load_records(manifest: str, split: str | None) -> list[SceneRecord]:
    records = []
    for scene_id, sp, path in load_manifest(manifest):
        if split is None or sp == split:
            records.append(load_scene(path))
    return records


def _feature_config(args) -> FeatureConfig:
    return FeatureConfig(
        use_geometry=not args.no_geometry,
        use_cog=not args.no_cog,
        use_view=not args.no_view,
        expanded=not args.no_expanded,
    )


def _train_config(args, latent: bool = False) -> TrainConfig:
    return TrainConfig(
        C=args.C,
        eps_cp=args.eps_cp,
        max_iterations=args.max_iterations,
        latent=latent,
        seed=args.seed,
    )


def _proposal_options(args) -> ProposalOptions:
    return ProposalOptions(
        step=args.step,
        n_orientations=args.orientations,
        full_circle=not args.half_circle,
    )


def cmd_train(args) -> int:
    records = _load_records(args.manifest, args.split)
    fconfig = _feature_config(args)
    opts = _proposal_options(args)
    if args.latent:
        if not args.base_model:
            raise MissingModel(
                "latent training requires --base-model (pre-trained plain detector)"
            )
        base = load_linear_model(args.base_model)
        tconfig = _train_config(args, latent=True)
        model, result = train_detector_latent(
            records, args.category, base, tconfig, opts
        )
        log = [
            f"cccp rounds={result.rounds}",
            "objectives=" + ",".join(f"{o:.6f}" for o in result.objectives),
        ]
    else:
        tconfig = _train_config(args)
        model, result = train_detector(records, args.category, fconfig, tconfig, opts)
        log = [
            f"converged={result.converged} iterations={result.iterations}",
            "objectives=" + ",".join(f"{o:.6f}" for o in result.objectives),
        ]
    save_linear_model(model, args.out)
    header = _provenance(
        args.seed,
        {"cmd": "train", "digest": config_digest(model.feature_config, tconfig)},
    )
    sys.stdout.write(header + "\n".join(log) + "\n")
    return 0


def cmd_layout_train(args) -> int:
    records = _load_records(args.manifest, args.split)
    tconfig = _train_config(args)
    lopts = LayoutOptions(sweep_step=args.sweep_step, max_scored=args.max_scored)
    model, result = train_layout_model(records, tconfig, lopts)
    save_linear_model(model, args.out)
    header = _provenance(args.seed, {"cmd": "layout-train"})
    sys.stdout.write(
        header
        + f"converged={result.converged} iterations={result.iterations}\n"
        + "objectives=" + ",".join(f"{o:.6f}" for o in result.objectives) + "\n"
    )
    return 0


def _load_models(paths: list[str]):
    models = {}
    for p in paths:
        m = load_linear_model(p)
        models[m.category] = m
    return models


def _detection_sizes(models, records):
    sizes = {}
    for cat in models:
        anns = [c for r in records for k, c in r.annotations if k == cat]
        if anns:
            sizes[cat] = compute_size_quantiles(anns)
        else:
            raise NoAnnotations(f"no annotations to derive sizes for {cat!r}")
    return sizes


def cmd_detect(args) -> int:
    records = _load_records(args.manifest, args.split)
    train_records = _load_records(args.manifest, "train")
    models = _load_models(args.models)
    sizes = _detection_sizes(models, train_records or records)
    layout_model = load_linear_model(args.layout_model) if args.layout_model else None
    cascade_models = None
    if args.cascade_models:
        cascade_models = {}
        for p in args.cascade_models:
            m, cat = load_kernel_model(p)
            cascade_models[cat] = m
    opts = _proposal_options(args)
    lopts = LayoutOptions(sweep_step=args.sweep_step, max_scored=args.max_scored)
    small = frozenset(args.small_categories or [])
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = _provenance(args.seed, {"cmd": "detect", "models": sorted(models)})
    for record in records:
        det_set = detect_scene(
            record,
            models,
            sizes,
            opts,
            layout_model=layout_model,
            layout_opts=lopts,
            cascade_models=cascade_models,
            small_categories=small,
        )
        c = det_set.layout
        layout_line = "layout %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f\n" % (
            c.center[0], c.center[1], c.center[2], c.yaw,
            c.size[0], c.size[1], c.size[2], det_set.layout_score,
        )
        (out_dir / f"{record.scene_id}.det.txt").write_text(
            header + layout_line + detections_to_text(det_set)
        )
    print(f"wrote detections for {len(records)} scenes to {out_dir}")
    return 0


def _parse_detections(path: Path):
    dets: list[Detection] = []
    layout = None
    for line in path.read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "layout":
            vals = [float(v) for v in parts[1:]]
            layout = OrientedCuboid(center=tuple(vals[0:3]), yaw=vals[3], size=tuple(vals[4:7]))
            continue
        if len(parts) != 12:
            raise Malformed(f"bad detection line in {path}: {line!r}")
        cat = parts[0]
        vals = [float(v) for v in parts[1:]]
        dets.append(
            Detection(
                category=cat,
                cuboid=OrientedCuboid(
                    center=tuple(vals[0:3]), yaw=vals[3], size=tuple(vals[4:7])
                ),
                score=vals[8],
                cascade_score=vals[9],
                surface_slice=int(vals[7]),
            )
        )
    return dets, layout


def cmd_eval(args) -> int:
    records = _load_records(args.manifest, args.split)
    det_dir = Path(args.detections)
    per_cat_flags: dict[str, list] = {}
    per_cat_gt: dict[str, int] = {}
    layout_preds, layout_gts, poses, intrinsics = [], [], [], []
    for record in records:
        path = det_dir / f"{record.scene_id}.det.txt"
        if not path.exists():
            raise CountMismatch(f"missing detections for scene {record.scene_id}")
        dets, layout = _parse_detections(path)
        cats = sorted({k for k, _ in record.annotations} | {d.category for d in dets})
        for cat in cats:
            gts = [c for k, c in record.annotations if k == cat]
            cat_dets = [d for d in dets if d.category == cat]
            flags, scores = match_detections(cat_dets, gts)
            per_cat_flags.setdefault(cat, []).append((flags, scores))
            per_cat_gt[cat] = per_cat_gt.get(cat, 0) + len(gts)
        if layout is not None and record.layout is not None:
            layout_preds.append(layout)
            layout_gts.append(record.layout_cuboid())
            poses.append(record.pose)
            intrinsics.append(record.intrinsics)
    aps = {}
    pr_blocks = []
    for cat in sorted(per_cat_flags):
        flags = np.concatenate([f for f, _ in per_cat_flags[cat]])
        scores = np.concatenate([s for _, s in per_cat_flags[cat]])
        order = np.argsort(-scores, kind="stable")
        flags, scores = flags[order], scores[order]
        n_gt = per_cat_gt[cat]
        aps[cat] = average_precision(flags, n_gt) if n_gt else 0.0
        if n_gt:
            curve = pr_curve(flags, n_gt, scores)
            pr_blocks.append(f"# pr {cat}\n" + curve.to_csv())
    header = _provenance(args.seed, {"cmd": "eval"})
    out = header + ap_table_csv(aps)
    if layout_preds:
        mean_iou = evaluate_layouts(layout_preds, layout_gts, poses, intrinsics)
        out += f"layout_mean_free_space_iou,{mean_iou:.6f}\n"
    out += "".join(pr_blocks)
    if args.out:
        Path(args.out).write_text(out)
    sys.stdout.write(out)
    return 0


def cmd_cascade_train(args) -> int:
    records = _load_records(args.manifest, args.split)
    models = _load_models(args.models)
    sizes = _detection_sizes(models, records)
    layout_model = load_linear_model(args.layout_model) if args.layout_model else None
    opts = _proposal_options(args)
    lopts = LayoutOptions(sweep_step=args.sweep_step, max_scored=args.max_scored)
    small = frozenset(args.small_categories or [])
    categories = tuple(sorted(models))
    det_sets, gt_by_scene = [], []
    for record in records:
        det_sets.append(
            detect_scene(
                record, models, sizes, opts,
                layout_model=layout_model, layout_opts=lopts,
                small_categories=small,
            )
        )
        by_cat: dict[str, list] = {}
        for cat, cub in record.annotations:
            by_cat.setdefault(cat, []).append(cub)
        gt_by_scene.append(by_cat)
    kernel_models = train_cascade(
        det_sets, gt_by_scene, categories,
        gamma=args.gamma, c=args.svm_c, small_categories=small,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for cat, model in sorted(kernel_models.items()):
        save_kernel_model(model, out_dir / f"{cat}.cascade.c3m", category=cat)
    print(f"wrote {len(kernel_models)} cascade models to {out_dir}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads (scene-level parallelism)")


def _add_proposal_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--step", type=float, default=0.5, help="plan-view grid step (m)")
    p.add_argument("--orientations", type=int, default=4)
    p.add_argument("--half-circle", action="store_true",
                   help="restrict proposal yaw to [0, pi)")


def _add_feature_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--no-geometry", action="store_true")
    p.add_argument("--no-cog", action="store_true")
    p.add_argument("--no-view", action="store_true")
    p.add_argument("--no-expanded", action="store_true")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--eps-cp", type=float, default=1e-3)
    p.add_argument("--max-iterations", type=int, default=100)


def _add_layout_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sweep-step", type=float, default=0.2)
    p.add_argument("--max-scored", type=int, default=400)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cog3d",
        description="Oriented-cuboid 3D detection and Manhattan layout "
        "prediction from RGB-D scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render synthetic scenes from a JSON spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a category detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--category", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--latent", action="store_true")
    p.add_argument("--base-model", help="pre-trained plain model (latent init)")
    _add_feature_flags(p)
    _add_train_flags(p)
    _add_proposal_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("layout-train", help="train the layout scorer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    _add_train_flags(p)
    _add_layout_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_layout_train)

    p = sub.add_parser("detect", help="run detection over a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--layout-model")
    p.add_argument("--cascade-models", nargs="*")
    p.add_argument("--small-categories", nargs="*")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="test")
    _add_proposal_flags(p)
    _add_layout_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score detections against annotations")
    p.add_argument("--detections", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--split", default="test")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cascade-train", help="train second-stage rescoring models")
    p.add_argument("--manifest", required=True)
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--layout-model")
    p.add_argument("--small-categories", nargs="*")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--gamma", type=float)
    p.add_argument("--svm-c", type=float, default=10.0)
    _add_proposal_flags(p)
    _add_layout_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_cascade_train)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Cog3dError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CODES.get(type(e), 1)


if __name__ == "__main__":
    sys.exit(main())
