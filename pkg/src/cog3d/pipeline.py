"""End-to-end drivers tying the library together: building training
examples from annotated scenes, training detectors (plain and latent),
training the layout scorer and cascade models, and running detection on
a scene."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cascade import (
    DetectionSet,
    cascade_rescore,
    layout_context_features,
    object_context_features,
)
from .descriptors import (
    N_SURFACE_SLICES,
    FeatureConfig,
    SceneContext,
    VoxelGridSpec,
    cuboid_feature_vector,
    extract_features,
    extract_voxel_blocks,
    surface_slice_from_blocks,
)
from .errors import MissingModel, NoPositiveExamples
from .geometry import OrientedCuboid, cuboid_iou_3d, detection_loss
from .layout import (
    enumerate_layout_hypotheses,
    free_space_iou,
    layout_features,
    layout_loss,
)
from .learn import (
    CCCPResult,
    KernelSVMModel,
    LatentExample,
    LinearDetectorModel,
    StructuredExample,
    TrainConfig,
    TrainResult,
    train_latent_cccp,
    train_nslack,
    train_rbf_svm,
)
from .pointcloud import ScenePointCloud
from .proposals import (
    Detection,
    ProposalGrid,
    SizeQuantiles,
    compute_size_quantiles,
    generate_floor_proposals,
    generate_surface_proposals,
    nms_3d,
)
from .scene import SceneRecord

FLOOR_QUANTILE = 0.001


@dataclass(frozen=True)
class ProposalOptions:
    """Proposal discretization used by training and detection."""

    step: float = 0.5
    n_orientations: int = 4
    full_circle: bool = True
    unique_sizes: bool = True
    nms_threshold: float = 0.25


def ground_height(cloud: ScenePointCloud) -> float:
    return float(np.quantile(cloud.points[:, 2], FLOOR_QUANTILE))


def scene_proposals(
    ctx: SceneContext,
    sizes: SizeQuantiles,
    opts: ProposalOptions,
    extra: list[OrientedCuboid] = (),
) -> list[OrientedCuboid]:
    grid = ProposalGrid(
        step=opts.step,
        n_orientations=opts.n_orientations,
        ground_z=ground_height(ctx.cloud),
        full_circle=opts.full_circle,
    )
    props = generate_floor_proposals(
        ctx.cloud.points, sizes, grid, unique_sizes=opts.unique_sizes
    )
    return props + list(extra)


def featurize_cuboids(
    ctx: SceneContext, cuboids: list[OrientedCuboid], config: FeatureConfig
) -> np.ndarray:
    """(n, d) float32 feature matrix (non-latent configs)."""
    if config.latent:
        raise ValueError("use latent_feature_matrix for latent configs")
    d = config.feature_length()
    out = np.zeros((len(cuboids), d), dtype=np.float32)
    for i, b in enumerate(cuboids):
        out[i] = cuboid_feature_vector(ctx, b, config)
    return out


def latent_feature_matrix(
    ctx: SceneContext, b: OrientedCuboid, config: FeatureConfig
) -> np.ndarray:
    """(7, d) feature rows for one cuboid, one per surface height."""
    if not config.latent:
        raise ValueError("latent config required")
    base = extract_features(ctx, b, replace(config, latent=False)).concat()
    grid = VoxelGridSpec(config.grid.nx, config.grid.ny, N_SURFACE_SLICES)
    blocks = extract_voxel_blocks(ctx, b, grid, config)
    rows = []
    for h in range(1, N_SURFACE_SLICES + 1):
        rows.append(np.concatenate([base, surface_slice_from_blocks(blocks, grid, h)]))
    return np.array(rows, dtype=np.float32)


def _augment_present(features: np.ndarray) -> np.ndarray:
    """Append the presence-indicator column (1 for every present cuboid;
    the absent configuration maps to the all-zero vector)."""
    return np.hstack([features, np.ones((features.shape[0], 1), dtype=features.dtype)])


def _category_instances(record: SceneRecord, category: str) -> list[OrientedCuboid]:
    return [c for cat, c in record.annotations if cat == category]


def _instance_contexts(
    ctx: SceneContext, instances: list[OrientedCuboid]
) -> list[SceneContext]:
    """One context per instance, removing points inside the others."""
    if len(instances) <= 1:
        return [ctx] * len(instances)
    out = []
    for i, _ in enumerate(instances):
        mask = np.zeros(len(ctx.cloud.points), dtype=bool)
        for j, other in enumerate(instances):
            if j == i:
                continue
            q = other.to_canonical(ctx.cloud.points)
            half = np.asarray(other.size) / 2.0
            mask |= np.all(np.abs(q) <= half, axis=1)
        out.append(ctx.without_points(mask))
    return out


def build_detection_examples(
    records: list[SceneRecord],
    category: str,
    config: FeatureConfig,
    sizes: SizeQuantiles,
    opts: ProposalOptions,
    contexts: list[SceneContext] | None = None,
) -> list[StructuredExample]:
    """Structured examples with presence-augmented features: one example
    per annotated instance (other instances' points removed) and one per
    category-free scene."""
    examples: list[StructuredExample] = []
    for k, record in enumerate(records):
        ctx = contexts[k] if contexts is not None else SceneContext.from_record(record)
        gts = _category_instances(record, category)
        props = scene_proposals(ctx, sizes, opts, extra=gts)
        if not gts:
            feats = _augment_present(featurize_cuboids(ctx, props, config))
            losses = np.array([detection_loss(None, p) for p in props])
            examples.append(
                StructuredExample(
                    gt_feature=np.zeros(feats.shape[1]),
                    candidate_features=feats,
                    candidate_losses=losses,
                )
            )
            continue
        for gt, ictx in zip(gts, _instance_contexts(ctx, gts)):
            feats = _augment_present(featurize_cuboids(ictx, props, config))
            losses = np.array([detection_loss(gt, p) for p in props])
            # The "absent" configuration as an explicit candidate.
            feats = np.vstack([feats, np.zeros((1, feats.shape[1]), dtype=feats.dtype)])
            losses = np.append(losses, detection_loss(gt, None))
            gt_feat = np.append(
                cuboid_feature_vector(ictx, gt, config).astype(np.float64), 1.0
            )
            examples.append(
                StructuredExample(
                    gt_feature=gt_feat,
                    candidate_features=feats,
                    candidate_losses=losses,
                )
            )
    return examples


def train_detector(
    records: list[SceneRecord],
    category: str,
    config: FeatureConfig = FeatureConfig(),
    train_config: TrainConfig = TrainConfig(),
    opts: ProposalOptions = ProposalOptions(),
    sizes: SizeQuantiles | None = None,
    contexts: list[SceneContext] | None = None,
) -> tuple[LinearDetectorModel, TrainResult]:
    annotations = [c for r in records for cat, c in r.annotations if cat == category]
    if not annotations:
        raise NoPositiveExamples(f"no annotations for category {category!r}")
    if sizes is None:
        sizes = compute_size_quantiles(annotations)
    examples = build_detection_examples(records, category, config, sizes, opts, contexts)
    result = train_nslack(examples, train_config)
    model = LinearDetectorModel(
        category=category,
        weights=result.weights[:-1].copy(),
        bias=float(result.weights[-1]),
        feature_config=config,
        train_config=train_config,
    )
    return model, result


def build_latent_examples(
    records: list[SceneRecord],
    category: str,
    config: FeatureConfig,
    sizes: SizeQuantiles,
    opts: ProposalOptions,
    contexts: list[SceneContext] | None = None,
) -> list[LatentExample]:
    examples: list[LatentExample] = []
    for k, record in enumerate(records):
        ctx = contexts[k] if contexts is not None else SceneContext.from_record(record)
        gts = _category_instances(record, category)
        props = scene_proposals(ctx, sizes, opts, extra=gts)
        if not gts:
            feats = _augment_present(
                np.vstack([latent_feature_matrix(ctx, p, config) for p in props])
            )
            examples.append(
                LatentExample(
                    gt_features=np.zeros((1, feats.shape[1])),
                    candidate_features=feats,
                    candidate_losses=np.ones(feats.shape[0]),
                    is_positive=False,
                )
            )
            continue
        for gt, ictx in zip(gts, _instance_contexts(ctx, gts)):
            cand_rows = []
            cand_losses = []
            for p in props:
                rows = latent_feature_matrix(ictx, p, config)
                cand_rows.append(rows)
                cand_losses.extend([detection_loss(gt, p)] * rows.shape[0])
            feats = _augment_present(np.vstack(cand_rows))
            feats = np.vstack([feats, np.zeros((1, feats.shape[1]), dtype=feats.dtype)])
            cand_losses.append(detection_loss(gt, None))
            gt_feats = _augment_present(
                latent_feature_matrix(ictx, gt, config).astype(np.float64)
            )
            examples.append(
                LatentExample(
                    gt_features=gt_feats,
                    candidate_features=feats,
                    candidate_losses=np.array(cand_losses),
                    is_positive=True,
                )
            )
    return examples


def train_detector_latent(
    records: list[SceneRecord],
    category: str,
    base_model: LinearDetectorModel,
    train_config: TrainConfig = TrainConfig(latent=True),
    opts: ProposalOptions = ProposalOptions(),
    sizes: SizeQuantiles | None = None,
    contexts: list[SceneContext] | None = None,
) -> tuple[LinearDetectorModel, CCCPResult]:
    """Latent-surface training initialized from a pre-trained plain
    detector: its weights seed the shared blocks, the height-indicator
    weights start uniform in [0, 1), and round one imputes the center
    slice."""
    config = replace(base_model.feature_config, latent=True)
    annotations = [c for r in records for cat, c in r.annotations if cat == category]
    if not annotations:
        raise NoPositiveExamples(f"no annotations for category {category!r}")
    if sizes is None:
        sizes = compute_size_quantiles(annotations)
    examples = build_latent_examples(records, category, config, sizes, opts, contexts)
    d_base = len(base_model.weights)
    d_latent = config.feature_length()
    rng = np.random.default_rng(train_config.seed)
    w_init = np.zeros(d_latent + 1)
    w_init[:d_base] = base_model.weights
    w_init[d_latent - N_SURFACE_SLICES : d_latent] = rng.uniform(
        0.0, 1.0, N_SURFACE_SLICES
    )
    w_init[-1] = base_model.bias
    center = N_SURFACE_SLICES // 2  # 0-based slice index 3 = slice 4 of 7
    init_heights = np.array(
        [center if ex.is_positive else 0 for ex in examples], dtype=np.int64
    )
    result = train_latent_cccp(examples, train_config, w_init, init_heights=init_heights)
    model = LinearDetectorModel(
        category=category,
        weights=result.weights[:-1].copy(),
        bias=float(result.weights[-1]),
        feature_config=config,
        train_config=train_config,
    )
    return model, result


@dataclass(frozen=True)
class LayoutOptions:
    sweep_step: float = 0.2
    max_hypotheses: int = 4000
    max_scored: int = 400  # hypotheses actually featurized (strided subsample)


def layout_candidates(ctx: SceneContext, opts: LayoutOptions) -> list[OrientedCuboid]:
    hyps = enumerate_layout_hypotheses(
        ctx.cloud, step=opts.sweep_step, max_hypotheses=opts.max_hypotheses
    )
    if len(hyps) > opts.max_scored:
        stride = int(np.ceil(len(hyps) / opts.max_scored))
        hyps = hyps[::stride]
    return hyps


def build_layout_examples(
    records: list[SceneRecord],
    opts: LayoutOptions,
    contexts: list[SceneContext] | None = None,
) -> list[StructuredExample]:
    """Per scene: ground truth is the enumerated hypothesis with the best
    free-space IOU against the annotation; losses use the layout loss."""
    examples = []
    for k, record in enumerate(records):
        ctx = contexts[k] if contexts is not None else SceneContext.from_record(record)
        hyps = layout_candidates(ctx, opts)
        ann = record.layout_cuboid()
        fsious = [free_space_iou(ann, h, record.pose, record.intrinsics) for h in hyps]
        gt_idx = int(np.argmax(fsious))
        gt = hyps[gt_idx]
        feats = np.array(
            [layout_features(ctx.cloud, h).ravel() for h in hyps], dtype=np.float32
        )
        losses = np.array(
            [layout_loss(gt, h, record.pose, record.intrinsics) for h in hyps]
        )
        examples.append(
            StructuredExample(
                gt_feature=feats[gt_idx].astype(np.float64),
                candidate_features=feats,
                candidate_losses=losses,
            )
        )
    return examples


def train_layout_model(
    records: list[SceneRecord],
    train_config: TrainConfig = TrainConfig(),
    opts: LayoutOptions = LayoutOptions(),
    contexts: list[SceneContext] | None = None,
) -> tuple[LinearDetectorModel, TrainResult]:
    examples = build_layout_examples(records, opts, contexts)
    result = train_nslack(examples, train_config)
    model = LinearDetectorModel(
        category="__layout__",
        weights=result.weights.copy(),
        bias=0.0,
        feature_config=FeatureConfig(),
        train_config=train_config,
    )
    return model, result


def predict_layout(
    ctx: SceneContext,
    model: LinearDetectorModel | None,
    opts: LayoutOptions = LayoutOptions(),
) -> tuple[OrientedCuboid, float]:
    """Best layout hypothesis under the trained scorer; without a model,
    the tightest (smallest-volume) containing hypothesis."""
    hyps = layout_candidates(ctx, opts)
    if model is None:
        vols = [h.volume for h in hyps]
        idx = int(np.argmin(vols))
        return hyps[idx], 0.0
    feats = np.array([layout_features(ctx.cloud, h).ravel() for h in hyps])
    scores = feats @ model.weights + model.bias
    idx = int(np.argmax(scores))
    return hyps[idx], float(scores[idx])


def score_proposals(
    ctx: SceneContext, props: list[OrientedCuboid], model: LinearDetectorModel
) -> list[Detection]:
    """First-stage scores; latent models score max over surface heights
    and record the argmax slice."""
    dets = []
    config = model.feature_config
    if config.latent:
        for p in props:
            rows = latent_feature_matrix(ctx, p, config)
            scores = model.score(rows)
            h = int(np.argmax(scores))
            dets.append(
                Detection(
                    category=model.category,
                    cuboid=p,
                    score=float(scores[h]),
                    surface_slice=h + 1,
                )
            )
    else:
        feats = featurize_cuboids(ctx, props, config)
        scores = model.score(feats)
        dets = [
            Detection(category=model.category, cuboid=p, score=float(s))
            for p, s in zip(props, scores)
        ]
    return dets


def detect_scene(
    record: SceneRecord,
    models: dict[str, LinearDetectorModel],
    sizes: dict[str, SizeQuantiles],
    opts: ProposalOptions = ProposalOptions(),
    layout_model: LinearDetectorModel | None = None,
    layout_opts: LayoutOptions = LayoutOptions(),
    cascade_models: dict[str, KernelSVMModel] | None = None,
    small_categories: frozenset[str] = frozenset(),
    ctx: SceneContext | None = None,
) -> DetectionSet:
    """Full per-scene pipeline: layout, floor proposals and scoring for
    large categories, surface-constrained search for small categories on
    positive supporters, NMS, then optional cascade rescoring."""
    if ctx is None:
        ctx = SceneContext.from_record(record)
    layout, layout_score = predict_layout(ctx, layout_model, layout_opts)
    detections: dict[str, list[Detection]] = {}
    categories = tuple(sorted(models))
    large = [c for c in categories if c not in small_categories]
    small = [c for c in categories if c in small_categories]
    for cat in large:
        props = scene_proposals(ctx, sizes[cat], opts)
        dets = score_proposals(ctx, props, models[cat])
        detections[cat] = nms_3d(dets, opts.nms_threshold)
    supporters = [
        (d, d.surface_slice if d.surface_slice else N_SURFACE_SLICES)
        for cat in large
        for d in detections.get(cat, [])
        if d.score > 0
    ]
    for cat in small:
        grid = ProposalGrid(
            step=opts.step,
            n_orientations=opts.n_orientations,
            full_circle=opts.full_circle,
        )
        props = generate_surface_proposals(
            supporters, sizes[cat], grid, unique_sizes=opts.unique_sizes
        )
        dets = score_proposals(ctx, props, models[cat]) if props else []
        detections[cat] = nms_3d(dets, opts.nms_threshold)
    det_set = DetectionSet(
        detections=detections, layout=layout, layout_score=layout_score
    )
    if cascade_models is not None:
        det_set = cascade_rescore(
            det_set, cascade_models, categories, small_categories
        )
    return det_set


def cascade_labels(
    det_set: DetectionSet, category: str, gts: list[OrientedCuboid]
) -> np.ndarray:
    """Second-stage training labels: +1 iff the detection's IOU with some
    ground-truth instance exceeds 0.25 and is the largest among this
    category's detections for that instance."""
    dets = det_set.detections.get(category, [])
    labels = -np.ones(len(dets))
    for gt in gts:
        ious = np.array([cuboid_iou_3d(d.cuboid, gt) for d in dets])
        if len(ious) and ious.max() > 0.25:
            labels[int(np.argmax(ious))] = 1.0
    return labels


def train_cascade(
    det_sets: list[DetectionSet],
    gt_by_scene: list[dict[str, list[OrientedCuboid]]],
    categories: tuple[str, ...],
    gamma: float | None = None,
    c: float = 10.0,
    small_categories: frozenset[str] = frozenset(),
) -> dict[str, KernelSVMModel]:
    """Per-category RBF-kernel rescoring models from first-stage detection
    sets. gamma defaults to 1 / median squared pairwise feature
    distance."""
    models: dict[str, KernelSVMModel] = {}
    for cat in categories:
        feats, labels = [], []
        for det_set, gts in zip(det_sets, gt_by_scene):
            lab = cascade_labels(det_set, cat, gts.get(cat, []))
            for det, l in zip(det_set.detections.get(cat, []), lab):
                feats.append(
                    object_context_features(det, det_set, categories, small_categories)
                )
                labels.append(l)
        if not feats:
            continue
        X = np.array(feats)
        y = np.array(labels)
        if len(np.unique(y)) < 2:
            continue
        g = gamma if gamma is not None else _median_gamma(X)
        models[cat] = train_rbf_svm(X, y, gamma=g, c=c)
    return models


def _median_gamma(X: np.ndarray) -> float:
    n = min(len(X), 200)
    sub = X[:n]
    d2 = (
        np.sum(sub * sub, axis=1)[:, None]
        - 2.0 * sub @ sub.T
        + np.sum(sub * sub, axis=1)[None, :]
    )
    med = float(np.median(d2[np.triu_indices(n, k=1)])) if n > 1 else 1.0
    return 1.0 / max(med, 1e-9)
