"""Stage-by-stage pipeline over an output directory.

Every stage reads what earlier stages wrote and writes only into its own
subdirectory, together with a ``stage.json`` sidecar carrying the config
fingerprint.  All randomness derives from ``cfg.seed``, so re-running a
stage reproduces its files byte for byte.
"""

from __future__ import annotations

import logging
import os
import shutil

import numpy as np

from .config import RunConfig
from .errors import MissingInputError
from .evaluation import (aggregate_seeds, build_report, fingerprint, miou, pq_scene, psnr,
                         psnr_section, semantic_section, void_mask)
from .field.checkpoint import load_checkpoint, save_checkpoint
from .field.grid import MultiResGrid
from .field.render import concat_rays, make_rays, render_image, surface_depth
from .field.train import TrainConfig, TrainData, train, write_curve
from .fusion import conflict_entropy, fuse_semantics
from .geometry import Camera, unproject
from .grouping import (GroupTable, build_guidance_map, filter_nested, group_instances,
                       mask_heights, project_all, singleton_groups)
from .instance import (ClusterModel, InstanceConfig, InstanceHook, cluster_embeddings,
                       render_instance_map)
from .io import (ensure_dir, id_colors, read_ids, read_json, read_maskset, read_pgm,
                 read_ply, read_ppm, write_ids, write_json, write_maskset, write_pgm8, write_pgm16,
                 write_ply, write_ppm)
from .labels import (OracleSegmenter, OversegModel, SemanticNoiseModel,
                     agnostic_masks_for_small_classes, corrupt_semantic,
                     oversegment_instances)
from .scene import (SKY, ClassId, RigParams, SceneParams, SceneSpec, generate_scene,
                    make_camera_rig, pixel_footprint, render_gt, sample_gt_points,
                    simulate_mvs_depth)

log = logging.getLogger(__name__)

STAGES = ("scene", "gt", "labels", "geometry", "fusion", "grouping", "semantic", "instance",
          "eval", "export")
DEPTH_SCALE = 1e-4
TEST_VIEW_KEY = 10_000


# ---------------------------------------------------------------- helpers

def _dir(out, stage):
    return os.path.join(out, stage)


def _need(path, hint):
    if not os.path.exists(path):
        raise MissingInputError(f"missing {path}; run `{hint}` first")
    return path


def _begin(cfg: RunConfig, out, stage):
    d = _dir(out, stage)
    if os.path.isdir(d):
        shutil.rmtree(d)
    ensure_dir(d)
    return d


def _finish(cfg: RunConfig, out, stage, extra=None):
    side = {"stage": stage, "seed": cfg.seed, "fingerprint": fingerprint(cfg.to_dict(), cfg.seed)}
    if extra:
        side.update(extra)
    write_json(os.path.join(_dir(out, stage), "stage.json"), side)


def scene_box(scene: SceneSpec):
    return ((0.0, 0.0, scene.ground_height - 0.01), (1.0, 1.0, scene.top + 0.02))


def train_config(cfg: RunConfig, stage: str) -> TrainConfig:
    t = cfg.train
    its = {"geometry": t.geometry_iterations, "semantic": t.semantic_iterations,
           "instance": t.instance_iterations}[stage]
    return TrainConfig(iterations=its, batch_rays=t.batch_rays, n_samples=cfg.field.n_samples,
                       lr_grid=t.lr_grid, lr_heads=t.lr_heads, lambda_depth=t.lambda_depth,
                       lambda_semantic=t.lambda_semantic, lambda_instance=t.lambda_instance,
                       use_depth=t.use_depth, head_w_floor=cfg.field.head_w_floor,
                       seed=cfg.seed, log_every=0)


def noise_model(cfg: RunConfig) -> SemanticNoiseModel:
    n = cfg.noise
    conf = ((int(ClassId.CAR), int(ClassId.ROAD), n.small_class_confusion),
            (int(ClassId.TREE), int(ClassId.GROUND), n.small_class_confusion))
    return SemanticNoiseModel(n.rooftop_flip_base, n.area_threshold_alpha, n.boundary_jitter_px,
                              conf, cfg.seed)


def overseg_model(cfg: RunConfig) -> OversegModel:
    n = cfg.noise
    return OversegModel(split_count_range=tuple(n.split_count_range), nest_rate=n.nest_rate,
                        drop_rate=n.drop_rate, seed=cfg.seed)


def load_scene(out):
    d = _dir(out, "scene")
    scene = SceneSpec.from_dict(read_json(_need(os.path.join(d, "scene.json"), "gen-scene")))
    cams = [Camera.from_dict(c) for c in read_json(os.path.join(d, "cameras.json"))]
    test = [Camera.from_dict(c) for c in read_json(os.path.join(d, "test_cameras.json"))]
    return scene, cams, test


def _view(split, i, what, ext="pgm"):
    return f"{split}_{i:03d}_{what}.{ext}"


def load_gt(out, split, n):
    """Per-view dicts with color (float), depth, semantic and instance."""
    d = _dir(out, "gt")
    views = []
    for i in range(n):
        _need(os.path.join(d, _view(split, i, "color", "ppm")), "render-gt")
        views.append({
            "color": read_ppm(os.path.join(d, _view(split, i, "color", "ppm"))) / 255.0,
            "depth": read_pgm(os.path.join(d, _view(split, i, "depth"))),
            "semantic": read_pgm(os.path.join(d, _view(split, i, "semantic"))),
            "instance": read_ids(os.path.join(d, _view(split, i, "instance"))),
        })
    return views


def _load_field(out, stage, hint):
    grid, _, meta = load_checkpoint(_need(os.path.join(_dir(out, stage), "field.ulft"), hint))
    return grid, meta


def _load_depths(out, n):
    d = _dir(out, "geometry")
    return [read_pgm(_need(os.path.join(d, f"depth_{i:03d}.pgm"), "train-geometry"))
            for i in range(n)]


def _sem_maps(out, stage, prefix, n, hint):
    d = _dir(out, stage)
    return [read_pgm(_need(os.path.join(d, f"{prefix}_{i:03d}.pgm"), hint)) for i in range(n)]


def training_rays(cams, box):
    return concat_rays([make_rays(c, box=box) for c in cams])


def eps_depth(cfg: RunConfig, cams, depths) -> float:
    return cfg.fusion.eps_depth_px * pixel_footprint(cams, depths)


# ---------------------------------------------------------------- stages

def gen_scene(cfg: RunConfig, out):
    d = _begin(cfg, out, "scene")
    s = cfg.scene
    scene = generate_scene(cfg.seed, SceneParams(n_buildings=s.n_buildings, footprint=s.footprint,
                                                 height_m=s.height_m,
                                                 meters_per_unit=s.meters_per_unit))
    r = cfg.rig
    rp = RigParams(width=r.width, height=r.height, fov_deg=r.fov_deg)
    cams = make_camera_rig(scene, r.n_views, r.pattern, r.altitude, seed=cfg.seed, params=rp)
    # held-out views: the same rig pattern from an unrelated stream
    test = make_camera_rig(scene, max(r.n_test_views, 2), r.pattern, r.altitude,
                           seed=cfg.seed + 100, params=rp, min_views=1)[:r.n_test_views]
    write_json(os.path.join(d, "scene.json"), scene.to_dict())
    write_json(os.path.join(d, "cameras.json"), [c.to_dict() for c in cams])
    write_json(os.path.join(d, "test_cameras.json"), [c.to_dict() for c in test])
    write_json(os.path.join(d, "config.json"), cfg.to_dict())
    _finish(cfg, out, "scene")


def render_gt_stage(cfg: RunConfig, out):
    scene, cams, test = load_scene(out)
    d = _begin(cfg, out, "gt")
    for split, cs in (("train", cams), ("test", test)):
        for i, c in enumerate(cs):
            g = render_gt(scene, c)
            write_ppm(os.path.join(d, _view(split, i, "color", "ppm")), g.color)
            write_pgm16(os.path.join(d, _view(split, i, "depth")), g.depth, DEPTH_SCALE)
            write_pgm8(os.path.join(d, _view(split, i, "semantic")), g.semantic)
            write_ids(os.path.join(d, _view(split, i, "instance")), g.instance)
            if split == "train":
                prior = simulate_mvs_depth(g.depth, [cfg.seed, 2, i], cfg.rig.depth_noise,
                                           cfg.rig.depth_hole_rate)
                write_pgm16(os.path.join(d, _view(split, i, "prior")), prior, DEPTH_SCALE)
    pts = sample_gt_points(scene, cfg.fusion.conflict_points, [cfg.seed, 3])
    write_ply(os.path.join(d, "points.ply"), pts["points"],
              {"class": pts["cls"], "instance": pts["instance"]})
    _finish(cfg, out, "gt")


def synth_labels(cfg: RunConfig, out):
    scene, cams, test = load_scene(out)
    gts = [render_gt(scene, c) for c in cams]
    d = _begin(cfg, out, "labels")
    nm, om = noise_model(cfg), overseg_model(cfg)
    for i, (c, g) in enumerate(zip(cams, gts)):
        write_pgm8(os.path.join(d, f"semantic_{i:03d}.pgm"), corrupt_semantic(g, c, nm, i))
        write_maskset(os.path.join(d, f"masks_{i:03d}"), oversegment_instances(g, om, i,
                                                                               scene.meters_per_unit))
        write_maskset(os.path.join(d, f"agnostic_{i:03d}"),
                      agnostic_masks_for_small_classes(g, cfg.seed, i))
    for i, c in enumerate(test):
        g = render_gt(scene, c)
        write_pgm8(os.path.join(d, f"test_semantic_{i:03d}.pgm"),
                   corrupt_semantic(g, c, nm, TEST_VIEW_KEY + i))
    _finish(cfg, out, "labels")


def train_geometry(cfg: RunConfig, out):
    scene, cams, _ = load_scene(out)
    gt = load_gt(out, "train", len(cams))
    dg = _dir(out, "gt")
    prior = [read_pgm(os.path.join(dg, _view("train", i, "prior"))) for i in range(len(cams))]
    box = scene_box(scene)
    rays = training_rays(cams, box)
    data = TrainData(rays, np.concatenate([g["color"].reshape(-1, 3) for g in gt]),
                     np.concatenate([p.reshape(-1) for p in prior]))
    f = cfg.field
    grid = MultiResGrid.create(f.resolutions, cfg.instance.n_surrogate,
                               init_density=f.init_density, seed=cfg.seed)
    res = train("geometry", grid, data, train_config(cfg, "geometry"))
    d = _begin(cfg, out, "geometry")
    save_checkpoint(os.path.join(d, "field.ulft"), grid, meta={"stage": "geometry"})
    write_curve(os.path.join(d, "curve.csv"), res.curve)
    for i, c in enumerate(cams):
        r = render_image(grid, c, f.n_samples, box=box, heads=())
        write_pgm16(os.path.join(d, f"depth_{i:03d}.pgm"), surface_depth(r["depth"], r["opacity"]),
                    DEPTH_SCALE)
    _finish(cfg, out, "geometry")


def fuse(cfg: RunConfig, out):
    scene, cams, _ = load_scene(out)
    grid, _ = _load_field(out, "geometry", "train-geometry")
    depths = _load_depths(out, len(cams))
    noisy = _sem_maps(out, "labels", "semantic", len(cams), "synth-labels")
    agn = [read_maskset(os.path.join(_dir(out, "labels"), f"agnostic_{i:03d}"))
           for i in range(len(cams))]
    eps = eps_depth(cfg, cams, depths)
    views = [{"camera": c, "semantic": s, "depth": dd} for c, s, dd in zip(cams, noisy, depths)]
    fs = cfg.fusion
    fused = fuse_semantics(views, grid, OracleSegmenter(scene, noise_model(cfg)), fs.offset, eps,
                           agnostic=agn, both_directions=fs.both_directions,
                           n_samples=cfg.field.n_samples, box=scene_box(scene),
                           iou_threshold=fs.iou_threshold)
    gt = load_gt(out, "train", len(cams))
    d = _begin(cfg, out, "fusion")
    for i in range(len(cams)):
        write_pgm8(os.path.join(d, f"fused_{i:03d}.pgm"), fused.semantic[i])
        write_pgm8(os.path.join(d, f"provenance_{i:03d}.pgm"), fused.provenance[i])
        write_pgm8(os.path.join(d, f"far_{i:03d}.pgm"), fused.far_semantic[i])
    pts, _ = read_ply(os.path.join(_dir(out, "gt"), "points.ply"))
    gt_eps = eps_depth(cfg, cams, [g["depth"] for g in gt])
    rep = {}
    for name, maps in (("noisy", noisy), ("fused", fused.semantic)):
        v = [{"camera": c, "semantic": s, "gt_depth": g["depth"]} for c, s, g in zip(cams, maps, gt)]
        rep[name] = conflict_entropy(v, pts, gt_eps).to_dict()
        iou, m = miou(maps, [g["semantic"] for g in gt])
        rep[name]["train_view_iou"] = semantic_section(iou, m)
    write_json(os.path.join(d, "conflict.json"), rep)
    _finish(cfg, out, "fusion", {"eps_depth": eps})


def group(cfg: RunConfig, out):
    scene, cams, _ = load_scene(out)
    depths = _load_depths(out, len(cams))
    raw = [read_maskset(os.path.join(_dir(out, "labels"), f"masks_{i:03d}"))
           for i in range(len(cams))]
    g = cfg.grouping
    if g.variant == "raw":
        ms = raw
    else:
        ms = [filter_nested(m, mask_heights(m, dd, c, scene.meters_per_unit),
                            g.height_threshold_m, g.nest_ratio)
              for m, dd, c in zip(raw, depths, cams)]
    d = _begin(cfg, out, "grouping")
    eps = eps_depth(cfg, cams, depths)
    for i in range(len(cams)):
        if g.variant == "cross":
            P = project_all(i, ms, depths, cams, eps)
            gm = build_guidance_map(i, ms, depths, cams, eps, g.tau, projected=P)
            table = group_instances(ms[i], gm.U, i)
            write_ids(os.path.join(d, f"guidance_{i:03d}.pgm"), gm.U)
            write_json(os.path.join(d, f"registry_{i:03d}.json"),
                       {"registry": gm.registry, "order": gm.order})
        else:
            table = singleton_groups(ms[i], i)
        write_maskset(os.path.join(d, f"masks_{i:03d}"), ms[i])
        write_json(os.path.join(d, f"groups_{i:03d}.json"), table.to_dict())
    _finish(cfg, out, "grouping", {"variant": g.variant, "eps_depth": eps})


def load_groups(out, n):
    d = _dir(out, "grouping")
    tables, masks = [], []
    for i in range(n):
        t = read_json(_need(os.path.join(d, f"groups_{i:03d}.json"), "group"))
        groups = [list(map(int, g)) for g in t["groups"]]
        tables.append(GroupTable(i, groups, {m: gi for gi, g in enumerate(groups) for m in g}))
        masks.append(read_maskset(os.path.join(d, f"masks_{i:03d}")))
    return masks, tables


def train_semantic(cfg: RunConfig, out):
    scene, cams, _ = load_scene(out)
    grid, _ = _load_field(out, "geometry", "train-geometry")
    fused = _sem_maps(out, "fusion", "fused", len(cams), "fuse")
    sem = np.concatenate([f.reshape(-1) for f in fused]).astype(np.int64)
    pool = np.flatnonzero(sem != SKY)
    rays = training_rays(cams, scene_box(scene))
    res = train("semantic", grid, TrainData(rays, semantic=sem), train_config(cfg, "semantic"),
                pool=pool)
    d = _begin(cfg, out, "semantic")
    save_checkpoint(os.path.join(d, "field.ulft"), grid, meta={"stage": "semantic"})
    write_curve(os.path.join(d, "curve.csv"), res.curve)
    _finish(cfg, out, "semantic")


def instance_grid(grid: MultiResGrid, cfg: RunConfig) -> MultiResGrid:
    i = cfg.instance
    ic = instance_config(cfg)
    n = i.n_surrogate if i.mode == "assignment" else i.embed_dim
    grid.reset_instance(n, ic.std(), seed=cfg.seed)
    return grid


def instance_config(cfg: RunConfig) -> InstanceConfig:
    i = cfg.instance
    return InstanceConfig(mode=i.mode, batch_rays=cfg.train.batch_rays, gamma=i.gamma,
                          momentum=i.momentum, outer_exp=i.outer_exp, max_segments=i.n_surrogate,
                          supervision=i.supervision, seed=cfg.seed)


def render_test(grid, cfg: RunConfig, scene, test, heads):
    return [render_image(grid, c, cfg.field.n_samples, box=scene_box(scene), heads=heads,
                         w_floor=cfg.field.head_w_floor) for c in test]


def building_embeddings(renders, n_max: int, seed) -> np.ndarray:
    """Rendered embeddings of predicted-building pixels, subsampled to ``n_max``."""
    E = np.concatenate([r["instance"].reshape(-1, r["instance"].shape[-1])[
        np.argmax(r["semantic"], -1).reshape(-1) == ClassId.BUILDING] for r in renders])
    if len(E) > n_max:
        E = E[np.sort(np.random.default_rng(seed).choice(len(E), n_max, replace=False))]
    return E


def train_instance(cfg: RunConfig, out):
    scene, cams, test = load_scene(out)
    grid, _ = _load_field(out, "semantic", "train-semantic")
    fused = _sem_maps(out, "fusion", "fused", len(cams), "fuse")
    masks, tables = load_groups(out, len(cams))
    instance_grid(grid, cfg)
    ic = instance_config(cfg)
    views = [{"masks": m, "groups": t, "building": f == ClassId.BUILDING}
             for m, t, f in zip(masks, tables, fused)]
    n_px = cams[0].height * cams[0].width
    offsets = np.arange(len(cams)) * n_px
    slow = grid.params["instance"].copy() if ic.mode == "contrastive" else None
    hook = InstanceHook(views, offsets, ic, slow)
    rays = training_rays(cams, scene_box(scene))
    res = train("instance", grid, TrainData(rays), train_config(cfg, "instance"), hook=hook)
    d = _begin(cfg, out, "instance")
    save_checkpoint(os.path.join(d, "field.ulft"), grid,
                    meta={"stage": "instance", "mode": ic.mode})
    write_curve(os.path.join(d, "curve.csv"), res.curve)
    if ic.mode == "contrastive":
        c = cfg.cluster
        E = building_embeddings(render_test(grid, cfg, scene, test, ("semantic", "instance")),
                                c.n_samples, [cfg.seed, 4])
        cm = cluster_embeddings(E, None, c.min_pts, c.min_cluster_size, c.eps_percentile,
                                seed=cfg.seed)
        write_json(os.path.join(d, "cluster.json"), cm.to_dict())
    _finish(cfg, out, "instance", {"mode": ic.mode})


def predict_test(cfg: RunConfig, out, scene, test):
    """Rendered colors, semantic maps and instance maps of the held-out views."""
    grid, meta = _load_field(out, "instance", "train-instance")
    mode = meta.get("mode", cfg.instance.mode)
    cm = None
    if mode == "contrastive":
        cm = ClusterModel.from_dict(read_json(_need(os.path.join(_dir(out, "instance"),
                                                                 "cluster.json"), "train-instance")))
    renders = render_test(grid, cfg, scene, test, ("color", "semantic", "instance"))
    sem = [np.argmax(r["semantic"], -1) for r in renders]
    inst = [render_instance_map(r["instance"], s, mode, cm) for r, s in zip(renders, sem)]
    return renders, sem, inst


def evaluate(cfg: RunConfig, out):
    scene, cams, test = load_scene(out)
    for stage, hint in (("geometry", "train-geometry"), ("semantic", "train-semantic"),
                        ("instance", "train-instance")):
        _need(os.path.join(_dir(out, stage), "field.ulft"), hint)
    gt = load_gt(out, "test", len(test))
    geo, _ = _load_field(out, "geometry", "train-geometry")
    col = render_test(geo, cfg, scene, test, ("color",))
    renders, sem, inst = predict_test(cfg, out, scene, test)
    gsem = [g["semantic"] for g in gt]
    iou_r, m_r = miou(sem, gsem)
    noisy = _sem_maps(out, "labels", "test_semantic", len(test), "synth-labels")
    iou_n, m_n = miou(noisy, gsem)
    pq = pq_scene(inst, [g["instance"] for g in gt], [void_mask(s) for s in gsem])
    conflict = read_json(_need(os.path.join(_dir(out, "fusion"), "conflict.json"), "fuse"))
    report = build_report(
        cfg.to_dict(), cfg.seed, ("psnr", "semantic", "semantic_noisy_2d", "pq_scene", "fusion"),
        psnr=psnr_section([psnr(r["color"], g["color"]) for r, g in zip(col, gt)]),
        semantic=semantic_section(iou_r, m_r),
        semantic_noisy_2d=semantic_section(iou_n, m_n),
        pq_scene={**pq.to_dict(), "definition": "standard PQ on scene-aggregated masks"},
        fusion={k: {"mean_entropy": v["mean_entropy"], "building_iou":
                    v["train_view_iou"]["iou"]["building"]} for k, v in conflict.items()},
    )
    d = _begin(cfg, out, "eval")
    with open(os.path.join(d, "report.json"), "w", newline="\n") as f:
        f.write(report.to_json())
    _finish(cfg, out, "eval")
    return report


def export(cfg: RunConfig, out):
    scene, cams, test = load_scene(out)
    renders, sem, inst = predict_test(cfg, out, scene, test)
    d = _begin(cfg, out, "export")
    pts, cls, ids = [], [], []
    for c, r, s, m in zip(test, renders, sem, inst):
        write_ids(os.path.join(d, f"test_{test.index(c):03d}_instance.pgm"), m)
        write_ppm(os.path.join(d, f"test_{test.index(c):03d}_instance.ppm"), id_colors(m))
        write_pgm8(os.path.join(d, f"test_{test.index(c):03d}_semantic.pgm"), s)
        depth = surface_depth(r["depth"], r["opacity"])
        ok = np.isfinite(depth).reshape(-1)
        pix = c.pixel_centers()[ok]
        pts.append(unproject(c, pix, depth.reshape(-1)[ok]))
        cls.append(s.reshape(-1)[ok])
        ids.append(m.reshape(-1)[ok])
    write_ply(os.path.join(d, "points.ply"), np.concatenate(pts),
              {"class": np.concatenate(cls), "instance": np.concatenate(ids)})
    _finish(cfg, out, "export")


STAGE_FUNCS = {
    "gen-scene": gen_scene, "render-gt": render_gt_stage, "synth-labels": synth_labels,
    "train-geometry": train_geometry, "fuse": fuse, "group": group,
    "train-semantic": train_semantic, "train-instance": train_instance,
    "evaluate": evaluate, "export": export,
}
RUN_ALL = ("gen-scene", "render-gt", "synth-labels", "train-geometry", "fuse", "group",
           "train-semantic", "train-instance", "evaluate", "export")


def run_all(cfg: RunConfig, out):
    ensure_dir(out)
    report = None
    for name in RUN_ALL:
        log.info("stage %s", name)
        r = STAGE_FUNCS[name](cfg, out)
        if name == "evaluate":
            report = r
    return report


def seed_sweep(reports) -> dict:
    return aggregate_seeds(reports)
