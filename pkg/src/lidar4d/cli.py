"""Command-line interface chaining every stage of the toolkit.

All commands are pure functions of (input files, config, seed): rerunning
with identical arguments reproduces identical output bytes. Failures print a
machine-readable JSON object on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import diffusion, edit as edit_mod, evalsuite, io, layout as layout_mod
from . import synth as synth_mod, warp
from .config import RunConfig, load_config
from .core import Trajectory
from .errors import PipelineStageError
from .layout import LayoutPrior, WorldBounds
from .pipeline import run_pipeline
from .rangecodec import decode_tensor, encode_tensor, project, unproject
from .scenegraph import build_graph


def _config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return RunConfig()


def _schedule(config: RunConfig) -> diffusion.NoiseSchedule:
    return diffusion.cosine_schedule(
        config.diffusion.train_steps, config.diffusion.cosine_s
    )


def _bounds(config: RunConfig) -> WorldBounds:
    return WorldBounds(
        np.asarray(config.layout.world_min), np.asarray(config.layout.world_max)
    )


def _cmd_build_graph(args) -> None:
    config = _config(args)
    annotation = io.load_json(args.annotation)
    graph = build_graph(annotation, config.relations)
    io.dump_json(io.scene_graph_to_json(graph), args.out)


def _branch_denoisers(args, config, schedule):
    prior = LayoutPrior()
    models = prior.denoisers(schedule)
    if getattr(args, "denoisers", None):
        folder = Path(args.denoisers)
        loaded = {}
        for branch in ("box", "trajectory", "shape"):
            path = folder / f"{branch}.lcdn"
            loaded[branch] = io.read_denoiser(path) if path.exists() else getattr(models, branch)
        models = layout_mod.LayoutDenoisers(**loaded)
    return models


def _cmd_sample_layout(args) -> None:
    config = _config(args)
    schedule = _schedule(config)
    graph = io.scene_graph_from_json(io.load_json(args.graph))
    result = layout_mod.sample_layout(
        graph,
        _branch_denoisers(args, config, schedule),
        schedule,
        rng_seed=args.seed,
        reject_k=config.layout.reject_attempts,
        steps=config.diffusion.sample_steps,
        bounds=_bounds(config),
        trajectory_steps=config.layout.trajectory_steps,
        shape_points=config.layout.shape_points,
        disp_bound=config.layout.displacement_bound,
        tau_thresh=config.layout.overlap_tau,
    )
    io.dump_json(io.layout_to_json(result.layout), args.out)
    print(
        json.dumps(
            {
                "rejections": result.rejections,
                "collision_free": result.collision_free,
                "penalty": result.penalty,
            }
        )
    )


def _cmd_synth(args) -> None:
    config = _config(args)
    spec = io.scene_spec_from_json(io.load_json(args.scene_spec))
    rng = np.random.default_rng(args.seed) if spec.noise_sigma > 0 else None
    cloud = synth_mod.raycast_frame(spec, config.sensor, args.frame, rng)
    io.write_pointcloud(cloud, args.out)


def _cmd_project(args) -> None:
    config = _config(args)
    cloud = io.read_pointcloud(args.cloud)
    image = project(cloud, config.sensor)
    io.write_range_tensor(encode_tensor(image, config.sensor), args.out)


def _cmd_unproject(args) -> None:
    config = _config(args)
    tensor = io.read_range_tensor(args.range)
    cloud = unproject(decode_tensor(tensor, config.sensor), config.sensor)
    io.write_pointcloud(cloud, args.out)


def _cmd_warp_next(args) -> None:
    config = _config(args)
    layout = io.layout_from_json(io.load_json(args.layout))
    ego_traj = Trajectory(np.asarray(json.loads(args.ego), dtype=float))
    cloud0 = io.read_pointcloud(args.cloud0)
    prev = io.read_pointcloud(args.cloud_prev) if args.cloud_prev else cloud0
    ids = [o.node_id for o in layout.objects]
    decomp0 = warp.split_fg_bg(cloud0, layout.boxes(), ids)
    if args.t == 1:
        decomp_prev = decomp0
    else:
        prev_boxes = [
            warp.object_box_in_ego(o.box, o.trajectory, ego_traj, args.t - 1)
            for o in layout.objects
        ]
        decomp_prev = warp.split_fg_bg(prev, prev_boxes, ids)
    cond = warp.conditioning_map(decomp0, decomp_prev, layout, ego_traj, args.t, config.sensor)
    io.write_range_tensor(encode_tensor(cond, config.sensor), args.out)


def _cmd_edit(args) -> None:
    layout = io.layout_from_json(io.load_json(args.layout))
    ops = io.edit_script_from_json(io.load_json(args.script))
    result = edit_mod.apply_edits(layout, ops)
    io.dump_json(io.layout_to_json(result.layout), args.out)
    if args.report:
        io.dump_json(
            {
                "schema": "edit_report",
                "version": 1,
                "collisions": [
                    {"a": a, "b": b, "iou": iou} for a, b, iou in result.collisions
                ],
            },
            args.report,
        )


def _cmd_inpaint(args) -> None:
    config = _config(args)
    schedule = _schedule(config)
    orig = io.read_range_tensor(args.orig).astype(np.float64)
    target = io.read_range_tensor(args.target).astype(np.float64)
    layout_old = io.layout_from_json(io.load_json(args.layout_old))
    layout_new = io.layout_from_json(io.load_json(args.layout_new))
    mask = edit_mod.edit_mask(
        layout_old, layout_new, config.sensor, config.edit.mask_dilation
    )
    denoiser = diffusion.make_target_oracle(target, schedule)
    rng = np.random.default_rng(args.seed)
    blended = edit_mod.resynthesize(
        denoiser, None, orig, mask, schedule, config.diffusion.sample_steps, rng
    )
    io.write_range_tensor(blended.astype(np.float32), args.out)
    if args.mask_out:
        io.write_range_tensor(
            mask[:, :, None].astype(np.float32), args.mask_out
        )


def _cmd_simulate_seq(args) -> None:
    config = _config(args)
    spec = io.scene_spec_from_json(io.load_json(args.scene_spec))
    rng = np.random.default_rng(args.seed) if spec.noise_sigma > 0 else None
    sequence = synth_mod.simulate_sequence(spec, config.sensor, args.frames, rng)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for t, cloud in enumerate(sequence.clouds):
        io.write_pointcloud(cloud, out / f"frame_{t:03d}.lcpc")
    io.dump_json(
        {
            "schema": "poses",
            "version": 1,
            "poses": [
                {
                    "rotation": [[float(v) for v in row] for row in pose.rotation],
                    "translation": [float(v) for v in pose.translation],
                }
                for pose in sequence.poses
            ],
        },
        out / "poses.json",
    )


def _load_sequence(folder: Path):
    from .core import Pose, SceneSequence

    clouds = [
        io.read_pointcloud(path) for path in sorted(folder.glob("frame_*.lcpc"))
    ]
    doc = io.load_json(folder / "poses.json")
    poses = [
        Pose(np.asarray(p["rotation"], dtype=float), np.asarray(p["translation"], dtype=float))
        for p in doc["poses"]
    ]
    return SceneSequence(tuple(zip(clouds, poses)))


def _cmd_eval(args) -> None:
    config = _config(args)
    metrics: dict = {}
    if args.layout and args.graph:
        layout = io.layout_from_json(io.load_json(args.layout))
        graph = io.scene_graph_from_json(io.load_json(args.graph))
        metrics["scr"] = evalsuite.scr(layout, graph, config.relations)
        metrics["mscr"] = evalsuite.mscr(
            layout, graph, config.metrics.motion_classifier()
        )
        if len(layout.objects) >= 2:
            metrics["bcr"] = evalsuite.bcr([layout.boxes()])
            metrics["tcr"] = evalsuite.tcr(layout.boxes(), layout.trajectories())
    if args.sequence:
        sequence = _load_sequence(Path(args.sequence))
        rot_err, trans_err = evalsuite.ttce(sequence)
        metrics["ttce_rot"] = rot_err
        metrics["ttce_trans"] = trans_err
        metrics["ctc"] = evalsuite.ctc(sequence, interval=args.ctc_interval)
    if args.gen_cloud and args.ref_cloud:
        gen = io.read_pointcloud(args.gen_cloud)
        ref = io.read_pointcloud(args.ref_cloud)
        hg = evalsuite.bev_histogram(gen, config.metrics.bev_bound, config.metrics.bev_bins)
        hr = evalsuite.bev_histogram(ref, config.metrics.bev_bound, config.metrics.bev_bins)
        metrics["jsd"] = evalsuite.jsd(hg, hr)
        metrics["mmd"] = evalsuite.mmd(
            gen.xyz, ref.xyz, kernel=config.metrics.mmd_kernel,
            bandwidth=config.metrics.mmd_bandwidth,
        )
        metrics["chamfer"] = evalsuite.chamfer(gen, ref)
    if args.detections and args.ground_truths:
        dets = io.detections_from_json(io.load_json(args.detections))
        gts = io.ground_truths_from_json(io.load_json(args.ground_truths))
        fdc_scores = evalsuite.fdc(dets)
        metrics["fdc"] = {k: v["mean_confidence"] for k, v in fdc_scores.items()}
        categories = sorted({g.category for g in gts})
        ap_scores = {}
        for cat in categories:
            cat_dets = [d for d in dets if d.category == cat]
            cat_gts = [g for g in gts if g.category == cat]
            ap_scores[cat] = evalsuite.average_precision(
                cat_dets,
                cat_gts,
                iou_threshold=config.metrics.ap_iou_threshold,
                mode=args.ap_mode,
                match_space=args.ap_space,
            )
        metrics["ap"] = ap_scores
        metrics["map"] = sum(ap_scores.values()) / len(ap_scores) if ap_scores else 0.0
    if args.classification:
        preds, truths = io.classification_from_json(io.load_json(args.classification))
        metrics["cfca"] = evalsuite.cfca(preds, truths)
    if args.box_samples:
        samples, gts = io.box_samples_from_json(io.load_json(args.box_samples))
        metrics["cfsc"] = evalsuite.cfsc(samples, gts)
    io.dump_json(io.metric_report_to_json(metrics), args.out)


def _cmd_train_denoiser(args) -> None:
    config = _config(args)
    schedule = _schedule(config)
    bounds = _bounds(config)
    pair_dir = Path(args.pairs)
    x0_rows, cond_rows = [], []
    for graph_path in sorted(pair_dir.glob("*.graph.json")):
        layout_path = graph_path.with_name(
            graph_path.name.replace(".graph.json", ".layout.json")
        )
        graph = io.scene_graph_from_json(io.load_json(graph_path))
        layout = io.layout_from_json(io.load_json(layout_path))
        for obj in layout.objects:
            cond = layout_mod.featurize_condition(
                graph, obj.node_id, config.layout.degree_scale
            )
            if args.branch == "box":
                x0_rows.append(layout_mod.encode_box(obj.box, bounds))
                cond_rows.append(cond)
            elif args.branch == "trajectory":
                x0_rows.append(
                    layout_mod.encode_trajectory(
                        obj.trajectory, config.layout.displacement_bound
                    )
                )
                cond_rows.append(
                    np.concatenate([cond, layout_mod.encode_box(obj.box, bounds)])
                )
            else:
                code = layout_mod.canonicalize_points(obj.shape, obj.box)
                x0_rows.append(code.ravel())
                cond_rows.append(
                    np.concatenate([cond, layout_mod.encode_box(obj.box, bounds)])
                )
    if not x0_rows:
        raise ValueError(f"no *.graph.json / *.layout.json pairs under {pair_dir}")
    training = config.training
    if args.steps is not None:
        import dataclasses

        training = dataclasses.replace(training, steps=args.steps, seed=args.seed)
    result = diffusion.train_denoiser(
        np.stack(x0_rows), np.stack(cond_rows), schedule, training
    )
    io.write_denoiser(result.model, args.out)
    if args.log:
        io.dump_json(
            {
                "schema": "training_log",
                "version": 1,
                "history": [[int(s), float(l)] for s, l in result.history],
            },
            args.log,
        )


def _cmd_plot_export(args) -> None:
    config = _config(args)
    path = Path(args.input)
    with path.open("rb") as handle:
        magic = handle.read(4)
    if magic == io.RANGE_TENSOR_MAGIC:
        tensor = io.read_range_tensor(path)
        image = decode_tensor(tensor.astype(np.float64), config.sensor)
        if args.png:
            io.range_image_to_png(image, config.sensor.max_range, args.png)
        if args.csv:
            io.write_csv(np.where(image.valid, image.depth, 0.0), args.csv)
    elif magic == io.POINTCLOUD_MAGIC:
        cloud = io.read_pointcloud(path)
        hist = evalsuite.bev_histogram(
            cloud, config.metrics.bev_bound, config.metrics.bev_bins
        )
        if args.png:
            io.bev_to_png(hist.mass, args.png)
        if args.csv:
            io.write_csv(hist.mass, args.csv)
    else:
        raise ValueError(f"unrecognized input format with magic {magic!r}")


def _cmd_run(args) -> None:
    config = _config(args)
    if args.seed is not None:
        import dataclasses

        config = dataclasses.replace(config, seed=args.seed)
    annotation = io.load_json(args.annotation)
    run_pipeline(config, annotation, args.out_dir)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lidar4d", description="4D LiDAR scene toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, configure):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="run config JSON")
        configure(p)
        p.set_defaults(func=func)
        return p

    add(
        "build-graph",
        _cmd_build_graph,
        lambda p: [
            p.add_argument("--annotation", required=True),
            p.add_argument("--out", required=True),
        ],
    )
    add(
        "sample-layout",
        _cmd_sample_layout,
        lambda p: [
            p.add_argument("--graph", required=True),
            p.add_argument("--out", required=True),
            p.add_argument("--seed", type=int, default=0),
            p.add_argument("--denoisers", default=None, help="folder of .lcdn files"),
        ],
    )
    add(
        "synth",
        _cmd_synth,
        lambda p: [
            p.add_argument("--scene-spec", required=True),
            p.add_argument("--frame", type=int, default=0),
            p.add_argument("--seed", type=int, default=0),
            p.add_argument("--out", required=True),
        ],
    )
    add(
        "project",
        _cmd_project,
        lambda p: [
            p.add_argument("--cloud", required=True),
            p.add_argument("--out", required=True),
        ],
    )
    add(
        "unproject",
        _cmd_unproject,
        lambda p: [
            p.add_argument("--range", required=True),
            p.add_argument("--out", required=True),
        ],
    )
    add(
        "warp-next",
        _cmd_warp_next,
        lambda p: [
            p.add_argument("--layout", required=True),
            p.add_argument("--cloud0", required=True),
            p.add_argument("--cloud-prev", default=None),
            p.add_argument("--ego", required=True, help="JSON displacement list"),
            p.add_argument("--t", type=int, required=True),
            p.add_argument("--out", required=True),
        ],
    )
    add(
        "edit",
        _cmd_edit,
        lambda p: [
            p.add_argument("--layout", required=True),
            p.add_argument("--script", required=True),
            p.add_argument("--out", required=True),
            p.add_argument("--report", default=None),
        ],
    )
    add(
        "inpaint",
        _cmd_inpaint,
        lambda p: [
            p.add_argument("--orig", required=True),
            p.add_argument("--target", required=True),
            p.add_argument("--layout-old", required=True),
            p.add_argument("--layout-new", required=True),
            p.add_argument("--seed", type=int, default=0),
            p.add_argument("--out", required=True),
            p.add_argument("--mask-out", default=None),
        ],
    )
    add(
        "simulate-seq",
        _cmd_simulate_seq,
        lambda p: [
            p.add_argument("--scene-spec", required=True),
            p.add_argument("--frames", type=int, required=True),
            p.add_argument("--seed", type=int, default=0),
            p.add_argument("--out-dir", required=True),
        ],
    )
    add(
        "eval",
        _cmd_eval,
        lambda p: [
            p.add_argument("--layout", default=None),
            p.add_argument("--graph", default=None),
            p.add_argument("--sequence", default=None, help="folder from simulate-seq"),
            p.add_argument("--ctc-interval", type=int, default=1),
            p.add_argument("--gen-cloud", default=None),
            p.add_argument("--ref-cloud", default=None),
            p.add_argument("--detections", default=None),
            p.add_argument("--ground-truths", default=None),
            p.add_argument("--ap-mode", choices=("R11", "R40"), default="R11"),
            p.add_argument("--ap-space", choices=("3D", "BEV"), default="3D"),
            p.add_argument("--classification", default=None),
            p.add_argument("--box-samples", default=None),
            p.add_argument("--out", required=True),
        ],
    )
    add(
        "train-denoiser",
        _cmd_train_denoiser,
        lambda p: [
            p.add_argument("--pairs", required=True, help="folder of *.graph.json / *.layout.json"),
            p.add_argument("--branch", choices=("box", "trajectory", "shape"), default="box"),
            p.add_argument("--steps", type=int, default=None),
            p.add_argument("--seed", type=int, default=0),
            p.add_argument("--out", required=True),
            p.add_argument("--log", default=None),
        ],
    )
    add(
        "plot-export",
        _cmd_plot_export,
        lambda p: [
            p.add_argument("--input", required=True),
            p.add_argument("--png", default=None),
            p.add_argument("--csv", default=None),
        ],
    )
    add(
        "run",
        _cmd_run,
        lambda p: [
            p.add_argument("--annotation", required=True),
            p.add_argument("--out-dir", required=True),
            p.add_argument("--seed", type=int, default=None),
        ],
    )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except PipelineStageError as exc:
        print(
            json.dumps(
                {"error": type(exc.cause).__name__, "message": str(exc.cause), "stage": exc.stage}
            ),
            file=sys.stderr,
        )
        return 1
    except Exception as exc:  # surfaced as machine-readable JSON
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
