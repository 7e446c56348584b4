"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import io as rio
from .animation import RiggedAsset, lbs_deform, random_poses
from .config import ConfigError, PipelineConfig
from .geodesic import GeodesicError, gvb_baseline, geodesic_prior
from .geometry import GeometryError, normalize_to_unit_cube
from .metrics import (MetricError, format_skeleton_table, format_skin_table, skeleton_report,
                      skin_report)
from .rigging import (Models, load_corpus, load_models, predict_skeleton, predict_skin, run_pipeline,
                      save_models, seq_config, seq_training, skeleton_samples, train_skin_stage)
from .seqmodel import ModelError, SkeletonModel, train
from .sequencer import ORDERINGS, TokenizationError, detokenize, tokenize
from .skindiff import DiffusionError
from .synthgen import TEMPLATES, SynthError, SynthSpec, build_corpus, default_specs

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DATA_ERRORS = (rio.FormatError, ConfigError, GeometryError, GeodesicError, TokenizationError,
               MetricError, ModelError, DiffusionError, SynthError, FileNotFoundError,
               IsADirectoryError, json.JSONDecodeError, KeyError)


class NumericError(ArithmeticError):
    pass


def _finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(np.asarray(a, dtype=np.float64))):
            raise NumericError("non-finite values in output")


def _need_out(args) -> Path:
    if not args.out:
        raise argparse.ArgumentTypeError("--out is required for this command")
    return Path(args.out)


def _emit(args, text: str) -> None:
    if args.out:
        rio.atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


# -- commands ---------------------------------------------------------------

def cmd_synth_gen(args, cfg):
    out = _need_out(args)
    if args.template:
        lo, hi = args.joints
        specs = [SynthSpec(args.template, (lo, hi), seed=args.seed + i) for i in range(args.count)]
    else:
        specs = default_specs(args.count, args.seed, tuple(args.joints))
    manifest = build_corpus(specs, out, cfg.point_count)
    print(f"wrote {len(manifest['assets'])} assets to {out}")


def cmd_normalize(args, cfg):
    out = _need_out(args)
    mesh = rio.read_obj(args.mesh)
    skel = rio.read_rig(args.rig).skeleton if args.rig else None
    mesh_n, skel_n, tf = normalize_to_unit_cube(mesh, skel)
    rio.write_obj(out / "mesh.obj", mesh_n)
    if skel_n is not None:
        rio.write_rig(out / "rig.json", skel_n, normalization=tf)
    rio.atomic_write(out / "transform.json", rio.dumps(tf.to_dict()))


def cmd_tokenize(args, cfg):
    seqs = [tokenize(rio.read_rig(p).skeleton, args.ordering) for p in args.rigs]
    _emit(args, "".join(s.to_line() + "\n" for s in seqs))


def cmd_detokenize(args, cfg):
    out = _need_out(args)
    seqs = rio.read_token_lines(args.tokens, args.ordering)
    if not seqs:
        raise rio.FormatError("token file is empty")
    decoded = [detokenize(s, args.ordering) for s in seqs]
    if len(decoded) == 1:
        rio.write_rig(out, decoded[0].skeleton)
    else:
        for i, d in enumerate(decoded):
            rio.write_rig(out / f"rig_{i:04d}.json", d.skeleton)
    repaired = sum(not d.valid for d in decoded)
    if repaired:
        print(f"{repaired} of {len(decoded)} sequences needed repair", file=sys.stderr)


def cmd_train_skeleton(args, cfg):
    out = _need_out(args)
    items = load_corpus(args.corpus)
    models = load_models(out) if out.exists() and args.resume else Models()
    model = models.skeleton or SkeletonModel(seq_config(cfg), seed=cfg.seed)
    samples = skeleton_samples(items, model, args.ordering)
    log = train(model, samples, seq_training(cfg, args.steps), args.ordering)
    _finite(log.losses)
    models.skeleton, models.ordering = model, args.ordering
    save_models(out, models)
    print(f"final loss {log.losses[-1]:.6f}")


def cmd_gen_skeleton(args, cfg):
    out = _need_out(args)
    models = load_models(args.checkpoint)
    if models.skeleton is None:
        raise rio.FormatError("checkpoint has no skeleton model")
    mesh_n, _, tf = normalize_to_unit_cube(rio.read_obj(args.mesh))
    decoded = predict_skeleton(models.skeleton, mesh_n, cfg, args.ordering, args.seed)
    skel = decoded.skeleton.with_joints(tf.invert(decoded.skeleton.joints))
    _finite(skel.joints)
    rio.write_rig(out, skel, normalization=tf)


def _normalized_inputs(args):
    mesh = rio.read_obj(args.mesh)
    skel = rio.read_rig(args.rig).skeleton
    mesh_n, skel_n, _ = normalize_to_unit_cube(mesh, skel)
    return mesh_n, skel_n


def cmd_geodesic(args, cfg):
    mesh_n, skel_n = _normalized_inputs(args)
    prior = geodesic_prior(mesh_n, skel_n, cfg.voxel_resolution, cfg.prior_sharpness)
    _finite(prior.matrix)
    if prior.used_fallback:
        print(f"{int(prior.fallback_rows.sum())} vertices used Euclidean fallback", file=sys.stderr)
    _emit(args, rio.emit_skin(prior.matrix, prior.joint_mask, prior=True))


def cmd_gvb(args, cfg):
    mesh_n, skel_n = _normalized_inputs(args)
    prior = geodesic_prior(mesh_n, skel_n, cfg.voxel_resolution, cfg.prior_sharpness)
    w = gvb_baseline(prior, args.k or cfg.gvb_nearest)
    _finite(w)
    _emit(args, rio.emit_skin(w, prior.joint_mask))


def cmd_train_skin(args, cfg):
    out = _need_out(args)
    items = load_corpus(args.corpus)
    models = load_models(out) if out.exists() else Models()
    losses = train_skin_stage(models, items, cfg, args.steps)
    _finite(losses)
    save_models(out, models)
    print(f"final loss {losses[-1]:.6f}")


def cmd_predict_skin(args, cfg):
    out = _need_out(args)
    models = load_models(args.checkpoint)
    mesh = rio.read_obj(args.mesh)
    rig = rio.read_rig(args.rig)
    mesh_n, skel_n, tf = normalize_to_unit_cube(mesh, rig.skeleton)
    w = predict_skin(models, mesh_n, skel_n, cfg, args.seed)
    _finite(w)
    rio.write_rig(out, rig.skeleton, w, rig.normalization)


def cmd_deform(args, cfg):
    out = _need_out(args)
    mesh = rio.read_obj(args.mesh)
    rig = rio.read_rig(args.rig)
    if rig.skin is None:
        raise rio.FormatError("rig has no skin weights")
    asset = RiggedAsset(mesh, rig.skeleton, rig.skin)
    pose = random_poses(rig.skeleton, args.pose + 1, args.max_angle, args.seed)[args.pose]
    deformed = lbs_deform(asset, pose)
    _finite(deformed.vertices)
    rio.write_obj(out, deformed)


def cmd_eval_skeleton(args, cfg):
    pred, truth = rio.read_rig(args.pred).skeleton, rio.read_rig(args.truth).skeleton
    rep = skeleton_report(pred, truth, cfg.bone_samples)
    _finite(list(rep.as_dict().values()))
    sys.stdout.write(format_skeleton_table({Path(args.pred).name: rep}))
    if args.out:
        rio.atomic_write(args.out, rio.dumps(rep.as_dict()))


def cmd_eval_skin(args, cfg):
    pred, truth = rio.read_rig(args.pred), rio.read_rig(args.truth)
    if pred.skin is None or truth.skin is None:
        raise rio.FormatError("both rigs need skin weights")
    asset = poses = None
    if args.mesh:
        asset = RiggedAsset(rio.read_obj(args.mesh), truth.skeleton, truth.skin)
        poses = random_poses(truth.skeleton, args.poses, 30.0, args.seed)
    rep = skin_report(pred.skin, truth.skin, cfg.skin_threshold, asset, poses)
    sys.stdout.write(format_skin_table({Path(args.pred).name: rep}))
    if args.out:
        rio.atomic_write(args.out, rio.dumps(rep.as_dict()))


def cmd_pipeline(args, cfg):
    out = _need_out(args)
    models = load_models(args.checkpoint)
    res = run_pipeline(models, rio.read_obj(args.mesh), cfg, args.ordering, args.seed)
    _finite(res.skeleton.joints, res.skin)
    rio.write_rig(out, res.skeleton, res.skin, res.transform)


# -- parser -----------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    s = argparse.SUPPRESS
    p.add_argument("--config", default=s, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=s, help="overrides the config seed")
    p.add_argument("--ordering", choices=ORDERINGS, default=s, help="bone ordering of token streams")
    p.add_argument("--out", default=s, help="output file or directory")
    p.add_argument("--json-errors", action="store_true", default=s, help="report errors as JSON on stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="autorig", parents=[common],
                                     description="Skeleton generation, skinning and rig evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("synth-gen", cmd_synth_gen, "write a procedural rigged corpus")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--template", choices=TEMPLATES)
    p.add_argument("--joints", type=int, nargs=2, default=(3, 10), metavar=("MIN", "MAX"))

    p = add("normalize", cmd_normalize, "fit a mesh (and rig) into the unit cube")
    p.add_argument("mesh")
    p.add_argument("--rig")

    p = add("tokenize", cmd_tokenize, "rig JSON files to token lines")
    p.add_argument("rigs", nargs="+")

    p = add("detokenize", cmd_detokenize, "token lines to rig JSON")
    p.add_argument("tokens")

    p = add("train-skeleton", cmd_train_skeleton, "train the skeleton model on a corpus")
    p.add_argument("corpus")
    p.add_argument("--steps", type=int)
    p.add_argument("--resume", action="store_true")

    p = add("gen-skeleton", cmd_gen_skeleton, "sample a skeleton for a mesh")
    p.add_argument("mesh")
    p.add_argument("--checkpoint", required=True)

    for name, func, help_ in (("geodesic", cmd_geodesic, "volumetric geodesic prior weights"),
                              ("gvb", cmd_gvb, "geodesic voxel binding baseline weights")):
        p = add(name, func, help_)
        p.add_argument("mesh")
        p.add_argument("rig")
        if name == "gvb":
            p.add_argument("--k", type=int)

    p = add("train-skin", cmd_train_skin, "train the skinning model on a corpus")
    p.add_argument("corpus")
    p.add_argument("--steps", type=int)

    p = add("predict-skin", cmd_predict_skin, "sample skinning weights for a mesh and rig")
    p.add_argument("mesh")
    p.add_argument("rig")
    p.add_argument("--checkpoint", required=True)

    p = add("deform", cmd_deform, "pose a skinned mesh with a random pose")
    p.add_argument("mesh")
    p.add_argument("rig")
    p.add_argument("--pose", type=int, default=0)
    p.add_argument("--max-angle", type=float, default=30.0)

    p = add("eval-skeleton", cmd_eval_skeleton, "chamfer metrics between two rigs")
    p.add_argument("pred")
    p.add_argument("truth")

    p = add("eval-skin", cmd_eval_skin, "skin precision, recall, L1 and deformation error")
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("--mesh")
    p.add_argument("--poses", type=int, default=10)

    p = add("pipeline", cmd_pipeline, "mesh in, rig JSON out, running both stages")
    p.add_argument("mesh")
    p.add_argument("--checkpoint", required=True)
    return parser


def _report(args_json: bool, code: int, exc: BaseException) -> int:
    if args_json:
        err = {"error": type(exc).__name__, "exit_code": code, "message": str(exc)}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    else:
        sys.stderr.write(f"autorig: error: {exc}\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    json_errors = getattr(args, "json_errors", False)
    args.ordering = getattr(args, "ordering", "spatial")
    args.out = getattr(args, "out", None)
    try:
        cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
        if hasattr(args, "seed"):
            cfg = replace(cfg, seed=args.seed)
        args.seed = cfg.seed
        torch.manual_seed(args.seed)
        args.func(args, cfg)
    except argparse.ArgumentTypeError as exc:
        parser.print_usage(sys.stderr)
        return _report(json_errors, EXIT_USAGE, exc)
    except NumericError as exc:
        return _report(json_errors, EXIT_NUMERIC, exc)
    except DATA_ERRORS as exc:
        return _report(json_errors, EXIT_DATA, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
