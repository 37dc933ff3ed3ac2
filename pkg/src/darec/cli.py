"""Command-line entry point: ``darec <command> ...``.

Exit codes: 0 success, 1 other errors, 2 configuration or input errors,
3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DarecError, DivergenceError, InvalidInputError

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _experiment(args):
    from .config import from_dict, load_config, preset

    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = from_dict({"profile": getattr(args, "profile", "toy"), "kind": getattr(args, "kind", "voxel")})
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "data", None):
        cfg.data_path = args.data
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    cfg.validate()
    return cfg


def _common(p, out_help="output directory"):
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="dataset directory built by 'darec data build'")
    p.add_argument("--out", help=out_help)


def cmd_config(args):
    from .config import preset

    cfg = preset(args.profile, args.kind) if not args.config else _experiment(args)
    sys.stdout.write(cfg.to_yaml())
    return EXIT_OK


def cmd_data_build(args):
    from .synthdata import DatasetSpec, build_dataset

    spec = DatasetSpec(seed=args.seed)
    if args.config:
        spec = _experiment(args).dataset
        spec.seed = args.seed if args.seed is not None else spec.seed
    for key in ("n_rendered", "n_natural", "resolution", "image_size"):
        val = getattr(args, key)
        if val is not None:
            setattr(spec, key, val)
    spec.validate()
    ds = build_dataset(spec, args.out)
    print(json.dumps({"out": args.out, "samples": len(ds.records), "shapes": len(ds.shapes)}))
    return EXIT_OK


def cmd_train_prior(args):
    from .trainer import run_stage1

    cfg = _experiment(args)
    out = Path(cfg.out_dir)
    path = run_stage1(cfg, out)
    print(json.dumps({"checkpoint": str(path)}))
    return EXIT_OK


def cmd_train_recon(args):
    from .trainer import run_stage2

    cfg = _experiment(args)
    rec = run_stage2(cfg, args.prior, cfg.out_dir)
    print(json.dumps({"out": cfg.out_dir, "best": rec.best}))
    return EXIT_OK


def cmd_eval(args):
    from .trainer import evaluate_checkpoint

    data = None
    if args.data:
        from .synthdata import load_dataset

        data = load_dataset(args.data)
    rep = evaluate_checkpoint(args.ckpt, args.split, data=data)
    d = rep.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(d, indent=2) + "\n")
    print(json.dumps({"n": d["n"], "mean_iou": d["mean_iou"], "mean_chamfer": d["mean_chamfer"]}))
    return EXIT_OK


def cmd_ablate(args):
    from .trainer import format_table, run_ablation

    cfg = _experiment(args)
    if args.seeds:
        cfg.ablation.seeds = tuple(args.seeds)
    table = run_ablation(cfg, args.prior, cfg.out_dir, reuse=args.reuse)
    print(format_table(table))
    return EXIT_OK


def cmd_report(args):
    from .report import write_report

    paths = write_report(args.run, args.out or args.run)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_embed(args):
    from .analysis import export_embeddings
    from .checkpoints import load_recon
    from .synthdata import load_dataset

    net = load_recon(args.ckpt)
    dump = export_embeddings(net, load_dataset(args.data), split=args.split)
    dump.to_csv(args.out)
    print(json.dumps({"rows": len(dump), "dim": dump.dim, "out": args.out}))
    return EXIT_OK


def _save_shape(path_stem: Path, shape, kind):
    from .geometry import write_points, write_voxels

    if kind == "voxel":
        write_voxels(path_stem.with_suffix(".dvox"), np.asarray(shape, dtype=np.float64), binary=False)
    else:
        write_points(path_stem.with_suffix(".xyz"), np.asarray(shape, dtype=np.float64))


def cmd_interpolate(args):
    from .analysis import contact_sheet, interpolate, load_image
    from .checkpoints import load_recon

    net = load_recon(args.ckpt)
    size = net.f.arch.image_size
    codes, shapes = interpolate(net, load_image(args.a, size), load_image(args.b, size), args.steps,
                                spherical=args.slerp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, s in enumerate(shapes.numpy()):
        _save_shape(out / f"interp_{k:03d}", s, net.kind)
    np.save(out / "codes.npy", codes.numpy())
    contact_sheet(shapes.numpy(), net.kind).save(out / "contact_sheet.png")
    print(json.dumps({"out": str(out), "steps": args.steps}))
    return EXIT_OK


def cmd_arithmetic(args):
    from .analysis import arithmetic, contact_sheet, load_image, parse_expression
    from .checkpoints import load_recon

    net = load_recon(args.ckpt)
    size = net.f.arch.image_size
    ops = [(s, load_image(p, size)) for s, p in parse_expression(args.expr)]
    code, shape = arithmetic(net, ops)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_shape(out / "result", shape.numpy(), net.kind)
    np.save(out / "code.npy", code.numpy())
    contact_sheet([shape.numpy()], net.kind).save(out / "result.png")
    print(json.dumps({"out": str(out), "operands": len(ops)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="darec", description="Two-stage single-view 3D reconstruction.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("config", help="print a fully expanded config")
    c.add_argument("--profile", default="toy", choices=["toy", "paper"])
    c.add_argument("--kind", default="voxel", choices=["voxel", "pointcloud"])
    c.add_argument("--config")
    c.set_defaults(func=cmd_config)

    d = sub.add_parser("data", help="dataset tools")
    dsub = d.add_subparsers(dest="data_command", required=True)
    b = dsub.add_parser("build", help="generate the procedural dataset")
    b.add_argument("--out", required=True)
    b.add_argument("--config")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--n-rendered", dest="n_rendered", type=int)
    b.add_argument("--n-natural", dest="n_natural", type=int)
    b.add_argument("--resolution", type=int)
    b.add_argument("--image-size", dest="image_size", type=int)
    b.set_defaults(func=cmd_data_build)

    t = sub.add_parser("train-prior", help="stage 1: train and freeze the shape autoencoder")
    _common(t, "run directory (prior.pt is written here)")
    t.set_defaults(func=cmd_train_prior)

    r = sub.add_parser("train-recon", help="stage 2: train the reconstruction network")
    _common(r)
    r.add_argument("--prior", required=True, help="frozen stage-1 checkpoint")
    r.set_defaults(func=cmd_train_recon)

    e = sub.add_parser("eval", help="evaluate a stage-2 checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--split", default="natural-test")
    e.add_argument("--data")
    e.add_argument("--out", help="write the full MetricReport JSON here")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="loss-term ablation over seeds")
    _common(a)
    a.add_argument("--prior", help="frozen stage-1 checkpoint (trained if omitted)")
    a.add_argument("--seeds", type=int, nargs="+")
    a.add_argument("--reuse", action="store_true", help="keep runs that already finished under the same config")
    a.set_defaults(func=cmd_ablate)

    rp = sub.add_parser("report", help="plot loss and metric curves of a run")
    rp.add_argument("--run", required=True, help="run directory containing run.jsonl")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)

    em = sub.add_parser("embed", help="export embeddings as CSV")
    em.add_argument("--ckpt", required=True)
    em.add_argument("--data", required=True)
    em.add_argument("--split")
    em.add_argument("--out", required=True)
    em.set_defaults(func=cmd_embed)

    i = sub.add_parser("interpolate", help="decode a linear walk between two images' codes")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--a", required=True)
    i.add_argument("--b", required=True)
    i.add_argument("--steps", type=int, default=5)
    i.add_argument("--slerp", action="store_true", help="spherical instead of linear")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_interpolate)

    ar = sub.add_parser("arithmetic", help="decode a signed sum of image codes")
    ar.add_argument("--ckpt", required=True)
    ar.add_argument("--expr", required=True, help='e.g. "+a.png -b.png +c.png"')
    ar.add_argument("--out", default="arithmetic_out")
    ar.set_defaults(func=cmd_arithmetic)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps(exc.diagnostics, default=str), file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DarecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
