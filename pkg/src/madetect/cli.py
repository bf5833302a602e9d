"""Command-line entry point; every stage reads and writes files.

Exit codes: 0 success, 2 bad input, 3 internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import re
import sys
from pathlib import Path

import numpy as np

from . import CONFIG_SCHEMA_VERSION, __version__
from .candidates import CandidateRegion, extract_candidates
from .classifier import TrainedEnsemble, feature_importance
from .evaluation import GroundTruthSet, evaluate, read_detections_csv, write_detections_csv
from .features import FEATURE_NAMES, read_feature_csv, write_feature_csv
from .image import ImageError, fov_mask, green_channel, load_image, read_field, save_image, write_field
from .lcf import LCF_KEYS, dense_maps, gradient_field, lcf_at_points
from .pipeline import PipelineConfig, StageError, detect, process_image, run_dataset, train_model
from .preprocess import normalize
from .synthetic import SceneSpec, render
from .weighting import aggregate

log = logging.getLogger("madetect")

EXIT_INPUT = 2
EXIT_INTERNAL = 3


class InputError(Exception):
    pass


def encode_rle(xs, ys) -> str:
    """Row runs as ``y,x0,length`` triples joined by ``;``."""
    order = np.lexsort((xs, ys))
    xs, ys = np.asarray(xs)[order], np.asarray(ys)[order]
    runs = []
    k = 0
    while k < len(xs):
        j = k
        while j + 1 < len(xs) and ys[j + 1] == ys[k] and xs[j + 1] == xs[j] + 1:
            j += 1
        runs.append(f"{ys[k]},{xs[k]},{j - k + 1}")
        k = j + 1
    return ";".join(runs)


def decode_rle(text: str):
    xs, ys = [], []
    for run in filter(None, text.split(";")):
        y, x0, n = (int(v) for v in run.split(","))
        xs.extend(range(x0, x0 + n))
        ys.extend([y] * n)
    return np.asarray(xs, dtype=np.intp), np.asarray(ys, dtype=np.intp)


def write_candidates_csv(path, cands) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "cx", "cy", "area", "source_scale", "source_threshold", "pixel_rle"])
        for k, c in enumerate(cands):
            cx, cy = c.centroid
            w.writerow([k, repr(cx), repr(cy), c.area, c.source_scale, c.source_threshold,
                        encode_rle(c.xs, c.ys)])


def read_candidates_csv(path) -> list[CandidateRegion]:
    with open(path, newline="") as fh:
        out = []
        for r in csv.DictReader(fh):
            xs, ys = decode_rle(r["pixel_rle"])
            out.append(CandidateRegion(xs, ys, float(r["source_scale"]), float(r["source_threshold"])))
        return out


def _config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return PipelineConfig.load(args.config)
    return PipelineConfig()


def _replace(obj, **kw):
    import dataclasses
    kw = {k: v for k, v in kw.items() if v is not None}
    return dataclasses.replace(obj, **kw) if kw else obj


def _floats(text: str):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# --- subcommands ---------------------------------------------------------------

def cmd_preprocess(args):
    cfg = _config(args)
    pcfg = _replace(cfg.preprocess, window_radius=args.window, clip=args.clip)
    rgb = load_image(args.inp)
    mask = fov_mask(rgb, args.fov_threshold if args.fov_threshold is not None else cfg.fov_threshold)
    write_field(args.out, normalize(green_channel(rgb), mask, pcfg))
    if args.mask_out:
        save_image(args.mask_out, np.repeat((mask * 255).astype(np.uint8)[..., None], 3, axis=2))


def orientation_set(n: int):
    if n < 1:
        raise InputError("--orient must be >= 1")
    return (0.0,) if n == 1 else tuple(k * (math.pi / 2) / (n - 1) for k in range(n))


def cmd_weight(args):
    cfg = _config(args).gradient
    cfg = _replace(cfg, scales=args.scales, orientations=orientation_set(args.orient) if args.orient else None)
    w = aggregate(read_field(args.inp), cfg)
    write_field(args.out_wos, w.total)
    if args.per_scale_dir:
        d = Path(args.per_scale_dir)
        d.mkdir(parents=True, exist_ok=True)
        for sigma, img in w.per_scale.items():
            write_field(d / f"iwo_s{sigma:g}.raw", img)


_SCALE_FILE = re.compile(r"iwo_s([0-9.]+)\.raw$")


def cmd_candidates(args):
    per_scale = {}
    for p in sorted(Path(args.wos_dir).glob("iwo_s*.raw")):
        m = _SCALE_FILE.search(p.name)
        if m:
            per_scale[float(m.group(1))] = read_field(p)
    if not per_scale:
        raise InputError(f"no iwo_s<sigma>.raw files in {args.wos_dir}")
    mask = None
    if args.mask:
        mask = load_image(args.mask).max(axis=2) > 127
    write_candidates_csv(args.out, extract_candidates(per_scale, _config(args).extraction, mask))


def _read_points(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)
    except KeyError:
        raise InputError(f"{path}: points CSV needs x and y columns") from None


def cmd_lcf(args):
    cfg = _replace(_config(args).support, num_lines=args.lines, band_width=args.band,
                   r_min=args.rmin, r_max=args.rmax)
    field = gradient_field(read_field(args.inp), cfg.gradient_sigma)
    if args.dense:
        prefix = Path(args.dense)
        for name, out in dense_maps(field, cfg).items():
            write_field(f"{prefix}_{name}_response.raw", out.response)
            write_field(f"{prefix}_{name}_radius.raw", out.radius)
    if args.points:
        if not args.out:
            raise InputError("--points needs --out")
        pts = _read_points(args.points)
        res = lcf_at_points(field, pts, cfg)
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", *LCF_KEYS])
            for k, (x, y) in enumerate(pts):
                w.writerow([x, y, *(repr(float(res[key][k])) for key in LCF_KEYS)])
    elif not args.dense:
        raise InputError("give --points/--out or --dense")


def cmd_features(args):
    cfg = _config(args)
    r = process_image(load_image(args.inp), cfg)
    labels = None
    if args.truth:
        from .pipeline import label_candidates
        truth = GroundTruthSet.from_csv(args.truth)
        iid = args.image_id or Path(args.inp).stem
        labels = label_candidates(r.centroids, truth.images.get(iid, []), cfg.match_radius)
    write_feature_csv(args.out, r.features, r.centroids, labels)
    if args.candidates_out:
        write_candidates_csv(args.candidates_out, r.candidates)


def cmd_train(args):
    cfg = _config(args)
    boost = _replace(cfg.boost, num_rounds=args.trees, max_splits=args.splits, learning_rate=args.rate,
                     split_criterion=args.criterion, target_class_ratio=args.ratio,
                     rng_seed=args.seed if args.seed is not None else args.global_seed)
    cfg = _replace(cfg, boost=boost, feature_subset=args.subset)
    Xs, ys = [], []
    for path in args.features:
        _, _, X, labels = read_feature_csv(path)
        if labels is None:
            raise InputError(f"{path}: feature file has no labels")
        Xs.append(X)
        ys.append(labels)
    ens = train_model(np.vstack(Xs), np.concatenate(ys), cfg)
    ens.save(args.model)


def _load_model(path) -> TrainedEnsemble:
    if not Path(path).exists():
        raise InputError(f"[model] model file {path} not found")
    return TrainedEnsemble.load(path)


def cmd_importance(args):
    imp = feature_importance(_load_model(args.model), len(FEATURE_NAMES))
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["feature", "name", "importance"])
        for k, (n, v) in enumerate(zip(FEATURE_NAMES, imp)):
            w.writerow([f"f{k + 1}", n, repr(float(v))])
    finally:
        if args.out:
            out.close()


def cmd_detect(args):
    cfg = _config(args)
    ens = _load_model(args.model)
    iid = args.image_id or Path(args.image).stem
    dets, heat = detect(load_image(args.image), ens, cfg, iid)
    write_detections_csv(args.out, dets)
    if args.heat:
        write_field(args.heat, heat)


def cmd_evaluate(args):
    cfg = _config(args)
    truth = GroundTruthSet.from_csv(args.truth)
    dets = read_detections_csv(args.detections)
    for d in dets:
        truth.images.setdefault(d.image_id, [])
    report = evaluate(dets, truth, args.match_radius or cfg.match_radius)
    report.save(args.out)
    if args.curve:
        report.curve.to_csv(args.curve)
    print(json.dumps({"f_score": report.f_score, "f_auc": report.f_auc, "auc": report.auc}))


def cmd_synth(args):
    with open(args.spec) as fh:
        spec = SceneSpec.from_dict(json.load(fh))
    rgb, truth = render(spec)
    save_image(args.out_img, rgb)
    iid = args.image_id or Path(args.out_img).stem
    with open(args.out_truth, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "x", "y", "radius"])
        if not truth.has_lesion:
            w.writerow([iid, "", "", ""])
        for x, y, r in truth.points:
            w.writerow([iid, x, y, r])


def cmd_run_dataset(args):
    cfg = _config(args)
    model = _load_model(args.model) if args.model else None
    report = run_dataset(args.root, args.out, cfg, model=model, seed=args.global_seed,
                         adapter=args.adapter)
    if report is not None:
        print(json.dumps({"f_score": report.f_score, "f_auc": report.f_auc, "auc": report.auc}))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="madetect", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version",
                   version=f"madetect {__version__} (config schema {CONFIG_SCHEMA_VERSION})")
    p.add_argument("--seed", dest="global_seed", type=int, default=0, help="seed for all random choices")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", help="green-channel illumination/contrast normalization")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--window", type=int)
    s.add_argument("--clip", type=float)
    s.add_argument("--fov-threshold", type=float)
    s.add_argument("--mask-out")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("weight", help="multi-scale gradient weighting")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out-wos", required=True)
    s.add_argument("--scales", type=_floats)
    s.add_argument("--orient", type=int, help="number of orientations spread over [0, pi/2]")
    s.add_argument("--per-scale-dir")
    s.set_defaults(func=cmd_weight)

    s = sub.add_parser("candidates", help="threshold sweep over per-scale weighted images")
    s.add_argument("--wos-dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mask")
    s.set_defaults(func=cmd_candidates)

    s = sub.add_parser("lcf", help="convergence filters at points or densely")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--points")
    s.add_argument("--out")
    s.add_argument("--dense", metavar="PREFIX")
    s.add_argument("--lines", type=int)
    s.add_argument("--band", type=int)
    s.add_argument("--rmin", type=int)
    s.add_argument("--rmax", type=int)
    s.set_defaults(func=cmd_lcf)

    s = sub.add_parser("features", help="candidates and their 29 features for one image")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--truth")
    s.add_argument("--image-id")
    s.add_argument("--candidates-out")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", help="train a RUSBoost model on labelled feature files")
    s.add_argument("--features", required=True, nargs="+")
    s.add_argument("--model", required=True)
    s.add_argument("--trees", type=int)
    s.add_argument("--splits", type=int)
    s.add_argument("--rate", type=float)
    s.add_argument("--criterion", choices=("gini", "deviance", "twoing"))
    s.add_argument("--ratio", type=float, help="majority:minority ratio per round (inf disables)")
    s.add_argument("--subset")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("importance", help="per-feature split-gain importance")
    s.add_argument("--model", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_importance)

    s = sub.add_parser("detect", help="score the candidates of one image")
    s.add_argument("--image", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--heat", help="raw field with candidate scores")
    s.add_argument("--image-id")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("evaluate", help="FROC, F_score, F_AUC and image AUC")
    s.add_argument("--detections", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--curve")
    s.add_argument("--match-radius", type=float)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="render a synthetic scene")
    s.add_argument("--spec", required=True)
    s.add_argument("--out-img", required=True)
    s.add_argument("--out-truth", required=True)
    s.add_argument("--image-id")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run-dataset", help="batch features, detections and report")
    s.add_argument("--root", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--adapter")
    s.add_argument("--model")
    s.set_defaults(func=cmd_run_dataset)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT if exc.input_error else EXIT_INTERNAL
    except (InputError, ImageError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # invariant violations and bugs
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
