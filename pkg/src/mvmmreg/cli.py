"""``mvmmreg`` command line: phantom, register, fuse, eval, weights and mas.

Exit codes: 0 success, 1 refused to overwrite an existing output, 2 bad
configuration or missing input path, 3 registration diverged.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io as mio
from .appearance import VARIANTS, AppearanceVariant, compute_weight_map
from .config import ConfigError, ExperimentConfig
from .geometry import LabelVolume, ProbLabelVolume, warp_labels
from .mas import mas_pipeline
from .metrics import evaluate, report_csv
from .mvmm import Subject, SubjectGroup, fuse_prob_maps, majority_vote, posterior_array, warped_prob_maps
from .optim import RegistrationDiverged, register
from .phantom import PhantomSpec, make_registration_case

log = logging.getLogger("mvmmreg")

EXIT_CLOBBER, EXIT_CONFIG, EXIT_DIVERGED = 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class Clobber(RuntimeError):
    pass


def _setup_logging():
    name = os.environ.get("MVMMREG_LOG", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(name, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if name not in LOG_LEVELS:
        log.warning("MVMMREG_LOG=%r not in %s, using 'error'", name, sorted(LOG_LEVELS))


def _prepare_out(path, overwrite: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise Clobber(f"output directory {out} is not empty (use --overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data):
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _require(path) -> str:
    p = str(path)
    if not (Path(p).exists() or Path(p + ".json").exists()):
        raise ConfigError(f"input path does not exist: {p}")
    return p


def _load_config(path) -> ExperimentConfig:
    cfg = ExperimentConfig.load(path) if path else ExperimentConfig()
    cfg.check_paths()
    return cfg


def _subject_entries(io_cfg: dict) -> list:
    """``[{"image": path, "labels": path}, ...]`` from either ``io.case`` or ``io.subjects``."""
    if "case" in io_cfg:
        case = Path(io_cfg["case"])
        manifest = case / "manifest.json"
        _require(manifest)
        subs = json.loads(manifest.read_text())["subjects"]
        return [{"image": str(case / s["image"]), "labels": str(case / s["labels"])} for s in subs]
    if "subjects" in io_cfg:
        return list(io_cfg["subjects"])
    raise ConfigError("io needs either 'case' (a phantom directory) or 'subjects'")


def _build_subject(entry, mcfg) -> Subject:
    if not isinstance(entry, dict) or "image" not in entry:
        raise ConfigError(f"subject entry needs an 'image' path: {entry!r}")
    image = mio.load_volume(_require(entry["image"]))
    if entry.get("labels") is None:
        return Subject.unlabeled(image, mcfg)
    labels = mio.load_volume(_require(entry["labels"]))
    if not isinstance(labels, LabelVolume):
        raise ConfigError(f"{entry['labels']} is not a label volume")
    return Subject.build(image, labels, mcfg)


# ---------------------------------------------------------------------------


def cmd_phantom(args) -> int:
    cfg = _load_config(args.config)
    specs = list(cfg.phantom)
    if not specs:
        mods = args.modalities.split(",")
        try:
            specs = [PhantomSpec(dims=tuple(args.dims), intensities=mods[i % len(mods)],
                                 noise_std=args.noise, bias_amplitude=args.bias,
                                 sigma_d=args.sigma_d, max_disp=args.max_disp)
                     for i in range(args.n_subjects)]
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid phantom parameters: {exc}") from exc
    if len(specs) < 2:
        raise ConfigError("a phantom case needs at least 2 subjects")
    out = _prepare_out(args.out, args.overwrite)
    case = make_registration_case(specs, args.seed, cfg.mvmm)
    entries = []
    for i, (s, t) in enumerate(zip(case.group.subjects, case.truth)):
        names = {"image": f"subject_{i}_image", "labels": f"subject_{i}_labels", "truth": f"truth_{i}"}
        mio.save_volume(out / names["image"], s.appearance)
        mio.save_volume(out / names["labels"], s.labels)
        mio.save_volume(out / names["truth"], t)
        entries.append({**names, "spec": dataclasses.asdict(specs[i])})
    mio.save_volume(out / "base_labels", case.base_labels)
    _write_json(out / "manifest.json", {"seed": args.seed, "subjects": entries,
                                        "base_labels": "base_labels"})
    log.info("wrote %d subjects to %s", len(entries), out)
    return 0


def cmd_register(args) -> int:
    cfg = _load_config(args.config)
    subjects = [_build_subject(e, cfg.mvmm) for e in _subject_entries(cfg.io)]
    n = len(subjects)
    if args.mode == "pair" and n != 2:
        raise ConfigError(f"--mode pair needs exactly 2 subjects, config lists {n}")
    fixed_idx = args.fixed
    if fixed_idx is None and args.mode == "pair":
        fixed_idx = 0
    if fixed_idx is not None and not 0 <= fixed_idx < n:
        raise ConfigError(f"--fixed {fixed_idx} out of range for {n} subjects")
    ref = fixed_idx if fixed_idx is not None else 0
    fixed = [i == fixed_idx for i in range(n)]
    out = _prepare_out(args.out, args.overwrite)
    opt = cfg.optim if args.seed is None else dataclasses.replace(cfg.optim, seed=args.seed)
    group = SubjectGroup(subjects, subjects[ref].grid, fixed=fixed)
    result = register(group, cfg.mvmm, opt)

    (out / "trace.csv").write_text(result.trace_csv())
    for i, disp in result.disps.items():
        mio.save_volume(out / f"disp_{i}", disp)
    probs = warped_prob_maps(group)
    for i, (s, d, p) in enumerate(zip(subjects, group.disps, probs)):
        mio.save_volume(out / f"warped_probs_{i}", ProbLabelVolume(group.common_grid, p))
        if s.labels is not None:
            mio.save_volume(out / f"warped_labels_{i}", warp_labels(s.labels, d))
    mcfg = cfg.mvmm
    fused = LabelVolume(group.common_grid, fuse_prob_maps(probs, mcfg.prior, mcfg.eps), mcfg.n_classes)
    mio.save_volume(out / "fused_labels", fused)
    mio.save_volume(out / "posterior",
                    ProbLabelVolume(group.common_grid, posterior_array(probs, mcfg.prior, mcfg.eps)))
    _write_json(out / "manifest.json", {
        "mode": args.mode, "fixed": fixed_idx, "seed": opt.seed, "config": cfg.to_dict(),
        "initial_loss": [repr(float(v)) for v in result.initial_loss],
        "final_loss": [repr(float(v)) for v in result.final_loss],
    })
    log.info("total loss %.6g -> %.6g", result.initial_loss[0], result.final_loss[0])
    return 0


def _read_fusion_inputs(directory: Path):
    headers = sorted(directory.glob("*.json"))
    warped = [h for h in headers if h.name.startswith("warped_")]
    headers = warped or headers
    probs, labels = [], []
    for h in headers:
        try:
            head = json.loads(h.read_text())
        except json.JSONDecodeError:
            continue
        if not isinstance(head, dict) or "dims" not in head:
            continue
        vol = mio.load_volume(h)
        if isinstance(vol, ProbLabelVolume):
            probs.append(vol)
        elif isinstance(vol, LabelVolume):
            labels.append(vol)
    return probs, labels


def cmd_fuse(args) -> int:
    cfg = _load_config(args.config)
    inputs = Path(_require(args.inputs))
    probs, labels = _read_fusion_inputs(inputs)
    if probs:
        vols = probs
        maps = [p.probs for p in probs]
        hard = [p.argmax() for p in probs]
    elif labels:
        k = max(cfg.mvmm.n_classes, max(lv.n_classes for lv in labels))
        vols = labels
        maps = [LabelVolume(lv.grid, lv.labels, k).one_hot() for lv in labels]
        hard = labels
    else:
        raise ConfigError(f"no label or posterior volumes found in {inputs}")
    grid = vols[0].grid
    if any(not grid.compatible(v.grid) for v in vols):
        raise ConfigError("fusion inputs do not share one grid")
    k = maps[0].shape[-1]
    prior = cfg.mvmm.prior if cfg.mvmm.n_classes == k else np.full(k, 1.0 / k)
    out = _prepare_out(args.out, args.overwrite)
    mio.save_volume(out / "fused_labels", LabelVolume(grid, fuse_prob_maps(maps, prior, cfg.mvmm.eps), k))
    mio.save_volume(out / "majority_labels", majority_vote(hard))
    log.info("fused %d inputs", len(maps))
    return 0


def cmd_eval(args) -> int:
    if len(args.pred) != len(args.ref):
        raise ConfigError("give one --ref per --pred")
    names = args.case or [Path(p).name for p in args.pred]
    if len(names) != len(args.pred):
        raise ConfigError("give one --case per --pred")
    reports = {}
    for name, p, r in zip(names, args.pred, args.ref):
        pred, ref = mio.load_volume(_require(p)), mio.load_volume(_require(r))
        if not (isinstance(pred, LabelVolume) and isinstance(ref, LabelVolume)):
            raise ConfigError(f"eval needs label volumes: {p}, {r}")
        reports[name] = evaluate(pred, ref)
    text = report_csv(reports)
    if args.out:
        path = Path(args.out)
        if path.exists() and not args.overwrite:
            raise Clobber(f"{path} exists (use --overwrite)")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_weights(args) -> int:
    image = mio.load_volume(_require(args.image))
    labels = mio.load_volume(_require(args.labels))
    if not isinstance(labels, LabelVolume):
        raise ConfigError(f"{args.labels} is not a label volume")
    out = _prepare_out(args.out, args.overwrite)
    for tag in VARIANTS:
        variant = AppearanceVariant(tag, args.patch_radius, args.bins, args.roi_radius)
        wm = compute_weight_map(image, labels, variant)
        mio.save_volume(out / f"weights_{tag}", wm)
        mio.write_png(out / f"weights_{tag}.png", wm.weights)
    mio.write_png(out / "image.png", image.values)
    return 0


def cmd_mas(args) -> int:
    cfg = _load_config(args.config)
    if "atlases" not in cfg.io or "target" not in cfg.io:
        raise ConfigError("mas needs io.atlases (list of subjects) and io.target")
    atlases = [_build_subject(e, cfg.mvmm) for e in cfg.io["atlases"]]
    target = _build_subject(cfg.io["target"], cfg.mvmm)
    out = _prepare_out(args.out, args.overwrite)
    opt = dataclasses.replace(cfg.optim, seed=args.seed)
    res = mas_pipeline(atlases, target, cfg.mvmm, args.n_atlases, args.rounds, opt, seed=args.seed,
                       jobs=args.jobs)
    mio.save_volume(out / "fused_labels", res.fused)
    mio.save_volume(out / "majority_labels", res.majority)
    mio.save_volume(out / "posterior", res.posterior)
    for r, result in enumerate(res.results):
        (out / f"trace_round{r}.csv").write_text(result.trace_csv())
    _write_json(out / "manifest.json", {"seed": args.seed, "atlas_indices": res.atlas_indices,
                                        "n_atlases": args.n_atlases, "rounds": args.rounds,
                                        "config": cfg.to_dict()})
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvmmreg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="experiment config JSON")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--overwrite", action="store_true", help="write into a non-empty output")

    sp = sub.add_parser("phantom", help="generate a seeded phantom registration case")
    common(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n-subjects", type=int, default=2)
    sp.add_argument("--dims", type=int, nargs="+", default=[128, 128])
    sp.add_argument("--modalities", default="mr,ct", help="comma list cycled over subjects")
    sp.add_argument("--noise", type=float, default=0.03)
    sp.add_argument("--bias", type=float, default=0.1)
    sp.add_argument("--sigma-d", type=float, default=20.0)
    sp.add_argument("--max-disp", type=float, default=6.0)
    sp.set_defaults(func=cmd_phantom)

    sp = sub.add_parser("register", help="pairwise or groupwise registration")
    common(sp, config_required=True)
    sp.add_argument("--mode", choices=("pair", "group"), default="pair")
    sp.add_argument("--fixed", type=int, default=None,
                    help="subject held at the identity (pair mode defaults to 0)")
    sp.add_argument("--seed", type=int, default=None, help="overrides optim.seed")
    sp.set_defaults(func=cmd_register)

    sp = sub.add_parser("fuse", help="fuse warped labels/posteriors from a directory")
    common(sp)
    sp.add_argument("--inputs", required=True, help="directory of warped volumes")
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("eval", help="Dice/Hausdorff report as CSV")
    sp.add_argument("--pred", action="append", required=True)
    sp.add_argument("--ref", action="append", required=True)
    sp.add_argument("--case", action="append", help="case names, one per --pred")
    sp.add_argument("--out", help="CSV path (stdout if omitted)")
    sp.add_argument("--overwrite", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("weights", help="export Mask/MOG/NCC/ECC weight maps and PNG slices")
    sp.add_argument("--image", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--overwrite", action="store_true")
    sp.add_argument("--patch-radius", type=int, default=3)
    sp.add_argument("--bins", type=int, default=8)
    sp.add_argument("--roi-radius", type=int, default=6)
    sp.set_defaults(func=cmd_weights)

    sp = sub.add_parser("mas", help="multi-atlas segmentation by repeated groupwise registration")
    common(sp, config_required=True)
    sp.add_argument("--n-atlases", type=int, default=3)
    sp.add_argument("--rounds", type=int, default=2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--jobs", type=int, default=1, help="rounds run in parallel")
    sp.set_defaults(func=cmd_mas)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"mvmmreg: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Clobber as exc:
        print(f"mvmmreg: error: {exc}", file=sys.stderr)
        return EXIT_CLOBBER
    except RegistrationDiverged as exc:
        print(f"mvmmreg: registration diverged: {exc}", file=sys.stderr)
        for row in exc.trace[-5:]:
            print("  " + ",".join(repr(v) for v in row), file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
