"""Command-line entry point.

    chrono-shield [--seed N] [--config FILE] [--out PATH] <command> ...

Commands: synth, train, mask, attack, defend, sweep, serve-fixture.
--out names a directory for multi-file commands; for single-artifact
commands (train/mask/attack) it may instead name the output file
directly. Config files are line-oriented key=value (see README for
every key); --seed overrides the seed of every stage it applies to.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from datetime import date

from .attack import AttackConfig, run_attack
from .cnn import (
    Classifier,
    ModelConfig,
    TrainConfig,
    evaluate,
    load_weights,
    save_weights,
    train,
)
from .codecs import load_image, save_image
from .configfile import apply_overrides, parse_config_file
from .dataset import load_dataset, save_dataset
from .defense import VotePolicy, defend, format_verdict
from .fixture_server import HistoryFixtureServer
from .harness import emit_report, run_full_sweep
from .history import HistoryQuery, MatchPolicy, query_archive, query_remote
from .masks import BinaryMask, MaskParams, NoContourFound, generate_mask
from .synth import CLASS_NAMES, SynthConfig, synth_dataset

log = logging.getLogger("chrono_shield")

_IMAGE_EXTS = (".png", ".ppm", ".pgm")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chrono-shield", description=__doc__)
    parser.add_argument("--seed", type=int, default=None, help="override every stage seed")
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--out", default="out", help="output directory or file (default ./out)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", help="render the synthetic corpus to --out/dataset")

    p = sub.add_parser("train", help="train the classifier, write a .csw weight file")
    p.add_argument("--data", default=None, help="dataset dir from `synth` (default: render fresh)")
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("mask", help="generate the sign-region mask for one image")
    p.add_argument("image")
    p.add_argument("--low", type=float, default=None, help="Canny low threshold")
    p.add_argument("--high", type=float, default=None, help="Canny high threshold")
    p.add_argument("--sigma", type=float, default=None, help="blur sigma")
    p.add_argument("--min-area", type=float, default=None, help="contour area floor, fraction")

    p = sub.add_parser("attack", help="shadow-attack one image")
    p.add_argument("--model", "--weights", dest="model", required=True, help=".csw weight file")
    p.add_argument("--image", required=True)
    p.add_argument("--label", required=True, help="true class (name or index)")
    p.add_argument("--mask", default=None, help="mask image file (default: generate)")
    p.add_argument("--swarm", type=int, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--darkening", type=float, default=None)
    p.add_argument("--k", type=int, default=None, help="shadow polygon vertex count")

    p = sub.add_parser("defend", help="majority-vote verdict over history")
    p.add_argument("--model", "--weights", dest="model", required=True, help=".csw weight file")
    p.add_argument("--image", required=True)
    p.add_argument("--history", required=True, help="archive directory or http(s) endpoint")
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--heading", type=float, required=True)
    p.add_argument("--before", default=None, help="only use captures before this ISO date")
    p.add_argument("--min-history", type=int, default=None)

    p = sub.add_parser("sweep", help="full experiment: synth, train, attack, defend, report")
    p.add_argument("--max-images", type=int, default=None)

    p = sub.add_parser("serve-fixture", help="serve a local archive over HTTP")
    p.add_argument("--root", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    return parser


def _configs(args):
    """Stage configs from the config file, then the --seed override."""
    values = parse_config_file(args.config) if args.config else {}
    scfg = apply_overrides(SynthConfig(), values, "synth")
    tcfg = apply_overrides(TrainConfig(), values, "train")
    mcfg = apply_overrides(ModelConfig(), values, "model")
    acfg = apply_overrides(AttackConfig(), values, "attack")
    vote = apply_overrides(VotePolicy(), values, "vote")
    match = apply_overrides(MatchPolicy(), values, "match")
    mask = apply_overrides(MaskParams(), values, "mask")
    if args.seed is not None:
        scfg = dataclasses.replace(scfg, seed=args.seed)
        tcfg = dataclasses.replace(tcfg, seed=args.seed)
        acfg = dataclasses.replace(acfg, seed=args.seed)
    return scfg, tcfg, mcfg, acfg, vote, match, mask


def _parse_label(text: str) -> int:
    if text in CLASS_NAMES:
        return CLASS_NAMES.index(text)
    return int(text)


def _load_weights_file(path):
    with open(path, "rb") as fh:
        return load_weights(fh.read())


def _out_file(out: str, default_name: str, exts=_IMAGE_EXTS) -> str:
    """--out as a file when it has a matching extension, else a directory."""
    if out.endswith(exts):
        parent = os.path.dirname(out)
        if parent:
            os.makedirs(parent, exist_ok=True)
        return out
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, default_name)


def _cmd_synth(args) -> int:
    scfg, *_ = _configs(args)
    ds = synth_dataset(scfg)
    target = os.path.join(args.out, "dataset")
    save_dataset(ds, target)
    print(f"wrote {len(ds.items)} images ({len(ds.class_names)} classes) to {target}")
    return 0


def _cmd_train(args) -> int:
    scfg, tcfg, mcfg, *_ = _configs(args)
    if args.epochs is not None:
        tcfg = dataclasses.replace(tcfg, epochs=args.epochs)
    ds = load_dataset(args.data) if args.data else synth_dataset(scfg)
    mcfg = dataclasses.replace(mcfg, input_side=min(mcfg.input_side, ds.items[0][0].height))
    weights = train(ds, tcfg, mcfg)
    accuracy, loss = evaluate(weights, ds.split("test") or ds.split("train"))
    path = _out_file(args.out, "weights.csw", exts=(".csw",))
    with open(path, "wb") as fh:
        fh.write(save_weights(weights))
    print(f"test accuracy {accuracy * 100:.2f}%  loss {loss:.4f}  weights -> {path}")
    return 0


def _cmd_mask(args) -> int:
    _, _, _, _, _, _, params = _configs(args)
    overrides = {
        "low": args.low,
        "high": args.high,
        "sigma": args.sigma,
        "min_area_frac": args.min_area,
    }
    params = dataclasses.replace(
        params, **{k: v for k, v in overrides.items() if v is not None}
    )
    img = load_image(args.image)
    try:
        mask = generate_mask(img, params)
    except NoContourFound as exc:
        print(f"no mask: {exc}", file=sys.stderr)
        return 2
    path = _out_file(args.out, "mask.png")
    save_image(mask.to_image(), path)
    print(f"mask: {mask.count} of {img.width * img.height} pixels -> {path}")
    return 0


def _cmd_attack(args) -> int:
    _, _, _, acfg, *_ = _configs(args)
    overrides = {
        "swarm": args.swarm,
        "iterations": args.iters,
        "darkening": args.darkening,
        "vertices": args.k,
    }
    acfg = dataclasses.replace(acfg, **{k: v for k, v in overrides.items() if v is not None})
    weights = _load_weights_file(args.model)
    img = load_image(args.image)
    label = _parse_label(args.label)
    note = ""
    if args.mask:
        mask = BinaryMask.from_image(load_image(args.mask))
    else:
        try:
            mask = generate_mask(img)
        except NoContourFound:
            mask = BinaryMask.full(img.width, img.height)
            note = " (full-frame mask: no contour found)"
    result = run_attack(img, mask, Classifier(weights), label, acfg)
    path = _out_file(args.out, "adversarial.png")
    save_image(result.adversarial_image, path)
    before = result.original_prediction
    after = result.adversarial_prediction
    print(
        f"{CLASS_NAMES[before.label]} ({before.confidence * 100:.2f}%) -> "
        f"{CLASS_NAMES[after.label]} ({after.confidence * 100:.2f}%) "
        f"[{'flipped' if result.success else 'held'} after {result.iterations_used} "
        f"iterations]{note}"
    )
    print(f"adversarial image -> {path}")
    return 0


def _cmd_defend(args) -> int:
    _, _, _, _, vote, match, _ = _configs(args)
    if args.min_history is not None:
        vote = dataclasses.replace(vote, min_history=args.min_history)
    weights = _load_weights_file(args.model)
    img = load_image(args.image)
    before = date.fromisoformat(args.before) if args.before else None
    query = HistoryQuery(
        location=(args.lat, args.lon),
        heading=args.heading,
        max_records=vote.min_history,
        before=before,
    )
    if args.history.startswith(("http://", "https://")):
        records = query_remote(
            args.history, query, cache_dir=os.path.join(args.out, "cache"), policy=match
        )
    else:
        records = query_archive(args.history, query, match)
    verdict = defend(img, records, weights, vote)
    print(format_verdict(verdict, CLASS_NAMES))
    return 0


def _cmd_sweep(args) -> int:
    scfg, tcfg, mcfg, acfg, vote, _, _ = _configs(args)
    report = run_full_sweep(
        args.out,
        seed=args.seed if args.seed is not None else scfg.seed,
        synth_config=scfg,
        train_config=tcfg,
        model_config=mcfg,
        attack_config=acfg,
        vote_policy=vote,
        max_images=args.max_images,
    )
    sys.stdout.write(emit_report(report, "text-table").decode("utf-8"))
    print(f"reports under {args.out}: report.csv report.json report.txt")
    return 0


def _cmd_serve_fixture(args) -> int:
    import time

    server = HistoryFixtureServer(args.root, host=args.host, port=args.port)
    server.start()
    print(f"serving {args.root} at {server.url} (ctrl-c to stop)")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.stop()
        print("stopped")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "mask": _cmd_mask,
    "attack": _cmd_attack,
    "defend": _cmd_defend,
    "sweep": _cmd_sweep,
    "serve-fixture": _cmd_serve_fixture,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = _build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
