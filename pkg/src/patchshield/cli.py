"""Command-line entry point.

Subcommands: gen-masks, predict, certify, evaluate, simulate. Machine
readable JSON goes to stdout, diagnostics to stderr. Exit codes: 0 on
success, 1 on domain errors, 2 on I/O or backend errors.

A JSON config file may supply defaults (--config); explicit flags win.
Environment overrides: PATCHSHIELD_BACKEND_URL replaces a remote
backend URL, PATCHSHIELD_PARALLELISM the worker count.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import adversary, defense, imagefiles, masks
from .certify import certify as certify_image
from .certify import certify_multi_patch, evaluate_dataset
from .classifiers import ClassifierHandle, RemoteClassifier, TableClassifier
from .errors import BackendUnavailable, MalformedImage, PatchShieldError

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_IO = 2


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a JSON object")
    return doc


def _make_backend(spec: str) -> ClassifierHandle:
    env_url = os.environ.get("PATCHSHIELD_BACKEND_URL")
    if spec.startswith("table:"):
        return TableClassifier.load(spec[len("table:") :])
    if spec.startswith("remote:"):
        url = env_url or spec[len("remote:") :]
        return RemoteClassifier(url)
    raise ValueError(f"backend must be 'table:FILE' or 'remote:URL', got {spec!r}")


def _parallelism(args_value: int | None, config: dict) -> int:
    env = os.environ.get("PATCHSHIELD_PARALLELISM")
    if args_value is not None:
        return args_value
    if env:
        return int(env)
    if "parallelism" in config:
        return int(config["parallelism"])
    return os.cpu_count() or 1


def _threat_model(args, config: dict) -> masks.PatchThreatModel:
    patch_h = args.patch_h if args.patch_h is not None else config.get("patch_h")
    patch_w = args.patch_w if args.patch_w is not None else config.get("patch_w")
    patches = args.patches if args.patches is not None else config.get("patches", 1)
    if patch_h is None or patch_w is None:
        raise ValueError("--patch-h and --patch-w are required")
    return masks.PatchThreatModel(
        shapes=((int(patch_h), int(patch_w)),), patch_count=int(patches)
    )


def _emit(doc: dict) -> None:
    json.dump(doc, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")


def cmd_gen_masks(args, config) -> int:
    geom = masks.ImageGeometry(height=args.height, width=args.width, channels=args.channels)
    if args.shapes_budget is not None:
        ms = masks.generate_shape_cover_mask_set(
            args.shapes_budget, geom, (args.budget_h, args.budget_w)
        )
    else:
        if args.patch_h is None or args.patch_w is None:
            raise ValueError("--patch-h/--patch-w required without --shapes-budget")
        ms = masks.generate_mask_set_2d(
            geom, (args.patch_h, args.patch_w), (args.budget_h, args.budget_w)
        )
    if args.patches and args.patches > 1:
        ms = masks.generate_multi_patch_mask_set(ms, args.patches)
    masks.save_mask_set(ms, args.out)
    _emit({"masks": len(ms), "params": ms.params, "out": args.out})
    return EXIT_OK


def cmd_predict(args, config) -> int:
    img = imagefiles.load_image(args.image)
    ms = masks.load_mask_set(args.masks)
    backend = _make_backend(args.backend or config.get("backend", ""))
    fill = args.fill if args.fill is not None else config.get("fill", 0.0)
    algo = args.algo or config.get("algorithm", "double")
    if algo == "double":
        outcome = defense.double_masking(img, backend, ms, fill)
    elif algo == "challenger":
        outcome = defense.challenger_masking(img, backend, ms, fill, seed=args.seed)
    else:
        raise ValueError(f"unknown algorithm {algo!r}")
    _emit(
        {
            "label": outcome.label,
            "case": outcome.exit_case.value,
            "calls": outcome.classifier_calls,
            "witness": list(outcome.witness),
        }
    )
    return EXIT_OK


def cmd_certify(args, config) -> int:
    img = imagefiles.load_image(args.image)
    ms = masks.load_mask_set(args.masks)
    backend = _make_backend(args.backend or config.get("backend", ""))
    fill = args.fill if args.fill is not None else config.get("fill", 0.0)
    tm = _threat_model(args, config)
    if tm.patch_count == 1:
        cert = certify_image(img, args.label, backend, ms, tm, fill)
    else:
        cert = certify_multi_patch(img, args.label, backend, ms, tm, fill)
    doc = {
        "certified": cert.certified,
        "reason": cert.reason.value,
        "calls": cert.calls,
    }
    if cert.failing_pair is not None:
        doc["failing_pair"] = list(cert.failing_pair)
    if cert.failing_combo is not None:
        doc["failing_combo"] = list(cert.failing_combo)
    _emit(doc)
    return EXIT_OK


def cmd_evaluate(args, config) -> int:
    ms = masks.load_mask_set(args.masks)
    backend = _make_backend(args.backend or config.get("backend", ""))
    fill = args.fill if args.fill is not None else config.get("fill", 0.0)
    tm = _threat_model(args, config)
    algo = args.algo or config.get("algorithm", "double")
    items = []
    with open(args.manifest, "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            name, label = row[0].strip(), int(row[1])
            items.append((imagefiles.load_image(str(Path(args.images) / name)), label))
    metrics = evaluate_dataset(
        items,
        backend,
        ms,
        tm,
        fill=fill,
        algorithm=algo,
        parallelism=_parallelism(args.parallelism, config),
    )
    per_item = []
    for rec in metrics.items:
        line = {
            "index": rec.index,
            "label": rec.true_label,
            "predicted": rec.predicted,
            "case": rec.exit_case,
            "clean_correct": rec.clean_correct,
            "certified": rec.certified,
            "reason": rec.reason,
        }
        if rec.error:
            line["error"] = rec.error
        per_item.append(line)
        _emit({"item": line})
    summary = {
        "total": metrics.total,
        "clean_correct": metrics.clean_correct,
        "certified": metrics.certified,
        "clean_accuracy": metrics.clean_accuracy,
        "certified_accuracy": metrics.certified_accuracy,
    }
    _emit(summary)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump({**summary, "per_item": per_item}, fh, indent=2)
            fh.write("\n")
    return EXIT_OK


def cmd_simulate(args, config) -> int:
    instance = adversary.load_game_instance(args.instance)
    if args.exhaustive:
        report = adversary.exhaustive_attack(instance, algo=args.algo)
    else:
        if args.trials is None:
            raise ValueError("either --exhaustive or --trials N is required")
        report = adversary.randomized_attack(
            instance, algo=args.algo, trials=args.trials, seed=args.seed or 0
        )
    _emit(report.to_dict())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchshield")
    parser.add_argument("--config", help="JSON config file with defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-masks", help="generate a covering mask set")
    g.add_argument("--width", type=int, required=True)
    g.add_argument("--height", type=int, required=True)
    g.add_argument("--channels", type=int, default=3)
    g.add_argument("--patch-h", type=int)
    g.add_argument("--patch-w", type=int)
    g.add_argument("--budget-h", type=int, required=True)
    g.add_argument("--budget-w", type=int, required=True)
    g.add_argument("--shapes-budget", type=int, help="area budget for a rectangle shape cover")
    g.add_argument("--patches", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_masks)

    p = sub.add_parser("predict", help="robust prediction for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--backend")
    p.add_argument("--algo", choices=["double", "challenger"])
    p.add_argument("--fill", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_predict)

    c = sub.add_parser("certify", help="certify one labeled image")
    c.add_argument("--image", required=True)
    c.add_argument("--label", type=int, required=True)
    c.add_argument("--masks", required=True)
    c.add_argument("--backend")
    c.add_argument("--patch-h", type=int)
    c.add_argument("--patch-w", type=int)
    c.add_argument("--patches", type=int)
    c.add_argument("--fill", type=float)
    c.set_defaults(func=cmd_certify)

    e = sub.add_parser("evaluate", help="clean/certified accuracy over a manifest")
    e.add_argument("--manifest", required=True, help="CSV of (filename, label)")
    e.add_argument("--images", required=True, help="image directory")
    e.add_argument("--masks", required=True)
    e.add_argument("--backend")
    e.add_argument("--patch-h", type=int)
    e.add_argument("--patch-w", type=int)
    e.add_argument("--patches", type=int)
    e.add_argument("--algo", choices=["double", "challenger"])
    e.add_argument("--fill", type=float)
    e.add_argument("--parallelism", type=int)
    e.add_argument("--report", help="write the full JSON report here")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("simulate", help="adversary game on a JSON instance")
    s.add_argument("--instance", required=True)
    s.add_argument("--algo", choices=["double", "challenger", "both"], default="both")
    s.add_argument("--exhaustive", action="store_true")
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except (OSError, json.JSONDecodeError, BackendUnavailable, MalformedImage) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, PatchShieldError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
