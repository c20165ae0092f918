"""Command-line entry point: ``sodkit <subcommand> [flags]``.

Exit statuses: 0 success, 1 usage error, 2 data error, 3 degenerate-input
warnings under ``--strict``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, hda_loss, metrics, morphology, synth, topology, trainer
from .grid import GridError, PngDecodeError, read_gray, read_mask, read_rgb, write_gray

log = logging.getLogger("sodkit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DEGENERATE = 0, 1, 2, 3

DEFAULTS_HEADER = {
    "morph_iterations": 5,
    "neighborhood_side": 30,
    "lambda": 5.0,
    "alpha": list(hda_loss.DEFAULT_LEVEL_ALPHAS),
    "beta": 1.0,
    "beta_squared": metrics.BETA_SQUARED,
    "mae_b_radius": metrics.MAE_B_RADIUS,
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().rstrip()}")


def _write_text(path, text: str) -> None:
    Path(path).write_text(text)


def _json_dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _hda_config(args) -> hda_loss.HdaConfig:
    return hda_loss.HdaConfig(
        neighborhood_side=args.side,
        morph_iterations=args.iterations,
        lam=args.lam,
        normalize_neighborhood=not getattr(args, "raw_sum", False),
    )


# -- subcommands --------------------------------------------------------------


def cmd_version(args) -> int:
    print(f"sodkit {__version__} (python {sys.version.split()[0]}, numpy {np.__version__})")
    return EXIT_OK


def cmd_expand_gt(args) -> int:
    gt = read_mask(args.inp)
    envelope, expanded = morphology.expand_gt(gt, morphology.StructuringSpec(iterations=args.iterations))
    write_gray(args.out_expanded, expanded)
    if args.out_envelope:
        write_gray(args.out_envelope, envelope)
    return EXIT_OK


def cmd_boundary_band(args) -> int:
    gt = read_mask(args.inp)
    band = morphology.boundary_band(gt, args.radius)
    write_gray(args.out, band)
    if not band.any():
        args._degenerate.append(f"{args.inp}: empty boundary band")
    return EXIT_OK


def cmd_weights(args) -> int:
    gt = read_mask(args.gt)
    omega = hda_loss.weight_map(gt, _hda_config(args))
    peak = omega.max()
    write_gray(args.out, omega / peak if peak > 0 else omega)
    if args.csv:
        np.savetxt(args.csv, omega, delimiter=",", fmt="%.17g")
    if peak == 0:
        args._degenerate.append(f"{args.gt}: weight map is identically zero")
    return EXIT_OK


def _load_maps(args, shape) -> tuple[np.ndarray, list[np.ndarray]]:
    if args.pred:
        p = read_gray(args.pred)
        return p, [p] * 4
    d = Path(args.maps_dir)
    ts = read_gray(d / "ts_pred.png")
    return ts, [read_gray(d / f"p{i}.png") for i in topology.LEVELS]


def cmd_loss(args) -> int:
    gt = read_mask(args.gt)
    ts_pred, os_preds = _load_maps(args, gt.shape)
    cfg = _hda_config(args)
    if args.expanded:
        expanded = read_mask(args.expanded)
    else:
        _, expanded = morphology.expand_gt(gt, morphology.StructuringSpec(iterations=args.iterations))
    try:
        result = hda_loss.total_loss(ts_pred, expanded, os_preds, gt, hda_loss.LevelWeights(), cfg)
    except hda_loss.ContractError as exc:
        raise DataError(str(exc)) from exc
    doc = result.as_dict()
    doc["config"] = {
        "neighborhood_side": cfg.neighborhood_side,
        "morph_iterations": cfg.morph_iterations,
        "lambda": cfg.lam,
        "normalize_neighborhood": cfg.normalize_neighborhood,
        "alpha": list(hda_loss.DEFAULT_LEVEL_ALPHAS),
        "beta": 1.0,
    }
    text = _json_dump(doc)
    if args.json:
        _write_text(args.json, text)
    else:
        sys.stdout.write(text)
    args._degenerate.extend(result.notes)
    return EXIT_OK


def cmd_eval(args) -> int:
    for d in (args.pred_dir, args.gt_dir):
        if not Path(d).is_dir():
            raise DataError(f"not a directory: {d}")
    cfg = metrics.EvalConfig(
        mae_b_radius=args.mae_b_radius,
        beta_squared=args.beta_squared,
        literal_f=args.literal_f,
        threads=args.threads,
    )
    report = metrics.evaluate_set(args.pred_dir, args.gt_dir, cfg)
    _write_text(args.report, _json_dump(report.as_dict()))
    if args.curves:
        _write_text(args.curves, report.curve.to_csv())
    if args.per_image:
        _write_text(args.per_image, report.per_image_csv())
    for item in report.missing:
        log.error("unpaired file: %s", item)
    for err in report.errors:
        log.error("%s: %s", err["stem"], err["error"])
    if report.missing or report.errors:
        raise DataError(f"{len(report.missing)} unpaired and {len(report.errors)} failed files")
    args._degenerate.extend(f"{d['stem']}: {','.join(d['flags'])}" for d in report.degenerate_images)
    return EXIT_OK


def cmd_forward(args) -> int:
    image = read_rgb(args.image)
    _, h, w = image.shape
    try:
        cfg = topology.TopologyConfig(h, w, args.base_channels, args.seed)
    except topology.TopologyError as exc:
        raise DataError(f"{args.image}: {exc}") from exc
    result = topology.Topology(cfg).forward(image)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_gray(out / "ts_pred.png", result.ts_pred)
    for level, pred in zip(topology.LEVELS, result.os_preds):
        write_gray(out / f"p{level}.png", pred)
    return EXIT_OK


def cmd_audit_shapes(args) -> int:
    try:
        cfg = topology.TopologyConfig(args.h, args.w, args.base_channels, args.seed)
    except topology.TopologyError as exc:
        raise UsageError(str(exc)) from exc
    rows = topology.audit_shapes(cfg)
    print(f"{'tensor':<8} {'stride':>6}  {'expected':<16} {'observed':<16} {'reference':<18} ok")
    for r in rows:
        exp = "x".join(map(str, r["shape"])) if r["shape"] else "-"
        obs = "x".join(map(str, r["observed"])) if r["observed"] else "-"
        ref = "x".join(map(str, r["reference_shape"])) if r["reference_shape"] else "-"
        print(f"{r['name']:<8} {r['stride'] if r['stride'] else '-':>6}  {exp:<16} {obs:<16} {ref:<18} {'yes' if r['ok'] else 'NO'}")
    if not all(r["ok"] for r in rows):
        raise DataError("shape audit failed")
    return EXIT_OK


def cmd_synth(args) -> int:
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    try:
        template = synth.SetTemplate(
            size=args.size,
            contrast=args.contrast,
            noise_sigma=args.noise_sigma,
            texture_period=args.texture_period,
            kind_probs={k: 1.0 / len(kinds) for k in kinds},
        )
        synth.SceneSpec(size=args.size, contrast=args.contrast, noise_sigma=args.noise_sigma,
                        texture_period=args.texture_period)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    synth.generate_set(args.count, args.seed, template, args.out, threads=args.threads)
    return EXIT_OK


def _train_config(args, mode: str) -> trainer.TrainConfig:
    try:
        return trainer.TrainConfig(args.lr, args.epochs, mode, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args) -> int:
    cfg = _hda_config(args)
    data = trainer.Dataset.from_dir(args.data, cfg)
    try:
        result = trainer.train(data, _train_config(args, args.loss), cfg)
    except trainer.TrainingDiverged as exc:
        raise DataError(str(exc)) from exc
    _write_text(args.out, result.model.to_json())
    if args.trace:
        _write_text(args.trace, result.trace_csv())
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _hda_config(args)
    train_data = trainer.Dataset.from_dir(args.train, cfg)
    test_data = trainer.Dataset.from_dir(args.test, cfg)
    try:
        report = trainer.ablate(train_data, test_data, _train_config(args, "hda"), range(args.seeds), cfg)
    except trainer.TrainingDiverged as exc:
        raise DataError(str(exc)) from exc
    _write_text(args.report, _json_dump(report))
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    # Accepted before or after the subcommand; the subcommand copies use
    # SUPPRESS defaults so they never clobber a value given up front.
    def dflt(v):
        return argparse.SUPPRESS if suppress else v

    g = p.add_argument_group("global options")
    g.add_argument("--threads", type=int, default=dflt(os.cpu_count() or 1), help="worker pool size for item-parallel work")
    g.add_argument("--log", choices=("quiet", "info", "debug"), default=dflt("quiet"))
    g.add_argument("--json-errors", action="store_true", default=dflt(False),
                   help="also emit errors as a JSON object on stderr")
    g.add_argument("--strict", action="store_true", default=dflt(False), help="exit 3 when inputs were degenerate")
    g.add_argument("--config", default=dflt(None), help="JSON file of flag values; explicit flags win")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    _global_flags(p, suppress=True)
    return p


def _loss_flags(p: argparse.ArgumentParser, side=True) -> None:
    if side:
        p.add_argument("--side", type=int, default=30, help="weight-map neighborhood side")
    p.add_argument("--iterations", type=int, default=5, help="3x3 morphology iterations")
    p.add_argument("--lambda", dest="lam", type=float, default=5.0, help="weight-map gain")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="sodkit", description="Saliency supervision, loss and evaluation toolkit.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="<command>", parser_class=_Parser)

    def add(name, fn, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=fn)
        return p

    add("version", cmd_version, "print version information")

    p = add("expand-gt", cmd_expand_gt, "write expanded ground truth and boundary envelope")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out-expanded", required=True)
    p.add_argument("--out-envelope")
    p.add_argument("--iterations", type=int, default=5)

    p = add("boundary-band", cmd_boundary_band, "write the boundary band used by MAE_b")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--radius", type=int, default=metrics.MAE_B_RADIUS)

    p = add("weights", cmd_weights, "write the HDA weight map (PNG scaled by its max, optional raw CSV)")
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.add_argument("--raw-sum", action="store_true", help="un-normalized neighborhood sums")
    _loss_flags(p)

    p = add("loss", cmd_loss, "evaluate every component of the total loss")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--pred", help="one map used for the TS output and all four levels")
    src.add_argument("--maps-dir", help="directory with ts_pred.png and p2..p5.png")
    p.add_argument("--gt", required=True)
    p.add_argument("--expanded", help="expanded GT; derived from --gt when omitted")
    p.add_argument("--json")
    _loss_flags(p)

    p = add("eval", cmd_eval, "evaluate a prediction directory against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--curves")
    p.add_argument("--per-image")
    p.add_argument("--mae-b-radius", type=int, default=metrics.MAE_B_RADIUS)
    p.add_argument("--beta-squared", type=float, default=metrics.BETA_SQUARED)
    p.add_argument("--literal-f", action="store_true", help="(1+b)^2 PR/(b^2 P+R) with b = --beta-squared")

    p = add("forward", cmd_forward, "run the random-weight topology on one image")
    p.add_argument("--image", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-channels", type=int, default=8)
    p.add_argument("--out-dir", required=True)

    p = add("audit-shapes", cmd_audit_shapes, "print the topology shape contract table")
    p.add_argument("--h", type=int, default=320)
    p.add_argument("--w", type=int, default=320)
    p.add_argument("--base-channels", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)

    p = add("synth", cmd_synth, "generate synthetic image/GT pairs")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--contrast", type=float, default=0.15)
    p.add_argument("--noise-sigma", type=float, default=0.03)
    p.add_argument("--texture-period", type=float, default=8.0)
    p.add_argument("--kinds", default=",".join(synth.SHAPE_KINDS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train the per-pixel model")
    p.add_argument("--data", required=True)
    p.add_argument("--loss", choices=trainer.LOSS_MODES, default="hda")
    p.add_argument("--epochs", type=int, default=trainer.TrainConfig.epochs)
    p.add_argument("--lr", type=float, default=trainer.TrainConfig.learning_rate)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    _loss_flags(p)

    p = add("ablate", cmd_ablate, "compare HDA and BCE+IoU training across seeds")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=trainer.ABLATION_CONFIG.epochs)
    p.add_argument("--lr", type=float, default=trainer.ABLATION_CONFIG.learning_rate)
    p.add_argument("--seed", type=int, default=0, help=argparse.SUPPRESS)
    p.add_argument("--report", required=True)
    _loss_flags(p)

    return parser


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    return parser._subparsers._group_actions[0].choices[name]


def _load_config(path: str, sub: argparse.ArgumentParser) -> dict:
    """Read a ``--config`` JSON object keyed by long option names."""
    try:
        values = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read --config {path}: {exc}") from exc
    if not isinstance(values, dict):
        raise UsageError("--config must hold a JSON object")
    dests = {}
    for action in sub._actions:
        for opt in action.option_strings:
            if opt.startswith("--") and opt not in ("--help", "--config"):
                dests[opt[2:]] = action.dest
                dests[opt[2:].replace("-", "_")] = action.dest
    unknown = sorted(k for k in values if k not in dests)
    if unknown:
        raise UsageError(f"unknown keys in --config: {', '.join(unknown)}")
    return {dests[k]: v for k, v in values.items()}


def parse_args(argv: list[str]) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` act as defaults under explicit flags."""
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    commands = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in commands), None)
    if known.config and command:
        sub = _subparser(parser, command)
        values = _load_config(known.config, sub)
        for action in sub._actions:
            if action.dest in values:
                action.required = False
        sub.set_defaults(**values)
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        raise UsageError(f"missing subcommand\n{parser.format_usage().rstrip()}")
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    return args


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.handlers[:] = [handler]
    log.propagate = False
    log.setLevel({"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}[level])


def _report_error(kind: str, message: str, status: int, as_json: bool) -> int:
    print(message, file=sys.stderr)
    if as_json:
        print(json.dumps({"error": kind, "message": message, "exit_status": status}), file=sys.stderr)
    return status


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    json_errors = "--json-errors" in argv
    try:
        args = parse_args(argv)
    except UsageError as exc:
        return _report_error("usage", str(exc), EXIT_USAGE, json_errors)
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    _setup_logging(args.log)
    log.info("sodkit %s %s", __version__, args.command)
    log.info("defaults: %s", json.dumps(DEFAULTS_HEADER, sort_keys=True))
    args._degenerate = []
    try:
        status = args.func(args)
    except UsageError as exc:
        return _report_error("usage", str(exc), EXIT_USAGE, args.json_errors)
    except (DataError, GridError, PngDecodeError, OSError, ValueError) as exc:
        return _report_error("data", f"error: {exc}", EXIT_DATA, args.json_errors)
    for note in args._degenerate:
        log.warning("degenerate input: %s", note)
    if status == EXIT_OK and args._degenerate and args.strict:
        return EXIT_DEGENERATE
    return status


if __name__ == "__main__":
    sys.exit(main())
