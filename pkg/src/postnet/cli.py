"""``postnet`` command line: synth, train, eval, grid, convert-uci.

Exit codes: 0 ok, 2 usage/config error, 3 data error, 4 numeric failure.
Errors are reported as one line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import data as data_mod
from .archive import load_model, save_model
from .autograd import NumericalError
from .data import DataError
from .metrics import MetricError, evaluate, export_uncertainty_grid, write_grid_csv
from .training import TrainConfig, jsonl_logger, sub_seed, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# keys a train config may carry besides TrainConfig fields
_PIPELINE_KEYS = ("split", "leave_out")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def cmd_synth(args) -> int:
    if args.dataset != "three-gaussians":
        raise UsageError(f"unknown synthetic dataset {args.dataset!r}")
    if args.n < 3:
        raise UsageError("--n must be >= 3")
    data_mod.save_csv(data_mod.generate_three_gaussians(args.n, args.seed), args.out)
    return EXIT_OK


def _read_config(path) -> tuple[TrainConfig, dict]:
    if path is None:
        raw = {}
    else:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc.msg}") from exc
        if not isinstance(raw, dict):
            raise UsageError(f"config {path} must hold a JSON object")
    pipeline = {k: raw.pop(k) for k in _PIPELINE_KEYS if k in raw}
    try:
        cfg = TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training config: {exc}") from exc
    return cfg, pipeline


def cmd_train(args) -> int:
    cfg, pipeline = _read_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    ds = data_mod.load_csv(args.data)
    ood = None
    if pipeline.get("leave_out"):
        ds, ood = data_mod.leave_out_classes(ds, pipeline["leave_out"])
    ratios = pipeline.get("split", [0.6, 0.2, 0.2])
    if len(ratios) != 3:
        raise UsageError("config 'split' needs three ratios (train, val, test)")
    tr, va, te = data_mod.split(ds, ratios, seed=sub_seed(cfg.seed, "split"))

    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.jsonl")
    with log_path.open("w", encoding="utf-8") as fh:
        result = train(tr, va, cfg, jsonl_logger(fh))
    model = result.model
    model.config["pipeline"] = {"data": str(args.data), "split": list(ratios), "leave_out": pipeline.get("leave_out")}
    save_model(model, args.out)
    if args.split_dir:
        out_dir = Path(args.split_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        data_mod.save_csv(te, out_dir / "test.csv")
        if ood is not None and len(ood):
            data_mod.save_csv(ood, out_dir / "ood.csv")
    return EXIT_OK


def _parse_ood(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"--ood expects name=path, got {item!r}")
        if name in out or name == "oodom":
            raise UsageError(f"duplicate or reserved OOD name {name!r}")
        out[name] = path
    return out


def cmd_eval(args) -> int:
    ood_paths = _parse_ood(args.ood)
    model = load_model(args.model)
    test = data_mod.load_csv(args.test, class_names=model.class_names or None)
    if test.n_features != model.input_dim:
        raise DataError(f"test file has {test.n_features} features, model expects {model.input_dim}")
    ood_sets = {}
    for name, path in ood_paths.items():
        ds = data_mod.load_csv(path)
        if ds.n_features != model.input_dim:
            raise DataError(f"OOD set {name!r} has {ds.n_features} features, model expects {model.input_dim}")
        ood_sets[name] = ds
    report = evaluate(model, test, ood_sets, args.oodom_factor)
    _write_json(report.to_dict(), args.report)
    return EXIT_OK


def _parse_bounds(text: str) -> tuple[float, ...]:
    try:
        bounds = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--bounds must be four numbers, got {text!r}") from None
    if len(bounds) != 4 or not (bounds[0] <= bounds[1] and bounds[2] <= bounds[3]):
        raise UsageError(f"--bounds must be x1min,x1max,x2min,x2max with min <= max, got {text!r}")
    return bounds


def cmd_grid(args) -> int:
    bounds = _parse_bounds(args.bounds)
    if args.res < 1:
        raise UsageError("--res must be >= 1")
    model = load_model(args.model)
    write_grid_csv(export_uncertainty_grid(model, bounds, args.res), args.out)
    return EXIT_OK


def cmd_convert(args) -> int:
    convert = {"segment": data_mod.convert_segment, "sensorless": data_mod.convert_sensorless}[args.dataset]
    data_mod.save_csv(convert(args.inputs), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="postnet", description="Dirichlet posterior classifiers with normalized latent densities.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--dataset", default="three-gaussians")
    s.add_argument("--n", type=int, default=1500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model from a CSV file")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON training config (also accepts 'split' and 'leave_out')")
    t.add_argument("--out", required=True, help="model JSON path")
    t.add_argument("--seed", type=int, help="overrides the config seed")
    t.add_argument("--log", help="JSONL training log (default: <out>.log.jsonl)")
    t.add_argument("--split-dir", help="also write the held-out test split (and left-out classes) here")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a model")
    e.add_argument("--model", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--ood", action="append", metavar="NAME=PATH")
    e.add_argument("--oodom-factor", type=float)
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("grid", help="export the uncertainty grid of a 2D model")
    g.add_argument("--model", required=True)
    g.add_argument("--bounds", required=True, help="x1min,x1max,x2min,x2max")
    g.add_argument("--res", type=int, default=100)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_grid)

    c = sub.add_parser("convert-uci", help="convert raw UCI files to the CSV format")
    c.add_argument("--dataset", required=True, choices=["segment", "sensorless"])
    c.add_argument("--in", dest="inputs", nargs="+", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_convert)
    return p


def _fail(code: int, message: str) -> int:
    sys.stderr.write("postnet: error: " + " ".join(str(message).split()) + "\n")
    return code


def _join_bounds(argv: list[str]) -> list[str]:
    # "--bounds -10,10,-10,10" would otherwise be read as an unknown flag
    out = []
    it = iter(argv)
    for a in it:
        if a == "--bounds":
            nxt = next(it, None)
            out.append(a if nxt is None else f"--bounds={nxt}")
        else:
            out.append(a)
    return out


def main(argv=None) -> int:
    argv = _join_bounds(list(sys.argv[1:] if argv is None else argv))
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except NumericalError as exc:
        return _fail(EXIT_NUMERIC, f"numeric failure: {exc}")
    except (DataError, MetricError) as exc:
        return _fail(EXIT_DATA, str(exc))
    except OSError as exc:
        name = exc.filename or ""
        return _fail(EXIT_DATA, f"{exc.strerror or exc}: {name}".rstrip(": "))


if __name__ == "__main__":
    sys.exit(main())
