"""Command-line entry point: generate, train, infer, eval, plot.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import io, thread_cap
from .errors import DataError, ShapeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _shared(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, choices=(2, 3), default=None)
    p.add_argument("--preset", choices=("paper", "desk"), default="desk")
    p.add_argument("--config", type=Path, default=None,
                   help="JSON object whose keys override flags (plus gen/aug/network/weights sections)")
    p.add_argument("--out", type=Path, required=True)


def _gen_flags(p):
    p.add_argument("--fix-levels", type=int, default=None)
    p.add_argument("--fix-length", action="store_true")
    p.add_argument("--max-levels", type=int, default=None)
    p.add_argument("--p-trifurcation", type=float, default=None)
    p.add_argument("--jitter", type=float, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--n-points", type=int, default=None)
    p.add_argument("--grid", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="branchtopo", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic labeled dataset")
    _shared(g)
    g.add_argument("--count", type=int, required=True)
    _gen_flags(g)

    t = sub.add_parser("train", help="train a network, on the fly or from a dataset")
    _shared(t)
    t.add_argument("--data", type=Path, default=None, help="dataset directory (default: fresh structures)")
    t.add_argument("--steps", type=int, default=1000)
    t.add_argument("--batch-size", type=int, default=12)
    t.add_argument("--lr", type=float, default=1e-5)
    t.add_argument("--eval-every", type=int, default=100)
    t.add_argument("--baseline", action="store_true", help="drop the global-coordinate concatenation")
    _gen_flags(t)

    i = sub.add_parser("infer", help="predict instances and junctions for point files")
    _shared(i)
    i.add_argument("--model", type=Path, required=True)
    i.add_argument("--input", type=Path, required=True, help="point CSV or directory of them")
    i.add_argument("--bandwidth", type=float, default=None)

    e = sub.add_parser("eval", help="score predictions, or run the perturbation sweep")
    _shared(e)
    e.add_argument("--pred", type=Path, default=None)
    e.add_argument("--gt", type=Path, default=None)
    e.add_argument("--centers", choices=("junctions", "all"), default="junctions")
    e.add_argument("--sweep", action="store_true")
    e.add_argument("--model", type=Path, default=None)
    e.add_argument("--count", type=int, default=10, help="structures per sweep cell")
    _gen_flags(e)

    pl = sub.add_parser("plot", help="render a prediction CSV as SVG")
    _shared(pl)
    pl.add_argument("--input", type=Path, required=True)
    pl.add_argument("--project", choices=("xy", "xz", "yz"), default=None)
    return ap


SECTIONS = ("gen", "aug", "network", "weights")


def _apply_config(args, parser) -> dict:
    """Override parsed flags with the JSON config; return its section dicts."""
    if args.config is None:
        return {}
    try:
        cfg = json.loads(args.config.read_text())
    except OSError as e:
        raise DataError(f"cannot read config {args.config}: {e.strerror}") from e
    except json.JSONDecodeError as e:
        raise UsageError(f"config {args.config} is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    sections = {k: cfg.pop(k) for k in SECTIONS if k in cfg}
    known = vars(args)
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("command", "config"):
            raise UsageError(f"unknown config key {key!r}")
        if dest in ("out", "data", "model", "input", "pred", "gt") and value is not None:
            value = Path(value)
        setattr(args, dest, value)
    return sections


_GEN_FLAGS = {"fix_levels": "fixed_levels", "max_levels": "max_levels",
              "p_trifurcation": "p_trifurcation", "grid": "grid_size"}
_AUG_FLAGS = {"jitter": "jitter_sd", "dropout": "dropout_p", "n_points": "n_points"}


def _gen_aug(args, sections, dim=None):
    from .geometry import AugConfig, GenConfig
    from .train import preset_configs

    net, gen, aug = preset_configs(args.preset, dim or args.dim or 2)
    g = {v: getattr(args, k) for k, v in _GEN_FLAGS.items() if getattr(args, k, None) is not None}
    if g.get("fixed_levels") is not None and getattr(args, "p_trifurcation", None) is None:
        # a fixed level count means a fixed branch count: bifurcations only
        g["p_trifurcation"] = 0.0
    if getattr(args, "fix_length", False):
        g["fixed_length"] = True
    a = {v: getattr(args, k) for k, v in _AUG_FLAGS.items() if getattr(args, k, None) is not None}
    gen = GenConfig.from_dict({**gen.to_dict(), **g, **sections.get("gen", {})})
    aug = AugConfig.from_dict({**aug.to_dict(), **a, **sections.get("aug", {})})
    return net, gen, aug


def cmd_generate(args, sections):
    from .pipeline import generate_dataset

    _, gen, aug = _gen_aug(args, sections)
    records = generate_dataset(args.out, gen, aug, args.count, args.seed, workers=thread_cap())
    print(f"wrote {len(records)} structures to {args.out}")


def cmd_train(args, sections):
    from .losses import LossWeights
    from .model import NetworkConfig
    from .train import TrainConfig, train

    clouds = None
    if args.data is not None:
        _, clouds = io.load_dataset(args.data)
        if args.dim is None:
            args.dim = clouds[0].dim
    net, gen, aug = _gen_aug(args, sections)
    if "network" in sections:
        net = NetworkConfig.from_dict({**net.to_dict(), **sections["network"]})
    if args.baseline:
        net = dataclasses.replace(net, use_global_coords=False)
    if args.n_points is not None and args.n_points != net.n_points:
        raise UsageError("--n-points must match the preset network; use a config network section")
    weights = LossWeights(**{**LossWeights().to_dict(), **sections.get("weights", {})})
    if clouds is not None:
        for c in clouds:
            if c.dim != net.dim or len(c) != net.n_points:
                raise DataError(f"dataset clouds are {len(c)}x{c.dim}; network expects "
                                f"{net.n_points}x{net.dim}")
    cfg = TrainConfig(network=net, gen=gen, aug=aug, weights=weights, batch_size=args.batch_size,
                      lr=args.lr, steps=args.steps, eval_every=args.eval_every, seed=args.seed,
                      preset=args.preset)

    def progress(step, rep):
        if step % cfg.eval_every == 0 or step == cfg.steps:
            print(f"step {step} total {rep.total:.6g} ce {rep.ce:.6g} dlf {rep.dlf:.6g}", flush=True)

    train(cfg, args.out, clouds, None if args.data is None else str(args.data), progress)
    print(f"checkpoint {args.out / 'model.bts'}")


def _load_model(args):
    from .model import load_checkpoint

    mp, _ = load_checkpoint(args.model)
    if args.dim is not None and args.dim != mp.config.dim:
        raise DataError(f"dimension mismatch: --dim {args.dim} but the model is {mp.config.dim}-D")
    return mp


def cmd_infer(args, sections):
    from .pipeline import DEFAULT_BANDWIDTH, _file_list, infer_file

    mp = _load_model(args)
    bw = DEFAULT_BANDWIDTH if args.bandwidth is None else args.bandwidth
    if args.input.is_dir():
        files = _file_list(args.input)
        if not files:
            raise DataError(f"{args.input}: no point files")
        args.out.mkdir(parents=True, exist_ok=True)
        pairs = [(args.input / f, args.out / f) for f in files]
    else:
        pairs = [(args.input, args.out)]
    for src, dst in pairs:
        infer_file(mp, src, seed=args.seed, bandwidth=bw).write(dst)
    print(f"wrote {len(pairs)} prediction file(s)")


def cmd_eval(args, sections):
    from . import pipeline

    if args.sweep:
        if args.model is None:
            raise UsageError("--sweep needs --model")
        mp = _load_model(args)
        _, gen, aug = _gen_aug(args, sections, dim=mp.config.dim)
        aug = dataclasses.replace(aug, n_points=mp.config.n_points)
        rows = pipeline.sweep(mp, gen, aug, args.count, args.seed, args.centers)
        pipeline.write_report(args.out, rows, pipeline.SWEEP_HEADER)
    else:
        if args.pred is None or args.gt is None:
            raise UsageError("eval needs --pred and --gt (or --sweep)")
        rows = pipeline.evaluate_dirs(args.pred, args.gt, args.centers)
        pipeline.write_report(args.out, rows)
        m = rows[-2]
        print(f"SBD {m[1]:.2f} DiC {m[2]:.3f} DS_C {m[6]:.2f} (pooled {rows[-1][6]:.2f})")


def cmd_plot(args, sections):
    from .plot import render_svg

    t = io.read_points(args.input)
    if t.instance is None:
        raise DataError(f"{args.input}: needs instance and class columns")
    if t.dim == 3 and args.project is None:
        raise UsageError("3-D input needs --project {xy,xz,yz}")
    jp = io.junction_path(args.input)
    groups = io.read_centers(jp) if jp.exists() else {}
    parts = [v for v in groups.values() if len(v)]
    centers = np.concatenate(parts) if parts else None
    args.out.write_text(render_svg(t.coords, t.instance, centers, args.project))


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "infer": cmd_infer,
            "eval": cmd_eval, "plot": cmd_plot}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        sections = _apply_config(args, parser)
        COMMANDS[args.command](args, sections)
    except UsageError as e:
        print(f"branchtopo: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ArithmeticError as e:
        print(f"branchtopo: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError) as e:
        print(f"branchtopo: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TypeError, ValueError) as e:
        # invalid configuration values
        print(f"branchtopo: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"branchtopo: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
