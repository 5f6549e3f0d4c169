"""Command-line driver: generate -> train -> rollout -> analyze -> compare, plus render and bench.

Exit codes: 0 ok, 1 usage, 2 validation (bad config, files, formats), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import torch

from . import io as lio
from .config import PipelineConfig
from .estimator import UNetSurrogate
from .fields import ConditioningInput, ParameterError, ValidationError
from .model import ConfigurationError, DatasetError, TrainingError
from .pipeline import bench, build_dataset, generate, make_estimator, solver_config_for
from .qoi import AlignmentError, QOI_NAMES, fmt9, qoi_errors, qoi_series, read_qoi_csv, write_qoi_csv
from .render import render_field
from .rollout import (CapacityError, ExtensionPolicy, RolloutConfig, RolloutError, WarmStartError, rollout,
                      warm_start)
from .solver import InstabilityError

log = logging.getLogger("lmdsurrogate")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3
VALIDATION_ERRORS = (ParameterError, ValidationError, lio.FormatError, ConfigurationError, DatasetError,
                     AlignmentError, FileNotFoundError, NotADirectoryError, IsADirectoryError, KeyError)
RUNTIME_ERRORS = (InstabilityError, TrainingError, RolloutError, CapacityError, WarmStartError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return PipelineConfig.load(path)


def cmd_generate(args) -> int:
    cfg = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (ca, snaps) in enumerate(generate(cfg)):
        sub = f"ca_{ca:.2f}"
        lio.write_trajectory(snaps, out / sub, meta={"cA_ref": ca, "seed": cfg.data.seed + i})
        entries.append({"cA_ref": ca, "dir": sub, "seed": cfg.data.seed + i})
    (out / lio.MANIFEST_NAME).write_text(json.dumps({"trajectories": entries}, indent=2, sort_keys=True) + "\n")
    cfg.save(out / "config.json")
    print(f"wrote {len(entries)} trajectories to {out}")
    return EXIT_OK


def _read_dataset_dir(path):
    d = Path(path)
    mf = d / lio.MANIFEST_NAME
    if not mf.exists():
        raise FileNotFoundError(f"{mf} not found")
    entries = json.loads(mf.read_text())["trajectories"]
    return [(e["cA_ref"], lio.read_trajectory(d / e["dir"])) for e in entries]


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    trajectories = _read_dataset_dir(args.data)
    dataset = build_dataset(cfg, trajectories)
    est = make_estimator(cfg)
    print(f"training on {len(dataset)} samples")
    est.fit_dataset(dataset, progress=lambda e, l: print(f"epoch {e:4d} loss {l:.6f}", flush=True))
    lio.write_checkpoint(est.get_model_params(), est.config_, args.out)
    loss_path = Path(str(args.out) + ".loss.csv")
    with open(loss_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(est.loss_history_):
            w.writerow([i, fmt9(v)])
    print(f"wrote {args.out} and {loss_path}")
    return EXIT_OK


def load_surrogate(path) -> UNetSurrogate:
    params, config, _ = lio.read_checkpoint(path)
    return UNetSurrogate.from_params(config, params)


def cmd_rollout(args) -> int:
    cfg = _load_config(args.config)
    model = load_surrogate(args.ckpt)
    state = lio.read_snapshot(args.init)
    if state.cA_ref is None:
        state = replace(state, cA_ref=args.ca)
    policy = ExtensionPolicy(args.margin if args.margin is not None else cfg.rollout.margin_rows,
                             args.grow if args.grow is not None else cfg.rollout.grow_rows,
                             args.max_height if args.max_height is not None else cfg.rollout.max_height)
    if args.active_margin is not None:
        active = None if args.active_margin == 0 else args.active_margin
    else:
        active = cfg.rollout.active_margin
    rc = RolloutConfig(args.steps, ConditioningInput(args.dtau, args.ca), policy, args.warm or 0.0, active)
    if args.warm:
        state = warm_start(state, cfg.physics_params(), solver_config_for(cfg, args.ca), rc)
    traj = rollout(model, state, rc)
    lio.write_trajectory(traj, args.out, meta={"cA_ref": args.ca, "dtau": args.dtau, "source": "surrogate"})
    print(f"wrote {len(traj)} states to {args.out} (final height {traj[-1].height})")
    return EXIT_OK


def cmd_analyze(args) -> int:
    traj = lio.read_trajectory(args.traj)
    write_qoi_csv(qoi_series(traj, args.r0), args.out)
    print(f"wrote {len(traj)} QoI rows to {args.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    errs = qoi_errors(read_qoi_csv(args.pred), read_qoi_csv(args.ref))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["qoi", "relative_l2"])
        for name in QOI_NAMES:
            w.writerow([name, fmt9(errs[name])])
    for name in QOI_NAMES:
        print(f"{name:22s} {errs[name]:.4f}")
    return EXIT_OK


def cmd_render(args) -> int:
    render_field(lio.read_snapshot(args.snapshot), args.out, scale=args.scale)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    model = load_surrogate(args.ckpt)
    res = bench(cfg, model, n_steps=args.steps, cA_ref=args.ca)
    print(f"time span        {res.span:.3f}")
    print(f"surrogate        {res.surrogate_seconds:.4f} s ({res.surrogate_steps} steps)")
    print(f"solver           {res.solver_seconds:.4f} s ({res.solver_steps} steps)")
    print(f"speedup          {res.speedup:.1f}x")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lmdsurrogate", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap torch intra-op threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate", help="run the phase-field solver for every configured cA_ref")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the surrogate on generated trajectories")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("rollout", help="autoregressive surrogate rollout")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--init", required=True)
    r.add_argument("--steps", type=int, required=True)
    r.add_argument("--dtau", type=float, required=True)
    r.add_argument("--ca", type=float, required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--warm", type=float, default=None, help="solver warm-start time before the rollout")
    r.add_argument("--config")
    r.add_argument("--margin", type=int)
    r.add_argument("--grow", type=int)
    r.add_argument("--max-height", type=int)
    r.add_argument("--active-margin", type=int,
                   help="solid rows below the front passed to the surrogate (0: whole domain)")
    r.set_defaults(func=cmd_rollout)

    a = sub.add_parser("analyze", help="QoI series of a trajectory directory")
    a.add_argument("--traj", required=True)
    a.add_argument("--r0", type=int, required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("compare", help="per-QoI relative L2 between two QoI CSVs")
    c.add_argument("--pred", required=True)
    c.add_argument("--ref", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("render", help="PNG of phi, cA, cB with the interface outlined")
    v.add_argument("--snapshot", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--scale", type=int, default=4)
    v.set_defaults(func=cmd_render)

    b = sub.add_parser("bench", help="surrogate vs solver wall clock over the same time span")
    b.add_argument("--ckpt", required=True)
    b.add_argument("--config")
    b.add_argument("--steps", type=int, default=10)
    b.add_argument("--ca", type=float, default=0.2)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required (generate, train, rollout, analyze, compare, render, bench)")
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except RUNTIME_ERRORS as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
