"""Command-line front end.

Subcommands: gen-well, train, predict, eval, inspect. Every run echoes its
fully resolved configuration as JSON on stderr, so any result can be
reproduced from the banner alone. Exit codes: 0 success, 1 usage error,
2 runtime error. KOOP_THREADS caps math-library threads (default 1, which
also makes results reproducible).
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _pin_threads() -> None:
    threads = os.environ.get("KOOP_THREADS", "1")
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, threads)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _banner(command: str, settings: dict) -> None:
    print(json.dumps({"command": command, **settings}, sort_keys=True), file=sys.stderr)


def build_parser() -> _Parser:
    parser = _Parser(prog="koop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-well", help="generate a double-well dataset")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--range", nargs=2, type=float, default=[-5.0, 5.0],
                   metavar=("LO", "HI"))

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--model", required=True,
                   choices=["traditional", "convex", "extended"])
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True, help="JSON training config")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--csv", default=None, help="loss series CSV path")

    p = sub.add_parser("predict", help="roll out a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--start-index", type=int, required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--svg", default=None)

    p = sub.add_parser("eval", help="divergence horizons on held-out windows")
    p.add_argument("--ckpt", action="append", required=True,
                   help="checkpoint path (repeatable)")
    p.add_argument("--data", required=True)
    p.add_argument("--windows", type=int, default=20)
    p.add_argument("--horizon", type=int, default=120)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=None,
                   help="window-sampling seed (default: fixed)")
    p.add_argument("--out", default=None, help="report CSV path (default: stdout)")

    p = sub.add_parser("inspect", help="print a checkpoint's config as JSON")
    p.add_argument("--ckpt", required=True)
    return parser


def _run_gen_well(args) -> int:
    from . import simwell
    _banner("gen-well", {"steps": args.steps, "seed": args.seed, "out": args.out,
                         "range": list(args.range)})
    ds = simwell.gen_dataset(args.steps, args.seed, (args.range[0], args.range[1]))
    simwell.write_dataset(args.out, ds)
    print(f"wrote {ds.n} records to {args.out}")
    return 0


def _model_overrides(raw_cfg: dict) -> dict:
    allowed = {"d_lift", "hidden", "t_hist", "phi_layers", "icnn_layers",
               "ae_layers", "linear_bias", "model_seed"}
    overrides = dict(raw_cfg.pop("model", {}))
    unknown = set(overrides) - allowed
    if unknown:
        raise ValueError(f"unknown model config fields: {sorted(unknown)}")
    return overrides


def _run_train(args) -> int:
    from . import models, simwell, trainer
    with open(args.config) as f:
        raw_cfg = json.load(f)
    overrides = _model_overrides(raw_cfg)
    cfg = trainer.TrainConfig.from_dict(raw_cfg)
    _banner("train", {"model": args.model, "data": args.data, "out": args.out,
                      "csv": args.csv, "model_config": overrides,
                      "train_config": cfg.to_dict()})
    ds = simwell.read_dataset(args.data)
    model = models.build_model(args.model, ds.d_obs, ds.d_ctrl,
                               seed=overrides.get("model_seed", cfg.seed),
                               d_lift=overrides.get("d_lift", 64),
                               hidden=overrides.get("hidden", 128),
                               t_hist=overrides.get("t_hist", 2),
                               phi_layers=overrides.get("phi_layers", 10),
                               icnn_layers=overrides.get("icnn_layers", 2),
                               ae_layers=overrides.get("ae_layers", 2),
                               control_bound=cfg.control_bound,
                               linear_bias=overrides.get("linear_bias", False))
    reports = trainer.train(model, ds, cfg, csv_path=args.csv, ckpt_path=args.out)
    last = reports[-1] if reports else None
    summary = "no steps run" if last is None else (
        f"step {last.step + 1}/{cfg.total_steps} total={last.total:.6g} "
        f"val_rms={last.val_rms if last.val_rms is not None else 'n/a'}")
    print(f"trained {args.model}: {summary}; checkpoint at {args.out}")
    return 0


def _window_at(model, ds, anchor: int):
    import numpy as np
    hist = np.arange(anchor - model.t_hist, anchor + 1)
    return ds.obs[hist], ds.controls[hist]


def _run_predict(args) -> int:
    from . import evalkit, models, simwell
    _banner("predict", {"ckpt": args.ckpt, "data": args.data,
                        "start_index": args.start_index, "horizon": args.horizon,
                        "csv": args.csv, "svg": args.svg})
    model = models.load_checkpoint(args.ckpt)
    ds = simwell.read_dataset(args.data)
    s, h = args.start_index, args.horizon
    if s < model.t_hist or s + h > ds.n - 1:
        raise ValueError(f"start-index {s} with horizon {h} does not fit in "
                         f"{ds.n} records (need history {model.t_hist})")
    obs_win, ctrl_win = _window_at(model, ds, s)
    controls = ds.controls[s:s + h]
    truth = ds.obs[s + 1:s + h + 1]
    result = models.rollout(model, models.HistoryWindow(obs_win, ctrl_win),
                            controls, truth)
    evalkit.emit_csv(result, args.csv)
    if args.svg:
        evalkit.emit_svg(result, args.svg)
    horizon = evalkit.divergence_horizon(result)
    print(f"predicted {h} steps from index {s}; divergence horizon {horizon} "
          f"(tau={evalkit.DEFAULT_TAU})")
    return 0


def _run_eval(args) -> int:
    from . import evalkit, models, simwell
    seed = evalkit.DEFAULT_EVAL_SEED if args.seed is None else args.seed
    _banner("eval", {"ckpt": args.ckpt, "data": args.data, "windows": args.windows,
                     "horizon": args.horizon, "tau": args.tau, "seed": seed,
                     "out": args.out})
    ds = simwell.read_dataset(args.data)
    loaded = [models.load_checkpoint(p) for p in args.ckpt]
    report, _ = evalkit.evaluate_horizons(loaded, ds, n_windows=args.windows,
                                          horizon=args.horizon, tau=args.tau,
                                          seed=seed)
    if args.out:
        evalkit.emit_csv(report, args.out)
        print(f"wrote horizon report to {args.out}")
    else:
        lines = ["model,tau,median_horizon,horizons"]
        for kind in sorted(report.horizons):
            joined = ";".join(str(h) for h in report.horizons[kind])
            lines.append(f"{kind},{report.tau:.9g},{report.medians[kind]:.9g},{joined}")
        print("\n".join(lines))
    return 0


def _run_inspect(args) -> int:
    from . import models
    _banner("inspect", {"ckpt": args.ckpt})
    model = models.load_checkpoint(args.ckpt)
    blob = models._config_blob(model)
    blob["parameters"] = {name: list(p.value.shape)
                          for name, p in sorted(model.params.items())}
    print(json.dumps(blob, indent=2, sort_keys=True))
    return 0


_RUNNERS = {"gen-well": _run_gen_well, "train": _run_train, "predict": _run_predict,
            "eval": _run_eval, "inspect": _run_inspect}


def main(argv=None) -> int:
    _pin_threads()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _RUNNERS[args.command](args)
    except (FileNotFoundError, IsADirectoryError) as e:
        print(f"koop {args.command}: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"koop {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
