"""Command-line entry point.

Subcommands: train, verify, prune, retrain, rewind, path-export,
prox-check.  Every run writes a directory containing the resolved config,
the delimited path exports, any monitor trace, checkpoints, and rendered
figures.  Exit codes: 0 success, 1 usage problem, 2 runtime failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3

OUT_ROOT_ENV = "DESSILBI_OUT_ROOT"


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; this tool reserves 2 for
    # runtime failures, so remap
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="dessilbi",
                     description="structural-sparsity training toolkit")
    parser.add_argument("--out", default=None,
                        help=f"output root (default: ${OUT_ROOT_ENV} or ./runs)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", required=True, help="path to an INI experiment config")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override a config value")
        p.add_argument("--no-render", action="store_true",
                       help="skip figure rendering")

    p = sub.add_parser("train", help="run one training experiment")
    add_config_args(p)

    p = sub.add_parser("verify", help="run the built-in correctness suites")

    p = sub.add_parser("prune", help="train dense, report the companion-support mask")
    add_config_args(p)
    p.add_argument("--mask-epoch", type=int, required=True,
                   help="epoch whose companion support becomes the mask")

    p = sub.add_parser("retrain", help="one-shot prune then retrain from the init")
    add_config_args(p)
    p.add_argument("--mask-epoch", type=int, required=True)
    p.add_argument("--budget", type=int, required=True, help="retrain epochs")
    p.add_argument("--keep-split", action="store_true",
                   help="keep the split penalty active while retraining")

    p = sub.add_parser("rewind", help="mask at one epoch, restart weights from another")
    add_config_args(p)
    p.add_argument("--mask-epoch", type=int, required=True)
    p.add_argument("--rewind-epoch", type=int, required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--keep-split", action="store_true")

    p = sub.add_parser("path-export", help="re-emit CSV/figures from a run directory")
    p.add_argument("--run", required=True, help="run directory holding path.json")

    p = sub.add_parser("prox-check", help="compare the closed-form prox to the oracle")
    p.add_argument("--cases", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)

    return parser


def _out_root(args) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(os.environ.get(OUT_ROOT_ENV, "runs"))


def _load_config(args):
    from .config import parse_config

    path = Path(args.config)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(), overrides=args.overrides)


def _final_metrics(result) -> dict:
    rec = result.final
    out = {"epoch": rec.epoch, "train_loss": rec.train_loss, "val_loss": rec.val_loss}
    if rec.train_acc is not None:
        out["train_acc"] = rec.train_acc
        out["val_acc"] = rec.val_acc
    if rec.layer_sparsity:
        out["layer_sparsity"] = {str(k): v for k, v in rec.layer_sparsity.items()}
    return out


def _cmd_train(args) -> int:
    from .harness import train

    config = _load_config(args)
    run_dir = _out_root(args) / config.name
    result = train(config, out_dir=run_dir, render=not args.no_render)
    print(f"run written to {result.run_dir}")
    for key, value in _final_metrics(result).items():
        print(f"  {key}: {value}")
    if result.monitor is not None:
        d, e = result.monitor.violations()
        if d or e:
            print(f"CONVERGENCE CHECK FAILED: {d} descent and {e} residual violations "
                  f"(see {result.run_dir / 'monitor.csv'})")
            return EXIT_VERIFY
        print(f"  convergence certificates: clean over {len(result.monitor.records) - 1} steps")
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .verify import run_verification

    results = run_verification()
    failed = 0
    for r in results:
        tag = "PASS" if r.passed else "FAIL"
        print(f"{tag} {r.name}: {r.detail}")
        failed += 0 if r.passed else 1
    if failed:
        print(f"{failed} of {len(results)} suites failed")
        return EXIT_VERIFY
    print(f"all {len(results)} suites passed")
    return EXIT_OK


def _write_report(run_dir: Path, payload: dict) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "report.json", "w") as fh:
        json.dump(payload, fh, indent=2)


def _cmd_prune(args) -> int:
    from .checkpoint import save_checkpoint
    from .harness import mask_from_state, train
    from .nets import forward
    from .paths import project_model

    config = _load_config(args)
    run_dir = _out_root(args) / f"{config.name}-prune"
    result = train(config, out_dir=run_dir, keep_epochs={args.mask_epoch},
                   render=not args.no_render)
    mask = mask_from_state(result.snapshots[args.mask_epoch])
    projected = project_model(result.state.net, mask)
    ds = result.dataset
    dense_loss, _ = forward(result.state.net, ds.val_x, ds.val_y)
    proj_loss, _ = forward(projected, ds.val_x, ds.val_y)
    payload = {
        "mask_epoch": args.mask_epoch,
        "dense_val_loss": dense_loss,
        "projected_val_loss": proj_loss,
    }
    dense = {li: gm.dense().astype(np.float64) for li, gm in mask.items()}
    save_checkpoint(run_dir / "mask.ckpt",
                    {f"layer{li}/mask": m for li, m in dense.items()},
                    {"mask_epoch": args.mask_epoch})
    payload.update(_mask_summary_from(mask))
    _write_report(run_dir, payload)
    print(f"mask and report written to {run_dir}")
    print(f"  overall density: {payload['mask_density']:.4f}")
    return EXIT_OK


def _mask_summary_from(mask: dict) -> dict:
    total = kept = 0
    per_layer = {}
    per_groups = {}
    for li, gm in mask.items():
        d = gm.dense()
        total += d.size
        kept += int(np.count_nonzero(d))
        per_layer[str(li)] = gm.density()
        per_groups[str(li)] = gm.n_active
    return {
        "mask_density": kept / total,
        "per_layer_density": per_layer,
        "per_layer_active_groups": per_groups,
    }


def _cmd_retrain(args) -> int:
    from .harness import RetrainPlan, one_shot_prune_retrain, train

    config = _load_config(args)
    plan = RetrainPlan(mask_epoch=args.mask_epoch, budget_epochs=args.budget,
                       keep_split=args.keep_split)
    run_dir = _out_root(args) / f"{config.name}-retrain"
    dense = train(config, out_dir=run_dir / "dense", keep_epochs={plan.mask_epoch},
                  render=not args.no_render)
    report = one_shot_prune_retrain(config, plan, dense_result=dense)
    _finish_prune_report(report, run_dir, args)
    return EXIT_OK


def _cmd_rewind(args) -> int:
    from .harness import RetrainPlan, fine_tune_rewind, train

    config = _load_config(args)
    plan = RetrainPlan(mask_epoch=args.mask_epoch, budget_epochs=args.budget,
                       rewind_epoch=args.rewind_epoch, keep_split=args.keep_split)
    run_dir = _out_root(args) / f"{config.name}-rewind{args.rewind_epoch}"
    dense = train(config, out_dir=run_dir / "dense",
                  keep_epochs={plan.mask_epoch, plan.rewind_epoch},
                  render=not args.no_render)
    report = fine_tune_rewind(config, plan, dense_result=dense)
    _finish_prune_report(report, run_dir, args)
    return EXIT_OK


def _finish_prune_report(report, run_dir: Path, args) -> None:
    from .paths import records_to_csv, records_to_json

    sparse_dir = run_dir / "sparse"
    sparse_dir.mkdir(parents=True, exist_ok=True)
    records_to_csv(report.sparse.records, sparse_dir / "path.csv")
    records_to_json(report.sparse.records, sparse_dir / "path.json")
    if not args.no_render:
        from .figures import render_curves

        render_curves(report.sparse.records, sparse_dir / "curves.png")
    payload = {
        "dense": _final_metrics(report.dense),
        "sparse": _final_metrics(report.sparse),
    }
    payload.update(_mask_summary_from(report.mask))
    _write_report(run_dir, payload)
    print(f"report written to {run_dir / 'report.json'}")
    print(f"  mask density: {payload['mask_density']:.4f}")
    dense_acc = payload["dense"].get("val_acc")
    sparse_acc = payload["sparse"].get("val_acc")
    if dense_acc is not None and sparse_acc is not None:
        print(f"  val accuracy: dense {dense_acc:.4f} vs retrained {sparse_acc:.4f}")
    else:
        print(f"  val loss: dense {payload['dense']['val_loss']:.6f} "
              f"vs retrained {payload['sparse']['val_loss']:.6f}")


def _cmd_path_export(args) -> int:
    from .figures import render_curves, render_gamma_paths, render_sparsity
    from .paths import inverse_scale_order, records_from_json, records_to_csv

    run_dir = Path(args.run)
    source = run_dir / "path.json"
    if not source.exists():
        raise FileNotFoundError(f"no path.json in {run_dir}")
    records = records_from_json(str(source))
    records_to_csv(records, run_dir / "path.csv")
    order = inverse_scale_order(records)
    with open(run_dir / "activation_order.json", "w") as fh:
        json.dump({str(li): pairs for li, pairs in order.items()}, fh, indent=2)
    render_curves(records, run_dir / "curves.png")
    if records[0].layer_sparsity:
        render_sparsity(records, run_dir / "sparsity.png")
        for li in sorted(records[0].gamma_norms):
            render_gamma_paths(records, li, run_dir / f"gamma_paths_layer{li}.png")
    print(f"exports refreshed in {run_dir}")
    return EXIT_OK


def _cmd_prox_check(args) -> int:
    from .verify import check_prox_oracle

    result = check_prox_oracle(cases=args.cases, seed=args.seed)
    tag = "PASS" if result.passed else "FAIL"
    print(f"{tag} {result.name}: {result.detail}")
    return EXIT_OK if result.passed else EXIT_VERIFY


_COMMANDS = {
    "train": _cmd_train,
    "verify": _cmd_verify,
    "prune": _cmd_prune,
    "retrain": _cmd_retrain,
    "rewind": _cmd_rewind,
    "path-export": _cmd_path_export,
    "prox-check": _cmd_prox_check,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    from .config import ConfigError

    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # runtime failures: divergence, bad masks, IO
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
