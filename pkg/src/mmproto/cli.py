"""Command-line surface.

Subcommands: gen (synthetic store), split (assign base/val/novel),
train, eval, pride (per-class metric CSV), sweep (fusion ablation grid).
Exit codes: 0 success, 2 configuration/usage error, 3 capacity or data
error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

from .errors import (
    CapacityError,
    ConfigurationError,
    DivergenceError,
    MmprotoError,
    NumericError,
    StoreError,
    UsageError,
)
from .harness import (
    TrainConfig,
    evaluate,
    pride_report,
    sweep,
    train,
    write_loss_curve_csv,
    write_meta,
    write_sweep_csv,
)
from .pipeline import Model, init_model, load_params, save_params
from .store import gen_synthetic, read_store, split_store, write_store

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_DIVERGED = 4


def _csv_ints(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part != ""]


def _csv_floats(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part != ""]


def _csv_names(text: str) -> list[str]:
    return [part for part in text.split(",") if part != ""]


_CONFIG_FLAG_TYPES = {
    "store": str, "train_split": str, "val_split": str, "eval_split": str,
    "n_way": int, "k_shot": int, "m_queries": int,
    "d_k": int, "d_p": int, "se_heads": int, "mpe_heads": int,
    "mpe_mode": str, "lam": float, "tau": float, "loss_mode": str,
    "lr": float, "beta1": float, "beta2": float, "adam_eps": float,
    "ema_decay": float, "train_episodes": int, "val_episodes": int,
    "val_every": int, "test_episodes": int, "seed": int,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (flags override)")
    for name, kind in _CONFIG_FLAG_TYPES.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name,
                            type=kind, default=None)
    parser.add_argument("--omegas", type=_csv_ints, default=None,
                        help="comma-separated tuple sizes, e.g. 2 or 2,3")


def _build_config(args: argparse.Namespace) -> TrainConfig:
    if args.config:
        config = TrainConfig.load(args.config)
    else:
        config = TrainConfig()
    overrides = {}
    for name in list(_CONFIG_FLAG_TYPES) + ["omegas"]:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = tuple(value) if name == "omegas" else value
    if overrides:
        merged = config.to_json_dict()
        merged.update(overrides)
        config = TrainConfig.from_json_dict(merged)
    if not config.store:
        raise ConfigurationError("no store given (use --store or a config file)")
    return config


def _load_model(config: TrainConfig, params_path: str | None) -> Model:
    store = read_store(config.store)
    params = init_model(config.seed, store.manifest.dim, config.model_config())
    if params_path:
        load_params(params, params_path)
    return Model(store, config.model_config(), params)


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_gen(args) -> int:
    store = gen_synthetic(
        seed=args.seed, n_classes=args.classes,
        videos_per_class=args.videos_per_class, frames=args.frames,
        dim=args.dim, class_sep=args.class_sep, text_corr=args.text_corr,
        n_templates=args.templates, dataset_name=args.name)
    write_store(store, args.out)
    print(f"wrote store {args.out}: {args.classes} classes x "
          f"{args.videos_per_class} videos, L={args.frames}, d={args.dim}")
    return EXIT_OK


def _cmd_split(args) -> int:
    store = read_store(args.store)
    if args.counts is not None:
        n_base, n_val, n_novel = args.counts
        names = store.manifest.classes
        if n_base + n_val + n_novel != len(names):
            raise ConfigurationError(
                f"counts {args.counts} do not sum to {len(names)} classes")
        base = names[:n_base]
        val = names[n_base:n_base + n_val]
        novel = names[n_base + n_val:]
    else:
        if args.base is None or args.val is None or args.novel is None:
            raise ConfigurationError(
                "give either --counts or all of --base/--val/--novel")
        base, val, novel = args.base, args.val, args.novel
    split_store(store, base, val, novel)
    write_store(store, args.store)
    print(f"split {args.store}: base={len(base)} val={len(val)} "
          f"novel={len(novel)} classes")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _build_config(args)
    store = read_store(config.store)
    result = train(store, config)
    save_params(result.params, args.out_params)
    write_meta(str(args.out_params) + ".meta.json", config,
               selected=result.selected,
               final_loss=result.loss_curve[-1][1] if result.loss_curve else None)
    if args.out_curve:
        write_loss_curve_csv(result.loss_curve, args.out_curve)
        write_meta(str(args.out_curve) + ".meta.json", config)
    last = result.loss_curve[-1][1] if result.loss_curve else float("nan")
    print(f"trained {len(result.loss_curve)} episodes "
          f"(selected: {result.selected}, last loss {last:.4f}); "
          f"params -> {args.out_params}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    config = _build_config(args)
    model = _load_model(config, args.params)
    report = evaluate(model, config, with_pride=args.with_pride)
    if args.report:
        report.save(args.report)
    print(f"accuracy {report.accuracy:.4f} +- {report.ci95:.4f} "
          f"over {report.n_episodes} episodes"
          + (f"; mean PRIDE {report.mean_pride:.4f}"
             if report.mean_pride is not None else ""))
    return EXIT_OK


def _cmd_pride(args) -> int:
    config = _build_config(args)
    model = _load_model(config, args.params)
    result = pride_report(model, config)
    result.save_csv(args.csv)
    write_meta(str(args.csv) + ".meta.json", config,
               overall_mean=result.overall_mean)
    print(f"mean PRIDE {result.overall_mean:.4f} over "
          f"{len(result.per_video)} videos; per-class CSV -> {args.csv}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = _build_config(args)
    store = read_store(config.store)
    rows = sweep(store, config, modes=args.modes, lams=args.lams,
                 heads_list=args.heads)
    write_sweep_csv(rows, args.csv)
    write_meta(str(args.csv) + ".meta.json", config)
    for row in rows:
        print(f"mode={row.mode} lam={row.lam} heads={row.heads} -> "
              f"accuracy {row.accuracy:.4f} +- {row.ci95:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmproto",
        description="Episodic few-shot metric learning over cached "
                    "visual/text embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic embedding store")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--classes", type=int, default=10)
    gen.add_argument("--videos-per-class", type=int, default=20)
    gen.add_argument("--frames", type=int, default=8)
    gen.add_argument("--dim", type=int, default=64)
    gen.add_argument("--class-sep", type=float, default=4.0)
    gen.add_argument("--text-corr", type=float, default=0.9)
    gen.add_argument("--templates", type=int, default=4)
    gen.add_argument("--name", default="synthetic")
    gen.set_defaults(handler=_cmd_gen)

    split = sub.add_parser("split", help="assign classes to base/val/novel")
    split.add_argument("--store", required=True)
    split.add_argument("--counts", type=_csv_ints, default=None,
                       help="base,val,novel counts, classes in manifest order")
    split.add_argument("--base", type=_csv_names, default=None)
    split.add_argument("--val", type=_csv_names, default=None)
    split.add_argument("--novel", type=_csv_names, default=None)
    split.set_defaults(handler=_cmd_split)

    tr = sub.add_parser("train", help="train on the base split")
    _add_config_flags(tr)
    tr.add_argument("--out-params", default="params.bin")
    tr.add_argument("--out-curve", default=None)
    tr.set_defaults(handler=_cmd_train)

    ev = sub.add_parser("eval", help="episodic accuracy on a split")
    _add_config_flags(ev)
    ev.add_argument("--params", default=None)
    ev.add_argument("--report", default=None)
    ev.add_argument("--with-pride", action="store_true")
    ev.set_defaults(handler=_cmd_eval)

    pr = sub.add_parser("pride", help="per-class prototype-quality CSV")
    _add_config_flags(pr)
    pr.add_argument("--params", default=None)
    pr.add_argument("--csv", required=True)
    pr.set_defaults(handler=_cmd_pride)

    sw = sub.add_parser("sweep", help="fusion ablation grid")
    _add_config_flags(sw)
    sw.add_argument("--modes", type=_csv_names,
                    default=["weighted_average"])
    sw.add_argument("--lams", type=_csv_floats, default=[0.5])
    sw.add_argument("--heads", type=_csv_ints, default=[8])
    sw.add_argument("--csv", required=True)
    sw.set_defaults(handler=_cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigurationError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CapacityError, StoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (DivergenceError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except MmprotoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
