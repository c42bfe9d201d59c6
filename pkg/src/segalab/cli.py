"""Command-line entry point: ``segalab <command> [--config PATH] [--seed N] [--out DIR]``.

Artifacts land under ``--out``::

    corpus/        images/*.ppm + manifest.json
    models/        <name>.json calibrated scorers + calibration.json
    attack/<m>/    per-image SEGT/PPM/JSON + summary.json
    eval/<m>/      report.json + report.csv
    verify/        verify.json
    ablate/        <axis>.csv
    report/        methods.csv, ablation CSVs and PNG figures

Every file written is a function of (config, seed, inputs).  Progress goes
to stderr through ``logging`` and is never persisted.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataset, evaluation, experiment, models, verify
from .attack import METHODS, AttackResult
from .perceptual import perceptual_report

log = logging.getLogger("segalab")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_VERIFY = 4
EXIT_IO = 5


class MissingInputError(RuntimeError):
    pass


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")


def load_config(args) -> experiment.ExperimentConfig:
    cfg = experiment.ExperimentConfig.load(args.config) if args.config else experiment.ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "method", None):
        cfg.method = args.method
    if getattr(args, "direction", None):
        cfg.attack = replace(cfg.attack, direction=args.direction)
    return cfg.validate()


# ---------------------------------------------------------------- helpers


def _corpus(cfg, out: Path):
    if cfg.corpus_path:
        root = Path(cfg.corpus_path)
    else:
        root = out / "corpus"
    if not (root / "manifest.json").exists():
        raise MissingInputError(f"no corpus at {root}; run `segalab dataset` first")
    return dataset.load_corpus(root)


def _zoo(cfg, out: Path) -> dict:
    zoo = {}
    for spec in cfg.zoo:
        p = out / "models" / f"{spec.name}.json"
        if not p.exists():
            raise MissingInputError(f"missing calibrated model {p}; run `segalab calibrate` first")
        zoo[spec.name] = models.load_scorer(p)
    return zoo


# --------------------------------------------------------------- commands


def cmd_dataset(cfg, out: Path) -> int:
    spec, train, test = experiment.build_corpus(cfg)
    path = dataset.save_corpus(out / "corpus", spec, train, test)
    log.info("corpus: %d train / %d test -> %s", len(train), len(test), path)
    return EXIT_OK


def cmd_calibrate(cfg, out: Path) -> int:
    train, test = _corpus(cfg, out)
    zoo = experiment.calibrate_zoo(cfg, train)
    xt, yt = dataset.stack(test)
    summary = {}
    for name, model in zoo.items():
        models.save_scorer(model, out / "models" / f"{name}.json")
        summary[name] = {"heldout_srocc": evaluation.srocc(list(zip(model.scores(xt), yt)))}
        log.info("%s: held-out SROCC %.3f", name, summary[name]["heldout_srocc"])
    _write_json(out / "models" / "calibration.json", summary)
    return EXIT_OK


def cmd_attack(cfg, out: Path) -> int:
    _, test = _corpus(cfg, out)
    zoo = _zoo(cfg, out)
    items = experiment.test_subset(cfg, test)
    run = experiment.transfer_run(
        zoo, cfg.target, cfg.source_names(), items, cfg.method, cfg.attack, cfg.seed, cfg.beta
    )
    adir = out / "attack" / cfg.method
    per_image = []
    for it, res in zip(items, run.results):
        res.save(adir, it.id)
        per_image.append({"id": it.id, **res.metadata()})
    passes = [r.forward_passes for r in run.results]
    summary = {
        "method": cfg.method,
        "target": cfg.target,
        "sources": cfg.source_names(),
        "n_images": len(items),
        "forward_passes_per_image": passes[0] if len(set(passes)) == 1 else passes,
        "images": per_image,
        "config": cfg.to_dict(),
    }
    _write_json(adir / "summary.json", summary)
    log.info("%s: %d images, %s forward passes each", cfg.method, len(items), passes[0])
    return EXIT_OK


def cmd_eval(cfg, out: Path) -> int:
    _, test = _corpus(cfg, out)
    zoo = _zoo(cfg, out)
    adir = out / "attack" / cfg.method
    if not (adir / "summary.json").exists():
        raise MissingInputError(f"no attack artifacts in {adir}; run `segalab attack` first")
    summary = json.loads((adir / "summary.json").read_text())
    by_id = {it.id: it for it in test}
    ids = [e["id"] for e in summary["images"]]
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise MissingInputError(f"attack artifacts refer to unknown images {missing[:3]}")
    clean = np.stack([by_id[i].image for i in ids])
    adv = np.stack([AttackResult.load(adir, i).adversarial for i in ids])
    target = zoo[summary["target"]]
    percept = [perceptual_report(x, a) for x, a in zip(clean, adv)]
    meta = {
        "target": summary["target"],
        "sources": summary["sources"],
        "method": summary["method"],
        "config": summary["config"],
        "seed": cfg.seed,
        "forward_passes": summary["forward_passes_per_image"],
    }
    report = evaluation.build_report(target.scores(clean), target.scores(adv), percept, meta, cfg.beta, ids)
    edir = out / "eval" / cfg.method
    _write_text(edir / "report.json", report.to_json())
    _write_text(edir / "report.csv", evaluation.reports_to_csv([([cfg.method], report)], ["method"]))
    fmt = lambda v: f"{v:.3f}" if isinstance(v, float) else str(v)  # noqa: E731
    print(f"{cfg.method}: " + " ".join(f"{k}={fmt(v)}" for k, v in zip(evaluation.CSV_COLUMNS, report.csv_row())))
    return EXIT_OK


def cmd_verify(cfg, out: Path, inject_fault: bool = False) -> int:
    try:
        zoo = _zoo(cfg, out)
        _, test = _corpus(cfg, out)
        x = test[0].image
    except MissingInputError:
        # verification does not need artifacts; rebuild in memory
        train, test = experiment.load_or_build_corpus(cfg)
        zoo = experiment.calibrate_zoo(cfg, train)
        x = test[0].image
    cfgs = replace(cfg.attack.smoothing, seed=cfg.seed)
    res = verify.run_verification(zoo, cfg.target, cfg.source_names(), x, cfgs, cfg.seed, fault=inject_fault)
    res["fault_injected"] = inject_fault
    _write_json(out / "verify" / "verify.json", res)
    for g in res["gradients"]:
        print(f"gradient {g['model']:<8} {g['mode']:<6} rel={g['max_rel_error']:.2e} "
              f"{'ok' if g['passed'] else 'FAIL'}")
    for r in res["expected_norm"]:
        print(f"E||u|| d={r['d']:<5} closed={r['closed_form']:.4f} mc={r['monte_carlo']:.4f} "
              f"{'ok' if r['passed'] else 'FAIL'}")
    t1 = res["theorem1"]
    print(f"smoothing gap ratios {[round(q, 3) for q in t1['gap_ratios']]} "
          f"{'ok' if t1['sigma2_ok'] and t1['ratio_ok'] else 'FAIL'}")
    for k, v in res["theorem2"].items():
        print(f"gradient bound [{k}] observed={v['observed']:.3f} bound={v['bound']:.3f} "
              f"{'ok' if v['passed'] else 'FAIL'}")
    print("verify:", "PASS" if res["passed"] else "FAIL")
    return EXIT_OK if res["passed"] else EXIT_VERIFY


def _parse_grid(axis, text):
    if text is None:
        return None
    vals = [v.strip() for v in text.split(",") if v.strip()]
    if axis in ("masks", "components"):
        return [tuple(bool(int(c)) for c in v) for v in vals]
    if axis == "sigma":
        return [float(v) / 255.0 for v in vals]
    if axis in ("m", "K"):
        return [int(v) for v in vals]
    return [float(v) for v in vals]


def cmd_ablate(cfg, out: Path, axis: str, grid=None) -> int:
    train, test = _corpus(cfg, out)
    zoo = _zoo(cfg, out)
    items = experiment.test_subset(cfg, test)
    rows = experiment.ablation(cfg, zoo, items, axis, grid)
    text = experiment.ablation_csv(axis, rows)
    _write_text(out / "ablate" / f"{axis}.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_report(cfg, out: Path) -> int:
    from . import plotting

    _, test = _corpus(cfg, out)
    zoo = _zoo(cfg, out)
    items = experiment.test_subset(cfg, test)
    rdir = out / "report"
    rows = []
    first = {}
    for method in METHODS:
        run = experiment.transfer_run(
            zoo, cfg.target, cfg.source_names(), items, method, cfg.attack, cfg.seed, cfg.beta
        )
        rows.append(([method, run.report.meta["forward_passes"]], run.report))
        first[method] = run.results[0]
    _write_text(rdir / "methods.csv", evaluation.reports_to_csv(rows, ["method", "forward_passes"]))
    plotting.bar_figure(
        rdir / "methods_mae.png", [r[0][0] for r in rows], [r[1].metrics["mae"] for r in rows],
        "MAE on held-out target", f"target {cfg.target}",
    )
    for axis in ("components", "sigma", "masks"):
        arows = experiment.ablation(cfg, zoo, items, axis)
        _write_text(rdir / f"ablation_{axis}.csv", experiment.ablation_csv(axis, arows))
        metrics = {k: [r.metrics[k] for _, r in arows] for k in ("mae", "srocc")}
        if axis == "sigma":
            plotting.sweep_figure(rdir / "sigma_sweep.png", [l[0] for l, _ in arows], metrics,
                                  "sigma (x 1/255)", "smoothing scale")
        elif axis == "masks":
            plotting.bar_figure(rdir / "mask_l1.png", [f"F{l[0]}J{l[1]}" for l, _ in arows],
                                [r.perceptual["l1"] for _, r in arows], "mean l1 (0-255)", "masking")
        else:
            plotting.bar_figure(rdir / "components_mae.png", [f"G{l[0]}E{l[1]}" for l, _ in arows],
                                metrics["mae"], "MAE", "smoothing x ensembling")
    sega = first["sega"]
    plotting.example_figure(rdir / "example.png", items[0].image, sega.adversarial, sega.delta)
    log.info("report written to %s", rdir)
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment JSON (schema_version 1)")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    common.add_argument("--out", metavar="DIR", default="runs/default", help="artifact directory")
    common.add_argument("-v", "--verbose", action="store_true")

    method = argparse.ArgumentParser(add_help=False)
    method.add_argument("--method", choices=METHODS, default=None)
    method.add_argument("--direction", choices=("auto", "increase", "decrease"), default=None)

    p = argparse.ArgumentParser(prog="segalab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("dataset", parents=[common], help="generate and split the synthetic corpus")
    sub.add_parser("calibrate", parents=[common], help="fit zoo heads on the train split")
    sub.add_parser("attack", parents=[common, method], help="attack the test split")
    sub.add_parser("eval", parents=[common, method], help="score attack artifacts on the target")
    v = sub.add_parser("verify", parents=[common], help="gradient, expectation and bound checks")
    v.add_argument("--inject-fault", action="store_true", help="corrupt analytic gradients (self-test)")
    a = sub.add_parser("ablate", parents=[common, method], help="sweep one SEGA component")
    a.add_argument("--axis", choices=experiment.ABLATION_AXES, required=True)
    a.add_argument("--grid", help="comma list; sigma in 1/255 units, masks/components as 2-digit flags")
    sub.add_parser("report", parents=[common, method], help="method table, ablations and figures")
    sub.add_parser("config", parents=[common], help="print the effective config JSON")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    out = Path(args.out)
    try:
        cfg = load_config(args)
        if args.command == "config":
            sys.stdout.write(cfg.dump())
            return EXIT_OK
        if args.command == "dataset":
            return cmd_dataset(cfg, out)
        if args.command == "calibrate":
            return cmd_calibrate(cfg, out)
        if args.command == "attack":
            return cmd_attack(cfg, out)
        if args.command == "eval":
            return cmd_eval(cfg, out)
        if args.command == "verify":
            return cmd_verify(cfg, out, args.inject_fault)
        if args.command == "ablate":
            return cmd_ablate(cfg, out, args.axis, _parse_grid(args.axis, args.grid))
        if args.command == "report":
            return cmd_report(cfg, out)
    except experiment.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInputError, FileNotFoundError) as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
