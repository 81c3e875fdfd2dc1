"""Command-line entry point: gen, estimate-params, train, eval/bench, report, selftest."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench
from .dataset import DatasetError, ScenarioSweep, annotate_estimates, generate_dataset, read_dataset, write_dataset
from .model import PRESETS, ModelConfig, build_model, load_model, save_model
from .nn import CheckpointError
from .training import TrainConfig, train

log = logging.getLogger("hyperce")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hyperce", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="simulate a dataset over the scenario sweep")
    g.add_argument("--per-config", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--delay-spread", type=float, default=100e-9, help="seconds")
    g.add_argument("--profiles", default="TDL-A,TDL-B,TDL-C")
    g.add_argument("--dopplers", type=_floats, default=[5.0, 100.0, 300.0])
    g.add_argument("--snrs", type=_floats, default=[float(s) for s in range(0, 21, 2)])
    g.add_argument("--estimate", action="store_true", help="also annotate estimated parameters")

    e = sub.add_parser("estimate-params", help="annotate a dataset with TRS-based parameter estimates")
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", help="defaults to rewriting the input")

    t = sub.add_parser("train", help="train a model preset on a dataset")
    t.add_argument("--config", required=True, help=f"preset ({', '.join(PRESETS)}) or JSON file")
    t.add_argument("--dataset", required=True)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)

    for name in ("bench", "eval"):
        b = sub.add_parser(name, help="evaluate estimators over the dataset cells")
        b.add_argument("--dataset", required=True)
        b.add_argument("--models", nargs="*", default=[], help="NAME=checkpoint entries")
        b.add_argument("--estimators", default=None,
                       help="comma list; defaults to LS_BILINEAR,LMMSE plus the given models")
        b.add_argument("--report", required=True, help="CSV path; an .svg is written next to it")
        b.add_argument("--split", choices=["all", "train", "validation"], default="all")
        b.add_argument("--oracle-params", action="store_true", help="use true instead of estimated parameters")

    r = sub.add_parser("report", help="render a CSV report as SVG")
    r.add_argument("--csv", required=True)
    r.add_argument("--out", required=True)

    sub.add_parser("selftest", help="run gradient checks and oracle suites")
    return p


def _resolve_config(spec: str) -> ModelConfig:
    if spec in PRESETS:
        return PRESETS[spec]
    with open(spec) as f:
        d = json.load(f)
    base = PRESETS[d.pop("preset")].to_dict() if "preset" in d else {}
    base.update(d)
    return ModelConfig.from_dict(base)


def _cmd_gen(a) -> int:
    sweep = ScenarioSweep(tuple(a.profiles.split(",")), tuple(a.dopplers), tuple(a.snrs), a.delay_spread)
    ds = generate_dataset(sweep, a.per_config, None, seed=a.seed)
    if a.estimate:
        annotate_estimates(ds)
    write_dataset(ds, a.out)
    log.info("wrote %d samples to %s", len(ds), a.out)
    return EXIT_OK


def _cmd_estimate(a) -> int:
    ds = annotate_estimates(read_dataset(a.dataset))
    write_dataset(ds, a.out or a.dataset)
    return EXIT_OK


def _cmd_train(a) -> int:
    cfg = _resolve_config(a.config)
    ds = read_dataset(a.dataset)
    tc = TrainConfig(batch_size=a.batch, epochs=a.epochs, lr=a.lr, seed=a.seed)
    log.info("model config %s", json.dumps(cfg.to_dict(), sort_keys=True))
    model, history = train(build_model(cfg, a.seed), ds, tc)
    save_model(a.out, model, step=history["steps"], history=history)
    with open(str(a.out) + ".history.json", "w") as f:
        json.dump(history, f, indent=2)
    return EXIT_OK


def _cmd_bench(a) -> int:
    ds = read_dataset(a.dataset)
    models = {}
    for entry in a.models:
        name, sep, path = entry.partition("=")
        if not sep:
            raise UsageError(f"model entry {entry!r} must look like NAME=checkpoint")
        models[name] = load_model(path)[0]
    ests = a.estimators.split(",") if a.estimators else list(bench.CLASSICAL) + list(models)
    indices = None if a.split == "all" else ds.split(a.split)
    table = bench.run_benchmark(ds, ests, models, indices=indices, oracle_params=a.oracle_params)
    bench.emit_report(table, "CSV", a.report)
    bench.emit_report(table, "SVG", Path(a.report).with_suffix(".svg"))
    return EXIT_OK


def _cmd_report(a) -> int:
    bench.emit_report(bench.read_csv(a.csv), "SVG", a.out)
    return EXIT_OK


def _cmd_selftest(a) -> int:
    from .selftest import run_selftest
    results = run_selftest()
    for k, ok in results.items():
        print(f"{'PASS' if ok else 'FAIL'} {k}")
    return EXIT_OK if all(results.values()) else EXIT_INVALID


_COMMANDS = {"gen": _cmd_gen, "estimate-params": _cmd_estimate, "train": _cmd_train,
             "bench": _cmd_bench, "eval": _cmd_bench, "report": _cmd_report, "selftest": _cmd_selftest}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("resolved config %s", json.dumps(vars(args), sort_keys=True, default=str))
    try:
        return _COMMANDS[args.command](args)
    except (OSError, CheckpointError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (UsageError, DatasetError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
