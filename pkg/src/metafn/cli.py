"""Command-line entry point.

    metafn <command> --config <path> [--set key=value]...

Commands: gen-synth, pretrain, calibrate, refine, eval, export-coeffs,
report.  Exit codes: 0 success, 1 runtime/training failure, 2 usage or
configuration error.  Logs go to stderr; artifacts go to the output
directory, each accompanied by a provenance record (command, config
hash, seed).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import data as D
from . import evaluate as E
from . import training as TR
from .checkpoint import Checkpoint, assembly_from_checkpoint, load_shared, save_checkpoint
from .config import RunConfig
from .errors import ConfigError, MetafnError, UsageError
from .model import ModelAssembly

COMMANDS = ("gen-synth", "pretrain", "calibrate", "refine", "eval",
            "export-coeffs", "report")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _provenance(cfg: RunConfig, command: str, artifact: Path) -> None:
    record = {"command": command, "config_hash": cfg.hash(), "seed": cfg.seed,
              "artifact": artifact.name}
    path = artifact.with_name(artifact.name + ".provenance.json")
    path.write_text(json.dumps(record, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _suite(cfg: RunConfig, out: Path) -> D.SynthSuite:
    suite_dir = cfg.raw["data"]["suite_dir"]
    if suite_dir is None and (out / "suite" / "suite.json").exists():
        suite_dir = out / "suite"
    if suite_dir is not None:
        return D.load_suite(suite_dir)
    return D.generate_synth_suite(cfg.synth_spec())


def _task_bundles(cfg: RunConfig, suite: D.SynthSuite) -> list[D.DatasetBundle]:
    bundles = list(suite.heldout)
    for entry in cfg.raw["data"]["tasks"]:
        bundles.append(D.load_csv(entry["csv"], entry["manifest"]))
    return bundles


def _task_dir(out: Path, task: str, setting: str) -> Path:
    d = out / "tasks" / task / setting
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_gen_synth(cfg: RunConfig, out: Path) -> None:
    suite = D.generate_synth_suite(cfg.synth_spec())
    suite_dir = out / "suite"
    D.export_suite(suite, suite_dir)
    _provenance(cfg, "gen-synth", suite_dir / "suite.json")
    _log(f"wrote {len(suite.pretrain)} pretraining and {len(suite.heldout)} "
         f"held-out datasets under {suite_dir}")


def cmd_pretrain(cfg: RunConfig, out: Path) -> None:
    suite = _suite(cfg, out)
    bundles = [D.prepare(b, split_seed=cfg.seed) for b in suite.pretrain]
    assembly = ModelAssembly(cfg.model_config(), seed=cfg.seed)
    for b in bundles:
        assembly.attach_dataset(b.schema.signature())
    spec = cfg.phase_spec("pretrain")
    log = TR.pretrain(assembly, bundles, spec)
    ckpt_path = out / "pretrained.ckpt"
    save_checkpoint(assembly, ckpt_path, phase="pretrain")
    log.to_jsonl(out / "pretrain.log.jsonl")
    _provenance(cfg, "pretrain", ckpt_path)
    _provenance(cfg, "pretrain", out / "pretrain.log.jsonl")
    _log(f"pretrained for {len(log.entries)} logged epochs -> {ckpt_path}")
    if log.diverged:
        raise MetafnError("pretraining diverged; kept the last good checkpoint")


def _prepared_task(cfg: RunConfig, bundle: D.DatasetBundle, setting: str) -> D.DatasetBundle:
    return D.prepare(bundle.copy_shallow(), split_seed=cfg.seed, setting=setting)


def cmd_calibrate(cfg: RunConfig, out: Path) -> None:
    shared = Checkpoint.load(out / "pretrained.ckpt")
    suite = _suite(cfg, out)
    for raw in _task_bundles(cfg, suite):
        for setting in cfg.settings:
            bundle = _prepared_task(cfg, raw, setting)
            assembly = ModelAssembly(cfg.model_config(), seed=cfg.seed)
            load_shared(assembly, shared)
            log = TR.calibrate(assembly, bundle, cfg.phase_spec("calibrate", setting))
            tdir = _task_dir(out, bundle.schema.name, setting)
            path = tdir / "calibrated.ckpt"
            save_checkpoint(assembly, path, phase="calibrate")
            log.to_jsonl(tdir / "calibrate.log.jsonl")
            _provenance(cfg, "calibrate", path)
            _provenance(cfg, "calibrate", tdir / "calibrate.log.jsonl")
            _log(f"calibrated {bundle.schema.name} [{setting}] "
                 f"best epoch {log.best_epoch} metric {log.best_metric:.4f}")


def cmd_refine(cfg: RunConfig, out: Path) -> None:
    suite = _suite(cfg, out)
    for raw in _task_bundles(cfg, suite):
        for setting in cfg.settings:
            tdir = _task_dir(out, raw.schema.name, setting)
            src = tdir / "calibrated.ckpt"
            if not src.exists():
                raise UsageError(f"run calibrate first: {src} is missing")
            bundle = _prepared_task(cfg, raw, setting)
            assembly = assembly_from_checkpoint(Checkpoint.load(src), seed=cfg.seed)
            assembly.dataset_phase[bundle.schema.name] = "calibrate"
            log = TR.refine(assembly, bundle, cfg.phase_spec("refine", setting))
            path = tdir / "refined.ckpt"
            save_checkpoint(assembly, path, phase="refine")
            log.to_jsonl(tdir / "refine.log.jsonl")
            _provenance(cfg, "refine", path)
            _provenance(cfg, "refine", tdir / "refine.log.jsonl")
            _log(f"refined {bundle.schema.name} [{setting}] "
                 f"best epoch {log.best_epoch} metric {log.best_metric:.4f}")


def cmd_eval(cfg: RunConfig, out: Path) -> None:
    suite = _suite(cfg, out)
    methods = ["calibrated", "refined"]
    table = E.ScoreTable(methods)
    for raw in _task_bundles(cfg, suite):
        for setting in cfg.settings:
            tdir = _task_dir(out, raw.schema.name, setting)
            bundle = _prepared_task(cfg, raw, setting)
            scores = {}
            metric = None
            for method in methods:
                path = tdir / f"{method}.ckpt"
                if not path.exists():
                    raise UsageError(f"missing checkpoint {path}; run {method[:-1]} first")
                assembly = assembly_from_checkpoint(Checkpoint.load(path), seed=cfg.seed)
                s = E.score(assembly, bundle, "test")
                scores[method] = s.value
                metric = s
            table.add_row(f"{bundle.schema.name}|{setting}", metric.metric,
                          metric.higher_better, scores)
    path = out / "scores.json"
    path.write_text(json.dumps(table.to_dict(), sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")
    _provenance(cfg, "eval", path)
    _log(f"scored {len(table.tasks)} task/setting pairs -> {path}")


def cmd_export_coeffs(cfg: RunConfig, out: Path) -> None:
    ckpt_path = out / "pretrained.ckpt"
    if not ckpt_path.exists():
        raise UsageError(f"missing checkpoint {ckpt_path}; run pretrain first")
    assembly = assembly_from_checkpoint(Checkpoint.load(ckpt_path), seed=cfg.seed)
    path = out / "coefficients.json"
    E.export_coefficients(assembly, sorted(assembly.datasets), path,
                          phase="pretrained")
    _provenance(cfg, "export-coeffs", path)
    _log(f"exported coefficients for {len(assembly.datasets)} datasets -> {path}")


def cmd_report(cfg: RunConfig, out: Path) -> None:
    scores_path = out / "scores.json"
    if not scores_path.exists():
        raise UsageError(f"missing {scores_path}; run eval first")
    table = E.ScoreTable.from_dict(json.loads(scores_path.read_text()))
    report_prefix = out / "report"
    E.build_report(table, report_prefix)
    _provenance(cfg, "report", report_prefix.with_suffix(".json"))
    _log(f"wrote {report_prefix.with_suffix('.json')} and .txt")


HANDLERS = {
    "gen-synth": cmd_gen_synth,
    "pretrain": cmd_pretrain,
    "calibrate": cmd_calibrate,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "export-coeffs": cmd_export_coeffs,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metafn",
        description="cross-table pretraining for tabular prediction")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None,
                        help="JSON run configuration (defaults are used if omitted)")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="dotted-path config override")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.overrides)
    except (ConfigError, UsageError) as exc:
        _log(f"error: {exc}")
        return 2
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out)
    try:
        HANDLERS[args.command](cfg, out)
    except (ConfigError, UsageError) as exc:
        _log(f"error: {exc}")
        return 2
    except MetafnError as exc:
        _log(f"error: {exc}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
