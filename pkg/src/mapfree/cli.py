"""Command-line interface: ``mapfree <verb> [options]``.

Configuration precedence: built-in defaults < ``--config FILE`` <
``--set key.path=value`` flags.  Outputs go under ``output_dir`` (``--out``
overrides it) and carry the config hash.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .core import ScenarioValidationError
from .dataset import dataset_expert_db, generate_synthetic_dataset, load_dataset, save_dataset
from .evaluator import CostModel, load_model, save_model
from .generative import ToyGenerator
from .io import (candidates_doc, format_breakdown, load_trajectories, metrics_csv, resolve_scenario, write_json)
from .pipeline import evaluate_trajectory, sample_scenario, scene_raster, train_cost, train_gan
from .raster import export_raster
from .samplers.retrieval import MAX_CLUSTERS, ExpertDBError, build_expert_db, load_expert_db, save_expert_db
from .scenarios import SUITE, scenario_suite
from .simulator import SAMPLER_COMBOS, compare_samplers, run_closed_loop


class CliError(Exception):
    pass


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(items: list[str]) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key] = _parse_value(value)
    return out


def _config(args) -> RunConfig:
    overrides = _overrides(args.set)
    if args.out is not None:
        overrides["output_dir"] = args.out
    return load_config(args.config, overrides)


def _out_dir(cfg: RunConfig) -> Path:
    p = Path(cfg.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _require(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _model(path: str | None) -> tuple[CostModel, ToyGenerator | None]:
    p = _require(path, "model file")
    if p is None:
        return CostModel(), None
    try:
        model, gen = load_model(p)
    except (KeyError, ValueError) as exc:
        raise CliError(f"malformed model file {p}: {exc}") from exc
    return model, None if gen is None else ToyGenerator.from_dict(gen)


def _expert_db(path: str | None):
    p = _require(path, "expert database")
    return None if p is None else load_expert_db(p)


# -- verbs ----------------------------------------------------------------------------------

def cmd_simulate(args, cfg: RunConfig) -> None:
    model, gen = _model(args.model)
    db = _expert_db(args.expert_db)
    out = _out_dir(cfg)
    for name in args.scenario or list(SUITE):
        sc = resolve_scenario(name)
        res = run_closed_loop(sc, cfg, model, db, gen)
        res.write_trace(out / f"{sc.name}.trace.csv")
        write_json(out / f"{sc.name}.metrics.json", res.metrics.as_row(), res.config_hash)
        m = res.metrics
        done = "-" if m.completion_time is None else f"{m.completion_time:.1f}s"
        print(f"{sc.name}: collisions={m.collisions} deviations={m.deviations} lost_control={m.lost_control} "
              f"discomfort={m.discomfort} fallbacks={m.fallbacks} completed={done} distance={m.distance:.1f}m "
              f"interventions_per_km={m.interventions_per_km:.3f}")


def cmd_sample(args, cfg: RunConfig) -> None:
    _, gen = _model(args.model)
    db = _expert_db(args.expert_db)
    sc = resolve_scenario(args.scenario)
    cands = sample_scenario(sc, cfg, db, gen)
    doc = candidates_doc(cands, cfg.hash())
    (_out_dir(cfg) / f"{sc.name}.candidates.json").write_text(json.dumps(doc, indent=1))
    prov = ", ".join(f"{k}={v}" for k, v in sorted(cands.provenance.items()))
    print(f"{sc.name}: {len(cands)} candidates ({prov})" + (f"; {cands.warning}" if cands.warning else ""))


def cmd_evaluate(args, cfg: RunConfig) -> None:
    model, _ = _model(args.model)
    sc = resolve_scenario(args.scenario)
    trajs = load_trajectories(_require(args.trajectory, "trajectory file"))
    if not 0 <= args.index < len(trajs):
        raise CliError(f"trajectory index {args.index} out of range (file holds {len(trajs)})")
    text = format_breakdown(evaluate_trajectory(sc, trajs[args.index], cfg, model))
    (_out_dir(cfg) / f"{sc.name}.breakdown.txt").write_text(f"# config_hash={cfg.hash()}\n" + text)
    sys.stdout.write(text)


def cmd_train_cost(args, cfg: RunConfig) -> None:
    if args.frames is not None:
        cfg.dataset.n_frames = args.frames
    out = _out_dir(cfg)
    frames = load_dataset(_require(args.dataset, "dataset file")) if args.dataset else generate_synthetic_dataset(cfg)
    if args.save_dataset:
        save_dataset(out / "dataset.json", frames, cfg.hash())
    init, _ = _model(args.init)
    rep = train_cost(cfg, frames, init)
    save_model(out / "cost_model.json", rep.result.model, config_hash=cfg.hash())
    trace = "".join(f"{i},{v!r}\n" for i, v in enumerate(rep.result.trace))
    (out / "training_trace.csv").write_text(f"# config_hash={cfg.hash()}\nepoch,loss\n" + trace)
    w = " ".join(f"{x:.4g}" for x in rep.result.model.weights)
    print(f"trained on {len(rep.train_frames)} frames: loss {rep.result.trace[0]:.4g} -> {rep.result.trace[-1]:.4g}; "
          f"weights [{w}]; held-out gt cheapest on {rep.held_out_accuracy:.1%} of {len(rep.held_out)}")


def cmd_train_gan(args, cfg: RunConfig) -> None:
    model, _ = _model(args.model)
    if args.freeze_evaluator:
        cfg.training.freeze_evaluator = True
    res = train_gan(model, cfg, args.scene, args.frames)
    out = _out_dir(cfg)
    save_model(out / "gan_model.json", res.model, res.generator, cfg.hash())
    print(f"generator loss {res.generator_trace[0]:.4g} -> {res.generator_trace[-1]:.4g}; "
          f"evaluator loss {res.evaluator_trace[0]:.4g} -> {res.evaluator_trace[-1]:.4g}")


def cmd_build_expert_db(args, cfg: RunConfig) -> None:
    if (args.input is None) == (args.synthetic is None):
        raise CliError("build-expert-db needs exactly one of --input or --synthetic")
    if args.input is not None:
        src = _require(args.input, "trajectory input")
        files = sorted(src.glob("*.json")) if src.is_dir() else [src]
        if not files:
            raise CliError(f"no trajectory files (*.json) in {src}")
        trajs = [t for f in files for t in load_trajectories(f)]
        db = build_expert_db(trajs, max_clusters=args.max_clusters, seed=cfg.seed)
    else:
        frames = generate_synthetic_dataset(replace(cfg, dataset=replace(cfg.dataset, n_frames=args.synthetic)))
        db = dataset_expert_db(frames, max_clusters=args.max_clusters, seed=cfg.seed)
    path = _out_dir(cfg) / "expert.db"
    save_expert_db(db, path, cfg.hash())
    print(f"expert database: {len(db)} trajectories -> {path}")


def cmd_metrics(args, cfg: RunConfig) -> None:
    scenarios = [resolve_scenario(s) for s in args.scenario] if args.scenario else scenario_suite()
    names = args.combos.split(",") if args.combos else list(SAMPLER_COMBOS)
    unknown = [n for n in names if n not in SAMPLER_COMBOS]
    if unknown:
        raise CliError(f"unknown sampler combination(s) {unknown}; choose from {list(SAMPLER_COMBOS)}")
    rows = compare_samplers(scenarios, {n: SAMPLER_COMBOS[n] for n in names}, cfg)
    text = metrics_csv(rows, cfg.hash())
    (_out_dir(cfg) / "metrics.csv").write_text(text)
    sys.stdout.write(text)


def cmd_export_raster(args, cfg: RunConfig) -> None:
    sc = resolve_scenario(args.scenario)
    paths = export_raster(scene_raster(sc, cfg), _out_dir(cfg) / f"raster_{sc.name}", sc.name,
                          f"config_hash={cfg.hash()}")
    print("\n".join(str(p) for p in paths))


# -- parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="default", help="JSON config file or 'default'")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. --set safety.n_reserved=5 (repeatable)")
    common.add_argument("--out", default=None, help="output directory (overrides output_dir)")

    p = argparse.ArgumentParser(prog="mapfree", description="Map-free trajectory planning toolkit")
    sub = p.add_subparsers(dest="verb", required=True, metavar="VERB")

    s = sub.add_parser("simulate", parents=[common], help="closed-loop simulation; trace CSV + metrics")
    s.add_argument("--scenario", action="append", help="built-in name or scenario JSON (repeatable; default all)")
    s.add_argument("--model")
    s.add_argument("--expert-db")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sample", parents=[common], help="candidate set at a scenario's first step")
    s.add_argument("--scenario", required=True)
    s.add_argument("--model", help="model file whose generator feeds the generative sampler")
    s.add_argument("--expert-db")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("evaluate", parents=[common], help="cost breakdown of a trajectory in a scene")
    s.add_argument("--scenario", required=True)
    s.add_argument("--trajectory", required=True, help="trajectory JSON file")
    s.add_argument("--index", type=int, default=0, help="which trajectory of the file")
    s.add_argument("--model")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("train-cost", parents=[common], help="max-margin training on the synthetic dataset")
    s.add_argument("--frames", type=int, help="dataset size (overrides dataset.n_frames)")
    s.add_argument("--dataset", help="load frames from a dataset file instead of generating them")
    s.add_argument("--save-dataset", action="store_true")
    s.add_argument("--init", help="initial cost model file")
    s.set_defaults(func=cmd_train_cost)

    s = sub.add_parser("train-gan", parents=[common], help="generator/evaluator training")
    s.add_argument("--model", help="cost model file used as the evaluator")
    s.add_argument("--scene", choices=("corridor", "dataset"), default="corridor")
    s.add_argument("--frames", type=int, default=8, help="dataset frames for --scene dataset")
    s.add_argument("--freeze-evaluator", action="store_true")
    s.set_defaults(func=cmd_train_gan)

    s = sub.add_parser("build-expert-db", parents=[common], help="binned, clustered expert trajectory database")
    s.add_argument("--input", help="trajectory JSON file or directory of them")
    s.add_argument("--synthetic", type=int, help="use the demonstrations of N synthetic frames")
    s.add_argument("--max-clusters", type=int, default=MAX_CLUSTERS)
    s.set_defaults(func=cmd_build_expert_db)

    s = sub.add_parser("metrics", parents=[common], help="closed-loop metrics per sampler combination")
    s.add_argument("--scenario", action="append")
    s.add_argument("--combos", help=f"comma list from {','.join(SAMPLER_COMBOS)}")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("export-raster", parents=[common], help="BEV raster of a scenario's first step as PGM/CSV")
    s.add_argument("--scenario", required=True)
    s.set_defaults(func=cmd_export_raster)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 and usage text on bad input
    try:
        cfg = _config(args)
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"mapfree: config error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"mapfree: missing file: {exc}", file=sys.stderr)
        return 4
    except (ScenarioValidationError, ExpertDBError, CliError, ValueError) as exc:
        print(f"mapfree: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
