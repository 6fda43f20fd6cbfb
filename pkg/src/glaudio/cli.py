"""Command-line entry point tying the pipeline together.

Subcommands: convert, encode, train, eval, sweep, analyze, oracle-check,
export-wav. All take JSON configs with --set key=value overrides that are
type-checked against the config schema; every run is reproducible from
(argv, config, seed). The GLAUDIO_THREADS environment variable caps
parallelism (BLAS threads and sweep workers).
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import analysis, audio, data, decoder, training
from .errors import GlaudioError
from .graph import LaplacianVariant, build_operator
from .training import TrainConfig
from .wave import WaveConfig, propagate

PRESETS = ("cora", "citeseer", "pubmed", "texas", "cornell", "wisconsin")


class CliError(Exception):
    """Validation failure: maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise CliError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    text = importlib.resources.files("glaudio.presets").joinpath(f"{name}.json").read_text()
    return json.loads(text)


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce_override(key: str, value: str):
    if key not in _FIELD_TYPES:
        raise CliError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    if value in ("null", "none", "None"):
        return None
    if kind == "int" or kind == "int | None":
        return int(value)
    if kind == "float":
        return float(value)
    if kind == "bool":
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise CliError(f"{key} expects a boolean, got {value!r}")
    return value


def _build_config(args) -> TrainConfig:
    config_dict: dict = {}
    if getattr(args, "preset", None):
        config_dict = load_preset(args.preset)
    if getattr(args, "config", None):
        config_dict = json.loads(Path(args.config).read_text())
    if not config_dict:
        raise CliError("provide --config or --preset")
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        config_dict[key.replace("-", "_")] = _coerce_override(key.replace("-", "_"), value)
    if getattr(args, "seed", None) is not None:
        config_dict["seed"] = args.seed
    return TrainConfig.from_dict(config_dict)


def _load_graph(args):
    bundle = data.load_bundle(args.bundle)
    if bundle.splits is None:
        fractions = tuple(float(x) for x in args.splits.split(","))
        train, val, test = data.make_splits(bundle.num_nodes, fractions, args.split_seed)
        bundle.splits = {"train": train, "val": val, "test": test}
        source = f"seeded {args.splits} split (seed {args.split_seed})"
    else:
        source = "bundled"
    return bundle, bundle.to_graph(), source


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _add_bundle_args(parser, with_splits=True):
    parser.add_argument("--bundle", required=True, help="canonical bundle JSON")
    if with_splits:
        parser.add_argument("--splits", default="0.6,0.2,0.2",
                            help="fallback split fractions when the bundle has none")
        parser.add_argument("--split-seed", type=int, default=0)


def _cmd_convert(args) -> int:
    bundle = data.load_content_cites(args.content, args.cites)
    if args.name:
        bundle.metadata["dataset"] = args.name
    if args.splits:
        fractions = tuple(float(x) for x in args.splits.split(","))
        train, val, test = data.make_splits(bundle.num_nodes, fractions, args.split_seed)
        bundle.splits = {"train": train, "val": val, "test": test}
    data.save_bundle(bundle, args.out)
    print(json.dumps({"num_nodes": bundle.num_nodes,
                      "num_edges": int(np.asarray(bundle.edges).shape[0]),
                      "dropped_edges": bundle.metadata.get("dropped_edges", 0),
                      "out": str(args.out)}))
    return 0


def _cmd_encode(args) -> int:
    bundle, graph, _ = _load_graph(args)
    op = build_operator(graph, LaplacianVariant.parse(args.variant))
    config = WaveConfig(num_steps=args.steps, step_size=args.step_size)
    signal = propagate(op, graph.features, config,
                       record_velocities=not args.no_velocities)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    arrays = {"positions": signal.positions,
              "num_steps": np.int64(config.num_steps),
              "step_size": np.float64(config.step_size)}
    if signal.velocities is not None:
        arrays["velocities"] = signal.velocities
    np.savez(out, **arrays)
    report = {"out": str(out), "num_steps": config.num_steps,
              "step_size": config.step_size,
              "stopping_time": config.stopping_time,
              "stable": config.is_stable(op.max_eigenvalue_bound)}
    if signal.velocities is not None:
        _, drift = analysis.energy_trace(signal, op)
        report["energy_drift"] = drift
    print(json.dumps(report))
    return 0


def _cmd_train(args) -> int:
    bundle, graph, split_source = _load_graph(args)
    config = _build_config(args)
    params, report = training.train(graph, config, split_source=split_source)
    out_dir = Path(args.out)
    payload = report.to_dict()
    payload["config"] = config.to_dict()
    payload["dataset"] = bundle.metadata.get("dataset", "unknown")
    _write_json(out_dir / "report.json", payload)
    decoder.save_checkpoint(params, out_dir / "checkpoint.json",
                            seed_lineage=[config.seed])
    print(json.dumps({"test_metric": report.test_metric,
                      "best_val_metric": report.best_val_metric,
                      "epochs_run": report.epochs_run,
                      "out": str(out_dir)}))
    return 0


def _cmd_eval(args) -> int:
    bundle, graph, _ = _load_graph(args)
    config = _build_config(args)
    params, _ = decoder.load_checkpoint(args.checkpoint)
    op = build_operator(graph, config.laplacian_variant)
    signal = training.encode(op, graph.features, config.wave_config(), params,
                             config.embedding_placement)
    mask = {"train": graph.train_mask, "val": graph.val_mask,
            "test": graph.test_mask}[args.mask]
    metric = "accuracy" if config.loss == "cross_entropy" else "mae"
    value = training.evaluate(params, graph, signal, mask, metric,
                              apply_embedding=config.embedding_placement == "post")
    print(json.dumps({"mask": args.mask, "metric": metric, "value": value}))
    return 0


def _cmd_sweep(args) -> int:
    bundle, graph, split_source = _load_graph(args)
    config = _build_config(args)
    step_counts = [int(x) for x in args.steps.split(",")]
    seeds = [int(x) for x in args.seeds.split(",")]
    result = analysis.sweep_steps(graph, config, step_counts, seeds,
                                  split_source=split_source)
    out_dir = Path(args.out)
    _write_json(out_dir / "sweep.json", result.to_dict())
    (out_dir / "sweep.csv").write_text(result.to_csv())
    print(json.dumps({"entries": len(result.entries), "out": str(out_dir)}))
    return 0


def _cmd_analyze(args) -> int:
    bundle, graph, _ = _load_graph(args)
    op = build_operator(graph, LaplacianVariant.parse(args.variant))
    config = WaveConfig(num_steps=args.steps, step_size=args.step_size)
    signal = propagate(op, graph.features, config)
    energies, drift = analysis.energy_trace(signal, op)
    report = {
        "num_steps": config.num_steps,
        "step_size": config.step_size,
        "initial_energy": float(energies[0]),
        "max_relative_drift": drift,
        "stable": config.is_stable(op.max_eigenvalue_bound),
        "final_snapshot_smoothness": analysis.oversmoothing_metric(
            op, signal.positions[-1]),
    }
    if args.out:
        _write_json(Path(args.out), report)
    print(json.dumps(report))
    return 0


def _cmd_oracle_check(args) -> int:
    bundle, graph, _ = _load_graph(args)
    op = build_operator(graph, LaplacianVariant.parse(args.variant))
    base_steps = max(1, int(round(args.stopping_time / args.step_size)))
    report = analysis.encoder_convergence(op, graph.features, args.stopping_time,
                                          base_steps)
    report["max_deviation"] = max(report["max_deviations"])
    if args.out:
        _write_json(Path(args.out), report)
    print(json.dumps(report))
    return 0


def _cmd_export_wav(args) -> int:
    bundle = data.load_bundle(args.bundle)
    vertex = args.vertex if args.vertex == "mix" else int(args.vertex)
    info = audio.export_wav(bundle, LaplacianVariant.parse(args.variant), vertex,
                            args.rate, args.duration, args.out,
                            target_hz=args.target_hz)
    info["out"] = str(args.out)
    print(json.dumps(info))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="glaudio", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("convert", help="raw content/cites text to canonical bundle")
    p.add_argument("--content", required=True)
    p.add_argument("--cites", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name", default=None)
    p.add_argument("--splits", default=None, help="train,val,test fractions")
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("encode", help="propagate features and save the wave signal")
    _add_bundle_args(p)
    p.add_argument("--variant", default="combinatorial")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--step-size", type=float, required=True)
    p.add_argument("--no-velocities", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("train", help="train a decoder on a bundle")
    _add_bundle_args(p)
    p.add_argument("--config", default=None)
    p.add_argument("--preset", default=None, choices=PRESETS)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a mask")
    _add_bundle_args(p)
    p.add_argument("--config", default=None)
    p.add_argument("--preset", default=None, choices=PRESETS)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mask", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="accuracy vs number of steps at fixed T")
    _add_bundle_args(p)
    p.add_argument("--config", default=None)
    p.add_argument("--preset", default=None, choices=PRESETS)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--steps", default="8,25,50,100,200")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("analyze", help="energy trace and smoothness of a signal")
    _add_bundle_args(p)
    p.add_argument("--variant", default="combinatorial")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--step-size", type=float, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("oracle-check", help="integrator vs exact-signal convergence")
    _add_bundle_args(p)
    p.add_argument("--variant", default="combinatorial")
    p.add_argument("--step-size", type=float, required=True)
    p.add_argument("--stopping-time", "--T", dest="stopping_time", type=float,
                   required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_oracle_check)

    p = sub.add_parser("export-wav", help="render a vertex signal as audio")
    p.add_argument("--bundle", required=True)
    p.add_argument("--variant", default="combinatorial")
    p.add_argument("--vertex", default="0", help="vertex index or 'mix'")
    p.add_argument("--rate", type=int, default=44100)
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--target-hz", type=float, default=2000.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_wav)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except (CliError, GlaudioError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
