"""Command-line entry point: simulate, train, predict, evaluate, gradcheck."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gan
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .data import DataError, load_scenario, save_scenario
from .gradcheck import run_battery
from .pipeline import build_samples, load_named, observation_samples, split_named
from .sim import make_dataset, overlap_stats

log = logging.getLogger("socgan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config(args) -> RunConfig:
    rc = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        rc = rc.replace(seed=args.seed)
    return rc


def _require(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise UsageError(f"{args.command} needs --{n.replace('_', '-')}")


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    _require(args, "out")
    rc = _config(args)
    named = make_dataset(rc.dataset_spec(), rc.seed, rc.sim_config(), names=True)
    out = Path(args.out)
    for name, s in named:
        save_scenario(s, out, name)
    stats = overlap_stats([s for _, s in named])
    print(f"scenarios: {len(named)}")
    print(f"agent-timesteps: {stats.agent_steps}")
    print(f"overlap fraction: {stats.fraction:.6f}")
    print(f"closest approach ratio: {stats.worst_ratio:.4f}")
    return EXIT_OK


def cmd_train(args) -> int:
    _require(args, "data", "out")
    rc = _config(args)
    named = load_named(args.data)
    scenarios = [s for _, s in named]
    train_idx, val_idx = split_named([n for n, _ in named], rc.val_fraction, rc.seed)
    train_set = build_samples(scenarios, rc, train_idx)
    val_set = build_samples(scenarios, rc, val_idx) or None
    if not train_set:
        raise DataError(f"{args.data}: no training windows of length "
                        f"t_obs+t_pred={rc.t_obs + rc.t_pred}")
    log.info("training on %d windows, validating on %d", len(train_set),
             len(val_set) if val_set else 0)
    params, history = gan.train(train_set, rc.train_config(), rc.model_config(), val_set)
    out = Path(args.out)
    save_checkpoint(out, params, rc)
    csv_path = out.with_name(out.name + ".csv")
    csv_path.write_text("".join([gan.CSV_HEADER + "\n"] + [h.csv() + "\n" for h in history]))
    if history:
        last = history[-1]
        print(f"epochs: {len(history)}  final d_acc: {last.d_acc:.3f}  "
              f"best val_ade: {min(h.val_ade for h in history):.4f}")
    print(f"checkpoint: {out}")
    print(f"metrics: {csv_path}")
    return EXIT_OK


def _load_model(args):
    params, rc = load_checkpoint(args.checkpoint)
    if args.config:
        given = load_config(args.config)
        if given.t_obs != rc.t_obs:
            raise ConfigError(f"config t_obs={given.t_obs} does not match the "
                              f"checkpoint's t_obs={rc.t_obs}")
    if args.seed is not None:
        rc = rc.replace(seed=args.seed)
    return params, rc


def cmd_predict(args) -> int:
    _require(args, "checkpoint", "input", "out")
    params, rc = _load_model(args)
    scenario = load_scenario(args.input)
    samples = observation_samples(scenario, rc)
    k = args.k or 1
    preds = (gan.predict_samples(samples, params, rc.model_config(), k, rc.seed)
             if samples else np.zeros((k, 0, rc.t_pred, 2)))
    last_t = scenario.frames[-1].t
    classes = {a.agent_id: a.cls.name for f in scenario.frames for a in f.agents}
    lines = [f"# dt={scenario.dt!r}"]
    for n, s in enumerate(samples):
        for i in range(k):
            for step in range(rc.t_pred):
                x, y = (float(v) for v in preds[i, n, step])
                lines.append(f"{last_t + step + 1}\t{s.agent_id}\t{classes[s.agent_id]}"
                             f"\t{x!r}\t{y!r}\t{i}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"agents: {len(samples)}  samples per agent: {k}  rows: {len(lines) - 1}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _require(args, "checkpoint", "data")
    params, rc = _load_model(args)
    scenarios = [s for _, s in load_named(args.data)]
    samples = build_samples(scenarios, rc)
    if not samples:
        raise DataError(f"{args.data}: no evaluation windows")
    k = args.k or rc.k_eval
    mcfg = rc.model_config()
    truth = None
    if args.debug_identity:
        truth = np.broadcast_to(np.stack([s.future for s in samples]),
                                (k, len(samples), rc.t_pred, 2))
    report = gan.evaluate(samples, params, mcfg, k, rc.seed, predictions=truth)
    single = gan.evaluate(samples, params, mcfg, 1, rc.seed,
                          predictions=None if truth is None else truth[:1])
    summary = {
        "k_eval": k, "windows": report.n_samples,
        "ade": report.ade, "fde": report.fde, "ade_k1": single.ade, "fde_k1": single.fde,
        "collision_rate": report.collision_rate, "d_accuracy": report.d_accuracy,
        "baseline_ade": report.baseline_ade, "baseline_fde": report.baseline_fde,
        "per_scenario": {str(k_): v for k_, v in report.per_scenario.items()},
    }
    print(f"best-of-{k} ADE {report.ade:.4f}  FDE {report.fde:.4f}")
    print(f"best-of-1 ADE {single.ade:.4f}  FDE {single.fde:.4f}")
    print(f"collision rate {report.collision_rate:.4f}  D accuracy {report.d_accuracy:.3f}")
    print(f"constant-velocity ADE {report.baseline_ade:.4f}  FDE {report.baseline_fde:.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_battery()
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="socgan", description="Multi-channel social trajectory GAN toolkit.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key=value run configuration file")
    p.add_argument("--data", help="directory of scenario files")
    p.add_argument("--out", help="output directory (simulate) or file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--k", type=int, help="samples per agent (predict, evaluate)")
    p.add_argument("--checkpoint", help="checkpoint file (predict, evaluate)")
    p.add_argument("--input", help="observed trajectory TSV (predict)")
    p.add_argument("--debug-identity", action="store_true",
                   help="evaluate ground truth against itself")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.k is not None and args.k < 1:
            raise UsageError("--k must be at least 1")
    except UsageError as exc:
        print(f"socgan: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"socgan: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, OSError) as exc:
        print(f"socgan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (gan.NumericError, FloatingPointError) as exc:
        print(f"socgan: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
