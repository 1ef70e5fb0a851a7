"""``proedge`` command line.

Every subcommand writes its artifacts plus ``config.resolved.yaml`` and
``manifest.json`` into ``--out``. The manifest records the resolved config,
the subcommand arguments and a sha256 per artifact; ``proedge replay`` reruns
a manifest and checks that the CSV/JSON artifacts come out byte-identical.

Failures print one JSON object ``{"error": kind, "message": ...}`` on stderr
and exit with status 1 (2 for command-line usage errors).
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__, plotting
from .config import ExperimentConfig, dump_config, from_dict, load_config, to_dict
from .errors import MissingInputError, ProEdgeError, UsageError
from .forecaster import build_dataset, persistence_mse
from .nn import LayerSpec, Network, gradient_check, mlp
from .trainer import (checkpoint_dict, compare, episodes_csv, evaluate, load_checkpoint,
                      make_trace, pretrain_forecaster, run_training)
from .workload import write_trace

MANIFEST_FORMAT = "proedge-manifest"
MANIFEST_VERSION = 1
REPLAYABLE = (".csv", ".json", ".txt")

log = logging.getLogger("proedge")


def _finite(obj):
    # strict JSON has no NaN/inf; undefined values (e.g. td_loss before learning) become null
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dump_json(obj) -> str:
    return json.dumps(_finite(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _say(msg):
    print(msg, flush=True)


class Run:
    """Output directory bookkeeping for one subcommand."""

    def __init__(self, out):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: dict[str, str] = {}

    def write(self, name, text) -> Path:
        p = self.out / name
        p.write_text(text)
        self.artifacts[name] = sha256(p)
        return p

    def add(self, path) -> Path:
        p = Path(path)
        self.artifacts[p.name] = sha256(p)
        return p


# -- subcommands ----------------------------------------------------------------

def cmd_gen_trace(cfg, args, run):
    trace = make_trace(cfg, cfg.seeds.workload)
    write_trace(trace, run.out / "trace.txt")
    run.add(run.out / "trace.txt")
    run.write("trace_summary.json", dump_json({
        "digest": trace.digest(), "horizon": trace.horizon, "n_arrivals": len(trace.arrivals),
        "cpu_mean": float(trace.cpu_series.mean()), "net_mean": float(trace.net_series.mean())}))
    if not args.no_figures:
        run.add(plotting.plot_trace(trace, run.out / "trace.png"))
    _say(f"trace: {trace.horizon} steps, {len(trace.arrivals)} arrivals, digest {trace.digest()}")


def cmd_pretrain(cfg, args, run):
    fc, curve = pretrain_forecaster(cfg)
    ds = build_dataset(make_trace(cfg, cfg.seeds.history), fc.cfg)
    base = persistence_mse(ds.x_val, ds.y_val)
    best = float(np.nanmin(curve.val_mse)) if curve.val_mse else float("nan")
    run.write("forecaster.json", dump_json({"config": dataclasses.asdict(fc.cfg),
                                            "network": fc.net.to_dict()}))
    run.write("forecaster_loss.csv", curve.to_csv())
    run.write("forecaster_eval.json", dump_json({
        "val_mse": best, "persistence_mse": base,
        "relative_improvement": 1.0 - best / base if base > 0 else float("nan")}))
    if not args.no_figures and curve.epochs:
        run.add(plotting.plot_loss_curve(curve, run.out / "forecaster_loss.png", base))
    _say(f"forecaster val_mse {best:.6f} vs persistence {base:.6f}")


def cmd_train(cfg, args, run):
    mode = cfg.training.mode

    def progress(m):
        if m.episode % 10 == 0 or m.episode == cfg.training.episodes:
            _say(f"[{mode}] episode {m.episode}/{cfg.training.episodes} "
                 f"reward {m.reward:.3f} eps {m.epsilon:.3f}")

    res = run_training(cfg, mode, progress=progress)
    run.write(f"checkpoint_{mode}.json", dump_json(checkpoint_dict(res, cfg)))
    run.write(f"episodes_{mode}.csv", episodes_csv(res.report.episodes))
    if res.report.forecaster_curve is not None:
        run.write("forecaster_loss.csv", res.report.forecaster_curve.to_csv())
    table = evaluate(res.agent, res.forecaster, cfg, mode=mode)
    run.write(f"eval_{mode}.json", dump_json(table.to_dict()))
    if not args.no_figures:
        run.add(plotting.plot_learning_curves({mode: res.report.rewards()},
                                              run.out / f"learning_{mode}.png"))
    _say(f"[{mode}] eval mean reward {table.mean['reward']:.3f}")


def _read_checkpoint(path, cfg):
    if not path:
        raise MissingInputError("a checkpoint path is required")
    p = Path(path)
    if not p.is_file():
        raise MissingInputError(f"checkpoint {p} does not exist")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise MissingInputError(f"checkpoint {p} is not valid JSON: {exc}") from exc
    return load_checkpoint(d, cfg)


def cmd_evaluate(cfg, args, run):
    agent, fc, mode = _read_checkpoint(args.checkpoint, cfg)
    table = evaluate(agent, fc, cfg, mode=mode)
    run.write(f"eval_{mode}.json", dump_json(table.to_dict()))
    _say(f"[{mode}] eval mean reward {table.mean['reward']:.3f} over seeds {table.seeds}")


def cmd_compare(cfg, args, run):
    missing = [n for n in ("baseline", "hybrid") if not getattr(args, n)]
    if missing:
        raise MissingInputError(f"compare needs both checkpoints; missing --{' --'.join(missing)}")
    tables = {}
    for name in ("baseline", "hybrid"):
        agent, fc, mode = _read_checkpoint(getattr(args, name), cfg)
        if mode != name:
            raise UsageError(f"--{name} checkpoint was trained in {mode} mode")
        tables[name] = evaluate(agent, fc, cfg, mode=mode)
        run.write(f"eval_{name}.json", dump_json(tables[name].to_dict()))
    summary = compare(tables["baseline"], tables["hybrid"])
    run.write("comparison.txt", summary.table())
    run.write("comparison.json", dump_json(summary.to_dict()))
    if not args.no_figures:
        run.add(plotting.plot_comparison(summary, run.out / "comparison.png"))
    _say(summary.table().rstrip())


def cmd_experiment(cfg, args, run):
    """Train both agents, evaluate on the shared seeds and compare."""
    tables, curves = {}, {}
    for mode in ("baseline", "hybrid"):
        def progress(m, mode=mode):
            if m.episode % 25 == 0:
                _say(f"[{mode}] episode {m.episode}/{cfg.training.episodes} reward {m.reward:.3f}")
        res = run_training(cfg, mode, progress=progress)
        curves[mode] = res.report.rewards()
        run.write(f"checkpoint_{mode}.json", dump_json(checkpoint_dict(res, cfg)))
        run.write(f"episodes_{mode}.csv", episodes_csv(res.report.episodes))
        tables[mode] = evaluate(res.agent, res.forecaster, cfg, mode=mode)
        run.write(f"eval_{mode}.json", dump_json(tables[mode].to_dict()))
    summary = compare(tables["baseline"], tables["hybrid"])
    run.write("comparison.txt", summary.table())
    run.write("comparison.json", dump_json(summary.to_dict()))
    if not args.no_figures:
        run.add(plotting.plot_learning_curves(curves, run.out / "learning_curves.png"))
        run.add(plotting.plot_comparison(summary, run.out / "comparison.png"))
    _say(summary.table().rstrip())


def gradcheck_suite(seed=0):
    """Named small networks covering every layer kind."""
    return {
        "dense": (Network((6,), mlp(6, (5,), 3, "tanh"), seed=seed), (6,)),
        "conv1d": (Network((7, 3), [LayerSpec("conv1d", {"in_channels": 3, "out_channels": 4,
                                                         "kernel": 3}),
                                    LayerSpec("activation", {}, "sigmoid")], seed=seed), (7, 3)),
        "lstm": (Network((5, 3), [LayerSpec("lstm", {"in": 3, "hidden": 4})], seed=seed), (5, 3)),
        "forecaster": (Network((8, 3), [
            LayerSpec("conv1d", {"in_channels": 3, "out_channels": 4, "kernel": 3}),
            LayerSpec("activation", {}, "relu"),
            LayerSpec("lstm", {"in": 4, "hidden": 5}),
            LayerSpec("dense", {"in": 5, "out": 6})], seed=seed), (8, 3)),
    }


def cmd_gradcheck(cfg, args, run):
    rng = np.random.default_rng(cfg.seeds.agent)
    report = {}
    for name, (net, shape) in gradcheck_suite(cfg.seeds.agent).items():
        rep = gradient_check(net, rng.normal(size=(3,) + shape), tolerance=1e-4)
        report[name] = {"max_rel_error": rep.max_rel_error, "n_params": rep.n_params,
                        "tolerance": rep.tolerance, "passed": rep.passed}
        _say(f"{name:<11} max_rel_error {rep.max_rel_error:.2e}  {'PASS' if rep.passed else 'FAIL'}")
    run.write("gradcheck.json", dump_json(report))
    if not all(r["passed"] for r in report.values()):
        raise ProEdgeError("gradient check failed for " +
                           ", ".join(k for k, r in report.items() if not r["passed"]))


COMMANDS = {
    "gen-trace": cmd_gen_trace,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "experiment": cmd_experiment,
    "gradcheck": cmd_gradcheck,
}


# -- plumbing -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="proedge", description="Proactive edge-cloud offloading experiments.")
    p.add_argument("--version", action="version", version=f"proedge {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="YAML config (defaults if omitted)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="derive all training seeds from this value")
        sp.add_argument("--mode", choices=("baseline", "hybrid"), help="override training.mode")
        sp.add_argument("--episodes", type=int, help="override training.episodes")
        sp.add_argument("--no-figures", action="store_true", help="skip PNG output")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    for name in ("gen-trace", "pretrain", "train", "experiment", "gradcheck"):
        common(sub.add_parser(name))
    common(sub.add_parser("evaluate")).add_argument("--checkpoint", help="agent checkpoint JSON")
    cp = common(sub.add_parser("compare"))
    cp.add_argument("--baseline", help="baseline checkpoint JSON")
    cp.add_argument("--hybrid", help="hybrid checkpoint JSON")
    rp = sub.add_parser("replay", help="rerun a manifest and verify its artifacts")
    rp.add_argument("manifest")
    rp.add_argument("--out", help="output directory (default: a temporary directory)")
    rp.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.mode:
        cfg = cfg.with_mode(args.mode)
    if args.episodes is not None:
        cfg = dataclasses.replace(cfg, training=dataclasses.replace(cfg.training,
                                                                    episodes=args.episodes))
    return cfg.validate()


def _inputs(args) -> dict:
    """Input files referenced by the invocation, with checksums."""
    out = {}
    for key in ("checkpoint", "baseline", "hybrid"):
        path = getattr(args, key, None)
        if path and Path(path).is_file():
            out[key] = {"path": str(Path(path).resolve()), "sha256": sha256(path)}
    return out


def execute(command, cfg, args) -> Run:
    run = Run(args.out)
    run.write("config.resolved.yaml", dump_config(cfg))
    COMMANDS[command](cfg, args, run)
    manifest = {
        "format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "proedge": __version__,
        "command": command,
        "options": {"no_figures": bool(args.no_figures)},
        "inputs": _inputs(args),
        "seeds": to_dict(cfg.seeds),
        "config": to_dict(cfg),
        "artifacts": dict(sorted(run.artifacts.items())),
    }
    (run.out / "manifest.json").write_text(dump_json(manifest))
    return run


def replay(manifest_path, out=None) -> dict:
    """Rerun a manifest into ``out``; returns ``{artifact: "match" | "differ" | "missing"}``."""
    p = Path(manifest_path)
    if not p.is_file():
        raise MissingInputError(f"manifest {p} does not exist")
    m = json.loads(p.read_text())
    if m.get("format") != MANIFEST_FORMAT:
        raise UsageError(f"{p} is not a proedge manifest")
    cfg = from_dict(ExperimentConfig, m["config"]).validate()
    ns = argparse.Namespace(out=out or tempfile.mkdtemp(prefix="proedge-replay-"),
                            no_figures=m["options"]["no_figures"], checkpoint=None,
                            baseline=None, hybrid=None)
    for key, info in m["inputs"].items():
        if not Path(info["path"]).is_file():
            raise MissingInputError(f"input {key} {info['path']} no longer exists")
        if sha256(info["path"]) != info["sha256"]:
            raise MissingInputError(f"input {key} {info['path']} changed since the original run")
        setattr(ns, key, info["path"])
    run = execute(m["command"], cfg, ns)
    status = {}
    for name, digest in m["artifacts"].items():
        if not name.endswith(REPLAYABLE):
            continue
        got = run.artifacts.get(name)
        status[name] = "missing" if got is None else ("match" if got == digest else "differ")
    return status


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "replay":
            status = replay(args.manifest, args.out)
            for name, s in status.items():
                _say(f"{s:<7} {name}")
            bad = sorted(n for n, s in status.items() if s != "match")
            if bad:
                print(json.dumps({"error": "replay-mismatch", "message": f"artifacts differ: {bad}"}),
                      file=sys.stderr)
                return 1
            return 0
        cfg = resolve_config(args)
        execute(args.command, cfg, args)
        return 0
    except ProEdgeError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}), file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
