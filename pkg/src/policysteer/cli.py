"""Command-line entry point: ``policysteer <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 runtime or backend error.
"""

import argparse
import json
import logging
import os
import sys
import time

from . import __version__
from .config import RunConfig
from .data import generate_dataset, load_dataset, write_dataset
from .env import read_episodes
from .exceptions import CheckpointError, ConfigurationError, PolicySteerError
from .metrics import METRICS, ablation_report, build_ablation_corpus
from .policy import ModeMixture, fit_policy
from .steering import ground_truth_ok, imagine_episodes, monitor_rollouts, narrate_episodes, run_steering
from .verifier.classifier import train_latent_classifier
from .verifier.client import ClientVerifier, VerifierClient
from .verifier.tasks import get_task
from .worldmodel.checkpoint import load_checkpoint, save_checkpoint
from .worldmodel.model import one_step_mse, train_world_model

logger = logging.getLogger("policysteer")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _write_json(path, obj):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


def _load_models(cfg):
    policy_path, wm_path = cfg.path("models", "policy.json"), cfg.path("models", "worldmodel.json")
    for p in (policy_path, wm_path):
        if not os.path.exists(p):
            raise ConfigurationError(f"missing checkpoint {p}; run `policysteer train` first")
    return ModeMixture.load(policy_path), load_checkpoint(wm_path)


def cmd_gen_data(cfg, args):
    demos, train, test = generate_dataset(cfg.dataset_config())
    out = cfg.path("data")
    try:
        manifest = write_dataset(out, train, test, cfg.dataset_config(), force=args.force)
    except FileExistsError as exc:
        raise ConfigurationError(str(exc)) from None
    manifest["config_hash"] = cfg.digest()
    print(json.dumps(manifest["counts"], sort_keys=True))
    return manifest


def cmd_train(cfg, args):
    manifest, train, test = load_dataset(cfg.path("data"))
    models = cfg.path("models")
    os.makedirs(models, exist_ok=True)
    if not args.wm_only:
        demos = [e for e in train if e.source == "demo"]
        policy = fit_policy(demos, len(cfg["modes"]), cfg["seed"])
        policy.save(os.path.join(models, "policy.json"))
        print(f"policy: {len(policy.modes)} modes, weights {policy.weights.round(3).tolist()}")

    def progress(epoch, history):
        print(f"epoch {epoch:4d}  train {history['train'][-1]:.4f}  heldout_pred {history['val'][-1]:.5f}", flush=True)

    t0 = time.perf_counter()
    params = train_world_model(train, cfg.worldmodel_config(), progress)
    save_checkpoint(params, os.path.join(models, "worldmodel.json"))
    print(f"world model: best epoch {params.history['best_epoch']}, {time.perf_counter() - t0:.1f}s")
    if test:
        print(f"test one-step mse {one_step_mse(params, test):.5f}")
    return params


def _verifier(cfg, task):
    if cfg["backend"] != "client":
        return None
    client = VerifierClient(
        endpoint=cfg["verifier_endpoint"],
        timeout=cfg["verifier_timeout"],
        retries=cfg["verifier_retries"],
    )
    return ClientVerifier(client, max_k=cfg["k"])


def _classifier(cfg, params):
    _, train, _ = load_dataset(cfg.path("data"))
    task = get_task(cfg["classifier_task"])
    labels = [ground_truth_ok(e, task) for e in train]
    return train_latent_classifier(imagine_episodes(train, params), labels)


def cmd_steer(cfg, args):
    policy, params = _load_models(cfg)
    config = cfg.steering_config()
    mode = "baseline" if args.baseline else ("classifier" if cfg["backend"] == "classifier" else "steer")
    classifier = _classifier(cfg, params) if mode == "classifier" else None
    verifier = _verifier(cfg, config.task) if mode == "steer" else None
    stem = f"{config.task.id}-{mode}"
    trace_path = cfg.path("steer", stem + ".jsonl")
    os.makedirs(os.path.dirname(trace_path), exist_ok=True)
    try:
        _, summary = run_steering(
            config, policy, params, cfg["episodes"], cfg["seed"], mode, verifier, classifier, trace_path
        )
    finally:
        if verifier is not None:
            verifier.client.close()
    summary["run_config_hash"] = cfg.digest()
    _write_json(cfg.path("steer", stem + ".summary.json"), summary)
    lo, hi = summary["ci95"]
    print(f"{config.task.id} {mode}: success {summary['success_rate']:.2f} [{lo:.2f}, {hi:.2f}] over {summary['episodes']} episodes")
    return summary


def cmd_monitor(cfg, args):
    _, params = _load_models(cfg)
    task = get_task(cfg["task"])
    path = args.rollouts or cfg.path("data", "test.jsonl")
    try:
        episodes = read_episodes(path)
    except FileNotFoundError:
        raise ConfigurationError(f"rollout file {path!r} not found") from None
    verifier = _verifier(cfg, task)
    try:
        narrations = narrate_episodes(episodes, params, task, verifier)
        report = monitor_rollouts(narrations, [ground_truth_ok(e, task) for e in episodes], task, verifier)
    finally:
        if verifier is not None:
            verifier.client.close()
    out = report.to_dict()
    out.update(task=task.id, positive_class="failure", run_config_hash=cfg.digest())
    _write_json(cfg.path("monitor", f"{task.id}.json"), out)
    print("metric  value")
    for key in ("acc", "tpr", "tnr"):
        print(f"{key:<7} {out[key]:.3f}")
    print(f"n={out['n']} tp={out['tp']} tn={out['tn']} fp={out['fp']} fn={out['fn']}")
    return out


def cmd_ablate_metrics(cfg, args):
    corpus = build_ablation_corpus(seed=cfg["seed"])
    out_dir = cfg.path("ablation")
    os.makedirs(out_dir, exist_ok=True)
    reports = {}
    for name in args.metrics or sorted(METRICS):
        report = ablation_report(corpus, name)
        report.write_json(os.path.join(out_dir, f"{name}.json"))
        if args.csv:
            report.write_csv(os.path.join(out_dir, f"{name}.csv"))
        reports[name] = report
        print(f"{name:<15} intra={report.n_intra} inter={report.n_inter} auc={report.separation_auc:.3f}")
    return reports


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "steer": cmd_steer,
    "monitor": cmd_monitor,
    "ablate-metrics": cmd_ablate_metrics,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON (flat, schema-validated)")
    common.add_argument("--out-dir", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="run seed (overrides RUN_SEED and the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="policysteer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate demos + policy rollouts")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty data directory")

    p = sub.add_parser("train", parents=[common], help="fit the policy and the world model")
    p.add_argument("--wm-only", action="store_true", help="skip policy fitting")

    p = sub.add_parser("steer", parents=[common], help="run seeded steering episodes")
    p.add_argument("--episodes", type=int)
    p.add_argument("--task")
    p.add_argument("--backend", choices=("oracle", "client", "classifier"))
    p.add_argument("--baseline", action="store_true", help="execute raw policy samples instead")

    p = sub.add_parser("monitor", parents=[common], help="ACC/TPR/TNR of the monitor on labeled rollouts")
    p.add_argument("--task")
    p.add_argument("--rollouts", help="episodes JSONL (default: the test split)")

    p = sub.add_parser("ablate-metrics", parents=[common], help="intra- vs inter-category metric scores")
    p.add_argument("--metrics", nargs="+", choices=sorted(METRICS))
    p.add_argument("--csv", action="store_true", help="also write raw pairwise scores")
    return parser


def _resolve_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig.default()
    seed = args.seed
    if seed is None and os.environ.get("RUN_SEED"):
        try:
            seed = int(os.environ["RUN_SEED"])
        except ValueError:
            raise ConfigurationError(f"RUN_SEED must be an integer, got {os.environ['RUN_SEED']!r}") from None
    overrides = {"seed": seed, "out_dir": args.out_dir}
    for key in ("episodes", "task", "backend"):
        overrides[key] = getattr(args, key, None)
    if os.environ.get("VERIFIER_ENDPOINT") and cfg["verifier_endpoint"] is None:
        overrides["verifier_endpoint"] = os.environ["VERIFIER_ENDPOINT"]
    return cfg.with_overrides(**overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _resolve_config(args)
        COMMANDS[args.command](cfg, args)
    except (ConfigurationError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PolicySteerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
