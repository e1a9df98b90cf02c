"""Command-line front end for the whole pipeline.

Subcommands cover the individual stages (parse, validate, inject, equiv,
optimize, dfg, gen-bench, train, evaluate, defend-smooth, defend-retrain)
plus `run`, which executes a full sweep experiment from a config file.

Every failure exits nonzero with a single machine-parsable line on
stderr, `error:<category>: <message>`, where the category is one of
config, parse, sim, inject, train, io, internal.  `equiv` is special:
its exit code is the verdict (0 equivalent, 1 counterexample found,
4 inconclusive random sampling), and 2 still means an error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Optional

from . import __version__
from .benchgen import BenchError, gen_suite, write_suite
from .dfg import build_dfg, dfg_to_text
from .experiment import (
    ExperimentConfig,
    ExperimentError,
    load_config,
    prepare_data,
    run_experiment,
)
from .gnn import (
    CheckpointError,
    GnnError,
    ModelParams,
    TrainingDiverged,
    load_checkpoint,
    save_checkpoint,
    train,
    write_loss_trace,
)
from .netlist import NetlistError, emit_netlist, validate
from .parser import parse_netlist_file
from .poison import (
    PoisonError,
    PoisonPlan,
    accuracy_classify,
    accuracy_pairs,
    attack_success_classify,
    classify_items,
    evaluate_backdoor_classify,
    evaluate_backdoor_pairs,
    make_triggered_testset,
    metrics_rows,
    pair_items,
    retrain_defense,
    smoothed_accuracy,
    smoothed_attack_success,
    write_metrics_csv,
    METRICS_COLUMNS,
)
from .sim import (
    EXHAUSTIVE_LIMIT,
    SimulationError,
    check_equivalence,
    exhaustive_input_arrays,
    measure_coverage,
    random_input_arrays,
)
from .optimize import optimize
from .trigger import TriggerError, TriggerSpec, inject, make_trigger_spec

log = logging.getLogger("netpoison.cli")

EXIT_OK = 0
EXIT_COUNTEREXAMPLE = 1
EXIT_ERROR = 2
EXIT_INCONCLUSIVE = 4

# Exception type -> error category for the one-line stderr report.
_CATEGORIES: tuple[tuple[type, str], ...] = (
    (ExperimentError, "config"),
    (BenchError, "config"),
    (NetlistError, "parse"),
    (SimulationError, "sim"),
    (TriggerError, "inject"),
    (PoisonError, "inject"),
    (TrainingDiverged, "train"),
    (CheckpointError, "train"),
    (GnnError, "train"),
    (OSError, "io"),
)


def _fail(exc: BaseException) -> int:
    category = "internal"
    for etype, name in _CATEGORIES:
        if isinstance(exc, etype):
            category = name
            break
    print(f"error:{category}: {exc}", file=sys.stderr)
    return EXIT_ERROR


def _write_text(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# netlist-level commands


def cmd_parse(args) -> int:
    n = parse_netlist_file(args.netlist)
    _write_text(args.out, emit_netlist(n))
    return EXIT_OK


def cmd_validate(args) -> int:
    n = parse_netlist_file(args.netlist)
    diags = validate(n)
    if diags:  # parse_netlist_file validates already; belt and braces
        for d in diags:
            print(d.format(args.netlist), file=sys.stderr)
        return EXIT_ERROR
    print(
        f"ok: {n.name}: {len(n.ports)} ports, {len(n.nets)} nets, "
        f"{len(n.assigns)} assigns"
    )
    return EXIT_OK


def _coverage_vectors(n, seed: int):
    total_bits = sum(p.width for p in n.inputs)
    if total_bits <= EXHAUSTIVE_LIMIT:
        return exhaustive_input_arrays(n)
    return random_input_arrays(n, 10000, seed)


def cmd_inject(args) -> int:
    n = parse_netlist_file(args.netlist)
    if (args.spec is None) == (args.phi is None):
        raise ExperimentError("inject: need exactly one of --phi / --spec")
    if args.spec is not None:
        with open(args.spec, encoding="utf-8") as fh:
            spec = TriggerSpec.from_dict(json.load(fh))
    else:
        cov = measure_coverage(n, _coverage_vectors(n, args.seed))
        spec = make_trigger_spec(
            n, cov, args.phi, granularity=args.granularity, mask=args.mask
        )
    injected = inject(n, spec)
    if not args.no_verify:
        res = check_equivalence(n, injected, mode="auto", seed=args.seed)
        if res.verdict == "counterexample":
            raise TriggerError(
                f"injected netlist differs from original at {res.counterexample}"
            )
    if args.spec_out:
        with open(args.spec_out, "w", encoding="utf-8") as fh:
            json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    _write_text(args.out, emit_netlist(injected))
    return EXIT_OK


def cmd_equiv(args) -> int:
    a = parse_netlist_file(args.left)
    b = parse_netlist_file(args.right)
    res = check_equivalence(a, b, mode=args.mode, count=args.count, seed=args.seed)
    if res.verdict == "equivalent":
        print(f"equivalent ({res.vectors_checked} vectors, {res.mode})")
        return EXIT_OK
    if res.verdict == "counterexample":
        print(f"counterexample: {json.dumps(res.counterexample, sort_keys=True)}")
        return EXIT_COUNTEREXAMPLE
    print(f"inconclusive: {res.vectors_checked} random vectors matched")
    return EXIT_INCONCLUSIVE


def cmd_optimize(args) -> int:
    n = parse_netlist_file(args.netlist)
    _write_text(args.out, emit_netlist(optimize(n)))
    return EXIT_OK


def cmd_dfg(args) -> int:
    n = parse_netlist_file(args.netlist)
    g = build_dfg(n)
    if args.format == "text":
        _write_text(args.out, dfg_to_text(g))
    else:
        doc = {
            "name": n.name,
            "nodes": [
                {"id": nd.id, "kind": nd.kind, "label": nd.label} for nd in g.nodes
            ],
            "edges": [[s, d] for s, d in g.edges],
        }
        _write_text(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_gen_bench(args) -> int:
    records = gen_suite(
        args.families,
        seed=args.seed,
        clean_variants=args.clean_variants,
        trojan_variants=args.trojan_variants,
        verify=not args.no_verify,
    )
    manifest = write_suite(records, args.out)
    print(f"wrote {len(records)} circuits, manifest {manifest}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# model-level commands


def _load_experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, model=replace(cfg.model, seed=args.seed))
    return cfg


def _resolve_out(args, cfg: ExperimentConfig) -> str:
    out = args.out or os.environ.get("NETPOISON_OUT") or cfg.out
    if not out:
        raise ExperimentError("no output directory (--out, NETPOISON_OUT, or out:)")
    return out


def cmd_train(args) -> int:
    cfg = _load_experiment(args)
    out = _resolve_out(args, cfg)
    data = prepare_data(cfg)
    items = (
        classify_items(data.train_items)
        if cfg.task == "ht-detect"
        else pair_items(data.train_items)
    )
    result = train(items, cfg.model)
    os.makedirs(out, exist_ok=True)
    ckpt = os.path.join(out, "clean.npz")
    save_checkpoint(ckpt, result.params, cfg.model)
    write_loss_trace(os.path.join(out, "clean_trace.csv"), result.loss_trace)
    if cfg.task == "ht-detect":
        acc = accuracy_classify(result.params, cfg.model, data.test_items)
    else:
        acc = accuracy_pairs(result.params, cfg.model, data.test_items)
    print(f"trained {cfg.task} model: test accuracy {acc:.4f}, checkpoint {ckpt}")
    return EXIT_OK


def _load_matching_checkpoints(clean_path: str, backdoor_path: str):
    clean_params, clean_cfg = load_checkpoint(clean_path)
    bd_params, bd_cfg = load_checkpoint(backdoor_path)
    if clean_cfg != bd_cfg:
        raise ExperimentError("checkpoint model configs differ")
    return clean_params, bd_params, clean_cfg


def cmd_evaluate(args) -> int:
    cfg = _load_experiment(args)
    data = prepare_data(cfg)
    clean_params, bd_params, model_cfg = _load_matching_checkpoints(
        args.clean, args.backdoor
    )
    plan = PoisonPlan(
        phi=args.phi, gamma=args.gamma, target_label=cfg.target_label,
        granularity=cfg.granularity, mask=cfg.mask, seed=cfg.seed,
    )
    if cfg.task == "ht-detect":
        report = evaluate_backdoor_classify(
            clean_params, bd_params, model_cfg, data.test_items, plan,
            verify=cfg.verify_injection,
        )
    else:
        report = evaluate_backdoor_pairs(
            clean_params, bd_params, model_cfg, data.test_items, plan,
            verify=cfg.verify_injection,
        )
    row = metrics_rows(report, cfg.name, args.phi, args.gamma)
    if args.out:
        write_metrics_csv(args.out, [row])
    else:
        print(",".join(METRICS_COLUMNS))
        print(",".join(row[c] for c in METRICS_COLUMNS))
    return EXIT_OK


def cmd_defend_smooth(args) -> int:
    cfg = _load_experiment(args)
    if cfg.task != "ht-detect":
        raise ExperimentError("defend-smooth applies to ht-detect experiments")
    data = prepare_data(cfg)
    bd_params, model_cfg = load_checkpoint(args.backdoor)
    plan = PoisonPlan(
        phi=args.phi, gamma=0.5, target_label=cfg.target_label,
        granularity=cfg.granularity, mask=cfg.mask, seed=cfg.seed,
    )
    triggered, _ = make_triggered_testset(
        data.test_items, plan, verify=cfg.verify_injection
    )
    acc = accuracy_classify(bd_params, model_cfg, data.test_items)
    asr = attack_success_classify(bd_params, model_cfg, triggered, cfg.target_label)
    sm_kw = dict(
        samples=args.samples, roots_per_sample=args.roots, k=args.k, seed=args.seed or 0
    )
    sm_acc = smoothed_accuracy(
        bd_params, model_cfg, data.test_items, cfg.target_label, **sm_kw
    )
    sm_asr = smoothed_attack_success(
        bd_params, model_cfg, triggered, cfg.target_label, **sm_kw
    )
    print(f"unsmoothed: acc={acc:.4f} asr={asr:.4f}")
    print(
        f"smoothed:   acc={sm_acc:.4f} asr={sm_asr:.4f}"
        f" (samples={args.samples}, roots={args.roots}, k={args.k})"
    )
    return EXIT_OK


def cmd_defend_retrain(args) -> int:
    cfg = _load_experiment(args)
    if cfg.task != "ht-detect":
        raise ExperimentError("defend-retrain applies to ht-detect experiments")
    data = prepare_data(cfg)
    bd_params, model_cfg = load_checkpoint(args.backdoor)
    plan = PoisonPlan(
        phi=args.phi, gamma=0.5, target_label=cfg.target_label,
        granularity=cfg.granularity, mask=cfg.mask, seed=cfg.seed,
    )
    triggered, _ = make_triggered_testset(
        data.test_items, plan, verify=cfg.verify_injection
    )
    before_acc = accuracy_classify(bd_params, model_cfg, data.test_items)
    before_asr = attack_success_classify(
        bd_params, model_cfg, triggered, cfg.target_label
    )
    retrained = retrain_defense(
        bd_params, model_cfg, classify_items(data.train_items), args.epochs,
        seed=args.seed,
    )
    after_acc = accuracy_classify(retrained, model_cfg, data.test_items)
    after_asr = attack_success_classify(
        retrained, model_cfg, triggered, cfg.target_label
    )
    print(f"before: acc={before_acc:.4f} asr={before_asr:.4f}")
    print(f"after:  acc={after_acc:.4f} asr={after_asr:.4f} ({args.epochs} epochs)")
    if args.out:
        save_checkpoint(args.out, retrained, model_cfg)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_experiment(args)
    out = _resolve_out(args, cfg)
    result = run_experiment(cfg, out, jobs=args.jobs, timing=args.timing)
    print(f"wrote {len(result.cells)} cells to {os.path.join(out, 'report.csv')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="netpoison",
        description="Backdoor-poisoning pipeline for netlist-level GNN detectors.",
    )
    top.add_argument("--version", action="version", version=f"netpoison {__version__}")
    top.add_argument(
        "--log-level",
        default=os.environ.get("NETPOISON_LOG_LEVEL", "warning"),
        choices=("debug", "info", "warning", "error"),
        help="stderr logging threshold (env: NETPOISON_LOG_LEVEL)",
    )
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a netlist and emit canonical source")
    p.add_argument("netlist")
    p.add_argument("--out", help="output file ('-' or omitted: stdout)")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("validate", help="parse and validate a netlist")
    p.add_argument("netlist")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("inject", help="insert a functionality-preserving trigger")
    p.add_argument("netlist")
    p.add_argument("--phi", type=float, help="trigger size fraction; sizes a new spec")
    p.add_argument("--spec", help="JSON trigger spec to apply instead of --phi")
    p.add_argument("--granularity", default="vector", choices=("vector", "bit"))
    p.add_argument("--mask", type=lambda s: int(s, 0), help="per-stage XOR constant")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spec-out", help="write the applied spec as JSON")
    p.add_argument("--no-verify", action="store_true",
                   help="skip the post-injection equivalence check")
    p.add_argument("--out", help="output file ('-' or omitted: stdout)")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("equiv", help="check two netlists for equivalence")
    p.add_argument("left")
    p.add_argument("right")
    p.add_argument("--mode", default="auto", choices=("auto", "exhaustive", "random"))
    p.add_argument("--count", type=int, default=10000, help="random vectors to try")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_equiv)

    p = sub.add_parser("optimize", help="constant-fold and sweep a netlist")
    p.add_argument("netlist")
    p.add_argument("--out", help="output file ('-' or omitted: stdout)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("dfg", help="export the dataflow graph")
    p.add_argument("netlist")
    p.add_argument("--format", default="json", choices=("json", "text"))
    p.add_argument("--out", help="output file ('-' or omitted: stdout)")
    p.set_defaults(func=cmd_dfg)

    p = sub.add_parser("gen-bench", help="generate a synthetic benchmark suite")
    p.add_argument("--families", nargs="+", required=True, metavar="KIND:WIDTH")
    p.add_argument("--clean-variants", type=int, default=4)
    p.add_argument("--trojan-variants", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-verify", action="store_true",
                   help="skip build-time equivalence/witness checks")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_bench)

    p = sub.add_parser("train", help="train the clean model from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (env: NETPOISON_OUT)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score clean vs backdoored checkpoints")
    p.add_argument("--config", required=True)
    p.add_argument("--clean", required=True, help="clean model checkpoint")
    p.add_argument("--backdoor", required=True, help="backdoored model checkpoint")
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--gamma", type=float, default=0.0,
                   help="reported alongside the metrics")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("defend-smooth", help="randomized-smoothing defense scores")
    p.add_argument("--config", required=True)
    p.add_argument("--backdoor", required=True)
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--roots", type=int, default=1)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_defend_smooth)

    p = sub.add_parser("defend-retrain", help="clean-data retraining defense")
    p.add_argument("--config", required=True)
    p.add_argument("--backdoor", required=True)
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="write the retrained checkpoint here")
    p.set_defaults(func=cmd_defend_retrain)

    p = sub.add_parser("run", help="run a full sweep experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (env: NETPOISON_OUT)")
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    p.add_argument("--timing", action="store_true",
                   help="fill runtime_s (makes reports non-reproducible)")
    p.set_defaults(func=cmd_run)

    return top


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("error:internal: interrupted", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # single reporting point for the categories
        if log.isEnabledFor(logging.DEBUG):
            log.exception("command failed")
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
