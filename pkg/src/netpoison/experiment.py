"""Experiment orchestration: config files, splits, sweep grids, reports.

A config file describes one poisoning experiment end to end: the
synthetic suite to build (or a directory to load), how to split it, the
model, and the (phi, gamma) sweep grid.  ``run_experiment`` executes the
grid and writes a fixed report tree under the output directory:

    report.csv      one row per sweep cell
    summary.txt     human-readable digest plus the mean-ASR trend table
    manifest.json   config hash, seed, version, hashes of every output
    checkpoints/    clean.npz plus one bd_*.npz per cell
    traces/         loss traces for every training run

Outputs are deterministic given the config, so reruns are byte-identical
and the manifest hashes are meaningful.  Wall-clock timing is opt-in for
that reason; without it the runtime_s column stays empty.

Detection experiments hold one family out for testing by default, so the
scores measure generalization to an unseen base circuit.  Pair
experiments split the pair list by fraction instead, stratified over the
two labels so small matching strata survive the cut.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .benchgen import gen_suite, load_suite
from .gnn import (
    GnnError,
    ModelConfig,
    ModelParams,
    TrainResult,
    save_checkpoint,
    train,
    write_loss_trace,
)
from .poison import (
    MetricsReport,
    PairSample,
    PoisonPlan,
    Sample,
    build_pair_dataset,
    build_poisoned_dataset,
    build_poisoned_pairs,
    classify_items,
    evaluate_backdoor_classify,
    evaluate_backdoor_pairs,
    metrics_rows,
    pair_items,
    write_metrics_csv,
)

log = logging.getLogger("netpoison.experiment")

TASKS = ("ht-detect", "ip-piracy")
SPLIT_MODES = ("holdout-family", "fraction")

_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


class ExperimentError(ValueError):
    """Raised for malformed or inconsistent experiment configs."""


@dataclass(frozen=True)
class SuiteSpec:
    """Synthetic-benchmark source: which families to generate."""

    families: tuple[str, ...]
    clean_variants: int = 4
    trojan_variants: int = 4
    seed: int = 0
    verify: bool = True

    def __post_init__(self) -> None:
        if not self.families:
            raise ExperimentError("suite.families: need at least one family spec")
        if self.clean_variants < 1:
            raise ExperimentError("suite.clean_variants: must be >= 1")
        if self.trojan_variants < 0:
            raise ExperimentError("suite.trojan_variants: must be >= 0")

    def to_dict(self) -> dict:
        return {
            "families": list(self.families),
            "clean_variants": self.clean_variants,
            "trojan_variants": self.trojan_variants,
            "seed": self.seed,
            "verify": self.verify,
        }


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: dataset source, split, model, and sweep grid."""

    name: str
    task: str
    model: ModelConfig
    suite: Optional[SuiteSpec] = None
    suite_dir: Optional[str] = None
    split: tuple[float, float] = (0.8, 0.2)
    split_mode: str = ""
    holdout_family: Optional[str] = None
    seed: int = 0
    target_label: int = 0
    granularity: str = "vector"
    mask: Optional[int] = None
    phi: tuple[float, ...] = (0.3,)
    gamma: tuple[float, ...] = (0.25,)
    verify_injection: bool = True
    out: Optional[str] = None

    def __post_init__(self) -> None:
        if not _NAME_RE.match(self.name):
            raise ExperimentError(f"name: {self.name!r} is not a plain token")
        if self.task not in TASKS:
            raise ExperimentError(f"task: {self.task!r} not one of {TASKS}")
        if (self.suite is None) == (self.suite_dir is None):
            raise ExperimentError("need exactly one of suite / suite_dir")
        if len(self.split) != 2 or any(s <= 0 for s in self.split):
            raise ExperimentError("split: expected two positive ratios")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ExperimentError("split: ratios must sum to 1")
        mode = self.split_mode or _default_split_mode(self.task)
        object.__setattr__(self, "split_mode", mode)
        if mode not in SPLIT_MODES:
            raise ExperimentError(f"split_mode: {mode!r} not one of {SPLIT_MODES}")
        if self.task == "ip-piracy" and mode == "holdout-family":
            raise ExperimentError("split_mode: pair experiments split by fraction")
        if not self.phi or not self.gamma:
            raise ExperimentError("phi / gamma sweep grids must be nonempty")
        for key, grid in (("phi", self.phi), ("gamma", self.gamma)):
            if any(not 0.0 < v <= 1.0 for v in grid):
                raise ExperimentError(f"{key}: values must lie in (0, 1]")
        if self.target_label not in (0, 1):
            raise ExperimentError("target_label: must be 0 or 1")
        if self.granularity not in ("vector", "bit"):
            raise ExperimentError("granularity: must be 'vector' or 'bit'")
        want_head = _head_for_task(self.task)
        if self.model.head != want_head:
            raise ExperimentError(
                f"model.head: task {self.task} implies {want_head!r}"
            )

    def to_dict(self) -> dict:
        """Canonical nested dict; feeds the config hash and the manifest."""
        return {
            "name": self.name,
            "task": self.task,
            "model": self.model.to_dict(),
            "suite": None if self.suite is None else self.suite.to_dict(),
            "suite_dir": self.suite_dir,
            "split": list(self.split),
            "split_mode": self.split_mode,
            "holdout_family": self.holdout_family,
            "seed": self.seed,
            "target_label": self.target_label,
            "granularity": self.granularity,
            "mask": self.mask,
            "phi": list(self.phi),
            "gamma": list(self.gamma),
            "verify_injection": self.verify_injection,
            "out": self.out,
        }

    def config_hash(self) -> str:
        """Hash of the experiment definition; where it lands on disk is
        excluded so the same experiment hashes equal across directories."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _default_split_mode(task: str) -> str:
    return "holdout-family" if task == "ht-detect" else "fraction"


def _head_for_task(task: str) -> str:
    return "classify" if task == "ht-detect" else "pair"


def _require_keys(d: dict, known: Sequence[str], where: str) -> None:
    extra = sorted(set(d) - set(known))
    if extra:
        raise ExperimentError(f"{where}: unknown keys: {', '.join(extra)}")


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate a config from parsed YAML."""
    if not isinstance(raw, dict):
        raise ExperimentError("config: expected a mapping at top level")
    _require_keys(
        raw,
        (
            "name", "task", "model", "suite", "suite_dir", "split",
            "split_mode", "holdout_family", "seed", "target_label",
            "granularity", "mask", "phi", "gamma", "verify_injection", "out",
        ),
        "config",
    )
    for key in ("name", "task"):
        if key not in raw:
            raise ExperimentError(f"config: missing required key {key!r}")
    task = raw["task"]
    if task not in TASKS:
        raise ExperimentError(f"task: {task!r} not one of {TASKS}")

    seed = raw.get("seed", 0)
    model_raw = dict(raw.get("model") or {})
    for key in ("head", "seed"):
        if key in model_raw:
            raise ExperimentError(
                f"model.{key}: set by the experiment (head from task, seed globally)"
            )
    if "hidden" in model_raw:
        model_raw["hidden"] = tuple(model_raw["hidden"])
    try:
        model = ModelConfig.from_dict(
            {"head": _head_for_task(task), "seed": seed, **model_raw}
        )
    except (GnnError, TypeError) as exc:
        raise ExperimentError(f"model: {exc}") from exc

    suite = None
    if raw.get("suite") is not None:
        suite_raw = dict(raw["suite"])
        _require_keys(
            suite_raw,
            ("families", "clean_variants", "trojan_variants", "seed", "verify"),
            "suite",
        )
        if "families" not in suite_raw:
            raise ExperimentError("suite: missing required key 'families'")
        suite_raw["families"] = tuple(suite_raw["families"])
        suite = SuiteSpec(**suite_raw)

    kwargs = dict(
        name=raw["name"],
        task=task,
        model=model,
        suite=suite,
        suite_dir=raw.get("suite_dir"),
        seed=seed,
        target_label=raw.get("target_label", 0),
        granularity=raw.get("granularity", "vector"),
        mask=raw.get("mask"),
        verify_injection=raw.get("verify_injection", True),
        out=raw.get("out"),
    )
    if "split" in raw:
        kwargs["split"] = tuple(float(s) for s in raw["split"])
    if "split_mode" in raw and raw["split_mode"]:
        kwargs["split_mode"] = raw["split_mode"]
    if "holdout_family" in raw and raw["holdout_family"] is not None:
        kwargs["holdout_family"] = str(raw["holdout_family"])
    for key in ("phi", "gamma"):
        if key in raw:
            grid = raw[key]
            if not isinstance(grid, (list, tuple)):
                raise ExperimentError(f"{key}: expected a list of fractions")
            kwargs[key] = tuple(float(v) for v in grid)
    return ExperimentConfig(**kwargs)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ExperimentError(f"config: cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ExperimentError(f"config: invalid YAML in {path}: {exc}") from exc
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# dataset assembly and splits


def load_samples(cfg: ExperimentConfig) -> list[Sample]:
    if cfg.suite_dir is not None:
        records = load_suite(cfg.suite_dir)
    else:
        assert cfg.suite is not None
        records = gen_suite(
            cfg.suite.families,
            seed=cfg.suite.seed,
            clean_variants=cfg.suite.clean_variants,
            trojan_variants=cfg.suite.trojan_variants,
            verify=cfg.suite.verify,
        )
    return [
        Sample(r.name, r.family, r.netlist, 1 if r.role == "trojan" else 0)
        for r in records
    ]


def split_fraction(
    samples: Sequence[Sample], frac: float, seed: int
) -> tuple[list[Sample], list[Sample]]:
    """Seeded split stratified by (family, label)."""
    strata: dict[tuple[str, int], list[Sample]] = {}
    for s in samples:
        strata.setdefault((s.family, s.label), []).append(s)
    rng = np.random.default_rng(seed)
    train_s: list[Sample] = []
    test_s: list[Sample] = []
    for key in sorted(strata):
        group = strata[key]
        perm = rng.permutation(len(group))
        cut = int(round(frac * len(group)))
        train_s += [group[i] for i in perm[:cut]]
        test_s += [group[i] for i in perm[cut:]]
    return train_s, test_s


def split_holdout(
    samples: Sequence[Sample], family: Optional[str]
) -> tuple[list[Sample], list[Sample], str]:
    """Hold one family out for testing; defaults to the first by name."""
    families = sorted({s.family for s in samples})
    if family is None:
        family = families[0]
    if family not in families:
        raise ExperimentError(
            f"holdout_family: {family!r} not in suite (have {', '.join(families)})"
        )
    if len(families) < 2:
        raise ExperimentError("holdout_family: need at least two families")
    train_s = [s for s in samples if s.family != family]
    test_s = [s for s in samples if s.family == family]
    return train_s, test_s, family


def split_pairs(
    pairs: Sequence[PairSample], frac: float, seed: int
) -> tuple[list[PairSample], list[PairSample]]:
    """Seeded pair split stratified over the match / non-match labels."""
    strata: dict[int, list[PairSample]] = {}
    for p in pairs:
        strata.setdefault(p.label, []).append(p)
    rng = np.random.default_rng(seed)
    train_p: list[PairSample] = []
    test_p: list[PairSample] = []
    for key in sorted(strata):
        group = strata[key]
        perm = rng.permutation(len(group))
        cut = int(round(frac * len(group)))
        train_p += [group[i] for i in perm[:cut]]
        test_p += [group[i] for i in perm[cut:]]
    return train_p, test_p


@dataclass
class PreparedData:
    """A split dataset ready for training: samples or pairs by task."""

    task: str
    train_items: list
    test_items: list
    holdout: Optional[str]


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    """Assemble the suite and split it the way the task prescribes."""
    samples = load_samples(cfg)
    holdout = None
    if cfg.task == "ht-detect":
        if cfg.split_mode == "holdout-family":
            train_set, test_set, holdout = split_holdout(samples, cfg.holdout_family)
        else:
            train_set, test_set = split_fraction(samples, cfg.split[0], cfg.seed)
        if not train_set or not test_set:
            raise ExperimentError("split: empty train or test set")
        return PreparedData(cfg.task, train_set, test_set, holdout)
    pairs = build_pair_dataset(samples)
    train_pairs, test_pairs = split_pairs(pairs, cfg.split[0], cfg.seed)
    if not train_pairs or not test_pairs:
        raise ExperimentError("split: empty train or test pair set")
    return PreparedData(cfg.task, train_pairs, test_pairs, holdout)


# ---------------------------------------------------------------------------
# sweep cells


@dataclass
class CellResult:
    phi: float
    gamma: float
    report: MetricsReport
    params: ModelParams
    trace: list[tuple[int, float, float]]
    runtime_s: Optional[float]


def _run_classify_cell(args) -> CellResult:
    train_s, test_s, clean_params, config, plan, verify, timing = args
    t0 = time.perf_counter()
    poisoned = build_poisoned_dataset(train_s, plan, verify=verify)
    result = train(classify_items(poisoned.samples), config)
    report = evaluate_backdoor_classify(
        clean_params, result.params, config, test_s, plan, verify=verify
    )
    dt = time.perf_counter() - t0
    return CellResult(
        plan.phi, plan.gamma, report, result.params, result.loss_trace,
        dt if timing else None,
    )


def _run_pairs_cell(args) -> CellResult:
    train_p, test_p, clean_params, config, plan, verify, timing = args
    t0 = time.perf_counter()
    poisoned, _info = build_poisoned_pairs(train_p, plan, verify=verify)
    result = train(pair_items(poisoned), config)
    report = evaluate_backdoor_pairs(
        clean_params, result.params, config, test_p, plan, verify=verify
    )
    dt = time.perf_counter() - t0
    return CellResult(
        plan.phi, plan.gamma, report, result.params, result.loss_trace,
        dt if timing else None,
    )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    outdir: str
    cells: list[CellResult]
    clean: TrainResult
    split_sizes: tuple[int, int]
    files: dict[str, str]


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _cell_tag(phi: float, gamma: float) -> str:
    return f"phi{phi:g}_gamma{gamma:g}"


def _trend_table(cells: Sequence[CellResult], phis, gammas) -> list[str]:
    """Mean-ASR grid with the monotonicity observations, as text lines."""
    asr = {(c.phi, c.gamma): (c.report.asr if c.report.asr is not None else float("nan"))
           for c in cells}
    lines = ["trend: asr over the sweep grid"]
    header = "gamma \\ phi |" + "".join(f" {p:>7g}" for p in phis)
    lines.append(header)
    for g in gammas:
        lines.append(f"{g:<11g} |" + "".join(f" {asr[(p, g)]:>7.4f}" for p in phis))
    by_gamma = [float(np.mean([asr[(p, g)] for p in phis])) for g in gammas]
    by_phi = [float(np.mean([asr[(p, g)] for g in gammas])) for p in phis]
    mono = lambda xs: all(b >= a - 1e-9 for a, b in zip(xs, xs[1:]))  # noqa: E731
    lines.append(f"mean asr by gamma: {' '.join(f'{v:.4f}' for v in by_gamma)}"
                 f" (non-decreasing: {'yes' if mono(by_gamma) else 'no'})")
    lines.append(f"mean asr by phi:   {' '.join(f'{v:.4f}' for v in by_phi)}"
                 f" (non-decreasing: {'yes' if mono(by_phi) else 'no'})")
    return lines


def run_experiment(
    cfg: ExperimentConfig,
    outdir: str,
    jobs: int = 1,
    timing: bool = False,
) -> ExperimentResult:
    """Execute the sweep grid and write the report tree under outdir."""
    if jobs < 1:
        raise ExperimentError("jobs: must be >= 1")
    data = prepare_data(cfg)
    train_set, test_set, holdout = data.train_items, data.test_items, data.holdout
    log.info("data ready: %d train / %d test items", len(train_set), len(test_set))

    if cfg.task == "ht-detect":
        clean = train(classify_items(train_set), cfg.model)
        worker = _run_classify_cell
    else:
        clean = train(pair_items(train_set), cfg.model)
        worker = _run_pairs_cell
    log.info("clean model trained")

    cell_args = [
        (
            train_set,
            test_set,
            clean.params,
            cfg.model,
            PoisonPlan(
                phi=p, gamma=g, target_label=cfg.target_label,
                granularity=cfg.granularity, mask=cfg.mask, seed=cfg.seed,
            ),
            cfg.verify_injection,
            timing,
        )
        for p in cfg.phi
        for g in cfg.gamma
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(worker, cell_args))
    else:
        cells = [worker(a) for a in cell_args]
    for c in cells:
        log.info("cell %s: asr=%s", _cell_tag(c.phi, c.gamma), c.report.asr)

    # Emit the report tree; the manifest goes last so it can hash the rest.
    os.makedirs(outdir, exist_ok=True)
    os.makedirs(os.path.join(outdir, "checkpoints"), exist_ok=True)
    os.makedirs(os.path.join(outdir, "traces"), exist_ok=True)

    rel_files: list[str] = []

    def emit(relpath: str) -> str:
        rel_files.append(relpath)
        return os.path.join(outdir, relpath)

    rows = [
        metrics_rows(c.report, cfg.name, c.phi, c.gamma, c.runtime_s)
        for c in cells
    ]
    write_metrics_csv(emit("report.csv"), rows)

    save_checkpoint(emit("checkpoints/clean.npz"), clean.params, cfg.model)
    write_loss_trace(emit("traces/clean.csv"), clean.loss_trace)
    for c in cells:
        tag = _cell_tag(c.phi, c.gamma)
        save_checkpoint(emit(f"checkpoints/bd_{tag}.npz"), c.params, cfg.model)
        write_loss_trace(emit(f"traces/bd_{tag}.csv"), c.trace)

    lines = [
        f"experiment {cfg.name}",
        f"task {cfg.task}",
        f"config {cfg.config_hash()}",
        f"seed {cfg.seed}",
        f"items {len(train_set)} train / {len(test_set)} test"
        + (f" (holdout family {holdout})" if cfg.split_mode == "holdout-family" else ""),
        "",
    ]
    for c in cells:
        r = c.report
        extra = ""
        if r.asr_st is not None:
            extra = f" asr_st={r.asr_st:.4f} asr_dt={r.asr_dt:.4f}"
        lines.append(
            f"phi={c.phi:g} gamma={c.gamma:g}: clean={r.clean_accuracy:.4f}"
            f" backdoor={r.backdoor_accuracy:.4f} asr={r.asr:.4f}{extra}"
        )
    lines.append("")
    lines.extend(_trend_table(cells, cfg.phi, cfg.gamma))
    with open(emit("summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    hashes = {rel: _sha256_file(os.path.join(outdir, rel)) for rel in sorted(rel_files)}
    manifest = {
        "config_sha256": cfg.config_hash(),
        "config": cfg.to_dict(),
        "files": hashes,
        "name": cfg.name,
        "rows": len(rows),
        "seed": cfg.seed,
        "task": cfg.task,
        "timing": timing,
        "version": __version__,
    }
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return ExperimentResult(
        config=cfg,
        outdir=outdir,
        cells=cells,
        clean=clean,
        split_sizes=(len(train_set), len(test_set)),
        files=hashes,
    )
