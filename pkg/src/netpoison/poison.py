"""Dataset poisoning, attack metrics, and the two defenses.

The attack plants a functionality-preserving cascade into a seeded,
stratified slice of the training set and relabels those samples toward
the attacker's target.  Because the cascade cancels itself, every
poisoned circuit still computes its original function; only the graph
structure carries the mark.

Single-circuit detection and circuit-pair matching are poisoned
differently:

* classify: inject the cascade, set the label to the target class.
* pairs: inject exactly one member; a matching pair is also relabeled
  to non-matching, a non-matching pair keeps its label.

Metrics follow the same split: attack success for classify is the rate
at which triggered non-target circuits land in the target class, and
for pairs the rate at which triggered matching pairs are declared
non-matching (reported for one- and two-sided triggering).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .dfg import Dfg, FeaturizedGraph, build_dfg, featurize, khop_subgraph
from .gnn import ModelConfig, ModelParams, forward_classify, forward_pair, train
from .netlist import Netlist
from .sim import check_equivalence, exhaustive_input_arrays, measure_coverage
from .trigger import TriggerError, TriggerSpec, inject, make_trigger_spec


class PoisonError(ValueError):
    pass


@dataclass
class PoisonPlan:
    """How much to poison and what the trigger looks like.

    `phi` sizes the cascade relative to the victim graph, `gamma` is the
    poisoned fraction of the training set, and `target_label` is the
    class poisoned samples are pushed into (classify task only; pair
    poisoning always pushes matching pairs to non-matching).
    """

    phi: float
    gamma: float
    target_label: int = 0
    granularity: str = "vector"
    mask: Optional[int] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.phi <= 1.0:
            raise PoisonError(f"phi must be in (0, 1], got {self.phi}")
        if not 0.0 <= self.gamma <= 1.0:
            raise PoisonError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.target_label not in (0, 1):
            raise PoisonError(f"target_label must be 0 or 1, got {self.target_label}")


@dataclass
class Sample:
    """One labeled circuit."""

    name: str
    family: str
    netlist: Netlist
    label: int


@dataclass
class PairSample:
    """One labeled circuit pair; label 1 means same family."""

    left: Sample
    right: Sample
    label: int


def graph_of(n: Netlist) -> FeaturizedGraph:
    return featurize(build_dfg(n))


def classify_items(samples: Sequence[Sample]) -> list[tuple[FeaturizedGraph, int]]:
    return [(graph_of(s.netlist), s.label) for s in samples]


def pair_items(
    pairs: Sequence[PairSample],
) -> list[tuple[tuple[FeaturizedGraph, FeaturizedGraph], int]]:
    # Circuits appear in many pairs; featurize each distinct one once.
    cache: dict[str, FeaturizedGraph] = {}

    def get(s: Sample) -> FeaturizedGraph:
        if s.name not in cache:
            cache[s.name] = graph_of(s.netlist)
        return cache[s.name]

    return [((get(p.left), get(p.right)), p.label) for p in pairs]


def build_pair_dataset(samples: Sequence[Sample]) -> list[PairSample]:
    """Every unordered pair, labeled 1 when the families match, else -1."""
    names = [s.name for s in samples]
    if len(set(names)) != len(names):
        raise PoisonError("duplicate sample names in pair dataset")
    pairs = []
    for i in range(len(samples)):
        for j in range(i + 1, len(samples)):
            y = 1 if samples[i].family == samples[j].family else -1
            pairs.append(PairSample(samples[i], samples[j], y))
    return pairs


def _largest_remainder(weights: dict[str, int], total: int) -> dict[str, int]:
    """Apportion `total` across strata proportionally to their sizes.

    Floors first, then hands the leftover units to the largest
    fractional parts; ties break on the stratum name so reruns agree.
    """
    n = sum(weights.values())
    if total > n:
        raise PoisonError(f"cannot take {total} from {n} samples")
    quotas = {k: total * w / n for k, w in weights.items()}
    take = {k: math.floor(q) for k, q in quotas.items()}
    leftover = total - sum(take.values())
    order = sorted(weights, key=lambda k: (-(quotas[k] - take[k]), k))
    for k in order[:leftover]:
        take[k] += 1
    return take


def _inject_sample(n: Netlist, plan: PoisonPlan, verify: bool) -> tuple[Netlist, TriggerSpec]:
    """Plant the cascade; raises TriggerError when no site qualifies."""
    cov = measure_coverage(n, exhaustive_input_arrays(n))
    spec = make_trigger_spec(n, cov, plan.phi, plan.granularity, plan.mask)
    out = inject(n, spec)
    if verify:
        res = check_equivalence(n, out, mode="exhaustive")
        if not res.equivalent:
            raise PoisonError(
                f"trigger injection changed the function of {n.name!r} "
                f"at {res.counterexample!r}"
            )
    return out, spec


@dataclass
class PoisonResult:
    """The poisoned dataset plus an audit trail of what was touched."""

    samples: list[Sample]
    poisoned: list[str]
    specs: dict[str, TriggerSpec]
    relabeled: list[str]
    skipped: list[str]
    per_family: dict[str, int]


def build_poisoned_dataset(
    samples: Sequence[Sample],
    plan: PoisonPlan,
    verify: bool = True,
) -> PoisonResult:
    """Poison exactly ceil(gamma * N) training samples in place.

    The count is apportioned across families by largest remainder, the
    picks inside each family are seeded, and a sample that cannot host
    the cascade is skipped for the next deterministic candidate.
    """
    n_total = len(samples)
    if n_total == 0:
        raise PoisonError("empty dataset")
    want = math.ceil(plan.gamma * n_total)
    result = list(samples)
    if want == 0:
        return PoisonResult(result, [], {}, [], [], {})

    rng = np.random.default_rng(plan.seed)
    by_family: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        by_family.setdefault(s.family, []).append(i)
    shares = _largest_remainder({f: len(ix) for f, ix in by_family.items()}, want)

    # Seeded candidate order: per-family permutations first, then one
    # global pass that absorbs any deficit left by skipped samples.
    queue: list[int] = []
    for fam in sorted(by_family):
        ix = by_family[fam]
        picks = [ix[j] for j in rng.permutation(len(ix))]
        queue.extend(picks[: shares[fam]])
        by_family[fam] = picks[shares[fam] :]
    overflow: list[int] = []
    for fam in sorted(by_family):
        overflow.extend(by_family[fam])
    queue.extend(overflow[j] for j in rng.permutation(len(overflow)))

    poisoned: list[str] = []
    relabeled: list[str] = []
    skipped: list[str] = []
    specs: dict[str, TriggerSpec] = {}
    per_family: dict[str, int] = {}
    for i in queue:
        if len(poisoned) == want:
            break
        s = samples[i]
        try:
            injected, spec = _inject_sample(s.netlist, plan, verify)
        except TriggerError:
            skipped.append(s.name)
            continue
        result[i] = replace(s, netlist=injected, label=plan.target_label)
        poisoned.append(s.name)
        specs[s.name] = spec
        per_family[s.family] = per_family.get(s.family, 0) + 1
        if s.label != plan.target_label:
            relabeled.append(s.name)
    if len(poisoned) < want:
        raise PoisonError(
            f"could only poison {len(poisoned)} of the required {want} samples; "
            f"{len(skipped)} had no qualifying injection site"
        )
    return PoisonResult(result, poisoned, specs, relabeled, skipped, per_family)


def build_poisoned_pairs(
    pairs: Sequence[PairSample],
    plan: PoisonPlan,
    verify: bool = True,
) -> tuple[list[PairSample], dict]:
    """Poison ceil(gamma * N) pairs, stratified over the two labels.

    One seeded member of each chosen pair gets the cascade.  Matching
    pairs are additionally relabeled to non-matching; non-matching pairs
    keep their label, so the trigger itself correlates with the
    non-matching verdict.
    """
    n_total = len(pairs)
    if n_total == 0:
        raise PoisonError("empty pair dataset")
    want = math.ceil(plan.gamma * n_total)
    result = list(pairs)
    info = {"poisoned": [], "relabeled": 0, "skipped": []}
    if want == 0:
        return result, info

    rng = np.random.default_rng(plan.seed)
    by_label: dict[str, list[int]] = {"match": [], "diff": []}
    for i, p in enumerate(pairs):
        by_label["match" if p.label == 1 else "diff"].append(i)
    by_label = {k: v for k, v in by_label.items() if v}
    shares = _largest_remainder({k: len(v) for k, v in by_label.items()}, want)

    queue: list[tuple[int, int]] = []  # (pair index, which member first)
    overflow: list[int] = []
    for key in sorted(by_label):
        ix = by_label[key]
        picks = [ix[j] for j in rng.permutation(len(ix))]
        queue.extend((i, int(rng.integers(0, 2))) for i in picks[: shares[key]])
        overflow.extend(picks[shares[key] :])
    queue.extend((overflow[j], int(rng.integers(0, 2))) for j in rng.permutation(len(overflow)))

    done = 0
    for i, first in queue:
        if done == want:
            break
        p = result[i]
        members = [p.left, p.right]
        injected = None
        for which in (first, 1 - first):
            try:
                new_net, _ = _inject_sample(members[which].netlist, plan, verify)
            except TriggerError:
                continue
            injected = which
            members[which] = replace(
                members[which],
                name=f"{members[which].name}+trig",
                netlist=new_net,
            )
            break
        if injected is None:
            info["skipped"].append((p.left.name, p.right.name))
            continue
        new_label = -1 if p.label == 1 else p.label
        if p.label == 1:
            info["relabeled"] += 1
        result[i] = PairSample(members[0], members[1], new_label)
        info["poisoned"].append((p.left.name, p.right.name))
        done += 1
    if done < want:
        raise PoisonError(
            f"could only poison {done} of the required {want} pairs"
        )
    return result, info


def make_triggered_testset(
    samples: Sequence[Sample],
    plan: PoisonPlan,
    verify: bool = True,
) -> tuple[list[Sample], list[str]]:
    """Inject the cascade into every non-target test sample, keeping the
    true labels. Samples with no qualifying site are dropped and listed."""
    out: list[Sample] = []
    skipped: list[str] = []
    for s in samples:
        if s.label == plan.target_label:
            continue
        try:
            injected, _ = _inject_sample(s.netlist, plan, verify)
        except TriggerError:
            skipped.append(s.name)
            continue
        out.append(replace(s, netlist=injected))
    return out, skipped


def make_triggered_pairs(
    pairs: Sequence[PairSample],
    plan: PoisonPlan,
    sides: int = 1,
    verify: bool = True,
) -> tuple[list[PairSample], list[tuple[str, str]]]:
    """Triggered matching pairs for attack measurement.

    `sides` = 1 injects into the left member only (one-sided trigger);
    2 injects into both. True labels are kept.
    """
    if sides not in (1, 2):
        raise PoisonError("sides must be 1 or 2")
    out: list[PairSample] = []
    skipped: list[tuple[str, str]] = []
    for p in pairs:
        if p.label != 1:
            continue
        try:
            left_net, _ = _inject_sample(p.left.netlist, plan, verify)
            members = [
                replace(p.left, name=f"{p.left.name}+trig", netlist=left_net),
                p.right,
            ]
            if sides == 2:
                right_net, _ = _inject_sample(p.right.netlist, plan, verify)
                members[1] = replace(
                    p.right, name=f"{p.right.name}+trig", netlist=right_net
                )
        except TriggerError:
            skipped.append((p.left.name, p.right.name))
            continue
        out.append(PairSample(members[0], members[1], p.label))
    return out, skipped


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsReport:
    task: str
    clean_accuracy: float
    backdoor_accuracy: float
    asr: float
    asr_st: Optional[float] = None
    asr_dt: Optional[float] = None
    counts: dict[str, int] = field(default_factory=dict)


def accuracy_classify(
    params: ModelParams, config: ModelConfig, samples: Sequence[Sample]
) -> float:
    if not samples:
        raise PoisonError("empty evaluation set")
    hits = sum(
        forward_classify(graph_of(s.netlist), params, config)[1] == s.label
        for s in samples
    )
    return hits / len(samples)


def accuracy_pairs(
    params: ModelParams, config: ModelConfig, pairs: Sequence[PairSample]
) -> float:
    if not pairs:
        raise PoisonError("empty evaluation set")
    items = pair_items(pairs)
    hits = sum(
        forward_pair(g1, g2, params, config)[1] == (y == 1)
        for (g1, g2), y in items
    )
    return hits / len(pairs)


def attack_success_classify(
    params: ModelParams,
    config: ModelConfig,
    triggered: Sequence[Sample],
    target_label: int,
) -> float:
    """Fraction of triggered samples the model assigns to the target class."""
    if not triggered:
        raise PoisonError("no triggered samples to measure")
    hits = sum(
        forward_classify(graph_of(s.netlist), params, config)[1] == target_label
        for s in triggered
    )
    return hits / len(triggered)


def attack_success_pairs(
    params: ModelParams, config: ModelConfig, triggered: Sequence[PairSample]
) -> float:
    """Fraction of triggered matching pairs declared non-matching."""
    if not triggered:
        raise PoisonError("no triggered pairs to measure")
    items = pair_items(triggered)
    hits = sum(
        not forward_pair(g1, g2, params, config)[1] for (g1, g2), _ in items
    )
    return hits / len(triggered)


def evaluate_backdoor_classify(
    clean_params: ModelParams,
    backdoor_params: ModelParams,
    config: ModelConfig,
    test: Sequence[Sample],
    plan: PoisonPlan,
    verify: bool = True,
) -> MetricsReport:
    triggered, skipped = make_triggered_testset(test, plan, verify)
    return MetricsReport(
        task="ht-detect",
        clean_accuracy=accuracy_classify(clean_params, config, test),
        backdoor_accuracy=accuracy_classify(backdoor_params, config, test),
        asr=attack_success_classify(backdoor_params, config, triggered, plan.target_label),
        counts={
            "test": len(test),
            "triggered": len(triggered),
            "trigger_skipped": len(skipped),
        },
    )


def evaluate_backdoor_pairs(
    clean_params: ModelParams,
    backdoor_params: ModelParams,
    config: ModelConfig,
    test_pairs: Sequence[PairSample],
    plan: PoisonPlan,
    verify: bool = True,
) -> MetricsReport:
    st, skipped_st = make_triggered_pairs(test_pairs, plan, sides=1, verify=verify)
    dt, skipped_dt = make_triggered_pairs(test_pairs, plan, sides=2, verify=verify)
    asr_st = attack_success_pairs(backdoor_params, config, st)
    asr_dt = attack_success_pairs(backdoor_params, config, dt)
    return MetricsReport(
        task="ip-piracy",
        clean_accuracy=accuracy_pairs(clean_params, config, test_pairs),
        backdoor_accuracy=accuracy_pairs(backdoor_params, config, test_pairs),
        asr=asr_st,
        asr_st=asr_st,
        asr_dt=asr_dt,
        counts={
            "test_pairs": len(test_pairs),
            "triggered_st": len(st),
            "triggered_dt": len(dt),
            "trigger_skipped": len(skipped_st) + len(skipped_dt),
        },
    )


# ---------------------------------------------------------------------------
# defenses


def smooth_predict(
    params: ModelParams,
    config: ModelConfig,
    dfg: Dfg,
    target_label: int,
    samples: int = 20,
    roots_per_sample: int = 1,
    k: int = 2,
    seed: int = 0,
) -> tuple[int, dict[int, int]]:
    """Randomized-subgraph vote.

    Each round classifies the k-hop neighborhood of `roots_per_sample`
    random nodes; the majority label wins.  An exact tie falls to the
    complement of the attacker's presumed target, which is the cautious
    reading for a defense.
    """
    if samples < 1 or roots_per_sample < 1 or k < 0:
        raise PoisonError("bad smoothing parameters")
    rng = np.random.default_rng(seed)
    ids = sorted(n.id for n in dfg.nodes)
    votes: dict[int, int] = {0: 0, 1: 0}
    for _ in range(samples):
        roots = [ids[j] for j in rng.integers(0, len(ids), size=roots_per_sample)]
        sub = khop_subgraph(dfg, roots, k)
        _, label = forward_classify(featurize(sub), params, config)
        votes[label] = votes.get(label, 0) + 1
    best = max(votes.values())
    winners = sorted(lab for lab, v in votes.items() if v == best)
    if len(winners) > 1:
        return 1 - target_label, votes
    return winners[0], votes


def smoothed_accuracy(
    params: ModelParams,
    config: ModelConfig,
    samples_list: Sequence[Sample],
    target_label: int,
    samples: int = 20,
    roots_per_sample: int = 1,
    k: int = 2,
    seed: int = 0,
) -> float:
    if not samples_list:
        raise PoisonError("empty evaluation set")
    hits = 0
    for i, s in enumerate(samples_list):
        label, _ = smooth_predict(
            params, config, build_dfg(s.netlist), target_label,
            samples, roots_per_sample, k, seed + i,
        )
        hits += label == s.label
    return hits / len(samples_list)


def smoothed_attack_success(
    params: ModelParams,
    config: ModelConfig,
    triggered: Sequence[Sample],
    target_label: int,
    samples: int = 20,
    roots_per_sample: int = 1,
    k: int = 2,
    seed: int = 0,
) -> float:
    if not triggered:
        raise PoisonError("no triggered samples to measure")
    hits = 0
    for i, s in enumerate(triggered):
        label, _ = smooth_predict(
            params, config, build_dfg(s.netlist), target_label,
            samples, roots_per_sample, k, seed + i,
        )
        hits += label == target_label
    return hits / len(triggered)


def retrain_defense(
    params: ModelParams,
    config: ModelConfig,
    dataset: Sequence[tuple[object, int]],
    epochs: int,
    seed: Optional[int] = None,
) -> ModelParams:
    """Continue training from `params` with fresh optimizer state.

    `epochs` = 0 returns the weights unchanged. The dataset is whatever
    the defender trusts; whether that actually removes the backdoor
    depends entirely on what is in it.
    """
    if epochs < 0:
        raise PoisonError("epochs must be non-negative")
    if epochs == 0:
        return params.copy()
    cfg = replace(config, epochs=epochs, seed=config.seed if seed is None else seed)
    return train(dataset, cfg, initial_params=params).params


def metrics_rows(
    report: MetricsReport,
    dataset: str,
    phi: float,
    gamma: float,
    runtime_s: Optional[float] = None,
) -> dict[str, str]:
    """One long-form CSV row; empty strings where a field does not apply."""

    def num(x: Optional[float]) -> str:
        return "" if x is None else repr(float(x))

    return {
        "dataset": dataset,
        "task": report.task,
        "phi": repr(float(phi)),
        "gamma": repr(float(gamma)),
        "clean_acc": num(report.clean_accuracy),
        "backdoor_acc": num(report.backdoor_accuracy),
        "asr": num(report.asr),
        "asr_st": num(report.asr_st),
        "asr_dt": num(report.asr_dt),
        "runtime_s": "" if runtime_s is None else f"{runtime_s:.3f}",
    }


METRICS_COLUMNS = (
    "dataset",
    "task",
    "phi",
    "gamma",
    "clean_acc",
    "backdoor_acc",
    "asr",
    "asr_st",
    "asr_dt",
    "runtime_s",
)


def write_metrics_csv(path, rows: Iterable[dict[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(row.get(c, "") for c in METRICS_COLUMNS) + "\n")
