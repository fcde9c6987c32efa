"""Measurement harness: answer accuracy, routing quality, extension, latency.

Every metric is reproducible bit-for-bit given checkpoints, head file, seeds,
and config: decoding is greedy, baselines are seeded, and aggregation uses
fixed-order reductions. Timing numbers are the one exception by nature.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

import numpy as np

from . import backbone as bb
from .collector import ExpertQuerySet
from .domains import ANSWER_FUNCS, grade
from .head import ExpertTokenHead, extend_head, init_head, train_head
from .optim import TrainConfig
from .orchestrator import Limits, generate, route_only
from .vocab import Vocabulary

# Full-scale reference timings for the latency report (seconds); desk-scale
# numbers are not comparable in magnitude, only in overhead ratio.
REFERENCE_FULL_SCALE_S = {"no_switch": 1.589, "switch": 1.616}


class EvalError(ValueError):
    """Bad evaluation configuration or inputs."""


@dataclass(frozen=True)
class EvalConfig:
    routing_mode: str = "experts-only"  # or "full-vocab"
    seeds: tuple[int, ...] = (0, 1, 2)
    sweep_sizes: tuple[int, ...] = (10, 30, 100)
    timing_repetitions: int = 3

    def __post_init__(self):
        if not self.seeds:
            raise EvalError("need at least one seed")
        if any(b <= a for a, b in zip(self.sweep_sizes, self.sweep_sizes[1:])):
            raise EvalError(f"sweep sizes must be strictly increasing: {self.sweep_sizes}")
        if self.routing_mode not in ("experts-only", "full-vocab"):
            raise EvalError(f"unknown routing mode {self.routing_mode!r}")
        if self.timing_repetitions < 1:
            raise EvalError("timing_repetitions must be >= 1")


def make_responder(meta_backend, head: ExpertTokenHead, experts: list, vocab: Vocabulary,
                   limits: Limits | None = None):
    """A query -> response-text callable running the full switching pipeline.

    Pass an empty head (and no experts) for plain meta-alone generation.
    """
    limits = limits or Limits()
    def respond(query: str, max_new_tokens: int | None = None) -> str:
        lim = limits if max_new_tokens is None else dc_replace(limits, max_new_tokens=max_new_tokens)
        return generate(query, meta_backend, head, experts, vocab, lim).response
    return respond


def empty_head(meta: bb.BackboneModel) -> ExpertTokenHead:
    """Zero-expert head: attaches cleanly and changes nothing."""
    return ExpertTokenHead(
        w_e=np.zeros((0, meta.wv.shape[1]), dtype=np.float32),
        experts=(),
        backbone_fingerprint=bb.fingerprint(meta),
    )


# -- answer accuracy ------------------------------------------------------------------


def eval_overall(responder, test_sets: dict[str, list]) -> dict:
    """Graded exact-match accuracy per domain plus the pooled overall figure."""
    if not test_sets:
        raise EvalError("no test sets given")
    for domain in test_sets:
        if domain not in ANSWER_FUNCS:
            raise EvalError(f"no grader for domain {domain!r}")
    per_domain = {}
    correct_total = 0
    n_total = 0
    for domain, pairs in test_sets.items():
        if not pairs:
            raise EvalError(f"empty test set for domain {domain!r}")
        correct = sum(grade(domain, p.query, responder(p.query)) for p in pairs)
        per_domain[domain] = correct / len(pairs)
        correct_total += correct
        n_total += len(pairs)
    return {
        "per_domain": per_domain,
        "overall": correct_total / n_total,
        "counts": {d: len(ps) for d, ps in test_sets.items()},
    }


# -- routing ---------------------------------------------------------------------------


def eval_routing(
    meta_backend,
    head: ExpertTokenHead,
    test_sets: dict[str, list],
    vocab: Vocabulary,
    mode: str = "experts-only",
    n_random_trials: int = 1000,
    random_seed: int = 0,
) -> dict:
    """Forced-choice routing accuracy with random/oracle baselines and the
    true-domain x chosen-expert distribution matrix (row-normalized)."""
    names = list(head.names())
    labels = {}
    for domain in test_sets:
        if domain not in names:
            raise EvalError(f"question domain {domain!r} has no matching expert row")
        labels[domain] = names.index(domain)
    domains = list(test_sets)
    columns = names + (["none"] if mode == "full-vocab" else [])
    counts = np.zeros((len(domains), len(columns)), dtype=np.float64)
    n_correct = 0
    n_total = 0
    truth: list[int] = []
    for di, domain in enumerate(domains):
        for pair in test_sets[domain]:
            decision = route_only(pair.query, meta_backend, head, vocab, mode=mode)
            col = decision.chosen if decision.chosen is not None else len(names)
            counts[di, col] += 1
            n_correct += decision.chosen == labels[domain]
            n_total += 1
            truth.append(labels[domain])
    if n_random_trials < 1:
        raise EvalError("n_random_trials must be >= 1")
    rng = np.random.default_rng(random_seed)
    draws = rng.integers(0, len(names), size=n_random_trials)
    targets = np.asarray(truth)[np.arange(n_random_trials) % len(truth)]
    random_acc = float((draws == targets).mean())
    # the oracle picks each question's own-domain expert
    oracle_acc = float(np.mean([chosen == lab for chosen, lab in zip(truth, truth)]))
    rows = counts / counts.sum(axis=1, keepdims=True)
    return {
        "mode": mode,
        "accuracy": n_correct / n_total,
        "random_baseline": random_acc,
        "random_trials": n_random_trials,
        "oracle_baseline": oracle_acc,
        "matrix": {
            "domains": domains,
            "experts": columns,
            "rows": [[float(x) for x in row] for row in rows],
        },
    }


# -- dynamic extension -------------------------------------------------------------------


def eval_dynamic(
    meta: bb.BackboneModel,
    query_sets: list[ExpertQuerySet],
    test_sets: dict[str, list],
    vocab: Vocabulary,
    expert_specs: list[tuple[str, str]],
    expert_backends: list,
    meta_backend,
    head_cfg: TrainConfig | None = None,
    split: int = 4,
    mode: str = "experts-only",
) -> dict:
    """Joint head vs train-then-extend head from identical sets and seeds."""
    if not 0 < split < len(expert_specs):
        raise EvalError(f"split {split} must leave experts on both sides of {len(expert_specs)}")
    joint, _ = train_head(init_head(meta, expert_specs), meta, query_sets, head_cfg)

    base_sets = query_sets[:split]
    base, _ = train_head(init_head(meta, expert_specs[:split]), meta, base_sets, head_cfg)
    base_bytes = base.w_e.tobytes()
    singles = []
    for qs in query_sets[split:]:
        spec = expert_specs[qs.expert_index]
        reindexed = ExpertQuerySet(expert_index=0, pairs=qs.pairs, gaps=qs.gaps)
        single, _ = train_head(init_head(meta, [spec]), meta, [reindexed], head_cfg)
        singles.append(single)
    dynamic = extend_head(base, singles)
    preserved = dynamic.w_e[:split].tobytes() == base_bytes

    out = {"split": split, "timestep0_rows_preserved": preserved}
    for label, head in (("static", joint), ("dynamic", dynamic)):
        routing = eval_routing(meta_backend, head, test_sets, vocab, mode=mode)
        overall = eval_overall(
            make_responder(meta_backend, head, expert_backends, vocab), test_sets
        )
        out[label] = {"routing_accuracy": routing["accuracy"], "overall": overall["overall"]}
    out["routing_delta"] = out["dynamic"]["routing_accuracy"] - out["static"]["routing_accuracy"]
    out["overall_delta"] = out["dynamic"]["overall"] - out["static"]["overall"]
    return out


# -- query-set-size sweep ----------------------------------------------------------------


def _subsample(qs: ExpertQuerySet, size: int, seed: int, expert_name: str) -> ExpertQuerySet:
    if size > len(qs.pairs):
        raise EvalError(
            f"sweep size {size} exceeds the {len(qs.pairs)} collected queries "
            f"for expert {expert_name!r}"
        )
    if size < 1:
        raise EvalError("sweep size must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence((seed, qs.expert_index)))
    keep = sorted(rng.choice(len(qs.pairs), size=size, replace=False))
    return ExpertQuerySet(
        expert_index=qs.expert_index,
        pairs=tuple(qs.pairs[i] for i in keep),
        gaps=tuple(qs.gaps[i] for i in keep),
    )


def eval_sweep(
    meta: bb.BackboneModel,
    query_sets: list[ExpertQuerySet],
    test_sets: dict[str, list],
    vocab: Vocabulary,
    expert_specs: list[tuple[str, str]],
    expert_backends: list,
    meta_backend,
    sizes: tuple[int, ...],
    seeds: tuple[int, ...],
    head_cfg: TrainConfig | None = None,
    mode: str = "experts-only",
) -> dict:
    """Retrain the head at each query-set size and record both metrics."""
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise EvalError(f"sweep sizes must be strictly increasing: {sizes}")
    head_cfg = head_cfg or TrainConfig(5e-4, 1.0, 5, 16, 0)
    per_size = {}
    for size in sizes:
        routing_scores = []
        overall_scores = []
        for seed in seeds:
            subs = [
                _subsample(qs, size, seed, expert_specs[qs.expert_index][0])
                for qs in query_sets
            ]
            cfg = dc_replace(head_cfg, seed=seed)
            head, _ = train_head(init_head(meta, expert_specs), meta, subs, cfg)
            routing_scores.append(
                eval_routing(meta_backend, head, test_sets, vocab, mode=mode)["accuracy"]
            )
            overall_scores.append(
                eval_overall(
                    make_responder(meta_backend, head, expert_backends, vocab), test_sets
                )["overall"]
            )
        per_size[size] = {
            "routing": _stats(routing_scores),
            "overall": _stats(overall_scores),
        }
    return {"sizes": list(sizes), "seeds": list(seeds), "per_size": per_size}


def _stats(xs: list[float]) -> dict:
    arr = np.asarray(xs, dtype=np.float64)
    return {
        "per_seed": [float(x) for x in arr],
        "mean": float(arr.mean()),
        "spread": float(arr.std()),
    }


# -- switching latency ------------------------------------------------------------------


def eval_latency(
    meta_backend,
    head: ExpertTokenHead,
    experts: list,
    vocab: Vocabulary,
    meta: bb.BackboneModel,
    queries: list[str],
    repetitions: int = 3,
) -> dict:
    """Mean wall-clock of switch vs no-switch generation at equal token budget.

    Per query, both conditions are re-run capped to the shorter of their two
    free-running response lengths, so the comparison only times the handoff.
    """
    if len(queries) < 100:
        raise EvalError(f"latency needs >= 100 queries, got {len(queries)}")
    if repetitions < 1:
        raise EvalError("repetitions must be >= 1")
    plain = empty_head(meta)
    t_plain = 0.0
    t_switch = 0.0
    switched = 0
    for query in queries:
        free_plain = generate(query, meta_backend, plain, [], vocab)
        free_switch = generate(query, meta_backend, head, experts, vocab)
        switched += free_switch.switched_to is not None
        budget = max(1, min(len(free_plain.response), len(free_switch.response)))
        limits = Limits(max_new_tokens=budget)
        for _ in range(repetitions):
            t0 = time.perf_counter()
            generate(query, meta_backend, plain, [], vocab, limits)
            t_plain += time.perf_counter() - t0
            t0 = time.perf_counter()
            generate(query, meta_backend, head, experts, vocab, limits)
            t_switch += time.perf_counter() - t0
    n_runs = len(queries) * repetitions
    mean_plain = t_plain / n_runs
    mean_switch = t_switch / n_runs
    return {
        "queries": len(queries),
        "repetitions": repetitions,
        "switched_fraction": switched / len(queries),
        "no_switch_mean_s": mean_plain,
        "switch_mean_s": mean_switch,
        "overhead_pct": (mean_switch - mean_plain) / mean_plain * 100.0,
        "reference_full_scale_s": dict(REFERENCE_FULL_SCALE_S),
    }


# -- report files ----------------------------------------------------------------------


def write_json_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")


def write_matrix_csv(matrix: dict, path: str | Path) -> None:
    """Routing-distribution matrix with domain row labels and expert columns."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["domain"] + list(matrix["experts"]))
        for domain, row in zip(matrix["domains"], matrix["rows"]):
            writer.writerow([domain] + [f"{x:.6f}" for x in row])


def write_table_csv(rows: list[dict], path: str | Path) -> None:
    """Generic one-table CSV; column order follows the first row's keys."""
    if not rows:
        raise EvalError("no rows to write")
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
