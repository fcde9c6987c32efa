"""Loss-gap query selection: build each expert's training query set.

A pair qualifies for expert i when the meta model's teacher-forced response
loss exceeds the expert's by strictly more than tau. Membership is decided
independently per expert (a pair may qualify for several), and each
qualifying set is down-sampled uniformly without replacement to a cap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import BackboneModel, pair_loss, pair_losses
from .domains import QueryResponsePair


class CollectorError(ValueError):
    """Invalid collector configuration or inputs."""


@dataclass(frozen=True)
class CollectorConfig:
    tau: float = 2.0
    normalize_by_length: bool = False
    per_expert_cap: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.per_expert_cap < 1:
            raise CollectorError(f"per_expert_cap must be >= 1, got {self.per_expert_cap}")
        if np.isnan(self.tau):
            raise CollectorError("tau must not be NaN")


@dataclass(frozen=True)
class ExpertQuerySet:
    expert_index: int
    pairs: tuple[QueryResponsePair, ...]
    gaps: tuple[float, ...]

    def __post_init__(self):
        if len(self.pairs) != len(self.gaps):
            raise CollectorError("pairs and gaps must align")


def loss_gap(
    meta: BackboneModel, expert: BackboneModel, pair, normalize_by_length: bool = False
) -> float:
    """Meta loss minus expert loss on one pair (nats).

    Positive means the expert models the response better. Raw summed losses
    by default; per-token normalization is opt-in because raw sums bias
    selection toward long responses.
    """
    query, response = pair.query, pair.response
    lm, nm = pair_loss(meta, query, response)
    le, ne = pair_loss(expert, query, response)
    if normalize_by_length:
        return lm / nm - le / ne
    return lm - le


def collect(
    dataset,
    meta: BackboneModel,
    experts: list[BackboneModel],
    cfg: CollectorConfig | None = None,
) -> tuple[list[ExpertQuerySet], dict]:
    """Select each expert's query set from the dataset by loss gap.

    Deterministic given dataset order, model parameters, and cfg.seed.
    Returns the per-expert sets plus a report with qualifying counts before
    capping; an expert with zero qualifying pairs yields an empty set and a
    warning entry in the report.
    """
    dataset = list(dataset)
    if not dataset:
        raise CollectorError("dataset must be non-empty")
    cfg = cfg or CollectorConfig()
    qr = [(p.query, p.response) for p in dataset]
    meta_losses, counts = _summed_losses(meta, qr)
    sets: list[ExpertQuerySet] = []
    report: dict = {
        "tau": cfg.tau,
        "normalize_by_length": cfg.normalize_by_length,
        "per_expert_cap": cfg.per_expert_cap,
        "seed": cfg.seed,
        "dataset_size": len(dataset),
        "experts": [],
        "warnings": [],
    }
    for i, expert in enumerate(experts):
        expert_losses, _ = _summed_losses(expert, qr)
        if cfg.normalize_by_length:
            gaps = (meta_losses - expert_losses) / counts
        else:
            gaps = meta_losses - expert_losses
        qualifying = [j for j in range(len(dataset)) if gaps[j] > cfg.tau]
        picked = qualifying
        if len(qualifying) > cfg.per_expert_cap:
            rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, i)))
            chosen = rng.choice(len(qualifying), size=cfg.per_expert_cap, replace=False)
            picked = [qualifying[k] for k in sorted(chosen)]
        sets.append(
            ExpertQuerySet(
                expert_index=i,
                pairs=tuple(dataset[j] for j in picked),
                gaps=tuple(float(gaps[j]) for j in picked),
            )
        )
        report["experts"].append(
            {"expert_index": i, "qualifying": len(qualifying), "kept": len(picked)}
        )
        if not qualifying:
            report["warnings"].append(f"expert {i}: no pair exceeded tau={cfg.tau}")
    return sets, report


def _summed_losses(model: BackboneModel, qr: list[tuple[str, str]]) -> tuple[np.ndarray, np.ndarray]:
    losses = pair_losses(model, qr)
    counts = np.array([len(r) + 1 for _, r in qr], dtype=np.float64)  # +1 for EOS
    return losses, counts


# -- files ------------------------------------------------------------------------


def write_query_sets(sets, path: str | Path) -> None:
    """JSON-lines file: one {expert_index, query, response, gap} per kept pair."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for qs in sets:
            for pair, gap in zip(qs.pairs, qs.gaps):
                f.write(
                    json.dumps(
                        {
                            "expert_index": qs.expert_index,
                            "query": pair.query,
                            "response": pair.response,
                            "gap": gap,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )


def read_query_sets(path: str | Path, domains: dict[int, str] | None = None) -> list[ExpertQuerySet]:
    """Rebuild query sets from a JSON-lines file, grouped by expert index."""
    grouped: dict[int, list[tuple[QueryResponsePair, float]]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            idx = int(obj["expert_index"])
            domain = (domains or {}).get(idx, "")
            grouped.setdefault(idx, []).append(
                (QueryResponsePair(obj["query"], obj["response"], domain), float(obj["gap"]))
            )
    out = []
    for idx in sorted(grouped):
        pairs, gaps = zip(*grouped[idx])
        out.append(ExpertQuerySet(expert_index=idx, pairs=pairs, gaps=gaps))
    return out


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
