"""End-to-end benchmark pipeline: data, backbones, collection, head, reports.

Each stage reads and writes plain files under a working directory, so stages
can run separately (one CLI subcommand each) or all at once. Everything is
seeded from a single master seed; stage-level seeds are derived, never
shared, so rerunning any stage reproduces its artifacts byte-for-byte.

Working-directory layout:
  vocab.json                    shared character vocabulary
  data/<domain>.{train,test,pool}.jsonl, data/general.pool.jsonl
  data/filler.txt, data/provenance.json
  models/meta.json, models/expert-<domain>.json
  queries/sets.jsonl, queries/report.json
  heads/head.json
  reports/*.json, reports/*.csv
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backbone as bb
from .collector import CollectorConfig, collect, read_query_sets, write_query_sets, write_report
from .domains import (
    DOMAIN_NAMES,
    dedup_filter,
    generate_domain,
    generate_filler_sentences,
    generate_general_pairs,
    read_pairs_jsonl,
    write_pairs_jsonl,
)
from .evaluation import (
    EvalError,
    empty_head,
    eval_dynamic,
    eval_latency,
    eval_overall,
    eval_routing,
    eval_sweep,
    make_responder,
    write_json_report,
    write_matrix_csv,
    write_table_csv,
)
from .head import attach, init_head, load_head, save_head, train_head
from .optim import TrainConfig
from .orchestrator import LocalBackend
from .vocab import Vocabulary, default_vocabulary


class ExperimentError(ValueError):
    """Bad experiment configuration or missing pipeline artifacts."""


def derive_seed(master: int, stage: str, index: int = 0) -> int:
    """Independent 32-bit seed per (master, stage, index)."""
    tag = sum(ord(c) * 31**i for i, c in enumerate(stage)) % (2**32)
    return int(np.random.SeedSequence((master, tag, index)).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    window: int = 24
    emb_dim: int = 32
    hidden_dim: int = 96
    domains: dict = field(default_factory=dict)  # name -> generator overrides
    train_per_domain: int = 800
    test_per_domain: int = 50
    pool_per_domain: int = 300
    general_pool: int = 200
    filler_sentences: int = 400
    dedup_threshold: float = 0.8
    meta_train: TrainConfig = field(default_factory=lambda: TrainConfig(1e-3, 0.01, 6, 64, 0))
    meta_domain_fraction: float = 0.1
    expert_train: TrainConfig = field(default_factory=lambda: TrainConfig(1e-3, 0.01, 20, 64, 0))
    expert_mixture_fraction: float = 0.1
    collector: CollectorConfig = field(default_factory=CollectorConfig)
    head_train: TrainConfig = field(default_factory=lambda: TrainConfig(5e-4, 1.0, 5, 16, 0))
    routing_mode: str = "experts-only"
    eval_seeds: tuple[int, ...] = (0, 1, 2)
    sweep_sizes: tuple[int, ...] = (10, 30, 100)
    timing_repetitions: int = 3
    latency_queries: int = 100

    def __post_init__(self):
        for name in self.domains:
            if name not in DOMAIN_NAMES:
                raise ExperimentError(f"unknown domain {name!r} in config")
        if not 0 < self.meta_domain_fraction <= 1:
            raise ExperimentError("meta_domain_fraction must be in (0, 1]")
        if not 0 <= self.expert_mixture_fraction <= 1:
            raise ExperimentError("expert_mixture_fraction must be in [0, 1]")

    def domain_params(self, name: str) -> dict:
        """Generator knobs for one domain (split-size overrides removed)."""
        params = dict(self.domains.get(name, {}))
        params.pop("train", None)
        params.pop("pool", None)
        return params

    def split_sizes(self, name: str) -> tuple[int, int]:
        """(train, pool) sizes; domains with small universes may shrink them."""
        overrides = self.domains.get(name, {})
        return (
            int(overrides.get("train", self.train_per_domain)),
            int(overrides.get("pool", self.pool_per_domain)),
        )


def _train_config(doc: dict, defaults: TrainConfig) -> TrainConfig:
    return TrainConfig(
        learning_rate=float(doc.get("learning_rate", defaults.learning_rate)),
        weight_decay=float(doc.get("weight_decay", defaults.weight_decay)),
        epochs=int(doc.get("epochs", defaults.epochs)),
        batch_size=int(doc.get("batch_size", defaults.batch_size)),
        seed=int(doc.get("seed", defaults.seed)),
    )


def load_experiment_config(path: str | Path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ExperimentError(f"config is not valid JSON: {exc}") from exc
    base = ExperimentConfig()
    data = doc.get("data", {})
    coll = doc.get("collector", {})
    ev = doc.get("eval", {})
    cfg = ExperimentConfig(
        seed=int(doc.get("seed", base.seed)) if seed_override is None else int(seed_override),
        window=int(doc.get("window", base.window)),
        emb_dim=int(doc.get("emb_dim", base.emb_dim)),
        hidden_dim=int(doc.get("hidden_dim", base.hidden_dim)),
        domains={k: dict(v) for k, v in doc.get("domains", {}).items()},
        train_per_domain=int(data.get("train_per_domain", base.train_per_domain)),
        test_per_domain=int(data.get("test_per_domain", base.test_per_domain)),
        pool_per_domain=int(data.get("pool_per_domain", base.pool_per_domain)),
        general_pool=int(data.get("general_pool", base.general_pool)),
        filler_sentences=int(data.get("filler_sentences", base.filler_sentences)),
        dedup_threshold=float(data.get("dedup_threshold", base.dedup_threshold)),
        meta_train=_train_config(doc.get("meta_train", {}), base.meta_train),
        meta_domain_fraction=float(doc.get("meta_train", {}).get("domain_fraction",
                                                                 base.meta_domain_fraction)),
        expert_train=_train_config(doc.get("expert_train", {}), base.expert_train),
        expert_mixture_fraction=float(doc.get("expert_train", {}).get("mixture_fraction",
                                                                      base.expert_mixture_fraction)),
        collector=CollectorConfig(
            tau=float(coll.get("tau", 2.0)),
            normalize_by_length=bool(coll.get("normalize_by_length", False)),
            per_expert_cap=int(coll.get("per_expert_cap", 100)),
            seed=int(coll.get("seed", 0)),
        ),
        head_train=_train_config(doc.get("head_train", {}), base.head_train),
        routing_mode=str(ev.get("routing_mode", base.routing_mode)),
        eval_seeds=tuple(ev.get("seeds", base.eval_seeds)),
        sweep_sizes=tuple(ev.get("sweep_sizes", base.sweep_sizes)),
        timing_repetitions=int(ev.get("timing_repetitions", base.timing_repetitions)),
        latency_queries=int(ev.get("latency_queries", base.latency_queries)),
    )
    return cfg


@dataclass(frozen=True)
class Workdir:
    root: Path

    def __init__(self, root: str | Path):
        object.__setattr__(self, "root", Path(root))

    @property
    def vocab(self) -> Path:
        return self.root / "vocab.json"

    def data(self, name: str) -> Path:
        return self.root / "data" / name

    def model(self, name: str) -> Path:
        return self.root / "models" / f"{name}.json"

    @property
    def query_sets(self) -> Path:
        return self.root / "queries" / "sets.jsonl"

    @property
    def collect_report(self) -> Path:
        return self.root / "queries" / "report.json"

    @property
    def head(self) -> Path:
        return self.root / "heads" / "head.json"

    def report(self, name: str) -> Path:
        return self.root / "reports" / name

    def ensure(self) -> "Workdir":
        for sub in ("data", "models", "queries", "heads", "reports"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        return self


# -- stage: synthesize data ---------------------------------------------------------


def stage_synth_data(cfg: ExperimentConfig, wd: Workdir) -> dict:
    wd.ensure()
    vocab = default_vocabulary()
    vocab.save(wd.vocab)
    provenance = {"seed": cfg.seed, "domains": {}, "filtered_out": {}}
    for i, name in enumerate(DOMAIN_NAMES):
        n_train, n_pool = cfg.split_sizes(name)
        need = cfg.test_per_domain + n_train + n_pool
        # Oversample so the near-duplicate filter cannot starve the splits.
        raw = generate_domain(
            name, need + need // 4 + 20, seed=derive_seed(cfg.seed, "synth", i),
            **cfg.domain_params(name),
        )
        test = raw[: cfg.test_per_domain]
        candidates = dedup_filter(raw[cfg.test_per_domain :], test, cfg.dedup_threshold)
        removed = len(raw) - cfg.test_per_domain - len(candidates)
        if len(candidates) < n_train + n_pool:
            raise ExperimentError(
                f"domain {name}: only {len(candidates)} candidates survive filtering, "
                f"need {n_train + n_pool}"
            )
        train = candidates[:n_train]
        pool = candidates[n_train : n_train + n_pool]
        write_pairs_jsonl(test, wd.data(f"{name}.test.jsonl"))
        write_pairs_jsonl(train, wd.data(f"{name}.train.jsonl"))
        write_pairs_jsonl(pool, wd.data(f"{name}.pool.jsonl"))
        provenance["domains"][name] = {
            "seed": derive_seed(cfg.seed, "synth", i),
            "params": cfg.domain_params(name),
            "test": len(test), "train": len(train), "pool": len(pool),
        }
        provenance["filtered_out"][name] = removed
    general = generate_general_pairs(cfg.general_pool, seed=derive_seed(cfg.seed, "general"))
    write_pairs_jsonl(general, wd.data("general.pool.jsonl"))
    filler = generate_filler_sentences(cfg.filler_sentences, seed=derive_seed(cfg.seed, "filler"))
    wd.data("filler.txt").write_text("\n".join(filler) + "\n", encoding="utf-8")
    Path(wd.data("provenance.json")).write_text(
        json.dumps(provenance, indent=2) + "\n", encoding="utf-8"
    )
    return provenance


def _load_vocab(wd: Workdir) -> Vocabulary:
    if not wd.vocab.exists():
        raise ExperimentError(f"missing {wd.vocab}; run synth-data first")
    return Vocabulary.load(wd.vocab)


def _load_pairs(wd: Workdir, filename: str):
    path = wd.data(filename)
    if not path.exists():
        raise ExperimentError(f"missing {path}; run synth-data first")
    return read_pairs_jsonl(path)


def _head_fraction(items, fraction: float) -> list:
    return list(items[: max(1, int(round(len(items) * fraction)))])


# -- stage: train the meta backbone --------------------------------------------------


def _filler_sequences(vocab: Vocabulary, wd: Workdir) -> list[np.ndarray]:
    path = wd.data("filler.txt")
    if not path.exists():
        raise ExperimentError(f"missing {path}; run synth-data first")
    out = []
    eos = np.array([vocab.eos_id], dtype=np.int32)
    for line in path.read_text(encoding="utf-8").splitlines():
        if line:
            out.append(np.concatenate([vocab.encode(line), eos]))
    return out


def stage_train_backbone(cfg: ExperimentConfig, wd: Workdir) -> list[float]:
    """Meta model: a sliver of every domain plus general filler text."""
    wd.ensure()
    vocab = _load_vocab(wd)
    corpus: list[np.ndarray] = []
    for name in DOMAIN_NAMES:
        train = _load_pairs(wd, f"{name}.train.jsonl")
        share = _head_fraction(train, cfg.meta_domain_fraction)
        corpus.extend(bb.corpus_from_pairs(vocab, [(p.query, p.response) for p in share]))
    corpus.extend(_filler_sequences(vocab, wd))
    model = bb.init_backbone(
        vocab, emb_dim=cfg.emb_dim, hidden_dim=cfg.hidden_dim, window=cfg.window,
        seed=derive_seed(cfg.seed, "meta-init"),
    )
    meta_cfg = TrainConfig(
        learning_rate=cfg.meta_train.learning_rate, weight_decay=cfg.meta_train.weight_decay,
        epochs=cfg.meta_train.epochs, batch_size=cfg.meta_train.batch_size,
        seed=derive_seed(cfg.seed, "meta-train"),
    )
    model, curve = bb.train(model, corpus, meta_cfg)
    bb.save_checkpoint(model, wd.model("meta"))
    return curve


# -- stage: fine-tune experts ----------------------------------------------------------


def stage_finetune_expert(cfg: ExperimentConfig, wd: Workdir, domain: str) -> list[float]:
    """One expert: its whole domain corpus plus a thin slice of general text.

    The mixture is filler only, never other domains: an expert that keeps
    training on foreign domains ends up beating the meta model there too,
    which destroys the loss-gap signal the query collector depends on.
    """
    if domain not in DOMAIN_NAMES:
        raise ExperimentError(f"unknown domain {domain!r}")
    wd.ensure()
    vocab = _load_vocab(wd)
    if not wd.model("meta").exists():
        raise ExperimentError(f"missing {wd.model('meta')}; run train-backbone first")
    meta = bb.load_checkpoint(wd.model("meta"), vocab)
    own = _load_pairs(wd, f"{domain}.train.jsonl")
    corpus = bb.corpus_from_pairs(vocab, [(p.query, p.response) for p in own])
    if cfg.expert_mixture_fraction > 0:
        filler = _filler_sequences(vocab, wd)
        corpus.extend(filler[: max(1, int(round(len(filler) * cfg.expert_mixture_fraction)))])
    expert_cfg = TrainConfig(
        learning_rate=cfg.expert_train.learning_rate, weight_decay=cfg.expert_train.weight_decay,
        epochs=cfg.expert_train.epochs, batch_size=cfg.expert_train.batch_size,
        seed=derive_seed(cfg.seed, "expert-train", DOMAIN_NAMES.index(domain)),
    )
    expert, curve = bb.train(meta, corpus, expert_cfg)
    bb.save_checkpoint(expert, wd.model(f"expert-{domain}"))
    return curve


def _load_models(cfg: ExperimentConfig, wd: Workdir):
    vocab = _load_vocab(wd)
    if not wd.model("meta").exists():
        raise ExperimentError(f"missing {wd.model('meta')}; run train-backbone first")
    meta = bb.load_checkpoint(wd.model("meta"), vocab)
    experts = {}
    for name in DOMAIN_NAMES:
        path = wd.model(f"expert-{name}")
        if not path.exists():
            raise ExperimentError(f"missing {path}; run finetune-expert first")
        experts[name] = bb.load_checkpoint(path, vocab)
    return vocab, meta, experts


# -- stage: collect queries -------------------------------------------------------------


def stage_collect_queries(cfg: ExperimentConfig, wd: Workdir) -> dict:
    vocab, meta, experts = _load_models(cfg, wd)
    pool = []
    for name in DOMAIN_NAMES:
        pool.extend(_load_pairs(wd, f"{name}.pool.jsonl"))
    pool.extend(_load_pairs(wd, "general.pool.jsonl"))
    coll_cfg = CollectorConfig(
        tau=cfg.collector.tau,
        normalize_by_length=cfg.collector.normalize_by_length,
        per_expert_cap=cfg.collector.per_expert_cap,
        seed=derive_seed(cfg.seed, "collect"),
    )
    sets, report = collect(pool, meta, [experts[n] for n in DOMAIN_NAMES], coll_cfg)
    for entry, name in zip(report["experts"], DOMAIN_NAMES):
        entry["name"] = name
    write_query_sets(sets, wd.query_sets)
    write_report(report, wd.collect_report)
    return report


# -- stage: train the expert-token head ----------------------------------------------------


def expert_specs(wd: Workdir) -> list[tuple[str, str]]:
    """(name, backend reference) per expert row, in canonical domain order."""
    return [(name, str(Path("models") / f"expert-{name}.json")) for name in DOMAIN_NAMES]


def _load_query_sets(wd: Workdir):
    if not wd.query_sets.exists():
        raise ExperimentError(f"missing {wd.query_sets}; run collect-queries first")
    domains = {i: n for i, n in enumerate(DOMAIN_NAMES)}
    return read_query_sets(wd.query_sets, domains)


def stage_train_head(cfg: ExperimentConfig, wd: Workdir, out_path: Path | None = None) -> list[float]:
    vocab, meta, _ = _load_models(cfg, wd)
    sets = _load_query_sets(wd)
    head_cfg = TrainConfig(
        learning_rate=cfg.head_train.learning_rate, weight_decay=cfg.head_train.weight_decay,
        epochs=cfg.head_train.epochs, batch_size=cfg.head_train.batch_size,
        seed=derive_seed(cfg.seed, "head-train"),
    )
    head, curve = train_head(init_head(meta, expert_specs(wd)), meta, sets, head_cfg)
    save_head(head, out_path or wd.head)
    return curve


# -- stage: evaluate ------------------------------------------------------------------------


def _test_sets(wd: Workdir) -> dict:
    return {name: _load_pairs(wd, f"{name}.test.jsonl") for name in DOMAIN_NAMES}


def _backends(meta, experts):
    meta_backend = LocalBackend("meta", meta)
    expert_backends = [LocalBackend(name, experts[name]) for name in DOMAIN_NAMES]
    return meta_backend, expert_backends


def learnability_report(cfg: ExperimentConfig, wd: Workdir) -> dict:
    """Per-domain held-out accuracy and per-token loss, expert vs meta.

    Gates the benchmark: each expert must clearly beat the meta model on its
    own domain (accuracy >= 0.8 vs <= 0.5; per-token loss at least 20% lower).
    """
    vocab, meta, experts = _load_models(cfg, wd)
    tests = _test_sets(wd)
    out = {}
    for name in DOMAIN_NAMES:
        pairs = [(p.query, p.response) for p in tests[name]]
        n_tok = np.array([len(r) + 1 for _, r in pairs], dtype=np.float64)
        meta_loss = float((bb.pair_losses(meta, pairs) / n_tok).mean())
        exp_loss = float((bb.pair_losses(experts[name], pairs) / n_tok).mean())
        meta_resp = make_responder(LocalBackend("meta", meta), empty_head(meta), [], vocab)
        exp_resp = make_responder(
            LocalBackend(name, experts[name]), empty_head(experts[name]), [], vocab
        )
        meta_acc = eval_overall(meta_resp, {name: tests[name]})["overall"]
        exp_acc = eval_overall(exp_resp, {name: tests[name]})["overall"]
        out[name] = {
            "meta_loss_per_token": meta_loss,
            "expert_loss_per_token": exp_loss,
            "loss_reduction_pct": (1.0 - exp_loss / meta_loss) * 100.0,
            "meta_accuracy": meta_acc,
            "expert_accuracy": exp_acc,
        }
    return out


def stage_evaluate(cfg: ExperimentConfig, wd: Workdir, head_path: Path | None = None) -> dict:
    vocab, meta, experts = _load_models(cfg, wd)
    # attach rejects heads trained against some other backbone
    head = attach(load_head(head_path or wd.head), meta)
    tests = _test_sets(wd)
    meta_backend, expert_backends = _backends(meta, experts)

    routed = make_responder(meta_backend, head, expert_backends, vocab)
    meta_only = make_responder(meta_backend, empty_head(meta), [], vocab)
    overall_routed = eval_overall(routed, tests)
    overall_meta = eval_overall(meta_only, tests)
    routing = eval_routing(meta_backend, head, tests, vocab, mode=cfg.routing_mode)
    routing_open = eval_routing(meta_backend, head, tests, vocab, mode="full-vocab")
    learn = learnability_report(cfg, wd)

    report = {
        "overall": {"routed": overall_routed, "meta_only": overall_meta},
        "routing": routing,
        "routing_full_vocab": routing_open,
        "learnability": learn,
        "config": {"seed": cfg.seed, "routing_mode": cfg.routing_mode,
                   "tau": cfg.collector.tau, "per_expert_cap": cfg.collector.per_expert_cap},
    }
    write_json_report(report, wd.report("evaluation.json"))
    write_matrix_csv(routing["matrix"], wd.report("routing_matrix.csv"))
    rows = [
        {
            "domain": name,
            "meta_accuracy": f"{overall_meta['per_domain'][name]:.4f}",
            "routed_accuracy": f"{overall_routed['per_domain'][name]:.4f}",
        }
        for name in DOMAIN_NAMES
    ]
    rows.append({"domain": "overall",
                 "meta_accuracy": f"{overall_meta['overall']:.4f}",
                 "routed_accuracy": f"{overall_routed['overall']:.4f}"})
    write_table_csv(rows, wd.report("overall_accuracy.csv"))
    write_table_csv(
        [{"method": "random", "routing_accuracy": f"{routing['random_baseline']:.4f}"},
         {"method": "trained-head", "routing_accuracy": f"{routing['accuracy']:.4f}"},
         {"method": "oracle", "routing_accuracy": f"{routing['oracle_baseline']:.4f}"}],
        wd.report("routing_accuracy.csv"),
    )
    return report


def stage_dynamic(cfg: ExperimentConfig, wd: Workdir, split: int = 4) -> dict:
    vocab, meta, experts = _load_models(cfg, wd)
    sets = _load_query_sets(wd)
    tests = _test_sets(wd)
    meta_backend, expert_backends = _backends(meta, experts)
    head_cfg = TrainConfig(
        learning_rate=cfg.head_train.learning_rate, weight_decay=cfg.head_train.weight_decay,
        epochs=cfg.head_train.epochs, batch_size=cfg.head_train.batch_size,
        seed=derive_seed(cfg.seed, "head-train"),
    )
    report = eval_dynamic(
        meta, sets, tests, vocab, expert_specs(wd), expert_backends, meta_backend,
        head_cfg=head_cfg, split=split, mode=cfg.routing_mode,
    )
    write_json_report(report, wd.report("dynamic.json"))
    write_table_csv(
        [{"variant": v, "routing_accuracy": f"{report[v]['routing_accuracy']:.4f}",
          "overall_accuracy": f"{report[v]['overall']:.4f}"} for v in ("static", "dynamic")],
        wd.report("dynamic.csv"),
    )
    return report


def stage_sweep(cfg: ExperimentConfig, wd: Workdir) -> dict:
    vocab, meta, experts = _load_models(cfg, wd)
    sets = _load_query_sets(wd)
    tests = _test_sets(wd)
    meta_backend, expert_backends = _backends(meta, experts)
    head_cfg = TrainConfig(
        learning_rate=cfg.head_train.learning_rate, weight_decay=cfg.head_train.weight_decay,
        epochs=cfg.head_train.epochs, batch_size=cfg.head_train.batch_size,
        seed=derive_seed(cfg.seed, "head-train"),
    )
    report = eval_sweep(
        meta, sets, tests, vocab, expert_specs(wd), expert_backends, meta_backend,
        sizes=cfg.sweep_sizes, seeds=cfg.eval_seeds, head_cfg=head_cfg, mode=cfg.routing_mode,
    )
    write_json_report(report, wd.report("sweep.json"))
    rows = []
    for size in report["sizes"]:
        entry = report["per_size"][size]
        for seed, r_acc, o_acc in zip(
            report["seeds"], entry["routing"]["per_seed"], entry["overall"]["per_seed"]
        ):
            rows.append({"size": size, "seed": seed,
                         "routing_accuracy": f"{r_acc:.4f}", "overall_accuracy": f"{o_acc:.4f}"})
    write_table_csv(rows, wd.report("sweep.csv"))
    return report


def stage_latency(cfg: ExperimentConfig, wd: Workdir) -> dict:
    vocab, meta, experts = _load_models(cfg, wd)
    head = load_head(wd.head)
    tests = _test_sets(wd)
    meta_backend, expert_backends = _backends(meta, experts)
    queries: list[str] = []
    i = 0
    while len(queries) < cfg.latency_queries:
        for name in DOMAIN_NAMES:
            pairs = tests[name]
            if i < len(pairs):
                queries.append(pairs[i].query)
        i += 1
        if i > max(len(t) for t in tests.values()):
            break
    queries = queries[: cfg.latency_queries]
    report = eval_latency(
        meta_backend, head, expert_backends, vocab, meta, queries,
        repetitions=cfg.timing_repetitions,
    )
    write_json_report(report, wd.report("latency.json"))
    write_table_csv(
        [{"condition": "no-switch", "mean_s": f"{report['no_switch_mean_s']:.6f}"},
         {"condition": "switch", "mean_s": f"{report['switch_mean_s']:.6f}"},
         {"condition": "overhead_pct", "mean_s": f"{report['overhead_pct']:.3f}"}],
        wd.report("latency.csv"),
    )
    return report


def run_pipeline(cfg: ExperimentConfig, wd: Workdir, progress=None) -> dict:
    """All stages in order; returns the evaluation report plus wall times."""
    timings = {}
    def tick(stage, fn, *args):
        t0 = time.perf_counter()
        result = fn(*args)
        timings[stage] = time.perf_counter() - t0
        if progress is not None:
            progress(f"{stage}: {timings[stage]:.1f}s")
        return result

    tick("synth-data", stage_synth_data, cfg, wd)
    tick("train-backbone", stage_train_backbone, cfg, wd)
    for name in DOMAIN_NAMES:
        tick(f"finetune-expert[{name}]", stage_finetune_expert, cfg, wd, name)
    tick("collect-queries", stage_collect_queries, cfg, wd)
    tick("train-head", stage_train_head, cfg, wd)
    report = tick("evaluate", stage_evaluate, cfg, wd)
    report["stage_seconds"] = timings
    return report
