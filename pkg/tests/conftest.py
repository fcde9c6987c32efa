import json
import time
from pathlib import Path

import numpy as np
import pytest

from switchlm import backbone as bb
from switchlm.domains import QueryResponsePair
from switchlm.experiment import (
    Workdir,
    load_experiment_config,
    run_pipeline,
    stage_dynamic,
    stage_latency,
    stage_sweep,
)
from switchlm.vocab import default_vocabulary

REPO_ROOT = Path(__file__).resolve().parent.parent
BENCHMARK_CONFIG = REPO_ROOT / "configs" / "benchmark.json"


@pytest.fixture(scope="session")
def vocab():
    return default_vocabulary()


@pytest.fixture(scope="session")
def tiny_model(vocab):
    """Small untrained backbone shared by read-only tests."""
    return bb.init_backbone(vocab, emb_dim=8, hidden_dim=16, window=8, seed=7)


@pytest.fixture(scope="session")
def tiny_pairs():
    return [
        QueryResponsePair("reverse: abc", "cba", "reverse"),
        QueryResponsePair("reverse: hello", "olleh", "reverse"),
        QueryResponsePair("sort: 3142", "1234", "sort-digits"),
        QueryResponsePair("sort: 9870", "0789", "sort-digits"),
        QueryResponsePair("(17+25) mod 7 = ?", "0", "mod-arith"),
        QueryResponsePair("balanced? ()[]", "yes", "paren-balance"),
    ]


def train_tiny_expert(vocab, pairs, seed=0, epochs=30):
    """Deterministic small model trained on a handful of pairs."""
    from switchlm.optim import TrainConfig

    model = bb.init_backbone(vocab, emb_dim=8, hidden_dim=16, window=8, seed=seed)
    corpus = bb.corpus_from_pairs(vocab, [(p.query, p.response) for p in pairs])
    trained, _ = bb.train(model, corpus, TrainConfig(1e-2, 0.0, epochs, 8, seed))
    return trained


@pytest.fixture(scope="session")
def benchmark_run(tmp_path_factory):
    """Full shipped-config pipeline plus the extension/sweep/latency studies.

    Session-scoped because it is the expensive end-to-end experiment every
    acceptance check reads from.
    """
    cfg = load_experiment_config(BENCHMARK_CONFIG)
    wd = Workdir(tmp_path_factory.mktemp("benchmark"))
    t0 = time.perf_counter()
    report = run_pipeline(cfg, wd)
    dynamic = stage_dynamic(cfg, wd)
    sweep = stage_sweep(cfg, wd)
    latency = stage_latency(cfg, wd)
    elapsed = time.perf_counter() - t0
    return {
        "cfg": cfg,
        "wd": wd,
        "report": report,
        "dynamic": dynamic,
        "sweep": sweep,
        "latency": latency,
        "elapsed_s": elapsed,
    }
