import math

import numpy as np
import pytest

from conftest import train_tiny_expert
from switchlm.collector import (
    CollectorConfig,
    CollectorError,
    ExpertQuerySet,
    collect,
    loss_gap,
    read_query_sets,
    write_query_sets,
)
from switchlm.backbone import pair_loss


def _uncapped(tau):
    return CollectorConfig(tau=tau, per_expert_cap=10_000)


def test_identical_models_have_zero_gap_everywhere(tiny_model, tiny_pairs):
    sets, report = collect(tiny_pairs, tiny_model, [tiny_model], _uncapped(0.0))
    assert sets[0].pairs == ()
    assert sets[0].gaps == ()
    assert report["experts"][0]["qualifying"] == 0
    assert any("expert 0" in w for w in report["warnings"])


def test_infinite_tau_selects_nothing(vocab, tiny_model, tiny_pairs):
    expert = train_tiny_expert(vocab, tiny_pairs, seed=3, epochs=8)
    sets, report = collect(tiny_pairs, tiny_model, [expert], _uncapped(math.inf))
    assert sets[0].pairs == ()
    assert report["warnings"]


def test_gap_equal_to_tau_is_excluded(vocab, tiny_model, tiny_pairs):
    expert = train_tiny_expert(vocab, tiny_pairs, seed=3, epochs=8)
    dataset = [tiny_pairs[0]]
    sets, _ = collect(dataset, tiny_model, [expert], _uncapped(-math.inf))
    gap = sets[0].gaps[0]

    at, _ = collect(dataset, tiny_model, [expert], _uncapped(gap))
    below, _ = collect(dataset, tiny_model, [expert], _uncapped(gap - 1e-6))
    assert at[0].pairs == ()  # strictly-greater rule: equality does not qualify
    assert below[0].pairs == (dataset[0],)


def test_gaps_match_single_pair_oracle(vocab, tiny_model, tiny_pairs):
    expert = train_tiny_expert(vocab, tiny_pairs, seed=3, epochs=8)
    sets, _ = collect(tiny_pairs, tiny_model, [expert], _uncapped(-math.inf))
    assert len(sets[0].pairs) == len(tiny_pairs)
    for pair, gap in zip(sets[0].pairs, sets[0].gaps):
        lm, _ = pair_loss(tiny_model, pair.query, pair.response)
        le, _ = pair_loss(expert, pair.query, pair.response)
        assert gap == pytest.approx(lm - le, abs=1e-5)
        assert gap == pytest.approx(loss_gap(tiny_model, expert, pair), abs=1e-5)


def test_length_normalized_gap(vocab, tiny_model, tiny_pairs):
    expert = train_tiny_expert(vocab, tiny_pairs, seed=3, epochs=8)
    pair = tiny_pairs[0]
    lm, nm = pair_loss(tiny_model, pair.query, pair.response)
    le, ne = pair_loss(expert, pair.query, pair.response)
    assert nm == ne == len(pair.response) + 1  # response chars plus EOS
    got = loss_gap(tiny_model, expert, pair, normalize_by_length=True)
    assert got == pytest.approx(lm / nm - le / ne, abs=1e-6)


def test_down_sampling_caps_and_preserves_dataset_order(tiny_model, tiny_pairs):
    cfg = CollectorConfig(tau=-1.0, per_expert_cap=3, seed=5)
    sets, report = collect(tiny_pairs, tiny_model, [tiny_model], cfg)
    assert report["experts"][0] == {"expert_index": 0, "qualifying": 6, "kept": 3}
    kept = list(sets[0].pairs)
    assert len(kept) == 3
    positions = [tiny_pairs.index(p) for p in kept]
    assert positions == sorted(positions)  # dataset order survives the draw


def test_down_sampling_deterministic_and_seed_dependent(tiny_model, tiny_pairs):
    cfg = CollectorConfig(tau=-1.0, per_expert_cap=2, seed=5)
    a, _ = collect(tiny_pairs, tiny_model, [tiny_model], cfg)
    b, _ = collect(tiny_pairs, tiny_model, [tiny_model], cfg)
    assert a == b
    other, _ = collect(
        tiny_pairs, tiny_model, [tiny_model], CollectorConfig(tau=-1.0, per_expert_cap=2, seed=6)
    )
    assert a != other


def test_per_expert_draws_are_independent(tiny_model, tiny_pairs):
    """Several experts sharing one collector seed still get distinct draws."""
    cfg = CollectorConfig(tau=-1.0, per_expert_cap=2, seed=0)
    sets, _ = collect(tiny_pairs, tiny_model, [tiny_model, tiny_model, tiny_model], cfg)
    assert len({qs.pairs for qs in sets}) > 1


def test_monotone_tau_nesting(vocab, tiny_model, tiny_pairs):
    expert = train_tiny_expert(vocab, tiny_pairs, seed=3, epochs=8)
    taus = [-math.inf, -1.0, 0.5, 2.0, 8.0]
    selections = []
    for tau in taus:
        sets, _ = collect(tiny_pairs, tiny_model, [expert], _uncapped(tau))
        selections.append(set(p.query for p in sets[0].pairs))
    for looser, tighter in zip(selections, selections[1:]):
        assert tighter <= looser


def test_report_schema(tiny_model, tiny_pairs):
    _, report = collect(tiny_pairs, tiny_model, [tiny_model], CollectorConfig(tau=0.0, seed=1))
    assert report["tau"] == 0.0
    assert report["normalize_by_length"] is False
    assert report["per_expert_cap"] == 100
    assert report["seed"] == 1
    assert report["dataset_size"] == len(tiny_pairs)
    assert [e["expert_index"] for e in report["experts"]] == [0]


def test_query_set_jsonl_round_trip(tmp_path, vocab, tiny_model, tiny_pairs):
    expert = train_tiny_expert(vocab, tiny_pairs, seed=3, epochs=8)
    sets, _ = collect(tiny_pairs, tiny_model, [expert, tiny_model], _uncapped(-math.inf))
    path = tmp_path / "queries.jsonl"
    write_query_sets(sets, path)
    back = read_query_sets(path, domains={0: "mixed", 1: "mixed"})
    assert [qs.expert_index for qs in back] == [0, 1]
    for orig, rebuilt in zip(sets, back):
        # the file stores query/response/gap; domain tags come from the caller
        assert [(p.query, p.response) for p in rebuilt.pairs] == [
            (p.query, p.response) for p in orig.pairs
        ]
        assert all(p.domain == "mixed" for p in rebuilt.pairs)
        assert tuple(rebuilt.gaps) == orig.gaps  # float round-trip is exact via json


def test_config_validation():
    with pytest.raises(CollectorError):
        CollectorConfig(per_expert_cap=0)
    with pytest.raises(CollectorError):
        CollectorConfig(tau=math.nan)
    with pytest.raises(CollectorError):
        ExpertQuerySet(expert_index=0, pairs=(), gaps=(1.0,))


def test_empty_dataset_rejected(tiny_model):
    with pytest.raises(CollectorError):
        collect([], tiny_model, [tiny_model])
