import json
from pathlib import Path

import numpy as np
import pytest

from conftest import train_tiny_expert
from switchlm import backbone as bb
from switchlm.backbone import fingerprint
from switchlm.head import ExpertInfo, ExpertTokenHead
from switchlm.orchestrator import (
    GenerationResult,
    Limits,
    LocalBackend,
    OrchestratorError,
    TraceEvent,
    generate,
    route_only,
    trace_record,
)

GOLDEN = Path(__file__).parent / "golden"


def _stub_head(rows, names):
    return ExpertTokenHead(
        w_e=np.asarray(rows, dtype=np.float32),
        experts=tuple(
            ExpertInfo(n, f"<ExpertToken_{i}>", f"stub:{n}") for i, n in enumerate(names)
        ),
        backbone_fingerprint="stub",
    )


class ScriptedMeta:
    """Deterministic fake: emits '4', then '2', then signals the expert row."""

    name = "scripted-meta"

    def __init__(self, vocab):
        self.vocab = vocab

    def hidden_state(self, context):
        on = context.endswith("42")
        return np.array([1.0 if on else 0.0, 0.0, 0.0, 0.0], dtype=np.float32)

    def word_logits(self, context):
        z = np.zeros(self.vocab.size, dtype=np.float32)
        if context.endswith("<sep>"):
            z[int(self.vocab.encode("4")[0])] = 5.0
        elif context.endswith("4"):
            z[int(self.vocab.encode("2")[0])] = 5.0
        return z


class ScriptedExpert:
    name = "digits"

    def __init__(self, text="37"):
        self.text = text
        self.calls = []

    def generate(self, context, max_new_tokens):
        self.calls.append((context, max_new_tokens))
        return self.text[:max_new_tokens]


class SwitchImmediatelyMeta:
    name = "switchy"

    def __init__(self, vocab):
        self.vocab = vocab

    def hidden_state(self, context):
        return np.array([1.0, 0.0, 0.0, 0.0], dtype=np.float32)

    def word_logits(self, context):
        return np.zeros(self.vocab.size, dtype=np.float32)


def _switch_head():
    return _stub_head([[10.0, 0.0, 0.0, 0.0]], ["digits"])


def test_switch_session_event_sequence(vocab):
    expert = ScriptedExpert("37")
    result = generate(
        "q", ScriptedMeta(vocab), _switch_head(), [expert], vocab, Limits(max_new_tokens=8)
    )
    assert result.response == "4237"
    assert result.switched_to == "digits"
    assert result.stopped == "eos"
    assert result.events == (
        TraceEvent(0, "token", "4"),
        TraceEvent(1, "token", "2"),
        TraceEvent(2, "switch", 0),
        TraceEvent(3, "token", "3"),
        TraceEvent(4, "token", "7"),
        TraceEvent(5, "token", "<eos>"),
    )
    # the expert continues from the full rendered context, budgeted by leftovers
    assert expert.calls == [("q<sep>42", 6)]
    assert set(result.latency_ms) == {"total", "meta_phase", "expert_phase"}


def test_switch_trace_matches_golden_bytes(vocab):
    result = generate(
        "q", ScriptedMeta(vocab), _switch_head(), [ScriptedExpert("37")], vocab,
        Limits(max_new_tokens=8),
    )
    rendered = json.dumps(trace_record(result, include_latency=False),
                          indent=2, sort_keys=True) + "\n"
    assert rendered.encode() == (GOLDEN / "trace_switch.json").read_bytes()


def test_trace_record_latency_toggle(vocab):
    result = generate("q", ScriptedMeta(vocab), _switch_head(), [ScriptedExpert()], vocab)
    with_latency = trace_record(result)
    assert with_latency["latency_ms"] == result.latency_ms
    assert trace_record(result, include_latency=False)["latency_ms"] == {}


def test_zero_expert_session_equals_plain_decoding(vocab, tiny_pairs):
    model = train_tiny_expert(vocab, tiny_pairs, seed=3, epochs=30)
    empty_head = ExpertTokenHead(
        w_e=np.zeros((0, 16), dtype=np.float32), experts=(),
        backbone_fingerprint=fingerprint(model),
    )
    for pair in tiny_pairs[:3]:
        result = generate(pair.query, LocalBackend("meta", model), empty_head, [], vocab,
                          Limits(max_new_tokens=10))
        prompt = vocab.render_context(bb.prompt_ids(vocab, pair.query))
        assert result.response == bb.generate(model, prompt, 10)
        assert result.switched_to is None
        assert all(e.kind == "token" for e in result.events)


def test_switch_budget_zero_blocks_handoff(vocab):
    result = generate(
        "q", SwitchImmediatelyMeta(vocab), _switch_head(), [ScriptedExpert()], vocab,
        Limits(max_new_tokens=8, max_switches=0),
    )
    assert result.stopped == "switch_budget"
    assert result.response == ""
    assert result.switched_to is None
    assert result.events == ()


def test_expert_switch_costs_no_output_budget(vocab):
    expert = ScriptedExpert("12345")
    result = generate(
        "q", SwitchImmediatelyMeta(vocab), _switch_head(), [expert], vocab,
        Limits(max_new_tokens=5),
    )
    # the switch consumed a trace step but the expert still got all 5 tokens
    assert expert.calls == [("q<sep>", 5)]
    assert result.response == "12345"
    assert result.stopped == "length"
    assert [e.kind for e in result.events] == ["switch"] + ["token"] * 5


def test_meta_keeps_decoding_until_length(vocab):
    class LoopMeta:
        name = "loop"

        def hidden_state(self, context):
            return np.zeros(4, dtype=np.float32)

        def word_logits(self, context):
            z = np.zeros(vocab.size, dtype=np.float32)
            z[int(vocab.encode("a")[0])] = 1.0
            return z

    empty_head = ExpertTokenHead(np.zeros((0, 4), np.float32), (), "stub")
    result = generate("q", LoopMeta(), empty_head, [], vocab, Limits(max_new_tokens=7))
    assert result.response == "a" * 7
    assert result.stopped == "length"


def test_backend_failures_are_wrapped_with_context(vocab):
    class BoomExpert:
        name = "boom"

        def generate(self, context, max_new_tokens):
            raise ValueError("exploded")

    # the switch event took step 2, so the expert call fails at trace step 3
    with pytest.raises(OrchestratorError, match=r"'boom' failed at step 3"):
        generate("q", ScriptedMeta(vocab), _switch_head(), [BoomExpert()], vocab)

    class BoomMeta:
        name = "meta-down"

        def hidden_state(self, context):
            raise ConnectionError("refused")

    with pytest.raises(OrchestratorError, match=r"'meta-down' failed at step 0"):
        generate("q", BoomMeta(), _switch_head(), [ScriptedExpert()], vocab)


def test_session_setup_validation(vocab):
    with pytest.raises(OrchestratorError):
        generate("", ScriptedMeta(vocab), _switch_head(), [ScriptedExpert()], vocab)
    with pytest.raises(OrchestratorError, match="1 experts but 2 backends"):
        generate("q", ScriptedMeta(vocab), _switch_head(),
                 [ScriptedExpert(), ScriptedExpert()], vocab)
    with pytest.raises(OrchestratorError):
        Limits(max_new_tokens=0)
    with pytest.raises(OrchestratorError):
        Limits(max_switches=-1)


def test_route_only_distribution_and_modes(vocab):
    head = _stub_head([[10.0, 0, 0, 0], [10.0, 0, 0, 0]], ["a", "b"])
    decision = route_only("q", SwitchImmediatelyMeta(vocab), head, vocab, mode="experts-only")
    assert decision.chosen == 0  # equal expert logits tie toward the lower index
    assert decision.distribution.shape == (vocab.size + 2,)
    assert decision.distribution.sum() == pytest.approx(1.0, abs=1e-12)

    full = route_only("q", SwitchImmediatelyMeta(vocab), head, vocab, mode="full-vocab")
    assert full.chosen == 0  # expert logit 10 beats the all-zero word logits

    class WordyMeta(SwitchImmediatelyMeta):
        def word_logits(self, context):
            z = np.zeros(vocab.size, dtype=np.float32)
            z[int(vocab.encode("a")[0])] = 99.0
            return z

    assert route_only("q", WordyMeta(vocab), head, vocab, mode="full-vocab").chosen is None
    # experts-only still forces a pick even when a word token dominates
    assert route_only("q", WordyMeta(vocab), head, vocab, mode="experts-only").chosen == 0


def test_route_only_validation(vocab):
    head = _switch_head()
    meta = SwitchImmediatelyMeta(vocab)
    with pytest.raises(OrchestratorError):
        route_only("", meta, head, vocab)
    with pytest.raises(OrchestratorError, match="mode"):
        route_only("q", meta, head, vocab, mode="softmax")
    empty = ExpertTokenHead(np.zeros((0, 4), np.float32), (), "stub")
    with pytest.raises(OrchestratorError):
        route_only("q", meta, empty, vocab)


def test_local_backend_matches_module_functions(vocab, tiny_pairs):
    model = train_tiny_expert(vocab, tiny_pairs, seed=1, epochs=8)
    backend = LocalBackend("local", model)
    ctx = "reverse: abc<sep>"
    ids = vocab.parse_context(ctx)
    assert np.array_equal(backend.hidden_state(ctx), bb.hidden_state(model, ids))
    assert np.array_equal(backend.word_logits(ctx),
                          bb.word_logits(model, bb.hidden_state(model, ids)))
    assert backend.generate(ctx, 6) == bb.generate(model, ctx, 6)
    assert backend.capabilities == ("hidden_state", "word_logits", "generate")
