"""Generation state machine: decode with the meta model, switch on expert tokens.

A session decodes greedily from the extended head. Word tokens append to the
context; an expert token appends nothing and instead hands the session to
that expert's backend, which continues decoding from the very same context
and never hands back. The caller sees one seamless response; the trace
records every token and switch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import backbone as bb
from .head import ExpertTokenHead
from .vocab import Vocabulary


class OrchestratorError(RuntimeError):
    """Invalid session setup or a backend failure mid-generation."""


@dataclass(frozen=True)
class Limits:
    max_new_tokens: int = 128
    max_switches: int = 1

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise OrchestratorError("max_new_tokens must be >= 1")
        if self.max_switches < 0:
            raise OrchestratorError("max_switches must be >= 0")


@dataclass(frozen=True)
class TraceEvent:
    step: int
    kind: str  # "token" or "switch"
    value: object  # token display string, or expert index for a switch

    def to_json(self) -> dict:
        return {"step": self.step, "kind": self.kind, "value": self.value}


@dataclass(frozen=True, eq=False)
class GenerationResult:
    response: str
    events: tuple[TraceEvent, ...]
    switched_to: str | None
    stopped: str  # "eos" | "length" | "switch_budget"
    latency_ms: dict


@dataclass(frozen=True, eq=False)
class RoutingDecision:
    chosen: int | None  # expert index, or None when the meta model keeps decoding
    step: int
    distribution: np.ndarray  # extended probabilities, float64, sums to 1


@dataclass
class LocalBackend:
    """In-process model speaking the same interface as a remote backend."""

    name: str
    model: bb.BackboneModel

    capabilities = ("hidden_state", "word_logits", "generate")

    def hidden_state(self, context: str) -> np.ndarray:
        return bb.hidden_state(self.model, self.model.vocab.parse_context(context))

    def word_logits(self, context: str) -> np.ndarray:
        return bb.word_logits(self.model, self.hidden_state(context))

    def generate(self, context: str, max_new_tokens: int) -> str:
        return bb.generate(self.model, context, max_new_tokens)


@dataclass
class GenerationSession:
    """Mutable state of one decoding run; sessions share nothing."""

    vocab: Vocabulary
    context: str  # rendered context text, re-encoded by whichever model is active
    head: ExpertTokenHead
    limits: Limits
    active: str = "meta"
    switches: int = 0
    emitted: int = 0  # word tokens appended; expert tokens cost no budget
    step: int = 0
    events: list[TraceEvent] = field(default_factory=list)

    def record(self, kind: str, value) -> None:
        self.events.append(TraceEvent(self.step, kind, value))
        self.step += 1


def _extended_candidates(vocab: Vocabulary, n_experts: int) -> np.ndarray:
    """Global token ids eligible for the greedy argmax during the meta phase."""
    word = [i for i in range(vocab.size) if i not in (vocab.pad_id, vocab.bos_id, vocab.sep_id)]
    return np.asarray(word + [vocab.size + k for k in range(n_experts)], dtype=np.int64)


def _call(backend, method: str, step: int, *args):
    try:
        return getattr(backend, method)(*args)
    except Exception as exc:
        name = getattr(backend, "name", "?")
        raise OrchestratorError(f"backend {name!r} failed at step {step}: {exc}") from exc


def generate(
    query: str,
    meta,
    head: ExpertTokenHead,
    experts: list,
    vocab: Vocabulary,
    limits: Limits | None = None,
) -> GenerationResult:
    """Run one full session: meta decodes, at most one handoff, one response.

    ``meta`` must expose hidden_state/word_logits over context text; each
    expert only needs generate. The response never contains expert-token
    display strings: a switch consumes a trace step but appends nothing.
    """
    if not query:
        raise OrchestratorError("query must be non-empty")
    if head.n_experts != len(experts):
        raise OrchestratorError(
            f"head has {head.n_experts} experts but {len(experts)} backends were given"
        )
    limits = limits or Limits()
    session = GenerationSession(
        vocab=vocab,
        context=vocab.render_context(bb.prompt_ids(vocab, query)),
        head=head,
        limits=limits,
    )
    t_start = time.perf_counter()
    switched_to = None
    stopped = "length"
    t_meta = 0.0
    t_expert = 0.0

    candidates = _extended_candidates(vocab, head.n_experts)
    while session.emitted < limits.max_new_tokens:
        t0 = time.perf_counter()
        h = np.asarray(_call(meta, "hidden_state", session.step, session.context))
        zw = np.asarray(_call(meta, "word_logits", session.step, session.context))
        z = np.concatenate([zw, head.w_e @ h.astype(head.w_e.dtype)]) if head.n_experts else zw
        t_meta += time.perf_counter() - t0
        token = bb.greedy_pick(z, candidates)
        if token >= vocab.size:
            if session.switches >= limits.max_switches:
                stopped = "switch_budget"
                break
            expert_index = token - vocab.size
            session.record("switch", expert_index)
            session.switches += 1
            switched_to = head.experts[expert_index].name
            backend = experts[expert_index]
            remaining = limits.max_new_tokens - session.emitted
            t0 = time.perf_counter()
            text = _call(backend, "generate", session.step, session.context, remaining)
            t_expert += time.perf_counter() - t0
            session.context += text
            for ch in text:
                session.record("token", ch)
                session.emitted += 1
            if len(text) < remaining:
                session.record("token", vocab.decode([vocab.eos_id]))
                stopped = "eos"
            break
        if token == vocab.eos_id:
            session.record("token", vocab.decode([vocab.eos_id]))
            stopped = "eos"
            break
        ch = vocab.decode([int(token)])
        session.record("token", ch)
        session.context += ch
        session.emitted += 1

    prompt = vocab.render_context(bb.prompt_ids(vocab, query))
    response = session.context[len(prompt) :]
    total_ms = (time.perf_counter() - t_start) * 1e3
    return GenerationResult(
        response=response,
        events=tuple(session.events),
        switched_to=switched_to,
        stopped=stopped,
        latency_ms={
            "total": total_ms,
            "meta_phase": t_meta * 1e3,
            "expert_phase": t_expert * 1e3,
        },
    )


def route_only(
    query: str,
    meta,
    head: ExpertTokenHead,
    vocab: Vocabulary,
    mode: str = "experts-only",
) -> RoutingDecision:
    """Single extended-head evaluation at the end-of-query position.

    "experts-only" forces a choice among experts (argmax over expert logits);
    "full-vocab" lets word tokens compete, returning None when a word token
    wins. Ties break toward the lowest global token id.
    """
    if not query:
        raise OrchestratorError("query must be non-empty")
    if mode not in ("experts-only", "full-vocab"):
        raise OrchestratorError(f"unknown routing mode {mode!r}")
    if head.n_experts == 0:
        raise OrchestratorError("routing needs at least one expert")
    context = vocab.render_context(bb.prompt_ids(vocab, query))
    h = np.asarray(_call(meta, "hidden_state", 0, context))
    zw = np.asarray(_call(meta, "word_logits", 0, context))
    z = np.concatenate([zw, head.w_e @ h.astype(head.w_e.dtype)])
    zf = z.astype(np.float64)
    p = np.exp(zf - zf.max())
    p /= p.sum()
    if mode == "experts-only":
        chosen = int(np.argmax(z[vocab.size :]))
    else:
        token = bb.greedy_pick(z, _extended_candidates(vocab, head.n_experts))
        chosen = token - vocab.size if token >= vocab.size else None
    return RoutingDecision(chosen=chosen, step=0, distribution=p)


def trace_record(result: GenerationResult, include_latency: bool = True) -> dict:
    """Trace as a plain JSON-ready dict."""
    doc = {
        "events": [e.to_json() for e in result.events],
        "response": result.response,
        "switched_to": result.switched_to,
        "stopped": result.stopped,
    }
    doc["latency_ms"] = result.latency_ms if include_latency else {}
    return doc
