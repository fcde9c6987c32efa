"""Expert-token head: extra output rows appended to a frozen word head.

The head is an |E| x d matrix W_E. Next-token prediction over the union of
word tokens and expert tokens is softmax([W_V; W_E] . h): word logits come
from the backbone unchanged (bit-identical, bias included), expert logits
are plain dot products with no bias term. W_E rows are the only trainable
parameters; the backbone stays frozen and is pinned by a parameter hash.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .backbone import BackboneModel, TrainingDiverged, fingerprint, hidden_state, prompt_ids, word_logits
from .kernels import word_logits_batch
from .optim import AdamW, TrainConfig
from .vocab import expert_token_string

HEAD_FORMAT_VERSION = 1

HEAD_TRAIN_DEFAULTS = TrainConfig(
    learning_rate=5e-4, weight_decay=1.0, epochs=5, batch_size=16, seed=0
)


class HeadError(ValueError):
    """Invalid head construction, mismatch against the backbone, or bad file."""


@dataclass(frozen=True)
class ExpertInfo:
    """Metadata for one expert row: display token plus a backend reference."""

    name: str
    token: str
    backend: str


@dataclass(frozen=True, eq=False)
class ExpertTokenHead:
    w_e: np.ndarray  # [E, d] float32, one row per expert
    experts: tuple[ExpertInfo, ...]
    backbone_fingerprint: str

    def __post_init__(self):
        if self.w_e.ndim != 2:
            raise HeadError(f"W_E must be 2-d, got shape {self.w_e.shape}")
        if self.w_e.shape[0] != len(self.experts):
            raise HeadError(
                f"{self.w_e.shape[0]} rows for {len(self.experts)} experts"
            )
        if self.w_e.size and not np.isfinite(self.w_e).all():
            raise HeadError("W_E contains non-finite entries")

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    @property
    def dim(self) -> int:
        return self.w_e.shape[1]

    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.experts)


def init_head(meta: BackboneModel, experts: list[tuple[str, str]]) -> ExpertTokenHead:
    """Fresh head with every row set to the mean of the word-head rows.

    ``experts`` lists (name, backend reference) in routing order; row i gets
    the display token for expert index i.
    """
    if not experts:
        raise HeadError("need at least one expert")
    mean_row = meta.wv.astype(np.float64).mean(axis=0).astype(np.float32)
    w_e = np.tile(mean_row, (len(experts), 1))
    infos = tuple(
        ExpertInfo(name=name, token=expert_token_string(i), backend=backend)
        for i, (name, backend) in enumerate(experts)
    )
    return ExpertTokenHead(w_e=w_e, experts=infos, backbone_fingerprint=fingerprint(meta))


def attach(head: ExpertTokenHead, meta: BackboneModel) -> ExpertTokenHead:
    """Verify the head belongs to this backbone; reject on any mismatch.

    Call once before serving or evaluating; the fast logit paths below only
    re-check dimensions.
    """
    if head.n_experts and head.dim != meta.wv.shape[1]:
        raise HeadError(f"head dim {head.dim} != backbone dim {meta.wv.shape[1]}")
    fp = fingerprint(meta)
    if head.backbone_fingerprint != fp:
        raise HeadError(
            "fingerprint mismatch: head was trained against a different backbone "
            f"({head.backbone_fingerprint[:12]}.. vs {fp[:12]}..)"
        )
    return head


def extended_logits(head: ExpertTokenHead, meta: BackboneModel, h: np.ndarray) -> np.ndarray:
    """Concatenated [word logits; expert logits] for one hidden state.

    The first |V| entries are exactly the backbone's word logits (same
    kernel, same bytes). Expert entries are W_E . h with no bias.
    """
    zw = word_logits(meta, h)
    if head.n_experts == 0:
        return zw
    if head.dim != h.shape[0]:
        raise HeadError(f"head dim {head.dim} != hidden dim {h.shape[0]}")
    ze = head.w_e @ h.astype(np.float32)
    return np.concatenate([zw, ze])


def extended_distribution(
    head: ExpertTokenHead, meta: BackboneModel, context_ids, verify: bool = True
) -> np.ndarray:
    """Next-token probabilities over word and expert tokens (float64).

    Verifies the backbone fingerprint unless ``verify`` is False (callers in
    tight loops should attach() once and disable per-call verification).
    """
    if verify:
        attach(head, meta)
    z = extended_logits(head, meta, hidden_state(meta, context_ids)).astype(np.float64)
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


# -- training ---------------------------------------------------------------------


def head_training_set(
    meta: BackboneModel, query_sets, negative_pairs=None
) -> tuple[np.ndarray, np.ndarray]:
    """Hidden states and extended-index targets for the head trainer.

    One example per collected pair: the prefix is the query through its
    trailing separator, the target is that expert's token (extended index
    |V| + expert_index). Optional negative pairs target the true first
    response token instead, teaching the head when not to fire.
    """
    vocab = meta.vocab
    hs: list[np.ndarray] = []
    targets: list[int] = []
    for qs in query_sets:
        if not qs.pairs:
            raise HeadError(f"expert {qs.expert_index} has an empty query set")
        for pair in qs.pairs:
            hs.append(hidden_state(meta, prompt_ids(vocab, pair.query)))
            targets.append(vocab.size + qs.expert_index)
    for query, response in negative_pairs or ():
        if not response:
            raise HeadError("negative example with empty response")
        hs.append(hidden_state(meta, prompt_ids(vocab, query)))
        targets.append(int(vocab.encode(response)[0]))
    return np.stack(hs), np.asarray(targets, dtype=np.int64)


def head_loss_and_grad(
    w_e: np.ndarray, h: np.ndarray, zw: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Summed cross-entropy under the extended softmax and its W_E gradient.

    ``h``: [B, d] hidden states; ``zw``: [B, |V|] precomputed word logits
    (frozen, so callers compute them once); ``targets``: extended indices.
    Returns (loss sum in nats, dL/dW_E), both accumulated in float64.
    The per-row gradient is (p_row - 1[row is target]) . h summed over the
    batch; word-token columns of the softmax contribute only through the
    normalizer, which is exactly why negatives need no expert-row label.
    """
    b, d = h.shape
    n_words = zw.shape[1]
    z = np.concatenate(
        [zw.astype(np.float64), h.astype(np.float64) @ w_e.astype(np.float64).T], axis=1
    )
    z -= z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    rows = np.arange(b)
    loss = float(-np.log(p[rows, targets]).sum())
    dz_e = p[:, n_words:].copy()
    expert_targets = targets - n_words
    is_expert = expert_targets >= 0
    dz_e[rows[is_expert], expert_targets[is_expert]] -= 1.0
    grad = dz_e.T @ h.astype(np.float64)
    return loss, grad


def train_head(
    head: ExpertTokenHead,
    meta: BackboneModel,
    query_sets,
    cfg: TrainConfig | None = None,
    negative_pairs=None,
) -> tuple[ExpertTokenHead, list[float]]:
    """Fit W_E on collected query sets; the backbone is read-only throughout.

    Deterministic given (query set order, backbone parameters, cfg.seed):
    shuffling is seeded, reductions run in float64, and the input head is
    never mutated. Returns the trained head and the mean-loss-per-epoch
    curve.
    """
    attach(head, meta)
    cfg = cfg or HEAD_TRAIN_DEFAULTS
    h, targets = head_training_set(meta, query_sets, negative_pairs)
    for qs in query_sets:
        if qs.expert_index >= head.n_experts:
            raise HeadError(
                f"query set for expert {qs.expert_index} but head has {head.n_experts} rows"
            )
    zw = word_logits_batch(h, meta.wv, meta.bv)
    w_e = head.w_e.copy()
    n = len(targets)
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    curve: list[float] = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss, grad = head_loss_and_grad(w_e, h[idx], zw[idx], targets[idx])
            step += 1
            if not np.isfinite(loss):
                raise TrainingDiverged(step)
            total += loss
            opt.step_begin()
            opt.update("w_e", w_e, (grad / len(idx)).astype(np.float32))
        curve.append(total / n)
    return replace(head, w_e=w_e), curve


# -- dynamic extension ---------------------------------------------------------------


def extend_head(head: ExpertTokenHead, new_heads: list[ExpertTokenHead]) -> ExpertTokenHead:
    """Append independently trained expert rows onto an existing head.

    Existing rows and indices are untouched (bit-identical); appended rows
    get fresh expert indices and display tokens continuing the sequence.
    Every input must share the dimension and backbone fingerprint.
    """
    if not new_heads:
        return replace(head, w_e=head.w_e.copy())
    rows = [head.w_e]
    infos = list(head.experts)
    next_index = head.n_experts
    for nh in new_heads:
        if nh.backbone_fingerprint != head.backbone_fingerprint:
            raise HeadError(
                f"cannot merge: expert rows for backbone {nh.backbone_fingerprint[:12]}.. "
                f"into a head for {head.backbone_fingerprint[:12]}.."
            )
        if nh.dim != head.dim:
            raise HeadError(f"cannot merge: dim {nh.dim} != {head.dim}")
        rows.append(nh.w_e)
        for info in nh.experts:
            infos.append(replace(info, token=expert_token_string(next_index)))
            next_index += 1
    return ExpertTokenHead(
        w_e=np.concatenate(rows, axis=0),
        experts=tuple(infos),
        backbone_fingerprint=head.backbone_fingerprint,
    )


# -- persistence ------------------------------------------------------------------------


def save_head(head: ExpertTokenHead, path: str | Path) -> None:
    doc = {
        "format_version": HEAD_FORMAT_VERSION,
        "dim": head.dim,
        "backbone_fingerprint": head.backbone_fingerprint,
        "experts": [
            {
                "name": info.name,
                "token": info.token,
                "backend": info.backend,
                "embedding_b64": base64.b64encode(
                    np.ascontiguousarray(row, dtype="<f4").tobytes()
                ).decode("ascii"),
            }
            for info, row in zip(head.experts, head.w_e)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_head(path: str | Path) -> ExpertTokenHead:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise HeadError(f"head file is not valid JSON: {exc}") from exc
    if doc.get("format_version") != HEAD_FORMAT_VERSION:
        raise HeadError(f"unsupported head format_version {doc.get('format_version')!r}")
    dim = int(doc["dim"])
    rows = []
    infos = []
    for entry in doc["experts"]:
        try:
            raw = base64.b64decode(entry["embedding_b64"], validate=True)
        except Exception as exc:
            raise HeadError(f"corrupt embedding for expert {entry.get('name')!r}: {exc}") from exc
        if len(raw) != 4 * dim:
            raise HeadError(
                f"expert {entry.get('name')!r} embedding has {len(raw)} bytes, expected {4 * dim}"
            )
        rows.append(np.frombuffer(raw, dtype="<f4"))
        infos.append(ExpertInfo(name=entry["name"], token=entry["token"], backend=entry["backend"]))
    w_e = np.stack(rows) if rows else np.zeros((0, dim), dtype=np.float32)
    return ExpertTokenHead(
        w_e=w_e, experts=tuple(infos), backbone_fingerprint=doc["backbone_fingerprint"]
    )
