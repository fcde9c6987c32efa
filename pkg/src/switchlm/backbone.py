"""A small trainable autoregressive character LM.

Fixed-window neural n-gram architecture: the last ``window`` token
embeddings are concatenated and passed through one tanh layer to produce a
hidden state ``h``; a linear word head maps ``h`` to logits over the
vocabulary. That is everything the routing framework needs from a model:
hidden states, word logits, sequence loss, and greedy generation.

Parameters are stored float32; losses and gradient reductions accumulate in
float64. A float64-parameter model is supported for gradient checking.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import kernels
from .optim import TrainConfig, AdamW
from .vocab import Vocabulary

# Toy-backbone training defaults; expert-token training has its own
# (see switchlm.head) and TrainConfig's dataclass defaults.
BACKBONE_TRAIN_DEFAULTS = TrainConfig(
    learning_rate=1e-3, weight_decay=0.01, epochs=10, batch_size=64, seed=0
)

TENSOR_NAMES = ("token_embeddings", "hidden_weights", "hidden_bias", "word_head", "word_head_bias")


class BackboneError(ValueError):
    """Contract violations on backbone inputs."""


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite value appears during training."""

    def __init__(self, step: int):
        super().__init__(f"non-finite value encountered at training step {step}")
        self.step = step


@dataclass(eq=False)
class BackboneModel:
    """Model parameters plus the vocabulary they were built against."""

    vocab: Vocabulary
    emb: np.ndarray  # [V, e] token embeddings
    wh: np.ndarray  # [d, W*e] hidden weights
    bh: np.ndarray  # [d]
    wv: np.ndarray  # [V, d] word head
    bv: np.ndarray  # [V]
    window: int

    @property
    def emb_dim(self) -> int:
        return self.emb.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.wh.shape[0]

    @property
    def dtype(self) -> np.dtype:
        return self.emb.dtype

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "token_embeddings": self.emb,
            "hidden_weights": self.wh,
            "hidden_bias": self.bh,
            "word_head": self.wv,
            "word_head_bias": self.bv,
        }

    def copy(self) -> "BackboneModel":
        return replace(
            self,
            emb=self.emb.copy(),
            wh=self.wh.copy(),
            bh=self.bh.copy(),
            wv=self.wv.copy(),
            bv=self.bv.copy(),
        )

    def check_finite(self, step: int = -1) -> None:
        for t in self.tensors().values():
            if not np.isfinite(t).all():
                raise TrainingDiverged(step)


def init_backbone(
    vocab: Vocabulary,
    emb_dim: int = 32,
    hidden_dim: int = 96,
    window: int = 24,
    seed: int = 0,
    dtype=np.float32,
) -> BackboneModel:
    """Fresh model with seeded Gaussian init (weights) and zero biases."""
    rng = np.random.default_rng(seed)
    v = vocab.size
    we = window * emb_dim
    emb = rng.normal(0.0, 0.1, size=(v, emb_dim))
    wh = rng.normal(0.0, 1.0 / np.sqrt(we), size=(hidden_dim, we))
    wv = rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), size=(v, hidden_dim))
    return BackboneModel(
        vocab=vocab,
        emb=emb.astype(dtype),
        wh=wh.astype(dtype),
        bh=np.zeros(hidden_dim, dtype=dtype),
        wv=wv.astype(dtype),
        bv=np.zeros(v, dtype=dtype),
        window=window,
    )


# -- prompt formatting -------------------------------------------------------
#
# The shared prompt shape for query/response tasks is
#   <query chars> <sep> <response chars> <eos>
# Windows are left-padded with <bos>; sequences carry no explicit leading
# marker (the padding is the start-of-text signal).


def prompt_ids(vocab: Vocabulary, query: str, response_prefix: str = "") -> np.ndarray:
    """Token ids of a generation prompt: query through its trailing sep."""
    parts = [vocab.encode(query), np.array([vocab.sep_id], dtype=np.int32)]
    if response_prefix:
        parts.append(vocab.encode(response_prefix))
    return np.concatenate(parts)


def pair_sequence_ids(
    vocab: Vocabulary, query: str, response: str, include_eos: bool = True
) -> np.ndarray:
    """Full training sequence for a query-response pair."""
    parts = [vocab.encode(query), np.array([vocab.sep_id], dtype=np.int32), vocab.encode(response)]
    if include_eos:
        parts.append(np.array([vocab.eos_id], dtype=np.int32))
    return np.concatenate(parts)


def _validate_ids(vocab: Vocabulary, ids: np.ndarray) -> None:
    if len(ids) and (ids.min() < 0 or ids.max() >= vocab.size):
        bad = ids[(ids < 0) | (ids >= vocab.size)][0]
        raise BackboneError(f"token id {int(bad)} outside word/control range [0, {vocab.size})")


def context_windows(vocab: Vocabulary, seq: np.ndarray, window: int) -> np.ndarray:
    """All next-token prediction windows for one sequence.

    Row ``p`` is the left-bos-padded window whose prediction target is
    ``seq[p]``.
    """
    padded = np.concatenate([np.full(window, vocab.bos_id, dtype=np.int32), seq.astype(np.int32)])
    n = len(seq)
    idx = np.arange(window)[None, :] + np.arange(n)[:, None]
    return padded[idx]


def hidden_state(model: BackboneModel, context_ids) -> np.ndarray:
    """Hidden state after consuming ``context_ids`` (BOS-padded to window)."""
    ids = np.asarray(context_ids, dtype=np.int32)
    if ids.size == 0:
        raise BackboneError("context must be non-empty")
    _validate_ids(model.vocab, ids)
    tail = ids[-model.window :]
    if len(tail) < model.window:
        pad = np.full(model.window - len(tail), model.vocab.bos_id, dtype=np.int32)
        tail = np.concatenate([pad, tail])
    h, _ = kernels.forward_hidden(tail[None, :], model.emb, model.wh, model.bh)
    return h[0]


def word_logits(model: BackboneModel, h: np.ndarray) -> np.ndarray:
    """Linear word head: ``wv @ h + bv`` (no softmax)."""
    h = np.asarray(h)
    if h.shape != (model.hidden_dim,):
        raise BackboneError(f"hidden state must have shape ({model.hidden_dim},), got {h.shape}")
    return kernels.word_logits_batch(h[None, :].astype(model.dtype), model.wv, model.bv)[0]


# -- sequence loss ------------------------------------------------------------


def pair_loss(
    model: BackboneModel,
    query: str,
    response: str,
    include_eos: bool = True,
) -> tuple[float, int]:
    """Teacher-forced negative log-likelihood of a response given its query.

    Per-token losses of the response tokens (plus the trailing eos when
    ``include_eos``) are summed in float64. Returns ``(nats, token_count)``.
    """
    if response == "":
        raise BackboneError("response must be non-empty; pair loss is undefined")
    losses = pair_losses(model, [(query, response)], include_eos=include_eos)
    n = len(response) + (1 if include_eos else 0)
    return float(losses[0]), n


def pair_losses(
    model: BackboneModel,
    pairs,
    include_eos: bool = True,
    chunk_rows: int = 8192,
) -> np.ndarray:
    """Summed response NLL for many (query, response) pairs at once.

    All response positions across pairs share batched forward passes; the
    per-pair sums are segment reductions in float64, so the result is
    identical to calling :func:`pair_loss` pair by pair.
    """
    pairs = list(pairs)
    ctx_blocks: list[np.ndarray] = []
    targets: list[np.ndarray] = []
    owners: list[np.ndarray] = []
    for i, (query, response) in enumerate(pairs):
        if response == "":
            raise BackboneError(f"response must be non-empty (pair {i})")
        seq = pair_sequence_ids(model.vocab, query, response, include_eos=include_eos)
        windows = context_windows(model.vocab, seq, model.window)
        n_resp = len(response) + (1 if include_eos else 0)
        start = len(seq) - n_resp
        ctx_blocks.append(windows[start:])
        targets.append(seq[start:])
        owners.append(np.full(n_resp, i, dtype=np.int64))
    ctx = np.concatenate(ctx_blocks)
    tgt = np.concatenate(targets).astype(np.int64)
    own = np.concatenate(owners)
    out = np.zeros(len(pairs), dtype=np.float64)
    for lo in range(0, len(ctx), chunk_rows):
        hi = min(lo + chunk_rows, len(ctx))
        h, _ = kernels.forward_hidden(ctx[lo:hi], model.emb, model.wh, model.bh)
        z = kernels.word_logits_batch(h, model.wv, model.bv)
        nll = kernels.neg_log_probs(z, tgt[lo:hi])
        np.add.at(out, own[lo:hi], nll)
    return out


# -- training ------------------------------------------------------------------


def corpus_from_pairs(vocab: Vocabulary, pairs, include_eos: bool = True) -> list[np.ndarray]:
    """Token sequences for (query, response) pairs, ready for train()."""
    return [pair_sequence_ids(vocab, q, r, include_eos) for q, r in pairs]


def build_training_set(
    vocab: Vocabulary, corpus: list[np.ndarray], window: int
) -> tuple[np.ndarray, np.ndarray]:
    """Flatten a corpus of token sequences into (windows, targets)."""
    ctx = [context_windows(vocab, np.asarray(seq, dtype=np.int32), window) for seq in corpus]
    tgt = [np.asarray(seq, dtype=np.int64) for seq in corpus]
    return np.concatenate(ctx), np.concatenate(tgt)


def train(
    model: BackboneModel, corpus: list[np.ndarray], cfg: TrainConfig | None = None
) -> tuple[BackboneModel, list[float]]:
    """Cross-entropy next-token training over every position of the corpus.

    Deterministic given the seed and corpus order: shuffling uses a seeded
    generator and batch reductions run in float64. The input model is left
    untouched; returns the trained copy together with the
    mean-loss-per-epoch curve.
    """
    if not corpus:
        raise BackboneError("corpus must be non-empty")
    cfg = cfg or BACKBONE_TRAIN_DEFAULTS
    model = model.copy()
    ctx, tgt = build_training_set(model.vocab, corpus, model.window)
    n = len(tgt)
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    curve: list[float] = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            bctx, btgt = ctx[batch], tgt[batch]
            h, x = kernels.forward_hidden(bctx, model.emb, model.wh, model.bh)
            z = kernels.word_logits_batch(h, model.wv, model.bv)
            loss_sum, dz = kernels.xent_grad(z, btgt)
            if not np.isfinite(loss_sum):
                raise TrainingDiverged(step)
            epoch_loss += loss_sum
            dz /= len(batch)
            demb, dwh, dbh, dwv, dbv = kernels.backbone_backward(
                dz, h, x, bctx, model.wv, model.wh, model.vocab.size, model.emb_dim
            )
            opt.step_begin()
            opt.update("emb", model.emb, demb)
            opt.update("wh", model.wh, dwh)
            opt.update("bh", model.bh, dbh)
            opt.update("wv", model.wv, dwv)
            opt.update("bv", model.bv, dbv)
            step += 1
        model.check_finite(step)
        curve.append(epoch_loss / n)
    return model, curve


def corpus_token_loss(model: BackboneModel, corpus: list[np.ndarray]) -> float:
    """Mean per-token NLL of a corpus under the model (no training)."""
    ctx, tgt = build_training_set(model.vocab, corpus, model.window)
    total = 0.0
    for lo in range(0, len(tgt), 8192):
        h, _ = kernels.forward_hidden(ctx[lo : lo + 8192], model.emb, model.wh, model.bh)
        z = kernels.word_logits_batch(h, model.wv, model.bv)
        total += float(kernels.neg_log_probs(z, tgt[lo : lo + 8192]).sum())
    return total / len(tgt)


# -- generation ----------------------------------------------------------------


def emittable_ids(vocab: Vocabulary) -> np.ndarray:
    """Ids greedy decoding may emit: word tokens plus eos.

    pad/bos/sep are prompt structure, never content, so they are excluded
    from the argmax (the underlying distribution is not modified).
    """
    ids = [i for i in range(vocab.size) if vocab.is_word_id(i)] + [vocab.eos_id]
    return np.array(sorted(ids), dtype=np.int64)


def greedy_pick(logits: np.ndarray, candidate_ids: np.ndarray) -> int:
    """Argmax over a candidate id set; ties break to the lowest global id."""
    picked = logits[candidate_ids]
    return int(candidate_ids[picked == picked.max()].min())


def generate(model: BackboneModel, context_text: str, max_new_tokens: int = 128) -> str:
    """Greedy decoding of word tokens until eos or the token budget.

    ``context_text`` may contain control display strings (e.g. ``<sep>``);
    it is parsed with the context codec. Returns only the newly generated
    characters.
    """
    ids = list(model.vocab.parse_context(context_text))
    if not ids:
        ids = [model.vocab.bos_id]
    cand = emittable_ids(model.vocab)
    out: list[int] = []
    for _ in range(max_new_tokens):
        h = hidden_state(model, np.array(ids[-model.window :], dtype=np.int32))
        z = word_logits(model, h)
        nxt = greedy_pick(z, cand)
        if nxt == model.vocab.eos_id:
            break
        ids.append(nxt)
        out.append(nxt)
    return model.vocab.decode(out)


# -- persistence ----------------------------------------------------------------


def fingerprint(model: BackboneModel) -> str:
    """SHA-256 over dims and raw tensor bytes; pins head/backbone pairing."""
    hasher = hashlib.sha256()
    hasher.update(
        json.dumps(
            {"e": model.emb_dim, "d": model.hidden_dim, "W": model.window, "V": model.vocab.size}
        ).encode()
    )
    for name in TENSOR_NAMES:
        t = model.tensors()[name]
        hasher.update(name.encode())
        hasher.update(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return hasher.hexdigest()


def save_checkpoint(model: BackboneModel, path: str | Path) -> None:
    """Write the checkpoint JSON (row-major little-endian float32 tensors)."""
    tensors = {}
    for name, t in model.tensors().items():
        raw = np.ascontiguousarray(t, dtype="<f4")
        tensors[name] = {
            "shape": list(t.shape),
            "data_b64": base64.b64encode(raw.tobytes()).decode("ascii"),
        }
    obj = {
        "format_version": 1,
        "dims": {"e": model.emb_dim, "d": model.hidden_dim, "W": model.window, "V": model.vocab.size},
        "tensors": tensors,
    }
    Path(path).write_text(json.dumps(obj), encoding="utf-8")


def load_checkpoint(path: str | Path, vocab: Vocabulary) -> BackboneModel:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("format_version") != 1:
        raise BackboneError(f"unsupported checkpoint format_version {obj.get('format_version')!r}")
    dims = obj["dims"]
    if dims["V"] != vocab.size:
        raise BackboneError(f"checkpoint vocabulary size {dims['V']} != vocabulary {vocab.size}")
    arrays = {}
    for name in TENSOR_NAMES:
        entry = obj["tensors"][name]
        raw = base64.b64decode(entry["data_b64"])
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
        arrays[name] = arr
    model = BackboneModel(
        vocab=vocab,
        emb=arrays["token_embeddings"],
        wh=arrays["hidden_weights"],
        bh=arrays["hidden_bias"],
        wv=arrays["word_head"],
        bv=arrays["word_head_bias"],
        window=dims["W"],
    )
    if model.emb_dim != dims["e"] or model.hidden_dim != dims["d"]:
        raise BackboneError("checkpoint dims disagree with tensor shapes")
    return model
