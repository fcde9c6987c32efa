"""Character-level vocabulary shared by every model in the ensemble.

Word tokens are single printable-ASCII characters (minus ``<`` and ``>``,
which are reserved so control/expert display strings stay unambiguous in
rendered text). Four control tokens (pad, bos, eos, sep) complete the
vocabulary. Expert tokens are *not* part of the vocabulary: they occupy the
id range starting at ``|V|`` and exist only in the extended output head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Printable ASCII 0x20..0x7E minus '<' and '>' (reserved for display markup).
DEFAULT_CHARS = "".join(chr(c) for c in range(0x20, 0x7F) if chr(c) not in "<>")

CONTROL_NAMES = ("pad", "bos", "eos", "sep")
CONTROL_DISPLAY = {"pad": "<pad>", "bos": "<bos>", "eos": "<eos>", "sep": "<sep>"}

EXPERT_TOKEN_PREFIX = "<ExpertToken_"


class CodecError(ValueError):
    """Raised for any encode/decode contract violation."""


def expert_token_string(expert_index: int) -> str:
    """Canonical display string for expert token ``expert_index``."""
    if expert_index < 0:
        raise CodecError(f"expert index must be nonnegative, got {expert_index}")
    return f"{EXPERT_TOKEN_PREFIX}{expert_index}>"


@dataclass(frozen=True)
class Vocabulary:
    """Bijective token<->id map over word characters plus control tokens.

    Ids cover exactly ``[0, size)``. Word characters fill the non-control ids
    in order; control ids may sit anywhere in range (the serialized form pins
    them), defaulting to the four ids after the characters.
    """

    chars: str
    controls: dict[str, int]
    _char_to_id: dict[str, int] = field(init=False, repr=False, compare=False)
    _id_to_token: list[str] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(set(self.chars)) != len(self.chars):
            raise CodecError("duplicate character in vocabulary")
        if set(self.controls) != set(CONTROL_NAMES):
            raise CodecError(f"controls must be exactly {CONTROL_NAMES}")
        size = len(self.chars) + len(CONTROL_NAMES)
        ctrl_ids = list(self.controls.values())
        if len(set(ctrl_ids)) != len(ctrl_ids):
            raise CodecError("control ids must be distinct")
        if any(i < 0 or i >= size for i in ctrl_ids):
            raise CodecError(f"control ids must lie in [0, {size})")
        id_to_token: list[str | None] = [None] * size
        for name, cid in self.controls.items():
            id_to_token[cid] = CONTROL_DISPLAY[name]
        char_iter = iter(self.chars)
        for i in range(size):
            if id_to_token[i] is None:
                id_to_token[i] = next(char_iter)
        char_to_id = {
            tok: i
            for i, tok in enumerate(id_to_token)
            if len(tok) == 1  # type: ignore[arg-type]
        }
        object.__setattr__(self, "_id_to_token", id_to_token)
        object.__setattr__(self, "_char_to_id", char_to_id)

    # -- basic queries ------------------------------------------------------

    @property
    def size(self) -> int:
        """|V|: word tokens plus control tokens."""
        return len(self.chars) + len(CONTROL_NAMES)

    @property
    def pad_id(self) -> int:
        return self.controls["pad"]

    @property
    def bos_id(self) -> int:
        return self.controls["bos"]

    @property
    def eos_id(self) -> int:
        return self.controls["eos"]

    @property
    def sep_id(self) -> int:
        return self.controls["sep"]

    def is_control_id(self, token_id: int) -> bool:
        return token_id in self.controls.values()

    def is_word_id(self, token_id: int) -> bool:
        return 0 <= token_id < self.size and not self.is_control_id(token_id)

    def expert_token_id(self, expert_index: int) -> int:
        """Global id of expert token ``expert_index`` (beyond the word range)."""
        if expert_index < 0:
            raise CodecError(f"expert index must be nonnegative, got {expert_index}")
        return self.size + expert_index

    def is_expert_id(self, token_id: int) -> bool:
        return token_id >= self.size

    # -- encode / decode ----------------------------------------------------

    def encode(self, text: str) -> np.ndarray:
        """Map text to word-token ids, one id per character.

        Control tokens are never produced; callers add them explicitly.
        """
        ids = np.empty(len(text), dtype=np.int32)
        for i, ch in enumerate(text):
            tid = self._char_to_id.get(ch)
            if tid is None:
                raise CodecError(f"unsupported character {ch!r} at offset {i}")
            ids[i] = tid
        return ids

    def decode(self, ids) -> str:
        """Render ids back to text; controls render as their display strings.

        Expert-token ids are rejected: they never appear in rendered content.
        """
        out: list[str] = []
        for i, tid in enumerate(ids):
            tid = int(tid)
            if tid >= self.size:
                raise CodecError(
                    f"expert token id {tid} at offset {i} is not renderable as content"
                )
            if tid < 0:
                raise CodecError(f"out-of-range token id {tid} at offset {i}")
            out.append(self._id_to_token[tid])
        return "".join(out)

    # -- context codec ------------------------------------------------------
    #
    # Model backends exchange context as plain text in which control tokens
    # appear as their display strings ("<sep>" etc.). '<' is not a word
    # character, so the display strings parse unambiguously.

    def render_context(self, ids) -> str:
        """Text form of a context, control tokens as display strings."""
        return self.decode(ids)

    def parse_context(self, text: str) -> np.ndarray:
        """Inverse of :meth:`render_context`: display strings become control ids."""
        display_to_id = {CONTROL_DISPLAY[n]: cid for n, cid in self.controls.items()}
        ids: list[int] = []
        i = 0
        while i < len(text):
            ch = text[i]
            if ch == "<":
                end = text.find(">", i)
                if end == -1:
                    raise CodecError(f"unterminated control marker at offset {i}")
                marker = text[i : end + 1]
                cid = display_to_id.get(marker)
                if cid is None:
                    raise CodecError(f"unknown control marker {marker!r} at offset {i}")
                ids.append(cid)
                i = end + 1
                continue
            tid = self._char_to_id.get(ch)
            if tid is None:
                raise CodecError(f"unsupported character {ch!r} at offset {i}")
            ids.append(tid)
            i += 1
        return np.asarray(ids, dtype=np.int32)

    # -- persistence --------------------------------------------------------

    def to_json(self) -> dict:
        return {"format_version": 1, "chars": self.chars, "controls": dict(self.controls)}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        if obj.get("format_version") != 1:
            raise CodecError(f"unsupported vocabulary format_version {obj.get('format_version')!r}")
        return cls(chars=obj["chars"], controls=dict(obj["controls"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def default_vocabulary() -> Vocabulary:
    """The shared vocabulary: 93 printable chars + 4 trailing controls."""
    n = len(DEFAULT_CHARS)
    return Vocabulary(
        chars=DEFAULT_CHARS,
        controls={"pad": n, "bos": n + 1, "eos": n + 2, "sep": n + 3},
    )
