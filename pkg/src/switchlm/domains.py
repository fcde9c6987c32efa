"""Deterministic generators, graders, and filters for six micro-domains.

Each domain is a pure answer function plus a seeded generator over a space
of at least 7,500 distinct questions. Answers are short and exactly
gradable, and each domain is learnable by the toy backbone while remaining
hard for a model that only saw a sliver of it — which is what manufactures
the expert/meta skill gap the routing head trains against.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

DOMAIN_NAMES = ("mod-arith", "reverse", "caesar3", "sort-digits", "roman", "paren-balance")
GENERAL_DOMAIN = "general"


class DomainError(ValueError):
    """Unknown domain or malformed query."""


class DomainExhausted(RuntimeError):
    """Generator ran out of distinct questions before reaching the request."""

    def __init__(self, domain: str, requested: int, achievable: int):
        super().__init__(
            f"domain {domain!r} exhausted: {achievable} distinct pairs achievable, "
            f"{requested} requested"
        )
        self.domain = domain
        self.requested = requested
        self.achievable = achievable


@dataclass(frozen=True)
class QueryResponsePair:
    query: str
    response: str
    domain: str


# -- answer functions ---------------------------------------------------------
#
# Every function parses the query text itself, so graders work on any query
# matching the template, generated or not.


def _mod_arith_answer(query: str) -> str:
    m = re.fullmatch(r"\((\d+)\+(\d+)\) mod (\d+) = \?", query)
    if not m:
        raise DomainError(f"malformed mod-arith query: {query!r}")
    a, b, mod = int(m.group(1)), int(m.group(2)), int(m.group(3))
    if mod == 0:
        raise DomainError("modulus must be nonzero")
    return str((a + b) % mod)


def _payload(query: str, prefix: str) -> str:
    if not query.startswith(prefix):
        raise DomainError(f"query does not start with {prefix!r}: {query!r}")
    return query[len(prefix) :]


def _reverse_answer(query: str) -> str:
    return _payload(query, "reverse: ")[::-1]


def _caesar3_answer(query: str) -> str:
    s = _payload(query, "caesar3: ")
    return "".join(chr((ord(c) - ord("a") + 3) % 26 + ord("a")) if "a" <= c <= "z" else c for c in s)


def _sort_digits_answer(query: str) -> str:
    s = _payload(query, "sort: ")
    if not s.isdigit():
        raise DomainError(f"sort-digits payload must be digits: {s!r}")
    return "".join(sorted(s))


_ROMAN_VALUES = (
    (1000, "M"), (900, "CM"), (500, "D"), (400, "CD"), (100, "C"), (90, "XC"),
    (50, "L"), (40, "XL"), (10, "X"), (9, "IX"), (5, "V"), (4, "IV"), (1, "I"),
)


def to_roman(n: int) -> str:
    if not 1 <= n <= 3999:
        raise DomainError(f"roman numerals cover 1..3999, got {n}")
    out = []
    for value, sym in _ROMAN_VALUES:
        while n >= value:
            out.append(sym)
            n -= value
    return "".join(out)


def from_roman(s: str) -> int:
    i, total = 0, 0
    for value, sym in _ROMAN_VALUES:
        while s.startswith(sym, i):
            total += value
            i += len(sym)
    if i != len(s) or not s or to_roman(total) != s:
        raise DomainError(f"not a canonical roman numeral: {s!r}")
    return total


def _roman_answer(query: str) -> str:
    if query.startswith("roman: "):
        return to_roman(int(_payload(query, "roman: ")))
    if query.startswith("arabic: "):
        return str(from_roman(_payload(query, "arabic: ")))
    raise DomainError(f"malformed roman query: {query!r}")


_BRACKETS = {"(": ")", "[": "]"}
_BRACKET_CHARS = "()[]"


def _is_balanced(s: str) -> bool:
    stack: list[str] = []
    for c in s:
        if c in _BRACKETS:
            stack.append(_BRACKETS[c])
        elif not stack or stack.pop() != c:
            return False
    return not stack


def _paren_balance_answer(query: str) -> str:
    return "yes" if _is_balanced(_payload(query, "balanced? ")) else "no"


ANSWER_FUNCS = {
    "mod-arith": _mod_arith_answer,
    "reverse": _reverse_answer,
    "caesar3": _caesar3_answer,
    "sort-digits": _sort_digits_answer,
    "roman": _roman_answer,
    "paren-balance": _paren_balance_answer,
}


def answer_for(domain: str, query: str) -> str:
    """The unique correct answer for a query of the given domain."""
    try:
        fn = ANSWER_FUNCS[domain]
    except KeyError:
        raise DomainError(f"unknown domain {domain!r}") from None
    return fn(query)


def grade(domain: str, query: str, generated: str) -> bool:
    """Exact match of the trimmed generated answer against the answer function."""
    return generated.strip() == answer_for(domain, query)


# -- generators ----------------------------------------------------------------

_LOWER = "abcdefghijklmnopqrstuvwxyz"

# Per-domain distribution knobs. Defaults keep every domain's question space
# comfortably above 7,500 distinct items; benchmark configs may narrow them
# (shorter payloads, smaller number ranges) to fit the toy backbone.
DOMAIN_DEFAULTS: dict[str, dict] = {
    "mod-arith": {"min_addend": 0, "max_addend": 99, "moduli": (2, 5, 10)},
    "reverse": {"min_len": 3, "max_len": 4, "alphabet": _LOWER},
    "caesar3": {"min_len": 3, "max_len": 4, "alphabet": _LOWER},
    "sort-digits": {"min_len": 4, "max_len": 5, "digits": "0123456789"},
    "roman": {"max_n": 3999, "directions": ("roman", "arabic")},
    "paren-balance": {"lengths": (4, 6, 8, 10, 12)},
}


def _gen_mod_arith(rng: np.random.Generator, min_addend: int, max_addend: int, moduli) -> str:
    if not 0 <= min_addend <= max_addend:
        raise DomainError(f"need 0 <= min_addend <= max_addend, got {min_addend}..{max_addend}")
    a = int(rng.integers(min_addend, max_addend + 1))
    b = int(rng.integers(min_addend, max_addend + 1))
    m = int(moduli[rng.integers(0, len(moduli))])
    return f"({a}+{b}) mod {m} = ?"


def _gen_word(rng: np.random.Generator, prefix: str, min_len: int, max_len: int, alphabet: str) -> str:
    n = int(rng.integers(min_len, max_len + 1))
    s = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=n))
    return f"{prefix}{s}"


def _balanced_string(rng: np.random.Generator, length: int) -> str:
    opens_left = length // 2
    stack: list[str] = []
    out: list[str] = []
    while len(out) < length:
        # depth + 2 * opens_left == remaining slots holds throughout, so the
        # only forced move is closing once all opens are spent.
        must_close = opens_left == 0
        can_close = bool(stack)
        if can_close and (must_close or rng.random() < 0.5):
            out.append(stack.pop())
        else:
            br = "(["[rng.integers(0, 2)]
            stack.append(_BRACKETS[br])
            out.append(br)
            opens_left -= 1
    return "".join(out)


def _gen_paren_balance(rng: np.random.Generator, balanced: bool, lengths) -> str:
    length = int(lengths[rng.integers(0, len(lengths))])
    s = _balanced_string(rng, length)
    if not balanced:
        pos = int(rng.integers(0, length))
        others = [c for c in _BRACKET_CHARS if c != s[pos]]
        s = s[:pos] + others[rng.integers(0, 3)] + s[pos + 1 :]
    return f"balanced? {s}"


def generate_domain(domain: str, n: int, seed: int = 0, **params) -> list[QueryResponsePair]:
    """n distinct query-response pairs for a domain, deterministic given seed.

    Keyword arguments override the DOMAIN_DEFAULTS distribution knobs.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    if domain not in ANSWER_FUNCS:
        raise DomainError(f"unknown domain {domain!r}")
    opts = dict(DOMAIN_DEFAULTS[domain])
    unknown = set(params) - set(opts)
    if unknown:
        raise DomainError(f"unknown parameters for {domain!r}: {sorted(unknown)}")
    opts.update(params)
    rng = np.random.default_rng(seed)
    queries: list[str] = []
    seen: set[str] = set()

    if domain == "roman":
        # Small closed space (directions x max_n values): enumerate, shuffle.
        top = int(opts["max_n"])
        if not 1 <= top <= 3999:
            raise DomainError(f"max_n must be in 1..3999, got {top}")
        directions = tuple(opts["directions"])
        if not directions or set(directions) - {"roman", "arabic"}:
            raise DomainError(f"directions must be a non-empty subset of roman/arabic, got {directions!r}")
        universe = []
        if "roman" in directions:
            universe += [f"roman: {k}" for k in range(1, top + 1)]
        if "arabic" in directions:
            universe += [f"arabic: {to_roman(k)}" for k in range(1, top + 1)]
        if n > len(universe):
            raise DomainExhausted(domain, n, len(universe))
        order = rng.permutation(len(universe))
        queries = [universe[i] for i in order[:n]]
    else:
        max_attempts = 60 * n + 10_000
        attempts = 0
        while len(queries) < n:
            if attempts >= max_attempts:
                raise DomainExhausted(domain, n, len(queries))
            attempts += 1
            if domain == "mod-arith":
                q = _gen_mod_arith(rng, opts["min_addend"], opts["max_addend"], opts["moduli"])
            elif domain == "reverse":
                q = _gen_word(rng, "reverse: ", opts["min_len"], opts["max_len"], opts["alphabet"])
            elif domain == "caesar3":
                q = _gen_word(rng, "caesar3: ", opts["min_len"], opts["max_len"], opts["alphabet"])
            elif domain == "sort-digits":
                q = _gen_word(rng, "sort: ", opts["min_len"], opts["max_len"], opts["digits"])
            else:  # paren-balance: alternate classes for an exact 50/50 split
                q = _gen_paren_balance(rng, len(queries) % 2 == 0, opts["lengths"])
            if q not in seen:
                seen.add(q)
                queries.append(q)

    return [QueryResponsePair(q, answer_for(domain, q), domain) for q in queries]


# -- general filler -------------------------------------------------------------

_FILLER_WORDS = (
    "the a one this that small large old young red blue green quiet bright "
    "bird cat dog fox tree river stone cloud house road child farmer sailor "
    "walks runs sees holds finds keeps makes takes gives leaves near over under "
    "beside behind toward past around along with without during after before"
).split()


def filler_sentence(rng: np.random.Generator, n_words: int) -> str:
    return " ".join(_FILLER_WORDS[i] for i in rng.integers(0, len(_FILLER_WORDS), size=n_words))


def generate_filler_sentences(n: int, seed: int = 0, min_words: int = 5, max_words: int = 9) -> list[str]:
    """Word-salad sentences for general LM training text."""
    rng = np.random.default_rng(seed)
    return [filler_sentence(rng, int(rng.integers(min_words, max_words + 1))) for _ in range(n)]


def generate_general_pairs(n: int, seed: int = 0) -> list[QueryResponsePair]:
    """Continuation pairs outside every expert's domain (near-zero loss gap)."""
    rng = np.random.default_rng(seed)
    out = []
    seen: set[str] = set()
    while len(out) < n:
        words = [_FILLER_WORDS[i] for i in rng.integers(0, len(_FILLER_WORDS), size=7)]
        q = "continue: " + " ".join(words[:4])
        if q in seen:
            continue
        seen.add(q)
        out.append(QueryResponsePair(q, " ".join(words[4:]), GENERAL_DOMAIN))
    return out


# -- near-duplicate filtering ----------------------------------------------------


def char_trigrams(s: str) -> frozenset:
    if len(s) < 3:
        return frozenset((s,))
    return frozenset(s[i : i + 3] for i in range(len(s) - 2))


def trigram_jaccard(a: str, b: str) -> float:
    ga, gb = char_trigrams(a), char_trigrams(b)
    inter = len(ga & gb)
    union = len(ga | gb)
    return inter / union if union else 1.0


def dedup_filter(candidates, test_set, threshold: float = 0.8):
    """Drop candidates whose query is a near-duplicate of any test question.

    Near-duplicate means character-trigram Jaccard similarity strictly above
    ``threshold``. Idempotent; preserves candidate order.
    """
    if not 0.0 < threshold <= 1.0:
        raise DomainError(f"threshold must be in (0, 1], got {threshold}")
    test_queries = [t.query if isinstance(t, QueryResponsePair) else str(t) for t in test_set]
    test_grams = [char_trigrams(q) for q in test_queries]
    kept = []
    for cand in candidates:
        grams = char_trigrams(cand.query)
        dup = False
        for tg in test_grams:
            union = len(grams | tg)
            if union and len(grams & tg) / union > threshold:
                dup = True
                break
        if not dup:
            kept.append(cand)
    return kept


# -- dataset files ----------------------------------------------------------------


def write_pairs_jsonl(pairs, path: str | Path) -> None:
    """JSON-lines dataset file: one {query, response, domain} object per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in pairs:
            f.write(json.dumps(asdict(p), ensure_ascii=False) + "\n")


def read_pairs_jsonl(path: str | Path) -> list[QueryResponsePair]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out.append(QueryResponsePair(obj["query"], obj["response"], obj["domain"]))
    return out
