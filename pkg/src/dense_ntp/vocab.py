"""Unified vocabulary, special tokens and category -> sub-token sets.

Special tokens are appended after the base tokens in a fixed order::

    <FG> <BG> <OTHERS> <depth> <image> <custom_0> ... <custom_1000>

so for ``n`` base tokens ``<FG>`` has ID ``n`` and ``<custom_0>`` has ID
``n + 5``.  ``<custom_b>`` always sits at ``custom_id(0) + b``.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

from .errors import DenseNTPError

N_DEPTH_BINS = 1000
MARKER_TOKENS: Tuple[str, ...] = ("<FG>", "<BG>", "<OTHERS>", "<depth>", "<image>")
CUSTOM_TOKENS: Tuple[str, ...] = tuple(f"<custom_{b}>" for b in range(N_DEPTH_BINS + 1))
SPECIAL_TOKENS: Tuple[str, ...] = MARKER_TOKENS + CUSTOM_TOKENS

# lowercase letters and digits; enough for character fallback on category names
CHARACTER_TOKENS: Tuple[str, ...] = tuple(string.ascii_lowercase + string.digits + "-_'.")


class DuplicateToken(DenseNTPError):
    def __init__(self, token: str):
        super().__init__(f"duplicate token {token!r}")
        self.token = token


class EmptyVocabulary(DenseNTPError):
    pass


class EmptyName(DenseNTPError):
    pass


class UnknownCharacter(DenseNTPError):
    """A character of a category name has no token, not even a single-char one."""


class EmptyTokenSet(DenseNTPError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    tokens: Tuple[str, ...]
    n_base: int
    _index: Dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        if not self._index:
            object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index[token]

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    @property
    def base_tokens(self) -> Tuple[str, ...]:
        return self.tokens[: self.n_base]

    @property
    def fg_id(self) -> int:
        return self.n_base

    @property
    def bg_id(self) -> int:
        return self.n_base + 1

    @property
    def others_id(self) -> int:
        return self.n_base + 2

    @property
    def depth_id(self) -> int:
        return self.n_base + 3

    def custom_id(self, b: int) -> int:
        if not 0 <= b <= N_DEPTH_BINS:
            raise IndexError(f"custom token index {b} outside 0..{N_DEPTH_BINS}")
        return self.n_base + len(MARKER_TOKENS) + b

    def depth_slice(self) -> slice:
        """IDs of ``<custom_1>``..``<custom_1000>`` (bin 0 excluded)."""
        start = self.custom_id(1)
        return slice(start, start + N_DEPTH_BINS)

    def semantic_slice(self) -> slice:
        """Base tokens plus the marker tokens; everything eligible for label supervision."""
        return slice(0, self.n_base + len(MARKER_TOKENS))

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        n_special = len(SPECIAL_TOKENS)
        if len(lines) <= n_special or tuple(lines[-n_special:]) != SPECIAL_TOKENS:
            raise DenseNTPError(f"{path}: special tokens missing or out of order")
        return build_vocabulary(lines[:-n_special])


def build_vocabulary(base_tokens: Sequence[str]) -> Vocabulary:
    base = list(base_tokens)
    if not base:
        raise EmptyVocabulary("base_tokens must not be empty")
    seen = set()
    for tok in base + list(SPECIAL_TOKENS):
        if tok in seen:
            raise DuplicateToken(tok)
        if "\n" in tok or tok == "":
            raise DenseNTPError(f"token {tok!r} cannot be serialized one per line")
        seen.add(tok)
    return Vocabulary(tokens=tuple(base) + SPECIAL_TOKENS, n_base=len(base))


def default_base_tokens(words: Iterable[str] = ()) -> List[str]:
    """Single characters followed by ``words`` (lowercased, deduplicated, order kept)."""
    out = list(CHARACTER_TOKENS)
    seen = set(out)
    for w in words:
        w = w.lower()
        if w and w not in seen:
            seen.add(w)
            out.append(w)
    return out


def _segment(name: str, vocab: Vocabulary) -> List[int]:
    text = name.strip().lower().replace(" ", "")
    if not text:
        raise EmptyName("category name is empty")
    max_len = max(len(t) for t in vocab.base_tokens)
    ids = []
    pos = 0
    while pos < len(text):
        for end in range(min(len(text), pos + max_len), pos, -1):
            piece = text[pos:end]
            # only base tokens take part in matching; specials are never spelled out
            idx = vocab._index.get(piece)
            if idx is not None and idx < vocab.n_base:
                ids.append(idx)
                pos = end
                break
        else:
            raise UnknownCharacter(f"no token covers {text[pos]!r} in {name!r}")
    return ids


def tokenize_category(name: str, vocab: Vocabulary) -> frozenset:
    """Greedy longest-match segmentation of ``name`` into vocabulary IDs.

    Spaces are stripped and the name is lowercased before matching, so
    ``"Traffic Light"`` is matched as ``"trafficlight"``.
    """
    return frozenset(_segment(name, vocab))


@dataclass(frozen=True)
class CategoryTokenMap:
    category_names: Tuple[str, ...]
    token_sets: Tuple[frozenset, ...]
    # sub-token IDs in spelling order; the first one is the single-label target
    token_sequences: Tuple[Tuple[int, ...], ...]
    vocab_size: int
    # [start, stop) of the IDs a semantic annotation makes valid
    semantic_range: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        for name, s in zip(self.category_names, self.token_sets):
            if not s:
                raise EmptyTokenSet(f"category {name!r} has no tokens")
            if max(s) >= self.vocab_size or min(s) < 0:
                raise DenseNTPError(f"category {name!r} references IDs outside the vocabulary")
        if self.semantic_range == (0, 0):
            object.__setattr__(self, "semantic_range", (0, self.vocab_size))

    @classmethod
    def from_names(cls, names: Sequence[str], vocab: Vocabulary) -> "CategoryTokenMap":
        seqs = tuple(tuple(_segment(n, vocab)) for n in names)
        return cls(
            category_names=tuple(names),
            token_sets=tuple(frozenset(s) for s in seqs),
            token_sequences=seqs,
            vocab_size=vocab.size,
            semantic_range=(vocab.semantic_slice().start, vocab.semantic_slice().stop),
        )

    @classmethod
    def from_sets(cls, names: Sequence[str], sets: Sequence[Iterable[int]], vocab_size: int) -> "CategoryTokenMap":
        seqs = tuple(tuple(sorted(set(s))) for s in sets)
        return cls(tuple(names), tuple(frozenset(s) for s in seqs), seqs, vocab_size)

    def __len__(self) -> int:
        return len(self.category_names)

    def first_token(self, k: int) -> int:
        return self.token_sequences[k][0]
