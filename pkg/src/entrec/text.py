"""Vocabulary construction, two-level query segmentation, hashed ngram features.

Segmentation is rule based and script aware: runs of alphanumeric
characters form one token each (Latin, digits, ...), CJK ideographs and
kana split per character, everything else separates. Semantic-level
tokens are the basic tokens with greedy longest-match phrase merging
against a user-supplied phrase dictionary. Ngrams are hashed into a
fixed bucket space instead of keeping an explicit ngram vocabulary.
"""

from __future__ import annotations

import json
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

from .errors import EmptyCorpusError, EmptyQueryError, FormatError

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

DEFAULT_NGRAM_ORDERS = (2, 3)
DEFAULT_NUM_BUCKETS = 2 ** 20
DEFAULT_MAX_LEN = 32

# Ideographs plus kana/hangul: scripts without spaces split per character.
_CJK_RANGES = (
    (0x2E80, 0x2EFF),    # CJK radicals
    (0x3040, 0x30FF),    # hiragana, katakana
    (0x3400, 0x4DBF),    # CJK ext A
    (0x4E00, 0x9FFF),    # CJK unified
    (0xAC00, 0xD7AF),    # hangul syllables
    (0xF900, 0xFAFF),    # CJK compat
    (0x20000, 0x2A6DF),  # CJK ext B
)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a; stable across platforms and runs."""
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def basic_segment(text: str) -> list[str]:
    """Script-aware split into basic-level tokens."""
    tokens: list[str] = []
    word: list[str] = []

    def flush():
        if word:
            tokens.append("".join(word))
            word.clear()

    for ch in text:
        if _is_cjk(ch):
            flush()
            tokens.append(ch)
        elif ch.isalnum():
            word.append(ch)
        else:
            flush()
    flush()
    return tokens


class PhraseDict:
    """Multi-token phrases that merge into single semantic-level tokens.

    Matching is greedy longest-match over basic tokens. Merged CJK-only
    phrases join without a separator ("天" + "气" -> "天气"); everything
    else joins with "_" ("cold weather" -> "cold_weather").
    """

    def __init__(self, phrases=()):
        self._by_first: dict[str, list[tuple[str, ...]]] = {}
        self.max_len = 1
        self.phrases: list[str] = []
        for phrase in phrases:
            self.add(phrase)

    def add(self, phrase: str):
        toks = tuple(basic_segment(phrase))
        if len(toks) < 2:
            return  # single-token phrases never change segmentation
        self.phrases.append(phrase)
        self._by_first.setdefault(toks[0], []).append(toks)
        self._by_first[toks[0]].sort(key=len, reverse=True)
        self.max_len = max(self.max_len, len(toks))

    def __len__(self):
        return len(self.phrases)

    @staticmethod
    def merge_token(parts) -> str:
        if all(len(p) == 1 and _is_cjk(p) for p in parts):
            return "".join(parts)
        return "_".join(parts)

    def merge(self, tokens: list[str]) -> list[str]:
        out: list[str] = []
        i = 0
        n = len(tokens)
        while i < n:
            matched = None
            for cand in self._by_first.get(tokens[i], ()):
                k = len(cand)
                if i + k <= n and tuple(tokens[i:i + k]) == cand:
                    matched = cand
                    break
            if matched is None:
                out.append(tokens[i])
                i += 1
            else:
                out.append(self.merge_token(matched))
                i += len(matched)
        return out

    @classmethod
    def load(cls, path) -> "PhraseDict":
        with open(path, encoding="utf-8") as fh:
            return cls(line.strip() for line in fh if line.strip())


def segment(text: str, phrase_dict: PhraseDict | None = None):
    """(basic_tokens, semantic_tokens) for one query string."""
    basic = basic_segment(text)
    if not basic:
        raise EmptyQueryError(f"no tokens in query {text!r}")
    semantic = phrase_dict.merge(basic) if phrase_dict is not None else list(basic)
    return basic, semantic


def extract_ngrams(tokens, orders=DEFAULT_NGRAM_ORDERS, num_buckets=DEFAULT_NUM_BUCKETS):
    """Hashed ids of contiguous ngrams, lower orders first, token order within."""
    if num_buckets < 1:
        raise ValueError("num_buckets must be >= 1")
    bad = set(orders) - {2, 3}
    if bad:
        raise ValueError(f"unsupported ngram orders: {sorted(bad)}")
    ids: list[int] = []
    for order in sorted(set(orders)):
        for i in range(len(tokens) - order + 1):
            key = "\x1f".join(tokens[i:i + order]).encode("utf-8")
            ids.append(fnv1a64(key) % num_buckets)
    return ids


@dataclass
class Vocabulary:
    """Dense token and entity id spaces with frequencies.

    Word ids reserve PAD=0 and UNK=1; remaining ids are assigned by
    descending frequency with lexicographic tie-break, which makes entity
    id double as frequency rank (used by the log-uniform sampler).
    """

    word_to_id: dict[str, int]
    entity_to_id: dict[str, int]
    word_freq: dict[str, int]
    entity_freq: dict[str, int]
    min_count: int = 1

    id_to_word: list[str] = field(init=False)
    id_to_entity: list[str] = field(init=False)

    def __post_init__(self):
        self.id_to_word = [""] * len(self.word_to_id)
        for w, i in self.word_to_id.items():
            self.id_to_word[i] = w
        self.id_to_entity = [""] * len(self.entity_to_id)
        for e, i in self.entity_to_id.items():
            self.id_to_entity[i] = e

    @property
    def num_words(self) -> int:
        return len(self.word_to_id)

    @property
    def num_entities(self) -> int:
        return len(self.entity_to_id)

    def word_id(self, token: str) -> int:
        return self.word_to_id.get(token, UNK_ID)

    def entity_id(self, name: str):
        return self.entity_to_id.get(name)

    def entity_counts_by_id(self):
        return [self.entity_freq[name] for name in self.id_to_entity]

    def to_json(self, meta=None) -> str:
        payload = {
            "version": 1,
            "min_count": self.min_count,
            "meta": meta or {},
            "words": [[w, i, self.word_freq.get(w, 0)] for w, i in sorted(self.word_to_id.items(), key=lambda kv: kv[1])],
            "entities": [[e, i, self.entity_freq.get(e, 0)] for e, i in sorted(self.entity_to_id.items(), key=lambda kv: kv[1])],
        }
        return json.dumps(payload, ensure_ascii=False, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        payload = json.loads(text)
        if payload.get("version") != 1:
            raise FormatError(f"unsupported vocabulary version {payload.get('version')!r}")
        word_to_id = {w: i for w, i, _ in payload["words"]}
        entity_to_id = {e: i for e, i, _ in payload["entities"]}
        _check_dense_ids(word_to_id, entity_to_id)
        vocab = cls(
            word_to_id=word_to_id,
            entity_to_id=entity_to_id,
            word_freq={w: f for w, _, f in payload["words"]},
            entity_freq={e: f for e, _, f in payload["entities"]},
            min_count=payload.get("min_count", 1),
        )
        vocab.validate()
        return vocab

    def save(self, path, meta=None):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json(meta))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def validate(self):
        _check_dense_ids(self.word_to_id, self.entity_to_id)


def _check_dense_ids(word_to_id, entity_to_id):
    for mapping, label in ((word_to_id, "word"), (entity_to_id, "entity")):
        ids = sorted(mapping.values())
        if ids != list(range(len(mapping))):
            raise FormatError(f"{label} ids are not a dense range")
    if word_to_id.get(PAD_TOKEN) != PAD_ID or word_to_id.get(UNK_TOKEN) != UNK_ID:
        raise FormatError("PAD/UNK reserved ids missing")


def normalize_text(text: str) -> str:
    """NFKC fold plus casefold; applied before segmentation everywhere."""
    return unicodedata.normalize("NFKC", text).casefold().strip()


def build_vocab(pairs, min_count=1, phrase_dict=None, pretokenized=False) -> Vocabulary:
    """Vocabulary over a stream of (query, entity[, weight]) records.

    Token counts cover both basic- and semantic-level streams so merged
    phrase tokens receive ids too. Ids are assigned by descending
    frequency, ties broken lexicographically, so the result is invariant
    to the order of the input stream.
    """
    word_counts: Counter = Counter()
    entity_counts: Counter = Counter()
    seen = False
    for record in pairs:
        query, entity = record[0], record[1]
        seen = True
        text = normalize_text(query)
        if pretokenized:
            basic = text.split()
            semantic = phrase_dict.merge(basic) if phrase_dict else list(basic)
        else:
            try:
                basic, semantic = segment(text, phrase_dict)
            except EmptyQueryError:
                continue
        word_counts.update(basic)
        word_counts.update(semantic)
        entity_counts[entity.strip()] += 1
    if not seen:
        raise EmptyCorpusError("empty training-pair stream")

    def admitted(counts):
        kept = [(t, c) for t, c in counts.items() if c >= min_count]
        kept.sort(key=lambda tc: (-tc[1], tc[0]))
        return kept

    words = admitted(word_counts)
    entities = admitted(entity_counts)
    word_to_id = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
    for tok, _ in words:
        word_to_id[tok] = len(word_to_id)
    entity_to_id = {name: i for i, (name, _) in enumerate(entities)}
    word_freq = {PAD_TOKEN: 0, UNK_TOKEN: 0}
    word_freq.update(dict(words))
    return Vocabulary(
        word_to_id=word_to_id,
        entity_to_id=entity_to_id,
        word_freq=word_freq,
        entity_freq=dict(entities),
        min_count=min_count,
    )


@dataclass
class TokenizedQuery:
    """Id-level view of one query; `tokens` keeps the basic-level strings."""

    raw: str
    tokens: list[str]
    basic_ids: list[int]
    semantic_ids: list[int]
    ngram_ids: list[int]

    @property
    def n(self) -> int:
        return len(self.basic_ids)


class QueryTokenizer:
    """Maps raw query text to id sequences against a fixed vocabulary.

    Immutable after construction; safe to share across threads. With
    ``pretokenized=True`` the input is split on whitespace and the
    script-aware segmenter is bypassed.
    """

    def __init__(self, vocab: Vocabulary, phrase_dict: PhraseDict | None = None,
                 ngram_orders=DEFAULT_NGRAM_ORDERS, num_buckets=DEFAULT_NUM_BUCKETS,
                 max_len=DEFAULT_MAX_LEN, pretokenized=False):
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        self.vocab = vocab
        self.phrase_dict = phrase_dict
        self.ngram_orders = tuple(sorted(set(ngram_orders)))
        self.num_buckets = int(num_buckets)
        self.max_len = int(max_len)
        self.pretokenized = bool(pretokenized)

    def tokenize(self, text: str) -> TokenizedQuery:
        norm = normalize_text(text)
        if self.pretokenized:
            basic = norm.split()
            if not basic:
                raise EmptyQueryError(f"no tokens in query {text!r}")
        else:
            basic = basic_segment(norm)
            if not basic:
                raise EmptyQueryError(f"no tokens in query {text!r}")
        basic = basic[: self.max_len]
        semantic = (self.phrase_dict.merge(basic) if self.phrase_dict else list(basic))[: self.max_len]
        ngram_ids = (
            extract_ngrams(basic, self.ngram_orders, self.num_buckets)
            if self.ngram_orders else []
        )
        return TokenizedQuery(
            raw=text,
            tokens=basic,
            basic_ids=[self.vocab.word_id(t) for t in basic],
            semantic_ids=[self.vocab.word_id(t) for t in semantic],
            ngram_ids=ngram_ids,
        )

    def config(self) -> dict:
        return {
            "ngram_orders": list(self.ngram_orders),
            "num_buckets": self.num_buckets,
            "max_len": self.max_len,
            "pretokenized": self.pretokenized,
            "phrases": sorted(self.phrase_dict.phrases) if self.phrase_dict else [],
        }

    @classmethod
    def from_config(cls, vocab: Vocabulary, cfg: dict) -> "QueryTokenizer":
        phrases = cfg.get("phrases") or []
        return cls(
            vocab,
            phrase_dict=PhraseDict(phrases) if phrases else None,
            ngram_orders=tuple(cfg.get("ngram_orders", DEFAULT_NGRAM_ORDERS)),
            num_buckets=cfg.get("num_buckets", DEFAULT_NUM_BUCKETS),
            max_len=cfg.get("max_len", DEFAULT_MAX_LEN),
            pretokenized=cfg.get("pretokenized", False),
        )
