"""Training-pair construction from search-log files.

Four sources produce (query, entity, weight) pairs: click logs filtered
by CTR, doc logs mined with dictionary NER over title and summary,
related-query logs mined with dictionary entity linking, and tag rules
applied to raw query streams. Preprocessing then runs in a fixed order:
blacklist/quality filter, low-frequency filter, high-frequency
subsampling, shuffle. All steps are seed-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DuplicateRulePatternError, FormatError
from .text import basic_segment, normalize_text

# -- records ------------------------------------------------------------


@dataclass
class ClickLogRecord:
    query: str
    entity: str
    impressions: int
    clicks: int

    def __post_init__(self):
        if self.impressions <= 0:
            raise FormatError(f"impressions must be > 0: {self}")
        if self.clicks > self.impressions or self.clicks < 0:
            raise FormatError(f"clicks out of range: {self}")

    @property
    def ctr(self) -> float:
        return self.clicks / self.impressions


@dataclass
class DocLogRecord:
    query: str
    title: str
    summary: str
    clicks: int

    def __post_init__(self):
        if self.clicks < 0:
            raise FormatError(f"doc click count must be >= 0: {self}")


@dataclass
class RelatedQueryRecord:
    query: str
    recommended: str

    def __post_init__(self):
        if not self.query.strip() or not self.recommended.strip():
            raise FormatError("related-query records need both queries")


@dataclass
class TagRule:
    pattern: str
    kind: str  # "substring" or "exact"
    tag: str
    entities: tuple

    def __post_init__(self):
        if self.kind not in ("substring", "exact"):
            raise FormatError(f"unknown rule kind {self.kind!r}")
        if not self.entities:
            raise FormatError(f"rule {self.pattern!r} has no entities")

    def matches(self, query_norm: str) -> bool:
        pattern = normalize_text(self.pattern)
        if self.kind == "exact":
            return query_norm == pattern
        return pattern in query_norm


Pair = tuple  # (query, entity, weight)


# -- dictionary spotting --------------------------------------------------


class EntitySpotter:
    """Greedy longest-match dictionary NER over segmented text.

    Entity names are segmented with the same rules as queries, so
    multi-token names ("new york") match across token boundaries and the
    longest candidate always wins over its prefixes.
    """

    def __init__(self, entity_names):
        self._by_first: dict = {}
        self.canonical: dict = {}
        self.max_len = 1
        for name in entity_names:
            toks = tuple(basic_segment(normalize_text(name)))
            if not toks:
                continue
            self.canonical[toks] = name
            self._by_first.setdefault(toks[0], []).append(toks)
            self.max_len = max(self.max_len, len(toks))
        for cands in self._by_first.values():
            cands.sort(key=len, reverse=True)

    def spot(self, text: str) -> list:
        """Entity names found in text, in match order, deduplicated."""
        tokens = basic_segment(normalize_text(text))
        found = []
        seen = set()
        i = 0
        while i < len(tokens):
            matched = None
            for cand in self._by_first.get(tokens[i], ()):
                k = len(cand)
                if i + k <= len(tokens) and tuple(tokens[i: i + k]) == cand:
                    matched = cand
                    break
            if matched is None:
                i += 1
            else:
                name = self.canonical[matched]
                if name not in seen:
                    seen.add(name)
                    found.append(name)
                i += len(matched)
        return found


# -- pair builders --------------------------------------------------------


def build_query_click_entity(records, ctr_threshold) -> list:
    if not 0.0 < ctr_threshold <= 1.0:
        raise FormatError(f"ctr_threshold must be in (0, 1], got {ctr_threshold}")
    return [
        (r.query, r.entity, r.ctr)
        for r in records
        if r.ctr >= ctr_threshold
    ]


def build_query_doc_entity(records, spotter: EntitySpotter,
                           min_doc_clicks=1) -> list:
    pairs = []
    for r in records:
        if r.clicks < min_doc_clicks:
            continue
        names = spotter.spot(r.title)
        seen = set(names)
        for name in spotter.spot(r.summary):
            if name not in seen:
                seen.add(name)
                names.append(name)
        pairs.extend((r.query, name, 1.0) for name in names)
    return pairs


def build_query_query_entity(records, spotter: EntitySpotter) -> list:
    pairs = []
    for r in records:
        pairs.extend((r.query, name, 1.0) for name in spotter.spot(r.recommended))
    return pairs


def build_query_tag_entity(queries, rules) -> list:
    pairs = []
    for query in queries:
        qnorm = normalize_text(query)
        for rule in rules:  # first matching rule wins
            if rule.matches(qnorm):
                pairs.extend((query, e, 1.0) for e in rule.entities)
                break
    return pairs


# -- filters ----------------------------------------------------------------


def filter_low_quality(pairs, blacklist, quality_scores=None,
                       min_quality=None):
    """(kept pairs, removed count). Blacklist plus optional score floor."""
    blacklist = set(blacklist)

    def ok(entity):
        if entity in blacklist:
            return False
        if quality_scores is not None and min_quality is not None:
            return quality_scores.get(entity, 0.0) >= min_quality
        return True

    kept = [p for p in pairs if ok(p[1])]
    return kept, len(pairs) - len(kept)


def filter_low_freq(pairs, min_count):
    counts: dict = {}
    for p in pairs:
        counts[p[1]] = counts.get(p[1], 0) + 1
    return [p for p in pairs if counts[p[1]] >= min_count]


def subsample_high_freq(pairs, t, rng):
    """Keep each pair with probability min(1, sqrt(t / f(entity))).

    f(entity) is the entity's fraction of all pairs. One uniform draw per
    pair in input order, so output is a deterministic function of seed.
    """
    total = len(pairs)
    if total == 0:
        return []
    counts: dict = {}
    for p in pairs:
        counts[p[1]] = counts.get(p[1], 0) + 1
    keep_prob = {
        e: min(1.0, np.sqrt(t * total / c)) for e, c in counts.items()
    }
    return [p for p in pairs if rng.random() < keep_prob[p[1]]]


def shuffle(pairs, rng):
    """Fisher-Yates over a copy; deterministic for a seeded generator."""
    out = list(pairs)
    for i in range(len(out) - 1, 0, -1):
        j = int(rng.integers(i + 1))
        out[i], out[j] = out[j], out[i]
    return out


def run_pipeline(pairs, rng, blacklist=(), quality_scores=None,
                 min_quality=None, min_count=1, subsample_t=None):
    """Fixed-order preprocessing; returns (pairs, stats dict)."""
    stats = {"built": len(pairs)}
    pairs, removed = filter_low_quality(pairs, blacklist, quality_scores,
                                        min_quality)
    stats["low_quality_removed"] = removed
    before = len(pairs)
    pairs = filter_low_freq(pairs, min_count)
    stats["low_freq_removed"] = before - len(pairs)
    if subsample_t is not None:
        before = len(pairs)
        pairs = subsample_high_freq(pairs, subsample_t, rng)
        stats["subsampled_away"] = before - len(pairs)
    pairs = shuffle(pairs, rng)
    stats["final"] = len(pairs)
    return pairs, stats


# -- file formats -----------------------------------------------------------


def _read_tsv(path, expected_cols):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != expected_cols:
                raise FormatError(
                    f"{path}:{lineno}: expected {expected_cols} columns, "
                    f"got {len(cols)}"
                )
            rows.append(cols)
    return rows


def read_click_log(path):
    return [
        ClickLogRecord(q, e, int(imp), int(clk))
        for q, e, imp, clk in _read_tsv(path, 4)
    ]


def read_doc_log(path):
    return [
        DocLogRecord(q, t, s, int(clk))
        for q, t, s, clk in _read_tsv(path, 4)
    ]


def read_related_log(path):
    return [RelatedQueryRecord(q, r) for q, r in _read_tsv(path, 2)]


def read_tag_rules(path):
    rules = []
    seen = set()
    for pattern, kind, tag, entities in _read_tsv(path, 4):
        if pattern in seen:
            raise DuplicateRulePatternError(
                f"{path}: duplicate rule pattern {pattern!r}"
            )
        seen.add(pattern)
        rules.append(TagRule(pattern, kind, tag,
                             tuple(e for e in entities.split(";") if e)))
    return rules


def read_query_list(path):
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def read_entity_list(path):
    return read_query_list(path)


def read_quality_scores(path):
    return {e: float(s) for e, s in _read_tsv(path, 2)}


def read_concept_map(path):
    return {
        e: [c for c in concepts.split(";") if c]
        for e, concepts in _read_tsv(path, 2)
    }


def read_pairs(path):
    """Training pairs: query \\t entity \\t weight."""
    return [(q, e, float(w)) for q, e, w in _read_tsv(path, 3)]


def write_pairs(path, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        for query, entity, weight in pairs:
            fh.write(f"{query}\t{entity}\t{weight:.6g}\n")


def read_eval_cases(path):
    """Eval cases: query \\t entity1;entity2;..."""
    cases = []
    for query, names in _read_tsv(path, 2):
        truth = [n for n in names.split(";") if n]
        if not truth:
            raise FormatError(f"{path}: empty ground truth for {query!r}")
        cases.append((query, truth))
    return cases


def write_eval_cases(path, cases):
    with open(path, "w", encoding="utf-8") as fh:
        for query, truth in cases:
            fh.write(f"{query}\t{';'.join(truth)}\n")
