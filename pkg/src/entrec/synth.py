"""Seeded synthetic corpora for desk-scale experiments.

Real search logs are unavailable, so this module fabricates a small world
with known structure: every entity owns a private pool of context tokens
and its queries are drawn only from that pool, making query→entity
deterministic and perfectly learnable. The generator emits all four log
types plus phrase, blacklist, concept, quality and eval-case files.

A second generator builds an order task: two shared tokens per entity
pair where token order alone decides the target. Bag-of-words encoders
cannot exceed 0.5 precision on it; sequence encoders can solve it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .datapipe import write_eval_cases, write_pairs
from .numerics import make_rng

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _word(rng, syllables):
    parts = []
    for _ in range(syllables):
        parts.append(_CONSONANTS[int(rng.integers(len(_CONSONANTS)))])
        parts.append(_VOWELS[int(rng.integers(len(_VOWELS)))])
    return "".join(parts)


def _fresh_word(rng, used, syllables=2):
    while True:
        w = _word(rng, syllables)
        if w not in used:
            used.add(w)
            return w


@dataclass
class SynthWorld:
    entities: list           # entity names
    pools: dict              # entity -> private context tokens
    queries: list            # (query, entity)
    click_log: list          # (query, entity, impressions, clicks)
    doc_log: list            # (query, title, summary, clicks)
    related_log: list        # (query, recommended)
    tag_queries: list
    tag_rules: list          # (pattern, kind, tag, entities ;-joined)
    phrases: list
    blacklist: list
    concepts: dict           # entity -> [concepts]
    quality: dict            # entity -> score
    eval_cases: list         # (query, [entities])
    pairs: list = field(default_factory=list)  # direct (q, e, w) shortcut

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "click_log.tsv", "w", encoding="utf-8") as fh:
            for q, e, imp, clk in self.click_log:
                fh.write(f"{q}\t{e}\t{imp}\t{clk}\n")
        with open(out / "doc_log.tsv", "w", encoding="utf-8") as fh:
            for q, t, s, clk in self.doc_log:
                fh.write(f"{q}\t{t}\t{s}\t{clk}\n")
        with open(out / "related_log.tsv", "w", encoding="utf-8") as fh:
            for q, r in self.related_log:
                fh.write(f"{q}\t{r}\n")
        with open(out / "tag_queries.txt", "w", encoding="utf-8") as fh:
            fh.writelines(q + "\n" for q in self.tag_queries)
        with open(out / "tag_rules.tsv", "w", encoding="utf-8") as fh:
            for pattern, kind, tag, ents in self.tag_rules:
                fh.write(f"{pattern}\t{kind}\t{tag}\t{ents}\n")
        with open(out / "phrases.txt", "w", encoding="utf-8") as fh:
            fh.writelines(p + "\n" for p in self.phrases)
        with open(out / "blacklist.txt", "w", encoding="utf-8") as fh:
            fh.writelines(e + "\n" for e in self.blacklist)
        with open(out / "concepts.tsv", "w", encoding="utf-8") as fh:
            for e, cs in self.concepts.items():
                fh.write(f"{e}\t{';'.join(cs)}\n")
        with open(out / "quality.tsv", "w", encoding="utf-8") as fh:
            for e, s in self.quality.items():
                fh.write(f"{e}\t{s}\n")
        write_eval_cases(out / "eval_cases.tsv", self.eval_cases)
        write_pairs(out / "pairs_direct.tsv", self.pairs)


def gen_world(seed=0, num_entities=50, queries_per_entity=4, pool_size=6,
              num_concepts=8) -> SynthWorld:
    rng = make_rng(seed)
    used: set = set()

    # Entity names: mostly one word; every 5th is two words to exercise
    # phrase merging and longest-match NER, and each of those shadows the
    # preceding single-word name as its suffix.
    entities = []
    for i in range(num_entities):
        if i % 5 == 4 and entities:
            prev = entities[-1].split()[-1]
            entities.append(f"{_fresh_word(rng, used)} {prev}")
        else:
            entities.append(_fresh_word(rng, used, syllables=3))

    pools = {
        e: [_fresh_word(rng, used) for _ in range(pool_size)]
        for e in entities
    }

    def pool_query(entity):
        pool = pools[entity]
        n = 3 + int(rng.integers(3))  # 3-5 tokens
        picks = rng.choice(len(pool), size=min(n, len(pool)), replace=False)
        return " ".join(pool[int(j)] for j in picks)

    queries = []
    for e in entities:
        for _ in range(queries_per_entity):
            queries.append((pool_query(e), e))

    # junk entities exist only to be filtered out downstream
    junk = [f"{_fresh_word(rng, used)} junk" for _ in range(2)]

    click_log = []
    for q, e in queries:
        imp = 50 + int(rng.integers(450))
        ctr = 0.2 + 0.6 * rng.random()
        click_log.append((q, e, imp, max(1, round(imp * ctr))))
    for j in junk:
        click_log.append((pool_query(entities[0]), j, 100, 90))

    doc_log = []
    related_log = []
    tag_queries = []
    tag_rules = []
    for i, e in enumerate(entities):
        pool = pools[e]
        if i % 2 == 0:
            title = f"{e} {pool[0]} guide"
            summary = f"all about {e} and {pool[1]}"
            doc_log.append((pool_query(e), title, summary,
                            1 + int(rng.integers(20))))
        if i % 3 == 0:
            related_log.append((pool_query(e), f"{e} {pool[2]}"))
        if i % 7 == 0:
            tag_queries.append(pool_query(e))
            tag_rules.append((pool[0], "substring", f"tag_{i}", e))

    phrases = [e for e in entities if " " in e]
    concepts = {
        e: [f"concept_{i % num_concepts}"] for i, e in enumerate(entities)
    }
    quality = {e: 1.0 for e in entities}
    quality.update({j: 0.1 for j in junk})

    eval_cases = [(q, [e]) for q, e in queries]
    pairs = [(q, e, 1.0) for q, e in queries]
    return SynthWorld(
        entities=entities, pools=pools, queries=queries,
        click_log=click_log, doc_log=doc_log, related_log=related_log,
        tag_queries=tag_queries, tag_rules=tag_rules, phrases=phrases,
        blacklist=junk, concepts=concepts, quality=quality,
        eval_cases=eval_cases, pairs=pairs,
    )


def gen_order_task(seed=0, num_token_pairs=25, copies=4):
    """Corpus whose labels depend only on token order.

    For each token pair (a, b): query "a b" maps to one entity and
    "b a" to another. Returns (pairs, eval_cases, entities). A model
    that ignores order sees identical inputs for both classes, capping
    its best possible precision at 0.5 on the balanced eval set.
    """
    rng = make_rng(seed)
    used: set = set()
    pairs = []
    eval_cases = []
    entities = []
    for i in range(num_token_pairs):
        a = _fresh_word(rng, used)
        b = _fresh_word(rng, used)
        ent_ab = f"ord{2 * i:03d}"
        ent_ba = f"ord{2 * i + 1:03d}"
        entities += [ent_ab, ent_ba]
        for query, entity in ((f"{a} {b}", ent_ab), (f"{b} {a}", ent_ba)):
            pairs.extend((query, entity, 1.0) for _ in range(copies))
            eval_cases.append((query, [entity]))
    return pairs, eval_cases, entities
