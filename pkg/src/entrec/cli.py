"""Command-line entry point.

Every subcommand runs one module pipeline with a JSON config (unknown
keys rejected) plus flag overrides, and stamps its outputs with the hash
of the effective config. Seeds are explicit with fixed defaults; nothing
is ever seeded from the clock, so reruns reproduce artifacts exactly.

Exit codes: 0 success, 1 invalid config or missing input, 2 runtime
failure.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import datapipe, synth
from .checkpoint import Checkpoint, canonical_json, config_hash, file_hash
from .errors import ConfigError, EntrecError, FormatError, InputMissingError
from .evaluation import EvalMethod, dump_attention, evaluate, render_report
from .index import EntityIndex, build_index
from .numerics import make_rng
from .serve import load_app
from .text import PhraseDict, QueryTokenizer, build_vocab, Vocabulary
from .training import Trainer, TrainConfig, TrainingPair


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def pipeline_command(fn):
    """Map exception classes onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, InputMissingError, FormatError) as exc:
            _fail(1, exc)
        except FileNotFoundError as exc:
            _fail(1, f"missing input file: {exc.filename}")
        except EntrecError as exc:
            _fail(2, exc)

    return wrapper


def load_effective_config(config_path, defaults: dict, overrides: dict):
    """defaults <- config file <- non-None flag overrides."""
    effective = dict(defaults)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise InputMissingError(f"config file {config_path} not found")
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        unknown = sorted(set(data) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        effective.update(data)
    for key, value in overrides.items():
        if value is not None:
            effective[key] = value
    return effective, config_hash(effective)


def _require(path, what):
    if not Path(path).exists():
        raise InputMissingError(f"{what} {path} not found")
    return Path(path)


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


@click.group()
def main():
    """Query-to-entity recommendation engine."""


# -- synth -----------------------------------------------------------------


@main.command("synth")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", required=True, type=str)
@pipeline_command
def cmd_synth(config_path, seed, out_dir):
    """Generate a seeded synthetic log corpus."""
    defaults = {
        "seed": 0,
        "task": "world",
        "num_entities": 50,
        "queries_per_entity": 4,
        "pool_size": 6,
        "num_concepts": 8,
        "num_token_pairs": 25,
        "copies": 4,
    }
    cfg, cfg_hash = load_effective_config(config_path, defaults,
                                          {"seed": seed})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg["task"] == "world":
        world = synth.gen_world(
            seed=cfg["seed"],
            num_entities=cfg["num_entities"],
            queries_per_entity=cfg["queries_per_entity"],
            pool_size=cfg["pool_size"],
            num_concepts=cfg["num_concepts"],
        )
        world.write(out)
    elif cfg["task"] == "order":
        pairs, cases, _ = synth.gen_order_task(
            seed=cfg["seed"],
            num_token_pairs=cfg["num_token_pairs"],
            copies=cfg["copies"],
        )
        datapipe.write_pairs(out / "pairs_direct.tsv", pairs)
        datapipe.write_eval_cases(out / "eval_cases.tsv", cases)
    else:
        raise ConfigError(f"unknown synth task {cfg['task']!r}")
    _write_json(out / "synth_manifest.json",
                {"config": cfg, "config_hash": cfg_hash})
    click.echo(f"synthetic corpus written to {out}")


# -- build-data --------------------------------------------------------------


@main.command("build-data")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--data-dir", required=True, type=str)
@click.option("--out", "out_path", required=True, type=str)
@pipeline_command
def cmd_build_data(config_path, seed, data_dir, out_path):
    """Build shuffled training pairs from log files."""
    defaults = {
        "seed": 0,
        "ctr_threshold": 0.25,
        "min_doc_clicks": 1,
        "min_count": 1,
        "min_quality": None,
        "subsample_t": None,
    }
    cfg, cfg_hash = load_effective_config(config_path, defaults,
                                          {"seed": seed})
    data = Path(data_dir)
    click_log = datapipe.read_click_log(_require(data / "click_log.tsv",
                                                 "click log"))
    doc_log = datapipe.read_doc_log(_require(data / "doc_log.tsv", "doc log"))
    related = datapipe.read_related_log(_require(data / "related_log.tsv",
                                                 "related-query log"))
    rules = datapipe.read_tag_rules(_require(data / "tag_rules.tsv",
                                             "tag rules"))
    tag_queries = datapipe.read_query_list(_require(data / "tag_queries.txt",
                                                    "tag query list"))
    blacklist_path = data / "blacklist.txt"
    blacklist = (datapipe.read_entity_list(blacklist_path)
                 if blacklist_path.exists() else [])
    quality_path = data / "quality.tsv"
    quality = (datapipe.read_quality_scores(quality_path)
               if quality_path.exists() else None)
    entities_path = data / "entities.txt"
    if entities_path.exists():
        known = datapipe.read_entity_list(entities_path)
    else:
        known = sorted(
            {r.entity for r in click_log}
            | {e for rule in rules for e in rule.entities}
        )
    spotter = datapipe.EntitySpotter(known)

    pairs = datapipe.build_query_click_entity(click_log, cfg["ctr_threshold"])
    pairs += datapipe.build_query_doc_entity(doc_log, spotter,
                                             cfg["min_doc_clicks"])
    pairs += datapipe.build_query_query_entity(related, spotter)
    pairs += datapipe.build_query_tag_entity(tag_queries, rules)

    rng = make_rng(cfg["seed"])
    pairs, stats = datapipe.run_pipeline(
        pairs, rng, blacklist=blacklist, quality_scores=quality,
        min_quality=cfg["min_quality"], min_count=cfg["min_count"],
        subsample_t=cfg["subsample_t"],
    )
    datapipe.write_pairs(out_path, pairs)
    _write_json(Path(out_path).with_suffix(".stats.json"),
                {"config": cfg, "config_hash": cfg_hash, "stats": stats})
    click.echo(f"{stats['final']} pairs -> {out_path}")


# -- build-vocab --------------------------------------------------------------


@main.command("build-vocab")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--pairs", "pairs_path", required=True, type=str)
@click.option("--phrases", "phrases_path", type=str, default=None)
@click.option("--out", "out_path", required=True, type=str)
@pipeline_command
def cmd_build_vocab(config_path, pairs_path, phrases_path, out_path):
    """Build token and entity vocabularies from a pair file."""
    defaults = {"min_count": 1, "phrases": None}
    cfg, cfg_hash = load_effective_config(config_path, defaults,
                                          {"phrases": phrases_path})
    pairs = datapipe.read_pairs(_require(pairs_path, "pair file"))
    phrase_dict = None
    if cfg["phrases"]:
        phrase_dict = PhraseDict.load(_require(cfg["phrases"], "phrase file"))
    vocab = build_vocab(pairs, min_count=cfg["min_count"],
                        phrase_dict=phrase_dict)
    vocab.save(out_path, meta={"config": cfg, "config_hash": cfg_hash})
    click.echo(
        f"{vocab.num_words} words, {vocab.num_entities} entities -> {out_path}"
    )


# -- train ---------------------------------------------------------------------


@main.command("train")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--pairs", "pairs_path", required=True, type=str)
@click.option("--vocab", "vocab_path", required=True, type=str)
@click.option("--phrases", "phrases_path", type=str, default=None)
@click.option("--out-dir", required=True, type=str)
@click.option("--encoder", type=click.Choice(["base", "enhanced"]),
              default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--negatives", type=int, default=None)
@pipeline_command
def cmd_train(config_path, seed, pairs_path, vocab_path, phrases_path,
              out_dir, encoder, epochs, negatives):
    """Train an encoder and the entity-embedding table."""
    defaults = {
        "seed": 0,
        "encoder": "enhanced",
        "learning_rate": 1e-3,
        "batch_size": 64,
        "negatives": 100,
        "epochs": 5,
        "sampler": "log-uniform",
        "embed_dim": 128,
        "hidden_size": 128,
        "attention_size": 64,
        "num_buckets": 4096,
        "use_ngrams": True,
        "max_len": 32,
        "phrases": None,
    }
    cfg, cfg_hash = load_effective_config(
        config_path, defaults,
        {"seed": seed, "encoder": encoder, "epochs": epochs,
         "negatives": negatives, "phrases": phrases_path},
    )
    vocab = Vocabulary.load(_require(vocab_path, "vocabulary"))
    rows = datapipe.read_pairs(_require(pairs_path, "pair file"))
    phrase_dict = None
    if cfg["phrases"]:
        phrase_dict = PhraseDict.load(_require(cfg["phrases"], "phrase file"))
    tokenizer = QueryTokenizer(
        vocab, phrase_dict=phrase_dict,
        num_buckets=cfg["num_buckets"], max_len=cfg["max_len"],
    )
    pairs = []
    skipped = 0
    for query, entity, weight in rows:
        target = vocab.entity_id(entity)
        if target is None:
            skipped += 1
            continue
        pairs.append(TrainingPair(tokenizer.tokenize(query), target, weight))
    if skipped:
        click.echo(f"skipped {skipped} pairs with out-of-vocabulary entities",
                   err=True)

    train_config = TrainConfig(**{
        k: cfg[k] for k in (
            "encoder", "learning_rate", "batch_size", "negatives", "epochs",
            "seed", "sampler", "embed_dim", "hidden_size", "attention_size",
            "num_buckets", "use_ngrams",
        )
    })
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(vocab, train_config,
                      tokenizer_config=tokenizer.config(), cfg_hash=cfg_hash)
    with open(out / "run_log.jsonl", "w", encoding="utf-8") as log_fh:
        checkpoint = trainer.run(pairs, out_dir=out, log_fh=log_fh)
    checkpoint.save(out / "checkpoint.bin")
    _write_json(out / "effective_config.json",
                {"config": cfg, "config_hash": cfg_hash})
    final = trainer.history[-1].mean_loss if trainer.history else float("nan")
    click.echo(f"final mean loss {final:.6f} -> {out / 'checkpoint.bin'}")


# -- build-index ------------------------------------------------------------------


@main.command("build-index")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--checkpoint", "checkpoint_path", required=True, type=str)
@click.option("--concepts", "concepts_path", type=str, default=None)
@click.option("--out", "out_path", required=True, type=str)
@click.option("--num-clusters", type=int, default=None)
@pipeline_command
def cmd_build_index(config_path, seed, checkpoint_path, concepts_path,
                    out_path, num_clusters):
    """Build the serving index from a checkpoint's entity table."""
    defaults = {"seed": 0, "num_clusters": 256, "concepts": None}
    cfg, cfg_hash = load_effective_config(
        config_path, defaults,
        {"seed": seed, "num_clusters": num_clusters,
         "concepts": concepts_path},
    )
    ckpt_file = _require(checkpoint_path, "checkpoint")
    checkpoint = Checkpoint.load(ckpt_file)
    concept_map = None
    if cfg["concepts"]:
        concept_map = datapipe.read_concept_map(
            _require(cfg["concepts"], "concept map")
        )
    index = build_index(
        checkpoint.entity_table, checkpoint.vocab,
        concept_map=concept_map, num_clusters=cfg["num_clusters"],
        seed=cfg["seed"], checkpoint_hash=file_hash(ckpt_file),
        cfg_hash=cfg_hash, encoder_kind=checkpoint.kind,
    )
    index.save(out_path)
    click.echo(
        f"{index.size} entities, {index.num_clusters} clusters -> {out_path}"
    )


# -- eval -------------------------------------------------------------------------


@main.command("eval")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--cases", "cases_path", required=True, type=str)
@click.option("--method", "methods", multiple=True, required=True,
              help="NAME=CHECKPOINT:INDEX, repeatable")
@click.option("--out", "out_path", required=True, type=str)
@pipeline_command
def cmd_eval(config_path, cases_path, methods, out_path):
    """Precision@M report over one or more (checkpoint, index) methods."""
    defaults = {"Ms": [1, 10, 20, 30], "exact": True, "probes": None}
    cfg, cfg_hash = load_effective_config(config_path, defaults, {})
    cases = datapipe.read_eval_cases(_require(cases_path, "eval cases"))
    parsed = []
    for spec in methods:
        if "=" not in spec or ":" not in spec.split("=", 1)[1]:
            raise ConfigError(
                f"--method must be NAME=CHECKPOINT:INDEX, got {spec!r}"
            )
        name, rest = spec.split("=", 1)
        ckpt_path, index_path = rest.rsplit(":", 1)
        ckpt_file = _require(ckpt_path, "checkpoint")
        parsed.append(EvalMethod(
            name=name,
            checkpoint=Checkpoint.load(ckpt_file),
            index=EntityIndex.load(_require(index_path, "index")),
            checkpoint_file_hash=file_hash(ckpt_file),
        ))
    report = evaluate(parsed, cases, ms=tuple(cfg["Ms"]),
                      exact=cfg["exact"], probes=cfg["probes"])
    report["config"] = cfg
    report["config_hash"] = cfg_hash
    _write_json(out_path, report)
    click.echo(render_report(report))


# -- serve -------------------------------------------------------------------------


@main.command("serve")
@click.option("--checkpoint", "checkpoint_path", required=True, type=str)
@click.option("--index", "index_path", required=True, type=str)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8080)
@pipeline_command
def cmd_serve(checkpoint_path, index_path, host, port):
    """Serve /recommend, /similar and /healthz over HTTP."""
    import uvicorn

    app = load_app(_require(checkpoint_path, "checkpoint"),
                   _require(index_path, "index"))
    uvicorn.run(app, host=host, port=port, log_level="warning")


# -- neighbors ----------------------------------------------------------------------


@main.command("neighbors")
@click.option("--index", "index_path", required=True, type=str)
@click.option("--entity", required=True, type=str)
@click.option("-n", "--num", type=int, default=10)
@pipeline_command
def cmd_neighbors(index_path, entity, num):
    """Nearest entities to a given entity."""
    index = EntityIndex.load(_require(index_path, "index"))
    scores, ids = index.entity_neighbors(entity, num)
    for row in index.scored(scores, ids):
        click.echo(f"{row['score']:+.4f}  {row['entity']}")


# -- attend -------------------------------------------------------------------------


@main.command("attend")
@click.option("--checkpoint", "checkpoint_path", required=True, type=str)
@click.option("--query", required=True, type=str)
@pipeline_command
def cmd_attend(checkpoint_path, query):
    """Dump attention weights for a query (enhanced encoder only)."""
    checkpoint = Checkpoint.load(_require(checkpoint_path, "checkpoint"))
    weights = dump_attention(checkpoint, query)
    click.echo(canonical_json(weights))


if __name__ == "__main__":
    main()
