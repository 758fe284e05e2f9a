"""HTTP recommendation service over a trained checkpoint and entity index.

JSON API:

    GET /recommend?q=<text>&k=<int>&grouped=<bool>[&probes=<int>]
        {query, results: [{entity, score[, concept]}], embed_ms, retrieve_ms}
    GET /similar?entity=<name>&n=<int>
        {entity, results, retrieve_ms}
    GET /healthz
        {status, vocab_size, index_hash}

The model and index are immutable after startup, so request handling is
safe under concurrency. Responses carry per-stage timings measured by
the service itself; grouped results are flattened group by group with
each entity annotated by its assigned concept.
"""

from __future__ import annotations

import hashlib
import time
from typing import Optional

from fastapi import FastAPI, HTTPException

from .checkpoint import Checkpoint, file_hash
from .errors import ConfigError, EmptyQueryError
from .index import EntityIndex, group_by_concept


def _matrix_hash(index: EntityIndex) -> str:
    h = hashlib.sha256()
    h.update(index.matrix.tobytes())
    h.update("\x00".join(index.names).encode("utf-8"))
    return h.hexdigest()


def create_app(checkpoint: Checkpoint, index: EntityIndex,
               index_hash: str = "") -> FastAPI:
    """App over in-memory objects; hash checks happen in load_app."""
    if index.encoder_kind and index.encoder_kind != checkpoint.kind:
        raise ConfigError(
            f"index was built for a {index.encoder_kind!r} encoder, "
            f"checkpoint is {checkpoint.kind!r}"
        )
    app = FastAPI(title="entity recommender", docs_url=None, redoc_url=None)
    state_hash = index_hash or _matrix_hash(index)

    @app.get("/recommend")
    def recommend(q: str = "", k: int = 20, grouped: bool = False,
                  probes: Optional[int] = None):
        if k < 1:
            raise HTTPException(status_code=400, detail="k must be >= 1")
        started = time.perf_counter()
        try:
            emb = checkpoint.encode([q])[0]
        except EmptyQueryError:
            raise HTTPException(status_code=400, detail="empty query")
        embed_ms = (time.perf_counter() - started) * 1e3

        started = time.perf_counter()
        scores, ids = index.search(emb, min(k, index.size), probes=probes)
        retrieve_ms = (time.perf_counter() - started) * 1e3

        results = index.scored(scores, ids)
        for r in results:
            del r["id"]
        if grouped:
            flat = []
            for group in group_by_concept(results, index.concept_map):
                for r in group["entities"]:
                    r["concept"] = group["concept"]
                    flat.append(r)
            results = flat
        return {
            "query": q,
            "results": results,
            "embed_ms": round(embed_ms, 3),
            "retrieve_ms": round(retrieve_ms, 3),
        }

    @app.get("/similar")
    def similar(entity: str, n: int = 10):
        if n < 1:
            raise HTTPException(status_code=400, detail="n must be >= 1")
        if entity not in index.id_of:
            raise HTTPException(status_code=404,
                                detail=f"unknown entity {entity!r}")
        started = time.perf_counter()
        scores, ids = index.entity_neighbors(entity, n)
        retrieve_ms = (time.perf_counter() - started) * 1e3
        results = index.scored(scores, ids)
        for r in results:
            del r["id"]
        return {
            "entity": entity,
            "results": results,
            "retrieve_ms": round(retrieve_ms, 3),
        }

    @app.get("/healthz")
    def healthz():
        return {
            "status": "ok",
            "vocab_size": index.size,
            "index_hash": state_hash,
        }

    return app


def load_app(checkpoint_path, index_path) -> FastAPI:
    """Load artifacts from disk, failing fast on any hash mismatch."""
    checkpoint = Checkpoint.load(checkpoint_path)
    index = EntityIndex.load(index_path)
    actual = file_hash(checkpoint_path)
    if index.checkpoint_hash and index.checkpoint_hash != actual:
        raise ConfigError(
            f"index at {index_path} was built from checkpoint "
            f"{index.checkpoint_hash[:12]}…, but {checkpoint_path} hashes "
            f"to {actual[:12]}…"
        )
    return create_app(checkpoint, index, index_hash=file_hash(index_path))
