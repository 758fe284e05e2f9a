"""Entity vector index: exact and inverted-file cosine top-K.

Rows are L2-normalized float32 at build time, so dot product equals
cosine at query time. The approximate path clusters rows with spherical
k-means and probes only the nearest clusters. Probing every cluster
delegates to the exact scorer, reproducing its results bit for bit.

Default probes cover most of the clusters. On vectors without cluster
structure (the hard case) few probes recall poorly no matter how the
centroids fall, and wide probing still scans only the shortlisted
clusters; pass an explicit ``probes`` to trade recall for speed on data
that actually clusters.
"""

from __future__ import annotations

import json
import warnings

import numpy as np

from .checkpoint import canonical_json, read_framed, write_framed
from .errors import (
    FormatError,
    IndexNotClusteredError,
    UnknownEntityError,
    ZeroNormEntityError,
)
from .numerics import make_rng

INDEX_MAGIC = b"ERIDX001"
DEFAULT_NUM_CLUSTERS = 256
DEFAULT_PROBE_FRACTION = 0.85
KMEANS_ITERS = 12
KMEANS_SAMPLE_CAP = 25000


def default_probes(num_clusters: int) -> int:
    return max(1, round(DEFAULT_PROBE_FRACTION * num_clusters))


def _normalize_rows(matrix, names):
    out = np.ascontiguousarray(matrix, dtype=np.float32)
    if out is matrix:
        out = matrix.copy()
    norms = np.sqrt(np.einsum("ij,ij->i", out, out))
    bad = np.where(norms == 0.0)[0]
    if bad.size:
        raise ZeroNormEntityError([names[i] for i in bad])
    out /= norms[:, None]
    return out


def _kmeanspp_init(data, k, rng):
    """k-means++ seeding on unit vectors, cosine distance = 1 − dot."""
    n = data.shape[0]
    centroids = np.empty((k, data.shape[1]), dtype=np.float32)
    first = int(rng.integers(n))
    centroids[0] = data[first]
    dist = 1.0 - data @ centroids[0]
    np.maximum(dist, 0.0, out=dist)
    for i in range(1, k):
        total = float(dist.sum())
        if total <= 0:
            pick = int(rng.integers(n))
        else:
            pick = int(np.searchsorted(np.cumsum(dist / total), rng.random()))
            pick = min(pick, n - 1)
        centroids[i] = data[pick]
        np.minimum(dist, 1.0 - data @ centroids[i], out=dist)
        np.maximum(dist, 0.0, out=dist)
    return centroids


def spherical_kmeans(data, k, seed=0, iters=KMEANS_ITERS):
    """Cluster unit vectors by cosine; returns unit centroids (k, d).

    Fits on a capped subsample for speed, then the caller assigns all
    rows. Empty clusters are re-seeded from the point worst served by
    its current centroid, so exactly k clusters always come back.
    """
    rng = make_rng(seed)
    if data.shape[0] > KMEANS_SAMPLE_CAP:
        sample_idx = rng.choice(data.shape[0], size=KMEANS_SAMPLE_CAP,
                                replace=False)
        sample_idx.sort()
        data = data[sample_idx]
    k = min(k, data.shape[0])
    centroids = _kmeanspp_init(data, k, rng)
    for _ in range(iters):
        scores = data @ centroids.T
        assign = np.argmax(scores, axis=1)
        best = scores[np.arange(data.shape[0]), assign]
        for c in range(k):
            members = data[assign == c]
            if members.shape[0] == 0:
                worst = int(np.argmin(best))
                centroids[c] = data[worst]
                best[worst] = 1.0
                continue
            mean = members.mean(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 0:
                centroids[c] = (mean / norm).astype(np.float32)
    return centroids


def _assign_chunked(matrix, centroids, chunk=100_000):
    assign = np.empty(matrix.shape[0], dtype=np.int64)
    for lo in range(0, matrix.shape[0], chunk):
        block = matrix[lo: lo + chunk]
        assign[lo: lo + chunk] = np.argmax(block @ centroids.T, axis=1)
    return assign


class EntityIndex:
    """Immutable L2-normalized entity matrix with optional IVF layout.

    ``matrix`` stores rows grouped by cluster; ``row_ids[i]`` is the
    entity id of stored row i, and ``offsets[c]:offsets[c+1]`` bounds
    cluster c. Unclustered indexes store rows in id order.
    """

    def __init__(self, names, matrix, row_ids, offsets=None, centroids=None,
                 concept_map=None, checkpoint_hash="", cfg_hash="",
                 encoder_kind=""):
        self.names = list(names)
        self.matrix = matrix
        self.row_ids = row_ids
        self.offsets = offsets
        self.centroids = centroids
        self.concept_map = concept_map or {}
        self.checkpoint_hash = checkpoint_hash
        self.cfg_hash = cfg_hash
        self.encoder_kind = encoder_kind
        self.id_of = {name: i for i, name in enumerate(self.names)}
        self._by_id_cache = None

    @property
    def size(self) -> int:
        return len(self.names)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def clustered(self) -> bool:
        return self.centroids is not None

    @property
    def _by_id(self):
        """Rows re-ordered by entity id; materialized on first exact scan."""
        if self._by_id_cache is None:
            by_id = np.empty_like(self.matrix)
            by_id[self.row_ids] = self.matrix
            self._by_id_cache = by_id
        return self._by_id_cache

    @property
    def num_clusters(self) -> int:
        return 0 if self.centroids is None else self.centroids.shape[0]

    # -- queries ------------------------------------------------------

    def _prep_query(self, q):
        q = np.asarray(q, dtype=np.float32).reshape(-1)
        if q.shape[0] != self.dim:
            raise FormatError(f"query dim {q.shape[0]} != index dim {self.dim}")
        norm = np.linalg.norm(q)
        return q / norm if norm > 0 else q

    def _clamp_k(self, k):
        if k < 1:
            raise ValueError("K must be >= 1")
        if k > self.size:
            warnings.warn(
                f"K={k} exceeds vocabulary size {self.size}; clamping",
                stacklevel=3,
            )
            return self.size
        return k

    @staticmethod
    def _select(scores, ids, k):
        """Top-k by descending score, ties by ascending entity id."""
        if k < scores.shape[0]:
            # score threshold first, then order the small candidate set
            kth = np.partition(scores, scores.shape[0] - k)[scores.shape[0] - k]
            mask = scores >= kth
            scores = scores[mask]
            ids = ids[mask]
        order = np.lexsort((ids, -scores.astype(np.float64)))[:k]
        return scores[order], ids[order]

    def topk_exact(self, q, k):
        """Full-scan cosine top-K as (scores, entity ids)."""
        k = self._clamp_k(k)
        qn = self._prep_query(q)
        scores = self._by_id @ qn
        return self._select(scores, np.arange(self.size), k)

    def topk_approx(self, q, k, probes=None):
        """Top-K over the ``probes`` nearest clusters."""
        if not self.clustered:
            raise IndexNotClusteredError(
                "index was built without clustering; use topk_exact"
            )
        if probes is None:
            probes = default_probes(self.num_clusters)
        if probes < 1:
            raise ValueError("probes must be >= 1")
        if probes >= self.num_clusters:
            return self.topk_exact(q, k)
        k = self._clamp_k(k)
        qn = self._prep_query(q)
        cscores = self.centroids @ qn
        order = np.lexsort((np.arange(self.num_clusters),
                            -cscores.astype(np.float64)))[:probes]
        pieces_s = []
        pieces_i = []
        for c in order:
            lo, hi = self.offsets[c], self.offsets[c + 1]
            pieces_s.append(self.matrix[lo:hi] @ qn)
            pieces_i.append(self.row_ids[lo:hi])
        scores = np.concatenate(pieces_s)
        ids = np.concatenate(pieces_i)
        k = min(k, ids.size)
        return self._select(scores, ids, k)

    def search(self, q, k, probes=None):
        """Approximate when clustered, exact otherwise."""
        if self.clustered:
            return self.topk_approx(q, k, probes=probes)
        return self.topk_exact(q, k)

    def entity_neighbors(self, name, n):
        """Nearest entities to a known entity, the entity itself excluded."""
        eid = self.id_of.get(name)
        if eid is None:
            raise UnknownEntityError(f"entity {name!r} is not in the index")
        scores, ids = self.topk_exact(self._by_id[eid], min(n + 1, self.size))
        keep = ids != eid
        return scores[keep][:n], ids[keep][:n]

    def scored(self, scores, ids):
        """(scores, ids) -> list of result dicts with names."""
        return [
            {"id": int(i), "entity": self.names[int(i)], "score": float(s)}
            for s, i in zip(scores, ids)
        ]

    # -- persistence ----------------------------------------------------

    def save(self, path):
        header = {
            "format": 1,
            "dim": self.dim,
            "names": self.names,
            "concepts": self.concept_map or None,
            "checkpoint_hash": self.checkpoint_hash,
            "config_hash": self.cfg_hash,
            "encoder_kind": self.encoder_kind,
            "row_ids": [int(i) for i in self.row_ids],
            "offsets": ([int(o) for o in self.offsets]
                        if self.offsets is not None else None),
            "num_clusters": self.num_clusters,
        }
        blobs = []
        if self.centroids is not None:
            blobs.append(np.ascontiguousarray(self.centroids, "<f4").tobytes())
        blobs.append(np.ascontiguousarray(self.matrix, "<f4").tobytes())
        write_framed(path, INDEX_MAGIC, header, blobs)

    @classmethod
    def load(cls, path) -> "EntityIndex":
        header, blob = read_framed(path, INDEX_MAGIC)
        if header.get("format") != 1:
            raise FormatError(f"{path}: unsupported index format")
        dim = header["dim"]
        size = len(header["names"])
        pos = 0
        centroids = None
        if header["num_clusters"]:
            count = header["num_clusters"] * dim
            centroids = np.frombuffer(blob, "<f4", count=count).reshape(
                header["num_clusters"], dim
            ).astype(np.float32)
            pos = count * 4
        matrix = np.frombuffer(blob, "<f4", count=size * dim,
                               offset=pos).reshape(size, dim).astype(np.float32)
        return cls(
            names=header["names"],
            matrix=matrix,
            row_ids=np.asarray(header["row_ids"], dtype=np.int64),
            offsets=(np.asarray(header["offsets"], dtype=np.int64)
                     if header["offsets"] is not None else None),
            centroids=centroids,
            concept_map=header["concepts"] or {},
            checkpoint_hash=header["checkpoint_hash"],
            cfg_hash=header["config_hash"],
            encoder_kind=header.get("encoder_kind", ""),
        )


def build_index(entity_table, vocab, concept_map=None,
                num_clusters=DEFAULT_NUM_CLUSTERS, seed=0,
                checkpoint_hash="", cfg_hash="", encoder_kind="") -> EntityIndex:
    """Normalized (and optionally clustered) index from a trained table.

    ``num_clusters=0`` skips clustering; approximate search is then
    unavailable. Cluster count is clamped to the entity count.
    """
    names = list(vocab.id_to_entity) if hasattr(vocab, "id_to_entity") else list(vocab)
    matrix = _normalize_rows(np.asarray(entity_table), names)
    size = matrix.shape[0]
    if num_clusters and num_clusters > 0:
        k = min(num_clusters, size)
        centroids = spherical_kmeans(matrix, k, seed=seed)
        assign = _assign_chunked(matrix, centroids)
        row_ids = np.lexsort((np.arange(size), assign)).astype(np.int64)
        grouped = np.ascontiguousarray(matrix[row_ids])
        counts = np.bincount(assign, minlength=centroids.shape[0])
        offsets = np.zeros(centroids.shape[0] + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return EntityIndex(
            names, grouped, row_ids, offsets=offsets, centroids=centroids,
            concept_map=concept_map, checkpoint_hash=checkpoint_hash,
            cfg_hash=cfg_hash, encoder_kind=encoder_kind,
        )
    return EntityIndex(
        names, matrix, np.arange(size, dtype=np.int64),
        concept_map=concept_map, checkpoint_hash=checkpoint_hash,
        cfg_hash=cfg_hash, encoder_kind=encoder_kind,
    )


def group_by_concept(results, concept_map):
    """Partition scored results into concept groups for display.

    Each entity lands in exactly one group: the concept (among those it
    carries) whose best-scoring carrier ranks highest; entities without
    concepts fall into "other". Groups are ordered by their best member's
    score (ties by name), members keep their incoming order.
    """
    best: dict = {}
    for r in results:
        for concept in concept_map.get(r["entity"], ()):
            if concept not in best or r["score"] > best[concept]:
                best[concept] = r["score"]

    groups: dict = {}
    for r in results:
        concepts = concept_map.get(r["entity"], ())
        if concepts:
            chosen = max(concepts, key=lambda c: (best[c], c))
        else:
            chosen = "other"
        groups.setdefault(chosen, []).append(r)

    ordered = sorted(
        groups.items(),
        key=lambda kv: (-max(r["score"] for r in kv[1]), kv[0]),
    )
    return [{"concept": name, "entities": members} for name, members in ordered]
