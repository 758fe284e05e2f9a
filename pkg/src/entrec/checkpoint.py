"""Versioned binary checkpoints for trained models.

Byte layout:

    bytes 0..7    magic "ERCKPT01"
    bytes 8..11   header length L, little-endian uint32
    bytes 12..    canonical UTF-8 JSON header of length L
    then          raw tensor blobs, float64 little-endian, C order,
                  in the order listed under header["tensors"]

The header carries everything needed to rebuild the model without side
files: encoder kind and config, tokenizer config (phrases included), the
full vocabulary payload, the RNG state at save time, the config hash of
the producing run, and per-tensor name/shape specs. No wall-clock values
are stored, so identical runs write identical bytes.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .encoders import make_encoder
from .errors import FormatError
from .text import QueryTokenizer, TokenizedQuery, Vocabulary

MAGIC = b"ERCKPT01"


def canonical_json(payload) -> str:
    """Deterministic JSON encoding used for hashing and binary headers."""
    return json.dumps(payload, ensure_ascii=False, sort_keys=True,
                      separators=(",", ":"))


def config_hash(payload) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_framed(path, magic):
    """(header dict, blob bytes) of a magic-framed binary file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(magic)] != magic:
        raise FormatError(f"{path}: bad magic, expected {magic!r}")
    pos = len(magic)
    header_len = int.from_bytes(data[pos: pos + 4], "little")
    pos += 4
    try:
        header = json.loads(data[pos: pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from exc
    return header, data[pos + header_len:]


def write_framed(path, magic, header: dict, blobs) -> None:
    header_bytes = canonical_json(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(len(header_bytes).to_bytes(4, "little"))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


class Checkpoint:
    """A trained model bundle: encoder, tokenizer, vocab, entity table."""

    def __init__(self, kind, encoder_config, tokenizer_config, vocab,
                 params, bn_state, rng_snapshot, cfg_hash=""):
        self.kind = kind
        self.encoder_config = encoder_config
        self.tokenizer_config = tokenizer_config
        self.vocab = vocab
        self.params = params
        self.bn_state = bn_state
        self.rng_snapshot = rng_snapshot
        self.cfg_hash = cfg_hash
        self._encoder = None
        self._tokenizer = None

    def build_encoder(self):
        if self._encoder is None:
            self._encoder = make_encoder(self.kind, self.encoder_config)
        return self._encoder

    def build_tokenizer(self) -> QueryTokenizer:
        if self._tokenizer is None:
            self._tokenizer = QueryTokenizer.from_config(
                self.vocab, self.tokenizer_config
            )
        return self._tokenizer

    def encode(self, texts) -> np.ndarray:
        """Inference-mode query embeddings, one row per input.

        Accepts raw strings or already-tokenized queries, mixed freely.
        """
        tokenizer = self.build_tokenizer()
        batch = [t if isinstance(t, TokenizedQuery) else tokenizer.tokenize(t)
                 for t in texts]
        return self.build_encoder().encode(self.params, self.bn_state, batch)

    @property
    def entity_table(self) -> np.ndarray:
        return self.params["entity_emb"]

    def save(self, path) -> None:
        tensors = []
        blobs = []
        for name in sorted(self.params):
            arr = np.ascontiguousarray(self.params[name], dtype=np.float64)
            tensors.append({"name": name, "shape": list(arr.shape),
                            "group": "params"})
            blobs.append(arr.astype("<f8", copy=False).tobytes())
        for name in sorted(self.bn_state):
            arr = np.ascontiguousarray(self.bn_state[name], dtype=np.float64)
            tensors.append({"name": name, "shape": list(arr.shape),
                            "group": "state"})
            blobs.append(arr.astype("<f8", copy=False).tobytes())
        header = {
            "format": 1,
            "kind": self.kind,
            "encoder_config": self.encoder_config,
            "tokenizer_config": self.tokenizer_config,
            "vocab": json.loads(self.vocab.to_json()),
            "rng_state": self.rng_snapshot,
            "config_hash": self.cfg_hash,
            "tensors": tensors,
        }
        write_framed(path, MAGIC, header, blobs)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        header, blob = read_framed(path, MAGIC)
        if header.get("format") != 1:
            raise FormatError(f"{path}: unsupported checkpoint format "
                              f"{header.get('format')!r}")
        params = {}
        state = {}
        pos = 0
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            if pos + count * 8 > len(blob):
                raise FormatError(
                    f"{path}: truncated blob for tensor {spec['name']!r}"
                )
            arr = np.frombuffer(
                blob, dtype="<f8", count=count, offset=pos
            ).reshape(shape).astype(np.float64)
            pos += count * 8
            (params if spec["group"] == "params" else state)[spec["name"]] = arr
        if pos != len(blob):
            raise FormatError(f"{path}: {len(blob) - pos} trailing bytes")
        vocab = Vocabulary.from_json(json.dumps(header["vocab"]))
        return cls(
            kind=header["kind"],
            encoder_config=header["encoder_config"],
            tokenizer_config=header["tokenizer_config"],
            vocab=vocab,
            params=params,
            bn_state=state,
            rng_snapshot=header["rng_state"],
            cfg_hash=header.get("config_hash", ""),
        )
