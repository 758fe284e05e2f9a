"""Offline evaluation: Precision@M over eval cases, multi-method reports,
attention-weight dumps.

Precision@M treats the retrieved list as a set of its first M names:
|top-M ∩ ground truth| / M. When retrieval returns fewer than M results
the shortfall counts as misses, so every cell is defined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, MethodIndexMismatchError, MZeroError

DEFAULT_MS = (1, 10, 20, 30)


def precision_at_m(retrieved, truth, m) -> float:
    if m <= 0:
        raise MZeroError(f"M must be >= 1, got {m}")
    hits = set(retrieved[:m]) & set(truth)
    return len(hits) / m


@dataclass
class EvalMethod:
    """One (model, index) pair under a display name.

    ``checkpoint_file_hash`` is the content hash of the checkpoint the
    caller loaded; when both it and the index's recorded hash are known
    they must agree.
    """

    name: str
    checkpoint: object
    index: object
    checkpoint_file_hash: str = ""

    def verify(self):
        recorded = getattr(self.index, "checkpoint_hash", "")
        if recorded and self.checkpoint_file_hash and \
                recorded != self.checkpoint_file_hash:
            raise MethodIndexMismatchError(
                f"method {self.name!r}: index was built from checkpoint "
                f"{recorded[:12]}…, got {self.checkpoint_file_hash[:12]}…"
            )


def evaluate(methods, cases, ms=DEFAULT_MS, exact=True, probes=None) -> dict:
    """Mean Precision@M per method over fixed-order cases.

    Retrieval is exact by default so reports are deterministic; pass
    ``exact=False`` to measure the approximate path instead.
    """
    if not cases:
        raise ConfigError("no eval cases")
    ms = tuple(ms)
    k = max(ms)
    report: dict = {"case_count": len(cases), "Ms": list(ms), "methods": {}}
    for method in methods:
        method.verify()
        index = method.index
        missing = sorted(
            {name for _, truth in cases for name in truth}
            - set(index.names)
        )
        if missing:
            raise ConfigError(
                f"ground-truth entities missing from index: {missing[:5]}"
            )
        sums = np.zeros(len(ms))
        for query, truth in cases:
            q = method.checkpoint.encode([query])[0]
            if exact:
                _, ids = index.topk_exact(q, min(k, index.size))
            else:
                _, ids = index.search(q, min(k, index.size), probes=probes)
            names = [index.names[int(i)] for i in ids]
            for j, m in enumerate(ms):
                sums[j] += precision_at_m(names, truth, m)
        report["methods"][method.name] = {
            f"P@{m}": sums[j] / len(cases) for j, m in enumerate(ms)
        }
    return report


def render_report(report) -> str:
    """Aligned text table for terminals and logs."""
    ms = report["Ms"]
    headers = ["method"] + [f"P@{m}" for m in ms]
    rows = [
        [name] + [f"{cells[f'P@{m}']:.4f}" for m in ms]
        for name, cells in report["methods"].items()
    ]
    widths = [
        max(len(headers[c]), *(len(r[c]) for r in rows)) if rows else len(headers[c])
        for c in range(len(headers))
    ]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for r in rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)))
    lines.append(f"cases: {report['case_count']}")
    return "\n".join(lines)


def dump_attention(checkpoint, query) -> list:
    """Basic-level tokens paired with their attention weights."""
    if checkpoint.kind != "enhanced":
        raise ConfigError("attention dump requires an enhanced-encoder model")
    tokenizer = checkpoint.build_tokenizer()
    tokenized = tokenizer.tokenize(query)
    encoder = checkpoint.build_encoder()
    alpha = encoder.attention_weights(checkpoint.params, tokenized)
    return [
        {"token": tok, "weight": float(w)}
        for tok, w in zip(tokenized.tokens, alpha)
    ]
