"""Input validation helpers for the estimator API."""

from __future__ import annotations

from .errors import ConfigError


def as_pairs(X, y=None) -> list:
    """Normalize fit() input into a list of (query, entity, weight).

    Accepts an iterable of (query, entity) or (query, entity, weight)
    tuples, or parallel sequences X=queries / y=entities.
    """
    pairs = []
    if y is not None:
        X = list(X)
        y = list(y)
        if len(X) != len(y):
            raise ConfigError(
                f"X and y length mismatch: {len(X)} vs {len(y)}"
            )
        rows = [(q, e) for q, e in zip(X, y)]
    else:
        rows = list(X)
    for i, row in enumerate(rows):
        if isinstance(row, str) or not hasattr(row, "__len__"):
            raise ConfigError(
                f"row {i}: expected (query, entity[, weight]), got {row!r}"
            )
        if len(row) == 2:
            query, entity = row
            weight = 1.0
        elif len(row) == 3:
            query, entity = row[0], row[1]
            weight = float(row[2])
        else:
            raise ConfigError(
                f"row {i}: expected 2 or 3 fields, got {len(row)}"
            )
        if not isinstance(query, str) or not isinstance(entity, str):
            raise ConfigError(f"row {i}: query and entity must be strings")
        if weight < 0:
            raise ConfigError(f"row {i}: negative weight {weight}")
        pairs.append((query, entity, weight))
    if not pairs:
        raise ConfigError("no training pairs provided")
    return pairs


def check_texts(X) -> list:
    texts = [X] if isinstance(X, str) else list(X)
    for i, t in enumerate(texts):
        if not isinstance(t, str):
            raise ConfigError(f"query {i} is not a string: {t!r}")
    return texts


def check_truth_sets(y, n: int) -> list:
    """Per-query ground-truth entity sets from names or name lists."""
    truth = list(y)
    if len(truth) != n:
        raise ConfigError(f"expected {n} truth entries, got {len(truth)}")
    return [[t] if isinstance(t, str) else list(t) for t in truth]
