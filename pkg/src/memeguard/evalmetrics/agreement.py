"""Fleiss' kappa for fixed-rater-count categorical labeling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class AgreementReport:
    kappa: float
    n_items: int
    n_raters: int
    marginals: tuple[float, ...]  # per-category share of all ratings


def fleiss_kappa(matrix: Sequence[Sequence[int]]) -> AgreementReport:
    """Chance-corrected multi-rater agreement.

    ``matrix[i][j]`` counts raters who put item i in category j; every row
    must sum to the same rater count n >= 2. When expected agreement is 1
    (all rating mass in one category) kappa is 1.0 if observed agreement is
    also 1, otherwise the statistic is undefined and a ValueError is raised.
    """
    if not matrix:
        raise ValueError("fleiss_kappa needs at least one item")
    n_cats = len(matrix[0])
    n = sum(matrix[0])
    for i, row in enumerate(matrix):
        if len(row) != n_cats:
            raise ValueError(f"row {i} has {len(row)} categories, expected {n_cats}")
        if any(c < 0 for c in row):
            raise ValueError(f"row {i} has negative counts")
        if sum(row) != n:
            raise ValueError(f"row {i} sums to {sum(row)}, expected rater count {n}")
    if n < 2:
        raise ValueError("rater count must be >= 2")

    n_items = len(matrix)
    p_obs = sum(
        (sum(c * c for c in row) - n) / (n * (n - 1)) for row in matrix
    ) / n_items
    marginals = tuple(
        sum(row[j] for row in matrix) / (n_items * n) for j in range(n_cats)
    )
    p_exp = sum(p * p for p in marginals)

    if p_exp == 1.0:
        if p_obs == 1.0:
            kappa = 1.0
        else:
            raise ValueError("expected agreement is 1 but observed is not; kappa undefined")
    else:
        kappa = (p_obs - p_exp) / (1.0 - p_exp)
    return AgreementReport(kappa=kappa, n_items=n_items, n_raters=n, marginals=marginals)
