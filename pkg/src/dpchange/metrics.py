"""Accuracy metrics for estimated change points and class labels."""

from __future__ import annotations

import numpy as np
from scipy.special import comb


def cp_f1(true_tau, est_tau, window: int):
    """Precision, recall and F1 under greedy one-to-one matching within ``window``.

    Closest pairs are matched first.  When exactly one of the two sets is
    empty all three scores are 0; two empty sets score 1.
    """
    if window < 0:
        raise ValueError("window must be >= 0")
    true_tau = sorted(set(int(t) for t in true_tau))
    est_tau = sorted(set(int(t) for t in est_tau))
    if not true_tau and not est_tau:
        return 1.0, 1.0, 1.0
    if not true_tau or not est_tau:
        return 0.0, 0.0, 0.0
    pairs = sorted(
        (abs(t - e), t, e) for t in true_tau for e in est_tau if abs(t - e) <= window
    )
    used_t, used_e = set(), set()
    for _, t, e in pairs:
        if t not in used_t and e not in used_e:
            used_t.add(t)
            used_e.add(e)
    hits = len(used_t)
    precision = hits / len(est_tau)
    recall = hits / len(true_tau)
    f1 = 0.0 if hits == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def labels_ari(true_labels, est_labels) -> float:
    """Adjusted Rand index from the contingency table of two labelings."""
    a = np.asarray(true_labels).ravel()
    b = np.asarray(est_labels).ravel()
    if a.size != b.size:
        raise ValueError("labelings differ in length")
    if a.size < 2:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    index = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    expected = sum_a * sum_b / comb(a.size, 2)
    top = 0.5 * (sum_a + sum_b)
    if top == expected:
        return 1.0
    return float((index - expected) / (top - expected))
