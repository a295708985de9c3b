"""PCP for poses and clustering F1 for latent attributes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import DataError, PartCandidate

# column groups of the usual upper-body PCP table
PART_GROUPS = {
    "torso": (0,),
    "upper_arms": (2, 3),
    "lower_arms": (4, 5),
    "head": (1,),
}


def part_endpoints(c: PartCandidate) -> tuple[np.ndarray, np.ndarray]:
    """Ends of the box's long axis: centre -/+ (s/2)(cos theta, sin theta)."""
    d = 0.5 * c.s * np.array([math.cos(c.theta), math.sin(c.theta)])
    centre = np.array([c.x, c.y])
    return centre - d, centre + d


@dataclass
class PcpResult:
    per_part: list  # correctness rate per part, nan if every instance was skipped
    total: float
    verdicts: list  # per image, per part: True / False / None (skipped)
    skipped: int = 0
    groups: dict = field(default_factory=dict)


def part_correct(pred: PartCandidate, true: PartCandidate, threshold: float = 0.5) -> bool | None:
    """Both predicted ends within threshold * true length of the matching true ends; None for zero length."""
    ta, tb = part_endpoints(true)
    length = float(np.linalg.norm(tb - ta))
    if length == 0.0:
        return None
    pa, pb = part_endpoints(pred)
    tol = threshold * length
    return bool(np.linalg.norm(pa - ta) <= tol and np.linalg.norm(pb - tb) <= tol)


def pcp(
    predicted: list[list[PartCandidate]],
    truth: list[list[PartCandidate]],
    threshold: float = 0.5,
    total: str = "parts",
) -> PcpResult:
    """Percentage of correct parts.

    ``predicted`` and ``truth`` hold the selected boxes per image. ``total``
    is "parts" (mean over the individual parts) or "groups" (mean over the
    torso / upper arms / lower arms / head columns).
    """
    if len(predicted) != len(truth):
        raise DataError(f"{len(predicted)} predictions for {len(truth)} ground-truth poses")
    if not truth:
        raise DataError("no images to evaluate")
    m = len(truth[0])
    verdicts = []
    hits = np.zeros(m)
    counts = np.zeros(m)
    skipped = 0
    for pred, true in zip(predicted, truth):
        if len(pred) != m or len(true) != m:
            raise DataError("every pose must list the same number of parts")
        row = []
        for i in range(m):
            ok = part_correct(pred[i], true[i], threshold)
            row.append(ok)
            if ok is None:
                skipped += 1
                continue
            counts[i] += 1
            hits[i] += ok
        verdicts.append(row)
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    groups = {}
    if m == 6:
        for name, idx in PART_GROUPS.items():
            groups[name] = float(np.nanmean(rates[list(idx)])) if np.any(counts[list(idx)]) else float("nan")
    if total == "parts":
        agg = float(np.nanmean(rates))
    elif total == "groups":
        if not groups:
            raise DataError("group totals need the six-part skeleton")
        agg = float(np.nanmean(list(groups.values())))
    else:
        raise ValueError(f"unknown total mode {total!r}")
    return PcpResult([float(r) for r in rates], agg, verdicts, skipped, groups)


def pair_counts(predicted, truth) -> tuple[int, int, int]:
    """(same in both, same in prediction, same in truth) over all unordered pairs."""
    p = np.asarray(predicted)
    t = np.asarray(truth)
    same_p = p[:, None] == p[None, :]
    same_t = t[:, None] == t[None, :]
    iu = np.triu_indices(len(p), 1)
    sp, st = same_p[iu], same_t[iu]
    return int(np.sum(sp & st)), int(sp.sum()), int(st.sum())


def pairwise_f1(predicted, truth) -> float:
    """F1 of the "same cluster" relation over all sample pairs; permutation invariant."""
    if len(predicted) != len(truth):
        raise DataError("predicted and true labels differ in length")
    if len(truth) < 2:
        raise DataError("pairwise F1 needs at least two samples")
    both, sp, st = pair_counts(predicted, truth)
    if sp + st == 0:
        return 1.0
    return 2.0 * both / (sp + st)


def matched_f1(predicted, truth) -> float:
    """Macro F1 over true classes after a one-to-one (Hungarian) cluster matching."""
    if len(predicted) != len(truth):
        raise DataError("predicted and true labels differ in length")
    if len(truth) < 2:
        raise DataError("matched F1 needs at least two samples")
    p_ids = sorted(set(predicted))
    t_ids = sorted(set(truth))
    table = np.zeros((len(t_ids), len(p_ids)))
    for a, b in zip(truth, predicted):
        table[t_ids.index(a), p_ids.index(b)] += 1
    rows, cols = linear_sum_assignment(-table)
    match = dict(zip(rows, cols))
    scores = []
    for i in range(len(t_ids)):
        tp = table[i, match[i]] if i in match else 0.0
        n_true = table[i].sum()
        n_pred = table[:, match[i]].sum() if i in match else 0.0
        scores.append(2 * tp / (n_true + n_pred) if n_true + n_pred else 0.0)
    return float(np.mean(scores))


@dataclass
class ClusteringScore:
    per_attribute: list
    total: float


def clustering_score(predicted, truth, variant: str = "pairwise") -> ClusteringScore:
    """Per-attribute F1 and their mean; inputs are lists of per-sample value tuples."""
    fn = {"pairwise": pairwise_f1, "matched": matched_f1}[variant]
    if len(predicted) != len(truth):
        raise DataError("predicted and true attribute lists differ in length")
    n = len(truth[0])
    per = [fn([p[r] for p in predicted], [t[r] for t in truth]) for r in range(n)]
    return ClusteringScore(per, float(np.mean(per)))

