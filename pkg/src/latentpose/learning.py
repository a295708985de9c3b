"""Latent structured SVM training: k-means init, relabeling, hard-negative mining, Pegasos."""

from __future__ import annotations

import heapq
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureBank, attribute_part_descriptor, joint_feature
from .inference import ScoreTable, infer_attributes, infer_joint
from .model import (
    AttributeAssignment,
    ConfigError,
    DataError,
    FeatureLayout,
    JointLabel,
    ModelParams,
    PoseAssignment,
    TrainConfig,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- k-means


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    wcss: list
    iterations: int


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers, dtype=np.float64)


def _sqdist(X, C):
    return np.maximum((X * X).sum(1)[:, None] - 2 * X @ C.T + (C * C).sum(1)[None, :], 0.0)


def kmeans(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 100) -> KMeansResult:
    """Lloyd iterations from k-means++ seeds.

    Empty clusters are re-seeded at the points farthest from their centroids.
    ``wcss`` records the within-cluster sum of squares after every assignment step.
    """
    X = np.asarray(X, dtype=np.float64)
    centroids = kmeans_plusplus(X, k, rng)
    labels = None
    wcss = []
    it = 0
    for it in range(1, max_iter + 1):
        d = _sqdist(X, centroids)
        new = np.argmin(d, axis=1)
        cost = d[np.arange(len(X)), new]
        wcss.append(float(cost.sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        cost = cost.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = X[members].mean(axis=0)
        for c in range(k):
            if not (labels == c).any():
                far = int(np.argmax(cost))
                centroids[c] = X[far]
                cost[far] = -1.0
    return KMeansResult(centroids, labels, wcss, it)


@dataclass
class KMeansState:
    results: list  # one KMeansResult per attribute


def kmeans_init(
    banks: list[FeatureBank], poses: list[PoseAssignment], layout: FeatureLayout, seed: int
) -> tuple[list[AttributeAssignment], KMeansState]:
    """Cluster each attribute's descriptor under the ground-truth poses; K = T_r."""
    rng = np.random.default_rng(seed)
    per_attr = []
    results = []
    for r, attr in enumerate(layout.schema.attributes):
        X = np.array([attribute_part_descriptor(b, p, r, layout) for b, p in zip(banks, poses)])
        res = kmeans(X, attr.values, rng)
        results.append(res)
        per_attr.append(res.labels)
    labels = [AttributeAssignment(tuple(int(col[k]) for col in per_attr)) for k in range(len(banks))]
    return labels, KMeansState(results)


# ---------------------------------------------------------------- Pegasos


def svm_objective(beta: np.ndarray, V: np.ndarray, z: np.ndarray, C: float) -> float:
    """0.5 |beta|^2 + C * sum max(0, 1 - z <beta, v>)."""
    beta = np.asarray(beta, dtype=np.float64)
    hinge = np.maximum(0.0, 1.0 - z * (V @ beta)) if len(V) else np.zeros(0)
    return float(0.5 * beta @ beta + C * hinge.sum())


def pegasos_step(beta: np.ndarray, v: np.ndarray, z: float, lam: float, t: int, project: bool = True) -> np.ndarray:
    eta = 1.0 / (lam * t)
    violated = z * (beta @ v) < 1.0
    out = (1.0 - eta * lam) * beta
    if violated:
        out = out + (eta * z) * v
    if project:
        norm = np.sqrt(out @ out)
        radius = 1.0 / np.sqrt(lam)
        if norm > radius:
            out = out * (radius / norm)
    return out


def pegasos_fit(
    V: np.ndarray,
    z: np.ndarray,
    C: float,
    epochs: int,
    seed: int,
    beta_init=None,
    *,
    t0: int = 1,
    project: bool = True,
):
    """Stochastic subgradient minimisation of the SVM objective with lambda = 1/(C q).

    One epoch visits every sample once in a seeded random order. Step counting
    starts at ``t0``; with the default t0 = 1 the first step discards
    ``beta_init``, larger values continue a previous run. Returns the final
    iterate (as ModelParams when ``beta_init`` is one) and the next step index.
    """
    V = np.asarray(V, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if V.ndim != 2 or len(V) != len(z) or len(V) == 0:
        raise DataError("pegasos needs a non-empty (q, d) sample matrix with one polarity per row")
    if not np.all(np.isfinite(V)):
        raise DataError("non-finite feature values")
    wrap = isinstance(beta_init, ModelParams)
    if beta_init is None:
        beta = np.zeros(V.shape[1])
    else:
        beta = np.array(beta_init.beta if wrap else beta_init, dtype=np.float64)
    q = len(V)
    lam = 1.0 / (C * q)
    radius = 1.0 / np.sqrt(lam)
    rng = np.random.default_rng(seed)
    t = t0
    for _ in range(epochs):
        for k in rng.permutation(q):
            v = V[k]
            eta = 1.0 / (lam * t)
            zk = z[k]
            violated = zk * (beta @ v) < 1.0
            beta *= 1.0 - eta * lam
            if violated:
                beta += (eta * zk) * v
            if project:
                norm = np.sqrt(beta @ beta)
                if norm > radius:
                    beta *= radius / norm
            t += 1
    if wrap:
        return ModelParams(beta_init.layout, beta), t
    return beta, t


# ---------------------------------------------------------------- hard negatives


@dataclass
class NegativeCache:
    """Mined negative feature vectors with the (sample, label) they came from."""

    dim: int
    capacity: int = 50_000
    vectors: list = field(default_factory=list)
    keys: list = field(default_factory=list)
    evicted: int = 0

    def __len__(self):
        return len(self.vectors)

    def matrix(self) -> np.ndarray:
        if not self.vectors:
            return np.zeros((0, self.dim))
        return np.array(self.vectors)

    def add(self, vector: np.ndarray, key) -> None:
        self.vectors.append(np.asarray(vector, dtype=np.float64))
        self.keys.append(key)

    def enforce_capacity(self, beta: np.ndarray) -> int:
        """Drop the lowest-|score| entries beyond capacity; returns how many went."""
        excess = len(self) - self.capacity
        if excess <= 0:
            return 0
        scores = np.abs(self.matrix() @ beta)
        drop = set(np.argsort(scores, kind="stable")[:excess].tolist())
        self._keep([i for i in range(len(self)) if i not in drop])
        self.evicted += excess
        log.warning("negative cache over capacity: evicted %d entries", excess)
        return excess

    def _keep(self, idx):
        self.vectors = [self.vectors[i] for i in idx]
        self.keys = [self.keys[i] for i in idx]


def split_space(allowed, pose: tuple[int, ...]):
    """Partition ``allowed`` minus the single pose into disjoint sub-spaces."""
    out = []
    for k in range(len(pose)):
        rest = allowed[k] - {pose[k]}
        if not rest:
            continue
        child = tuple(frozenset([pose[i]]) for i in range(k)) + (frozenset(rest),) + tuple(allowed[k + 1 :])
        out.append(child)
    return out


def _is_hard(s: float, mode: str, margin: float) -> bool:
    if mode == "standard":
        # margin-violating: hinge 1 + S is positive
        return s > margin
    # as printed: collect while S* <= margin, stop once S* > margin
    return s <= margin


@dataclass
class MiningStats:
    added: int = 0
    per_sample: list = field(default_factory=list)
    cap_hits: int = 0
    evicted: int = 0


def mine_sample(
    bank: FeatureBank,
    params: ModelParams,
    *,
    table: ScoreTable | None = None,
    mode: str = "standard",
    cap: int = 20,
    max_iters: int = 50,
    margin: float = -1.0,
) -> list[tuple[JointLabel, float]]:
    """Repeated joint inference on one negative, excluding each returned pose afterwards."""
    table = table or ScoreTable(bank, params)
    sizes = bank.grid.sizes()
    full = tuple(frozenset(range(k)) for k in sizes)
    heap = []
    counter = 0

    def push(allowed):
        nonlocal counter
        res = infer_joint(bank, params, max_iters, table=table, allowed=allowed)
        heapq.heappush(heap, (-res.score, counter, allowed, res))
        counter += 1

    push(full)
    found = []
    while heap and len(found) < cap:
        _, _, allowed, res = heapq.heappop(heap)
        if not _is_hard(res.score, mode, margin):
            break
        found.append((res.label, res.score))
        for child in split_space(allowed, res.label.pose.p):
            push(child)
    return found


def mine_hard_negatives(
    banks: list[FeatureBank],
    params: ModelParams,
    cache: NegativeCache,
    cfg: TrainConfig,
    *,
    tables: list | None = None,
) -> MiningStats:
    """Append hard labels of every negative to ``cache`` (in place)."""
    stats = MiningStats()
    layout = params.layout
    for n, bank in enumerate(banks):
        table = tables[n] if tables is not None else None
        found = mine_sample(
            bank, params, table=table, mode=cfg.mining, cap=cfg.exclusion_cap, max_iters=cfg.max_iters, margin=cfg.margin
        )
        for label, _ in found:
            cache.add(joint_feature(bank, label, layout), (n, label))
        stats.per_sample.append(len(found))
        stats.added += len(found)
        stats.cap_hits += len(found) >= cfg.exclusion_cap
    stats.evicted = cache.enforce_capacity(params.beta)
    return stats


def shrink_cache(cache: NegativeCache, params: ModelParams, margin: float = -1.0) -> NegativeCache:
    """Keep only entries with <beta, v> >= margin (easy negatives go)."""
    if len(cache):
        scores = cache.matrix() @ params.beta
        cache._keep([i for i, s in enumerate(scores) if s >= margin])
    return cache


# ---------------------------------------------------------------- training loop


@dataclass
class IterationRecord:
    relabel: int
    iteration: int
    objective: float
    label_changes: int
    mined: int
    cache_size: int
    evicted: int
    wall_time: float


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    initial_objective: float = float("nan")
    kmeans_labels: list = field(default_factory=list)
    final_labels: list = field(default_factory=list)
    initial_params: ModelParams | None = None
    negatives: NegativeCache | None = None  # the cache as left by the last shrink

    def change_counts(self) -> list[int]:
        seen, out = set(), []
        for rec in self.records:
            if rec.relabel not in seen:
                seen.add(rec.relabel)
                out.append(rec.label_changes)
        return out


def _stack(pos_vectors, cache: NegativeCache):
    neg = cache.matrix()
    V = np.vstack([np.array(pos_vectors), neg]) if len(neg) else np.array(pos_vectors)
    z = np.concatenate([np.ones(len(pos_vectors)), -np.ones(len(neg))])
    return V, z


def train_banks(
    pos_banks: list[FeatureBank],
    pos_poses: list[PoseAssignment],
    neg_banks: list[FeatureBank],
    layout: FeatureLayout,
    cfg: TrainConfig,
    seed: int = 0,
    *,
    relabel_fn=infer_attributes,
) -> tuple[ModelParams, TrainReport]:
    """Relabel loop (t1) around mine / fit / shrink rounds (t2) on precomputed banks."""
    if not pos_banks:
        raise ConfigError("training needs at least one positive sample")
    if not neg_banks:
        raise ConfigError("training needs at least one negative sample")
    if len(pos_banks) != len(pos_poses):
        raise ConfigError("one ground-truth pose per positive required")
    ss = np.random.SeedSequence(seed)
    km_seed, fit_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    fit_rng = np.random.default_rng(fit_seed)
    report = TrainReport()

    attrs, _ = kmeans_init(pos_banks, pos_poses, layout, km_seed)
    report.kmeans_labels = list(attrs)
    pos_vec = [joint_feature(b, JointLabel(p, a), layout) for b, p, a in zip(pos_banks, pos_poses, attrs)]
    cache = NegativeCache(layout.size, cfg.cache_capacity)
    V, z = _stack(pos_vec, cache)
    params, step = pegasos_fit(
        V, z, cfg.C, cfg.epochs, int(fit_rng.integers(2**31)), ModelParams.zeros(layout), project=cfg.project
    )
    report.initial_objective = svm_objective(params.beta, V, z, cfg.C)
    report.initial_params = params.copy()

    for relabel in range(1, cfg.t1 + 1):
        new_attrs = [relabel_fn(b, p, params) for b, p in zip(pos_banks, pos_poses)]
        changes = sum(a != b for a, b in zip(attrs, new_attrs))
        attrs = new_attrs
        pos_vec = [joint_feature(b, JointLabel(p, a), layout) for b, p, a in zip(pos_banks, pos_poses, attrs)]
        for it in range(1, cfg.t2 + 1):
            start = time.perf_counter()
            tables = [ScoreTable(b, params) for b in neg_banks]
            stats = mine_hard_negatives(neg_banks, params, cache, cfg, tables=tables)
            V, z = _stack(pos_vec, cache)
            # warm start: the step counter carries over so beta* is refined, not discarded
            params, step = pegasos_fit(
                V, z, cfg.C, cfg.epochs, int(fit_rng.integers(2**31)), params, t0=step, project=cfg.project
            )
            objective = svm_objective(params.beta, V, z, cfg.C)
            shrink_cache(cache, params, cfg.margin)
            rec = IterationRecord(
                relabel, it, objective, changes, stats.added, len(cache), stats.evicted, time.perf_counter() - start
            )
            report.records.append(rec)
            log.info(
                "relabel %d iter %d: objective %.4g, %d relabeled, %d mined, cache %d",
                relabel, it, objective, changes, stats.added, len(cache),
            )
    report.final_labels = list(attrs)
    report.negatives = cache
    return params, report


def train(dataset, layout: FeatureLayout, cfg: TrainConfig, feature_cfg, seed: int = 0, **kw):
    """Train from TrainingSample records carrying images."""
    pos, neg = [], []
    for s in dataset:
        if s.image is None:
            raise DataError("training samples need image rasters")
        bank = FeatureBank.from_image(s.image, s.grid, layout, feature_cfg)
        (pos if s.z == 1 else neg).append((bank, s.pose))
    return train_banks([b for b, _ in pos], [p for _, p in pos], [b for b, _ in neg], layout, cfg, seed, **kw)
