"""Scoring, exact tree DP over poses, per-attribute argmax, alternating joint inference."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .features import (
    FeatureBank,
    attribute_part_descriptor,
    pose_attribute_feature,
    pose_feature,
)
from .model import (
    AttributeAssignment,
    FeatureKind,
    JointLabel,
    ModelParams,
    OracleBudgetError,
    PoseAssignment,
    SchemaError,
)

CONVERGENCE_TOL = 1e-9


@dataclass
class InferenceResult:
    label: JointLabel
    score: float
    iterations: int = 1
    converged: bool = True
    history: list = field(default_factory=list)


def score(bank: FeatureBank, label: JointLabel, params: ModelParams) -> float:
    """<beta, J(x, y)> accumulated block by block."""
    layout = params.layout
    bank.check(layout)
    if label.attributes is None:
        raise SchemaError("scoring needs attribute values")
    unary, pair = pose_feature(bank, label.pose, layout)
    attr = pose_attribute_feature(bank, label.pose, label.attributes, layout)
    total = 0.0
    for i, f in enumerate(unary):
        total += float(params.unary(i) @ f)
    for e, f in enumerate(pair):
        total += float(params.pair(e) @ f)
    for r, f in enumerate(attr):
        total += float(params.attr(r).ravel() @ f)
    return total


class ScoreTable:
    """Precomputed potentials for one (bank, params) pair.

    ``unary[i]`` holds <beta_unary_i, hog> per candidate, ``shares[i][r]`` the
    (K_i, T_r) attribute contribution of part i (already divided by |r_p|), and
    ``pair[e]`` the (K_parent, K_child) deformation score of edge e.
    """

    def __init__(self, bank: FeatureBank, params: ModelParams):
        layout = params.layout
        bank.check(layout)
        self.tree = layout.tree
        self.schema = layout.schema
        self.sizes = bank.grid.sizes()
        m = self.tree.m
        self.unary = [bank.descriptor(FeatureKind.HOG, i) @ params.unary(i) for i in range(m)]
        self.shares: list[dict[int, np.ndarray]] = [{} for _ in range(m)]
        for r, attr in enumerate(self.schema.attributes):
            w = params.attr(r)
            for i in attr.parts:
                self.shares[i][r] = (bank.descriptor(attr.kind, i) @ w) / len(attr.parts)
        self.pair = [bank.pair_features(a, b) @ params.pair(e) for e, (a, b) in enumerate(self.tree.edges)]
        self._edge_index = {edge: e for e, edge in enumerate(self.tree.edges)}
        self._children = self.tree.children()
        self._order = self.tree.topological_order()

    def node_scores(self, attributes: AttributeAssignment | None) -> list[np.ndarray]:
        out = []
        for i in range(self.tree.m):
            s = self.unary[i].copy()
            if attributes is not None:
                for r, share in self.shares[i].items():
                    s += share[:, attributes.a[r]]
            out.append(s)
        return out

    def attribute_scores(self, pose: PoseAssignment) -> list[np.ndarray]:
        """Score of each value of each attribute under a fixed pose."""
        out = []
        for r, attr in enumerate(self.schema.attributes):
            s = np.zeros(attr.values)
            for i in attr.parts:
                s = s + self.shares[i][r][pose.p[i]]
            out.append(s)
        return out

    def score(self, pose: PoseAssignment, attributes: AttributeAssignment) -> float:
        nodes = self.node_scores(attributes)
        total = sum(float(nodes[i][k]) for i, k in enumerate(pose.p))
        for e, (a, b) in enumerate(self.tree.edges):
            total += float(self.pair[e][pose.p[a], pose.p[b]])
        return total

    def max_pose(self, attributes: AttributeAssignment | None, allowed=None) -> tuple[PoseAssignment, float]:
        """Leaf-to-root max-product messages then top-down backtracking.

        ``allowed`` optionally restricts each part to a set of candidate indices.
        """
        nodes = self.node_scores(attributes)
        if allowed is not None:
            for i, keep in enumerate(allowed):
                if keep is None:
                    continue
                mask = np.full(self.sizes[i], -np.inf)
                mask[sorted(keep)] = 0.0
                nodes[i] = nodes[i] + mask
        belief = [n.copy() for n in nodes]
        back: dict[int, np.ndarray] = {}
        for i in reversed(self._order):
            for c in self._children[i]:
                e = self._edge_index[(i, c)]
                # (K_parent, K_child): best child choice for each parent candidate
                tot = belief[c][None, :] + self.pair[e]
                back[c] = np.argmax(tot, axis=1)
                belief[i] = belief[i] + tot[np.arange(tot.shape[0]), back[c]]
        root = self.tree.root
        p = [0] * self.tree.m
        p[root] = int(np.argmax(belief[root]))
        best = float(belief[root][p[root]])
        for i in self._order:
            for c in self._children[i]:
                p[c] = int(back[c][p[i]])
        return PoseAssignment(tuple(p)), best

    def max_attributes(self, pose: PoseAssignment) -> AttributeAssignment:
        return AttributeAssignment(tuple(int(np.argmax(s)) for s in self.attribute_scores(pose)))


def infer_pose(
    bank: FeatureBank,
    attributes: AttributeAssignment | None,
    params: ModelParams,
    *,
    table: ScoreTable | None = None,
    allowed=None,
) -> PoseAssignment:
    """Exact argmax over poses for fixed attributes (None drops attribute terms)."""
    table = table or ScoreTable(bank, params)
    return table.max_pose(attributes, allowed)[0]


def infer_attributes(
    bank: FeatureBank, pose: PoseAssignment, params: ModelParams, *, table: ScoreTable | None = None
) -> AttributeAssignment:
    """Independent per-attribute argmax; lowest value index wins ties."""
    if table is not None:
        return table.max_attributes(pose)
    layout = params.layout
    out = []
    for r in range(layout.schema.n):
        f = attribute_part_descriptor(bank, pose, r, layout)
        out.append(int(np.argmax(f @ params.attr(r))))
    return AttributeAssignment(tuple(out))


def infer_joint(
    bank: FeatureBank,
    params: ModelParams,
    max_iters: int = 50,
    *,
    table: ScoreTable | None = None,
    allowed=None,
) -> InferenceResult:
    """Alternate attribute argmax and pose DP until the best score stops changing."""
    table = table or ScoreTable(bank, params)
    pose, _ = table.max_pose(None, allowed)
    best_score, best = -np.inf, None
    history = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        attrs = table.max_attributes(pose)
        new_pose, _ = table.max_pose(attrs, allowed)
        s = table.score(new_pose, attrs)
        history.append(s)
        improved = s > best_score + CONVERGENCE_TOL
        if improved:
            best_score, best = s, JointLabel(new_pose, attrs)
        if not improved or new_pose == pose:
            converged = True
            break
        pose = new_pose
    return InferenceResult(best, float(best_score), it, converged, history)


def _all_poses(sizes) -> np.ndarray:
    return np.array(list(itertools.product(*[range(k) for k in sizes])), dtype=int).reshape(-1, len(sizes))


def _pose_rows(bank: FeatureBank, poses: np.ndarray, layout) -> np.ndarray:
    """Unary and deformation part of J for each pose row."""
    cols = [bank.descriptor(FeatureKind.HOG, i)[poses[:, i]] for i in range(layout.tree.m)]
    coords = [bank.grid.coords(i) for i in range(layout.tree.m)]
    for a, b in layout.tree.edges:
        ca, cb = coords[a][poses[:, a]], coords[b][poses[:, b]]
        dx = (cb[:, 0] - ca[:, 0]) / bank.deformation_scale
        dy = (cb[:, 1] - ca[:, 1]) / bank.deformation_scale
        cols.append(np.stack([dx, dy, dx * dx, dy * dy], axis=1))
    return np.concatenate(cols, axis=1)


def _attr_rows(bank: FeatureBank, poses: np.ndarray, attrs: np.ndarray, layout) -> np.ndarray:
    """(n_poses, n_attrs, attribute dims) outer-product blocks."""
    blocks = []
    for r, attr in enumerate(layout.schema.attributes):
        f = np.mean([bank.descriptor(attr.kind, i)[poses[:, i]] for i in attr.parts], axis=0)
        onehot = np.eye(attr.values)[attrs[:, r]]
        blocks.append(np.einsum("pd,at->padt", f, onehot).reshape(len(poses), len(attrs), -1))
    return np.concatenate(blocks, axis=2)


def brute_force_joint(
    bank: FeatureBank,
    params: ModelParams,
    budget: float = 1e6,
    *,
    poses: np.ndarray | None = None,
    attrs: np.ndarray | None = None,
) -> InferenceResult:
    """Exhaustive argmax of <beta, J> over the label space; lexicographic tie-break.

    Builds every J row explicitly and dots it with the flat beta. ``poses`` and
    ``attrs`` restrict the enumeration to the given 0-based index rows.
    """
    layout = params.layout
    bank.check(layout)
    if poses is None:
        n_poses = int(np.prod(bank.grid.sizes(), dtype=float))
    else:
        n_poses = len(poses)
    if attrs is None:
        n_attrs = int(np.prod(layout.schema.values, dtype=float))
    else:
        n_attrs = len(attrs)
    if float(n_poses) * n_attrs > budget:
        raise OracleBudgetError(f"label space of {n_poses * n_attrs} exceeds oracle budget {budget:g}")
    if poses is None:
        poses = _all_poses(bank.grid.sizes())
    if attrs is None:
        attrs = _all_poses(layout.schema.values)
    beta = params.beta
    chunk = max(1, int(4e6 // max(1, n_attrs * layout.size)))
    best_val, best_idx = -np.inf, None
    for start in range(0, len(poses), chunk):
        sub = poses[start : start + chunk]
        pr = _pose_rows(bank, sub, layout)
        ar = _attr_rows(bank, sub, attrs, layout)
        rows = np.concatenate([np.broadcast_to(pr[:, None, :], (len(sub), len(attrs), pr.shape[1])), ar], axis=2)
        vals = rows.reshape(-1, layout.size) @ beta
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val = float(vals[k])
            best_idx = (start + k // len(attrs), k % len(attrs))
    pose = PoseAssignment(tuple(poses[best_idx[0]]))
    attributes = AttributeAssignment(tuple(attrs[best_idx[1]]))
    return InferenceResult(JointLabel(pose, attributes), best_val, 1, True, [best_val])


def brute_force_pose(bank: FeatureBank, attributes: AttributeAssignment, params: ModelParams, budget: float = 1e6):
    """Exhaustive pose argmax with attributes held fixed."""
    res = brute_force_joint(bank, params, budget, attrs=np.array([attributes.a]))
    return res.label.pose, res.score


def brute_force_attributes(bank: FeatureBank, pose: PoseAssignment, params: ModelParams, budget: float = 1e6):
    """Exhaustive attribute argmax with the pose held fixed."""
    res = brute_force_joint(bank, params, budget, poses=np.array([pose.p]))
    return res.label.attributes, res.score
