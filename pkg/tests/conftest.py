import itertools
import math

import numpy as np
import pytest

from latentpose.features import FeatureBank, joint_feature
from latentpose.model import (
    AttributeAssignment,
    CandidateGrid,
    FeatureKind,
    FeatureLayout,
    JointLabel,
    ModelParams,
    PartCandidate,
    PoseAssignment,
    default_schema,
    default_skeleton,
)

# small descriptor sizes keep exhaustive enumeration cheap
SMALL_DIMS = {FeatureKind.HOG: 6, FeatureKind.LBP: 5, FeatureKind.COLOR_HIST: 4}


def small_layout(schema=None, tree=None):
    return FeatureLayout(tree or default_skeleton(), schema or default_schema(), SMALL_DIMS)


def random_grid(rng, sizes, span=50.0):
    parts = []
    for k in sizes:
        parts.append(
            [
                PartCandidate(
                    float(rng.uniform(0, span)),
                    float(rng.uniform(0, span)),
                    float(rng.uniform(5, 30)),
                    float(rng.uniform(-math.pi, math.pi)),
                )
                for _ in range(k)
            ]
        )
    return CandidateGrid(parts)


def random_bank(rng, layout, sizes, scale=10.0):
    grid = random_grid(rng, sizes)
    desc = {}
    for i, k in enumerate(sizes):
        desc[(FeatureKind.HOG, i)] = rng.random((k, layout.dims[FeatureKind.HOG]))
    for attr in layout.schema.attributes:
        for p in attr.parts:
            d = rng.random((sizes[p], layout.dims[attr.kind]))
            desc[(attr.kind, p)] = d / d.sum(axis=1, keepdims=True)
    return FeatureBank(grid, desc, scale)


def random_params(rng, layout, scale=1.0):
    return ModelParams(layout, rng.normal(0.0, scale, layout.size))


def naive_score(bank, label, params):
    return float(joint_feature(bank, label, params.layout) @ params.beta)


def naive_argmax(bank, params, poses=None, attrs=None):
    """Exhaustive argmax by assembling J for every label; first maximum in lexicographic order wins."""
    if poses is None:
        poses = itertools.product(*[range(k) for k in bank.grid.sizes()])
    attrs = list(attrs if attrs is not None else itertools.product(*[range(t) for t in params.layout.schema.values]))
    best, best_label = -np.inf, None
    for p in poses:
        for a in attrs:
            label = JointLabel(PoseAssignment(p), AttributeAssignment(a))
            s = naive_score(bank, label, params)
            if s > best:
                best, best_label = s, label
    return best_label, best


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
