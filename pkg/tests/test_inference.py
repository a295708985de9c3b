import itertools

import numpy as np
import pytest

from latentpose.features import joint_feature
from latentpose.inference import (
    ScoreTable,
    brute_force_attributes,
    brute_force_joint,
    brute_force_pose,
    infer_attributes,
    infer_joint,
    infer_pose,
    score,
)
from latentpose.model import (
    AttributeAssignment,
    FeatureKind,
    JointLabel,
    ModelParams,
    OracleBudgetError,
    PoseAssignment,
)

from conftest import naive_argmax, naive_score, random_bank, random_params, small_layout

LAYOUT = small_layout()


def random_label(rng, sizes, values=(3, 4, 5)):
    return JointLabel(
        PoseAssignment(tuple(int(rng.integers(k)) for k in sizes)),
        AttributeAssignment(tuple(int(rng.integers(t)) for t in values)),
    )


class TestScore:
    def test_zero_weights(self, rng):
        bank = random_bank(rng, LAYOUT, (3,) * 6)
        for _ in range(5):
            assert score(bank, random_label(rng, (3,) * 6), ModelParams.zeros(LAYOUT)) == 0.0

    def test_normalised_feature_as_weights(self, rng):
        bank = random_bank(rng, LAYOUT, (3,) * 6)
        label = random_label(rng, (3,) * 6)
        j = joint_feature(bank, label, LAYOUT)
        params = ModelParams(LAYOUT, j / np.linalg.norm(j))
        assert score(bank, label, params) == pytest.approx(np.linalg.norm(j), rel=1e-12)

    def test_matches_flat_dot_product(self, rng):
        for _ in range(50):
            bank = random_bank(rng, LAYOUT, (3,) * 6)
            params = random_params(rng, LAYOUT)
            label = random_label(rng, (3,) * 6)
            assert score(bank, label, params) == pytest.approx(naive_score(bank, label, params), abs=1e-9)
            assert ScoreTable(bank, params).score(label.pose, label.attributes) == pytest.approx(
                naive_score(bank, label, params), abs=1e-9
            )


class TestInferPose:
    def test_singleton_space(self, rng):
        bank = random_bank(rng, LAYOUT, (1,) * 6)
        params = random_params(rng, LAYOUT)
        a = AttributeAssignment((2, 1, 0))
        pose = infer_pose(bank, a, params)
        assert pose.p == (0,) * 6

    def test_no_pair_weights_decouples_parts(self, rng):
        bank = random_bank(rng, LAYOUT, (4,) * 6)
        params = random_params(rng, LAYOUT)
        for e in range(5):
            params.pair(e)[:] = 0.0
        a = AttributeAssignment((1, 2, 3))
        pose = infer_pose(bank, a, params)
        for i in range(6):
            # score each candidate of part i alone: unary plus its share of attribute terms
            part_scores = []
            for k in range(4):
                s = bank.descriptor(FeatureKind.HOG, i)[k] @ params.unary(i)
                for r, attr in enumerate(LAYOUT.schema.attributes):
                    if i in attr.parts:
                        s += bank.descriptor(attr.kind, i)[k] @ params.attr(r)[:, a.a[r]] / len(attr.parts)
                part_scores.append(s)
            assert pose.p[i] == int(np.argmax(part_scores))

    def test_exhaustive_729(self, rng):
        for _ in range(20):
            bank = random_bank(rng, LAYOUT, (3,) * 6)
            params = random_params(rng, LAYOUT)
            a = AttributeAssignment(tuple(int(rng.integers(t)) for t in (3, 4, 5)))
            pose = infer_pose(bank, a, params)
            best, best_s = naive_argmax(bank, params, attrs=[a.a])
            assert pose == best.pose
            assert naive_score(bank, JointLabel(pose, a), params) == pytest.approx(best_s, abs=1e-9)

    def test_allowed_sets_restrict_choice(self, rng):
        bank = random_bank(rng, LAYOUT, (3,) * 6)
        params = random_params(rng, LAYOUT)
        allowed = [frozenset({1, 2})] * 6
        pose = infer_pose(bank, None, params, allowed=allowed)
        assert all(k in {1, 2} for k in pose.p)
        ref = ScoreTable(bank, params)
        best = max(
            itertools.product((1, 2), repeat=6),
            key=lambda p: sum(ref.unary[i][k] for i, k in enumerate(p))
            + sum(ref.pair[e][p[a], p[b]] for e, (a, b) in enumerate(LAYOUT.tree.edges)),
        )
        assert pose.p == best


class TestInferAttributes:
    def test_exhaustive_60(self, rng):
        for _ in range(30):
            bank = random_bank(rng, LAYOUT, (2,) * 6)
            params = random_params(rng, LAYOUT)
            pose = PoseAssignment(tuple(int(rng.integers(2)) for _ in range(6)))
            got = infer_attributes(bank, pose, params)
            best, _ = naive_argmax(bank, params, poses=[pose.p])
            assert got == best.attributes

    def test_zero_attribute_weights_pick_first_value(self, rng):
        bank = random_bank(rng, LAYOUT, (2,) * 6)
        params = random_params(rng, LAYOUT).without_attributes()
        got = infer_attributes(bank, PoseAssignment((1,) * 6), params)
        assert got.to_external() == [1, 1, 1]

    def test_dominant_column(self, rng):
        bank = random_bank(rng, LAYOUT, (2,) * 6)
        params = ModelParams.zeros(LAYOUT)
        params.attr(1)[:, 2] = 100.0
        got = infer_attributes(bank, PoseAssignment((0,) * 6), params)
        assert got.a == (0, 2, 0)

    def test_table_and_direct_paths_agree(self, rng):
        bank = random_bank(rng, LAYOUT, (3,) * 6)
        params = random_params(rng, LAYOUT)
        pose = PoseAssignment((2, 0, 1, 1, 0, 2))
        assert infer_attributes(bank, pose, params) == infer_attributes(
            bank, pose, params, table=ScoreTable(bank, params)
        )


class TestInferJoint:
    def test_zero_model(self, rng):
        bank = random_bank(rng, LAYOUT, (3,) * 6)
        res = infer_joint(bank, ModelParams.zeros(LAYOUT))
        assert res.iterations == 1 and res.converged
        assert res.score == 0.0
        assert res.label.attributes.to_external() == [1, 1, 1]

    def test_singleton_space(self, rng):
        bank = random_bank(rng, LAYOUT, (1,) * 6)
        params = random_params(rng, LAYOUT)
        res = infer_joint(bank, params)
        assert res.iterations == 1
        assert res.label.pose.p == (0,) * 6
        assert res.label.attributes == infer_attributes(bank, res.label.pose, params)

    def test_monotone_bounded_and_consistent(self, rng):
        for _ in range(100):
            sizes = tuple(int(k) for k in rng.integers(1, 4, 6))
            bank = random_bank(rng, LAYOUT, sizes)
            params = random_params(rng, LAYOUT)
            res = infer_joint(bank, params, max_iters=50)
            assert 1 <= res.iterations <= 50
            assert all(b >= a - 1e-9 for a, b in zip(res.history, res.history[1:]))
            assert res.score == max(res.history)
            assert naive_score(bank, res.label, params) == pytest.approx(res.score, abs=1e-9)

    def test_beats_random_labels_and_mostly_exact(self, rng):
        exact = 0
        for _ in range(200):
            bank = random_bank(rng, LAYOUT, (3,) * 6)
            params = random_params(rng, LAYOUT)
            res = infer_joint(bank, params)
            sampled = max(naive_score(bank, random_label(rng, (3,) * 6), params) for _ in range(100))
            assert res.score >= sampled - 1e-9
            exact += brute_force_joint(bank, params).score - res.score <= 1e-9
        assert exact / 200 >= 0.9

    def test_repeatable(self, rng):
        bank = random_bank(rng, LAYOUT, (3,) * 6)
        params = random_params(rng, LAYOUT)
        assert infer_joint(bank, params).label == infer_joint(bank, params).label

    def test_max_iters_respected(self, rng):
        bank = random_bank(rng, LAYOUT, (3,) * 6)
        params = random_params(rng, LAYOUT)
        assert infer_joint(bank, params, max_iters=1).iterations == 1


class TestBruteForce:
    def test_singleton(self, rng):
        bank = random_bank(rng, LAYOUT, (1,) * 6)
        params = random_params(rng, LAYOUT)
        res = brute_force_joint(bank, params)
        assert res.label.pose.p == (0,) * 6
        assert res.label.attributes == infer_attributes(bank, res.label.pose, params)

    def test_matches_naive_enumeration(self, rng):
        for _ in range(5):
            bank = random_bank(rng, LAYOUT, (2, 2, 2, 1, 2, 1))
            params = random_params(rng, LAYOUT)
            res = brute_force_joint(bank, params)
            label, s = naive_argmax(bank, params)
            assert res.label == label
            assert res.score == pytest.approx(s, abs=1e-9)

    def test_agrees_with_block_maxima(self, rng):
        for _ in range(20):
            bank = random_bank(rng, LAYOUT, (3,) * 6)
            params = random_params(rng, LAYOUT)
            res = brute_force_joint(bank, params)
            pose, _ = brute_force_pose(bank, res.label.attributes, params)
            attrs, _ = brute_force_attributes(bank, res.label.pose, params)
            assert pose == res.label.pose == infer_pose(bank, res.label.attributes, params)
            assert attrs == res.label.attributes == infer_attributes(bank, res.label.pose, params)

    def test_budget_guard(self, rng):
        bank = random_bank(rng, LAYOUT, (3,) * 6)
        with pytest.raises(OracleBudgetError):
            brute_force_joint(bank, random_params(rng, LAYOUT), budget=10)
