import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latentpose.features import (
    LBP_CATCH_ALL,
    UNIFORM_LUT,
    FeatureBank,
    FeatureConfig,
    attribute_part_descriptor,
    color_histogram,
    deformation_feature,
    extract_patch,
    hog_descriptor,
    indicator,
    joint_feature,
    lbp_codes,
    lbp_descriptor,
    make_layout,
    pose_attribute_feature,
    pose_feature,
)
from latentpose.model import (
    AttributeAssignment,
    CandidateGrid,
    DataError,
    FeatureKind,
    ImageRaster,
    JointLabel,
    PartCandidate,
    PoseAssignment,
    SchemaError,
    default_schema,
    default_skeleton,
)

from conftest import random_bank, small_layout

CFG = FeatureConfig()
patches = arrays(np.float64, (64, 32, 3), elements=st.floats(0, 1, allow_nan=False))


def solid(color, h=64, w=32):
    return np.broadcast_to(np.asarray(color, dtype=float), (h, w, 3)).copy()


class TestExtractPatch:
    def test_constant_image_gives_constant_patch(self):
        img = ImageRaster(np.full((80, 80, 3), 128, np.uint8))
        patch = extract_patch(img, PartCandidate(40, 40, 30, 0.0), CFG)
        assert patch.shape == (64, 32, 3)
        assert np.allclose(patch, 128 / 255, atol=1e-12)

    def test_half_turn_is_180_degree_rotation(self, rng):
        img = ImageRaster(rng.integers(0, 256, (60, 70, 3), dtype=np.uint8))
        a = extract_patch(img, PartCandidate(33.3, 28.7, 24, 0.0), CFG)
        b = extract_patch(img, PartCandidate(33.3, 28.7, 24, -math.pi), CFG)
        assert np.allclose(b, a[::-1, ::-1], atol=1e-9)

    def test_corner_candidate_matches_per_pixel_oracle(self, rng):
        px = rng.integers(0, 256, (20, 30, 3), dtype=np.uint8)
        img = ImageRaster(px)
        c = PartCandidate(0.0, 19.0, 16.0, 0.7)
        cfg = FeatureConfig(patch_height=16, patch_width=8, hog_cell=4)
        patch = extract_patch(img, c, cfg)
        f = px.astype(float) / 255
        expected = np.zeros_like(patch)
        for i in range(16):
            for j in range(8):
                along = ((i + 0.5) / 16 - 0.5) * c.s
                across = ((j + 0.5) / 8 - 0.5) * c.s * 0.5
                x = c.x + along * math.cos(c.theta) - across * math.sin(c.theta)
                y = c.y + along * math.sin(c.theta) + across * math.cos(c.theta)
                x = min(max(x, 0.0), 29.0)
                y = min(max(y, 0.0), 19.0)
                x0, y0 = int(math.floor(x)), int(math.floor(y))
                x1, y1 = min(x0 + 1, 29), min(y0 + 1, 19)
                fx, fy = x - x0, y - y0
                expected[i, j] = (
                    f[y0, x0] * (1 - fx) * (1 - fy)
                    + f[y0, x1] * fx * (1 - fy)
                    + f[y1, x0] * (1 - fx) * fy
                    + f[y1, x1] * fx * fy
                )
        assert np.allclose(patch, expected, atol=1e-12)

    def test_centre_outside_image_rejected(self):
        img = ImageRaster(np.zeros((10, 10, 3), np.uint8))
        with pytest.raises(DataError):
            extract_patch(img, PartCandidate(12, 5, 4, 0.0), CFG)


class TestHog:
    def test_dimension_from_block_count(self):
        cells_y, cells_x = 64 // 8, 32 // 8
        blocks = sum(1 for by in range(cells_y) for bx in range(cells_x) if by + 2 <= cells_y and bx + 2 <= cells_x)
        assert blocks == 21
        assert CFG.hog_dim == blocks * 2 * 2 * 9 == 756
        assert hog_descriptor(solid((0.3, 0.3, 0.3)), CFG).shape == (756,)

    def test_constant_patch_is_zero(self):
        assert not hog_descriptor(solid((0.4, 0.6, 0.2)), CFG).any()

    def test_vertical_step_edge(self):
        # two 8x8 cells side by side, dark left half, bright right half
        cfg = FeatureConfig(patch_height=8, patch_width=16, hog_block=1)
        patch = np.zeros((8, 16))
        patch[:, 8:] = 1.0
        d = hog_descriptor(patch, cfg)
        # columns 7 and 8 carry gradient (1, 0): angle 0 lands in bin 0 of each cell
        expected = np.zeros(18)
        expected[0] = expected[9] = 1.0
        assert np.allclose(d, expected, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(patches)
    def test_blocks_are_unit_or_zero(self, patch):
        d = hog_descriptor(patch, CFG).reshape(21, 36)
        norms = np.linalg.norm(d, axis=1)
        assert np.all((np.abs(norms - 1) <= 1e-9) | (norms == 0))
        assert d.max() <= 1.0 + 1e-12


class TestLbp:
    def test_uniform_table(self):
        assert UNIFORM_LUT[0] == 0
        assert UNIFORM_LUT[255] == 57
        assert (UNIFORM_LUT == LBP_CATCH_ALL).sum() == 256 - 58
        assert sorted(set(UNIFORM_LUT[UNIFORM_LUT < 58].tolist())) == list(range(58))

    def test_constant_patch(self):
        d = lbp_descriptor(solid((0.5, 0.5, 0.5)))
        assert d[0] == 1.0 and d.sum() == 1.0

    def test_checkerboard_codes_by_hand(self):
        board = (np.indices((64, 32)).sum(axis=0) % 2).astype(float)
        codes = lbp_codes(board)
        dark, bright = (10, 10), (10, 11)
        assert board[dark] == 0 and board[bright] == 1
        # interior bright pixel: diagonals equal, edge neighbours darker, so no bit is set
        assert codes[bright] == 0
        # interior dark pixel: the four edge neighbours (bits 1, 3, 5, 7) are brighter
        assert codes[dark] == 0b10101010
        assert UNIFORM_LUT[0b10101010] == LBP_CATCH_ALL
        d = lbp_descriptor(board)
        assert d[LBP_CATCH_ALL] == pytest.approx(0.5, abs=1e-12)
        assert d[0] == pytest.approx(0.5, abs=1e-12)
        assert d[LBP_CATCH_ALL] >= d.max()

    @settings(max_examples=50, deadline=None)
    @given(patches)
    def test_sums_to_one(self, patch):
        d = lbp_descriptor(patch)
        assert d.shape == (59,)
        assert abs(d.sum() - 1) <= 1e-9


class TestColorHistogram:
    def test_pure_red(self):
        d = color_histogram(solid((1.0, 0.0, 0.0)), CFG)
        assert d[(7 * 8 + 0) * 8 + 0] == 1.0
        assert d.sum() == 1.0

    def test_half_red_half_green(self):
        patch = solid((1.0, 0.0, 0.0))
        patch[32:] = (0.0, 1.0, 0.0)
        d = color_histogram(patch, CFG)
        assert d[448] == 0.5 and d[56] == 0.5
        assert np.count_nonzero(d) == 2

    @settings(max_examples=50, deadline=None)
    @given(patches)
    def test_sums_to_one(self, patch):
        assert abs(color_histogram(patch, CFG).sum() - 1) <= 1e-9


class TestDeformation:
    def test_direct(self):
        f = deformation_feature(PartCandidate(10, 20, 5, 0), PartCandidate(13, 24, 5, 0))
        assert f.tolist() == [3, 4, 9, 16]

    def test_identical_centres(self):
        c = PartCandidate(7, 8, 5, 0.3)
        assert deformation_feature(c, c).tolist() == [0, 0, 0, 0]

    def test_swap_and_closed_form(self, rng):
        for _ in range(1000):
            x1, y1, x2, y2 = rng.uniform(-100, 100, 4)
            a, b = PartCandidate(x1, y1, 1, 0), PartCandidate(x2, y2, 1, 0)
            f, g = deformation_feature(a, b), deformation_feature(b, a)
            dx, dy = x2 - x1, y2 - y1
            assert f.tolist() == [dx, dy, dx * dx, dy * dy]
            assert g[0] == -f[0] and g[1] == -f[1]
            assert g[2] == f[2] and g[3] == f[3]

    def test_scale_divides_first(self):
        f = deformation_feature(PartCandidate(0, 0, 1, 0), PartCandidate(8, 4, 1, 0), scale=4.0)
        assert f.tolist() == [2, 1, 4, 1]


class TestIndicator:
    def test_one_based_examples(self):
        assert indicator(AttributeAssignment.from_external([2]).a[0], 4).tolist() == [0, 1, 0, 0]
        assert indicator(AttributeAssignment.from_external([1]).a[0], 3).tolist() == [1, 0, 0]

    def test_sums_to_one(self):
        for t in range(1, 7):
            for v in range(t):
                assert indicator(v, t).sum() == 1

    def test_out_of_range(self):
        with pytest.raises(SchemaError):
            indicator(3, 3)


def _two_color_image():
    px = np.zeros((100, 100, 3), np.uint8)
    px[:, :50] = (255, 0, 0)
    px[:, 50:] = (0, 255, 0)
    return ImageRaster(px)


def _arm_grid():
    red = PartCandidate(20, 50, 20, 0.0)
    green = PartCandidate(80, 50, 20, 0.0)
    torso = PartCandidate(25, 50, 20, math.pi / 2 - 1e-9)
    return CandidateGrid([[torso], [torso], [red], [red, green], [green], [green]])


class TestAttributeDescriptors:
    layout = make_layout(default_skeleton(), default_schema(), CFG)

    def test_pattern_is_torso_lbp(self):
        img = _two_color_image()
        grid = _arm_grid()
        bank = FeatureBank.from_image(img, grid, self.layout, CFG)
        pose = PoseAssignment((0,) * 6)
        expected = lbp_descriptor(extract_patch(img, grid.parts[0][0], CFG))
        assert np.array_equal(attribute_part_descriptor(bank, pose, 2, self.layout), expected)

    def test_identical_arms_average_to_one_histogram(self):
        img = _two_color_image()
        red = PartCandidate(20, 50, 20, 0.0)
        grid = CandidateGrid([[red]] * 6)
        bank = FeatureBank.from_image(img, grid, self.layout, CFG)
        single = color_histogram(extract_patch(img, red, CFG), CFG)
        assert np.allclose(attribute_part_descriptor(bank, PoseAssignment((0,) * 6), 0, self.layout), single, atol=1e-15)

    def test_two_red_two_green_arms(self):
        bank = FeatureBank.from_image(_two_color_image(), _arm_grid(), self.layout, CFG)
        # arms 2, 3 red and 4, 5 green
        f = attribute_part_descriptor(bank, PoseAssignment((0, 0, 0, 0, 0, 0)), 0, self.layout)
        assert f[448] == 0.5 and f[56] == 0.5
        # moving arm 3 to the green box gives 1/4 red, 3/4 green
        f = attribute_part_descriptor(bank, PoseAssignment((0, 0, 0, 1, 0, 0)), 0, self.layout)
        assert f[448] == 0.25 and f[56] == 0.75


class TestJointFeature:
    def test_default_dimension(self):
        layout = make_layout(default_skeleton(), default_schema(), CFG)
        hog = (64 // 8 - 1) * (32 // 8 - 1) * 4 * 9
        assert layout.size == 6 * hog + 5 * 4 + (512 * 3 + hog * 4 + 59 * 5) == 9411

    def test_one_hot_column(self, rng):
        layout = small_layout()
        bank = random_bank(rng, layout, (2,) * 6)
        pose = PoseAssignment((1, 0, 1, 0, 1, 0))
        blocks = pose_attribute_feature(bank, pose, AttributeAssignment.from_external([2, 1, 1]), layout)
        m = blocks[0].reshape(layout.dims[FeatureKind.COLOR_HIST], 3)
        f = attribute_part_descriptor(bank, pose, 0, layout)
        assert np.array_equal(m[:, 1], f)
        assert not m[:, [0, 2]].any()

    def test_sleeve_block_size(self):
        assert CFG.color_dim * 3 == 1536

    def test_contraction_identity(self, rng):
        for _ in range(1000):
            d, t = int(rng.integers(1, 20)), int(rng.integers(1, 6))
            w = rng.normal(size=(d, t))
            f = rng.random(d)
            a = int(rng.integers(t))
            lhs = w.ravel() @ np.outer(f, indicator(a, t)).ravel()
            assert abs(lhs - w[:, a] @ f) <= 1e-12

    def test_block_decomposition_and_independence(self, rng):
        layout = small_layout()
        bank = random_bank(rng, layout, (3,) * 6)
        pose = PoseAssignment((2, 1, 0, 2, 1, 0))
        a = AttributeAssignment((1, 3, 2))
        j = joint_feature(bank, JointLabel(pose, a), layout)
        assert j.shape == (layout.size,)
        off = layout.offsets()
        unary, pair = pose_feature(bank, pose, layout)
        for i, u in enumerate(unary):
            assert np.array_equal(j[off[("unary", i)]], u)
        for e, p in enumerate(pair):
            assert np.array_equal(j[off[("pair", e)]], p)
        b = AttributeAssignment((1, 0, 2))
        j2 = joint_feature(bank, JointLabel(pose, b), layout)
        changed = np.flatnonzero(j != j2)
        sl = off[("attr", 1)]
        assert changed.size and changed.min() >= sl.start and changed.max() < sl.stop
        assert np.array_equal(joint_feature(bank, JointLabel(pose, a), layout), j)

    def test_pose_part_ignores_attributes(self, rng):
        layout = small_layout()
        bank = random_bank(rng, layout, (3,) * 6)
        pose = PoseAssignment((0, 1, 2, 0, 1, 2))
        n = layout.size - sum(layout.attr_dim(r) * t for r, t in enumerate(layout.schema.values))
        first = joint_feature(bank, JointLabel(pose, AttributeAssignment((0, 0, 0))), layout)[:n]
        second = joint_feature(bank, JointLabel(pose, AttributeAssignment((2, 3, 4))), layout)[:n]
        assert np.array_equal(first, second)

    def test_bank_from_image_shapes(self, rng):
        layout = make_layout(default_skeleton(), default_schema(), CFG)
        img = ImageRaster(rng.integers(0, 256, (64, 64, 3), dtype=np.uint8))
        grid = CandidateGrid([[PartCandidate(30, 30, 20, 0.1), PartCandidate(20, 40, 16, -1.0)]] * 6)
        bank = FeatureBank.from_image(img, grid, layout, CFG)
        bank.check(layout)
        assert bank.descriptor(FeatureKind.HOG, 5).shape == (2, 756)
        assert bank.descriptor(FeatureKind.LBP, 0).shape == (2, 59)
        with pytest.raises(SchemaError):
            bank.descriptor(FeatureKind.LBP, 1)
