"""Superpixel segmentation and metric tests.

Two independent oracles live here: ``reference_slic`` re-derives the
assignment loop in plain per-pixel Python (no vectorization shared with
the production path), and ``assert_segments_connected`` is a hand-written
BFS flood fill, independent of the relabeling implementation.
"""

import math

import numpy as np
import pytest

from pxattack.image import RtfFormatError, srgb_to_lab, write_rtf
from pxattack.superpixel import (
    compactness,
    enforce_connectivity,
    icv,
    load_segment_map,
    save_segment_map,
    seed_grid,
    slic,
)


def reference_slic(img, n, alpha, iters=10):
    """Straight-from-the-definition assignment loop, pixel by pixel."""
    lab = srgb_to_lab(img)
    height, width = img.shape[:2]
    interval = math.sqrt(height * width / n)
    rows = max(1, min(math.ceil(math.sqrt(n * height / width)), height))
    cols = max(1, min(math.ceil(n / rows), width))
    pos = []
    color = []
    for i in range(rows):
        for j in range(cols):
            cr = (i + 0.5) * height / rows
            cc = (j + 0.5) * width / cols
            pos.append((cr - 0.5, cc - 0.5))
            color.append(lab[min(int(cr), height - 1), min(int(cc), width - 1)].copy())
    pos, color = pos[:n], color[:n]  # seed grid trimmed to the budget
    labels = np.zeros((height, width), dtype=int)
    for _ in range(iters):
        for r in range(height):
            for c in range(width):
                best_k, best_id = math.inf, -1
                for cid, (cr, cc) in enumerate(pos):
                    if abs(r - cr) > interval or abs(c - cc) > interval:
                        continue
                    k_color = math.dist(lab[r, c], color[cid])
                    k_space = math.hypot(r - cr, c - cc)
                    k = max(0.0, k_color + alpha * k_space)
                    if k < best_k:
                        best_k, best_id = k, cid
                if best_id < 0:
                    best_id = min(
                        range(len(pos)),
                        key=lambda cid: math.hypot(r - pos[cid][0], c - pos[cid][1]),
                    )
                labels[r, c] = best_id
        for cid in range(len(pos)):
            rs, cs = np.nonzero(labels == cid)
            if len(rs):
                pos[cid] = (rs.mean(), cs.mean())
                color[cid] = lab[rs, cs].mean(axis=0)
    # compact ids like the production path
    used = sorted(set(labels.ravel().tolist()))
    remap = {old: new for new, old in enumerate(used)}
    return np.vectorize(remap.get)(labels)


def assert_segments_connected(labels):
    """BFS flood fill must reach every pixel of a segment from any pixel."""
    height, width = labels.shape
    seen = np.zeros_like(labels, dtype=bool)
    for r0 in range(height):
        for c0 in range(width):
            if seen[r0, c0]:
                continue
            value = labels[r0, c0]
            stack = [(r0, c0)]
            seen[r0, c0] = True
            count = 0
            while stack:
                r, c = stack.pop()
                count += 1
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= rr < height and 0 <= cc < width:
                        if not seen[rr, cc] and labels[rr, cc] == value:
                            seen[rr, cc] = True
                            stack.append((rr, cc))
            assert count == int((labels == value).sum()), (
                f"segment {value} is not 4-connected"
            )


def assert_partition(labels):
    ids = np.unique(labels)
    assert np.array_equal(ids, np.arange(len(ids))), "ids must be contiguous from 0"


class TestSeedGrid:
    def test_single_cell(self):
        assert seed_grid(4, 4, 1) == [(2, 2)]

    def test_four_quadrant_midpoints(self):
        assert seed_grid(4, 4, 4) == [(1, 1), (1, 3), (3, 1), (3, 3)]

    def test_rectangular_cells_by_hand(self):
        # cells of side 2 in a 6x4 image: 3 rows x 2 cols of midpoints
        assert seed_grid(6, 4, 6) == [(1, 1), (1, 3), (3, 1), (3, 3), (5, 1), (5, 3)]

    def test_count_equals_budget(self):
        for h, w, n in [(10, 10, 7), (9, 13, 5), (16, 4, 11), (5, 5, 25)]:
            seeds = seed_grid(h, w, n)
            assert len(seeds) == n
            assert len(set(seeds)) == n

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            seed_grid(4, 4, 0)
        with pytest.raises(ValueError):
            seed_grid(4, 4, 17)


class TestSlic:
    def test_uniform_image_gives_quadrants(self):
        labels = slic(np.full((4, 4, 3), 0.5), 4, alpha=10.0)
        expected = np.array(
            [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]]
        )
        assert np.array_equal(labels, expected)

    def test_grid_degeneracy_large_alpha(self):
        rng = np.random.default_rng(3)
        img = rng.random((64, 64, 3))
        expected = (np.arange(64)[:, None] // 16) * 4 + (np.arange(64)[None, :] // 16)
        for enforce in (True, False):
            labels = slic(img, 16, alpha=1000.0, enforce=enforce)
            assert np.array_equal(labels, expected)

    def test_matches_reference_two_tone(self):
        # The 2x1 seed grid stacks both seeds in the blue half; the
        # per-round mean update then settles on the top/bottom split.
        img = np.zeros((8, 8, 3))
        img[:, :4] = [1.0, 0.0, 0.0]
        img[:, 4:] = [0.0, 0.0, 1.0]
        labels = slic(img, 2, alpha=0.1, enforce=False)
        assert np.array_equal(labels, reference_slic(img, 2, alpha=0.1))
        assert np.array_equal(labels, np.repeat([[0], [1]], [4, 4], axis=0) * np.ones((1, 8), int))

    def test_color_term_dominates_off_center_boundary(self):
        # Color boundary at row 3; the spatial midpoint alone would put it
        # at row 4. With alpha=0.1 the color term wins.
        img = np.zeros((8, 8, 3))
        img[:3] = [1.0, 0.0, 0.0]
        img[3:] = [0.0, 0.0, 1.0]
        labels = slic(img, 2, alpha=0.1, enforce=False)
        assert np.array_equal(labels, reference_slic(img, 2, alpha=0.1))
        assert set(labels[:3].ravel()) == {0}
        assert set(labels[3:].ravel()) == {1}

    @pytest.mark.parametrize("alpha", [-10.0, 0.5, 10.0])
    def test_matches_reference_random_images(self, alpha):
        rng = np.random.default_rng(11)
        img = rng.random((10, 12, 3))
        assert np.array_equal(
            slic(img, 6, alpha=alpha, enforce=False),
            reference_slic(img, 6, alpha=alpha),
        )

    def test_partition_and_budget(self):
        # Budget bound #S <= n holds for the k-means output; connectivity
        # enforcement may split a disconnected cluster into fresh ids.
        rng = np.random.default_rng(5)
        for n in [1, 3, 7, 16, 40]:
            labels = slic(rng.random((12, 9, 3)), n, enforce=False)
            assert labels.shape == (12, 9)
            assert_partition(labels)
            assert labels.max() + 1 <= n
            enforced = slic(rng.random((12, 9, 3)), n, enforce=True)
            assert_partition(enforced)
            assert_segments_connected(enforced)

    def test_connectivity_enforced_output(self):
        rng = np.random.default_rng(6)
        labels = slic(rng.random((16, 16, 3)), 9, alpha=0.5, enforce=True)
        assert_partition(labels)
        assert_segments_connected(labels)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        img = rng.random((14, 14, 3))
        assert np.array_equal(slic(img, 5), slic(img, 5))

    def test_singleton_budget(self):
        rng = np.random.default_rng(9)
        labels = slic(rng.random((4, 4, 3)), 16)
        assert labels.max() + 1 == 16
        assert_partition(labels)

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            slic(np.zeros((4, 4)), 2)
        with pytest.raises(ValueError):
            slic(np.zeros((4, 4, 3)), 0)


class TestEnforceConnectivity:
    def test_connected_map_is_fixed_point_up_to_renumbering(self):
        labels = np.array([[0, 0, 1], [0, 0, 1], [2, 2, 1]])
        out = enforce_connectivity(labels, min_size=1)
        assert np.array_equal(out, labels)

    def test_isolated_pixel_absorbed(self):
        labels = np.ones((3, 3), dtype=int)
        labels[1, 1] = 0
        out = enforce_connectivity(labels, min_size=2)
        assert np.array_equal(out, np.zeros((3, 3), dtype=int))

    def test_absorbs_into_longest_boundary(self):
        # component of 2 pixels: 3 edges to label 1, 1 edge to label 2
        labels = np.array(
            [
                [1, 1, 1, 1],
                [1, 0, 0, 2],
                [1, 1, 1, 2],
            ]
        )
        out = enforce_connectivity(labels, min_size=3)
        # small 0-component joins label 1's component (left/top), label 2 absorbed too
        assert out[1, 1] == out[0, 0]
        assert out[1, 2] == out[0, 0]

    def test_duplicate_labels_get_fresh_ids(self):
        labels = np.array([[0, 1, 0], [0, 1, 0], [0, 1, 0]])
        out = enforce_connectivity(labels, min_size=1)
        assert_partition(out)
        assert_segments_connected(out)
        assert len(np.unique(out)) == 3

    def test_random_maps_end_up_connected(self):
        rng = np.random.default_rng(17)
        for trial in range(8):
            labels = rng.integers(0, 5, size=(16, 16))
            out = enforce_connectivity(labels, min_size=int(rng.integers(1, 9)))
            assert_partition(out)
            assert_segments_connected(out)

    def test_output_covers_every_pixel(self):
        rng = np.random.default_rng(23)
        labels = rng.integers(0, 3, size=(12, 12))
        out = enforce_connectivity(labels, min_size=4)
        assert out.min() >= 0


class TestIcv:
    def test_uniform_image_is_exactly_zero(self):
        lab = srgb_to_lab(np.full((6, 6, 3), 0.37))
        labels = np.repeat(np.arange(2), 18).reshape(6, 6)
        assert icv(lab, labels) == 0.0

    def test_singletons_are_exactly_zero(self):
        rng = np.random.default_rng(2)
        lab = srgb_to_lab(rng.random((4, 4, 3)))
        labels = np.arange(16).reshape(4, 4)
        assert icv(lab, labels) == 0.0

    def test_hand_computed_case(self):
        # one segment, LAB values (0,0,0),(2,0,0),(0,0,0),(2,0,0):
        # mu=(1,0,0), sum of squared deviations = 4, sqrt(4)/4 = 0.5
        lab = np.zeros((2, 2, 3))
        lab[0, 1, 0] = 2.0
        lab[1, 1, 0] = 2.0
        assert icv(lab, np.zeros((2, 2), dtype=int)) == pytest.approx(0.5, abs=1e-12)

    def test_nonnegative_and_zero_iff_constant(self):
        rng = np.random.default_rng(4)
        lab = srgb_to_lab(rng.random((8, 8, 3)))
        labels = slic(rng.random((8, 8, 3)), 4)
        value = icv(lab, labels)
        assert value >= 0.0
        assert value > 0.0  # random image: some segment is non-constant

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            icv(np.zeros((2, 2, 3)), np.zeros((3, 3), dtype=int))


class TestCompactness:
    def test_4x4_single_segment(self):
        # 16 pixels, 12 on the boundary: Q = 4*pi*16/144
        labels = np.zeros((4, 4), dtype=int)
        assert compactness(labels) == pytest.approx(64 * math.pi / 144, abs=1e-12)

    def test_1x1_degenerate(self):
        assert compactness(np.zeros((1, 1), dtype=int)) == pytest.approx(
            4 * math.pi, abs=1e-12
        )

    def test_two_symmetric_halves_collapse_to_q(self):
        labels = np.repeat([[0], [1]], [4, 4], axis=0) * np.ones((1, 4), int)
        labels = labels.reshape(8, 4).T  # two 4x4 halves of a 4x8 image
        q_single = 4 * math.pi * 16 / 144
        assert compactness(labels) == pytest.approx(q_single, abs=1e-12)

    def test_relabel_invariance(self):
        rng = np.random.default_rng(31)
        labels = slic(rng.random((12, 12, 3)), 6)
        perm = rng.permutation(labels.max() + 1)
        assert compactness(perm[labels]) == pytest.approx(
            compactness(labels), rel=1e-12
        )

    def test_mirror_invariance(self):
        rng = np.random.default_rng(32)
        labels = slic(rng.random((10, 14, 3)), 5)
        assert compactness(labels[::-1]) == pytest.approx(compactness(labels), rel=1e-12)
        assert compactness(labels[:, ::-1]) == pytest.approx(
            compactness(labels), rel=1e-12
        )


class TestSegmentMapIo:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(41)
        labels = slic(rng.random((9, 9, 3)), 4)
        p = tmp_path / "seg.rtf"
        save_segment_map(labels, p)
        assert np.array_equal(load_segment_map(p), labels)

    def test_wrong_dtype_rejected(self, tmp_path):
        p = tmp_path / "f.rtf"
        write_rtf(p, np.zeros((2, 2), dtype=np.float32), "f32")
        with pytest.raises(RtfFormatError):
            load_segment_map(p)
