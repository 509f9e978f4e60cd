import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skedit.sketch_synthesis import (
    DeformationParams,
    DegenerateSketch,
    EmptyMask,
    elastic_deform,
    extract_edges,
    perturb_edges,
    synthesize_training_pair,
)
from tests.conftest import circle_contour, filled_disk


class TestExtractEdges:
    def test_square_boundary_count(self):
        mask = np.zeros((64, 64), dtype=np.uint8)
        mask[10:30, 10:30] = 1  # 20x20 filled square
        edge = extract_edges(mask)
        # brute-force boundary oracle: pixels of the square with a 4-neighbor outside
        count = 0
        for y in range(64):
            for x in range(64):
                if not mask[y, x]:
                    continue
                nbrs = [mask[y - 1, x], mask[y + 1, x], mask[y, x - 1], mask[y, x + 1]]
                if min(nbrs) == 0:
                    count += 1
        assert edge.sum() == count == 4 * 19
        assert np.isin(edge, (0, 1)).all()

    def test_single_pixel(self):
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[3, 4] = 1
        edge = extract_edges(mask)
        assert np.array_equal(edge, mask)

    def test_empty_mask(self):
        with pytest.raises(EmptyMask):
            extract_edges(np.zeros((8, 8), dtype=np.uint8))


class TestPerturbEdges:
    def test_dilation_thickens_line(self):
        line = np.zeros((16, 16), dtype=np.uint8)
        line[8, 2:14] = 1
        params = DeformationParams(erosion_probability=0.0)  # force dilation
        out = perturb_edges(line, params, np.random.default_rng(0))
        assert out[7:10, 3:13].all()
        assert out.sum() > line.sum()

    def test_erosion_empties_thin_contour(self):
        contour = circle_contour(64, (32, 32), 15)
        params = DeformationParams(erosion_probability=1.0)
        out = perturb_edges(contour, params, np.random.default_rng(0))
        assert out.sum() < 0.1 * contour.sum()

    def test_seeded_determinism(self):
        contour = circle_contour(64, (32, 32), 15)
        params = DeformationParams(erosion_probability=0.5)
        a = perturb_edges(contour, params, np.random.default_rng(42))
        b = perturb_edges(contour, params, np.random.default_rng(42))
        assert np.array_equal(a, b)


class TestElasticDeform:
    def test_zero_sigma_identity(self):
        contour = circle_contour(64, (32, 32), 15)
        params = DeformationParams(sigma0=0.0)
        out = elastic_deform(contour, params, np.random.default_rng(0))
        assert np.array_equal(out, contour)

    def test_monte_carlo_bounds(self):
        # over 100 seeds: pixel count within +-40%, centroid moves < sigma0
        contour = circle_contour(128, (64, 64), 20)
        params = DeformationParams(sigma0=4.0, sigma_smooth=6.0)
        cy0, cx0 = np.argwhere(contour).mean(axis=0)
        for seed in range(100):
            out = elastic_deform(contour, params, np.random.default_rng(seed))
            ratio = out.sum() / contour.sum()
            assert 0.6 <= ratio <= 1.4
            cy, cx = np.argwhere(out).mean(axis=0)
            assert np.hypot(cy - cy0, cx - cx0) < params.sigma0

    def test_seeded_determinism_bit_exact(self):
        contour = circle_contour(64, (32, 32), 12)
        params = DeformationParams(sigma0=4.0)
        a = elastic_deform(contour, params, np.random.default_rng(9))
        b = elastic_deform(contour, params, np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_output_binary(self):
        contour = circle_contour(64, (32, 32), 12)
        out = elastic_deform(contour, DeformationParams(sigma0=8.0), np.random.default_rng(1))
        assert np.isin(out, (0, 1)).all()


class TestTrainingPair:
    def test_square_zero_sigma_dilation(self):
        mask = np.zeros((64, 64), dtype=np.uint8)
        mask[20:40, 20:40] = 1
        params = DeformationParams(sigma0=0.0, erosion_probability=0.0)
        sketch, edge = synthesize_training_pair(mask, params, np.random.default_rng(0))
        assert np.array_equal(edge, extract_edges(mask))
        expected = perturb_edges(edge, params, np.random.default_rng(0))
        assert np.array_equal(sketch, expected)

    def test_phantom_pair_encloses_tumor(self, phantom):
        from skedit.mask_ops import fill_mask, interior_mask
        from skedit.metrics import dice

        mask = phantom.tumor_masks[0]
        sketch, edge = synthesize_training_pair(
            mask, DeformationParams(), np.random.default_rng(3)
        )
        interior = interior_mask(sketch)
        assert dice(fill_mask(interior), mask) > 0.5

    def test_degenerate_after_retries(self):
        mask = np.zeros((16, 16), dtype=np.uint8)
        mask[5, 5:7] = 1  # 2-pixel mask; erosion branch wipes the edge
        params = DeformationParams(erosion_probability=1.0)
        with pytest.raises(DegenerateSketch):
            synthesize_training_pair(mask, params, np.random.default_rng(0))

    def test_pipeline_deterministic(self, phantom):
        mask = phantom.tumor_masks[0]
        params = DeformationParams()
        a = synthesize_training_pair(mask, params, np.random.default_rng(11))
        b = synthesize_training_pair(mask, params, np.random.default_rng(11))
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])


@given(st.integers(min_value=5, max_value=25), st.integers(min_value=0, max_value=1000))
@settings(max_examples=15, deadline=None)
def test_all_outputs_binary(radius, seed):
    contour = circle_contour(64, (32, 32), radius)
    rng = np.random.default_rng(seed)
    out = elastic_deform(
        perturb_edges(contour, DeformationParams(), rng), DeformationParams(), rng
    )
    assert np.isin(out, (0, 1)).all()


def test_smoothing_zero_field_is_zero():
    from scipy.ndimage import gaussian_filter

    field = np.zeros((32, 32))
    assert (gaussian_filter(field, 6.0) == 0).all()
