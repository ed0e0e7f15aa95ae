"""FSQ tests: bounding formula against a high-precision oracle, grid
cardinality by dense sweeps, index bijections by exhaustive enumeration, and
the straight-through gradient identity."""

import mpmath
import numpy as np
import pytest

from quantlab import analysis
from quantlab.autodiff import Tensor, backward
from quantlab.fsq import (LevelsSpec, RECOMMENDED_LEVELS, bound,
                          codes_to_indexes, implicit_codebook,
                          indexes_to_codes, quantize, recommend_levels)

from helpers import finite_diff

RNG = np.random.default_rng(41)

TABLE_CONFIGS = [(8, 6, 5), (8, 5, 5, 5), (7, 5, 5, 5, 5), (8, 8, 8, 6, 5),
                 (8, 8, 8, 5, 5, 5)]


def bound_oracle(z: float, level: int, eps: float = 1e-3) -> float:
    """Evaluate tanh(z + shift) * half_l - offset at 50 decimal digits."""
    with mpmath.workdps(50):
        half_l = (level - 1) * (1 - mpmath.mpf(eps)) / 2
        offset = mpmath.mpf("0.5") if level % 2 == 0 else mpmath.mpf(0)
        shift = mpmath.tan(offset / half_l)
        return float(mpmath.tanh(z + shift) * half_l - offset)


class TestLevelsSpec:
    def test_derived_constants(self):
        spec = LevelsSpec((8, 6, 5))
        assert np.array_equal(spec.basis, [1, 8, 48])
        assert np.allclose(spec.half_l, [7 * 0.999 / 2, 5 * 0.999 / 2, 4 * 0.999 / 2])
        assert np.array_equal(spec.offset, [0.5, 0.5, 0.0])
        assert np.array_equal(spec.half_width, [4, 3, 2])
        assert spec.codebook_size == 240

    def test_basis_strictly_increasing(self):
        for levels in TABLE_CONFIGS:
            basis = LevelsSpec(levels).basis
            assert np.all(np.diff(basis.astype(np.int64)) > 0)

    def test_offset_zero_exactly_for_odd(self):
        spec = LevelsSpec((2, 3, 4, 5, 6, 7, 8, 9))
        assert np.array_equal(spec.offset == 0.0, [l % 2 == 1 for l in spec.levels])

    def test_rejects_small_levels(self):
        with pytest.raises(ValueError):
            LevelsSpec((1, 5))
        with pytest.raises(ValueError):
            LevelsSpec(())

    def test_text_roundtrip(self):
        spec = LevelsSpec.from_text("8,5,5,5")
        assert spec.levels == (8, 5, 5, 5)
        assert spec.to_text() == "8,5,5,5"
        with pytest.raises(ValueError):
            LevelsSpec.from_text("8,five")


class TestBound:
    def test_odd_level_at_zero(self):
        spec = LevelsSpec((5,))
        assert bound(np.zeros((1, 1)), spec)[0, 0] == 0.0

    def test_odd_level_saturates_near_half_l(self):
        spec = LevelsSpec((5,))
        got = bound(np.full((1, 1), 10.0), spec)[0, 0]
        assert np.isclose(got, bound_oracle(10.0, 5), rtol=0, atol=1e-12)
        assert np.isclose(got, 1.998, atol=1e-4)

    def test_even_level_at_zero_matches_oracle(self):
        spec = LevelsSpec((4,))
        got = bound(np.zeros((1, 1)), spec)[0, 0]
        assert np.isclose(got, bound_oracle(0.0, 4), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("level", range(2, 10))
    def test_matches_oracle_across_inputs(self, level):
        spec = LevelsSpec((level,))
        for z in (-20.0, -3.0, -0.7, 0.0, 0.3, 1.9, 20.0):
            got = bound(np.array([[z]]), spec)[0, 0]
            assert np.isclose(got, bound_oracle(z, level), rtol=0, atol=1e-11)

    @pytest.mark.parametrize("level", range(2, 10))
    def test_output_inside_rounding_range(self, level):
        # tanh saturates to exactly +-1.0 in float64 for |z| >~ 19, so the
        # mathematically strict bounds are attained there; the closed interval
        # is what the grid needs (the eps margin keeps rounding in range).
        spec = LevelsSpec((level,))
        z = np.linspace(-40, 40, 5001).reshape(-1, 1)
        out = bound(z, spec)
        assert np.all(out >= -spec.half_l[0] - spec.offset[0])
        assert np.all(out <= spec.half_l[0] - spec.offset[0])
        z = np.linspace(-5, 5, 1001).reshape(-1, 1)
        out = bound(z, spec)
        assert np.all(out > -spec.half_l[0] - spec.offset[0])
        assert np.all(out < spec.half_l[0] - spec.offset[0])

    def test_tensor_and_numpy_paths_agree(self):
        spec = LevelsSpec((8, 5, 5, 5))
        z = RNG.uniform(-3, 3, (16, 4))
        assert np.array_equal(bound(Tensor(z), spec).data, bound(z, spec))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            bound(np.zeros((4, 3)), LevelsSpec((8, 5, 5, 5)))


class TestQuantize:
    def test_three_level_endpoints(self):
        spec = LevelsSpec((3,))
        for z, expect in ((0.0, 0.0), (10.0, 1.0), (-10.0, -1.0)):
            assert quantize(np.array([[z]]), spec)[0, 0] == expect

    def test_five_level_dense_sweep_has_exactly_five_outputs(self):
        spec = LevelsSpec((5,))
        z = np.arange(-10.0, 10.0, 1e-3).reshape(-1, 1)
        values = np.unique(quantize(z, spec))
        assert values.tolist() == [-1.0, -0.5, 0.0, 0.5, 1.0]

    @pytest.mark.parametrize("level", range(2, 10))
    def test_channel_cardinality(self, level):
        spec = LevelsSpec((level,))
        z = np.arange(-10.0, 10.0, 1e-3).reshape(-1, 1)
        values = np.unique(quantize(z, spec))
        assert values.size == level
        assert values.min() >= -1.0 and values.max() <= 1.0

    def test_gradient_matches_bound_over_half_width(self):
        spec = LevelsSpec((5,))
        z0 = np.array([[0.2]])
        z = Tensor(z0, requires_grad=True)
        backward(quantize(z, spec).sum())
        fd = finite_diff(lambda a: float(bound(a, spec).sum() / 2.0), z0, h=1e-6)
        assert np.allclose(z.grad, fd, rtol=0, atol=1e-6)

    def test_ste_gradient_equals_bound_graph_bit_exactly(self):
        spec = LevelsSpec((8, 5, 5, 5))
        z0 = RNG.uniform(-3, 3, (128, 4))
        z = Tensor(z0, requires_grad=True)
        backward(quantize(z, spec).sum())
        z_ref = Tensor(z0, requires_grad=True)
        hw = Tensor(spec.half_width.astype(np.float64))
        backward((bound(z_ref, spec) / hw).sum())
        assert np.array_equal(z.grad, z_ref.grad)

    def test_forward_lands_on_grid(self):
        spec = LevelsSpec((8, 6, 5))
        z = RNG.normal(0, 2, (256, 3))
        q = quantize(z, spec)
        codes_to_indexes(q, spec)   # raises if off-grid
        digits = q * spec.half_width + spec.half_width
        assert np.array_equal(digits, np.round(digits))

    def test_requantizing_grid_points_is_stable(self):
        # quantize -> indices -> codes -> indices must be a fixed point
        spec = LevelsSpec((8, 5, 5, 5))
        z = RNG.normal(0, 2, (512, 4))
        idx = codes_to_indexes(quantize(z, spec), spec)
        codes = indexes_to_codes(idx, spec)
        assert np.array_equal(codes_to_indexes(codes, spec), idx)


class TestIndexBijection:
    def test_three_levels_single_channel(self):
        spec = LevelsSpec((3,))
        for code, expect in ((-1.0, 0), (0.0, 1), (1.0, 2)):
            assert codes_to_indexes(np.array([code]), spec) == expect

    def test_mixed_radix_hand_example(self):
        # digits (2, 4) with levels (3, 5): index = 2 * 1 + 4 * 3 = 14
        spec = LevelsSpec((3, 5))
        code = np.array([(2 - 1) / 1, (4 - 2) / 2], dtype=np.float64)
        assert codes_to_indexes(code, spec) == 14

    def test_brute_force_enumeration_cross_check(self):
        spec = LevelsSpec((3, 5))
        expected = 0
        for d1 in range(5):          # slow axis
            for d0 in range(3):      # fast axis (basis[0] = 1)
                code = np.array([(d0 - 1) / 1.0, (d1 - 2) / 2.0])
                assert codes_to_indexes(code, spec) == expected
                expected += 1

    def test_index_zero_and_max_are_corner_codes(self):
        spec = LevelsSpec((8, 6, 5))
        assert np.array_equal(indexes_to_codes(0, spec), [-1.0, -1.0, -1.0])
        assert np.array_equal(indexes_to_codes(spec.codebook_size - 1, spec),
                              [(7 - 4) / 4, (5 - 3) / 3, 1.0])

    def test_full_roundtrip_240_codes(self):
        spec = LevelsSpec((8, 6, 5))
        idx = np.arange(240, dtype=np.uint64)
        assert np.array_equal(codes_to_indexes(indexes_to_codes(idx, spec), spec), idx)

    @pytest.mark.parametrize("levels", TABLE_CONFIGS)
    def test_bijection_every_table_config(self, levels):
        spec = LevelsSpec(levels)
        idx = np.arange(spec.codebook_size, dtype=np.uint64)
        roundtrip = codes_to_indexes(indexes_to_codes(idx, spec), spec)
        assert np.array_equal(roundtrip, idx)

    def test_off_grid_code_rejected(self):
        spec = LevelsSpec((3,))
        with pytest.raises(ValueError):
            codes_to_indexes(np.array([0.3]), spec)
        # within snap tolerance passes
        assert codes_to_indexes(np.array([1e-10]), spec) == 1

    def test_out_of_range_index_rejected(self):
        spec = LevelsSpec((3, 5))
        with pytest.raises(ValueError):
            indexes_to_codes(15, spec)
        with pytest.raises(ValueError):
            indexes_to_codes(-1, spec)


class TestImplicitCodebook:
    def test_27_codes_for_3x3x3(self):
        assert implicit_codebook(LevelsSpec((3, 3, 3))).shape == (27, 3)

    def test_15_codes_for_5_3(self):
        assert implicit_codebook(LevelsSpec((5, 3))).shape == (15, 2)

    def test_all_codes_distinct(self):
        cb = implicit_codebook(LevelsSpec((5, 3)))
        assert np.unique(cb, axis=0).shape[0] == 15

    def test_enumeration_guard(self):
        spec = LevelsSpec((8, 8, 8, 5, 5, 5))
        with pytest.raises(ValueError):
            implicit_codebook(spec, max_size=2 ** 10)
        assert implicit_codebook(spec, max_size=64000).shape == (64000, 6)

    def test_zero_learnable_parameters(self):
        total, breakdown = analysis.parameter_count(LevelsSpec((8, 5, 5, 5)))
        assert total == 0 and breakdown == [("fsq_bottleneck", 0)]


class TestRecommendLevels:
    @pytest.mark.parametrize("target,levels", sorted(RECOMMENDED_LEVELS.items()))
    def test_lookup_table(self, target, levels):
        assert recommend_levels(target).levels == levels

    def test_recommended_sizes_within_ten_percent(self):
        for target, levels in RECOMMENDED_LEVELS.items():
            size = LevelsSpec(levels).codebook_size
            assert abs(size - target) / target <= 0.10, (target, levels)

    def test_known_products(self):
        assert LevelsSpec(RECOMMENDED_LEVELS[2 ** 8]).codebook_size == 240
        assert LevelsSpec(RECOMMENDED_LEVELS[2 ** 10]).codebook_size == 1000
        assert LevelsSpec(RECOMMENDED_LEVELS[2 ** 16]).codebook_size == 64000

    def test_heuristic_fallback_properties(self):
        for target in RNG.integers(25, 70_000, size=40):
            spec = recommend_levels(int(target))
            assert all(l >= 5 for l in spec.levels)
            assert len(spec.levels) >= 2
            assert abs(spec.codebook_size - target) / target <= 0.10

    def test_small_targets_rejected(self):
        with pytest.raises(ValueError):
            recommend_levels(24)
        assert recommend_levels(25).levels == (5, 5)
