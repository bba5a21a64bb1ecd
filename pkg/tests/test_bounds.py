import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from neural_pathways import bounds


def dstar_oracle(j, w):
    """Independent symbolic evaluation of the MLP VC bound (sympy path)."""
    j_, w_ = sp.Integer(j), sp.Integer(w)
    inner = sp.log(2 * sp.E * (j_ + 1) * w_, 2)
    expr = j_ + (j_ + 1) * w_ ** 2 * sp.log(4 * sp.E * (j_ + 1) * w_ * inner, 2)
    return int(sp.ceiling(expr))


class TestModulusInverse:
    def test_identity_modulus(self):
        mod = bounds.HolderModulus(1.0, 1.0)
        assert bounds.modulus_inverse(mod, 0.5) == 0.5

    def test_square_root_modulus(self):
        mod = bounds.HolderModulus(0.5, 1.0)
        assert bounds.modulus_inverse(mod, 0.5) == 0.25

    def test_lipschitz_constant(self):
        mod = bounds.HolderModulus(1.0, 2.0)
        assert bounds.modulus_inverse(mod, 1.0) == 0.5

    def test_roundtrip(self):
        mod = bounds.HolderModulus(0.7, 3.0)
        for s in (0.1, 1.0, 7.5):
            assert mod(bounds.modulus_inverse(mod, s)) == pytest.approx(s)

    def test_zero_l_rejected(self):
        with pytest.raises(ValueError, match="L = 0"):
            bounds.modulus_inverse(bounds.HolderModulus(1.0, 0.0), 1.0)


class TestDepthWidth:
    def test_r_zero_golden(self):
        assert bounds.pathway_depth_width(1, 1, 0.37, 0) == (32, 49)

    def test_width_n4(self):
        assert bounds.pathway_depth_width(4, 1, 1.0, 0).width == 65

    def test_r_one_eps_tenth(self):
        # 0.1**-1 must ceil to 10 despite float roundoff
        assert bounds.pathway_depth_width(1, 1, 0.1, 1).depth == 131

    def test_m_scales_depth(self):
        one = bounds.pathway_depth_width(2, 1, 0.5, 0).depth
        assert bounds.pathway_depth_width(2, 3, 0.5, 0).depth == 3 * one


class TestTheoremDelta:
    def test_constant_262(self):
        mod = bounds.HolderModulus(1.0, 1.0)
        for eps in (1.0, 0.25, 1e-3):
            assert bounds.theorem_delta(1, 1, eps, 0, mod) == eps / 262

    def test_linear_in_eps(self):
        mod = bounds.HolderModulus(1.0, 1.0)
        d1 = bounds.theorem_delta(2, 2, 0.1, 0, mod)
        d2 = bounds.theorem_delta(2, 2, 0.2, 0, mod)
        assert d2 == pytest.approx(2 * d1)

    def test_sqrt_modulus(self):
        mod = bounds.HolderModulus(0.5, 1.0)
        assert bounds.theorem_delta(1, 1, 1.0, 0, mod) == pytest.approx(
            (1.0 / 131.0) ** 2 / 2.0)


class TestTreeComplexity:
    def test_golden_composition(self):
        est = bounds.tree_complexity(4.0, 1.0, 2.0, 2)
        assert (est.leaves, est.height, est.nodes) == (16, 4, 31)

    def test_small_case(self):
        est = bounds.tree_complexity(2.0, 1.0, 1.0, 2)
        assert (est.leaves, est.height, est.nodes) == (2, 1, 3)

    def test_arity_four_halves_height(self):
        # c = 1/log2(v): v=4 gives half the height factor of v=2
        h2 = bounds.tree_complexity(16.0, 1.0, 8.0, 2).height
        h4 = bounds.tree_complexity(16.0, 1.0, 8.0, 4).height
        assert h4 == h2 // 2


class TestVcMlpDstar:
    def test_frozen_oracle_values(self):
        # frozen from the sympy oracle at 60 digits
        assert bounds.vc_mlp_dstar(1, 1) == 14
        assert bounds.vc_mlp_dstar(1, 2) == 62
        assert bounds.vc_mlp_dstar(2, 2) == 103
        assert bounds.vc_mlp_dstar(2, 3) == 248
        assert bounds.vc_mlp_dstar(3, 4) == 652

    def test_matches_live_oracle_grid(self):
        for j in range(1, 5):
            for w in range(1, 5):
                assert bounds.vc_mlp_dstar(j, w) == dstar_oracle(j, w)

    @given(st.integers(1, 8), st.integers(1, 8))
    def test_monotone_in_width(self, j, w):
        assert bounds.vc_mlp_dstar(j, w + 1) > bounds.vc_mlp_dstar(j, w)

    def test_validation(self):
        with pytest.raises(ValueError):
            bounds.vc_mlp_dstar(0, 1)


class TestVcPathwaysBound:
    @given(st.integers(1, 1000), st.integers(1, 100))
    def test_single_cell_is_8d(self, d, n):
        assert bounds.vc_pathways_bound(d, n, 1) == 8 * d

    def test_two_cell_hand_value(self):
        # 8*2*log2(2)^2 * max(1, 2*2*1*log2(3)) = 16 * 4 * log2(3)
        raw = bounds.vc_pathways_bound_value(1, 1, 2)
        assert raw == pytest.approx(64 * math.log2(3.0), rel=1e-12)
        assert raw == pytest.approx(101.43760004615399, abs=1e-10)
        assert bounds.vc_pathways_bound(1, 1, 2) == 102

    def test_monotone_grid(self):
        grid = [(d, n, l) for d in (1, 4, 16) for n in (1, 4, 16)
                for l in (1, 2, 8, 64)]
        for d, n, l in grid:
            v = bounds.vc_pathways_bound_value(d, n, l)
            assert bounds.vc_pathways_bound_value(d + 1, n, l) >= v
            assert bounds.vc_pathways_bound_value(d, n + 1, l) >= v
            assert bounds.vc_pathways_bound_value(d, n, l + 1) >= v

    def test_composes_with_dstar(self):
        d = bounds.vc_mlp_dstar(1, 2)
        assert bounds.vc_pathways_bound(d, 1, 1) == 8 * 62


class TestCurseScaling:
    def test_term_values(self):
        sc = bounds.curse_scaling(2, 1.0, 0.1)
        assert sc.relu == pytest.approx(10.0)
        assert sc.pathway_resident == pytest.approx(10.0)
        assert sc.pathway_forward == pytest.approx(2 * math.log2(10.0) * 10.0)

    def test_resident_term_ignores_dimension(self):
        a = bounds.curse_scaling(2, 1.0, 0.05).pathway_resident
        b = bounds.curse_scaling(64, 1.0, 0.05).pathway_resident
        assert a == b

    def test_relu_curse_grows(self):
        sc = bounds.curse_scaling(4, 1.0, 0.01)
        assert sc.relu == pytest.approx(1e4)
        assert sc.pathway_resident == pytest.approx(1e2)

    def test_validation(self):
        with pytest.raises(ValueError, match="eps"):
            bounds.curse_scaling(2, 1.0, 1.5)
        with pytest.raises(ValueError, match="alpha"):
            bounds.curse_scaling(2, 0.0, 0.1)


class TestComplexityEstimate:
    def test_composition_consistent(self):
        mod = bounds.HolderModulus(1.0, 1.0)
        est = bounds.complexity_estimate(2, 1, 0.1, 0.0, mod, 8.0, 2.0, 2)
        dw = bounds.pathway_depth_width(2, 1, 0.1, 0)
        assert (est.depth, est.width) == (dw.depth, dw.width)
        delta = bounds.theorem_delta(2, 1, 0.1, 0, mod)
        tc = bounds.tree_complexity(8.0, delta, 2.0, 2)
        assert (est.leaves, est.height, est.nodes) == tuple(tc)

    def test_leaf_shape_tracks_eps(self):
        # smaller eps -> smaller covering radius -> taller tree, never shorter
        mod = bounds.HolderModulus(0.5, 1.0)
        heights = [bounds.complexity_estimate(2, 1, eps, 0.0, mod, 8.0, 2.0, 2).height
                   for eps in (0.5, 0.1, 0.02)]
        assert heights == sorted(heights)
