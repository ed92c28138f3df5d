import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rrc.gsrc import (
    build_dictionary,
    certify_equivalence,
    certify_trials,
    encode,
    gsrc_path,
    gsrc_solve,
    rrc_path,
    shared_frame_reference,
    synthesize,
)
from rrc.patches import PatchGroup

from oracles import grid_argmin


def _group(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape) * 5


class TestDictionary:
    @pytest.mark.parametrize("shape", [(3, 8), (8, 3), (6, 6), (49, 60)])
    def test_orthonormal_atoms_and_reconstruction(self, shape):
        Y = _group(shape, sum(shape))
        d = build_dictionary(Y)
        assert d.size == min(shape)
        np.testing.assert_allclose(d.gram(), np.eye(d.size), atol=1e-10)
        assert np.linalg.norm(synthesize(d, d.source.sigma) - Y) <= 1e-8 * np.linalg.norm(Y)

    def test_coefficients_are_singular_values(self):
        Y = _group((7, 5), 1)
        d = build_dictionary(Y)
        np.testing.assert_allclose(encode(d, Y), np.linalg.svd(Y, compute_uv=False), atol=1e-9)

    def test_rank_one_group(self):
        v = np.arange(1.0, 10.0)
        Y = np.outer(v, [1.0, 2.0, -0.5, 3.0])
        s = build_dictionary(PatchGroup(Y, np.zeros((4, 2), int), 3)).source.sigma
        assert s[1] < 1e-8 * s[0]

    def test_shape_errors(self):
        d = build_dictionary(_group((4, 3), 2))
        with pytest.raises(ValueError):
            encode(d, np.zeros((3, 4)))
        with pytest.raises(ValueError):
            synthesize(d, np.zeros(4))


class TestSolve:
    def test_examples(self):
        k = np.array([3.0, -1.0, 0.2])
        np.testing.assert_array_equal(gsrc_solve(k, k, 2.0), k)
        np.testing.assert_allclose(gsrc_solve(k, np.zeros(3), 0.5), [2.5, -0.5, 0.0])

    def test_grid_oracle(self):
        rng = np.random.default_rng(3)
        k, b = rng.uniform(-5, 5, 8), rng.uniform(-5, 5, 8)
        lam = 0.8
        out = gsrc_solve(k, b, lam)
        for kk, bb, o in zip(k, b, out):
            x = grid_argmin(lambda a: 0.5 * (kk - a) ** 2 + lam * np.abs(a - bb), -12, 12, 1e-4)
            assert abs(o - x) <= 1e-4

    def test_errors(self):
        with pytest.raises(ValueError):
            gsrc_solve(np.zeros(3), np.zeros(2), 1.0)
        with pytest.raises(ValueError):
            gsrc_solve(np.zeros(3), np.zeros(3), -1.0)


class TestEquivalence:
    @settings(max_examples=100, deadline=None)
    @given(
        seed=st.integers(0, 2**32 - 1),
        d=st.integers(3, 8),
        m=st.integers(3, 8),
        lam=st.sampled_from([0.0, 0.1, 1.0, 5.0]),
    )
    def test_norm_identity_and_shared_frame_routes(self, seed, d, m, lam):
        rng = np.random.default_rng(seed)
        Y = rng.standard_normal((d, m)) * rng.uniform(0.5, 10)
        R = shared_frame_reference(Y, rng.uniform(0, 10, min(d, m)))
        rep = certify_equivalence(Y, R, lam, rng)
        assert rep["norm_gap"] < 1e-10
        assert rep["shared_frame"]
        assert rep["route_distance"] < 1e-8 * np.linalg.norm(Y)

    def test_zero_lambda_returns_group(self):
        Y = _group((6, 5), 4)
        R = _group((6, 5), 5)
        for route in (rrc_path, gsrc_path):
            assert np.linalg.norm(route(Y, R, 0.0) - Y) <= 1e-10 * np.linalg.norm(Y)

    def test_independent_frame_is_reported_not_hidden(self):
        Y = _group((6, 5), 6)
        R = _group((6, 5), 7)
        rep = certify_equivalence(Y, R, 2.0, rng=0)
        assert not rep["shared_frame"]
        assert rep["frame_residual"] > 1e-3
        assert rep["route_distance"] > 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            certify_equivalence(np.zeros((3, 3)), np.zeros((3, 4)), 1.0)

    def test_trials_summary_is_reproducible(self):
        a = certify_trials(30, seed=11)
        b = certify_trials(30, seed=11)
        assert a == b
        s = a["summary"]
        assert s["norm_identity_ok"] and s["equivalence_ok"]
        assert s["mean_independent_route_relative"] > 1e-6
        assert len(a["trials"]) == 30
        with pytest.raises(ValueError):
            certify_trials(-1, 0)
