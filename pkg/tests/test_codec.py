"""Seeded basis construction, projection solvers, truncation, reconstruction."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffcomm.codec import (ConvergenceError, DegenerateBasisError, GdConfig, WeightVector,
                            basis_fingerprint, build_basis, project_exact, project_gd,
                            reconstruct, truncate_topk, weights_from_dense)
from diffcomm.numerics import gaussian_stream


class TestBuildBasis:
    def test_deterministic(self):
        a = build_basis(range(1, 9), 128)
        b = build_basis(range(1, 9), 128)
        assert a.fingerprint == b.fingerprint
        assert a.vectors.tobytes() == b.vectors.tobytes()

    def test_rows_are_seed_streams(self):
        basis = build_basis([11, 22, 33], 64)
        for i, seed in enumerate((11, 22, 33)):
            assert basis.vectors[i].tobytes() == gaussian_stream(seed, 64).tobytes()

    def test_permutation_changes_fingerprint(self):
        a = build_basis([1, 2, 3], 32)
        b = build_basis([3, 2, 1], 32)
        assert a.fingerprint != b.fingerprint

    def test_fingerprint_covers_dim(self):
        assert basis_fingerprint(32, (1, 2)) != basis_fingerprint(64, (1, 2))

    def test_gram_concentration(self):
        # unit-variance rows: normalized Gram diagonal near 1, off-diagonal small
        basis = build_basis(range(1, 129), 1024)
        g = basis.gram() / basis.dim
        diag = np.diag(g)
        assert np.all((diag >= 0.85) & (diag <= 1.15))
        off = g - np.diag(diag)
        assert np.max(np.abs(off)) <= 0.2

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            build_basis([1, 2, 1], 32)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            build_basis([], 32)

    def test_overcomplete_warns(self):
        with pytest.warns(UserWarning):
            build_basis(range(1, 10), 4)


class TestWeightVector:
    def test_rejects_unsorted_indices(self):
        with pytest.raises(ValueError):
            WeightVector(8, np.array([3, 1]), np.array([1.0, 2.0], np.float32))

    def test_rejects_duplicate_indices(self):
        with pytest.raises(ValueError):
            WeightVector(8, np.array([2, 2]), np.array([1.0, 2.0], np.float32))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            WeightVector(4, np.array([4]), np.array([1.0], np.float32))

    def test_dense_roundtrip(self):
        w = WeightVector(6, np.array([1, 4]), np.array([2.0, -3.0], np.float32))
        dense = w.dense()
        assert dense.tolist() == [0.0, 2.0, 0.0, 0.0, -3.0, 0.0]


class TestProjectExact:
    def test_recovers_single_member(self):
        basis = build_basis(range(1, 9), 256)
        w = project_exact(basis.vectors[3], basis)
        want = np.zeros(8)
        want[3] = 1.0
        assert np.max(np.abs(w.dense() - want)) <= 1e-6

    def test_recovers_combination(self):
        basis = build_basis(range(1, 9), 256)
        x = 2.0 * basis.vectors[0].astype(np.float64) + 3.0 * basis.vectors[1].astype(np.float64)
        w = project_exact(x.astype(np.float32), basis)
        want = np.zeros(8)
        want[0], want[1] = 2.0, 3.0
        assert np.max(np.abs(w.dense() - want)) <= 1e-5

    def test_residual_orthogonality(self):
        basis = build_basis(range(1, 17), 256)
        x = gaussian_stream(555, 256).astype(np.float64)
        w = project_exact(x, basis)
        resid = x - reconstruct(w, basis).astype(np.float64)
        xnorm = np.linalg.norm(x)
        for i in range(basis.n):
            vec = basis.vectors[i].astype(np.float64)
            bound = 1e-6 * xnorm * np.linalg.norm(vec)
            # reconstruct rounds through 32-bit; allow that quantization on top
            bound += np.abs(vec).sum() * 1e-6
            assert abs(float(resid @ vec)) <= bound

    def test_degenerate_basis_rejected(self):
        basis = build_basis([1, 2], 32)
        basis.vectors[1] = basis.vectors[0]
        if hasattr(basis, "_gram"):
            del basis._gram
        with pytest.raises(DegenerateBasisError):
            project_exact(gaussian_stream(9, 32), basis)

    def test_rejects_dim_mismatch(self):
        basis = build_basis([1, 2], 32)
        with pytest.raises(ValueError):
            project_exact(np.zeros(16), basis)


class TestProjectGd:
    def test_zero_rhs_gives_zero(self):
        basis = build_basis(range(1, 5), 64)
        w = project_gd(np.zeros(64, np.float32), basis)
        assert w.k == 4
        assert np.all(w.values == 0.0)

    def test_recovers_single_member(self):
        basis = build_basis(range(1, 5), 64)
        w = project_gd(basis.vectors[0], basis, GdConfig(tol=1e-6))
        want = np.zeros(4)
        want[0] = 1.0
        assert np.max(np.abs(w.dense() - want)) <= 1e-4

    def test_matches_oracle_default_tolerance(self):
        basis = build_basis(range(1, 65), 1024)
        x = gaussian_stream(777, 1024)
        w_gd = project_gd(x, basis).dense().astype(np.float64)
        w_ex = project_exact(x, basis).dense().astype(np.float64)
        rel = np.linalg.norm(w_gd - w_ex) / np.linalg.norm(w_ex)
        assert rel <= 1e-4

    def test_convergence_error_carries_iterate(self):
        basis = build_basis(range(1, 17), 256)
        x = gaussian_stream(42, 256)
        with pytest.raises(ConvergenceError) as err:
            project_gd(x, basis, GdConfig(tol=1e-14, max_iters=3))
        assert err.value.last_iterate.k == 16

    def test_deterministic(self):
        basis = build_basis(range(1, 17), 256)
        x = gaussian_stream(43, 256)
        a = project_gd(x, basis)
        b = project_gd(x, basis)
        assert a.values.tobytes() == b.values.tobytes()


class TestTruncateTopk:
    def test_k_equals_n_identity(self):
        w = weights_from_dense(np.array([0.5, -2.0, 1.0], np.float32))
        out = truncate_topk(w, 3)
        assert np.array_equal(out.indices, w.indices)
        assert np.array_equal(out.values, w.values)

    def test_magnitude_order(self):
        w = weights_from_dense(np.array([0.5, -2.0, 1.0], np.float32))
        out = truncate_topk(w, 2)
        assert out.indices.tolist() == [1, 2]

    def test_tie_keeps_lower_index(self):
        w = weights_from_dense(np.array([1.0, -1.0, 0.5], np.float32))
        out = truncate_topk(w, 1)
        assert out.indices.tolist() == [0]

    def test_rejects_bad_k(self):
        w = weights_from_dense(np.array([1.0, 2.0], np.float32))
        with pytest.raises(ValueError):
            truncate_topk(w, 0)
        with pytest.raises(ValueError):
            truncate_topk(w, 3)

    @given(st.integers(1, 16), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_truncation_never_beats_exact_solution(self, k, seed):
        # the untruncated exact solution is the least-squares optimum, so no
        # truncation of it can land closer, up to 32-bit reconstruct rounding
        basis = build_basis(range(1, 17), 64)
        x = gaussian_stream(seed, 64)
        w = project_exact(x, basis)
        full = reconstruct(w, basis).astype(np.float64)
        part = reconstruct(truncate_topk(w, k), basis).astype(np.float64)
        x64 = x.astype(np.float64)
        slack = 1e-5 * (1.0 + np.linalg.norm(x64))
        assert np.linalg.norm(x64 - part) + slack >= np.linalg.norm(x64 - full)


class TestReconstruct:
    def test_unit_weight_returns_basis_row(self):
        basis = build_basis(range(1, 5), 64)
        w = WeightVector(4, np.array([2]), np.array([1.0], np.float32))
        assert reconstruct(w, basis).tobytes() == basis.vectors[2].tobytes()

    def test_zero_weights(self):
        basis = build_basis(range(1, 5), 64)
        w = WeightVector(4, np.empty(0, np.int32), np.empty(0, np.float32))
        assert np.all(reconstruct(w, basis) == 0.0)

    def test_rejects_size_mismatch(self):
        basis = build_basis(range(1, 5), 64)
        w = WeightVector(5, np.array([0]), np.array([1.0], np.float32))
        with pytest.raises(ValueError):
            reconstruct(w, basis)

    def test_bitwise_stable_across_rebuilds(self):
        # the receiver holds a basis regenerated from seeds, never the same object
        for trial in range(10):
            seeds = [int(s) for s in gaussian_stream(trial, 6).view(np.uint32)[:6]]
            seeds = list(dict.fromkeys(abs(s) + 1 for s in seeds))
            a = build_basis(seeds, 128)
            b = build_basis(seeds, 128)
            x = gaussian_stream(trial + 100, 128)
            w = project_gd(x, a)
            assert reconstruct(w, a).tobytes() == reconstruct(w, b).tobytes()
