"""Tests for the profile state and its recursive grow/prune/normalize updates."""

import json

import numpy as np
import pytest

from krlsdl.exceptions import (
    DegenerateAtomError,
    InvariantError,
    PruneRejectedError,
    SnapshotError,
    UpdateRejectedError,
    ValidationError,
)
from krlsdl.kernels import Kernel
from krlsdl.oracle import batch_wls, explicit_dictionary
from krlsdl.profile import Profile, guarded_inverse, relative_error


def assert_matches_batch(profile: Profile, tol: float = 1e-7) -> None:
    C, U, Psi = batch_wls(profile.W, profile.lam, profile.xi, profile.K, profile.reg_scale)
    assert relative_error(profile.C, C) <= tol
    assert relative_error(profile.U, U) <= tol
    assert relative_error(profile.Psi, Psi) <= tol


# ── Init ──────────────────────────────────────────────────────────────


class TestInit:
    def test_shapes_and_weights(self, poly_kernel, rng):
        p = Profile.init(rng.standard_normal((4, 3)), poly_kernel, 0.1)
        assert (p.n_features, p.size, p.n_atoms) == (4, 3, 3)
        np.testing.assert_array_equal(p.W, np.eye(3))
        np.testing.assert_array_equal(p.lam, np.ones(3))
        assert p.xi == 0.1

    def test_consistent_wls_solution(self, poly_kernel, rng):
        p = Profile.init(rng.standard_normal((4, 3)), poly_kernel, 0.25)
        np.testing.assert_allclose(p.C, np.eye(3) / 1.25)
        np.testing.assert_allclose(p.Psi, p.K / 1.25**2)
        assert_matches_batch(p, tol=1e-12)
        p.validate()

    def test_orthonormal_linear(self, linear_kernel):
        p = Profile.init(np.eye(3), linear_kernel, 0.1)
        np.testing.assert_allclose(p.K, np.eye(3))
        np.testing.assert_allclose(p.Psi, np.eye(3) / 1.1**2)

    def test_psi_is_explicit_gram(self, poly_kernel, rng):
        p = Profile.init(rng.standard_normal((3, 2)), poly_kernel, 0.1)
        D = explicit_dictionary(p).D
        np.testing.assert_allclose(p.Psi, D.T @ D, rtol=1e-10)

    def test_uses_first_q_columns(self, poly_kernel, rng):
        X0 = rng.standard_normal((4, 5))
        p = Profile.init(X0, poly_kernel, 0.1, q=3)
        np.testing.assert_array_equal(p.X, X0[:, :3])

    def test_too_few_samples(self, poly_kernel, rng):
        with pytest.raises(ValidationError, match="need 4 initial samples"):
            Profile.init(rng.standard_normal((4, 3)), poly_kernel, 0.1, q=4)

    def test_gamma_must_be_positive(self, poly_kernel, rng):
        with pytest.raises(ValidationError, match="gamma"):
            Profile.init(rng.standard_normal((4, 3)), poly_kernel, 0.0)


# ── Coding inputs ────────────────────────────────────────────────────


class TestCodeInputs:
    def test_h_matches_explicit_correlations(self, make_profile, poly_kernel, rng):
        p = make_profile(poly_kernel)
        x = rng.standard_normal(4)
        h, sigma2, kvec = p.code_inputs(x)
        D = explicit_dictionary(p).D
        phi = poly_kernel.explicit_map(x)
        np.testing.assert_allclose(h[:, 0], D.T @ phi, rtol=1e-9)
        assert sigma2[0, 0] == pytest.approx(phi @ phi)
        assert kvec.shape == (p.size, 1)

    def test_code_terms_diag(self, make_profile, poly_kernel, rng):
        p = make_profile(poly_kernel)
        x = rng.standard_normal((4, 3))
        h_full, sigma2_full, _ = p.code_inputs(x)
        h, sigma2 = p.code_terms(x)
        np.testing.assert_allclose(h, h_full)
        np.testing.assert_allclose(sigma2, np.diag(sigma2_full))

    def test_dimension_mismatch(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel)
        with pytest.raises(ValidationError, match="Dimension mismatch"):
            p.code_inputs(np.ones(5))

    def test_representation_error_matches_explicit(self, make_profile, poly_kernel, rng):
        p = make_profile(poly_kernel, q=4, steps=5)
        D = explicit_dictionary(p).D
        for _ in range(10):
            x = rng.standard_normal(4)
            w = p.sparse_code(x, 2)[0].dense(p.n_atoms)
            r = poly_kernel.explicit_map(x) - D @ w
            assert p.representation_error(x, 2) == pytest.approx(float(r @ r), rel=1e-9)

    def test_representation_errors_vectorized(self, make_profile, poly_kernel, rng):
        p = make_profile(poly_kernel)
        X = rng.standard_normal((4, 4))
        errs = p.representation_errors(X, 2)
        assert errs.shape == (4,)
        assert errs[1] == pytest.approx(p.representation_error(X[:, 1], 2))


# ── Grow ─────────────────────────────────────────────────────────────


class TestGrow:
    def test_single_grow_matches_batch(self, poly_kernel, rng):
        p = Profile.init(rng.standard_normal((4, 3)), poly_kernel, 0.1)
        x = rng.standard_normal(4)
        w = p.sparse_code(x, 2)[0].dense(3)
        p.grow(x, w, 1.0)
        assert p.size == 4
        assert_matches_batch(p, tol=1e-8)

    @pytest.mark.parametrize("m", [1, 2, 5])
    @pytest.mark.parametrize("lam", [1.0, 0.98])
    def test_many_grows_match_batch(self, make_profile, m, lam):
        for spec in ("poly:2:1", "linear", "rbf:0.5"):
            p = make_profile(Kernel.parse(spec), n=6, q=6, steps=12, m=m, lam=lam)
            assert p.size == 6 + 12 * m
            assert_matches_batch(p)
            p.validate()

    def test_forgetting_bookkeeping(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel, steps=10, lam=0.98)
        assert p.xi == pytest.approx(0.1 * 0.98**10)
        assert p.lam[0] == pytest.approx(0.98**10)
        assert p.lam[-1] == 1.0

    def test_psi_is_explicit_gram(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel, steps=6, m=2, lam=0.95)
        D = explicit_dictionary(p).D
        np.testing.assert_allclose(p.Psi, D.T @ D, rtol=1e-9, atol=1e-12)

    def test_code_shape_checked(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel)
        with pytest.raises(ValidationError, match="codes must have shape"):
            p.grow(np.ones((4, 1)), np.ones((2, 1)))

    def test_batch_larger_than_q(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel, q=3)
        with pytest.raises(ValidationError, match="only 3 atoms"):
            p.grow(np.ones((4, 4)), np.ones((3, 4)))

    @pytest.mark.parametrize("lam", [0.0, 1.5, -0.1])
    def test_lambda_range(self, make_profile, poly_kernel, lam):
        p = make_profile(poly_kernel)
        with pytest.raises(ValidationError, match="forgetting factor"):
            p.grow(np.ones(4), np.ones(3), lam)

    def test_singular_grow_rejected_and_state_kept(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel, q=3)
        before = p.copy()
        w = np.zeros((3, 2))
        w[0, 0] = 1e3
        with pytest.raises(UpdateRejectedError):
            p.grow(np.ones((4, 2)), w, 1e-9)
        np.testing.assert_array_equal(p.C, before.C)
        assert p.size == before.size

    def test_zero_code_leaves_dictionary(self, make_profile, poly_kernel, rng):
        p = make_profile(poly_kernel)
        D_before = explicit_dictionary(p).D
        p.grow(rng.standard_normal(4), np.zeros(3), 1.0)
        np.testing.assert_allclose(explicit_dictionary(p).D, D_before, atol=1e-12)


# ── Prune ────────────────────────────────────────────────────────────


class TestPrune:
    def test_round_trip_without_forgetting(self, make_profile, poly_kernel, rng):
        for _ in range(10):
            p = make_profile(poly_kernel, steps=3)
            before = p.copy()
            x = rng.standard_normal(4)
            p.grow(x, p.sparse_code(x, 2)[0].dense(3), 1.0)
            p.prune([p.size - 1])
            assert relative_error(p.U, before.U) <= 1e-8
            assert relative_error(p.Psi, before.Psi) <= 1e-8
            assert relative_error(p.C, before.C) <= 1e-8
            np.testing.assert_array_equal(p.X, before.X)

    def test_round_trip_with_forgetting(self, make_profile, poly_kernel, rng):
        p = make_profile(poly_kernel, steps=3)
        before = p.copy()
        x = rng.standard_normal(4)
        p.grow(x, rng.standard_normal(3), 0.9)
        p.prune([p.size - 1])
        assert relative_error(p.U, before.U) <= 1e-8
        assert relative_error(p.Psi, before.Psi) <= 1e-8
        assert relative_error(p.C, before.C / 0.9) <= 1e-8
        assert p.xi == pytest.approx(0.9 * before.xi)

    def test_prune_two_oldest_matches_batch(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel, q=4, steps=8, lam=0.98)
        xi = p.xi
        p.prune([0, 1])
        assert p.size == 4 + 8 - 2
        assert p.xi == xi
        assert_matches_batch(p)
        p.validate()

    def test_random_prunes_match_batch(self, make_profile, rng):
        kernel = Kernel.polynomial(2, 1.0)
        for _ in range(10):
            p = make_profile(kernel, n=5, q=4, steps=6, m=2, lam=0.98)
            m = sorted(rng.choice(p.size, size=3, replace=False).tolist())
            if p.prune_obstruction(m) is not None:
                continue
            p.prune(m)
            assert_matches_batch(p)

    def test_prune_unsorted_indices(self, make_profile, poly_kernel):
        a = make_profile(poly_kernel, steps=5)
        b = a.copy()
        a.prune([4, 1])
        b.prune([1, 4])
        np.testing.assert_allclose(a.C, b.C)
        np.testing.assert_allclose(a.U, b.U)

    def test_would_leave_fewer_than_q(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel, q=3, steps=1)
        with pytest.raises(PruneRejectedError, match="fewer than Q"):
            p.prune([0, 1])

    def test_zero_row_rejected(self, poly_kernel, rng):
        p = Profile.init(rng.standard_normal((4, 3)), poly_kernel, 0.1)
        w = np.array([0.0, 1.0, 1.0])
        p.grow(rng.standard_normal(4), w)
        message = p.prune_obstruction([0])
        assert message is not None and "row 0" in message
        with pytest.raises(PruneRejectedError, match="row 0"):
            p.prune([0])

    def test_obstruction_none_when_allowed(self, make_profile, poly_kernel):
        assert make_profile(poly_kernel, steps=4).prune_obstruction([0]) is None

    @pytest.mark.parametrize("m", [[], [0, 0], [-1], [99]])
    def test_bad_indices(self, make_profile, poly_kernel, m):
        p = make_profile(poly_kernel)
        with pytest.raises(ValidationError):
            p.prune(m)


# ── Randomized agreement with the direct solution ───────────────────


@pytest.mark.slow
class TestRandomEquivalence:
    KERNELS = ("poly:2:1", "linear", "rbf:0.5")

    def test_grows_match_batch(self, make_profile, rng):
        for trial in range(100):
            m = int(rng.choice([1, 2, 5]))
            lam = float(rng.choice([1.0, 0.98]))
            p = make_profile(
                Kernel.parse(self.KERNELS[trial % 3]),
                n=int(rng.integers(2, 11)),
                q=int(rng.integers(5, 9)),
                steps=int(rng.integers(1, 61)),
                m=m,
                lam=lam,
            )
            assert_matches_batch(p)

    def test_prunes_match_batch(self, make_profile, rng):
        done = 0
        for trial in range(100):
            p = make_profile(
                Kernel.parse(self.KERNELS[trial % 3]),
                n=int(rng.integers(2, 11)),
                q=int(rng.integers(3, 9)),
                steps=int(rng.integers(3, 15)),
                m=2,
                lam=0.98,
            )
            count = int(rng.integers(1, 4))
            idx = sorted(rng.choice(p.size, size=count, replace=False).tolist())
            if p.prune_obstruction(idx) is not None:
                continue
            xi = p.xi
            p.prune(idx)
            assert p.xi == xi
            assert_matches_batch(p)
            done += 1
        assert done >= 90


# ── Normalize and refresh ────────────────────────────────────────────


class TestNormalize:
    def test_unit_diagonal_and_b_invariance(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel, q=4, steps=6, lam=0.97)
        B = p.U.T @ p.W
        p.normalize()
        assert np.max(np.abs(np.diag(p.Psi) - 1.0)) <= 1e-10
        assert relative_error(p.U.T @ p.W, B) <= 1e-10
        p.validate()

    def test_matches_batch_with_reg_scale(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel, steps=4).normalize()
        assert not np.allclose(p.reg_scale, 1.0)
        assert_matches_batch(p)

    def test_updates_stay_exact_after_normalize(self, make_profile, poly_kernel, grow):
        p = make_profile(poly_kernel, q=4, steps=5).normalize()
        grow(p, 4, m=2, lam=0.98)
        p.prune([0, 2])
        assert_matches_batch(p)

    def test_representation_errors_unchanged(self, make_profile, poly_kernel, rng):
        p = make_profile(poly_kernel, q=4, steps=6)
        X = rng.standard_normal((4, 20))
        before = p.representation_errors(X, 2)
        after = p.normalize().representation_errors(X, 2)
        np.testing.assert_allclose(after, before, rtol=1e-8, atol=1e-10)

    def test_degenerate_atom(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel)
        p.Psi[1, 1] = 0.0
        with pytest.raises(DegenerateAtomError, match="atoms \\[1\\]"):
            p.normalize()

    def test_needs_normalization(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel, steps=4)
        tol = float(np.max(np.abs(np.diag(p.Psi) - 1.0)))
        assert p.needs_normalization(tol / 2)
        assert not p.normalize().needs_normalization(1e-8)

    def test_refresh_gram(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel)
        expected = p.Psi.copy()
        p.Psi = p.Psi * (1.0 + 1e-3)
        p.refresh_gram()
        np.testing.assert_allclose(p.Psi, expected, rtol=1e-10)


# ── Derived quantities and validation ────────────────────────────────


class TestDerived:
    def test_contribution_scores(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel, steps=5)
        scores = p.contribution_scores()
        assert scores.shape == (p.size,)
        np.testing.assert_allclose(scores[2], np.linalg.norm((p.U.T @ p.W)[2]))

    def test_weighted_gram_inverse(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel, lam=0.9)
        np.testing.assert_allclose(p.C @ p.weighted_gram_inverse(), np.eye(3), atol=1e-10)

    def test_psi_psd(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel, steps=8, m=2)
        assert np.linalg.eigvalsh(p.Psi).min() >= -1e-7 * np.trace(p.Psi)

    def test_invariant_errors_small(self, make_profile, poly_kernel):
        errors = make_profile(poly_kernel).invariant_errors()
        assert set(errors) == {
            "C symmetry", "Psi symmetry", "K symmetry",
            "C consistency", "U identity", "Psi identity",
        }
        assert max(errors.values()) < 1e-9

    def test_validate_catches_corruption(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel)
        p.C = p.C + 1e-3 * np.eye(3)
        with pytest.raises(InvariantError, match="C consistency"):
            p.validate()

    def test_validate_catches_shape(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel)
        p.lam = p.lam[:-1]
        with pytest.raises(InvariantError, match="lam has shape"):
            p.validate()

    def test_validate_catches_weight_range(self, make_profile, poly_kernel):
        p = make_profile(poly_kernel)
        p.lam[0] = 1.5
        with pytest.raises(InvariantError, match="weights"):
            p.validate()

    def test_repr(self, make_profile, poly_kernel):
        assert "L=7" in repr(make_profile(poly_kernel, q=3, steps=4))


class TestGuardedInverse:
    def test_scalar(self):
        np.testing.assert_allclose(
            guarded_inverse(np.array([[4.0]]), 1.0, UpdateRejectedError, "a"), [[0.25]]
        )

    def test_scalar_singular(self):
        with pytest.raises(UpdateRejectedError, match="numerically singular"):
            guarded_inverse(np.array([[1e-15]]), 1.0, UpdateRejectedError, "a")

    def test_ill_conditioned_matrix(self):
        with pytest.raises(PruneRejectedError, match="condition"):
            guarded_inverse(np.diag([1.0, 1e-14]), 1.0, PruneRejectedError, "a")

    def test_matrix(self):
        A = np.array([[2.0, 1.0], [1.0, 3.0]])
        np.testing.assert_allclose(
            guarded_inverse(A, 3.0, UpdateRejectedError, "a") @ A, np.eye(2), atol=1e-12
        )


# ── Persistence ──────────────────────────────────────────────────────


class TestSnapshot:
    def test_round_trip(self, make_profile, poly_kernel, tmp_path):
        p = make_profile(poly_kernel, lam=0.97).normalize()
        path = p.save(tmp_path / "profile.json")
        q = Profile.load(path)
        assert q.kernel == p.kernel
        assert q.xi == p.xi
        for name in ("X", "K", "W", "C", "U", "Psi", "lam", "reg_scale"):
            np.testing.assert_array_equal(getattr(q, name), getattr(p, name))

    def test_document_fields(self, make_profile, poly_kernel, tmp_path):
        path = make_profile(poly_kernel).save(tmp_path / "p.json")
        doc = json.loads(path.read_text())
        assert doc["format"] == "krlsdl-profile"
        assert doc["version"] == 1
        assert doc["dims"] == {"N": 4, "L": 7, "Q": 3}
        assert doc["kernel"] == "poly:2:1"

    def test_missing_file(self, tmp_path):
        with pytest.raises(SnapshotError, match="Cannot read"):
            Profile.load(tmp_path / "nope.json")

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(SnapshotError, match="Invalid profile snapshot"):
            Profile.load(path)

    def test_shape_mismatch(self, make_profile, poly_kernel, tmp_path):
        path = make_profile(poly_kernel).save(tmp_path / "p.json")
        doc = json.loads(path.read_text())
        doc["W"] = doc["W"][:-1]
        path.write_text(json.dumps(doc))
        with pytest.raises(SnapshotError, match="shape"):
            Profile.load(path)

    def test_tampered_values(self, make_profile, poly_kernel, tmp_path):
        path = make_profile(poly_kernel).save(tmp_path / "p.json")
        doc = json.loads(path.read_text())
        doc["C"][0][0] *= 2.0
        path.write_text(json.dumps(doc))
        with pytest.raises(SnapshotError, match="fails profile checks"):
            Profile.load(path)

    def test_unknown_field(self, make_profile, poly_kernel, tmp_path):
        path = make_profile(poly_kernel).save(tmp_path / "p.json")
        doc = json.loads(path.read_text())
        doc["extra"] = 1
        path.write_text(json.dumps(doc))
        with pytest.raises(SnapshotError):
            Profile.load(path)
