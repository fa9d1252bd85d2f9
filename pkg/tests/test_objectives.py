import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frossl_lab import matrixlab as ml
from frossl_lab import objectives as obj
from frossl_lab.errors import DegenerateInputError, DimensionError, ParameterError
from frossl_lab.objectives import ObjectiveSpec, ViewSet


def views(V=2, N=12, D=5, seed=0, noise=0.3):
    r = np.random.default_rng(seed)
    base = r.standard_normal((N, D))
    return ViewSet([base + noise * r.standard_normal((N, D)) for _ in range(V)])


def orthonormal_columns(N, D, seed=0):
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((N, D)))
    return q


class TestViewSetAndSpec:
    def test_mean(self):
        vs = views(V=3)
        np.testing.assert_allclose(vs.mean, sum(vs.views) / 3, atol=1e-12)

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            ViewSet([np.ones((2, 2))])
        with pytest.raises(DimensionError):
            ViewSet([np.ones((2, 2)), np.ones((3, 2))])

    def test_spec_validation(self):
        with pytest.raises(ParameterError):
            ObjectiveSpec("simclr")
        with pytest.raises(ParameterError):
            ObjectiveSpec("frossl", params={"lambda_bt": 1.0})
        with pytest.raises(ParameterError):
            ObjectiveSpec("vicreg", gamma=-1.0)
        with pytest.raises(ParameterError):
            ObjectiveSpec("vicreg", params={"reduction": "max"})

    def test_defaults(self):
        assert ObjectiveSpec("frossl").gamma_for(2) == 1.4
        assert ObjectiveSpec("frossl").gamma_for(4) == 2.0
        assert ObjectiveSpec("frossl").gamma_for(8) == 2.0
        assert ObjectiveSpec("vicreg").gamma_for(2) == 25.0
        assert ObjectiveSpec("vicreg").params["var_weight"] == 25.0
        assert ObjectiveSpec("vicreg").params["cov_weight"] == 1.0
        assert ObjectiveSpec("vicreg").params["eps"] == 1e-4
        assert ObjectiveSpec("barlow").params["lambda_bt"] == 0.05
        assert ObjectiveSpec("corinfomax").params["eps"] == 1e-6

    def test_spec_is_immutable(self):
        spec = ObjectiveSpec("barlow")
        with pytest.raises(TypeError):
            spec.params["lambda_bt"] = 1.0


class TestInvariance:
    def test_identical_views(self):
        Z = np.random.default_rng(0).standard_normal((6, 3))
        vs = ViewSet([Z, Z.copy(), Z.copy()])
        assert obj.invariance_mse_pairwise(vs) == 0.0
        # the mean of three equal rows can differ from them in the last bit
        assert obj.invariance_mse_mean(vs) == pytest.approx(0.0, abs=1e-24)

    def test_small_example(self):
        vs = ViewSet([np.ones((2, 2)), np.zeros((2, 2))])
        assert obj.invariance_mse_pairwise(vs) == 2.0

    def test_pairwise_brute_force(self):
        vs = views(V=4, seed=1)
        oracle = 0.0
        for i, j in itertools.combinations(range(4), 2):
            for a in range(vs.N):
                for b in range(vs.D):
                    oracle += (vs.views[i][a, b] - vs.views[j][a, b]) ** 2
        assert obj.invariance_mse_pairwise(vs) == pytest.approx(oracle / vs.N, rel=1e-12)

    def test_two_views_equal(self):
        vs = views(V=2, seed=2)
        assert obj.invariance_mse_mean(vs) == pytest.approx(obj.invariance_mse_pairwise(vs), rel=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(V=st.sampled_from([3, 4, 8]), N=st.integers(1, 10), D=st.integers(1, 6),
           seed=st.integers(0, 10_000))
    def test_mean_form_identity(self, V, N, D, seed):
        r = np.random.default_rng(seed)
        vs = ViewSet([r.standard_normal((N, D)) for _ in range(V)])
        a, b = obj.invariance_mse_pairwise(vs), obj.invariance_mse_mean(vs)
        assert abs(a - b) <= 1e-9 * max(abs(a), 1.0)

    def test_cosine_invariance_against_pairs(self):
        vs = views(V=3, seed=3)
        units = [ml.normalize(z, "row_unit") for z in vs.views]
        oracle = sum(np.mean(1 - np.sum(a * b, axis=1)) for a, b in itertools.combinations(units, 2))
        assert obj.cosine_invariance(vs) == pytest.approx(oracle, rel=1e-12)


class TestFroSSL:
    def test_identity_gram(self):
        Z = orthonormal_columns(10, 4)
        assert obj.frossl_variance_term(Z) == pytest.approx(math.log(4), abs=1e-12)

    def test_scaling(self):
        Z = np.random.default_rng(4).standard_normal((7, 3))
        c = 3.7
        assert obj.frossl_variance_term(c * Z) == pytest.approx(
            obj.frossl_variance_term(Z) + 4 * math.log(c), abs=1e-12)

    def test_branches_agree(self):
        r = np.random.default_rng(5)
        for Z in (r.standard_normal((8, 32)), r.standard_normal((32, 8))):
            a = obj.frossl_variance_term(Z, side="dim")
            b = obj.frossl_variance_term(Z, side="sample")
            assert abs(a - b) <= 1e-9 * abs(a)

    def test_collapse(self):
        with pytest.raises(DegenerateInputError):
            obj.frossl_variance_term(np.zeros((3, 2)))

    def test_collapsed_view_is_named(self):
        Z = np.random.default_rng(6).standard_normal((5, 3))
        with pytest.raises(DegenerateInputError) as exc:
            obj.frossl_loss(ViewSet([Z, np.ones((5, 3))]))
        assert exc.value.index == 1

    def test_identical_views_only_variance(self):
        Z = np.random.default_rng(7).standard_normal((10, 4))
        vs = ViewSet([Z, Z.copy()])
        res = obj.frossl_loss(vs, ObjectiveSpec("frossl", gamma=1.0))
        assert res.invariance_part == 0.0
        Zn = obj.frossl_normalize(Z)
        assert res.total == pytest.approx(2 * obj.frossl_variance_term(Zn), abs=1e-12)

    def test_identity_covariance_totals(self):
        # centered Z with ZᵀZ = I_4 and ||Z||_F = 2 = sqrt(D): normalization is a no-op
        q = orthonormal_columns(12, 5, 8)
        ones = np.ones((12, 1)) / math.sqrt(12)
        q = q - ones @ (ones.T @ q)
        Z, _ = np.linalg.qr(q)
        Z = Z[:, :4]
        assert np.allclose(Z.mean(axis=0), 0, atol=1e-12)
        vs = ViewSet([Z, Z.copy()])
        res = obj.frossl_loss(vs, ObjectiveSpec("frossl", gamma=1.0))
        assert res.invariance_part == 0.0
        assert res.total == pytest.approx(2 * math.log(4), abs=1e-12)
        res = obj.frossl_loss(vs, ObjectiveSpec("frossl-nolog", gamma=1.0))
        assert res.total == pytest.approx(8.0, abs=1e-12)

    def test_two_view_pseudocode_oracle(self):
        # transcription of the two-view training listing in numpy
        vs = views(V=2, N=16, D=6, seed=9)
        gamma = 1.4
        Za, Zb = vs.views
        N, D = Za.shape
        Za = Za - Za.mean(0)
        Zb = Zb - Zb.mean(0)
        Za = (D**0.5) * (Za / np.linalg.norm(Za))
        Zb = (D**0.5) * (Zb / np.linalg.norm(Zb))
        invariance_loss = np.mean((Za - Zb) ** 2)
        frobenius_a = np.log(np.linalg.norm(Za.T @ Za, ord="fro"))
        frobenius_b = np.log(np.linalg.norm(Zb.T @ Zb, ord="fro"))
        pseudo = gamma * invariance_loss + frobenius_a + frobenius_b
        res = obj.frossl_loss(vs, ObjectiveSpec("frossl", gamma=gamma))
        # listing takes log of the norm (not squared) and MSE averaged over N*D
        mapped = 0.5 * res.variance_part + gamma * (2.0 / D) * res.invariance_part
        assert abs(mapped - pseudo) <= 1e-10

    def test_multi_view_listing_sign(self):
        vs = views(V=4, N=10, D=6, seed=10)
        plus = obj.frossl_loss(vs, ObjectiveSpec("frossl", params={"normalization": "multi_view"}))
        minus = obj.frossl_loss(vs, ObjectiveSpec(
            "frossl", params={"normalization": "multi_view", "a2_sign": True}))
        np.testing.assert_allclose(plus.per_view_variance, -minus.per_view_variance, atol=1e-14)
        # listing oracle: -2 log ||cov / tr(cov)||_F on unit rows
        Zn = ml.normalize(vs.views[0], "row_unit")
        cov = Zn.T @ Zn
        cov = cov / np.trace(cov)
        assert minus.per_view_variance[0] == pytest.approx(-2 * np.log(np.linalg.norm(cov)), abs=1e-12)

    def test_gamma_monotone(self):
        vs = views(seed=11)
        lo = obj.frossl_loss(vs, ObjectiveSpec("frossl", gamma=1.0)).total
        hi = obj.frossl_loss(vs, ObjectiveSpec("frossl", gamma=2.0)).total
        assert hi > lo


class TestVICReg:
    def test_identity_covariance_zero(self):
        assert obj.vicreg_variance_terms(np.eye(3), eps=0.0) == (0.0, 0.0)

    def test_hinge(self):
        hinge, _ = obj.vicreg_variance_terms(np.diag([0.0, 1.0]), eps=1e-4)
        assert hinge == pytest.approx(0.99, abs=1e-12)

    def test_off_diagonal(self):
        _, off = obj.vicreg_variance_terms(np.array([[1.0, 0.5], [0.5, 1.0]]))
        assert off == pytest.approx(0.5, abs=1e-15)

    def test_mean_reduction_divides_by_D(self):
        vs = views(seed=12)
        s = obj.vicreg_loss(vs)
        m = obj.vicreg_loss(vs, ObjectiveSpec("vicreg", params={"reduction": "mean"}))
        assert m.total == pytest.approx(s.total / vs.D, rel=1e-12)


class TestBarlow:
    def test_self_correlation(self):
        Z = np.random.default_rng(13).standard_normal((20, 4))
        on, off = obj.barlow_twins_terms(Z, Z)
        C = obj.cross_correlation(Z, Z)
        assert on == pytest.approx(0.0, abs=1e-24)
        assert obj.barlow_twins_loss(Z, Z, 0.05) == pytest.approx(
            0.05 * ml.frobenius_norm_sq(C - np.diag(np.diag(C))), rel=1e-12)

    def test_identity_correlation(self):
        # columns of a centered orthogonal design are uncorrelated
        Z = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
        assert obj.barlow_twins_loss(Z, Z, 0.05) == pytest.approx(0.0, abs=1e-15)

    def test_element_loop(self):
        r = np.random.default_rng(14)
        Z1, Z2 = r.standard_normal((15, 4)), r.standard_normal((15, 4))
        a = (Z1 - Z1.mean(0)) / Z1.std(0)
        b = (Z2 - Z2.mean(0)) / Z2.std(0)
        total = 0.0
        for k in range(4):
            for l in range(4):
                c = sum(a[n, k] * b[n, l] for n in range(15)) / 15
                total += (c - 1) ** 2 if k == l else 0.05 * c * c
        assert obj.barlow_twins_loss(Z1, Z2, 0.05) == pytest.approx(total, abs=1e-10)

    def test_zero_variance_column(self):
        Z = np.ones((5, 2))
        with pytest.raises(DegenerateInputError):
            obj.barlow_twins_loss(Z, Z)


class TestCorInfoMaxIVNE:
    def test_logdet_examples(self):
        assert obj.corinfomax_variance(np.eye(3), eps=0.0) == 0.0
        assert obj.corinfomax_variance(np.diag([2.0, 3.0]), eps=0.0) == pytest.approx(-math.log(6))

    def test_logdet_eigen_oracle(self):
        A = np.random.default_rng(15).standard_normal((6, 9))
        S = A @ A.T / 9
        assert obj.corinfomax_variance(S, 1e-6) == pytest.approx(
            -np.sum(np.log(np.linalg.eigvalsh(S) + 1e-6)), abs=1e-8)

    def test_corinfomax_default_temperature(self):
        assert ObjectiveSpec("corinfomax").gamma_for(2) == 500.0

    def test_von_neumann_examples(self):
        assert obj.neg_von_neumann(np.diag([0.5, 0.5])) == pytest.approx(-math.log(2))
        assert obj.neg_von_neumann(np.diag([1.0, 0.0])) == 0.0

    def test_von_neumann_oracle(self):
        A = np.random.default_rng(16).standard_normal((5, 8))
        S = A @ A.T
        S /= np.trace(S)
        lam = np.linalg.eigvalsh(S)
        assert obj.neg_von_neumann(S) == pytest.approx(float(np.sum(lam * np.log(lam))), abs=1e-8)

    def test_ivne_covariance_trace_one(self):
        S = obj.ivne_covariance(np.random.default_rng(17).standard_normal((9, 4)))
        assert np.trace(S) == pytest.approx(1.0, abs=1e-14)

    def test_ivne_identical_views(self):
        Z = np.random.default_rng(18).standard_normal((9, 4))
        res = obj.ivne_loss(ViewSet([Z, 2 * Z]))
        assert res.invariance_part == pytest.approx(0.0, abs=1e-14)


class TestEntropies:
    def test_alpha_2_examples(self):
        assert obj.alpha_entropy(np.diag([0.5, 0.5]), 2) == pytest.approx(math.log(2))
        assert obj.alpha_entropy(np.eye(7), 2) == pytest.approx(-math.log(7))

    def test_alpha_errors(self):
        for a in (0.0, -1.0, 1.0):
            with pytest.raises(ParameterError):
                obj.alpha_entropy(np.eye(2), a)

    def test_alpha_to_one_limit(self):
        A = np.random.default_rng(19).standard_normal((6, 10))
        S = A @ A.T
        S /= np.trace(S)
        assert abs(obj.alpha_entropy(S, 1.0001) - obj.von_neumann_entropy(S)) <= 1e-3

    @settings(max_examples=30, deadline=None)
    @given(d=st.integers(1, 12), seed=st.integers(0, 10_000))
    def test_collision_equals_alpha_2(self, d, seed):
        A = np.random.default_rng(seed).standard_normal((d, d + 2))
        S = A @ A.T
        assert abs(obj.alpha_entropy(S, 2) - obj.collision_entropy(S)) <= 1e-9 * max(
            1.0, abs(obj.collision_entropy(S)))


class TestWMSEAndMMCR:
    def test_wmse_identical_views(self):
        Z = np.random.default_rng(20).standard_normal((20, 3))
        assert obj.wmse_loss(ViewSet([Z, Z.copy()])).total == pytest.approx(0.0, abs=1e-20)

    def test_wmse_composition(self):
        vs = views(N=30, D=4, seed=21)
        white = [ml.whiten(z, 1e-6) for z in vs.views]
        oracle = obj.invariance_mse_pairwise(ViewSet(white))
        assert obj.wmse_loss(vs).total == pytest.approx(oracle, abs=1e-10)

    def test_wmse_ill_posed(self):
        with pytest.raises(DimensionError):
            obj.wmse_loss(views(N=4, D=4))

    def test_mmcr_nuclear(self):
        # unit rows, so the view mean is I_2 with nuclear norm 2
        Z = np.array([[1.0, 0.0], [0.0, 1.0]])
        vs = ViewSet([Z, Z.copy()])
        assert obj.mmcr_loss(vs) == pytest.approx(-2.0)

    def test_mmcr_zero_mean(self):
        Z = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert obj.mmcr_loss(ViewSet([Z, -Z])) == pytest.approx(0.0, abs=1e-15)

    def test_mmcr_svd_oracle(self):
        vs = views(seed=22)
        s = np.linalg.svd(obj.mmcr_mean(vs), compute_uv=False)
        assert obj.mmcr_loss(vs) == pytest.approx(-s.sum(), abs=1e-9)


class TestCriteria:
    def test_orthogonal_columns_nc_zero(self):
        assert obj.nc_criterion(np.diag([1.0, 2.0, 3.0])) == 0.0

    def test_orthogonal_rows_c_zero(self):
        assert obj.c_criterion(np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])) == 0.0

    def test_unit_column_identity(self):
        Z = np.random.default_rng(23).standard_normal((11, 5))
        Zc = ml.center_columns(Z)
        U = ml.normalize(Zc, "dim_variance") / math.sqrt(11)
        assert abs(ml.frobenius_norm_sq(U.T @ U) - (obj.nc_criterion(U) + 5)) <= 1e-9


@pytest.mark.parametrize("kind", obj.KINDS)
def test_result_self_consistent(kind):
    res = obj.evaluate(views(N=14, D=4, seed=24), ObjectiveSpec(kind))
    assert res.total == pytest.approx(res.variance_part + res.gamma * res.invariance_part, abs=1e-12)
    assert res.invariance_part >= 0
    assert res.per_view_variance.sum() == pytest.approx(res.variance_part, abs=1e-12)


@pytest.mark.parametrize("kind", obj.KINDS)
def test_identical_views_zero_invariance(kind):
    Z = np.random.default_rng(25).standard_normal((14, 4))
    res = obj.evaluate(ViewSet([Z, Z.copy()]), ObjectiveSpec(kind))
    assert res.invariance_part == pytest.approx(0.0, abs=1e-12)


def test_registry_lookup():
    assert obj.get_objective("frossl") is obj.frossl_loss
    with pytest.raises(ParameterError):
        obj.get_objective("nope")
