import json
import math

import numpy as np
import pytest

from frossl_lab import gradients as gr
from frossl_lab import matrixlab as ml
from frossl_lab import objectives as obj
from frossl_lab.errors import DegenerateInputError
from frossl_lab.objectives import ObjectiveSpec, ViewSet


def random_views(V=2, N=8, D=5, seed=0, scale=1.0):
    r = np.random.default_rng(seed)
    return ViewSet([scale * r.standard_normal((N, D)) for _ in range(V)])


def test_core_grad_at_identity():
    np.testing.assert_allclose(gr.frossl_core_grad(np.eye(2)), 2 * np.eye(2))


def test_core_grad_equivariant():
    r = np.random.default_rng(1)
    Z = r.standard_normal((9, 4))
    Q = ml.random_orthogonal(4, r)
    np.testing.assert_allclose(gr.frossl_core_grad(Z @ Q), gr.frossl_core_grad(Z) @ Q, atol=1e-7)


def test_identical_views_have_no_invariance_gradient():
    Z = np.random.default_rng(2).standard_normal((8, 5))
    vs = ViewSet([Z, Z.copy()])
    full = gr.analytic_grad(vs, ObjectiveSpec("frossl", gamma=1.0))
    novar = gr.analytic_grad(vs, ObjectiveSpec("frossl", gamma=5.0))
    for a, b in zip(full.grads, novar.grads):
        np.testing.assert_allclose(a, b, atol=1e-14)


def test_stationary_point():
    # centered, orthogonal columns of equal norm, identical views
    H = np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]], dtype=float)
    Z = np.vstack([H[:, 1:], -H[:, 1:]])  # 8 x 3, zero column means
    assert np.allclose(Z.mean(axis=0), 0)
    g = gr.analytic_grad(ViewSet([Z, Z.copy()]), ObjectiveSpec("frossl"))
    assert max(np.linalg.norm(x) for x in g.grads) <= 1e-8


def test_fd_quadratic_and_constant():
    vs = random_views(seed=3)
    quad = gr.finite_difference_grad(lambda v: sum(ml.frobenius_norm_sq(z) for z in v.views), vs)
    for g, z in zip(quad.grads, vs.views):
        np.testing.assert_allclose(g, 2 * z, atol=1e-8)
    const = gr.finite_difference_grad(lambda v: 3.0, vs)
    assert all(np.all(g == 0) for g in const.grads)


def test_fd_step_must_be_positive():
    with pytest.raises(ValueError):
        gr.finite_difference_grad(lambda v: 0.0, random_views(), 0.0)


def test_fd_h_refinement():
    # O(h^2) truncation: shrinking h from 1e-3 to 1e-4 cuts the error ~100x
    vs = random_views(seed=4)
    spec = ObjectiveSpec("frossl")
    exact = gr.analytic_grad(vs, spec).grads
    loss = lambda v: obj.evaluate(v, spec).total
    e1 = gr.relative_error(exact, gr.finite_difference_grad(loss, vs, 1e-3).grads)
    e2 = gr.relative_error(exact, gr.finite_difference_grad(loss, vs, 1e-4).grads)
    assert e2 < e1 / 30


@pytest.mark.parametrize("kind", obj.KINDS)
def test_loss_matches_evaluate(kind):
    vs = random_views(seed=5)
    spec = ObjectiveSpec(kind)
    assert gr.analytic_grad(vs, spec).loss == pytest.approx(obj.evaluate(vs, spec).total, rel=1e-12)


@pytest.mark.parametrize("kind", obj.KINDS)
def test_grad_check_each_kind(kind):
    rep = gr.grad_check(ObjectiveSpec(kind), trials=5, seed=11)
    assert rep["pass"], rep


@pytest.mark.parametrize("spec,views,N,D", [
    (ObjectiveSpec("frossl", params={"normalization": "multi_view"}), 4, 8, 5),
    (ObjectiveSpec("frossl", params={"normalization": "multi_view", "a2_sign": True}), 3, 8, 5),
    (ObjectiveSpec("frossl-nolog", params={"normalization": "multi_view"}), 2, 6, 9),
    (ObjectiveSpec("frossl"), 2, 4, 7),
    (ObjectiveSpec("vicreg", params={"reduction": "mean"}), 3, 8, 5),
    (ObjectiveSpec("barlow"), 3, 8, 5),
    (ObjectiveSpec("ivne"), 4, 8, 5),
])
def test_grad_check_variants(spec, views, N, D):
    rep = gr.grad_check(spec, trials=3, seed=12, views=views, N=N, D=D)
    assert rep["pass"], rep


def test_frossl_seed_7():
    assert gr.grad_check(ObjectiveSpec("frossl"), trials=20, seed=7)["pass"]


def test_vicreg_inactive_hinge_smooth_tolerance():
    # scale 3 puts every covariance diagonal near 9, well above the hinge
    rep = gr.grad_check(ObjectiveSpec("vicreg"), trials=5, seed=13, scale=3.0)
    assert rep["max_rel_err"] <= gr.SMOOTH_TOL


def test_negative_control():
    def corrupted(vs, spec):
        res = gr.analytic_grad(vs, spec)
        res.grads[0][0, 0] += 1e-3
        return res

    rep = gr.grad_check(ObjectiveSpec("frossl"), trials=3, seed=14, grad_fn=corrupted)
    assert not rep["pass"]


def test_collapse_propagates():
    Z = np.random.default_rng(15).standard_normal((6, 3))
    with pytest.raises(DegenerateInputError):
        gr.analytic_grad(ViewSet([Z, np.ones((6, 3))]), ObjectiveSpec("frossl"))


def test_grads_finite_and_shaped():
    vs = random_views(V=3, seed=16)
    for kind in obj.KINDS:
        g = gr.analytic_grad(vs, ObjectiveSpec(kind))
        assert len(g.grads) == 3
        for a, z in zip(g.grads, vs.views):
            assert a.shape == z.shape and np.all(np.isfinite(a))


def test_report_json():
    rep = gr.grad_check(ObjectiveSpec("wmse"), trials=2, seed=17)
    data = json.loads(gr.report_json(rep))
    assert set(data) == {"objective", "trials", "max_rel_err", "pass"}
    assert data["objective"] == "wmse" and data["trials"] == 2
    assert math.isfinite(data["max_rel_err"])
