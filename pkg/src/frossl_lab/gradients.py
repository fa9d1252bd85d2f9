"""Analytic gradients of every objective, plus a finite-difference checker.

Gradients are taken with respect to the raw per-view embeddings and include
every centering / normalization step the objective applies internally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import matrixlab as ml
from . import objectives as obj
from .objectives import ObjectiveSpec, ViewSet

FD_STEP = 1e-6
SMOOTH_TOL = 1e-5
KINKED_TOL = 1e-4
KINK_MARGIN = 1e-3
# kinds whose loss is only piecewise smooth
KINKED = ("vicreg", "mmcr")
SVD_ZERO = 1e-10


@dataclass
class GradResult:
    loss: float
    grads: list[np.ndarray]


# -- backward passes through the normalizations ----------------------------


def _center_back(dy):
    return dy - dy.mean(axis=0)


def _fro_sqrtD_back(x, dy):
    """x: input to frobenius_sqrtD (already centered)."""
    r = ml.frobenius_norm(x)
    s = np.sqrt(x.shape[1])
    return (s / r) * (dy - x * (np.vdot(x, dy) / (r * r)))


def _row_unit_back(x, dy):
    r = np.sqrt(np.einsum("ij,ij->i", x, x))[:, None]
    y = x / r
    return (dy - y * np.einsum("ij,ij->i", y, dy)[:, None]) / r


def _std_back(c, dy):
    """c: centered input to column standardization."""
    sigma = np.sqrt(np.mean(c * c, axis=0))
    y = c / sigma
    return (dy - y * np.mean(y * dy, axis=0)) / sigma


def _cov_back(Zc, G):
    """Gradient w.r.t. Zc of <G, ZcᵀZc/N> for symmetric G."""
    return (2.0 / Zc.shape[0]) * (Zc @ G)


def _sym(A):
    return 0.5 * (A + A.T)


def _loewner(lam, f, fprime, rel=1e-12):
    """First divided differences of a spectral function."""
    fl = f(lam)
    diff = lam[:, None] - lam[None, :]
    scale = max(np.max(np.abs(lam)), 1.0)
    close = np.abs(diff) <= rel * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        F = (fl[:, None] - fl[None, :]) / diff
    dp = fprime(lam)
    avg = 0.5 * (dp[:, None] + dp[None, :])
    return np.where(close, avg, F)


# -- per-objective gradients -----------------------------------------------


def _frossl_grad(vs: ViewSet, spec: ObjectiveSpec) -> GradResult:
    log = spec.kind == "frossl"
    variant = spec.params["normalization"]
    a2 = bool(spec.params["a2_sign"])
    gamma = spec.gamma_for(vs.V)
    N, D = vs.N, vs.D
    pre, normed = [], []
    for z in vs.views:
        if variant == "two_view":
            zc = ml.center_columns(z)
            pre.append(zc)
            normed.append(ml.normalize(zc, "frobenius_sqrtD"))
        else:
            pre.append(z)
            normed.append(ml.normalize(z, "row_unit"))
    mean = np.mean(normed, axis=0)
    loss = 0.0
    grads = []
    for z, x, zn in zip(vs.views, pre, normed):
        if D <= N:
            C = zn.T @ zn
            ZC = zn @ C
        else:
            C = zn @ zn.T
            ZC = C @ zn
        sq = ml.frobenius_norm_sq(C)
        if variant == "two_view":
            if log:
                loss += np.log(sq)
                g = 4.0 * ZC / sq
            else:
                loss += sq
                g = 4.0 * ZC
        else:
            t = float(np.trace(C))
            if log:
                val = np.log(sq) - 2.0 * np.log(t)
                g = 4.0 * ZC / sq - 4.0 * zn / t
                if a2:
                    val, g = -val, -g
            else:
                val = sq / t**2
                g = 4.0 * ZC / t**2 - 4.0 * sq * zn / t**3
            loss += val
        diff = zn - mean
        loss += gamma * ml.frobenius_norm_sq(diff) / N
        g = g + gamma * (2.0 / N) * diff
        if variant == "two_view":
            grads.append(_center_back(_fro_sqrtD_back(x, g)))
        else:
            grads.append(_row_unit_back(x, g))
    return GradResult(float(loss), grads)


def _mse_mean_grads(mats, weight):
    """Value and per-view gradients of weight * V * sum_v (1/N)||Z_v - mean||^2."""
    V = len(mats)
    N = mats[0].shape[0]
    mean = np.mean(mats, axis=0)
    diffs = [m - mean for m in mats]
    value = weight * V * sum(ml.frobenius_norm_sq(d) for d in diffs) / N
    return value, [weight * (2.0 * V / N) * d for d in diffs]


def _vicreg_grad(vs, spec):
    p = spec.params
    scale = 1.0 / vs.D if p["reduction"] == "mean" else 1.0
    eps, wv, nu = p["eps"], scale * p["var_weight"], scale * p["cov_weight"]
    loss, inv_grads = _mse_mean_grads(vs.views, scale * spec.gamma_for(vs.V))
    grads = []
    for z, gi in zip(vs.views, inv_grads):
        zc = ml.center_columns(z)
        S = ml.covariance(zc)
        d = np.diag(S)
        root = np.sqrt(d + eps)
        active = root < 1.0
        loss += wv * float(np.sum(np.where(active, 1.0 - root, 0.0)))
        off = S - np.diag(d)
        loss += nu * ml.frobenius_norm_sq(off)
        G = 2.0 * nu * off + np.diag(np.where(active, -wv / (2.0 * root), 0.0))
        grads.append(_center_back(_cov_back(zc, G)) + gi)
    return GradResult(float(loss), grads)


def _barlow_grad(vs, spec):
    lam = spec.params["lambda_bt"]
    gamma = spec.gamma_for(vs.V)
    N = vs.N
    cents = [ml.center_columns(z) for z in vs.views]
    stds = [ml.normalize(c, "dim_variance") for c in cents]
    dys = [np.zeros_like(z) for z in vs.views]
    loss = 0.0
    for i in range(vs.V):
        for j in range(i + 1, vs.V):
            C = stds[i].T @ stds[j] / N
            dC = np.diag(C)
            off = C - np.diag(dC)
            loss += gamma * float(np.sum((dC - 1.0) ** 2)) + lam * ml.frobenius_norm_sq(off)
            G = 2.0 * lam * off + np.diag(2.0 * gamma * (dC - 1.0))
            dys[i] += stds[j] @ G.T / N
            dys[j] += stds[i] @ G / N
    grads = [_center_back(_std_back(c, dy)) for c, dy in zip(cents, dys)]
    return GradResult(float(loss), grads)


def _corinfomax_grad(vs, spec):
    eps = spec.params["eps"]
    units = [ml.normalize(z, "row_unit") for z in vs.views]
    cents = [ml.center_columns(u) for u in units]
    loss, inv_grads = _mse_mean_grads(cents, spec.gamma_for(vs.V))
    grads = []
    for z, zc, gi in zip(vs.views, cents, inv_grads):
        S = ml.covariance(zc)
        loss += -ml.logdet_psd(S, eps)
        G = -ml.sym_apply(S, lambda l: 1.0 / (l + eps))
        dzc = _cov_back(zc, G) + gi
        grads.append(_row_unit_back(z, _center_back(dzc)))
    return GradResult(float(loss), grads)


def _ivne_grad(vs, spec):
    gamma = spec.gamma_for(vs.V)
    N, V = vs.N, vs.V
    units = [ml.normalize(z, "row_unit") for z in vs.views]
    s = np.sum(units, axis=0)
    pair_cos = (np.einsum("ij,ij->i", s, s) - V) / 2.0
    loss = gamma * float(V * (V - 1) / 2.0 - pair_cos.mean())
    grads = []
    for z, u in zip(vs.views, units):
        S = (u.T @ u) / N
        dec = ml.sym_eig(S)
        lam = dec.eigenvalues
        floor = obj.ENTROPY_REL_FLOOR * max(lam[0], 0.0)
        pos = lam > floor
        loss += float(np.sum(lam[pos] * np.log(lam[pos])))
        q = dec.eigenvectors
        G = (q * (np.log(np.maximum(lam, floor if floor > 0 else 1e-300)) + 1.0)) @ q.T
        du = (2.0 / N) * (u @ G) - gamma * s / N
        grads.append(_row_unit_back(z, du))
    return GradResult(float(loss), grads)


def _wmse_grad(vs, spec):
    eps = spec.params["eps"]
    f = lambda l: np.maximum(l, eps) ** -0.5
    fp = lambda l: np.where(l > eps, -0.5 * np.maximum(l, eps) ** -1.5, 0.0)
    cents, whites, parts = [], [], []
    for z in vs.views:
        zc = ml.center_columns(z)
        dec = ml.sym_eig(ml.covariance(zc))
        q, lam = dec.eigenvectors, dec.eigenvalues
        W = (q * f(lam)) @ q.T
        cents.append(zc)
        whites.append(zc @ W)
        parts.append((q, lam, W))
    loss, dys = _mse_mean_grads(whites, spec.gamma_for(vs.V))
    grads = []
    N = vs.N
    for zc, dy, (q, lam, W) in zip(cents, dys, parts):
        H = zc.T @ dy
        F = _loewner(lam, f, fp)
        K = q @ (F * (q.T @ H @ q)) @ q.T
        dzc = dy @ W + (zc @ (K + K.T)) / N
        grads.append(_center_back(dzc))
    return GradResult(float(loss), grads)


def _mmcr_grad(vs, spec):
    V = vs.V
    units = [ml.normalize(z, "row_unit") for z in vs.views]
    M = np.mean(units, axis=0)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    keep = s > SVD_ZERO
    dM = -(U[:, keep] @ Vt[keep])
    grads = [_row_unit_back(z, dM / V) for z in vs.views]
    return GradResult(-float(s.sum()), grads)


_GRADS = {
    "frossl": _frossl_grad,
    "frossl-nolog": _frossl_grad,
    "vicreg": _vicreg_grad,
    "barlow": _barlow_grad,
    "corinfomax": _corinfomax_grad,
    "ivne": _ivne_grad,
    "wmse": _wmse_grad,
    "mmcr": _mmcr_grad,
}


def analytic_grad(vs, spec: ObjectiveSpec) -> GradResult:
    """Loss and exact gradient with respect to every raw view."""
    vs = vs if isinstance(vs, ViewSet) else ViewSet(vs)
    return _GRADS[spec.kind](vs, spec)


def frossl_core_grad(Z) -> np.ndarray:
    """Gradient of log||ZᵀZ||_F^2 with no normalization: 4 Z(ZᵀZ)/||ZᵀZ||_F^2."""
    Z = ml.as_matrix(Z)
    C = Z.T @ Z
    return 4.0 * (Z @ C) / ml.frobenius_norm_sq(C)


def finite_difference_grad(loss_fn: Callable[[ViewSet], float], vs, h: float = FD_STEP) -> GradResult:
    """Central differences (L(Z + hE) - L(Z - hE)) / 2h, entry by entry."""
    if not h > 0:
        raise ValueError("step h must be positive")
    vs = vs if isinstance(vs, ViewSet) else ViewSet(vs)
    base = [z.copy() for z in vs.views]
    grads = []
    for v in range(len(base)):
        g = np.zeros_like(base[v])
        for idx in np.ndindex(*base[v].shape):
            orig = base[v][idx]
            base[v][idx] = orig + h
            fp = loss_fn(ViewSet(base))
            base[v][idx] = orig - h
            fm = loss_fn(ViewSet(base))
            base[v][idx] = orig
            g[idx] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return GradResult(float(loss_fn(vs)), grads)


def relative_error(ga: list[np.ndarray], gb: list[np.ndarray]) -> float:
    a = np.concatenate([g.ravel() for g in ga])
    b = np.concatenate([g.ravel() for g in gb])
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-12))


def _near_kink(vs: ViewSet, spec: ObjectiveSpec) -> bool:
    if spec.kind == "vicreg":
        eps = spec.params["eps"]
        for z in vs.views:
            d = np.diag(ml.covariance(ml.center_columns(z)))
            if np.any(np.abs(1.0 - np.sqrt(d + eps)) < KINK_MARGIN):
                return True
    if spec.kind == "mmcr":
        s = np.linalg.svd(obj.mmcr_mean(vs), compute_uv=False)
        if s.min() < KINK_MARGIN:
            return True
    return False


def _spectrum_matrices(vs: ViewSet, spec: ObjectiveSpec):
    if spec.kind == "ivne":
        return [obj.ivne_covariance(z) for z in vs.views]
    if spec.kind == "corinfomax":
        return [ml.covariance(obj.corinfomax_normalize(z)) for z in vs.views]
    if spec.kind == "wmse":
        return [ml.covariance(ml.center_columns(z)) for z in vs.views]
    return []


def _has_degenerate_spectrum(vs, spec) -> bool:
    for S in _spectrum_matrices(vs, spec):
        lam = np.linalg.eigvalsh(S)
        if np.min(np.diff(lam)) < 1e-10 * max(abs(lam[-1]), 1e-300):
            return True
    return False


def tolerance_for(kind: str) -> float:
    return KINKED_TOL if kind in KINKED else SMOOTH_TOL


def grad_check(
    spec: ObjectiveSpec,
    trials: int = 20,
    seed: int = 0,
    views: int = 2,
    N: int = 8,
    D: int = 5,
    scale: float = 1.0,
    h: float = FD_STEP,
    grad_fn: Callable[[ViewSet, ObjectiveSpec], GradResult] | None = None,
) -> dict:
    """Compare analytic and central-difference gradients on random inputs.

    Returns ``{"objective", "trials", "max_rel_err", "tolerance", "pass"}``.
    Inputs within 1e-3 of a hinge / nuclear-norm kink are re-drawn; inputs
    with (near-)repeated eigenvalues get a 1e-9 jitter.
    """
    rng = np.random.default_rng(seed)
    grad_fn = grad_fn or analytic_grad
    loss_fn = lambda v: obj.evaluate(v, spec).total
    worst = 0.0
    for _ in range(trials):
        for _attempt in range(1000):
            vs = ViewSet([scale * rng.standard_normal((N, D)) for _ in range(views)])
            if not _near_kink(vs, spec):
                break
        if _has_degenerate_spectrum(vs, spec):
            vs = ViewSet([z + 1e-9 * rng.standard_normal(z.shape) for z in vs.views])
        ga = grad_fn(vs, spec).grads
        gf = finite_difference_grad(loss_fn, vs, h).grads
        worst = max(worst, relative_error(ga, gf))
    tol = tolerance_for(spec.kind)
    return {
        "objective": spec.kind,
        "trials": trials,
        "max_rel_err": worst,
        "tolerance": tol,
        "pass": bool(worst <= tol),
    }


def report_json(report: dict) -> str:
    keys = ("objective", "trials", "max_rel_err", "pass")
    return json.dumps({k: report[k] for k in keys}, indent=2)
