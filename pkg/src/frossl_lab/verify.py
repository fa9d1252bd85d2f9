"""Seeded numerical checks of the algebraic identities behind the objectives.

Each suite returns a list of :class:`Check` rows; :func:`format_table`
renders them as the PASS/FAIL table printed by ``frossl-lab verify``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import matrixlab as ml
from . import objectives as obj
from .objectives import ObjectiveSpec, ViewSet

IDENTITY_TOL = 1e-9
ROTATION_TOL = 1e-8
NONINVARIANT_MIN = 1e-3
SUITES = ("identities", "rotations", "propositions", "all")


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    error: float
    tolerance: float
    # "le": pass when error <= tolerance; "gt": pass when error > tolerance
    mode: str = "le"

    @property
    def passed(self) -> bool:
        if self.mode == "gt":
            return bool(self.error > self.tolerance)
        return bool(self.error <= self.tolerance)


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1.0)


def _random_psd(rng, d):
    A = rng.standard_normal((d, rng.integers(1, 2 * d)))
    return A @ A.T / A.shape[1]


# -- identities ----------------------------------------------------------------


def check_frobenius_duality(trials: int = 100, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n, d = rng.integers(1, 40, size=2)
        Z = rng.standard_normal((n, d)) * rng.uniform(0.1, 10.0)
        a = ml.frobenius_norm(Z.T @ Z)
        b = ml.frobenius_norm(Z @ Z.T)
        worst = max(worst, abs(a - b) / a)
    return Check("identities", "frobenius duality ||ZᵀZ|| = ||ZZᵀ||", worst, IDENTITY_TOL)


def check_invariance_identity(views=(2, 3, 4, 8), trials: int = 10, seed: int = 1) -> list[Check]:
    rng = np.random.default_rng(seed)
    rows = []
    for V in views:
        worst = 0.0
        for _ in range(trials):
            n, d = rng.integers(2, 30, size=2)
            vs = ViewSet([rng.standard_normal((n, d)) for _ in range(V)])
            worst = max(worst, _rel(obj.invariance_mse_pairwise(vs), obj.invariance_mse_mean(vs)))
        rows.append(Check("identities", f"pairwise MSE = V * MSE to mean (V={V})", worst, IDENTITY_TOL))
    return rows


def check_collision_entropy(trials: int = 100, seed: int = 2) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        S = _random_psd(rng, int(rng.integers(2, 30)))
        worst = max(worst, _rel(obj.alpha_entropy(S, 2.0), obj.collision_entropy(S)))
    return Check("identities", "alpha=2 entropy = -log ||Σ||_F^2", worst, IDENTITY_TOL)


def identities() -> list[Check]:
    return [check_frobenius_duality(), *check_invariance_identity(), check_collision_entropy()]


# -- propositions ----------------------------------------------------------------


def _unit_columns(Z):
    # dim_variance then 1/sqrt(N): every column of the centered matrix has unit norm
    Zc = ml.center_columns(Z)
    return ml.normalize(Zc, "dim_variance") / np.sqrt(Z.shape[0])


def propositions(trials: int = 50, seed: int = 3) -> list[Check]:
    rng = np.random.default_rng(seed)
    e1 = e2 = e3 = 0.0
    for _ in range(trials):
        n, d = rng.integers(3, 40, size=2)
        Z = rng.standard_normal((n, d)) @ rng.standard_normal((d, d))
        U = _unit_columns(Z)
        e1 = max(e1, _rel(ml.frobenius_norm_sq(U.T @ U), obj.nc_criterion(U) + d))
        R = ml.normalize(Z, "row_unit")
        e2 = max(e2, _rel(ml.frobenius_norm_sq(R @ R.T), obj.c_criterion(R) + n))
        e3 = max(e3, _rel(obj.frossl_variance_term(R, side="dim"),
                          obj.frossl_variance_term(R, side="sample")))
    return [
        Check("propositions", "unit columns, ||ZᵀZ||^2 = nc + D", e1, IDENTITY_TOL),
        Check("propositions", "unit rows, ||ZZᵀ||^2 = c + N", e2, IDENTITY_TOL),
        Check("propositions", "row-unit FroSSL term via ZᵀZ = via ZZᵀ", e3, IDENTITY_TOL),
    ]


# -- rotations -------------------------------------------------------------------


def _views(rng, V=2, n=24, d=6):
    base = rng.standard_normal((n, d)) * np.linspace(0.5, 3.0, d)
    return ViewSet([base + 0.3 * rng.standard_normal((n, d)) for _ in range(V)])


_INVARIANT: dict[str, Callable[[ViewSet], float]] = {
    "frossl": lambda vs: obj.evaluate(vs, ObjectiveSpec("frossl")).variance_part,
    "corinfomax": lambda vs: obj.evaluate(vs, ObjectiveSpec("corinfomax")).variance_part,
    "ivne": lambda vs: obj.evaluate(vs, ObjectiveSpec("ivne")).variance_part,
    "mmcr": obj.mmcr_loss,
    "wmse": lambda vs: obj.evaluate(vs, ObjectiveSpec("wmse")).total,
}

_NONINVARIANT: dict[str, Callable[[ViewSet], float]] = {
    "vicreg": lambda vs: obj.evaluate(vs, ObjectiveSpec("vicreg")).total,
    "barlow": lambda vs: obj.barlow_twins_loss(vs.views[0], vs.views[1], 0.05),
}


def counterexample() -> tuple[ViewSet, np.ndarray]:
    """Two anisotropic views and a fixed 45-degree rotation mixing the
    widest and narrowest dimensions."""
    vs = _views(np.random.default_rng(1234))
    d = vs.D
    Q = np.eye(d)
    c = s = np.sqrt(0.5)
    Q[0, 0], Q[0, d - 1], Q[d - 1, 0], Q[d - 1, d - 1] = c, -s, s, c
    return vs, Q


def rotations(trials: int = 10, seed: int = 4) -> list[Check]:
    rng = np.random.default_rng(seed)
    rows = []
    worst = {k: 0.0 for k in _INVARIANT}
    for _ in range(trials):
        vs = _views(rng)
        Q = ml.random_orthogonal(vs.D, rng)
        rotated = vs.map(lambda z: z @ Q)
        for k, fn in _INVARIANT.items():
            worst[k] = max(worst[k], _rel(fn(vs), fn(rotated)))
    for k, err in worst.items():
        rows.append(Check("rotations", f"{k} variance term unchanged by Z -> ZQ", err, ROTATION_TOL))
    vs, Q = counterexample()
    rotated = vs.map(lambda z: z @ Q)
    for k, fn in _NONINVARIANT.items():
        rows.append(Check("rotations", f"{k} changes under the fixed rotation",
                          abs(fn(vs) - fn(rotated)), NONINVARIANT_MIN, "gt"))
    return rows


def run_suite(name: str) -> list[Check]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
    if name == "all":
        return identities() + propositions() + rotations()
    return {"identities": identities, "propositions": propositions, "rotations": rotations}[name]()


def format_table(checks: list[Check]) -> str:
    width = max(len(c.name) for c in checks)
    lines = [f"{'suite':<13} {'check':<{width}} {'error':>10} {'tol':>8}  result"]
    for c in checks:
        op = ">" if c.mode == "gt" else "<="
        lines.append(f"{c.suite:<13} {c.name:<{width}} {c.error:>10.3e} {op}{c.tolerance:<7.0e}  "
                     f"{'PASS' if c.passed else 'FAIL'}")
    return "\n".join(lines)
