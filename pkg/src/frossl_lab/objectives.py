"""Self-supervised objectives expressed as invariance + variance terms.

Every multi-view objective consumes a :class:`ViewSet` and returns an
:class:`ObjectiveResult` whose ``total`` equals
``variance_part + gamma * invariance_part``. ``invariance_part`` is always
a non-negative distance that vanishes for identical views; the objective
specific weight lives in ``ObjectiveSpec.gamma``.

Registry names: ``frossl``, ``frossl-nolog``, ``vicreg``, ``barlow``,
``corinfomax``, ``ivne``, ``wmse``, ``mmcr``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from types import MappingProxyType
from typing import Callable, Mapping, Sequence

import numpy as np

from . import matrixlab as ml
from .errors import DegenerateInputError, DimensionError, ParameterError

KINDS = ("frossl", "frossl-nolog", "vicreg", "barlow", "corinfomax", "ivne", "wmse", "mmcr")

# eigenvalues below this fraction of the largest count as exact zeros
ENTROPY_REL_FLOOR = 1e-12

_DEFAULT_PARAMS = {
    "frossl": {"normalization": "two_view", "a2_sign": False},
    "frossl-nolog": {"normalization": "two_view", "a2_sign": False},
    "vicreg": {"eps": 1e-4, "var_weight": 25.0, "cov_weight": 1.0, "reduction": "sum"},
    "barlow": {"lambda_bt": 0.05},
    "corinfomax": {"eps": 1e-6},
    "ivne": {},
    "wmse": {"eps": 1e-6},
    "mmcr": {},
}

_DEFAULT_GAMMA = {
    "vicreg": 25.0,
    "barlow": 1.0,
    # CorInfoMax's invariance weight is its temperature alpha
    "corinfomax": 500.0,
    "ivne": 1.0,
    "wmse": 1.0,
    "mmcr": 0.0,
}

FROSSL_NORMALIZATIONS = ("two_view", "multi_view")


def default_gamma(kind: str, views: int) -> float:
    """Per-objective invariance weight; FroSSL uses 1.4 for 2 views, else 2.0."""
    if kind in ("frossl", "frossl-nolog"):
        return 1.4 if views == 2 else 2.0
    return _DEFAULT_GAMMA[kind]


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which objective to evaluate and with what weights.

    ``gamma=None`` resolves to :func:`default_gamma` at evaluation time.
    Unknown parameter names are rejected so typos in configs surface early.
    """

    kind: str
    gamma: float | None = None
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown objective {self.kind!r}; expected one of {KINDS}")
        if self.gamma is not None and not self.gamma >= 0:
            raise ParameterError(f"gamma must be >= 0, got {self.gamma}")
        defaults = _DEFAULT_PARAMS[self.kind]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ParameterError(f"{self.kind} does not accept parameters {sorted(unknown)}")
        merged = {**defaults, **self.params}
        if self.kind.startswith("frossl") and merged["normalization"] not in FROSSL_NORMALIZATIONS:
            raise ParameterError(f"unknown FroSSL normalization {merged['normalization']!r}")
        for key in ("eps",):
            if key in merged and not float(merged[key]) >= 0:
                raise ParameterError(f"{key} must be >= 0")
        if self.kind == "vicreg" and merged["reduction"] not in ("sum", "mean"):
            raise ParameterError("VICReg reduction must be 'sum' or 'mean'")
        if "lambda_bt" in merged and not float(merged["lambda_bt"]) >= 0:
            raise ParameterError("lambda_bt must be >= 0")
        object.__setattr__(self, "params", MappingProxyType(merged))

    def gamma_for(self, views: int) -> float:
        return default_gamma(self.kind, views) if self.gamma is None else float(self.gamma)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "gamma": self.gamma, "params": dict(self.params)}


@dataclass(frozen=True)
class ObjectiveResult:
    total: float
    invariance_part: float
    variance_part: float
    per_view_variance: np.ndarray
    gamma: float


class ViewSet:
    """V embedding batches of identical shape N x D, plus their mean."""

    def __init__(self, views: Sequence):
        mats = tuple(ml.as_matrix(v, name=f"view {i}") for i, v in enumerate(views))
        if len(mats) < 2:
            raise DimensionError(f"a ViewSet needs at least 2 views, got {len(mats)}")
        shape = mats[0].shape
        for i, m in enumerate(mats[1:], start=1):
            if m.shape != shape:
                raise DimensionError(f"view {i} has shape {m.shape}, expected {shape}")
        self.views = mats
        self.mean = np.mean(np.stack(mats), axis=0)

    @property
    def V(self) -> int:
        return len(self.views)

    @property
    def N(self) -> int:
        return self.views[0].shape[0]

    @property
    def D(self) -> int:
        return self.views[0].shape[1]

    def __len__(self):
        return len(self.views)

    def __iter__(self):
        return iter(self.views)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ViewSet":
        return ViewSet([fn(z) for z in self.views])


def _as_viewset(vs) -> ViewSet:
    return vs if isinstance(vs, ViewSet) else ViewSet(vs)


# -- invariance terms -------------------------------------------------------


def invariance_mse_pairwise(vs) -> float:
    """Sum over view pairs v<r of (1/N)||Z_v - Z_r||_F^2."""
    vs = _as_viewset(vs)
    total = 0.0
    for a, b in combinations(vs.views, 2):
        total += ml.frobenius_norm_sq(a - b) / vs.N
    return total


def invariance_mse_mean(vs) -> float:
    """V * sum_v (1/N)||Z_v - mean||_F^2; equal to the pairwise form, O(V)."""
    vs = _as_viewset(vs)
    s = sum(ml.frobenius_norm_sq(z - vs.mean) for z in vs.views)
    return vs.V * s / vs.N


def cosine_invariance(vs) -> float:
    """Sum over view pairs of the mean (1 - cosine) between aligned rows.

    Evaluated through the per-sample view mean of the row-normalized
    embeddings, so the cost is linear in V.
    """
    vs = _as_viewset(vs)
    units = [ml.normalize(z, "row_unit") for z in vs.views]
    s = np.sum(units, axis=0)
    V = vs.V
    # sum_{v<r} <u_v, u_r> = (||sum u||^2 - V) / 2 per sample
    pair_cos = (np.einsum("ij,ij->i", s, s) - V) / 2.0
    pairs = V * (V - 1) / 2.0
    return float(pairs - pair_cos.mean())


# -- single-view variance terms --------------------------------------------


def frossl_variance_term(Z, log: bool = True, side: str = "auto") -> float:
    """log ||ZᵀZ||_F^2.

    ``side="dim"`` forms ZᵀZ, ``"sample"`` forms ZZᵀ (same Frobenius norm);
    ``"auto"`` picks whichever is smaller.
    """
    Z = ml.as_matrix(Z)
    if ml.frobenius_norm(Z) == 0:
        raise DegenerateInputError("embedding matrix has collapsed to zero", axis="matrix")
    N, D = Z.shape
    if side == "auto":
        side = "dim" if D <= N else "sample"
    if side not in ("dim", "sample"):
        raise ParameterError(f"side must be 'auto', 'dim' or 'sample', got {side!r}")
    M = Z.T @ Z if side == "dim" else Z @ Z.T
    sq = ml.frobenius_norm_sq(M)
    return math.log(sq) if log else sq


def vicreg_variance_terms(Sigma, eps: float = 1e-4) -> tuple[float, float]:
    """Return (hinge, off_diagonal) for one view covariance."""
    Sigma = ml.as_matrix(Sigma)
    d = np.diag(Sigma)
    hinge = float(np.sum(np.maximum(0.0, 1.0 - np.sqrt(d + eps))))
    off = ml.frobenius_norm_sq(Sigma) - float(np.dot(d, d))
    return hinge, max(off, 0.0)


def corinfomax_variance(Sigma, eps: float = 1e-6) -> float:
    """-log det(Sigma + eps I); the constant trace part is dropped."""
    return -ml.logdet_psd(Sigma, eps)


def _entropy_eigs(lam: np.ndarray) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    top = lam.max() if lam.size else 0.0
    return np.where(lam > ENTROPY_REL_FLOOR * max(top, 0.0), lam, 0.0)


def neg_von_neumann(Sigma) -> float:
    """tr(Sigma ln Sigma) with 0 ln 0 := 0."""
    lam = _entropy_eigs(ml.sym_eigvals(Sigma))
    nz = lam[lam > 0]
    return float(np.sum(nz * np.log(nz)))


def von_neumann_entropy(Sigma) -> float:
    return -neg_von_neumann(Sigma)


def alpha_entropy(Sigma, alpha: float) -> float:
    """Matrix alpha-order entropy (1/(1-alpha)) log sum lambda_i^alpha.

    No unit-trace requirement. The alpha -> 1 limit is
    :func:`von_neumann_entropy`.
    """
    if not alpha > 0 or alpha == 1:
        raise ParameterError(f"alpha must be > 0 and != 1, got {alpha}")
    lam = _entropy_eigs(ml.sym_eigvals(Sigma))
    nz = lam[lam > 0]
    return float(math.log(np.sum(nz**alpha)) / (1.0 - alpha))


def collision_entropy(Sigma) -> float:
    """alpha = 2 entropy from matrix elements only: -log ||Sigma||_F^2."""
    return -math.log(ml.frobenius_norm_sq(Sigma))


def nc_criterion(Z) -> float:
    """||ZᵀZ - diag(ZᵀZ)||_F^2 (non-contrastive criterion)."""
    G = ml.as_matrix(Z).T @ ml.as_matrix(Z)
    d = np.diag(G)
    return max(ml.frobenius_norm_sq(G) - float(np.dot(d, d)), 0.0)


def c_criterion(Z) -> float:
    """||ZZᵀ - diag(ZZᵀ)||_F^2 (contrastive criterion)."""
    G = ml.gram(Z)
    d = np.diag(G)
    return max(ml.frobenius_norm_sq(G) - float(np.dot(d, d)), 0.0)


# -- normalizations used by the objectives ---------------------------------


def frossl_normalize(Z, variant: str = "two_view") -> np.ndarray:
    """two_view: center then scale to ||Z||_F = sqrt(D); multi_view: unit rows."""
    if variant == "two_view":
        return ml.normalize(ml.center_columns(Z), "frobenius_sqrtD")
    if variant == "multi_view":
        return ml.normalize(Z, "row_unit")
    raise ParameterError(f"unknown FroSSL normalization {variant!r}")


def _normalize_views(vs: ViewSet, fn) -> list[np.ndarray]:
    out = []
    for i, z in enumerate(vs.views):
        try:
            out.append(fn(z))
        except DegenerateInputError as exc:
            raise DegenerateInputError(f"view {i}: {exc}", axis="view", index=i) from exc
    return out


def _frossl_multi_variance(Zn: np.ndarray, log: bool, a2_sign: bool) -> float:
    N, D = Zn.shape
    C = Zn.T @ Zn if D <= N else Zn @ Zn.T
    C = ml.normalize(C, "trace_cov")
    sq = ml.frobenius_norm_sq(C)
    if not log:
        return sq
    # the alternative listing's sign: -2 log ||C||_F
    return -math.log(sq) if a2_sign else math.log(sq)


# -- full objectives --------------------------------------------------------


def _result(var_parts, inv, gamma) -> ObjectiveResult:
    per_view = np.asarray(var_parts, dtype=np.float64)
    var = float(per_view.sum())
    return ObjectiveResult(var + gamma * inv, float(inv), var, per_view, float(gamma))


def frossl_loss(vs, spec: ObjectiveSpec | None = None) -> ObjectiveResult:
    vs = _as_viewset(vs)
    spec = spec or ObjectiveSpec("frossl")
    if spec.kind not in ("frossl", "frossl-nolog"):
        raise ParameterError(f"frossl_loss cannot evaluate {spec.kind!r}")
    log = spec.kind == "frossl"
    variant = spec.params["normalization"]
    normed = _normalize_views(vs, lambda z: frossl_normalize(z, variant))
    if variant == "two_view":
        var = [frossl_variance_term(z, log=log) for z in normed]
    else:
        var = [_frossl_multi_variance(z, log, bool(spec.params["a2_sign"])) for z in normed]
    mean = np.mean(normed, axis=0)
    inv = sum(ml.frobenius_norm_sq(z - mean) for z in normed) / vs.N
    return _result(var, inv, spec.gamma_for(vs.V))


def vicreg_loss(vs, spec: ObjectiveSpec | None = None) -> ObjectiveResult:
    """Hinge on covariance diagonal + off-diagonal penalty + MSE invariance.

    ``reduction="sum"`` uses plain sums over dimensions; ``"mean"`` divides
    all three terms by D, the scaling under which the 25/25/1 weights were
    tuned.
    """
    vs = _as_viewset(vs)
    spec = spec or ObjectiveSpec("vicreg")
    p = spec.params
    scale = 1.0 / vs.D if p["reduction"] == "mean" else 1.0
    var = []
    for z in vs.views:
        hinge, off = vicreg_variance_terms(ml.covariance(ml.center_columns(z)), p["eps"])
        var.append(scale * (p["var_weight"] * hinge + p["cov_weight"] * off))
    return _result(var, scale * invariance_mse_mean(vs), spec.gamma_for(vs.V))


def standardize_columns(Z) -> np.ndarray:
    """Center, then divide each column by its population std."""
    return ml.normalize(ml.center_columns(Z), "dim_variance")


def cross_correlation(Z1, Z2) -> np.ndarray:
    a, b = standardize_columns(Z1), standardize_columns(Z2)
    return (a.T @ b) / a.shape[0]


def barlow_twins_terms(Z1, Z2) -> tuple[float, float]:
    """(on-diagonal sum (C_kk - 1)^2, off-diagonal sum C_kl^2)."""
    C = cross_correlation(Z1, Z2)
    d = np.diag(C)
    on = float(np.sum((d - 1.0) ** 2))
    off = max(ml.frobenius_norm_sq(C) - float(np.dot(d, d)), 0.0)
    return on, off


def barlow_twins_loss(Z1, Z2, lambda_bt: float = 0.05) -> float:
    on, off = barlow_twins_terms(Z1, Z2)
    return on + lambda_bt * off


def barlow_objective(vs, spec: ObjectiveSpec | None = None) -> ObjectiveResult:
    """Barlow Twins summed over every view pair (quadratic in V)."""
    vs = _as_viewset(vs)
    spec = spec or ObjectiveSpec("barlow")
    lam = spec.params["lambda_bt"]
    per_view = np.zeros(vs.V)
    inv = 0.0
    for (i, a), (j, b) in combinations(enumerate(vs.views), 2):
        on, off = barlow_twins_terms(a, b)
        inv += on
        per_view[i] += 0.5 * lam * off
        per_view[j] += 0.5 * lam * off
    return _result(per_view, inv, spec.gamma_for(vs.V))


def corinfomax_normalize(Z) -> np.ndarray:
    return ml.center_columns(ml.normalize(Z, "row_unit"))


def corinfomax_loss(vs, spec: ObjectiveSpec | None = None) -> ObjectiveResult:
    """-sum_v log det(Sigma_v + eps I) on unit-row, centered embeddings + gamma * MSE."""
    vs = _as_viewset(vs)
    spec = spec or ObjectiveSpec("corinfomax")
    eps = spec.params["eps"]
    normed = _normalize_views(vs, corinfomax_normalize)
    var = [corinfomax_variance(ml.covariance(z), eps) for z in normed]
    return _result(var, invariance_mse_mean(normed), spec.gamma_for(vs.V))


def ivne_covariance(Z) -> np.ndarray:
    """Second moment of unit-norm rows; its trace is exactly 1."""
    Zn = ml.normalize(Z, "row_unit")
    return (Zn.T @ Zn) / Zn.shape[0]


def ivne_loss(vs, spec: ObjectiveSpec | None = None) -> ObjectiveResult:
    """sum_v tr(Sigma_v ln Sigma_v) + gamma * cosine distance between views."""
    vs = _as_viewset(vs)
    spec = spec or ObjectiveSpec("ivne")
    normed = _normalize_views(vs, lambda z: ml.normalize(z, "row_unit"))
    var = [neg_von_neumann((z.T @ z) / vs.N) for z in normed]
    return _result(var, cosine_invariance(normed), spec.gamma_for(vs.V))


def wmse_loss(vs, spec: ObjectiveSpec | None = None) -> ObjectiveResult:
    """MSE invariance between ZCA-whitened views; variance part is 0."""
    vs = _as_viewset(vs)
    spec = spec or ObjectiveSpec("wmse")
    if vs.N <= vs.D:
        raise DimensionError(f"whitening needs N > D, got N={vs.N}, D={vs.D}")
    white = [ml.whiten(z, spec.params["eps"]) for z in vs.views]
    return _result(np.zeros(vs.V), invariance_mse_mean(white), spec.gamma_for(vs.V))


def mmcr_mean(vs) -> np.ndarray:
    vs = _as_viewset(vs)
    return np.mean([ml.normalize(z, "row_unit") for z in vs.views], axis=0)


def mmcr_loss(vs) -> float:
    """Negative nuclear norm of the mean of unit-row views."""
    return -ml.ky_fan_norm(mmcr_mean(vs), 1)


def mmcr_objective(vs, spec: ObjectiveSpec | None = None) -> ObjectiveResult:
    vs = _as_viewset(vs)
    spec = spec or ObjectiveSpec("mmcr")
    value = mmcr_loss(vs)
    return _result(np.full(vs.V, value / vs.V), 0.0, spec.gamma_for(vs.V))


REGISTRY: dict[str, Callable[..., ObjectiveResult]] = {
    "frossl": frossl_loss,
    "frossl-nolog": frossl_loss,
    "vicreg": vicreg_loss,
    "barlow": barlow_objective,
    "corinfomax": corinfomax_loss,
    "ivne": ivne_loss,
    "wmse": wmse_loss,
    "mmcr": mmcr_objective,
}


def get_objective(name: str) -> Callable[..., ObjectiveResult]:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ParameterError(f"unknown objective {name!r}; expected one of {KINDS}") from None


def evaluate(vs, spec: ObjectiveSpec) -> ObjectiveResult:
    return REGISTRY[spec.kind](_as_viewset(vs), spec)


def variance_term(kind: str, Z, spec: ObjectiveSpec | None = None) -> float:
    """Single-view variance term of ``kind`` evaluated on an already
    normalized embedding ``Z`` (no normalization applied here)."""
    spec = spec or ObjectiveSpec(kind)
    Z = ml.as_matrix(Z)
    N = Z.shape[0]
    if kind == "frossl":
        return frossl_variance_term(Z)
    if kind == "frossl-nolog":
        return frossl_variance_term(Z, log=False)
    if kind == "ivne":
        return neg_von_neumann((Z.T @ Z) / N)
    if kind == "corinfomax":
        return corinfomax_variance(ml.covariance(Z), spec.params["eps"])
    if kind == "vicreg":
        hinge, off = vicreg_variance_terms(ml.covariance(Z), spec.params["eps"])
        scale = 1.0 / Z.shape[1] if spec.params["reduction"] == "mean" else 1.0
        return scale * (spec.params["var_weight"] * hinge + spec.params["cov_weight"] * off)
    if kind == "mmcr":
        return -ml.ky_fan_norm(Z, 1)
    raise ParameterError(f"{kind!r} has no single-view variance term")
