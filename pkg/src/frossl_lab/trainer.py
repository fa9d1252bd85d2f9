"""Desk-scale SSL training: encoders, manual backprop, SGD and trajectories.

The encoder stands in for the backbone + projector pair. Training is
single-threaded and fully determined by ``TrainConfig.seed``.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import matrixlab as ml
from .datasets import DatasetHandle, batch_iter
from .errors import (
    DegenerateInputError,
    FormatError,
    NumericalAbort,
    ParameterError,
    ShapeError,
    TruncatedFileError,
)
from .gradients import analytic_grad
from .objectives import ObjectiveSpec, ViewSet, evaluate

ACTIVATIONS = ("identity", "relu")
CHECKPOINT_MAGIC = b"FROS"
CHECKPOINT_VERSION = 1


# -- augmentation ------------------------------------------------------------


@dataclass(frozen=True)
class AugSpec:
    """Image-free augmentations applied independently to every view.

    ``shift_max`` rolls each row cyclically by an offset drawn from
    ``[-shift_max, shift_max]``; ``dropout_prob`` zeroes features;
    ``noise_std`` adds Gaussian noise. Applied in that order.
    """

    noise_std: float = 0.1
    dropout_prob: float = 0.0
    shift_max: int = 0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ParameterError("noise_std must be >= 0")
        if not 0 <= self.dropout_prob < 1:
            raise ParameterError("dropout_prob must lie in [0, 1)")
        if self.shift_max < 0:
            raise ParameterError("shift_max must be >= 0")

    @property
    def is_identity(self) -> bool:
        return self.noise_std == 0 and self.dropout_prob == 0 and self.shift_max == 0


def augment(X: np.ndarray, aug: AugSpec, rng: np.random.Generator) -> np.ndarray:
    out = np.array(X, dtype=np.float64, copy=True)
    N, F = out.shape
    if aug.shift_max:
        shifts = rng.integers(-aug.shift_max, aug.shift_max + 1, size=N)
        cols = (np.arange(F)[None, :] - shifts[:, None]) % F
        out = np.take_along_axis(out, cols, axis=1)
    if aug.dropout_prob:
        out *= rng.random(out.shape) >= aug.dropout_prob
    if aug.noise_std:
        out += aug.noise_std * rng.standard_normal(out.shape)
    return out


def make_views(batch, V: int, aug: AugSpec, rng: np.random.Generator) -> ViewSet:
    """V independently augmented copies of ``batch``."""
    if V < 2:
        raise ParameterError(f"need at least 2 views, got {V}")
    X = ml.as_matrix(batch)
    return ViewSet([augment(X, aug, rng) for _ in range(V)])


# -- encoder -------------------------------------------------------------------


@dataclass
class Layer:
    W: np.ndarray  # fan_in x fan_out
    b: np.ndarray
    activation: str = "identity"


@dataclass
class Encoder:
    layers: list[Layer]

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    @property
    def kind(self) -> str:
        return "linear" if len(self.layers) == 1 and self.layers[0].activation == "identity" else "mlp"

    def copy(self) -> "Encoder":
        return Encoder([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])

    def params(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out.extend([l.W, l.b])
        return out


def init_encoder(dims: list[int], rng: np.random.Generator, hidden_activation: str = "relu",
                 init_scale: float = 1.0) -> Encoder:
    """Layers ``dims[0] -> ... -> dims[-1]``; weights uniform in ±init_scale/sqrt(fan_in),
    zero biases, ``hidden_activation`` between layers and identity at the output."""
    if len(dims) < 2:
        raise ParameterError("encoder needs at least input and output dims")
    if hidden_activation not in ACTIVATIONS:
        raise ParameterError(f"unknown activation {hidden_activation!r}")
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        bound = init_scale / math.sqrt(a)
        W = rng.uniform(-bound, bound, size=(a, b))
        act = "identity" if i == len(dims) - 2 else hidden_activation
        layers.append(Layer(W, np.zeros(b), act))
    return Encoder(layers)


def forward(enc: Encoder, X) -> tuple[np.ndarray, list]:
    """Compose affine + activation layers; the cache keeps inputs and pre-activations."""
    h = np.asarray(X, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != enc.input_dim:
        raise ShapeError(f"encoder expects {enc.input_dim} input columns, got shape {h.shape}")
    cache = []
    for layer in enc.layers:
        pre = h @ layer.W + layer.b
        cache.append((h, pre))
        h = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    return h, cache


def backward(enc: Encoder, cache: list, dLdZ) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer ``(dW, db)`` for the loss whose gradient w.r.t. the output is ``dLdZ``."""
    if len(cache) != len(enc.layers):
        raise ShapeError("cache does not belong to this encoder")
    g = np.asarray(dLdZ, dtype=np.float64)
    if g.shape != cache[-1][1].shape:
        raise ShapeError(f"gradient shape {g.shape} does not match output {cache[-1][1].shape}")
    grads = [None] * len(enc.layers)
    for i in range(len(enc.layers) - 1, -1, -1):
        layer = enc.layers[i]
        h_in, pre = cache[i]
        if pre.shape[1] != layer.W.shape[1] or h_in.shape[1] != layer.W.shape[0]:
            raise ShapeError("stale cache: layer shapes changed")
        if layer.activation == "relu":
            g = g * (pre > 0)
        grads[i] = (h_in.T @ g, g.sum(axis=0))
        g = g @ layer.W.T
    return grads


def sgd_step(enc: Encoder, grads, lr: float) -> Encoder:
    """Plain SGD: w <- w - lr * g. Returns a new encoder."""
    layers = []
    for layer, (dW, db) in zip(enc.layers, grads):
        if dW.shape != layer.W.shape or db.shape != layer.b.shape:
            raise ShapeError("gradient shapes do not match encoder")
        layers.append(Layer(layer.W - lr * dW, layer.b - lr * db, layer.activation))
    return Encoder(layers)


def save_checkpoint(enc: Encoder, path) -> None:
    """Binary layout (little-endian): b"FROS", u32 version, u32 layer count, then
    per layer u32 fan_in, u32 fan_out, u32 activation code, fan_in*fan_out
    f64 weights row-major, fan_out f64 biases."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(enc.layers)))
    for layer in enc.layers:
        a, b = layer.W.shape
        buf.write(struct.pack("<III", a, b, ACTIVATIONS.index(layer.activation)))
        buf.write(np.ascontiguousarray(layer.W, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(layer.b, dtype="<f8").tobytes())
    _atomic_write(path, buf.getvalue())


def load_checkpoint(path) -> Encoder:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {data[:4]!r})")
    try:
        return _parse_checkpoint(data, path)
    except FormatError:
        raise
    except (struct.error, ValueError) as exc:
        raise TruncatedFileError(f"{path}: checkpoint ends early ({exc})",
                                 actual=len(data)) from None


def _parse_checkpoint(data: bytes, path) -> Encoder:
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    layers = []
    for _ in range(count):
        a, b, act = struct.unpack_from("<III", data, off)
        off += 12
        W = np.frombuffer(data, dtype="<f8", count=a * b, offset=off).reshape(a, b).copy()
        off += 8 * a * b
        bias = np.frombuffer(data, dtype="<f8", count=b, offset=off).copy()
        off += 8 * b
        layers.append(Layer(W, bias, ACTIVATIONS[act]))
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    return Encoder(layers)


def _atomic_write(path, payload) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(payload, bytes) else "w"
    with open(tmp, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
        fh.write(payload)
    tmp.replace(path)


# -- online probe ------------------------------------------------------------


class OnlineProbe:
    """Multinomial logistic regression on frozen embeddings, trained by SGD.

    Features are standardized with the statistics of the most recent
    training batch, so the probe is unaffected by embedding scale drift.
    """

    def __init__(self, dim: int, classes: int, lr: float = 0.1, seed: int = 0):
        self.W = np.zeros((dim, classes))
        self.b = np.zeros(classes)
        self.lr = lr
        self.classes = classes
        self.mu = np.zeros(dim)
        self.sd = np.ones(dim)

    def _scale(self, E):
        return (E - self.mu) / self.sd

    def step(self, E, y) -> float:
        E = np.asarray(E, dtype=np.float64)
        self.mu = E.mean(axis=0)
        self.sd = np.maximum(E.std(axis=0), 1e-12)
        X = self._scale(E)
        logits = X @ self.W + self.b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        n = X.shape[0]
        nll = -float(np.mean(np.log(p[np.arange(n), y] + 1e-300)))
        p[np.arange(n), y] -= 1.0
        p /= n
        self.W -= self.lr * (X.T @ p)
        self.b -= self.lr * p.sum(axis=0)
        return nll

    def predict(self, E) -> np.ndarray:
        return np.argmax(self._scale(np.asarray(E, dtype=np.float64)) @ self.W + self.b, axis=1)

    def accuracy(self, E, y) -> float:
        return float(np.mean(self.predict(E) == np.asarray(y)))


def online_probe(embeddings, labels, classes: int, eval_embeddings=None, eval_labels=None,
                 lr: float = 0.1, eval_every: int = 1) -> list[tuple[int, float]]:
    """Train a probe over a stream of (embedding batch, label batch) pairs.

    Returns ``[(step, top1_accuracy), ...]`` every ``eval_every`` steps,
    measured on the eval set when given, else on the current batch.
    """
    probe = None
    series = []
    for step, (E, y) in enumerate(zip(embeddings, labels)):
        if probe is None:
            probe = OnlineProbe(np.asarray(E).shape[1], classes, lr)
        probe.step(E, y)
        if (step + 1) % eval_every == 0:
            if eval_embeddings is not None:
                acc = probe.accuracy(eval_embeddings, eval_labels)
            else:
                acc = probe.accuracy(E, y)
            series.append((step + 1, acc))
    return series


def steps_to_accuracy(series, target: float):
    """First step whose accuracy reaches ``target``; None if never.

    ``series`` is a sequence of ``(step, acc)`` pairs or of bare accuracies
    (then the list index is returned)."""
    for i, item in enumerate(series):
        step, acc = item if isinstance(item, tuple) else (i, item)
        if acc is not None and not math.isnan(acc) and acc >= target:
            return step
    return None


# -- trajectories ------------------------------------------------------------


@dataclass
class TrajectoryRecord:
    top_k: int
    steps: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    inv: list[float] = field(default_factory=list)
    var: list[float] = field(default_factory=list)
    acc: list[float] = field(default_factory=list)
    eigenvalues: list[np.ndarray] = field(default_factory=list)
    metadata: dict = field(default_factory=lambda: {"eigenvalues": "raw covariance of view 1"})

    def append(self, step, loss, inv, var, acc, eigs):
        if self.steps and step <= self.steps[-1]:
            raise ValueError("trajectory steps must strictly increase")
        self.steps.append(int(step))
        self.loss.append(float(loss))
        self.inv.append(float(inv))
        self.var.append(float(var))
        self.acc.append(float("nan") if acc is None else float(acc))
        self.eigenvalues.append(np.asarray(eigs, dtype=np.float64))

    def __len__(self):
        return len(self.steps)

    def eig_matrix(self) -> np.ndarray:
        return np.vstack(self.eigenvalues) if self.eigenvalues else np.zeros((0, self.top_k))

    def accuracy_series(self) -> list[tuple[int, float]]:
        return list(zip(self.steps, self.acc))

    def to_csv(self) -> str:
        head = ["step", "loss", "inv", "var", "acc"] + [f"lambda_{i + 1}" for i in range(self.top_k)]
        lines = [",".join(head)]
        fmt = lambda x: "" if math.isnan(x) else format(x, ".17g")
        for i, s in enumerate(self.steps):
            row = [str(s), fmt(self.loss[i]), fmt(self.inv[i]), fmt(self.var[i]), fmt(self.acc[i])]
            row += [fmt(x) for x in self.eigenvalues[i]]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        _atomic_write(path, self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "TrajectoryRecord":
        """Parse trajectory CSV text; raises FormatError naming the line."""
        lines = [ln for ln in text.splitlines()]
        if not lines or not lines[0].strip():
            raise FormatError("line 1: missing header")
        head = lines[0].strip().split(",")
        if head[:5] != ["step", "loss", "inv", "var", "acc"] or len(head) < 6:
            raise FormatError("line 1: header must be step,loss,inv,var,acc,lambda_1..lambda_k")
        k = len(head) - 5
        for i, name in enumerate(head[5:]):
            if name != f"lambda_{i + 1}":
                raise FormatError(f"line 1: unexpected column {name!r}")
        traj = cls(top_k=k)
        num = lambda s: float("nan") if s == "" else float(s)
        for lineno, ln in enumerate(lines[1:], start=2):
            if not ln.strip():
                continue
            parts = ln.strip().split(",")
            if len(parts) != len(head):
                raise FormatError(f"line {lineno}: expected {len(head)} fields, got {len(parts)}")
            try:
                vals = [num(p) for p in parts[1:]]
                traj.append(int(parts[0]), vals[0], vals[1], vals[2],
                            None if math.isnan(vals[3]) else vals[3], vals[4:])
            except ValueError as exc:
                raise FormatError(f"line {lineno}: {exc}") from None
        return traj


def saturation_step(traj: TrajectoryRecord, rise_frac: float = 0.05, k: int | None = None):
    """First recorded step where the k-th eigenvalue falls after having exceeded
    ``rise_frac`` times the top eigenvalue; None if that never happens."""
    if not len(traj):
        raise ValueError("empty trajectory")
    E = traj.eig_matrix()
    k = E.shape[1] if k is None else k
    lam_k, lam_1 = E[:, k - 1], E[:, 0]
    risen = False
    for i in range(len(traj)):
        if i > 0 and risen and lam_k[i] < lam_k[i - 1]:
            return traj.steps[i]
        if lam_k[i] > rise_frac * lam_1[i]:
            risen = True
    return None


def condition_number(traj: TrajectoryRecord, step: int | None = None, k: int | None = None) -> float:
    """lambda_1 / lambda_k at ``step`` (default: last recorded step)."""
    i = len(traj) - 1 if step is None else traj.steps.index(step)
    eig = traj.eigenvalues[i]
    k = len(eig) if k is None else k
    if eig[k - 1] <= 1e-15:
        raise DegenerateInputError(f"lambda_{k} = {eig[k - 1]:g} is numerically zero")
    return float(eig[0] / eig[k - 1])


# -- training ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    objective: ObjectiveSpec
    views: int = 2
    batch_size: int = 256
    learning_rate: float = 0.01
    steps: int = 2000
    seed: int = 0
    top_k: int = 20
    augmentation: AugSpec = AugSpec()
    probe_enabled: bool = False
    record_every: int = 10
    hidden_dims: tuple[int, ...] = ()
    output_dim: int = 20
    init_scale: float = 1.0
    probe_lr: float = 0.1
    eval_size: int = 1000
    standardize_inputs: bool = True

    def __post_init__(self):
        for name in ("views", "batch_size", "top_k", "record_every", "output_dim"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")
        if self.views < 2:
            raise ParameterError("views must be at least 2")
        if self.steps < 0 or self.learning_rate < 0 or self.init_scale <= 0:
            raise ParameterError("steps and learning_rate must be >= 0, init_scale > 0")
        if self.top_k > self.output_dim:
            raise ParameterError(f"top_k={self.top_k} exceeds output_dim={self.output_dim}")

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objective"] = self.objective.to_dict()
        d["hidden_dims"] = list(self.hidden_dims)
        return d


@dataclass
class TrainResult:
    trajectory: TrajectoryRecord
    encoder: Encoder


def _seeds(seed: int):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(3)], int(ss.generate_state(1)[0])


def _check_finite(step, **terms):
    for name, value in terms.items():
        if not np.all(np.isfinite(value)):
            raise NumericalAbort(f"step {step}: {name} became non-finite", step=step, term=name)


def standardize_features(train: DatasetHandle, *others: DatasetHandle) -> list[DatasetHandle]:
    """Z-score every feature with the statistics of ``train``; constant features are only centered."""
    mu = train.features.mean(axis=0)
    sd = train.features.std(axis=0)
    sd[sd == 0] = 1.0
    return [DatasetHandle((d.features - mu) / sd, d.labels.copy(), d.class_count, d.provenance)
            for d in (train, *others)]


def train_run(config: TrainConfig, data: DatasetHandle) -> TrainResult:
    """Train with plain SGD, recording the top-k spectrum of the view-1 covariance.

    Rows are recorded at step 0 (initial state) and every ``record_every``
    updates, plus the final step. With the probe enabled, the last
    ``eval_size`` rows of ``data`` are held out for probe evaluation.
    With ``standardize_inputs`` features are z-scored with training-split
    statistics before augmentation.
    """
    (init_rng, aug_rng, _), batch_seed = _seeds(config.seed)
    train, evalset = data, None
    if config.probe_enabled:
        if data.n_samples <= config.eval_size + config.batch_size:
            raise ParameterError("dataset too small for the probe hold-out")
        train, evalset = data.split(data.n_samples - config.eval_size)
    if config.standardize_inputs:
        train, *rest = standardize_features(train, *([evalset] if evalset else []))
        evalset = rest[0] if rest else None
    dims = [data.dim, *config.hidden_dims, config.output_dim]
    enc = init_encoder(dims, init_rng, init_scale=config.init_scale)
    probe = OnlineProbe(config.output_dim, data.class_count, config.probe_lr) if config.probe_enabled else None
    spec = config.objective
    traj = TrajectoryRecord(top_k=config.top_k)
    batches = batch_iter(train, config.batch_size, batch_seed)
    for step in range(config.steps + 1):
        X, y = next(batches)
        vs = make_views(X, config.views, config.augmentation, aug_rng)
        outs = [forward(enc, x) for x in vs.views]
        _check_finite(step, embedding=np.stack([o[0] for o in outs]))
        Z = ViewSet([o[0] for o in outs])
        record = step % config.record_every == 0 or step == config.steps
        if record:
            res = evaluate(Z, spec)
            _check_finite(step, loss=res.total, invariance=res.invariance_part,
                          variance=res.variance_part)
            S = ml.covariance(ml.center_columns(Z.views[0]))
            eigs = np.maximum(ml.sym_eig(S).eigenvalues[: config.top_k], 0.0)
            acc = probe.accuracy(forward(enc, evalset.features)[0], evalset.labels) if probe else None
            traj.append(step, res.total, res.invariance_part, res.variance_part, acc, eigs)
        if step == config.steps:
            break
        g = analytic_grad(Z, spec)
        _check_finite(step, loss=g.loss, gradient=np.concatenate([x.ravel() for x in g.grads]))
        total = None
        for (_, cache), dz in zip(outs, g.grads):
            pg = backward(enc, cache, dz)
            total = pg if total is None else [(a + c, b + d) for (a, b), (c, d) in zip(total, pg)]
        enc = sgd_step(enc, total, config.learning_rate)
        _check_finite(step, weights=np.concatenate([p.ravel() for p in enc.params()]))
        if probe is not None:
            probe.step(forward(enc, X)[0], y)
    return TrainResult(traj, enc)


# -- desk-scale reference experiments ----------------------------------------

#: stepwise-dynamics reference: 10-class mixture in 64 dims, linear 64 -> 20
REFERENCE_SPREAD = 40.0
REFERENCE_NOISE = 0.1
#: multiview probe task: class means close enough that 0.90 probe accuracy
#: is reachable but not immediate
PROBE_SPREAD = 7.0


def reference_spec(kind: str) -> ObjectiveSpec:
    """Training-time objective settings; VICReg uses its mean-reduced form."""
    if kind == "vicreg":
        return ObjectiveSpec("vicreg", params={"reduction": "mean"})
    return ObjectiveSpec(kind)


def reference_data(seed: int, spread: float = REFERENCE_SPREAD) -> DatasetHandle:
    from .datasets import synth_gaussian_mixture

    return synth_gaussian_mixture(10, 64, 500, spread, seed)


def reference_config(kind: str, seed: int, **overrides) -> TrainConfig:
    cfg = TrainConfig(reference_spec(kind), steps=2000, seed=seed, batch_size=256,
                      learning_rate=0.01, record_every=10, top_k=20, output_dim=20,
                      augmentation=AugSpec(noise_std=REFERENCE_NOISE))
    return cfg.with_(**overrides) if overrides else cfg
