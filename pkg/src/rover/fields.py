"""Scalar-field oracles: analytic test functions, finite differences and task losses.

Every field evaluates *batches*: ``field.batch(X)`` accepts an array of shape
``(..., dim)`` and returns shape ``(...)``.  Grid observations and population
optimizers lean on this to avoid Python-level loops.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import GenerationError, IngestionError, RejectedInput

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ScalarField:
    """A real-valued function on ``R^dim``.

    ``func`` is the noiseless batched oracle.  Observation noise is only added
    when the caller supplies a random stream, so concurrent callers never
    share generator state.
    """

    dim: int
    func: ArrayFn
    noise_sigma: float = 0.0
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    known_minimum: Optional[tuple] = None
    name: str = "field"
    meta: dict = dc_field(default_factory=dict, compare=False)

    def batch(self, X, rng=None):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dim:
            raise RejectedInput(f"{self.name}: expected points of dimension {self.dim}, got {X.shape[-1]}")
        vals = np.asarray(self.func(X), dtype=float)
        if rng is not None and self.noise_sigma > 0:
            vals = vals + self.noise_sigma * rng.standard_normal(vals.shape)
        return vals

    def value(self, x) -> float:
        """Noiseless evaluation at a single point."""
        return float(self.batch(np.asarray(x, dtype=float)[None, :])[0])

    def __call__(self, x, rng=None) -> float:
        return float(self.batch(np.asarray(x, dtype=float)[None, :], rng=rng)[0])

    @property
    def minimizer(self):
        return None if self.known_minimum is None else np.asarray(self.known_minimum[0], dtype=float)

    @property
    def min_value(self):
        return None if self.known_minimum is None else float(self.known_minimum[1])


# ---------------------------------------------------------------------------
# finite differences

def finite_difference_gradient(f: ScalarField, theta, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient, evaluated on the noiseless oracle."""
    if h <= 0:
        raise RejectedInput("finite-difference step must be positive")
    theta = np.asarray(theta, dtype=float)
    d = theta.size
    steps = h * np.eye(d)
    pts = np.concatenate([theta + steps, theta - steps])
    vals = f.batch(pts)
    return (vals[:d] - vals[d:]) / (2 * h)


def finite_difference_hessian(f: ScalarField, theta, h: float = 1e-4) -> np.ndarray:
    """Second-order central stencil, symmetrized."""
    if h <= 0:
        raise RejectedInput("finite-difference step must be positive")
    theta = np.asarray(theta, dtype=float)
    d = theta.size
    eye = h * np.eye(d)
    f0 = f.batch(theta[None, :])[0]
    plus = f.batch(theta + eye)
    minus = f.batch(theta - eye)
    H = np.empty((d, d))
    for i in range(d):
        H[i, i] = (plus[i] - 2 * f0 + minus[i]) / h**2
    if d > 1:
        iu, ju = np.triu_indices(d, k=1)
        ei, ej = eye[iu], eye[ju]
        pts = np.concatenate([theta + ei + ej, theta + ei - ej, theta - ei + ej, theta - ei - ej])
        v = f.batch(pts).reshape(4, -1)
        off = (v[0] - v[1] - v[2] + v[3]) / (4 * h**2)
        H[iu, ju] = off
        H[ju, iu] = off
    return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# analytic meta-test functions

def _rosenbrock(X):
    x0, x1 = X[..., 0], X[..., 1]
    return 100.0 * (x1 - x0**2) ** 2 + (x0 - 1.0) ** 2


def _rosenbrock_grad(x):
    x0, x1 = x
    return np.array([-400.0 * x0 * (x1 - x0**2) + 2.0 * (x0 - 1.0), 200.0 * (x1 - x0**2)])


def _rosenbrock_hess(x):
    x0, x1 = x
    return np.array([[-400.0 * (x1 - x0**2) + 800.0 * x0**2 + 2.0, -400.0 * x0], [-400.0 * x0, 200.0]])


def _ackley(X):
    x, y = X[..., 0], X[..., 1]
    r = np.sqrt(0.5 * (x**2 + y**2))
    cosine = 0.5 * np.cos(2 * np.pi * x) + 0.5 * np.cos(2 * np.pi * y)
    return -20.0 * np.exp(-0.2 * r) - np.exp(cosine) + 20.0 + math.e


def _ackley_grad(p):
    x, y = p
    r = math.sqrt(0.5 * (x * x + y * y))
    e_cos = math.exp(0.5 * math.cos(2 * math.pi * x) + 0.5 * math.cos(2 * math.pi * y))
    radial = 0.0 if r == 0 else 2.0 * math.exp(-0.2 * r) / r
    return np.array([
        radial * x + math.pi * math.sin(2 * math.pi * x) * e_cos,
        radial * y + math.pi * math.sin(2 * math.pi * y) * e_cos,
    ])


def _rastrigin(X):
    return 20.0 + np.sum(X**2 - 10.0 * np.cos(2 * np.pi * X), axis=-1)


def _rastrigin_grad(x):
    return 2.0 * x + 20.0 * np.pi * np.sin(2 * np.pi * x)


def _rastrigin_hess(x):
    return np.diag(2.0 + 40.0 * np.pi**2 * np.cos(2 * np.pi * x))


def _maccornick(X):
    x, y = X[..., 0], X[..., 1]
    return np.sin(x + y) + (x - y) ** 2 - 1.5 * x + 2.5 * y + 1.0


def _maccornick_grad(p):
    x, y = p
    c = math.cos(x + y)
    return np.array([c + 2 * (x - y) - 1.5, c - 2 * (x - y) + 2.5])


def _maccornick_hess(p):
    s = math.sin(p[0] + p[1])
    return np.array([[2.0 - s, -2.0 - s], [-2.0 - s, 2.0 - s]])


def _styblinski(X):
    return 0.5 * np.sum(X**4 - 16.0 * X**2 + 5.0 * X, axis=-1)


def _styblinski_grad(x):
    return 0.5 * (4.0 * x**3 - 32.0 * x + 5.0)


def _styblinski_hess(x):
    return np.diag(0.5 * (12.0 * x**2 - 32.0))


def _beale_residuals(x, y):
    return 1.5 - x + x * y, 2.25 - x + x * y**2, 2.625 - x + x * y**3


def _beale(X):
    r1, r2, r3 = _beale_residuals(X[..., 0], X[..., 1])
    return r1**2 + r2**2 + r3**2


def _beale_grad(p):
    x, y = p
    r1, r2, r3 = _beale_residuals(x, y)
    return np.array([
        2 * r1 * (y - 1) + 2 * r2 * (y**2 - 1) + 2 * r3 * (y**3 - 1),
        2 * r1 * x + 4 * r2 * x * y + 6 * r3 * x * y**2,
    ])


def _styblinski_minimum():
    # global minimizer per coordinate: the most negative root of 4x^3 - 32x + 5
    roots = np.roots([4.0, 0.0, -32.0, 5.0]).real
    x = roots.min()
    return np.array([x, x])


def _maccornick_minimum():
    # stationary point on the line x - y = 1 with cos(x + y) = -1/2
    s = -2.0 * np.pi / 3.0
    return np.array([(s + 1) / 2, (s - 1) / 2])


# Documented default starts; the original figure markers are not recoverable.
DEFAULT_STARTS = {
    "rosenbrock": (-1.5, 2.0),
    "ackley": (2.3, -1.7),
    "rastrigin": (2.2, -2.4),
    "maccornick": (2.5, 2.0),
    "styblinski": (0.5, 4.2),
    "beale": (-1.0, 2.0),
}


def make_test_function(name: str) -> ScalarField:
    """One of the six analytic 2D meta-test functions."""
    key = name.lower()
    if key == "rosenbrock":
        return ScalarField(2, _rosenbrock, grad=_rosenbrock_grad, hess=_rosenbrock_hess,
                           known_minimum=(np.array([1.0, 1.0]), 0.0), name=key)
    if key == "ackley":
        return ScalarField(2, _ackley, grad=_ackley_grad, known_minimum=(np.zeros(2), 0.0), name=key)
    if key == "rastrigin":
        return ScalarField(2, _rastrigin, grad=_rastrigin_grad, hess=_rastrigin_hess,
                           known_minimum=(np.zeros(2), 0.0), name=key)
    if key == "maccornick":
        xm = _maccornick_minimum()
        return ScalarField(2, _maccornick, grad=_maccornick_grad, hess=_maccornick_hess,
                           known_minimum=(xm, float(_maccornick(xm))), name=key,
                           meta={"plot_box": (-5.0, 5.0)})
    if key == "styblinski":
        xm = _styblinski_minimum()
        return ScalarField(2, _styblinski, grad=_styblinski_grad, hess=_styblinski_hess,
                           known_minimum=(xm, float(_styblinski(xm))), name=key,
                           meta={"plot_box": (-5.0, 5.0)})
    if key == "beale":
        return ScalarField(2, _beale, grad=_beale_grad, known_minimum=(np.array([3.0, 0.5]), 0.0), name=key)
    raise RejectedInput(f"unknown test function {name!r}; choose from {sorted(TEST_FUNCTIONS)}")


TEST_FUNCTIONS = ("rosenbrock", "ackley", "rastrigin", "maccornick", "styblinski", "beale")


def quadratic_field(A, b, noise_sigma: float = 0.0, name: str = "quadratic") -> ScalarField:
    """The least-squares bowl ``||A x - b||^2``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)

    def func(X):
        r = X @ A.T - b
        return np.sum(r * r, axis=-1)

    xstar = np.linalg.lstsq(A, b, rcond=None)[0]
    fstar = float(func(xstar[None, :])[0])
    H = 2.0 * A.T @ A
    return ScalarField(A.shape[1], func, noise_sigma=noise_sigma,
                       grad=lambda x: 2.0 * A.T @ (A @ x - b), hess=lambda x: H,
                       known_minimum=(xstar, fstar), name=name, meta={"A": A, "b": b})


# ---------------------------------------------------------------------------
# binary classification

@dataclass(frozen=True)
class ClassificationTask:
    features: np.ndarray
    labels: np.ndarray
    seed: int
    separation: float = 0.0


def _draw_task(d, m, rng):
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    separation = rng.uniform(1.0, 3.0)
    labels = (rng.random(m) < 0.5).astype(float)
    centers = np.outer(2.0 * labels - 1.0, 0.5 * separation * direction)
    features = centers + rng.standard_normal((m, d))
    return features, labels, separation


def make_classification_task(d: int, m: int, seed: int) -> ClassificationTask:
    """Two identity-covariance Gaussian clusters with separation in [1, 3]."""
    if d < 3 or m < 2:
        raise RejectedInput("classification task needs d >= 3 and m >= 2")
    for attempt in range(10):
        rng = np.random.default_rng(seed + attempt)
        X, y, sep = _draw_task(d, m, rng)
        if 0 < y.sum() < m:
            return ClassificationTask(X, y, seed + attempt, sep)
    raise GenerationError(f"could not draw a two-class task from seed {seed} in 10 attempts")


def logistic_loss_field(task: ClassificationTask, name: str = "binary_classification") -> ScalarField:
    """Mean logistic cross-entropy over ``(w, bias)``; dimension ``d + 1``."""
    X, y = task.features, task.labels
    m, d = X.shape

    def func(P):
        z = P[..., :d] @ X.T + P[..., d:]
        return np.mean(np.logaddexp(0.0, z) - y * z, axis=-1)

    def grad(p):
        z = X @ p[:d] + p[d]
        r = 0.5 * (1.0 + np.tanh(0.5 * z)) - y
        return np.concatenate([X.T @ r, [r.sum()]]) / m

    def hess(p):
        z = X @ p[:d] + p[d]
        s = 0.5 * (1.0 + np.tanh(0.5 * z))
        Xa = np.hstack([X, np.ones((m, 1))])
        return (Xa * (s * (1 - s))[:, None]).T @ Xa / m

    return ScalarField(d + 1, func, grad=grad, hess=hess, name=name,
                       meta={"task": task})


def make_binary_classification_field(d: int, m: int = 200, seed: int = 0) -> ScalarField:
    return logistic_loss_field(make_classification_task(d, m, seed))


# ---------------------------------------------------------------------------
# Iris MLP

IRIS_LABELS = {
    "iris-setosa": 0, "setosa": 0, "0": 0,
    "iris-versicolor": 1, "versicolor": 1, "1": 1,
    "iris-virginica": 2, "virginica": 2, "2": 2,
}
MLP_LAYERS = ((4, 10), (10, 10), (10, 3))


def bundled_iris_path() -> Path:
    return Path(str(resources.files("rover") / "data" / "iris.csv"))


def load_iris(path=None):
    """Read the 150-row Iris CSV: four reals then a species label per line."""
    path = Path(path) if path is not None else bundled_iris_path()
    feats, labels = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1:
                try:
                    float(row[0])
                except ValueError:
                    continue  # header
            if len(row) != 5:
                raise IngestionError(f"{path}: row {lineno} has {len(row)} fields, expected 5")
            try:
                feats.append([float(c) for c in row[:4]])
            except ValueError as exc:
                raise IngestionError(f"{path}: row {lineno}: non-numeric feature ({exc})") from None
            key = row[4].strip().lower()
            if key not in IRIS_LABELS:
                raise IngestionError(f"{path}: row {lineno}: unknown label {row[4]!r}")
            labels.append(IRIS_LABELS[key])
    if len(feats) != 150:
        raise IngestionError(f"{path}: expected 150 data rows, found {len(feats)}")
    return np.array(feats), np.array(labels, dtype=int)


def mlp_param_count(layers=MLP_LAYERS) -> int:
    return sum(a * b + b for a, b in layers)


def mlp_layer_blocks(layers=MLP_LAYERS):
    """Index sets of each layer's weights and bias in the flat parameter vector."""
    blocks, start = [], 0
    for a, b in layers:
        n = a * b + b
        blocks.append(list(range(start, start + n)))
        start += n
    return blocks


def _unpack(P, layers):
    out, start = [], 0
    lead = P.shape[:-1]
    for a, b in layers:
        W = P[..., start:start + a * b].reshape(*lead, a, b)
        start += a * b
        bias = P[..., start:start + b]
        start += b
        out.append((W, bias))
    return out


def _cross_entropy(z, onehot):
    zmax = z.max(axis=-1, keepdims=True)
    logz = zmax[..., 0] + np.log(np.exp(z - zmax).sum(axis=-1))
    return np.mean(logz - np.einsum("...mk,mk->...m", z, onehot), axis=-1)


def _mlp_loss_batch(P, X, onehot):
    """Loss of each row of ``P`` (shape ``(B, d)``) with one batched matmul per layer."""
    (W1, b1), (W2, b2), (W3, b3) = _unpack(P, MLP_LAYERS)
    B, m = P.shape[0], X.shape[0]
    a1 = (X @ W1.transpose(1, 0, 2).reshape(X.shape[1], -1)).reshape(m, B, -1).transpose(1, 0, 2)
    h1 = np.tanh(a1 + b1[:, None, :])
    h2 = np.tanh(np.matmul(h1, W2) + b2[:, None, :])
    return _cross_entropy(np.matmul(h2, W3) + b3[:, None, :], onehot)


def _mlp_loss_sparse(P, X, onehot, max_varying: int = 16):
    """Loss of rows that differ from ``P[0]`` in a few coordinates.

    Activations are shared until the first layer holding a varying
    coordinate; from there each varying weight or bias adds a rank-one
    correction to the shared product, so every layer is one large matmul.
    Falls back to :func:`_mlp_loss_batch` when too many coordinates vary.
    """
    base = P[0]
    D = P - base
    varying = np.flatnonzero(np.any(D != 0, axis=0))
    if len(varying) > max_varying:
        return _mlp_loss_batch(P, X, onehot)
    B, m = P.shape[0], X.shape[0]
    h, batched, start = X, False, 0
    layers = _unpack(base, MLP_LAYERS)
    for li, ((fan_in, fan_out), (W, bias)) in enumerate(zip(MLP_LAYERS, layers)):
        stop = start + fan_in * fan_out + fan_out
        if batched:
            a = (h.reshape(-1, fan_in) @ W).reshape(B, m, fan_out) + bias
        else:
            a = h @ W + bias
        ks = varying[(varying >= start) & (varying < stop)]
        if len(ks):
            if not batched:
                a = np.repeat(a[None], B, axis=0)
                batched = True
            for k in ks:
                r, c = divmod(k - start, fan_out)
                if r < fan_in:
                    src = h[:, :, r] if h.ndim == 3 else h[None, :, r]
                    a[:, :, c] += D[:, k, None] * src
                else:
                    a[:, :, c] += D[:, k, None]
        h = a if li == len(MLP_LAYERS) - 1 else np.tanh(a)
        start = stop
    if not batched:
        h = np.broadcast_to(h, (B,) + h.shape)
    return _cross_entropy(h, onehot)


def make_iris_mlp_field(dataset_path=None, chunk: int = 1024) -> ScalarField:
    """Cross-entropy of a 4-10-10-3 tanh MLP with softmax output, d = 193."""
    X, y = load_iris(dataset_path)
    onehot = np.eye(3)[y]
    d = mlp_param_count()

    def func(P):
        lead = P.shape[:-1]
        flat = P.reshape(-1, d)
        out = np.empty(flat.shape[0])
        # a stack of grids is evaluated grid by grid so each chunk varies in two coordinates
        step = int(np.prod(lead[1:])) if len(lead) >= 3 else chunk
        for s in range(0, flat.shape[0], step):
            out[s:s + step] = _mlp_loss_sparse(flat[s:s + step], X, onehot)
        return out.reshape(lead)

    def grad(p):
        (W1, b1), (W2, b2), (W3, b3) = _unpack(p, MLP_LAYERS)
        h1 = np.tanh(X @ W1 + b1)
        h2 = np.tanh(h1 @ W2 + b2)
        z = h2 @ W3 + b3
        z = z - z.max(axis=1, keepdims=True)
        prob = np.exp(z)
        prob /= prob.sum(axis=1, keepdims=True)
        dz = (prob - onehot) / X.shape[0]
        gW3, gb3 = h2.T @ dz, dz.sum(0)
        da2 = (dz @ W3.T) * (1 - h2**2)
        gW2, gb2 = h1.T @ da2, da2.sum(0)
        da1 = (da2 @ W2.T) * (1 - h1**2)
        gW1, gb1 = X.T @ da1, da1.sum(0)
        return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2, gW3.ravel(), gb3])

    return ScalarField(d, func, grad=grad, name="iris_mlp",
                       meta={"blocks": mlp_layer_blocks(), "n_samples": X.shape[0]})


def init_mlp_params(rng, scale: float = 0.5) -> np.ndarray:
    """Glorot-style random parameters for the Iris network (biases zero)."""
    parts = []
    for a, b in MLP_LAYERS:
        parts.append(rng.standard_normal(a * b) * scale * math.sqrt(2.0 / (a + b)))
        parts.append(np.zeros(b))
    return np.concatenate(parts)


def field_registry():
    """Name -> zero-argument factory, used by the command line."""
    reg = {name: (lambda n=name: make_test_function(n)) for name in TEST_FUNCTIONS}
    reg["iris_mlp"] = make_iris_mlp_field
    for d in (10, 20, 50):
        reg[f"binary_classification_{d}"] = lambda d=d: make_binary_classification_field(d, seed=0)
    return reg


def field_by_name(name: str) -> ScalarField:
    reg = field_registry()
    if name.startswith("binary_classification_") and name not in reg:
        try:
            d = int(name.rsplit("_", 1)[1])
        except ValueError:
            raise RejectedInput(f"unknown field {name!r}") from None
        return make_binary_classification_field(d, seed=0)
    if name not in reg:
        raise RejectedInput(f"unknown field {name!r}; known: {sorted(reg)}")
    return reg[name]()
