"""Prototypical 2D training landscapes.

Quadratic bowls are plain least-squares losses.  Valleys, saddles and
plateau+cliff landscapes are Gaussian-process conditional surfaces: a few
anchor points get random values and the field is the GP posterior given
those anchors, under a normalized Gaussian covariance with a random
Mahalanobis scaling matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .errors import GenerationError, RejectedInput
from .fields import ScalarField, quadratic_field

MODALITIES = ("quadratic", "valley", "saddle", "plateau_cliff")
KERNEL_FORMS = ("standard", "verbatim")
JITTER = 1e-8


def _check_pd(S):
    S = np.asarray(S, dtype=float)
    if S.shape != (2, 2) or not np.allclose(S, S.T):
        raise RejectedInput("scaling matrix must be a symmetric 2x2 matrix")
    if np.linalg.eigvalsh(S).min() <= 0:
        raise RejectedInput("scaling matrix must be positive definite")
    return S


def covariance(x, x2, S, form: str = "standard") -> float:
    """Normalized Gaussian covariance ``|2 pi S|^-1/2 exp(-q/2)``.

    ``form="verbatim"`` uses ``q = x^T S^-1 x'``; ``form="standard"`` uses the
    shift-invariant Mahalanobis distance ``(x - x')^T S^-1 (x - x')``.
    """
    S = _check_pd(S)
    return float(kernel_matrix(np.atleast_2d(x), np.atleast_2d(x2), S, form)[0, 0])


def kernel_matrix(XA, XB, S, form: str = "standard") -> np.ndarray:
    XA = np.asarray(XA, dtype=float)
    XB = np.asarray(XB, dtype=float)
    P = np.linalg.inv(S)
    scale = 1.0 / math.sqrt(np.linalg.det(2 * np.pi * S))
    if form == "standard":
        diff = XA[:, None, :] - XB[None, :, :]
        q = np.einsum("abi,ij,abj->ab", diff, P, diff)
    elif form == "verbatim":
        q = XA @ P @ XB.T
    else:
        raise RejectedInput(f"unknown kernel form {form!r}")
    return scale * np.exp(-0.5 * q)


@dataclass(frozen=True)
class AnchorSet:
    points: np.ndarray
    values: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        if len(pts) < 1 or len(pts) != len(vals):
            raise RejectedInput("anchor points and values must be nonempty and of equal length")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "S", _check_pd(self.S))


class GPConditional:
    """Posterior of a zero-mean GP given noiseless anchor values."""

    def __init__(self, anchors: AnchorSet, form: str = "standard"):
        self.anchors = anchors
        self.form = form
        K = kernel_matrix(anchors.points, anchors.points, anchors.S, form)
        self.prior_var = 1.0 / math.sqrt(np.linalg.det(2 * np.pi * anchors.S))
        # jitter relative to the kernel's diagonal scale
        K = K + JITTER * self.prior_var * np.eye(len(K))
        try:
            self.chol = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            # the verbatim kernel is not positive definite in general; an
            # invertible Gram matrix still defines the conditional mean
            self.chol = None
        if self.chol is None and not np.linalg.cond(K) < 1e12:
            raise GenerationError("anchor Gram matrix is singular after jitter")
        self.K = K
        self.weights = np.linalg.solve(K, anchors.values)
        self.P = np.linalg.inv(anchors.S)

    def _k(self, X):
        flat = X.reshape(-1, 2)
        return kernel_matrix(flat, self.anchors.points, self.anchors.S, self.form)

    def mean(self, X):
        X = np.asarray(X, dtype=float)
        return (self._k(X) @ self.weights).reshape(X.shape[:-1])

    def variance(self, X):
        X = np.asarray(X, dtype=float)
        k = self._k(X)
        if self.chol is not None:
            v = np.linalg.solve(self.chol, k.T)
            explained = np.sum(v * v, axis=0)
        else:
            explained = np.sum(k.T * np.linalg.solve(self.K, k.T), axis=0)
        if self.form == "standard":
            kxx = self.prior_var
        else:
            flat = X.reshape(-1, 2)
            q = np.einsum("ai,ij,aj->a", flat, self.P, flat)
            kxx = self.prior_var * np.exp(-0.5 * q)
        return np.maximum(kxx - explained, 0.0).reshape(X.shape[:-1])

    def sample(self, X, rng):
        mu = self.mean(X)
        return mu + np.sqrt(self.variance(X)) * rng.standard_normal(mu.shape)

    def grad(self, x):
        if self.form != "standard":
            raise NotImplementedError("analytic gradient only for the standard kernel")
        diff = np.asarray(x, dtype=float) - self.anchors.points
        k = self._k(np.asarray(x, dtype=float)[None, :])[0]
        return -(k * self.weights) @ (diff @ self.P)

    def hess(self, x):
        if self.form != "standard":
            raise NotImplementedError("analytic Hessian only for the standard kernel")
        diff = (np.asarray(x, dtype=float) - self.anchors.points) @ self.P
        k = self._k(np.asarray(x, dtype=float)[None, :])[0] * self.weights
        return np.einsum("a,ai,aj->ij", k, diff, diff) - k.sum() * self.P


def gp_conditional(anchors: AnchorSet, x, rng=None, form: str = "standard") -> float:
    """Draw of ``f(x) | anchor values``; the conditional mean when ``rng`` is None."""
    gp = GPConditional(anchors, form)
    X = np.asarray(x, dtype=float)[None, :]
    return float(gp.mean(X)[0] if rng is None else gp.sample(X, rng)[0])


@dataclass(frozen=True)
class ProtoField(ScalarField):
    """A sampled training landscape; noiseless unless ``noisy`` is set."""

    modality: str = "quadratic"
    anchors: Optional[AnchorSet] = None
    gp: Optional[GPConditional] = None
    noisy: bool = False
    seed: Optional[int] = None
    center: Optional[np.ndarray] = None

    def batch(self, X, rng=None):
        X = np.asarray(X, dtype=float)
        if not self.noisy or rng is None:
            return np.asarray(self.func(X), dtype=float)
        if self.gp is not None:
            vals = self.gp.sample(X, rng)
        else:
            vals = np.asarray(self.func(X), dtype=float)
        if self.noise_sigma > 0:
            vals = vals + self.noise_sigma * rng.standard_normal(vals.shape)
        return vals


def _trunc_normal_pos(rng, mean, var):
    sd = math.sqrt(var)
    while True:
        v = rng.normal(mean, sd)
        if v > 0:
            return v


def _rotation(phi):
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def _scaling(rng, lam1, lam2):
    R = _rotation(rng.uniform(0.0, 2 * np.pi))
    return R.T @ np.diag([lam1, lam2]) @ R


def _locate_minimum(gp: GPConditional, half_width=10.0, step=0.1):
    ticks = np.arange(-half_width, half_width + step / 2, step)
    G = np.stack(np.meshgrid(ticks, ticks, indexing="ij"), axis=-1)
    vals = gp.mean(G)
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    x0 = G[i, j]
    if gp.form == "standard":
        res = minimize(lambda x: float(gp.mean(x[None, :])[0]), x0, jac=gp.grad, method="BFGS",
                       options={"gtol": 1e-10})
        if res.fun <= vals[i, j]:
            return res.x, float(res.fun)
    return x0, float(vals[i, j])


def _gp_field(modality, anchors, rng_seed, noisy, form, noise_scale):
    gp = GPConditional(anchors, form)
    xstar, fstar = _locate_minimum(gp)
    sigma = noise_scale * float(np.max(np.abs(anchors.values)))
    standard = form == "standard"
    return ProtoField(
        dim=2, func=gp.mean, noise_sigma=sigma if noisy else 0.0,
        grad=gp.grad if standard else None, hess=gp.hess if standard else None,
        known_minimum=(xstar, fstar), name=modality,
        modality=modality, anchors=anchors, gp=gp, noisy=noisy, seed=rng_seed,
        center=anchors.points.mean(axis=0),
    )


def sample_proto(modality: str, rng, *, noisy: bool = False, kernel_form: str = "standard",
                 noise_scale: float = 0.01, seed=None) -> ProtoField:
    """Draw one landscape of the given modality."""
    if modality not in MODALITIES:
        raise RejectedInput(f"unknown modality {modality!r}; choose from {MODALITIES}")
    if modality == "quadratic":
        while True:
            A = rng.standard_normal((2, 2))
            if np.linalg.cond(A) <= 50:
                break
        b = rng.standard_normal(2)
        q = quadratic_field(A, b, noise_sigma=noise_scale if noisy else 0.0)
        return ProtoField(dim=2, func=q.func, noise_sigma=q.noise_sigma, grad=q.grad, hess=q.hess,
                          known_minimum=q.known_minimum, name="quadratic", meta=q.meta,
                          modality="quadratic", noisy=noisy, seed=seed, center=q.minimizer)
    if modality == "valley":
        v1 = rng.uniform(-5.0, 0.0)
        lam1 = _trunc_normal_pos(rng, 10.0, 2.0)
        lam2 = rng.uniform(100.0, 200.0) * lam1
        anchors = AnchorSet(np.zeros((1, 2)), np.array([v1]), _scaling(rng, lam1, lam2))
    elif modality == "saddle":
        signs = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=float)
        pts = signs * rng.uniform(0.0, 1.0, size=(4, 2))
        vals = np.abs(rng.normal(0.0, 3.0, size=4)) * np.array([1.0, -1.0, 1.0, -1.0])
        lam1 = _trunc_normal_pos(rng, 10.0, 2.0)
        lam2 = _trunc_normal_pos(rng, 10.0, 2.0)
        anchors = AnchorSet(pts, vals, _scaling(rng, lam1, lam2))
    else:  # plateau_cliff
        v1 = -_trunc_normal_pos(rng, 5.0, 2.0)
        lam1 = _trunc_normal_pos(rng, 10.0, 2.0)
        lam2 = _trunc_normal_pos(rng, 10.0, 2.0)
        anchors = AnchorSet(np.zeros((1, 2)), np.array([v1]), _scaling(rng, lam1, lam2))
    return _gp_field(modality, anchors, seed, noisy, kernel_form, noise_scale)


def sample_proto_seeded(modality: str, seed: int, **kw) -> ProtoField:
    return sample_proto(modality, np.random.default_rng(seed), seed=seed, **kw)
