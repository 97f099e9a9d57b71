"""One-vs-rest RBF-kernel SVM trained by sequential minimal optimization.

Each binary machine solves the dual

    min  1/2 a'Qa - sum(a)   s.t.  0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j K_ij

by repeatedly optimizing the maximal violating pair (i, j) in closed form,
until the KKT gap max_{I_up} -y G - min_{I_low} -y G drops below ``tol``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import DimensionMismatch, NoConvergence, SingleClass

_TAU = 1e-12


def rbf_kernel(a, b, gamma: float) -> np.ndarray:
    """exp(-gamma * ||a_i - b_j||^2) for every pair of rows."""
    return np.exp(-gamma * cdist(np.atleast_2d(a), np.atleast_2d(b), "sqeuclidean"))


@dataclass(eq=False)
class BinaryMachine:
    alpha: np.ndarray   # (n_train,) dual variables
    y: np.ndarray       # (n_train,) +-1 targets
    bias: float
    gap: float          # final KKT gap
    iterations: int


@dataclass(eq=False)
class RbfSvmModel:
    support_vectors: np.ndarray  # rows with a nonzero alpha in any machine
    alpha: np.ndarray            # (n_machines, n_sv)
    y: np.ndarray                # (n_machines, n_sv), +-1
    bias: np.ndarray             # (n_machines,)
    classes: np.ndarray          # label id of each machine, ascending
    gamma: float
    C: float
    kkt_gaps: np.ndarray

    @property
    def dual_coef(self) -> np.ndarray:
        return self.alpha * self.y


def _violators(alpha, y, grad, C):
    score = -y * grad
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    return score, up, low


def kkt_violation(alpha, y, K, C) -> float:
    """KKT gap max_{I_up} -y_t G_t - min_{I_low} -y_t G_t (0 when optimal)."""
    grad = y * (K @ (alpha * y)) - 1.0
    score, up, low = _violators(alpha, y, grad, C)
    if not up.any() or not low.any():
        return 0.0
    return max(0.0, float(score[up].max() - score[low].min()))


def smo_binary(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-6,
               max_iter: int = 1_000_000) -> BinaryMachine:
    n = y.size
    alpha = np.zeros(n)
    grad = -np.ones(n)
    diag = np.diag(K)
    for it in range(max_iter):
        score, up, low = _violators(alpha, y, grad, C)
        i = int(np.flatnonzero(up)[score[up].argmax()])
        j = int(np.flatnonzero(low)[score[low].argmin()])
        gap = score[i] - score[j]
        if gap <= tol:
            break
        # step along a_i += y_i * lam, a_j -= y_j * lam, which keeps y'a fixed
        curvature = max(diag[i] + diag[j] - 2.0 * K[i, j], _TAU)
        lam = gap / curvature
        lam = min(lam, C - alpha[i] if y[i] > 0 else alpha[i])
        lam = min(lam, alpha[j] if y[j] > 0 else C - alpha[j])
        di, dj = y[i] * lam, -y[j] * lam
        alpha[i] += di
        alpha[j] += dj
        # snap tiny round-off so the box constraints hold exactly
        for t in (i, j):
            if alpha[t] < 1e-15:
                alpha[t] = 0.0
            elif alpha[t] > C - 1e-15 * C:
                alpha[t] = C
        grad += y * (K[:, i] * (y[i] * di) + K[:, j] * (y[j] * dj))
    else:
        raise NoConvergence(max_iter)
    score, up, low = _violators(alpha, y, grad, C)
    free = (alpha > 0) & (alpha < C)
    if free.any():
        bias = float(score[free].mean())
    else:
        bias = 0.5 * float(score[up].max() + score[low].min())
    return BinaryMachine(alpha, y.astype(np.float64), bias, max(0.0, float(gap)), it)


def rbf_svm_fit(features, labels, C: float = 1.0, gamma: float = 1.0, tol: float = 1e-6,
                max_iter: int = 1_000_000) -> RbfSvmModel:
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if C <= 0 or gamma <= 0:
        raise ValueError("C and gamma must be positive")
    classes = np.unique(labels)
    if classes.size < 2:
        raise SingleClass("an SVM needs at least two classes")
    K = rbf_kernel(x, x, gamma)
    machines = [smo_binary(K, np.where(labels == c, 1.0, -1.0), C, tol, max_iter) for c in classes]
    alphas = np.stack([m.alpha for m in machines])
    sv = np.flatnonzero((alphas > 0).any(axis=0))
    return RbfSvmModel(x[sv], alphas[:, sv], np.stack([m.y for m in machines])[:, sv],
                       np.array([m.bias for m in machines]), classes, gamma, C,
                       np.array([m.gap for m in machines]))


def rbf_svm_decision(model: RbfSvmModel, features) -> np.ndarray:
    """Decision values, shape (n, n_machines)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.support_vectors.shape[1]:
        raise DimensionMismatch(f"features have width {x.shape[-1]}, "
                                f"model {model.support_vectors.shape[1]}")
    return rbf_kernel(x, model.support_vectors, model.gamma) @ model.dual_coef.T + model.bias


def rbf_svm_predict(model: RbfSvmModel, features) -> np.ndarray:
    """Label of the machine with the largest decision value; ties to the lower id."""
    return model.classes[np.argmax(rbf_svm_decision(model, features), axis=1)]
