"""One-class SVM with RBF kernel, trained on normal instances only.

Solves the nu-parameterized one-class dual

    min 0.5 * a' K a   s.t.  0 <= a_i <= 1/(nu*n),  sum a = 1

with SMO-style two-coordinate updates picking the maximal violating pair.
The decision function is g(x) = sum_i a_i k(sv_i, x) - rho; a point is an
anomaly when g(x) < 0, i.e. outside the learned support of normal data.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, TextIO, Union

import numpy as np

from .errors import ConvergenceError, InfeasibleNuError

MODEL_FORMAT = "ocsvm-model v1"


@dataclass(frozen=True)
class OcsvmParams:
    nu: float = 0.05
    gamma: float = 1.0 / 72.0
    tol: float = 1e-4
    max_iter: int = 1_000_000
    cache_rows: int = 256

    def __post_init__(self):
        if not 0.0 < self.nu <= 1.0:
            raise ValueError("nu must be in (0, 1]")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")


@dataclass
class OcsvmModel:
    """Trained model: only the support vectors (alpha > 0) are kept.

    Invariants: sum(alphas) == 1 and 0 < alpha_i <= 1/(nu*n) for the
    training size n the model came from.
    """

    support_vectors: np.ndarray
    alphas: np.ndarray
    rho: float
    gamma: float

    @property
    def n_support(self) -> int:
        return len(self.alphas)

    def decision(self, x: np.ndarray) -> Union[float, np.ndarray]:
        return decision(self, x)


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> float:
    """exp(-gamma * ||a - b||^2), in (0, 1]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.exp(-gamma * np.dot(d, d)))


def _kernel_block(X: np.ndarray, sq: np.ndarray, idx: np.ndarray, gamma: float) -> np.ndarray:
    """Kernel rows K[idx, :] against the whole training set."""
    d2 = sq[idx][:, None] + sq[None, :] - 2.0 * (X[idx] @ X.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


class _KernelCache:
    """Fixed-capacity LRU of kernel rows; correctness never depends on hits."""

    def __init__(self, X: np.ndarray, gamma: float, capacity: int):
        self._X = X
        self._sq = np.einsum("ij,ij->i", X, X)
        self._gamma = gamma
        self._capacity = max(capacity, 2)
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()

    def row(self, i: int) -> np.ndarray:
        cached = self._rows.get(i)
        if cached is not None:
            self._rows.move_to_end(i)
            return cached
        row = _kernel_block(self._X, self._sq, np.array([i]), self._gamma)[0]
        self._rows[i] = row
        if len(self._rows) > self._capacity:
            self._rows.popitem(last=False)
        return row


def train(normals: np.ndarray, params: OcsvmParams) -> OcsvmModel:
    """Fit the one-class boundary to normal-labeled feature vectors.

    Raises InfeasibleNuError when nu*n < 1 and ConvergenceError when the
    maximal violating pair still exceeds the tolerance after max_iter
    updates.
    """
    X = np.ascontiguousarray(normals, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("training data must be a non-empty (n, d) array")
    n = len(X)
    nu = params.nu
    if nu * n < 1.0:
        raise InfeasibleNuError(f"nu*n = {nu * n:.4f} < 1 with n={n}")
    C = 1.0 / (nu * n)

    alpha = np.zeros(n)
    k = int(nu * n)
    alpha[:k] = C
    if k < n:
        alpha[k] = 1.0 - k * C

    cache = _KernelCache(X, params.gamma, params.cache_rows)
    sq = cache._sq

    # grad = K @ alpha, built from the initially nonzero coordinates
    grad = np.zeros(n)
    nonzero = np.nonzero(alpha)[0]
    for lo in range(0, len(nonzero), 512):
        idx = nonzero[lo : lo + 512]
        grad += alpha[idx] @ _kernel_block(X, sq, idx, params.gamma)

    at_lb = alpha <= 0.0
    at_ub = alpha >= C

    violation = np.inf
    for _ in range(params.max_iter):
        up = ~at_ub
        down = ~at_lb
        gi = np.where(up, grad, np.inf)
        gj = np.where(down, grad, -np.inf)
        i = int(np.argmin(gi))
        j = int(np.argmax(gj))
        violation = gj[j] - gi[i]
        if violation <= params.tol:
            break

        row_i = cache.row(i)
        row_j = cache.row(j)
        eta = 2.0 - 2.0 * row_i[j]
        limit = min(C - alpha[i], alpha[j])
        if eta > 1e-12:
            delta = min((grad[j] - grad[i]) / eta, limit)
        else:
            delta = limit
        if delta <= 0.0:
            break  # numerically stuck; KKT check below decides

        new_i = alpha[i] + delta
        new_j = alpha[j] - delta
        # snap to the box so bound masks stay exact
        if new_i >= C:
            new_i = C
        if new_j <= 0.0:
            new_j = 0.0
        delta = new_i - alpha[i]
        alpha[i], alpha[j] = new_i, new_j
        at_ub[i] = new_i >= C
        at_lb[i] = False
        at_lb[j] = new_j <= 0.0
        at_ub[j] = False
        grad += delta * (row_i - row_j)
    else:
        raise ConvergenceError(
            f"no convergence after {params.max_iter} iterations "
            f"(KKT violation {violation:.3e} > tol {params.tol:.3e})",
            kkt_violation=float(violation),
        )
    if violation > params.tol:
        raise ConvergenceError(
            f"solver stalled (KKT violation {violation:.3e} > tol {params.tol:.3e})",
            kkt_violation=float(violation),
        )

    rho = _estimate_rho(grad, alpha, C)
    sv = alpha > 0.0
    model = OcsvmModel(
        support_vectors=X[sv].copy(),
        alphas=alpha[sv].copy(),
        rho=rho,
        gamma=params.gamma,
    )
    return model


def _estimate_rho(grad: np.ndarray, alpha: np.ndarray, C: float) -> float:
    free = (alpha > 0.0) & (alpha < C)
    if np.any(free):
        return float(grad[free].mean())
    lo = grad[alpha >= C].max() if np.any(alpha >= C) else None
    hi = grad[alpha <= 0.0].min() if np.any(alpha <= 0.0) else None
    if lo is not None and hi is not None:
        return float((lo + hi) / 2.0)
    return float(lo if lo is not None else hi)


def decision(model: OcsvmModel, x: np.ndarray) -> Union[float, np.ndarray]:
    """g(x) = sum_i alpha_i k(sv_i, x) - rho for one vector or an (m, d) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    d = model.support_vectors.shape[1]
    if X.shape[1] != d:
        raise ValueError(f"dimension mismatch: model expects {d}, got {X.shape[1]}")
    sv_sq = np.einsum("ij,ij->i", model.support_vectors, model.support_vectors)
    x_sq = np.einsum("ij,ij->i", X, X)
    d2 = x_sq[:, None] + sv_sq[None, :] - 2.0 * (X @ model.support_vectors.T)
    np.maximum(d2, 0.0, out=d2)
    g = np.exp(-model.gamma * d2) @ model.alphas - model.rho
    return float(g[0]) if single else g


def classify(model: OcsvmModel, x: np.ndarray) -> Union[int, np.ndarray]:
    """1 when the point is an anomaly (decision < 0), else 0. Boundary counts as normal."""
    g = decision(model, x)
    if isinstance(g, float):
        return 1 if g < 0.0 else 0
    return (g < 0.0).astype(np.int64)


def kkt_violation(model: OcsvmModel, X: np.ndarray, nu: float) -> float:
    """Max per-point KKT violation of the model's duals on its training set."""
    n = len(X)
    C = 1.0 / (nu * n)
    grad = decision(model, X) + model.rho
    # support vectors are exact copies of training rows; hand each dual
    # back to one matching row (duplicates consume entries in order)
    pool: dict[tuple, list[float]] = {}
    for sv, a in zip(model.support_vectors, model.alphas):
        pool.setdefault(tuple(sv), []).append(float(a))
    alpha = np.zeros(n)
    for i, row in enumerate(X):
        stack = pool.get(tuple(row))
        if stack:
            alpha[i] = stack.pop()
    viol = np.where(
        alpha <= 0.0,
        np.maximum(0.0, model.rho - grad),
        np.where(
            alpha >= C,
            np.maximum(0.0, grad - model.rho),
            np.abs(grad - model.rho),
        ),
    )
    return float(viol.max())


def save(model: OcsvmModel, out: TextIO) -> None:
    """Versioned flat text; floats use shortest round-trip form so decisions reload bit-exactly."""
    out.write(MODEL_FORMAT + "\n")
    out.write("# decision(x) = sum_i alpha[i]*exp(-gamma*||sv[i]-x||^2) - rho\n")
    out.write("# anomaly iff decision(x) < 0\n")
    out.write(f"gamma {model.gamma!r}\n")
    out.write(f"rho {model.rho!r}\n")
    out.write(f"dim {model.support_vectors.shape[1]}\n")
    out.write(f"support_vectors {model.n_support}\n")
    for a, sv in zip(model.alphas, model.support_vectors):
        out.write(repr(float(a)) + " " + " ".join(repr(float(v)) for v in sv) + "\n")


def load(source: Iterable[str]) -> OcsvmModel:
    lines = [ln.rstrip("\n") for ln in source]
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    if body[0] != MODEL_FORMAT:
        raise ValueError(f"unsupported model format: {body[0]!r}")
    header = {}
    for ln in body[1:5]:
        key, value = ln.split(" ", 1)
        header[key] = value
    n_sv = int(header["support_vectors"])
    dim = int(header["dim"])
    alphas = np.empty(n_sv)
    svs = np.empty((n_sv, dim))
    for i, ln in enumerate(body[5 : 5 + n_sv]):
        parts = ln.split(" ")
        alphas[i] = float(parts[0])
        svs[i] = [float(p) for p in parts[1:]]
    return OcsvmModel(
        support_vectors=svs,
        alphas=alphas,
        rho=float(header["rho"]),
        gamma=float(header["gamma"]),
    )
