"""Soft-margin kernel SVM trained by sequential minimal optimisation.

The dual being maximised is

    W(alpha) = sum_i alpha_i - 1/2 sum_ij alpha_i alpha_j y_i y_j K(x_i, x_j)
    s.t. 0 <= alpha_i <= C,  sum_i alpha_i y_i = 0.

Working pairs are the maximal violating pair: the up-set sample with the
smallest error E = f(x) - y against the low-set sample with the largest,
which is the pair with the largest |E_i - E_j| among feasible directions.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LearnError
from .learn import Scaler

MODEL_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    gamma: float | None = None  # None: 1 / n_features at training time
    degree: int = 3
    coef0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "rbf", "polynomial"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")

    def resolved(self, n_features):
        if self.gamma is None and self.kind != "linear":
            return KernelSpec(self.kind, 1.0 / n_features, self.degree, self.coef0)
        return self

    def to_dict(self):
        return {"kind": self.kind, "gamma": self.gamma, "degree": self.degree, "coef0": self.coef0}


def kernel_matrix(spec: KernelSpec, a, b):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    spec = spec.resolved(a.shape[1])
    dot = a @ b.T
    if spec.kind == "linear":
        return dot
    if spec.kind == "rbf":
        sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * dot
        return np.exp(-spec.gamma * np.maximum(sq, 0.0))
    return (spec.gamma * dot + spec.coef0) ** spec.degree


def kernel_eval(spec: KernelSpec, u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(kernel_matrix(spec, u[None, :], v[None, :])[0, 0])


def dual_objective(alpha, y, kmat):
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ kmat @ ay)


@dataclass(frozen=True)
class SvmModel:
    support_vectors: np.ndarray
    dual_coefs: np.ndarray  # alpha_i * y_i
    bias: float
    kernel: KernelSpec
    c_param: float
    converged: bool = True
    iterations: int = 0
    scaler: Scaler | None = None
    feature_index: tuple | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def decision(self, x):
        """Signed margin for raw (already scaled) samples."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if len(self.support_vectors) == 0:
            return np.full(len(x), self.bias)
        return kernel_matrix(self.kernel, x, self.support_vectors) @ self.dual_coefs + self.bias

    def prepare(self, features):
        """Select and scale an unscaled 11-feature matrix for this model."""
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if self.feature_index is not None:
            x = x[:, list(self.feature_index)]
        if self.scaler is not None:
            x = self.scaler.apply(x)
        return x


def svm_decision(model: SvmModel, x):
    f = model.decision(x)
    return float(f[0]) if np.ndim(x) == 1 else f


def svm_predict(model: SvmModel, x):
    """+1 melanoma, -1 benign; a margin of exactly 0 counts as melanoma."""
    f = model.decision(x)
    out = np.where(f >= 0, 1, -1)
    return int(out[0]) if np.ndim(x) == 1 else out


class ConvergenceWarning(UserWarning):
    pass


def svm_train(x, y, c=1.0, kernel: KernelSpec = KernelSpec(), tol=1e-3, max_passes=100_000,
              seed=0, track_objective=False):
    """Train on scaled samples ``x`` with labels ``y`` in {+1, -1}.

    ``max_passes`` caps SMO pair updates; hitting it returns the current
    solution with ``converged=False`` and a ConvergenceWarning. With
    ``track_objective`` the dual value after every update is kept in
    ``model.meta["objective"]``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise LearnError("x must be (n, d) with one label per row")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise LearnError("labels must be +1 or -1")
    if len(np.unique(y)) < 2:
        raise LearnError("training data has a single class")
    if not c > 0:
        raise LearnError("C must be positive")
    kernel = kernel.resolved(x.shape[1])
    n = len(y)
    kmat = kernel_matrix(kernel, x, x)
    q = (y[:, None] * y[None, :]) * kmat
    alpha = np.zeros(n)
    # gradient of the minimisation form 1/2 a'Qa - e'a
    grad = -np.ones(n)
    tau = 1e-12
    history = [0.0] if track_objective else None
    # seeded tie-breaking: scan candidates in a fixed random order
    perm = np.random.default_rng(seed).permutation(n)
    yp = y[perm]
    converged = False
    it = 0
    while it < max_passes:
        a = alpha[perm]
        g = grad[perm]
        up = ((yp > 0) & (a < c)) | ((yp < 0) & (a > 0))
        low = ((yp > 0) & (a > 0)) | ((yp < 0) & (a < c))
        score = -yp * g
        if not up.any() or not low.any():
            converged = True
            break
        i = perm[np.argmax(np.where(up, score, -np.inf))]
        j = perm[np.argmin(np.where(low, score, np.inf))]
        gap = -y[i] * grad[i] + y[j] * grad[j]
        if gap <= tol:
            converged = True
            break
        it += 1
        eta = max(kmat[i, i] + kmat[j, j] - 2.0 * kmat[i, j], tau)
        # step along d_i = y_i, d_j = -y_j in alpha-space
        t = gap / eta
        t = min(t, (c - alpha[i]) if y[i] > 0 else alpha[i])
        t = min(t, alpha[j] if y[j] > 0 else (c - alpha[j]))
        old_i, old_j = alpha[i], alpha[j]
        alpha[i] = np.clip(old_i + y[i] * t, 0.0, c)
        alpha[j] = np.clip(old_j - y[j] * t, 0.0, c)
        grad += q[:, i] * (alpha[i] - old_i) + q[:, j] * (alpha[j] - old_j)
        if history is not None:
            history.append(dual_objective(alpha, y, kmat))
    if not converged:
        warnings.warn(f"SMO stopped after {max_passes} updates without meeting tol={tol}",
                      ConvergenceWarning, stacklevel=2)
    b = _bias(alpha, y, grad, c)
    keep = alpha > 1e-8
    meta = {"objective": history} if history is not None else {}
    meta["dual"] = dual_objective(alpha, y, kmat)
    meta["alpha"] = alpha
    return SvmModel(x[keep].copy(), (alpha * y)[keep].copy(), float(b), kernel, float(c),
                    converged, it, meta=meta)


def _bias(alpha, y, grad, c):
    """Average over free vectors; midpoint of the feasible range otherwise."""
    yg = y * grad
    free = (alpha > 1e-8 * c) & (alpha < c * (1 - 1e-8))
    if free.any():
        rho = yg[free].mean()
    else:
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        hi = (-yg[up]).max() if up.any() else 0.0
        lo = (-yg[low]).min() if low.any() else 0.0
        rho = -(hi + lo) / 2.0
    return -rho


def save_model(model: SvmModel, path, extra=None):
    """Versioned JSON record; Python float repr round-trips bit-exactly."""
    rec = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "kind": "dermabcd-svm",
        "kernel": model.kernel.to_dict(),
        "c_param": model.c_param,
        "bias": model.bias,
        "support_vectors": model.support_vectors.tolist(),
        "dual_coefs": model.dual_coefs.tolist(),
        "converged": model.converged,
        "iterations": model.iterations,
        "scaler": model.scaler.to_dict() if model.scaler is not None else None,
        "feature_index": list(model.feature_index) if model.feature_index is not None else None,
    }
    if extra:
        rec["extra"] = extra
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(rec, indent=1, sort_keys=True))
    return path


def load_model(path) -> SvmModel:
    path = Path(path)
    if not path.is_file():
        raise LearnError(f"no such model file: {path}")
    try:
        rec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise LearnError(f"{path}: not a model file ({exc})") from exc
    if not isinstance(rec, dict) or rec.get("kind") != "dermabcd-svm":
        raise LearnError(f"{path}: not a model file")
    if rec.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise LearnError(f"{path}: unsupported schema_version {rec.get('schema_version')}")
    k = rec["kernel"]
    sv = np.asarray(rec["support_vectors"], dtype=np.float64)
    if sv.size == 0:
        sv = sv.reshape(0, len(rec["scaler"]["means"]) if rec["scaler"] else 0)
    return SvmModel(
        sv,
        np.asarray(rec["dual_coefs"], dtype=np.float64),
        float(rec["bias"]),
        KernelSpec(k["kind"], k["gamma"], int(k["degree"]), float(k["coef0"])),
        float(rec["c_param"]),
        bool(rec["converged"]),
        int(rec["iterations"]),
        Scaler.from_dict(rec["scaler"]) if rec["scaler"] else None,
        tuple(rec["feature_index"]) if rec["feature_index"] is not None else None,
        {"extra": rec.get("extra", {})},
    )
