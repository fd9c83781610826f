"""One-class SVM (nu formulation) trained by sequential pairwise optimisation.

The dual solved here is::

    min_a  1/2 a^T K a   s.t.  0 <= a_i <= 1/(nu n),  sum_i a_i = 1

and the decision function is ``f(x) = sum_i a_i k(x_i, x) - rho``: positive
inside the learned support (normal), negative outside.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import FORMAT_VERSION
from .errors import ConfigError, DataError, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OcSvmConfig:
    nu: float = 0.1
    kernel: str = "rbf"
    gamma: float | None = None  # None -> 1 / dim
    tolerance: float = 1e-8
    max_iter: int = 1_000_000

    def __post_init__(self):
        if not 0 < self.nu <= 1:
            raise ConfigError(f"nu must lie in (0, 1], got {self.nu}")
        if self.kernel not in ("linear", "rbf"):
            raise ConfigError(f"kernel must be 'linear' or 'rbf', got {self.kernel!r}")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if not self.tolerance > 0:
            raise ConfigError("tolerance must be positive")


def kernel_matrix(A: np.ndarray, B: np.ndarray, kernel: str, gamma: float) -> np.ndarray:
    if kernel == "linear":
        return A @ B.T
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class OcSvmModel:
    support_vectors: np.ndarray  # standardized coordinates
    coef: np.ndarray
    rho: float
    kernel: str
    gamma: float
    mean: np.ndarray
    scale: np.ndarray
    nu: float
    n_train: int
    n_iter: int = 0

    @property
    def dim(self) -> int:
        return len(self.mean)

    def _standardize(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise ValidationError(f"expected dimension {self.dim}, got {X.shape[1]}")
        return (X - self.mean) / self.scale

    def decision_function(self, X) -> np.ndarray:
        Z = self._standardize(X)
        return kernel_matrix(Z, self.support_vectors, self.kernel, self.gamma) @ self.coef - self.rho

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "ocsvm",
            "kernel": self.kernel,
            "gamma": self.gamma,
            "nu": self.nu,
            "rho": self.rho,
            "n_train": self.n_train,
            "n_iter": self.n_iter,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "coef": self.coef.tolist(),
            "support_vectors": self.support_vectors.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OcSvmModel":
        if d.get("kind") != "ocsvm" or d.get("format_version") != FORMAT_VERSION:
            raise DataError(f"not a version-{FORMAT_VERSION} one-class SVM model")
        dim = len(d["mean"])
        return cls(np.array(d["support_vectors"], dtype=np.float64).reshape(-1, dim),
                   np.array(d["coef"], dtype=np.float64), float(d["rho"]), d["kernel"],
                   float(d["gamma"]), np.array(d["mean"]), np.array(d["scale"]),
                   float(d["nu"]), int(d["n_train"]), int(d.get("n_iter", 0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "OcSvmModel":
        return cls.from_dict(json.loads(text))


def solve_dual(K: np.ndarray, nu: float, tol: float = 1e-8, max_iter: int = 1_000_000):
    """Maximal-violating-pair SMO on the nu one-class dual.

    Returns ``(alpha, rho, n_iter)``.
    """
    n = len(K)
    C = 1.0 / (nu * n)
    alpha = np.zeros(n)
    n_full = min(int(np.floor(nu * n + 1e-12)), n)
    alpha[:n_full] = C
    if n_full < n:
        alpha[n_full] = 1.0 - n_full * C
    G = K @ alpha
    diag = np.diag(K)

    it = 0
    while it < max_iter:
        up = alpha < C
        low = alpha > 0
        Gu = np.where(up, G, np.inf)
        Gl = np.where(low, G, -np.inf)
        i = int(np.argmin(Gu))
        j = int(np.argmax(Gl))
        if Gl[j] - Gu[i] < tol:
            break
        curv = max(diag[i] + diag[j] - 2.0 * K[i, j], 1e-12)
        t = (G[j] - G[i]) / curv
        room_i, room_j = C - alpha[i], alpha[j]
        if t >= room_i or t >= room_j:
            t = min(room_i, room_j)
            alpha[i] = C if t == room_i else alpha[i] + t
            alpha[j] = 0.0 if t == room_j else alpha[j] - t
        else:
            alpha[i] += t
            alpha[j] -= t
        G += t * (K[:, i] - K[:, j])
        it += 1
    else:
        warnings.warn(f"SMO stopped at max_iter={max_iter} before reaching tolerance",
                      RuntimeWarning, stacklevel=2)

    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(G[free].mean())
    else:
        # rho brackets: bounded points have G <= rho, zero points have G >= rho
        lo = G[alpha >= C].max() if (alpha >= C).any() else G.min()
        hi = G[alpha <= 0].min() if (alpha <= 0).any() else G.max()
        rho = float(0.5 * (lo + hi))
    return alpha, rho, it


def train(X, cfg: OcSvmConfig = OcSvmConfig()) -> OcSvmModel:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"training data must be 2-D, got shape {X.shape}")
    if len(X) < 2:
        raise ValidationError("need at least 2 training vectors")
    if not np.all(np.isfinite(X)):
        raise ValidationError("non-finite training features")
    mean = X.mean(0)
    scale = X.std(0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    gamma = cfg.gamma if cfg.gamma is not None else 1.0 / X.shape[1]
    K = kernel_matrix(Z, Z, cfg.kernel, gamma)
    alpha, rho, it = solve_dual(K, cfg.nu, cfg.tolerance, cfg.max_iter)
    sv = alpha > 0
    log.debug("ocsvm: %d iterations, %d/%d support vectors", it, sv.sum(), len(X))
    return OcSvmModel(Z[sv], alpha[sv], rho, cfg.kernel, gamma, mean, scale, cfg.nu, len(X), it)


def score(model: OcSvmModel, x) -> np.ndarray | float:
    """Signed decision value(s); larger means more normal."""
    out = model.decision_function(x)
    return float(out[0]) if np.ndim(x) == 1 else out


def classify(model: OcSvmModel, x):
    s = np.atleast_1d(model.decision_function(x))
    labels = np.where(s >= 0, "normal", "abnormal")
    return str(labels[0]) if np.ndim(x) == 1 else labels
