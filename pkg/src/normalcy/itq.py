"""Iterative quantization (ITQ) binary hashing.

Data are centred, projected on their top-k principal directions and then
rotated by an orthogonal matrix chosen to minimise the quantization loss
``||B - V R||_F^2`` where ``B = sign(V R)``. The rotation is found by
alternating the sign step with an orthogonal Procrustes step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import FORMAT_VERSION
from .errors import ConfigError, DataError, RankDeficientError, ValidationError

MAX_TRAIN_VECTORS = 50_000


@dataclass
class ItqModel:
    mean: np.ndarray  # (d,)
    projection: np.ndarray  # (d, k), orthonormal columns
    rotation: np.ndarray  # (k, k), orthogonal
    loss_history: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.rotation.shape[0]

    @property
    def dim(self) -> int:
        return len(self.mean)

    def response(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.dim:
            raise ValidationError(f"expected dimension {self.dim}, got {X.shape[-1]}")
        return (X - self.mean) @ self.projection @ self.rotation

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "kind": "itq",
                "mean": self.mean.tolist(), "projection": self.projection.tolist(),
                "rotation": self.rotation.tolist(), "loss_history": list(self.loss_history)}

    @classmethod
    def from_dict(cls, d: dict) -> "ItqModel":
        if d.get("kind") != "itq" or d.get("format_version") != FORMAT_VERSION:
            raise DataError(f"not a version-{FORMAT_VERSION} ITQ model")
        return cls(np.array(d["mean"], dtype=np.float64),
                   np.array(d["projection"], dtype=np.float64),
                   np.array(d["rotation"], dtype=np.float64),
                   list(d.get("loss_history", [])))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"


def principal_directions(X: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k eigenvectors of the covariance, largest-magnitude entry made positive."""
    cov = np.cov(X, rowvar=False, bias=True).reshape(X.shape[1], X.shape[1])
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="stable")[::-1]
    vals, vecs = vals[order], vecs[:, order]
    tol = max(vals[0], 0.0) * X.shape[1] * np.finfo(float).eps * 10
    rank = int(np.sum(vals > tol))
    if rank < k:
        raise RankDeficientError(
            f"data has only {rank} non-zero principal values; at most k={rank} bits achievable",
            achievable=rank)
    P = vecs[:, :k]
    pivot = np.argmax(np.abs(P), axis=0)
    P = P * np.sign(P[pivot, np.arange(k)])
    return P, vals[:k]


def quantization_loss(V: np.ndarray, R: np.ndarray) -> float:
    VR = V @ R
    B = np.where(VR > 0, 1.0, -1.0)
    return float(np.sum((B - VR) ** 2))


def procrustes(B: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Orthogonal R minimising ||B - V R||_F, from the SVD of B^T V."""
    U, _, Wt = np.linalg.svd(B.T @ V)
    return Wt.T @ U.T


def random_rotation(k: int, rng: np.random.Generator) -> np.ndarray:
    Q, Rm = np.linalg.qr(rng.standard_normal((k, k)))
    return Q * np.sign(np.diag(Rm))


def fit(X, k: int, iters: int = 50, seed: int = 0, init: str = "random",
        max_vectors: int = MAX_TRAIN_VECTORS) -> ItqModel:
    """Learn a k-bit ITQ hash.

    ``loss_history[0]`` is the loss of the initial rotation and entry ``i``
    the loss after round ``i``; the sequence is non-increasing. ``init`` is
    ``"random"`` (seeded orthogonal matrix) or ``"identity"``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"X must be 2-D, got {X.shape}")
    n, d = X.shape
    if not 1 <= k <= d:
        raise ConfigError(f"need 1 <= k <= d={d}, got k={k}")
    if n <= k:
        raise ValidationError(f"need more samples than bits (n={n}, k={k})")
    if not np.all(np.isfinite(X)):
        raise ValidationError("non-finite training features")
    rng = np.random.default_rng(seed)
    if n > max_vectors:
        X = X[np.sort(rng.choice(n, max_vectors, replace=False))]

    mean = X.mean(0)
    P, _ = principal_directions(X - mean, k)
    V = (X - mean) @ P
    if init == "identity":
        R = np.eye(k)
    elif init == "random":
        R = random_rotation(k, rng)
    else:
        raise ConfigError(f"unknown init {init!r}")

    history = [quantization_loss(V, R)]
    for _ in range(iters):
        B = np.where(V @ R > 0, 1.0, -1.0)
        R = procrustes(B, V)
        history.append(quantization_loss(V, R))
    return ItqModel(mean, P, R, history)


def encode(model: ItqModel, x) -> np.ndarray:
    """Bits of ``x`` (shape (..., d)) as booleans of shape (..., k); strict > 0."""
    return model.response(x) > 0


def codes_to_int(bits: np.ndarray) -> np.ndarray:
    """Pack boolean codes (..., k) into integers, first bit most significant."""
    bits = np.asarray(bits, dtype=np.int64)
    k = bits.shape[-1]
    return bits @ (1 << np.arange(k - 1, -1, -1, dtype=np.int64))


def int_to_codes(values, k: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    return ((values[..., None] >> np.arange(k - 1, -1, -1)) & 1).astype(bool)


def format_code_grid(codes: np.ndarray, k: int) -> str:
    """One text line for a (rows, cols) grid of integer codes: hex cells, rows split by '|'."""
    width = max(1, (k + 3) // 4)
    return "|".join(" ".join(f"{int(c):0{width}x}" for c in row) for row in codes)


def parse_code_grid(line: str) -> np.ndarray:
    rows = [r.split() for r in line.strip().split("|")]
    if len({len(r) for r in rows}) != 1:
        raise DataError(f"ragged code grid line: {line!r}")
    try:
        return np.array([[int(c, 16) for c in r] for r in rows], dtype=np.int64)
    except ValueError:
        raise DataError(f"bad hex code in line: {line!r}") from None
