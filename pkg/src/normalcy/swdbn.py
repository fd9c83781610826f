"""Shared-level learning of a switching dynamic Bayesian network.

Pipeline: an unmotivated Kalman filter (position persists, velocity is
annihilated) tracks the observed positions and yields velocities from its
innovations; the resulting generalized states ``[x, y, vx, vy]`` are
clustered by a batch SOM under a velocity-weighted distance; each neuron
becomes a superstate with mean, covariance, control velocity and validity
radius; dwell-time-dependent transition matrices are counted over the
superstate sequence.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import FORMAT_VERSION
from .errors import ConfigError, DataError, ValidationError

DUMMY = -1


# ---------------------------------------------------------------------------
# linear-Gaussian models


def _as_cov(v, n: int) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.ndim == 0:
        return float(a) * np.eye(n)
    if a.shape != (n, n):
        raise ConfigError(f"covariance must be scalar or {n}x{n}, got {a.shape}")
    return a


@dataclass(frozen=True)
class LinearModel:
    """Matrices of the unmotivated / motivated filters for a 2-D agent."""

    dt: float = 1.0
    q: float | list = 1e-4  # process noise: scalar (isotropic) or 4x4
    r: float | list = 1e-4  # observation noise: scalar (isotropic) or 2x2

    @property
    def A(self) -> np.ndarray:
        A = np.zeros((4, 4))
        A[:2, :2] = np.eye(2)
        return A

    @property
    def B(self) -> np.ndarray:
        return np.vstack([self.dt * np.eye(2), np.eye(2)])

    @property
    def H(self) -> np.ndarray:
        return np.hstack([np.eye(2), np.zeros((2, 2))])

    @property
    def Q(self) -> np.ndarray:
        return _as_cov(self.q, 4)

    @property
    def R(self) -> np.ndarray:
        return _as_cov(self.r, 2)


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def kf_predict(x, P, A, Q, B=None, u=None):
    """Prediction step; ``x`` is (..., n) and ``P`` (..., n, n)."""
    x = x @ A.T
    if B is not None and u is not None:
        x = x + np.asarray(u) @ B.T
    P = symmetrize(A @ P @ A.T + Q)
    return x, P


def kf_update(x, P, z, H, R):
    """Joseph-form update. Returns (x, P, innovation, innovation covariance)."""
    innov = z - x @ H.T
    S = symmetrize(H @ P @ H.T + R)
    # K = P H^T S^-1, computed as (S^-1 H P)^T since S and P are symmetric
    K = np.swapaxes(np.linalg.solve(S, H @ P), -1, -2)
    x = x + (K @ innov[..., None])[..., 0]
    IKH = np.eye(P.shape[-1]) - K @ H
    P = symmetrize(IKH @ P @ np.swapaxes(IKH, -1, -2) + K @ R @ np.swapaxes(K, -1, -2))
    return x, P, innov, S


@dataclass
class UkfResult:
    states: np.ndarray  # (N, 4) posterior means
    covariances: np.ndarray  # (N, 4, 4)
    innovations: np.ndarray  # (N, 2)
    velocities: np.ndarray  # (N, 2) innovation / dt

    def generalized_states(self) -> np.ndarray:
        """``[x, y, vx, vy]`` with filtered positions and innovation velocities."""
        return np.hstack([self.states[:, :2], self.velocities])


def ukf_filter(z, model: LinearModel, x0=None, P0=None) -> UkfResult:
    """Run the unmotivated filter over observed positions ``z`` of shape (N, 2).

    The first observation initialises the state; its innovation and
    velocity are reported as zero.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != 2 or len(z) < 2:
        raise ValidationError(f"need at least 2 observations of shape (N, 2), got {z.shape}")
    if not np.all(np.isfinite(z)):
        bad = int(np.flatnonzero(~np.isfinite(z).all(1))[0])
        raise ValidationError(f"non-finite observation at step {bad}")
    A, H, Q, R = model.A, model.H, model.Q, model.R
    n = len(z)
    x = np.concatenate([z[0], [0.0, 0.0]]) if x0 is None else np.asarray(x0, dtype=np.float64)
    if P0 is None:
        P = np.zeros((4, 4))
        P[:2, :2] = R
        P[2:, 2:] = Q[2:, 2:]
    else:
        P = np.asarray(P0, dtype=np.float64)
    states = np.empty((n, 4))
    covs = np.empty((n, 4, 4))
    innov = np.zeros((n, 2))
    states[0], covs[0] = x, P
    for k in range(1, n):
        x, P = kf_predict(x, P, A, Q)
        x, P, innov[k], _ = kf_update(x, P, z[k], H, R)
        states[k], covs[k] = x, P
    return UkfResult(states, covs, innov, innov / model.dt)


# ---------------------------------------------------------------------------
# weighted distance and SOM


@dataclass(frozen=True)
class SomWeights:
    alpha: float = 0.75  # velocity weight
    beta: float = 0.25  # position weight

    def __post_init__(self):
        if abs(self.alpha + self.beta - 1.0) > 1e-12 or not self.alpha > self.beta or self.beta < 0:
            raise ConfigError(f"need alpha + beta = 1 and alpha > beta >= 0, got {self}")

    @property
    def diag(self) -> np.ndarray:
        return np.array([self.beta, self.beta, self.alpha, self.alpha])


def weighted_distance(X, Y, w: SomWeights = SomWeights()) -> np.ndarray:
    """``sqrt((X-Y)^T D (X-Y))`` with ``D = diag(beta, beta, alpha, alpha)``; broadcasts."""
    d = np.asarray(X, dtype=np.float64) - np.asarray(Y, dtype=np.float64)
    return np.sqrt(np.sum(w.diag * d * d, axis=-1))


def pairwise_sq(X: np.ndarray, W: np.ndarray, diag: np.ndarray) -> np.ndarray:
    Xs = X * np.sqrt(diag)
    Ws = W * np.sqrt(diag)
    sq = (Xs * Xs).sum(1)[:, None] + (Ws * Ws).sum(1)[None, :] - 2.0 * Xs @ Ws.T
    return np.maximum(sq, 0.0)


def bmu(X, weights, w: SomWeights = SomWeights()) -> np.ndarray:
    """Best-matching unit of each row of X (lowest index on ties)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.argmin(pairwise_sq(X, weights, w.diag), axis=1)


@dataclass(frozen=True)
class SomConfig:
    rows: int = 10
    cols: int = 12
    epochs: int = 30  # ordering phase with a shrinking neighbourhood
    converge_epochs: int = 100  # hard-assignment phase, stops once stable
    sigma_start: float | None = None  # default: max(rows, cols) / 2
    sigma_end: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"SOM grid must be at least 1x1, got {self.rows}x{self.cols}")
        if self.epochs < 0 or self.converge_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")


@dataclass
class SomResult:
    weights: np.ndarray  # (rows*cols, dim)
    rows: int
    cols: int
    assignments: np.ndarray  # BMU of each training sample
    objective: list = field(default_factory=list)  # mean weighted distance per epoch

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=len(self.weights))


def grid_coords(rows: int, cols: int) -> np.ndarray:
    r, c = np.divmod(np.arange(rows * cols), cols)
    return np.column_stack([r, c]).astype(np.float64)


def som_train(states, cfg: SomConfig = SomConfig(), w: SomWeights = SomWeights(),
              diag=None) -> SomResult:
    """Batch SOM with the weighted distance used for BMU search.

    ``diag`` overrides the per-dimension distance weights; by default the
    velocity-favouring weights apply to 4-d generalized states and unit
    weights to anything else.

    Neighbourhood radius decays linearly from ``sigma_start`` to
    ``sigma_end`` over the ordering phase; then plain batch k-means updates
    (zero radius) run until assignments stop changing.
    """
    X = np.asarray(states, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValidationError(f"need a non-empty (n, dim) state array, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("non-finite states")
    m = cfg.rows * cfg.cols
    rng = np.random.default_rng(cfg.seed)
    idx = rng.choice(len(X), m, replace=len(X) < m)
    W = X[idx].copy()
    if diag is None:
        diag = w.diag if X.shape[1] == 4 else np.ones(X.shape[1])
    diag = np.asarray(diag, dtype=np.float64)
    g = grid_coords(cfg.rows, cfg.cols)
    g2 = ((g[:, None, :] - g[None, :, :]) ** 2).sum(-1)
    s0 = cfg.sigma_start if cfg.sigma_start is not None else max(cfg.rows, cfg.cols) / 2.0

    def assign(W):
        sq = pairwise_sq(X, W, diag)
        a = np.argmin(sq, axis=1)
        return a, float(np.sqrt(sq[np.arange(len(X)), a]).mean())

    def class_sums(a):
        sums = np.zeros_like(W)
        np.add.at(sums, a, X)
        return sums, np.bincount(a, minlength=m).astype(np.float64)

    objective = []  # after each batch epoch; the seeded initialisation is not an epoch
    a, _ = assign(W)
    for e in range(cfg.epochs):
        frac = e / max(cfg.epochs - 1, 1)
        sigma = s0 + (cfg.sigma_end - s0) * frac
        h = np.exp(-g2 / (2.0 * sigma * sigma))
        sums, counts = class_sums(a)
        den = h @ counts
        ok = den > 1e-300
        W[ok] = (h @ sums)[ok] / den[ok][:, None]
        a, obj = assign(W)
        objective.append(obj)
    for _ in range(cfg.converge_epochs):
        sums, counts = class_sums(a)
        ok = counts > 0
        W[ok] = sums[ok] / counts[ok][:, None]
        a_new, obj = assign(W)
        objective.append(obj)
        if np.array_equal(a_new, a):
            break
        a = a_new
    return SomResult(W, cfg.rows, cfg.cols, a, objective)


# ---------------------------------------------------------------------------
# superstate vocabulary


@dataclass
class Superstate:
    id: int
    xi: np.ndarray  # mean generalized state
    Q: np.ndarray  # 4x4 covariance of clustered states
    U: np.ndarray  # control velocity
    psi: float  # validity radius
    empty: bool
    count: int = 0


def validity_radius(distances) -> float:
    """Mean plus three standard deviations of a distance vector; inf when empty."""
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        return float("inf")
    return float(d.mean() + 3.0 * np.sqrt(d.var()))


def grid_neighbors(rows: int, cols: int, j: int) -> list[int]:
    r, c = divmod(j, cols)
    out = []
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        rr, cc = r + dr, c + dc
        if 0 <= rr < rows and 0 <= cc < cols:
            out.append(rr * cols + cc)
    return out


class Vocabulary:
    """Superstates plus array views used by the filters."""

    def __init__(self, superstates: Sequence[Superstate], weights: np.ndarray | None = None):
        if not superstates:
            raise ValidationError("empty vocabulary")
        self.superstates = list(superstates)
        self.xi = np.array([s.xi for s in superstates], dtype=np.float64)
        self.Q = np.array([s.Q for s in superstates], dtype=np.float64)
        self.U = np.array([s.U for s in superstates], dtype=np.float64)
        self.psi = np.array([s.psi for s in superstates], dtype=np.float64)
        self.empty = np.array([s.empty for s in superstates], dtype=bool)
        self.weights = self.xi.copy() if weights is None else np.asarray(weights, dtype=np.float64)

    def __len__(self):
        return len(self.superstates)

    def assign(self, states, w: SomWeights = SomWeights()) -> np.ndarray:
        return bmu(states, self.weights, w)

    def within_validity(self, states, ids, w: SomWeights = SomWeights()) -> np.ndarray:
        ids = np.asarray(ids)
        return weighted_distance(states, self.xi[ids], w) <= self.psi[ids]

    def to_list(self) -> list[dict]:
        def num(v):
            return v if np.isfinite(v) else None  # JSON has no infinity
        return [{"id": s.id, "xi": s.xi.tolist(), "Q": s.Q.tolist(), "U": s.U.tolist(),
                 "psi": num(s.psi), "empty": bool(s.empty), "count": int(s.count),
                 "weight": self.weights[i].tolist()}
                for i, s in enumerate(self.superstates)]

    @classmethod
    def from_list(cls, items: list[dict]) -> "Vocabulary":
        ss = [Superstate(int(d["id"]), np.array(d["xi"]), np.array(d["Q"]), np.array(d["U"]),
                         float("inf") if d["psi"] is None else float(d["psi"]),
                         bool(d["empty"]), int(d.get("count", 0))) for d in items]
        return cls(ss, np.array([d["weight"] for d in items]))


def build_vocabulary(states, assignments, som: SomResult, w: SomWeights = SomWeights(),
                     adjacency: str = "grid4") -> Vocabulary:
    """One superstate per neuron.

    ``adjacency`` picks the neurons whose distances define the validity
    radius: ``grid4`` (4-neighbourhood on the SOM grid) or ``all``.
    """
    X = np.asarray(states, dtype=np.float64)
    assignments = np.asarray(assignments)
    m = len(som.weights)
    out = []
    for j in range(m):
        members = X[assignments == j]
        if adjacency == "grid4":
            nb = grid_neighbors(som.rows, som.cols, j)
        elif adjacency == "all":
            nb = [i for i in range(m) if i != j]
        else:
            raise ConfigError(f"unknown adjacency {adjacency!r}")
        psi = validity_radius(weighted_distance(som.weights[nb], som.weights[j], w)) if nb \
            else float("inf")
        if len(members):
            xi = members.mean(0)
            Q = np.cov(members, rowvar=False, bias=True).reshape(4, 4)
            out.append(Superstate(j, xi, Q, xi[2:4].copy(), psi, False, len(members)))
        else:
            out.append(Superstate(j, som.weights[j].copy(), np.zeros((4, 4)), np.zeros(2),
                                  psi, True, 0))
    return Vocabulary(out, som.weights)


# ---------------------------------------------------------------------------
# transitions


@dataclass
class TransitionModel:
    """Row-stochastic matrices over ``n_states`` superstates plus a dummy (last index)."""

    matrices: np.ndarray  # (n_bins, n_states+1, n_states+1)
    dwell_edges: tuple  # upper bounds of all but the last dwell bin
    pooled: np.ndarray  # (n_states+1, n_states+1), all bins together

    @property
    def n_states(self) -> int:
        return self.matrices.shape[1] - 1

    @property
    def dummy(self) -> int:
        return self.n_states

    def dwell_bin(self, dwell) -> np.ndarray:
        return np.searchsorted(np.asarray(self.dwell_edges), dwell, side="left")

    def stationary(self, iters: int = 2000) -> np.ndarray:
        """Cesaro-averaged power iteration on the pooled chain over real states."""
        P = self.pooled[:-1, :-1].copy()
        rs = P.sum(1, keepdims=True)
        P = np.divide(P, rs, out=np.eye(len(P)), where=rs > 0)
        pi = np.full(len(P), 1.0 / len(P))
        acc = np.zeros_like(pi)
        for _ in range(iters):
            pi = pi @ P
            acc += pi
        acc /= acc.sum()
        return acc

    def to_dict(self) -> dict:
        return {"dwell_edges": list(self.dwell_edges), "matrices": self.matrices.tolist(),
                "pooled": self.pooled.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionModel":
        return cls(np.array(d["matrices"]), tuple(d["dwell_edges"]), np.array(d["pooled"]))


def dwell_times(seq: np.ndarray) -> np.ndarray:
    """Steps spent in the current state so far, counting the current one."""
    seq = np.asarray(seq)
    out = np.ones(len(seq), dtype=np.int64)
    for k in range(1, len(seq)):
        if seq[k] == seq[k - 1]:
            out[k] = out[k - 1] + 1
    return out


def _normalize_rows(counts: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    rs = counts.sum(-1, keepdims=True)
    return np.where(rs > 0, counts / np.where(rs > 0, rs, 1.0), fallback)


def learn_transitions(seq, n_states: int, dwell_edges: Sequence[int] = (5, 20),
                      smoothing: float = 1.0, valid=None) -> TransitionModel:
    """Count dwell-stratified transitions along a superstate sequence.

    The transition ``S_{k-1} -> S_k`` goes into the bin of the dwell time of
    ``S_{k-1}`` at step k-1. Rows get ``smoothing`` added on every successor
    ever observed from that state (any bin). Rows without data fall back to
    the pooled row, and states never left get a self-loop. The dummy row is
    uniform over ``valid`` states (default: those occurring in ``seq``).
    """
    seq = np.asarray(seq, dtype=np.int64)
    if len(seq) < 2:
        raise ValidationError("need a sequence of length >= 2")
    if seq.min() < 0 or seq.max() >= n_states:
        raise ValidationError(f"superstate ids outside 0..{n_states - 1}")
    edges = tuple(int(e) for e in dwell_edges)
    if list(edges) != sorted(edges):
        raise ConfigError(f"dwell edges must be increasing, got {edges}")
    nb = len(edges) + 1
    m = n_states + 1
    dwell = dwell_times(seq)
    bins = np.searchsorted(np.asarray(edges), dwell[:-1], side="left")
    counts = np.zeros((nb, m, m))
    np.add.at(counts, (bins, seq[:-1], seq[1:]), 1.0)
    pooled_counts = counts.sum(0)
    succ = (pooled_counts > 0).astype(np.float64)

    self_loop = np.eye(m)
    pooled = _normalize_rows(pooled_counts + smoothing * succ, self_loop)
    mats = _normalize_rows(counts + smoothing * succ[None], pooled[None])

    if valid is None:
        valid = np.zeros(n_states, dtype=bool)
        valid[np.unique(seq)] = True
    valid = np.asarray(valid, dtype=bool)
    dummy_row = np.zeros(m)
    dummy_row[:n_states][valid] = 1.0 / valid.sum()
    mats[:, -1, :] = dummy_row
    pooled[-1, :] = dummy_row
    return TransitionModel(mats, edges, pooled)


# ---------------------------------------------------------------------------
# the trained shared level


@dataclass(frozen=True)
class SwdbnConfig:
    dt: float = 1.0
    noise_sigma: float = 0.01  # observation noise std (R = sigma^2 I)
    q: float = 1e-4  # motivated-filter process noise
    ukf_q: float = 1e-2  # unmotivated-filter process noise
    alpha: float = 0.75
    beta: float = 0.25
    rows: int = 10
    cols: int = 12
    epochs: int = 30
    converge_epochs: int = 100
    dwell_edges: tuple = (5, 20)
    smoothing: float = 1.0
    adjacency: str = "grid4"
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.noise_sigma <= 0 or self.q <= 0 or self.ukf_q <= 0:
            raise ConfigError("noise parameters must be positive")
        SomWeights(self.alpha, self.beta)
        object.__setattr__(self, "dwell_edges", tuple(self.dwell_edges))

    @property
    def weights(self) -> SomWeights:
        return SomWeights(self.alpha, self.beta)

    def mkf_model(self) -> LinearModel:
        return LinearModel(self.dt, self.q, self.noise_sigma ** 2)

    def ukf_model(self) -> LinearModel:
        return LinearModel(self.dt, self.ukf_q, self.noise_sigma ** 2)

    def som(self) -> SomConfig:
        return SomConfig(self.rows, self.cols, self.epochs, self.converge_epochs, seed=self.seed)


@dataclass
class SharedLevelModel:
    config: SwdbnConfig
    vocabulary: Vocabulary
    transitions: TransitionModel
    train_states: np.ndarray | None = None
    train_assignments: np.ndarray | None = None

    @property
    def model(self) -> LinearModel:
        return self.config.mkf_model()

    @property
    def weights(self) -> SomWeights:
        return self.config.weights

    def calibration_fraction(self) -> float:
        """Share of training states within the validity radius of their own superstate."""
        inside = self.vocabulary.within_validity(self.train_states, self.train_assignments,
                                                 self.weights)
        return float(inside.mean())

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["dwell_edges"] = list(self.config.dwell_edges)
        return {"format_version": FORMAT_VERSION, "kind": "swdbn", "config": cfg,
                "vocabulary": self.vocabulary.to_list(),
                "transitions": self.transitions.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SharedLevelModel":
        if d.get("kind") != "swdbn" or d.get("format_version") != FORMAT_VERSION:
            raise DataError(f"not a version-{FORMAT_VERSION} shared-level model")
        return cls(SwdbnConfig(**d["config"]), Vocabulary.from_list(d["vocabulary"]),
                   TransitionModel.from_dict(d["transitions"]))

    @classmethod
    def from_json(cls, text: str) -> "SharedLevelModel":
        return cls.from_dict(json.loads(text))


def train_shared_level(z, cfg: SwdbnConfig = SwdbnConfig()) -> SharedLevelModel:
    """Learn vocabulary and transitions from one normal trajectory of positions."""
    ukf = ukf_filter(z, cfg.ukf_model())
    states = ukf.generalized_states()
    som = som_train(states, cfg.som(), cfg.weights)
    vocab = build_vocabulary(states, som.assignments, som, cfg.weights, cfg.adjacency)
    trans = learn_transitions(som.assignments, len(vocab), cfg.dwell_edges, cfg.smoothing,
                              valid=~vocab.empty)
    return SharedLevelModel(cfg, vocab, trans, states, som.assignments)
