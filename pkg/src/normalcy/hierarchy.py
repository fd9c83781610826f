"""Incremental hierarchy of predictive models.

A base predictor is trained on a seed subset of a corpus of transition
samples ``(x_k, x_k+1)``. The whole corpus is scored under the current
hierarchy (per sample, the level with the lowest innovation wins); joint
(state, innovation) features are clustered, and a cluster whose mean
innovation reaches the threshold ``theta`` seeds a new level. The loop
repeats until no cluster qualifies or the level cap is hit.

At test time a sample is abnormal only when no level claims it (it falls
outside every level's superstate radii) and its innovation exceeds the
calibrated threshold.
"""

from __future__ import annotations

import json
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import FORMAT_VERSION
from .errors import ConfigError, DataError, ValidationError
from .swdbn import SomConfig, grid_neighbors, pairwise_sq, som_train, validity_radius


class PredictorInterface(ABC):
    """A one-step predictor whose residuals define innovations."""

    kind: str = "abstract"

    @abstractmethod
    def train(self, current: np.ndarray, following: np.ndarray) -> "PredictorInterface":
        """Fit on paired samples; returns self."""

    @abstractmethod
    def predict(self, current: np.ndarray) -> np.ndarray:
        """Predicted following sample for each row of ``current``."""

    def innovate(self, following: np.ndarray, prediction: np.ndarray) -> np.ndarray:
        """Component-wise absolute residual, shape (n, dim), non-negative."""
        return np.abs(np.asarray(following, dtype=np.float64) - prediction)

    @abstractmethod
    def to_dict(self) -> dict:
        ...


class LinearPredictor(PredictorInterface):
    """Ridge-regularised affine map ``x_k+1 ~ W^T [x_k, 1]``."""

    kind = "linear"

    def __init__(self, ridge: float = 1e-6, coef: np.ndarray | None = None):
        if ridge < 0:
            raise ConfigError("ridge must be non-negative")
        self.ridge = ridge
        self.coef = coef

    def train(self, current, following):
        X = np.asarray(current, dtype=np.float64)
        Y = np.asarray(following, dtype=np.float64)
        if len(X) == 0 or len(X) != len(Y):
            raise ValidationError(f"need paired non-empty samples, got {len(X)} and {len(Y)}")
        Xa = np.hstack([X, np.ones((len(X), 1))])
        G = Xa.T @ Xa + self.ridge * np.eye(Xa.shape[1])
        self.coef = np.linalg.solve(G, Xa.T @ Y)
        return self

    def predict(self, current):
        if self.coef is None:
            raise ValidationError("predictor is untrained")
        X = np.atleast_2d(np.asarray(current, dtype=np.float64))
        return X @ self.coef[:-1] + self.coef[-1]

    def to_dict(self):
        return {"kind": self.kind, "ridge": self.ridge,
                "coef": None if self.coef is None else self.coef.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearPredictor":
        return cls(float(d["ridge"]), None if d["coef"] is None else np.array(d["coef"]))


PREDICTORS: dict[str, type] = {"linear": LinearPredictor}


def predictor_from_dict(d: dict) -> PredictorInterface:
    try:
        return PREDICTORS[d["kind"]].from_dict(d)
    except KeyError:
        raise DataError(f"unknown predictor kind {d.get('kind')!r}") from None


def mean_innovation(innov: np.ndarray) -> np.ndarray:
    """Scalar innovation per sample: the mean of its components."""
    return np.asarray(innov, dtype=np.float64).mean(axis=-1)


@dataclass
class LevelSuperstates:
    """SOM over a level's joint (state, scaled innovation) features."""

    mean: np.ndarray
    scale: np.ndarray
    weights: np.ndarray  # (M, dim+1)
    radius: np.ndarray  # (M,)

    def features(self, state: np.ndarray, y: np.ndarray, theta: float) -> np.ndarray:
        return joint_features(state, y, theta, self.mean, self.scale)

    def claims(self, feats: np.ndarray) -> np.ndarray:
        sq = pairwise_sq(feats, self.weights, np.ones(feats.shape[1]))
        j = np.argmin(sq, axis=1)
        return np.sqrt(sq[np.arange(len(feats)), j]) <= self.radius[j]

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "weights": self.weights.tolist(), "radius": self.radius.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"]), np.array(d["scale"]), np.array(d["weights"]),
                   np.array(d["radius"]))


def joint_features(state, y, theta, mean, scale) -> np.ndarray:
    """Standardised state next to the scalar innovation in units of theta."""
    state = np.atleast_2d(np.asarray(state, dtype=np.float64))
    return np.hstack([(state - mean) / scale, np.asarray(y, dtype=np.float64).reshape(-1, 1) / theta])


def _standardizer(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(0)
    scale = X.std(0)
    scale[scale == 0] = 1.0
    return mean, scale


def fit_superstates(state, y, theta, som_cfg: SomConfig) -> LevelSuperstates:
    """Cluster a level's own training features.

    A neuron's radius is the larger of the 3-sigma rule over its grid
    neighbours and the farthest of its members, so every training sample is
    claimed by its own level.
    """
    mean, scale = _standardizer(np.atleast_2d(state))
    feats = joint_features(state, y, theta, mean, scale)
    som = som_train(feats, som_cfg, diag=np.ones(feats.shape[1]))
    dist = np.sqrt(np.maximum(pairwise_sq(feats, som.weights, np.ones(feats.shape[1])), 0.0))
    own = dist[np.arange(len(feats)), som.assignments]
    radius = np.zeros(len(som.weights))
    for j in range(len(som.weights)):
        nb = grid_neighbors(som.rows, som.cols, j)
        adj = np.sqrt(((som.weights[nb] - som.weights[j]) ** 2).sum(1)) if nb else np.array([])
        r = validity_radius(adj) if nb else 0.0
        members = own[som.assignments == j]
        radius[j] = max(r, members.max() if len(members) else 0.0)
    return LevelSuperstates(mean, scale, som.weights, radius)


@dataclass(frozen=True)
class HierarchyConfig:
    theta: float | None = None  # None -> percentile of base innovations on the seed subset
    theta_percentile: float = 90.0
    y_th_percentile: float = 99.0
    max_levels: int = 5
    merge_spawns: bool = True
    cluster_rows: int = 3
    cluster_cols: int = 3
    level_rows: int = 3
    level_cols: int = 3
    ridge: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.max_levels < 1:
            raise ConfigError("max_levels must be >= 1")
        if self.theta is not None and not self.theta > 0:
            raise ConfigError("theta must be positive")

    def cluster_som(self) -> SomConfig:
        return SomConfig(self.cluster_rows, self.cluster_cols, epochs=20, seed=self.seed)

    def level_som(self) -> SomConfig:
        return SomConfig(self.level_rows, self.level_cols, epochs=20, seed=self.seed)


@dataclass
class HierarchyModel:
    levels: list  # PredictorInterface per level
    superstates: list  # LevelSuperstates per level
    subsets: list  # corpus indices each level was trained on
    theta: float
    y_th: float
    max_levels: int
    history: list = field(default_factory=list)  # per pass: cluster means

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def level_innovations(self, current, following) -> np.ndarray:
        """Scalar innovation of every sample under every level: (n, n_levels)."""
        return np.column_stack([mean_innovation(p.innovate(following, p.predict(current)))
                                for p in self.levels])

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "kind": "hierarchy", "theta": self.theta,
                "y_th": self.y_th, "max_levels": self.max_levels,
                "levels": [{"predictor": p.to_dict(), "superstates": s.to_dict(),
                            "subset": [int(i) for i in idx]}
                           for p, s, idx in zip(self.levels, self.superstates, self.subsets)]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "HierarchyModel":
        if d.get("kind") != "hierarchy" or d.get("format_version") != FORMAT_VERSION:
            raise DataError(f"not a version-{FORMAT_VERSION} hierarchy model")
        lv = d["levels"]
        return cls([predictor_from_dict(x["predictor"]) for x in lv],
                   [LevelSuperstates.from_dict(x["superstates"]) for x in lv],
                   [np.array(x["subset"], dtype=np.int64) for x in lv],
                   float(d["theta"]), float(d["y_th"]), int(d["max_levels"]))


def _cluster_means(current, y, theta, used, cfg: HierarchyConfig):
    """Clusters of the joint features with their mean innovation; unused members only spawn."""
    mean, scale = _standardizer(current)
    feats = joint_features(current, y, theta, mean, scale)
    som = som_train(feats, cfg.cluster_som(), diag=np.ones(feats.shape[1]))
    out = []
    for j in range(len(som.weights)):
        members = np.flatnonzero(som.assignments == j)
        if len(members):
            out.append((j, float(y[members].mean()), members[~used[members]]))
    return out


def build(current, following, seed_subset, cfg: HierarchyConfig = HierarchyConfig(),
          factory: Callable[[], PredictorInterface] | None = None) -> HierarchyModel:
    """Grow the hierarchy over a corpus of transition pairs.

    ``seed_subset`` holds corpus indices for the base level. With
    ``merge_spawns`` every qualifying cluster of a pass joins one new level;
    otherwise the first qualifying cluster spawns a level and the corpus is
    re-scored before looking for the next one.
    """
    X = np.asarray(current, dtype=np.float64)
    Y = np.asarray(following, dtype=np.float64)
    if X.shape != Y.shape or X.ndim != 2:
        raise ValidationError(f"corpus arrays must share a 2-D shape, got {X.shape} and {Y.shape}")
    idx0 = np.unique(np.asarray(seed_subset, dtype=np.int64))
    if idx0.size == 0:
        raise ValidationError("seed subset is empty")
    if idx0.min() < 0 or idx0.max() >= len(X):
        raise ValidationError("seed subset indexes outside the corpus")
    if factory is None:
        factory = lambda: LinearPredictor(cfg.ridge)  # noqa: E731

    base = factory().train(X[idx0], Y[idx0])
    y0 = mean_innovation(base.innovate(Y[idx0], base.predict(X[idx0])))
    theta = cfg.theta if cfg.theta is not None else float(np.percentile(y0, cfg.theta_percentile))
    if not theta > 0:
        raise ValidationError("seed subset innovations are all zero; give theta explicitly")

    levels, subsets = [base], [idx0]
    used = np.zeros(len(X), dtype=bool)
    used[idx0] = True
    history = []
    while len(levels) < cfg.max_levels:
        y = np.column_stack([mean_innovation(p.innovate(Y, p.predict(X)))
                             for p in levels]).min(axis=1)
        clusters = _cluster_means(X, y, theta, used, cfg)
        history.append([mu for _, mu, _ in clusters])
        spawn = []
        for j, mu, fresh in clusters:
            if mu < theta:
                continue
            if fresh.size == 0:
                warnings.warn(f"cluster {j} qualifies but all its samples already trained a level",
                              RuntimeWarning, stacklevel=2)
                continue
            spawn.append(fresh)
            if not cfg.merge_spawns:
                break
        if not spawn:
            break
        idx = np.unique(np.concatenate(spawn))
        levels.append(factory().train(X[idx], Y[idx]))
        subsets.append(idx)
        used[idx] = True

    inn = np.column_stack([mean_innovation(p.innovate(Y, p.predict(X))) for p in levels])
    y_th = float(np.percentile(inn.min(axis=1), cfg.y_th_percentile))
    sstates = [fit_superstates(X[s], inn[s, l], theta, cfg.level_som())
               for l, s in enumerate(subsets)]
    return HierarchyModel(levels, sstates, subsets, theta, y_th, cfg.max_levels, history)


@dataclass
class Evaluation:
    innovations: np.ndarray  # (n, n_levels)
    y: np.ndarray  # (n,) level-selecting innovation
    claimed: np.ndarray  # (n, n_levels)
    abnormal: np.ndarray  # (n,)
    level: np.ndarray  # (n,) level with the lowest innovation


def evaluate(model: HierarchyModel, current, following) -> Evaluation:
    """Score samples; abnormal iff no level claims them and the innovation exceeds ``y_th``."""
    X = np.atleast_2d(np.asarray(current, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(following, dtype=np.float64))
    inn = model.level_innovations(X, Y)
    claimed = np.column_stack([s.claims(s.features(X, inn[:, l], model.theta))
                               for l, s in enumerate(model.superstates)])
    y = inn.min(axis=1)
    abnormal = ~claimed.any(axis=1) & (y > model.y_th)
    return Evaluation(inn, y, claimed, abnormal, inn.argmin(axis=1))
