"""Markov jump particle filter over learned superstates.

Each particle carries a discrete superstate, its dwell time and a Kalman
belief over the generalized state. A step samples the next superstate from
the dwell-stratified transition matrices, predicts with that superstate's
control velocity (falling back to a zero-control dummy when the prediction
leaves the superstate's validity region), updates on the observation and
reweights by the observation likelihood. The abnormality at each step is the
median over particles of the innovation norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericError, ValidationError
from .swdbn import (DUMMY, LinearModel, SharedLevelModel, SomWeights, TransitionModel,
                    Vocabulary, kf_predict, kf_update, symmetrize, weighted_distance)


@dataclass(frozen=True)
class MjpfConfig:
    n_particles: int = 200
    resample_threshold: float = 0.5  # fraction of N; 0 disables resampling
    seed: int = 0
    abnormality_norm: str = "mahalanobis"

    def __post_init__(self):
        if self.n_particles < 1:
            raise ConfigError(f"n_particles must be >= 1, got {self.n_particles}")
        if not 0 <= self.resample_threshold <= 1:
            raise ConfigError(f"resample_threshold must lie in [0, 1], got {self.resample_threshold}")
        if self.abnormality_norm not in ("euclidean", "mahalanobis"):
            raise ConfigError(f"unknown abnormality norm {self.abnormality_norm!r}")


@dataclass
class ParticleSet:
    superstates: np.ndarray  # (N,) ids, DUMMY for the dummy superstate
    dwell: np.ndarray  # (N,) steps spent in the current superstate
    means: np.ndarray  # (N, 4)
    covs: np.ndarray  # (N, 4, 4)
    weights: np.ndarray  # (N,), sums to 1

    def __len__(self):
        return len(self.weights)

    def posterior_mean(self) -> np.ndarray:
        return self.weights @ self.means

    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))

    def take(self, idx: np.ndarray) -> "ParticleSet":
        n = len(idx)
        return ParticleSet(self.superstates[idx].copy(), self.dwell[idx].copy(),
                           self.means[idx].copy(), self.covs[idx].copy(), np.full(n, 1.0 / n))


@dataclass
class StepResult:
    particles: ParticleSet
    innovations: np.ndarray  # (N, 2), before the update
    abnormality: float
    superstate: int  # MAP superstate, DUMMY if the dummy holds most weight
    resampled: bool


@dataclass
class AbnormalitySignal:
    values: np.ndarray  # (T,) abnormality per step
    superstates: np.ndarray  # (T,) MAP superstate per step
    means: np.ndarray  # (T, 4) posterior mean per step

    def __len__(self):
        return len(self.values)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn with one uniform offset and N evenly spaced pointers."""
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right")


def _sample_rows(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # one categorical draw per row of probabilities
    cum = np.cumsum(rows, axis=1)
    u = rng.random(len(rows)) * cum[:, -1]
    return np.minimum((cum <= u[:, None]).sum(1), rows.shape[1] - 1)


class Mjpf:
    """Filter state bound to one trained shared level."""

    def __init__(self, vocabulary: Vocabulary, transitions: TransitionModel, model: LinearModel,
                 cfg: MjpfConfig = MjpfConfig(), weights: SomWeights = SomWeights()):
        if len(vocabulary) == 0:
            raise ValidationError("empty vocabulary")
        if transitions.n_states != len(vocabulary):
            raise DataError(f"transitions cover {transitions.n_states} superstates, "
                            f"vocabulary has {len(vocabulary)}")
        self.vocab = vocabulary
        self.trans = transitions
        self.model = model
        self.cfg = cfg
        self.w = weights
        self.rng = np.random.default_rng(cfg.seed)
        self._A, self._B, self._H = model.A, model.B, model.H
        self._Q, self._R = model.Q, model.R
        self.particles: ParticleSet | None = None

    @classmethod
    def from_model(cls, sl: SharedLevelModel, cfg: MjpfConfig = MjpfConfig()) -> "Mjpf":
        return cls(sl.vocabulary, sl.transitions, sl.model, cfg, sl.weights)

    def initialize(self) -> ParticleSet:
        """Superstates drawn from the stationary distribution; beliefs centred on their means."""
        n = self.cfg.n_particles
        pi = self.trans.stationary()
        pi = np.where(self.vocab.empty, 0.0, pi)
        if pi.sum() <= 0:
            pi = (~self.vocab.empty).astype(float)
        if pi.sum() <= 0:
            pi = np.ones(len(self.vocab))
        s = _sample_rows(np.broadcast_to(pi / pi.sum(), (n, len(pi))), self.rng)
        covs = self.vocab.Q[s] + self._Q
        self.particles = ParticleSet(s.astype(np.int64), np.ones(n, dtype=np.int64),
                                     self.vocab.xi[s].copy(), symmetrize(covs), np.full(n, 1.0 / n))
        return self.particles

    # -- step pieces ---------------------------------------------------------

    def _predict_all(self, means: np.ndarray, ids: np.ndarray) -> np.ndarray:
        """Predicted mean of each particle under each candidate superstate: (N, len(ids), 4)."""
        base = means @ self._A.T
        return base[:, None, :] + (self.vocab.U[ids] @ self._B.T)[None]

    def _choose_superstates(self, p: ParticleSet) -> tuple[np.ndarray, np.ndarray]:
        """Next superstate and control velocity per particle."""
        n_states = len(self.vocab)
        dummy_idx = self.trans.dummy
        cur = np.where(p.superstates == DUMMY, dummy_idx, p.superstates)
        bins = self.trans.dwell_bin(p.dwell)
        rows = self.trans.matrices[bins, cur]
        nxt = _sample_rows(rows, self.rng)

        # particles from the dummy re-enter only through superstates that pass the validity test
        from_dummy = cur == dummy_idx
        if from_dummy.any():
            cand = np.arange(n_states)
            pred = self._predict_all(p.means[from_dummy], cand)
            ok = weighted_distance(pred, self.vocab.xi[cand][None], self.w) <= self.vocab.psi[None]
            ok &= ~self.vocab.empty[None]
            probs = rows[from_dummy, :n_states] * ok
            has = probs.sum(1) > 0
            pick = np.full(from_dummy.sum(), dummy_idx)
            if has.any():
                pick[has] = _sample_rows(probs[has], self.rng)
            nxt[from_dummy] = pick

        nxt = np.where(nxt == dummy_idx, DUMMY, nxt)
        real = nxt != DUMMY
        U = np.zeros((len(nxt), 2))
        U[real] = self.vocab.U[nxt[real]]
        # validity of the predicted state under the chosen superstate
        if real.any():
            ids = nxt[real]
            pred = p.means[real] @ self._A.T + U[real] @ self._B.T
            valid = (weighted_distance(pred, self.vocab.xi[ids], self.w) <= self.vocab.psi[ids]) \
                & ~self.vocab.empty[ids]
            lost = np.flatnonzero(real)[~valid]
            nxt[lost] = DUMMY
            U[lost] = 0.0
        return nxt, U

    def step(self, z) -> StepResult:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (2,) or not np.all(np.isfinite(z)):
            raise ValidationError(f"observation must be 2 finite values, got {z!r}")
        p = self.particles if self.particles is not None else self.initialize()

        nxt, U = self._choose_superstates(p)
        dwell = np.where(nxt == p.superstates, p.dwell + 1, 1)
        means, covs = kf_predict(p.means, p.covs, self._A, self._Q, self._B, U)
        means, covs, innov, S = kf_update(means, covs, z, self._H, self._R)

        sol = np.linalg.solve(S, innov[..., None])[..., 0]
        maha2 = np.einsum("ni,ni->n", innov, sol)
        logdet = np.linalg.slogdet(S)[1]
        loglik = -0.5 * (maha2 + logdet) - np.log(2 * np.pi)
        logw = np.log(np.maximum(p.weights, 1e-300)) + loglik
        if not np.all(np.isfinite(logw)):
            raise NumericError("non-finite particle log-weights")
        w = np.exp(logw - logw.max())
        w /= w.sum()

        if self.cfg.abnormality_norm == "mahalanobis":
            norms = np.sqrt(np.maximum(maha2, 0.0))
        else:
            norms = np.linalg.norm(innov, axis=1)
        y = float(np.median(norms))

        labels = np.where(nxt == DUMMY, len(self.vocab), nxt)
        mass = np.bincount(labels, weights=w, minlength=len(self.vocab) + 1)
        best = int(np.argmax(mass))
        map_state = DUMMY if best == len(self.vocab) else best

        new = ParticleSet(nxt.astype(np.int64), dwell.astype(np.int64), means, covs, w)
        resampled = False
        thr = self.cfg.resample_threshold
        if thr > 0 and new.ess() < thr * len(new):
            new = new.take(systematic_resample(new.weights, self.rng))
            resampled = True
        self.particles = new
        return StepResult(new, innov, y, map_state, resampled)


def mjpf_step(filt: Mjpf, z) -> StepResult:
    """One filter step; thin functional wrapper around :meth:`Mjpf.step`."""
    return filt.step(z)


def run(z, sl: SharedLevelModel, cfg: MjpfConfig = MjpfConfig()) -> AbnormalitySignal:
    """Stream the filter over an observation sequence of shape (T, 2)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != 2:
        raise ValidationError(f"observations must be (T, 2), got {z.shape}")
    filt = Mjpf.from_model(sl, cfg)
    filt.initialize()
    values = np.empty(len(z))
    states = np.empty(len(z), dtype=np.int64)
    means = np.empty((len(z), 4))
    for k, zk in enumerate(z):
        try:
            r = filt.step(zk)
        except (ValidationError, NumericError) as e:
            raise type(e)(f"step {k}: {e}") from e
        values[k] = r.abnormality
        states[k] = r.superstate
        means[k] = r.particles.posterior_mean()
    return AbnormalitySignal(values, states, means)
