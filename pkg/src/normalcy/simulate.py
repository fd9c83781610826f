"""Synthetic perimeter-monitoring scenarios.

A point agent drives around a quadrilateral at constant speed. Two anomalies
can be injected: a U-turn (traversal direction reverses at a given sample and
stays reversed) and an emergency stop (the agent holds its position for a
number of samples, then carries on). Positions get i.i.d. Gaussian noise.

Also provides a small corpus generator of linear motion regimes used to
exercise the model hierarchy.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError

DEFAULT_CORNERS = ((0.0, 0.0), (10.0, 0.0), (10.0, 6.0), (0.0, 6.0))


@dataclass(frozen=True)
class UTurn:
    trigger_index: int
    type: str = field(default="u_turn", init=False)


@dataclass(frozen=True)
class Stop:
    start_index: int
    duration: int
    type: str = field(default="stop", init=False)


@dataclass(frozen=True)
class ScenarioSpec:
    corners: tuple = DEFAULT_CORNERS
    speed: float = 0.1
    noise_sigma: float = 0.01
    seed: int = 0
    laps: int = 1
    anomaly: UTurn | Stop | None = None

    def __post_init__(self):
        corners = tuple((float(x), float(y)) for x, y in self.corners)
        object.__setattr__(self, "corners", corners)
        if len(corners) != 4:
            raise ConfigError(f"need 4 corners, got {len(corners)}")
        if not self.speed > 0:
            raise ConfigError(f"speed must be positive, got {self.speed}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.laps < 1:
            raise ConfigError(f"laps must be >= 1, got {self.laps}")
        if abs(_shoelace(np.array(corners))) <= 1e-12:
            raise ConfigError("degenerate rectangle: corners enclose zero area")
        if isinstance(self.anomaly, Stop) and self.anomaly.duration < 1:
            raise ConfigError(f"stop duration must be >= 1, got {self.anomaly.duration}")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        known = {"corners", "speed", "noise_sigma", "seed", "laps", "anomaly"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        an = d.pop("anomaly", None)
        if an is not None:
            an = dict(an)
            kind = an.pop("type", None)
            try:
                if kind == "u_turn":
                    an = UTurn(int(an.pop("trigger_index")))
                elif kind == "stop":
                    an = Stop(int(an.pop("start_index")), int(an.pop("duration")))
                elif kind in (None, "none"):
                    an = None
                else:
                    raise ConfigError(f"unknown anomaly type {kind!r}")
            except KeyError as e:
                raise ConfigError(f"anomaly {kind!r} is missing field {e}") from None
        return cls(anomaly=an, **d)

    @classmethod
    def from_json(cls, path) -> "ScenarioSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["corners"] = [list(c) for c in self.corners]
        return d


def _shoelace(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


class Perimeter:
    """Closed polyline parametrised by arc length."""

    def __init__(self, corners):
        self.vertices = np.asarray(corners, dtype=np.float64)
        closed = np.vstack([self.vertices, self.vertices[:1]])
        self.seg_vec = np.diff(closed, axis=0)
        self.seg_len = np.hypot(self.seg_vec[:, 0], self.seg_vec[:, 1])
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.cum[-1])

    def at(self, s) -> np.ndarray:
        s = np.mod(np.asarray(s, dtype=np.float64), self.length)
        seg = np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.seg_len) - 1)
        frac = (s - self.cum[seg]) / self.seg_len[seg]
        return self.vertices[seg] + frac[..., None] * self.seg_vec[seg]


def arc_schedule(spec: ScenarioSpec) -> tuple[np.ndarray, np.ndarray]:
    """Arc-length position of every sample and its anomaly label."""
    per = Perimeter(spec.corners)
    n = int(np.floor(spec.laps * per.length / spec.speed + 1e-9)) + 1
    s = np.arange(n) * spec.speed
    labels = np.zeros(n, dtype=np.int8)
    an = spec.anomaly
    if isinstance(an, UTurn):
        k = an.trigger_index
        if not 1 <= k < n - 1:
            raise ConfigError(f"trigger_index {k} outside 1..{n - 2}")
        tail = np.arange(1, n - k) * spec.speed
        s = np.concatenate([s[:k + 1], s[k] - tail])
        labels[k:] = 1
    elif isinstance(an, Stop):
        k = an.start_index
        if not 1 <= k < n:
            raise ConfigError(f"start_index {k} outside 1..{n - 1}")
        s = np.concatenate([s[:k], np.full(an.duration, s[k - 1]), s[k:]])
        labels = np.zeros(len(s), dtype=np.int8)
        labels[k:k + an.duration] = 1
    return s, labels


def simulate(spec: ScenarioSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Generate one scenario run.

    Returns ``(t, xy, labels)``: sample indices, noisy positions of shape
    (n, 2) and per-sample anomaly labels.
    """
    s, labels = arc_schedule(spec)
    xy = Perimeter(spec.corners).at(s)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        xy = xy + rng.normal(0.0, spec.noise_sigma, size=xy.shape)
    return np.arange(len(xy)), xy, labels


# ---------------------------------------------------------------------------
# motion regimes for the hierarchy

REGIMES = {
    # name: (speed, turn rate per step in radians)
    "straight": (1.0, 0.0),
    "turn": (1.0, 0.35),
    "spin": (3.0, -1.2),
}


def regime_transition(state: np.ndarray, turn: float) -> np.ndarray:
    """Deterministic next generalized state: rotate velocity, then move."""
    c, s = np.cos(turn), np.sin(turn)
    v = state[..., 2:4] @ np.array([[c, s], [-s, c]])
    return np.concatenate([state[..., :2] + v, v], axis=-1)


def simulate_regimes(names: Sequence[str], n_per_regime: int, seed: int = 0,
                     noise_sigma: float = 0.01, extent: float = 10.0):
    """Sample transition pairs ``(x_k, x_k+1)`` from named motion regimes.

    Returns ``(current, following, labels)`` where labels index into ``names``.
    Samples are grouped by regime in the order given.
    """
    rng = np.random.default_rng(seed)
    cur, nxt, lab = [], [], []
    for i, name in enumerate(names):
        try:
            speed, turn = REGIMES[name]
        except KeyError:
            raise ConfigError(f"unknown regime {name!r}; known: {sorted(REGIMES)}") from None
        pos = rng.uniform(0.0, extent, size=(n_per_regime, 2))
        heading = rng.uniform(-np.pi, np.pi, size=n_per_regime)
        vel = speed * np.column_stack([np.cos(heading), np.sin(heading)])
        x = np.hstack([pos, vel])
        y = regime_transition(x, turn) + rng.normal(0.0, noise_sigma, size=x.shape)
        cur.append(x)
        nxt.append(y)
        lab.append(np.full(n_per_regime, i))
    return np.vstack(cur), np.vstack(nxt), np.concatenate(lab)
