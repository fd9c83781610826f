"""Local Binary Tracklet (LBT) descriptors.

Every step of a tracklet is hashed into a one-hot polar histogram over
(orientation bin, magnitude bin); the L step patterns concatenated form the
tracklet code. Codes of tracklets whose middle frame is ``t`` are summed per
spatial patch, and the per-patch sums concatenated in row-major patch order
give the frame descriptor.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, ValidationError


class MotionStep(NamedTuple):
    o: float  # orientation in [-pi, pi]
    m: float  # magnitude, pixels/frame


@dataclass
class Tracklet:
    points: np.ndarray  # (L+1, 2)
    start_frame: int
    tracklet_id: int | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2 or len(self.points) < 2:
            raise ValidationError(f"tracklet points must be (L+1, 2), got {self.points.shape}")

    @property
    def L(self) -> int:
        return len(self.points) - 1

    @property
    def middle_index(self) -> int:
        return self.L // 2

    @property
    def middle_frame(self) -> int:
        return self.start_frame + self.middle_index


@dataclass(frozen=True)
class QuantizerConfig:
    b_o: int = 8
    b_m: int = 5
    m_max: float = 1.0

    def __post_init__(self):
        if self.b_o < 2 or self.b_m < 1:
            raise ConfigError(f"need b_o >= 2 and b_m >= 1, got {self.b_o}, {self.b_m}")
        if not self.m_max > 0:
            raise ConfigError(f"m_max must be positive, got {self.m_max}")

    @property
    def pattern_size(self) -> int:
        return self.b_o * self.b_m


@dataclass(frozen=True)
class Tessellation:
    """Grid of ``rows x cols`` patches over a ``width x height`` pixel frame."""

    rows: int = 4
    cols: int = 6
    width: float = 238.0
    height: float = 158.0

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def patch_of(self, x, y) -> np.ndarray:
        """Row-major patch index of each point, -1 when outside the frame."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        inside = (x >= 0) & (x < self.width) & (y >= 0) & (y < self.height)
        c = np.clip(np.floor(x * self.cols / self.width), 0, self.cols - 1).astype(np.int64)
        r = np.clip(np.floor(y * self.rows / self.height), 0, self.rows - 1).astype(np.int64)
        return np.where(inside, r * self.cols + c, -1)


@dataclass(frozen=True)
class FrameDescriptor:
    values: np.ndarray
    tessellation: Tessellation
    frame: int


# ---------------------------------------------------------------------------
# per-tracklet encoding


def motion_arrays(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orientation and magnitude of consecutive displacements along the last-but-one axis."""
    d = np.diff(np.asarray(points, dtype=np.float64), axis=-2)
    # two-argument angle keeps the quadrant; atan2(0, 0) == 0 covers the static case
    return np.arctan2(d[..., 1], d[..., 0]), np.hypot(d[..., 0], d[..., 1])


def derive_motion(tr: Tracklet) -> list[MotionStep]:
    o, m = motion_arrays(tr.points)
    return [MotionStep(float(a), float(b)) for a, b in zip(o, m)]


def pattern_index(o, m, cfg: QuantizerConfig) -> np.ndarray:
    """Index of the set bit: ``m_bin * b_o + o_bin``.

    Orientation bins split [-pi, pi] uniformly, left-closed, with pi folded
    into the last bin. Magnitudes at or above ``m_max`` land in the top bin.
    """
    o = np.asarray(o, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    o_bin = np.floor((o + np.pi) * (cfg.b_o / (2 * np.pi))).astype(np.int64)
    o_bin = np.clip(o_bin, 0, cfg.b_o - 1)
    m_bin = np.floor(m * (cfg.b_m / cfg.m_max)).astype(np.int64)
    m_bin = np.clip(m_bin, 0, cfg.b_m - 1)
    return m_bin * cfg.b_o + o_bin


def quantize(step: MotionStep, cfg: QuantizerConfig) -> np.ndarray:
    bits = np.zeros(cfg.pattern_size, dtype=np.uint8)
    bits[int(pattern_index(step.o, step.m, cfg))] = 1
    return bits


def code_positions(points: np.ndarray, cfg: QuantizerConfig) -> np.ndarray:
    """Positions of the L set bits of each tracklet code; ``points`` is (..., L+1, 2)."""
    o, m = motion_arrays(points)
    L = o.shape[-1]
    return pattern_index(o, m, cfg) + np.arange(L) * cfg.pattern_size


def tracklet_code(tr: Tracklet, cfg: QuantizerConfig) -> np.ndarray:
    code = np.zeros(cfg.pattern_size * tr.L, dtype=np.uint8)
    code[code_positions(tr.points, cfg)] = 1
    return code


def fit_magnitude_cap(tracklets: Iterable[Tracklet], q: float = 95.0) -> float:
    """Data-driven ``m_max``: the q-th percentile of all step magnitudes."""
    mags = [motion_arrays(t.points)[1] for t in tracklets]
    if not mags:
        raise ValidationError("no tracklets to fit a magnitude cap on")
    cap = float(np.percentile(np.concatenate(mags), q))
    return cap if cap > 0 else 1.0


# ---------------------------------------------------------------------------
# aggregation


def passes(tr: Tracklet, s: int, tess: Tessellation, membership: str = "middle") -> bool:
    """Whether the tracklet counts for patch ``s``.

    ``middle``: its middle point lies in the patch. ``any``: some point does.
    """
    if membership == "middle":
        p = tr.points[tr.middle_index]
        return int(tess.patch_of(p[0], p[1])) == s
    if membership == "any":
        return bool(np.any(tess.patch_of(tr.points[:, 0], tr.points[:, 1]) == s))
    raise ConfigError(f"unknown membership rule {membership!r}")


def aggregate(t: int, s: int, tracklets: Sequence[Tracklet], codes: Sequence[np.ndarray],
              tess: Tessellation, membership: str = "middle",
              size: int | None = None) -> np.ndarray:
    """Sum of the codes of tracklets centred on frame ``t`` that pass patch ``s``.

    ``size`` (the code length) is only needed when ``codes`` is empty.
    """
    if codes:
        size = len(codes[0])
    elif size is None:
        raise ValidationError("no codes given and no code size to build an empty histogram")
    hist = np.zeros(size, dtype=np.int64)
    for tr, code in zip(tracklets, codes):
        if tr.middle_frame == t and passes(tr, s, tess, membership):
            hist += code
    return hist


def frame_histograms(tracklets: Sequence[Tracklet], cfg: QuantizerConfig, tess: Tessellation,
                     n_frames: int, membership: str = "middle") -> np.ndarray:
    """All patch histograms at once: array of shape (n_frames, S, b_o*b_m*L)."""
    if not tracklets:
        raise ValidationError("no tracklets")
    L = tracklets[0].L
    if any(tr.L != L for tr in tracklets):
        raise ValidationError("all tracklets must share one length")
    pts = np.stack([tr.points for tr in tracklets])
    pos = code_positions(pts, cfg)  # (N, L)
    mid = np.array([tr.middle_frame for tr in tracklets])
    hist = np.zeros((n_frames, tess.size, cfg.pattern_size * L), dtype=np.int64)

    if membership == "middle":
        p = pts[:, L // 2]
        patch = tess.patch_of(p[:, 0], p[:, 1])
        keep = (patch >= 0) & (mid >= 0) & (mid < n_frames)
        n_idx = np.repeat(np.flatnonzero(keep), L)
        np.add.at(hist, (mid[n_idx], patch[n_idx], pos[keep].ravel()), 1)
    elif membership == "any":
        patches = tess.patch_of(pts[..., 0], pts[..., 1])  # (N, L+1)
        for n in range(len(tracklets)):
            if not 0 <= mid[n] < n_frames:
                continue
            for s in np.unique(patches[n][patches[n] >= 0]):
                np.add.at(hist[mid[n], s], pos[n], 1)
    else:
        raise ConfigError(f"unknown membership rule {membership!r}")
    return hist


def frame_descriptor(histograms: np.ndarray, tess: Tessellation, frame: int = 0) -> FrameDescriptor:
    histograms = np.asarray(histograms)
    if histograms.shape[0] != tess.size:
        raise ValidationError(f"expected {tess.size} patch histograms, got {histograms.shape[0]}")
    return FrameDescriptor(histograms.reshape(-1).copy(), tess, frame)


def video_descriptor(frames: Sequence[FrameDescriptor]) -> np.ndarray:
    if not frames:
        raise ValidationError("empty video")
    tess = frames[0].tessellation
    for f in frames:
        if f.tessellation != tess or f.values.shape != frames[0].values.shape:
            raise ValidationError(f"frame {f.frame} uses a different tessellation")
    return np.sum([f.values for f in frames], axis=0)


@dataclass(frozen=True)
class LbtConfig:
    L: int = 11
    b_o: int = 8
    b_m: int = 5
    m_max: float | None = None
    m_max_percentile: float = 95.0
    rows: int = 4
    cols: int = 6
    width: float = 238.0
    height: float = 158.0
    membership: str = "middle"

    def __post_init__(self):
        if self.L < 1 or self.rows < 1 or self.cols < 1:
            raise ConfigError(f"need L, rows and cols >= 1, got {self.L}, {self.rows}, {self.cols}")
        if not (self.width > 0 and self.height > 0):
            raise ConfigError("frame size must be positive")
        if self.membership not in ("middle", "any"):
            raise ConfigError(f"unknown membership rule {self.membership!r}")
        if self.m_max is not None and not self.m_max > 0:
            raise ConfigError(f"m_max must be positive, got {self.m_max}")
        QuantizerConfig(self.b_o, self.b_m)

    def tessellation(self) -> Tessellation:
        return Tessellation(self.rows, self.cols, self.width, self.height)

    def quantizer(self, tracklets=None) -> QuantizerConfig:
        m_max = self.m_max
        if m_max is None:
            if tracklets is None:
                raise ConfigError("m_max unset and no tracklets to estimate it from")
            m_max = fit_magnitude_cap(tracklets, self.m_max_percentile)
        return QuantizerConfig(self.b_o, self.b_m, m_max)


def extract(tracklets: Sequence[Tracklet], cfg: LbtConfig, n_frames: int | None = None):
    """Frame descriptors for a video.

    Returns ``(X, quantizer)`` where row t of X is the descriptor of frame t.
    """
    q = cfg.quantizer(tracklets)
    if n_frames is None:
        n_frames = max(tr.start_frame + tr.L for tr in tracklets) + 1
    hist = frame_histograms(tracklets, q, cfg.tessellation(), n_frames, cfg.membership)
    return hist.reshape(n_frames, -1), q


def sidecar_json(cfg: LbtConfig, q: QuantizerConfig, n_frames: int) -> str:
    d = asdict(cfg)
    d["m_max"] = q.m_max
    d["n_frames"] = n_frames
    d["descriptor_length"] = cfg.rows * cfg.cols * q.pattern_size * cfg.L
    return json.dumps(d, indent=2, sort_keys=True) + "\n"
