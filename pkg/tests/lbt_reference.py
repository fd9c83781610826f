"""Independent loop-based LBT recount used as an oracle."""

import math

import numpy as np

from normalcy.lbt import Tracklet


def ref_bit(dx, dy, cfg):
    o = math.atan2(dy, dx)
    m = math.hypot(dx, dy)
    edges = [-math.pi + j * 2 * math.pi / cfg.b_o for j in range(cfg.b_o + 1)]
    o_bin = next((j for j in range(cfg.b_o) if edges[j] <= o < edges[j + 1]), cfg.b_o - 1)
    m_bin = min(int(m / (cfg.m_max / cfg.b_m)), cfg.b_m - 1)
    return m_bin * cfg.b_o + o_bin


def ref_code(points, cfg):
    P = cfg.b_o * cfg.b_m
    code = [0] * (P * (len(points) - 1))
    for l in range(1, len(points)):
        dx = points[l][0] - points[l - 1][0]
        dy = points[l][1] - points[l - 1][1]
        code[(l - 1) * P + ref_bit(dx, dy, cfg)] = 1
    return code


def ref_patch(x, y, tess):
    if not (0 <= x < tess.width and 0 <= y < tess.height):
        return -1
    for r in range(tess.rows):
        for c in range(tess.cols):
            if c * tess.width / tess.cols <= x < (c + 1) * tess.width / tess.cols and \
                    r * tess.height / tess.rows <= y < (r + 1) * tess.height / tess.rows:
                return r * tess.cols + c
    return -1


def brute_force(tracklets, cfg, tess, n_frames):
    size = cfg.b_o * cfg.b_m * tracklets[0].L
    out = np.zeros((n_frames, tess.size, size), dtype=np.int64)
    for t in range(n_frames):
        for s in range(tess.size):
            for tr in tracklets:
                mid = tr.L // 2
                if tr.start_frame + mid != t:
                    continue
                x, y = tr.points[mid]
                if ref_patch(x, y, tess) == s:
                    out[t, s] += np.array(ref_code(tr.points.tolist(), cfg))
    return out


def random_tracklets(rng, n, tess, L=11, n_frames=30):
    out = []
    for i in range(n):
        p0 = rng.uniform([0, 0], [tess.width, tess.height])
        steps = rng.normal(0, 3, size=(L, 2))
        pts = np.vstack([p0, p0 + np.cumsum(steps, axis=0)])
        out.append(Tracklet(pts, int(rng.integers(-L, n_frames)), i))
    return out
