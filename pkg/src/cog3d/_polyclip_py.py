"""Pure-Python convex polygon clipping kernels.

Mirror of the compiled extension ``cog3d._polyclip``; one of the two is
selected at import time by :mod:`cog3d.geometry`. Polygons are (n, 2)
float64 arrays with counterclockwise vertex order.
"""

import numpy as np

BACKEND = "python"

_EPS = 1e-12
_MERGE_EPS = 1e-9


def polygon_area(poly):
    """Unsigned area of a simple polygon via the shoelace formula."""
    p = np.asarray(poly, dtype=np.float64)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _dedup(verts):
    """Drop repeated and collinear vertices (within 1e-9)."""
    n = len(verts)
    if n < 3:
        return []
    out = []
    for i in range(n):
        prev = verts[i - 1]
        cur = verts[i]
        nxt = verts[(i + 1) % n]
        if abs(cur[0] - prev[0]) < _MERGE_EPS and abs(cur[1] - prev[1]) < _MERGE_EPS:
            continue
        cross = (cur[0] - prev[0]) * (nxt[1] - cur[1]) - (cur[1] - prev[1]) * (nxt[0] - cur[0])
        if abs(cross) < _MERGE_EPS:
            continue
        out.append(cur)
    return out if len(out) >= 3 else []


def clip_convex(subject, clip):
    """Sutherland-Hodgman intersection of two convex CCW polygons.

    Returns an (m, 2) array in CCW order; m = 0 for an empty intersection.
    """
    subject = np.asarray(subject, dtype=np.float64)
    clip = np.asarray(clip, dtype=np.float64)
    verts = [tuple(v) for v in subject]
    nclip = len(clip)
    for i in range(nclip):
        if not verts:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % nclip]
        ex, ey = bx - ax, by - ay
        out = []
        n = len(verts)
        for j in range(n):
            px, py = verts[j - 1]
            cx, cy = verts[j]
            dprev = ex * (py - ay) - ey * (px - ax)
            dcur = ex * (cy - ay) - ey * (cx - ax)
            if (dprev > _EPS and dcur < -_EPS) or (dprev < -_EPS and dcur > _EPS):
                t = dprev / (dprev - dcur)
                out.append((px + t * (cx - px), py + t * (cy - py)))
            if dcur >= -_EPS:
                out.append((cx, cy))
        verts = out
    verts = _dedup(verts)
    if not verts:
        return np.zeros((0, 2), dtype=np.float64)
    return np.array(verts, dtype=np.float64)


def _rect_corners(cx, cy, w, d, yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    hw, hd = 0.5 * w, 0.5 * d
    local = [(-hw, -hd), (hw, -hd), (hw, hd), (-hw, hd)]
    return np.array(
        [(cx + c * x - s * y, cy + s * x + c * y) for x, y in local], dtype=np.float64
    )


def rect_overlap_area(cx0, cy0, w0, d0, yaw0, cx1, cy1, w1, d1, yaw1):
    """Intersection area of two yaw-rotated rectangles in the plane."""
    p = _rect_corners(cx0, cy0, w0, d0, yaw0)
    q = _rect_corners(cx1, cy1, w1, d1, yaw1)
    return polygon_area(clip_convex(p, q))
