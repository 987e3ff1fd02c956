# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convex polygon clipping kernels.

Same contract as cog3d._polyclip_py; selected at import by cog3d.geometry.
Sutherland-Hodgman clipping of convex CCW polygons with fixed-size stack
buffers (intersections of two convex n-gons have at most n+m vertices).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, fabs

cnp.import_array()

BACKEND = "cython"

DEF MAXV = 64
cdef double EPS = 1e-12
cdef double MERGE_EPS = 1e-9


cdef double _area(double* xs, double* ys, int n) nogil:
    cdef double acc = 0.0
    cdef int i, j
    if n < 3:
        return 0.0
    for i in range(n):
        j = (i + 1) % n
        acc += xs[i] * ys[j] - xs[j] * ys[i]
    return 0.5 * fabs(acc)


cdef int _clip_core(double* sx, double* sy, int ns,
                    double* cx, double* cy, int nc,
                    double* ox, double* oy) nogil:
    """Clip subject polygon against each edge of the clip polygon."""
    cdef double bufx[MAXV]
    cdef double bufy[MAXV]
    cdef double nbx[MAXV]
    cdef double nby[MAXV]
    cdef int n = ns, m, i, j, jp
    cdef double ax, ay, ex, ey, dprev, dcur, t, px, py, qx, qy
    for i in range(ns):
        bufx[i] = sx[i]
        bufy[i] = sy[i]
    for i in range(nc):
        if n == 0:
            break
        ax = cx[i]
        ay = cy[i]
        ex = cx[(i + 1) % nc] - ax
        ey = cy[(i + 1) % nc] - ay
        m = 0
        for j in range(n):
            jp = j - 1 if j > 0 else n - 1
            px = bufx[jp]
            py = bufy[jp]
            qx = bufx[j]
            qy = bufy[j]
            dprev = ex * (py - ay) - ey * (px - ax)
            dcur = ex * (qy - ay) - ey * (qx - ax)
            if (dprev > EPS and dcur < -EPS) or (dprev < -EPS and dcur > EPS):
                t = dprev / (dprev - dcur)
                if m < MAXV:
                    nbx[m] = px + t * (qx - px)
                    nby[m] = py + t * (qy - py)
                    m += 1
            if dcur >= -EPS:
                if m < MAXV:
                    nbx[m] = qx
                    nby[m] = qy
                    m += 1
        n = m
        for j in range(n):
            bufx[j] = nbx[j]
            bufy[j] = nby[j]
    # drop duplicate / collinear vertices
    m = 0
    cdef double c1x, c1y, c2x, c2y, cr
    if n >= 3:
        for j in range(n):
            jp = j - 1 if j > 0 else n - 1
            i = (j + 1) % n
            c1x = bufx[j] - bufx[jp]
            c1y = bufy[j] - bufy[jp]
            if fabs(c1x) < MERGE_EPS and fabs(c1y) < MERGE_EPS:
                continue
            c2x = bufx[i] - bufx[j]
            c2y = bufy[i] - bufy[j]
            cr = c1x * c2y - c1y * c2x
            if fabs(cr) < MERGE_EPS:
                continue
            ox[m] = bufx[j]
            oy[m] = bufy[j]
            m += 1
    if m < 3:
        return 0
    return m


def polygon_area(poly):
    """Unsigned area of a simple polygon via the shoelace formula."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] p = np.ascontiguousarray(poly, dtype=np.float64)
    cdef int n = p.shape[0]
    if n < 3:
        return 0.0
    cdef double xs[MAXV]
    cdef double ys[MAXV]
    if n > MAXV:
        raise ValueError("polygon has too many vertices")
    cdef int i
    for i in range(n):
        xs[i] = p[i, 0]
        ys[i] = p[i, 1]
    return _area(xs, ys, n)


def clip_convex(subject, clip):
    """Sutherland-Hodgman intersection of two convex CCW polygons."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] s = np.ascontiguousarray(subject, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] c = np.ascontiguousarray(clip, dtype=np.float64)
    cdef int ns = s.shape[0], nc = c.shape[0]
    if ns > MAXV // 2 or nc > MAXV // 2:
        raise ValueError("polygon has too many vertices")
    cdef double sx[MAXV]
    cdef double sy[MAXV]
    cdef double cx[MAXV]
    cdef double cy[MAXV]
    cdef double ox[MAXV]
    cdef double oy[MAXV]
    cdef int i, m
    for i in range(ns):
        sx[i] = s[i, 0]
        sy[i] = s[i, 1]
    for i in range(nc):
        cx[i] = c[i, 0]
        cy[i] = c[i, 1]
    m = _clip_core(sx, sy, ns, cx, cy, nc, ox, oy)
    out = np.empty((m, 2), dtype=np.float64)
    for i in range(m):
        out[i, 0] = ox[i]
        out[i, 1] = oy[i]
    return out


def rect_overlap_area(double cx0, double cy0, double w0, double d0, double yaw0,
                      double cx1, double cy1, double w1, double d1, double yaw1):
    """Intersection area of two yaw-rotated rectangles in the plane."""
    cdef double sx[4]
    cdef double sy[4]
    cdef double cx[4]
    cdef double cy[4]
    cdef double ox[MAXV]
    cdef double oy[MAXV]
    cdef double c, s, hw, hd
    cdef double lx[4]
    cdef double ly[4]
    cdef int i, m

    c = cos(yaw0); s = sin(yaw0); hw = 0.5 * w0; hd = 0.5 * d0
    lx[0] = -hw; ly[0] = -hd
    lx[1] = hw;  ly[1] = -hd
    lx[2] = hw;  ly[2] = hd
    lx[3] = -hw; ly[3] = hd
    for i in range(4):
        sx[i] = cx0 + c * lx[i] - s * ly[i]
        sy[i] = cy0 + s * lx[i] + c * ly[i]

    c = cos(yaw1); s = sin(yaw1); hw = 0.5 * w1; hd = 0.5 * d1
    lx[0] = -hw; ly[0] = -hd
    lx[1] = hw;  ly[1] = -hd
    lx[2] = hw;  ly[2] = hd
    lx[3] = -hw; ly[3] = hd
    for i in range(4):
        cx[i] = cx1 + c * lx[i] - s * ly[i]
        cy[i] = cy1 + s * lx[i] + c * ly[i]

    m = _clip_core(sx, sy, 4, cx, cy, 4, ox, oy)
    return _area(ox, oy, m)
