# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels. Semantics mirror lidar4d._kernels.pure exactly."""

from libc.math cimport cos, sin, fabs, INFINITY

import numpy as np


def zbuffer_project(us, vs, depth, intensity, int height, int width):
    cdef const long long[::1] u = np.ascontiguousarray(us, dtype=np.int64)
    cdef const long long[::1] v = np.ascontiguousarray(vs, dtype=np.int64)
    cdef const double[::1] d = np.ascontiguousarray(depth, dtype=np.float64)
    cdef const double[::1] it = np.ascontiguousarray(intensity, dtype=np.float64)

    depth_img = np.zeros((height, width), dtype=np.float64)
    intens_img = np.zeros((height, width), dtype=np.float64)
    valid = np.zeros((height, width), dtype=np.uint8)
    cdef double[:, ::1] dimg = depth_img
    cdef double[:, ::1] iimg = intens_img
    cdef unsigned char[:, ::1] vimg = valid

    cdef Py_ssize_t i, n = u.shape[0]
    cdef long long row, col
    for i in range(n):
        row = v[i]
        col = u[i]
        if vimg[row, col] == 0 or d[i] < dimg[row, col]:
            dimg[row, col] = d[i]
            iimg[row, col] = it[i]
            vimg[row, col] = 1
    return depth_img, intens_img, valid


def assign_points_to_boxes(points, boxes):
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] bx = np.ascontiguousarray(boxes, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], nb = bx.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    cdef long long[::1] o = out
    cdef Py_ssize_t i, b
    cdef double c, s, dx, dy, lx, ly
    for i in range(n):
        for b in range(nb):
            c = cos(bx[b, 6])
            s = sin(bx[b, 6])
            dx = p[i, 0] - bx[b, 0]
            dy = p[i, 1] - bx[b, 1]
            lx = c * dx + s * dy
            ly = -s * dx + c * dy
            if (fabs(lx) <= 0.5 * bx[b, 4]
                    and fabs(ly) <= 0.5 * bx[b, 3]
                    and fabs(p[i, 2] - bx[b, 2]) <= 0.5 * bx[b, 5]):
                o[i] = b
                break
    return out


def ray_box_hits(dirs, origin, boxes):
    cdef const double[:, ::1] dr = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef const double[::1] org = np.ascontiguousarray(origin, dtype=np.float64)
    cdef const double[:, ::1] bx = np.ascontiguousarray(boxes, dtype=np.float64)
    cdef Py_ssize_t n = dr.shape[0], nb = bx.shape[0]

    t_out = np.full(n, np.inf, dtype=np.float64)
    idx_out = np.full(n, -1, dtype=np.int64)
    cdef double[::1] tv = t_out
    cdef long long[::1] iv = idx_out

    cdef Py_ssize_t i, b, axis
    cdef double c, s, ox, oy, oz
    cdef double olocal[3]
    cdef double dlocal[3]
    cdef double half[3]
    cdef double t_enter, t_exit, t1, t2, lo, hi, t_hit, d, o
    cdef bint miss

    for b in range(nb):
        c = cos(bx[b, 6])
        s = sin(bx[b, 6])
        ox = org[0] - bx[b, 0]
        oy = org[1] - bx[b, 1]
        oz = org[2] - bx[b, 2]
        olocal[0] = c * ox + s * oy
        olocal[1] = -s * ox + c * oy
        olocal[2] = oz
        half[0] = 0.5 * bx[b, 4]
        half[1] = 0.5 * bx[b, 3]
        half[2] = 0.5 * bx[b, 5]
        for i in range(n):
            dlocal[0] = c * dr[i, 0] + s * dr[i, 1]
            dlocal[1] = -s * dr[i, 0] + c * dr[i, 1]
            dlocal[2] = dr[i, 2]
            t_enter = -INFINITY
            t_exit = INFINITY
            miss = 0
            for axis in range(3):
                d = dlocal[axis]
                o = olocal[axis]
                if d == 0.0:
                    if fabs(o) > half[axis]:
                        miss = 1
                        break
                    continue
                t1 = (-half[axis] - o) / d
                t2 = (half[axis] - o) / d
                if t1 < t2:
                    lo = t1
                    hi = t2
                else:
                    lo = t2
                    hi = t1
                if lo > t_enter:
                    t_enter = lo
                if hi < t_exit:
                    t_exit = hi
            if miss or t_exit < t_enter or t_exit <= 0.0:
                continue
            t_hit = t_enter if t_enter > 0.0 else t_exit
            if t_hit < tv[i]:
                tv[i] = t_hit
                iv[i] = b
    return t_out, idx_out
