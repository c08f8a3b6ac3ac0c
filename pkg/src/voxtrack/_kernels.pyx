# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels. Mirrors the contracts of `_kernels_py` exactly;
both backends must produce bit-identical results."""

from cython.parallel cimport prange

import numpy as np

cimport numpy as cnp


def carve_occupancy(cnp.int32_t[:, ::1] pix,
                    cnp.float32_t[:, ::1] cam_depth,
                    cnp.float32_t[::1] thresholds,
                    cnp.int64_t[::1] offsets,
                    cnp.uint8_t[::1] out,
                    int workers):
    """Per-voxel gather/compare against per-camera carve thresholds.

    pix[j, i] is the linear pixel index of voxel i in camera j (-1 when the
    projection falls outside the field of view), cam_depth[j, i] its
    camera-space depth, and thresholds the concatenated per-camera carve
    threshold images (+inf where the depth sample does not carve). A voxel
    stays occupied iff no camera sees a threshold above its depth.
    """
    cdef Py_ssize_t n = pix.shape[1]
    cdef Py_ssize_t m = pix.shape[0]
    cdef Py_ssize_t i, j
    cdef cnp.int32_t p
    cdef cnp.uint8_t keep
    if workers < 1:
        workers = 1
    with nogil:
        for i in prange(n, num_threads=workers, schedule='static'):
            keep = 1
            for j in range(m):
                p = pix[j, i]
                if p >= 0:
                    if cam_depth[j, i] < thresholds[offsets[j] + p]:
                        keep = 0
                        break
            out[i] = keep
