"""Pure-numpy fallback for the compiled kernels in `_kernels.pyx`.

Same contract, same results bit for bit; single-threaded (the workers
argument is accepted for interface parity and ignored).
"""

import numpy as np


def carve_occupancy(pix, cam_depth, thresholds, offsets, out, workers):
    occupied = np.ones(pix.shape[1], bool)
    for j in range(pix.shape[0]):
        idx = pix[j]
        in_view = idx >= 0
        sample = thresholds[offsets[j] + np.where(in_view, idx, 0)]
        occupied &= ~(in_view & (cam_depth[j] < sample))
    out[:] = occupied
