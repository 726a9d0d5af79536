"""Numba-compiled kernel for rotated-rectangle overlap.

Mirrors `trajsot._rect_clip` exactly; the geometry module dispatches to
this version when numba is importable and ``TRAJSOT_NUMBA`` is not "0".
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def rect_intersection_area(corners_a, corners_b):  # pragma: no cover - timed via tests
    sx = np.empty(16, dtype=np.float64)
    sy = np.empty(16, dtype=np.float64)
    ox = np.empty(16, dtype=np.float64)
    oy = np.empty(16, dtype=np.float64)
    for i in range(4):
        sx[i] = corners_a[i, 0]
        sy[i] = corners_a[i, 1]
    n = 4

    for e in range(4):
        if n == 0:
            return 0.0
        ex0 = corners_b[e, 0]
        ey0 = corners_b[e, 1]
        ex1 = corners_b[(e + 1) % 4, 0]
        ey1 = corners_b[(e + 1) % 4, 1]
        dx = ex1 - ex0
        dy = ey1 - ey0

        m = 0
        px = sx[n - 1]
        py = sy[n - 1]
        pin = dx * (py - ey0) - dy * (px - ex0) >= 0.0
        for i in range(n):
            cx = sx[i]
            cy = sy[i]
            cin = dx * (cy - ey0) - dy * (cx - ex0) >= 0.0
            if cin != pin:
                denom = dx * (py - cy) - dy * (px - cx)
                if denom != 0.0:
                    t = (dx * (py - ey0) - dy * (px - ex0)) / denom
                    ox[m] = px + t * (cx - px)
                    oy[m] = py + t * (cy - py)
                    m += 1
            if cin:
                ox[m] = cx
                oy[m] = cy
                m += 1
            px = cx
            py = cy
            pin = cin

        n = m
        tx = sx
        sx = ox
        ox = tx
        ty = sy
        sy = oy
        oy = ty

    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        j = (i + 1) % n
        acc += sx[i] * sy[j] - sx[j] * sy[i]
    return abs(0.5 * acc)
