"""Reference (pure Python / numpy) kernels for rotated-rectangle overlap.

Same algorithm as the numba backend: clip one convex quad against the
other (Sutherland-Hodgman), then take the shoelace area of the result.
Kept dependency-free so it always imports; `trajsot.geometry` picks this
backend when numba is unavailable or disabled via ``TRAJSOT_NUMBA=0``.
"""

from __future__ import annotations

import numpy as np


def polygon_area(xs, ys, n) -> float:
    """Shoelace area of the first ``n`` vertices (positive for CCW order)."""
    acc = 0.0
    for i in range(n):
        j = (i + 1) % n
        acc += xs[i] * ys[j] - xs[j] * ys[i]
    return 0.5 * acc


def rect_intersection_area(corners_a: np.ndarray, corners_b: np.ndarray) -> float:
    """Intersection area of two convex quads given as (4, 2) CCW corner arrays."""
    # subject polygon buffers; clipping a quad by a quad yields <= 8 vertices
    sx = [0.0] * 16
    sy = [0.0] * 16
    for i in range(4):
        sx[i] = float(corners_a[i, 0])
        sy[i] = float(corners_a[i, 1])
    n = 4

    ox = [0.0] * 16
    oy = [0.0] * 16

    for e in range(4):
        if n == 0:
            return 0.0
        ex0 = float(corners_b[e, 0])
        ey0 = float(corners_b[e, 1])
        ex1 = float(corners_b[(e + 1) % 4, 0])
        ey1 = float(corners_b[(e + 1) % 4, 1])
        dx = ex1 - ex0
        dy = ey1 - ey0

        m = 0
        px = sx[n - 1]
        py = sy[n - 1]
        # CCW clip polygon: interior is the left side of each directed edge
        pin = dx * (py - ey0) - dy * (px - ex0) >= 0.0
        for i in range(n):
            cx = sx[i]
            cy = sy[i]
            cin = dx * (cy - ey0) - dy * (cx - ex0) >= 0.0
            if cin != pin:
                # segment crosses the clip line; solve for the crossing point
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
        sx, ox = ox, sx
        sy, oy = oy, sy

    if n < 3:
        return 0.0
    return abs(polygon_area(sx, sy, n))
