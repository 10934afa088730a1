"""Slow, obviously-correct reference implementations used only by tests."""

import math
from collections import deque

import numpy as np


def brute_force_edt(fg):
    """All-pairs distance from each foreground pixel to the nearest background pixel.

    The frame is surrounded by a one-pixel background border.
    """
    fg = np.pad(np.asarray(fg, bool), 1)
    bg = np.argwhere(~fg)
    out = np.zeros(fg.shape)
    for y, x in np.argwhere(fg):
        out[y, x] = np.sqrt(((bg - (y, x)) ** 2).sum(axis=1)).min()
    return out[1:-1, 1:-1]


def flood_fill_labels(fg, connectivity):
    """BFS labeling; ids assigned in raster order of first pixel."""
    fg = np.asarray(fg, bool)
    h, w = fg.shape
    if connectivity == 4:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        steps = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    labels = np.zeros((h, w), int)
    n = 0
    for y in range(h):
        for x in range(w):
            if fg[y, x] and not labels[y, x]:
                n += 1
                labels[y, x] = n
                q = deque([(y, x)])
                while q:
                    cy, cx = q.popleft()
                    for dy, dx in steps:
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and fg[ny, nx] and not labels[ny, nx]:
                            labels[ny, nx] = n
                            q.append((ny, nx))
    return labels, n


def component_boxes(labels, n):
    """Inclusive (x_min, y_min, x_max, y_max) and pixel count per label by direct scan."""
    out = []
    for k in range(1, n + 1):
        ys, xs = np.nonzero(labels == k)
        out.append(((xs.min(), ys.min(), xs.max(), ys.max()), len(xs)))
    return out


def loop_box_count(fg, eps):
    """Occupied eps x eps cells by explicit iteration over the grid."""
    fg = np.asarray(fg, bool)
    h, w = fg.shape
    n = 0
    for y0 in range(0, h, eps):
        for x0 in range(0, w, eps):
            if fg[y0:y0 + eps, x0:x0 + eps].any():
                n += 1
    return n


def ols_slope(xs, ys):
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    return sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / sum((x - mx) ** 2 for x in xs)


def loop_fractal_dimension(fg, scales):
    counts = [loop_box_count(fg, e) for e in scales]
    return ols_slope([math.log(1 / e) for e in scales], [math.log(c) for c in counts])


def order_arc(fg):
    """Order the pixels of a simple open 8-connected arc from one tip to the other."""
    pts = {(int(x), int(y)) for y, x in np.argwhere(fg)}

    def nbrs(p):
        return [(p[0] + dx, p[1] + dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
                if (dx, dy) != (0, 0) and (p[0] + dx, p[1] + dy) in pts]

    tips = sorted(p for p in pts if len(nbrs(p)) == 1)
    path = [tips[0]]
    seen = {tips[0]}
    while True:
        nxt = [q for q in nbrs(path[-1]) if q not in seen]
        if not nxt:
            return path
        # prefer 4-neighbours so corner-cutting pixels are not skipped
        nxt.sort(key=lambda q: abs(q[0] - path[-1][0]) + abs(q[1] - path[-1][1]))
        path.append(nxt[0])
        seen.add(nxt[0])


def smoothed_arc_chord(points, window=5):
    """Arc/chord of the centred moving average (window shrinking at the ends), by plain loops."""
    n = len(points)
    half = window // 2
    sm = []
    for i in range(n):
        k = min(half, i, n - 1 - i)
        chunk = points[i - k:i + k + 1]
        sm.append((sum(p[0] for p in chunk) / len(chunk), sum(p[1] for p in chunk) / len(chunk)))
    arc = sum(math.dist(a, b) for a, b in zip(sm, sm[1:]))
    return arc / math.dist(sm[0], sm[-1])


def analytic_arc_length(f, a, b, n=200_000):
    """Arc length of y = f(x) on [a, b] by dense polyline integration."""
    xs = np.linspace(a, b, n + 1)
    ys = f(xs)
    return float(np.hypot(np.diff(xs), np.diff(ys)).sum())
