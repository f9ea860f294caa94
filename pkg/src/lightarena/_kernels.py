"""Compiled inner loops for the camera renderer and the Hough detector."""

import math

import numba
import numpy as np

_U64 = numba.uint64


@numba.njit(cache=True, inline="always")
def _mix(z):
    z = z + _U64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


@numba.njit(cache=True)
def render_discs(height, width, background, body, xs, ys, radii,
                 vignette, noise_sigma, seed, normal_table):
    canvas = np.full((height, width), np.float32(background), dtype=np.float32)
    for k in range(xs.shape[0]):
        cx = xs[k]
        cy = ys[k]
        r = radii[k]
        x0 = max(int(math.floor(cx - r - 1.0)), 0)
        x1 = min(int(math.ceil(cx + r + 1.0)), width - 1)
        y0 = max(int(math.floor(cy - r - 1.0)), 0)
        y1 = min(int(math.ceil(cy + r + 1.0)), height - 1)
        for y in range(y0, y1 + 1):
            dy = y - cy
            for x in range(x0, x1 + 1):
                dx = x - cx
                cov = r + 0.5 - math.sqrt(dx * dx + dy * dy)
                if cov <= 0.0:
                    continue
                if cov >= 1.0:
                    canvas[y, x] = body
                else:
                    canvas[y, x] = canvas[y, x] * (1.0 - cov) + body * cov

    out = np.empty((height, width), dtype=np.uint8)
    hx = 0.5 * (width - 1)
    hy = 0.5 * (height - 1)
    inv_rho2 = 1.0 / max(hx * hx + hy * hy, 1e-12)
    base = _mix(_U64(seed))
    bits = _U64(0)
    i = 0
    for y in range(height):
        for x in range(width):
            v = float(canvas[y, x])
            if vignette > 0.0:
                ddx = x - hx
                ddy = y - hy
                v *= 1.0 - vignette * (ddx * ddx + ddy * ddy) * inv_rho2
            if noise_sigma > 0.0:
                # four 16-bit quantile indices per hash
                if (i & 3) == 0:
                    bits = _mix(base ^ _U64(i >> 2))
                v += noise_sigma * normal_table[int(bits & _U64(0xFFFF))]
                bits = bits >> _U64(16)
                i += 1
            q = math.floor(v + 0.5)
            if q < 0.0:
                q = 0.0
            elif q > 255.0:
                q = 255.0
            out[y, x] = np.uint8(q)
    return out


@numba.njit(cache=True)
def hough_vote(gx, gy, mag, edge_threshold, r_min, r_max, dp, acc_h, acc_w):
    acc = np.zeros((acc_h, acc_w), dtype=np.int32)
    h, w = mag.shape
    inv_dp = 1.0 / dp
    for y in range(h):
        for x in range(w):
            m = mag[y, x]
            if m < edge_threshold or m <= 0.0:
                continue
            ux = gx[y, x] / m
            uy = gy[y, x] / m
            for r in range(r_min, r_max + 1):
                for sgn in (1.0, -1.0):
                    ax = int(math.floor((x + sgn * r * ux) * inv_dp + 0.5))
                    ay = int(math.floor((y + sgn * r * uy) * inv_dp + 0.5))
                    if 0 <= ax < acc_w and 0 <= ay < acc_h:
                        acc[ay, ax] += 1
    return acc


@numba.njit(cache=True)
def peak_candidates(votes, threshold):
    """Cells >= threshold that are not exceeded by any 8-neighbour."""
    h, w = votes.shape
    ys = []
    xs = []
    vs = []
    for y in range(h):
        for x in range(w):
            v = votes[y, x]
            if v < threshold or v <= 0:
                continue
            ok = True
            for dy in range(-1, 2):
                yy = y + dy
                if yy < 0 or yy >= h:
                    continue
                for dx in range(-1, 2):
                    xx = x + dx
                    if xx < 0 or xx >= w or (dx == 0 and dy == 0):
                        continue
                    if votes[yy, xx] > v:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                ys.append(y)
                xs.append(x)
                vs.append(v)
    return np.array(ys, dtype=np.int64), np.array(xs, dtype=np.int64), np.array(vs, dtype=np.int64)


@numba.njit(cache=True)
def radius_histogram(mag, edge_threshold, cx, cy, r_min, r_max):
    h, w = mag.shape
    hist = np.zeros(r_max - r_min + 1, dtype=np.int64)
    x0 = max(int(math.floor(cx - r_max - 1)), 0)
    x1 = min(int(math.ceil(cx + r_max + 1)), w - 1)
    y0 = max(int(math.floor(cy - r_max - 1)), 0)
    y1 = min(int(math.ceil(cy + r_max + 1)), h - 1)
    for y in range(y0, y1 + 1):
        for x in range(x0, x1 + 1):
            m = mag[y, x]
            if m < edge_threshold or m <= 0.0:
                continue
            d = math.sqrt((x - cx) ** 2 + (y - cy) ** 2)
            b = int(math.floor(d + 0.5))
            if r_min <= b <= r_max:
                hist[b - r_min] += 1
    return hist


@numba.njit(cache=True)
def refine_peaks(votes, ys, xs):
    """Vote-weighted centroid over each peak's clipped 3x3 neighbourhood."""
    h, w = votes.shape
    n = ys.shape[0]
    fx = np.empty(n)
    fy = np.empty(n)
    for k in range(n):
        sx = 0.0
        sy = 0.0
        tot = 0.0
        for y in range(max(ys[k] - 1, 0), min(ys[k] + 2, h)):
            for x in range(max(xs[k] - 1, 0), min(xs[k] + 2, w)):
                v = float(votes[y, x])
                sx += v * x
                sy += v * y
                tot += v
        fx[k] = sx / tot
        fy[k] = sy / tot
    return fx, fy


@numba.njit(cache=True)
def radius_modes(mag, edge_threshold, cxs, cys, r_min, r_max):
    n = cxs.shape[0]
    radius = np.empty(n, dtype=np.int64)
    support = np.empty(n, dtype=np.int64)
    for k in range(n):
        hist = radius_histogram(mag, edge_threshold, cxs[k], cys[k], r_min, r_max)
        best = 0
        for b in range(1, hist.shape[0]):
            if hist[b] > hist[best]:
                best = b
        radius[k] = r_min + best
        support[k] = hist[best]
    return radius, support


@numba.njit(cache=True)
def draw_rings(frame, cxs, cys, radii, colors, thickness):
    """Annuli ``|d - r| <= thickness/2`` in order, clipped to the frame, in place."""
    h, w = frame.shape[0], frame.shape[1]
    half = thickness / 2.0
    for k in range(cxs.shape[0]):
        cx, cy, r = cxs[k], cys[k], radii[k]
        reach = r + half
        x0 = max(int(np.floor(cx - reach)), 0)
        x1 = min(int(np.ceil(cx + reach)), w - 1)
        y0 = max(int(np.floor(cy - reach)), 0)
        y1 = min(int(np.ceil(cy + reach)), h - 1)
        for y in range(y0, y1 + 1):
            dy = y - cy
            for x in range(x0, x1 + 1):
                dx = x - cx
                if abs(np.sqrt(dx * dx + dy * dy) - r) <= half:
                    for c in range(frame.shape[2]):
                        frame[y, x, c] = colors[k, c]


@numba.njit(cache=True)
def greedy_match(ax, ay, akey, bx, by, gate):
    """Pairs within ``gate`` taken by ascending (distance, akey, b index).

    Returns ``(ia, ib)`` index arrays in acceptance order.
    """
    na, nb = ax.shape[0], bx.shape[0]
    order_a = np.argsort(akey, kind="mergesort")
    cand_a = np.empty(na * nb, dtype=np.int64)
    cand_b = np.empty(na * nb, dtype=np.int64)
    cand_d = np.empty(na * nb)
    m = 0
    g2 = gate * gate
    for oi in range(na):
        i = order_a[oi]
        for j in range(nb):
            dx = ax[i] - bx[j]
            dy = ay[i] - by[j]
            if dx * dx + dy * dy <= g2:
                d = np.hypot(dx, dy)
                if d <= gate:
                    cand_a[m] = i
                    cand_b[m] = j
                    cand_d[m] = d
                    m += 1
    order = np.argsort(cand_d[:m], kind="mergesort")
    used_a = np.zeros(na, dtype=np.bool_)
    used_b = np.zeros(nb, dtype=np.bool_)
    out_a = np.empty(min(na, nb), dtype=np.int64)
    out_b = np.empty(min(na, nb), dtype=np.int64)
    k = 0
    for o in order:
        i, j = cand_a[o], cand_b[o]
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = True
        used_b[j] = True
        out_a[k] = i
        out_b[k] = j
        k += 1
    return out_a[:k], out_b[:k]


@numba.njit(cache=True)
def resolve_overlaps(x, y, radius, ids, width, height, iterations):
    """Jacobi pushes along centre lines, half each way, clamped to the arena.

    Coincident centres separate along an angle hashed from the id pair.
    """
    n = x.shape[0]
    x = x.copy()
    y = y.copy()
    px = np.zeros(n)
    py = np.zeros(n)
    for _ in range(iterations):
        px[:] = 0.0
        py[:] = 0.0
        any_over = False
        for i in range(n):
            for j in range(i + 1, n):
                dx = x[j] - x[i]
                dy = y[j] - y[i]
                need = radius[i] + radius[j]
                if abs(dx) >= need or abs(dy) >= need:
                    continue
                d = np.hypot(dx, dy)
                if d >= need - 1e-9:
                    continue
                any_over = True
                if d < 1e-12:
                    bits = _mix(_mix(np.uint64(0x5EED) ^ np.uint64(ids[i])) ^ np.uint64(ids[j]))
                    theta = float(bits >> np.uint64(11)) * (1.0 / 9007199254740992.0) * 2.0 * np.pi
                    ux, uy = np.cos(theta), np.sin(theta)
                else:
                    ux, uy = dx / d, dy / d
                push = 0.5 * (need - d)
                px[i] -= push * ux
                py[i] -= push * uy
                px[j] += push * ux
                py[j] += push * uy
        if not any_over:
            break
        for i in range(n):
            x[i] = min(max(x[i] + px[i], radius[i]), width - radius[i])
            y[i] = min(max(y[i] + py[i], radius[i]), height - radius[i])
    return x, y


@numba.njit(cache=True)
def expand_blocks(seg, xmap, ymap):
    """``seg[ymap][:, xmap]`` for an RGB table, copying repeated rows whole."""
    h = ymap.shape[0]
    w = xmap.shape[0]
    out = np.empty((h, w, 3), np.uint8)
    prev = -1
    for y in range(h):
        if ymap[y] == prev:
            out[y] = out[y - 1]
            continue
        prev = ymap[y]
        src = seg[prev]
        for x in range(w):
            k = xmap[x]
            out[y, x, 0] = src[k, 0]
            out[y, x, 1] = src[k, 1]
            out[y, x, 2] = src[k, 2]
    return out


def warmup():
    """Load or compile every kernel once so the first real call is not slow."""
    table = np.zeros(65536)
    img = render_discs(8, 8, 40.0, 200.0, np.array([4.0]), np.array([4.0]), np.array([2.0]),
                       0.1, 1.0, 1, table)
    f = img.astype(np.float32)
    acc = hough_vote(f, f, f, 1.0, 1, 2, 2, 4, 4)
    peak_candidates(acc, 1)
    refine_peaks(acc, np.array([1], dtype=np.int64), np.array([1], dtype=np.int64))
    radius_modes(f, 1.0, np.array([4.0]), np.array([4.0]), 1, 2)
    frame = np.zeros((8, 8, 3), np.uint8)
    draw_rings(frame, np.array([4.0]), np.array([4.0]), np.array([2.0]), np.zeros((1, 3), np.uint8), 1.0)
    ro = np.zeros(8, np.int64)
    ro.flags.writeable = False
    expand_blocks(frame, ro, ro)
    pts = np.array([0.0])
    greedy_match(pts, pts, np.array([0], dtype=np.int64), pts, pts, 1.0)
    resolve_overlaps(np.array([1.0, 1.5]), np.array([1.0, 1.0]), np.array([1.0, 1.0]),
                     np.array([0, 1], dtype=np.int64), 10.0, 10.0, 8)
