"""Independent reference implementations for test expectations.

Everything here is deliberately naive: plain python loops and math calls, no
imports from the package under test, so agreement is evidence rather than
tautology.
"""

import math

import numpy as np


def rel_err(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def central_diff(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate by
    coordinate. f must not mutate or capture its argument."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x.copy())
        flat[i] = orig - h
        fm = f(x.copy())
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def cosine_ref(u, v) -> float:
    du = math.sqrt(sum(x * x for x in u))
    dv = math.sqrt(sum(x * x for x in v))
    return sum(a * b for a, b in zip(u, v)) / (du * dv)


def sim_matrix_ref(z) -> list:
    rows = [list(map(float, r)) for r in z]
    out = []
    for a in rows:
        out.append([cosine_ref(a, b) for b in rows])
    return out


def nt_xent_pair_ref(s, anchor: int, pos: int, tau: float) -> float:
    n = len(s)
    den = sum(math.exp(s[anchor][b] / tau) for b in range(n) if b != anchor)
    num = math.exp(s[anchor][pos] / tau)
    return -math.log(num / den)


def nt_xent_triplet_ref(s, r: int, tau: float) -> float:
    n = len(s)
    b = n // 3
    q = r % b
    pos = [q + v * b for v in range(3) if q + v * b != r]
    den = sum(math.exp(s[r][c] / tau) for c in range(n) if c != r)
    num = sum(math.exp(s[r][p] / tau) for p in pos)
    return -math.log(num / den)


def batch_loss_triplet_ref(z, tau: float) -> float:
    s = sim_matrix_ref(z)
    n = len(s)
    return sum(nt_xent_triplet_ref(s, r, tau) for r in range(n)) / n


def batch_loss_pair_ref(z, tau: float) -> float:
    s = sim_matrix_ref(z)
    n = len(s)
    b = n // 2
    total = 0.0
    for r in range(n):
        pos = (r + b) % n
        total += nt_xent_pair_ref(s, r, pos, tau)
    return total / n


def sq_dist_ref(a, b) -> float:
    return sum((x - y) ** 2 for x, y in zip(a, b))


def adversarial_triplet_ref(emb, n_classes: int, per_class: int,
                            margin: float) -> float:
    """Exhaustive hardest-positive / hardest-negative scan."""
    rows = [list(map(float, r)) for r in emb]
    total = 0.0
    for t in range(n_classes):
        for s in range(per_class):
            a = t * per_class + s
            pos = [t * per_class + j for j in range(per_class) if j != s]
            neg = [r for r in range(len(rows)) if r // per_class != t]
            dp = [sq_dist_ref(rows[a], rows[p]) for p in pos]
            dn = [sq_dist_ref(rows[a], rows[nn]) for nn in neg]
            max_p, p_star = dp[0], pos[0]
            for d, p in zip(dp, pos):
                if d > max_p:
                    max_p, p_star = d, p
            min_n, n_star = dn[0], neg[0]
            for d, nn in zip(dn, neg):
                if d < min_n:
                    min_n, n_star = d, nn
            total += max(margin + max_p - min_n, 0.0)
            total += sq_dist_ref(rows[n_star], rows[p_star]) - min_n
    return total


def gaussian_kernel_ref(sigma: float) -> list:
    radius = math.ceil(3.0 * sigma)
    raw = [math.exp(-(i * i) / (2.0 * sigma * sigma))
           for i in range(-radius, radius + 1)]
    z = sum(raw)
    return [k / z for k in raw]


def blur_ref(px: np.ndarray, sigma: float) -> np.ndarray:
    """Separable clamped-edge Gaussian blur with scalar loops."""
    k = gaussian_kernel_ref(sigma)
    radius = (len(k) - 1) // 2
    h, w, c = px.shape
    mid = np.zeros_like(px)
    for y in range(h):
        for x in range(w):
            for ch in range(c):
                acc = 0.0
                for i, kk in enumerate(k):
                    yy = min(max(y + i - radius, 0), h - 1)
                    acc += kk * px[yy, x, ch]
                mid[y, x, ch] = acc
    out = np.zeros_like(px)
    for y in range(h):
        for x in range(w):
            for ch in range(c):
                acc = 0.0
                for i, kk in enumerate(k):
                    xx = min(max(x + i - radius, 0), w - 1)
                    acc += kk * mid[y, xx, ch]
                out[y, x, ch] = acc
    return out


def bilinear_resize_ref(px: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resample with scalar loops."""
    h, w, c = px.shape
    out = np.zeros((out_h, out_w, c))
    for oy in range(out_h):
        for ox in range(out_w):
            sy = (oy + 0.5) * h / out_h - 0.5
            sx = (ox + 0.5) * w / out_w - 0.5
            y0 = math.floor(sy)
            x0 = math.floor(sx)
            fy = sy - y0
            fx = sx - x0
            y0c = min(max(y0, 0), h - 1)
            y1c = min(max(y0 + 1, 0), h - 1)
            x0c = min(max(x0, 0), w - 1)
            x1c = min(max(x0 + 1, 0), w - 1)
            for ch in range(c):
                top = (1 - fx) * px[y0c, x0c, ch] + fx * px[y0c, x1c, ch]
                bot = (1 - fx) * px[y1c, x0c, ch] + fx * px[y1c, x1c, ch]
                out[oy, ox, ch] = (1 - fy) * top + fy * bot
    return out


def softmax_ce_ref(logits, targets) -> float:
    total = 0.0
    for row, t in zip(logits, targets):
        m = max(row)
        den = sum(math.exp(v - m) for v in row)
        total += math.log(den) + m - row[t]
    return total / len(targets)
