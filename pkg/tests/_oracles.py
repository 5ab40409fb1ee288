"""Slow direct reference implementations used as test oracles."""
import numpy as np

from sipgs.metrics import gaussian_window

C1, C2 = 0.01**2, 0.03**2


def naive_ssim(a, b):
    """Direct per-window SSIM with two-pass variances; channels averaged."""
    g = gaussian_window()
    w = np.outer(g, g)
    H, W, C = a.shape
    vals = []
    for c in range(C):
        for i in range(H - 10):
            for j in range(W - 10):
                pa, pb = a[i : i + 11, j : j + 11, c], b[i : i + 11, j : j + 11, c]
                ma, mb = np.sum(w * pa), np.sum(w * pb)
                va, vb = np.sum(w * (pa - ma) ** 2), np.sum(w * (pb - mb) ** 2)
                cov = np.sum(w * (pa - ma) * (pb - mb))
                vals.append((2 * ma * mb + C1) * (2 * cov + C2) / ((ma**2 + mb**2 + C1) * (va + vb + C2)))
    return float(np.mean(vals))
