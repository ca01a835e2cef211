"""Vectorised numpy versions of the compiled loops in ``_accel``."""
import numpy as np

from .kernel import hyp_factor, smooth_factor


def pair_weights(r, rho, n, s):
    return smooth_factor(r, rho, n, s) * np.abs(rho - r) ** (-1.0 - 2.0 * s)


def pair_accumulate(r, rho, w, idx, coef, n, s, out):
    kw = w * pair_weights(r, rho, n, s)
    size = out.shape[0]
    flat = out.reshape(-1)
    width = idx.shape[1]
    for a in range(width):
        ca = kw * coef[:, a]
        for b in range(width):
            flat += np.bincount(idx[:, a] * size + idx[:, b], weights=ca * coef[:, b],
                                minlength=flat.size)


def poisson_values(r, rho, y, n, s, scale):
    yy = y * y
    dm = r - rho
    A = yy + r * r + rho * rho
    B = 2.0 * r * rho
    root = np.sqrt((yy + dm * dm) * (yy + (r + rho) ** 2))
    a2 = 0.5 * (A + root)
    t = B / (2.0 * a2)
    omt2 = (dm * dm + yy + root) * (2.0 * a2 + B) / (4.0 * a2 * a2)
    return (scale * y ** (2 * s) * a2 ** (-(n + 2 * s) / 2) * omt2 ** (-1 - 2 * s)
            * hyp_factor(t * t, n, s))
