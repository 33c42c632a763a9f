"""Independent reference implementations shared by the test modules."""
import itertools
import math

import mpmath
import numpy as np
from scipy.integrate import solve_ivp

from dropsample import classifier as clf

mpmath.mp.dps = 50


def ds1_factor_mp(p, k, beta=400, gamma=600, t2=0.99):
    """Exponential factor in 50-digit arithmetic; ``None`` in the confusing band."""
    p = mpmath.mpf(p)
    t1 = mpmath.mpf(1) / k
    if p > t2:
        return 1 - mpmath.exp(-beta * (1 - p))
    if p < t1:
        return 1 - mpmath.exp(-gamma * p)
    return None


def ds2_factor_ref(p, k, t2=0.99):
    """Step factor from an explicit interval table; ``None`` in the confusing band."""
    t1 = 1.0 / k
    if p < t1:
        levels = [(0.0, t1 / 4, 0.9), (t1 / 4, t1 / 2, 0.5), (t1 / 2, t1, 0.1)]
    elif p > t2:
        levels = [(t2, 0.999, 0.9), (0.999, 0.9999, 0.5), (0.9999, math.inf, 0.1)]
    else:
        return None
    return next(a for lo, hi, a in levels if lo <= p < hi)


def linear_scan_draw(quotas, u):
    """Draw by walking the quotas until the running sum exceeds ``u * Z``."""
    q = np.asarray(quotas, dtype=np.float64)
    z = 0.0
    for v in q:
        z += v
    out = []
    for uj in np.atleast_1d(u):
        target = uj * z
        acc = 0.0
        pick = len(q) - 1
        for i, v in enumerate(q):
            acc += v
            if target < acc:
                pick = i
                break
        out.append(pick)
    return np.array(out, dtype=np.int64)


def ode_signature(points, order=3):
    """Iterated integrals by integrating dS^{w c} = S^w dx_c along the path.

    Each linear piece is solved with an adaptive high-order Runge-Kutta
    method; nothing here uses closed forms or Chen's identity.
    """
    words = [w for n in range(1, order + 1) for w in itertools.product((0, 1), repeat=n)]
    pos = {w: i for i, w in enumerate(words)}

    def rhs(_t, s, d):
        out = np.empty_like(s)
        for w, i in pos.items():
            prev = 1.0 if len(w) == 1 else s[pos[w[:-1]]]
            out[i] = prev * d[w[-1]]
        return out

    s = np.zeros(len(words))
    pts = np.asarray(points, dtype=float)
    for a, b in zip(pts[:-1], pts[1:]):
        sol = solve_ivp(rhs, (0.0, 1.0), s, args=(b - a,), method="DOP853", rtol=1e-13, atol=1e-15)
        s = sol.y[:, -1]
    return s


def reference_uniform_sgd(x, y, k, cfg):
    """Plain SGD with index floor(u * m) per draw, one uniform per draw."""
    rng = np.random.default_rng(cfg.seed)
    model = clf.SoftmaxModel(k, x.shape[1], cfg.hidden, seed=cfg.seed)
    m = len(y)
    losses = []
    for t in range(1, cfg.iterations + 1):
        idx = np.floor(rng.random(cfg.batch) * m).astype(np.int64)
        _, val, g = clf.forward_backward(model, x[idx], y[idx], clf.LossConfig(cfg.lam))
        losses.append(val)
        model = clf.sgd_step(model, g, cfg.learning_rate(t))
    return model, losses
