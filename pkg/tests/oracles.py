"""Independent brute-force oracles used to freeze expected test values.

Everything here is deliberately dumb: dense grid searches and direct
formula transcriptions with no shared code with the package under test.
Slow is fine; these run on tiny inputs.
"""

import itertools

import numpy as np


def grid_project(contains, y, lo, hi, n=201):
    """Brute-force metric projection: scan an n^d grid over [lo, hi]^d
    and return the feasible grid point closest to y.

    `contains` is a predicate on points.  Accuracy is the grid pitch, so
    callers must pick tolerances accordingly.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = y.shape[0]
    axes = [np.linspace(lo, hi, n) for _ in range(d)]
    best = None
    best_d2 = np.inf
    for pt in itertools.product(*axes):
        p = np.array(pt)
        if not contains(p):
            continue
        d2 = float(np.sum((p - y) ** 2))
        if d2 < best_d2:
            best_d2 = d2
            best = p
    if best is None:
        raise ValueError("no feasible grid point found")
    return best, np.sqrt(best_d2)


def cone_grid_project(in_cone, u, radius, n=161):
    """Brute-force projection of u onto a cone given by a membership
    predicate, via grid search over [-radius, radius]^d."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    d = u.shape[0]
    axes = [np.linspace(-radius, radius, n) for _ in range(d)]
    best = None
    best_d2 = np.inf
    for pt in itertools.product(*axes):
        p = np.array(pt)
        if not in_cone(p):
            continue
        d2 = float(np.sum((p - u) ** 2))
        if d2 < best_d2:
            best_d2 = d2
            best = p
    if best is None:
        raise ValueError("no cone grid point accepted")
    return best


def clamp_interval(y, lo, hi):
    """1-D interval projection, written out longhand."""
    if y < lo:
        return lo
    if y > hi:
        return hi
    return y


def onedim_flow(a, b, x0, t):
    """Reference trajectory for the scalar model on the halfline.

    Solves x' = -(a+1) x + b while x > 0, by the standard linear-ODE
    formula; if b <= 0 the state hits zero in finite time and stays.
    """
    rate = a + 1.0
    xeq = b / rate
    t = np.asarray(t, dtype=float)
    x_unc = xeq + (x0 - xeq) * np.exp(-rate * t)
    if b > 0 or (b <= 0 and x0 <= 0):
        return np.maximum(x_unc, 0.0)
    # b <= 0, x0 > 0: zero crossing at exp(-rate t) = -xeq / (x0 - xeq)
    t_hit = np.log((x0 - xeq) / (-xeq)) / rate if xeq < 0 else np.inf
    out = np.where(t < t_hit, x_unc, 0.0)
    return np.maximum(out, 0.0)


def onedim_hit_time(a, b, x0):
    """Time at which the scalar flow reaches the constraint, inf if never."""
    rate = a + 1.0
    xeq = b / rate
    if b > 0 or x0 <= 0:
        return np.inf if x0 > 0 or b > 0 else 0.0
    if xeq == 0:
        return np.inf
    return float(np.log((x0 - xeq) / (-xeq)) / rate)


def catching_up_halfline(a, b, x0, mu, n):
    """Transcribe the scalar scheme by hand: y = x + mu(-(a+1)x + b),
    x_next = max(y, 0).  Independent of the package's stepping loop."""
    xs = [x0]
    x = x0
    for _ in range(n):
        y = x + mu * (-(a + 1.0) * x + b)
        x = max(y, 0.0)
        xs.append(x)
    return np.array(xs)
