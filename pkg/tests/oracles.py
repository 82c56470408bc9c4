"""Independent reference computations shared by the unit and acceptance tests."""

import math

import numpy as np


def design(spec, m, group):
    """Dense per-subject design of the slope or unstructured model."""
    t = np.asarray(spec.schedule)
    p = spec.n_params
    x = np.zeros((m, p))
    x[:, :m] = np.eye(m)
    if group == 1:
        if spec.effect_kind == "slope":
            x[:, m] = t
        else:
            x[:, m:] = np.eye(m)
    return x


def dense_neg2_reml(data, spec, t2, s2):
    """-2 restricted log-likelihood from explicit per-subject matrices."""
    times, grp, y = data.wide()
    n, m = y.shape
    p = spec.n_params
    v = s2 * np.eye(m) + t2 * np.ones((m, m))
    vinv = np.linalg.inv(v)
    xs = [design(spec, m, g) for g in grp]
    a = sum(x.T @ vinv @ x for x in xs)
    b = sum(x.T @ vinv @ yi for x, yi in zip(xs, y))
    beta = np.linalg.solve(a, b)
    quad = sum((yi - x @ beta) @ vinv @ (yi - x @ beta) for x, yi in zip(xs, y))
    return (n * m - p) * math.log(2 * math.pi) + n * np.linalg.slogdet(v)[1] + np.linalg.slogdet(a)[1] + quad


def closed_form_cs(data):
    """Between/within mean-square decomposition for free group-by-visit means."""
    _, grp, y = data.wide()
    n, m = y.shape
    within = between = 0.0
    for g in (0, 1):
        yg = y[grp == g]
        r = yg - yg.mean(axis=0)
        subj = r.mean(axis=1)
        within += np.sum((r - subj[:, None]) ** 2)
        between += m * np.sum(subj**2)
    s2 = within / ((n - 2) * (m - 1))
    lam2 = between / (n - 2)
    return s2, (lam2 - s2) / m
