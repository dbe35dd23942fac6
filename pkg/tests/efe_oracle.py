"""Scalar re-derivation of the tree G, used as an oracle for the planner.

It shares nothing with the library except the node seeding rule and the
order in which noise is drawn, which define the estimator being checked.
"""

import math

import numpy as np


def head(net, x, d, offset=None):
    (w1, w2), (b1, b2) = net.weights, net.biases
    h = [math.tanh(sum(w1[j, i] * x[i] for i in range(len(x))) + b1[j]) for j in range(len(b1))]
    out = [sum(w2[k, j] * h[j] for j in range(len(h))) + b2[k] for k in range(len(b2))]
    mean = out[:d]
    if offset is not None:
        mean = [mu + o for mu, o in zip(mean, offset)]
    std = [math.log1p(math.exp(-abs(r))) + max(r, 0.0) + 1e-4 for r in out[d:]]
    return mean, std


def fit(rows):
    n, d = len(rows), len(rows[0])
    mean = [sum(r[i] for r in rows) / n for i in range(d)]
    var = [sum((r[i] - mean[i]) ** 2 for r in rows) / n for i in range(d)]
    return mean, [max(math.sqrt(v), 1e-4) for v in var]


def kl(qm, qs, pm, ps):
    return sum(
        math.log(ps[i] / qs[i]) + (qs[i] ** 2 + (qm[i] - pm[i]) ** 2) / (2 * ps[i] ** 2) - 0.5
        for i in range(len(qm))
    )


def ent(std):
    return sum(0.5 * math.log(2 * math.pi * math.e * s * s) for s in std)


def node(m, states, path, K, D, gamma, rho, pref, base):
    code = int("1" + "".join(str(a) for a in path), 2)
    rng = np.random.default_rng([base, code])
    onehot = [1.0 if i == path[-1] else 0.0 for i in range(2)]
    s = [list(r) for r in states]
    g = 0.0
    terms = []
    for _ in range(K):
        eps_s = rng.standard_normal((len(s), 4))
        eps_o = rng.standard_normal((len(s), 1))
        nxt, obs = [], []
        for n, row in enumerate(s):
            mu, sd = head(m.transition, row + onehot, 4, row if m.residual else None)
            new = [mu[i] + eps_s[n, i] * sd[i] for i in range(4)]
            lm, ls = head(m.likelihood, new, 1)
            nxt.append(new)
            obs.append([lm[0] + eps_o[n, 0] * ls[0]])
        s = nxt
        fm, fs = fit(s)
        _, os_ = fit(obs)
        k_term, h_term = kl(fm, fs, pref.mean, pref.std), ent(os_)
        terms.append((k_term, h_term))
        g += k_term + h_term / rho
    if D > 1:
        gs = [node(m, s, path + (a,), K, D - 1, gamma, rho, pref, base)[0] for a in (0, 1)]
        lo = min(gs)
        w = [math.exp(-gamma * (x - lo)) for x in gs]
        g += sum(wi * x for wi, x in zip(w, gs)) / sum(w)
    return g, terms


def root_values(m, states, K, D, gamma, rho, pref, base):
    return [node(m, [list(r) for r in states], (a,), K, D, gamma, rho, pref, base)[0] for a in (0, 1)]
