"""Independent reference implementations used by the tests.

Each oracle takes a different route to the answer than the library code
so that agreement is evidence of correctness rather than of shared bugs.
"""

from __future__ import annotations

import math
from itertools import combinations

import numpy as np
from scipy import integrate
from scipy.special import gammaln


def graph_metrics_bruteforce(nodes, edges, directed=False):
    """(nodes, edges, transitivity, mean_degree, long_tail) by enumerating every node triple."""
    nodes = list(nodes)
    n = len(nodes)
    if n == 0:
        return 0, 0, 0.0, 0.0, 0
    simple = {frozenset(e) for e in edges if e[0] != e[1]}
    deg = {v: 0 for v in nodes}
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    triangles = 0
    connected = 0
    for a, b, c in combinations(nodes, 3):
        k = sum(frozenset(p) in simple for p in ((a, b), (b, c), (a, c)))
        if k == 3:
            triangles += 1
            connected += 3
        elif k == 2:
            connected += 1
    trans = 3 * triangles / connected if connected else 0.0
    degrees = np.array(sorted(deg.values()))
    tail = int(np.percentile(degrees, 75, method="inverted_cdf"))
    return n, len(edges), trans, float(degrees.sum()) / n, tail


def interruption_bruteforce(points, start, end, top=3):
    """Sort every gap (lead, between, trail) descending and sum the first ``top``."""
    pts = sorted(p for p in points if start <= p <= end)
    if not pts:
        return 1.0
    cuts = [start, *pts, end]
    gaps = sorted((cuts[i + 1] - cuts[i] for i in range(len(cuts) - 1)), reverse=True)
    return sum(gaps[:top]) / (end - start)


def top_fraction_bruteforce(counts, share=0.10):
    counts = sorted(counts, reverse=True)
    k = max(1, math.ceil(share * len(counts) - 1e-12))
    return sum(counts[:k]) / sum(counts)


def _t_pdf(x, df):
    return math.exp(
        gammaln((df + 1) / 2) - gammaln(df / 2) - 0.5 * math.log(df * math.pi) - (df + 1) / 2 * math.log1p(x * x / df)
    )


def welch_pvalue_quadrature(a, b):
    """Two-sided Welch p-value with the t tail integrated by adaptive quadrature."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    tail, _ = integrate.quad(_t_pdf, abs(t), math.inf, args=(df,), epsabs=1e-13, epsrel=1e-12, limit=200)
    return t, 2 * tail


def weighted_ridge_normal_equations(Z, y, w, alpha):
    """Minimize sum(w r^2)/sum(w) + alpha |beta|^2 with a free intercept via the normal equations."""
    wn = w / w.sum()
    A = np.hstack([np.ones((Z.shape[0], 1)), Z])
    P = np.diag(np.r_[0.0, np.full(Z.shape[1], alpha)])
    lhs = A.T @ (wn[:, None] * A) + P
    rhs = A.T @ (wn * y)
    sol = np.linalg.solve(lhs, rhs)
    return sol[1:], sol[0]


def downturns_bruteforce(f, threshold=0.05):
    """Month (1-based) -> largest qualifying drop over a one- or two-month window."""
    out = {}
    for m in range(1, len(f) + 1):
        for lag in (1, 2):
            prev = m - lag
            if prev >= 1:
                d = f[prev - 1] - f[m - 1]
                if d > threshold:
                    out[m] = max(out.get(m, -math.inf), d)
    return out


def lstm_scalar_step(x, h, c, w=1.0, u=1.0, b=1.0):
    """One LSTM step with hidden size 1 and every gate sharing scalar weights."""

    def sig(z):
        return 1.0 / (1.0 + math.exp(-z))

    z = w * x + u * h + b
    i = f = o = sig(z)
    g = math.tanh(z)
    c_new = f * c + i * g
    return i, f, g, o, c_new, o * math.tanh(c_new)
