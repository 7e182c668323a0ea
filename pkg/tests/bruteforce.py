"""Path-enumeration oracles, deliberately naive and independent of the recursions."""

import itertools
import math

import numpy as np


def paths(chain, n):
    """Yield every positive-probability path ``(y0, ..., y_{n-1})`` with its probability."""
    P = chain.P
    m = chain.n_states
    for tail in itertools.product(range(m), repeat=n - 1):
        path = (chain.y0, *tail)
        prob = 1.0
        for a, b in zip(path, path[1:]):
            prob *= P[a, b]
            if prob == 0.0:
                break
        if prob > 0.0:
            yield path, prob


def probability(chain, g, A, n):
    G = g.g
    return math.fsum(prob for path, prob in paths(chain, n)
                     if A.contains(G[list(path)].sum(axis=0) / n))


def moments(chain, g, A, bound, n):
    """Mean and second moment of the weighted indicator, summing over paths under Q."""
    G = g.g
    first, second = [], []
    for path, _ in paths(chain, n):
        s = G[path[0]].copy()
        q_prob, log_w = 1.0, 0.0
        for j in range(1, n):
            y, z = path[j - 1], path[j]
            data = bound.tilt(s / n, j, n)
            q_prob *= data.Q_alpha[y, z]
            log_w += (-float(data.alpha @ G[z]) + data.H
                      + math.log(data.r[y]) - math.log(data.r[z]))
            s = s + G[z]
        if q_prob > 0 and A.contains(s / n):
            first.append(q_prob * math.exp(log_w))
            second.append(q_prob * math.exp(2 * log_w))
    return math.fsum(first), math.fsum(second)
