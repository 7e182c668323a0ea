"""Exact, simulation-free references on the lattice of partial sums.

All recursions index the running sum ``s`` by its offset from the lower corner of
a box that contains every reachable value, and keep two layers in memory.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .chain import AdditiveFunctional, FiniteChain
from .errors import DomainError, MemoryBound, NotLattice
from .estimators import BoundPolicy, Naive, _bind, static_alpha_with
from .largedev import DEFAULT_ALPHA_MAX, FeedbackController, HalfspaceDual, TiltFamily
from .target import TargetSet

DEFAULT_MEMORY_BYTES = 1 << 30
EXACT_CSV_COLUMNS = ("n", "p_n", "policy", "mean", "second_moment", "ratio")


@dataclass(frozen=True)
class LatticeBox:
    """Integer box ``[lo_k, hi_k]`` holding every partial sum of up to ``n`` terms."""

    lo: tuple[int, ...]
    hi: tuple[int, ...]

    @classmethod
    def for_horizon(cls, g: AdditiveFunctional, n: int) -> "LatticeBox":
        gi = g.g.astype(np.int64)
        lo = np.minimum(0, n * gi.min(axis=0))
        hi = np.maximum(0, n * gi.max(axis=0))
        return cls(tuple(int(t) for t in lo), tuple(int(t) for t in hi))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def volume(self) -> int:
        return math.prod(self.shape)

    def points(self) -> np.ndarray:
        """All lattice points, shape ``(*shape, d)``."""
        axes = [np.arange(l, h + 1) for l, h in zip(self.lo, self.hi)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).astype(float)

    def index(self, s) -> tuple[int, ...]:
        return tuple(int(round(v)) - l for v, l in zip(s, self.lo))


def _require_lattice(g: AdditiveFunctional):
    if not g.lattice:
        raise NotLattice("exact recursions need an additive functional flagged as lattice")


def _prepare(chain, g, n, memory_bytes):
    _require_lattice(g)
    if n < 1:
        raise DomainError("horizon n must be at least 1")
    box = LatticeBox.for_horizon(g, n)
    need = 2 * chain.n_states * box.volume * 8
    if need > memory_bytes:
        raise MemoryBound(f"lattice recursion needs {need} bytes, budget is {memory_bytes}")
    return box


def _shift(layer: np.ndarray, offset) -> np.ndarray:
    """``out[s] = layer[s + offset]`` with zeros outside the box."""
    out = np.zeros_like(layer)
    src, dst = [], []
    for o, size in zip(offset, layer.shape):
        o = int(o)
        if abs(o) >= size:
            return out
        src.append(slice(max(o, 0), size + min(o, 0)))
        dst.append(slice(max(-o, 0), size - max(o, 0)))
    out[tuple(dst)] = layer[tuple(src)]
    return out


def _terminal(box: LatticeBox, A: TargetSet, n: int) -> np.ndarray:
    pts = box.points()
    flat = A.contains(pts.reshape(-1, pts.shape[-1]) / n)
    return flat.reshape(box.shape).astype(float)


def exact_probability(chain: FiniteChain, g: AdditiveFunctional, A: TargetSet, n: int,
                      memory_bytes: int = DEFAULT_MEMORY_BYTES) -> float:
    """``P{S_n / n in A}`` by backward recursion over ``(state, partial sum)``.

    ``psi_k(y, s)`` is the probability of ending in ``A`` given ``Y_k = y`` and
    ``S_k = s``; ``psi_k(y, s) = sum_z P(y, z) psi_{k+1}(z, s + g(y))``.
    """
    box = _prepare(chain, g, n, memory_bytes)
    m = chain.n_states
    G = g.g.astype(np.int64)
    term = _terminal(box, A, n)
    psi = np.broadcast_to(term, (m, *box.shape)).copy()
    P = chain.P
    for _ in range(n):
        T = (P @ psi.reshape(m, -1)).reshape(psi.shape)
        psi = np.stack([_shift(T[y], G[y]) for y in range(m)])
    return float(psi[(chain.y0, *box.index(np.zeros(g.d)))])


def _negbin_pmf(m: int, q: float, i: int) -> float:
    """``P{N = i}`` for ``N`` the failures before the ``m``-th success, success prob ``q``."""
    return math.exp(math.lgamma(i + m) - math.lgamma(m) - math.lgamma(i + 1)
                    + m * math.log(q) + i * math.log1p(-q))


def _negbin_cdf(m: int, q: float, k: int) -> float:
    if k < 0:
        return 0.0
    if m == 0:
        return 1.0
    return min(math.fsum(_negbin_pmf(m, q, i) for i in range(k + 1)), 1.0)


def _negbin_sf(m: int, q: float, k: int) -> float:
    """``P{N > k}`` summed directly, so small upper tails keep full relative precision."""
    if m == 0:
        return 0.0
    terms = []
    i = max(k + 1, 0)
    while True:
        t = _negbin_pmf(m, q, i)
        terms.append(t)
        # past the mode the terms decay at least geometrically
        if i > m * (1 - q) / q + 1 and t < 1e-18 * math.fsum(terms):
            return math.fsum(terms)
        i += 1


def two_state_exact(p: float, a: float, b: float, n: int) -> float:
    """Closed-form ``P{S_n/n <= a} + P{S_n/n >= b}`` for the two-state preset.

    With ``X`` the number of visits to ``-1`` among ``Y_0..Y_{n-1}``, ``S_n = n - 2X``.
    The ``m``-th visit happens at index ``T_m`` and ``T_m - 2m + 1`` is negative
    binomial with ``m`` successes of probability ``1 - p``, so
    ``P{X >= m} = P{NegBin(m, 1-p) <= n - 2m}``.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    if not 0.0 < a < b < 1.0:
        raise DomainError(f"need 0 < a < b < 1, got a={a}, b={b}")
    if n < 1:
        raise DomainError("horizon n must be at least 1")
    tol = 1e-12
    q = 1.0 - p
    # S/n <= a  <=>  X >= n(1 - a)/2
    m_low = max(math.ceil(n * (1 - a) / 2 - tol), 0)
    lower = _negbin_cdf(m_low, q, n - 2 * m_low)
    # S/n >= b  <=>  X <= n(1 - b)/2  <=>  not (X >= m_high + 1)
    m_high = math.floor(n * (1 - b) / 2 + tol)
    upper = _negbin_sf(m_high + 1, q, n - 2 * (m_high + 1)) if m_high >= 0 else 0.0
    return lower + upper


# ---------------------------------------------------------------------------
# Fixed-policy moments


class PolicyMoments(NamedTuple):
    mean: float
    second_moment: float


def _reachable_sums(chain, G, box, n):
    """Boolean masks over the box: ``reach[j][s]`` iff ``S_j = s`` is reachable, j = 1..n."""
    m = chain.n_states
    support = chain.P > 0
    state = np.zeros((m, *box.shape), dtype=bool)
    state[(chain.y0, *box.index(G[chain.y0]))] = True
    masks = {1: state.any(axis=0)}
    for j in range(2, n + 1):
        nxt = np.zeros_like(state)
        occupied = state.reshape(m, -1).any(axis=1)
        for z in range(m):
            sources = occupied & support[:, z]
            if sources.any():
                nxt[z] = _shift(state[sources].any(axis=0), -G[z])
        state = nxt
        masks[j] = state.any(axis=0)
    return masks


def _moment(chain, fam, bound: BoundPolicy, A, n, box, q, reach) -> float:
    m = chain.n_states
    G = fam.G.astype(np.int64)
    Gf = fam.G
    pts = box.points().reshape(-1, fam.d)
    M = np.broadcast_to(_terminal(box, A, n), (m, *box.shape)).copy()
    for j in range(n - 1, 0, -1):
        # N(z, s) = M_{j+1}(z, s + g(z))
        N = np.stack([_shift(M[z], G[z]) for z in range(m)]).reshape(m, -1)
        out = np.zeros((m, box.volume))
        cols = np.flatnonzero(reach[j].reshape(-1))
        groups: dict[int, tuple] = {}
        bound.prefetch(pts[cols] / n, j, n)
        for col in cols:
            data = bound.tilt(pts[col] / n, j, n)
            groups.setdefault(id(data), (data, []))[1].append(col)
        for data, idx in groups.values():
            w = np.exp(-(Gf @ data.alpha) + data.H)[None, :] * data.r[:, None] / data.r[None, :]
            kernel = data.Q_alpha * w**q
            idx = np.asarray(idx)
            out[:, idx] = kernel @ N[:, idx]
        M = out.reshape(m, *box.shape)
    return float(M[(chain.y0, *box.index(Gf[chain.y0]))])


def policy_moments(chain: FiniteChain, g: AdditiveFunctional, A: TargetSet, policy, n: int,
                   fam: TiltFamily | None = None,
                   memory_bytes: int = DEFAULT_MEMORY_BYTES) -> PolicyMoments:
    """Exact mean and second moment of the weighted estimator under a fixed policy.

    ``M_j(y, s) = sum_z Q(y, z) w(y, z)^q M_{j+1}(z, s + g(z))`` for ``j = n-1..1``
    with the tilt chosen by the policy at ``(s / n, j)``, started from
    ``M_n = 1{s/n in A}``; ``q = 1`` gives the mean and ``q = 2`` the second moment.
    """
    box = _prepare(chain, g, n, memory_bytes)
    fam = fam or TiltFamily(chain, g)
    if n == 1:
        hit = float(A.contains(fam.G[chain.y0]))
        return PolicyMoments(hit, hit)
    bound = _bind(policy, fam, A)
    reach = _reachable_sums(chain, fam.G.astype(np.int64), box, n)
    return PolicyMoments(_moment(chain, fam, bound, A, n, box, 1, reach),
                         _moment(chain, fam, bound, A, n, box, 2, reach))


@dataclass(frozen=True)
class ExactResult:
    n: int
    p_n: float
    policy: str | None = None
    policy_mean: float | None = None
    policy_second_moment: float | None = None
    ratio: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(EXACT_CSV_COLUMNS)
        w.writerow([self.n, repr(self.p_n), self.policy or "",
                    "" if self.policy_mean is None else repr(self.policy_mean),
                    "" if self.policy_second_moment is None else repr(self.policy_second_moment),
                    "" if self.ratio is None else repr(self.ratio)])
        return buf.getvalue()


def log_ratio(second_moment: float, p: float) -> float | None:
    """``(-log second_moment) / (-log p)``; 2 is the best any unbiased scheme can do."""
    if not (0 < p < 1 and second_moment > 0):
        return None
    return math.log(second_moment) / math.log(p)


def exact_result(chain: FiniteChain, g: AdditiveFunctional, A: TargetSet, n: int,
                 policy=None, fam: TiltFamily | None = None) -> ExactResult:
    p = exact_probability(chain, g, A, n)
    if policy is None:
        return ExactResult(n, p)
    mom = policy_moments(chain, g, A, policy, n, fam=fam)
    name = getattr(policy, "name", "custom")
    return ExactResult(n, p, name, mom.mean, mom.second_moment, log_ratio(mom.second_moment, p))


# ---------------------------------------------------------------------------
# Asymptotic decay rates


class DecayRates(NamedTuple):
    naive: float
    optimal: float
    static: float
    static_beta: np.ndarray
    static_index: int


def decay_rates(chain: FiniteChain, g: AdditiveFunctional, A: TargetSet,
                alpha_max: float = DEFAULT_ALPHA_MAX,
                fam: TiltFamily | None = None) -> DecayRates:
    """Exponential decay rates of the second moment for the three schemes.

    Naive decays at ``inf_A L``, the optimum is ``2 inf_A L``, and the static twist
    ``a*`` achieves ``inf_A [<a*, beta> - H(a*) + L(beta)]``. The last is computed
    per halfspace with the dual of the tilted rate, whose conjugate is
    ``H(. - a*) + H(a*)``.
    """
    fam = fam or TiltFamily(chain, g)
    rate = FeedbackController(fam, A, alpha_max).rate()
    a_star = static_alpha_with(fam, A, alpha_max)
    H_star = fam.H(a_star)
    best = None
    for i, (v, c) in enumerate(zip(A.normals, A.offsets)):
        hc = HalfspaceDual(fam, v, alpha_max, base=-a_star).solve(float(c))
        val = hc.cost - H_star
        if best is None or val < best[0]:
            best = (val, hc.beta, i)
    return DecayRates(rate.value, 2 * rate.value, best[0], best[1], best[2])


__all__ = [
    "LatticeBox", "exact_probability", "two_state_exact", "policy_moments", "PolicyMoments",
    "ExactResult", "exact_result", "decay_rates", "DecayRates", "log_ratio",
]
