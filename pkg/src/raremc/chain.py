"""Finite Markov chains, additive functionals and the two model presets."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import (
    DomainError,
    NegativeEntry,
    Periodic,
    RatesNotNormalized,
    Reducible,
    RowSumViolation,
    UnstableSystem,
)
from .target import TargetSet

ROW_SUM_TOL = 1e-12
JSON_ROW_SUM_TOL = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FiniteChain:
    """Time-homogeneous chain on ``{0, ..., n_states - 1}`` started at ``y0``."""

    P: np.ndarray
    y0: int = 0
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        P = _readonly(self.P)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
            raise DomainError(f"transition matrix must be square, got shape {P.shape}")
        if not 0 <= self.y0 < P.shape[0]:
            raise DomainError(f"initial state {self.y0} out of range")
        _check_stochastic(P, ROW_SUM_TOL)
        if self.labels is not None and len(self.labels) != P.shape[0]:
            raise DomainError("one label per state required")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "y0", int(self.y0))

    @property
    def n_states(self) -> int:
        return self.P.shape[0]


@dataclass(frozen=True)
class AdditiveFunctional:
    """Per-state reward ``g(y)`` in R^d, stored as an ``(n_states, d)`` array.

    ``lattice=True`` asserts integer values; the exact oracles require it.
    """

    g: np.ndarray
    lattice: bool = False

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        if g.ndim != 2:
            raise DomainError("g must be a vector or an (n_states, d) array")
        if not np.all(np.isfinite(g)):
            raise DomainError("g must be finite")
        if self.lattice and not np.array_equal(g, np.round(g)):
            raise DomainError("lattice flag set but g has non-integer entries")
        object.__setattr__(self, "g", _readonly(g))

    @property
    def d(self) -> int:
        return self.g.shape[1]

    @property
    def n_states(self) -> int:
        return self.g.shape[0]


@dataclass(frozen=True)
class ValidationReport:
    irreducible: bool
    period: int
    m0: int | None = field(default=None)


def _check_stochastic(P: np.ndarray, tol: float) -> None:
    if np.any(P < 0):
        i, j = np.argwhere(P < 0)[0]
        raise NegativeEntry(f"P[{i},{j}] = {P[i, j]} is negative")
    dev = np.abs(P.sum(axis=1) - 1.0)
    if np.any(dev > tol):
        i = int(np.argmax(dev))
        raise RowSumViolation(f"row {i} sums to {P[i].sum()!r}")


def _period(support: np.ndarray) -> int:
    # gcd of level differences along edges of a BFS tree from state 0
    order, pred = breadth_first_order(support, 0, directed=True)
    level = np.full(support.shape[0], -1)
    for v in order:
        level[v] = 0 if pred[v] < 0 else level[pred[v]] + 1
    rows, cols = np.nonzero(support)
    period = 0
    for u, v in zip(rows, cols):
        period = math.gcd(period, int(level[u] + 1 - level[v]))
    return period


def _primitivity_index(support: np.ndarray) -> int | None:
    m = support.shape[0]
    B = support.astype(np.int64)
    power = B.copy()
    for k in range(1, m * m + 1):
        if power.all():
            return k
        power = np.minimum(power @ B, 1)
    return None


def validate_chain(P, y0: int = 0) -> ValidationReport:
    """Check stochasticity, irreducibility and aperiodicity of ``P``.

    On a finite state space these three together give uniform recurrence.
    ``m0`` is the smallest power with ``P**m0`` entrywise positive.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DomainError(f"transition matrix must be square, got shape {P.shape}")
    if not 0 <= y0 < P.shape[0]:
        raise DomainError(f"initial state {y0} out of range")
    _check_stochastic(P, ROW_SUM_TOL)
    support = P > 0
    n_comp, _ = connected_components(support, directed=True, connection="strong")
    if n_comp != 1:
        raise Reducible(f"support graph has {n_comp} strongly connected components")
    period = _period(support)
    if period != 1:
        raise Periodic(f"chain has period {period}")
    return ValidationReport(irreducible=True, period=1, m0=_primitivity_index(support))


def build_two_state(p: float) -> tuple[FiniteChain, AdditiveFunctional]:
    """Two-state chain on ``{+1, -1}`` with ``P = [[p, 1-p], [1, 0]]`` and ``g(x) = x``."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    chain = FiniteChain(np.array([[p, 1.0 - p], [1.0, 0.0]]), y0=0, labels=("+1", "-1"))
    return chain, AdditiveFunctional(np.array([[1.0], [-1.0]]), lattice=True)


def tandem_index(y1: int, y2: int, B2: int) -> int:
    return y1 * (B2 + 1) + y2


TANDEM_CONVENTIONS = ("uniformized", "jump")


def build_tandem(lam: float, mu1: float, mu2: float, B1: int, B2: int,
                 eps1: float, eps2: float, convention: str = "uniformized"):
    """Embedded chain of a two-node tandem queue with finite buffers.

    State ``(y1, y2)`` is flattened row-major. Arrivals to a full first buffer
    are lost; a node-1 completion into a full second buffer leaves the system.
    With ``convention="uniformized"`` infeasible events become self-loops.
    With ``"jump"`` the chain only records actual state changes: self-loops are
    dropped and each row renormalized over the remaining events.
    ``g(y) = (1{y1=B1}, 1{y2=B2})`` and the target is ``{x1 >= eps1} U {x2 >= eps2}``.
    """
    if convention not in TANDEM_CONVENTIONS:
        raise DomainError(f"unknown tandem convention {convention!r}")
    if min(lam, mu1, mu2) <= 0:
        raise DomainError("rates must be positive")
    if abs(lam + mu1 + mu2 - 1.0) > 1e-12:
        raise RatesNotNormalized(f"lambda + mu1 + mu2 = {lam + mu1 + mu2}, expected 1")
    if not lam < min(mu1, mu2):
        raise UnstableSystem(f"need lambda < min(mu1, mu2), got {lam} >= {min(mu1, mu2)}")
    if B1 < 1 or B2 < 1:
        raise DomainError("buffer sizes must be at least 1")

    m = (B1 + 1) * (B2 + 1)
    P = np.zeros((m, m))
    g = np.zeros((m, 2))
    labels = []
    for y1 in range(B1 + 1):
        for y2 in range(B2 + 1):
            i = tandem_index(y1, y2, B2)
            labels.append(f"({y1},{y2})")
            g[i] = (y1 == B1, y2 == B2)
            P[i, tandem_index(min(y1 + 1, B1), y2, B2)] += lam
            if y1 > 0:
                P[i, tandem_index(y1 - 1, min(y2 + 1, B2), B2)] += mu1
            else:
                P[i, i] += mu1
            P[i, tandem_index(y1, max(y2 - 1, 0), B2)] += mu2
    diag = np.arange(m)
    if convention == "jump":
        P[diag, diag] = 0.0
        P /= P.sum(axis=1, keepdims=True)
    # absorb the rounding into the diagonal (uniformized) or the largest entry (jump)
    if convention == "uniformized":
        P[diag, diag] += 1.0 - P.sum(axis=1)
    else:
        P[diag, P.argmax(axis=1)] += 1.0 - P.sum(axis=1)
    chain = FiniteChain(P, y0=tandem_index(0, 0, B2), labels=tuple(labels))
    target = TargetSet.any_exceeds([eps1, eps2])
    return chain, AdditiveFunctional(g, lattice=True), target


def chain_to_dict(chain: FiniteChain, g: AdditiveFunctional) -> dict:
    states = list(chain.labels) if chain.labels else list(range(chain.n_states))
    return {
        "states": states,
        "P": chain.P.tolist(),
        "y0": chain.y0,
        "g": g.g.tolist(),
        "lattice": bool(g.lattice),
    }


def chain_from_dict(doc: dict) -> tuple[FiniteChain, AdditiveFunctional]:
    """Inverse of :func:`chain_to_dict`; rows are renormalized after a 1e-9 check."""
    try:
        P = np.asarray(doc["P"], dtype=float)
        g = np.asarray(doc["g"], dtype=float)
        y0 = int(doc.get("y0", 0))
        states = doc.get("states")
        lattice = bool(doc.get("lattice", False))
    except (KeyError, TypeError, ValueError) as exc:
        raise DomainError(f"malformed chain document: {exc}") from exc
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DomainError(f"transition matrix must be square, got shape {P.shape}")
    _check_stochastic(P, JSON_ROW_SUM_TOL)
    P = P / P.sum(axis=1, keepdims=True)
    labels = tuple(str(s) for s in states) if states is not None else None
    chain = FiniteChain(P, y0=y0, labels=labels)
    func = AdditiveFunctional(g, lattice=lattice)
    if func.n_states != chain.n_states:
        raise DomainError("g must have one row per state")
    return chain, func


def chain_to_json(chain: FiniteChain, g: AdditiveFunctional) -> str:
    return json.dumps(chain_to_dict(chain, g))


def chain_from_json(text: str) -> tuple[FiniteChain, AdditiveFunctional]:
    return chain_from_dict(json.loads(text))
