"""Monte Carlo estimators of ``p_n = P{S_n / n in A}``: naive, static and adaptive.

Replication ``k`` draws its uniforms from its own stream ``default_rng([seed, k])``,
so any replication can be reproduced alone and results do not depend on how
replications are scheduled across workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .chain import AdditiveFunctional, FiniteChain
from .errors import DomainError
from .largedev import (
    DEFAULT_ALPHA_MAX,
    LAMBDA_QUANTUM,
    FeedbackController,
    SpectralData,
    TiltFamily,
)
from .target import TargetSet

Z95 = 1.96
CSV_COLUMNS = ("scheme", "n", "K", "seed", "p_hat", "std_err", "ci_lo", "ci_hi",
               "second_moment", "ratio")


# ---------------------------------------------------------------------------
# Policies


class Naive:
    """Simulate under the original kernel (tilt 0)."""

    name = "naive"

    def bind(self, fam: TiltFamily, target: TargetSet) -> "BoundPolicy":
        data = fam.untilted()
        return BoundPolicy(self.name, lambda x, j, n: data)


@dataclass(frozen=True)
class Static:
    """One fixed tilt for the whole trajectory (open-loop control)."""

    alpha: tuple[float, ...]
    name = "static"

    def __init__(self, alpha):
        object.__setattr__(self, "alpha", tuple(np.atleast_1d(np.asarray(alpha, float)).tolist()))

    def bind(self, fam: TiltFamily, target: TargetSet) -> "BoundPolicy":
        if len(self.alpha) != fam.d:
            raise DomainError("static tilt dimension does not match g")
        data = fam.cached(np.asarray(self.alpha))
        return BoundPolicy(self.name, lambda x, j, n: data)


@dataclass(frozen=True)
class Adaptive:
    """Feedback tilt recomputed at every step from the running mean.

    ``target=None`` steers toward the set being estimated. The multiplier is
    rounded to a ``1e-6`` grid before use; the same rounded tilt drives both the
    sampling kernel and the likelihood ratio.
    """

    target: TargetSet | None = None
    alpha_max: float = DEFAULT_ALPHA_MAX
    name = "adaptive"

    def bind(self, fam: TiltFamily, target: TargetSet) -> "BoundPolicy":
        ctrl = FeedbackController(fam, self.target or target, self.alpha_max)
        normals = ctrl.target.normals
        memo: dict[tuple, SpectralData] = {}

        def tilt(x, j, n):
            key = (x.tobytes(), j, n)
            hit = memo.get(key)
            if hit is None:
                cp = ctrl.control(x, j, n)
                q = round(cp.alpha_star @ normals[cp.halfspace_index]
                          / (normals[cp.halfspace_index] @ normals[cp.halfspace_index])
                          / LAMBDA_QUANTUM)
                hit = fam.cached(q * LAMBDA_QUANTUM * normals[cp.halfspace_index] + 0.0)
                memo[key] = hit
            return hit

        def prefetch(xs, j, n):
            fresh = [x for x in xs if (x.tobytes(), j, n) not in memo]
            if fresh:
                ctrl.prefetch(np.array(fresh), j, n)

        return BoundPolicy(self.name, tilt, ctrl, prefetch)


class BoundPolicy:
    """A policy attached to one tilt family: ``tilt(x, j, n) -> SpectralData``."""

    def __init__(self, name, fn, controller=None, prefetch=None):
        self.name = name
        self._fn = fn
        self.controller = controller
        self._prefetch = prefetch

    def tilt(self, x, j: int, n: int) -> SpectralData:
        return self._fn(np.asarray(x, dtype=float), j, n)

    def prefetch(self, xs, j: int, n: int) -> None:
        """Hint that ``tilt`` is about to be called at each row of ``xs``."""
        if self._prefetch is not None:
            self._prefetch(np.asarray(xs, dtype=float), j, n)


def make_policy(scheme: str, fam: TiltFamily, target: TargetSet,
                alpha_max: float = DEFAULT_ALPHA_MAX):
    """Policy object for a scheme name; ``static`` uses :func:`static_alpha_for`."""
    if scheme == "naive":
        return Naive()
    if scheme == "static":
        return Static(static_alpha_with(fam, target, alpha_max))
    if scheme == "adaptive":
        return Adaptive(target, alpha_max)
    raise DomainError(f"unknown scheme {scheme!r}")


def _bind(policy, fam, target) -> BoundPolicy:
    return policy if isinstance(policy, BoundPolicy) else policy.bind(fam, target)


def static_alpha_with(fam: TiltFamily, A: TargetSet, alpha_max: float = DEFAULT_ALPHA_MAX):
    return FeedbackController(fam, A, alpha_max).rate().alpha + 0.0


def static_alpha_for(chain: FiniteChain, g: AdditiveFunctional, A: TargetSet,
                     alpha_max: float = DEFAULT_ALPHA_MAX) -> np.ndarray:
    """Tilt conjugate to the minimizer of ``L`` over ``A`` (the traditional twist)."""
    return static_alpha_with(TiltFamily(chain, g), A, alpha_max)


# ---------------------------------------------------------------------------
# Single trajectory


class Trajectory(NamedTuple):
    hit: int
    log_weight: float
    terminal_mean: np.ndarray


def _sampling_cdf(Q: np.ndarray) -> np.ndarray:
    # index = #{k : u >= cdf[k]}; entries from the last positive one on are
    # set to inf so zero-probability states are never returned
    cdf = np.cumsum(Q, axis=-1)
    last = Q.shape[-1] - 1 - np.argmax((Q > 0)[..., ::-1], axis=-1)
    cols = np.arange(Q.shape[-1])
    return np.where(cols >= last[..., None], np.inf, cdf)


def run_trajectory(chain: FiniteChain, g: AdditiveFunctional, A: TargetSet, policy, n: int,
                   rng: np.random.Generator, fam: TiltFamily | None = None) -> Trajectory:
    """Simulate one path under ``policy`` and return its indicator and log weight.

    For ``j = 1..n-1`` the tilt is chosen from ``S_j / n`` and the next state is
    drawn from the twisted kernel with one uniform. The log weight collects
    ``-<alpha, g(Y_j)> + H(alpha) + log r(Y_{j-1}) - log r(Y_j)``.
    """
    if n < 1:
        raise DomainError("horizon n must be at least 1")
    fam = fam or TiltFamily(chain, g)
    bound = _bind(policy, fam, A)
    G = fam.G
    y = chain.y0
    s = G[y].copy()
    log_w = 0.0
    for j in range(1, n):
        data = bound.tilt(s / n, j, n)
        u = rng.random()
        y_next = int(np.sum(u >= _sampling_cdf(data.Q_alpha[y])))
        log_w += (-float(data.alpha @ G[y_next]) + data.H
                  + math.log(data.r[y]) - math.log(data.r[y_next]))
        y = y_next
        s = s + G[y]
    mean = s / n
    return Trajectory(int(A.contains(mean)), log_w, mean)


# ---------------------------------------------------------------------------
# Batch estimation


@dataclass(frozen=True)
class EstimateResult:
    scheme: str
    n: int
    K: int
    seed: int
    p_hat: float
    std_err: float
    ci95: tuple[float, float]
    second_moment: float
    ratio: float | None

    @property
    def W(self) -> float | None:
        """``-(1/n) log`` of the estimated second moment."""
        return -math.log(self.second_moment) / self.n if self.second_moment > 0 else None

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["ci95"] = list(self.ci95)
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(CSV_COLUMNS)
        w.writerow([self.scheme, self.n, self.K, self.seed, repr(self.p_hat), repr(self.std_err),
                    repr(self.ci95[0]), repr(self.ci95[1]), repr(self.second_moment),
                    "" if self.ratio is None else repr(self.ratio)])
        return buf.getvalue()

    @classmethod
    def from_csv_row(cls, row: dict) -> "EstimateResult":
        return cls(row["scheme"], int(row["n"]), int(row["K"]), int(row["seed"]),
                   float(row["p_hat"]), float(row["std_err"]),
                   (float(row["ci_lo"]), float(row["ci_hi"])), float(row["second_moment"]),
                   float(row["ratio"]) if row["ratio"] else None)


def replication_stream(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, k])


def _uniforms(seed: int, start: int, stop: int, width: int) -> np.ndarray:
    U = np.empty((stop - start, width))
    for row, k in enumerate(range(start, stop)):
        U[row] = replication_stream(seed, k).random(width)
    return U


def _simulate_block(fam: TiltFamily, bound: BoundPolicy, A: TargetSet, n: int, y0: int,
                    U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Advance a block of replications together; row ``k`` of ``U`` feeds replication ``k``."""
    G = fam.G
    K = U.shape[0]
    y = np.full(K, y0)
    S = np.tile(G[y0], (K, 1))
    log_w = np.zeros(K)
    for j in range(1, n):
        X = S / n
        if fam.d == 1:
            xs, inv = np.unique(X[:, 0], return_inverse=True)
            xs = xs[:, None]
        else:
            xs, inv = np.unique(X, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        bound.prefetch(xs, j, n)
        tilts = [bound.tilt(x, j, n) for x in xs]
        cdfs = np.stack([_sampling_cdf(t.Q_alpha) for t in tilts])
        logr = np.stack([t.log_r for t in tilts])
        Hs = np.array([t.H for t in tilts])
        alphas = np.stack([t.alpha for t in tilts])
        y_next = np.sum(U[:, j - 1, None] >= cdfs[inv, y], axis=1)
        log_w += (-np.einsum("kd,kd->k", alphas[inv], G[y_next]) + Hs[inv]
                  + logr[inv, y] - logr[inv, y_next])
        y = y_next
        S += G[y]
    return A.contains(S / n).astype(float), log_w


def _workers(requested: int | None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("RAREMC_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def simulate_replications(chain: FiniteChain, g: AdditiveFunctional, A: TargetSet, policy,
                          n: int, K: int, seed: int, fam: TiltFamily | None = None,
                          workers: int | None = None, block: int = 4096):
    """Per-replication ``(hit, log_weight)`` arrays in replication order."""
    if n < 1:
        raise DomainError("horizon n must be at least 1")
    fam = fam or TiltFamily(chain, g)
    bound = _bind(policy, fam, A)
    if n == 1:
        hit = float(A.contains(fam.G[chain.y0]))
        return np.full(K, hit), np.zeros(K)
    # warm shared caches before any fan-out
    bound.tilt(fam.G[chain.y0] / n, 1, n)
    spans = [(a, min(a + block, K)) for a in range(0, K, block)]

    def work(span):
        U = _uniforms(seed, span[0], span[1], n - 1)
        return _simulate_block(fam, bound, A, n, chain.y0, U)

    nw = _workers(workers)
    if nw > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=nw) as pool:
            parts = list(pool.map(work, spans))
    else:
        parts = [work(s) for s in spans]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def summarize(scheme: str, n: int, seed: int, hits: np.ndarray, log_w: np.ndarray) -> EstimateResult:
    K = hits.size
    vals = np.where(hits > 0, np.exp(log_w), 0.0)
    p_hat = float(vals.mean())
    second = float(np.mean(vals**2))
    std_err = float(vals.std(ddof=1) / math.sqrt(K))
    ratio = math.log(second) / math.log(p_hat) if 0 < p_hat != 1 and second > 0 else None
    return EstimateResult(scheme, n, K, seed, p_hat, std_err,
                          (p_hat - Z95 * std_err, p_hat + Z95 * std_err), second, ratio)


def estimate(chain: FiniteChain, g: AdditiveFunctional, A: TargetSet, policy, n: int, K: int,
             seed: int, fam: TiltFamily | None = None, workers: int | None = None) -> EstimateResult:
    """Average ``K`` independent weighted indicators.

    ``ratio`` is ``log(second_moment) / log(p_hat)`` and is ``None`` when either
    estimate is degenerate (for example no replication reached the target).
    """
    if K < 2:
        raise DomainError("need at least two replications")
    hits, log_w = simulate_replications(chain, g, A, policy, n, K, seed, fam, workers)
    name = policy.name if hasattr(policy, "name") else "custom"
    return summarize(name, n, seed, hits, log_w)
