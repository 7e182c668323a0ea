"""Exponential tilting, the rate function, and the feedback control.

For a tilt ``alpha`` the nonnegative matrix ``M(i, j) = exp(<alpha, g(j)>) P(i, j)``
has Perron root ``exp(H(alpha))`` and positive right eigenvector ``r``. The
twisted kernel ``Q(i, j) = M(i, j) r(j) / (exp(H) r(i))`` is stochastic, and
``grad H`` is the mean of ``g`` under the stationary law of ``Q``. The rate
function ``L`` is the convex conjugate of ``H``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg
from scipy.optimize import brentq
from scipy.optimize.elementwise import find_root

from .chain import AdditiveFunctional, FiniteChain
from .errors import DomainError, NoConvergence
from .target import TargetSet

POWER_TOL = 1e-13
POWER_MAX_ITER = 100_000
POWER_MAX_SQUARINGS = 64
PERRON_ACCEPT_TOL = 1e-10
FD_STEP = 1e-5
ROOT_XTOL = 1e-12
LEGENDRE_GTOL = 1e-9
DEFAULT_ALPHA_MAX = 5.0
LAMBDA_QUANTUM = 1e-6


@dataclass(frozen=True, eq=False)
class SpectralData:
    alpha: np.ndarray
    H: float
    r: np.ndarray
    Q_alpha: np.ndarray
    pi_alpha: np.ndarray
    gradH: np.ndarray

    @property
    def log_r(self) -> np.ndarray:
        return np.log(self.r)


class ControlPoint(NamedTuple):
    beta_star: np.ndarray
    alpha_star: np.ndarray
    cost: float
    clamped: bool
    halfspace_index: int


class HalfspaceCost(NamedTuple):
    cost: float
    lam: float
    beta: np.ndarray
    clamped: bool


class LegendreResult(NamedTuple):
    L: float
    alpha: np.ndarray
    clamped: bool


class TargetRate(NamedTuple):
    value: float
    beta: np.ndarray
    halfspace_index: int
    alpha: np.ndarray
    clamped: bool


def _perron_vector(M: np.ndarray) -> np.ndarray:
    """Positive right eigenvector of an irreducible nonnegative ``M``, max-normalized.

    The dense eigensolver is accepted when its vector passes a componentwise
    residual test. Otherwise repeated squaring of the shifted, scaled matrix converges at rate
    ``ratio ** (2 ** k)`` even when the subdominant eigenvalue is nearly
    degenerate. Every operation is a sum of nonnegative terms, so entries
    many orders of magnitude below the maximum keep full relative accuracy.
    """
    m = M.shape[0]
    best, best_res = None, np.inf
    try:
        w, V = np.linalg.eig(M)
        r = V[:, np.argmax(w.real)].real
        r = r / r[np.argmax(np.abs(r))]
        if r.min() > 0:
            ratio = (M @ r) / r
            best, best_res = r, ratio.max() / ratio.min() - 1.0
            if best_res < POWER_TOL:
                return r
    except np.linalg.LinAlgError:
        pass
    shift = float(np.max(M.sum(axis=1)))
    A = (M + shift * np.eye(m)) / (2.0 * shift)
    for _ in range(POWER_MAX_SQUARINGS):
        r = A.sum(axis=1)
        r /= r.max()
        for _ in range(3):
            r = M @ r + shift * r
            r /= r.max()
        ratio = (M @ r) / r
        res = ratio.max() / ratio.min() - 1.0
        if res < best_res:
            best, best_res = r, res
        if res < POWER_TOL:
            break
        A = A @ A
        A /= A.max()
    if not best_res < PERRON_ACCEPT_TOL:
        raise NoConvergence(f"Perron vector residual {best_res:.3g} after repeated squaring")
    return best


def _stationary(Q: np.ndarray) -> np.ndarray:
    m = Q.shape[0]
    A = Q.T - np.eye(m)
    A[-1] = 1.0
    b = np.zeros(m)
    b[-1] = 1.0
    try:
        pi = np.clip(np.linalg.solve(A, b), 0.0, None)
    except np.linalg.LinAlgError:
        pi = np.full(m, 1.0 / m)
    pi /= pi.sum()
    if np.max(np.abs(pi @ Q - pi)) < POWER_TOL * 10:
        return pi
    for _ in range(POWER_MAX_ITER):
        nxt = 0.5 * (pi + pi @ Q)
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) < POWER_TOL:
            return nxt
        pi = nxt
    raise NoConvergence("power iteration for the twisted stationary law hit its cap")


class TiltFamily:
    """The exponentially twisted kernels of one (chain, g) pair.

    ``spectral`` computes from scratch. ``cached`` memoizes and is meant for the
    finitely many tilts a policy actually samples with.
    """

    def __init__(self, chain: FiniteChain, g: AdditiveFunctional):
        if g.n_states != chain.n_states:
            raise DomainError("g must have one row per state")
        self.chain = chain
        self.g = g
        self.P = chain.P
        self.G = g.g
        self.d = g.d
        self._cache: dict[tuple, SpectralData] = {}
        self._lock = threading.Lock()
        self._drift = None

    def _tilt(self, alpha: np.ndarray):
        M = self.P * np.exp(self.G @ alpha)[None, :]
        r = _perron_vector(M)
        Mr = M @ r
        rho = float(r @ Mr) / float(r @ r)
        Q = M * r[None, :] / (rho * r[:, None])
        pi = _stationary(Q)
        return math.log(rho), r, Q, pi, pi @ self.G

    def spectral(self, alpha) -> SpectralData:
        alpha = np.array(np.broadcast_to(np.asarray(alpha, dtype=float), (self.d,)))
        if not np.any(alpha):
            return self.untilted()
        H, r, Q, pi, grad = self._tilt(alpha)
        for a in (alpha, r, Q, pi, grad):
            a.setflags(write=False)
        return SpectralData(alpha, H, r, Q, pi, grad)

    def untilted(self) -> SpectralData:
        """Exact data at ``alpha = 0``: ``H = 0``, ``r = 1``, ``Q = P``."""
        key = ("zero",)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        m = self.chain.n_states
        pi = _stationary(np.array(self.P))
        arrays = [np.zeros(self.d), np.ones(m), np.array(self.P), pi, pi @ self.G]
        for a in arrays:
            a.setflags(write=False)
        data = SpectralData(arrays[0], 0.0, arrays[1], arrays[2], arrays[3], arrays[4])
        with self._lock:
            self._cache.setdefault(key, data)
        return self._cache[key]

    def cached(self, alpha) -> SpectralData:
        alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (self.d,))
        if not np.any(alpha):
            return self.untilted()
        key = tuple(alpha.tolist())
        hit = self._cache.get(key)
        if hit is None:
            hit = self.spectral(alpha)
            with self._lock:
                hit = self._cache.setdefault(key, hit)
        return hit

    def H(self, alpha) -> float:
        alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (self.d,))
        if not np.any(alpha):
            return 0.0
        return self._tilt(np.array(alpha))[0]

    def H_and_grad(self, alpha) -> tuple[float, np.ndarray]:
        alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (self.d,))
        if not np.any(alpha):
            return 0.0, self.drift
        H, grad = self.H_and_grad_many(alpha[None, :])
        return float(H[0]), grad[0]

    def H_and_grad_many(self, alphas) -> tuple[np.ndarray, np.ndarray]:
        """``H`` and ``grad H`` at each row of ``alphas`` using stacked eigensolves.

        The twisted stationary law is proportional to the product of the left and
        right Perron vectors, so no twisted kernel is formed. Rows whose dense
        eigenvectors fail the positivity or residual checks fall back to the
        full computation.
        """
        alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
        M = self.P[None, :, :] * np.exp(alphas @ self.G.T)[:, None, :]
        H = np.empty(len(alphas))
        grad = np.empty((len(alphas), self.d))
        ok = np.zeros(len(alphas), dtype=bool)
        try:
            wr, VR = np.linalg.eig(M)
            wl, VL = np.linalg.eig(M.transpose(0, 2, 1))
        except np.linalg.LinAlgError:
            wr = None
        if wr is not None:
            rows = np.arange(len(alphas))
            r = VR[rows, :, np.argmax(wr.real, axis=1)].real
            l = VL[rows, :, np.argmax(wl.real, axis=1)].real
            r /= np.take_along_axis(r, np.argmax(np.abs(r), axis=1)[:, None], 1)
            l /= np.take_along_axis(l, np.argmax(np.abs(l), axis=1)[:, None], 1)
            Mr = np.einsum("kij,kj->ki", M, r)
            lM = np.einsum("ki,kij->kj", l, M)
            with np.errstate(divide="ignore", invalid="ignore"):
                rr, rl = Mr / r, lM / l
                spread = np.maximum(rr.max(1) / rr.min(1), rl.max(1) / rl.min(1)) - 1.0
            ok = (r.min(1) > 0) & (l.min(1) > 0) & (spread < POWER_TOL)
            pi = l * r
            pi /= pi.sum(axis=1, keepdims=True)
            with np.errstate(divide="ignore", invalid="ignore"):
                H = np.log(np.einsum("ki,ki->k", r, Mr) / np.einsum("ki,ki->k", r, r))
            grad = pi @ self.G
        zero = ~np.any(alphas, axis=1)
        H[zero] = 0.0
        grad[zero] = self.drift
        for k in np.flatnonzero(~ok & ~zero):
            h, _, _, _, gr = self._tilt(alphas[k])
            H[k], grad[k] = h, gr
        return H, grad

    @property
    def drift(self) -> np.ndarray:
        """``grad H(0)``, the stationary mean of ``g``."""
        return self.untilted().gradH


def spectral(chain: FiniteChain, g: AdditiveFunctional, alpha) -> SpectralData:
    return TiltFamily(chain, g).spectral(alpha)


def grad_H_fd(chain: FiniteChain, g: AdditiveFunctional, alpha, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of ``H``; a cross-check on ``spectral(...).gradH``."""
    fam = TiltFamily(chain, g)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (fam.d,))
    out = np.empty(fam.d)
    for k in range(fam.d):
        e = np.zeros(fam.d)
        e[k] = step
        out[k] = (fam.H(alpha + e) - fam.H(alpha - e)) / (2 * step)
    return out


# ---------------------------------------------------------------------------
# Convex conjugate


def _legendre_1d(fam: TiltFamily, beta: float, alpha_max: float) -> LegendreResult:
    def slope(a):
        return fam.H_and_grad([a])[1][0] - beta

    lo, hi = -alpha_max, alpha_max
    if slope(lo) > 0:
        a, clamped = lo, True
    elif slope(hi) < 0:
        a, clamped = hi, True
    else:
        a, clamped = brentq(slope, lo, hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps), False
    return LegendreResult(a * beta - fam.H([a]), np.array([a]), clamped)


def _hessian_fd(fam: TiltFamily, alpha: np.ndarray) -> np.ndarray:
    d = fam.d
    Hess = np.empty((d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = FD_STEP
        Hess[:, k] = (fam.H_and_grad(alpha + e)[1] - fam.H_and_grad(alpha - e)[1]) / (2 * FD_STEP)
    return 0.5 * (Hess + Hess.T)


def _legendre_nd(fam: TiltFamily, beta: np.ndarray, alpha_max: float,
                 max_iter: int = 500) -> LegendreResult:
    # damped Newton ascent on <alpha, beta> - H(alpha) over the box |alpha|_inf <= alpha_max
    alpha = np.zeros(fam.d)
    H, grad_H = fam.H_and_grad(alpha)
    value = -H
    for _ in range(max_iter):
        grad = beta - grad_H
        at_upper = (alpha >= alpha_max) & (grad > 0)
        at_lower = (alpha <= -alpha_max) & (grad < 0)
        pinned = at_upper | at_lower
        free = ~pinned
        if np.linalg.norm(grad[free]) < LEGENDRE_GTOL:
            return LegendreResult(float(alpha @ beta - H), alpha, bool(pinned.any()))
        step = np.zeros(fam.d)
        Hess = _hessian_fd(fam, alpha)[np.ix_(free, free)]
        try:
            step[free] = np.linalg.solve(Hess + 1e-14 * np.eye(free.sum()), grad[free])
        except np.linalg.LinAlgError:
            step[free] = grad[free]
        if step @ grad <= 0:
            step = np.where(free, grad, 0.0)
        t = 1.0
        while True:
            trial = np.clip(alpha + t * step, -alpha_max, alpha_max)
            H_t, grad_t = fam.H_and_grad(trial)
            val_t = float(trial @ beta - H_t)
            if val_t >= value - 1e-15 * max(1.0, abs(value)) or t < 1e-12:
                break
            t *= 0.5
        if np.array_equal(trial, alpha):
            return LegendreResult(float(alpha @ beta - H), alpha, bool(pinned.any()))
        alpha, H, grad_H, value = trial, H_t, grad_t, val_t
    raise NoConvergence("Legendre ascent did not reach the gradient tolerance")


def legendre(chain: FiniteChain, g: AdditiveFunctional, beta,
             alpha_max: float = DEFAULT_ALPHA_MAX) -> LegendreResult:
    """``L(beta) = sup_alpha <alpha, beta> - H(alpha)`` over ``|alpha|_inf <= alpha_max``.

    When the maximizer sits on the box, ``clamped`` is set and the boxed value is
    reported; this is the finite stand-in for ``L = inf`` outside the range of
    ``grad H``.
    """
    if alpha_max <= 0:
        raise DomainError("alpha_max must be positive")
    return legendre_with(TiltFamily(chain, g), beta, alpha_max)


def legendre_with(fam: TiltFamily, beta, alpha_max: float = DEFAULT_ALPHA_MAX) -> LegendreResult:
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (fam.d,))
    if fam.d == 1:
        return _legendre_1d(fam, float(beta[0]), alpha_max)
    return _legendre_nd(fam, np.array(beta), alpha_max)


class TwoStateClosedForm:
    """Analytic ``H``, ``H'``, ``L`` and conjugate tilt of the two-state chain.

    Chain ``[[p, 1-p], [1, 0]]`` on ``{+1, -1}`` with ``g(x) = x``.
    """

    def __init__(self, p: float):
        if not 0.0 < p < 1.0:
            raise DomainError(f"p must lie in (0, 1), got {p}")
        self.p = p

    def H(self, alpha: float) -> float:
        p = self.p
        ea = math.exp(alpha)
        return math.log((p * ea + math.sqrt(p * p * ea * ea + 4 * (1 - p))) / 2)

    def dH(self, alpha: float) -> float:
        p = self.p
        ea = math.exp(alpha)
        s = math.sqrt(p * p * ea * ea + 4 * (1 - p))
        return (p * ea + p * p * ea * ea / s) / (p * ea + s)

    def eigenvector(self, alpha: float) -> np.ndarray:
        return np.array([math.exp(self.H(alpha)), math.exp(alpha)])

    def twisted(self, alpha: float) -> np.ndarray:
        p, H = self.p, self.H(alpha)
        return np.array([[p * math.exp(alpha - H), (1 - p) * math.exp(-2 * H)], [1.0, 0.0]])

    @property
    def drift(self) -> float:
        return self.p / (2 - self.p)

    def _check(self, beta):
        if not 0.0 < beta < 1.0:
            raise DomainError(f"closed-form rate needs beta in (0, 1), got {beta}")

    def alpha_star(self, beta: float) -> float:
        self._check(beta)
        p = self.p
        return 0.5 * math.log(4 * (1 - p) * beta**2 / (p**2 * (1 - beta**2)))

    def L(self, beta: float) -> float:
        self._check(beta)
        p = self.p
        return (beta / 2 * math.log(4 * (1 - p) * beta**2 / (p**2 * (1 - beta**2)))
                + 0.5 * math.log((1 - beta) / (1 + beta)) - 0.5 * math.log(1 - p))

    @property
    def L_at_zero(self) -> float:
        return -0.5 * math.log(1 - self.p)

    @property
    def L_at_one(self) -> float:
        return -math.log(self.p)


def two_state_closed_form(p: float) -> TwoStateClosedForm:
    return TwoStateClosedForm(p)


# ---------------------------------------------------------------------------
# Halfspace duals and the feedback control


class HalfspaceDual:
    """``inf { Ltilde(beta) : <v, beta> >= c }`` along the ray ``base + lam v``.

    With ``base = 0`` this is ``sup_{lam >= 0} lam c - H(lam v)``, the rate cost
    of the halfspace. A nonzero ``base`` gives the tilted rate
    ``L(beta) - <base, beta>``, whose conjugate is ``H(base + .)``.
    Derivative values along the ray are tabulated lazily so that repeated
    solves start from a tight bracket.
    """

    GRID_POINTS = 129

    def __init__(self, fam: TiltFamily, v, alpha_max: float = DEFAULT_ALPHA_MAX, base=None):
        self.fam = fam
        self.v = np.asarray(v, dtype=float)
        self.base = np.zeros(fam.d) if base is None else np.asarray(base, dtype=float)
        vinf = float(np.max(np.abs(self.v)))
        self.lam_box = (alpha_max + float(np.max(np.abs(self.base)))) / vinf
        self._grid_lam = None
        self._grid_slope = None
        self._at_zero = self._eval(0.0)
        self._at_box = self._eval(self.lam_box)

    def _eval(self, lam: float):
        H, grad = self.fam.H_and_grad(self.base + lam * self.v)
        return H, grad, float(self.v @ grad)

    def _slopes(self, lams: np.ndarray) -> np.ndarray:
        _, grad = self.fam.H_and_grad_many(self.base[None, :] + lams[:, None] * self.v[None, :])
        return grad @ self.v

    def _grid(self):
        if self._grid_lam is None:
            lams = np.linspace(0.0, self.lam_box, self.GRID_POINTS)
            slopes = self._slopes(lams[1:-1])
            self._grid_slope = np.concatenate(([self._at_zero[2]], slopes, [self._at_box[2]]))
            self._grid_lam = lams
        return self._grid_lam, self._grid_slope

    def solve(self, c: float) -> HalfspaceCost:
        """Dual value ``lam c - H(base + lam v)`` at the optimal ``lam``."""
        return self.solve_many(np.array([c]))[0]

    def solve_many(self, cs) -> list[HalfspaceCost]:
        """:meth:`solve` for an array of levels, with one vectorized root search."""
        cs = np.asarray(cs, dtype=float).ravel()
        H0, grad0, slope0 = self._at_zero
        Hb, gradb, slopeb = self._at_box
        out: list[HalfspaceCost | None] = [None] * len(cs)
        inner = []
        for k, c in enumerate(cs):
            if slope0 >= c:
                out[k] = HalfspaceCost(float(-H0), 0.0, grad0, False)
            elif slopeb < c:
                out[k] = HalfspaceCost(float(self.lam_box * c - Hb), self.lam_box, gradb, True)
            else:
                inner.append(k)
        if not inner:
            return out
        inner = np.asarray(inner)
        c_in = cs[inner]
        lams, slopes = self._grid()
        hi_idx = np.clip(np.searchsorted(slopes, c_in), 1, self.GRID_POINTS - 1)
        lo, hi = lams[hi_idx - 1], lams[hi_idx]
        f_lo, f_hi = slopes[hi_idx - 1] - c_in, slopes[hi_idx] - c_in
        lam = np.where(f_lo >= 0, lo, hi)
        todo = (f_lo < 0) & (f_hi > 0)
        if np.any(todo):
            res = find_root(lambda t, c: self._slopes(t.ravel()).reshape(t.shape) - c,
                            (lo[todo], hi[todo]), args=(c_in[todo],),
                            tolerances={"xatol": ROOT_XTOL, "xrtol": 4 * np.finfo(float).eps})
            if not np.all(res.success):
                raise NoConvergence("root search for the halfspace multiplier failed")
            lam[todo] = res.x
        H, grad = self.fam.H_and_grad_many(self.base[None, :] + lam[:, None] * self.v[None, :])
        for pos, k in enumerate(inner):
            out[k] = HalfspaceCost(float(lam[pos] * c_in[pos] - H[pos]), float(lam[pos]),
                                   grad[pos], False)
        return out


def halfspace_cost(chain: FiniteChain, g: AdditiveFunctional, v, c_tilde: float,
                   alpha_max: float = DEFAULT_ALPHA_MAX) -> HalfspaceCost:
    """``inf { L(beta) : <v, beta> >= c_tilde }`` via its one-dimensional dual."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if not np.any(v):
        raise DomainError("halfspace normal must be nonzero")
    return HalfspaceDual(TiltFamily(chain, g), v, alpha_max).solve(float(c_tilde))


class FeedbackController:
    """The tilt conjugate to the cheapest way of still reaching the target.

    At step ``j`` of ``n`` with running mean ``x``, each halfspace needs the
    remaining ``(n - j) / n`` of the path to average at least
    ``c_tilde = (c - <v, x>) n / (n - j)`` along ``v``. The halfspace with the
    smallest scaled cost wins (lowest index on ties) and the control is
    ``lam* v``. Halfspace solves are memoized by ``(index, c_tilde)``.
    """

    def __init__(self, fam: TiltFamily, target: TargetSet, alpha_max: float = DEFAULT_ALPHA_MAX):
        if target.dim != fam.d:
            raise DomainError("target dimension does not match g")
        self.fam = fam
        self.target = target
        self.alpha_max = alpha_max
        self._normals = target.normals
        self._offsets = target.offsets
        self._duals = [HalfspaceDual(fam, v, alpha_max) for v in self._normals]
        self._memo: dict[tuple[int, float], HalfspaceCost] = {}

    def halfspace(self, i: int, c_tilde: float) -> HalfspaceCost:
        key = (i, c_tilde)
        hit = self._memo.get(key)
        if hit is None:
            hit = self._duals[i].solve(c_tilde)
            self._memo[key] = hit
        return hit

    def _levels(self, x, j: int, n: int) -> np.ndarray:
        if not 0 <= j < n:
            raise DomainError(f"need 0 <= j < n, got j={j}, n={n}")
        x = np.broadcast_to(np.asarray(x, dtype=float), (self.fam.d,))
        return (self._offsets - self._normals @ x) * n / (n - j)

    def prefetch(self, xs, j: int, n: int) -> None:
        """Solve, in one batch per halfspace, every level that ``control`` will need at these points."""
        xs = np.asarray(xs, dtype=float).reshape(-1, self.fam.d)
        levels = np.array([self._levels(x, j, n) for x in xs]).reshape(len(xs), -1)
        for i, dual in enumerate(self._duals):
            todo = sorted({float(c) for c in levels[:, i] if (i, float(c)) not in self._memo})
            if todo:
                for c, hc in zip(todo, dual.solve_many(np.array(todo))):
                    self._memo[(i, c)] = hc

    def control(self, x, j: int, n: int) -> ControlPoint:
        levels = self._levels(x, j, n)
        rho = (n - j) / n
        best = None
        for i, c_tilde in enumerate(levels):
            hc = self.halfspace(i, float(c_tilde))
            total = rho * hc.cost
            if best is None or total < best[0]:
                best = (total, i, hc)
        total, i, hc = best
        return ControlPoint(hc.beta, hc.lam * self._normals[i] + 0.0, total + 0.0, hc.clamped, i)

    def rate(self) -> TargetRate:
        """``inf_A L`` over the whole horizon from the origin."""
        cp = self.control(np.zeros(self.fam.d), 0, 1)
        return TargetRate(cp.cost, cp.beta_star, cp.halfspace_index, cp.alpha_star, cp.clamped)


def feedback_control(chain: FiniteChain, g: AdditiveFunctional, A: TargetSet, x, j: int,
                     n: int, alpha_max: float = DEFAULT_ALPHA_MAX) -> ControlPoint:
    return FeedbackController(TiltFamily(chain, g), A, alpha_max).control(x, j, n)


def rate_over_target(chain: FiniteChain, g: AdditiveFunctional, A: TargetSet,
                     alpha_max: float = DEFAULT_ALPHA_MAX) -> TargetRate:
    """``inf_{beta in A} L(beta)``, its minimizer and the halfspace attaining it."""
    return FeedbackController(TiltFamily(chain, g), A, alpha_max).rate()
