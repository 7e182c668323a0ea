"""Target sets: finite unions of closed halfspaces."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

# Slack on the closed-halfspace test so that lattice points such as 10/60
# compare equal to a boundary given as 1/6.
MEMBERSHIP_TOL = 1e-12


@dataclass(frozen=True)
class Halfspace:
    v: tuple[float, ...]
    c: float

    @property
    def normal(self) -> np.ndarray:
        return np.asarray(self.v, dtype=float)


@dataclass(frozen=True)
class TargetSet:
    """Union of halfspaces ``{z : <v_i, z> >= c_i}``."""

    halfspaces: tuple[Halfspace, ...]

    def __post_init__(self):
        if not self.halfspaces:
            raise DomainError("target set needs at least one halfspace")
        dims = {len(h.v) for h in self.halfspaces}
        if len(dims) != 1:
            raise DomainError("halfspace normals have inconsistent dimensions")
        for h in self.halfspaces:
            if not np.any(np.asarray(h.v) != 0):
                raise DomainError("halfspace normal must be nonzero")

    @classmethod
    def from_pairs(cls, pairs) -> "TargetSet":
        hs = []
        for v, c in pairs:
            v = np.atleast_1d(np.asarray(v, dtype=float))
            hs.append(Halfspace(tuple(float(t) for t in v), float(c)))
        return cls(tuple(hs))

    @classmethod
    def two_sided(cls, a: float, b: float) -> "TargetSet":
        """``(-inf, a] U [b, inf)`` on the real line (lower piece first)."""
        if not a < b:
            raise DomainError(f"need a < b, got a={a}, b={b}")
        return cls.from_pairs([([-1.0], -a), ([1.0], b)])

    @classmethod
    def any_exceeds(cls, thresholds) -> "TargetSet":
        """``{x : x_k >= eps_k for some k}``."""
        eps = np.asarray(thresholds, dtype=float)
        eye = np.eye(len(eps))
        return cls.from_pairs([(eye[k], eps[k]) for k in range(len(eps))])

    @property
    def dim(self) -> int:
        return len(self.halfspaces[0].v)

    @property
    def normals(self) -> np.ndarray:
        return np.array([h.v for h in self.halfspaces], dtype=float)

    @property
    def offsets(self) -> np.ndarray:
        return np.array([h.c for h in self.halfspaces], dtype=float)

    def contains(self, z) -> np.ndarray | bool:
        """Membership of one point (shape ``(d,)``) or a batch (shape ``(k, d)``)."""
        z = np.asarray(z, dtype=float)
        single = z.ndim <= 1
        z = np.atleast_2d(z.reshape(-1, self.dim) if single else z)
        inside = (z @ self.normals.T >= self.offsets - MEMBERSHIP_TOL).any(axis=1)
        return bool(inside[0]) if single else inside

    def to_dict(self) -> dict:
        return {"halfspaces": [{"v": list(h.v), "c": h.c} for h in self.halfspaces]}

    @classmethod
    def from_dict(cls, doc: dict) -> "TargetSet":
        try:
            return cls.from_pairs((h["v"], h["c"]) for h in doc["halfspaces"])
        except (KeyError, TypeError) as exc:
            raise DomainError(f"malformed target document: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TargetSet":
        return cls.from_dict(json.loads(text))
