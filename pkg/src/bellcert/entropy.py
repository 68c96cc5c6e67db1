"""Entropy measures and certified minima over probability boxes.

The randomness guarantee of a protocol is the minimum entropy over every
outcome distribution compatible with its probability box, i.e. over the
polytope {P : l <= P <= u componentwise, sum(P) = 1}.  Shannon entropy is
concave, so its minimum sits at a polytope vertex; vertices pin three
coordinates to a bound and let normalization fix the fourth, giving at
most 4 * 2^3 = 32 candidates to enumerate exactly.  Min-entropy reduces
to the largest attainable single probability, which has a closed form on
the same polytope.

A cheap upper bound comes from the closed-form ansatz distribution built
from two lower bounds, one upper bound and the normalization residual
(tried over all role-to-outcome assignments); its entropy dominates the
certified minimum and coincides with it at negligible noise.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .certify import ProbabilityBox
from .errors import AnsatzError, EmptyBoxError

__all__ = [
    "Distribution4",
    "EntropyReport",
    "shannon",
    "min_entropy",
    "analytic_lower_bound",
    "ansatz_distribution",
    "certified_shannon_min",
    "certified_min_entropy",
    "certify_entropy",
]

_FEAS_ATOL = 1e-9


class Distribution4:
    """A normalized distribution over the four joint outcomes (--,-+,+-,++)."""

    __slots__ = ("probs",)

    def __init__(self, probs):
        p = np.array(probs, dtype=float)
        if p.shape != (4,):
            raise ValueError("expected exactly four probabilities")
        if (p < -1e-12).any():
            raise ValueError(f"negative entry in {p}")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        p = np.clip(p, 0.0, 1.0)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __setattr__(self, name, value):
        raise AttributeError("Distribution4 is immutable")

    def __iter__(self):
        return iter(self.probs)

    def __getitem__(self, i: int) -> float:
        return float(self.probs[i])

    def __repr__(self) -> str:
        return f"Distribution4({self.probs.tolist()})"

    @classmethod
    def uniform(cls) -> "Distribution4":
        return cls((0.25, 0.25, 0.25, 0.25))


def _shannon_raw(p: np.ndarray) -> float:
    # 0*log2(0) := 0
    nz = p[p > 0.0]
    return float(-(nz * np.log2(nz)).sum())


def shannon(dist: Distribution4) -> float:
    """Shannon entropy in bits; in [0, 2] for four outcomes."""
    return _shannon_raw(dist.probs)


def min_entropy(dist: Distribution4) -> float:
    """-log2 of the largest entry; never exceeds the Shannon entropy."""
    return float(-np.log2(dist.probs.max()))


def analytic_lower_bound(u_p: float) -> float:
    """Binary-entropy floor h(u_p) valid whenever every entry is <= u_p.

    The minimal-entropy configuration packs all remaining mass on one
    complementary outcome, so H >= -u log2 u - (1-u) log2(1-u).
    Requires 1/4 <= u_p <= 1 (below 1/4 no normalized four-outcome
    distribution can have all entries <= u_p).
    """
    if not (0.25 <= u_p <= 1.0):
        raise ValueError(f"u_p must lie in [1/4, 1], got {u_p}")
    if u_p >= 1.0:
        return 0.0
    return float(-u_p * math.log2(u_p) - (1.0 - u_p) * math.log2(1.0 - u_p))


#: Role layouts for the ansatz: which outcome slot takes its upper bound
#: and which absorbs the normalization residual (the rest take lowers).
_ANSATZ_ROLES = [(u, r) for u in range(4) for r in range(4) if u != r]


def _roles_string(u_slot: int, r_slot: int) -> str:
    roles = ["l"] * 4
    roles[u_slot] = "u"
    roles[r_slot] = "r"
    return "".join(roles)


def ansatz_distribution(box: ProbabilityBox) -> tuple[Distribution4, str]:
    """Closed-form feasible point: two lower bounds, one upper bound and
    the normalization residual.

    The canonical layout puts the upper bound on the +- slot and the
    residual on ++ (roles "llur"); the layout is only guaranteed up to a
    permutation of outcomes, so every role assignment is tried and the
    feasible one with maximal entropy is returned together with its role
    string.  Raises AnsatzError when no layout fits inside the box, in
    which case callers fall back to the certified minimizer's witness.
    """
    lo = np.asarray(box.lower)
    hi = np.asarray(box.upper)
    candidates: list[tuple[float, bool, str, Distribution4]] = []
    for (u_slot, r_slot) in _ANSATZ_ROLES:
        q = lo.copy()
        q[u_slot] = hi[u_slot]
        q[r_slot] = 0.0
        residual = 1.0 - q.sum()
        if residual < lo[r_slot] - _FEAS_ATOL or residual > hi[r_slot] + _FEAS_ATOL:
            continue
        q[r_slot] = min(max(residual, 0.0), 1.0)
        total = q.sum()
        if abs(total - 1.0) > 1e-12:  # clip dust, renormalize exactly
            q = q / total
        dist = Distribution4(q)
        roles = _roles_string(u_slot, r_slot)
        candidates.append((shannon(dist), roles == "llur", roles, dist))
    if not candidates:
        raise AnsatzError("no role assignment of the ansatz lies inside the box")
    # Maximal entropy; prefer the canonical layout, then the lexicographically
    # smallest role string, on ties.
    h, _, roles, dist = max(
        candidates, key=lambda c: (round(c[0], 12), c[1], [-ord(ch) for ch in c[2]])
    )
    return dist, roles


def _box_vertices(lo: np.ndarray, hi: np.ndarray) -> list[np.ndarray]:
    """All vertices of {l <= P <= u, sum P = 1}: pin three coordinates to a
    bound, normalization fixes the free one; keep the feasible results."""
    vertices = []
    for free in range(4):
        others = [i for i in range(4) if i != free]
        for picks in itertools.product((0, 1), repeat=3):
            q = np.empty(4)
            for slot, pick in zip(others, picks):
                q[slot] = lo[slot] if pick == 0 else hi[slot]
            q[free] = 1.0 - q[others].sum()
            if q[free] < lo[free] - _FEAS_ATOL or q[free] > hi[free] + _FEAS_ATOL:
                continue
            vertices.append(np.clip(q, 0.0, 1.0))
    return vertices


def certified_shannon_min(box: ProbabilityBox) -> tuple[float, Distribution4]:
    """Exact global minimum of Shannon entropy over the box polytope.

    Concavity puts the minimum at a vertex, so enumerating the <= 32
    vertex candidates is exact; returns (bits, attaining distribution).
    """
    lo = np.asarray(box.lower)
    hi = np.asarray(box.upper)
    if lo.sum() > 1.0 + _FEAS_ATOL or hi.sum() < 1.0 - _FEAS_ATOL:
        raise EmptyBoxError("box polytope contains no normalized distribution")
    best_h = np.inf
    best_q: np.ndarray | None = None
    for q in _box_vertices(lo, hi):
        h = _shannon_raw(q)
        if h < best_h - 1e-15 or (
            abs(h - best_h) <= 1e-15 and (best_q is None or tuple(q) < tuple(best_q))
        ):
            best_h = h
            best_q = q
    if best_q is None:
        raise EmptyBoxError("no feasible vertex; inconsistent box bounds")
    q = best_q / best_q.sum()
    return _shannon_raw(q), Distribution4(q)


def certified_min_entropy(box: ProbabilityBox) -> float:
    """Exact minimum of min-entropy over the box polytope.

    The adversary's guessing probability is the largest single-outcome
    probability attainable in the polytope:
    g = max_i min(u_i, 1 - sum_{j != i} l_j).
    """
    lo = np.asarray(box.lower)
    hi = np.asarray(box.upper)
    if lo.sum() > 1.0 + _FEAS_ATOL or hi.sum() < 1.0 - _FEAS_ATOL:
        raise EmptyBoxError("box polytope contains no normalized distribution")
    guess = max(
        min(hi[i], 1.0 - (lo.sum() - lo[i])) for i in range(4)
    )
    guess = min(max(guess, 0.25), 1.0)  # a normalized point always exists
    return float(-np.log2(guess))


@dataclass(frozen=True)
class EntropyReport:
    """All entropy figures certified from one probability box (bits)."""

    shannon_certified: float
    min_entropy_certified: float
    shannon_ansatz: float
    analytic_bound: float
    witness_distribution: Distribution4
    ansatz_roles: str
    ansatz_applicable: bool

    def as_dict(self) -> dict:
        return {
            "shannon_certified": self.shannon_certified,
            "min_entropy_certified": self.min_entropy_certified,
            "shannon_ansatz": self.shannon_ansatz,
            "analytic_bound": self.analytic_bound,
            "witness": [float(v) for v in self.witness_distribution],
            "ansatz_roles": self.ansatz_roles,
            "ansatz_applicable": self.ansatz_applicable,
        }


def certify_entropy(box: ProbabilityBox) -> EntropyReport:
    """Assemble the full certification report for one box."""
    h_min, witness = certified_shannon_min(box)
    h_inf = certified_min_entropy(box)
    try:
        ansatz, roles = ansatz_distribution(box)
        h_ansatz = shannon(ansatz)
        applicable = True
    except AnsatzError:
        h_ansatz = shannon(witness)
        roles = ""
        applicable = False
    u_max = max(max(box.upper), 0.25)
    return EntropyReport(
        shannon_certified=h_min,
        min_entropy_certified=h_inf,
        shannon_ansatz=h_ansatz,
        analytic_bound=analytic_lower_bound(min(u_max, 1.0)),
        witness_distribution=witness,
        ansatz_roles=roles,
        ansatz_applicable=applicable,
    )
