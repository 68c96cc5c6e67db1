"""Measurement scenarios, unit-coefficient Bell expressions and behaviors.

Two parties measure a shared state with binary (+/-1) outcomes.  A Bell
expression is a linear combination of two-party correlators with
coefficients in {-1, 0, +1}, described by its N x M coefficient matrix
(N Alice settings, M Bob settings).  This module holds the purely
algebraic layer: correlators, Bell values, exact classical bounds via
deterministic-strategy enumeration, and the deterministic enumeration of
the whole coefficient-matrix family.

Setting indices are 0-based everywhere inside the package; the 1-based
convention of the text formats is converted at the serialization/CLI
boundary only.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ScenarioMismatchError

__all__ = [
    "Scenario",
    "CoefficientMatrix",
    "Behavior",
    "Protocol",
    "correlator_value",
    "bell_value",
    "classical_bound",
    "enumerate_expressions",
    "expression_from_ordinal",
    "expression_ordinal",
    "total_expressions",
    "canonical_key",
    "OUTCOMES",
    "OUTCOME_PAIRS",
]

#: Outcome labels in index order: index 0 <-> outcome -1, index 1 <-> +1.
OUTCOMES = (-1, +1)

#: The four joint outcomes at one setting pair, in the fixed order used by
#: distributions and boxes: (--, -+, +-, ++).
OUTCOME_PAIRS = ((-1, -1), (-1, +1), (+1, -1), (+1, +1))

NORMALIZATION_ATOL = 1e-12
NO_SIGNALING_ATOL = 1e-9


def _outcome_index(o: int) -> int:
    if o == -1:
        return 0
    if o == +1:
        return 1
    raise ValueError(f"outcome must be -1 or +1, got {o!r}")


@dataclass(frozen=True, order=True)
class Scenario:
    """Numbers of measurement settings per party; outcomes are fixed to +/-1."""

    n_alice: int
    n_bob: int

    def __post_init__(self):
        if self.n_alice < 1 or self.n_bob < 1:
            raise ValueError("both parties need at least one setting")

    @property
    def n_cells(self) -> int:
        return self.n_alice * self.n_bob

    def setting_pairs(self) -> list[tuple[int, int]]:
        """All (x, y) pairs in x-major order."""
        return [(x, y) for x in range(self.n_alice) for y in range(self.n_bob)]


class CoefficientMatrix:
    """An N x M integer matrix with entries in {-1, 0, +1}, not all zero."""

    __slots__ = ("entries",)

    def __init__(self, entries):
        a = np.array(entries, dtype=np.int64)
        if a.ndim != 2:
            raise ValueError("coefficient matrix must be two-dimensional")
        if not np.isin(a, (-1, 0, 1)).all():
            raise ValueError("coefficients must lie in {-1, 0, +1}")
        if not a.any():
            raise ValueError("the all-zero coefficient matrix is excluded")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    def __setattr__(self, name, value):
        raise AttributeError("CoefficientMatrix is immutable")

    @property
    def scenario(self) -> Scenario:
        return Scenario(*self.entries.shape)

    @property
    def abs_sum(self) -> int:
        """Sum of |entries|; an algebraic cap on any Bell value."""
        return int(np.abs(self.entries).sum())

    def __neg__(self) -> "CoefficientMatrix":
        return CoefficientMatrix(-self.entries)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, CoefficientMatrix)
            and self.entries.shape == other.entries.shape
            and bool((self.entries == other.entries).all())
        )

    def __hash__(self) -> int:
        return hash((self.entries.shape, self.entries.tobytes()))

    def __repr__(self) -> str:
        return f"CoefficientMatrix({self.to_string()!r})"

    def to_string(self) -> str:
        """Row-major text form: rows joined by ';', entries by ','."""
        return ";".join(",".join(str(int(v)) for v in row) for row in self.entries)

    @classmethod
    def from_string(cls, text: str) -> "CoefficientMatrix":
        """Parse the ';'/',' text form.  Whitespace and surrounding
        parentheses are tolerated so table rows paste directly."""
        cleaned = text.strip().strip("()[]")
        rows = [r for r in cleaned.split(";") if r.strip()]
        try:
            entries = [[int(v.strip()) for v in row.split(",")] for row in rows]
        except ValueError as exc:
            raise ValueError(f"cannot parse coefficient matrix from {text!r}") from exc
        widths = {len(r) for r in entries}
        if len(widths) != 1:
            raise ValueError("ragged rows in coefficient matrix text")
        return cls(entries)


class Behavior:
    """Conditional outcome table P(a,b|x,y) for binary outcomes.

    Stored as an array of shape (2, 2, N, M) indexed [a_idx, b_idx, x, y]
    with outcome index 0 <-> -1 and 1 <-> +1.
    """

    __slots__ = ("probs",)

    def __init__(self, probs, *, check_signaling: bool = True):
        p = np.array(probs, dtype=float)
        if p.ndim != 4 or p.shape[:2] != (2, 2):
            raise ValueError("behavior array must have shape (2, 2, N, M)")
        if (p < -NORMALIZATION_ATOL).any():
            raise ValueError("negative probability entry")
        norms = p.sum(axis=(0, 1))
        if not np.allclose(norms, 1.0, atol=NORMALIZATION_ATOL, rtol=0.0):
            raise ValueError("each setting pair must sum to 1 within 1e-12")
        if check_signaling:
            self._check_no_signaling(p)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __setattr__(self, name, value):
        raise AttributeError("Behavior is immutable")

    @staticmethod
    def _check_no_signaling(p: np.ndarray) -> None:
        # Alice's marginal P(a|x) must not depend on y, and symmetrically.
        a_marg = p.sum(axis=1)  # (2, N, M)
        if not np.allclose(a_marg, a_marg[:, :, :1], atol=NO_SIGNALING_ATOL, rtol=0.0):
            raise ValueError("signaling: Alice's marginals depend on Bob's setting")
        b_marg = p.sum(axis=0)  # (2, N, M)
        if not np.allclose(b_marg, b_marg[:, :1, :], atol=NO_SIGNALING_ATOL, rtol=0.0):
            raise ValueError("signaling: Bob's marginals depend on Alice's setting")

    @property
    def scenario(self) -> Scenario:
        return Scenario(self.probs.shape[2], self.probs.shape[3])

    def prob(self, a: int, b: int, x: int, y: int) -> float:
        """P(a,b|x,y) with outcomes +/-1 and 0-based settings."""
        sc = self.scenario
        if not (0 <= x < sc.n_alice and 0 <= y < sc.n_bob):
            raise IndexError(f"setting pair ({x},{y}) outside scenario {sc}")
        return float(self.probs[_outcome_index(a), _outcome_index(b), x, y])

    def correlators(self) -> np.ndarray:
        """Table of correlator values, shape (N, M)."""
        p = self.probs
        return p[0, 0] - p[0, 1] - p[1, 0] + p[1, 1]

    @classmethod
    def uniform(cls, scenario: Scenario) -> "Behavior":
        p = np.full((2, 2, scenario.n_alice, scenario.n_bob), 0.25)
        return cls(p)

    @classmethod
    def from_joint_table(cls, table, *, check_signaling: bool = True) -> "Behavior":
        """Build from a dict {(a, b, x, y): prob}; unset entries are 0."""
        dims = (
            max(k[2] for k in table) + 1,
            max(k[3] for k in table) + 1,
        )
        p = np.zeros((2, 2) + dims)
        for (a, b, x, y), v in table.items():
            p[_outcome_index(a), _outcome_index(b), x, y] = v
        return cls(p, check_signaling=check_signaling)


@dataclass(frozen=True)
class Protocol:
    """A certification protocol: expression, its quantum bound, spot setting."""

    alpha: CoefficientMatrix
    tsirelson: float
    spot_x: int
    spot_y: int

    def __post_init__(self):
        sc = self.alpha.scenario
        if not (0 <= self.spot_x < sc.n_alice and 0 <= self.spot_y < sc.n_bob):
            raise ValueError(
                f"spot ({self.spot_x},{self.spot_y}) outside scenario {sc}"
            )
        if not (self.tsirelson > 0):
            raise ValueError("a usable certificate needs a positive quantum bound")

    @property
    def spot(self) -> tuple[int, int]:
        return (self.spot_x, self.spot_y)


def correlator_value(behavior: Behavior, x: int, y: int) -> float:
    """Expectation of the +/-1 outcome product at settings (x, y)."""
    return (
        behavior.prob(-1, -1, x, y)
        - behavior.prob(-1, +1, x, y)
        - behavior.prob(+1, -1, x, y)
        + behavior.prob(+1, +1, x, y)
    )


def bell_value(alpha: CoefficientMatrix, behavior: Behavior) -> float:
    """Value of the Bell expression on a behavior."""
    if alpha.scenario != behavior.scenario:
        raise ScenarioMismatchError(
            f"expression scenario {alpha.scenario} != behavior scenario {behavior.scenario}"
        )
    return float((alpha.entries * behavior.correlators()).sum())


def classical_bound(alpha: CoefficientMatrix) -> int:
    """Maximum over all deterministic +/-1 strategies; exact integer.

    Each party independently assigns +/-1 to each setting, so the bound is
    max_b sum_x |(alpha @ b)_x| over the 2^M sign vectors b.
    """
    m = alpha.entries.shape[1]
    signs = np.array(list(itertools.product((-1, 1), repeat=m)), dtype=np.int64)
    row_sums = alpha.entries @ signs.T  # (N, 2^M)
    return int(np.abs(row_sums).sum(axis=0).max())


# --- enumeration of the expression family ---------------------------------
#
# Ordinals 1 .. 3^(N*M)-1 map bijectively onto the nonzero matrices: write
# the ordinal in base 3 with the cell (0,0) as the most significant digit
# (row-major), then map digits 0 -> 0, 1 -> +1, 2 -> -1.  Ordinal 0 would
# be the excluded zero matrix.

_DIGIT_TO_COEFF = np.array([0, 1, -1], dtype=np.int64)
_COEFF_TO_DIGIT = {0: 0, 1: 1, -1: 2}


def total_expressions(scenario: Scenario) -> int:
    """3^(N*M) - 1, the number of nonzero coefficient matrices."""
    return 3 ** scenario.n_cells - 1


def expression_from_ordinal(scenario: Scenario, ordinal: int) -> CoefficientMatrix:
    if not (1 <= ordinal <= total_expressions(scenario)):
        raise ValueError(f"ordinal {ordinal} outside [1, {total_expressions(scenario)}]")
    digits = np.zeros(scenario.n_cells, dtype=np.int64)
    k = ordinal
    for pos in range(scenario.n_cells - 1, -1, -1):
        digits[pos] = k % 3
        k //= 3
    entries = _DIGIT_TO_COEFF[digits].reshape(scenario.n_alice, scenario.n_bob)
    return CoefficientMatrix(entries)


def expression_ordinal(alpha: CoefficientMatrix) -> int:
    k = 0
    for v in alpha.entries.ravel():
        k = 3 * k + _COEFF_TO_DIGIT[int(v)]
    return k


def enumerate_expressions(scenario: Scenario) -> Iterator[CoefficientMatrix]:
    """Yield every nonzero matrix exactly once, in ordinal order."""
    for ordinal in range(1, total_expressions(scenario) + 1):
        yield expression_from_ordinal(scenario, ordinal)


def canonical_key(alpha: CoefficientMatrix, *, include_relabelings: bool = False) -> bytes:
    """Orbit-canonical byte key.

    Always identifies alpha with -alpha (a global sign flip leaves |B|
    unchanged).  With ``include_relabelings`` the key is additionally
    invariant under row/column permutations combined with per-setting
    outcome relabelings (sign flips of whole rows/columns).
    """
    a = alpha.entries
    if not include_relabelings:
        return min(a.tobytes(), (-a).tobytes())
    n, m = a.shape
    best: bytes | None = None
    col_signs = np.array(list(itertools.product((1, -1), repeat=m)), dtype=np.int64)
    for rows in itertools.permutations(range(n)):
        ar = a[list(rows), :]
        for cols in itertools.permutations(range(m)):
            arc = ar[:, list(cols)]
            for cs in col_signs:
                acs = arc * cs
                # For a fixed permutation and column signing, each row's sign
                # only affects its own byte segment, so minimize row-by-row.
                canon = np.where(
                    # lexicographic: flip the row iff the flipped row is smaller
                    _rows_flip_mask(acs)[:, None], -acs, acs
                )
                key = canon.tobytes()
                if best is None or key < best:
                    best = key
    return best


def _rows_flip_mask(a: np.ndarray) -> np.ndarray:
    """For each row, True when the negated row is lexicographically smaller."""
    flags = np.zeros(a.shape[0], dtype=bool)
    for i, row in enumerate(a):
        flags[i] = (-row).tobytes() < row.tobytes()
    return flags
