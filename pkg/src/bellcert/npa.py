"""Moment-matrix relaxations for two-party binary projective measurements.

The relaxation variables are expectations of words over the projector
alphabet {1, A_1..A_N, B_1..B_M}, where A_x (B_y) is the projector onto
outcome +1 of Alice's (Bob's) setting x (y).  Words reduce under

  * idempotence:   A_x A_x -> A_x,  B_y B_y -> B_y,
  * commutation:   every B commutes with every A (cross-party only; two
    projectors of the *same* party at different settings do not commute,
    so within-party letter order is preserved),
  * hermiticity:   a word and its reversal share one (real) moment.

A moment matrix is indexed by a monomial basis; its entries are moments of
reduced basis-word products, with the (1,1) entry pinned to 1.  Bell
expressions and single joint probabilities are affine in these moments.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .errors import ScenarioMismatchError
from .scenario import CoefficientMatrix, Scenario

__all__ = [
    "LEVELS",
    "Word",
    "MonomialBasis",
    "MomentStructure",
    "LinearFunctional",
    "build_basis",
    "build_moment_structure",
    "bell_functional",
    "probability_functional",
]

#: Supported hierarchy levels, loosest to tightest.
LEVELS = ("1", "1+AB", "2")

#: A reduced word: (alice letters, bob letters), each a tuple of 0-based
#: setting indices with no two adjacent letters equal.
Word = Tuple[Tuple[int, ...], Tuple[int, ...]]

IDENTITY_WORD: Word = ((), ())


def _collapse(letters: tuple[int, ...]) -> tuple[int, ...]:
    out: list[int] = []
    for s in letters:
        if not out or out[-1] != s:
            out.append(s)
    return tuple(out)


def word_product(w1: Word, w2: Word) -> Word:
    """Concatenate and reduce (cross-party commutation + idempotence)."""
    return _collapse(w1[0] + w2[0]), _collapse(w1[1] + w2[1])


def word_adjoint(w: Word) -> Word:
    """Adjoint of a word of hermitian projectors: reverse each party block."""
    return tuple(reversed(w[0])), tuple(reversed(w[1]))


def canonical_moment(w: Word) -> Word:
    """Representative of the {word, reversed word} pair sharing one moment."""
    return min(w, word_adjoint(w))


def word_str(w: Word) -> str:
    if w == IDENTITY_WORD:
        return "1"
    return ".".join(
        [f"A{x}" for x in w[0]] + [f"B{y}" for y in w[1]]
    )


def word_from_str(text: str) -> Word:
    if text == "1":
        return IDENTITY_WORD
    a: list[int] = []
    b: list[int] = []
    for tok in text.split("."):
        if tok.startswith("A"):
            a.append(int(tok[1:]))
        elif tok.startswith("B"):
            b.append(int(tok[1:]))
        else:
            raise ValueError(f"bad word token {tok!r}")
    return tuple(a), tuple(b)


@dataclass(frozen=True)
class MonomialBasis:
    """Ordered monomial basis of one hierarchy level."""

    scenario: Scenario
    level: str
    words: tuple[Word, ...]

    def __len__(self) -> int:
        return len(self.words)


def build_basis(scenario: Scenario, level: str) -> MonomialBasis:
    """Deterministic basis: identity, Alice words (lexicographic), Bob
    words, then mixed A*B words."""
    if level not in LEVELS:
        raise ValueError(f"unsupported level {level!r}; choose from {LEVELS}")
    n, m = scenario.n_alice, scenario.n_bob
    alice: list[Word] = [((x,), ()) for x in range(n)]
    bob: list[Word] = [((), (y,)) for y in range(m)]
    mixed: list[Word] = [((x,), (y,)) for x in range(n) for y in range(m)]
    words: list[Word] = [IDENTITY_WORD] + alice
    if level == "2":
        words += [((x1, x2), ()) for x1 in range(n) for x2 in range(n) if x1 != x2]
    words += bob
    if level == "2":
        words += [((), (y1, y2)) for y1 in range(m) for y2 in range(m) if y1 != y2]
    if level in ("1+AB", "2"):
        words += mixed
    return MonomialBasis(scenario, level, tuple(words))


class MomentStructure:
    """Entry-to-variable identification of one moment matrix.

    ``cells[k]`` lists the upper-triangle positions (i, j), i <= j, whose
    entries all equal moment variable k; ``pinned`` lists positions fixed
    to the constant 1 (products reducing to the identity word).
    """

    __slots__ = ("basis", "dimension", "words", "index", "cells", "pinned",
                 "_f0", "_ftensor")

    def __init__(self, basis: MonomialBasis, words, index, cells, pinned):
        self.basis = basis
        self.dimension = len(basis)
        self.words = words          # tuple[Word], variable id -> canonical word
        self.index = index          # dict[Word, int]
        self.cells = cells          # tuple[tuple[(i, j), ...]]
        self.pinned = pinned        # tuple[(i, j), ...]
        self._f0 = None
        self._ftensor = None

    @property
    def scenario(self) -> Scenario:
        return self.basis.scenario

    @property
    def level(self) -> str:
        return self.basis.level

    @property
    def n_vars(self) -> int:
        return len(self.words)

    def var(self, word: Word) -> int:
        """Variable id of a (not necessarily reduced) word."""
        key = canonical_moment(word_product(word, IDENTITY_WORD))
        try:
            return self.index[key]
        except KeyError:
            raise KeyError(f"word {word_str(word)} has no moment at level {self.level}")

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(F0, F): moment matrix is F0 + sum_k y_k F[k]; cached."""
        if self._f0 is None:
            d = self.dimension
            f0 = np.zeros((d, d))
            for (i, j) in self.pinned:
                f0[i, j] = 1.0
                f0[j, i] = 1.0
            f = np.zeros((self.n_vars, d, d))
            for k, positions in enumerate(self.cells):
                for (i, j) in positions:
                    f[k, i, j] = 1.0
                    if i != j:
                        f[k, j, i] = 1.0
            f0.setflags(write=False)
            f.setflags(write=False)
            self._f0, self._ftensor = f0, f
        return self._f0, self._ftensor

    def matrix(self, assignment: np.ndarray) -> np.ndarray:
        """Dense moment matrix for a variable assignment."""
        f0, f = self.arrays()
        return f0 + np.tensordot(assignment, f, axes=1)


def build_moment_structure(basis: MonomialBasis) -> MomentStructure:
    d = len(basis)
    index: Dict[Word, int] = {}
    cells: list[list[tuple[int, int]]] = []
    pinned: list[tuple[int, int]] = []
    words: list[Word] = []
    for i in range(d):
        left = word_adjoint(basis.words[i])
        for j in range(i, d):
            w = word_product(left, basis.words[j])
            if w == IDENTITY_WORD:
                pinned.append((i, j))
                continue
            key = canonical_moment(w)
            k = index.get(key)
            if k is None:
                k = len(words)
                index[key] = k
                words.append(key)
                cells.append([])
            cells[k].append((i, j))
    return MomentStructure(
        basis,
        tuple(words),
        index,
        tuple(tuple(c) for c in cells),
        tuple(pinned),
    )


@dataclass(frozen=True)
class LinearFunctional:
    """Affine function of moment variables: sum_k terms[k]*y_k + constant."""

    terms: dict[int, float] = field(default_factory=dict)
    constant: float = 0.0

    def evaluate(self, assignment: np.ndarray) -> float:
        return self.constant + sum(c * float(assignment[k]) for k, c in self.terms.items())

    def __add__(self, other: "LinearFunctional") -> "LinearFunctional":
        terms = dict(self.terms)
        for k, c in other.terms.items():
            terms[k] = terms.get(k, 0.0) + c
        return LinearFunctional(terms, self.constant + other.constant)

    def scaled(self, factor: float) -> "LinearFunctional":
        return LinearFunctional(
            {k: factor * c for k, c in self.terms.items()}, factor * self.constant
        )

    def vector(self, n_vars: int) -> np.ndarray:
        v = np.zeros(n_vars)
        for k, c in self.terms.items():
            v[k] = c
        return v


def _add_term(terms: dict[int, float], k: int, coeff: float) -> None:
    terms[k] = terms.get(k, 0.0) + coeff
    if terms[k] == 0.0:
        del terms[k]


def bell_functional(alpha: CoefficientMatrix, structure: MomentStructure) -> LinearFunctional:
    """Bell expression as an affine function of moments.

    Each correlator expands over projectors as 4<A_x B_y> - 2<A_x> - 2<B_y> + 1.
    """
    if alpha.scenario != structure.scenario:
        raise ScenarioMismatchError(
            f"expression scenario {alpha.scenario} != structure scenario {structure.scenario}"
        )
    terms: dict[int, float] = {}
    constant = 0.0
    for x in range(alpha.scenario.n_alice):
        for y in range(alpha.scenario.n_bob):
            a = float(alpha.entries[x, y])
            if a == 0.0:
                continue
            _add_term(terms, structure.var(((x,), (y,))), 4.0 * a)
            _add_term(terms, structure.var(((x,), ())), -2.0 * a)
            _add_term(terms, structure.var(((), (y,))), -2.0 * a)
            constant += a
    return LinearFunctional(terms, constant)


def probability_functional(
    a: int, b: int, x: int, y: int, structure: MomentStructure
) -> LinearFunctional:
    """Joint probability P(a,b|x,y) as an affine function of moments.

    P(+,+) = <AB>;  P(+,-) = <A> - <AB>;  P(-,+) = <B> - <AB>;
    P(-,-) = 1 - <A> - <B> + <AB>.
    """
    sc = structure.scenario
    if a not in (-1, 1) or b not in (-1, 1):
        raise ValueError("outcomes must be -1 or +1")
    if not (0 <= x < sc.n_alice and 0 <= y < sc.n_bob):
        raise ValueError(f"setting pair ({x},{y}) outside scenario {sc}")
    k_ab = structure.var(((x,), (y,)))
    k_a = structure.var(((x,), ()))
    k_b = structure.var(((), (y,)))
    terms: dict[int, float] = {}
    constant = 0.0
    if a == +1 and b == +1:
        _add_term(terms, k_ab, 1.0)
    elif a == +1 and b == -1:
        _add_term(terms, k_a, 1.0)
        _add_term(terms, k_ab, -1.0)
    elif a == -1 and b == +1:
        _add_term(terms, k_b, 1.0)
        _add_term(terms, k_ab, -1.0)
    else:
        constant = 1.0
        _add_term(terms, k_a, -1.0)
        _add_term(terms, k_b, -1.0)
        _add_term(terms, k_ab, 1.0)
    return LinearFunctional(terms, constant)
