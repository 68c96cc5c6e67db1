"""Brute-force two-qubit oracle used as an independent witness in tests.

Maximizes a Bell expression over pure two-qubit states and projective
+/-1 measurements (each observable a Bloch unit vector), via multi-start
quasi-Newton optimization.  Every value it produces is a certified lower
bound on the true quantum maximum, so the SDP relaxation must sit at or
above it.  The same realization also yields full behaviors and moment
assignments, giving the relaxation layer feasible points that were
computed without touching the solver.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from bellcert.npa import MomentStructure, Word
from bellcert.scenario import Behavior, CoefficientMatrix

_SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
_SY = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
_SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
_ID = np.eye(2, dtype=complex)


def _observable(theta: float, phi: float) -> np.ndarray:
    n = (np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta))
    return n[0] * _SX + n[1] * _SY + n[2] * _SZ


def _plus_projector(theta: float, phi: float) -> np.ndarray:
    return (_ID + _observable(theta, phi)) / 2.0


@dataclass(frozen=True)
class QubitRealization:
    """A concrete state + measurement assignment and its Bell value."""

    alpha: CoefficientMatrix
    value: float
    state: np.ndarray          # 2x2 matrix form of the pure state
    alice_angles: np.ndarray   # (N, 2) theta/phi
    bob_angles: np.ndarray     # (M, 2)

    def _pair_expectation(self, op_a: np.ndarray, op_b: np.ndarray) -> float:
        psi = self.state
        return float(np.real(np.trace(psi.conj().T @ op_a @ psi @ op_b.T)))

    def behavior(self) -> Behavior:
        n, m = self.alpha.entries.shape
        probs = np.empty((2, 2, n, m))
        for x in range(n):
            pa = _plus_projector(*self.alice_angles[x])
            for y in range(m):
                pb = _plus_projector(*self.bob_angles[y])
                pp = self._pair_expectation(pa, pb)
                a_marg = self._pair_expectation(pa, _ID)
                b_marg = self._pair_expectation(_ID, pb)
                probs[1, 1, x, y] = pp
                probs[1, 0, x, y] = a_marg - pp
                probs[0, 1, x, y] = b_marg - pp
                probs[0, 0, x, y] = 1.0 - a_marg - b_marg + pp
        return Behavior(np.clip(probs, 0.0, 1.0))

    def word_expectation(self, word: Word) -> float:
        """Real part of the word's expectation in this realization."""
        op_a = _ID.copy()
        for x in word[0]:
            op_a = op_a @ _plus_projector(*self.alice_angles[x])
        op_b = _ID.copy()
        for y in word[1]:
            op_b = op_b @ _plus_projector(*self.bob_angles[y])
        return self._pair_expectation(op_a, op_b)

    def moment_assignment(self, structure: MomentStructure) -> np.ndarray:
        """A feasible point of the moment relaxation at any level."""
        return np.array([self.word_expectation(w) for w in structure.words])


def _unpack(params: np.ndarray, n: int, m: int):
    state = (params[:4] + 1j * params[4:8]).reshape(2, 2)
    state = state / np.linalg.norm(state)
    a_angles = params[8 : 8 + 2 * n].reshape(n, 2)
    b_angles = params[8 + 2 * n :].reshape(m, 2)
    return state, a_angles, b_angles


def _bell_of(params: np.ndarray, alpha: np.ndarray) -> float:
    n, m = alpha.shape
    state, a_angles, b_angles = _unpack(params, n, m)
    obs_a = np.stack([_observable(*a_angles[x]) for x in range(n)])
    obs_b = np.stack([_observable(*b_angles[y]) for y in range(m)])
    corr = np.real(
        np.einsum("ba,xbc,cd,yad->xy", state.conj(), obs_a, state, obs_b, optimize=True)
    )
    return float((alpha * corr).sum())


def maximize_bell(
    alpha: CoefficientMatrix, n_starts: int = 10, seed: int = 1234
) -> QubitRealization:
    """Best two-qubit realization found by multi-start L-BFGS-B."""
    a = np.asarray(alpha.entries, dtype=float)
    n, m = a.shape
    rng = np.random.default_rng(seed)
    dim = 8 + 2 * n + 2 * m
    best_val = -np.inf
    best_params = None
    for _ in range(n_starts):
        start = rng.normal(size=dim)
        res = minimize(
            lambda q: -_bell_of(q, a),
            start,
            method="L-BFGS-B",
            options={"maxiter": 600, "ftol": 1e-14, "gtol": 1e-11},
        )
        if -res.fun > best_val:
            best_val = -res.fun
            best_params = res.x
    state, a_angles, b_angles = _unpack(best_params, n, m)
    return QubitRealization(alpha, best_val, state, a_angles, b_angles)
