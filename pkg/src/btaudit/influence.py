"""Per-matchup influence on fitted scores: first-order and leverage-corrected.

All computations share one Cholesky factorization of the fit's curvature
matrix, cached on the fit; solves against it are read-only and safe to run
concurrently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .btmodel import BtFit, FitError

__all__ = [
    "HessianFactor",
    "PairInfluence",
    "SingularHessianError",
    "hessian_factor",
    "influence_scores",
    "leverage",
    "leverages",
    "newton_scores",
    "pair_influence",
]

_SATURATION = 1e-12

# Score conventions. "derivative" is the exact derivative of a fitted score with
# respect to a matchup's weight and is what finite differences reproduce.
# "scaled" multiplies each score by the matchup's fitted variance p(1-p); it
# ranks matchups differently but never changes a verdict, which is refit-gated.
_MODES = ("derivative", "scaled")


class SingularHessianError(RuntimeError):
    """Curvature matrix not invertible: disconnected comparison graph or separation."""


class HessianFactor:
    """Solvable factorization of the curvature matrix on the free coordinates.

    Assembled once per fit; basis solutions and the embedded inverse are cached
    so any number of targets reuse the same factorization.
    """

    def __init__(self, bt: BtFit):
        arena = bt.arena
        m = arena.n_models
        p = bt.fitted_probs
        s = bt.weights * p * (1.0 - p)
        diag = np.bincount(arena.side_a, weights=s, minlength=m) + np.bincount(
            arena.side_b, weights=s, minlength=m
        )
        off = np.bincount(
            arena.side_a * m + arena.side_b, weights=s, minlength=m * m
        ).reshape(m, m)
        h = (np.diag(diag) - (off + off.T))[1:, 1:]
        if bt.ridge:
            h = h + bt.ridge * np.eye(m - 1)
        self.matrix = h
        self._n_models = m
        singular = None
        try:
            self._cho = cho_factor(h, lower=True)
        except np.linalg.LinAlgError as exc:
            singular = exc
        if singular is None:
            # Rounding can push an exactly singular matrix through the
            # factorization with a tiny pivot; treat that as singular too.
            pivots = np.abs(np.diag(self._cho[0]))
            if pivots.min() <= 1e-7 * pivots.max():
                singular = np.linalg.LinAlgError("numerically singular factor")
        if singular is not None:
            raise SingularHessianError(
                "curvature matrix is singular; the comparison graph is "
                "disconnected or the data are separated (ridge = 0)"
            ) from singular
        self._basis: dict[int, np.ndarray] = {}
        self._inverse: np.ndarray | None = None

    @property
    def n_models(self) -> int:
        return self._n_models

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve on the free coordinates."""
        return cho_solve(self._cho, rhs)

    def basis_solution(self, target: int) -> np.ndarray:
        """Full-length solution of H u = e_target, zero at the reference coordinate."""
        cached = self._basis.get(target)
        if cached is not None:
            return cached
        e = np.zeros(self._n_models - 1)
        e[target - 1] = 1.0
        full = np.zeros(self._n_models)
        full[1:] = self.solve(e)
        full.flags.writeable = False
        self._basis[target] = full
        return full

    def inverse(self) -> np.ndarray:
        """Embedded inverse with zero reference row and column; cached."""
        if self._inverse is None:
            m = self._n_models
            k = np.zeros((m, m))
            k[1:, 1:] = cho_solve(self._cho, np.eye(m - 1))
            k.flags.writeable = False
            self._inverse = k
        return self._inverse


def hessian_factor(bt: BtFit) -> HessianFactor:
    """The fit's cached factorization; built on first use."""
    fac = bt._cache.get("hessian_factor")
    if fac is None:
        fac = HessianFactor(bt)
        bt._cache["hessian_factor"] = fac
    return fac


def _check_fit(bt: BtFit) -> None:
    if not bt.converged:
        raise FitError("influence requires a converged fit")


def _check_mode(mode: str) -> None:
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")


def influence_scores(bt: BtFit, target: int | str, mode: str = "derivative") -> np.ndarray:
    """Derivative of the target model's fitted score with respect to each matchup weight.

    Evaluated at the fitted scores and the fit's weighting. The reference model's
    score is pinned, so its influence vector is identically zero.
    """
    _check_fit(bt)
    _check_mode(mode)
    arena = bt.arena
    t = arena.models.resolve(target)
    if t == 0:
        return np.zeros(arena.n_matchups)
    fac = hessian_factor(bt)
    u = fac.basis_solution(t)
    resid = arena.a_won.astype(np.float64) - bt.fitted_probs
    scores = (u[arena.side_a] - u[arena.side_b]) * resid
    if mode == "scaled":
        scores = scores * (bt.fitted_probs * (1.0 - bt.fitted_probs))
    return scores


def leverages(bt: BtFit) -> np.ndarray:
    """Weighted hat-matrix diagonal: p(1-p) * x' H^-1 x per matchup."""
    _check_fit(bt)
    fac = hessian_factor(bt)
    k = fac.inverse()
    sa, sb = bt.arena.side_a, bt.arena.side_b
    quad = k[sa, sa] + k[sb, sb] - 2.0 * k[sa, sb]
    return bt.fitted_probs * (1.0 - bt.fitted_probs) * quad


def leverage(bt: BtFit, n: int) -> float:
    if not 0 <= n < bt.n_matchups:
        raise IndexError(f"matchup index {n} out of range")
    return float(leverages(bt)[n])


def newton_scores(bt: BtFit, target: int | str, mode: str = "derivative") -> np.ndarray:
    """Influence scores with the one-step Newton correction 1/(1 - leverage).

    Matchups at saturated leverage (h >= 1 - 1e-12) are clamped to a large
    sentinel and reported with a warning; the refit step keeps verdicts exact.
    """
    base = influence_scores(bt, target, mode=mode)
    h = leverages(bt)
    denom = 1.0 - h
    saturated = denom <= _SATURATION
    if np.any(saturated):
        warnings.warn(
            f"{int(saturated.sum())} matchup(s) at saturated leverage; "
            "scores clamped to a sentinel",
            RuntimeWarning,
            stacklevel=2,
        )
        denom = np.where(saturated, _SATURATION, denom)
    return base / denom


@dataclass(frozen=True)
class PairInfluence:
    """Per-matchup effect of a weight change on the difference of two fitted scores."""

    pair: tuple[int, int]
    scores: np.ndarray
    method: str  # "if" | "newton"
    mode: str


def pair_influence(
    bt: BtFit, a: int | str, b: int | str, method: str = "if", mode: str = "derivative"
) -> PairInfluence:
    """Elementwise difference of the two models' influence vectors.

    Exactly influence(a) - influence(b), so linearity holds bit-for-bit and
    swapping the pair negates the scores.
    """
    ia = bt.arena.models.resolve(a)
    ib = bt.arena.models.resolve(b)
    if ia == ib:
        raise ValueError("pair influence needs two distinct models")
    if method == "if":
        per_target = influence_scores
    elif method == "newton":
        per_target = newton_scores
    else:
        raise ValueError(f"method must be 'if' or 'newton', got {method!r}")
    scores = per_target(bt, ia, mode=mode) - per_target(bt, ib, mode=mode)
    scores.flags.writeable = False
    return PairInfluence(pair=(ia, ib), scores=scores, method=method, mode=mode)
