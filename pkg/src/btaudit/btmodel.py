"""Weighted maximum-likelihood fitting of pairwise-strength scores.

The negative log-likelihood is convex and low-dimensional (one free coordinate
per model beyond the pinned reference), so a damped Newton iteration with a
dense solve per step is cheap and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .arena import Arena

__all__ = [
    "BtFit",
    "FitError",
    "HeadToHead",
    "Ranking",
    "SolverOptions",
    "Weighting",
    "fit",
    "head_to_head",
    "ranking",
    "refit_without",
    "top_k_set",
]

# Score spread beyond this with no ridge signals an unbounded likelihood.
_DIVERGENCE_BOUND = 30.0
# Below this gradient norm the iterate is in the quadratic basin; take raw Newton steps.
_PURE_NEWTON_GRAD = 1e-5
_ARMIJO = 1e-4
_MAX_HALVINGS = 40


class FitError(ValueError):
    """Raised for unusable weightings, dimension mismatches, or non-finite values."""


@dataclass(frozen=True)
class SolverOptions:
    """Knobs shared by a fit and every refit compared against it."""

    ridge: float = 1e-6
    tol: float = 1e-8
    max_iter: int = 100

    def __post_init__(self):
        if self.ridge < 0 or not np.isfinite(self.ridge):
            raise FitError("ridge must be a finite non-negative number")
        if not self.tol > 0:
            raise FitError("tol must be positive")
        if self.max_iter < 1:
            raise FitError("max_iter must be at least 1")


@dataclass(frozen=True)
class Weighting:
    """Per-matchup data weights; binary with zeros at dropped indices in audit use."""

    w: np.ndarray
    dropped_count: int

    def __post_init__(self):
        w = np.ascontiguousarray(self.w, dtype=np.float64)
        if w.ndim != 1:
            raise FitError("weights must be a 1-d vector")
        if not np.all(np.isfinite(w)) or w.min(initial=0.0) < 0 or w.max(initial=0.0) > 1:
            raise FitError("weights must lie in [0, 1]")
        w.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "dropped_count", int(np.count_nonzero(w == 0.0)))

    @classmethod
    def ones(cls, n: int) -> "Weighting":
        return cls(np.ones(n), 0)

    @classmethod
    def drop(cls, n: int, indices: Sequence[int]) -> "Weighting":
        idx = np.asarray(list(indices), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise FitError("drop indices out of range")
        if np.unique(idx).size != idx.size:
            raise FitError("drop indices must be unique")
        w = np.ones(n)
        w[idx] = 0.0
        return cls(w, int(idx.size))


@dataclass
class BtFit:
    """A fitted score vector under a data weighting, with solver diagnostics.

    ``scores[0]`` is exactly 0 (the reference). ``fitted_probs[n]`` is the
    probability that side A of matchup n wins under the fitted scores, stored
    for every matchup and recomputable bit-stably from ``scores``.
    Immutable after construction apart from an internal cache reused by
    influence computations (one curvature factorization per fit).
    """

    arena: Arena
    options: SolverOptions
    weights: np.ndarray
    scores: np.ndarray
    fitted_probs: np.ndarray
    converged: bool
    diverged: bool
    iterations: int
    gradient_norm: float
    unidentified: tuple[int, ...]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def ridge(self) -> float:
        return self.options.ridge

    @property
    def n_models(self) -> int:
        return self.arena.n_models

    @property
    def n_matchups(self) -> int:
        return self.arena.n_matchups

    def score_gap(self, a: int | str, b: int | str) -> float:
        ia = self.arena.models.resolve(a)
        ib = self.arena.models.resolve(b)
        return float(self.scores[ia] - self.scores[ib])


def _resolve_weights(arena: Arena, weighting) -> np.ndarray:
    if weighting is None:
        return np.ones(arena.n_matchups)
    if isinstance(weighting, Weighting):
        w = weighting.w
    else:
        w = np.ascontiguousarray(weighting, dtype=np.float64)
        if not np.all(np.isfinite(w)) or (w.size and w.min() < 0):
            raise FitError("weights must be finite and non-negative")
    if w.shape != (arena.n_matchups,):
        raise FitError(f"weighting has length {w.shape}, arena has {arena.n_matchups} matchups")
    if not np.any(w > 0):
        raise FitError("all weights are zero")
    return w


def _objective(theta, side_a, side_b, won, w, ridge) -> float:
    z = theta[side_a] - theta[side_b]
    val = float(w @ (np.logaddexp(0.0, z) - won * z))
    if ridge:
        free = theta[1:]
        val += 0.5 * ridge * float(free @ free)
    return val


def _gradient(theta, side_a, side_b, won, w, ridge, n_models):
    z = theta[side_a] - theta[side_b]
    p = expit(z)
    r = w * (p - won)
    g = np.bincount(side_a, weights=r, minlength=n_models) - np.bincount(
        side_b, weights=r, minlength=n_models
    )
    g = g[1:]
    if ridge:
        g = g + ridge * theta[1:]
    return g, p


def _curvature(side_a, side_b, p, w, ridge, n_models) -> np.ndarray:
    s = w * p * (1.0 - p)
    diag = np.bincount(side_a, weights=s, minlength=n_models) + np.bincount(
        side_b, weights=s, minlength=n_models
    )
    off = np.bincount(side_a * n_models + side_b, weights=s, minlength=n_models * n_models)
    off = off.reshape(n_models, n_models)
    h_full = np.diag(diag) - (off + off.T)
    h = h_full[1:, 1:]
    if ridge:
        h = h + ridge * np.eye(n_models - 1)
    return h


def _direction(h: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        d = np.linalg.solve(h, -g)
    except np.linalg.LinAlgError:
        d = None
    if d is None or not np.all(np.isfinite(d)):
        bump = 1e-10 * (np.trace(h) / h.shape[0] + 1.0)
        try:
            d = np.linalg.solve(h + bump * np.eye(h.shape[0]), -g)
        except np.linalg.LinAlgError:
            d = None
    if d is None or not np.all(np.isfinite(d)) or float(g @ d) >= 0:
        d = -g  # singular curvature: plain descent step
    return d


def _minimize(side_a, side_b, won, n_models, w, options: SolverOptions, theta0):
    """Damped Newton with reference coordinate pinned at 0.

    Returns (theta, probs, converged, iterations, gradient_norm).
    """
    if theta0 is None:
        theta = np.zeros(n_models)
    else:
        theta = np.ascontiguousarray(theta0, dtype=np.float64).copy()
        if theta.shape != (n_models,):
            raise FitError("warm start has the wrong length")
        if theta[0] != 0.0:
            raise FitError("warm start must pin the reference score to 0")
        if not np.all(np.isfinite(theta)):
            raise FitError("warm start contains non-finite values")

    ridge, tol = options.ridge, options.tol
    converged = False
    iterations = 0
    g, p = _gradient(theta, side_a, side_b, won, w, ridge, n_models)
    gnorm = float(np.abs(g).max()) if g.size else 0.0

    while True:
        if not np.isfinite(gnorm):
            raise FitError("non-finite values encountered during fitting"
                           " (possible separation with ridge = 0)")
        if gnorm <= tol:
            converged = True
            break
        if iterations >= options.max_iter:
            break
        if ridge == 0.0 and float(np.abs(theta).max()) > _DIVERGENCE_BOUND:
            break  # unbounded drift; reported via the diverged flag

        h = _curvature(side_a, side_b, p, w, ridge, n_models)
        d = _direction(h, g)

        if gnorm <= _PURE_NEWTON_GRAD and float(np.abs(d).max()) <= 1.0:
            # Quadratic basin: the full Newton step is safe and the objective
            # differences are below float resolution, so skip the line search.
            cand = theta.copy()
            cand[1:] += d
            theta = cand
        else:
            f0 = _objective(theta, side_a, side_b, won, w, ridge)
            slope = float(g @ d)
            step = 1.0
            accepted = False
            for _ in range(_MAX_HALVINGS):
                cand = theta.copy()
                cand[1:] += step * d
                f1 = _objective(cand, side_a, side_b, won, w, ridge)
                if f1 <= f0 + _ARMIJO * step * slope:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break  # numerical floor reached before the gradient tolerance
            theta = cand
        iterations += 1
        g, p = _gradient(theta, side_a, side_b, won, w, ridge, n_models)
        gnorm = float(np.abs(g).max()) if g.size else 0.0

    return theta, expit(theta[side_a] - theta[side_b]), converged, iterations, gnorm


def _boundary_models(side_a, side_b, won, w, n_models) -> np.ndarray:
    """Models whose weighted record is all wins or all losses (likelihood unbounded)."""
    wins = np.bincount(side_a, weights=w * won, minlength=n_models) + np.bincount(
        side_b, weights=w * (1.0 - won), minlength=n_models
    )
    games = np.bincount(side_a, weights=w, minlength=n_models) + np.bincount(
        side_b, weights=w, minlength=n_models
    )
    return (games > 0) & ((wins == 0) | (wins == games))


def fit(
    arena: Arena,
    weighting: Weighting | np.ndarray | None = None,
    options: SolverOptions | None = None,
    warm_start: np.ndarray | None = None,
) -> BtFit:
    """Minimize the weighted negative log-likelihood with the reference score pinned to 0.

    Deterministic for fixed inputs and options. With ridge = 0 and a separated or
    disconnected weighting the likelihood has no finite minimizer; the fit then
    carries ``diverged=True`` and an honest ``converged=False``.
    """
    options = options or SolverOptions()
    w = _resolve_weights(arena, weighting)
    won = arena.a_won.astype(np.float64)
    n_models = arena.n_models

    scores, probs, converged, iterations, gnorm = _minimize(
        arena.side_a, arena.side_b, won, n_models, w, options, warm_start
    )

    diverged = False
    if options.ridge == 0.0:
        spread = float(np.abs(scores).max())
        if spread > _DIVERGENCE_BOUND or bool(np.any(_boundary_models(
                arena.side_a, arena.side_b, won, w, n_models))):
            diverged = True
            converged = False

    games = np.bincount(arena.side_a, weights=w, minlength=n_models) + np.bincount(
        arena.side_b, weights=w, minlength=n_models
    )
    unidentified = tuple(int(k) for k in np.flatnonzero(games == 0))

    scores.flags.writeable = False
    probs.flags.writeable = False
    return BtFit(
        arena=arena,
        options=options,
        weights=w,
        scores=scores,
        fitted_probs=probs,
        converged=converged,
        diverged=diverged,
        iterations=iterations,
        gradient_norm=gnorm,
        unidentified=unidentified,
    )


def _fit_scores(
    arena: Arena,
    w: np.ndarray,
    options: SolverOptions,
    warm_start: np.ndarray | None = None,
) -> np.ndarray:
    """Score vector only; skips diagnostics for tight refit loops."""
    won = arena.a_won.astype(np.float64)
    scores, _, _, _, _ = _minimize(
        arena.side_a, arena.side_b, won, arena.n_models, w, options, warm_start
    )
    return scores


def refit_without(
    arena: Arena,
    options: SolverOptions,
    drop_indices: Sequence[int],
    warm_start: np.ndarray | None = None,
) -> BtFit:
    """Refit with the given matchups removed, under the same options as the base fit.

    A model that loses all its remaining matchups is reported in ``unidentified``
    (the ridge keeps its score near 0); dropping nothing reproduces the full-data
    fit exactly.
    """
    weighting = Weighting.drop(arena.n_matchups, drop_indices)
    return fit(arena, weighting, options, warm_start=warm_start)


@dataclass(frozen=True)
class Ranking:
    """Models sorted by fitted score, best first; exact ties noted and broken by index."""

    order: tuple[int, ...]
    tie_note: tuple[tuple[int, int], ...]


def _scores_of(fit_or_scores) -> np.ndarray:
    if isinstance(fit_or_scores, BtFit):
        return fit_or_scores.scores
    return np.asarray(fit_or_scores, dtype=np.float64)


def ranking(fit_or_scores) -> Ranking:
    scores = _scores_of(fit_or_scores)
    order = np.lexsort((np.arange(scores.size), -scores))
    ties = tuple(
        (int(order[r]), int(order[r + 1]))
        for r in range(scores.size - 1)
        if scores[order[r]] == scores[order[r + 1]]
    )
    return Ranking(order=tuple(int(k) for k in order), tie_note=ties)


def top_k_set(fit_or_scores, k: int) -> set[int]:
    """The k models of highest fitted score; boundary ties go to the lower index."""
    scores = _scores_of(fit_or_scores)
    if not 1 <= k < scores.size:
        raise ValueError(f"k must satisfy 1 <= k < {scores.size}, got {k}")
    order = np.lexsort((np.arange(scores.size), -scores))
    return {int(m) for m in order[:k]}


@dataclass(frozen=True)
class HeadToHead:
    """Direct record between two models; win_percent is None when they never met."""

    wins_a: int
    wins_b: int
    win_percent: float | None

    @property
    def met(self) -> bool:
        return self.wins_a + self.wins_b > 0


def head_to_head(arena: Arena, a: int | str, b: int | str) -> HeadToHead:
    ia = arena.models.resolve(a)
    ib = arena.models.resolve(b)
    if ia == ib:
        raise ValueError("head-to-head needs two distinct models")
    forward = (arena.side_a == ia) & (arena.side_b == ib)
    backward = (arena.side_a == ib) & (arena.side_b == ia)
    wins_a = int(np.count_nonzero(forward & (arena.a_won == 1)))
    wins_a += int(np.count_nonzero(backward & (arena.a_won == 0)))
    wins_b = int(np.count_nonzero(forward & (arena.a_won == 0)))
    wins_b += int(np.count_nonzero(backward & (arena.a_won == 1)))
    total = wins_a + wins_b
    percent = wins_a / total if total else None
    return HeadToHead(wins_a=wins_a, wins_b=wins_b, win_percent=percent)
