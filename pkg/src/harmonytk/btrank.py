"""Bradley-Terry fitting of global realism scores from pairwise comparisons.

Worths are fit with minorization-maximization updates, whose log-likelihood
is provably non-decreasing — the fit asserts that every iteration. Scores
are reported as zero-mean log-worths.
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ZERO_MEAN = "zero_mean_log_worth"


class DisconnectedGraphError(ValueError):
    """Comparison graph does not connect all methods; worths unidentifiable."""


@dataclass(frozen=True)
class ComparisonMatrix:
    """Pairwise win counts: wins[i][j] = number of times methods[i] beat
    methods[j]."""

    methods: tuple
    wins: np.ndarray

    def __post_init__(self):
        n = len(self.methods)
        if len(set(self.methods)) != n:
            raise ValueError("duplicate method names")
        if self.wins.shape != (n, n):
            raise ValueError(f"wins must be {n}x{n}, got {self.wins.shape}")
        if np.any(self.wins < 0):
            raise ValueError("negative win counts")
        if np.any(np.diag(self.wins) != 0):
            raise ValueError("diagonal must be zero")

    def total_comparisons(self) -> int:
        return int(self.wins.sum())

    def is_connected(self) -> bool:
        """Whether every method is reachable through contested pairs."""
        n = len(self.methods)
        if n <= 1:
            return True
        played = (self.wins + self.wins.T) > 0
        seen = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in np.nonzero(played[i])[0]:
                if j not in seen:
                    seen.add(int(j))
                    frontier.append(int(j))
        return len(seen) == n


@dataclass(frozen=True)
class BTScores:
    methods: tuple
    log_worth: np.ndarray
    normalization: str = ZERO_MEAN
    converged: bool = True
    iterations: int = 0
    ll_trace: tuple = field(default=())

    def worth(self, method: str) -> float:
        return float(np.exp(self.log_worth[self.methods.index(method)]))

    def ranking(self) -> list[tuple[str, float]]:
        order = np.argsort(-self.log_worth)
        return [(self.methods[i], float(self.log_worth[i])) for i in order]


def matrix_from_results(rows, methods=None) -> ComparisonMatrix:
    """Build a count matrix from result rows {method_a, method_b, winner}."""
    if methods is None:
        names = []
        for r in rows:
            for key in ("method_a", "method_b"):
                if r[key] not in names:
                    names.append(r[key])
        methods = tuple(sorted(names))
    else:
        methods = tuple(methods)
    index = {m: i for i, m in enumerate(methods)}
    wins = np.zeros((len(methods), len(methods)), dtype=np.float64)
    for r in rows:
        a, b, w = r["method_a"], r["method_b"], r["winner"]
        if w not in (a, b):
            raise ValueError(f"winner {w!r} is neither side of the pair")
        loser = b if w == a else a
        wins[index[w], index[loser]] += 1
    return ComparisonMatrix(methods=methods, wins=wins)


def read_results_file(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _log_likelihood(wins: np.ndarray, worth: np.ndarray) -> float:
    i, j = np.nonzero(wins)
    if i.size == 0:
        return 0.0
    return float(
        (wins[i, j] * (np.log(worth[i]) - np.log(worth[i] + worth[j]))).sum()
    )


def fit_bradley_terry(m: ComparisonMatrix, max_iters: int = 1000,
                      tol: float = 1e-10) -> BTScores:
    """Fit worths by MM updates: worth_i <- W_i / sum_j n_ij/(worth_i+worth_j).

    Methods with zero wins or zero losses in the raw counts make the MLE
    diverge; every pair involving such a method receives a 0.5 pseudo-count
    in both directions before fitting. Connectivity is checked on the raw
    counts. If the iteration limit is reached before the max log-worth change
    drops below tol, the best-so-far scores are returned with converged=False.
    """
    if not m.is_connected():
        raise DisconnectedGraphError(
            f"comparison graph is disconnected over {m.methods}"
        )
    n = len(m.methods)
    wins = m.wins.astype(np.float64).copy()
    degenerate = (wins.sum(axis=1) == 0) | (wins.sum(axis=0) == 0)
    if degenerate.any():
        pad = np.zeros_like(wins)
        for i in np.nonzero(degenerate)[0]:
            pad[i, :] = np.maximum(pad[i, :], 0.5)
            pad[:, i] = np.maximum(pad[:, i], 0.5)
        np.fill_diagonal(pad, 0.0)
        wins = wins + pad

    games = wins + wins.T
    total_wins = wins.sum(axis=1)
    worth = np.ones(n)
    ll_trace = [_log_likelihood(wins, worth)]
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        pair_sum = worth[:, None] + worth[None, :]
        denom = (games / pair_sum).sum(axis=1) - np.diag(games / pair_sum)
        new = total_wins / denom
        new /= np.exp(np.mean(np.log(new)))  # geometric-mean 1 keeps scale pinned
        ll = _log_likelihood(wins, new)
        assert ll >= ll_trace[-1] - 1e-9, (
            f"log-likelihood decreased at iteration {iterations}: "
            f"{ll_trace[-1]} -> {ll}"
        )
        ll_trace.append(ll)
        delta = np.abs(np.log(new) - np.log(worth)).max()
        worth = new
        if delta < tol:
            converged = True
            break
    log_worth = np.log(worth)
    log_worth -= log_worth.mean()
    return BTScores(
        methods=m.methods,
        log_worth=log_worth,
        converged=converged,
        iterations=iterations,
        ll_trace=tuple(ll_trace),
    )


def predict_win_prob(s: BTScores, i: str, j: str) -> float:
    """P(i beats j) = exp(w_i) / (exp(w_i) + exp(w_j))."""
    if i == j:
        raise ValueError("need two distinct methods")
    wi = s.log_worth[s.methods.index(i)]
    wj = s.log_worth[s.methods.index(j)]
    return float(1.0 / (1.0 + np.exp(wj - wi)))


def format_ranking(s: BTScores) -> str:
    lines = [f"{'rank':<6}{'method':<20}{'log-worth':>12}{'worth':>10}"]
    lines.append("-" * len(lines[0]))
    for pos, (name, lw) in enumerate(s.ranking(), start=1):
        lines.append(f"{pos:<6}{name:<20}{lw:>12.4f}{np.exp(lw):>10.4f}")
    if not s.converged:
        lines.append("warning: iteration limit reached before convergence")
    return "\n".join(lines)


def write_scores(s: BTScores, path) -> None:
    payload = {
        "normalization": s.normalization,
        "converged": s.converged,
        "iterations": s.iterations,
        "scores": {m: float(v) for m, v in zip(s.methods, s.log_worth)},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
