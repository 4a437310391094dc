"""Log-space forward-backward over the linear loop/forward chain.

Conventions used throughout:

* ``log_phi`` is T x S: per-frame log label-posterior scores already gathered
  onto chain positions.
* A transition field is a pair of T x S matrices ``log_forward`` /
  ``log_loop``; row t holds the weights of transitions *arriving* at frame t,
  indexed by the source position.  Row 0 is never read.
* Scales enter multiplicatively in the log domain: emission terms are
  ``lpm_scale * log_phi``, transition terms ``tm_scale * log_psi``, in the
  likelihood and in every gradient.
* The library minimizes ``loss = -log_likelihood``; occupancy outputs are
  posterior probabilities regardless of sign convention.

The forward recursion (0-based, t >= 1):

    alpha[t][s] = lam*log_phi[t][s]
                  + LSE(alpha[t-1][s]   + tau*log_loop[t][s],
                        alpha[t-1][s-1] + tau*log_forward[t][s-1])

with alpha[0][0] = lam*log_phi[0][0] and all other states unreachable at the
boundaries.  The backward recursion mirrors it, and pairwise occupancies come
from the usual alpha/weight/beta products normalized by the sequence
likelihood.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

NEG_INF = float("-inf")

BRUTE_FORCE_MAX_PATHS = 10**6


class InfeasibleError(ValueError):
    """Raised when no monotone path exists (T < S)."""


@dataclass(frozen=True)
class Scales:
    """Log-linear exponents on the label posterior and transition model."""

    lpm_scale: float = 0.3
    tm_scale: float = 0.3

    def __post_init__(self):
        if self.lpm_scale < 0 or self.tm_scale < 0:
            raise ValueError("scales must be >= 0")


@dataclass(frozen=True)
class TransitionField:
    """Per-frame log loop/forward weights for every chain position.

    Fields produced by a transition model satisfy
    ``exp(log_forward) + exp(log_loop) == 1`` cell-wise; the lattice itself
    accepts arbitrary finite log-weights (a constant field with both entries
    equal degenerates the criterion to a CTC-style loss).
    """

    log_forward: np.ndarray  # (T, S)
    log_loop: np.ndarray     # (T, S)

    def __post_init__(self):
        if self.log_forward.shape != self.log_loop.shape:
            raise ValueError("log_forward / log_loop shape mismatch")

    @property
    def shape(self) -> tuple[int, int]:
        return self.log_forward.shape

    @staticmethod
    def constant(num_frames: int, num_states: int, log_value: float) -> "TransitionField":
        """Field with the same log-weight on every loop and forward arc."""
        m = np.full((num_frames, num_states), float(log_value))
        return TransitionField(log_forward=m, log_loop=m.copy())


@dataclass
class LatticeStats:
    """Full output of forward-backward for one utterance."""

    log_likelihood: float
    gamma: np.ndarray    # (T, S) occupancies, rows sum to 1
    xi_loop: np.ndarray  # (T-1, S), xi_t(s, s)
    xi_fwd: np.ndarray   # (T-1, S), xi_t(s, s+1); last column is 0


def _check_inputs(log_phi: np.ndarray, field: TransitionField) -> tuple[int, int]:
    log_phi = np.asarray(log_phi)
    if log_phi.ndim != 2:
        raise ValueError("log_phi must be T x S")
    T, S = log_phi.shape
    if S < 1:
        raise ValueError("need at least one chain state")
    if field.shape != (T, S):
        raise ValueError(f"transition field shape {field.shape} != posterior shape {(T, S)}")
    if T < S:
        raise InfeasibleError(f"no monotone path: T={T} < S={S}")
    if np.isnan(log_phi).any() or np.isnan(field.log_forward).any() or np.isnan(field.log_loop).any():
        raise ValueError("NaN in lattice inputs")
    return T, S


def _shift_right(row: np.ndarray) -> np.ndarray:
    """[a0..a_{n-1}] -> [-inf, a0..a_{n-2}] (predecessor lookup)."""
    out = np.empty_like(row)
    out[0] = NEG_INF
    out[1:] = row[:-1]
    return out


def forward_backward(log_phi: np.ndarray, field: TransitionField, scales: Scales) -> LatticeStats:
    """Scaled sequence log-likelihood plus frame and pairwise occupancies.

    Raises :class:`InfeasibleError` for T < S and ``ValueError`` on NaN
    inputs; outputs are always finite for feasible finite inputs.
    """
    T, S = _check_inputs(log_phi, field)
    lam, tau = scales.lpm_scale, scales.tm_scale

    em = lam * np.asarray(log_phi, dtype=np.float64)
    tr_loop = tau * np.asarray(field.log_loop, dtype=np.float64)
    tr_fwd = tau * np.asarray(field.log_forward, dtype=np.float64)

    log_alpha = np.empty((T, S))
    log_alpha[0] = NEG_INF
    log_alpha[0][0] = em[0][0]
    for t in range(1, T):
        stay = log_alpha[t - 1] + tr_loop[t]
        advance = _shift_right(log_alpha[t - 1] + tr_fwd[t])
        log_alpha[t] = em[t] + np.logaddexp(stay, advance)

    log_beta = np.empty((T, S))
    log_beta[T - 1] = NEG_INF
    log_beta[T - 1][S - 1] = 0.0
    for t in range(T - 2, -1, -1):
        stay = log_beta[t + 1] + em[t + 1] + tr_loop[t + 1]
        advance = np.empty(S)
        advance[S - 1] = NEG_INF
        advance[: S - 1] = log_beta[t + 1][1:] + em[t + 1][1:] + tr_fwd[t + 1][: S - 1]
        log_beta[t] = np.logaddexp(stay, advance)

    log_likelihood = float(log_alpha[T - 1][S - 1])

    gamma = np.exp(log_alpha + log_beta - log_likelihood)

    xi_loop = np.zeros((max(T - 1, 0), S))
    xi_fwd = np.zeros((max(T - 1, 0), S))
    if T > 1:
        a = log_alpha[: T - 1]
        xi_loop[:] = np.exp(a + em[1:] + tr_loop[1:] + log_beta[1:] - log_likelihood)
        xi_fwd[:, : S - 1] = np.exp(
            a[:, : S - 1]
            + em[1:, 1:]
            + tr_fwd[1:, : S - 1]
            + log_beta[1:, 1:]
            - log_likelihood
        )

    return LatticeStats(log_likelihood=log_likelihood, gamma=gamma, xi_loop=xi_loop, xi_fwd=xi_fwd)


def num_monotone_paths(num_frames: int, num_states: int) -> int:
    """Count of non-decreasing paths 1..S over T frames: C(T-1, S-1)."""
    if num_frames < num_states:
        return 0
    return math.comb(num_frames - 1, num_states - 1)


def iter_monotone_paths(num_frames: int, num_states: int):
    """Yield every monotone path as a (T,) array of 0-based positions."""
    T, S = num_frames, num_states
    for fwd_frames in itertools.combinations(range(1, T), S - 1):
        path = np.zeros(T, dtype=np.int64)
        s = 0
        k = 0
        for t in range(1, T):
            if k < len(fwd_frames) and t == fwd_frames[k]:
                s += 1
                k += 1
            path[t] = s
        yield path


def brute_force(log_phi: np.ndarray, field: TransitionField, scales: Scales) -> LatticeStats:
    """Path-enumeration reference with the same outputs as forward_backward.

    Sums scaled path weights over every monotone state sequence explicitly;
    occupancies are literal posterior expectations over the enumerated paths.
    Only usable while C(T-1, S-1) stays small.
    """
    T, S = _check_inputs(log_phi, field)
    n_paths = num_monotone_paths(T, S)
    if n_paths > BRUTE_FORCE_MAX_PATHS:
        raise ValueError(f"instance too large for enumeration: {n_paths} paths")
    lam, tau = scales.lpm_scale, scales.tm_scale

    em = lam * np.asarray(log_phi, dtype=np.float64)
    tr_loop = tau * np.asarray(field.log_loop, dtype=np.float64)
    tr_fwd = tau * np.asarray(field.log_forward, dtype=np.float64)

    paths = list(iter_monotone_paths(T, S))
    weights = np.empty(len(paths))
    for i, path in enumerate(paths):
        w = em[0][path[0]]
        for t in range(1, T):
            w += em[t][path[t]]
            if path[t] == path[t - 1]:
                w += tr_loop[t][path[t - 1]]
            else:
                w += tr_fwd[t][path[t - 1]]
        weights[i] = w

    log_likelihood = float(np.logaddexp.reduce(weights))

    gamma = np.zeros((T, S))
    xi_loop = np.zeros((max(T - 1, 0), S))
    xi_fwd = np.zeros((max(T - 1, 0), S))
    for path, w in zip(paths, weights):
        post = math.exp(w - log_likelihood)
        for t in range(T):
            gamma[t][path[t]] += post
        for t in range(T - 1):
            if path[t + 1] == path[t]:
                xi_loop[t][path[t]] += post
            else:
                xi_fwd[t][path[t]] += post

    return LatticeStats(log_likelihood=log_likelihood, gamma=gamma, xi_loop=xi_loop, xi_fwd=xi_fwd)


def loss_and_grads(
    log_phi: np.ndarray, field: TransitionField, scales: Scales
) -> tuple[float, np.ndarray, LatticeStats]:
    """Minimized criterion, its gradient w.r.t. log_phi, and the occupancies.

    Returns ``(loss, d_log_phi, stats)`` with ``loss = -log_likelihood`` and
    ``d_log_phi[t][s] = -lpm_scale * gamma[t][s]``; ``stats`` carries the
    pairwise occupancies the transition model consumes.
    """
    stats = forward_backward(log_phi, field, scales)
    d_log_phi = -scales.lpm_scale * stats.gamma
    return -stats.log_likelihood, d_log_phi, stats
