"""Direct-assignment Gibbs sampling for the nested model, any depth.

Per token the sampler resamples the whole dish path top-down.  At level
l the conditional is the product of two predictive factors:

* choosing dish p inside restaurant r = z[l+1]:
  (n[l][r, p] + alpha[l] * beta[l][p]) / (n[l][r, .] + alpha[l]),
  or alpha[l] * beta_new[l] / (n[l][r, .] + alpha[l]) for a fresh dish;
* the current lower assignment q = z[l-1] re-entering restaurant p:
  (n[l-1][p, q] + alpha[l-1] * beta[l-1][q]) / (n[l-1][p, .] + alpha[l-1]),
  which collapses to beta[l-1][q] when p is fresh (empty restaurant).

Level 0 swaps the second factor for the collapsed topic-word likelihood.
The token is removed from every count before the scan; pruning of dishes
it emptied is deferred until it is seated again so the old lower-level
assignments remain valid conditioning values.

Between token scans the auxiliary variables are refreshed: table counts
by simulating the seating process, stick weights from their Dirichlet
posterior given table counts, and concentrations with the usual
Beta/Bernoulli (per-restaurant) and Beta-mixture (dish-level) auxiliary
draws under Gamma hyperpriors.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .randdist import (
    sample_categorical,
    sample_categorical_log,
    sample_dirichlet,
    sample_table_counts,
)
from .state import (
    NEW_DISH,
    InvariantError,
    ModelState,
    add_token,
    remove_token,
)

__all__ = [
    "weights_z0",
    "weights_zl",
    "apply_entity_regime",
    "draw_path",
    "resample_token",
    "resample_sticks",
    "resample_table_counts",
    "resample_concentrations",
    "sweep",
    "SweepStats",
]


@dataclass
class SweepStats:
    """Per-sweep telemetry: dish counts, log-joint pieces, wall time."""

    sweep: int
    K: list
    log_word: float
    log_alloc: list
    seconds: float
    alpha: list = field(default_factory=list)
    gamma: list = field(default_factory=list)


def _prior_weights(state: ModelState, l: int, r: int) -> np.ndarray:
    """Log of the within-restaurant factor over K(l) dishes plus new."""
    alpha = state.hyper.alpha[l]
    K = state.K(l)
    out = np.empty(K + 1)
    if r == NEW_DISH:
        out[:K] = alpha * state.beta[l]
        out[K] = alpha * state.beta_new[l]
        denom = alpha
    else:
        out[:K] = state.n[l][r] + alpha * state.beta[l]
        out[K] = alpha * state.beta_new[l]
        denom = state.nsum[l][r] + alpha
    return np.log(out) - np.log(denom)


def weights_z0(state: ModelState, j: int, i: int, r: int) -> np.ndarray:
    """Log weights for the token's topic: restaurant prior times the
    collapsed topic-word likelihood; the last slot is a fresh topic."""
    t = state.token_index(j, i)
    w = int(state.words[t])
    eta, V = state.hyper.eta, state.V
    lw = _prior_weights(state, 0, r)
    K = state.K(0)
    like = np.empty(K + 1)
    like[:K] = (state.nw[:, w] + eta) / (state.nw_sum + V * eta)
    like[K] = 1.0 / V
    return lw + np.log(like)


def weights_zl(state: ModelState, j: int, i: int, l: int, r: int, q: int) -> np.ndarray:
    """Log weights for the level-l dish given parent restaurant r and the
    token's current level-(l-1) dish q; the last slot is a fresh dish."""
    if not 1 <= l <= state.L:
        raise ValueError(f"level must be in 1..{state.L}, got {l}")
    if not 0 <= q < state.K(l - 1):
        raise InvariantError(f"conditioning dish {q} is not active at level {l - 1}")
    lw = _prior_weights(state, l, r)
    alpha_b = state.hyper.alpha[l - 1]
    beta_q = state.beta[l - 1][q]
    K = state.K(l)
    second = np.empty(K + 1)
    second[:K] = (state.n[l - 1][:, q] + alpha_b * beta_q) / (state.nsum[l - 1] + alpha_b)
    second[K] = beta_q
    return lw + np.log(second)


def apply_entity_regime(
    log_weights: np.ndarray,
    authors,
    regime: str,
    dish_author: list,
    epsilon: float,
) -> np.ndarray:
    """Mask or bias level-L log weights according to the observation regime.

    ``complete``: only dishes carrying an author from ``authors`` stay;
    everything else, including the new-dish slot, goes to -inf.
    ``partial``: dishes carrying a known author gain additive mass
    ``epsilon`` on the natural (probability-product) scale.
    ``none``: unchanged.
    """
    if regime == "none":
        return log_weights
    out = np.array(log_weights, dtype=np.float64)
    K = len(dish_author)
    if out.size != K + 1:
        raise ValueError("weight vector does not match the dish list plus a new slot")
    if regime == "complete":
        if not authors:
            raise ValueError("regime 'complete' requires a nonempty author set")
        keep = np.array([a is not None and a in authors for a in dish_author], dtype=bool)
        out[:K][~keep] = -np.inf
        out[K] = -np.inf
        return out
    if regime == "partial":
        if epsilon > 0 and authors:
            boost = np.array([a is not None and a in authors for a in dish_author], dtype=bool)
            out[:K][boost] = np.logaddexp(out[:K][boost], np.log(epsilon))
        return out
    raise ValueError(f"unknown regime {regime!r}")


def _prior_mass(state: ModelState, l: int, r: int) -> np.ndarray:
    """Linear-scale counterpart of :func:`_prior_weights` (same
    normalization, so regime masses compose identically)."""
    alpha = state.hyper.alpha[l]
    K = state.K(l)
    out = np.empty(K + 1)
    if r == NEW_DISH:
        out[:K] = state.beta[l]
        out[K] = state.beta_new[l]
        return out
    out[:K] = state.n[l][r] + alpha * state.beta[l]
    out[K] = alpha * state.beta_new[l]
    out /= state.nsum[l][r] + alpha
    return out


def _apply_regime_mass(mass, authors, regime, dish_author, epsilon) -> np.ndarray:
    """Linear-scale counterpart of :func:`apply_entity_regime`."""
    if regime == "none":
        return mass
    K = len(dish_author)
    if regime == "complete":
        if not authors:
            raise ValueError("regime 'complete' requires a nonempty author set")
        for k in range(K):
            a = dish_author[k]
            if a is None or a not in authors:
                mass[k] = 0.0
        mass[K] = 0.0
        return mass
    if regime == "partial":
        if epsilon > 0 and authors:
            for k in range(K):
                a = dish_author[k]
                if a is not None and a in authors:
                    mass[k] += epsilon
        return mass
    raise ValueError(f"unknown regime {regime!r}")


def draw_path(state: ModelState, j: int, i: int, init: bool = False, old_path=None) -> list:
    """Draw a full dish path for token (j, i) top-down.

    With ``init`` the token has no current assignments, so lower-level
    conditioning factors are dropped and labeled documents are held to
    their own authors (complete style, no fresh entities).  Otherwise
    ``old_path`` supplies the conditioning values for levels below the
    one being drawn.  Fresh dishes are returned as NEW_DISH sentinels.

    Weights are composed on the linear scale (the factors are bounded
    predictive probabilities, so there is nothing for log-space to
    stabilize) to keep the per-token cost down.
    """
    L = state.L
    path = [NEW_DISH] * (L + 1)
    parent = j
    for l in range(L, 0, -1):
        mass = _prior_mass(state, l, parent)
        if not init:
            q = int(old_path[l - 1])
            if not 0 <= q < state.K(l - 1):
                raise InvariantError(f"conditioning dish {q} is not active at level {l - 1}")
            alpha_b = state.hyper.alpha[l - 1]
            beta_q = state.beta[l - 1][q]
            K = state.K(l)
            second = np.empty(K + 1)
            second[:K] = (state.n[l - 1][:, q] + alpha_b * beta_q) / (
                state.nsum[l - 1] + alpha_b
            )
            second[K] = beta_q
            mass *= second
        if l == L and state.regime != "none":
            authors = state.known[j]
            if init:
                if authors:
                    mass = _apply_regime_mass(mass, authors, "complete", state.dish_author, 0.0)
            else:
                mass = _apply_regime_mass(
                    mass, authors, state.regime, state.dish_author, state.hyper.epsilon_bias
                )
        choice = sample_categorical(mass, state.rng)
        path[l] = choice if choice < state.K(l) else NEW_DISH
        parent = path[l]
    t = state.token_index(j, i)
    w = int(state.words[t])
    eta, V = state.hyper.eta, state.V
    mass0 = _prior_mass(state, 0, parent)
    K0 = state.K(0)
    mass0[:K0] *= (state.nw[:, w] + eta) / (state.nw_sum + V * eta)
    mass0[K0] *= 1.0 / V
    choice = sample_categorical(mass0, state.rng)
    path[0] = choice if choice < K0 else NEW_DISH
    return path


def resample_token(state: ModelState, j: int, i: int) -> list:
    """One Gibbs update of token (j, i)'s full path.

    Removal defers pruning so dishes the token emptied stay available as
    conditioning values; they are pruned after the token is re-seated if
    still unused.  Only the old path's dishes can have been emptied, so
    pruning checks exactly those instead of rescanning every dish.
    """
    old_path = remove_token(state, j, i, prune=False)
    path = draw_path(state, j, i, init=False, old_path=old_path)
    add_token(state, j, i, path)
    for l in range(state.L, -1, -1):
        k = int(old_path[l])
        if state.n[l][:, k].sum() == 0 and not state.is_protected(l, k):
            state.prune_dish(l, k)
    # Labels may have been compacted; report the token's current path.
    t = state.token_index(j, i)
    return [int(state.z[l][t]) for l in range(state.L + 1)]


def resample_table_counts(state: ModelState, l: int) -> None:
    """Refresh m[l] by simulating the seating process in every occupied
    cell: n sequential seatings at concentration alpha[l] * beta[l][k]."""
    n = state.n[l]
    m = np.zeros_like(n)
    rows, cols = np.nonzero(n)
    if rows.size:
        ab = state.hyper.alpha[l] * state.beta[l][cols]
        m[rows, cols] = sample_table_counts(ab, n[rows, cols], state.rng)
    state.m[l] = m


# Dirichlet pseudo-count granted to protected (author-seeded) dishes with no
# tables, so observed entities keep strictly positive stick mass.
_PROTECTED_PSEUDO_TABLES = 1.0


def resample_sticks(state: ModelState, l: int) -> None:
    """Draw beta[l] from Dirichlet(m-column-sums..., gamma[l])."""
    mcol = state.m[l].sum(axis=0).astype(np.float64)
    if l == state.L and state.regime in ("complete", "partial"):
        for k in range(state.K(l)):
            if mcol[k] == 0.0 and state.is_protected(l, k):
                mcol[k] = _PROTECTED_PSEUDO_TABLES
    if np.any(mcol == 0.0):
        raise InvariantError(f"level-{l} dish without tables during stick resampling")
    params = np.append(mcol, state.hyper.gamma[l])
    draw = sample_dirichlet(params, state.rng)
    state.beta[l] = draw[:-1]
    state.beta_new[l] = float(draw[-1])


def resample_concentrations(state: ModelState, rounds: int = 1) -> None:
    """Resample alpha[l] and gamma[l] under their Gamma hyperpriors using
    the standard auxiliary-variable draws (one round per call by default).

    alpha[l] conditions on per-restaurant (customers, tables); gamma[l]
    on (total tables, distinct dishes).  With no data both reduce to
    prior draws.
    """
    h = state.hyper
    for l in range(state.L + 1):
        a, b = h.alpha_a[l], h.alpha_b[l]
        n_r = state.nsum[l].astype(np.float64)
        t_r = state.m[l].sum(axis=1).astype(np.float64)
        mask = n_r > 0
        for _ in range(rounds):
            alpha = h.alpha[l]
            if not np.any(mask):
                h.alpha[l] = state.rng.gamma(a, 1.0 / b)
                break
            nn, tt = n_r[mask], t_r[mask]
            w = state.rng.beta(alpha + 1.0, nn)
            s = state.rng.uniform(nn.size) < nn / (nn + alpha)
            shape = a + tt.sum() - s.sum()
            rate = b - np.log(w).sum()
            h.alpha[l] = state.rng.gamma(shape, 1.0 / rate)

        a, b = h.gamma_a[l], h.gamma_b[l]
        total_tables = float(state.m[l].sum())
        k_used = int((state.m[l].sum(axis=0) > 0).sum())
        for _ in range(rounds):
            gamma = h.gamma[l]
            if total_tables <= 0:
                h.gamma[l] = state.rng.gamma(a, 1.0 / b)
                break
            eta_aux = state.rng.beta(gamma + 1.0, total_tables)
            rate = b - np.log(eta_aux)
            odds = (a + k_used - 1.0) / (total_tables * rate)
            take_upper = state.rng.uniform() < odds / (1.0 + odds)
            shape = a + k_used if take_upper else a + k_used - 1.0
            h.gamma[l] = state.rng.gamma(shape, 1.0 / rate)


def _log_word_likelihood(state: ModelState) -> float:
    eta, V = state.hyper.eta, state.V
    K = state.K(0)
    if K == 0:
        return 0.0
    out = float(np.sum(gammaln(V * eta) - gammaln(state.nw_sum + V * eta)))
    nz = state.nw[state.nw > 0]
    out += float(np.sum(gammaln(nz + eta) - gammaln(eta)))
    return out


def _log_alloc_likelihood(state: ModelState, l: int) -> float:
    alpha = state.hyper.alpha[l]
    n = state.n[l]
    out = float(np.sum(gammaln(alpha) - gammaln(alpha + state.nsum[l])))
    rows, cols = np.nonzero(n)
    if rows.size:
        ab = alpha * state.beta[l][cols]
        out += float(np.sum(gammaln(ab + n[rows, cols]) - gammaln(ab)))
    return out


def sweep(state: ModelState, resample_hypers: bool = True) -> SweepStats:
    """One full Gibbs sweep.

    Token updates run in (document, position) lexical order, then table
    counts, then sticks, then (optionally) concentrations.  Returns
    telemetry for trace plots and benchmarks.
    """
    t0 = time.perf_counter()
    for j in range(state.M):
        for i in range(state.doc_len(j)):
            resample_token(state, j, i)
    for l in range(state.L + 1):
        resample_table_counts(state, l)
    for l in range(state.L + 1):
        resample_sticks(state, l)
    if resample_hypers:
        resample_concentrations(state)
    state.sweep += 1
    return SweepStats(
        sweep=state.sweep,
        K=[state.K(l) for l in range(state.L + 1)],
        log_word=_log_word_likelihood(state),
        log_alloc=[_log_alloc_likelihood(state, l) for l in range(state.L + 1)],
        seconds=time.perf_counter() - t0,
        alpha=[float(a) for a in state.hyper.alpha],
        gamma=[float(g) for g in state.hyper.gamma],
    )
