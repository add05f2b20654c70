"""Scikit-learn style estimators over the Gibbs schemes.

Both estimators share one training loop (`run_chain`) that handles
burn-in, thinned posterior-sample collection, periodic invariant
validation, and checkpoint cadence.  `fit` takes a Corpus as X and an
optional AuthorLabels as y; fitted attributes follow the trailing
underscore convention (`samples_`, `state_`, `records_`).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .corpus import AuthorLabels, Corpus
from .evaluation import MetricRecord, path_word_matrix, perplexity_report
from .randdist import Rng
from .state import Hyper, InvariantError, new_state, save_checkpoint, validate

__all__ = ["TrainResult", "run_chain", "NestedHDPGibbs", "FranchiseGibbs"]

CHAIN_STREAM = 0


@dataclass
class TrainResult:
    state: object
    samples: list
    records: list
    checkpoints: list


def _checkpoint_path(directory: str, sweep: int, ext: str) -> str:
    return os.path.join(directory, f"ckpt_{sweep:06d}{ext}")


def run_chain(
    corpus: Corpus,
    labels: AuthorLabels | None,
    hyper: Hyper,
    *,
    scheme: str = "direct",
    sweeps: int = 100,
    burn_in: int = 50,
    thinning: int = 5,
    seed: int = 0,
    resample_hypers: bool = True,
    checkpoint_every: int = 0,
    checkpoint_dir: str | None = None,
    validate_every: int = 0,
    state=None,
    metric_prefix: str = "train",
) -> TrainResult:
    """Run one Gibbs chain and collect thinned posterior samples.

    scheme is one of "direct" (token-level scheme, any depth), "crf-hdp"
    (franchise scheme, grouped single level), "ncrf-u2" (franchise
    scheme, ungrouped two level).  Pass `state` to resume: the loop runs
    `sweeps` more sweeps and the sample/checkpoint cadence keys off the
    state's own sweep counter, so a resumed run continues exactly like
    an uninterrupted one.  On an invariant failure the most recent
    validated state is written to <checkpoint_dir>/last_valid.<ext>
    before the error propagates.
    """
    from .gibbs_crf import (
        HdpCrfState,
        U2CrfState,
        crf_sweep,
        save_crf_checkpoint,
    )
    from .gibbs_direct import sweep as direct_sweep

    if sweeps < 0 or burn_in < 0:
        raise ValueError("sweeps and burn_in must be nonnegative")
    if thinning < 1:
        raise ValueError("thinning must be at least 1")

    direct = scheme == "direct"
    if state is None:
        rng = Rng(seed, stream=CHAIN_STREAM)
        if direct:
            state = new_state(corpus, labels, hyper, rng)
        elif scheme == "crf-hdp":
            state = HdpCrfState(corpus, hyper, rng)
        elif scheme == "ncrf-u2":
            pooled = Corpus(
                docs=[
                    np.concatenate(corpus.docs).astype(np.int64)
                    if corpus.total_tokens
                    else np.empty(0, dtype=np.int64)
                ],
                vocab=list(corpus.vocab),
            )
            state = U2CrfState(pooled, hyper, rng)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")

    ext = ".nhdp" if direct else ".json"
    save = save_checkpoint if direct else save_crf_checkpoint

    def checkpoint(sweep_no: int) -> str | None:
        if checkpoint_dir is None:
            return None
        path = _checkpoint_path(checkpoint_dir, sweep_no, ext)
        save(state, path)
        return path

    def check_state() -> None:
        problem = state.validate() if not direct else validate(state)
        if problem is not None:
            raise InvariantError(problem)

    def hold_last_valid() -> None:
        if checkpoint_dir is not None:
            save(state, os.path.join(checkpoint_dir, f"last_valid{ext}"))

    samples: list = []
    records: list = []
    checkpoints: list = []
    regime = state.regime if direct else "none"

    check_state()
    hold_last_valid()
    first = checkpoint(state.sweep)
    if first is not None:
        checkpoints.append(first)

    for _ in range(sweeps):
        if direct:
            stats = direct_sweep(state, resample_hypers=resample_hypers)
        else:
            stats = crf_sweep(state)
        records.append(
            MetricRecord(
                name=f"{metric_prefix}/sweep_seconds",
                value=stats.seconds,
                seed=seed,
                regime=regime,
                sweep=state.sweep,
                wall_ms=stats.seconds * 1e3,
            )
        )
        records.append(
            MetricRecord(
                name=f"{metric_prefix}/log_word",
                value=stats.log_word,
                seed=seed,
                regime=regime,
                sweep=state.sweep,
            )
        )
        for l, k in enumerate(stats.K):
            records.append(
                MetricRecord(
                    name=f"{metric_prefix}/K{l}",
                    value=float(k),
                    seed=seed,
                    regime=regime,
                    sweep=state.sweep,
                )
            )
        if validate_every and state.sweep % validate_every == 0:
            check_state()
            hold_last_valid()
        if state.sweep > burn_in and (state.sweep - burn_in) % thinning == 0:
            samples.append(state.snapshot())
        if checkpoint_every and state.sweep % checkpoint_every == 0:
            path = checkpoint(state.sweep)
            if path is not None:
                checkpoints.append(path)
    if sweeps > 0:
        final = checkpoint(state.sweep)
        if final is not None and final not in checkpoints:
            checkpoints.append(final)
    if not samples:
        samples.append(state.snapshot())
    return TrainResult(state=state, samples=samples, records=records, checkpoints=checkpoints)


class _GibbsEstimatorMixin:
    """Shared fitted-model behavior: transform via document fold-in and
    score as mean per-token held-out log likelihood."""

    def _check_fitted(self):
        if not hasattr(self, "samples_"):
            raise RuntimeError("estimator is not fitted; call fit first")

    def transform(self, X: Corpus) -> np.ndarray:
        """Per-document mixture over the last sample's top-level dishes
        (plus one column of brand-new-dish mass), learned by folding each
        document in with frozen global counts."""
        self._check_fitted()
        sample = self.samples_[-1]
        A = path_word_matrix(sample)
        L = sample.hyper.L
        KL = sample.K[L]
        alpha = sample.hyper.alpha[L]
        prior = alpha * np.asarray(sample.beta[L], dtype=np.float64)
        prior_new = alpha * float(sample.beta_new[L])
        rng = Rng(self.seed, stream=3)
        out = np.empty((X.M, KL + 1))
        from .randdist import sample_categorical

        for j, doc in enumerate(X.docs):
            words = np.asarray(doc, dtype=np.int64)
            n_doc = np.zeros(KL)
            if KL and words.size:
                like = np.ones((words.size, KL))
                for i, w in enumerate(words):
                    if w < sample.V:
                        like[i] = A[:KL, w]
                # Independent per-token init, then document-local Gibbs
                # (same fold-in as held-out scoring).
                assign = np.empty(words.size, dtype=np.int64)
                for i in range(words.size):
                    assign[i] = sample_categorical(prior * like[i], rng)
                n_doc += np.bincount(assign, minlength=KL)
                for _ in range(self.fold_sweeps):
                    for i in range(words.size):
                        n_doc[assign[i]] -= 1
                        assign[i] = sample_categorical((n_doc + prior) * like[i], rng)
                        n_doc[assign[i]] += 1
            mix = np.append(n_doc + prior, prior_new)
            out[j] = mix / mix.sum()
        return out

    def fit_transform(self, X: Corpus, y=None) -> np.ndarray:
        return self.fit(X, y).transform(X)

    def score(self, X: Corpus, y=None) -> float:
        """Mean per-token held-out log likelihood (negative log perplexity)."""
        self._check_fitted()
        report = perplexity_report(
            self.samples_, X, fold_sweeps=self.fold_sweeps, rng=Rng(self.seed, stream=7)
        )
        return -float(np.log(report.perplexity))

    def perplexity(self, X: Corpus, fold_sweeps: int | None = None) -> float:
        self._check_fitted()
        fs = self.fold_sweeps if fold_sweeps is None else fold_sweeps
        return perplexity_report(
            self.samples_, X, fold_sweeps=fs, rng=Rng(self.seed, stream=7)
        ).perplexity


class NestedHDPGibbs(BaseEstimator, _GibbsEstimatorMixin):
    """Nested admixture model trained with the direct (token-level)
    Gibbs scheme; works at any depth L >= 0.

    Parameters mirror the model: L levels above the topics, symmetric
    topic smoothing eta, per-level concentrations alpha/gamma (scalars
    broadcast across levels), optional vague gamma hyperpriors for
    resampling the concentrations, and the entity-observation regime
    ("none", "partial", "complete", or None to take the regime from the
    labels passed to fit).
    """

    def __init__(
        self,
        L: int = 1,
        eta: float = 0.1,
        alpha=1.0,
        gamma=1.0,
        regime: str | None = None,
        epsilon_bias: float = 0.0,
        sweeps: int = 100,
        burn_in: int = 50,
        thinning: int = 5,
        resample_hypers: bool = True,
        alpha_prior=(1.0, 1.0),
        gamma_prior=(1.0, 1.0),
        fold_sweeps: int = 10,
        seed: int = 0,
        checkpoint_every: int = 0,
        checkpoint_dir: str | None = None,
        validate_every: int = 0,
    ):
        self.L = L
        self.eta = eta
        self.alpha = alpha
        self.gamma = gamma
        self.regime = regime
        self.epsilon_bias = epsilon_bias
        self.sweeps = sweeps
        self.burn_in = burn_in
        self.thinning = thinning
        self.resample_hypers = resample_hypers
        self.alpha_prior = alpha_prior
        self.gamma_prior = gamma_prior
        self.fold_sweeps = fold_sweeps
        self.seed = seed
        self.checkpoint_every = checkpoint_every
        self.checkpoint_dir = checkpoint_dir
        self.validate_every = validate_every

    def _effective_labels(self, X: Corpus, y: AuthorLabels | None) -> AuthorLabels | None:
        if self.regime is None:
            return y
        if self.regime == "none":
            return AuthorLabels.none_for(X)
        if y is None:
            raise ValueError(f"regime {self.regime!r} needs author labels (y)")
        if y.regime == self.regime:
            return y
        return AuthorLabels(list(y.known), self.regime, set(y.global_hidden), list(y.author_names))

    def _hyper(self) -> Hyper:
        return Hyper(
            L=self.L,
            eta=self.eta,
            alpha=self.alpha,
            gamma=self.gamma,
            alpha_a=self.alpha_prior[0],
            alpha_b=self.alpha_prior[1],
            gamma_a=self.gamma_prior[0],
            gamma_b=self.gamma_prior[1],
            epsilon_bias=self.epsilon_bias,
        )

    def fit(self, X: Corpus, y: AuthorLabels | None = None):
        labels = self._effective_labels(X, y)
        result = run_chain(
            X,
            labels,
            self._hyper(),
            scheme="direct",
            sweeps=self.sweeps,
            burn_in=self.burn_in,
            thinning=self.thinning,
            seed=self.seed,
            resample_hypers=self.resample_hypers,
            checkpoint_every=self.checkpoint_every,
            checkpoint_dir=self.checkpoint_dir,
            validate_every=self.validate_every,
        )
        self.state_ = result.state
        self.samples_ = result.samples
        self.records_ = result.records
        self.checkpoints_ = result.checkpoints
        self.n_dishes_ = [result.state.K(l) for l in range(self.L + 1)]
        return self

    def contributions(self) -> np.ndarray:
        """Per-entity authored-token counts per training document."""
        from .evaluation import extract_contributions

        self._check_fitted()
        return extract_contributions(self.samples_[-1])


class FranchiseGibbs(BaseEstimator, _GibbsEstimatorMixin):
    """Seating-scheme (franchise) sampler for the two tractable shapes.

    variant "hdp": grouped single-level admixture (documents as
    restaurants over topics).  variant "ungrouped2": all tokens pooled,
    entity layer above topics.  Concentrations are fixed during
    sampling (no hyperprior resampling in this scheme).
    """

    def __init__(
        self,
        variant: str = "hdp",
        eta: float = 0.1,
        alpha=1.0,
        gamma=1.0,
        sweeps: int = 100,
        burn_in: int = 50,
        thinning: int = 5,
        fold_sweeps: int = 10,
        seed: int = 0,
        checkpoint_every: int = 0,
        checkpoint_dir: str | None = None,
        validate_every: int = 0,
    ):
        self.variant = variant
        self.eta = eta
        self.alpha = alpha
        self.gamma = gamma
        self.sweeps = sweeps
        self.burn_in = burn_in
        self.thinning = thinning
        self.fold_sweeps = fold_sweeps
        self.seed = seed
        self.checkpoint_every = checkpoint_every
        self.checkpoint_dir = checkpoint_dir
        self.validate_every = validate_every

    def fit(self, X: Corpus, y=None):
        if self.variant not in ("hdp", "ungrouped2"):
            raise ValueError(f"variant must be 'hdp' or 'ungrouped2', got {self.variant!r}")
        L = 0 if self.variant == "hdp" else 1
        hyper = Hyper(L=L, eta=self.eta, alpha=self.alpha, gamma=self.gamma)
        result = run_chain(
            X,
            None,
            hyper,
            scheme="crf-hdp" if self.variant == "hdp" else "ncrf-u2",
            sweeps=self.sweeps,
            burn_in=self.burn_in,
            thinning=self.thinning,
            seed=self.seed,
            checkpoint_every=self.checkpoint_every,
            checkpoint_dir=self.checkpoint_dir,
            validate_every=self.validate_every,
        )
        self.state_ = result.state
        self.samples_ = result.samples
        self.records_ = result.records
        self.checkpoints_ = result.checkpoints
        return self
