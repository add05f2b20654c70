"""Command-line surface: train, eval, bench, synth.

Configuration is a flat ``key = value`` text file ('#' comments); CLI
``--set key=value`` flags override the file, and the ``NHDP_SEED``
environment variable overrides both for anything seed-like.  Exit
codes: 0 success, 2 usage/config problems (unknown keys are named), 3
sampler invariant failures (the last valid state is left on disk).
"""

from __future__ import annotations

import os
import sys

import click

from .corpus import (
    AuthorLabels,
    ParseError,
    author_vote_split,
    load_bow_corpus,
    load_jsonl_corpus,
    mask_authors,
    save_jsonl_corpus,
)
from .estimators import run_chain
from .evaluation import (
    MetricRecord,
    benchmark_schemes,
    extract_contributions,
    nmi_hidden_authors,
    perplexity_report,
    write_metrics_csv,
)
from .randdist import Rng
from .state import Hyper, InvariantError, load_checkpoint
from .synth import SynthConfig, generate, load_gold, write_synth_files

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

SCHEMES = ("direct", "crf-hdp", "ncrf-u2")
REGIME_CHOICES = ("auto", "none", "partial", "complete")
BENCH_MODES = ("hdp", "ungrouped2")


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_seeds(text: str) -> list:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"seeds must be a comma-separated integer list, got {text!r}") from None


def _choice(options):
    def cast(text: str) -> str:
        if text not in options:
            raise ConfigError(f"expected one of {options}, got {text!r}")
        return text

    return cast


# Every accepted configuration key with its parser.  Hyphens in keys are
# normalized to underscores, so "burn-in" and "burn_in" both work.
CONFIG_KEYS = {
    "corpus": str,
    "vocab": str,
    "scheme": _choice(SCHEMES),
    "L": int,
    "regime": _choice(REGIME_CHOICES),
    "seeds": _parse_seeds,
    "sweeps": int,
    "burn_in": int,
    "thinning": int,
    "eta": float,
    "alpha": float,
    "gamma": float,
    "alpha_prior_a": float,
    "alpha_prior_b": float,
    "gamma_prior_a": float,
    "gamma_prior_b": float,
    "resample_hypers": _parse_bool,
    "epsilon_bias": float,
    "checkpoint_every": int,
    "validate_every": int,
    "fold_sweeps": int,
    "out_dir": str,
    "p_train": float,
    "split_seed": int,
    "mask_pg": float,
    "mask_pl": float,
    "mask_seed": int,
    "bench_mode": _choice(BENCH_MODES),
    # synthetic-corpus generator
    "n_entities": int,
    "n_topics": int,
    "vocab_size": int,
    "n_docs": int,
    "doc_len": int,
    "max_authors": int,
    "topic_word_concentration": float,
    "entity_topic_concentration": float,
    "doc_entity_concentration": float,
    "seed": int,
}

DEFAULTS = {
    "scheme": "direct",
    "L": 1,
    "regime": "auto",
    "seeds": [0],
    "sweeps": 100,
    "burn_in": 50,
    "thinning": 5,
    "eta": 0.1,
    "alpha": 1.0,
    "gamma": 1.0,
    "alpha_prior_a": 1.0,
    "alpha_prior_b": 1.0,
    "gamma_prior_a": 1.0,
    "gamma_prior_b": 1.0,
    "resample_hypers": True,
    "epsilon_bias": 0.0,
    "checkpoint_every": 0,
    "validate_every": 0,
    "fold_sweeps": 10,
    "out_dir": "nhdp_run",
    "split_seed": 0,
    "mask_seed": 0,
    "bench_mode": "ungrouped2",
    "n_entities": 5,
    "n_topics": 8,
    "vocab_size": 50,
    "n_docs": 100,
    "doc_len": 50,
    "max_authors": 2,
    "topic_word_concentration": 0.1,
    "entity_topic_concentration": 0.15,
    "doc_entity_concentration": 1.0,
    "seed": 0,
}


def _set_key(cfg: dict, key: str, raw: str) -> None:
    key = key.strip().replace("-", "_")
    if key not in CONFIG_KEYS:
        raise ConfigError(f"unknown config key: {key}")
    try:
        cfg[key] = CONFIG_KEYS[key](raw.strip())
    except ConfigError:
        raise
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for config key {key}: {raw.strip()!r}") from None


def load_config(path: str | None, sets) -> dict:
    """Merged configuration: defaults, then file, then --set overrides,
    then the NHDP_SEED environment variable."""
    cfg = dict(DEFAULTS)
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
                key, value = line.split("=", 1)
                _set_key(cfg, key, value)
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, value = item.split("=", 1)
        _set_key(cfg, key, value)
    env_seed = os.environ.get("NHDP_SEED")
    if env_seed is not None:
        try:
            value = int(env_seed)
        except ValueError:
            raise ConfigError(f"NHDP_SEED must be an integer, got {env_seed!r}") from None
        cfg["seeds"] = [value]
        cfg["seed"] = value
        cfg["split_seed"] = value
        cfg["mask_seed"] = value
    return cfg


def _load_corpus(cfg: dict, key: str = "corpus", vocab: list | None = None):
    path = cfg.get(key)
    if not path:
        raise ConfigError(f"config key '{key}' is required")
    if path.endswith(".jsonl"):
        return load_jsonl_corpus(path, vocab=vocab)
    vocab_path = cfg.get("vocab")
    if not vocab_path:
        raise ConfigError("bag-of-words corpora need the 'vocab' config key")
    return load_bow_corpus(path, vocab_path), None


def _fail(message: str, code: int = EXIT_CONFIG):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    try:
        fn()
    except InvariantError as exc:
        click.echo(f"invariant violation: {exc}", err=True)
        sys.exit(EXIT_INVARIANT)
    except (ConfigError, ParseError, ValueError, OSError) as exc:
        _fail(str(exc))


@click.group()
def main():
    """Multi-level nonparametric admixture modeling."""


@main.command("train")
@click.option("--config", "-c", "config_path", type=click.Path(exists=True), default=None)
@click.option("--set", "-s", "sets", multiple=True, metavar="KEY=VALUE")
@click.option("--out", "out_dir", default=None, help="output directory (overrides out_dir key)")
@click.option("--resume", "resume_path", type=click.Path(exists=True), default=None)
def cmd_train(config_path, sets, out_dir, resume_path):
    """Run Gibbs chains; write checkpoints and a metrics CSV."""

    def impl():
        cfg = load_config(config_path, sets)
        if out_dir is not None:
            cfg["out_dir"] = out_dir
        out = cfg["out_dir"]
        os.makedirs(out, exist_ok=True)

        corpus, labels = _load_corpus(cfg)

        if cfg.get("p_train") is not None:
            if labels is None:
                raise ConfigError("p_train needs an author-labeled corpus for the vote split")
            train_idx, test_idx = author_vote_split(
                corpus, labels, cfg["p_train"], cfg["split_seed"]
            )
            save_jsonl_corpus(
                corpus.subset(test_idx), labels.subset(test_idx), os.path.join(out, "test.jsonl")
            )
            corpus = corpus.subset(train_idx)
            labels = labels.subset(train_idx)

        if cfg.get("mask_pg") is not None or cfg.get("mask_pl") is not None:
            if labels is None:
                raise ConfigError("mask_pg/mask_pl need an author-labeled corpus")
            labels = mask_authors(
                labels, cfg.get("mask_pg", 0.0), cfg.get("mask_pl", 0.0), cfg["mask_seed"]
            )

        regime = cfg["regime"]
        if regime == "none":
            labels = None
        elif regime != "auto":
            if labels is None:
                raise ConfigError(f"regime '{regime}' needs an author-labeled corpus")
            if regime == "complete" and any(not s for s in labels.known):
                raise ConfigError("regime 'complete' requires authors on every document")
            if labels.regime != regime:
                labels = AuthorLabels(
                    list(labels.known), regime, set(labels.global_hidden), list(labels.author_names)
                )

        scheme = cfg["scheme"]
        L = cfg["L"]
        if scheme == "crf-hdp":
            L = 0
        elif scheme == "ncrf-u2":
            L = 1
        if scheme != "direct" and labels is not None and any(labels.known):
            raise ConfigError(
                "franchise schemes do not model entity labels; use scheme=direct or regime=none"
            )
        hyper = Hyper(
            L=L,
            eta=cfg["eta"],
            alpha=cfg["alpha"],
            gamma=cfg["gamma"],
            alpha_a=cfg["alpha_prior_a"],
            alpha_b=cfg["alpha_prior_b"],
            gamma_a=cfg["gamma_prior_a"],
            gamma_b=cfg["gamma_prior_b"],
            epsilon_bias=cfg["epsilon_bias"],
        )

        resumed = None
        seeds = cfg["seeds"]
        if resume_path is not None:
            from .gibbs_crf import load_crf_checkpoint

            resumed = (
                load_crf_checkpoint(resume_path)
                if resume_path.endswith(".json")
                else load_checkpoint(resume_path)
            )
            seeds = seeds[:1]

        records = []
        for seed in seeds:
            chain_dir = os.path.join(out, f"chain_{seed}")
            os.makedirs(chain_dir, exist_ok=True)
            try:
                result = run_chain(
                    corpus,
                    labels,
                    hyper,
                    scheme=scheme,
                    sweeps=cfg["sweeps"],
                    burn_in=cfg["burn_in"],
                    thinning=cfg["thinning"],
                    seed=seed,
                    resample_hypers=cfg["resample_hypers"],
                    checkpoint_every=cfg["checkpoint_every"],
                    checkpoint_dir=chain_dir,
                    validate_every=cfg["validate_every"],
                    state=resumed,
                )
            except InvariantError as exc:
                click.echo(f"invariant violation in chain {seed}: {exc}", err=True)
                ext = ".nhdp" if scheme == "direct" else ".json"
                click.echo(
                    f"last valid checkpoint: {os.path.join(chain_dir, 'last_valid' + ext)}",
                    err=True,
                )
                sys.exit(EXIT_INVARIANT)
            records.extend(result.records)
            click.echo(
                f"chain {seed}: {cfg['sweeps']} sweeps, {len(result.samples)} samples, "
                f"checkpoints in {chain_dir}"
            )
        write_metrics_csv(records, os.path.join(out, "metrics.csv"))
        click.echo(f"metrics: {os.path.join(out, 'metrics.csv')}")

    _guarded(impl)


def _load_samples(checkpoint_paths):
    from .gibbs_crf import load_crf_checkpoint

    samples = []
    for path in checkpoint_paths:
        state = load_crf_checkpoint(path) if path.endswith(".json") else load_checkpoint(path)
        samples.append(state.snapshot())
    return samples


@main.command("eval")
@click.option("--checkpoint", "-k", "checkpoint_paths", multiple=True, required=True,
              type=click.Path(exists=True))
@click.option("--test", "test_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["perplexity", "nmi"]), default="perplexity")
@click.option("--gold", "gold_path", type=click.Path(exists=True), default=None,
              help="gold structure JSON (required for --mode nmi)")
@click.option("--train", "train_path", type=click.Path(exists=True), default=None,
              help="training corpus, used to align the test vocabulary")
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), default=None,
              help="vocabulary file when corpora are in bag-of-words format")
@click.option("--fold-sweeps", default=10, show_default=True)
@click.option("--out", "out_path", default="eval_metrics.csv", show_default=True)
def cmd_eval(checkpoint_paths, test_path, mode, gold_path, train_path, vocab_path, fold_sweeps, out_path):
    """Score checkpoints on a held-out corpus; write a metrics CSV."""

    def impl():
        samples = _load_samples(checkpoint_paths)
        V = samples[0].V
        for sample, path in zip(samples, checkpoint_paths):
            if sample.V != V:
                _fail(
                    f"incompatible vocabulary sizes: checkpoint {checkpoint_paths[0]} has {V}, "
                    f"{path} has {sample.V}"
                )

        train_vocab = None
        if train_path is not None:
            cfg = {"corpus": train_path, "vocab": vocab_path}
            train_corpus, _ = _load_corpus(cfg)
            train_vocab = train_corpus.vocab
        cfg = {"corpus": test_path, "vocab": vocab_path}
        test_corpus, _ = _load_corpus(cfg, vocab=train_vocab)
        if test_corpus.V > V and train_vocab is None:
            _fail(
                f"incompatible vocabulary sizes: test corpus has {test_corpus.V} words, "
                f"checkpoints have {V}; pass --train to align vocabularies"
            )

        rows = []
        if mode == "perplexity":
            for sample, path in zip(samples, checkpoint_paths):
                report = perplexity_report(
                    [sample], test_corpus, fold_sweeps=fold_sweeps, rng=Rng(0, stream=7)
                )
                rows.append(
                    MetricRecord("perplexity", report.perplexity, regime=sample.regime,
                                 sweep=sample.sweep)
                )
                if report.n_oov:
                    rows.append(
                        MetricRecord("oov_tokens", float(report.n_oov), regime=sample.regime,
                                     sweep=sample.sweep)
                    )
            if len(samples) > 1:
                report = perplexity_report(
                    samples, test_corpus, fold_sweeps=fold_sweeps, rng=Rng(0, stream=7)
                )
                rows.append(MetricRecord("perplexity_pooled", report.perplexity,
                                         regime=samples[-1].regime, sweep=samples[-1].sweep))
        else:
            if gold_path is None:
                raise ConfigError("--mode nmi needs --gold with the true contribution vectors")
            gold = load_gold(gold_path)
            true_vectors = gold["entity_word_counts"]
            for sample, path in zip(samples, checkpoint_paths):
                if sample.hyper.L < 1:
                    raise ConfigError(
                        f"checkpoint {path} has no entity level (L=0); NMI needs L >= 1"
                    )
                discovered = extract_contributions(sample)
                if true_vectors.shape[1] != discovered.shape[1]:
                    _fail(
                        f"gold vectors cover {true_vectors.shape[1]} documents but the "
                        f"checkpoint covers {discovered.shape[1]}"
                    )
                value = nmi_hidden_authors(true_vectors, discovered)
                rows.append(
                    MetricRecord("nmi_hidden_authors", value, regime=sample.regime,
                                 sweep=sample.sweep)
                )
        write_metrics_csv(rows, out_path)
        for row in rows:
            click.echo(f"{row.name} = {row.value:.6g}")
        click.echo(f"metrics: {out_path}")

    _guarded(impl)


@main.command("bench")
@click.option("--config", "-c", "config_path", type=click.Path(exists=True), default=None)
@click.option("--set", "-s", "sets", multiple=True, metavar="KEY=VALUE")
@click.option("--out", "out_path", default="bench_metrics.csv", show_default=True)
def cmd_bench(config_path, sets, out_path):
    """Time the direct scheme against the franchise scheme."""

    def impl():
        cfg = load_config(config_path, sets)
        corpus, _ = _load_corpus(cfg)
        mode = cfg["bench_mode"]
        hyper = Hyper(
            L=0 if mode == "hdp" else 1,
            eta=cfg["eta"],
            alpha=cfg["alpha"],
            gamma=cfg["gamma"],
        )
        records = benchmark_schemes(
            corpus, hyper, sweeps=cfg["sweeps"], seed=cfg["seeds"][0], mode=mode
        )
        write_metrics_csv(records, out_path)
        means = {}
        for rec in records:
            if rec.name.endswith("/mean_sweep_seconds"):
                means[rec.name.split("/")[0]] = rec.value
                click.echo(f"{rec.name} = {rec.value:.6g}")
        if "direct" in means and "ncrf" in means and means["ncrf"] > 0:
            click.echo(f"direct/ncrf per-sweep ratio = {means['direct'] / means['ncrf']:.4f}")
        click.echo(f"metrics: {out_path}")

    _guarded(impl)


@main.command("synth")
@click.option("--config", "-c", "config_path", type=click.Path(exists=True), default=None)
@click.option("--set", "-s", "sets", multiple=True, metavar="KEY=VALUE")
@click.option("--out-corpus", default="synth_corpus.jsonl", show_default=True)
@click.option("--out-gold", default="synth_gold.json", show_default=True)
def cmd_synth(config_path, sets, out_corpus, out_gold):
    """Forward-sample a finite two-level corpus with gold structure."""

    def impl():
        cfg = load_config(config_path, sets)
        synth_cfg = SynthConfig(
            n_entities=cfg["n_entities"],
            n_topics=cfg["n_topics"],
            vocab_size=cfg["vocab_size"],
            n_docs=cfg["n_docs"],
            doc_len=cfg["doc_len"],
            max_authors=cfg["max_authors"],
            topic_word_concentration=cfg["topic_word_concentration"],
            entity_topic_concentration=cfg["entity_topic_concentration"],
            doc_entity_concentration=cfg["doc_entity_concentration"],
            seed=cfg["seed"],
        )
        data = generate(synth_cfg)
        write_synth_files(data, out_corpus, out_gold)
        click.echo(
            f"wrote {synth_cfg.n_docs} docs x {synth_cfg.doc_len} tokens "
            f"({synth_cfg.n_docs * synth_cfg.doc_len} total) to {out_corpus}"
        )
        click.echo(f"gold structure: {out_gold}")

    _guarded(impl)


if __name__ == "__main__":
    main()
