"""Franchise (seating-based) samplers: bookkeeping, sweeps, checkpoints."""

import numpy as np
import pytest

from nhdp.corpus import Corpus
from nhdp.gibbs_crf import (
    CrfSweepStats,
    HdpCrfState,
    U2CrfState,
    crf_sweep,
    hdp_sample_dish,
    load_crf_checkpoint,
    save_crf_checkpoint,
    u2_sample_dish,
)
from nhdp.randdist import Rng
from nhdp.state import Hyper


def grouped_corpus():
    return Corpus([[0, 1, 2, 0], [2, 3, 1], [0, 3, 3, 2, 1]], ["a", "b", "c", "d"])


def pooled_corpus():
    return Corpus([[0, 1, 2, 0, 2, 3, 1, 0, 3, 3]], ["a", "b", "c", "d"])


class TestHdpCrfState:
    def test_requires_single_level(self):
        with pytest.raises(ValueError, match="L=0"):
            HdpCrfState(grouped_corpus(), Hyper(L=1), Rng(0))

    def test_initialization_seats_every_token(self):
        s = HdpCrfState(grouped_corpus(), Hyper(L=0), Rng(1))
        assert np.all(s.token_table >= 0)
        assert s.validate() is None
        assert s.K >= 1
        assert s.total_tables() >= s.K

    def test_sweep_preserves_tokens_and_validates(self):
        s = HdpCrfState(grouped_corpus(), Hyper(L=0), Rng(2))
        total = s.topics.nw.sum()
        for _ in range(5):
            stats = crf_sweep(s)
            assert s.validate() is None
        assert s.topics.nw.sum() == total
        assert stats.sweep == 5
        assert stats.K == [s.K]
        assert stats.tables == s.total_tables()
        assert stats.weight_evals > 0
        assert stats.entity_evals == 0
        assert np.isfinite(stats.log_word)

    def test_chain_is_replayable(self):
        a = HdpCrfState(grouped_corpus(), Hyper(L=0), Rng(3))
        b = HdpCrfState(grouped_corpus(), Hyper(L=0), Rng(3))
        for _ in range(4):
            crf_sweep(a)
            crf_sweep(b)
        assert a.config() == b.config()
        np.testing.assert_array_equal(a.topics.nw, b.topics.nw)

    def test_dish_move_keeps_books(self):
        s = HdpCrfState(grouped_corpus(), Hyper(L=0, gamma=5.0), Rng(4))
        for j in range(s.M):
            for t in range(len(s.table_n[j])):
                hdp_sample_dish(s, j, t)
                assert s.validate() is None

    def test_snapshot_shape(self):
        s = HdpCrfState(grouped_corpus(), Hyper(L=0), Rng(5))
        crf_sweep(s)
        snap = s.snapshot()
        assert snap.K == [s.K]
        assert snap.n[0].shape == (s.M, s.K)
        np.testing.assert_array_equal(snap.n[0].sum(axis=1), [4, 3, 5])
        assert snap.beta[0].sum() + snap.beta_new[0] == pytest.approx(1.0, abs=1e-12)
        assert snap.regime == "none"
        assert snap.sweep == s.sweep

    def test_config_is_canonical(self):
        s = HdpCrfState(grouped_corpus(), Hyper(L=0), Rng(6))
        (z0,) = s.config()
        assert len(z0) == 12
        seen = []
        for lab in z0:
            if lab not in seen:
                assert lab == len(seen)
                seen.append(lab)


class TestU2CrfState:
    def test_requires_two_levels(self):
        with pytest.raises(ValueError, match="L=1"):
            U2CrfState(pooled_corpus(), Hyper(L=0), Rng(0))

    def test_initialization_seats_every_token(self):
        s = U2CrfState(pooled_corpus(), Hyper(L=1), Rng(1))
        assert np.all(s.token_entity >= 0) and np.all(s.token_table >= 0)
        assert s.validate() is None
        assert s.entity_n.sum() == 10

    def test_sweep_validates_and_counts_entity_evals(self):
        s = U2CrfState(pooled_corpus(), Hyper(L=1), Rng(2))
        for _ in range(5):
            stats = crf_sweep(s)
            assert s.validate() is None
        assert stats.K == [s.K_topics, s.K_entities]
        assert stats.entity_evals > 0
        assert stats.weight_evals >= stats.entity_evals

    def test_entity_eval_count_tracks_state_size(self):
        # Each token update touches every topic, every entity, and every
        # table, so a sweep's entity evaluations are at least N times the
        # smallest (K0 + R + tables) seen and at most N times the largest.
        s = U2CrfState(pooled_corpus(), Hyper(L=1), Rng(3))
        lo = s.N_total * (1 + 1 + 1)
        hi = s.N_total * (s.N_total + s.N_total + s.N_total + 1)
        stats = crf_sweep(s)
        assert lo <= stats.entity_evals <= hi

    def test_chain_is_replayable(self):
        a = U2CrfState(pooled_corpus(), Hyper(L=1), Rng(4))
        b = U2CrfState(pooled_corpus(), Hyper(L=1), Rng(4))
        for _ in range(4):
            crf_sweep(a)
            crf_sweep(b)
        assert a.config() == b.config()

    def test_dish_move_keeps_books(self):
        s = U2CrfState(pooled_corpus(), Hyper(L=1, gamma=4.0), Rng(5))
        for r in range(s.K_entities):
            for t in range(len(s.table_n[r])):
                u2_sample_dish(s, r, t)
                assert s.validate() is None

    def test_snapshot_shape(self):
        s = U2CrfState(pooled_corpus(), Hyper(L=1), Rng(6))
        crf_sweep(s)
        snap = s.snapshot()
        assert snap.M == 1
        assert snap.K == [s.K_topics, s.K_entities]
        assert snap.n[0].shape == (s.K_entities, s.K_topics)
        assert snap.n[1].shape == (1, s.K_entities)
        for l in (0, 1):
            assert snap.beta[l].sum() + snap.beta_new[l] == pytest.approx(1.0, abs=1e-12)

    def test_config_has_two_levels(self):
        s = U2CrfState(pooled_corpus(), Hyper(L=1), Rng(7))
        z0, z1 = s.config()
        assert len(z0) == len(z1) == 10

    def test_heavy_resampling_never_corrupts(self):
        s = U2CrfState(pooled_corpus(), Hyper(L=1, alpha=0.3, gamma=[0.5, 0.5]), Rng(8))
        for _ in range(30):
            crf_sweep(s)
        assert s.validate() is None
        assert s.entity_n.sum() == 10


class TestCrfCheckpoints:
    def test_hdp_roundtrip_and_determinism(self, tmp_path):
        s = HdpCrfState(grouped_corpus(), Hyper(L=0), Rng(9))
        crf_sweep(s)
        p1, p2 = str(tmp_path / "a.json"), str(tmp_path / "b.json")
        save_crf_checkpoint(s, p1)
        save_crf_checkpoint(s, p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()
        back = load_crf_checkpoint(p1)
        assert back.validate() is None
        assert back.config() == s.config()
        assert back.rng.get_state() == s.rng.get_state()

    def test_resumed_hdp_chain_matches(self, tmp_path):
        a = HdpCrfState(grouped_corpus(), Hyper(L=0), Rng(10))
        for _ in range(2):
            crf_sweep(a)
        path = str(tmp_path / "mid.json")
        save_crf_checkpoint(a, path)
        b = load_crf_checkpoint(path)
        for _ in range(3):
            crf_sweep(a)
            crf_sweep(b)
        assert a.config() == b.config()
        np.testing.assert_array_equal(a.topics.nw, b.topics.nw)

    def test_resumed_u2_chain_matches(self, tmp_path):
        a = U2CrfState(pooled_corpus(), Hyper(L=1), Rng(11))
        for _ in range(2):
            crf_sweep(a)
        path = str(tmp_path / "mid.json")
        save_crf_checkpoint(a, path)
        b = load_crf_checkpoint(path)
        for _ in range(3):
            crf_sweep(a)
            crf_sweep(b)
        assert a.config() == b.config()
        np.testing.assert_array_equal(a.entity_n, b.entity_n)

    def test_rejects_foreign_files(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ValueError, match="not a franchise checkpoint"):
            load_crf_checkpoint(str(path))
        path.write_text('{"format": "nhdp-crf-checkpoint", "version": 9}')
        with pytest.raises(ValueError, match="version"):
            load_crf_checkpoint(str(path))

    def test_rejects_unknown_state_type(self, tmp_path):
        with pytest.raises(TypeError):
            save_crf_checkpoint(object(), str(tmp_path / "x.json"))


def test_crf_sweep_rejects_unknown_state():
    with pytest.raises(TypeError):
        crf_sweep(object())


def test_stats_dataclass_defaults():
    stats = CrfSweepStats(sweep=1, K=[2], tables=3, seconds=0.1, weight_evals=5, log_word=-1.0)
    assert stats.entity_evals == 0
