"""Spike encoders: determinism, binarity, hand-simulated delta modulation."""

import numpy as np
import pytest

from fedspike.encoding import (
    DirectCurrent,
    EncoderConfig,
    SpikeTensor,
    encode_batch,
    encode_delta,
    encode_direct,
    encode_rate,
    encode_rate_indexed,
)


class TestDirect:
    def test_single_step_is_window(self):
        w = np.random.default_rng(0).normal(size=(3, 5))
        enc = encode_direct(w, 1)
        assert len(enc) == 1
        assert np.array_equal(enc[0], w)

    def test_four_steps_identical(self):
        w = np.random.default_rng(1).normal(size=(2, 4))
        enc = encode_direct(w, 4)
        assert len(enc) == 4
        for t in range(4):
            assert np.array_equal(enc[t], w)
        assert [np.array_equal(x, w) for x in enc] == [True] * 4

    def test_zero_steps_rejected(self):
        with pytest.raises(ValueError, match=">= 1"):
            encode_direct(np.zeros((1, 1)), 0)

    def test_index_bounds(self):
        enc = encode_direct(np.zeros((1, 1)), 3)
        with pytest.raises(IndexError):
            enc[3]


class TestRate:
    def test_extremes(self):
        w = np.array([[0.0, 1.0, 0.25, 0.5, 1.0]])
        spikes = encode_rate(w, steps=50, seed=3)
        # min-max clamp maps min to p=0 and max to p=1
        assert spikes.data[:, 0, 0].sum() == 0
        assert spikes.data[:, 0, 1].sum() == 50
        assert spikes.data[:, 0, 4].sum() == 50

    def test_half_rate_law_of_large_numbers(self):
        w = np.array([[0.0, 0.5, 1.0]])
        spikes = encode_rate(w, steps=10_000, seed=5)
        assert abs(spikes.data[:, 0, 1].mean() - 0.5) < 0.02

    def test_equal_seed_bit_identical(self):
        w = np.random.default_rng(2).normal(size=(4, 6))
        a = encode_rate(w, 20, seed=9)
        b = encode_rate(w, 20, seed=9)
        assert np.array_equal(a.data, b.data)

    def test_different_seed_same_expected_rate(self):
        w = np.random.default_rng(2).normal(size=(8, 100))
        a = encode_rate(w, 200, seed=1)
        b = encode_rate(w, 200, seed=2)
        assert not np.array_equal(a.data, b.data)
        assert abs(a.rate - b.rate) < 0.01

    def test_binary(self):
        w = np.random.default_rng(4).normal(size=(3, 7))
        s = encode_rate(w, 11, seed=0)
        assert set(np.unique(s.data)) <= {0.0, 1.0}

    def test_constant_window_codes_at_half(self):
        s = encode_rate(np.full((2, 3), 7.7), 4000, seed=1)
        assert abs(s.rate - 0.5) < 0.05


class TestDelta:
    def test_constant_signal_silent(self):
        s = encode_delta(np.full((3, 10), 2.5), threshold=0.1)
        assert s.data.sum() == 0
        assert s.data.shape == (10, 6, 1)

    def test_hand_simulation(self):
        # x = [0.0, 0.3, 0.1, 0.5], threshold 0.15:
        # r starts at 0.0; ON fires at steps 2 and 4 (r: 0 -> 0.15 -> 0.15 -> 0.30).
        s = encode_delta(np.array([[0.0, 0.3, 0.1, 0.5]]), threshold=0.15)
        on, off = s.data[:, 0, 0], s.data[:, 1, 0]
        assert on.tolist() == [0.0, 1.0, 0.0, 1.0]
        assert off.tolist() == [0.0, 0.0, 0.0, 0.0]

    def test_descending_signal_off_plane(self):
        s = encode_delta(np.array([[0.5, 0.2, -0.1]]), threshold=0.15)
        on, off = s.data[:, 0, 0], s.data[:, 1, 0]
        assert on.sum() == 0
        assert off.tolist() == [0.0, 1.0, 1.0]

    def test_negation_swaps_planes(self):
        rng = np.random.default_rng(6)
        w = rng.normal(size=(4, 50))
        a = encode_delta(w, threshold=0.3)
        b = encode_delta(-w, threshold=0.3)
        n = w.shape[0]
        assert np.array_equal(a.data[:, :n], b.data[:, n:])
        assert np.array_equal(a.data[:, n:], b.data[:, :n])

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(7)
        w = rng.normal(size=(3, 80))
        counts = [encode_delta(w, threshold=th).data.sum()
                  for th in (0.05, 0.1, 0.2, 0.4, 0.8, 1.6)]
        assert counts == sorted(counts, reverse=True)

    def test_at_most_one_spike_per_step(self):
        w = np.random.default_rng(8).normal(size=(5, 60))
        s = encode_delta(w, threshold=0.2)
        per_step = s.data[:, :5, 0] + s.data[:, 5:, 0]
        assert per_step.max() <= 1.0

    def test_bad_threshold(self):
        with pytest.raises(ValueError, match="> 0"):
            encode_delta(np.zeros((1, 3)), threshold=0.0)


class TestSpikeTensor:
    def test_rejects_non_binary(self):
        with pytest.raises(ValueError, match="binary"):
            SpikeTensor(np.array([[0.0, 0.5]]))

    def test_rate_property(self):
        s = SpikeTensor(np.array([[1.0, 0.0, 1.0, 0.0]]))
        assert s.rate == 0.5


class TestConfigAndBatch:
    def test_config_validation(self):
        with pytest.raises(ValueError, match="scheme"):
            EncoderConfig(scheme="morse")
        with pytest.raises(ValueError, match="steps"):
            EncoderConfig(steps=0)
        with pytest.raises(ValueError, match="threshold"):
            EncoderConfig(delta_threshold=-1.0)

    def test_out_channels(self):
        assert EncoderConfig(scheme="direct").out_channels(64) == 64
        assert EncoderConfig(scheme="rate").out_channels(64) == 64
        assert EncoderConfig(scheme="delta").out_channels(64) == 128

    def test_time_steps(self):
        assert EncoderConfig(scheme="direct", steps=8).time_steps(640) == 8
        assert EncoderConfig(scheme="delta", steps=8).time_steps(640) == 640

    def test_batch_direct(self):
        ws = np.random.default_rng(1).normal(size=(5, 3, 8))
        enc = encode_batch(ws, EncoderConfig(scheme="direct", steps=6))
        assert isinstance(enc, DirectCurrent)
        assert len(enc) == 6 and np.array_equal(enc[2], ws)

    def test_batch_rate_members_differ(self):
        ws = np.tile(np.random.default_rng(2).normal(size=(1, 3, 30)), (2, 1, 1))
        enc = encode_batch(ws, EncoderConfig(scheme="rate", steps=16, seed=4))
        assert enc.data.shape == (16, 2, 3, 30)
        # identical windows, distinct per-example substreams
        assert not np.array_equal(enc.data[:, 0], enc.data[:, 1])

    def test_batch_rate_matches_indexed(self):
        ws = np.random.default_rng(3).normal(size=(3, 2, 10))
        enc = encode_batch(ws, EncoderConfig(scheme="rate", steps=5, seed=11))
        for i in range(3):
            solo = encode_rate_indexed(ws[i], 5, 11, i)
            assert np.array_equal(enc.data[:, i], solo.data)

    def test_batch_delta(self):
        ws = np.random.default_rng(4).normal(size=(2, 3, 12))
        enc = encode_batch(ws, EncoderConfig(scheme="delta", delta_threshold=0.2))
        assert enc.data.shape == (12, 2, 6, 1)
        for i in range(2):
            solo = encode_delta(ws[i], 0.2)
            assert np.array_equal(enc.data[:, i], solo.data)
