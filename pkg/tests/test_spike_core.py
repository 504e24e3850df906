import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from spikeae.errors import InputDomainError, StructuralError
from spikeae.spike_core import (
    LifLayer,
    NeuronConfig,
    SpikeRaster,
    encode_poisson,
    lif_forward_step,
    poisson_spikes,
    scale_pixels,
    surrogate_derivative,
)

from oracles import scalar_lif_run


class TestScalePixels:
    def test_examples(self):
        np.testing.assert_array_equal(scale_pixels([0]), [0.0])
        np.testing.assert_array_equal(scale_pixels([255]), [1.0])
        assert scale_pixels([51])[0] == pytest.approx(0.2, abs=1e-15)

    @pytest.mark.parametrize("bad", [[-1], [256], [0, 300]])
    def test_out_of_range(self, bad):
        with pytest.raises(InputDomainError):
            scale_pixels(bad)


class TestSpikeRaster:
    def test_rejects_non_binary(self):
        with pytest.raises(InputDomainError):
            SpikeRaster([[0, 2]])

    @given(arrays(np.uint8, st.tuples(st.integers(1, 40), st.integers(1, 30)), elements=st.integers(0, 1)))
    def test_packing_round_trip(self, bits):
        r = SpikeRaster(bits)
        np.testing.assert_array_equal(r.bits, bits)
        counts = r.counts()
        assert counts.min() >= 0 and counts.max() <= r.T
        assert r.nbytes == ((bits.shape[0] + 7) // 8) * bits.shape[1]

    def test_prefix(self):
        bits = np.array([[1, 0, 1], [0, 1, 1]], dtype=np.uint8)
        np.testing.assert_array_equal(SpikeRaster(bits).prefix(2).bits, bits[:, :2])


class TestEncodePoisson:
    def test_zero_rate_is_silent(self):
        r = encode_poisson(np.array([0.0]), 50, np.random.default_rng(1))
        assert r.counts()[0] == 0

    def test_unit_rate_fires_every_step(self):
        r = encode_poisson(np.array([1.0]), 15, np.random.default_rng(1), max_rate=1.0)
        np.testing.assert_array_equal(r.bits, np.ones((1, 15)))

    def test_half_rate_monte_carlo(self):
        r = encode_poisson(np.array([0.5]), 10000, np.random.default_rng(7))
        assert abs(r.counts()[0] / 10000 - 0.5) <= 0.02

    def test_deterministic_under_seed(self):
        v = np.linspace(0, 1, 30)
        a = encode_poisson(v, 40, np.random.default_rng(3))
        b = encode_poisson(v, 40, np.random.default_rng(3))
        assert a == b

    @pytest.mark.parametrize("bad", [[-0.1], [1.5], [np.nan]])
    def test_domain(self, bad):
        with pytest.raises(InputDomainError):
            encode_poisson(np.array(bad), 5, np.random.default_rng(0))

    @pytest.mark.parametrize("value,max_rate", [(0.2, 1.0), (0.7, 0.5), (1.0, 0.3)])
    def test_rate_proportionality(self, value, max_rate):
        # 4-sigma binomial band around the expected count value*max_rate*T
        T, n = 2000, 50
        spikes = poisson_spikes(np.full(n, value), T, np.random.default_rng(11), max_rate)
        p = value * max_rate
        total = spikes.sum()
        mean, sd = n * T * p, math.sqrt(n * T * p * (1 - p))
        assert abs(total - mean) <= 4 * sd


class TestLifForwardStep:
    def test_accumulate_then_fire(self):
        layer = LifLayer(np.array([[0.5]]), NeuronConfig(alpha=0.0, v_th=1.0))
        layer.reset_state(1)
        s, v = lif_forward_step(layer, [[1]])
        assert s[0, 0] == 0 and v[0, 0] == pytest.approx(0.5)
        s, v = lif_forward_step(layer, [[1]])
        assert s[0, 0] == 1 and v[0, 0] == pytest.approx(1.0)
        assert layer.v_mem[0, 0] == 0.0

    def test_pure_decay(self):
        layer = LifLayer(np.array([[0.3]]), NeuronConfig(alpha=0.1, v_th=1.0))
        layer.reset_state(1)
        layer.v_mem[0, 0] = 0.5
        _, v = lif_forward_step(layer, [[0]])
        assert v[0, 0] == pytest.approx(0.45, rel=1e-6)

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(5)
        W = rng.uniform(-0.2, 0.9, size=(3, 4))
        inputs = (rng.random((20, 2, 4)) < 0.5).astype(np.uint8)
        cfg = NeuronConfig(alpha=0.15, v_th=1.0)
        layer = LifLayer(W.astype(np.float64), cfg)
        layer.reset_state(2)
        got = []
        for t in range(20):
            s, _ = lif_forward_step(layer, inputs[t])
            got.append(s)
        ref_spikes, _ = scalar_lif_run(W.tolist(), cfg.alpha, cfg.v_th, inputs.tolist())
        np.testing.assert_array_equal(np.array(got), np.array(ref_spikes))
        assert np.array(ref_spikes).sum() > 0

    def test_shape_mismatch(self):
        layer = LifLayer(np.zeros((2, 3)))
        layer.reset_state(1)
        with pytest.raises(StructuralError):
            lif_forward_step(layer, np.zeros((1, 4)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.9))
    def test_reset_soundness(self, seed, alpha):
        rng = np.random.default_rng(seed)
        layer = LifLayer.initialize(6, 5, NeuronConfig(alpha=alpha, v_th=0.5), rng)
        layer.reset_state(3)
        for _ in range(10):
            s, _ = lif_forward_step(layer, rng.random((3, 6)) < 0.6)
            assert np.all(layer.v_mem[s == 1] == 0.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.0, 0.99), arrays(np.float64, 4, elements=st.floats(-0.99, 0.99)))
    def test_leak_monotone_without_input(self, alpha, v0):
        layer = LifLayer(np.ones((4, 2)), NeuronConfig(alpha=alpha, v_th=1.0))
        layer.reset_state(1)
        layer.v_mem[0] = v0
        prev = np.abs(layer.v_mem[0]).copy()
        for _ in range(8):
            lif_forward_step(layer, np.zeros((1, 2)))
            cur = np.abs(layer.v_mem[0])
            assert np.all(cur <= prev + 1e-7)
            prev = cur.copy()


class TestSurrogate:
    def test_midpoint(self):
        assert surrogate_derivative(1.0, 1.0) == pytest.approx(0.25)

    def test_tail_is_finite_and_tiny(self):
        with np.errstate(all="raise"):
            val = surrogate_derivative(51.0, 1.0)
        assert np.isfinite(val) and 0 < val < 1e-20

    def test_one_unit_above_threshold(self):
        e = math.exp(-1.0)
        assert surrogate_derivative(2.0, 1.0) == pytest.approx(e / (1 + e) ** 2, rel=1e-12)
        assert surrogate_derivative(2.0, 1.0) == pytest.approx(0.19661, abs=1e-5)

    @given(st.floats(-700, 700), st.floats(0.1, 5))
    def test_symmetric_positive_peaked(self, d, v_th):
        up = surrogate_derivative(v_th + d, v_th)
        down = surrogate_derivative(v_th - d, v_th)
        assert up == pytest.approx(down, rel=1e-9, abs=1e-300)
        assert up <= 0.25 * (1 + 4 * np.finfo(float).eps)  # peak value, up to rounding
        if abs(d) < 700:
            assert up > 0
