import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from phychal.channel import ChannelRealization, PowerDelayProfile, allocate_equispaced, sample_realization
from phychal.ofdm import OfdmConfig, apply_channel, demodulate
from phychal.protocol import (
    H0,
    H1,
    ChallengeObservation,
    KeyMaterial,
    ScenarioConfig,
    VerificationOutcome,
    choose_threshold,
    derive_session_keys,
    detection_probability,
    estimate_phases,
    frequency_grid,
    make_challenge,
    make_response,
    response_symbols,
    run_protocol_trial,
    simulate_trial,
    snr_from_db,
    verify_freq_search,
    verify_statistic,
    verify_time_separated,
)
from phychal.stats import ChiSqFit, marcum_q

CFG = OfdmConfig()
N, CP = CFG.fft_size, CFG.cp_len


def through(signal, h, noise_var=0.0, rng=None):
    pad = np.zeros(CP, complex)
    r = apply_channel(np.concatenate([pad, signal, pad]), h, noise_var, rng)
    return r


def uniform_cdf(x):
    return (np.asarray(x) + np.pi) / (2 * np.pi)


class TestKeys:
    def test_deterministic(self):
        a = derive_session_keys(b"K" * 16, b"rand", b"sqn", b"amf", 65)
        b = derive_session_keys(b"K" * 16, b"rand", b"sqn", b"amf", 65)
        np.testing.assert_array_equal(a[0].symbols, b[0].symbols)
        np.testing.assert_array_equal(a[1].symbols, b[1].symbols)
        assert len(a[0]) == 65 and a[0].modulation_order == 2
        assert set(np.unique(a[1].symbols)) <= {0, 1}

    def test_avalanche(self, rng):
        diffs = []
        for _ in range(1000):
            rand = bytearray(rng.bytes(16))
            k1 = derive_session_keys(b"master", bytes(rand), b"s", b"a", 64)
            bit = int(rng.integers(0, 128))
            rand[bit // 8] ^= 1 << (bit % 8)
            k2 = derive_session_keys(b"master", bytes(rand), b"s", b"a", 64)
            diffs.append(np.mean(k1[1].symbols != k2[1].symbols))
        assert np.mean(diffs) == pytest.approx(0.5, abs=0.02)

    def test_uniform_symbols(self, rng):
        counts = np.zeros(4)
        for i in range(300):
            _, kb = derive_session_keys(b"m", i.to_bytes(4, "big"), b"", b"", 100, m=4)
            counts += np.bincount(kb.symbols, minlength=4)
        assert stats.chisquare(counts).pvalue > 0.01

    def test_inputs_separate_the_keys(self):
        ka, kb = derive_session_keys(b"m", b"r", b"s", b"a", 256)
        assert np.mean(ka.symbols != kb.symbols) > 0.3
        _, kb2 = derive_session_keys(b"m", b"r", b"s2", b"a", 256)
        assert np.any(kb.symbols != kb2.symbols)

    def test_long_expansion(self):
        ka, _ = derive_session_keys(b"m", b"r", b"s", b"a", 5000, m=8)
        assert len(ka) == 5000 and ka.symbols.max() <= 7

    def test_errors(self):
        with pytest.raises(ValueError):
            derive_session_keys(b"", b"r", b"s", b"a", 8)
        with pytest.raises(ValueError):
            KeyMaterial(np.array([0, 2]), 2)
        with pytest.raises(ValueError):
            KeyMaterial(np.array([0, 1]), 3)

    def test_material(self, rng):
        k = KeyMaterial.random(rng, 68, 4)
        assert k.entropy_bits == 136
        np.testing.assert_allclose(k.unit_symbols, np.exp(1j * np.pi / 2 * k.symbols))
        blocks = k.sub_keys(4)
        assert [len(b) for b in blocks] == [17] * 4
        np.testing.assert_array_equal(np.concatenate([b.symbols for b in blocks]), k.symbols)
        with pytest.raises(ValueError):
            k.sub_keys(5)


class TestChallenge:
    def test_identity_channel(self):
        plan = allocate_equispaced(N, 32)
        y = demodulate(make_challenge(CFG, plan), CFG, plan)
        np.testing.assert_allclose(y, 1.0, atol=1e-12)
        full = demodulate(make_challenge(CFG, plan), CFG)
        mask = np.ones(N, bool)
        mask[plan.indices] = False
        assert np.max(np.abs(full[mask])) < 1e-12

    def test_faded(self, rng):
        plan = allocate_equispaced(N, 32)
        h = sample_realization(rng, PowerDelayProfile(), plan.indices, N)
        y = demodulate(through(make_challenge(CFG, plan), h), CFG, plan, start=CP)
        np.testing.assert_allclose(y, h.subcarrier_gains, atol=1e-10)


class TestPhaseEstimate:
    def test_noise_free(self, rng):
        h = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        obs = estimate_phases(h)
        np.testing.assert_allclose(obs.phases, np.angle(h), atol=1e-15)
        assert obs.degenerate is None

    def test_scale_invariant(self, rng):
        h = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        np.testing.assert_allclose(estimate_phases(3.7 * h).phases, estimate_phases(h).phases, atol=1e-15)

    def test_high_snr_variance(self, rng):
        snr = 100.0
        h = np.exp(1j * rng.uniform(-np.pi, np.pi, 200_000))
        w = (rng.standard_normal(h.size) + 1j * rng.standard_normal(h.size)) * math.sqrt(0.5 / snr)
        err = wrap = estimate_phases(h + w).phases - np.angle(h)
        err = np.angle(np.exp(1j * wrap))
        assert np.var(err) == pytest.approx(1 / (2 * snr), rel=0.03)

    def test_zero_flagged(self):
        obs = estimate_phases(np.array([0.0, 1j]))
        assert obs.phases[0] == 0.0
        np.testing.assert_array_equal(obs.degenerate, [True, False])


class TestResponse:
    def test_noise_free_reciprocal(self, rng):
        plan = allocate_equispaced(N, 32)
        h = sample_realization(rng, PowerDelayProfile(), plan.indices, N)
        key = KeyMaterial.random(rng, plan.per_slot_count)
        obs = estimate_phases(demodulate(through(make_challenge(CFG, plan), h), CFG, plan, start=CP))
        resp = make_response(key, obs, math.inf, rng, CFG, plan)
        y = demodulate(through(resp, h), CFG, plan, start=CP)
        np.testing.assert_allclose(y, np.abs(h.subcarrier_gains) * key.unit_symbols, atol=1e-10)

    def test_uniform_without_concentration(self, rng):
        key = KeyMaterial(np.zeros(100_000, dtype=int))
        obs = ChallengeObservation(np.zeros(100_000))
        x = response_symbols(key, obs, 0.0, rng)
        assert stats.kstest(np.angle(x), uniform_cdf).pvalue > 0.01

    def test_received_phase(self):
        # received phase = key - (estimate error) + artificial noise
        plan = allocate_equispaced(N, 64)
        rng = np.random.default_rng(5)
        h = sample_realization(rng, PowerDelayProfile(), plan.indices, N)
        key = KeyMaterial.random(rng, plan.per_slot_count, 4)
        theta = np.angle(h.subcarrier_gains)
        est = theta + rng.uniform(-0.2, 0.2, theta.size)
        obs = ChallengeObservation(est)
        x = response_symbols(key, obs, 1.5, np.random.default_rng(9))
        upsilon = np.angle(x * np.exp(-1j * (key.phases - est)))
        resp = make_response(key, obs, 1.5, np.random.default_rng(9), CFG, plan)
        y = demodulate(through(resp, h), CFG, plan, start=CP)
        expected = key.phases - (est - theta) + upsilon
        np.testing.assert_allclose(np.angle(y * np.exp(-1j * expected)), 0, atol=1e-9)

    def test_coverage_error(self, rng):
        with pytest.raises(ValueError):
            response_symbols(KeyMaterial(np.zeros(3, int)), ChallengeObservation(np.zeros(4)), 1.0, rng)


class TestVerifiers:
    def test_perfect_match(self):
        key = KeyMaterial(np.arange(65) % 2)
        assert verify_statistic(key.unit_symbols, key) == pytest.approx(4225)

    def test_orthogonal(self):
        key = KeyMaterial(np.zeros(4, int))
        assert verify_statistic(np.array([1, -1, 1, -1]), key) == pytest.approx(0, abs=1e-24)

    @given(c=st.floats(-10, 10), seed=st.integers(0, 2**32 - 1))
    def test_global_phase_invariance(self, c, seed):
        rng = np.random.default_rng(seed)
        key = KeyMaterial.random(rng, 32, 4)
        y = rng.standard_normal(32) + 1j * rng.standard_normal(32)
        assert verify_statistic(np.exp(1j * c) * y, key) == pytest.approx(verify_statistic(y, key), rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            verify_statistic(np.ones(3), KeyMaterial(np.zeros(4, int)))

    def test_time_separated(self, rng):
        key = KeyMaterial.random(rng, 17)
        y = rng.standard_normal(17) + 1j * rng.standard_normal(17)
        assert verify_time_separated(y[None], [key]) == pytest.approx(verify_statistic(y, key))
        full = KeyMaterial.random(rng, 68)
        blocks = full.sub_keys(4)
        y4 = np.array([b.unit_symbols for b in blocks])
        assert verify_time_separated(y4, blocks) == pytest.approx(4 * 17**2)
        with pytest.raises(ValueError):
            verify_time_separated(y4[:3], blocks)

    @settings(max_examples=50)
    @given(seed=st.integers(0, 2**32 - 1), j=st.integers(1, 5))
    def test_per_slot_phase_invariance(self, seed, j):
        rng = np.random.default_rng(seed)
        key = KeyMaterial.random(rng, 16 * j, 2)
        blocks = key.sub_keys(j)
        y = rng.standard_normal((j, 16)) + 1j * rng.standard_normal((j, 16))
        c = np.exp(1j * rng.uniform(-10, 10, (j, 1)))
        ref = verify_time_separated(y, blocks)
        assert verify_time_separated(c * y, blocks) == pytest.approx(ref, rel=1e-12)
        a = verify_freq_search(y, blocks, 2.0, 37)
        b = verify_freq_search(c * y, blocks, 2.0, 37)
        assert b.statistic == pytest.approx(a.statistic, rel=1e-12)
        assert b.omega == a.omega

    def test_search_degenerates_to_plain(self, rng):
        blocks = KeyMaterial.random(rng, 64).sub_keys(4)
        y = rng.standard_normal((4, 16)) + 1j * rng.standard_normal((4, 16))
        out = verify_freq_search(y, blocks, 3.0, 1)
        assert out.omega == 0.0
        assert out.statistic == pytest.approx(verify_time_separated(y, blocks))
        assert out.statistic == pytest.approx(np.sum(np.abs(out.slot_terms) ** 2))

    def test_search_recovers_ramp(self, rng):
        blocks = KeyMaterial.random(rng, 64, 4).sub_keys(4)
        grid = frequency_grid(2.5, 200)
        true = grid[137]
        ramp = np.exp(1j * true * np.arange(16))
        y = np.array([b.unit_symbols for b in blocks]) * ramp * np.exp(1j * rng.uniform(-3, 3, (4, 1)))
        out = verify_freq_search(y, blocks, 2.5, 200)
        assert out.omega == pytest.approx(true)
        assert out.statistic == pytest.approx(4 * 16**2)

    @settings(max_examples=40)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 60))
    def test_grid_refinement_monotone(self, seed, n):
        rng = np.random.default_rng(seed)
        blocks = KeyMaterial.random(rng, 48).sub_keys(3)
        y = rng.standard_normal((3, 16)) + 1j * rng.standard_normal((3, 16))
        coarse, fine = 2 * n, 4 * n
        assert set(np.round(frequency_grid(1.7, coarse), 12)) <= set(np.round(frequency_grid(1.7, fine), 12))
        assert verify_freq_search(y, blocks, 1.7, fine).statistic >= verify_freq_search(y, blocks, 1.7, coarse).statistic - 1e-9

    def test_grid(self):
        g = frequency_grid(0.5, 5)
        assert 0.0 in g and g.size == 5
        np.testing.assert_allclose(g, [-0.4, -0.2, 0, 0.2, 0.4])
        wide = frequency_grid(10.0, 4)
        assert wide.min() >= -math.pi and wide.max() < math.pi
        with pytest.raises(ValueError):
            frequency_grid(1.0, 0)
        with pytest.raises(ValueError):
            frequency_grid(-1.0, 4)

    def test_outcome_decision(self):
        out = VerificationOutcome(10.0, np.array([3.0 + 1j]))
        assert out.with_threshold(9.0).accepted
        assert not out.with_threshold(11.0).accepted


class TestThreshold:
    def test_unit_false_alarm(self):
        assert choose_threshold((5.0, 2.0), 1.0) == 0.0

    @pytest.mark.parametrize("pf", [0.5, 1e-2, 1e-3, 1e-6])
    def test_central_closed_form(self, pf):
        assert choose_threshold((0.0, 3.0), pf) == pytest.approx(-3.0 * math.log(pf), rel=1e-9)

    @given(lam=st.floats(0, 2000), s2=st.floats(0.1, 100), j=st.integers(1, 6), pf=st.floats(1e-6, 0.9))
    @settings(max_examples=60, deadline=None)
    def test_bracketing(self, lam, s2, j, pf):
        thr = choose_threshold(ChiSqFit(lam, s2, j), pf)
        assert marcum_q(j, lam / s2, thr / s2) <= pf
        assert marcum_q(j, lam / s2, thr * (1 - 1e-9) / s2) > pf - 1e-12

    def test_invalid(self):
        with pytest.raises(ValueError):
            choose_threshold((math.inf, 1.0), 0.1)
        with pytest.raises(ValueError):
            choose_threshold((1.0, 1.0), 0.0)

    def test_detection(self):
        assert detection_probability((3.0, 2.0), 0.0) == 1.0
        assert detection_probability((3.0, 2.0), math.inf) == 0.0
        assert detection_probability((0.0, 2.0), 2.0) == pytest.approx(math.exp(-1))
        assert detection_probability((0.0, 2.0, 1), 2.0) == pytest.approx(0.3679, abs=1e-4)
        with pytest.raises(ValueError):
            detection_probability((1.0, 1.0), -1.0)
        pd = [detection_probability(ChiSqFit(50.0, 4.0, 2), t) for t in np.linspace(0, 200, 50)]
        assert np.all(np.diff(pd) <= 1e-15)


class TestScenario:
    def test_defaults(self):
        sc = ScenarioConfig.scenario_1()
        assert sc.ofdm.fft_size == 2048 and sc.plan.spacing == 32
        assert sc.snr_db == pytest.approx(10.0)
        assert sc.key_length == 64
        assert not sc.has_impairments

    def test_search_range(self):
        sc = ScenarioConfig(plan=allocate_equispaced(N, 128, slots=4), sample_offset_max=10)
        assert sc.omega_max == pytest.approx(2 * math.pi * 2 * 10 * 128 / 2048)
        assert replace(sc, search_range=1.0).omega_max == 1.0

    @pytest.mark.parametrize(
        "kw",
        [dict(snr=0), dict(beta=-1), dict(trials=0), dict(cfo_max=0.5), dict(sample_offset_max=129), dict(search_points=-1)],
    )
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            ScenarioConfig(**kw)

    def test_snr_conversion(self):
        assert snr_from_db(10.0) == pytest.approx(10.0)
        assert snr_from_db(5.0) == pytest.approx(3.16227766)


class TestTrials:
    def test_deterministic(self):
        sc = ScenarioConfig()
        a = run_protocol_trial(sc, H1, np.random.default_rng(3))
        b = run_protocol_trial(sc, H1, np.random.default_rng(3))
        assert a == b

    def test_noise_free_triangle_bound(self, rng):
        # residual noise at this SNR sits near 1e-7 relative to zeta
        sc = ScenarioConfig(snr=1e14, beta=math.inf)
        for _ in range(20):
            data = simulate_trial(sc, H1, rng)
            zeta = verify_time_separated(data.y, data.sub_keys)
            mags = np.abs(data.channels[0].subcarrier_gains)
            l = sc.key_length
            assert zeta / l**2 == pytest.approx((mags.sum() / l) ** 2, rel=1e-6)
            assert zeta / l**2 <= np.mean(mags**2) * (1 + 1e-6)

    def test_flat_channel_reaches_equality(self):
        # every |h_k| equal: a single path gives the full L^2
        sc = ScenarioConfig(snr=1e14, beta=math.inf, pdp=PowerDelayProfile(num_paths=1, normalization="per_realization"))
        data = simulate_trial(sc, H1, np.random.default_rng(0))
        assert verify_time_separated(data.y, data.sub_keys) == pytest.approx(sc.key_length**2, rel=1e-6)

    def test_h0_mean(self, rng):
        sc = ScenarioConfig(plan=allocate_equispaced(N, 128, slots=4))
        z, power = [], []
        for _ in range(10_000):
            data = simulate_trial(sc, H0, rng)
            z.append(verify_time_separated(data.y, data.sub_keys))
            power.append(np.mean(np.abs(data.y) ** 2))
        expected = sc.plan.slots * sc.plan.per_slot_count * np.mean(power)
        se = np.std(z) / math.sqrt(len(z))
        assert np.mean(z) == pytest.approx(expected, abs=4 * se)

    def test_h1_dominates_h0(self, rng):
        for snr_db, beta in [(0.0, 1.0), (5.0, 1.5), (10.0, 3.0)]:
            sc = ScenarioConfig(snr=snr_from_db(snr_db), beta=beta)
            h1 = np.array([run_protocol_trial(sc, H1, rng) for _ in range(1500)])
            h0 = np.array([run_protocol_trial(sc, H0, rng) for _ in range(1500)])
            grid = np.quantile(np.concatenate([h1, h0]), np.linspace(0.01, 0.99, 50))
            f1 = np.searchsorted(np.sort(h1), grid, side="right") / h1.size
            f0 = np.searchsorted(np.sort(h0), grid, side="right") / h0.size
            # pointwise, allowing the two-sample DKW band at 1%
            band = math.sqrt(math.log(2 / 0.01) / 2) * math.sqrt(2 / 1500)
            assert np.all(f1 <= f0 + band)

    def test_detection_improves_with_concentration(self):
        # less artificial noise (larger beta) never hurts detection
        from phychal.experiments import run_trials
        from phychal.stats import empirical_threshold

        pd = []
        for i, beta in enumerate([0.5, 1.5, 3.0, 10.0]):
            sc = ScenarioConfig(snr=snr_from_db(10.0), beta=beta)
            h1 = run_trials(sc, H1, 2000, 11, 9, i)
            h0 = run_trials(sc, H0, 2000, 11, 9, i)
            pd.append(np.mean(h1 >= empirical_threshold(h0, 1e-2)))
        se = math.sqrt(0.25 / 2000)
        assert all(b >= a - 3 * se for a, b in zip(pd, pd[1:]))
        assert pd[-1] > pd[0]

    def test_bad_hypothesis(self, rng):
        with pytest.raises(ValueError):
            simulate_trial(ScenarioConfig(), 2, rng)

    def test_channels_are_fresh_per_slot(self, rng):
        sc = ScenarioConfig(plan=allocate_equispaced(N, 128, slots=4))
        data = simulate_trial(sc, H1, rng)
        assert len(data.channels) == 4
        assert not np.allclose(data.channels[0].subcarrier_gains, data.channels[1].subcarrier_gains)
