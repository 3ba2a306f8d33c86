import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal as sps

from bcigrasp import decoder
from bcigrasp.decoder import (
    _SOS,
    BandDefinition,
    ClassifierOutput,
    DwellCommander,
    InsufficientTrials,
    WindowTooShort,
    bandpass,
    bandpower,
    classify,
    classify_features,
    features,
    fit_lda,
    iter_windows,
    load_model,
    save_model,
    train_classifier,
)
from bcigrasp.eeg import (
    FS_HZ,
    Command,
    EegTrial,
    Phase,
    SubjectProfile,
    gen_trial,
    mirror_channels,
    schedule_session,
)


def sine_trial(freq_hz: float, amp: float = 1.0, seconds: float = 4.0,
               dc: float = 0.0) -> EegTrial:
    n = int(seconds * FS_HZ)
    t = np.arange(n) / FS_HZ
    x = amp * np.sin(2 * np.pi * freq_hz * t)[:, None] * np.ones((1, 14)) + dc
    return EegTrial(t, x, np.full(n, int(Phase.MI), np.int8), Command.NEUTRAL)


class TestBandpass:
    def test_design_attenuation_oracle(self):
        # single-pass response; filtfilt doubles the dB figures
        w, h = sps.sosfreqz(_SOS, worN=4096, fs=FS_HZ)
        db = 20 * np.log10(np.abs(h) + 1e-300)
        assert db[np.argmin(np.abs(w - 4.0))] < -20.0
        assert db[np.argmin(np.abs(w - 32.0))] < -20.0
        assert db[np.argmin(np.abs(w - 11.0))] > -1.0

    def test_inband_sine_preserved(self):
        out = bandpass(sine_trial(10.0))
        mid = out.samples[FS_HZ : 3 * FS_HZ, 0]
        assert np.max(np.abs(mid)) == pytest.approx(1.0, rel=0.05)

    def test_outband_sine_rejected(self):
        out = bandpass(sine_trial(2.0))
        mid = out.samples[FS_HZ : 3 * FS_HZ, 0]
        assert np.max(np.abs(mid)) <= 0.10

    def test_dc_removed(self):
        out = bandpass(sine_trial(10.0, dc=50.0))
        assert abs(out.samples[:, 0].mean()) < 0.05


class TestBandpower:
    def test_unit_sine_mu(self):
        x = sine_trial(10.0).samples
        p = bandpower(x, (8, 12))
        assert p[0] == pytest.approx(0.5, rel=0.05)

    def test_unit_sine_beta_leakage(self):
        x = sine_trial(10.0).samples
        assert bandpower(x, (12, 16))[0] < 0.05

    def test_white_noise_band_fraction(self):
        # band power ~= sigma^2 * bandwidth / nyquist, Monte Carlo over 100 seeds
        sigma = 1.7
        vals = []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            x = rng.normal(scale=sigma, size=(FS_HZ * 4, 1))
            vals.append(bandpower(x, (8, 16))[0])
        expected = sigma**2 * (16 - 8) / (FS_HZ / 2)
        assert np.mean(vals) == pytest.approx(expected, rel=0.05)

    def test_parseval_total(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(256, 2))
        total = bandpower(x, (0, FS_HZ / 2 + 1))
        assert np.allclose(total, (x**2).mean(axis=0), rtol=1e-9)

    def test_window_too_short(self):
        with pytest.raises(WindowTooShort):
            bandpower(np.zeros((64, 14)), (8, 12))

    def test_band_definition_must_tile(self):
        with pytest.raises(ValueError):
            BandDefinition(mu=(8, 11), beta=(12, 16))


class TestTraining:
    def test_separable_features_perfect_train_accuracy(self):
        rng = np.random.default_rng(0)
        X, y = [], []
        for i, cls in enumerate(decoder.CLASS_ORDER):
            base = np.zeros(28)
            base[i * 3] = 5.0
            X.extend(base + rng.normal(scale=0.05, size=28) for _ in range(40))
            y.extend([cls.value] * 40)
        X, y = np.array(X), np.array(y)
        model = fit_lda(X, y)
        preds = [classify_features(model, x).label.value for x in X]
        assert np.mean(np.array(preds) == y) == 1.0
        assert not model.degenerate_fallback

    def test_default_profile_held_out_accuracy(self):
        prof = SubjectProfile()  # erd 0.30, g = 0
        plan = schedule_session([Command.LEFT, Command.RIGHT, Command.LIFT], 12, 3, seed=42)
        model = train_classifier([gen_trial(p.command, prof, p.seed) for p in plan.trials])
        val = schedule_session([Command.LEFT, Command.RIGHT, Command.LIFT], 12, 1, seed=999)
        correct = total = 0
        for p in val.mi_trials:
            filt = bandpass(gen_trial(p.command, prof, p.seed))
            for _, win, phase in iter_windows(filt, step=32):
                if phase is Phase.MI:
                    total += 1
                    correct += classify(model, win).label is p.command
        assert correct / total >= 0.85

    def test_identical_features_fallback_chance(self):
        X = np.ones((80, 28))
        y = np.array([c.value for c in decoder.CLASS_ORDER] * 20)
        model = fit_lda(X, y)
        assert model.degenerate_fallback
        preds = [classify_features(model, x).label for x in X]
        assert all(p is Command.LEFT for p in preds)  # tie -> fixed class order
        assert np.mean([p.value == t for p, t in zip(preds, y)]) == pytest.approx(0.25)

    def test_insufficient_trials(self):
        prof = SubjectProfile()
        trials = [gen_trial(Command.LEFT, prof, s) for s in range(3)]
        with pytest.raises(InsufficientTrials):
            train_classifier(trials)


@pytest.fixture(scope="module")
def model():
    prof = SubjectProfile()
    plan = schedule_session([Command.LEFT, Command.RIGHT, Command.LIFT], 12, 3, seed=1)
    return train_classifier([gen_trial(p.command, prof, p.seed) for p in plan.trials])


class TestClassify:

    def test_left_trial_negative_s(self, model):
        prof = SubjectProfile()
        filt = bandpass(gen_trial(Command.LEFT, prof, seed=77))
        outs = [classify(model, w) for _, w, ph in iter_windows(filt) if ph is Phase.MI]
        labels = [o.label for o in outs]
        assert labels.count(Command.LEFT) / len(labels) > 0.8
        assert np.mean([o.s_t for o in outs]) < -0.5

    def test_neutral_small_s(self, model):
        prof = SubjectProfile()
        filt = bandpass(gen_trial(Command.NEUTRAL, prof, seed=78))
        outs = [classify(model, w) for _, w, _ in iter_windows(filt)]
        assert abs(np.mean([o.s_t for o in outs])) < 0.5  # below dwell threshold

    def test_tie_resolved_by_class_order(self, model):
        out = classify_features(
            decoder.LinearModel(np.zeros((4, 28)), np.zeros(4), 1e-3), np.zeros(28)
        )
        assert out.label is Command.LEFT
        assert out.s_t == 0.0

    def test_label_is_argmax(self, model):
        rng = np.random.default_rng(5)
        for _ in range(50):
            out = classify_features(model, rng.normal(size=28))
            assert out.label is model.classes[int(np.argmax(out.scores))]
            assert abs(out.s_t) <= 1.0


def const_out(s_t: float, label=Command.NEUTRAL) -> ClassifierOutput:
    scores = np.zeros(4)
    scores[decoder.CLASS_ORDER.index(label)] = 1.0
    return ClassifierOutput(scores, label, s_t, np.full(4, 0.25))


class TestDwell:
    def test_sustained_right_emits_at_tau(self):
        dc = DwellCommander(theta=0.5, tau_s=0.4)
        events = []
        for t in np.arange(0, 1.0, 0.1):
            events += dc.feed(float(t), const_out(0.8))
        assert events and events[0].command is Command.RIGHT
        assert events[0].t == pytest.approx(0.4)

    def test_alternating_never_emits(self):
        dc = DwellCommander(theta=0.5, tau_s=0.4)
        events = []
        for i, t in enumerate(np.arange(0, 4.0, 0.1)):
            s = 0.8 if (int(t / 0.2) % 2 == 0) else -0.8
            events += dc.feed(float(t), const_out(s))
        assert events == []

    def test_lift_dwell(self):
        dc = DwellCommander(tau_lift_s=3.0)
        events = []
        for t in np.arange(0, 4.0, 0.125):
            events += dc.feed(float(t), const_out(0.0, Command.LIFT))
        assert [e.command for e in events] == [Command.LIFT]
        assert events[0].t == pytest.approx(3.0)

    def test_refractory_blocks_consecutive(self):
        dc = DwellCommander(theta=0.5, tau_s=0.4, refractory_s=0.5)
        events = []
        for t in np.arange(0, 1.5, 0.1):
            events += dc.feed(float(t), const_out(0.9))
        # second emission needs refractory (0.5) plus a fresh dwell (0.4)
        assert len(events) == 2
        assert events[1].t - events[0].t >= 0.9 - 1e-9

    def test_simulated_left_trial_single_event(self):
        prof = SubjectProfile()
        plan = schedule_session([Command.LEFT, Command.RIGHT, Command.LIFT], 12, 3, seed=2)
        model = train_classifier([gen_trial(p.command, prof, p.seed) for p in plan.trials])
        hits = 0
        n_seeds = 20
        for seed in range(n_seeds):
            filt = bandpass(gen_trial(Command.LEFT, prof, seed=3000 + seed))
            dc = DwellCommander(refractory_s=10.0)  # one emission per trial
            first = None
            for t_end, win, phase in iter_windows(filt):
                for ev in dc.feed(t_end, classify(model, win)):
                    if first is None and phase is Phase.MI:
                        first = ev
            if first is not None and first.command is Command.LEFT:
                hits += 1
        assert hits / n_seeds >= 0.9

    @given(
        st.lists(
            st.tuples(st.floats(-1, 1), st.integers(1, 3)),  # (s_t, run length < tau)
            min_size=1,
            max_size=40,
        )
    )
    @settings(max_examples=100, deadline=None)
    def test_never_emits_without_sustained_dwell(self, runs):
        # adversarial stream: every same-sign super-threshold run is shorter
        # than tau (runs of at most 3 samples at 0.1 s < 0.4 s), separated by
        # a sub-threshold sample
        dc = DwellCommander(theta=0.5, tau_s=0.4)
        t = 0.0
        events = []
        for s, n in runs:
            for _ in range(n):
                events += dc.feed(t, const_out(s))
                t += 0.1
            events += dc.feed(t, const_out(0.0))
            t += 0.1
        lateral = [e for e in events if e.command in (Command.LEFT, Command.RIGHT)]
        assert lateral == []


class TestAntisymmetry:
    def test_mirrored_features_negate_s(self):
        rng = np.random.default_rng(3)
        X, y = [], []
        for cls, chs in ((Command.LEFT, (10, 11)), (Command.RIGHT, (3, 2)),
                         (Command.LIFT, (3, 10)), (Command.NEUTRAL, ())):
            for _ in range(30):
                f = rng.normal(scale=0.05, size=28)
                for ch in chs:
                    f[2 * ch] -= 0.2  # mu-power drop on the group channels
                X.append(f)
                y.append(cls.value)
        X, y = np.array(X), np.array(y)

        # mirror: swap hemisphere channel pairs and the left/right labels
        from bcigrasp.eeg import mirror_permutation

        Xm = X.reshape(-1, 14, 2)[:, mirror_permutation(), :].reshape(-1, 28)
        swap = {Command.LEFT.value: Command.RIGHT.value, Command.RIGHT.value: Command.LEFT.value}
        ym = np.array([swap.get(v, v) for v in y])

        m1 = fit_lda(X, y)
        m2 = fit_lda(Xm, ym)
        s1 = np.array([classify_features(m1, x).s_t for x in X])
        s2 = np.array([classify_features(m2, x).s_t for x in Xm])
        assert abs(np.mean(s1) + np.mean(s2)) < 1e-6

    def test_mirrored_eeg_negates_mean_s(self):
        prof = SubjectProfile()
        plan = schedule_session([Command.LEFT, Command.RIGHT, Command.LIFT], 12, 3, seed=4)
        trials = [gen_trial(p.command, prof, p.seed) for p in plan.trials]

        swap = {Command.LEFT: Command.RIGHT, Command.RIGHT: Command.LEFT}
        mirrored = [
            EegTrial(tr.t, mirror_channels(tr.samples), tr.phase, swap.get(tr.command, tr.command))
            for tr in trials
        ]
        m1 = train_classifier(trials)
        m2 = train_classifier(mirrored)

        probe = bandpass(gen_trial(Command.LEFT, prof, seed=555))
        wins = [w for _, w, ph in iter_windows(probe) if ph is Phase.MI]
        s1 = np.mean([classify(m1, w).s_t for w in wins])
        s2 = np.mean([classify(m2, mirror_channels(w)).s_t for w in wins])
        assert abs(s1 + s2) < 1e-6


def test_model_file_roundtrip(tmp_path):
    prof = SubjectProfile()
    plan = schedule_session([Command.LEFT, Command.RIGHT, Command.LIFT], 12, 3, seed=6)
    model = train_classifier([gen_trial(p.command, prof, p.seed) for p in plan.trials])
    path = tmp_path / "model.txt"
    save_model(model, path)
    back = load_model(path)
    assert np.array_equal(back.weights, model.weights)
    assert np.array_equal(back.bias, model.bias)
    assert back.classes == model.classes
    rng = np.random.default_rng(0)
    for _ in range(20):
        f = rng.normal(size=28)
        assert classify_features(back, f).label is classify_features(model, f).label
