"""Motor-imagery decoding chain.

Zero-phase 8-16 Hz band-pass, per-channel mu/beta log-bandpower features
(28 = 14 channels x 2 bands, channel-major with mu before beta), a
ridge-regularized linear discriminant over the four commands, and a
dwell-based command emitter that turns the continuous signed output
into discrete events.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as sps

from .eeg import FS_HZ, N_CHANNELS, Command, EegTrial, Phase
from .metrics import erd_percent  # decoder-facing alias

CLASS_ORDER = (Command.LEFT, Command.RIGHT, Command.LIFT, Command.NEUTRAL)


class WindowTooShort(Exception):
    pass


class InsufficientTrials(Exception):
    pass


@dataclass(frozen=True)
class BandDefinition:
    mu: tuple[float, float] = (8.0, 12.0)
    beta: tuple[float, float] = (12.0, 16.0)
    passband: tuple[float, float] = (8.0, 16.0)

    def __post_init__(self):
        if not (self.mu[0] == self.passband[0] and self.mu[1] == self.beta[0]
                and self.beta[1] == self.passband[1]):
            raise ValueError("mu and beta must tile the filter passband exactly")


BANDS = BandDefinition()

_SOS = sps.butter(4, BANDS.passband, btype="bandpass", fs=FS_HZ, output="sos")


def bandpass(trial: EegTrial) -> EegTrial:
    """Zero-phase band-pass over the whole trial (>=20 dB down at 4/32 Hz)."""
    if trial.fs != FS_HZ:
        raise ValueError(f"expected {FS_HZ} Hz sampling, got {trial.fs}")
    filtered = sps.sosfiltfilt(_SOS, trial.samples, axis=0)
    return replace(trial, samples=np.ascontiguousarray(filtered))


def bandpower(window: np.ndarray, band: tuple[float, float], fs: int = FS_HZ) -> np.ndarray:
    """Mean squared amplitude per channel within [lo, hi), via the one-sided
    periodogram (bins sum to the total signal power)."""
    x = np.asarray(window, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < fs:
        raise WindowTooShort(f"need at least {fs} samples (1 s), got {n}")
    spec = np.fft.rfft(x, axis=0)
    power = (np.abs(spec) ** 2) / n**2
    power[1:] *= 2.0
    if n % 2 == 0:
        power[-1] /= 2.0
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    mask = (freqs >= band[0]) & (freqs < band[1])
    return power[mask].sum(axis=0)


def features(window: np.ndarray, fs: int = FS_HZ) -> np.ndarray:
    """28-dim log-bandpower vector, channel-major, mu then beta."""
    mu = bandpower(window, BANDS.mu, fs)
    beta = bandpower(window, BANDS.beta, fs)
    stacked = np.stack([mu, beta], axis=1).reshape(-1)  # ch1_mu, ch1_beta, ...
    return np.log10(stacked + 1e-12)


@dataclass
class ClassifierOutput:
    scores: np.ndarray  # discriminant value per class, CLASS_ORDER
    label: Command
    s_t: float  # signed lateral score, positive = right
    posteriors: np.ndarray

    def __post_init__(self):
        assert abs(self.s_t) <= 1.0 + 1e-12


@dataclass
class LinearModel:
    weights: np.ndarray  # (4, 28)
    bias: np.ndarray  # (4,)
    ridge: float
    degenerate_fallback: bool = False
    classes: tuple[Command, ...] = CLASS_ORDER

    def __post_init__(self):
        if not np.all(np.isfinite(self.weights)) or not np.all(np.isfinite(self.bias)):
            raise ValueError("model weights must be finite")


def fit_lda(X: np.ndarray, y: np.ndarray, ridge: float = 1e-3) -> LinearModel:
    """Shrinkage LDA: pooled covariance + ridge*mean(diag) on the diagonal.

    Falls back to a pure-diagonal covariance (flagged) when the pooled
    covariance is too ill-conditioned to invert reliably.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    n, d = X.shape
    means = np.zeros((len(CLASS_ORDER), d))
    priors = np.zeros(len(CLASS_ORDER))
    pooled = np.zeros((d, d))
    for i, cls in enumerate(CLASS_ORDER):
        rows = X[y == cls.value]
        if rows.size == 0:
            raise InsufficientTrials(f"no samples for class {cls.value}")
        means[i] = rows.mean(axis=0)
        priors[i] = len(rows) / n
        pooled += (rows - means[i]).T @ (rows - means[i])
    pooled /= max(n - len(CLASS_ORDER), 1)

    scale = np.trace(pooled) / d
    degenerate = False
    if scale <= 0 or not np.isfinite(scale):
        degenerate = True
        cov = np.eye(d)
    else:
        cov = pooled + ridge * scale * np.eye(d)
        if np.linalg.cond(cov) > 1e10:
            degenerate = True
            cov = pooled + 1e-1 * scale * np.eye(d)
    inv = np.linalg.inv(cov)
    weights = means @ inv
    bias = -0.5 * np.einsum("ij,ij->i", weights, means) + np.log(priors)
    return LinearModel(weights, bias, ridge, degenerate)


def iter_windows(trial: EegTrial, win: int = FS_HZ, step: int = 16):
    """Yield (t_end, window, phase) for windows fully inside one phase."""
    for start in range(0, trial.n_samples - win + 1, step):
        sl = slice(start, start + win)
        phases = trial.phase[sl]
        if phases[0] != phases[-1]:
            continue
        yield float(trial.t[sl.stop - 1]), trial.samples[sl], Phase(int(phases[0]))


def training_matrix(trials: list[EegTrial], win: int = FS_HZ, step: int = 32):
    """Bandpass each trial and label windows: MI-phase windows carry the
    trial command, everything else is neutral."""
    xs, ys = [], []
    for trial in trials:
        filt = bandpass(trial)
        for _, window, phase in iter_windows(filt, win, step):
            if phase is Phase.MI and trial.command is not Command.NEUTRAL:
                label = trial.command
            else:
                label = Command.NEUTRAL
            xs.append(features(window))
            ys.append(label.value)
    return np.array(xs), np.array(ys)


def train_classifier(
    trials: list[EegTrial], ridge: float = 1e-3, min_trials_per_class: int = 12
) -> LinearModel:
    counts = {cmd: 0 for cmd in CLASS_ORDER[:3]}
    for tr in trials:
        if tr.command in counts:
            counts[tr.command] += 1
    lacking = [c.value for c, k in counts.items() if 0 < k < min_trials_per_class]
    if lacking:
        raise InsufficientTrials(
            f"classes below {min_trials_per_class} trials: {', '.join(lacking)}"
        )
    X, y = training_matrix(trials)
    return fit_lda(X, y, ridge)


def classify(model: LinearModel, window: np.ndarray, fs: int = FS_HZ) -> ClassifierOutput:
    return classify_features(model, features(window, fs))


def classify_features(model: LinearModel, feats: np.ndarray) -> ClassifierOutput:
    scores = model.weights @ feats + model.bias
    label = model.classes[int(np.argmax(scores))]  # argmax breaks ties by class order
    shifted = scores - scores.max()
    post = np.exp(shifted)
    post /= post.sum()
    i_left = model.classes.index(Command.LEFT)
    i_right = model.classes.index(Command.RIGHT)
    s_t = float(np.clip(post[i_right] - post[i_left], -1.0, 1.0))
    return ClassifierOutput(scores, label, s_t, post)


@dataclass(frozen=True)
class CommandEvent:
    t: float
    command: Command


class DwellCommander:
    """Emits a discrete command once the decoder output stays on one side of
    the threshold for the dwell time; lift needs its own longer dwell.
    A refractory window follows every emission."""

    def __init__(self, theta: float = 0.5, tau_s: float = 0.4,
                 tau_lift_s: float = 3.0, refractory_s: float = 0.5):
        if not 0.0 < theta < 1.0:
            raise ValueError("theta must be in (0,1)")
        if tau_s <= 0 or tau_lift_s <= 0:
            raise ValueError("dwell times must be positive")
        self.theta = theta
        self.tau_s = tau_s
        self.tau_lift_s = tau_lift_s
        self.refractory_s = refractory_s
        self.reset()

    def reset(self):
        self._dir = 0
        self._dir_since: float | None = None
        self._lift_since: float | None = None
        self._quiet_until = -math.inf

    def feed(self, t: float, out: ClassifierOutput) -> list[CommandEvent]:
        if t < self._quiet_until:
            self._dir, self._dir_since, self._lift_since = 0, None, None
            return []
        events: list[CommandEvent] = []

        cur = 0
        if out.s_t >= self.theta:
            cur = +1
        elif out.s_t <= -self.theta:
            cur = -1
        if cur != self._dir:
            self._dir = cur
            self._dir_since = t if cur != 0 else None
        if cur != 0 and t - self._dir_since >= self.tau_s:
            events.append(CommandEvent(t, Command.RIGHT if cur > 0 else Command.LEFT))

        if out.label is Command.LIFT:
            if self._lift_since is None:
                self._lift_since = t
            elif not events and t - self._lift_since >= self.tau_lift_s:
                events.append(CommandEvent(t, Command.LIFT))
        else:
            self._lift_since = None

        if events:
            self._quiet_until = t + self.refractory_s
            self._dir, self._dir_since, self._lift_since = 0, None, None
        return events


def save_model(model: LinearModel, path) -> None:
    buf = io.StringIO()
    buf.write("format bcigrasp-linear-model v1\n")
    buf.write("classes " + " ".join(c.value for c in model.classes) + "\n")
    buf.write("feature_order channel-major mu,beta\n")
    buf.write(f"ridge {model.ridge!r}\n")
    buf.write(f"degenerate_fallback {int(model.degenerate_fallback)}\n")
    for cls, row, b in zip(model.classes, model.weights, model.bias):
        buf.write(f"weights {cls.value} " + " ".join(repr(float(v)) for v in row) + "\n")
        buf.write(f"bias {cls.value} {float(b)!r}\n")
    with open(path, "w") as f:
        f.write(buf.getvalue())


def load_model(path) -> LinearModel:
    weights, bias, classes, ridge, degenerate = {}, {}, None, 1e-3, False
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "classes":
                classes = tuple(Command(v) for v in parts[1:])
            elif parts[0] == "ridge":
                ridge = float(parts[1])
            elif parts[0] == "degenerate_fallback":
                degenerate = bool(int(parts[1]))
            elif parts[0] == "weights":
                weights[Command(parts[1])] = np.array([float(v) for v in parts[2:]])
            elif parts[0] == "bias":
                bias[Command(parts[1])] = float(parts[2])
    if classes is None or set(classes) != set(weights):
        raise ValueError("malformed model file")
    W = np.vstack([weights[c] for c in classes])
    b = np.array([bias[c] for c in classes])
    return LinearModel(W, b, ridge, degenerate, classes)
